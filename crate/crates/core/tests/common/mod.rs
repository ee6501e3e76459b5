#![allow(dead_code)]

use ecosim_core::config::{validate_config, SensorSet, SimConfig, TerrainKind};
use ecosim_core::reference::reference_step;
use ecosim_core::rng::{CounterRng, Domain};
use ecosim_core::{init_world, Simulation};

/// Small random world with short lifespans and cheap children, so that
/// births, deaths, attacks and crowding all happen within a few hundred steps.
pub fn fuzz_config(seed: u64) -> SimConfig {
    let mut rng = CounterRng::new(seed).stream(0, Domain::Test, 0);
    let terrain = TerrainKind::ALL[rng.below(TerrainKind::ALL.len() as u64) as usize];
    let sensors = match rng.below(4) {
        0 => SensorSet::R,
        1 => SensorSet::RCV,
        _ => SensorSet::RC,
    };
    let mut cfg = SimConfig {
        grid_size: 16,
        terrain,
        sensors,
        attack_enabled: rng.below(2) == 1,
        max_population: 32,
        initial_population: 4 + rng.below(29) as usize,
        seed,
        ..SimConfig::default()
    };
    let r = &mut cfg.resources;
    r.stomach_capacity = 128 + 32 * rng.below(5) as i64;
    r.base_biomass = 16 + 8 * rng.below(7) as i64;
    r.child_energy = 32;
    r.child_water = 32;
    r.eat_amount = 16 + 8 * rng.below(4) as i64;
    r.energy_growth_rate = 1 + rng.below(3) as i64;
    let h = &mut cfg.health;
    h.age_onset = 50 + rng.below(350) as u32;
    h.age_slope = 0.05 + 0.05 * rng.below(10) as f32;
    h.starvation_damage = 5.0 + rng.below(16) as f32;
    validate_config(cfg).expect("fuzz config is valid")
}

/// Steps the parallel engine and the serial reference side by side and
/// returns a description of the first divergence.
pub fn oracle_run(seed: u64, steps: u64, workers: usize) -> Result<(), String> {
    let cfg = fuzz_config(seed);
    let (world, pool) = init_world(&cfg).map_err(|e| e.to_string())?;
    let (mut ref_world, mut ref_pool) = (world.clone(), pool.clone());
    let mut sim =
        Simulation::from_parts(cfg.clone(), world, pool, workers).map_err(|e| e.to_string())?;
    for _ in 0..steps {
        let fast = sim.step();
        let slow = reference_step(&mut ref_world, &mut ref_pool, &cfg);
        if fast != slow {
            return Err(format!("seed {seed}: traces differ\n{fast:?}\n{slow:?}"));
        }
        if *sim.world() != ref_world {
            return Err(format!(
                "seed {seed}: worlds differ after step {}",
                fast.step
            ));
        }
        if !sim
            .pool()
            .slots_bits_eq(&ref_pool, &ref_world.agents.live_ids())
        {
            return Err(format!(
                "seed {seed}: policies differ after step {}",
                fast.step
            ));
        }
        if let Err(e) = ref_world.check_invariants(&cfg) {
            return Err(format!("seed {seed}: {e}"));
        }
    }
    Ok(())
}

/// Totals of a lockstep run, used to confirm the fuzz exercises every phase.
#[derive(Debug, Default, Clone, Copy)]
pub struct Coverage {
    pub births: u64,
    pub deaths: u64,
    pub kills: u64,
    pub canceled_moves: u64,
}

pub fn coverage(seed: u64, steps: u64) -> Coverage {
    let cfg = fuzz_config(seed);
    let (mut world, mut pool) = init_world(&cfg).unwrap();
    let mut c = Coverage::default();
    for _ in 0..steps {
        let t = ecosim_core::step(&mut world, &mut pool, &cfg);
        c.births += t.births as u64;
        c.deaths += t.deaths() as u64;
        c.kills += t.kills as u64;
        c.canceled_moves += t.canceled_moves as u64;
    }
    c
}

/// Plateau-shaped series sampled every `cadence` steps: a linear rise from
/// zero to `peak` that ends at `rise_end`, a hold until `fall_start`, a
/// linear fall to `trough` ending at `fall_end`, then a hold to `end`.
pub fn plateau_series(
    peak: f64,
    trough: f64,
    rise_end: u64,
    fall_start: u64,
    fall_end: u64,
    end: u64,
    cadence: u64,
) -> (Vec<u64>, Vec<f64>) {
    let steps: Vec<u64> = (0..=end / cadence).map(|k| k * cadence).collect();
    let values = steps
        .iter()
        .map(|&s| {
            if s <= rise_end {
                peak * s as f64 / rise_end as f64
            } else if s <= fall_start {
                peak
            } else if s <= fall_end {
                peak + (trough - peak) * (s - fall_start) as f64 / (fall_end - fall_start) as f64
            } else {
                trough
            }
        })
        .collect();
    (steps, values)
}
