//! The step pipeline and episode driver.
//!
//! Phase order: sense and act, attacks, eats, moves, reproduction,
//! metabolism, deaths, water flow, energy growth. Work inside a phase may run
//! on any number of threads; the result is bit-identical for every worker
//! count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{validate_config, SimConfig, Units};
use crate::dynamics::{
    apply_metabolism, grow_energy, process_deaths, resolve_attacks, resolve_eats, resolve_moves,
    resolve_reproduction, Action, ActionIntent, DeathCause,
};
use crate::error::{Error, Result};
use crate::metrics::{record_metrics, MetricsRecord, TraceWindow};
use crate::policy::{forward_into, sample_action, ForwardScratch, PolicyPool};
use crate::rng::Domain;
use crate::sensing::build_observation_into;
use crate::snapshot::state_digest;
use crate::terrain::flow_water_tick;
use crate::world::{init_world, WorldState};

/// Event counts of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Step index at the start of the step.
    pub step: u64,
    /// Live agents at the start of the step.
    pub population: u32,
    pub births: u32,
    pub deaths_attack: u32,
    pub deaths_starvation: u32,
    pub deaths_age: u32,
    pub attacks: u32,
    pub kills: u32,
    /// Intents per action, indexed by [`Action::index`].
    pub actions: [u32; 9],
    pub canceled_moves: u32,
    pub energy_spent: Units,
    pub energy_grown: Units,
}

impl StepTrace {
    pub fn deaths(&self) -> u32 {
        self.deaths_attack + self.deaths_starvation + self.deaths_age
    }
}

/// Samples one intent per live agent from its policy, in ascending id order.
pub fn choose_intents(world: &WorldState, pool: &PolicyPool, cfg: &SimConfig) -> Vec<ActionIntent> {
    let ids = world.agents.live_ids();
    let arch = pool.arch();
    ids.par_iter()
        .with_min_len(8)
        .map_init(
            || {
                (
                    ForwardScratch::new(arch),
                    Vec::with_capacity(arch.input_width()),
                    vec![0.0f32; arch.actions],
                )
            },
            |(scratch, obs, logits), &id| {
                obs.clear();
                build_observation_into(world, id, cfg, obs);
                let params = pool.get(id);
                forward_into(arch, params, obs, scratch, logits);
                let mut rng = world.rng.stream(world.step, Domain::Action, id.0 as u64);
                let index = sample_action(logits, params.log_temperature, &mut rng);
                ActionIntent {
                    agent: id,
                    action: Action::from_index(index).expect("head width matches the action set"),
                }
            },
        )
        .collect()
}

/// Advances the world by one step on the current rayon pool.
pub fn step(world: &mut WorldState, pool: &mut PolicyPool, cfg: &SimConfig) -> StepTrace {
    let intents = choose_intents(world, pool, cfg);
    let mut trace = StepTrace {
        step: world.step,
        population: intents.len() as u32,
        ..StepTrace::default()
    };
    for i in &intents {
        trace.actions[i.action.index()] += 1;
    }

    let attacks = resolve_attacks(world, &intents);
    resolve_eats(world, &intents, cfg);
    let moves = resolve_moves(world, &intents);
    let births = resolve_reproduction(world, pool, &intents, cfg);
    let metabolism = apply_metabolism(world, &intents, cfg);
    let deaths = process_deaths(world, &attacks, &metabolism, cfg);

    let m = &mut world.map;
    m.water = flow_water_tick(&m.rock, &m.water, m.size, cfg.resources.water_flow_rate);
    trace.energy_grown = grow_energy(world, cfg);
    world.step += 1;

    trace.attacks = attacks.attacks;
    trace.kills = attacks.kills.len() as u32;
    trace.canceled_moves = moves.canceled;
    trace.births = births.len() as u32;
    trace.energy_spent = metabolism.energy_spent;
    for d in &deaths {
        match d.cause {
            DeathCause::Attack => trace.deaths_attack += 1,
            DeathCause::Starvation => trace.deaths_starvation += 1,
            DeathCause::Age => trace.deaths_age += 1,
        }
    }
    trace
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Reached the requested step count.
    Completed,
    /// Population reached zero.
    Extinct,
}

/// A world, its policies and the thread pool that steps them.
pub struct Simulation {
    cfg: SimConfig,
    world: WorldState,
    pool: PolicyPool,
    threads: rayon::ThreadPool,
    window: TraceWindow,
}

fn build_threads(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

impl Simulation {
    /// Validates `cfg` and builds the initial world. `workers == 0` uses one
    /// thread per available core.
    pub fn new(cfg: SimConfig, workers: usize) -> Result<Self> {
        let cfg = validate_config(cfg)?;
        let (world, pool) = init_world(&cfg)?;
        Self::from_parts(cfg, world, pool, workers)
    }

    /// Wraps an existing state, e.g. one restored from a snapshot.
    pub fn from_parts(
        cfg: SimConfig,
        world: WorldState,
        pool: PolicyPool,
        workers: usize,
    ) -> Result<Self> {
        Ok(Self {
            cfg,
            world,
            pool,
            threads: build_threads(workers)?,
            window: TraceWindow::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn pool(&self) -> &PolicyPool {
        &self.pool
    }

    pub fn workers(&self) -> usize {
        self.threads.current_num_threads()
    }

    pub fn into_parts(self) -> (SimConfig, WorldState, PolicyPool) {
        (self.cfg, self.world, self.pool)
    }

    pub fn step(&mut self) -> StepTrace {
        let (world, pool, cfg) = (&mut self.world, &mut self.pool, &self.cfg);
        let trace = self.threads.install(|| step(world, pool, cfg));
        self.window.push(&trace);
        trace
    }

    pub fn digest(&self) -> u128 {
        state_digest(&self.world, &self.pool)
    }

    /// Metrics of the current world over the traces since the last record,
    /// then starts a new window.
    pub fn take_record(&mut self) -> MetricsRecord {
        let record = record_metrics(&self.world, &self.cfg, &self.window);
        self.window = TraceWindow::default();
        record
    }

    /// Steps until `target` steps have elapsed or the population dies out.
    /// A record is passed to `sink` every `metrics.cadence` steps and at the
    /// final step.
    pub fn run_until(
        &mut self,
        target: u64,
        mut sink: impl FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<Termination> {
        let cadence = self.cfg.metrics.cadence;
        let heartbeat = self.cfg.metrics.heartbeat_every;
        let started = Instant::now();
        let first = self.world.step;
        while self.world.step < target && self.world.agents.live_count() > 0 {
            self.step();
            let s = self.world.step;
            let last = s == target || self.world.agents.live_count() == 0;
            if s.is_multiple_of(cadence) || last {
                sink(&self.take_record())?;
            }
            if heartbeat > 0 && s.is_multiple_of(heartbeat) {
                let rate = (s - first) as f64 / started.elapsed().as_secs_f64().max(1e-9);
                eprintln!(
                    "step {s} population {} ({rate:.1} steps/s)",
                    self.world.agents.live_count()
                );
            }
        }
        Ok(if self.world.agents.live_count() == 0 {
            Termination::Extinct
        } else {
            Termination::Completed
        })
    }
}

/// Result of [`run_episode`].
pub struct Episode {
    pub records: Vec<MetricsRecord>,
    pub termination: Termination,
    pub simulation: Simulation,
}

/// Runs `cfg.steps` steps (or until extinction) from a fresh world, emitting
/// the step-0 record first.
pub fn run_episode(
    cfg: SimConfig,
    workers: usize,
    mut sink: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<(Termination, Simulation)> {
    let mut sim = Simulation::new(cfg, workers)?;
    sink(&sim.take_record())?;
    let target = sim.cfg.steps;
    let termination = sim.run_until(target, sink)?;
    Ok((termination, sim))
}

/// [`run_episode`] collecting every record in memory.
pub fn run_episode_collect(cfg: SimConfig, workers: usize) -> Result<Episode> {
    let mut records = Vec::new();
    let (termination, simulation) = run_episode(cfg, workers, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(Episode {
        records,
        termination,
        simulation,
    })
}
