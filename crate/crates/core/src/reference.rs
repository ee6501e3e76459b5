//! Single-threaded reference step used to check the engine.
//!
//! Every conflict is resolved by brute force in ascending agent order, and
//! the occupancy layer and free list are rebuilt from scratch. Only sensing,
//! the forward pass, action sampling and mutation are shared with the
//! engine.

use crate::config::SimConfig;
use crate::dynamics::{child_color, child_policy, Action, ActionIntent};
use crate::engine::StepTrace;
use crate::policy::{forward, sample_action, PolicyPool};
use crate::rng::Domain;
use crate::sensing::build_observation;
use crate::terrain::flow_water_tick_serial;
use crate::world::{AgentId, AgentRecord, AgentTable, Cell, WorldState, EMPTY};

fn in_attack_square(attacker: &AgentRecord, target: Cell) -> bool {
    let (fx, fy) = attacker.orientation.forward();
    let (lx, ly) = (-fy, fx);
    let rx = target.x as i64 - attacker.pos.x as i64;
    let ry = target.y as i64 - attacker.pos.y as i64;
    let depth = rx * fx as i64 + ry * fy as i64;
    let side = rx * lx as i64 + ry * ly as i64;
    (1..=3).contains(&depth) && (-1..=1).contains(&side)
}

fn step_target(a: &AgentRecord, sign: i64, size: usize) -> Option<Cell> {
    let (fx, fy) = a.orientation.forward();
    let x = a.pos.x as i64 + sign * fx as i64;
    let y = a.pos.y as i64 + sign * fy as i64;
    (x >= 0 && y >= 0 && x < size as i64 && y < size as i64).then(|| Cell::new(x as u32, y as u32))
}

/// One step of the simulation, computed the slow way.
#[allow(clippy::needless_range_loop)]
pub fn reference_step(world: &mut WorldState, pool: &mut PolicyPool, cfg: &SimConfig) -> StepTrace {
    let size = world.size();
    let r = &cfg.resources;
    let h = &cfg.health;
    let n = world.agents.capacity();
    let mut slots: Vec<AgentRecord> = world.agents.slots().to_vec();
    let mut next_uid = world.agents.next_uid();

    // Sense and act.
    let mut intents: Vec<ActionIntent> = Vec::new();
    for k in 0..n {
        if !slots[k].alive {
            continue;
        }
        let id = AgentId(k as u32);
        let obs = build_observation(world, id, cfg).expect("live agent");
        let params = pool.get(id);
        let logits = forward(pool.arch(), params, &obs).expect("shapes match");
        let mut rng = world.rng.stream(world.step, Domain::Action, k as u64);
        let a = sample_action(&logits, params.log_temperature, &mut rng);
        intents.push(ActionIntent {
            agent: id,
            action: Action::from_index(a).unwrap(),
        });
    }
    let mut trace = StepTrace {
        step: world.step,
        population: intents.len() as u32,
        ..StepTrace::default()
    };
    let mut action_of = vec![None; n];
    for i in &intents {
        trace.actions[i.action.index()] += 1;
        action_of[i.agent.index()] = Some(i.action);
    }
    let acting: Vec<usize> = intents.iter().map(|i| i.agent.index()).collect();

    // Attacks: first (lowest) attacker whose square holds the victim.
    let mut killer: Vec<Option<usize>> = vec![None; n];
    for &v in &acting {
        for &a in &acting {
            if action_of[a] == Some(Action::Attack)
                && a != v
                && in_attack_square(&slots[a], slots[v].pos)
            {
                killer[v] = Some(a);
                break;
            }
        }
    }
    trace.attacks = acting
        .iter()
        .filter(|&&a| action_of[a] == Some(Action::Attack))
        .count() as u32;
    trace.kills = killer.iter().filter(|k| k.is_some()).count() as u32;
    let active = |k: usize, killer: &[Option<usize>]| killer[k].is_none();

    // Eats.
    for &k in &acting {
        if !active(k, &killer) {
            continue;
        }
        let i = slots[k].pos.index(size);
        let a = &mut slots[k];
        let (cell, store) = match action_of[k] {
            Some(Action::EatWater) => (&mut world.map.water[i], &mut a.store_water),
            Some(Action::EatEnergy) => (&mut world.map.energy[i], &mut a.store_energy),
            Some(Action::EatBiomass) => (&mut world.map.biomass[i], &mut a.store_biomass),
            _ => continue,
        };
        let mut t = r.eat_amount;
        if *cell < t {
            t = *cell;
        }
        if r.stomach_capacity - *store < t {
            t = r.stomach_capacity - *store;
        }
        *cell -= t;
        *store += t;
    }

    // Moves against start-of-phase positions.
    let start: Vec<Option<Cell>> = slots.iter().map(|a| a.alive.then_some(a.pos)).collect();
    let mut targets: Vec<Option<Cell>> = vec![None; n];
    for &k in &acting {
        if !active(k, &killer) {
            continue;
        }
        match action_of[k] {
            Some(Action::TurnCW) => slots[k].orientation = slots[k].orientation.turned_cw(),
            Some(Action::TurnCCW) => slots[k].orientation = slots[k].orientation.turned_ccw(),
            Some(Action::Forward) => targets[k] = step_target(&slots[k], 1, size),
            _ => {}
        }
    }
    for &k in &acting {
        if action_of[k] != Some(Action::Forward) || !active(k, &killer) {
            continue;
        }
        let ok = match targets[k] {
            None => false,
            Some(t) => {
                !start.contains(&Some(t))
                    && !acting
                        .iter()
                        .any(|&o| o != k && active(o, &killer) && targets[o] == Some(t))
            }
        };
        if ok {
            slots[k].pos = targets[k].unwrap();
        } else {
            trace.canceled_moves += 1;
        }
    }

    // Reproduction in ascending parent order.
    let mut born: Vec<(usize, usize)> = Vec::new();
    for &k in &acting {
        if action_of[k] != Some(Action::Reproduce) || !active(k, &killer) {
            continue;
        }
        let p = &slots[k];
        let cost = r.costs.reproduce;
        let affordable = p.store_biomass >= r.base_biomass
            && p.store_energy >= r.child_energy + cost.energy
            && p.store_water >= r.child_water + cost.water;
        if !affordable {
            continue;
        }
        let Some(slot) = slots.iter().position(|a| !a.alive) else {
            continue;
        };
        let Some(cell) = step_target(p, -1, size) else {
            continue;
        };
        if slots.iter().any(|a| a.alive && a.pos == cell) {
            continue;
        }
        let color = child_color(world, AgentId(k as u32), cfg);
        let parent = &mut slots[k];
        parent.store_biomass -= r.base_biomass;
        parent.store_energy -= r.child_energy;
        parent.store_water -= r.child_water;
        let child = AgentRecord {
            alive: true,
            uid: next_uid,
            pos: cell,
            orientation: parent.orientation,
            hp: h.max_hp,
            age: 0,
            store_water: r.child_water,
            store_energy: r.child_energy,
            store_biomass: 0,
            color,
            parent: Some(parent.uid),
            birth_step: world.step,
        };
        next_uid += 1;
        slots[slot] = child;
        born.push((k, slot));
    }
    for &(parent, child) in &born {
        let params = child_policy(world, pool, AgentId(parent as u32), cfg);
        pool.set(AgentId(child as u32), &params);
    }
    trace.births = born.len() as u32;

    // Metabolism.
    let mut starved = vec![false; n];
    for &k in &acting {
        if !active(k, &killer) {
            continue;
        }
        let cost = action_of[k].unwrap().cost(&r.costs);
        let a = &mut slots[k];
        let i = a.pos.index(size);
        let mut short = false;
        if a.store_energy < cost.energy {
            trace.energy_spent += a.store_energy;
            a.store_energy = 0;
            short = true;
        } else {
            trace.energy_spent += cost.energy;
            a.store_energy -= cost.energy;
        }
        if a.store_water < cost.water {
            world.map.water[i] += a.store_water;
            a.store_water = 0;
            short = true;
        } else {
            world.map.water[i] += cost.water;
            a.store_water -= cost.water;
        }
        if short {
            a.hp -= h.starvation_damage;
            starved[k] = true;
        }
        if a.age > h.age_onset {
            a.hp -= (a.age - h.age_onset) as f32 * h.age_slope;
        }
        let tenth = r.stomach_capacity as f64 / 10.0;
        if a.hp > 0.0
            && a.hp < h.max_hp
            && a.store_energy as f64 > tenth
            && a.store_water as f64 > tenth
        {
            a.store_energy -= 1;
            a.store_water -= 1;
            trace.energy_spent += 1;
            world.map.water[i] += 1;
            a.hp = (a.hp + h.recovery_rate).min(h.max_hp);
        }
        a.age += 1;
    }

    // Deaths.
    for k in 0..n {
        let a = &slots[k];
        if !a.alive {
            continue;
        }
        let dead = killer[k].is_some() || a.hp <= 0.0;
        if !dead {
            continue;
        }
        if killer[k].is_some() {
            trace.deaths_attack += 1;
        } else if starved[k] {
            trace.deaths_starvation += 1;
        } else {
            trace.deaths_age += 1;
        }
        let i = a.pos.index(size);
        world.map.biomass[i] += a.store_biomass + r.base_biomass;
        world.map.energy[i] += a.store_energy;
        world.map.water[i] += a.store_water;
        slots[k] = AgentRecord::default();
    }

    world.map.occupancy = vec![EMPTY; size * size];
    for (k, a) in slots.iter().enumerate() {
        if a.alive {
            world.map.occupancy[a.pos.index(size)] = k as u32;
        }
    }
    world.agents = AgentTable::from_slots(slots, next_uid);

    world.map.water =
        flow_water_tick_serial(&world.map.rock, &world.map.water, size, r.water_flow_rate);
    for i in 0..size * size {
        if world.map.biomass[i] > 0 && world.map.energy[i] < r.energy_cap {
            let before = world.map.energy[i];
            world.map.energy[i] = (before + r.energy_growth_rate).min(r.energy_cap);
            trace.energy_grown += world.map.energy[i] - before;
        }
    }
    world.step += 1;
    trace
}
