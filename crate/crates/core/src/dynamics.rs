//! Per-step resolution of agent intents: attack, eat, move, reproduce,
//! metabolism and death.
//!
//! Every resolver sees intents sorted by ascending agent id and reduces
//! conflicts in that order, so the outcome is independent of how the work is
//! scheduled. Agents killed during the attack phase keep their slot until
//! [`process_deaths`] but take no further part in the step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ActionCost, ActionCosts, SimConfig, Units};
use crate::policy::{mutate_color, mutate_into, PolicyParams, PolicyPool, TemperatureBounds};
use crate::rng::Domain;
use crate::world::{AgentId, AgentRecord, Cell, Orientation, WorldState, EMPTY};

/// Discrete actions in policy-head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Rest = 0,
    TurnCW = 1,
    TurnCCW = 2,
    Forward = 3,
    EatWater = 4,
    EatEnergy = 5,
    EatBiomass = 6,
    Reproduce = 7,
    Attack = 8,
}

/// Coarse action groups used by the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionCategory {
    Rest,
    Move,
    Eat,
    Reproduce,
    Attack,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Rest,
        Action::TurnCW,
        Action::TurnCCW,
        Action::Forward,
        Action::EatWater,
        Action::EatEnergy,
        Action::EatBiomass,
        Action::Reproduce,
        Action::Attack,
    ];

    /// Maps a policy-head index to an action; `None` past the last action.
    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn category(self) -> ActionCategory {
        match self {
            Action::Rest => ActionCategory::Rest,
            Action::TurnCW | Action::TurnCCW | Action::Forward => ActionCategory::Move,
            Action::EatWater | Action::EatEnergy | Action::EatBiomass => ActionCategory::Eat,
            Action::Reproduce => ActionCategory::Reproduce,
            Action::Attack => ActionCategory::Attack,
        }
    }

    pub fn cost(self, costs: &ActionCosts) -> ActionCost {
        match self.category() {
            ActionCategory::Rest => costs.rest,
            ActionCategory::Move => costs.movement,
            ActionCategory::Eat => costs.eat,
            ActionCategory::Reproduce => costs.reproduce,
            ActionCategory::Attack => costs.attack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionIntent {
    pub agent: AgentId,
    pub action: Action,
}

/// Live and not killed earlier in the current step.
#[inline]
pub fn is_active(a: &AgentRecord) -> bool {
    a.alive && a.hp > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kill {
    pub victim: AgentId,
    /// Lowest-id attacker whose square contained the victim.
    pub attacker: AgentId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackOutcome {
    /// Number of attack intents.
    pub attacks: u32,
    /// Sorted by victim id.
    pub kills: Vec<Kill>,
}

impl AttackOutcome {
    pub fn was_killed(&self, id: AgentId) -> bool {
        self.kills.binary_search_by_key(&id, |k| k.victim).is_ok()
    }

    /// Kills credited to `attacker`.
    pub fn kills_by(&self, attacker: AgentId) -> usize {
        self.kills.iter().filter(|k| k.attacker == attacker).count()
    }
}

/// The in-bounds cells of the 3×3 square in front of `pos`: depth 1..=3
/// along the facing vector, lateral −1..=1.
pub fn attack_cells(
    pos: Cell,
    orientation: Orientation,
    size: usize,
) -> impl Iterator<Item = Cell> {
    let (fx, fy) = orientation.forward();
    let (lx, ly) = orientation.right();
    (1..=3).flat_map(move |d| {
        (-1..=1).filter_map(move |s| pos.offset(d * fx + s * lx, d * fy + s * ly, size))
    })
}

/// Marks every agent in an attacker's square as killed (hp 0). Attacks are
/// simultaneous: an attacker killed by another still strikes.
pub fn resolve_attacks(world: &mut WorldState, intents: &[ActionIntent]) -> AttackOutcome {
    let size = world.size();
    let attackers: Vec<AgentId> = intents
        .iter()
        .filter(|i| i.action == Action::Attack)
        .map(|i| i.agent)
        .collect();
    if attackers.is_empty() {
        return AttackOutcome::default();
    }
    let map = &world.map;
    let agents = &world.agents;
    let mut pairs: Vec<Kill> = attackers
        .par_iter()
        .flat_map_iter(|&attacker| {
            let a = agents.get(attacker);
            attack_cells(a.pos, a.orientation, size)
                .filter_map(|c| map.occupant(c))
                .map(move |victim| Kill { victim, attacker })
                .collect::<Vec<_>>()
        })
        .collect();
    pairs.sort_unstable_by_key(|k| (k.victim, k.attacker));
    pairs.dedup_by_key(|k| k.victim);
    for k in &pairs {
        world.agents.get_mut(k.victim).hp = 0.0;
    }
    AttackOutcome {
        attacks: attackers.len() as u32,
        kills: pairs,
    }
}

/// Moves up to `eat_amount` of the chosen resource from the agent's cell
/// into its store, bounded by what the cell holds and the free capacity.
pub fn resolve_eats(world: &mut WorldState, intents: &[ActionIntent], cfg: &SimConfig) {
    let size = world.size();
    let amount = cfg.resources.eat_amount;
    let cap = cfg.resources.stomach_capacity;
    for intent in intents {
        let a = world.agents.get_mut(intent.agent);
        if !is_active(a) {
            continue;
        }
        let i = a.pos.index(size);
        let (cell, store) = match intent.action {
            Action::EatWater => (&mut world.map.water[i], &mut a.store_water),
            Action::EatEnergy => (&mut world.map.energy[i], &mut a.store_energy),
            Action::EatBiomass => (&mut world.map.biomass[i], &mut a.store_biomass),
            _ => continue,
        };
        let transfer = amount.min(*cell).min(cap - *store).max(0);
        *cell -= transfer;
        *store += transfer;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveOutcome {
    pub moved: u32,
    pub canceled: u32,
}

/// Applies turns and forward moves. A forward move fails when its target is
/// off the map, occupied at the start of the phase, or claimed by another
/// mover; every claimant of a contested cell fails.
pub fn resolve_moves(world: &mut WorldState, intents: &[ActionIntent]) -> MoveOutcome {
    let size = world.size();
    let mut outcome = MoveOutcome::default();
    let mut claims: Vec<(usize, AgentId)> = Vec::new();
    for intent in intents {
        let a = world.agents.get_mut(intent.agent);
        if !is_active(a) {
            continue;
        }
        match intent.action {
            Action::TurnCW => a.orientation = a.orientation.turned_cw(),
            Action::TurnCCW => a.orientation = a.orientation.turned_ccw(),
            Action::Forward => {
                let (fx, fy) = a.orientation.forward();
                match a.pos.offset(fx, fy, size) {
                    Some(t) if world.map.occupancy[t.index(size)] == EMPTY => {
                        claims.push((t.index(size), intent.agent))
                    }
                    _ => outcome.canceled += 1,
                }
            }
            _ => {}
        }
    }
    claims.sort_unstable();
    let mut k = 0;
    while k < claims.len() {
        let target = claims[k].0;
        let run = claims[k..].iter().take_while(|c| c.0 == target).count();
        if run > 1 {
            outcome.canceled += run as u32;
        } else {
            let id = claims[k].1;
            let a = world.agents.get_mut(id);
            world.map.occupancy[a.pos.index(size)] = EMPTY;
            a.pos = Cell::from_index(target, size);
            world.map.occupancy[target] = id.0;
            outcome.moved += 1;
        }
        k += run;
    }
    outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Birth {
    pub parent: AgentId,
    pub child: AgentId,
}

/// Whether `a` holds enough to found a child and still pay the action cost.
pub fn can_afford_child(a: &AgentRecord, cfg: &SimConfig) -> bool {
    let r = &cfg.resources;
    let cost = r.costs.reproduce;
    a.store_biomass >= r.base_biomass
        && a.store_energy >= r.child_energy + cost.energy
        && a.store_water >= r.child_water + cost.water
}

/// The cell directly behind `a`, when it is on the map and empty.
pub fn birth_cell(world: &WorldState, a: &AgentRecord) -> Option<Cell> {
    let (fx, fy) = a.orientation.forward();
    a.pos
        .offset(-fx, -fy, world.size())
        .filter(|c| world.map.occupancy[c.index(world.size())] == EMPTY)
}

/// Child record for a successful reproduction; deducts the endowment from
/// the parent.
pub fn spawn_child(
    parent: &mut AgentRecord,
    cell: Cell,
    color: [f32; 3],
    step: u64,
    cfg: &SimConfig,
) -> AgentRecord {
    let r = &cfg.resources;
    parent.store_biomass -= r.base_biomass;
    parent.store_energy -= r.child_energy;
    parent.store_water -= r.child_water;
    AgentRecord {
        alive: true,
        uid: 0,
        pos: cell,
        orientation: parent.orientation,
        hp: cfg.health.max_hp,
        age: 0,
        store_water: r.child_water,
        store_energy: r.child_energy,
        store_biomass: 0,
        color,
        parent: Some(parent.uid),
        birth_step: step,
    }
}

/// Mutated policy of the child of the agent in slot `parent`.
pub fn child_policy(
    world: &WorldState,
    pool: &PolicyPool,
    parent: AgentId,
    cfg: &SimConfig,
) -> PolicyParams {
    let mut noise = world
        .rng
        .stream(world.step, Domain::Mutation, parent.0 as u64);
    let mut params = PolicyParams::zeros(pool.arch());
    params.log_temperature = mutate_into(
        pool.get(parent),
        &mut params.weights,
        cfg.policy.mutation_std,
        TemperatureBounds::from_config(cfg),
        &mut noise,
    );
    params
}

/// Mutated color of the child of the agent in slot `parent`.
pub fn child_color(world: &WorldState, parent: AgentId, cfg: &SimConfig) -> [f32; 3] {
    let mut noise = world
        .rng
        .stream(world.step, Domain::ColorMutation, parent.0 as u64);
    mutate_color(
        world.agents.get(parent).color,
        cfg.policy.mutation_std,
        &mut noise,
    )
}

/// Places children behind their parents in ascending parent order. Each
/// child takes the lowest free slot, gets a mutated copy of the parent's
/// policy, and first acts on the next step.
pub fn resolve_reproduction(
    world: &mut WorldState,
    pool: &mut PolicyPool,
    intents: &[ActionIntent],
    cfg: &SimConfig,
) -> Vec<Birth> {
    let mut births = Vec::new();
    for intent in intents {
        if intent.action != Action::Reproduce {
            continue;
        }
        let a = world.agents.get(intent.agent);
        if !is_active(a) || !can_afford_child(a, cfg) || !world.agents.has_free_slot() {
            continue;
        }
        let Some(cell) = birth_cell(world, a) else {
            continue;
        };
        let color = child_color(world, intent.agent, cfg);
        let step = world.step;
        let record = spawn_child(world.agents.get_mut(intent.agent), cell, color, step, cfg);
        let child = world.agents.insert(record).expect("free slot checked");
        let size = world.size();
        world.map.occupancy[cell.index(size)] = child.0;
        births.push(Birth {
            parent: intent.agent,
            child,
        });
    }
    if births.is_empty() {
        return births;
    }
    let policies: Vec<PolicyParams> = {
        let (w, p) = (&*world, &*pool);
        births
            .par_iter()
            .map(|b| child_policy(w, p, b.parent, cfg))
            .collect()
    };
    for (b, params) in births.iter().zip(&policies) {
        pool.set(b.child, params);
    }
    births
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetabolismOutcome {
    /// Agents that could not cover their action cost, ascending.
    pub starved: Vec<AgentId>,
    /// Energy destroyed by action costs and healing.
    pub energy_spent: Units,
}

/// Pays one store's share of a cost. Returns false when the store fell short
/// (it is then emptied).
#[inline]
fn pay(store: &mut Units, cost: Units) -> bool {
    if *store >= cost {
        *store -= cost;
        true
    } else {
        *store = 0;
        false
    }
}

/// Action costs, starvation, aging and healing for every active agent that
/// acted this step. Spent water returns to the agent's cell; spent energy is
/// destroyed.
pub fn apply_metabolism(
    world: &mut WorldState,
    intents: &[ActionIntent],
    cfg: &SimConfig,
) -> MetabolismOutcome {
    let size = world.size();
    let h = &cfg.health;
    let cap = cfg.resources.stomach_capacity;
    let mut out = MetabolismOutcome::default();
    for intent in intents {
        let a = world.agents.get_mut(intent.agent);
        if !is_active(a) {
            continue;
        }
        let cell = a.pos.index(size);
        let cost = intent.action.cost(&cfg.resources.costs);
        let (e0, w0) = (a.store_energy, a.store_water);
        let paid_energy = pay(&mut a.store_energy, cost.energy);
        let paid_water = pay(&mut a.store_water, cost.water);
        out.energy_spent += e0 - a.store_energy;
        world.map.water[cell] += w0 - a.store_water;
        if !(paid_energy && paid_water) {
            a.hp -= h.starvation_damage;
            out.starved.push(intent.agent);
        }
        let over = a.age.saturating_sub(h.age_onset);
        if over > 0 {
            a.hp -= over as f32 * h.age_slope;
        }
        if a.hp > 0.0 && a.hp < h.max_hp && a.store_energy * 10 > cap && a.store_water * 10 > cap {
            a.store_energy -= 1;
            a.store_water -= 1;
            out.energy_spent += 1;
            world.map.water[cell] += 1;
            a.hp = (a.hp + h.recovery_rate).min(h.max_hp);
        }
        a.age += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeathCause {
    Attack,
    Starvation,
    Age,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Death {
    pub agent: AgentId,
    pub uid: u64,
    pub cause: DeathCause,
    pub cell: Cell,
}

/// Removes every agent with hp ≤ 0 and returns its body and stores to its
/// cell. Causes are attributed attack > starvation > age.
pub fn process_deaths(
    world: &mut WorldState,
    attacks: &AttackOutcome,
    metabolism: &MetabolismOutcome,
    cfg: &SimConfig,
) -> Vec<Death> {
    let size = world.size();
    let mut deaths = Vec::new();
    for (id, a) in world.agents.iter_live() {
        if a.hp > 0.0 {
            continue;
        }
        let cause = if attacks.was_killed(id) {
            DeathCause::Attack
        } else if metabolism.starved.binary_search(&id).is_ok() {
            DeathCause::Starvation
        } else {
            DeathCause::Age
        };
        deaths.push(Death {
            agent: id,
            uid: a.uid,
            cause,
            cell: a.pos,
        });
    }
    for d in &deaths {
        let a = world.agents.get(d.agent);
        let i = d.cell.index(size);
        world.map.biomass[i] += a.store_biomass + cfg.resources.base_biomass;
        world.map.energy[i] += a.store_energy;
        world.map.water[i] += a.store_water;
        world.map.occupancy[i] = EMPTY;
    }
    let ids: Vec<AgentId> = deaths.iter().map(|d| d.agent).collect();
    world.agents.remove_many(&ids);
    deaths
}

/// Regrows free energy on every cell that holds biomass, up to the cap.
/// Returns the amount grown.
pub fn grow_energy(world: &mut WorldState, cfg: &SimConfig) -> Units {
    let rate = cfg.resources.energy_growth_rate;
    let cap = cfg.resources.energy_cap;
    world
        .map
        .energy
        .par_iter_mut()
        .zip(world.map.biomass.par_iter())
        .with_min_len(4096)
        .map(|(e, &b)| {
            if b > 0 && *e < cap {
                let next = (*e + rate).min(cap);
                let grown = next - *e;
                *e = next;
                grown
            } else {
                0
            }
        })
        .sum()
}
