//! Factored world state: map layers plus the agent table.

use serde::{Deserialize, Serialize};

use crate::config::{SimConfig, Units};
use crate::error::{Error, Result};
use crate::policy::{PolicyArch, PolicyPool};
use crate::rng::{CounterRng, Domain};
use crate::terrain::{self, TerrainSpec};

/// Marks an empty cell in the occupancy layer.
pub const EMPTY: u32 = u32::MAX;

/// Slot index into the agent table. Also indexes the policy pool, and is the
/// order in which conflicts are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl AgentId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Offsets the cell, returning `None` when the result leaves a
    /// `size`×`size` map.
    #[inline]
    pub fn offset(self, dx: i32, dy: i32, size: usize) -> Option<Cell> {
        let x = self.x as i64 + dx as i64;
        let y = self.y as i64 + dy as i64;
        if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
            None
        } else {
            Some(Cell::new(x as u32, y as u32))
        }
    }

    #[inline]
    pub fn index(self, size: usize) -> usize {
        self.y as usize * size + self.x as usize
    }

    pub fn from_index(index: usize, size: usize) -> Self {
        Cell::new((index % size) as u32, (index / size) as u32)
    }
}

/// Facing direction. `y` grows southward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    N,
    E,
    S,
    W,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::N,
        Orientation::E,
        Orientation::S,
        Orientation::W,
    ];

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit vector of the facing direction.
    pub fn forward(self) -> (i32, i32) {
        match self {
            Orientation::N => (0, -1),
            Orientation::E => (1, 0),
            Orientation::S => (0, 1),
            Orientation::W => (-1, 0),
        }
    }

    /// Unit vector pointing to the agent's right.
    pub fn right(self) -> (i32, i32) {
        let (fx, fy) = self.forward();
        (-fy, fx)
    }

    pub fn turned_cw(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn turned_ccw(self) -> Self {
        Self::from_index(self.index() + 3)
    }
}

/// Per-cell map layers. All resource layers are fixed-point and never
/// negative; rock is fixed after generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayers {
    pub size: usize,
    pub rock: Vec<Units>,
    pub water: Vec<Units>,
    pub energy: Vec<Units>,
    pub biomass: Vec<Units>,
    pub occupancy: Vec<u32>,
}

impl GridLayers {
    pub fn new(size: usize) -> Self {
        let n = size * size;
        Self {
            size,
            rock: vec![0; n],
            water: vec![0; n],
            energy: vec![0; n],
            biomass: vec![0; n],
            occupancy: vec![EMPTY; n],
        }
    }

    pub fn cell_count(&self) -> usize {
        self.size * self.size
    }

    #[inline]
    pub fn surface(&self, i: usize) -> Units {
        self.rock[i] + self.water[i]
    }

    #[inline]
    pub fn occupant(&self, cell: Cell) -> Option<AgentId> {
        match self.occupancy[cell.index(self.size)] {
            EMPTY => None,
            id => Some(AgentId(id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub alive: bool,
    /// Lineage identifier, unique over the whole run.
    pub uid: u64,
    pub pos: Cell,
    pub orientation: Orientation,
    pub hp: f32,
    pub age: u32,
    pub store_water: Units,
    pub store_energy: Units,
    pub store_biomass: Units,
    pub color: [f32; 3],
    /// `uid` of the parent; `None` for the founding population.
    pub parent: Option<u64>,
    pub birth_step: u64,
}

impl Default for AgentRecord {
    fn default() -> Self {
        Self {
            alive: false,
            uid: 0,
            pos: Cell::default(),
            orientation: Orientation::N,
            hp: 0.0,
            age: 0,
            store_water: 0,
            store_energy: 0,
            store_biomass: 0,
            color: [0.0; 3],
            parent: None,
            birth_step: 0,
        }
    }
}

/// Fixed array of agent slots with a free list. The free list is kept in
/// descending order so that allocation always hands out the lowest free slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTable {
    slots: Vec<AgentRecord>,
    free: Vec<u32>,
    live: usize,
    next_uid: u64,
}

impl AgentTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: vec![AgentRecord::default(); capacity],
            free: (0..capacity as u32).rev().collect(),
            live: 0,
            next_uid: 0,
        }
    }

    /// Rebuilds a table from raw slots; the free list is derived from the
    /// alive flags.
    pub fn from_slots(slots: Vec<AgentRecord>, next_uid: u64) -> Self {
        let free = (0..slots.len() as u32)
            .rev()
            .filter(|&i| !slots[i as usize].alive)
            .collect();
        let live = slots.iter().filter(|a| a.alive).count();
        Self {
            slots,
            free,
            live,
            next_uid,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn live_count(&self) -> usize {
        self.live
    }

    pub fn next_uid(&self) -> u64 {
        self.next_uid
    }

    pub fn free_slots(&self) -> &[u32] {
        &self.free
    }

    pub fn has_free_slot(&self) -> bool {
        !self.free.is_empty()
    }

    #[inline]
    pub fn get(&self, id: AgentId) -> &AgentRecord {
        &self.slots[id.index()]
    }

    #[inline]
    pub fn get_mut(&mut self, id: AgentId) -> &mut AgentRecord {
        &mut self.slots[id.index()]
    }

    pub fn slots(&self) -> &[AgentRecord] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [AgentRecord] {
        &mut self.slots
    }

    /// Live agent ids in ascending order.
    pub fn live_ids(&self) -> Vec<AgentId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, a)| a.alive)
            .map(|(i, _)| AgentId(i as u32))
            .collect()
    }

    pub fn iter_live(&self) -> impl Iterator<Item = (AgentId, &AgentRecord)> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, a)| a.alive)
            .map(|(i, a)| (AgentId(i as u32), a))
    }

    /// Places `record` in the lowest free slot and assigns it a fresh uid.
    pub fn insert(&mut self, mut record: AgentRecord) -> Option<AgentId> {
        let slot = self.free.pop()?;
        record.alive = true;
        record.uid = self.next_uid;
        self.next_uid += 1;
        self.slots[slot as usize] = record;
        self.live += 1;
        Some(AgentId(slot))
    }

    /// Frees a batch of slots and clears their records.
    pub fn remove_many(&mut self, ids: &[AgentId]) {
        if ids.is_empty() {
            return;
        }
        for &id in ids {
            let slot = &mut self.slots[id.index()];
            debug_assert!(slot.alive);
            *slot = AgentRecord::default();
            self.free.push(id.0);
            self.live -= 1;
        }
        self.free.sort_unstable_by(|a, b| b.cmp(a));
    }

    /// Checks the alive-flag / free-list partition.
    pub fn check_partition(&self) -> bool {
        let mut seen = vec![false; self.slots.len()];
        for &f in &self.free {
            if self.slots[f as usize].alive || seen[f as usize] {
                return false;
            }
            seen[f as usize] = true;
        }
        let dead = self.slots.iter().filter(|a| !a.alive).count();
        dead == self.free.len() && self.live == self.slots.len() - dead
    }
}

/// World-wide sums of the conserved resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConservationTotals {
    pub biomass: Units,
    pub water: Units,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: u64,
    pub map: GridLayers,
    pub agents: AgentTable,
    pub rng: CounterRng,
    /// Totals recorded at construction; every later state must match.
    pub reference_totals: ConservationTotals,
}

impl WorldState {
    pub fn size(&self) -> usize {
        self.map.size
    }

    pub fn totals(&self, base_biomass: Units) -> ConservationTotals {
        let mut biomass: Units = self.map.biomass.iter().sum();
        let mut water: Units = self.map.water.iter().sum();
        for (_, a) in self.agents.iter_live() {
            biomass += a.store_biomass + base_biomass;
            water += a.store_water;
        }
        ConservationTotals { biomass, water }
    }

    pub fn total_energy(&self) -> Units {
        self.map.energy.iter().sum::<Units>()
            + self
                .agents
                .iter_live()
                .map(|(_, a)| a.store_energy)
                .sum::<Units>()
    }

    /// Occupancy holds exactly the live agents, one per cell.
    pub fn check_occupancy(&self) -> bool {
        let size = self.size();
        let mut expected = vec![EMPTY; size * size];
        for (id, a) in self.agents.iter_live() {
            let i = a.pos.index(size);
            if a.pos.x as usize >= size || a.pos.y as usize >= size || expected[i] != EMPTY {
                return false;
            }
            expected[i] = id.0;
        }
        expected == self.map.occupancy
    }

    /// Runs every structural invariant check; returns the first violation.
    pub fn check_invariants(&self, cfg: &SimConfig) -> Result<(), String> {
        let totals = self.totals(cfg.resources.base_biomass);
        if totals != self.reference_totals {
            return Err(format!(
                "conservation violated at step {}: {totals:?} != {:?}",
                self.step, self.reference_totals
            ));
        }
        if !self.check_occupancy() {
            return Err(format!("occupancy mismatch at step {}", self.step));
        }
        if !self.agents.check_partition() {
            return Err(format!(
                "agent table partition broken at step {}",
                self.step
            ));
        }
        let m = &self.map;
        if m.water
            .iter()
            .chain(&m.energy)
            .chain(&m.biomass)
            .any(|&v| v < 0)
        {
            return Err(format!("negative map layer at step {}", self.step));
        }
        let cap = cfg.resources.stomach_capacity;
        for (id, a) in self.agents.iter_live() {
            let stores = [a.store_water, a.store_energy, a.store_biomass];
            if stores.iter().any(|&s| !(0..=cap).contains(&s)) {
                return Err(format!("agent {} store out of range: {stores:?}", id.0));
            }
            if !(a.hp > 0.0 && a.hp <= cfg.health.max_hp) {
                return Err(format!("agent {} hp out of range: {}", id.0, a.hp));
            }
        }
        Ok(())
    }
}

/// Builds the initial world and the founding population's policies.
pub fn init_world(cfg: &SimConfig) -> Result<(WorldState, PolicyPool)> {
    let size = cfg.grid_size;
    let n_cells = size * size;
    if cfg.initial_population > n_cells {
        return Err(Error::NotEnoughCells {
            requested: cfg.initial_population,
            available: n_cells,
        });
    }
    let rng = CounterRng::new(cfg.seed);
    let spec = TerrainSpec::from_config(cfg);
    let mut map = GridLayers::new(size);
    map.rock = terrain::generate_rock(&spec, size)?;
    map.water = terrain::init_water(&map.rock, spec.sea_level);

    let founders_biomass = cfg.initial_population as Units * cfg.initial_agent_biomass();
    terrain::seed_resources(
        &mut map,
        cfg.biomass_budget() - founders_biomass,
        cfg.energy_budget(),
        cfg.resources.scatter_quantum,
        &rng,
    );

    let arch = PolicyArch::from_config(cfg);
    let mut pool = PolicyPool::new(arch, cfg.max_population);
    let mut agents = AgentTable::new(cfg.max_population);

    // Partial Fisher-Yates over cell indices: distinct uniform cells.
    let mut placement = rng.stream(0, Domain::Placement, 0);
    let mut cells: Vec<u32> = (0..n_cells as u32).collect();
    let store = cfg.initial_store();
    for k in 0..cfg.initial_population {
        let j = k + placement.below((n_cells - k) as u64) as usize;
        cells.swap(k, j);
        let cell = Cell::from_index(cells[k] as usize, size);
        let orientation = Orientation::from_index(placement.below(4) as usize);
        let mut traits = rng.stream(0, Domain::TraitInit, k as u64);
        let color = [traits.next_f32(), traits.next_f32(), traits.next_f32()];
        let id = agents
            .insert(AgentRecord {
                pos: cell,
                orientation,
                hp: cfg.health.max_hp,
                store_water: store,
                store_energy: store,
                store_biomass: store,
                color,
                ..AgentRecord::default()
            })
            .expect("capacity checked by validation");
        map.occupancy[cell.index(size)] = id.0;
        let mut init = rng.stream(0, Domain::PolicyInit, id.0 as u64);
        pool.init_slot(id, &mut init);
    }

    let mut world = WorldState {
        step: 0,
        map,
        agents,
        rng,
        reference_totals: ConservationTotals::default(),
    };
    world.reference_totals = world.totals(cfg.resources.base_biomass);
    Ok((world, pool))
}
