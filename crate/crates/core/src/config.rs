//! Simulation configuration: schema, defaults, validation and presets.
//!
//! Resource quantities are fixed-point integers ([`Units`]); one height unit
//! is [`UNITS_PER_POINT`] units, so water depth and rock height share a scale
//! and surface heights can be compared exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};

/// Fixed-point resource / height quantity.
pub type Units = i64;

/// Fixed-point units per resource point (and per height unit).
pub const UNITS_PER_POINT: i64 = 1024;

pub const SCHEMA_VERSION: u32 = 1;

/// Converts a height expressed in height units to fixed-point units.
pub fn height_to_units(height: f64) -> Units {
    (height * UNITS_PER_POINT as f64).round() as Units
}

pub fn units_to_height(units: Units) -> f64 {
    units as f64 / UNITS_PER_POINT as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerrainKind {
    Ocean,
    Beach,
    Island,
    Lake,
    Isthmus,
    Channel,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 6] = [
        TerrainKind::Ocean,
        TerrainKind::Beach,
        TerrainKind::Island,
        TerrainKind::Lake,
        TerrainKind::Isthmus,
        TerrainKind::Channel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Ocean => "ocean",
            TerrainKind::Beach => "beach",
            TerrainKind::Island => "island",
            TerrainKind::Lake => "lake",
            TerrainKind::Isthmus => "isthmus",
            TerrainKind::Channel => "channel",
        }
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TerrainKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTerrain(s.to_string()))
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which sensors the agents carry. Internal and external resource sensors
/// are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorSet {
    R,
    RC,
    RCV,
}

impl SensorSet {
    pub fn has_compass(self) -> bool {
        self >= SensorSet::RC
    }

    pub fn has_vision(self) -> bool {
        self == SensorSet::RCV
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorSet::R => "r",
            SensorSet::RC => "rc",
            SensorSet::RCV => "rcv",
        }
    }
}

/// Energy and water spent by one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionCost {
    pub energy: Units,
    pub water: Units,
}

impl ActionCost {
    pub const fn new(energy: Units, water: Units) -> Self {
        Self { energy, water }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionCosts {
    pub rest: ActionCost,
    /// Turns and forward moves.
    pub movement: ActionCost,
    pub attack: ActionCost,
    pub eat: ActionCost,
    pub reproduce: ActionCost,
}

impl Default for ActionCosts {
    fn default() -> Self {
        Self {
            rest: ActionCost::new(1, 1),
            movement: ActionCost::new(2, 1),
            attack: ActionCost::new(4, 1),
            eat: ActionCost::new(2, 1),
            reproduce: ActionCost::new(2, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceConfig {
    pub costs: ActionCosts,
    pub eat_amount: Units,
    pub stomach_capacity: Units,
    pub base_biomass: Units,
    pub child_energy: Units,
    pub child_water: Units,
    /// Mean biomass per cell; the world total is this times the cell count.
    pub biomass_per_cell: Units,
    /// Mean initial free energy per cell.
    pub energy_per_cell: Units,
    /// Granularity of the initial random scatter.
    pub scatter_quantum: Units,
    pub energy_growth_rate: Units,
    pub energy_cap: Units,
    pub water_flow_rate: Units,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        Self {
            costs: ActionCosts::default(),
            eat_amount: 32,
            stomach_capacity: 256,
            base_biomass: 128,
            child_energy: 64,
            child_water: 64,
            biomass_per_cell: 64,
            energy_per_cell: 32,
            scatter_quantum: 32,
            energy_growth_rate: 1,
            energy_cap: 256,
            water_flow_rate: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthConfig {
    pub max_hp: f32,
    pub starvation_damage: f32,
    pub recovery_rate: f32,
    pub age_onset: u32,
    pub age_slope: f32,
}

impl Default for HealthConfig {
    fn default() -> Self {
        Self {
            max_hp: 100.0,
            starvation_damage: 5.0,
            recovery_rate: 0.5,
            age_onset: 2_000,
            age_slope: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_width: usize,
    pub mutation_std: f32,
    pub min_temperature: f32,
    pub max_temperature: f32,
    /// Optional explicit head width; must match the width implied by
    /// `attack_enabled` when given.
    pub action_count: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            mutation_std: 3e-2,
            min_temperature: 0.05,
            max_temperature: 5.0,
            action_count: None,
        }
    }
}

/// Colors used by the vision renderer and the map image export. All
/// channels are in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    pub land_gray_low: f32,
    pub land_gray_high: f32,
    pub shallow_water: [f32; 3],
    pub deep_water: [f32; 3],
    /// Depth (height units) at which water reaches `deep_water`.
    pub deep_water_depth: f64,
    pub energy_tint: f32,
    pub biomass_tint: f32,
    pub wall: [f32; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            land_gray_low: 0.35,
            land_gray_high: 0.8,
            shallow_water: [0.25, 0.45, 0.8],
            deep_water: [0.02, 0.1, 0.45],
            deep_water_depth: 4.0,
            energy_tint: 0.5,
            biomass_tint: 0.5,
            wall: [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Age (steps) mapped to the top of the internal age sensor.
    pub age_scale: u32,
    /// Height difference (height units) that saturates the elevation channel.
    pub elevation_scale: f64,
    pub palette: Palette,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            age_scale: 10_000,
            elevation_scale: 4.0,
            palette: Palette::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Steps between metric samples.
    pub cadence: u64,
    /// Moving-average window (samples) for the mining detector.
    pub smoothing_window: usize,
    /// Cells with less water than this count as dry land.
    pub dry_threshold: Units,
    pub mining_threshold: f64,
    /// Onsets are rounded to a multiple of this many steps.
    pub onset_rounding: u64,
    /// Progress line to stderr every this many steps (0 = off).
    pub heartbeat_every: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cadence: 100,
            smoothing_window: 50,
            dry_threshold: 8,
            mining_threshold: 0.10,
            onset_rounding: 5_000,
            heartbeat_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub grid_size: usize,
    pub terrain: TerrainKind,
    /// Height units.
    pub sea_level: f64,
    /// Height span of the macro terrain shape, in height units.
    pub terrain_relief: f64,
    /// Noise amplitude as a fraction of the relief.
    pub roughness: f64,
    pub sensors: SensorSet,
    pub attack_enabled: bool,
    pub max_population: usize,
    pub initial_population: usize,
    pub steps: u64,
    pub seed: u64,
    pub resources: ResourceConfig,
    pub health: HealthConfig,
    pub policy: PolicyConfig,
    pub sensing: SensingConfig,
    pub metrics: MetricsConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            grid_size: 64,
            terrain: TerrainKind::Beach,
            sea_level: 8.0,
            terrain_relief: 16.0,
            roughness: 0.08,
            sensors: SensorSet::RC,
            attack_enabled: false,
            max_population: 512,
            initial_population: 128,
            steps: 10_000,
            seed: 0,
            resources: ResourceConfig::default(),
            health: HealthConfig::default(),
            policy: PolicyConfig::default(),
            sensing: SensingConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn cell_count(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn sea_level_units(&self) -> Units {
        height_to_units(self.sea_level)
    }

    pub fn biomass_budget(&self) -> Units {
        self.resources.biomass_per_cell * self.cell_count() as Units
    }

    pub fn energy_budget(&self) -> Units {
        self.resources.energy_per_cell * self.cell_count() as Units
    }

    /// Number of discrete actions the policy head produces.
    pub fn action_count(&self) -> usize {
        if self.attack_enabled {
            9
        } else {
            8
        }
    }

    /// Stores given to each agent of the starting population (half full).
    pub fn initial_store(&self) -> Units {
        self.resources.stomach_capacity / 2
    }

    /// Biomass embodied by one agent of the starting population.
    pub fn initial_agent_biomass(&self) -> Units {
        self.resources.base_biomass + self.initial_store()
    }
}

fn positive_units(field: &str, v: Units) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be > 0, got {v}")))
    }
}

fn positive_f(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

/// Checks every config invariant and returns the config unchanged on success.
pub fn validate_config(raw: SimConfig) -> Result<SimConfig, ConfigError> {
    let c = &raw;
    if c.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::new(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {}", c.schema_version),
        ));
    }
    if !c.grid_size.is_power_of_two() || !(16..=1024).contains(&c.grid_size) {
        return Err(ConfigError::new(
            "grid_size",
            format!("must be a power of two in 16..=1024, got {}", c.grid_size),
        ));
    }
    if c.max_population == 0 || c.max_population > c.cell_count() {
        return Err(ConfigError::new(
            "max_population",
            format!(
                "must be in 1..={} (grid cells), got {}",
                c.cell_count(),
                c.max_population
            ),
        ));
    }
    if c.initial_population > c.max_population {
        return Err(ConfigError::new(
            "initial_population",
            format!(
                "{} exceeds max_population {}",
                c.initial_population, c.max_population
            ),
        ));
    }
    if c.max_population > u32::MAX as usize - 1 {
        return Err(ConfigError::new("max_population", "too large"));
    }
    positive_f("sea_level", c.sea_level)?;
    positive_f("terrain_relief", c.terrain_relief)?;
    if !(0.0..0.2).contains(&c.roughness) {
        return Err(ConfigError::new(
            "roughness",
            format!("must be in [0, 0.2), got {}", c.roughness),
        ));
    }

    let r = &c.resources;
    for (name, cost) in [
        ("rest", r.costs.rest),
        ("movement", r.costs.movement),
        ("attack", r.costs.attack),
        ("eat", r.costs.eat),
        ("reproduce", r.costs.reproduce),
    ] {
        positive_units(&format!("resources.costs.{name}.energy"), cost.energy)?;
        positive_units(&format!("resources.costs.{name}.water"), cost.water)?;
    }
    positive_units("resources.eat_amount", r.eat_amount)?;
    positive_units("resources.stomach_capacity", r.stomach_capacity)?;
    positive_units("resources.base_biomass", r.base_biomass)?;
    positive_units("resources.child_energy", r.child_energy)?;
    positive_units("resources.child_water", r.child_water)?;
    positive_units("resources.biomass_per_cell", r.biomass_per_cell)?;
    positive_units("resources.energy_per_cell", r.energy_per_cell)?;
    positive_units("resources.scatter_quantum", r.scatter_quantum)?;
    positive_units("resources.energy_growth_rate", r.energy_growth_rate)?;
    positive_units("resources.energy_cap", r.energy_cap)?;
    positive_units("resources.water_flow_rate", r.water_flow_rate)?;
    if r.child_energy > r.stomach_capacity || r.child_water > r.stomach_capacity {
        return Err(ConfigError::new(
            "resources.child_energy",
            "child endowment cannot exceed stomach capacity",
        ));
    }
    let agents_biomass = c.initial_population as Units * c.initial_agent_biomass();
    if agents_biomass > c.biomass_budget() {
        return Err(ConfigError::new(
            "resources.biomass_per_cell",
            format!(
                "biomass budget {} cannot cover the starting population ({agents_biomass})",
                c.biomass_budget()
            ),
        ));
    }

    let h = &c.health;
    positive_f("health.max_hp", h.max_hp as f64)?;
    positive_f("health.starvation_damage", h.starvation_damage as f64)?;
    positive_f("health.recovery_rate", h.recovery_rate as f64)?;
    positive_f("health.age_slope", h.age_slope as f64)?;
    if h.age_onset == 0 {
        return Err(ConfigError::new("health.age_onset", "must be > 0"));
    }

    let p = &c.policy;
    if p.hidden_width == 0 {
        return Err(ConfigError::new("policy.hidden_width", "must be > 0"));
    }
    positive_f("policy.mutation_std", p.mutation_std as f64)?;
    positive_f("policy.min_temperature", p.min_temperature as f64)?;
    if !(p.min_temperature <= 1.0 && 1.0 <= p.max_temperature) {
        return Err(ConfigError::new(
            "policy.max_temperature",
            "temperature bounds must satisfy min <= 1 <= max",
        ));
    }
    if let Some(n) = p.action_count {
        if n != c.action_count() {
            return Err(ConfigError::new(
                "policy.action_count",
                format!(
                    "{n} does not match the {} actions implied by attack_enabled={}",
                    c.action_count(),
                    c.attack_enabled
                ),
            ));
        }
    }

    if c.sensing.age_scale == 0 {
        return Err(ConfigError::new("sensing.age_scale", "must be > 0"));
    }
    positive_f("sensing.elevation_scale", c.sensing.elevation_scale)?;
    positive_f(
        "sensing.palette.deep_water_depth",
        c.sensing.palette.deep_water_depth,
    )?;

    let m = &c.metrics;
    if m.cadence == 0 {
        return Err(ConfigError::new("metrics.cadence", "must be > 0"));
    }
    if m.smoothing_window == 0 {
        return Err(ConfigError::new("metrics.smoothing_window", "must be > 0"));
    }
    if m.dry_threshold < 0 {
        return Err(ConfigError::new("metrics.dry_threshold", "must be >= 0"));
    }
    if !(m.mining_threshold > 0.0 && m.mining_threshold < 1.0) {
        return Err(ConfigError::new(
            "metrics.mining_threshold",
            "must be in (0, 1)",
        ));
    }
    if m.onset_rounding == 0 {
        return Err(ConfigError::new("metrics.onset_rounding", "must be > 0"));
    }
    Ok(raw)
}

/// Scales a reference population by the ratio of grid areas.
pub fn scale_initial_population(
    grid_size: usize,
    reference_size: usize,
    reference_pop: usize,
) -> Result<usize> {
    if reference_size == 0 {
        return Err(Error::ZeroReferenceSize);
    }
    let area = (grid_size * grid_size) as f64;
    let reference_area = (reference_size * reference_size) as f64;
    Ok((reference_pop as f64 * area / reference_area).round() as usize)
}

/// Grid size and population the preset populations are scaled from.
pub const PRESET_REFERENCE_SIZE: usize = 512;
pub const PRESET_REFERENCE_POPULATION: usize = 8192;

/// Names of all bundled presets.
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for size in [64, 128, 256, 512, 1024] {
        for s in [SensorSet::R, SensorSet::RC] {
            names.push(format!("beach_{}_{size}", s.name()));
        }
    }
    for t in [
        TerrainKind::Island,
        TerrainKind::Lake,
        TerrainKind::Isthmus,
        TerrainKind::Channel,
    ] {
        for s in [SensorSet::R, SensorSet::RC] {
            names.push(format!("{}_{}_512", t.name(), s.name()));
        }
    }
    for size in [128, 256, 512, 1024] {
        for s in [SensorSet::RC, SensorSet::RCV] {
            names.push(format!("ocean_{}_attack_{size}", s.name()));
        }
    }
    names
}

/// Builds a bundled preset. Names follow `<terrain>_<sensors>[_attack]_<size>`.
pub fn preset(name: &str) -> Result<SimConfig> {
    let unknown = || Error::UnknownPreset(name.to_string());
    if !preset_names().iter().any(|n| n == name) {
        return Err(unknown());
    }
    let parts: Vec<&str> = name.split('_').collect();
    let terrain: TerrainKind = parts[0].parse().map_err(|_| unknown())?;
    let sensors = match parts[1] {
        "r" => SensorSet::R,
        "rc" => SensorSet::RC,
        "rcv" => SensorSet::RCV,
        _ => return Err(unknown()),
    };
    let attack_enabled = parts.len() == 4 && parts[2] == "attack";
    let grid_size: usize = parts[parts.len() - 1].parse().map_err(|_| unknown())?;
    let initial_population = scale_initial_population(
        grid_size,
        PRESET_REFERENCE_SIZE,
        PRESET_REFERENCE_POPULATION,
    )?;
    let cfg = SimConfig {
        grid_size,
        terrain,
        sensors,
        attack_enabled,
        initial_population,
        max_population: initial_population * 4,
        steps: 2_000_000,
        ..SimConfig::default()
    };
    Ok(validate_config(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sized_config_is_accepted() {
        let cfg = SimConfig {
            grid_size: 256,
            initial_population: 2048,
            max_population: 8192,
            ..SimConfig::default()
        };
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn population_order_is_enforced() {
        let cfg = SimConfig {
            initial_population: 10,
            max_population: 5,
            ..SimConfig::default()
        };
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.field, "initial_population");
    }

    #[test]
    fn zero_mutation_std_rejected() {
        let mut cfg = SimConfig::default();
        cfg.policy.mutation_std = 0.0;
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.field, "policy.mutation_std");
    }

    #[test]
    fn nonpositive_constants_rejected() {
        let mut cfg = SimConfig::default();
        cfg.resources.costs.attack.water = 0;
        assert_eq!(
            validate_config(cfg).unwrap_err().field,
            "resources.costs.attack.water"
        );
        let mut cfg = SimConfig::default();
        cfg.health.starvation_damage = -1.0;
        assert_eq!(
            validate_config(cfg).unwrap_err().field,
            "health.starvation_damage"
        );
    }

    #[test]
    fn grid_size_must_be_power_of_two_in_range() {
        for bad in [8, 48, 2048] {
            let cfg = SimConfig {
                grid_size: bad,
                ..SimConfig::default()
            };
            assert_eq!(validate_config(cfg).unwrap_err().field, "grid_size");
        }
    }

    #[test]
    fn action_count_mismatch_rejected() {
        let mut cfg = SimConfig {
            attack_enabled: true,
            ..SimConfig::default()
        };
        cfg.policy.action_count = Some(8);
        assert_eq!(
            validate_config(cfg.clone()).unwrap_err().field,
            "policy.action_count"
        );
        cfg.policy.action_count = Some(9);
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn population_scaling() {
        assert_eq!(scale_initial_population(1024, 512, 8192).unwrap(), 32768);
        assert_eq!(scale_initial_population(512, 512, 8192).unwrap(), 8192);
        assert_eq!(scale_initial_population(64, 512, 8192).unwrap(), 128);
        assert_eq!(scale_initial_population(256, 512, 8192).unwrap(), 2048);
        assert!(matches!(
            scale_initial_population(64, 0, 8192),
            Err(Error::ZeroReferenceSize)
        ));
    }

    #[test]
    fn every_preset_validates() {
        for name in preset_names() {
            let cfg = preset(&name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.max_population, cfg.initial_population * 4);
        }
        let beach = preset("beach_rc_256").unwrap();
        assert_eq!(
            (
                beach.grid_size,
                beach.terrain,
                beach.sensors,
                beach.initial_population
            ),
            (256, TerrainKind::Beach, SensorSet::RC, 2048)
        );
        let ocean = preset("ocean_rcv_attack_128").unwrap();
        assert_eq!(
            (
                ocean.grid_size,
                ocean.sensors,
                ocean.attack_enabled,
                ocean.initial_population
            ),
            (128, SensorSet::RCV, true, 512)
        );
        assert!(matches!(
            preset("beach_rc_100"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn sensor_set_ordering() {
        assert!(!SensorSet::R.has_compass());
        assert!(SensorSet::RC.has_compass() && !SensorSet::RC.has_vision());
        assert!(SensorSet::RCV.has_compass() && SensorSet::RCV.has_vision());
    }
}
