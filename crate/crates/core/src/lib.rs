//! Deterministic grid-world ecology simulator.
//!
//! Agents with small neural policies forage, reproduce and die on a
//! procedurally generated heightfield with flowing water. Policies evolve by
//! mutation only. Every resource is a fixed-point integer, so biomass and
//! water are conserved exactly, and every random draw comes from a
//! counter-based stream, so runs are reproducible for any thread count.

pub mod config;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod reference;
pub mod rng;
pub mod sensing;
pub mod snapshot;
pub mod terrain;
pub mod world;

pub use config::{preset, preset_names, validate_config, SensorSet, SimConfig, TerrainKind, Units};
pub use dynamics::{Action, ActionIntent, DeathCause};
pub use engine::{run_episode, run_episode_collect, step, Simulation, StepTrace, Termination};
pub use error::{ConfigError, Error, Result};
pub use metrics::{
    detect_extinction, detect_mining_events, record_metrics, summarize_runs, EventReport,
    MetricsRecord, MiningDetector, MiningEvent,
};
pub use policy::{count_parameters, PolicyArch, PolicyPool};
pub use snapshot::{load_snapshot, save_snapshot, state_digest};
pub use world::{init_world, AgentId, Cell, Orientation, WorldState};
