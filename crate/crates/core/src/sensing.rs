//! Agent observations and the shared cell renderer.
//!
//! Observations are flat `f32` vectors laid out as
//! `internal(5) | external(3) | compass(4)? | vision(196)?`, every value in
//! `[-1, 1]`. Vision is egocentric: the top row of the patch is the row in
//! front of the agent.

use crate::config::{height_to_units, SimConfig, Units};
use crate::error::{Error, Result};
use crate::policy::{
    Sensor, COMPASS_WIDTH, EXTERNAL_WIDTH, INTERNAL_WIDTH, VISION_CHANNELS, VISION_SIDE,
    VISION_WIDTH,
};
use crate::world::{AgentId, AgentRecord, Cell, WorldState, EMPTY};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    values: Vec<f32>,
    has_compass: bool,
    has_vision: bool,
}

impl Observation {
    /// Wraps an already-flattened observation. The length must match the
    /// sensor flags.
    pub fn from_parts(values: Vec<f32>, has_compass: bool, has_vision: bool) -> Self {
        Self {
            values,
            has_compass,
            has_vision,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slice for one sensor; empty when the sensor is absent.
    pub fn sensor(&self, sensor: Sensor) -> &[f32] {
        let compass = if self.has_compass { COMPASS_WIDTH } else { 0 };
        let vision = if self.has_vision { VISION_WIDTH } else { 0 };
        let (start, len) = match sensor {
            Sensor::Internal => (0, INTERNAL_WIDTH),
            Sensor::External => (INTERNAL_WIDTH, EXTERNAL_WIDTH),
            Sensor::Compass => (INTERNAL_WIDTH + EXTERNAL_WIDTH, compass),
            Sensor::Vision => (INTERNAL_WIDTH + EXTERNAL_WIDTH + compass, vision),
        };
        self.values.get(start..start + len).unwrap_or(&[])
    }

    pub fn internal(&self) -> &[f32] {
        self.sensor(Sensor::Internal)
    }

    pub fn external(&self) -> &[f32] {
        self.sensor(Sensor::External)
    }

    pub fn compass(&self) -> &[f32] {
        self.sensor(Sensor::Compass)
    }

    pub fn vision(&self) -> &[f32] {
        self.sensor(Sensor::Vision)
    }
}

/// Maps `value / scale` clamped to `[0, 1]` onto `[-1, 1]`.
#[inline]
fn signed_unit(value: f64, scale: f64) -> f32 {
    ((value / scale).clamp(0.0, 1.0) * 2.0 - 1.0) as f32
}

/// Appends the observation of `agent` to `out` without validity checks.
pub fn build_observation_into(
    world: &WorldState,
    id: AgentId,
    cfg: &SimConfig,
    out: &mut Vec<f32>,
) {
    let a = world.agents.get(id);
    let cap = cfg.resources.stomach_capacity as f64;
    out.push(signed_unit(a.age as f64, cfg.sensing.age_scale as f64));
    out.push(signed_unit(a.hp as f64, cfg.health.max_hp as f64));
    out.push(signed_unit(a.store_water as f64, cap));
    out.push(signed_unit(a.store_energy as f64, cap));
    out.push(signed_unit(a.store_biomass as f64, cap));

    let i = a.pos.index(world.size());
    out.push(signed_unit(world.map.water[i] as f64, cap));
    out.push(signed_unit(world.map.energy[i] as f64, cap));
    out.push(signed_unit(world.map.biomass[i] as f64, cap));

    if cfg.sensors.has_compass() {
        let mut compass = [0.0f32; COMPASS_WIDTH];
        compass[a.orientation.index()] = 1.0;
        out.extend_from_slice(&compass);
    }
    if cfg.sensors.has_vision() {
        let start = out.len();
        out.resize(start + VISION_WIDTH, 0.0);
        write_vision_patch(world, a, cfg, &mut out[start..]);
    }
}

/// Observation of a live agent.
pub fn build_observation(world: &WorldState, id: AgentId, cfg: &SimConfig) -> Result<Observation> {
    if id.index() >= world.agents.capacity() || !world.agents.get(id).alive {
        return Err(Error::DeadAgent(id.0));
    }
    let mut values =
        Vec::with_capacity(INTERNAL_WIDTH + EXTERNAL_WIDTH + COMPASS_WIDTH + VISION_WIDTH);
    build_observation_into(world, id, cfg, &mut values);
    Ok(Observation::from_parts(
        values,
        cfg.sensors.has_compass(),
        cfg.sensors.has_vision(),
    ))
}

/// Color of a map cell in `[0, 1]^3`, including any agent standing on it.
pub fn cell_color(world: &WorldState, cfg: &SimConfig, i: usize) -> [f32; 3] {
    let occupant = world.map.occupancy[i];
    if occupant != EMPTY {
        return world.agents.get(AgentId(occupant)).color;
    }
    terrain_color(world, cfg, i)
}

/// Terrain plus resource tint, ignoring agents.
pub fn terrain_color(world: &WorldState, cfg: &SimConfig, i: usize) -> [f32; 3] {
    let p = &cfg.sensing.palette;
    let m = &world.map;
    let water = m.water[i];
    let mut rgb = if water > cfg.metrics.dry_threshold {
        let depth = (water as f64 / height_to_units(p.deep_water_depth) as f64).min(1.0) as f32;
        std::array::from_fn(|k| p.shallow_water[k] + (p.deep_water[k] - p.shallow_water[k]) * depth)
    } else {
        let relief = height_to_units(cfg.terrain_relief) as f64;
        let h = (m.rock[i] as f64 / relief).clamp(0.0, 1.0) as f32;
        [p.land_gray_low + (p.land_gray_high - p.land_gray_low) * h; 3]
    };
    let energy = (m.energy[i] as f32 / cfg.resources.energy_cap as f32).min(1.0) * p.energy_tint;
    let biomass =
        (m.biomass[i] as f32 / cfg.resources.stomach_capacity as f32).min(1.0) * p.biomass_tint;
    rgb[0] += biomass;
    rgb[1] += energy + biomass;
    rgb.map(|c| c.clamp(0.0, 1.0))
}

fn write_vision_patch(world: &WorldState, agent: &AgentRecord, cfg: &SimConfig, out: &mut [f32]) {
    let size = world.size();
    let (fx, fy) = agent.orientation.forward();
    let (rx, ry) = agent.orientation.right();
    let here = world.map.surface(agent.pos.index(size));
    let scale = height_to_units(cfg.sensing.elevation_scale) as f64;
    let wall = cfg.sensing.palette.wall;
    let half = (VISION_SIDE / 2) as i32;
    for r in 0..VISION_SIDE {
        let ahead = half - r as i32;
        for c in 0..VISION_SIDE {
            let lateral = c as i32 - half;
            let dx = ahead * fx + lateral * rx;
            let dy = ahead * fy + lateral * ry;
            let px = &mut out[(r * VISION_SIDE + c) * VISION_CHANNELS..][..VISION_CHANNELS];
            match agent.pos.offset(dx, dy, size) {
                Some(cell) => {
                    let i = cell.index(size);
                    let rgb = cell_color(world, cfg, i);
                    let dh: Units = world.map.surface(i) - here;
                    px[0] = rgb[0] * 2.0 - 1.0;
                    px[1] = rgb[1] * 2.0 - 1.0;
                    px[2] = rgb[2] * 2.0 - 1.0;
                    px[3] = (dh as f64 / scale).clamp(-1.0, 1.0) as f32;
                }
                None => {
                    px[0] = wall[0] * 2.0 - 1.0;
                    px[1] = wall[1] * 2.0 - 1.0;
                    px[2] = wall[2] * 2.0 - 1.0;
                    px[3] = 1.0;
                }
            }
        }
    }
}

/// The 7×7×4 egocentric patch, indexed `[(row * 7 + col) * 4 + channel]`.
pub fn render_vision_patch(world: &WorldState, id: AgentId, cfg: &SimConfig) -> Result<Vec<f32>> {
    if !cfg.sensors.has_vision() {
        return Err(Error::VisionDisabled);
    }
    if id.index() >= world.agents.capacity() || !world.agents.get(id).alive {
        return Err(Error::DeadAgent(id.0));
    }
    let mut out = vec![0.0; VISION_WIDTH];
    write_vision_patch(world, world.agents.get(id), cfg, &mut out);
    Ok(out)
}

/// Full-map render in `[0, 1]^3`, row-major.
pub fn render_map(world: &WorldState, cfg: &SimConfig) -> Vec<[f32; 3]> {
    (0..world.map.cell_count())
        .map(|i| cell_color(world, cfg, i))
        .collect()
}

/// Cell coordinates covered by a vision patch, for tests and debugging.
pub fn patch_cell(agent: &AgentRecord, row: usize, col: usize, size: usize) -> Option<Cell> {
    let half = (VISION_SIDE / 2) as i32;
    let (fx, fy) = agent.orientation.forward();
    let (rx, ry) = agent.orientation.right();
    let ahead = half - row as i32;
    let lateral = col as i32 - half;
    agent
        .pos
        .offset(ahead * fx + lateral * rx, ahead * fy + lateral * ry, size)
}
