//! Config files and image export.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::config::{validate_config, SimConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::sensing::render_map;
use crate::world::WorldState;

/// Parses and validates a JSON config. Unknown keys are rejected; missing
/// keys take their defaults.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = value.get("schema_version") {
        let found = v.as_u64().unwrap_or(u64::MAX);
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found.min(u32::MAX as u64) as u32,
                expected: SCHEMA_VERSION,
            });
        }
    }
    // Re-parse from text so that errors carry line and column.
    let cfg: SimConfig = serde_json::from_str(text)?;
    Ok(validate_config(cfg)?)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn save_config(path: impl AsRef<Path>, cfg: &SimConfig) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// 8-bit RGB image of the map, one pixel per cell, agents in their colors.
pub fn map_image(world: &WorldState, cfg: &SimConfig) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let size = world.size() as u32;
    let pixels = render_map(world, cfg);
    ImageBuffer::from_fn(size, size, |x, y| {
        let c = pixels[(y * size + x) as usize];
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn render_map_image(world: &WorldState, cfg: &SimConfig, path: impl AsRef<Path>) -> Result<()> {
    map_image(world, cfg).save(path)?;
    Ok(())
}

/// 16-bit grayscale heightfield of the rock layer, scaled so the highest
/// cell is white.
pub fn heightfield_image(world: &WorldState) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let size = world.size() as u32;
    let rock = &world.map.rock;
    let max = rock.iter().copied().max().unwrap_or(0).max(1) as f64;
    ImageBuffer::from_fn(size, size, |x, y| {
        let h = rock[(y * size + x) as usize] as f64 / max;
        Luma([(h * u16::MAX as f64).round() as u16])
    })
}

pub fn write_heightfield_png(world: &WorldState, path: impl AsRef<Path>) -> Result<()> {
    heightfield_image(world).save(path)?;
    Ok(())
}
