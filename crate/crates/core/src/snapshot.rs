//! Binary snapshots and the canonical state encoding behind the digest.
//!
//! File layout (little-endian): magic `ECOS`, format version `u32`, config
//! JSON length `u64`, config JSON, canonical state, then a `u64` checksum
//! taken from the SHA-256 of everything before it.
//!
//! The canonical state stores only live agents and their policies, so two
//! worlds that differ only in the leftovers of freed slots encode alike.

use std::fs;
use std::path::Path;

use half::bf16;
use sha2::{Digest, Sha256};

use crate::config::{validate_config, SimConfig, Units};
use crate::error::{Error, Result};
use crate::policy::{PolicyArch, PolicyParams, PolicyPool};
use crate::rng::CounterRng;
use crate::world::{
    AgentId, AgentRecord, AgentTable, Cell, ConservationTotals, GridLayers, Orientation, WorldState,
};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"ECOS";
pub const SNAPSHOT_VERSION: u32 = 1;

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.u32(v.to_bits());
    }
    fn units(&mut self, vs: &[Units]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.i64(v);
        }
    }
}

/// Appends the canonical encoding of `(world, pool)` to `buf`.
pub fn encode_state(world: &WorldState, pool: &PolicyPool, buf: &mut Vec<u8>) {
    let mut e = Encoder {
        buf: std::mem::take(buf),
    };
    e.u64(world.step);
    e.u64(world.rng.seed());
    e.i64(world.reference_totals.biomass);
    e.i64(world.reference_totals.water);

    let m = &world.map;
    e.u64(m.size as u64);
    e.units(&m.rock);
    e.units(&m.water);
    e.units(&m.energy);
    e.units(&m.biomass);
    for &o in &m.occupancy {
        e.u32(o);
    }

    let t = &world.agents;
    e.u64(t.capacity() as u64);
    e.u64(t.next_uid());
    for a in t.slots() {
        e.u8(a.alive as u8);
        if !a.alive {
            continue;
        }
        e.u64(a.uid);
        e.u32(a.pos.x);
        e.u32(a.pos.y);
        e.u8(a.orientation.index() as u8);
        e.f32(a.hp);
        e.u32(a.age);
        e.i64(a.store_water);
        e.i64(a.store_energy);
        e.i64(a.store_biomass);
        for c in a.color {
            e.f32(c);
        }
        match a.parent {
            Some(p) => {
                e.u8(1);
                e.u64(p);
            }
            None => e.u8(0),
        }
        e.u64(a.birth_step);
    }

    e.u64(pool.arch().weight_count() as u64);
    for (id, _) in t.iter_live() {
        let p = pool.get(id);
        e.f32(p.log_temperature);
        e.buf.reserve(p.weights.len() * 2);
        for w in p.weights {
            e.buf.extend_from_slice(&w.to_bits().to_le_bytes());
        }
    }
    *buf = e.buf;
}

/// 128-bit digest of the canonical state: layers, agents, live policies,
/// RNG seed and step.
pub fn state_digest(world: &WorldState, pool: &PolicyPool) -> u128 {
    let mut buf = Vec::new();
    encode_state(world, pool, &mut buf);
    let hash = Sha256::digest(&buf);
    u128::from_le_bytes(hash[..16].try_into().expect("sha-256 is 32 bytes"))
}

fn checksum(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    u64::from_le_bytes(hash[..8].try_into().expect("sha-256 is 32 bytes"))
}

/// Full snapshot file contents.
pub fn encode_snapshot(cfg: &SimConfig, world: &WorldState, pool: &PolicyPool) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(cfg)?;
    let mut buf = Vec::with_capacity(json.len() + 64);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    encode_state(world, pool, &mut buf);
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

pub fn save_snapshot(
    path: impl AsRef<Path>,
    cfg: &SimConfig,
    world: &WorldState,
    pool: &PolicyPool,
) -> Result<()> {
    let bytes = encode_snapshot(cfg, world, pool)?;
    let path = path.as_ref();
    let tmp = path.with_extension("snap.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::MalformedSnapshot(format!("unexpected end at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
    fn units(&mut self, n: usize) -> Result<Vec<Units>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| malformed("layer size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedSnapshot(msg.into())
}

fn decode_state(d: &mut Decoder<'_>, cfg: &SimConfig) -> Result<(WorldState, PolicyPool)> {
    let step = d.u64()?;
    let seed = d.u64()?;
    let reference_totals = ConservationTotals {
        biomass: d.i64()?,
        water: d.i64()?,
    };
    let size = d.u64()? as usize;
    if size != cfg.grid_size {
        return Err(malformed(format!(
            "grid size {size} does not match config {}",
            cfg.grid_size
        )));
    }
    let n = size * size;
    let mut map = GridLayers::new(size);
    map.rock = d.units(n)?;
    map.water = d.units(n)?;
    map.energy = d.units(n)?;
    map.biomass = d.units(n)?;
    for o in map.occupancy.iter_mut() {
        *o = d.u32()?;
    }

    let capacity = d.u64()? as usize;
    if capacity != cfg.max_population {
        return Err(malformed("agent capacity does not match config"));
    }
    let next_uid = d.u64()?;
    let mut slots = Vec::with_capacity(capacity);
    for _ in 0..capacity {
        if d.u8()? == 0 {
            slots.push(AgentRecord::default());
            continue;
        }
        let uid = d.u64()?;
        let pos = Cell::new(d.u32()?, d.u32()?);
        if pos.x as usize >= size || pos.y as usize >= size {
            return Err(malformed("agent outside the map"));
        }
        let orientation = Orientation::from_index(d.u8()? as usize);
        let hp = d.f32()?;
        let age = d.u32()?;
        let store_water = d.i64()?;
        let store_energy = d.i64()?;
        let store_biomass = d.i64()?;
        let color = [d.f32()?, d.f32()?, d.f32()?];
        let parent = match d.u8()? {
            0 => None,
            _ => Some(d.u64()?),
        };
        let birth_step = d.u64()?;
        slots.push(AgentRecord {
            alive: true,
            uid,
            pos,
            orientation,
            hp,
            age,
            store_water,
            store_energy,
            store_biomass,
            color,
            parent,
            birth_step,
        });
    }
    let agents = AgentTable::from_slots(slots, next_uid);

    let arch = PolicyArch::from_config(cfg);
    let stride = d.u64()? as usize;
    if stride != arch.weight_count() {
        return Err(malformed(format!(
            "policy has {stride} weights, architecture expects {}",
            arch.weight_count()
        )));
    }
    let mut pool = PolicyPool::new(arch, capacity);
    let mut params = PolicyParams::zeros(pool.arch());
    let live: Vec<AgentId> = agents.live_ids();
    for id in live {
        params.log_temperature = d.f32()?;
        let raw = d.take(stride * 2)?;
        for (w, c) in params.weights.iter_mut().zip(raw.chunks_exact(2)) {
            *w = bf16::from_bits(u16::from_le_bytes([c[0], c[1]]));
        }
        pool.set(id, &params);
    }

    let world = WorldState {
        step,
        map,
        agents,
        rng: CounterRng::new(seed),
        reference_totals,
    };
    if !world.check_occupancy() {
        return Err(malformed("occupancy layer disagrees with agent positions"));
    }
    Ok((world, pool))
}

/// Parses snapshot bytes. The checksum is verified before anything else is
/// trusted, so truncation is reported as [`Error::Checksum`].
pub fn decode_snapshot(bytes: &[u8]) -> Result<(SimConfig, WorldState, PolicyPool)> {
    if bytes.len() >= 4 && &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 4 + 4 + 8 + 8 {
        return Err(Error::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum);
    }
    let mut d = Decoder {
        bytes: body,
        pos: 4,
    };
    let version = d.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::SnapshotVersion(version));
    }
    let json_len = d.u64()? as usize;
    let cfg: SimConfig = serde_json::from_slice(d.take(json_len)?)?;
    let cfg = validate_config(cfg)?;
    let (world, pool) = decode_state(&mut d, &cfg)?;
    if d.pos != body.len() {
        return Err(malformed("trailing bytes after state"));
    }
    Ok((cfg, world, pool))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<(SimConfig, WorldState, PolicyPool)> {
    decode_snapshot(&fs::read(path)?)
}
