//! Terrain generation, water initialization, the per-step water flow and
//! the initial resource scatter.

use rayon::prelude::*;

use crate::config::{height_to_units, SimConfig, TerrainKind, Units};
use crate::error::{Error, Result};
use crate::rng::{lattice_hash, CounterRng, Domain};
use crate::world::GridLayers;

const NOISE_OCTAVES: u32 = 4;
/// Lattice cells per side for the coarsest noise octave.
const NOISE_BASE_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainSpec {
    pub kind: TerrainKind,
    /// Noise amplitude as a fraction of `relief`.
    pub roughness: f64,
    pub sea_level: Units,
    pub relief: Units,
    pub noise_seed: u64,
}

impl TerrainSpec {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            kind: cfg.terrain,
            roughness: cfg.roughness,
            sea_level: cfg.sea_level_units(),
            relief: height_to_units(cfg.terrain_relief),
            noise_seed: lattice_hash(cfg.seed, Domain::TerrainNoise as u64, 0, 0),
        }
    }
}

/// Macro shape as an offset from sea level, in fractions of the relief.
/// `u` runs west to east and `v` north to south, both in `(0, 1)`.
fn macro_offset(kind: TerrainKind, u: f64, v: f64) -> f64 {
    let radial = 2.0 * ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
    match kind {
        TerrainKind::Ocean => -0.25,
        TerrainKind::Beach => u - 0.5,
        TerrainKind::Island => 0.35 - 0.6 * radial,
        TerrainKind::Lake => -0.3 + 0.6 * radial,
        TerrainKind::Isthmus => 0.3 - 0.6 * (2.0 * u - 1.0).abs(),
        TerrainKind::Channel => -0.3 + 0.6 * (2.0 * v - 1.0).abs(),
    }
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice_value(seed: u64, octave: u32, ix: usize, iy: usize) -> f64 {
    let h = lattice_hash(seed, octave as u64, ix as u64, iy as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Multi-octave value noise in `[-1, 1]`.
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let mut total = 0.0;
    let mut amplitude = 1.0;
    let mut norm = 0.0;
    for octave in 0..NOISE_OCTAVES {
        let cells = (NOISE_BASE_CELLS << octave) as f64;
        let (fx, fy) = (u * cells, v * cells);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (smoothstep(fx - ix as f64), smoothstep(fy - iy as f64));
        let v00 = lattice_value(seed, octave, ix, iy);
        let v10 = lattice_value(seed, octave, ix + 1, iy);
        let v01 = lattice_value(seed, octave, ix, iy + 1);
        let v11 = lattice_value(seed, octave, ix + 1, iy + 1);
        let top = v00 + (v10 - v00) * tx;
        let bottom = v01 + (v11 - v01) * tx;
        total += amplitude * (top + (bottom - top) * ty);
        norm += amplitude;
        amplitude *= 0.5;
    }
    total / norm
}

/// Rock heights for a `size`×`size` map, row-major. Pure in `(spec, size)`.
pub fn generate_rock(spec: &TerrainSpec, size: usize) -> Result<Vec<Units>> {
    if size < 16 {
        return Err(Error::GridTooSmall(size));
    }
    let relief = spec.relief as f64;
    let rock = (0..size * size)
        .into_par_iter()
        .map(|i| {
            let u = ((i % size) as f64 + 0.5) / size as f64;
            let v = ((i / size) as f64 + 0.5) / size as f64;
            let mut offset = macro_offset(spec.kind, u, v);
            if spec.roughness > 0.0 {
                offset += spec.roughness * value_noise(spec.noise_seed, u, v);
            }
            (spec.sea_level + (relief * offset).round() as Units).max(0)
        })
        .collect();
    Ok(rock)
}

/// Fills every cell below sea level up to sea level.
pub fn init_water(rock: &[Units], sea_level: Units) -> Vec<Units> {
    rock.iter().map(|&r| (sea_level - r).max(0)).collect()
}

const NO_FLOW: u8 = 4;
// N, E, S, W; first strictly-lowest neighbor wins ties.
const NEIGHBORS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// One simultaneous flow tick: each wet cell sends
/// `min(water, flow_rate, (h - h_low) / 2)` to its lowest 4-neighbor when
/// that neighbor's surface is strictly lower. Transfers are computed from the
/// pre-tick state. Map edges are walls.
pub fn flow_water_tick(
    rock: &[Units],
    water: &[Units],
    size: usize,
    flow_rate: Units,
) -> Vec<Units> {
    let n = size * size;
    debug_assert_eq!(rock.len(), n);
    debug_assert_eq!(water.len(), n);
    let mut direction = vec![NO_FLOW; n];
    let mut amount: Vec<Units> = vec![0; n];

    direction
        .par_chunks_mut(size)
        .zip(amount.par_chunks_mut(size))
        .enumerate()
        .for_each(|(y, (dir_row, amt_row))| {
            for x in 0..size {
                let i = y * size + x;
                let w = water[i];
                if w <= 0 {
                    continue;
                }
                let h = rock[i] + w;
                let mut best = NO_FLOW;
                let mut best_h = h;
                for (d, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
                    let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
                    if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                        continue;
                    }
                    let j = ny as usize * size + nx as usize;
                    let hj = rock[j] + water[j];
                    if hj < best_h {
                        best_h = hj;
                        best = d as u8;
                    }
                }
                if best != NO_FLOW {
                    let t = w.min(flow_rate).min((h - best_h) / 2);
                    if t > 0 {
                        dir_row[x] = best;
                        amt_row[x] = t;
                    }
                }
            }
        });

    let mut out = water.to_vec();
    out.par_chunks_mut(size).enumerate().for_each(|(y, row)| {
        for (x, cell) in row.iter_mut().enumerate() {
            let i = y * size + x;
            let mut w = *cell;
            if direction[i] != NO_FLOW {
                w -= amount[i];
            }
            // A neighbor at offset -d sends to us when its direction is d.
            for (d, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
                let (sx, sy) = (x as i64 - dx as i64, y as i64 - dy as i64);
                if sx < 0 || sy < 0 || sx >= size as i64 || sy >= size as i64 {
                    continue;
                }
                let j = sy as usize * size + sx as usize;
                if direction[j] == d as u8 {
                    w += amount[j];
                }
            }
            *cell = w;
        }
    });
    out
}

/// Straight-line serial version of [`flow_water_tick`]: visits cells in
/// order, reads only the pre-tick arrays and accumulates into a copy.
pub fn flow_water_tick_serial(
    rock: &[Units],
    water: &[Units],
    size: usize,
    flow_rate: Units,
) -> Vec<Units> {
    let mut next = water.to_vec();
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            if water[i] <= 0 {
                continue;
            }
            let h = rock[i] + water[i];
            let mut target: Option<usize> = None;
            let mut lowest = h;
            let candidates = [
                (y > 0).then(|| i - size),
                (x + 1 < size).then(|| i + 1),
                (y + 1 < size).then(|| i + size),
                (x > 0).then(|| i - 1),
            ];
            for j in candidates.into_iter().flatten() {
                let hj = rock[j] + water[j];
                if hj < lowest {
                    lowest = hj;
                    target = Some(j);
                }
            }
            if let Some(j) = target {
                let t = water[i].min(flow_rate).min((h - lowest) / 2);
                if t > 0 {
                    next[i] -= t;
                    next[j] += t;
                }
            }
        }
    }
    next
}

/// Scatters `budget` over the layer in `quantum`-sized pieces at uniformly
/// random cells; any remainder lands on one more random cell.
fn scatter(layer: &mut [Units], budget: Units, quantum: Units, rng: &mut crate::rng::StreamRng) {
    if budget <= 0 {
        return;
    }
    let n = layer.len() as u64;
    for _ in 0..budget / quantum {
        layer[rng.below(n) as usize] += quantum;
    }
    let rest = budget % quantum;
    if rest > 0 {
        layer[rng.below(n) as usize] += rest;
    }
}

/// Adds `biomass_budget` and `energy_budget` to the map at random cells.
pub fn seed_resources(
    map: &mut GridLayers,
    biomass_budget: Units,
    energy_budget: Units,
    quantum: Units,
    rng: &CounterRng,
) {
    let mut biomass_rng = rng.stream(0, Domain::Resources, 0);
    scatter(&mut map.biomass, biomass_budget, quantum, &mut biomass_rng);
    let mut energy_rng = rng.stream(0, Domain::Resources, 1);
    scatter(&mut map.energy, energy_budget, quantum, &mut energy_rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::UNITS_PER_POINT;
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn spec(kind: TerrainKind, roughness: f64) -> TerrainSpec {
        TerrainSpec {
            kind,
            roughness,
            sea_level: 8 * UNITS_PER_POINT,
            relief: 16 * UNITS_PER_POINT,
            noise_seed: 42,
        }
    }

    fn wet(rock: &[Units], sea: Units) -> Vec<bool> {
        init_water(rock, sea).iter().map(|&w| w > 0).collect()
    }

    #[test]
    fn island_rows_always_reach_water() {
        let s = spec(TerrainKind::Island, 0.08);
        let rock = generate_rock(&s, 256).unwrap();
        let wet = wet(&rock, s.sea_level);
        for y in 0..256 {
            let row = &wet[y * 256..(y + 1) * 256];
            for x in 0..256 {
                if !row[x] {
                    assert!(row[x..].iter().any(|&w| w), "east ray from ({x},{y})");
                    assert!(row[..x].iter().any(|&w| w), "west ray from ({x},{y})");
                }
            }
        }
        assert!(wet.iter().any(|&w| !w), "island has land");
    }

    #[test]
    fn isthmus_rows_always_reach_water() {
        let s = spec(TerrainKind::Isthmus, 0.08);
        let rock = generate_rock(&s, 128).unwrap();
        let wet = wet(&rock, s.sea_level);
        for y in 0..128 {
            let row = &wet[y * 128..(y + 1) * 128];
            assert!(row[0] && row[127]);
            assert!(row.iter().any(|&w| !w), "land band crosses row {y}");
        }
    }

    #[test]
    fn beach_without_noise_is_half_land() {
        let s = spec(TerrainKind::Beach, 0.0);
        let rock = generate_rock(&s, 256).unwrap();
        let land = wet(&rock, s.sea_level).iter().filter(|&&w| !w).count();
        assert!((land as i64 - 128 * 256).abs() <= 256, "land cells {land}");
        // Land is the eastern half.
        assert!(rock[255] > s.sea_level && rock[0] < s.sea_level);
    }

    #[test]
    fn channel_has_rows_without_water() {
        let s = spec(TerrainKind::Channel, 0.08);
        let rock = generate_rock(&s, 256).unwrap();
        let wet = wet(&rock, s.sea_level);
        let mut dry_rows = 0;
        for y in 0..256 {
            let row = &wet[y * 256..(y + 1) * 256];
            if row.iter().all(|&w| !w) {
                dry_rows += 1;
            }
        }
        assert!(dry_rows > 0, "some land cells never see water east or west");
        assert!(
            wet[128 * 256] && wet[128 * 256 + 255],
            "water band crosses the middle"
        );
    }

    #[test]
    fn ocean_is_submerged_and_lake_has_center_water() {
        let s = spec(TerrainKind::Ocean, 0.15);
        let rock = generate_rock(&s, 64).unwrap();
        assert!(rock.iter().all(|&r| r < s.sea_level));
        let s = spec(TerrainKind::Lake, 0.08);
        let rock = generate_rock(&s, 64).unwrap();
        let wet = wet(&rock, s.sea_level);
        assert!(wet[32 * 64 + 32] && !wet[0] && !wet[63 * 64 + 63]);
    }

    #[test]
    fn generation_is_pure() {
        for kind in TerrainKind::ALL {
            let s = spec(kind, 0.1);
            assert_eq!(
                generate_rock(&s, 64).unwrap(),
                generate_rock(&s, 64).unwrap()
            );
        }
        let a = generate_rock(&spec(TerrainKind::Beach, 0.1), 64).unwrap();
        let b = generate_rock(
            &TerrainSpec {
                noise_seed: 7,
                ..spec(TerrainKind::Beach, 0.1)
            },
            64,
        )
        .unwrap();
        assert_ne!(a, b);
        assert!(matches!(
            generate_rock(&spec(TerrainKind::Beach, 0.1), 8),
            Err(Error::GridTooSmall(8))
        ));
    }

    #[test]
    fn water_initialization_rule() {
        let sea = height_to_units(0.5);
        let w = init_water(&[height_to_units(0.4), height_to_units(0.6), sea], sea);
        assert_eq!(w, vec![sea - height_to_units(0.4), 0, 0]);
        assert!((crate::config::units_to_height(w[0]) - 0.1).abs() <= 1.0 / UNITS_PER_POINT as f64);
    }

    #[test]
    fn ocean_water_total_matches_independent_sum() {
        let s = spec(TerrainKind::Ocean, 0.1);
        let rock = generate_rock(&s, 64).unwrap();
        let water = init_water(&rock, s.sea_level);
        let mut expected: i128 = 0;
        for &r in &rock {
            if r < s.sea_level {
                expected += (s.sea_level - r) as i128;
            }
        }
        assert_eq!(water.iter().map(|&w| w as i128).sum::<i128>(), expected);
    }

    #[test]
    fn flat_uniform_water_is_static() {
        let rock = vec![100; 64];
        let water = vec![50; 64];
        assert_eq!(flow_water_tick(&rock, &water, 8, 64), water);
    }

    #[test]
    fn column_on_slope_spreads_downhill() {
        let size = 8;
        let rock: Vec<Units> = (0..64).map(|i| 1000 - 10 * (i % size) as Units).collect();
        let mut water = vec![0; 64];
        water[3 * size + 2] = 5000;
        let next = flow_water_tick(&rock, &water, size, 64);
        assert_eq!(next.iter().sum::<Units>(), 5000);
        assert!(next[3 * size + 2] < 5000);
        assert_eq!(next[3 * size + 3], 64);
    }

    fn region_spread(rock: &[Units], water: &[Units], size: usize) -> Units {
        // Worst surface spread over 4-connected wet regions.
        let mut seen = vec![false; size * size];
        let mut worst = 0;
        for start in 0..size * size {
            if seen[start] || water[start] == 0 {
                continue;
            }
            let (mut lo, mut hi) = (Units::MAX, Units::MIN);
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let h = rock[i] + water[i];
                lo = lo.min(h);
                hi = hi.max(h);
                let (x, y) = (i % size, i / size);
                let mut push = |j: usize| {
                    if !seen[j] && water[j] > 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1)
                }
                if x + 1 < size {
                    push(i + 1)
                }
                if y > 0 {
                    push(i - size)
                }
                if y + 1 < size {
                    push(i + size)
                }
            }
            worst = worst.max(hi - lo);
        }
        worst
    }

    #[test]
    fn random_field_levels_out() {
        let size = 8;
        let flow_rate = 64;
        let mut rng = StreamRng::new(3, 0, 0);
        let rock: Vec<Units> = (0..64).map(|_| rng.below(2000) as Units).collect();
        let mut water: Vec<Units> = (0..64).map(|_| rng.below(3000) as Units).collect();
        let total: Units = water.iter().sum();
        for _ in 0..10_000 {
            water = flow_water_tick_serial(&rock, &water, size, flow_rate);
        }
        assert_eq!(water.iter().sum::<Units>(), total);
        let spread = region_spread(&rock, &water, size);
        assert!(spread <= flow_rate, "surface spread {spread}");
    }

    #[test]
    fn seeding_hits_budget_exactly() {
        let rng = CounterRng::new(5);
        let mut map = GridLayers::new(64);
        seed_resources(&mut map, 0, 0, 32, &rng);
        assert!(map.biomass.iter().all(|&b| b == 0) && map.energy.iter().all(|&e| e == 0));
        let budget = 64 * 64 * 50 + 17;
        seed_resources(&mut map, budget, 1000, 32, &rng);
        assert_eq!(map.biomass.iter().sum::<Units>(), budget);
        assert_eq!(map.energy.iter().sum::<Units>(), 1000);

        let mut other = GridLayers::new(64);
        seed_resources(&mut other, budget, 1000, 32, &CounterRng::new(6));
        assert_eq!(other.biomass.iter().sum::<Units>(), budget);
        assert_ne!(other.biomass, map.biomass);
    }

    fn field(size: usize) -> impl Strategy<Value = (Vec<Units>, Vec<Units>)> {
        let n = size * size;
        (
            prop::collection::vec(0..4000i64, n),
            prop::collection::vec(prop_oneof![Just(0i64), 0..5000i64], n),
        )
    }

    proptest! {
        #[test]
        fn flow_conserves_and_matches_serial((rock, water) in field(12), rate in 1..200i64) {
            let par = flow_water_tick(&rock, &water, 12, rate);
            let ser = flow_water_tick_serial(&rock, &water, 12, rate);
            prop_assert_eq!(&par, &ser);
            prop_assert_eq!(par.iter().sum::<Units>(), water.iter().sum::<Units>());
            prop_assert!(par.iter().all(|&w| w >= 0));
        }

        #[test]
        fn flow_never_goes_uphill((rock, water) in field(10), rate in 1..200i64) {
            let next = flow_water_tick(&rock, &water, 10, rate);
            // A cell can only lose water if some neighbor was strictly lower.
            for i in 0..100 {
                if next[i] < water[i] {
                    let (x, y) = (i % 10, i / 10);
                    let h = rock[i] + water[i];
                    let mut lower = false;
                    for (dx, dy) in NEIGHBORS {
                        let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
                        if (0..10).contains(&nx) && (0..10).contains(&ny) {
                            let j = ny as usize * 10 + nx as usize;
                            lower |= rock[j] + water[j] < h;
                        }
                    }
                    prop_assert!(lower);
                }
            }
        }
    }
}
