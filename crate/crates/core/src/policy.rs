//! Per-agent neural policies.
//!
//! Each enabled sensor has its own linear encoder into the hidden width; the
//! encoder outputs are summed and passed through two ReLU layers and a linear
//! action head. Actions are drawn from a temperature softmax whose log
//! temperature evolves alongside the weights.
//!
//! Weights and biases are stored as bfloat16 and expanded to f32 for
//! arithmetic. Weight matrices are stored input-major (`w[i * out + o]`) so
//! the inner loop runs over contiguous outputs.

use half::bf16;

use crate::config::SensorSet;
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::rng::{GaussianSource, StreamRng};
use crate::sensing::Observation;
use crate::world::AgentId;

pub const INTERNAL_WIDTH: usize = 5;
pub const EXTERNAL_WIDTH: usize = 3;
pub const COMPASS_WIDTH: usize = 4;
pub const VISION_SIDE: usize = 7;
pub const VISION_CHANNELS: usize = 4;
pub const VISION_WIDTH: usize = VISION_SIDE * VISION_SIDE * VISION_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sensor {
    Internal,
    External,
    Compass,
    Vision,
}

impl Sensor {
    pub fn width(self) -> usize {
        match self {
            Sensor::Internal => INTERNAL_WIDTH,
            Sensor::External => EXTERNAL_WIDTH,
            Sensor::Compass => COMPASS_WIDTH,
            Sensor::Vision => VISION_WIDTH,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Internal => "internal",
            Sensor::External => "external",
            Sensor::Compass => "compass",
            Sensor::Vision => "vision",
        }
    }
}

/// Offsets of one linear layer inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearBlock {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LinearBlock {
    fn end(&self) -> usize {
        self.bias_offset + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyArch {
    pub sensors: Vec<Sensor>,
    pub hidden: usize,
    pub actions: usize,
    pub encoders: Vec<LinearBlock>,
    pub trunk: [LinearBlock; 2],
    pub head: LinearBlock,
}

fn block(inputs: usize, outputs: usize, offset: &mut usize) -> LinearBlock {
    let b = LinearBlock {
        inputs,
        outputs,
        weight_offset: *offset,
        bias_offset: *offset + inputs * outputs,
    };
    *offset = b.end();
    b
}

impl PolicyArch {
    pub fn new(sensors: SensorSet, attack_enabled: bool, hidden: usize) -> Self {
        let mut list = vec![Sensor::Internal, Sensor::External];
        if sensors.has_compass() {
            list.push(Sensor::Compass);
        }
        if sensors.has_vision() {
            list.push(Sensor::Vision);
        }
        let actions = if attack_enabled { 9 } else { 8 };
        let mut offset = 0;
        let encoders = list
            .iter()
            .map(|s| block(s.width(), hidden, &mut offset))
            .collect();
        let trunk = [
            block(hidden, hidden, &mut offset),
            block(hidden, hidden, &mut offset),
        ];
        let head = block(hidden, actions, &mut offset);
        Self {
            sensors: list,
            hidden,
            actions,
            encoders,
            trunk,
            head,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.sensors, cfg.attack_enabled, cfg.policy.hidden_width)
    }

    /// Length of the flattened observation.
    pub fn input_width(&self) -> usize {
        self.sensors.iter().map(|s| s.width()).sum()
    }

    /// Number of stored bfloat16 values (weights and biases).
    pub fn weight_count(&self) -> usize {
        self.head.end()
    }

    /// Total parameter count: weights, biases and the log temperature.
    pub fn count_parameters(&self) -> usize {
        self.weight_count() + 1
    }

    fn blocks(&self) -> impl Iterator<Item = &LinearBlock> {
        self.encoders
            .iter()
            .chain(self.trunk.iter())
            .chain(std::iter::once(&self.head))
    }
}

/// Convenience wrapper for [`PolicyArch::count_parameters`].
pub fn count_parameters(arch: &PolicyArch) -> usize {
    arch.count_parameters()
}

#[inline(always)]
fn widen(w: bf16) -> f32 {
    // Stored weights are always finite, so the NaN handling in
    // `bf16::to_f32` is unnecessary on the hot path.
    f32::from_bits((w.to_bits() as u32) << 16)
}

/// Rounds an f32 to the nearest bfloat16.
#[inline]
pub fn quantize(x: f32) -> bf16 {
    bf16::from_f32(x)
}

/// Owned parameters of a single policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Vec<bf16>,
    pub log_temperature: f32,
}

impl PolicyParams {
    pub fn zeros(arch: &PolicyArch) -> Self {
        Self {
            weights: vec![bf16::ZERO; arch.weight_count()],
            log_temperature: 0.0,
        }
    }

    pub fn as_ref(&self) -> PolicyRef<'_> {
        PolicyRef {
            weights: &self.weights,
            log_temperature: self.log_temperature,
        }
    }
}

/// Borrowed view of one policy's parameters.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRef<'a> {
    pub weights: &'a [bf16],
    pub log_temperature: f32,
}

impl PolicyRef<'_> {
    pub fn to_owned(&self) -> PolicyParams {
        PolicyParams {
            weights: self.weights.to_vec(),
            log_temperature: self.log_temperature,
        }
    }
}

/// Structure-of-arrays storage for every agent slot's policy.
#[derive(Debug, Clone)]
pub struct PolicyPool {
    arch: PolicyArch,
    stride: usize,
    weights: Vec<bf16>,
    log_temperature: Vec<f32>,
}

impl PolicyPool {
    pub fn new(arch: PolicyArch, capacity: usize) -> Self {
        let stride = arch.weight_count();
        Self {
            arch,
            stride,
            weights: vec![bf16::ZERO; stride * capacity],
            log_temperature: vec![0.0; capacity],
        }
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn capacity(&self) -> usize {
        self.log_temperature.len()
    }

    #[inline]
    pub fn get(&self, id: AgentId) -> PolicyRef<'_> {
        let i = id.index();
        PolicyRef {
            weights: &self.weights[i * self.stride..(i + 1) * self.stride],
            log_temperature: self.log_temperature[i],
        }
    }

    pub fn set(&mut self, id: AgentId, params: &PolicyParams) {
        let i = id.index();
        self.weights[i * self.stride..(i + 1) * self.stride].copy_from_slice(&params.weights);
        self.log_temperature[i] = params.log_temperature;
    }

    /// Kaiming-initializes one slot in place.
    pub fn init_slot(&mut self, id: AgentId, noise: &mut impl GaussianSource) {
        let params = init_policy(&self.arch, noise);
        self.set(id, &params);
    }

    /// Bitwise equality of every slot.
    pub fn bits_eq(&self, other: &PolicyPool) -> bool {
        self.arch == other.arch
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .log_temperature
                .iter()
                .zip(&other.log_temperature)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Bitwise equality restricted to the given slots.
    pub fn slots_bits_eq(&self, other: &PolicyPool, ids: &[AgentId]) -> bool {
        self.arch == other.arch
            && ids.iter().all(|&id| {
                let (a, b) = (self.get(id), other.get(id));
                a.log_temperature.to_bits() == b.log_temperature.to_bits()
                    && a.weights
                        .iter()
                        .zip(b.weights)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Kaiming-normal weights (std `sqrt(2 / fan_in)`), zero biases, unit
/// temperature.
pub fn init_policy(arch: &PolicyArch, noise: &mut impl GaussianSource) -> PolicyParams {
    let mut params = PolicyParams::zeros(arch);
    for b in arch.blocks() {
        let std = (2.0 / b.inputs as f32).sqrt();
        for w in &mut params.weights[b.weight_offset..b.bias_offset] {
            *w = quantize(std * noise.next_gaussian());
        }
    }
    params
}

/// Reusable buffers for [`forward_into`].
#[derive(Debug, Clone)]
pub struct ForwardScratch {
    hidden: Vec<f32>,
    tmp: Vec<f32>,
    act: Vec<f32>,
}

impl ForwardScratch {
    pub fn new(arch: &PolicyArch) -> Self {
        Self {
            hidden: vec![0.0; arch.hidden],
            tmp: vec![0.0; arch.hidden],
            act: vec![0.0; arch.hidden],
        }
    }
}

/// `out[o] = sum_i x[i] * w[i][o]` accumulated in input order, then `+ b[o]`.
///
/// Wider vector units are used when the CPU has them. Every product and sum
/// is rounded separately in the same order on every path, so the results
/// are bitwise identical.
#[inline]
fn linear(weights: &[bf16], b: &LinearBlock, x: &[f32], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was just detected.
            return unsafe { linear_avx512(weights, b, x, out) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { linear_avx2(weights, b, x, out) };
        }
    }
    linear_generic(weights, b, x, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn linear_avx512(weights: &[bf16], b: &LinearBlock, x: &[f32], out: &mut [f32]) {
    linear_generic(weights, b, x, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn linear_avx2(weights: &[bf16], b: &LinearBlock, x: &[f32], out: &mut [f32]) {
    linear_generic(weights, b, x, out)
}

#[inline(always)]
fn linear_generic(weights: &[bf16], b: &LinearBlock, x: &[f32], out: &mut [f32]) {
    out.fill(0.0);
    let w = &weights[b.weight_offset..b.bias_offset];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * b.outputs..(i + 1) * b.outputs];
        for (acc, &wij) in out.iter_mut().zip(row) {
            *acc += xi * widen(wij);
        }
    }
    for (acc, &bias) in out.iter_mut().zip(&weights[b.bias_offset..b.end()]) {
        *acc += widen(bias);
    }
}

/// Unchecked forward pass over a flattened observation. `obs` must have
/// `arch.input_width()` values and `logits` `arch.actions` slots.
pub fn forward_into(
    arch: &PolicyArch,
    params: PolicyRef<'_>,
    obs: &[f32],
    scratch: &mut ForwardScratch,
    logits: &mut [f32],
) {
    let w = params.weights;
    scratch.hidden.fill(0.0);
    let mut start = 0;
    for enc in &arch.encoders {
        let x = &obs[start..start + enc.inputs];
        start += enc.inputs;
        linear(w, enc, x, &mut scratch.tmp);
        for (h, t) in scratch.hidden.iter_mut().zip(&scratch.tmp) {
            *h += *t;
        }
    }
    linear(w, &arch.trunk[0], &scratch.hidden, &mut scratch.act);
    scratch.act.iter_mut().for_each(|a| *a = a.max(0.0));
    linear(w, &arch.trunk[1], &scratch.act, &mut scratch.tmp);
    scratch.tmp.iter_mut().for_each(|a| *a = a.max(0.0));
    linear(w, &arch.head, &scratch.tmp, logits);
}

/// Checked forward pass: verifies that the observation carries exactly the
/// sensors of `arch`.
pub fn forward(arch: &PolicyArch, params: PolicyRef<'_>, obs: &Observation) -> Result<Vec<f32>> {
    for sensor in [
        Sensor::Internal,
        Sensor::External,
        Sensor::Compass,
        Sensor::Vision,
    ] {
        let expected = if arch.sensors.contains(&sensor) {
            sensor.width()
        } else {
            0
        };
        let found = obs.sensor(sensor).len();
        if found != expected {
            return Err(Error::ShapeMismatch {
                sensor: sensor.name(),
                expected,
                found,
            });
        }
    }
    if params.weights.len() != arch.weight_count() {
        return Err(Error::ShapeMismatch {
            sensor: "parameters",
            expected: arch.weight_count(),
            found: params.weights.len(),
        });
    }
    let mut scratch = ForwardScratch::new(arch);
    let mut logits = vec![0.0; arch.actions];
    forward_into(arch, params, obs.values(), &mut scratch, &mut logits);
    Ok(logits)
}

/// Draws an action index from `softmax(logits / T)`, `T = exp(log_temperature)`.
pub fn sample_action(logits: &[f32], log_temperature: f32, rng: &mut StreamRng) -> usize {
    debug_assert!(!logits.is_empty());
    let inv_t = (-(log_temperature as f64)).exp();
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64 * inv_t));
    let mut weights = [0.0f64; 16];
    let mut total = 0.0;
    for (w, &l) in weights.iter_mut().zip(logits) {
        *w = (l as f64 * inv_t - max).exp();
        total += *w;
    }
    let mut u = rng.next_f64() * total;
    for (i, &w) in weights[..logits.len()].iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding can leave `u` marginally above the last weight.
    weights[..logits.len()]
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(0)
}

/// Bounds of the evolvable log temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureBounds {
    pub min_log: f32,
    pub max_log: f32,
}

impl TemperatureBounds {
    pub fn new(min_temperature: f32, max_temperature: f32) -> Self {
        Self {
            min_log: min_temperature.ln(),
            max_log: max_temperature.ln(),
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.policy.min_temperature, cfg.policy.max_temperature)
    }
}

/// Writes `parent + N(0, std)` into `child` (re-quantized to bfloat16) and
/// returns the child's clamped log temperature. Noise is drawn in parameter
/// order, then once for the temperature.
pub fn mutate_into(
    parent: PolicyRef<'_>,
    child: &mut [bf16],
    std: f32,
    bounds: TemperatureBounds,
    noise: &mut impl GaussianSource,
) -> f32 {
    debug_assert_eq!(parent.weights.len(), child.len());
    for (c, &p) in child.iter_mut().zip(parent.weights) {
        *c = quantize(widen(p) + std * noise.next_gaussian());
    }
    let t = parent.log_temperature + std * noise.next_gaussian();
    t.clamp(bounds.min_log, bounds.max_log)
}

/// Returns a mutated copy of `parent`; the parent is untouched.
pub fn mutate(
    parent: PolicyRef<'_>,
    std: f32,
    bounds: TemperatureBounds,
    noise: &mut impl GaussianSource,
) -> PolicyParams {
    let mut weights = vec![bf16::ZERO; parent.weights.len()];
    let log_temperature = mutate_into(parent, &mut weights, std, bounds, noise);
    PolicyParams {
        weights,
        log_temperature,
    }
}

/// Mutates the 3-channel color trait, clamped to `[0, 1]`.
pub fn mutate_color(color: [f32; 3], std: f32, noise: &mut impl GaussianSource) -> [f32; 3] {
    color.map(|c| (c + std * noise.next_gaussian()).clamp(0.0, 1.0))
}
