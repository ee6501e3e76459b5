//! Time-series records, the mining and extinction detectors, and per-run
//! summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{MetricsConfig, SimConfig, Units};
use crate::dynamics::{Action, ActionCategory};
use crate::engine::StepTrace;
use crate::error::{Error, Result};
use crate::world::WorldState;

/// Step traces accumulated since the last metrics record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceWindow {
    pub steps: u64,
    pub actions: [u64; 9],
    pub attacks: u64,
    pub kills: u64,
    pub births: u64,
    pub deaths_attack: u64,
    pub deaths_starvation: u64,
    pub deaths_age: u64,
    pub canceled_moves: u64,
}

impl TraceWindow {
    pub fn push(&mut self, t: &StepTrace) {
        self.steps += 1;
        for (acc, &n) in self.actions.iter_mut().zip(&t.actions) {
            *acc += n as u64;
        }
        self.attacks += t.attacks as u64;
        self.kills += t.kills as u64;
        self.births += t.births as u64;
        self.deaths_attack += t.deaths_attack as u64;
        self.deaths_starvation += t.deaths_starvation as u64;
        self.deaths_age += t.deaths_age as u64;
        self.canceled_moves += t.canceled_moves as u64;
    }

    pub fn total_actions(&self) -> u64 {
        self.actions.iter().sum()
    }

    pub fn category_count(&self, category: ActionCategory) -> u64 {
        Action::ALL
            .iter()
            .filter(|a| a.category() == category)
            .map(|a| self.actions[a.index()])
            .sum()
    }
}

/// One row of `metrics.csv`. Biomass and water columns are exact
/// fixed-point sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub population: u64,
    pub total_biomass: Units,
    /// Map biomass on cells with less water than the dry threshold.
    pub free_dry_biomass: Units,
    pub free_wet_biomass: Units,
    /// Biomass held by agents, bodies included.
    pub agent_biomass: Units,
    pub biomass_utilization: f64,
    pub total_water: Units,
    pub total_energy: Units,
    /// Action fractions over the window; all zero when no agent acted.
    pub frac_move: f64,
    pub frac_eat: f64,
    pub frac_attack: f64,
    pub frac_rest: f64,
    pub frac_reproduce: f64,
    pub actions: u64,
    pub attacks: u64,
    pub homicides: u64,
    /// `None` when the window had no attacks.
    pub homicides_per_attack: Option<f64>,
    pub births: u64,
    pub deaths_attack: u64,
    pub deaths_starvation: u64,
    pub deaths_age: u64,
    pub mean_hp: f64,
    pub mean_age: f64,
    pub canceled_moves: u64,
}

/// Version of the `metrics.csv` column layout, recorded in each run's
/// `events.json`. Bumped whenever [`METRICS_COLUMNS`] changes.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column names of `metrics.csv`, in order.
pub const METRICS_COLUMNS: [&str; 25] = [
    "step",
    "population",
    "total_biomass",
    "free_dry_biomass",
    "free_wet_biomass",
    "agent_biomass",
    "biomass_utilization",
    "total_water",
    "total_energy",
    "frac_move",
    "frac_eat",
    "frac_attack",
    "frac_rest",
    "frac_reproduce",
    "actions",
    "attacks",
    "homicides",
    "homicides_per_attack",
    "births",
    "deaths_attack",
    "deaths_starvation",
    "deaths_age",
    "mean_hp",
    "mean_age",
    "canceled_moves",
];

/// Builds a record from the current world and the window's traces.
pub fn record_metrics(world: &WorldState, cfg: &SimConfig, window: &TraceWindow) -> MetricsRecord {
    let m = &world.map;
    let dry = cfg.metrics.dry_threshold;
    let (mut free_dry, mut free_wet) = (0, 0);
    for (&b, &w) in m.biomass.iter().zip(&m.water) {
        if w < dry {
            free_dry += b;
        } else {
            free_wet += b;
        }
    }
    let base = cfg.resources.base_biomass;
    let (mut agent_biomass, mut agent_water, mut hp, mut age) = (0, 0, 0.0f64, 0.0f64);
    for (_, a) in world.agents.iter_live() {
        agent_biomass += a.store_biomass + base;
        agent_water += a.store_water;
        hp += a.hp as f64;
        age += a.age as f64;
    }
    let population = world.agents.live_count() as u64;
    let total_biomass = free_dry + free_wet + agent_biomass;
    let actions = window.total_actions();
    let frac = |c: ActionCategory| {
        if actions == 0 {
            0.0
        } else {
            window.category_count(c) as f64 / actions as f64
        }
    };
    let per_agent = |v: f64| {
        if population == 0 {
            0.0
        } else {
            v / population as f64
        }
    };
    MetricsRecord {
        step: world.step,
        population,
        total_biomass,
        free_dry_biomass: free_dry,
        free_wet_biomass: free_wet,
        agent_biomass,
        biomass_utilization: if total_biomass == 0 {
            0.0
        } else {
            agent_biomass as f64 / total_biomass as f64
        },
        total_water: m.water.iter().sum::<Units>() + agent_water,
        total_energy: world.total_energy(),
        frac_move: frac(ActionCategory::Move),
        frac_eat: frac(ActionCategory::Eat),
        frac_attack: frac(ActionCategory::Attack),
        frac_rest: frac(ActionCategory::Rest),
        frac_reproduce: frac(ActionCategory::Reproduce),
        actions,
        attacks: window.attacks,
        homicides: window.kills,
        homicides_per_attack: (window.attacks > 0)
            .then(|| window.kills as f64 / window.attacks as f64),
        births: window.births,
        deaths_attack: window.deaths_attack,
        deaths_starvation: window.deaths_starvation,
        deaths_age: window.deaths_age,
        mean_hp: per_agent(hp),
        mean_age: per_agent(age),
        canceled_moves: window.canceled_moves,
    }
}

/// Streams records to CSV with a fixed header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        inner.write_record(METRICS_COLUMNS)?;
        Ok(Self { inner })
    }

    /// Continues an existing file without writing the header again.
    pub fn append(writer: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(writer),
        }
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        self.inner.serialize(r)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a `metrics.csv` written by [`MetricsWriter`].
pub fn read_metrics_csv(reader: impl std::io::Read) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<MetricsRecord>() {
        out.push(row?);
    }
    Ok(out)
}

/// A sustained drop in free biomass on dry land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningEvent {
    /// Step of the smoothed maximum, rounded to the onset granularity.
    pub onset_step: u64,
    /// Unrounded step of the smoothed maximum.
    pub peak_step: u64,
    pub peak: f64,
    pub trough: f64,
    /// `100 · (peak − trough) / peak`.
    pub percent_drop: f64,
}

/// Detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningDetector {
    /// Moving-average width in samples; also the local-maximum radius.
    pub window: usize,
    /// Minimum relative drop, as a fraction.
    pub threshold: f64,
    /// Onset rounding granularity in steps.
    pub rounding: u64,
}

impl MiningDetector {
    pub fn from_config(m: &MetricsConfig) -> Self {
        Self {
            window: m.smoothing_window,
            threshold: m.mining_threshold,
            rounding: m.onset_rounding,
        }
    }
}

impl Default for MiningDetector {
    fn default() -> Self {
        Self::from_config(&MetricsConfig::default())
    }
}

/// Centered moving average of total width `window` (truncated at the ends).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn round_to(step: u64, granularity: u64) -> u64 {
    match (step + granularity / 2).checked_div(granularity) {
        Some(q) => q * granularity,
        None => step,
    }
}

/// Finds mining events in a sampled series. Each local maximum `M` of the
/// smoothed series is followed forward to the lowest value `m` before the
/// series next exceeds `M`; a relative drop of at least the threshold is an
/// event. Candidates that start inside an earlier event are merged into it.
pub fn detect_mining_events(
    steps: &[u64],
    values: &[f64],
    detector: &MiningDetector,
) -> Result<Vec<MiningEvent>> {
    if values.is_empty() || steps.len() != values.len() {
        return Err(Error::EmptySeries);
    }
    let s = smooth(values, detector.window);
    let n = s.len();
    let radius = detector.window.max(1);
    let mut events: Vec<MiningEvent> = Vec::new();
    let mut covered_until = 0usize;
    for i in 0..n {
        if i < covered_until {
            continue;
        }
        let peak = s[i];
        if peak <= 0.0 {
            continue;
        }
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        if s[lo..=hi].iter().any(|&v| v > peak) {
            continue;
        }
        let mut trough = peak;
        let mut end = n;
        for (j, &v) in s.iter().enumerate().skip(i + 1) {
            if v > peak {
                end = j;
                break;
            }
            trough = trough.min(v);
        }
        let drop = (peak - trough) / peak;
        if drop >= detector.threshold {
            events.push(MiningEvent {
                onset_step: round_to(steps[i], detector.rounding),
                peak_step: steps[i],
                peak,
                trough,
                percent_drop: 100.0 * drop,
            });
            covered_until = end;
        }
    }
    Ok(events)
}

/// First sampled step with zero population.
pub fn detect_extinction(steps: &[u64], population: &[u64]) -> Option<u64> {
    steps
        .iter()
        .zip(population)
        .find(|(_, &p)| p == 0)
        .map(|(&s, _)| s)
}

/// Whole-run means of the per-record metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAggregates {
    pub mean_population: f64,
    pub mean_biomass_utilization: f64,
    pub mean_frac_move: f64,
    pub mean_frac_eat: f64,
    pub mean_frac_attack: f64,
    /// Mean over records that saw at least one attack.
    pub mean_homicides_per_attack: Option<f64>,
}

impl RunAggregates {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let hpa: Vec<f64> = records
            .iter()
            .filter_map(|r| r.homicides_per_attack)
            .collect();
        Self {
            mean_population: mean(|r| r.population as f64),
            mean_biomass_utilization: mean(|r| r.biomass_utilization),
            mean_frac_move: mean(|r| r.frac_move),
            mean_frac_eat: mean(|r| r.frac_eat),
            mean_frac_attack: mean(|r| r.frac_attack),
            mean_homicides_per_attack: (!hpa.is_empty())
                .then(|| hpa.iter().sum::<f64>() / hpa.len() as f64),
        }
    }
}

/// Per-run analysis written as `events.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    /// [`METRICS_SCHEMA_VERSION`] of the series this report was built from.
    pub metrics_schema: u32,
    /// Configuration label used for grouping (preset name or config path).
    pub label: String,
    pub seed: u64,
    pub final_step: u64,
    pub final_population: u64,
    pub mining_events: Vec<MiningEvent>,
    pub extinction_step: Option<u64>,
    pub aggregates: RunAggregates,
}

impl EventReport {
    pub fn from_records(
        label: impl Into<String>,
        seed: u64,
        records: &[MetricsRecord],
        cfg: &MetricsConfig,
    ) -> Result<Self> {
        let last = records.last().ok_or(Error::EmptySeries)?;
        let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
        let dry: Vec<f64> = records.iter().map(|r| r.free_dry_biomass as f64).collect();
        let population: Vec<u64> = records.iter().map(|r| r.population).collect();
        Ok(Self {
            metrics_schema: METRICS_SCHEMA_VERSION,
            label: label.into(),
            seed,
            final_step: last.step,
            final_population: last.population,
            mining_events: detect_mining_events(&steps, &dry, &MiningDetector::from_config(cfg))?,
            extinction_step: detect_extinction(&steps, &population),
            aggregates: RunAggregates::from_records(records),
        })
    }
}

/// One row of `summary.csv`: all runs sharing a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub runs: usize,
    pub mining_runs: usize,
    pub extinct_runs: usize,
    /// `k/n` runs with at least one mining event.
    pub mining: String,
    /// `k/n` runs that went extinct.
    pub extinct: String,
    /// Mean onset of each run's first event; `None` without events.
    pub mean_onset: Option<f64>,
    pub mean_drop: Option<f64>,
    pub mean_population: f64,
    pub mean_biomass_utilization: f64,
    pub mean_frac_move: f64,
    pub mean_frac_eat: f64,
    pub mean_frac_attack: f64,
    pub mean_homicides_per_attack: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Groups runs by label, in order of first appearance.
pub fn summarize_runs(runs: &[EventReport]) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        return Err(Error::NoRuns);
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    Ok(labels
        .into_iter()
        .map(|label| {
            let group: Vec<&EventReport> = runs.iter().filter(|r| r.label == label).collect();
            let n = group.len();
            let firsts: Vec<&MiningEvent> = group
                .iter()
                .filter_map(|r| r.mining_events.first())
                .collect();
            let extinct = group.iter().filter(|r| r.extinction_step.is_some()).count();
            let agg = |f: fn(&RunAggregates) -> f64| {
                group.iter().map(|r| f(&r.aggregates)).sum::<f64>() / n as f64
            };
            SummaryRow {
                label: label.to_string(),
                runs: n,
                mining_runs: firsts.len(),
                extinct_runs: extinct,
                mining: format!("{}/{n}", firsts.len()),
                extinct: format!("{extinct}/{n}"),
                mean_onset: mean_of(firsts.iter().map(|e| e.onset_step as f64)),
                mean_drop: mean_of(firsts.iter().map(|e| e.percent_drop)),
                mean_population: agg(|a| a.mean_population),
                mean_biomass_utilization: agg(|a| a.mean_biomass_utilization),
                mean_frac_move: agg(|a| a.mean_frac_move),
                mean_frac_eat: agg(|a| a.mean_frac_eat),
                mean_frac_attack: agg(|a| a.mean_frac_attack),
                mean_homicides_per_attack: mean_of(
                    group
                        .iter()
                        .filter_map(|r| r.aggregates.mean_homicides_per_attack),
                ),
            }
        })
        .collect())
}

pub fn write_summary_csv(rows: &[SummaryRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
