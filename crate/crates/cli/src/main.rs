//! `ecosim` command-line driver.
//!
//! Exit codes: 0 on success, 1 for invalid configs or usage, 2 for runtime
//! failures.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ecosim_core::config::preset;
use ecosim_core::io::{load_config, render_map_image, save_config, write_heightfield_png};
use ecosim_core::metrics::{read_metrics_csv, write_summary_csv, MetricsWriter};
use ecosim_core::world::init_world;
use ecosim_core::{
    load_snapshot, preset_names, save_snapshot, summarize_runs, validate_config, EventReport,
    SimConfig, Simulation, Termination,
};

#[derive(Parser)]
#[command(
    name = "ecosim",
    version,
    about = "Grid-world ecology simulator with evolving neural agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a config file or preset.
    Run(RunArgs),
    /// Continue a run from a snapshot.
    Resume(ResumeArgs),
    /// Run several seeds of one configuration and summarize them.
    Batch(BatchArgs),
    /// Build summary.csv from the events.json files under a directory.
    Summarize(SummarizeArgs),
    /// Render the map of a snapshot to PNG.
    Render(RenderArgs),
    /// Check a config file and print the effective config.
    Validate(ValidateArgs),
    /// Export the terrain of a config as a 16-bit heightfield PNG.
    Terrain(TerrainArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args, Clone)]
struct Source {
    /// JSON config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name (see `ecosim presets`).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Clone)]
struct Execution {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "ECOSIM_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Write a snapshot every N steps (0 = only the final one).
    #[arg(long, default_value_t = 0)]
    snapshot_every: u64,
    /// Print a progress line every N steps.
    #[arg(long)]
    heartbeat: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Label used to group runs in summaries (defaults to the preset or
    /// config file name).
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    exec: Execution,
}

#[derive(Args)]
struct ResumeArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// Total step count to reach (defaults to the config's `steps`).
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory; metrics are appended when it already has them.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    exec: Execution,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    source: Source,
    /// Number of seeds, run as seeds 0..N.
    #[arg(long)]
    seeds: u64,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    exec: Execution,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV (defaults to `<in>/summary.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TerrainArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_source(source: &Source) -> Result<(SimConfig, String)> {
    match (&source.config, &source.preset) {
        (Some(path), _) => {
            let cfg = load_config(path).with_context(|| format!("loading {}", path.display()))?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((cfg, label))
        }
        (None, Some(name)) => Ok((preset(name)?, name.clone())),
        (None, None) => bail!(UsageError("one of --config or --preset is required".into())),
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn with_overrides(
    mut cfg: SimConfig,
    seed: Option<u64>,
    steps: Option<u64>,
    heartbeat: Option<u64>,
) -> Result<SimConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(h) = heartbeat {
        cfg.metrics.heartbeat_every = h;
    }
    Ok(validate_config(cfg)?)
}

fn snapshot_path(out: &Path, step: u64) -> PathBuf {
    out.join("snapshots").join(format!("step_{step:010}.snap"))
}

/// Steps `sim` to `target`, streaming metrics and writing periodic
/// snapshots, then writes the final snapshot and events.
fn drive(
    sim: &mut Simulation,
    target: u64,
    out: &Path,
    exec: &Execution,
    label: &str,
    writer: &mut MetricsWriter<BufWriter<File>>,
) -> Result<Termination> {
    let mut termination = Termination::Completed;
    while sim.world().step < target && sim.world().agents.live_count() > 0 {
        let chunk_end = match exec.snapshot_every {
            0 => target,
            n => ((sim.world().step / n + 1) * n).min(target),
        };
        termination = sim.run_until(chunk_end, |r| writer.write(r))?;
        writer.flush()?;
        if exec.snapshot_every > 0 && sim.world().step.is_multiple_of(exec.snapshot_every) {
            fs::create_dir_all(out.join("snapshots"))?;
            save_snapshot(
                snapshot_path(out, sim.world().step),
                sim.config(),
                sim.world(),
                sim.pool(),
            )?;
        }
    }
    if sim.world().agents.live_count() == 0 {
        termination = Termination::Extinct;
    }
    save_snapshot(
        out.join("final.snap"),
        sim.config(),
        sim.world(),
        sim.pool(),
    )?;
    writer.flush()?;

    let records = read_metrics_csv(File::open(out.join("metrics.csv"))?)?;
    let report =
        EventReport::from_records(label, sim.config().seed, &records, &sim.config().metrics)?;
    fs::write(
        out.join("events.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    eprintln!(
        "{label} seed {}: {:?} at step {}, population {}, {} mining event(s)",
        report.seed,
        termination,
        report.final_step,
        report.final_population,
        report.mining_events.len()
    );
    Ok(termination)
}

fn run_one(cfg: SimConfig, out: &Path, exec: &Execution, label: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_config(out.join("config.json"), &cfg)?;
    let mut sim = Simulation::new(cfg, exec.workers)?;
    let mut writer = MetricsWriter::new(BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    writer.write(&sim.take_record())?;
    let target = sim.config().steps;
    drive(&mut sim, target, out, exec, label, &mut writer)?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (cfg, default_label) = load_source(&a.source)?;
    let cfg = with_overrides(cfg, a.seed, a.steps, a.exec.heartbeat)?;
    run_one(
        cfg,
        &a.out,
        &a.exec,
        a.label.as_deref().unwrap_or(&default_label),
    )
}

fn cmd_resume(a: ResumeArgs) -> Result<()> {
    let (cfg, world, pool) =
        load_snapshot(&a.snapshot).with_context(|| format!("loading {}", a.snapshot.display()))?;
    let cfg = with_overrides(cfg, None, a.steps, a.exec.heartbeat)?;
    let label = match &a.label {
        Some(l) => l.clone(),
        None => previous_label(&a.out).unwrap_or_else(|| "resumed".into()),
    };
    fs::create_dir_all(&a.out)?;
    let metrics = a.out.join("metrics.csv");
    let mut writer = if metrics.exists() {
        truncate_metrics_after(&metrics, world.step)?;
        MetricsWriter::append(BufWriter::new(
            OpenOptions::new().append(true).open(&metrics)?,
        ))
    } else {
        MetricsWriter::new(BufWriter::new(File::create(&metrics)?))?
    };
    let target = cfg.steps;
    save_config(a.out.join("config.json"), &cfg)?;
    let mut sim = Simulation::from_parts(cfg, world, pool, a.exec.workers)?;
    if !metrics_has_rows(&metrics)? {
        writer.write(&sim.take_record())?;
    }
    drive(&mut sim, target, &a.out, &a.exec, &label, &mut writer)?;
    Ok(())
}

fn previous_label(out: &Path) -> Option<String> {
    let text = fs::read_to_string(out.join("events.json")).ok()?;
    serde_json::from_str::<EventReport>(&text)
        .ok()
        .map(|r| r.label)
}

fn metrics_has_rows(path: &Path) -> Result<bool> {
    Ok(!read_metrics_csv(File::open(path)?)?.is_empty())
}

/// Drops rows recorded after `step`, so a resumed run does not duplicate
/// samples written before the snapshot was superseded.
fn truncate_metrics_after(path: &Path, step: u64) -> Result<()> {
    let records = read_metrics_csv(File::open(path)?)?;
    if records.iter().all(|r| r.step <= step) {
        return Ok(());
    }
    let mut w = MetricsWriter::new(BufWriter::new(File::create(path)?))?;
    for r in records.iter().filter(|r| r.step <= step) {
        w.write(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_batch(a: BatchArgs) -> Result<()> {
    let (cfg, default_label) = load_source(&a.source)?;
    let label = a.label.clone().unwrap_or(default_label);
    for seed in 0..a.seeds {
        let cfg = with_overrides(cfg.clone(), Some(seed), a.steps, a.exec.heartbeat)?;
        run_one(cfg, &a.out.join(format!("seed_{seed}")), &a.exec, &label)?;
    }
    summarize_dir(&a.out, &a.out.join("summary.csv"))
}

fn collect_reports(dir: &Path, out: &mut Vec<EventReport>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "events.json") {
            let text = fs::read_to_string(&path)?;
            out.push(
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?,
            );
        }
    }
    Ok(())
}

fn summarize_dir(input: &Path, out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    collect_reports(input, &mut reports).with_context(|| format!("reading {}", input.display()))?;
    let rows = summarize_runs(&reports)?;
    write_summary_csv(&rows, File::create(out)?)?;
    for r in &rows {
        writeln!(
            io::stdout(),
            "{}: mining {} extinct {}",
            r.label,
            r.mining,
            r.extinct
        )?;
    }
    Ok(())
}

fn cmd_summarize(a: SummarizeArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.input.join("summary.csv"));
    summarize_dir(&a.input, &out)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let (cfg, world, _) =
        load_snapshot(&a.snapshot).with_context(|| format!("loading {}", a.snapshot.display()))?;
    render_map_image(&world, &cfg, &a.out)?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let cfg = load_config(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&cfg)?)?;
    Ok(())
}

fn cmd_terrain(a: TerrainArgs) -> Result<()> {
    let (cfg, _) = load_source(&a.source)?;
    let cfg = with_overrides(
        SimConfig {
            initial_population: 0,
            ..cfg
        },
        a.seed,
        None,
        None,
    )?;
    let (world, _) = init_world(&cfg)?;
    write_heightfield_png(&world, &a.out)?;
    Ok(())
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<io::Error>()
        .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

/// Validation and usage problems exit 1, everything else 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    use ecosim_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::Parse(_)
                | E::SchemaVersion { .. }
                | E::UnknownPreset(_)
                | E::UnknownTerrain(_)
                | E::GridTooSmall(_)
                | E::NotEnoughCells { .. } => 1,
                _ => 2,
            };
        }
        if cause.is::<ecosim_core::ConfigError>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Resume(a) => cmd_resume(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Render(a) => cmd_render(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Terrain(a) => cmd_terrain(a),
        Command::Presets => {
            let mut out = io::stdout().lock();
            preset_names()
                .iter()
                .try_for_each(|name| writeln!(out, "{name}"))
                .map_err(Into::into)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
