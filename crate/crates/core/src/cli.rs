//! Command-line front end: `gen`, `train`, `forecast`, `eval`, `damage` and
//! `bench`.
//!
//! Every command writes into `--out` (refusing a non-empty directory unless
//! `--force`) together with the merged `config.toml` it ran with, prints
//! `key=value` summary lines on stdout, and on failure prints a single
//! `error kind=<kind> code=<n>: <message>` line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{ConfigBuilder, RunConfig};
use crate::damage;
use crate::dataset::{self, CaseData, DatasetIndex, NormalizationStats, NormalizedCase, WindowSet};
use crate::error::{Error, Result};
use crate::euler2d;
use crate::forecast;
use crate::metrics::{self, StepMetrics};
use crate::network::Model;
use crate::scenario::{make_scenario_suite, ScenarioCase, SuiteKind};
use crate::training::{self, RunDir};

#[derive(Debug, Parser)]
#[command(name = "blastcast", version, about = "Blast-wave simulation, surrogate training, forecasting and damage assessment")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suite seed for `gen`; initialization and shuffle seed for `train`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `gen` (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Single-threaded execution with fixed seeds.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Rollout and metric horizon in steps.
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Cells per side of the simulation grid.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override any config key, e.g. `--set train.learning_rate=1e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario suite, simulate it and write a dataset.
    Gen(GenArgs),
    /// Train the surrogate on a dataset.
    Train(TrainArgs),
    /// Autoregressive rollout of one case.
    Forecast(ForecastArgs),
    /// Per-step and aggregate rollout metrics.
    Eval(EvalArgs),
    /// Pressure-impulse damage map of a case or rollout.
    Damage(DamageArgs),
    /// Solver versus surrogate wall time on one case.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_suite)]
    pub suite: Option<SuiteKind>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Frames per case; the frame spacing of the solver config is kept.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop once the one-step training data loss drops below this.
    #[arg(long)]
    pub target_loss: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub case: String,
    /// First ground-truth frame of the seed window.
    #[arg(long)]
    pub start: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Roll out with these weights.
    #[arg(long, conflicts_with = "rollout")]
    pub weights: Option<PathBuf>,
    /// Evaluate stored rollout directories instead.
    #[arg(long)]
    pub rollout: Vec<PathBuf>,
    /// `test`, `train`, `all` or a comma-separated list of case ids.
    #[arg(long, default_value = "test")]
    pub cases: String,
    /// Skip the PNG curve plot.
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Args)]
pub struct DamageArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Assess the ground-truth frames of this case.
    #[arg(long, required_unless_present = "rollout")]
    pub case: Option<String>,
    /// Assess a stored rollout; the layout comes from its source case.
    #[arg(long, conflicts_with = "case")]
    pub rollout: Option<PathBuf>,
    /// Also write a color-mapped PNG.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub case: String,
    /// Surrogate weights; untrained weights time identically.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

fn parse_suite(s: &str) -> std::result::Result<SuiteKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit status for each error family; 2 is reserved for usage errors.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::LayoutInfeasible { .. }
        | Error::SourceOccluded { .. }
        | Error::DegenerateNormalization(_)
        | Error::SequenceTooShort { .. }
        | Error::Shape(_) => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 4,
        Error::CorruptDataset { .. } | Error::Json(_) => 5,
        Error::OutputExists(_) => 6,
        Error::SolverFailure { .. } => 7,
        Error::NonFiniteLoss { .. } => 8,
        Error::Report(_) => 9,
        Error::Io(_) => 10,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::LayoutInfeasible { .. } => "layout_infeasible",
        Error::SourceOccluded { .. } => "source_occluded",
        Error::DegenerateNormalization(_) => "degenerate_normalization",
        Error::SequenceTooShort { .. } => "sequence_too_short",
        Error::Shape(_) => "shape",
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => "missing_input",
        Error::Io(_) => "io",
        Error::CorruptDataset { .. } | Error::Json(_) => "corrupt_dataset",
        Error::OutputExists(_) => "output_exists",
        Error::SolverFailure { .. } => "solver_failure",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Report(_) => "report",
    }
}

/// Parses `std::env::args`, runs and maps the outcome to an exit status.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("error kind=usage code=2: {first}");
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={}: {msg}", error_kind(&e), exit_code(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Merges defaults, `--config`, the environment and flags.
pub fn resolve_config(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let c = &cli.common;
    let mut b = ConfigBuilder::new();
    if let Some(p) = &c.config {
        b = b.file(p)?;
    }
    b = b.env_vars(env)?;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        b = b.set(k.trim(), v.trim())?;
    }
    if let Some(j) = c.jobs {
        b = b.set_value("jobs", j)?;
    }
    if c.deterministic {
        b = b.set_value("deterministic", true)?;
    }
    if let Some(g) = c.grid {
        b = b.set_value("grid", g)?;
    }
    if let Some(h) = c.horizon {
        b = b.set_value("forecast.horizon", h)?.set_value("metrics.horizon", h)?;
    }
    match &cli.command {
        Command::Gen(a) => {
            if let Some(s) = c.seed {
                b = b.set_value("seed", s)?;
            }
            if let Some(s) = a.suite {
                b = b.set("gen.suite", &format!("\"{s}\""))?;
            }
            if let Some(n) = a.count {
                b = b.set_value("gen.count", n)?;
            }
            if let Some(f) = a.test_fraction {
                b = b.set("gen.test_fraction", &format!("{f:?}"))?;
            }
        }
        Command::Train(a) => {
            if let Some(s) = c.seed {
                b = b.set_value("train.init_seed", s)?.set_value("train.shuffle_seed", s)?;
            }
            if let Some(n) = a.iterations {
                b = b.set_value("train.iterations", n)?;
            }
            if let Some(n) = a.batch_size {
                b = b.set_value("train.batch_size", n)?;
            }
            if let Some(t) = a.target_loss {
                b = b.set("train.target_data_loss", &format!("{t:?}"))?;
            }
            if let Some(n) = a.eval_every {
                b = b.set_value("train.eval_every", n)?;
            }
        }
        Command::Forecast(a) => {
            if let Some(s) = a.start {
                b = b.set_value("forecast.start", s)?;
            }
        }
        Command::Bench(_) => {
            if let Some(s) = c.seed {
                b = b.set_value("seed", s)?;
            }
        }
        Command::Eval(_) | Command::Damage(_) => {}
    }
    let mut cfg = b.build()?;
    if let Command::Gen(GenArgs { frames: Some(n), .. }) = &cli.command {
        let dt = cfg.solver.dt_out();
        cfg.solver.n_out = *n;
        cfg.solver.t_end = dt * (*n as f64 - 1.0);
        cfg.solver.validate()?;
    }
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required"))
}

/// Runs a parsed command, returning its summary lines.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let cfg = resolve_config(cli, std::env::vars())?;
    let out = out_dir(cli)?;
    prepare_out(out, cli.common.force)?;
    cfg.write_snapshot(out)?;
    match &cli.command {
        Command::Gen(_) => cmd_gen(&cfg, out),
        Command::Train(a) => cmd_train(&cfg, a, out),
        Command::Forecast(a) => cmd_forecast(&cfg, a, out),
        Command::Eval(a) => cmd_eval(&cfg, a, out),
        Command::Damage(a) => cmd_damage(&cfg, a, out),
        Command::Bench(a) => cmd_bench(&cfg, a, out),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let grid = cfg.grid_spec()?;
    let cases = make_scenario_suite(cfg.gen.suite, cfg.gen.count, cfg.seed, &cfg.layout)?;
    let pool = thread_pool(cfg.effective_jobs())?;
    let clock = Instant::now();
    // each worker writes its own case directory and keeps only the bounds
    let bounds: Vec<Result<(String, NormalizationStats)>> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let seq = euler2d::simulate(case, &grid, &cfg.solver)?;
                let stats = dataset::compute_stats(std::iter::once(&seq))?;
                let data = CaseData::new(case, seq);
                dataset::write_case(&DatasetIndex::case_dir(out, &case.case_id), &data)?;
                log::info!("simulated {}", case.case_id);
                Ok((case.case_id.clone(), stats))
            })
            .collect()
    });
    let bounds: Vec<(String, NormalizationStats)> = bounds.into_iter().collect::<Result<_>>()?;
    let ids: Vec<String> = bounds.iter().map(|(id, _)| id.clone()).collect();
    let (train, test) = dataset::split_cases(&ids, cfg.gen.test_fraction, cfg.seed);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (id, s) in &bounds {
        if train.contains(id) {
            lo = lo.min(s.p_min);
            hi = hi.max(s.p_max);
        }
    }
    let stats = NormalizationStats::new(lo, hi)?;
    DatasetIndex {
        p_min: stats.p_min,
        p_max: stats.p_max,
        train: train.clone(),
        test: test.clone(),
    }
    .write(out)?;
    Ok(vec![
        format!("cases={}", ids.len()),
        format!("train={}", train.len()),
        format!("test={}", test.len()),
        format!("frames={}", cfg.solver.n_out),
        format!("p_min={}", stats.p_min),
        format!("p_max={}", stats.p_max),
        format!("seconds={:.3}", clock.elapsed().as_secs_f64()),
    ])
}

fn window_set(root: &Path, ids: &[String], stats: &NormalizationStats, window: usize) -> Result<WindowSet> {
    let cases = dataset::load_cases(root, ids)?;
    WindowSet::new(cases.iter().map(|c| NormalizedCase::new(c, stats)).collect(), window)
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &Path) -> Result<Vec<String>> {
    let index = DatasetIndex::read(&a.data)?;
    let stats = index.stats()?;
    let window = cfg.model.window;
    let train_set = window_set(&a.data, &index.train, &stats, window)?;
    let held_out = if index.test.is_empty() {
        None
    } else {
        Some(window_set(&a.data, &index.test, &stats, window)?)
    };
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.init_seed)?;
    let run = RunDir { root: out.to_path_buf() };
    let report = training::train(&mut model, &train_set, held_out.as_ref(), &cfg.train, &cfg.loss, Some(&run))?;
    let last = report.history.last().copied();
    let mut lines = vec![
        format!("samples={}", train_set.len()),
        format!("iterations={}", report.iterations_run),
        format!("selected_iteration={}", report.selected_iteration),
        format!("reached_target={}", report.reached_target),
        format!("weights={}", run.weights().display()),
        format!("seconds={:.3}", report.seconds),
    ];
    if let Some(l) = last {
        lines.push(format!("last_l_data={:e}", l.data));
        lines.push(format!("last_l_total={:e}", l.total));
    }
    Ok(lines)
}

/// Normalized ground-truth seed window `[start, start + T)` of a case.
fn seed_window(case: &CaseData, stats: &NormalizationStats, start: usize, window: usize) -> Result<Vec<Vec<f32>>> {
    if start + window > case.sequence.len() {
        return Err(Error::SequenceTooShort {
            frames: case.sequence.len(),
            window: start + window,
        });
    }
    Ok(case.sequence.frames[start..start + window]
        .iter()
        .map(|f| stats.normalize_field(f).into_vec())
        .collect())
}

fn cmd_forecast(cfg: &RunConfig, a: &ForecastArgs, out: &Path) -> Result<Vec<String>> {
    let model = Model::load(&a.weights)?;
    let stats = DatasetIndex::read(&a.data)?.stats()?;
    let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, &a.case))?;
    let start = cfg.forecast.start;
    let t = model.config.window;
    let initial = seed_window(&case, &stats, start, t)?;
    let result = forecast::rollout(&model, &initial, start, &case.statics, cfg.forecast.horizon)?;
    forecast::write_rollout(
        out,
        &a.case,
        case.sequence.grid,
        case.sequence.dt_out,
        &case.sequence.frames[start..start + t],
        &result,
        &stats,
    )?;
    let mut lines = vec![
        format!("case={}", a.case),
        format!("predicted={}", result.len()),
        format!("first_step={}", result.first_predicted_step()),
        format!("seconds={:.3}", result.total_seconds()),
    ];
    if let Some(d) = result.diverged_at {
        lines.push(format!("diverged_at={d}"));
    }
    Ok(lines)
}

fn select_cases(index: &DatasetIndex, spec: &str) -> Vec<String> {
    match spec {
        "test" => index.test.clone(),
        "train" => index.train.clone(),
        "all" => index.train.iter().chain(&index.test).cloned().collect(),
        list => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
    }
}

/// Step metrics of one rollout against its case. Steps the rollout never
/// reached (divergence) are kept as excluded rows so they stay visible.
fn rollout_metrics(
    preds: &[Vec<f32>],
    first_step: usize,
    expected_steps: usize,
    case: &CaseData,
    stats: &NormalizationStats,
    threshold: f64,
) -> Result<Vec<StepMetrics>> {
    let truth: Vec<Vec<f32>> = case.sequence.frames[first_step.min(case.sequence.len())..]
        .iter()
        .map(|f| stats.normalize_field(f).into_vec())
        .collect();
    let n = preds.len().min(truth.len());
    let refs: Vec<&[f32]> = truth.iter().map(|v| v.as_slice()).collect();
    let mut series = metrics::step_series(&preds[..n], &refs[..n], first_step, threshold)?;
    let reachable = expected_steps.min(truth.len());
    for k in n..reachable {
        series.push(StepMetrics {
            step: first_step + k,
            rmse: f64::NAN,
            mape: f64::NAN,
            r2: f64::NAN,
            included: false,
        });
    }
    Ok(series)
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> Result<Vec<String>> {
    let index = DatasetIndex::read(&a.data)?;
    let stats = index.stats()?;
    let theta = cfg.metrics.mape_threshold;
    let mut all: Vec<(String, Vec<StepMetrics>)> = Vec::new();
    if let Some(w) = &a.weights {
        let model = Model::load(w)?;
        let t = model.config.window;
        let ids = select_cases(&index, &a.cases);
        if ids.is_empty() {
            return Err(Error::config(format!("case selection `{}` is empty", a.cases)));
        }
        for id in ids {
            let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, &id))?;
            let start = cfg.forecast.start;
            let initial = seed_window(&case, &stats, start, t)?;
            let available = case.sequence.len() - start - t;
            let steps = cfg.forecast.horizon.min(available);
            if steps == 0 {
                return Err(Error::SequenceTooShort {
                    frames: case.sequence.len(),
                    window: start + t,
                });
            }
            let r = forecast::rollout(&model, &initial, start, &case.statics, steps)?;
            let s = rollout_metrics(&r.normalized, r.first_predicted_step(), steps, &case, &stats, theta)?;
            all.push((id, s));
        }
    } else if !a.rollout.is_empty() {
        for dir in &a.rollout {
            let (rm, seq) = forecast::read_rollout(dir)?;
            let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, &rm.source_case))?;
            let seeds = rm.seed_window[1] - rm.seed_window[0];
            let rstats = NormalizationStats::new(rm.p_min, rm.p_max)?;
            let preds: Vec<Vec<f32>> = seq.frames[seeds..]
                .iter()
                .map(|f| rstats.normalize_field(f).into_vec())
                .collect();
            let expected = preds.len() + usize::from(rm.diverged_at.is_some());
            let s = rollout_metrics(&preds, rm.first_predicted_step, expected, &case, &stats, theta)?;
            all.push((rm.source_case.clone(), s));
        }
    } else {
        return Err(Error::config("eval needs --weights or at least one --rollout"));
    }
    for (id, s) in &all {
        metrics::write_step_csv(&out.join(format!("metrics_{id}.csv")), s)?;
    }
    let series: Vec<&[StepMetrics]> = all.iter().map(|(_, s)| s.as_slice()).collect();
    let horizon = cfg.metrics.horizon;
    let agg = metrics::aggregate(&series, horizon)?;
    let report = metrics::format_report(&agg, horizon, theta);
    std::fs::write(out.join("aggregate.txt"), &report)?;
    crate::binio::write_json(&out.join("aggregate.json"), &agg)?;
    if !a.no_plot {
        metrics::plot_curves(&out.join("curves.png"), &series)?;
    }
    let mut lines: Vec<String> = report.lines().map(str::to_string).collect();
    lines.push(format!("cases={}", all.len()));
    Ok(lines)
}

fn cmd_damage(cfg: &RunConfig, a: &DamageArgs, out: &Path) -> Result<Vec<String>> {
    let (frames, layout, label) = match (&a.case, &a.rollout) {
        (Some(id), _) => {
            let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, id))?;
            (case.sequence, case.statics.layout, id.clone())
        }
        (None, Some(dir)) => {
            let (rm, seq) = forecast::read_rollout(dir)?;
            let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, &rm.source_case))?;
            (seq, case.statics.layout, format!("{}_rollout", rm.source_case))
        }
        (None, None) => return Err(Error::config("damage needs --case or --rollout")),
    };
    let map = damage::damage_map(&frames, &layout, &cfg.damage)?;
    damage::write_damage(out, &map)?;
    if a.png {
        damage::write_damage_png(&out.join("damage.png"), &map)?;
    }
    let mut lines = vec![format!("source={label}"), format!("fluid_cells={}", map.fluid_cells)];
    for l in damage::DamageLevel::ALL {
        lines.push(format!("{}={:.3}", l.name(), map.percentages[l.code() as usize]));
    }
    Ok(lines)
}

/// Solver and surrogate timings over the same horizon.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub case: String,
    pub grid: usize,
    pub steps: usize,
    pub solver_frames: usize,
    pub solver_seconds: f64,
    pub rollout_seconds: f64,
    pub speedup: f64,
}

/// Re-simulates `case` for `T + steps` frames and times a `steps`-step
/// rollout from its first `T` frames.
pub fn bench_case(case: &CaseData, model: &Model<f32>, stats: &NormalizationStats, steps: usize, cfg: &RunConfig) -> Result<BenchReport> {
    let scenario = case
        .manifest
        .scenario
        .as_ref()
        .ok_or_else(|| Error::corrupt(&case.manifest.case_id, "manifest carries no scenario geometry"))?;
    let scenario = ScenarioCase::from_manifest(scenario);
    let t = model.config.window;
    let frames = t + steps;
    let mut solver = cfg.solver.clone();
    solver.n_out = frames;
    solver.t_end = case.sequence.dt_out * (frames - 1) as f64;
    let clock = Instant::now();
    let seq = euler2d::simulate(&scenario, &case.sequence.grid, &solver)?;
    let solver_seconds = clock.elapsed().as_secs_f64();
    debug_assert_eq!(seq.len(), frames);

    let initial = seed_window(case, stats, 0, t)?;
    let clock = Instant::now();
    let r = forecast::rollout(model, &initial, 0, &case.statics, steps)?;
    let rollout_seconds = clock.elapsed().as_secs_f64();
    if let Some(d) = r.diverged_at {
        log::warn!("bench rollout diverged at step {d}");
    }
    Ok(BenchReport {
        case: case.manifest.case_id.clone(),
        grid: case.sequence.grid.nx,
        steps,
        solver_frames: frames,
        solver_seconds,
        rollout_seconds,
        speedup: solver_seconds / rollout_seconds,
    })
}

fn cmd_bench(cfg: &RunConfig, a: &BenchArgs, out: &Path) -> Result<Vec<String>> {
    let stats = DatasetIndex::read(&a.data)?.stats()?;
    let case = dataset::read_case(&DatasetIndex::case_dir(&a.data, &a.case))?;
    let model = match &a.weights {
        Some(w) => Model::load(w)?,
        None => Model::new(cfg.model.clone(), cfg.seed)?,
    };
    let r = bench_case(&case, &model, &stats, cfg.forecast.horizon, cfg)?;
    crate::binio::write_json(&out.join("bench.json"), &r)?;
    Ok(vec![
        format!("case={}", r.case),
        format!("steps={}", r.steps),
        format!("solver_seconds={:.4}", r.solver_seconds),
        format!("rollout_seconds={:.4}", r.rollout_seconds),
        format!("speedup={:.3}", r.speedup),
    ])
}
