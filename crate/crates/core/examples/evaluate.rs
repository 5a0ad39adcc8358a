//! Aggregates per-step metrics over several rollouts into the report table
//! and the mean/std curve plot.
//!
//! `cargo run --release --example evaluate`

use blastcast::dataset::{compute_stats, CaseData, NormalizedCase};
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::forecast::rollout;
use blastcast::metrics::{aggregate, format_report, plot_curves, step_series, StepMetrics, DEFAULT_MAPE_THRESHOLD};
use blastcast::network::{Model, ModelConfig};
use blastcast::scenario::{make_scenario_suite, GridSpec, LayoutParams, SuiteKind};

fn main() -> blastcast::Result<()> {
    let (steps, window) = (15, 10);
    let grid = GridSpec::square(32)?;
    let mut solver = SolverConfig::default();
    solver.n_out = window + steps;
    solver.t_end = solver.dt_out() * (solver.n_out - 1) as f64;
    let cases = make_scenario_suite(SuiteKind::VariableCharge, 3, 4, &LayoutParams::default())?;
    let data: Vec<CaseData> = cases
        .iter()
        .map(|c| Ok(CaseData::new(c, simulate(c, &grid, &solver)?)))
        .collect::<blastcast::Result<_>>()?;
    let stats = compute_stats(data.iter().map(|d| &d.sequence))?;
    let model = Model::<f32>::new(ModelConfig::default(), 2)?;

    let mut all: Vec<Vec<StepMetrics>> = Vec::new();
    for d in &data {
        let norm = NormalizedCase::new(d, &stats);
        let r = rollout(&model, &norm.frames[..window], 0, &norm.statics, steps)?;
        let truth: Vec<&[f32]> = norm.frames[window..].iter().map(|f| f.as_slice()).collect();
        all.push(step_series(&r.normalized, &truth, window, DEFAULT_MAPE_THRESHOLD)?);
    }
    let series: Vec<&[StepMetrics]> = all.iter().map(|s| s.as_slice()).collect();
    let agg = aggregate(&series, steps)?;
    print!("{}", format_report(&agg, steps, DEFAULT_MAPE_THRESHOLD));
    let plot = std::env::temp_dir().join("blastcast-example-curves.png");
    plot_curves(&plot, &series)?;
    println!("curves written to {}", plot.display());
    Ok(())
}
