//! Trains a narrow surrogate for a few iterations on synthetic data and
//! writes a run directory with the loss log and weights.
//!
//! `cargo run --release --example train -- [iterations]`

use blastcast::dataset::{CaseData, NormalizedCase, WindowSet};
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::network::{Model, ModelConfig};
use blastcast::scenario::{make_scenario_suite, GridSpec, LayoutParams, SuiteKind};
use blastcast::training::{train, LossConfig, RunDir, TrainConfig};

fn main() -> blastcast::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let grid = GridSpec::square(32)?;
    let mut solver = SolverConfig::default();
    solver.t_end = solver.dt_out() * 29.0;
    solver.n_out = 30;
    let cases = make_scenario_suite(SuiteKind::RandomLayout, 2, 5, &LayoutParams::default())?;
    let data: Vec<CaseData> = cases
        .iter()
        .map(|c| Ok(CaseData::new(c, simulate(c, &grid, &solver)?)))
        .collect::<blastcast::Result<_>>()?;
    let stats = blastcast::dataset::compute_stats(data.iter().map(|d| &d.sequence))?;
    let set = WindowSet::new(data.iter().map(|d| NormalizedCase::new(d, &stats)).collect(), 10)?;

    let config = ModelConfig {
        widths: [8, 16],
        gru_width: 8,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new(config, 0)?;
    let count: usize = model.params.iter().map(|(_, p)| p.value.numel()).sum();
    println!("{count} parameters in {} tensors", model.params.len());
    let cfg = TrainConfig {
        iterations,
        batch_size: 8,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let run = RunDir {
        root: std::env::temp_dir().join("blastcast-example-train"),
    };
    std::fs::create_dir_all(&run.root)?;
    let report = train(&mut model, &set, None, &cfg, &LossConfig::default(), Some(&run))?;
    for r in report.history.iter().step_by(10) {
        println!("iter {:4}  L_data {:.4e}  L_grad {:.4e}  L_total {:.4e}", r.iteration, r.data, r.grad, r.total);
    }
    println!("weights at {}", run.weights().display());
    Ok(())
}
