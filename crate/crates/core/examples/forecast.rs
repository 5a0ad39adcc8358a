//! Rolls an untrained surrogate forward from a simulated seed window and
//! prints per-step RMSE, MAPE and R² against the solver.
//!
//! `cargo run --release --example forecast -- [steps]`

use blastcast::dataset::{compute_stats, CaseData, NormalizedCase};
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::forecast::rollout;
use blastcast::metrics::{step_series, DEFAULT_MAPE_THRESHOLD};
use blastcast::network::{Model, ModelConfig};
use blastcast::scenario::{generate_random_layout, GridSpec, LayoutParams};

fn main() -> blastcast::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let grid = GridSpec::square(32)?;
    let mut solver = SolverConfig::default();
    solver.n_out = 10 + steps;
    solver.t_end = solver.dt_out() * (solver.n_out - 1) as f64;
    let case = generate_random_layout(9, &LayoutParams::default())?;
    let data = CaseData::new(&case, simulate(&case, &grid, &solver)?);
    let stats = compute_stats(std::iter::once(&data.sequence))?;
    let norm = NormalizedCase::new(&data, &stats);

    let model = Model::<f32>::new(ModelConfig::default(), 1)?;
    let r = rollout(&model, &norm.frames[..10], 0, &norm.statics, steps)?;
    let truth: Vec<&[f32]> = norm.frames[10..].iter().map(|f| f.as_slice()).collect();
    let series = step_series(&r.normalized, &truth[..r.len()], r.first_predicted_step(), DEFAULT_MAPE_THRESHOLD)?;
    println!("step  provenance      seconds  RMSE      MAPE%     R2");
    for (m, s) in series.iter().zip(&r.steps) {
        println!(
            "{:4}  {:<14}  {:.4}  {:.3e}  {:8.2}  {:.3}",
            m.step,
            format!("{:?}", s.provenance),
            s.seconds,
            m.rmse,
            m.mape,
            m.r2
        );
    }
    if let Some(d) = r.diverged_at {
        println!("diverged at step {d}");
    }
    Ok(())
}
