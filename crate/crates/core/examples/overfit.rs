//! Trains the default model on a three-case random-layout suite at 64x64,
//! checkpointing along the way, then scores every checkpoint on the first
//! case: mean teacher-forced one-step R² and how many leading rollout steps
//! stay above R² = 0.9.
//!
//! `cargo run --release --example overfit -- [iterations] [checkpoint_every]`

use blastcast::dataset::{build_window, CaseData, NormalizedCase, WindowSet};
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::forecast::rollout;
use blastcast::metrics::r2;
use blastcast::network::{Model, ModelConfig};
use blastcast::scenario::{make_scenario_suite, GridSpec, LayoutParams, SuiteKind};
use blastcast::training::{train, LossConfig, RunDir, TrainConfig};

fn main() -> blastcast::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let iterations = args.next().flatten().unwrap_or(600);
    let every = args.next().flatten().unwrap_or(100);
    let grid = GridSpec::square(64)?;
    let mut solver = SolverConfig::default();
    let dt = solver.dt_out();
    solver.n_out = 100;
    solver.t_end = dt * 99.0;
    let cases = make_scenario_suite(SuiteKind::RandomLayout, 3, 7, &LayoutParams::default())?;
    let data: Vec<CaseData> = cases
        .iter()
        .map(|c| Ok(CaseData::new(c, simulate(c, &grid, &solver)?)))
        .collect::<blastcast::Result<_>>()?;
    let stats = blastcast::dataset::compute_stats(data.iter().map(|d| &d.sequence))?;
    let norm: Vec<NormalizedCase> = data.iter().map(|d| NormalizedCase::new(d, &stats)).collect();
    let set = WindowSet::new(norm.clone(), 10)?;

    let run = RunDir {
        root: std::env::temp_dir().join("blastcast-overfit"),
    };
    std::fs::create_dir_all(&run.root)?;
    let mut model = Model::<f32>::new(ModelConfig::default(), 0)?;
    let cfg = TrainConfig {
        iterations,
        eval_every: 50,
        eval_max_samples: 96,
        checkpoint_every: every,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &set, None, &cfg, &LossConfig::default(), Some(&run))?;
    for e in &report.evals {
        println!("iter {} train L_data {:.4e}", e.iteration, e.train.data);
    }
    for it in (every..=iterations).step_by(every) {
        let m = Model::<f32>::load(&run.checkpoint(it))?;
        score(it, &m, &norm[0]);
    }
    Ok(())
}

fn score(iteration: usize, model: &Model<f32>, case: &NormalizedCase) {
    let t = model.config.window;
    let mut one_step = Vec::new();
    for k in 0..50 {
        let refs: Vec<&[f32]> = case.frames[k..k + t].iter().map(|f| f.as_slice()).collect();
        let y = model.predict(&build_window(&refs, k, &case.statics)).expect("predict");
        one_step.push(r2(y.data(), &case.frames[k + t]).unwrap().unwrap_or(f64::NAN));
    }
    let r = rollout(model, &case.frames[..t], 0, &case.statics, 50).expect("rollout");
    let free: Vec<f64> = r
        .normalized
        .iter()
        .enumerate()
        .map(|(k, p)| r2(p, &case.frames[t + k]).unwrap().unwrap_or(f64::NAN))
        .collect();
    let leading = free.iter().take_while(|&&v| v > 0.9).count();
    let mean = one_step.iter().sum::<f64>() / one_step.len() as f64;
    let worst = one_step.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "checkpoint {iteration}: one-step R2 mean {mean:.4} min {worst:.4}; rollout R2 > 0.9 for {leading} leading steps; \
         rollout R2 at steps 10/20/40/59: {:.3} {:.3} {:.3} {:.3}",
        free[0], free[10], free[30], free[49]
    );
}
