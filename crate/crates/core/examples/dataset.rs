//! Simulates a small suite, writes it as a dataset, reads it back and builds
//! the sliding-window training samples.
//!
//! `cargo run --release --example dataset`

use blastcast::dataset::{self, CaseData, DatasetIndex, NormalizedCase, WindowSet};
use blastcast::euler2d::{simulate, SolverConfig};
use blastcast::scenario::{make_scenario_suite, GridSpec, LayoutParams, SuiteKind};

fn main() -> blastcast::Result<()> {
    let root = std::env::temp_dir().join("blastcast-example-dataset");
    let _ = std::fs::remove_dir_all(&root);
    let grid = GridSpec::square(32)?;
    let mut solver = SolverConfig::default();
    solver.t_end = solver.dt_out() * 39.0;
    solver.n_out = 40;

    let cases = make_scenario_suite(SuiteKind::RandomLayout, 4, 2, &LayoutParams::default())?;
    let mut ids = Vec::new();
    for c in &cases {
        let data = CaseData::new(c, simulate(c, &grid, &solver)?);
        dataset::write_case(&DatasetIndex::case_dir(&root, &c.case_id), &data)?;
        ids.push(c.case_id.clone());
    }
    let (train, test) = dataset::split_cases(&ids, 0.25, 2);
    let loaded = dataset::load_cases(&root, &train)?;
    let stats = dataset::compute_stats(loaded.iter().map(|c| &c.sequence))?;
    DatasetIndex {
        p_min: stats.p_min,
        p_max: stats.p_max,
        train: train.clone(),
        test: test.clone(),
    }
    .write(&root)?;

    let set = WindowSet::new(loaded.iter().map(|c| NormalizedCase::new(c, &stats)).collect(), 10)?;
    let (x, y) = set.batch(&[0, 1, 2]);
    println!("dataset at {}", root.display());
    println!("train {train:?}, test {test:?}");
    println!("pressure range [{:.0}, {:.0}] Pa", stats.p_min, stats.p_max);
    println!("{} windows; batch input {:?}, target {:?}", set.len(), x.shape(), y.shape());
    Ok(())
}
