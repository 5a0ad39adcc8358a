//! Times the solver against a surrogate rollout over the same horizon on one
//! case.
//!
//! `cargo run --release --example bench -- [grid] [steps]`

use blastcast::cli::bench_case;
use blastcast::config::RunConfig;
use blastcast::dataset::{compute_stats, CaseData};
use blastcast::euler2d::simulate;
use blastcast::network::Model;
use blastcast::scenario::{generate_random_layout, GridSpec};

fn main() -> blastcast::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let n = args.next().flatten().unwrap_or(64);
    let steps = args.next().flatten().unwrap_or(280);
    let cfg = RunConfig::default();
    let grid = GridSpec::square(n)?;
    let case = generate_random_layout(5, &cfg.layout)?;
    let data = CaseData::new(&case, simulate(&case, &grid, &cfg.solver)?);
    let stats = compute_stats(std::iter::once(&data.sequence))?;
    let model = Model::<f32>::new(cfg.model.clone(), 0)?;
    let r = bench_case(&data, &model, &stats, steps, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}
