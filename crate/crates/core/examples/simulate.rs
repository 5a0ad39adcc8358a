//! Simulates one random-layout case and prints the peak overpressure and
//! total energy every 20 frames.
//!
//! `cargo run --release --example simulate -- [grid]`

use blastcast::euler2d::{simulate_with_stats, SolverConfig};
use blastcast::scenario::{generate_random_layout, GridSpec, LayoutParams};

fn main() -> blastcast::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let case = generate_random_layout(3, &LayoutParams::default())?;
    let grid = GridSpec::square(n)?;
    let cfg = SolverConfig::default();
    let (seq, stats) = simulate_with_stats(&case, &grid, &cfg)?;
    println!(
        "{}: {} frames, {} solver steps, dt in [{:.2e}, {:.2e}] s",
        case.case_id,
        seq.len(),
        stats.steps,
        stats.min_dt,
        stats.max_dt
    );
    for (k, f) in seq.frames.iter().enumerate().step_by(20) {
        let max = f.as_slice().iter().fold(0.0f32, |a, &b| a.max(b)) as f64;
        println!("frame {k:3}  t={:.4} s  peak overpressure {:.1} kPa", stats.capture_times[k], (max - cfg.ambient_pressure) / 1e3);
    }
    Ok(())
}
