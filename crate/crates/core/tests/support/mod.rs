#![allow(dead_code)]

pub mod riemann;

use blastcast::euler2d::{stable_dt, step, ConservedState, EdgeBoundary, SolidMask, SolverConfig};
use blastcast::scenario::GridSpec;

/// L1 density error of the solver against the exact Sod solution at `t_end`,
/// on an `n × 2` strip over [0, 1] with the membrane at x = 0.5.
pub fn sod_l1_error(n: usize, t_end: f64) -> f64 {
    let grid = GridSpec {
        nx: n,
        ny: 2,
        dx: 1.0 / n as f64,
        dy: 1.0 / n as f64,
    };
    let cfg = SolverConfig {
        gamma: 1.4,
        cfl: 0.4,
        ambient_pressure: 1.0,
        ambient_density: 1.0,
        t_end,
        n_out: 2,
        edges: EdgeBoundary::Transmissive,
        ..SolverConfig::default()
    };
    let state = ConservedState::from_primitive(n, 2, 1.4, |i, _| {
        if (i as f64 + 0.5) / (n as f64) < 0.5 {
            [1.0, 0.0, 0.0, 1.0]
        } else {
            [0.125, 0.0, 0.0, 0.1]
        }
    });
    let solid = SolidMask::empty(n, 2);
    // step exactly to t_end so the comparison time is exact
    let mut s = state;
    let mut t = 0.0;
    while t < t_end {
        let dt = stable_dt(&s, &grid, &cfg, &solid).unwrap().min(t_end - t);
        s = step(&s, dt, &grid, &cfg, &solid).unwrap();
        t += dt;
    }
    let exact = riemann::sod();
    let mut err = 0.0;
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let e = exact.sample((x - 0.5) / t_end);
        err += (s.rho[i] - e.rho).abs() * grid.dx;
    }
    err
}

/// Relative L∞ difference between a square field and its 90° rotation.
pub fn rotation_asymmetry(field: &[f64], n: usize) -> f64 {
    let mut max_diff = 0.0f64;
    let mut max_val = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let a = field[j * n + i];
            // (i, j) -> (n - 1 - j, i)
            let b = field[i * n + (n - 1 - j)];
            max_diff = max_diff.max((a - b).abs());
            max_val = max_val.max(a.abs());
        }
    }
    max_diff / max_val
}

use blastcast::dataset::{CaseStatics, NormalizedCase, WindowSet};
use blastcast::field::Field2;
use blastcast::network::ModelConfig;

/// A narrow model that still exercises every block.
pub fn small_model_config(window: usize) -> ModelConfig {
    ModelConfig {
        window,
        widths: [8, 8],
        gru_width: 4,
        attention_ratio: 4,
        spatial_kernel: 3,
        ..ModelConfig::default()
    }
}

/// Normalized frames of a ring expanding from a corner, with a block of
/// "obstacle" cells, `n × n` cells per frame.
pub fn expanding_ring(case_id: &str, n: usize, frames: usize, phase: f64) -> NormalizedCase {
    let frames = (0..frames)
        .map(|k| {
            let r = 0.15 * n as f64 * (1.0 + k as f64 * 0.4 + phase);
            (0..n * n)
                .map(|c| {
                    let (x, y) = ((c % n) as f64, (c / n) as f64);
                    let d = (x * x + y * y).sqrt() - r;
                    (0.05 + 0.9 * (-d * d / 4.0).exp() / (1.0 + 0.3 * k as f64)) as f32
                })
                .collect()
        })
        .collect();
    let statics = CaseStatics {
        distance: Field2::from_fn(n, n, |i, j| ((i * i + j * j) as f32).sqrt() / (n as f32 * 1.5)),
        layout: Field2::from_fn(n, n, |i, j| (i > n / 2 && i < n / 2 + 3 && j > n / 3 && j < n / 2) as u8 as f32),
    };
    NormalizedCase {
        case_id: case_id.into(),
        frames,
        statics,
    }
}

pub fn ring_set(cases: usize, n: usize, frames: usize, window: usize) -> WindowSet {
    let cases = (0..cases)
        .map(|c| expanding_ring(&format!("ring_{c}"), n, frames, 0.37 * c as f64))
        .collect();
    WindowSet::new(cases, window).unwrap()
}
