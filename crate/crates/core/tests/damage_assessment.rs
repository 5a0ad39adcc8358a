use blastcast::damage::{
    classify, damage_map, peak_overpressure, point_load, positive_impulse, write_damage, Criterion, DamageConfig,
    DamageLevel, DamageRasterManifest, OBSTACLE_CODE,
};
use blastcast::euler2d::FrameSequence;
use blastcast::field::Field2;
use blastcast::scenario::GridSpec;
use blastcast::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = 102_759.0;

/// Damage-curve constants written out literally, mildest first.
const CURVES: [(DamageLevel, f64, f64, f64); 4] = [
    (DamageLevel::Minor, 6.205, 0.517, 3.185),
    (DamageLevel::Moderate, 11.721, 0.931, 10.934),
    (DamageLevel::Severe, 24.821, 1.827, 45.161),
    (DamageLevel::Total, 48.263, 3.068, 147.367),
];

fn level_oracle(dp: f64, i: f64) -> DamageLevel {
    let mut level = DamageLevel::None;
    for (l, a, b, c) in CURVES {
        if dp > a && i > b && (dp - a) * (i - b) >= c {
            level = l;
        }
    }
    level
}

/// Peak and first-phase trapezoid written as plain loops, the last interval
/// cut at the ambient crossing.
fn load_oracle(h: &[f64], dt: f64) -> (f64, f64) {
    let mut peak = 0.0f64;
    for &p in h {
        peak = peak.max((p - PI) / 1000.0);
    }
    let mut area = 0.0;
    let mut started = false;
    for k in 0..h.len() {
        if !started {
            started = h[k] > PI;
            if !started {
                continue;
            }
        }
        if k + 1 == h.len() {
            break;
        }
        let (e0, e1) = (h[k] - PI, h[k + 1] - PI);
        if e1 <= 0.0 {
            // triangle up to where the segment meets ambient
            let crossing = dt * e0 / (e0 - e1);
            area += 0.5 * e0 * crossing;
            break;
        }
        area += 0.5 * (e0 + e1) * dt;
    }
    (peak, area / 1000.0)
}

#[test]
fn default_constants_match_the_table() {
    let cfg = DamageConfig::default();
    assert_eq!(cfg.p_ambient, PI);
    for (c, (l, a, b, k)) in cfg.criteria.iter().zip(CURVES) {
        assert_eq!((c.level, c.a, c.b, c.c), (l, a, b, k));
    }
    cfg.validate().unwrap();
}

#[test]
fn classification_examples() {
    let cfg = DamageConfig::default();
    assert_eq!(classify(100.0, 10.0, &cfg), DamageLevel::Total);
    assert!(((100.0f64 - 48.263) * (10.0 - 3.068) - 358.6).abs() < 0.1);
    for i in [0.0, 1.0, 10.0, 1e6] {
        assert_eq!(classify(5.0, i, &cfg), DamageLevel::None);
    }
    assert_eq!(classify(20.0, 2.0, &cfg), DamageLevel::Minor);
    assert!(((20.0f64 - 11.721) * (2.0 - 0.931) - 8.85).abs() < 0.01);
}

#[test]
fn points_on_a_curve_count_as_that_level() {
    let cfg = DamageConfig::default();
    // exactly representable point on the minor hyperbola
    let c = Criterion {
        level: DamageLevel::Minor,
        a: 1.0,
        b: 1.0,
        c: 4.0,
    };
    assert!(c.satisfied(3.0, 3.0));
    assert!(!c.satisfied(3.0, 2.999));
    let dp = 6.205 + 3.185 / (2.0 - 0.517);
    assert!(classify(dp + 1e-9, 2.0, &cfg) >= DamageLevel::Minor);
}

#[test]
fn classification_matches_inequality_oracle() {
    let cfg = DamageConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let dp = rng.gen_range(0.0..150.0);
        let i = rng.gen_range(0.0..15.0);
        assert_eq!(classify(dp, i, &cfg), level_oracle(dp, i), "dp {dp}, i {i}");
    }
}

#[test]
fn classification_is_monotone() {
    let cfg = DamageConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (dp, i) = (rng.gen_range(0.0..120.0), rng.gen_range(0.0..12.0));
        let (dp2, i2) = (dp + rng.gen_range(0.0..30.0), i + rng.gen_range(0.0..3.0));
        assert!(classify(dp2, i2, &cfg) >= classify(dp, i, &cfg));
    }
}

#[test]
fn peak_overpressure_examples() {
    let cfg = DamageConfig::default();
    assert_eq!(peak_overpressure(&[PI; 20], &cfg), 0.0);
    assert_eq!(peak_overpressure(&[PI, 150_000.0, 202_759.0, 120_000.0], &cfg), 100.0);
    assert_eq!(peak_overpressure(&[90_000.0, 95_000.0], &cfg), 0.0);
    let mut h = vec![PI, 202_759.0, 150_000.0];
    h.extend([110_000.0, 104_000.0, 180_000.0]);
    assert_eq!(peak_overpressure(&h, &cfg), 100.0);
}

#[test]
fn ambient_history_has_no_impulse() {
    let cfg = DamageConfig::default();
    assert_eq!(positive_impulse(&[PI; 30], 1e-3, &cfg), (0.0, None));
    let s = point_load(&[PI; 30], 1e-3, &cfg);
    assert_eq!((s.delta_p_plus, s.i_plus, s.arrival_index), (0.0, 0.0, None));
}

#[test]
fn rectangular_pulse() {
    let cfg = DamageConfig::default();
    let dt = 1e-3;
    // 100 samples at +10 kPa span 0.1 s of plateau; the trapezoid adds a
    // half-step ramp down to the first ambient sample and none on the way up
    let mut h = vec![PI; 5];
    h.extend(std::iter::repeat_n(PI + 10_000.0, 100));
    h.extend([PI; 5]);
    let (i, arrival) = positive_impulse(&h, dt, &cfg);
    assert_eq!(arrival, Some(5));
    assert!((i - 10.0 * dt * 99.5).abs() < 1e-12, "{i}");
    assert!((i - 1.0).abs() <= 10.0 * dt);
}

fn triangle_history(samples: usize) -> (Vec<f64>, f64, f64) {
    // rises to 50 kPa at 3 ms, back to ambient at 10 ms; sampled off-grid
    let (peak, rise, dur) = (50_000.0, 3e-3, 10e-3);
    let dt = dur / samples as f64;
    let t0 = 0.2 * dur + 0.37 * dt;
    let h: Vec<f64> = (0..samples * 3 / 2)
        .map(|k| {
            let t = k as f64 * dt - t0;
            let over = if t <= 0.0 || t >= dur {
                0.0
            } else if t < rise {
                peak * t / rise
            } else {
                peak * (dur - t) / (dur - rise)
            };
            PI + over
        })
        .collect();
    (h, dt, 0.5 * 50.0 * dur)
}

#[test]
fn triangular_pulse_area_converges() {
    let cfg = DamageConfig::default();
    let (h, dt, exact) = triangle_history(100);
    let (coarse, _) = positive_impulse(&h, dt, &cfg);
    let err_coarse = ((coarse - exact) / exact).abs();
    assert!(err_coarse < 0.01, "relative error {err_coarse}");
    let (h, dt, _) = triangle_history(1000);
    let err_fine = ((positive_impulse(&h, dt, &cfg).0 - exact) / exact).abs();
    assert!(err_fine < err_coarse / 5.0, "{err_fine} vs {err_coarse}");
}

#[test]
fn only_the_first_positive_phase_counts() {
    let cfg = DamageConfig::default();
    let h = [PI, PI + 2000.0, PI + 2000.0, PI - 500.0, PI + 9000.0, PI + 9000.0, PI];
    let (i, arrival) = positive_impulse(&h, 1.0, &cfg);
    assert_eq!(arrival, Some(1));
    // 2 kPa for one step, then a ramp from 2 kPa that crosses ambient at
    // 0.8 of the next step; the undershoot and the second phase are ignored
    assert!((i - (2.0 + 0.5 * 2.0 * 0.8)).abs() < 1e-12);
}

fn sequence(frames: Vec<Field2<f32>>, dt: f64) -> FrameSequence {
    let (nx, ny) = (frames[0].nx(), frames[0].ny());
    FrameSequence {
        case_id: "probe".into(),
        grid: GridSpec {
            nx,
            ny,
            dx: 1.0,
            dy: 1.0,
        },
        dt_out: dt,
        frames,
    }
}

#[test]
fn ambient_sequence_is_all_undamaged() {
    let frames = vec![Field2::filled(8, 6, PI as f32); 12];
    let layout = Field2::from_fn(8, 6, |i, j| (i == 2 && j < 3) as u8 as f32);
    let map = damage_map(&sequence(frames, 1e-3), &layout, &DamageConfig::default()).unwrap();
    assert_eq!(map.fluid_cells, 45);
    assert_eq!(map.percentages, [100.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(map.raster().iter().filter(|&&c| c == OBSTACLE_CODE).count(), 3);
}

#[test]
fn map_matches_cellwise_oracle() {
    let (nx, ny, n) = (16, 12, 60);
    let dt = 5e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // per-cell decaying pulses with varied strength, arrival and duration
    let params: Vec<(f64, usize, f64)> = (0..nx * ny)
        .map(|_| (rng.gen_range(0.0..300.0), rng.gen_range(0..20), rng.gen_range(2.0..30.0)))
        .collect();
    let frames: Vec<Field2<f32>> = (0..n)
        .map(|k| {
            Field2::from_fn(nx, ny, |i, j| {
                let (amp, arr, tau) = params[j * nx + i];
                let over = if k < arr {
                    0.0
                } else {
                    let s = (k - arr) as f64;
                    amp * 1000.0 * (1.0 - s / tau) * (-s / tau).exp()
                };
                (PI + over) as f32
            })
        })
        .collect();
    let layout = Field2::from_fn(nx, ny, |i, j| (i > 10 && j > 8) as u8 as f32);
    let seq = sequence(frames, dt);
    let map = damage_map(&seq, &layout, &DamageConfig::default()).unwrap();
    let mut counts = [0usize; 5];
    for j in 0..ny {
        for i in 0..nx {
            if layout.get(i, j) != 0.0 {
                assert_eq!(map.levels.get(i, j), None);
                continue;
            }
            let h: Vec<f64> = seq.frames.iter().map(|f| f.get(i, j) as f64).collect();
            let (dp, imp) = load_oracle(&h, dt);
            let load = map.loads.get(i, j).unwrap();
            assert!((load.delta_p_plus - dp).abs() < 1e-9 && (load.i_plus - imp).abs() < 1e-9);
            let level = level_oracle(dp, imp);
            assert_eq!(map.levels.get(i, j), Some(level), "cell ({i}, {j}) dp {dp} i {imp}");
            counts[level as usize] += 1;
        }
    }
    let fluid: usize = counts.iter().sum();
    assert_eq!(map.fluid_cells, fluid);
    for (p, c) in map.percentages.iter().zip(counts) {
        assert!((p - 100.0 * c as f64 / fluid as f64).abs() < 1e-12);
    }
    assert!((map.percentages.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    assert!(counts.iter().filter(|&&c| c > 0).count() >= 3, "{counts:?}");
}

#[test]
fn broken_nesting_refuses_to_classify() {
    let mut cfg = DamageConfig::default();
    cfg.criteria[2].a = 5.0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let frames = vec![Field2::filled(4, 4, PI as f32); 3];
    let r = damage_map(&sequence(frames, 1e-3), &Field2::filled(4, 4, 0.0), &cfg);
    assert!(matches!(r, Err(Error::Config(_))));
    let mut cfg = DamageConfig::default();
    cfg.criteria.swap(0, 1);
    assert!(cfg.validate().is_err());
    let mut cfg = DamageConfig::default();
    cfg.criteria[0].c = -1.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn mismatched_layout_is_a_shape_error() {
    let frames = vec![Field2::filled(4, 4, PI as f32); 3];
    let r = damage_map(&sequence(frames, 1e-3), &Field2::filled(5, 4, 0.0), &DamageConfig::default());
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn written_raster_has_legend_and_shares() {
    let mut frames = vec![Field2::filled(4, 4, PI as f32); 6];
    for f in &mut frames[1..4] {
        f.set(0, 0, 400_000.0);
    }
    let layout = Field2::from_fn(4, 4, |i, j| (i == 3 && j == 3) as u8 as f32);
    let map = damage_map(&sequence(frames, 0.05), &layout, &DamageConfig::default()).unwrap();
    assert_eq!(map.levels.get(0, 0), Some(DamageLevel::Total));
    let dir = tempfile::tempdir().unwrap();
    write_damage(dir.path(), &map).unwrap();
    let raster = std::fs::read(dir.path().join("damage.bin")).unwrap();
    assert_eq!(raster, map.raster());
    assert_eq!(raster[0], DamageLevel::Total.code());
    assert_eq!(raster[15], OBSTACLE_CODE);
    let m: DamageRasterManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("damage.json")).unwrap()).unwrap();
    assert_eq!((m.nx, m.ny, m.fluid_cells), (4, 4, 15));
    assert_eq!(m.legend.len(), 6);
    let text = std::fs::read_to_string(dir.path().join("damage.txt")).unwrap();
    assert!(text.contains("total 6.667"), "{text}");
}

proptest! {
    #[test]
    fn percentages_sum_to_one_hundred(seed in any::<u64>(), nx in 2usize..10, ny in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Field2<f32>> = (0..8)
            .map(|_| Field2::from_fn(nx, ny, |_, _| rng.gen_range(90_000.0f32..600_000.0)))
            .collect();
        let layout = Field2::from_fn(nx, ny, |_, _| (rng.gen_range(0..5) == 0) as u8 as f32);
        let map = damage_map(&sequence(frames, 2e-3), &layout, &DamageConfig::default()).unwrap();
        if map.fluid_cells > 0 {
            prop_assert!((map.percentages.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
        for (cell, load) in map.levels.as_slice().iter().zip(map.loads.as_slice()) {
            if let (Some(l), Some(s)) = (cell, load) {
                prop_assert!(s.delta_p_plus >= 0.0 && s.i_plus >= 0.0);
                prop_assert_eq!(*l, level_oracle(s.delta_p_plus, s.i_plus));
            }
        }
    }
}
