mod support;

use blastcast::network::{Model, ModelConfig, Session, Stage};
use blastcast::nn::{ParamKind, Tensor};
use blastcast::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::small_model_config;

fn random_window(rng: &mut ChaCha8Rng, b: usize, cfg: &ModelConfig, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn([b, cfg.window * cfg.input_channels, h, w], |_| rng.gen_range(0.0..1.0))
}

/// Sets every parameter whose name starts with `prefix` and matches `pick`.
fn fill_params<F: blastcast::nn::Real>(
    model: &mut Model<F>,
    prefix: &str,
    pick: impl Fn(&str, ParamKind) -> bool,
    value: F,
) {
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix) && pick(&p.name, p.kind))
        .map(|(id, _)| id)
        .collect();
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    for id in ids {
        model.params.value_mut(id).data_mut().fill(value);
    }
}

#[test]
fn output_shape_for_several_batches() {
    let cfg = small_model_config(10);
    let model = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for b in [1, 2, 5] {
        let y = model.predict(&random_window(&mut rng, b, &cfg, 16, 24)).unwrap();
        assert_eq!(y.shape(), [b, 1, 16, 24]);
        assert!(y.all_finite());
    }
}

#[test]
fn default_model_maps_a_64_grid_window_to_one_frame() {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = model.predict(&random_window(&mut rng, 2, &cfg, 64, 64)).unwrap();
    assert_eq!(y.shape(), [2, 1, 64, 64]);
}

#[test]
fn malformed_windows_are_rejected() {
    let cfg = small_model_config(3);
    let model = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let wrong_channels = Tensor::<f32>::zeros([1, 11, 16, 16]);
    match model.predict(&wrong_channels) {
        Err(Error::Shape(m)) => assert!(m.contains("channel"), "{m}"),
        other => panic!("expected a shape error, got {other:?}"),
    }
    let not_divisible = Tensor::<f32>::zeros([1, 12, 18, 16]);
    assert!(matches!(model.predict(&not_divisible), Err(Error::Config(_))));
    let too_small = Tensor::<f32>::zeros([1, 12, 4, 4]);
    assert!(matches!(model.predict(&too_small), Err(Error::Config(_))));
    let empty = Tensor::<f32>::zeros([0, 12, 16, 16]);
    assert!(matches!(model.predict(&empty), Err(Error::Shape(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig {
            widths: [0, 8],
            ..small_model_config(3)
        },
        ModelConfig {
            input_channels: 3,
            ..small_model_config(3)
        },
        ModelConfig {
            attention_ratio: 16,
            ..small_model_config(3)
        },
        ModelConfig {
            spatial_kernel: 4,
            ..small_model_config(3)
        },
    ];
    for cfg in bad {
        assert!(matches!(Model::<f32>::new(cfg, 0), Err(Error::Config(_))));
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    let cfg = small_model_config(4);
    let model = Model::<f32>::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_window(&mut rng, 4, &cfg, 16, 16);
    let order = [2, 0, 3, 1];
    let parts: Vec<Tensor<f32>> = order.iter().map(|&i| x.slice_batch(i, 1)).collect();
    let xp = Tensor::stack_batch(&parts.iter().collect::<Vec<_>>());
    let y = model.predict(&x).unwrap();
    let yp = model.predict(&xp).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(yp.sample(k), y.sample(i));
    }
}

#[test]
fn evaluation_is_deterministic() {
    let cfg = small_model_config(3);
    let model = Model::<f32>::new(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_window(&mut rng, 2, &cfg, 16, 16);
    assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
    let again = Model::<f32>::new(cfg, 5).unwrap();
    assert_eq!(model.predict(&x).unwrap(), again.predict(&x).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = small_model_config(3);
    let model = Model::<f32>::new(cfg.clone(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.params.len(), model.params.len());
    for ((_, a), (_, b)) in back.params.iter().zip(model.params.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let model = Model::<f32>::new(small_model_config(3), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(Model::load(&path).is_err());
}

#[test]
fn parameter_layout_depends_only_on_config() {
    let cfg = small_model_config(3);
    let a = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let b = Model::<f32>::new(cfg, 99).unwrap();
    let layout = |m: &Model<f32>| {
        m.params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.shape()))
            .collect::<Vec<_>>()
    };
    assert_eq!(layout(&a), layout(&b));
    let names: std::collections::HashSet<_> = a.params.iter().map(|(_, p)| p.name.clone()).collect();
    assert_eq!(names.len(), a.params.len(), "parameter names are unique");
}

#[test]
fn every_ablation_builds_and_runs() {
    let base = small_model_config(3);
    let variants = [
        ModelConfig {
            use_multiscale: false,
            ..base.clone()
        },
        ModelConfig {
            use_gru: false,
            ..base.clone()
        },
        ModelConfig {
            use_encoder_decoder: false,
            ..base.clone()
        },
        ModelConfig {
            use_encoder_decoder: false,
            use_gru: false,
            ..base.clone()
        },
        ModelConfig {
            channel_mask: [true, false, true, false],
            ..base.clone()
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cfg in variants {
        let model = Model::<f32>::new(cfg.clone(), 2).unwrap();
        let y = model.predict(&random_window(&mut rng, 2, &cfg, 16, 16)).unwrap();
        assert_eq!(y.shape(), [2, 1, 16, 16], "{cfg:?}");
        assert!(y.all_finite());
    }
    let plain = Model::<f32>::new(
        ModelConfig {
            use_multiscale: false,
            ..base
        },
        2,
    )
    .unwrap();
    assert!(matches!(plain.first_stage(), Some(Stage::Plain(_))));
}

#[test]
fn without_gru_only_the_last_frame_matters() {
    let cfg = ModelConfig {
        use_gru: false,
        ..small_model_config(4)
    };
    let model = Model::<f32>::new(cfg.clone(), 6).unwrap();
    assert!(model.gru().is_none());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_window(&mut rng, 1, &cfg, 16, 16);
    let mut x2 = x.clone();
    let frame = 4 * 16 * 16;
    for v in &mut x2.data_mut()[..3 * frame] {
        *v = rng.gen_range(0.0..1.0);
    }
    assert_eq!(model.predict(&x).unwrap(), model.predict(&x2).unwrap());
    // the full model does look at earlier frames
    let full = Model::<f32>::new(small_model_config(4), 6).unwrap();
    assert_ne!(full.predict(&x).unwrap(), full.predict(&x2).unwrap());
}

#[test]
fn masked_channels_are_ignored() {
    let cfg = ModelConfig {
        channel_mask: [true, true, false, true],
        ..small_model_config(3)
    };
    let model = Model::<f32>::new(cfg.clone(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_window(&mut rng, 1, &cfg, 16, 16);
    let mut x2 = x.clone();
    let plane = 16 * 16;
    for t in 0..3 {
        let c = (t * 4 + 2) * plane;
        for v in &mut x2.data_mut()[c..c + plane] {
            *v = rng.gen_range(0.0..1.0);
        }
    }
    assert_eq!(model.predict(&x).unwrap(), model.predict(&x2).unwrap());
}

#[test]
fn without_encoder_decoder_each_pixel_is_independent() {
    let cfg = ModelConfig {
        use_encoder_decoder: false,
        use_gru: false,
        ..small_model_config(3)
    };
    let model = Model::<f32>::new(cfg.clone(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_window(&mut rng, 1, &cfg, 8, 8);
    let mut x2 = x.clone();
    let (i, j) = (3, 5);
    for c in 0..12 {
        let k = (c * 8 + j) * 8 + i;
        x2.data_mut()[k] += 0.5;
    }
    let (y, y2) = (model.predict(&x).unwrap(), model.predict(&x2).unwrap());
    for k in 0..64 {
        let changed = y.data()[k] != y2.data()[k];
        assert_eq!(changed, k == j * 8 + i, "pixel {k}");
    }
}

/// Output support of `f` when a single input pixel at the centre of an
/// `n × n` field is perturbed, as (width, height) of the changed region.
fn impulse_support(n: usize, cin: usize, f: impl Fn(&Tensor<f64>) -> Tensor<f64>) -> (usize, usize) {
    let base = Tensor::<f64>::zeros([1, cin, n, n]);
    let mut probe = base.clone();
    let c = n / 2;
    for ch in 0..cin {
        probe.data_mut()[(ch * n + c) * n + c] = 1.0;
    }
    let (a, b) = (f(&base), f(&probe));
    let [_, co, ho, wo] = a.shape();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for ch in 0..co {
        for y in 0..ho {
            for x in 0..wo {
                if a.at([0, ch, y, x]) != b.at([0, ch, y, x]) {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
    }
    let span = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap() + 1;
    (span(&xs), span(&ys))
}

#[test]
fn multiscale_branch_receptive_fields() {
    let model = Model::<f64>::new(small_model_config(3), 11).unwrap();
    let Some(Stage::MultiScale(ms)) = model.first_stage() else {
        panic!("expected a multi-scale first stage")
    };
    let branch = |k: usize| {
        let model = &model;
        move |x: &Tensor<f64>| {
            let mut s = Session::inference(&model.params);
            let v = s.input(x.clone());
            let br = ms.branches(&mut s, v);
            s.graph.value(br[k]).clone()
        }
    };
    assert_eq!(impulse_support(21, 4, branch(0)), (1, 1));
    assert_eq!(impulse_support(21, 4, branch(1)), (5, 5));
    // 1x1, then 3x3 (span 3), then 3x3 at dilation 2 (adds 4)
    assert_eq!(impulse_support(21, 4, branch(2)), (7, 7));
}

#[test]
fn multiscale_keeps_spatial_size_and_sets_width() {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::new(cfg, 0).unwrap();
    let Some(Stage::MultiScale(ms)) = model.first_stage() else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::from_fn([2, 4, 64, 64], |_| rng.gen_range(0.0f32..1.0));
    let mut s = Session::inference(&model.params);
    let v = s.input(x);
    let y = ms.apply(&mut s, v);
    assert_eq!(s.graph.shape(y), [2, 32, 64, 64]);
}

#[test]
fn multiscale_with_zero_weights_outputs_zero() {
    let mut model = Model::<f64>::new(small_model_config(3), 13).unwrap();
    fill_params(
        &mut model,
        "enc.ms1.",
        |_, k| matches!(k, ParamKind::Weight | ParamKind::Bias),
        0.0,
    );
    let Some(Stage::MultiScale(ms)) = model.first_stage() else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::from_fn([1, 4, 16, 16], |_| rng.gen_range(-1.0..1.0));
    let mut s = Session::inference(&model.params);
    let v = s.input(x);
    let y = ms.apply(&mut s, v);
    assert!(s.graph.value(y).data().iter().all(|&v| v == 0.0));
}

/// Max pool over 3x3 windows centred on even pixels, borders excluded.
fn max_pool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, h.div_ceil(2), w.div_ceil(2)], |[b, ch, oy, ox]| {
        let mut m = f64::NEG_INFINITY;
        for y in (2 * oy).saturating_sub(1)..=(2 * oy + 1).min(h - 1) {
            for xx in (2 * ox).saturating_sub(1)..=(2 * ox + 1).min(w - 1) {
                m = m.max(x.at([b, ch, y, xx]));
            }
        }
        m
    })
}

#[test]
fn reduction_is_the_sum_of_its_branches() {
    let cfg = ModelConfig::default();
    let model = Model::<f64>::new(cfg, 14).unwrap();
    let red = model.first_reduction().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Tensor::from_fn([2, 32, 64, 64], |_| rng.gen_range(-1.0..1.0));
    let mut s = Session::inference(&model.params);
    let v = s.input(x.clone());
    let br = red.branches(&mut s, v);
    let y = red.apply(&mut s, v);
    let g = &s.graph;
    assert_eq!(g.shape(y), [2, 32, 32, 32]);
    assert_eq!(g.value(br[0]), &max_pool_oracle(&x));
    for k in 0..g.value(y).numel() {
        let sum = g.value(br[0]).data()[k] + g.value(br[1]).data()[k] + g.value(br[2]).data()[k];
        assert!((g.value(y).data()[k] - sum).abs() < 1e-12);
    }
}

#[test]
fn reduction_with_zero_convs_is_the_max_pool() {
    let mut model = Model::<f64>::new(small_model_config(3), 15).unwrap();
    fill_params(&mut model, "enc.red1.", |_, k| k == ParamKind::Weight, 0.0);
    let red = model.first_reduction().unwrap();
    let x = Tensor::full([1, 8, 16, 16], 0.7);
    let mut s = Session::inference(&model.params);
    let v = s.input(x);
    let y = red.apply(&mut s, v);
    assert!(s.graph.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn cbam_gates_and_contraction() {
    let model = Model::<f64>::new(small_model_config(3), 16).unwrap();
    let Some(Stage::MultiScale(ms)) = model.first_stage() else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let x = Tensor::from_fn([2, 8, 8, 8], |_| rng.gen_range(-3.0..3.0));
        let mut s = Session::inference(&model.params);
        let v = s.input(x.clone());
        let (y, cg, sg) = ms.cbam().apply_with_gates(&mut s, v);
        let g = &s.graph;
        assert!(g.value(cg).data().iter().chain(g.value(sg).data()).all(|&v| v > 0.0 && v < 1.0));
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
    }
}

#[test]
fn cbam_with_saturated_gates_is_identity() {
    let mut model = Model::<f64>::new(small_model_config(3), 17).unwrap();
    fill_params(&mut model, "enc.ms1.cbam.", |_, k| k == ParamKind::Weight, 0.0);
    fill_params(&mut model, "enc.ms1.cbam.", |_, k| k == ParamKind::Bias, 100.0);
    let Some(Stage::MultiScale(ms)) = model.first_stage() else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = Tensor::from_fn([1, 8, 8, 8], |_| rng.gen_range(-3.0..3.0));
    let mut s = Session::inference(&model.params);
    let v = s.input(x.clone());
    let y = ms.cbam().apply(&mut s, v);
    assert_eq!(s.graph.value(y), &x);
}

#[test]
fn gru_with_zero_weights_halves_the_state() {
    let mut model = Model::<f64>::new(small_model_config(3), 18).unwrap();
    fill_params(&mut model, "gru.", |_, _| true, 0.0);
    let gru = model.gru().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = Tensor::from_fn([1, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let h = Tensor::from_fn([1, 4, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let mut s = Session::inference(&model.params);
    let xv = s.input(x);
    let xg = gru.input_gates(&mut s, xv);
    let hv = s.input(h.clone());
    let st = gru.step(&mut s, xg, hv);
    assert_eq!(s.graph.value(st.h), &h.map(|v| 0.5 * v));
    assert!(s.graph.value(st.z).data().iter().all(|&v| v == 0.5));
    let h0 = s.input(Tensor::zeros([1, 4, 4, 4]));
    let st = gru.step(&mut s, xg, h0);
    assert!(s.graph.value(st.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_gates_stay_strictly_inside_the_unit_interval() {
    let mut model = Model::<f64>::new(small_model_config(3), 19).unwrap();
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with("gru."))
        .map(|(id, _)| id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..1000 {
        let scale = rng.gen_range(0.1..2.0);
        for &id in &ids {
            for v in model.params.value_mut(id).data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        let gru = model.gru().unwrap();
        let x = Tensor::from_fn([1, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let h = Tensor::from_fn([1, 4, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let mut s = Session::inference(&model.params);
        let xv = s.input(x);
        let xg = gru.input_gates(&mut s, xv);
        let hv = s.input(h);
        let st = gru.step(&mut s, xg, hv);
        let g = &s.graph;
        assert!(g.value(st.z).data().iter().chain(g.value(st.r).data()).all(|&v| v > 0.0 && v < 1.0));
        assert!(g.value(st.h).all_finite());
    }
}

#[test]
fn cached_features_reproduce_the_full_forward() {
    let cfg = small_model_config(4);
    let model = Model::<f32>::new(cfg.clone(), 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = random_window(&mut rng, 1, &cfg, 16, 16);
    let frame = 4 * 16 * 16;
    let feats: Vec<_> = (0..4)
        .map(|t| {
            let f = Tensor::from_vec([1, 4, 16, 16], x.data()[t * frame..(t + 1) * frame].to_vec());
            model.encode_frame(&f)
        })
        .collect();
    let refs: Vec<_> = feats.iter().collect();
    assert_eq!(model.predict_from_features(&refs).unwrap(), model.predict(&x).unwrap());
    assert!(model.predict_from_features(&refs[..3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn shape_contract_for_any_multiple_of_four(h4 in 2usize..6, w4 in 2usize..6, b in 1usize..3) {
        let cfg = small_model_config(2);
        let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64((h4 * 31 + w4) as u64);
        let y = model.predict(&random_window(&mut rng, b, &cfg, 4 * h4, 4 * w4)).unwrap();
        prop_assert_eq!(y.shape(), [b, 1, 4 * h4, 4 * w4]);
    }
}
