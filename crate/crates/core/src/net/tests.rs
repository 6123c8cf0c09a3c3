use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Fwd;
use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::projector::{build_parallel_projector, forward as project, SystemMatrix};
use crate::simulator::{make_phantom, simulate_counts, DegradationConfig, PhantomKind};

fn small_setup(dims: (usize, usize)) -> (Arc<SystemMatrix>, TrainingPair) {
    let a = Arc::new(build_parallel_projector(dims, dims.1 / 2, dims.0).unwrap());
    let truth = crate::grid::ImageGrid::from_fn(dims.0, dims.1, |c, r| {
        let (x, y) = (c as f64 - dims.0 as f64 / 2.0, r as f64 - dims.1 as f64 / 2.0);
        if x * x + y * y < (dims.0 as f64 / 3.0).powi(2) {
            0.3 + 0.5 * ((c / 3 + r / 4) % 2) as f64
        } else {
            0.0
        }
    })
    .unwrap();
    let mut y = project(&a, &truth).unwrap();
    // Deterministic pseudo-noise keeps the counts non-negative.
    for (i, v) in y.counts.iter_mut().enumerate() {
        *v = (*v * 20.0 * (1.0 + 0.1 * ((i * 7919 % 13) as f64 / 13.0 - 0.5))).round();
    }
    let input = NetInput::new(a.clone(), &y, 20.0).unwrap();
    let pair = TrainingPair {
        input,
        truth: Tensor::from_image(&truth),
    };
    (a, pair)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn randomize(model: &mut FourierPet, seed: u64, spread: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-spread..spread);
        }
    }
}

#[test]
fn identity_at_init_for_stage_and_depth_grid() {
    let (_, pair) = small_setup((16, 16));
    for stages in 1..=4 {
        for depth in 1..=4 {
            let cfg = NetConfig {
                stages,
                depth,
                channels: 4,
                ..Default::default()
            };
            let model = FourierPet::new(cfg, 3).unwrap();
            let rec = model.reconstruct(&pair.input).unwrap();
            assert_eq!(rec.image.dims(), (16, 16));
            assert_eq!(rec.residuals.len(), stages);
            let err = max_abs_diff(rec.image.values(), pair.input.normalized.data());
            assert!(err < 1e-8, "K={stages} N={depth}: {err:e}");
        }
    }
}

#[test]
fn scm_and_apcm_are_identities_at_init() {
    let (a, pair) = small_setup((16, 16));
    let cfg = NetConfig {
        channels: 4,
        ..Default::default()
    };
    let model = FourierPet::new(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r_val: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::inference();
    let mut f = Fwd {
        g: &mut g,
        store: &model.params,
    };
    let b = f.g.constant(pair.input.normalized.clone());
    let bp = f.g.constant(pair.input.backprojection.clone());
    let pre = f.g.constant(Tensor::full(&[1, 16, 16], 1e-3));
    let r = f.g.constant(Tensor::new(vec![1, 16, 16], r_val.clone()).unwrap());
    let x = super::scm::forward(&mut f, &cfg, 0, &a, b, bp, pre, r);
    assert_eq!(f.g.data(x), &r_val[..]);
    let z = super::apcm::forward(&mut f, &cfg, 1, r);
    assert!(max_abs_diff(f.g.data(z), &r_val) < 1e-8);
}

#[test]
fn apcm_annihilates_with_open_gate_and_zero_amplitude() {
    let cfg = NetConfig {
        channels: 4,
        stages: 1,
        ..Default::default()
    };
    let mut model = FourierPet::new(cfg.clone(), 2).unwrap();
    for band in ["ll", "hl", "lh", "hh"] {
        model
            .params
            .set_value(&format!("stage0.apcm.{band}.amp.gate"), Tensor::scalar(60.0))
            .unwrap();
        model
            .params
            .set_value(&format!("stage0.apcm.{band}.amp.head.bias"), Tensor::scalar(-1.0))
            .unwrap();
    }
    let mut g = Graph::inference();
    let mut f = Fwd {
        g: &mut g,
        store: &model.params,
    };
    let v = f.g.constant(Tensor::full(&[1, 16, 16], 0.7));
    let z = super::apcm::forward(&mut f, &cfg, 0, v);
    assert!(f.g.data(z).iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn full_band_with_extra_ffns_zeroed_matches_targeted() {
    let (_, pair) = small_setup((16, 16));
    let base = NetConfig {
        channels: 4,
        stages: 2,
        depth: 1,
        ..Default::default()
    };
    let mut targeted = FourierPet::new(base.clone(), 9).unwrap();
    randomize(&mut targeted, 4, 0.2);
    let full_cfg = NetConfig {
        apcm_mode: ApcmMode::FullBand,
        ..base
    };
    let mut full = FourierPet::new(full_cfg, 9).unwrap();
    for (_, p) in targeted.params.iter() {
        full.params.set_value(&p.name, p.value.clone()).unwrap();
    }
    // The extra FFNs are residual blocks; zeroing their output layer
    // removes them exactly.
    let extra: Vec<String> = full
        .params
        .iter()
        .filter(|(_, p)| targeted.params.id(&p.name).is_none())
        .map(|(_, p)| p.name.clone())
        .collect();
    assert!(!extra.is_empty());
    for name in &extra {
        if name.contains(".out.") {
            let shape = full.params.by_name(name).unwrap().value.shape().to_vec();
            full.params.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
    }
    let a = targeted.reconstruct(&pair.input).unwrap();
    let b = full.reconstruct(&pair.input).unwrap();
    assert!(max_abs_diff(a.image.values(), b.image.values()) < 1e-12);
}

#[test]
fn dual_update_bookkeeping() {
    let (_, pair) = small_setup((16, 16));
    let cfg = NetConfig {
        channels: 4,
        stages: 3,
        depth: 1,
        ..Default::default()
    };
    let mut model = FourierPet::new(cfg, 1).unwrap();
    randomize(&mut model, 8, 0.3);
    let mut g = Graph::inference();
    let trace = model.forward(&mut g, &pair.input);
    for (k, st) in trace.stages.iter().enumerate() {
        let mu = g.data(st.mu)[0];
        let (x, z) = (g.data(st.x), g.data(st.z));
        let (u0, u1) = (g.data(st.u_prev), g.data(st.u));
        for i in 0..x.len() {
            assert_eq!(u1[i], u0[i] + mu * (x[i] - z[i]), "stage {k} pixel {i}");
        }
        let resid = x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert_eq!(resid, trace.residuals[k]);
    }
    assert!(trace.stages.windows(2).all(|w| w[0].u == w[1].u_prev));
}

#[test]
fn dual_update_special_cases() {
    let mut g = Graph::new();
    let u = g.constant(Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
    let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let z = g.constant(Tensor::new(vec![3], vec![0.5, 2.5, 3.0]).unwrap());
    let step = |g: &mut Graph, u, x, z, mu: f64| {
        let mu = g.constant(Tensor::scalar(mu));
        let d = g.sub(x, z);
        let s = g.mul_scalar(d, mu);
        let out = g.add(u, s);
        g.data(out).to_vec()
    };
    assert_eq!(step(&mut g, u, x, x, 1.7), vec![0.1, -0.2, 0.3]);
    assert_eq!(step(&mut g, u, x, z, 0.0), vec![0.1, -0.2, 0.3]);
    let zero = g.constant(Tensor::zeros(&[3]));
    assert_eq!(step(&mut g, zero, x, z, 1.0), vec![0.5, -0.5, 0.0]);
}

#[test]
fn every_parameter_gradient_matches_finite_differences() {
    let (_, pair) = small_setup((16, 16));
    for mode in [ApcmMode::Targeted, ApcmMode::FullBand] {
        let cfg = NetConfig {
            channels: 2,
            stages: 2,
            depth: 2,
            apcm_mode: mode,
            ..Default::default()
        };
        let mut model = FourierPet::new(cfg, 6).unwrap();
        randomize(&mut model, 12, 0.3);
        let weights = LossWeights::default();
        let mut g = Graph::new();
        let trace = model.forward(&mut g, &pair.input);
        let gt = g.constant(pair.truth.clone());
        let (loss, _) = composite_loss(&mut g, trace.output, gt, &weights);
        g.backward(loss).unwrap();
        model.params.zero_grad();
        model.params.accumulate(&g);

        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let analytic = model.params.get(id).grad.clone();
            let n = analytic.len();
            let mut fd = vec![0.0; n];
            for i in 0..n {
                let orig = model.params.get(id).value.data()[i];
                model.params.get_mut(id).value.data_mut()[i] = orig + 1e-5;
                let plus = evaluate_loss(&model, &pair, &weights).total;
                model.params.get_mut(id).value.data_mut()[i] = orig - 1e-5;
                let minus = evaluate_loss(&model, &pair, &weights).total;
                model.params.get_mut(id).value.data_mut()[i] = orig;
                fd[i] = (plus - minus) / 2e-5;
            }
            let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
            let err = max_abs_diff(&fd, &analytic) / scale;
            let name = &model.params.get(id).name;
            assert!(err < 1e-4, "{mode} {name}: relative error {err:e}\nfd {fd:?}\nad {analytic:?}");
        }
    }
}

#[test]
fn loss_terms_match_hand_values() {
    let mut g = Graph::new();
    let gt_val = Tensor::full(&[1, 12, 12], 0.4);
    let out_val = Tensor::full(&[1, 12, 12], 0.5);
    let gt = g.constant(gt_val.clone());
    let same = g.constant(gt_val);
    let (zero, _) = composite_loss(&mut g, same, gt, &LossWeights::default());
    assert_eq!(g.data(zero)[0], 0.0);

    let out = g.constant(out_val);
    let only_l1 = LossWeights {
        smooth_l1: 1.0,
        ssim: 0.0,
        freq: 0.0,
        smooth_l1_delta: 1.0,
    };
    let (l, terms) = composite_loss(&mut g, out, gt, &only_l1);
    // |d| = 0.1 < delta: 0.5 d^2 / delta.
    assert!((g.data(l)[0] - 0.005).abs() < 1e-15);
    assert_eq!(terms.ssim, 0.0);

    let (_, terms) = composite_loss(&mut g, out, gt, &LossWeights::default());
    // Only the DC bin differs: |0.1 * 144| over 2 * 144 entries.
    assert!((terms.freq - 0.05).abs() < 1e-12);
    assert!(terms.ssim > 0.0);
}

#[test]
fn config_metadata_round_trip_and_validation() {
    let cfg = NetConfig {
        stages: 2,
        apcm_mode: ApcmMode::FullBand,
        share_mu: true,
        rho: 0.25,
        ..Default::default()
    };
    assert_eq!(NetConfig::from_metadata(&cfg.to_metadata()).unwrap(), cfg);
    assert!("diagonal".parse::<ApcmMode>().is_err());
    let bad = NetConfig {
        stages: 0,
        ..Default::default()
    };
    assert!(FourierPet::new(bad, 0).is_err());
}

#[test]
fn shared_mu_allocates_one_scalar() {
    let cfg = NetConfig {
        share_mu: true,
        channels: 2,
        ..Default::default()
    };
    let model = FourierPet::new(cfg, 0).unwrap();
    assert_eq!(model.mu_values(), vec![1.0]);
    assert!(model.params.by_name("stage0.mu").is_none());
}

#[test]
fn rejects_mismatched_measurement() {
    let a = Arc::new(build_parallel_projector((16, 16), 8, 16).unwrap());
    let y = crate::projector::Sinogram::zeros(4, 16).unwrap();
    assert!(NetInput::new(a.clone(), &y, 1.0).is_err());
    let y = crate::projector::Sinogram::zeros(8, 16).unwrap();
    assert!(NetInput::new(a, &y, 0.0).is_err());
}

#[test]
fn training_is_deterministic_and_logs_mu_each_step() {
    let a = Arc::new(build_parallel_projector((32, 32), 16, 32).unwrap());
    let pairs: Vec<TrainingPair> = (0..3)
        .map(|s| {
            let p = make_phantom(PhantomKind::HotSpheres, (32, 32), s).unwrap();
            let d = DegradationConfig {
                seed: s,
                ..Default::default()
            };
            let acq = simulate_counts(&a, &p, &d).unwrap();
            TrainingPair {
                input: NetInput::new(a.clone(), &acq.y_low, d.dose_fraction * acq.count_scale).unwrap(),
                truth: Tensor::from_image(&p.activity),
            }
        })
        .collect();
    let net = NetConfig {
        stages: 2,
        depth: 1,
        channels: 4,
        ..Default::default()
    };
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 2,
        seed: 5,
        ..Default::default()
    };
    let run = || {
        let mut m = FourierPet::new(net.clone(), 1).unwrap();
        let report = train(&mut m, &pairs, &tc, |_| {}).unwrap();
        (m, report)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1.params, m2.params);
    assert_eq!(r1.steps, r2.steps);
    assert_eq!(r1.steps.len(), 4);
    assert!(r1.steps.iter().all(|s| s.mu.len() == 2 && s.residuals.len() == 2));
    assert_eq!(r1.epochs.len(), 2);
    assert!(train(&mut m1.clone(), &[], &tc, |_| {}).is_err());
}
