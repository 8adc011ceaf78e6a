use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtrrl_core::bc::{
    bc_loss, evaluate_bc, flatten_params, init_policy, pretrain, split_dataset, write_params,
    Autoencoder, BcConfig, BcSequence, DemoDataset, DemoEpisode, DemoMeta, Pretrainer,
};
use rtrrl_core::cells::{CellKind, CellSpec, HiddenState};
use rtrrl_core::heads::SIGMA_FLOOR;
use rtrrl_core::online_grad::oracle::{
    bptt_gradient, finite_diff_grad, finite_diff_jacobian, max_rel_error,
};
use rtrrl_core::online_grad::CellRuntime;
use rtrrl_core::policy::PretrainedPolicy;

const OBS: usize = 5;

fn meta() -> DemoMeta {
    DemoMeta {
        obs_mode: "features".into(),
        obs_dim: OBS,
        action_dim: 2,
        action_scale: vec![0.5, 4.0],
        dt: 0.1,
        source: "synthetic".into(),
    }
}

/// Smooth observations; the action is a fixed squashed linear read of them.
fn synthetic_episode(seed: u64, len: usize) -> DemoEpisode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.random_range(0.0..6.0);
    let mut ep = DemoEpisode::default();
    for t in 0..len {
        let s = t as f64 * 0.07 + phase;
        let o: Vec<f64> = (0..OBS)
            .map(|k| ((k as f64 + 1.0) * s).sin() * 0.8 + rng.random_range(-0.05..0.05))
            .collect();
        let a = vec![
            0.5 * (o[0] - 0.5 * o[1]).tanh() * 0.9,
            4.0 * (0.7 * o[2]).tanh() * 0.9,
        ];
        ep.observations.push(o);
        ep.actions.push(a);
    }
    ep
}

fn dataset(episodes: usize, len: usize) -> DemoDataset {
    DemoDataset {
        meta: meta(),
        episodes: (0..episodes)
            .map(|i| synthetic_episode(100 + i as u64, len))
            .collect(),
    }
}

fn policy(kind: CellKind, seed: u64) -> PretrainedPolicy {
    let spec = CellSpec::new(kind, 3, 4, 0.1).unwrap();
    let cfg = BcConfig {
        seed,
        encoder_hidden: 6,
        ..BcConfig::default()
    };
    let mut p = init_policy(&spec, OBS, vec![0.5, 4.0], &cfg).unwrap();
    // Move off the zero-bias initialization so every parameter matters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut flat = flatten_params(&p);
    flat.iter_mut()
        .for_each(|v| *v += rng.random_range(-0.1..0.1));
    write_params(&mut p, &flat);
    p
}

#[test]
fn zero_encoder_maps_to_zero_latent() {
    let ae = Autoencoder::from_parts(
        OBS,
        4,
        3,
        vec![0.0; Autoencoder::encoder_len(OBS, 4, 3)],
        vec![0.0; Autoencoder::decoder_len(OBS, 4, 3)],
    )
    .unwrap();
    assert_eq!(ae.encode(&[1.0, -2.0, 3.0, 0.5, 9.0]), vec![0.0; 3]);
}

#[test]
fn zero_observation_round_trips_with_zero_biases() {
    let ae = Autoencoder::init(OBS, 4, 3, &mut ChaCha8Rng::seed_from_u64(1));
    let recon = ae.decode(&ae.encode(&[0.0; OBS]));
    assert_eq!(recon, vec![0.0; OBS]);
}

#[test]
fn encoder_jacobian_matches_finite_differences() {
    let ae = policy(CellKind::Lru, 3).autoencoder;
    let obs = [0.3, -0.7, 0.1, 0.9, -0.2];
    let jac = ae.encoder_jacobian(&obs, &ae.encode_cached(&obs));
    let p = ae.encoder_params().len();
    let fd = finite_diff_jacobian(ae.encoder_params(), 1e-6, |theta| {
        let mut a = ae.clone();
        a.encoder_params_mut().copy_from_slice(theta);
        a.encode(&obs)
    });
    for (r, row) in fd.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            assert!(
                (jac[r * p + k] - v).abs() < 1e-5,
                "({r}, {k}): {} vs {v}",
                jac[r * p + k]
            );
        }
    }
}

#[test]
fn decoder_vjp_matches_finite_differences() {
    let ae = policy(CellKind::Ctrnn, 4).autoencoder;
    let x = [0.2, -0.4, 0.6];
    let g = [1.0, -0.5, 0.25, 2.0, -1.0];
    let mut dec_grad = vec![0.0; ae.decoder_params().len()];
    let gx = ae.decoder_vjp(&x, &ae.decode_cached(&x), &g, &mut dec_grad);
    let f =
        |a: &Autoencoder, x: &[f64]| a.decode(x).iter().zip(&g).map(|(r, g)| r * g).sum::<f64>();
    let fd = finite_diff_grad(ae.decoder_params(), 1e-6, |theta| {
        let mut a = ae.clone();
        a.decoder_params_mut().copy_from_slice(theta);
        f(&a, &x)
    });
    assert!(max_rel_error(&dec_grad, &fd, 1e-6) < 1e-6);
    let fdx = finite_diff_grad(&x, 1e-6, |x| f(&ae, x));
    assert!(max_rel_error(&gx, &fdx, 1e-6) < 1e-6);
}

#[test]
fn zero_reconstruction_weight_gives_pure_nll() {
    let p = policy(CellKind::Lrcssm, 5);
    let ep = synthetic_episode(7, 6);
    let (loss, grads) = bc_loss(&p, &ep, 0.0).unwrap();
    let m = evaluate_bc(&p, std::slice::from_ref(&ep)).unwrap();
    assert!((loss - m.mean_nll).abs() < 1e-12);
    assert!(grads.decoder.iter().all(|&g| g == 0.0));
}

#[test]
fn perfect_decoder_has_zero_reconstruction_loss() {
    let mut p = policy(CellKind::Lru, 6);
    let obs = vec![0.4, -0.1, 0.3, 0.0, 0.8];
    // Decoder ignores its input and emits exactly `obs`.
    let dec = p.autoencoder.decoder_params_mut();
    let n = dec.len();
    dec.iter_mut().for_each(|v| *v = 0.0);
    dec[n - OBS..].copy_from_slice(&obs);
    let ep = DemoEpisode {
        observations: vec![obs.clone(); 3],
        actions: vec![vec![0.1, -1.0]; 3],
        rasters: None,
    };
    let (with_rec, _) = bc_loss(&p, &ep, 1.0).unwrap();
    let (without, _) = bc_loss(&p, &ep, 0.0).unwrap();
    assert_eq!(with_rec, without);
}

#[test]
fn bc_gradients_match_finite_differences_on_three_step_window() {
    for kind in CellKind::ALL {
        let p = policy(kind, 11);
        let ep = synthetic_episode(12, 3);
        let (_, grads) = bc_loss(&p, &ep, 0.5).unwrap();
        let fd = finite_diff_grad(&flatten_params(&p), 1e-6, |theta| {
            let mut q = p.clone();
            write_params(&mut q, theta);
            bc_loss(&q, &ep, 0.5).unwrap().0
        });
        let analytic = grads.flatten();
        let err = max_rel_error(&analytic, &fd, 1e-4);
        if kind == CellKind::Ctrnn {
            // RFLO drops the indirect paths, so only the encoder, decoder and
            // head blocks are exact for the dense cell.
            let ne = p.autoencoder.encoder_params().len() + p.autoencoder.decoder_params().len();
            let nc = p.cell.trainable_len();
            let mut exact = analytic[..ne].to_vec();
            exact.extend_from_slice(&analytic[ne + nc..]);
            let mut fd_exact = fd[..ne].to_vec();
            fd_exact.extend_from_slice(&fd[ne + nc..]);
            let e = max_rel_error(&exact, &fd_exact, 1e-4);
            assert!(e < 1e-4, "{kind:?}: rel error {e}");
        } else {
            assert!(err < 1e-4, "{kind:?}: rel error {err}");
        }
    }
}

#[test]
fn supervised_cell_gradient_equals_bptt_for_diagonal_cells() {
    for kind in [CellKind::Lru, CellKind::Lrcssm] {
        let p = policy(kind, 21);
        let ep = synthetic_episode(22, 50);
        let (_, grads) = bc_loss(&p, &ep, 0.3).unwrap();
        // Covectors on the state from a plain forward pass.
        let mut rt = CellRuntime::with_default_engine(&p.cell).unwrap();
        let mut inputs = Vec::new();
        let mut covectors = Vec::new();
        for (o, a) in ep.observations.iter().zip(&ep.actions) {
            let x = p.autoencoder.encode(o);
            rt.advance(&p.cell, &x, p.dt).unwrap();
            let lp = p
                .head
                .forward(&rt.features(&p.cell))
                .grad_log_prob(a)
                .unwrap();
            let neg: Vec<f64> = lp
                .output_grad
                .iter()
                .map(|g| -g / ep.len() as f64)
                .collect();
            covectors.push(Some(rt.state_covector(&p.cell, &p.head.feature_grad(&neg))));
            inputs.push(x);
        }
        let h0 = HiddenState::zeros(kind, p.cell.hidden_dim());
        let oracle = bptt_gradient(&p.cell, &h0, &inputs, p.dt, &covectors).unwrap();
        let rec = p.cell.recurrent_len();
        let err = max_rel_error(&grads.cell[..rec], &oracle, 1e-12);
        assert!(err < 1e-8, "{kind:?}: rel error {err}");
    }
}

#[test]
fn sequence_state_is_reusable_after_reset() {
    let p = policy(CellKind::Lru, 30);
    let ep = synthetic_episode(31, 8);
    let mut seq = BcSequence::new(&p).unwrap();
    let mut g1 = rtrrl_core::bc::BcGrads::zeros(&p);
    for (o, a) in ep.observations.iter().zip(&ep.actions) {
        seq.step(&p, o, a, 0.2, &mut g1).unwrap();
    }
    seq.reset();
    let mut g2 = rtrrl_core::bc::BcGrads::zeros(&p);
    for (o, a) in ep.observations.iter().zip(&ep.actions) {
        seq.step(&p, o, a, 0.2, &mut g2).unwrap();
    }
    assert_eq!(g1, g2);
}

fn small_config(seed: u64, epochs: usize) -> BcConfig {
    BcConfig {
        epochs,
        seed,
        encoder_hidden: 8,
        learning_rate: 1e-2,
        window: 25,
        ..BcConfig::default()
    }
}

#[test]
fn pretraining_is_deterministic_in_seed() {
    let data = dataset(3, 60);
    let spec = CellSpec::new(CellKind::Lrcssm, 3, 6, 0.1).unwrap();
    let (p1, c1) = pretrain(&data, &spec, &small_config(9, 3)).unwrap();
    let (p2, c2) = pretrain(&data, &spec, &small_config(9, 3)).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
    let (_, c3) = pretrain(&data, &spec, &small_config(10, 3)).unwrap();
    assert_ne!(c1, c3);
}

#[test]
fn zero_reconstruction_weight_leaves_decoder_untouched() {
    let data = dataset(3, 40);
    let spec = CellSpec::new(CellKind::Lru, 3, 4, 0.1).unwrap();
    let cfg = BcConfig {
        eta_rec: 0.0,
        ..small_config(4, 3)
    };
    let init = init_policy(&spec, OBS, data.meta.action_scale.clone(), &cfg).unwrap();
    let (trained, _) = pretrain(&data, &spec, &cfg).unwrap();
    assert_eq!(
        trained.autoencoder.decoder_params(),
        init.autoencoder.decoder_params()
    );
    assert_ne!(
        trained.autoencoder.encoder_params(),
        init.autoencoder.encoder_params()
    );
}

#[test]
fn constant_action_validation_nll_decreases() {
    let mut data = dataset(4, 60);
    for ep in &mut data.episodes {
        ep.actions.iter_mut().for_each(|a| *a = vec![0.2, -1.5]);
    }
    let spec = CellSpec::new(CellKind::Ctrnn, 3, 6, 0.1).unwrap();
    let mut trainer = Pretrainer::new(&data, &spec, &small_config(2, 10)).unwrap();
    let mut nll = Vec::new();
    for _ in 0..10 {
        nll.push(trainer.run_epoch().unwrap().val_nll);
    }
    // Three-epoch moving average.
    let smooth: Vec<f64> = nll
        .windows(3)
        .map(|w| w.iter().sum::<f64>() / 3.0)
        .collect();
    for w in smooth.windows(2) {
        assert!(w[1] < w[0], "smoothed validation NLL rose: {smooth:?}");
    }
}

#[test]
fn training_reduces_held_out_mode_error() {
    let data = dataset(4, 120);
    let spec = CellSpec::new(CellKind::Lru, 4, 8, 0.1).unwrap();
    let cfg = small_config(5, 25);
    let trainer = Pretrainer::new(&data, &spec, &cfg).unwrap();
    let val = trainer.val_split().to_vec();
    let before = evaluate_bc(trainer.policy(), &val).unwrap();
    let (trained, _) = pretrain(&data, &spec, &cfg).unwrap();
    let after = evaluate_bc(&trained, &val).unwrap();
    assert!(
        after.mode_mse < before.mode_mse,
        "{} !< {}",
        after.mode_mse,
        before.mode_mse
    );
    assert!(after.mean_nll < before.mean_nll);
    assert_eq!(evaluate_bc(&trained, &val).unwrap(), after);
}

#[test]
fn nll_respects_sigma_floor_bound() {
    let data = dataset(3, 80);
    let spec = CellSpec::new(CellKind::Lrcssm, 3, 6, 0.1).unwrap();
    let (trained, _) = pretrain(&data, &spec, &small_config(3, 5)).unwrap();
    // Per dimension: −log p ≥ log(√(2π) σ_min) + log(s (1 − (a/s)²)), and
    // clamped demo actions keep |a/s| ≤ 1 − 1e-6.
    let m = 1e-6_f64;
    let floor: f64 = data
        .meta
        .action_scale
        .iter()
        .map(|s| {
            ((2.0 * std::f64::consts::PI).sqrt() * SIGMA_FLOOR).ln()
                + (s * (1.0 - (1.0 - m).powi(2))).ln()
        })
        .sum();
    let metrics = evaluate_bc(&trained, &data.episodes).unwrap();
    for (nll, _) in metrics.per_episode {
        assert!(nll >= floor);
    }
}

#[test]
fn split_is_deterministic_and_disjoint() {
    let data = dataset(6, 10);
    let (t1, v1) = split_dataset(&data, 0.34, 8);
    let (t2, v2) = split_dataset(&data, 0.34, 8);
    assert_eq!((t1.clone(), v1.clone()), (t2, v2));
    assert_eq!(t1.len() + v1.len(), 6);
    assert_eq!(v1.len(), 2);
    for v in &v1 {
        assert!(!t1.contains(v));
    }
    let single = DemoDataset {
        meta: meta(),
        episodes: vec![synthetic_episode(1, 10)],
    };
    let (t, v) = split_dataset(&single, 0.2, 0);
    assert_eq!((t[0].len(), v[0].len()), (8, 2));
}

#[test]
fn rejects_bad_inputs() {
    let spec = CellSpec::new(CellKind::Lru, 3, 4, 0.1).unwrap();
    let empty = DemoDataset {
        meta: meta(),
        episodes: vec![],
    };
    assert!(pretrain(&empty, &spec, &small_config(0, 1)).is_err());
    assert!(pretrain(
        &dataset(2, 5),
        &spec,
        &BcConfig {
            val_fraction: 0.7,
            ..small_config(0, 1)
        }
    )
    .is_err());
    let mut bad = dataset(2, 5);
    bad.episodes[1].actions[2] = vec![0.0];
    assert!(pretrain(&bad, &spec, &small_config(0, 1)).is_err());
}

#[test]
fn diverging_training_aborts() {
    let data = dataset(3, 30);
    let spec = CellSpec::new(CellKind::Ctrnn, 3, 4, 0.1).unwrap();
    let cfg = BcConfig {
        learning_rate: 1e300,
        clip_norm: 1e300,
        ..small_config(1, 3)
    };
    assert!(pretrain(&data, &spec, &cfg).is_err());
}

#[test]
fn demo_actions_on_the_bound_are_clamped() {
    let mut data = dataset(3, 20);
    data.episodes[0].actions[0] = vec![0.5, -4.0];
    let spec = CellSpec::new(CellKind::Lru, 3, 4, 0.1).unwrap();
    let (_, curve) = pretrain(&data, &spec, &small_config(1, 1)).unwrap();
    assert!(curve[0].train_loss.is_finite());
}
