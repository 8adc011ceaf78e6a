mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtrrl_core::agent::{FeedbackMatrices, Hyperparams, RtrrlAgent, SharedAgent, SharedOptions};
use rtrrl_core::bc::{init_policy, BcConfig};
use rtrrl_core::cells::{CellKind, CellParams, CellSpec, HiddenState};
use rtrrl_core::heads::{ActorHead, CriticHead};
use rtrrl_core::online_grad::oracle::{finite_diff_grad, max_rel_error};
use rtrrl_core::policy::PretrainedPolicy;

const OBS: usize = 4;

fn policy(kind: CellKind, seed: u64) -> PretrainedPolicy {
    let spec = CellSpec::new(kind, 3, 5, 0.1).unwrap();
    init_policy(
        &spec,
        OBS,
        vec![1.0, 2.0],
        &BcConfig {
            seed,
            encoder_hidden: 6,
            ..BcConfig::default()
        },
    )
    .unwrap()
}

fn obs_stream(seed: u64, len: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|t| {
            let o = (0..OBS)
                .map(|k| ((t as f64) * 0.1 * (k as f64 + 1.0)).sin() + rng.random_range(-0.1..0.1))
                .collect();
            (o, rng.random_range(-1.0..1.0))
        })
        .collect()
}

#[test]
fn td1_accumulated_updates_equal_monte_carlo_gradient() {
    let err = common::td1_chain_gap();
    assert!(err < 1e-10, "{err}");
}

fn run(agent: &mut RtrrlAgent, stream: &[(Vec<f64>, f64)]) -> Vec<Vec<f64>> {
    let mut actions = vec![agent.begin_episode(&stream[0].0).unwrap()];
    for (o, r) in &stream[1..] {
        if let Some(a) = agent.step(o, *r, false).unwrap().action {
            actions.push(a);
        }
    }
    actions
}

#[test]
fn zero_step_sizes_leave_parameters_bitwise_unchanged() {
    for kind in CellKind::ALL {
        let p = policy(kind, 1);
        let mut agent = RtrrlAgent::new(p.clone(), 7, Hyperparams::frozen()).unwrap();
        let critic_cell = agent.critic_cell().clone();
        run(&mut agent, &obs_stream(3, 300));
        assert_eq!(agent.policy(), &p);
        assert_eq!(agent.critic_cell(), &critic_cell);
        assert_eq!(
            agent.critic_head(),
            &CriticHead::zeros(p.cell.feature_dim())
        );
    }
}

#[test]
fn same_seed_same_run() {
    let stream = obs_stream(4, 200);
    let hyper = Hyperparams {
        alpha_a: 1e-3,
        alpha_c: 1e-3,
        ..Hyperparams::default()
    };
    let mut a = RtrrlAgent::new(policy(CellKind::Lru, 2), 11, hyper.clone()).unwrap();
    let mut b = RtrrlAgent::new(policy(CellKind::Lru, 2), 11, hyper).unwrap();
    assert_eq!(run(&mut a, &stream), run(&mut b, &stream));
    assert_eq!(a.policy(), b.policy());
}

#[test]
fn actions_do_not_depend_on_future_observations() {
    let hyper = Hyperparams {
        alpha_a: 1e-3,
        alpha_c: 1e-3,
        ..Hyperparams::default()
    };
    let s1 = obs_stream(5, 120);
    let mut s2 = s1.clone();
    for (o, r) in &mut s2[60..] {
        o.iter_mut().for_each(|v| *v = -*v);
        *r += 3.0;
    }
    let mut a = RtrrlAgent::new(policy(CellKind::Lrcssm, 3), 1, hyper.clone()).unwrap();
    let mut b = RtrrlAgent::new(policy(CellKind::Lrcssm, 3), 1, hyper).unwrap();
    let (ra, rb) = (run(&mut a, &s1), run(&mut b, &s2));
    assert_eq!(ra[..60], rb[..60]);
    assert_ne!(ra[60..], rb[60..]);
}

#[test]
fn critic_learns_constant_reward() {
    let hyper = Hyperparams {
        alpha_c: 3e-2,
        alpha_a: 0.0,
        alpha_r: Some(0.0),
        gamma: 0.9,
        ..Hyperparams::default()
    };
    let mut agent = RtrrlAgent::new(policy(CellKind::Lru, 4), 3, hyper).unwrap();
    let stream: Vec<(Vec<f64>, f64)> = obs_stream(6, 3000)
        .into_iter()
        .map(|(o, _)| (o, 1.0))
        .collect();
    agent.begin_episode(&stream[0].0).unwrap();
    let mut deltas = Vec::new();
    for (o, r) in &stream[1..] {
        deltas.push(agent.step(o, *r, false).unwrap().diagnostics.delta);
    }
    let msq = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    assert!(msq(&deltas[2700..]) < 0.1 * msq(&deltas[..100]));
}

#[test]
fn feedback_matrices_stay_fixed() {
    let hyper = Hyperparams {
        alpha_a: 1e-3,
        alpha_c: 1e-3,
        ..Hyperparams::default()
    };
    let mut agent = RtrrlAgent::new(policy(CellKind::Ctrnn, 5), 2, hyper).unwrap();
    let fb = agent.feedback().clone();
    run(&mut agent, &obs_stream(7, 200));
    assert_eq!(agent.feedback(), &fb);
    assert_ne!(agent.policy(), &policy(CellKind::Ctrnn, 5));
}

#[test]
fn terminal_step_stops_the_episode() {
    let mut agent = RtrrlAgent::new(policy(CellKind::Lru, 6), 1, Hyperparams::default()).unwrap();
    let s = obs_stream(8, 3);
    agent.begin_episode(&s[0].0).unwrap();
    let r = agent.step(&s[1].0, 1.0, true).unwrap();
    assert!(r.action.is_none());
    assert_eq!(r.diagnostics.value, 0.0);
    assert!(agent.step(&s[2].0, 0.0, false).is_err());
    agent.begin_episode(&s[2].0).unwrap();
    assert!(agent.state().v_prev.is_finite());
}

#[test]
fn begin_episode_clears_traces() {
    let hyper = Hyperparams {
        alpha_a: 1e-3,
        alpha_c: 1e-3,
        ..Hyperparams::default()
    };
    let mut agent = RtrrlAgent::new(policy(CellKind::Lrcssm, 7), 1, hyper).unwrap();
    run(&mut agent, &obs_stream(9, 50));
    assert!(!agent.state().traces_are_zero());
    assert!(*agent.state().e_c.last().unwrap() > 1.0);
    agent.begin_episode(&obs_stream(10, 1)[0].0).unwrap();
    // The critic-bias trace entry counts steps since the reset, decayed.
    assert_eq!(*agent.state().e_c.last().unwrap(), 1.0);
    let hd = agent.state().actor.hidden().clone();
    let mut h = HiddenState::zeros(CellKind::Lrcssm, 5);
    let x = agent.policy().autoencoder.encode(&obs_stream(10, 1)[0].0);
    h = agent.policy().cell.step(&h, &x, 0.1).unwrap();
    assert_eq!(hd, h);
}

#[test]
fn anchor_distance_is_non_increasing_without_td() {
    let hyper = Hyperparams {
        alpha_a: 1e-2,
        alpha_c: 1e-2,
        ..Hyperparams::default()
    };
    let mut agent = RtrrlAgent::new(policy(CellKind::Lru, 8), 1, hyper).unwrap();
    let stream = obs_stream(11, 400);
    agent.begin_episode(&stream[0].0).unwrap();
    for (o, r) in &stream[1..200] {
        agent.step(o, *r, false).unwrap();
    }
    let moved = agent.anchor_distance();
    assert!(moved > 0.0);
    agent.set_zero_td(true);
    let mut last = moved;
    for (o, r) in &stream[200..] {
        let d = agent
            .step(o, *r, false)
            .unwrap()
            .diagnostics
            .anchor_distance;
        assert!(d <= last, "{d} > {last}");
        last = d;
    }
    assert!(last < moved);
}

/// With `λ_R = 0` and transported feedback the RNN trace of the shared
/// agent is the exact gradient of `v(h_t) + η_A log π(a_t | h_t)` through
/// the whole input history.
#[test]
fn shared_rnn_trace_is_exact_mixed_gradient_with_transport() {
    for kind in [CellKind::Lru, CellKind::Lrcssm] {
        let spec = CellSpec::new(kind, 3, 4, 0.1).unwrap();
        let cell = CellParams::init(&spec, 5);
        let f = spec.feature_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actor = ActorHead::init(f, vec![1.0], &mut rng);
        let critic = CriticHead::init(f, &mut rng);
        let feedback = FeedbackMatrices::transported(actor.w_out(), actor.output_dim(), &critic.w);
        let hyper = Hyperparams {
            lambda_r: 0.0,
            eta_a: 0.7,
            ..Hyperparams::frozen()
        };
        let mut agent = SharedAgent::new(
            cell.clone(),
            0.1,
            actor.clone(),
            critic.clone(),
            feedback,
            hyper,
            SharedOptions::default(),
            ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|t| (0..3).map(|k| ((t * (k + 1)) as f64 * 0.3).sin()).collect())
            .collect();
        let mut action = agent.begin_episode(&xs[0]).unwrap();
        for x in &xs[1..] {
            action = agent.step(x, 0.0, false).unwrap().action.unwrap();
        }
        let objective = |theta: &[f64]| {
            let mut c = cell.clone();
            c.set_trainable(theta);
            let mut h = HiddenState::zeros(kind, 4);
            for x in &xs {
                h = c.step(&h, x, 0.1).unwrap();
            }
            let y = c.features(&h, xs.last().unwrap());
            critic.forward(&y) + 0.7 * actor.forward(&y).log_prob(&action).unwrap()
        };
        let fd = finite_diff_grad(&cell.trainable_vec(), 1e-6, objective);
        let err = max_rel_error(agent.rnn_trace(), &fd, 1e-4);
        assert!(err < 1e-5, "{kind:?}: {err}");
    }
}

#[test]
fn shared_agent_accepts_observation_action_reward_input() {
    let spec = CellSpec::new(CellKind::Lru, 3 + 2 + 1, 4, 0.1).unwrap();
    let cell = CellParams::init(&spec, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actor = ActorHead::init(spec.feature_dim(), vec![1.0, 1.0], &mut rng);
    let fb = FeedbackMatrices::init(spec.feature_dim(), 4, &mut rng);
    let hyper = Hyperparams {
        alpha_a: 1e-3,
        alpha_c: 1e-3,
        ..Hyperparams::default()
    };
    let opts = SharedOptions {
        obs_action_reward_input: true,
    };
    let mut agent = SharedAgent::new(
        cell,
        0.1,
        actor,
        CriticHead::zeros(spec.feature_dim()),
        fb,
        hyper,
        opts,
        ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    agent.begin_episode(&[0.1, 0.2, 0.3]).unwrap();
    for t in 0..100 {
        let r = agent
            .step(&[0.1, (t as f64).sin(), 0.3], 1.0, false)
            .unwrap();
        assert!(r.diagnostics.delta.is_finite());
    }
    assert!(agent.anchor_distance() > 0.0);
}
