use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtrrl_core::env::{
    car_step, center_distance_penalty, line_follow_reward, make_track, CarParams, CarState,
    DrivingEnv, EnvConfig, Expert, ExpertParams, LapSegmenter, LineFollowConfig, Modality, ObsMode,
    ObservationSpec, ShiftConfig, TrackConfig, TrackMap,
};

fn stadium() -> TrackMap {
    TrackMap::stadium(200.0, 30.0, 2.0, 4.0).unwrap()
}

#[test]
fn track_generation_is_deterministic_bounded_and_closed() {
    let cfg = TrackConfig::default();
    for seed in 0..20 {
        let a = make_track(seed, &cfg).unwrap();
        assert_eq!(a, make_track(seed, &cfg).unwrap());
        let e = cfg.bounding_half_extent();
        assert!(a
            .keypoints()
            .iter()
            .all(|p| p[0].abs() <= e && p[1].abs() <= e));
        let k = a.keypoints();
        let n = k.len();
        assert!(n >= 12);
        for i in 0..n {
            let (p, q) = (k[i], k[(i + 1) % n]);
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            assert!(
                (d - cfg.keypoint_spacing).abs() < 0.25 * cfg.keypoint_spacing,
                "seed {seed} gap {i}: {d}"
            );
        }
        assert!(a.is_simple());
    }
    assert_ne!(make_track(1, &cfg).unwrap(), make_track(2, &cfg).unwrap());
}

#[test]
fn exported_track_parses_back() {
    let t = make_track(4, &TrackConfig::default()).unwrap();
    let back = TrackMap::parse_points(&t.export_points()).unwrap();
    assert_eq!(back.keypoints(), t.keypoints());
    assert_eq!(back.half_width(), t.half_width());
    assert!(TrackMap::parse_points("# keypoints 3 half_width 1 start 0\n0 0\n").is_err());
}

#[test]
fn zero_speed_and_zero_accel_keeps_position() {
    let mut env =
        DrivingEnv::new(stadium(), EnvConfig::default(), ShiftConfig::identity()).unwrap();
    env.reset();
    let p = env.state().position;
    for _ in 0..10 {
        env.step(&[0.3, 0.0]).unwrap();
    }
    assert_eq!(env.state().position, p);
}

#[test]
fn straight_driving_keeps_lateral_offset() {
    let mut env =
        DrivingEnv::new(stadium(), EnvConfig::default(), ShiftConfig::identity()).unwrap();
    let start = CarState {
        position: [20.0, -29.0],
        heading: 0.0,
        speed: 6.0,
        steer: 0.0,
        prev_steer: 0.0,
    };
    env.reset_to(start);
    let mut laterals = Vec::new();
    for _ in 0..100 {
        laterals.push(env.step(&[0.0, 0.3]).unwrap().info.lateral);
    }
    assert!(
        laterals.iter().all(|l| (l - 1.0).abs() < 1e-9),
        "{laterals:?}"
    );
}

#[test]
fn constant_steering_drives_a_circle_of_bicycle_radius() {
    let p = CarParams {
        drag: 0.0,
        ..CarParams::default()
    };
    for delta in [0.1, 0.3, 0.45] {
        let expected = p.wheelbase / f64::tan(delta);
        let mut s = CarState {
            position: [0.0, 0.0],
            heading: 0.0,
            speed: 5.0,
            steer: delta,
            prev_steer: delta,
        };
        let period = 2.0 * std::f64::consts::PI * expected / s.speed;
        let dt = 0.01;
        let steps = (period / dt).round() as usize;
        let mut pts = Vec::with_capacity(steps);
        for _ in 0..steps {
            s = car_step(&s, &p, &[delta, 0.0], dt, 1.0, 1.0);
            pts.push(s.position);
        }
        let cx = pts.iter().map(|q| q[0]).sum::<f64>() / steps as f64;
        let cy = pts.iter().map(|q| q[1]).sum::<f64>() / steps as f64;
        for q in &pts {
            let r = (q[0] - cx).hypot(q[1] - cy);
            assert!(
                (r - expected).abs() / expected < 0.01,
                "delta {delta}: r {r} vs {expected}"
            );
        }
    }
}

#[test]
fn steering_gain_half_halves_curvature() {
    let p = CarParams::default();
    let s = CarState {
        position: [0.0, 0.0],
        heading: 0.2,
        speed: 5.0,
        steer: 0.25,
        prev_steer: 0.25,
    };
    let full = car_step(&s, &p, &[0.25, 0.0], 0.1, 1.0, 1.0);
    let half = car_step(&s, &p, &[0.25, 0.0], 0.1, 0.5, 1.0);
    let (k_full, k_half) = (full.heading - s.heading, half.heading - s.heading);
    assert!((k_half / k_full - 0.5).abs() < 1e-12);
}

#[test]
fn sensor_bias_adds_exactly_to_lateral_channel() {
    let track = make_track(3, &TrackConfig::default()).unwrap();
    let plain =
        DrivingEnv::new(track.clone(), EnvConfig::default(), ShiftConfig::identity()).unwrap();
    let state = CarState {
        position: [track.keypoints()[5][0] + 0.7, track.keypoints()[5][1]],
        ..*plain.state()
    };
    for b in [-1.0, -0.3, 0.75] {
        let mut e0 = plain.clone();
        let mut e1 = plain
            .with_shift(ShiftConfig {
                sensor_bias: b,
                ..ShiftConfig::identity()
            })
            .unwrap();
        let (o0, o1) = (e0.reset_to(state), e1.reset_to(state));
        assert_eq!(o1[0], o0[0] + b);
        assert_eq!(o1[1..], o0[1..]);
    }
}

#[test]
fn identity_shift_rollouts_are_bitwise_identical() {
    let track = make_track(8, &TrackConfig::default()).unwrap();
    let a = DrivingEnv::new(track.clone(), EnvConfig::default(), ShiftConfig::default()).unwrap();
    let b = a.with_shift(ShiftConfig::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actions: Vec<[f64; 2]> = (0..300)
        .map(|_| [rng.random_range(-0.1..0.1), rng.random_range(0.0..2.0)])
        .collect();
    for (mut env, mut other) in [(a.clone(), b.clone()), (a.clone(), a.clone())] {
        for act in &actions {
            assert_eq!(env.step(act).unwrap(), other.step(act).unwrap());
        }
    }
}

#[test]
fn center_penalty_matches_brute_force_minimum() {
    let track = make_track(5, &TrackConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let p = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
        let brute = track
            .keypoints()
            .iter()
            .map(|k| (p[0] - k[0]).hypot(p[1] - k[1]))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(center_distance_penalty(p, &track, 0.7), -0.7 * brute);
        assert_eq!(center_distance_penalty(p, &track, 0.0), 0.0);
    }
    assert_eq!(
        center_distance_penalty(track.keypoints()[9], &track, 3.0),
        0.0
    );
}

#[test]
fn line_follow_hinge_arithmetic() {
    let cfg = LineFollowConfig {
        distance: Modality {
            weight: 1.0,
            slack: 0.25,
            norm: 2.0,
        },
        heading: Modality {
            weight: 0.5,
            slack: 0.05,
            norm: 0.5,
        },
        steering_rate: Modality {
            weight: 0.25,
            slack: 0.2,
            norm: 2.0,
        },
    };
    // inside every slack
    assert_eq!(line_follow_reward(0.1, -0.02, 0.1, &cfg), 1.75);
    // 1·(1 − 1/2) + 0.5·(1 − 0.25/0.5) + 0 = 0.75
    assert!((line_follow_reward(1.25, 0.3, 5.0, &cfg) - 0.75).abs() < 1e-15);
    let off = LineFollowConfig {
        heading: Modality {
            weight: 0.0,
            ..cfg.heading
        },
        ..cfg
    };
    assert_eq!(
        line_follow_reward(0.5, 0.0, 0.3, &off),
        line_follow_reward(0.5, 2.0, 0.3, &off)
    );
}

#[test]
fn lap_segmenter_counts_forward_crossings_once() {
    let track = TrackMap::circle(20.0, 64, 3.0).unwrap();
    let mut seg = LapSegmenter::new(&track);
    let at = |a: f64| [20.0 * a.cos(), 20.0 * a.sin()];
    let mut laps = 0;
    let mut push = |a: f64| {
        if seg.push(at(a), 1.0).is_some() {
            laps += 1;
        }
    };
    for k in 0..=150 {
        push(k as f64 * 0.1);
    }
    // wiggle back and forth over the line near 4π
    for a in [12.5, 12.6, 12.5, 12.6, 12.5, 12.7] {
        push(a);
    }
    assert_eq!(laps, 2);
    assert_eq!(seg.completed(), 2);
    assert_eq!(seg.laps()[0].lap, 1);
    let total: f64 = seg.laps().iter().map(|l| l.reward).sum::<f64>() + seg.partial_reward();
    assert_eq!(total, seg.total_reward());
}

#[test]
fn expert_steers_straight_on_aligned_centerline() {
    let track = stadium();
    let mut ex = Expert::new(ExpertParams::default(), 0);
    let s = CarState {
        position: [50.0, -30.0],
        heading: 0.0,
        speed: 5.0,
        steer: 0.0,
        prev_steer: 0.0,
    };
    let a = ex.act(&s, &track, &CarParams::default()).unwrap();
    assert!(a[0].abs() < 1e-9);
    let outside = CarState {
        position: [50.0, -40.0],
        ..s
    };
    assert!(ex.act(&outside, &track, &CarParams::default()).is_err());
}

fn expert_run(track: &TrackMap, params: &ExpertParams, seed: u64) -> (usize, Vec<[f64; 2]>) {
    let mut env =
        DrivingEnv::new(track.clone(), EnvConfig::default(), ShiftConfig::identity()).unwrap();
    let mut ex = Expert::new(params.clone(), seed);
    let mut acts = Vec::new();
    for _ in 0..8000 {
        let a = ex.act(env.state(), env.track(), &env.config().car).unwrap();
        acts.push(a);
        let o = env.step(&a).unwrap();
        assert!(!o.info.offroad);
        if o.info.lap >= 3 {
            return (3, acts);
        }
    }
    (env.laps().completed(), acts)
}

#[test]
fn expert_completes_three_laps_on_generated_tracks() {
    let cfg = TrackConfig::default();
    let noisy = ExpertParams {
        noise_std: 0.05,
        accel_noise_std: 0.5,
        ..ExpertParams::default()
    };
    for seed in 0..20 {
        let track = make_track(seed, &cfg).unwrap();
        assert_eq!(
            expert_run(&track, &ExpertParams::default(), 0).0,
            3,
            "seed {seed}"
        );
        assert_eq!(expert_run(&track, &noisy, seed).0, 3, "noisy seed {seed}");
    }
}

#[test]
fn expert_is_deterministic() {
    let track = make_track(2, &TrackConfig::default()).unwrap();
    assert_eq!(
        expert_run(&track, &ExpertParams::default(), 1).1,
        expert_run(&track, &ExpertParams::default(), 2).1
    );
    let noisy = ExpertParams {
        noise_std: 0.05,
        ..ExpertParams::default()
    };
    assert_eq!(
        expert_run(&track, &noisy, 4).1,
        expert_run(&track, &noisy, 4).1
    );
}

#[test]
fn raster_observation_has_fixed_dimension() {
    let obs = ObservationSpec {
        mode: ObsMode::Raster,
        ..ObservationSpec::default()
    };
    let cfg = EnvConfig {
        obs,
        ..EnvConfig::default()
    };
    let mut env = DrivingEnv::new(stadium(), cfg, ShiftConfig::identity()).unwrap();
    let o = env.reset();
    assert_eq!(o.len(), 256);
    assert!(o.iter().all(|v| *v == 0.0 || *v == 1.0));
    assert!(o.iter().any(|v| *v == 1.0));
    assert_eq!(env.step(&[0.1, 1.0]).unwrap().obs.len(), 256);
}

#[test]
fn leaving_the_road_ends_the_episode_with_penalty() {
    let mut env =
        DrivingEnv::new(stadium(), EnvConfig::default(), ShiftConfig::identity()).unwrap();
    env.reset();
    let mut last = None;
    for _ in 0..500 {
        let o = env.step(&[0.5, 2.0]).unwrap();
        if o.done {
            last = Some(o);
            break;
        }
    }
    let o = last.expect("car leaves the road");
    assert!(o.info.offroad && !o.info.truncated);
    assert!(o.reward <= -EnvConfig::default().reward.offroad_penalty + 1.0);
}
