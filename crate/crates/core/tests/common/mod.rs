//! Oracle comparisons shared by the component and acceptance tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtrrl_core::agent::{accumulate_trace, td_error};
use rtrrl_core::cells::{CellKind, CellParams, CellSpec, HiddenState};
use rtrrl_core::heads::CriticHead;
use rtrrl_core::online_grad::oracle::{bptt_gradient, finite_diff_grad, max_rel_error};
use rtrrl_core::online_grad::{rflo_advance, CellRuntime, Engine, OnlineTrace, RfloTrace};

pub fn random_inputs(seed: u64, len: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn random_covector(rng: &mut ChaCha8Rng, kind: CellKind, n: usize) -> HiddenState {
    match kind {
        CellKind::Lru => HiddenState::Complex(
            (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        ),
        _ => HiddenState::Real((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
    }
}

/// Gradient of `Σ_t Re⟨c_t, h_{t+1}⟩` from the composed forward-mode trace
/// and from the reverse-mode oracle, returned as `(online, oracle)`.
pub fn rtrl_and_bptt(
    kind: CellKind,
    n: usize,
    len: usize,
    seed: u64,
    engine: Engine,
) -> (Vec<f64>, Vec<f64>) {
    let input_dim = 3;
    let spec = CellSpec::new(kind, input_dim, n, 0.5).unwrap();
    let params = CellParams::init(&spec, seed);
    let inputs = random_inputs(seed ^ 0x55, len, input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xaa);
    let covectors: Vec<Option<HiddenState>> = (0..len)
        .map(|t| {
            if t % 3 == 1 {
                None
            } else {
                Some(random_covector(&mut rng, kind, n))
            }
        })
        .collect();
    let rec = params.recurrent_len();
    let mut online = vec![0.0; rec];
    let mut rt = CellRuntime::new(&params, engine).unwrap();
    for (x, c) in inputs.iter().zip(&covectors) {
        rt.advance(&params, x, spec.dt).unwrap();
        match (rt.trace(), c) {
            (OnlineTrace::Real(t), Some(HiddenState::Real(c))) => t.contract_into(c, &mut online),
            (OnlineTrace::Complex(t), Some(HiddenState::Complex(c))) => {
                t.contract_into(c, &mut online)
            }
            (OnlineTrace::Rflo(t), Some(HiddenState::Real(c))) => t.contract_into(c, &mut online),
            (_, None) => {}
            _ => panic!("trace and covector disagree"),
        }
    }
    let h0 = HiddenState::zeros(kind, n);
    let oracle = bptt_gradient(&params, &h0, &inputs, spec.dt, &covectors).unwrap();
    (online, oracle)
}

pub fn rtrl_rel_error(kind: CellKind, n: usize, len: usize, seed: u64) -> f64 {
    let (a, b) = rtrl_and_bptt(kind, n, len, seed, Engine::Rtrl);
    max_rel_error(&a, &b, 1e-12)
}

/// Largest entry-wise gap between `rflo_advance` iterated over a CT-RNN
/// trajectory and the explicit sum
/// `Ĵ_T[i,j] = Σ_t (1 − k_i)^{T−1−t} k_i φ'(z_{i,t}) ξ_{t,j}`, `k_i = dt/τ_i`.
pub fn rflo_closed_form_gap(n: usize, steps: usize, seed: u64) -> f64 {
    let input_dim = 3;
    let dt = 0.5;
    let spec = CellSpec::new(CellKind::Ctrnn, input_dim, n, dt).unwrap();
    let CellParams::Ctrnn(p) = CellParams::init(&spec, seed) else {
        unreachable!()
    };
    let inputs = random_inputs(seed ^ 0x77, steps, input_dim);
    let cols = p.xi_dim();
    let mut h = vec![0.0; n];
    let mut trace = RfloTrace::for_params(&p);
    let mut xis = Vec::with_capacity(steps);
    for x in &inputs {
        let xi = p.xi(&h, x);
        trace = rflo_advance(&trace, &p, &xi, dt).unwrap();
        let cell = CellParams::Ctrnn(p.clone());
        h = cell
            .step(&HiddenState::Real(h.clone()), x, dt)
            .unwrap()
            .as_real()
            .unwrap()
            .to_vec();
        xis.push(xi);
    }
    let (w, tau) = (p.w(), p.tau());
    let mut gap: f64 = 0.0;
    for i in 0..n {
        let k = dt / tau[i];
        for j in 0..cols {
            let mut sum = 0.0;
            for (t, xi) in xis.iter().enumerate() {
                let z: f64 = (0..cols).map(|c| w[i * cols + c] * xi[c]).sum();
                let d = 1.0 - z.tanh().powi(2);
                sum += (1.0 - k).powi((steps - 1 - t) as i32) * k * d * xi[j];
            }
            gap = gap.max((sum - trace.get(i, j)).abs());
        }
    }
    gap
}

/// Three-state episodic chain s0 → s1 → s2 → terminal with γ = λ = 1 and a
/// linear critic on one-hot features, parameters held fixed. Returns the
/// largest gap between the accumulated TD(λ) updates and the Monte-Carlo
/// least-squares gradient.
pub fn td1_chain_gap() -> f64 {
    let features = [
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let rewards = [0.5, -1.25, 2.0];
    let critic = CriticHead {
        w: vec![0.3, -0.7, 1.1],
        b: 0.2,
    };

    let mut e = vec![0.0; critic.param_len()];
    let mut acc = vec![0.0; critic.param_len()];
    for t in 0..3 {
        accumulate_trace(&mut e, 1.0, &critic.grad(&features[t]));
        let v = critic.forward(&features[t]);
        let v_next = if t + 1 < 3 {
            critic.forward(&features[t + 1])
        } else {
            0.0
        };
        let delta = td_error(rewards[t], v, v_next, 1.0);
        acc.iter_mut().zip(&e).for_each(|(a, e)| *a += delta * e);
    }

    // Brute force: returns by direct summation, gradient of
    // −½ Σ (G_t − v(s_t))² by central differences (exact for a quadratic).
    let returns: Vec<f64> = (0..3).map(|t| rewards[t..].iter().sum()).collect();
    let theta = critic.params();
    let mc = finite_diff_grad(&theta, 1e-3, |th| {
        let c = CriticHead {
            w: th[..3].to_vec(),
            b: th[3],
        };
        -0.5 * (0..3)
            .map(|t| (returns[t] - c.forward(&features[t])).powi(2))
            .sum::<f64>()
    });
    acc.iter()
        .zip(&mc)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
