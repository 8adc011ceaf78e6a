//! Offline reference gradients used to check the online engines: reverse
//! mode over an unrolled sequence, and central finite differences.
//!
//! The reverse passes are written per cell from the update equations and
//! share no code with [`CellParams::step_jacobians`].

use num_complex::Complex64;

use crate::cells::{CellError, CellParams, CtrnnParams, HiddenState, LrcssmParams, LruParams};

/// Gradient of `L = Σ_t Re⟨c_t, h_{t+1}⟩` with respect to the recurrent
/// parameters (trainable layout, readout excluded), where `h_{t+1}` is the
/// state after consuming `inputs[t]` and `covectors[t]` is `None` when step
/// `t` contributes nothing.
pub fn bptt_gradient(
    params: &CellParams,
    h0: &HiddenState,
    inputs: &[Vec<f64>],
    dt: f64,
    covectors: &[Option<HiddenState>],
) -> Result<Vec<f64>, CellError> {
    if covectors.len() != inputs.len() {
        return Err(CellError::DimensionMismatch {
            what: "covectors",
            expected: inputs.len(),
            got: covectors.len(),
        });
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(h0.clone());
    for x in inputs {
        let next = params.step(states.last().unwrap(), x, dt)?;
        states.push(next);
    }
    match params {
        CellParams::Ctrnn(p) => Ok(ctrnn_reverse(
            p,
            &real_states(&states),
            inputs,
            dt,
            &real_covectors(covectors)?,
        )),
        CellParams::Lrcssm(p) => Ok(lrcssm_reverse(
            p,
            &real_states(&states),
            inputs,
            dt,
            &real_covectors(covectors)?,
        )),
        CellParams::Lru(p) => {
            let hs: Vec<Vec<Complex64>> = states
                .iter()
                .map(|h| h.as_complex().unwrap().to_vec())
                .collect();
            let cs = covectors
                .iter()
                .map(|c| match c {
                    None => Ok(None),
                    Some(HiddenState::Complex(v)) => Ok(Some(v.clone())),
                    Some(HiddenState::Real(v)) => {
                        Ok(Some(v.iter().map(|&r| Complex64::new(r, 0.0)).collect()))
                    }
                })
                .collect::<Result<Vec<_>, CellError>>()?;
            Ok(lru_reverse(p, &hs, inputs, dt, &cs))
        }
    }
}

/// [`bptt_gradient`] for a loss on the final state only.
pub fn bptt_final_state(
    params: &CellParams,
    h0: &HiddenState,
    inputs: &[Vec<f64>],
    dt: f64,
    covector: &HiddenState,
) -> Result<Vec<f64>, CellError> {
    let mut cs = vec![None; inputs.len()];
    if let Some(last) = cs.last_mut() {
        *last = Some(covector.clone());
    }
    bptt_gradient(params, h0, inputs, dt, &cs)
}

fn real_states(states: &[HiddenState]) -> Vec<Vec<f64>> {
    states
        .iter()
        .map(|h| h.as_real().unwrap().to_vec())
        .collect()
}

fn real_covectors(cs: &[Option<HiddenState>]) -> Result<Vec<Option<Vec<f64>>>, CellError> {
    cs.iter()
        .map(|c| match c {
            None => Ok(None),
            Some(HiddenState::Real(v)) => Ok(Some(v.clone())),
            Some(HiddenState::Complex(_)) => Err(CellError::StateKind),
        })
        .collect()
}

fn ctrnn_reverse(
    p: &CtrnnParams,
    hs: &[Vec<f64>],
    xs: &[Vec<f64>],
    dt: f64,
    cs: &[Option<Vec<f64>>],
) -> Vec<f64> {
    let (n, ni) = (p.hidden_dim(), p.input_dim());
    let cols = p.xi_dim();
    let w = p.w();
    let mut grad = vec![0.0; w.len()];
    let mut adj = vec![0.0; n];
    for t in (0..xs.len()).rev() {
        if let Some(c) = &cs[t] {
            adj.iter_mut().zip(c).for_each(|(a, c)| *a += c);
        }
        let h = &hs[t];
        let xi: Vec<f64> = xs[t]
            .iter()
            .chain(h.iter())
            .copied()
            .chain(std::iter::once(1.0))
            .collect();
        let mut prev = vec![0.0; n];
        for i in 0..n {
            let z: f64 = (0..cols).map(|j| w[i * cols + j] * xi[j]).sum();
            let rate = dt / p.tau()[i];
            let s = adj[i] * rate * (1.0 - z.tanh().powi(2));
            for j in 0..cols {
                grad[i * cols + j] += s * xi[j];
            }
            prev[i] += adj[i] * (1.0 - rate);
            for j in 0..n {
                prev[j] += s * w[i * cols + ni + j];
            }
        }
        adj = prev;
    }
    grad
}

fn lrcssm_reverse(
    p: &LrcssmParams,
    hs: &[Vec<f64>],
    xs: &[Vec<f64>],
    dt: f64,
    cs: &[Option<Vec<f64>>],
) -> Vec<f64> {
    let (n, ni) = (p.hidden_dim(), p.input_dim());
    let c = p.gate_cols();
    let mut grad = vec![0.0; n * 3 * c];
    let mut adj = vec![0.0; n];
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    for t in (0..xs.len()).rev() {
        if let Some(cv) = &cs[t] {
            adj.iter_mut().zip(cv).for_each(|(a, c)| *a += c);
        }
        for i in 0..n {
            let hi = hs[t][i];
            let mut xi: Vec<f64> = xs[t].clone();
            xi.push(hi);
            xi.push(1.0);
            let dot = |w: &[f64]| -> f64 { (0..c).map(|j| w[i * c + j] * xi[j]).sum() };
            let (za, zg, zb) = (dot(p.w_a()), dot(p.w_g()), dot(p.w_b()));
            let a = -(p.a_min() + (1.0 + za.exp()).ln()) / p.tau_max();
            let e = (a * dt).exp();
            let phi = (e - 1.0) / a;
            let dphi_da = dt * e / a - (e - 1.0) / (a * a);
            let b = sig(zg) * zb.tanh();
            let g_a = adj[i] * (dt * e * hi + dphi_da * b) * (-sig(za) / p.tau_max());
            let g_g = adj[i] * phi * zb.tanh() * sig(zg) * (1.0 - sig(zg));
            let g_b = adj[i] * phi * sig(zg) * (1.0 - zb.tanh().powi(2));
            let base = i * 3 * c;
            for j in 0..c {
                grad[base + j] += g_a * xi[j];
                grad[base + c + j] += g_g * xi[j];
                grad[base + 2 * c + j] += g_b * xi[j];
            }
            adj[i] = adj[i] * e
                + g_a * p.w_a()[i * c + ni]
                + g_g * p.w_g()[i * c + ni]
                + g_b * p.w_b()[i * c + ni];
        }
    }
    grad
}

/// Complex adjoints follow `dL = Re Σ_i ā_i dh_i`.
fn lru_reverse(
    p: &LruParams,
    hs: &[Vec<Complex64>],
    xs: &[Vec<f64>],
    dt: f64,
    cs: &[Option<Vec<Complex64>>],
) -> Vec<f64> {
    let (n, ni) = (p.hidden_dim(), p.input_dim());
    let pl = 2 + 2 * ni;
    let mut grad = vec![0.0; n * pl];
    let mut adj = vec![Complex64::new(0.0, 0.0); n];
    let iu = Complex64::i();
    for t in (0..xs.len()).rev() {
        if let Some(cv) = &cs[t] {
            adj.iter_mut().zip(cv).for_each(|(a, c)| *a += c);
        }
        for i in 0..n {
            let lam = p.a_diag()[i];
            let e = (lam * dt).exp();
            let phi = (e - 1.0) / lam;
            let dphi = dt * e / lam - (e - 1.0) / (lam * lam);
            let u: Complex64 = (0..ni).map(|j| p.b_in()[i * ni + j] * xs[t][j]).sum();
            let dh_dlam = dt * e * hs[t][i] + dphi * u;
            let base = i * pl;
            grad[base] += (adj[i] * dh_dlam).re;
            grad[base + 1] += (adj[i] * iu * dh_dlam).re;
            for j in 0..ni {
                grad[base + 2 + j] += (adj[i] * phi * xs[t][j]).re;
                grad[base + 2 + ni + j] += (adj[i] * iu * phi * xs[t][j]).re;
            }
            adj[i] *= e;
        }
    }
    grad
}

/// Central difference `(f(θ + ε) − f(θ − ε)) / 2ε` per coordinate.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(theta: &[f64], eps: f64, mut f: F) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            probe[k] = theta[k] + eps;
            let up = f(&probe);
            probe[k] = theta[k] - eps;
            let down = f(&probe);
            probe[k] = theta[k];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Central-difference Jacobian of a vector map, row-major `outputs × θ`.
pub fn finite_diff_jacobian<F: FnMut(&[f64]) -> Vec<f64>>(
    theta: &[f64],
    eps: f64,
    mut f: F,
) -> Vec<Vec<f64>> {
    let mut probe = theta.to_vec();
    let mut cols = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        probe[k] = theta[k] + eps;
        let up = f(&probe);
        probe[k] = theta[k] - eps;
        let down = f(&probe);
        probe[k] = theta[k];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * eps))
                .collect::<Vec<_>>(),
        );
    }
    let rows = cols.first().map_or(0, |c| c.len());
    (0..rows)
        .map(|r| cols.iter().map(|c| c[r]).collect())
        .collect()
}

/// Finite-difference gradient of `probe` with respect to a cell's trainable
/// parameters.
pub fn finite_diff_cell<F: FnMut(&CellParams) -> f64>(
    params: &CellParams,
    eps: f64,
    mut probe: F,
) -> Vec<f64> {
    let theta = params.trainable_vec();
    let mut scratch = params.clone();
    finite_diff_grad(&theta, eps, |t| {
        scratch.set_trainable(t);
        probe(&scratch)
    })
}

/// Largest `|a − b| / max(|b|, floor)` over two vectors.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_derivative() {
        let g = finite_diff_grad(&[0.7], 1e-6, |t| 3.0 * t[0]);
        assert!((g[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_derivative() {
        let g = finite_diff_grad(&[1.0], 1e-5, |t| t[0] * t[0]);
        assert!((g[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn jacobian_of_linear_map() {
        let j = finite_diff_jacobian(&[1.0, 2.0], 1e-6, |t| vec![t[0] + 2.0 * t[1], -t[0]]);
        assert!((j[0][0] - 1.0).abs() < 1e-8 && (j[0][1] - 2.0).abs() < 1e-8);
        assert!((j[1][0] + 1.0).abs() < 1e-8 && j[1][1].abs() < 1e-8);
    }
}
