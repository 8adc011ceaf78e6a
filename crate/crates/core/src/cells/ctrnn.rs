use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, CellError};
use crate::online_grad::{CellJacobians, JacobianTrace, StateJacobian, TraceLayout};

/// Dense continuous-time RNN, `τ ḣ = −h + tanh(W ξ)` with `ξ = [x; h; 1]`.
///
/// Only `W` is trainable; `τ` is frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtrnnParams {
    input_dim: usize,
    hidden_dim: usize,
    /// Row-major `N × (I + N + 1)`: input, recurrent, bias columns.
    w: Vec<f64>,
    tau: Vec<f64>,
}

impl CtrnnParams {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        w: Vec<f64>,
        tau: Vec<f64>,
    ) -> Result<Self, CellError> {
        let p = Self {
            input_dim,
            hidden_dim,
            w,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let cols = input_dim + hidden_dim + 1;
        let bound = 1.0 / (cols as f64).sqrt();
        let w = (0..hidden_dim * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        // log-uniform on [1, 10]
        let tau = (0..hidden_dim)
            .map(|_| 10f64.powf(rng.random_range(0.0..1.0)))
            .collect();
        Self {
            input_dim,
            hidden_dim,
            w,
            tau,
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        check_len("CT-RNN W", self.hidden_dim * self.xi_dim(), self.w.len())?;
        check_len("CT-RNN tau", self.hidden_dim, self.tau.len())?;
        if self.tau.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(CellError::InvalidParameters(
                "time constants must be finite and positive".into(),
            ));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(CellError::InvalidParameters(
                "non-finite CT-RNN weight".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn xi_dim(&self) -> usize {
        self.input_dim + self.hidden_dim + 1
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn min_tau(&self) -> f64 {
        self.tau.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn xi(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        let mut xi = Vec::with_capacity(self.xi_dim());
        xi.extend_from_slice(x);
        xi.extend_from_slice(h);
        xi.push(1.0);
        xi
    }

    fn check_step(&self, h: &[f64], x: &[f64], dt: f64) -> Result<(), CellError> {
        check_len("hidden state", self.hidden_dim, h.len())?;
        check_len("input", self.input_dim, x.len())?;
        let tau_min = self.min_tau();
        if !(dt > 0.0) || dt > tau_min {
            return Err(CellError::Unstable { dt, tau_min });
        }
        Ok(())
    }

    fn preactivation(&self, i: usize, xi: &[f64]) -> f64 {
        let cols = self.xi_dim();
        self.w[i * cols..(i + 1) * cols]
            .iter()
            .zip(xi)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Explicit Euler: `h' = h + (dt/τ)(−h + tanh(Wξ))`.
    pub fn step(&self, h: &[f64], x: &[f64], dt: f64) -> Result<Vec<f64>, CellError> {
        self.check_step(h, x, dt)?;
        let xi = self.xi(h, x);
        Ok((0..self.hidden_dim)
            .map(|i| h[i] + dt / self.tau[i] * (-h[i] + self.preactivation(i, &xi).tanh()))
            .collect())
    }

    /// Step plus the dense state Jacobian and the full-layout immediate
    /// Jacobian over `W` (row-major parameter index `i·cols + j`).
    pub fn step_jacobians(
        &self,
        h: &[f64],
        x: &[f64],
        dt: f64,
    ) -> Result<CellJacobians<f64>, CellError> {
        self.check_step(h, x, dt)?;
        let n = self.hidden_dim;
        let ni = self.input_dim;
        let cols = self.xi_dim();
        let p = n * cols;
        let xi = self.xi(h, x);
        let mut h_next = vec![0.0; n];
        let mut state = vec![0.0; n * n];
        let mut input = vec![0.0; n * ni];
        let mut immediate = JacobianTrace::zeros(TraceLayout::Full, n, p);
        let imm = immediate.data_mut();
        for i in 0..n {
            let th = self.preactivation(i, &xi).tanh();
            let k = dt / self.tau[i];
            let g = k * (1.0 - th * th);
            h_next[i] = h[i] + k * (-h[i] + th);
            let wrow = &self.w[i * cols..(i + 1) * cols];
            for j in 0..ni {
                input[i * ni + j] = g * wrow[j];
            }
            for j in 0..n {
                state[i * n + j] = g * wrow[ni + j];
            }
            state[i * n + i] += 1.0 - k;
            let row = &mut imm[i * p + i * cols..i * p + (i + 1) * cols];
            for (r, &v) in row.iter_mut().zip(&xi) {
                *r = g * v;
            }
        }
        Ok(CellJacobians {
            h_next,
            state: StateJacobian::Dense { n, data: state },
            immediate,
            input,
        })
    }
}
