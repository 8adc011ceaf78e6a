use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, CellError};
use crate::math::{sigmoid, softplus};
use crate::online_grad::{CellJacobians, JacobianTrace, StateJacobian, TraceLayout};

/// Diagonal liquid-resistance liquid-capacitance state-space cell,
/// `ḣ = a(h, x) ⊙ h + b(h, x)` with
///
/// * `a = −(a_min + softplus(W_a ξ_i)) / tau_max` (always negative),
/// * `b = sigmoid(W_g ξ_i) ⊙ tanh(W_b ξ_i)`,
///
/// where `ξ_i = [x; h_i; 1]` sees only the unit's own state, so the
/// recurrence stays diagonal. Each gate matrix is `N × (I + 2)`.
///
/// Trainable layout: unit-major blocks `[W_a row, W_g row, W_b row]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrcssmParams {
    input_dim: usize,
    hidden_dim: usize,
    w_a: Vec<f64>,
    w_g: Vec<f64>,
    w_b: Vec<f64>,
    tau_max: f64,
    a_min: f64,
}

/// Intermediate quantities of one unit's update.
struct UnitStep {
    h_next: f64,
    /// `∂h'/∂z_a`, `∂h'/∂z_g`, `∂h'/∂z_b`
    k_a: f64,
    k_g: f64,
    k_b: f64,
    decay: f64,
}

impl LrcssmParams {
    pub const DEFAULT_TAU_MAX: f64 = 2.0;
    pub const DEFAULT_A_MIN: f64 = 0.1;

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        w_a: Vec<f64>,
        w_g: Vec<f64>,
        w_b: Vec<f64>,
        tau_max: f64,
        a_min: f64,
    ) -> Result<Self, CellError> {
        let p = Self {
            input_dim,
            hidden_dim,
            w_a,
            w_g,
            w_b,
            tau_max,
            a_min,
        };
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let cols = input_dim + 2;
        let bound = 1.0 / (cols as f64).sqrt();
        let mut draw = || {
            (0..hidden_dim * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect::<Vec<_>>()
        };
        let w_a = draw();
        let w_g = draw();
        let w_b = draw();
        Self {
            input_dim,
            hidden_dim,
            w_a,
            w_g,
            w_b,
            tau_max: Self::DEFAULT_TAU_MAX,
            a_min: Self::DEFAULT_A_MIN,
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let len = self.hidden_dim * self.gate_cols();
        check_len("LrcSSM W_a", len, self.w_a.len())?;
        check_len("LrcSSM W_g", len, self.w_g.len())?;
        check_len("LrcSSM W_b", len, self.w_b.len())?;
        if !(self.tau_max > 0.0) || !(self.a_min > 0.0) {
            return Err(CellError::InvalidParameters(
                "tau_max and a_min must be positive".into(),
            ));
        }
        if self
            .w_a
            .iter()
            .chain(&self.w_g)
            .chain(&self.w_b)
            .any(|v| !v.is_finite())
        {
            return Err(CellError::InvalidParameters(
                "non-finite LrcSSM weight".into(),
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

    /// `I + 2`: inputs, own state, bias.
    pub fn gate_cols(&self) -> usize {
        self.input_dim + 2
    }

    pub fn w_a(&self) -> &[f64] {
        &self.w_a
    }

    pub fn w_g(&self) -> &[f64] {
        &self.w_g
    }

    pub fn w_b(&self) -> &[f64] {
        &self.w_b
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn local_param_count(&self) -> usize {
        3 * self.gate_cols()
    }

    pub fn trainable_len(&self) -> usize {
        self.hidden_dim * self.local_param_count()
    }

    pub fn write_trainable(&self, out: &mut Vec<f64>) {
        let c = self.gate_cols();
        for i in 0..self.hidden_dim {
            out.extend_from_slice(&self.w_a[i * c..(i + 1) * c]);
            out.extend_from_slice(&self.w_g[i * c..(i + 1) * c]);
            out.extend_from_slice(&self.w_b[i * c..(i + 1) * c]);
        }
    }

    pub fn read_trainable(&mut self, src: &[f64]) {
        let c = self.gate_cols();
        for i in 0..self.hidden_dim {
            let d = &src[i * 3 * c..(i + 1) * 3 * c];
            self.w_a[i * c..(i + 1) * c].copy_from_slice(&d[..c]);
            self.w_g[i * c..(i + 1) * c].copy_from_slice(&d[c..2 * c]);
            self.w_b[i * c..(i + 1) * c].copy_from_slice(&d[2 * c..]);
        }
    }

    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        let c = self.gate_cols();
        for i in 0..self.hidden_dim {
            let d = &delta[i * 3 * c..(i + 1) * 3 * c];
            for k in 0..c {
                self.w_a[i * c + k] += scale * d[k];
                self.w_g[i * c + k] += scale * d[c + k];
                self.w_b[i * c + k] += scale * d[2 * c + k];
            }
        }
    }

    /// Effective decay rate `a_i(h, x)` of every unit.
    pub fn decay_rates(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|i| -(self.a_min + softplus(self.gate(&self.w_a, i, h[i], x))) / self.tau_max)
            .collect()
    }

    #[inline]
    fn gate(&self, w: &[f64], i: usize, hi: f64, x: &[f64]) -> f64 {
        let c = self.gate_cols();
        let row = &w[i * c..(i + 1) * c];
        let ni = self.input_dim;
        row[..ni].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[ni] * hi + row[ni + 1]
    }

    fn check_step(&self, h: &[f64], x: &[f64]) -> Result<(), CellError> {
        check_len("hidden state", self.hidden_dim, h.len())?;
        check_len("input", self.input_dim, x.len())
    }

    fn unit_step(&self, i: usize, hi: f64, x: &[f64], dt: f64) -> UnitStep {
        let za = self.gate(&self.w_a, i, hi, x);
        let zg = self.gate(&self.w_g, i, hi, x);
        let zb = self.gate(&self.w_b, i, hi, x);
        let a = -(self.a_min + softplus(za)) / self.tau_max;
        let sg = sigmoid(zg);
        let tb = zb.tanh();
        let b = sg * tb;
        let e = (a * dt).exp();
        let phi = (e - 1.0) / a;
        let dphi = (dt * e * a - (e - 1.0)) / (a * a);
        let dh_da = dt * e * hi + dphi * b;
        UnitStep {
            h_next: e * hi + phi * b,
            k_a: dh_da * (-sigmoid(za) / self.tau_max),
            k_g: phi * sg * (1.0 - sg) * tb,
            k_b: phi * sg * (1.0 - tb * tb),
            decay: e,
        }
    }

    /// Exponential Euler: `h' = e^{a dt} h + ((e^{a dt} − 1)/a) b`.
    pub fn step(&self, h: &[f64], x: &[f64], dt: f64) -> Result<Vec<f64>, CellError> {
        self.check_step(h, x)?;
        Ok((0..self.hidden_dim)
            .map(|i| self.unit_step(i, h[i], x, dt).h_next)
            .collect())
    }

    pub fn step_jacobians(
        &self,
        h: &[f64],
        x: &[f64],
        dt: f64,
    ) -> Result<CellJacobians<f64>, CellError> {
        self.check_step(h, x)?;
        let (n, ni, c) = (self.hidden_dim, self.input_dim, self.gate_cols());
        let pl = self.local_param_count();
        let mut h_next = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut input = vec![0.0; n * ni];
        let mut immediate = JacobianTrace::zeros(TraceLayout::Diagonal, n, pl);
        let imm = immediate.data_mut();
        for i in 0..n {
            let u = self.unit_step(i, h[i], x, dt);
            h_next.push(u.h_next);
            let (ra, rg, rb) = (
                &self.w_a[i * c..(i + 1) * c],
                &self.w_g[i * c..(i + 1) * c],
                &self.w_b[i * c..(i + 1) * c],
            );
            diag.push(u.decay + u.k_a * ra[ni] + u.k_g * rg[ni] + u.k_b * rb[ni]);
            for j in 0..ni {
                input[i * ni + j] = u.k_a * ra[j] + u.k_g * rg[j] + u.k_b * rb[j];
            }
            let row = &mut imm[i * pl..(i + 1) * pl];
            for (blk, k) in [u.k_a, u.k_g, u.k_b].into_iter().enumerate() {
                let dst = &mut row[blk * c..(blk + 1) * c];
                dst[..ni].iter_mut().zip(x).for_each(|(d, &v)| *d = k * v);
                dst[ni] = k * h[i];
                dst[ni + 1] = k;
            }
        }
        Ok(CellJacobians {
            h_next,
            state: StateJacobian::Diagonal(diag),
            immediate,
            input,
        })
    }
}
