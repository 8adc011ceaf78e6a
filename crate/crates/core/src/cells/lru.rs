use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, CellError};
use crate::online_grad::{CellJacobians, JacobianTrace, StateJacobian, TraceLayout};

/// Linear recurrent unit: diagonal complex `ḣ = A h + B x`, readout
/// `y = Re[C h] + D x`.
///
/// Trainable layout (see [`LruParams::local_param_count`]): one block per
/// hidden unit `[Re a_i, Im a_i, Re B_i·, Im B_i·]`, followed by the readout
/// `Re C`, `Im C` and `D`, each row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LruParams {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    a_diag: Vec<Complex64>,
    /// `N × I`
    b_in: Vec<Complex64>,
    /// `O × N`
    c_out: Vec<Complex64>,
    /// `O × I`
    d_skip: Vec<f64>,
}

/// `(e^{λ dt} − 1)/λ` and its derivative in `λ`.
#[inline]
fn zoh_gain(lambda: Complex64, e: Complex64, dt: f64) -> (Complex64, Complex64) {
    let phi = (e - 1.0) / lambda;
    let dphi = (e * lambda * dt - (e - 1.0)) / (lambda * lambda);
    (phi, dphi)
}

impl LruParams {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        a_diag: Vec<Complex64>,
        b_in: Vec<Complex64>,
        c_out: Vec<Complex64>,
        d_skip: Vec<f64>,
    ) -> Result<Self, CellError> {
        let p = Self {
            input_dim,
            hidden_dim,
            output_dim,
            a_diag,
            b_in,
            c_out,
            d_skip,
        };
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let output_dim = hidden_dim;
        let a_diag = (0..hidden_dim)
            .map(|_| {
                Complex64::new(
                    rng.random_range(-0.9..-0.1),
                    rng.random_range(0.0..PI / 8.0),
                )
            })
            .collect();
        let bi = 1.0 / (input_dim as f64).sqrt();
        let b_in = (0..hidden_dim * input_dim)
            .map(|_| Complex64::new(rng.random_range(-bi..bi), rng.random_range(-bi..bi)))
            .collect();
        let bc = 1.0 / (hidden_dim as f64).sqrt();
        let c_out = (0..output_dim * hidden_dim)
            .map(|_| Complex64::new(rng.random_range(-bc..bc), rng.random_range(-bc..bc)))
            .collect();
        let d_skip = (0..output_dim * input_dim)
            .map(|_| rng.random_range(-bi..bi))
            .collect();
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            a_diag,
            b_in,
            c_out,
            d_skip,
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let (n, i, o) = (self.hidden_dim, self.input_dim, self.output_dim);
        check_len("LRU A", n, self.a_diag.len())?;
        check_len("LRU B", n * i, self.b_in.len())?;
        check_len("LRU C", o * n, self.c_out.len())?;
        check_len("LRU D", o * i, self.d_skip.len())?;
        if self.a_diag.iter().any(|a| !(a.re < 0.0)) {
            return Err(CellError::InvalidParameters(
                "LRU poles must have negative real part".into(),
            ));
        }
        let finite = self
            .a_diag
            .iter()
            .chain(&self.b_in)
            .chain(&self.c_out)
            .all(|c| c.re.is_finite() && c.im.is_finite())
            && self.d_skip.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CellError::InvalidParameters(
                "non-finite LRU parameter".into(),
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

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn a_diag(&self) -> &[Complex64] {
        &self.a_diag
    }

    pub fn b_in(&self) -> &[Complex64] {
        &self.b_in
    }

    pub fn c_out(&self) -> &[Complex64] {
        &self.c_out
    }

    pub fn d_skip(&self) -> &[f64] {
        &self.d_skip
    }

    /// Traced parameters per hidden unit: `2 + 2I`.
    pub fn local_param_count(&self) -> usize {
        2 + 2 * self.input_dim
    }

    pub fn recurrent_len(&self) -> usize {
        self.hidden_dim * self.local_param_count()
    }

    pub fn readout_len(&self) -> usize {
        2 * self.output_dim * self.hidden_dim + self.output_dim * self.input_dim
    }

    pub fn trainable_len(&self) -> usize {
        self.recurrent_len() + self.readout_len()
    }

    pub fn write_trainable(&self, out: &mut Vec<f64>) {
        let ni = self.input_dim;
        for i in 0..self.hidden_dim {
            out.push(self.a_diag[i].re);
            out.push(self.a_diag[i].im);
            out.extend(self.b_in[i * ni..(i + 1) * ni].iter().map(|b| b.re));
            out.extend(self.b_in[i * ni..(i + 1) * ni].iter().map(|b| b.im));
        }
        out.extend(self.c_out.iter().map(|c| c.re));
        out.extend(self.c_out.iter().map(|c| c.im));
        out.extend_from_slice(&self.d_skip);
    }

    pub fn read_trainable(&mut self, src: &[f64]) {
        let ni = self.input_dim;
        let pl = self.local_param_count();
        for i in 0..self.hidden_dim {
            let d = &src[i * pl..(i + 1) * pl];
            self.a_diag[i] = Complex64::new(d[0], d[1]);
            for j in 0..ni {
                self.b_in[i * ni + j] = Complex64::new(d[2 + j], d[2 + ni + j]);
            }
        }
        let off = self.recurrent_len();
        let nc = self.c_out.len();
        for (k, c) in self.c_out.iter_mut().enumerate() {
            *c = Complex64::new(src[off + k], src[off + nc + k]);
        }
        let nd = self.d_skip.len();
        self.d_skip
            .copy_from_slice(&src[off + 2 * nc..off + 2 * nc + nd]);
    }

    /// `θ ← θ + scale · delta` over the trainable layout.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        let ni = self.input_dim;
        let pl = self.local_param_count();
        for i in 0..self.hidden_dim {
            let d = &delta[i * pl..(i + 1) * pl];
            self.a_diag[i].re += scale * d[0];
            self.a_diag[i].im += scale * d[1];
            for j in 0..ni {
                self.b_in[i * ni + j].re += scale * d[2 + j];
                self.b_in[i * ni + j].im += scale * d[2 + ni + j];
            }
        }
        let mut off = self.recurrent_len();
        let nc = self.c_out.len();
        for (k, c) in self.c_out.iter_mut().enumerate() {
            c.re += scale * delta[off + k];
            c.im += scale * delta[off + nc + k];
        }
        off += 2 * nc;
        for (k, d) in self.d_skip.iter_mut().enumerate() {
            *d += scale * delta[off + k];
        }
    }

    /// Keeps every pole strictly inside the stable half-plane after an
    /// unconstrained update.
    pub fn project_stable(&mut self, max_real: f64) {
        for a in &mut self.a_diag {
            if a.re > max_real {
                a.re = max_real;
            }
        }
    }

    fn check_step(&self, h: &[Complex64], x: &[f64]) -> Result<(), CellError> {
        check_len("hidden state", self.hidden_dim, h.len())?;
        check_len("input", self.input_dim, x.len())?;
        if self.a_diag.iter().any(|a| !(a.re < 0.0)) {
            return Err(CellError::InvalidParameters(
                "LRU poles must have negative real part".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn drive(&self, i: usize, x: &[f64]) -> Complex64 {
        let ni = self.input_dim;
        self.b_in[i * ni..(i + 1) * ni]
            .iter()
            .zip(x)
            .map(|(b, &v)| b * v)
            .sum()
    }

    /// Zero-order hold: `h' = e^{A dt} h + ((e^{A dt} − 1)/A) B x`.
    pub fn step(&self, h: &[Complex64], x: &[f64], dt: f64) -> Result<Vec<Complex64>, CellError> {
        self.check_step(h, x)?;
        Ok((0..self.hidden_dim)
            .map(|i| {
                let lambda = self.a_diag[i];
                let e = (lambda * dt).exp();
                e * h[i] + (e - 1.0) / lambda * self.drive(i, x)
            })
            .collect())
    }

    pub fn readout(&self, h: &[Complex64], x: &[f64]) -> Vec<f64> {
        let (n, ni) = (self.hidden_dim, self.input_dim);
        (0..self.output_dim)
            .map(|o| {
                let ch: Complex64 = self.c_out[o * n..(o + 1) * n]
                    .iter()
                    .zip(h)
                    .map(|(c, h)| c * h)
                    .sum();
                let dx: f64 = self.d_skip[o * ni..(o + 1) * ni]
                    .iter()
                    .zip(x)
                    .map(|(d, v)| d * v)
                    .sum();
                ch.re + dx
            })
            .collect()
    }

    pub fn step_jacobians(
        &self,
        h: &[Complex64],
        x: &[f64],
        dt: f64,
    ) -> Result<CellJacobians<Complex64>, CellError> {
        self.check_step(h, x)?;
        let (n, ni) = (self.hidden_dim, self.input_dim);
        let pl = self.local_param_count();
        let mut h_next = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut input = vec![Complex64::new(0.0, 0.0); n * ni];
        let mut immediate = JacobianTrace::zeros(TraceLayout::Diagonal, n, pl);
        let imm = immediate.data_mut();
        let iu = Complex64::new(0.0, 1.0);
        for i in 0..n {
            let lambda = self.a_diag[i];
            let e = (lambda * dt).exp();
            let (phi, dphi) = zoh_gain(lambda, e, dt);
            let u = self.drive(i, x);
            h_next.push(e * h[i] + phi * u);
            diag.push(e);
            let dlam = e * dt * h[i] + dphi * u;
            let row = &mut imm[i * pl..(i + 1) * pl];
            row[0] = dlam;
            row[1] = iu * dlam;
            for j in 0..ni {
                row[2 + j] = phi * x[j];
                row[2 + ni + j] = iu * phi * x[j];
                input[i * ni + j] = phi * self.b_in[i * ni + j];
            }
        }
        Ok(CellJacobians {
            h_next,
            state: StateJacobian::Diagonal(diag),
            immediate,
            input,
        })
    }

    /// State covector `c_i = Σ_o g_o C_oi` of a readout signal `g`.
    pub fn readout_covector(&self, g: &[f64]) -> Vec<Complex64> {
        let n = self.hidden_dim;
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for (o, &go) in g.iter().enumerate() {
            for (ci, &coi) in c.iter_mut().zip(&self.c_out[o * n..(o + 1) * n]) {
                *ci += coi * go;
            }
        }
        c
    }

    /// Accumulates `g · ∂y/∂(C, D)` into the readout slice of `out`.
    pub fn readout_grad_into(&self, h: &[Complex64], x: &[f64], g: &[f64], out: &mut [f64]) {
        let (n, ni) = (self.hidden_dim, self.input_dim);
        let off = self.recurrent_len();
        let nc = self.c_out.len();
        for (o, &go) in g.iter().enumerate() {
            for i in 0..n {
                out[off + o * n + i] += go * h[i].re;
                out[off + nc + o * n + i] -= go * h[i].im;
            }
            for j in 0..ni {
                out[off + 2 * nc + o * ni + j] += go * x[j];
            }
        }
    }

    /// `Dᵀ g`: direct dependence of the readout on the current input.
    pub fn input_vjp(&self, g: &[f64]) -> Vec<f64> {
        let ni = self.input_dim;
        let mut out = vec![0.0; ni];
        for (o, &go) in g.iter().enumerate() {
            for (v, &d) in out.iter_mut().zip(&self.d_skip[o * ni..(o + 1) * ni]) {
                *v += d * go;
            }
        }
        out
    }
}
