//! Recurrent cell dynamics with a uniform step interface.
//!
//! Three models are supported: a dense continuous-time RNN (explicit Euler),
//! the linear recurrent unit (exact zero-order hold) and the diagonal
//! LrcSSM (exponential Euler). All step functions are pure.

mod ctrnn;
mod lrcssm;
mod lru;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ctrnn::CtrnnParams;
pub use lrcssm::LrcssmParams;
pub use lru::LruParams;

use crate::online_grad::CellJacobians;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step size {dt} exceeds the smallest time constant {tau_min}")]
    Unstable { dt: f64, tau_min: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid cell spec: {0}")]
    InvalidSpec(String),
    #[error("hidden state kind does not match the cell")]
    StateKind,
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), CellError> {
    if expected != got {
        Err(CellError::DimensionMismatch {
            what,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Ctrnn,
    Lru,
    Lrcssm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Ctrnn, CellKind::Lru, CellKind::Lrcssm];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Ctrnn => "ctrnn",
            CellKind::Lru => "lru",
            CellKind::Lrcssm => "lrcssm",
        }
    }

    /// LRU and LrcSSM have diagonal recurrences.
    pub fn is_diagonal(self) -> bool {
        !matches!(self, CellKind::Ctrnn)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ctrnn" => Ok(CellKind::Ctrnn),
            "lru" => Ok(CellKind::Lru),
            "lrcssm" | "lrc" => Ok(CellKind::Lrcssm),
            other => Err(CellError::InvalidSpec(format!(
                "unknown cell kind `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Dimensionless integration step.
    pub dt: f64,
}

impl CellSpec {
    pub fn new(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        dt: f64,
    ) -> Result<Self, CellError> {
        let spec = Self {
            kind,
            input_dim,
            hidden_dim,
            dt,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CellError> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(CellError::InvalidSpec(
                "input and hidden dimensions must be at least 1".into(),
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CellError::InvalidSpec(format!(
                "step size must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    /// Width of the feature vector the heads read.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// Latent state of one cell: real for CT-RNN and LrcSSM, complex for LRU.
#[derive(Clone, Debug, PartialEq)]
pub enum HiddenState {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl HiddenState {
    pub fn zeros(kind: CellKind, n: usize) -> Self {
        match kind {
            CellKind::Lru => HiddenState::Complex(vec![Complex64::new(0.0, 0.0); n]),
            _ => HiddenState::Real(vec![0.0; n]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            HiddenState::Real(v) => v.len(),
            HiddenState::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match self {
            HiddenState::Real(v) => v.iter().all(|x| x.is_finite()),
            HiddenState::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        match self {
            HiddenState::Real(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            HiddenState::Complex(v) => v.iter().fold(0.0, |m, x| m.max(x.norm())),
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            HiddenState::Real(v) => Some(v),
            HiddenState::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match self {
            HiddenState::Complex(v) => Some(v),
            HiddenState::Real(_) => None,
        }
    }

    pub fn fill_zero(&mut self) {
        match self {
            HiddenState::Real(v) => v.iter_mut().for_each(|x| *x = 0.0),
            HiddenState::Complex(v) => v.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0)),
        }
    }
}

/// Output of [`CellParams::step_jacobians`].
#[derive(Clone, Debug, PartialEq)]
pub enum StepJacobians {
    Real(CellJacobians<f64>),
    Complex(CellJacobians<Complex64>),
}

impl StepJacobians {
    pub fn next_state(&self) -> HiddenState {
        match self {
            StepJacobians::Real(j) => HiddenState::Real(j.h_next.clone()),
            StepJacobians::Complex(j) => HiddenState::Complex(j.h_next.clone()),
        }
    }
}

/// Parameters of any supported cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CellParams {
    Ctrnn(CtrnnParams),
    Lru(LruParams),
    Lrcssm(LrcssmParams),
}

impl CellParams {
    /// Deterministic initialization from `(spec, seed)`.
    pub fn init(spec: &CellSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, n) = (spec.input_dim, spec.hidden_dim);
        match spec.kind {
            CellKind::Ctrnn => CellParams::Ctrnn(CtrnnParams::init(i, n, &mut rng)),
            CellKind::Lru => CellParams::Lru(LruParams::init(i, n, &mut rng)),
            CellKind::Lrcssm => CellParams::Lrcssm(LrcssmParams::init(i, n, &mut rng)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Ctrnn(_) => CellKind::Ctrnn,
            CellParams::Lru(_) => CellKind::Lru,
            CellParams::Lrcssm(_) => CellKind::Lrcssm,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Ctrnn(p) => p.input_dim(),
            CellParams::Lru(p) => p.input_dim(),
            CellParams::Lrcssm(p) => p.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Ctrnn(p) => p.hidden_dim(),
            CellParams::Lru(p) => p.hidden_dim(),
            CellParams::Lrcssm(p) => p.hidden_dim(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            CellParams::Lru(p) => p.output_dim(),
            _ => self.hidden_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        match self {
            CellParams::Ctrnn(p) => p.validate(),
            CellParams::Lru(p) => p.validate(),
            CellParams::Lrcssm(p) => p.validate(),
        }
    }

    /// Parameters followed by the online gradient trace.
    pub fn recurrent_len(&self) -> usize {
        match self {
            CellParams::Ctrnn(p) => p.w().len(),
            CellParams::Lru(p) => p.recurrent_len(),
            CellParams::Lrcssm(p) => p.trainable_len(),
        }
    }

    /// All trainable parameters: recurrent ones first, then any readout.
    pub fn trainable_len(&self) -> usize {
        match self {
            CellParams::Ctrnn(p) => p.w().len(),
            CellParams::Lru(p) => p.trainable_len(),
            CellParams::Lrcssm(p) => p.trainable_len(),
        }
    }

    pub fn trainable_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        self.write_trainable(&mut out);
        out
    }

    pub fn write_trainable(&self, out: &mut Vec<f64>) {
        match self {
            CellParams::Ctrnn(p) => out.extend_from_slice(p.w()),
            CellParams::Lru(p) => p.write_trainable(out),
            CellParams::Lrcssm(p) => p.write_trainable(out),
        }
    }

    /// `θ ← θ + scale · delta` over the trainable layout.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        debug_assert_eq!(delta.len(), self.trainable_len());
        match self {
            CellParams::Ctrnn(p) => p
                .w_mut()
                .iter_mut()
                .zip(delta)
                .for_each(|(w, d)| *w += scale * d),
            CellParams::Lru(p) => p.add_scaled(delta, scale),
            CellParams::Lrcssm(p) => p.add_scaled(delta, scale),
        }
    }

    /// Overwrites the trainable parameters with `values`.
    pub fn set_trainable(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.trainable_len());
        match self {
            CellParams::Ctrnn(p) => p.w_mut().copy_from_slice(values),
            CellParams::Lru(p) => p.read_trainable(values),
            CellParams::Lrcssm(p) => p.read_trainable(values),
        }
    }

    /// Restores invariants an unconstrained gradient step may violate.
    pub fn project(&mut self) {
        if let CellParams::Lru(p) = self {
            p.project_stable(-1e-3);
        }
    }

    pub fn step(&self, h: &HiddenState, x: &[f64], dt: f64) -> Result<HiddenState, CellError> {
        match (self, h) {
            (CellParams::Ctrnn(p), HiddenState::Real(h)) => p.step(h, x, dt).map(HiddenState::Real),
            (CellParams::Lrcssm(p), HiddenState::Real(h)) => {
                p.step(h, x, dt).map(HiddenState::Real)
            }
            (CellParams::Lru(p), HiddenState::Complex(h)) => {
                p.step(h, x, dt).map(HiddenState::Complex)
            }
            _ => Err(CellError::StateKind),
        }
    }

    /// One step together with `∂h'/∂h`, the immediate parameter Jacobian and
    /// `∂h'/∂x`. Diagonal cells return diagonal layouts.
    pub fn step_jacobians(
        &self,
        h: &HiddenState,
        x: &[f64],
        dt: f64,
    ) -> Result<StepJacobians, CellError> {
        match (self, h) {
            (CellParams::Ctrnn(p), HiddenState::Real(h)) => {
                p.step_jacobians(h, x, dt).map(StepJacobians::Real)
            }
            (CellParams::Lrcssm(p), HiddenState::Real(h)) => {
                p.step_jacobians(h, x, dt).map(StepJacobians::Real)
            }
            (CellParams::Lru(p), HiddenState::Complex(h)) => {
                p.step_jacobians(h, x, dt).map(StepJacobians::Complex)
            }
            _ => Err(CellError::StateKind),
        }
    }

    /// Feature vector read by the heads: `h` itself for real cells,
    /// `Re[C h] + D x` for the LRU (`x` is the input that produced `h`).
    pub fn features(&self, h: &HiddenState, x: &[f64]) -> Vec<f64> {
        match (self, h) {
            (CellParams::Lru(p), HiddenState::Complex(h)) => p.readout(h, x),
            (_, HiddenState::Real(h)) => h.clone(),
            (_, HiddenState::Complex(h)) => h.iter().map(|c| c.re).collect(),
        }
    }

    /// Names of parameters that never receive updates.
    pub fn frozen_names(&self) -> Vec<&'static str> {
        match self {
            CellParams::Ctrnn(_) => vec!["tau"],
            CellParams::Lru(_) => vec![],
            CellParams::Lrcssm(_) => vec!["tau_max", "a_min"],
        }
    }
}
