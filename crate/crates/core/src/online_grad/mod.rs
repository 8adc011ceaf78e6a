//! Forward-mode online gradients for the recurrent cells.
//!
//! Diagonal cells (LRU, LrcSSM) carry the exact RTRL trace in its diagonal
//! layout, the dense CT-RNN carries the local RFLO trace. [`CellRuntime`]
//! bundles a hidden state with its trace and exposes the contraction of a
//! learning signal on the cell's features into a parameter gradient.

pub mod oracle;
mod rflo;
mod trace;

use num_complex::Complex64;
use thiserror::Error;

use crate::cells::{CellError, CellKind, CellParams, HiddenState, StepJacobians};

pub use rflo::{rflo_advance, rflo_advance_in_place, RfloTrace};
pub use trace::{
    rtrl_advance, rtrl_advance_in_place, CellJacobians, JacobianTrace, StateJacobian, TraceLayout,
    TraceScalar,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("trace layout mismatch: {0}")]
    LayoutMismatch(&'static str),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Gradient engine carried alongside a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    /// Exact forward-mode trace. Diagonal layout for LRU/LrcSSM, full
    /// `N × P` layout for the CT-RNN (only sensible for tiny networks).
    Rtrl,
    /// Local approximation for the CT-RNN.
    Rflo,
}

impl Engine {
    /// The engine each cell kind uses by default.
    pub fn for_kind(kind: CellKind) -> Self {
        if kind.is_diagonal() {
            Engine::Rtrl
        } else {
            Engine::Rflo
        }
    }
}

/// Sensitivity of the hidden state with respect to the recurrent parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum OnlineTrace {
    Real(JacobianTrace<f64>),
    Complex(JacobianTrace<Complex64>),
    Rflo(RfloTrace),
}

impl OnlineTrace {
    pub fn new(params: &CellParams, engine: Engine) -> Result<Self, GradError> {
        let n = params.hidden_dim();
        match (params, engine) {
            (CellParams::Ctrnn(p), Engine::Rflo) => Ok(OnlineTrace::Rflo(RfloTrace::for_params(p))),
            (CellParams::Ctrnn(p), Engine::Rtrl) => Ok(OnlineTrace::Real(JacobianTrace::zeros(
                TraceLayout::Full,
                n,
                p.w().len(),
            ))),
            (CellParams::Lru(p), Engine::Rtrl) => Ok(OnlineTrace::Complex(JacobianTrace::zeros(
                TraceLayout::Diagonal,
                n,
                p.local_param_count(),
            ))),
            (CellParams::Lrcssm(p), Engine::Rtrl) => Ok(OnlineTrace::Real(JacobianTrace::zeros(
                TraceLayout::Diagonal,
                n,
                p.local_param_count(),
            ))),
            _ => Err(GradError::LayoutMismatch(
                "RFLO is only defined for the CT-RNN",
            )),
        }
    }

    pub fn storage_len(&self) -> usize {
        match self {
            OnlineTrace::Real(t) => t.storage_len(),
            OnlineTrace::Complex(t) => t.storage_len(),
            OnlineTrace::Rflo(t) => t.data().len(),
        }
    }

    pub fn fill_zero(&mut self) {
        match self {
            OnlineTrace::Real(t) => t.fill_zero(),
            OnlineTrace::Complex(t) => t.fill_zero(),
            OnlineTrace::Rflo(t) => t.fill_zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            OnlineTrace::Real(t) => t.is_finite(),
            OnlineTrace::Complex(t) => t.is_finite(),
            OnlineTrace::Rflo(t) => t.is_finite(),
        }
    }
}

/// A cell's running hidden state, its online trace and the input that
/// produced the current state (the LRU readout reads it through `D`).
#[derive(Clone, Debug, PartialEq)]
pub struct CellRuntime {
    h: HiddenState,
    x_last: Vec<f64>,
    trace: OnlineTrace,
    engine: Engine,
}

impl CellRuntime {
    pub fn new(params: &CellParams, engine: Engine) -> Result<Self, GradError> {
        Ok(Self {
            h: HiddenState::zeros(params.kind(), params.hidden_dim()),
            x_last: vec![0.0; params.input_dim()],
            trace: OnlineTrace::new(params, engine)?,
            engine,
        })
    }

    pub fn with_default_engine(params: &CellParams) -> Result<Self, GradError> {
        Self::new(params, Engine::for_kind(params.kind()))
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn hidden(&self) -> &HiddenState {
        &self.h
    }

    pub fn trace(&self) -> &OnlineTrace {
        &self.trace
    }

    pub fn last_input(&self) -> &[f64] {
        &self.x_last
    }

    /// Zero hidden state, trace and remembered input.
    pub fn reset(&mut self) {
        self.h.fill_zero();
        self.trace.fill_zero();
        self.x_last.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Steps the cell on input `x` and advances the trace. Returns the
    /// one-step Jacobians evaluated at the previous state.
    pub fn advance(
        &mut self,
        params: &CellParams,
        x: &[f64],
        dt: f64,
    ) -> Result<StepJacobians, GradError> {
        let jac = params.step_jacobians(&self.h, x, dt)?;
        match (&mut self.trace, &jac, params) {
            (OnlineTrace::Real(t), StepJacobians::Real(j), _) => {
                rtrl_advance_in_place(t, &j.state, &j.immediate)?
            }
            (OnlineTrace::Complex(t), StepJacobians::Complex(j), _) => {
                rtrl_advance_in_place(t, &j.state, &j.immediate)?
            }
            (OnlineTrace::Rflo(t), StepJacobians::Real(_), CellParams::Ctrnn(p)) => {
                let h = self
                    .h
                    .as_real()
                    .ok_or(GradError::Cell(CellError::StateKind))?;
                rflo_advance_in_place(t, p, &p.xi(h, x), dt)?
            }
            _ => {
                return Err(GradError::LayoutMismatch(
                    "trace does not belong to this cell",
                ))
            }
        }
        self.h = jac.next_state();
        self.x_last.copy_from_slice(x);
        if !self.h.is_finite() {
            return Err(GradError::NonFinite("hidden state"));
        }
        if !self.trace.is_finite() {
            return Err(GradError::NonFinite("online trace"));
        }
        Ok(jac)
    }

    /// Features the heads read from the current state.
    pub fn features(&self, params: &CellParams) -> Vec<f64> {
        params.features(&self.h, &self.x_last)
    }

    /// `out += gᵀ ∂y/∂θ` for a learning signal `g` on the features `y`,
    /// where `∂y/∂θ` goes through the trace. `out` spans all trainable cell
    /// parameters.
    pub fn accumulate_grad(&self, params: &CellParams, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), params.trainable_len());
        let rec = params.recurrent_len();
        match (&self.trace, params) {
            (OnlineTrace::Complex(t), CellParams::Lru(p)) => {
                let c = p.readout_covector(g);
                t.contract_into(&c, &mut out[..rec]);
                if let HiddenState::Complex(h) = &self.h {
                    p.readout_grad_into(h, &self.x_last, g, out);
                }
            }
            (OnlineTrace::Real(t), _) => t.contract_into(g, &mut out[..rec]),
            (OnlineTrace::Rflo(t), _) => t.contract_into(g, &mut out[..rec]),
            (OnlineTrace::Complex(_), _) => {}
        }
    }

    /// Hidden-state covector of a feature signal `g`, expressed as the
    /// per-unit learning signal the trace contracts with.
    pub fn state_covector(&self, params: &CellParams, g: &[f64]) -> HiddenState {
        match params {
            CellParams::Lru(p) => HiddenState::Complex(p.readout_covector(g)),
            _ => HiddenState::Real(g.to_vec()),
        }
    }
}
