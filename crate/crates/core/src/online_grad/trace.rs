use std::fmt::Debug;

use num_complex::Complex64;
use num_traits::NumAssign;

use super::GradError;

/// Scalar type a sensitivity trace is stored in: `f64` for real-valued
/// cells, `Complex64` for the LRU's complex hidden state.
pub trait TraceScalar: Copy + Debug + PartialEq + NumAssign + Send + Sync + 'static {
    fn re(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite_scalar(self) -> bool;
}

impl TraceScalar for f64 {
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

impl TraceScalar for Complex64 {
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceLayout {
    /// Dense `rows × cols` sensitivities, `cols` = number of traced parameters.
    Full,
    /// One block of `cols` local parameters per hidden unit; cross-unit
    /// sensitivities are structurally zero. Global parameter index of
    /// `(unit, local)` is `unit * cols + local`.
    Diagonal,
}

/// Forward-mode sensitivity of the hidden state with respect to the traced
/// cell parameters (the RTRL trace `Ĵ`).
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianTrace<T> {
    layout: TraceLayout,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: TraceScalar> JacobianTrace<T> {
    pub fn zeros(layout: TraceLayout, rows: usize, cols: usize) -> Self {
        Self {
            layout,
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_data(
        layout: TraceLayout,
        rows: usize,
        cols: usize,
        data: Vec<T>,
    ) -> Result<Self, GradError> {
        if data.len() != rows * cols {
            return Err(GradError::Shape {
                what: "trace data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            layout,
            rows,
            cols,
            data,
        })
    }

    pub fn layout(&self) -> TraceLayout {
        self.layout
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Number of scalars actually held.
    pub fn storage_len(&self) -> usize {
        self.data.len()
    }

    /// Number of parameters the trace covers.
    pub fn param_count(&self) -> usize {
        match self.layout {
            TraceLayout::Full => self.cols,
            TraceLayout::Diagonal => self.rows * self.cols,
        }
    }

    /// `∂h_unit / ∂θ_param`, with `param` a global parameter index.
    pub fn entry(&self, unit: usize, param: usize) -> T {
        match self.layout {
            TraceLayout::Full => self.data[unit * self.cols + param],
            TraceLayout::Diagonal => {
                if param / self.cols == unit {
                    self.data[param]
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `out[k] += Re(Σ_i c_i · J[i, k])` for a state covector `c`.
    pub fn contract_into(&self, covector: &[T], out: &mut [f64]) {
        debug_assert_eq!(covector.len(), self.rows);
        debug_assert!(out.len() >= self.param_count());
        match self.layout {
            TraceLayout::Full => {
                for (i, &c) in covector.iter().enumerate() {
                    let row = &self.data[i * self.cols..(i + 1) * self.cols];
                    for (o, &j) in out.iter_mut().zip(row) {
                        *o += (c * j).re();
                    }
                }
            }
            TraceLayout::Diagonal => {
                for (i, &c) in covector.iter().enumerate() {
                    let row = &self.data[i * self.cols..(i + 1) * self.cols];
                    let dst = &mut out[i * self.cols..(i + 1) * self.cols];
                    for (o, &j) in dst.iter_mut().zip(row) {
                        *o += (c * j).re();
                    }
                }
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_scalar())
    }
}

/// One-step state Jacobian `∂h'/∂h`.
#[derive(Clone, Debug, PartialEq)]
pub enum StateJacobian<T> {
    /// Row-major `n × n`.
    Dense {
        n: usize,
        data: Vec<T>,
    },
    Diagonal(Vec<T>),
}

impl<T: TraceScalar> StateJacobian<T> {
    pub fn dim(&self) -> usize {
        match self {
            StateJacobian::Dense { n, .. } => *n,
            StateJacobian::Diagonal(d) => d.len(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        match self {
            StateJacobian::Dense { n, data } => data[i * n + j],
            StateJacobian::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Everything one cell step exposes to forward-mode differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct CellJacobians<T> {
    pub h_next: Vec<T>,
    pub state: StateJacobian<T>,
    /// Immediate parameter Jacobian `J̄_t` (hidden state held fixed).
    pub immediate: JacobianTrace<T>,
    /// `∂h'/∂x`, row-major `n × input_dim`.
    pub input: Vec<T>,
}

/// `Ĵ_{t+1} = (∂h'/∂h) Ĵ_t + J̄_t`.
pub fn rtrl_advance<T: TraceScalar>(
    trace: &JacobianTrace<T>,
    state_jac: &StateJacobian<T>,
    immediate: &JacobianTrace<T>,
) -> Result<JacobianTrace<T>, GradError> {
    let mut next = trace.clone();
    rtrl_advance_in_place(&mut next, state_jac, immediate)?;
    Ok(next)
}

pub fn rtrl_advance_in_place<T: TraceScalar>(
    trace: &mut JacobianTrace<T>,
    state_jac: &StateJacobian<T>,
    immediate: &JacobianTrace<T>,
) -> Result<(), GradError> {
    if trace.layout != immediate.layout
        || trace.rows != immediate.rows
        || trace.cols != immediate.cols
    {
        return Err(GradError::LayoutMismatch(
            "trace and immediate Jacobian differ in layout or shape",
        ));
    }
    if state_jac.dim() != trace.rows {
        return Err(GradError::Shape {
            what: "state Jacobian",
            expected: trace.rows,
            got: state_jac.dim(),
        });
    }
    let cols = trace.cols;
    match (trace.layout, state_jac) {
        (TraceLayout::Diagonal, StateJacobian::Diagonal(d)) => {
            for (i, &di) in d.iter().enumerate() {
                let row = &mut trace.data[i * cols..(i + 1) * cols];
                let imm = &immediate.data[i * cols..(i + 1) * cols];
                for (r, &b) in row.iter_mut().zip(imm) {
                    *r = di * *r + b;
                }
            }
        }
        (TraceLayout::Full, StateJacobian::Dense { n, data }) => {
            let n = *n;
            let mut out = immediate.data.clone();
            for i in 0..n {
                let dst = &mut out[i * cols..(i + 1) * cols];
                for j in 0..n {
                    let s = data[i * n + j];
                    if s == T::zero() {
                        continue;
                    }
                    let src = &trace.data[j * cols..(j + 1) * cols];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += s * v;
                    }
                }
            }
            trace.data = out;
        }
        (TraceLayout::Full, StateJacobian::Diagonal(d)) => {
            for (i, &di) in d.iter().enumerate() {
                let row = &mut trace.data[i * cols..(i + 1) * cols];
                let imm = &immediate.data[i * cols..(i + 1) * cols];
                for (r, &b) in row.iter_mut().zip(imm) {
                    *r = di * *r + b;
                }
            }
        }
        (TraceLayout::Diagonal, StateJacobian::Dense { .. }) => {
            return Err(GradError::LayoutMismatch(
                "diagonal trace cannot absorb a dense state Jacobian",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trace_advances_to_immediate() {
        let trace = JacobianTrace::<f64>::zeros(TraceLayout::Diagonal, 2, 3);
        let imm = JacobianTrace::from_data(
            TraceLayout::Diagonal,
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let s = StateJacobian::Diagonal(vec![0.3, -0.7]);
        let next = rtrl_advance(&trace, &s, &imm).unwrap();
        assert_eq!(next, imm);
    }

    #[test]
    fn memoryless_state_gives_immediate() {
        let trace =
            JacobianTrace::from_data(TraceLayout::Full, 2, 2, vec![9.0, -1.0, 4.0, 2.0]).unwrap();
        let imm =
            JacobianTrace::from_data(TraceLayout::Full, 2, 2, vec![1.0, 0.5, 0.0, 2.0]).unwrap();
        let s = StateJacobian::Dense {
            n: 2,
            data: vec![0.0; 4],
        };
        assert_eq!(rtrl_advance(&trace, &s, &imm).unwrap(), imm);
    }

    #[test]
    fn dense_advance_matches_matrix_product() {
        let trace =
            JacobianTrace::from_data(TraceLayout::Full, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let imm =
            JacobianTrace::from_data(TraceLayout::Full, 2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let s = StateJacobian::Dense {
            n: 2,
            data: vec![0.0, 1.0, 2.0, 0.0],
        };
        let next = rtrl_advance(&trace, &s, &imm).unwrap();
        assert_eq!(next.data(), &[3.5, 4.0, 2.0, 4.5]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let trace = JacobianTrace::<f64>::zeros(TraceLayout::Diagonal, 2, 2);
        let imm = JacobianTrace::<f64>::zeros(TraceLayout::Full, 2, 2);
        let s = StateJacobian::Diagonal(vec![1.0, 1.0]);
        assert!(matches!(
            rtrl_advance(&trace, &s, &imm),
            Err(GradError::LayoutMismatch(_))
        ));
        let imm = JacobianTrace::<f64>::zeros(TraceLayout::Diagonal, 2, 2);
        let dense = StateJacobian::Dense {
            n: 2,
            data: vec![0.0; 4],
        };
        assert!(rtrl_advance(&trace, &dense, &imm).is_err());
    }

    #[test]
    fn diagonal_entry_is_zero_across_units() {
        let t = JacobianTrace::from_data(TraceLayout::Diagonal, 2, 2, vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(t.entry(0, 1), 2.0);
        assert_eq!(t.entry(0, 2), 0.0);
        assert_eq!(t.entry(1, 2), 3.0);
        assert_eq!(t.param_count(), 4);
        assert_eq!(t.storage_len(), 4);
    }

    #[test]
    fn contraction_takes_real_part() {
        let t = JacobianTrace::from_data(
            TraceLayout::Diagonal,
            1,
            2,
            vec![Complex64::new(0.0, 1.0), Complex64::new(2.0, 0.0)],
        )
        .unwrap();
        let mut out = vec![0.0; 2];
        t.contract_into(&[Complex64::new(0.0, 1.0)], &mut out);
        assert_eq!(out, vec![-1.0, 0.0]);
    }
}
