use crate::cells::CtrnnParams;

use super::GradError;

/// Random-feedback local online trace for a CT-RNN: one entry per
/// recurrent weight, approximating `∂h_i/∂W_ij` and dropping all
/// cross-unit terms.
#[derive(Clone, Debug, PartialEq)]
pub struct RfloTrace {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RfloTrace {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn for_params(params: &CtrnnParams) -> Self {
        Self::zeros(params.hidden_dim(), params.xi_dim())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `out[i·cols + j] += Ĵ_ij · g_i`, i.e. the weight update direction for
    /// a per-unit learning signal `g`.
    pub fn contract_into(&self, signal: &[f64], out: &mut [f64]) {
        for (i, &g) in signal.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let dst = &mut out[i * self.cols..(i + 1) * self.cols];
            for (o, &j) in dst.iter_mut().zip(row) {
                *o += j * g;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `Ĵ_{t+1} = (1 − dt/τ) Ĵ_t + (dt/τ) φ'(Wξ_t) ξ_tᵀ` with φ = tanh.
pub fn rflo_advance(
    trace: &RfloTrace,
    params: &CtrnnParams,
    xi: &[f64],
    dt: f64,
) -> Result<RfloTrace, GradError> {
    let mut next = trace.clone();
    rflo_advance_in_place(&mut next, params, xi, dt)?;
    Ok(next)
}

pub fn rflo_advance_in_place(
    trace: &mut RfloTrace,
    params: &CtrnnParams,
    xi: &[f64],
    dt: f64,
) -> Result<(), GradError> {
    let n = params.hidden_dim();
    let cols = params.xi_dim();
    if trace.rows != n || trace.cols != cols {
        return Err(GradError::Shape {
            what: "RFLO trace",
            expected: n * cols,
            got: trace.rows * trace.cols,
        });
    }
    if xi.len() != cols {
        return Err(GradError::Shape {
            what: "augmented input",
            expected: cols,
            got: xi.len(),
        });
    }
    let w = params.w();
    let tau = params.tau();
    for i in 0..n {
        let wrow = &w[i * cols..(i + 1) * cols];
        let z: f64 = wrow.iter().zip(xi).map(|(a, b)| a * b).sum();
        let th = z.tanh();
        let k = dt / tau[i];
        let gain = k * (1.0 - th * th);
        let decay = 1.0 - k;
        let row = &mut trace.data[i * cols..(i + 1) * cols];
        for (r, &x) in row.iter_mut().zip(xi) {
            *r = decay * *r + gain * x;
        }
    }
    Ok(())
}
