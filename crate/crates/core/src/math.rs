//! Small numeric helpers shared across modules.

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s · x`
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += s * xi);
}

/// `y ← s · y`
#[inline]
pub fn scale_in_place(s: f64, y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v *= s);
}

/// Row-major `rows × cols` matrix times vector.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    (0..rows)
        .map(|r| dot(&m[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `mᵀ g` for a row-major `rows × cols` matrix.
pub fn matvec_t(m: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        axpy(g[r], &m[r * cols..(r + 1) * cols], &mut out);
    }
    out
}

/// `out += g xᵀ` into a row-major `g.len() × x.len()` block.
pub fn outer_acc(g: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        axpy(gr, x, &mut out[r * cols..(r + 1) * cols]);
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
