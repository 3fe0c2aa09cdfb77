//! Circulant matrix–vector products.
//!
//! The circulant matrix generated by `first_row = (a_0, …, a_{d-1})` has entries
//! `C[r][c] = a[(c - r) mod d]`, so row `r` is the first row rotated right by `r`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `C·x` by direct summation, `O(d²)`.
pub fn circulant_matvec(first_row: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check(first_row, x)?;
    let d = x.len();
    let mut y = vec![0.0; d];
    circulant_matvec_into(first_row, x, &mut y);
    Ok(y)
}

pub(crate) fn circulant_matvec_into(first_row: &[f64], x: &[f64], y: &mut [f64]) {
    let d = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, a) in first_row.iter().enumerate() {
            let idx = if r + k >= d { r + k - d } else { r + k };
            acc += a * x[idx];
        }
        *yr = acc;
    }
}

/// `Cᵀ·v`, used for back-propagation through a circulant layer.
pub(crate) fn circulant_transpose_matvec_into(first_row: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (c, oc) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (r, vr) in v.iter().enumerate() {
            let k = if c >= r { c - r } else { c + d - r };
            acc += first_row[k] * vr;
        }
        *oc = acc;
    }
}

/// `C·x` through the DFT: `y = IDFT(conj(DFT(a)) ⊙ DFT(x))`, `O(d log d)`.
pub fn circulant_matvec_fft(first_row: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check(first_row, x)?;
    let d = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(d);
    let inv = planner.plan_fft_inverse(d);
    let mut a: Vec<Complex64> = first_row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut xs: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut xs);
    let mut prod: Vec<Complex64> = a.iter().zip(&xs).map(|(p, q)| p.conj() * q).collect();
    inv.process(&mut prod);
    let scale = 1.0 / d as f64;
    Ok(prod.into_iter().map(|c| c.re * scale).collect())
}

/// Explicit `d × d` row-major matrix.
pub fn circulant_matrix(first_row: &[f64]) -> Vec<f64> {
    let d = first_row.len();
    let mut m = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            m[r * d + c] = first_row[(c + d - r) % d];
        }
    }
    m
}

fn check(first_row: &[f64], x: &[f64]) -> Result<()> {
    if first_row.is_empty() {
        return Err(Error::dim("circulant dimension must be at least 1"));
    }
    if first_row.len() != x.len() {
        return Err(Error::dim(format!(
            "circulant first row has length {}, vector has length {}",
            first_row.len(),
            x.len()
        )));
    }
    Ok(())
}
