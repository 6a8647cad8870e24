//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `count` equally spaced values from `lo` to `hi` inclusive; the midpoint when `count == 1`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|i| if i == count - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

pub fn lu_det(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Inverse of `E` after checking `|det E|` against `floor`.
pub fn checked_inverse(m: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, f64)> {
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !(det.abs() > floor) {
        return Err(Error::SingularE { det, floor });
    }
    let inv = lu.try_inverse().ok_or(Error::SingularE { det, floor })?;
    Ok((inv, det))
}

pub fn solve(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    m.clone().lu().solve(&DVector::from_column_slice(rhs)).map(|v| v.as_slice().to_vec())
}

/// Quadratic form `v^T M w`.
pub fn bilinear_form(m: &DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            acc += m[(i, j)] * v[i] * w[j];
        }
    }
    acc
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
