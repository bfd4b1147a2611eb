//! Proximal and projection operators.
//!
//! These are the building blocks of the code and dictionary updates: the
//! Euclidean projection onto the l1 ball, the prox of the l-infinity norm
//! (its Moreau dual), the row-separable prox of the (1,inf) mixed norm,
//! elementwise soft thresholding, and the unit-column projection that
//! enforces the dictionary constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Euclidean projection of `v` onto the l1 ball of the given radius.
///
/// Sort-based thresholding, exact in O(n log n). Feasible inputs are
/// returned unchanged.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    if radius <= 0.0 {
        return Err(Error::Invalid(format!(
            "l1-ball radius must be positive, got {radius}"
        )));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return Ok(v.clone());
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(v.map(|x| x.signum() * (x.abs() - theta).max(0.0)))
}

/// Prox of `lambda * max_i |u_i|`: `argmin_u 1/2 ||u - v||^2 + lambda ||u||_inf`.
///
/// Computed through the Moreau decomposition `v = prox(v) + P_l1ball(v, lambda)`.
pub fn prox_linf(v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!(
            "prox weight must be nonnegative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(v.clone());
    }
    let projected = project_l1_ball(v, lambda)?;
    Ok(v - projected)
}

/// Row-separable prox of `lambda * ||M||_{1,inf}` where the mixed norm is the
/// sum over rows of the per-row max absolute entry.
pub fn prox_l1inf_rows(m: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!(
            "prox weight must be nonnegative, got {lambda}"
        )));
    }
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row = DVector::from_iterator(m.ncols(), m.row(i).iter().copied());
        let shrunk = prox_linf(&row, lambda)?;
        for j in 0..m.ncols() {
            out[(i, j)] = shrunk[j];
        }
    }
    Ok(out)
}

/// Elementwise soft thresholding: `sign(x) * max(|x| - lambda, 0)`.
pub fn soft_threshold(v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!(
            "threshold must be nonnegative, got {lambda}"
        )));
    }
    Ok(v.map(|x| x.signum() * (x.abs() - lambda).max(0.0)))
}

/// Rescale every column with Euclidean norm above 1 back to unit norm.
pub fn project_unit_columns(d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = d.clone();
    for j in 0..out.ncols() {
        let norm = out.column(j).norm();
        if norm > 1.0 {
            let mut col = out.column_mut(j);
            col /= norm;
        }
    }
    out
}

/// Sum over rows of the per-row max absolute entry.
pub fn l1inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().fold(0.0f64, |acc, x| acc.max(x.abs())))
        .sum()
}
