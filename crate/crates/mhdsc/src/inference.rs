//! Encoding of unseen samples against learned feature-view dictionaries,
//! label scoring through the label-view dictionary, and a ridge
//! least-squares classifier head over codes.

use nalgebra::{DMatrix, DVector};

use crate::dataset::ViewMatrix;
use crate::error::{Error, Result};
use crate::prox::soft_threshold;
use crate::solver::{fista_tau_next, spectral_norm};

/// Parameters of the encoding lasso. The sparsity weight is a separate
/// knob from the training one; they share a default.
#[derive(Debug, Clone, Copy)]
pub struct EncodeConfig {
    pub gamma1: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            gamma1: 0.01,
            max_iters: 2000,
            tol: 1e-12,
        }
    }
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma1 < 0.0 {
            return Err(Error::Invalid("sparsity weight must be nonnegative".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Real-valued class scores for one sample.
#[derive(Debug, Clone)]
pub struct LabelScores {
    pub values: DVector<f64>,
}

fn stack_problem(
    x: &[DVector<f64>],
    dicts: &[DMatrix<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.is_empty() || x.len() != dicts.len() {
        return Err(Error::Dimension(format!(
            "{} view vectors for {} dictionaries",
            x.len(),
            dicts.len()
        )));
    }
    let n_atoms = dicts[0].ncols();
    for (v, (xv, d)) in x.iter().zip(dicts).enumerate() {
        if xv.len() != d.nrows() {
            return Err(Error::Dimension(format!(
                "view {v} vector has {} entries but its dictionary has {} rows",
                xv.len(),
                d.nrows()
            )));
        }
        if d.ncols() != n_atoms {
            return Err(Error::Dimension("dictionaries disagree on atom count".into()));
        }
    }
    let rows: usize = x.iter().map(|v| v.len()).sum();
    let mut xs = DVector::zeros(rows);
    let mut ds = DMatrix::zeros(rows, n_atoms);
    let mut at = 0;
    for (xv, d) in x.iter().zip(dicts) {
        xs.rows_mut(at, xv.len()).copy_from(xv);
        ds.view_mut((at, 0), (d.nrows(), d.ncols())).copy_from(d);
        at += xv.len();
    }
    Ok((xs, ds))
}

/// Encode one sample: minimize `1/2 sum_v ||x^(v) - D^(v) w||^2 +
/// gamma1 ||w||_1` over the feature views by accelerated proximal
/// gradient with the soft-threshold prox and step `1/sigma_max(D^T D)`.
pub fn encode(
    x: &[DVector<f64>],
    dicts: &[DMatrix<f64>],
    cfg: &EncodeConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let (xs, ds) = stack_problem(x, dicts)?;
    let n_atoms = ds.ncols();
    let gram = ds.transpose() * &ds;
    let dtx = ds.transpose() * &xs;
    let lip = spectral_norm(&gram)?;
    if lip <= 1e-12 {
        // zero dictionary: the smooth term is constant and the penalized
        // minimizer is the origin
        return Ok(DVector::zeros(n_atoms));
    }
    let obj = |w: &DVector<f64>| -> f64 {
        0.5 * (&xs - &ds * w).norm_squared() + cfg.gamma1 * w.abs().sum()
    };
    let grad = |w: &DVector<f64>| -> DVector<f64> { &gram * w - &dtx };

    let mut w_cur: DVector<f64> = DVector::zeros(n_atoms);
    let mut w_agg = w_cur.clone();
    let mut best = w_agg.clone();
    let mut f_best = obj(&best);
    let mut trace = vec![f_best];
    let mut tau = 1.0f64;
    for _ in 0..cfg.max_iters {
        let z = tau * &w_cur + (1.0 - tau) * &w_agg;
        let target = &w_cur - grad(&z) / (tau * lip);
        let w_new = soft_threshold(&target, cfg.gamma1 / (tau * lip))?;
        if w_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("encoding diverged (non-finite iterate)".into()));
        }
        w_agg = tau * &w_new + (1.0 - tau) * &w_agg;
        w_cur = w_new;
        // the prox point carries exact zeros, so prefer it on ties
        for cand in [&w_cur, &w_agg] {
            let f_val = obj(cand);
            if f_val <= f_best {
                f_best = f_val;
                best = cand.clone();
            }
        }
        trace.push(f_best);
        if crate::solver::stalled(&trace, cfg.tol) {
            break;
        }
        tau = fista_tau_next(tau);
    }
    Ok(best)
}

/// Encode every column of a multiview sample matrix set.
pub fn encode_batch(
    views: &[ViewMatrix],
    dicts: &[DMatrix<f64>],
    cfg: &EncodeConfig,
) -> Result<DMatrix<f64>> {
    if views.is_empty() || views.len() != dicts.len() {
        return Err(Error::Dimension(format!(
            "{} views for {} dictionaries",
            views.len(),
            dicts.len()
        )));
    }
    let n = views[0].values.ncols();
    if views.iter().any(|v| v.values.ncols() != n) {
        return Err(Error::Dimension("views disagree on sample count".into()));
    }
    let n_atoms = dicts[0].ncols();
    let mut codes = DMatrix::zeros(n_atoms, n);
    for j in 0..n {
        let sample: Vec<DVector<f64>> = views
            .iter()
            .map(|v| v.values.column(j).into_owned())
            .collect();
        let w = encode(&sample, dicts, cfg)?;
        codes.column_mut(j).copy_from(&w);
    }
    Ok(codes)
}

/// Class scores of one encoded sample: the label-view dictionary applied
/// to the code.
pub fn predict_labels(w: &DVector<f64>, d_label: &DMatrix<f64>) -> Result<LabelScores> {
    if d_label.ncols() != w.len() {
        return Err(Error::Dimension(format!(
            "code has {} atoms but label dictionary has {} columns",
            w.len(),
            d_label.ncols()
        )));
    }
    let values = d_label * w;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite label scores".into()));
    }
    Ok(LabelScores { values })
}

/// Ridge least-squares classifier over codes:
/// `A = argmin ||Y - A W||_F^2 + ridge ||A||_F^2`, by normal equations.
pub fn train_ls_head(
    w_labelled: &DMatrix<f64>,
    y: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    if ridge < 0.0 {
        return Err(Error::Invalid("ridge must be nonnegative".into()));
    }
    if w_labelled.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "{} code columns but {} label columns",
            w_labelled.ncols(),
            y.ncols()
        )));
    }
    let mut gram = w_labelled * w_labelled.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        if ridge == 0.0 {
            Error::Numerical(
                "singular normal equations with ridge 0; use a positive ridge".into(),
            )
        } else {
            Error::Numerical("normal equations not positive definite".into())
        }
    })?;
    // A G = Y W^T, so with G symmetric: G A^T = W Y^T
    let at = chol.solve(&(w_labelled * y.transpose()));
    Ok(at.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(gamma1: f64) -> EncodeConfig {
        EncodeConfig {
            gamma1,
            max_iters: 5000,
            tol: 1e-14,
        }
    }

    #[test]
    fn encode_orthonormal_is_least_squares() {
        // identity stacked over two views, no penalty: w = D^T x
        let d1 = DMatrix::<f64>::identity(4, 4).rows(0, 2).into_owned();
        let d2 = DMatrix::<f64>::identity(4, 4).rows(2, 2).into_owned();
        let x1 = DVector::from_vec(vec![0.7, -1.2]);
        let x2 = DVector::from_vec(vec![0.1, 2.5]);
        let w = encode(&[x1.clone(), x2.clone()], &[d1, d2], &cfg(0.0)).unwrap();
        let expect = DVector::from_vec(vec![0.7, -1.2, 0.1, 2.5]);
        assert!((w - expect).amax() < 1e-8);
    }

    #[test]
    fn encode_identity_is_soft_threshold() {
        let d = DMatrix::<f64>::identity(3, 3);
        let x = DVector::from_vec(vec![1.0, -0.2, 0.45]);
        let w = encode(&[x.clone()], &[d], &cfg(0.3)).unwrap();
        let expect = soft_threshold(&x, 0.3).unwrap();
        assert!((w - expect).amax() < 1e-8);
    }

    #[test]
    fn encode_satisfies_lasso_optimality() {
        let d = DMatrix::from_fn(6, 4, |i, j| ((i as f64 + 1.0) * (j as f64 + 1.3) * 0.83).sin());
        let x = DVector::from_fn(6, |i, _| ((i as f64) * 0.5).cos());
        let gamma = 0.3;
        let w = encode(&[x.clone()], std::slice::from_ref(&d), &cfg(gamma)).unwrap();
        let grad = d.transpose() * (&d * &w - &x);
        for j in 0..w.len() {
            assert!(grad[j].abs() <= gamma + 1e-6, "coordinate {j}: {}", grad[j]);
            if w[j].abs() > 1e-6 {
                assert!((grad[j] + w[j].signum() * gamma).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn encode_zero_dictionary_gives_zero_code() {
        let d = DMatrix::zeros(3, 5);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = encode(&[x], &[d], &cfg(0.1)).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let d = DMatrix::zeros(3, 5);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert!(encode(&[x], &[d], &cfg(0.1)).is_err());
    }

    #[test]
    fn predict_is_matrix_vector_product_and_linear() {
        let d = DMatrix::from_fn(3, 4, |i, j| (i as f64) - 0.3 * (j as f64));
        let w1 = DVector::from_vec(vec![1.0, 0.0, -2.0, 0.5]);
        let w2 = DVector::from_vec(vec![0.2, -1.0, 0.0, 3.0]);
        let s1 = predict_labels(&w1, &d).unwrap();
        assert!((&s1.values - &d * &w1).amax() == 0.0);
        // zero code, basis code
        let z = predict_labels(&DVector::zeros(4), &d).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        let eye = DMatrix::<f64>::identity(4, 4);
        let e2 = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let s = predict_labels(&e2, &eye).unwrap();
        assert_eq!(s.values[2], 1.0);
        // linearity
        let combo = predict_labels(&(2.0 * &w1 + 3.0 * &w2), &d).unwrap();
        let parts = 2.0 * predict_labels(&w1, &d).unwrap().values
            + 3.0 * predict_labels(&w2, &d).unwrap().values;
        assert!((combo.values - parts).amax() < 1e-12);
    }

    #[test]
    fn ls_head_identity_and_planted_map() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let a = train_ls_head(&DMatrix::identity(3, 3), &y, 0.0).unwrap();
        assert!((&a - &y).amax() < 1e-10);

        let w = DMatrix::from_fn(3, 5, |i, j| ((i as f64 + 1.0) * (j as f64 + 1.7) * 0.37).sin());
        let m = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 0.25, 2.0, 0.0, -0.75]);
        let planted = &m * &w;
        let a = train_ls_head(&w, &planted, 0.0).unwrap();
        assert!((&a - &m).amax() < 1e-8);
    }

    #[test]
    fn ls_head_ridge_limit_and_singularity() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let err = train_ls_head(&w, &y, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        let a = train_ls_head(&w, &y, 1e12).unwrap();
        assert!(a.amax() < 1e-9);
    }

    #[test]
    fn batch_encode_matches_per_sample() {
        let d = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 0.61).cos());
        let view = ViewMatrix {
            values: DMatrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 * 0.21).sin()),
            view_id: 0,
        };
        let c = cfg(0.05);
        let codes = encode_batch(std::slice::from_ref(&view), std::slice::from_ref(&d), &c).unwrap();
        for j in 0..5 {
            let w = encode(&[view.values.column(j).into_owned()], std::slice::from_ref(&d), &c).unwrap();
            assert_eq!(codes.column(j), w.column(0));
        }
    }
}
