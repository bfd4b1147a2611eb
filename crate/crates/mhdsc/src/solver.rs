//! The alternating optimizer: objective evaluation, the accelerated
//! proximal code and dictionary updates, the closed-form view-weight
//! update, and the outer loop tying them together.
//!
//! Both inner solvers are the same first-order scheme: an interpolated
//! point `Z = tau*W + (1-tau)*W_agg`, a prox-gradient step from the
//! current iterate with step `1/(tau*L)`, an aggregate update with the
//! same weights, and the `1/tau^2 - 1/tau` recurrence for `tau`. The
//! returned iterate is the best aggregate seen, which makes every block
//! update non-increasing in the full objective.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::MultiviewDataset;
use crate::error::{Error, Result};
use crate::graph::{
    self, HessianConfig, LaplacianWeighting, RegularizerMatrix,
};
use crate::prox::{l1inf_norm, prox_l1inf_rows};

/// Which graph regularizer the manifold term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerChoice {
    Hessian,
    Laplacian,
    None,
}

impl RegularizerChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hessian" => Ok(RegularizerChoice::Hessian),
            "laplacian" => Ok(RegularizerChoice::Laplacian),
            "none" => Ok(RegularizerChoice::None),
            other => Err(Error::Invalid(format!("unknown regularizer '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RegularizerChoice::Hessian => "hessian",
            RegularizerChoice::Laplacian => "laplacian",
            RegularizerChoice::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hyperparams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// view-weight sharpness exponent; must exceed 1
    pub r: f64,
    pub n_atoms: usize,
    pub inner_max_iters: usize,
    pub outer_max_iters: usize,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub regularizer: RegularizerChoice,
    pub neighbors: usize,
    pub tangent_dim: usize,
    pub hessian_ridge: f64,
    /// whether the zero-padded label view contributes a manifold matrix
    pub label_view_manifold: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma1: 0.01,
            gamma2: 0.01,
            gamma3: 0.1,
            r: 5.0,
            n_atoms: 10,
            inner_max_iters: 500,
            outer_max_iters: 100,
            inner_tol: 1e-6,
            outer_tol: 1e-5,
            regularizer: RegularizerChoice::Hessian,
            neighbors: 10,
            tangent_dim: 2,
            hessian_ridge: 1e-6,
            label_view_manifold: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 || self.gamma3 < 0.0 {
            return Err(Error::Invalid("penalty weights must be nonnegative".into()));
        }
        if self.r <= 1.0 {
            return Err(Error::Invalid(format!("r must exceed 1, got {}", self.r)));
        }
        if self.n_atoms == 0 {
            return Err(Error::Invalid("atom count must be positive".into()));
        }
        if self.inner_tol <= 0.0 || self.outer_tol <= 0.0 {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Learned variables: V+1 dictionaries (the last one maps codes to label
/// scores), the shared code matrix, and the view weights.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub dictionaries: Vec<DMatrix<f64>>,
    /// N_d x N, labelled columns first
    pub codes: DMatrix<f64>,
    pub labelled_count: usize,
    pub alpha: DVector<f64>,
}

impl ModelState {
    pub fn n_feature_views(&self) -> usize {
        self.dictionaries.len() - 1
    }

    pub fn label_dictionary(&self) -> &DMatrix<f64> {
        self.dictionaries.last().expect("V+1 dictionaries")
    }

    pub fn feature_dictionaries(&self) -> &[DMatrix<f64>] {
        &self.dictionaries[..self.dictionaries.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dictionaries.len() < 2 {
            return Err(Error::Invalid("need at least one feature view plus the label view".into()));
        }
        for (v, d) in self.dictionaries.iter().enumerate() {
            for j in 0..d.ncols() {
                if d.column(j).norm() > 1.0 + 1e-10 {
                    return Err(Error::Invalid(format!(
                        "dictionary {v} column {j} exceeds unit norm"
                    )));
                }
            }
        }
        if (self.alpha.sum() - 1.0).abs() > 1e-10 || self.alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::Invalid("view weights must lie on the simplex".into()));
        }
        Ok(())
    }
}

/// Per-term values of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBreakdown {
    pub recon_labelled: f64,
    pub recon_unlabelled: f64,
    pub sparsity_w: f64,
    pub sparsity_d: f64,
    pub manifold: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    fn assemble(
        recon_labelled: f64,
        recon_unlabelled: f64,
        sparsity_w: f64,
        sparsity_d: f64,
        manifold: f64,
    ) -> Self {
        ObjectiveBreakdown {
            recon_labelled,
            recon_unlabelled,
            sparsity_w,
            sparsity_d,
            manifold,
            total: recon_labelled + recon_unlabelled + sparsity_w + sparsity_d + manifold,
        }
    }
}

fn stack_rows(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let cols = mats.first().map_or(0, |m| m.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in mats {
        out.view_mut((at, 0), (m.nrows(), m.ncols())).copy_from(m);
        at += m.nrows();
    }
    out
}

fn trace_whwt(w: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    (w * h).component_mul(w).sum()
}

/// Manifold matrix actually used by the solver: the per-view regularizers
/// weighted by `alpha_v^r`. `None` when there are no regularizers.
pub fn effective_regularizer(
    regs: &[RegularizerMatrix],
    alpha: &DVector<f64>,
    r: f64,
) -> Option<DMatrix<f64>> {
    if regs.is_empty() {
        return None;
    }
    let weights: Vec<f64> = alpha.iter().take(regs.len()).map(|&a| a.powf(r)).collect();
    Some(graph::weighted_sum(regs, &weights))
}

/// Evaluate every term of the training objective at the given state.
pub fn objective(
    state: &ModelState,
    data: &MultiviewDataset,
    regs: &[RegularizerMatrix],
    hp: &Hyperparams,
) -> Result<ObjectiveBreakdown> {
    let n_views = data.n_views();
    if state.dictionaries.len() != n_views + 1 {
        return Err(Error::Dimension(format!(
            "{} dictionaries for {} feature views",
            state.dictionaries.len(),
            n_views
        )));
    }
    let l = data.labelled_count;
    let n = data.n_samples();
    let u = n - l;
    if state.codes.ncols() != n {
        return Err(Error::Dimension(format!(
            "codes have {} columns for {n} samples",
            state.codes.ncols()
        )));
    }
    let w_l = state.codes.columns(0, l);
    let mut recon_l = 0.0;
    for (v, view) in data.views.iter().enumerate() {
        if view.values.nrows() != state.dictionaries[v].nrows() {
            return Err(Error::Dimension(format!(
                "view {v} has {} features but its dictionary has {} rows",
                view.values.nrows(),
                state.dictionaries[v].nrows()
            )));
        }
        let resid = view.values.columns(0, l) - &state.dictionaries[v] * w_l;
        recon_l += resid.norm_squared();
    }
    let label_resid = &data.labels.values - state.label_dictionary() * w_l;
    recon_l += label_resid.norm_squared();
    recon_l /= 2.0 * l as f64;

    let mut recon_u = 0.0;
    if u > 0 {
        let w_u = state.codes.columns(l, u);
        for (v, view) in data.views.iter().enumerate() {
            let resid = view.values.columns(l, u) - &state.dictionaries[v] * w_u;
            recon_u += resid.norm_squared();
        }
        recon_u /= 2.0 * u as f64;
    }

    let sparsity_w = hp.gamma1 * l1inf_norm(&state.codes);
    let sparsity_d: f64 = hp.gamma2
        * state
            .dictionaries
            .iter()
            .map(|d| l1inf_norm(&d.transpose()))
            .sum::<f64>();

    let manifold = match effective_regularizer(regs, &state.alpha, hp.r) {
        Some(h) if hp.gamma3 > 0.0 => hp.gamma3 * trace_whwt(&state.codes, &h),
        _ => 0.0,
    };

    Ok(ObjectiveBreakdown::assemble(
        recon_l, recon_u, sparsity_w, sparsity_d, manifold,
    ))
}

/// Largest singular value by power iteration on `M^T M`, deterministic
/// all-ones start, relative tolerance 1e-8, iteration cap 10000.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Invalid("spectral norm of an empty matrix".into()));
    }
    let g = m.transpose() * m;
    if g.norm() == 0.0 {
        return Ok(0.0);
    }
    let n = g.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda_old = 0.0f64;
    let mut rescue = 0usize;
    for _ in 0..10_000 {
        let w = &g * &v;
        let wn = w.norm();
        if wn < 1e-300 {
            // start vector fell in the null space; restart from a basis vector
            v = DVector::zeros(n);
            v[rescue % n] = 1.0;
            rescue += 1;
            lambda_old = 0.0;
            continue;
        }
        v = w / wn;
        if (wn - lambda_old).abs() <= 1e-8 * wn.max(1e-300) {
            return Ok(wn.sqrt());
        }
        lambda_old = wn;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge; last estimate {}",
        lambda_old.sqrt()
    )))
}

/// True when the monotone objective trace has stopped improving: the
/// gain over the last ten iterations is below `tol` relative to the
/// value ten iterations ago. A single flat iteration is not enough,
/// since accelerated schemes improve non-uniformly.
pub fn stalled(trace: &[f64], tol: f64) -> bool {
    const WINDOW: usize = 10;
    if trace.len() <= WINDOW {
        return false;
    }
    let past = trace[trace.len() - 1 - WINDOW];
    let cur = *trace.last().expect("nonempty");
    past - cur <= tol * past.abs().max(1e-12)
}

/// Next momentum parameter: the positive root of
/// `tau'^{-2} - tau'^{-1} = tau^{-2}`.
pub fn fista_tau_next(tau: f64) -> f64 {
    let t = 1.0 / tau;
    let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
    1.0 / t_next
}

/// Result of one code update: the new codes and the per-iteration values
/// of the code subproblem objective.
#[derive(Debug, Clone)]
pub struct CodesUpdate {
    pub codes: DMatrix<f64>,
    pub trace: Vec<f64>,
}

struct CodeProblem<'a> {
    d_all: DMatrix<f64>,
    d_feat: DMatrix<f64>,
    x_l: DMatrix<f64>,
    x_u: DMatrix<f64>,
    dtd: DMatrix<f64>,
    dtx_l: DMatrix<f64>,
    d1td1: DMatrix<f64>,
    d1tx_u: DMatrix<f64>,
    h: Option<&'a DMatrix<f64>>,
    gamma3: f64,
    l: usize,
    u: usize,
}

impl<'a> CodeProblem<'a> {
    fn new(
        state: &ModelState,
        data: &MultiviewDataset,
        h: Option<&'a DMatrix<f64>>,
        hp: &Hyperparams,
    ) -> Self {
        let l = data.labelled_count;
        let u = data.n_samples() - l;
        let d_all = stack_rows(&state.dictionaries.iter().cloned().collect::<Vec<_>>());
        let d_feat = stack_rows(state.feature_dictionaries());
        let mut labelled: Vec<DMatrix<f64>> = data
            .views
            .iter()
            .map(|v| v.values.columns(0, l).into_owned())
            .collect();
        labelled.push(data.labels.values.clone());
        let x_l = stack_rows(&labelled);
        let unlabelled: Vec<DMatrix<f64>> = data
            .views
            .iter()
            .map(|v| v.values.columns(l, u).into_owned())
            .collect();
        let x_u = if u > 0 {
            stack_rows(&unlabelled)
        } else {
            DMatrix::zeros(d_feat.nrows(), 0)
        };
        let dtd = d_all.transpose() * &d_all;
        let dtx_l = d_all.transpose() * &x_l;
        let d1td1 = d_feat.transpose() * &d_feat;
        let d1tx_u = d_feat.transpose() * &x_u;
        let gamma3 = if h.is_some() { hp.gamma3 } else { 0.0 };
        CodeProblem {
            d_all,
            d_feat,
            x_l,
            x_u,
            dtd,
            dtx_l,
            d1td1,
            d1tx_u,
            h,
            gamma3,
            l,
            u,
        }
    }

    fn smooth(&self, w: &DMatrix<f64>) -> f64 {
        let w_l = w.columns(0, self.l);
        let mut val = (&self.x_l - &self.d_all * w_l).norm_squared() / (2.0 * self.l as f64);
        if self.u > 0 {
            let w_u = w.columns(self.l, self.u);
            val += (&self.x_u - &self.d_feat * w_u).norm_squared() / (2.0 * self.u as f64);
        }
        if let Some(h) = self.h {
            val += self.gamma3 * trace_whwt(w, h);
        }
        val
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l + self.u;
        let mut g = DMatrix::zeros(w.nrows(), n);
        let gl = (&self.dtd * w.columns(0, self.l) - &self.dtx_l) / self.l as f64;
        g.columns_mut(0, self.l).copy_from(&gl);
        if self.u > 0 {
            let gu = (&self.d1td1 * w.columns(self.l, self.u) - &self.d1tx_u) / self.u as f64;
            g.columns_mut(self.l, self.u).copy_from(&gu);
        }
        if let Some(h) = self.h {
            g += 2.0 * self.gamma3 * w * h;
        }
        g
    }
}

/// Value of the code subproblem: smooth part plus `gamma1 ||W||_{1,inf}`.
pub fn code_objective(
    state: &ModelState,
    data: &MultiviewDataset,
    h: Option<&DMatrix<f64>>,
    hp: &Hyperparams,
    w: &DMatrix<f64>,
) -> f64 {
    let p = CodeProblem::new(state, data, h, hp);
    p.smooth(w) + hp.gamma1 * l1inf_norm(w)
}

/// Smooth part of the code subproblem.
pub fn code_smooth_value(
    state: &ModelState,
    data: &MultiviewDataset,
    h: Option<&DMatrix<f64>>,
    hp: &Hyperparams,
    w: &DMatrix<f64>,
) -> f64 {
    CodeProblem::new(state, data, h, hp).smooth(w)
}

/// Gradient of the smooth part of the code subproblem.
pub fn code_smooth_gradient(
    state: &ModelState,
    data: &MultiviewDataset,
    h: Option<&DMatrix<f64>>,
    hp: &Hyperparams,
    w: &DMatrix<f64>,
) -> DMatrix<f64> {
    CodeProblem::new(state, data, h, hp).gradient(w)
}

/// Lipschitz constants `(L1, L2, L3)` of the code subproblem gradient
/// blocks. `L3` carries the factor 2 of the quadratic-form gradient.
pub fn code_lipschitz(
    state: &ModelState,
    data: &MultiviewDataset,
    h: Option<&DMatrix<f64>>,
    hp: &Hyperparams,
) -> Result<(f64, f64, f64)> {
    let p = CodeProblem::new(state, data, h, hp);
    let l1 = spectral_norm(&p.dtd)? / p.l as f64;
    let l2 = if p.u > 0 {
        spectral_norm(&p.d1td1)? / p.u as f64
    } else {
        0.0
    };
    let l3 = match p.h {
        Some(h) => 2.0 * p.gamma3 * spectral_norm(h)?,
        None => 0.0,
    };
    Ok((l1, l2, l3))
}

/// Solve the code subproblem with dictionaries and view weights fixed.
pub fn update_codes(
    state: &ModelState,
    data: &MultiviewDataset,
    h: Option<&DMatrix<f64>>,
    hp: &Hyperparams,
) -> Result<CodesUpdate> {
    let p = CodeProblem::new(state, data, h, hp);
    let (l1, l2, l3) = code_lipschitz(state, data, h, hp)?;
    let obj = |w: &DMatrix<f64>| p.smooth(w) + hp.gamma1 * l1inf_norm(w);

    if l1 + l3 <= 1e-12 && (p.u == 0 || l2 + l3 <= 1e-12) {
        // no curvature anywhere: the data terms are constant in W, so the
        // penalized minimizer is W = 0 (or anything when gamma1 = 0)
        let codes = if hp.gamma1 > 0.0 {
            DMatrix::zeros(state.codes.nrows(), state.codes.ncols())
        } else {
            state.codes.clone()
        };
        let val = obj(&codes);
        return Ok(CodesUpdate {
            codes,
            trace: vec![val],
        });
    }
    let denom_l = (l1 + l3).max(1e-12);
    let denom_u = (l2 + l3).max(1e-12);

    let mut w_cur = state.codes.clone();
    let mut w_agg = w_cur.clone();
    let mut best = w_agg.clone();
    let mut f_best = obj(&best);
    let mut trace = vec![f_best];
    let mut tau = 1.0f64;

    for _ in 0..hp.inner_max_iters {
        let z = tau * &w_cur + (1.0 - tau) * &w_agg;
        let g = p.gradient(&z);

        let mut w_new = DMatrix::zeros(w_cur.nrows(), w_cur.ncols());
        let u_l = w_cur.columns(0, p.l) - g.columns(0, p.l) / (tau * denom_l);
        let step_l = prox_l1inf_rows(&u_l.into_owned(), hp.gamma1 / (tau * denom_l))?;
        w_new.columns_mut(0, p.l).copy_from(&step_l);
        if p.u > 0 {
            let u_u = w_cur.columns(p.l, p.u) - g.columns(p.l, p.u) / (tau * denom_u);
            let step_u = prox_l1inf_rows(&u_u.into_owned(), hp.gamma1 / (tau * denom_u))?;
            w_new.columns_mut(p.l, p.u).copy_from(&step_u);
        }
        if w_new.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(
                "code update diverged (non-finite iterate); Lipschitz estimate may be invalid".into(),
            ));
        }
        w_agg = tau * &w_new + (1.0 - tau) * &w_agg;
        w_cur = w_new;

        let f_val = obj(&w_agg);
        if f_val <= f_best {
            f_best = f_val;
            best = w_agg.clone();
        }
        trace.push(f_best);
        if stalled(&trace, hp.inner_tol) {
            break;
        }
        tau = fista_tau_next(tau);
    }
    Ok(CodesUpdate { codes: best, trace })
}

/// Result of one dictionary update: new dictionaries and the per-view
/// traces of the dictionary subproblem objective.
#[derive(Debug, Clone)]
pub struct DictionaryUpdate {
    pub dictionaries: Vec<DMatrix<f64>>,
    pub traces: Vec<Vec<f64>>,
}

fn project_rows_unit(b: &mut DMatrix<f64>) {
    for i in 0..b.nrows() {
        let norm = b.row(i).norm();
        if norm > 1.0 {
            let mut row = b.row_mut(i);
            row /= norm;
        }
    }
}

/// Solve the dictionary subproblem with codes fixed, one view at a time.
/// Feature views reconstruct both blocks; the label view only the
/// labelled one. Unit atom norms are enforced after every prox step.
pub fn update_dictionary(
    state: &ModelState,
    data: &MultiviewDataset,
    hp: &Hyperparams,
) -> Result<DictionaryUpdate> {
    let l = data.labelled_count;
    let n = data.n_samples();
    let u = n - l;
    let n_views = data.n_views();
    let w_l = state.codes.columns(0, l).into_owned();
    let w_u = state.codes.columns(l, u).into_owned();
    let a_l = &w_l * w_l.transpose();
    let l1 = spectral_norm(&a_l)? / l as f64;
    let (a_u, l2) = if u > 0 {
        let a_u = &w_u * w_u.transpose();
        let l2 = spectral_norm(&a_u)? / u as f64;
        (a_u, l2)
    } else {
        (DMatrix::zeros(a_l.nrows(), a_l.ncols()), 0.0)
    };

    let mut dictionaries = Vec::with_capacity(n_views + 1);
    let mut traces = Vec::with_capacity(n_views + 1);
    for v in 0..=n_views {
        let is_label = v == n_views;
        let x_l: DMatrix<f64> = if is_label {
            data.labels.values.clone()
        } else {
            data.views[v].values.columns(0, l).into_owned()
        };
        let x_u: Option<DMatrix<f64>> =
            (!is_label && u > 0).then(|| data.views[v].values.columns(l, u).into_owned());
        let c_l = &w_l * x_l.transpose();
        let c_u = x_u.as_ref().map(|x| &w_u * x.transpose());
        let l_tot = if is_label { l1 } else { l1 + l2 };

        let obj = |b: &DMatrix<f64>| -> f64 {
            let mut val =
                (&x_l - b.transpose() * &w_l).norm_squared() / (2.0 * l as f64);
            if let Some(x) = &x_u {
                val += (x - b.transpose() * &w_u).norm_squared() / (2.0 * u as f64);
            }
            val + hp.gamma2 * l1inf_norm(b)
        };
        let grad = |z: &DMatrix<f64>| -> DMatrix<f64> {
            let mut g = (&a_l * z - &c_l) / l as f64;
            if let Some(c) = &c_u {
                g += (&a_u * z - c) / u as f64;
            }
            g
        };

        if l_tot <= 1e-12 {
            // zero codes: the data gradient vanishes, keep the dictionary
            // and just enforce feasibility
            let d = crate::prox::project_unit_columns(&state.dictionaries[v]);
            let val = obj(&d.transpose());
            dictionaries.push(d);
            traces.push(vec![val]);
            continue;
        }

        let mut b_cur = state.dictionaries[v].transpose();
        project_rows_unit(&mut b_cur);
        let mut b_agg = b_cur.clone();
        let mut best = b_agg.clone();
        let mut f_best = obj(&best);
        let mut trace = vec![f_best];
        let mut tau = 1.0f64;

        for _ in 0..hp.inner_max_iters {
            let z = tau * &b_cur + (1.0 - tau) * &b_agg;
            let g = grad(&z);
            let target = &b_cur - g / (tau * l_tot);
            let mut b_new = prox_l1inf_rows(&target, hp.gamma2 / (tau * l_tot))?;
            project_rows_unit(&mut b_new);
            if b_new.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "dictionary update for view {v} diverged (non-finite iterate)"
                )));
            }
            b_agg = tau * &b_new + (1.0 - tau) * &b_agg;
            b_cur = b_new;

            let f_val = obj(&b_agg);
            if f_val <= f_best {
                f_best = f_val;
                best = b_agg.clone();
            }
            trace.push(f_best);
            if stalled(&trace, hp.inner_tol) {
                break;
            }
            tau = fista_tau_next(tau);
        }
        dictionaries.push(best.transpose());
        traces.push(trace);
    }
    Ok(DictionaryUpdate {
        dictionaries,
        traces,
    })
}

/// Closed-form simplex weights from per-view manifold energies:
/// `alpha_v` proportional to `(1/e_v)^{1/(r-1)}`, energies clamped below
/// at 1e-12.
pub fn alpha_from_energies(energies: &[f64], r: f64) -> Result<DVector<f64>> {
    if r <= 1.0 {
        return Err(Error::Invalid(format!("r must exceed 1, got {r}")));
    }
    if energies.is_empty() {
        return Err(Error::Invalid("no energies".into()));
    }
    let exponent = 1.0 / (r - 1.0);
    let weights: Vec<f64> = energies
        .iter()
        .map(|&e| (1.0 / e.max(1e-12)).powf(exponent))
        .collect();
    let sum: f64 = weights.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::Numerical("degenerate view-weight normalization".into()));
    }
    Ok(DVector::from_vec(weights.iter().map(|w| w / sum).collect()))
}

/// View-weight update: energies `e_v = tr(W H_v W^T)` fed through the
/// closed form above.
pub fn update_alpha(
    codes: &DMatrix<f64>,
    regs: &[RegularizerMatrix],
    r: f64,
) -> Result<DVector<f64>> {
    let energies: Vec<f64> = regs.iter().map(|h| trace_whwt(codes, &h.values)).collect();
    alpha_from_energies(&energies, r)
}

/// Output of [`fit`]: the final state, the objective breakdown per outer
/// iteration (index 0 is the initialization), and the per-view
/// regularizer matrices that were built.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    pub trace: Vec<ObjectiveBreakdown>,
    pub regularizers: Vec<RegularizerMatrix>,
}

/// Build one regularizer matrix per view (plus the zero-padded label
/// view when enabled), each rescaled to unit spectral norm so gamma3
/// weights views comparably and the code-update step size stays usable.
fn build_regularizers(data: &MultiviewDataset, hp: &Hyperparams) -> Result<Vec<RegularizerMatrix>> {
    let n = data.n_samples();
    let l = data.labelled_count;
    let mut mats: Vec<DMatrix<f64>> = data.views.iter().map(|v| v.values.clone()).collect();
    if hp.label_view_manifold {
        // labels zero-padded over the unlabelled block
        let mut padded = DMatrix::zeros(data.n_classes(), n);
        padded.columns_mut(0, l).copy_from(&data.labels.values);
        mats.push(padded);
    }
    mats.iter()
        .map(|x| {
            let mut reg = match hp.regularizer {
                RegularizerChoice::Hessian => graph::hessian_energy(
                    x,
                    &HessianConfig {
                        k: hp.neighbors,
                        m: hp.tangent_dim,
                        ridge: hp.hessian_ridge,
                    },
                )?,
                RegularizerChoice::Laplacian => {
                    graph::laplacian(x, hp.neighbors, LaplacianWeighting::Binary)?
                }
                RegularizerChoice::None => unreachable!("checked by caller"),
            };
            let scale = spectral_norm(&reg.values)?;
            if scale > 0.0 {
                reg.values /= scale;
            }
            Ok(reg)
        })
        .collect()
}

fn init_state(
    data: &MultiviewDataset,
    hp: &Hyperparams,
    n_manifold_views: usize,
    rng: &mut ChaCha8Rng,
) -> ModelState {
    let n = data.n_samples();
    let l = data.labelled_count;
    let n_views = data.n_views();
    let pick = |rng: &mut ChaCha8Rng, pool: usize, count: usize| -> Vec<usize> {
        if count <= pool {
            let mut idx: Vec<usize> = (0..pool).collect();
            idx.shuffle(rng);
            idx.truncate(count);
            idx
        } else {
            (0..count).map(|_| rng.gen_range(0..pool)).collect()
        }
    };
    let mut dictionaries = Vec::with_capacity(n_views + 1);
    for view in &data.views {
        let cols = pick(rng, n, hp.n_atoms);
        let mut d = DMatrix::from_fn(view.values.nrows(), hp.n_atoms, |i, j| {
            view.values[(i, cols[j])]
        });
        for j in 0..d.ncols() {
            let norm = d.column(j).norm();
            if norm > 0.0 {
                let mut c = d.column_mut(j);
                c /= norm;
            }
        }
        dictionaries.push(d);
    }
    {
        let cols = pick(rng, l, hp.n_atoms);
        let mut d = DMatrix::from_fn(data.n_classes(), hp.n_atoms, |i, j| {
            data.labels.values[(i, cols[j])]
        });
        for j in 0..d.ncols() {
            let norm = d.column(j).norm();
            if norm > 0.0 {
                let mut c = d.column_mut(j);
                c /= norm;
            }
        }
        dictionaries.push(d);
    }
    let mut alpha = DVector::zeros(n_views + 1);
    for v in 0..n_manifold_views {
        alpha[v] = 1.0 / n_manifold_views as f64;
    }
    ModelState {
        dictionaries,
        codes: DMatrix::zeros(hp.n_atoms, n),
        labelled_count: l,
        alpha,
    }
}

/// Run the alternating optimization: code update, dictionary update,
/// view-weight update, until the objective stalls. Deterministic for a
/// fixed seed. Errors if any outer step increases the objective beyond
/// round-off slack.
pub fn fit(data: &MultiviewDataset, hp: &Hyperparams, seed: u64) -> Result<FitResult> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regularizers = match hp.regularizer {
        RegularizerChoice::None => Vec::new(),
        _ => build_regularizers(data, hp)?,
    };
    let n_manifold_views = if regularizers.is_empty() {
        data.n_views() + 1
    } else {
        regularizers.len()
    };
    let mut state = init_state(data, hp, n_manifold_views, &mut rng);
    let use_manifold = !regularizers.is_empty() && hp.gamma3 > 0.0;

    let mut trace = vec![objective(&state, data, &regularizers, hp)?];
    for _ in 0..hp.outer_max_iters {
        let h = if use_manifold {
            effective_regularizer(&regularizers, &state.alpha, hp.r)
        } else {
            None
        };
        let cu = update_codes(&state, data, h.as_ref(), hp)?;
        state.codes = cu.codes;
        let du = update_dictionary(&state, data, hp)?;
        state.dictionaries = du.dictionaries;
        if use_manifold {
            let head = update_alpha(&state.codes, &regularizers, hp.r)?;
            let mut alpha = DVector::zeros(state.alpha.len());
            for v in 0..head.len() {
                alpha[v] = head[v];
            }
            state.alpha = alpha;
        }

        let bd = objective(&state, data, &regularizers, hp)?;
        let prev = trace.last().expect("nonempty").total;
        if bd.total > prev + 1e-8 * prev.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "objective increased from {prev} to {} in an outer iteration",
                bd.total
            )));
        }
        let done = (prev - bd.total).abs() <= hp.outer_tol * prev.abs().max(1e-12);
        trace.push(bd);
        if done {
            break;
        }
    }
    Ok(FitResult {
        state,
        trace,
        regularizers,
    })
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 6] = b"MHDSC1";

fn push_u64(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&(x as u64).to_le_bytes());
}

fn push_f64s<'a>(buf: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        push_f64s(buf, m.row(i).iter());
    }
}

pub fn format_model(state: &ModelState, hp: &Hyperparams) -> Vec<u8> {
    let n_views = state.n_feature_views();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    push_u64(&mut buf, n_views);
    for d in state.feature_dictionaries() {
        push_u64(&mut buf, d.nrows());
    }
    push_u64(&mut buf, state.label_dictionary().nrows());
    push_u64(&mut buf, state.codes.nrows());
    push_u64(&mut buf, state.codes.ncols());
    push_u64(&mut buf, state.labelled_count);
    for d in &state.dictionaries {
        push_matrix(&mut buf, d);
    }
    push_matrix(&mut buf, &state.codes);
    push_f64s(&mut buf, state.alpha.iter());

    let mut text = String::new();
    let _ = writeln!(text, "gamma1={}", hp.gamma1);
    let _ = writeln!(text, "gamma2={}", hp.gamma2);
    let _ = writeln!(text, "gamma3={}", hp.gamma3);
    let _ = writeln!(text, "r={}", hp.r);
    let _ = writeln!(text, "n_atoms={}", hp.n_atoms);
    let _ = writeln!(text, "inner_max_iters={}", hp.inner_max_iters);
    let _ = writeln!(text, "outer_max_iters={}", hp.outer_max_iters);
    let _ = writeln!(text, "inner_tol={}", hp.inner_tol);
    let _ = writeln!(text, "outer_tol={}", hp.outer_tol);
    let _ = writeln!(text, "regularizer={}", hp.regularizer.as_str());
    let _ = writeln!(text, "neighbors={}", hp.neighbors);
    let _ = writeln!(text, "tangent_dim={}", hp.tangent_dim);
    let _ = writeln!(text, "hessian_ridge={}", hp.hessian_ridge);
    let _ = writeln!(text, "label_view_manifold={}", hp.label_view_manifold);
    buf.extend_from_slice(text.as_bytes());
    buf
}

pub fn save_model(state: &ModelState, hp: &Hyperparams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_model(state, hp))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "model file truncated".into(),
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

pub fn parse_model(buf: &[u8]) -> Result<(ModelState, Hyperparams)> {
    if buf.len() < 6 {
        return Err(Error::Parse {
            line: 0,
            msg: "model file truncated".into(),
        });
    }
    if &buf[..6] != MODEL_MAGIC {
        if &buf[..5] == b"MHDSC" {
            return Err(Error::Invalid(format!(
                "unsupported model format version '{}'",
                String::from_utf8_lossy(&buf[..6])
            )));
        }
        return Err(Error::Parse {
            line: 0,
            msg: "bad model magic bytes".into(),
        });
    }
    let mut r = Reader { buf, at: 6 };
    let n_views = r.u64()?;
    if n_views == 0 || n_views > 1_000_000 {
        return Err(Error::Parse {
            line: 0,
            msg: format!("implausible view count {n_views}"),
        });
    }
    let mut dims = Vec::with_capacity(n_views + 1);
    for _ in 0..=n_views {
        dims.push(r.u64()?);
    }
    let n_atoms = r.u64()?;
    let n = r.u64()?;
    let l = r.u64()?;
    let mut dictionaries = Vec::with_capacity(n_views + 1);
    for &p in &dims {
        dictionaries.push(r.matrix(p, n_atoms)?);
    }
    let codes = r.matrix(n_atoms, n)?;
    let mut alpha = DVector::zeros(n_views + 1);
    for v in 0..=n_views {
        alpha[v] = r.f64()?;
    }
    let text = std::str::from_utf8(&buf[r.at..]).map_err(|_| Error::Parse {
        line: 0,
        msg: "hyperparameter block is not UTF-8".into(),
    })?;
    let mut hp = Hyperparams::default();
    for line in text.lines() {
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("bad hyperparameter line '{line}'"),
        })?;
        let bad = || Error::Parse {
            line: 0,
            msg: format!("bad value for {key}"),
        };
        match key {
            "gamma1" => hp.gamma1 = value.parse().map_err(|_| bad())?,
            "gamma2" => hp.gamma2 = value.parse().map_err(|_| bad())?,
            "gamma3" => hp.gamma3 = value.parse().map_err(|_| bad())?,
            "r" => hp.r = value.parse().map_err(|_| bad())?,
            "n_atoms" => hp.n_atoms = value.parse().map_err(|_| bad())?,
            "inner_max_iters" => hp.inner_max_iters = value.parse().map_err(|_| bad())?,
            "outer_max_iters" => hp.outer_max_iters = value.parse().map_err(|_| bad())?,
            "inner_tol" => hp.inner_tol = value.parse().map_err(|_| bad())?,
            "outer_tol" => hp.outer_tol = value.parse().map_err(|_| bad())?,
            "regularizer" => hp.regularizer = RegularizerChoice::parse(value)?,
            "neighbors" => hp.neighbors = value.parse().map_err(|_| bad())?,
            "tangent_dim" => hp.tangent_dim = value.parse().map_err(|_| bad())?,
            "hessian_ridge" => hp.hessian_ridge = value.parse().map_err(|_| bad())?,
            "label_view_manifold" => hp.label_view_manifold = value.parse().map_err(|_| bad())?,
            other => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("unknown hyperparameter '{other}'"),
                })
            }
        }
    }
    let state = ModelState {
        dictionaries,
        codes,
        labelled_count: l,
        alpha,
    };
    Ok((state, hp))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelState, Hyperparams)> {
    parse_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_multiview, LabelMatrix, Manifold, MultiviewDataset, SynthSpec, ViewMatrix};

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_views: 2,
            view_dims: vec![6, 5],
            n_classes: 2,
            n_samples: n,
            n_atoms_true: 4,
            sparsity: 2,
            noise_sigma: 0.0,
            manifold: Manifold::None,
            seed: 11,
        }
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            gamma1: 0.01,
            gamma2: 0.01,
            gamma3: 0.01,
            n_atoms: 4,
            neighbors: 5,
            inner_max_iters: 200,
            outer_max_iters: 10,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn tau_recurrence() {
        let tau1 = fista_tau_next(1.0);
        assert!((tau1 - 2.0 / (1.0 + 5.0f64.sqrt())).abs() < 1e-15);
        let mut tau = 1.0;
        for k in 0..200 {
            let next = fista_tau_next(tau);
            let resid = next.powi(-2) - next.powi(-1) - tau.powi(-2);
            assert!(resid.abs() <= 1e-12 * tau.powi(-2).max(1.0));
            tau = next;
            // 1/tau_k grows like (k+2)/2
            let t = 1.0 / tau;
            let approx = (k as f64 + 3.0) / 2.0;
            assert!((t - approx).abs() < 2.0, "k={k} t={t}");
        }
    }

    #[test]
    fn spectral_norm_basics() {
        assert!((spectral_norm(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-8);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 2.0]));
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-7);
        assert!(spectral_norm(&DMatrix::zeros(2, 2)).unwrap() == 0.0);
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        let m = DMatrix::from_fn(5, 5, |i, j| ((i * 5 + j) as f64 * 0.7).sin());
        let est = spectral_norm(&m).unwrap();
        let svd = nalgebra::SVD::new(m.clone(), false, false);
        let truth = svd.singular_values.max();
        assert!((est - truth).abs() < 1e-6, "{est} vs {truth}");
    }

    #[test]
    fn spectral_norm_survives_ones_in_null_space() {
        // all-ones start is exactly orthogonal to the top eigenvector here
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((spectral_norm(&m).unwrap() - 2.0).abs() < 1e-7);
    }

    /// Hand-built dataset whose labels equal the label dictionary times
    /// the codes exactly: identity codes, one-hot labels.
    fn exact_planted() -> (MultiviewDataset, ModelState) {
        let n = 4;
        let d_true = DMatrix::from_fn(3, n, |i, j| ((i * n + j) as f64 * 0.31).cos() * 0.5);
        let codes = DMatrix::identity(n, n);
        let x = &d_true * &codes;
        let labels = DMatrix::identity(n, n);
        let data = MultiviewDataset::new(
            vec![ViewMatrix {
                values: x,
                view_id: 0,
            }],
            LabelMatrix {
                values: labels.clone(),
            },
            n,
        )
        .unwrap();
        let state = ModelState {
            dictionaries: vec![d_true, labels],
            codes,
            labelled_count: n,
            alpha: DVector::from_vec(vec![0.5, 0.5]),
        };
        (data, state)
    }

    #[test]
    fn objective_zero_variables() {
        let (data, state) = exact_planted();
        let zero_state = ModelState {
            dictionaries: state
                .dictionaries
                .iter()
                .map(|d| DMatrix::zeros(d.nrows(), d.ncols()))
                .collect(),
            codes: DMatrix::zeros(4, 4),
            labelled_count: 4,
            alpha: state.alpha.clone(),
        };
        let hp = Hyperparams {
            gamma1: 0.7,
            gamma2: 0.9,
            gamma3: 0.3,
            ..Hyperparams::default()
        };
        let bd = objective(&zero_state, &data, &[], &hp).unwrap();
        assert_eq!(bd.sparsity_w, 0.0);
        assert_eq!(bd.sparsity_d, 0.0);
        assert_eq!(bd.manifold, 0.0);
        let expect = (data.views[0].values.norm_squared() + data.labels.values.norm_squared())
            / (2.0 * 4.0);
        assert!((bd.total - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_exact_state_has_zero_reconstruction() {
        let (data, state) = exact_planted();
        let hp = Hyperparams::default();
        let bd = objective(&state, &data, &[], &hp).unwrap();
        assert!(bd.recon_labelled <= 1e-12);
        assert!(bd.recon_unlabelled == 0.0);
        // disabled penalties leave pure reconstruction
        let hp0 = Hyperparams {
            gamma1: 0.0,
            gamma2: 0.0,
            gamma3: 0.0,
            ..Hyperparams::default()
        };
        let bd0 = objective(&state, &data, &[], &hp0).unwrap();
        assert!((bd0.total - (bd0.recon_labelled + bd0.recon_unlabelled)).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total_is_sum_of_terms() {
        let (data, state) = exact_planted();
        let hp = Hyperparams {
            gamma1: 0.3,
            gamma2: 0.2,
            ..Hyperparams::default()
        };
        let bd = objective(&state, &data, &[], &hp).unwrap();
        let sum = bd.recon_labelled + bd.recon_unlabelled + bd.sparsity_w + bd.sparsity_d + bd.manifold;
        assert!((bd.total - sum).abs() <= 1e-10);
    }

    #[test]
    fn code_update_orthonormal_least_squares() {
        // stacked dictionary is the 4x4 identity split over two views,
        // gamma1 = gamma3 = 0, l = N: the minimizer is W = D^T X
        let n = 3;
        let x = DMatrix::from_fn(4, n, |i, j| ((i + 2 * j) as f64 * 0.456).sin());
        let view = ViewMatrix {
            values: x.rows(0, 2).into_owned(),
            view_id: 0,
        };
        let labels = DMatrix::from_fn(2, n, |i, j| ((i + j) % 2) as f64);
        let mut stacked = x.clone();
        stacked.rows_mut(2, 2).copy_from(&labels);
        let data = MultiviewDataset::new(
            vec![view],
            LabelMatrix {
                values: labels.clone(),
            },
            n,
        )
        .unwrap();
        let d_all = DMatrix::identity(4, 4);
        let state = ModelState {
            dictionaries: vec![d_all.rows(0, 2).into_owned(), d_all.rows(2, 2).into_owned()],
            codes: DMatrix::zeros(4, n),
            labelled_count: n,
            alpha: DVector::from_vec(vec![0.5, 0.5]),
        };
        let hp = Hyperparams {
            gamma1: 0.0,
            gamma3: 0.0,
            inner_max_iters: 2000,
            inner_tol: 1e-14,
            n_atoms: 4,
            ..Hyperparams::default()
        };
        let out = update_codes(&state, &data, None, &hp).unwrap();
        let expect = d_all.transpose() * &stacked;
        assert!((&out.codes - &expect).amax() < 1e-6);
    }

    #[test]
    fn code_update_trace_is_non_increasing() {
        let (data, _) = synth_multiview(&spec(15)).map(|(d, g)| (d, g)).unwrap();
        let data = crate::dataset::split_labelled(&data, 0.6, 1).unwrap();
        let hp = small_hp();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = init_state(&data, &hp, data.n_views() + 1, &mut rng);
        let out = update_codes(&state, &data, None, &hp).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-8 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn dictionary_update_matches_normal_equations() {
        // gamma2 = 0, l = N, identity codes: the per-view optimum is
        // X W_L^T (W_L W_L^T)^{-1} = X, already inside the unit column ball
        let n = 3;
        let target = DMatrix::from_fn(4, n, |i, j| ((i * n + j) as f64 * 0.29).sin() * 0.4);
        let labels = DMatrix::identity(n, n);
        let data = MultiviewDataset::new(
            vec![ViewMatrix {
                values: target.clone(),
                view_id: 0,
            }],
            LabelMatrix {
                values: labels.clone(),
            },
            n,
        )
        .unwrap();
        let state = ModelState {
            dictionaries: vec![DMatrix::zeros(4, n), DMatrix::zeros(n, n)],
            codes: DMatrix::identity(n, n),
            labelled_count: n,
            alpha: DVector::from_vec(vec![0.5, 0.5]),
        };
        let hp = Hyperparams {
            gamma2: 0.0,
            inner_max_iters: 3000,
            inner_tol: 1e-14,
            n_atoms: n,
            ..Hyperparams::default()
        };
        let out = update_dictionary(&state, &data, &hp).unwrap();
        assert!((&out.dictionaries[0] - &target).amax() < 1e-6);
        assert!((&out.dictionaries[1] - &labels).amax() < 1e-6);
    }

    #[test]
    fn dictionary_update_with_zero_codes_only_projects() {
        let (data, _) = synth_multiview(&spec(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hp = small_hp();
        let mut state = init_state(&data, &hp, data.n_views() + 1, &mut rng);
        // inflate one dictionary column past the unit ball
        state.dictionaries[0] *= 3.0;
        let out = update_dictionary(&state, &data, &hp).unwrap();
        let expect = crate::prox::project_unit_columns(&state.dictionaries[0]);
        assert!((&out.dictionaries[0] - &expect).amax() < 1e-14);
    }

    #[test]
    fn alpha_symmetry_and_hand_value() {
        let a = alpha_from_energies(&[1.0, 1.0], 5.0).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] - 0.5).abs() < 1e-15);
        // (1/16)^{1/4} = 1/2, so alpha = (2/3, 1/3)
        let a = alpha_from_energies(&[1.0, 16.0], 5.0).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-12 && (a[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_simplex_scale_and_limits() {
        let e = [0.3, 2.0, 5.5, 0.9];
        let a = alpha_from_energies(&e, 2.0).unwrap();
        assert!((a.sum() - 1.0).abs() <= 1e-12);
        assert!(a.iter().all(|&x| x >= 0.0));
        // common positive rescaling of the energies leaves alpha unchanged
        let scaled: Vec<f64> = e.iter().map(|x| x * 37.5).collect();
        let b = alpha_from_energies(&scaled, 2.0).unwrap();
        assert!((a - &b).amax() <= 1e-12);
        // r -> infinity tends to uniform
        let c = alpha_from_energies(&e, 1e6).unwrap();
        assert!(c.iter().all(|&x| (x - 0.25).abs() < 1e-4));
        // r -> 1+ concentrates on the smallest energy
        let d = alpha_from_energies(&e, 1.01).unwrap();
        assert_eq!(d.imax(), 0);
    }

    #[test]
    fn fit_zero_outer_iterations_returns_initialization() {
        let (data, _) = synth_multiview(&spec(12)).unwrap();
        let hp = Hyperparams {
            outer_max_iters: 0,
            regularizer: RegularizerChoice::None,
            ..small_hp()
        };
        let out = fit(&data, &hp, 9).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.state.codes.iter().all(|&x| x == 0.0));
        out.state.validate().unwrap();
    }

    #[test]
    fn fit_trace_is_monotone_and_improves_reconstruction() {
        let (data, _) = synth_multiview(&spec(20)).unwrap();
        let data = crate::dataset::split_labelled(&data, 0.5, 2).unwrap();
        let hp = Hyperparams {
            gamma1: 1e-3,
            gamma2: 1e-3,
            gamma3: 1e-3,
            outer_max_iters: 15,
            ..small_hp()
        };
        let out = fit(&data, &hp, 4).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1].total <= pair[0].total + 1e-8 * pair[0].total.abs().max(1.0));
        }
        let first = out.trace.first().unwrap();
        let last = out.trace.last().unwrap();
        let recon0 = first.recon_labelled + first.recon_unlabelled;
        let recon1 = last.recon_labelled + last.recon_unlabelled;
        assert!(recon1 < recon0 / 10.0, "{recon0} -> {recon1}");
    }

    #[test]
    fn fit_is_deterministic() {
        let (data, _) = synth_multiview(&spec(14)).unwrap();
        let hp = Hyperparams {
            outer_max_iters: 3,
            ..small_hp()
        };
        let a = fit(&data, &hp, 21).unwrap();
        let b = fit(&data, &hp, 21).unwrap();
        assert_eq!(a.state.codes, b.state.codes);
        for (x, y) in a.state.dictionaries.iter().zip(&b.state.dictionaries) {
            assert_eq!(x, y);
        }
        assert_eq!(a.state.alpha, b.state.alpha);
    }

    #[test]
    fn model_roundtrip_and_version_errors() {
        let (data, _) = synth_multiview(&spec(10)).unwrap();
        let hp = Hyperparams {
            outer_max_iters: 2,
            ..small_hp()
        };
        let out = fit(&data, &hp, 1).unwrap();
        let bytes = format_model(&out.state, &hp);
        let (state2, hp2) = parse_model(&bytes).unwrap();
        assert_eq!(out.state.codes, state2.codes);
        assert_eq!(out.state.alpha, state2.alpha);
        for (a, b) in out.state.dictionaries.iter().zip(&state2.dictionaries) {
            assert_eq!(a, b);
        }
        assert_eq!(hp.gamma1, hp2.gamma1);
        assert_eq!(hp.regularizer, hp2.regularizer);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(parse_model(&corrupt), Err(Error::Parse { .. })));

        let mut future = bytes.clone();
        future[5] = b'9';
        let err = parse_model(&future).unwrap_err();
        assert!(err.to_string().contains("unsupported"), "{err}");

        assert!(parse_model(&bytes[..40]).is_err());
    }
}
