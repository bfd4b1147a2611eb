//! Graph regularizers over the sample cloud of one view: second-order
//! Hessian energy matrices, first-order graph Laplacians, and their
//! weighted combination.
//!
//! The Hessian energy is assembled from per-sample local fits: each
//! neighborhood is projected onto an m-dimensional tangent basis (PCA),
//! function values are regressed on the full quadratic monomial basis of
//! the tangent coordinates, and the quadratic-coefficient block of that
//! regression, Frobenius-weighted, contributes one `B_i^T B_i` term.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// k-nearest-neighbor lists under Euclidean distance, ties broken toward
/// the lower index.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub neighbor_ids: Vec<Vec<usize>>,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    Hessian,
    Laplacian,
}

/// Symmetric positive semi-definite N x N regularizer matrix.
#[derive(Debug, Clone)]
pub struct RegularizerMatrix {
    pub values: DMatrix<f64>,
    pub kind: RegularizerKind,
}

/// Parameters of the local-fit Hessian estimator.
#[derive(Debug, Clone, Copy)]
pub struct HessianConfig {
    /// neighbor count per sample
    pub k: usize,
    /// tangent (intrinsic) dimension of the local fits
    pub m: usize,
    /// ridge factor for the local least squares, relative to trace
    pub ridge: f64,
}

impl Default for HessianConfig {
    fn default() -> Self {
        HessianConfig {
            k: 10,
            m: 2,
            ridge: 1e-6,
        }
    }
}

impl HessianConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Invalid("tangent dimension must be at least 1".into()));
        }
        if self.k < self.m * (self.m + 3) / 2 {
            return Err(Error::Invalid(format!(
                "neighbor count {} too small for tangent dimension {} (need k >= m(m+3)/2 = {})",
                self.k,
                self.m,
                self.m * (self.m + 3) / 2
            )));
        }
        if self.ridge < 0.0 {
            return Err(Error::Invalid("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Exact k nearest neighbors for every column of `x` (samples as columns).
pub fn knn_graph(x: &DMatrix<f64>, k: usize) -> Result<NeighborGraph> {
    let n = x.ncols();
    if k >= n {
        return Err(Error::Invalid(format!(
            "k = {k} neighbors requested for only {n} samples"
        )));
    }
    let mut neighbor_ids = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((x.column(i) - x.column(j)).norm_squared(), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbor_ids.push(dists[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(NeighborGraph { neighbor_ids, k })
}

/// Linear map from function values on one neighborhood (columns of
/// `coords`) to Frobenius-weighted local Hessian coefficients.
fn local_hessian_operator(coords: &DMatrix<f64>, cfg: &HessianConfig, sample: usize) -> Result<DMatrix<f64>> {
    let q = coords.ncols();
    let m = cfg.m;
    let n_quad = m * (m + 1) / 2;

    let mean = coords.column_mean();
    let mut centered = coords.clone();
    for j in 0..q {
        let mut c = centered.column_mut(j);
        c -= &mean;
    }
    if centered.norm() < 1e-12 {
        // all points coincide; nothing to estimate
        return Ok(DMatrix::zeros(n_quad, q));
    }
    if m > coords.nrows().min(q) {
        return Err(Error::Invalid(format!(
            "tangent dimension {m} exceeds the rank bound of the neighborhood of sample {sample}"
        )));
    }

    let svd = nalgebra::SVD::new(centered.clone(), true, false);
    let u = svd.u.as_ref().expect("u requested");
    let tangent = u.columns(0, m);
    let t = tangent.transpose() * &centered; // m x q local coordinates

    let n_mon = 1 + m + n_quad;
    let mut phi = DMatrix::zeros(q, n_mon);
    for j in 0..q {
        phi[(j, 0)] = 1.0;
        for a in 0..m {
            phi[(j, 1 + a)] = t[(a, j)];
        }
        let mut col = 1 + m;
        for a in 0..m {
            for b in a..m {
                phi[(j, col)] = t[(a, j)] * t[(b, j)];
                col += 1;
            }
        }
    }

    let mut gram = phi.transpose() * &phi;
    let trace = gram.trace();
    // ridge only the curvature coefficients so constant and linear
    // functions are still fitted exactly; a negligible base term keeps
    // the system invertible for degenerate neighborhoods
    let scale = if trace > 0.0 { trace } else { 1.0 };
    for d in 0..n_mon {
        gram[(d, d)] += if d < 1 + m {
            1e-12 * scale
        } else {
            cfg.ridge * scale
        };
    }
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Numerical(format!(
            "neighborhood of sample {sample} is rank-deficient beyond ridge rescue"
        ))
    })?;
    let coeff_map = chol.solve(&phi.transpose()); // n_mon x q

    // extract the quadratic block with Frobenius weighting: 2 on the
    // diagonal of the local Hessian, sqrt(2) off it
    let mut b = DMatrix::zeros(n_quad, q);
    let mut row = 0;
    for a in 0..m {
        for bb in a..m {
            let scale = if a == bb { 2.0 } else { std::f64::consts::SQRT_2 };
            for j in 0..q {
                b[(row, j)] = scale * coeff_map[(1 + m + row, j)];
            }
            row += 1;
        }
    }
    Ok(b)
}

fn clamp_psd(h: DMatrix<f64>, kind: RegularizerKind) -> Result<RegularizerMatrix> {
    let sym = 0.5 * (&h + h.transpose());
    let eig = SymmetricEigen::new(sym);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let floor = -1e-8 * max_abs.max(1.0);
    if eig.eigenvalues.iter().any(|&x| x < floor) {
        return Err(Error::Numerical(format!(
            "regularizer matrix is not positive semi-definite (min eigenvalue {})",
            eig.eigenvalues.min()
        )));
    }
    let clamped = eig.eigenvalues.map(|x| x.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let values = 0.5 * (&rebuilt + rebuilt.transpose());
    Ok(RegularizerMatrix { values, kind })
}

/// Hessian energy matrix `H = sum_i B_i^T B_i` over all sample
/// neighborhoods of `x` (samples as columns).
pub fn hessian_energy(x: &DMatrix<f64>, cfg: &HessianConfig) -> Result<RegularizerMatrix> {
    cfg.validate()?;
    let n = x.ncols();
    let graph = knn_graph(x, cfg.k)?;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut pts = vec![i];
        pts.extend(&graph.neighbor_ids[i]);
        let coords = DMatrix::from_fn(x.nrows(), pts.len(), |r, c| x[(r, pts[c])]);
        let b = local_hessian_operator(&coords, cfg, i)?;
        let btb = b.transpose() * &b;
        for (a, &pa) in pts.iter().enumerate() {
            for (c, &pc) in pts.iter().enumerate() {
                h[(pa, pc)] += btb[(a, c)];
            }
        }
    }
    clamp_psd(h, RegularizerKind::Hessian)
}

/// Edge weighting for [`laplacian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaplacianWeighting {
    Binary,
    /// heat-kernel weights `exp(-d^2 / sigma^2)`
    Heat(f64),
}

/// Graph Laplacian `L = Deg - A` of the symmetrized kNN adjacency.
pub fn laplacian(x: &DMatrix<f64>, k: usize, weighting: LaplacianWeighting) -> Result<RegularizerMatrix> {
    if let LaplacianWeighting::Heat(sigma) = weighting {
        if sigma <= 0.0 {
            return Err(Error::Invalid(format!(
                "heat-kernel bandwidth must be positive, got {sigma}"
            )));
        }
    }
    let n = x.ncols();
    let graph = knn_graph(x, k)?;
    let mut adj: DMatrix<f64> = DMatrix::zeros(n, n);
    for (i, nbrs) in graph.neighbor_ids.iter().enumerate() {
        for &j in nbrs {
            let w = match weighting {
                LaplacianWeighting::Binary => 1.0,
                LaplacianWeighting::Heat(sigma) => {
                    let d2 = (x.column(i) - x.column(j)).norm_squared();
                    (-d2 / (sigma * sigma)).exp()
                }
            };
            adj[(i, j)] = adj[(i, j)].max(w);
            adj[(j, i)] = adj[(j, i)].max(w);
        }
    }
    let mut lap = -adj.clone();
    for i in 0..n {
        lap[(i, i)] += adj.row(i).sum();
    }
    Ok(RegularizerMatrix {
        values: lap,
        kind: RegularizerKind::Laplacian,
    })
}

/// Plain weighted sum of regularizer matrices; weights need not be
/// normalized. Callers are expected to pass matching shapes.
pub fn weighted_sum(regs: &[RegularizerMatrix], weights: &[f64]) -> DMatrix<f64> {
    let n = regs[0].values.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (r, &w) in regs.iter().zip(weights) {
        out += w * &r.values;
    }
    out
}

/// Convex combination of regularizers with simplex weights.
pub fn combine(regs: &[RegularizerMatrix], alpha: &[f64]) -> Result<RegularizerMatrix> {
    if regs.len() != alpha.len() {
        return Err(Error::Dimension(format!(
            "{} regularizers but {} weights",
            regs.len(),
            alpha.len()
        )));
    }
    if regs.is_empty() {
        return Err(Error::Invalid("no regularizers to combine".into()));
    }
    if alpha.iter().any(|&a| a < 0.0) || (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::Invalid(
            "combination weights must be nonnegative and sum to 1".into(),
        ));
    }
    Ok(RegularizerMatrix {
        values: weighted_sum(regs, alpha),
        kind: regs[0].kind,
    })
}

/// Serialize a symmetric matrix as `SYMN v1 N=<n>` plus its lower triangle.
pub fn format_symn(m: &DMatrix<f64>) -> String {
    let mut out = format!("SYMN v1 N={}\n", m.nrows());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..=i).map(|j| format!("{}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_symn(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file".to_string()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "SYMN" || toks[1] != "v1" {
        return Err(Error::parse(1, "expected header 'SYMN v1 N=..'".to_string()));
    }
    let n: usize = toks[2]
        .strip_prefix("N=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, "bad size".to_string()))?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(i + 2, "unexpected end of file".to_string()))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != i + 1 {
            return Err(Error::parse(i + 2, format!("expected {} values", i + 1)));
        }
        for (j, s) in vals.iter().enumerate() {
            let x: f64 = s
                .parse()
                .map_err(|_| Error::parse(i + 2, format!("bad number '{s}'")))?;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points_1d(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, xs.len(), xs)
    }

    #[test]
    fn knn_collinear() {
        let x = points_1d(&[0.0, 1.0, 3.0]);
        let g = knn_graph(&x, 1).unwrap();
        assert_eq!(g.neighbor_ids, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_duplicate_ties_to_lower_index() {
        let x = points_1d(&[0.0, 0.0, 0.0, 5.0]);
        let g = knn_graph(&x, 2).unwrap();
        assert_eq!(g.neighbor_ids[3], vec![0, 1]);
        assert_eq!(g.neighbor_ids[2], vec![0, 1]);
    }

    #[test]
    fn knn_full_neighborhood_and_bounds() {
        let x = points_1d(&[0.0, 1.0, 2.0, 4.0]);
        let g = knn_graph(&x, 3).unwrap();
        for (i, nbrs) in g.neighbor_ids.iter().enumerate() {
            assert_eq!(nbrs.len(), 3);
            assert!(!nbrs.contains(&i));
        }
        assert!(knn_graph(&x, 4).is_err());
    }

    #[test]
    fn two_node_laplacian() {
        let x = points_1d(&[0.0, 1.0]);
        let l = laplacian(&x, 1, LaplacianWeighting::Binary).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(l.values, expect);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let x = DMatrix::from_fn(2, 7, |r, c| (r * 3 + c * c) as f64 * 0.37);
        let l = laplacian(&x, 3, LaplacianWeighting::Binary).unwrap();
        let ones = nalgebra::DVector::from_element(7, 1.0);
        let energy = (ones.transpose() * &l.values * &ones)[(0, 0)];
        assert!(energy.abs() < 1e-12);
    }

    #[test]
    fn laplacian_quadratic_form_matches_edge_sum() {
        let x = DMatrix::from_row_slice(2, 5, &[0.0, 1.0, 0.3, 2.0, 1.4, 0.0, 0.2, 1.1, 0.4, 1.9]);
        let k = 2;
        let l = laplacian(&x, k, LaplacianWeighting::Heat(1.3)).unwrap();
        let f = nalgebra::DVector::from_vec(vec![0.5, -1.0, 2.0, 0.1, 0.9]);
        let form = (f.transpose() * &l.values * &f)[(0, 0)];

        // brute force: recover A from L and sum A_ij (f_i - f_j)^2 / 2
        let mut brute = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let a = -l.values[(i, j)];
                    brute += a * (f[i] - f[j]).powi(2) / 2.0;
                }
            }
        }
        assert!((form - brute).abs() < 1e-10);
    }

    #[test]
    fn heat_weighting_rejects_bad_bandwidth() {
        let x = points_1d(&[0.0, 1.0, 2.0]);
        assert!(laplacian(&x, 1, LaplacianWeighting::Heat(0.0)).is_err());
    }

    #[test]
    fn hessian_config_validation() {
        assert!(HessianConfig { k: 4, m: 2, ridge: 1e-6 }.validate().is_err());
        assert!(HessianConfig { k: 5, m: 2, ridge: 1e-6 }.validate().is_ok());
        assert!(HessianConfig { k: 5, m: 0, ridge: 1e-6 }.validate().is_err());
    }

    #[test]
    fn hessian_constant_energy_is_zero() {
        let x = DMatrix::from_fn(3, 20, |r, c| ((r + 1) * c) as f64 * 0.13 + (c as f64).sin());
        let h = hessian_energy(&x, &HessianConfig::default()).unwrap();
        let ones = nalgebra::DVector::from_element(20, 1.0);
        let energy = (ones.transpose() * &h.values * &ones)[(0, 0)];
        assert!(energy.abs() <= 1e-8, "constant energy {energy}");
    }

    #[test]
    fn hessian_matrix_is_symmetric_psd() {
        let x = DMatrix::from_fn(2, 25, |r, c| ((c * 7 + r * 3) % 11) as f64 * 0.21 + (c as f64 * 0.4).cos());
        let h = hessian_energy(&x, &HessianConfig { k: 6, m: 2, ridge: 1e-6 }).unwrap();
        let asym = (&h.values - h.values.transpose()).amax();
        assert!(asym <= 1e-10);
        let eig = SymmetricEigen::new(h.values.clone());
        let max = eig.eigenvalues.amax();
        assert!(eig.eigenvalues.min() >= -1e-8 * max.max(1.0));
    }

    #[test]
    fn local_fit_recovers_planted_quadratic() {
        // points in a 2-D plane, f a known quadratic of the coordinates;
        // the operator must reproduce the scaled quadratic coefficients
        let cfg = HessianConfig { k: 7, m: 2, ridge: 0.0 };
        let mut coords = DMatrix::zeros(2, 8);
        let pts = [
            (0.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (-1.0, 0.3),
            (0.4, -1.0),
            (1.2, 1.1),
            (-0.7, -0.9),
            (0.5, 0.6),
        ];
        for (j, &(a, b)) in pts.iter().enumerate() {
            coords[(0, j)] = a;
            coords[(1, j)] = b;
        }
        // f = 0.5*x^2 + 1.5*x*y - 2.0*y^2 + 3x - y + 4
        let f = nalgebra::DVector::from_iterator(
            8,
            pts.iter().map(|&(x, y)| {
                0.5 * x * x + 1.5 * x * y - 2.0 * y * y + 3.0 * x - y + 4.0
            }),
        );
        let b = local_hessian_operator(&coords, &cfg, 0).unwrap();
        let est = &b * &f;

        // the tangent basis is a rotation of (x, y); compare rotation
        // invariants of the local Hessian instead of raw coefficients:
        // trace and Frobenius norm of [[2c_xx, c_xy], [c_xy, 2c_yy]]
        let hess_true = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, -4.0]);
        // est = (2*c_00, sqrt(2)*c_01, 2*c_11) in tangent coordinates
        let h00 = est[0];
        let h01 = est[1] / std::f64::consts::SQRT_2;
        let h11 = est[2];
        let est_m = DMatrix::from_row_slice(2, 2, &[h00, h01, h01, h11]);
        assert!((est_m.trace() - hess_true.trace()).abs() < 1e-6);
        assert!((est_m.norm() - hess_true.norm()).abs() < 1e-6);
    }

    #[test]
    fn combine_degenerate_and_pairs() {
        let a = RegularizerMatrix {
            values: DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            kind: RegularizerKind::Laplacian,
        };
        let b = RegularizerMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
            kind: RegularizerKind::Laplacian,
        };
        let picked = combine(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
        assert_eq!(picked.values, a.values);

        let same = combine(&[a.clone(), a.clone()], &[0.4, 0.6]).unwrap();
        assert!((&same.values - &a.values).amax() < 1e-14);

        let mix = combine(&[a.clone(), b.clone()], &[0.3, 0.7]).unwrap();
        let expect = 0.3 * &a.values + 0.7 * &b.values;
        assert!((&mix.values - expect).amax() < 1e-14);

        assert!(combine(&[a.clone(), b.clone()], &[0.5, 0.6]).is_err());
        assert!(combine(&[a, b], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn weighted_sum_is_linear() {
        let a = RegularizerMatrix {
            values: DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            kind: RegularizerKind::Laplacian,
        };
        let b = RegularizerMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 3.0]),
            kind: RegularizerKind::Laplacian,
        };
        let regs = [a, b];
        let lhs = weighted_sum(&regs, &[0.2, 1.1]) + weighted_sum(&regs, &[0.7, 0.4]);
        let rhs = weighted_sum(&regs, &[0.9, 1.5]);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn symn_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -2.0, 0.5, 3.0, 0.25, -2.0, 0.25, 7.0]);
        let m2 = parse_symn(&format_symn(&m)).unwrap();
        assert_eq!(m, m2);
    }
}
