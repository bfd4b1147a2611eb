//! Multiview semi-supervised datasets: container types, the MVDS text
//! format, synthetic generation, normalization and labelled/unlabelled
//! splitting.
//!
//! Layout convention used everywhere downstream: the labelled samples
//! occupy the leading columns, so codes split into contiguous
//! `{W_L, W_U}` blocks without index maps.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One view: a dense P_v x N feature matrix, samples as columns.
#[derive(Debug, Clone)]
pub struct ViewMatrix {
    pub values: DMatrix<f64>,
    pub view_id: usize,
}

/// 0/1 multi-label indicators, P_c x l, one column per labelled sample.
#[derive(Debug, Clone)]
pub struct LabelMatrix {
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiviewDataset {
    pub views: Vec<ViewMatrix>,
    pub labels: LabelMatrix,
    pub labelled_count: usize,
}

impl MultiviewDataset {
    pub fn new(
        views: Vec<ViewMatrix>,
        labels: LabelMatrix,
        labelled_count: usize,
    ) -> Result<Self> {
        let d = MultiviewDataset {
            views,
            labels,
            labelled_count,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n_samples(&self) -> usize {
        self.views.first().map_or(0, |v| v.values.ncols())
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.values.nrows()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.n_samples() - self.labelled_count
    }

    fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Invalid("dataset has no views".into()));
        }
        let n = self.n_samples();
        if self.labelled_count < 1 || self.labelled_count > n {
            return Err(Error::Invalid(format!(
                "labelled count {} out of range 1..={n}",
                self.labelled_count
            )));
        }
        for v in &self.views {
            if v.values.ncols() != n {
                return Err(Error::Dimension(format!(
                    "view {} has {} columns, expected {n}",
                    v.view_id,
                    v.values.ncols()
                )));
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!(
                    "view {} contains non-finite values",
                    v.view_id
                )));
            }
        }
        if self.labels.values.ncols() != self.labelled_count {
            return Err(Error::Dimension(format!(
                "label matrix has {} columns, expected labelled count {}",
                self.labels.values.ncols(),
                self.labelled_count
            )));
        }
        if self.labels.values.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Invalid("label not in {0,1}".into()));
        }
        Ok(())
    }
}

/// Manifold structure imposed on the ground-truth code columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    None,
    Grid2d,
    SwissRoll,
}

impl Manifold {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Manifold::None),
            "grid2d" => Ok(Manifold::Grid2d),
            "swiss_roll" => Ok(Manifold::SwissRoll),
            other => Err(Error::Invalid(format!("unknown manifold '{other}'"))),
        }
    }
}

/// Parameters for [`synth_multiview`].
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_views: usize,
    pub view_dims: Vec<usize>,
    pub n_classes: usize,
    pub n_samples: usize,
    pub n_atoms_true: usize,
    pub sparsity: usize,
    pub noise_sigma: f64,
    pub manifold: Manifold,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0
            || self.n_classes == 0
            || self.n_samples == 0
            || self.n_atoms_true == 0
            || self.sparsity == 0
            || self.view_dims.iter().any(|&p| p == 0)
        {
            return Err(Error::Invalid("all synth counts must be positive".into()));
        }
        if self.view_dims.len() != self.n_views {
            return Err(Error::Dimension(format!(
                "{} view dims for {} views",
                self.view_dims.len(),
                self.n_views
            )));
        }
        if self.sparsity > self.n_atoms_true {
            return Err(Error::Invalid(format!(
                "sparsity {} exceeds atom count {}",
                self.sparsity, self.n_atoms_true
            )));
        }
        let needed = match self.manifold {
            Manifold::None => 1,
            Manifold::Grid2d => 2,
            Manifold::SwissRoll => 3,
        };
        if self.n_atoms_true < needed {
            return Err(Error::Invalid(format!(
                "manifold {:?} needs at least {needed} true atoms",
                self.manifold
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Invalid("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Planted model returned alongside a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dictionaries: Vec<DMatrix<f64>>,
    pub codes: DMatrix<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn unit_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        let norm = m.column(j).norm();
        if norm > 0.0 {
            let mut c = m.column_mut(j);
            c /= norm;
        }
    }
    m
}

/// Generate a planted multiview dataset: per-view `X = D_true W_true + noise`,
/// labels from a thresholded linear map of the true codes. Deterministic for
/// a fixed seed; the returned dataset is fully labelled (l = N).
pub fn synth_multiview(spec: &SynthSpec) -> Result<(MultiviewDataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples;
    let nd = spec.n_atoms_true;

    let dictionaries: Vec<DMatrix<f64>> = spec
        .view_dims
        .iter()
        .map(|&p| unit_columns(normal_matrix(&mut rng, p, nd)))
        .collect();

    let mut codes = DMatrix::zeros(nd, n);
    match spec.manifold {
        Manifold::None => {
            let mut atoms: Vec<usize> = (0..nd).collect();
            for col in 0..n {
                atoms.shuffle(&mut rng);
                for &row in atoms.iter().take(spec.sparsity) {
                    let mag: f64 = rng.gen_range(0.5..1.5);
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    codes[(row, col)] = sign * mag;
                }
            }
        }
        Manifold::Grid2d => {
            // column n sits at grid cell (n / side, n % side), coordinates in [0,1]
            let side = (n as f64).sqrt().ceil() as usize;
            let denom = (side - 1).max(1) as f64;
            for col in 0..n {
                codes[(0, col)] = (col / side) as f64 / denom;
                codes[(1, col)] = (col % side) as f64 / denom;
            }
        }
        Manifold::SwissRoll => {
            let scale = 4.5 * std::f64::consts::PI;
            for col in 0..n {
                let u: f64 = rng.gen_range(0.0..1.0);
                let h: f64 = rng.gen_range(0.0..1.0);
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                codes[(0, col)] = t * t.cos() / scale;
                codes[(1, col)] = h;
                codes[(2, col)] = t * t.sin() / scale;
            }
        }
    }

    let views: Vec<ViewMatrix> = dictionaries
        .iter()
        .enumerate()
        .map(|(view_id, d)| {
            let mut x = d * &codes;
            if spec.noise_sigma > 0.0 {
                x += spec.noise_sigma * normal_matrix(&mut rng, x.nrows(), x.ncols());
            }
            ViewMatrix { values: x, view_id }
        })
        .collect();

    // labels: linear map of true codes, thresholded at the per-class median
    let label_map = normal_matrix(&mut rng, spec.n_classes, nd);
    let scores = &label_map * &codes;
    let mut labels = DMatrix::zeros(spec.n_classes, n);
    for c in 0..spec.n_classes {
        let mut row: Vec<f64> = scores.row(c).iter().copied().collect();
        row.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if n % 2 == 0 {
            0.5 * (row[n / 2 - 1] + row[n / 2])
        } else {
            row[n / 2]
        };
        for s in 0..n {
            if scores[(c, s)] > median {
                labels[(c, s)] = 1.0;
            }
        }
    }

    let dataset = MultiviewDataset::new(views, LabelMatrix { values: labels }, n)?;
    Ok((dataset, GroundTruth {
        dictionaries,
        codes,
    }))
}

/// View normalization mode. The default pipeline uses `Unit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Rescale every sample column to unit Euclidean norm.
    Unit,
    /// Center and scale each feature dimension to zero mean, unit variance.
    ZScore,
    None,
}

impl Normalization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Normalization::Unit),
            "zscore" => Ok(Normalization::ZScore),
            "none" => Ok(Normalization::None),
            other => Err(Error::Invalid(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Normalize each view independently; labels are untouched. Zero columns
/// (and zero-variance features) are left as they are.
pub fn normalize_views(d: &MultiviewDataset, mode: Normalization) -> MultiviewDataset {
    let mut out = d.clone();
    match mode {
        Normalization::None => {}
        Normalization::Unit => {
            for view in &mut out.views {
                for j in 0..view.values.ncols() {
                    let norm = view.values.column(j).norm();
                    if norm > 0.0 && norm != 1.0 {
                        let mut col = view.values.column_mut(j);
                        col /= norm;
                    }
                }
            }
        }
        Normalization::ZScore => {
            for view in &mut out.views {
                let n = view.values.ncols() as f64;
                for i in 0..view.values.nrows() {
                    let mean = view.values.row(i).sum() / n;
                    let var = view.values.row(i).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    for j in 0..view.values.ncols() {
                        view.values[(i, j)] -= mean;
                        if std > 1e-12 {
                            view.values[(i, j)] /= std;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Designate a random fraction of the currently labelled samples as the new
/// labelled set and reorder them to the front. Label columns are kept only
/// for the new labelled block.
pub fn split_labelled(d: &MultiviewDataset, fraction: f64, seed: u64) -> Result<MultiviewDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "labelled fraction must be in (0,1], got {fraction}"
        )));
    }
    let n = d.n_samples();
    let l_new = (fraction * n as f64).round() as usize;
    if l_new < 1 {
        return Err(Error::Invalid(format!(
            "fraction {fraction} of {n} samples yields no labelled data"
        )));
    }
    if l_new > d.labelled_count {
        return Err(Error::Invalid(format!(
            "fraction {fraction} of {n} samples needs {l_new} labels but only {} are available",
            d.labelled_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..d.labelled_count).collect();
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool[..l_new].to_vec();
    chosen.sort_unstable();
    let chosen_set: Vec<bool> = {
        let mut mask = vec![false; n];
        for &i in &chosen {
            mask[i] = true;
        }
        mask
    };
    let mut order = chosen.clone();
    order.extend((0..n).filter(|&i| !chosen_set[i]));

    let views = d
        .views
        .iter()
        .map(|v| ViewMatrix {
            values: DMatrix::from_fn(v.values.nrows(), n, |i, j| v.values[(i, order[j])]),
            view_id: v.view_id,
        })
        .collect();
    let labels = DMatrix::from_fn(d.n_classes(), l_new, |i, j| d.labels.values[(i, chosen[j])]);
    MultiviewDataset::new(views, LabelMatrix { values: labels }, l_new)
}

// ---------------------------------------------------------------------------
// MVDS text format
// ---------------------------------------------------------------------------

fn parse_kv<'a>(token: &'a str, key: &str, line: usize) -> Result<&'a str> {
    token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| Error::parse(line, format!("expected {key}=<value>, got '{token}'")))
}

fn parse_usize(s: &str, line: usize, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad {what} '{s}'")))
}

fn parse_row(line_text: &str, line_no: usize, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<&str> = line_text.split_whitespace().collect();
    if vals.len() != expected {
        return Err(Error::parse(
            line_no,
            format!("expected {expected} values, found {}", vals.len()),
        ));
    }
    vals.iter()
        .enumerate()
        .map(|(col, s)| {
            let x: f64 = s
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad number '{s}' in column {}", col + 1)))?;
            if !x.is_finite() {
                return Err(Error::parse(
                    line_no,
                    format!("non-finite value in column {}", col + 1),
                ));
            }
            Ok(x)
        })
        .collect()
}

/// Parse the MVDS v1 text format.
pub fn parse_dataset(text: &str) -> Result<MultiviewDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file".to_string()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "MVDS" || toks[1] != "v1" {
        return Err(Error::parse(
            1,
            "expected header 'MVDS v1 V=.. N=.. l=.. Pc=.. P=..'".to_string(),
        ));
    }
    let n_views = parse_usize(parse_kv(toks[2], "V", 1)?, 1, "view count")?;
    let n = parse_usize(parse_kv(toks[3], "N", 1)?, 1, "sample count")?;
    let l = parse_usize(parse_kv(toks[4], "l", 1)?, 1, "labelled count")?;
    let pc = parse_usize(parse_kv(toks[5], "Pc", 1)?, 1, "class count")?;
    let dims: Vec<usize> = parse_kv(toks[6], "P", 1)?
        .split(',')
        .map(|s| parse_usize(s, 1, "view dimension"))
        .collect::<Result<_>>()?;
    if dims.len() != n_views {
        return Err(Error::parse(
            1,
            format!("P lists {} dims for V={n_views} views", dims.len()),
        ));
    }

    let mut next_row = |expected: usize| -> Result<(usize, Vec<f64>)> {
        let (idx, text) = lines
            .next()
            .ok_or_else(|| Error::parse(0, "unexpected end of file".to_string()))?;
        Ok((idx + 1, parse_row(text, idx + 1, expected)?))
    };

    let mut views = Vec::with_capacity(n_views);
    for (view_id, &p) in dims.iter().enumerate() {
        let mut m = DMatrix::zeros(p, n);
        for r in 0..p {
            let (_, row) = next_row(n)?;
            for (c, x) in row.into_iter().enumerate() {
                m[(r, c)] = x;
            }
        }
        views.push(ViewMatrix {
            values: m,
            view_id,
        });
    }
    let mut labels = DMatrix::zeros(pc, l);
    for r in 0..pc {
        let (line_no, row) = next_row(l)?;
        for (c, x) in row.into_iter().enumerate() {
            if x != 0.0 && x != 1.0 {
                return Err(Error::parse(
                    line_no,
                    format!("label not in {{0,1}} in column {}", c + 1),
                ));
            }
            labels[(r, c)] = x;
        }
    }
    MultiviewDataset::new(views, LabelMatrix { values: labels }, l)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiviewDataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

fn push_matrix_rows(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn format_dataset(d: &MultiviewDataset) -> String {
    let dims: Vec<String> = d.views.iter().map(|v| v.values.nrows().to_string()).collect();
    let mut out = format!(
        "MVDS v1 V={} N={} l={} Pc={} P={}\n",
        d.n_views(),
        d.n_samples(),
        d.labelled_count,
        d.n_classes(),
        dims.join(",")
    );
    for v in &d.views {
        push_matrix_rows(&mut out, &v.values);
    }
    push_matrix_rows(&mut out, &d.labels.values);
    out
}

pub fn save_dataset(d: &MultiviewDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_dataset(d))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ground-truth file (planted dictionaries + codes)
// ---------------------------------------------------------------------------

pub fn format_ground_truth(gt: &GroundTruth) -> String {
    let dims: Vec<String> = gt.dictionaries.iter().map(|d| d.nrows().to_string()).collect();
    let mut out = format!(
        "GT v1 V={} Nd={} N={} P={}\n",
        gt.dictionaries.len(),
        gt.codes.nrows(),
        gt.codes.ncols(),
        dims.join(",")
    );
    for d in &gt.dictionaries {
        push_matrix_rows(&mut out, d);
    }
    push_matrix_rows(&mut out, &gt.codes);
    out
}

pub fn save_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_ground_truth(gt))?;
    Ok(())
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file".to_string()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "GT" || toks[1] != "v1" {
        return Err(Error::parse(1, "expected header 'GT v1 V=.. Nd=.. N=.. P=..'".to_string()));
    }
    let n_views = parse_usize(parse_kv(toks[2], "V", 1)?, 1, "view count")?;
    let nd = parse_usize(parse_kv(toks[3], "Nd", 1)?, 1, "atom count")?;
    let n = parse_usize(parse_kv(toks[4], "N", 1)?, 1, "sample count")?;
    let dims: Vec<usize> = parse_kv(toks[5], "P", 1)?
        .split(',')
        .map(|s| parse_usize(s, 1, "view dimension"))
        .collect::<Result<_>>()?;
    if dims.len() != n_views {
        return Err(Error::parse(1, "P list length does not match V".to_string()));
    }
    let mut next_row = |expected: usize| -> Result<Vec<f64>> {
        let (idx, text) = lines
            .next()
            .ok_or_else(|| Error::parse(0, "unexpected end of file".to_string()))?;
        parse_row(text, idx + 1, expected)
    };
    let mut dictionaries = Vec::with_capacity(n_views);
    for &p in &dims {
        let mut m = DMatrix::zeros(p, nd);
        for r in 0..p {
            let row = next_row(nd)?;
            for (c, x) in row.into_iter().enumerate() {
                m[(r, c)] = x;
            }
        }
        dictionaries.push(m);
    }
    let mut codes = DMatrix::zeros(nd, n);
    for r in 0..nd {
        let row = next_row(n)?;
        for (c, x) in row.into_iter().enumerate() {
            codes[(r, c)] = x;
        }
    }
    Ok(GroundTruth {
        dictionaries,
        codes,
    })
}
