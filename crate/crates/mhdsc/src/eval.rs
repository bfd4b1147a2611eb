//! PASCAL-style ranking metrics: 11-point interpolated average precision
//! and mean average precision.

use crate::error::{Error, Result};

/// Scores and 0/1 relevance for one class over a set of test samples.
#[derive(Debug, Clone)]
pub struct RankedPredictions {
    pub scores: Vec<f64>,
    pub relevance: Vec<bool>,
}

impl RankedPredictions {
    pub fn new(scores: Vec<f64>, relevance: Vec<bool>) -> Result<Self> {
        if scores.len() != relevance.len() {
            return Err(Error::Dimension(format!(
                "{} scores vs {} relevance flags",
                scores.len(),
                relevance.len()
            )));
        }
        Ok(RankedPredictions { scores, relevance })
    }
}

/// 11-point interpolated average precision.
///
/// Samples are ranked by score, descending, ties broken by original index.
/// For each recall threshold t in {0, 0.1, ..., 1.0} the maximum precision
/// over all cutoffs with recall >= t is taken; AP is the mean of the eleven
/// maxima. Recall comparisons are done in exact integer arithmetic so the
/// t = 0.1*i boundaries are never missed to rounding.
pub fn average_precision(rp: &RankedPredictions) -> Result<f64> {
    let n = rp.scores.len();
    let total_relevant = rp.relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return Err(Error::Invalid(
            "average precision undefined: no relevant items".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the original-index tie rule
    order.sort_by(|&a, &b| rp.scores[b].partial_cmp(&rp.scores[a]).unwrap());

    // relevant-count at each cutoff k = 1..n; precision stays a fraction
    // hits/(k+1) so threshold maxima and their sum are exact
    let mut hits = 0usize;
    let mut rel_at = Vec::with_capacity(n);
    for &idx in &order {
        if rp.relevance[idx] {
            hits += 1;
        }
        rel_at.push(hits);
    }

    let (mut num, mut den): (u128, u128) = (0, 1);
    let mut exact = true;
    let mut float_sum = 0.0f64;
    for t in 0..=10u64 {
        // best precision at recall >= t/10, compared by cross-multiplication
        let (mut bn, mut bd): (u128, u128) = (0, 1);
        for k in 0..n {
            // recall(k) >= t/10  <=>  10*rel_at >= t*total_relevant
            if 10 * rel_at[k] as u64 >= t * total_relevant as u64
                && (rel_at[k] as u128) * bd > bn * (k as u128 + 1)
            {
                bn = rel_at[k] as u128;
                bd = k as u128 + 1;
            }
        }
        float_sum += bn as f64 / bd as f64;
        if exact {
            // num/den + bn/bd, reduced; fall back to floats on overflow
            let g = gcd(den, bd);
            match (num.checked_mul(bd / g), bn.checked_mul(den / g)) {
                (Some(a), Some(b)) if a.checked_add(b).is_some() && den.checked_mul(bd / g).is_some() => {
                    num = a + b;
                    den *= bd / g;
                    let g2 = gcd(num, den);
                    if g2 > 1 {
                        num /= g2;
                        den /= g2;
                    }
                }
                _ => exact = false,
            }
        }
    }
    if exact {
        Ok(num as f64 / (11.0 * den as f64))
    } else {
        Ok(float_sum / 11.0)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Arithmetic mean of per-class average precisions.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Invalid("mean AP of an empty class list".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
