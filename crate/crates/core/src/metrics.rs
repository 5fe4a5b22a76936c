//! Evaluation metrics. Natural logarithms throughout.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Normalized mutual information, I(A; B) / ((H(A) + H(B)) / 2).
///
/// When both partitions have zero entropy (a single cluster each) the ratio
/// is undefined; it is taken as 1 if the partitions are identical and 0
/// otherwise.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "NMI needs two nonempty labelings of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ca: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let entropy =
        |c: &BTreeMap<usize, f64>| -> f64 { c.values().map(|&k| -(k / n) * (k / n).ln()).sum() };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    let mut mi = 0.0;
    for (&(x, y), &nxy) in &joint {
        mi += nxy / n * (nxy * n / (ca[&x] * cb[&y])).ln();
    }
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        // Both partitions are a single cluster; they are identical.
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Area under the ROC curve as the Mann–Whitney statistic: the probability a
/// positive outscores a negative, ties counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "AUC needs positive and negative scores".into(),
        ));
    }
    if pos.iter().chain(neg).any(|x| x.is_nan()) {
        return Err(Error::Numerical("AUC received a NaN score".into()));
    }
    // Rank-sum over the pooled sample with average ranks for ties.
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Jensen–Shannon divergence ½ KL(p‖m) + ½ KL(q‖m), m = (p + q)/2.
/// Bounded by ln 2.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(
            "distributions differ in length".into(),
        ));
    }
    let kl_to_mid = |a: f64, b: f64| {
        if a > 0.0 {
            a * (2.0 * a / (a + b)).ln()
        } else {
            0.0
        }
    };
    let d: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a))
        .sum();
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

/// Pearson correlation; 0 when either vector is constant.
pub fn pearson(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.sum() / n, y.sum() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Matches the columns of `est` to those of `truth` by maximizing the total
/// Pearson correlation. Returns `perm` with est column `perm[l]` aligned to
/// truth column `l`.
pub fn align_communities(est: &Array2<f64>, truth: &Array2<f64>) -> Result<Vec<usize>> {
    if est.dim() != truth.dim() {
        return Err(Error::InvalidArgument(format!(
            "membership matrices have shapes {:?} and {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    let k = est.ncols();
    let corr = Array2::from_shape_fn((k, k), |(t, e)| pearson(truth.column(t), est.column(e)));
    Ok(max_weight_matching(&corr))
}

/// Hungarian algorithm on a square weight matrix; `result[row] = column`.
pub fn max_weight_matching(weights: &Array2<f64>) -> Vec<usize> {
    let k = weights.nrows();
    assert_eq!(k, weights.ncols(), "weight matrix must be square");
    // Shortest augmenting paths with potentials (1-based, column 0 is a
    // sentinel), minimizing −weight.
    let cost = |r: usize, c: usize| -weights[[r - 1, c - 1]];
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut row_of = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for r in 1..=k {
        row_of[0] = r;
        let mut col = 0;
        let mut min_to = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col] = true;
            let r0 = row_of[col];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for c in 1..=k {
                if used[c] {
                    continue;
                }
                let reduced = cost(r0, c) - u[r0] - v[c];
                if reduced < min_to[c] {
                    min_to[c] = reduced;
                    way[c] = col;
                }
                if min_to[c] < delta {
                    delta = min_to[c];
                    next = c;
                }
            }
            for c in 0..=k {
                if used[c] {
                    u[row_of[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_to[c] -= delta;
                }
            }
            col = next;
            if row_of[col] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col];
            row_of[col] = row_of[prev];
            col = prev;
            if col == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; k];
    for c in 1..=k {
        if row_of[c] > 0 {
            result[row_of[c] - 1] = c - 1;
        }
    }
    result
}

/// Reorders the columns of `est` by `perm` (see [`align_communities`]).
pub fn permute_columns(est: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((est.nrows(), perm.len()), |(i, l)| est[[i, perm[l]]])
}

/// B̂ reindexed so that entry (a, b) refers to truth communities (a, b).
pub fn permute_block(b: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((perm.len(), perm.len()), |(x, y)| b[[perm[x], perm[y]]])
}

/// Row j minus its median: for each covariate, the weight relative to a
/// typical community. Removes the (W_j· + c, u_j − c) ambiguity.
pub fn median_gauge(w: &Array2<f64>) -> Array2<f64> {
    let mut out = w.clone();
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.is_empty() {
            0.0
        } else if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        };
        row -= median;
    }
    out
}

/// Sign pattern of the entries whose magnitude exceeds `cut`.
pub fn threshold_weights(w: &Array2<f64>, cut: f64) -> Array2<i8> {
    w.mapv(|x| {
        if x > cut {
            1
        } else if x < -cut {
            -1
        } else {
            0
        }
    })
}

/// How well fitted parameters recover the generating ones, after aligning
/// communities on the memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Fitted column `perm[l]` corresponds to true community `l`.
    pub perm: Vec<usize>,
    /// Per-node Jensen–Shannon divergence between aligned memberships.
    pub js: Vec<f64>,
    /// Mean |B̂ − B| over all k² entries.
    pub block_error: f64,
    /// Thresholded W equal to the truth, raw entries.
    pub w_match_raw: bool,
    /// Thresholded W equal to the truth after [`median_gauge`] on both.
    pub w_match_gauged: bool,
}

impl Recovery {
    pub fn fraction_js_below(&self, cut: f64) -> f64 {
        self.js.iter().filter(|&&x| x < cut).count() as f64 / self.js.len().max(1) as f64
    }
}

/// Compares a fit (memberships, block mean, W) with the truth.
pub fn recovery(
    est_z: &Array2<f64>,
    est_b: &Array2<f64>,
    est_w: &Array2<f64>,
    true_z: &Array2<f64>,
    true_b: &Array2<f64>,
    true_w: &Array2<f64>,
    cut: f64,
) -> Result<Recovery> {
    if est_b.dim() != true_b.dim() || est_w.dim() != true_w.dim() {
        return Err(Error::InvalidArgument(
            "fitted and true parameters differ in shape".into(),
        ));
    }
    let perm = align_communities(est_z, true_z)?;
    let z = permute_columns(est_z, &perm);
    let js = z
        .rows()
        .into_iter()
        .zip(true_z.rows())
        .map(|(a, b)| js_divergence(&a.to_vec(), &b.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let b = permute_block(est_b, &perm);
    let block_error = (&b - true_b).mapv(f64::abs).mean().unwrap_or(0.0);
    let w = permute_columns(est_w, &perm);
    Ok(Recovery {
        w_match_raw: threshold_weights(&w, cut) == threshold_weights(true_w, cut),
        w_match_gauged: threshold_weights(&median_gauge(&w), cut)
            == threshold_weights(&median_gauge(true_w), cut),
        perm,
        js,
        block_error,
    })
}
