//! Per-community explanations: salient covariates, strongest members and
//! block relations.
//!
//! Because Σ_ℓ z_ℓ = 1, adding a constant to row j of W (and subtracting it
//! from u_j) leaves the model unchanged. Covariates are therefore ranked by
//! the row-centred weight W_jℓ − mean_ℓ′ W_jℓ′, which does not depend on that
//! choice; the raw weight is reported alongside.

use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::io::write_text;

#[derive(Debug, Clone, PartialEq)]
pub struct SalientCovariate {
    pub index: usize,
    /// Row-centred weight used for ranking.
    pub weight: f64,
    pub raw_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityProfile {
    pub community: usize,
    /// Descending by `weight`.
    pub covariates: Vec<SalientCovariate>,
    /// (node, membership strength), descending.
    pub members: Vec<(usize, f64)>,
    /// Row ℓ of the block mean: edge probabilities from this community.
    pub block_out: Vec<f64>,
    /// Column ℓ: edge probabilities into this community.
    pub block_in: Vec<f64>,
}

/// Row-centred copy of W.
pub fn centred_weights(w: &Array2<f64>) -> Array2<f64> {
    let mut out = w.clone();
    if w.ncols() > 0 {
        let means = w.mean_axis(Axis(1)).expect("nonempty rows");
        for (mut row, m) in out.rows_mut().into_iter().zip(means) {
            row -= m;
        }
    }
    out
}

fn top_n(scores: impl Iterator<Item = (usize, f64)>, n: usize) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = scores.collect();
    // Stable: ties keep the lower index first.
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v.truncate(n);
    v
}

/// One profile per community from W (m×k), memberships (n×k) and the block
/// mean (k×k).
pub fn community_profiles(
    w: &Array2<f64>,
    memberships: &Array2<f64>,
    block_mean: &Array2<f64>,
    top: usize,
) -> Result<Vec<CommunityProfile>> {
    let k = w.ncols();
    if memberships.ncols() != k || block_mean.dim() != (k, k) {
        return Err(Error::InvalidArgument(format!(
            "W has {k} communities but memberships have {} and B is {:?}",
            memberships.ncols(),
            block_mean.dim()
        )));
    }
    let centred = centred_weights(w);
    Ok((0..k)
        .map(|l| CommunityProfile {
            community: l,
            covariates: top_n(centred.column(l).iter().copied().enumerate(), top)
                .into_iter()
                .map(|(j, weight)| SalientCovariate {
                    index: j,
                    weight,
                    raw_weight: w[[j, l]],
                })
                .collect(),
            members: top_n(memberships.column(l).iter().copied().enumerate(), top),
            block_out: block_mean.row(l).to_vec(),
            block_in: block_mean.column(l).to_vec(),
        })
        .collect())
}

/// Long-format CSV, one row per ranked item:
/// `community,kind,rank,id,name,weight,raw_weight`, where kind is
/// `covariate`, `member`, `block_out` or `block_in`.
pub fn profiles_to_csv(profiles: &[CommunityProfile], names: Option<&[String]>) -> String {
    let mut out = String::from("community,kind,rank,id,name,weight,raw_weight\n");
    for p in profiles {
        for (r, c) in p.covariates.iter().enumerate() {
            let name = names
                .and_then(|n| n.get(c.index))
                .map_or("", |s| s.as_str());
            out += &format!(
                "{},covariate,{r},{},{name},{},{}\n",
                p.community, c.index, c.weight, c.raw_weight
            );
        }
        for (r, (i, s)) in p.members.iter().enumerate() {
            out += &format!("{},member,{r},{i},,{s},\n", p.community);
        }
        for (b, x) in p.block_out.iter().enumerate() {
            out += &format!("{},block_out,{b},{b},,{x},\n", p.community);
        }
        for (b, x) in p.block_in.iter().enumerate() {
            out += &format!("{},block_in,{b},{b},,{x},\n", p.community);
        }
    }
    out
}

pub fn write_profiles(
    path: &Path,
    profiles: &[CommunityProfile],
    names: Option<&[String]>,
) -> Result<()> {
    write_text(path, &profiles_to_csv(profiles, names))
}
