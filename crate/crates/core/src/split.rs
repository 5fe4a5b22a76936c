//! Held-out pairs for link prediction.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::AttributedNetwork;
use crate::seeds::{self, Stream};

/// Ordered pairs excluded from the likelihood (treated as missing).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairMask {
    pairs: HashSet<(usize, usize)>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl PairMask {
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = HashSet::new();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for (i, j) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!(
                    "masked pair ({i}, {j}) is not an ordered pair of distinct nodes in 0..{n}"
                )));
            }
            if set.insert((i, j)) {
                out[i].push(j);
                inc[j].push(i);
            }
        }
        for row in out.iter_mut().chain(inc.iter_mut()) {
            row.sort_unstable();
        }
        Ok(PairMask {
            pairs: set,
            out,
            inc,
        })
    }

    pub fn empty(n: usize) -> Self {
        PairMask {
            pairs: HashSet::new(),
            out: vec![Vec::new(); n],
            inc: vec![Vec::new(); n],
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&(i, j))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Nodes j with (i, j) masked.
    pub fn masked_out(&self, i: usize) -> &[usize] {
        self.out.get(i).map_or(&[], |v| v.as_slice())
    }

    /// Nodes j with (j, i) masked.
    pub fn masked_in(&self, i: usize) -> &[usize] {
        self.inc.get(i).map_or(&[], |v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (i, j)))
    }
}

/// A network with some edges and an equal number of non-edges hidden.
#[derive(Debug, Clone)]
pub struct LinkSplit {
    /// The input network with the held-out edges removed.
    pub observed: AttributedNetwork,
    pub heldout_pos: Vec<(usize, usize)>,
    pub heldout_neg: Vec<(usize, usize)>,
    pub mask: PairMask,
}

impl LinkSplit {
    /// Re-creates a split from explicit held-out lists (e.g. a saved manifest).
    pub fn from_pairs(
        net: &AttributedNetwork,
        heldout_pos: Vec<(usize, usize)>,
        heldout_neg: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if heldout_pos.len() != heldout_neg.len() {
            return Err(Error::Split(format!(
                "{} held-out edges but {} held-out non-edges",
                heldout_pos.len(),
                heldout_neg.len()
            )));
        }
        for &(i, j) in &heldout_pos {
            if !net.has_edge(i, j) {
                return Err(Error::Split(format!(
                    "held-out edge ({i}, {j}) is not an edge"
                )));
            }
        }
        for &(i, j) in &heldout_neg {
            if net.has_edge(i, j) || net.has_edge(j, i) {
                return Err(Error::Split(format!(
                    "held-out non-edge ({i}, {j}) touches an existing edge"
                )));
            }
        }
        let removed: HashSet<(usize, usize)> = heldout_pos.iter().copied().collect();
        let mask = PairMask::new(
            net.n(),
            heldout_pos.iter().chain(heldout_neg.iter()).copied(),
        )?;
        if mask.len() != heldout_pos.len() + heldout_neg.len() {
            return Err(Error::Split("held-out pairs are not distinct".into()));
        }
        let observed =
            net.with_edges(net.edges().iter().copied().filter(|e| !removed.contains(e)))?;
        Ok(LinkSplit {
            observed,
            heldout_pos,
            heldout_neg,
            mask,
        })
    }
}

/// Hides ⌈fraction·|E|⌉ uniformly chosen edges and as many distinct
/// non-edges. A non-edge is an ordered pair (i, j), i ≠ j, such that neither
/// (i, j) nor (j, i) is an edge. Deterministic for a fixed seed.
pub fn make_link_split(net: &AttributedNetwork, fraction: f64, seed: u64) -> Result<LinkSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let num_edges = net.num_edges();
    if num_edges == 0 {
        return Err(Error::Split("network has no edges".into()));
    }
    let count = ((fraction * num_edges as f64).ceil() as usize).min(num_edges);
    let n = net.n();

    let touched: HashSet<(usize, usize)> = net
        .edges()
        .iter()
        .flat_map(|&(i, j)| [(i, j), (j, i)])
        .collect();
    let total_pairs = n * n.saturating_sub(1);
    let available = total_pairs - touched.len();
    if available < count {
        return Err(Error::Split(format!(
            "only {available} non-edges available, {count} needed"
        )));
    }

    let mut rng = seeds::stream(seed, Stream::Split);
    let mut heldout_pos: Vec<(usize, usize)> = index::sample(&mut rng, num_edges, count)
        .into_iter()
        .map(|e| net.edges()[e])
        .collect();

    let mut heldout_neg = Vec::with_capacity(count);
    if available * 4 >= total_pairs {
        let mut chosen = HashSet::with_capacity(count);
        while heldout_neg.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || touched.contains(&(i, j)) || !chosen.insert((i, j)) {
                continue;
            }
            heldout_neg.push((i, j));
        }
    } else {
        // Dense network: enumerate the candidates instead of rejecting.
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !touched.contains(&(i, j)))
            .collect();
        heldout_neg.extend(
            index::sample(&mut rng, candidates.len(), count)
                .into_iter()
                .map(|c| candidates[c]),
        );
    }

    heldout_pos.sort_unstable();
    heldout_neg.sort_unstable();
    LinkSplit::from_pairs(net, heldout_pos, heldout_neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{CovariateMode, Covariates};
    use ndarray::Array2;

    fn ring(n: usize, extra: usize) -> AttributedNetwork {
        let covs = Covariates::from_dense(&Array2::zeros((n, 1)), CovariateMode::Binary).unwrap();
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.extend((0..extra).map(|i| (i, (i + 7) % n)));
        AttributedNetwork::new(n, edges, covs).unwrap()
    }

    #[test]
    fn twenty_percent_of_hundred_edges() {
        let net = ring(100, 0);
        assert_eq!(net.num_edges(), 100);
        let split = make_link_split(&net, 0.2, 3).unwrap();
        assert_eq!(split.heldout_pos.len(), 20);
        assert_eq!(split.heldout_neg.len(), 20);
        assert_eq!(split.mask.len(), 40);
        assert_eq!(split.observed.num_edges(), 80);
    }

    #[test]
    fn same_seed_same_split() {
        let net = ring(60, 30);
        let a = make_link_split(&net, 0.3, 11).unwrap();
        let b = make_link_split(&net, 0.3, 11).unwrap();
        assert_eq!(a.heldout_pos, b.heldout_pos);
        assert_eq!(a.heldout_neg, b.heldout_neg);
        let c = make_link_split(&net, 0.3, 12).unwrap();
        assert_ne!(a.heldout_pos, c.heldout_pos);
    }

    #[test]
    fn complete_digraph_has_no_negatives() {
        let n = 5;
        let covs = Covariates::from_dense(&Array2::zeros((n, 1)), CovariateMode::Binary).unwrap();
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
        let net = AttributedNetwork::new(n, edges, covs).unwrap();
        assert!(make_link_split(&net, 0.2, 0).is_err());
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let net = ring(10, 0);
        assert!(make_link_split(&net, 0.0, 0).is_err());
        assert!(make_link_split(&net, 1.0, 0).is_err());
    }

    #[test]
    fn dense_path_enumerates_candidates() {
        // Almost complete: only a handful of non-edges remain.
        let n = 8;
        let covs = Covariates::from_dense(&Array2::zeros((n, 1)), CovariateMode::Binary).unwrap();
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !(i < 3 && j < 3))
            .collect();
        let net = AttributedNetwork::new(n, edges, covs).unwrap();
        let split = make_link_split(&net, 0.1, 5).unwrap();
        for &(i, j) in &split.heldout_neg {
            assert!(i < 3 && j < 3);
        }
    }
}
