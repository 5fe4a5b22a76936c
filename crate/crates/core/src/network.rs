//! Attributed networks: a directed graph plus a node-by-covariate matrix.

use ndarray::Array2;

use crate::error::{Error, Result};

/// How covariate values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateMode {
    /// Entries in {0, 1}.
    Binary,
    /// Entries in the unit interval [0, 1].
    Continuous,
}

impl CovariateMode {
    pub fn name(self) -> &'static str {
        match self {
            CovariateMode::Binary => "binary",
            CovariateMode::Continuous => "continuous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(CovariateMode::Binary),
            "continuous" => Some(CovariateMode::Continuous),
            _ => None,
        }
    }
}

/// Node covariates stored row-compressed; binary data from text corpora is
/// overwhelmingly sparse, continuous data simply stores every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    mode: CovariateMode,
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Covariates {
    /// Builds covariates from a dense n×m matrix, validating the range.
    pub fn from_dense(dense: &Array2<f64>, mode: CovariateMode) -> Result<Self> {
        let (n, m) = dense.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..m {
                let x = dense[[i, j]];
                check_value(x, mode, i, j)?;
                if x != 0.0 {
                    cols.push(j);
                    vals.push(x);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Covariates {
            mode,
            m,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Binary covariates from per-node lists of active columns.
    pub fn from_active_sets(m: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let mut row = row.clone();
            row.sort_unstable();
            row.dedup();
            if let Some(&j) = row.last() {
                if j >= m {
                    return Err(Error::InvalidNetwork(format!(
                        "node {i} has covariate index {j} but m = {m}"
                    )));
                }
            }
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        let vals = vec![1.0; cols.len()];
        Ok(Covariates {
            mode: CovariateMode::Binary,
            m,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn mode(&self) -> CovariateMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Nonzero entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(pos) => self.vals[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), self.m));
        for i in 0..self.n() {
            for (j, x) in self.row(i) {
                out[[i, j]] = x;
            }
        }
        out
    }

    /// Column sums Σᵢ Yᵢⱼ.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.m];
        for (&j, &x) in self.cols.iter().zip(&self.vals) {
            sums[j] += x;
        }
        sums
    }

    /// Yᵀ Q for an n×k matrix Q, in O(nnz · k).
    pub fn transpose_times(&self, q: &Array2<f64>) -> Array2<f64> {
        let k = q.ncols();
        let mut out = Array2::zeros((self.m, k));
        for i in 0..self.n() {
            let qi = q.row(i);
            for (j, x) in self.row(i) {
                let mut dst = out.row_mut(j);
                dst.scaled_add(x, &qi);
            }
        }
        out
    }

    /// Y W for an m×k matrix W, in O(nnz · k).
    pub fn times(&self, w: &Array2<f64>) -> Array2<f64> {
        let k = w.ncols();
        let mut out = Array2::zeros((self.n(), k));
        for i in 0..self.n() {
            let mut dst = out.row_mut(i);
            for (j, x) in self.row(i) {
                dst.scaled_add(x, &w.row(j));
            }
        }
        out
    }
}

fn check_value(x: f64, mode: CovariateMode, i: usize, j: usize) -> Result<()> {
    let ok = match mode {
        CovariateMode::Binary => x == 0.0 || x == 1.0,
        CovariateMode::Continuous => (0.0..=1.0).contains(&x),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidNetwork(format!(
            "covariate ({i}, {j}) = {x} is outside the {} range",
            mode.name()
        )))
    }
}

/// Row-compressed adjacency for one direction.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    ptr: Vec<usize>,
    idx: Vec<usize>,
}

impl Csr {
    fn build(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, b) in pairs {
            rows[a].push(b);
        }
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        ptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            idx.extend_from_slice(&row);
            ptr.push(idx.len());
        }
        Csr { ptr, idx }
    }

    fn row(&self, i: usize) -> &[usize] {
        &self.idx[self.ptr[i]..self.ptr[i + 1]]
    }
}

/// A directed network over `n` nodes with covariates and optional
/// ground-truth communities.
///
/// Undirected inputs are stored as two ordered pairs per edge. Edges are
/// unique and never self-loops; both out- and in-neighbour lists are kept
/// sorted so per-node sums over neighbours cost O(deg).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedNetwork {
    n: usize,
    edges: Vec<(usize, usize)>,
    out_adj: Csr,
    in_adj: Csr,
    covariates: Covariates,
    labels: Option<Vec<usize>>,
    mm_labels: Option<Array2<f64>>,
}

impl AttributedNetwork {
    /// Builds a network. Duplicate edges are merged; self-loops and
    /// out-of-range endpoints are rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        covariates: Covariates,
    ) -> Result<Self> {
        if covariates.n() != n {
            return Err(Error::InvalidNetwork(format!(
                "covariates cover {} nodes but the network has {n}",
                covariates.n()
            )));
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidNetwork(format!("self-loop at node {a}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let out_adj = Csr::build(n, edges.iter().copied());
        let in_adj = Csr::build(n, edges.iter().map(|&(a, b)| (b, a)));
        Ok(AttributedNetwork {
            n,
            edges,
            out_adj,
            in_adj,
            covariates,
            labels: None,
            mm_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidNetwork(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches ground-truth mixed memberships (rows on the simplex).
    pub fn with_mm_labels(mut self, mm: Array2<f64>) -> Result<Self> {
        if mm.nrows() != self.n {
            return Err(Error::InvalidNetwork(format!(
                "{} membership rows for {} nodes",
                mm.nrows(),
                self.n
            )));
        }
        for (i, row) in mm.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidNetwork(format!(
                    "membership row {i} is not on the simplex (sum {sum})"
                )));
            }
        }
        self.mm_labels = Some(mm);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.covariates.m()
    }

    pub fn mode(&self) -> CovariateMode {
        self.covariates.mode()
    }

    /// Sorted, unique ordered pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        self.out_adj.row(i)
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        self.in_adj.row(i)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out_adj.row(i).binary_search(&j).is_ok()
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mm_labels(&self) -> Option<&Array2<f64>> {
        self.mm_labels.as_ref()
    }

    /// Fraction of ordered non-self pairs that are edges.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.edges.len() as f64 / (self.n * (self.n - 1)) as f64
    }

    /// Same nodes and covariates, different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = AttributedNetwork::new(self.n, edges, self.covariates.clone())?;
        out.labels = self.labels.clone();
        out.mm_labels = self.mm_labels.clone();
        Ok(out)
    }

    /// Same graph, replaced covariates.
    pub fn with_covariates(&self, covariates: Covariates) -> Result<Self> {
        let mut out = AttributedNetwork::new(self.n, self.edges.iter().copied(), covariates)?;
        out.labels = self.labels.clone();
        out.mm_labels = self.mm_labels.clone();
        Ok(out)
    }
}
