//! Variational EM for RB-SBM.
//!
//! Q(Z, B) = Π_i Cat(z_i; q_i) · Π_ab Beta(B_ab; ᾱ_ab, β̄_ab). The E-step
//! updates all Beta factors, then a random batch of node factors, each in
//! closed form (CAVI). The M-step takes gradient steps on θ = {W, u, v}.
//!
//! Every sum over non-edges is computed as "all pairs − self pairs − edges −
//! masked pairs", so a full iteration costs O(k²(n + |E|) + nnz(Y)·k).

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;

use crate::block::{BlockPosterior, BlockPrior, ExpectedLogB};
use crate::error::{Error, Result};
use crate::generator::argmax_rows;
use crate::metrics::auc;
use crate::network::{AttributedNetwork, CovariateMode};
use crate::rbm::{DataStats, GibbsChains, Moments, RbmGradient, RbmParams};
use crate::seeds::{self, Stream};
use crate::special::softmax_in_place;
use crate::split::{LinkSplit, PairMask};

/// How the RBM expectations in the M-step gradient are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Closed form (binary covariates only).
    Exact,
    /// Persistent Gibbs chains.
    Gibbs,
}

impl GradientMode {
    pub fn name(self) -> &'static str {
        match self {
            GradientMode::Exact => "exact",
            GradientMode::Gibbs => "gibbs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GradientMode::Exact),
            "gibbs" => Ok(GradientMode::Gibbs),
            _ => Err(Error::InvalidArgument(format!(
                "unknown gradient mode {s:?} (expected exact or gibbs)"
            ))),
        }
    }
}

/// Stop when the ELBO gained less than `tol·|ELBO|` over the last `window`
/// iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub tol: f64,
    pub window: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            tol: 1e-6,
            window: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub k: usize,
    /// Maximum number of EM iterations.
    pub tau: usize,
    /// Node factors updated per E-step; `None` means min(n, 256).
    pub batch: Option<usize>,
    /// Gradient steps per M-step.
    pub xi: usize,
    /// Learning rate; `None` means 1/n.
    pub lr: Option<f64>,
    /// `None` picks exact moments for binary and Gibbs for continuous
    /// covariates.
    pub gradient_mode: Option<GradientMode>,
    pub chains: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// `None` means [`BlockPrior::real_data`].
    pub prior: Option<BlockPrior>,
    /// Annealing exponent ramps linearly from `.0` to `.1`; `None` disables.
    pub anneal: Option<(f64, f64)>,
    /// When false θ stays at its initial value (no M-step).
    pub update_rbm: bool,
    /// Starting θ; `None` uses [`RbmParams::initialize`].
    pub init_rbm: Option<RbmParams>,
    pub mask: Option<PairMask>,
    pub early_stop: Option<EarlyStop>,
    /// Evaluate the ELBO after every iteration (it is always evaluated at
    /// the end).
    pub track_elbo: bool,
}

impl FitOptions {
    pub fn new(k: usize) -> Self {
        FitOptions {
            k,
            tau: 1000,
            batch: None,
            xi: 1,
            lr: None,
            gradient_mode: None,
            chains: 100,
            thin: 10,
            burn_in: crate::rbm::DEFAULT_BURN_IN,
            seed: 0,
            prior: None,
            anneal: Some((0.3, 1.0)),
            update_rbm: true,
            init_rbm: None,
            mask: None,
            early_stop: None,
            track_elbo: true,
        }
    }

    pub fn batch_size(&self, n: usize) -> usize {
        self.batch.unwrap_or(256).min(n).max(1)
    }

    pub fn learning_rate(&self, n: usize) -> f64 {
        self.lr.unwrap_or(1.0 / n.max(1) as f64)
    }

    pub fn resolved_gradient_mode(&self, mode: CovariateMode) -> GradientMode {
        self.gradient_mode.unwrap_or(match mode {
            CovariateMode::Binary => GradientMode::Exact,
            CovariateMode::Continuous => GradientMode::Gibbs,
        })
    }

    /// λ at iteration `t` of `tau`.
    pub fn lambda_at(&self, t: usize) -> f64 {
        match self.anneal {
            None => 1.0,
            Some((start, end)) => {
                if self.tau <= 1 {
                    end
                } else {
                    start + (end - start) * (t as f64 / (self.tau - 1) as f64).min(1.0)
                }
            }
        }
    }
}

/// The variational posterior plus the current model parameters.
#[derive(Debug, Clone)]
pub struct VariationalStateSbm {
    /// n×k, rows on the simplex.
    pub q: Array2<f64>,
    pub block_post: BlockPosterior,
    pub rbm: RbmParams,
    pub elbo_trace: Vec<f64>,
    pub lambda: f64,
}

impl VariationalStateSbm {
    /// q_i = 1/k for all nodes, block factors at the prior.
    pub fn uniform(n: usize, prior: &BlockPrior, rbm: RbmParams) -> Self {
        let k = prior.k();
        VariationalStateSbm {
            q: Array2::from_elem((n, k), 1.0 / k as f64),
            block_post: BlockPosterior::from_prior(prior),
            rbm,
            elbo_trace: Vec::new(),
            lambda: 1.0,
        }
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    /// argmax_ℓ q_iℓ, ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(&self.q)
    }
}

/// Expected edge and non-edge counts between communities under q.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounts {
    /// Σ over observed, unmasked edges (i, j) of q_ia q_jb.
    pub edges: Array2<f64>,
    /// Σ over unmasked non-edges i ≠ j of q_ia q_jb.
    pub non_edges: Array2<f64>,
}

pub fn pair_counts(
    q: &Array2<f64>,
    net: &AttributedNetwork,
    mask: Option<&PairMask>,
) -> PairCounts {
    let k = q.ncols();
    let mut edges = Array2::<f64>::zeros((k, k));
    let mut masked = Array2::<f64>::zeros((k, k));
    for &(i, j) in net.edges() {
        if mask.is_some_and(|m| m.contains(i, j)) {
            continue;
        }
        add_outer(&mut edges, q, i, j);
    }
    if let Some(mask) = mask {
        for (i, j) in mask.iter() {
            add_outer(&mut masked, q, i, j);
        }
    }
    let s = q.sum_axis(Axis(0));
    let self_pairs = q.t().dot(q);
    let mut non_edges = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            non_edges[[a, b]] = s[a] * s[b] - self_pairs[[a, b]] - edges[[a, b]] - masked[[a, b]];
        }
    }
    PairCounts { edges, non_edges }
}

fn add_outer(acc: &mut Array2<f64>, q: &Array2<f64>, i: usize, j: usize) {
    let (qi, qj) = (q.row(i), q.row(j));
    for (a, &x) in qi.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (b, &y) in qj.iter().enumerate() {
            acc[[a, b]] += x * y;
        }
    }
}

/// ᾱ = α + expected edge counts, β̄ = β + expected non-edge counts.
pub fn update_block_posteriors(
    q: &Array2<f64>,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
) -> BlockPosterior {
    let counts = pair_counts(q, net, mask);
    BlockPosterior {
        alpha_bar: &prior.alpha + &counts.edges,
        beta_bar: &prior.beta + &counts.non_edges,
    }
}

/// Per-E-step tables shared by all node updates: digamma expectations and
/// running column sums of q.
pub struct NodeUpdater<'a> {
    net: &'a AttributedNetwork,
    mask: Option<&'a PairMask>,
    el: ExpectedLogB,
    col_sum: Array1<f64>,
}

impl<'a> NodeUpdater<'a> {
    pub fn new(
        state: &VariationalStateSbm,
        net: &'a AttributedNetwork,
        mask: Option<&'a PairMask>,
    ) -> Result<Self> {
        Ok(NodeUpdater {
            net,
            mask,
            el: state.block_post.expected_log()?,
            col_sum: state.q.sum_axis(Axis(0)),
        })
    }

    /// Log-potential φ_iℓ (up to a constant) of the optimal q_i.
    pub fn potentials(&self, q: &Array2<f64>, rbm: &RbmParams, i: usize) -> Vec<f64> {
        let k = q.ncols();
        let masked = |a: usize, b: usize| self.mask.is_some_and(|m| m.contains(a, b));
        let mut out_edge = Array1::<f64>::zeros(k);
        let mut in_edge = Array1::<f64>::zeros(k);
        for &j in self.net.out_neighbors(i) {
            if !masked(i, j) {
                out_edge += &q.row(j);
            }
        }
        for &j in self.net.in_neighbors(i) {
            if !masked(j, i) {
                in_edge += &q.row(j);
            }
        }
        let mut out_non = &self.col_sum - &q.row(i) - &out_edge;
        let mut in_non = &self.col_sum - &q.row(i) - &in_edge;
        if let Some(mask) = self.mask {
            for &j in mask.masked_out(i) {
                out_non -= &q.row(j);
            }
            for &j in mask.masked_in(i) {
                in_non -= &q.row(j);
            }
        }

        let mut phi = rbm.v.to_vec();
        for (j, y) in self.net.covariates().row(i) {
            for (l, p) in phi.iter_mut().enumerate() {
                *p += y * rbm.w[[j, l]];
            }
        }
        let (ln_b, ln_1mb) = (&self.el.ln_b, &self.el.ln_1mb);
        let out_term = ln_b.dot(&out_edge) + ln_1mb.dot(&out_non);
        let in_term = ln_b.t().dot(&in_edge) + ln_1mb.t().dot(&in_non);
        for l in 0..k {
            phi[l] += out_term[l] + in_term[l];
        }
        phi
    }

    /// Closed-form optimum of q_i given everything else.
    pub fn optimal_row(&self, q: &Array2<f64>, rbm: &RbmParams, i: usize) -> Vec<f64> {
        let mut phi = self.potentials(q, rbm, i);
        softmax_in_place(&mut phi);
        phi
    }

    /// Replaces q_i, keeping the column sums current.
    pub fn set_row(&mut self, q: &mut Array2<f64>, i: usize, row: &[f64]) {
        for (l, &x) in row.iter().enumerate() {
            self.col_sum[l] += x - q[[i, l]];
            q[[i, l]] = x;
        }
    }
}

/// Standalone single-node CAVI update (builds fresh tables).
pub fn update_node_posterior(
    state: &VariationalStateSbm,
    net: &AttributedNetwork,
    mask: Option<&PairMask>,
    i: usize,
) -> Result<Vec<f64>> {
    let up = NodeUpdater::new(state, net, mask)?;
    Ok(up.optimal_row(&state.q, &state.rbm, i))
}

/// h(x) = 2^{λ−1} x^λ for x ≤ ½, 1 − 2^{λ−1}(1 − x)^λ above, followed by
/// renormalization. Raises small and lowers large probabilities so that no
/// community dies out early in inference; h(½) = ½ and h is the identity
/// at λ = 1.
pub fn anneal(row: &mut [f64], lambda: f64) {
    if lambda >= 1.0 {
        return;
    }
    let c = 2f64.powf(lambda - 1.0);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = anneal_value(*x, lambda, c);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn anneal_value(x: f64, lambda: f64, c: f64) -> f64 {
    if x <= 0.5 {
        c * x.powf(lambda)
    } else {
        1.0 - c * (1.0 - x).powf(lambda)
    }
}

/// The unnormalized transform h(x) itself.
pub fn anneal_transform(x: f64, lambda: f64) -> f64 {
    anneal_value(x, lambda, 2f64.powf(lambda - 1.0))
}

/// One E-step: all block factors, then the given nodes in order.
pub fn e_step(
    state: &mut VariationalStateSbm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
    nodes: &[usize],
    lambda: f64,
) -> Result<()> {
    state.block_post = update_block_posteriors(&state.q, net, prior, mask);
    let mut up = NodeUpdater::new(state, net, mask)?;
    for &i in nodes {
        let mut row = up.optimal_row(&state.q, &state.rbm, i);
        anneal(&mut row, lambda);
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "node {i} posterior is not finite"
            )));
        }
        up.set_row(&mut state.q, i, &row);
    }
    state.lambda = lambda;
    Ok(())
}

/// Σ_i [q_iᵀ Wᵀ Y_i + uᵀ Y_i + vᵀ q_i] − n ln Ψ: the part of the expected
/// log joint that depends on θ.
pub fn expected_rbm_log_likelihood(
    q: &Array2<f64>,
    net: &AttributedNetwork,
    rbm: &RbmParams,
) -> f64 {
    let stats = DataStats::new(net, q);
    (&stats.yq * &rbm.w).sum() + stats.y_sum.dot(&rbm.u) + stats.q_sum.dot(&rbm.v)
        - net.n() as f64 * rbm.log_partition()
}

/// Source of model moments for the M-step.
pub enum MomentSource<'a> {
    Exact,
    Gibbs {
        chains: &'a mut GibbsChains,
        thin: usize,
    },
}

/// ξ gradient-ascent steps on θ with rate ε.
pub fn m_step(
    state: &VariationalStateSbm,
    net: &AttributedNetwork,
    xi: usize,
    lr: f64,
    mut source: MomentSource<'_>,
) -> Result<RbmParams> {
    let stats = DataStats::new(net, &state.q);
    let mut rbm = state.rbm.clone();
    for _ in 0..xi {
        let moments: Moments = match &mut source {
            MomentSource::Exact => rbm.exact_moments()?,
            MomentSource::Gibbs { chains, thin } => chains.moments(&rbm, *thin, 1).mean,
        };
        let grad = RbmGradient::new(&stats, &moments);
        if !grad.is_finite() {
            return Err(Error::Numerical(
                "RBM gradient is not finite; try a smaller learning rate".into(),
            ));
        }
        grad.apply(&mut rbm.w, &mut rbm.u, &mut rbm.v, lr, false);
        if !rbm.is_finite() {
            return Err(Error::Numerical("RBM parameters diverged".into()));
        }
    }
    Ok(rbm)
}

/// ELBO = E_Q[ln P(A, Y, Z, B)] − E_Q[ln Q(Z, B)].
pub fn elbo(
    state: &VariationalStateSbm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
) -> Result<f64> {
    let el = state.block_post.expected_log()?;
    let counts = pair_counts(&state.q, net, mask);
    let block_prior = state.block_post.expected_log_prior(prior, &el);
    let likelihood = (&counts.edges * &el.ln_b).sum() + (&counts.non_edges * &el.ln_1mb).sum();
    let rbm = expected_rbm_log_likelihood(&state.q, net, &state.rbm);
    let q_entropy: f64 = -state
        .q
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>();
    Ok(block_prior + likelihood + rbm + q_entropy + state.block_post.entropy())
}

/// What a fit produced besides the final state.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// ELBO after each iteration (only the final one unless tracking is on).
    pub elbo_trace: Vec<f64>,
    /// Wall time of the E- and M-step of each iteration, in seconds.
    pub iteration_seconds: Vec<f64>,
    pub labels: Vec<usize>,
    pub block_mean: Array2<f64>,
    pub iterations: usize,
    pub stopped_early: bool,
    pub gradient_mode: GradientMode,
}

/// Passed to the observer after every iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationInfo {
    pub iteration: usize,
    pub lambda: f64,
    pub elbo: Option<f64>,
    pub seconds: f64,
}

pub fn fit(
    net: &AttributedNetwork,
    options: &FitOptions,
) -> Result<(VariationalStateSbm, FitReport)> {
    fit_with(net, options, |_, _| {})
}

/// [`fit`] with a callback after each iteration.
pub fn fit_with(
    net: &AttributedNetwork,
    options: &FitOptions,
    mut observer: impl FnMut(&IterationInfo, &VariationalStateSbm),
) -> Result<(VariationalStateSbm, FitReport)> {
    let (n, k) = (net.n(), options.k);
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={n} for a network with {n} nodes, got {k}"
        )));
    }
    if options.tau == 0 || options.xi == 0 {
        return Err(Error::InvalidArgument(
            "tau and xi must be at least 1".into(),
        ));
    }
    let lr = options.learning_rate(n);
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be ≥ 0, got {lr}"
        )));
    }
    let mode = options.resolved_gradient_mode(net.mode());
    if mode == GradientMode::Exact && net.mode() == CovariateMode::Continuous && options.update_rbm
    {
        return Err(Error::ModeMismatch {
            expected: "binary",
            found: "continuous",
        });
    }
    let prior = options
        .prior
        .clone()
        .unwrap_or_else(|| BlockPrior::real_data(k));
    if prior.k() != k {
        return Err(Error::InvalidArgument(format!(
            "prior is {}×{} but k = {k}",
            prior.k(),
            prior.k()
        )));
    }
    let rbm = match &options.init_rbm {
        Some(p) => {
            if p.m() != net.m() || p.k() != k || p.mode != net.mode() {
                return Err(Error::InvalidArgument(
                    "initial RBM parameters do not match the network".into(),
                ));
            }
            p.clone()
        }
        None => RbmParams::initialize(net, k, options.seed),
    };
    let mask = options.mask.as_ref();
    let batch = options.batch_size(n);

    let mut state = VariationalStateSbm::uniform(n, &prior, rbm);
    let mut chains = (options.update_rbm && mode == GradientMode::Gibbs).then(|| {
        GibbsChains::new(
            &state.rbm,
            options.chains.max(1),
            options.seed,
            options.burn_in,
        )
    });
    let mut batch_rng = seeds::stream(options.seed, Stream::Batch);
    let mut seconds = Vec::with_capacity(options.tau);
    let mut stopped_early = false;
    let mut iterations = 0;

    for t in 0..options.tau {
        let start = Instant::now();
        let lambda = options.lambda_at(t);
        let nodes = index::sample(&mut batch_rng, n, batch).into_vec();
        e_step(&mut state, net, &prior, mask, &nodes, lambda)?;
        if options.update_rbm {
            let source = match chains.as_mut() {
                Some(c) => MomentSource::Gibbs {
                    chains: c,
                    thin: options.thin.max(1),
                },
                None => MomentSource::Exact,
            };
            state.rbm = m_step(&state, net, options.xi, lr, source)
                .map_err(|e| Error::Numerical(format!("M-step at iteration {t}: {e}")))?;
        }
        let elapsed = start.elapsed().as_secs_f64();
        seconds.push(elapsed);
        iterations = t + 1;

        let value = if options.track_elbo {
            let v = elbo(&state, net, &prior, mask)?;
            state.elbo_trace.push(v);
            Some(v)
        } else {
            None
        };
        observer(
            &IterationInfo {
                iteration: t,
                lambda,
                elbo: value,
                seconds: elapsed,
            },
            &state,
        );
        if let (Some(stop), true) = (options.early_stop, options.track_elbo) {
            let tr = &state.elbo_trace;
            if tr.len() > stop.window {
                let last = tr[tr.len() - 1];
                if last - tr[tr.len() - 1 - stop.window] < stop.tol * last.abs() {
                    stopped_early = true;
                    log::info!("stopping after {} iterations: ELBO has plateaued", t + 1);
                    break;
                }
            }
        }
    }

    // Leave the block factors consistent with the final memberships.
    state.block_post = update_block_posteriors(&state.q, net, &prior, mask);
    let final_elbo = elbo(&state, net, &prior, mask)?;
    if !options.track_elbo {
        state.elbo_trace.push(final_elbo);
    }
    if !final_elbo.is_finite() {
        return Err(Error::Numerical("final ELBO is not finite".into()));
    }
    let report = FitReport {
        elbo_trace: state.elbo_trace.clone(),
        iteration_seconds: seconds,
        labels: state.labels(),
        block_mean: state.block_post.mean(),
        iterations,
        stopped_early,
        gradient_mode: mode,
    };
    Ok((state, report))
}

/// Scores and AUC for the held-out pairs of a split.
#[derive(Debug, Clone)]
pub struct LinkPrediction {
    /// (source, target, score, is_edge) in positives-then-negatives order.
    pub scores: Vec<(usize, usize, f64, bool)>,
    pub auc: f64,
}

/// score(i, j) = q_iᵀ B̂ q_j with B̂ the posterior mean of the block matrix.
pub fn link_score(q: &Array2<f64>, block_mean: &Array2<f64>, i: usize, j: usize) -> f64 {
    q.row(i).dot(&block_mean.dot(&q.row(j)))
}

pub fn predict_links(
    q: &Array2<f64>,
    block_mean: &Array2<f64>,
    split: &LinkSplit,
) -> Result<LinkPrediction> {
    let mut scores = Vec::with_capacity(split.mask.len());
    for (pairs, is_edge) in [(&split.heldout_pos, true), (&split.heldout_neg, false)] {
        for &(i, j) in pairs {
            if !split.mask.contains(i, j) {
                return Err(Error::Split(format!("pair ({i}, {j}) was not held out")));
            }
            scores.push((i, j, link_score(q, block_mean, i, j), is_edge));
        }
    }
    let pos: Vec<f64> = scores.iter().filter(|s| s.3).map(|s| s.2).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.3).map(|s| s.2).collect();
    Ok(LinkPrediction {
        auc: auc(&pos, &neg)?,
        scores,
    })
}
