//! The RBM coupling covariates y and a one-hot community vector z.
//!
//! P(y, z) ∝ exp(yᵀ W z + yᵀ u + zᵀ v). Because z has only k states, the
//! partition function factorizes:
//!
//! ```text
//! ln Ψ = logsumexp_ℓ [ v_ℓ + Σ_j g(W_jℓ + u_j) ]
//! ```
//!
//! with g = softplus for binary covariates and g(a) = ln((eᵃ − 1)/a) for
//! covariates on [0, 1]. Marginals and moments follow from the same terms.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{AttributedNetwork, CovariateMode};
use crate::seeds::{self, Stream};
use crate::special::{
    ln_exp_integral, log_sum_exp, sigmoid, softmax_in_place, softplus, truncated_exp_inverse_cdf,
    truncated_exp_mean,
};

/// Default number of burn-in sweeps for freshly started Gibbs chains.
pub const DEFAULT_BURN_IN: usize = 100;

/// θ = {W, u, v} for the one-hot RBM.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// m×k covariate–community weights.
    pub w: Array2<f64>,
    /// Covariate biases, length m.
    pub u: Array1<f64>,
    /// Community biases, length k.
    pub v: Array1<f64>,
    pub mode: CovariateMode,
}

impl RbmParams {
    pub fn new(
        w: Array2<f64>,
        u: Array1<f64>,
        v: Array1<f64>,
        mode: CovariateMode,
    ) -> Result<Self> {
        check_dims(&w, &u, &v)?;
        Ok(RbmParams { w, u, v, mode })
    }

    pub fn zeros(m: usize, k: usize, mode: CovariateMode) -> Self {
        RbmParams {
            w: Array2::zeros((m, k)),
            u: Array1::zeros(m),
            v: Array1::zeros(k),
            mode,
        }
    }

    /// Starting point for inference: W uniform in (−0.01, 0.01), u matched
    /// to the covariate marginals, v = 0.
    pub fn initialize(net: &AttributedNetwork, k: usize, seed: u64) -> Self {
        let m = net.m();
        let mut rng = seeds::stream(seed, Stream::Init);
        let w = Array2::from_shape_fn((m, k), |_| rng.random_range(-0.01..0.01));
        let u = initial_biases(net);
        RbmParams {
            w,
            u,
            v: Array1::zeros(k),
            mode: net.mode(),
        }
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.u)
            .chain(&self.v)
            .all(|x| x.is_finite())
    }

    fn unit_log_norm(&self, a: f64) -> f64 {
        match self.mode {
            CovariateMode::Binary => softplus(a),
            CovariateMode::Continuous => ln_exp_integral(a),
        }
    }

    /// Unnormalized ln P(z = e_ℓ) for every ℓ: v_ℓ + Σ_j g(W_jℓ + u_j).
    pub fn log_community_weights(&self) -> Vec<f64> {
        (0..self.k())
            .map(|l| {
                self.v[l]
                    + self
                        .w
                        .column(l)
                        .iter()
                        .zip(&self.u)
                        .map(|(&w, &u)| self.unit_log_norm(w + u))
                        .sum::<f64>()
            })
            .collect()
    }

    /// ln Ψ(W, u, v) in O(mk).
    pub fn log_partition(&self) -> f64 {
        log_sum_exp(&self.log_community_weights())
    }

    /// Marginal P(z = e_ℓ).
    pub fn community_marginal(&self) -> Vec<f64> {
        let mut p = self.log_community_weights();
        softmax_in_place(&mut p);
        p
    }

    /// yᵀ W e_ℓ + yᵀ u + v_ℓ.
    pub fn energy(&self, y: &[f64], community: usize) -> f64 {
        let mut e = self.v[community];
        for (j, &yj) in y.iter().enumerate() {
            e += yj * (self.w[[j, community]] + self.u[j]);
        }
        e
    }

    /// Per-covariate conditional given z = e_ℓ: success probabilities
    /// σ(W_jℓ + u_j) for binary covariates, or the rates a_j = W_jℓ + u_j of
    /// the densities a e^{a y}/(eᵃ − 1) on [0, 1] for continuous ones.
    pub fn cond_y_given_z(&self, community: usize) -> Vec<f64> {
        let col = self.w.column(community);
        let rates = col.iter().zip(&self.u).map(|(&w, &u)| w + u);
        match self.mode {
            CovariateMode::Binary => rates.map(sigmoid).collect(),
            CovariateMode::Continuous => rates.collect(),
        }
    }

    /// P(z_ℓ = 1 | y) ∝ exp(Σ_j y_j W_jℓ + v_ℓ).
    pub fn cond_z_given_y(&self, y: &[f64]) -> Vec<f64> {
        let mut logits = self.v.to_vec();
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0.0 {
                for (l, logit) in logits.iter_mut().enumerate() {
                    *logit += yj * self.w[[j, l]];
                }
            }
        }
        softmax_in_place(&mut logits);
        logits
    }

    /// Closed-form E[y z], E[z], E[y] for binary covariates.
    pub fn exact_moments(&self) -> Result<Moments> {
        if self.mode != CovariateMode::Binary {
            return Err(Error::ModeMismatch {
                expected: "binary",
                found: self.mode.name(),
            });
        }
        let (m, k) = (self.m(), self.k());
        let ez = Array1::from(self.community_marginal());
        let mut eyz = Array2::zeros((m, k));
        for l in 0..k {
            for j in 0..m {
                eyz[[j, l]] = sigmoid(self.w[[j, l]] + self.u[j]) * ez[l];
            }
        }
        let ey = eyz.sum_axis(ndarray::Axis(1));
        Ok(Moments { eyz, ez, ey })
    }

    /// Draws y given z = e_ℓ.
    fn draw_y<R: Rng>(&self, community: usize, y: &mut [f64], rng: &mut R) {
        for (j, yj) in y.iter_mut().enumerate() {
            let a = self.w[[j, community]] + self.u[j];
            let u: f64 = rng.random();
            *yj = match self.mode {
                CovariateMode::Binary => f64::from(u8::from(u < sigmoid(a))),
                CovariateMode::Continuous => truncated_exp_inverse_cdf(a, 1.0, u),
            };
        }
    }

    /// One exact draw of (y, z): z from its marginal, then y | z.
    pub fn sample_exact<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let z = draw_categorical(&self.community_marginal(), rng);
        let mut y = vec![0.0; self.m()];
        self.draw_y(z, &mut y, rng);
        (y, z)
    }
}

fn check_dims(w: &Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) -> Result<()> {
    if w.nrows() != u.len() || w.ncols() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "W is {}×{} but u has {} and v has {} entries",
            w.nrows(),
            w.ncols(),
            u.len(),
            v.len()
        )));
    }
    if !w.iter().chain(u).chain(v).all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(
            "RBM parameters must be finite".into(),
        ));
    }
    Ok(())
}

/// Biases whose per-covariate marginal (at W = 0) equals the clamped
/// empirical mean of each column.
pub(crate) fn initial_biases(net: &AttributedNetwork) -> Array1<f64> {
    let n = net.n().max(1) as f64;
    let sums = net.covariates().column_sums();
    sums.iter()
        .map(|&s| {
            let mean = (s / n).clamp(0.01, 0.99);
            match net.mode() {
                CovariateMode::Binary => (mean / (1.0 - mean)).ln(),
                CovariateMode::Continuous => rate_for_mean(mean),
            }
        })
        .collect()
}

/// Rate a whose truncated exponential on [0, 1] has the given mean.
fn rate_for_mean(mean: f64) -> f64 {
    let (mut lo, mut hi) = (-200.0, 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if truncated_exp_mean(mid) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn draw_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the running total; take the last nonzero state.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// RBM expectations E[y_j z_ℓ], E[z_ℓ], E[y_j].
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub eyz: Array2<f64>,
    pub ez: Array1<f64>,
    pub ey: Array1<f64>,
}

/// Monte-Carlo moments with the standard error of each mean, treating the
/// collected draws as independent.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub mean: Moments,
    pub std_err: Moments,
    pub draws: usize,
}

/// Accumulates draws of (y, z) with z given as a k-vector.
pub(crate) struct MomentAccumulator {
    sum: Moments,
    sum_sq: Moments,
    draws: usize,
}

impl MomentAccumulator {
    pub(crate) fn new(m: usize, k: usize) -> Self {
        let zero = || Moments {
            eyz: Array2::zeros((m, k)),
            ez: Array1::zeros(k),
            ey: Array1::zeros(m),
        };
        MomentAccumulator {
            sum: zero(),
            sum_sq: zero(),
            draws: 0,
        }
    }

    pub(crate) fn push(&mut self, y: &[f64], z: &[f64]) {
        for (j, &yj) in y.iter().enumerate() {
            self.sum.ey[j] += yj;
            self.sum_sq.ey[j] += yj * yj;
            if yj != 0.0 {
                for (l, &zl) in z.iter().enumerate() {
                    let x = yj * zl;
                    self.sum.eyz[[j, l]] += x;
                    self.sum_sq.eyz[[j, l]] += x * x;
                }
            }
        }
        for (l, &zl) in z.iter().enumerate() {
            self.sum.ez[l] += zl;
            self.sum_sq.ez[l] += zl * zl;
        }
        self.draws += 1;
    }

    pub(crate) fn finish(self) -> MomentEstimate {
        let n = self.draws.max(1) as f64;
        let mean = Moments {
            eyz: &self.sum.eyz / n,
            ez: &self.sum.ez / n,
            ey: &self.sum.ey / n,
        };
        let se = |s: f64, s2: f64| {
            let mu = s / n;
            let var = (s2 / n - mu * mu).max(0.0) * n / (n - 1.0).max(1.0);
            (var / n).sqrt()
        };
        let std_err = Moments {
            eyz: ndarray::Zip::from(&self.sum.eyz)
                .and(&self.sum_sq.eyz)
                .map_collect(|&s, &s2| se(s, s2)),
            ez: ndarray::Zip::from(&self.sum.ez)
                .and(&self.sum_sq.ez)
                .map_collect(|&s, &s2| se(s, s2)),
            ey: ndarray::Zip::from(&self.sum.ey)
                .and(&self.sum_sq.ey)
                .map_collect(|&s, &s2| se(s, s2)),
        };
        MomentEstimate {
            mean,
            std_err,
            draws: self.draws,
        }
    }
}

struct Chain {
    y: Vec<f64>,
    z: usize,
    rng: seeds::Rng,
}

impl Chain {
    fn sweep(&mut self, p: &RbmParams) {
        let pz = p.cond_z_given_y(&self.y);
        self.z = draw_categorical(&pz, &mut self.rng);
        p.draw_y(self.z, &mut self.y, &mut self.rng);
    }
}

/// Persistent Gibbs chains for the one-hot RBM. Chain state survives
/// parameter updates; each chain owns an independent RNG stream and chains
/// advance in parallel.
pub struct GibbsChains {
    chains: Vec<Chain>,
}

impl GibbsChains {
    /// Starts `chains` chains from uniform y and runs `burn_in` sweeps.
    pub fn new(p: &RbmParams, chains: usize, seed: u64, burn_in: usize) -> Self {
        assert!(chains >= 1, "at least one Gibbs chain is required");
        let chains = (0..chains)
            .map(|c| {
                let mut rng = seeds::substream(seed, Stream::Gibbs, c as u32);
                let y = (0..p.m())
                    .map(|_| match p.mode {
                        CovariateMode::Binary => f64::from(u8::from(rng.random::<bool>())),
                        CovariateMode::Continuous => rng.random(),
                    })
                    .collect();
                Chain { y, z: 0, rng }
            })
            .collect();
        let mut out = GibbsChains { chains };
        out.advance(p, burn_in);
        out
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Runs `sweeps` full z-then-y sweeps on every chain.
    pub fn advance(&mut self, p: &RbmParams, sweeps: usize) {
        self.chains.par_iter_mut().for_each(|c| {
            for _ in 0..sweeps {
                c.sweep(p);
            }
        });
    }

    /// Collects `per_chain` samples from every chain, keeping every
    /// `thin`-th sweep. Samples are ordered chain-major.
    pub fn sample(
        &mut self,
        p: &RbmParams,
        thin: usize,
        per_chain: usize,
    ) -> Vec<(Vec<f64>, usize)> {
        assert!(thin >= 1, "thinning interval must be at least 1");
        self.chains
            .par_iter_mut()
            .map(|c| {
                let mut out = Vec::with_capacity(per_chain);
                for _ in 0..per_chain {
                    for _ in 0..thin {
                        c.sweep(p);
                    }
                    out.push((c.y.clone(), c.z));
                }
                out
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    /// Monte-Carlo estimate of E[y z], E[z], E[y].
    pub fn moments(&mut self, p: &RbmParams, thin: usize, per_chain: usize) -> MomentEstimate {
        let k = p.k();
        let mut acc = MomentAccumulator::new(p.m(), k);
        let mut z = vec![0.0; k];
        for (y, zl) in self.sample(p, thin, per_chain) {
            z.iter_mut().for_each(|x| *x = 0.0);
            z[zl] = 1.0;
            acc.push(&y, &z);
        }
        acc.finish()
    }
}

/// Convenience wrapper: fresh chains, burn-in, then `steps` thinned samples
/// per chain.
pub fn gibbs_sample(
    p: &RbmParams,
    chains: usize,
    thin: usize,
    steps: usize,
    seed: u64,
) -> Vec<(Vec<f64>, usize)> {
    let mut gc = GibbsChains::new(p, chains, seed, DEFAULT_BURN_IN);
    gc.sample(p, thin, steps)
}

/// Sufficient statistics of the data side of the M-step gradient.
#[derive(Debug, Clone)]
pub struct DataStats {
    /// Σ_i Y_ij q_i(ℓ), m×k.
    pub yq: Array2<f64>,
    /// Σ_i Y_ij.
    pub y_sum: Array1<f64>,
    /// Σ_i q_i(ℓ).
    pub q_sum: Array1<f64>,
    pub n: usize,
}

impl DataStats {
    pub fn new(net: &AttributedNetwork, q: &Array2<f64>) -> Self {
        DataStats {
            yq: net.covariates().transpose_times(q),
            y_sum: Array1::from(net.covariates().column_sums()),
            q_sum: q.sum_axis(ndarray::Axis(0)),
            n: net.n(),
        }
    }
}

/// ∇ of the expected complete-data log-likelihood with respect to θ.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub w: Array2<f64>,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

impl RbmGradient {
    /// Data statistics minus n times the model moments.
    pub fn new(stats: &DataStats, model: &Moments) -> Self {
        let n = stats.n as f64;
        RbmGradient {
            w: &stats.yq - &(&model.eyz * n),
            u: &stats.y_sum - &(&model.ey * n),
            v: &stats.q_sum - &(&model.ez * n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.u)
            .chain(&self.v)
            .all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.w
            .iter()
            .chain(&self.u)
            .chain(&self.v)
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub(crate) fn apply(
        &self,
        w: &mut Array2<f64>,
        u: &mut Array1<f64>,
        v: &mut Array1<f64>,
        rate: f64,
        freeze_v: bool,
    ) {
        w.scaled_add(rate, &self.w);
        u.scaled_add(rate, &self.u);
        if !freeze_v {
            v.scaled_add(rate, &self.v);
        }
    }
}
