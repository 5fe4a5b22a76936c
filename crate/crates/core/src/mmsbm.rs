//! Variational EM for RB-MMSBM.
//!
//! Q(Z, Ψ, B) = Π_i Dir(z_i; μ_i) · Π_{i≠j} Cat(ψ⁽ⁱ⁾_ij; φ⁺_ij) Cat(ψ⁽ʲ⁾_ij; φ⁻_ij)
//! · Π_ab Beta(B_ab; ᾱ_ab, β̄_ab).
//!
//! Every factor parameter is stored unconstrained: μ = exp(r), φ = softmax(ρ),
//! (ᾱ, β̄) = exp(s, t). The E-step takes gradient steps on all of them using
//! analytic gradients; the M-step takes gradient steps on θ with moments
//! from persistent Gibbs chains. The −n ln Ω term of the ELBO does not
//! depend on Q and is only estimated when a full ELBO is asked for.
//!
//! Memory and time are Θ(n²k) and Θ(n²k²) per iteration.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::block::{BlockPosterior, BlockPrior, ExpectedLogB};
use crate::error::{Error, Result};
use crate::generator::argmax_rows;
use crate::network::{AttributedNetwork, CovariateMode};
use crate::rbm::{initial_biases, DataStats, RbmGradient, DEFAULT_BURN_IN};
use crate::sbm::EarlyStop;
use crate::seeds::{self, Stream};
use crate::simplex_rbm::{estimate_log_omega, LogOmega, SimplexGibbsChains, SimplexRbmParams};
use crate::special::{digamma, ln_multi_beta, trigamma};
use crate::split::PairMask;

/// Largest network [`fit_mm`] accepts unless told otherwise.
pub const DEFAULT_MAX_NODES: usize = 3000;

/// Draws used for the final ln Ω estimate.
pub const DEFAULT_OMEGA_SAMPLES: usize = 100_000;

/// Update rule for the E-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EStepRule {
    /// x ← x + ε ∇.
    Gradient,
    /// Adam (β₁ = 0.9, β₂ = 0.999) with step size ε.
    Adam,
}

impl EStepRule {
    pub fn name(self) -> &'static str {
        match self {
            EStepRule::Gradient => "gradient",
            EStepRule::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(EStepRule::Gradient),
            "adam" => Ok(EStepRule::Adam),
            _ => Err(Error::InvalidArgument(format!(
                "unknown E-step rule {s:?} (expected gradient or adam)"
            ))),
        }
    }
}

/// Optimizer state carried across E-steps.
#[derive(Debug, Clone)]
pub struct EStepOptimizer {
    rule: EStepRule,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl EStepOptimizer {
    pub fn new(rule: EStepRule, lr: f64) -> Self {
        EStepOptimizer {
            rule,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        match self.rule {
            EStepRule::Gradient => {
                for (xi, g) in x.iter_mut().zip(grad) {
                    *xi += self.lr * g;
                }
            }
            EStepRule::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                if self.m.len() != x.len() {
                    self.m = vec![0.0; x.len()];
                    self.v = vec![0.0; x.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let lr = self.lr;
                x.par_iter_mut()
                    .zip(self.m.par_iter_mut())
                    .zip(self.v.par_iter_mut())
                    .zip(grad.par_iter())
                    .for_each(|(((xi, mi), vi), &g)| {
                        *mi = B1 * *mi + (1.0 - B1) * g;
                        *vi = B2 * *vi + (1.0 - B2) * g * g;
                        *xi += lr * (*mi / c1) / ((*vi / c2).sqrt() + EPS);
                    });
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmFitOptions {
    pub k: usize,
    pub tau: usize,
    /// Gradient steps per E- and per M-step.
    pub xi: usize,
    /// M-step learning rate; `None` means 1/n.
    pub lr: Option<f64>,
    pub e_rule: EStepRule,
    /// E-step step size.
    pub e_lr: f64,
    pub chains: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// `None` means [`BlockPrior::real_data`].
    pub prior: Option<BlockPrior>,
    pub update_rbm: bool,
    pub init_rbm: Option<SimplexRbmParams>,
    pub mask: Option<PairMask>,
    pub early_stop: Option<EarlyStop>,
    pub track_elbo: bool,
    /// Refuse networks with more nodes than this.
    pub max_nodes: usize,
    pub omega_samples: usize,
}

impl MmFitOptions {
    pub fn new(k: usize) -> Self {
        MmFitOptions {
            k,
            tau: 1000,
            xi: 1,
            lr: None,
            e_rule: EStepRule::Adam,
            e_lr: 0.05,
            chains: 100,
            thin: 10,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
            prior: None,
            update_rbm: true,
            init_rbm: None,
            mask: None,
            early_stop: None,
            track_elbo: true,
            max_nodes: DEFAULT_MAX_NODES,
            omega_samples: DEFAULT_OMEGA_SAMPLES,
        }
    }

    pub fn learning_rate(&self, n: usize) -> f64 {
        self.lr.unwrap_or(1.0 / n.max(1) as f64)
    }
}

/// Offsets into the flat parameter vector
/// `[r (n·k) | ρ⁺ (n·n·k) | ρ⁻ (n·n·k) | s (k·k) | t (k·k)]`.
/// Pair (i, j) sits at row-major index i·n + j; diagonal slots stay unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub k: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.n * self.k * (1 + 2 * self.n) + 2 * self.k * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mu(&self, i: usize) -> usize {
        i * self.k
    }

    pub fn phi_out(&self, i: usize, j: usize) -> usize {
        self.n * self.k + (i * self.n + j) * self.k
    }

    pub fn phi_in(&self, i: usize, j: usize) -> usize {
        self.n * self.k * (1 + self.n) + (i * self.n + j) * self.k
    }

    pub fn alpha(&self, a: usize, b: usize) -> usize {
        self.n * self.k * (1 + 2 * self.n) + a * self.k + b
    }

    pub fn beta(&self, a: usize, b: usize) -> usize {
        self.alpha(a, b) + self.k * self.k
    }

    fn pair_region(&self) -> std::ops::Range<usize> {
        self.n * self.k..self.n * self.k * (1 + 2 * self.n)
    }
}

/// Unconstrained variational parameters plus the model parameters.
#[derive(Debug, Clone)]
pub struct VariationalStateMm {
    layout: Layout,
    params: Vec<f64>,
    pub rbm: SimplexRbmParams,
    /// ELBO without its −n ln Ω term, per iteration.
    pub elbo_trace: Vec<f64>,
}

impl VariationalStateMm {
    /// μ = exp(noise in (−0.01, 0.01)), uniform interaction roles, block
    /// factors at the prior.
    pub fn initial(n: usize, prior: &BlockPrior, rbm: SimplexRbmParams, seed: u64) -> Self {
        let k = prior.k();
        let layout = Layout { n, k };
        let mut params = vec![0.0; layout.len()];
        let mut rng = seeds::substream(seed, Stream::Init, 1);
        for x in &mut params[..n * k] {
            *x = rng.random_range(-0.01..0.01);
        }
        for a in 0..k {
            for b in 0..k {
                params[layout.alpha(a, b)] = prior.alpha[[a, b]].ln();
                params[layout.beta(a, b)] = prior.beta[[a, b]].ln();
            }
        }
        VariationalStateMm {
            layout,
            params,
            rbm,
            elbo_trace: Vec::new(),
        }
    }

    /// Builds a state from an explicit parameter vector.
    pub fn from_params(layout: Layout, params: Vec<f64>, rbm: SimplexRbmParams) -> Result<Self> {
        if params.len() != layout.len() || rbm.k() != layout.k {
            return Err(Error::InvalidArgument(
                "parameter vector does not match the layout".into(),
            ));
        }
        Ok(VariationalStateMm {
            layout,
            params,
            rbm,
            elbo_trace: Vec::new(),
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Dirichlet parameters μ (n×k).
    pub fn mu(&self) -> Array2<f64> {
        let (n, k) = (self.n(), self.k());
        Array2::from_shape_fn((n, k), |(i, l)| self.params[i * k + l].exp())
    }

    /// E_q[z_i] = μ_i / Σμ_i.
    pub fn memberships(&self) -> Array2<f64> {
        let mut mu = self.mu();
        for mut row in mu.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        mu
    }

    /// argmax of E_q[z_i], ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(&self.memberships())
    }

    /// Sender-role distribution φ⁺_ij.
    pub fn phi_out(&self, i: usize, j: usize) -> Vec<f64> {
        softmax(&self.params[self.layout.phi_out(i, j)..][..self.k()])
    }

    /// Receiver-role distribution φ⁻_ij.
    pub fn phi_in(&self, i: usize, j: usize) -> Vec<f64> {
        softmax(&self.params[self.layout.phi_in(i, j)..][..self.k()])
    }

    pub fn block_posterior(&self) -> BlockPosterior {
        let (l, k) = (self.layout, self.k());
        BlockPosterior {
            alpha_bar: Array2::from_shape_fn((k, k), |(a, b)| self.params[l.alpha(a, b)].exp()),
            beta_bar: Array2::from_shape_fn((k, k), |(a, b)| self.params[l.beta(a, b)].exp()),
        }
    }
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    crate::special::softmax_in_place(&mut out);
    out
}

/// Writes softmax(raw) into `p` and ln softmax(raw) into `lnp`.
fn softmax_with_log(raw: &[f64], p: &mut [f64], lnp: &mut [f64]) {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (pa, &r) in p.iter_mut().zip(raw) {
        *pa = (r - max).exp();
        sum += *pa;
    }
    let lse = max + sum.ln();
    for ((pa, la), &r) in p.iter_mut().zip(lnp.iter_mut()).zip(raw) {
        *pa /= sum;
        *la = r - lse;
    }
}

/// H[Dir(μ)] = ln B(μ) + (μ₀ − k)ψ(μ₀) − Σ(μ_ℓ − 1)ψ(μ_ℓ).
pub fn dirichlet_entropy(mu: &[f64]) -> f64 {
    let mu0: f64 = mu.iter().sum();
    let k = mu.len() as f64;
    ln_multi_beta(mu) + (mu0 - k) * digamma(mu0)
        - mu.iter().map(|&x| (x - 1.0) * digamma(x)).sum::<f64>()
}

/// The ELBO split into its terms. `total()` excludes −n ln Ω.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboTerms {
    /// E[ln P(B)].
    pub block_prior: f64,
    /// E[ln P(Y, Z)] + n ln Ω.
    pub rbm: f64,
    /// E[ln P(Ψ | Z)].
    pub roles: f64,
    /// E[ln P(A | Ψ, B)] over unmasked pairs.
    pub edges: f64,
    /// H[q(Ψ)].
    pub role_entropy: f64,
    /// Σ_i H[q(z_i)].
    pub membership_entropy: f64,
    /// Σ_ab H[q(B_ab)].
    pub block_entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.block_prior
            + self.rbm
            + self.roles
            + self.edges
            + self.role_entropy
            + self.membership_entropy
            + self.block_entropy
    }
}

struct Ctx<'a> {
    layout: Layout,
    params: &'a [f64],
    net: &'a AttributedNetwork,
    mask: Option<&'a PairMask>,
    eln_z: Array2<f64>,
    el: ExpectedLogB,
}

#[derive(Default)]
struct RowSums {
    s_out: Vec<f64>,
    edge_mass: Vec<f64>,
    non_edge_mass: Vec<f64>,
    roles: f64,
    edges: f64,
    entropy: f64,
}

impl<'a> Ctx<'a> {
    /// Everything contributed by the pairs (i, ·). Writes ∂/∂ρ⁺_i· and
    /// ∂/∂ρ⁻_i· when buffers are given.
    fn row(&self, i: usize, mut grads: Option<(&mut [f64], &mut [f64])>) -> RowSums {
        let Layout { n, k } = self.layout;
        let mut out = RowSums {
            s_out: vec![0.0; k],
            edge_mass: vec![0.0; k * k],
            non_edge_mass: vec![0.0; k * k],
            ..Default::default()
        };
        let (mut po, mut lpo, mut pi, mut lpi) =
            (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let (mut l_pi, mut lt_po, mut g) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let succ = self.net.out_neighbors(i);
        let masked = self.mask.map_or(&[][..], |m| m.masked_out(i));
        let (mut es, mut ms) = (0, 0);
        let eln_i = self.eln_z.row(i);
        for j in (0..n).filter(|&j| j != i) {
            while es < succ.len() && succ[es] < j {
                es += 1;
            }
            while ms < masked.len() && masked[ms] < j {
                ms += 1;
            }
            let is_edge = es < succ.len() && succ[es] == j;
            let is_masked = ms < masked.len() && masked[ms] == j;
            softmax_with_log(
                &self.params[self.layout.phi_out(i, j)..][..k],
                &mut po,
                &mut lpo,
            );
            softmax_with_log(
                &self.params[self.layout.phi_in(i, j)..][..k],
                &mut pi,
                &mut lpi,
            );
            let eln_j = self.eln_z.row(j);
            for a in 0..k {
                out.s_out[a] += po[a];
                out.roles += po[a] * eln_i[a] + pi[a] * eln_j[a];
                out.entropy -= po[a] * lpo[a] + pi[a] * lpi[a];
            }
            l_pi.iter_mut().for_each(|x| *x = 0.0);
            lt_po.iter_mut().for_each(|x| *x = 0.0);
            if !is_masked {
                let (table, mass) = if is_edge {
                    (&self.el.ln_b, &mut out.edge_mass)
                } else {
                    (&self.el.ln_1mb, &mut out.non_edge_mass)
                };
                for a in 0..k {
                    for b in 0..k {
                        let lab = table[[a, b]];
                        l_pi[a] += lab * pi[b];
                        lt_po[b] += lab * po[a];
                        mass[a * k + b] += po[a] * pi[b];
                    }
                }
                out.edges += po.iter().zip(&l_pi).map(|(p, l)| p * l).sum::<f64>();
            }
            if let Some((gout, gin)) = grads.as_mut() {
                // ∂/∂ρ_a = φ_a (g_a − Σ_b φ_b g_b) with g = ∂ELBO/∂φ.
                for a in 0..k {
                    g[a] = eln_i[a] + l_pi[a] - lpo[a];
                }
                let mean: f64 = po.iter().zip(&g).map(|(p, x)| p * x).sum();
                for a in 0..k {
                    gout[j * k + a] = po[a] * (g[a] - mean);
                }
                for b in 0..k {
                    g[b] = eln_j[b] + lt_po[b] - lpi[b];
                }
                let mean: f64 = pi.iter().zip(&g).map(|(p, x)| p * x).sum();
                for b in 0..k {
                    gin[j * k + b] = pi[b] * (g[b] - mean);
                }
            }
        }
        out
    }

    /// Σ_{i≠j} φ⁻_ij, the receiver-role mass of node j.
    fn s_in(&self, j: usize) -> Vec<f64> {
        let Layout { n, k } = self.layout;
        let mut s = vec![0.0; k];
        for i in (0..n).filter(|&i| i != j) {
            for (sa, p) in s
                .iter_mut()
                .zip(softmax(&self.params[self.layout.phi_in(i, j)..][..k]))
            {
                *sa += p;
            }
        }
        s
    }
}

/// ELBO terms and, if `with_grad`, the gradient with respect to every
/// unconstrained variational parameter (same layout as the state).
pub fn elbo_and_gradient(
    state: &VariationalStateMm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
    with_grad: bool,
) -> Result<(ElboTerms, Option<Vec<f64>>)> {
    let layout = state.layout;
    let Layout { n, k } = layout;
    if net.n() != n || prior.k() != k || state.rbm.m() != net.m() {
        return Err(Error::InvalidArgument(
            "state does not match the network".into(),
        ));
    }
    let mu = state.mu();
    let mu0: Vec<f64> = mu.rows().into_iter().map(|r| r.sum()).collect();
    if mu.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Numerical("Dirichlet parameters left (0, ∞)".into()));
    }
    let eln_z = Array2::from_shape_fn((n, k), |(i, l)| digamma(mu[[i, l]]) - digamma(mu0[i]));
    let post = state.block_posterior();
    let el = post.expected_log()?;
    let ctx = Ctx {
        layout,
        params: &state.params,
        net,
        mask,
        eln_z,
        el,
    };

    let mut grad = with_grad.then(|| vec![0.0; layout.len()]);
    let rows: Vec<RowSums> = match grad.as_mut() {
        Some(gr) => {
            let region = layout.pair_region();
            let (gout, gin) = gr[region].split_at_mut(n * n * k);
            gout.par_chunks_mut(n * k)
                .zip(gin.par_chunks_mut(n * k))
                .enumerate()
                .map(|(i, (go, gi))| ctx.row(i, Some((go, gi))))
                .collect()
        }
        None => (0..n).into_par_iter().map(|i| ctx.row(i, None)).collect(),
    };
    let s_in: Vec<Vec<f64>> = if with_grad {
        (0..n).into_par_iter().map(|j| ctx.s_in(j)).collect()
    } else {
        Vec::new()
    };

    let mut terms = ElboTerms::default();
    let mut edge_mass = Array2::<f64>::zeros((k, k));
    let mut non_edge_mass = Array2::<f64>::zeros((k, k));
    for r in &rows {
        terms.roles += r.roles;
        terms.edges += r.edges;
        terms.role_entropy += r.entropy;
        for a in 0..k {
            for b in 0..k {
                edge_mass[[a, b]] += r.edge_mass[a * k + b];
                non_edge_mass[[a, b]] += r.non_edge_mass[a * k + b];
            }
        }
    }
    terms.block_prior = post.expected_log_prior(prior, &ctx.el);
    terms.block_entropy = post.entropy();

    // c_iℓ = Σ_j Y_ij W_jℓ + v_ℓ; the RBM term is Σ_i c_i·E[z_i] + uᵀ Σ_i Y_i.
    let mut c = net.covariates().times(&state.rbm.w);
    c += &state.rbm.v;
    let y_sum = Array1::from(net.covariates().column_sums());
    terms.rbm = y_sum.dot(&state.rbm.u);
    for i in 0..n {
        let row = mu.row(i);
        terms.rbm += c.row(i).iter().zip(row).map(|(c, m)| c * m).sum::<f64>() / mu0[i];
        terms.membership_entropy += dirichlet_entropy(row.as_slice().expect("standard layout"));
    }

    if let Some(g) = grad.as_mut() {
        let kf = k as f64;
        for i in 0..n {
            let m0 = mu0[i];
            let tg0 = trigamma(m0);
            let cbar: f64 = (0..k).map(|l| c[[i, l]] * mu[[i, l]]).sum::<f64>() / m0;
            let s: Vec<f64> = (0..k).map(|l| rows[i].s_out[l] + s_in[i][l]).collect();
            let s_tot: f64 = s.iter().sum();
            for l in 0..k {
                let m = mu[[i, l]];
                let d = (c[[i, l]] - cbar) / m0 + (s[l] + 1.0 - m) * trigamma(m)
                    - (s_tot + kf - m0) * tg0;
                g[layout.mu(i) + l] = m * d;
            }
        }
        for a in 0..k {
            for b in 0..k {
                let (ab, bb) = (post.alpha_bar[[a, b]], post.beta_bar[[a, b]]);
                let target_a = prior.alpha[[a, b]] + edge_mass[[a, b]];
                let target_b = prior.beta[[a, b]] + non_edge_mass[[a, b]];
                let shared = (target_a + target_b - ab - bb) * trigamma(ab + bb);
                g[layout.alpha(a, b)] = ab * ((target_a - ab) * trigamma(ab) - shared);
                g[layout.beta(a, b)] = bb * ((target_b - bb) * trigamma(bb) - shared);
            }
        }
    }
    Ok((terms, grad))
}

/// ELBO without the −n ln Ω term (the part that varies with Q).
pub fn elbo_q(
    state: &VariationalStateMm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
) -> Result<f64> {
    Ok(elbo_and_gradient(state, net, prior, mask, false)?.0.total())
}

/// Full ELBO given an estimate of ln Ω.
pub fn elbo_mm(
    state: &VariationalStateMm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
    log_omega: f64,
) -> Result<f64> {
    Ok(elbo_q(state, net, prior, mask)? - net.n() as f64 * log_omega)
}

/// ξ ascent steps on the variational parameters with θ fixed.
pub fn e_step(
    state: &mut VariationalStateMm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
    xi: usize,
    optimizer: &mut EStepOptimizer,
) -> Result<()> {
    for _ in 0..xi {
        let (_, grad) = elbo_and_gradient(state, net, prior, mask, true)?;
        let grad = grad.expect("gradient requested");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("E-step gradient is not finite".into()));
        }
        optimizer.step(&mut state.params, &grad);
        if state.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("variational parameters diverged".into()));
        }
    }
    Ok(())
}

/// ξ gradient-ascent steps on θ with q_i(ℓ) = μ_iℓ/Σμ_i and Monte-Carlo
/// moments: `thin` sweeps of every chain, then one draw per chain.
pub fn m_step_mm(
    state: &VariationalStateMm,
    net: &AttributedNetwork,
    xi: usize,
    lr: f64,
    chains: &mut SimplexGibbsChains,
    thin: usize,
) -> Result<SimplexRbmParams> {
    let stats = DataStats::new(net, &state.memberships());
    let mut rbm = state.rbm.clone();
    for _ in 0..xi {
        let moments = chains.moments(&rbm, thin.max(1), 1).mean;
        let grad = RbmGradient::new(&stats, &moments);
        if !grad.is_finite() {
            return Err(Error::Numerical("RBM gradient is not finite".into()));
        }
        grad.apply(&mut rbm.w, &mut rbm.u, &mut rbm.v, lr, false);
        if !rbm.is_finite() {
            return Err(Error::Numerical("RBM parameters diverged".into()));
        }
    }
    Ok(rbm)
}

/// Starting θ for the simplex RBM: W uniform in (−0.01, 0.01), u matched
/// to the covariate marginals, v = 0.
pub fn initial_simplex_rbm(net: &AttributedNetwork, k: usize, seed: u64) -> SimplexRbmParams {
    let mut rng = seeds::stream(seed, Stream::Init);
    SimplexRbmParams {
        w: Array2::from_shape_fn((net.m(), k), |_| rng.random_range(-0.01..0.01)),
        u: initial_biases(net),
        v: Array1::zeros(k),
    }
}

#[derive(Debug, Clone)]
pub struct MmFitReport {
    /// ELBO without −n ln Ω after each iteration.
    pub elbo_q_trace: Vec<f64>,
    pub iteration_seconds: Vec<f64>,
    /// E_q[z_i], n×k.
    pub memberships: Array2<f64>,
    pub labels: Vec<usize>,
    pub block_mean: Array2<f64>,
    pub iterations: usize,
    pub stopped_early: bool,
    pub elbo_q: f64,
    pub log_omega: LogOmega,
    /// elbo_q − n ln Ω, with standard error n·SE(ln Ω).
    pub elbo: f64,
    pub elbo_std_err: f64,
}

/// Validates options against the network; returns the M-step rate and
/// the block prior.
fn check_fit(net: &AttributedNetwork, options: &MmFitOptions) -> Result<(f64, BlockPrior)> {
    let (n, k) = (net.n(), options.k);
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 2..={n} for the mixed-membership model, got {k}"
        )));
    }
    if n > options.max_nodes {
        let entries = 2 * n * n * k;
        return Err(Error::MemoryCap(format!(
            "{n} nodes need {entries} interaction parameters (≈{} MiB with optimizer state); \
             the limit is {} nodes",
            entries * 8 * 3 / (1 << 20),
            options.max_nodes
        )));
    }
    if net.mode() != CovariateMode::Binary {
        return Err(Error::ModeMismatch {
            expected: "binary",
            found: net.mode().name(),
        });
    }
    if options.tau == 0 || options.xi == 0 {
        return Err(Error::InvalidArgument(
            "tau and xi must be at least 1".into(),
        ));
    }
    let lr = options.learning_rate(n);
    if !(lr >= 0.0 && lr.is_finite() && options.e_lr >= 0.0 && options.e_lr.is_finite()) {
        return Err(Error::InvalidArgument(
            "learning rates must be finite and ≥ 0".into(),
        ));
    }
    let prior = options
        .prior
        .clone()
        .unwrap_or_else(|| BlockPrior::real_data(k));
    if prior.k() != k {
        return Err(Error::InvalidArgument(format!(
            "prior is {}×{0} but k = {k}",
            prior.k()
        )));
    }
    Ok((lr, prior))
}

pub fn fit_mm(
    net: &AttributedNetwork,
    options: &MmFitOptions,
) -> Result<(VariationalStateMm, MmFitReport)> {
    fit_mm_with(net, options, |_, _| {})
}

/// [`fit_mm`] with a callback after each iteration, given the iteration
/// index and the state.
pub fn fit_mm_with(
    net: &AttributedNetwork,
    options: &MmFitOptions,
    observer: impl FnMut(usize, &VariationalStateMm),
) -> Result<(VariationalStateMm, MmFitReport)> {
    let (_, prior) = check_fit(net, options)?;
    let rbm = match &options.init_rbm {
        Some(p) if p.m() == net.m() && p.k() == options.k => p.clone(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "initial RBM parameters do not match the network".into(),
            ));
        }
        None => initial_simplex_rbm(net, options.k, options.seed),
    };
    let state = VariationalStateMm::initial(net.n(), &prior, rbm, options.seed);
    fit_mm_from(net, options, state, observer)
}

/// Continues fitting from a given state (warm start). `options.init_rbm`
/// is ignored; the state's RBM parameters are used.
pub fn fit_mm_from(
    net: &AttributedNetwork,
    options: &MmFitOptions,
    mut state: VariationalStateMm,
    mut observer: impl FnMut(usize, &VariationalStateMm),
) -> Result<(VariationalStateMm, MmFitReport)> {
    let (n, k) = (net.n(), options.k);
    if state.n() != n || state.k() != k || state.rbm.m() != net.m() {
        return Err(Error::InvalidArgument(
            "state does not match the network".into(),
        ));
    }
    let (lr, prior) = check_fit(net, options)?;
    let mask = options.mask.as_ref();
    let mut optimizer = EStepOptimizer::new(options.e_rule, options.e_lr);
    let mut chains = options.update_rbm.then(|| {
        SimplexGibbsChains::new(
            &state.rbm,
            options.chains.max(1),
            options.seed,
            options.burn_in,
        )
    });
    let mut seconds = Vec::with_capacity(options.tau);
    let mut stopped_early = false;
    let mut iterations = 0;

    for t in 0..options.tau {
        let start = Instant::now();
        e_step(&mut state, net, &prior, mask, options.xi, &mut optimizer)
            .map_err(|e| Error::Numerical(format!("E-step at iteration {t}: {e}")))?;
        if let Some(chains) = chains.as_mut() {
            state.rbm = m_step_mm(&state, net, options.xi, lr, chains, options.thin)
                .map_err(|e| Error::Numerical(format!("M-step at iteration {t}: {e}")))?;
        }
        seconds.push(start.elapsed().as_secs_f64());
        iterations = t + 1;
        if options.track_elbo {
            let v = elbo_q(&state, net, &prior, mask)?;
            state.elbo_trace.push(v);
        }
        observer(t, &state);
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

    let final_q = elbo_q(&state, net, &prior, mask)?;
    if !options.track_elbo {
        state.elbo_trace.push(final_q);
    }
    let log_omega = estimate_log_omega(&state.rbm, options.omega_samples.max(1), options.seed);
    let nf = n as f64;
    let report = MmFitReport {
        elbo_q_trace: state.elbo_trace.clone(),
        iteration_seconds: seconds,
        memberships: state.memberships(),
        labels: state.labels(),
        block_mean: state.block_posterior().mean(),
        iterations,
        stopped_early,
        elbo_q: final_q,
        log_omega,
        elbo: final_q - nf * log_omega.value,
        elbo_std_err: nf * log_omega.std_err,
    };
    if !report.elbo.is_finite() {
        return Err(Error::Numerical("final ELBO is not finite".into()));
    }
    Ok((state, report))
}

/// One row of the k-selection table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSelectionRow {
    pub k: usize,
    pub elbo_q: f64,
    pub log_omega: f64,
    pub log_omega_std_err: f64,
    pub elbo: f64,
    pub elbo_std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    /// argmax of the full ELBO (with −n ln Ω).
    pub chosen: usize,
    /// argmax of the ELBO without −n ln Ω.
    pub chosen_without_omega: usize,
    pub rows: Vec<KSelectionRow>,
}

/// Fits every k in `ks` and picks the one with the largest final ELBO.
/// `prior_for(k)` supplies the block prior for each k.
pub fn select_k(
    net: &AttributedNetwork,
    ks: &[usize],
    options: &MmFitOptions,
    prior_for: impl Fn(usize) -> BlockPrior,
) -> Result<KSelection> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no candidate k given".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut opts = options.clone();
        opts.k = k;
        opts.prior = Some(prior_for(k));
        let (_, report) = fit_mm(net, &opts)?;
        log::info!(
            "k = {k}: ELBO {:.3} ± {:.3}",
            report.elbo,
            report.elbo_std_err
        );
        rows.push(KSelectionRow {
            k,
            elbo_q: report.elbo_q,
            log_omega: report.log_omega.value,
            log_omega_std_err: report.log_omega.std_err,
            elbo: report.elbo,
            elbo_std_err: report.elbo_std_err,
        });
    }
    let argmax = |f: fn(&KSelectionRow) -> f64| {
        rows.iter()
            .fold(None::<&KSelectionRow>, |best, r| match best {
                Some(b) if f(b) >= f(r) => Some(b),
                _ => Some(r),
            })
            .expect("nonempty")
            .k
    };
    Ok(KSelection {
        chosen: argmax(|r| r.elbo),
        chosen_without_omega: argmax(|r| r.elbo_q),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Covariates;
    use ndarray::array;
    use rand::SeedableRng;

    fn tiny_net() -> AttributedNetwork {
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let covs = Covariates::from_dense(&y, CovariateMode::Binary).unwrap();
        AttributedNetwork::new(4, [(0, 1), (1, 0), (2, 3), (1, 2)], covs).unwrap()
    }

    fn random_state(n: usize, k: usize, m: usize, seed: u64) -> VariationalStateMm {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout { n, k };
        let params = (0..layout.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let rbm = SimplexRbmParams::new(
            Array2::from_shape_fn((m, k), |_| rng.random_range(-2.0..2.0)),
            Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0)),
            Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        VariationalStateMm::from_params(layout, params, rbm).unwrap()
    }

    #[test]
    fn symmetric_dirichlet_entropy() {
        // Dir(1,…,1) is uniform on the simplex: entropy −ln((k−1)!).
        assert!((dirichlet_entropy(&[1.0, 1.0]) - 0.0).abs() < 1e-12);
        assert!((dirichlet_entropy(&[1.0; 4]) + 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = tiny_net();
        let prior = BlockPrior::assortative(2, 1.0, 2.0, 5.0);
        let mask = PairMask::new(4, [(3, 0)]).unwrap();
        let mut state = random_state(4, 2, 2, 7);
        let (_, grad) = elbo_and_gradient(&state, &net, &prior, Some(&mask), true).unwrap();
        let grad = grad.unwrap();
        let h = 1e-5;
        for idx in 0..state.params.len() {
            let x0 = state.params[idx];
            state.params[idx] = x0 + h;
            let up = elbo_q(&state, &net, &prior, Some(&mask)).unwrap();
            state.params[idx] = x0 - h;
            let down = elbo_q(&state, &net, &prior, Some(&mask)).unwrap();
            state.params[idx] = x0;
            let fd = (up - down) / (2.0 * h);
            let tol = 1e-5 * fd.abs().max(1.0);
            assert!(
                (fd - grad[idx]).abs() < tol,
                "param {idx}: fd {fd} vs {}",
                grad[idx]
            );
        }
    }

    #[test]
    fn role_logit_shift_leaves_elbo_unchanged() {
        let net = tiny_net();
        let prior = BlockPrior::real_data(2);
        let mut state = random_state(4, 2, 2, 3);
        let before = elbo_q(&state, &net, &prior, None).unwrap();
        let at = state.layout.phi_out(1, 2);
        state.params[at] += 3.0;
        state.params[at + 1] += 3.0;
        let after = elbo_q(&state, &net, &prior, None).unwrap();
        assert!((before - after).abs() < 1e-10);
    }

    #[test]
    fn small_steps_increase_the_elbo() {
        let net = tiny_net();
        let prior = BlockPrior::real_data(2);
        let mut state = random_state(4, 2, 2, 11);
        let mut opt = EStepOptimizer::new(EStepRule::Gradient, 1e-3);
        let mut last = elbo_q(&state, &net, &prior, None).unwrap();
        for _ in 0..50 {
            e_step(&mut state, &net, &prior, None, 1, &mut opt).unwrap();
            let now = elbo_q(&state, &net, &prior, None).unwrap();
            assert!(now >= last - 1e-8, "{now} < {last}");
            last = now;
        }
    }

    #[test]
    fn null_m_step_changes_nothing() {
        let net = tiny_net();
        let state = random_state(4, 2, 2, 5);
        let mut chains = SimplexGibbsChains::new(&state.rbm, 4, 1, 2);
        let rbm = m_step_mm(&state, &net, 1, 0.0, &mut chains, 1).unwrap();
        assert_eq!(rbm, state.rbm);
    }

    #[test]
    fn memory_cap_is_enforced() {
        let net = tiny_net();
        let mut opts = MmFitOptions::new(2);
        opts.max_nodes = 3;
        assert!(matches!(fit_mm(&net, &opts), Err(Error::MemoryCap(_))));
    }

    #[test]
    fn singleton_k_range() {
        let net = tiny_net();
        let mut opts = MmFitOptions::new(2);
        opts.tau = 3;
        opts.chains = 4;
        opts.omega_samples = 1000;
        let sel = select_k(&net, &[2], &opts, BlockPrior::real_data).unwrap();
        assert_eq!(sel.chosen, 2);
        assert_eq!(sel.rows.len(), 1);
    }
}
