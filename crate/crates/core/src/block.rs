//! Beta prior and posterior over the k×k block matrix B.

use ndarray::Array2;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::special::{digamma, ln_beta};

/// Independent Beta(α_ab, β_ab) priors on every entry of B.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPrior {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

impl BlockPrior {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>) -> Result<Self> {
        if alpha.dim() != beta.dim() || alpha.nrows() != alpha.ncols() {
            return Err(Error::InvalidArgument(format!(
                "prior shapes {:?} and {:?} are not matching square matrices",
                alpha.dim(),
                beta.dim()
            )));
        }
        if !alpha.iter().chain(&beta).all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument(
                "Beta prior parameters must be positive and finite".into(),
            ));
        }
        Ok(BlockPrior { alpha, beta })
    }

    /// α everywhere, β_diag on the diagonal and β_off elsewhere.
    pub fn assortative(k: usize, alpha: f64, beta_diag: f64, beta_off: f64) -> Self {
        BlockPrior {
            alpha: Array2::from_elem((k, k), alpha),
            beta: Array2::from_shape_fn((k, k), |(a, b)| if a == b { beta_diag } else { beta_off }),
        }
    }

    /// Prior used for real networks: α = 1, β = 1 within and 10 between
    /// communities, which nudges inference towards assortative structure.
    pub fn real_data(k: usize) -> Self {
        Self::assortative(k, 1.0, 1.0, 10.0)
    }

    /// Prior of the synthetic benchmarks: α = 1, β = √n within and 10√n
    /// between communities (within-block edges are ~10× as likely).
    pub fn synthetic(k: usize, n: usize) -> Self {
        let s = (n as f64).sqrt();
        Self::assortative(k, 1.0, s, 10.0 * s)
    }

    pub fn k(&self) -> usize {
        self.alpha.nrows()
    }

    /// Prior mean α/(α+β).
    pub fn mean(&self) -> Array2<f64> {
        &self.alpha / &(&self.alpha + &self.beta)
    }
}

/// Variational Beta(ᾱ_ab, β̄_ab) factors over B.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPosterior {
    pub alpha_bar: Array2<f64>,
    pub beta_bar: Array2<f64>,
}

impl BlockPosterior {
    /// Starts at the prior.
    pub fn from_prior(prior: &BlockPrior) -> Self {
        BlockPosterior {
            alpha_bar: prior.alpha.clone(),
            beta_bar: prior.beta.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.alpha_bar.nrows()
    }

    /// B̂ = ᾱ/(ᾱ+β̄).
    pub fn mean(&self) -> Array2<f64> {
        &self.alpha_bar / &(&self.alpha_bar + &self.beta_bar)
    }

    /// E[ln B] and E[ln(1 − B)] entrywise.
    pub fn expected_log(&self) -> Result<ExpectedLogB> {
        expected_log_b(self)
    }

    /// Σ_ab H[Beta(ᾱ_ab, β̄_ab)].
    pub fn entropy(&self) -> f64 {
        self.alpha_bar
            .iter()
            .zip(&self.beta_bar)
            .map(|(&a, &b)| beta_entropy(a, b))
            .sum()
    }

    /// Σ_ab E_q[ln Beta(B_ab; α_ab, β_ab)] under this posterior.
    pub fn expected_log_prior(&self, prior: &BlockPrior, el: &ExpectedLogB) -> f64 {
        let mut total = 0.0;
        for ((a, b), &alpha) in prior.alpha.indexed_iter() {
            let beta = prior.beta[[a, b]];
            total += (alpha - 1.0) * el.ln_b[[a, b]] + (beta - 1.0) * el.ln_1mb[[a, b]]
                - ln_beta(alpha, beta);
        }
        total
    }
}

/// Digamma tables E[ln B_ab] = ψ(ᾱ) − ψ(ᾱ+β̄), E[ln(1−B_ab)] = ψ(β̄) − ψ(ᾱ+β̄).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLogB {
    pub ln_b: Array2<f64>,
    pub ln_1mb: Array2<f64>,
}

pub fn expected_log_b(post: &BlockPosterior) -> Result<ExpectedLogB> {
    let k = post.k();
    let mut ln_b = Array2::zeros((k, k));
    let mut ln_1mb = Array2::zeros((k, k));
    for ((a, b), &ab) in post.alpha_bar.indexed_iter() {
        let bb = post.beta_bar[[a, b]];
        if !(ab > 0.0 && bb > 0.0 && ab.is_finite() && bb.is_finite()) {
            return Err(Error::Numerical(format!(
                "Beta parameters ({ab}, {bb}) at block ({a}, {b}) must be positive and finite"
            )));
        }
        let s = digamma(ab + bb);
        ln_b[[a, b]] = digamma(ab) - s;
        ln_1mb[[a, b]] = digamma(bb) - s;
    }
    Ok(ExpectedLogB { ln_b, ln_1mb })
}

/// Differential entropy of Beta(a, b).
pub fn beta_entropy(a: f64, b: f64) -> f64 {
    ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b)
}

/// Draws B with B_ab ~ Beta(α_ab, β_ab) independently.
pub fn sample_block(prior: &BlockPrior, seed: u64) -> Array2<f64> {
    let mut rng = seeds::substream(seed, Stream::Generate, 0);
    Array2::from_shape_fn(prior.alpha.dim(), |(a, b)| {
        Beta::new(prior.alpha[[a, b]], prior.beta[[a, b]])
            .expect("prior parameters were validated as positive")
            .sample(&mut rng)
    })
}

/// z_iᵀ B z_j.
pub fn edge_prob(b: &Array2<f64>, zi: &[f64], zj: &[f64]) -> f64 {
    let mut p = 0.0;
    for (x, &za) in zi.iter().enumerate() {
        if za == 0.0 {
            continue;
        }
        for (y, &zb) in zj.iter().enumerate() {
            p += za * b[[x, y]] * zb;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(a: f64, b: f64) -> BlockPosterior {
        BlockPosterior {
            alpha_bar: Array2::from_elem((1, 1), a),
            beta_bar: Array2::from_elem((1, 1), b),
        }
    }

    #[test]
    fn expected_log_known_values() {
        let e = expected_log_b(&post(1.0, 1.0)).unwrap();
        assert!((e.ln_b[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((e.ln_1mb[[0, 0]] + 1.0).abs() < 1e-12);
        let e = expected_log_b(&post(2.0, 1.0)).unwrap();
        assert!((e.ln_b[[0, 0]] + 0.5).abs() < 1e-12);
        assert!(expected_log_b(&post(0.0, 1.0)).is_err());
    }

    #[test]
    fn expected_log_swaps_under_symmetry() {
        let a = expected_log_b(&post(3.5, 0.7)).unwrap();
        let b = expected_log_b(&post(0.7, 3.5)).unwrap();
        assert!((a.ln_b[[0, 0]] - b.ln_1mb[[0, 0]]).abs() < 1e-14);
        assert!((a.ln_1mb[[0, 0]] - b.ln_b[[0, 0]]).abs() < 1e-14);
    }

    #[test]
    fn expected_log_matches_quadrature() {
        // Substitute x = t^p so the log singularity at 0 is integrable by a
        // plain midpoint rule; integrate the other endpoint by symmetry.
        for &(a, b) in &[(0.5, 0.5), (2.0, 7.0), (13.0, 4.5), (50.0, 0.9)] {
            let exact = expected_log_b(&post(a, b)).unwrap().ln_b[[0, 0]];
            let quad = beta_expect_ln(a, b);
            assert!((exact - quad).abs() < 1e-8, "({a}, {b}): {exact} vs {quad}");
        }
    }

    /// ∫ ln x · Beta(x; a, b) dx by tanh-sinh quadrature.
    fn beta_expect_ln(a: f64, b: f64) -> f64 {
        let lb = ln_beta(a, b);
        let h = 1.0 / 256.0;
        let mut total = 0.0;
        let half_pi = std::f64::consts::FRAC_PI_2;
        for i in -(8 * 256)..=(8 * 256) {
            let t = i as f64 * h;
            let s = half_pi * t.sinh();
            // x = (1 + tanh s)/2, 1 − x = (1 − tanh s)/2, both computed
            // without cancellation.
            let e = (-2.0 * s.abs()).exp();
            let small = e / (1.0 + e);
            let (x, y) = if s >= 0.0 {
                (1.0 - small, small)
            } else {
                (small, 1.0 - small)
            };
            if x <= 0.0 || y <= 0.0 {
                continue;
            }
            let dxdt = half_pi * t.cosh() * x * y * 2.0;
            let density = ((a - 1.0) * x.ln() + (b - 1.0) * y.ln() - lb).exp();
            total += x.ln() * density * dxdt * h;
        }
        total
    }

    #[test]
    fn beta_entropy_uniform_is_zero() {
        assert!(beta_entropy(1.0, 1.0).abs() < 1e-14);
        assert!(beta_entropy(50.0, 50.0) < 0.0);
    }

    #[test]
    fn sampled_block_is_deterministic_and_uniform_for_beta_one() {
        let prior = BlockPrior::assortative(100, 1.0, 1.0, 1.0);
        let a = sample_block(&prior, 3);
        assert_eq!(a, sample_block(&prior, 3));
        // Kolmogorov–Smirnov statistic against Uniform(0, 1).
        let mut xs: Vec<f64> = a.iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn sampled_block_tiny_mean() {
        let prior = BlockPrior::assortative(10, 1.0, 1e6, 1e6);
        let b = sample_block(&prior, 0);
        assert!(b.iter().all(|&x| x < 1e-4));
    }

    #[test]
    fn synthetic_prior_ratio() {
        let p = BlockPrior::synthetic(2, 100);
        assert_eq!(p.beta[[0, 0]], 10.0);
        assert_eq!(p.beta[[0, 1]], 100.0);
        let m = p.mean();
        assert!((m[[0, 0]] / m[[0, 1]] - 101.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn edge_prob_cases() {
        let b = ndarray::array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(edge_prob(&b, &[0.0, 1.0], &[1.0, 0.0]), 0.3);
        let c = Array2::from_elem((2, 2), 0.7);
        assert!((edge_prob(&c, &[0.3, 0.7], &[0.9, 0.1]) - 0.7).abs() < 1e-15);
        assert!((edge_prob(&b, &[0.5, 0.5], &[0.5, 0.5]) - 0.25).abs() < 1e-15);
    }
}
