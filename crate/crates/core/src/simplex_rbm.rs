//! The RBM of the mixed-membership model: binary covariates y coupled to a
//! membership vector z on the probability simplex Δ_k.
//!
//! The joint density is P(y, z) = exp(yᵀ W z + yᵀ u + zᵀ v) / Ω, with z
//! integrated against Lebesgue measure on the first k − 1 coordinates. Ω has
//! no closed form, so moments come from Gibbs sampling and ln Ω from a
//! Monte-Carlo estimate.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rbm::{MomentAccumulator, MomentEstimate, DEFAULT_BURN_IN};
use crate::seeds::{self, Stream};
use crate::special::{ln_gamma, log_sum_exp, sigmoid, softplus, truncated_exp_inverse_cdf};

const SIMPLEX_TOL: f64 = 1e-9;

/// θ = {W, u, v} for the simplex RBM. Covariates are binary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRbmParams {
    pub w: Array2<f64>,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

impl SimplexRbmParams {
    pub fn new(w: Array2<f64>, u: Array1<f64>, v: Array1<f64>) -> Result<Self> {
        if w.nrows() != u.len() || w.ncols() != v.len() {
            return Err(Error::InvalidArgument(format!(
                "W is {}×{} but u has {} and v has {} entries",
                w.nrows(),
                w.ncols(),
                u.len(),
                v.len()
            )));
        }
        if v.len() < 2 {
            return Err(Error::InvalidArgument(
                "the simplex RBM needs at least two communities".into(),
            ));
        }
        if !w.iter().chain(&u).chain(&v).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(
                "RBM parameters must be finite".into(),
            ));
        }
        Ok(SimplexRbmParams { w, u, v })
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        SimplexRbmParams {
            w: Array2::zeros((m, k)),
            u: Array1::zeros(m),
            v: Array1::zeros(k),
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

    /// (W z + u)_j for every covariate.
    fn activations(&self, z: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|j| {
                self.u[j]
                    + z.iter()
                        .enumerate()
                        .map(|(l, &zl)| self.w[[j, l]] * zl)
                        .sum::<f64>()
            })
            .collect()
    }

    /// P(y_j = 1 | z) = σ(Σ_ℓ W_jℓ z_ℓ + u_j).
    pub fn cond_y_given_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_simplex(z, self.k())?;
        Ok(self.activations(z).into_iter().map(sigmoid).collect())
    }

    /// Rate of the pair conditional for (z_ℓ, z_k):
    /// β_ℓ = v_ℓ − v_k + Σ_j (W_jℓ − W_jk) y_j.
    pub fn pair_rate(&self, y: &[f64], l: usize) -> f64 {
        let last = self.k() - 1;
        let mut beta = self.v[l] - self.v[last];
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0.0 {
                beta += yj * (self.w[[j, l]] - self.w[[j, last]]);
            }
        }
        beta
    }

    /// One sweep of pair updates ℓ = 1..k−1 (ascending), each redrawing z_ℓ
    /// on [0, z_ℓ + z_k] and giving the remainder to z_k.
    pub(crate) fn sweep_z<R: Rng>(&self, y: &[f64], z: &mut [f64], rng: &mut R) {
        let last = self.k() - 1;
        for l in 0..last {
            let len = (z[l] + z[last]).max(0.0);
            let beta = self.pair_rate(y, l);
            let u: f64 = rng.random();
            let zl = truncated_exp_inverse_cdf(beta, len, u);
            z[l] = zl;
            z[last] = (len - zl).max(0.0);
        }
        let total: f64 = z.iter().sum();
        if (total - 1.0).abs() > 1e-14 {
            z.iter_mut().for_each(|x| *x /= total);
        }
    }

    fn draw_y<R: Rng>(&self, z: &[f64], y: &mut [f64], rng: &mut R) {
        for (yj, a) in y.iter_mut().zip(self.activations(z)) {
            let u: f64 = rng.random();
            *yj = f64::from(u8::from(u < sigmoid(a)));
        }
    }
}

fn check_simplex(z: &[f64], k: usize) -> Result<()> {
    let sum: f64 = z.iter().sum();
    if z.len() != k || z.iter().any(|&x| x < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!(
            "membership vector of length {} with sum {sum} is not on the {k}-simplex",
            z.len()
        )));
    }
    Ok(())
}

/// Runs `sweeps` pair-update sweeps of z | y from the barycenter.
pub fn sample_z_given_y(p: &SimplexRbmParams, y: &[f64], sweeps: usize, seed: u64) -> Vec<f64> {
    let k = p.k();
    let mut z = vec![1.0 / k as f64; k];
    let mut rng = seeds::stream(seed, Stream::Gibbs);
    for _ in 0..sweeps {
        p.sweep_z(y, &mut z, &mut rng);
    }
    z
}

/// Uniform draw from Δ_k (Dirichlet(1, …, 1)).
pub(crate) fn uniform_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut z: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = z.iter().sum();
    z.iter_mut().for_each(|x| *x /= total);
    z
}

struct Chain {
    y: Vec<f64>,
    z: Vec<f64>,
    rng: seeds::Rng,
}

impl Chain {
    fn sweep(&mut self, p: &SimplexRbmParams) {
        p.sweep_z(&self.y, &mut self.z, &mut self.rng);
        p.draw_y(&self.z, &mut self.y, &mut self.rng);
    }
}

/// Persistent Gibbs chains over (y, z) with z on the simplex.
pub struct SimplexGibbsChains {
    chains: Vec<Chain>,
}

impl SimplexGibbsChains {
    pub fn new(p: &SimplexRbmParams, chains: usize, seed: u64, burn_in: usize) -> Self {
        assert!(chains >= 1, "at least one Gibbs chain is required");
        let chains = (0..chains)
            .map(|c| {
                let mut rng = seeds::substream(seed, Stream::Gibbs, c as u32);
                let y = (0..p.m())
                    .map(|_| f64::from(u8::from(rng.random::<bool>())))
                    .collect();
                let z = uniform_simplex(p.k(), &mut rng);
                Chain { y, z, rng }
            })
            .collect();
        let mut out = SimplexGibbsChains { chains };
        out.advance(p, burn_in);
        out
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn advance(&mut self, p: &SimplexRbmParams, sweeps: usize) {
        self.chains.par_iter_mut().for_each(|c| {
            for _ in 0..sweeps {
                c.sweep(p);
            }
        });
    }

    /// `per_chain` draws from every chain, every `thin`-th sweep, chain-major.
    pub fn sample(
        &mut self,
        p: &SimplexRbmParams,
        thin: usize,
        per_chain: usize,
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        assert!(thin >= 1, "thinning interval must be at least 1");
        self.chains
            .par_iter_mut()
            .map(|c| {
                let mut out = Vec::with_capacity(per_chain);
                for _ in 0..per_chain {
                    for _ in 0..thin {
                        c.sweep(p);
                    }
                    out.push((c.y.clone(), c.z.clone()));
                }
                out
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn moments(
        &mut self,
        p: &SimplexRbmParams,
        thin: usize,
        per_chain: usize,
    ) -> MomentEstimate {
        let mut acc = MomentAccumulator::new(p.m(), p.k());
        for (y, z) in self.sample(p, thin, per_chain) {
            acc.push(&y, &z);
        }
        acc.finish()
    }
}

/// Monte-Carlo E[y z], E[z], E[y] from fresh chains: default burn-in, then
/// one draw per chain after `thin` more sweeps.
pub fn gibbs_moments(
    p: &SimplexRbmParams,
    chains: usize,
    thin: usize,
    seed: u64,
) -> MomentEstimate {
    let mut gc = SimplexGibbsChains::new(p, chains, seed, DEFAULT_BURN_IN);
    gc.moments(p, thin, 1)
}

/// Estimate of ln Ω with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogOmega {
    pub value: f64,
    pub std_err: f64,
}

/// Estimates ln Ω by importance sampling with a uniform proposal on Δ_k.
///
/// The sum over y ∈ {0,1}^m is done in closed form,
/// Σ_y exp(yᵀ(Wz + u)) = Π_j (1 + e^{(Wz+u)_j}),
/// so only z is sampled: Ω = vol(Δ_k) · E_{z∼U(Δ_k)}[exp(vᵀz + Σ_j softplus((Wz+u)_j))]
/// with vol(Δ_k) = 1/(k−1)!. Exact whenever the integrand is constant in z.
pub fn estimate_log_omega(p: &SimplexRbmParams, samples: usize, seed: u64) -> LogOmega {
    assert!(samples >= 1, "at least one sample is required");
    let k = p.k();
    let chunk = 1024;
    let chunks = samples.div_ceil(chunk);
    let logs: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seeds::substream(seed, Stream::Omega, c as u32);
            let count = chunk.min(samples - c * chunk);
            (0..count)
                .map(|_| {
                    let z = uniform_simplex(k, &mut rng);
                    let vz: f64 = z.iter().zip(&p.v).map(|(a, b)| a * b).sum();
                    vz + p.activations(&z).into_iter().map(softplus).sum::<f64>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let s = logs.len() as f64;
    let lse = log_sum_exp(&logs);
    let log_mean = lse - s.ln();
    // Relative spread of the weights w = exp(log − log_mean).
    let rel_var = logs
        .iter()
        .map(|&x| (x - log_mean).exp_m1().powi(2))
        .sum::<f64>()
        / (s - 1.0).max(1.0);
    LogOmega {
        value: log_mean - ln_gamma(k as f64),
        std_err: (rel_var / s).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::truncated_exp_mean;
    use ndarray::array;
    use rand::SeedableRng;

    fn random_params(m: usize, k: usize, seed: u64) -> SimplexRbmParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SimplexRbmParams {
            w: Array2::from_shape_fn((m, k), |_| rng.random_range(-2.0..2.0)),
            u: Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0)),
            v: Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn cond_y_cases() {
        let mut p = SimplexRbmParams::zeros(1, 2);
        p.u[0] = 0.7;
        let got = p.cond_y_given_z(&[0.3, 0.7]).unwrap();
        assert!((got[0] - sigmoid(0.7)).abs() < 1e-15);

        let mut q = SimplexRbmParams::zeros(1, 2);
        q.w = array![[2.0, -2.0]];
        assert!((q.cond_y_given_z(&[0.5, 0.5]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!((q.cond_y_given_z(&[1.0, 0.0]).unwrap()[0] - sigmoid(2.0)).abs() < 1e-15);
        assert!(q.cond_y_given_z(&[0.6, 0.6]).is_err());
        assert!(q.cond_y_given_z(&[1.0]).is_err());
    }

    #[test]
    fn z_stays_on_simplex_for_extreme_rates() {
        let mut p = SimplexRbmParams::zeros(1, 4);
        p.v = array![500.0, -500.0, 250.0, 0.0];
        p.w = array![[-500.0, 500.0, 0.0, 100.0]];
        for y in [[0.0], [1.0]] {
            for seed in 0..20 {
                let z = sample_z_given_y(&p, &y, 5, seed);
                assert!(z.iter().all(|&x| x >= 0.0));
                assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_conditional_integrates_to_one() {
        for &(beta, len) in &[(3.0f64, 1.0f64), (-7.0, 0.4), (1e-8, 0.6), (40.0, 0.25)] {
            // density β e^{βz}/(e^{β len} − 1) on [0, len], via its CDF
            // F(z) = (e^{βz} − 1)/(e^{β len} − 1); check the quadrature of
            // the density against F(len) = 1.
            let steps = 200_000;
            let h = len / steps as f64;
            let mut total = 0.0;
            for s in 0..steps {
                let z = (s as f64 + 0.5) * h;
                let d = if beta.abs() < 1e-6 {
                    1.0 / len
                } else {
                    beta * (beta * (z - len)).exp() / -(-beta * len).exp_m1()
                };
                total += d * h;
            }
            assert!((total - 1.0).abs() < 1e-9, "β = {beta}: {total}");
        }
    }

    #[test]
    fn symmetric_long_run_mean() {
        let p = SimplexRbmParams::zeros(3, 2);
        let mut gc = SimplexGibbsChains::new(&p, 100, 1, 20);
        let draws = gc.sample(&p, 1, 1000);
        let mean = draws.iter().map(|(_, z)| z[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn fixed_rate_stationary_mean() {
        // W = 0, v = (3, 0) ⇒ β₁ = 3 regardless of y.
        let p = SimplexRbmParams::new(array![[0.0, 0.0]], array![0.0], array![3.0, 0.0]).unwrap();
        let steps = 100_000;
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..steps {
            let z = (s as f64 + 0.5) / steps as f64;
            num += z * (3.0 * z).exp();
            den += (3.0 * z).exp();
        }
        let quad = num / den;
        assert!((quad - truncated_exp_mean(3.0)).abs() < 1e-9);
        assert!((quad - 0.71907).abs() < 1e-4);
        let mut gc = SimplexGibbsChains::new(&p, 200, 4, 10);
        let draws = gc.sample(&p, 1, 500);
        let mean = draws.iter().map(|(_, z)| z[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean - quad).abs() < 0.01, "{mean} vs {quad}");
    }

    #[test]
    fn zero_params_moments() {
        let p = SimplexRbmParams::zeros(2, 3);
        let est = gibbs_moments(&p, 20_000, 1, 2);
        for l in 0..3 {
            assert!((est.mean.ez[l] - 1.0 / 3.0).abs() < 0.01);
        }
        let mut q = SimplexRbmParams::zeros(2, 3);
        q.u = array![1.2, -0.4];
        let est = gibbs_moments(&q, 20_000, 1, 3);
        for j in 0..2 {
            let dev = (est.mean.ey[j] - sigmoid(q.u[j])).abs();
            assert!(dev < 3.0 * est.std_err.ey[j] + 1e-12, "j = {j}: {dev}");
        }
    }

    /// Exact moments for k = 2 by quadrature over z₁ and enumeration of y.
    fn quadrature_moments(p: &SimplexRbmParams) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let m = p.m();
        let steps = 20_000;
        let h = 1.0 / steps as f64;
        let mut eyz = Array2::zeros((m, 2));
        let mut ez = Array1::zeros(2);
        let mut ey = Array1::zeros(m);
        let mut total = 0.0;
        for s in 0..steps {
            let z1 = (s as f64 + 0.5) * h;
            let z = [z1, 1.0 - z1];
            for bits in 0..(1u32 << m) {
                let y: Vec<f64> = (0..m).map(|j| f64::from((bits >> j) & 1)).collect();
                let mut e = p.v[0] * z[0] + p.v[1] * z[1];
                for j in 0..m {
                    e += y[j] * (p.u[j] + p.w[[j, 0]] * z[0] + p.w[[j, 1]] * z[1]);
                }
                let d = e.exp() * h;
                total += d;
                for l in 0..2 {
                    ez[l] += z[l] * d;
                    for j in 0..m {
                        eyz[[j, l]] += y[j] * z[l] * d;
                    }
                }
                for j in 0..m {
                    ey[j] += y[j] * d;
                }
            }
        }
        (eyz / total, ez / total, ey / total)
    }

    #[test]
    fn moments_match_quadrature() {
        let p = random_params(2, 2, 8);
        let (eyz, ez, ey) = quadrature_moments(&p);
        let est = gibbs_moments(&p, 40_000, 2, 9);
        for l in 0..2 {
            assert!((est.mean.ez[l] - ez[l]).abs() < 3.0 * est.std_err.ez[l] + 1e-9);
            for j in 0..2 {
                let dev = (est.mean.eyz[[j, l]] - eyz[[j, l]]).abs();
                assert!(
                    dev < 3.0 * est.std_err.eyz[[j, l]] + 1e-9,
                    "({j}, {l}): {dev}"
                );
            }
        }
        for j in 0..2 {
            assert!((est.mean.ey[j] - ey[j]).abs() < 3.0 * est.std_err.ey[j] + 1e-9);
        }
    }

    #[test]
    fn log_omega_zero_params_is_exact() {
        let p = SimplexRbmParams::zeros(5, 4);
        let est = estimate_log_omega(&p, 10, 0);
        let expected = 5.0 * 2f64.ln() - 6f64.ln();
        assert!((est.value - expected).abs() < 1e-12);
        assert!(est.std_err < 1e-12);
    }

    #[test]
    fn log_omega_matches_quadrature() {
        let p = random_params(1, 2, 5);
        let steps = 200_000;
        let h = 1.0 / steps as f64;
        let mut omega = 0.0;
        for s in 0..steps {
            let z = (s as f64 + 0.5) * h;
            for y in [0.0, 1.0] {
                let e = p.v[0] * z
                    + p.v[1] * (1.0 - z)
                    + y * (p.u[0] + p.w[[0, 0]] * z + p.w[[0, 1]] * (1.0 - z));
                omega += e.exp() * h;
            }
        }
        let est = estimate_log_omega(&p, 50_000, 3);
        assert!(
            (est.value - omega.ln()).abs() < 3.0 * est.std_err,
            "{} ± {} vs {}",
            est.value,
            est.std_err,
            omega.ln()
        );
    }

    #[test]
    fn log_omega_shift_in_v() {
        let p = random_params(3, 3, 6);
        let mut q = p.clone();
        q.v += 2.5;
        let a = estimate_log_omega(&p, 2000, 1);
        let b = estimate_log_omega(&q, 2000, 1);
        assert!((b.value - a.value - 2.5).abs() < 1e-10);
    }
}
