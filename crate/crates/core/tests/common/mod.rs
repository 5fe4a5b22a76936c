//! Brute-force reference implementations used as test oracles. They follow
//! the definitions directly (enumeration, O(n²) pair loops) and share no
//! code with the library beyond data containers.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbsbm::block::BlockPrior;
use rbsbm::mmsbm::{Layout, VariationalStateMm};
use rbsbm::network::{AttributedNetwork, CovariateMode, Covariates};
use rbsbm::rbm::{Moments, RbmParams};
use rbsbm::simplex_rbm::SimplexRbmParams;
use rbsbm::split::PairMask;
use statrs::function::gamma::{digamma, ln_gamma};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rbm(m: usize, k: usize, rng: &mut ChaCha8Rng) -> RbmParams {
    RbmParams::new(
        Array2::from_shape_fn((m, k), |_| rng.random_range(-2.0..2.0)),
        Array1::from_shape_fn(m, |_| rng.random_range(-1.5..1.5)),
        Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0)),
        CovariateMode::Binary,
    )
    .unwrap()
}

/// All 2^m binary vectors.
pub fn all_binary(m: usize) -> Vec<Vec<f64>> {
    (0..1usize << m)
        .map(|bits| (0..m).map(|j| ((bits >> j) & 1) as f64).collect())
        .collect()
}

fn energy(p: &RbmParams, y: &[f64], l: usize) -> f64 {
    let mut e = p.v[l];
    for (j, &x) in y.iter().enumerate() {
        e += x * (p.w[[j, l]] + p.u[j]);
    }
    e
}

/// ln Σ_y Σ_ℓ exp(yᵀW e_ℓ + uᵀy + v_ℓ), binary y.
pub fn brute_log_partition(p: &RbmParams) -> f64 {
    let terms: Vec<f64> = all_binary(p.m())
        .iter()
        .flat_map(|y| (0..p.k()).map(move |l| energy(p, y, l)))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn brute_moments(p: &RbmParams) -> Moments {
    let (m, k) = (p.m(), p.k());
    let ln_z = brute_log_partition(p);
    let mut eyz = Array2::zeros((m, k));
    let mut ez = Array1::zeros(k);
    let mut ey = Array1::zeros(m);
    for y in all_binary(m) {
        for l in 0..k {
            let pr = (energy(p, &y, l) - ln_z).exp();
            ez[l] += pr;
            for j in 0..m {
                ey[j] += pr * y[j];
                eyz[[j, l]] += pr * y[j];
            }
        }
    }
    Moments { eyz, ez, ey }
}

/// Σ_i E_q[ln P(y_i, z_i | θ)] with ln Ψ by enumeration.
pub fn brute_expected_log_joint(q: &Array2<f64>, y: &Array2<f64>, p: &RbmParams) -> f64 {
    let ln_z = brute_log_partition(p);
    let mut total = 0.0;
    for i in 0..q.nrows() {
        for l in 0..p.k() {
            total += q[[i, l]] * energy(p, y.row(i).as_slice().unwrap(), l);
        }
        total -= ln_z;
    }
    total
}

/// Random directed binary network with the given edge density.
pub fn random_network(n: usize, m: usize, density: f64, rng: &mut ChaCha8Rng) -> AttributedNetwork {
    let y = Array2::from_shape_fn((n, m), |_| f64::from(u8::from(rng.random::<f64>() < 0.4)));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                edges.push((i, j));
            }
        }
    }
    AttributedNetwork::new(
        n,
        edges,
        Covariates::from_dense(&y, CovariateMode::Binary).unwrap(),
    )
    .unwrap()
}

/// Random rows on the simplex.
pub fn random_q(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::from_shape_fn((n, k), |_| rng.random_range(0.01..1.0));
    for mut row in q.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    q
}

pub fn random_prior(k: usize, rng: &mut ChaCha8Rng) -> BlockPrior {
    BlockPrior::new(
        Array2::from_shape_fn((k, k), |_| rng.random_range(0.5..3.0)),
        Array2::from_shape_fn((k, k), |_| rng.random_range(0.5..10.0)),
    )
    .unwrap()
}

/// About `count` random ordered pairs i ≠ j (duplicates collapse).
pub fn random_mask(n: usize, count: usize, rng: &mut ChaCha8Rng) -> PairMask {
    let mut pairs = Vec::new();
    while pairs.len() < count {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            pairs.push((i, j));
        }
    }
    PairMask::new(n, pairs).unwrap()
}

fn masked(mask: Option<&PairMask>, i: usize, j: usize) -> bool {
    mask.is_some_and(|m| m.contains(i, j))
}

/// (ᾱ, β̄) by looping over every ordered pair.
pub fn brute_block_posterior(
    q: &Array2<f64>,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
) -> (Array2<f64>, Array2<f64>) {
    let (n, k) = q.dim();
    let mut a = prior.alpha.clone();
    let mut b = prior.beta.clone();
    for i in 0..n {
        for j in 0..n {
            if i == j || masked(mask, i, j) {
                continue;
            }
            let target = if net.has_edge(i, j) { &mut a } else { &mut b };
            for x in 0..k {
                for y in 0..k {
                    target[[x, y]] += q[[i, x]] * q[[j, y]];
                }
            }
        }
    }
    (a, b)
}

/// E[ln B] and E[ln(1 − B)] under Beta(ᾱ, β̄).
pub fn brute_expected_logs(a: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let ln_b = Array2::from_shape_fn(a.dim(), |ix| digamma(a[ix]) - digamma(a[ix] + b[ix]));
    let ln_1mb = Array2::from_shape_fn(a.dim(), |ix| digamma(b[ix]) - digamma(a[ix] + b[ix]));
    (ln_b, ln_1mb)
}

/// Optimal q_i given everything else, by summing over all other nodes.
/// `covariate_term[ℓ]` is the RBM contribution v_ℓ + Σ_j y_ij W_jℓ.
pub fn brute_node_row(
    q: &Array2<f64>,
    net: &AttributedNetwork,
    alpha_bar: &Array2<f64>,
    beta_bar: &Array2<f64>,
    covariate_term: &[f64],
    mask: Option<&PairMask>,
    i: usize,
) -> Vec<f64> {
    let (n, k) = q.dim();
    let (ln_b, ln_1mb) = brute_expected_logs(alpha_bar, beta_bar);
    let mut phi = covariate_term.to_vec();
    for j in 0..n {
        if j == i {
            continue;
        }
        for l in 0..k {
            for b in 0..k {
                if !masked(mask, i, j) {
                    let t = if net.has_edge(i, j) {
                        ln_b[[l, b]]
                    } else {
                        ln_1mb[[l, b]]
                    };
                    phi[l] += q[[j, b]] * t;
                }
                if !masked(mask, j, i) {
                    let t = if net.has_edge(j, i) {
                        ln_b[[b, l]]
                    } else {
                        ln_1mb[[b, l]]
                    };
                    phi[l] += q[[j, b]] * t;
                }
            }
        }
    }
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = phi.iter().map(|p| (p - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// v_ℓ + Σ_j y_ij W_jℓ for node i.
pub fn covariate_term(
    net: &AttributedNetwork,
    w: &Array2<f64>,
    v: &Array1<f64>,
    i: usize,
) -> Vec<f64> {
    let y = net.covariates().to_dense();
    (0..v.len())
        .map(|l| v[l] + (0..w.nrows()).map(|j| y[[i, j]] * w[[j, l]]).sum::<f64>())
        .collect()
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Mixed-membership ELBO without −n ln Ω, term by term:
/// [block prior, rbm, roles, edges, role entropy, Dirichlet entropy, Beta entropy].
/// Entropies are written as −E[ln q] rather than in closed form.
pub fn brute_mm_terms(
    state: &VariationalStateMm,
    net: &AttributedNetwork,
    prior: &BlockPrior,
    mask: Option<&PairMask>,
) -> [f64; 7] {
    let (n, k) = (state.n(), state.k());
    let mu = state.mu();
    let post = state.block_posterior();
    let (a, b) = (&post.alpha_bar, &post.beta_bar);
    let (ln_b, ln_1mb) = brute_expected_logs(a, b);
    let eln_z = |i: usize, l: usize| digamma(mu[[i, l]]) - digamma(mu.row(i).sum());
    let y = net.covariates().to_dense();
    let rbm = &state.rbm;

    let mut t = [0.0; 7];
    for x in 0..k {
        for z in 0..k {
            let (al, be) = (prior.alpha[[x, z]], prior.beta[[x, z]]);
            t[0] += (al - 1.0) * ln_b[[x, z]] + (be - 1.0) * ln_1mb[[x, z]] - ln_beta_fn(al, be);
            let (ab, bb) = (a[[x, z]], b[[x, z]]);
            t[6] -= (ab - 1.0) * ln_b[[x, z]] + (bb - 1.0) * ln_1mb[[x, z]] - ln_beta_fn(ab, bb);
        }
    }
    for i in 0..n {
        let mu0 = mu.row(i).sum();
        for l in 0..k {
            let mut c = rbm.v[l];
            for j in 0..rbm.m() {
                c += y[[i, j]] * rbm.w[[j, l]];
            }
            t[1] += c * mu[[i, l]] / mu0;
        }
        for j in 0..rbm.m() {
            t[1] += rbm.u[j] * y[[i, j]];
        }
        let mut ln_density = ln_gamma(mu0);
        for l in 0..k {
            ln_density += -ln_gamma(mu[[i, l]]) + (mu[[i, l]] - 1.0) * eln_z(i, l);
        }
        t[5] -= ln_density;
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let po = state.phi_out(i, j);
            let pi = state.phi_in(i, j);
            for x in 0..k {
                t[2] += po[x] * eln_z(i, x) + pi[x] * eln_z(j, x);
                t[4] -= po[x] * po[x].ln() + pi[x] * pi[x].ln();
                if !masked(mask, i, j) {
                    for z in 0..k {
                        let l = if net.has_edge(i, j) {
                            ln_b[[x, z]]
                        } else {
                            ln_1mb[[x, z]]
                        };
                        t[3] += po[x] * pi[z] * l;
                    }
                }
            }
        }
    }
    t
}

/// h(x) with the 2^{λ−1} prefactor, then renormalization.
pub fn anneal_row(row: &mut [f64], lambda: f64) {
    if lambda >= 1.0 {
        return;
    }
    let c = 2f64.powf(lambda - 1.0);
    for x in row.iter_mut() {
        *x = if *x <= 0.5 {
            c * x.powf(lambda)
        } else {
            1.0 - c * (1.0 - *x).powf(lambda)
        };
    }
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
}

pub fn random_mm_state(n: usize, m: usize, k: usize, r: &mut ChaCha8Rng) -> VariationalStateMm {
    let layout = Layout { n, k };
    let params = (0..layout.len())
        .map(|_| r.random_range(-1.5..1.5))
        .collect();
    let rbm = SimplexRbmParams::new(
        Array2::from_shape_fn((m, k), |_| r.random_range(-2.0..2.0)),
        Array1::from_shape_fn(m, |_| r.random_range(-1.0..1.0)),
        Array1::from_shape_fn(k, |_| r.random_range(-1.0..1.0)),
    )
    .unwrap();
    VariationalStateMm::from_params(layout, params, rbm).unwrap()
}

/// Covariate-free variational SBM with a fixed community prior π = softmax(v):
/// the same batch schedule and annealing as the library, computed with the
/// O(n²) reference updates.
pub fn reference_vsbm(
    net: &AttributedNetwork,
    prior: &BlockPrior,
    v: &Array1<f64>,
    opts: &rbsbm::sbm::FitOptions,
) -> (Array2<f64>, Array2<f64>) {
    let (n, k) = (net.n(), opts.k);
    let mut q = Array2::from_elem((n, k), 1.0 / k as f64);
    let mut batch_rng = rbsbm::seeds::stream(opts.seed, rbsbm::seeds::Stream::Batch);
    let zero_w = Array2::zeros((net.m(), k));
    for t in 0..opts.tau {
        let nodes = rand::seq::index::sample(&mut batch_rng, n, opts.batch_size(n)).into_vec();
        let (a, b) = brute_block_posterior(&q, net, prior, None);
        for i in nodes {
            let mut row = brute_node_row(
                &q,
                net,
                &a,
                &b,
                &covariate_term(net, &zero_w, v, i),
                None,
                i,
            );
            anneal_row(&mut row, opts.lambda_at(t));
            q.row_mut(i).assign(&Array1::from(row));
        }
    }
    brute_block_posterior(&q, net, prior, None)
}
