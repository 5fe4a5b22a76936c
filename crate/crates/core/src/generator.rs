//! Sampling attributed networks from both generative models.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::block::{sample_block, BlockPrior};
use crate::error::{Error, Result};
use crate::network::{AttributedNetwork, CovariateMode, Covariates};
use crate::rbm::{draw_categorical, GibbsChains, RbmParams};
use crate::seeds::{self, Stream};
use crate::simplex_rbm::{SimplexGibbsChains, SimplexRbmParams};

/// Default number of sweeps of each node's Gibbs chain.
pub const DEFAULT_SWEEPS: usize = 100;

/// How each node's (y_i, z_i) is drawn from the RBM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipSampler {
    /// Exact draw from the stationary distribution (pure kind only): z from
    /// its closed-form marginal, then y | z.
    Exact,
    /// An independent Gibbs chain per node, started from uniformly random
    /// covariates and run for `sweeps` sweeps.
    ///
    /// With strong weights (|W| = 5) the one-hot chains essentially never
    /// leave their first community, so the community sizes follow the first
    /// draw z | y₀ rather than the stationary marginal, which is far more
    /// balanced.
    Gibbs { sweeps: usize },
}

impl MembershipSampler {
    pub fn name(self) -> String {
        match self {
            MembershipSampler::Exact => "exact".into(),
            MembershipSampler::Gibbs { sweeps } => format!("gibbs:{sweeps}"),
        }
    }

    /// "exact" or "gibbs" / "gibbs:SWEEPS".
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "exact" => Ok(MembershipSampler::Exact),
            None if s == "gibbs" => Ok(MembershipSampler::Gibbs {
                sweeps: DEFAULT_SWEEPS,
            }),
            Some(("gibbs", n)) => n
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .map(|sweeps| MembershipSampler::Gibbs { sweeps })
                .ok_or_else(|| Error::InvalidArgument(format!("bad sweep count in {s:?}"))),
            _ => Err(Error::InvalidArgument(format!(
                "unknown membership sampler {s:?} (expected exact or gibbs[:SWEEPS])"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// One community per node (RB-SBM).
    Pure,
    /// Memberships on the simplex (RB-MMSBM).
    Mixed,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Pure => "pure",
            SynthKind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pure" => Ok(SynthKind::Pure),
            "mixed" => Ok(SynthKind::Mixed),
            _ => Err(Error::InvalidArgument(format!(
                "unknown network kind {s:?} (expected pure or mixed)"
            ))),
        }
    }
}

/// Everything needed to sample a synthetic network.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub prior: BlockPrior,
    pub w: Array2<f64>,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_zero: f64,
    pub w_mag: f64,
    pub sampler: MembershipSampler,
}

/// The benchmark configuration: α = 1, β = √n within and 10√n between
/// communities; every covariate takes an assortative (+5), disassortative
/// (−5) or neutral (0) role in each community with probabilities 0.1, 0.1,
/// 0.8; u ≡ −2, v ≡ 0. The pure kind defaults to m = 100 and k = ⌊log₂ n⌋.
///
/// Node memberships are drawn with per-node Gibbs chains
/// ([`MembershipSampler::Gibbs`]); set `sampler` to change that.
///
/// `seed` drives only the role assignment.
pub fn synth_config(
    n: usize,
    kind: SynthKind,
    m: Option<usize>,
    k: Option<usize>,
    seed: u64,
) -> Result<SynthConfig> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 nodes, got {n}"
        )));
    }
    let m = m.unwrap_or(100);
    let k = k.unwrap_or(n.ilog2() as usize);
    if m == 0 || k == 0 || (kind == SynthKind::Mixed && k < 2) {
        return Err(Error::InvalidArgument(format!(
            "invalid dimensions m = {m}, k = {k} for a {} network",
            kind.name()
        )));
    }
    let (p_plus, p_minus, p_zero, w_mag) = (0.1, 0.1, 0.8, 5.0);
    let mut rng = seeds::substream(seed, Stream::Generate, 1);
    // Roles are drawn community by community, covariate by covariate.
    let mut w = Array2::zeros((m, k));
    for l in 0..k {
        for j in 0..m {
            let r: f64 = rng.random();
            w[[j, l]] = if r < p_plus {
                w_mag
            } else if r < p_plus + p_minus {
                -w_mag
            } else {
                0.0
            };
        }
    }
    Ok(SynthConfig {
        kind,
        n,
        m,
        k,
        prior: BlockPrior::synthetic(k, n),
        w,
        u: Array1::from_elem(m, -2.0),
        v: Array1::zeros(k),
        p_plus,
        p_minus,
        p_zero,
        w_mag,
        sampler: MembershipSampler::Gibbs {
            sweeps: DEFAULT_SWEEPS,
        },
    })
}

/// The latent variables a synthetic network was sampled with.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: SynthKind,
    pub b: Array2<f64>,
    /// n×k memberships (one-hot rows for the pure kind).
    pub z: Array2<f64>,
    pub w: Array2<f64>,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    /// Mixed kind only: the community each node of an ordered pair (i, j)
    /// acted in, as (sender role, receiver role) at index i·n + j. Diagonal
    /// entries are unused.
    pub roles: Option<Vec<(u16, u16)>>,
}

impl GroundTruth {
    /// argmax_ℓ z_iℓ, ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(&self.z)
    }
}

pub(crate) fn argmax_rows(z: &Array2<f64>) -> Vec<usize> {
    z.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (l, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Samples (y_i, z_i) i.i.d. from the one-hot RBM, B from the prior and
/// A_ij ~ Bernoulli(B[z_i, z_j]) for every ordered pair i ≠ j.
pub fn generate_rbsbm(cfg: &SynthConfig, seed: u64) -> Result<(AttributedNetwork, GroundTruth)> {
    if cfg.kind != SynthKind::Pure {
        return Err(Error::InvalidArgument(
            "generate_rbsbm needs a pure configuration".into(),
        ));
    }
    let b = sample_block(&cfg.prior, seed);
    generate_rbsbm_with_block(cfg, b, seed)
}

/// As [`generate_rbsbm`] but with a fixed block matrix.
pub fn generate_rbsbm_with_block(
    cfg: &SynthConfig,
    b: Array2<f64>,
    seed: u64,
) -> Result<(AttributedNetwork, GroundTruth)> {
    let (n, m, k) = (cfg.n, cfg.m, cfg.k);
    check_block(&b, k)?;
    let rbm = RbmParams::new(
        cfg.w.clone(),
        cfg.u.clone(),
        cfg.v.clone(),
        CovariateMode::Binary,
    )?;

    let (labels, active) = match cfg.sampler {
        MembershipSampler::Exact => {
            let mut rng = seeds::substream(seed, Stream::Generate, 2);
            let pz = rbm.community_marginal();
            let mut labels = Vec::with_capacity(n);
            let mut active = Vec::with_capacity(n);
            for _ in 0..n {
                let l = draw_categorical(&pz, &mut rng);
                let probs = rbm.cond_y_given_z(l);
                let row: Vec<usize> = (0..m).filter(|&j| rng.random::<f64>() < probs[j]).collect();
                labels.push(l);
                active.push(row);
            }
            (labels, active)
        }
        MembershipSampler::Gibbs { sweeps } => {
            let mut chains = GibbsChains::new(&rbm, n, seed, 0);
            chains
                .sample(&rbm, sweeps.max(1), 1)
                .into_iter()
                .map(|(y, z)| (z, (0..m).filter(|&j| y[j] != 0.0).collect::<Vec<_>>()))
                .unzip()
        }
    };

    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let blocks: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |c| (a, c))).collect();
    let mut edges: Vec<(usize, usize)> = blocks
        .par_iter()
        .flat_map_iter(|&(a, c)| {
            let mut rng = seeds::substream(seed, Stream::Generate, (16 + a * k + c) as u32);
            sample_block_edges(&members[a], &members[c], b[[a, c]], &mut rng)
        })
        .collect();
    edges.sort_unstable();

    let mut z = Array2::zeros((n, k));
    for (i, &l) in labels.iter().enumerate() {
        z[[i, l]] = 1.0;
    }
    let net = AttributedNetwork::new(n, edges, Covariates::from_active_sets(m, &active)?)?
        .with_labels(labels)?;
    let truth = GroundTruth {
        kind: SynthKind::Pure,
        b,
        z,
        w: cfg.w.clone(),
        u: cfg.u.clone(),
        v: cfg.v.clone(),
        roles: None,
    };
    Ok((net, truth))
}

fn check_block(b: &Array2<f64>, k: usize) -> Result<()> {
    if b.dim() != (k, k) || b.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidArgument(format!(
            "block matrix must be {k}×{k} with entries in [0, 1]"
        )));
    }
    Ok(())
}

/// Bernoulli(p) edges over the ordered pairs rows × cols (minus i = j),
/// visiting only the successes by geometric skipping.
fn sample_block_edges<R: Rng>(
    rows: &[usize],
    cols: &[usize],
    p: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let total = rows.len() * cols.len();
    let mut out = Vec::new();
    if p <= 0.0 || total == 0 {
        return out;
    }
    let log_q = (-p).ln_1p();
    let mut idx: usize = 0;
    loop {
        if p < 1.0 {
            let u: f64 = rng.random();
            // Number of failures before the next success.
            let skip = ((1.0 - u).ln() / log_q).floor();
            if skip >= (total - idx) as f64 {
                break;
            }
            idx += skip as usize;
        }
        if idx >= total {
            break;
        }
        let (i, j) = (rows[idx / cols.len()], cols[idx % cols.len()]);
        if i != j {
            out.push((i, j));
        }
        idx += 1;
    }
    out
}

/// Samples (y_i, z_i) from the simplex RBM by per-node Gibbs chains, B from the
/// prior, and for every ordered pair i ≠ j roles ψ_i ~ z_i, ψ_j ~ z_j and
/// A_ij ~ Bernoulli(B[ψ_i, ψ_j]). Cost is O(n²).
pub fn generate_rbmmsbm(cfg: &SynthConfig, seed: u64) -> Result<(AttributedNetwork, GroundTruth)> {
    if cfg.kind != SynthKind::Mixed {
        return Err(Error::InvalidArgument(
            "generate_rbmmsbm needs a mixed configuration".into(),
        ));
    }
    let MembershipSampler::Gibbs { sweeps } = cfg.sampler else {
        return Err(Error::InvalidArgument(
            "mixed memberships can only be drawn by Gibbs sampling".into(),
        ));
    };
    let b = sample_block(&cfg.prior, seed);
    let rbm = SimplexRbmParams::new(cfg.w.clone(), cfg.u.clone(), cfg.v.clone())?;
    let mut chains = SimplexGibbsChains::new(&rbm, cfg.n, seed, 0);
    let draws = chains.sample(&rbm, sweeps.max(1), 1);
    let z = Array2::from_shape_fn((cfg.n, cfg.k), |(i, l)| draws[i].1[l]);
    let ys: Vec<Vec<f64>> = draws.into_iter().map(|(y, _)| y).collect();
    generate_mixed_with(cfg, b, z, ys, seed)
}

/// Mixed-membership edges for given memberships and covariates.
pub fn generate_mixed_with(
    cfg: &SynthConfig,
    b: Array2<f64>,
    z: Array2<f64>,
    ys: Vec<Vec<f64>>,
    seed: u64,
) -> Result<(AttributedNetwork, GroundTruth)> {
    let (n, m, k) = (cfg.n, cfg.m, cfg.k);
    check_block(&b, k)?;
    if z.dim() != (n, k) || ys.len() != n {
        return Err(Error::InvalidArgument(
            "memberships or covariates have the wrong shape".into(),
        ));
    }
    let per_row: Vec<(Vec<(usize, usize)>, Vec<(u16, u16)>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::substream(seed, Stream::Generate, (1 << 20) + i as u32);
            let zi = z.row(i).to_vec();
            let mut edges = Vec::new();
            let mut roles = vec![(0u16, 0u16); n];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let zj = z.row(j);
                let a = draw_categorical(&zi, &mut rng);
                let c = draw_categorical(zj.as_slice().expect("rows are contiguous"), &mut rng);
                roles[j] = (a as u16, c as u16);
                if rng.random::<f64>() < b[[a, c]] {
                    edges.push((i, j));
                }
            }
            (edges, roles)
        })
        .collect();
    let mut edges = Vec::new();
    let mut roles = Vec::with_capacity(n * n);
    for (e, r) in per_row {
        edges.extend(e);
        roles.extend(r);
    }
    let mut dense = Array2::zeros((n, m));
    for (i, y) in ys.iter().enumerate() {
        for (j, &x) in y.iter().enumerate() {
            dense[[i, j]] = x;
        }
    }
    let covs = Covariates::from_dense(&dense, CovariateMode::Binary)?;
    let net = AttributedNetwork::new(n, edges, covs)?
        .with_labels(argmax_rows(&z))?
        .with_mm_labels(z.clone())?;
    let truth = GroundTruth {
        kind: SynthKind::Mixed,
        b,
        z,
        w: cfg.w.clone(),
        u: cfg.u.clone(),
        v: cfg.v.clone(),
        roles: Some(roles),
    };
    Ok((net, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_dimensions() {
        let cfg = synth_config(1024, SynthKind::Pure, None, None, 0).unwrap();
        assert_eq!((cfg.k, cfg.m), (10, 100));
        let cfg = synth_config(100, SynthKind::Pure, None, None, 0).unwrap();
        assert_eq!(cfg.prior.beta[[0, 0]], 10.0);
        assert_eq!(cfg.prior.beta[[0, 1]], 100.0);
        assert!(synth_config(3, SynthKind::Pure, None, None, 0).is_err());
    }

    #[test]
    fn role_frequencies() {
        let cfg = synth_config(1024, SynthKind::Pure, Some(1000), Some(10), 4).unwrap();
        let total = cfg.w.len() as f64;
        let nz = cfg.w.iter().filter(|&&x| x != 0.0).count() as f64 / total;
        let sd = (0.2 * 0.8 / total).sqrt();
        assert!((nz - 0.2).abs() < 4.0 * sd, "{nz}");
        assert!(cfg.u.iter().all(|&x| x == -2.0));
        assert!(cfg.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampler_names_round_trip() {
        for s in [
            MembershipSampler::Exact,
            MembershipSampler::Gibbs { sweeps: 7 },
        ] {
            assert_eq!(MembershipSampler::parse(&s.name()).unwrap(), s);
        }
        assert_eq!(
            MembershipSampler::parse("gibbs").unwrap(),
            MembershipSampler::Gibbs {
                sweeps: DEFAULT_SWEEPS
            }
        );
        assert!(MembershipSampler::parse("gibbs:0").is_err());
    }

    #[test]
    fn exact_sampler_follows_the_marginal() {
        let mut cfg = synth_config(4000, SynthKind::Pure, Some(6), Some(3), 2).unwrap();
        cfg.sampler = MembershipSampler::Exact;
        let (_, truth) = generate_rbsbm_with_block(&cfg, Array2::zeros((3, 3)), 1).unwrap();
        let rbm = RbmParams::new(
            cfg.w.clone(),
            cfg.u.clone(),
            cfg.v.clone(),
            CovariateMode::Binary,
        )
        .unwrap();
        let labels = truth.labels();
        for (l, p) in rbm.community_marginal().into_iter().enumerate() {
            let freq = labels.iter().filter(|&&x| x == l).count() as f64 / 4000.0;
            assert!(
                (freq - p).abs() < 4.0 * (p * (1.0 - p) / 4000.0).sqrt() + 1e-9,
                "{l}"
            );
        }
    }

    #[test]
    fn constant_blocks() {
        let cfg = synth_config(30, SynthKind::Pure, Some(5), Some(3), 1).unwrap();
        let (net, _) = generate_rbsbm_with_block(&cfg, Array2::zeros((3, 3)), 2).unwrap();
        assert_eq!(net.num_edges(), 0);
        let (net, _) = generate_rbsbm_with_block(&cfg, Array2::ones((3, 3)), 2).unwrap();
        assert_eq!(net.num_edges(), 30 * 29);
    }

    #[test]
    fn deterministic_and_labelled() {
        let cfg = synth_config(200, SynthKind::Pure, Some(20), Some(4), 1).unwrap();
        let (a, ta) = generate_rbsbm(&cfg, 9).unwrap();
        let (b, tb) = generate_rbsbm(&cfg, 9).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(ta, tb);
        assert_eq!(a.labels().unwrap(), ta.labels().as_slice());
        assert!(a.edges().iter().all(|&(i, j)| i != j));
    }

    #[test]
    fn block_edge_frequency_converges() {
        let cfg = synth_config(2000, SynthKind::Pure, Some(10), Some(2), 3).unwrap();
        let b = ndarray::array![[0.02, 0.005], [0.01, 0.03]];
        let (net, truth) = generate_rbsbm_with_block(&cfg, b.clone(), 5).unwrap();
        let labels = truth.labels();
        let sizes = [0, 1].map(|l| labels.iter().filter(|&&x| x == l).count());
        let mut counts = Array2::<f64>::zeros((2, 2));
        for &(i, j) in net.edges() {
            counts[[labels[i], labels[j]]] += 1.0;
        }
        for a in 0..2 {
            for c in 0..2 {
                let pairs = (sizes[a] * sizes[c] - if a == c { sizes[a] } else { 0 }) as f64;
                if pairs < 1000.0 {
                    continue;
                }
                let p = b[[a, c]];
                let sd = (pairs * p * (1.0 - p)).sqrt();
                assert!(
                    (counts[[a, c]] - pairs * p).abs() < 3.0 * sd + 1.0,
                    "({a}, {c})"
                );
            }
        }
    }

    #[test]
    fn mixed_constant_block_and_simplex_labels() {
        let cfg = synth_config(60, SynthKind::Mixed, Some(5), Some(3), 1).unwrap();
        let (net, truth) = generate_rbmmsbm(&cfg, 3).unwrap();
        assert_eq!((net.n(), net.m()), (60, 5));
        for r in net.mm_labels().unwrap().rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(truth.roles.as_ref().unwrap().len(), 3600);

        let ys = vec![vec![0.0; 5]; 60];
        let (net, _) =
            generate_mixed_with(&cfg, Array2::ones((3, 3)), truth.z.clone(), ys.clone(), 1)
                .unwrap();
        assert_eq!(net.num_edges(), 60 * 59);
        let (net, _) = generate_mixed_with(&cfg, Array2::zeros((3, 3)), truth.z, ys, 1).unwrap();
        assert_eq!(net.num_edges(), 0);
    }

    #[test]
    fn mixed_roles_follow_one_hot_memberships() {
        let cfg = synth_config(40, SynthKind::Mixed, Some(2), Some(2), 1).unwrap();
        let z = Array2::from_shape_fn((40, 2), |(i, l)| f64::from(u8::from(i % 2 == l)));
        let ys = vec![vec![0.0; 2]; 40];
        let (_, truth) =
            generate_mixed_with(&cfg, Array2::from_elem((2, 2), 0.5), z, ys, 7).unwrap();
        let roles = truth.roles.unwrap();
        for i in 0..40 {
            for j in 0..40 {
                if i != j {
                    assert_eq!(roles[i * 40 + j], ((i % 2) as u16, (j % 2) as u16));
                }
            }
        }
    }
}
