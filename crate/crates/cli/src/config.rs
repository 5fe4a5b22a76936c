//! Run configuration: defaults < `key = value` config file < flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use rbsbm::block::BlockPrior;
use rbsbm::mmsbm::{EStepRule, MmFitOptions};
use rbsbm::network::CovariateMode;
use rbsbm::sbm::{EarlyStop, FitOptions, GradientMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Rbsbm,
    Rbmmsbm,
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rbsbm" => Ok(Model::Rbsbm),
            "rbmmsbm" => Ok(Model::Rbmmsbm),
            _ => Err(format!("unknown model {s:?} (expected rbsbm or rbmmsbm)")),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Rbsbm => "rbsbm",
            Model::Rbmmsbm => "rbmmsbm",
        })
    }
}

/// `auto` lets the covariate mode decide (exact for binary, Gibbs for continuous).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientChoice(pub Option<GradientMode>);

impl FromStr for GradientChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(GradientChoice(None)),
            _ => GradientMode::parse(s)
                .map(|m| GradientChoice(Some(m)))
                .map_err(|e| e.to_string()),
        }
    }
}

impl fmt::Display for GradientChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.map_or("auto", GradientMode::name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ERule(pub EStepRule);

impl FromStr for ERule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        EStepRule::parse(s).map(ERule).map_err(|e| e.to_string())
    }
}

impl fmt::Display for ERule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode(pub CovariateMode);

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        CovariateMode::parse(s)
            .map(Mode)
            .ok_or_else(|| format!("unknown mode {s:?} (expected binary or continuous)"))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.name())
    }
}

/// λ schedule: `none` or `start:end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anneal(pub Option<(f64, f64)>);

impl FromStr for Anneal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Anneal(None));
        }
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected none or start:end, got {s:?}"))?;
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        let (a, b) = (parse(a)?, parse(b)?);
        if !(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0) {
            return Err(format!("annealing exponents must lie in (0, 1], got {s:?}"));
        }
        Ok(Anneal(Some((a, b))))
    }
}

impl fmt::Display for Anneal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("none"),
            Some((a, b)) => write!(f, "{a}:{b}"),
        }
    }
}

/// Block prior: `real` (α = 1, β = 1 within, 10 between), `synthetic`
/// (α = 1, β = √n within, 10√n between) or `alpha,beta_within,beta_between`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorSpec {
    Real,
    Synthetic,
    Custom(f64, f64, f64),
}

impl PriorSpec {
    pub fn build(self, k: usize, n: usize) -> BlockPrior {
        match self {
            PriorSpec::Real => BlockPrior::real_data(k),
            PriorSpec::Synthetic => BlockPrior::synthetic(k, n),
            PriorSpec::Custom(a, bd, bo) => BlockPrior::assortative(k, a, bd, bo),
        }
    }
}

impl FromStr for PriorSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(PriorSpec::Real),
            "synthetic" => Ok(PriorSpec::Synthetic),
            _ => {
                let v: Vec<f64> = s
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("bad prior {s:?}: {e}"))?;
                match v[..] {
                    [a, bd, bo] if a > 0.0 && bd > 0.0 && bo > 0.0 => Ok(PriorSpec::Custom(a, bd, bo)),
                    _ => Err(format!(
                        "expected real, synthetic or three positive numbers alpha,beta_within,beta_between; got {s:?}"
                    )),
                }
            }
        }
    }
}

impl fmt::Display for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Real => f.write_str("real"),
            PriorSpec::Synthetic => f.write_str("synthetic"),
            PriorSpec::Custom(a, bd, bo) => write!(f, "{a},{bd},{bo}"),
        }
    }
}

/// Early stopping: `none` or `tol:window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stop(pub Option<EarlyStop>);

impl FromStr for Stop {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Stop(None));
        }
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected none or tol:window, got {s:?}"))?;
        let tol = a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}"))?;
        let window = b
            .trim()
            .parse::<usize>()
            .map_err(|e| format!("{b:?}: {e}"))?;
        if !(tol >= 0.0) || window == 0 {
            return Err(format!("bad early-stop rule {s:?}"));
        }
        Ok(Stop(Some(EarlyStop { tol, window })))
    }
}

impl fmt::Display for Stop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("none"),
            Some(s) => write!(f, "{}:{}", s.tol, s.window),
        }
    }
}

/// Hyperparameter flags shared by the inference subcommands. Anything left
/// unset falls back to the config file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// key = value file with any of the options below (flags win)
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// rbsbm or rbmmsbm [default: rbsbm]
    #[arg(long)]
    pub model: Option<Model>,
    /// Number of communities [default: ⌊log₂ n⌋]
    #[arg(long)]
    pub k: Option<usize>,
    /// Iterations [default: 1000]
    #[arg(long)]
    pub tau: Option<usize>,
    /// Nodes updated per iteration [default: min(n, 256)]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Gradient steps per M-step (and per E-step for rbmmsbm) [default: 1]
    #[arg(long)]
    pub xi: Option<usize>,
    /// M-step learning rate [default: 1/n]
    #[arg(long)]
    pub lr: Option<f64>,
    /// rbmmsbm E-step step size [default: 0.05]
    #[arg(long)]
    pub e_lr: Option<f64>,
    /// rbmmsbm E-step rule: adam or gradient [default: adam]
    #[arg(long)]
    pub e_rule: Option<ERule>,
    /// Model moments for the M-step: exact, gibbs or auto [default: auto]
    #[arg(long)]
    pub gradient_mode: Option<GradientChoice>,
    /// Persistent Gibbs chains [default: 100]
    #[arg(long)]
    pub chains: Option<usize>,
    /// Gibbs sweeps between draws [default: 10]
    #[arg(long)]
    pub thin: Option<usize>,
    /// Burn-in sweeps for fresh chains [default: 100]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Annealing schedule start:end or none [default: 0.3:1 for rbsbm]
    #[arg(long)]
    pub anneal: Option<Anneal>,
    /// Block prior: real, synthetic or alpha,beta_within,beta_between [default: real]
    #[arg(long)]
    pub prior: Option<PriorSpec>,
    /// Covariate mode to fit; continuous data is binned for binary fits [default: as stored]
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Bins per continuous covariate when fitting in binary mode [default: 10]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Fraction of edges (and as many non-edges) to hide [default: 0]
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Early stopping tol:window or none [default: none]
    #[arg(long)]
    pub early_stop: Option<Stop>,
    /// Draws for the final ln Ω estimate (rbmmsbm) [default: 100000]
    #[arg(long)]
    pub omega_samples: Option<usize>,
    /// Largest network rbmmsbm accepts [default: 3000]
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Every hyperparameter resolved to a concrete value.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Model,
    pub k: usize,
    pub tau: usize,
    pub batch: usize,
    pub xi: usize,
    pub lr: f64,
    pub e_lr: f64,
    pub e_rule: ERule,
    pub gradient_mode: GradientChoice,
    pub chains: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub anneal: Anneal,
    pub prior: PriorSpec,
    pub mode: Mode,
    pub bins: usize,
    pub mask_fraction: f64,
    pub early_stop: Stop,
    pub omega_samples: usize,
    pub max_nodes: usize,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "model",
    "k",
    "tau",
    "batch",
    "xi",
    "lr",
    "e_lr",
    "e_rule",
    "gradient_mode",
    "chains",
    "thin",
    "burn_in",
    "anneal",
    "prior",
    "mode",
    "bins",
    "mask_fraction",
    "early_stop",
    "omega_samples",
    "max_nodes",
    "seed",
];

/// Reads a config file; keys may use `-` or `_`.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (k, v) in rbsbm::io::parse_key_values(path, &text)? {
        let key = k.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("{}: unknown option {k:?}", path.display());
        }
        out.insert(key, v);
    }
    Ok(out)
}

fn pick<T: FromStr<Err = E>, E: fmt::Display>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("config option {key} = {v:?}: {e}")),
    }
}

impl HyperArgs {
    /// Resolves every option for a network with `n` nodes stored in `stored`
    /// mode. `default_mask` is the mask fraction when none is given.
    pub fn resolve(&self, n: usize, stored: CovariateMode, default_mask: f64) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        let model = pick(self.model, &file, "model")?.unwrap_or(Model::Rbsbm);
        let cfg = RunConfig {
            model,
            k: pick(self.k, &file, "k")?.unwrap_or((n.max(2)).ilog2() as usize),
            tau: pick(self.tau, &file, "tau")?.unwrap_or(1000),
            batch: pick(self.batch, &file, "batch")?
                .unwrap_or(256)
                .min(n)
                .max(1),
            xi: pick(self.xi, &file, "xi")?.unwrap_or(1),
            lr: pick(self.lr, &file, "lr")?.unwrap_or(1.0 / n.max(1) as f64),
            e_lr: pick(self.e_lr, &file, "e_lr")?.unwrap_or(0.05),
            e_rule: pick(self.e_rule, &file, "e_rule")?.unwrap_or(ERule(EStepRule::Adam)),
            gradient_mode: pick(self.gradient_mode, &file, "gradient_mode")?
                .unwrap_or(GradientChoice(None)),
            chains: pick(self.chains, &file, "chains")?.unwrap_or(100),
            thin: pick(self.thin, &file, "thin")?.unwrap_or(10),
            burn_in: pick(self.burn_in, &file, "burn_in")?.unwrap_or(rbsbm::rbm::DEFAULT_BURN_IN),
            anneal: pick(self.anneal, &file, "anneal")?.unwrap_or(match model {
                Model::Rbsbm => Anneal(Some((0.3, 1.0))),
                Model::Rbmmsbm => Anneal(None),
            }),
            prior: pick(self.prior, &file, "prior")?.unwrap_or(PriorSpec::Real),
            mode: pick(self.mode, &file, "mode")?.unwrap_or(Mode(stored)),
            bins: pick(self.bins, &file, "bins")?.unwrap_or(10),
            mask_fraction: pick(self.mask_fraction, &file, "mask_fraction")?
                .unwrap_or(default_mask),
            early_stop: pick(self.early_stop, &file, "early_stop")?.unwrap_or(Stop(None)),
            omega_samples: pick(self.omega_samples, &file, "omega_samples")?
                .unwrap_or(rbsbm::mmsbm::DEFAULT_OMEGA_SAMPLES),
            max_nodes: pick(self.max_nodes, &file, "max_nodes")?
                .unwrap_or(rbsbm::mmsbm::DEFAULT_MAX_NODES),
            seed: pick(self.seed, &file, "seed")?.unwrap_or(0),
        };
        if cfg.k == 0 || cfg.k > n {
            bail!("k must lie in 1..={n}, got {}", cfg.k);
        }
        if !(0.0..1.0).contains(&cfg.mask_fraction) {
            bail!(
                "mask fraction must lie in [0, 1), got {}",
                cfg.mask_fraction
            );
        }
        if model == Model::Rbmmsbm && cfg.anneal.0.is_some() {
            bail!("annealing applies to rbsbm only");
        }
        Ok(cfg)
    }
}

impl RunConfig {
    /// `key = value` lines for the run manifest.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.model.to_string()),
            ("k", self.k.to_string()),
            ("tau", self.tau.to_string()),
            ("batch", self.batch.to_string()),
            ("xi", self.xi.to_string()),
            ("lr", self.lr.to_string()),
            ("e_lr", self.e_lr.to_string()),
            ("e_rule", self.e_rule.to_string()),
            ("gradient_mode", self.gradient_mode.to_string()),
            ("chains", self.chains.to_string()),
            ("thin", self.thin.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("anneal", self.anneal.to_string()),
            ("prior", self.prior.to_string()),
            ("mode", self.mode.to_string()),
            ("bins", self.bins.to_string()),
            ("mask_fraction", self.mask_fraction.to_string()),
            ("early_stop", self.early_stop.to_string()),
            ("omega_samples", self.omega_samples.to_string()),
            ("max_nodes", self.max_nodes.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn sbm_options(&self, n: usize, k: usize) -> FitOptions {
        let mut o = FitOptions::new(k);
        o.tau = self.tau;
        o.batch = Some(self.batch);
        o.xi = self.xi;
        o.lr = Some(self.lr);
        o.gradient_mode = self.gradient_mode.0;
        o.chains = self.chains;
        o.thin = self.thin;
        o.burn_in = self.burn_in;
        o.seed = self.seed;
        o.prior = Some(self.prior.build(k, n));
        o.anneal = self.anneal.0;
        o.early_stop = self.early_stop.0;
        o
    }

    pub fn mm_options(&self, n: usize, k: usize) -> MmFitOptions {
        let mut o = MmFitOptions::new(k);
        o.tau = self.tau;
        o.xi = self.xi;
        o.lr = Some(self.lr);
        o.e_rule = self.e_rule.0;
        o.e_lr = self.e_lr;
        o.chains = self.chains;
        o.thin = self.thin;
        o.burn_in = self.burn_in;
        o.seed = self.seed;
        o.prior = Some(self.prior.build(k, n));
        o.early_stop = self.early_stop.0;
        o.omega_samples = self.omega_samples;
        o.max_nodes = self.max_nodes;
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# experiment\ntau = 50\nk = 4\nburn-in = 7\n").unwrap();
        let args = HyperArgs {
            config: Some(path),
            k: Some(3),
            ..Default::default()
        };
        let cfg = args.resolve(100, CovariateMode::Binary, 0.0).unwrap();
        assert_eq!((cfg.k, cfg.tau, cfg.burn_in, cfg.batch), (3, 50, 7, 100));
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "taux = 50\n").unwrap();
        assert!(read_config(&path).is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["none", "0.3:1"] {
            assert_eq!(s.parse::<Anneal>().unwrap().to_string(), s);
        }
        for s in ["real", "synthetic", "1,2,30"] {
            assert_eq!(s.parse::<PriorSpec>().unwrap().to_string(), s);
        }
        for s in ["auto", "exact", "gibbs"] {
            assert_eq!(s.parse::<GradientChoice>().unwrap().to_string(), s);
        }
        assert!("0:1".parse::<Anneal>().is_err());
        assert!("1,2".parse::<PriorSpec>().is_err());
        assert_eq!(
            "1e-6:20".parse::<Stop>().unwrap().to_string(),
            "0.000001:20"
        );
    }

    #[test]
    fn k_beyond_n_is_an_error() {
        let args = HyperArgs {
            k: Some(11),
            ..Default::default()
        };
        assert!(args.resolve(10, CovariateMode::Binary, 0.0).is_err());
    }
}
