use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use ndarray::Array2;
use rbsbm::datasets::{binarize_covariates, binned_names};
use rbsbm::generator::{
    generate_rbmmsbm, generate_rbsbm, synth_config, MembershipSampler, SynthKind,
};
use rbsbm::io::{self, Directedness, ParamBundle};
use rbsbm::metrics::{nmi, recovery};
use rbsbm::mmsbm;
use rbsbm::network::{AttributedNetwork, CovariateMode, Covariates};
use rbsbm::sbm::{self, predict_links};
use rbsbm::split::make_link_split;
use rbsbm::{datasets, explain};

use crate::config::{Model, RunConfig};
use crate::{
    EvaluateArgs, ExplainArgs, FitArgs, GenerateArgs, ImportArgs, ImportSource, InputArgs,
    SelectKArgs,
};

const MEMBERSHIPS: &str = "memberships.csv";
const LABELS: &str = "labels.txt";
const BLOCK_MEAN: &str = "block_mean.csv";
const PARAMS: &str = "params.txt";
const NAMES: &str = "covariate_names.txt";
const MANIFEST: &str = "manifest.txt";
const TIMING: &str = "timing.log";

/// Ordered `key = value` lines.
#[derive(Default)]
struct Manifest(String);

impl Manifest {
    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.0)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn community_header(k: usize) -> Vec<String> {
    (0..k).map(|l| format!("c{l}")).collect()
}

fn looks_binary(dense: &Array2<f64>) -> bool {
    dense.iter().all(|&x| x == 0.0 || x == 1.0)
}

fn load_table(
    input: &InputArgs,
    mode: Option<CovariateMode>,
) -> Result<(AttributedNetwork, Vec<String>)> {
    let (Some(edges), Some(covs)) = (&input.edges, &input.covariates) else {
        bail!("give --input DIR, or --edges and --covariates");
    };
    let (names, dense) = io::read_covariate_table(covs)?;
    let mode = mode.unwrap_or(if looks_binary(&dense) {
        CovariateMode::Binary
    } else {
        CovariateMode::Continuous
    });
    let directedness = if input.undirected {
        Directedness::Undirected
    } else {
        Directedness::Directed
    };
    let net = datasets::load_with_labels(edges, covs, input.labels.as_deref(), mode, directedness)?;
    Ok((net, names))
}

fn load_input(input: &InputArgs) -> Result<(AttributedNetwork, Vec<String>)> {
    match &input.input {
        Some(dir) => Ok(
            io::load_saved_network(dir).with_context(|| format!("loading {}", dir.display()))?
        ),
        None => load_table(input, None),
    }
}

/// Converts the stored covariates to the mode being fitted: continuous data
/// is binned for binary fits, 0/1 data is read as continuous values.
fn to_mode(
    net: AttributedNetwork,
    names: Vec<String>,
    cfg: &RunConfig,
) -> Result<(AttributedNetwork, Vec<String>)> {
    match (net.mode(), cfg.mode.0) {
        (CovariateMode::Continuous, CovariateMode::Binary) => {
            info!(
                "binning {} continuous covariates into {} bins",
                net.m(),
                cfg.bins
            );
            Ok((
                binarize_covariates(&net, cfg.bins)?,
                binned_names(&names, cfg.bins),
            ))
        }
        (CovariateMode::Binary, CovariateMode::Continuous) => {
            let covs =
                Covariates::from_dense(&net.covariates().to_dense(), CovariateMode::Continuous)?;
            Ok((net.with_covariates(covs)?, names))
        }
        _ => Ok((net, names)),
    }
}

fn network_entries(manifest: &mut Manifest, net: &AttributedNetwork) {
    manifest.add("n", net.n());
    manifest.add("m", net.m());
    manifest.add("edges", net.num_edges());
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let kind = SynthKind::parse(&a.kind)?;
    let mut cfg = synth_config(a.n, kind, a.m, a.k, a.seed)?;
    if let Some(s) = &a.sampler {
        cfg.sampler = MembershipSampler::parse(s)?;
    }
    let (net, truth) = match kind {
        SynthKind::Pure => generate_rbsbm(&cfg, a.seed)?,
        SynthKind::Mixed => generate_rbmmsbm(&cfg, a.seed)?,
    };
    create_dir(&a.out)?;
    io::save_network(&a.out, &net, None)?;
    io::save_ground_truth(&a.out, &truth)?;
    let mut manifest = Manifest::default();
    manifest.add("command", "generate");
    manifest.add("kind", kind.name());
    network_entries(&mut manifest, &net);
    manifest.add("k", cfg.k);
    manifest.add("sampler", cfg.sampler.name());
    manifest.add("seed", a.seed);
    manifest.add("density", net.density());
    manifest.write(&a.out.join(MANIFEST))?;
    println!(
        "n = {}, |E| = {}, density = {:.6}",
        net.n(),
        net.num_edges(),
        net.density()
    );
    Ok(())
}

/// What both models hand back for writing.
struct Fitted {
    memberships: Array2<f64>,
    labels: Vec<usize>,
    block_mean: Array2<f64>,
    elbo_trace: Vec<f64>,
    seconds: Vec<f64>,
    params: ParamBundle,
    results: Manifest,
}

fn run_model(
    net: &AttributedNetwork,
    cfg: &RunConfig,
    k: usize,
    mask: Option<rbsbm::split::PairMask>,
) -> Result<Fitted> {
    let mut results = Manifest::default();
    match cfg.model {
        Model::Rbsbm => {
            let mut opts = cfg.sbm_options(net.n(), k);
            opts.mask = mask;
            let (state, report) = sbm::fit(net, &opts)?;
            results.add("resolved_gradient_mode", report.gradient_mode.name());
            results.add("iterations", report.iterations);
            results.add("stopped_early", report.stopped_early);
            if let Some(e) = report.elbo_trace.last() {
                results.add("elbo", e);
            }
            Ok(Fitted {
                memberships: state.q,
                labels: report.labels,
                block_mean: report.block_mean,
                elbo_trace: report.elbo_trace,
                seconds: report.iteration_seconds,
                params: ParamBundle::OneHot(state.rbm),
                results,
            })
        }
        Model::Rbmmsbm => {
            let mut opts = cfg.mm_options(net.n(), k);
            opts.mask = mask;
            let (state, report) = mmsbm::fit_mm(net, &opts)?;
            results.add("iterations", report.iterations);
            results.add("stopped_early", report.stopped_early);
            results.add("elbo_q", report.elbo_q);
            results.add("log_omega", report.log_omega.value);
            results.add("log_omega_std_err", report.log_omega.std_err);
            results.add("elbo", report.elbo);
            results.add("elbo_std_err", report.elbo_std_err);
            Ok(Fitted {
                memberships: report.memberships,
                labels: report.labels,
                block_mean: report.block_mean,
                elbo_trace: report.elbo_q_trace,
                seconds: report.iteration_seconds,
                params: ParamBundle::Simplex(state.rbm),
                results,
            })
        }
    }
}

/// `fit`, and `predict-links` when `links` is set (which defaults the mask
/// fraction to 0.2 and also writes per-pair scores).
pub fn fit(a: &FitArgs, links: bool) -> Result<()> {
    let (net, names) = load_input(&a.input)?;
    let cfg = a
        .hyper
        .resolve(net.n(), net.mode(), if links { 0.2 } else { 0.0 })?;
    if links && cfg.mask_fraction == 0.0 {
        bail!("link prediction needs a mask fraction in (0, 1)");
    }
    let (net, names) = to_mode(net, names, &cfg)?;
    create_dir(&a.out)?;

    let split = if cfg.mask_fraction > 0.0 {
        Some(make_link_split(&net, cfg.mask_fraction, cfg.seed)?)
    } else {
        None
    };
    let train = split.as_ref().map_or(&net, |s| &s.observed);
    let start = Instant::now();
    let fitted = run_model(train, &cfg, cfg.k, split.as_ref().map(|s| s.mask.clone()))?;
    let total = start.elapsed().as_secs_f64();

    let mut manifest = Manifest::default();
    manifest.add("command", if links { "predict-links" } else { "fit" });
    for (key, value) in cfg.entries() {
        manifest.add(key, value);
    }
    network_entries(&mut manifest, &net);
    manifest.0.push_str(&fitted.results.0);
    if let Some(truth) = net.labels() {
        let score = nmi(&fitted.labels, truth)?;
        manifest.add("nmi", score);
        println!("NMI = {score:.4}");
    }
    if let Some(split) = &split {
        let pred = predict_links(&fitted.memberships, &fitted.block_mean, split)?;
        manifest.add("heldout_pairs", pred.scores.len());
        manifest.add("auc", pred.auc);
        println!(
            "AUC = {:.4} over {} held-out pairs",
            pred.auc,
            pred.scores.len()
        );
        io::write_split_manifest(
            &a.out.join("split.txt"),
            split,
            &[
                ("fraction", cfg.mask_fraction.to_string()),
                ("seed", cfg.seed.to_string()),
            ],
        )?;
        if links {
            let mut out = String::from("source,target,score,is_edge\n");
            for (i, j, s, e) in &pred.scores {
                let _ = writeln!(out, "{i},{j},{s},{}", *e as u8);
            }
            write_file(&a.out.join("scores.csv"), &out)?;
        }
    }

    let k = fitted.memberships.ncols();
    io::write_matrix(
        &a.out.join(MEMBERSHIPS),
        Some(&community_header(k)),
        &fitted.memberships,
    )?;
    io::write_labels(&a.out.join(LABELS), &fitted.labels)?;
    io::write_matrix(&a.out.join(BLOCK_MEAN), None, &fitted.block_mean)?;
    io::write_params(&a.out.join(PARAMS), &fitted.params)?;
    write_file(&a.out.join(NAMES), &(names.join("\n") + "\n"))?;
    let mut trace = String::from("iteration,elbo\n");
    for (t, e) in fitted.elbo_trace.iter().enumerate() {
        let _ = writeln!(trace, "{t},{e}");
    }
    write_file(&a.out.join("elbo.csv"), &trace)?;
    manifest.write(&a.out.join(MANIFEST))?;

    let mut timing = String::new();
    for (t, s) in fitted.seconds.iter().enumerate() {
        let _ = writeln!(timing, "{t}\t{s:.6}");
    }
    let _ = writeln!(timing, "total\t{total:.6}");
    write_file(&a.out.join(TIMING), &timing)?;
    println!(
        "wrote {} ({} model, k = {k}, {:.1} s)",
        a.out.display(),
        cfg.model,
        total
    );
    Ok(())
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let params_path = a.fit.join(PARAMS);
    if !params_path.exists() {
        bail!(
            "{} has no fitted parameters ({PARAMS}); run fit first",
            a.fit.display()
        );
    }
    let params = io::read_params(&params_path)?;
    let memberships = io::read_matrix(&a.fit.join(MEMBERSHIPS), true)?;
    let block_mean = io::read_matrix(&a.fit.join(BLOCK_MEAN), false)?;
    let names_path = a.fit.join(NAMES);
    let names = if names_path.exists() {
        Some(read_names(&names_path)?)
    } else {
        None
    };
    let profiles = explain::community_profiles(params.w(), &memberships, &block_mean, a.top_n)?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    explain::write_profiles(&out.join("profiles.csv"), &profiles, names.as_deref())?;
    for p in &profiles {
        let top: Vec<String> = p
            .covariates
            .iter()
            .take(3)
            .map(|c| {
                let name = names.as_ref().and_then(|n| n.get(c.index)).cloned();
                format!(
                    "{} ({:+.2})",
                    name.unwrap_or_else(|| c.index.to_string()),
                    c.weight
                )
            })
            .collect();
        println!("community {}: {}", p.community, top.join(", "));
    }
    Ok(())
}

fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .with_context(|| format!("bad k range {s:?}"))?;
        let hi: usize = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .with_context(|| format!("bad k range {s:?}"))?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad k list {s:?}"))?
    };
    if ks.is_empty() {
        bail!("k range {s:?} is empty");
    }
    Ok(ks)
}

pub fn select_k(a: &SelectKArgs) -> Result<()> {
    let ks = parse_k_range(&a.k_range)?;
    let (net, names) = load_input(&a.input)?;
    let cfg = a.hyper.resolve(net.n(), net.mode(), 0.0)?;
    if cfg.mask_fraction > 0.0 {
        bail!("select-k fits the full network; drop the mask fraction");
    }
    let (net, _) = to_mode(net, names, &cfg)?;
    let n = net.n();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
        bail!("k must lie in 1..={n}, got {bad}");
    }
    create_dir(&a.out)?;
    let mut manifest = Manifest::default();
    manifest.add("command", "select-k");
    for (key, value) in cfg.entries().into_iter().filter(|(key, _)| *key != "k") {
        manifest.add(key, value);
    }
    manifest.add(
        "k_range",
        ks.iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    network_entries(&mut manifest, &net);
    let mut table = String::new();
    match cfg.model {
        Model::Rbmmsbm => {
            let sel = mmsbm::select_k(&net, &ks, &cfg.mm_options(n, ks[0]), |k| {
                cfg.prior.build(k, n)
            })?;
            table.push_str("k,elbo_q,log_omega,log_omega_std_err,elbo,elbo_std_err\n");
            for r in &sel.rows {
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{}",
                    r.k, r.elbo_q, r.log_omega, r.log_omega_std_err, r.elbo, r.elbo_std_err
                );
            }
            manifest.add("chosen_k", sel.chosen);
            manifest.add("chosen_k_without_omega", sel.chosen_without_omega);
            println!(
                "chosen k = {} (without the ln Ω term: {})",
                sel.chosen, sel.chosen_without_omega
            );
        }
        Model::Rbsbm => {
            table.push_str("k,elbo\n");
            let mut best = (ks[0], f64::NEG_INFINITY);
            for &k in &ks {
                let opts = cfg.sbm_options(n, k);
                let (state, _) = sbm::fit(&net, &opts)?;
                let prior = opts.prior.clone().expect("set by sbm_options");
                let e = sbm::elbo(&state, &net, &prior, None)?;
                let _ = writeln!(table, "{k},{e}");
                if e > best.1 {
                    best = (k, e);
                }
            }
            manifest.add("chosen_k", best.0);
            println!("chosen k = {}", best.0);
        }
    }
    write_file(&a.out.join("select_k.csv"), &table)?;
    manifest.write(&a.out.join(MANIFEST))?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let labels = io::read_labels(&a.fit.join(LABELS))?;
    let mut report = Manifest::default();
    if a.truth.join(io::TRUTH_META_FILE).exists() {
        let truth = io::load_ground_truth(&a.truth)?;
        let score = nmi(&labels, &truth.labels())?;
        report.add("nmi", score);
        println!("NMI = {score:.4}");
        let z = io::read_matrix(&a.fit.join(MEMBERSHIPS), true)?;
        let b = io::read_matrix(&a.fit.join(BLOCK_MEAN), false)?;
        let params = io::read_params(&a.fit.join(PARAMS))?;
        if z.dim() == truth.z.dim() && params.w().dim() == truth.w.dim() {
            let r = recovery(&z, &b, params.w(), &truth.z, &truth.b, &truth.w, 0.5)?;
            let mean_js = r.js.iter().sum::<f64>() / r.js.len() as f64;
            report.add(
                "alignment",
                r.perm
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
            report.add("mean_js", mean_js);
            report.add("fraction_js_below_0.1", r.fraction_js_below(0.1));
            report.add("mean_abs_block_error", r.block_error);
            report.add("w_match_raw", r.w_match_raw);
            report.add("w_match_gauged", r.w_match_gauged);
            println!(
                "JS < 0.1 for {:.1}% of nodes; mean |ΔB| = {:.4}; thresholded W matches: {} (median gauge), {} (raw)",
                100.0 * r.fraction_js_below(0.1),
                r.block_error,
                r.w_match_gauged,
                r.w_match_raw
            );
        } else {
            info!("fit and truth differ in k or m; skipping parameter recovery");
        }
    } else if a.truth.join(io::LABELS_FILE).exists() {
        let truth = io::read_labels(&a.truth.join(io::LABELS_FILE))?;
        let score = nmi(&labels, &truth)?;
        report.add("nmi", score);
        println!("NMI = {score:.4}");
    } else {
        bail!(
            "{} holds neither a ground truth nor labels",
            a.truth.display()
        );
    }
    let out: PathBuf = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    report.write(&out.join("evaluation.txt"))
}

pub fn import(a: &ImportArgs) -> Result<()> {
    let (net, names, out) = match &a.source {
        ImportSource::Linqs {
            content,
            cites,
            out,
        } => {
            let (net, classes) = datasets::load_linqs(content, cites)?;
            create_dir(out)?;
            write_file(&out.join("classes.txt"), &(classes.join("\n") + "\n"))?;
            (net, None, out)
        }
        ImportSource::Lazega {
            attributes,
            adjacency,
            out,
        } => (
            datasets::encode_lazega(attributes, adjacency)?,
            Some(datasets::lazega_names()),
            out,
        ),
        ImportSource::Table { input, mode, out } => {
            let (net, names) = load_table(input, mode.map(|m| m.0))?;
            (net, Some(names), out)
        }
    };
    create_dir(out)?;
    io::save_network(out, &net, names.as_deref())?;
    println!(
        "n = {}, m = {} ({}), |E| = {}",
        net.n(),
        net.m(),
        net.mode().name(),
        net.num_edges()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_k_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_k_range("3, 7").unwrap(), vec![3, 7]);
        assert!(parse_k_range("5..2").is_err());
        assert!(parse_k_range("x").is_err());
    }
}
