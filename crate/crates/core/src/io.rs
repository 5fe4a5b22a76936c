//! Plain-text formats: edge lists, covariate tables, labels, matrices,
//! parameter bundles, split manifests and ground-truth sidecars.
//!
//! Floats are written with `Display`, which prints the shortest string that
//! parses back to the same `f64`, so every save/load pair is bit-exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::generator::{GroundTruth, SynthKind};
use crate::network::{AttributedNetwork, CovariateMode, Covariates};
use crate::rbm::RbmParams;
use crate::simplex_rbm::SimplexRbmParams;
use crate::split::LinkSplit;

/// Whether each line of an edge file is one ordered pair or an undirected
/// edge standing for both orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directedness {
    Directed,
    Undirected,
}

impl Directedness {
    pub fn name(self) -> &'static str {
        match self {
            Directedness::Directed => "directed",
            Directedness::Undirected => "undirected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "directed" => Some(Directedness::Directed),
            "undirected" => Some(Directedness::Undirected),
            _ => None,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank lines that are not `#` comments, with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {what} from {s:?}")))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are kept in order.
pub fn parse_key_values(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(no, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::parse(path, no, "expected `key = value`"))
        })
        .collect()
}

fn lookup<'a>(path: &Path, kv: &'a [(String, String)], key: &str) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(path, 0, format!("missing key `{key}`")))
}

fn lookup_num<T: std::str::FromStr>(path: &Path, kv: &[(String, String)], key: &str) -> Result<T> {
    parse_field(path, 0, lookup(path, kv, key)?, key)
}

/// Reads `src<TAB>dst` lines (any whitespace works). Undirected lines yield
/// both orientations. Self-loops are dropped and duplicates merged, each
/// with a warning.
pub fn read_edge_list(path: &Path, directedness: Directedness) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    let (mut loops, mut dupes) = (0usize, 0usize);
    for (no, line) in content_lines(&text) {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::parse(path, no, "expected two node ids"));
        };
        let a: usize = parse_field(path, no, a, "node id")?;
        let b: usize = parse_field(path, no, b, "node id")?;
        if a == b {
            loops += 1;
            continue;
        }
        let pairs: &[(usize, usize)] = match directedness {
            Directedness::Directed => &[(a, b)],
            Directedness::Undirected => &[(a, b), (b, a)],
        };
        let mut fresh = false;
        for &p in pairs {
            if seen.insert(p) {
                edges.push(p);
                fresh = true;
            }
        }
        if !fresh {
            dupes += 1;
        }
    }
    if loops > 0 {
        warn!("{}: dropped {loops} self-loop(s)", path.display());
    }
    if dupes > 0 {
        warn!("{}: merged {dupes} duplicate edge line(s)", path.display());
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut out = String::with_capacity(edges.len() * 12);
    for &(a, b) in edges {
        let _ = writeln!(out, "{a}\t{b}");
    }
    write_text(path, &out)
}

/// Reads a dense CSV with a header row of column names.
pub fn read_covariate_table(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let Some((_, header)) = lines.next() else {
        return Err(Error::parse(path, 1, "empty covariate file"));
    };
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let m = names.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (no, line) in lines {
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != m {
            return Err(Error::parse(
                path,
                no,
                format!("row has {} fields but the header has {m}", row.len()),
            ));
        }
        for s in row {
            values.push(parse_field::<f64>(path, no, s, "covariate value")?);
        }
        n += 1;
    }
    let dense = Array2::from_shape_vec((n, m), values).expect("row lengths checked");
    Ok((names, dense))
}

/// Default column names `y0, y1, …`.
pub fn default_covariate_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("y{j}")).collect()
}

pub fn write_covariate_table(path: &Path, names: &[String], covs: &Covariates) -> Result<()> {
    if names.len() != covs.m() {
        return Err(Error::InvalidArgument(format!(
            "{} names for {} covariates",
            names.len(),
            covs.m()
        )));
    }
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..covs.n() {
        let mut row = vec![0.0; covs.m()];
        for (j, x) in covs.row(i) {
            row[j] = x;
        }
        push_row(&mut out, &row, ',');
    }
    write_text(path, &out)
}

fn push_row(out: &mut String, row: &[f64], sep: char) {
    for (j, x) in row.iter().enumerate() {
        if j > 0 {
            out.push(sep);
        }
        let _ = write!(out, "{x}");
    }
    out.push('\n');
}

/// Min–max rescales every column that leaves [0, 1]; returns the indices of
/// the rescaled columns. A constant out-of-range column maps to 0.
pub fn rescale_columns(dense: &mut Array2<f64>) -> Vec<usize> {
    let mut touched = Vec::new();
    for (j, mut col) in dense.columns_mut().into_iter().enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo >= 0.0 && hi <= 1.0 {
            continue;
        }
        let span = hi - lo;
        col.mapv_inplace(|x| if span > 0.0 { (x - lo) / span } else { 0.0 });
        touched.push(j);
    }
    touched
}

/// Loads an edge list plus a covariate table into a network. The covariate
/// table fixes n; an edge naming a node without a covariate row is an error.
/// Continuous columns outside [0, 1] are min–max rescaled.
pub fn load_network(
    edge_file: &Path,
    covariate_file: &Path,
    mode: CovariateMode,
    directedness: Directedness,
) -> Result<AttributedNetwork> {
    let (_, mut dense) = read_covariate_table(covariate_file)?;
    let n = dense.nrows();
    let edges = read_edge_list(edge_file, directedness)?;
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a.max(b) >= n) {
        return Err(Error::InvalidNetwork(format!(
            "edge ({a}, {b}) in {} but {} has only {n} covariate rows",
            edge_file.display(),
            covariate_file.display()
        )));
    }
    if mode == CovariateMode::Continuous {
        let touched = rescale_columns(&mut dense);
        if !touched.is_empty() {
            warn!(
                "{}: rescaled {} column(s) to [0, 1]",
                covariate_file.display(),
                touched.len()
            );
        }
    }
    let covs = Covariates::from_dense(&dense, mode)?;
    AttributedNetwork::new(n, edges, covs)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(no, l)| parse_field(path, no, l, "label"))
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    write_text(path, &out)
}

/// Writes a matrix as CSV, optionally preceded by a header row.
pub fn write_matrix(path: &Path, header: Option<&[String]>, mat: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in mat.rows() {
        push_row(&mut out, &row.to_vec(), ',');
    }
    write_text(path, &out)
}

/// Reads a CSV matrix, skipping a header row if `has_header`.
pub fn read_matrix(path: &Path, has_header: bool) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut values = Vec::new();
    let mut shape = (0, None);
    for (no, line) in content_lines(&text).skip(has_header as usize) {
        let row = line
            .split(',')
            .map(|s| parse_field::<f64>(path, no, s, "matrix entry"))
            .collect::<Result<Vec<_>>>()?;
        match shape.1 {
            None => shape.1 = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(path, no, format!("expected {c} columns")));
            }
            _ => {}
        }
        values.extend(row);
        shape.0 += 1;
    }
    Ok(
        Array2::from_shape_vec((shape.0, shape.1.unwrap_or(0)), values)
            .expect("column counts checked"),
    )
}

/// Files making up a saved network directory.
pub const EDGES_FILE: &str = "edges.tsv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const META_FILE: &str = "network.meta";
pub const LABELS_FILE: &str = "labels.txt";
pub const MM_LABELS_FILE: &str = "mm_labels.csv";

/// Saves a network to `dir` (created if missing): ordered-pair edge list,
/// covariate table, a metadata file, and labels when present.
pub fn save_network(dir: &Path, net: &AttributedNetwork, names: Option<&[String]>) -> Result<()> {
    let defaults;
    let names = match names {
        Some(n) => n,
        None => {
            defaults = default_covariate_names(net.m());
            &defaults
        }
    };
    write_edge_list(&dir.join(EDGES_FILE), net.edges())?;
    write_covariate_table(&dir.join(COVARIATES_FILE), names, net.covariates())?;
    let meta = format!(
        "format = rbsbm-network/1\nn = {}\nm = {}\nmode = {}\nedges = {}\n",
        net.n(),
        net.m(),
        net.mode().name(),
        net.num_edges()
    );
    write_text(&dir.join(META_FILE), &meta)?;
    if let Some(labels) = net.labels() {
        write_labels(&dir.join(LABELS_FILE), labels)?;
    }
    if let Some(mm) = net.mm_labels() {
        write_matrix(&dir.join(MM_LABELS_FILE), None, mm)?;
    }
    Ok(())
}

/// Loads a directory written by [`save_network`]. Returns the network and
/// the covariate names.
pub fn load_saved_network(dir: &Path) -> Result<(AttributedNetwork, Vec<String>)> {
    let meta_path = dir.join(META_FILE);
    let kv = parse_key_values(&meta_path, &read_text(&meta_path)?)?;
    let mode_s = lookup(&meta_path, &kv, "mode")?;
    let mode = CovariateMode::parse(mode_s)
        .ok_or_else(|| Error::parse(&meta_path, 0, format!("unknown mode {mode_s:?}")))?;
    let n: usize = lookup_num(&meta_path, &kv, "n")?;
    let (names, dense) = read_covariate_table(&dir.join(COVARIATES_FILE))?;
    if dense.nrows() != n {
        return Err(Error::InvalidNetwork(format!(
            "metadata says n = {n} but the covariate table has {} rows",
            dense.nrows()
        )));
    }
    let edges = read_edge_list(&dir.join(EDGES_FILE), Directedness::Directed)?;
    let mut net = AttributedNetwork::new(n, edges, Covariates::from_dense(&dense, mode)?)?;
    let labels_path = dir.join(LABELS_FILE);
    if labels_path.exists() {
        net = net.with_labels(read_labels(&labels_path)?)?;
    }
    let mm_path = dir.join(MM_LABELS_FILE);
    if mm_path.exists() {
        net = net.with_mm_labels(read_matrix(&mm_path, false)?)?;
    }
    Ok((net, names))
}

/// Fitted RBM parameters of either model.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamBundle {
    OneHot(RbmParams),
    Simplex(SimplexRbmParams),
}

impl ParamBundle {
    pub fn w(&self) -> &Array2<f64> {
        match self {
            ParamBundle::OneHot(p) => &p.w,
            ParamBundle::Simplex(p) => &p.w,
        }
    }

    pub fn u(&self) -> &Array1<f64> {
        match self {
            ParamBundle::OneHot(p) => &p.u,
            ParamBundle::Simplex(p) => &p.u,
        }
    }

    pub fn v(&self) -> &Array1<f64> {
        match self {
            ParamBundle::OneHot(p) => &p.v,
            ParamBundle::Simplex(p) => &p.v,
        }
    }
}

/// Writes `key = value` headers, then `[W]` (m tab-separated rows of k
/// values), `[u]` and `[v]` (one row each).
pub fn write_params(path: &Path, params: &ParamBundle) -> Result<()> {
    let (kind, mode) = match params {
        ParamBundle::OneHot(p) => ("onehot", p.mode),
        ParamBundle::Simplex(_) => ("simplex", CovariateMode::Binary),
    };
    let w = params.w();
    let mut out = format!(
        "format = rbsbm-params/1\nkind = {kind}\nmode = {}\nm = {}\nk = {}\n[W]\n",
        mode.name(),
        w.nrows(),
        w.ncols()
    );
    for row in w.rows() {
        push_row(&mut out, &row.to_vec(), '\t');
    }
    out.push_str("[u]\n");
    push_row(&mut out, &params.u().to_vec(), '\t');
    out.push_str("[v]\n");
    push_row(&mut out, &params.v().to_vec(), '\t');
    write_text(path, &out)
}

pub fn read_params(path: &Path) -> Result<ParamBundle> {
    let text = read_text(path)?;
    let mut header = Vec::new();
    let mut sections: Vec<(String, Vec<(usize, Vec<f64>)>)> = Vec::new();
    for (no, line) in content_lines(&text) {
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
        } else if let Some((_, rows)) = sections.last_mut() {
            let row = line
                .split('\t')
                .map(|s| parse_field::<f64>(path, no, s, "parameter"))
                .collect::<Result<Vec<_>>>()?;
            rows.push((no, row));
        } else {
            header.push(line.to_string());
        }
    }
    let kv = parse_key_values(path, &header.join("\n"))?;
    let m: usize = lookup_num(path, &kv, "m")?;
    let k: usize = lookup_num(path, &kv, "k")?;
    let section = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let (_, body) = sections
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::parse(path, 0, format!("missing section [{name}]")))?;
        if body.len() != rows || body.iter().any(|(_, r)| r.len() != cols) {
            let line = body.first().map_or(0, |(no, _)| *no);
            return Err(Error::parse(
                path,
                line,
                format!("[{name}] must be {rows}×{cols}"),
            ));
        }
        Ok(body.iter().flat_map(|(_, r)| r.iter().copied()).collect())
    };
    let w = Array2::from_shape_vec((m, k), section("W", m, k)?).expect("shape checked");
    let u = Array1::from(section("u", 1, m)?);
    let v = Array1::from(section("v", 1, k)?);
    let mode_s = lookup(path, &kv, "mode")?;
    let mode = CovariateMode::parse(mode_s)
        .ok_or_else(|| Error::parse(path, 0, format!("unknown mode {mode_s:?}")))?;
    match lookup(path, &kv, "kind")? {
        "onehot" => Ok(ParamBundle::OneHot(RbmParams::new(w, u, v, mode)?)),
        "simplex" => Ok(ParamBundle::Simplex(SimplexRbmParams::new(w, u, v)?)),
        other => Err(Error::parse(
            path,
            0,
            format!("unknown parameter kind {other:?}"),
        )),
    }
}

/// Writes the held-out pairs of a split as `pos = i j` / `neg = i j` lines
/// after the given header entries.
pub fn write_split_manifest(
    path: &Path,
    split: &LinkSplit,
    header: &[(&str, String)],
) -> Result<()> {
    let mut out = String::from("format = rbsbm-split/1\n");
    let _ = writeln!(out, "n = {}", split.observed.n());
    for (k, v) in header {
        let _ = writeln!(out, "{k} = {v}");
    }
    for (key, pairs) in [("pos", &split.heldout_pos), ("neg", &split.heldout_neg)] {
        for &(i, j) in pairs {
            let _ = writeln!(out, "{key} = {i} {j}");
        }
    }
    write_text(path, &out)
}

/// A parsed split manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub n: usize,
    pub heldout_pos: Vec<(usize, usize)>,
    pub heldout_neg: Vec<(usize, usize)>,
    /// Every other header entry, in file order.
    pub extra: Vec<(String, String)>,
}

impl SplitManifest {
    /// Rebuilds the split against the full network it was drawn from.
    pub fn apply(&self, net: &AttributedNetwork) -> Result<LinkSplit> {
        if net.n() != self.n {
            return Err(Error::Split(format!(
                "manifest is for {} nodes, network has {}",
                self.n,
                net.n()
            )));
        }
        LinkSplit::from_pairs(net, self.heldout_pos.clone(), self.heldout_neg.clone())
    }
}

pub fn read_split_manifest(path: &Path) -> Result<SplitManifest> {
    let kv = parse_key_values(path, &read_text(path)?)?;
    let mut manifest = SplitManifest {
        n: lookup_num(path, &kv, "n")?,
        heldout_pos: Vec::new(),
        heldout_neg: Vec::new(),
        extra: Vec::new(),
    };
    for (k, v) in kv {
        let list = match k.as_str() {
            "pos" => &mut manifest.heldout_pos,
            "neg" => &mut manifest.heldout_neg,
            "n" | "format" => continue,
            _ => {
                manifest.extra.push((k, v));
                continue;
            }
        };
        let mut it = v.split_whitespace();
        let pair = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (
                parse_field(path, 0, a, "node id")?,
                parse_field(path, 0, b, "node id")?,
            ),
            _ => return Err(Error::parse(path, 0, format!("bad pair {v:?}"))),
        };
        list.push(pair);
    }
    Ok(manifest)
}

/// Ground-truth sidecar files.
pub const TRUTH_META_FILE: &str = "truth.meta";
pub const TRUTH_PARAMS_FILE: &str = "truth_params.txt";
pub const TRUTH_BLOCK_FILE: &str = "truth_block.csv";
pub const TRUTH_Z_FILE: &str = "truth_z.csv";
pub const TRUTH_ROLES_FILE: &str = "truth_roles.tsv";

/// Saves the latent variables of a synthetic network next to it. Mixed
/// networks also get their per-pair roles, one `sender receiver` line per
/// ordered pair i ≠ j in row-major order.
pub fn save_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    write_text(
        &dir.join(TRUTH_META_FILE),
        &format!("format = rbsbm-truth/1\nkind = {}\n", truth.kind.name()),
    )?;
    let params = match truth.kind {
        SynthKind::Pure => ParamBundle::OneHot(RbmParams::new(
            truth.w.clone(),
            truth.u.clone(),
            truth.v.clone(),
            CovariateMode::Binary,
        )?),
        SynthKind::Mixed => ParamBundle::Simplex(SimplexRbmParams::new(
            truth.w.clone(),
            truth.u.clone(),
            truth.v.clone(),
        )?),
    };
    write_params(&dir.join(TRUTH_PARAMS_FILE), &params)?;
    write_matrix(&dir.join(TRUTH_BLOCK_FILE), None, &truth.b)?;
    write_matrix(&dir.join(TRUTH_Z_FILE), None, &truth.z)?;
    if let Some(roles) = &truth.roles {
        let n = truth.z.nrows();
        let mut out = String::with_capacity(n * n * 4);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let (s, r) = roles[i * n + j];
                let _ = writeln!(out, "{s} {r}");
            }
        }
        write_text(&dir.join(TRUTH_ROLES_FILE), &out)?;
    }
    Ok(())
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let meta: PathBuf = dir.join(TRUTH_META_FILE);
    let kv = parse_key_values(&meta, &read_text(&meta)?)?;
    let kind = SynthKind::parse(lookup(&meta, &kv, "kind")?)?;
    let params = read_params(&dir.join(TRUTH_PARAMS_FILE))?;
    let z = read_matrix(&dir.join(TRUTH_Z_FILE), false)?;
    let roles_path = dir.join(TRUTH_ROLES_FILE);
    let roles = if roles_path.exists() {
        let n = z.nrows();
        let text = read_text(&roles_path)?;
        let mut roles = vec![(0u16, 0u16); n * n];
        let mut lines = content_lines(&text);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(&roles_path, 0, "too few role lines"))?;
                let mut it = line.split_whitespace();
                let s = parse_field(&roles_path, no, it.next().unwrap_or(""), "role")?;
                let r = parse_field(&roles_path, no, it.next().unwrap_or(""), "role")?;
                roles[i * n + j] = (s, r);
            }
        }
        Some(roles)
    } else {
        None
    };
    Ok(GroundTruth {
        kind,
        b: read_matrix(&dir.join(TRUTH_BLOCK_FILE), false)?,
        z,
        w: params.w().clone(),
        u: params.u().clone(),
        v: params.v().clone(),
        roles,
    })
}
