//! Dataset-specific preprocessing: binning continuous covariates, the Lazega
//! lawyers attribute table, and LINQS-style citation corpora (Cora,
//! Citeseer).

use std::collections::HashMap;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::io::{read_text, Directedness};
use crate::network::{AttributedNetwork, CovariateMode, Covariates};

/// Replaces each continuous covariate by a one-hot indicator over `bins`
/// equal-width bins of [0, 1]. Value x of column j sets column
/// j·bins + min(⌊x·bins⌋, bins − 1).
pub fn binarize_covariates(net: &AttributedNetwork, bins: usize) -> Result<AttributedNetwork> {
    if net.mode() != CovariateMode::Continuous {
        return Err(Error::ModeMismatch {
            expected: "continuous",
            found: net.mode().name(),
        });
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    let (n, m) = (net.n(), net.m());
    let covs = net.covariates();
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| j * bins + bin_of(covs.get(i, j), bins))
                .collect()
        })
        .collect();
    net.with_covariates(Covariates::from_active_sets(m * bins, &rows)?)
}

/// Names `name#b` for the binned columns.
pub fn binned_names(names: &[String], bins: usize) -> Vec<String> {
    names
        .iter()
        .flat_map(|s| (0..bins).map(move |b| format!("{s}#{b}")))
        .collect()
}

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor() as usize).min(bins - 1)
}

/// Attribute groups of the Lazega encoding, in column order, with the
/// number of one-hot columns each occupies.
pub const LAZEGA_GROUPS: [(&str, usize); 7] = [
    ("gender", 2),
    ("status", 2),
    ("office", 3),
    ("practice", 2),
    ("school", 3),
    ("age", 5),
    ("tenure", 7),
];

/// Width of the Lazega binary covariate vector.
pub const LAZEGA_WIDTH: usize = 24;

/// One-hot column names for the Lazega encoding.
pub fn lazega_names() -> Vec<String> {
    let labels: [&[&str]; 7] = [
        &["man", "woman"],
        &["partner", "associate"],
        &["boston", "hartford", "providence"],
        &["litigation", "corporate"],
        &["harvard_yale", "ucon", "other"],
        &["20-30", "31-40", "41-50", "51-60", "61-70"],
        &["0-4", "5-9", "10-14", "15-19", "20-24", "25-29", "30-35"],
    ];
    LAZEGA_GROUPS
        .iter()
        .zip(labels)
        .flat_map(|((g, _), ls)| ls.iter().map(move |l| format!("{g}={l}")))
        .collect()
}

/// Age bin: [20,30] → 0, [31,40] → 1, …, [61,70] → 4.
pub fn lazega_age_bin(age: u32) -> Option<usize> {
    match age {
        20..=30 => Some(0),
        31..=70 => Some(((age - 31) / 10 + 1) as usize),
        _ => None,
    }
}

/// Tenure bin: ⌊years / 5⌋, with 35 folded into the last bin (30–35).
pub fn lazega_tenure_bin(years: u32) -> Option<usize> {
    (years <= 35).then(|| (years as usize / 5).min(6))
}

/// Encodes the Lazega lawyers data.
///
/// `attributes`: one whitespace-separated row per lawyer with the columns
/// `id status gender office years age practice school`, coded as in the
/// distributed `ELattr.dat` (status 1 = partner, 2 = associate; gender
/// 1 = man, 2 = woman; office 1–3 = Boston, Hartford, Providence; practice
/// 1 = litigation, 2 = corporate; school 1 = Harvard/Yale, 2 = UConn,
/// 3 = other). Row order defines node ids.
///
/// `adjacency`: the n×n 0/1 friendship matrix (`ELfriend.dat`), row i
/// listing i's outgoing ties; the diagonal is ignored.
pub fn encode_lazega(attributes: &Path, adjacency: &Path) -> Result<AttributedNetwork> {
    let text = read_text(attributes)?;
    let mut rows = Vec::new();
    for (no, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<u32> = line
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::parse(attributes, no + 1, format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if f.len() != 8 {
            return Err(Error::parse(
                attributes,
                no + 1,
                format!("expected 8 fields, got {}", f.len()),
            ));
        }
        let bad =
            |what: &str, x: u32| Error::parse(attributes, no + 1, format!("unknown {what} {x}"));
        let cat = |x: u32, k: u32, what: &str| {
            if (1..=k).contains(&x) {
                Ok((x - 1) as usize)
            } else {
                Err(bad(what, x))
            }
        };
        let (status, gender, office, years, age, practice, school) =
            (f[1], f[2], f[3], f[4], f[5], f[6], f[7]);
        let codes = [
            cat(gender, 2, "gender")?,
            cat(status, 2, "status")?,
            cat(office, 3, "office")?,
            cat(practice, 2, "practice")?,
            cat(school, 3, "school")?,
            lazega_age_bin(age).ok_or_else(|| bad("age", age))?,
            lazega_tenure_bin(years).ok_or_else(|| bad("tenure", years))?,
        ];
        let mut offset = 0;
        let mut active = Vec::with_capacity(7);
        for (code, (_, width)) in codes.iter().zip(LAZEGA_GROUPS) {
            active.push(offset + code);
            offset += width;
        }
        rows.push(active);
    }
    let n = rows.len();
    let adj = read_text(adjacency)?;
    let mut edges = Vec::new();
    let mut seen_rows = 0;
    for (no, line) in adj
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let i = seen_rows;
        seen_rows += 1;
        let cells: Vec<&str> = line.split_whitespace().collect();
        if i >= n || cells.len() != n {
            return Err(Error::InvalidNetwork(format!(
                "{}:{}: adjacency must be {n}×{n}",
                adjacency.display(),
                no + 1
            )));
        }
        for (j, c) in cells.iter().enumerate() {
            match *c {
                "0" => {}
                "1" if i != j => edges.push((i, j)),
                "1" => {}
                other => {
                    return Err(Error::parse(
                        adjacency,
                        no + 1,
                        format!("bad entry {other:?}"),
                    ));
                }
            }
        }
    }
    if seen_rows != n {
        return Err(Error::InvalidNetwork(format!(
            "adjacency has {seen_rows} rows for {n} lawyers"
        )));
    }
    AttributedNetwork::new(n, edges, Covariates::from_active_sets(LAZEGA_WIDTH, &rows)?)
}

/// Loads a LINQS citation corpus.
///
/// `content`: `paper_id  w_1 … w_m  class` per line (binary word
/// indicators, whitespace-separated). `cites`: `cited  citing` per line;
/// each becomes the directed edge citing → cited. Citations naming a paper
/// absent from `content` are dropped with a warning, as are self-citations
/// and duplicates. Class labels are numbered in order of first appearance.
///
/// Returns the network (with labels) and the class names.
pub fn load_linqs(content: &Path, cites: &Path) -> Result<(AttributedNetwork, Vec<String>)> {
    let text = read_text(content)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut classes: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut m = None;
    for (no, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(Error::parse(
                content,
                no + 1,
                "expected id, words and class",
            ));
        }
        let width = f.len() - 2;
        if *m.get_or_insert(width) != width {
            return Err(Error::InvalidNetwork(format!(
                "{}:{}: {width} word columns, expected {}",
                content.display(),
                no + 1,
                m.unwrap()
            )));
        }
        if ids.insert(f[0].to_string(), rows.len()).is_some() {
            return Err(Error::parse(
                content,
                no + 1,
                format!("duplicate paper id {:?}", f[0]),
            ));
        }
        let mut active = Vec::new();
        for (j, s) in f[1..=width].iter().enumerate() {
            match *s {
                "0" => {}
                "1" => active.push(j),
                other => {
                    return Err(Error::parse(
                        content,
                        no + 1,
                        format!("bad word entry {other:?}"),
                    ));
                }
            }
        }
        rows.push(active);
        let class = f[width + 1];
        let label = match classes.iter().position(|c| c == class) {
            Some(l) => l,
            None => {
                classes.push(class.to_string());
                classes.len() - 1
            }
        };
        labels.push(label);
    }
    let cites_text = read_text(cites)?;
    let mut edges = Vec::new();
    let mut missing = 0usize;
    for (no, line) in cites_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let mut it = line.split_whitespace();
        let (Some(cited), Some(citing)) = (it.next(), it.next()) else {
            return Err(Error::parse(cites, no + 1, "expected two paper ids"));
        };
        match (ids.get(citing), ids.get(cited)) {
            (Some(&a), Some(&b)) if a != b => edges.push((a, b)),
            (Some(_), Some(_)) => {}
            _ => missing += 1,
        }
    }
    if missing > 0 {
        warn!(
            "{}: dropped {missing} citation(s) to unknown papers",
            cites.display()
        );
    }
    let n = rows.len();
    let unique = {
        let mut e = edges.clone();
        e.sort_unstable();
        e.dedup();
        e.len()
    };
    if unique < edges.len() {
        warn!(
            "{}: merged {} duplicate citation(s)",
            cites.display(),
            edges.len() - unique
        );
    }
    let net = AttributedNetwork::new(
        n,
        edges,
        Covariates::from_active_sets(m.unwrap_or(0), &rows)?,
    )?
    .with_labels(labels)?;
    Ok((net, classes))
}

/// Edge list + labels for datasets distributed as plain files:
/// `edges` (`src dst`), `covariates` (CSV with header) and optional `labels`.
pub fn load_with_labels(
    edges: &Path,
    covariates: &Path,
    labels: Option<&Path>,
    mode: CovariateMode,
    directedness: Directedness,
) -> Result<AttributedNetwork> {
    let net = crate::io::load_network(edges, covariates, mode, directedness)?;
    match labels {
        Some(p) => net.with_labels(crate::io::read_labels(p)?),
        None => Ok(net),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::fs;

    fn continuous_net() -> AttributedNetwork {
        let y = array![[0.95, 1.0, 0.0], [0.1, 0.5, 0.999]];
        let covs = Covariates::from_dense(&y, CovariateMode::Continuous).unwrap();
        AttributedNetwork::new(2, [(0, 1)], covs).unwrap()
    }

    #[test]
    fn binning_boundaries() {
        assert_eq!(bin_of(0.95, 10), 9);
        assert_eq!(bin_of(1.0, 10), 9);
        assert_eq!(bin_of(0.0, 10), 0);
        assert_eq!(bin_of(0.1, 10), 1);
        let out = binarize_covariates(&continuous_net(), 10).unwrap();
        assert_eq!(out.m(), 30);
        let active: Vec<usize> = out.covariates().row(0).map(|(j, _)| j).collect();
        assert_eq!(active, vec![9, 19, 20]);
        assert!(binarize_covariates(&out, 10).is_err());
        assert!(binarize_covariates(&continuous_net(), 1).is_err());
    }

    #[test]
    fn lazega_bins() {
        assert_eq!(lazega_age_bin(37), Some(1));
        assert_eq!(lazega_age_bin(20), Some(0));
        assert_eq!(lazega_age_bin(30), Some(0));
        assert_eq!(lazega_age_bin(31), Some(1));
        assert_eq!(lazega_age_bin(70), Some(4));
        assert_eq!(lazega_age_bin(71), None);
        assert_eq!(lazega_tenure_bin(12), Some(2));
        assert_eq!(lazega_tenure_bin(35), Some(6));
        assert_eq!(lazega_tenure_bin(36), None);
        assert_eq!(lazega_names().len(), LAZEGA_WIDTH);
        assert_eq!(
            LAZEGA_GROUPS.iter().map(|g| g.1).sum::<usize>(),
            LAZEGA_WIDTH
        );
    }

    #[test]
    fn lazega_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let attr = dir.path().join("attr.dat");
        let adj = dir.path().join("friend.dat");
        fs::write(&attr, "1 1 1 1 31 64 1 1\n2 2 2 3 12 37 2 3\n").unwrap();
        fs::write(&adj, "1 1\n0 0\n").unwrap();
        let net = encode_lazega(&attr, &adj).unwrap();
        assert_eq!(net.m(), 24);
        assert_eq!(net.edges(), &[(0, 1)]);
        let names = lazega_names();
        let row1: Vec<&str> = net
            .covariates()
            .row(1)
            .map(|(j, _)| names[j].as_str())
            .collect();
        assert_eq!(
            row1,
            [
                "gender=woman",
                "status=associate",
                "office=providence",
                "practice=corporate",
                "school=other",
                "age=31-40",
                "tenure=10-14"
            ]
        );
        fs::write(&attr, "1 1 1 4 31 64 1 1\n2 2 2 3 12 37 2 3\n").unwrap();
        assert!(encode_lazega(&attr, &adj).is_err());
    }

    #[test]
    fn linqs_loading() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("x.content");
        let cites = dir.path().join("x.cites");
        fs::write(&content, "p1 1 0 A\np2 0 1 B\np3 1 1 A\n").unwrap();
        fs::write(&cites, "p1 p2\np1 p3\nzz p1\np2 p2\np1 p2\n").unwrap();
        let (net, classes) = load_linqs(&content, &cites).unwrap();
        assert_eq!(classes, vec!["A", "B"]);
        assert_eq!(net.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(net.edges(), &[(1, 0), (2, 0)]);
        assert_eq!(
            net.covariates().to_dense(),
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        );
    }
}
