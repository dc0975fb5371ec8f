//! Structural statistics for checking how visible a poisoning is.
//!
//! The six statistics follow the usual graph-generation evaluation
//! conventions; the exact formula for each is next to its function.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

/// Above this many nodes the path length is estimated from sampled sources.
pub const EXACT_PATH_LIMIT: usize = 5000;
pub const SAMPLED_SOURCES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PathLengthMode {
    /// Exact up to [`EXACT_PATH_LIMIT`] nodes, sampled above.
    #[default]
    Auto,
    Exact,
    Sampled {
        sources: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub nodes: usize,
    pub edges: usize,
    pub gini_degree: f64,
    pub assortativity: f64,
    pub power_law_exponent: f64,
    pub triangle_count: u64,
    pub relative_edge_entropy: f64,
    pub characteristic_path_length: f64,
    /// Share of ordered source/target pairs with no connecting path.
    pub unreachable_fraction: f64,
}

impl AuditReport {
    /// The six compared statistics, in table order.
    pub fn statistics(&self) -> [(&'static str, f64); 6] {
        [
            ("Gini", self.gini_degree),
            ("Assortativity", self.assortativity),
            ("Power law exponent", self.power_law_exponent),
            ("Triangle count", self.triangle_count as f64),
            ("Relative edge entropy", self.relative_edge_entropy),
            (
                "Characteristic path length",
                self.characteristic_path_length,
            ),
        ]
    }
}

pub fn graph_statistics(g: &Graph, mode: PathLengthMode) -> Result<AuditReport> {
    if g.num_nodes() < 3 {
        return Err(Error::InvalidGraph(format!(
            "audit needs at least 3 nodes, got {}",
            g.num_nodes()
        )));
    }
    let degrees = g.degrees();
    let ((gini, assort), ((alpha, entropy), (triangles, (cpl, unreachable)))) = rayon::join(
        || (gini(&degrees), assortativity(g)),
        || {
            rayon::join(
                || (power_law_exponent(&degrees), edge_entropy(&degrees)),
                || (triangle_count(g), path_length(g, mode)),
            )
        },
    );
    Ok(AuditReport {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        gini_degree: gini,
        assortativity: assort,
        power_law_exponent: alpha,
        triangle_count: triangles,
        relative_edge_entropy: entropy,
        characteristic_path_length: cpl,
        unreachable_fraction: unreachable,
    })
}

/// `Σ (2i − n − 1)·d_(i) / (n·Σ d)` over degrees sorted ascending, `i` from 1.
pub fn gini(degrees: &[usize]) -> f64 {
    let n = degrees.len();
    let total: usize = degrees.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut d = degrees.to_vec();
    d.sort_unstable();
    let weighted: f64 = d
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x as f64)
        .sum();
    weighted / (n as f64 * total as f64)
}

/// Pearson correlation of endpoint degrees, each undirected edge counted in
/// both orientations. Zero when the degrees carry no variance (regular
/// graphs, edgeless graphs).
pub fn assortativity(g: &Graph) -> f64 {
    let (mut n, mut sx, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for u in 0..g.num_nodes() {
        let du = g.degree(u) as f64;
        for &v in g.neighbors(u) {
            let dv = g.degree(v) as f64;
            n += 1.0;
            sx += du;
            sxx += du * du;
            sxy += du * dv;
        }
    }
    if n == 0.0 {
        return 0.0;
    }
    // Symmetric orientation: both marginals are identical.
    let mean = sx / n;
    let var = sxx / n - mean * mean;
    if var <= 1e-12 * mean.max(1.0).powi(2) {
        return 0.0;
    }
    (sxy / n - mean * mean) / var
}

/// Continuous maximum-likelihood exponent with `d_min = 1` and the usual
/// half-unit continuity correction: `1 + k / Σ ln(d / (d_min − 0.5))` over
/// the `k` nodes with positive degree.
pub fn power_law_exponent(degrees: &[usize]) -> f64 {
    let (k, s) = degrees
        .iter()
        .filter(|&&d| d >= 1)
        .fold((0usize, 0.0), |(k, s), &d| {
            (k + 1, s + (d as f64 / 0.5).ln())
        });
    if k == 0 {
        return 0.0;
    }
    1.0 + k as f64 / s
}

/// Triangles via sorted-neighbor intersection over `u < v < w`.
pub fn triangle_count(g: &Graph) -> u64 {
    (0..g.num_nodes())
        .into_par_iter()
        .map(|u| {
            let nu = g.neighbors(u);
            let mut t = 0u64;
            for &v in nu.iter().filter(|&&v| v > u) {
                let nv = g.neighbors(v);
                let (mut i, mut j) = (0, 0);
                while i < nu.len() && j < nv.len() {
                    match nu[i].cmp(&nv[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            if nu[i] > v {
                                t += 1;
                            }
                            i += 1;
                            j += 1;
                        }
                    }
                }
            }
            t
        })
        .sum()
}

/// Degree-distribution entropy `−Σ (d/2m)·ln(d/2m)`, normalized by `ln n`.
pub fn edge_entropy(degrees: &[usize]) -> f64 {
    let total: usize = degrees.iter().sum();
    if total == 0 || degrees.len() < 2 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = degrees
        .iter()
        .filter(|&&d| d > 0)
        .map(|&d| {
            let p = d as f64 / total;
            -p * p.ln()
        })
        .sum();
    h / (degrees.len() as f64).ln()
}

/// Mean shortest-path length over reachable ordered pairs, and the share of
/// unreachable pairs, from the sources `mode` selects.
pub fn path_length(g: &Graph, mode: PathLengthMode) -> (f64, f64) {
    let n = g.num_nodes();
    let sources: Vec<usize> = match mode {
        PathLengthMode::Exact => (0..n).collect(),
        PathLengthMode::Auto if n <= EXACT_PATH_LIMIT => (0..n).collect(),
        PathLengthMode::Auto => sample_sources(n, SAMPLED_SOURCES, 0),
        PathLengthMode::Sampled { sources, seed } => sample_sources(n, sources, seed),
    };
    let (reached, total_dist) = sources
        .par_iter()
        .map(|&s| bfs_sum(g, s))
        .reduce(|| (0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
    let pairs = sources.len() as f64 * (n as f64 - 1.0);
    let mean = if reached == 0 {
        0.0
    } else {
        total_dist as f64 / reached as f64
    };
    let unreachable = if pairs > 0.0 {
        1.0 - reached as f64 / pairs
    } else {
        0.0
    };
    (mean, unreachable)
}

fn sample_sources(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, "audit-path-sources");
    let mut s = index::sample(&mut r, n, k.min(n)).into_vec();
    s.sort_unstable();
    s
}

/// `(reachable targets, summed distance)` from `s`, excluding `s` itself.
fn bfs_sum(g: &Graph, s: usize) -> (u64, u64) {
    let mut dist = vec![u32::MAX; g.num_nodes()];
    let mut queue = VecDeque::from([s]);
    dist[s] = 0;
    let (mut reached, mut total) = (0u64, 0u64);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                reached += 1;
                total += dist[v] as u64;
                queue.push_back(v);
            }
        }
    }
    (reached, total)
}

/// `|v′ − v| / |v|`; zero when both are zero, infinite when only `v` is.
pub fn relative_change(clean: f64, poisoned: f64) -> f64 {
    if clean == poisoned {
        0.0
    } else if clean == 0.0 {
        f64::INFINITY
    } else {
        (poisoned - clean).abs() / clean.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatDiff {
    pub statistic: String,
    pub clean: f64,
    pub poisoned: f64,
    pub relative_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDiff {
    pub clean: AuditReport,
    pub poisoned: AuditReport,
    pub rows: Vec<StatDiff>,
}

impl AuditDiff {
    pub fn max_relative_change(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.relative_change)
            .fold(0.0, f64::max)
    }

    /// Clean, poisoned and relative-change columns, one row per statistic.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>14} {:>10}",
            "Statistic", "Clean", "Poisoned", "|Δ| (%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>14.4} {:>14.4} {:>10.2}",
                r.statistic,
                r.clean,
                r.poisoned,
                100.0 * r.relative_change
            );
        }
        out
    }
}

pub fn diff_reports(clean: &AuditReport, poisoned: &AuditReport) -> AuditDiff {
    let rows = clean
        .statistics()
        .iter()
        .zip(poisoned.statistics())
        .map(|(&(name, a), (_, b))| StatDiff {
            statistic: name.to_string(),
            clean: a,
            poisoned: b,
            relative_change: relative_change(a, b),
        })
        .collect();
    AuditDiff {
        clean: clean.clone(),
        poisoned: poisoned.clone(),
        rows,
    }
}
