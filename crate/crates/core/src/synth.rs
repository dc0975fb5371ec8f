//! Biased stochastic-block-model graphs and stratified splits.
//!
//! Sensitive groups are the blocks. A `bias` share of each group is given
//! the class matching its group index, so a classifier that absorbs the
//! structure inherits a controlled amount of group disparity.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::rng;

/// Offset added to (group 1) or subtracted from (group 0) the last feature
/// column, making it weakly informative of the sensitive attribute.
pub const SENSITIVE_FEATURE_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Edge probability inside a sensitive group.
    pub p_in: f64,
    /// Edge probability across groups.
    pub p_out: f64,
    /// Share of each group whose class is forced to `group mod classes`; the
    /// rest is spread evenly over all classes.
    pub bias: f64,
    /// Length of the class-mean offset in feature space.
    pub feature_sep: f64,
    /// Train / val / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 600,
            classes: 2,
            features: 16,
            p_in: 0.01,
            p_out: 0.004,
            bias: 0.3,
            feature_sep: 3.0,
            split: [0.5, 0.25, 0.25],
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 50 {
            return Err(Error::param("nodes", format!("{} < 50", self.nodes)));
        }
        if self.classes < 2 {
            return Err(Error::param("classes", "need at least 2 classes"));
        }
        if self.features <= self.classes {
            return Err(Error::param(
                "features",
                format!(
                    "{} columns cannot hold {} class directions plus the sensitive column",
                    self.features, self.classes
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) {
            return Err(Error::param("p_in", format!("{} not in [0, 1]", self.p_in)));
        }
        if !(0.0..=self.p_in).contains(&self.p_out) {
            return Err(Error::param(
                "p_out",
                format!("{} not in [0, p_in = {}]", self.p_out, self.p_in),
            ));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::param("bias", format!("{} not in [0, 1]", self.bias)));
        }
        if !self.feature_sep.is_finite() {
            return Err(Error::param("feature_sep", "must be finite"));
        }
        check_ratios(self.split)
    }
}

/// Draws a graph and its split. Pair sampling is quadratic in `nodes`,
/// which is fine at the sizes this generator targets.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<(Graph, Split)> {
    cfg.validate()?;
    let n = cfg.nodes;

    let mut r = rng::stream(cfg.seed, "sbm-groups");
    let mut sensitive: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    sensitive.shuffle(&mut r);

    // Each group receives its expected class counts exactly (largest-remainder
    // rounding), so the label gap between groups is set by `bias` alone.
    let mut r = rng::stream(cfg.seed, "sbm-classes");
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for group in 0..2u8 {
        let members: Vec<usize> = (0..n).filter(|&u| sensitive[u] == group).collect();
        let favored = group as usize % cfg.classes;
        let share: Vec<f64> = (0..cfg.classes)
            .map(|y| {
                let p = (1.0 - cfg.bias) / cfg.classes as f64
                    + if y == favored { cfg.bias } else { 0.0 };
                p * members.len() as f64
            })
            .collect();
        let mut pool: Vec<usize> = Vec::with_capacity(members.len());
        for (y, &q) in largest_remainder(&share, members.len()).iter().enumerate() {
            pool.extend(std::iter::repeat_n(y, q));
        }
        pool.shuffle(&mut r);
        for (&u, y) in members.iter().zip(pool) {
            labels[u] = Some(y);
        }
    }

    let mut r = rng::stream(cfg.seed, "sbm-edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if sensitive[u] == sensitive[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if r.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let mut r = rng::stream(cfg.seed, "sbm-features");
    let d = cfg.features;
    let mut x = Array2::<f64>::zeros((n, d));
    for (u, mut row) in x.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = r.sample(StandardNormal);
        }
        row[labels[u].expect("all labeled")] += cfg.feature_sep;
        row[d - 1] += if sensitive[u] == 1 {
            SENSITIVE_FEATURE_SHIFT
        } else {
            -SENSITIVE_FEATURE_SHIFT
        };
    }

    let g = Graph::with_flags(
        n,
        &edges,
        x,
        labels,
        sensitive,
        vec![false; n],
        Some(cfg.classes),
    )?;
    let split = make_split(&g, cfg.split, cfg.seed)?;
    Ok((g, split))
}

/// Integer counts summing to `total` that stay within one of `share`.
fn largest_remainder(share: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = share.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..share.len()).collect();
    order.sort_by(|&a, &b| {
        (share[b] - share[b].floor())
            .total_cmp(&(share[a] - share[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = total.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle().take(missing) {
        counts[i] += 1;
    }
    counts
}

fn check_ratios(r: [f64; 3]) -> Result<()> {
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || r[0] <= 0.0 {
        return Err(Error::param(
            "split",
            format!("{r:?}: need train > 0, all in [0, 1]"),
        ));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param("split", format!("{r:?} does not sum to 1")));
    }
    Ok(())
}

/// Class-stratified split of the labeled, non-injected nodes. Each class
/// contributes `round(ratio · size)` nodes to train and val (train at least
/// one) and the rest to test.
pub fn make_split(g: &Graph, ratios: [f64; 3], seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for u in 0..g.num_nodes() {
        if let (Some(y), false) = (g.label(u), g.is_injected(u)) {
            by_class[y].push(u);
        }
    }
    let mut r = rng::stream(seed, "split");
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (y, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::param(
                "split",
                format!(
                    "class {y} has only {} labeled nodes (need 3)",
                    members.len()
                ),
            ));
        }
        members.shuffle(&mut r);
        interleave_groups(&mut members, g.sensitive());
        let m = members.len() as f64;
        let n_train = ((ratios[0] * m).round() as usize).clamp(1, members.len());
        let n_val = ((ratios[1] * m).round() as usize).min(members.len() - n_train);
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..n_train + n_val]);
        test.extend_from_slice(&members[n_train + n_val..]);
    }
    Ok(Split::new(train, val, test))
}

/// Reorders a shuffled class so both sensitive groups are spread evenly
/// along it; any prefix then holds each group in proportion.
fn interleave_groups(members: &mut [usize], sensitive: &[u8]) {
    let mut size = [0usize; 2];
    for &u in members.iter() {
        size[sensitive[u] as usize] += 1;
    }
    let mut seen = [0usize; 2];
    let mut keyed: Vec<(f64, u8, usize)> = members
        .iter()
        .map(|&u| {
            let s = sensitive[u] as usize;
            seen[s] += 1;
            ((seen[s] as f64 - 0.5) / size[s] as f64, s as u8, u)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (slot, (_, _, u)) in members.iter_mut().zip(keyed) {
        *slot = u;
    }
}
