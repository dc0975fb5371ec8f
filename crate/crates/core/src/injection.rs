//! Injection plans under node and degree budgets, and injected-feature
//! initialization.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{column_bounds, EdgeRule, Graph, InjectionPlan};
use crate::rng::Rng;

/// Splits `b` injected nodes as `⌈b/2⌉` to group 0 and `⌊b/2⌋` to group 1.
pub fn group_split(b: usize) -> [usize; 2] {
    [b.div_ceil(2), b / 2]
}

/// Builds a plan whose injected nodes connect only to targets of their own
/// group. Each injected node gets `min(d, pool)` distinct targets; different
/// injected nodes may share targets.
pub fn build_plan(
    targets_by_group: [Vec<usize>; 2],
    num_features: usize,
    b: usize,
    d: usize,
    rng: &mut Rng,
) -> Result<InjectionPlan> {
    check_budgets(&targets_by_group, b, d)?;
    let counts = group_split(b);
    let mut injected_groups = Vec::with_capacity(b);
    let mut edges = Vec::new();
    for group in 0..2u8 {
        let pool = &targets_by_group[group as usize];
        for _ in 0..counts[group as usize] {
            let i = injected_groups.len();
            injected_groups.push(group);
            edges.extend(sample_targets(pool, d, rng).into_iter().map(|t| (i, t)));
        }
    }
    Ok(InjectionPlan {
        targets_by_group,
        injected_groups,
        edges,
        features: Array2::zeros((b, num_features)),
        node_budget: b,
        degree_budget: d,
        edge_rule: EdgeRule::SameGroup,
        seed: 0,
    })
}

/// Like [`build_plan`] but each injected node draws its targets from the
/// union of both pools. Group assignment (used by the feature constraint)
/// is kept.
pub fn build_cross_group_plan(
    targets_by_group: [Vec<usize>; 2],
    num_features: usize,
    b: usize,
    d: usize,
    rng: &mut Rng,
) -> Result<InjectionPlan> {
    check_budgets(&targets_by_group, b, d)?;
    let mut union: Vec<usize> = targets_by_group.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();
    let counts = group_split(b);
    let mut injected_groups = Vec::with_capacity(b);
    let mut edges = Vec::new();
    for group in 0..2u8 {
        for _ in 0..counts[group as usize] {
            let i = injected_groups.len();
            injected_groups.push(group);
            edges.extend(sample_targets(&union, d, rng).into_iter().map(|t| (i, t)));
        }
    }
    Ok(InjectionPlan {
        targets_by_group,
        injected_groups,
        edges,
        features: Array2::zeros((b, num_features)),
        node_budget: b,
        degree_budget: d,
        edge_rule: EdgeRule::AnyGroup,
        seed: 0,
    })
}

fn check_budgets(targets: &[Vec<usize>; 2], b: usize, d: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::param("b", "node budget must be at least 1"));
    }
    if d == 0 {
        return Err(Error::param("d", "degree budget must be at least 1"));
    }
    if targets.iter().all(Vec::is_empty) {
        return Err(Error::InvalidPlan("both target sets are empty".into()));
    }
    Ok(())
}

/// `min(d, |pool|)` distinct members of `pool`, sorted.
fn sample_targets(pool: &[usize], d: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = if pool.len() <= d {
        pool.to_vec()
    } else {
        index::sample(rng, pool.len(), d)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Each column uniform over the clean column range.
    #[default]
    UniformInRange,
    /// Mean of the connected targets' rows plus Gaussian noise with
    /// `σ = noise_scale · column range`.
    TargetMeanPlusNoise,
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitStrategy::UniformInRange => "uniform-in-range",
            InitStrategy::TargetMeanPlusNoise => "target-mean-plus-noise",
        })
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-in-range" | "uniform" => Ok(InitStrategy::UniformInRange),
            "target-mean-plus-noise" | "target-mean" => Ok(InitStrategy::TargetMeanPlusNoise),
            other => Err(Error::param("init_strategy", format!("unknown `{other}`"))),
        }
    }
}

/// Default noise scale for [`InitStrategy::TargetMeanPlusNoise`].
pub const TARGET_MEAN_NOISE: f64 = 0.01;

/// Initial injected feature rows. Every value lies inside the per-column
/// bounds of the clean features.
pub fn init_features(
    plan: &InjectionPlan,
    clean: &Graph,
    strategy: InitStrategy,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let bounds = column_bounds(clean.features());
    let ni = plan.num_injected();
    let d = clean.num_features();
    let mut out = Array2::zeros((ni, d));
    match strategy {
        InitStrategy::UniformInRange => {
            for i in 0..ni {
                for (j, &(lo, hi)) in bounds.iter().enumerate() {
                    out[[i, j]] = if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    };
                }
            }
        }
        InitStrategy::TargetMeanPlusNoise => {
            if noise_scale.is_nan() || noise_scale < 0.0 {
                return Err(Error::param("noise_scale", "must be non-negative"));
            }
            let mut sums = Array2::<f64>::zeros((ni, d));
            let mut counts = vec![0usize; ni];
            for &(i, t) in &plan.edges {
                if i >= ni || t >= clean.num_nodes() {
                    return Err(Error::IndexOutOfRange {
                        index: t,
                        len: clean.num_nodes(),
                    });
                }
                sums.row_mut(i).scaled_add(1.0, &clean.feature_row(t));
                counts[i] += 1;
            }
            for i in 0..ni {
                for (j, &(lo, hi)) in bounds.iter().enumerate() {
                    let mean = if counts[i] > 0 {
                        sums[[i, j]] / counts[i] as f64
                    } else {
                        0.5 * (lo + hi)
                    };
                    let sigma = noise_scale * (hi - lo);
                    let noise = if sigma > 0.0 {
                        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
                    } else {
                        0.0
                    };
                    out[[i, j]] = (mean + noise).clamp(lo, hi);
                }
            }
        }
    }
    Ok(out)
}
