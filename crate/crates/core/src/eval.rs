//! Group-fairness metrics, the victim retraining protocol, and the
//! uncertainty-masking defense.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::model::{
    forward, predict, train, ModelKind, ModelParams, NormalizedAdjacency, TrainConfig,
};
use crate::rng;
use crate::uncertainty::{estimate_uncertainty, quantile_count};

/// Per-class gaps behind a fairness number. `None` marks a skipped class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessBreakdown {
    pub value: f64,
    pub per_class: Vec<Option<f64>>,
}

fn split_by_group(sensitive: &[u8], mask: &[usize]) -> Result<[Vec<usize>; 2]> {
    let mut groups = [Vec::new(), Vec::new()];
    for &u in mask {
        groups[sensitive[u] as usize].push(u);
    }
    for (s, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::EmptyGroup(s as u8));
        }
    }
    Ok(groups)
}

/// Statistical-parity gap: mean over classes of the absolute difference in
/// predicted-class rates between the two groups.
pub fn delta_sp_breakdown(
    pred: &[usize],
    sensitive: &[u8],
    mask: &[usize],
    num_classes: usize,
) -> Result<FairnessBreakdown> {
    let groups = split_by_group(sensitive, mask)?;
    let rate = |members: &[usize], y: usize| {
        members.iter().filter(|&&u| pred[u] == y).count() as f64 / members.len() as f64
    };
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|y| Some((rate(&groups[0], y) - rate(&groups[1], y)).abs()))
        .collect();
    let value = per_class.iter().flatten().sum::<f64>() / num_classes.max(1) as f64;
    Ok(FairnessBreakdown { value, per_class })
}

pub fn delta_sp(
    pred: &[usize],
    sensitive: &[u8],
    mask: &[usize],
    num_classes: usize,
) -> Result<f64> {
    delta_sp_breakdown(pred, sensitive, mask, num_classes).map(|b| b.value)
}

/// Equal-opportunity gap: mean over classes of the absolute recall
/// difference between groups. A class missing from one group is skipped
/// with a warning; a class missing from both is skipped silently.
pub fn delta_eo_breakdown(
    pred: &[usize],
    labels: &[Option<usize>],
    sensitive: &[u8],
    mask: &[usize],
    num_classes: usize,
) -> Result<FairnessBreakdown> {
    let groups = split_by_group(sensitive, mask)?;
    let mut per_class = Vec::with_capacity(num_classes);
    for y in 0..num_classes {
        let recall = |members: &[usize]| {
            let (mut hit, mut tot) = (0usize, 0usize);
            for &u in members {
                if labels[u] == Some(y) {
                    tot += 1;
                    if pred[u] == y {
                        hit += 1;
                    }
                }
            }
            (tot > 0).then(|| hit as f64 / tot as f64)
        };
        match (recall(&groups[0]), recall(&groups[1])) {
            (Some(a), Some(b)) => per_class.push(Some((a - b).abs())),
            (None, None) => per_class.push(None),
            _ => {
                log::warn!("class {y} present in only one sensitive group; skipped");
                per_class.push(None);
            }
        }
    }
    let used: Vec<f64> = per_class.iter().flatten().copied().collect();
    let value = if used.is_empty() {
        0.0
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    };
    Ok(FairnessBreakdown { value, per_class })
}

pub fn delta_eo(
    pred: &[usize],
    labels: &[Option<usize>],
    sensitive: &[u8],
    mask: &[usize],
    num_classes: usize,
) -> Result<f64> {
    delta_eo_breakdown(pred, labels, sensitive, mask, num_classes).map(|b| b.value)
}

/// Mean, sample standard deviation and the raw per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl SeedStat {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / n
        };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        SeedStat { mean, std, values }
    }
}

impl fmt::Display for SeedStat {
    /// Percentages, `mean ± std`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Test-split metrics of one victim over several seeds. Values are
/// fractions; the text table shows percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub victim: ModelKind,
    pub seeds: Vec<u64>,
    pub accuracy: SeedStat,
    pub delta_sp: SeedStat,
    pub delta_eo: SeedStat,
    /// Per-seed, per-class breakdowns.
    pub sp_per_class: Vec<Vec<Option<f64>>>,
    pub eo_per_class: Vec<Vec<Option<f64>>>,
}

impl MetricsReport {
    /// Before/after table with one row per labelled report.
    pub fn table(rows: &[(&str, &MetricsReport)]) -> String {
        let mut out = String::new();
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
        let _ = writeln!(
            out,
            "{:<width$}  {:>16}  {:>16}  {:>16}",
            "", "Acc (%)", "ΔSP (%)", "ΔEO (%)"
        );
        for (label, r) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>16}  {:>16}  {:>16}",
                label,
                r.accuracy.to_string(),
                r.delta_sp.to_string(),
                r.delta_eo.to_string()
            );
        }
        out
    }
}

/// Victim architecture and training protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VictimConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Early-stopping patience on validation accuracy; 0 disables it.
    pub patience: usize,
}

impl Default for VictimConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        VictimConfig {
            hidden: 128,
            epochs: t.epochs,
            lr: 0.01,
            patience: t.patience.unwrap_or(0),
        }
    }
}

impl VictimConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            patience: (self.patience > 0).then_some(self.patience),
        }
    }
}

struct SeedResult {
    accuracy: f64,
    sp: FairnessBreakdown,
    eo: FairnessBreakdown,
}

/// Trains a fresh victim per seed on `g` and scores it on the test split.
/// Seeds run in parallel; results are aggregated in seed order.
pub fn evaluate_victim(
    g: &Graph,
    split: &Split,
    kind: ModelKind,
    seeds: &[u64],
    cfg: &VictimConfig,
) -> Result<MetricsReport> {
    split.validate(g)?;
    if seeds.is_empty() {
        return Err(Error::param("seeds", "need at least one seed"));
    }
    let adj = NormalizedAdjacency::new(g);
    let tcfg = cfg.train_config();
    let results: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&seed| {
            let init = ModelParams::init(
                kind,
                g.num_features(),
                cfg.hidden,
                g.num_classes(),
                &mut rng::stream(seed, "victim-init"),
            );
            let outcome = train(init, &adj, g, split, &tcfg)?;
            let pred = predict(&forward(&outcome.params, &adj, g.features(), None)?);
            let test = &split.test;
            let correct = test
                .iter()
                .filter(|&&u| g.label(u) == Some(pred[u]))
                .count();
            Ok(SeedResult {
                accuracy: correct as f64 / test.len().max(1) as f64,
                sp: delta_sp_breakdown(&pred, g.sensitive(), test, g.num_classes())?,
                eo: delta_eo_breakdown(&pred, g.labels(), g.sensitive(), test, g.num_classes())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        victim: kind,
        seeds: seeds.to_vec(),
        accuracy: SeedStat::new(results.iter().map(|r| r.accuracy).collect()),
        delta_sp: SeedStat::new(results.iter().map(|r| r.sp.value).collect()),
        delta_eo: SeedStat::new(results.iter().map(|r| r.eo.value).collect()),
        sp_per_class: results.iter().map(|r| r.sp.per_class.clone()).collect(),
        eo_per_class: results.iter().map(|r| r.eo.per_class.clone()).collect(),
    })
}

/// Drops the `⌈η·|train|⌉` most uncertain training nodes, with uncertainty
/// recomputed on `g` under `bayesian`. Validation and test sets are kept.
pub fn defend_mask(
    g: &Graph,
    split: &Split,
    bayesian: &ModelParams,
    eta: f64,
    samples: usize,
    keep_prob: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param("eta", format!("{eta} not in [0, 1]")));
    }
    let drop = quantile_count(eta, split.train.len());
    if drop == 0 {
        return Ok(split.clone());
    }
    if drop >= split.train.len() {
        return Err(Error::param(
            "eta",
            format!(
                "{eta} would remove all {} training nodes",
                split.train.len()
            ),
        ));
    }
    let u = estimate_uncertainty(bayesian, g, samples, keep_prob, seed)?;
    let mut ranked = split.train.clone();
    ranked.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    let kept = ranked[drop..].to_vec();
    Ok(Split::new(kept, split.val.clone(), split.test.clone()))
}

/// One point of a defense sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefensePoint {
    pub eta: f64,
    pub removed: usize,
    pub report: MetricsReport,
}

/// Evaluates the victim after masking for each `η`.
#[allow(clippy::too_many_arguments)]
pub fn defense_sweep(
    g: &Graph,
    split: &Split,
    bayesian: &ModelParams,
    etas: &[f64],
    samples: usize,
    keep_prob: f64,
    kind: ModelKind,
    seeds: &[u64],
    cfg: &VictimConfig,
    seed: u64,
) -> Result<Vec<DefensePoint>> {
    etas.iter()
        .map(|&eta| {
            let masked = defend_mask(g, split, bayesian, eta, samples, keep_prob, seed)?;
            let report = evaluate_victim(g, &masked, kind, seeds, cfg)?;
            Ok(DefensePoint {
                eta,
                removed: split.train.len() - masked.train.len(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sp_oracle_example() {
        // 10 nodes per group; group 0 predicts class 1 for 8, group 1 for 3.
        let mut pred = Vec::new();
        let mut sens = Vec::new();
        for i in 0..10 {
            pred.push(usize::from(i < 8));
            sens.push(0);
        }
        for i in 0..10 {
            pred.push(usize::from(i < 3));
            sens.push(1);
        }
        let mask: Vec<usize> = (0..20).collect();
        let v = delta_sp(&pred, &sens, &mask, 2).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let flipped: Vec<u8> = sens.iter().map(|s| 1 - s).collect();
        assert_eq!(delta_sp(&pred, &flipped, &mask, 2).unwrap(), v);
    }

    #[test]
    fn sp_identical_rates_is_zero() {
        let pred = [0, 1, 0, 1];
        let sens = [0, 0, 1, 1];
        assert_eq!(delta_sp(&pred, &sens, &[0, 1, 2, 3], 2).unwrap(), 0.0);
    }

    #[test]
    fn eo_oracle_example() {
        // Group 0: class-0 recall 1.0, class-1 recall 0.5.
        // Group 1: both recalls 0.5. Gaps (0.5, 0) -> 0.25.
        let labels = [0, 0, 1, 1, 0, 0, 1, 1].map(Some);
        let pred = [0, 0, 1, 0, 0, 1, 1, 0];
        let sens = [0, 0, 0, 0, 1, 1, 1, 1];
        let mask: Vec<usize> = (0..8).collect();
        let v = delta_eo(&pred, &labels, &sens, &mask, 2).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier_has_no_eo_gap() {
        let labels = [0, 1, 2, 0, 1, 2].map(Some);
        let pred = [0, 1, 2, 0, 1, 2];
        let sens = [0, 0, 0, 1, 1, 1];
        assert_eq!(
            delta_eo(&pred, &labels, &sens, &[0, 1, 2, 3, 4, 5], 3).unwrap(),
            0.0
        );
    }

    #[test]
    fn eo_skips_one_sided_class() {
        let labels = [0, 1, 0].map(Some);
        let pred = [0, 0, 1];
        let sens = [0, 0, 1];
        let b = delta_eo_breakdown(&pred, &labels, &sens, &[0, 1, 2], 3).unwrap();
        assert_eq!(b.per_class, vec![Some(1.0), None, None]);
        assert_eq!(b.value, 1.0);
    }

    #[test]
    fn constant_predictor() {
        // SP gap vanishes; EO equals the recall gap of the predicted class
        // averaged with the zero-recall class.
        let labels = [0, 0, 1, 1, 0, 1, 1, 1].map(Some);
        let pred = [0; 8];
        let sens = [0, 0, 0, 0, 1, 1, 1, 1];
        let mask: Vec<usize> = (0..8).collect();
        assert_eq!(delta_sp(&pred, &sens, &mask, 2).unwrap(), 0.0);
        assert_eq!(delta_eo(&pred, &labels, &sens, &mask, 2).unwrap(), 0.0);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(matches!(
            delta_sp(&[0, 1], &[0, 0], &[0, 1], 2),
            Err(Error::EmptyGroup(1))
        ));
    }

    #[test]
    fn seed_stat_uses_sample_std() {
        let s = SeedStat::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(SeedStat::new(vec![0.4]).std, 0.0);
    }
}
