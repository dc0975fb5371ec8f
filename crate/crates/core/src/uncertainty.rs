//! MC-dropout uncertainty: a Bayesian GCN trained under Bernoulli weight
//! masks, per-node predictive variance, and uncertainty-ranked target
//! selection.

use std::cell::Cell;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::model::{
    cross_entropy_grad, loss_and_grad, softmax_rows, Adam, GradRequest, ModelKind, ModelParams,
    NormalizedAdjacency, WeightMasks,
};
use crate::rng::{self, Rng};

thread_local! {
    static INVOCATIONS: Cell<usize> = const { Cell::new(0) };
}

/// How many times this thread has entered [`train_bayesian`] or
/// [`estimate_uncertainty`].
pub fn invocation_count() -> usize {
    INVOCATIONS.with(Cell::get)
}

fn record_invocation() {
    INVOCATIONS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesianConfig {
    /// Mask samples per step and per uncertainty estimate.
    pub samples: usize,
    /// Probability that a mask entry is 1.
    pub keep_prob: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for BayesianConfig {
    fn default() -> Self {
        BayesianConfig {
            samples: 20,
            keep_prob: 0.5,
            hidden: 128,
            epochs: 100,
            lr: 0.01,
        }
    }
}

impl BayesianConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::param("samples", "must be at least 1"));
        }
        check_keep_prob(self.keep_prob)?;
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::param("lr", "must be positive"));
        }
        Ok(())
    }
}

fn check_keep_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("keep_prob", format!("{p} not in (0, 1]")));
    }
    Ok(())
}

/// Independent Bernoulli(`keep_prob`) masks shaped like each weight matrix.
pub fn sample_masks(params: &ModelParams, keep_prob: f64, rng: &mut Rng) -> Result<WeightMasks> {
    check_keep_prob(keep_prob)?;
    Ok(WeightMasks(
        params
            .layers
            .iter()
            .map(|l| {
                if keep_prob >= 1.0 {
                    Array2::ones(l.weight.raw_dim())
                } else {
                    Array2::from_shape_simple_fn(l.weight.raw_dim(), || {
                        if rng.random_bool(keep_prob) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                }
            })
            .collect(),
    ))
}

/// Mean masked cross-entropy over `masks` plus `(1 - p) / (2T) ‖θ‖²`, with
/// its parameter gradient.
pub fn bayesian_objective(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
    train: &[usize],
    masks: &[WeightMasks],
    keep_prob: f64,
) -> Result<(f64, ModelParams)> {
    if masks.is_empty() {
        return Err(Error::param("samples", "need at least one mask"));
    }
    let t = masks.len() as f64;
    let per_sample: Vec<Result<(f64, ModelParams)>> = masks
        .par_iter()
        .map(|m| {
            let (loss, g) = loss_and_grad(
                params,
                adj,
                x,
                Some(m),
                |logits| cross_entropy_grad(logits, labels, train),
                GradRequest::params(),
            )?;
            Ok((loss, g.params.expect("requested")))
        })
        .collect();
    let reg = (1.0 - keep_prob) / (2.0 * t);
    let mut grad = params.clone();
    grad.scale(2.0 * reg);
    let mut loss = reg * params.sq_norm();
    for r in per_sample {
        let (l, g) = r?;
        loss += l / t;
        grad.axpy(1.0 / t, &g);
    }
    Ok((loss, grad))
}

/// Trains the Bayesian GCN, drawing fresh masks at every step.
pub fn train_bayesian(
    g: &Graph,
    split: &Split,
    cfg: &BayesianConfig,
    seed: u64,
) -> Result<ModelParams> {
    record_invocation();
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyMask("train split"));
    }
    let adj = NormalizedAdjacency::new(g);
    let mut params = ModelParams::init(
        ModelKind::Gcn2,
        g.num_features(),
        cfg.hidden,
        g.num_classes(),
        &mut rng::stream(seed, "bayesian-init"),
    );
    let mut opt = Adam::new(&params, cfg.lr);
    for epoch in 0..cfg.epochs {
        let masks = (0..cfg.samples)
            .map(|i| {
                let idx = (epoch * cfg.samples + i) as u64;
                sample_masks(
                    &params,
                    cfg.keep_prob,
                    &mut rng::indexed_stream(seed, "bayesian-train-mask", idx),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = bayesian_objective(
            &params,
            &adj,
            g.features(),
            g.labels(),
            &split.train,
            &masks,
            cfg.keep_prob,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("bayesian epoch {epoch}"),
                value: loss,
            });
        }
        opt.step(&mut params, &grad);
    }
    Ok(params)
}

/// Per-node predictive uncertainty: the sum over classes of the population
/// variance of the softmax output across `samples` masked passes.
pub fn estimate_uncertainty(
    params: &ModelParams,
    g: &Graph,
    samples: usize,
    keep_prob: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    record_invocation();
    if samples < 1 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    check_keep_prob(keep_prob)?;
    let adj = NormalizedAdjacency::new(g);
    let probs = (0..samples)
        .into_par_iter()
        .map(|i| {
            let masks = sample_masks(
                params,
                keep_prob,
                &mut rng::indexed_stream(seed, "mc-uncertainty", i as u64),
            )?;
            let logits = crate::model::forward(params, &adj, g.features(), Some(&masks))?;
            Ok(softmax_rows(&logits))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(variance_sum(&probs))
}

/// Sum over columns of the across-sample population variance, per row.
/// Deviations are taken from the first sample so identical samples give an
/// exact zero.
pub(crate) fn variance_sum(samples: &[Array2<f64>]) -> Vec<f64> {
    let first = &samples[0];
    let t = samples.len() as f64;
    let (n, c) = first.dim();
    let mut out = vec![0.0; n];
    for (u, o) in out.iter_mut().enumerate() {
        for k in 0..c {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for p in samples {
                let d = p[[u, k]] - first[[u, k]];
                s += d;
                s2 += d * d;
            }
            let mean = s / t;
            *o += (s2 / t - mean * mean).max(0.0);
        }
    }
    out
}

/// Picks, within each sensitive group's candidates, the `⌈k·|group|⌉` nodes
/// of highest uncertainty (ties by ascending id). Each output set is sorted.
pub fn select_targets(
    uncertainty: &[f64],
    g: &Graph,
    candidates: &[usize],
    k_percent: f64,
) -> Result<[Vec<usize>; 2]> {
    if !(k_percent > 0.0 && k_percent <= 1.0) {
        return Err(Error::param(
            "k_percent",
            format!("{k_percent} not in (0, 1]"),
        ));
    }
    if uncertainty.len() < g.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} uncertainty values for {} nodes",
            uncertainty.len(),
            g.num_nodes()
        )));
    }
    let mut by_group: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut uniq = candidates.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    for u in uniq {
        if u >= g.num_nodes() {
            return Err(Error::IndexOutOfRange {
                index: u,
                len: g.num_nodes(),
            });
        }
        by_group[g.sensitive()[u] as usize].push(u);
    }
    let mut out: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (group, pool) in by_group.iter_mut().enumerate() {
        if pool.is_empty() {
            return Err(Error::EmptyGroup(group as u8));
        }
        let take = quantile_count(k_percent, pool.len());
        pool.sort_by(|&a, &b| uncertainty[b].total_cmp(&uncertainty[a]).then(a.cmp(&b)));
        let mut chosen = pool[..take].to_vec();
        chosen.sort_unstable();
        out[group] = chosen;
    }
    Ok(out)
}

/// `⌈k·n⌉`, ignoring floating-point noise just above an integer.
pub(crate) fn quantile_count(k: f64, n: usize) -> usize {
    let raw = k * n as f64;
    let rounded = raw.round();
    let c = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (c as usize).min(n)
}

/// Per-node uncertainty and the chosen targets, for audit and defense reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub uncertainty: Vec<f64>,
    pub samples: usize,
    pub keep_prob: f64,
    pub selected_targets_by_group: [Vec<usize>; 2],
}

impl UncertaintyReport {
    /// CSV with columns `node,group,uncertainty,selected`.
    pub fn write_csv<W: Write>(&self, g: &Graph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "group", "uncertainty", "selected"])?;
        let selected: std::collections::BTreeSet<usize> = self
            .selected_targets_by_group
            .iter()
            .flatten()
            .copied()
            .collect();
        for (u, val) in self.uncertainty.iter().enumerate() {
            w.write_record([
                u.to_string(),
                g.sensitive()[u].to_string(),
                val.to_string(),
                u8::from(selected.contains(&u)).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<uncertainty csv>", e))?;
        Ok(())
    }
}
