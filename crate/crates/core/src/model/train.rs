use ndarray::{Array2, ArrayView2};

use super::{
    cross_entropy_grad, loss_and_grad, Adam, GradRequest, ModelParams, NormalizedAdjacency,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.001,
            patience: Some(30),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation accuracy.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

/// Argmax class per row.
pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of `mask` whose prediction equals its label; 0 for an empty mask.
pub fn accuracy(pred: &[usize], labels: &[Option<usize>], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let hits = mask.iter().filter(|&&u| labels[u] == Some(pred[u])).count();
    hits as f64 / mask.len() as f64
}

/// Full-batch cross-entropy training on the train split with Adam, keeping
/// the parameters of the best validation epoch (earliest on ties).
pub fn train(
    params: ModelParams,
    adj: &NormalizedAdjacency,
    g: &Graph,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_on(params, adj, g.features(), g.labels(), split, cfg)
}

pub(crate) fn train_on(
    mut params: ModelParams,
    adj: &NormalizedAdjacency,
    x: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(Error::EmptyMask("train split"));
    }
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::param("lr", "must be positive"));
    }
    params.check_dims(x.ncols(), params.num_classes())?;
    let mut opt = Adam::new(&params, cfg.lr);
    let mut best = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut last_loss = f64::NAN;
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        let mut val_acc = 0.0;
        let (loss, grads) = loss_and_grad(
            &params,
            adj,
            x,
            None,
            |logits| {
                val_acc = accuracy(&predict(logits), labels, &split.val);
                cross_entropy_grad(logits, labels, &split.train)
            },
            GradRequest::params(),
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training epoch {epoch}"),
                value: loss,
            });
        }
        last_loss = loss;
        // val_acc belongs to the parameters before this step.
        if val_acc > best_val {
            best_val = val_acc;
            best = params.clone();
            best_epoch = epoch;
        }
        if let Some(p) = cfg.patience {
            if epoch - best_epoch > p {
                break;
            }
        }
        opt.step(&mut params, grads.params.as_ref().expect("requested"));
        epochs_run = epoch + 1;
    }
    if epochs_run == cfg.epochs && cfg.epochs > 0 {
        let logits = super::forward(&params, adj, x, None)?;
        let val_acc = accuracy(&predict(&logits), labels, &split.val);
        if val_acc > best_val {
            best_val = val_acc;
            best = params;
            best_epoch = cfg.epochs;
        }
    }
    if cfg.epochs == 0 {
        best_val = f64::NAN;
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        best_val_accuracy: best_val,
        epochs_run,
        final_train_loss: last_loss,
    })
}
