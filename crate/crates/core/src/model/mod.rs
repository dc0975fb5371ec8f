//! Two-layer GCN and SGC with hand-written reverse-mode gradients.
//!
//! GCN2: `Â · relu(Â X (M1 ⊙ W1) + b1) · (M2 ⊙ W2) + b2`
//! SGC:  `Â² X (M1 ⊙ W1) + b1`
//!
//! `M` are optional Bernoulli weight masks used for MC dropout. Gradients can
//! be taken with respect to the parameters, to selected rows of `X`, or both.

mod adjacency;
mod checkpoint;
mod optim;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use adjacency::NormalizedAdjacency;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use optim::Adam;
pub use train::{accuracy, predict, train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(alias = "gcn")]
    Gcn2,
    Sgc,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn2 => "gcn2",
            ModelKind::Sgc => "sgc",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" | "gcn2" => Ok(ModelKind::Gcn2),
            "sgc" => Ok(ModelKind::Sgc),
            other => Err(Error::param("model kind", format!("unknown `{other}`"))),
        }
    }
}

/// Weight and bias of one linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(cols),
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(cols),
        }
    }
}

/// Parameters of a GCN2 (two layers) or SGC (one layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub layers: Vec<Dense>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(
        kind: ModelKind,
        in_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Self {
        let layers = match kind {
            ModelKind::Gcn2 => vec![
                Dense::glorot(in_dim, hidden, rng),
                Dense::glorot(hidden, classes, rng),
            ],
            ModelKind::Sgc => vec![Dense::glorot(in_dim, classes, rng)],
        };
        ModelParams { kind, layers }
    }

    pub fn zeros(kind: ModelKind, in_dim: usize, hidden: usize, classes: usize) -> Self {
        let layers = match kind {
            ModelKind::Gcn2 => vec![Dense::zeros(in_dim, hidden), Dense::zeros(hidden, classes)],
            ModelKind::Sgc => vec![Dense::zeros(in_dim, classes)],
        };
        ModelParams { kind, layers }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            kind: self.kind,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn num_features(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    /// Hidden width; zero for SGC.
    pub fn hidden(&self) -> usize {
        match self.kind {
            ModelKind::Gcn2 => self.layers[0].weight.ncols(),
            ModelKind::Sgc => 0,
        }
    }

    /// All parameter arrays as flat slices, weights then bias per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Squared L2 norm of all parameters.
    pub fn sq_norm(&self) -> f64 {
        self.tensors().flatten().map(|v| v * v).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }

    /// Checks that the parameters fit a graph with `features` columns and
    /// `classes` classes.
    pub fn check_dims(&self, features: usize, classes: usize) -> Result<()> {
        let expected = match self.kind {
            ModelKind::Gcn2 => 2,
            ModelKind::Sgc => 1,
        };
        if self.layers.len() != expected {
            return Err(Error::Dimension(format!(
                "{} expects {expected} layers, got {}",
                self.kind,
                self.layers.len()
            )));
        }
        for w in self.layers.windows(2) {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(Error::Dimension("inconsistent hidden width".into()));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::Dimension("bias length does not match weight".into()));
            }
        }
        if self.num_features() != features || self.num_classes() != classes {
            return Err(Error::Dimension(format!(
                "model is {}→{}, data is {features}→{classes}",
                self.num_features(),
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Multiplicative masks on each layer's weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMasks(pub Vec<Array2<f64>>);

impl WeightMasks {
    pub fn ones(params: &ModelParams) -> Self {
        WeightMasks(
            params
                .layers
                .iter()
                .map(|l| Array2::ones(l.weight.raw_dim()))
                .collect(),
        )
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if self.0.len() != params.layers.len()
            || self
                .0
                .iter()
                .zip(&params.layers)
                .any(|(m, l)| m.dim() != l.weight.dim())
        {
            return Err(Error::Dimension("mask shapes do not match weights".into()));
        }
        Ok(())
    }
}

fn effective_weights(params: &ModelParams, masks: Option<&WeightMasks>) -> Vec<Array2<f64>> {
    match masks {
        Some(m) => params
            .layers
            .iter()
            .zip(&m.0)
            .map(|(l, m)| &l.weight * m)
            .collect(),
        None => params.layers.iter().map(|l| l.weight.clone()).collect(),
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    weights: Vec<Array2<f64>>,
    /// `Â X` (GCN2) or `Â² X` (SGC).
    propagated: Array2<f64>,
    /// Pre-activation of the hidden layer (GCN2 only).
    hidden_pre: Option<Array2<f64>>,
    /// `Â relu(hidden_pre)` (GCN2 only).
    hidden_prop: Option<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// Runs the model and keeps the intermediates.
pub fn forward_cached(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: ArrayView2<'_, f64>,
    masks: Option<&WeightMasks>,
) -> Result<ForwardCache> {
    if x.nrows() != adj.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            adj.num_nodes()
        )));
    }
    if x.ncols() != params.num_features() {
        return Err(Error::Dimension(format!(
            "{} feature columns, model expects {}",
            x.ncols(),
            params.num_features()
        )));
    }
    if let Some(m) = masks {
        m.check(params)?;
    }
    let weights = effective_weights(params, masks);
    match params.kind {
        ModelKind::Gcn2 => {
            let propagated = adj.matmul(x);
            let hidden_pre = propagated.dot(&weights[0]) + &params.layers[0].bias;
            let hidden = hidden_pre.mapv(|v| v.max(0.0));
            let hidden_prop = adj.matmul(hidden.view());
            let logits = hidden_prop.dot(&weights[1]) + &params.layers[1].bias;
            Ok(ForwardCache {
                weights,
                propagated,
                hidden_pre: Some(hidden_pre),
                hidden_prop: Some(hidden_prop),
                logits,
            })
        }
        ModelKind::Sgc => {
            let once = adj.matmul(x);
            let propagated = adj.matmul(once.view());
            let logits = propagated.dot(&weights[0]) + &params.layers[0].bias;
            Ok(ForwardCache {
                weights,
                propagated,
                hidden_pre: None,
                hidden_prop: None,
                logits,
            })
        }
    }
}

/// Logits `n × C`.
pub fn forward(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: ArrayView2<'_, f64>,
    masks: Option<&WeightMasks>,
) -> Result<Array2<f64>> {
    forward_cached(params, adj, x, masks).map(|c| c.logits)
}

/// Which gradients to compute.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradRequest<'a> {
    pub params: bool,
    /// Rows of `X` to differentiate with respect to.
    pub feature_rows: Option<&'a [usize]>,
}

impl<'a> GradRequest<'a> {
    pub fn params() -> Self {
        GradRequest {
            params: true,
            feature_rows: None,
        }
    }

    pub fn features(rows: &'a [usize]) -> Self {
        GradRequest {
            params: false,
            feature_rows: Some(rows),
        }
    }

    pub fn both(rows: &'a [usize]) -> Self {
        GradRequest {
            params: true,
            feature_rows: Some(rows),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient with respect to the (unmasked) parameters.
    pub params: Option<ModelParams>,
    /// One row per requested feature row, in request order.
    pub features: Option<Array2<f64>>,
}

/// Pulls `dlogits` back through the cached forward pass.
pub fn backward(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    cache: &ForwardCache,
    masks: Option<&WeightMasks>,
    dlogits: ArrayView2<'_, f64>,
    request: GradRequest<'_>,
) -> Gradients {
    let mask_grad = |layer: usize, g: Array2<f64>| match masks {
        Some(m) => g * &m.0[layer],
        None => g,
    };
    match params.kind {
        ModelKind::Gcn2 => {
            let hidden_pre = cache.hidden_pre.as_ref().expect("gcn2 cache");
            let hidden_prop = cache.hidden_prop.as_ref().expect("gcn2 cache");
            // d(hidden_prop) then through Â (symmetric) and the relu.
            let d_hidden_prop = dlogits.dot(&cache.weights[1].t());
            let mut d_pre = adj.matmul(d_hidden_prop.view());
            Zip::from(&mut d_pre).and(hidden_pre).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            let param_grads = request.params.then(|| {
                let w2 = mask_grad(1, hidden_prop.t().dot(&dlogits));
                let b2 = dlogits.sum_axis(Axis(0));
                let w1 = mask_grad(0, cache.propagated.t().dot(&d_pre));
                let b1 = d_pre.sum_axis(Axis(0));
                ModelParams {
                    kind: params.kind,
                    layers: vec![
                        Dense {
                            weight: w1,
                            bias: b1,
                        },
                        Dense {
                            weight: w2,
                            bias: b2,
                        },
                    ],
                }
            });
            let feature_grads = request.feature_rows.map(|rows| {
                let d_prop = d_pre.dot(&cache.weights[0].t());
                adj.matmul_rows(d_prop.view(), rows)
            });
            Gradients {
                params: param_grads,
                features: feature_grads,
            }
        }
        ModelKind::Sgc => {
            let param_grads = request.params.then(|| ModelParams {
                kind: params.kind,
                layers: vec![Dense {
                    weight: mask_grad(0, cache.propagated.t().dot(&dlogits)),
                    bias: dlogits.sum_axis(Axis(0)),
                }],
            });
            let feature_grads = request.feature_rows.map(|rows| {
                let d_prop = dlogits.dot(&cache.weights[0].t());
                let once = adj.matmul(d_prop.view());
                adj.matmul_rows(once.view(), rows)
            });
            Gradients {
                params: param_grads,
                features: feature_grads,
            }
        }
    }
}

/// Forward, evaluate `objective` on the logits, and backpropagate its
/// logit gradient.
pub fn loss_and_grad<F>(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: ArrayView2<'_, f64>,
    masks: Option<&WeightMasks>,
    objective: F,
    request: GradRequest<'_>,
) -> Result<(f64, Gradients)>
where
    F: FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let cache = forward_cached(params, adj, x, masks)?;
    let (loss, dlogits) = objective(&cache.logits)?;
    let grads = backward(params, adj, &cache, masks, dlogits.view(), request);
    Ok((loss, grads))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn check_mask(logits: &Array2<f64>, labels: &[Option<usize>], mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("cross-entropy mask"));
    }
    for &u in mask {
        if u >= logits.nrows() {
            return Err(Error::IndexOutOfRange {
                index: u,
                len: logits.nrows(),
            });
        }
        match labels.get(u).copied().flatten() {
            Some(y) if y < logits.ncols() => {}
            Some(y) => {
                return Err(Error::Dimension(format!(
                    "label {y} of node {u} outside {} classes",
                    logits.ncols()
                )))
            }
            None => {
                return Err(Error::InvalidGraph(format!(
                    "node {u} in mask has no label"
                )))
            }
        }
    }
    Ok(())
}

/// Mean negative log-softmax of the true class over `mask`.
pub fn cross_entropy(
    logits: &Array2<f64>,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<f64> {
    cross_entropy_grad(logits, labels, mask).map(|(l, _)| l)
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad(
    logits: &Array2<f64>,
    labels: &[Option<usize>],
    mask: &[usize],
) -> Result<(f64, Array2<f64>)> {
    check_mask(logits, labels, mask)?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let scale = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    for &u in mask {
        let y = labels[u].expect("checked");
        let row = logits.row(u);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let mut g = grad.row_mut(u);
        for (c, &v) in row.iter().enumerate() {
            g[c] += scale * (v - lse).exp();
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}
