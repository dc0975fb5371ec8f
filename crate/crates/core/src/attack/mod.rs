//! The injection attack: pick uncertain targets, wire injected nodes to
//! same-group targets, then alternate surrogate training with descent on the
//! injected features under the combined fairness objective.

mod losses;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{apply_plan, column_bounds, Graph, InjectionPlan, Split};
use crate::injection::{self, InitStrategy, TARGET_MEAN_NOISE};
use crate::model::{
    backward, cross_entropy_grad, forward_cached, train, Adam, GradRequest, Gradients, ModelKind,
    ModelParams, NormalizedAdjacency, TrainConfig,
};
use crate::rng;
use crate::uncertainty::{self, quantile_count, BayesianConfig, UncertaintyReport};

pub use losses::{combine, loss_cf, loss_eo, loss_sp, EoForm, LossBreakdown};

/// Update rule for the injected features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureOptimizer {
    /// `X_I ← X_I − lr · ∇L`. Its step size depends on the feature scale.
    Sgd,
    /// Per-entry adaptive moments, same constants as parameter training.
    /// Steps are scale-free, so the default learning rate moves features by
    /// a comparable amount whatever the input range.
    #[default]
    Adam,
}

/// Every knob of one attack run. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Injected node budget; `None` means 1% of the labeled nodes.
    pub node_budget: Option<usize>,
    /// Degree budget per injected node; `None` means the rounded average
    /// clean degree.
    pub degree_budget: Option<usize>,
    /// Fraction of each group's candidates taken as targets.
    pub k_percent: f64,
    /// Weight of the feature constraint.
    pub alpha: f64,
    /// Weight of the two fairness losses.
    pub beta: f64,
    pub lr_surrogate: f64,
    pub lr_feature: f64,
    pub max_iter: usize,
    pub max_step: usize,
    pub surrogate_hidden: usize,
    /// Mask samples for Bayesian training and uncertainty estimation.
    pub samples: usize,
    /// Bernoulli keep probability of the weight masks.
    pub keep_prob: f64,
    pub bayes_hidden: usize,
    pub bayes_epochs: usize,
    pub bayes_lr: f64,
    pub seed: u64,
    /// Round injected features to integers once optimization ends.
    pub discrete_features: bool,
    pub init_strategy: InitStrategy,
    pub eo_form: EoForm,
    pub feature_optimizer: FeatureOptimizer,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let bayes = BayesianConfig::default();
        AttackConfig {
            node_budget: None,
            degree_budget: None,
            k_percent: 0.5,
            alpha: 0.01,
            beta: 4.0,
            lr_surrogate: 0.001,
            lr_feature: 0.001,
            max_iter: 20,
            max_step: 50,
            surrogate_hidden: 128,
            samples: bayes.samples,
            keep_prob: bayes.keep_prob,
            bayes_hidden: bayes.hidden,
            bayes_epochs: bayes.epochs,
            bayes_lr: bayes.lr,
            seed: 0,
            discrete_features: false,
            init_strategy: InitStrategy::default(),
            eo_form: EoForm::default(),
            feature_optimizer: FeatureOptimizer::default(),
        }
    }
}

impl AttackConfig {
    pub fn bayesian(&self) -> BayesianConfig {
        BayesianConfig {
            samples: self.samples,
            keep_prob: self.keep_prob,
            hidden: self.bayes_hidden,
            epochs: self.bayes_epochs,
            lr: self.bayes_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive")))
            }
        };
        if !(self.k_percent > 0.0 && self.k_percent <= 1.0) {
            return Err(Error::param(
                "k_percent",
                format!("{} not in (0, 1]", self.k_percent),
            ));
        }
        positive("lr_surrogate", self.lr_surrogate)?;
        positive("lr_feature", self.lr_feature)?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be non-negative")));
            }
        }
        if self.node_budget == Some(0) {
            return Err(Error::param("node_budget", "must be at least 1"));
        }
        if self.degree_budget == Some(0) {
            return Err(Error::param("degree_budget", "must be at least 1"));
        }
        if self.surrogate_hidden == 0 || self.bayes_hidden == 0 {
            return Err(Error::param("hidden", "must be at least 1"));
        }
        self.bayesian().validate()
    }

    /// `(b, d)` for `clean`.
    pub fn resolve_budgets(&self, clean: &Graph) -> (usize, usize) {
        let labeled = clean.labeled_nodes().len();
        let b = self
            .node_budget
            .unwrap_or_else(|| ((labeled as f64 * 0.01).round() as usize).max(1));
        let d = self.degree_budget.unwrap_or_else(|| {
            let n = clean.num_nodes().max(1) as f64;
            ((2.0 * clean.num_edges() as f64 / n).round() as usize).max(1)
        });
        (b, d)
    }
}

/// Which scalar to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    CrossEntropy,
    StatisticalParity,
    EqualOpportunity,
    FeatureConstraint,
    Total,
}

/// Everything the attack objective needs besides parameters and features.
#[derive(Debug, Clone, Copy)]
pub struct AttackProblem<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub labels: &'a [Option<usize>],
    pub sensitive: &'a [u8],
    pub train: &'a [usize],
    /// Rows of the feature matrix that belong to injected nodes.
    pub injected_rows: &'a [usize],
    pub injected_groups: &'a [u8],
    pub alpha: f64,
    pub beta: f64,
    pub eo_form: EoForm,
}

impl AttackProblem<'_> {
    /// All loss components plus the gradient of `objective`. Feature
    /// gradients follow `injected_rows` order.
    pub fn evaluate(
        &self,
        params: &ModelParams,
        x: ArrayView2<'_, f64>,
        objective: Objective,
        request: GradRequest<'_>,
    ) -> Result<(LossBreakdown, Gradients)> {
        let cache = forward_cached(params, self.adj, x, None)?;
        let logits = &cache.logits;
        let (ce, d_ce) = cross_entropy_grad(logits, self.labels, self.train)?;
        let (sp, d_sp) = loss_sp(logits, self.sensitive, self.train)?;
        let (eo, d_eo) = loss_eo(
            logits,
            self.labels,
            self.sensitive,
            self.train,
            self.eo_form,
        )?;
        let injected_x = gather_rows(x, self.injected_rows);
        let (cf, d_cf) = loss_cf(injected_x.view(), self.injected_groups);
        let breakdown = LossBreakdown {
            ce,
            sp,
            eo,
            cf,
            total: combine(ce, sp, eo, cf, self.alpha, self.beta),
        };
        let (dlogits, cf_weight) = match objective {
            Objective::CrossEntropy => (d_ce, 0.0),
            Objective::StatisticalParity => (d_sp, 0.0),
            Objective::EqualOpportunity => (d_eo, 0.0),
            Objective::FeatureConstraint => (Array2::zeros(logits.raw_dim()), 1.0),
            Objective::Total => (d_ce + &((d_sp + &d_eo) * self.beta), self.alpha),
        };
        let mut grads = backward(params, self.adj, &cache, None, dlogits.view(), request);
        if let (Some(fg), Some(rows)) = (grads.features.as_mut(), request.feature_rows) {
            if rows == self.injected_rows && cf_weight != 0.0 {
                fg.scaled_add(cf_weight, &d_cf);
            } else if cf_weight != 0.0 {
                for (k, r) in rows.iter().enumerate() {
                    if let Some(pos) = self.injected_rows.iter().position(|x| x == r) {
                        fg.row_mut(k).scaled_add(cf_weight, &d_cf.row(pos));
                    }
                }
            }
        }
        Ok((breakdown, grads))
    }
}

fn gather_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).assign(&x.row(r));
    }
    out
}

/// Ablated variants of the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Targets sampled uniformly from the labeled nodes of each group.
    RandomTargets,
    /// Injected edges may reach targets of either group.
    CrossGroup,
    /// Surrogate pre-trained on the clean graph and frozen.
    FrozenSurrogate,
}

impl Variant {
    pub const ABLATIONS: [Variant; 3] = [
        Variant::RandomTargets,
        Variant::CrossGroup,
        Variant::FrozenSurrogate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "NIFA",
            Variant::RandomTargets => "NIFA-U",
            Variant::CrossGroup => "NIFA-H",
            Variant::FrozenSurrogate => "NIFA-I",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nifa" | "full" => Ok(Variant::Full),
            "nifa-u" | "u" | "random-targets" => Ok(Variant::RandomTargets),
            "nifa-h" | "h" | "cross-group" => Ok(Variant::CrossGroup),
            "nifa-i" | "i" | "frozen-surrogate" => Ok(Variant::FrozenSurrogate),
            other => Err(Error::param("variant", format!("unknown `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Surrogate,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub step: usize,
    pub phase: Phase,
    pub losses: LossBreakdown,
}

/// Per-step loss trace of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackLog {
    pub rows: Vec<LogRow>,
    /// Times the uncertainty module was entered during the run.
    pub uncertainty_invocations: usize,
}

impl AttackLog {
    /// Mean total loss over the rows of outer iteration `iter`, optionally
    /// restricted to one phase.
    pub fn mean_total(&self, iter: usize, phase: Option<Phase>) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.iter == iter && phase.is_none_or(|p| r.phase == p))
            .map(|r| r.losses.total)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// CSV with columns `iter,step,phase,L_CE,L_SP,L_EO,L_CF,L_total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter", "step", "phase", "L_CE", "L_SP", "L_EO", "L_CF", "L_total",
        ])?;
        for r in &self.rows {
            let phase = match r.phase {
                Phase::Surrogate => "surrogate",
                Phase::Feature => "feature",
            };
            let l = r.losses;
            w.write_record([
                r.iter.to_string(),
                r.step.to_string(),
                phase.to_string(),
                l.ce.to_string(),
                l.sp.to_string(),
                l.eo.to_string(),
                l.cf.to_string(),
                l.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<attack log>", e))?;
        Ok(())
    }
}

/// Result of one attack run.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub variant: Variant,
    pub poisoned: Graph,
    pub plan: InjectionPlan,
    pub log: AttackLog,
    /// Final surrogate parameters.
    pub surrogate: ModelParams,
    /// Bayesian model used for target selection, when one was trained.
    pub bayesian: Option<ModelParams>,
    pub uncertainty: Option<UncertaintyReport>,
}

/// Runs the full attack.
pub fn run_attack(clean: &Graph, split: &Split, cfg: &AttackConfig) -> Result<AttackOutcome> {
    run_ablation(clean, split, cfg, Variant::Full)
}

/// Runs the attack or one of its ablations.
pub fn run_ablation(
    clean: &Graph,
    split: &Split,
    cfg: &AttackConfig,
    variant: Variant,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    split.validate(clean)?;
    if clean.num_injected() > 0 {
        return Err(Error::InvalidGraph(
            "the clean graph already has injected nodes".into(),
        ));
    }
    let invocations_before = uncertainty::invocation_count();
    let (b, d) = cfg.resolve_budgets(clean);
    let candidates = clean.labeled_nodes();

    // Targets.
    let (targets, bayesian, report) = match variant {
        Variant::RandomTargets => {
            let mut r = rng::stream(cfg.seed, "random-targets");
            let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for &u in &candidates {
                pools[clean.sensitive()[u] as usize].push(u);
            }
            let mut targets: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (group, pool) in pools.iter().enumerate() {
                if pool.is_empty() {
                    return Err(Error::EmptyGroup(group as u8));
                }
                let take = quantile_count(cfg.k_percent, pool.len());
                let mut chosen: Vec<usize> = index::sample(&mut r, pool.len(), take)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                chosen.sort_unstable();
                targets[group] = chosen;
            }
            (targets, None, None)
        }
        _ => {
            let bcfg = cfg.bayesian();
            let params = uncertainty::train_bayesian(clean, split, &bcfg, cfg.seed)?;
            let u = uncertainty::estimate_uncertainty(
                &params,
                clean,
                bcfg.samples,
                bcfg.keep_prob,
                cfg.seed,
            )?;
            let targets = uncertainty::select_targets(&u, clean, &candidates, cfg.k_percent)?;
            let report = UncertaintyReport {
                uncertainty: u,
                samples: bcfg.samples,
                keep_prob: bcfg.keep_prob,
                selected_targets_by_group: targets.clone(),
            };
            (targets, Some(params), Some(report))
        }
    };

    // Structure.
    let mut plan_rng = rng::stream(cfg.seed, "plan");
    let mut plan = match variant {
        Variant::CrossGroup => {
            injection::build_cross_group_plan(targets, clean.num_features(), b, d, &mut plan_rng)?
        }
        _ => injection::build_plan(targets, clean.num_features(), b, d, &mut plan_rng)?,
    };
    plan.seed = cfg.seed;
    plan.features = injection::init_features(
        &plan,
        clean,
        cfg.init_strategy,
        TARGET_MEAN_NOISE,
        &mut rng::stream(cfg.seed, "init-features"),
    )?;
    let mut poisoned = apply_plan(clean, &plan)?;

    // Features.
    let n = clean.num_nodes();
    let injected_rows: Vec<usize> = (n..n + plan.num_injected()).collect();
    let adj = NormalizedAdjacency::new(&poisoned);
    let mut x = poisoned.features().to_owned();
    let bounds = column_bounds(clean.features());
    let problem = AttackProblem {
        adj: &adj,
        labels: poisoned.labels(),
        sensitive: poisoned.sensitive(),
        train: &split.train,
        injected_rows: &injected_rows,
        injected_groups: &plan.injected_groups,
        alpha: cfg.alpha,
        beta: cfg.beta,
        eo_form: cfg.eo_form,
    };

    let frozen = variant == Variant::FrozenSurrogate;
    let mut surrogate = if frozen {
        pretrain_surrogate(clean, split, cfg)?
    } else {
        initial_surrogate(clean, cfg)
    };
    let mut param_opt = Adam::new(&surrogate, cfg.lr_surrogate);
    let mut feat_opt = FeatureStepper::new(
        cfg.feature_optimizer,
        cfg.lr_feature,
        x.nrows() - n,
        x.ncols(),
    );
    let mut log = AttackLog::default();

    let result = (|| -> Result<()> {
        for iter in 0..cfg.max_iter {
            if !frozen {
                for step in 0..cfg.max_step {
                    let (losses, grads) = problem.evaluate(
                        &surrogate,
                        x.view(),
                        Objective::CrossEntropy,
                        GradRequest::params(),
                    )?;
                    check_finite(&losses, iter, step, Phase::Surrogate)?;
                    log.rows.push(LogRow {
                        iter,
                        step,
                        phase: Phase::Surrogate,
                        losses,
                    });
                    param_opt.step(&mut surrogate, grads.params.as_ref().expect("requested"));
                }
            }
            for step in 0..cfg.max_step {
                let (losses, grads) = problem.evaluate(
                    &surrogate,
                    x.view(),
                    Objective::Total,
                    GradRequest::features(&injected_rows),
                )?;
                check_finite(&losses, iter, step, Phase::Feature)?;
                log.rows.push(LogRow {
                    iter,
                    step,
                    phase: Phase::Feature,
                    losses,
                });
                let g = grads.features.expect("requested");
                let mut xi = x.slice_mut(s![n.., ..]);
                feat_opt.step(&mut xi, &g);
            }
            clamp_rows(&mut x, n, &bounds);
        }
        Ok(())
    })();

    if cfg.discrete_features {
        // Snap to the integers inside each column's range; a column whose range
        // holds no integer falls back to the nearest bound.
        for mut row in x.slice_mut(s![n.., ..]).rows_mut() {
            for (v, &(lo, hi)) in row.iter_mut().zip(&bounds) {
                let (ilo, ihi) = (lo.ceil(), hi.floor());
                *v = if ilo <= ihi {
                    v.round().clamp(ilo, ihi)
                } else {
                    v.clamp(lo, hi)
                };
            }
        }
    }
    plan.features = x.slice(s![n.., ..]).to_owned();
    poisoned = poisoned.with_features(x)?;
    log.uncertainty_invocations = uncertainty::invocation_count() - invocations_before;

    let outcome = AttackOutcome {
        variant,
        poisoned,
        plan,
        log,
        surrogate,
        bayesian,
        uncertainty: report,
    };
    match result {
        Ok(()) => Ok(outcome),
        Err(Error::NonFinite { context, value }) => Err(Error::AttackAborted {
            reason: format!("non-finite loss at {context}: {value}"),
            partial: Box::new(outcome),
        }),
        Err(e) => Err(e),
    }
}

/// Freshly initialized surrogate for `cfg.seed`.
pub fn initial_surrogate(clean: &Graph, cfg: &AttackConfig) -> ModelParams {
    ModelParams::init(
        ModelKind::Gcn2,
        clean.num_features(),
        cfg.surrogate_hidden,
        clean.num_classes(),
        &mut rng::stream(cfg.seed, "surrogate-init"),
    )
}

/// The surrogate [`Variant::FrozenSurrogate`] uses: trained to convergence
/// on the clean graph with the default protocol, then never updated.
pub fn pretrain_surrogate(clean: &Graph, split: &Split, cfg: &AttackConfig) -> Result<ModelParams> {
    let adj = NormalizedAdjacency::new(clean);
    let tcfg = TrainConfig {
        lr: cfg.lr_surrogate,
        ..TrainConfig::default()
    };
    Ok(train(initial_surrogate(clean, cfg), &adj, clean, split, &tcfg)?.params)
}

fn check_finite(l: &LossBreakdown, iter: usize, step: usize, phase: Phase) -> Result<()> {
    if l.total.is_finite() && l.ce.is_finite() {
        return Ok(());
    }
    Err(Error::NonFinite {
        context: format!("iteration {iter}, {phase:?} step {step}"),
        value: l.total,
    })
}

/// Clamps rows `from..` column-wise into `bounds`.
fn clamp_rows(x: &mut Array2<f64>, from: usize, bounds: &[(f64, f64)]) {
    for mut row in x.slice_mut(s![from.., ..]).rows_mut() {
        for (v, &(lo, hi)) in row.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    }
}

struct FeatureStepper {
    kind: FeatureOptimizer,
    lr: f64,
    t: i32,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl FeatureStepper {
    fn new(kind: FeatureOptimizer, lr: f64, rows: usize, cols: usize) -> Self {
        FeatureStepper {
            kind,
            lr,
            t: 0,
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }

    fn step(&mut self, x: &mut ndarray::ArrayViewMut2<'_, f64>, g: &Array2<f64>) {
        match self.kind {
            FeatureOptimizer::Sgd => x.scaled_add(-self.lr, g),
            FeatureOptimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                ndarray::Zip::from(x)
                    .and(g)
                    .and(&mut self.m)
                    .and(&mut self.v)
                    .for_each(|x, &g, m, v| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    });
            }
        }
    }
}
