//! Shared fixtures for the integration tests and the acceptance runner.
#![allow(dead_code)]

use fairinject::attack::{AttackProblem, EoForm, Objective};
use fairinject::graph::{apply_plan, Graph, InjectionPlan, Split};
use fairinject::injection::build_plan;
use fairinject::model::{GradRequest, ModelKind, ModelParams, NormalizedAdjacency};
use fairinject::rng;
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Ten clean nodes plus two injected ones, five features, two classes.
pub struct GradInstance {
    pub graph: Graph,
    pub split: Split,
    pub adj: NormalizedAdjacency,
    pub injected_rows: Vec<usize>,
    pub injected_groups: Vec<u8>,
}

pub fn grad_instance(seed: u64) -> GradInstance {
    let mut r = rng::stream(seed, "grad-instance");
    let n = 10;
    let mut edges = vec![
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 8),
        (8, 9),
    ];
    for _ in 0..6 {
        let (u, v) = (r.random_range(0..n), r.random_range(0..n));
        edges.push((u, v));
    }
    let x = Array2::from_shape_fn((n, 5), |_| r.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|u| Some(u % 2)).collect();
    let sensitive = (0..n).map(|u| u8::from(u % 3 == 0)).collect();
    let clean = Graph::new(n, &edges, x, labels, sensitive).unwrap();
    let pools = [
        (0..n).filter(|&u| clean.sensitive()[u] == 0).collect(),
        (0..n).filter(|&u| clean.sensitive()[u] == 1).collect(),
    ];
    let mut plan = build_plan(pools, 5, 2, 3, &mut r).unwrap();
    plan.features = Array2::from_shape_fn((2, 5), |_| r.sample::<f64, _>(StandardNormal));
    let graph = apply_plan(&clean, &plan).unwrap();
    // Every (group, class) cell of the train set is populated.
    let split = Split::new(vec![0, 1, 2, 3, 4, 5, 6, 7], vec![8], vec![9]);
    let adj = NormalizedAdjacency::new(&graph);
    GradInstance {
        injected_rows: (n..n + plan.num_injected()).collect(),
        injected_groups: plan.injected_groups.clone(),
        graph,
        split,
        adj,
    }
}

impl GradInstance {
    pub fn problem(&self, eo_form: EoForm) -> AttackProblem<'_> {
        AttackProblem {
            adj: &self.adj,
            labels: self.graph.labels(),
            sensitive: self.graph.sensitive(),
            train: &self.split.train,
            injected_rows: &self.injected_rows,
            injected_groups: &self.injected_groups,
            alpha: 0.7,
            beta: 1.3,
            eo_form,
        }
    }

    /// Random weights and non-zero biases, so no hidden unit sits exactly
    /// on the ReLU kink when a mask zeroes its whole weight column.
    pub fn params(&self, kind: ModelKind, seed: u64) -> ModelParams {
        let mut r = rng::stream(seed, "grad-params");
        let mut p = ModelParams::init(kind, 5, 4, 2, &mut r);
        for layer in &mut p.layers {
            layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        p
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative error of the analytic gradient of `objective` against
/// central differences, over parameters and injected feature rows.
pub fn gradient_error(
    inst: &GradInstance,
    problem: &AttackProblem<'_>,
    params: &ModelParams,
    objective: Objective,
) -> (f64, f64) {
    const H: f64 = 1e-5;
    let x = inst.graph.features().to_owned();
    let value = |p: &ModelParams, x: ArrayView2<'_, f64>| {
        let (b, _) = problem
            .evaluate(p, x, objective, GradRequest::params())
            .unwrap();
        match objective {
            Objective::CrossEntropy => b.ce,
            Objective::StatisticalParity => b.sp,
            Objective::EqualOpportunity => b.eo,
            Objective::FeatureConstraint => b.cf,
            Objective::Total => b.total,
        }
    };
    let (_, grads) = problem
        .evaluate(
            params,
            x.view(),
            objective,
            GradRequest::both(&inst.injected_rows),
        )
        .unwrap();

    let analytic_p: Vec<f64> = grads.params.unwrap().tensors().flatten().copied().collect();
    let mut numeric_p = Vec::with_capacity(analytic_p.len());
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.tensors().map(<[f64]>::len).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors().nth(t).unwrap()[i];
            probe.tensors_mut().nth(t).unwrap()[i] = orig + H;
            let up = value(&probe, x.view());
            probe.tensors_mut().nth(t).unwrap()[i] = orig - H;
            let down = value(&probe, x.view());
            probe.tensors_mut().nth(t).unwrap()[i] = orig;
            numeric_p.push((up - down) / (2.0 * H));
        }
    }

    let analytic_x: Vec<f64> = grads.features.unwrap().iter().copied().collect();
    let mut numeric_x = Vec::new();
    let mut xp = x.clone();
    for &r in &inst.injected_rows {
        for j in 0..x.ncols() {
            let orig = xp[[r, j]];
            xp[[r, j]] = orig + H;
            let up = value(params, xp.view());
            xp[[r, j]] = orig - H;
            let down = value(params, xp.view());
            xp[[r, j]] = orig;
            numeric_x.push((up - down) / (2.0 * H));
        }
    }
    (
        rel_error(&analytic_p, &numeric_p),
        rel_error(&analytic_x, &numeric_x),
    )
}

pub const ALL_OBJECTIVES: [(Objective, &str); 5] = [
    (Objective::CrossEntropy, "CE"),
    (Objective::StatisticalParity, "SP"),
    (Objective::EqualOpportunity, "EO"),
    (Objective::FeatureConstraint, "CF"),
    (Objective::Total, "total"),
];

/// Random graph on `n` nodes with a random same-group injection plan.
pub fn random_graph_and_plan(seed: u64) -> (Graph, InjectionPlan) {
    let mut r = rng::stream(seed, "random-graph-plan");
    let n = r.random_range(6..30);
    let m = r.random_range(n..3 * n);
    let edges: Vec<(usize, usize)> = (0..m)
        .map(|_| (r.random_range(0..n), r.random_range(0..n)))
        .collect();
    let sensitive: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    let mut sensitive = sensitive;
    sensitive[0] = 0;
    sensitive[1] = 1;
    let labels = (0..n).map(|_| Some(r.random_range(0..2))).collect();
    let g = Graph::new(n, &edges, Array2::zeros((n, 3)), labels, sensitive).unwrap();
    let pools: [Vec<usize>; 2] = [
        (0..n)
            .filter(|&u| g.sensitive()[u] == 0 && r.random_bool(0.6))
            .collect(),
        (0..n)
            .filter(|&u| g.sensitive()[u] == 1 && r.random_bool(0.6))
            .collect(),
    ];
    let pools = if pools[0].is_empty() || pools[1].is_empty() {
        [vec![0], vec![1]]
    } else {
        pools
    };
    let b = r.random_range(1..6);
    let d = r.random_range(1..6);
    let plan = build_plan(pools, 3, b, d, &mut r).unwrap();
    (g, plan)
}
