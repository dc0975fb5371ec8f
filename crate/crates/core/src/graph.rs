//! Attributed graphs with a binary sensitive attribute, node-injection plans
//! and the homophily arithmetic that goes with them.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{EdgeViolation, Error, Result};

/// Undirected graph in CSR form with node features, optional labels, a binary
/// sensitive attribute and an injected-node flag.
///
/// Both directions of every edge are stored, rows are sorted, and there are
/// no self-loops. The value is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    sensitive: Vec<u8>,
    injected: Vec<bool>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        sensitive: Vec<u8>,
    ) -> Result<Self> {
        let injected = vec![false; num_nodes];
        Self::with_flags(
            num_nodes, edges, features, labels, sensitive, injected, None,
        )
    }

    pub(crate) fn with_flags(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        sensitive: Vec<u8>,
        injected: Vec<bool>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        if labels.len() != num_nodes || sensitive.len() != num_nodes || injected.len() != num_nodes
        {
            return Err(Error::InvalidGraph(format!(
                "attribute lengths (labels {}, sensitive {}, injected {}) do not match {} nodes",
                labels.len(),
                sensitive.len(),
                injected.len(),
                num_nodes
            )));
        }
        if let Some((i, s)) = sensitive.iter().enumerate().find(|(_, &s)| s > 1) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has non-binary sensitive value {s}"
            )));
        }
        let observed = labels.iter().flatten().max().map_or(0, |&m| m + 1);
        let num_classes = match num_classes {
            Some(c) if c < observed => {
                return Err(Error::InvalidGraph(format!(
                    "label {} out of range for {c} classes",
                    observed - 1
                )))
            }
            Some(c) => c,
            None => observed,
        };

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for w in [u, v] {
                if w >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        index: w,
                        len: num_nodes,
                    });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            neighbors.extend_from_slice(row);
            offsets.push(neighbors.len());
        }
        Ok(Graph {
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
            sensitive,
            injected,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.sensitive.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|u| self.degree(u)).collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, u: usize) -> ArrayView1<'_, f64> {
        self.features.row(u)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, u: usize) -> Option<usize> {
        self.labels[u]
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn injected_flags(&self) -> &[bool] {
        &self.injected
    }

    pub fn is_injected(&self, u: usize) -> bool {
        self.injected[u]
    }

    /// Nodes that carry a label.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&u| self.labels[u].is_some())
            .collect()
    }

    pub fn num_injected(&self) -> usize {
        self.injected.iter().filter(|&&f| f).count()
    }

    /// Injected nodes over labeled original nodes.
    pub fn perturbation_rate(&self) -> f64 {
        let labeled = (0..self.num_nodes())
            .filter(|&u| !self.injected[u] && self.labels[u].is_some())
            .count();
        if labeled == 0 {
            return 0.0;
        }
        self.num_injected() as f64 / labeled as f64
    }

    /// Column-wise `(min, max)` over the feature matrix.
    pub fn feature_bounds(&self) -> Vec<(f64, f64)> {
        column_bounds(self.features.view())
    }

    /// Same graph with a replacement feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::Dimension(format!(
                "replacement features {:?} vs {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    fn check_node(&self, u: usize) -> Result<()> {
        if u >= self.num_nodes() {
            return Err(Error::IndexOutOfRange {
                index: u,
                len: self.num_nodes(),
            });
        }
        Ok(())
    }
}

pub(crate) fn column_bounds(x: ArrayView2<'_, f64>) -> Vec<(f64, f64)> {
    x.columns()
        .into_iter()
        .map(|c| {
            c.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect()
}

/// Train/validation/test node indices. Sets are sorted and disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Split { train, val, test }
    }

    /// Checks disjointness and that every member is a labeled, non-injected
    /// node of `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &u in set {
                g.check_node(u)?;
                if g.label(u).is_none() || g.is_injected(u) {
                    return Err(Error::InvalidGraph(format!(
                        "{name} split contains unlabeled or injected node {u}"
                    )));
                }
                if !seen.insert(u) {
                    return Err(Error::InvalidGraph(format!(
                        "node {u} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which targets an injected node may connect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeRule {
    /// Only targets whose sensitive attribute equals the injected node's group.
    #[default]
    SameGroup,
    /// Any target from either group.
    AnyGroup,
}

/// The difference an attack makes to a clean graph: which nodes get injected,
/// which group each belongs to, their edges and their features.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionPlan {
    /// Target pools, indexed by sensitive group.
    pub targets_by_group: [Vec<usize>; 2],
    /// Assigned sensitive group per injected node.
    pub injected_groups: Vec<u8>,
    /// `(injected local index, real target)` pairs.
    pub edges: Vec<(usize, usize)>,
    /// One row per injected node.
    pub features: Array2<f64>,
    pub node_budget: usize,
    pub degree_budget: usize,
    pub edge_rule: EdgeRule,
    pub seed: u64,
}

impl InjectionPlan {
    /// A plan that injects nothing.
    pub fn empty(num_features: usize) -> Self {
        InjectionPlan {
            targets_by_group: [Vec::new(), Vec::new()],
            injected_groups: Vec::new(),
            edges: Vec::new(),
            features: Array2::zeros((0, num_features)),
            node_budget: 0,
            degree_budget: 0,
            edge_rule: EdgeRule::SameGroup,
            seed: 0,
        }
    }

    pub fn num_injected(&self) -> usize {
        self.injected_groups.len()
    }

    pub fn injected_count_by_group(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for &g in &self.injected_groups {
            c[g as usize] += 1;
        }
        c
    }

    /// Degree of each injected node.
    pub fn injected_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_injected()];
        for &(i, _) in &self.edges {
            if i < deg.len() {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Number of injected edges incident to each real node, keyed by node.
    pub fn injected_edges_per_target(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut m = std::collections::BTreeMap::new();
        for &(_, t) in &self.edges {
            *m.entry(t).or_insert(0) += 1;
        }
        m
    }

    /// Union of both target pools, sorted.
    pub fn all_targets(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.targets_by_group.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Validates the plan against `clean`. Returns the structural problems as
    /// an error; same-group violations are collected into one list.
    pub fn validate(&self, clean: &Graph) -> Result<()> {
        let ni = self.num_injected();
        if self.features.nrows() != ni || self.features.ncols() != clean.num_features() {
            return Err(Error::Dimension(format!(
                "injected features {:?}, expected ({ni}, {})",
                self.features.dim(),
                clean.num_features()
            )));
        }
        if let Some(&g) = self.injected_groups.iter().find(|&&g| g > 1) {
            return Err(Error::InvalidPlan(format!(
                "injected group {g} is not binary"
            )));
        }
        if self.node_budget > 0 && ni > self.node_budget {
            return Err(Error::InvalidPlan(format!(
                "{ni} injected nodes exceed the node budget {}",
                self.node_budget
            )));
        }
        for (group, pool) in self.targets_by_group.iter().enumerate() {
            for &t in pool {
                clean.check_node(t)?;
                if clean.is_injected(t) {
                    return Err(Error::InvalidPlan(format!(
                        "target {t} is an injected node"
                    )));
                }
                if self.edge_rule == EdgeRule::SameGroup && clean.sensitive()[t] as usize != group {
                    return Err(Error::InvalidPlan(format!(
                        "target {t} listed in group {group} pool has sensitive value {}",
                        clean.sensitive()[t]
                    )));
                }
            }
        }
        let targets: BTreeSet<usize> = self.targets_by_group.iter().flatten().copied().collect();
        let mut seen = BTreeSet::new();
        let mut violations = Vec::new();
        for &(i, t) in &self.edges {
            if i >= ni {
                return Err(Error::IndexOutOfRange { index: i, len: ni });
            }
            clean.check_node(t)?;
            if !targets.contains(&t) {
                return Err(Error::InvalidPlan(format!(
                    "edge ({i}, {t}) ends at a node outside the target pools"
                )));
            }
            if !seen.insert((i, t)) {
                return Err(Error::InvalidPlan(format!(
                    "duplicate injected edge ({i}, {t})"
                )));
            }
            let (gi, gt) = (self.injected_groups[i], clean.sensitive()[t]);
            if self.edge_rule == EdgeRule::SameGroup && gi != gt {
                violations.push(EdgeViolation {
                    injected: i,
                    target: t,
                    injected_group: gi,
                    target_group: gt,
                });
            }
        }
        if !violations.is_empty() {
            return Err(Error::PlanViolation(violations));
        }
        if self.degree_budget > 0 {
            if let Some((i, &deg)) = self
                .injected_degrees()
                .iter()
                .enumerate()
                .find(|(_, &deg)| deg > self.degree_budget)
            {
                return Err(Error::InvalidPlan(format!(
                    "injected node {i} has degree {deg} above the degree budget {}",
                    self.degree_budget
                )));
            }
        }
        Ok(())
    }

    /// JSON-serializable description of the plan.
    pub fn sidecar(&self, num_original_nodes: usize) -> PlanSidecar {
        PlanSidecar {
            num_original_nodes,
            node_budget: self.node_budget,
            degree_budget: self.degree_budget,
            edge_rule: self.edge_rule,
            seed: self.seed,
            targets_by_group: self.targets_by_group.clone(),
            injected_groups: self.injected_groups.clone(),
            edges: self.edges.clone(),
        }
    }

    /// Rebuilds a plan from its sidecar; feature rows come from the tail of
    /// the poisoned graph.
    pub fn from_sidecar(sidecar: &PlanSidecar, poisoned: &Graph) -> Result<Self> {
        let n = sidecar.num_original_nodes;
        let ni = sidecar.injected_groups.len();
        if poisoned.num_nodes() != n + ni {
            return Err(Error::InvalidPlan(format!(
                "poisoned graph has {} nodes, sidecar describes {n} + {ni}",
                poisoned.num_nodes()
            )));
        }
        Ok(InjectionPlan {
            targets_by_group: sidecar.targets_by_group.clone(),
            injected_groups: sidecar.injected_groups.clone(),
            edges: sidecar.edges.clone(),
            features: poisoned.features().slice(s![n.., ..]).to_owned(),
            node_budget: sidecar.node_budget,
            degree_budget: sidecar.degree_budget,
            edge_rule: sidecar.edge_rule,
            seed: sidecar.seed,
        })
    }
}

/// On-disk description of an injection plan, stored beside a poisoned graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub num_original_nodes: usize,
    pub node_budget: usize,
    pub degree_budget: usize,
    pub edge_rule: EdgeRule,
    pub seed: u64,
    pub targets_by_group: [Vec<usize>; 2],
    pub injected_groups: Vec<u8>,
    pub edges: Vec<(usize, usize)>,
}

/// Composes a poisoned graph: the clean nodes keep their ids, rows and
/// features; injected node `i` becomes node `n + i`, unlabeled, with its
/// assigned group as sensitive attribute.
pub fn apply_plan(clean: &Graph, plan: &InjectionPlan) -> Result<Graph> {
    plan.validate(clean)?;
    let n = clean.num_nodes();
    let ni = plan.num_injected();
    let total = n + ni;

    let mut extra: Vec<Vec<usize>> = vec![Vec::new(); total];
    for &(i, t) in &plan.edges {
        extra[t].push(n + i);
        extra[n + i].push(t);
    }
    let mut offsets = Vec::with_capacity(total + 1);
    let mut neighbors = Vec::with_capacity(clean.neighbors.len() + 2 * plan.edges.len());
    offsets.push(0);
    for (u, add) in extra.iter_mut().enumerate() {
        if u < n {
            // Injected ids are all >= n, so appending keeps rows sorted.
            neighbors.extend_from_slice(clean.neighbors(u));
        }
        add.sort_unstable();
        neighbors.extend_from_slice(add);
        offsets.push(neighbors.len());
    }

    let d = clean.num_features();
    let mut features = Array2::zeros((total, d));
    features.slice_mut(s![..n, ..]).assign(&clean.features);
    features.slice_mut(s![n.., ..]).assign(&plan.features);

    let mut labels = clean.labels.clone();
    labels.resize(total, None);
    let mut sensitive = clean.sensitive.clone();
    sensitive.extend_from_slice(&plan.injected_groups);
    let mut injected = clean.injected.clone();
    injected.resize(total, true);

    Ok(Graph {
        offsets,
        neighbors,
        features,
        labels,
        num_classes: clean.num_classes,
        sensitive,
        injected,
    })
}

/// Fraction of `u`'s neighbors that share its sensitive attribute.
pub fn node_homophily(g: &Graph, u: usize) -> Result<f64> {
    g.check_node(u)?;
    let nbrs = g.neighbors(u);
    if nbrs.is_empty() {
        return Err(Error::IsolatedNode(u));
    }
    let su = g.sensitive[u];
    let same = nbrs.iter().filter(|&&v| g.sensitive[v] == su).count();
    Ok(same as f64 / nbrs.len() as f64)
}

/// Homophily of one target before and after injection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomophilyDelta {
    pub node: usize,
    /// Same-attribute neighbors in the clean graph.
    pub same_neighbors: usize,
    pub clean_degree: usize,
    /// Injected edges incident to the node.
    pub injected_edges: usize,
    /// `None` for a node isolated in the clean graph.
    pub before: Option<f64>,
    pub after: Option<f64>,
    /// `(k + n_u) / (|N_u| + n_u)` evaluated from the counts.
    pub predicted_after: Option<f64>,
}

impl HomophilyDelta {
    /// Whether homophily did not decrease.
    pub fn non_decreasing(&self) -> bool {
        match (self.before, self.after) {
            (Some(b), Some(a)) => a >= b,
            _ => true,
        }
    }
}

/// Per-target homophily before/after, measured directly on both graphs and
/// checked against the closed form.
pub fn homophily_delta_report(
    clean: &Graph,
    poisoned: &Graph,
    targets: &[usize],
) -> Result<Vec<HomophilyDelta>> {
    let n = clean.num_nodes();
    targets
        .iter()
        .map(|&u| {
            clean.check_node(u)?;
            poisoned.check_node(u)?;
            let su = clean.sensitive[u];
            let clean_degree = clean.degree(u);
            let same_neighbors = clean
                .neighbors(u)
                .iter()
                .filter(|&&v| clean.sensitive[v] == su)
                .count();
            let injected_edges = poisoned.neighbors(u).iter().filter(|&&v| v >= n).count();
            let before = (clean_degree > 0).then(|| same_neighbors as f64 / clean_degree as f64);
            let after = node_homophily(poisoned, u).ok();
            let predicted_after = (clean_degree + injected_edges > 0).then(|| {
                (same_neighbors + injected_edges) as f64 / (clean_degree + injected_edges) as f64
            });
            Ok(HomophilyDelta {
                node: u,
                same_neighbors,
                clean_degree,
                injected_edges,
                before,
                after,
                predicted_after,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Graph {
        // 0-1, 1-2, 2-3, 0-2 ; groups 0,1,0,1
        Graph::new(
            4,
            &[(0, 1), (1, 2), (2, 3), (0, 2)],
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
            vec![Some(0), Some(1), Some(0), Some(1)],
            vec![0, 1, 0, 1],
        )
        .unwrap()
    }

    fn one_node_plan(targets: Vec<(usize, usize)>, group: u8) -> InjectionPlan {
        InjectionPlan {
            targets_by_group: [vec![0, 2], vec![1, 3]],
            injected_groups: vec![group],
            edges: targets,
            features: array![[0.25, 0.75]],
            node_budget: 1,
            degree_budget: 2,
            edge_rule: EdgeRule::SameGroup,
            seed: 0,
        }
    }

    #[test]
    fn construction_symmetrizes_and_dedups() {
        let g = Graph::new(
            3,
            &[(0, 1), (1, 0), (1, 2), (2, 2)],
            Array2::zeros((3, 1)),
            vec![None; 3],
            vec![0, 0, 1],
        )
        .unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn construction_rejects_bad_attributes() {
        let err = Graph::new(2, &[], Array2::zeros((2, 1)), vec![None; 2], vec![0, 2]);
        assert!(matches!(err, Err(Error::InvalidGraph(_))));
        let err = Graph::new(2, &[], Array2::zeros((3, 1)), vec![None; 2], vec![0, 1]);
        assert!(matches!(err, Err(Error::InvalidGraph(_))));
        let err = Graph::new(
            2,
            &[(0, 5)],
            Array2::zeros((2, 1)),
            vec![None; 2],
            vec![0, 1],
        );
        assert!(matches!(err, Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn empty_plan_is_identity() {
        let g = toy();
        let p = apply_plan(&g, &InjectionPlan::empty(2)).unwrap();
        assert_eq!(p, g);
    }

    #[test]
    fn single_injection_composes() {
        let g = toy();
        let p = apply_plan(&g, &one_node_plan(vec![(0, 0), (0, 2)], 0)).unwrap();
        assert_eq!(p.num_nodes(), 5);
        assert_eq!(p.num_edges(), g.num_edges() + 2);
        assert_eq!(p.label(4), None);
        assert_eq!(p.sensitive()[4], 0);
        assert!(p.is_injected(4));
        assert_eq!(p.neighbors(4), &[0, 2]);
        for u in 0..4 {
            assert_eq!(p.feature_row(u), g.feature_row(u));
            let orig: Vec<usize> = p.neighbors(u).iter().copied().filter(|&v| v < 4).collect();
            assert_eq!(orig, g.neighbors(u));
        }
        assert_eq!(p.feature_row(4), array![0.25, 0.75]);
        assert!((p.perturbation_rate() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cross_group_edge_is_rejected_with_listing() {
        let g = toy();
        let err = apply_plan(&g, &one_node_plan(vec![(0, 0), (0, 1)], 0)).unwrap_err();
        match err {
            Error::PlanViolation(v) => {
                assert_eq!(
                    v,
                    vec![EdgeViolation {
                        injected: 0,
                        target: 1,
                        injected_group: 0,
                        target_group: 1
                    }]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn any_group_rule_accepts_cross_edges() {
        let g = toy();
        let mut plan = one_node_plan(vec![(0, 0), (0, 1)], 0);
        plan.edge_rule = EdgeRule::AnyGroup;
        plan.targets_by_group = [vec![0, 1], vec![]];
        assert!(apply_plan(&g, &plan).is_ok());
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        let g = toy();
        let plan = one_node_plan(vec![(1, 0)], 0);
        assert!(matches!(
            apply_plan(&g, &plan),
            Err(Error::IndexOutOfRange { .. })
        ));
        let mut plan = one_node_plan(vec![(0, 0)], 0);
        plan.targets_by_group[0].push(9);
        assert!(matches!(
            apply_plan(&g, &plan),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn degree_budget_is_enforced() {
        let g = toy();
        let mut plan = one_node_plan(vec![(0, 0), (0, 2)], 0);
        plan.degree_budget = 1;
        assert!(matches!(apply_plan(&g, &plan), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn homophily_counts() {
        // 0 has neighbors 1 (s=1), 2 (s=0)
        let g = toy();
        assert_eq!(node_homophily(&g, 0).unwrap(), 0.5);
        let star = Graph::new(
            5,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            Array2::zeros((5, 1)),
            vec![None; 5],
            vec![0, 0, 0, 1, 1],
        )
        .unwrap();
        assert_eq!(node_homophily(&star, 0).unwrap(), 0.5);
        assert_eq!(node_homophily(&star, 1).unwrap(), 1.0);
        let lonely = Graph::new(2, &[], Array2::zeros((2, 1)), vec![None; 2], vec![0, 1]).unwrap();
        assert!(matches!(
            node_homophily(&lonely, 0),
            Err(Error::IsolatedNode(0))
        ));
    }

    #[test]
    fn homophily_report_matches_closed_form() {
        // Node 0: neighbors 1..=4 with s = [0,0,1,1]; k=2, |N|=4.
        let g = Graph::new(
            6,
            &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2)],
            Array2::zeros((6, 1)),
            vec![Some(0); 6],
            vec![0, 0, 0, 1, 1, 0],
        )
        .unwrap();
        let plan = InjectionPlan {
            targets_by_group: [vec![0, 1], vec![]],
            injected_groups: vec![0, 0],
            edges: vec![(0, 0), (1, 0), (0, 1)],
            features: Array2::zeros((2, 1)),
            node_budget: 2,
            degree_budget: 2,
            edge_rule: EdgeRule::SameGroup,
            seed: 0,
        };
        let p = apply_plan(&g, &plan).unwrap();
        let rep = homophily_delta_report(&g, &p, &[0, 1, 5]).unwrap();
        assert_eq!(rep[0].before, Some(0.5));
        assert!((rep[0].after.unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(rep[0].after, rep[0].predicted_after);
        // node 1: neighbors 0, 2 both s=0 -> already 1.0
        assert_eq!(rep[1].before, Some(1.0));
        assert_eq!(rep[1].after, Some(1.0));
        // node 5 isolated and untouched
        assert_eq!(rep[2].before, None);
        assert_eq!(rep[2].injected_edges, 0);
        assert!(rep.iter().all(HomophilyDelta::non_decreasing));
        // an untouched non-isolated node keeps its value
        let rep = homophily_delta_report(&g, &p, &[3]).unwrap();
        assert_eq!(rep[0].before, rep[0].after);
    }
}
