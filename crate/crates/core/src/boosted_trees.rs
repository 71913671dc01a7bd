//! Regularized gradient-boosted regression trees with a squared-error
//! objective.
//!
//! Loss is ½(ŷ − y)², so every row has gradient g = ŷ − y and hessian 1.
//! With S(G) = sign(G)·max(|G| − α, 0) the leaf weight is −S(G)/(H + λ) and a
//! split's gain is
//!
//! ```text
//! ½ [ S(G_L)²/(H_L+λ) + S(G_R)²/(H_R+λ) − S(G)²/(H+λ) ]
//! ```
//!
//! Trees grow level by level with exact greedy search: every midpoint
//! between consecutive distinct values of a sampled feature is a candidate,
//! and rows with `x < threshold` go left. Gains within
//! [`tie_tolerance`] of the best one are ties, settled by the lowest feature
//! index and then the smallest threshold. Rows are put into a canonical order
//! before training, so the fitted forest does not depend on input row order.
//!
//! Each tree samples ⌈colsample_bytree × 4⌉ of the four features without
//! replacement. The draw uses ChaCha8 seeded with `rng_seed`, on stream
//! number equal to the tree index.
//!
//! # Artifact
//!
//! [`save_model`] writes JSON:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "base_score": 301.5,
//!   "config": { "alpha": 1.0, "lambda": 1.0, "...": "..." },
//!   "feature_schema": [ { "name": "day_of_week", "min": 0.0, "max": 6.0 }, "..." ],
//!   "trees": [
//!     { "columns": [0, 1, 3],
//!       "root": { "split": { "feature": 1, "threshold": 30600.5,
//!                            "left": { "leaf": { "weight": -3.2 } },
//!                            "right": { "leaf": { "weight": 1.7 } } } } }
//!   ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a loaded model
//! predicts bit-identically to the saved one.

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::avl_ingest::SectionTraversal;
use crate::clock;
use crate::route_model::RouteSection;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const N_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["day_of_week", "start_time_s", "section_id", "lup_code"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BoostError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("target at row {row} must be finite and positive, got {value}")]
    InvalidTarget { row: usize, value: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("feature {feature} out of range: {value}")]
    FeatureOutOfRange { feature: &'static str, value: u64 },
    #[error("corrupted artifact: {0}")]
    CorruptedArtifact(String),
    #[error("version mismatch: artifact format_version {found}, supported {expected}")]
    VersionMismatch { found: u64, expected: u32 },
}

/// Model inputs for one section traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Monday = 0.
    pub day_of_week: u8,
    /// Seconds since local midnight.
    pub start_time_s: u32,
    pub section_id: u32,
    /// 0..=3 for CBD, IC, ISU, OSU.
    pub lup_code: u8,
}

impl FeatureVector {
    pub fn at(time: NaiveDateTime, section: &RouteSection) -> Self {
        FeatureVector {
            day_of_week: clock::day_of_week(time),
            start_time_s: clock::seconds_since_midnight(time),
            section_id: section.section_id,
            lup_code: section.lup.code(),
        }
    }

    pub fn from_traversal(t: &SectionTraversal) -> Self {
        FeatureVector {
            day_of_week: t.day_of_week,
            start_time_s: clock::seconds_since_midnight(t.section_start_time),
            section_id: t.section_id,
            lup_code: t.lup.code(),
        }
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        let checks: [(&'static str, u64, bool); 4] = [
            ("day_of_week", self.day_of_week as u64, self.day_of_week <= 6),
            ("start_time_s", self.start_time_s as u64, self.start_time_s <= 86_399),
            ("section_id", self.section_id as u64, self.section_id >= 1),
            ("lup_code", self.lup_code as u64, self.lup_code <= 3),
        ];
        match checks.iter().find(|c| !c.2) {
            Some(&(feature, value, _)) => Err(BoostError::FeatureOutOfRange { feature, value }),
            None => Ok(()),
        }
    }

    pub fn values(&self) -> [f64; N_FEATURES] {
        [
            self.day_of_week as f64,
            self.start_time_s as f64,
            self.section_id as f64,
            self.lup_code as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

pub fn feature_schema() -> Vec<FeatureSpec> {
    let max = [6.0, 86_399.0, u32::MAX as f64, 3.0];
    let min = [0.0, 0.0, 1.0, 0.0];
    (0..N_FEATURES)
        .map(|k| FeatureSpec {
            name: FEATURE_NAMES[k].to_string(),
            min: min[k],
            max: max[k],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub colsample_bytree: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::SquaredError,
            alpha: 1.0,
            lambda: 1.0,
            learning_rate: 0.05,
            n_estimators: 200,
            colsample_bytree: 0.6,
            max_depth: 3,
            min_child_weight: 1.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BoostError> {
        let bad = |m: &str| Err(BoostError::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be finite and >= 0");
        }
        Ok(())
    }

    pub fn columns_per_tree(&self) -> usize {
        ((self.colsample_bytree * N_FEATURES as f64).ceil() as usize).clamp(1, N_FEATURES)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Node {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] < *threshold { left } else { right },
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTree {
    /// Features this tree was allowed to split on, ascending.
    pub columns: Vec<usize>,
    pub root: Node,
}

impl RegressionTree {
    /// Raw leaf weight for a row (before the learning rate).
    pub fn output(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.root.eval(x)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Internal nodes in pre-order as (feature, threshold).
    pub fn splits(&self) -> Vec<(usize, f64)> {
        fn walk(n: &Node, out: &mut Vec<(usize, f64)>) {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = n
            {
                out.push((*feature, *threshold));
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedForest {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub config: TrainConfig,
    pub feature_schema: Vec<FeatureSpec>,
}

impl BoostedForest {
    /// Forecast for already-validated feature values.
    pub fn predict_values(&self, x: &[f64; N_FEATURES]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.output(x)).sum();
        self.base_score + self.config.learning_rate * sum
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64, BoostError> {
        fv.validate()?;
        Ok(self.predict_values(&fv.values()))
    }

    /// Number of splits on each feature across the forest.
    pub fn split_counts(&self) -> [usize; N_FEATURES] {
        let mut counts = [0; N_FEATURES];
        for t in &self.trees {
            for (f, _) in t.splits() {
                counts[f] += 1;
            }
        }
        counts
    }
}

pub fn predict(forest: &BoostedForest, fv: &FeatureVector) -> Result<f64, BoostError> {
    forest.predict(fv)
}

/// S(G) = sign(G)·max(|G| − α, 0).
pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

pub fn leaf_weight(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    -soft_threshold(g, alpha) / (h + lambda)
}

fn score(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let s = soft_threshold(g, alpha);
    s * s / (h + lambda)
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, alpha: f64, lambda: f64) -> f64 {
    0.5 * (score(gl, hl, alpha, lambda) + score(gr, hr, alpha, lambda) - score(gl + gr, hl + hr, alpha, lambda))
}

/// Gains closer than this to the best gain at a node are treated as equal;
/// the best gain must also exceed it for the node to split.
pub fn tie_tolerance(parent_score: f64) -> f64 {
    1e-10 * (1.0 + parent_score.abs())
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub forest: BoostedForest,
    /// Training MSE after 0, 1, ..., n_estimators trees.
    pub training_mse: Vec<f64>,
}

pub fn fit(dataset: &[(FeatureVector, f64)], config: &TrainConfig) -> Result<BoostedForest, BoostError> {
    fit_with_history(dataset, config).map(|o| o.forest)
}

pub fn fit_with_history(dataset: &[(FeatureVector, f64)], config: &TrainConfig) -> Result<FitOutcome, BoostError> {
    if dataset.is_empty() {
        return Err(BoostError::EmptyDataset);
    }
    config.validate()?;
    for (row, (fv, y)) in dataset.iter().enumerate() {
        if !(y.is_finite() && *y > 0.0) {
            return Err(BoostError::InvalidTarget { row, value: *y });
        }
        fv.validate()?;
    }

    // canonical row order: by feature values, then target
    let mut rows: Vec<([f64; N_FEATURES], f64)> = dataset.iter().map(|(fv, y)| (fv.values(), *y)).collect();
    rows.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.total_cmp(&b.1))
    });
    let n = rows.len();
    let columns: Vec<Vec<f64>> = (0..N_FEATURES).map(|f| rows.iter().map(|r| r.0[f]).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let order: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect();

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mse = |pred: &[f64]| pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
    let mut training_mse = vec![mse(&pred)];
    let grower = Grower {
        columns: &columns,
        order: &order,
        config,
    };
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut grad = vec![0.0; n];
    for t in 0..config.n_estimators {
        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        let cols = sample_columns(config, t);
        let (tree, leaf_of) = grower.grow(&grad, cols);
        for i in 0..n {
            pred[i] += config.learning_rate * leaf_of[i];
        }
        training_mse.push(mse(&pred));
        log::debug!("tree {t}: training mse {}", training_mse[t + 1]);
        trees.push(tree);
    }

    Ok(FitOutcome {
        forest: BoostedForest {
            base_score,
            trees,
            config: config.clone(),
            feature_schema: feature_schema(),
        },
        training_mse,
    })
}

fn sample_columns(config: &TrainConfig, tree_index: usize) -> Vec<usize> {
    let k = config.columns_per_tree();
    if k == N_FEATURES {
        return (0..N_FEATURES).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(tree_index as u64);
    let mut cols = rand::seq::index::sample(&mut rng, N_FEATURES, k).into_vec();
    cols.sort_unstable();
    cols
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    order: &'a [Vec<u32>],
    config: &'a TrainConfig,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

enum ArenaNode {
    Open {
        g: f64,
        h: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Copy)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: Option<f64>,
}

impl Grower<'_> {
    /// Grow one tree on gradients `g`; returns the tree and each row's leaf weight.
    fn grow(&self, g: &[f64], cols: Vec<usize>) -> (RegressionTree, Vec<f64>) {
        let cfg = self.config;
        let n = g.len();
        let mut node_of = vec![0usize; n];
        let mut arena = vec![ArenaNode::Open {
            g: g.iter().sum(),
            h: n as f64,
        }];
        let mut frontier = vec![0usize];

        for _depth in 0..cfg.max_depth {
            let mut slot_of = vec![usize::MAX; arena.len()];
            for (s, &id) in frontier.iter().enumerate() {
                slot_of[id] = s;
            }
            let totals: Vec<(f64, f64)> = frontier
                .iter()
                .map(|&id| match arena[id] {
                    ArenaNode::Open { g, h } => (g, h),
                    ArenaNode::Split { .. } => unreachable!("frontier nodes are open"),
                })
                .collect();
            let mut candidates: Vec<Vec<Candidate>> = vec![Vec::new(); frontier.len()];
            for &f in &cols {
                let col = &self.columns[f];
                let mut state = vec![
                    ScanState {
                        gl: 0.0,
                        hl: 0.0,
                        last: None
                    };
                    frontier.len()
                ];
                for &i in &self.order[f] {
                    let i = i as usize;
                    let s = slot_of[node_of[i]];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = col[i];
                    let st = &mut state[s];
                    if let Some(lv) = st.last {
                        if v > lv {
                            let (gt, ht) = totals[s];
                            let (gr, hr) = (gt - st.gl, ht - st.hl);
                            if st.hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                                candidates[s].push(Candidate {
                                    feature: f,
                                    threshold: (lv + v) / 2.0,
                                    gain: split_gain(st.gl, st.hl, gr, hr, cfg.alpha, cfg.lambda),
                                });
                            }
                        }
                    }
                    st.gl += g[i];
                    st.hl += 1.0;
                    st.last = Some(v);
                }
            }

            let mut next = Vec::new();
            let mut any_split = false;
            for (s, &id) in frontier.iter().enumerate() {
                let (gt, ht) = totals[s];
                let tol = tie_tolerance(score(gt, ht, cfg.alpha, cfg.lambda));
                let best = candidates[s].iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
                if best <= tol {
                    continue;
                }
                let chosen = candidates[s]
                    .iter()
                    .find(|c| c.gain >= best - tol)
                    .copied()
                    .expect("best candidate exists");
                let left = arena.len();
                arena.push(ArenaNode::Open { g: 0.0, h: 0.0 });
                arena.push(ArenaNode::Open { g: 0.0, h: 0.0 });
                arena[id] = ArenaNode::Split {
                    feature: chosen.feature,
                    threshold: chosen.threshold,
                    left,
                    right: left + 1,
                };
                next.push(left);
                next.push(left + 1);
                any_split = true;
            }
            if !any_split {
                break;
            }
            // route rows to children, summing in canonical row order
            for i in 0..n {
                if let ArenaNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = arena[node_of[i]]
                {
                    let child = if self.columns[feature][i] < threshold {
                        left
                    } else {
                        right
                    };
                    node_of[i] = child;
                    if let ArenaNode::Open { g: cg, h: ch } = &mut arena[child] {
                        *cg += g[i];
                        *ch += 1.0;
                    }
                }
            }
            frontier = next;
        }

        let weights: Vec<f64> = arena
            .iter()
            .map(|node| match *node {
                ArenaNode::Open { g, h } => leaf_weight(g, h, cfg.alpha, cfg.lambda),
                ArenaNode::Split { .. } => f64::NAN,
            })
            .collect();
        let leaf_of: Vec<f64> = node_of.iter().map(|&id| weights[id]).collect();
        let root = build_node(&arena, &weights, 0);
        (RegressionTree { columns: cols, root }, leaf_of)
    }
}

fn build_node(arena: &[ArenaNode], weights: &[f64], id: usize) -> Node {
    match arena[id] {
        ArenaNode::Open { .. } => Node::Leaf { weight: weights[id] },
        ArenaNode::Split {
            feature,
            threshold,
            left,
            right,
        } => Node::Split {
            feature,
            threshold,
            left: Box::new(build_node(arena, weights, left)),
            right: Box::new(build_node(arena, weights, right)),
        },
    }
}

#[derive(Serialize)]
struct ArtifactRef<'a> {
    format_version: u32,
    base_score: f64,
    config: &'a TrainConfig,
    feature_schema: &'a [FeatureSpec],
    trees: &'a [RegressionTree],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Artifact {
    format_version: u32,
    base_score: f64,
    config: TrainConfig,
    feature_schema: Vec<FeatureSpec>,
    trees: Vec<RegressionTree>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u64,
}

pub fn save_model(forest: &BoostedForest) -> Vec<u8> {
    let artifact = ArtifactRef {
        format_version: MODEL_FORMAT_VERSION,
        base_score: forest.base_score,
        config: &forest.config,
        feature_schema: &forest.feature_schema,
        trees: &forest.trees,
    };
    let mut bytes = serde_json::to_vec_pretty(&artifact).expect("forest serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_model(bytes: &[u8]) -> Result<BoostedForest, BoostError> {
    let corrupted = |m: String| BoostError::CorruptedArtifact(m);
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| corrupted(e.to_string()))?;
    if probe.format_version != MODEL_FORMAT_VERSION as u64 {
        return Err(BoostError::VersionMismatch {
            found: probe.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let a: Artifact = serde_json::from_slice(bytes).map_err(|e| corrupted(e.to_string()))?;
    debug_assert_eq!(a.format_version, MODEL_FORMAT_VERSION);
    a.config.validate().map_err(|e| corrupted(e.to_string()))?;
    if !a.base_score.is_finite() {
        return Err(corrupted("non-finite base_score".into()));
    }
    if a.feature_schema != feature_schema() {
        return Err(corrupted("unexpected feature schema".into()));
    }
    for (k, tree) in a.trees.iter().enumerate() {
        check_tree(tree, a.config.max_depth).map_err(|m| corrupted(format!("tree {k}: {m}")))?;
    }
    Ok(BoostedForest {
        base_score: a.base_score,
        trees: a.trees,
        config: a.config,
        feature_schema: a.feature_schema,
    })
}

fn check_tree(tree: &RegressionTree, max_depth: usize) -> Result<(), String> {
    if tree.columns.is_empty() || tree.columns.windows(2).any(|w| w[0] >= w[1]) {
        return Err("column set must be non-empty and strictly ascending".into());
    }
    if tree.columns.iter().any(|&c| c >= N_FEATURES) {
        return Err("column index out of range".into());
    }
    if tree.depth() > max_depth {
        return Err(format!("depth {} exceeds max_depth {max_depth}", tree.depth()));
    }
    fn walk(n: &Node, cols: &[usize]) -> Result<(), String> {
        match n {
            Node::Leaf { weight } if weight.is_finite() => Ok(()),
            Node::Leaf { .. } => Err("non-finite leaf weight".into()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if !cols.contains(feature) {
                    return Err(format!("split on unsampled feature {feature}"));
                }
                if !threshold.is_finite() {
                    return Err("non-finite threshold".into());
                }
                walk(left, cols)?;
                walk(right, cols)
            }
        }
    }
    walk(&tree.root, &tree.columns)
}
