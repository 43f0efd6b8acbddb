//! Tree classifiers for binary labels: a CART decision tree (Gini), a random
//! forest of CART trees, and gradient-boosted regression trees on the
//! logistic loss with second-order split gains.
//!
//! Rows with `x[feature] <= threshold` go left. Thresholds are midpoints of
//! adjacent distinct training values. Among equal-scoring splits the lowest
//! feature index wins, then the smallest threshold.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Dense;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Depth of the deepest leaf; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Index of the leaf `x` lands in, counting leaves left to right.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.leaf_index(x)
                } else {
                    left.n_leaves() + right.leaf_index(x)
                }
            }
        }
    }
}

fn check_xy(x: &Dense, y: &[bool]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::invalid("cannot fit on an empty design matrix"));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.cols() == 0 {
        return Err(Error::invalid("design matrix has no columns"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite(
            "design matrix contains non-finite values".into(),
        ));
    }
    Ok(())
}

fn check_width(x: &Dense, n_features: usize) -> Result<()> {
    if x.cols() != n_features {
        return Err(Error::Shape(format!(
            "model expects {n_features} features, got {}",
            x.cols()
        )));
    }
    Ok(())
}

/// `idx` sorted by feature `f`, plus midpoint thresholds between distinct
/// neighbors as `(position of last left row, threshold)`.
fn sorted_candidates(x: &Dense, idx: &[usize], f: usize) -> (Vec<usize>, Vec<(usize, f64)>) {
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
    let mut cands = Vec::new();
    for k in 0..order.len().saturating_sub(1) {
        let (a, b) = (x[(order[k], f)], x[(order[k + 1], f)]);
        if a < b {
            let mid = a + (b - a) / 2.0;
            cands.push((k, if mid < b { mid } else { a }));
        }
    }
    (order, cands)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for DtParams {
    fn default() -> Self {
        DtParams {
            max_depth: 8,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.root.predict(x)
    }
}

struct CartBuilder<'a> {
    x: &'a Dense,
    y: &'a [bool],
    params: DtParams,
    /// Features per split; `None` considers all.
    subset: Option<(usize, &'a mut Rng)>,
}

impl CartBuilder<'_> {
    fn build(&mut self, idx: &[usize], depth: usize) -> TreeNode {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let leaf = TreeNode::Leaf {
            value: pos as f64 / n as f64,
        };
        if pos == 0 || pos == n || depth >= self.params.max_depth {
            return leaf;
        }
        let p = self.x.cols();
        let feats: Vec<usize> = match &mut self.subset {
            Some((k, rng)) if *k < p => {
                let mut f = sample(*rng, p, *k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, f64, Vec<usize>, usize)> = None;
        for f in feats {
            let (order, cands) = sorted_candidates(self.x, idx, f);
            let mut left_pos = 0usize;
            let mut next = 0usize;
            for &(k, thr) in &cands {
                while next <= k {
                    left_pos += self.y[order[next]] as usize;
                    next += 1;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_pos = pos - left_pos;
                // n times the weighted Gini impurity of the children.
                let score = 2.0 * (left_pos * (nl - left_pos)) as f64 / nl as f64
                    + 2.0 * (right_pos * (nr - right_pos)) as f64 / nr as f64;
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, f, thr, order.clone(), nl));
                }
            }
        }
        match best {
            None => leaf,
            Some((_, feature, threshold, order, nl)) => TreeNode::Split {
                feature,
                threshold,
                left: Box::new(self.build(&order[..nl], depth + 1)),
                right: Box::new(self.build(&order[nl..], depth + 1)),
            },
        }
    }
}

pub fn fit_decision_tree(x: &Dense, y: &[bool], params: &DtParams) -> Result<DecisionTree> {
    check_xy(x, y)?;
    let idx: Vec<usize> = (0..x.rows()).collect();
    let root = CartBuilder {
        x,
        y,
        params: *params,
        subset: None,
    }
    .build(&idx, 0);
    Ok(DecisionTree {
        root,
        n_features: x.cols(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn per split (at least one).
    pub feature_frac: f64,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 1,
            feature_frac: 0.5,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
}

impl RandomForest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_random_forest(x: &Dense, y: &[bool], params: &RfParams, seed: u64) -> Result<RandomForest> {
    check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be at least 1"));
    }
    if !(params.feature_frac > 0.0 && params.feature_frac <= 1.0) {
        return Err(Error::invalid("feature_frac must lie in (0, 1]"));
    }
    let n = x.rows();
    let k = ((params.feature_frac * x.cols() as f64).floor() as usize).max(1);
    let dt = DtParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
    };
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = seed::rng(seed::derive_index(seed, t as u64));
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            CartBuilder {
                x,
                y,
                params: dt,
                subset: Some((k, &mut rng)),
            }
            .build(&idx, 0)
        })
        .collect();
    Ok(RandomForest {
        trees,
        n_features: x.cols(),
    })
}

/// Loss reduction of a split on gradient/hessian sums, minus `gamma`.
pub fn gbt_split_gain(g_l: f64, h_l: f64, g_r: f64, h_r: f64, lambda: f64, gamma: f64) -> f64 {
    let g = g_l + g_r;
    let h = h_l + h_r;
    0.5 * (g_l * g_l / (h_l + lambda) + g_r * g_r / (h_r + lambda) - g * g / (h + lambda)) - gamma
}

/// Newton step for a leaf holding gradient sum `g` and hessian sum `h`.
pub fn gbt_leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_hessian: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 4,
            lambda: 1.0,
            gamma: 0.0,
            min_child_hessian: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    /// Log-odds of the training positive rate.
    pub base_score: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub rounds: usize,
    pub n_features: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of raw score `z` for label `y`, computed without forming
/// the probability.
fn logistic_loss(z: f64, y: bool) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    if y {
        softplus - z
    } else {
        softplus
    }
}

impl GbtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

struct GbtBuilder<'a> {
    x: &'a Dense,
    g: &'a [f64],
    h: &'a [f64],
    params: GbtParams,
}

impl GbtBuilder<'_> {
    fn build(&self, idx: &[usize], depth: usize) -> TreeNode {
        let gs: f64 = idx.iter().map(|&i| self.g[i]).sum();
        let hs: f64 = idx.iter().map(|&i| self.h[i]).sum();
        let leaf = TreeNode::Leaf {
            value: gbt_leaf_weight(gs, hs, self.params.lambda),
        };
        if depth >= self.params.max_depth || idx.len() < 2 {
            return leaf;
        }
        let mut best: Option<(f64, usize, f64, Vec<usize>, usize)> = None;
        for f in 0..self.x.cols() {
            let (order, cands) = sorted_candidates(self.x, idx, f);
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut next = 0usize;
            for &(k, thr) in &cands {
                while next <= k {
                    gl += self.g[order[next]];
                    hl += self.h[order[next]];
                    next += 1;
                }
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < self.params.min_child_hessian || hr < self.params.min_child_hessian {
                    continue;
                }
                let gain = gbt_split_gain(gl, hl, gr, hr, self.params.lambda, self.params.gamma);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, thr, order.clone(), k + 1));
                }
            }
        }
        match best {
            None => leaf,
            Some((_, feature, threshold, order, nl)) => TreeNode::Split {
                feature,
                threshold,
                left: Box::new(self.build(&order[..nl], depth + 1)),
                right: Box::new(self.build(&order[nl..], depth + 1)),
            },
        }
    }
}

/// Fit boosted trees and return the training log-loss before the first
/// round and after every round.
pub fn fit_gbt_logged(x: &Dense, y: &[bool], params: &GbtParams) -> Result<(GbtModel, Vec<f64>)> {
    check_xy(x, y)?;
    if params.lambda < 0.0 || params.learning_rate <= 0.0 || params.min_child_hessian < 0.0 {
        return Err(Error::invalid(
            "GBT needs lambda >= 0, learning_rate > 0, min_child_hessian >= 0",
        ));
    }
    let n = x.rows();
    let prior = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let clamped = prior.clamp(1e-12, 1.0 - 1e-12);
    let base_score = (clamped / (1.0 - clamped)).ln();
    let mut raw = vec![base_score; n];
    let mean_loss =
        |raw: &[f64]| raw.iter().zip(y).map(|(&z, &t)| logistic_loss(z, t)).sum::<f64>() / n as f64;
    let mut losses = vec![mean_loss(&raw)];
    let idx: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(params.rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..params.rounds {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            g[i] = p - if y[i] { 1.0 } else { 0.0 };
            h[i] = p * (1.0 - p);
        }
        let tree = GbtBuilder {
            x,
            g: &g,
            h: &h,
            params: *params,
        }
        .build(&idx, 0);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += params.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
        losses.push(mean_loss(&raw));
    }
    Ok((
        GbtModel {
            trees,
            learning_rate: params.learning_rate,
            base_score,
            lambda: params.lambda,
            gamma: params.gamma,
            max_depth: params.max_depth,
            rounds: params.rounds,
            n_features: x.cols(),
        },
        losses,
    ))
}

pub fn fit_gbt(x: &Dense, y: &[bool], params: &GbtParams) -> Result<GbtModel> {
    Ok(fit_gbt_logged(x, y, params)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Dt,
    Rf,
    Gbt,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Dt, ClassifierKind::Rf, ClassifierKind::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Dt => "dt",
            ClassifierKind::Rf => "rf",
            ClassifierKind::Gbt => "gbt",
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(ClassifierKind::Dt),
            "rf" => Ok(ClassifierKind::Rf),
            "gbt" => Ok(ClassifierKind::Gbt),
            _ => Err(Error::invalid(format!("unknown classifier {s:?} (dt, rf, gbt)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierParams {
    Dt(DtParams),
    Rf(RfParams),
    Gbt(GbtParams),
}

impl ClassifierParams {
    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Dt => ClassifierParams::Dt(DtParams::default()),
            ClassifierKind::Rf => ClassifierParams::Rf(RfParams::default()),
            ClassifierKind::Gbt => ClassifierParams::Gbt(GbtParams::default()),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierParams::Dt(_) => ClassifierKind::Dt,
            ClassifierParams::Rf(_) => ClassifierKind::Rf,
            ClassifierParams::Gbt(_) => ClassifierKind::Gbt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Dt(DecisionTree),
    Rf(RandomForest),
    Gbt(GbtModel),
}

impl Classifier {
    /// Fit the classifier described by `params`; `seed` only matters for
    /// random forests.
    pub fn fit(params: &ClassifierParams, x: &Dense, y: &[bool], seed: u64) -> Result<Self> {
        Ok(match params {
            ClassifierParams::Dt(p) => Classifier::Dt(fit_decision_tree(x, y, p)?),
            ClassifierParams::Rf(p) => Classifier::Rf(fit_random_forest(x, y, p, seed)?),
            ClassifierParams::Gbt(p) => Classifier::Gbt(fit_gbt(x, y, p)?),
        })
    }

    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Dt(m) => m.n_features,
            Classifier::Rf(m) => m.n_features,
            Classifier::Gbt(m) => m.n_features,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            Classifier::Dt(m) => m.predict_row(x),
            Classifier::Rf(m) => m.predict_row(x),
            Classifier::Gbt(m) => m.predict_row(x),
        }
    }

    /// Positive-class probability for every row.
    pub fn predict(&self, x: &Dense) -> Result<Vec<f64>> {
        check_width(x, self.n_features())?;
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("bad model dump: {e}")))
    }
}
