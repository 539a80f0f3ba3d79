//! CART-style decision trees.
//!
//! Two growers share one engine: gini classification trees (random forest)
//! and second-order regression trees (boosting), whose leaves hold
//! `-G / (H + lambda)` and whose splits must clear
//! `0.5 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma > 0`.
//!
//! Columns are sorted once per dataset ([`Presorted`]) and each node keeps its
//! rows as a contiguous range of every column's sort order, so finding a split
//! is a linear scan and splitting a node is a stable partition.
//!
//! Candidate thresholds are midpoints between consecutive distinct values.
//! Routing is `x[feature] < threshold` to the left, so a value equal to the
//! threshold goes right. Among equally good splits the lowest feature index
//! wins, then the lowest threshold. Gini comparisons are done in exact integer
//! arithmetic, so these ties are real ties.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{LabelId, N_CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Default tree settings by learner.
pub mod defaults {
    pub const FOREST_MIN_SAMPLES_LEAF: usize = 1;
    pub const BOOST_MIN_SAMPLES_LEAF: usize = 5;
    pub const FOREST_MAX_DEPTH: usize = usize::MAX;
    pub const BOOST_MAX_DEPTH: usize = 4;
    pub const LAMBDA: f64 = 1.0;
    pub const GAMMA: f64 = 0.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn (without replacement) as split candidates at each node.
    pub n_feature_candidates: usize,
    /// L2 penalty on leaf weights (regression trees only).
    pub lambda: f64,
    /// Minimum split gain (regression trees only).
    pub gamma: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: defaults::FOREST_MAX_DEPTH,
            min_samples_leaf: defaults::FOREST_MIN_SAMPLES_LEAF,
            n_feature_candidates: usize::MAX,
            lambda: defaults::LAMBDA,
            gamma: defaults::GAMMA,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf < 1 {
            return Err(Error::param("min_samples_leaf", "must be at least 1"));
        }
        if self.n_feature_candidates < 1 {
            return Err(Error::param("n_feature_candidates", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be non-negative"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class probabilities (classification) or a one-element weight (regression).
    Leaf { value: Vec<f64> },
}

/// A fitted tree stored as an arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(n_features: usize, value: Vec<f64>) -> Self {
        Self {
            n_features,
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    /// Leaf value for `x`; the caller guarantees the arity.
    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "tree expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            TreeNode::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            max = max.max(d);
            if let TreeNode::Split { left, right, .. } = self.nodes[id] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

pub fn predict_tree<'a>(t: &'a DecisionTree, x: &[f64]) -> Result<&'a [f64]> {
    t.predict(x)
}

/// Gini impurity `1 - sum_k p_k^2` of a label multiset.
pub fn gini_impurity(labels: &[LabelId]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("gini impurity of an empty label set".into()));
    }
    let mut counts = [0usize; N_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Column-major copy of a feature matrix with each column's row order sorted
/// by value (ties by row index).
#[derive(Debug, Clone)]
pub struct Presorted {
    n_rows: usize,
    cols: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
        let order = cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .partial_cmp(&col[b as usize])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self {
            n_rows: x.rows(),
            cols,
            order,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }
}

trait Criterion {
    type Stats: Copy + Default;
    type Score: Copy;

    fn add(&self, s: &mut Self::Stats, row: usize, w: u32);
    fn minus(&self, total: &Self::Stats, left: &Self::Stats) -> Self::Stats;
    fn weight(&self, s: &Self::Stats) -> u64;
    /// Whether a node with these stats is worth trying to split at all.
    fn splittable(&self, s: &Self::Stats) -> bool;
    fn score(&self, left: &Self::Stats, right: &Self::Stats) -> Option<Self::Score>;
    /// `a` strictly better than `b`.
    fn better(&self, a: &Self::Score, b: &Self::Score) -> bool;
    fn accept(&self, best: &Self::Score, parent: &Self::Stats) -> bool;
    fn leaf(&self, s: &Self::Stats) -> Vec<f64>;
}

struct Gini<'a> {
    y: &'a [LabelId],
}

/// `sum_k c_k^2 / n` as an exact fraction.
#[derive(Clone, Copy, Debug)]
struct Ratio {
    num: u128,
    den: u128,
}

impl Ratio {
    fn gt(&self, other: &Ratio) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn sum_sq(c: &[u64; N_CLASSES]) -> u128 {
    c.iter().map(|&v| u128::from(v) * u128::from(v)).sum()
}

impl Criterion for Gini<'_> {
    type Stats = [u64; N_CLASSES];
    type Score = Ratio;

    #[inline]
    fn add(&self, s: &mut Self::Stats, row: usize, w: u32) {
        s[self.y[row].index()] += u64::from(w);
    }

    #[inline]
    fn minus(&self, total: &Self::Stats, left: &Self::Stats) -> Self::Stats {
        let mut r = *total;
        for (a, b) in r.iter_mut().zip(left) {
            *a -= b;
        }
        r
    }

    #[inline]
    fn weight(&self, s: &Self::Stats) -> u64 {
        s.iter().sum()
    }

    fn splittable(&self, s: &Self::Stats) -> bool {
        s.iter().filter(|&&c| c > 0).count() > 1
    }

    // Weighted child impurity is n - (A/nL + B/nR); maximizing A/nL + B/nR
    // minimizes it.
    #[inline]
    fn score(&self, left: &Self::Stats, right: &Self::Stats) -> Option<Ratio> {
        let nl = u128::from(self.weight(left));
        let nr = u128::from(self.weight(right));
        Some(Ratio {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        })
    }

    #[inline]
    fn better(&self, a: &Ratio, b: &Ratio) -> bool {
        a.gt(b)
    }

    // Splitting never raises weighted gini; zero-gain splits of impure nodes
    // are kept so that patterns like XOR can still be separated one level down.
    fn accept(&self, best: &Ratio, parent: &Self::Stats) -> bool {
        let parent = Ratio {
            num: sum_sq(parent),
            den: u128::from(self.weight(parent)),
        };
        !parent.gt(best)
    }

    fn leaf(&self, s: &Self::Stats) -> Vec<f64> {
        let n = self.weight(s) as f64;
        if n == 0.0 {
            return vec![1.0 / N_CLASSES as f64; N_CLASSES];
        }
        s.iter().map(|&c| c as f64 / n).collect()
    }
}

struct SecondOrder<'a> {
    g: &'a [f64],
    h: &'a [f64],
    lambda: f64,
    gamma: f64,
}

#[derive(Clone, Copy, Default, Debug)]
struct GradStats {
    g: f64,
    h: f64,
    n: u64,
}

impl SecondOrder<'_> {
    #[inline]
    fn term(&self, s: &GradStats) -> Option<f64> {
        let d = s.h + self.lambda;
        (d > 0.0).then(|| s.g * s.g / d)
    }
}

impl Criterion for SecondOrder<'_> {
    type Stats = GradStats;
    type Score = f64;

    #[inline]
    fn add(&self, s: &mut GradStats, row: usize, w: u32) {
        let wf = f64::from(w);
        s.g += wf * self.g[row];
        s.h += wf * self.h[row];
        s.n += u64::from(w);
    }

    #[inline]
    fn minus(&self, total: &GradStats, left: &GradStats) -> GradStats {
        GradStats {
            g: total.g - left.g,
            h: total.h - left.h,
            n: total.n - left.n,
        }
    }

    #[inline]
    fn weight(&self, s: &GradStats) -> u64 {
        s.n
    }

    fn splittable(&self, _s: &GradStats) -> bool {
        true
    }

    /// Children's summed structure score; the parent term and gamma are
    /// constant within a node.
    #[inline]
    fn score(&self, left: &GradStats, right: &GradStats) -> Option<f64> {
        Some(self.term(left)? + self.term(right)?)
    }

    #[inline]
    fn better(&self, a: &f64, b: &f64) -> bool {
        a > b
    }

    fn accept(&self, best: &f64, parent: &GradStats) -> bool {
        match self.term(parent) {
            Some(p) => 0.5 * (best - p) - self.gamma > 0.0,
            None => false,
        }
    }

    fn leaf(&self, s: &GradStats) -> Vec<f64> {
        let d = s.h + self.lambda;
        vec![if d > 0.0 { -s.g / d } else { 0.0 }]
    }
}

/// Split gain of the second-order objective, as used by the regression grower.
pub fn second_order_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

struct Best<S> {
    feature: usize,
    threshold: f64,
    score: S,
}

fn grow<C: Criterion>(
    crit: &C,
    data: &Presorted,
    weights: &[u32],
    p: &TreeParams,
    rng: &mut Rng,
) -> DecisionTree {
    let m = data.n_features();
    let mut order: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&r| weights[r as usize] > 0).collect())
        .collect();
    let n_active = order.first().map_or(0, Vec::len);
    let min_leaf = p.min_samples_leaf.max(1) as u64;
    let k = p.n_feature_candidates.min(m);

    let mut nodes = vec![TreeNode::Leaf { value: Vec::new() }];
    let mut goes_left = vec![false; data.n_rows];
    let mut scratch: Vec<u32> = Vec::with_capacity(n_active);
    let mut stack = vec![(0usize, 0usize, n_active, 0usize)];

    while let Some((id, lo, hi, depth)) = stack.pop() {
        let mut total = C::Stats::default();
        if m > 0 {
            for &r in &order[0][lo..hi] {
                crit.add(&mut total, r as usize, weights[r as usize]);
            }
        }
        let n = crit.weight(&total);
        if m == 0 || depth >= p.max_depth || n < 2 * min_leaf || !crit.splittable(&total) {
            nodes[id] = TreeNode::Leaf {
                value: crit.leaf(&total),
            };
            continue;
        }

        let candidates: Vec<usize> = if k >= m {
            (0..m).collect()
        } else {
            let mut c = index::sample(rng, m, k).into_vec();
            c.sort_unstable();
            c
        };

        let mut best: Option<Best<C::Score>> = None;
        for &f in &candidates {
            let idx = &order[f][lo..hi];
            let col = &data.cols[f];
            let mut left = C::Stats::default();
            for i in 0..idx.len().saturating_sub(1) {
                let r = idx[i] as usize;
                crit.add(&mut left, r, weights[r]);
                let a = col[r];
                let b = col[idx[i + 1] as usize];
                if a >= b || crit.weight(&left) < min_leaf {
                    continue;
                }
                let right = crit.minus(&total, &left);
                if crit.weight(&right) < min_leaf {
                    break;
                }
                let Some(score) = crit.score(&left, &right) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| crit.better(&score, &b.score)) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold <= a {
                        threshold = b;
                    }
                    best = Some(Best {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }

        let Some(best) = best.filter(|b| crit.accept(&b.score, &total)) else {
            nodes[id] = TreeNode::Leaf {
                value: crit.leaf(&total),
            };
            continue;
        };

        let split_col = &data.cols[best.feature];
        for &r in &order[0][lo..hi] {
            goes_left[r as usize] = split_col[r as usize] < best.threshold;
        }
        let mut n_left = 0;
        for o in order.iter_mut() {
            scratch.clear();
            let slice = &mut o[lo..hi];
            let mut w = 0;
            for i in 0..slice.len() {
                let r = slice[i];
                if goes_left[r as usize] {
                    slice[w] = r;
                    w += 1;
                } else {
                    scratch.push(r);
                }
            }
            slice[w..].copy_from_slice(&scratch);
            n_left = w;
        }

        let left_id = nodes.len();
        nodes.push(TreeNode::Leaf { value: Vec::new() });
        let right_id = nodes.len();
        nodes.push(TreeNode::Leaf { value: Vec::new() });
        nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: left_id,
            right: right_id,
        };
        stack.push((right_id, lo + n_left, hi, depth + 1));
        stack.push((left_id, lo, lo + n_left, depth + 1));
    }

    DecisionTree {
        n_features: m,
        nodes,
    }
}

fn check_rows(data: &Presorted, len: usize, what: &str) -> Result<()> {
    if data.n_rows() != len {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {len} {what}",
            data.n_rows()
        )));
    }
    Ok(())
}

/// Gini tree over presorted data; `weights[i]` is how many times row `i` is
/// in the sample (0 excludes it).
pub fn grow_classification_tree(
    data: &Presorted,
    y: &[LabelId],
    weights: &[u32],
    p: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    p.validate()?;
    check_rows(data, y.len(), "labels")?;
    check_rows(data, weights.len(), "weights")?;
    Ok(grow(&Gini { y }, data, weights, p, rng))
}

/// Second-order regression tree over presorted data.
pub fn grow_regression_tree(
    data: &Presorted,
    g: &[f64],
    h: &[f64],
    weights: &[u32],
    p: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    p.validate()?;
    check_rows(data, g.len(), "gradients")?;
    check_rows(data, h.len(), "hessians")?;
    check_rows(data, weights.len(), "weights")?;
    if let Some(i) = h.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::param("hessian", format!("row {i} has {}", h[i])));
    }
    let crit = SecondOrder {
        g,
        h,
        lambda: p.lambda,
        gamma: p.gamma,
    };
    Ok(grow(&crit, data, weights, p, rng))
}

fn require_rows(x: &Matrix) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput("cannot fit a tree on zero rows".into()));
    }
    Ok(())
}

pub fn fit_classification_tree(
    x: &Matrix,
    y: &[LabelId],
    p: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    require_rows(x)?;
    let data = Presorted::new(x);
    grow_classification_tree(&data, y, &vec![1; x.rows()], p, rng)
}

pub fn fit_regression_tree(
    x: &Matrix,
    g: &[f64],
    h: &[f64],
    p: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    require_rows(x)?;
    let data = Presorted::new(x);
    grow_regression_tree(&data, g, h, &vec![1; x.rows()], p, rng)
}
