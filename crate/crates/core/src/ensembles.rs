//! Random forest and softmax gradient boosting over [`crate::tree`].

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelId, N_CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{softmax_in_place, ProbabilisticClassifier};
use crate::rng::{self, stream};
use crate::tree::{self, DecisionTree, Presorted, TreeParams};

/// Per-node feature candidates used by the forest unless overridden:
/// the rounded square root of the feature count.
pub fn default_feature_candidates(n_features: usize) -> usize {
    ((n_features as f64).sqrt().round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            bootstrap: true,
            tree: TreeParams {
                n_feature_candidates: default_feature_candidates(crate::data::N_FEATURES),
                ..TreeParams::default()
            },
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::param("n_trees", "must be at least 1"));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub params: ForestParams,
    pub trees: Vec<DecisionTree>,
}

fn check_training_shapes(x: &Matrix, n_labels: usize) -> Result<()> {
    if x.rows() != n_labels {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {n_labels} labels",
            x.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    Ok(())
}

/// Fits `n_trees` classification trees, each on its own bootstrap resample
/// and with its own rng stream, so the result does not depend on scheduling.
pub fn fit_random_forest(
    x: &Matrix,
    y: &[LabelId],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    params.validate()?;
    check_training_shapes(x, y.len())?;
    let data = Presorted::new(x);
    let n = x.rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::derived(seed, stream::FOREST_TREE, t as u64);
            let mut weights = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            tree::grow_classification_tree(&data, y, &weights, &params.tree, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        n_features: x.cols(),
        params: params.clone(),
        trees,
    })
}

impl ProbabilisticClassifier for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row_into(&self, x: &[f64], out: &mut [f64; N_CLASSES]) {
        *out = [0.0; N_CLASSES];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict_unchecked(x)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    /// Unit hessians: plain gradient boosting.
    FirstOrder,
    /// Newton steps with h = p(1 − p).
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    /// Fraction of rows drawn without replacement for each round.
    pub subsample_rows: f64,
    /// Fraction of features offered as split candidates at each node.
    pub subsample_cols: f64,
    pub variant: BoostVariant,
}

impl BoostParams {
    /// First-order boosting: no leaf penalty, no gain gate, all columns.
    pub fn gradient_boosting() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            tree: TreeParams {
                max_depth: tree::defaults::BOOST_MAX_DEPTH,
                min_samples_leaf: tree::defaults::BOOST_MIN_SAMPLES_LEAF,
                n_feature_candidates: usize::MAX,
                lambda: 0.0,
                gamma: 0.0,
            },
            subsample_rows: 1.0,
            subsample_cols: 1.0,
            variant: BoostVariant::FirstOrder,
        }
    }

    /// Second-order boosting with L2 leaf penalty, gain gate and column
    /// subsampling.
    pub fn xgboost() -> Self {
        Self {
            tree: TreeParams {
                lambda: tree::defaults::LAMBDA,
                gamma: tree::defaults::GAMMA,
                ..Self::gradient_boosting().tree
            },
            subsample_cols: 0.8,
            variant: BoostVariant::SecondOrder,
            ..Self::gradient_boosting()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        for (name, v) in [
            ("subsample_rows", self.subsample_rows),
            ("subsample_cols", self.subsample_cols),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, "must be in (0, 1]"));
            }
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub n_features: usize,
    pub params: BoostParams,
    pub base_score: [f64; N_CLASSES],
    /// `stage_trees[r][k]` is the class-`k` tree of round `r`.
    pub stage_trees: Vec<Vec<DecisionTree>>,
    /// Mean training cross-entropy before the first round and after each one.
    pub train_loss: Vec<f64>,
}

/// Smallest prior used for the base score, so absent classes stay finite.
const MIN_PRIOR: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Hessians {
    Unit,
    Newton,
}

pub fn fit_boosting(x: &Matrix, y: &[LabelId], params: &BoostParams, seed: u64) -> Result<BoostModel> {
    let hessians = match params.variant {
        BoostVariant::FirstOrder => Hessians::Unit,
        BoostVariant::SecondOrder => Hessians::Newton,
    };
    fit_boosting_with(x, y, params, seed, hessians)
}

fn fit_boosting_with(
    x: &Matrix,
    y: &[LabelId],
    params: &BoostParams,
    seed: u64,
    hessians: Hessians,
) -> Result<BoostModel> {
    params.validate()?;
    check_training_shapes(x, y.len())?;
    let n = x.rows();
    let m = x.cols();
    let data = Presorted::new(x);

    let mut counts = [0usize; N_CLASSES];
    for l in y {
        counts[l.index()] += 1;
    }
    let base_score = counts.map(|c| (c as f64 / n as f64).max(MIN_PRIOR).ln());

    let mut tree_params = params.tree.clone();
    if params.subsample_cols < 1.0 {
        let k = (params.subsample_cols * m as f64).round() as usize;
        tree_params.n_feature_candidates = k.clamp(1, m.max(1));
    }
    let n_sub = ((params.subsample_rows * n as f64).round() as usize).clamp(1, n);

    let mut logits = Matrix::zeros(n, N_CLASSES);
    for i in 0..n {
        logits.row_mut(i).copy_from_slice(&base_score);
    }
    let mut probs = logits.clone();
    let mut train_loss = vec![softmax_loss(&logits, &mut probs, y)];
    let mut stage_trees = Vec::with_capacity(params.n_rounds);
    let mut grad = vec![vec![0.0; n]; N_CLASSES];
    let mut hess = vec![vec![1.0; n]; N_CLASSES];

    for r in 0..params.n_rounds {
        let round_seed = rng::derive_seed(seed, stream::BOOST_ROUND, r as u64);
        for (i, row) in probs.iter_rows().enumerate() {
            let yi = y[i].index();
            for k in 0..N_CLASSES {
                let p = row[k];
                grad[k][i] = p - if k == yi { 1.0 } else { 0.0 };
                if hessians == Hessians::Newton {
                    hess[k][i] = p * (1.0 - p);
                }
            }
        }
        let weights = if n_sub < n {
            let mut w = vec![0u32; n];
            for i in index::sample(&mut rng::seeded(round_seed), n, n_sub) {
                w[i] = 1;
            }
            w
        } else {
            vec![1u32; n]
        };
        let trees = (0..N_CLASSES)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng::derived(round_seed, stream::MODEL, k as u64);
                tree::grow_regression_tree(&data, &grad[k], &hess[k], &weights, &tree_params, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, row) in x.iter_rows().enumerate() {
            let z = logits.row_mut(i);
            for (k, t) in trees.iter().enumerate() {
                z[k] += params.learning_rate * t.predict_unchecked(row)[0];
            }
        }
        train_loss.push(softmax_loss(&logits, &mut probs, y));
        stage_trees.push(trees);
    }

    Ok(BoostModel {
        n_features: m,
        params: params.clone(),
        base_score,
        stage_trees,
        train_loss,
    })
}

/// Fills `probs` with the row softmax of `logits` and returns the mean
/// cross-entropy against `y`.
fn softmax_loss(logits: &Matrix, probs: &mut Matrix, y: &[LabelId]) -> f64 {
    let mut total = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let p = probs.row_mut(i);
        p.copy_from_slice(logits.row(i));
        softmax_in_place(p);
        total -= p[yi.index()].max(f64::MIN_POSITIVE).ln();
    }
    total / y.len() as f64
}

impl BoostModel {
    pub fn n_rounds(&self) -> usize {
        self.stage_trees.len()
    }
}

impl ProbabilisticClassifier for BoostModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row_into(&self, x: &[f64], out: &mut [f64; N_CLASSES]) {
        *out = self.base_score;
        for round in &self.stage_trees {
            for (o, t) in out.iter_mut().zip(round) {
                *o += self.params.learning_rate * t.predict_unchecked(x)[0];
            }
        }
        softmax_in_place(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GeneratorConfig};
    use crate::model::argmax;

    fn synthetic(n: usize, sigma: f64, seed: u64) -> (Matrix, Vec<LabelId>) {
        let cfg = GeneratorConfig {
            n_total: n,
            noise_sigma: sigma,
            seed,
            ..GeneratorConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        (d.features().clone(), d.labels().to_vec())
    }

    fn accuracy(m: &impl ProbabilisticClassifier, x: &Matrix, y: &[LabelId]) -> f64 {
        let pred = m.predict(x).unwrap();
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    fn assert_normalized(p: &Matrix) {
        for row in p.iter_rows() {
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_tree_without_bootstrap_matches_the_tree() {
        let (x, y) = synthetic(120, 0.25, 3);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            tree: TreeParams::default(),
        };
        let forest = fit_random_forest(&x, &y, &params, 9).unwrap();
        let mut rng = rng::derived(9, stream::FOREST_TREE, 0);
        let single = tree::fit_classification_tree(&x, &y, &params.tree, &mut rng).unwrap();
        let p = forest.predict_proba(&x).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            assert_eq!(p.row(i), single.predict_unchecked(row));
        }
    }

    #[test]
    fn forest_of_identical_trees_equals_one_tree() {
        let (x, y) = synthetic(90, 0.25, 4);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: true,
            ..ForestParams::default()
        };
        let one = fit_random_forest(&x, &y, &params, 1).unwrap();
        let mut many = one.clone();
        many.trees = vec![one.trees[0].clone(); 7];
        let a = one.predict_proba(&x).unwrap();
        let b = many.predict_proba(&x).unwrap();
        for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forest_is_deterministic_and_normalized() {
        let (x, y) = synthetic(150, 0.25, 5);
        let params = ForestParams {
            n_trees: 12,
            ..ForestParams::default()
        };
        let a = fit_random_forest(&x, &y, &params, 77).unwrap();
        let b = fit_random_forest(&x, &y, &params, 77).unwrap();
        assert_eq!(a, b);
        assert_normalized(&a.predict_proba(&x).unwrap());
    }

    #[test]
    fn forest_separates_noise_free_data() {
        let (x, y) = synthetic(1500, 0.0, 8);
        let (train, test): (Vec<usize>, Vec<usize>) = (0..x.rows()).partition(|i| i % 5 != 0);
        let ytr: Vec<_> = train.iter().map(|&i| y[i]).collect();
        let yte: Vec<_> = test.iter().map(|&i| y[i]).collect();
        let params = ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        };
        let m = fit_random_forest(&x.select_rows(&train), &ytr, &params, 1).unwrap();
        assert!(accuracy(&m, &x.select_rows(&test), &yte) >= 0.99);
    }

    #[test]
    fn forest_rejects_bad_shapes() {
        let (x, y) = synthetic(30, 0.25, 1);
        assert!(fit_random_forest(&x, &y[..29], &ForestParams::default(), 0).is_err());
        let m = fit_random_forest(&x, &y, &ForestParams { n_trees: 2, ..Default::default() }, 0).unwrap();
        assert!(m.predict_proba(&Matrix::zeros(2, 5)).is_err());
        assert!(ForestParams { n_trees: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_rounds_predicts_priors() {
        let (x, y) = synthetic(99, 0.25, 2);
        let params = BoostParams {
            n_rounds: 0,
            ..BoostParams::xgboost()
        };
        let m = fit_boosting(&x, &y, &params, 0).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for row in p.iter_rows() {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }

        let skewed: Vec<LabelId> = (0..10).map(|i| LabelId::from_index(usize::from(i >= 7))).collect();
        let xs = Matrix::zeros(10, 2);
        let m = fit_boosting(&xs, &skewed, &params, 0).unwrap();
        let p = m.predict_proba(&xs).unwrap();
        assert!((p.get(0, 0) - 0.7).abs() < 1e-9);
        assert!((p.get(0, 1) - 0.3).abs() < 1e-9);
        assert!(p.get(0, 2) < 1e-9);
    }

    #[test]
    fn one_round_does_not_increase_training_loss() {
        let (x, y) = synthetic(100, 0.25, 10);
        for base in [BoostParams::gradient_boosting(), BoostParams::xgboost()] {
            let zero = fit_boosting(&x, &y, &BoostParams { n_rounds: 0, ..base.clone() }, 4).unwrap();
            let one = fit_boosting(&x, &y, &BoostParams { n_rounds: 1, ..base.clone() }, 4).unwrap();
            assert!(one.train_loss[1] <= zero.train_loss[0]);
            assert_eq!(one.train_loss[0], zero.train_loss[0]);
        }
    }

    #[test]
    fn training_loss_is_monotone_without_subsampling() {
        let (x, y) = synthetic(300, 0.25, 11);
        for base in [BoostParams::gradient_boosting(), BoostParams::xgboost()] {
            let params = BoostParams {
                n_rounds: 40,
                learning_rate: 0.3,
                subsample_rows: 1.0,
                subsample_cols: 1.0,
                ..base
            };
            let m = fit_boosting(&x, &y, &params, 5).unwrap();
            assert_eq!(m.train_loss.len(), 41);
            for w in m.train_loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn unit_hessians_make_the_variants_coincide() {
        let (x, y) = synthetic(60, 0.25, 12);
        let first = BoostParams {
            n_rounds: 5,
            ..BoostParams::gradient_boosting()
        };
        let second = BoostParams {
            variant: BoostVariant::SecondOrder,
            ..first.clone()
        };
        let a = fit_boosting(&x, &y, &first, 3).unwrap();
        let b = fit_boosting_with(&x, &y, &second, 3, Hessians::Unit).unwrap();
        assert_eq!(a.stage_trees, b.stage_trees);
        assert_eq!(a.train_loss, b.train_loss);
        let c = fit_boosting(&x, &y, &second, 3).unwrap();
        assert_ne!(a.stage_trees, c.stage_trees);
    }

    #[test]
    fn boosting_is_deterministic_and_learns() {
        let (x, y) = synthetic(400, 0.25, 13);
        let params = BoostParams {
            n_rounds: 30,
            subsample_rows: 0.8,
            ..BoostParams::xgboost()
        };
        let a = fit_boosting(&x, &y, &params, 21).unwrap();
        let b = fit_boosting(&x, &y, &params, 21).unwrap();
        assert_eq!(a, b);
        let p = a.predict_proba(&x).unwrap();
        assert_normalized(&p);
        assert!(accuracy(&a, &x, &y) > 0.8);
        assert_eq!(a.predict(&x).unwrap()[0], argmax(p.row(0)));
    }

    #[test]
    fn boosting_rejects_bad_parameters() {
        let (x, y) = synthetic(30, 0.25, 1);
        for p in [
            BoostParams { learning_rate: 0.0, ..BoostParams::xgboost() },
            BoostParams { subsample_rows: 0.0, ..BoostParams::xgboost() },
            BoostParams { subsample_cols: 1.5, ..BoostParams::xgboost() },
        ] {
            assert!(matches!(fit_boosting(&x, &y, &p, 0), Err(Error::InvalidParameter { .. })));
        }
    }
}
