//! Gaussian-process Bayesian optimization over box-bounded search spaces.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::rng::{self, stream};

pub const DEFAULT_BUDGET: usize = 25;
pub const DEFAULT_N_INIT: usize = 8;
pub const N_CANDIDATES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Real,
    LogReal,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub low: f64,
    pub high: f64,
}

impl Dimension {
    pub fn new(name: &str, kind: DimKind, low: f64, high: f64) -> Result<Self> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::param(name, format!("empty range [{low}, {high}]")));
        }
        if kind == DimKind::LogReal && low <= 0.0 {
            return Err(Error::param(name, "log-scaled range must be positive"));
        }
        Ok(Self {
            name: name.to_string(),
            kind,
            low,
            high,
        })
    }

    /// Maps a unit-interval coordinate to a parameter value.
    pub fn decode(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimKind::Real => ParamValue::Real(self.low + u * (self.high - self.low)),
            DimKind::LogReal => {
                let (a, b) = (self.low.ln(), self.high.ln());
                ParamValue::Real((a + u * (b - a)).exp().clamp(self.low, self.high))
            }
            DimKind::Integer => {
                let v = (self.low + u * (self.high - self.low)).round();
                ParamValue::Int(v.clamp(self.low, self.high) as i64)
            }
        }
    }
}

/// A decoded hyperparameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
}

impl ParamValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ParamValue::Int(v) => v as f64,
            ParamValue::Real(v) => v,
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::param("search_space", "needs at least one dimension"));
        }
        Ok(Self { dimensions })
    }

    pub fn dim(&self) -> usize {
        self.dimensions.len()
    }

    pub fn decode(&self, unit: &[f64]) -> Params {
        self.dimensions
            .iter()
            .zip(unit)
            .map(|(d, &u)| (d.name.clone(), d.decode(u)))
            .collect()
    }

    /// True when every named value lies inside its dimension's bounds.
    pub fn contains(&self, p: &Params) -> bool {
        self.dimensions.iter().all(|d| {
            p.get(&d.name)
                .is_some_and(|v| (d.low..=d.high).contains(&v.as_f64()))
        })
    }

    pub fn for_model(kind: ModelKind) -> Self {
        use DimKind::*;
        let d = |name, kind, lo, hi| Dimension::new(name, kind, lo, hi).expect("preset bounds");
        let dims = match kind {
            ModelKind::Rf => vec![
                d("n_trees", Integer, 50.0, 500.0),
                d("max_depth", Integer, 2.0, 20.0),
                d("n_feature_candidates", Integer, 1.0, 13.0),
            ],
            ModelKind::Gb => vec![
                d("n_rounds", Integer, 50.0, 500.0),
                d("learning_rate", LogReal, 0.01, 0.3),
                d("max_depth", Integer, 2.0, 8.0),
                d("subsample", Real, 0.5, 1.0),
            ],
            ModelKind::Xgb => vec![
                d("n_rounds", Integer, 50.0, 500.0),
                d("learning_rate", LogReal, 0.01, 0.3),
                d("max_depth", Integer, 2.0, 8.0),
                d("lambda", Real, 0.0, 10.0),
                d("subsample", Real, 0.5, 1.0),
            ],
            ModelKind::Mlp => vec![
                d("n_hidden", Integer, 16.0, 512.0),
                d("learning_rate", LogReal, 1e-4, 1e-2),
                d("batch_size", Integer, 16.0, 256.0),
            ],
        };
        Self { dimensions: dims }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub length_scale: f64,
    pub noise_jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.3,
            noise_jitter: 1e-6,
        }
    }
}

/// Matérn-5/2 correlation at scaled distance `r`.
fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Exact GP regression on standardized targets. The signal variance is the
/// sample variance of the targets; jitter is added to the correlation matrix.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    length_scales: Vec<f64>,
    mean: f64,
    scale: f64,
    /// Jitter actually used after any escalation.
    pub noise_jitter: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

const MAX_JITTER_ESCALATIONS: usize = 3;

fn check_unit(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "point has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::param("point", "coordinates must lie in [0, 1]"));
    }
    Ok(())
}

pub fn gp_fit(points: &[Vec<f64>], values: &[f64], cfg: &KernelConfig) -> Result<GpSurrogate> {
    if points.is_empty() {
        return Err(Error::EmptyInput("GP needs at least one observation".into()));
    }
    if points.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    let d = points[0].len();
    for p in points {
        check_unit(p, d)?;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite GP target".into()));
    }
    if !(cfg.length_scale > 0.0 && cfg.noise_jitter > 0.0) {
        return Err(Error::param("kernel", "length scale and jitter must be positive"));
    }

    let n = points.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z = DVector::from_iterator(n, values.iter().map(|v| (v - mean) / scale));
    let length_scales = vec![cfg.length_scale; d];
    let corr = DMatrix::from_fn(n, n, |i, j| correlation(&points[i], &points[j], &length_scales));

    let mut jitter = cfg.noise_jitter;
    for attempt in 0..=MAX_JITTER_ESCALATIONS {
        let k = &corr + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = k.cholesky() {
            let alpha = ch.solve(&z);
            let l = ch.l();
            let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
            let lml = -0.5 * z.dot(&alpha)
                - log_det
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
                - n as f64 * scale.ln();
            if !lml.is_finite() {
                return Err(Error::NumericalFailure("GP log-likelihood is not finite".into()));
            }
            return Ok(GpSurrogate {
                points: points.to_vec(),
                values: values.to_vec(),
                length_scales,
                mean,
                scale,
                noise_jitter: jitter,
                chol: l,
                alpha,
                log_marginal_likelihood: lml,
            });
        }
        if attempt < MAX_JITTER_ESCALATIONS {
            jitter *= 10.0;
        }
    }
    Err(Error::NumericalFailure(format!(
        "kernel matrix not positive definite with jitter {jitter:e}"
    )))
}

fn correlation(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    matern52(r2.sqrt())
}

impl GpSurrogate {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Prior mean of the surrogate (the mean of the observed values).
    pub fn prior_mean(&self) -> f64 {
        self.mean
    }

    /// Signal variance of the kernel, in the units of the observed values.
    pub fn signal_variance(&self) -> f64 {
        self.scale * self.scale
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }
}

/// Predictive mean and standard deviation at `x`.
pub fn gp_posterior(gp: &GpSurrogate, x: &[f64]) -> Result<(f64, f64)> {
    check_unit(x, gp.length_scales.len())?;
    let n = gp.n_points();
    let k = DVector::from_iterator(
        n,
        gp.points.iter().map(|p| correlation(p, x, &gp.length_scales)),
    );
    let mean = gp.mean + gp.scale * k.dot(&gp.alpha);
    let v = gp
        .chol
        .solve_lower_triangular(&k)
        .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    let var = (1.0 - v.norm_squared()).max(0.0) * gp.scale * gp.scale;
    Ok((mean, var.sqrt()))
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let diff = mean - best;
    if !(std > 0.0) {
        return diff.max(0.0);
    }
    let z = diff / std;
    let normal = Normal::standard();
    (diff * normal.cdf(z) + std * normal.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Params,
    /// Position in the unit cube the parameters were decoded from.
    pub unit: Vec<f64>,
    pub objective: f64,
    /// Wall-clock time; left out of serialized logs so they stay reproducible.
    #[serde(skip)]
    pub duration: Duration,
}

impl PartialEq for Trial {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
            && self.params == other.params
            && self.unit == other.unit
            && self.objective == other.objective
    }
}

/// Seeded Latin hypercube: one point per stratum in every dimension.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::derived(seed, stream::HPO_DESIGN, 0);
    let mut points = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

fn run_trial<F>(objective: &F, space: &SearchSpace, index: usize, unit: Vec<f64>) -> Result<Trial>
where
    F: Fn(usize, &Params) -> Result<f64> + Sync,
{
    let params = space.decode(&unit);
    let start = Instant::now();
    let value = objective(index, &params).map_err(|e| match e {
        e @ Error::ObjectiveFailed { .. } => e,
        other => Error::ObjectiveFailed {
            trial: index,
            message: other.to_string(),
        },
    })?;
    if !value.is_finite() {
        return Err(Error::ObjectiveFailed {
            trial: index,
            message: format!("objective returned {value}"),
        });
    }
    let duration = start.elapsed();
    log::info!("trial {index}: objective {value:.6} in {:.2?}", duration);
    Ok(Trial {
        index,
        params,
        unit,
        objective: value,
        duration,
    })
}

/// Index of the best trial; the earliest wins ties.
fn best_index(trials: &[Trial]) -> usize {
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.objective > trials[best].objective {
            best = i;
        }
    }
    best
}

/// Maximizes `objective` over `space`: a Latin-hypercube initial design
/// evaluated concurrently, then one EI-chosen point per round.
pub fn bayes_optimize<F>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    seed: u64,
) -> Result<(Trial, Vec<Trial>)>
where
    F: Fn(usize, &Params) -> Result<f64> + Sync,
{
    if n_init < 1 || budget < n_init {
        return Err(Error::param(
            "budget",
            format!("need budget >= n_init >= 1, got budget {budget}, n_init {n_init}"),
        ));
    }
    let dim = space.dim();
    let design = latin_hypercube(n_init, dim, seed);
    let mut trials = design
        .into_par_iter()
        .enumerate()
        .map(|(i, u)| run_trial(&objective, space, i, u))
        .collect::<Result<Vec<_>>>()?;

    let kernel = KernelConfig::default();
    for index in n_init..budget {
        let points: Vec<Vec<f64>> = trials.iter().map(|t| t.unit.clone()).collect();
        let values: Vec<f64> = trials.iter().map(|t| t.objective).collect();
        let gp = gp_fit(&points, &values, &kernel)?;
        let best = trials[best_index(&trials)].objective;

        let mut rng = rng::derived(seed, stream::HPO_CANDIDATES, index as u64);
        let mut chosen: Option<(f64, Vec<f64>)> = None;
        for _ in 0..N_CANDIDATES {
            let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let (m, s) = gp_posterior(&gp, &c)?;
            let ei = expected_improvement(m, s, best);
            if chosen.as_ref().is_none_or(|(b, _)| ei > *b) {
                chosen = Some((ei, c));
            }
        }
        let (_, unit) = chosen.expect("candidate set is non-empty");
        trials.push(run_trial(&objective, space, index, unit)?);
    }

    let best = trials[best_index(&trials)].clone();
    Ok((best, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoding_respects_kinds_and_bounds() {
        let d = Dimension::new("n", DimKind::Integer, 2.0, 8.0).unwrap();
        assert_eq!(d.decode(0.0), ParamValue::Int(2));
        assert_eq!(d.decode(1.0), ParamValue::Int(8));
        assert_eq!(d.decode(0.5), ParamValue::Int(5));
        let l = Dimension::new("lr", DimKind::LogReal, 1e-4, 1e-2).unwrap();
        assert!((l.decode(0.5).as_f64() - 1e-3).abs() < 1e-15);
        assert!(Dimension::new("x", DimKind::Real, 1.0, 1.0).is_err());
        assert!(Dimension::new("x", DimKind::LogReal, 0.0, 1.0).is_err());
    }

    #[test]
    fn presets_cover_every_model() {
        assert_eq!(SearchSpace::for_model(ModelKind::Rf).dim(), 3);
        assert_eq!(SearchSpace::for_model(ModelKind::Gb).dim(), 4);
        assert_eq!(SearchSpace::for_model(ModelKind::Xgb).dim(), 5);
        assert_eq!(SearchSpace::for_model(ModelKind::Mlp).dim(), 3);
        let p = SearchSpace::for_model(ModelKind::Xgb).decode(&[0.0, 1.0, 0.5, 0.0, 1.0]);
        assert_eq!(p["n_rounds"], ParamValue::Int(50));
        assert!((p["learning_rate"].as_f64() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn latin_hypercube_fills_every_stratum() {
        let pts = latin_hypercube(8, 3, 5);
        for j in 0..3 {
            let mut strata: Vec<usize> = pts.iter().map(|p| (p[j] * 8.0) as usize).collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..8).collect::<Vec<_>>());
        }
        assert_eq!(pts, latin_hypercube(8, 3, 5));
    }

    #[test]
    fn gp_interpolates_and_reverts_to_prior() {
        let pts = vec![vec![0.1, 0.2], vec![0.7, 0.9], vec![0.4, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]];
        let ys = vec![0.3, -1.0, 2.0, 0.5, 1.1];
        let gp = gp_fit(&pts, &ys, &KernelConfig::default()).unwrap();
        for (p, y) in pts.iter().zip(&ys) {
            let (m, s) = gp_posterior(&gp, p).unwrap();
            assert!((m - y).abs() < 1e-4);
            assert!(s >= 0.0);
        }
        assert!(gp.log_marginal_likelihood().is_finite());

        let one = gp_fit(&[vec![0.0]], &[5.0], &KernelConfig { length_scale: 0.1, ..Default::default() }).unwrap();
        let (m, _) = gp_posterior(&one, &[1.0]).unwrap();
        assert!((m - one.prior_mean()).abs() < 1e-3);
    }

    #[test]
    fn duplicate_points_are_absorbed_by_jitter() {
        let pts = vec![vec![0.5], vec![0.5], vec![0.5]];
        let gp = gp_fit(&pts, &[1.0, 1.0, 1.0], &KernelConfig::default()).unwrap();
        assert!(gp_posterior(&gp, &[0.5]).unwrap().1 >= 0.0);
    }

    #[test]
    fn posterior_rejects_points_outside_the_cube() {
        let gp = gp_fit(&[vec![0.5]], &[1.0], &KernelConfig::default()).unwrap();
        assert!(gp_posterior(&gp, &[1.5]).is_err());
        assert!(gp_posterior(&gp, &[0.5, 0.5]).is_err());
        assert!(gp_fit(&[vec![2.0]], &[1.0], &KernelConfig::default()).is_err());
    }

    #[test]
    fn expected_improvement_closed_form() {
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.3989422804014327).abs() < 1e-12);
    }

    fn quadratic(_: usize, p: &Params) -> Result<f64> {
        Ok(-(p["x"].as_f64() - 0.3).powi(2))
    }

    #[test]
    fn budget_equal_to_design_returns_best_of_design() {
        let space = SearchSpace::new(vec![Dimension::new("x", DimKind::Real, 0.0, 1.0).unwrap()]).unwrap();
        let (best, trials) = bayes_optimize(quadratic, &space, 6, 6, 3).unwrap();
        assert_eq!(trials.len(), 6);
        assert!(trials.iter().all(|t| t.objective <= best.objective));
        assert_eq!(trials.iter().map(|t| t.index).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn optimizer_is_deterministic_and_finds_the_peak() {
        let space = SearchSpace::new(vec![Dimension::new("x", DimKind::Real, 0.0, 1.0).unwrap()]).unwrap();
        let (best, trials) = bayes_optimize(quadratic, &space, 30, 8, 1).unwrap();
        assert!((best.params["x"].as_f64() - 0.3).abs() < 0.05);
        let (_, again) = bayes_optimize(quadratic, &space, 30, 8, 1).unwrap();
        assert_eq!(trials, again);
    }

    #[test]
    fn objective_failures_name_the_trial() {
        let space = SearchSpace::for_model(ModelKind::Mlp);
        let err = bayes_optimize(
            |i, _| if i == 9 { Err(Error::NumericalFailure("boom".into())) } else { Ok(0.5) },
            &space,
            12,
            8,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ObjectiveFailed { trial: 9, .. }));
        assert!(bayes_optimize(quadratic, &space, 3, 4, 0).is_err());
    }
}
