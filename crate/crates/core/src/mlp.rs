//! Single-hidden-layer ReLU network with a softmax head, trained with Adam.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{LabelId, N_CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{softmax_in_place, ProbabilisticClassifier};
use crate::rng::{self, stream};

pub const DEFAULT_N_HIDDEN: usize = 233;
pub const DEFAULT_LEARNING_RATE: f64 = 0.0021547501740925594;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub n_hidden: usize,
    pub initial_learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub l2_weight_decay: f64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            n_hidden: DEFAULT_N_HIDDEN,
            initial_learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 300,
            batch_size: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 42,
            l2_weight_decay: 0.0,
        }
    }
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hidden < 1 {
            return Err(Error::param("n_hidden", "must be at least 1"));
        }
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate.is_finite()) {
            return Err(Error::param("initial_learning_rate", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::param("adam_beta", "must be in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::param("adam_epsilon", "must be positive"));
        }
        if !(self.l2_weight_decay >= 0.0 && self.l2_weight_decay.is_finite()) {
            return Err(Error::param("l2_weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Weights are stored flat and row-major: `w1` is `n_features × n_hidden`,
/// `w2` is `n_hidden × 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_features: usize,
    pub n_hidden: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub config: MlpTrainConfig,
    /// Mean mini-batch loss of each training epoch.
    pub loss_trace: Vec<f64>,
}

/// Gradients with the same layout as the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Self {
        Self {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    fn clear(&mut self) {
        for t in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            t.fill(0.0);
        }
    }
}

/// He-uniform weights in ±√(6/fan_in), zero biases.
pub fn init_mlp(n_features: usize, cfg: &MlpTrainConfig, seed: u64) -> Result<MlpModel> {
    if n_features < 1 {
        return Err(Error::param("n_features", "must be at least 1"));
    }
    cfg.validate()?;
    let h = cfg.n_hidden;
    let mut rng = rng::derived(seed, stream::MLP_INIT, 0);
    let mut uniform = |fan_in: usize, len: usize| -> Vec<f64> {
        let bound = (6.0 / fan_in as f64).sqrt();
        (0..len).map(|_| rng.random_range(-bound..bound)).collect()
    };
    let w1 = uniform(n_features, n_features * h);
    let w2 = uniform(h, h * N_CLASSES);
    Ok(MlpModel {
        n_features,
        n_hidden: h,
        activation: Activation::Relu,
        w1,
        b1: vec![0.0; h],
        w2,
        b2: vec![0.0; N_CLASSES],
        config: cfg.clone(),
        loss_trace: Vec::new(),
    })
}

impl MlpModel {
    fn hidden_into(&self, x: &[f64], hidden: &mut [f64]) {
        hidden.copy_from_slice(&self.b1);
        for (f, &xf) in x.iter().enumerate() {
            let w = &self.w1[f * self.n_hidden..(f + 1) * self.n_hidden];
            for (a, &wv) in hidden.iter_mut().zip(w) {
                *a += xf * wv;
            }
        }
        for a in hidden.iter_mut() {
            *a = a.max(0.0);
        }
    }

    fn logits(&self, hidden: &[f64]) -> [f64; N_CLASSES] {
        let mut z = [self.b2[0], self.b2[1], self.b2[2]];
        for (j, &a) in hidden.iter().enumerate() {
            if a != 0.0 {
                let w = &self.w2[j * N_CLASSES..(j + 1) * N_CLASSES];
                for k in 0..N_CLASSES {
                    z[k] += a * w[k];
                }
            }
        }
        z
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(())
    }

    fn l2_penalty(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|w| w * w).sum::<f64>();
        0.5 * self.config.l2_weight_decay * (sq(&self.w1) + sq(&self.w2))
    }

    /// Adds the gradients of the mean cross-entropy over `rows` to `grads`
    /// (which must start zeroed) and returns the data loss.
    fn accumulate(&self, x: &Matrix, y: &[LabelId], rows: &[usize], grads: &mut Gradients) -> f64 {
        let h = self.n_hidden;
        let scale = 1.0 / rows.len() as f64;
        let mut hidden = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut loss = 0.0;
        for &i in rows {
            let xi = x.row(i);
            self.hidden_into(xi, &mut hidden);
            let mut p = self.logits(&hidden);
            softmax_in_place(&mut p);
            let yi = y[i].index();
            loss -= p[yi].max(f64::MIN_POSITIVE).ln();
            let mut dz = p;
            dz[yi] -= 1.0;
            for v in dz.iter_mut() {
                *v *= scale;
            }
            for k in 0..N_CLASSES {
                grads.b2[k] += dz[k];
            }
            for j in 0..h {
                let w = &self.w2[j * N_CLASSES..(j + 1) * N_CLASSES];
                let a = hidden[j];
                if a > 0.0 {
                    let g = &mut grads.w2[j * N_CLASSES..(j + 1) * N_CLASSES];
                    for k in 0..N_CLASSES {
                        g[k] += a * dz[k];
                    }
                    dh[j] = w[0] * dz[0] + w[1] * dz[1] + w[2] * dz[2];
                } else {
                    dh[j] = 0.0;
                }
            }
            for (g, &d) in grads.b1.iter_mut().zip(&dh) {
                *g += d;
            }
            for (f, &xf) in xi.iter().enumerate() {
                if xf != 0.0 {
                    let g = &mut grads.w1[f * h..(f + 1) * h];
                    for (gv, &d) in g.iter_mut().zip(&dh) {
                        *gv += xf * d;
                    }
                }
            }
        }
        loss * scale
    }

    fn add_l2_gradient(&self, grads: &mut Gradients) {
        let l2 = self.config.l2_weight_decay;
        if l2 > 0.0 {
            for (g, w) in grads.w1.iter_mut().zip(&self.w1) {
                *g += l2 * w;
            }
            for (g, w) in grads.w2.iter_mut().zip(&self.w2) {
                *g += l2 * w;
            }
        }
    }
}

/// Class probabilities for one row.
pub fn forward(m: &MlpModel, x: &[f64]) -> Result<[f64; N_CLASSES]> {
    m.check_arity(x)?;
    let mut out = [0.0; N_CLASSES];
    m.predict_row_into(x, &mut out);
    Ok(out)
}

/// Mean batch cross-entropy plus the L2 term, with exact gradients.
pub fn loss_and_gradients(m: &MlpModel, x: &Matrix, y: &[LabelId]) -> Result<(f64, Gradients)> {
    if x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if x.cols() != m.n_features {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} features, got {}",
            m.n_features,
            x.cols()
        )));
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut grads = Gradients::zeros_like(m);
    let loss = m.accumulate(x, y, &rows, &mut grads) + m.l2_penalty();
    m.add_l2_gradient(&mut grads);
    Ok((loss, grads))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], cfg: &MlpTrainConfig, t: i32) {
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = cfg.initial_learning_rate;
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            w[i] -= lr * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Mini-batch Adam at a constant learning rate, reshuffling every epoch.
pub fn train_mlp(x: &Matrix, y: &[LabelId], cfg: &MlpTrainConfig) -> Result<MlpModel> {
    if x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    let mut model = init_mlp(x.cols(), cfg, cfg.seed)?;
    let mut grads = Gradients::zeros_like(&model);
    let mut opt = [
        Adam::new(model.w1.len()),
        Adam::new(model.b1.len()),
        Adam::new(model.w2.len()),
        Adam::new(model.b2.len()),
    ];
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut t = 0i32;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derived(cfg.seed, stream::MLP_SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let loss = model.accumulate(x, y, batch, &mut grads) + model.l2_penalty();
            model.add_l2_gradient(&mut grads);
            epoch_loss += loss * batch.len() as f64;
            t = t.saturating_add(1);
            let [o1, o2, o3, o4] = &mut opt;
            o1.step(&mut model.w1, &grads.w1, cfg, t);
            o2.step(&mut model.b1, &grads.b1, cfg, t);
            o3.step(&mut model.w2, &grads.w2, cfg, t);
            o4.step(&mut model.b2, &grads.b2, cfg, t);
        }
        let mean = epoch_loss / x.rows() as f64;
        if !mean.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "training loss became {mean} in epoch {epoch}"
            )));
        }
        model.loss_trace.push(mean);
    }
    Ok(model)
}

impl ProbabilisticClassifier for MlpModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row_into(&self, x: &[f64], out: &mut [f64; N_CLASSES]) {
        let mut hidden = vec![0.0; self.n_hidden];
        self.hidden_into(x, &mut hidden);
        *out = self.logits(&hidden);
        softmax_in_place(out);
    }
}
