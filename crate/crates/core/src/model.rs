//! The shared prediction contract and the versioned model file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, LabelId, N_CLASSES};
use crate::ensembles::{BoostModel, ForestModel};
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::matrix::Matrix;
use crate::mlp::MlpModel;

pub const FORMAT_VERSION: u32 = 1;

/// Anything that maps a feature row to three class probabilities.
pub trait ProbabilisticClassifier {
    fn n_features(&self) -> usize;

    /// Writes the class probabilities of one row into `out`; the arity has
    /// already been checked.
    fn predict_row_into(&self, x: &[f64], out: &mut [f64; N_CLASSES]);

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), N_CLASSES);
        let mut buf = [0.0; N_CLASSES];
        for (i, row) in x.iter_rows().enumerate() {
            self.predict_row_into(row, &mut buf);
            out.row_mut(i).copy_from_slice(&buf);
        }
        Ok(out)
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<LabelId>> {
        Ok(self.predict_proba(x)?.iter_rows().map(argmax).collect())
    }
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> LabelId {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = k;
        }
    }
    LabelId::from_index(best)
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rf,
    Gb,
    Xgb,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Rf, ModelKind::Gb, ModelKind::Xgb, ModelKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Gb => "gb",
            ModelKind::Xgb => "xgb",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rf => "RF",
            ModelKind::Gb => "GB",
            ModelKind::Xgb => "XGB",
            ModelKind::Mlp => "MLP",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf" => Ok(ModelKind::Rf),
            "gb" => Ok(ModelKind::Gb),
            "xgb" => Ok(ModelKind::Xgb),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Usage(format!(
                "unknown model {other:?} (expected rf, gb, xgb or mlp)"
            ))),
        }
    }
}

/// One of the four trained classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Classifier {
    Forest(ForestModel),
    Boost(BoostModel),
    Mlp(MlpModel),
}

impl ProbabilisticClassifier for Classifier {
    fn n_features(&self) -> usize {
        match self {
            Classifier::Forest(m) => m.n_features(),
            Classifier::Boost(m) => m.n_features(),
            Classifier::Mlp(m) => m.n_features(),
        }
    }

    fn predict_row_into(&self, x: &[f64], out: &mut [f64; N_CLASSES]) {
        match self {
            Classifier::Forest(m) => m.predict_row_into(x, out),
            Classifier::Boost(m) => m.predict_row_into(x, out),
            Classifier::Mlp(m) => m.predict_row_into(x, out),
        }
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model_type: ModelKind,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    /// Scaling applied to raw rows before the model sees them.
    pub standardizer: Standardizer,
    #[serde(flatten)]
    pub model: Classifier,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        data::write_atomic(path.as_ref(), s.as_bytes())
    }

    /// Loads a model file and checks its version and feature schema.
    pub fn load(path: impl AsRef<Path>, expected_features: &[String]) -> Result<Self> {
        let file = Self::read(path)?;
        if file.feature_names != expected_features {
            return Err(Error::HeaderMismatch {
                expected: expected_features.join(","),
                found: file.feature_names.join(","),
            });
        }
        Ok(file)
    }

    /// Loads a model file and checks its version and internal consistency.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "{}: unsupported format_version {}",
                path.display(),
                file.format_version
            )));
        }
        let consistent = match (&file.model_type, &file.model) {
            (ModelKind::Rf, Classifier::Forest(_))
            | (ModelKind::Gb | ModelKind::Xgb, Classifier::Boost(_))
            | (ModelKind::Mlp, Classifier::Mlp(_)) => true,
            _ => false,
        };
        if !consistent || file.model.n_features() != file.feature_names.len() {
            return Err(Error::ModelFormat(format!(
                "{}: model body does not match model_type/feature_names",
                path.display()
            )));
        }
        Ok(file)
    }

    /// Probabilities for raw (unstandardized) rows.
    pub fn predict_proba_raw(&self, raw: &Matrix) -> Result<Matrix> {
        let x = self.standardizer.apply(raw)?;
        self.model.predict_proba(&x)
    }
}
