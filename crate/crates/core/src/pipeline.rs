//! End-to-end stages shared by the CLI subcommands: prepare data, tune and
//! train models, evaluate them on the held-out partition.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, LabelId, N_CLASSES};
use crate::datagen::{self, GeneratorConfig};
use crate::ensembles::{self, BoostParams, ForestParams};
use crate::error::{Error, Result};
use crate::eval::{self, ComparisonReport, ModelEntry};
use crate::features::{self, Standardizer};
use crate::hpo::{self, Params, SearchSpace, Trial};
use crate::matrix::Matrix;
use crate::mlp::{self, MlpTrainConfig};
use crate::model::{Classifier, ModelFile, ModelKind, ProbabilisticClassifier, FORMAT_VERSION};
use crate::rng::{self, stream};
use crate::tree::TreeParams;

/// Share of the training partition the tuner fits on; the rest scores trials.
pub const HPO_TRAIN_FRACTION: f64 = 0.75;
pub const RUN_CONFIG_FILE: &str = "run-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub enabled: bool,
    pub budget: usize,
    pub n_init: usize,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            budget: hpo::DEFAULT_BUDGET,
            n_init: hpo::DEFAULT_N_INIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_hidden: usize,
    pub learning_rate: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let d = MlpTrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            n_hidden: d.n_hidden,
            learning_rate: d.initial_learning_rate,
        }
    }
}

/// Everything that determines a run's outputs, plus where to put them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Labeled CSV to use instead of generating a synthetic dataset.
    pub data: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub models: Vec<ModelKind>,
    pub train_fraction: f64,
    pub hpo: HpoConfig,
    pub mlp: MlpConfig,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: None,
            generator: GeneratorConfig::default(),
            models: ModelKind::ALL.to_vec(),
            train_fraction: eval::TRAIN_FRACTION,
            hpo: HpoConfig::default(),
            mlp: MlpConfig::default(),
            out_dir: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    /// Ties the generator seed to the run seed and checks ranges.
    pub fn finalize(mut self) -> Result<Self> {
        self.generator.seed = self.seed;
        self.models.sort();
        self.models.dedup();
        if self.models.is_empty() {
            return Err(Error::Usage("no models selected".into()));
        }
        if self.hpo.enabled && (self.hpo.n_init < 1 || self.hpo.budget < self.hpo.n_init) {
            return Err(Error::param(
                "hpo",
                format!(
                    "need budget >= n_init >= 1, got budget {}, n_init {}",
                    self.hpo.budget, self.hpo.n_init
                ),
            ));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param("train_fraction", "must be in (0, 1)"));
        }
        self.generator.validate()?;
        self.mlp_defaults().validate()?;
        Ok(self)
    }

    /// Hash of the settings that affect results (not output location or
    /// thread count).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.threads = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn run_id(&self) -> String {
        format!("run-{}-{}", self.seed, &self.config_hash()[..12])
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("frad-out"))
    }

    fn mlp_defaults(&self) -> MlpTrainConfig {
        MlpTrainConfig {
            n_hidden: self.mlp.n_hidden,
            initial_learning_rate: self.mlp.learning_rate,
            epochs: self.mlp.epochs,
            batch_size: self.mlp.batch_size,
            ..MlpTrainConfig::default()
        }
    }

    /// Persisted form: re-running with it reproduces the run.
    pub fn to_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = None;
        c.threads = None;
        let body = toml::to_string(&c).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(format!("# config_hash = \"{}\"\n{body}", self.config_hash()))
    }
}

pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => data::load_dataset(path),
        None => datagen::generate_dataset(&GeneratorConfig {
            seed: cfg.seed,
            ..cfg.generator.clone()
        }),
    }
}

/// Standardized train/test partitions.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub provenance: String,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub x_train: Matrix,
    pub y_train: Vec<LabelId>,
    pub x_test: Matrix,
    pub y_test: Vec<LabelId>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let d = load_or_generate(cfg)?;
    let (train, test) = eval::stratified_split(&d, cfg.train_fraction, cfg.seed)?;
    let standardizer = features::fit_standardizer(train.features(), train.feature_names())?;
    Ok(Prepared {
        provenance: d.provenance().as_str().to_string(),
        feature_names: d.feature_names().to_vec(),
        x_train: standardizer.apply(train.features())?,
        x_test: standardizer.apply(test.features())?,
        standardizer,
        y_train: train.labels().to_vec(),
        y_test: test.labels().to_vec(),
    })
}

/// Hyperparameters of one model, ready to fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelParams {
    Forest(ForestParams),
    Boost(BoostParams),
    Mlp(MlpTrainConfig),
}

fn int(p: &Params, name: &str) -> Result<usize> {
    let v = p
        .get(name)
        .ok_or_else(|| Error::param(name, "missing from trial parameters"))?
        .as_f64();
    Ok(v.round().max(0.0) as usize)
}

fn real(p: &Params, name: &str) -> Result<f64> {
    Ok(p.get(name)
        .ok_or_else(|| Error::param(name, "missing from trial parameters"))?
        .as_f64())
}

impl ModelParams {
    pub fn defaults(kind: ModelKind, cfg: &RunConfig) -> Self {
        match kind {
            ModelKind::Rf => ModelParams::Forest(ForestParams::default()),
            ModelKind::Gb => ModelParams::Boost(BoostParams::gradient_boosting()),
            ModelKind::Xgb => ModelParams::Boost(BoostParams::xgboost()),
            ModelKind::Mlp => ModelParams::Mlp(cfg.mlp_defaults()),
        }
    }

    /// Overlays tuned values on the defaults for `kind`.
    pub fn from_trial(kind: ModelKind, p: &Params, cfg: &RunConfig) -> Result<Self> {
        Ok(match Self::defaults(kind, cfg) {
            ModelParams::Forest(f) => ModelParams::Forest(ForestParams {
                n_trees: int(p, "n_trees")?,
                tree: TreeParams {
                    max_depth: int(p, "max_depth")?,
                    n_feature_candidates: int(p, "n_feature_candidates")?,
                    ..f.tree
                },
                ..f
            }),
            ModelParams::Boost(b) => {
                let lambda = if kind == ModelKind::Xgb {
                    real(p, "lambda")?
                } else {
                    b.tree.lambda
                };
                ModelParams::Boost(BoostParams {
                    n_rounds: int(p, "n_rounds")?,
                    learning_rate: real(p, "learning_rate")?,
                    subsample_rows: real(p, "subsample")?,
                    tree: TreeParams {
                        max_depth: int(p, "max_depth")?,
                        lambda,
                        ..b.tree
                    },
                    ..b
                })
            }
            ModelParams::Mlp(m) => ModelParams::Mlp(MlpTrainConfig {
                n_hidden: int(p, "n_hidden")?,
                initial_learning_rate: real(p, "learning_rate")?,
                batch_size: int(p, "batch_size")?,
                ..m
            }),
        })
    }

    pub fn fit(&self, x: &Matrix, y: &[LabelId], seed: u64) -> Result<Classifier> {
        Ok(match self {
            ModelParams::Forest(p) => Classifier::Forest(ensembles::fit_random_forest(x, y, p, seed)?),
            ModelParams::Boost(p) => Classifier::Boost(ensembles::fit_boosting(x, y, p, seed)?),
            ModelParams::Mlp(p) => Classifier::Mlp(mlp::train_mlp(x, y, &MlpTrainConfig { seed, ..p.clone() })?),
        })
    }
}

fn accuracy(pred: &[LabelId], truth: &[LabelId]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn kind_index(kind: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64
}

pub fn model_seed(cfg: &RunConfig, kind: ModelKind) -> u64 {
    rng::derive_seed(cfg.seed, stream::MODEL, kind_index(kind))
}

pub fn model_file_name(kind: ModelKind) -> String {
    format!("model-{}.json", kind.as_str())
}

pub fn trials_file_name(kind: ModelKind) -> String {
    format!("trials-{}.jsonl", kind.as_str())
}

/// Tunes `kind` on a split of the training partition; returns the best
/// trial and all trials in index order.
pub fn tune(kind: ModelKind, prep: &Prepared, cfg: &RunConfig) -> Result<(Trial, Vec<Trial>)> {
    let split_seed = rng::derive_seed(cfg.seed, stream::HPO_SPLIT, 0);
    let (fit_rows, val_rows) = eval::stratified_indices(&prep.y_train, HPO_TRAIN_FRACTION, split_seed)?;
    let x_fit = prep.x_train.select_rows(&fit_rows);
    let y_fit: Vec<LabelId> = fit_rows.iter().map(|&i| prep.y_train[i]).collect();
    let x_val = prep.x_train.select_rows(&val_rows);
    let y_val: Vec<LabelId> = val_rows.iter().map(|&i| prep.y_train[i]).collect();
    let seed = model_seed(cfg, kind);

    let objective = |_: usize, p: &Params| -> Result<f64> {
        let model = ModelParams::from_trial(kind, p, cfg)?.fit(&x_fit, &y_fit, seed)?;
        Ok(accuracy(&model.predict(&x_val)?, &y_val))
    };
    let space = SearchSpace::for_model(kind);
    let hpo_seed = rng::derive_seed(cfg.seed, stream::HPO_DESIGN, kind_index(kind));
    hpo::bayes_optimize(objective, &space, cfg.hpo.budget, cfg.hpo.n_init, hpo_seed)
}

#[derive(Serialize)]
struct TrialLine<'a> {
    model: &'a str,
    seed: u64,
    config_hash: &'a str,
    #[serde(flatten)]
    trial: &'a Trial,
}

pub fn write_trial_log(path: &Path, kind: ModelKind, trials: &[Trial], cfg: &RunConfig) -> Result<()> {
    let hash = cfg.config_hash();
    let mut out = String::new();
    for t in trials {
        let line = TrialLine {
            model: kind.as_str(),
            seed: cfg.seed,
            config_hash: &hash,
            trial: t,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::ModelFormat(e.to_string()))?);
        out.push('\n');
    }
    data::write_atomic(path, out.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub file: ModelFile,
    pub path: PathBuf,
    pub best_trial: Option<Trial>,
}

/// Tunes (optionally) and fits every configured model on the training
/// partition, writing model files, trial logs and the run config.
pub fn train(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<TrainedModel>> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    data::write_atomic(&out.join(RUN_CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let hash = cfg.config_hash();

    let mut trained = Vec::new();
    for &kind in &cfg.models {
        let (params, best_trial) = if cfg.hpo.enabled {
            log::info!("{}: tuning with budget {}", kind.as_str(), cfg.hpo.budget);
            let (best, trials) = tune(kind, prep, cfg)?;
            write_trial_log(&out.join(trials_file_name(kind)), kind, &trials, cfg)?;
            log::info!("{}: best validation accuracy {:.4} (trial {})", kind.as_str(), best.objective, best.index);
            (ModelParams::from_trial(kind, &best.params, cfg)?, Some(best))
        } else {
            (ModelParams::defaults(kind, cfg), None)
        };
        log::info!("{}: fitting on {} rows", kind.as_str(), prep.x_train.rows());
        let model = params.fit(&prep.x_train, &prep.y_train, model_seed(cfg, kind))?;
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            model_type: kind,
            feature_names: prep.feature_names.clone(),
            seed: cfg.seed,
            config_hash: hash.clone(),
            standardizer: prep.standardizer.clone(),
            model,
        };
        let path = out.join(model_file_name(kind));
        file.save(&path)?;
        trained.push(TrainedModel {
            kind,
            file,
            path,
            best_trial,
        });
    }
    Ok(trained)
}

fn model_params_json(c: &Classifier) -> serde_json::Value {
    let v = match c {
        Classifier::Forest(m) => serde_json::to_value(&m.params),
        Classifier::Boost(m) => serde_json::to_value(&m.params),
        Classifier::Mlp(m) => serde_json::to_value(&m.config),
    };
    v.unwrap_or(serde_json::Value::Null)
}

/// Loads the configured models from the output directory, scores them on the
/// test partition and writes the comparison report.
pub fn evaluate(cfg: &RunConfig, prep: &Prepared) -> Result<ComparisonReport> {
    let out = cfg.out_dir();
    let mut entries = Vec::new();
    for &kind in &cfg.models {
        let file = ModelFile::load(out.join(model_file_name(kind)), &prep.feature_names)?;
        if file.model_type != kind {
            return Err(Error::ModelFormat(format!(
                "{} holds a {} model",
                model_file_name(kind),
                file.model_type.as_str()
            )));
        }
        let pred = file.model.predict(&prep.x_test)?;
        let confusion = eval::confusion_matrix(&prep.y_test, &pred)?;
        let metrics = eval::compute_metrics(&confusion, kind.display_name())?;
        log::info!(
            "{}: test accuracy {:.4}, macro F1 {:.4}",
            kind.display_name(),
            metrics.accuracy,
            metrics.macro_f1
        );
        let trials = trials_file_name(kind);
        entries.push(ModelEntry {
            name: kind.display_name().to_string(),
            params: model_params_json(&file.model),
            metrics,
            confusion,
            trials_file: out.join(&trials).exists().then_some(trials),
        });
    }
    let mut test_class_counts = [0usize; N_CLASSES];
    for l in &prep.y_test {
        test_class_counts[l.index()] += 1;
    }
    let report = ComparisonReport {
        run_id: cfg.run_id(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        dataset_provenance: prep.provenance.clone(),
        n_train: prep.x_train.rows(),
        n_test: prep.x_test.rows(),
        test_class_counts,
        models: entries,
        reference_baselines: eval::reference_baselines(),
        notes: eval::report_notes(),
    };
    eval::comparison_report(&report, &out)?;
    Ok(report)
}

pub fn run_all(cfg: &RunConfig) -> Result<ComparisonReport> {
    let prep = prepare(cfg)?;
    train(cfg, &prep)?;
    evaluate(cfg, &prep)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?
            .install(f),
    }
}
