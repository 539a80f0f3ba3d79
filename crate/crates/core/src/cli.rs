//! The `frad` command line.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{self, AttackClass};
use crate::datagen::{self, GeneratorConfig};
use crate::error::{Error, Result};
use crate::features;
use crate::model::{self, ModelFile, ModelKind, ProbabilisticClassifier};
use crate::pipeline::{self, RunConfig};

const EXIT_CODES: &str = "\
Exit status:
  0  success
  1  usage error or invalid parameter
  2  missing or unreadable/unwritable file
  3  schema, shape or model-format error
  4  numerical failure or failed tuning objective";

#[derive(Debug, Parser)]
#[command(
    name = "frad",
    version,
    about = "Ternary classification of Ethereum front-running attacks",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "FRAD_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Render the feature correlation heatmap.
    Corr(CorrArgs),
    /// Split, standardize, tune and fit models; write model files.
    Train(RunArgs),
    /// Score saved models on the test partition and write reports.
    Evaluate(RunArgs),
    /// Train and evaluate in one go.
    RunAll(RunArgs),
    /// Class probabilities for feature rows from a saved model.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of rows to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Log-scale observation noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub generator: GenArgs,
    /// Destination CSV (default: <out-dir>/dataset.csv).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[command(flatten)]
    pub generator: GenArgs,
    /// Labeled CSV to analyse instead of a generated dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Destination SVG (default: <out-dir>/correlation.svg); the matrix is
    /// also written as JSON next to it.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub generator: GenArgs,
    /// Labeled CSV to use instead of a generated dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated subset of rf, gb, xgb, mlp.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Tuning trials per model.
    #[arg(long)]
    pub hpo_budget: Option<usize>,
    /// Initial-design trials per model.
    #[arg(long)]
    pub hpo_n_init: Option<usize>,
    /// Skip tuning and fit default hyperparameters.
    #[arg(long)]
    pub no_hpo: bool,
    /// Training epochs of the network.
    #[arg(long)]
    pub mlp_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of feature rows (a label column, if present, is ignored).
    #[arg(long)]
    pub input: PathBuf,
    /// Destination CSV (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl Cli {
    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("frad-out"))
    }

    fn base_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::from_toml_file(path),
            None => Ok(RunConfig::default()),
        }
    }

    fn generator(&self, g: &GenArgs) -> Result<GeneratorConfig> {
        let base = self.base_config()?;
        let cfg = GeneratorConfig {
            n_total: g.n.unwrap_or(base.generator.n_total),
            noise_sigma: g.noise_sigma.unwrap_or(base.generator.noise_sigma),
            seed: g.seed.unwrap_or(base.seed),
            ..base.generator
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_config(&self, a: &RunArgs) -> Result<RunConfig> {
        let mut cfg = self.base_config()?;
        if let Some(seed) = a.generator.seed {
            cfg.seed = seed;
        }
        if let Some(n) = a.generator.n {
            cfg.generator.n_total = n;
        }
        if let Some(s) = a.generator.noise_sigma {
            cfg.generator.noise_sigma = s;
        }
        if let Some(d) = &a.data {
            cfg.data = Some(d.clone());
        }
        if let Some(models) = &a.models {
            cfg.models = models.iter().map(|m| ModelKind::parse(m)).collect::<Result<_>>()?;
        }
        if let Some(b) = a.hpo_budget {
            cfg.hpo.budget = b;
        }
        if let Some(n) = a.hpo_n_init {
            cfg.hpo.n_init = n;
        }
        if a.no_hpo {
            cfg.hpo.enabled = false;
        }
        if let Some(e) = a.mlp_epochs {
            cfg.mlp.epochs = e;
        }
        if self.out_dir.is_some() || cfg.out_dir.is_none() {
            cfg.out_dir = Some(self.out_dir());
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.finalize()
    }
}

/// Parses `argv` and runs the selected subcommand; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("frad: error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::param("threads", "must be at least 1"));
    }
    pipeline::with_threads(cli.threads, || match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Corr(a) => corr(cli, a),
        Command::Train(a) => {
            let cfg = cli.run_config(a)?;
            let prep = pipeline::prepare(&cfg)?;
            for m in pipeline::train(&cfg, &prep)? {
                println!("{}", m.path.display());
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = cli.run_config(a)?;
            let prep = pipeline::prepare(&cfg)?;
            print_summary(&pipeline::evaluate(&cfg, &prep)?);
            Ok(())
        }
        Command::RunAll(a) => {
            let cfg = cli.run_config(a)?;
            print_summary(&pipeline::run_all(&cfg)?);
            Ok(())
        }
        Command::Predict(a) => predict(a),
    })
}

fn print_summary(r: &crate::eval::ComparisonReport) {
    println!("run {} (seed {})", r.run_id, r.seed);
    for m in &r.models {
        println!(
            "{:<4} accuracy {:.4}  f1 {:.4}  precision {:.4}  recall {:.4}",
            m.name, m.metrics.accuracy, m.metrics.macro_f1, m.metrics.macro_precision, m.metrics.macro_recall
        );
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let cfg = cli.generator(&a.generator)?;
    let path = a.output.clone().unwrap_or_else(|| cli.out_dir().join("dataset.csv"));
    ensure_parent(&path)?;
    let d = datagen::generate_dataset(&cfg)?;
    data::save_dataset(&d, &path)?;
    println!("{} ({} rows, seed {})", path.display(), d.n_rows(), cfg.seed);
    Ok(())
}

#[derive(Serialize)]
struct CorrelationDoc<'a> {
    seed: u64,
    source: String,
    feature_names: &'a [String],
    matrix: Vec<Vec<f64>>,
}

fn corr(cli: &Cli, a: &CorrArgs) -> Result<()> {
    let cfg = cli.generator(&a.generator)?;
    let (d, source) = match &a.data {
        Some(p) => (data::load_dataset(p)?, p.display().to_string()),
        None => (datagen::generate_dataset(&cfg)?, "synthetic".to_string()),
    };
    let c = features::pearson_correlation(d.features(), d.feature_names())?;
    let svg = a.output.clone().unwrap_or_else(|| cli.out_dir().join("correlation.svg"));
    ensure_parent(&svg)?;
    features::render_heatmap(&c, &svg)?;
    let doc = CorrelationDoc {
        seed: cfg.seed,
        source,
        feature_names: &c.feature_names,
        matrix: c.entries.to_rows(),
    };
    let mut json = serde_json::to_string_pretty(&doc).map_err(|e| Error::ModelFormat(e.to_string()))?;
    json.push('\n');
    let json_path = svg.with_extension("json");
    data::write_atomic(&json_path, json.as_bytes())?;
    println!("{}", svg.display());
    println!("{}", json_path.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let file = ModelFile::read(&a.model)?;
    let raw = data::load_feature_rows(&a.input, &file.feature_names)?;
    let probs = file.model.predict_proba(&file.standardizer.apply(&raw)?)?;
    let mut out = String::new();
    let header: Vec<String> = AttackClass::ALL.iter().map(|c| format!("p_{}", c.name())).collect();
    out.push_str(&header.join(","));
    out.push_str(",predicted_label\n");
    for row in probs.iter_rows() {
        let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push_str(&format!(",{}\n", model::argmax(row).value()));
    }
    match &a.output {
        Some(path) => {
            ensure_parent(path)?;
            data::write_atomic(path, out.as_bytes())
        }
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
