//! Splitting, confusion matrices, macro-averaged metrics and the comparison
//! report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, AttackClass, Dataset, LabelId, N_CLASSES};
use crate::error::{Error, Result};
use crate::plot::{self, Grid};
use crate::rng::{self, stream};

pub const TRAIN_FRACTION: f64 = 0.8;

/// Per-class seeded shuffle, then `floor(fraction · n_c)` rows of each class
/// go to the training partition. Both partitions keep ascending row order.
pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_indices(d.labels(), train_fraction, seed)?;
    Ok((d.select(&train), d.select(&test)))
}

pub fn stratified_indices(
    labels: &[LabelId],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param("train_fraction", "must be in (0, 1)"));
    }
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, rows) in by_class.iter_mut().enumerate() {
        if rows.len() < 2 {
            return Err(Error::EmptyInput(format!(
                "class {k} has {} rows; stratified splitting needs at least 2",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng::derived(seed, stream::SPLIT, k as u64));
        let n_train = (train_fraction * rows.len() as f64).floor() as usize;
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

pub fn class_names() -> Vec<String> {
    AttackClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

pub fn confusion_matrix(y_true: &[LabelId], y_pred: &[LabelId]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = [[0u64; N_CLASSES]; N_CLASSES];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_name: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_precision: [f64; N_CLASSES],
    pub per_class_recall: [f64; N_CLASSES],
    pub per_class_f1: [f64; N_CLASSES],
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Row-normalized diagonal; an empty row gives 0.
pub fn per_class_recall(cm: &ConfusionMatrix) -> [f64; N_CLASSES] {
    std::array::from_fn(|i| ratio(cm.counts[i][i], cm.row_sum(i)))
}

pub fn per_class_precision(cm: &ConfusionMatrix) -> [f64; N_CLASSES] {
    std::array::from_fn(|j| ratio(cm.counts[j][j], cm.col_sum(j)))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn mean(v: &[f64; N_CLASSES]) -> f64 {
    v.iter().sum::<f64>() / N_CLASSES as f64
}

/// Accuracy plus one-vs-rest precision, recall and F1, macro-averaged over
/// all three classes. Empty denominators count as 0.
pub fn compute_metrics(cm: &ConfusionMatrix, model_name: &str) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix has no entries".into()));
    }
    let precision = per_class_precision(cm);
    let recall = per_class_recall(cm);
    let f1: [f64; N_CLASSES] = std::array::from_fn(|k| harmonic(precision[k], recall[k]));
    Ok(MetricsReport {
        model_name: model_name.to_string(),
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion: cm.clone(),
    })
}

/// Published reference figures for one model. Per-class recall values are
/// percentages; `None` marks figures that were not published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub model: String,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_class_recall_pct: [Option<f64>; N_CLASSES],
}

pub fn reference_baselines() -> Vec<Baseline> {
    let b = |model: &str, overall: Option<[f64; 4]>, per_class: [Option<f64>; 3]| Baseline {
        model: model.to_string(),
        accuracy: overall.map(|o| o[0]),
        f1: overall.map(|o| o[1]),
        precision: overall.map(|o| o[2]),
        recall: overall.map(|o| o[3]),
        per_class_recall_pct: per_class,
    };
    vec![
        b("RF", None, [None, Some(87.30), Some(78.71)]),
        b(
            "GB",
            Some([0.8413, 0.8415, 0.8427, 0.8414]),
            [Some(85.38), Some(86.51), Some(80.55)],
        ),
        b("XGB", None, [Some(83.75), Some(84.92), Some(81.01)]),
        b(
            "MLP",
            Some([0.8459, 0.8460, 0.8466, 0.8459]),
            [Some(85.97), Some(86.35), Some(81.47)],
        ),
    ]
}

/// One model's entry in the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub params: serde_json::Value,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub trials_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_provenance: String,
    pub n_train: usize,
    pub n_test: usize,
    pub test_class_counts: [usize; N_CLASSES],
    pub models: Vec<ModelEntry>,
    /// Published reference figures.
    #[serde(rename = "paper_baselines")]
    pub reference_baselines: Vec<Baseline>,
    pub notes: Vec<String>,
}

pub const REPORT_JSON: &str = "comparison.json";
pub const REPORT_MARKDOWN: &str = "comparison.md";

pub fn confusion_svg_name(model: &str) -> String {
    format!("confusion-{}.svg", model.to_ascii_lowercase())
}

pub fn report_notes() -> Vec<String> {
    vec![
        "Precision, recall and F1 are macro-averaged over the three classes.".into(),
        "Per-class figures are recall (row-normalized confusion matrix).".into(),
        "A precision or recall with an empty denominator is reported as 0.".into(),
        "Reference figures were obtained on a different, unavailable dataset and are shown for orientation only.".into(),
    ]
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_markdown(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Model comparison\n");
    let _ = writeln!(s, "- run_id: `{}`", r.run_id);
    let _ = writeln!(s, "- seed: {}", r.seed);
    let _ = writeln!(s, "- config_hash: `{}`", r.config_hash);
    let _ = writeln!(s, "- dataset: {} ({} train / {} test rows)\n", r.dataset_provenance, r.n_train, r.n_test);

    let _ = writeln!(s, "## Overall metrics\n");
    let _ = writeln!(
        s,
        "| Model | Accuracy | F1 | Precision | Recall | Ref. accuracy | Ref. F1 | Ref. precision | Ref. recall |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for m in &r.models {
        let b = r.reference_baselines.iter().find(|b| b.model == m.name);
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} | {} | {} |",
            m.name,
            m.metrics.accuracy,
            m.metrics.macro_f1,
            m.metrics.macro_precision,
            m.metrics.macro_recall,
            fmt_opt(b.and_then(|b| b.accuracy), 4),
            fmt_opt(b.and_then(|b| b.f1), 4),
            fmt_opt(b.and_then(|b| b.precision), 4),
            fmt_opt(b.and_then(|b| b.recall), 4),
        );
    }

    let _ = writeln!(s, "\n## Per-class recall (%)\n");
    let names = class_names();
    let _ = writeln!(
        s,
        "| Model | {} | Ref. {} | Ref. {} | Ref. {} |",
        names.join(" | "),
        names[0],
        names[1],
        names[2]
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for m in &r.models {
        let b = r.reference_baselines.iter().find(|b| b.model == m.name);
        let rec = m.metrics.per_class_recall;
        let refs: Vec<String> = (0..N_CLASSES)
            .map(|k| fmt_opt(b.and_then(|b| b.per_class_recall_pct[k]), 2))
            .collect();
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {} |",
            m.name,
            100.0 * rec[0],
            100.0 * rec[1],
            100.0 * rec[2],
            refs.join(" | ")
        );
    }

    let _ = writeln!(s, "\n## Confusion matrices\n");
    for m in &r.models {
        let _ = writeln!(s, "![{} confusion matrix]({})", m.name, confusion_svg_name(&m.name));
    }
    let _ = writeln!(s, "\n---\n");
    for n in &r.notes {
        let _ = writeln!(s, "- {n}");
    }
    s
}

/// Heatmap of row-normalized percentages.
pub fn confusion_svg(model: &str, cm: &ConfusionMatrix) -> String {
    let cell = |i: usize, j: usize| {
        let share = ratio(cm.counts[i][j], cm.row_sum(i));
        (
            plot::sequential(share),
            format!("{:.2}%", 100.0 * share),
        )
    };
    plot::render(&Grid {
        title: &format!("{model} confusion matrix"),
        row_labels: &cm.class_names,
        col_labels: &cm.class_names,
        row_axis: "true class",
        col_axis: "predicted class",
        cell: &cell,
    })
}

/// Writes the JSON report, the Markdown table and one confusion heatmap per
/// model into `dir`, returning the written paths.
pub fn comparison_report(r: &ComparisonReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if r.models.is_empty() {
        return Err(Error::EmptyInput("comparison report needs at least one model".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut json = serde_json::to_string_pretty(r).map_err(|e| Error::ModelFormat(e.to_string()))?;
    json.push('\n');
    let path = dir.join(REPORT_JSON);
    data::write_atomic(&path, json.as_bytes())?;
    written.push(path);

    let path = dir.join(REPORT_MARKDOWN);
    data::write_atomic(&path, render_markdown(r).as_bytes())?;
    written.push(path);

    for m in &r.models {
        let path = dir.join(confusion_svg_name(&m.name));
        data::write_atomic(&path, confusion_svg(&m.name, &m.confusion).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
