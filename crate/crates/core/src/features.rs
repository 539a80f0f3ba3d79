//! Feature vectors, standardization and the feature-correlation analysis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, AttackInstance, Dataset, LabelId, Provenance, N_FEATURES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::plot;

/// Maps an instance onto the 13 feature columns, in CSV header order.
pub fn featurize(inst: &AttackInstance) -> [f64; N_FEATURES] {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    [
        f64::from(inst.attacker_tx_count),
        inst.gas_price_ratio,
        inst.victim_gas_price_gwei,
        inst.attacker_gas_used,
        inst.victim_gas_used,
        inst.victim_value_eth,
        inst.attacker_value_eth,
        inst.block_position_delta as f64,
        flag(inst.same_block),
        flag(inst.victim_failed),
        f64::from(inst.interval_blocks),
        inst.cumulative_attacker_fee_eth,
        inst.gas_limit_utilization,
    ]
}

pub fn dataset_from_instances(instances: &[AttackInstance], provenance: Provenance) -> Result<Dataset> {
    let mut values = Vec::with_capacity(instances.len() * N_FEATURES);
    let mut labels = Vec::with_capacity(instances.len());
    for inst in instances {
        values.extend_from_slice(&featurize(inst));
        labels.push(LabelId::from(inst.label));
    }
    let m = Matrix::new(instances.len(), N_FEATURES, values)?;
    Dataset::new(m, labels, data::schema_names(), provenance)
}

/// Per-column affine scaling to zero mean and unit (population) variance.
///
/// Constant columns keep `std = 1`, so they transform to all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub feature_names: Vec<String>,
}

pub fn fit_standardizer(train: &Matrix, feature_names: &[String]) -> Result<Standardizer> {
    if train.rows() == 0 {
        return Err(Error::EmptyInput("cannot fit a standardizer on zero rows".into()));
    }
    if feature_names.len() != train.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            train.cols()
        )));
    }
    let n = train.rows() as f64;
    let mut means = Vec::with_capacity(train.cols());
    let mut stds = Vec::with_capacity(train.cols());
    for j in 0..train.cols() {
        let col = train.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let constant = col.iter().all(|&v| v == col[0]);
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if constant || std == 0.0 {
            means.push(col[0]);
            stds.push(1.0);
        } else {
            means.push(mean);
            stds.push(std);
        }
    }
    Ok(Standardizer {
        means,
        stds,
        feature_names: feature_names.to_vec(),
    })
}

impl Standardizer {
    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    fn check_arity(&self, cols: usize) -> Result<()> {
        if cols != self.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer fitted on {} columns, got {cols}",
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.check_arity(m.cols())?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_arity(row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.stds[j])
            .collect())
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.check_arity(m.cols())?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.stds[j] + self.means[j];
            }
        }
        Ok(out)
    }
}

pub fn apply_standardizer(s: &Standardizer, m: &Matrix) -> Result<Matrix> {
    s.apply(m)
}

/// Symmetric Pearson correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub entries: Matrix,
    pub feature_names: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pairwise Pearson coefficients. Any pair involving a constant column,
/// including that column's own diagonal entry, is 0.
pub fn pearson_correlation(m: &Matrix, feature_names: &[String]) -> Result<CorrelationMatrix> {
    if m.rows() < 2 {
        return Err(Error::EmptyInput(format!(
            "correlation needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    if feature_names.len() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            m.cols()
        )));
    }
    let n = m.rows() as f64;
    let p = m.cols();
    let centered: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let col = m.column(j);
            if col.iter().all(|&v| v == col[0]) {
                return vec![0.0; col.len()];
            }
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let ss: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();

    let mut entries = Matrix::zeros(p, p);
    for i in 0..p {
        if ss[i] == 0.0 {
            continue;
        }
        entries.set(i, i, 1.0);
        for j in (i + 1)..p {
            if ss[j] == 0.0 {
                continue;
            }
            let cross: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (cross / (ss[i].sqrt() * ss[j].sqrt())).clamp(-1.0, 1.0);
            entries.set(i, j, r);
            entries.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix {
        entries,
        feature_names: feature_names.to_vec(),
    })
}

pub fn heatmap_svg(c: &CorrelationMatrix) -> String {
    let cell = |i: usize, j: usize| {
        let v = c.get(i, j);
        (plot::diverging(v), format!("{v:.2}"))
    };
    plot::render(&plot::Grid {
        title: "Feature correlation",
        row_labels: &c.feature_names,
        col_labels: &c.feature_names,
        row_axis: "feature",
        col_axis: "feature",
        cell: &cell,
    })
}

/// Writes the correlation heatmap as a standalone SVG.
pub fn render_heatmap(c: &CorrelationMatrix, path: impl AsRef<Path>) -> Result<()> {
    data::write_atomic(path.as_ref(), heatmap_svg(c).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn col_matrix(cols: &[&[f64]]) -> Matrix {
        let rows = cols[0].len();
        let mut m = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    #[test]
    fn population_std_of_one_two_three() {
        let m = col_matrix(&[&[1.0, 2.0, 3.0]]);
        let s = fit_standardizer(&m, &names(1)).unwrap();
        assert_eq!(s.means[0], 2.0);
        assert!((s.stds[0] - 0.816496580927726).abs() < 1e-15);
    }

    #[test]
    fn constant_and_single_row_columns_map_to_zero() {
        let m = col_matrix(&[&[5.0, 5.0, 5.0], &[0.1, 0.1, 0.1]]);
        let s = fit_standardizer(&m, &names(2)).unwrap();
        assert_eq!(s.means[0], 5.0);
        assert_eq!(s.stds, vec![1.0, 1.0]);
        assert!(s.apply(&m).unwrap().as_slice().iter().all(|&v| v == 0.0));

        let one = Matrix::new(1, 3, vec![3.0, -1.0, 7.5]).unwrap();
        let s = fit_standardizer(&one, &names(3)).unwrap();
        assert_eq!(s.stds, vec![1.0; 3]);
        assert!(s.apply(&one).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(matches!(
            fit_standardizer(&Matrix::zeros(0, 2), &names(2)),
            Err(Error::EmptyInput(_))
        ));
        let s = fit_standardizer(&Matrix::zeros(2, 2), &names(2)).unwrap();
        assert!(s.apply(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn identity_standardizer_and_mean_row() {
        let m = col_matrix(&[&[1.0, 4.0, -2.0], &[0.5, 0.25, 9.0]]);
        let id = Standardizer {
            means: vec![0.0, 0.0],
            stds: vec![1.0, 1.0],
            feature_names: names(2),
        };
        assert_eq!(id.apply(&m).unwrap(), m);
        let s = fit_standardizer(&m, &names(2)).unwrap();
        let means = Matrix::new(1, 2, s.means.clone()).unwrap();
        assert!(s.apply(&means).unwrap().as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pearson_known_values() {
        let x = [1.0, 2.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = pearson_correlation(&col_matrix(&[&x, &x, &neg, &[2.0, 4.0, 6.1]]), &names(4)).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
        assert!((c.get(0, 3) - 0.9999).abs() < 1e-3);
    }

    #[test]
    fn pearson_constant_column_is_zero() {
        let c = pearson_correlation(&col_matrix(&[&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]]), &names(2)).unwrap();
        assert_eq!(c.get(1, 1), 0.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(0, 0), 1.0);
        assert!(pearson_correlation(&Matrix::zeros(1, 2), &names(2)).is_err());
    }

    #[test]
    fn featurize_uses_header_order() {
        let inst = AttackInstance {
            attacker_tx_count: 2,
            gas_price_ratio: 1.5,
            victim_gas_price_gwei: 30.0,
            attacker_gas_used: 2.0e5,
            victim_gas_used: 1.0e5,
            victim_value_eth: 1.0,
            attacker_value_eth: 2.0,
            block_position_delta: 1,
            same_block: true,
            victim_failed: false,
            interval_blocks: 1,
            cumulative_attacker_fee_eth: 0.02,
            gas_limit_utilization: 0.7,
            label: data::AttackClass::Insertion,
        };
        let row = featurize(&inst);
        assert_eq!(row.len(), 13);
        assert_eq!(row, featurize(&inst));
        assert_eq!(row[0], 2.0);
        assert_eq!(row[8], 1.0);
        assert_eq!(row[9], 0.0);
        assert_eq!(row[12], 0.7);
    }

    #[test]
    fn heatmap_structure() {
        let id = CorrelationMatrix {
            entries: Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            feature_names: names(2),
        };
        let svg = heatmap_svg(&id);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains(plot::MAX_COLOR_HEX));
        assert!(svg.contains(">1.00<"));
        assert_eq!(svg, heatmap_svg(&id));
    }
}
