//! Population stability index between the worst-rPPV subset and the rest.

use serde::Serialize;

use crate::data::{ColumnKind, ColumnRef, Dataset};
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// How a column is cut into PSI bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiBinning {
    /// Equal-frequency bins for continuous columns, edges taken from the base group.
    pub bins: usize,
    /// Discrete columns with at most this many distinct values get one bin per value.
    pub max_discrete_values: usize,
    /// Floor applied to both proportions; `None` keeps empty bins infinite.
    pub epsilon: Option<f64>,
}

impl Default for PsiBinning {
    fn default() -> Self {
        Self {
            bins: 10,
            max_discrete_values: 20,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiRow {
    pub label: String,
    pub base: f64,
    pub new: f64,
    /// `ln(new / base)`.
    pub ln_ratio: f64,
    /// `new − base`.
    pub diff: f64,
    /// `(new − base) · ln(new / base)`.
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiResult {
    pub column: String,
    pub psi: f64,
    pub rows: Vec<PsiRow>,
}

/// One PSI row. A bin empty on exactly one side has infinite index.
pub fn psi_row(label: impl Into<String>, base: f64, new: f64, epsilon: Option<f64>) -> PsiRow {
    let (b, n) = match epsilon {
        Some(e) => (base.max(e), new.max(e)),
        None => (base, new),
    };
    let ln_ratio = (n / b).ln();
    let diff = n - b;
    let index = if diff == 0.0 {
        0.0
    } else if b == 0.0 || n == 0.0 {
        f64::INFINITY
    } else {
        diff * ln_ratio
    };
    PsiRow {
        label: label.into(),
        base: b,
        new: n,
        ln_ratio,
        diff,
        index,
    }
}

/// PSI table from per-bin counts; bins empty on both sides are dropped.
pub fn psi_from_counts(column: &str, labels: &[String], base: &[usize], new: &[usize], epsilon: Option<f64>) -> PsiResult {
    let nb: usize = base.iter().sum();
    let nn: usize = new.iter().sum();
    let rows: Vec<PsiRow> = labels
        .iter()
        .zip(base.iter().zip(new))
        .filter(|(_, (&b, &n))| b + n > 0)
        .map(|(l, (&b, &n))| psi_row(l.clone(), b as f64 / nb as f64, n as f64 / nn as f64, epsilon))
        .collect();
    let psi = rows.iter().map(|r| r.index).sum();
    PsiResult {
        column: column.to_string(),
        psi,
        rows,
    }
}

/// Labels and cut points; a value falls in the bin of the first cut `>=` it.
fn numeric_bins(base_vals: &[f64], all_vals: &[f64], kind: ColumnKind, binning: &PsiBinning) -> (Vec<String>, Vec<f64>) {
    let mut distinct: Vec<f64> = all_vals.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if kind == ColumnKind::Discrete && distinct.len() <= binning.max_discrete_values {
        let labels = distinct.iter().map(|v| format!("{v}")).collect();
        return (labels, distinct);
    }
    let mut sorted = base_vals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..binning.bins)
        .map(|q| quantile_sorted(&sorted, q as f64 / binning.bins as f64))
        .collect();
    edges.dedup();
    let mut labels = Vec::with_capacity(edges.len() + 1);
    let mut lo = "-inf".to_string();
    for e in &edges {
        labels.push(format!("({lo}, {e}]"));
        lo = format!("{e}");
    }
    labels.push(format!("({lo}, inf)"));
    (labels, edges)
}

/// PSI of one column, with the rows outside `worst` as the base group.
pub fn psi_column(ds: &Dataset, column: ColumnRef, worst: &[bool], binning: &PsiBinning) -> Result<PsiResult> {
    if worst.len() != ds.n_rows() {
        return Err(Error::Contract("worst-subset mask length differs from the dataset".into()));
    }
    let n_new = worst.iter().filter(|&&w| w).count();
    if n_new == 0 || n_new == worst.len() {
        return Err(Error::InsufficientData("PSI needs both groups non-empty".into()));
    }
    if binning.bins < 2 {
        return Err(Error::Config("PSI needs at least 2 bins".into()));
    }
    let schema = ds.schema();
    let col = schema.column_of(column);
    let (labels, base, new) = match column {
        ColumnRef::Categorical(j) => {
            let m = col.levels.len();
            let (mut base, mut new) = (vec![0; m], vec![0; m]);
            for (i, &c) in ds.categorical().column(j).iter().enumerate() {
                if worst[i] {
                    new[c as usize] += 1;
                } else {
                    base[c as usize] += 1;
                }
            }
            (col.levels.clone(), base, new)
        }
        ColumnRef::Numeric(j) => {
            let values = ds.numeric_column(j);
            let all: Vec<f64> = values.to_vec();
            let base_vals: Vec<f64> = all.iter().zip(worst).filter(|(_, &w)| !w).map(|(v, _)| *v).collect();
            let (labels, cuts) = numeric_bins(&base_vals, &all, col.kind, binning);
            let (mut base, mut new) = (vec![0; labels.len()], vec![0; labels.len()]);
            for (v, &w) in all.iter().zip(worst) {
                let b = cuts.partition_point(|c| c < v);
                if w {
                    new[b] += 1;
                } else {
                    base[b] += 1;
                }
            }
            (labels, base, new)
        }
    };
    Ok(psi_from_counts(&col.name, &labels, &base, &new, binning.epsilon))
}

/// PSI of every predictor column, largest first; infinite values lead.
/// Equal values keep schema order.
pub fn psi_rank(ds: &Dataset, worst: &[bool], binning: &PsiBinning) -> Result<Vec<PsiResult>> {
    use rayon::prelude::*;
    let refs: Vec<ColumnRef> = ds.schema().column_refs().collect();
    let mut out: Vec<PsiResult> = refs
        .par_iter()
        .map(|&r| psi_column(ds, r, worst, binning))
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| b.psi.total_cmp(&a.psi));
    Ok(out)
}
