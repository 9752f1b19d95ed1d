//! Local diagnosis: where and on which variables a model is unstable.

mod psi;
mod tree;

use ndarray::Axis;
use serde::Serialize;

use crate::categorical::{pseudo_perturb, CategoricalMethod, CategoricalPerturbPlan, CategoricalSpace};
use crate::data::{ColumnRef, Dataset};
use crate::error::{Error, Result};
use crate::metrics::rppv;
use crate::model::{pdp_grid, Model, PdpPoint};
use crate::noise::{sample_noise, NoiseMode};
use crate::numeric::{perturb, NumericPerturbPlan, Strategy};
use crate::stats::{BucketSpec, ColumnStats, CorrelationModel};

pub use psi::{psi_column, psi_from_counts, psi_rank, psi_row, PsiBinning, PsiResult, PsiRow};
pub use tree::{fit_diagnostic_tree, DiagnosticTree, SplitRule, TreeNode, TreeParams};

pub const DEFAULT_PDP_GRID: usize = 50;

/// Mask of the `ceil(q·n)` largest values; equal values favour lower indices.
pub fn worst_subset(per_obs: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Contract(format!("worst-subset fraction must lie in (0, 1), got {q}")));
    }
    let n = per_obs.len();
    // The small slack keeps e.g. 0.1 · 100 from rounding up to 11.
    let m = ((q * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| per_obs[b].total_cmp(&per_obs[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..m.min(n)] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Direction changes of the prediction along the sorted variable values.
/// Zero steps are skipped; fewer than 3 points give 0.
pub fn monotone_violations(values: &[f64], preds: &[f64]) -> usize {
    assert_eq!(values.len(), preds.len(), "values and predictions must pair up");
    if values.len() < 3 {
        return 0;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut last_sign = 0.0;
    let mut changes = 0;
    for w in order.windows(2) {
        let d = preds[w[1]] - preds[w[0]];
        if d == 0.0 {
            continue;
        }
        let s = d.signum();
        if last_sign != 0.0 && s != last_sign {
            changes += 1;
        }
        last_sign = s;
    }
    changes
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleVarSettings {
    pub budget: f64,
    pub k: usize,
    pub strategy: Strategy,
    pub clip: bool,
    pub pdp_grid: usize,
    pub seed: u64,
    /// Acceptance probability for categorical columns.
    pub max_prop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleVarDiagnosis {
    pub column: String,
    #[serde(skip)]
    pub column_ref: ColumnRef,
    pub budget: f64,
    /// `None` for categorical columns.
    pub strategy: Option<Strategy>,
    pub rppv: Vec<f64>,
    /// Per observation; `None` for categorical columns, whose levels have no order.
    pub violations: Option<Vec<usize>>,
    pub pdp: Option<Vec<PdpPoint>>,
}

/// Perturbs one numeric column only, keeping every other covariate at its
/// observed value.
pub fn single_variable_diagnosis(
    model: &Model,
    ds: &Dataset,
    stats: &ColumnStats,
    buckets: Option<&BucketSpec>,
    column: usize,
    settings: &SingleVarSettings,
) -> Result<SingleVarDiagnosis> {
    let p = ds.schema().p_num();
    if column >= p {
        return Err(Error::Contract(format!("numeric column {column} out of range")));
    }
    let noise = sample_noise(
        ds.n_rows(),
        settings.k,
        &CorrelationModel::identity(p),
        NoiseMode::Independent,
        settings.seed,
    )?;
    let plan = NumericPerturbPlan {
        budget: settings.budget,
        strategy: settings.strategy,
        mode: NoiseMode::Independent,
        clip: settings.clip,
        target_columns: vec![column],
    };
    let batch = perturb(ds, stats, buckets, &noise, &plan)?;
    let preds = model.predict_perturbed(ds, Some(&batch), None)?;
    let col_values = batch.values.index_axis(Axis(2), column);
    let (rppv_values, violations): (Vec<f64>, Vec<usize>) = (0..ds.n_rows())
        .map(|i| {
            let yk = preds.perturbed.row(i).to_vec();
            let xk = col_values.row(i).to_vec();
            (rppv(preds.original[i], &yk), monotone_violations(&xk, &yk))
        })
        .unzip();
    let grid = pdp_grid(ds, column, settings.pdp_grid)?;
    let pdp = model.pdp(ds, column, &grid)?;
    Ok(SingleVarDiagnosis {
        column: ds.schema().numeric(column).name.clone(),
        column_ref: ColumnRef::Numeric(column),
        budget: settings.budget,
        strategy: Some(settings.strategy),
        rppv: rppv_values,
        violations: Some(violations),
        pdp: Some(pdp),
    })
}

/// Pseudo-distance perturbation of one categorical column; neighbor combos
/// must agree with the observation on every other categorical column.
pub fn single_categorical_diagnosis(
    model: &Model,
    ds: &Dataset,
    space: &CategoricalSpace,
    column: usize,
    settings: &SingleVarSettings,
) -> Result<SingleVarDiagnosis> {
    let p = ds.schema().p_cat();
    if column >= p {
        return Err(Error::Contract(format!("categorical column {column} out of range")));
    }
    let plan = CategoricalPerturbPlan {
        budget: settings.budget,
        k: settings.k,
        max_prop: settings.max_prop,
        method: CategoricalMethod::PseudoDistance,
        target_columns: vec![column],
    };
    let batch = pseudo_perturb(ds, space, &plan, settings.seed)?;
    let preds = model.predict_perturbed(ds, None, Some(&batch))?;
    let rppv_values = (0..ds.n_rows())
        .map(|i| rppv(preds.original[i], &preds.perturbed.row(i).to_vec()))
        .collect();
    Ok(SingleVarDiagnosis {
        column: ds.schema().categorical(column).name.clone(),
        column_ref: ColumnRef::Categorical(column),
        budget: settings.budget,
        strategy: None,
        rppv: rppv_values,
        violations: None,
        pdp: None,
    })
}
