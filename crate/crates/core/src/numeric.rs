//! Numeric covariate perturbation.
//!
//! A perturbed value is `x + ε · b · scale · inflation`, where `scale` is the
//! column sd (raw strategy) or the per-observation local sd (adaptive
//! strategy) and `inflation` is the discrete-column noise multiplier. Discrete
//! columns are then rounded half away from zero, and finally every value is
//! clipped to the reference `[min, max]` when clipping is on.

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, Schema};
use crate::error::{Error, Result};
use crate::noise::{NoiseField, NoiseMode};
use crate::stats::{BucketSpec, ColumnStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Raw,
    Adaptive,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Raw => "raw",
            Strategy::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericPerturbPlan {
    pub budget: f64,
    pub strategy: Strategy,
    pub mode: NoiseMode,
    pub clip: bool,
    /// Numeric column indices to perturb.
    pub target_columns: Vec<usize>,
}

impl NumericPerturbPlan {
    pub fn all_columns(budget: f64, strategy: Strategy, mode: NoiseMode, p_num: usize) -> Self {
        Self {
            budget,
            strategy,
            mode,
            clip: true,
            target_columns: (0..p_num).collect(),
        }
    }

    pub fn validate(&self, p_num: usize) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Contract(format!(
                "numeric budget must be finite and >= 0, got {}",
                self.budget
            )));
        }
        if self.target_columns.is_empty() {
            return Err(Error::Contract("numeric plan targets no columns".into()));
        }
        if let Some(&j) = self.target_columns.iter().find(|&&j| j >= p_num) {
            return Err(Error::Contract(format!("numeric column index {j} out of range")));
        }
        Ok(())
    }
}

/// K perturbed numeric rows per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBatch {
    /// Shape `(n, K, p_num)`.
    pub values: Array3<f64>,
    pub modified_columns: Vec<usize>,
    pub strategy: Strategy,
    pub mode: NoiseMode,
    pub budget: f64,
}

impl PerturbationBatch {
    /// K unmodified copies of every row.
    pub fn unperturbed(ds: &Dataset, k: usize) -> Self {
        let (n, p) = ds.numeric().dim();
        let values = Array3::from_shape_fn((n, k, p), |(i, _, j)| ds.numeric()[[i, j]]);
        Self {
            values,
            modified_columns: Vec::new(),
            strategy: Strategy::Raw,
            mode: NoiseMode::Independent,
            budget: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn k(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    /// The `k`-th replicate of the whole numeric block (`n × p_num`).
    pub fn replicate(&self, k: usize) -> Array2<f64> {
        self.values.index_axis(Axis(1), k).to_owned()
    }
}

fn check_dims(ds: &Dataset, noise: &NoiseField, plan: &NumericPerturbPlan) -> Result<()> {
    plan.validate(ds.schema().p_num())?;
    if noise.n() != ds.n_rows() || noise.p() != ds.schema().p_num() {
        return Err(Error::Contract(format!(
            "noise field is {}x{}x{}, dataset needs {} rows and {} numeric columns",
            noise.n(),
            noise.k(),
            noise.p(),
            ds.n_rows(),
            ds.schema().p_num()
        )));
    }
    Ok(())
}

fn perturb_with_scale<F>(
    ds: &Dataset,
    stats: &ColumnStats,
    noise: &NoiseField,
    plan: &NumericPerturbPlan,
    scale: F,
) -> PerturbationBatch
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let schema = ds.schema();
    let inflation: Vec<f64> = (0..schema.p_num())
        .map(|j| match schema.numeric(j).kind {
            ColumnKind::Discrete => schema.numeric(j).noise_inflation,
            _ => 1.0,
        })
        .collect();
    let (n, k, p) = noise.values.dim();
    let mut values = Array3::<f64>::zeros((n, k, p));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut block)| {
            let x = ds.numeric_row(i);
            for mut row in block.axis_iter_mut(Axis(0)) {
                row.assign(&x);
            }
            for &j in &plan.target_columns {
                let step = plan.budget * scale(i, j) * inflation[j];
                for kk in 0..k {
                    block[[kk, j]] = x[j] + noise.values[[i, kk, j]] * step;
                }
            }
        });
    let mut batch = PerturbationBatch {
        values,
        modified_columns: plan.target_columns.clone(),
        strategy: plan.strategy,
        mode: plan.mode,
        budget: plan.budget,
    };
    round_discrete(&mut batch, schema);
    if plan.clip {
        clip_to_envelope(&mut batch, stats);
    }
    batch
}

pub fn raw_perturb(
    ds: &Dataset,
    stats: &ColumnStats,
    noise: &NoiseField,
    plan: &NumericPerturbPlan,
) -> Result<PerturbationBatch> {
    if plan.strategy != Strategy::Raw {
        return Err(Error::Contract("raw_perturb called with a non-raw plan".into()));
    }
    check_dims(ds, noise, plan)?;
    Ok(perturb_with_scale(ds, stats, noise, plan, |_, j| stats.sigma[j]))
}

/// Per-observation noise scale `s_q / min(max_q s_q, σ_j) · σ_j`, with `q`
/// the bucket holding the observation's value; a zero denominator gives 0.
pub fn adaptive_sigma(stats: &ColumnStats, buckets: &BucketSpec, ds: &Dataset) -> Result<Array2<f64>> {
    let p = ds.schema().p_num();
    if buckets.columns.len() != p || stats.p_num() != p {
        return Err(Error::Contract(
            "bucket spec and column stats must cover the dataset's numeric columns".into(),
        ));
    }
    Ok(Array2::from_shape_fn((ds.n_rows(), p), |(i, j)| {
        let cb = &buckets.columns[j];
        let denom = cb.s_max.min(stats.sigma[j]);
        if denom <= 0.0 {
            return 0.0;
        }
        let s_q = cb.s[cb.bucket_of(ds.numeric()[[i, j]])];
        s_q / denom * stats.sigma[j]
    }))
}

pub fn adaptive_perturb(
    ds: &Dataset,
    stats: &ColumnStats,
    buckets: &BucketSpec,
    noise: &NoiseField,
    plan: &NumericPerturbPlan,
) -> Result<PerturbationBatch> {
    if plan.strategy != Strategy::Adaptive {
        return Err(Error::Contract("adaptive_perturb called with a non-adaptive plan".into()));
    }
    check_dims(ds, noise, plan)?;
    let sigma = adaptive_sigma(stats, buckets, ds)?;
    Ok(perturb_with_scale(ds, stats, noise, plan, |i, j| sigma[[i, j]]))
}

/// Dispatches on `plan.strategy`; `buckets` is required for the adaptive one.
pub fn perturb(
    ds: &Dataset,
    stats: &ColumnStats,
    buckets: Option<&BucketSpec>,
    noise: &NoiseField,
    plan: &NumericPerturbPlan,
) -> Result<PerturbationBatch> {
    match plan.strategy {
        Strategy::Raw => raw_perturb(ds, stats, noise, plan),
        Strategy::Adaptive => {
            let buckets = buckets.ok_or_else(|| {
                Error::Contract("adaptive strategy needs quantile buckets".into())
            })?;
            adaptive_perturb(ds, stats, buckets, noise, plan)
        }
    }
}

/// Rounds discrete columns to the nearest integer, halves away from zero.
pub fn round_discrete(batch: &mut PerturbationBatch, schema: &Schema) {
    for j in 0..schema.p_num() {
        if schema.numeric(j).kind == ColumnKind::Discrete {
            batch
                .values
                .index_axis_mut(Axis(2), j)
                .mapv_inplace(f64::round);
        }
    }
}

pub fn clip_to_envelope(batch: &mut PerturbationBatch, stats: &ColumnStats) {
    for (j, mut col) in batch.values.axis_iter_mut(Axis(2)).enumerate() {
        let (lo, hi) = (stats.min[j], stats.max[j]);
        col.mapv_inplace(|v| v.clamp(lo, hi));
    }
}

/// Discrete columns whose 3-sd noise range cannot reach ±0.5 at `budget`,
/// i.e. columns that rounding will leave untouched.
pub fn immobile_discrete_columns(schema: &Schema, stats: &ColumnStats, budget: f64) -> Vec<String> {
    (0..schema.p_num())
        .filter(|&j| {
            let c = schema.numeric(j);
            c.kind == ColumnKind::Discrete && 3.0 * budget * stats.sigma[j] * c.noise_inflation < 0.5
        })
        .map(|j| schema.numeric(j).name.clone())
        .collect()
}
