//! Prediction-volatility summaries, perturbed AUC and correlation drift.

use std::fmt;
use std::str::FromStr;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Predictions;
use crate::numeric::PerturbationBatch;
use crate::stats::{pearson_matrix, quantile_sorted};

/// Reduction of the K deviations of one observation to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Summarizer {
    #[default]
    Rms,
    Ms,
    AbsMax,
    MaxSq,
    AbsMean,
    AbsMedian,
}

impl Summarizer {
    pub const ALL: [Summarizer; 6] = [
        Summarizer::Rms,
        Summarizer::Ms,
        Summarizer::AbsMax,
        Summarizer::MaxSq,
        Summarizer::AbsMean,
        Summarizer::AbsMedian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Summarizer::Rms => "rms",
            Summarizer::Ms => "ms",
            Summarizer::AbsMax => "abs_max",
            Summarizer::MaxSq => "max_sq",
            Summarizer::AbsMean => "abs_mean",
            Summarizer::AbsMedian => "abs_median",
        }
    }
}

impl fmt::Display for Summarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Summarizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Summarizer::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown summarizer `{s}`")))
    }
}

pub fn summarize_deviations(devs: &[f64], metric: Summarizer) -> Result<f64> {
    if devs.is_empty() {
        return Err(Error::Contract("cannot summarize an empty deviation vector".into()));
    }
    let k = devs.len() as f64;
    let ms = || devs.iter().map(|d| d * d).sum::<f64>() / k;
    let abs_max = || devs.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    Ok(match metric {
        Summarizer::Rms => ms().sqrt(),
        Summarizer::Ms => ms(),
        Summarizer::AbsMax => abs_max(),
        Summarizer::MaxSq => abs_max().powi(2),
        Summarizer::AbsMean => devs.iter().map(|d| d.abs()).sum::<f64>() / k,
        Summarizer::AbsMedian => {
            let mut a: Vec<f64> = devs.iter().map(|d| d.abs()).collect();
            a.sort_by(f64::total_cmp);
            quantile_sorted(&a, 0.5)
        }
    })
}

/// Root-mean-square deviation of the perturbed predictions from `yhat_i`.
///
/// # Panics
/// If `yhat_ik` is empty.
pub fn rppv(yhat_i: f64, yhat_ik: &[f64]) -> f64 {
    assert!(!yhat_ik.is_empty(), "rPPV needs at least one perturbation");
    let devs: Vec<f64> = yhat_ik.iter().map(|v| v - yhat_i).collect();
    summarize_deviations(&devs, Summarizer::Rms).expect("non-empty")
}

/// Mean of the per-observation values.
///
/// # Panics
/// If `per_obs` is empty.
pub fn arppv(per_obs: &[f64]) -> f64 {
    assert!(!per_obs.is_empty(), "ArPPV needs at least one observation");
    per_obs.iter().sum::<f64>() / per_obs.len() as f64
}

/// What perturbed predictions are compared against.
///
/// Against the true response, the summary mixes the model's bias
/// `ŷ_i − y_i` with its stability, so it no longer measures robustness alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeviationReference {
    #[default]
    OriginalPrediction,
    TrueResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessSummary {
    pub metric: Summarizer,
    pub reference: DeviationReference,
    /// Per-observation value of `metric`.
    pub per_obs: Vec<f64>,
    /// Shape `(n, 6)`: every summarizer per observation, in [`Summarizer::ALL`] order.
    #[serde(skip)]
    pub per_obs_all: Array2<f64>,
    /// Mean of `per_obs`.
    pub aggregate: f64,
}

pub fn summarize(
    preds: &Predictions,
    y: Option<&[f64]>,
    metric: Summarizer,
    reference: DeviationReference,
) -> Result<RobustnessSummary> {
    let n = preds.original.len();
    if n == 0 {
        return Err(Error::InsufficientData("no observations to summarize".into()));
    }
    if preds.perturbed.ncols() == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    let base: &[f64] = match reference {
        DeviationReference::OriginalPrediction => &preds.original,
        DeviationReference::TrueResponse => {
            y.ok_or_else(|| Error::MissingResponse("deviation from the true response".into()))?
        }
    };
    if base.len() != n || preds.perturbed.nrows() != n {
        return Err(Error::Contract("prediction and reference lengths differ".into()));
    }
    let mut all = Array2::<f64>::zeros((n, Summarizer::ALL.len()));
    all.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out)| {
            let devs: Vec<f64> = preds.perturbed.row(i).iter().map(|v| v - base[i]).collect();
            for (slot, m) in out.iter_mut().zip(Summarizer::ALL) {
                *slot = summarize_deviations(&devs, m).expect("K >= 1");
            }
        });
    let col = Summarizer::ALL.iter().position(|&m| m == metric).expect("listed");
    let per_obs = all.column(col).to_vec();
    let aggregate = arppv(&per_obs);
    Ok(RobustnessSummary {
        metric,
        reference,
        per_obs,
        per_obs_all: all,
        aggregate,
    })
}

fn check_binary(y: &[f64]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &v in y {
        if v == 1.0 {
            pos += 1;
        } else if v != 0.0 {
            return Err(Error::Contract(format!("AUC needs a 0/1 response, found {v}")));
        }
    }
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok((pos, y.len() - pos))
}

/// Mann-Whitney AUC with tied scores sharing their mean rank.
pub fn auc(y: &[f64], scores: &[f64]) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::Contract("AUC: response and score lengths differ".into()));
    }
    let (n1, n0) = check_binary(y)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) share the midrank.
        let midrank = (start + end + 1) as f64 / 2.0;
        let pos_in_tie = order[start..end].iter().filter(|&&i| y[i] == 1.0).count();
        rank_sum_pos += midrank * pos_in_tie as f64;
        start = end;
    }
    let u = rank_sum_pos - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucSummary {
    /// AUC of replicate k, where every observation takes its k-th perturbation.
    pub per_replicate: Vec<f64>,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// AUC on the unperturbed predictions.
    pub original: f64,
    /// `mean − original`.
    pub mean_delta: f64,
}

pub fn perturbed_auc(y: &[f64], preds: &Predictions) -> Result<AucSummary> {
    check_binary(y)?;
    let original = auc(y, &preds.original)?;
    let per_replicate: Vec<f64> = preds
        .perturbed
        .axis_iter(Axis(1))
        .into_par_iter()
        .map(|col| auc(y, &col.to_vec()))
        .collect::<Result<_>>()?;
    let mut sorted = per_replicate.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = per_replicate.iter().sum::<f64>() / per_replicate.len() as f64;
    Ok(AucSummary {
        mean,
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        original,
        mean_delta: mean - original,
        per_replicate,
    })
}

/// Mean over replicates of the Frobenius norm between the perturbed and the
/// original Pearson correlation matrices.
pub fn frobenius_drift(ds: &Dataset, batch: &PerturbationBatch) -> Result<f64> {
    let p = ds.schema().p_num();
    if p < 2 {
        return Err(Error::Contract("correlation drift needs at least 2 numeric columns".into()));
    }
    if batch.n() != ds.n_rows() || batch.values.len_of(Axis(2)) != p {
        return Err(Error::Contract("perturbation batch does not match the dataset".into()));
    }
    let base = pearson_matrix(ds.numeric().view());
    let norms: Vec<f64> = (0..batch.k())
        .into_par_iter()
        .map(|k| {
            let c = pearson_matrix(batch.values.index_axis(Axis(1), k));
            (&c - &base).iter().map(|d| d * d).sum::<f64>().sqrt()
        })
        .collect();
    Ok(norms.iter().sum::<f64>() / norms.len() as f64)
}

/// Which covariates a budget sweep perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepScope {
    Numeric,
    Categorical,
    #[default]
    Both,
}

impl FromStr for SweepScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(SweepScope::Numeric),
            "categorical" => Ok(SweepScope::Categorical),
            "both" => Ok(SweepScope::Both),
            _ => Err(Error::Config(format!("unknown sweep scope `{s}` (numeric, categorical or both)"))),
        }
    }
}

/// ArPPV of each model over an increasing list of budgets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetSweep {
    pub budgets: Vec<f64>,
    pub scope: SweepScope,
    /// Categorical budget is `min(1, cat_multiplier · b)`.
    pub cat_multiplier: f64,
    /// `(model name, ArPPV per budget)`.
    pub arppv: Vec<(String, Vec<f64>)>,
}

impl BudgetSweep {
    pub fn validate_budgets(budgets: &[f64]) -> Result<()> {
        if budgets.is_empty() {
            return Err(Error::Config("sweep needs at least one budget".into()));
        }
        if budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("sweep budgets must be finite and >= 0".into()));
        }
        if budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep budgets must be strictly increasing".into()));
        }
        Ok(())
    }
}
