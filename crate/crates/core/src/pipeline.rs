//! End-to-end runs: perturb, score, summarize and diagnose.

use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use crate::categorical::{
    categorical_marginals, fit_level_distance, pseudo_perturb, shuffle_perturb, CategoricalBatch, CategoricalMethod,
    CategoricalPerturbPlan, CategoricalSpace, ColumnDistance, LevelDistance,
};
use crate::config::{CategoricalConfig, NumericConfig, RunConfig};
use crate::data::{load_dataset, ColumnRef, Dataset, Schema};
use crate::diagnosis::{
    fit_diagnostic_tree, psi_rank, single_categorical_diagnosis, single_variable_diagnosis, worst_subset,
    DiagnosticTree, PsiBinning, PsiResult, SingleVarDiagnosis, SingleVarSettings, TreeParams,
};
use crate::error::{Error, Result};
use crate::metrics::{
    frobenius_drift, perturbed_auc, summarize, AucSummary, BudgetSweep, RobustnessSummary, Summarizer, SweepScope,
};
use crate::model::{pdp_grid, Model, ModelKind, PdpPoint};
use crate::noise::{sample_noise, NoiseField, NoiseMode};
use crate::numeric::{immobile_discrete_columns, perturb, NumericPerturbPlan, PerturbationBatch, Strategy};
use crate::stats::{
    column_stats, extract_envelope, pearson_correlation, quantile_buckets, BucketSpec, ColumnStats, CorrelationModel,
};

/// The evaluated dataset and the optional source of its statistics.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub data: Dataset,
    pub reference: Option<Dataset>,
}

impl Inputs {
    pub fn new(data: Dataset, reference: Option<Dataset>) -> Result<Self> {
        if let Some(r) = &reference {
            if r.schema() != data.schema() {
                return Err(Error::Contract("reference dataset has a different schema".into()));
            }
        }
        Ok(Self { data, reference })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let schema = Schema::from_json_file(&cfg.schema)?;
        let response = cfg.response.as_deref();
        let data = load_dataset(&cfg.dataset, &schema, response)?;
        let reference = match &cfg.reference_dataset {
            Some(p) => Some(load_dataset(p, &schema, response)?),
            None => None,
        };
        info!("loaded {} rows, {} columns", data.n_rows(), schema.len());
        Self::new(data, reference)
    }

    pub fn schema(&self) -> &Schema {
        self.data.schema()
    }

    /// Source of column statistics, correlation, envelope and level distances.
    pub fn reference(&self) -> &Dataset {
        self.reference.as_ref().unwrap_or(&self.data)
    }
}

/// Opens every configured model and probes it for determinism on `ds`.
pub fn open_models(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<Model>> {
    cfg.models
        .iter()
        .map(|m| {
            let model = Model::open(m, ds.schema(), Path::new(""))?;
            model.check_deterministic(ds)?;
            Ok(model)
        })
        .collect()
}

fn numeric_targets(schema: &Schema, names: Option<&[String]>) -> Result<Vec<usize>> {
    match names {
        None => Ok((0..schema.p_num()).collect()),
        Some(names) => names
            .iter()
            .map(|n| {
                schema
                    .numeric_index(n)
                    .ok_or_else(|| Error::Config(format!("`{n}` is not a numeric column")))
            })
            .collect(),
    }
}

fn categorical_targets(schema: &Schema, names: Option<&[String]>) -> Result<Vec<usize>> {
    match names {
        None => Ok((0..schema.p_cat()).collect()),
        Some(names) => names
            .iter()
            .map(|n| {
                schema
                    .categorical_index(n)
                    .ok_or_else(|| Error::Config(format!("`{n}` is not a categorical column")))
            })
            .collect(),
    }
}

/// Envelope, level distances and weights from the reference dataset;
/// distance files replace the fitted matrices column by column.
pub fn build_space(cfg: &CategoricalConfig, inputs: &Inputs) -> Result<CategoricalSpace> {
    let schema = inputs.schema();
    let reference = inputs.reference();
    for name in cfg.distance_files.keys().chain(cfg.weights.keys()) {
        if schema.categorical_index(name).is_none() {
            return Err(Error::Config(format!("`{name}` is not a categorical column")));
        }
    }
    let envelope = extract_envelope(reference)?;
    let read = |j: usize| -> Option<Result<ColumnDistance>> {
        let col = schema.categorical(j);
        cfg.distance_files.get(&col.name).map(|p| ColumnDistance::read_csv(p, col))
    };
    let from_files: Vec<Option<ColumnDistance>> = (0..schema.p_cat()).map(read).map(Option::transpose).collect::<Result<_>>()?;
    let distances = if from_files.iter().all(Option::is_some) {
        LevelDistance {
            columns: from_files.into_iter().flatten().collect(),
        }
    } else {
        let mut fitted = fit_level_distance(reference)?;
        for (j, d) in from_files.into_iter().enumerate() {
            if let Some(d) = d {
                fitted.columns[j] = d;
            }
        }
        fitted
    };
    let weights = (0..schema.p_cat())
        .map(|j| cfg.weights.get(&schema.categorical(j).name).copied().unwrap_or(1.0))
        .collect();
    CategoricalSpace::new(envelope, distances, weights)
}

struct NumericSetup {
    cfg: NumericConfig,
    targets: Vec<usize>,
    noise: NoiseField,
}

enum CategoricalSource {
    Pseudo(CategoricalSpace),
    Shuffle(Vec<Vec<f64>>),
}

struct CategoricalSetup {
    cfg: CategoricalConfig,
    targets: Vec<usize>,
    source: CategoricalSource,
}

/// Everything that does not depend on the budget: statistics, noise,
/// envelope and distances. Built once and reused across budgets.
pub struct Prepared {
    k: usize,
    seed: u64,
    stats: Option<ColumnStats>,
    buckets: Option<BucketSpec>,
    numeric: Option<NumericSetup>,
    categorical: Option<CategoricalSetup>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn new(
        inputs: &Inputs,
        numeric: Option<&NumericConfig>,
        categorical: Option<&CategoricalConfig>,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let schema = inputs.schema();
        let reference = inputs.reference();
        let mut warnings = Vec::new();
        let stats = if schema.p_num() > 0 {
            Some(column_stats(reference)?)
        } else {
            None
        };
        let mut buckets = None;
        let numeric = match (numeric, &stats) {
            (Some(_), None) => {
                warnings.push("numeric perturbation configured but the schema has no numeric columns".into());
                None
            }
            (Some(nc), Some(stats)) => {
                let targets = numeric_targets(schema, nc.columns.as_deref())?;
                let corr = match nc.mode {
                    NoiseMode::Correlated => pearson_correlation(reference)?,
                    NoiseMode::Independent => CorrelationModel::identity(schema.p_num()),
                };
                let noise = sample_noise(inputs.data.n_rows(), k, &corr, nc.mode, seed)?;
                if nc.strategy == Strategy::Adaptive {
                    buckets = Some(quantile_buckets(reference, nc.buckets, nc.window)?);
                }
                for name in immobile_discrete_columns(schema, stats, nc.budget) {
                    if targets.contains(&schema.numeric_index(&name).expect("listed")) {
                        warnings.push(format!(
                            "discrete column `{name}` is unlikely to move at budget {}",
                            nc.budget
                        ));
                    }
                }
                Some(NumericSetup {
                    cfg: nc.clone(),
                    targets,
                    noise,
                })
            }
            (None, _) => None,
        };
        let categorical = match categorical {
            Some(_) if schema.p_cat() == 0 => {
                warnings.push("categorical perturbation configured but the schema has no categorical columns".into());
                None
            }
            Some(cc) => {
                let targets = categorical_targets(schema, cc.columns.as_deref())?;
                let source = match cc.method {
                    CategoricalMethod::PseudoDistance => CategoricalSource::Pseudo(build_space(cc, inputs)?),
                    CategoricalMethod::Shuffle => CategoricalSource::Shuffle(categorical_marginals(reference)),
                };
                Some(CategoricalSetup {
                    cfg: cc.clone(),
                    targets,
                    source,
                })
            }
            None => None,
        };
        for w in &warnings {
            warn!("{w}");
        }
        Ok(Self {
            k,
            seed,
            stats,
            buckets,
            numeric,
            categorical,
            warnings,
        })
    }

    pub fn has_numeric(&self) -> bool {
        self.numeric.is_some()
    }

    pub fn has_categorical(&self) -> bool {
        self.categorical.is_some()
    }

    pub fn numeric_batch(&self, ds: &Dataset, budget: f64) -> Result<Option<PerturbationBatch>> {
        let Some(setup) = &self.numeric else {
            return Ok(None);
        };
        let plan = NumericPerturbPlan {
            budget,
            strategy: setup.cfg.strategy,
            mode: setup.cfg.mode,
            clip: setup.cfg.clip,
            target_columns: setup.targets.clone(),
        };
        let stats = self.stats.as_ref().expect("numeric setup implies stats");
        perturb(ds, stats, self.buckets.as_ref(), &setup.noise, &plan).map(Some)
    }

    pub fn categorical_batch(&self, ds: &Dataset, budget: f64) -> Result<Option<CategoricalBatch>> {
        let Some(setup) = &self.categorical else {
            return Ok(None);
        };
        let plan = CategoricalPerturbPlan {
            budget,
            k: self.k,
            max_prop: setup.cfg.max_prop,
            method: setup.cfg.method,
            target_columns: setup.targets.clone(),
        };
        match &setup.source {
            CategoricalSource::Pseudo(space) => pseudo_perturb(ds, space, &plan, self.seed),
            CategoricalSource::Shuffle(m) => shuffle_perturb(ds, m, &plan, self.seed),
        }
        .map(Some)
    }

    pub fn stats(&self) -> Option<&ColumnStats> {
        self.stats.as_ref()
    }
}

fn is_binary(y: &[f64]) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericInfo {
    pub budget: f64,
    pub strategy: Strategy,
    pub mode: NoiseMode,
    pub clip: bool,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalInfo {
    pub budget: f64,
    pub method: CategoricalMethod,
    pub max_prop: f64,
    pub columns: Vec<String>,
    /// Share of draws that left the observation's own combo eligible to move.
    pub acceptance_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResult {
    pub name: String,
    pub kind: ModelKind,
    pub summary: RobustnessSummary,
    pub auc: Option<AucSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub metric: Summarizer,
    pub numeric: Option<NumericInfo>,
    pub categorical: Option<CategoricalInfo>,
    /// Mean Frobenius drift of the correlation matrix under the numeric batch.
    pub drift: Option<f64>,
    pub models: Vec<ModelResult>,
    pub warnings: Vec<String>,
    pub numeric_batch: Option<PerturbationBatch>,
    pub categorical_batch: Option<CategoricalBatch>,
}

/// Perturbs the dataset once and evaluates every model on the same rows.
pub fn run(cfg: &RunConfig, inputs: &Inputs, models: &[Model]) -> Result<RunReport> {
    let ds = &inputs.data;
    let schema = inputs.schema();
    let prep = Prepared::new(inputs, cfg.numeric.as_ref(), cfg.categorical.as_ref(), cfg.k, cfg.seed)?;
    let numeric_batch = match &cfg.numeric {
        Some(nc) => prep.numeric_batch(ds, nc.budget)?,
        None => None,
    };
    let categorical_batch = match &cfg.categorical {
        Some(cc) => prep.categorical_batch(ds, cc.budget)?,
        None => None,
    };
    if numeric_batch.is_none() && categorical_batch.is_none() {
        return Err(Error::Config("nothing to perturb: configure `numeric` and/or `categorical`".into()));
    }
    let mut warnings = prep.warnings.clone();
    let numeric = prep.numeric.as_ref().map(|s| NumericInfo {
        budget: s.cfg.budget,
        strategy: s.cfg.strategy,
        mode: s.cfg.mode,
        clip: s.cfg.clip,
        columns: s.targets.iter().map(|&j| schema.numeric(j).name.clone()).collect(),
    });
    let categorical = prep.categorical.as_ref().map(|s| CategoricalInfo {
        budget: s.cfg.budget,
        method: s.cfg.method,
        max_prop: s.cfg.max_prop,
        columns: s.targets.iter().map(|&j| schema.categorical(j).name.clone()).collect(),
        acceptance_fraction: match (s.cfg.method, &categorical_batch) {
            (CategoricalMethod::PseudoDistance, Some(b)) => Some(b.acceptance_fraction()),
            _ => None,
        },
    });
    let drift = match &numeric_batch {
        Some(b) if schema.p_num() >= 2 => Some(frobenius_drift(ds, b)?),
        _ => None,
    };

    let y = ds.response();
    let mut results = Vec::with_capacity(models.len());
    for model in models {
        info!("scoring model `{}`", model.name());
        let preds = model.predict_perturbed(ds, numeric_batch.as_ref(), categorical_batch.as_ref())?;
        let summary = summarize(&preds, y, cfg.metric, cfg.deviation_reference)?;
        let auc = match y {
            Some(y) if is_binary(y) => match perturbed_auc(y, &preds) {
                Ok(a) => Some(a),
                Err(Error::SingleClass) => {
                    warnings.push("response has a single class; AUC skipped".into());
                    None
                }
                Err(e) => return Err(e),
            },
            _ => None,
        };
        info!("model `{}`: mean {} = {}", model.name(), cfg.metric, summary.aggregate);
        results.push(ModelResult {
            name: model.name().to_string(),
            kind: model.kind(),
            summary,
            auc,
        });
    }
    warnings.dedup();
    Ok(RunReport {
        n: ds.n_rows(),
        k: cfg.k,
        seed: cfg.seed,
        metric: cfg.metric,
        numeric,
        categorical,
        drift,
        models: results,
        warnings,
        numeric_batch,
        categorical_batch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub budget: f64,
    pub mode: NoiseMode,
    pub strategy: Strategy,
    pub avg_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub sweep: BudgetSweep,
    pub drift: Vec<DriftRow>,
}

/// ArPPV of every model over increasing budgets. The noise field and the
/// categorical draws are shared by all budgets, so curves differ only through
/// the budget. The categorical budget is `min(1, cat_multiplier · b)`.
pub fn sweep(cfg: &RunConfig, inputs: &Inputs, models: &[Model]) -> Result<SweepReport> {
    let sc = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no `sweep` section in the configuration".into()))?;
    BudgetSweep::validate_budgets(&sc.budgets)?;
    let schema = inputs.schema();
    let ds = &inputs.data;
    let use_num = matches!(sc.scope, SweepScope::Numeric | SweepScope::Both) && schema.p_num() > 0;
    let use_cat = matches!(sc.scope, SweepScope::Categorical | SweepScope::Both) && schema.p_cat() > 0;
    if !use_num && !use_cat {
        return Err(Error::Config("sweep scope selects no columns of this schema".into()));
    }
    let num_cfg = use_num.then(|| cfg.numeric.clone().unwrap_or_else(|| NumericConfig::new(0.0)));
    let cat_cfg = use_cat.then(|| cfg.categorical.clone().unwrap_or_else(|| CategoricalConfig::new(0.0)));
    let prep = Prepared::new(inputs, num_cfg.as_ref(), cat_cfg.as_ref(), cfg.k, cfg.seed)?;

    let mut arppv: Vec<(String, Vec<f64>)> = models.iter().map(|m| (m.name().to_string(), Vec::new())).collect();
    for &b in &sc.budgets {
        let nb = prep.numeric_batch(ds, b)?;
        let cb = prep.categorical_batch(ds, (sc.cat_multiplier * b).min(1.0))?;
        for (model, (_, curve)) in models.iter().zip(arppv.iter_mut()) {
            let preds = model.predict_perturbed(ds, nb.as_ref(), cb.as_ref())?;
            let s = summarize(&preds, ds.response(), cfg.metric, cfg.deviation_reference)?;
            info!("sweep b={b}: model `{}` {}", model.name(), s.aggregate);
            curve.push(s.aggregate);
        }
    }
    let drift = match &num_cfg {
        Some(nc) if schema.p_num() >= 2 => drift_grid(inputs, nc, &sc.budgets, cfg.k, cfg.seed)?,
        _ => Vec::new(),
    };
    Ok(SweepReport {
        sweep: BudgetSweep {
            budgets: sc.budgets.clone(),
            scope: sc.scope,
            cat_multiplier: sc.cat_multiplier,
            arppv,
        },
        drift,
    })
}

/// Correlation drift for both noise modes and both strategies at each budget.
pub fn drift_grid(inputs: &Inputs, nc: &NumericConfig, budgets: &[f64], k: usize, seed: u64) -> Result<Vec<DriftRow>> {
    let ds = &inputs.data;
    let reference = inputs.reference();
    let schema = inputs.schema();
    let stats = column_stats(reference)?;
    let buckets = quantile_buckets(reference, nc.buckets, nc.window)?;
    let targets = numeric_targets(schema, nc.columns.as_deref())?;
    let corr = pearson_correlation(reference)?;
    let mut rows = Vec::new();
    for mode in [NoiseMode::Independent, NoiseMode::Correlated] {
        let noise = sample_noise(ds.n_rows(), k, &corr, mode, seed)?;
        for strategy in [Strategy::Raw, Strategy::Adaptive] {
            for &budget in budgets {
                let plan = NumericPerturbPlan {
                    budget,
                    strategy,
                    mode,
                    clip: nc.clip,
                    target_columns: targets.clone(),
                };
                let batch = perturb(ds, &stats, Some(&buckets), &noise, &plan)?;
                rows.push(DriftRow {
                    budget,
                    mode,
                    strategy,
                    avg_frobenius: frobenius_drift(ds, &batch)?,
                });
            }
        }
    }
    rows.sort_by(|a, b| a.budget.total_cmp(&b.budget));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDiagnosis {
    pub model: String,
    pub worst: Vec<bool>,
    pub psi: Vec<PsiResult>,
    pub tree: Option<DiagnosticTree>,
    pub single: Vec<SingleVarDiagnosis>,
}

fn psi_binning(cfg: &RunConfig) -> PsiBinning {
    PsiBinning {
        bins: cfg.diagnosis.psi_bins,
        epsilon: cfg.diagnosis.psi_epsilon,
        ..PsiBinning::default()
    }
}

/// PSI ranking of the worst-rPPV subset against the rest, per model.
pub fn psi_ranking(cfg: &RunConfig, inputs: &Inputs, run: &RunReport) -> Result<Vec<ModelDiagnosis>> {
    let binning = psi_binning(cfg);
    run.models
        .iter()
        .map(|m| {
            let worst = worst_subset(&m.summary.per_obs, cfg.diagnosis.worst_q)?;
            let psi = psi_rank(&inputs.data, &worst, &binning)?;
            Ok(ModelDiagnosis {
                model: m.name.clone(),
                worst,
                psi,
                tree: None,
                single: Vec::new(),
            })
        })
        .collect()
}

/// PSI ranking, regression tree on rPPV and single-variable diagnosis of
/// the configured columns, per model.
pub fn diagnose(cfg: &RunConfig, inputs: &Inputs, models: &[Model], run: &RunReport) -> Result<Vec<ModelDiagnosis>> {
    let d = &cfg.diagnosis;
    let ds = &inputs.data;
    let schema = inputs.schema();
    let columns: Vec<ColumnRef> = d
        .columns
        .iter()
        .map(|n| schema.column(n).ok_or_else(|| Error::Config(format!("unknown diagnosis column `{n}`"))))
        .collect::<Result<_>>()?;
    let wants_numeric = columns.iter().any(|c| matches!(c, ColumnRef::Numeric(_)));
    let wants_categorical = columns.iter().any(|c| matches!(c, ColumnRef::Categorical(_)));
    let stats = if wants_numeric {
        Some(column_stats(inputs.reference())?)
    } else {
        None
    };
    let nc = cfg.numeric.clone().unwrap_or_else(|| NumericConfig::new(d.budget));
    let buckets = if wants_numeric && d.strategy == Strategy::Adaptive {
        Some(quantile_buckets(inputs.reference(), nc.buckets, nc.window)?)
    } else {
        None
    };
    let cc = cfg.categorical.clone().unwrap_or_else(|| CategoricalConfig::new(d.budget));
    let space = if wants_categorical {
        Some(build_space(&cc, inputs)?)
    } else {
        None
    };
    let settings = SingleVarSettings {
        budget: d.budget,
        k: cfg.k,
        strategy: d.strategy,
        clip: nc.clip,
        pdp_grid: d.pdp_grid,
        seed: cfg.seed,
        max_prop: cc.max_prop,
    };
    let params = TreeParams {
        max_depth: d.max_depth,
        min_leaf: d.min_leaf,
    };
    let mut out = psi_ranking(cfg, inputs, run)?;
    for ((diag, result), model) in out.iter_mut().zip(&run.models).zip(models) {
        if model.name() != result.name {
            return Err(Error::Contract("models and run results are out of order".into()));
        }
        info!("diagnosing model `{}`", model.name());
        diag.tree = Some(fit_diagnostic_tree(ds, &result.summary.per_obs, &params)?);
        for c in &columns {
            let single = match *c {
                ColumnRef::Numeric(j) => single_variable_diagnosis(
                    model,
                    ds,
                    stats.as_ref().expect("computed for numeric columns"),
                    buckets.as_ref(),
                    j,
                    &settings,
                )?,
                ColumnRef::Categorical(j) => {
                    single_categorical_diagnosis(model, ds, space.as_ref().expect("built"), j, &settings)?
                }
            };
            diag.single.push(single);
        }
    }
    Ok(out)
}

/// Partial dependence of every model on one numeric column.
pub fn pdp_all(inputs: &Inputs, models: &[Model], column: &str, grid: usize) -> Result<Vec<(String, Vec<PdpPoint>)>> {
    let j = inputs
        .schema()
        .numeric_index(column)
        .ok_or_else(|| Error::Config(format!("`{column}` is not a numeric column")))?;
    let values = pdp_grid(&inputs.data, j, grid)?;
    models
        .iter()
        .map(|m| Ok((m.name().to_string(), m.pdp(&inputs.data, j, &values)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSchema;
    use crate::model::GlmSpec;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_inputs(n: usize) -> Inputs {
        let schema = Schema::new(vec![
            ColumnSchema::continuous("x1"),
            ColumnSchema::continuous("x2"),
            ColumnSchema::discrete("d", 1.0),
            ColumnSchema::categorical("c", ["a", "b", "c"]),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let numeric = Array2::from_shape_fn((n, 3), |(_, j)| match j {
            2 => rng.random_range(0..5) as f64,
            _ => rng.random::<f64>() * 10.0,
        });
        let cat = Array2::from_shape_fn((n, 1), |(i, _)| (i % 3) as u32);
        let y: Vec<f64> = (0..n).map(|i| ((i % 3 == 0) || numeric[[i, 0]] > 7.0) as u8 as f64).collect();
        Inputs::new(Dataset::new(schema, numeric, cat, Some(y)).unwrap(), None).unwrap()
    }

    fn cfg(extra: &str) -> RunConfig {
        serde_json::from_str(&format!(
            r#"{{"dataset":"-","schema":"-","models":[],"k":20,"seed":3{extra}}}"#
        ))
        .unwrap()
    }

    fn glm(inputs: &Inputs) -> Model {
        let spec: GlmSpec = serde_json::from_str(
            r#"{"link":"logit","intercept":-1,"coefficients":{"x1":0.3,"x2":-0.1,"d":0.2},
                "categorical":{"c":{"reference":"a","coefficients":{"b":0.5,"c":-0.4}}}}"#,
        )
        .unwrap();
        Model::glm("glm", &spec, inputs.schema()).unwrap()
    }

    #[test]
    fn run_produces_summary_and_auc() {
        let inputs = toy_inputs(300);
        let models = [glm(&inputs)];
        let c = cfg(r#","numeric":{"budget":0.1},"categorical":{"budget":0.5}"#);
        let r = run(&c, &inputs, &models).unwrap();
        assert_eq!(r.models.len(), 1);
        let m = &r.models[0];
        assert_eq!(m.summary.per_obs.len(), 300);
        assert!(m.summary.aggregate > 0.0);
        assert!(m.auc.as_ref().unwrap().per_replicate.len() == 20);
        assert!(r.drift.unwrap() > 0.0);
        assert!(r.categorical.unwrap().acceptance_fraction.unwrap() > 0.0);
    }

    #[test]
    fn run_needs_something_to_perturb() {
        let inputs = toy_inputs(50);
        let models = [glm(&inputs)];
        assert!(matches!(run(&cfg(""), &inputs, &models), Err(Error::Config(_))));
    }

    #[test]
    fn zero_budget_gives_zero_rppv() {
        let inputs = toy_inputs(100);
        let models = [glm(&inputs)];
        let c = cfg(r#","numeric":{"budget":0},"categorical":{"budget":0}"#);
        let r = run(&c, &inputs, &models).unwrap();
        assert!(r.models[0].summary.per_obs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_is_increasing_for_linear_model() {
        let inputs = toy_inputs(200);
        let models = [Model::from_fn("lin", |x, _| 2.0 * x[0] - x[1])];
        let c = cfg(r#","numeric":{"budget":0.1,"clip":false},"sweep":{"budgets":[0.01,0.02,0.04],"scope":"numeric"}"#);
        let s = sweep(&c, &inputs, &models).unwrap();
        let curve = &s.sweep.arppv[0].1;
        // Without clipping rPPV of a linear model is exactly proportional to b.
        assert!((curve[1] / curve[0] - 2.0).abs() < 1e-9);
        assert!((curve[2] / curve[0] - 4.0).abs() < 1e-9);
        assert_eq!(s.drift.len(), 3 * 4);
    }

    #[test]
    fn diagnosis_outputs_per_model() {
        let inputs = toy_inputs(300);
        let models = [glm(&inputs)];
        let c = cfg(
            r#","numeric":{"budget":0.1},"categorical":{"budget":0.5},
               "diagnosis":{"columns":["x1","c"],"pdp_grid":5}"#,
        );
        let r = run(&c, &inputs, &models).unwrap();
        let d = diagnose(&c, &inputs, &models, &r).unwrap();
        assert_eq!(d[0].psi.len(), 4);
        assert_eq!(d[0].worst.iter().filter(|&&w| w).count(), 30);
        assert!(d[0].tree.is_some());
        assert_eq!(d[0].single.len(), 2);
        assert_eq!(d[0].single[0].pdp.as_ref().unwrap().len(), 5);
        assert!(d[0].single[1].violations.is_none());
    }

    #[test]
    fn unknown_columns_rejected() {
        let inputs = toy_inputs(50);
        let models = [glm(&inputs)];
        let c = cfg(r#","numeric":{"budget":0.1,"columns":["c"]}"#);
        assert!(matches!(run(&c, &inputs, &models), Err(Error::Config(_))));
        assert!(pdp_all(&inputs, &models, "nope", 5).is_err());
    }
}
