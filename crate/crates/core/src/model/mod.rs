//! Uniform scoring over builtin and external models.
//!
//! Rows are scored in chunks of at most `batch_size`. Predictions always come
//! back in input order whatever the dispatch strategy: builtin models run
//! chunks in parallel, a subprocess scorer one chunk at a time, an HTTP scorer
//! up to its in-flight limit.

mod glm;
mod http;
mod subprocess;
pub mod wire;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::CategoricalBatch;
use crate::data::{Dataset, Schema};
use crate::error::{Error, Result};
use crate::numeric::PerturbationBatch;

pub use glm::{inverse_logit, CategoricalTerm, Glm, GlmSpec, Link};
pub use http::HttpScorer;
pub use subprocess::SubprocessScorer;

pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const PROBE_ROWS: usize = 16;

/// A block of rows in schema layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    pub numeric: Array2<f64>,
    pub categorical: Array2<u32>,
}

impl Rows {
    pub fn len(&self) -> usize {
        self.numeric.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    /// Pure scorer; chunks may run on any number of threads.
    Parallel,
    /// At most this many chunks in flight.
    Limited(usize),
}

pub trait Scorer: Send + Sync {
    /// One prediction per row of `rows`. `batch` is the chunk index, for errors.
    fn score(&self, schema: &Schema, rows: &Rows, batch: usize) -> Result<Vec<f64>>;

    fn concurrency(&self) -> Concurrency;
}

struct GlmScorer(Glm);

impl Scorer for GlmScorer {
    fn score(&self, _: &Schema, rows: &Rows, _: usize) -> Result<Vec<f64>> {
        Ok(rows
            .numeric
            .outer_iter()
            .zip(rows.categorical.outer_iter())
            .map(|(x, c)| self.0.predict_row(x, c))
            .collect())
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }
}

type RowFn = dyn Fn(ArrayView1<f64>, ArrayView1<u32>) -> f64 + Send + Sync;

struct FnScorer(Arc<RowFn>);

impl Scorer for FnScorer {
    fn score(&self, _: &Schema, rows: &Rows, _: usize) -> Result<Vec<f64>> {
        Ok(rows
            .numeric
            .outer_iter()
            .zip(rows.categorical.outer_iter())
            .map(|(x, c)| (self.0)(x, c))
            .collect())
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BuiltinGlm,
    ExternalSubprocess,
    ExternalHttp,
    Custom,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_timeout() -> f64 {
    60.0
}

fn default_in_flight() -> usize {
    4
}

/// Model entry of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    BuiltinGlm {
        path: PathBuf,
    },
    ExternalSubprocess {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
    ExternalHttp {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

/// Original and perturbed predictions of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `ŷ_i`, length n.
    pub original: Vec<f64>,
    /// `ŷ_ik`, shape `(n, K)`.
    pub perturbed: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdpPoint {
    pub value: f64,
    pub mean_prediction: f64,
}

trait RowSource: Sync {
    fn len(&self) -> usize;
    fn fill(&self, start: usize, end: usize) -> Rows;
}

struct DatasetRows<'a>(&'a Dataset);

impl RowSource for DatasetRows<'_> {
    fn len(&self) -> usize {
        self.0.n_rows()
    }

    fn fill(&self, start: usize, end: usize) -> Rows {
        Rows {
            numeric: self.0.numeric().slice(ndarray::s![start..end, ..]).to_owned(),
            categorical: self.0.categorical().slice(ndarray::s![start..end, ..]).to_owned(),
        }
    }
}

/// Row `r` is replicate `r % K` of observation `r / K`.
struct PerturbedRows<'a> {
    ds: &'a Dataset,
    numeric: Option<&'a PerturbationBatch>,
    categorical: Option<&'a CategoricalBatch>,
    k: usize,
}

impl RowSource for PerturbedRows<'_> {
    fn len(&self) -> usize {
        self.ds.n_rows() * self.k
    }

    fn fill(&self, start: usize, end: usize) -> Rows {
        let (p_num, p_cat) = (self.ds.schema().p_num(), self.ds.schema().p_cat());
        let numeric = Array2::from_shape_fn((end - start, p_num), |(r, j)| {
            let (i, k) = ((start + r) / self.k, (start + r) % self.k);
            match self.numeric {
                Some(b) => b.values[[i, k, j]],
                None => self.ds.numeric()[[i, j]],
            }
        });
        let categorical = Array2::from_shape_fn((end - start, p_cat), |(r, j)| {
            let (i, k) = ((start + r) / self.k, (start + r) % self.k);
            match self.categorical {
                Some(b) => b.values[[i, k, j]],
                None => self.ds.categorical()[[i, j]],
            }
        });
        Rows { numeric, categorical }
    }
}

/// Row `r` is observation `r % n` with `column` set to `grid[r / n]`.
struct GridRows<'a> {
    ds: &'a Dataset,
    column: usize,
    grid: &'a [f64],
}

impl RowSource for GridRows<'_> {
    fn len(&self) -> usize {
        self.ds.n_rows() * self.grid.len()
    }

    fn fill(&self, start: usize, end: usize) -> Rows {
        let n = self.ds.n_rows();
        let p_cat = self.ds.schema().p_cat();
        let mut numeric = Array2::zeros((end - start, self.ds.schema().p_num()));
        for (r, mut row) in numeric.axis_iter_mut(Axis(0)).enumerate() {
            let (g, i) = ((start + r) / n, (start + r) % n);
            row.assign(&self.ds.numeric_row(i));
            row[self.column] = self.grid[g];
        }
        let categorical = Array2::from_shape_fn((end - start, p_cat), |(r, j)| {
            self.ds.categorical()[[(start + r) % n, j]]
        });
        Rows { numeric, categorical }
    }
}

/// A scoring endpoint plus its chunking policy.
pub struct Model {
    name: String,
    kind: ModelKind,
    batch_size: usize,
    schema: Option<Schema>,
    glm: Option<Glm>,
    scorer: Box<dyn Scorer>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("batch_size", &self.batch_size)
            .finish()
    }
}

impl Model {
    pub fn glm(name: impl Into<String>, spec: &GlmSpec, schema: &Schema) -> Result<Self> {
        let glm = spec.compile(schema)?;
        Ok(Self {
            name: name.into(),
            kind: ModelKind::BuiltinGlm,
            batch_size: DEFAULT_BATCH_SIZE,
            schema: Some(schema.clone()),
            glm: Some(glm.clone()),
            scorer: Box::new(GlmScorer(glm)),
        })
    }

    /// Model given by a pure per-row function of numeric values and level codes.
    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(ArrayView1<f64>, ArrayView1<u32>) -> f64 + Send + Sync + 'static,
    {
        Self::from_scorer(name, ModelKind::Custom, Box::new(FnScorer(Arc::new(f))))
    }

    pub fn from_scorer(name: impl Into<String>, kind: ModelKind, scorer: Box<dyn Scorer>) -> Self {
        Self {
            name: name.into(),
            kind,
            batch_size: DEFAULT_BATCH_SIZE,
            schema: None,
            glm: None,
            scorer,
        }
    }

    pub fn subprocess(name: impl Into<String>, command: &[String], timeout: Duration) -> Result<Self> {
        let scorer = SubprocessScorer::spawn(command, timeout)?;
        Ok(Self::from_scorer(name, ModelKind::ExternalSubprocess, Box::new(scorer)))
    }

    pub fn http(name: impl Into<String>, url: &str, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        let scorer = HttpScorer::new(url, timeout, max_in_flight)?;
        Ok(Self::from_scorer(name, ModelKind::ExternalHttp, Box::new(scorer)))
    }

    /// Builds a model from its configuration; relative paths resolve against `base_dir`.
    pub fn open(config: &ModelConfig, schema: &Schema, base_dir: &Path) -> Result<Self> {
        let timeout = |secs: f64| {
            if secs.is_finite() && secs > 0.0 {
                Ok(Duration::from_secs_f64(secs))
            } else {
                Err(Error::Config(format!("model `{}`: timeout must be positive", config.name)))
            }
        };
        let model = match &config.spec {
            ModelSpec::BuiltinGlm { path } => {
                let spec = GlmSpec::from_json_file(base_dir.join(path))?;
                Self::glm(&config.name, &spec, schema)?
            }
            ModelSpec::ExternalSubprocess { command, timeout_secs } => {
                Self::subprocess(&config.name, command, timeout(*timeout_secs)?)?
            }
            ModelSpec::ExternalHttp {
                url,
                timeout_secs,
                max_in_flight,
            } => Self::http(&config.name, url, timeout(*timeout_secs)?, *max_in_flight)?,
        };
        model.with_batch_size(config.batch_size)
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config(format!("model `{}`: batch_size must be >= 1", self.name)));
        }
        self.batch_size = batch_size;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// The compiled coefficients when this is a builtin GLM.
    pub fn as_glm(&self) -> Option<&Glm> {
        self.glm.as_ref()
    }

    fn check_schema(&self, schema: &Schema) -> Result<()> {
        match &self.schema {
            Some(s) if s != schema => Err(Error::Contract(format!(
                "model `{}` was built for a different schema",
                self.name
            ))),
            _ => Ok(()),
        }
    }

    fn score_source(&self, schema: &Schema, source: &dyn RowSource) -> Result<Vec<f64>> {
        let n = source.len();
        let bs = self.batch_size;
        let chunks = n.div_ceil(bs);
        let run = |c: usize| -> Result<Vec<f64>> {
            let (start, end) = (c * bs, ((c + 1) * bs).min(n));
            let rows = source.fill(start, end);
            let preds = self.scorer.score(schema, &rows, c)?;
            if preds.len() != end - start {
                return Err(Error::Scoring {
                    batch: c,
                    message: format!("expected {} predictions, got {}", end - start, preds.len()),
                });
            }
            if let Some(r) = preds.iter().position(|v| !v.is_finite()) {
                return Err(Error::Scoring {
                    batch: c,
                    message: format!("non-finite prediction {} for row {}", preds[r], start + r),
                });
            }
            Ok(preds)
        };
        let parts: Vec<Vec<f64>> = match self.scorer.concurrency() {
            Concurrency::Parallel => (0..chunks).into_par_iter().map(run).collect::<Result<_>>()?,
            Concurrency::Limited(m) if m <= 1 => (0..chunks).map(run).collect::<Result<_>>()?,
            Concurrency::Limited(m) => {
                let mut parts = Vec::with_capacity(chunks);
                for wave in (0..chunks).collect::<Vec<_>>().chunks(m) {
                    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
                        let handles: Vec<_> = wave.iter().map(|&c| s.spawn(move || run(c))).collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("scoring thread panicked"))
                            .collect()
                    });
                    for r in results {
                        parts.push(r?);
                    }
                }
                parts
            }
        };
        Ok(parts.concat())
    }

    /// One prediction per row of `ds`.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(ds.schema())?;
        self.score_source(ds.schema(), &DatasetRows(ds))
    }

    /// Scores the first rows twice and fails on any bitwise difference.
    pub fn check_deterministic(&self, ds: &Dataset) -> Result<()> {
        let rows: Vec<usize> = (0..ds.n_rows().min(PROBE_ROWS)).collect();
        let probe = ds.select_rows(&rows);
        let first = self.predict(&probe)?;
        let second = self.predict(&probe)?;
        for (row, (a, b)) in first.iter().zip(&second).enumerate() {
            if a.to_bits() != b.to_bits() {
                return Err(Error::NonDeterministic {
                    row,
                    first: *a,
                    second: *b,
                });
            }
        }
        Ok(())
    }

    /// Scores the originals, then every `(i, k)` replicate in `i`-major order.
    /// Numeric and categorical batches, when both given, are zipped per `(i, k)`.
    pub fn predict_perturbed(
        &self,
        ds: &Dataset,
        numeric: Option<&PerturbationBatch>,
        categorical: Option<&CategoricalBatch>,
    ) -> Result<Predictions> {
        let n = ds.n_rows();
        let k = match (numeric, categorical) {
            (None, None) => return Err(Error::Contract("no perturbation batch given".into())),
            (Some(a), Some(b)) if a.k() != b.k() => {
                return Err(Error::Contract(format!(
                    "numeric batch has K={}, categorical batch has K={}",
                    a.k(),
                    b.k()
                )))
            }
            (Some(a), _) => a.k(),
            (None, Some(b)) => b.k(),
        };
        if numeric.is_some_and(|b| b.n() != n || b.values.len_of(Axis(2)) != ds.schema().p_num())
            || categorical.is_some_and(|b| b.n() != n || b.values.len_of(Axis(2)) != ds.schema().p_cat())
        {
            return Err(Error::Contract("perturbation batch does not match the dataset".into()));
        }
        let original = self.predict(ds)?;
        let source = PerturbedRows {
            ds,
            numeric,
            categorical,
            k,
        };
        let flat = self.score_source(ds.schema(), &source)?;
        let perturbed = Array2::from_shape_vec((n, k), flat).expect("n·K predictions");
        Ok(Predictions { original, perturbed })
    }

    /// Partial dependence of the prediction on numeric column `column`.
    pub fn pdp(&self, ds: &Dataset, column: usize, grid: &[f64]) -> Result<Vec<PdpPoint>> {
        self.check_schema(ds.schema())?;
        if grid.is_empty() {
            return Err(Error::Contract("PDP grid is empty".into()));
        }
        if column >= ds.schema().p_num() {
            return Err(Error::Contract(format!("numeric column {column} out of range")));
        }
        let n = ds.n_rows();
        if n == 0 {
            return Err(Error::InsufficientData("PDP needs at least one row".into()));
        }
        let col = ds.numeric_column(column);
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let slack = 1e-9 * (hi - lo).abs().max(1.0);
        if let Some(g) = grid.iter().find(|&&g| !(g >= lo - slack && g <= hi + slack)) {
            return Err(Error::Contract(format!(
                "PDP grid value {g} outside the column range [{lo}, {hi}]"
            )));
        }
        let flat = self.score_source(ds.schema(), &GridRows { ds, column, grid })?;
        Ok(grid
            .iter()
            .zip(flat.chunks(n))
            .map(|(&value, preds)| PdpPoint {
                value,
                mean_prediction: preds.iter().sum::<f64>() / n as f64,
            })
            .collect())
    }
}

/// `size` evenly spaced values from the column minimum to its maximum.
pub fn pdp_grid(ds: &Dataset, column: usize, size: usize) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(Error::Contract("PDP grid size must be >= 1".into()));
    }
    let col = ds.numeric_column(column);
    if col.is_empty() {
        return Err(Error::InsufficientData("PDP needs at least one row".into()));
    }
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if size == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size)
        .map(|g| if g == size - 1 { hi } else { lo + step * g as f64 })
        .collect())
}
