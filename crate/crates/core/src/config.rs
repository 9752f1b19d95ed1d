//! Run configuration (JSON).
//!
//! Relative paths are resolved against the directory holding the config file.
//! A minimal file:
//!
//! ```json
//! {
//!   "dataset": "credit.csv",
//!   "schema": "schema.json",
//!   "response": "default",
//!   "models": [{ "name": "glm", "kind": "builtin_glm", "path": "glm.json" }],
//!   "numeric": { "budget": 0.05 },
//!   "categorical": { "budget": 0.2 }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::categorical::CategoricalMethod;
use crate::error::{Error, Result};
use crate::metrics::{DeviationReference, Summarizer, SweepScope};
use crate::model::{ModelConfig, ModelSpec};
use crate::noise::NoiseMode;
use crate::numeric::Strategy;
use crate::stats::{DEFAULT_BUCKETS, DEFAULT_WINDOW};

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_SEED: u64 = 20_240_101;

fn default_k() -> usize {
    DEFAULT_K
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_true() -> bool {
    true
}
fn default_buckets() -> usize {
    DEFAULT_BUCKETS
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_max_prop() -> f64 {
    1.0
}
fn default_worst_q() -> f64 {
    0.1
}
fn default_max_depth() -> usize {
    3
}
fn default_pdp_grid() -> usize {
    crate::diagnosis::DEFAULT_PDP_GRID
}
fn default_diag_budget() -> f64 {
    0.02
}
fn default_psi_bins() -> usize {
    10
}
fn default_cat_multiplier() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    pub budget: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default = "default_true")]
    pub clip: bool,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Column names to perturb; all numeric columns when absent.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalConfig {
    pub budget: f64,
    #[serde(default = "default_max_prop")]
    pub max_prop: f64,
    #[serde(default)]
    pub method: CategoricalMethod,
    /// Per-column weights; missing columns weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    /// Expert distance matrices replacing the fitted ones, by column.
    #[serde(default)]
    pub distance_files: BTreeMap<String, PathBuf>,
}

impl NumericConfig {
    /// Defaults for every field but the budget.
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            strategy: Strategy::default(),
            mode: NoiseMode::default(),
            clip: true,
            buckets: DEFAULT_BUCKETS,
            window: DEFAULT_WINDOW,
            columns: None,
        }
    }
}

impl CategoricalConfig {
    /// Defaults for every field but the budget.
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            max_prop: 1.0,
            method: CategoricalMethod::default(),
            weights: BTreeMap::new(),
            columns: None,
            distance_files: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisConfig {
    #[serde(default = "default_worst_q")]
    pub worst_q: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default)]
    pub min_leaf: Option<usize>,
    /// Columns for single-variable diagnosis.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default = "default_pdp_grid")]
    pub pdp_grid: usize,
    /// Budget of single-variable perturbations.
    #[serde(default = "default_diag_budget")]
    pub budget: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_psi_bins")]
    pub psi_bins: usize,
    #[serde(default)]
    pub psi_epsilon: Option<f64>,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    #[serde(default = "default_cat_multiplier")]
    pub cat_multiplier: f64,
    #[serde(default)]
    pub scope: SweepScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub response: Option<String>,
    /// Source of column statistics, envelope and level distances; the
    /// dataset itself when absent.
    #[serde(default)]
    pub reference_dataset: Option<PathBuf>,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub metric: Summarizer,
    #[serde(default)]
    pub deviation_reference: DeviationReference,
    #[serde(default)]
    pub numeric: Option<NumericConfig>,
    #[serde(default)]
    pub categorical: Option<CategoricalConfig>,
    #[serde(default)]
    pub diagnosis: DiagnosisConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Write every perturbed row to `batches/`.
    #[serde(default)]
    pub dump_batches: bool,
}

impl RunConfig {
    /// Reads, resolves relative paths and validates.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.schema);
        if let Some(r) = self.reference_dataset.as_mut() {
            fix(r);
        }
        for m in &mut self.models {
            if let ModelSpec::BuiltinGlm { path } = &mut m.spec {
                fix(path);
            }
        }
        if let Some(c) = self.categorical.as_mut() {
            c.distance_files.values_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut files = vec![&self.dataset, &self.schema];
        files.extend(self.reference_dataset.iter());
        for m in &self.models {
            if let ModelSpec::BuiltinGlm { path } = &m.spec {
                files.push(path);
            }
        }
        if let Some(c) = &self.categorical {
            files.extend(c.distance_files.values());
        }
        if let Some(missing) = files.iter().find(|p| !p.is_file()) {
            return bad(format!("file not found: {}", missing.display()));
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let mut names = std::collections::HashSet::new();
        if let Some(dup) = self.models.iter().find(|m| !names.insert(m.name.as_str())) {
            return bad(format!("duplicate model name `{}`", dup.name));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let Some(n) = &self.numeric {
            if !(n.budget >= 0.0 && n.budget.is_finite()) {
                return bad("numeric budget must be finite and >= 0".into());
            }
        }
        if let Some(c) = &self.categorical {
            if !(0.0..=1.0).contains(&c.budget) {
                return bad("categorical budget must lie in [0, 1]".into());
            }
            if !(c.max_prop > 0.0 && c.max_prop <= 1.0) {
                return bad("max_prop must lie in (0, 1]".into());
            }
            if c.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad("categorical weights must be finite and >= 0".into());
            }
        }
        let d = &self.diagnosis;
        if !(d.worst_q > 0.0 && d.worst_q < 1.0) {
            return bad("diagnosis.worst_q must lie in (0, 1)".into());
        }
        if !(d.budget >= 0.0 && d.budget.is_finite()) {
            return bad("diagnosis.budget must be finite and >= 0".into());
        }
        if d.pdp_grid == 0 {
            return bad("diagnosis.pdp_grid must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            crate::metrics::BudgetSweep::validate_budgets(&s.budgets)?;
            if !(s.cat_multiplier >= 0.0 && s.cat_multiplier.is_finite()) {
                return bad("sweep.cat_multiplier must be finite and >= 0".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.csv", "x\n1\n");
        write(dir.path(), "s.json", r#"[{"name":"x","kind":"continuous"}]"#);
        write(dir.path(), "g.json", r#"{"link":"identity","intercept":0}"#);
        let cfg = write(
            dir.path(),
            "run.json",
            r#"{"dataset":"d.csv","schema":"s.json",
                "models":[{"name":"g","kind":"builtin_glm","path":"g.json"}],
                "numeric":{"budget":0.05}}"#,
        );
        let c = RunConfig::from_file(&cfg).unwrap();
        assert_eq!(c.dataset, dir.path().join("d.csv"));
        assert_eq!(c.k, DEFAULT_K);
        assert_eq!(c.metric, Summarizer::Rms);
        let n = c.numeric.unwrap();
        assert!(n.clip);
        assert_eq!((n.buckets, n.window), (20, 3));
        assert_eq!(n.mode, NoiseMode::Correlated);
        assert_eq!(c.diagnosis.worst_q, 0.1);
        assert_eq!(c.diagnosis.pdp_grid, 50);
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.csv", "x\n1\n");
        write(dir.path(), "s.json", r#"[{"name":"x","kind":"continuous"}]"#);
        write(dir.path(), "g.json", r#"{"link":"identity","intercept":0}"#);
        let base = r#""dataset":"d.csv","schema":"s.json","models":[{"name":"g","kind":"builtin_glm","path":"g.json"}]"#;
        for extra in [
            r#","k":0"#,
            r#","numeric":{"budget":-1}"#,
            r#","categorical":{"budget":1.5}"#,
            r#","categorical":{"budget":0.2,"max_prop":0}"#,
            r#","sweep":{"budgets":[0.02,0.01]}"#,
            r#","diagnosis":{"worst_q":1.0}"#,
            r#","unknown_field":1"#,
        ] {
            let p = write(dir.path(), "bad.json", &format!("{{{base}{extra}}}"));
            assert!(RunConfig::from_file(&p).is_err(), "{extra}");
        }
        let p = write(dir.path(), "missing.json", r#"{"dataset":"nope.csv","schema":"s.json","models":[]}"#);
        assert!(matches!(RunConfig::from_file(&p), Err(Error::Config(_))));
    }
}
