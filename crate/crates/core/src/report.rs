//! Report files. Every writer is a pure function of its inputs, so equal
//! results give byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::metrics::Summarizer;
use crate::model::{ModelKind, PdpPoint};
use crate::pipeline::{CategoricalInfo, ModelDiagnosis, NumericInfo, RunReport, SweepReport};

/// Shortest text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// File-name-safe form of a model or column name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Creates `dir`; an existing non-empty directory needs `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct CsvOut {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Self {
            path,
            w: csv::Writer::from_writer(BufWriter::new(file)),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        self.w.write_record(fields.into_iter().collect::<Vec<_>>())?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AucBrief {
    original: f64,
    mean: f64,
    q1: f64,
    median: f64,
    q3: f64,
    mean_delta: f64,
}

#[derive(Serialize)]
struct ModelBrief<'a> {
    name: &'a str,
    kind: ModelKind,
    /// Mean of the selected summarizer.
    arppv: f64,
    /// Mean of every summarizer.
    aggregates: BTreeMap<&'static str, f64>,
    auc: Option<AucBrief>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    n: usize,
    k: usize,
    seed: u64,
    metric: Summarizer,
    deviation_reference: crate::metrics::DeviationReference,
    numeric: &'a Option<NumericInfo>,
    categorical: &'a Option<CategoricalInfo>,
    correlation_drift: Option<f64>,
    models: Vec<ModelBrief<'a>>,
    warnings: &'a [String],
}

/// `summary.json`, `per_obs_rppv.csv`, and when available `auc.csv` and
/// `drift.csv`.
pub fn write_run(dir: &Path, run: &RunReport) -> Result<()> {
    let models = run
        .models
        .iter()
        .map(|m| {
            let n = m.summary.per_obs_all.nrows() as f64;
            ModelBrief {
                name: &m.name,
                kind: m.kind,
                arppv: m.summary.aggregate,
                aggregates: Summarizer::ALL
                    .iter()
                    .enumerate()
                    .map(|(c, s)| (s.as_str(), m.summary.per_obs_all.column(c).sum() / n))
                    .collect(),
                auc: m.auc.as_ref().map(|a| AucBrief {
                    original: a.original,
                    mean: a.mean,
                    q1: a.q1,
                    median: a.median,
                    q3: a.q3,
                    mean_delta: a.mean_delta,
                }),
            }
        })
        .collect();
    let reference = run
        .models
        .first()
        .map(|m| m.summary.reference)
        .unwrap_or_default();
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            n: run.n,
            k: run.k,
            seed: run.seed,
            metric: run.metric,
            deviation_reference: reference,
            numeric: &run.numeric,
            categorical: &run.categorical,
            correlation_drift: run.drift,
            models,
            warnings: &run.warnings,
        },
    )?;

    let mut header = vec!["observation_id", "model", "rppv"];
    header.extend(Summarizer::ALL.iter().map(|s| s.as_str()));
    let mut out = CsvOut::create(dir.join("per_obs_rppv.csv"), &header)?;
    for m in &run.models {
        for (i, row) in m.summary.per_obs_all.rows().into_iter().enumerate() {
            let mut fields = vec![i.to_string(), m.name.clone(), fmt_f64(m.summary.per_obs[i])];
            fields.extend(row.iter().map(|&v| fmt_f64(v)));
            out.row(fields)?;
        }
    }
    out.finish()?;

    if run.models.iter().any(|m| m.auc.is_some()) {
        let mut out = CsvOut::create(dir.join("auc.csv"), &["model", "k", "auc"])?;
        for m in &run.models {
            if let Some(a) = &m.auc {
                out.row([m.name.clone(), "original".into(), fmt_f64(a.original)])?;
                for (k, v) in a.per_replicate.iter().enumerate() {
                    out.row([m.name.clone(), k.to_string(), fmt_f64(*v)])?;
                }
            }
        }
        out.finish()?;
    }

    if let (Some(d), Some(num)) = (run.drift, &run.numeric) {
        let mut out = CsvOut::create(dir.join("drift.csv"), &["budget", "mode", "strategy", "avg_frobenius"])?;
        out.row([fmt_f64(num.budget), enum_str(&num.mode), enum_str(&num.strategy), fmt_f64(d)])?;
        out.finish()?;
    }
    Ok(())
}

fn enum_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("expected a unit enum, got {other:?}"),
    }
}

/// Every perturbed row, under `batches/`.
pub fn write_batches(dir: &Path, schema: &Schema, run: &RunReport) -> Result<()> {
    if let Some(b) = &run.numeric_batch {
        let mut header = vec!["observation_id", "replicate"];
        header.extend((0..schema.p_num()).map(|j| schema.numeric(j).name.as_str()));
        let mut out = CsvOut::create(dir.join("batches").join("numeric.csv"), &header)?;
        for i in 0..b.n() {
            for k in 0..b.k() {
                let mut fields = vec![i.to_string(), k.to_string()];
                fields.extend(b.values.slice(ndarray::s![i, k, ..]).iter().map(|&v| fmt_f64(v)));
                out.row(fields)?;
            }
        }
        out.finish()?;
    }
    if let Some(b) = &run.categorical_batch {
        let mut header = vec!["observation_id", "replicate"];
        header.extend((0..schema.p_cat()).map(|j| schema.categorical(j).name.as_str()));
        let mut out = CsvOut::create(dir.join("batches").join("categorical.csv"), &header)?;
        for i in 0..b.n() {
            for k in 0..b.k() {
                let mut fields = vec![i.to_string(), k.to_string()];
                fields.extend(
                    b.values
                        .slice(ndarray::s![i, k, ..])
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| schema.categorical(j).levels[c as usize].clone()),
                );
                out.row(fields)?;
            }
        }
        out.finish()?;
    }
    Ok(())
}

/// `sweep.csv` and, with at least two numeric columns, `drift.csv`.
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    let s = &report.sweep;
    let mut out = CsvOut::create(dir.join("sweep.csv"), &["budget", "model", "arppv"])?;
    for (bi, &b) in s.budgets.iter().enumerate() {
        for (name, curve) in &s.arppv {
            out.row([fmt_f64(b), name.clone(), fmt_f64(curve[bi])])?;
        }
    }
    out.finish()?;
    if !report.drift.is_empty() {
        let mut out = CsvOut::create(dir.join("drift.csv"), &["budget", "mode", "strategy", "avg_frobenius"])?;
        for r in &report.drift {
            out.row([fmt_f64(r.budget), enum_str(&r.mode), enum_str(&r.strategy), fmt_f64(r.avg_frobenius)])?;
        }
        out.finish()?;
    }
    Ok(())
}

/// Per model, under `diagnosis/<model>/`: `psi.csv`, one `psi_<column>.csv`
/// per column, `tree.json`, and `singlevar_<column>.csv` / `pdp_<column>.csv`
/// for each diagnosed column.
pub fn write_diagnosis(dir: &Path, diagnoses: &[ModelDiagnosis]) -> Result<()> {
    for d in diagnoses {
        let mdir = dir.join("diagnosis").join(file_stem(&d.model));
        let mut out = CsvOut::create(mdir.join("psi.csv"), &["rank", "column", "psi"])?;
        for (r, p) in d.psi.iter().enumerate() {
            out.row([(r + 1).to_string(), p.column.clone(), fmt_f64(p.psi)])?;
        }
        out.finish()?;
        for p in &d.psi {
            let path = mdir.join(format!("psi_{}.csv", file_stem(&p.column)));
            let mut out = CsvOut::create(path, &["bin", "base", "new", "ln_ratio", "diff", "index"])?;
            for r in &p.rows {
                out.row([
                    r.label.clone(),
                    fmt_f64(r.base),
                    fmt_f64(r.new),
                    fmt_f64(r.ln_ratio),
                    fmt_f64(r.diff),
                    fmt_f64(r.index),
                ])?;
            }
            out.finish()?;
        }
        if let Some(tree) = &d.tree {
            write_json(&mdir.join("tree.json"), tree)?;
        }
        for s in &d.single {
            let stem = file_stem(&s.column);
            let mut out = CsvOut::create(
                mdir.join(format!("singlevar_{stem}.csv")),
                &["observation_id", "rppv", "violations"],
            )?;
            for (i, &r) in s.rppv.iter().enumerate() {
                let v = s.violations.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
                out.row([i.to_string(), fmt_f64(r), v])?;
            }
            out.finish()?;
            if let Some(pdp) = &s.pdp {
                write_pdp_file(&mdir.join(format!("pdp_{stem}.csv")), pdp)?;
            }
        }
    }
    Ok(())
}

fn write_pdp_file(path: &Path, pdp: &[PdpPoint]) -> Result<()> {
    let mut out = CsvOut::create(path.to_path_buf(), &["value", "mean_prediction"])?;
    for p in pdp {
        out.row([fmt_f64(p.value), fmt_f64(p.mean_prediction)])?;
    }
    out.finish()
}

/// `pdp/<model>/pdp_<column>.csv` for every model.
pub fn write_pdp(dir: &Path, column: &str, curves: &[(String, Vec<PdpPoint>)]) -> Result<()> {
    for (model, pdp) in curves {
        let path = dir.join("pdp").join(file_stem(model)).join(format!("pdp_{}.csv", file_stem(column)));
        write_pdp_file(&path, pdp)?;
    }
    Ok(())
}
