//! Builtin generalized linear model.
//!
//! Numeric columns enter linearly. Categorical columns are one-hot encoded
//! against a declared reference level, so the file names every dummy it uses:
//!
//! ```json
//! {
//!   "link": "logit",
//!   "intercept": -1.2,
//!   "coefficients": { "LIMIT_BAL": -0.3 },
//!   "categorical": {
//!     "EDUCATION": { "reference": "graduate school",
//!                    "coefficients": { "university": 0.1, "high school": 0.2 } }
//!   }
//! }
//! ```
//!
//! Absent coefficients are zero.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRef, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalTerm {
    pub reference: String,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmSpec {
    pub link: Link,
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub categorical: BTreeMap<String, CategoricalTerm>,
}

impl GlmSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// Resolves every name against `schema`.
    pub fn compile(&self, schema: &Schema) -> Result<Glm> {
        let bad = |msg: String| Err(Error::Config(format!("GLM: {msg}")));
        if !self.intercept.is_finite() {
            return bad("intercept must be finite".into());
        }
        let mut numeric = vec![0.0; schema.p_num()];
        for (name, &beta) in &self.coefficients {
            if !beta.is_finite() {
                return bad(format!("coefficient on `{name}` is not finite"));
            }
            match schema.column(name) {
                Some(ColumnRef::Numeric(j)) => numeric[j] = beta,
                Some(ColumnRef::Categorical(_)) => {
                    return bad(format!(
                        "`{name}` is categorical; list its levels under `categorical`"
                    ))
                }
                None => return bad(format!("unknown column `{name}`")),
            }
        }
        let mut categorical: Vec<Vec<f64>> = (0..schema.p_cat())
            .map(|j| vec![0.0; schema.categorical(j).levels.len()])
            .collect();
        for (name, term) in &self.categorical {
            let j = match schema.column(name) {
                Some(ColumnRef::Categorical(j)) => j,
                Some(ColumnRef::Numeric(_)) => return bad(format!("`{name}` is numeric")),
                None => return bad(format!("unknown column `{name}`")),
            };
            let col = schema.categorical(j);
            if col.level_code(&term.reference).is_none() {
                return bad(format!("`{name}` has no level `{}`", term.reference));
            }
            for (level, &beta) in &term.coefficients {
                if !beta.is_finite() {
                    return bad(format!("coefficient on `{name}={level}` is not finite"));
                }
                if *level == term.reference {
                    return bad(format!("`{name}={level}` is the reference level"));
                }
                match col.level_code(level) {
                    Some(c) => categorical[j][c as usize] = beta,
                    None => return bad(format!("`{name}` has no level `{level}`")),
                }
            }
        }
        Ok(Glm {
            link: self.link,
            intercept: self.intercept,
            numeric,
            categorical,
        })
    }
}

/// A [`GlmSpec`] resolved to column positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Glm {
    pub link: Link,
    pub intercept: f64,
    /// One coefficient per numeric column.
    pub numeric: Vec<f64>,
    /// Per categorical column, one coefficient per level (0 at the reference).
    pub categorical: Vec<Vec<f64>>,
}

impl Glm {
    pub fn linear_predictor(&self, x: ArrayView1<f64>, c: ArrayView1<u32>) -> f64 {
        let mut eta = self.intercept;
        for (b, v) in self.numeric.iter().zip(x) {
            eta += b * v;
        }
        for (levels, &code) in self.categorical.iter().zip(c) {
            eta += levels[code as usize];
        }
        eta
    }

    pub fn predict_row(&self, x: ArrayView1<f64>, c: ArrayView1<u32>) -> f64 {
        let eta = self.linear_predictor(x, c);
        match self.link {
            Link::Identity => eta,
            Link::Logit => inverse_logit(eta),
        }
    }
}

/// Logistic function kept strictly inside `(0, 1)`.
pub fn inverse_logit(eta: f64) -> f64 {
    let p = 1.0 / (1.0 + (-eta).exp());
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSchema;
    use ndarray::array;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::continuous("x"),
            ColumnSchema::categorical("c", ["a", "b", "c"]),
        ])
        .unwrap()
    }

    fn spec(json: &str) -> GlmSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn identity_evaluation() {
        let g = spec(r#"{"link":"identity","intercept":1,"coefficients":{"x":2}}"#)
            .compile(&schema())
            .unwrap();
        assert_eq!(g.predict_row(array![3.0].view(), array![0].view()), 7.0);
    }

    #[test]
    fn zero_logit_is_one_half() {
        let g = spec(r#"{"link":"logit","intercept":0}"#).compile(&schema()).unwrap();
        assert_eq!(g.predict_row(array![123.0].view(), array![2].view()), 0.5);
    }

    #[test]
    fn one_hot_with_reference() {
        let g = spec(
            r#"{"link":"identity","intercept":0,
                "categorical":{"c":{"reference":"b","coefficients":{"a":1.5,"c":-2}}}}"#,
        )
        .compile(&schema())
        .unwrap();
        let x = array![0.0];
        assert_eq!(g.predict_row(x.view(), array![0].view()), 1.5);
        assert_eq!(g.predict_row(x.view(), array![1].view()), 0.0);
        assert_eq!(g.predict_row(x.view(), array![2].view()), -2.0);
    }

    #[test]
    fn logit_stays_open_interval() {
        for eta in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let p = inverse_logit(eta);
            assert!(p > 0.0 && p < 1.0, "eta {eta} gave {p}");
        }
    }

    #[test]
    fn unresolved_names_rejected() {
        let s = schema();
        for json in [
            r#"{"link":"identity","intercept":0,"coefficients":{"y":1}}"#,
            r#"{"link":"identity","intercept":0,"coefficients":{"c":1}}"#,
            r#"{"link":"identity","intercept":0,"categorical":{"x":{"reference":"a"}}}"#,
            r#"{"link":"identity","intercept":0,"categorical":{"c":{"reference":"q"}}}"#,
            r#"{"link":"identity","intercept":0,"categorical":{"c":{"reference":"a","coefficients":{"a":1}}}}"#,
            r#"{"link":"identity","intercept":0,"categorical":{"c":{"reference":"a","coefficients":{"z":1}}}}"#,
        ] {
            assert!(spec(json).compile(&s).is_err(), "{json}");
        }
        assert!(serde_json::from_str::<GlmSpec>(r#"{"link":"probit","intercept":0}"#).is_err());
    }

    #[test]
    fn json_file_round_trip() {
        let s = spec(
            r#"{"link":"logit","intercept":-0.5,"coefficients":{"x":0.25},
                "categorical":{"c":{"reference":"a","coefficients":{"b":1}}}}"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("glm.json");
        s.write_json_file(&path).unwrap();
        assert_eq!(GlmSpec::from_json_file(&path).unwrap(), s);
    }
}
