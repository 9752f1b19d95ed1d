//! Typed tabular data: column schema, the immutable [`Dataset`] column store
//! and its CSV/JSON ingestion.
//!
//! Numeric columns (continuous and discrete) live in one `n × p_num` matrix,
//! categorical columns in an `n × p_cat` matrix of level codes. Both keep the
//! relative order the columns have in the schema.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
    Categorical,
}

impl ColumnKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, ColumnKind::Categorical)
    }
}

fn default_inflation() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    /// Multiplier on the noise scale of a discrete column.
    #[serde(default = "default_inflation")]
    pub noise_inflation: f64,
}

impl ColumnSchema {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            levels: Vec::new(),
            noise_inflation: 1.0,
        }
    }

    pub fn discrete(name: impl Into<String>, noise_inflation: f64) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Discrete,
            levels: Vec::new(),
            noise_inflation,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            levels: levels.into_iter().map(Into::into).collect(),
            noise_inflation: 1.0,
        }
    }

    pub fn level_code(&self, label: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == label).map(|p| p as u32)
    }
}

/// Validated list of predictor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<ColumnSchema>,
    numeric: Vec<usize>,
    categorical: Vec<usize>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
            let is_cat = c.kind == ColumnKind::Categorical;
            if is_cat == c.levels.is_empty() {
                return Err(Error::Schema(format!(
                    "column `{}`: levels must be given for categorical columns and only for them",
                    c.name
                )));
            }
            if !(c.noise_inflation > 0.0 && c.noise_inflation.is_finite()) {
                return Err(Error::Schema(format!(
                    "column `{}`: noise_inflation must be a positive finite number",
                    c.name
                )));
            }
            let mut lv = HashSet::new();
            if let Some(dup) = c.levels.iter().find(|l| !lv.insert(l.as_str())) {
                return Err(Error::Schema(format!(
                    "column `{}`: duplicate level `{dup}`",
                    c.name
                )));
            }
        }
        let numeric = (0..columns.len())
            .filter(|&i| columns[i].kind.is_numeric())
            .collect();
        let categorical = (0..columns.len())
            .filter(|&i| !columns[i].kind.is_numeric())
            .collect();
        Ok(Self {
            columns,
            numeric,
            categorical,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let columns: Vec<ColumnSchema> = serde_json::from_reader(file)?;
        Self::new(columns)
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn p_num(&self) -> usize {
        self.numeric.len()
    }

    pub fn p_cat(&self) -> usize {
        self.categorical.len()
    }

    /// Schema column of the `j`-th numeric column.
    pub fn numeric(&self, j: usize) -> &ColumnSchema {
        &self.columns[self.numeric[j]]
    }

    /// Schema column of the `j`-th categorical column.
    pub fn categorical(&self, j: usize) -> &ColumnSchema {
        &self.columns[self.categorical[j]]
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric
            .iter()
            .position(|&i| self.columns[i].name == name)
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical
            .iter()
            .position(|&i| self.columns[i].name == name)
    }

    pub fn column(&self, name: &str) -> Option<ColumnRef> {
        self.numeric_index(name)
            .map(ColumnRef::Numeric)
            .or_else(|| self.categorical_index(name).map(ColumnRef::Categorical))
    }

    /// Iterates columns in schema order as numeric/categorical block references.
    pub fn column_refs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        let (mut n, mut c) = (0, 0);
        self.columns.iter().map(move |col| {
            if col.kind.is_numeric() {
                n += 1;
                ColumnRef::Numeric(n - 1)
            } else {
                c += 1;
                ColumnRef::Categorical(c - 1)
            }
        })
    }

    pub fn column_of(&self, r: ColumnRef) -> &ColumnSchema {
        match r {
            ColumnRef::Numeric(j) => self.numeric(j),
            ColumnRef::Categorical(j) => self.categorical(j),
        }
    }
}

/// Position of a column inside the numeric or categorical block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnRef {
    Numeric(usize),
    Categorical(usize),
}

/// Immutable column store of the observations being perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    numeric: Array2<f64>,
    categorical: Array2<u32>,
    response: Option<Vec<f64>>,
    response_name: Option<String>,
}

impl Dataset {
    pub fn new(
        schema: Schema,
        numeric: Array2<f64>,
        categorical: Array2<u32>,
        response: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = numeric.nrows();
        if numeric.ncols() != schema.p_num() {
            return Err(Error::Contract(format!(
                "numeric block has {} columns, schema declares {}",
                numeric.ncols(),
                schema.p_num()
            )));
        }
        if categorical.ncols() != schema.p_cat() {
            return Err(Error::Contract(format!(
                "categorical block has {} columns, schema declares {}",
                categorical.ncols(),
                schema.p_cat()
            )));
        }
        if schema.p_cat() > 0 && schema.p_num() > 0 && categorical.nrows() != n {
            return Err(Error::Contract(
                "numeric and categorical blocks disagree on row count".into(),
            ));
        }
        let n = if schema.p_num() > 0 {
            n
        } else {
            categorical.nrows()
        };
        let numeric = if schema.p_num() == 0 {
            Array2::zeros((n, 0))
        } else {
            numeric
        };
        let categorical = if schema.p_cat() == 0 {
            Array2::zeros((n, 0))
        } else {
            categorical
        };
        if let Some((i, _)) = numeric.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (i / schema.p_num(), i % schema.p_num());
            return Err(Error::SchemaViolation {
                row,
                column: schema.numeric(col).name.clone(),
                message: "non-finite numeric value".into(),
            });
        }
        for (j, col) in categorical.axis_iter(Axis(1)).enumerate() {
            let m = schema.categorical(j).levels.len() as u32;
            if let Some(row) = col.iter().position(|&c| c >= m) {
                return Err(Error::SchemaViolation {
                    row,
                    column: schema.categorical(j).name.clone(),
                    message: format!("level code {} out of range", col[row]),
                });
            }
        }
        if let Some(y) = &response {
            if y.len() != n {
                return Err(Error::Contract(format!(
                    "response has {} entries for {} rows",
                    y.len(),
                    n
                )));
            }
        }
        Ok(Self {
            schema,
            numeric,
            categorical,
            response,
            response_name: None,
        })
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = Some(name.into());
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.numeric.nrows()
    }

    pub fn numeric(&self) -> &Array2<f64> {
        &self.numeric
    }

    pub fn categorical(&self) -> &Array2<u32> {
        &self.categorical
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    pub fn response_name(&self) -> Option<&str> {
        self.response_name.as_deref()
    }

    pub fn numeric_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.numeric.row(i)
    }

    pub fn categorical_row(&self, i: usize) -> ArrayView1<'_, u32> {
        self.categorical.row(i)
    }

    pub fn numeric_column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.numeric.column(j)
    }

    /// Same schema and response, numeric block replaced.
    pub fn with_numeric(&self, numeric: Array2<f64>) -> Result<Self> {
        let mut ds = Self::new(
            self.schema.clone(),
            numeric,
            self.categorical.clone(),
            self.response.clone(),
        )?;
        ds.response_name = self.response_name.clone();
        Ok(ds)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            numeric: self.numeric.select(Axis(0), rows),
            categorical: self.categorical.select(Axis(0), rows),
            response: self
                .response
                .as_ref()
                .map(|y| rows.iter().map(|&i| y[i]).collect()),
            response_name: self.response_name.clone(),
        }
    }
}

/// Reads a CSV file under `schema`. Header columns not named in the schema
/// (other than `response`) are ignored.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema, response: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema, response)
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    schema: &Schema,
    response: Option<&str>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from CSV header")))
    };
    let num_pos: Vec<usize> = (0..schema.p_num())
        .map(|j| find(&schema.numeric(j).name))
        .collect::<Result<_>>()?;
    let cat_pos: Vec<usize> = (0..schema.p_cat())
        .map(|j| find(&schema.categorical(j).name))
        .collect::<Result<_>>()?;
    let resp_pos = response.map(find).transpose()?;

    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut y = Vec::new();
    let mut n = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |pos: usize, column: &str| -> Result<f64> {
            let token = record.get(pos).unwrap_or("");
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: column.to_string(),
                    token: token.to_string(),
                }),
            }
        };
        for (j, &pos) in num_pos.iter().enumerate() {
            numeric.push(parse(pos, &schema.numeric(j).name)?);
        }
        for (j, &pos) in cat_pos.iter().enumerate() {
            let col = schema.categorical(j);
            let label = record.get(pos).unwrap_or("");
            let code = col.level_code(label).ok_or_else(|| Error::SchemaViolation {
                row,
                column: col.name.clone(),
                message: format!("unknown level `{label}`"),
            })?;
            categorical.push(code);
        }
        if let (Some(pos), Some(name)) = (resp_pos, response) {
            y.push(parse(pos, name)?);
        }
        n += 1;
    }
    let numeric = Array2::from_shape_vec((n, schema.p_num()), numeric)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let categorical = Array2::from_shape_vec((n, schema.p_cat()), categorical)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let ds = Dataset::new(
        schema.clone(),
        numeric,
        categorical,
        response.map(|_| y),
    )?;
    Ok(match response {
        Some(name) => ds.with_response_name(name),
        None => ds,
    })
}

/// Writes the dataset in schema column order followed by the response column.
/// Numbers use the shortest representation that reads back to the same bits.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, file)
}

pub fn write_dataset_to<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = ds.schema();
    let mut header: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if ds.response().is_some() {
        header.push(ds.response_name().unwrap_or("response"));
    }
    w.write_record(&header)?;
    let refs: Vec<ColumnRef> = schema.column_refs().collect();
    let mut fields = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        fields.clear();
        for r in &refs {
            fields.push(match *r {
                ColumnRef::Numeric(j) => format!("{}", ds.numeric[[i, j]]),
                ColumnRef::Categorical(j) => {
                    schema.categorical(j).levels[ds.categorical[[i, j]] as usize].clone()
                }
            });
        }
        if let Some(y) = ds.response() {
            fields.push(format!("{}", y[i]));
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::continuous("x"),
            ColumnSchema::categorical("c", ["a", "b"]),
        ])
        .unwrap()
    }

    #[test]
    fn three_row_file() {
        let csv = "x,c\n1.5,a\n2,b\n-3e2,a\n";
        let ds = read_dataset(csv.as_bytes(), &small_schema(), None).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.schema().p_num(), 1);
        assert_eq!(ds.schema().p_cat(), 1);
        assert_eq!(ds.numeric()[[2, 0]], -300.0);
        assert_eq!(ds.categorical().column(0).to_vec(), vec![0, 1, 0]);
    }

    #[test]
    fn unknown_label_names_row_and_column() {
        let schema = Schema::new(vec![ColumnSchema::categorical(
            "EDUCATION",
            ["university", "high school"],
        )])
        .unwrap();
        let csv = "EDUCATION\nuniversity\ngraduate\n";
        match read_dataset(csv.as_bytes(), &schema, None) {
            Err(Error::SchemaViolation { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "EDUCATION");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_parse_error() {
        let csv = "x,c\n1,a\nabc,b\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &small_schema(), None),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn missing_value_rejected() {
        let csv = "x,c\n,a\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &small_schema(), None),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "x\n1\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &small_schema(), None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn schema_invariants() {
        assert!(Schema::new(vec![ColumnSchema::continuous("a"), ColumnSchema::continuous("a")]).is_err());
        let mut bad = ColumnSchema::continuous("a");
        bad.levels = vec!["x".into()];
        assert!(Schema::new(vec![bad]).is_err());
        assert!(Schema::new(vec![ColumnSchema::categorical("c", Vec::<String>::new())]).is_err());
        assert!(Schema::new(vec![ColumnSchema::discrete("d", 0.0)]).is_err());
    }

    #[test]
    fn schema_json_defaults() {
        let json = r#"[{"name":"AGE","kind":"discrete","noise_inflation":4},
                       {"name":"SEX","kind":"categorical","levels":["1","2"]},
                       {"name":"LIMIT_BAL","kind":"continuous"}]"#;
        let cols: Vec<ColumnSchema> = serde_json::from_str(json).unwrap();
        let s = Schema::new(cols).unwrap();
        assert_eq!(s.numeric(0).noise_inflation, 4.0);
        assert_eq!(s.numeric(1).noise_inflation, 1.0);
        assert_eq!(s.column("SEX"), Some(ColumnRef::Categorical(0)));
        assert_eq!(s.column("LIMIT_BAL"), Some(ColumnRef::Numeric(1)));
    }

    #[test]
    fn round_trip_with_response() {
        let csv = "x,c,y\n0.1,b,1\n1e-300,a,0\n123456.789,a,1\n";
        let ds = read_dataset(csv.as_bytes(), &small_schema(), Some("y")).unwrap();
        let mut out = Vec::new();
        write_dataset_to(&ds, &mut out).unwrap();
        let back = read_dataset(out.as_slice(), &small_schema(), Some("y")).unwrap();
        assert_eq!(ds, back);
    }
}
