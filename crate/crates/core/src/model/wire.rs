//! JSON bodies shared by the subprocess and HTTP scorers.
//!
//! Request: `{"id": <int>, "columns": [names], "rows": [[values]]}` with
//! numeric cells as JSON numbers and categorical cells as their labels.
//! Response: `{"id": <int>, "predictions": [reals]}`, or
//! `{"id": <int>, "error": "message"}`.

use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{ColumnRef, Schema};

use super::Rows;

pub struct WireRequest<'a> {
    pub id: u64,
    pub schema: &'a Schema,
    pub rows: &'a Rows,
}

struct RowSer<'a> {
    schema: &'a Schema,
    rows: &'a Rows,
    i: usize,
}

struct RowsSer<'a> {
    schema: &'a Schema,
    rows: &'a Rows,
}

struct ColumnsSer<'a>(&'a Schema);

impl Serialize for ColumnsSer<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.columns().iter().map(|c| c.name.as_str()))
    }
}

impl Serialize for RowSer<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.schema.len()))?;
        for r in self.schema.column_refs() {
            match r {
                ColumnRef::Numeric(j) => seq.serialize_element(&self.rows.numeric[[self.i, j]])?,
                ColumnRef::Categorical(j) => {
                    let code = self.rows.categorical[[self.i, j]] as usize;
                    seq.serialize_element(&self.schema.categorical(j).levels[code])?
                }
            }
        }
        seq.end()
    }
}

impl Serialize for RowsSer<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.rows.len();
        let mut seq = s.serialize_seq(Some(n))?;
        for i in 0..n {
            seq.serialize_element(&RowSer {
                schema: self.schema,
                rows: self.rows,
                i,
            })?;
        }
        seq.end()
    }
}

impl Serialize for WireRequest<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("WireRequest", 3)?;
        st.serialize_field("id", &self.id)?;
        st.serialize_field("columns", &ColumnsSer(self.schema))?;
        st.serialize_field(
            "rows",
            &RowsSer {
                schema: self.schema,
                rows: self.rows,
            },
        )?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct WireResponse {
    #[serde(default)]
    pub id: Option<u64>,
    #[serde(default)]
    pub predictions: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

impl WireResponse {
    /// Checks the echoed id (when `require_id`, it must be present) and
    /// extracts the predictions.
    pub fn into_predictions(self, expected_id: u64, require_id: bool) -> std::result::Result<Vec<f64>, String> {
        match self.id {
            Some(id) if id != expected_id => {
                return Err(format!("reply id {id} does not match request id {expected_id}"))
            }
            None if require_id => return Err("reply carries no id".into()),
            _ => {}
        }
        if let Some(e) = self.error {
            return Err(format!("scorer reported: {e}"));
        }
        self.predictions.ok_or_else(|| "reply carries no predictions".into())
    }
}

pub fn encode_request(id: u64, schema: &Schema, rows: &Rows) -> Vec<u8> {
    serde_json::to_vec(&WireRequest { id, schema, rows }).expect("request serialization is infallible")
}

pub fn decode_response(bytes: &[u8]) -> std::result::Result<WireResponse, String> {
    serde_json::from_slice(bytes).map_err(|e| format!("malformed reply: {e}"))
}
