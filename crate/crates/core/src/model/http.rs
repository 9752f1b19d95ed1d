//! Scorer posting JSON batches to an HTTP endpoint.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::CONTENT_TYPE;
use reqwest::StatusCode;

use crate::data::Schema;
use crate::error::{Error, Result};

use super::wire::{decode_response, encode_request};
use super::{Concurrency, Rows, Scorer};

const RETRIES: u32 = 2;
const BACKOFF: Duration = Duration::from_millis(100);

pub struct HttpScorer {
    url: String,
    client: Client,
    max_in_flight: usize,
}

impl HttpScorer {
    /// `url` is the full endpoint, e.g. `http://127.0.0.1:8080/predict`.
    pub fn new(url: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("HTTP client: {e}")))?;
        Ok(Self {
            url: url.into(),
            client,
            max_in_flight: max_in_flight.max(1),
        })
    }

    fn attempt(&self, body: &[u8], id: u64) -> std::result::Result<Vec<f64>, (bool, String)> {
        let resp = self
            .client
            .post(&self.url)
            .header(CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send()
            .map_err(|e| (true, format!("request to {} failed: {e}", self.url)))?;
        let status = resp.status();
        if status != StatusCode::OK {
            return Err((status.is_server_error(), format!("{} answered {status}", self.url)));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| (true, format!("reading reply from {}: {e}", self.url)))?;
        decode_response(&bytes)
            .and_then(|r| r.into_predictions(id, false))
            .map_err(|m| (false, m))
    }
}

impl Scorer for HttpScorer {
    fn score(&self, schema: &Schema, rows: &Rows, batch: usize) -> Result<Vec<f64>> {
        let id = batch as u64;
        let body = encode_request(id, schema, rows);
        let mut delay = BACKOFF;
        let mut attempt = 0;
        loop {
            match self.attempt(&body, id) {
                Ok(p) => return Ok(p),
                Err((retry, message)) if retry && attempt < RETRIES => {
                    log::warn!("batch {batch}: {message}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err((_, message)) => return Err(Error::Scoring { batch, message }),
            }
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Limited(self.max_in_flight)
    }
}
