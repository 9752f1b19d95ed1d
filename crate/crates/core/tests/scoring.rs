//! External scorer protocols against golden fixtures, a Python stdio scorer
//! and an in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_core::data::{load_dataset, Dataset, Schema};
use robust_core::model::wire::{decode_response, encode_request};
use robust_core::model::{GlmSpec, Model, Rows};
use robust_core::numeric::PerturbationBatch;
use robust_core::Error;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn schema() -> Schema {
    Schema::from_json_file(fixture("protocol/schema.json")).unwrap()
}

fn golden_rows() -> Dataset {
    load_dataset(fixture("protocol/rows.csv"), &schema(), None).unwrap()
}

fn glm_spec() -> GlmSpec {
    GlmSpec::from_json_file(fixture("protocol/glm.json")).unwrap()
}

fn rows_of(ds: &Dataset) -> Rows {
    Rows {
        numeric: ds.numeric().clone(),
        categorical: ds.categorical().clone(),
    }
}

fn random_rows(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = schema();
    let numeric = Array2::from_shape_fn((n, 3), |(_, j)| match j {
        0 => rng.random_range(10_000.0..500_000.0),
        1 => rng.random_range(21..75) as f64,
        _ => rng.random_range(0.0..20_000.0),
    });
    let categorical = Array2::from_shape_fn((n, 1), |_| rng.random_range(0..4u32));
    Dataset::new(s, numeric, categorical, None).unwrap()
}

fn python() -> Option<&'static str> {
    Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| "python3")
}

fn python_scorer(extra: &[&str]) -> Option<Vec<String>> {
    let py = python()?;
    let mut cmd = vec![
        py.to_string(),
        fixture("scorers/glm_scorer.py").display().to_string(),
        fixture("protocol/glm.json").display().to_string(),
    ];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    Some(cmd)
}

#[test]
fn golden_request_bytes() {
    let ds = golden_rows();
    let encoded = encode_request(0, ds.schema(), &rows_of(&ds));
    let golden = std::fs::read_to_string(fixture("protocol/request.ndjson")).unwrap();
    assert_eq!(String::from_utf8(encoded).unwrap(), golden.trim_end());
}

#[test]
fn golden_response_matches_builtin() {
    let golden = std::fs::read(fixture("protocol/response.ndjson")).unwrap();
    let preds = decode_response(&golden).unwrap().into_predictions(0, true).unwrap();
    let ds = golden_rows();
    let builtin = Model::glm("glm", &glm_spec(), ds.schema()).unwrap().predict(&ds).unwrap();
    assert_eq!(preds.len(), builtin.len());
    for (a, b) in preds.iter().zip(&builtin) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn responses_accept_scientific_notation_and_errors() {
    let r = decode_response(br#"{"id":3,"predictions":[1e-3,2.5E2,7]}"#).unwrap();
    assert_eq!(r.into_predictions(3, true).unwrap(), vec![0.001, 250.0, 7.0]);
    let r = decode_response(br#"{"id":3,"error":"boom"}"#).unwrap();
    assert!(r.into_predictions(3, true).unwrap_err().contains("boom"));
    let r = decode_response(br#"{"predictions":[1]}"#).unwrap();
    assert!(r.clone().into_predictions(0, true).is_err());
    assert!(r.into_predictions(0, false).is_ok());
    assert!(decode_response(b"{not json").is_err());
}

#[test]
fn subprocess_parity_with_builtin() {
    let Some(cmd) = python_scorer(&[]) else {
        eprintln!("python3 unavailable; skipping");
        return;
    };
    let ds = random_rows(10_000, 11);
    let ext = Model::subprocess("py", &cmd, Duration::from_secs(60)).unwrap();
    let builtin = Model::glm("glm", &glm_spec(), ds.schema()).unwrap();
    ext.check_deterministic(&ds).unwrap();
    let a = ext.predict(&ds).unwrap();
    let b = builtin.predict(&ds).unwrap();
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "max |diff| = {worst}");
}

#[test]
fn subprocess_perturbed_scoring_in_order() {
    let Some(cmd) = python_scorer(&[]) else {
        return;
    };
    let ds = random_rows(30, 5);
    let ext = Model::subprocess("py", &cmd, Duration::from_secs(60))
        .unwrap()
        .with_batch_size(7)
        .unwrap();
    let builtin = Model::glm("glm", &glm_spec(), ds.schema()).unwrap();
    let mut batch = PerturbationBatch::unperturbed(&ds, 5);
    batch.values.indexed_iter_mut().for_each(|((i, k, j), v)| {
        if j == 0 {
            *v += (i * 5 + k) as f64;
        }
    });
    let a = ext.predict_perturbed(&ds, Some(&batch), None).unwrap();
    let b = builtin.predict_perturbed(&ds, Some(&batch), None).unwrap();
    for (x, y) in a.perturbed.iter().zip(b.perturbed.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn stochastic_subprocess_rejected_by_probe() {
    let Some(cmd) = python_scorer(&["--stochastic"]) else {
        return;
    };
    let ds = random_rows(20, 1);
    let ext = Model::subprocess("noisy", &cmd, Duration::from_secs(60)).unwrap();
    assert!(matches!(ext.check_deterministic(&ds), Err(Error::NonDeterministic { .. })));
}

#[test]
fn subprocess_wrong_id_is_scoring_error() {
    let Some(cmd) = python_scorer(&["--wrong-id"]) else {
        return;
    };
    let ds = random_rows(3, 1);
    let ext = Model::subprocess("bad", &cmd, Duration::from_secs(60)).unwrap();
    match ext.predict(&ds) {
        Err(Error::Scoring { message, .. }) => assert!(message.contains("does not match")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dead_subprocess_is_fatal() {
    let Some(cmd) = python_scorer(&["--exit-after", "1"]) else {
        return;
    };
    let ds = random_rows(10, 1);
    let ext = Model::subprocess("dies", &cmd, Duration::from_secs(60))
        .unwrap()
        .with_batch_size(5)
        .unwrap();
    match ext.predict(&ds) {
        Err(Error::Scoring { batch, .. }) => assert_eq!(batch, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn silent_subprocess_times_out() {
    let cmd = vec!["sleep".to_string(), "30".to_string()];
    let ds = random_rows(2, 1);
    let ext = Model::subprocess("silent", &cmd, Duration::from_millis(300)).unwrap();
    match ext.predict(&ds) {
        Err(Error::Scoring { message, .. }) => assert!(message.contains("no reply")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_program_is_reported() {
    let cmd = vec!["/nonexistent/scorer-binary".to_string()];
    assert!(Model::subprocess("x", &cmd, Duration::from_secs(1)).is_err());
}

type Handler = dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync;

struct TestServer {
    url: String,
    requests: Arc<Mutex<Vec<usize>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Vec<u8>> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(body)
}

fn serve(handler: Arc<Handler>) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/predict", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            let log = log.clone();
            thread::spawn(move || {
                let Some(body) = read_request(&mut stream) else { return };
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                log.lock().unwrap().push(req["rows"].as_array().unwrap().len());
                let (status, reply) = handler(&req);
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    TestServer { url, requests }
}

/// Echoes the first column of every row as its prediction.
fn echo_handler() -> Arc<Handler> {
    Arc::new(|req: &serde_json::Value| {
        let preds: Vec<f64> = req["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r[0].as_f64().unwrap())
            .collect();
        (200, serde_json::json!({"id": req["id"], "predictions": preds}).to_string())
    })
}

#[test]
fn http_chunking_and_order() {
    let server = serve(echo_handler());
    let schema = Schema::new(vec![robust_core::data::ColumnSchema::continuous("x")]).unwrap();
    let ds = Dataset::new(
        schema,
        Array2::from_shape_fn((100, 1), |(i, _)| i as f64),
        Array2::zeros((100, 0)),
        None,
    )
    .unwrap();
    let model = Model::http("echo", &server.url, Duration::from_secs(30), 4)
        .unwrap()
        .with_batch_size(500)
        .unwrap();
    let mut batch = PerturbationBatch::unperturbed(&ds, 100);
    batch.values.indexed_iter_mut().for_each(|((i, k, _), v)| *v = (i * 100 + k) as f64);
    let p = model.predict_perturbed(&ds, Some(&batch), None).unwrap();
    let mut sizes = server.requests.lock().unwrap().clone();
    sizes.sort();
    // 100 originals in one call, then 10^4 replicates in 20 calls of 500.
    assert_eq!(sizes.len(), 21);
    assert_eq!(sizes.iter().filter(|&&s| s == 500).count(), 20);
    assert!(sizes.contains(&100));
    assert!(p.perturbed.iter().enumerate().all(|(r, &v)| v == r as f64));
    assert_eq!(p.original, (0..100).map(|i| i as f64).collect::<Vec<_>>());
}

#[test]
fn http_parity_with_builtin() {
    let ds = random_rows(2_000, 3);
    let glm = glm_spec().compile(ds.schema()).unwrap();
    let s = ds.schema().clone();
    let handler: Arc<Handler> = Arc::new(move |req: &serde_json::Value| {
        let preds: Vec<f64> = req["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let x = ndarray::arr1(&[r[0].as_f64().unwrap(), r[2].as_f64().unwrap(), r[3].as_f64().unwrap()]);
                let code = s.categorical(0).level_code(r[1].as_str().unwrap()).unwrap();
                glm.predict_row(x.view(), ndarray::arr1(&[code]).view())
            })
            .collect();
        (200, serde_json::json!({"id": req["id"], "predictions": preds}).to_string())
    });
    let server = serve(handler);
    let ext = Model::http("glm-http", &server.url, Duration::from_secs(30), 3)
        .unwrap()
        .with_batch_size(256)
        .unwrap();
    let builtin = Model::glm("glm", &glm_spec(), ds.schema()).unwrap();
    let a = ext.predict(&ds).unwrap();
    let b = builtin.predict(&ds).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn http_client_error_is_not_retried() {
    let server = serve(Arc::new(|_: &serde_json::Value| (400, "{}".to_string())));
    let ds = random_rows(4, 1);
    let ext = Model::http("bad", &server.url, Duration::from_secs(5), 1).unwrap();
    match ext.predict(&ds) {
        Err(Error::Scoring { batch, message }) => {
            assert_eq!(batch, 0);
            assert!(message.contains("400"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn http_server_error_retried_then_succeeds() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let echo = echo_handler();
    let server = serve(Arc::new(move |req: &serde_json::Value| {
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "{}".to_string())
        } else {
            echo(req)
        }
    }));
    let ds = random_rows(4, 1);
    let ext = Model::http("flaky", &server.url, Duration::from_secs(5), 1).unwrap();
    let preds = ext.predict(&ds).unwrap();
    assert_eq!(preds, ds.numeric().column(0).to_vec());
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn http_persistent_failure_gives_up_after_retries() {
    let server = serve(Arc::new(|_: &serde_json::Value| (500, "{}".to_string())));
    let ds = random_rows(4, 1);
    let ext = Model::http("down", &server.url, Duration::from_secs(5), 1).unwrap();
    assert!(matches!(ext.predict(&ds), Err(Error::Scoring { .. })));
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn http_length_mismatch_is_scoring_error() {
    let server = serve(Arc::new(|req: &serde_json::Value| {
        (200, serde_json::json!({"id": req["id"], "predictions": [1.0]}).to_string())
    }));
    let ds = random_rows(4, 1);
    let ext = Model::http("short", &server.url, Duration::from_secs(5), 1).unwrap();
    assert!(matches!(ext.predict(&ds), Err(Error::Scoring { .. })));
}
