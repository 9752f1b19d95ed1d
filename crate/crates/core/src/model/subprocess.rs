//! Scorer speaking newline-delimited JSON with a child process.
//!
//! The child is spawned once and kept for the lifetime of the scorer. Calls
//! are serialized over its stdin/stdout; a reader thread forwards reply lines
//! so that a silent child can be timed out.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::data::Schema;
use crate::error::{Error, Result};

use super::wire::{decode_response, encode_request};
use super::{Concurrency, Rows, Scorer};

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

pub struct SubprocessScorer {
    command: Vec<String>,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl SubprocessScorer {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("subprocess scorer needs a command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        log::debug!("spawned scorer `{}`", command.join(" "));
        Ok(Self {
            command: command.to_vec(),
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
        })
    }
}

impl Scorer for SubprocessScorer {
    fn score(&self, schema: &Schema, rows: &Rows, batch: usize) -> Result<Vec<f64>> {
        let fail = |message: String| Error::Scoring { batch, message };
        let mut ch = self.channel.lock().unwrap_or_else(|e| e.into_inner());
        let id = ch.next_id;
        ch.next_id += 1;
        let mut line = encode_request(id, schema, rows);
        line.push(b'\n');
        let stdin = ch
            .stdin
            .as_mut()
            .ok_or_else(|| fail("scorer input already closed".into()))?;
        stdin
            .write_all(&line)
            .and_then(|_| stdin.flush())
            .map_err(|e| fail(format!("writing to scorer `{}`: {e}", self.command.join(" "))))?;
        loop {
            let reply = match ch.lines.recv_timeout(self.timeout) {
                Ok(Ok(reply)) => reply,
                Ok(Err(e)) => return Err(fail(format!("reading from scorer: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(fail(format!("no reply within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let status = ch.child.try_wait().ok().flatten();
                    return Err(fail(format!("scorer exited ({status:?})")));
                }
            };
            if reply.trim().is_empty() {
                continue;
            }
            return decode_response(reply.as_bytes())
                .and_then(|r| r.into_predictions(id, true))
                .map_err(fail);
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Limited(1)
    }
}

impl Drop for SubprocessScorer {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|e| e.into_inner());
        // Closing stdin asks a well-behaved scorer to exit.
        ch.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = ch.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}
