//! Client for an external oracle server speaking newline-delimited JSON over
//! the child's stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendKind, Classifier, OracleError, OracleHandle};
use crate::tensor_io::{PredictionVector, VideoClip};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: Option<String>,
}

impl Connection {
    fn exit_status(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => status.to_string(),
            _ => "stdout closed".to_string(),
        }
    }

    fn fail(&mut self, reason: String) -> OracleError {
        self.dead = Some(reason.clone());
        OracleError::Died(reason)
    }

    /// Send one request and wait for the response carrying the same id.
    fn request(&mut self, mut msg: Value, timeout: Duration) -> Result<Value, OracleError> {
        if let Some(reason) = &self.dead {
            return Err(OracleError::Died(reason.clone()));
        }
        let id = self.next_id;
        self.next_id += 1;
        msg["id"] = json!(id);
        let mut line = msg.to_string();
        line.push('\n');
        if let Err(e) = self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()) {
            let status = self.exit_status();
            return Err(self.fail(format!("{status}; write failed: {e}")));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let text = match self.lines.recv_timeout(left) {
                Ok(Ok(text)) => text,
                Ok(Err(e)) => {
                    let status = self.exit_status();
                    return Err(self.fail(format!("{status}; read failed: {e}")));
                }
                Err(RecvTimeoutError::Timeout) => return Err(OracleError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let _ = self.child.wait();
                    let status = self.exit_status();
                    return Err(self.fail(status));
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| OracleError::Protocol(format!("invalid JSON line {text:?}: {e}")))?;
            match value.get("id").and_then(Value::as_u64) {
                Some(got) if got == id => {}
                // Late answer to a request that already timed out.
                Some(got) if got < id => continue,
                _ => return Err(OracleError::Protocol(format!("unexpected response id in {text:?}"))),
            }
            if value.get("type").and_then(Value::as_str) == Some("error") {
                let message = value.get("message").and_then(Value::as_str).unwrap_or("unspecified");
                return Err(OracleError::Remote(message.to_string()));
            }
            return Ok(value);
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Out-of-process classifier. Requests from concurrent callers are serialized.
pub struct SubprocessClassifier {
    conn: Mutex<Connection>,
    dims: [usize; 4],
    num_classes: usize,
    timeout: Duration,
}

impl std::fmt::Debug for SubprocessClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessClassifier")
            .field("dims", &self.dims)
            .field("num_classes", &self.num_classes)
            .field("timeout", &self.timeout)
            .finish()
    }
}

fn expect_type(value: &Value, ty: &str) -> Result<(), OracleError> {
    match value.get("type").and_then(Value::as_str) {
        Some(t) if t == ty => Ok(()),
        other => Err(OracleError::Protocol(format!("expected type {ty:?}, got {other:?}"))),
    }
}

impl SubprocessClassifier {
    /// Spawn `program args..`, perform the hello handshake and, when given,
    /// check the reported dims against `expected_dims`.
    pub fn spawn(
        program: &str,
        args: &[String],
        expected_dims: Option<[usize; 4]>,
        timeout: Duration,
    ) -> Result<Self, OracleError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(OracleError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Connection {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            dead: None,
        };
        let hello = conn
            .request(json!({"type": "hello"}), timeout)
            .map_err(|e| OracleError::Handshake(e.to_string()))?;
        expect_type(&hello, "hello").map_err(|e| OracleError::Handshake(e.to_string()))?;
        let num_classes = hello
            .get("K")
            .and_then(Value::as_u64)
            .filter(|&k| k >= 2)
            .ok_or_else(|| OracleError::Handshake(format!("missing or invalid K in {hello}")))?
            as usize;
        let dims: Vec<usize> = hello
            .get("dims")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|d| d as usize).collect())
            .unwrap_or_default();
        let dims: [usize; 4] = dims
            .try_into()
            .ok()
            .filter(|d: &[usize; 4]| d.iter().all(|&x| x > 0))
            .ok_or_else(|| OracleError::Handshake(format!("missing or invalid dims in {hello}")))?;
        if let Some(expected) = expected_dims {
            if expected != dims {
                return Err(OracleError::Handshake(format!(
                    "server dims {dims:?} differ from expected {expected:?}"
                )));
            }
        }
        Ok(Self {
            conn: Mutex::new(conn),
            dims,
            num_classes,
            timeout,
        })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn request(&self, msg: Value) -> Result<Value, OracleError> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        conn.request(msg, self.timeout)
    }

    fn payload(&self, clip: &VideoClip) -> Value {
        json!({
            "dims": clip.dims(),
            "data_b64": base64::engine::general_purpose::STANDARD.encode(clip.pixels()),
        })
    }
}

impl Classifier for SubprocessClassifier {
    fn dims(&self) -> [usize; 4] {
        self.dims
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn classify(&self, clip: &VideoClip) -> Result<PredictionVector, OracleError> {
        let mut msg = self.payload(clip);
        msg["type"] = json!("predict");
        let reply = self.request(msg)?;
        expect_type(&reply, "prediction")?;
        let probs: Vec<f64> = reply
            .get("probs")
            .and_then(Value::as_array)
            .ok_or_else(|| OracleError::Protocol("prediction without probs".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| OracleError::Protocol(format!("non-numeric prob {v}"))))
            .collect::<Result<_, _>>()?;
        if probs.len() != self.num_classes {
            return Err(OracleError::Protocol(format!(
                "expected {} probs, got {}",
                self.num_classes,
                probs.len()
            )));
        }
        PredictionVector::new(probs).map_err(|e| OracleError::Protocol(e.to_string()))
    }

    fn caption(&self, clip: &VideoClip) -> Result<String, OracleError> {
        let mut msg = self.payload(clip);
        msg["type"] = json!("caption");
        let reply = self.request(msg)?;
        expect_type(&reply, "caption")?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| OracleError::Protocol("caption without text".into()))
    }
}

/// Spawn a shell-style command line as an oracle server.
pub fn subprocess_oracle(
    command: &str,
    expected_dims: Option<[usize; 4]>,
    timeout: Duration,
) -> Result<OracleHandle, OracleError> {
    let words = shell_words::split(command).map_err(|e| OracleError::Spawn(std::io::Error::other(e)))?;
    let (program, args) = words
        .split_first()
        .ok_or_else(|| OracleError::Spawn(std::io::Error::other("empty oracle command")))?;
    let classifier = SubprocessClassifier::spawn(program, args, expected_dims, timeout)?;
    Ok(OracleHandle::new(Arc::new(classifier), BackendKind::Subprocess))
}
