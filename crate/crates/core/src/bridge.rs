//! Line-delimited JSON protocol for serving next-token distributions from an
//! external process (child over stdio, or TCP).
//!
//! ```text
//! -> {"op":"hello","version":1,"vocab_hash":"<hex>"}
//! <- {"op":"hello","version":1,"vocab_size":<int>,"vocab_hash":"<hex>"}
//! -> {"op":"dist","source":[ids],"prefix":[ids]}
//! <- {"op":"dist","logprobs":[floats]}
//! -> {"op":"batch","requests":[{"source":[ids],"prefix":[ids]},...]}
//! <- {"op":"batch","logprobs":[[floats],...]}
//! <- {"op":"error","message":"<text>"}
//! ```
//!
//! Log-probabilities are natural logs; `null` encodes `-inf`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::models::{ConditionalLM, Conditioned, Dist, Scorer};
use crate::TokenId;

pub const PROTOCOL_VERSION: u32 = 1;
/// Responses within this distance of 1 are renormalized; beyond it they are rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
/// Responses this close to 1 are used exactly as sent.
pub const EXACT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    Version { ours: u32, theirs: u64 },
    #[error("vocabulary hash mismatch: expected {expected}, server has {actual}")]
    VocabHash { expected: String, actual: String },
    #[error("vocabulary size mismatch: expected {expected}, server has {actual}")]
    VocabSize { expected: usize, actual: u64 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("distribution sums to {0}, outside tolerance")]
    Normalization(f64),
    #[error("server error: {0}")]
    Server(String),
    #[error("session closed")]
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Spawn a child process and talk over its stdin/stdout.
    Command { program: String, args: Vec<String> },
    Tcp(String),
}

#[derive(Clone, Debug)]
pub struct BridgeEndpoint {
    pub transport: Transport,
    pub timeout: Duration,
    pub vocab_hash: String,
    pub vocab_size: usize,
}

#[derive(Serialize)]
struct HelloRequest<'a> {
    op: &'static str,
    version: u32,
    vocab_hash: &'a str,
}

#[derive(Serialize)]
struct HelloResponse<'a> {
    op: &'static str,
    version: u32,
    vocab_size: usize,
    vocab_hash: &'a str,
}

#[derive(Serialize, Deserialize)]
struct DistRequest<'a> {
    op: &'a str,
    source: Vec<TokenId>,
    prefix: Vec<TokenId>,
}

#[derive(Serialize)]
struct DistResponse<'a> {
    op: &'static str,
    logprobs: &'a [f64],
}

#[derive(Serialize, Deserialize)]
struct BatchItem {
    source: Vec<TokenId>,
    prefix: Vec<TokenId>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    op: &'static str,
    requests: &'a [BatchItem],
}

#[derive(Serialize)]
struct BatchResponse<'a> {
    op: &'static str,
    logprobs: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct ErrorMessage<'a> {
    op: &'static str,
    message: &'a str,
}

pub fn error_line(message: &str) -> String {
    serde_json::to_string(&ErrorMessage { op: "error", message }).expect("serializable")
}

pub struct Session {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    timeout: Duration,
    vocab_size: usize,
    closed: bool,
}

fn spawn_reader<R: io::Read + Send + 'static>(r: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let reader = BufReader::new(r);
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Session {
    /// Opens the transport without any protocol exchange.
    pub fn open(endpoint: &BridgeEndpoint) -> Result<Session, BridgeError> {
        let t = |e: io::Error| BridgeError::Transport(e.to_string());
        let mut tcp = None;
        let (writer, lines, child): (Box<dyn Write + Send>, _, _) = match &endpoint.transport {
            Transport::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(t)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), spawn_reader(stdout), Some(child))
            }
            Transport::Tcp(addr) => {
                let addr = addr
                    .to_socket_addrs()
                    .map_err(t)?
                    .next()
                    .ok_or_else(|| BridgeError::Transport(format!("cannot resolve {addr}")))?;
                let stream = TcpStream::connect_timeout(&addr, endpoint.timeout).map_err(t)?;
                stream.set_nodelay(true).ok();
                let read_half = stream.try_clone().map_err(t)?;
                tcp = Some(stream.try_clone().map_err(t)?);
                (Box::new(stream), spawn_reader(read_half), None)
            }
        };
        Ok(Session {
            writer,
            lines,
            child,
            tcp,
            timeout: endpoint.timeout,
            vocab_size: endpoint.vocab_size,
            closed: false,
        })
    }

    /// Opens the transport and performs the hello exchange.
    pub fn handshake(endpoint: &BridgeEndpoint) -> Result<Session, BridgeError> {
        let mut s = Session::open(endpoint)?;
        let req = serde_json::to_string(&HelloRequest {
            op: "hello",
            version: PROTOCOL_VERSION,
            vocab_hash: &endpoint.vocab_hash,
        })
        .expect("serializable");
        let resp = s.exchange(&req)?;
        let obj = s.expect_op(&resp, "hello")?;
        let version = obj
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| s.fail(BridgeError::Malformed("hello without version".into())))?;
        if version != PROTOCOL_VERSION as u64 {
            return Err(s.fail(BridgeError::Version {
                ours: PROTOCOL_VERSION,
                theirs: version,
            }));
        }
        let hash = obj.get("vocab_hash").and_then(Value::as_str).unwrap_or_default().to_owned();
        if hash != endpoint.vocab_hash {
            return Err(s.fail(BridgeError::VocabHash {
                expected: endpoint.vocab_hash.clone(),
                actual: hash,
            }));
        }
        let size = obj
            .get("vocab_size")
            .and_then(Value::as_u64)
            .ok_or_else(|| s.fail(BridgeError::Malformed("hello without vocab_size".into())))?;
        if size != endpoint.vocab_size as u64 {
            return Err(s.fail(BridgeError::VocabSize {
                expected: endpoint.vocab_size,
                actual: size,
            }));
        }
        Ok(s)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn fail(&mut self, e: BridgeError) -> BridgeError {
        self.close();
        e
    }

    pub fn close(&mut self) {
        self.closed = true;
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
        // the reader thread holds a clone, so dropping is not enough to hang up
        if let Some(t) = self.tcp.take() {
            let _ = t.shutdown(std::net::Shutdown::Both);
        }
    }

    /// Sends one raw line and returns the parsed response object.
    pub fn exchange(&mut self, line: &str) -> Result<Value, BridgeError> {
        if self.closed {
            return Err(BridgeError::Closed);
        }
        let sent = self
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush());
        if let Err(e) = sent {
            return Err(self.fail(BridgeError::Transport(e.to_string())));
        }
        let resp = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(self.fail(BridgeError::Transport(e.to_string()))),
            Err(RecvTimeoutError::Timeout) => return Err(self.fail(BridgeError::Timeout(self.timeout))),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail(BridgeError::Transport("connection closed".into())))
            }
        };
        serde_json::from_str(&resp).map_err(|e| self.fail(BridgeError::Malformed(e.to_string())))
    }

    fn expect_op<'v>(&mut self, v: &'v Value, op: &str) -> Result<&'v serde_json::Map<String, Value>, BridgeError> {
        let obj = v
            .as_object()
            .ok_or_else(|| self.fail(BridgeError::Malformed("response is not an object".into())))?;
        match obj.get("op").and_then(Value::as_str) {
            Some(o) if o == op => Ok(obj),
            Some("error") => {
                let msg = obj.get("message").and_then(Value::as_str).unwrap_or("").to_owned();
                Err(self.fail(BridgeError::Server(msg)))
            }
            other => Err(self.fail(BridgeError::Malformed(format!("expected op {op:?}, got {other:?}")))),
        }
    }

    fn parse_logprobs(&mut self, v: &Value) -> Result<Dist, BridgeError> {
        let arr = v
            .as_array()
            .ok_or_else(|| self.fail(BridgeError::Malformed("logprobs is not an array".into())))?;
        if arr.len() != self.vocab_size {
            return Err(self.fail(BridgeError::Malformed(format!(
                "{} logprobs for vocabulary of {}",
                arr.len(),
                self.vocab_size
            ))));
        }
        let mut logprobs = Vec::with_capacity(arr.len());
        for x in arr {
            let lp = match x {
                Value::Null => f64::NEG_INFINITY,
                Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
                _ => f64::NAN,
            };
            if lp.is_nan() || lp > 0.0 {
                return Err(self.fail(BridgeError::Malformed(format!("invalid log-probability {x}"))));
            }
            logprobs.push(lp);
        }
        let probs: Vec<f64> = logprobs.iter().map(|lp| lp.exp()).collect();
        let sum: f64 = probs.iter().sum();
        let gap = (sum - 1.0).abs();
        if gap > RENORMALIZE_TOLERANCE || !sum.is_finite() {
            return Err(self.fail(BridgeError::Normalization(sum)));
        }
        if gap <= EXACT_TOLERANCE {
            return Ok(Dist::from_parts(probs, logprobs));
        }
        let log_sum = sum.ln();
        Ok(Dist::from_parts(
            probs.iter().map(|p| p / sum).collect(),
            logprobs.iter().map(|lp| lp - log_sum).collect(),
        ))
    }

    pub fn request_dist(&mut self, source: &[TokenId], prefix: &[TokenId]) -> Result<Dist, BridgeError> {
        let req = serde_json::to_string(&DistRequest {
            op: "dist",
            source: source.to_vec(),
            prefix: prefix.to_vec(),
        })
        .expect("serializable");
        let resp = self.exchange(&req)?;
        let obj = self.expect_op(&resp, "dist")?;
        let lp = obj
            .get("logprobs")
            .cloned()
            .ok_or_else(|| self.fail(BridgeError::Malformed("dist without logprobs".into())))?;
        self.parse_logprobs(&lp)
    }

    /// Order-preserving batch; any missing or invalid entry fails the whole batch.
    pub fn request_batch(&mut self, requests: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Vec<Dist>, BridgeError> {
        let items: Vec<BatchItem> = requests
            .iter()
            .map(|(s, p)| BatchItem {
                source: s.clone(),
                prefix: p.clone(),
            })
            .collect();
        let req = serde_json::to_string(&BatchRequest {
            op: "batch",
            requests: &items,
        })
        .expect("serializable");
        let resp = self.exchange(&req)?;
        let obj = self.expect_op(&resp, "batch")?;
        let arr = obj
            .get("logprobs")
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| self.fail(BridgeError::Malformed("batch without logprobs".into())))?;
        if arr.len() != requests.len() {
            return Err(self.fail(BridgeError::Malformed(format!(
                "batch of {} answered with {}",
                requests.len(),
                arr.len()
            ))));
        }
        arr.iter().map(|v| self.parse_logprobs(v)).collect()
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

/// A [`ConditionalLM`] answered by a bridge session.
pub struct BridgeModel {
    session: Mutex<Session>,
    vocab_size: usize,
}

impl BridgeModel {
    pub fn connect(endpoint: &BridgeEndpoint) -> Result<Self, BridgeError> {
        let session = Session::handshake(endpoint)?;
        Ok(BridgeModel {
            vocab_size: session.vocab_size(),
            session: Mutex::new(session),
        })
    }
}

struct BridgeBound<'a> {
    model: &'a BridgeModel,
    source: Vec<TokenId>,
}

impl Conditioned for BridgeBound<'_> {
    fn next_dist(&self, prefix: &[TokenId]) -> crate::Result<Dist> {
        let mut s = self.model.session.lock().unwrap_or_else(|e| e.into_inner());
        Ok(s.request_dist(&self.source, prefix)?)
    }
}

impl ConditionalLM for BridgeModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> Option<usize> {
        None
    }

    fn condition<'a>(&'a self, source: &[TokenId]) -> crate::Result<Box<dyn Conditioned + 'a>> {
        Ok(Box::new(BridgeBound {
            model: self,
            source: source.to_vec(),
        }))
    }
}

fn handle_line(model: &dyn ConditionalLM, vocab_hash: &str, greeted: &mut bool, line: &str) -> String {
    let v: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_line(&format!("malformed request: {e}")),
    };
    let ids = |key: &str, obj: &Value| -> Result<Vec<TokenId>, String> {
        serde_json::from_value(obj.get(key).cloned().unwrap_or(Value::Null))
            .map_err(|_| format!("{key} must be an array of token ids"))
    };
    let dist = |src: &[TokenId], prefix: &[TokenId]| -> Result<Vec<f64>, String> {
        let limit = model.vocab_size();
        if let Some(bad) = src.iter().chain(prefix).find(|&&t| t as usize >= limit) {
            return Err(format!("token id {bad} out of range"));
        }
        let mut scorer = Scorer::new(model, src).map_err(|e| e.to_string())?;
        Ok(scorer.dist(prefix).map_err(|e| e.to_string())?.logprobs().to_vec())
    };
    match v.get("op").and_then(Value::as_str) {
        Some("hello") => {
            let version = v.get("version").and_then(Value::as_u64);
            if version != Some(PROTOCOL_VERSION as u64) {
                return error_line(&format!("unsupported protocol version {version:?}"));
            }
            if v.get("vocab_hash").and_then(Value::as_str) != Some(vocab_hash) {
                return error_line("vocabulary hash mismatch");
            }
            *greeted = true;
            serde_json::to_string(&HelloResponse {
                op: "hello",
                version: PROTOCOL_VERSION,
                vocab_size: model.vocab_size(),
                vocab_hash,
            })
            .expect("serializable")
        }
        Some(_) if !*greeted => error_line("handshake required"),
        Some("dist") => {
            let r = ids("source", &v).and_then(|s| ids("prefix", &v).and_then(|p| dist(&s, &p)));
            match r {
                Ok(lp) => serde_json::to_string(&DistResponse {
                    op: "dist",
                    logprobs: &lp,
                })
                .expect("serializable"),
                Err(e) => error_line(&e),
            }
        }
        Some("batch") => {
            let Some(reqs) = v.get("requests").and_then(Value::as_array) else {
                return error_line("batch without requests");
            };
            let mut out = Vec::with_capacity(reqs.len());
            for r in reqs {
                match ids("source", r).and_then(|s| ids("prefix", r).and_then(|p| dist(&s, &p))) {
                    Ok(lp) => out.push(lp),
                    Err(e) => return error_line(&e),
                }
            }
            serde_json::to_string(&BatchResponse {
                op: "batch",
                logprobs: &out,
            })
            .expect("serializable")
        }
        other => error_line(&format!("unknown op {other:?}")),
    }
}

/// Serves `model` on one line-oriented stream until EOF. Malformed requests
/// get an error reply and the session continues.
pub fn serve<R: BufRead, W: Write>(model: &dyn ConditionalLM, vocab_hash: &str, reader: R, mut writer: W) -> io::Result<()> {
    let mut greeted = false;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(model, vocab_hash, &mut greeted, &line);
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Conformance suite run by `serve-check` against a live endpoint.
pub fn conformance_check(endpoint: &BridgeEndpoint, requests: usize, seed: u64) -> Vec<CheckResult> {
    use rand::{Rng, SeedableRng};
    let mut results = Vec::new();
    let mut record = |name, r: Result<String, String>| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        results.push(CheckResult { name, passed, detail });
    };

    let mut session = match Session::handshake(endpoint) {
        Ok(s) => {
            record("handshake", Ok(format!("version {PROTOCOL_VERSION} accepted")));
            s
        }
        Err(e) => {
            record("handshake", Err(e.to_string()));
            return results;
        }
    };

    let mut wrong = endpoint.clone();
    wrong.vocab_hash = "0".repeat(64);
    record(
        "vocab-hash-mismatch",
        match Session::handshake(&wrong) {
            Err(BridgeError::Server(_)) | Err(BridgeError::VocabHash { .. }) => Ok("rejected".into()),
            Err(e) => Err(format!("unexpected error kind: {e}")),
            Ok(_) => Err("handshake with a wrong hash succeeded".into()),
        },
    );

    let v = endpoint.vocab_size as TokenId;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let random_ids = |rng: &mut rand_chacha::ChaCha8Rng, max: usize| -> Vec<TokenId> {
        let n = rng.random_range(0..=max);
        (0..n).map(|_| rng.random_range(1..v.max(2))).collect()
    };
    let reqs: Vec<(Vec<TokenId>, Vec<TokenId>)> = (0..requests.max(1))
        .map(|_| (random_ids(&mut rng, 8), random_ids(&mut rng, 8)))
        .collect();

    let mut singles = Vec::new();
    let norm = (|| {
        for (s, p) in &reqs {
            let d = session.request_dist(s, p).map_err(|e| e.to_string())?;
            let sum: f64 = d.probs.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
                return Err(format!("sum {sum}"));
            }
            singles.push(d);
        }
        Ok(format!("{} distributions normalized", reqs.len()))
    })();
    record("normalization", norm);

    record(
        "determinism",
        match session.request_dist(&reqs[0].0, &reqs[0].1) {
            Ok(d) if singles.first() == Some(&d) => Ok("repeated request identical".into()),
            Ok(_) => Err("repeated request differs".into()),
            Err(e) => Err(e.to_string()),
        },
    );

    let k = reqs.len().min(16);
    record(
        "batch-order",
        match session.request_batch(&reqs[..k]) {
            Ok(b) if singles.len() >= k && b == singles[..k] => Ok(format!("batch of {k} matches single requests")),
            Ok(_) => Err("batch differs from single requests".into()),
            Err(e) => Err(e.to_string()),
        },
    );

    let malformed = match session.exchange("{not json") {
        Ok(v) if v.get("op").and_then(Value::as_str) == Some("error") => match session.request_dist(&[], &[]) {
            Ok(_) => Ok("error reply, session continued".into()),
            Err(e) => Err(format!("session unusable after error: {e}")),
        },
        Ok(v) => Err(format!("expected error reply, got {v}")),
        Err(e) => Err(e.to_string()),
    };
    record("malformed-request", malformed);
    results
}
