//! Routing: query + a node's children -> probability distribution over the children.
//!
//! Three routers ship with the crate:
//!
//! * [`SimilarityRouter`]: softmax of cosine similarity over a temperature.
//! * [`PlantedOracle`]: knows which child holds the target and is right with a
//!   configurable accuracy. Used to measure search cost under controlled router quality.
//! * [`ExternalRouter`]: forwards the candidates to an external scorer over
//!   line-delimited JSON (a child process's stdio or a TCP socket).
//!
//! # External scorer protocol
//!
//! One request line per routing decision:
//!
//! ```text
//! {"request_id":7,"query":{"background":"...","motivation":"..."},"candidates":[{"id":"p1","title":"...","abstract":"..."}]}
//! ```
//!
//! and one reply line:
//!
//! ```text
//! {"request_id":7,"probs":[0.7,0.3]}
//! ```
//!
//! `probs` follow candidate order, must be non-negative and sum to one within 1e-9.
//! Invalid replies are rejected unless the router was configured to renormalise.

use std::borrow::Cow;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine, QueryContext};
use crate::util::{stream_rng, Fnv64};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("router: no candidates to route over")]
    EmptyCandidates,
    #[error("router: similarity routing needs a query embedding")]
    MissingEmbedding,
    #[error("router: candidate {id:?} cannot be compared with the query: {reason}")]
    Incomparable { id: String, reason: String },
    #[error("router: expected exactly one target flag, found {0}")]
    TargetFlags(usize),
    #[error("router: invalid configuration: {0}")]
    Config(String),
    #[error("router: invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("router: endpoint {endpoint} unreachable: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("router: external scorer timed out after {0:?}")]
    Timeout(Duration),
    #[error("router: malformed reply from external scorer: {0}")]
    Protocol(String),
}

/// A probability distribution aligned with a node's children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDistribution {
    probs: Vec<f64>,
}

impl RouterDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, RouterError> {
        if probs.is_empty() {
            return Err(RouterError::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(RouterError::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(RouterError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(RouterDistribution { probs })
    }

    /// Rescales non-negative finite weights to sum to one.
    pub fn renormalized(weights: Vec<f64>) -> Result<Self, RouterError> {
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(RouterError::InvalidDistribution("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(RouterError::InvalidDistribution("weights sum to zero".into()));
        }
        RouterDistribution::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        RouterDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// One child of the node being expanded, as seen by a router.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub id: Cow<'a, str>,
    /// Document embedding for documents, centroid for internal nodes.
    pub vector: &'a [f64],
    pub title: Cow<'a, str>,
    pub abstract_text: Cow<'a, str>,
    /// Whether the search target lies under (or is) this child. Only oracle routers read it.
    pub contains_target: bool,
}

pub trait Router: Send + Sync {
    fn route(&self, query: &QueryContext, candidates: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError>;

    /// Whether candidates need titles and abstracts filled in.
    fn wants_text(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Similarity,
    PlantedOracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub kind: RouterKind,
    pub temperature: f64,
    pub alpha: f64,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub timeout_ms: u64,
    /// Diagnostic: rescale external replies instead of rejecting them.
    pub renormalize: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            kind: RouterKind::Similarity,
            temperature: DEFAULT_TEMPERATURE,
            alpha: 1.0,
            endpoint: None,
            seed: 0,
            timeout_ms: DEFAULT_TIMEOUT.as_millis() as u64,
            renormalize: false,
        }
    }
}

impl RouterConfig {
    pub fn similarity(temperature: f64) -> Self {
        RouterConfig {
            kind: RouterKind::Similarity,
            temperature,
            ..Default::default()
        }
    }

    pub fn planted(alpha: f64, seed: u64) -> Self {
        RouterConfig {
            kind: RouterKind::PlantedOracle,
            alpha,
            seed,
            ..Default::default()
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        RouterConfig {
            kind: RouterKind::External,
            endpoint: Some(endpoint.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RouterError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(RouterError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RouterError::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.kind == RouterKind::External && self.endpoint.is_none() {
            return Err(RouterError::Config("external router needs an endpoint".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Router>, RouterError> {
        self.validate()?;
        Ok(match self.kind {
            RouterKind::Similarity => Box::new(SimilarityRouter::new(self.temperature)?),
            RouterKind::PlantedOracle => Box::new(PlantedOracle::new(self.alpha, self.seed)?),
            RouterKind::External => {
                let endpoint = self.endpoint.as_deref().expect("validated");
                let mut r = ExternalRouter::connect(endpoint, Duration::from_millis(self.timeout_ms))?;
                r.renormalize = self.renormalize;
                Box::new(r)
            }
        })
    }
}

/// `softmax(cos(query, child) / temperature)`.
#[derive(Debug, Clone)]
pub struct SimilarityRouter {
    temperature: f64,
}

impl SimilarityRouter {
    pub fn new(temperature: f64) -> Result<Self, RouterError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(RouterError::Config(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(SimilarityRouter { temperature })
    }
}

impl Router for SimilarityRouter {
    fn route(&self, query: &QueryContext, candidates: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError> {
        if candidates.is_empty() {
            return Err(RouterError::EmptyCandidates);
        }
        let q = query.query_embedding.as_deref().ok_or(RouterError::MissingEmbedding)?;
        let scores = candidates
            .iter()
            .map(|c| {
                cosine(q, c.vector).map_err(|e| RouterError::Incomparable {
                    id: c.id.to_string(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(softmax(&scores, self.temperature))
    }
}

pub fn softmax(scores: &[f64], temperature: f64) -> RouterDistribution {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    RouterDistribution {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    }
}

/// Target child gets `alpha + (1 - alpha) / n`, every other child `(1 - alpha) / n`.
pub fn planted_mass(child_contains_target: &[bool], alpha: f64) -> Result<RouterDistribution, RouterError> {
    let hits = child_contains_target.iter().filter(|&&b| b).count();
    if hits != 1 {
        return Err(RouterError::TargetFlags(hits));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RouterError::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let n = child_contains_target.len() as f64;
    let base = (1.0 - alpha) / n;
    Ok(RouterDistribution {
        probs: child_contains_target
            .iter()
            .map(|&t| if t { alpha + base } else { base })
            .collect(),
    })
}

/// An oracle router with accuracy `alpha`.
///
/// Each call commits to one favoured child: the child holding the target with
/// probability `alpha`, otherwise a uniformly random child (which may still be the
/// right one). The reply is [`planted_mass`] centred on the favoured child. When no
/// child holds the target the favoured child is uniformly random. With `alpha = 1`
/// the router is ideal; with `alpha = 0` it is uniform.
///
/// The per-call randomness is derived from the seed, the query background and the
/// candidate ids, so the router holds no mutable state.
#[derive(Debug, Clone)]
pub struct PlantedOracle {
    alpha: f64,
    seed: u64,
}

impl PlantedOracle {
    pub fn new(alpha: f64, seed: u64) -> Result<Self, RouterError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(RouterError::Config(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(PlantedOracle { alpha, seed })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Router for PlantedOracle {
    fn route(&self, query: &QueryContext, candidates: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError> {
        if candidates.is_empty() {
            return Err(RouterError::EmptyCandidates);
        }
        let flagged: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].contains_target).collect();
        if flagged.len() > 1 {
            return Err(RouterError::TargetFlags(flagged.len()));
        }
        let n = candidates.len();
        let favoured = if self.alpha >= 1.0 && !flagged.is_empty() {
            flagged[0]
        } else {
            let mut h = Fnv64::new();
            h.write(query.background.as_bytes());
            for c in candidates {
                h.write(c.id.as_bytes());
                h.write(&[0]);
            }
            let mut rng = stream_rng(self.seed, h.finish());
            match flagged.first() {
                Some(&t) if rng.gen::<f64>() < self.alpha => t,
                _ => rng.gen_range(0..n),
            }
        };
        let mut flags = vec![false; n];
        flags[favoured] = true;
        planted_mass(&flags, self.alpha)
    }
}

#[derive(Serialize)]
struct WireQuery<'a> {
    background: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    motivation: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intermediate_hypothesis: Option<&'a str>,
}

#[derive(Serialize)]
struct WireCandidate<'a> {
    id: &'a str,
    title: &'a str,
    #[serde(rename = "abstract")]
    abstract_text: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    request_id: u64,
    query: WireQuery<'a>,
    candidates: Vec<WireCandidate<'a>>,
}

#[derive(Deserialize)]
struct WireReply {
    request_id: u64,
    probs: Vec<f64>,
}

enum Transport {
    Process {
        child: Child,
        stdin: ChildStdin,
        lines: Receiver<std::io::Result<String>>,
    },
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
}

impl Drop for Transport {
    fn drop(&mut self) {
        if let Transport::Process { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Routes through an external scorer.
///
/// Endpoints are `tcp://HOST:PORT` or `exec:COMMAND` (run through `sh -c`, talking
/// over its stdin/stdout). Calls through one router are serialised on the connection;
/// replies are matched to requests by id.
pub struct ExternalRouter {
    endpoint: String,
    transport: Mutex<Transport>,
    timeout: Duration,
    next_id: AtomicU64,
    pub renormalize: bool,
}

impl ExternalRouter {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, RouterError> {
        let unreachable = |reason: String| RouterError::Unreachable {
            endpoint: endpoint.to_string(),
            reason,
        };
        let transport = if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(|e| unreachable(e.to_string()))?;
            stream
                .set_read_timeout(Some(timeout))
                .map_err(|e| unreachable(e.to_string()))?;
            let writer = stream.try_clone().map_err(|e| unreachable(e.to_string()))?;
            Transport::Tcp {
                reader: BufReader::new(stream),
                writer,
            }
        } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(cmd)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| unreachable(e.to_string()))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            Transport::Process { child, stdin, lines: rx }
        } else {
            return Err(RouterError::Config(format!(
                "endpoint {endpoint:?} must start with tcp:// or exec:"
            )));
        };
        Ok(ExternalRouter {
            endpoint: endpoint.to_string(),
            transport: Mutex::new(transport),
            timeout,
            next_id: AtomicU64::new(1),
            renormalize: false,
        })
    }

    fn exchange(&self, request: &str) -> Result<String, RouterError> {
        let lost = |reason: String| RouterError::Unreachable {
            endpoint: self.endpoint.clone(),
            reason,
        };
        let mut transport = self.transport.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *transport {
            Transport::Process { stdin, lines, .. } => {
                writeln!(stdin, "{request}")
                    .and_then(|_| stdin.flush())
                    .map_err(|e| lost(e.to_string()))?;
                match lines.recv_timeout(self.timeout) {
                    Ok(Ok(line)) => Ok(line),
                    Ok(Err(e)) => Err(lost(e.to_string())),
                    Err(RecvTimeoutError::Timeout) => Err(RouterError::Timeout(self.timeout)),
                    Err(RecvTimeoutError::Disconnected) => Err(lost("scorer exited".into())),
                }
            }
            Transport::Tcp { reader, writer } => {
                writeln!(writer, "{request}")
                    .and_then(|_| writer.flush())
                    .map_err(|e| lost(e.to_string()))?;
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => Err(lost("connection closed".into())),
                    Ok(_) => Ok(line),
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                        Err(RouterError::Timeout(self.timeout))
                    }
                    Err(e) => Err(lost(e.to_string())),
                }
            }
        }
    }
}

impl Router for ExternalRouter {
    fn route(&self, query: &QueryContext, candidates: &[Candidate<'_>]) -> Result<RouterDistribution, RouterError> {
        if candidates.is_empty() {
            return Err(RouterError::EmptyCandidates);
        }
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = WireRequest {
            request_id,
            query: WireQuery {
                background: &query.background,
                motivation: query.motivation.as_deref(),
                intermediate_hypothesis: query.intermediate_hypothesis.as_deref(),
            },
            candidates: candidates
                .iter()
                .map(|c| WireCandidate {
                    id: &c.id,
                    title: &c.title,
                    abstract_text: &c.abstract_text,
                })
                .collect(),
        };
        let line = self.exchange(&serde_json::to_string(&req).expect("request serialises"))?;
        let reply: WireReply =
            serde_json::from_str(line.trim()).map_err(|e| RouterError::Protocol(e.to_string()))?;
        if reply.request_id != request_id {
            return Err(RouterError::Protocol(format!(
                "reply for request {} while waiting for {request_id}",
                reply.request_id
            )));
        }
        if reply.probs.len() != candidates.len() {
            return Err(RouterError::Protocol(format!(
                "{} probabilities for {} candidates",
                reply.probs.len(),
                candidates.len()
            )));
        }
        if self.renormalize {
            RouterDistribution::renormalized(reply.probs)
        } else {
            RouterDistribution::new(reply.probs)
        }
    }

    fn wants_text(&self) -> bool {
        true
    }
}
