//! The single writer that owns the label store and assignment state, and the
//! cloneable handle request handlers talk to it through.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use layoutpref::graph::Graph;
use layoutpref::labels::{
    percentile, progress_message, Assignment, AssignmentState, LabelRecord, LabelStore, StoreStats,
};
use layoutpref::layout::{layout_all, normalize_or_center, render, Algorithm, LayoutSet, RenderParams};
use layoutpref::rng::{self, Domain, StreamRng};

use crate::token::{DisplayClaims, TokenSigner};
use crate::ServiceError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Returns `start`, `start + step`, `start + 2 step`, ... on successive calls.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step: TimeDelta,
    ticks: AtomicI64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: TimeDelta) -> Self {
        Self {
            start,
            step,
            ticks: AtomicI64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let k = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + self.step * k as i32
    }
}

/// Graphs with validated eight-layout sets. Graphs whose layouts cannot be
/// computed are left out.
#[derive(Debug, Default)]
pub struct ServiceCorpus {
    graphs: BTreeMap<String, (Graph, LayoutSet)>,
    pub layout_seed: u64,
}

impl ServiceCorpus {
    pub fn build(graphs: impl IntoIterator<Item = Graph>, layout_seed: u64) -> Self {
        let mut out = Self {
            graphs: BTreeMap::new(),
            layout_seed,
        };
        for g in graphs {
            match layout_all(&g, layout_seed) {
                Ok(set) => {
                    out.graphs.insert(g.id().to_string(), (g, set));
                }
                Err(e) => log::warn!("leaving graph {} out of the service corpus: {e}", g.id()),
            }
        }
        out
    }

    pub fn from_sets(sets: impl IntoIterator<Item = (Graph, LayoutSet)>, layout_seed: u64) -> Self {
        Self {
            graphs: sets.into_iter().map(|(g, s)| (g.id().to_string(), (g, s))).collect(),
            layout_seed,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.graphs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<(&Graph, &LayoutSet)> {
        self.graphs.get(id).map(|(g, s)| (g, s))
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// JSON-lines label file; loaded at start and appended on every label.
    pub store_path: Option<PathBuf>,
    /// Directory for rendered PNGs.
    pub cache_dir: Option<PathBuf>,
    pub secret: Vec<u8>,
    pub seed: u64,
    pub resurface_probability: f64,
    pub render: RenderParams,
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            store_path: None,
            cache_dir: None,
            secret: Vec::new(),
            seed: 0,
            resurface_probability: AssignmentState::DEFAULT_RESURFACE,
            render: RenderParams::default(),
            queue_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub labeled: usize,
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub graph_id: String,
    /// Image URLs in display order.
    pub images: Vec<String>,
    pub display_token: String,
    pub from_skip_queue: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub annotator: String,
    pub graph_id: String,
    /// 1-based grid position.
    pub position: usize,
    pub duration_ms: u64,
    #[serde(default)]
    pub hard: bool,
    pub display_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub ok: bool,
    pub labeled: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRequest {
    pub annotator: String,
    pub graph_id: String,
    pub display_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipAck {
    pub ok: bool,
    pub queued: usize,
}

type Reply<T> = oneshot::Sender<Result<T, ServiceError>>;

enum Command {
    Next { annotator: String, reply: Reply<Option<TaskPayload>> },
    Label { req: LabelRequest, reply: Reply<LabelAck> },
    Skip { req: SkipRequest, reply: Reply<SkipAck> },
    Stats { reply: Reply<StoreStats> },
    Snapshot { reply: Reply<LabelStore> },
}

struct Writer {
    store: LabelStore,
    assignment: AssignmentState,
    signer: TokenSigner,
    clock: Arc<dyn Clock>,
    corpus: Arc<ServiceCorpus>,
    store_file: Option<File>,
    order_rng: StreamRng,
    serial: u64,
}

impl Writer {
    fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Next { annotator, reply } => {
                    let _ = reply.send(self.next(&annotator));
                }
                Command::Label { req, reply } => {
                    let _ = reply.send(self.label(req));
                }
                Command::Skip { req, reply } => {
                    let _ = reply.send(self.skip(req));
                }
                Command::Stats { reply } => {
                    let _ = reply.send(Ok(self.store.stats()));
                }
                Command::Snapshot { reply } => {
                    let _ = reply.send(Ok(self.store.clone()));
                }
            }
        }
    }

    fn progress(&self, annotator: &str) -> Progress {
        Progress {
            labeled: self.store.count_by(annotator),
            percentile: percentile(&self.store, annotator),
        }
    }

    fn next(&mut self, annotator: &str) -> Result<Option<TaskPayload>, ServiceError> {
        if annotator.is_empty() {
            return Err(ServiceError::MissingAnnotator);
        }
        let (graph_id, from_skip_queue) = match self.assignment.next_assignment(&self.store, annotator) {
            Assignment::Exhausted => return Ok(None),
            Assignment::Graph {
                graph_id,
                from_skip_queue,
            } => (graph_id, from_skip_queue),
        };
        let mut order = [0, 1, 2, 3, 4, 5, 6, 7];
        order.shuffle(&mut self.order_rng);
        self.serial += 1;
        let token = self.signer.sign(&DisplayClaims {
            graph_id: graph_id.clone(),
            annotator: annotator.to_string(),
            display_order: order,
            serial: self.serial,
        });
        Ok(Some(TaskPayload {
            images: (1..=8)
                .map(|k| format!("/api/image?token={token}&position={k}"))
                .collect(),
            graph_id,
            display_token: token,
            from_skip_queue,
            progress: self.progress(annotator),
        }))
    }

    fn claims(&self, token: &str, annotator: &str, graph_id: &str) -> Result<DisplayClaims, ServiceError> {
        if annotator.is_empty() {
            return Err(ServiceError::MissingAnnotator);
        }
        let claims = self.signer.verify(token).ok_or(ServiceError::BadToken)?;
        if claims.graph_id != graph_id || claims.annotator != annotator {
            return Err(ServiceError::TokenMismatch);
        }
        if self.corpus.get(graph_id).is_none() {
            return Err(ServiceError::UnknownGraph(graph_id.to_string()));
        }
        Ok(claims)
    }

    fn label(&mut self, req: LabelRequest) -> Result<LabelAck, ServiceError> {
        let claims = self.claims(&req.display_token, &req.annotator, &req.graph_id)?;
        if !(1..=8).contains(&req.position) {
            return Err(ServiceError::BadPosition(req.position));
        }
        if self.store.has_label(&req.graph_id, &req.annotator) {
            return Err(ServiceError::AlreadyLabeled {
                annotator: req.annotator,
                graph_id: req.graph_id,
            });
        }
        let choice = Algorithm::from_index(claims.display_order[req.position - 1]).expect("verified permutation");
        let rec = LabelRecord {
            graph_id: req.graph_id,
            annotator_id: req.annotator,
            choice,
            display_order: claims.display_order,
            duration_ms: req.duration_ms,
            hard: req.hard,
            timestamp: self.clock.now(),
        };
        if let Some(f) = &mut self.store_file {
            writeln!(f, "{}", rec.to_json_line()).and_then(|_| f.flush()).map_err(|e| ServiceError::Io(e.to_string()))?;
        }
        self.assignment.record_label(&rec.annotator_id, &rec.graph_id);
        let annotator = rec.annotator_id.clone();
        self.store.insert(rec);
        Ok(LabelAck {
            ok: true,
            labeled: self.store.count_by(&annotator),
            message: progress_message(&self.store, &annotator),
        })
    }

    fn skip(&mut self, req: SkipRequest) -> Result<SkipAck, ServiceError> {
        self.claims(&req.display_token, &req.annotator, &req.graph_id)?;
        self.assignment
            .record_skip(&self.store, &req.annotator, &req.graph_id)
            .map_err(|_| ServiceError::AlreadyLabeled {
                annotator: req.annotator.clone(),
                graph_id: req.graph_id.clone(),
            })?;
        Ok(SkipAck {
            ok: true,
            queued: self.assignment.skip_queue(&req.annotator).len(),
        })
    }
}

/// Rendered PNGs on disk, keyed by graph, algorithm, layout seed and render
/// parameters.
#[derive(Debug, Clone)]
pub struct RasterCache {
    dir: Option<PathBuf>,
    params: RenderParams,
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

impl RasterCache {
    pub fn new(dir: Option<PathBuf>, params: RenderParams) -> Self {
        Self { dir, params }
    }

    pub fn path_for(&self, graph_id: &str, algorithm: Algorithm, layout_seed: u64) -> Option<PathBuf> {
        let p = &self.params;
        self.dir.as_ref().map(|d| {
            d.join(format!(
                "{}_{}_{layout_seed}_{}_{}_{}.png",
                file_safe(graph_id),
                algorithm.tag(),
                p.size,
                p.node_radius,
                p.edge_width
            ))
        })
    }

    pub fn png(&self, corpus: &ServiceCorpus, graph_id: &str, algorithm: Algorithm) -> Result<Vec<u8>, ServiceError> {
        let path = self.path_for(graph_id, algorithm, corpus.layout_seed);
        if let Some(p) = &path {
            if let Ok(bytes) = std::fs::read(p) {
                return Ok(bytes);
            }
        }
        let (g, set) = corpus
            .get(graph_id)
            .ok_or_else(|| ServiceError::UnknownGraph(graph_id.to_string()))?;
        let img = render(g, &normalize_or_center(set.get(algorithm)), &self.params).map_err(|e| ServiceError::Render(e.to_string()))?;
        let bytes = img.to_png();
        if let Some(p) = &path {
            write_atomic(p, &bytes).map_err(|e| ServiceError::Io(e.to_string()))?;
        }
        Ok(bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

/// Cloneable front end of the writer thread.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Command>,
    corpus: Arc<ServiceCorpus>,
    signer: TokenSigner,
    cache: RasterCache,
}

impl ServiceHandle {
    /// Loads the store file (if any) and starts the writer thread.
    pub fn start(corpus: ServiceCorpus, config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let (store, store_file) = match &config.store_path {
            Some(path) => {
                let store = if path.exists() {
                    let f = File::open(path).map_err(|e| ServiceError::Io(e.to_string()))?;
                    let (store, warnings) =
                        LabelStore::ingest(BufReader::new(f)).map_err(|e| ServiceError::Io(e.to_string()))?;
                    for w in warnings {
                        log::warn!("{w}");
                    }
                    store
                } else {
                    LabelStore::new()
                };
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ServiceError::Io(e.to_string()))?;
                (store, Some(f))
            }
            None => (LabelStore::new(), None),
        };
        let corpus = Arc::new(corpus);
        let signer = TokenSigner::new(config.secret.clone());
        let writer = Writer {
            store,
            assignment: AssignmentState::with_probability(
                corpus.ids().map(str::to_string),
                config.seed,
                config.resurface_probability,
            ),
            signer: signer.clone(),
            clock,
            corpus: Arc::clone(&corpus),
            store_file,
            order_rng: rng::stream(config.seed, Domain::DisplayOrder, 1),
            serial: 0,
        };
        let (tx, rx) = mpsc::channel(config.queue_capacity.max(1));
        std::thread::Builder::new()
            .name("label-writer".into())
            .spawn(move || writer.run(rx))
            .map_err(|e| ServiceError::Io(e.to_string()))?;
        Ok(Self {
            tx,
            corpus,
            signer,
            cache: RasterCache::new(config.cache_dir, config.render),
        })
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| ServiceError::Unavailable)?;
        rx.await.map_err(|_| ServiceError::Unavailable)?
    }

    pub async fn next(&self, annotator: &str) -> Result<Option<TaskPayload>, ServiceError> {
        let annotator = annotator.to_string();
        self.call(|reply| Command::Next { annotator, reply }).await
    }

    pub async fn label(&self, req: LabelRequest) -> Result<LabelAck, ServiceError> {
        self.call(|reply| Command::Label { req, reply }).await
    }

    pub async fn skip(&self, req: SkipRequest) -> Result<SkipAck, ServiceError> {
        self.call(|reply| Command::Skip { req, reply }).await
    }

    pub async fn stats(&self) -> Result<StoreStats, ServiceError> {
        self.call(|reply| Command::Stats { reply }).await
    }

    /// A copy of the store as of now.
    pub async fn snapshot(&self) -> Result<LabelStore, ServiceError> {
        self.call(|reply| Command::Snapshot { reply }).await
    }

    /// PNG for a 1-based position of a served task.
    pub async fn image(&self, token: &str, position: usize) -> Result<Vec<u8>, ServiceError> {
        let claims = self.signer.verify(token).ok_or(ServiceError::BadToken)?;
        if !(1..=8).contains(&position) {
            return Err(ServiceError::BadPosition(position));
        }
        let alg = Algorithm::from_index(claims.display_order[position - 1]).expect("verified permutation");
        let corpus = Arc::clone(&self.corpus);
        let cache = self.cache.clone();
        tokio::task::spawn_blocking(move || cache.png(&corpus, &claims.graph_id, alg))
            .await
            .map_err(|_| ServiceError::Unavailable)?
    }

    pub fn corpus(&self) -> &ServiceCorpus {
        &self.corpus
    }
}
