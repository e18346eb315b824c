//! Structural node embeddings: Laplacian eigenvectors and node2vec.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::linalg::symmetric_eigen;
use crate::rng::{self, Domain, StreamRng};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("graph {0} is disconnected")]
    Disconnected(String),
    #[error("requested {k} eigenvectors but a {n}-node graph has at most {max}", max = .n.saturating_sub(1))]
    TooManyComponents { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("embedding file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    Spectral,
    Node2vec,
}

impl fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMethod::Spectral => "spectral",
            EmbeddingMethod::Node2vec => "node2vec",
        })
    }
}

impl FromStr for EmbeddingMethod {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "node2vec" => Ok(Self::Node2vec),
            _ => Err(EmbedError::Param(format!("unknown embedding method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub graph_id: String,
    pub method: EmbeddingMethod,
    pub dim: usize,
    /// One row per node.
    pub vectors: Vec<Vec<f64>>,
    /// Laplacian eigenvalues of the columns, for spectral embeddings.
    pub eigenvalues: Option<Vec<f64>>,
}

pub fn laplacian(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    let mut l = vec![0.0; n * n];
    for &(u, v) in g.edges() {
        l[u * n + v] -= 1.0;
        l[v * n + u] -= 1.0;
        l[u * n + u] += 1.0;
        l[v * n + v] += 1.0;
    }
    l
}

/// Eigenvectors of `L = D - A` for the `k` smallest nonzero eigenvalues, in
/// ascending order. Each column has unit norm and its largest-magnitude
/// entry (first such index on ties) is positive.
pub fn spectral_embedding(g: &Graph, k: usize) -> Result<NodeEmbeddings> {
    let n = g.node_count();
    if !g.is_connected() {
        return Err(EmbedError::Disconnected(g.id().to_string()));
    }
    if k == 0 || k + 1 > n {
        return Err(EmbedError::TooManyComponents { k, n });
    }
    let eig = symmetric_eigen(&laplacian(g), n);
    let mut columns: Vec<Vec<f64>> = eig.vectors[1..=k].to_vec();
    for col in &mut columns {
        let max = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lead = col
            .iter()
            .position(|x| x.abs() >= max - 1e-12)
            .expect("nonempty column");
        if col[lead] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let vectors = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(NodeEmbeddings {
        graph_id: g.id().to_string(),
        method: EmbeddingMethod::Spectral,
        dim: k,
        vectors,
        eigenvalues: Some(eig.values[1..=k].to_vec()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Nodes per walk.
    pub length: usize,
    pub walks_per_node: usize,
    /// Return parameter: weight `1/p` for stepping back.
    pub p: f64,
    /// In-out parameter: weight `1/q` for moving away from the previous node.
    pub q: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            length: 40,
            walks_per_node: 10,
            p: 1.0,
            q: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkCorpus {
    pub graph_id: String,
    pub node_count: usize,
    pub params: WalkParams,
    pub seed: u64,
    /// Node-major: all walks from node 0, then node 1, ...
    pub walks: Vec<Vec<usize>>,
}

/// Second-order node2vec walks. The first step is uniform over neighbours;
/// later steps from `v` having arrived from `t` weight a neighbour `x` by
/// `1/p` if `x = t`, 1 if `x` is adjacent to `t`, and `1/q` otherwise. Each
/// start node draws from its own stream, so the corpus does not depend on
/// how the work is scheduled.
pub fn random_walks(g: &Graph, params: &WalkParams, seed: u64) -> Result<WalkCorpus> {
    if params.length < 2 {
        return Err(EmbedError::Param("walk length must be at least 2".into()));
    }
    if !(params.p > 0.0 && params.q > 0.0) {
        return Err(EmbedError::Param("p and q must be positive".into()));
    }
    if !g.is_connected() {
        return Err(EmbedError::Disconnected(g.id().to_string()));
    }
    let n = g.node_count();
    let per_node: Vec<Vec<Vec<usize>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|start| {
                s.spawn(move || {
                    let mut rng = rng::stream(seed, Domain::Walk, start as u32);
                    (0..params.walks_per_node)
                        .map(|_| walk_from(g, start, params, &mut rng))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("walk thread panicked")).collect()
    });
    Ok(WalkCorpus {
        graph_id: g.id().to_string(),
        node_count: n,
        params: *params,
        seed,
        walks: per_node.into_iter().flatten().collect(),
    })
}

fn walk_from(g: &Graph, start: usize, params: &WalkParams, rng: &mut StreamRng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(params.length);
    walk.push(start);
    while walk.len() < params.length {
        let cur = *walk.last().expect("nonempty");
        let nbrs = g.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            nbrs[rng.random_range(0..nbrs.len())]
        } else {
            let prev = walk[walk.len() - 2];
            let weight = |x: usize| {
                if x == prev {
                    1.0 / params.p
                } else if g.has_edge(x, prev) {
                    1.0
                } else {
                    1.0 / params.q
                }
            };
            let total: f64 = nbrs.iter().map(|&x| weight(x)).sum();
            let mut r = rng.random::<f64>() * total;
            let mut chosen = *nbrs.last().expect("nonempty");
            for &x in nbrs {
                r -= weight(x);
                if r < 0.0 {
                    chosen = x;
                    break;
                }
            }
            chosen
        };
        walk.push(next);
    }
    walk
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to 1e-4 of itself.
    pub lr: f64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramResult {
    pub embeddings: NodeEmbeddings,
    /// Mean negative-sampling loss per (center, context) pair before
    /// training, evaluated with a fixed set of negative samples.
    pub initial_loss: f64,
    /// Same evaluation after training.
    pub final_loss: f64,
    /// Mean loss over the pairs seen in each epoch, measured before each
    /// update.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(sigmoid(x))` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    /// Unigram frequencies raised to the 3/4 power.
    fn new(corpus: &WalkCorpus) -> Self {
        let mut counts = vec![0.0f64; corpus.node_count];
        for w in &corpus.walks {
            for &v in w {
                counts[v] += 1.0;
            }
        }
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|c| {
                acc += c.powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample(&self, rng: &mut StreamRng) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let r = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.cumulative.len() - 1)
    }
}

fn context_pairs(corpus: &WalkCorpus, window: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    corpus.walks.iter().flat_map(move |w| {
        (0..w.len()).flat_map(move |i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(w.len() - 1);
            (lo..=hi).filter(move |&j| j != i).map(move |j| (w[i], w[j]))
        })
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn evaluate(
    corpus: &WalkCorpus,
    params: &SkipGramParams,
    input: &[Vec<f64>],
    output: &[Vec<f64>],
    table: &NegativeTable,
    seed: u64,
) -> f64 {
    let mut rng = rng::stream(seed, Domain::SkipGram, 1);
    let (mut total, mut count) = (0.0, 0usize);
    for (c, ctx) in context_pairs(corpus, params.window) {
        total += neg_log_sigmoid(dot(&input[c], &output[ctx]));
        for _ in 0..params.negatives {
            let neg = table.sample(&mut rng);
            if neg != ctx {
                total += neg_log_sigmoid(-dot(&input[c], &output[neg]));
            }
        }
        count += 1;
    }
    total / count.max(1) as f64
}

/// Skip-gram with negative sampling, trained by plain SGD.
pub fn skipgram_train(corpus: &WalkCorpus, params: &SkipGramParams, seed: u64) -> Result<SkipGramResult> {
    if corpus.walks.is_empty() || corpus.node_count == 0 {
        return Err(EmbedError::Param("empty walk corpus".into()));
    }
    if params.dim < 2 {
        return Err(EmbedError::Param("dimension must be at least 2".into()));
    }
    let n = corpus.node_count;
    let dim = params.dim;
    let mut rng = rng::stream(seed, Domain::SkipGram, 0);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-bound..bound)).collect())
        .collect();
    let mut output = vec![vec![0.0; dim]; n];
    let table = NegativeTable::new(corpus);
    let initial_loss = evaluate(corpus, params, &input, &output, &table, seed);

    let pairs_per_epoch = context_pairs(corpus, params.window).count();
    let total_pairs = (pairs_per_epoch * params.epochs).max(1) as f64;
    let mut seen = 0usize;
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut grad = vec![0.0; dim];
    for _ in 0..params.epochs {
        let mut epoch_loss = 0.0;
        for (c, ctx) in context_pairs(corpus, params.window) {
            let lr = params.lr * (1.0 - seen as f64 / total_pairs).max(1e-4);
            seen += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut targets = Vec::with_capacity(params.negatives + 1);
            targets.push((ctx, 1.0));
            for _ in 0..params.negatives {
                let neg = table.sample(&mut rng);
                if neg != ctx {
                    targets.push((neg, 0.0));
                }
            }
            for (t, label) in targets {
                let score = dot(&input[c], &output[t]);
                epoch_loss += if label > 0.0 {
                    neg_log_sigmoid(score)
                } else {
                    neg_log_sigmoid(-score)
                };
                let g = lr * (label - sigmoid(score));
                for k in 0..dim {
                    grad[k] += g * output[t][k];
                    output[t][k] += g * input[c][k];
                }
            }
            for k in 0..dim {
                input[c][k] += grad[k];
            }
        }
        epoch_losses.push(epoch_loss / pairs_per_epoch.max(1) as f64);
    }
    let final_loss = evaluate(corpus, params, &input, &output, &table, seed);
    Ok(SkipGramResult {
        embeddings: NodeEmbeddings {
            graph_id: corpus.graph_id.clone(),
            method: EmbeddingMethod::Node2vec,
            dim,
            vectors: input,
            eigenvalues: None,
        },
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

pub fn node2vec_embedding(
    g: &Graph,
    walk: &WalkParams,
    skipgram: &SkipGramParams,
    seed: u64,
) -> Result<NodeEmbeddings> {
    let corpus = random_walks(g, walk, seed)?;
    Ok(skipgram_train(&corpus, skipgram, seed)?.embeddings)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// A block of an embedding file: header `graph_id method n dim` followed by
/// `n` rows of `dim` numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub graph_id: String,
    pub method: String,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingBlock {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

pub fn write_embedding_block(graph_id: &str, method: &str, rows: &[Vec<f64>]) -> String {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = format!("{graph_id} {method} {} {dim}\n", rows.len());
    for r in rows {
        let cells: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_embeddings(e: &NodeEmbeddings) -> String {
    write_embedding_block(&e.graph_id, &e.method.to_string(), &e.vectors)
}

/// Parses any number of concatenated blocks.
pub fn read_embedding_blocks(text: &str) -> Result<Vec<EmbeddingBlock>> {
    let mut blocks = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    while let Some((line, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [graph_id, method, n, dim] = parts.as_slice() else {
            return Err(EmbedError::Format {
                line,
                msg: format!("expected `graph_id method n dim`, got {header:?}"),
            });
        };
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| EmbedError::Format {
                line,
                msg: format!("bad count {s:?}"),
            })
        };
        let (n, dim) = (parse(n)?, parse(dim)?);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let (line, row) = lines.next().ok_or(EmbedError::Format {
                line,
                msg: format!("block for {graph_id} ends after {} of {n} rows", rows.len()),
            })?;
            let values = row
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::Format { line, msg: e.to_string() })?;
            if values.len() != dim {
                return Err(EmbedError::Format {
                    line,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::Format { line, msg: "non-finite value".into() });
            }
            rows.push(values);
        }
        blocks.push(EmbeddingBlock {
            graph_id: graph_id.to_string(),
            method: method.to_string(),
            rows,
        });
    }
    Ok(blocks)
}

pub fn read_embeddings(text: &str) -> Result<NodeEmbeddings> {
    let mut blocks = read_embedding_blocks(text)?;
    if blocks.len() != 1 {
        return Err(EmbedError::Format {
            line: 1,
            msg: format!("expected one block, found {}", blocks.len()),
        });
    }
    let b = blocks.remove(0);
    let method = b.method.parse()?;
    let dim = b.dim();
    Ok(NodeEmbeddings {
        graph_id: b.graph_id,
        method,
        dim,
        vectors: b.rows,
        eigenvalues: None,
    })
}
