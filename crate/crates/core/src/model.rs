//! Preference classifier over the eight candidate layouts of a graph.
//!
//! Each candidate is described by a feature vector (from the built-in raster
//! featurizer or an external embedding file). The eight vectors are
//! concatenated in display order and fed to an MLP whose softmax output is
//! trained against the annotators' soft targets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{read_embedding_blocks, EmbedError};
use crate::labels::SoftTarget;
use crate::graph::Graph;
use crate::layout::{is_permutation, normalize_or_center, render, Algorithm, LayoutError, LayoutSet, RasterImage, RenderParams};
use crate::rng::{self, Domain, StreamRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("pyramid needs at least one level")]
    NoLevels,
    #[error("raster is {0}x{1}; features need a square image")]
    NotSquare(usize, usize),
    #[error("expected 8 candidates, got {0}")]
    CandidateCount(usize),
    #[error("feature dimension {got} does not match the model's {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("graph {graph_id} has {rows} feature rows; expected 8")]
    RowCount { graph_id: String, rows: usize },
    #[error("graph {0} appears twice in the feature file")]
    DuplicateGraph(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid display order {0:?}")]
    BadOrder([usize; 8]),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Mean-intensity grids of `2^j x 2^j` cells for `j = 1..=levels` (row-major,
/// top-left first), followed by the fraction of pixels that are lit and have
/// an unlit 4-neighbour. Length `sum_j 4^j + 1`.
pub fn raster_features(img: &RasterImage, levels: u32) -> Result<Vec<f64>> {
    if levels < 1 {
        return Err(ModelError::NoLevels);
    }
    if img.width != img.height {
        return Err(ModelError::NotSquare(img.width, img.height));
    }
    let size = img.width;
    let mut out = Vec::new();
    for j in 1..=levels {
        let cells = 1usize << j;
        for r in 0..cells {
            let (y0, y1) = (r * size / cells, (r + 1) * size / cells);
            for c in 0..cells {
                let (x0, x1) = (c * size / cells, (c + 1) * size / cells);
                let area = (y1 - y0) * (x1 - x0);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += img.get(x, y);
                    }
                }
                out.push(if area == 0 { 0.0 } else { sum / area as f64 });
            }
        }
    }
    let lit = |x: usize, y: usize| img.get(x, y) > 0.5;
    let mut boundary = 0usize;
    for y in 0..size {
        for x in 0..size {
            if !lit(x, y) {
                continue;
            }
            let dark_neighbour = (x > 0 && !lit(x - 1, y))
                || (x + 1 < size && !lit(x + 1, y))
                || (y > 0 && !lit(x, y - 1))
                || (y + 1 < size && !lit(x, y + 1));
            if dark_neighbour {
                boundary += 1;
            }
        }
    }
    out.push(if size == 0 { 0.0 } else { boundary as f64 / (size * size) as f64 });
    Ok(out)
}

/// Raster features of a graph's eight layouts, in canonical order.
pub fn layout_set_features(g: &Graph, set: &LayoutSet, levels: u32, params: &RenderParams) -> Result<Vec<Vec<f64>>> {
    set.layouts
        .iter()
        .map(|l| raster_features(&render(g, &normalize_or_center(l), params)?, levels))
        .collect()
}

pub fn raster_feature_dim(levels: u32) -> usize {
    (1..=levels).map(|j| 1usize << (2 * j)).sum::<usize>() + 1
}

/// Reads an embedding file holding eight rows per graph, in canonical
/// algorithm order.
pub fn load_external_features(text: &str) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for block in read_embedding_blocks(text)? {
        if block.rows.len() != 8 {
            return Err(ModelError::RowCount {
                graph_id: block.graph_id,
                rows: block.rows.len(),
            });
        }
        let d = block.dim();
        match dim {
            None => dim = Some(d),
            Some(want) if want != d => return Err(ModelError::DimMismatch { want, got: d }),
            _ => {}
        }
        if out.insert(block.graph_id.clone(), block.rows).is_some() {
            return Err(ModelError::DuplicateGraph(block.graph_id));
        }
    }
    Ok(out)
}

/// The eight candidates of one graph in display order, with the soft target
/// permuted the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub graph_id: String,
    /// `features[pos]` describes the layout shown at display position `pos`.
    pub features: Vec<Vec<f64>>,
    /// `target[pos]` is the share of annotators who chose that layout.
    pub target: [f64; 8],
    /// `display_order[pos]` is the canonical algorithm index at `pos`.
    pub display_order: [usize; 8],
}

impl CandidateSample {
    /// Arranges canonically ordered features and target into display order.
    pub fn assemble(
        graph_id: impl Into<String>,
        canonical_features: &[Vec<f64>],
        target: Option<&SoftTarget>,
        display_order: [usize; 8],
    ) -> Result<Self> {
        if canonical_features.len() != 8 {
            return Err(ModelError::CandidateCount(canonical_features.len()));
        }
        if !is_permutation(&display_order) {
            return Err(ModelError::BadOrder(display_order));
        }
        let q = target.map_or([0.0; 8], |t| t.q);
        Ok(Self {
            graph_id: graph_id.into(),
            features: display_order.iter().map(|&a| canonical_features[a].clone()).collect(),
            target: display_order.map(|a| q[a]),
            display_order,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn is_unanimous(&self) -> bool {
        self.target.iter().filter(|&&x| x > 0.0).count() == 1
    }

    /// Moves the candidate at position `i` to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize; 8]) -> Self {
        let mut features = vec![Vec::new(); 8];
        let mut target = [0.0; 8];
        let mut order = [0; 8];
        for i in 0..8 {
            features[perm[i]] = self.features[i].clone();
            target[perm[i]] = self.target[i];
            order[perm[i]] = self.display_order[i];
        }
        Self {
            graph_id: self.graph_id.clone(),
            features,
            target,
            display_order: order,
        }
    }
}

pub fn inverse_permutation(perm: &[usize; 8]) -> [usize; 8] {
    let mut inv = [0; 8];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `k` copies of a sample under independent uniform permutations, with the
/// permutation used for each.
pub fn augment(sample: &CandidateSample, k: usize, rng: &mut StreamRng) -> Vec<(CandidateSample, [usize; 8])> {
    (0..k)
        .map(|_| {
            let mut perm = [0, 1, 2, 3, 4, 5, 6, 7];
            perm.shuffle(rng);
            (sample.permuted(&perm), perm)
        })
        .collect()
}

const LOG_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64; 8]) -> [f64; 8] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// `-sum_k q_k ln p_k`, with `p_k` floored at 1e-12 inside the log.
pub fn soft_ce_loss(p: &[f64; 8], q: &[f64; 8]) -> f64 {
    -p.iter()
        .zip(q)
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(&pk, &qk)| qk * pk.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

pub fn entropy(q: &[f64; 8]) -> f64 {
    -q.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// MLP weights: `8 d -> hidden[0] -> ... -> 8` with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    layers: Vec<Dense>,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [4096, 1024];

impl ModelParams {
    fn widths(feature_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut w = vec![8 * feature_dim];
        w.extend_from_slice(hidden);
        w.push(8);
        w
    }

    /// Uniform initialization in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn init(feature_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::ModelInit, 0);
        let widths = Self::widths(feature_dim, hidden);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f64>>();
                let weights = draw(w[0] * w[1]);
                let biases = draw(w[1]);
                Dense {
                    n_in: w[0],
                    n_out: w[1],
                    w: weights,
                    b: biases,
                }
            })
            .collect();
        Self {
            feature_dim,
            hidden: hidden.to_vec(),
            seed,
            layers,
        }
    }

    pub fn zeros(feature_dim: usize, hidden: &[usize]) -> Self {
        let mut p = Self::init(feature_dim, hidden, 0);
        let n = p.num_params();
        p.set_flat(&vec![0.0; n]);
        p
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "parameter count");
        let mut at = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&values[at..at + nw]);
            at += nw;
            l.b.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
    }

    fn input(&self, sample: &CandidateSample) -> Result<Vec<f64>> {
        if sample.features.len() != 8 {
            return Err(ModelError::CandidateCount(sample.features.len()));
        }
        let mut x = Vec::with_capacity(8 * self.feature_dim);
        for f in &sample.features {
            if f.len() != self.feature_dim {
                return Err(ModelError::DimMismatch {
                    want: self.feature_dim,
                    got: f.len(),
                });
            }
            x.extend_from_slice(f);
        }
        Ok(x)
    }

    /// Layer inputs (post-activation) followed by the logits.
    fn activations(&self, x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.apply(acts.last().expect("nonempty"));
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, sample: &CandidateSample) -> Result<[f64; 8]> {
        let acts = self.activations(self.input(sample)?);
        Ok(to8(acts.last().expect("nonempty")))
    }

    /// Softmax probabilities over display positions.
    pub fn forward(&self, sample: &CandidateSample) -> Result<[f64; 8]> {
        Ok(softmax(&self.logits(sample)?))
    }

    /// Soft cross-entropy loss and its gradient with respect to `flat()`.
    pub fn loss_and_gradient(&self, sample: &CandidateSample) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.accumulate(sample, &mut grad, 1.0)?;
        Ok((loss, grad))
    }

    pub fn loss(&self, sample: &CandidateSample) -> Result<f64> {
        Ok(soft_ce_loss(&self.forward(sample)?, &sample.target))
    }

    /// Adds `scale * dL/dtheta` into `grad` and returns the loss.
    fn accumulate(&self, sample: &CandidateSample, grad: &mut [f64], scale: f64) -> Result<f64> {
        let acts = self.activations(self.input(sample)?);
        let p = softmax(&to8(acts.last().expect("nonempty")));
        let loss = soft_ce_loss(&p, &sample.target);
        // d(-sum q log softmax(z))/dz = p * sum(q) - q.
        let qsum: f64 = sample.target.iter().sum();
        let mut delta: Vec<f64> = (0..8).map(|k| scale * (p[k] * qsum - sample.target[k])).collect();

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let start = *at;
                *at += l.w.len() + l.b.len();
                Some(start)
            })
            .collect();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &acts[li];
            let (gw, gb) = grad[offsets[li]..offsets[li] + l.w.len() + l.b.len()].split_at_mut(l.w.len());
            for o in 0..l.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if li > 0 {
                let mut back = vec![0.0; l.n_in];
                for o in 0..l.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.w[o * l.n_in..(o + 1) * l.n_in];
                    for (b, &w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                // ReLU derivative on the previous layer's output.
                for (b, &a) in back.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok(loss)
    }
}

fn to8(v: &[f64]) -> [f64; 8] {
    let mut out = [0.0; 8];
    out.copy_from_slice(&v[..8]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub graph_id: String,
    /// Probabilities in canonical algorithm order.
    pub probs: [f64; 8],
    pub choice: Algorithm,
    pub confidence: f64,
}

/// Runs the model and maps the argmax back to canonical algorithm space.
/// Ties go to the lowest canonical index.
pub fn predict(params: &ModelParams, sample: &CandidateSample) -> Result<Prediction> {
    if !is_permutation(&sample.display_order) {
        return Err(ModelError::BadOrder(sample.display_order));
    }
    let by_position = params.forward(sample)?;
    let mut probs = [0.0; 8];
    for (pos, &alg) in sample.display_order.iter().enumerate() {
        probs[alg] = by_position[pos];
    }
    let (best, confidence) = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b });
    Ok(Prediction {
        graph_id: sample.graph_id.clone(),
        probs,
        choice: Algorithm::ALL[best],
        confidence,
    })
}

/// Central finite differences against the analytic gradient; returns
/// `max |g_fd - g| / max(1e-8, |g_fd| + |g|)` over all parameters.
pub fn gradient_check(params: &ModelParams, sample: &CandidateSample, eps: f64) -> Result<f64> {
    gradient_check_with(params, sample, eps, |p, s| Ok(p.loss_and_gradient(s)?.1))
}

/// As [`gradient_check`], with the analytic gradient supplied by the caller.
pub fn gradient_check_with(
    params: &ModelParams,
    sample: &CandidateSample,
    eps: f64,
    analytic: impl Fn(&ModelParams, &CandidateSample) -> Result<Vec<f64>>,
) -> Result<f64> {
    let g = analytic(params, sample)?;
    let theta = params.flat();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + eps;
        probe.set_flat(&t);
        let up = probe.loss(sample)?;
        t[i] = theta[i] - eps;
        probe.set_flat(&t);
        let down = probe.loss(sample)?;
        let fd = (up - down) / (2.0 * eps);
        let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Permuted copies per sample; 0 trains on the samples as given.
    pub augment_k: usize,
    pub unanimous_only: bool,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 50,
            batch: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment_k: 0,
            unanimous_only: false,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Samples after filtering and augmentation.
    pub samples: usize,
    /// Mean loss over each epoch's mini-batches, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Filters, augments and trains with Adam on shuffled mini-batches.
pub fn train(dataset: &[CandidateSample], config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    let filtered: Vec<&CandidateSample> = dataset
        .iter()
        .filter(|s| !config.unanimous_only || s.is_unanimous())
        .collect();
    let first = filtered.first().ok_or(ModelError::EmptyDataset)?;
    let dim = first.feature_dim();
    let mut aug_rng = rng::stream(config.seed, Domain::Training, 1);
    let samples: Vec<CandidateSample> = if config.augment_k == 0 {
        filtered.into_iter().cloned().collect()
    } else {
        filtered
            .into_iter()
            .flat_map(|s| augment(s, config.augment_k, &mut aug_rng))
            .map(|(s, _)| s)
            .collect()
    };
    let mut params = ModelParams::init(dim, &config.hidden, config.seed);
    let n = params.num_params();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut theta = params.flat();
    let mut shuffle_rng = rng::stream(config.seed, Domain::Training, 0);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0i32;
    let batch = config.batch.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            let mut grad = vec![0.0; n];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                total += params.accumulate(&samples[i], &mut grad, scale)?;
            }
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
            }
            step += 1;
            let c1 = 1.0 - config.beta1.powi(step);
            let c2 = 1.0 - config.beta2.powi(step);
            for k in 0..n {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
                theta[k] -= config.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + config.adam_eps);
            }
            params.set_flat(&theta);
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    Ok((
        params,
        TrainReport {
            samples: samples.len(),
            epoch_losses,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    feature_dim: usize,
    hidden: Vec<usize>,
    activation: String,
    seed: u64,
    params: Vec<f64>,
}

impl ModelParams {
    pub fn to_checkpoint(&self) -> String {
        serde_json::to_string(&Checkpoint {
            version: 1,
            feature_dim: self.feature_dim,
            hidden: self.hidden.clone(),
            activation: "relu".into(),
            seed: self.seed,
            params: self.flat(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if c.version != 1 || c.activation != "relu" {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} / activation {}",
                c.version, c.activation
            )));
        }
        let mut p = Self::init(c.feature_dim, &c.hidden, c.seed);
        if c.params.len() != p.num_params() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                p.num_params(),
                c.params.len()
            )));
        }
        p.set_flat(&c.params);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dim: usize, seed: u64) -> CandidateSample {
        let mut rng = rng::stream(seed, Domain::Synthetic, 0);
        let mut q = [0.0; 8];
        let mut rest = 1.0;
        for (k, qk) in q.iter_mut().enumerate().take(7) {
            if k % 2 == 0 {
                *qk = rest * rng.random::<f64>() * 0.5;
                rest -= *qk;
            }
        }
        q[7] = rest;
        CandidateSample {
            graph_id: format!("s{seed}"),
            features: (0..8).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            target: q,
            display_order: [3, 1, 4, 0, 5, 2, 7, 6],
        }
    }

    #[test]
    fn raster_feature_conventions() {
        let mut img = RasterImage::new(16);
        assert_eq!(raster_features(&img, 2).unwrap(), vec![0.0; 21]);
        img.pixels.iter_mut().for_each(|p| *p = 1.0);
        let f = raster_features(&img, 2).unwrap();
        assert!(f[..20].iter().all(|&x| x == 1.0));
        assert_eq!(f[20], 0.0);
        let mut split = RasterImage::new(16);
        for y in 0..16 {
            for x in 0..8 {
                split.pixels[y * 16 + x] = 1.0;
            }
        }
        let f = raster_features(&split, 1).unwrap();
        assert_eq!(&f[..4], &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(f[4], 16.0 / 256.0);
        assert_eq!(raster_feature_dim(4), 4 + 16 + 64 + 256 + 1);
        assert!(raster_features(&img, 0).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = ModelParams::zeros(3, &[5, 4]);
        let s = sample(3, 1);
        let pred = predict(&p, &s).unwrap();
        assert!(pred.probs.iter().all(|&x| x == 0.125));
        assert_eq!(pred.confidence, 0.125);
        assert_eq!(pred.choice, Algorithm::Neato);
    }

    #[test]
    fn hand_sized_forward_pass() {
        // d = 2 -> 16 inputs -> 3 -> 2 -> 8, all weights hand-set.
        let mut p = ModelParams::zeros(2, &[3, 2]);
        let mut theta = vec![0.0; p.num_params()];
        // Layer 1 (3 x 16): unit i reads input i with weight (i+1), bias -0.5.
        for i in 0..3 {
            theta[i * 16 + i] = (i + 1) as f64;
        }
        let l1 = 3 * 16;
        for i in 0..3 {
            theta[l1 + i] = -0.5;
        }
        // Layer 2 (2 x 3): sums and differences.
        let l2 = l1 + 3;
        theta[l2..l2 + 6].copy_from_slice(&[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        theta[l2 + 6] = 0.25;
        theta[l2 + 7] = 0.0;
        // Layer 3 (8 x 2): logit k = k * h0 - h1.
        let l3 = l2 + 8;
        for k in 0..8 {
            theta[l3 + 2 * k] = k as f64;
            theta[l3 + 2 * k + 1] = -1.0;
        }
        p.set_flat(&theta);
        let mut features = vec![vec![0.0, 0.0]; 8];
        features[0] = vec![1.0, 2.0];
        features[1] = vec![0.1, 0.0];
        let s = CandidateSample {
            graph_id: "h".into(),
            features,
            target: [0.125; 8],
            display_order: [0, 1, 2, 3, 4, 5, 6, 7],
        };
        // a1 = relu([1*1-0.5, 2*2-0.5, 3*0.1-0.5]) = [0.5, 3.5, 0]
        // a2 = relu([0.5+3.5+0+0.25, 0.5-3.5]) = [4.25, 0]
        let logits: [f64; 8] = std::array::from_fn(|k| k as f64 * 4.25);
        let got = p.logits(&s).unwrap();
        for k in 0..8 {
            assert!((got[k] - logits[k]).abs() < 1e-12);
        }
        let probs = p.forward(&s).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for k in 0..8 {
            assert!((probs[k] - logits[k].exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_identities() {
        let u = [0.125; 8];
        assert!((soft_ce_loss(&u, &u) - 8f64.ln()).abs() < 1e-12);
        let mut one = [0.0; 8];
        one[2] = 1.0;
        assert_eq!(soft_ce_loss(&one, &one), 0.0);
        let q = [0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let e = 1e-9;
        let mut p = [e; 8];
        p[0] = 0.5 - 3.0 * e;
        p[1] = 0.5 - 3.0 * e;
        assert!((soft_ce_loss(&p, &q) - 2f64.ln()).abs() < 1e-7);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let p = ModelParams::init(3, &[6, 5], seed);
            let s = sample(3, seed + 100);
            assert!(gradient_check(&p, &s, 1e-5).unwrap() < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let p = ModelParams::init(2, &[4], 7);
        let s = sample(2, 8);
        let err = gradient_check_with(&p, &s, 1e-5, |p, s| {
            Ok(p.loss_and_gradient(s)?.1.into_iter().map(|g| 2.0 * g).collect())
        })
        .unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-4, "{err}");
    }

    #[test]
    fn augmentation_round_trips() {
        let s = sample(4, 2);
        let mut rng = rng::stream(1, Domain::Training, 1);
        for (a, perm) in augment(&s, 10, &mut rng) {
            let back = a.permuted(&inverse_permutation(&perm));
            assert_eq!(back, s);
            let argmax = |t: &[f64; 8]| (0..8).max_by(|&i, &j| t[i].total_cmp(&t[j])).unwrap();
            assert_eq!(argmax(&a.target), perm[argmax(&s.target)]);
            // Canonical-space target is unchanged by display permutation.
            for pos in 0..8 {
                let alg = a.display_order[pos];
                let orig = s.display_order.iter().position(|&x| x == alg).unwrap();
                assert_eq!(a.target[pos], s.target[orig]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = ModelParams::init(3, &[7, 5], 42);
        let back = ModelParams::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back, p);
        assert!(ModelParams::from_checkpoint("{}").is_err());
    }

    #[test]
    fn external_feature_file() {
        let mut text = String::new();
        for g in ["a", "b"] {
            let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64; 5]).collect();
            text.push_str(&crate::embed::write_embedding_block(g, "dino", &rows));
        }
        let m = load_external_features(&text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["a"][3], vec![3.0; 5]);
        let seven: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; 5]).collect();
        let bad = crate::embed::write_embedding_block("c", "dino", &seven);
        assert!(matches!(load_external_features(&bad), Err(ModelError::RowCount { rows: 7, .. })));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ModelParams::zeros(3, &[2]);
        assert!(matches!(p.forward(&sample(4, 0)), Err(ModelError::DimMismatch { want: 3, got: 4 })));
    }
}
