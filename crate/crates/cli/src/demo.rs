//! End-to-end run on the bundled toy graphs: synthetic annotators, a scripted
//! LLM labeler and a small visual model, summarized as a text report.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::Rng;

use layoutpref::align::{alignment_report, confidence_curve, paired_t_test, ScoredChoice, SimilarityAlignment};
use layoutpref::graph::{Graph, GraphCorpus, Split};
use layoutpref::labels::{LabelRecord, LabelStore};
use layoutpref::layout::{Algorithm, LayoutParams, RenderParams};
use layoutpref::llm::{label_with_llm, LabelJob, LlmRun, MockBackend, MockEntry, PromptStrategy, StructureKind};
use layoutpref::model::{predict, softmax, train, TrainConfig};
use layoutpref::rng::{self, Domain};

use crate::text::{alignment_table, consensus_table, curve_table, distribution_table, fmt4, fmt_opt, heatmap_pgm};
use crate::{lay_out, layout_map, per_graph_agreement, pooled_agreement, query_samples, raster_feature_map, toy, training_samples, write_corpus, LaidOut};

pub const LAYOUT_SEED: u64 = 7;
pub const SEED: u64 = 11;
pub const ANNOTATORS: usize = 5;
pub const TRAIN_GRAPHS: usize = 12;
pub const ALPHA_GRID: [f64; 7] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const THRESHOLDS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

const SKIP_PROBABILITY: f64 = 0.15;
const FAVORITE_BONUS: f64 = 1.5;
const NOISE_SCALE: f64 = 1.5;

pub struct DemoOutput {
    pub report: String,
    pub store: LabelStore,
    pub llm: LlmRun,
    pub mock_script: Vec<MockEntry>,
    pub vm_predictions: Vec<ScoredChoice>,
    pub heatmap: Vec<u8>,
}

/// Toy corpus: the first twelve graphs train, the rest test.
pub fn corpus() -> Result<GraphCorpus> {
    let mut c = GraphCorpus::new();
    for (i, g) in toy::toy_graphs().into_iter().enumerate() {
        let split = if i < TRAIN_GRAPHS { Split::Train } else { Split::Test };
        c.insert(g, split)?;
    }
    Ok(c)
}

/// Stress after the uniform scaling that minimizes it, so layouts of any
/// size compare fairly.
pub fn scaled_stress(g: &Graph, coords: &[[f64; 2]]) -> f64 {
    let n = g.node_count();
    let d = g.distance_matrix().expect("toy graphs are connected");
    let (mut num, mut den) = (0.0, 0.0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let dij = d[i * n + j];
            let e = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
            num += e / dij;
            den += e * e / (dij * dij);
            pairs.push((e, dij));
        }
    }
    let alpha = if den > 0.0 { num / den } else { 1.0 };
    pairs.iter().map(|&(e, dij)| (alpha * e - dij).powi(2) / (dij * dij)).sum()
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Number of pairs of edges without a shared endpoint whose segments cross.
pub fn edge_crossings(g: &Graph, coords: &[[f64; 2]]) -> usize {
    let edges = g.edges();
    let mut count = 0;
    for (i, &(a, b)) in edges.iter().enumerate() {
        for &(c, d) in &edges[i + 1..] {
            if a == c || a == d || b == c || b == d {
                continue;
            }
            let (p, q, r, s) = (coords[a], coords[b], coords[c], coords[d]);
            let d1 = orient(p, q, r);
            let d2 = orient(p, q, s);
            let d3 = orient(r, s, p);
            let d4 = orient(r, s, q);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Rank of each canonical layout by a score, 0 for the lowest; ties keep
/// canonical order.
fn ranks(scores: &[f64; 8]) -> [usize; 8] {
    let mut idx: Vec<usize> = (0..8).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut r = [0; 8];
    for (rank, &k) in idx.iter().enumerate() {
        r[k] = rank;
    }
    r
}

fn stress_ranks(item: &LaidOut) -> [usize; 8] {
    let s: [f64; 8] = std::array::from_fn(|k| scaled_stress(&item.graph, &item.layouts.layouts[k].coords));
    ranks(&s)
}

fn argmax(x: &[f64; 8]) -> usize {
    (0..8).fold(0, |b, k| if x[k] > x[b] { k } else { b })
}

/// Annotators prefer low-stress layouts, each with a favorite algorithm and
/// Gumbel noise, and skip some graphs.
pub fn synthetic_labels(items: &[LaidOut], seed: u64) -> LabelStore {
    let base: DateTime<Utc> = "2024-03-01T09:00:00Z".parse().expect("valid timestamp");
    let stress: Vec<[usize; 8]> = items.iter().map(stress_ranks).collect();
    let mut store = LabelStore::new();
    for a in 0..ANNOTATORS {
        let mut rng = rng::stream(seed, Domain::Synthetic, a as u32);
        let favorite = (3 * a + 1) % 8;
        let annotator = format!("annotator-{}", a + 1);
        for (gi, item) in items.iter().enumerate() {
            if rng.random_bool(SKIP_PROBABILITY) {
                continue;
            }
            let scores: [f64; 8] = std::array::from_fn(|k| {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let gumbel = -(-u.ln()).ln();
                (8 - stress[gi][k]) as f64 + if k == favorite { FAVORITE_BONUS } else { 0.0 } + NOISE_SCALE * gumbel
            });
            let mut order: [usize; 8] = std::array::from_fn(|k| k);
            order.shuffle(&mut rng);
            let duration_ms = rng.random_range(2_000..20_000);
            let hard = rng.random_bool(0.1);
            store.insert(LabelRecord {
                graph_id: item.graph.id().to_string(),
                annotator_id: annotator.clone(),
                choice: Algorithm::ALL[argmax(&scores)],
                display_order: order,
                duration_ms,
                hard,
                timestamp: base + Duration::seconds((a * 1000 + gi * 37) as i64),
            });
        }
    }
    store
}

/// Scripted answers for a labeler that counts crossings and breaks near-ties
/// by stress.
pub fn mock_llm_script(items: &[LaidOut]) -> Vec<MockEntry> {
    items
        .iter()
        .map(|item| {
            let stress = stress_ranks(item);
            let score: [f64; 8] = std::array::from_fn(|k| {
                -(edge_crossings(&item.graph, &item.layouts.layouts[k].coords) as f64 + 0.1 * stress[k] as f64)
            });
            let p = softmax(&score);
            let best = argmax(&p);
            let position = item.layouts.position_of(Algorithm::ALL[best]) + 1;
            MockEntry {
                graph_id: item.graph.id().to_string(),
                response: format!(
                    "Layout {position} has the fewest edge crossings and even spacing.\nIn conclusion, I will pick layout {position}"
                ),
                choice_logprob: Some(p[best].ln()),
            }
        })
        .collect()
}

pub fn vm_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 60,
        batch: 16,
        seed,
        augment_k: 20,
        hidden: vec![64, 32],
        ..TrainConfig::default()
    }
}

pub const VM_LEVELS: u32 = 3;

pub fn vm_render() -> RenderParams {
    RenderParams {
        size: 64,
        node_radius: 1,
        edge_width: 1,
    }
}

fn section(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n== {title} ==");
}

/// Runs the whole pipeline; writes artifacts into `out_dir` when given.
pub fn run(out_dir: Option<&Path>) -> Result<DemoOutput> {
    let corpus = corpus()?;
    let items = lay_out(&corpus, &LayoutParams::default(), LAYOUT_SEED);
    anyhow::ensure!(items.len() == corpus.len(), "every toy graph should lay out");
    let store = synthetic_labels(&items, SEED);
    let labelers: Vec<String> = store.annotators().map(str::to_string).collect();
    let layouts = layout_map(&items);

    let mut r = String::from("layoutpref demo\n");
    let _ = writeln!(
        r,
        "graphs {} (train {}, test {}), annotators {}, labels {}",
        items.len(),
        TRAIN_GRAPHS,
        items.len() - TRAIN_GRAPHS,
        labelers.len(),
        store.len()
    );

    section(&mut r, "human alignment");
    let report = alignment_report(&store, &labelers);
    r.push_str(&alignment_table(&report));
    let heatmap = heatmap_pgm(&report.matrix(), 8);

    section(&mut r, "consensus");
    r.push_str(&consensus_table(&store.consensus_distribution()));

    section(&mut r, "choice distribution");
    r.push_str(&distribution_table(&store.choice_distribution(|_| true)?));

    section(&mut r, "similarity alignment");
    let mut sim = SimilarityAlignment::new(&layouts, false);
    for alpha in ALPHA_GRID {
        let _ = writeln!(r, "alpha {} micro {}", fmt4(alpha), fmt4(sim.micro(&store, &labelers, alpha)?));
    }

    let test: Vec<&LaidOut> = items.iter().filter(|i| i.split == Split::Test).collect();
    let train_items: Vec<&LaidOut> = items.iter().filter(|i| i.split == Split::Train).collect();

    section(&mut r, "llm labeler");
    let script = mock_llm_script(&items.iter().filter(|i| i.split == Split::Test).cloned().collect::<Vec<_>>());
    let backend = MockBackend::from_entries(script.clone());
    let job = LabelJob {
        strategy: PromptStrategy::Structural {
            structure: StructureKind::Adjacency,
            shots: 2,
        },
        targets: test.iter().map(|i| (&i.graph, &i.layouts)).collect(),
        shot_pool: train_items.iter().map(|i| (&i.graph, &i.layouts)).collect(),
        store: &store,
        features: None,
        seed: SEED,
        concurrency: 2,
        budget: layoutpref::llm::DEFAULT_TOKEN_BUDGET,
        render: RenderParams::default(),
        transcript_dir: out_dir.map(|d| d.join("transcripts")),
    };
    let llm = label_with_llm(&job, &backend)?;
    anyhow::ensure!(llm.failures.is_empty(), "mock labeler failed: {:?}", llm.failures);
    let llm_preds: Vec<ScoredChoice> = llm
        .labels
        .iter()
        .map(|l| ScoredChoice {
            graph_id: l.graph_id.clone(),
            choice: l.choice,
            confidence: l.confidence,
        })
        .collect();
    let _ = writeln!(r, "strategy {}", job.strategy.name());
    let _ = writeln!(r, "shots {}", llm.shot_ids.join(" "));
    let _ = writeln!(r, "alignment with humans {}", fmt_opt(pooled_agreement(&llm_preds, &store)));
    r.push_str(&curve_table(&confidence_curve(&llm_preds, &store, &THRESHOLDS)?));

    section(&mut r, "visual model");
    let features = raster_feature_map(&items, VM_LEVELS, &vm_render())?;
    let train_set = training_samples(&items, &features, &store, Split::Train)?;
    let config = vm_config(SEED);
    let (params, train_report) = train(&train_set, &config)?;
    let _ = writeln!(
        r,
        "{} samples ({} graphs x {}), loss {} -> {}",
        train_report.samples,
        train_set.len(),
        config.augment_k,
        fmt4(train_report.epoch_losses[0]),
        fmt4(*train_report.epoch_losses.last().context("no epochs")?)
    );
    let vm_predictions: Vec<ScoredChoice> = query_samples(&items, &features, Some(Split::Test))?
        .iter()
        .map(|s| {
            predict(&params, s).map(|p| ScoredChoice {
                graph_id: p.graph_id,
                choice: p.choice,
                confidence: Some(p.confidence),
            })
        })
        .collect::<std::result::Result<_, _>>()?;
    let _ = writeln!(r, "alignment with humans {}", fmt_opt(pooled_agreement(&vm_predictions, &store)));
    r.push_str(&curve_table(&confidence_curve(&vm_predictions, &store, &THRESHOLDS)?));

    section(&mut r, "llm vs visual model");
    let a = per_graph_agreement(&llm_preds, &store);
    let b = per_graph_agreement(&vm_predictions, &store);
    let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
    let xs: Vec<f64> = shared.iter().map(|k| a[*k]).collect();
    let ys: Vec<f64> = shared.iter().map(|k| b[*k]).collect();
    match paired_t_test(&xs, &ys) {
        Ok(t) => {
            let _ = writeln!(r, "paired t {} df {} p {}", fmt4(t.t), t.df, fmt4(t.p));
        }
        Err(e) => {
            let _ = writeln!(r, "paired t unavailable: {e}");
        }
    }

    let mock_script = script;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_corpus(dir, &corpus)?;
        std::fs::write(dir.join("labels.jsonl"), store.to_jsonl())?;
        std::fs::write(dir.join("mock_llm.jsonl"), MockBackend::to_jsonl(&mock_script))?;
        std::fs::write(dir.join("llm_labels.jsonl"), llm.to_jsonl())?;
        let vm_lines: String = vm_predictions
            .iter()
            .map(|p| serde_json::to_string(p).expect("serializes") + "\n")
            .collect();
        std::fs::write(dir.join("vm_predictions.jsonl"), vm_lines)?;
        std::fs::write(dir.join("model.json"), params.to_checkpoint())?;
        std::fs::write(dir.join("alignment.pgm"), &heatmap)?;
        std::fs::write(dir.join("report.txt"), &r)?;
    }

    Ok(DemoOutput {
        report: r,
        store,
        llm,
        mock_script,
        vm_predictions,
        heatmap,
    })
}
