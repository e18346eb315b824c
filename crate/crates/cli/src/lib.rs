//! Building blocks shared by the `layoutpref` binary: corpus layout, feature
//! extraction, sample assembly, report formatting and the bundled demo.

use std::collections::{BTreeMap, HashMap};

use anyhow::{Context, Result};

use layoutpref::align::ScoredChoice;
use layoutpref::graph::{Graph, GraphCorpus, Split};
use layoutpref::labels::LabelStore;
use layoutpref::layout::{layout_all_with, LayoutParams, LayoutSet, RenderParams};
use layoutpref::model::{layout_set_features, CandidateSample};

pub mod demo;
pub mod text;
pub mod toy;

/// A graph with its eight layouts and split.
#[derive(Debug, Clone)]
pub struct LaidOut {
    pub graph: Graph,
    pub split: Split,
    pub layouts: LayoutSet,
}

/// Computes the eight layouts of every graph. Graphs that cannot be laid out
/// (for example disconnected ones) are skipped with a warning.
pub fn lay_out(corpus: &GraphCorpus, params: &LayoutParams, seed: u64) -> Vec<LaidOut> {
    corpus
        .iter()
        .filter_map(|(g, split)| match layout_all_with(g, params, seed) {
            Ok(layouts) => Some(LaidOut {
                graph: g.clone(),
                split,
                layouts,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", g.id());
                None
            }
        })
        .collect()
}

pub fn layout_map(items: &[LaidOut]) -> HashMap<String, LayoutSet> {
    items
        .iter()
        .map(|i| (i.graph.id().to_string(), i.layouts.clone()))
        .collect()
}

/// Raster features for every graph, canonical order.
pub fn raster_feature_map(
    items: &[LaidOut],
    levels: u32,
    render: &RenderParams,
) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    items
        .iter()
        .map(|i| {
            let rows = layout_set_features(&i.graph, &i.layouts, levels, render)
                .with_context(|| format!("featurizing {}", i.graph.id()))?;
            Ok((i.graph.id().to_string(), rows))
        })
        .collect()
}

/// One sample per labeled graph in `split`, candidates in each graph's
/// display order.
pub fn training_samples(
    items: &[LaidOut],
    features: &BTreeMap<String, Vec<Vec<f64>>>,
    store: &LabelStore,
    split: Split,
) -> Result<Vec<CandidateSample>> {
    let mut out = Vec::new();
    for i in items.iter().filter(|i| i.split == split) {
        let id = i.graph.id();
        let Ok(target) = store.soft_target(id) else {
            continue;
        };
        let rows = features
            .get(id)
            .with_context(|| format!("no features for graph {id}"))?;
        out.push(CandidateSample::assemble(id, rows, Some(&target), i.layouts.display_order)?);
    }
    Ok(out)
}

/// Candidate samples without targets, for prediction.
pub fn query_samples(
    items: &[LaidOut],
    features: &BTreeMap<String, Vec<Vec<f64>>>,
    split: Option<Split>,
) -> Result<Vec<CandidateSample>> {
    items
        .iter()
        .filter(|i| split.is_none_or(|s| i.split == s))
        .map(|i| {
            let id = i.graph.id();
            let rows = features
                .get(id)
                .with_context(|| format!("no features for graph {id}"))?;
            Ok(CandidateSample::assemble(id, rows, None, i.layouts.display_order)?)
        })
        .collect()
}

/// Reads JSON-lines predictions; any record with `graph_id`, `choice` and an
/// optional `confidence` works, including model and LLM outputs.
pub fn read_predictions(text: &str) -> Result<Vec<ScoredChoice>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("prediction line {}", i + 1)))
        .collect()
}

/// Share of human votes on each graph that agree with the prediction.
pub fn per_graph_agreement(preds: &[ScoredChoice], store: &LabelStore) -> BTreeMap<String, f64> {
    preds
        .iter()
        .filter_map(|p| {
            let votes: Vec<_> = store.labels_for(&p.graph_id).collect();
            (!votes.is_empty()).then(|| {
                let hits = votes.iter().filter(|r| r.choice == p.choice).count();
                (p.graph_id.clone(), hits as f64 / votes.len() as f64)
            })
        })
        .collect()
}

/// Agreement pooled over every human vote on the predicted graphs; `None`
/// when no prediction overlaps a label.
pub fn pooled_agreement(preds: &[ScoredChoice], store: &LabelStore) -> Option<f64> {
    let (mut hits, mut votes) = (0usize, 0usize);
    for p in preds {
        for r in store.labels_for(&p.graph_id) {
            votes += 1;
            hits += usize::from(r.choice == p.choice);
        }
    }
    (votes > 0).then(|| hits as f64 / votes as f64)
}

/// Writes each graph as an edge list under `dir/graphs` plus a
/// `dir/manifest.jsonl` that loads them back.
pub fn write_corpus(dir: &std::path::Path, corpus: &GraphCorpus) -> Result<std::path::PathBuf> {
    use layoutpref::graph::{write_edge_list, ManifestEntry};
    let graphs = dir.join("graphs");
    std::fs::create_dir_all(&graphs)?;
    let mut manifest = String::new();
    for (g, split) in corpus.iter() {
        let rel = std::path::PathBuf::from("graphs").join(format!("{}.txt", g.id()));
        std::fs::write(dir.join(&rel), write_edge_list(g))?;
        let entry = ManifestEntry {
            id: g.id().to_string(),
            path: rel,
            split,
        };
        manifest.push_str(&serde_json::to_string(&entry)?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
