//! Preference labels: storage, soft targets, summary distributions and the
//! adaptive assignment of graphs to annotators.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::BufRead;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{is_permutation, Algorithm};
use crate::rng::{self, Domain, StreamRng};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("line {line}: unknown algorithm {tag:?}")]
    UnknownAlgorithm { line: usize, tag: String },
    #[error("graph {0} has no labels")]
    NoLabels(String),
    #[error("no labels match the filter")]
    EmptySelection,
    #[error("annotator {annotator} already labeled {graph_id}")]
    AlreadyLabeled { annotator: String, graph_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabelError>;

/// One annotator's pick for one graph. `choice` is in canonical algorithm
/// space; `display_order[position]` is the canonical index that was shown at
/// each 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub graph_id: String,
    pub annotator_id: String,
    pub choice: Algorithm,
    pub display_order: [usize; 8],
    pub duration_ms: u64,
    pub hard: bool,
    pub timestamp: DateTime<Utc>,
}

impl LabelRecord {
    /// 0-based display position at which the chosen layout was shown.
    pub fn chosen_position(&self) -> usize {
        self.display_order
            .iter()
            .position(|&a| a == self.choice.index())
            .expect("validated permutation")
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("label records always serialize")
    }

    /// Parses one JSON line, distinguishing unknown algorithm tags from
    /// other malformations.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LabelError::Record {
            line,
            msg: e.to_string(),
        })?;
        if let Some(tag) = value.get("choice").and_then(|c| c.as_str()) {
            if tag.parse::<Algorithm>().is_err() {
                return Err(LabelError::UnknownAlgorithm {
                    line,
                    tag: tag.to_string(),
                });
            }
        }
        let rec: LabelRecord = serde_json::from_value(value).map_err(|e| LabelError::Record {
            line,
            msg: e.to_string(),
        })?;
        if !is_permutation(&rec.display_order) {
            return Err(LabelError::Record {
                line,
                msg: format!("display_order {:?} is not a permutation of 0..8", rec.display_order),
            });
        }
        Ok(rec)
    }
}

/// Warning produced when a (graph, annotator) pair is labeled again; the
/// newer record replaces the older one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateWarning {
    pub graph_id: String,
    pub annotator_id: String,
    pub line: Option<usize>,
}

impl std::fmt::Display for DuplicateWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(
                f,
                "line {l}: annotator {} relabeled {}; keeping the newer record",
                self.annotator_id, self.graph_id
            ),
            None => write!(
                f,
                "annotator {} relabeled {}; keeping the newer record",
                self.annotator_id, self.graph_id
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LabelStore {
    records: Vec<LabelRecord>,
    index: HashMap<(String, String), usize>,
    by_graph: BTreeMap<String, Vec<usize>>,
    by_annotator: BTreeMap<String, Vec<usize>>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads JSON-lines records. Blank lines are skipped.
    pub fn ingest<R: BufRead>(reader: R) -> Result<(Self, Vec<DuplicateWarning>)> {
        let mut store = Self::new();
        let mut warnings = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = LabelRecord::from_json_line(&line, i + 1)?;
            if let Some(mut w) = store.insert(rec) {
                w.line = Some(i + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        Ok((store, warnings))
    }

    pub fn from_records(records: impl IntoIterator<Item = LabelRecord>) -> Self {
        let mut store = Self::new();
        for r in records {
            store.insert(r);
        }
        store
    }

    /// Adds a record; a repeated (graph, annotator) pair overwrites the
    /// earlier record in place and returns a warning.
    pub fn insert(&mut self, rec: LabelRecord) -> Option<DuplicateWarning> {
        let key = (rec.graph_id.clone(), rec.annotator_id.clone());
        if let Some(&i) = self.index.get(&key) {
            self.records[i] = rec;
            return Some(DuplicateWarning {
                graph_id: key.0,
                annotator_id: key.1,
                line: None,
            });
        }
        let i = self.records.len();
        self.by_graph.entry(rec.graph_id.clone()).or_default().push(i);
        self.by_annotator.entry(rec.annotator_id.clone()).or_default().push(i);
        self.index.insert(key, i);
        self.records.push(rec);
        None
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn graph_ids(&self) -> impl Iterator<Item = &str> {
        self.by_graph.keys().map(String::as_str)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.by_annotator.keys().map(String::as_str)
    }

    pub fn labels_for(&self, graph_id: &str) -> impl Iterator<Item = &LabelRecord> {
        self.by_graph
            .get(graph_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn labels_by(&self, annotator: &str) -> impl Iterator<Item = &LabelRecord> {
        self.by_annotator
            .get(annotator)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn count_for(&self, graph_id: &str) -> usize {
        self.by_graph.get(graph_id).map_or(0, Vec::len)
    }

    pub fn count_by(&self, annotator: &str) -> usize {
        self.by_annotator.get(annotator).map_or(0, Vec::len)
    }

    pub fn get(&self, graph_id: &str, annotator: &str) -> Option<&LabelRecord> {
        self.index
            .get(&(graph_id.to_string(), annotator.to_string()))
            .map(|&i| &self.records[i])
    }

    pub fn has_label(&self, graph_id: &str, annotator: &str) -> bool {
        self.get(graph_id, annotator).is_some()
    }

    /// `annotator -> graph -> choice`.
    pub fn choices_by_annotator(&self) -> BTreeMap<String, BTreeMap<String, Algorithm>> {
        let mut out: BTreeMap<String, BTreeMap<String, Algorithm>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.annotator_id.clone())
                .or_default()
                .insert(r.graph_id.clone(), r.choice);
        }
        out
    }

    pub fn soft_target(&self, graph_id: &str) -> Result<SoftTarget> {
        let mut counts = [0usize; 8];
        for r in self.labels_for(graph_id) {
            counts[r.choice.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(LabelError::NoLabels(graph_id.to_string()));
        }
        let mut q = [0.0; 8];
        for (qk, &c) in q.iter_mut().zip(&counts) {
            *qk = c as f64 / total as f64;
        }
        Ok(SoftTarget {
            graph_id: graph_id.to_string(),
            q,
        })
    }

    /// Number of distinct algorithms chosen for a graph.
    pub fn distinct_choices(&self, graph_id: &str) -> usize {
        self.labels_for(graph_id)
            .map(|r| r.choice)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Percentage of labeled graphs whose labels name exactly `k` distinct
    /// algorithms, at index `k - 1`.
    pub fn consensus_distribution(&self) -> [f64; 8] {
        let mut hist = [0usize; 8];
        for g in self.by_graph.keys() {
            hist[self.distinct_choices(g) - 1] += 1;
        }
        let total = self.by_graph.len().max(1) as f64;
        hist.map(|c| 100.0 * c as f64 / total)
    }

    pub fn choice_distribution(&self, filter: impl Fn(&LabelRecord) -> bool) -> Result<ChoiceDistribution> {
        let mut counts = [0usize; 8];
        for r in self.records.iter().filter(|r| filter(r)) {
            counts[r.choice.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(LabelError::EmptySelection);
        }
        Ok(ChoiceDistribution {
            counts,
            percent: counts.map(|c| 100.0 * c as f64 / total as f64),
            total,
        })
    }

    pub fn stats(&self) -> StoreStats {
        let graphs = self.by_graph.len();
        let choices = self.choice_distribution(|_| true).ok();
        StoreStats {
            total_labels: self.records.len(),
            graphs_labeled: graphs,
            annotators: self.by_annotator.len(),
            mean_labels_per_graph: if graphs == 0 {
                0.0
            } else {
                self.records.len() as f64 / graphs as f64
            },
            hard_labels: self.records.iter().filter(|r| r.hard).count(),
            choice_counts: Algorithm::ALL
                .iter()
                .map(|a| (a.tag().to_string(), choices.as_ref().map_or(0, |c| c.counts[a.index()])))
                .collect(),
            choice_percent: Algorithm::ALL
                .iter()
                .map(|a| (a.tag().to_string(), choices.as_ref().map_or(0.0, |c| c.percent[a.index()])))
                .collect(),
            consensus_percent: if graphs == 0 {
                [0.0; 8]
            } else {
                self.consensus_distribution()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub graph_id: String,
    /// Indexed by canonical algorithm index.
    pub q: [f64; 8],
}

impl SoftTarget {
    pub fn is_one_hot(&self) -> bool {
        self.q.iter().filter(|&&x| x > 0.0).count() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    pub counts: [usize; 8],
    pub percent: [f64; 8],
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub total_labels: usize,
    pub graphs_labeled: usize,
    pub annotators: usize,
    pub mean_labels_per_graph: f64,
    pub hard_labels: usize,
    pub choice_counts: BTreeMap<String, usize>,
    pub choice_percent: BTreeMap<String, f64>,
    /// Percentage of graphs with 1..=8 distinct chosen layouts.
    pub consensus_percent: [f64; 8],
}

/// Motivational message shown on every 50th label by an annotator.
pub fn progress_message(store: &LabelStore, annotator: &str) -> Option<String> {
    let n = store.count_by(annotator);
    if n == 0 || n % 50 != 0 {
        return None;
    }
    Some(format!(
        "Good job! You have labeled {} graphs. You have labeled more graphs than {:.2}% of users. Please keep up the great work!",
        thousands(n),
        percentile(store, annotator)
    ))
}

/// Percentage of other annotators with strictly fewer labels; 100 when the
/// annotator is the only one.
pub fn percentile(store: &LabelStore, annotator: &str) -> f64 {
    let mine = store.count_by(annotator);
    let others: Vec<usize> = store
        .annotators()
        .filter(|&a| a != annotator)
        .map(|a| store.count_by(a))
        .collect();
    if others.is_empty() {
        return 100.0;
    }
    100.0 * others.iter().filter(|&&c| c < mine).count() as f64 / others.len() as f64
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    Graph { graph_id: String, from_skip_queue: bool },
    Exhausted,
}

/// Adaptive assignment: skipped graphs resurface with a fixed probability;
/// otherwise the annotator gets an unlabeled graph from the highest-priority
/// tier (no labels, then one label, then conflicting labels, then unanimous
/// ones, fewer labels first within a tier). Graphs currently served to other
/// annotators count as labeled for tiering, so concurrent annotators are
/// spread across graphs.
#[derive(Debug, Clone)]
pub struct AssignmentState {
    corpus: Vec<String>,
    skip_queues: HashMap<String, VecDeque<String>>,
    outstanding: HashMap<String, String>,
    resurface_probability: f64,
    rng: StreamRng,
}

impl AssignmentState {
    pub const DEFAULT_RESURFACE: f64 = 0.40;

    pub fn new(corpus: impl IntoIterator<Item = String>, seed: u64) -> Self {
        Self::with_probability(corpus, seed, Self::DEFAULT_RESURFACE)
    }

    pub fn with_probability(corpus: impl IntoIterator<Item = String>, seed: u64, resurface_probability: f64) -> Self {
        let mut corpus: Vec<String> = corpus.into_iter().collect();
        corpus.sort();
        corpus.dedup();
        Self {
            corpus,
            skip_queues: HashMap::new(),
            outstanding: HashMap::new(),
            resurface_probability,
            rng: rng::stream(seed, Domain::Assignment, 0),
        }
    }

    pub fn skip_queue(&self, annotator: &str) -> Vec<String> {
        self.skip_queues
            .get(annotator)
            .map(|q| q.iter().cloned().collect())
            .unwrap_or_default()
    }

    fn pending_elsewhere(&self, graph_id: &str, annotator: &str) -> usize {
        self.outstanding
            .iter()
            .filter(|(a, g)| a.as_str() != annotator && g.as_str() == graph_id)
            .count()
    }

    fn tier(&self, store: &LabelStore, graph_id: &str, annotator: &str) -> (u8, usize) {
        let labels = store.count_for(graph_id);
        let count = labels + self.pending_elsewhere(graph_id, annotator);
        match count {
            0 => (0, 0),
            1 => (1, 1),
            _ if store.distinct_choices(graph_id) > 1 => (2, count),
            _ => (3, count),
        }
    }

    pub fn next_assignment(&mut self, store: &LabelStore, annotator: &str) -> Assignment {
        self.outstanding.remove(annotator);
        let queue_len = self.skip_queues.get(annotator).map_or(0, VecDeque::len);
        if queue_len > 0 && self.rng.random::<f64>() < self.resurface_probability {
            return self.serve_from_queue(annotator);
        }
        let queued: BTreeSet<&str> = self
            .skip_queues
            .get(annotator)
            .map(|q| q.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let mut best: Option<(u8, usize)> = None;
        let mut ties: Vec<&str> = Vec::new();
        for g in &self.corpus {
            if store.has_label(g, annotator) || queued.contains(g.as_str()) {
                continue;
            }
            let key = self.tier(store, g, annotator);
            match best {
                Some(b) if key > b => {}
                Some(b) if key == b => ties.push(g),
                _ => {
                    best = Some(key);
                    ties.clear();
                    ties.push(g);
                }
            }
        }
        if ties.is_empty() {
            return if queue_len > 0 {
                self.serve_from_queue(annotator)
            } else {
                Assignment::Exhausted
            };
        }
        let pick = ties[self.rng.random_range(0..ties.len())].to_string();
        self.outstanding.insert(annotator.to_string(), pick.clone());
        Assignment::Graph {
            graph_id: pick,
            from_skip_queue: false,
        }
    }

    /// Serves the head of the skip queue and rotates it to the back, so
    /// repeated resurfacing cycles through the queue in skip order.
    fn serve_from_queue(&mut self, annotator: &str) -> Assignment {
        let q = self.skip_queues.get_mut(annotator).expect("nonempty queue");
        let head = q.pop_front().expect("nonempty queue");
        q.push_back(head.clone());
        self.outstanding.insert(annotator.to_string(), head.clone());
        Assignment::Graph {
            graph_id: head,
            from_skip_queue: true,
        }
    }

    pub fn record_skip(&mut self, store: &LabelStore, annotator: &str, graph_id: &str) -> Result<()> {
        if store.has_label(graph_id, annotator) {
            return Err(LabelError::AlreadyLabeled {
                annotator: annotator.to_string(),
                graph_id: graph_id.to_string(),
            });
        }
        let q = self.skip_queues.entry(annotator.to_string()).or_default();
        if !q.iter().any(|g| g == graph_id) {
            q.push_back(graph_id.to_string());
        }
        self.release(annotator, graph_id);
        Ok(())
    }

    /// Call after a label is stored: the graph leaves the annotator's skip
    /// queue and stops counting as outstanding.
    pub fn record_label(&mut self, annotator: &str, graph_id: &str) {
        if let Some(q) = self.skip_queues.get_mut(annotator) {
            q.retain(|g| g != graph_id);
        }
        self.release(annotator, graph_id);
    }

    fn release(&mut self, annotator: &str, graph_id: &str) {
        if self.outstanding.get(annotator).is_some_and(|g| g == graph_id) {
            self.outstanding.remove(annotator);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::record;
    use super::*;
    use Algorithm::*;

    #[test]
    fn ingest_counts_and_duplicates() {
        let recs = [
            record("g1", "a", Neato),
            record("g1", "b", Spring),
            record("g2", "a", Fdp),
        ];
        let text: String = recs.iter().map(|r| r.to_json_line() + "\n").collect();
        let (store, warnings) = LabelStore::ingest(text.as_bytes()).unwrap();
        assert_eq!(store.count_for("g1"), 2);
        assert_eq!(store.count_for("g2"), 1);
        assert!(warnings.is_empty());

        let dup = text.clone() + &record("g1", "a", Pmds).to_json_line();
        let (store2, warnings) = LabelStore::ingest(dup.as_bytes()).unwrap();
        assert_eq!(store2.len(), 3);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].line, Some(4));
        assert_eq!(store2.get("g1", "a").unwrap().choice, Pmds);
    }

    #[test]
    fn ingest_round_trip_is_a_fixed_point() {
        let store = LabelStore::from_records([
            record("g1", "a", Neato),
            record("g2", "b", KamadaKawai),
            record("g1", "b", Spectral),
        ]);
        let once = store.to_jsonl();
        let (again, _) = LabelStore::ingest(once.as_bytes()).unwrap();
        assert_eq!(again.to_jsonl(), once);
    }

    #[test]
    fn ingest_errors_carry_line_numbers() {
        let good = record("g", "a", Neato).to_json_line();
        let bad_tag = good.replace("\"neato\"", "\"circo\"");
        let text = format!("{good}\n{bad_tag}\n");
        match LabelStore::ingest(text.as_bytes()) {
            Err(LabelError::UnknownAlgorithm { line: 2, tag }) => assert_eq!(tag, "circo"),
            other => panic!("{other:?}"),
        }
        let text = format!("{good}\n\n{{not json\n");
        assert!(matches!(LabelStore::ingest(text.as_bytes()), Err(LabelError::Record { line: 3, .. })));
        let bad_perm = good.replace("[0,1,2,3,4,5,6,7]", "[0,0,2,3,4,5,6,7]");
        assert!(matches!(LabelStore::ingest(bad_perm.as_bytes()), Err(LabelError::Record { line: 1, .. })));
    }

    #[test]
    fn record_field_names_are_fixed() {
        let v: serde_json::Value = serde_json::from_str(&record("g", "a", Fa2).to_json_line()).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let want: BTreeSet<&str> = [
            "graph_id",
            "annotator_id",
            "choice",
            "display_order",
            "duration_ms",
            "hard",
            "timestamp",
        ]
        .into();
        assert_eq!(keys, want);
    }

    #[test]
    fn soft_targets() {
        let store = LabelStore::from_records(
            ["a", "b", "c"].iter().map(|a| record("g", a, KamadaKawai)).chain(
                ["d", "e"].iter().map(|a| record("g", a, Neato)),
            ),
        );
        let q = store.soft_target("g").unwrap().q;
        assert_eq!(q[KamadaKawai.index()], 0.6);
        assert_eq!(q[Neato.index()], 0.4);
        assert_eq!(q.iter().sum::<f64>(), 1.0);
        assert!(matches!(store.soft_target("nope"), Err(LabelError::NoLabels(_))));

        let five = LabelStore::from_records(
            [Neato, Fa2, Fdp, Sfdp, Pmds]
                .iter()
                .enumerate()
                .map(|(i, &a)| record("g", &i.to_string(), a)),
        );
        let q = five.soft_target("g").unwrap().q;
        assert_eq!(q.iter().filter(|&&x| x == 0.2).count(), 5);
    }

    #[test]
    fn consensus_histogram() {
        let store = LabelStore::from_records([
            record("g1", "a", Neato),
            record("g1", "b", Neato),
            record("g2", "a", Neato),
            record("g2", "b", Fa2),
            record("g3", "a", Spring),
            record("g4", "a", Spring),
        ]);
        let h = store.consensus_distribution();
        assert_eq!(h[0], 75.0);
        assert_eq!(h[1], 25.0);
        assert!((h.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn choice_distribution_filters() {
        let store = LabelStore::from_records([record("g1", "a", Neato), record("g1", "b", Fa2)]);
        let d = store.choice_distribution(|r| r.annotator_id == "a").unwrap();
        assert_eq!(d.total, 1);
        assert_eq!(d.percent[Neato.index()], 100.0);
        assert!(store.choice_distribution(|r| r.annotator_id == "z").is_err());
    }

    #[test]
    fn progress_every_fifty() {
        let mut store = LabelStore::new();
        for i in 0..49 {
            store.insert(record(&format!("g{i}"), "me", Neato));
        }
        for i in 0..10 {
            store.insert(record(&format!("g{i}"), "low", Neato));
        }
        for i in 0..80 {
            store.insert(record(&format!("g{i}"), "high", Neato));
        }
        assert_eq!(progress_message(&store, "me"), None);
        store.insert(record("g49", "me", Neato));
        assert_eq!(
            progress_message(&store, "me").unwrap(),
            "Good job! You have labeled 50 graphs. You have labeled more graphs than 50.00% of users. Please keep up the great work!"
        );
        assert_eq!(thousands(1234567), "1,234,567");
        assert_eq!(thousands(999), "999");
    }

    fn corpus(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i:02}")).collect()
    }

    #[test]
    fn zero_label_graphs_come_first() {
        let mut store = LabelStore::new();
        for i in 0..9 {
            store.insert(record(&format!("g{i:02}"), "other", Neato));
        }
        let mut state = AssignmentState::new(corpus(10), 3);
        for _ in 0..20 {
            let a = state.next_assignment(&store, &format!("fresh{}", 0));
            assert_eq!(
                a,
                Assignment::Graph {
                    graph_id: "g09".into(),
                    from_skip_queue: false
                }
            );
        }
    }

    #[test]
    fn conflicting_graphs_precede_unanimous_ones() {
        let store = LabelStore::from_records([
            record("g00", "x", Neato),
            record("g00", "y", Neato),
            record("g01", "x", Neato),
            record("g01", "y", Fa2),
        ]);
        let mut state = AssignmentState::new(corpus(2), 0);
        for _ in 0..10 {
            match state.next_assignment(&store, "z") {
                Assignment::Graph { graph_id, .. } => assert_eq!(graph_id, "g01"),
                Assignment::Exhausted => panic!(),
            }
        }
    }

    #[test]
    fn concurrent_annotators_get_different_fresh_graphs() {
        let store = LabelStore::new();
        let mut state = AssignmentState::new(corpus(5), 1);
        let mut served = BTreeSet::new();
        for a in ["a", "b", "c", "d", "e"] {
            match state.next_assignment(&store, a) {
                Assignment::Graph { graph_id, .. } => assert!(served.insert(graph_id)),
                Assignment::Exhausted => panic!(),
            }
        }
    }

    #[test]
    fn skip_queue_semantics() {
        let mut store = LabelStore::new();
        let mut state = AssignmentState::new(corpus(6), 2);
        for g in ["g03", "g01", "g04", "g00", "g05"] {
            state.record_skip(&store, "a", g).unwrap();
        }
        state.record_skip(&store, "a", "g03").unwrap();
        assert_eq!(state.skip_queue("a"), vec!["g03", "g01", "g04", "g00", "g05"]);
        // Queue heads resurface in skip order.
        let mut resurfaced = Vec::new();
        while resurfaced.len() < 5 {
            if let Assignment::Graph { graph_id, from_skip_queue: true } = state.next_assignment(&store, "a") {
                resurfaced.push(graph_id);
            }
        }
        assert_eq!(resurfaced, vec!["g03", "g01", "g04", "g00", "g05"]);

        store.insert(record("g01", "a", Neato));
        state.record_label("a", "g01");
        assert_eq!(state.skip_queue("a"), vec!["g03", "g04", "g00", "g05"]);
        assert!(matches!(
            state.record_skip(&store, "a", "g01"),
            Err(LabelError::AlreadyLabeled { .. })
        ));
    }

    #[test]
    fn exhaustion() {
        let store = LabelStore::from_records([record("g00", "a", Neato), record("g01", "a", Fa2)]);
        let mut state = AssignmentState::new(corpus(2), 0);
        assert_eq!(state.next_assignment(&store, "a"), Assignment::Exhausted);
        let store = LabelStore::from_records([record("g00", "a", Neato)]);
        let mut state = AssignmentState::new(corpus(2), 0);
        state.record_skip(&store, "a", "g01").unwrap();
        // Only the skipped graph remains, so it is served every time.
        for _ in 0..5 {
            assert_eq!(
                state.next_assignment(&store, "a"),
                Assignment::Graph {
                    graph_id: "g01".into(),
                    from_skip_queue: true
                }
            );
        }
    }

    #[test]
    fn never_serves_a_labeled_graph() {
        let mut store = LabelStore::new();
        let mut state = AssignmentState::new(corpus(8), 5);
        let mut rng = rng::stream(5, Domain::Synthetic, 0);
        for step in 0..200 {
            let annotator = format!("a{}", step % 3);
            match state.next_assignment(&store, &annotator) {
                Assignment::Graph { graph_id, .. } => {
                    assert!(!store.has_label(&graph_id, &annotator));
                    if rng.random::<f64>() < 0.3 {
                        state.record_skip(&store, &annotator, &graph_id).unwrap();
                    } else {
                        store.insert(record(&graph_id, &annotator, Neato));
                        state.record_label(&annotator, &graph_id);
                    }
                }
                Assignment::Exhausted => {
                    assert_eq!(store.count_by(&annotator), 8);
                }
            }
        }
    }
}
