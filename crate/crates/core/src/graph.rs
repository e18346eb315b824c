//! Undirected simple graphs, the unit of labeling.
//!
//! Graphs are read from a whitespace-separated edge list (`u v` per line,
//! `#` comments) or from a GraphML subset holding only `<node>` and `<edge>`
//! elements. Node identifiers are renumbered to `0..n` in order of first
//! appearance, except that integer ids already forming exactly `0..n` are
//! kept as they are.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(String, String),
    #[error("graph has no nodes")]
    Empty,
    #[error("graph {id} appears in more than one split")]
    SplitConflict { id: String },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    EdgeList,
    GraphMl,
}

impl GraphFormat {
    /// Picks the format from a file extension; anything that is not
    /// `.graphml`/`.xml` is treated as an edge list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("graphml") | Some("xml") => GraphFormat::GraphMl,
            _ => GraphFormat::EdgeList,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    id: String,
    n: usize,
    /// Sorted `(u, v)` with `u < v`.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists.
    adj: Vec<Vec<usize>>,
    connected: bool,
}

impl Graph {
    /// Builds a graph from node count and edges, validating simplicity.
    pub fn new(id: impl Into<String>, n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Parse {
                    line: 0,
                    msg: format!("edge ({a}, {b}) references a node outside 0..{n}"),
                });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            let key = (a.min(b), a.max(b));
            if !set.insert(key) {
                return Err(GraphError::DuplicateEdge(a.to_string(), b.to_string()));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let mut g = Graph {
            id: id.into(),
            n,
            edges,
            adj,
            connected: false,
        };
        g.connected = g.count_components() == 1;
        Ok(g)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    fn count_components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut components = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            components += 1;
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &self.adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        components
    }

    /// Hop distances from `source`; unreachable nodes get `usize::MAX`.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Dense all-pairs hop-distance matrix (row-major, `n * n`), or `None`
    /// if the graph is disconnected.
    pub fn distance_matrix(&self) -> Option<Vec<f64>> {
        if !self.connected {
            return None;
        }
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for s in 0..n {
            for (t, &h) in self.bfs_distances(s).iter().enumerate() {
                d[s * n + t] = h as f64;
            }
        }
        Some(d)
    }
}

/// Parses a graph from text. The graph id is left empty; callers set it
/// with [`Graph::with_id`].
pub fn parse_graph(text: &str, format: GraphFormat) -> Result<Graph> {
    match format {
        GraphFormat::EdgeList => parse_edge_list(text),
        GraphFormat::GraphMl => parse_graphml(text),
    }
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_graph(&text, GraphFormat::from_path(path))?.with_id(id))
}

#[derive(Default)]
struct Renumber {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Renumber {
    fn get(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.to_string(), i);
        self.names.push(name.to_string());
        i
    }
}

fn finish(ids: Renumber, raw: Vec<(usize, usize, usize)>) -> Result<Graph> {
    let n = ids.names.len();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(raw.len());
    for (_, a, b) in raw {
        if a == b {
            return Err(GraphError::SelfLoop(ids.names[a].clone()));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(GraphError::DuplicateEdge(
                ids.names[a].clone(),
                ids.names[b].clone(),
            ));
        }
        edges.push((a, b));
    }
    Graph::new("", n, &edges)
}

fn parse_edge_list(text: &str) -> Result<Graph> {
    let mut ids = Renumber::default();
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        // Also accept the "(u, v)" form written by `serialize_edge_list`.
        let cleaned = content.replace(['(', ')', ','], " ");
        let fields: Vec<&str> = cleaned.split_whitespace().collect();
        match fields.as_slice() {
            [a] => {
                check_int(a, line_no)?;
                ids.get(a);
            }
            [a, b] => {
                check_int(a, line_no)?;
                check_int(b, line_no)?;
                let u = ids.get(a);
                let v = ids.get(b);
                raw.push((line_no, u, v));
            }
            _ => {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: format!("expected `u v`, found {:?}", content),
                })
            }
        }
    }
    // Ids that already form 0..n keep their numbering.
    let n = ids.names.len();
    let contiguous = ids.names.iter().all(|name| {
        name.parse::<usize>().is_ok_and(|v| v < n && name == &v.to_string())
    });
    if contiguous {
        let map: Vec<usize> = ids.names.iter().map(|s| s.parse().unwrap()).collect();
        let mut by_value = Renumber::default();
        for v in 0..n {
            by_value.get(&v.to_string());
        }
        let raw = raw.into_iter().map(|(l, a, b)| (l, map[a], map[b])).collect();
        return finish(by_value, raw);
    }
    finish(ids, raw)
}

fn check_int(token: &str, line: usize) -> Result<u64> {
    token.parse::<u64>().map_err(|_| GraphError::Parse {
        line,
        msg: format!("{token:?} is not a nonnegative integer node id"),
    })
}

fn parse_graphml(text: &str) -> Result<Graph> {
    let node_re = Regex::new(r#"<node\b[^>]*\bid\s*=\s*"([^"]*)""#).expect("static regex");
    let edge_re = Regex::new(r#"<edge\b[^>]*>"#).expect("static regex");
    let src_re = Regex::new(r#"\bsource\s*=\s*"([^"]*)""#).expect("static regex");
    let tgt_re = Regex::new(r#"\btarget\s*=\s*"([^"]*)""#).expect("static regex");

    let mut ids = Renumber::default();
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        for cap in node_re.captures_iter(line) {
            ids.get(&cap[1]);
        }
        for m in edge_re.find_iter(line) {
            let tag = m.as_str();
            let (Some(s), Some(t)) = (src_re.captures(tag), tgt_re.captures(tag)) else {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: "edge element without source/target".into(),
                });
            };
            let u = ids.get(&s[1]);
            let v = ids.get(&t[1]);
            raw.push((line_no, u, v));
        }
    }
    finish(ids, raw)
}

/// One `(u, v)` per line with `u < v`, lexicographically sorted.
pub fn serialize_edge_list(g: &Graph) -> String {
    g.edges
        .iter()
        .map(|(u, v)| format!("({u}, {v})"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One `i: n1, n2, ...` line per node with ascending neighbors.
pub fn serialize_adjacency_list(g: &Graph) -> String {
    let mut out = String::new();
    for v in 0..g.n {
        if v > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{v}:");
        let nbrs: Vec<String> = g.adj[v].iter().map(|w| w.to_string()).collect();
        if !nbrs.is_empty() {
            out.push(' ');
            out.push_str(&nbrs.join(", "));
        }
    }
    out
}

/// Plain `u v` edge-list text accepted by [`parse_graph`]. Isolated nodes are
/// written as single-id lines so they survive a round trip.
pub fn write_edge_list(g: &Graph) -> String {
    let mut out = String::new();
    let mut covered = vec![false; g.n];
    for &(u, v) in &g.edges {
        covered[u] = true;
        covered[v] = true;
    }
    for (v, c) in covered.iter().enumerate() {
        if !c {
            let _ = writeln!(out, "{v}");
        }
    }
    for &(u, v) in &g.edges {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
}

/// Graphs keyed by id, each tagged with exactly one split.
#[derive(Debug, Clone, Default)]
pub struct GraphCorpus {
    graphs: BTreeMap<String, Graph>,
    splits: BTreeMap<String, Split>,
}

impl GraphCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, graph: Graph, split: Split) -> Result<()> {
        let id = graph.id().to_string();
        if self.splits.contains_key(&id) {
            return Err(GraphError::SplitConflict { id });
        }
        self.splits.insert(id.clone(), split);
        self.graphs.insert(id, graph);
        Ok(())
    }

    /// Loads a line-delimited JSON manifest of `{id, path, split}` records.
    /// Relative paths resolve against the manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut corpus = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| GraphError::Manifest {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let file = if entry.path.is_absolute() {
                entry.path.clone()
            } else {
                base.join(&entry.path)
            };
            let g = read_graph(&file)?.with_id(entry.id.clone());
            if !g.is_connected() {
                log::warn!("graph {} is disconnected", entry.id);
            }
            corpus.insert(g, entry.split)?;
        }
        Ok(corpus)
    }

    pub fn get(&self, id: &str) -> Option<&Graph> {
        self.graphs.get(id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Graphs in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&Graph, Split)> {
        self.graphs.values().map(|g| (g, self.splits[g.id()]))
    }

    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.splits
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn parses_smallest_path() {
        let g = parse_graph("0 1\n1 2", GraphFormat::EdgeList).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert!(g.is_connected());
    }

    #[test]
    fn rejects_self_loop() {
        let err = parse_graph("0 0", GraphFormat::EdgeList).unwrap_err();
        assert!(matches!(err, GraphError::SelfLoop(_)), "{err}");
    }

    #[test]
    fn rejects_duplicate_edge_in_either_direction() {
        let err = parse_graph("0 1\n1 0", GraphFormat::EdgeList).unwrap_err();
        assert!(matches!(err, GraphError::DuplicateEdge(..)));
    }

    #[test]
    fn rejects_empty_graph() {
        let err = parse_graph("# nothing\n\n", GraphFormat::EdgeList).unwrap_err();
        assert!(matches!(err, GraphError::Empty));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_graph("0 1\n1 2 3\n", GraphFormat::EdgeList).unwrap_err();
        match err {
            GraphError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let err = parse_graph("0 1\nx 2\n", GraphFormat::EdgeList).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
    }

    #[test]
    fn renumbers_in_first_appearance_order() {
        let g = parse_graph("10 7 # c\n7 3\n", GraphFormat::EdgeList).unwrap();
        // 10 -> 0, 7 -> 1, 3 -> 2
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn disconnected_graph_is_accepted_but_flagged() {
        let g = parse_graph("0 1\n2 3", GraphFormat::EdgeList).unwrap();
        assert!(!g.is_connected());
        assert!(g.distance_matrix().is_none());
    }

    #[test]
    fn graphml_subset() {
        let text = r#"<?xml version="1.0"?>
<graphml><graph edgedefault="undirected">
<node id="n0"/><node id="n1"/>
<node id="n2"/>
<edge id="e0" source="n0" target="n1"/>
<edge source="n1" target="n2"></edge>
</graph></graphml>"#;
        let g = parse_graph(text, GraphFormat::GraphMl).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn edge_list_serialization() {
        assert_eq!(serialize_edge_list(&path(3)), "(0, 1)\n(1, 2)");
        assert_eq!(serialize_edge_list(&complete(3)), "(0, 1)\n(0, 2)\n(1, 2)");
    }

    #[test]
    fn k4_edge_list_matches_pair_enumeration() {
        let mut expected = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                if a < b {
                    expected.push(format!("({a}, {b})"));
                }
            }
        }
        let text = serialize_edge_list(&complete(4));
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text, expected.join("\n"));
    }

    #[test]
    fn adjacency_list_serialization() {
        assert_eq!(serialize_adjacency_list(&path(3)), "0: 1\n1: 0, 2\n2: 1");
        let star = Graph::new("S4", 5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert_eq!(
            serialize_adjacency_list(&star),
            "0: 1, 2, 3, 4\n1: 0\n2: 0\n3: 0\n4: 0"
        );
        for line in serialize_adjacency_list(&cycle(5)).lines() {
            assert!(line.split(':').nth(1).unwrap().trim().len() > 0);
        }
    }

    #[test]
    fn bfs_distances_on_cycle() {
        let d = cycle(6).bfs_distances(0);
        assert_eq!(d, vec![0, 1, 2, 3, 2, 1]);
    }

    #[test]
    fn corpus_rejects_split_conflicts() {
        let mut c = GraphCorpus::new();
        c.insert(path(3), Split::Train).unwrap();
        assert!(c.insert(path(3), Split::Test).is_err());
        assert_eq!(c.ids_in(Split::Train), vec!["P3".to_string()]);
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "0 1\n1 2\n").unwrap();
        std::fs::write(dir.path().join("b.txt"), "0 1\n").unwrap();
        std::fs::write(
            dir.path().join("manifest.jsonl"),
            "{\"id\":\"a\",\"path\":\"a.txt\",\"split\":\"train\"}\n\
             {\"id\":\"b\",\"path\":\"b.txt\",\"split\":\"test\"}\n",
        )
        .unwrap();
        let c = GraphCorpus::load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.split_of("b"), Some(Split::Test));
        assert_eq!(c.get("a").unwrap().node_count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = Graph> {
            (2usize..14).prop_flat_map(|n| {
                proptest::collection::btree_set((0..n, 0..n), 1..30).prop_map(move |pairs| {
                    let edges: BTreeSet<(usize, usize)> = pairs
                        .into_iter()
                        .filter(|(a, b)| a != b)
                        .map(|(a, b)| (a.min(b), a.max(b)))
                        .collect();
                    let edges: Vec<_> = edges.into_iter().collect();
                    Graph::new("g", n, &edges).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn edge_list_round_trip_preserves_numbering(g in arb_graph()) {
                let covered: BTreeSet<usize> = g.edges().iter().flat_map(|&(u, v)| [u, v]).collect();
                prop_assume!(covered.len() == g.node_count());
                let back = parse_graph(&serialize_edge_list(&g), GraphFormat::EdgeList).unwrap();
                prop_assert_eq!(back.edges(), g.edges());
                prop_assert_eq!(back.node_count(), g.node_count());
                let back = parse_graph(&write_edge_list(&g), GraphFormat::EdgeList).unwrap();
                prop_assert_eq!(back.edges(), g.edges());
            }

            #[test]
            fn degree_sum_is_twice_edge_count(g in arb_graph()) {
                let total: usize = (0..g.node_count()).map(|v| g.degree(v)).sum();
                prop_assert_eq!(total, 2 * g.edge_count());
            }

            #[test]
            fn serializers_are_deterministic(g in arb_graph()) {
                prop_assert_eq!(serialize_edge_list(&g), serialize_edge_list(&g.clone()));
                prop_assert_eq!(serialize_adjacency_list(&g), serialize_adjacency_list(&g.clone()));
            }
        }
    }
}
