//! Prompting a chat-completion model to pick the best of eight layouts.
//!
//! Four prompt families are supported: zero-shot over images, few-shot over
//! images, structural text (graph structure plus node coordinates) and a
//! memory bank of per-layout embeddings. Responses are parsed for a final
//! "layout N" sentence, and the probability of the digit token is kept as a
//! confidence score.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use base64::Engine as _;
use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{self, EmbedError, SkipGramParams, WalkParams};
use crate::graph::{serialize_adjacency_list, serialize_edge_list, Graph};
use crate::labels::LabelStore;
use crate::layout::{normalize_or_center, render, Algorithm, Layout, LayoutError, LayoutSet, RenderParams};
use crate::rng::{self, Domain};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no \"layout N\" conclusion found in response: {0:?}")]
    Unparseable(String),
    #[error("response picked layout {0}; expected 1..8")]
    OutOfRange(u64),
    #[error("prompt needs about {estimated} tokens, over the limit of {limit}")]
    OverBudget { estimated: usize, limit: usize },
    #[error("memory-bank prompts need per-layout embeddings")]
    MissingBank,
    #[error("memory bank has no good entry")]
    EmptyBank,
    #[error("no embeddings for graph {0}")]
    MissingFeatures(String),
    #[error("embedding dimension {got} differs from the bank's {want}")]
    BankDim { want: usize, got: usize },
    #[error("shot count {0} outside 0..=10")]
    ShotCount(usize),
    #[error("zero-shot prompts take no shots")]
    ZeroShotWithShots,
    #[error("only {available} labeled training graphs for {wanted} shots")]
    NotEnoughShots { wanted: usize, available: usize },
    #[error("graphs {0:?} are in both the shot pool and the labeling targets")]
    ShotLeak(Vec<String>),
    #[error("log-probability of the choice token is -inf")]
    NegInfLogprob,
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("endpoint rejected the credential (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {0} attempts")]
    RateLimited(usize),
    #[error("request timed out after {0} attempts")]
    Timeout(usize),
    #[error("transport error after {attempts} attempts: {msg}")]
    Transport { attempts: usize, msg: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("mock script has no response for graph {0}")]
    MockMissing(String),
    #[error("mock script line {line}: {msg}")]
    MockScript { line: usize, msg: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LlmError>;

pub const DEFAULT_TOKEN_BUDGET: usize = 120_000;
/// Flat per-image cost used by the token estimator.
pub const IMAGE_TOKENS: usize = 255;
pub const MAX_SHOTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    EdgeList,
    Adjacency,
    Node2vec,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PromptStrategy {
    ZeroShotImage,
    FewShotImage { shots: usize },
    Structural { structure: StructureKind, shots: usize },
    MemoryBank { shots: usize },
}

impl PromptStrategy {
    pub fn shots(&self) -> usize {
        match *self {
            Self::ZeroShotImage => 0,
            Self::FewShotImage { shots } | Self::Structural { shots, .. } | Self::MemoryBank { shots } => shots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots() > MAX_SHOTS {
            return Err(LlmError::ShotCount(self.shots()));
        }
        if let Self::MemoryBank { shots: 0 } = self {
            return Err(LlmError::EmptyBank);
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            Self::ZeroShotImage => "zero_shot_image".into(),
            Self::FewShotImage { shots } => format!("few_shot_image/{shots}"),
            Self::Structural { structure, shots } => {
                let s = serde_json::to_value(structure).expect("serializes");
                format!("structural_{}/{shots}", s.as_str().unwrap_or_default())
            }
            Self::MemoryBank { shots } => format!("memory_bank/{shots}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

impl ContentPart {
    pub fn text(t: impl Into<String>) -> Self {
        Self::Text { text: t.into() }
    }

    pub fn png(bytes: &[u8]) -> Self {
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        Self::ImageUrl {
            image_url: ImageUrl {
                url: format!("data:image/png;base64,{b64}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn user(content: Vec<ContentPart>) -> Self {
        Self {
            role: "user".into(),
            content,
        }
    }

    /// All text parts joined by newlines.
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Conservative token count: a quarter of the text characters, rounded up,
/// plus a flat cost per image.
pub fn estimate_tokens(messages: &[Message]) -> usize {
    let mut chars = 0;
    let mut images = 0;
    for m in messages {
        for p in &m.content {
            match p {
                ContentPart::Text { text } => chars += text.chars().count(),
                ContentPart::ImageUrl { .. } => images += 1,
            }
        }
    }
    chars.div_ceil(4) + IMAGE_TOKENS * images
}

pub fn check_budget(messages: &[Message], limit: usize) -> Result<usize> {
    let estimated = estimate_tokens(messages);
    if estimated > limit {
        return Err(LlmError::OverBudget { estimated, limit });
    }
    Ok(estimated)
}

const ZERO_SHOT_HEAD: &str = "You are an expert in human aesthetics. I want you to evaluate the graph's layout \
primarily from an aesthetic perspective. Based on your aesthetic judgment, select the layout that best aligns \
with human preferences. ";
const ZERO_SHOT_TAIL: &str = "Let's think step by step. Give me the answer with the style: \"Reason: Result: \
layout ?\" Just give me plain text, do not add emphasize markdown.";

const FEW_SHOT_INTRO: &str = "To systematically analyze the layout preferences, we provided multiple exemplar \
images for layout assessment and human aesthetic preference exploration:";
const FEW_SHOT_OUTRO: &str = "We request a comprehensive analysis of the aesthetic criteria that influenced these \
layout selections. It is important to note that the preference is independent of the absolute layout numbering.";

const ORDINALS: [&str; MAX_SHOTS] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

const STRUCTURAL_TEMPLATE: &str = r#"You are an expert in human aesthetics. I want you to evaluate the graph's layout primarily from an aesthetic perspective.

Below are examples of layouts labeled as "good" or "bad" based on human feedback:

{examples}

Now, please evaluate the new graph:

Context: {context}

Graph Structure:
{graph embedding}

Layout Coordinates to Evaluate:
{features}

Based on your aesthetic judgment, select the layout that best aligns with human preferences.

And the last sentence must start with "In conclusion, I will pick layout X" where X is a number without any other symbols around."#;

const MEMORY_BANK_TEMPLATE: &str = r#"You are an expert in human aesthetics. Below are examples of layouts labeled as "good" or "bad" based on human feedback:

Good Layouts:
{good_layouts}

Now, evaluate the following layouts and select the one that is most aligned with human aesthetics:
Features: {features}

And the last sentence must start with "In conclusion, I will pick layout X"."#;

/// A training graph shown as an example, with the algorithm humans preferred.
#[derive(Debug, Clone, Copy)]
pub struct Shot<'a> {
    pub graph: &'a Graph,
    pub layouts: &'a LayoutSet,
    pub chosen: Algorithm,
}

impl Shot<'_> {
    /// 1-based display position of the preferred layout.
    pub fn chosen_position(&self) -> usize {
        self.layouts.position_of(self.chosen) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    /// Which example graph (0-based shot index) and display position.
    pub shot: usize,
    pub position: usize,
    pub embedding: Vec<f64>,
    pub verdict: Verdict,
}

/// Embeddings of past layouts with their human verdicts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryBank {
    pub entries: Vec<BankEntry>,
    pub dim: usize,
}

impl MemoryBank {
    /// Every layout of every shot graph, in display order; the preferred one
    /// is good and the other seven are bad. `features` rows are canonical.
    pub fn from_shots(shots: &[Shot], features: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<Self> {
        let mut bank = Self::default();
        for (s, shot) in shots.iter().enumerate() {
            let rows = features
                .get(shot.graph.id())
                .ok_or_else(|| LlmError::MissingFeatures(shot.graph.id().to_string()))?;
            for (pos, &alg) in shot.layouts.display_order.iter().enumerate() {
                let verdict = if alg == shot.chosen.index() {
                    Verdict::Good
                } else {
                    Verdict::Bad
                };
                bank.push(BankEntry {
                    shot: s,
                    position: pos + 1,
                    embedding: rows[alg].clone(),
                    verdict,
                })?;
            }
        }
        Ok(bank)
    }

    pub fn push(&mut self, entry: BankEntry) -> Result<()> {
        if self.entries.is_empty() {
            self.dim = entry.embedding.len();
        } else if entry.embedding.len() != self.dim {
            return Err(LlmError::BankDim {
                want: self.dim,
                got: entry.embedding.len(),
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn has_good(&self) -> bool {
        self.entries.iter().any(|e| e.verdict == Verdict::Good)
    }
}

/// Four-decimal, comma-separated vector in brackets.
pub fn format_vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn format_coords(l: &Layout) -> String {
    normalize_or_center(l)
        .coords
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{i}: ({:.4}, {:.4})", p[0], p[1]))
        .collect::<Vec<_>>()
        .join("\n")
}

fn layout_images(g: &Graph, set: &LayoutSet, params: &RenderParams) -> Result<Vec<ContentPart>> {
    let mut parts = Vec::with_capacity(16);
    for pos in 0..8 {
        let l = normalize_or_center(set.get(set.at_position(pos)));
        let img = render(g, &l, params)?;
        parts.push(ContentPart::text(format!("Layout {}:", pos + 1)));
        parts.push(ContentPart::png(&img.to_png()));
    }
    Ok(parts)
}

/// Text serialization of a graph's structure for structural prompts.
pub fn structure_text(g: &Graph, kind: StructureKind, seed: u64) -> Result<String> {
    Ok(match kind {
        StructureKind::EdgeList => serialize_edge_list(g),
        StructureKind::Adjacency => serialize_adjacency_list(g),
        StructureKind::Node2vec => {
            let e = embed::node2vec_embedding(g, &WalkParams::default(), &SkipGramParams::default(), seed)?;
            rows_text(&e.vectors)
        }
        StructureKind::Spectral => {
            let k = 8.min(g.node_count().saturating_sub(1));
            if k == 0 {
                String::new()
            } else {
                rows_text(&embed::spectral_embedding(g, k)?.vectors)
            }
        }
    })
}

fn rows_text(rows: &[Vec<f64>]) -> String {
    rows.iter()
        .enumerate()
        .map(|(i, r)| format!("{i}: {}", format_vector(r)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything a prompt depends on. Builders are pure in these inputs.
#[derive(Debug, Clone, Copy)]
pub struct PromptInput<'a> {
    pub strategy: &'a PromptStrategy,
    pub graph: &'a Graph,
    pub layouts: &'a LayoutSet,
    pub shots: &'a [Shot<'a>],
    /// Canonically ordered rows for the query graph (memory bank only).
    pub query_features: Option<&'a [Vec<f64>]>,
    pub bank: Option<&'a MemoryBank>,
    pub render: &'a RenderParams,
    /// Seeds node2vec structure embeddings.
    pub seed: u64,
    pub budget: usize,
}

pub fn build_prompt(input: &PromptInput) -> Result<Vec<Message>> {
    input.strategy.validate()?;
    if input.shots.len() != input.strategy.shots() {
        return Err(LlmError::NotEnoughShots {
            wanted: input.strategy.shots(),
            available: input.shots.len(),
        });
    }
    let messages = match *input.strategy {
        PromptStrategy::ZeroShotImage => {
            let mut parts = vec![ContentPart::text(format!("{ZERO_SHOT_HEAD}{ZERO_SHOT_TAIL}"))];
            parts.extend(layout_images(input.graph, input.layouts, input.render)?);
            vec![Message::user(parts)]
        }
        PromptStrategy::FewShotImage { .. } => {
            let mut block = format!("{FEW_SHOT_INTRO}\n\n");
            for (s, shot) in input.shots.iter().enumerate() {
                let _ = writeln!(
                    block,
                    "In the {} set of eight layouts, the human selected layout {}.",
                    ORDINALS[s],
                    shot.chosen_position()
                );
            }
            let _ = write!(block, "\n{FEW_SHOT_OUTRO} ");
            let mut parts = vec![ContentPart::text(format!("{ZERO_SHOT_HEAD}{block}{ZERO_SHOT_TAIL}"))];
            for (s, shot) in input.shots.iter().enumerate() {
                let ordinal = ORDINALS[s];
                let mut title = ordinal.to_string();
                title[..1].make_ascii_uppercase();
                parts.push(ContentPart::text(format!("{title} set of eight layouts:")));
                parts.extend(layout_images(shot.graph, shot.layouts, input.render)?);
            }
            parts.push(ContentPart::text("The eight layouts to evaluate:"));
            parts.extend(layout_images(input.graph, input.layouts, input.render)?);
            vec![Message::user(parts)]
        }
        PromptStrategy::Structural { structure, .. } => {
            let examples = if input.shots.is_empty() {
                "(none)".to_string()
            } else {
                let mut ex = Vec::new();
                for (s, shot) in input.shots.iter().enumerate() {
                    let mut e = format!(
                        "Example {}:\nGraph Structure:\n{}",
                        s + 1,
                        structure_text(shot.graph, structure, input.seed)?
                    );
                    for pos in 0..8 {
                        let alg = shot.layouts.at_position(pos);
                        let verdict = if alg == shot.chosen { "good" } else { "bad" };
                        let _ = write!(
                            e,
                            "\nLayout {} ({verdict}):\n{}",
                            pos + 1,
                            format_coords(shot.layouts.get(alg))
                        );
                    }
                    ex.push(e);
                }
                ex.join("\n\n")
            };
            let context = format!(
                "The graph has {} nodes and {} edges. It is drawn by eight different layouts, numbered 1 to 8.",
                input.graph.node_count(),
                input.graph.edge_count()
            );
            let features = (0..8)
                .map(|pos| {
                    let l = input.layouts.get(input.layouts.at_position(pos));
                    format!("Layout {}:\n{}", pos + 1, format_coords(l))
                })
                .collect::<Vec<_>>()
                .join("\n");
            let text = STRUCTURAL_TEMPLATE
                .replace("{examples}", &examples)
                .replace("{context}", &context)
                .replace("{graph embedding}", &structure_text(input.graph, structure, input.seed)?)
                .replace("{features}", &features);
            vec![Message::user(vec![ContentPart::text(text)])]
        }
        PromptStrategy::MemoryBank { .. } => {
            let bank = input.bank.ok_or(LlmError::MissingBank)?;
            let rows = input.query_features.ok_or(LlmError::MissingBank)?;
            if !bank.has_good() {
                return Err(LlmError::EmptyBank);
            }
            let good = bank
                .entries
                .iter()
                .map(|e| {
                    let v = match e.verdict {
                        Verdict::Good => "good",
                        Verdict::Bad => "bad",
                    };
                    format!("Example {} layout {} ({v}): {}", e.shot + 1, e.position, format_vector(&e.embedding))
                })
                .collect::<Vec<_>>()
                .join("\n");
            let mut features = String::new();
            for pos in 0..8 {
                let row = &rows[input.layouts.display_order[pos]];
                if row.len() != bank.dim {
                    return Err(LlmError::BankDim {
                        want: bank.dim,
                        got: row.len(),
                    });
                }
                let _ = write!(features, "\nLayout {}: {}", pos + 1, format_vector(row));
            }
            let text = MEMORY_BANK_TEMPLATE
                .replace("{good_layouts}", &good)
                .replace("{features}", &features);
            vec![Message::user(vec![ContentPart::text(text)])]
        }
    };
    check_budget(&messages, input.budget)?;
    Ok(messages)
}

fn anchor_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:In conclusion, I will pick layout|Result: layout)\s*(\d+)").expect("valid regex"))
}

/// The chosen 1-based position and the byte offset of its digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedChoice {
    pub position: usize,
    pub offset: usize,
}

/// Finds the last "In conclusion, I will pick layout N" or "Result: layout N".
pub fn parse_choice(text: &str) -> Result<ParsedChoice> {
    let caps = anchor_regex().captures_iter(text).last().ok_or_else(|| {
        let snippet: String = text.chars().rev().take(80).collect::<Vec<_>>().into_iter().rev().collect();
        LlmError::Unparseable(snippet)
    })?;
    let digits = caps.get(1).expect("group 1");
    let n: u64 = digits.as_str().parse().unwrap_or(u64::MAX);
    if !(1..=8).contains(&n) {
        return Err(LlmError::OutOfRange(n));
    }
    Ok(ParsedChoice {
        position: n as usize,
        offset: digits.start(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub tokens: Vec<TokenLogprob>,
}

/// `exp(logprob)` of the token carrying the choice digit; `None` when the
/// response has no log-probabilities or no token matches the digit.
pub fn choice_confidence(tokens: &[TokenLogprob], text: &str, choice: ParsedChoice) -> Result<Option<f64>> {
    let digit = choice.position.to_string();
    let concatenated: String = tokens.iter().map(|t| t.token.as_str()).collect();
    let hit = if concatenated == text {
        let mut at = 0;
        tokens.iter().find(|t| {
            let start = at;
            at += t.token.len();
            start <= choice.offset && choice.offset < at
        })
    } else {
        None
    };
    let hit = hit
        .filter(|t| t.token.trim() == digit)
        .or_else(|| tokens.iter().rev().find(|t| t.token.trim() == digit));
    match hit {
        None => Ok(None),
        Some(t) if t.logprob == f64::NEG_INFINITY => Err(LlmError::NegInfLogprob),
        Some(t) if t.logprob.is_nan() || t.logprob > 0.0 => Err(LlmError::Malformed(format!(
            "logprob {} for token {:?}",
            t.logprob, t.token
        ))),
        Some(t) => Ok(Some(t.logprob.exp())),
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, graph_id: &str, messages: &[Message]) -> Result<ChatResponse>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub graph_id: String,
    pub response: String,
    /// Log-probability given to the choice digit; absent means the mock
    /// returns no log-probabilities at all.
    #[serde(default)]
    pub choice_logprob: Option<f64>,
}

/// Replays scripted responses keyed by graph id.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: BTreeMap<String, MockEntry>,
    fallback: Option<MockEntry>,
}

impl MockBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        Self {
            script: entries.into_iter().map(|e| (e.graph_id.clone(), e)).collect(),
            fallback: None,
        }
    }

    /// One JSON object per line: `{"graph_id", "response", "choice_logprob"?}`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: MockEntry = serde_json::from_str(line).map_err(|e| LlmError::MockScript {
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn to_jsonl(entries: &[MockEntry]) -> String {
        entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializes") + "\n")
            .collect()
    }

    /// Answers every graph with the same text.
    pub fn constant(response: impl Into<String>, choice_logprob: Option<f64>) -> Self {
        Self {
            script: BTreeMap::new(),
            fallback: Some(MockEntry {
                graph_id: String::new(),
                response: response.into(),
                choice_logprob,
            }),
        }
    }
}

/// Splits text into digit, word and whitespace tokens whose concatenation is
/// the original text.
fn mock_tokens(text: &str, choice_logprob: f64) -> Vec<TokenLogprob> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d|[^\d\s]+|\s+").expect("valid regex"));
    let choice = parse_choice(text).ok();
    re.find_iter(text)
        .map(|m| TokenLogprob {
            token: m.as_str().to_string(),
            logprob: if choice.is_some_and(|c| c.offset == m.start()) {
                choice_logprob
            } else {
                0.0
            },
        })
        .collect()
}

impl ChatBackend for MockBackend {
    fn complete(&self, graph_id: &str, _messages: &[Message]) -> Result<ChatResponse> {
        let entry = self
            .script
            .get(graph_id)
            .or(self.fallback.as_ref())
            .ok_or_else(|| LlmError::MockMissing(graph_id.to_string()))?;
        Ok(ChatResponse {
            text: entry.response.clone(),
            tokens: entry
                .choice_logprob
                .map(|lp| mock_tokens(&entry.response, lp))
                .unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL of an OpenAI-compatible API; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub temperature: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "LAYOUTPREF_LLM_KEY".into(),
            timeout_ms: 120_000,
            max_retries: 3,
            backoff_ms: 1_000,
            temperature: 0.0,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    key: String,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn from_env(config: HttpConfig) -> Result<Self> {
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingCredential(config.api_key_env.clone()))?;
        Self::new(config, key)
    }

    pub fn new(config: HttpConfig, key: String) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                msg: e.to_string(),
            })?;
        Ok(Self { config, key, client })
    }

    fn attempt(&self, body: &serde_json::Value, attempts: usize) -> Attempt {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let resp = match self.client.post(url).bearer_auth(&self.key).json(body).send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout(attempts)),
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    attempts,
                    msg: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout(attempts)),
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    attempts,
                    msg: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(status)),
            429 => Attempt::Retry(LlmError::RateLimited(attempts)),
            500..=599 => Attempt::Retry(LlmError::Status { status, body: text }),
            _ => Attempt::Fatal(LlmError::Status { status, body: text }),
        }
    }
}

/// Pulls the first choice's content and token log-probabilities out of a
/// chat-completions response body.
pub fn parse_completion(body: &str) -> Result<ChatResponse> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = &v["choices"][0];
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let tokens = match choice["logprobs"]["content"].as_array() {
        None => Vec::new(),
        Some(items) => items
            .iter()
            .map(|t| {
                Ok(TokenLogprob {
                    token: t["token"]
                        .as_str()
                        .ok_or_else(|| LlmError::Malformed("logprob entry without token".into()))?
                        .to_string(),
                    logprob: t["logprob"]
                        .as_f64()
                        .ok_or_else(|| LlmError::Malformed("logprob entry without logprob".into()))?,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(ChatResponse { text, tokens })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, _graph_id: &str, messages: &[Message]) -> Result<ChatResponse> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "logprobs": true,
        });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempts > self.config.max_retries => {
                    return Err(match e {
                        LlmError::Transport { msg, .. } => LlmError::Transport { attempts, msg },
                        other => other,
                    })
                }
                Attempt::Retry(e) => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << (attempts - 1));
                    log::warn!("attempt {attempts} failed ({e}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmLabel {
    pub graph_id: String,
    pub choice: Algorithm,
    /// 1-based display position named in the response.
    pub raw_choice_position: usize,
    pub confidence: Option<f64>,
}

/// Request and response for one graph, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub graph_id: String,
    pub strategy: String,
    pub display_order: [usize; 8],
    pub estimated_tokens: usize,
    pub messages: Vec<Message>,
    pub response: Option<ChatResponse>,
    pub label: Option<LlmLabel>,
    pub note: Option<String>,
    pub error: Option<String>,
}

impl Transcript {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.graph_id));
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("serializes"))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))
    }

    /// Re-derives the label from the captured response.
    pub fn replay(&self) -> Result<LlmLabel> {
        let resp = self
            .response
            .as_ref()
            .ok_or_else(|| LlmError::Malformed("transcript has no response".into()))?;
        label_from_response(&self.graph_id, &self.display_order, resp).map(|(l, _)| l)
    }
}

/// Parses a response and maps its position back through the display order.
pub fn label_from_response(
    graph_id: &str,
    display_order: &[usize; 8],
    resp: &ChatResponse,
) -> Result<(LlmLabel, Option<String>)> {
    let parsed = parse_choice(&resp.text)?;
    let confidence = choice_confidence(&resp.tokens, &resp.text, parsed)?;
    let note = (confidence.is_none() && !resp.tokens.is_empty())
        .then(|| format!("no log-probability found for digit token {:?}", parsed.position.to_string()));
    let alg = Algorithm::from_index(display_order[parsed.position - 1]).expect("display order is a permutation");
    Ok((
        LlmLabel {
            graph_id: graph_id.to_string(),
            choice: alg,
            raw_choice_position: parsed.position,
            confidence,
        },
        note,
    ))
}

/// The algorithm most annotators chose; ties go to the lowest canonical index.
pub fn consensus_choice(store: &LabelStore, graph_id: &str) -> Option<Algorithm> {
    let q = store.soft_target(graph_id).ok()?.q;
    let best = (0..8).fold(0, |b, k| if q[k] > q[b] { k } else { b });
    Algorithm::from_index(best)
}

/// Draws `k` labeled graphs from the pool, sorted by id then shuffled.
pub fn select_shots<'a>(
    pool: &[(&'a Graph, &'a LayoutSet)],
    store: &LabelStore,
    k: usize,
    seed: u64,
) -> Result<Vec<Shot<'a>>> {
    let mut candidates: Vec<Shot<'a>> = pool
        .iter()
        .filter_map(|&(graph, layouts)| {
            consensus_choice(store, graph.id()).map(|chosen| Shot { graph, layouts, chosen })
        })
        .collect();
    candidates.sort_by(|a, b| a.graph.id().cmp(b.graph.id()));
    if candidates.len() < k {
        return Err(LlmError::NotEnoughShots {
            wanted: k,
            available: candidates.len(),
        });
    }
    let mut rng = rng::stream(seed, Domain::Shots, 0);
    candidates.shuffle(&mut rng);
    candidates.truncate(k);
    Ok(candidates)
}

pub const DEFAULT_CONCURRENCY: usize = 4;

pub struct LabelJob<'a> {
    pub strategy: PromptStrategy,
    /// Graphs to label.
    pub targets: Vec<(&'a Graph, &'a LayoutSet)>,
    /// Training graphs that shots may be drawn from.
    pub shot_pool: Vec<(&'a Graph, &'a LayoutSet)>,
    pub store: &'a LabelStore,
    /// Canonically ordered per-layout embeddings, needed by the memory bank.
    pub features: Option<&'a BTreeMap<String, Vec<Vec<f64>>>>,
    pub seed: u64,
    pub concurrency: usize,
    pub budget: usize,
    pub render: RenderParams,
    pub transcript_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFailure {
    pub graph_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LlmRun {
    /// Sorted by graph id.
    pub labels: Vec<LlmLabel>,
    pub failures: Vec<LabelFailure>,
    pub shot_ids: Vec<String>,
}

impl LlmRun {
    pub fn to_jsonl(&self) -> String {
        self.labels
            .iter()
            .map(|l| serde_json::to_string(l).expect("serializes") + "\n")
            .collect()
    }
}

/// Labels every target graph. Per-graph failures (unparseable responses,
/// backend errors, over-budget prompts) are logged and reported, not fatal.
pub fn label_with_llm(job: &LabelJob, backend: &dyn ChatBackend) -> Result<LlmRun> {
    job.strategy.validate()?;
    let target_ids: HashSet<&str> = job.targets.iter().map(|(g, _)| g.id()).collect();
    let mut leaked: Vec<String> = job
        .shot_pool
        .iter()
        .map(|(g, _)| g.id())
        .filter(|id| target_ids.contains(id))
        .map(str::to_string)
        .collect();
    if !leaked.is_empty() {
        leaked.sort();
        return Err(LlmError::ShotLeak(leaked));
    }
    let shots = select_shots(&job.shot_pool, job.store, job.strategy.shots(), job.seed)?;
    let bank = match job.strategy {
        PromptStrategy::MemoryBank { .. } => {
            let features = job.features.ok_or(LlmError::MissingBank)?;
            Some(MemoryBank::from_shots(&shots, features)?)
        }
        _ => None,
    };

    let mut order: Vec<usize> = (0..job.targets.len()).collect();
    order.sort_by(|&a, &b| job.targets[a].0.id().cmp(job.targets[b].0.id()));
    let next = AtomicUsize::new(0);
    let results: Arc<Mutex<Vec<Option<std::result::Result<LlmLabel, String>>>>> =
        Arc::new(Mutex::new(vec![None; order.len()]));
    let workers = job.concurrency.max(1).min(order.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                if slot >= order.len() {
                    break;
                }
                let (graph, layouts) = job.targets[order[slot]];
                let outcome = label_one(job, backend, &shots, bank.as_ref(), graph, layouts);
                results.lock().expect("results lock")[slot] = Some(outcome);
            });
        }
    });

    let mut run = LlmRun {
        shot_ids: shots.iter().map(|s| s.graph.id().to_string()).collect(),
        ..LlmRun::default()
    };
    let results = std::mem::take(&mut *results.lock().expect("results lock"));
    for (slot, outcome) in results.into_iter().enumerate() {
        let graph_id = job.targets[order[slot]].0.id().to_string();
        match outcome.expect("every slot filled") {
            Ok(label) => run.labels.push(label),
            Err(error) => {
                log::warn!("graph {graph_id}: {error}");
                run.failures.push(LabelFailure { graph_id, error });
            }
        }
    }
    Ok(run)
}

fn label_one(
    job: &LabelJob,
    backend: &dyn ChatBackend,
    shots: &[Shot],
    bank: Option<&MemoryBank>,
    graph: &Graph,
    layouts: &LayoutSet,
) -> std::result::Result<LlmLabel, String> {
    let query_features = match job.features {
        Some(f) if bank.is_some() => Some(
            f.get(graph.id())
                .ok_or_else(|| LlmError::MissingFeatures(graph.id().to_string()).to_string())?
                .as_slice(),
        ),
        _ => None,
    };
    let input = PromptInput {
        strategy: &job.strategy,
        graph,
        layouts,
        shots,
        query_features,
        bank,
        render: &job.render,
        seed: job.seed,
        budget: job.budget,
    };
    let mut transcript = Transcript {
        graph_id: graph.id().to_string(),
        strategy: job.strategy.name(),
        display_order: layouts.display_order,
        estimated_tokens: 0,
        messages: Vec::new(),
        response: None,
        label: None,
        note: None,
        error: None,
    };
    let outcome = (|| -> Result<LlmLabel> {
        transcript.messages = build_prompt(&input)?;
        transcript.estimated_tokens = estimate_tokens(&transcript.messages);
        let resp = backend.complete(graph.id(), &transcript.messages)?;
        transcript.response = Some(resp.clone());
        let (label, note) = label_from_response(graph.id(), &layouts.display_order, &resp)?;
        transcript.note = note;
        transcript.label = Some(label.clone());
        Ok(label)
    })();
    if let Err(e) = &outcome {
        transcript.error = Some(e.to_string());
    }
    if let Some(dir) = &job.transcript_dir {
        transcript.write(dir).map_err(|e| e.to_string())?;
    }
    outcome.map_err(|e| e.to_string())
}
