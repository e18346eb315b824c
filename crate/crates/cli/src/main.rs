use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use layoutpref::align::{
    alignment_report, confidence_curve, paired_t_test, ScoredChoice, SimilarityAlignment,
};
use layoutpref::embed::{node2vec_embedding, spectral_embedding, write_embeddings, SkipGramParams, WalkParams};
use layoutpref::graph::{read_graph, GraphCorpus, Split};
use layoutpref::labels::LabelStore;
use layoutpref::layout::{layout_all_with, normalize_or_center, render, write_layout, LayoutParams, RenderParams};
use layoutpref::llm::{
    self, label_with_llm, ChatBackend, HttpBackend, HttpConfig, LabelJob, MockBackend, PromptStrategy, StructureKind,
};
use layoutpref::model::{load_external_features, predict, train, ModelParams, TrainConfig};
use layoutpref_cli::text::{
    alignment_table, consensus_table, curve_table, distribution_table, fmt4, heatmap_pgm, stats_table,
};
use layoutpref_cli::{
    demo, lay_out, layout_map, per_graph_agreement, query_samples, raster_feature_map, read_predictions,
    training_samples, LaidOut,
};
use layoutpref_service::{ServiceConfig, ServiceCorpus, ServiceHandle, SystemClock, SECRET_ENV};

#[derive(Parser)]
#[command(name = "layoutpref", version, about = "Graph layout preference toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the eight layouts of one graph or a whole corpus.
    Layout(LayoutArgs),
    /// Node embeddings of one graph.
    Embed(EmbedArgs),
    /// Inspect a label file.
    #[command(subcommand)]
    Labels(LabelsCommand),
    /// Agreement between labelers and with AI predictions.
    Align(AlignArgs),
    /// Train the visual preference model.
    Train(TrainArgs),
    /// Score graphs with a trained model.
    Predict(PredictArgs),
    /// Label graphs with a chat model.
    LlmLabel(LlmArgs),
    /// Run the labeling server.
    Serve(ServeArgs),
    /// Run the bundled end-to-end example.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// JSON-lines manifest of {id, path, split}.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<LaidOut>> {
        let corpus = GraphCorpus::load_manifest(&self.manifest)
            .with_context(|| format!("reading manifest {}", self.manifest.display()))?;
        let items = lay_out(&corpus, &LayoutParams::default(), self.layout_seed);
        log::info!("laid out {} of {} graphs", items.len(), corpus.len());
        Ok(items)
    }
}

#[derive(Args)]
struct LayoutArgs {
    /// Single graph file (edge list, or GraphML for .graphml/.xml).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    graph: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write PNGs of this size.
    #[arg(long)]
    png: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedMethodArg {
    Spectral,
    Node2vec,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "spectral")]
    method: EmbedMethodArg,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LabelsCommand {
    /// Validate and deduplicate a label file.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Stats { file: PathBuf },
    /// Share of graphs by number of distinct choices.
    Consensus { file: PathBuf },
    /// How often each algorithm was chosen.
    Distribution {
        file: PathBuf,
        /// Only graphs where every annotator agreed.
        #[arg(long)]
        unanimous: bool,
        /// Only labels marked hard.
        #[arg(long)]
        hard: bool,
    },
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated labelers; all annotators by default.
    #[arg(long, value_delimiter = ',')]
    labelers: Vec<String>,
    /// Similarity-aware alignment over a grid of thresholds.
    #[arg(long, requires = "manifest")]
    alpha_sweep: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
    #[arg(long)]
    allow_reflection: bool,
    /// Prediction file to evaluate against every human.
    #[arg(long)]
    confidence_curve: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6, 0.8])]
    thresholds: Vec<f64>,
    /// Two prediction files compared per graph with a paired t-test.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    t_test: Vec<PathBuf>,
    /// Write the pairwise matrix as a graymap.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct FeatureArgs {
    /// Precomputed features: JSON object of graph id to eight rows.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    levels: u32,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    node_radius: usize,
}

impl FeatureArgs {
    fn load(&self, items: &[LaidOut]) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
        match &self.features {
            Some(p) => Ok(load_external_features(&fs::read_to_string(p)?)?),
            None => raster_feature_map(items, self.levels, &self.render()),
        }
    }

    fn render(&self) -> RenderParams {
        RenderParams {
            size: self.size,
            node_radius: self.node_radius,
            edge_width: 1,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    feats: FeatureArgs,
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    augment: Option<usize>,
    #[arg(long)]
    unanimous_only: bool,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    feats: FeatureArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict to one split.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Validation,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Validation => Split::Validation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    ZeroShot,
    FewShot,
    Structural,
    MemoryBank,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    EdgeList,
    Adjacency,
    Node2vec,
    Spectral,
}

#[derive(Args)]
struct LlmArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Human labels; consensus choices of training graphs become examples.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value = "zero-shot")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "edge-list")]
    structure: StructureArg,
    #[arg(long, default_value_t = 0)]
    shots: usize,
    #[command(flatten)]
    feats: FeatureArgs,
    /// Scripted responses instead of a live endpoint.
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long, default_value_t = llm::DEFAULT_CONCURRENCY)]
    concurrency: usize,
    #[arg(long, default_value_t = llm::DEFAULT_TOKEN_BUDGET)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Token-signing secret; falls back to the environment.
    #[arg(long)]
    secret: Option<String>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Layout(a) => cmd_layout(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Labels(c) => cmd_labels(c),
        Command::Align(a) => cmd_align(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::LlmLabel(a) => cmd_llm(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Demo { out } => {
            let d = demo::run(out.as_deref())?;
            print!("{}", d.report);
            Ok(())
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_store(path: &Path) -> Result<LabelStore> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (store, dups) = LabelStore::ingest(BufReader::new(file))?;
    for d in &dups {
        log::warn!("{d}");
    }
    Ok(store)
}

fn cmd_layout(a: LayoutArgs) -> Result<()> {
    let graphs = match (&a.graph, &a.manifest) {
        (Some(g), _) => vec![read_graph(g)?],
        (None, Some(m)) => GraphCorpus::load_manifest(m)?.iter().map(|(g, _)| g.clone()).collect(),
        (None, None) => bail!("pass --graph or --manifest"),
    };
    for g in &graphs {
        let set = match layout_all_with(g, &LayoutParams::default(), a.seed) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("skipping {}: {e}", g.id());
                continue;
            }
        };
        let dir = a.out.join(g.id());
        fs::create_dir_all(&dir)?;
        for l in &set.layouts {
            fs::write(dir.join(format!("{}.layout", l.algorithm.tag())), write_layout(l))?;
            if let Some(size) = a.png {
                let params = RenderParams {
                    size,
                    ..RenderParams::default()
                };
                let img = render(g, &normalize_or_center(l), &params)?;
                fs::write(dir.join(format!("{}.png", l.algorithm.tag())), img.to_png())?;
            }
        }
        fs::write(dir.join("display_order.json"), serde_json::to_string(&set.display_order)?)?;
        let unconverged: Vec<&str> = set.layouts.iter().filter(|l| !l.converged).map(|l| l.algorithm.tag()).collect();
        if !unconverged.is_empty() {
            log::warn!("{}: iteration cap reached for {}", g.id(), unconverged.join(", "));
        }
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let e = match a.method {
        EmbedMethodArg::Spectral => spectral_embedding(&g, a.dim)?,
        EmbedMethodArg::Node2vec => node2vec_embedding(
            &g,
            &WalkParams::default(),
            &SkipGramParams {
                dim: a.dim,
                ..SkipGramParams::default()
            },
            a.seed,
        )?,
    };
    emit(a.out.as_deref(), &write_embeddings(&e))
}

fn cmd_labels(c: LabelsCommand) -> Result<()> {
    match c {
        LabelsCommand::Ingest { file, out } => {
            let store = load_store(&file)?;
            log::info!("{} labels from {} annotators", store.len(), store.annotators().count());
            if let Some(out) = out {
                fs::write(out, store.to_jsonl())?;
            }
        }
        LabelsCommand::Stats { file } => print!("{}", stats_table(&load_store(&file)?.stats())),
        LabelsCommand::Consensus { file } => print!("{}", consensus_table(&load_store(&file)?.consensus_distribution())),
        LabelsCommand::Distribution { file, unanimous, hard } => {
            let store = load_store(&file)?;
            let dist = store.choice_distribution(|r| {
                (!unanimous || store.distinct_choices(&r.graph_id) == 1) && (!hard || r.hard)
            })?;
            print!("{}", distribution_table(&dist));
        }
    }
    Ok(())
}

fn cmd_align(a: AlignArgs) -> Result<()> {
    let store = load_store(&a.labels)?;
    let labelers: Vec<String> = if a.labelers.is_empty() {
        store.annotators().map(str::to_string).collect()
    } else {
        a.labelers.clone()
    };
    let report = alignment_report(&store, &labelers);
    print!("{}", alignment_table(&report));
    if let Some(p) = &a.heatmap {
        fs::write(p, heatmap_pgm(&report.matrix(), 8))?;
    }
    if a.alpha_sweep {
        let manifest = a.manifest.clone().context("--alpha-sweep needs --manifest")?;
        let items = CorpusArgs {
            manifest,
            layout_seed: a.layout_seed,
        }
        .load()?;
        let layouts = layout_map(&items);
        let mut sim = SimilarityAlignment::new(&layouts, a.allow_reflection);
        for alpha in demo::ALPHA_GRID {
            println!("alpha {} micro {}", fmt4(alpha), fmt4(sim.micro(&store, &labelers, alpha)?));
        }
    }
    if let Some(p) = &a.confidence_curve {
        let preds = read_predictions(&fs::read_to_string(p)?)?;
        print!("{}", curve_table(&confidence_curve(&preds, &store, &a.thresholds)?));
    }
    if let [pa, pb] = a.t_test.as_slice() {
        let x = per_graph_agreement(&read_predictions(&fs::read_to_string(pa)?)?, &store);
        let y = per_graph_agreement(&read_predictions(&fs::read_to_string(pb)?)?, &store);
        let shared: Vec<&String> = x.keys().filter(|k| y.contains_key(*k)).collect();
        let xs: Vec<f64> = shared.iter().map(|k| x[*k]).collect();
        let ys: Vec<f64> = shared.iter().map(|k| y[*k]).collect();
        let t = paired_t_test(&xs, &ys)?;
        println!("paired t {} df {} p {} over {} graphs", fmt4(t.t), t.df, fmt4(t.p), shared.len());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).context("parsing training config")?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.batch {
        config.batch = v;
    }
    if let Some(v) = a.augment {
        config.augment_k = v;
    }
    if let Some(v) = a.hidden.clone() {
        config.hidden = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.unanimous_only |= a.unanimous_only;

    let items = a.corpus.load()?;
    let store = load_store(&a.labels)?;
    let features = a.feats.load(&items)?;
    let samples = training_samples(&items, &features, &store, Split::Train)?;
    let graphs = samples.iter().filter(|s| !config.unanimous_only || s.is_unanimous()).count();
    let (params, report) = train(&samples, &config)?;
    log::info!(
        "{} samples ({} graphs x {})",
        report.samples,
        graphs,
        config.augment_k.max(1)
    );
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {} loss {}", e + 1, fmt4(*loss));
    }
    fs::write(&a.out, params.to_checkpoint())?;
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let params = ModelParams::from_checkpoint(&fs::read_to_string(&a.checkpoint)?)?;
    let items = a.corpus.load()?;
    let features = a.feats.load(&items)?;
    let samples = query_samples(&items, &features, a.split.map(Split::from))?;
    let mut out = String::new();
    for s in &samples {
        let p = predict(&params, s)?;
        out.push_str(&serde_json::to_string(&ScoredChoice {
            graph_id: p.graph_id,
            choice: p.choice,
            confidence: Some(p.confidence),
        })?);
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_llm(a: LlmArgs) -> Result<()> {
    let structure = match a.structure {
        StructureArg::EdgeList => StructureKind::EdgeList,
        StructureArg::Adjacency => StructureKind::Adjacency,
        StructureArg::Node2vec => StructureKind::Node2vec,
        StructureArg::Spectral => StructureKind::Spectral,
    };
    let strategy = match a.strategy {
        StrategyArg::ZeroShot if a.shots > 0 => bail!("zero-shot takes no examples"),
        StrategyArg::ZeroShot => PromptStrategy::ZeroShotImage,
        StrategyArg::FewShot => PromptStrategy::FewShotImage { shots: a.shots },
        StrategyArg::Structural => PromptStrategy::Structural { structure, shots: a.shots },
        StrategyArg::MemoryBank => PromptStrategy::MemoryBank { shots: a.shots },
    };
    let items = a.corpus.load()?;
    let store = load_store(&a.labels)?;
    let features = match strategy {
        PromptStrategy::MemoryBank { .. } => Some(a.feats.load(&items)?),
        _ => None,
    };
    let backend: Box<dyn ChatBackend> = match &a.mock {
        Some(p) => Box::new(MockBackend::from_jsonl(&fs::read_to_string(p)?)?),
        None => {
            let mut cfg = HttpConfig::default();
            if let Some(u) = &a.base_url {
                cfg.base_url = u.clone();
            }
            if let Some(m) = &a.model {
                cfg.model = m.clone();
            }
            Box::new(HttpBackend::from_env(cfg)?)
        }
    };
    let target_split = Split::from(a.split);
    let job = LabelJob {
        strategy,
        targets: items
            .iter()
            .filter(|i| i.split == target_split)
            .map(|i| (&i.graph, &i.layouts))
            .collect(),
        shot_pool: items
            .iter()
            .filter(|i| i.split == Split::Train)
            .map(|i| (&i.graph, &i.layouts))
            .collect(),
        store: &store,
        features: features.as_ref(),
        seed: a.seed,
        concurrency: a.concurrency,
        budget: a.budget,
        render: RenderParams::default(),
        transcript_dir: a.transcripts.clone(),
    };
    let run = label_with_llm(&job, backend.as_ref())?;
    log::info!(
        "{} labeled, {} failed, examples: {}",
        run.labels.len(),
        run.failures.len(),
        run.shot_ids.join(" ")
    );
    for f in &run.failures {
        log::warn!("{}: {}", f.graph_id, f.error);
    }
    emit(a.out.as_deref(), &run.to_jsonl())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let secret = match a.secret.clone() {
        Some(s) => s,
        None => std::env::var(SECRET_ENV).with_context(|| format!("pass --secret or set {SECRET_ENV}"))?,
    };
    if secret.is_empty() {
        bail!("the token secret must not be empty");
    }
    let corpus = GraphCorpus::load_manifest(&a.manifest)?;
    let graphs: Vec<_> = corpus.iter().map(|(g, _)| g.clone()).collect();
    let service_corpus = ServiceCorpus::build(graphs, a.layout_seed);
    log::info!("serving {} of {} graphs", service_corpus.len(), corpus.len());
    let config = ServiceConfig {
        store_path: Some(a.store.clone()),
        cache_dir: a.cache.clone(),
        secret: secret.into_bytes(),
        seed: a.seed,
        ..ServiceConfig::default()
    };
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad host or port")?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let handle = ServiceHandle::start(service_corpus, config, Arc::new(SystemClock))?;
        layoutpref_service::serve(handle, addr).await?;
        anyhow::Ok(())
    })
}
