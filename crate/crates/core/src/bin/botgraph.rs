use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use botgraph::cache::ContentKey;
use botgraph::config::RunConfig;
use botgraph::eval::{
    ablate, ablation_csv, evaluate_model, evaluate_rows, export_node_embeddings, pr_curve_csv, roc_curve_csv,
    sweep_accuracy, sweep_csv, Evaluation,
};
use botgraph::features::{
    build_fused_matrix, fallback_store, read_fused, write_fused, AuxNormalize, FusedMatrix, NormalizationStats,
    Pooling, StatsSource,
};
use botgraph::graph::{build_graph, graph_stats, SimilarityGraph};
use botgraph::ingest::{
    load_dataset, read_embeddings, validate_dataset, write_embeddings, Dataset, DatasetFormat, EmbeddingStore,
};
use botgraph::sage::{
    history_csv, infer, load_model, save_model, stratified_split, train_on_graph, IsolatedPolicy, Model,
};
use botgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "botgraph", version, about = "Social bot detection over a tweet-similarity graph")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset file or directory
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Dataset layout: jsonl, cresci-csv or pan-xml-dir
    #[arg(long, global = true)]
    format: Option<DatasetFormat>,
    /// Tweet embeddings (RGBE); the hashing featurizer is used when absent
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "BOTGRAPH_OUT")]
    out_dir: Option<PathBuf>,
    /// Recompute intermediate artifacts instead of reusing cached ones
    #[arg(long, global = true)]
    no_cache: bool,
    /// Tweet pooling: avg or max
    #[arg(long, global = true)]
    pooling: Option<Pooling>,
    /// Metadata normalization: log-z or none
    #[arg(long, global = true)]
    aux_normalize: Option<AuxNormalize>,
    /// Aggregate of a node without neighbors: zero or self
    #[arg(long, global = true)]
    isolated: Option<IsolatedPolicy>,
    /// Cosine similarity threshold for edges
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Seed for the split, initialization and dropout
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Width of the hashing featurizer
    #[arg(long, global = true)]
    fallback_dim: Option<usize>,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every user has embeddings
    Validate,
    /// Write hashing-featurizer embeddings for the dataset
    EmbedFallback {
        /// Defaults to <out-dir>/embeddings.rgbe
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the fused feature matrix, the similarity graph and its statistics
    BuildGraph,
    /// Train a model and report test-split metrics
    Train {
        /// Use this fused feature matrix (RGBF) instead of featurizing
        #[arg(long)]
        fused: Option<PathBuf>,
    },
    /// Test-split metrics and PR/ROC curves of a saved model
    Evaluate {
        /// Defaults to <out-dir>/model.rgbm
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Retrain at several thresholds
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.85,0.9,0.95,0.99")]
        taus: Vec<f64>,
    },
    /// Leave-one-out ablation over metadata fields and the SAGE layer
    Ablate,
    /// Last-hidden-layer vectors per user, for external plotting
    ExportEmbeddings {
        /// Defaults to <out-dir>/model.rgbm
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to <out-dir>/node_embeddings.csv
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// An error tagged with the pipeline stage that raised it.
struct Failure {
    stage: &'static str,
    error: Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

type Staged<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Staged<T>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Staged<T> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("botgraph: {f}");
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

fn resolve(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = o.format {
        cfg.format = v;
    }
    if let Some(v) = &o.embeddings {
        cfg.embeddings = Some(v.clone());
    }
    if let Some(v) = &o.out_dir {
        cfg.out_dir = v.clone();
    }
    cfg.no_cache |= o.no_cache;
    if let Some(v) = o.pooling {
        cfg.train.pooling = v;
    }
    if let Some(v) = o.aux_normalize {
        cfg.train.aux_normalize = v;
    }
    if let Some(v) = o.isolated {
        cfg.train.isolated = v;
    }
    if let Some(v) = o.tau {
        cfg.train.tau = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.fallback_dim {
        cfg.fallback.dim = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Staged<()> {
    let cfg = resolve(&cli.opts).stage("configuration")?;
    debug!("resolved configuration:\n{}", cfg.to_toml().unwrap_or_default());
    match cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::EmbedFallback { output } => cmd_embed_fallback(&cfg, output),
        Command::BuildGraph => cmd_build_graph(&cfg),
        Command::Train { fused } => cmd_train(&cfg, fused),
        Command::Evaluate { model } => cmd_evaluate(&cfg, model),
        Command::Sweep { taus } => cmd_sweep(&cfg, &taus),
        Command::Ablate => cmd_ablate(&cfg),
        Command::ExportEmbeddings { model, output } => cmd_export(&cfg, model, output),
    }
}

fn out_dir(cfg: &RunConfig) -> Staged<&Path> {
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
    .stage("output directory")?;
    Ok(dir)
}

/// Writes the resolved configuration beside a command's outputs.
fn persist_config(cfg: &RunConfig) -> Staged<()> {
    let dir = out_dir(cfg)?;
    cfg.save(&dir.join("config.toml")).stage("write config")
}

fn write_text(path: &Path, text: &str) -> Staged<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .stage("write output")
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn load_inputs(cfg: &RunConfig) -> Staged<(Dataset, EmbeddingStore)> {
    let path = cfg.require_dataset().stage("configuration")?;
    let ds = load_dataset(path, cfg.format).stage("load dataset")?;
    info!("loaded {} users from {}", ds.len(), path.display());
    let store = match &cfg.embeddings {
        Some(p) => read_embeddings(p).stage("read embeddings")?,
        None => fallback_store(&ds, cfg.fallback.dim, cfg.fallback.seed).stage("fallback featurizer")?,
    };
    Ok((ds, store))
}

fn check_inputs(ds: &Dataset, store: &EmbeddingStore) -> Staged<()> {
    let report = validate_dataset(ds, store);
    if let Some(who) = report.missing.first().or(report.zero_tweet.first()) {
        return Err(Error::EmptyInput(who.clone())).stage("validate inputs");
    }
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Staged<()> {
    let (ds, store) = load_inputs(cfg)?;
    let report = validate_dataset(&ds, &store);
    println!("{}", json_line(&report));
    check_inputs(&ds, &store)
}

fn cmd_embed_fallback(cfg: &RunConfig, output: Option<PathBuf>) -> Staged<()> {
    let path = cfg.require_dataset().stage("configuration")?;
    let ds = load_dataset(path, cfg.format).stage("load dataset")?;
    let store = fallback_store(&ds, cfg.fallback.dim, cfg.fallback.seed).stage("fallback featurizer")?;
    let dir = out_dir(cfg)?;
    let output = output.unwrap_or_else(|| dir.join("embeddings.rgbe"));
    write_embeddings(&store, &output).stage("write embeddings")?;
    info!("wrote {} users to {}", store.len(), output.display());
    persist_config(cfg)
}

/// Statistics written beside a fused matrix so it can be reused for training.
#[derive(Serialize, Deserialize)]
struct FusedSidecar {
    stats: NormalizationStats,
}

fn sidecar_path(fused: &Path) -> PathBuf {
    fused.with_extension("stats.json")
}

fn save_fused(fused: &FusedMatrix, stats: &NormalizationStats, path: &Path) -> Staged<()> {
    write_fused(fused, path).stage("write fused matrix")?;
    let side = serde_json::to_string_pretty(&FusedSidecar { stats: stats.clone() }).expect("serializes");
    write_text(&sidecar_path(path), &side)
}

fn load_fused(path: &Path) -> Staged<(FusedMatrix, NormalizationStats)> {
    let fused = read_fused(path).stage("read fused matrix")?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path)
        .map_err(|e| Error::Io {
            path: side_path.clone(),
            source: e,
        })
        .stage("read fused matrix")?;
    let side: FusedSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))
        .stage("read fused matrix")?;
    Ok((fused, side.stats))
}

/// Key for the fused matrix: inputs, featurization and the split that the
/// normalization statistics are fitted on.
fn fused_key(cfg: &RunConfig) -> Result<String> {
    let t = &cfg.train;
    let mut key = ContentKey::new();
    key.text("fused-v1");
    key.path(cfg.require_dataset()?)?;
    key.text(&cfg.format.to_string());
    match &cfg.embeddings {
        Some(p) => key.path(p)?,
        None => key.text(&format!("fallback {} {}", cfg.fallback.dim, cfg.fallback.seed)),
    };
    let opts = serde_json::to_string(&t.feature_options()).expect("serializes");
    key.text(&opts);
    key.text(&format!("{} {} {} {}", t.seed, t.train_fraction, t.val_fraction, t.test_fraction));
    Ok(key.hex())
}

fn graph_key(fused_key: &str, tau: f64) -> String {
    ContentKey::new().text("graph-v1").text(fused_key).text(&tau.to_string()).hex()
}

/// Everything a training run needs, from the cache where possible.
struct Prepared {
    ds: Dataset,
    fused: FusedMatrix,
    stats: NormalizationStats,
    graph: SimilarityGraph,
}

fn prepare(cfg: &RunConfig, fused_override: Option<&Path>) -> Staged<Prepared> {
    let (ds, store) = load_inputs(cfg)?;
    check_inputs(&ds, &store)?;
    let labels = ds.labels().stage("load dataset")?;
    let split = stratified_split(&labels, &cfg.train).stage("split")?;

    let (fused, stats, key) = if let Some(path) = fused_override {
        let (fused, stats) = load_fused(path)?;
        let aux = if ds.has_aux() { cfg.train.aux_fields.len() } else { 0 };
        if fused.cols() != store.dim() + aux || fused.aux_cols != aux {
            return Err(Error::ModelMismatch(format!(
                "{} has {} columns ({} metadata), embeddings of width {} with {} metadata columns need {}",
                path.display(),
                fused.cols(),
                fused.aux_cols,
                store.dim(),
                aux,
                store.dim() + aux
            )))
            .stage("load fused matrix");
        }
        if fused.rows() != ds.len() {
            return Err(Error::Dimension {
                expected: ds.len(),
                got: fused.rows(),
            })
            .stage("load fused matrix");
        }
        (fused, stats, None)
    } else {
        let key = fused_key(cfg).stage("cache key")?;
        let cached = cfg.out_dir.join("cache").join(format!("fused-{key}.rgbf"));
        if !cfg.no_cache && cached.exists() {
            debug!("reusing {}", cached.display());
            let (f, s) = load_fused(&cached)?;
            (f, s, Some(key))
        } else {
            let (f, s) = build_fused_matrix(&ds, &store, &cfg.train.feature_options(), StatsSource::Fit(&split.train))
                .stage("featurize")?;
            if !cfg.no_cache {
                create_dir(&cached.with_file_name(""))?;
                save_fused(&f, &s, &cached)?;
            }
            (f, s, Some(key))
        }
    };

    let graph = match key {
        Some(k) if !cfg.no_cache => {
            let cached = cfg.out_dir.join("cache").join(format!("graph-{}.edges", graph_key(&k, cfg.train.tau)));
            if cached.exists() {
                debug!("reusing {}", cached.display());
                SimilarityGraph::read(&cached).stage("read cached graph")?
            } else {
                let g = build_graph(&fused.matrix, cfg.train.tau).stage("build graph")?;
                g.write(&cached).stage("write cached graph")?;
                g
            }
        }
        _ => build_graph(&fused.matrix, cfg.train.tau).stage("build graph")?,
    };
    info!("graph: {} nodes, {} edges at tau {}", graph.n(), graph.edge_count(), graph.tau());
    Ok(Prepared { ds, fused, stats, graph })
}

fn create_dir(p: &Path) -> Staged<()> {
    std::fs::create_dir_all(p)
        .map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
        .stage("output directory")
}

fn cmd_build_graph(cfg: &RunConfig) -> Staged<()> {
    let p = prepare(cfg, None)?;
    let dir = out_dir(cfg)?;
    save_fused(&p.fused, &p.stats, &dir.join("features.rgbf"))?;
    p.graph.write(&dir.join("graph.edges")).stage("write graph")?;
    let stats = graph_stats(&p.graph);
    write_text(&dir.join("graph_stats.json"), &(json_line(&stats) + "\n"))?;
    println!("{}", json_line(&stats));
    persist_config(cfg)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    best_epoch: usize,
    #[serde(flatten)]
    evaluation: &'a Evaluation,
}

fn cmd_train(cfg: &RunConfig, fused: Option<PathBuf>) -> Staged<()> {
    let p = prepare(cfg, fused.as_deref())?;
    let labels = p.ds.labels().stage("load dataset")?;
    let split = stratified_split(&labels, &cfg.train).stage("split")?;
    let mut model =
        train_on_graph(&p.fused.matrix, &p.graph, &labels, &split, &cfg.train).stage("train")?;
    model.stats = p.stats;
    let inf = infer(&model, &p.fused.matrix).stage("evaluate")?;
    let eval = evaluate_rows(&inf, &labels, &split.test).stage("evaluate")?;

    let dir = out_dir(cfg)?;
    save_model(&model, &dir.join("model.rgbm")).stage("write model")?;
    write_text(&dir.join("history.csv"), &history_csv(&model.history))?;
    let line = json_line(&TrainSummary {
        best_epoch: model.best_epoch,
        evaluation: &eval,
    });
    write_text(&dir.join("metrics.json"), &format!("{line}\n"))?;
    println!("{line}");
    persist_config(cfg)
}

fn model_path(cfg: &RunConfig, model: Option<PathBuf>) -> PathBuf {
    model.unwrap_or_else(|| cfg.out_dir.join("model.rgbm"))
}

fn cmd_evaluate(cfg: &RunConfig, model: Option<PathBuf>) -> Staged<()> {
    let model: Model = load_model(&model_path(cfg, model)).stage("load model")?;
    let (ds, store) = load_inputs(cfg)?;
    let eval = evaluate_model(&model, &ds, &store).stage("evaluate")?;
    let dir = out_dir(cfg)?;
    let line = json_line(&eval);
    write_text(&dir.join("evaluation.json"), &format!("{line}\n"))?;
    match (eval.pr_curve(), eval.roc_curve()) {
        (Ok(pr), Ok(roc)) => {
            write_text(&dir.join("pr_curve.csv"), &pr_curve_csv(&pr))?;
            write_text(&dir.join("roc_curve.csv"), &roc_curve_csv(&roc))?;
        }
        (Err(e), _) | (_, Err(e)) => log::warn!("curves skipped: {e}"),
    }
    println!("{line}");
    persist_config(cfg)
}

fn cmd_sweep(cfg: &RunConfig, taus: &[f64]) -> Staged<()> {
    let (ds, store) = load_inputs(cfg)?;
    check_inputs(&ds, &store)?;
    let rows = sweep_accuracy(&ds, &store, &cfg.train, taus).stage("sweep")?;
    let dir = out_dir(cfg)?;
    write_text(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    for r in &rows {
        info!("tau {}: {} edges, accuracy {}", r.tau, r.graph.edge_count, r.accuracy);
    }
    persist_config(cfg)
}

fn cmd_ablate(cfg: &RunConfig) -> Staged<()> {
    let (ds, store) = load_inputs(cfg)?;
    check_inputs(&ds, &store)?;
    let rows = ablate(&ds, &store, &cfg.train).stage("ablate")?;
    let dir = out_dir(cfg)?;
    write_text(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
    persist_config(cfg)
}

fn cmd_export(cfg: &RunConfig, model: Option<PathBuf>, output: Option<PathBuf>) -> Staged<()> {
    let model: Model = load_model(&model_path(cfg, model)).stage("load model")?;
    let (ds, store) = load_inputs(cfg)?;
    let dir = out_dir(cfg)?;
    let output = output.unwrap_or_else(|| dir.join("node_embeddings.csv"));
    export_node_embeddings(&model, &ds, &store, &output).stage("export embeddings")?;
    persist_config(cfg)
}
