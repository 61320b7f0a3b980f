use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use uniqa::eval::{ablation_grid, load_dataset, run_ablation, run_eval};
use uniqa::generation::{GeneratorKind, GeneratorProviderSpec};
use uniqa::pipeline::{ingest_and_index, load_corpus, Engine, PipelineConfig, SessionStore};
use uniqa::ranker::{CrossScorerSpec, ScorerKind};
use uniqa::retrieval::{EmbedderKind, IndexManifest};

#[derive(Parser)]
#[command(name = "uniqa", version, about = "Question answering over text, tables and image metadata")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Textualize a corpus and build a vector index.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_global: bool,
        #[arg(long)]
        no_local: bool,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Answer a single question against an index.
    Ask {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Evaluate a dataset and write a report.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add gold clues missing from the top-K to the retrieved set.
        #[arg(long)]
        inject_gold: bool,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Evaluate a corpus under each textualization setting.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory holding session files.
        #[arg(long, default_value = "sessions")]
        sessions: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Local,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Local,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Extractive,
    Remote,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    topn: Option<usize>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderArg>,
    #[arg(long)]
    embedder_url: Option<String>,
    /// Embedding dimension; defaults to the index's.
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    #[arg(long)]
    scorer_url: Option<String>,
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
    #[arg(long)]
    generator_url: Option<String>,
    #[arg(long)]
    max_answer_tokens: Option<usize>,
}

impl ProviderArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        if let Some(k) = self.topk {
            c.top_k = k;
        }
        if let Some(n) = self.topn {
            c.top_n = n;
        }
        if let Some(e) = self.embedder {
            c.embedder.kind = match e {
                EmbedderArg::Local => EmbedderKind::LocalHash,
                EmbedderArg::Remote => EmbedderKind::Remote,
            };
        }
        if let Some(url) = &self.embedder_url {
            c.embedder.endpoint = Some(url.clone());
        }
        if let Some(d) = self.dimension {
            c.embedder.dimension = d;
        }
        if let Some(s) = self.scorer {
            c.scorer = match s {
                ScorerArg::Local => CrossScorerSpec { kind: ScorerKind::LocalLexical, ..c.scorer.clone() },
                ScorerArg::Remote => CrossScorerSpec { kind: ScorerKind::Remote, ..c.scorer.clone() },
            };
        }
        if let Some(url) = &self.scorer_url {
            c.scorer.endpoint = Some(url.clone());
        }
        if let Some(g) = self.generator {
            c.generator = match g {
                GeneratorArg::Extractive => GeneratorProviderSpec { kind: GeneratorKind::Extractive, ..c.generator.clone() },
                GeneratorArg::Remote => GeneratorProviderSpec { kind: GeneratorKind::Remote, ..c.generator.clone() },
            };
        }
        if let Some(url) = &self.generator_url {
            c.generator.endpoint = Some(url.clone());
        }
        if let Some(t) = self.max_answer_tokens {
            c.generator.max_answer_tokens = t;
        }
    }
}

fn base_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    })
}

/// Config for querying an existing index: the index's dimension and
/// textualization flags apply unless overridden.
fn query_config(base: PipelineConfig, index: &Path, providers: &ProviderArgs) -> anyhow::Result<PipelineConfig> {
    let manifest = IndexManifest::read(index).with_context(|| format!("opening index {}", index.display()))?;
    let mut config = base;
    config.index_path = Some(index.to_path_buf());
    config.embedder.dimension = manifest.dimension;
    config.textualization.use_global = manifest.textualization.use_global;
    config.textualization.use_local = manifest.textualization.use_local;
    providers.apply(&mut config);
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|()| writeln!(out));
    match written {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let base = base_config(cli.config.as_deref())?;

    match cli.command {
        Command::Ingest { corpus, out, no_global, no_local, providers } => {
            let mut config = base;
            providers.apply(&mut config);
            config.textualization.use_global &= !no_global;
            config.textualization.use_local &= !no_local;
            let report = ingest_and_index(&corpus, &out, &config)?;
            for r in &report.rejected {
                tracing::warn!(line = r.line, id = ?r.id, "rejected: {}", r.message);
            }
            print_json(&report)?;
        }
        Command::Ask { index, question, providers } => {
            let engine = Engine::open(query_config(base, &index, &providers)?)?;
            print_json(&engine.answer(&[], &question)?)?;
        }
        Command::Eval { index, dataset, out, inject_gold, providers } => {
            let mut config = query_config(base, &index, &providers)?;
            config.inject_gold |= inject_gold;
            let ablation = config.textualization;
            let engine = Engine::open(config)?;
            let dataset = load_dataset(&dataset)?;
            let report = run_eval(&dataset, &engine, &ablation)?;
            let dir = report.write(&out)?;
            eprintln!(
                "{} examples ({} failed), report in {}",
                report.example_count,
                report.failed_count,
                dir.display()
            );
            print_json(&serde_json::json!({
                "config_fingerprint": report.config_fingerprint,
                "em": report.em,
                "f1": report.f1,
                "retrieval_f1": report.retrieval_f1,
                "keyword_acc": report.keyword_acc,
            }))?;
        }
        Command::Ablate { corpus, dataset, out, providers } => {
            let mut config = base;
            providers.apply(&mut config);
            let (docs, rejected) = load_corpus(&corpus)?;
            if !rejected.is_empty() {
                tracing::warn!(count = rejected.len(), "records rejected while parsing the corpus");
            }
            let dataset = load_dataset(&dataset)?;
            let runs = run_ablation(&docs, &dataset, &config, &ablation_grid(&config.textualization))?;
            let mut summary = Vec::new();
            for run in &runs {
                let dir = run.report.write(&out)?;
                summary.push(serde_json::json!({
                    "use_global": run.textualization.use_global,
                    "use_local": run.textualization.use_local,
                    "rejected": run.rejected,
                    "em": run.report.em,
                    "f1": run.report.f1,
                    "keyword_acc": run.report.keyword_acc,
                    "report": dir,
                }));
            }
            print_json(&summary)?;
        }
        Command::Serve { index, port, host, sessions, providers } => {
            let config = query_config(base, &index, &providers)?;
            // built before the runtime: remote providers use blocking clients
            let engine = Arc::new(Engine::open(config)?);
            let store = SessionStore::open(&sessions)?;
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            if let Err(e) = rt.block_on(uniqa::service::serve(engine, store, addr)) {
                bail!(e);
            }
        }
    }
    Ok(())
}
