mod serve;

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use citeguard_core::chunking::ChunkingConfig;
use citeguard_core::embedding::{make_embedder, ProviderConfig, ProviderKind, DEFAULT_MOCK_DIM};
use citeguard_core::evaluation::{
    load_labels, load_queries, load_records, report_metrics, run_queries, write_records,
    write_report, RunOptions,
};
use citeguard_core::generation::{make_generator, GenConfig, DEFAULT_GEN_MODEL};
use citeguard_core::pipeline::{Pipeline, QueryResponseBody};
use citeguard_core::retrieval::{ChunkTable, RetrievalConfig, DEFAULT_K, DEFAULT_TAU};
use citeguard_core::store::{index_store, ingest_dir, OpenStore};
use citeguard_core::stub::{StubOptions, StubServer};
use citeguard_core::SystemResponse;

const EXIT_ABSTAINED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "citeguard",
    version,
    about = "Citation-enforced question answering over document stores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate interchange documents and build a chunk store
    Ingest {
        /// Directory of *.json interchange files
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Drop unknown fields instead of rejecting the file
        #[arg(long)]
        lenient: bool,
        #[command(flatten)]
        chunking: ChunkArgs,
    },
    /// Embed every chunk and write the vector index
    Index {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        embed: EmbedArgs,
        /// Replace an index built with a different dimension
        #[arg(long)]
        rebuild: bool,
    },
    /// Answer one question from the store
    Query {
        #[arg(long)]
        store: PathBuf,
        question: String,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        providers: ProviderArgs,
        /// Print the JSON response body instead of text
        #[arg(long)]
        json: bool,
    },
    /// Serve the query API over HTTP
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Run query sets and build metric reports
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Run a local stand-in for the embedding and generation services
    Stub {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Dimension of the vectors returned by /embed
        #[arg(long, default_value_t = DEFAULT_MOCK_DIM)]
        dim: usize,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Answer every query in a set and write records.jsonl
    Run {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value = "records.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        parallelism: u16,
        /// Record per-query wall time (makes records run-dependent)
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Compute metrics from records and optional labels, write report.json
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ChunkArgs {
    #[arg(long, default_value_t = ChunkingConfig::default().target_len)]
    target_len: usize,
    #[arg(long, default_value_t = ChunkingConfig::default().min_len)]
    min_len: usize,
    #[arg(long, default_value_t = ChunkingConfig::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = ChunkingConfig::default().overlap_len)]
    overlap_len: usize,
}

#[derive(Args)]
struct EmbedArgs {
    /// Embedding service base URL, or "mock"
    #[arg(long, env = "CITEGUARD_EMBED_URL")]
    provider: Option<String>,
    /// Embedding model id sent to the service
    #[arg(long)]
    model: Option<String>,
    /// Vector dimension of the mock provider
    #[arg(long)]
    mock_dim: Option<usize>,
}

#[derive(Args)]
struct ProviderArgs {
    #[command(flatten)]
    embed: EmbedArgs,
    /// Generation service base URL, or "mock"
    #[arg(long, env = "CITEGUARD_LLM_URL", default_value = "mock")]
    llm: String,
    #[arg(long, default_value = DEFAULT_GEN_MODEL)]
    llm_model: String,
    #[arg(long, default_value_t = GenConfig::default().max_attempts)]
    max_attempts: u32,
}

#[derive(Args, Clone, Copy)]
struct RetrievalArgs {
    /// Evidence chunks retrieved per query
    #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_k)]
    k: usize,
    /// Minimum top-1 similarity required to answer
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = parse_tau)]
    tau: f64,
}

impl RetrievalArgs {
    fn config(self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            tau: self.tau,
        }
    }
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => Err("k must be a positive integer".into()),
    }
}

fn parse_tau(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(t) if (-1.0..=1.0).contains(&t) => Ok(t),
        Ok(_) => Err("tau out of range: must lie in [-1, 1]".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Resolves an embedding provider: flags and environment first, then the
/// settings recorded in the store manifest, then the mock.
fn embed_config(args: &EmbedArgs, recorded: Option<ProviderConfig>) -> ProviderConfig {
    let mut cfg = match args.provider.as_deref() {
        Some("mock") => ProviderConfig {
            mock_dim: recorded
                .as_ref()
                .filter(|r| r.kind == ProviderKind::DeterministicMock)
                .map_or(DEFAULT_MOCK_DIM, |r| r.mock_dim),
            ..ProviderConfig::mock()
        },
        Some(url) => {
            let mut c = ProviderConfig::remote(url);
            if let Some(r) = recorded.as_ref().filter(|r| r.kind == ProviderKind::Remote) {
                c.model_id = r.model_id.clone();
            }
            c
        }
        None => recorded.unwrap_or_else(ProviderConfig::mock),
    };
    if let Some(m) = &args.model {
        cfg.model_id = m.clone();
    }
    if let Some(d) = args.mock_dim {
        cfg.mock_dim = d;
    }
    cfg
}

fn llm_config(args: &ProviderArgs) -> ProviderConfig {
    let mut cfg = match args.llm.as_str() {
        "mock" => ProviderConfig::mock(),
        url => ProviderConfig::remote(url),
    };
    cfg.model_id = args.llm_model.clone();
    cfg
}

pub(crate) struct Loaded {
    pub pipeline: Pipeline,
    pub docs: usize,
    pub chunks: usize,
}

fn load_pipeline(store: &Path, providers: &ProviderArgs) -> Result<Loaded> {
    let open =
        OpenStore::open(store).with_context(|| format!("opening store {}", store.display()))?;
    let index = open.require_index()?.clone();
    let embed = embed_config(&providers.embed, open.manifest.provider_config());
    let embedder = make_embedder(&embed).context("configuring the embedding provider")?;
    let generator = make_generator(&llm_config(providers)).context("configuring the generator")?;
    let gen = GenConfig {
        max_attempts: providers.max_attempts,
        ..GenConfig::default()
    };
    gen.validate()?;
    Ok(Loaded {
        docs: open.manifest.docs,
        chunks: open.manifest.chunks,
        pipeline: Pipeline {
            index,
            chunks: ChunkTable::new(open.chunks),
            embedder,
            generator,
            gen,
        },
    })
}

fn print_response(body: &QueryResponseBody, response: &SystemResponse) {
    match response {
        SystemResponse::Answered { paragraphs, .. } => {
            let text: Vec<&str> = paragraphs.iter().map(|p| p.text.as_str()).collect();
            println!("{}", text.join("\n\n"));
            println!();
            println!("Evidence:");
            for e in &body.evidence {
                println!("  {:.3}  {}", e.score, e.citation);
            }
        }
        SystemResponse::Abstained { message, .. } => println!("{message}"),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest {
            input,
            store,
            lenient,
            chunking,
        } => {
            let cfg = ChunkingConfig {
                target_len: chunking.target_len,
                min_len: chunking.min_len,
                max_len: chunking.max_len,
                overlap_len: chunking.overlap_len,
            };
            let s = ingest_dir(&input, &store, lenient, &cfg)?;
            println!("{:<24} {:>6} {:>8}", "authority", "docs", "chunks");
            for (authority, c) in &s.authorities {
                println!("{authority:<24} {:>6} {:>8}", c.docs, c.chunks);
            }
            println!("{:<24} {:>6} {:>8}", "total", s.docs, s.chunks);
            if s.dropped_blocks > 0 {
                println!("warning: {} empty block(s) dropped", s.dropped_blocks);
            }
        }
        Command::Index {
            store,
            embed,
            rebuild,
        } => {
            let recorded = OpenStore::open(&store)
                .ok()
                .and_then(|s| s.manifest.provider_config());
            let cfg = embed_config(&embed, recorded);
            let s = index_store(&store, &cfg, rebuild)?;
            println!(
                "indexed {} chunks (dim {}, model {})",
                s.rows, s.dim, s.model_id
            );
        }
        Command::Query {
            store,
            question,
            retrieval,
            providers,
            json,
        } => {
            let loaded = load_pipeline(&store, &providers)?;
            let outcome = loaded.pipeline.answer(&question, &retrieval.config())?;
            let body = QueryResponseBody::from_outcome(&outcome);
            if json {
                let mut out = std::io::stdout().lock();
                out.write_all(body.to_wire().as_bytes())?;
                out.flush()?;
            } else {
                print_response(&body, &outcome.response);
            }
            if !outcome.response.is_answered() {
                return Ok(ExitCode::from(EXIT_ABSTAINED));
            }
        }
        Command::Serve {
            store,
            host,
            port,
            retrieval,
            providers,
        } => {
            let loaded = load_pipeline(&store, &providers)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("invalid listen address {host}:{port}"))?;
            serve::run(loaded, retrieval.config(), addr)?;
        }
        Command::Eval { command } => match command {
            EvalCommand::Run {
                store,
                queries,
                out,
                parallelism,
                timing,
                retrieval,
                providers,
            } => {
                let queries = load_queries(&queries)?;
                let loaded = load_pipeline(&store, &providers)?;
                let opts = RunOptions {
                    parallelism: parallelism.into(),
                    record_timing: timing,
                };
                let records = run_queries(&queries, &loaded.pipeline, &retrieval.config(), &opts)?;
                write_records(&out, &records)?;
                let failed = records.iter().filter(|r| r.error.is_some()).count();
                println!("wrote {} records to {}", records.len(), out.display());
                if failed > 0 {
                    println!("warning: {failed} quer(ies) failed; see the error field");
                }
            }
            EvalCommand::Report {
                records,
                labels,
                out,
            } => {
                let records = load_records(&records)?;
                let labels = labels.as_deref().map(load_labels).transpose()?;
                let report = report_metrics(&records, labels.as_deref())?;
                write_report(&out, &report)?;
                print!("{}", report.render_table());
            }
        },
        Command::Stub { host, port, dim } => {
            if dim < 1 {
                bail!("dim must be positive");
            }
            let server = StubServer::bind(
                &format!("{host}:{port}"),
                StubOptions {
                    embed_dim: dim,
                    ..StubOptions::default()
                },
            )
            .context("starting stub server")?;
            println!("stub listening on {}", server.url());
            std::io::stdout().flush()?;
            server.wait();
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
