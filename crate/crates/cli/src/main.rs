use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spatial_grounding::backends::fixture::{ANSWERS_FILE, DETECTIONS_FILE, SCENE_GRAPHS_FILE};
use spatial_grounding::backends::{
    AnswerModel, EchoModel, FallbackGrader, FixtureDetector, FixtureModel, FixtureSceneGraphs, GeometryOracleModel,
    SeededCoinModel,
};
use spatial_grounding::config::{Overrides, ReportFormat, RunConfig, ScriptedModelSpec};
use spatial_grounding::entities::{EntityExtractor, TagLexicon};
use spatial_grounding::pipeline::Pipeline;
use spatial_grounding::report::{build_report, emit_report, read_records, ReportMeta};
use spatial_grounding::server::{serve, ServedBackends};
use spatial_grounding::{BenchmarkKind, PromptVariant};

#[derive(Parser)]
#[command(name = "spatial-grounding", version, about = "Grounded prompting and benchmark evaluation for multimodal models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one or more prompt variants over a benchmark.
    Run(RunArgs),
    /// Rebuild reports from a saved records.jsonl.
    Rescore(RescoreArgs),
    /// Serve fixture or scripted backends over HTTP.
    Serve(ServeArgs),
    /// Print the entities extracted from a question.
    Extract(ExtractArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<BenchmarkKind>,
    /// Manifest file or benchmark directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Variant to run; repeatable. `all` selects every variant.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// Directory holding detections.jsonl, scenegraphs.jsonl and answers.jsonl.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Report output directory.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RescoreArgs {
    /// records.jsonl written by a previous run.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    benchmark: BenchmarkKind,
    #[arg(long, default_value = "model")]
    model_name: String,
    #[arg(long, default_value = "baseline")]
    base_variant: PromptVariant,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Mount fixture backends found in this directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Scripted model: oracle, coin, oracle+coin or echo:<text>.
    #[arg(long)]
    model: Option<ScriptedModelSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    question: String,
}

fn parse_variants(raw: &[String]) -> Result<Vec<PromptVariant>> {
    let mut out = Vec::new();
    for v in raw {
        if v.eq_ignore_ascii_case("all") {
            out.extend(PromptVariant::ALL);
        } else {
            out.push(v.parse().map_err(anyhow::Error::msg)?);
        }
    }
    Ok(out)
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let (Some(benchmark), Some(manifest)) = (args.benchmark, &args.manifest) else {
                bail!("without --config, both --benchmark and --manifest are required");
            };
            RunConfig::new(benchmark, manifest)
        }
    };
    config.apply(Overrides {
        benchmark: args.benchmark,
        manifest: args.manifest,
        variants: parse_variants(&args.variants)?,
        fixtures: args.fixtures,
        cache_dir: args.cache,
        report_dir: args.report,
        parallelism: args.parallelism,
        seed: args.seed,
    });
    let pipeline = Pipeline::from_config(config)?;
    let outcome = pipeline.run_manifest()?;
    print!("{}", outcome.report.to_table());
    let stats = &outcome.stats;
    eprintln!(
        "{} samples, {} records ({} failed), {} backend calls, cache hit rate {:.1}%",
        stats.samples,
        stats.records,
        stats.failed_records,
        stats.backend_calls(),
        100.0 * stats.cache_hit_rate
    );
    if let Some(dir) = &pipeline.config().report_dir {
        outcome
            .write(dir, &pipeline.config().report_formats)
            .with_context(|| format!("writing reports to {}", dir.display()))?;
    }
    Ok(())
}

fn rescore(args: RescoreArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let mut variants: Vec<PromptVariant> = records.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    let samples = records
        .iter()
        .map(|r| r.sample_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let report = build_report(
        ReportMeta {
            benchmark: args.benchmark,
            model_name: args.model_name,
            config_hash: String::new(),
            base_variant: Some(args.base_variant),
            n_samples: samples,
        },
        &variants,
        &records,
    )?;
    emit_report(&report, &args.report, &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table])?;
    print!("{}", report.to_table());
    Ok(())
}

fn fixture_path(dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    dir.map(|d| d.join(name)).filter(|p| p.is_file())
}

fn serve_backends(args: &ServeArgs) -> Result<ServedBackends> {
    let dir = args.fixtures.as_deref();
    let mut backends = ServedBackends {
        grader: Some(Arc::new(FallbackGrader)),
        tagger: Some(Arc::new(TagLexicon::builtin())),
        ..Default::default()
    };
    if let Some(p) = fixture_path(dir, DETECTIONS_FILE) {
        backends.detector = Some(Arc::new(FixtureDetector::load(&p)?));
    }
    if let Some(p) = fixture_path(dir, SCENE_GRAPHS_FILE) {
        backends.scene_graph = Some(Arc::new(FixtureSceneGraphs::load(&p)?));
    }
    backends.model = match &args.model {
        Some(spec) => Some(match spec {
            ScriptedModelSpec::Oracle => Arc::new(GeometryOracleModel::default()) as Arc<dyn AnswerModel>,
            ScriptedModelSpec::OracleWithCoin => Arc::new(GeometryOracleModel::default().with_coin_fallback(args.seed)),
            ScriptedModelSpec::Coin => Arc::new(SeededCoinModel::new(args.seed)),
            ScriptedModelSpec::Echo(text) => Arc::new(EchoModel::new(text.clone())),
        }),
        None => match fixture_path(dir, ANSWERS_FILE) {
            Some(p) => Some(Arc::new(FixtureModel::load(&p)?)),
            None => None,
        },
    };
    Ok(backends)
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let backends = serve_backends(&args)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(args.addr, backends))?;
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let pair = EntityExtractor::default().extract(&args.question)?;
    for entity in pair.iter() {
        println!("{}\t{}", entity.text, entity.head);
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Rescore(args) => rescore(args),
        Command::Serve(args) => serve_cmd(args),
        Command::Extract(args) => extract(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
