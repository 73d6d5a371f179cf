//! `lshe` subcommands. Every failure ends in one `error: <kind>: <message>`
//! line on stderr and a nonzero exit status (2 for usage errors).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lshensemble::baselines::build_asym;
use lshensemble::corpus::{
    corpus_stats, ingest_csv, read_corpus, write_corpus, CorpusManifest, HeaderMode, IngestOptions,
};
use lshensemble::eval::{evaluate, write_metrics_csv, EvalOptions, DEFAULT_QUERIES};
use lshensemble::partition::PowerLawModel;
use lshensemble::synth::{generate, SynthConfig};
use lshensemble::tuner::default_thresholds;
use lshensemble::{Domain, Ensemble, EnsembleConfig, IndexKind};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::fanout::ShardSet;
use crate::server;
use crate::shard::{round_robin, shard_dir_name};
use crate::wire::{QueryDiagnostics, QueryResponse};

#[derive(Debug, Parser)]
#[command(name = "lshe", version, about = "Containment search over set-valued domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read CSV files into a corpus, one domain per column.
    Ingest(IngestArgs),
    /// Write a seeded synthetic corpus with power-law domain sizes.
    Generate(GenerateArgs),
    /// Print size statistics of a corpus.
    Stats(StatsArgs),
    /// Build an index snapshot from a corpus.
    Index(IndexArgs),
    /// Query an index snapshot.
    Query(QueryArgs),
    /// Measure precision and recall against exact containment.
    Eval(EvalArgs),
    /// Serve an index snapshot over HTTP.
    Serve(ServeArgs),
    /// Query several running shards and union the results.
    Fanout(FanoutArgs),
}

/// Index configuration shared by `index` and `eval`.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 256)]
    pub num_perm: usize,
    #[arg(long, default_value_t = 32)]
    pub partitions: usize,
    #[arg(long, default_value_t = 4)]
    pub rmax: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub min_size: u64,
}

impl ConfigArgs {
    pub fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            num_perm: self.num_perm,
            num_partitions: self.partitions,
            r_max: self.rmax,
            seed: self.seed,
            min_size: self.min_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeaderArg {
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV files to read.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Corpus file to write (newline-delimited JSON).
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub min_size: u64,
    #[arg(long, value_enum, default_value_t = HeaderArg::Auto)]
    pub header: HeaderArg,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub domains: usize,
    /// Power-law exponent of the size distribution.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub min_size: u64,
    #[arg(long, default_value_t = 5_000)]
    pub max_size: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Ensemble,
    Baseline,
    Asym,
    AsymPartitioned,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    pub corpus: PathBuf,
    /// Snapshot directory to write.
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = KindArg::Ensemble)]
    pub kind: KindArg,
    /// Split the corpus round-robin into this many independently built shards.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub shards: u64,
}

/// Where the query values come from.
#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct QuerySource {
    /// File with one query value per line.
    #[arg(long, conflicts_with_all = ["corpus", "id"])]
    pub values: Option<PathBuf>,
    /// Corpus holding the query domain; used with `--id`.
    #[arg(long, requires = "id")]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Snapshot directory.
    pub index: PathBuf,
    #[command(flatten)]
    pub source: QuerySource,
    #[arg(long, default_value_t = 0.5, value_parser = parse_threshold)]
    pub threshold: f64,
    /// Query size to tune for; defaults to the number of distinct query values.
    #[arg(long, conflicts_with = "estimate_size")]
    pub query_size: Option<u64>,
    /// Estimate the query size from the signature instead.
    #[arg(long)]
    pub estimate_size: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub corpus: PathBuf,
    /// Directory for `metrics.csv` and `report.json`.
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = DEFAULT_QUERIES)]
    pub queries: usize,
    /// Comma-separated thresholds; defaults to 0.05..1.0 in steps of 0.05.
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub query_seed: u64,
    /// Also evaluate the single-partition MinHash LSH index.
    #[arg(long)]
    pub baseline: bool,
    /// Also evaluate asymmetric minwise hashing.
    #[arg(long)]
    pub asym: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub index: PathBuf,
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct FanoutArgs {
    /// Shard endpoint (`host:port` or URL). Repeat for each shard.
    #[arg(long = "shard", required = true)]
    pub shards: Vec<String>,
    #[command(flatten)]
    pub source: QuerySource,
    #[arg(long, default_value_t = 0.5, value_parser = parse_threshold)]
    pub threshold: f64,
    #[arg(long, conflicts_with = "estimate_size")]
    pub query_size: Option<u64>,
    #[arg(long)]
    pub estimate_size: bool,
    /// Per-shard request timeout.
    #[arg(long, default_value_t = 5_000)]
    pub timeout_ms: u64,
}

fn parse_threshold(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(format!("threshold must lie in (0, 1], got {s}"))
    }
}

fn parse_delimiter(s: &str) -> std::result::Result<u8, String> {
    match s.as_bytes() {
        [b] => Ok(*b),
        _ if s == "\\t" => Ok(b'\t'),
        _ => Err("delimiter must be a single byte".into()),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            let message = message.join(" ");
            let err = CliError::Usage(message.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.one_line());
            return err.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.one_line());
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::Fanout(a) => fanout(a),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(lshensemble::Error::from)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        // A closed reader (`| head`) is not a failure of the command.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("stdout", e)),
        _ => Ok(()),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let opts = IngestOptions {
        min_size: a.min_size,
        header: match a.header {
            HeaderArg::Auto => HeaderMode::Auto,
            HeaderArg::Present => HeaderMode::Present,
            HeaderArg::Absent => HeaderMode::Absent,
        },
        delimiter: a.delimiter,
    };
    let report = ingest_csv(&a.files, &opts);
    let failed: Vec<_> = report.failed_files().cloned().collect();
    if failed.len() == report.files.len() {
        let reasons: Vec<String> = failed
            .iter()
            .map(|f| format!("{}: {}", f.path, f.error.as_deref().unwrap_or("")))
            .collect();
        return Err(CliError::Usage(format!("no input file could be read ({})", reasons.join("; "))));
    }
    write_corpus(&report.domains, &a.out)?;
    let sources = a.files.iter().map(|p| p.display().to_string()).collect();
    let mut manifest = CorpusManifest::describe(&report.domains, sources, a.min_size);
    manifest.skipped_small = report.skipped_small;
    manifest.created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs());
    manifest.write(CorpusManifest::path_for(&a.out))?;
    print_json(&json!({
        "corpus": a.out,
        "domains": report.domains.len(),
        "skipped_small": report.skipped_small,
        "malformed_rows": report.malformed_rows(),
        "files": report.files,
    }))
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let model = PowerLawModel::new(a.alpha, a.min_size, a.max_size)?;
    let domains = generate(&SynthConfig::new(a.domains, model, a.seed))?;
    write_corpus(&domains, &a.out)?;
    let mut manifest = CorpusManifest::describe(&domains, vec!["synthetic".into()], a.min_size);
    manifest.seed = Some(a.seed);
    manifest.write(CorpusManifest::path_for(&a.out))?;
    print_json(&json!({ "corpus": a.out, "domains": domains.len() }))
}

fn stats(a: StatsArgs) -> Result<()> {
    print_json(&corpus_stats(&a.corpus)?)
}

fn build_kind(domains: &[Domain], config: EnsembleConfig, kind: KindArg) -> Result<Ensemble> {
    Ok(match kind {
        KindArg::Ensemble => Ensemble::build(domains, config, IndexKind::Ensemble, None)?,
        KindArg::Baseline => Ensemble::build(domains, config, IndexKind::Baseline, None)?,
        KindArg::Asym => build_asym(domains, config, false, None)?.0,
        KindArg::AsymPartitioned => build_asym(domains, config, true, None)?.0,
    })
}

fn index(a: IndexArgs) -> Result<()> {
    let config = a.config.config();
    config.validate()?;
    let domains = read_corpus(&a.corpus)?;
    let start = Instant::now();
    let mut built = Vec::new();
    if a.shards == 1 {
        let index = build_kind(&domains, config, a.kind)?;
        index.save(&a.out)?;
        built.push(json!({ "dir": a.out, "indexed": index.len(), "fingerprint": index.fingerprint() }));
    } else {
        for (i, part) in round_robin(&domains, a.shards as usize).iter().enumerate() {
            let dir = a.out.join(shard_dir_name(i));
            let index = build_kind(part, config, a.kind)?;
            index.save(&dir)?;
            built.push(json!({ "dir": dir, "indexed": index.len(), "fingerprint": index.fingerprint() }));
        }
    }
    print_json(&json!({
        "shards": built,
        "build_seconds": start.elapsed().as_secs_f64(),
    }))
}

fn read_values(path: &Path) -> Result<Domain> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let values: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    Ok(Domain::new("query", values)?)
}

fn query_domain(source: &QuerySource) -> Result<Domain> {
    if let Some(path) = &source.values {
        return read_values(path);
    }
    match (&source.corpus, &source.id) {
        (Some(corpus), Some(id)) => {
            for d in lshensemble::corpus::CorpusReader::open(corpus)? {
                let d = d?;
                if d.id() == id {
                    return Ok(d);
                }
            }
            Err(CliError::Usage(format!("no domain `{id}` in {}", corpus.display())))
        }
        _ => Err(CliError::Usage("give --values or --corpus with --id".into())),
    }
}

fn query_size(domain: &Domain, explicit: Option<u64>, estimate: bool) -> Option<u64> {
    match (explicit, estimate) {
        (Some(q), _) => Some(q),
        (None, true) => None,
        (None, false) => Some(domain.len() as u64),
    }
}

fn query(a: QueryArgs) -> Result<()> {
    let index = Ensemble::load(&a.index)?;
    let domain = query_domain(&a.source)?;
    let sig = index.signature(&domain)?;
    let result = index.query(&sig, a.threshold, query_size(&domain, a.query_size, a.estimate_size))?;
    print_json(&QueryResponse {
        candidates: result.candidates,
        diagnostics: QueryDiagnostics {
            fingerprint: index.fingerprint(),
            mismatch: None,
            query_size: Some(result.query_size),
            query_size_estimated: result.query_size_estimated,
            partitions: result.partitions,
            elapsed_micros: result.elapsed.as_micros() as u64,
        },
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let config = a.config.config();
    config.validate()?;
    let domains = read_corpus(&a.corpus)?;
    let opts = EvalOptions {
        num_queries: a.queries,
        thresholds: if a.thresholds.is_empty() { default_thresholds() } else { a.thresholds },
        seed: a.query_seed,
        include_baseline: a.baseline,
        include_asym: a.asym,
    };
    let summary = evaluate(&domains, config, &opts)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(a.out.display().to_string(), e))?;
    let csv = a.out.join("metrics.csv");
    write_metrics_csv(&csv, &summary.reports)?;
    let report = a.out.join("report.json");
    let bytes = serde_json::to_vec_pretty(&summary).map_err(lshensemble::Error::from)?;
    std::fs::write(&report, bytes).map_err(|e| CliError::io(report.display().to_string(), e))?;
    let headline: Vec<_> = summary
        .reports
        .iter()
        .filter_map(|r| {
            r.at(0.5).map(|m| {
                json!({ "index": r.index, "threshold": m.threshold, "precision": m.precision, "recall": m.recall })
            })
        })
        .collect();
    print_json(&json!({
        "queries": summary.queries,
        "metrics_csv": csv,
        "report_json": report,
        "headline": headline,
    }))
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("tokio runtime", e))
}

fn serve(a: ServeArgs) -> Result<()> {
    let index = Arc::new(Ensemble::load(&a.index)?);
    runtime()?.block_on(async move {
        let (listener, addr) = server::bind(&a.bind).await?;
        {
            let mut out = std::io::stdout().lock();
            writeln!(out, "listening on http://{addr} fingerprint {}", index.fingerprint())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io("stdout", e))?;
        }
        server::serve(listener, index).await
    })
}

fn fanout(a: FanoutArgs) -> Result<()> {
    let domain = query_domain(&a.source)?;
    let size = query_size(&domain, a.query_size, a.estimate_size);
    let result = runtime()?.block_on(async {
        let shards = ShardSet::connect(&a.shards, Duration::from_millis(a.timeout_ms)).await?;
        let sig = shards.family()?.domain_signature(&domain)?;
        Ok::<_, CliError>(shards.query(&sig, a.threshold, size).await)
    })?;
    print_json(&result)?;
    result.into_complete().map(|_| ())
}
