//! `cvloc`: localization experiments from the command line.
//!
//! Every verb talks to a cvloc service over HTTP. Pass --server to use a
//! running one; otherwise an ephemeral in-process server is spawned for
//! the duration of the command, so the CLI works standalone.

mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cvloc_api::{
    Client, ExperimentRequest, KmlCheckRequest, SweepRequest, TableCheckRequest, TableKind,
};
use cvloc_core::experiment::{ExperimentReport, InitMode, REPORT_RECALL_FRACTIONS};
use cvloc_core::filter::Strategy;
use cvloc_core::geo::GeoCoordinate;
use cvloc_core::ingest::{write_comparison_summary, write_run_report, write_sweep_summary};

use config::Overrides;

#[derive(Parser)]
#[command(name = "cvloc", version, about = "Cross-view retrieval + particle-filter localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8347")]
        addr: SocketAddr,
    },
    /// Run one experiment and write the per-step report CSV.
    Run(ExperimentArgs),
    /// Run both fusion strategies on the identical scenario and seeds.
    Compare(ExperimentArgs),
    /// Rerun an experiment across values of one parameter.
    Sweep(SweepArgs),
    /// Validate trajectory and descriptor-table files without running
    /// anything.
    IngestCheck(IngestArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config file; omitted sections use the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base URL of a running service (default: spawn one in-process).
    #[arg(long)]
    server: Option<String>,
    /// Fusion strategy: ppf or capf.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Base filter seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeded filter runs to pool.
    #[arg(long)]
    runs: Option<usize>,
    /// Initialization: known or retrieval.
    #[arg(long)]
    init: Option<InitMode>,
    /// Directory for report CSVs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Parameter sweep as NAME=v1,v2,...
    #[arg(long)]
    sweep: String,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    server: Option<String>,
    /// KML trajectory file to check.
    #[arg(long)]
    kml: Option<PathBuf>,
    /// Descriptor table to check.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Treat --table as a ground-query table (repeated ids allowed).
    #[arg(long)]
    query: bool,
    /// Frame origin as LAT,LON for geodetic tables.
    #[arg(long)]
    frame_origin: Option<String>,
}

/// A client plus the background server task when one was spawned.
struct Connection {
    client: Client,
    ephemeral: Option<tokio::task::JoinHandle<()>>,
}

impl Connection {
    async fn establish(server: Option<&str>) -> Result<Self> {
        match server {
            Some(url) => {
                let base = if url.starts_with("http://") || url.starts_with("https://") {
                    url.to_string()
                } else {
                    format!("http://{url}")
                };
                let client = Client::new(base);
                client.health().await.context("service health check failed")?;
                Ok(Self { client, ephemeral: None })
            }
            None => {
                let (addr, handle) =
                    cvloc_server::spawn_ephemeral().await.context("spawning local service")?;
                Ok(Self {
                    client: Client::new(format!("http://{addr}")),
                    ephemeral: Some(handle),
                })
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(handle) = &self.ephemeral {
            handle.abort();
        }
    }
}

fn prepare(
    args: &ExperimentArgs,
) -> Result<(ExperimentRequest, config::Resolved)> {
    let file = config::load_file(args.config.as_deref())?;
    let overrides = Overrides {
        strategy: args.strategy,
        seed: args.seed,
        runs: args.runs,
        init: args.init,
    };
    config::resolve(&file, args.config.as_deref(), &overrides)
}

fn print_resolved(resolved: &config::Resolved) -> Result<()> {
    println!("# resolved configuration");
    print!("{}", toml::to_string(resolved).context("rendering resolved config")?);
    println!("# base seed {}", resolved.filter.seed);
    Ok(())
}

fn out_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir.join(name))
}

fn summarize(label: &str, report: &ExperimentReport) {
    println!(
        "{label}: err {:.3} ± {:.3} m | dead reckoning {:.3} ± {:.3} m | recall@1 {:.3}",
        report.err_est.mean, report.err_est.std, report.err_dr.mean, report.err_dr.std,
        report.recall_top1
    );
}

async fn cmd_run(args: ExperimentArgs) -> Result<()> {
    let (request, resolved) = prepare(&args)?;
    print_resolved(&resolved)?;
    let conn = Connection::establish(args.server.as_deref()).await?;
    let report = conn.client.run(&request).await?;

    summarize(&format!("{} ({})", report.strategy, match report.init_mode {
        InitMode::KnownStart => "known start",
        InitMode::Retrieval => "retrieval init",
    }), &report);
    for point in &report.recall.points {
        if REPORT_RECALL_FRACTIONS.contains(&point.k_fraction) {
            print!("recall@{:.0}% {:.3}  ", point.k_fraction * 100.0, point.recall);
        }
    }
    println!();

    let path = out_path(&args.out, "run-report.csv")?;
    write_run_report(&report, &path)?;
    println!("report written to {}", path.display());
    Ok(())
}

async fn cmd_compare(args: ExperimentArgs) -> Result<()> {
    let (request, resolved) = prepare(&args)?;
    print_resolved(&resolved)?;
    let conn = Connection::establish(args.server.as_deref()).await?;
    let comparison = conn.client.compare(&request).await?;

    summarize("ppf ", &comparison.ppf);
    summarize("capf", &comparison.capf);
    println!("std ratio (capf/ppf) {:.3}", comparison.std_ratio());

    let path = out_path(&args.out, "comparison-summary.csv")?;
    write_comparison_summary(&comparison, &path)?;
    println!("summary written to {}", path.display());
    Ok(())
}

fn parse_sweep(arg: &str) -> Result<(String, Vec<f64>)> {
    let Some((name, values)) = arg.split_once('=') else {
        bail!("--sweep expects NAME=v1,v2,..., got {arg:?}");
    };
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad sweep value {v:?}")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("--sweep needs at least one value");
    }
    Ok((name.trim().to_string(), values))
}

async fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (name, values) = parse_sweep(&args.sweep)?;
    let (experiment, resolved) = prepare(&args.experiment)?;
    print_resolved(&resolved)?;
    println!("# sweeping {name} over {values:?}");
    let conn = Connection::establish(args.experiment.server.as_deref()).await?;
    let report = conn
        .client
        .sweep(&SweepRequest { experiment, parameter: name.clone(), values })
        .await?;

    for row in &report.rows {
        summarize(&format!("{name}={}", row.value), &row.report);
    }

    let path = out_path(&args.experiment.out, "sweep-summary.csv")?;
    write_sweep_summary(&report, &path)?;
    println!("summary written to {}", path.display());
    Ok(())
}

fn parse_frame_origin(arg: &str) -> Result<GeoCoordinate> {
    let Some((lat, lon)) = arg.split_once(',') else {
        bail!("--frame-origin expects LAT,LON, got {arg:?}");
    };
    let lat: f64 = lat.trim().parse().context("bad latitude")?;
    let lon: f64 = lon.trim().parse().context("bad longitude")?;
    GeoCoordinate::new(lat, lon).map_err(|e| anyhow::anyhow!("{e}"))
}

async fn cmd_ingest_check(args: IngestArgs) -> Result<()> {
    if args.kml.is_none() && args.table.is_none() {
        bail!("nothing to check: pass --kml and/or --table");
    }
    let conn = Connection::establish(args.server.as_deref()).await?;

    if let Some(path) = &args.kml {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let resp = conn.client.check_kml(&KmlCheckRequest { text }).await?;
        println!(
            "{}: {} coordinates, ({:.6}, {:.6}) -> ({:.6}, {:.6})",
            path.display(),
            resp.count,
            resp.first.lat(),
            resp.first.lon(),
            resp.last.lat(),
            resp.last.lon()
        );
    }

    if let Some(path) = &args.table {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let kind = if args.query { TableKind::Query } else { TableKind::Aerial };
        let frame_origin =
            args.frame_origin.as_deref().map(parse_frame_origin).transpose()?;
        let resp = conn.client.check_table(&TableCheckRequest { text, kind, frame_origin }).await?;
        println!(
            "{}: {} rows, descriptor dimension {}, {} coordinates",
            path.display(),
            resp.rows,
            resp.dimension,
            if resp.geodetic { "geodetic" } else { "local" }
        );
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Serve { addr } => {
            tracing_subscriber::fmt()
                .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
                .init();
            let listener =
                tokio::net::TcpListener::bind(addr).await.context("binding service address")?;
            println!("listening on {addr}");
            cvloc_server::serve(listener).await.context("service stopped")?;
            Ok(())
        }
        Command::Run(args) => cmd_run(args).await,
        Command::Compare(args) => cmd_compare(args).await,
        Command::Sweep(args) => cmd_sweep(args).await,
        Command::IngestCheck(args) => cmd_ingest_check(args).await,
    }
}
