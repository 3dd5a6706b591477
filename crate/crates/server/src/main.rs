use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use coverage_core::dataset::write_records;
use coverage_core::oracle;
use coverage_core::sim;
use coverage_core::store::{MeasurementStore, QueryFilter};
use coverage_server::{router, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "ccn-coverage", version, about = "Community network coverage aggregation service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and serve the HTTP API. New measurements are appended
    /// to the same dataset file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Generate a mock dataset.
    Simulate {
        /// Sites and simulation settings; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a dataset and report on it, optionally cross-checking the
    /// aggregates against the brute-force reference.
    Aggregate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        oracle_check: bool,
        /// Number of random heatmap grids to compare.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Seed for drawing the random grids.
        #[arg(long, default_value_t = 1)]
        grid_seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig> {
    match path {
        Some(p) => Ok(ServiceConfig::load(p)?),
        None => Ok(ServiceConfig::default()),
    }
}

fn serve(config: &Path, data: &Path, listen: Option<String>) -> Result<()> {
    let config = ServiceConfig::load(config)?;
    let (store, report) = MeasurementStore::open(data, &config.sites)
        .with_context(|| format!("cannot open dataset {}", data.display()))?;
    tracing::info!(
        "loaded {} records from {} ({} rejected lines)",
        report.loaded,
        data.display(),
        report.errors.len()
    );
    for e in report.errors.iter().take(10) {
        tracing::warn!("line {}: {}", e.line, e.message);
    }
    let addr = listen.unwrap_or_else(|| config.listen.clone());
    let app = router(AppState::new(store, config));

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on {local}");
        std::io::stdout().flush()?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn simulate(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let config = load_config(config)?.sim_config(seed);
    let records = sim::generate(&config)?;
    let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    let n = write_records(BufWriter::new(file), records)
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "wrote {n} measurements from {} devices to {}",
        config.sites.len() as u64 * u64::from(config.devices_per_site),
        out.display()
    );
    Ok(())
}

fn aggregate(data: &Path, config: Option<&Path>, oracle_check: bool, trials: usize, grid_seed: u64) -> Result<bool> {
    let config = load_config(config)?;
    let started = Instant::now();
    let store = MeasurementStore::in_memory(&config.sites);
    let report = store.load_dataset(data)?;
    println!(
        "loaded {} records ({} rejected lines) in {:.1?}",
        report.loaded,
        report.errors.len(),
        started.elapsed()
    );
    for e in report.errors.iter().take(10) {
        println!("  line {}: {}", e.line, e.message);
    }
    if let Some((first, last)) = store.time_span() {
        println!("span {} .. {}", first.to_rfc3339(), last.to_rfc3339());
    }
    let snapshot = store.snapshot(&QueryFilter::all())?;
    if !oracle_check {
        for site in &config.sites {
            let n = snapshot.measurements().filter(|m| *m.site_id == *site.site_id).count();
            println!("{:<28} {n}", site.site_id);
        }
        return Ok(true);
    }

    let started = Instant::now();
    let result = oracle::check(&snapshot, &config.sites, &config.privacy(), trials, grid_seed, 1e-9);
    println!(
        "oracle check: {} grids ({} cells), {} series ({} hourly points) in {:.1?}",
        result.grids_checked,
        result.cells_compared,
        result.series_checked,
        result.points_compared,
        started.elapsed()
    );
    for m in result.mismatches.iter().take(20) {
        println!("  mismatch: {m}");
    }
    if result.passed() {
        println!("PASS");
    } else {
        println!("FAIL: {} mismatches", result.mismatches.len());
    }
    Ok(result.passed())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { config, data, listen } => serve(&config, &data, listen),
        Command::Simulate { config, seed, out } => simulate(config.as_deref(), seed, &out),
        Command::Aggregate {
            data,
            config,
            oracle_check,
            trials,
            grid_seed,
        } => {
            if !aggregate(&data, config.as_deref(), oracle_check, trials, grid_seed)? {
                bail!("aggregates disagree with the reference implementation");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
