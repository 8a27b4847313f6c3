//! Scenario runner: `evgrid run --config demo.toml --scenarios S0,S1 --out out/`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use evgrid::evaluate::{metrics_csv, write_reports};
use evgrid::fleet::sessions_to_csv;
use evgrid::tariff::DayAheadPrices;
use evgrid::scenario::{run_scenarios, summarize, Experiment, ExperimentConfig, DEFAULT_LABELS};

#[derive(Parser)]
#[command(name = "evgrid", version, about = "Grid-aware EV charging scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write violation, metric and trace reports.
    Run(RunArgs),
    /// Write the experiment's network, prices and sessions as input files.
    ExportInputs {
        /// Experiment config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "inputs")]
        out: PathBuf,
        /// V2G share used for the exported sessions.
        #[arg(long, default_value_t = 0.8)]
        v2g_share: f64,
    },
    /// Print the effective configuration as TOML.
    ShowConfig {
        /// Experiment config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML). Built-in demo defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scenario labels.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LABELS.map(String::from))]
    scenarios: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    })
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = load_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let started = Instant::now();
    let exp = Experiment::prepare(config)?;
    let runs = run_scenarios(&exp, &args.scenarios, args.parallel)?;
    let summary = summarize(&runs);
    write_reports(&args.out, &summary)?;
    info!("finished in {:.1} s", started.elapsed().as_secs_f64());
    print!("{}", metrics_csv(&summary));
    for r in &summary.scenarios {
        let v = &r.violations;
        println!(
            "{}: line congestion {}, transformer line {}, transformer {}, under/over voltage {}/{}",
            r.label, v.line_congestion, v.transformer_line, v.transformer, v.undervoltage, v.overvoltage
        );
    }
    Ok(())
}

fn export_inputs(config: Option<&PathBuf>, out: &PathBuf, v2g_share: f64) -> anyhow::Result<()> {
    let exp = Experiment::prepare(load_config(config)?)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("network.json", exp.net.to_json())?;
    write("prices.csv", DayAheadPrices::new(exp.prices.clone())?.to_csv())?;
    write("sessions.csv", sessions_to_csv(&exp.sessions(v2g_share)?))?;
    write("points.toml", toml::to_string(&PointsFile { points: exp.points.clone() })?)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct PointsFile {
    points: Vec<evgrid::fleet::ChargingPoint>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("EVGRID_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::ExportInputs { config, out, v2g_share } => export_inputs(config.as_ref(), &out, v2g_share),
        Command::ShowConfig { config } => load_config(config.as_ref()).and_then(|c| {
            print!("{}", toml::to_string(&c)?);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
