use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use buslane_core::experiment::{
    calibrate_capacity, ensure_capacity, run_matrix, run_once, runs_csv, summarize_matrix,
    summary_csv, MatrixConfig,
};
use buslane_core::metrics::{RunResult, TripGroup};
use buslane_core::microsim::{trips_csv, SimError};
use buslane_core::plot::render_time_space;
use buslane_core::scenario::{load_scenario, Scenario, ScenarioError};
use buslane_core::strategies::StrategyKind;
use buslane_core::verify;

/// Bus-lane sharing strategies on a signalised approach.
#[derive(Parser)]
#[command(name = "buslane", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one strategy.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: StrategyKind,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-tick trajectory CSV.
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Completed-trip CSV.
        #[arg(long)]
        trips: Option<PathBuf>,
    },
    /// Run a factor grid over strategies and seeds.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Draw a time-space diagram of one lane.
    Plot {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        lane: usize,
        #[arg(long)]
        out: PathBuf,
        /// Scenario used for the signal band and stop-bar position.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run the randomised oracle checks.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Measure the saturated capacity and store it in the scenario file.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvariantBreach { .. } => Failure::Invariant(e.into()),
            SimError::Io(_) => Failure::Validation(e.into()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.into())
    }
}

fn scenario_or_default(path: Option<&Path>) -> Result<Scenario, ScenarioError> {
    match path {
        Some(p) => load_scenario(p),
        None => Ok(Scenario::baseline()),
    }
}

fn print_result(r: &RunResult) {
    println!(
        "strategy {} seed {} scenario {}",
        r.strategy, r.seed, r.scenario
    );
    for g in TripGroup::ALL {
        let s = r.group(g);
        println!(
            "  {:<10} trips {:>5}  delay mean {:>7.2} s  p50 {:>7.2}  p90 {:>7.2}  stops {:.2}",
            g.as_str(),
            s.trips,
            s.mean_delay,
            s.p50_delay,
            s.p90_delay,
            s.mean_stops
        );
    }
    println!(
        "  throughput {:.1} veh/h  proxy energy {:.1}  bus-lane general km {:.2}",
        r.throughput_vph, r.proxy_energy, r.bus_lane_general_km
    );
}

fn simulate(
    scenario: Option<&Path>,
    strategy: StrategyKind,
    seed: Option<u64>,
    traj: Option<&Path>,
    trips: Option<&Path>,
) -> Result<(), Failure> {
    let mut s = scenario_or_default(scenario)?;
    if let Some(seed) = seed {
        s.demand.seed = seed;
    }
    ensure_capacity(&mut s)?;
    let writer: Option<Box<dyn std::io::Write>> = match traj {
        Some(p) => Some(Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ))),
        None => None,
    };
    let out = run_once(&s, strategy, writer)?;
    if let Some(p) = trips {
        fs::write(p, trips_csv(&out.trips)).with_context(|| format!("writing {}", p.display()))?;
    }
    print_result(&out.result);
    Ok(())
}

fn matrix(config: &Path, out: &Path, jobs: usize) -> Result<(), Failure> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: MatrixConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let mut base = scenario_or_default(cfg.scenario.as_deref())?;
    ensure_capacity(&mut base)?;
    let strategies = cfg.strategy_kinds().map_err(anyhow::Error::msg)?;
    let cells = cfg.cells(&base);
    if cells.is_empty() || strategies.is_empty() || cfg.seeds.is_empty() {
        return Err(Failure::Validation(anyhow::anyhow!("matrix grid is empty")));
    }
    let started = Instant::now();
    let runs = run_matrix(&base, &cells, &strategies, &cfg.seeds, jobs);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("runs.csv"), runs_csv(&runs)).context("writing runs.csv")?;
    fs::write(
        out.join("summary.csv"),
        summary_csv(&summarize_matrix(&runs)),
    )
    .context("writing summary.csv")?;
    let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} runs ({failed} failed) in {:.1} s -> {}",
        runs.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    if let Some(r) = runs.iter().find(|r| r.outcome.is_err()) {
        let msg = r.outcome.as_ref().err().cloned().unwrap_or_default();
        if msg.starts_with("invariant breach") {
            return Err(Failure::Invariant(anyhow::anyhow!(msg)));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            scenario,
            strategy,
            seed,
            traj,
            trips,
        } => simulate(
            scenario.as_deref(),
            strategy,
            seed,
            traj.as_deref(),
            trips.as_deref(),
        ),
        Command::Matrix { config, out, jobs } => matrix(&config, &out, jobs),
        Command::Plot {
            traj,
            lane,
            out,
            scenario,
        } => {
            let s = scenario_or_default(scenario.as_deref())?;
            let n = render_time_space(&traj, lane, &out, &s).map_err(anyhow::Error::from)?;
            println!("{n} tracks -> {}", out.display());
            Ok(())
        }
        Command::Verify { seed } => {
            let mut ok = true;
            for o in verify::run_all(seed) {
                println!(
                    "{} {}: {} checked, {} mismatches",
                    if o.passed() { "PASS" } else { "FAIL" },
                    o.name,
                    o.checked,
                    o.mismatches
                );
                if let Some(e) = &o.example {
                    println!("  first mismatch: {e}");
                }
                ok &= o.passed();
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Invariant(anyhow::anyhow!("oracle mismatch")))
            }
        }
        Command::Calibrate { scenario } => {
            let mut s = load_scenario(&scenario)?;
            s.demand.capacity_vph = None;
            let c = calibrate_capacity(&s)?;
            s.demand.capacity_vph = Some(c);
            fs::write(&scenario, s.to_json())
                .with_context(|| format!("writing {}", scenario.display()))?;
            println!("capacity {c:.1} veh/h -> {}", scenario.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
