//! Single runs, capacity calibration and the parallel experiment matrix.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{summarize, RunResult, TripGroup};
use crate::microsim::{Controller, SimError, SimOptions, Trip, World, WorldStats};
use crate::scenario::Scenario;
use crate::strategies::{AuditRecord, Blidp, ControllerConfig, Dstp, Ebl, StrategyKind};

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub trips: Vec<Trip>,
    pub stats: WorldStats,
    /// Optimiser decisions (DSTP only).
    pub audit: Vec<AuditRecord>,
}

/// Runs one scenario under one strategy, optionally streaming the
/// trajectory log.
pub fn run_once(
    scenario: &Scenario,
    kind: StrategyKind,
    trajectory: Option<Box<dyn Write>>,
) -> Result<RunOutput, SimError> {
    run_with(scenario, kind, SimOptions::default(), trajectory)
}

pub fn run_with(
    scenario: &Scenario,
    kind: StrategyKind,
    options: SimOptions,
    trajectory: Option<Box<dyn Write>>,
) -> Result<RunOutput, SimError> {
    let mut world = World::with_options(scenario, options);
    if let Some(out) = trajectory {
        world.record_trajectory(out)?;
    }
    let config = ControllerConfig::new(kind, scenario);
    let audit = match kind {
        StrategyKind::Ebl => {
            world.run(scenario, &mut Ebl)?;
            Vec::new()
        }
        StrategyKind::Blidp => {
            world.run(scenario, &mut Blidp::new(config))?;
            Vec::new()
        }
        StrategyKind::Dstp => {
            let mut c = Dstp::new(config);
            world.run(scenario, &mut c as &mut dyn Controller)?;
            c.take_audit()
        }
    };
    let result = summarize(world.trips(), &world.stats, scenario, kind.as_str());
    let stats = world.stats.clone();
    Ok(RunOutput {
        result,
        trips: world.into_trips(),
        stats,
        audit,
    })
}

/// Arrival rate far above what the approach can discharge.
const SATURATION_VPH: f64 = 3600.0;
const CALIBRATION_SEEDS: [u64; 3] = [101, 102, 103];

/// Stop-bar throughput (veh/h) of a saturated, all-through, bus-free EBL
/// run on this geometry and vehicle mix, averaged over a few seeds.
pub fn calibrate_capacity(scenario: &Scenario) -> Result<f64, SimError> {
    let mut s = scenario.clone();
    s.demand.right_turn_ratio = 0.0;
    let options = SimOptions {
        spawn_buses: false,
        general_rate_vph: Some(SATURATION_VPH),
    };
    let mut total = 0.0;
    for seed in CALIBRATION_SEEDS {
        s.demand.seed = seed;
        total += run_with(&s, StrategyKind::Ebl, options, None)?
            .result
            .throughput_vph;
    }
    Ok(total / CALIBRATION_SEEDS.len() as f64)
}

/// Fills in `capacity_vph` when the scenario does not carry one.
pub fn ensure_capacity(scenario: &mut Scenario) -> Result<f64, SimError> {
    if let Some(c) = scenario.demand.capacity_vph {
        return Ok(c);
    }
    let c = calibrate_capacity(scenario)?;
    scenario.demand.capacity_vph = Some(c);
    Ok(c)
}

/// Factor grid for [`run_matrix`]. Every omitted factor keeps the base
/// scenario's value. `bus_stop` entries of `null` mean no stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    /// Base scenario file; the built-in default when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub vc_ratio: Vec<f64>,
    #[serde(default)]
    pub cpr: Vec<f64>,
    #[serde(default)]
    pub bus_headway: Vec<f64>,
    #[serde(default)]
    pub right_turn_ratio: Vec<f64>,
    #[serde(default)]
    pub bus_stop: Vec<Option<f64>>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn all_strategies() -> Vec<String> {
    StrategyKind::ALL
        .iter()
        .map(|k| k.as_str().to_string())
        .collect()
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// One combination of factor levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub vc_ratio: f64,
    pub cpr: f64,
    pub bus_headway: f64,
    pub right_turn_ratio: f64,
    pub bus_stop: Option<f64>,
}

impl Cell {
    pub fn apply(&self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        s.demand.vc_ratio = self.vc_ratio;
        s.demand.cpr = self.cpr;
        s.demand.bus_headway_mean = self.bus_headway;
        s.demand.right_turn_ratio = self.right_turn_ratio;
        s.road.bus_stop_pos = self.bus_stop;
        s
    }

    pub fn csv_prefix(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.vc_ratio,
            self.cpr,
            self.bus_headway,
            self.right_turn_ratio,
            self.bus_stop
                .map_or_else(|| "none".to_string(), |p| p.to_string())
        )
    }
}

const CELL_HEADER: &str = "vc_ratio,cpr,bus_headway_s,right_turn_ratio,bus_stop_m";

impl MatrixConfig {
    pub fn cells(&self, base: &Scenario) -> Vec<Cell> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let stops = if self.bus_stop.is_empty() {
            vec![base.road.bus_stop_pos]
        } else {
            self.bus_stop.clone()
        };
        let mut cells = Vec::new();
        for &vc_ratio in &or(&self.vc_ratio, base.demand.vc_ratio) {
            for &cpr in &or(&self.cpr, base.demand.cpr) {
                for &bus_headway in &or(&self.bus_headway, base.demand.bus_headway_mean) {
                    for &right_turn_ratio in
                        &or(&self.right_turn_ratio, base.demand.right_turn_ratio)
                    {
                        for &bus_stop in &stops {
                            cells.push(Cell {
                                vc_ratio,
                                cpr,
                                bus_headway,
                                right_turn_ratio,
                                bus_stop,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn strategy_kinds(&self) -> Result<Vec<StrategyKind>, String> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }
}

/// One (cell, strategy, seed) run of the matrix.
#[derive(Debug, Clone)]
pub struct MatrixRun {
    pub cell: Cell,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub outcome: Result<RunResult, String>,
    pub audit_total: usize,
    pub audit_violations: usize,
    /// Byte form of the completed-trip log.
    pub trip_log_digest: u64,
}

fn digest(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Runs every (cell, strategy, seed) combination on `jobs` threads.
/// Failed runs are recorded and do not stop the matrix. Output order is
/// fixed by the grid, independent of scheduling.
pub fn run_matrix(
    base: &Scenario,
    cells: &[Cell],
    strategies: &[StrategyKind],
    seeds: &[u64],
    jobs: usize,
) -> Vec<MatrixRun> {
    let mut specs = Vec::new();
    for cell in cells {
        for &strategy in strategies {
            for &seed in seeds {
                specs.push((cell.clone(), strategy, seed));
            }
        }
    }
    let work = || {
        specs
            .par_iter()
            .map(|(cell, strategy, seed)| {
                let mut s = cell.apply(base);
                s.demand.seed = *seed;
                match run_once(&s, *strategy, None) {
                    Ok(out) => MatrixRun {
                        cell: cell.clone(),
                        strategy: *strategy,
                        seed: *seed,
                        audit_total: out.audit.len(),
                        audit_violations: out
                            .audit
                            .iter()
                            .filter(|a| !a.protects_follower())
                            .count(),
                        trip_log_digest: digest(crate::microsim::trips_csv(&out.trips).as_bytes()),
                        outcome: Ok(out.result),
                    },
                    Err(e) => MatrixRun {
                        cell: cell.clone(),
                        strategy: *strategy,
                        seed: *seed,
                        outcome: Err(e.to_string()),
                        audit_total: 0,
                        audit_violations: 0,
                        trip_log_digest: 0,
                    },
                }
            })
            .collect::<Vec<_>>()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// Per-run table with a fixed header.
pub fn runs_csv(runs: &[MatrixRun]) -> String {
    let mut s = format!("{CELL_HEADER},{},status\n", RunResult::CSV_HEADER);
    for r in runs {
        match &r.outcome {
            Ok(res) => s.push_str(&format!("{},{},ok\n", r.cell.csv_prefix(), res.csv_row())),
            Err(e) => {
                let width = RunResult::CSV_HEADER.split(',').count();
                let mut cols = vec![
                    r.cell.csv_prefix(),
                    String::new(),
                    r.strategy.to_string(),
                    r.seed.to_string(),
                ];
                cols.extend(std::iter::repeat_n(String::new(), width - 3));
                let reason = e.lines().next().unwrap_or_default().replace(',', ";");
                cols.push(format!("failed: {reason}"));
                s.push_str(&cols.join(","));
                s.push('\n');
            }
        }
    }
    s
}

/// Mean and half-width of a normal 95% confidence interval.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Seed-aggregated metrics for one (cell, strategy).
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub strategy: StrategyKind,
    pub runs: usize,
    pub failures: usize,
    pub delay: [(f64, f64); 3],
    pub throughput_vph: (f64, f64),
    pub proxy_energy: (f64, f64),
    pub bus_lane_general_km: (f64, f64),
}

impl CellSummary {
    pub fn mean_delay(&self, g: TripGroup) -> f64 {
        let i = TripGroup::ALL.iter().position(|&x| x == g).expect("group");
        self.delay[i].0
    }
}

pub fn summarize_matrix(runs: &[MatrixRun]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut keys: Vec<(Cell, StrategyKind)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|(c, k)| *c == r.cell && *k == r.strategy) {
            keys.push((r.cell.clone(), r.strategy));
        }
    }
    for (cell, strategy) in keys {
        let group: Vec<&MatrixRun> = runs
            .iter()
            .filter(|r| r.cell == cell && r.strategy == strategy)
            .collect();
        let ok: Vec<&RunResult> = group
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let col =
            |f: &dyn Fn(&RunResult) -> f64| mean_ci(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        out.push(CellSummary {
            cell,
            strategy,
            runs: ok.len(),
            failures: group.len() - ok.len(),
            delay: [
                col(&|r| r.bus.mean_delay),
                col(&|r| r.through.mean_delay),
                col(&|r| r.right_turn.mean_delay),
            ],
            throughput_vph: col(&|r| r.throughput_vph),
            proxy_energy: col(&|r| r.proxy_energy),
            bus_lane_general_km: col(&|r| r.bus_lane_general_km),
        });
    }
    out
}

pub const SUMMARY_HEADER: &str = "vc_ratio,cpr,bus_headway_s,right_turn_ratio,bus_stop_m,strategy,runs,failures,\
bus_delay_mean_s,bus_delay_ci95_s,through_delay_mean_s,through_delay_ci95_s,right_turn_delay_mean_s,right_turn_delay_ci95_s,\
throughput_vph_mean,throughput_vph_ci95,proxy_energy_mean,proxy_energy_ci95,bus_lane_general_km_mean,bus_lane_general_km_ci95";

pub fn summary_csv(summaries: &[CellSummary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for c in summaries {
        let mut cols = vec![
            c.cell.csv_prefix(),
            c.strategy.to_string(),
            c.runs.to_string(),
            c.failures.to_string(),
        ];
        for (m, ci) in
            c.delay
                .iter()
                .chain([&c.throughput_vph, &c.proxy_energy, &c.bus_lane_general_km])
        {
            cols.push(format!("{m:.4}"));
            cols.push(format!("{ci:.4}"));
        }
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}
