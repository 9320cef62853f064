//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use buslane_core::estimator::estimate_lane;
use buslane_core::experiment::{run_matrix, Cell, MatrixRun};
use buslane_core::gaps::{atg_brute_force, compute_atg};
use buslane_core::metrics::{RunResult, TripGroup};
use buslane_core::microsim::{NoControl, SimOptions, World};
use buslane_core::row_opt::{solve_bnb, solve_exhaustive};
use buslane_core::scenario::{load_scenario, Scenario, SignalPlan, VehiclePopulation};
use buslane_core::strategies::StrategyKind;
use buslane_core::vehicle::VehicleId;
use buslane_core::verify::{random_atg_input, random_row_instance};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: u32, pass: bool, what: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {n} {}: {what} ({detail})",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn base_scenario() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/baseline.json");
    load_scenario(&path).expect("baseline scenario")
}

fn criterion_1(r: &mut Report) {
    let signal = SignalPlan::default();
    let min_window = VehiclePopulation::default().tau_a;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let started = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (l, f, tau) = random_atg_input(&mut rng);
        let a = compute_atg(l, f, tau, &signal, min_window);
        let b = atg_brute_force(l, f, tau, &signal, min_window, 0.1);
        let same = a.windows.len() == b.windows.len()
            && a.windows
                .iter()
                .zip(&b.windows)
                .all(|(x, y)| (x.start - y.start).abs() <= 0.05 && (x.end - y.end).abs() <= 0.05);
        if !same {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    r.line(
        1,
        mismatches == 0 && secs < 1.0,
        "temporal gaps match the sampling oracle",
        format!("1000 instances, {mismatches} mismatches, {secs:.3} s"),
    );
}

fn criterion_2(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..200 {
        let k = rng.random_range(1..=12);
        let inst = random_row_instance(&mut rng, k);
        let a = solve_bnb(&inst);
        let b = solve_exhaustive(&inst);
        if a.objective != b.objective || a.x != b.x {
            mismatches += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let inst = random_row_instance(&mut rng, 18);
        let started = Instant::now();
        std::hint::black_box(solve_bnb(&inst));
        worst = worst.max(started.elapsed().as_secs_f64());
    }
    r.line(
        2,
        mismatches == 0 && worst < 0.1,
        "branch-and-bound equals exhaustive, K=18 within 100 ms",
        format!(
            "200 instances, {mismatches} mismatches, slowest K=18 {:.1} ms",
            worst * 1e3
        ),
    );
}

/// Single general lane beside an empty bus lane, well below capacity.
fn single_lane(base: &Scenario, seed: u64) -> Scenario {
    let mut s = base.clone();
    s.road.lane_count_main = 2;
    s.road.bus_lane_index = 1;
    s.road.bus_stop_pos = None;
    s.demand.right_turn_ratio = 0.0;
    s.demand.seed = seed;
    s.demand.sim_duration = 900.0;
    s
}

fn criterion_3(r: &mut Report, base: &Scenario) {
    let options = SimOptions {
        spawn_buses: false,
        general_rate_vph: Some(400.0),
    };
    let (mut total, mut within) = (0usize, 0usize);
    for seed in 1..=50 {
        let s = single_lane(base, seed);
        let mut world = World::with_options(&s, options);
        let mut predicted: BTreeMap<VehicleId, f64> = BTreeMap::new();
        while world.clock < s.demand.sim_duration {
            let ctx = world.lane_context(0, &s);
            for e in estimate_lane(&world.lane_states(0), &ctx, &s, world.clock) {
                predicted.entry(e.vehicle_id).or_insert(e.t_d);
            }
            world.step(&s, &mut NoControl).expect("simulation step");
        }
        for trip in world.trips() {
            if let Some(&t_d) = predicted.get(&trip.vehicle_id) {
                total += 1;
                if (t_d - trip.exit_s).abs() <= 2.0 {
                    within += 1;
                }
            }
        }
    }
    let share = within as f64 / total.max(1) as f64;
    r.line(
        3,
        total > 0 && share >= 0.9,
        "estimated departures within 2 s of simulated crossings",
        format!("{within}/{total} vehicles = {:.1}%", share * 100.0),
    );
}

fn cell(
    vc_ratio: f64,
    cpr: f64,
    bus_headway: f64,
    right_turn_ratio: f64,
    bus_stop: Option<f64>,
) -> Cell {
    Cell {
        vc_ratio,
        cpr,
        bus_headway,
        right_turn_ratio,
        bus_stop,
    }
}

fn seed_mean(
    runs: &[MatrixRun],
    c: &Cell,
    kind: StrategyKind,
    f: impl Fn(&RunResult) -> f64,
) -> f64 {
    let xs: Vec<f64> = runs
        .iter()
        .filter(|m| &m.cell == c && m.strategy == kind)
        .filter_map(|m| m.outcome.as_ref().ok())
        .map(f)
        .collect();
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn matrix_criteria(r: &mut Report, base: &Scenario) {
    let heavy = cell(1.6, 1.0, 30.0, base.demand.right_turn_ratio, None);
    let right_turn = cell(1.0, 1.0, 60.0, 0.5, None);
    let with_stop = cell(1.0, 0.4, 60.0, base.demand.right_turn_ratio, Some(400.0));
    let cells = [heavy.clone(), right_turn.clone(), with_stop.clone()];
    let seeds: Vec<u64> = (1..=5).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let started = Instant::now();
    let runs = run_matrix(base, &cells, &StrategyKind::ALL, &seeds, jobs);
    let secs = started.elapsed().as_secs_f64();
    let failed = runs.iter().filter(|m| m.outcome.is_err()).count();

    let (audited, unprotected) = runs
        .iter()
        .filter(|m| m.strategy == StrategyKind::Dstp)
        .fold((0, 0), |(t, v), m| {
            (t + m.audit_total, v + m.audit_violations)
        });
    r.line(
        4,
        failed == 0 && audited > 0 && unprotected == 0,
        "every optimised advisory leaves the follower's headway intact",
        format!("{audited} advisories audited, {unprotected} violations"),
    );

    use StrategyKind::{Blidp, Dstp, Ebl};
    let bus = |k| seed_mean(&runs, &heavy, k, |x| x.group(TripGroup::Bus).mean_delay);
    let through = |k| seed_mean(&runs, &heavy, k, |x| x.group(TripGroup::Through).mean_delay);
    let (e, d, b) = (bus(Ebl), bus(Dstp), bus(Blidp));
    let (te, td) = (through(Ebl), through(Dstp));
    r.line(
        5,
        e <= d && d < b && (d - e) < 0.5 * (b - e) && td < te,
        "bus delay EBL <= DSTP < BLIDP with DSTP near EBL, through delay DSTP < EBL",
        format!("bus {e:.2}/{d:.2}/{b:.2} s, through EBL {te:.2} DSTP {td:.2} s"),
    );

    let rt = |k| {
        seed_mean(&runs, &right_turn, k, |x| {
            x.group(TripGroup::RightTurn).mean_delay
        })
    };
    let (e, d, b) = (rt(Ebl), rt(Dstp), rt(Blidp));
    r.line(
        6,
        d < b && d < e,
        "right-turn delay DSTP below both baselines",
        format!("EBL {e:.2}, DSTP {d:.2}, BLIDP {b:.2} s"),
    );

    let vkt = |k| seed_mean(&runs, &with_stop, k, |x| x.bus_lane_general_km);
    let (d, b) = (vkt(Dstp), vkt(Blidp));
    r.line(
        7,
        d > b,
        "general-traffic bus-lane km with a stop, DSTP above BLIDP",
        format!("DSTP {d:.1} km, BLIDP {b:.1} km"),
    );

    let ok: Vec<&RunResult> = runs
        .iter()
        .filter_map(|m| m.outcome.as_ref().ok())
        .collect();
    let min_spacing = ok
        .iter()
        .map(|x| x.min_spacing)
        .fold(f64::INFINITY, f64::min);
    let clamps: u64 = ok.iter().map(|x| x.clamp_events).sum();
    let reds: u64 = ok.iter().map(|x| x.red_violations).sum();
    let again = run_matrix(base, &cells, &StrategyKind::ALL, &seeds, jobs);
    let identical = runs.len() == again.len()
        && runs
            .iter()
            .zip(&again)
            .all(|(a, b)| a.trip_log_digest == b.trip_log_digest);
    r.line(
        8,
        failed == 0 && min_spacing >= 0.5 && clamps == 0 && reds == 0 && identical,
        "no spacing violations and byte-identical trip logs on repeat",
        format!(
            "min spacing {min_spacing:.2} m, {clamps} clamps, {reds} red crossings, repeat identical: {identical}"
        ),
    );

    r.line(
        9,
        failed == 0 && secs < 600.0,
        "acceptance matrix within 10 minutes",
        format!("{} runs in {secs:.1} s, {failed} failed", runs.len()),
    );
}

fn main() -> ExitCode {
    let base = base_scenario();
    let mut report = Report { failures: 0 };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report, &base);
    matrix_criteria(&mut report, &base);
    if report.failures == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
