//! Whole-run properties of the simulator.

use std::fs;

use buslane_core::experiment::{ensure_capacity, run_once};
use buslane_core::microsim::{trips_csv, NoControl, SimOptions, World};
use buslane_core::scenario::Scenario;
use buslane_core::strategies::StrategyKind;
use buslane_core::vehicle::{Movement, VehicleClass, VehicleState};

fn busy(seed: u64) -> Scenario {
    let mut s = Scenario::baseline();
    s.demand.vc_ratio = 1.2;
    s.demand.cpr = 0.6;
    s.demand.seed = seed;
    s.demand.sim_duration = 600.0;
    s.road.bus_stop_pos = Some(400.0);
    ensure_capacity(&mut s).unwrap();
    s
}

#[test]
fn repeated_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    for kind in StrategyKind::ALL {
        let s = busy(7);
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let path = dir.path().join(format!("{kind}-{attempt}.csv"));
            let file = fs::File::create(&path).unwrap();
            let out = run_once(&s, kind, Some(Box::new(std::io::BufWriter::new(file)))).unwrap();
            outputs.push((fs::read(&path).unwrap(), trips_csv(&out.trips)));
        }
        assert!(
            outputs[0].0.len() > 1000,
            "{kind}: trajectory log nearly empty"
        );
        assert!(
            outputs[0].0 == outputs[1].0,
            "{kind}: trajectory logs differ"
        );
        assert_eq!(outputs[0].1, outputs[1].1, "{kind}: trip logs differ");
    }
}

#[test]
fn different_seeds_give_different_traffic() {
    let a = run_once(&busy(1), StrategyKind::Ebl, None).unwrap();
    let b = run_once(&busy(2), StrategyKind::Ebl, None).unwrap();
    assert_ne!(trips_csv(&a.trips), trips_csv(&b.trips));
}

/// Median stop-bar headway of a standing queue of one class released at green.
fn discharge_headway(class: VehicleClass) -> f64 {
    let mut s = Scenario::baseline();
    s.road.lane_count_main = 2;
    s.road.bus_lane_index = 1;
    s.road.bus_stop_pos = None;
    s.demand.sim_duration = 120.0;
    let mut w = World::with_options(
        &s,
        SimOptions {
            spawn_buses: false,
            general_rate_vph: Some(0.0),
        },
    );
    let len = class.length(&s.vehicles);
    for i in 0..12 {
        let pos = s.road.stop_bar() - 0.2 - f64::from(i) * (len + s.vehicles.min_gap + 0.1);
        w.insert_vehicle(
            VehicleState::new(0, class, Movement::Through, pos, 0.0, &s.vehicles),
            &s,
        );
    }
    w.run(&s, &mut NoControl).unwrap();
    let mut exits: Vec<f64> = w.trips().iter().map(|t| t.exit_s).collect();
    assert_eq!(exits.len(), 12, "{class}: queue did not clear in one green");
    exits.sort_by(f64::total_cmp);
    // Skip the first few, which are still accelerating.
    let mut gaps: Vec<f64> = exits.windows(2).skip(3).map(|p| p[1] - p[0]).collect();
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

#[test]
fn queues_discharge_near_the_planning_headways() {
    let p = Scenario::baseline().vehicles;
    for (class, planned) in [
        (VehicleClass::Hdv, p.tau_h + p.eps_h),
        (VehicleClass::Chv, p.tau_h + p.eps_h),
        (VehicleClass::Cav, p.tau_c + p.eps_c),
    ] {
        let h = discharge_headway(class);
        assert!(
            (h - planned).abs() <= 0.3,
            "{class}: median headway {h:.2} s vs {planned:.2} s"
        );
    }
}

#[test]
fn nobody_crosses_on_red() {
    for seed in 1..=3 {
        for kind in StrategyKind::ALL {
            let out = run_once(&busy(seed), kind, None).unwrap();
            assert_eq!(out.stats.red_violations, 0, "{kind} seed {seed}");
            let s = busy(seed);
            for t in out.trips.iter().filter(|t| t.movement == Movement::Through) {
                let phase = t.exit_s.rem_euclid(s.signal.cycle);
                assert!(
                    phase >= s.signal.red - 0.5,
                    "{kind}: through trip left at {:.2} s",
                    t.exit_s
                );
            }
        }
    }
}
