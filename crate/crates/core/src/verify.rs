//! Randomised oracle checks shared by the CLI `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaps::{atg_brute_force, compute_atg, TemporalGap};
use crate::row_opt::{
    solve_bnb, solve_exhaustive, Candidate, HeadwayTable, LaneAnchor, RowInstance,
};
use crate::scenario::{SignalPlan, VehiclePopulation};
use crate::vehicle::{VehicleClass, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub checked: usize,
    pub mismatches: usize,
    /// First mismatch, if any.
    pub example: Option<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Random `(leader_td, follower_td, tau)` triple over a few signal cycles.
pub fn random_atg_input(rng: &mut impl Rng) -> (f64, f64, f64) {
    let leader = rng.random_range(0.0..400.0);
    let span = rng.random_range(0.0..250.0);
    let tau = rng.random_range(0.6..2.0);
    (leader, leader + span, tau)
}

fn windows_match(a: &TemporalGap, b: &TemporalGap, tol: f64) -> bool {
    a.windows.len() == b.windows.len()
        && a.windows
            .iter()
            .zip(&b.windows)
            .all(|(x, y)| (x.start - y.start).abs() <= tol && (x.end - y.end).abs() <= tol)
}

/// Closed-form temporal gaps against the sampling oracle.
pub fn atg_equivalence(
    instances: usize,
    seed: u64,
    signal: &SignalPlan,
    min_window: f64,
) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut example = None;
    for _ in 0..instances {
        let (l, f, tau) = random_atg_input(&mut rng);
        let fast = compute_atg(l, f, tau, signal, min_window);
        let slow = atg_brute_force(l, f, tau, signal, min_window, 0.1);
        if !windows_match(&fast, &slow, 0.05) {
            mismatches += 1;
            example.get_or_insert_with(|| {
                format!("leader {l}, follower {f}, tau {tau}: {fast:?} vs {slow:?}")
            });
        }
    }
    Outcome {
        name: "temporal gaps vs sampling oracle",
        checked: instances,
        mismatches,
        example,
    }
}

fn random_class(rng: &mut impl Rng) -> VehicleClass {
    match rng.random_range(0..3) {
        0 => VehicleClass::Hdv,
        1 => VehicleClass::Chv,
        _ => VehicleClass::Cav,
    }
}

/// Random right-of-way instance with `k` candidates on the default
/// geometry and signal.
pub fn random_row_instance(rng: &mut impl Rng, k: usize) -> RowInstance {
    let pop = VehiclePopulation::default();
    let signal = SignalPlan::default();
    let now = rng.random_range(0.0..100.0);
    let mut pos = rng.random_range(400.0..690.0);
    let mut t_f = now + rng.random_range(3.0..30.0);
    let mut candidates = Vec::with_capacity(k);
    for i in 0..k {
        let speed = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(2.0..13.89)
        };
        let bus_bonus = if rng.random_bool(0.3) {
            rng.random_range(-2.0..0.0)
        } else {
            0.0
        };
        candidates.push(Candidate {
            id: VehicleId(i as u32 + 1),
            pos,
            speed,
            class: random_class(rng),
            t_f_general: t_f,
            t_f_bus: (t_f + bus_bonus).max(now),
        });
        pos -= rng.random_range(8.0..40.0);
        t_f += rng.random_range(0.5..4.0);
    }
    let leader_td = now + rng.random_range(0.0..40.0);
    let follower_td = leader_td + rng.random_range(10.0..220.0);
    let front = candidates.first().map_or(700.0, |c| c.pos);
    let back = candidates.last().map_or(0.0, |c| c.pos);
    let bus_leader = rng.random_bool(0.7).then(|| LaneAnchor {
        pos: (front + rng.random_range(5.0..60.0)).min(700.0),
        speed: rng.random_range(0.0..13.89),
        t_d: leader_td,
        class: if rng.random_bool(0.5) {
            VehicleClass::Bus
        } else {
            random_class(rng)
        },
    });
    let follower_class = VehicleClass::Bus;
    let bus_follower = rng.random_bool(0.8).then(|| LaneAnchor {
        pos: (back - rng.random_range(5.0..60.0)).max(0.0),
        speed: rng.random_range(0.0..13.89),
        t_d: follower_td,
        class: follower_class,
    });
    let general_leader = rng.random_bool(0.7).then(|| LaneAnchor {
        pos: front + 10.0,
        speed: rng.random_range(0.0..13.89),
        t_d: now + rng.random_range(0.0..60.0),
        class: random_class(rng),
    });
    let tau = crate::estimator::worst_case_headway(follower_class, &pop);
    let atg = compute_atg(leader_td, follower_td, tau, &signal, pop.tau_a);
    RowInstance {
        candidates,
        general_leader,
        bus_leader,
        bus_follower,
        windows: atg.windows,
        signal,
        startup_lost_time: pop.startup_lost_time,
        lateral_safe_gap: pop.lateral_safe_gap,
        lateral_comfort_decel: pop.lateral_comfort_decel,
        car_len: pop.car_len,
        no_change_boundary: 670.0,
        headways: HeadwayTable::from_population(&pop),
    }
}

/// Branch-and-bound against exhaustive enumeration.
pub fn row_equivalence(instances: usize, seed: u64, max_k: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut example = None;
    for _ in 0..instances {
        let k = rng.random_range(1..=max_k);
        let inst = random_row_instance(&mut rng, k);
        let a = solve_bnb(&inst);
        let b = solve_exhaustive(&inst);
        if a.objective != b.objective || a.x != b.x {
            mismatches += 1;
            example.get_or_insert_with(|| format!("K={k}: bnb {:?} vs exhaustive {:?}", a.x, b.x));
        }
    }
    Outcome {
        name: "branch-and-bound vs exhaustive",
        checked: instances,
        mismatches,
        example,
    }
}

/// All oracle suites at their default sizes.
pub fn run_all(seed: u64) -> Vec<Outcome> {
    let pop = VehiclePopulation::default();
    vec![
        atg_equivalence(1000, seed, &SignalPlan::default(), pop.tau_a),
        row_equivalence(200, seed, 12),
    ]
}
