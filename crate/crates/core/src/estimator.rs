//! Stop-bar departure-time estimation.
//!
//! For each vehicle the estimator produces three times: the free-flow
//! arrival `t_f` (no leader, no signal), the car-following-limited arrival
//! `t_p`, and the signal-limited departure `t_d`. Lanes are evaluated
//! front-to-back so each vehicle chains off its leader's `t_d`.

use crate::scenario::{RoadConfig, Scenario, SignalPlan, VehiclePopulation};
use crate::vehicle::{VehicleClass, VehicleId, VehicleState};

/// Estimated stop-bar times for one vehicle, all absolute (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepartureEstimate {
    pub vehicle_id: VehicleId,
    /// Time the estimate was made.
    pub basis_time: f64,
    pub t_f: f64,
    pub t_p: f64,
    pub t_d: f64,
    /// Headway applied behind the leader (or the last detector actuation).
    pub tau: f64,
}

/// Last stop-bar actuation on a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStamp {
    pub time: f64,
    pub class: VehicleClass,
}

/// Time to cover `dist` starting at `speed`, accelerating at `accel` until
/// `v_max` and cruising afterwards.
pub fn kinematic_travel_time(dist: f64, speed: f64, v_max: f64, accel: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let v = speed.clamp(0.0, v_max);
    let accel_dist = (v_max * v_max - v * v) / (2.0 * accel);
    if dist >= accel_dist {
        (dist - accel_dist) / v_max + (v_max - v) / accel
    } else {
        // Reaches the target before hitting v_max.
        (-v + (v * v + 2.0 * accel * dist).sqrt()) / accel
    }
}

/// Earliest stop-bar arrival ignoring both the leader and the signal.
pub fn free_flow_departure(now: f64, pos: f64, speed: f64, road: &RoadConfig, accel: f64) -> f64 {
    now + kinematic_travel_time(road.stop_bar() - pos, speed, road.speed_limit, accel)
}

/// Desired headway (including the modelling redundancy) for a follower of
/// class `follower` behind a leader of class `leader`. Buses drive
/// cooperatively and are treated like CAVs on both sides.
pub fn desired_headway(
    follower: VehicleClass,
    leader: VehicleClass,
    pop: &VehiclePopulation,
) -> f64 {
    match (follower, leader) {
        (VehicleClass::Hdv | VehicleClass::Chv, _) => pop.tau_h + pop.eps_h,
        (VehicleClass::Cav | VehicleClass::Bus, VehicleClass::Cav | VehicleClass::Bus) => {
            pop.tau_c + pop.eps_c
        }
        (VehicleClass::Cav | VehicleClass::Bus, VehicleClass::Hdv | VehicleClass::Chv) => {
            pop.tau_a + pop.eps_a
        }
    }
}

/// Largest headway `follower` can require behind any general vehicle.
pub fn worst_case_headway(follower: VehicleClass, pop: &VehiclePopulation) -> f64 {
    desired_headway(follower, VehicleClass::Hdv, pop).max(desired_headway(
        follower,
        VehicleClass::Cav,
        pop,
    ))
}

/// Car-following-limited arrival: `max(reference + tau, t_f)`. The
/// reference is the leader's departure, or the lane detector's last
/// actuation for the first vehicle; `None` means no constraint.
pub fn unsignalized_departure(reference: Option<f64>, tau: f64, t_f: f64) -> f64 {
    match reference {
        Some(r) => (r + tau).max(t_f),
        None => t_f,
    }
}

/// Applies the fixed-time signal. Arrivals during red (or within the
/// start-up loss of green) are released at green start plus `t_l`; exempt
/// movements pass straight through.
pub fn signalized_departure(t_p: f64, signal: &SignalPlan, t_l: f64, exempt: bool) -> f64 {
    if exempt {
        return t_p;
    }
    let green_start = signal.green_start(t_p);
    t_p.max(green_start + t_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusStopDeparture {
    pub t_p: f64,
    pub t_d: f64,
}

/// Departure of a bus that still has to serve (or is serving) the stop:
/// time to reach the stop, plus the remaining dwell, plus a standing-start
/// run from the stop to the stop bar, chained behind the leader.
#[allow(clippy::too_many_arguments)]
pub fn bus_stop_departure(
    now: f64,
    pos: f64,
    speed: f64,
    leader_td: Option<f64>,
    tau: f64,
    dwell: f64,
    road: &RoadConfig,
    pop: &VehiclePopulation,
    signal: &SignalPlan,
) -> BusStopDeparture {
    let stop = road.bus_stop_pos.unwrap_or(pos);
    let v_d = road.speed_limit;
    let to_stop = kinematic_travel_time(stop - pos, speed, v_d, pop.bus_accel);
    let stop_to_bar = kinematic_travel_time(road.stop_bar() - stop, 0.0, v_d, pop.bus_accel);
    let own = now + to_stop + dwell.max(0.0) + stop_to_bar;
    let t_p = unsignalized_departure(leader_td, tau, own);
    let t_d = signalized_departure(t_p, signal, pop.startup_lost_time, false);
    BusStopDeparture { t_p, t_d }
}

/// Inputs that are specific to one lane at one instant.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaneContext {
    pub is_bus_lane: bool,
    pub detector: Option<DetectorStamp>,
}

/// Index of the first vehicle to estimate. On a bus lane with a stop, a bus
/// that has not yet served the stop truncates the set to itself and the
/// vehicles ahead of it.
pub fn estimation_cutoff(lane: &[VehicleState], road: &RoadConfig, ctx: &LaneContext) -> usize {
    if !ctx.is_bus_lane || road.bus_stop_pos.is_none() {
        return lane.len();
    }
    lane.iter()
        .position(|v| v.is_bus_before_stop(road.bus_stop_pos))
        .map_or(lane.len(), |i| i + 1)
}

/// Estimates the lane `lane` (ordered front-first). Buses still to serve the
/// stop use the mean dwell unless already dwelling.
pub fn estimate_lane(
    lane: &[VehicleState],
    ctx: &LaneContext,
    scenario: &Scenario,
    now: f64,
) -> Vec<DepartureEstimate> {
    let road = &scenario.road;
    let pop = &scenario.vehicles;
    let signal = &scenario.signal;
    let cutoff = estimation_cutoff(lane, road, ctx);
    let mut out: Vec<DepartureEstimate> = Vec::with_capacity(cutoff);

    for (i, v) in lane[..cutoff].iter().enumerate() {
        let (reference, tau) = if i == 0 {
            match ctx.detector {
                Some(stamp) => (Some(stamp.time), desired_headway(v.class, stamp.class, pop)),
                None => (None, desired_headway(v.class, v.class, pop)),
            }
        } else {
            let leader = &lane[i - 1];
            (
                Some(out[i - 1].t_d),
                desired_headway(v.class, leader.class, pop),
            )
        };
        let t_f = free_flow_departure(now, v.pos, v.speed, road, v.class.accel(pop));

        let (t_p, t_d) = if v.is_bus_before_stop(road.bus_stop_pos) {
            let dwell = if v.dwell_remaining > 0.0 {
                v.dwell_remaining
            } else {
                scenario.demand.dwell_mean
            };
            let b = bus_stop_departure(
                now, v.pos, v.speed, reference, tau, dwell, road, pop, signal,
            );
            (b.t_p, b.t_d)
        } else {
            let t_p = unsignalized_departure(reference, tau, t_f);
            let t_d = signalized_departure(t_p, signal, pop.startup_lost_time, v.is_right_turn());
            (t_p, t_d)
        };
        out.push(DepartureEstimate {
            vehicle_id: v.id,
            basis_time: now,
            t_f,
            t_p,
            t_d,
            tau,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{rank_lane, Movement};

    const EPS: f64 = 1e-2;

    fn road() -> RoadConfig {
        RoadConfig::default()
    }

    #[test]
    fn free_flow_at_speed_limit() {
        let t = free_flow_departure(0.0, 0.0, 13.89, &road(), 3.0);
        assert!((t - 50.40).abs() < EPS, "{t}");
    }

    #[test]
    fn free_flow_from_standstill() {
        // 4.63 s accelerating over 32.15 m, then 667.85 m at 13.89 m/s
        let t = free_flow_departure(0.0, 0.0, 0.0, &road(), 3.0);
        assert!((t - 52.71).abs() < EPS, "{t}");
    }

    #[test]
    fn free_flow_at_stop_bar() {
        assert_eq!(free_flow_departure(10.0, 700.0, 5.0, &road(), 3.0), 10.0);
    }

    #[test]
    fn short_distance_uses_pure_acceleration() {
        // 10 m from standstill at 3 m/s² never reaches the limit: sqrt(20/3)
        let t = free_flow_departure(0.0, 690.0, 0.0, &road(), 3.0);
        assert!((t - (20.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn headway_table() {
        let pop = VehiclePopulation::default();
        let h = |f, l| desired_headway(f, l, &pop);
        assert!((h(VehicleClass::Cav, VehicleClass::Cav) - 0.7).abs() < 1e-12);
        assert!((h(VehicleClass::Cav, VehicleClass::Hdv) - 1.3).abs() < 1e-12);
        assert!((h(VehicleClass::Hdv, VehicleClass::Cav) - 2.0).abs() < 1e-12);
        assert!((h(VehicleClass::Bus, VehicleClass::Chv) - 1.3).abs() < 1e-12);
        assert!((h(VehicleClass::Bus, VehicleClass::Bus) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn unsignalized_cases() {
        assert_eq!(unsignalized_departure(Some(40.0), 2.0, 50.4), 50.4);
        assert!((unsignalized_departure(Some(60.0), 1.3, 50.4) - 61.3).abs() < 1e-12);
        assert_eq!(unsignalized_departure(Some(50.0), 2.0, 50.4), 52.0);
        assert_eq!(unsignalized_departure(None, 2.0, 50.4), 50.4);
    }

    #[test]
    fn signalized_cases() {
        let plan = SignalPlan::new(60.0, 40.0);
        assert_eq!(signalized_departure(30.0, &plan, 2.0, false), 62.0);
        assert_eq!(signalized_departure(70.0, &plan, 2.0, false), 70.0);
        assert_eq!(signalized_departure(130.0, &plan, 2.0, false), 162.0);
        assert_eq!(signalized_departure(30.0, &plan, 2.0, true), 30.0);
    }

    #[test]
    fn bus_dwelling_at_stop() {
        let mut r = road();
        r.bus_stop_pos = Some(400.0);
        let pop = VehiclePopulation::default();
        let plan = SignalPlan::new(60.0, 40.0);
        let b = bus_stop_departure(0.0, 400.0, 0.0, None, 0.7, 20.0, &r, &pop, &plan);
        // 6.945 s accelerating over 48.23 m, then 251.77 m cruising.
        assert!((b.t_p - 45.07).abs() < EPS, "{}", b.t_p);
        assert_eq!(b.t_d, 62.0);
    }

    #[test]
    fn bus_behind_late_leader() {
        let mut r = road();
        r.bus_stop_pos = Some(400.0);
        let pop = VehiclePopulation::default();
        let plan = SignalPlan::new(60.0, 40.0);
        let b = bus_stop_departure(0.0, 300.0, 10.0, Some(100.0), 0.7, 20.0, &r, &pop, &plan);
        assert!((b.t_p - 100.7).abs() < 1e-9);
        assert!((b.t_d - 162.0).abs() < 1e-9);
    }

    #[test]
    fn bus_with_zero_dwell_matches_free_flow_path() {
        let mut r = road();
        r.bus_stop_pos = Some(400.0);
        let pop = VehiclePopulation::default();
        let plan = SignalPlan::new(60.0, 40.0);
        let b = bus_stop_departure(0.0, 400.0, 0.0, None, 0.7, 0.0, &r, &pop, &plan);
        let ff = free_flow_departure(0.0, 400.0, 0.0, &r, pop.bus_accel);
        assert!((b.t_p - ff).abs() < 1e-9);
    }

    fn car(id: u32, class: VehicleClass, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new(
            id,
            class,
            Movement::Through,
            pos,
            speed,
            &VehiclePopulation::default(),
        )
    }

    #[test]
    fn empty_lane() {
        let s = Scenario::baseline();
        assert!(estimate_lane(&[], &LaneContext::default(), &s, 0.0).is_empty());
    }

    #[test]
    fn queue_released_after_green() {
        let s = Scenario::default();
        let mut lane = vec![
            car(1, VehicleClass::Hdv, 690.0, 0.0),
            car(2, VehicleClass::Cav, 682.0, 0.0),
            car(3, VehicleClass::Chv, 674.0, 0.0),
        ];
        rank_lane(&mut lane);
        let est = estimate_lane(&lane, &LaneContext::default(), &s, 10.0);
        assert_eq!(est.len(), 3);
        assert_eq!(est[0].t_d, 62.0);
        assert!((est[1].t_d - 63.3).abs() < 1e-9);
        assert!((est[2].t_d - 65.3).abs() < 1e-9);
    }

    #[test]
    fn bus_lane_cutoff_at_bus_before_stop() {
        let mut s = Scenario::default();
        s.road.bus_stop_pos = Some(400.0);
        let pop = s.vehicles.clone();
        let mut lane = vec![
            car(1, VehicleClass::Cav, 650.0, 13.0),
            VehicleState::new(2, VehicleClass::Bus, Movement::Through, 200.0, 13.0, &pop),
            car(3, VehicleClass::Cav, 100.0, 13.0),
        ];
        rank_lane(&mut lane);
        let ctx = LaneContext {
            is_bus_lane: true,
            detector: None,
        };
        let est = estimate_lane(&lane, &ctx, &s, 0.0);
        let ids: Vec<u32> = est.iter().map(|e| e.vehicle_id.0).collect();
        assert_eq!(ids, vec![1, 2]);
        // a general lane is never truncated
        let est = estimate_lane(&lane, &LaneContext::default(), &s, 0.0);
        assert_eq!(est.len(), 3);
    }

    #[test]
    fn detector_constrains_first_vehicle() {
        let s = Scenario::default();
        let lane = vec![car(1, VehicleClass::Hdv, 699.0, 13.89)];
        let ctx = LaneContext {
            is_bus_lane: false,
            detector: Some(DetectorStamp {
                time: 70.0,
                class: VehicleClass::Cav,
            }),
        };
        let est = estimate_lane(&lane, &ctx, &s, 70.0);
        assert!((est[0].t_d - 72.0).abs() < 1e-9);
    }
}
