//! Lane-usage controllers plugged into the simulator.
//!
//! * EBL keeps general through traffic out of the bus lane and sends every
//!   right-turn vehicle through it shortly before the pocket.
//! * BLIDP opens the bus lane to connected traffic but clears a fixed
//!   distance ahead of every bus.
//! * DSTP estimates departures, finds spatial/temporal gaps on the bus lane
//!   and fills them with the through vehicles chosen by the right-of-way
//!   optimiser every control interval. It never sends anyone out.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::estimator::{estimate_lane, worst_case_headway, DepartureEstimate};
use crate::gaps::{compute_atg, find_asgs, GapBound};
use crate::microsim::{anticipated_speed, Controller, World};
use crate::protocol::{
    advisory, nonconnected_right_turn_policy, right_turn_fallback_advisories,
    right_turn_gap_advisories, through_candidates, Advisory, AdvisoryKind, RightTurnDirective,
};
use crate::row_opt::{solve_bnb, Candidate, HeadwayTable, LaneAnchor, RowInstance};
use crate::scenario::Scenario;
use crate::vehicle::{VehicleClass, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Ebl,
    Blidp,
    Dstp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Ebl, StrategyKind::Blidp, StrategyKind::Dstp];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Ebl => "ebl",
            StrategyKind::Blidp => "blidp",
            StrategyKind::Dstp => "dstp",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ebl" => Ok(StrategyKind::Ebl),
            "blidp" => Ok(StrategyKind::Blidp),
            "dstp" => Ok(StrategyKind::Dstp),
            other => Err(format!(
                "unknown strategy `{other}` (expected ebl, blidp or dstp)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub kind: StrategyKind,
    /// BLIDP clearance ahead of each bus (m).
    pub clearance_dist: f64,
    /// DSTP optimiser cadence (s).
    pub control_interval: f64,
    /// How far ahead DSTP looks for a gap with no follower (s).
    pub estimation_horizon: f64,
}

impl ControllerConfig {
    pub fn new(kind: StrategyKind, scenario: &Scenario) -> Self {
        Self {
            kind,
            clearance_dist: 300.0,
            control_interval: scenario.demand.control_interval,
            estimation_horizon: 2.0 * scenario.signal.cycle,
        }
    }
}

/// BLIDP exit advisories turn urgent once the bus is this close.
pub const URGENT_CLEARANCE: f64 = 100.0;

pub fn build_controller(config: ControllerConfig) -> Box<dyn Controller + Send> {
    match config.kind {
        StrategyKind::Ebl => Box::new(Ebl),
        StrategyKind::Blidp => Box::new(Blidp { config }),
        StrategyKind::Dstp => Box::new(Dstp::new(config)),
    }
}

/// Advisories re-issued every tick live just short of one tick.
fn tick_lifetime(scenario: &Scenario) -> f64 {
    0.5 * scenario.demand.sim_dt
}

/// Right-turn vehicles in the adjacent lane between the fallback point and
/// the no-change boundary are sent into the bus lane.
fn ebl_right_turns<'a>(
    lane: &'a [VehicleState],
    scenario: &'a Scenario,
) -> impl Iterator<Item = &'a VehicleState> + 'a {
    let road = &scenario.road;
    let from = road.stop_bar() - road.right_turn_fallback_dist;
    lane.iter()
        .filter(move |v| v.is_right_turn() && v.pos >= from && v.pos <= road.no_change_boundary())
}

pub fn ebl_tick(world: &World, scenario: &Scenario, now: f64) -> Vec<Advisory> {
    let road = &scenario.road;
    let adjacent = world.lane_states(road.adjacent_general_lane());
    ebl_right_turns(&adjacent, scenario)
        .map(|v| {
            advisory(
                v,
                road.bus_lane_index,
                AdvisoryKind::RightTurnStatic,
                now,
                tick_lifetime(scenario),
            )
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct Ebl;

impl Controller for Ebl {
    fn tick(&mut self, world: &World, scenario: &Scenario) -> Vec<Advisory> {
        ebl_tick(world, scenario, world.clock)
    }
}

pub fn blidp_tick(world: &World, scenario: &Scenario, now: f64, clearance: f64) -> Vec<Advisory> {
    let road = &scenario.road;
    let bus_lane = road.bus_lane_index;
    let adjacent = road.adjacent_general_lane();
    let life = tick_lifetime(scenario);
    let bus_states = world.lane_states(bus_lane);
    let buses: Vec<f64> = bus_states
        .iter()
        .filter(|v| v.class.is_bus())
        .map(|v| v.pos)
        .collect();
    // Distance ahead of the nearest bus whose window covers `pos`.
    let window_lead = |pos: f64| {
        buses
            .iter()
            .filter(|&&b| pos >= b && pos <= b + clearance)
            .map(|&b| pos - b)
            .reduce(f64::min)
    };
    let ebl_zone = road.stop_bar() - road.right_turn_fallback_dist;
    let mut out = Vec::new();

    for v in &bus_states {
        if v.class.is_bus() || !v.connected() || (v.is_right_turn() && v.pos >= ebl_zone) {
            continue;
        }
        if let Some(lead) = window_lead(v.pos) {
            let urgent = v.rear() - (v.pos - lead) <= URGENT_CLEARANCE;
            out.push(advisory(
                v,
                adjacent,
                AdvisoryKind::ClearanceExit { urgent },
                now,
                life,
            ));
        }
    }

    let adjacent_states = world.lane_states(adjacent);
    let ebl: HashSet<VehicleId> = ebl_right_turns(&adjacent_states, scenario)
        .map(|v| v.id)
        .collect();
    for v in &adjacent_states {
        if ebl.contains(&v.id) {
            out.push(advisory(
                v,
                bus_lane,
                AdvisoryKind::RightTurnStatic,
                now,
                life,
            ));
            continue;
        }
        if !v.connected() || v.pos > road.no_change_boundary() || window_lead(v.pos).is_some() {
            continue;
        }
        let gain = || {
            anticipated_speed(world.lane(bus_lane), v.pos, road.speed_limit)
                > anticipated_speed(world.lane(adjacent), v.pos, road.speed_limit) + 2.0
        };
        if v.is_right_turn() || gain() {
            out.push(advisory(v, bus_lane, AdvisoryKind::BusLaneEntry, now, life));
        }
    }
    out
}

#[derive(Debug)]
pub struct Blidp {
    config: ControllerConfig,
}

impl Blidp {
    pub fn new(config: ControllerConfig) -> Self {
        Self { config }
    }
}

impl Controller for Blidp {
    fn tick(&mut self, world: &World, scenario: &Scenario) -> Vec<Advisory> {
        blidp_tick(world, scenario, world.clock, self.config.clearance_dist)
    }
}

/// One optimiser decision, kept for the bus-protection audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub time: f64,
    pub vehicle_id: VehicleId,
    /// Planned bus-lane stop-bar departure of the advised vehicle.
    pub t_d_bus: f64,
    /// Estimated departure of the gap's follower (or the horizon sentinel).
    pub follower_td: f64,
    pub follower_is_bus: bool,
    /// Headway the follower needs behind the inserted vehicle.
    pub tau: f64,
}

impl AuditRecord {
    pub fn protects_follower(&self) -> bool {
        self.t_d_bus <= self.follower_td - self.tau + 1e-9
    }
}

#[derive(Debug)]
pub struct Dstp {
    config: ControllerConfig,
    audit: Vec<AuditRecord>,
    /// Instances handed to the optimiser.
    pub solves: u64,
}

impl Dstp {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            config,
            audit: Vec::new(),
            solves: 0,
        }
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn take_audit(&mut self) -> Vec<AuditRecord> {
        std::mem::take(&mut self.audit)
    }
}

impl Controller for Dstp {
    fn tick(&mut self, world: &World, scenario: &Scenario) -> Vec<Advisory> {
        dstp_tick(self, world, scenario, world.clock)
    }
}

fn estimate_of(estimates: &[DepartureEstimate], id: VehicleId) -> Option<&DepartureEstimate> {
    estimates.iter().find(|e| e.vehicle_id == id)
}

fn anchor(v: &VehicleState, t_d: f64) -> LaneAnchor {
    LaneAnchor {
        pos: v.pos,
        speed: v.speed,
        t_d,
        class: v.class,
    }
}

/// Every tick: right-turn rules. On control ticks: one optimisation per
/// spatial gap, front to back.
pub fn dstp_tick(state: &mut Dstp, world: &World, scenario: &Scenario, now: f64) -> Vec<Advisory> {
    let road = &scenario.road;
    let pop = &scenario.vehicles;
    let h = state.config.control_interval;
    let bus_lane = road.bus_lane_index;
    let adjacent = road.adjacent_general_lane();

    let bus_states = world.lane_states(bus_lane);
    let adj_states = world.lane_states(adjacent);
    let asgs = find_asgs(&bus_states, road, pop);

    let mut out = right_turn_gap_advisories(&asgs, &adj_states, bus_lane, now, h);
    let mut advised: HashSet<VehicleId> = out.iter().map(|a| a.vehicle_id).collect();
    advised.extend(world.advisories().map(|a| a.vehicle_id));
    out.extend(right_turn_fallback_advisories(
        &adj_states,
        bus_lane,
        road,
        now,
        h,
        &advised,
    ));
    for v in &adj_states {
        if nonconnected_right_turn_policy(v, road) == Some(RightTurnDirective::EnterBusLane)
            && world.advisory(v.id).is_none()
        {
            out.push(advisory(v, bus_lane, AdvisoryKind::RightTurnStatic, now, h));
        }
    }

    let steps = scenario.demand.steps_per_interval().max(1);
    if !world.tick.is_multiple_of(steps) || asgs.is_empty() {
        return out;
    }

    let bus_est = estimate_lane(
        &bus_states,
        &world.lane_context(bus_lane, scenario),
        scenario,
        now,
    );
    let adj_est = estimate_lane(
        &adj_states,
        &world.lane_context(adjacent, scenario),
        scenario,
        now,
    );
    let headways = HeadwayTable::from_population(pop);
    let mut chosen: HashSet<VehicleId> = HashSet::new();
    let find_bus = |id: VehicleId| bus_states.iter().find(|v| v.id == id);

    for asg in &asgs {
        let leader_td = match asg.leader {
            GapBound::StopBar => now,
            GapBound::Vehicle(id) => match estimate_of(&bus_est, id) {
                Some(e) => e.t_d,
                None => continue,
            },
            GapBound::Entry => continue,
        };
        let (follower_td, tau, follower_is_bus) = match asg.follower {
            GapBound::Vehicle(id) => match (estimate_of(&bus_est, id), find_bus(id)) {
                (Some(e), Some(f)) => (e.t_d, worst_case_headway(f.class, pop), f.class.is_bus()),
                _ => continue,
            },
            _ => (
                now + state.config.estimation_horizon,
                worst_case_headway(VehicleClass::Hdv, pop),
                false,
            ),
        };
        let atg = compute_atg(leader_td, follower_td, tau, &scenario.signal, pop.tau_a);
        let Some(set) = through_candidates(asg, &atg, &adj_states, &adj_est, road) else {
            continue;
        };
        let members: Vec<&VehicleState> = set
            .members
            .iter()
            .filter(|id| !chosen.contains(id))
            .filter_map(|id| adj_states.iter().find(|v| v.id == *id))
            .collect();
        if members.is_empty() {
            continue;
        }

        let candidates: Vec<Candidate> = members
            .iter()
            .map(|v| {
                let t_f = estimate_of(&adj_est, v.id).map_or(now, |e| e.t_f);
                Candidate {
                    id: v.id,
                    pos: v.pos,
                    speed: v.speed,
                    class: v.class,
                    t_f_general: t_f,
                    t_f_bus: t_f,
                }
            })
            .collect();
        let general_leader = adj_states
            .iter()
            .position(|v| v.id == members[0].id)
            .filter(|&i| i > 0)
            .and_then(|i| {
                let l = &adj_states[i - 1];
                estimate_of(&adj_est, l.id).map(|e| anchor(l, e.t_d))
            });
        let bus_anchor = |bound: GapBound| {
            bound.vehicle().and_then(|id| {
                let v = find_bus(id)?;
                estimate_of(&bus_est, id).map(|e| anchor(v, e.t_d))
            })
        };
        let instance = RowInstance {
            candidates,
            general_leader,
            bus_leader: bus_anchor(asg.leader),
            bus_follower: bus_anchor(asg.follower),
            windows: atg.windows.clone(),
            signal: scenario.signal,
            startup_lost_time: pop.startup_lost_time,
            lateral_safe_gap: pop.lateral_safe_gap,
            lateral_comfort_decel: pop.lateral_comfort_decel,
            car_len: pop.car_len,
            no_change_boundary: road.no_change_boundary(),
            headways,
        };
        state.solves += 1;
        let solution = solve_bnb(&instance);
        for (k, &moved) in solution.x.iter().enumerate() {
            if !moved {
                continue;
            }
            let v = members[k];
            chosen.insert(v.id);
            out.push(advisory(
                v,
                bus_lane,
                AdvisoryKind::ThroughOptimized,
                now,
                h,
            ));
            state.audit.push(AuditRecord {
                time: now,
                vehicle_id: v.id,
                t_d_bus: solution.t_d_bus[k],
                follower_td,
                follower_is_bus,
                tau,
            });
        }
    }
    out
}
