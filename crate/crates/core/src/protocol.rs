//! Lane-changing protocol: who is advised into the bus lane and when.
//!
//! Right-turn traffic has precedence. Connected right-turn vehicles next to
//! a usable bus-lane gap are advised into it; those that get close to the
//! stop bar without an advisory get a fallback advisory; non-connected
//! right-turn vehicles enter by a static rule. Through traffic is only
//! considered for a gap once no connected right-turn vehicle is waiting
//! ahead of the gap's follower.

use std::collections::HashSet;

use crate::estimator::DepartureEstimate;
use crate::gaps::{SpatialGap, TemporalGap};
use crate::scenario::RoadConfig;
use crate::vehicle::{Movement, VehicleClass, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdvisoryKind {
    /// Right-turn vehicle beside a usable bus-lane gap.
    RightTurnGap,
    /// Right-turn vehicle near the stop bar without a gap advisory.
    RightTurnFallback,
    /// Through vehicle selected by the right-of-way optimizer.
    ThroughOptimized,
    /// Static lane rule applied by the vehicle itself (non-connected
    /// right-turn vehicles, or exclusive-lane right-turn access).
    RightTurnStatic,
    /// Opportunistic bus-lane entry allowed by the clearance strategy.
    BusLaneEntry,
    /// Forced exit ahead of an approaching bus; urgent exits accept tighter gaps.
    ClearanceExit { urgent: bool },
}

impl AdvisoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdvisoryKind::RightTurnGap => "RightTurnGap",
            AdvisoryKind::RightTurnFallback => "RightTurnFallback",
            AdvisoryKind::ThroughOptimized => "ThroughOptimized",
            AdvisoryKind::RightTurnStatic => "RightTurnStatic",
            AdvisoryKind::BusLaneEntry => "BusLaneEntry",
            AdvisoryKind::ClearanceExit { urgent: false } => "ClearanceExit",
            AdvisoryKind::ClearanceExit { urgent: true } => "ClearanceExitUrgent",
        }
    }

    pub fn is_exit(self) -> bool {
        matches!(self, AdvisoryKind::ClearanceExit { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advisory {
    pub vehicle_id: VehicleId,
    pub target_lane: usize,
    pub issued_at: f64,
    pub expires_at: f64,
    pub kind: AdvisoryKind,
}

/// Advisory issued at `now` and live for one control interval.
pub fn advisory(
    vehicle: &VehicleState,
    target_lane: usize,
    kind: AdvisoryKind,
    now: f64,
    lifetime: f64,
) -> Advisory {
    Advisory {
        vehicle_id: vehicle.id,
        target_lane,
        issued_at: now,
        expires_at: now + lifetime,
        kind,
    }
}

/// Connected right-turn vehicles in the adjacent general lane that sit
/// strictly inside a gap's bounds.
pub fn right_turn_gap_advisories(
    asgs: &[SpatialGap],
    adjacent_lane: &[VehicleState],
    bus_lane: usize,
    now: f64,
    lifetime: f64,
) -> Vec<Advisory> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for gap in asgs {
        for v in adjacent_lane {
            if v.connected() && v.is_right_turn() && gap.contains_strict(v.pos) && seen.insert(v.id)
            {
                out.push(advisory(
                    v,
                    bus_lane,
                    AdvisoryKind::RightTurnGap,
                    now,
                    lifetime,
                ));
            }
        }
    }
    out
}

/// Connected right-turn vehicles that are within the fallback distance of the
/// stop bar and hold no advisory yet.
pub fn right_turn_fallback_advisories(
    general_lane: &[VehicleState],
    bus_lane: usize,
    road: &RoadConfig,
    now: f64,
    lifetime: f64,
    already_advised: &HashSet<VehicleId>,
) -> Vec<Advisory> {
    let threshold = road.stop_bar() - road.right_turn_fallback_dist;
    general_lane
        .iter()
        .filter(|v| {
            v.connected()
                && v.is_right_turn()
                && v.pos > threshold
                && !already_advised.contains(&v.id)
        })
        .map(|v| advisory(v, bus_lane, AdvisoryKind::RightTurnFallback, now, lifetime))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RightTurnDirective {
    /// Keep the current lane for now.
    Hold,
    EnterBusLane,
}

/// Static rule for non-connected right-turn vehicles: enter the bus lane
/// right after passing the stop, or straight from the entry when there is
/// no stop. `None` for vehicles this rule does not govern.
pub fn nonconnected_right_turn_policy(
    vehicle: &VehicleState,
    road: &RoadConfig,
) -> Option<RightTurnDirective> {
    if vehicle.class != VehicleClass::Hdv || vehicle.movement != Movement::RightTurn {
        return None;
    }
    Some(match road.bus_stop_pos {
        Some(stop) if vehicle.pos <= stop => RightTurnDirective::Hold,
        _ => RightTurnDirective::EnterBusLane,
    })
}

/// Through vehicles eligible for one gap, numbered `k = 1..K` from the stop
/// bar backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub asg: SpatialGap,
    pub atg: TemporalGap,
    /// Candidate ids; index 0 is `k = 1`, the one closest to the stop bar.
    pub members: Vec<VehicleId>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// True when no connected right-turn vehicle in the adjacent lane is ahead of
/// the gap's follower, i.e. right-turn traffic has been served.
pub fn right_turn_gate_open(
    asg: &SpatialGap,
    adjacent_lane: &[VehicleState],
    road: &RoadConfig,
) -> bool {
    !adjacent_lane.iter().any(|v| {
        v.connected() && v.is_right_turn() && asg.rear_pos < v.pos && v.pos < road.stop_bar()
    })
}

/// Through candidates for one gap: connected through vehicles of the
/// adjacent lane positioned within the gap whose free-flow arrival falls in
/// one of the gap's windows. `None` when the right-turn gate is closed, the
/// temporal gap is empty, or no vehicle qualifies.
pub fn through_candidates(
    asg: &SpatialGap,
    atg: &TemporalGap,
    adjacent_lane: &[VehicleState],
    estimates: &[DepartureEstimate],
    road: &RoadConfig,
) -> Option<CandidateSet> {
    if atg.is_empty() || !right_turn_gate_open(asg, adjacent_lane, road) {
        return None;
    }
    let t_f_of = |id: VehicleId| estimates.iter().find(|e| e.vehicle_id == id).map(|e| e.t_f);
    let mut members: Vec<&VehicleState> = adjacent_lane
        .iter()
        .filter(|v| v.connected() && v.movement == Movement::Through && asg.contains(v.pos))
        .filter(|v| t_f_of(v.id).is_some_and(|t| atg.contains(t)))
        .collect();
    if members.is_empty() {
        return None;
    }
    members.sort_by(|a, b| b.pos.total_cmp(&a.pos).then(a.id.cmp(&b.id)));
    Some(CandidateSet {
        asg: *asg,
        atg: atg.clone(),
        members: members.into_iter().map(|v| v.id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaps::{GapBound, Window};
    use crate::scenario::VehiclePopulation;

    fn veh(id: u32, class: VehicleClass, movement: Movement, pos: f64) -> VehicleState {
        let mut v = VehicleState::new(
            id,
            class,
            movement,
            pos,
            10.0,
            &VehiclePopulation::default(),
        );
        v.lane = 1;
        v
    }

    fn gap(rear: f64, front: f64) -> SpatialGap {
        SpatialGap {
            leader: GapBound::Vehicle(VehicleId(100)),
            follower: GapBound::Vehicle(VehicleId(101)),
            front_pos: front,
            rear_pos: rear,
            length: front - rear,
        }
    }

    fn atg(windows: &[(f64, f64)]) -> TemporalGap {
        TemporalGap {
            windows: windows
                .iter()
                .map(|&(start, end)| Window { start, end })
                .collect(),
            leader_td: 0.0,
            follower_td: 200.0,
        }
    }

    fn est(id: u32, t_f: f64) -> DepartureEstimate {
        DepartureEstimate {
            vehicle_id: VehicleId(id),
            basis_time: 0.0,
            t_f,
            t_p: t_f,
            t_d: t_f,
            tau: 1.3,
        }
    }

    #[test]
    fn rule_one_filters() {
        let g = [gap(300.0, 500.0)];
        let connected = [veh(1, VehicleClass::Cav, Movement::RightTurn, 420.0)];
        assert_eq!(
            right_turn_gap_advisories(&g, &connected, 2, 0.0, 5.0).len(),
            1
        );
        let through = [veh(1, VehicleClass::Cav, Movement::Through, 420.0)];
        assert!(right_turn_gap_advisories(&g, &through, 2, 0.0, 5.0).is_empty());
        let human = [veh(1, VehicleClass::Hdv, Movement::RightTurn, 420.0)];
        assert!(right_turn_gap_advisories(&g, &human, 2, 0.0, 5.0).is_empty());
        let on_edge = [veh(1, VehicleClass::Chv, Movement::RightTurn, 500.0)];
        assert!(right_turn_gap_advisories(&g, &on_edge, 2, 0.0, 5.0).is_empty());
    }

    #[test]
    fn rule_one_no_duplicates_across_gaps() {
        let g = [gap(300.0, 500.0), gap(300.0, 500.0)];
        let lane = [veh(1, VehicleClass::Cav, Movement::RightTurn, 420.0)];
        assert_eq!(right_turn_gap_advisories(&g, &lane, 2, 0.0, 5.0).len(), 1);
    }

    #[test]
    fn rule_two_threshold_and_dedup() {
        let road = RoadConfig::default();
        let lane = [
            veh(1, VehicleClass::Chv, Movement::RightTurn, 600.0),
            veh(2, VehicleClass::Chv, Movement::RightTurn, 500.0),
        ];
        let none = HashSet::new();
        let adv = right_turn_fallback_advisories(&lane, 2, &road, 0.0, 5.0, &none);
        assert_eq!(adv.len(), 1);
        assert_eq!(adv[0].vehicle_id, VehicleId(1));
        assert_eq!(adv[0].kind, AdvisoryKind::RightTurnFallback);
        let advised: HashSet<_> = [VehicleId(1)].into_iter().collect();
        assert!(right_turn_fallback_advisories(&lane, 2, &road, 0.0, 5.0, &advised).is_empty());
    }

    #[test]
    fn rule_three_static_policy() {
        let mut road = RoadConfig {
            bus_stop_pos: Some(400.0),
            ..RoadConfig::default()
        };
        let v = veh(1, VehicleClass::Hdv, Movement::RightTurn, 350.0);
        assert_eq!(
            nonconnected_right_turn_policy(&v, &road),
            Some(RightTurnDirective::Hold)
        );
        let v = veh(1, VehicleClass::Hdv, Movement::RightTurn, 410.0);
        assert_eq!(
            nonconnected_right_turn_policy(&v, &road),
            Some(RightTurnDirective::EnterBusLane)
        );
        road.bus_stop_pos = None;
        let v = veh(1, VehicleClass::Hdv, Movement::RightTurn, 5.0);
        assert_eq!(
            nonconnected_right_turn_policy(&v, &road),
            Some(RightTurnDirective::EnterBusLane)
        );
        let v = veh(1, VehicleClass::Chv, Movement::RightTurn, 5.0);
        assert_eq!(nonconnected_right_turn_policy(&v, &road), None);
    }

    #[test]
    fn gate_blocked_by_right_turn_ahead() {
        let road = RoadConfig::default();
        let lane = [
            veh(1, VehicleClass::Cav, Movement::RightTurn, 600.0),
            veh(2, VehicleClass::Cav, Movement::Through, 350.0),
        ];
        let estimates = [est(1, 50.0), est(2, 70.0)];
        let cs = through_candidates(
            &gap(300.0, 500.0),
            &atg(&[(60.0, 100.0)]),
            &lane,
            &estimates,
            &road,
        );
        assert!(cs.is_none());
    }

    #[test]
    fn membership_by_free_flow_window() {
        let road = RoadConfig::default();
        let lane = [
            veh(1, VehicleClass::Cav, Movement::Through, 480.0),
            veh(2, VehicleClass::Chv, Movement::Through, 420.0),
            veh(3, VehicleClass::Cav, Movement::Through, 350.0),
        ];
        let estimates = [est(1, 70.0), est(2, 105.0), est(3, 90.0)];
        let cs = through_candidates(
            &gap(300.0, 500.0),
            &atg(&[(60.0, 100.0)]),
            &lane,
            &estimates,
            &road,
        )
        .unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.members, vec![VehicleId(1), VehicleId(3)]);
    }

    #[test]
    fn empty_atg_gives_none() {
        let road = RoadConfig::default();
        let lane = [veh(1, VehicleClass::Cav, Movement::Through, 480.0)];
        let estimates = [est(1, 70.0)];
        assert!(
            through_candidates(&gap(300.0, 500.0), &atg(&[]), &lane, &estimates, &road).is_none()
        );
    }
}
