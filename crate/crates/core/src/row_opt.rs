//! Right-of-way assignment for one bus-lane gap.
//!
//! Given the through candidates `k = 1..K` of a gap (ordered from the stop
//! bar backwards), choose which of them move into the bus lane so that the
//! sum of their stop-bar departure times is minimal. A candidate that moves
//! leaves a virtual placeholder in its general lane that carries the
//! departure time of the nearest real vehicle ahead, and becomes a real
//! vehicle in the bus lane. Departure times follow from a forward recursion
//! on both lanes, so the model is solved by search over the binary vector:
//! [`solve_exhaustive`] enumerates every vector and [`solve_bnb`] is the
//! depth-first branch-and-bound used online. Both share one evaluation
//! routine and one tie-break order, so they return identical vectors.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::estimator::signalized_departure;
use crate::gaps::Window;
use crate::scenario::{SignalPlan, VehiclePopulation};
use crate::vehicle::{VehicleClass, VehicleId};

#[derive(Debug, Error, PartialEq)]
pub enum RowError {
    #[error("candidate {0} cannot change lanes (stopped, inside the no-change zone, or unsafe laterally)")]
    StaticInfeasible(usize),
    #[error("candidate {0} would depart outside every temporal window")]
    InfeasibleWindow(usize),
    #[error("assignment has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Desired headways including their redundancies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayTable {
    /// Automated (or bus) follower behind an automated leader or bus.
    pub cooperative: f64,
    /// Automated (or bus) follower behind a human-driven leader.
    pub adaptive: f64,
    /// Human-driven follower behind anything.
    pub human: f64,
}

impl HeadwayTable {
    pub fn from_population(pop: &VehiclePopulation) -> Self {
        Self {
            cooperative: pop.tau_c + pop.eps_c,
            adaptive: pop.tau_a + pop.eps_a,
            human: pop.tau_h + pop.eps_h,
        }
    }

    pub fn tau(&self, follower: VehicleClass, leader: VehicleClass) -> f64 {
        if follower.is_human() {
            self.human
        } else if leader.is_human() {
            self.adaptive
        } else {
            self.cooperative
        }
    }

    fn min_tau(&self, follower: VehicleClass) -> f64 {
        if follower.is_human() {
            self.human
        } else {
            self.cooperative.min(self.adaptive)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: VehicleId,
    pub pos: f64,
    pub speed: f64,
    pub class: VehicleClass,
    /// Free-flow arrival when staying in the general lane.
    pub t_f_general: f64,
    /// Free-flow arrival after moving to the bus lane.
    pub t_f_bus: f64,
}

/// A real vehicle bounding the candidates: the general-lane vehicle ahead of
/// candidate 1, or the gap's leader / follower on the bus lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneAnchor {
    pub pos: f64,
    pub speed: f64,
    pub t_d: f64,
    pub class: VehicleClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowInstance {
    pub candidates: Vec<Candidate>,
    /// `None` when candidate 1 is the first vehicle of its lane.
    pub general_leader: Option<LaneAnchor>,
    /// `None` when the gap is bounded by the stop bar.
    pub bus_leader: Option<LaneAnchor>,
    /// `None` when the gap extends to the entry.
    pub bus_follower: Option<LaneAnchor>,
    pub windows: Vec<Window>,
    pub signal: SignalPlan,
    pub startup_lost_time: f64,
    pub lateral_safe_gap: f64,
    pub lateral_comfort_decel: f64,
    pub car_len: f64,
    /// Lane changes must start at or before this position.
    pub no_change_boundary: f64,
    pub headways: HeadwayTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Optimal,
    /// Unreachable: staying put is always feasible.
    AllInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub x: Vec<bool>,
    /// Departure in the general lane; for moved candidates this is the
    /// inherited placeholder time (NaN with no real vehicle ahead).
    pub t_d_general: Vec<f64>,
    /// Departure in the bus lane; for candidates that stay this is the
    /// inherited placeholder time (NaN with no real vehicle ahead).
    pub t_d_bus: Vec<f64>,
    pub objective: f64,
    pub status: RowStatus,
}

impl RowSolution {
    pub fn lane_changes(&self) -> usize {
        self.x.iter().filter(|&&b| b).count()
    }

    /// Objective recomputed from the stored per-lane times.
    pub fn recomputed_objective(&self) -> f64 {
        self.x
            .iter()
            .zip(self.t_d_general.iter().zip(&self.t_d_bus))
            .map(|(&moved, (&g, &b))| if moved { b } else { g })
            .sum()
    }
}

/// Lane-change preconditions for candidate `k` (zero-based): moving, outside
/// the no-change zone, and laterally safe with respect to both the gap's
/// leader and follower.
pub fn static_feasible(instance: &RowInstance, k: usize) -> bool {
    let c = &instance.candidates[k];
    if c.speed <= 0.0 {
        return false;
    }
    if c.pos > instance.no_change_boundary {
        return false;
    }
    let required = |other: &LaneAnchor| {
        instance.lateral_safe_gap
            + (other.speed * other.speed - c.speed * c.speed).abs()
                / (2.0 * instance.lateral_comfort_decel)
            + instance.car_len
    };
    if let Some(leader) = &instance.bus_leader {
        if leader.pos - c.pos < required(leader) {
            return false;
        }
    }
    if let Some(follower) = &instance.bus_follower {
        if c.pos - follower.pos < required(follower) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy)]
struct Real {
    t_d: f64,
    class: VehicleClass,
}

impl From<&LaneAnchor> for Real {
    fn from(a: &LaneAnchor) -> Self {
        Real {
            t_d: a.t_d,
            class: a.class,
        }
    }
}

impl RowInstance {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn departure(&self, k: usize, prev: Option<Real>, t_f: f64) -> f64 {
        let c = &self.candidates[k];
        let t_p = match prev {
            Some(p) => (p.t_d + self.headways.tau(c.class, p.class)).max(t_f),
            None => t_f,
        };
        signalized_departure(t_p, &self.signal, self.startup_lost_time, false)
    }

    fn in_window(&self, t: f64) -> bool {
        const TOL: f64 = 1e-9;
        self.windows
            .iter()
            .any(|w| w.start - TOL <= t && t <= w.end + TOL)
    }

    /// Lower bound on candidate `k`'s departure in either lane, given the
    /// current real predecessors.
    fn lower_bound(
        &self,
        k: usize,
        prev_gen: Option<Real>,
        prev_bus: Option<Real>,
        movable: bool,
    ) -> f64 {
        let c = &self.candidates[k];
        let tau = self.headways.min_tau(c.class);
        let lb = |prev: Option<Real>, t_f: f64| {
            let t_p = prev.map_or(t_f, |p| (p.t_d + tau).max(t_f));
            signalized_departure(t_p, &self.signal, self.startup_lost_time, false)
        };
        let general = lb(prev_gen, c.t_f_general);
        if movable {
            general.min(lb(prev_bus, c.t_f_bus))
        } else {
            general
        }
    }
}

/// Forward recursion on both lanes for a fixed assignment.
pub fn evaluate_assignment(instance: &RowInstance, x: &[bool]) -> Result<RowSolution, RowError> {
    let n = instance.len();
    if x.len() != n {
        return Err(RowError::Length {
            got: x.len(),
            expected: n,
        });
    }
    let mut prev_gen: Option<Real> = instance.general_leader.as_ref().map(Real::from);
    let mut prev_bus: Option<Real> = instance.bus_leader.as_ref().map(Real::from);
    let mut t_d_general = Vec::with_capacity(n);
    let mut t_d_bus = Vec::with_capacity(n);
    let mut objective = 0.0;

    for (k, &moved) in x.iter().enumerate() {
        let c = &instance.candidates[k];
        if moved {
            if !static_feasible(instance, k) {
                return Err(RowError::StaticInfeasible(k));
            }
            let t = instance.departure(k, prev_bus, c.t_f_bus);
            if !instance.in_window(t) {
                return Err(RowError::InfeasibleWindow(k));
            }
            t_d_general.push(prev_gen.map_or(f64::NAN, |p| p.t_d));
            t_d_bus.push(t);
            prev_bus = Some(Real {
                t_d: t,
                class: c.class,
            });
            objective += t;
        } else {
            let t = instance.departure(k, prev_gen, c.t_f_general);
            t_d_general.push(t);
            t_d_bus.push(prev_bus.map_or(f64::NAN, |p| p.t_d));
            prev_gen = Some(Real {
                t_d: t,
                class: c.class,
            });
            objective += t;
        }
    }
    Ok(RowSolution {
        x: x.to_vec(),
        t_d_general,
        t_d_bus,
        objective,
        status: RowStatus::Optimal,
    })
}

/// Total order used by both solvers: objective, then fewer lane changes,
/// then the lexicographically smallest vector.
fn better(a: &RowSolution, b: &RowSolution) -> bool {
    match a.objective.total_cmp(&b.objective) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match a.lane_changes().cmp(&b.lane_changes()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.x < b.x,
        },
    }
}

fn baseline(instance: &RowInstance) -> RowSolution {
    evaluate_assignment(instance, &vec![false; instance.len()])
        .expect("staying in lane is always feasible")
}

/// Enumerates every assignment (statically infeasible candidates fixed to
/// stay). Intended for `K <= 20`.
pub fn solve_exhaustive(instance: &RowInstance) -> RowSolution {
    let n = instance.len();
    debug_assert!(n <= 20, "exhaustive enumeration over {n} candidates");
    let movable: Vec<usize> = (0..n).filter(|&k| static_feasible(instance, k)).collect();
    let mut best = baseline(instance);
    let mut x = vec![false; n];
    for mask in 1u64..(1u64 << movable.len()) {
        for (bit, &k) in movable.iter().enumerate() {
            x[k] = mask & (1 << bit) != 0;
        }
        if let Ok(sol) = evaluate_assignment(instance, &x) {
            if better(&sol, &best) {
                best = sol;
            }
        }
    }
    best
}

struct Search<'a> {
    instance: &'a RowInstance,
    movable: Vec<bool>,
    x: Vec<bool>,
    best: RowSolution,
    nodes: u64,
}

impl Search<'_> {
    fn bound(&self, from: usize, prev_gen: Option<Real>, prev_bus: Option<Real>) -> f64 {
        (from..self.instance.len())
            .map(|i| {
                self.instance
                    .lower_bound(i, prev_gen, prev_bus, self.movable[i])
            })
            .sum()
    }

    fn descend(&mut self, k: usize, prev_gen: Option<Real>, prev_bus: Option<Real>, partial: f64) {
        self.nodes += 1;
        let inst = self.instance;
        if k == inst.len() {
            let sol = evaluate_assignment(inst, &self.x).expect("feasible leaf");
            if better(&sol, &self.best) {
                self.best = sol;
            }
            return;
        }
        // Only prune strictly worse subtrees so ties still reach the
        // tie-break; the slack absorbs summation-order rounding.
        if partial + self.bound(k, prev_gen, prev_bus) > self.best.objective + 1e-6 {
            return;
        }
        let c = &inst.candidates[k];

        self.x[k] = false;
        let t = inst.departure(k, prev_gen, c.t_f_general);
        self.descend(
            k + 1,
            Some(Real {
                t_d: t,
                class: c.class,
            }),
            prev_bus,
            partial + t,
        );

        if self.movable[k] {
            let t = inst.departure(k, prev_bus, c.t_f_bus);
            if inst.in_window(t) {
                self.x[k] = true;
                self.descend(
                    k + 1,
                    prev_gen,
                    Some(Real {
                        t_d: t,
                        class: c.class,
                    }),
                    partial + t,
                );
            }
        }
        self.x[k] = false;
    }
}

/// Depth-first branch-and-bound. Returns the same vector as
/// [`solve_exhaustive`].
pub fn solve_bnb(instance: &RowInstance) -> RowSolution {
    solve_bnb_counted(instance).0
}

/// [`solve_bnb`] plus the number of search nodes visited.
pub fn solve_bnb_counted(instance: &RowInstance) -> (RowSolution, u64) {
    let n = instance.len();
    let mut search = Search {
        instance,
        movable: (0..n).map(|k| static_feasible(instance, k)).collect(),
        x: vec![false; n],
        best: baseline(instance),
        nodes: 0,
    };
    search.descend(
        0,
        instance.general_leader.as_ref().map(Real::from),
        instance.bus_leader.as_ref().map(Real::from),
        0.0,
    );
    (search.best, search.nodes)
}

// Line-oriented text form, one record per line:
//
//   signal <cycle> <red> <green>
//   params <t_l> <d_safe> <a_lat> <car_len> <no_change_boundary> <tau_coop> <tau_adapt> <tau_human>
//   general_leader <pos> <speed> <t_d> <class> | general_leader none
//   bus_leader ... | bus_follower ...       (same fields)
//   window <start> <end>
//   candidate <id> <pos> <speed> <class> <t_f_general> <t_f_bus>
//
// Blank lines and lines starting with '#' are ignored.
impl RowInstance {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# right-of-way instance\n");
        let anchor = |s: &mut String, name: &str, a: &Option<LaneAnchor>| match a {
            Some(a) => {
                let _ = writeln!(s, "{name} {} {} {} {}", a.pos, a.speed, a.t_d, a.class);
            }
            None => {
                let _ = writeln!(s, "{name} none");
            }
        };
        let _ = writeln!(
            s,
            "signal {} {} {}",
            self.signal.cycle, self.signal.red, self.signal.green
        );
        let _ = writeln!(
            s,
            "params {} {} {} {} {} {} {} {}",
            self.startup_lost_time,
            self.lateral_safe_gap,
            self.lateral_comfort_decel,
            self.car_len,
            self.no_change_boundary,
            self.headways.cooperative,
            self.headways.adaptive,
            self.headways.human
        );
        anchor(&mut s, "general_leader", &self.general_leader);
        anchor(&mut s, "bus_leader", &self.bus_leader);
        anchor(&mut s, "bus_follower", &self.bus_follower);
        for w in &self.windows {
            let _ = writeln!(s, "window {} {}", w.start, w.end);
        }
        for c in &self.candidates {
            let _ = writeln!(
                s,
                "candidate {} {} {} {} {} {}",
                c.id, c.pos, c.speed, c.class, c.t_f_general, c.t_f_bus
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, RowError> {
        let mut signal = None;
        let mut params: Option<Vec<f64>> = None;
        let mut general_leader = None;
        let mut bus_leader = None;
        let mut bus_follower = None;
        let mut windows = Vec::new();
        let mut candidates = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |reason: String| RowError::Parse { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let nums = |from: usize, count: usize| -> Result<Vec<f64>, RowError> {
                if rest.len() < from + count {
                    return Err(err(format!("`{tag}` needs {} fields", from + count)));
                }
                rest[from..from + count]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("`{f}`: {e}"))))
                    .collect()
            };
            let class = |f: &str| {
                VehicleClass::parse(f).ok_or_else(|| err(format!("unknown vehicle class `{f}`")))
            };
            let parse_anchor = || -> Result<Option<LaneAnchor>, RowError> {
                if rest.first() == Some(&"none") {
                    return Ok(None);
                }
                let v = nums(0, 3)?;
                let class = class(rest.get(3).copied().unwrap_or_default())?;
                Ok(Some(LaneAnchor {
                    pos: v[0],
                    speed: v[1],
                    t_d: v[2],
                    class,
                }))
            };
            match tag {
                "signal" => {
                    let v = nums(0, 3)?;
                    signal = Some(SignalPlan {
                        cycle: v[0],
                        red: v[1],
                        green: v[2],
                    });
                }
                "params" => params = Some(nums(0, 8)?),
                "general_leader" => general_leader = parse_anchor()?,
                "bus_leader" => bus_leader = parse_anchor()?,
                "bus_follower" => bus_follower = parse_anchor()?,
                "window" => {
                    let v = nums(0, 2)?;
                    windows.push(Window {
                        start: v[0],
                        end: v[1],
                    });
                }
                "candidate" => {
                    let id = rest
                        .first()
                        .and_then(|f| f.parse::<u32>().ok())
                        .ok_or_else(|| err("candidate id must be an integer".into()))?;
                    let v = nums(1, 2)?;
                    let cls = class(rest.get(3).copied().unwrap_or_default())?;
                    let t = nums(4, 2)?;
                    candidates.push(Candidate {
                        id: VehicleId(id),
                        pos: v[0],
                        speed: v[1],
                        class: cls,
                        t_f_general: t[0],
                        t_f_bus: t[1],
                    });
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        let missing = |what: &str| RowError::Parse {
            line: 0,
            reason: format!("missing `{what}` record"),
        };
        let signal = signal.ok_or_else(|| missing("signal"))?;
        let p = params.ok_or_else(|| missing("params"))?;
        Ok(RowInstance {
            candidates,
            general_leader,
            bus_leader,
            bus_follower,
            windows,
            signal,
            startup_lost_time: p[0],
            lateral_safe_gap: p[1],
            lateral_comfort_decel: p[2],
            car_len: p[3],
            no_change_boundary: p[4],
            headways: HeadwayTable {
                cooperative: p[5],
                adaptive: p[6],
                human: p[7],
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_instance() -> RowInstance {
        let pop = VehiclePopulation::default();
        RowInstance {
            candidates: Vec::new(),
            general_leader: None,
            bus_leader: None,
            bus_follower: None,
            windows: Vec::new(),
            signal: SignalPlan::new(60.0, 40.0),
            startup_lost_time: pop.startup_lost_time,
            lateral_safe_gap: pop.lateral_safe_gap,
            lateral_comfort_decel: pop.lateral_comfort_decel,
            car_len: pop.car_len,
            no_change_boundary: 670.0,
            headways: HeadwayTable::from_population(&pop),
        }
    }

    fn cand(id: u32, pos: f64, speed: f64, class: VehicleClass, t_f: f64) -> Candidate {
        Candidate {
            id: VehicleId(id),
            pos,
            speed,
            class,
            t_f_general: t_f,
            t_f_bus: t_f,
        }
    }

    fn anchor(pos: f64, speed: f64, t_d: f64, class: VehicleClass) -> Option<LaneAnchor> {
        Some(LaneAnchor {
            pos,
            speed,
            t_d,
            class,
        })
    }

    /// One CAV candidate behind a human-driven bus-lane leader.
    fn single(t_f: f64, window_end: f64) -> RowInstance {
        let mut inst = base_instance();
        inst.bus_leader = anchor(500.0, 10.0, 70.0, VehicleClass::Chv);
        inst.bus_follower = anchor(300.0, 10.0, 140.0, VehicleClass::Bus);
        inst.windows = vec![Window {
            start: 70.0,
            end: window_end,
        }];
        inst.candidates = vec![cand(1, 400.0, 10.0, VehicleClass::Cav, t_f)];
        inst
    }

    #[test]
    fn all_zero_objective_is_general_lane_sum() {
        let mut inst = single(75.0, 100.0);
        inst.candidates
            .push(cand(2, 380.0, 10.0, VehicleClass::Cav, 77.0));
        let sol = evaluate_assignment(&inst, &[false, false]).unwrap();
        // 75 is in green; the second follows a CAV at 0.7 s
        assert_eq!(sol.t_d_general, vec![75.0, 77.0]);
        assert_eq!(sol.objective, 152.0);
    }

    #[test]
    fn single_candidate_enters_window() {
        let sol = evaluate_assignment(&single(75.0, 100.0), &[true]).unwrap();
        assert_eq!(sol.t_d_bus[0], 75.0);
        assert_eq!(sol.objective, 75.0);
    }

    #[test]
    fn headway_binds_behind_leader() {
        let sol = evaluate_assignment(&single(70.5, 100.0), &[true]).unwrap();
        assert!((sol.t_d_bus[0] - 71.3).abs() < 1e-12);
    }

    #[test]
    fn window_end_boundary() {
        assert!(evaluate_assignment(&single(99.5, 100.0), &[true]).is_ok());
        assert_eq!(
            evaluate_assignment(&single(99.5, 99.0), &[true]).unwrap_err(),
            RowError::InfeasibleWindow(0)
        );
    }

    #[test]
    fn static_rules() {
        let mut inst = single(75.0, 100.0);
        inst.candidates[0].speed = 0.0;
        assert!(!static_feasible(&inst, 0));

        let mut inst = single(75.0, 100.0);
        inst.bus_leader = None;
        inst.bus_follower = None;
        inst.candidates[0].pos = 680.0;
        assert!(!static_feasible(&inst, 0));

        let mut inst = single(75.0, 100.0);
        inst.bus_leader = anchor(420.0, 10.0, 70.0, VehicleClass::Chv);
        inst.bus_follower = anchor(380.0, 10.0, 140.0, VehicleClass::Bus);
        assert!(static_feasible(&inst, 0));
        inst.bus_follower = anchor(390.0, 10.0, 140.0, VehicleClass::Bus);
        assert!(!static_feasible(&inst, 0));
        // speed difference adds a braking term: |100 - 36| / 8 = 8 m
        inst.bus_follower = anchor(382.0, 10.0, 140.0, VehicleClass::Bus);
        assert!(static_feasible(&inst, 0));
        inst.bus_follower = anchor(382.0, 6.0, 140.0, VehicleClass::Bus);
        assert!(!static_feasible(&inst, 0));
    }

    #[test]
    fn stopped_candidate_reports_static_infeasible() {
        let mut inst = single(75.0, 100.0);
        inst.candidates[0].speed = 0.0;
        assert_eq!(
            evaluate_assignment(&inst, &[true]).unwrap_err(),
            RowError::StaticInfeasible(0)
        );
    }

    /// Two CHVs whose general lane is held by a late leader while the bus
    /// lane is free until the window closes.
    fn pair_instance() -> RowInstance {
        let mut inst = base_instance();
        inst.general_leader = anchor(600.0, 5.0, 90.0, VehicleClass::Hdv);
        inst.bus_leader = anchor(560.0, 10.0, 70.0, VehicleClass::Cav);
        inst.bus_follower = anchor(200.0, 10.0, 150.0, VehicleClass::Bus);
        inst.windows = vec![Window {
            start: 70.0,
            end: 98.7,
        }];
        inst.candidates = vec![
            cand(1, 450.0, 10.0, VehicleClass::Chv, 80.0),
            cand(2, 420.0, 10.0, VehicleClass::Chv, 82.0),
        ];
        inst
    }

    #[test]
    fn pair_enumerated_by_hand() {
        let inst = pair_instance();
        // stay/stay: 92 + 94; move/stay: 80 + 92; stay/move: 92 + 82; move/move: 80 + 82
        let cost = |x: &[bool]| evaluate_assignment(&inst, x).unwrap().objective;
        assert_eq!(cost(&[false, false]), 186.0);
        assert_eq!(cost(&[true, false]), 172.0);
        assert_eq!(cost(&[false, true]), 174.0);
        assert_eq!(cost(&[true, true]), 162.0);
        let best = solve_exhaustive(&inst);
        assert_eq!(best.x, vec![true, true]);
        assert_eq!(solve_bnb(&inst).x, vec![true, true]);
    }

    #[test]
    fn all_static_infeasible_returns_baseline() {
        let mut inst = pair_instance();
        for c in &mut inst.candidates {
            c.speed = 0.0;
        }
        let sol = solve_exhaustive(&inst);
        assert_eq!(sol.x, vec![false, false]);
        assert_eq!(sol.objective, baseline(&inst).objective);
        assert_eq!(solve_bnb(&inst).x, vec![false, false]);
    }

    #[test]
    fn tie_break_prefers_fewer_changes() {
        // moving gains nothing: same time in both lanes, no leaders
        let mut inst = base_instance();
        inst.windows = vec![Window {
            start: 60.0,
            end: 100.0,
        }];
        inst.candidates = vec![cand(1, 400.0, 10.0, VehicleClass::Cav, 75.0)];
        assert_eq!(solve_exhaustive(&inst).x, vec![false]);
        assert_eq!(solve_bnb(&inst).x, vec![false]);
    }

    #[test]
    fn text_round_trip() {
        let inst = pair_instance();
        let text = inst.to_text();
        assert_eq!(RowInstance::from_text(&text).unwrap(), inst);
    }

    #[test]
    fn text_rejects_garbage() {
        let err = RowInstance::from_text("signal 100 60\n").unwrap_err();
        assert!(matches!(err, RowError::Parse { line: 1, .. }));
        let err = RowInstance::from_text("bogus 1 2\n").unwrap_err();
        assert!(matches!(err, RowError::Parse { .. }));
    }
}
