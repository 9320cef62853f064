//! Recognition of usable spatial gaps on the bus lane and of the green-time
//! windows (temporal gaps) in which a vehicle inserted into such a gap can
//! clear the stop bar without delaying the gap's follower.

use crate::scenario::{RoadConfig, SignalPlan, VehiclePopulation};
use crate::vehicle::{VehicleId, VehicleState};

/// One end of a spatial gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapBound {
    StopBar,
    Vehicle(VehicleId),
    /// The upstream end of the recognition range with no vehicle behind.
    Entry,
}

impl GapBound {
    pub fn vehicle(self) -> Option<VehicleId> {
        match self {
            GapBound::Vehicle(id) => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGap {
    pub leader: GapBound,
    pub follower: GapBound,
    /// Rear bumper of the leader, or the stop bar.
    pub front_pos: f64,
    /// Front bumper of the follower, or the start of the recognition range.
    pub rear_pos: f64,
    pub length: f64,
}

impl SpatialGap {
    /// Strictly inside the positional bounds.
    pub fn contains_strict(&self, pos: f64) -> bool {
        self.rear_pos < pos && pos < self.front_pos
    }

    pub fn contains(&self, pos: f64) -> bool {
        self.rear_pos <= pos && pos <= self.front_pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGap {
    pub windows: Vec<Window>,
    pub leader_td: f64,
    pub follower_td: f64,
}

impl TemporalGap {
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.windows.iter().any(|w| w.contains(t))
    }

    /// Checks ordering, containment in `[leader_td, follower_td - tau]`,
    /// disjointness from red and the minimum window length.
    pub fn check(&self, tau: f64, signal: &SignalPlan, min_len: f64) -> Result<(), String> {
        const TOL: f64 = 1e-9;
        let upper = self.follower_td - tau;
        let mut prev_end = f64::NEG_INFINITY;
        for w in &self.windows {
            if w.start < prev_end - TOL {
                return Err(format!("window {w:?} overlaps its predecessor"));
            }
            if w.start < self.leader_td - TOL || w.end > upper + TOL {
                return Err(format!("window {w:?} leaves [{}, {upper}]", self.leader_td));
            }
            if w.len() < min_len - TOL {
                return Err(format!("window {w:?} shorter than {min_len}"));
            }
            let cycle_start = signal.cycle_start(w.start + TOL);
            if w.start < cycle_start + signal.red - TOL || w.end > cycle_start + signal.cycle + TOL
            {
                return Err(format!("window {w:?} intersects red"));
            }
            prev_end = w.end;
        }
        Ok(())
    }
}

/// Smallest gap that fits one car plus its front and rear margins.
pub fn min_gap(pop: &VehiclePopulation) -> f64 {
    pop.asg_margin_front + pop.car_len + pop.asg_margin_rear
}

/// Start of the recognition range: the entry, or the position of a bus that
/// is approaching or serving the stop.
pub fn recognition_start(bus_lane: &[VehicleState], road: &RoadConfig) -> (f64, Option<usize>) {
    match bus_lane
        .iter()
        .position(|v| v.is_bus_before_stop(road.bus_stop_pos))
    {
        Some(i) => (bus_lane[i].pos, Some(i)),
        None => (0.0, None),
    }
}

/// Spatial gaps on the bus lane (ordered front-first), front to back,
/// keeping only those at least [`min_gap`] long.
pub fn find_asgs(
    bus_lane: &[VehicleState],
    road: &RoadConfig,
    pop: &VehiclePopulation,
) -> Vec<SpatialGap> {
    let d_min = min_gap(pop);
    let (range_start, cut) = recognition_start(bus_lane, road);
    let in_range = match cut {
        Some(i) => &bus_lane[..=i],
        None => bus_lane,
    };

    let mut gaps = Vec::new();
    let mut push = |leader, follower, front: f64, rear: f64| {
        let front = front.min(road.stop_bar());
        let rear = rear.max(range_start);
        let length = front - rear;
        if length >= d_min {
            gaps.push(SpatialGap {
                leader,
                follower,
                front_pos: front,
                rear_pos: rear,
                length,
            });
        }
    };

    let Some(first) = in_range.first() else {
        push(
            GapBound::StopBar,
            GapBound::Entry,
            road.stop_bar(),
            range_start,
        );
        return gaps;
    };
    push(
        GapBound::StopBar,
        GapBound::Vehicle(first.id),
        road.stop_bar(),
        first.pos,
    );
    for pair in in_range.windows(2) {
        let (leader, follower) = (&pair[0], &pair[1]);
        push(
            GapBound::Vehicle(leader.id),
            GapBound::Vehicle(follower.id),
            leader.rear(),
            follower.pos,
        );
    }
    if cut.is_none() {
        let last = in_range.last().expect("non-empty");
        push(
            GapBound::Vehicle(last.id),
            GapBound::Entry,
            last.rear(),
            range_start,
        );
    }
    gaps
}

/// Green windows inside `[leader_td, follower_td - tau]`, dropping any
/// shorter than `min_window`.
///
/// The interval is split by signal cycle: a partial window in the leader's
/// cycle, full greens for every cycle strictly in between, and a partial
/// window in the cycle where the interval ends.
pub fn compute_atg(
    leader_td: f64,
    follower_td: f64,
    tau: f64,
    signal: &SignalPlan,
    min_window: f64,
) -> TemporalGap {
    let start = leader_td;
    let end = follower_td - tau;
    let mut windows = Vec::new();
    let mut keep = |s: f64, e: f64| {
        if e - s >= min_window {
            windows.push(Window { start: s, end: e });
        }
    };

    if end > start {
        let tc = signal.cycle;
        let first_cycle = (start / tc).floor();
        let last_cycle = (end / tc).floor();
        let cycles_apart = (last_cycle - first_cycle) as i64;
        let green_of = |k: f64| k * tc + signal.red;

        if cycles_apart == 0 {
            keep(start.max(green_of(first_cycle)), end);
        } else {
            keep(start.max(green_of(first_cycle)), (first_cycle + 1.0) * tc);
            for n in 1..cycles_apart {
                let k = first_cycle + n as f64;
                keep(green_of(k), (k + 1.0) * tc);
            }
            keep(green_of(last_cycle), end);
        }
    }
    TemporalGap {
        windows,
        leader_td,
        follower_td,
    }
}

/// Sampling oracle for [`compute_atg`]: scans the interval on a `grid`-second
/// lattice, then bisects every green/red transition it brackets.
pub fn atg_brute_force(
    leader_td: f64,
    follower_td: f64,
    tau: f64,
    signal: &SignalPlan,
    min_window: f64,
    grid: f64,
) -> TemporalGap {
    let start = leader_td;
    let end = follower_td - tau;
    let mut windows = Vec::new();
    if end > start {
        let mut samples: Vec<f64> = Vec::new();
        let steps = ((end - start) / grid).floor() as usize;
        for i in 0..=steps {
            let t = start + i as f64 * grid;
            if t < end {
                samples.push(t);
            }
        }
        samples.push(end);

        let green = |t: f64| signal.is_green(t);
        let boundary = |mut lo: f64, mut hi: f64| {
            // lo and hi straddle a signal transition
            let lo_green = green(lo);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if green(mid) == lo_green {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };

        let mut open: Option<f64> = if green(samples[0]) {
            Some(samples[0])
        } else {
            None
        };
        for pair in samples.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            match (green(a), green(b)) {
                (false, true) => open = Some(boundary(a, b)),
                (true, false) => {
                    let close = boundary(a, b);
                    if let Some(s) = open.take() {
                        windows.push(Window {
                            start: s,
                            end: close,
                        });
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            windows.push(Window { start: s, end });
        }
        windows.retain(|w| w.len() >= min_window);
    }
    TemporalGap {
        windows,
        leader_td,
        follower_td,
    }
}
