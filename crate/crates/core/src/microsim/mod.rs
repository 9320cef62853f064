//! Fixed-step lane-level microsimulation.
//!
//! Each tick runs, in order: signal state, controller hook, lane changes,
//! speed update (front to back from the previous snapshot, with
//! cooperative followers also seeing their leader's planned speed), Euler
//! position update, bus-stop dwell, stop-bar exits and arrivals. All
//! randomness comes from streams derived from the scenario seed, and every
//! vehicle owns its own stream keyed by id, so two strategies run on the
//! same seed see the same arrivals, dwell times and driver noise.

pub mod car_following;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::estimator::{kinematic_travel_time, DetectorStamp, LaneContext};
use crate::metrics::compute_delay;
use crate::protocol::{Advisory, AdvisoryKind};
use crate::scenario::Scenario;
use crate::vehicle::{Movement, VehicleClass, VehicleId, VehicleState};

pub use car_following::{follower_speed, stopping_speed, Dynamics, FollowModel, Leader};

/// Smallest bumper-to-bumper spacing the integrator lets through.
pub const MIN_SPACING: f64 = 0.5;
/// Speed below which a vehicle counts as halted.
const HALT_SPEED: f64 = 0.1;
/// Queued vehicles stop this far short of the stop bar.
const STOP_LINE_SETBACK: f64 = 0.1;
/// Uncommitted vehicles start treating the stop line as an obstacle this
/// long before red.
const AMBER: f64 = 5.0;
/// Discretionary changes between general lanes need this speed gain...
const SPEED_GAIN: f64 = 2.0;
/// ...and this much time since the vehicle's previous lane change.
const LANE_CHANGE_COOLDOWN: f64 = 10.0;
/// A leader farther than this does not constrain the anticipated speed.
const LOOKAHEAD: f64 = 60.0;
/// Idle term of the energy proxy, per second halted.
pub const IDLE_POWER: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant breach at t={time:.2}s: {detail}\n{dump}")]
    InvariantBreach {
        time: f64,
        detail: String,
        dump: String,
    },
    #[error("trajectory output: {0}")]
    Io(#[from] io::Error),
}

/// Lane-usage controller invoked once per tick before lane changes.
pub trait Controller {
    fn tick(&mut self, world: &World, scenario: &Scenario) -> Vec<Advisory>;
}

/// Leaves every vehicle to its own devices.
#[derive(Debug, Default)]
pub struct NoControl;

impl Controller for NoControl {
    fn tick(&mut self, _: &World, _: &Scenario) -> Vec<Advisory> {
        Vec::new()
    }
}

/// One vehicle on the road.
#[derive(Debug, Clone)]
pub struct SimVehicle {
    pub state: VehicleState,
    /// Arrival time at the entry (including any time queued outside).
    pub arrival: f64,
    pub stops: u32,
    pub energy: f64,
    halted: bool,
    /// Decided to cross on the current green.
    committed: bool,
    /// Time spent halted with room to move off.
    waiting_to_start: f64,
    last_lane_change: f64,
    /// Service time drawn at spawn, applied when the bus reaches the stop.
    dwell_draw: f64,
    dwell_started: bool,
    rng: ChaCha8Rng,
}

impl SimVehicle {
    fn dwelling(&self) -> bool {
        self.state.dwell_remaining > 0.0
    }
}

#[derive(Debug, Clone)]
struct Pending {
    id: u32,
    class: VehicleClass,
    movement: Movement,
    arrival: f64,
}

/// A vehicle that has crossed the stop bar.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle_id: VehicleId,
    pub class: VehicleClass,
    pub movement: Movement,
    pub entry_s: f64,
    pub exit_s: f64,
    pub delay_s: f64,
    pub stops: u32,
    pub energy: f64,
    /// Lane the vehicle crossed the stop bar in.
    pub exit_lane: usize,
}

pub const TRIP_HEADER: &str = "vehicle_id,class,movement,entry_s,exit_s,delay_s,stops";
pub const TRAJECTORY_HEADER: &str =
    "tick,time_s,vehicle_id,class,movement,lane,pos_m,speed_mps,advisory_kind";

impl Trip {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{}",
            self.vehicle_id,
            self.class,
            self.movement,
            self.entry_s,
            self.exit_s,
            self.delay_s,
            self.stops
        )
    }
}

pub fn trips_csv(trips: &[Trip]) -> String {
    let mut s = String::with_capacity(64 * (trips.len() + 1));
    s.push_str(TRIP_HEADER);
    s.push('\n');
    for t in trips {
        s.push_str(&t.csv_row());
        s.push('\n');
    }
    s
}

/// Counters kept across the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldStats {
    pub entered: u64,
    pub exited: u64,
    pub lane_changes: u64,
    /// Times the integrator had to pull a vehicle back to keep
    /// [`MIN_SPACING`].
    pub clamp_events: u64,
    /// Through vehicles crossing the stop bar during red.
    pub red_violations: u64,
    /// Smallest bumper-to-bumper spacing seen after any tick.
    pub min_spacing: f64,
    /// Metres driven on the bus lane by general traffic after warmup.
    pub bus_lane_general_m: f64,
}

/// Switches used by calibration and test harnesses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub spawn_buses: bool,
    /// Overrides the V/C-derived general arrival rate (veh/h).
    pub general_rate_vph: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            spawn_buses: true,
            general_rate_vph: None,
        }
    }
}

/// Lanes are indexed `0..lane_count_main` plus the right-turn pocket, each
/// kept ordered front-first.
pub struct World {
    pub clock: f64,
    pub tick: u64,
    lanes: Vec<Vec<SimVehicle>>,
    entry_queues: Vec<VecDeque<Pending>>,
    arrivals_rng: ChaCha8Rng,
    bus_rng: ChaCha8Rng,
    next_bus_at: f64,
    next_id: u32,
    general_rate: f64,
    spawn_buses: bool,
    seed: u64,
    detectors: Vec<Option<DetectorStamp>>,
    advisories: BTreeMap<VehicleId, Advisory>,
    trips: Vec<Trip>,
    pub stats: WorldStats,
    trajectory: Option<Box<dyn Write>>,
}

/// SplitMix64 finaliser; decorrelates stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(key)))
}

const ARRIVAL_STREAM: u64 = 1 << 40;
const BUS_STREAM: u64 = 2 << 40;

impl World {
    pub fn new(scenario: &Scenario) -> Self {
        Self::with_options(scenario, SimOptions::default())
    }

    pub fn with_options(scenario: &Scenario, options: SimOptions) -> Self {
        let seed = scenario.demand.seed;
        let lanes = scenario.road.lane_count_main + 1;
        let mut bus_rng = stream(seed, BUS_STREAM);
        let first_bus = bus_gap(&mut bus_rng, scenario) * bus_rng.random::<f64>();
        let rate_vph = options.general_rate_vph.unwrap_or_else(|| {
            scenario.demand.vc_ratio * scenario.demand.capacity_vph.unwrap_or(DEFAULT_CAPACITY_VPH)
        });
        Self {
            clock: 0.0,
            tick: 0,
            lanes: vec![Vec::new(); lanes],
            entry_queues: vec![VecDeque::new(); lanes],
            arrivals_rng: stream(seed, ARRIVAL_STREAM),
            bus_rng,
            next_bus_at: first_bus,
            next_id: 1,
            general_rate: rate_vph / 3600.0,
            spawn_buses: options.spawn_buses,
            seed,
            detectors: vec![None; lanes],
            advisories: BTreeMap::new(),
            trips: Vec::new(),
            stats: WorldStats {
                min_spacing: f64::INFINITY,
                ..WorldStats::default()
            },
            trajectory: None,
        }
    }

    /// Streams one CSV row per vehicle per tick into `out`.
    pub fn record_trajectory(&mut self, mut out: Box<dyn Write>) -> io::Result<()> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        self.trajectory = Some(out);
        Ok(())
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane(&self, lane: usize) -> &[SimVehicle] {
        &self.lanes[lane]
    }

    /// Control-centre view of one lane, front-first with ranks set.
    pub fn lane_states(&self, lane: usize) -> Vec<VehicleState> {
        self.lanes[lane]
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut s = v.state.clone();
                s.order = i + 1;
                s
            })
            .collect()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &SimVehicle> {
        self.lanes.iter().flatten()
    }

    pub fn find(&self, id: VehicleId) -> Option<&SimVehicle> {
        self.vehicles().find(|v| v.state.id == id)
    }

    pub fn detector(&self, lane: usize) -> Option<DetectorStamp> {
        self.detectors[lane]
    }

    pub fn lane_context(&self, lane: usize, scenario: &Scenario) -> LaneContext {
        LaneContext {
            is_bus_lane: lane == scenario.road.bus_lane_index,
            detector: self.detectors[lane],
        }
    }

    pub fn advisory(&self, id: VehicleId) -> Option<&Advisory> {
        self.advisories.get(&id)
    }

    pub fn advisories(&self) -> impl Iterator<Item = &Advisory> {
        self.advisories.values()
    }

    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }

    pub fn into_trips(self) -> Vec<Trip> {
        self.trips
    }

    pub fn queued(&self) -> usize {
        self.entry_queues.iter().map(VecDeque::len).sum()
    }

    pub fn on_road(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    /// Places a vehicle directly on the road (test harnesses). The lane is
    /// kept sorted; overlapping placements are the caller's responsibility.
    pub fn insert_vehicle(&mut self, mut state: VehicleState, scenario: &Scenario) -> VehicleId {
        let id = self.next_id;
        self.next_id += 1;
        state.id = VehicleId(id);
        let lane = state.lane;
        let v = self.make_vehicle(state, self.clock, scenario);
        self.stats.entered += 1;
        insert_sorted(&mut self.lanes[lane], v);
        VehicleId(id)
    }

    fn make_vehicle(&self, state: VehicleState, arrival: f64, scenario: &Scenario) -> SimVehicle {
        let mut rng = stream(self.seed, u64::from(state.id.0));
        let dwell_draw = if state.class.is_bus() {
            let d = &scenario.demand;
            match Normal::new(d.dwell_mean, d.dwell_std) {
                Ok(n) => n.sample(&mut rng).max(0.0),
                Err(_) => d.dwell_mean,
            }
        } else {
            0.0
        };
        SimVehicle {
            state,
            arrival,
            stops: 0,
            energy: 0.0,
            halted: false,
            committed: false,
            waiting_to_start: 0.0,
            last_lane_change: f64::NEG_INFINITY,
            dwell_draw,
            dwell_started: false,
            rng,
        }
    }

    /// Advances the world by one tick.
    pub fn step(
        &mut self,
        scenario: &Scenario,
        controller: &mut dyn Controller,
    ) -> Result<(), SimError> {
        let now = self.clock;
        let dt = scenario.demand.sim_dt;

        for adv in controller.tick(self, scenario) {
            self.advisories.insert(adv.vehicle_id, adv);
        }
        self.advisories.retain(|_, a| a.expires_at >= now);

        self.lane_changes(scenario, now);
        let speeds = self.new_speeds(scenario, now, dt);
        self.integrate(scenario, &speeds, now, dt)?;
        self.dwell(scenario, dt);
        self.exits(scenario, now, dt);
        self.arrivals(scenario, now, dt);

        self.tick += 1;
        self.clock = self.tick as f64 * dt;
        self.log_trajectory()?;
        Ok(())
    }

    /// Runs until the scenario's duration has elapsed.
    pub fn run(
        &mut self,
        scenario: &Scenario,
        controller: &mut dyn Controller,
    ) -> Result<(), SimError> {
        let steps = (scenario.demand.sim_duration / scenario.demand.sim_dt).round() as u64;
        while self.tick < steps {
            self.step(scenario, controller)?;
        }
        if let Some(out) = self.trajectory.as_mut() {
            out.flush()?;
        }
        Ok(())
    }

    fn log_trajectory(&mut self) -> io::Result<()> {
        let Some(out) = self.trajectory.as_mut() else {
            return Ok(());
        };
        let mut buf = String::new();
        for (lane, vs) in self.lanes.iter().enumerate() {
            for v in vs {
                let kind = self
                    .advisories
                    .get(&v.state.id)
                    .map_or("", |a| a.kind.as_str());
                let _ = writeln!(
                    buf,
                    "{},{:.1},{},{},{},{},{:.3},{:.3},{}",
                    self.tick,
                    self.clock,
                    v.state.id,
                    v.state.class,
                    v.state.movement,
                    lane,
                    v.state.pos,
                    v.state.speed,
                    kind
                );
            }
        }
        out.write_all(buf.as_bytes())
    }

    // ---- lane changes ----------------------------------------------------

    fn lane_changes(&mut self, scenario: &Scenario, now: f64) {
        let road = &scenario.road;
        let bus_lane = road.bus_lane_index;
        let pocket = road.pocket_lane();

        // Intents from the pre-change snapshot, front-most first.
        let mut intents: Vec<(f64, VehicleId, usize, bool)> = Vec::new();
        for (lane, vs) in self.lanes.iter().enumerate() {
            for v in vs {
                let s = &v.state;
                if s.class.is_bus() {
                    continue;
                }
                if let Some(adv) = self.advisories.get(&s.id) {
                    if adv.target_lane != lane {
                        let urgent =
                            matches!(adv.kind, AdvisoryKind::ClearanceExit { urgent: true });
                        let step = if adv.target_lane > lane {
                            lane + 1
                        } else {
                            lane - 1
                        };
                        // The pocket is entered by the built-in diverge only.
                        if step != pocket {
                            intents.push((s.pos, s.id, step, urgent));
                        }
                        continue;
                    }
                }
                if s.is_right_turn() && lane == bus_lane && s.rear() >= road.pocket_start() {
                    intents.push((s.pos, s.id, pocket, false));
                } else if !s.is_right_turn()
                    && lane != bus_lane
                    && lane < road.lane_count_main
                    && now - v.last_lane_change >= LANE_CHANGE_COOLDOWN
                {
                    for other in road.general_lanes() {
                        if other.abs_diff(lane) == 1
                            && anticipated_speed(&self.lanes[other], s.pos, road.speed_limit)
                                > anticipated_speed(&self.lanes[lane], s.pos, road.speed_limit)
                                    + SPEED_GAIN
                        {
                            intents.push((s.pos, s.id, other, false));
                            break;
                        }
                    }
                }
            }
        }
        intents.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        for (_, id, target, urgent) in intents {
            let Some((lane, idx)) = self.locate(id) else {
                continue;
            };
            if !self.lane_change_ok(lane, idx, target, urgent, scenario) {
                continue;
            }
            let mut v = self.lanes[lane].remove(idx);
            v.state.lane = target;
            v.last_lane_change = now;
            if self
                .advisories
                .get(&id)
                .is_some_and(|a| a.target_lane == target)
            {
                self.advisories.remove(&id);
            }
            insert_sorted(&mut self.lanes[target], v);
            self.stats.lane_changes += 1;
        }
    }

    fn locate(&self, id: VehicleId) -> Option<(usize, usize)> {
        self.lanes
            .iter()
            .enumerate()
            .find_map(|(l, vs)| vs.iter().position(|v| v.state.id == id).map(|i| (l, i)))
    }

    fn lane_change_ok(
        &self,
        lane: usize,
        idx: usize,
        target: usize,
        urgent: bool,
        scenario: &Scenario,
    ) -> bool {
        let road = &scenario.road;
        if target >= self.lanes.len() || target.abs_diff(lane) != 1 {
            return false;
        }
        let v = &self.lanes[lane][idx].state;
        if target == road.pocket_lane()
            && (lane != road.bus_lane_index || v.rear() < road.pocket_start())
        {
            return false;
        }
        attempt_lane_change(
            v,
            &self.lanes[target],
            road.no_change_boundary(),
            urgent,
            &scenario.vehicles,
        )
    }

    // ---- longitudinal ----------------------------------------------------

    fn new_speeds(&mut self, scenario: &Scenario, now: f64, dt: f64) -> Vec<Vec<f64>> {
        let road = &scenario.road;
        let pop = &scenario.vehicles;
        let signal = &scenario.signal;
        let green = signal.is_green(now);
        let ttr = if green { signal.time_to_red(now) } else { 0.0 };
        let stop_line = road.stop_bar() - STOP_LINE_SETBACK;
        let v_d = road.speed_limit;

        let mut out = Vec::with_capacity(self.lanes.len());
        for lane in self.lanes.iter_mut() {
            let mut speeds = Vec::with_capacity(lane.len());
            let mut leader_committed = true;
            for i in 0..lane.len() {
                let (ahead, rest) = lane.split_at_mut(i);
                let v = &mut rest[0];
                let s = &v.state;
                let dy = Dynamics::of(s.class, pop, v_d);
                if v.dwelling() {
                    speeds.push(0.0);
                    leader_committed = false;
                    continue;
                }

                // Stop-line decision for signal-controlled movements.
                let controlled = !s.is_right_turn();
                if controlled {
                    let room = road.stop_bar() - s.pos;
                    let can_stop =
                        s.speed * s.speed / (2.0 * pop.emergency_decel) <= room - STOP_LINE_SETBACK;
                    if green {
                        let t_bar = kinematic_travel_time(room, s.speed, v_d, dy.accel);
                        if !v.committed && leader_committed && t_bar <= ttr {
                            v.committed = true;
                        } else if v.committed && (!leader_committed || t_bar > ttr) && can_stop {
                            v.committed = false;
                        }
                    } else if v.committed && can_stop {
                        v.committed = false;
                    }
                    leader_committed = v.committed;
                }

                let leader = ahead.last().map(|l| Leader {
                    gap: l.state.rear() - s.pos,
                    speed: l.state.speed,
                    accel: speeds
                        .last()
                        .map_or(0.0, |&next: &f64| (next - l.state.speed) / dt),
                });
                let model = FollowModel::select(s.class, ahead.last().map(|l| l.state.class));
                let dawdle = if model == FollowModel::Krauss && !v.committed {
                    v.rng.random::<f64>()
                } else {
                    0.0
                };
                let mut next = follower_speed(model, s.speed, leader, dt, &dy, pop, dawdle);

                if controlled && !v.committed && (!green || ttr <= AMBER) {
                    next = next.min(stopping_speed(stop_line - s.pos, dt, dy.decel));
                }
                if s.class.is_human() && s.speed < HALT_SPEED {
                    if next < HALT_SPEED {
                        v.waiting_to_start = 0.0;
                    } else if v.waiting_to_start + 1e-9 < pop.start_reaction {
                        v.waiting_to_start += dt;
                        next = s.speed;
                    }
                } else {
                    v.waiting_to_start = 0.0;
                }
                if s.class.is_bus() && !s.stop_served {
                    if let Some(stop) = road.bus_stop_pos {
                        if s.pos <= stop {
                            next = next.min(stopping_speed(stop - s.pos, dt, dy.decel));
                        }
                    }
                }
                speeds.push(next);
            }
            out.push(speeds);
        }
        out
    }

    fn integrate(
        &mut self,
        scenario: &Scenario,
        speeds: &[Vec<f64>],
        now: f64,
        dt: f64,
    ) -> Result<(), SimError> {
        let bus_lane = scenario.road.bus_lane_index;
        let after_warmup = now >= scenario.demand.warmup;
        let mut breach = None;
        for (lane, vs) in self.lanes.iter_mut().enumerate() {
            let mut leader_rear: Option<f64> = None;
            for (v, &target) in vs.iter_mut().zip(&speeds[lane]) {
                let old_pos = v.state.pos;
                let old_speed = v.state.speed;
                let mut pos = old_pos + target * dt;
                let mut speed = target;
                if let Some(rear) = leader_rear {
                    let limit = rear - MIN_SPACING;
                    if pos > limit {
                        self.stats.clamp_events += 1;
                        pos = limit.max(old_pos);
                        speed = (pos - old_pos) / dt;
                    }
                    let spacing = rear - pos;
                    self.stats.min_spacing = self.stats.min_spacing.min(spacing);
                    if spacing < MIN_SPACING - 1e-9 && breach.is_none() {
                        breach = Some(format!(
                            "vehicle {} is {spacing:.3} m behind its leader on lane {lane}",
                            v.state.id
                        ));
                    }
                }
                let accel = (speed - old_speed) / dt;
                v.energy += (speed * accel).max(0.0) * dt;
                if speed < HALT_SPEED {
                    v.energy += IDLE_POWER * dt;
                    if !v.halted {
                        v.stops += 1;
                        v.halted = true;
                    }
                } else {
                    v.halted = false;
                }
                if after_warmup && lane == bus_lane && !v.state.class.is_bus() {
                    self.stats.bus_lane_general_m += pos - old_pos;
                }
                v.state.pos = pos;
                v.state.speed = speed;
                leader_rear = Some(v.state.rear());
            }
        }
        match breach {
            Some(detail) => Err(SimError::InvariantBreach {
                time: now,
                detail,
                dump: self.dump(),
            }),
            None => Ok(()),
        }
    }

    fn dwell(&mut self, scenario: &Scenario, dt: f64) {
        let Some(stop) = scenario.road.bus_stop_pos else {
            return;
        };
        for v in &mut self.lanes[scenario.road.bus_lane_index] {
            if !v.state.class.is_bus() || v.state.stop_served {
                continue;
            }
            if v.dwelling() {
                v.state.dwell_remaining -= dt;
                if v.state.dwell_remaining <= 1e-9 {
                    v.state.dwell_remaining = 0.0;
                    v.state.stop_served = true;
                }
            } else if !v.dwell_started && v.state.pos >= stop - 0.3 && v.state.speed < HALT_SPEED {
                v.dwell_started = true;
                v.state.speed = 0.0;
                v.state.dwell_remaining = v.dwell_draw;
                if v.dwell_draw <= 0.0 {
                    v.state.stop_served = true;
                }
            }
        }
    }

    fn exits(&mut self, scenario: &Scenario, now: f64, dt: f64) {
        let bar = scenario.road.stop_bar();
        for lane in 0..self.lanes.len() {
            while let Some(front) = self.lanes[lane].first() {
                if front.state.pos < bar {
                    break;
                }
                let v = self.lanes[lane].remove(0);
                let prev = v.state.pos - v.state.speed * dt;
                let frac = if v.state.speed > 0.0 {
                    ((bar - prev) / (v.state.speed * dt)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let exit_s = now + frac * dt;
                if !v.state.is_right_turn() && !scenario.signal.is_green(exit_s) {
                    self.stats.red_violations += 1;
                }
                self.detectors[lane] = Some(DetectorStamp {
                    time: exit_s,
                    class: v.state.class,
                });
                self.advisories.remove(&v.state.id);
                let mut trip = Trip {
                    vehicle_id: v.state.id,
                    class: v.state.class,
                    movement: v.state.movement,
                    entry_s: v.arrival,
                    exit_s,
                    delay_s: 0.0,
                    stops: v.stops,
                    energy: v.energy,
                    exit_lane: lane,
                };
                trip.delay_s = compute_delay(&trip, scenario);
                self.trips.push(trip);
                self.stats.exited += 1;
            }
        }
    }

    // ---- demand ----------------------------------------------------------

    fn arrivals(&mut self, scenario: &Scenario, now: f64, dt: f64) {
        let d = &scenario.demand;
        let road = &scenario.road;
        let t = now + dt;

        // Fixed number of draws per tick keeps the stream aligned across runs.
        let u_arrive: f64 = self.arrivals_rng.random();
        let u_conn: f64 = self.arrivals_rng.random();
        let u_split: f64 = self.arrivals_rng.random();
        let u_turn: f64 = self.arrivals_rng.random();
        if u_arrive < self.general_rate * dt {
            let class = if u_conn < d.cpr {
                if u_split < d.cav_chv_split {
                    VehicleClass::Cav
                } else {
                    VehicleClass::Chv
                }
            } else {
                VehicleClass::Hdv
            };
            let movement = if u_turn < d.right_turn_ratio {
                Movement::RightTurn
            } else {
                Movement::Through
            };
            let lane = match movement {
                Movement::RightTurn => road.adjacent_general_lane(),
                Movement::Through => self.pick_entry_lane(road.general_lanes()),
            };
            let id = self.next_id;
            self.next_id += 1;
            self.entry_queues[lane].push_back(Pending {
                id,
                class,
                movement,
                arrival: t,
            });
        }

        if self.spawn_buses && t >= self.next_bus_at {
            let id = self.next_id;
            self.next_id += 1;
            self.entry_queues[road.bus_lane_index].push_back(Pending {
                id,
                class: VehicleClass::Bus,
                movement: Movement::Through,
                arrival: t,
            });
            self.next_bus_at += bus_gap(&mut self.bus_rng, scenario);
        }

        for lane in 0..road.lane_count_main {
            self.admit(lane, scenario);
        }
    }

    fn pick_entry_lane(&self, lanes: impl Iterator<Item = usize>) -> usize {
        lanes
            .min_by(|&a, &b| {
                let room = |l: usize| {
                    self.lanes[l]
                        .last()
                        .map_or(f64::INFINITY, |v| v.state.rear())
                };
                self.entry_queues[a]
                    .len()
                    .cmp(&self.entry_queues[b].len())
                    .then(room(b).total_cmp(&room(a)))
                    .then(a.cmp(&b))
            })
            .expect("at least one general lane")
    }

    fn admit(&mut self, lane: usize, scenario: &Scenario) {
        let Some(p) = self.entry_queues[lane].front() else {
            return;
        };
        let pop = &scenario.vehicles;
        let v_d = scenario.road.speed_limit;
        let speed = match self.lanes[lane].last() {
            None => v_d,
            Some(last) => {
                let gap = last.state.rear();
                if gap < pop.min_gap + 1.0 {
                    return;
                }
                let dy = Dynamics::of(p.class, pop, v_d);
                let headway = crate::estimator::desired_headway(p.class, last.state.class, pop);
                let cap = car_following::safe_speed_cap(
                    Leader {
                        gap,
                        speed: last.state.speed,
                        accel: 0.0,
                    },
                    scenario.demand.sim_dt,
                    &dy,
                );
                v_d.min(((gap - pop.min_gap) / headway).max(0.0)).min(cap)
            }
        };
        let p = self.entry_queues[lane].pop_front().expect("checked");
        let mut state = VehicleState::new(p.id, p.class, p.movement, 0.0, speed, pop);
        state.lane = lane;
        let v = self.make_vehicle(state, p.arrival, scenario);
        self.lanes[lane].push(v);
        self.stats.entered += 1;
    }

    /// Human-readable snapshot for triage.
    pub fn dump(&self) -> String {
        let mut s = format!("t={:.2} tick={}\n", self.clock, self.tick);
        for (lane, vs) in self.lanes.iter().enumerate() {
            let _ = writeln!(s, "lane {lane}:");
            for v in vs {
                let st = &v.state;
                let _ = writeln!(
                    s,
                    "  {} {} {} pos={:.3} v={:.3} len={} dwell={:.1}",
                    st.id, st.class, st.movement, st.pos, st.speed, st.length, st.dwell_remaining
                );
            }
        }
        s
    }
}

/// Capacity used when a scenario carries no calibrated value.
pub const DEFAULT_CAPACITY_VPH: f64 = 1400.0;

fn bus_gap(rng: &mut ChaCha8Rng, scenario: &Scenario) -> f64 {
    let d = &scenario.demand;
    let draw = match Normal::new(d.bus_headway_mean, d.bus_headway_std) {
        Ok(n) => n.sample(rng),
        Err(_) => d.bus_headway_mean,
    };
    draw.max(5.0)
}

fn insert_sorted(lane: &mut Vec<SimVehicle>, v: SimVehicle) {
    let at = lane
        .iter()
        .position(|o| {
            o.state.pos < v.state.pos || (o.state.pos == v.state.pos && o.state.id > v.state.id)
        })
        .unwrap_or(lane.len());
    lane.insert(at, v);
}

/// Speed a vehicle at `pos` could expect in `lane`: the limit, or the speed
/// of a leader that is close enough to matter.
pub fn anticipated_speed(lane: &[SimVehicle], pos: f64, v_d: f64) -> f64 {
    lane.iter()
        .rev()
        .find(|o| o.state.pos > pos)
        .map_or(v_d, |l| {
            if l.state.rear() - pos > LOOKAHEAD {
                v_d
            } else {
                l.state.speed
            }
        })
}

/// Gap acceptance for moving `v` into the lane `target` (ordered
/// front-first). Both the front and rear gaps must cover the safe gap plus
/// the braking distance implied by the speed difference; urgent changes
/// halve the safe gap and brake at the emergency rate.
pub fn attempt_lane_change(
    v: &VehicleState,
    target: &[SimVehicle],
    no_change_boundary: f64,
    urgent: bool,
    pop: &crate::scenario::VehiclePopulation,
) -> bool {
    if v.pos > no_change_boundary {
        return false;
    }
    let (d_safe, a_lat) = if urgent {
        (0.5 * pop.lateral_safe_gap, pop.emergency_decel)
    } else {
        (pop.lateral_safe_gap, pop.lateral_comfort_decel)
    };
    let need = |other: f64| d_safe + (other * other - v.speed * v.speed).abs() / (2.0 * a_lat);
    let leader = target.iter().rev().find(|o| o.state.pos >= v.pos);
    let follower = target.iter().find(|o| o.state.pos < v.pos);
    if let Some(l) = leader {
        if l.state.rear() - v.pos < need(l.state.speed) {
            return false;
        }
    }
    if let Some(f) = follower {
        if v.rear() - f.state.pos < need(f.state.speed) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> Scenario {
        let mut s = Scenario::baseline();
        s.road.bus_stop_pos = None;
        s.demand.vc_ratio = 0.0;
        s
    }

    fn no_traffic(s: &Scenario) -> World {
        World::with_options(
            s,
            SimOptions {
                spawn_buses: false,
                general_rate_vph: Some(0.0),
            },
        )
    }

    fn state(class: VehicleClass, lane: usize, pos: f64, speed: f64, s: &Scenario) -> VehicleState {
        let mut v = VehicleState::new(0, class, Movement::Through, pos, speed, &s.vehicles);
        v.lane = lane;
        v
    }

    #[test]
    fn empty_world_only_advances_clock() {
        let s = quiet();
        let mut w = no_traffic(&s);
        w.step(&s, &mut NoControl).unwrap();
        assert_eq!(w.clock, 0.5);
        assert_eq!(w.on_road(), 0);
        assert!(w.trips().is_empty());
    }

    #[test]
    fn target_lane_gap_rules() {
        let s = quiet();
        let mut w = no_traffic(&s);
        let me = state(VehicleClass::Cav, 1, 300.0, 10.0, &s);
        assert!(attempt_lane_change(
            &me,
            w.lane(2),
            670.0,
            false,
            &s.vehicles
        ));

        w.insert_vehicle(state(VehicleClass::Cav, 2, 292.0, 10.0, &s), &s);
        // my rear is at 295, the follower's front at 292: 3 m < 6 m
        assert!(!attempt_lane_change(
            &me,
            w.lane(2),
            670.0,
            false,
            &s.vehicles
        ));

        let late = state(VehicleClass::Cav, 1, 680.0, 10.0, &s);
        assert!(!attempt_lane_change(&late, &[], 670.0, false, &s.vehicles));
    }

    #[test]
    fn single_bus_crosses_at_free_flow_time_on_green() {
        let mut s = quiet();
        s.signal = crate::scenario::SignalPlan::new(1.0, 99.0);
        let mut w = no_traffic(&s);
        w.clock = 0.0;
        w.insert_vehicle(state(VehicleClass::Bus, 2, 0.0, 13.89, &s), &s);
        for _ in 0..200 {
            w.step(&s, &mut NoControl).unwrap();
        }
        let trip = &w.trips()[0];
        let expected = 700.0 / 13.89;
        assert!(
            (trip.exit_s - expected).abs() <= 0.5,
            "{} vs {expected}",
            trip.exit_s
        );
    }

    #[test]
    fn red_light_is_respected() {
        let s = quiet();
        let mut w = no_traffic(&s);
        // arrives around t = 21, red until 60
        w.insert_vehicle(state(VehicleClass::Hdv, 0, 400.0, 13.89, &s), &s);
        for _ in 0..200 {
            w.step(&s, &mut NoControl).unwrap();
        }
        let trip = &w.trips()[0];
        assert!(trip.exit_s >= 60.0, "{}", trip.exit_s);
        assert_eq!(w.stats.red_violations, 0);
        assert_eq!(trip.stops, 1);
    }

    #[test]
    fn right_turn_ignores_red() {
        let s = quiet();
        let mut w = no_traffic(&s);
        let mut v = state(VehicleClass::Hdv, 1, 400.0, 13.89, &s);
        v.movement = Movement::RightTurn;
        w.insert_vehicle(v, &s);
        for _ in 0..100 {
            w.step(&s, &mut NoControl).unwrap();
        }
        assert!(w.trips()[0].exit_s < 30.0);
    }

    #[test]
    fn bus_dwells_at_stop() {
        let mut s = quiet();
        s.road.bus_stop_pos = Some(400.0);
        s.signal = crate::scenario::SignalPlan::new(1.0, 99.0);
        let mut w = no_traffic(&s);
        w.insert_vehicle(state(VehicleClass::Bus, 2, 300.0, 10.0, &s), &s);
        let mut saw_dwell = false;
        for _ in 0..300 {
            w.step(&s, &mut NoControl).unwrap();
            if w.lane(2)
                .first()
                .is_some_and(|b| b.state.dwell_remaining > 0.0)
            {
                saw_dwell = true;
                assert!((w.lane(2)[0].state.pos - 400.0).abs() < 0.5);
            }
        }
        assert!(saw_dwell);
        assert_eq!(w.trips().len(), 1);
    }

    #[test]
    fn arrivals_match_rate() {
        let mut s = quiet();
        s.demand.sim_duration = 3600.0;
        let mut w = World::with_options(
            &s,
            SimOptions {
                spawn_buses: false,
                general_rate_vph: Some(720.0),
            },
        );
        w.run(&s, &mut NoControl).unwrap();
        let arrived = w.stats.entered as f64 + w.queued() as f64;
        assert!((arrived - 720.0).abs() < 0.05 * 720.0, "{arrived}");
        assert_eq!(w.stats.entered, w.stats.exited + w.on_road() as u64);
    }

    #[test]
    fn full_cpr_spawns_no_hdv() {
        let mut s = quiet();
        s.demand.cpr = 1.0;
        s.demand.right_turn_ratio = 0.0;
        s.demand.sim_duration = 600.0;
        let mut w = World::with_options(
            &s,
            SimOptions {
                spawn_buses: false,
                general_rate_vph: Some(1000.0),
            },
        );
        w.run(&s, &mut NoControl).unwrap();
        assert!(w.trips().iter().all(|t| t.class != VehicleClass::Hdv));
        assert!(w.trips().iter().all(|t| t.movement == Movement::Through));
    }

    #[test]
    fn same_seed_same_trips() {
        let mut s = Scenario::baseline();
        s.demand.capacity_vph = Some(1400.0);
        s.demand.sim_duration = 600.0;
        let run = || {
            let mut w = World::new(&s);
            w.run(&s, &mut NoControl).unwrap();
            trips_csv(w.trips())
        };
        assert_eq!(run(), run());
    }
}
