//! Immutable description of one experiment: road geometry, signal plan,
//! vehicle population parameters and demand factors.
//!
//! Scenario files are UTF-8 JSON objects with the top-level keys `road`,
//! `signal`, `vehicles` and `demand`. Units are SI throughout (m, s, m/s,
//! m/s²). Unknown keys are rejected; omitted optional keys take the defaults
//! listed on each `default_*` function below.
//!
//! Positions are measured in meters from the entry of the control zone, so
//! the stop bar sits at `road.control_zone_len`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadConfig {
    /// Length of the controlled approach; the stop bar is at this position.
    #[serde(default = "default_control_zone_len")]
    pub control_zone_len: f64,
    /// Lane changes are prohibited within this distance of the stop bar.
    #[serde(default = "default_no_change_zone_len")]
    pub no_change_zone_len: f64,
    /// Bus stop position, measured from the entry. Absent means no stop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus_stop_pos: Option<f64>,
    /// A right-turn pocket lane exists over the last this-many meters.
    #[serde(default = "default_right_turn_pocket_len")]
    pub right_turn_pocket_len: f64,
    #[serde(default = "default_lane_count_main")]
    pub lane_count_main: usize,
    /// Zero-based index of the bus lane; must be the rightmost main lane.
    #[serde(default = "default_bus_lane_index")]
    pub bus_lane_index: usize,
    /// Right-turn vehicles closer than this to the stop bar get a fallback
    /// advisory.
    #[serde(default = "default_right_turn_fallback_dist")]
    pub right_turn_fallback_dist: f64,
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
}

fn default_control_zone_len() -> f64 {
    700.0
}
fn default_no_change_zone_len() -> f64 {
    30.0
}
fn default_right_turn_pocket_len() -> f64 {
    100.0
}
fn default_lane_count_main() -> usize {
    3
}
fn default_bus_lane_index() -> usize {
    2
}
fn default_right_turn_fallback_dist() -> f64 {
    150.0
}
fn default_speed_limit() -> f64 {
    13.89
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            control_zone_len: default_control_zone_len(),
            no_change_zone_len: default_no_change_zone_len(),
            bus_stop_pos: None,
            right_turn_pocket_len: default_right_turn_pocket_len(),
            lane_count_main: default_lane_count_main(),
            bus_lane_index: default_bus_lane_index(),
            right_turn_fallback_dist: default_right_turn_fallback_dist(),
            speed_limit: default_speed_limit(),
        }
    }
}

impl RoadConfig {
    pub fn stop_bar(&self) -> f64 {
        self.control_zone_len
    }

    /// Last position at which a lane change may start.
    pub fn no_change_boundary(&self) -> f64 {
        self.control_zone_len - self.no_change_zone_len
    }

    pub fn pocket_start(&self) -> f64 {
        self.control_zone_len - self.right_turn_pocket_len
    }

    /// Index of the right-turn pocket lane (to the right of the bus lane).
    pub fn pocket_lane(&self) -> usize {
        self.lane_count_main
    }

    /// The general lane sharing a boundary with the bus lane.
    pub fn adjacent_general_lane(&self) -> usize {
        self.bus_lane_index - 1
    }

    pub fn general_lanes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.lane_count_main).filter(move |&l| l != self.bus_lane_index)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let lc = self.control_zone_len;
        if !(lc.is_finite() && lc > 0.0) {
            return Err(invalid("road.control_zone_len", "must be positive"));
        }
        if !(self.no_change_zone_len > 0.0 && self.no_change_zone_len < lc) {
            return Err(invalid(
                "road.no_change_zone_len",
                format!("must satisfy 0 < l_n < l_c ({lc})"),
            ));
        }
        if let Some(stop) = self.bus_stop_pos {
            let upper = lc - self.no_change_zone_len;
            if !(stop > 0.0 && stop < upper) {
                return Err(invalid(
                    "road.bus_stop_pos",
                    format!("must lie in (0, {upper})"),
                ));
            }
        }
        if !(self.right_turn_pocket_len >= 0.0 && self.right_turn_pocket_len < lc) {
            return Err(invalid(
                "road.right_turn_pocket_len",
                "must be non-negative and shorter than the control zone",
            ));
        }
        if self.lane_count_main < 2 {
            return Err(invalid(
                "road.lane_count_main",
                "need at least one general lane beside the bus lane",
            ));
        }
        if self.bus_lane_index + 1 != self.lane_count_main {
            return Err(invalid(
                "road.bus_lane_index",
                "the bus lane must be the rightmost main lane",
            ));
        }
        if !(self.right_turn_fallback_dist > 0.0 && self.right_turn_fallback_dist < lc) {
            return Err(invalid(
                "road.right_turn_fallback_dist",
                "must lie in (0, l_c)",
            ));
        }
        if !(self.speed_limit.is_finite() && self.speed_limit > 0.0) {
            return Err(invalid("road.speed_limit", "must be positive"));
        }
        Ok(())
    }
}

/// Fixed-time plan. Every cycle `[k·cycle, (k+1)·cycle)` starts with red for
/// `red` seconds, followed by green for the rest of the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPlan {
    #[serde(default = "default_cycle")]
    pub cycle: f64,
    #[serde(default = "default_red")]
    pub red: f64,
    #[serde(default = "default_green")]
    pub green: f64,
}

fn default_cycle() -> f64 {
    100.0
}
fn default_red() -> f64 {
    60.0
}
fn default_green() -> f64 {
    40.0
}

impl Default for SignalPlan {
    fn default() -> Self {
        Self {
            cycle: default_cycle(),
            red: default_red(),
            green: default_green(),
        }
    }
}

impl SignalPlan {
    pub fn new(red: f64, green: f64) -> Self {
        Self {
            cycle: red + green,
            red,
            green,
        }
    }

    /// Start of the cycle containing `t` (which begins with red).
    pub fn cycle_start(&self, t: f64) -> f64 {
        (t / self.cycle).floor() * self.cycle
    }

    /// Start of the green interval of the cycle containing `t`.
    pub fn green_start(&self, t: f64) -> f64 {
        self.cycle_start(t) + self.red
    }

    pub fn is_green(&self, t: f64) -> bool {
        t - self.cycle_start(t) >= self.red
    }

    /// Time until the next red onset, measured from `t`.
    pub fn time_to_red(&self, t: f64) -> f64 {
        self.cycle_start(t) + self.cycle - t
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.red > 0.0 && self.red.is_finite()) {
            return Err(invalid("signal.red", "must be positive"));
        }
        if !(self.green > 0.0 && self.green.is_finite()) {
            return Err(invalid("signal.green", "must be positive"));
        }
        if (self.cycle - (self.red + self.green)).abs() > 1e-9 {
            return Err(invalid(
                "signal.cycle",
                format!(
                    "cycle ({}) must equal red + green ({} + {})",
                    self.cycle, self.red, self.green
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehiclePopulation {
    #[serde(default = "default_car_len")]
    pub car_len: f64,
    #[serde(default = "default_bus_len")]
    pub bus_len: f64,
    #[serde(default = "default_car_accel")]
    pub car_accel: f64,
    #[serde(default = "default_car_decel")]
    pub car_decel: f64,
    #[serde(default = "default_bus_accel")]
    pub bus_accel: f64,
    #[serde(default = "default_bus_decel")]
    pub bus_decel: f64,
    #[serde(default = "default_emergency_decel")]
    pub emergency_decel: f64,
    /// Desired time headway of a CAV following a CAV or bus.
    #[serde(default = "default_tau_c")]
    pub tau_c: f64,
    /// Desired time headway of a CAV following a human-driven vehicle.
    #[serde(default = "default_tau_a")]
    pub tau_a: f64,
    /// Desired time headway of a human-driven vehicle.
    #[serde(default = "default_tau_h")]
    pub tau_h: f64,
    #[serde(default = "default_eps_c")]
    pub eps_c: f64,
    #[serde(default = "default_eps_a")]
    pub eps_a: f64,
    #[serde(default = "default_eps_h")]
    pub eps_h: f64,
    /// Start-up lost time at the beginning of green (flat, not queue-rank dependent).
    #[serde(default = "default_startup_lost_time")]
    pub startup_lost_time: f64,
    #[serde(default = "default_lateral_comfort_decel")]
    pub lateral_comfort_decel: f64,
    #[serde(default = "default_lateral_safe_gap")]
    pub lateral_safe_gap: f64,
    /// Spatial margin ahead of an inserted vehicle inside a bus-lane gap.
    #[serde(default = "default_asg_margin")]
    pub asg_margin_front: f64,
    /// Spatial margin behind an inserted vehicle inside a bus-lane gap.
    #[serde(default = "default_asg_margin")]
    pub asg_margin_rear: f64,
    /// Bumper-to-bumper standstill distance used by every car-following model.
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    /// Krauss driver imperfection, applied to human drivers only.
    #[serde(default = "default_krauss_sigma")]
    pub krauss_sigma: f64,
    /// Time a halted human driver takes to move off once the way ahead
    /// clears.
    #[serde(default = "default_start_reaction")]
    pub start_reaction: f64,
}

fn default_car_len() -> f64 {
    5.0
}
fn default_bus_len() -> f64 {
    12.0
}
fn default_car_accel() -> f64 {
    3.0
}
fn default_car_decel() -> f64 {
    4.0
}
fn default_bus_accel() -> f64 {
    2.0
}
fn default_bus_decel() -> f64 {
    2.0
}
fn default_emergency_decel() -> f64 {
    9.0
}
fn default_tau_c() -> f64 {
    0.6
}
fn default_tau_a() -> f64 {
    1.1
}
fn default_tau_h() -> f64 {
    1.5
}
fn default_eps_c() -> f64 {
    0.1
}
fn default_eps_a() -> f64 {
    0.2
}
fn default_eps_h() -> f64 {
    0.5
}
fn default_startup_lost_time() -> f64 {
    2.0
}
fn default_lateral_comfort_decel() -> f64 {
    4.0
}
fn default_lateral_safe_gap() -> f64 {
    6.0
}
fn default_asg_margin() -> f64 {
    6.0
}
fn default_min_gap() -> f64 {
    2.5
}
fn default_krauss_sigma() -> f64 {
    0.5
}
fn default_start_reaction() -> f64 {
    1.0
}

impl Default for VehiclePopulation {
    fn default() -> Self {
        Self {
            car_len: default_car_len(),
            bus_len: default_bus_len(),
            car_accel: default_car_accel(),
            car_decel: default_car_decel(),
            bus_accel: default_bus_accel(),
            bus_decel: default_bus_decel(),
            emergency_decel: default_emergency_decel(),
            tau_c: default_tau_c(),
            tau_a: default_tau_a(),
            tau_h: default_tau_h(),
            eps_c: default_eps_c(),
            eps_a: default_eps_a(),
            eps_h: default_eps_h(),
            startup_lost_time: default_startup_lost_time(),
            lateral_comfort_decel: default_lateral_comfort_decel(),
            lateral_safe_gap: default_lateral_safe_gap(),
            asg_margin_front: default_asg_margin(),
            asg_margin_rear: default_asg_margin(),
            min_gap: default_min_gap(),
            krauss_sigma: default_krauss_sigma(),
            start_reaction: default_start_reaction(),
        }
    }
}

impl VehiclePopulation {
    fn validate(&self) -> Result<(), ScenarioError> {
        let positive: [(&'static str, f64); 19] = [
            ("vehicles.car_len", self.car_len),
            ("vehicles.bus_len", self.bus_len),
            ("vehicles.car_accel", self.car_accel),
            ("vehicles.car_decel", self.car_decel),
            ("vehicles.bus_accel", self.bus_accel),
            ("vehicles.bus_decel", self.bus_decel),
            ("vehicles.emergency_decel", self.emergency_decel),
            ("vehicles.tau_c", self.tau_c),
            ("vehicles.tau_a", self.tau_a),
            ("vehicles.tau_h", self.tau_h),
            ("vehicles.eps_c", self.eps_c),
            ("vehicles.eps_a", self.eps_a),
            ("vehicles.eps_h", self.eps_h),
            ("vehicles.startup_lost_time", self.startup_lost_time),
            ("vehicles.lateral_comfort_decel", self.lateral_comfort_decel),
            ("vehicles.lateral_safe_gap", self.lateral_safe_gap),
            ("vehicles.asg_margin_front", self.asg_margin_front),
            ("vehicles.asg_margin_rear", self.asg_margin_rear),
            ("vehicles.min_gap", self.min_gap),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(field, "must be strictly positive"));
            }
        }
        if !(self.tau_c <= self.tau_a && self.tau_a <= self.tau_h) {
            return Err(invalid(
                "vehicles.tau_a",
                "headways must satisfy tau_c <= tau_a <= tau_h",
            ));
        }
        if !(self.start_reaction.is_finite() && self.start_reaction >= 0.0) {
            return Err(invalid("vehicles.start_reaction", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.krauss_sigma) {
            return Err(invalid("vehicles.krauss_sigma", "must lie in [0, 1]"));
        }
        if self.emergency_decel < self.car_decel.max(self.bus_decel) {
            return Err(invalid(
                "vehicles.emergency_decel",
                "must be at least the comfortable deceleration",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Demand relative to the calibrated intersection capacity.
    #[serde(default = "default_vc_ratio")]
    pub vc_ratio: f64,
    /// Connected penetration rate among general traffic.
    #[serde(default = "default_cpr")]
    pub cpr: f64,
    /// Fraction of connected general traffic that is automated (CAV).
    #[serde(default = "default_cav_chv_split")]
    pub cav_chv_split: f64,
    #[serde(default = "default_right_turn_ratio")]
    pub right_turn_ratio: f64,
    #[serde(default = "default_bus_headway_mean")]
    pub bus_headway_mean: f64,
    #[serde(default = "default_bus_headway_std")]
    pub bus_headway_std: f64,
    #[serde(default = "default_dwell_mean")]
    pub dwell_mean: f64,
    #[serde(default = "default_dwell_std")]
    pub dwell_std: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sim_duration")]
    pub sim_duration: f64,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    /// Rolling-horizon control interval.
    #[serde(default = "default_control_interval")]
    pub control_interval: f64,
    #[serde(default = "default_sim_dt")]
    pub sim_dt: f64,
    /// Cached stop-bar capacity (veh/h) of the saturated exclusive-bus-lane
    /// run for this geometry. Computed on demand when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_vph: Option<f64>,
}

fn default_vc_ratio() -> f64 {
    1.0
}
fn default_cpr() -> f64 {
    0.4
}
fn default_cav_chv_split() -> f64 {
    0.5
}
fn default_right_turn_ratio() -> f64 {
    0.3
}
fn default_bus_headway_mean() -> f64 {
    60.0
}
fn default_bus_headway_std() -> f64 {
    10.0
}
fn default_dwell_mean() -> f64 {
    20.0
}
fn default_dwell_std() -> f64 {
    // a variance of 10 s²
    10f64.sqrt()
}
fn default_seed() -> u64 {
    1
}
fn default_sim_duration() -> f64 {
    1800.0
}
fn default_warmup() -> f64 {
    300.0
}
fn default_control_interval() -> f64 {
    5.0
}
fn default_sim_dt() -> f64 {
    0.5
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self {
            vc_ratio: default_vc_ratio(),
            cpr: default_cpr(),
            cav_chv_split: default_cav_chv_split(),
            right_turn_ratio: default_right_turn_ratio(),
            bus_headway_mean: default_bus_headway_mean(),
            bus_headway_std: default_bus_headway_std(),
            dwell_mean: default_dwell_mean(),
            dwell_std: default_dwell_std(),
            seed: default_seed(),
            sim_duration: default_sim_duration(),
            warmup: default_warmup(),
            control_interval: default_control_interval(),
            sim_dt: default_sim_dt(),
            capacity_vph: None,
        }
    }
}

impl DemandSpec {
    /// Number of simulation steps per control interval.
    pub fn steps_per_interval(&self) -> u64 {
        (self.control_interval / self.sim_dt).round() as u64
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too.
    fn validate(&self) -> Result<(), ScenarioError> {
        for (field, value) in [
            ("demand.cpr", self.cpr),
            ("demand.cav_chv_split", self.cav_chv_split),
            ("demand.right_turn_ratio", self.right_turn_ratio),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(invalid(field, "fraction must lie in [0, 1]"));
            }
        }
        if !(self.vc_ratio.is_finite() && self.vc_ratio >= 0.0) {
            return Err(invalid("demand.vc_ratio", "must be non-negative"));
        }
        if !(self.bus_headway_mean > 0.0) {
            return Err(invalid("demand.bus_headway_mean", "must be positive"));
        }
        if !(self.bus_headway_std >= 0.0) {
            return Err(invalid("demand.bus_headway_std", "must be non-negative"));
        }
        if !(self.dwell_mean >= 0.0) {
            return Err(invalid("demand.dwell_mean", "must be non-negative"));
        }
        if !(self.dwell_std >= 0.0) {
            return Err(invalid("demand.dwell_std", "must be non-negative"));
        }
        if !(self.sim_dt > 0.0) {
            return Err(invalid("demand.sim_dt", "must be positive"));
        }
        if !(self.control_interval > 0.0) {
            return Err(invalid("demand.control_interval", "must be positive"));
        }
        let ratio = self.control_interval / self.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(invalid(
                "demand.sim_dt",
                "must divide the control interval evenly",
            ));
        }
        if !(self.sim_duration > 0.0) {
            return Err(invalid("demand.sim_duration", "must be positive"));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.sim_duration) {
            return Err(invalid(
                "demand.warmup",
                "must be non-negative and shorter than sim_duration",
            ));
        }
        if let Some(c) = self.capacity_vph {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("demand.capacity_vph", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub road: RoadConfig,
    #[serde(default)]
    pub signal: SignalPlan,
    #[serde(default)]
    pub vehicles: VehiclePopulation,
    #[serde(default)]
    pub demand: DemandSpec,
}

impl Scenario {
    /// Built-in experimental setup: 700 m approach, bus stop 400 m from the
    /// entry, 100 s cycle with 40 s green.
    pub fn baseline() -> Self {
        let mut s = Scenario::default();
        s.road.bus_stop_pos = Some(400.0);
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.road.validate()?;
        self.signal.validate()?;
        self.vehicles.validate()?;
        self.demand.validate()?;
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}
