//! Trip-level delay and per-run summaries.

use serde::{Deserialize, Serialize};

use crate::estimator::kinematic_travel_time;
use crate::microsim::{Trip, WorldStats};
use crate::scenario::Scenario;
use crate::vehicle::{Movement, VehicleClass};

/// Travel time through the approach with nobody else on the road and a
/// permanent green. Vehicles enter at the speed limit. A bus serving a stop
/// also pays the mean dwell and the time lost braking into and pulling away
/// from the stop.
pub fn free_flow_time(class: VehicleClass, scenario: &Scenario) -> f64 {
    let road = &scenario.road;
    let v = road.speed_limit;
    let cruise = road.stop_bar() / v;
    match (class, road.bus_stop_pos) {
        (VehicleClass::Bus, Some(stop)) => {
            let pop = &scenario.vehicles;
            let decel_loss = v / (2.0 * pop.bus_decel);
            let accel_loss = kinematic_travel_time(road.stop_bar() - stop, 0.0, v, pop.bus_accel)
                - (road.stop_bar() - stop) / v;
            cruise + decel_loss + accel_loss + scenario.demand.dwell_mean
        }
        _ => cruise,
    }
}

/// Actual minus free-flow travel time, floored at zero.
pub fn compute_delay(trip: &Trip, scenario: &Scenario) -> f64 {
    (trip.exit_s - trip.entry_s - free_flow_time(trip.class, scenario)).max(0.0)
}

/// Reporting group of a trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripGroup {
    Bus,
    Through,
    RightTurn,
}

impl TripGroup {
    pub const ALL: [TripGroup; 3] = [TripGroup::Bus, TripGroup::Through, TripGroup::RightTurn];

    pub fn of(trip: &Trip) -> Self {
        if trip.class.is_bus() {
            TripGroup::Bus
        } else if trip.movement == Movement::RightTurn {
            TripGroup::RightTurn
        } else {
            TripGroup::Through
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TripGroup::Bus => "bus",
            TripGroup::Through => "through",
            TripGroup::RightTurn => "right_turn",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub trips: usize,
    pub mean_delay: f64,
    pub p50_delay: f64,
    pub p90_delay: f64,
    pub throughput_vph: f64,
    pub mean_stops: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub bus: GroupStats,
    pub through: GroupStats,
    pub right_turn: GroupStats,
    pub throughput_vph: f64,
    /// Positive tractive work plus an idle term per vehicle; a congestion
    /// proxy only, not a fuel or emission estimate.
    pub proxy_energy: f64,
    pub bus_lane_general_km: f64,
    pub clamp_events: u64,
    pub red_violations: u64,
    pub min_spacing: f64,
}

impl RunResult {
    pub fn group(&self, g: TripGroup) -> &GroupStats {
        match g {
            TripGroup::Bus => &self.bus,
            TripGroup::Through => &self.through,
            TripGroup::RightTurn => &self.right_turn,
        }
    }

    pub const CSV_HEADER: &'static str = "scenario,strategy,seed,\
bus_trips,bus_mean_delay_s,bus_p50_delay_s,bus_p90_delay_s,bus_throughput_vph,bus_mean_stops,\
through_trips,through_mean_delay_s,through_p50_delay_s,through_p90_delay_s,through_throughput_vph,through_mean_stops,\
right_turn_trips,right_turn_mean_delay_s,right_turn_p50_delay_s,right_turn_p90_delay_s,right_turn_throughput_vph,right_turn_mean_stops,\
throughput_vph,proxy_energy,bus_lane_general_km,clamp_events,red_violations,min_spacing_m";

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.scenario.clone(),
            self.strategy.clone(),
            self.seed.to_string(),
        ];
        for g in TripGroup::ALL {
            let s = self.group(g);
            cols.push(s.trips.to_string());
            for x in [
                s.mean_delay,
                s.p50_delay,
                s.p90_delay,
                s.throughput_vph,
                s.mean_stops,
            ] {
                cols.push(format!("{x:.4}"));
            }
        }
        cols.push(format!("{:.4}", self.throughput_vph));
        cols.push(format!("{:.4}", self.proxy_energy));
        cols.push(format!("{:.4}", self.bus_lane_general_km));
        cols.push(self.clamp_events.to_string());
        cols.push(self.red_violations.to_string());
        cols.push(format!("{:.4}", self.min_spacing));
        cols.join(",")
    }
}

/// Summarises the trips completed after warmup.
pub fn summarize(
    trips: &[Trip],
    stats: &WorldStats,
    scenario: &Scenario,
    strategy: &str,
) -> RunResult {
    let d = &scenario.demand;
    let hours = (d.sim_duration - d.warmup) / 3600.0;
    let measured: Vec<&Trip> = trips.iter().filter(|t| t.exit_s >= d.warmup).collect();

    let group = |g: TripGroup| {
        let mut delays: Vec<f64> = measured
            .iter()
            .filter(|t| TripGroup::of(t) == g)
            .map(|t| t.delay_s)
            .collect();
        let stops: u64 = measured
            .iter()
            .filter(|t| TripGroup::of(t) == g)
            .map(|t| u64::from(t.stops))
            .sum();
        let n = delays.len();
        if n == 0 {
            return GroupStats::default();
        }
        delays.sort_by(f64::total_cmp);
        GroupStats {
            trips: n,
            mean_delay: delays.iter().sum::<f64>() / n as f64,
            p50_delay: percentile(&delays, 0.5),
            p90_delay: percentile(&delays, 0.9),
            throughput_vph: n as f64 / hours,
            mean_stops: stops as f64 / n as f64,
        }
    };

    let energy = if measured.is_empty() {
        0.0
    } else {
        measured.iter().map(|t| t.energy).sum::<f64>() / measured.len() as f64
    };
    RunResult {
        scenario: scenario.fingerprint(),
        strategy: strategy.to_string(),
        seed: d.seed,
        bus: group(TripGroup::Bus),
        through: group(TripGroup::Through),
        right_turn: group(TripGroup::RightTurn),
        throughput_vph: measured.len() as f64 / hours,
        proxy_energy: energy,
        bus_lane_general_km: stats.bus_lane_general_m / 1000.0,
        clamp_events: stats.clamp_events,
        red_violations: stats.red_violations,
        min_spacing: if stats.min_spacing.is_finite() {
            stats.min_spacing
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleId;

    fn trip(class: VehicleClass, movement: Movement, entry: f64, exit: f64) -> Trip {
        Trip {
            vehicle_id: VehicleId(1),
            class,
            movement,
            entry_s: entry,
            exit_s: exit,
            delay_s: 0.0,
            stops: 0,
            energy: 0.0,
            exit_lane: 0,
        }
    }

    fn no_stop() -> Scenario {
        let mut s = Scenario::baseline();
        s.road.bus_stop_pos = None;
        s
    }

    #[test]
    fn free_flow_trip_has_no_delay() {
        let s = no_stop();
        let t = trip(
            VehicleClass::Cav,
            Movement::Through,
            10.0,
            10.0 + 700.0 / 13.89,
        );
        assert!(compute_delay(&t, &s).abs() < 1e-12);
    }

    #[test]
    fn delay_is_difference_to_free_flow() {
        let mut s = no_stop();
        // free flow of exactly 50.4 s
        s.road.speed_limit = 700.0 / 50.4;
        let t = trip(VehicleClass::Hdv, Movement::Through, 0.0, 62.0);
        assert!((compute_delay(&t, &s) - 11.6).abs() < 1e-9);
    }

    #[test]
    fn bus_free_flow_includes_dwell() {
        let s = Scenario::baseline();
        let bus = free_flow_time(VehicleClass::Bus, &s);
        let car = free_flow_time(VehicleClass::Cav, &s);
        assert!(bus - car > s.demand.dwell_mean);
        assert_eq!(free_flow_time(VehicleClass::Bus, &no_stop()), car);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
    }
}
