//! Vehicle identity and the per-tick state snapshot shared by the control
//! modules and the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scenario::VehiclePopulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    /// Human-driven, not connected.
    Hdv,
    /// Connected, human-driven.
    Chv,
    /// Connected and automated.
    Cav,
    Bus,
}

impl VehicleClass {
    pub fn is_connected(self) -> bool {
        !matches!(self, VehicleClass::Hdv)
    }

    pub fn is_human(self) -> bool {
        matches!(self, VehicleClass::Hdv | VehicleClass::Chv)
    }

    pub fn is_bus(self) -> bool {
        matches!(self, VehicleClass::Bus)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Hdv => "HDV",
            VehicleClass::Chv => "CHV",
            VehicleClass::Cav => "CAV",
            VehicleClass::Bus => "Bus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "HDV" => Some(VehicleClass::Hdv),
            "CHV" => Some(VehicleClass::Chv),
            "CAV" => Some(VehicleClass::Cav),
            "Bus" => Some(VehicleClass::Bus),
            _ => None,
        }
    }

    pub fn accel(self, pop: &VehiclePopulation) -> f64 {
        if self.is_bus() {
            pop.bus_accel
        } else {
            pop.car_accel
        }
    }

    pub fn decel(self, pop: &VehiclePopulation) -> f64 {
        if self.is_bus() {
            pop.bus_decel
        } else {
            pop.car_decel
        }
    }

    pub fn length(self, pop: &VehiclePopulation) -> f64 {
        if self.is_bus() {
            pop.bus_len
        } else {
            pop.car_len
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Movement {
    Through,
    RightTurn,
}

impl Movement {
    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Through => "Through",
            Movement::RightTurn => "RightTurn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Through" => Some(Movement::Through),
            "RightTurn" => Some(Movement::RightTurn),
            _ => None,
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One vehicle as seen by the control center. `pos` is the front bumper,
/// so the vehicle occupies `[pos - length, pos]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: usize,
    /// Rank within the lane, 1 = closest to the stop bar.
    pub order: usize,
    pub class: VehicleClass,
    pub movement: Movement,
    pub pos: f64,
    pub speed: f64,
    pub length: f64,
    /// Remaining dwell at the stop; zero unless a bus is serving the stop.
    pub dwell_remaining: f64,
    /// True once a bus has finished serving the stop.
    pub stop_served: bool,
}

impl VehicleState {
    pub fn new(
        id: u32,
        class: VehicleClass,
        movement: Movement,
        pos: f64,
        speed: f64,
        pop: &VehiclePopulation,
    ) -> Self {
        Self {
            id: VehicleId(id),
            lane: 0,
            order: 0,
            class,
            movement,
            pos,
            speed,
            length: class.length(pop),
            dwell_remaining: 0.0,
            stop_served: false,
        }
    }

    pub fn connected(&self) -> bool {
        self.class.is_connected()
    }

    pub fn rear(&self) -> f64 {
        self.pos - self.length
    }

    pub fn is_right_turn(&self) -> bool {
        self.movement == Movement::RightTurn
    }

    /// A bus that has not yet left the stop and is at or upstream of it.
    pub fn is_bus_before_stop(&self, stop: Option<f64>) -> bool {
        match stop {
            Some(s) => self.class.is_bus() && !self.stop_served && self.pos <= s + 1e-6,
            None => false,
        }
    }
}

/// Sorts front-first and assigns lane ranks starting at 1.
pub fn rank_lane(vehicles: &mut [VehicleState]) {
    vehicles.sort_by(|a, b| b.pos.total_cmp(&a.pos).then(a.id.cmp(&b.id)));
    for (i, v) in vehicles.iter_mut().enumerate() {
        v.order = i + 1;
    }
}
