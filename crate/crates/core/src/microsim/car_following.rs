//! Longitudinal models. Every model is capped by the same hard safety
//! bound so a follower can always stop behind its leader's stopping point.

use crate::scenario::VehiclePopulation;
use crate::vehicle::VehicleClass;

/// Car-following controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowModel {
    /// Krauss safe-speed model with driver imperfection.
    Krauss,
    /// Constant-time-gap adaptive cruise control.
    Acc,
    /// Cooperative ACC, used when the leader is automated or a bus.
    Cacc,
}

const ACC_GAINS: (f64, f64) = (0.23, 0.07);
const CACC_GAINS: (f64, f64) = (0.45, 0.25);

impl FollowModel {
    /// Human drivers use Krauss; automated vehicles and buses use CACC
    /// behind a cooperative leader and ACC otherwise.
    pub fn select(follower: VehicleClass, leader: Option<VehicleClass>) -> Self {
        if follower.is_human() {
            FollowModel::Krauss
        } else {
            match leader {
                Some(l) if !l.is_human() => FollowModel::Cacc,
                _ => FollowModel::Acc,
            }
        }
    }

    /// Desired time gap of this model.
    pub fn time_gap(self, pop: &VehiclePopulation) -> f64 {
        match self {
            FollowModel::Krauss => pop.tau_h,
            FollowModel::Acc => pop.tau_a,
            FollowModel::Cacc => pop.tau_c,
        }
    }
}

/// Kinematic limits of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub accel: f64,
    pub decel: f64,
    pub v_max: f64,
    pub min_gap: f64,
}

impl Dynamics {
    pub fn of(class: VehicleClass, pop: &VehiclePopulation, v_max: f64) -> Self {
        Self {
            accel: class.accel(pop),
            decel: class.decel(pop),
            v_max,
            min_gap: pop.min_gap,
        }
    }
}

/// The vehicle ahead: bumper-to-bumper gap, speed and the acceleration it
/// has committed to for the coming step (zero when not communicated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Largest `v` with `v·dt + v²/(2b) <= room`; the speed from which an Euler
/// step followed by braking at `b` stays within `room` metres.
pub fn stopping_speed(room: f64, dt: f64, decel: f64) -> f64 {
    if room <= 0.0 {
        return 0.0;
    }
    let bd = decel * dt;
    -bd + (bd * bd + 2.0 * decel * room).sqrt()
}

/// Hard cap behind a leader: the follower must be able to stop `min_gap`
/// behind the point where the leader would stop.
pub fn safe_speed_cap(leader: Leader, dt: f64, dy: &Dynamics) -> f64 {
    let room = leader.gap - dy.min_gap + leader.speed * leader.speed / (2.0 * dy.decel);
    stopping_speed(room, dt, dy.decel)
}

/// Like [`safe_speed_cap`], but credits the leader's committed motion over
/// the coming step. Only valid when the leader's plan is communicated.
pub fn cooperative_speed_cap(leader: Leader, dt: f64, dy: &Dynamics) -> f64 {
    let next = (leader.speed + leader.accel * dt).max(0.0);
    let room = leader.gap - dy.min_gap + next * dt + next * next / (2.0 * dy.decel);
    stopping_speed(room, dt, dy.decel)
}

/// Next speed of a follower.
///
/// `dawdle` is a uniform draw in `[0, 1)` scaling the Krauss imperfection;
/// pass 0 for a deterministic step. Automated models ignore it.
pub fn follower_speed(
    model: FollowModel,
    speed: f64,
    leader: Option<Leader>,
    dt: f64,
    dy: &Dynamics,
    pop: &VehiclePopulation,
    dawdle: f64,
) -> f64 {
    let v_free = (speed + dy.accel * dt).min(dy.v_max);
    let Some(l) = leader else {
        let v = match model {
            FollowModel::Krauss => v_free - pop.krauss_sigma * dy.accel * dt * dawdle,
            _ => v_free,
        };
        return v.max(0.0);
    };
    let tau = model.time_gap(pop);
    let net = l.gap - dy.min_gap;
    let desired = match model {
        FollowModel::Krauss => {
            let mean = 0.5 * (speed + l.speed);
            let v_safe = l.speed + (net - l.speed * tau) / (mean / dy.decel + tau);
            v_free.min(v_safe) - pop.krauss_sigma * dy.accel * dt * dawdle
        }
        FollowModel::Acc | FollowModel::Cacc => {
            let (k1, k2) = if model == FollowModel::Acc {
                ACC_GAINS
            } else {
                CACC_GAINS
            };
            let feedforward = if model == FollowModel::Cacc {
                l.accel
            } else {
                0.0
            };
            let spacing_error = l.gap - (tau * speed).max(dy.min_gap);
            let a = (k1 * spacing_error + k2 * (l.speed - speed) + feedforward)
                .clamp(-dy.decel, dy.accel);
            v_free.min(speed + a * dt)
        }
    };
    let cap = if model == FollowModel::Cacc {
        cooperative_speed_cap(l, dt, dy)
    } else {
        safe_speed_cap(l, dt, dy)
    };
    desired.min(cap).max(0.0)
}
