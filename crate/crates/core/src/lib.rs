//! Bus-lane sharing at a signalized intersection: departure-time
//! estimation, bus-lane gap detection, right-of-way optimisation and a
//! lane-level microsimulator for comparing control strategies.

pub mod estimator;
pub mod experiment;
pub mod gaps;
pub mod metrics;
pub mod microsim;
pub mod plot;
pub mod protocol;
pub mod row_opt;
pub mod scenario;
pub mod strategies;
pub mod vehicle;
pub mod verify;
