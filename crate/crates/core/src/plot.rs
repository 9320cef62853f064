//! Time-space diagrams as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::microsim::TRAJECTORY_HEADER;
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no trajectory rows on lane {0}")]
    EmptySelection(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trajectory line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tick: u64,
    pub time: f64,
    pub pos: f64,
}

/// One polyline: a vehicle's consecutive samples on the chosen lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub vehicle_id: u32,
    pub is_bus: bool,
    pub samples: Vec<Sample>,
}

/// Extracts the tracks of `lane` from trajectory CSV text. A vehicle that
/// leaves and re-enters the lane yields separate tracks.
pub fn lane_tracks(csv: &str, lane: usize) -> Result<Vec<Track>, PlotError> {
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(PlotError::Parse {
                line: 1,
                reason: "missing trajectory header".into(),
            })
        }
    }
    let mut by_vehicle: BTreeMap<u32, Vec<Track>> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| PlotError::Parse {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err("expected 9 fields"));
        }
        let row_lane: usize = f[5].parse().map_err(|_| err("bad lane"))?;
        if row_lane != lane {
            continue;
        }
        let tick: u64 = f[0].parse().map_err(|_| err("bad tick"))?;
        let time: f64 = f[1].parse().map_err(|_| err("bad time"))?;
        let id: u32 = f[2].parse().map_err(|_| err("bad vehicle id"))?;
        let pos: f64 = f[6].parse().map_err(|_| err("bad position"))?;
        let sample = Sample { tick, time, pos };
        let tracks = by_vehicle.entry(id).or_default();
        match tracks.last_mut() {
            Some(t) if t.samples.last().is_some_and(|s| s.tick + 1 == tick) => {
                t.samples.push(sample)
            }
            _ => tracks.push(Track {
                vehicle_id: id,
                is_bus: f[3] == "Bus",
                samples: vec![sample],
            }),
        }
    }
    let tracks: Vec<Track> = by_vehicle.into_values().flatten().collect();
    if tracks.is_empty() {
        return Err(PlotError::EmptySelection(lane));
    }
    Ok(tracks)
}

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;

/// Renders tracks with time on x and position on y. The stop bar carries a
/// red/green band following the signal plan; buses are drawn thicker in red.
pub fn render_svg(tracks: &[Track], lane: usize, scenario: &Scenario) -> String {
    let t0 = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| s.time))
        .fold(f64::INFINITY, f64::min);
    let t1 = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| s.time))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(t0 + 1.0);
    let bar = scenario.road.stop_bar();
    let x = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let y = |p: f64| HEIGHT - MARGIN - p.clamp(0.0, bar) / bar * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="25" font-family="sans-serif" font-size="14">lane {lane}: time (s) {t0:.0} to {t1:.0}, position 0 to {bar} m</text>"#
    );

    // Signal band along the stop bar.
    let signal = &scenario.signal;
    let mut t = signal.cycle_start(t0);
    while t < t1 {
        for (from, to, colour) in [
            (t, t + signal.red, "#d62728"),
            (t + signal.red, t + signal.cycle, "#2ca02c"),
        ] {
            let (a, b) = (from.max(t0), to.min(t1));
            if b > a {
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="4" fill="{colour}"/>"#,
                    x(a),
                    y(bar) - 2.0,
                    x(b) - x(a)
                );
            }
        }
        t += signal.cycle;
    }

    for track in tracks {
        let (stroke, width) = if track.is_bus {
            ("#d62728", 2.0)
        } else {
            ("#555555", 0.8)
        };
        let points: Vec<String> = track
            .samples
            .iter()
            .map(|s| format!("{:.2},{:.2}", x(s.time), y(s.pos)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-vehicle="{}" fill="none" stroke="{stroke}" stroke-width="{width}" points="{}"/>"#,
            track.vehicle_id,
            points.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads a trajectory log and writes the lane's time-space diagram.
pub fn render_time_space(
    trajectory: &Path,
    lane: usize,
    out: &Path,
    scenario: &Scenario,
) -> Result<usize, PlotError> {
    let csv = fs::read_to_string(trajectory).map_err(|source| PlotError::Io {
        path: trajectory.display().to_string(),
        source,
    })?;
    let tracks = lane_tracks(&csv, lane)?;
    fs::write(out, render_svg(&tracks, lane, scenario)).map_err(|source| PlotError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(tracks.len())
}
