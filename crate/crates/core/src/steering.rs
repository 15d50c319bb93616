//! Quadrant-search beam-steering acquisition.
//!
//! The transmitter's coverage footprint on the ceiling is quartered
//! repeatedly. Each quarter is probed with a beam wide enough to cover it,
//! the receivers report their best-branch SNR over an ideal feedback link,
//! and the best quarter becomes the next search region. The search stops
//! once the region side reaches the configured stop size; the full
//! transmitter power is then steered at the final region center.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{argmax_with_ties, evaluate, LinkMetrics, MetricsError};
use crate::raytrace::{
    half_power_order, ChannelModel, Emitter, ImpulseResponse, TraceError, Window,
};
use crate::scene::{normal_to_az_el, Room, Scenario, SceneError, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SteeringError {
    #[error("acquisition failed: no receiver answered any root quadrant probe")]
    AcquisitionFailed,
    #[error("transmitter must be below the ceiling")]
    TxNotBelowCeiling,
    #[error("coverage side {side_m} m is not larger than the stop size {stop_m} m")]
    DegenerateCoverage { side_m: f64, stop_m: f64 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// Side of the terminal search cell.
    pub stop_size_m: f64,
    /// Half-power semi-angle of the final steered beam.
    pub steered_divergence_deg: f64,
    /// Probe beams cover the quadrant diagonal (`true`) or its inscribed circle.
    pub probe_fills_subquadrant: bool,
    /// Probe beams illuminate only the probed quadrant's ceiling footprint.
    pub probe_confined_to_quadrant: bool,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            stop_size_m: 0.1,
            steered_divergence_deg: 2.0,
            probe_fills_subquadrant: true,
            probe_confined_to_quadrant: true,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.stop_size_m > 0.0 && self.stop_size_m.is_finite()) {
            return Err(SceneError::Invalid {
                field: "steering.stop_size_m".into(),
                reason: "stop size must be > 0".into(),
            });
        }
        if !(self.steered_divergence_deg > 0.0 && self.steered_divergence_deg < 90.0) {
            return Err(SceneError::Invalid {
                field: "steering.steered_divergence_deg".into(),
                reason: "divergence must be in (0, 90)".into(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned rectangle on the ceiling plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub center: Vec3,
    pub size_x: f64,
    pub size_y: f64,
}

impl Region {
    pub fn square(center: Vec3, side_m: f64) -> Self {
        Self {
            center,
            size_x: side_m,
            size_y: side_m,
        }
    }

    /// The larger side; equals the side for an unclipped square.
    pub fn side_m(&self) -> f64 {
        self.size_x.max(self.size_y)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        (p.x - self.center.x).abs() <= self.size_x / 2.0 + tol
            && (p.y - self.center.y).abs() <= self.size_y / 2.0 + tol
    }
}

/// Ceiling footprint of the transmitter's coverage cone, clipped to the room.
pub fn coverage_region(
    room: &Room,
    tx_pos: Vec3,
    semi_angle_deg: f64,
) -> Result<Region, SteeringError> {
    let h = room.height_m - tx_pos.z;
    if !(h > 0.0) {
        return Err(SteeringError::TxNotBelowCeiling);
    }
    let half = h * semi_angle_deg.to_radians().tan();
    let (x0, x1) = (
        (tx_pos.x - half).max(0.0),
        (tx_pos.x + half).min(room.width_m),
    );
    let (y0, y1) = (
        (tx_pos.y - half).max(0.0),
        (tx_pos.y + half).min(room.length_m),
    );
    Ok(Region {
        center: Vec3::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, room.height_m),
        size_x: (x1 - x0).max(0.0),
        size_y: (y1 - y0).max(0.0),
    })
}

/// Four equal quarters in the order (-x-y, +x-y, -x+y, +x+y).
pub fn subdivide(region: &Region) -> [Region; 4] {
    let (qx, qy) = (region.size_x / 4.0, region.size_y / 4.0);
    let c = region.center;
    [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)].map(|(sx, sy)| Region {
        center: Vec3::new(c.x + sx * qx, c.y + sy * qy, c.z),
        size_x: region.size_x / 2.0,
        size_y: region.size_y / 2.0,
    })
}

/// Half-power semi-angle (rad) of the probe beam aimed at `region`.
pub fn probe_divergence_rad(region: &Region, height_above_tx: f64, fills_diagonal: bool) -> f64 {
    let reach = if fills_diagonal {
        region.side_m() / 2.0 * std::f64::consts::SQRT_2
    } else {
        region.side_m() / 2.0
    };
    (reach / height_above_tx).atan()
}

fn steered_emitter(
    scenario: &Scenario,
    tx_pos: Vec3,
    target: Vec3,
    order: f64,
) -> Result<Emitter, TraceError> {
    let axis = (target - tx_pos)
        .normalized()
        .ok_or(TraceError::DegenerateGeometry)?;
    Ok(Emitter {
        position: tx_pos,
        axis,
        power_w: scenario.transmitter.power_w,
        order,
        cutoff_rad: None,
        window: None,
    })
}

/// Traces a beam of half-power semi-angle `divergence_deg` steered from
/// `tx_pos` at `target`, with the full transmitter power and up to
/// `max_order` reflections.
pub fn steered_trace_with(
    model: &ChannelModel,
    tx_pos: Vec3,
    target: Vec3,
    divergence_deg: f64,
    max_order: u8,
) -> Result<ImpulseResponse, TraceError> {
    if !(divergence_deg > 0.0 && divergence_deg < 90.0) {
        return Err(TraceError::InvalidDivergence(divergence_deg));
    }
    let scenario = model.scenario();
    if (target.z - scenario.room.height_m).abs() > 1e-9 {
        return Err(TraceError::TargetOffCeiling);
    }
    scenario.check_tx_position(tx_pos)?;
    let emitter = steered_emitter(scenario, tx_pos, target, half_power_order(divergence_deg))?;
    model.trace(&emitter, max_order)
}

/// Steered beam with LOS plus first and second-order reflections.
pub fn steered_trace(
    scenario: &Scenario,
    tx_pos: Vec3,
    target: Vec3,
    divergence_deg: f64,
) -> Result<ImpulseResponse, TraceError> {
    if !(divergence_deg > 0.0) {
        return Err(TraceError::InvalidDivergence(divergence_deg));
    }
    steered_trace_with(
        &ChannelModel::new(scenario),
        tx_pos,
        target,
        divergence_deg,
        2,
    )
}

/// Best-branch SNR (dB) reported for a LOS-only probe beam covering
/// `region`; `f64::NEG_INFINITY` when no branch receives any power.
pub fn probe_snr(
    model: &ChannelModel,
    tx_pos: Vec3,
    region: &Region,
) -> Result<f64, SteeringError> {
    let scenario = model.scenario();
    let h = region.center.z - tx_pos.z;
    if !(h > 0.0) {
        return Err(SteeringError::TxNotBelowCeiling);
    }
    let delta = probe_divergence_rad(region, h, scenario.steering.probe_fills_subquadrant);
    if !(delta > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut emitter = steered_emitter(
        scenario,
        tx_pos,
        region.center,
        half_power_order(delta.to_degrees()),
    )?;
    if scenario.steering.probe_confined_to_quadrant {
        emitter.window = Some(Window {
            z: region.center.z,
            x_min: region.center.x - region.size_x / 2.0,
            x_max: region.center.x + region.size_x / 2.0,
            y_min: region.center.y - region.size_y / 2.0,
            y_max: region.center.y + region.size_y / 2.0,
        });
    }
    let ir = model.trace(&emitter, 0)?;
    if ir.iter().all(|c| c.power_w == 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(evaluate(scenario, &ir)?.best_snr_db)
}

/// One probe of the search, as relayed over the feedback channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionEvent {
    pub iteration: usize,
    pub probed_region: Region,
    /// Azimuth and elevation (deg) of the probe beam axis.
    pub hologram_angles: (f64, f64),
    /// `NEG_INFINITY` when nothing was received.
    pub measured_best_snr_db: f64,
    pub chosen: bool,
}

#[derive(Debug, Serialize)]
struct EventRecord {
    iteration: usize,
    region_center_x: f64,
    region_center_y: f64,
    region_side_m: f64,
    az_deg: f64,
    el_deg: f64,
    /// `null` for the no-signal sentinel.
    snr_db: Option<f64>,
    chosen: bool,
}

impl AcquisitionEvent {
    fn record(&self) -> EventRecord {
        EventRecord {
            iteration: self.iteration,
            region_center_x: self.probed_region.center.x,
            region_center_y: self.probed_region.center.y,
            region_side_m: self.probed_region.side_m(),
            az_deg: self.hologram_angles.0,
            el_deg: self.hologram_angles.1,
            snr_db: self
                .measured_best_snr_db
                .is_finite()
                .then_some(self.measured_best_snr_db),
            chosen: self.chosen,
        }
    }
}

/// Writes the acquisition log as JSON lines, one event per line.
pub fn write_event_log<W: Write>(events: &[AcquisitionEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, &e.record())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringResult {
    /// Final aim point on the ceiling.
    pub target: Vec3,
    /// Completed subdivision rounds.
    pub iterations: usize,
    pub events: Vec<AcquisitionEvent>,
    pub final_region: Region,
    /// A deeper round heard nothing and the search stopped at the parent.
    pub degraded: bool,
    pub final_metrics: LinkMetrics,
}

/// Number of halvings needed to bring `side` down to `stop`.
pub fn expected_iterations(side_m: f64, stop_m: f64) -> usize {
    let mut side = side_m;
    let mut n = 0;
    while side > stop_m {
        side /= 2.0;
        n += 1;
    }
    n
}

/// Runs the quadrant search from `tx_pos` and evaluates the steered link.
pub fn run_acquisition(
    model: &ChannelModel,
    tx_pos: Vec3,
) -> Result<SteeringResult, SteeringError> {
    let scenario = model.scenario();
    scenario.check_tx_position(tx_pos)?;
    let cfg = &scenario.steering;
    let mut current = coverage_region(&scenario.room, tx_pos, scenario.transmitter.semi_angle_deg)?;
    if current.side_m() <= cfg.stop_size_m {
        return Err(SteeringError::DegenerateCoverage {
            side_m: current.side_m(),
            stop_m: cfg.stop_size_m,
        });
    }

    let mut events = Vec::new();
    let mut iterations = 0;
    let mut degraded = false;
    while current.side_m() > cfg.stop_size_m {
        let children = subdivide(&current);
        let mut snrs = [f64::NEG_INFINITY; 4];
        for (s, child) in snrs.iter_mut().zip(&children) {
            *s = probe_snr(model, tx_pos, child)?;
        }
        let winner = argmax_with_ties(&snrs)
            .filter(|(_, s)| s.is_finite())
            .map(|(i, _)| i);
        for (i, child) in children.iter().enumerate() {
            events.push(AcquisitionEvent {
                iteration: iterations,
                probed_region: *child,
                hologram_angles: normal_to_az_el(child.center - tx_pos),
                measured_best_snr_db: snrs[i],
                chosen: winner == Some(i),
            });
        }
        match winner {
            Some(i) => {
                current = children[i];
                iterations += 1;
            }
            None if iterations == 0 => return Err(SteeringError::AcquisitionFailed),
            None => {
                degraded = true;
                break;
            }
        }
    }

    let target = current.center;
    let ir = steered_trace_with(model, tx_pos, target, cfg.steered_divergence_deg, 2)?;
    Ok(SteeringResult {
        target,
        iterations,
        events,
        final_region: current,
        degraded,
        final_metrics: evaluate(scenario, &ir)?,
    })
}
