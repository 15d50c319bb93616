//! Room, transmitter and receiver description.
//!
//! Frame: origin at a floor corner, `x` across the 4 m width, `y` along the
//! 8 m length, `z` up with the floor at `z = 0` and the ceiling at
//! `z = height_m`. Scenarios are immutable once validated and can be shared
//! across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geom::Vec3;
use crate::raytrace::half_power_order;
use crate::steering::SteeringConfig;

/// Elementary charge in coulombs.
pub const ELECTRON_CHARGE_C: f64 = 1.602_176_634e-19;

/// Tolerance on the norm of anything used as a unit direction.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("elevation {0} deg outside [-90, 90]")]
    ElevationOutOfRange(f64),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Unit vector for a detector or beam pointed at (`azimuth_deg`, `elevation_deg`).
///
/// Azimuth is measured in the x-y plane from +x toward +y; elevation from the
/// horizontal plane, negative pointing down.
pub fn az_el_to_normal(azimuth_deg: f64, elevation_deg: f64) -> Result<Vec3, SceneError> {
    if !(-90.0..=90.0).contains(&elevation_deg) {
        return Err(SceneError::ElevationOutOfRange(elevation_deg));
    }
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Ok(Vec3::new(
        el.cos() * az.cos(),
        el.cos() * az.sin(),
        el.sin(),
    ))
}

/// Inverse of [`az_el_to_normal`]. Azimuth is returned in `[0, 360)`; it is 0
/// for vertical directions where it is undefined.
pub fn normal_to_az_el(dir: Vec3) -> (f64, f64) {
    let horizontal = dir.x.hypot(dir.y);
    let el = dir.z.atan2(horizontal).to_degrees();
    let az = if horizontal == 0.0 {
        0.0
    } else {
        dir.y.atan2(dir.x).to_degrees().rem_euclid(360.0)
    };
    (az, el)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Room {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub reflectivity_ceiling: f64,
    pub reflectivity_walls: f64,
    pub reflectivity_floor: f64,
    pub reflector_order: f64,
    pub element_size_first_m: f64,
    pub element_size_second_m: f64,
    pub comm_floor_height_m: f64,
}

impl Default for Room {
    fn default() -> Self {
        Self {
            length_m: 8.0,
            width_m: 4.0,
            height_m: 3.0,
            reflectivity_ceiling: 0.8,
            reflectivity_walls: 0.8,
            reflectivity_floor: 0.3,
            reflector_order: 1.0,
            element_size_first_m: 0.05,
            element_size_second_m: 0.20,
            comm_floor_height_m: 1.0,
        }
    }
}

impl Room {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, v) in [
            ("room.length_m", self.length_m),
            ("room.width_m", self.width_m),
            ("room.height_m", self.height_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "room dimensions must be positive"));
            }
        }
        for (name, v) in [
            ("room.reflectivity_ceiling", self.reflectivity_ceiling),
            ("room.reflectivity_walls", self.reflectivity_walls),
            ("room.reflectivity_floor", self.reflectivity_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("reflectivity {v} outside [0, 1]")));
            }
        }
        if !(self.reflector_order >= 0.0 && self.reflector_order.is_finite()) {
            return Err(invalid(
                "room.reflector_order",
                "Lambertian order must be >= 0",
            ));
        }
        let smallest = self.length_m.min(self.width_m).min(self.height_m);
        for (name, v) in [
            ("room.element_size_first_m", self.element_size_first_m),
            ("room.element_size_second_m", self.element_size_second_m),
        ] {
            if !(v > 0.0 && v <= smallest) {
                return Err(invalid(
                    name,
                    format!("element size must be in (0, {smallest}] (smallest room dimension)"),
                ));
            }
        }
        if !(self.comm_floor_height_m >= 0.0 && self.comm_floor_height_m < self.height_m) {
            return Err(invalid(
                "room.comm_floor_height_m",
                "communication floor must satisfy 0 <= h < room height",
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.width_m / 2.0, self.length_m / 2.0, self.height_m / 2.0)
    }

    /// True when `(x, y)` lies within the floor footprint (boundary inclusive).
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_m).contains(&x) && (0.0..=self.length_m).contains(&y)
    }

    fn reflectivity(&self, surface: Surface) -> f64 {
        match surface {
            Surface::Ceiling => self.reflectivity_ceiling,
            Surface::Floor => self.reflectivity_floor,
            _ => self.reflectivity_walls,
        }
    }
}

/// The six planar reflectors of the room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Ceiling,
    Floor,
    /// Wall in the plane `x = 0`.
    WallX0,
    /// Wall in the plane `x = width`.
    WallX1,
    /// Wall in the plane `y = 0`.
    WallY0,
    /// Wall in the plane `y = length`.
    WallY1,
}

impl Surface {
    pub const ALL: [Surface; 6] = [
        Surface::Ceiling,
        Surface::Floor,
        Surface::WallX0,
        Surface::WallX1,
        Surface::WallY0,
        Surface::WallY1,
    ];

    /// Inward-facing normal.
    pub fn normal(self) -> Vec3 {
        match self {
            Surface::Ceiling => Vec3::DOWN,
            Surface::Floor => Vec3::UP,
            Surface::WallX0 => Vec3::new(1.0, 0.0, 0.0),
            Surface::WallX1 => Vec3::new(-1.0, 0.0, 0.0),
            Surface::WallY0 => Vec3::new(0.0, 1.0, 0.0),
            Surface::WallY1 => Vec3::new(0.0, -1.0, 0.0),
        }
    }

    /// Side lengths `(a, b)` of the surface in the room.
    pub fn extent(self, room: &Room) -> (f64, f64) {
        match self {
            Surface::Ceiling | Surface::Floor => (room.width_m, room.length_m),
            Surface::WallX0 | Surface::WallX1 => (room.length_m, room.height_m),
            Surface::WallY0 | Surface::WallY1 => (room.width_m, room.height_m),
        }
    }

    pub fn area(self, room: &Room) -> f64 {
        let (a, b) = self.extent(room);
        a * b
    }

    /// Maps in-plane coordinates `(u, v)` to a room point.
    fn point(self, room: &Room, u: f64, v: f64) -> Vec3 {
        match self {
            Surface::Ceiling => Vec3::new(u, v, room.height_m),
            Surface::Floor => Vec3::new(u, v, 0.0),
            Surface::WallX0 => Vec3::new(0.0, u, v),
            Surface::WallX1 => Vec3::new(room.width_m, u, v),
            Surface::WallY0 => Vec3::new(u, 0.0, v),
            Surface::WallY1 => Vec3::new(u, room.length_m, v),
        }
    }
}

/// A discretized reflector patch, treated as a point re-emitter at its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceElement {
    pub surface: Surface,
    pub center: Vec3,
    pub normal: Vec3,
    pub area_m2: f64,
    pub reflectivity: f64,
    pub order: f64,
}

/// Splits `[0, side)` into cells of `size`, shrinking the last one so the
/// cells cover the side exactly. Returns `(start, width)` pairs.
fn cells(side: f64, size: f64) -> Vec<(f64, f64)> {
    // The epsilon keeps exact divisions like 8 / 0.05 from gaining a sliver cell.
    let n = ((side / size) - 1e-9).ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let start = i as f64 * size;
            let end = if i + 1 == n {
                side
            } else {
                (start + size).min(side)
            };
            (start, end - start)
        })
        .collect()
}

/// Tiles one surface with square elements of side `size`.
pub fn tile_surface(room: &Room, surface: Surface, size: f64) -> Vec<SurfaceElement> {
    let (side_a, side_b) = surface.extent(room);
    let (ca, cb) = (cells(side_a, size), cells(side_b, size));
    let normal = surface.normal();
    let reflectivity = room.reflectivity(surface);
    let mut out = Vec::with_capacity(ca.len() * cb.len());
    for &(ua, wa) in &ca {
        for &(vb, wb) in &cb {
            out.push(SurfaceElement {
                surface,
                center: surface.point(room, ua + wa / 2.0, vb + wb / 2.0),
                normal,
                area_m2: wa * wb,
                reflectivity,
                order: room.reflector_order,
            });
        }
    }
    out
}

/// Tiles all six surfaces at the given element size, in [`Surface::ALL`] order.
pub fn tile_room(room: &Room, size: f64) -> Vec<SurfaceElement> {
    Surface::ALL
        .iter()
        .flat_map(|&s| tile_surface(room, s, size))
        .collect()
}

/// Element grids for the two reflection orders.
#[derive(Debug, Clone)]
pub struct RoomGrids {
    pub first_order: Vec<SurfaceElement>,
    pub second_order: Vec<SurfaceElement>,
}

pub fn build_room(room: &Room) -> RoomGrids {
    RoomGrids {
        first_order: tile_room(room, room.element_size_first_m),
        second_order: tile_room(room, room.element_size_second_m),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter {
    pub position: Vec3,
    pub orientation: Vec3,
    pub power_w: f64,
    pub semi_angle_deg: f64,
    /// Lambertian order of the unsteered in-cone emission profile.
    pub lambertian_order_wide: f64,
}

impl Transmitter {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.power_w > 0.0 && self.power_w.is_finite()) {
            return Err(invalid("transmitter.power_w", "power must be > 0"));
        }
        if !(self.semi_angle_deg > 0.0 && self.semi_angle_deg < 90.0) {
            return Err(invalid(
                "transmitter.semi_angle_deg",
                "semi-angle must be in (0, 90)",
            ));
        }
        if !(self.lambertian_order_wide >= 0.0 && self.lambertian_order_wide.is_finite()) {
            return Err(invalid(
                "transmitter.lambertian_order_wide",
                "Lambertian order must be >= 0",
            ));
        }
        if !self.orientation.is_unit(UNIT_NORM_TOL) {
            return Err(invalid(
                "transmitter.orientation",
                "orientation must be a unit vector",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBranch {
    pub position: Vec3,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub normal: Vec3,
    pub area_m2: f64,
    /// Acceptance half-angle.
    pub fov_deg: f64,
    pub responsivity_a_per_w: f64,
}

impl DetectorBranch {
    pub fn new(
        position: Vec3,
        azimuth_deg: f64,
        elevation_deg: f64,
        area_m2: f64,
        fov_deg: f64,
        responsivity_a_per_w: f64,
    ) -> Result<Self, SceneError> {
        let branch = Self {
            position,
            azimuth_deg,
            elevation_deg,
            normal: az_el_to_normal(azimuth_deg, elevation_deg)?,
            area_m2,
            fov_deg,
            responsivity_a_per_w,
        };
        branch.validate()?;
        Ok(branch)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.area_m2 > 0.0 && self.area_m2.is_finite()) {
            return Err(invalid("branch.area_m2", "detector area must be > 0"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 90.0) {
            return Err(invalid("branch.fov_deg", "FOV must be in (0, 90]"));
        }
        if !(self.responsivity_a_per_w > 0.0 && self.responsivity_a_per_w.is_finite()) {
            return Err(invalid(
                "branch.responsivity_a_per_w",
                "responsivity must be > 0",
            ));
        }
        let expected = az_el_to_normal(self.azimuth_deg, self.elevation_deg)?;
        if (expected - self.normal).norm() > UNIT_NORM_TOL {
            return Err(invalid(
                "branch.normal",
                "normal inconsistent with azimuth/elevation",
            ));
        }
        Ok(())
    }
}

/// A four-branch angle diversity receiver on the ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverUnit {
    pub center: Vec3,
    pub branches: [DetectorBranch; 4],
}

pub const DEFAULT_BRANCH_AZIMUTHS_DEG: [f64; 4] = [45.0, 135.0, 225.0, 315.0];
pub const DEFAULT_BRANCH_ELEVATION_DEG: f64 = -70.0;
pub const DEFAULT_BRANCH_FOV_DEG: f64 = 21.0;
pub const DEFAULT_BRANCH_AREA_M2: f64 = 4e-6;
pub const DEFAULT_RESPONSIVITY_A_PER_W: f64 = 0.4;

impl ReceiverUnit {
    /// Unit with the default branch set at `center`.
    pub fn with_default_branches(center: Vec3) -> Self {
        let branches = DEFAULT_BRANCH_AZIMUTHS_DEG.map(|az| {
            DetectorBranch::new(
                center,
                az,
                DEFAULT_BRANCH_ELEVATION_DEG,
                DEFAULT_BRANCH_AREA_M2,
                DEFAULT_BRANCH_FOV_DEG,
                DEFAULT_RESPONSIVITY_A_PER_W,
            )
            .expect("default branch is valid")
        });
        Self { center, branches }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Ambient-light photocurrent per branch.
    pub background_current_a: f64,
    /// Input-referred preamplifier current noise density.
    pub preamp_noise_density_a_per_sqrt_hz: f64,
    #[serde(skip)]
    pub electron_charge_c: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            background_current_a: 200e-6,
            preamp_noise_density_a_per_sqrt_hz: 2.7e-12,
            electron_charge_c: ELECTRON_CHARGE_C,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.background_current_a >= 0.0 && self.background_current_a.is_finite()) {
            return Err(invalid("noise.background_current_a", "must be >= 0"));
        }
        if !(self.preamp_noise_density_a_per_sqrt_hz >= 0.0
            && self.preamp_noise_density_a_per_sqrt_hz.is_finite())
        {
            return Err(invalid(
                "noise.preamp_noise_density_a_per_sqrt_hz",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub room: Room,
    pub transmitter: Transmitter,
    pub receiver_units: Vec<ReceiverUnit>,
    pub noise: NoiseConfig,
    pub bit_rate_bps: f64,
    pub steering: SteeringConfig,
}

impl Scenario {
    /// Checks every invariant of the scenario and its parts.
    pub fn validate(&self) -> Result<(), SceneError> {
        self.room.validate()?;
        self.transmitter.validate()?;
        self.noise.validate()?;
        self.steering.validate()?;
        if !(self.bit_rate_bps > 0.0 && self.bit_rate_bps.is_finite()) {
            return Err(invalid("signaling.bit_rate_bps", "bit rate must be > 0"));
        }
        self.check_tx_position(self.transmitter.position)?;
        for (i, unit) in self.receiver_units.iter().enumerate() {
            let c = unit.center;
            if (c.z - self.room.height_m).abs() > 1e-9 {
                return Err(invalid(
                    format!("receivers.units[{i}].center"),
                    "receiver unit must lie on the ceiling plane",
                ));
            }
            if !self.room.footprint_contains(c.x, c.y) {
                return Err(invalid(
                    format!("receivers.units[{i}].center"),
                    "receiver unit outside the room footprint",
                ));
            }
            for (j, b) in unit.branches.iter().enumerate() {
                b.validate().map_err(|e| match e {
                    SceneError::Invalid { field, reason } => invalid(
                        format!(
                            "receivers.units[{i}].branches[{j}].{}",
                            field.trim_start_matches("branch.")
                        ),
                        reason,
                    ),
                    other => other,
                })?;
                if b.position != unit.center {
                    return Err(invalid(
                        format!("receivers.units[{i}].branches[{j}].position"),
                        "branches must be co-located with the unit center",
                    ));
                }
            }
        }
        Ok(())
    }

    /// A transmitter position must be on the communication floor inside the footprint.
    pub fn check_tx_position(&self, p: Vec3) -> Result<(), SceneError> {
        if !p.is_finite() || !self.room.footprint_contains(p.x, p.y) {
            return Err(invalid(
                "transmitter.position",
                "transmitter outside the room footprint",
            ));
        }
        if (p.z - self.room.comm_floor_height_m).abs() > 1e-9 {
            return Err(invalid(
                "transmitter.position",
                "transmitter must sit on the communication floor",
            ));
        }
        Ok(())
    }

    /// All branches in canonical order `(unit, branch)`; the index into this
    /// list is the global branch id.
    pub fn branches(&self) -> Vec<&DetectorBranch> {
        self.receiver_units
            .iter()
            .flat_map(|u| u.branches.iter())
            .collect()
    }

    pub fn branch_count(&self) -> usize {
        self.receiver_units.len() * 4
    }

    /// Moves the transmitter to `position`.
    pub fn with_tx_position(mut self, position: Vec3) -> Self {
        self.transmitter.position = position;
        self
    }
}

/// Ceiling positions of the eight receiver units, in listing order.
pub const REFERENCE_UNIT_CENTERS: [(f64, f64); 8] = [
    (1.0, 1.0),
    (1.0, 3.0),
    (1.0, 5.0),
    (1.0, 7.0),
    (3.0, 1.0),
    (3.0, 3.0),
    (3.0, 5.0),
    (3.0, 7.0),
];

pub const REFERENCE_TX_POWER_W: f64 = 0.150;
pub const REFERENCE_TX_SEMI_ANGLE_DEG: f64 = 40.0;
pub const REFERENCE_BIT_RATE_BPS: f64 = 3.57e9;

/// The reference configuration: 8 x 4 x 3 m room, eight ceiling ADR units,
/// 150 mW / 40 degree IR transmitter at the room center, 3.57 Gb/s OOK.
pub fn reference_scenario() -> Scenario {
    let room = Room::default();
    let units = REFERENCE_UNIT_CENTERS
        .iter()
        .map(|&(x, y)| ReceiverUnit::with_default_branches(Vec3::new(x, y, room.height_m)))
        .collect();
    Scenario {
        transmitter: Transmitter {
            position: Vec3::new(2.0, 4.0, room.comm_floor_height_m),
            orientation: Vec3::UP,
            power_w: REFERENCE_TX_POWER_W,
            semi_angle_deg: REFERENCE_TX_SEMI_ANGLE_DEG,
            lambertian_order_wide: half_power_order(REFERENCE_TX_SEMI_ANGLE_DEG),
        },
        room,
        receiver_units: units,
        noise: NoiseConfig::default(),
        bit_rate_bps: REFERENCE_BIT_RATE_BPS,
        steering: SteeringConfig::default(),
    }
}

// ---- scenario document ---------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScenarioDoc {
    room: Option<Room>,
    transmitter: Option<TransmitterDoc>,
    receivers: Option<ReceiversDoc>,
    noise: Option<NoiseConfig>,
    signaling: Option<SignalingDoc>,
    steering: Option<SteeringConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TransmitterDoc {
    position: Option<Vec3>,
    orientation: Option<Vec3>,
    power_w: Option<f64>,
    semi_angle_deg: Option<f64>,
    /// Absent: derived from the semi-angle by the half-power relation.
    lambertian_order_wide: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReceiversDoc {
    units: Vec<UnitDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitDoc {
    center: Vec3,
    #[serde(default)]
    branches: Option<Vec<BranchDoc>>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BranchDoc {
    azimuth_deg: f64,
    elevation_deg: f64,
    area_m2: f64,
    fov_deg: f64,
    responsivity_a_per_w: f64,
}

impl Default for BranchDoc {
    fn default() -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: DEFAULT_BRANCH_ELEVATION_DEG,
            area_m2: DEFAULT_BRANCH_AREA_M2,
            fov_deg: DEFAULT_BRANCH_FOV_DEG,
            responsivity_a_per_w: DEFAULT_RESPONSIVITY_A_PER_W,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalingDoc {
    bit_rate_bps: f64,
}

/// Parses a JSON scenario document. Missing sections and fields fall back to
/// [`reference_scenario`]; unknown keys are rejected.
pub fn load_scenario(text: &str) -> Result<Scenario, SceneError> {
    let doc: ScenarioDoc = if text.trim().is_empty() {
        ScenarioDoc::default()
    } else {
        serde_json::from_str(text).map_err(|e| SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    };

    let mut scenario = reference_scenario();
    if let Some(room) = doc.room {
        scenario.room = room;
        // Keep the default transmitter on the (possibly moved) communication floor.
        scenario.transmitter.position.z = scenario.room.comm_floor_height_m;
    }
    if let Some(tx) = doc.transmitter {
        let t = &mut scenario.transmitter;
        if let Some(p) = tx.position {
            t.position = p;
        }
        if let Some(o) = tx.orientation {
            t.orientation = o;
        }
        if let Some(p) = tx.power_w {
            t.power_w = p;
        }
        if let Some(a) = tx.semi_angle_deg {
            t.semi_angle_deg = a;
            t.lambertian_order_wide = half_power_order(a);
        }
        if let Some(m) = tx.lambertian_order_wide {
            t.lambertian_order_wide = m;
        }
    }
    if let Some(receivers) = doc.receivers {
        scenario.receiver_units = receivers
            .units
            .into_iter()
            .enumerate()
            .map(|(i, u)| unit_from_doc(i, u))
            .collect::<Result<_, _>>()?;
    }
    if let Some(noise) = doc.noise {
        scenario.noise = noise;
    }
    if let Some(sig) = doc.signaling {
        scenario.bit_rate_bps = sig.bit_rate_bps;
    }
    if let Some(steering) = doc.steering {
        scenario.steering = steering;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn unit_from_doc(i: usize, doc: UnitDoc) -> Result<ReceiverUnit, SceneError> {
    let Some(branches) = doc.branches else {
        return Ok(ReceiverUnit::with_default_branches(doc.center));
    };
    if branches.len() != 4 {
        return Err(invalid(
            format!("receivers.units[{i}].branches"),
            format!("a unit has exactly 4 branches, got {}", branches.len()),
        ));
    }
    let built: Vec<DetectorBranch> = branches
        .into_iter()
        .enumerate()
        .map(|(j, b)| {
            DetectorBranch::new(
                doc.center,
                b.azimuth_deg,
                b.elevation_deg,
                b.area_m2,
                b.fov_deg,
                b.responsivity_a_per_w,
            )
            .map_err(|e| match e {
                SceneError::Invalid { field, reason } => invalid(
                    format!(
                        "receivers.units[{i}].branches[{j}].{}",
                        field.trim_start_matches("branch.")
                    ),
                    reason,
                ),
                SceneError::ElevationOutOfRange(el) => invalid(
                    format!("receivers.units[{i}].branches[{j}].elevation_deg"),
                    format!("elevation {el} outside [-90, 90]"),
                ),
                other => other,
            })
        })
        .collect::<Result<_, _>>()?;
    let branches: [DetectorBranch; 4] = built.try_into().expect("length checked");
    Ok(ReceiverUnit {
        center: doc.center,
        branches,
    })
}
