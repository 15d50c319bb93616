//! Lambertian propagation: line-of-sight gain with FOV filtering, and
//! first/second-order diffuse reflections over the discretized room.
//!
//! Every reflector element is a point re-emitter at its center. Element to
//! branch transfers do not depend on the transmitter, so [`ChannelModel`]
//! precomputes them once per scenario and stores them element-major.
//!
//! Reductions run in a fixed order (bounce, element, branch) and each branch
//! list is stably sorted by delay, so a trace is bit-identical across runs
//! and thread counts.

use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::report::fmt_f64;
use crate::scene::{build_room, Scenario, SceneError, SurfaceElement, Vec3};

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 2.997_924_58e8;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("degenerate geometry: source and receiver coincide")]
    DegenerateGeometry,
    #[error("transmitter position rejected: {0}")]
    Position(#[from] SceneError),
    #[error("max_order must be 0, 1 or 2, got {0}")]
    InvalidOrder(u8),
    #[error("beam divergence must be in (0, 90) deg, got {0}")]
    InvalidDivergence(f64),
    #[error("steering target must lie on the ceiling plane")]
    TargetOffCeiling,
}

/// Lambertian order whose intensity halves at `semi_angle_deg`:
/// `m = -ln 2 / ln(cos(semi_angle))`.
pub fn half_power_order(semi_angle_deg: f64) -> f64 {
    -std::f64::consts::LN_2 / semi_angle_deg.to_radians().cos().ln()
}

/// Radiant intensity (W/sr) of a generalized Lambertian source at
/// `angle_rad` from its axis. Zero at and beyond grazing.
pub fn lambertian_intensity(power_w: f64, order: f64, angle_rad: f64) -> f64 {
    if angle_rad >= PI / 2.0 {
        return 0.0;
    }
    (order + 1.0) / (2.0 * PI) * power_w * angle_rad.cos().powf(order)
}

/// Same as [`lambertian_intensity`] per watt, taking the cosine directly.
#[inline]
fn intensity_per_watt(order: f64, cos_angle: f64) -> f64 {
    if cos_angle <= 0.0 {
        return 0.0;
    }
    let c = if order == 1.0 {
        cos_angle
    } else {
        cos_angle.powf(order)
    };
    (order + 1.0) / (2.0 * PI) * c
}

/// One propagation path arriving at a detector branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathContribution {
    pub branch_id: usize,
    pub power_w: f64,
    pub delay_s: f64,
    pub bounce_order: u8,
}

/// Per-branch path lists, each sorted by ascending delay. Branch ids follow
/// [`Scenario::branches`] order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImpulseResponse {
    branches: Vec<Vec<PathContribution>>,
}

impl ImpulseResponse {
    /// Builds a response from unsorted per-branch lists.
    pub fn from_branches(mut branches: Vec<Vec<PathContribution>>) -> Self {
        for (id, list) in branches.iter_mut().enumerate() {
            debug_assert!(list.iter().all(|c| c.branch_id == id));
            list.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        }
        Self { branches }
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch(&self, branch_id: usize) -> Option<&[PathContribution]> {
        self.branches.get(branch_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PathContribution> {
        self.branches.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.branches.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only contributions of the given bounce order.
    pub fn filter_bounce(&self, bounce_order: u8) -> ImpulseResponse {
        Self {
            branches: self
                .branches
                .iter()
                .map(|l| {
                    l.iter()
                        .copied()
                        .filter(|c| c.bounce_order == bounce_order)
                        .collect()
                })
                .collect(),
        }
    }

    /// Multiplies every contribution power by `k`.
    pub fn scaled(&self, k: f64) -> ImpulseResponse {
        Self {
            branches: self
                .branches
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|c| PathContribution {
                            power_w: c.power_w * k,
                            ..*c
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Writes `branch_id,bounce_order,delay_s,power_w` rows sorted by
    /// `(branch_id, delay_s)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "branch_id,bounce_order,delay_s,power_w")?;
        for c in self.iter() {
            writeln!(
                out,
                "{},{},{},{}",
                c.branch_id,
                c.bounce_order,
                fmt_f64(c.delay_s),
                fmt_f64(c.power_w)
            )?;
        }
        Ok(())
    }
}

/// Horizontal rectangular window at height `z`. An emitter restricted to a
/// window radiates only along rays that cross the plane inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub z: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Window {
    /// Whether the ray from `origin` along `dir` crosses the plane inside the window.
    pub fn passes(&self, origin: Vec3, dir: Vec3) -> bool {
        if !(dir.z > 0.0) || origin.z > self.z {
            return false;
        }
        let t = (self.z - origin.z) / dir.z;
        let x = origin.x + t * dir.x;
        let y = origin.y + t * dir.y;
        let tol = 1e-9;
        x >= self.x_min - tol
            && x <= self.x_max + tol
            && y >= self.y_min - tol
            && y <= self.y_max + tol
    }
}

/// A point source with a generalized Lambertian profile around `axis`,
/// optionally hard-truncated at `cutoff_rad` from the axis and restricted
/// to the rays passing through `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub position: Vec3,
    pub axis: Vec3,
    pub power_w: f64,
    pub order: f64,
    pub cutoff_rad: Option<f64>,
    pub window: Option<Window>,
}

impl Emitter {
    /// Unsteered transmitter: wide profile truncated at the coverage semi-angle.
    pub fn unsteered(scenario: &Scenario, position: Vec3) -> Self {
        let tx = &scenario.transmitter;
        Self {
            position,
            axis: tx.orientation,
            power_w: tx.power_w,
            order: tx.lambertian_order_wide,
            cutoff_rad: Some(tx.semi_angle_deg.to_radians()),
            window: None,
        }
    }

    /// Power per steradian per watt toward the unit direction `dir`.
    #[inline]
    fn intensity_per_watt(&self, dir: Vec3) -> f64 {
        let cos_phi = self.axis.dot(dir);
        if let Some(cut) = self.cutoff_rad {
            // Compare angles, not cosines, so the cone edge is inclusive and exact.
            if cos_phi.clamp(-1.0, 1.0).acos() > cut {
                return 0.0;
            }
        }
        if let Some(w) = &self.window {
            if !w.passes(self.position, dir) {
                return 0.0;
            }
        }
        intensity_per_watt(self.order, cos_phi)
    }

    /// Power delivered to a receiving patch and the path length, if any.
    #[inline]
    fn patch_power(&self, rx_pos: Vec3, rx_normal: Vec3, rx_area: f64) -> Option<(f64, f64)> {
        let v = rx_pos - self.position;
        let d2 = v.norm_squared();
        if d2 == 0.0 {
            return None;
        }
        let d = d2.sqrt();
        let dir = v * (1.0 / d);
        let cos_theta = -rx_normal.dot(dir);
        if cos_theta <= 0.0 {
            return None;
        }
        let i = self.intensity_per_watt(dir);
        if i == 0.0 {
            return None;
        }
        Some((self.power_w * i * cos_theta * rx_area / d2, d))
    }
}

/// Generic LOS transfer between a Lambertian point source and a small
/// receiving aperture. Returns `(gain, distance)` with received power =
/// source power x gain, or `None` when the receiver is outside the source's
/// front hemisphere, behind its own plane, or beyond its FOV.
#[inline]
fn los_kernel(
    src_pos: Vec3,
    src_normal: Vec3,
    src_order: f64,
    rx_pos: Vec3,
    rx_normal: Vec3,
    rx_area: f64,
    rx_cos_fov: f64,
) -> Option<(f64, f64)> {
    let v = rx_pos - src_pos;
    let d2 = v.norm_squared();
    let d = d2.sqrt();
    let dir = v * (1.0 / d);
    let cos_phi = src_normal.dot(dir);
    if cos_phi <= 0.0 {
        return None;
    }
    let cos_theta = -rx_normal.dot(dir);
    if cos_theta <= 0.0 || cos_theta < rx_cos_fov {
        return None;
    }
    Some((
        intensity_per_watt(src_order, cos_phi) * cos_theta * rx_area / d2,
        d,
    ))
}

/// Direct path from a Lambertian source to one detector branch.
///
/// Power is `I(phi) * cos(theta) * A / d^2` with the detector area taken as
/// the subtended solid angle; rays with `theta > fov` or `phi >= 90 deg`
/// give `None`.
pub fn los_contribution(
    source_pos: Vec3,
    source_normal: Vec3,
    source_power_w: f64,
    source_order: f64,
    branch_id: usize,
    branch: &crate::scene::DetectorBranch,
) -> Result<Option<PathContribution>, TraceError> {
    if (branch.position - source_pos).norm_squared() == 0.0 {
        return Err(TraceError::DegenerateGeometry);
    }
    let cos_fov = branch.fov_deg.to_radians().cos();
    Ok(los_kernel(
        source_pos,
        source_normal,
        source_order,
        branch.position,
        branch.normal,
        branch.area_m2,
        cos_fov,
    )
    .map(|(gain, d)| PathContribution {
        branch_id,
        power_w: source_power_w * gain,
        delay_s: d / SPEED_OF_LIGHT_M_PER_S,
        bounce_order: 0,
    }))
}

#[derive(Debug, Clone, Copy)]
struct BranchGeom {
    position: Vec3,
    normal: Vec3,
    area_m2: f64,
    cos_fov: f64,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    branch_id: u32,
    /// Power at the branch per watt incident on the element, reflectivity included.
    gain: f64,
    path_m: f64,
}

/// Element-major sparse table of element -> branch links.
#[derive(Debug, Clone, Default)]
struct LinkTable {
    offsets: Vec<usize>,
    links: Vec<Link>,
}

impl LinkTable {
    fn build(elements: &[SurfaceElement], branches: &[BranchGeom]) -> Self {
        let mut offsets = Vec::with_capacity(elements.len() + 1);
        let mut links = Vec::new();
        offsets.push(0);
        for e in elements {
            if e.reflectivity > 0.0 {
                for (id, b) in branches.iter().enumerate() {
                    if let Some((gain, d)) = los_kernel(
                        e.center, e.normal, e.order, b.position, b.normal, b.area_m2, b.cos_fov,
                    ) {
                        links.push(Link {
                            branch_id: id as u32,
                            gain: e.reflectivity * gain,
                            path_m: d,
                        });
                    }
                }
            }
            offsets.push(links.len());
        }
        Self { offsets, links }
    }

    #[inline]
    fn of(&self, element: usize) -> &[Link] {
        &self.links[self.offsets[element]..self.offsets[element + 1]]
    }
}

/// Scenario geometry with precomputed reflector-to-detector transfers.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    scenario: Scenario,
    branches: Vec<BranchGeom>,
    first: Vec<SurfaceElement>,
    second: Vec<SurfaceElement>,
    first_links: LinkTable,
    second_links: LinkTable,
    /// Second-order elements that reach at least one branch.
    second_visible: Vec<usize>,
}

impl ChannelModel {
    pub fn new(scenario: &Scenario) -> Self {
        let branches: Vec<BranchGeom> = scenario
            .branches()
            .into_iter()
            .map(|b| BranchGeom {
                position: b.position,
                normal: b.normal,
                area_m2: b.area_m2,
                cos_fov: b.fov_deg.to_radians().cos(),
            })
            .collect();
        let grids = build_room(&scenario.room);
        let first_links = LinkTable::build(&grids.first_order, &branches);
        let second_links = LinkTable::build(&grids.second_order, &branches);
        let second_visible = (0..grids.second_order.len())
            .filter(|&i| !second_links.of(i).is_empty())
            .collect();
        Self {
            scenario: scenario.clone(),
            branches,
            first: grids.first_order,
            second: grids.second_order,
            first_links,
            second_links,
            second_visible,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn first_order_elements(&self) -> &[SurfaceElement] {
        &self.first
    }

    pub fn second_order_elements(&self) -> &[SurfaceElement] {
        &self.second
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Unsteered wide-beam trace from `tx_pos`.
    pub fn trace_unsteered(
        &self,
        tx_pos: Vec3,
        max_order: u8,
    ) -> Result<ImpulseResponse, TraceError> {
        self.scenario.check_tx_position(tx_pos)?;
        self.trace(&Emitter::unsteered(&self.scenario, tx_pos), max_order)
    }

    /// Traces all paths of up to `max_order` bounces from `emitter`.
    pub fn trace(&self, emitter: &Emitter, max_order: u8) -> Result<ImpulseResponse, TraceError> {
        if max_order > 2 {
            return Err(TraceError::InvalidOrder(max_order));
        }
        let mut lists: Vec<Vec<PathContribution>> = vec![Vec::new(); self.branches.len()];
        self.los_into(emitter, &mut lists)?;
        if max_order >= 1 {
            self.first_bounce_into(emitter, &mut lists);
        }
        if max_order >= 2 {
            self.second_bounce_into(emitter, &mut lists);
        }
        Ok(ImpulseResponse::from_branches(lists))
    }

    fn los_into(
        &self,
        emitter: &Emitter,
        lists: &mut [Vec<PathContribution>],
    ) -> Result<(), TraceError> {
        for (id, b) in self.branches.iter().enumerate() {
            let v = b.position - emitter.position;
            if v.norm_squared() == 0.0 {
                return Err(TraceError::DegenerateGeometry);
            }
            if let Some((gain, d)) = los_kernel(
                emitter.position,
                emitter.axis,
                emitter.order,
                b.position,
                b.normal,
                b.area_m2,
                b.cos_fov,
            ) {
                // The truncated cone is applied on top of the plain kernel.
                let dir = v * (1.0 / d);
                if emitter.intensity_per_watt(dir) == 0.0 {
                    continue;
                }
                lists[id].push(PathContribution {
                    branch_id: id,
                    power_w: emitter.power_w * gain,
                    delay_s: d / SPEED_OF_LIGHT_M_PER_S,
                    bounce_order: 0,
                });
            }
        }
        Ok(())
    }

    fn first_bounce_into(&self, emitter: &Emitter, lists: &mut [Vec<PathContribution>]) {
        for (i, e) in self.first.iter().enumerate() {
            let links = self.first_links.of(i);
            if links.is_empty() {
                continue;
            }
            let Some((incident, d1)) = emitter.patch_power(e.center, e.normal, e.area_m2) else {
                continue;
            };
            for l in links {
                let power = incident * l.gain;
                if power > 0.0 {
                    let id = l.branch_id as usize;
                    lists[id].push(PathContribution {
                        branch_id: id,
                        power_w: power,
                        delay_s: (d1 + l.path_m) / SPEED_OF_LIGHT_M_PER_S,
                        bounce_order: 1,
                    });
                }
            }
        }
    }

    fn second_bounce_into(&self, emitter: &Emitter, lists: &mut [Vec<PathContribution>]) {
        // Each first reflector is independent; results are concatenated in element order.
        let per_element: Vec<Vec<PathContribution>> = (0..self.second.len())
            .into_par_iter()
            .map(|a| self.second_bounce_from(emitter, a))
            .collect();
        for c in per_element.into_iter().flatten() {
            lists[c.branch_id].push(c);
        }
    }

    fn second_bounce_from(&self, emitter: &Emitter, a: usize) -> Vec<PathContribution> {
        let ea = &self.second[a];
        if ea.reflectivity == 0.0 {
            return Vec::new();
        }
        let Some((incident, d1)) = emitter.patch_power(ea.center, ea.normal, ea.area_m2) else {
            return Vec::new();
        };
        let reradiated = incident * ea.reflectivity;
        let mut out = Vec::new();
        for &b in &self.second_visible {
            if b == a || self.second[b].surface == ea.surface {
                // Coplanar pairs exchange no power.
                continue;
            }
            let eb = &self.second[b];
            let Some((gain_ab, d2)) = los_kernel(
                ea.center, ea.normal, ea.order, eb.center, eb.normal, eb.area_m2, 0.0,
            ) else {
                continue;
            };
            let at_b = reradiated * gain_ab;
            for l in self.second_links.of(b) {
                let power = at_b * l.gain;
                if power > 0.0 {
                    out.push(PathContribution {
                        branch_id: l.branch_id as usize,
                        power_w: power,
                        delay_s: (d1 + d2 + l.path_m) / SPEED_OF_LIGHT_M_PER_S,
                        bounce_order: 2,
                    });
                }
            }
        }
        out
    }
}

/// Power incident on each element (cosine capture, no FOV limit) from `emitter`.
pub fn incident_powers(emitter: &Emitter, elements: &[SurfaceElement]) -> Vec<f64> {
    elements
        .iter()
        .map(|e| {
            emitter
                .patch_power(e.center, e.normal, e.area_m2)
                .map_or(0.0, |(p, _)| p)
        })
        .collect()
}

/// Power leaving a Lambertian source of order `m` within `cutoff_rad` of its axis.
pub fn cone_power(power_w: f64, order: f64, cutoff_rad: f64) -> f64 {
    power_w * (1.0 - cutoff_rad.cos().powf(order + 1.0))
}

/// Traces the unsteered transmitter at `tx_pos` through up to `max_order` reflections.
pub fn trace_unsteered(
    scenario: &Scenario,
    tx_pos: Vec3,
    max_order: u8,
) -> Result<ImpulseResponse, TraceError> {
    if max_order > 2 {
        return Err(TraceError::InvalidOrder(max_order));
    }
    scenario.check_tx_position(tx_pos)?;
    ChannelModel::new(scenario).trace_unsteered(tx_pos, max_order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{reference_scenario, DetectorBranch, Room};

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn window_gates_rays() {
        let w = Window {
            z: 3.0,
            x_min: 1.0,
            x_max: 2.0,
            y_min: 1.0,
            y_max: 2.0,
        };
        let o = Vec3::new(1.5, 1.5, 1.0);
        assert!(w.passes(o, Vec3::UP));
        assert!(w.passes(o, Vec3::new(0.5, 0.5, 2.0).normalized().unwrap()));
        assert!(!w.passes(o, Vec3::new(0.6, 0.0, 2.0).normalized().unwrap()));
        assert!(!w.passes(o, Vec3::DOWN));
        assert!(!w.passes(Vec3::new(1.5, 1.5, 3.5), Vec3::UP));
    }

    #[test]
    fn intensity_examples() {
        assert!(close(
            lambertian_intensity(1.0, 1.0, 0.0),
            std::f64::consts::FRAC_1_PI,
            1e-12
        ));
        assert_eq!(lambertian_intensity(3.0, 2.0, PI / 2.0), 0.0);
        assert_eq!(lambertian_intensity(3.0, 2.0, 2.0), 0.0);
        // (2 / 2 pi) * 0.15 * cos(pi / 3)
        assert!(close(
            lambertian_intensity(0.15, 1.0, PI / 3.0),
            0.023_873_241_463_784_3,
            1e-12
        ));
    }

    #[test]
    fn half_power_orders() {
        assert!(close(half_power_order(40.0), 2.600_780_231_515_868, 1e-12));
        assert!(close(half_power_order(60.0), 1.0, 1e-12));
        assert!(close(half_power_order(2.0), 1_137.502_905_697_900_4, 1e-9));
    }

    fn down_detector(pos: Vec3, fov: f64) -> DetectorBranch {
        DetectorBranch::new(pos, 0.0, -90.0, 4e-6, fov, 0.4).unwrap()
    }

    #[test]
    fn los_overhead_detector() {
        let b = down_detector(Vec3::new(2.0, 4.0, 3.0), 90.0);
        let c = los_contribution(Vec3::new(2.0, 4.0, 1.0), Vec3::UP, 0.15, 2.60, 0, &b)
            .unwrap()
            .unwrap();
        // (3.6 / 2 pi) * 0.15 * 4e-6 / 4 and 2 m / c.
        assert!(
            close(c.power_w, 8.594_366_926_962_348e-8, 1e-12),
            "{}",
            c.power_w
        );
        assert!(close(c.delay_s, 6.671_281_903_963_041e-9, 1e-12));
        assert_eq!(c.bounce_order, 0);
    }

    #[test]
    fn los_fov_and_backside_cuts() {
        let src = Vec3::new(0.0, 0.0, 0.0);
        // Detector normal tilted 30 deg from the incoming ray.
        let pos = Vec3::new(0.0, 0.0, 2.0);
        let b = DetectorBranch::new(pos, 0.0, -60.0, 4e-6, 21.0, 0.4).unwrap();
        assert_eq!(
            los_contribution(src, Vec3::UP, 1.0, 1.0, 0, &b).unwrap(),
            None
        );
        let wide = DetectorBranch {
            fov_deg: 35.0,
            ..b.clone()
        };
        assert!(los_contribution(src, Vec3::UP, 1.0, 1.0, 0, &wide)
            .unwrap()
            .is_some());
        // Detector facing away from the source.
        let back = DetectorBranch::new(pos, 0.0, 90.0, 4e-6, 90.0, 0.4).unwrap();
        assert_eq!(
            los_contribution(src, Vec3::UP, 1.0, 1.0, 0, &back).unwrap(),
            None
        );
        // Source facing away from the detector.
        assert_eq!(
            los_contribution(src, Vec3::DOWN, 1.0, 1.0, 0, &wide).unwrap(),
            None
        );
    }

    #[test]
    fn los_coincident_is_error() {
        let b = down_detector(Vec3::new(1.0, 1.0, 1.0), 90.0);
        assert_eq!(
            los_contribution(Vec3::new(1.0, 1.0, 1.0), Vec3::UP, 1.0, 1.0, 0, &b),
            Err(TraceError::DegenerateGeometry)
        );
    }

    #[test]
    fn los_reciprocity_for_matched_ends() {
        let p1 = Vec3::new(0.3, 1.2, 0.4);
        let p2 = Vec3::new(2.1, 0.7, 2.9);
        let n1 = Vec3::new(0.2, -0.1, 1.0).normalized().unwrap();
        let n2 = Vec3::new(-0.4, 0.3, -1.0).normalized().unwrap();
        let (g12, _) = los_kernel(p1, n1, 1.0, p2, n2, 1e-4, 0.0).unwrap();
        let (g21, _) = los_kernel(p2, n2, 1.0, p1, n1, 1e-4, 0.0).unwrap();
        assert!(close(g12, g21, 1e-12));
    }

    #[test]
    fn unsteered_below_unit_hits_all_four_branches() {
        let s = reference_scenario();
        let ir = trace_unsteered(&s, Vec3::new(1.0, 3.0, 1.0), 0).unwrap();
        // Unit 1 sits at (1, 3, 3): branches 4..8.
        let powers: Vec<f64> = (4..8)
            .map(|id| ir.branch(id).unwrap().iter().map(|c| c.power_w).sum())
            .collect();
        assert!(powers.iter().all(|&p| p > 0.0));
        for p in &powers {
            assert!(close(*p, powers[0], 1e-12));
        }
    }

    #[test]
    fn zero_reflectivity_removes_reflections() {
        let mut s = reference_scenario();
        s.room.reflectivity_ceiling = 0.0;
        s.room.reflectivity_walls = 0.0;
        s.room.reflectivity_floor = 0.0;
        let tx = Vec3::new(2.0, 2.0, 1.0);
        let model = ChannelModel::new(&s);
        assert_eq!(
            model.trace_unsteered(tx, 2).unwrap(),
            model.trace_unsteered(tx, 0).unwrap()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = reference_scenario();
        assert!(matches!(
            trace_unsteered(&s, Vec3::new(5.0, 4.0, 1.0), 0),
            Err(TraceError::Position(_))
        ));
        assert_eq!(
            trace_unsteered(&s, Vec3::new(2.0, 4.0, 1.0), 3),
            Err(TraceError::InvalidOrder(3))
        );
    }

    #[test]
    fn contributions_sorted_and_causal() {
        let s = reference_scenario();
        let tx = Vec3::new(2.0, 1.0, 1.0);
        let ir = trace_unsteered(&s, tx, 2).unwrap();
        assert!(!ir.is_empty());
        assert_eq!(ir.branch_count(), s.branch_count());
        for (id, branch) in s.branches().into_iter().enumerate() {
            let list = ir.branch(id).unwrap();
            assert!(list.windows(2).all(|w| w[0].delay_s <= w[1].delay_s));
            let straight = (branch.position - tx).norm();
            let min1 = list
                .iter()
                .filter(|c| c.bounce_order == 1)
                .map(|c| c.delay_s)
                .fold(f64::INFINITY, f64::min);
            for c in list {
                assert_eq!(c.branch_id, id);
                assert!(c.power_w >= 0.0 && c.delay_s > 0.0);
                assert!(c.delay_s * SPEED_OF_LIGHT_M_PER_S >= straight * (1.0 - 1e-12));
                if c.bounce_order == 2 && min1.is_finite() {
                    assert!(c.delay_s >= min1 * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn cone_power_closed_form() {
        let m = half_power_order(40.0);
        assert!(close(
            cone_power(0.15, m, 40f64.to_radians()),
            0.15 * 0.616_977_778_440_511,
            1e-12
        ));
        assert!(close(cone_power(1.0, 1.0, PI / 2.0), 1.0, 1e-12));
    }

    #[test]
    fn small_room_energy_capture() {
        // Unit-order emitter at the floor center of a cube: the six surfaces
        // together capture the full hemisphere.
        let room = Room {
            length_m: 3.0,
            width_m: 3.0,
            height_m: 3.0,
            comm_floor_height_m: 0.5,
            ..Room::default()
        };
        let em = Emitter {
            position: Vec3::new(1.5, 1.5, 0.5),
            axis: Vec3::UP,
            power_w: 1.0,
            order: 1.0,
            cutoff_rad: None,
            window: None,
        };
        let total: f64 = incident_powers(&em, &crate::scene::tile_room(&room, 0.02))
            .iter()
            .sum();
        assert!(close(total, 1.0, 0.01), "{total}");
    }
}
