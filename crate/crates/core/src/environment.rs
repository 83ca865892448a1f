//! Indoor scene geometry: room, reflectors, scatterers, the RIS panel, the
//! moving agent, and the virtual landmarks induced by single-bounce mirrors.
//!
//! The agent position is the Rx phase center. The Tx sits at a fixed body
//! offset from it (`Environment::tx_offset`); the agent never rotates, so the
//! offset is constant in world coordinates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-12;
const INSIDE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    /// Width, depth and height in meters; the room spans `[0, extents]`.
    pub extents: Vec3,
}

impl Room {
    pub fn new(width: f64, depth: f64, height: f64) -> Result<Self, EnvError> {
        let room = Self {
            extents: Vec3::new(width, depth, height),
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.extents.iter().all(|&e| e > 0.0 && e.is_finite()) {
            Ok(())
        } else {
            Err(EnvError::InvalidScene(format!(
                "room extents must be positive, got {:?}",
                self.extents
            )))
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= -INSIDE_TOL && p[i] <= self.extents[i] + INSIDE_TOL)
    }
}

/// An infinite plane given by a point on it and a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self, EnvError> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EnvError::InvalidScene("plane normal is zero".into()));
        }
        Ok(Self {
            point,
            normal: normal / norm,
        })
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// Intersection of segment `a -> b` with the plane, as the parameter in
    /// `[0, 1]` and the point. `None` if the segment is parallel to or does
    /// not reach the plane.
    pub fn intersect_segment(&self, a: &Vec3, b: &Vec3) -> Option<(f64, Vec3)> {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        let denom = da - db;
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = da / denom;
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            return None;
        }
        Some((t, a + (b - a) * t))
    }
}

/// Reflection of `point` across `plane`.
pub fn mirror_point(point: &Vec3, plane: &Plane) -> Vec3 {
    point - plane.normal * (2.0 * plane.signed_distance(point))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub plane: Plane,
    pub reflection_coefficient: f64,
}

impl Reflector {
    pub fn new(plane: Plane, reflection_coefficient: f64) -> Result<Self, EnvError> {
        let r = Self {
            plane,
            reflection_coefficient,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if (self.plane.normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(EnvError::InvalidScene(
                "reflector normal is not unit".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reflection_coefficient) {
            return Err(EnvError::InvalidScene(format!(
                "reflection coefficient {} outside [0, 1]",
                self.reflection_coefficient
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vec3,
    /// Radar cross-section in m².
    pub radar_cross_section: f64,
    pub radius: f64,
}

impl Scatterer {
    /// A sphere whose cross-section is its projected disc area.
    pub fn sphere(position: Vec3, radius: f64) -> Self {
        Self {
            position,
            radar_cross_section: std::f64::consts::PI * radius * radius,
            radius,
        }
    }
}

/// Element radiation pattern `F(θ, φ)` with θ measured from the panel normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RadiationPattern {
    #[default]
    Cosine,
    Isotropic,
}

impl RadiationPattern {
    pub fn eval(&self, cos_theta: f64) -> f64 {
        match self {
            RadiationPattern::Cosine => cos_theta.max(0.0),
            RadiationPattern::Isotropic => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisPanel {
    pub center: Vec3,
    /// In-plane axis along the columns (spacing `element_dx`).
    pub u_axis: Vec3,
    /// In-plane axis along the rows (spacing `element_dy`).
    pub v_axis: Vec3,
    /// Normal pointing into the room.
    pub normal: Vec3,
    pub rows: usize,
    pub cols: usize,
    pub element_dx: f64,
    pub element_dy: f64,
    /// Linear element gain `G_R`.
    pub element_gain: f64,
    /// Reflection amplitude `A` in (0, 1].
    pub reflection_amplitude: f64,
    pub phase_levels: u32,
    pub pattern: RadiationPattern,
}

impl RisPanel {
    pub fn validate(&self) -> Result<(), EnvError> {
        let frame_ok = (self.u_axis.norm() - 1.0).abs() < 1e-9
            && (self.v_axis.norm() - 1.0).abs() < 1e-9
            && (self.normal.norm() - 1.0).abs() < 1e-9
            && self.u_axis.dot(&self.v_axis).abs() < 1e-9
            && self.u_axis.dot(&self.normal).abs() < 1e-9
            && self.v_axis.dot(&self.normal).abs() < 1e-9;
        if !frame_ok {
            return Err(EnvError::InvalidScene(
                "RIS frame is not orthonormal".into(),
            ));
        }
        if self.rows == 0 || self.cols == 0 || self.phase_levels == 0 {
            return Err(EnvError::InvalidScene(
                "RIS dimensions must be positive".into(),
            ));
        }
        if !(self.reflection_amplitude > 0.0 && self.reflection_amplitude <= 1.0) {
            return Err(EnvError::InvalidScene(
                "RIS amplitude outside (0, 1]".into(),
            ));
        }
        if !(self.element_dx > 0.0 && self.element_dy > 0.0 && self.element_gain > 0.0) {
            return Err(EnvError::InvalidScene(
                "RIS element size and gain must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn phase_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.phase_levels as f64
    }

    /// Element offsets from the panel center, row-major.
    pub fn element_offsets(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.element_count());
        let r0 = (self.rows as f64 - 1.0) / 2.0;
        let c0 = (self.cols as f64 - 1.0) / 2.0;
        for n in 0..self.rows {
            for m in 0..self.cols {
                out.push(
                    self.v_axis * ((n as f64 - r0) * self.element_dy)
                        + self.u_axis * ((m as f64 - c0) * self.element_dx),
                );
            }
        }
        out
    }

    /// Largest side of the panel aperture.
    pub fn aperture(&self) -> f64 {
        (self.rows as f64 * self.element_dy).max(self.cols as f64 * self.element_dx)
    }

    pub fn far_field_radius(&self, wavelength: f64) -> f64 {
        2.0 * self.aperture().powi(2) / wavelength
    }

    /// A copy of this panel with a different size, keeping everything else.
    pub fn resized(&self, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandmarkKind {
    #[serde(rename = "PS")]
    Ps,
    #[serde(rename = "VS")]
    Vs,
    #[serde(rename = "RIS")]
    Ris,
    #[serde(rename = "VRIS")]
    Vris,
    #[serde(rename = "VT")]
    Vt,
}

impl LandmarkKind {
    pub fn is_virtual(&self) -> bool {
        matches!(
            self,
            LandmarkKind::Vs | LandmarkKind::Vris | LandmarkKind::Vt
        )
    }

    pub fn involves_ris(&self) -> bool {
        matches!(self, LandmarkKind::Ris | LandmarkKind::Vris)
    }
}

/// The physical object a landmark stems from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceId {
    Scatterer(usize),
    Ris,
    Transmitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub kind: LandmarkKind,
    pub position: Vec3,
    /// Path length in meters travelled before reaching the landmark.
    pub extra_delay: f64,
    pub source_id: SourceId,
    pub reflector: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub room: Room,
    pub reflectors: Vec<Reflector>,
    pub scatterers: Vec<Scatterer>,
    pub ris: Vec<RisPanel>,
    /// Tx phase center relative to the Rx phase center.
    pub tx_offset: Vec3,
}

impl Environment {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.room.validate()?;
        for r in &self.reflectors {
            r.validate()?;
        }
        for s in &self.scatterers {
            if !(s.radar_cross_section > 0.0) {
                return Err(EnvError::InvalidScene(
                    "scatterer RCS must be positive".into(),
                ));
            }
            if !self.room.contains(&s.position) {
                return Err(EnvError::InvalidScene("scatterer outside the room".into()));
            }
        }
        for p in &self.ris {
            p.validate()?;
        }
        Ok(())
    }

    /// The single RIS panel, if any.
    pub fn panel(&self) -> Result<Option<&RisPanel>, EnvError> {
        match self.ris.len() {
            0 => Ok(None),
            1 => Ok(Some(&self.ris[0])),
            n => Err(EnvError::MultipleRis(n)),
        }
    }

    pub fn tx_position(&self, agent: &AgentState) -> Vec3 {
        agent.position + self.tx_offset
    }

    pub fn without_ris(&self) -> Self {
        Self {
            ris: Vec::new(),
            ..self.clone()
        }
    }
}

/// Every landmark of the scene for the given agent pose: one PS per
/// scatterer, the RIS, one VT per reflector, and one VS / VRIS per
/// (object, reflector) pair.
pub fn derive_virtual_landmarks(
    env: &Environment,
    agent: &AgentState,
) -> Result<Vec<Landmark>, EnvError> {
    let panel = env.panel()?;
    let tx = env.tx_position(agent);
    let mut out = Vec::new();
    for (i, s) in env.scatterers.iter().enumerate() {
        out.push(Landmark {
            kind: LandmarkKind::Ps,
            position: s.position,
            extra_delay: 0.0,
            source_id: SourceId::Scatterer(i),
            reflector: None,
        });
    }
    if let Some(p) = panel {
        out.push(Landmark {
            kind: LandmarkKind::Ris,
            position: p.center,
            extra_delay: 0.0,
            source_id: SourceId::Ris,
            reflector: None,
        });
    }
    for (r, refl) in env.reflectors.iter().enumerate() {
        out.push(Landmark {
            kind: LandmarkKind::Vt,
            position: mirror_point(&tx, &refl.plane),
            extra_delay: 0.0,
            source_id: SourceId::Transmitter,
            reflector: Some(r),
        });
    }
    for (r, refl) in env.reflectors.iter().enumerate() {
        for (i, s) in env.scatterers.iter().enumerate() {
            out.push(Landmark {
                kind: LandmarkKind::Vs,
                position: mirror_point(&s.position, &refl.plane),
                extra_delay: (s.position - tx).norm(),
                source_id: SourceId::Scatterer(i),
                reflector: Some(r),
            });
        }
        if let Some(p) = panel {
            out.push(Landmark {
                kind: LandmarkKind::Vris,
                position: mirror_point(&p.center, &refl.plane),
                extra_delay: (p.center - tx).norm(),
                source_id: SourceId::Ris,
                reflector: Some(r),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Index into the landmark list this path was derived from.
    pub landmark_id: usize,
    pub kind: LandmarkKind,
    /// Vertices Tx, intermediate points..., Rx.
    pub vertices: Vec<Vec3>,
    pub total_length: f64,
    /// Azimuth of the arrival direction (pointing from Rx back along the ray).
    pub aoa: f64,
    pub elevation: f64,
    pub via_ris: bool,
}

impl PropagationPath {
    pub fn segments(&self) -> Vec<Vec3> {
        self.vertices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn leg_lengths(&self) -> Vec<f64> {
        self.segments().iter().map(|s| s.norm()).collect()
    }

    /// Unit vector from the Rx toward the apparent source.
    pub fn arrival_direction(&self) -> Vec3 {
        let n = self.vertices.len();
        (self.vertices[n - 2] - self.vertices[n - 1]).normalize()
    }

    /// Gradient of the path length with respect to a rigid translation of
    /// the agent (both Tx and Rx move). Intermediate reflection points are
    /// stationary by Fermat's principle, so only the two agent legs count.
    pub fn agent_gradient(&self) -> Vec3 {
        let n = self.vertices.len();
        let tx_leg = (self.vertices[0] - self.vertices[1]).normalize();
        let rx_leg = (self.vertices[n - 1] - self.vertices[n - 2]).normalize();
        tx_leg + rx_leg
    }
}

pub fn azimuth_elevation(dir: &Vec3) -> (f64, f64) {
    let az = dir.y.atan2(dir.x);
    let el = (dir.z / dir.norm()).clamp(-1.0, 1.0).asin();
    (az, el)
}

pub fn direction_from(az: f64, el: f64) -> Vec3 {
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

fn make_path(
    landmark_id: usize,
    kind: LandmarkKind,
    vertices: Vec<Vec3>,
) -> Result<PropagationPath, EnvError> {
    let mut total = 0.0;
    for w in vertices.windows(2) {
        let l = (w[1] - w[0]).norm();
        if l < 1e-9 {
            return Err(EnvError::Degenerate(format!(
                "zero-length segment on {kind:?} path {landmark_id}"
            )));
        }
        total += l;
    }
    let n = vertices.len();
    let (aoa, elevation) = azimuth_elevation(&(vertices[n - 2] - vertices[n - 1]));
    Ok(PropagationPath {
        landmark_id,
        kind,
        vertices,
        total_length: total,
        aoa,
        elevation,
        via_ris: kind.involves_ris(),
    })
}

/// Reflection point on `refl` for a ray arriving at `rx` from the mirrored
/// source `virtual_src`, if it lies on the physical wall inside the room.
fn reflection_point(
    env: &Environment,
    refl: &Reflector,
    virtual_src: &Vec3,
    rx: &Vec3,
    real_src: &Vec3,
) -> Option<Vec3> {
    let plane = &refl.plane;
    // the real source and the receiver must be on the same side
    if plane.signed_distance(real_src) * plane.signed_distance(rx) <= 0.0 {
        return None;
    }
    let (_, p) = plane.intersect_segment(virtual_src, rx)?;
    env.room.contains(&p).then_some(p)
}

/// One unoccluded path per landmark. Paths whose reflection point falls
/// outside the room, or which hit the RIS from behind, are dropped.
pub fn propagation_paths(
    env: &Environment,
    agent: &AgentState,
) -> Result<Vec<PropagationPath>, EnvError> {
    let landmarks = derive_virtual_landmarks(env, agent)?;
    let panel = env.panel()?;
    let rx = agent.position;
    let tx = env.tx_position(agent);
    let mut out = Vec::with_capacity(landmarks.len());
    for (id, lm) in landmarks.iter().enumerate() {
        let path = match lm.kind {
            LandmarkKind::Ps => Some(make_path(id, lm.kind, vec![tx, lm.position, rx])?),
            LandmarkKind::Ris => {
                let p = panel.expect("RIS landmark without panel");
                let front =
                    (tx - p.center).dot(&p.normal) > 0.0 && (rx - p.center).dot(&p.normal) > 0.0;
                if front {
                    Some(make_path(id, lm.kind, vec![tx, lm.position, rx])?)
                } else {
                    None
                }
            }
            LandmarkKind::Vt => {
                let refl = &env.reflectors[lm.reflector.unwrap()];
                match reflection_point(env, refl, &lm.position, &rx, &tx) {
                    Some(p) => Some(make_path(id, lm.kind, vec![tx, p, rx])?),
                    None => None,
                }
            }
            LandmarkKind::Vs | LandmarkKind::Vris => {
                let refl = &env.reflectors[lm.reflector.unwrap()];
                let src = match lm.source_id {
                    SourceId::Scatterer(i) => env.scatterers[i].position,
                    _ => panel.expect("VRIS landmark without panel").center,
                };
                let ris_ok = match (lm.kind, panel) {
                    (LandmarkKind::Vris, Some(p)) => {
                        let rx_img = mirror_point(&rx, &refl.plane);
                        (tx - p.center).dot(&p.normal) > 0.0
                            && (rx_img - p.center).dot(&p.normal) > 0.0
                    }
                    _ => true,
                };
                match reflection_point(env, refl, &lm.position, &rx, &src) {
                    Some(p) if ris_ok => Some(make_path(id, lm.kind, vec![tx, src, p, rx])?),
                    _ => None,
                }
            }
        };
        if let Some(path) = path {
            if path.vertices.iter().all(|v| env.room.contains(v)) {
                out.push(path);
            }
        }
    }
    Ok(out)
}

/// Constant-velocity ground-truth motion.
pub fn advance_ground_truth(
    agent: &AgentState,
    dt: f64,
    room: &Room,
) -> Result<AgentState, EnvError> {
    if dt < 0.0 {
        return Err(EnvError::NegativeStep(dt));
    }
    let next = AgentState {
        position: agent.position + agent.velocity * dt,
        velocity: agent.velocity,
    };
    if !room.contains(&next.position) {
        let p = next.position;
        return Err(EnvError::LeftRoom {
            position: [p.x, p.y, p.z],
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn wall_x0() -> Plane {
        Plane::new(Vec3::zeros(), Vec3::x()).unwrap()
    }

    #[test]
    fn mirror_examples() {
        let m = mirror_point(&Vec3::new(1.0, 2.0, 1.0), &wall_x0());
        assert_abs_diff_eq!(m, Vec3::new(-1.0, 2.0, 1.0), epsilon = 1e-15);
        let on = Vec3::new(0.0, 4.0, -2.0);
        assert_abs_diff_eq!(mirror_point(&on, &wall_x0()), on, epsilon = 1e-15);
        let ceiling = Plane::new(Vec3::new(0.0, 0.0, 3.0), Vec3::z()).unwrap();
        let m = mirror_point(&Vec3::new(3.0, 3.0, 1.5), &ceiling);
        assert_abs_diff_eq!(m, Vec3::new(3.0, 3.0, 4.5), epsilon = 1e-15);
    }

    fn tiny_scene(reflectors: usize) -> Environment {
        let panel = crate::scenario::Scenario::default()
            .build_environment()
            .unwrap()
            .ris[0]
            .clone();
        Environment {
            room: Room::new(6.0, 6.0, 3.0).unwrap(),
            reflectors: (0..reflectors)
                .map(|_| Reflector::new(wall_x0(), 0.85).unwrap())
                .collect(),
            scatterers: vec![Scatterer::sphere(Vec3::new(2.0, 1.0, 1.0), 0.05)],
            ris: vec![panel],
            tx_offset: Vec3::zeros(),
        }
    }

    #[test]
    fn landmark_enumeration() {
        let agent = AgentState {
            position: Vec3::new(1.0, 1.0, 0.0),
            velocity: Vec3::zeros(),
        };
        let lms = derive_virtual_landmarks(&tiny_scene(1), &agent).unwrap();
        let kinds: Vec<_> = lms.iter().map(|l| l.kind).collect();
        assert_eq!(
            kinds,
            vec![
                LandmarkKind::Ps,
                LandmarkKind::Ris,
                LandmarkKind::Vt,
                LandmarkKind::Vs,
                LandmarkKind::Vris
            ]
        );
        let vs = lms.iter().find(|l| l.kind == LandmarkKind::Vs).unwrap();
        assert_abs_diff_eq!(vs.position, Vec3::new(-2.0, 1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            vs.extra_delay,
            Vec3::new(1.0, 0.0, 1.0).norm(),
            epsilon = 1e-12
        );

        let lms = derive_virtual_landmarks(&tiny_scene(0), &agent).unwrap();
        assert_eq!(lms.len(), 2);

        let mut two = tiny_scene(0);
        two.ris.push(two.ris[0].clone());
        assert_eq!(
            derive_virtual_landmarks(&two, &agent),
            Err(EnvError::MultipleRis(2))
        );
    }

    #[test]
    fn path_lengths() {
        let env = tiny_scene(0);
        let agent = AgentState {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
        };
        let paths = propagation_paths(&env, &agent).unwrap();
        let ps = paths.iter().find(|p| p.kind == LandmarkKind::Ps).unwrap();
        assert_abs_diff_eq!(ps.total_length, 2.0 * 6f64.sqrt(), epsilon = 1e-12);

        let agent = AgentState {
            position: Vec3::new(3.0, 3.0, 0.0),
            velocity: Vec3::zeros(),
        };
        let paths = propagation_paths(&env, &agent).unwrap();
        let ris = paths.iter().find(|p| p.kind == LandmarkKind::Ris).unwrap();
        assert_abs_diff_eq!(ris.total_length, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ris.elevation, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn vs_longer_than_ps() {
        let mut env = tiny_scene(1);
        env.tx_offset = Vec3::new(0.0707, 0.0707, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                let agent = AgentState {
                    position: Vec3::new(0.5 + i as f64, 0.5 + j as f64, 0.0),
                    velocity: Vec3::zeros(),
                };
                let paths = propagation_paths(&env, &agent).unwrap();
                let ps = paths.iter().find(|p| p.kind == LandmarkKind::Ps).unwrap();
                if let Some(vs) = paths.iter().find(|p| p.kind == LandmarkKind::Vs) {
                    assert!(vs.total_length > ps.total_length);
                }
                let tx = env.tx_position(&agent);
                for p in &paths {
                    assert!(p.total_length >= (tx - agent.position).norm());
                }
            }
        }
    }

    #[test]
    fn coincident_agent_rejected() {
        let env = tiny_scene(0);
        let agent = AgentState {
            position: Vec3::new(2.0, 1.0, 1.0),
            velocity: Vec3::zeros(),
        };
        assert!(matches!(
            propagation_paths(&env, &agent),
            Err(EnvError::Degenerate(_))
        ));
    }

    #[test]
    fn ground_truth_motion() {
        let room = Room::new(6.0, 6.0, 3.0).unwrap();
        let a = AgentState {
            position: Vec3::zeros(),
            velocity: Vec3::new(0.0707, 0.0707, 0.0),
        };
        let b = advance_ground_truth(&a, 0.1, &room).unwrap();
        assert_abs_diff_eq!(
            b.position,
            Vec3::new(0.00707, 0.00707, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(advance_ground_truth(&a, 0.0, &room).unwrap(), a);
        let mut s = a;
        for _ in 0..600 {
            s = advance_ground_truth(&s, 0.1, &room).unwrap();
        }
        assert_abs_diff_eq!(s.position, Vec3::new(4.242, 4.242, 0.0), epsilon = 1e-9);
        let fast = AgentState {
            velocity: Vec3::new(-1.0, 0.0, 0.0),
            ..a
        };
        assert!(matches!(
            advance_ground_truth(&fast, 0.1, &room),
            Err(EnvError::LeftRoom { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut env = tiny_scene(1);
        env.tx_offset = Vec3::new(0.0707, 0.0707, 0.0);
        let agent = AgentState {
            position: Vec3::new(1.3, 2.2, 0.0),
            velocity: Vec3::zeros(),
        };
        let base = propagation_paths(&env, &agent).unwrap();
        let h = 1e-6;
        for axis in 0..2 {
            let mut moved = agent;
            moved.position[axis] += h;
            let plus = propagation_paths(&env, &moved).unwrap();
            moved.position[axis] -= 2.0 * h;
            let minus = propagation_paths(&env, &moved).unwrap();
            for (b, (p, m)) in base.iter().zip(plus.iter().zip(minus.iter())) {
                let fd = (p.total_length - m.total_length) / (2.0 * h);
                assert_abs_diff_eq!(b.agent_gradient()[axis], fd, epsilon = 1e-7);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mirror_is_involution(
                px in -10.0..10.0f64, py in -10.0..10.0f64, pz in -10.0..10.0f64,
                nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in -1.0..1.0f64,
                ox in -5.0..5.0f64,
            ) {
                prop_assume!((nx * nx + ny * ny + nz * nz) > 1e-3);
                let plane = Plane::new(Vec3::new(ox, 0.0, 0.0), Vec3::new(nx, ny, nz)).unwrap();
                let p = Vec3::new(px, py, pz);
                let back = mirror_point(&mirror_point(&p, &plane), &plane);
                prop_assert!((back - p).norm() < 1e-12);
            }
        }
    }
}
