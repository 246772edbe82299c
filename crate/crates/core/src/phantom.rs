//! Synthetic cardiac anatomy: labelled volume meshes, scene generation, the
//! target-view construction and the estimation of missing chamber centres.
//!
//! # Template layout
//!
//! Coordinates below are in the home frame (mm): origin at the transducer tip
//! of the neutral catheter in the mid right atrium, +z along the catheter
//! axis, which is also the home fan direction.
//!
//! | structure | centre            | semi-axes       |
//! |-----------|-------------------|-----------------|
//! | RA        | (−4, 0, 4)        | (26, 24, 30)    |
//! | RV        | (−14, 22, 48)     | (16, 14, 22)    |
//! | LV        | (10, 38, 68)      | (22, 18, 30)    |
//! | LA        | (35, −15, 45)     | (22, 18, 18)    |
//! | LAA       | (50, 10, 55)      | (10, 8, 12)     |
//! | LPV       | (45, −40, 40)     | (9, 9, 14)      |
//! | RPV       | (15, −45, 30)     | (9, 9, 14)      |
//! | ESO       | (40, −45, 15)     | (8, 8, 25)      |
//!
//! The right ventricle sits just across the home fan plane, the left atrium and its appendage toward
//! +x, the pulmonary veins and oesophagus toward −y (posterior), the left
//! ventricle toward +y and farther along the axis. The template world frame
//! differs from the home frame by a fixed rigid transform so that every
//! consumer has to go through `world_to_home`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{CatheterModel, JointState};
use crate::se3::{rotation_vector_to_matrix, Pose, RigidTransform};
use crate::{KinematicsError, PhantomError};

/// Every labelled structure a scene may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Structure {
    RA,
    LA,
    RV,
    LV,
    LPV,
    RPV,
    LAA,
    ESO,
}

impl Structure {
    pub const ALL: [Structure; 8] = [
        Structure::RA,
        Structure::LA,
        Structure::RV,
        Structure::LV,
        Structure::LPV,
        Structure::RPV,
        Structure::LAA,
        Structure::ESO,
    ];

    /// Label id used in rendered label grids; 0 is reserved for background.
    pub fn label_id(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_label_id(id: u8) -> Option<Structure> {
        Structure::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }
}

/// Clinically named target views plus the home view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewClass {
    RV,
    LV,
    LPV,
    RPV,
    LAA,
    ESO,
    HOME,
}

impl ViewClass {
    /// The six targets carried by the one-hot code.
    pub const TARGETS: [ViewClass; 6] = [
        ViewClass::RV,
        ViewClass::LV,
        ViewClass::LPV,
        ViewClass::RPV,
        ViewClass::LAA,
        ViewClass::ESO,
    ];

    pub const ALL: [ViewClass; 7] = [
        ViewClass::RV,
        ViewClass::LV,
        ViewClass::LPV,
        ViewClass::RPV,
        ViewClass::LAA,
        ViewClass::ESO,
        ViewClass::HOME,
    ];

    /// Row of the class embedding: 0..6 for targets, 6 for HOME.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ViewClass> {
        ViewClass::ALL.get(i).copied()
    }

    /// Size-6 one-hot code; `None` for HOME, which has no slot.
    pub fn one_hot(self) -> Option<[f64; 6]> {
        let i = self.index();
        (i < 6).then(|| {
            let mut v = [0.0; 6];
            v[i] = 1.0;
            v
        })
    }

    /// The structure a view is aimed at.
    pub fn structure(self) -> Option<Structure> {
        match self {
            ViewClass::RV => Some(Structure::RV),
            ViewClass::LV => Some(Structure::LV),
            ViewClass::LPV => Some(Structure::LPV),
            ViewClass::RPV => Some(Structure::RPV),
            ViewClass::LAA => Some(Structure::LAA),
            ViewClass::ESO => Some(Structure::ESO),
            ViewClass::HOME => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewClass::RV => "RV",
            ViewClass::LV => "LV",
            ViewClass::LPV => "LPV",
            ViewClass::RPV => "RPV",
            ViewClass::LAA => "LAA",
            ViewClass::ESO => "ESO",
            ViewClass::HOME => "HOME",
        }
    }

    pub fn parse(s: &str) -> Option<ViewClass> {
        ViewClass::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Closed UV tessellation of an ellipsoid (single-vertex poles).
    pub fn ellipsoid(
        center: Vector3<f64>,
        semi_axes: [f64; 3],
        rotation: &Matrix3<f64>,
        rings: u32,
        segments: u32,
    ) -> TriMesh {
        let rings = rings.max(2);
        let segments = segments.max(3);
        let mut vertices = Vec::new();
        let point = |theta: f64, phi: f64| {
            let local = Vector3::new(
                semi_axes[0] * Float::sin(theta) * Float::cos(phi),
                semi_axes[1] * Float::sin(theta) * Float::sin(phi),
                semi_axes[2] * Float::cos(theta),
            );
            let p = rotation * local + center;
            [p[0], p[1], p[2]]
        };
        vertices.push(point(0.0, 0.0));
        for r in 1..rings {
            let theta = PI * r as f64 / rings as f64;
            for s in 0..segments {
                vertices.push(point(theta, 2.0 * PI * s as f64 / segments as f64));
            }
        }
        vertices.push(point(PI, 0.0));
        let south = (vertices.len() - 1) as u32;
        let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);
        let mut faces = Vec::new();
        for s in 0..segments {
            faces.push([0, ring(1, s), ring(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (
                    ring(r, s),
                    ring(r, s + 1),
                    ring(r + 1, s),
                    ring(r + 1, s + 1),
                );
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            }
        }
        for s in 0..segments {
            faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        TriMesh { vertices, faces }
    }

    /// Every undirected edge must be shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<(), PhantomError> {
        if self.faces.is_empty() {
            return Err(PhantomError::NonWatertight("no faces"));
        }
        let n = self.vertices.len() as u32;
        let mut edges: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for f in &self.faces {
            if f.iter().any(|&v| v >= n) {
                return Err(PhantomError::NonWatertight("face index out of range"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(PhantomError::NonWatertight("degenerate face"));
            }
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        if edges.values().all(|&c| c == 2) {
            Ok(())
        } else {
            Err(PhantomError::NonWatertight(
                "edge not shared by exactly two faces",
            ))
        }
    }

    fn triangle(&self, f: &[u32; 3]) -> [Vector3<f64>; 3] {
        let v = |i: u32| Vector3::from(self.vertices[i as usize]);
        [v(f[0]), v(f[1]), v(f[2])]
    }

    fn ray_hits(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> impl Iterator<Item = f64> + '_ {
        let (origin, dir) = (*origin, *dir);
        self.faces
            .iter()
            .filter_map(move |f| ray_triangle(&origin, &dir, &self.triangle(f)))
    }

    fn on_surface(&self, p: &Vector3<f64>, tol: f64) -> bool {
        self.faces
            .iter()
            .any(|f| point_triangle_distance(p, &self.triangle(f)) <= tol)
    }

    /// Parity of ray crossings, majority vote over three skew directions.
    fn contains(&self, p: &Vector3<f64>) -> bool {
        if self.on_surface(p, 1e-9) {
            return true;
        }
        let dirs = [
            Vector3::new(0.5773502691896258, 0.5773502691896257, 0.5773502691896258),
            Vector3::new(-0.26726124191242434, 0.8017837257372732, 0.5345224838248488),
            Vector3::new(core::f64::consts::FRAC_1_SQRT_2, -0.1, -0.7).normalize(),
        ];
        let inside = dirs
            .iter()
            .filter(|d| self.ray_hits(p, d).count() % 2 == 1)
            .count();
        inside >= 2
    }

    /// Nearest crossing along `dir` from `p`.
    fn first_hit(&self, p: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.ray_hits(p, dir)
            .fold(None, |best, t| Some(best.map_or(t, |b: f64| b.min(t))))
    }

    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum::<f64>()
            .abs()
    }
}

// Möller–Trumbore; returns t > 0.
fn ray_triangle(o: &Vector3<f64>, d: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-12).then_some(t)
}

fn point_triangle_distance(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> f64 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshShape {
    Ellipsoid {
        semi_axes: [f64; 3],
        /// Columns are the ellipsoid axes in world coordinates.
        rotation: Matrix3<f64>,
    },
    TriMesh(TriMesh),
}

/// A labelled volume. Centre and geometry are in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshRecord", into = "MeshRecord")]
pub struct VolumeMesh {
    pub label: Structure,
    pub center: Vector3<f64>,
    pub shape: MeshShape,
    /// Centre was estimated from other structures rather than measured.
    pub estimated: bool,
}

impl VolumeMesh {
    pub fn ellipsoid(
        label: Structure,
        center: Vector3<f64>,
        semi_axes: [f64; 3],
        rotation: Matrix3<f64>,
    ) -> Self {
        Self {
            label,
            center,
            shape: MeshShape::Ellipsoid {
                semi_axes,
                rotation,
            },
            estimated: false,
        }
    }

    /// Inside test; boundary points within 1e-9 mm count as inside.
    pub fn contains(&self, p: &Vector3<f64>) -> Result<bool, PhantomError> {
        match &self.shape {
            MeshShape::Ellipsoid { .. } => Ok(self.ellipsoid_contains(p)),
            MeshShape::TriMesh(m) => {
                m.check_watertight()?;
                Ok(m.contains(p))
            }
        }
    }

    /// Inside test for meshes already known to be valid (hot rendering path).
    pub(crate) fn contains_unchecked(&self, p: &Vector3<f64>) -> bool {
        match &self.shape {
            MeshShape::Ellipsoid { .. } => self.ellipsoid_contains(p),
            MeshShape::TriMesh(m) => m.contains(p),
        }
    }

    fn ellipsoid_contains(&self, p: &Vector3<f64>) -> bool {
        let MeshShape::Ellipsoid {
            semi_axes,
            rotation,
        } = &self.shape
        else {
            return false;
        };
        let local = rotation.transpose() * (p - self.center);
        let q: f64 = (0..3).map(|i| (local[i] / semi_axes[i]).powi(2)).sum();
        if q <= 1.0 {
            return true;
        }
        // distance-to-surface lower bound: (√q − 1)·min axis
        let min_axis = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        (Float::sqrt(q) - 1.0) * min_axis <= 1e-9
    }

    /// Half the chord through the centre along unit direction `n`.
    pub fn half_extent_along(&self, n: &Vector3<f64>) -> f64 {
        match &self.shape {
            MeshShape::Ellipsoid {
                semi_axes,
                rotation,
            } => {
                let local = rotation.transpose() * n;
                let q: f64 = (0..3).map(|i| (local[i] / semi_axes[i]).powi(2)).sum();
                1.0 / Float::sqrt(q)
            }
            MeshShape::TriMesh(m) => {
                let fwd = m.first_hit(&self.center, n).unwrap_or(0.0);
                let back = m.first_hit(&self.center, &(-n)).unwrap_or(0.0);
                0.5 * (fwd + back)
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.shape {
            MeshShape::Ellipsoid { semi_axes, .. } => {
                4.0 / 3.0 * PI * semi_axes[0] * semi_axes[1] * semi_axes[2]
            }
            MeshShape::TriMesh(m) => m.volume(),
        }
    }

    /// Largest distance from the centre to the surface (bounding radius).
    pub fn bounding_radius(&self) -> f64 {
        match &self.shape {
            MeshShape::Ellipsoid { semi_axes, .. } => semi_axes.iter().cloned().fold(0.0, f64::max),
            MeshShape::TriMesh(m) => m
                .vertices
                .iter()
                .map(|v| (Vector3::from(*v) - self.center).norm())
                .fold(0.0, f64::max),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> VolumeMesh {
        let shape = match &self.shape {
            MeshShape::Ellipsoid {
                semi_axes,
                rotation,
            } => MeshShape::Ellipsoid {
                semi_axes: *semi_axes,
                rotation: t.rotation() * rotation,
            },
            MeshShape::TriMesh(m) => MeshShape::TriMesh(TriMesh {
                vertices: m
                    .vertices
                    .iter()
                    .map(|v| {
                        let p = t.transform_point(&Vector3::from(*v));
                        [p[0], p[1], p[2]]
                    })
                    .collect(),
                faces: m.faces.clone(),
            }),
        };
        VolumeMesh {
            label: self.label,
            center: t.transform_point(&self.center),
            shape,
            estimated: self.estimated,
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        match &self.shape {
            MeshShape::Ellipsoid {
                semi_axes,
                rotation,
            } => {
                if !semi_axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
                    return Err(PhantomError::InvalidVariation(
                        "ellipsoid semi-axes must be positive",
                    ));
                }
                if !crate::se3::is_rotation(rotation, 1e-6) {
                    return Err(PhantomError::InvalidVariation(
                        "ellipsoid rotation is not orthonormal",
                    ));
                }
                Ok(())
            }
            MeshShape::TriMesh(m) => {
                m.check_watertight()?;
                if !m.contains(&self.center) {
                    return Err(PhantomError::NonWatertight("centre lies outside the mesh"));
                }
                Ok(())
            }
        }
    }
}

/// Serialized form of a mesh: `{label, kind, center, semi_axes|vertices+faces, rotation}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeshRecord {
    label: Structure,
    kind: MeshKind,
    center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semi_axes: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faces: Option<Vec<[u32; 3]>>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    estimated: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MeshKind {
    Ellipsoid,
    Trimesh,
}

impl From<VolumeMesh> for MeshRecord {
    fn from(m: VolumeMesh) -> Self {
        let center = [m.center[0], m.center[1], m.center[2]];
        match m.shape {
            MeshShape::Ellipsoid {
                semi_axes,
                rotation,
            } => {
                let r = rotation;
                MeshRecord {
                    label: m.label,
                    kind: MeshKind::Ellipsoid,
                    center,
                    semi_axes: Some(semi_axes),
                    rotation: Some([
                        r[(0, 0)],
                        r[(0, 1)],
                        r[(0, 2)],
                        r[(1, 0)],
                        r[(1, 1)],
                        r[(1, 2)],
                        r[(2, 0)],
                        r[(2, 1)],
                        r[(2, 2)],
                    ]),
                    vertices: None,
                    faces: None,
                    estimated: m.estimated,
                }
            }
            MeshShape::TriMesh(t) => MeshRecord {
                label: m.label,
                kind: MeshKind::Trimesh,
                center,
                semi_axes: None,
                rotation: None,
                vertices: Some(t.vertices),
                faces: Some(t.faces),
                estimated: m.estimated,
            },
        }
    }
}

impl TryFrom<MeshRecord> for VolumeMesh {
    type Error = PhantomError;

    fn try_from(r: MeshRecord) -> Result<Self, Self::Error> {
        let shape = match r.kind {
            MeshKind::Ellipsoid => {
                let semi_axes = r
                    .semi_axes
                    .ok_or(PhantomError::InvalidVariation("ellipsoid needs semi_axes"))?;
                let rotation = r
                    .rotation
                    .map(|f| Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]))
                    .unwrap_or_else(Matrix3::identity);
                MeshShape::Ellipsoid {
                    semi_axes,
                    rotation,
                }
            }
            MeshKind::Trimesh => MeshShape::TriMesh(TriMesh {
                vertices: r
                    .vertices
                    .ok_or(PhantomError::NonWatertight("trimesh needs vertices"))?,
                faces: r
                    .faces
                    .ok_or(PhantomError::NonWatertight("trimesh needs faces"))?,
            }),
        };
        let mesh = VolumeMesh {
            label: r.label,
            center: Vector3::from(r.center),
            shape,
            estimated: r.estimated,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Ellipsoid-based anatomy plus the home transducer pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyScene {
    pub meshes: Vec<VolumeMesh>,
    /// Pose of the home-view transducer in world coordinates.
    pub world_to_home: RigidTransform,
    /// World-frame point inside the RA shared by all target views.
    pub ra_interior_point: [f64; 3],
    pub seed: u64,
}

impl AnatomyScene {
    pub fn mesh(&self, s: Structure) -> Option<&VolumeMesh> {
        self.meshes.iter().find(|m| m.label == s)
    }

    pub fn require(&self, s: Structure) -> Result<&VolumeMesh, PhantomError> {
        self.mesh(s).ok_or(PhantomError::MissingStructure(s))
    }

    pub fn target_mesh(&self, view: ViewClass) -> Option<&VolumeMesh> {
        view.structure().and_then(|s| self.mesh(s))
    }

    /// Maps a home-frame transform into world coordinates.
    pub fn home_to_world(&self, t_home: &RigidTransform) -> RigidTransform {
        self.world_to_home.compose(t_home)
    }

    pub fn world_point_to_home(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_home.inverse().transform_point(p)
    }

    pub fn ra_point(&self) -> Vector3<f64> {
        Vector3::from(self.ra_interior_point)
    }

    /// Applies a rigid motion to the whole scene (anatomy and home pose).
    pub fn transformed(&self, t: &RigidTransform) -> AnatomyScene {
        AnatomyScene {
            meshes: self.meshes.iter().map(|m| m.transformed(t)).collect(),
            world_to_home: t.compose(&self.world_to_home),
            ra_interior_point: {
                let p = t.transform_point(&self.ra_point());
                [p[0], p[1], p[2]]
            },
            seed: self.seed,
        }
    }

    /// Checks the scene invariants against a catheter model.
    pub fn validate(&self, catheter: &CatheterModel) -> Result<(), PhantomError> {
        for m in &self.meshes {
            m.validate()?;
        }
        let ra = self.require(Structure::RA)?;
        if !ra.contains(&self.ra_point())? {
            return Err(PhantomError::SceneInfeasible {
                attempts: 1,
                reason: "RA interior point outside RA",
            });
        }
        for (i, a) in self.meshes.iter().enumerate() {
            for b in &self.meshes[i + 1..] {
                if a.label == b.label {
                    return Err(PhantomError::SceneInfeasible {
                        attempts: 1,
                        reason: "duplicate structure label",
                    });
                }
                if (a.center - b.center).norm() < 1.0 {
                    return Err(PhantomError::SceneInfeasible {
                        attempts: 1,
                        reason: "coincident structure centres",
                    });
                }
            }
        }
        build_target_states(self, catheter).map(|_| ())
    }
}

struct TemplateEntry {
    label: Structure,
    center: [f64; 3],
    semi_axes: [f64; 3],
    rotation: [f64; 3],
}

const TEMPLATE: [TemplateEntry; 8] = [
    TemplateEntry {
        label: Structure::RA,
        center: [-4.0, 0.0, 4.0],
        semi_axes: [26.0, 24.0, 30.0],
        rotation: [0.0, 0.0, 0.0],
    },
    TemplateEntry {
        label: Structure::RV,
        center: [-14.0, 22.0, 48.0],
        semi_axes: [16.0, 14.0, 22.0],
        rotation: [0.2, -0.3, 0.0],
    },
    TemplateEntry {
        label: Structure::LV,
        center: [10.0, 38.0, 68.0],
        semi_axes: [22.0, 18.0, 30.0],
        rotation: [-0.3, 0.1, 0.0],
    },
    TemplateEntry {
        label: Structure::LA,
        center: [35.0, -15.0, 45.0],
        semi_axes: [22.0, 18.0, 18.0],
        rotation: [0.0, 0.0, 0.4],
    },
    TemplateEntry {
        label: Structure::LAA,
        center: [50.0, 10.0, 55.0],
        semi_axes: [10.0, 8.0, 12.0],
        rotation: [0.3, 0.0, 0.2],
    },
    TemplateEntry {
        label: Structure::LPV,
        center: [45.0, -40.0, 40.0],
        semi_axes: [9.0, 9.0, 14.0],
        rotation: [0.6, 0.3, 0.0],
    },
    TemplateEntry {
        label: Structure::RPV,
        center: [15.0, -45.0, 30.0],
        semi_axes: [9.0, 9.0, 14.0],
        rotation: [0.6, -0.3, 0.0],
    },
    TemplateEntry {
        label: Structure::ESO,
        center: [40.0, -45.0, 15.0],
        semi_axes: [8.0, 8.0, 25.0],
        rotation: [0.5, 0.0, 0.0],
    },
];

/// Fixed world pose of the home transducer in the template scene.
pub fn template_world_to_home() -> RigidTransform {
    Pose::new(
        Vector3::new(12.0, -30.0, 140.0),
        Vector3::new(0.2, -0.1, 0.3),
    )
    .to_transform()
}

/// Bounds: scale spread ≤ 0.2, centre jitter ≤ 8 mm, rotation jitter ≤ 0.15 rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleAndJitter {
    /// Global scale drawn from `[1 − spread, 1 + spread]`.
    pub scale_spread: f64,
    /// Per-structure centre offset drawn uniformly from a ball of this radius (mm).
    pub center_jitter: f64,
    /// Global anatomy rotation drawn from a ball of this radius (rad).
    pub rotation_jitter: f64,
    /// Replace the RA/RV/LV centres with estimates from LA/LAA, as when those
    /// chambers were not segmented.
    pub estimate_missing: bool,
}

impl ScaleAndJitter {
    pub fn none() -> Self {
        Self {
            scale_spread: 0.0,
            center_jitter: 0.0,
            rotation_jitter: 0.0,
            estimate_missing: false,
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        if !(0.0..=0.2).contains(&self.scale_spread) {
            return Err(PhantomError::InvalidVariation(
                "scale spread must lie in [0, 0.2]",
            ));
        }
        if !(0.0..=8.0).contains(&self.center_jitter) {
            return Err(PhantomError::InvalidVariation(
                "centre jitter must lie in [0, 8] mm",
            ));
        }
        if !(0.0..=0.15).contains(&self.rotation_jitter) {
            return Err(PhantomError::InvalidVariation(
                "rotation jitter must lie in [0, 0.15] rad",
            ));
        }
        Ok(())
    }
}

impl Default for ScaleAndJitter {
    fn default() -> Self {
        Self {
            scale_spread: 0.1,
            center_jitter: 4.0,
            rotation_jitter: 0.08,
            estimate_missing: false,
        }
    }
}

fn ball_sample(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    if radius <= 0.0 {
        return Vector3::zeros();
    }
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// The canonical scene (no variation).
pub fn template_scene() -> AnatomyScene {
    build_scene(
        0,
        &mut ChaCha8Rng::seed_from_u64(0),
        &ScaleAndJitter::none(),
    )
}

fn build_scene(seed: u64, rng: &mut ChaCha8Rng, v: &ScaleAndJitter) -> AnatomyScene {
    let scale = if v.scale_spread > 0.0 {
        rng.random_range(1.0 - v.scale_spread..=1.0 + v.scale_spread)
    } else {
        1.0
    };
    let spin = RigidTransform::from_rotation_vector(ball_sample(rng, v.rotation_jitter));
    let world_to_home = template_world_to_home();
    let meshes = TEMPLATE
        .iter()
        .map(|e| {
            let jitter = ball_sample(rng, v.center_jitter);
            let center = spin.transform_point(&(Vector3::from(e.center) * scale + jitter));
            let rotation = spin.rotation() * rotation_vector_to_matrix(&Vector3::from(e.rotation));
            let axes = e.semi_axes.map(|a| a * scale);
            VolumeMesh::ellipsoid(e.label, center, axes, rotation).transformed(&world_to_home)
        })
        .collect();
    let ra = world_to_home.translation();
    AnatomyScene {
        meshes,
        world_to_home,
        ra_interior_point: [ra[0], ra[1], ra[2]],
        seed,
    }
}

/// Deterministic synthetic scene for `seed`.
pub fn generate_scene(
    seed: u64,
    variation: &ScaleAndJitter,
    catheter: &CatheterModel,
) -> Result<AnatomyScene, PhantomError> {
    variation.validate()?;
    const ATTEMPTS: u32 = 20;
    let reference = template_scene();
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (u64::from(attempt)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut scene = build_scene(seed, &mut rng, variation);
        if variation.estimate_missing {
            let mut subject = scene.clone();
            subject.meshes.retain(|m| !MISSING.contains(&m.label));
            let centers = estimate_missing_centers(&reference, &subject)?;
            for (label, c) in MISSING.iter().zip(centers) {
                if let Some(m) = scene.meshes.iter_mut().find(|m| m.label == *label) {
                    m.center = c;
                    m.estimated = true;
                }
            }
        }
        if scene.validate(catheter).is_ok() {
            return Ok(scene);
        }
    }
    Err(PhantomError::SceneInfeasible {
        attempts: ATTEMPTS,
        reason: "jitter breaks reachability or separation",
    })
}

/// Structures whose centres can be estimated when missing.
pub const MISSING: [Structure; 3] = [Structure::RA, Structure::RV, Structure::LV];

/// Similarity frame: origin at LA, x toward LAA, xy-plane through the
/// pulmonary-vein midpoint, unit length = |LAA − LA|.
fn anchor_frame(scene: &AnatomyScene) -> Result<(Vector3<f64>, Matrix3<f64>, f64), PhantomError> {
    let la = scene.require(Structure::LA)?.center;
    let laa = scene.require(Structure::LAA)?.center;
    let pv = (scene.require(Structure::LPV)?.center + scene.require(Structure::RPV)?.center) * 0.5;
    let x = laa - la;
    let scale = x.norm();
    if scale < 1.0 {
        return Err(PhantomError::DegenerateFrame);
    }
    let ex = x / scale;
    let w = pv - la;
    let wy = w - ex * w.dot(&ex);
    if wy.norm() < 1e-3 * w.norm().max(1.0) {
        return Err(PhantomError::DegenerateFrame);
    }
    let ey = wy.normalize();
    let ez = ex.cross(&ey);
    Ok((la, Matrix3::from_columns(&[ex, ey, ez]), scale))
}

/// Centres of RA, RV, LV for `subject`, transferred from `reference` through
/// the LA/LAA anchor frame.
pub fn estimate_missing_centers(
    reference: &AnatomyScene,
    subject: &AnatomyScene,
) -> Result<[Vector3<f64>; 3], PhantomError> {
    let (ro, rr, rs) = anchor_frame(reference)?;
    let (so, sr, ss) = anchor_frame(subject)?;
    let mut out = [Vector3::zeros(); 3];
    for (slot, label) in out.iter_mut().zip(MISSING) {
        let c = reference.require(label)?.center;
        let local = rr.transpose() * (c - ro) / rs;
        *slot = so + sr * local * ss;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    Constructed,
    EstimatedCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub view: ViewClass,
    /// Target transducer pose in the home frame.
    pub pose: Pose,
    /// Joint state realising `pose`.
    pub joints: JointState,
    pub source: TargetSource,
}

/// Cosine between the fan direction (+z) of `pose_home` and the ray toward
/// `center_home`.
pub fn aim_alignment(pose_home: &RigidTransform, center_home: &Vector3<f64>) -> f64 {
    let to = (center_home - pose_home.translation()).normalize();
    pose_home.axis(2).dot(&to)
}

/// Joint state whose tip looks straight at `center_home` from as close to
/// `anchor_home` as the bending section allows. Bulk rotation stays zero;
/// insertion absorbs the axial offset.
fn aim_at(
    catheter: &CatheterModel,
    center_home: &Vector3<f64>,
    anchor_home: &Vector3<f64>,
) -> Result<JointState, KinematicsError> {
    let home = catheter.home_transform();
    let c = home.transform_point(center_home);
    let anchor = home.transform_point(anchor_home);
    let l = catheter.bend_section_length;
    let mut tip = anchor;
    let mut joints = catheter.neutral();
    for _ in 0..500 {
        let to = c - tip;
        if to.norm() < 1e-6 {
            return Err(KinematicsError::Unreachable {
                residual: f64::INFINITY,
            });
        }
        let u = to.normalize();
        let bend = Float::acos(u[2].clamp(-1.0, 1.0));
        let psi = Float::atan2(u[1], u[0]);
        let (t1, t2) = (bend * Float::cos(psi), bend * Float::sin(psi));
        let b2 = bend * bend;
        let (f, sinc) = if b2 < 1e-8 {
            (0.5 - b2 / 24.0, 1.0 - b2 / 6.0)
        } else {
            ((1.0 - Float::cos(bend)) / b2, Float::sin(bend) / bend)
        };
        let arc = Vector3::new(l * f * t1, l * f * t2, l * sinc);
        let d4 = (anchor[2] - arc[2]).clamp(0.0, catheter.limits.d4_max);
        let next = Vector3::new(arc[0], arc[1], d4 + arc[2]);
        joints = JointState::new(t1, t2, 0.0, d4);
        let moved = (next - tip).norm();
        tip = tip * 0.5 + next * 0.5;
        if moved < 1e-10 {
            break;
        }
    }
    catheter.check_limits(&joints)?;
    let tip_home = catheter.pose_in_home(&joints);
    if aim_alignment(&tip_home, center_home) < 0.999_999 {
        return Err(KinematicsError::Unreachable {
            residual: 1.0 - aim_alignment(&tip_home, center_home),
        });
    }
    Ok(joints)
}

/// Target transducer states for HOME and the six views.
///
/// Every view shares the RA interior point as its anchor and differs in
/// orientation: the fan is turned to look straight at the target centre.
/// Because the tip translates as it bends, the realised position sits near,
/// not exactly on, the anchor.
pub fn build_target_states(
    scene: &AnatomyScene,
    catheter: &CatheterModel,
) -> Result<BTreeMap<ViewClass, TargetState>, PhantomError> {
    let mut out = BTreeMap::new();
    out.insert(
        ViewClass::HOME,
        TargetState {
            view: ViewClass::HOME,
            pose: Pose::zero(),
            joints: catheter.neutral(),
            source: TargetSource::Constructed,
        },
    );
    let anchor = scene.world_point_to_home(&scene.ra_point());
    for view in ViewClass::TARGETS {
        let structure = view.structure().expect("target views have structures");
        let mesh = scene.require(structure)?;
        let center = scene.world_point_to_home(&mesh.center);
        let joints = aim_at(catheter, &center, &anchor)
            .map_err(|source| PhantomError::TargetUnreachable { view, source })?;
        let pose_t = catheter.pose_in_home(&joints);
        catheter
            .inverse_kinematics_home(&pose_t)
            .map_err(|source| PhantomError::TargetUnreachable { view, source })?;
        out.insert(
            view,
            TargetState {
                view,
                pose: Pose::from_transform(&pose_t),
                joints,
                source: if mesh.estimated {
                    TargetSource::EstimatedCenter
                } else {
                    TargetSource::Constructed
                },
            },
        );
    }
    Ok(out)
}

/// Point-in-mesh query (free-function form).
pub fn point_in_mesh(mesh: &VolumeMesh, p: &Vector3<f64>) -> Result<bool, PhantomError> {
    mesh.contains(p)
}
