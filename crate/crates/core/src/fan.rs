//! Ultrasound fan geometry, slice rendering and the fan-versus-volume metrics.
//!
//! Fan convention: the apex sits at the transducer tip, the fan direction is
//! the transducer's +z axis, the plane normal is its +x axis and the lateral
//! image axis is direction × normal (the transducer's +y).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::phantom::{AnatomyScene, Structure, VolumeMesh};
use crate::se3::{Pose, RigidTransform};
use crate::FanError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanParams {
    /// Full opening angle of the sector (rad).
    pub sector_angle: f64,
    /// Imaging depth (mm).
    pub depth: f64,
    pub width: u32,
    pub height: u32,
    /// Multiplicative speckle strength; 0 disables noise.
    pub speckle_sigma: f64,
    /// Brightness added on structure boundaries.
    pub edge_gain: f64,
}

impl Default for FanParams {
    fn default() -> Self {
        Self {
            sector_angle: FRAC_PI_2,
            depth: 90.0,
            width: 224,
            height: 224,
            speckle_sigma: 0.3,
            edge_gain: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanGeometry {
    pub apex: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub plane_normal: Vector3<f64>,
    pub sector_angle: f64,
    pub depth: f64,
}

impl FanGeometry {
    pub fn from_transform(t: &RigidTransform, params: &FanParams) -> Self {
        Self {
            apex: *t.translation(),
            direction: t.axis(2),
            plane_normal: t.axis(0),
            sector_angle: params.sector_angle,
            depth: params.depth,
        }
    }

    pub fn lateral(&self) -> Vector3<f64> {
        self.direction.cross(&self.plane_normal)
    }

    /// Centre of the sector's far edge.
    pub fn bottom_center(&self) -> Vector3<f64> {
        self.apex + self.direction * self.depth
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            apex: t.transform_point(&self.apex),
            direction: t.transform_vector(&self.direction),
            plane_normal: t.transform_vector(&self.plane_normal),
            ..*self
        }
    }

    /// Whether an in-plane point lies inside the sector (radius and angle).
    fn in_sector(&self, axial: f64, lateral: f64) -> bool {
        let r = Float::hypot(axial, lateral);
        if r > self.depth {
            return false;
        }
        r == 0.0 || Float::atan2(lateral, axial).abs() <= 0.5 * self.sector_angle
    }

    /// Signed offset of `p` from the fan plane.
    pub fn plane_offset(&self, p: &Vector3<f64>) -> f64 {
        (p - self.apex).dot(&self.plane_normal)
    }

    /// Whether the perpendicular projection of `p` onto the plane falls in the sector.
    pub fn projection_in_sector(&self, p: &Vector3<f64>) -> bool {
        let rel = p - self.apex;
        self.in_sector(rel.dot(&self.direction), rel.dot(&self.lateral()))
    }
}

pub fn fan_from_pose(p: &Pose, params: &FanParams) -> FanGeometry {
    FanGeometry::from_transform(&p.to_transform(), params)
}

/// Perpendicular distance from the mesh centre to the fan plane (mm).
pub fn real_distance(fan: &FanGeometry, mesh: &VolumeMesh) -> f64 {
    fan.plane_offset(&mesh.center).abs()
}

/// Real distance over the mesh half-extent along the plane normal; 1 marks the edge.
pub fn normalized_distance(fan: &FanGeometry, mesh: &VolumeMesh) -> Result<f64, FanError> {
    let half = mesh.half_extent_along(&fan.plane_normal);
    if !(half >= 0.1) {
        return Err(FanError::DegenerateExtent(half));
    }
    Ok(real_distance(fan, mesh) / half)
}

pub fn fan_in_volume(fan: &FanGeometry, mesh: &VolumeMesh) -> Result<bool, FanError> {
    Ok(fan.projection_in_sector(&mesh.center) && normalized_distance(fan, mesh)? < 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanMetrics {
    pub in_volume: bool,
    pub in_sector: bool,
    pub real_distance: f64,
    pub normalized_distance: f64,
}

pub fn fan_metrics(fan: &FanGeometry, mesh: &VolumeMesh) -> Result<FanMetrics, FanError> {
    let normalized_distance = normalized_distance(fan, mesh)?;
    let in_sector = fan.projection_in_sector(&mesh.center);
    Ok(FanMetrics {
        in_volume: in_sector && normalized_distance < 1.0,
        in_sector,
        real_distance: real_distance(fan, mesh),
        normalized_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMeta {
    /// Transducer pose in world coordinates.
    pub pose: Pose,
    pub scene_seed: u64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    pub width: u32,
    pub height: u32,
    /// Row-major, row 0 at the apex.
    pub intensity: Vec<f32>,
    /// Structure label id per pixel (0 = background); debugging aid only.
    pub labels: Option<Vec<u8>>,
    pub meta: SliceMeta,
}

impl SliceImage {
    pub fn at(&self, row: u32, col: u32) -> f32 {
        self.intensity[(row * self.width + col) as usize]
    }
}

/// Echogenicity of background tissue and each structure's pool.
pub fn base_echogenicity(label: Option<Structure>) -> f32 {
    match label {
        None => 0.42,
        Some(Structure::RA) => 0.10,
        Some(Structure::LA) => 0.14,
        Some(Structure::RV) => 0.18,
        Some(Structure::LV) => 0.22,
        Some(Structure::LPV) => 0.27,
        Some(Structure::RPV) => 0.31,
        Some(Structure::LAA) => 0.05,
        Some(Structure::ESO) => 0.62,
    }
}

/// Millimetres per pixel so the whole sector fits the image, apex at top centre.
pub fn pixel_spacing(fan: &FanGeometry, width: u32, height: u32) -> f64 {
    let half = 0.5 * fan.sector_angle;
    let lateral_span = 2.0 * fan.depth * Float::sin(half.min(FRAC_PI_2));
    (lateral_span / f64::from(width)).max(fan.depth / f64::from(height))
}

/// Renders the fan plane through `scene`.
pub fn render_slice(
    scene: &AnatomyScene,
    fan: &FanGeometry,
    params: &FanParams,
    noise_seed: u64,
) -> SliceImage {
    let (w, h) = (params.width, params.height);
    let s = pixel_spacing(fan, w, h);
    let lateral = fan.lateral();
    // smallest structure wins where volumes overlap
    let mut order: Vec<&VolumeMesh> = scene.meshes.iter().collect();
    order.sort_by(|a, b| a.volume().total_cmp(&b.volume()));

    let n = (w * h) as usize;
    let mut labels = vec![0u8; n];
    let mut sector = vec![false; n];
    for row in 0..h {
        let axial = (f64::from(row) + 0.5) * s;
        for col in 0..w {
            let lat = (f64::from(col) + 0.5 - 0.5 * f64::from(w)) * s;
            if !fan.in_sector(axial, lat) {
                continue;
            }
            let idx = (row * w + col) as usize;
            sector[idx] = true;
            let p = fan.apex + fan.direction * axial + lateral * lat;
            if let Some(m) = order.iter().find(|m| m.contains_unchecked(&p)) {
                labels[idx] = m.label.label_id();
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    // mean of a unit Rayleigh variable
    let rayleigh_mean = Float::sqrt(FRAC_PI_2);
    let mut intensity = vec![0f32; n];
    for row in 0..h {
        for col in 0..w {
            let idx = (row * w + col) as usize;
            if !sector[idx] {
                continue;
            }
            let label = labels[idx];
            let edge = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)]
                .iter()
                .any(|(dr, dc)| {
                    let (r, c) = (i64::from(row) + dr, i64::from(col) + dc);
                    if r < 0 || c < 0 || r >= i64::from(h) || c >= i64::from(w) {
                        return false;
                    }
                    let j = (r as u32 * w + c as u32) as usize;
                    sector[j] && labels[j] != label
                });
            let mut v = f64::from(base_echogenicity(Structure::from_label_id(label)));
            if edge {
                v += params.edge_gain;
            }
            if params.speckle_sigma > 0.0 {
                let u: f64 = rng.random();
                let r = Float::sqrt(-2.0 * Float::ln(1.0 - u));
                v *= 1.0 + params.speckle_sigma * (r - rayleigh_mean);
            }
            intensity[idx] = v.clamp(0.0, 1.0) as f32;
        }
    }

    SliceImage {
        width: w,
        height: h,
        intensity,
        labels: Some(labels),
        meta: SliceMeta {
            pose: Pose::from_transform(&fan_transform(fan)),
            scene_seed: scene.seed,
            noise_seed,
        },
    }
}

fn fan_transform(fan: &FanGeometry) -> RigidTransform {
    let r = nalgebra::Matrix3::from_columns(&[fan.plane_normal, fan.lateral(), fan.direction]);
    RigidTransform::new(r, fan.apex).unwrap_or_else(|_| RigidTransform::from_translation(fan.apex))
}

/// Renders the view of a home-frame transducer pose.
pub fn render_home_pose(
    scene: &AnatomyScene,
    pose_home: &RigidTransform,
    params: &FanParams,
    noise_seed: u64,
) -> SliceImage {
    let fan = FanGeometry::from_transform(&scene.home_to_world(pose_home), params);
    render_slice(scene, &fan, params, noise_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::CatheterModel;
    use crate::phantom::{build_target_states, template_scene, ViewClass};
    use crate::se3::rotation_vector_to_matrix;
    use nalgebra::Matrix3;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let v = |rng: &mut ChaCha8Rng, s: f64| {
            Vector3::new(
                rng.random_range(-s..s),
                rng.random_range(-s..s),
                rng.random_range(-s..s),
            )
        };
        let axis = v(rng, 1.0).normalize() * rng.random_range(0.0..3.0);
        Pose::new(v(rng, 50.0), axis).to_transform()
    }

    #[test]
    fn identity_fan_convention() {
        let f = fan_from_pose(&Pose::zero(), &FanParams::default());
        assert_eq!(f.apex, Vector3::zeros());
        assert_eq!(f.direction, Vector3::z());
        assert_eq!(f.plane_normal, Vector3::x());
        assert!((f.direction.dot(&f.plane_normal)).abs() < 1e-9);
    }

    #[test]
    fn rotation_about_z_flips_normal() {
        let p = Pose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, core::f64::consts::PI),
        );
        let f = fan_from_pose(&p, &FanParams::default());
        assert!((f.direction - Vector3::z()).norm() < 1e-12);
        assert!((f.plane_normal - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fan_equivariance() {
        let params = FanParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let p = random_transform(&mut rng);
            let a = FanGeometry::from_transform(&t.compose(&p), &params);
            let b = FanGeometry::from_transform(&p, &params).transformed(&t);
            assert!((a.apex - b.apex).norm() < 1e-9);
            assert!((a.direction - b.direction).norm() < 1e-12);
            assert!((a.plane_normal - b.plane_normal).norm() < 1e-12);
            assert!(a.direction.dot(&a.plane_normal).abs() < 1e-9);
            assert!((a.direction.norm() - 1.0).abs() < 1e-9);
        }
    }

    fn sphere(center: Vector3<f64>, r: f64) -> VolumeMesh {
        VolumeMesh::ellipsoid(Structure::LA, center, [r, r, r], Matrix3::identity())
    }

    #[test]
    fn distances_on_sphere() {
        let fan = fan_from_pose(&Pose::zero(), &FanParams::default());
        let on_plane = sphere(Vector3::new(0.0, 10.0, 40.0), 20.0);
        assert_eq!(real_distance(&fan, &on_plane), 0.0);
        assert_eq!(normalized_distance(&fan, &on_plane).unwrap(), 0.0);
        assert!(fan_in_volume(&fan, &on_plane).unwrap());

        let offset = sphere(Vector3::new(5.0, 0.0, 40.0), 20.0);
        assert!((real_distance(&fan, &offset) - 5.0).abs() < 1e-12);
        assert!((normalized_distance(&fan, &offset).unwrap() - 0.25).abs() < 1e-12);

        let tangent = VolumeMesh::ellipsoid(
            Structure::LA,
            Vector3::new(7.0, 0.0, 40.0),
            [7.0, 3.0, 9.0],
            Matrix3::identity(),
        );
        assert!((normalized_distance(&fan, &tangent).unwrap() - 1.0).abs() < 1e-12);
        assert!(!fan_in_volume(&fan, &tangent).unwrap());

        let behind = sphere(Vector3::new(0.0, 0.0, -40.0), 20.0);
        assert!(!fan_in_volume(&fan, &behind).unwrap());

        let tiny = sphere(Vector3::new(0.0, 0.0, 40.0), 0.05);
        assert!(matches!(
            normalized_distance(&fan, &tiny),
            Err(FanError::DegenerateExtent(_))
        ));
    }

    #[test]
    fn real_distance_monotone_along_normal() {
        let mesh = sphere(Vector3::new(3.0, 2.0, 50.0), 10.0);
        let mut prev = -1.0;
        for k in 0..40 {
            let shift = -3.0 - f64::from(k) * 0.5;
            let fan = fan_from_pose(
                &Pose::new(Vector3::new(shift, 0.0, 0.0), Vector3::zeros()),
                &FanParams::default(),
            );
            let d = real_distance(&fan, &mesh);
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn constructed_targets_are_in_volume() {
        let scene = template_scene();
        let m = CatheterModel::default();
        let params = FanParams::default();
        for (view, t) in build_target_states(&scene, &m).unwrap() {
            let Some(mesh) = scene.target_mesh(view) else {
                continue;
            };
            let fan =
                FanGeometry::from_transform(&scene.home_to_world(&t.pose.to_transform()), &params);
            let metrics = fan_metrics(&fan, mesh).unwrap();
            assert!(metrics.in_volume, "{view:?} {metrics:?}");
            assert!(metrics.normalized_distance < 1e-6);
        }
        let _ = ViewClass::HOME;
    }

    fn empty_scene() -> AnatomyScene {
        AnatomyScene {
            meshes: Vec::new(),
            world_to_home: RigidTransform::identity(),
            ra_interior_point: [0.0; 3],
            seed: 0,
        }
    }

    #[test]
    fn empty_scene_is_background_only() {
        let params = FanParams {
            speckle_sigma: 0.0,
            ..FanParams::default()
        };
        let fan = fan_from_pose(&Pose::zero(), &params);
        let img = render_slice(&empty_scene(), &fan, &params, 7);
        let bg = base_echogenicity(None);
        let labels = img.labels.as_ref().unwrap();
        let mut in_sector = 0;
        for (i, v) in img.intensity.iter().enumerate() {
            assert_eq!(labels[i], 0);
            if *v != 0.0 {
                assert_eq!(*v, bg);
                in_sector += 1;
            }
        }
        assert!(in_sector > 10_000);

        let noisy = FanParams::default();
        let img = render_slice(&empty_scene(), &fan, &noisy, 7);
        let vals: Vec<f64> = img
            .intensity
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| f64::from(*v))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - f64::from(bg)).abs() < 0.01, "{mean}");
    }

    #[test]
    fn outside_sector_is_zero_and_range_is_unit() {
        let scene = template_scene();
        let params = FanParams::default();
        let img = render_home_pose(&scene, &RigidTransform::identity(), &params, 3);
        let fan = FanGeometry::from_transform(&scene.world_to_home, &params);
        let s = pixel_spacing(&fan, img.width, img.height);
        for row in 0..img.height {
            for col in 0..img.width {
                let axial = (f64::from(row) + 0.5) * s;
                let lat = (f64::from(col) + 0.5 - 0.5 * f64::from(img.width)) * s;
                let v = img.at(row, col);
                assert!((0.0..=1.0).contains(&v));
                if !fan.in_sector(axial, lat) {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // home view sees right atrium and right ventricle
        let labels = img.labels.unwrap();
        assert!(labels.contains(&Structure::RA.label_id()));
        assert!(labels.contains(&Structure::RV.label_id()));
    }

    #[test]
    fn rendering_is_deterministic_and_seed_sensitive() {
        let scene = template_scene();
        let params = FanParams::default();
        let a = render_home_pose(&scene, &RigidTransform::identity(), &params, 11);
        let b = render_home_pose(&scene, &RigidTransform::identity(), &params, 11);
        assert_eq!(a, b);
        let c = render_home_pose(&scene, &RigidTransform::identity(), &params, 12);
        assert_ne!(a.intensity, c.intensity);
    }

    #[test]
    fn rendering_is_rigid_equivariant() {
        let scene = template_scene();
        let params = FanParams::default();
        let fan = FanGeometry::from_transform(&scene.world_to_home, &params);
        let base = render_slice(&scene, &fan, &params, 5);
        let t =
            Pose::new(Vector3::new(10.0, -4.0, 2.0), Vector3::new(0.3, 0.2, -0.5)).to_transform();
        let moved = render_slice(&scene.transformed(&t), &fan.transformed(&t), &params, 5);
        // labels and speckle are identical; intensities agree up to points
        // exactly on a boundary, which rounding may flip
        let differing = base
            .labels
            .unwrap()
            .iter()
            .zip(moved.labels.unwrap().iter())
            .filter(|(a, b)| a != b)
            .count();
        assert!(differing <= 2, "{differing}");
    }

    #[test]
    fn cross_section_matches_conic_oracle() {
        let rot = rotation_vector_to_matrix(&Vector3::new(0.4, -0.2, 0.7));
        let c = Vector3::new(0.0, 5.0, 45.0);
        let axes = [18.0, 11.0, 25.0];
        let scene = AnatomyScene {
            meshes: vec![VolumeMesh::ellipsoid(Structure::LV, c, axes, rot)],
            ..empty_scene()
        };
        let params = FanParams {
            speckle_sigma: 0.0,
            ..FanParams::default()
        };
        let fan = fan_from_pose(&Pose::zero(), &params);
        let img = render_slice(&scene, &fan, &params, 0);
        let labels = img.labels.unwrap();
        let s = pixel_spacing(&fan, img.width, img.height);
        // plane x = 0: in-plane coords (y, z) ↦ quadratic form of the conic
        let m =
            rot * Matrix3::from_diagonal(&Vector3::new(
                1.0 / (axes[0] * axes[0]),
                1.0 / (axes[1] * axes[1]),
                1.0 / (axes[2] * axes[2]),
            )) * rot.transpose();
        let conic = |row: i64, col: i64| {
            let z = (row as f64 + 0.5) * s - c[2];
            let y = (col as f64 + 0.5 - 0.5 * f64::from(img.width)) * s - c[1];
            let x = -c[0];
            let v = Vector3::new(x, y, z);
            (v.transpose() * m * v)[0] <= 1.0
        };
        let mut mismatched = 0;
        for row in 0..i64::from(img.height) {
            for col in 0..i64::from(img.width) {
                let idx = (row * i64::from(img.width) + col) as usize;
                let rendered = labels[idx] == Structure::LV.label_id();
                if rendered != conic(row, col) {
                    mismatched += 1;
                    let near_boundary =
                        (-1..=1).any(|dr| (-1..=1).any(|dc| conic(row + dr, col + dc) == rendered));
                    assert!(
                        near_boundary,
                        "pixel ({row},{col}) far from the conic boundary"
                    );
                }
            }
        }
        assert!(mismatched < 10);
    }
}
