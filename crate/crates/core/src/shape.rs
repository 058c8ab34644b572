//! Shape primitives: analytic nearest-surface queries for the haptic model and
//! closed triangle meshes for the rasterizer.
//!
//! Every primitive is centered on its body origin. Capsules and cylinders are
//! aligned with body z; `length` is always the full extent along that axis.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose6, RigidTransform};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShapeError {
    #[error("shape dimension `{0}` must be finite and positive")]
    BadDimension(&'static str),
    #[error("capsule length {length} is shorter than its diameter {diameter}")]
    CapsuleTooShort { length: f64, diameter: f64 },
    #[error("tessellation budget {0} is below the minimum for this primitive")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere { radius_m: f64 },
    Capsule { radius_m: f64, length_m: f64 },
    Cylinder { radius_m: f64, length_m: f64 },
    /// Full edge lengths along body x, y, z.
    Box { size_m: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePrimitive {
    #[serde(flatten)]
    pub kind: ShapeKind,
    /// Upper bound on the triangle count of the tessellated mesh.
    #[serde(default = "default_budget")]
    pub triangle_budget: usize,
}

fn default_budget() -> usize {
    600
}

/// Indexed triangle mesh in the body frame, counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut edges = std::collections::HashMap::<(u32, u32), u32>::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&n| n == 2)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Vec<Vector3<f64>> {
        self.vertices.iter().map(|v| t.apply(v)).collect()
    }
}

impl ShapePrimitive {
    pub fn new(kind: ShapeKind, triangle_budget: usize) -> Result<Self, ShapeError> {
        let s = Self {
            kind,
            triangle_budget,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn sphere(radius_m: f64) -> Result<Self, ShapeError> {
        Self::new(ShapeKind::Sphere { radius_m }, default_budget())
    }

    pub fn capsule(radius_m: f64, length_m: f64) -> Result<Self, ShapeError> {
        Self::new(ShapeKind::Capsule { radius_m, length_m }, default_budget())
    }

    pub fn cylinder(radius_m: f64, length_m: f64) -> Result<Self, ShapeError> {
        Self::new(ShapeKind::Cylinder { radius_m, length_m }, default_budget())
    }

    pub fn cuboid(size_m: [f64; 3]) -> Result<Self, ShapeError> {
        Self::new(ShapeKind::Box { size_m }, 12)
    }

    pub fn with_budget(mut self, triangle_budget: usize) -> Result<Self, ShapeError> {
        self.triangle_budget = triangle_budget;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let pos = |v: f64, name| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ShapeError::BadDimension(name))
            }
        };
        match self.kind {
            ShapeKind::Sphere { radius_m } => pos(radius_m, "radius_m")?,
            ShapeKind::Capsule { radius_m, length_m } => {
                pos(radius_m, "radius_m")?;
                pos(length_m, "length_m")?;
                if length_m < 2.0 * radius_m {
                    return Err(ShapeError::CapsuleTooShort {
                        length: length_m,
                        diameter: 2.0 * radius_m,
                    });
                }
            }
            ShapeKind::Cylinder { radius_m, length_m } => {
                pos(radius_m, "radius_m")?;
                pos(length_m, "length_m")?;
            }
            ShapeKind::Box { size_m } => {
                pos(size_m[0], "size_m[0]")?;
                pos(size_m[1], "size_m[1]")?;
                pos(size_m[2], "size_m[2]")?;
            }
        }
        if self.triangle_budget < self.min_budget() {
            return Err(ShapeError::BudgetTooSmall(self.triangle_budget));
        }
        Ok(())
    }

    fn min_budget(&self) -> usize {
        match self.kind {
            ShapeKind::Box { .. } => 12,
            // 4 slices, 2 stacks
            ShapeKind::Sphere { .. } => 8,
            ShapeKind::Cylinder { .. } => 12,
            ShapeKind::Capsule { .. } => 16,
        }
    }

    /// Attitude components (roll, pitch, yaw) that leave the shape unchanged.
    pub fn symmetric_attitude_axes(&self) -> [bool; 3] {
        match self.kind {
            ShapeKind::Sphere { .. } => [true; 3],
            ShapeKind::Capsule { .. } | ShapeKind::Cylinder { .. } => [false, false, true],
            ShapeKind::Box { .. } => [false; 3],
        }
    }

    /// Radius of a sphere centered on the body origin that contains the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Sphere { radius_m } => radius_m,
            ShapeKind::Capsule { length_m, .. } => length_m / 2.0,
            ShapeKind::Cylinder { radius_m, length_m } => radius_m.hypot(length_m / 2.0),
            ShapeKind::Box { size_m } => Vector3::from(size_m).norm() / 2.0,
        }
    }

    /// Nearest point on the surface to `p`, both in the body frame.
    pub fn nearest_surface_point_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self.kind {
            ShapeKind::Sphere { radius_m } => radial(p, &Vector3::zeros(), radius_m),
            ShapeKind::Capsule { radius_m, length_m } => {
                let half = length_m / 2.0 - radius_m;
                let axis_point = Vector3::new(0.0, 0.0, p.z.clamp(-half, half));
                radial(p, &axis_point, radius_m)
            }
            ShapeKind::Cylinder { radius_m, length_m } => {
                let half = length_m / 2.0;
                let rho = p.x.hypot(p.y);
                let dir = if rho > 0.0 {
                    Vector3::new(p.x / rho, p.y / rho, 0.0)
                } else {
                    Vector3::x()
                };
                let side = dir * radius_m + Vector3::new(0.0, 0.0, p.z.clamp(-half, half));
                let cap_rho = rho.min(radius_m);
                let top = dir * cap_rho + Vector3::new(0.0, 0.0, half);
                let bottom = dir * cap_rho + Vector3::new(0.0, 0.0, -half);
                closest_of(p, &[side, top, bottom])
            }
            ShapeKind::Box { size_m } => {
                let h = Vector3::from(size_m) / 2.0;
                let clamped = Vector3::new(
                    p.x.clamp(-h.x, h.x),
                    p.y.clamp(-h.y, h.y),
                    p.z.clamp(-h.z, h.z),
                );
                let mut candidates = [Vector3::zeros(); 6];
                for axis in 0..3 {
                    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
                        let mut c = clamped;
                        c[axis] = sign * h[axis];
                        candidates[axis * 2 + k] = c;
                    }
                }
                closest_of(p, &candidates)
            }
        }
    }

    /// Nearest surface point to a world point for the shape placed at `pose`.
    pub fn nearest_surface_point(&self, pose: &Pose6, p_world: &Vector3<f64>) -> Vector3<f64> {
        let t = RigidTransform::from_pose(pose);
        let local = t.inverse().apply(p_world);
        t.apply(&self.nearest_surface_point_local(&local))
    }

    /// Unsigned distance from a body-frame point to the surface.
    pub fn surface_distance_local(&self, p: &Vector3<f64>) -> f64 {
        (self.nearest_surface_point_local(p) - p).norm()
    }

    pub fn tessellate(&self) -> Mesh {
        match self.kind {
            ShapeKind::Box { size_m } => box_mesh(size_m),
            ShapeKind::Sphere { radius_m } => {
                let (slices, stacks) = sphere_resolution(self.triangle_budget);
                revolved(
                    slices,
                    &arc_profile(radius_m, 0.0, -PI / 2.0, PI / 2.0, stacks),
                )
            }
            ShapeKind::Capsule { radius_m, length_m } => {
                let half = length_m / 2.0 - radius_m;
                let (slices, cap_stacks) = capsule_resolution(self.triangle_budget);
                let mut profile = arc_profile(radius_m, -half, -PI / 2.0, 0.0, cap_stacks);
                profile.extend(arc_profile(radius_m, half, 0.0, PI / 2.0, cap_stacks));
                revolved(slices, &profile)
            }
            ShapeKind::Cylinder { radius_m, length_m } => {
                let half = length_m / 2.0;
                // profile: bottom pole, bottom rim, top rim, top pole => 4 * slices triangles
                let slices = (self.triangle_budget / 4).max(3);
                let profile = vec![
                    (0.0, -half),
                    (radius_m, -half),
                    (radius_m, half),
                    (0.0, half),
                ];
                revolved(slices, &profile)
            }
        }
    }
}

fn radial(p: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> Vector3<f64> {
    let d = p - center;
    let n = d.norm();
    if n > 0.0 {
        center + d * (r / n)
    } else {
        center + Vector3::x() * r
    }
}

fn closest_of(p: &Vector3<f64>, candidates: &[Vector3<f64>]) -> Vector3<f64> {
    let mut best = candidates[0];
    let mut best_d = (best - p).norm_squared();
    for c in &candidates[1..] {
        let d = (c - p).norm_squared();
        if d < best_d {
            best = *c;
            best_d = d;
        }
    }
    best
}

fn sphere_resolution(budget: usize) -> (usize, usize) {
    // triangles = 2 * slices * (stacks - 1), slices = 2 * stacks
    let mut stacks = 2;
    while 2 * (2 * (stacks + 1)) * stacks <= budget {
        stacks += 1;
    }
    (2 * stacks, stacks)
}

fn capsule_resolution(budget: usize) -> (usize, usize) {
    // 2 * cap_stacks + 1 bands, two of them fans: triangles = 4 * cap_stacks * slices
    let tris = |c: usize| 16 * c * c;
    let mut c = 1;
    while tris(c + 1) <= budget {
        c += 1;
    }
    ((4 * c).max(3), c)
}

/// Quarter/half circle of radius `r` centered at axial offset `z0`, sampled
/// from `from` to `to` (latitude angles) as `(rho, z)` pairs.
fn arc_profile(r: f64, z0: f64, from: f64, to: f64, segments: usize) -> Vec<(f64, f64)> {
    (0..=segments)
        .map(|i| {
            let lat = from + (to - from) * i as f64 / segments as f64;
            // snap the poles so they collapse onto the axis exactly
            let rho = if lat.abs() == PI / 2.0 { 0.0 } else { r * lat.cos() };
            (rho, z0 + r * lat.sin())
        })
        .collect()
}

/// Surface of revolution about body z from a profile running bottom to top.
/// Profile points with `rho == 0` become single pole vertices.
fn revolved(slices: usize, profile: &[(f64, f64)]) -> Mesh {
    let mut vertices = Vec::new();
    // ring start index per profile entry, and whether it is a pole
    let mut rings: Vec<(u32, bool)> = Vec::with_capacity(profile.len());
    for &(rho, z) in profile {
        let start = vertices.len() as u32;
        if rho == 0.0 {
            vertices.push(Vector3::new(0.0, 0.0, z));
            rings.push((start, true));
        } else {
            for s in 0..slices {
                let phi = 2.0 * PI * s as f64 / slices as f64;
                vertices.push(Vector3::new(rho * phi.cos(), rho * phi.sin(), z));
            }
            rings.push((start, false));
        }
    }
    let idx = |ring: (u32, bool), s: usize| -> u32 {
        if ring.1 {
            ring.0
        } else {
            ring.0 + (s % slices) as u32
        }
    };
    let mut triangles = Vec::new();
    for w in rings.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for s in 0..slices {
            let a = idx(lo, s);
            let b = idx(lo, s + 1);
            let c = idx(hi, s + 1);
            let d = idx(hi, s);
            // outward normals: going up the profile with increasing phi
            if !lo.1 {
                triangles.push([a, b, d]);
            }
            if !hi.1 {
                triangles.push([b, c, d]);
            } else if lo.1 {
                unreachable!("two consecutive poles in a profile");
            }
        }
    }
    Mesh {
        vertices,
        triangles,
    }
}

fn box_mesh(size: [f64; 3]) -> Mesh {
    let h = Vector3::from(size) / 2.0;
    let vertices = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    Mesh {
        vertices,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn all_shapes() -> Vec<ShapePrimitive> {
        vec![
            ShapePrimitive::sphere(0.05).unwrap(),
            ShapePrimitive::capsule(0.045, 0.30).unwrap(),
            ShapePrimitive::cylinder(0.04, 0.2).unwrap(),
            ShapePrimitive::cuboid([0.1, 0.2, 0.05]).unwrap(),
            ShapePrimitive::sphere(1.0).unwrap().with_budget(8).unwrap(),
            ShapePrimitive::capsule(0.02, 0.04).unwrap().with_budget(16).unwrap(),
        ]
    }

    #[test]
    fn meshes_are_closed_and_within_budget() {
        for s in all_shapes() {
            let m = s.tessellate();
            assert!(m.is_closed(), "{:?}", s.kind);
            assert!(m.triangles.len() <= s.triangle_budget.max(12), "{:?}", s.kind);
        }
    }

    #[test]
    fn round_vertices_lie_on_the_surface() {
        for s in all_shapes() {
            for v in s.tessellate().vertices {
                assert!(s.surface_distance_local(&v) < 1e-12, "{:?} {v:?}", s.kind);
            }
        }
    }

    #[test]
    fn random_queries_land_on_analytic_surface() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sphere = ShapePrimitive::sphere(0.05).unwrap();
        let capsule = ShapePrimitive::capsule(0.045, 0.3).unwrap();
        for _ in 0..1000 {
            let p = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let q = sphere.nearest_surface_point_local(&p);
            assert!((q.norm() - 0.05).abs() < 1e-6);
            let q = capsule.nearest_surface_point_local(&p);
            let axis = Vector3::new(0.0, 0.0, q.z.clamp(-0.105, 0.105));
            assert!(((q - axis).norm() - 0.045).abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_point_is_nearest_among_samples() {
        // compare against a dense surface sample from the mesh vertices
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for s in [
            ShapePrimitive::cylinder(0.04, 0.2).unwrap().with_budget(4000).unwrap(),
            ShapePrimitive::cuboid([0.1, 0.2, 0.05]).unwrap(),
        ] {
            let verts = s.tessellate().vertices;
            for _ in 0..200 {
                let p = Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                );
                let d = s.surface_distance_local(&p);
                let sampled = verts.iter().map(|v| (v - p).norm()).fold(f64::INFINITY, f64::min);
                assert!(d <= sampled + 1e-12);
            }
        }
    }

    #[test]
    fn box_nearest_point_from_inside() {
        let b = ShapePrimitive::cuboid([2.0, 2.0, 2.0]).unwrap();
        let q = b.nearest_surface_point_local(&Vector3::new(0.9, 0.0, 0.1));
        assert_abs_diff_eq!(q, Vector3::new(1.0, 0.0, 0.1), epsilon = 1e-15);
    }

    #[test]
    fn world_query_respects_pose() {
        let s = ShapePrimitive::sphere(0.05).unwrap();
        let pose = Pose6::from_xyz_rpy(0.0, 0.0, 0.1, 0.2, 0.3, 0.4);
        let q = s.nearest_surface_point(&pose, &Vector3::zeros());
        assert_abs_diff_eq!(q, Vector3::new(0.0, 0.0, 0.05), epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(ShapePrimitive::sphere(0.0).is_err());
        assert!(ShapePrimitive::capsule(0.1, 0.1).is_err());
        assert!(ShapePrimitive::cuboid([1.0, f64::NAN, 1.0]).is_err());
        assert!(ShapePrimitive::sphere(1.0).unwrap().with_budget(2).is_err());
    }

    #[test]
    fn sphere_mesh_has_outward_winding() {
        let m = ShapePrimitive::sphere(1.0).unwrap().tessellate();
        for t in &m.triangles {
            let [a, b, c] = t.map(|i| m.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }
}
