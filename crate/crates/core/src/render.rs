//! Deterministic software rasterizer for segmentation masks.
//!
//! Meshes are moved into the camera frame, clipped against a near plane,
//! projected, and filled with barycentric edge tests at pixel centers. Depth
//! is compared as interpolated `1/z`, which is exact under perspective.
//! Everything runs in f64 with a fixed traversal order, so identical inputs
//! give identical masks on every platform.

use std::collections::VecDeque;
use std::io::{self, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraModel, Pose6, RigidTransform};
use crate::shape::{Mesh, ShapePrimitive};

/// Label written for pixels owned by the tracked object.
pub const TARGET_LABEL: u8 = 1;

const NEAR_PLANE_M: f64 = 1e-4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("reference mask has no target pixels")]
    EmptyReference,
    #[error("mask has no target pixels to degrade")]
    Infeasible,
    #[error("{0}")]
    InvalidArgument(String),
}

/// Per-pixel labels, row-major; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, RenderError> {
        if labels.len() != width * height {
            return Err(RenderError::InvalidArgument(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    /// Number of non-background pixels.
    pub fn target_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn binarized(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|&l| u8::from(l != 0)).collect(),
        }
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|&l| u8::from(l == 0)).collect(),
        }
    }

    pub fn same_dimensions(&self, other: &Mask) -> Result<(), RenderError> {
        if self.width != other.width || self.height != other.height {
            return Err(RenderError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Binary PGM (P5), one raw label byte per pixel.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        let maxval = self.labels.iter().copied().max().unwrap_or(0).max(1);
        write!(out, "P5\n{} {}\n{}\n", self.width, self.height, maxval)?;
        out.write_all(&self.labels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.labels.len() + 32);
        self.write_pgm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// Fractional target coverage of a rectangular pixel window; zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Coverage {
    pub fn empty() -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: 0,
            height: 0,
            values: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Σ mask·coverage over the window, with the mask binarized.
    pub fn dot(&self, mask: &Mask) -> f64 {
        let mut acc = 0.0;
        for row in 0..self.height {
            let base = (self.y0 + row) * mask.width + self.x0;
            let cov = &self.values[row * self.width..(row + 1) * self.width];
            for (c, &l) in cov.iter().zip(&mask.labels[base..base + self.width]) {
                if l != 0 {
                    acc += c;
                }
            }
        }
        acc
    }
}

/// A screen-space triangle: `(u, v, 1/z)` per vertex.
type ScreenTri = [[f64; 3]; 3];

/// Shape tessellated once for repeated rendering.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub mesh: Mesh,
}

impl PreparedShape {
    pub fn new(shape: &ShapePrimitive) -> Self {
        Self {
            mesh: shape.tessellate(),
        }
    }

    fn screen_triangles(&self, pose: &Pose6, camera: &CameraModel, out: &mut Vec<ScreenTri>) {
        let to_cam = camera.extrinsic.compose(&RigidTransform::from_pose(pose));
        let cam_verts: Vec<Vector3<f64>> = self.mesh.vertices.iter().map(|v| to_cam.apply(v)).collect();
        let project = |p: &Vector3<f64>| -> [f64; 3] {
            let inv_z = 1.0 / p.z;
            [camera.fx * p.x * inv_z + camera.cx, camera.fy * p.y * inv_z + camera.cy, inv_z]
        };
        let mut poly: Vec<Vector3<f64>> = Vec::with_capacity(4);
        for t in &self.mesh.triangles {
            let tri = [
                cam_verts[t[0] as usize],
                cam_verts[t[1] as usize],
                cam_verts[t[2] as usize],
            ];
            if tri.iter().all(|p| p.z >= NEAR_PLANE_M) {
                out.push([project(&tri[0]), project(&tri[1]), project(&tri[2])]);
                continue;
            }
            if tri.iter().all(|p| p.z < NEAR_PLANE_M) {
                continue;
            }
            clip_near(&tri, &mut poly);
            let first = project(&poly[0]);
            for k in 1..poly.len() - 1 {
                out.push([first, project(&poly[k]), project(&poly[k + 1])]);
            }
        }
    }
}

/// Sutherland-Hodgman against z >= near for one triangle.
fn clip_near(tri: &[Vector3<f64>; 3], out: &mut Vec<Vector3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_PLANE_M;
        let b_in = b.z >= NEAR_PLANE_M;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let s = (NEAR_PLANE_M - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * s;
            p.z = NEAR_PLANE_M;
            out.push(p);
        }
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }
}

/// Pixels whose centers may fall inside the triangles, clamped to the image.
fn bounding_rect(tris: &[ScreenTri], width: usize, height: usize) -> Rect {
    let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in tris {
        for p in t {
            lo_u = lo_u.min(p[0]);
            lo_v = lo_v.min(p[1]);
            hi_u = hi_u.max(p[0]);
            hi_v = hi_v.max(p[1]);
        }
    }
    pixel_span(lo_u, lo_v, hi_u, hi_v, width, height)
}

fn pixel_span(lo_u: f64, lo_v: f64, hi_u: f64, hi_v: f64, width: usize, height: usize) -> Rect {
    let clamp = |x: f64, n: usize| -> usize {
        if x.is_nan() || x <= 0.0 {
            0
        } else if x >= n as f64 {
            n
        } else {
            x as usize
        }
    };
    // centers at i + 0.5 lie inside [lo, hi] for i in [ceil(lo - 0.5), floor(hi - 0.5)]
    Rect {
        x0: clamp((lo_u - 0.5).ceil(), width),
        y0: clamp((lo_v - 0.5).ceil(), height),
        x1: clamp((hi_u - 0.5).floor() + 1.0, width),
        y1: clamp((hi_v - 0.5).floor() + 1.0, height),
    }
}

/// Depth and label buffers over a sub-rectangle of the image.
struct Canvas {
    rect: Rect,
    stride: usize,
    depth: Vec<f64>,
    labels: Vec<u8>,
}

impl Canvas {
    fn new(rect: Rect) -> Self {
        let stride = rect.x1 - rect.x0;
        let n = stride * (rect.y1 - rect.y0);
        Self {
            rect,
            stride,
            depth: vec![0.0; n],
            labels: vec![0; n],
        }
    }

    fn draw(&mut self, tris: &[ScreenTri], label: u8) {
        for t in tris {
            self.draw_triangle(t, label);
        }
    }

    fn draw_triangle(&mut self, t: &ScreenTri, label: u8) {
        let [a, b, c] = *t;
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if !(area.abs() > 1e-12) {
            return;
        }
        let inv_area = 1.0 / area;
        let span = pixel_span(
            a[0].min(b[0]).min(c[0]),
            a[1].min(b[1]).min(c[1]),
            a[0].max(b[0]).max(c[0]),
            a[1].max(b[1]).max(c[1]),
            self.rect.x1,
            self.rect.y1,
        );
        let x0 = span.x0.max(self.rect.x0);
        let y0 = span.y0.max(self.rect.y0);
        for y in y0..span.y1 {
            let py = y as f64 + 0.5;
            let row = (y - self.rect.y0) * self.stride;
            for x in x0..span.x1 {
                let px = x as f64 + 0.5;
                let w0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) * inv_area;
                let w1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) * inv_area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let inv_z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = row + (x - self.rect.x0);
                if inv_z > self.depth[idx] {
                    self.depth[idx] = inv_z;
                    self.labels[idx] = label;
                }
            }
        }
    }
}

/// Target shape, camera and fixed occluders, prepared for many renders.
#[derive(Debug, Clone)]
pub struct Renderer {
    pub camera: CameraModel,
    target: PreparedShape,
    occluders: Vec<(PreparedShape, Pose6)>,
}

impl Renderer {
    pub fn new(shape: &ShapePrimitive, camera: &CameraModel, occluders: &[(ShapePrimitive, Pose6)]) -> Self {
        Self {
            camera: *camera,
            target: PreparedShape::new(shape),
            occluders: occluders.iter().map(|(s, p)| (PreparedShape::new(s), *p)).collect(),
        }
    }

    /// Renders the target into a canvas covering only its screen footprint.
    fn canvas(&self, pose: &Pose6, camera: &CameraModel) -> Option<Canvas> {
        let mut tris = Vec::with_capacity(self.target.mesh.triangles.len());
        self.target.screen_triangles(pose, camera, &mut tris);
        let rect = bounding_rect(&tris, camera.width, camera.height);
        if rect.is_empty() {
            return None;
        }
        let mut canvas = Canvas::new(rect);
        canvas.draw(&tris, TARGET_LABEL);
        for (shape, occ_pose) in &self.occluders {
            tris.clear();
            shape.screen_triangles(occ_pose, camera, &mut tris);
            canvas.draw(&tris, 0);
        }
        Some(canvas)
    }

    pub fn render(&self, pose: &Pose6) -> Mask {
        let mut mask = Mask::new(self.camera.width, self.camera.height);
        if let Some(canvas) = self.canvas(pose, &self.camera) {
            let r = canvas.rect;
            for y in r.y0..r.y1 {
                let src = &canvas.labels[(y - r.y0) * canvas.stride..][..canvas.stride];
                mask.labels[y * mask.width + r.x0..y * mask.width + r.x1].copy_from_slice(src);
            }
        }
        mask
    }

    /// Target coverage at `supersample`² samples per pixel, box-averaged.
    pub fn coverage(&self, pose: &Pose6, supersample: usize) -> Coverage {
        let s = supersample.max(1);
        let hi_cam = if s == 1 { self.camera } else { self.camera.scaled(s) };
        let Some(canvas) = self.canvas(pose, &hi_cam) else {
            return Coverage::empty();
        };
        let r = canvas.rect;
        let x0 = r.x0 / s;
        let y0 = r.y0 / s;
        let x1 = r.x1.div_ceil(s);
        let y1 = r.y1.div_ceil(s);
        let (w, h) = (x1 - x0, y1 - y0);
        let mut values = vec![0.0; w * h];
        let weight = 1.0 / (s * s) as f64;
        for y in r.y0..r.y1 {
            let row = &canvas.labels[(y - r.y0) * canvas.stride..][..canvas.stride];
            let out_row = (y / s - y0) * w;
            for (i, &l) in row.iter().enumerate() {
                if l != 0 {
                    values[out_row + (r.x0 + i) / s - x0] += weight;
                }
            }
        }
        Coverage {
            x0,
            y0,
            width: w,
            height: h,
            values,
        }
    }
}

/// Target pixels get label 1 where the target is the nearest surface.
pub fn render_mask(
    shape: &ShapePrimitive,
    pose: &Pose6,
    camera: &CameraModel,
    occluders: &[(ShapePrimitive, Pose6)],
) -> Mask {
    Renderer::new(shape, camera, occluders).render(pose)
}

/// Share of the unoccluded silhouette that is hidden in `visible`.
pub fn occlusion_fraction(full: &Mask, visible: &Mask) -> Result<f64, RenderError> {
    full.same_dimensions(visible)?;
    let total = full.target_count();
    if total == 0 {
        return Err(RenderError::EmptyReference);
    }
    let seen = visible.target_count();
    Ok((total as f64 - seen as f64) / total as f64).map(|f| f.clamp(0.0, 1.0))
}

/// Stand-in for a segmentation network: cuts a contiguous hole of
/// `round(occlusion_target · N)` target pixels, then flips every other pixel
/// with probability `pixel_noise`.
pub fn degrade_mask(truth: &Mask, occlusion_target: f64, pixel_noise: f64, seed: u64) -> Result<Mask, RenderError> {
    if !(0.0..1.0).contains(&occlusion_target) {
        return Err(RenderError::InvalidArgument(format!(
            "occlusion target {occlusion_target} outside [0, 1)"
        )));
    }
    if !(0.0..=0.1).contains(&pixel_noise) {
        return Err(RenderError::InvalidArgument(format!(
            "pixel noise {pixel_noise} outside [0, 0.1]"
        )));
    }
    let (w, h) = (truth.width, truth.height);
    let is_target = |i: usize| truth.labels[i] != 0;
    let total = truth.target_count();
    if total == 0 {
        return Err(RenderError::Infeasible);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = truth.clone();
    let mut removed = vec![false; truth.len()];
    let to_remove = (occlusion_target * total as f64).round() as usize;

    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    let mut count = 0;
    while count < to_remove {
        // seeds: target pixels touching background (or the image border)
        let boundary: Vec<usize> = (0..truth.len())
            .filter(|&i| is_target(i) && !removed[i])
            .filter(|&i| {
                neighbours(i)
                    .iter()
                    .any(|&j| j == usize::MAX || !is_target(j) || removed[j])
            })
            .collect();
        let start = boundary[rng.random_range(0..boundary.len())];
        let mut queue = VecDeque::from([start]);
        removed[start] = true;
        count += 1;
        while let Some(i) = queue.pop_front() {
            if count == to_remove {
                break;
            }
            for j in neighbours(i) {
                if count == to_remove {
                    break;
                }
                if j != usize::MAX && is_target(j) && !removed[j] {
                    removed[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
    }
    for (i, label) in out.labels.iter_mut().enumerate() {
        if removed[i] {
            *label = 0;
        } else if pixel_noise > 0.0 && rng.random::<f64>() < pixel_noise {
            *label = if *label == 0 { TARGET_LABEL } else { 0 };
        }
    }
    Ok(out)
}
