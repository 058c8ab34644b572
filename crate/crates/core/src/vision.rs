//! Silhouette-matching pose estimation.
//!
//! The score of a candidate pose is the signed pixel agreement between the
//! observed mask and the mask rendered at that pose. Ascent runs on a
//! supersampled (fractional-coverage) version of the score, which is
//! piecewise smooth instead of piecewise constant, and a pattern search on
//! the exact score finishes the job.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::geometry::{CameraModel, Pose6};
use crate::render::{Mask, RenderError, Renderer};
use crate::shape::ShapePrimitive;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VisionError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("lost track (score {0:.4})")]
    LostTrack(f64),
    #[error("empty pose lattice")]
    EmptyGrid,
    #[error("finite-difference steps must be positive")]
    BadStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionPoseEstimate {
    pub pose: Pose6,
    /// Exact overlap score at `pose`, in [-1, 1].
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionOptions {
    pub max_iterations: usize,
    /// Ascent stops once a step gains less than this.
    pub min_improvement: f64,
    /// Samples per pixel edge for the smoothed objective.
    pub supersample: usize,
    pub rotation_step_rad: f64,
    /// Halvings of the finite-difference step during the final pattern search.
    pub polish_levels: usize,
}

impl Default for VisionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            min_improvement: 1e-5,
            supersample: 2,
            rotation_step_rad: 0.5f64.to_radians(),
            polish_levels: 4,
        }
    }
}

/// `Σ 4(m − ½)(m̂ − ½) / (w·h)` over binarized masks, i.e. `1 − 2·hamming/(w·h)`.
pub fn mask_overlap(m: &Mask, m_hat: &Mask) -> Result<f64, VisionError> {
    m.same_dimensions(m_hat)?;
    let hamming = m
        .labels
        .iter()
        .zip(&m_hat.labels)
        .filter(|(&a, &b)| (a != 0) != (b != 0))
        .count();
    Ok(1.0 - 2.0 * hamming as f64 / m.len() as f64)
}

/// Overlap between a fixed mask and renders of the target at candidate poses.
pub struct OverlapObjective<'a> {
    renderer: Renderer,
    mask: &'a Mask,
    mask_count: f64,
    n: f64,
    supersample: usize,
}

impl<'a> OverlapObjective<'a> {
    pub fn new(
        mask: &'a Mask,
        shape: &ShapePrimitive,
        camera: &CameraModel,
        occluders: &[(ShapePrimitive, Pose6)],
        supersample: usize,
    ) -> Result<Self, VisionError> {
        if mask.width != camera.width || mask.height != camera.height {
            return Err(RenderError::DimensionMismatch(mask.width, mask.height, camera.width, camera.height).into());
        }
        Ok(Self {
            renderer: Renderer::new(shape, camera, occluders),
            mask,
            mask_count: mask.target_count() as f64,
            n: mask.len() as f64,
            supersample: supersample.max(1),
        })
    }

    pub fn with_supersample(&self, supersample: usize) -> Self {
        Self {
            renderer: self.renderer.clone(),
            mask: self.mask,
            mask_count: self.mask_count,
            n: self.n,
            supersample: supersample.max(1),
        }
    }

    /// At supersample 1 this equals `mask_overlap(mask, render(pose))` bit for bit.
    pub fn score(&self, pose: &Pose6) -> f64 {
        let cov = self.renderer.coverage(pose, self.supersample);
        let hamming = self.mask_count + cov.total() - 2.0 * cov.dot(self.mask);
        1.0 - 2.0 * hamming / self.n
    }

    /// Whether the target is visible at all at `pose`.
    pub fn renders_anything(&self, pose: &Pose6) -> bool {
        self.renderer.coverage(pose, 1).total() > 0.0
    }

    /// Central differences along each pose axis, in fixed axis order.
    pub fn gradient(&self, pose: &Pose6, steps: &Vector6<f64>) -> Vector6<f64> {
        let mut g = Vector6::zeros();
        for i in 0..6 {
            let mut d = Vector6::zeros();
            d[i] = steps[i];
            let plus = self.score(&pose.offset(&d));
            let minus = self.score(&pose.offset(&-d));
            g[i] = (plus - minus) / (2.0 * steps[i]);
        }
        g
    }
}

/// Translation steps that move the silhouette by about one pixel, plus a fixed rotation step.
pub fn default_steps(pose: &Pose6, camera: &CameraModel, rotation_step_rad: f64) -> Vector6<f64> {
    let depth = camera.to_camera(&pose.position).z.abs().max(0.05);
    let t = depth / camera.fx.max(camera.fy);
    Vector6::new(t, t, t, rotation_step_rad, rotation_step_rad, rotation_step_rad)
}

/// Gradient of the exact overlap score by central differences.
pub fn estimate_jacobian(
    mask: &Mask,
    pose: &Pose6,
    shape: &ShapePrimitive,
    camera: &CameraModel,
    occluders: &[(ShapePrimitive, Pose6)],
    steps: &Vector6<f64>,
) -> Result<Vector6<f64>, VisionError> {
    if steps.iter().any(|&s| !(s > 0.0)) {
        return Err(VisionError::BadStep);
    }
    Ok(OverlapObjective::new(mask, shape, camera, occluders, 1)?.gradient(pose, steps))
}

pub fn estimate_pose_vision(
    mask: &Mask,
    prior: &Pose6,
    shape: &ShapePrimitive,
    camera: &CameraModel,
    occluders: &[(ShapePrimitive, Pose6)],
    options: &VisionOptions,
) -> Result<VisionPoseEstimate, VisionError> {
    if mask.target_count() == 0 {
        return Err(VisionError::LostTrack(-1.0));
    }
    let smooth = OverlapObjective::new(mask, shape, camera, occluders, options.supersample)?;
    let exact = smooth.with_supersample(1);
    let steps = default_steps(prior, camera, options.rotation_step_rad);

    let prior_score = exact.score(prior);
    if prior_score == 1.0 {
        return Ok(VisionPoseEstimate {
            pose: *prior,
            score: prior_score,
            iterations: 0,
            converged: true,
        });
    }

    // Smooth ascent followed by an exact-score polish; a polish that finds
    // something the ascent missed restarts the ascent from there.
    let mut pose = *prior;
    let mut score = prior_score;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..MAX_ROUNDS {
        let budget = options.max_iterations - iterations;
        if budget == 0 {
            break;
        }
        let (ascended, used, done) = ascend(&smooth, &pose, &steps, budget, options.min_improvement);
        iterations += used;
        converged = done;
        let (polished, s) = polish(&exact, ascended, &steps, options.polish_levels);
        if s <= score {
            break;
        }
        pose = polished;
        score = s;
    }
    if score < 0.0 || !exact.renders_anything(&pose) {
        return Err(VisionError::LostTrack(score));
    }
    Ok(VisionPoseEstimate {
        pose,
        score,
        iterations,
        converged,
    })
}

/// Ascent-and-polish rounds per estimate.
const MAX_ROUNDS: usize = 4;

/// BFGS ascent of the smoothed score in coordinates scaled by the step sizes,
/// so that one unit is roughly one pixel (or one rotation step) on every axis.
/// Returns the final pose, iterations used and whether it stopped by itself.
fn ascend(
    smooth: &OverlapObjective,
    start: &Pose6,
    steps: &Vector6<f64>,
    max_iterations: usize,
    min_improvement: f64,
) -> (Pose6, usize, bool) {
    let mut pose = *start;
    let mut f = smooth.score(&pose);
    let mut g = smooth.gradient(&pose, steps).component_mul(steps);
    let mut h_inv = Matrix6::<f64>::identity();
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let mut dir = h_inv * g;
        if dir.dot(&g) <= 0.0 {
            h_inv = Matrix6::identity();
            dir = g;
        }
        let reach = dir.amax();
        if reach == 0.0 {
            return (pose, iterations, true);
        }
        let mut t = if iterations == 1 {
            MAX_STEP_UNITS / 2.0 / reach
        } else {
            (MAX_STEP_UNITS / reach).min(1.0)
        };
        let mut accepted = None;
        for _ in 0..10 {
            let candidate = pose.offset(&(dir * t).component_mul(steps));
            let fc = smooth.score(&candidate);
            if fc > f {
                accepted = Some((candidate, fc, dir * t));
                break;
            }
            t *= 0.5;
        }
        let Some((candidate, fc, step)) = accepted else {
            return (pose, iterations, true);
        };
        let gain = fc - f;
        pose = candidate;
        f = fc;
        if gain < min_improvement {
            return (pose, iterations, true);
        }
        let g_new = smooth.gradient(&pose, steps).component_mul(steps);
        // curvature pair for the minimization of -f
        let y = g - g_new;
        let sy = step.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let a = Matrix6::identity() - step * y.transpose() * rho;
            h_inv = a * h_inv * a.transpose() + step * step.transpose() * rho;
        }
        g = g_new;
    }
    (pose, iterations, false)
}

/// Longest ascent step, in units of the finite-difference step.
const MAX_STEP_UNITS: f64 = 8.0;

/// Doublings of the step the pattern search starts from.
const POLISH_COARSE_LEVELS: usize = 3;

/// Coordinate pattern search on the exact score with shrinking steps.
fn polish(objective: &OverlapObjective, mut pose: Pose6, steps: &Vector6<f64>, levels: usize) -> (Pose6, f64) {
    let mut best = objective.score(&pose);
    for level in 0..=levels + POLISH_COARSE_LEVELS {
        let scale = 0.5f64.powi(level as i32 - POLISH_COARSE_LEVELS as i32);
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..6 {
                for sign in [1.0, -1.0] {
                    let mut d = Vector6::zeros();
                    d[i] = sign * steps[i] * scale;
                    let candidate = pose.offset(&d);
                    let s = objective.score(&candidate);
                    if s > best {
                        best = s;
                        pose = candidate;
                        improved = true;
                    }
                }
            }
        }
    }
    (pose, best)
}

/// Regular grid of `points_per_axis`⁶ poses spanning `center ± half_extent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLattice {
    pub center: Pose6,
    pub half_extent: Vector6<f64>,
    pub points_per_axis: usize,
}

impl PoseLattice {
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(6)
    }

    pub fn is_empty(&self) -> bool {
        self.points_per_axis == 0
    }

    /// Pose at scan index `k`; axis 0 varies slowest.
    pub fn pose(&self, mut k: usize) -> Pose6 {
        let n = self.points_per_axis;
        let mut offset = Vector6::zeros();
        for axis in (0..6).rev() {
            let j = k % n;
            k /= n;
            offset[axis] = if n == 1 {
                0.0
            } else {
                self.half_extent[axis] * (2.0 * j as f64 / (n - 1) as f64 - 1.0)
            };
        }
        self.center.offset(&offset)
    }
}

/// Exhaustive argmax of the exact overlap; ties go to the earliest scan index.
pub fn brute_force_pose_search(
    mask: &Mask,
    grid: &PoseLattice,
    shape: &ShapePrimitive,
    camera: &CameraModel,
) -> Result<(Pose6, f64), VisionError> {
    if grid.is_empty() {
        return Err(VisionError::EmptyGrid);
    }
    let objective = OverlapObjective::new(mask, shape, camera, &[], 1)?;
    let scores: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| objective.score(&grid.pose(k)))
        .collect();
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok((grid.pose(best), scores[best]))
}
