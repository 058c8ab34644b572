//! Least-squares calibration of the response curve from `(distance, voltage)` samples.
//!
//! For a fixed `a2` the model is linear in `a1` and `a3`, so the fit first
//! scans `a2` on a log grid with the linear part solved in closed form,
//! refines `a2` by golden-section search, and finishes with a damped
//! Gauss-Newton polish on all three parameters (with `a2` in log space).

use nalgebra::{Matrix3, Vector3};

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitError {
    #[error("need at least 4 samples spanning a 2:1 distance ratio, got {0}")]
    InsufficientSamples(usize),
    #[error("rank-deficient samples: all distances are equal")]
    RankDeficient,
    #[error("non-finite or negative sample at index {0}")]
    BadSample(usize),
    #[error("fit did not converge after {0} iterations")]
    NoConvergence(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// RMS of the voltage residuals, V.
    pub residual_rms: f64,
    pub iterations: usize,
}

impl FitReport {
    pub fn predict(&self, d: f64) -> f64 {
        self.a1 / (1.0 + self.a2 * d * d) + self.a3
    }
}

pub fn fit_params(samples: &[(f64, f64)]) -> Result<FitReport, FitError> {
    if let Some(i) = samples
        .iter()
        .position(|&(d, v)| !(d.is_finite() && v.is_finite() && d >= 0.0))
    {
        return Err(FitError::BadSample(i));
    }
    let (d_min, d_max) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(d, _)| (lo.min(d), hi.max(d)));
    if samples.len() >= 2 && d_max - d_min <= 1e-12 * d_max.max(1e-12) {
        return Err(FitError::RankDeficient);
    }
    if samples.len() < 4 || d_max < 2.0 * d_min {
        return Err(FitError::InsufficientSamples(samples.len()));
    }

    // a2 * d_max^2 in [1e-3, 1e6] covers curves from nearly flat to a sharp knee
    let scale = 1.0 / (d_max * d_max);
    let grid: Vec<f64> = (0..=180).map(|i| scale * 10f64.powf(-3.0 + i as f64 / 20.0)).collect();
    let costs: Vec<f64> = grid
        .iter()
        .map(|&a2| linear_part(samples, a2).map_or(f64::INFINITY, |(_, _, c)| c))
        .collect();
    let best = (0..costs.len())
        .min_by(|&i, &j| costs[i].total_cmp(&costs[j]))
        .expect("grid is non-empty");
    if !costs[best].is_finite() {
        return Err(FitError::RankDeficient);
    }
    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let log_a2 = golden_section(lo, hi, |x| {
        linear_part(samples, x.exp()).map_or(f64::INFINITY, |(_, _, c)| c)
    });
    let (a1, a3, _) = linear_part(samples, log_a2.exp()).ok_or(FitError::RankDeficient)?;

    polish(samples, Vector3::new(a1, log_a2, a3))
}

/// Closed-form `(a1, a3)` for fixed `a2`, plus the residual sum of squares.
fn linear_part(samples: &[(f64, f64)], a2: f64) -> Option<(f64, f64, f64)> {
    let n = samples.len() as f64;
    let (mut sg, mut sgg, mut sv, mut sgv) = (0.0, 0.0, 0.0, 0.0);
    for &(d, v) in samples {
        let g = 1.0 / (1.0 + a2 * d * d);
        sg += g;
        sgg += g * g;
        sv += v;
        sgv += g * v;
    }
    let det = sgg * n - sg * sg;
    if det.abs() <= 1e-14 * sgg * n {
        return None;
    }
    let a1 = (sgv * n - sg * sv) / det;
    let a3 = (sgg * sv - sg * sgv) / det;
    let cost = samples
        .iter()
        .map(|&(d, v)| {
            let r = a1 / (1.0 + a2 * d * d) + a3 - v;
            r * r
        })
        .sum();
    Some((a1, a3, cost))
}

fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn cost_of(samples: &[(f64, f64)], p: &Vector3<f64>) -> f64 {
    let a2 = p[1].exp();
    samples
        .iter()
        .map(|&(d, v)| {
            let r = p[0] / (1.0 + a2 * d * d) + p[2] - v;
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt over `(a1, ln a2, a3)`.
fn polish(samples: &[(f64, f64)], mut p: Vector3<f64>) -> Result<FitReport, FitError> {
    let mut lambda = 1e-3;
    let mut cost = cost_of(samples, &p);
    for iter in 1..=MAX_ITERATIONS {
        let a2 = p[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(d, v) in samples {
            let g = 1.0 / (1.0 + a2 * d * d);
            let r = p[0] * g + p[2] - v;
            let j = Vector3::new(g, -p[0] * a2 * d * d * g * g, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        loop {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return Err(FitError::RankDeficient);
                    }
                    continue;
                }
            };
            let candidate = p + step;
            let new_cost = cost_of(samples, &candidate);
            if new_cost <= cost {
                let small = step.norm() <= 1e-12 * (1.0 + p.norm());
                p = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if small {
                    return Ok(report(samples, p, cost, iter));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // no decrease representable any more: we are at the minimum
                return Ok(report(samples, p, cost, iter));
            }
        }
    }
    Err(FitError::NoConvergence(MAX_ITERATIONS))
}

fn report(samples: &[(f64, f64)], p: Vector3<f64>, cost: f64, iterations: usize) -> FitReport {
    FitReport {
        a1: p[0],
        a2: p[1].exp(),
        a3: p[2],
        residual_rms: (cost / samples.len() as f64).sqrt(),
        iterations,
    }
}
