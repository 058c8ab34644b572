//! Continuous-time observer fusing vision and haptic pose measurements.
//!
//! The state is the object pose itself. Both modalities observe it directly,
//! so `C = [I; I]`, and with no motion model beyond an optional known
//! velocity `A = 0`. The gain comes from the Riccati equation
//!
//! ```text
//! Ṗ = AP + PAᵀ + Q − P Cᵀ R⁻¹ C P,    K = P Cᵀ R⁻¹
//! ```
//!
//! integrated with explicit Euler steps. A modality without a usable
//! measurement gets the sentinel covariance instead of being dropped, so the
//! matrix shapes never change.

use nalgebra::{DMatrix, Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_error, wrap_angle, Pose6};
use crate::render::{Mask, RenderError};

/// Variance that marks a modality as carrying no information.
pub const SENTINEL_VARIANCE: f64 = 1e6;

/// Any covariance entry beyond this means the integration step was too large.
const DIVERGENCE_LIMIT: f64 = 1e9;

pub type Gain = SMatrix<f64, 6, 12>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FusionError {
    #[error("covariance diverged (|P| > 1e9); reduce the time step")]
    StepInstability,
    #[error("measurement covariance is singular")]
    SingularCovariance,
    #[error("neither modality has a valid measurement")]
    NoMeasurement,
    #[error("low-pass filter unstable: omega_n * dt = {0:.3} >= 1")]
    FilterInstability(f64),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{0}")]
    InvalidConfig(String),
}

/// Haptic covariance curve: `σ²_near · (1 + (d/range)^p)` inside the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HapticCurve {
    pub sigma2_near_position_m2: f64,
    pub sigma2_near_attitude_rad2: f64,
    pub growth_exponent: f64,
    pub range_m: f64,
}

impl Default for HapticCurve {
    fn default() -> Self {
        Self {
            sigma2_near_position_m2: 0.04,
            sigma2_near_attitude_rad2: 0.25,
            growth_exponent: 4.0,
            range_m: 0.20,
        }
    }
}

/// Observer weights. `w_v`, `q` and the haptic curve are relative weights:
/// only their ratios shape the gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Diagonal of Q, per second.
    #[serde(rename = "q_diag_per_s")]
    pub q_diag: [f64; 6],
    /// Diagonal of W_v.
    pub w_v_diag: [f64; 6],
    /// R_v never drops below this fraction of W_v, so it stays invertible at zero occlusion.
    #[serde(rename = "vision_floor_fraction")]
    pub vision_floor: f64,
    pub haptic: HapticCurve,
    pub omega_n_rad_s: f64,
    pub zeta: f64,
    #[serde(rename = "sentinel_variance")]
    pub sentinel: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            q_diag: [1e4, 1e4, 1e4, 2.0 * PI * 1e4, 2.0 * PI * 1e4, 2.0 * PI * 1e4],
            w_v_diag: [8.0, 8.0, 8.0, 16.0 * PI, 16.0 * PI, 16.0 * PI],
            vision_floor: 0.02,
            haptic: HapticCurve::default(),
            omega_n_rad_s: 120.0 * PI,
            zeta: std::f64::consts::FRAC_1_SQRT_2,
            sentinel: SENTINEL_VARIANCE,
        }
    }
}

impl NoiseConfig {
    pub fn q(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.q_diag))
    }

    pub fn w_v(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.w_v_diag))
    }

    pub fn sentinel_matrix(&self) -> Matrix6<f64> {
        Matrix6::identity() * self.sentinel
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |what: &str| Err(FusionError::InvalidConfig(what.to_string()));
        if self.q_diag.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
            return bad("Q must be finite and non-negative");
        }
        if self.w_v_diag.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return bad("W_v must be finite and non-negative");
        }
        if !(self.vision_floor > 0.0) {
            return bad("vision floor must be positive");
        }
        let h = &self.haptic;
        if !(h.sigma2_near_position_m2 > 0.0 && h.sigma2_near_attitude_rad2 > 0.0 && h.range_m > 0.0 && h.growth_exponent > 0.0) {
            return bad("haptic curve parameters must be positive");
        }
        if !(self.omega_n_rad_s > 0.0 && self.zeta > 0.0) {
            return bad("omega_n and zeta must be positive");
        }
        if !(self.sentinel > 0.0) {
            return bad("sentinel must be positive");
        }
        Ok(())
    }
}

/// One modality's reading; `None` means no usable measurement this step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityReading {
    pub pose: Option<Pose6>,
    pub covariance: Matrix6<f64>,
}

impl ModalityReading {
    pub fn valid(pose: Pose6, covariance: Matrix6<f64>) -> Self {
        Self {
            pose: Some(pose),
            covariance,
        }
    }

    pub fn invalid(sentinel: f64) -> Self {
        Self {
            pose: None,
            covariance: Matrix6::identity() * sentinel,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.pose.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementPair {
    pub vision: ModalityReading,
    pub haptic: ModalityReading,
}

/// Second-order low-pass memory: two transposed direct-form II states per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassState {
    pub z: [[f64; 2]; 6],
    /// Last unwrapped attitude input.
    pub unwrapped: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    pub estimate: Pose6,
    pub covariance: Matrix6<f64>,
    pub t: f64,
    pub lpf: LowPassState,
}

impl ObserverState {
    /// Starts at `x0` with the low-pass filter already settled there.
    pub fn new(x0: Pose6, p0: Matrix6<f64>, config: &NoiseConfig, dt: f64) -> Result<Self, FusionError> {
        let coeffs = Biquad::new(config.omega_n_rad_s, config.zeta, dt)?;
        Ok(Self {
            estimate: x0,
            covariance: p0,
            t: 0.0,
            lpf: coeffs.settled(&x0),
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.covariance - self.covariance.transpose()).amax() <= tol
    }
}

/// `x̂ ← x̂ + u·dt`, `P ← P + Q·dt`.
pub fn predict(state: &ObserverState, u: &Vector6<f64>, dt: f64, q: &Matrix6<f64>) -> Result<ObserverState, FusionError> {
    if !(dt > 0.0) {
        return Err(FusionError::BadTimeStep(dt));
    }
    Ok(ObserverState {
        estimate: state.estimate.offset(&(u * dt)),
        covariance: state.covariance + q * dt,
        t: state.t + dt,
        lpf: state.lpf,
    })
}

/// Symmetrizes and clips negative eigenvalues to zero.
fn symmetrize_and_floor(p: DMatrix<f64>) -> Result<DMatrix<f64>, FusionError> {
    let sym = (&p + p.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(FusionError::StepInstability);
    }
    if sym.clone().cholesky().is_some() {
        return Ok(sym);
    }
    let eig = sym.symmetric_eigen();
    let floored = eig.eigenvalues.map(|e| e.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// One explicit Euler step of `Ṗ = AP + PAᵀ + Q − P Cᵀ R⁻¹ C P`.
pub fn riccati_step(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>, FusionError> {
    if !(dt > 0.0) {
        return Err(FusionError::BadTimeStep(dt));
    }
    let r_inv = r.clone().cholesky().ok_or(FusionError::SingularCovariance)?.inverse();
    let pc = p * c.transpose();
    let p_dot = a * p + p * a.transpose() + q - &pc * r_inv * pc.transpose();
    symmetrize_and_floor(p + p_dot * dt)
}

fn invert_spd(m: &Matrix6<f64>) -> Result<Matrix6<f64>, FusionError> {
    m.cholesky().map(|c| c.inverse()).ok_or(FusionError::SingularCovariance)
}

/// `K = P Cᵀ R⁻¹` with `C = [I; I]` and `R = diag(R_v, R_c)`.
pub fn gain(p: &Matrix6<f64>, r_v: &Matrix6<f64>, r_c: &Matrix6<f64>) -> Result<Gain, FusionError> {
    let mut k = Gain::zeros();
    k.fixed_columns_mut::<6>(0).copy_from(&(p * invert_spd(r_v)?));
    k.fixed_columns_mut::<6>(6).copy_from(&(p * invert_spd(r_c)?));
    Ok(k)
}

/// Correction step over `dt`: `x̂ += K z dt`, then the measurement part of the Riccati equation.
pub fn update(state: &ObserverState, meas: &MeasurementPair, dt: f64, sentinel: f64) -> Result<ObserverState, FusionError> {
    if !(dt > 0.0) {
        return Err(FusionError::BadTimeStep(dt));
    }
    if !meas.vision.is_valid() && !meas.haptic.is_valid() {
        return Err(FusionError::NoMeasurement);
    }
    let sentinel_cov = Matrix6::identity() * sentinel;
    let innovation = |m: &ModalityReading| match m.pose {
        Some(y) => (pose_error(&y, &state.estimate), m.covariance),
        None => (Vector6::zeros(), sentinel_cov),
    };
    let (z_v, r_v) = innovation(&meas.vision);
    let (z_h, r_c) = innovation(&meas.haptic);
    let k = gain(&state.covariance, &r_v, &r_c)?;
    let mut z = SMatrix::<f64, 12, 1>::zeros();
    z.fixed_rows_mut::<6>(0).copy_from(&z_v);
    z.fixed_rows_mut::<6>(6).copy_from(&z_h);
    let dx = k * z * dt;

    // with C = [I; I], Cᵀ R⁻¹ C = R_v⁻¹ + R_c⁻¹
    let info = invert_spd(&r_v)? + invert_spd(&r_c)?;
    let p = state.covariance;
    let p_next = p - p * info * p * dt;
    let p_next = symmetrize_and_floor(DMatrix::from_column_slice(6, 6, p_next.as_slice()))?;

    Ok(ObserverState {
        estimate: state.estimate.offset(&dx),
        covariance: Matrix6::from_column_slice(p_next.as_slice()),
        t: state.t,
        lpf: state.lpf,
    })
}

/// Fraction of the predicted silhouette missing from the observed mask, clamped to [0, 1].
pub fn occlusion_scalar(m_hat: &Mask, m: &Mask) -> Result<f64, FusionError> {
    m_hat.same_dimensions(m)?;
    let predicted = m_hat.target_count();
    if predicted == 0 {
        return Err(RenderError::EmptyReference.into());
    }
    let observed = m.target_count();
    Ok(((predicted as f64 - observed as f64) / predicted as f64).clamp(0.0, 1.0))
}

/// `R_v = s · W_v` with `s` the occluded share of the predicted mask `m_hat`.
pub fn compute_r_v(m_hat: &Mask, m: &Mask, w_v: &Matrix6<f64>) -> Result<Matrix6<f64>, FusionError> {
    Ok(w_v * occlusion_scalar(m_hat, m)?)
}

/// Distance-dependent haptic covariance around the estimate `x_hat`.
///
/// `unobservable` marks attitude axes the haptic estimator cannot see; they
/// always get the sentinel.
pub fn compute_r_c(
    x_hat: &Pose6,
    sensor_positions: &[nalgebra::Vector3<f64>],
    curve: &HapticCurve,
    unobservable: [bool; 3],
    sentinel: f64,
) -> Matrix6<f64> {
    let d = sensor_positions
        .iter()
        .map(|s| (s - x_hat.position).norm())
        .fold(f64::INFINITY, f64::min);
    if !(d <= curve.range_m) {
        return Matrix6::identity() * sentinel;
    }
    let growth = 1.0 + (d / curve.range_m).powf(curve.growth_exponent);
    let mut diag = Vector6::zeros();
    for i in 0..3 {
        diag[i] = curve.sigma2_near_position_m2 * growth;
        diag[3 + i] = if unobservable[i] {
            sentinel
        } else {
            curve.sigma2_near_attitude_rad2 * growth
        };
    }
    Matrix6::from_diagonal(&diag)
}

/// Bilinear discretization of `ωₙ² / (s² + 2ζωₙ s + ωₙ²)`, prewarped at ωₙ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn new(omega_n: f64, zeta: f64, dt: f64) -> Result<Self, FusionError> {
        if !(dt > 0.0) {
            return Err(FusionError::BadTimeStep(dt));
        }
        if omega_n * dt >= 1.0 {
            return Err(FusionError::FilterInstability(omega_n * dt));
        }
        let k = omega_n / (omega_n * dt / 2.0).tan();
        let w2 = omega_n * omega_n;
        let a0 = k * k + 2.0 * zeta * omega_n * k + w2;
        let b0 = w2 / a0;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (w2 - k * k) / a0, (k * k - 2.0 * zeta * omega_n * k + w2) / a0],
        })
    }

    pub fn step(&self, z: &mut [f64; 2], x: f64) -> f64 {
        let y = self.b[0] * x + z[0];
        z[0] = self.b[1] * x - self.a[0] * y + z[1];
        z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Memory for which a constant input `x` is already the output.
    pub fn steady(&self, x: f64) -> [f64; 2] {
        [x * (1.0 - self.b[0]), x * (self.b[2] - self.a[1])]
    }

    pub fn settled(&self, pose: &Pose6) -> LowPassState {
        let v = pose.to_vector();
        let mut z = [[0.0; 2]; 6];
        for i in 0..6 {
            z[i] = self.steady(v[i]);
        }
        LowPassState {
            z,
            unwrapped: Some([v[3], v[4], v[5]]),
        }
    }
}

/// Filters the fused pose stream; attitude is unwrapped before filtering.
pub fn lowpass(state: &mut ObserverState, raw: &Pose6, dt: f64, config: &NoiseConfig) -> Result<Pose6, FusionError> {
    let filter = Biquad::new(config.omega_n_rad_s, config.zeta, dt)?;
    let v = raw.to_vector();
    let mut att = [v[3], v[4], v[5]];
    if let Some(prev) = state.lpf.unwrapped {
        for i in 0..3 {
            att[i] = prev[i] + wrap_angle(att[i] - prev[i]);
        }
    }
    state.lpf.unwrapped = Some(att);
    let input = [v[0], v[1], v[2], att[0], att[1], att[2]];
    let mut out = Vector6::zeros();
    for i in 0..6 {
        out[i] = filter.step(&mut state.lpf.z[i], input[i]);
    }
    Ok(Pose6::from_vector(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn state(p: f64) -> ObserverState {
        ObserverState::new(Pose6::identity(), Matrix6::identity() * p, &NoiseConfig::default(), 1e-3).unwrap()
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn predict_without_input_only_grows_p() {
        let q = Matrix6::from_diagonal(&Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0));
        let s0 = state(0.5);
        let mut s = s0;
        for _ in 0..100 {
            s = predict(&s, &Vector6::zeros(), 0.01, &q).unwrap();
        }
        assert_eq!(s.estimate, s0.estimate);
        let expected = s0.covariance.trace() + 100.0 * 0.01 * q.trace();
        assert!((s.covariance.trace() - expected).abs() < 1e-9);
        assert!((s.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_integrates_velocity() {
        let s = predict(&state(1.0), &Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0), 0.1, &Matrix6::zeros()).unwrap();
        assert!((s.estimate.position.x - 0.1).abs() < 1e-15);
        assert_eq!(predict(&state(1.0), &Vector6::zeros(), 0.0, &Matrix6::zeros()), Err(FusionError::BadTimeStep(0.0)));
    }

    fn scalar_steady_state(q: f64, r: f64) -> f64 {
        let a = scalar(0.0);
        let c = scalar(1.0);
        let (q, r) = (scalar(q), scalar(r));
        let mut p = scalar(0.0);
        let dt = 0.1 * (r[(0, 0)] / q[(0, 0)]).sqrt().min(1.0);
        for _ in 0..1_000_000 {
            let next = riccati_step(&p, &a, &c, &q, &r, dt).unwrap();
            let done = (next[(0, 0)] - p[(0, 0)]).abs() < 1e-15;
            p = next;
            if done {
                break;
            }
        }
        p[(0, 0)]
    }

    #[test]
    fn scalar_riccati_reaches_sqrt_qr() {
        assert!((scalar_steady_state(0.04, 0.01) - 0.02).abs() < 1e-9);
    }

    #[test]
    fn no_noise_no_information_keeps_p() {
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 0.7]));
        let next = riccati_step(
            &p,
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 2),
            &(DMatrix::identity(2, 2) * 1e30),
            0.01,
        )
        .unwrap();
        assert!((next - p).amax() < 1e-20);
    }

    #[test]
    fn riccati_flags_divergence_and_singular_r() {
        let p = scalar(1.0);
        assert_eq!(
            riccati_step(&p, &scalar(0.0), &scalar(1.0), &scalar(1e12), &scalar(1.0), 1.0),
            Err(FusionError::StepInstability)
        );
        assert_eq!(
            riccati_step(&p, &scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(0.0), 1.0),
            Err(FusionError::SingularCovariance)
        );
    }

    #[test]
    fn gain_blocks() {
        let p = Matrix6::identity() * 0.5;
        let r = Matrix6::identity() * 0.25;
        let k = gain(&p, &r, &r).unwrap();
        assert!((k.fixed_columns::<6>(0) - Matrix6::identity() * 2.0).amax() < 1e-12);
        assert!((k.fixed_columns::<6>(6) - Matrix6::identity() * 2.0).amax() < 1e-12);

        let k = gain(&p, &r, &(Matrix6::identity() * SENTINEL_VARIANCE)).unwrap();
        let vision = k.fixed_columns::<6>(0).amax();
        assert!(k.fixed_columns::<6>(6).amax() < 1e-4 * vision);

        assert_eq!(gain(&Matrix6::zeros(), &r, &r).unwrap(), Gain::zeros());
        assert_eq!(gain(&p, &Matrix6::zeros(), &r), Err(FusionError::SingularCovariance));
    }

    #[test]
    fn zero_innovation_keeps_estimate() {
        let s = state(1.0);
        let r = Matrix6::identity() * 0.1;
        let meas = MeasurementPair {
            vision: ModalityReading::valid(s.estimate, r),
            haptic: ModalityReading::valid(s.estimate, r),
        };
        assert_eq!(update(&s, &meas, 1e-3, SENTINEL_VARIANCE).unwrap().estimate, s.estimate);
        let none = MeasurementPair {
            vision: ModalityReading::invalid(SENTINEL_VARIANCE),
            haptic: ModalityReading::invalid(SENTINEL_VARIANCE),
        };
        assert_eq!(update(&s, &none, 1e-3, SENTINEL_VARIANCE), Err(FusionError::NoMeasurement));
    }

    #[test]
    fn vision_only_matches_single_modality_filter() {
        let s = state(2.0);
        let y = Pose6::from_xyz_rpy(0.1, -0.2, 0.05, 0.1, 0.0, -0.3);
        let r_v = Matrix6::from_diagonal(&Vector6::new(0.5, 0.6, 0.7, 1.0, 1.1, 1.2));
        let meas = MeasurementPair {
            vision: ModalityReading::valid(y, r_v),
            haptic: ModalityReading::invalid(SENTINEL_VARIANCE),
        };
        let dt = 1e-3;
        let fused = update(&s, &meas, dt, SENTINEL_VARIANCE).unwrap();

        let k = s.covariance * r_v.try_inverse().unwrap();
        let expected = s.estimate.offset(&(k * pose_error(&y, &s.estimate) * dt));
        let p = DMatrix::from_column_slice(6, 6, s.covariance.as_slice());
        let p_expected = riccati_step(
            &p,
            &DMatrix::zeros(6, 6),
            &DMatrix::identity(6, 6),
            &DMatrix::zeros(6, 6),
            &DMatrix::from_column_slice(6, 6, r_v.as_slice()),
            dt,
        )
        .unwrap();
        assert!((fused.estimate.to_vector() - expected.to_vector()).amax() < 1e-6);
        assert!((DMatrix::from_column_slice(6, 6, fused.covariance.as_slice()) - p_expected).amax() < 1e-6);
    }

    /// Static target, both modalities unbiased; returns squared errors of (fused, vision, haptic) on x.
    fn static_run(seed: u64) -> (f64, f64, f64) {
        let config = NoiseConfig::default();
        let truth = Pose6::from_xyz_rpy(0.3, 0.1, 1.0, 0.2, 0.1, 0.0);
        let (sv, sh) = (0.01, 0.006);
        let r_v = Matrix6::identity() * 0.2;
        let r_c = Matrix6::identity() * 0.08;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nv = Normal::new(0.0, sv).unwrap();
        let nh = Normal::new(0.0, sh).unwrap();
        let dt = 1e-3;
        let mk = || ObserverState::new(truth, Matrix6::identity(), &config, dt).unwrap();
        let (mut fused, mut vis, mut hap) = (mk(), mk(), mk());
        let invalid = ModalityReading::invalid(config.sentinel);
        let mut acc = (0.0, 0.0, 0.0);
        let mut n = 0.0;
        for step in 0..500 {
            let yv = truth.offset(&Vector6::from_fn(|_, _| nv.sample(&mut rng)));
            let yh = truth.offset(&Vector6::from_fn(|_, _| nh.sample(&mut rng)));
            let run = |s: &ObserverState, v: ModalityReading, h: ModalityReading| {
                let p = predict(s, &Vector6::zeros(), dt, &config.q()).unwrap();
                update(&p, &MeasurementPair { vision: v, haptic: h }, dt, config.sentinel).unwrap()
            };
            fused = run(&fused, ModalityReading::valid(yv, r_v), ModalityReading::valid(yh, r_c));
            vis = run(&vis, ModalityReading::valid(yv, r_v), invalid);
            hap = run(&hap, invalid, ModalityReading::valid(yh, r_c));
            if step >= 100 {
                let e = |s: &ObserverState| (s.estimate.position - truth.position).norm_squared();
                acc.0 += e(&fused);
                acc.1 += e(&vis);
                acc.2 += e(&hap);
                n += 1.0;
            }
        }
        (acc.0 / n, acc.1 / n, acc.2 / n)
    }

    #[test]
    fn fusion_beats_each_modality_on_a_static_target() {
        let mut wins = 0;
        for seed in 0..100 {
            let (f, v, h) = static_run(seed);
            if f <= v && f <= h {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn r_v_examples() {
        let w = NoiseConfig::default().w_v();
        let mut full = Mask::new(10, 10);
        for i in 0..50 {
            full.labels[i] = 1;
        }
        assert_eq!(compute_r_v(&full, &full, &w).unwrap(), Matrix6::zeros());
        let mut partial = full.clone();
        for i in 0..20 {
            partial.labels[i] = 0;
        }
        assert!((compute_r_v(&full, &partial, &w).unwrap() - w * 0.4).amax() < 1e-12);
        assert_eq!(compute_r_v(&full, &Mask::new(10, 10), &w).unwrap(), w);
        assert!(compute_r_v(&Mask::new(10, 10), &full, &w).is_err());
    }

    #[test]
    fn r_v_scalar_is_the_occlusion_fraction() {
        use crate::render::{degrade_mask, occlusion_fraction};
        let mut truth = Mask::new(40, 30);
        for y in 5..25 {
            for x in 8..30 {
                truth.set(x, y, 1);
            }
        }
        for seed in 0..20 {
            let target = seed as f64 / 21.0;
            let degraded = degrade_mask(&truth, target, 0.0, seed).unwrap();
            assert_eq!(occlusion_scalar(&truth, &degraded).unwrap(), occlusion_fraction(&truth, &degraded).unwrap());
        }
    }

    #[test]
    fn r_c_curve() {
        let curve = HapticCurve::default();
        let x = Pose6::identity();
        let at = |d: f64| compute_r_c(&x, &[Vector3::new(d, 0.0, 0.0)], &curve, [false, false, true], SENTINEL_VARIANCE);
        let near = at(0.0);
        assert_eq!(near[(0, 0)], curve.sigma2_near_position_m2);
        assert_eq!(near[(3, 3)], curve.sigma2_near_attitude_rad2);
        assert_eq!(near[(5, 5)], SENTINEL_VARIANCE);
        assert!((at(curve.range_m)[(1, 1)] - 2.0 * curve.sigma2_near_position_m2).abs() < 1e-15);
        assert_eq!(at(2.0 * curve.range_m), Matrix6::identity() * SENTINEL_VARIANCE);
        // nearest sensor wins
        let two = compute_r_c(&x, &[Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()], &curve, [false; 3], SENTINEL_VARIANCE);
        assert_eq!(two[(0, 0)], curve.sigma2_near_position_m2);
    }

    #[test]
    fn lowpass_settles_on_a_step() {
        let config = NoiseConfig::default();
        let dt = 1e-4;
        let mut s = ObserverState::new(Pose6::identity(), Matrix6::identity(), &config, dt).unwrap();
        let target = Pose6::from_xyz_rpy(1.0, -2.0, 0.5, 0.3, -0.2, 0.1);
        let settle = 5.0 / (config.zeta * config.omega_n_rad_s);
        let steps = (settle / dt).ceil() as usize;
        let mut out = Pose6::identity();
        for _ in 0..steps {
            out = lowpass(&mut s, &target, dt, &config).unwrap();
        }
        let err = (out.to_vector() - target.to_vector()).abs();
        let scale = target.to_vector().abs();
        for i in 0..6 {
            assert!(err[i] <= 0.01 * scale[i], "axis {i}: {err:?}");
        }
    }

    #[test]
    fn lowpass_zero_in_zero_out() {
        let config = NoiseConfig::default();
        let mut s = ObserverState::new(Pose6::identity(), Matrix6::identity(), &config, 1e-3).unwrap();
        for _ in 0..100 {
            assert_eq!(lowpass(&mut s, &Pose6::identity(), 1e-3, &config).unwrap(), Pose6::identity());
        }
        assert_eq!(lowpass(&mut s, &Pose6::identity(), 0.01, &config), Err(FusionError::FilterInstability(config.omega_n_rad_s * 0.01)));
    }

    fn amplitude_at(freq_hz: f64, filter: &Biquad, dt: f64) -> f64 {
        let mut z = [0.0; 2];
        let n = (20.0 / (freq_hz * dt)) as usize;
        let mut peak: f64 = 0.0;
        for k in 0..n {
            let x = (2.0 * std::f64::consts::PI * freq_hz * k as f64 * dt).sin();
            let y = filter.step(&mut z, x);
            if k > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        peak
    }

    #[test]
    fn lowpass_minus_three_db_near_sixty_hz() {
        let config = NoiseConfig::default();
        let dt = 1e-4;
        let filter = Biquad::new(config.omega_n_rad_s, config.zeta, dt).unwrap();
        let target = std::f64::consts::FRAC_1_SQRT_2;
        // bisect on the monotone magnitude response
        let (mut lo, mut hi) = (10.0, 300.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if amplitude_at(mid, &filter, dt) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 60.0).abs() / 60.0 < 0.05, "cutoff {lo} Hz");
    }

    #[test]
    fn lowpass_unwraps_attitude() {
        let config = NoiseConfig::default();
        let dt = 1e-3;
        let start = Pose6::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, 3.1);
        let mut s = ObserverState::new(start, Matrix6::identity(), &config, dt).unwrap();
        // input crosses ±π; the output must stay near π, not swing through 0
        for k in 0..200 {
            let yaw = 3.1 + 0.001 * k as f64;
            let out = lowpass(&mut s, &Pose6::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, yaw), dt, &config).unwrap();
            assert!(wrap_angle(out.attitude.z - yaw).abs() < 1e-2, "{k}: {}", out.attitude.z);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn scalar_riccati_property(q in 1e-3f64..10.0, r in 1e-3f64..10.0) {
            let p = scalar_steady_state(q, r);
            prop_assert!((p - (q * r).sqrt()).abs() < 1e-6, "{p} vs {}", (q * r).sqrt());
        }
    }

    #[test]
    fn riccati_keeps_p_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = DMatrix::identity(6, 6);
        let c = DMatrix::<f64>::from_fn(12, 6, |i, j| if i % 6 == j { 1.0 } else { 0.0 });
        for _ in 0..10_000 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-0.5..0.5));
            let l = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let q = &l * l.transpose();
            let m = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
            let r = &m * m.transpose() + DMatrix::identity(12, 12) * 0.1;
            p = riccati_step(&p, &a, &c, &q, &r, 1e-3).unwrap();
            assert_eq!(p, p.transpose());
            let min_eig = p.clone().symmetric_eigen().eigenvalues.min();
            assert!(min_eig >= -1e-9, "{min_eig}");
        }
    }
}
