//! Cubature Kalman filter pieces: the forward update of a map component and
//! the inverse conversion of a measurement into a birth component.

use nalgebra::{Matrix3, Matrix3x5, Matrix5, SMatrix, SVector, Vector3, Vector5};
use thiserror::Error;

use crate::geometry::{jacobian, GeometryError, Measurement, MeasurementModel, SourceType};
use crate::gm::{symmetrize, GaussianComponent, NumericError};
use crate::motion::VehicleState;

/// Step mixing factor of the iterative inversion.
pub const ML_STEP_MIXING: f64 = 0.2;
/// Iteration cap of the iterative inversion.
pub const ML_MAX_ITERATIONS: usize = 50;
/// Relative cost improvement below which the inversion is considered converged.
pub const ML_RELATIVE_TOLERANCE: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CkfError {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("numeric: {0}")]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BirthError {
    #[error("no geometric starting point for the measurement")]
    NoInitialPoint,
    #[error("inversion cost is not finite at the starting point")]
    NonFiniteCost,
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("numeric: {0}")]
    Numeric(#[from] NumericError),
}

/// Equally weighted cubature points `mean +- sqrt(d) G e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureSet<const D: usize> {
    pub points: Vec<SVector<f64, D>>,
}

impl<const D: usize> CubatureSet<D> {
    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    pub fn mean(&self) -> SVector<f64, D> {
        self.points.iter().sum::<SVector<f64, D>>() * self.weight()
    }

    pub fn covariance(&self) -> SMatrix<f64, D, D> {
        let m = self.mean();
        self.points
            .iter()
            .map(|p| (p - m) * (p - m).transpose())
            .sum::<SMatrix<f64, D, D>>()
            * self.weight()
    }
}

/// Lower-triangular `G` with `G G^T = cov`. A positive semi-definite input that
/// fails plain Cholesky is retried with a small diagonal jitter.
pub fn sqrt_factor<const D: usize>(cov: &SMatrix<f64, D, D>) -> Result<SMatrix<f64, D, D>, NumericError> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite("covariance"));
    }
    if let Some(ch) = cov.cholesky() {
        return Ok(ch.l());
    }
    let scale = cov
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut jitter = scale * 1e-12;
    while jitter <= scale * 1e-6 {
        let shifted = cov + SMatrix::<f64, D, D>::identity() * jitter;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    Err(NumericError::NotPositiveDefinite("covariance"))
}

pub fn cubature_points<const D: usize>(
    mean: &SVector<f64, D>,
    cov: &SMatrix<f64, D, D>,
) -> Result<CubatureSet<D>, NumericError> {
    let g = sqrt_factor(cov)? * (D as f64).sqrt();
    let mut points = Vec::with_capacity(2 * D);
    for i in 0..D {
        points.push(mean + g.column(i));
    }
    for i in 0..D {
        points.push(mean - g.column(i));
    }
    Ok(CubatureSet { points })
}

/// Moments of the CKF update of one map component.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateComponents {
    /// Measurement predicted at the prior mean, `h(x)`.
    pub reference: Vector5<f64>,
    /// Cubature mean of the predicted measurement.
    pub predicted: Vector5<f64>,
    pub s_zz: Matrix5<f64>,
    pub s_xz: Matrix3x5<f64>,
    pub gain: Matrix3x5<f64>,
    pub p_post: Matrix3<f64>,
    s_zz_inv: Matrix5<f64>,
    log_norm: f64,
    mask: [bool; 5],
}

impl UpdateComponents {
    /// `log N(z; h(x), S_zz)`.
    pub fn log_likelihood(&self, z: &Measurement) -> f64 {
        let r = wrapped(&z.0, &self.reference, self.mask);
        self.log_norm - 0.5 * r.dot(&(self.s_zz_inv * r))
    }

    /// `x + K (z - Z)`.
    pub fn posterior_mean(&self, prior_mean: &Vector3<f64>, z: &Measurement) -> Vector3<f64> {
        prior_mean + self.gain * wrapped(&z.0, &self.predicted, self.mask)
    }
}

fn wrapped(a: &Vector5<f64>, b: &Vector5<f64>, mask: [bool; 5]) -> Vector5<f64> {
    crate::geometry::wrapped_difference(a, b, mask)
}

/// `log N(r; 0, S)` for a residual already expressed as a difference.
pub fn gaussian_log_density(r: &Vector5<f64>, s: &Matrix5<f64>) -> Result<f64, NumericError> {
    let ch = s
        .cholesky()
        .ok_or(NumericError::NotPositiveDefinite("innovation covariance"))?;
    let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (5.0 * LN_2PI + log_det) - 0.5 * r.dot(&ch.solve(r)))
}

/// CKF moments for updating `comp` with a measurement of source type `kind`.
/// Angle spreads are wrapped relative to the measurement at the prior mean.
pub fn update_components<M: MeasurementModel + ?Sized>(
    model: &M,
    comp: &GaussianComponent,
    state: &VehicleState,
    kind: SourceType,
    sigma: &Matrix5<f64>,
) -> Result<UpdateComponents, CkfError> {
    let mask = model.angle_rows();
    let reference = model.measure(kind, &comp.mean, state)?.0;
    let cub = cubature_points(&comp.mean, &comp.cov)?;
    let w = cub.weight();
    let mut dev = [Vector5::zeros(); 6];
    for (d, x) in dev.iter_mut().zip(&cub.points) {
        *d = wrapped(&model.measure(kind, x, state)?.0, &reference, mask);
    }
    let dbar = dev.iter().sum::<Vector5<f64>>() * w;
    let xbar = cub.mean();
    let mut s_zz = *sigma;
    let mut s_xz = Matrix3x5::<f64>::zeros();
    for (d, x) in dev.iter().zip(&cub.points) {
        let dz = d - dbar;
        s_zz += dz * dz.transpose() * w;
        s_xz += (x - xbar) * dz.transpose() * w;
    }
    s_zz = (s_zz + s_zz.transpose()) * 0.5;
    let ch = s_zz
        .cholesky()
        .ok_or(NumericError::NotPositiveDefinite("innovation covariance"))?;
    let s_zz_inv = ch.inverse();
    let gain = s_xz * s_zz_inv;
    let p_post = symmetrize(&(comp.cov - gain * s_zz * gain.transpose()));
    let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut predicted = reference + dbar;
    for (i, wrap) in mask.iter().enumerate() {
        if *wrap {
            predicted[i] = crate::geometry::wrap_angle(predicted[i]);
        }
    }
    Ok(UpdateComponents {
        reference,
        predicted,
        s_zz,
        s_xz,
        gain,
        p_post,
        s_zz_inv,
        log_norm: -0.5 * (5.0 * LN_2PI + log_det),
        mask,
    })
}

/// Weighted least-squares cost of explaining `z` by a source at `x`.
pub fn inversion_cost<M: MeasurementModel + ?Sized>(
    model: &M,
    kind: SourceType,
    x: &Vector3<f64>,
    z: &Measurement,
    state: &VehicleState,
    sigma_inv: &Matrix5<f64>,
) -> f64 {
    match model.measure(kind, x, state) {
        Ok(h) => {
            let r = model.residual(&h.0, &z.0);
            let c = r.dot(&(sigma_inv * r));
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Result of one iterative inversion, with the accepted cost sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MlTrace {
    pub point: Vector3<f64>,
    pub costs: Vec<f64>,
}

/// Source location best explaining `z_c`, by damped Gauss-Newton started from
/// the closed-form back-projection. Iterates until the cost increases and
/// returns the last iterate that did not increase it.
pub fn iterative_ml_point<M: MeasurementModel + ?Sized>(
    model: &M,
    z_c: &Measurement,
    state: &VehicleState,
    kind: SourceType,
    sigma: &Matrix5<f64>,
) -> Result<Vector3<f64>, BirthError> {
    let start = model.back_project(kind, z_c, state).ok_or(BirthError::NoInitialPoint)?;
    iterative_ml_from(model, z_c, state, kind, sigma, start).map(|t| t.point)
}

pub fn iterative_ml_from<M: MeasurementModel + ?Sized>(
    model: &M,
    z_c: &Measurement,
    state: &VehicleState,
    kind: SourceType,
    sigma: &Matrix5<f64>,
    start: Vector3<f64>,
) -> Result<MlTrace, BirthError> {
    let sigma_inv = sigma
        .cholesky()
        .ok_or(NumericError::NotPositiveDefinite("measurement covariance"))?
        .inverse();
    let mut x = start;
    let mut cost = inversion_cost(model, kind, &x, z_c, state, &sigma_inv);
    if !cost.is_finite() {
        return Err(BirthError::NonFiniteCost);
    }
    let mut costs = vec![cost];
    for _ in 0..ML_MAX_ITERATIONS {
        let Ok(h_jac) = jacobian(model, kind, &x, state) else {
            break;
        };
        let Ok(h) = model.measure(kind, &x, state) else {
            break;
        };
        let r = model.residual(&h.0, &z_c.0);
        let normal = h_jac.transpose() * sigma_inv * h_jac;
        let rhs = h_jac.transpose() * sigma_inv * r;
        let Some(step) = normal.cholesky().map(|c| c.solve(&rhs)) else {
            break;
        };
        let candidate = x - step * ML_STEP_MIXING;
        let next_cost = inversion_cost(model, kind, &candidate, z_c, state, &sigma_inv);
        // also stops on a NaN cost
        if next_cost.partial_cmp(&cost).is_none_or(|o| o.is_gt()) {
            break;
        }
        let converged = cost - next_cost <= ML_RELATIVE_TOLERANCE * cost;
        x = candidate;
        cost = next_cost;
        costs.push(cost);
        if converged {
            break;
        }
    }
    Ok(MlTrace { point: x, costs })
}

/// Birth mean and covariance for measurement `z` interpreted as a source of
/// type `kind`, from the inverted measurement cubature points.
pub fn invert_measurement<M: MeasurementModel + ?Sized>(
    model: &M,
    z: &Measurement,
    state: &VehicleState,
    kind: SourceType,
    sigma: &Matrix5<f64>,
) -> Result<(Vector3<f64>, Matrix3<f64>), BirthError> {
    let cub = cubature_points(&z.0, sigma)?;
    let mut xs = CubatureSet::<3> {
        points: Vec::with_capacity(cub.points.len()),
    };
    for zc in &cub.points {
        xs.points
            .push(iterative_ml_point(model, &Measurement(*zc), state, kind, sigma)?);
    }
    let mean = xs.mean();
    let cov = symmetrize(&xs.covariance());
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite("birth moments").into());
    }
    Ok((mean, cov))
}
