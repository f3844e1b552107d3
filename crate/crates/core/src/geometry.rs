//! Noise-free channel-parameter model for the three source types.
//!
//! A measurement is the vector `[pseudorange, doa_el, doa_az, dod_el, dod_az]`.
//! Delays are expressed in meters (speed of light folded in) and the clock
//! bias of the vehicle is a range offset in meters. DOA is measured in the
//! vehicle frame, so its azimuth depends on the heading; DOD is measured in the
//! global frame at the base station.
//!
//! Reflecting surfaces are represented by their virtual anchor (VA), i.e. the
//! mirror image of the BS. The surface is the perpendicular bisector plane of
//! the segment BS-VA.

use std::f64::consts::{PI, TAU};

use nalgebra::{SMatrix, Vector3, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::VehicleState;

/// Central difference step used for numerical Jacobians (m).
pub const JACOBIAN_STEP_M: f64 = 1e-3;

/// Rows of the measurement vector that hold angles.
pub const ANGLE_ROWS: [bool; 5] = [false, true, true, true, true];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("line from virtual anchor to vehicle is parallel to the reflecting plane")]
    ParallelToSurface,
    #[error("virtual anchor coincides with the base station")]
    AnchorAtBaseStation,
    #[error("coincident points: {0}")]
    Coincident(&'static str),
    #[error("non-finite geometry input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceType {
    Bs,
    Va,
    Sp,
}

impl SourceType {
    pub const ALL: [SourceType; 3] = [SourceType::Bs, SourceType::Va, SourceType::Sp];
    /// Source types that are mapped (the BS location is known).
    pub const MAPPED: [SourceType; 2] = [SourceType::Va, SourceType::Sp];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceType::Bs => "BS",
            SourceType::Va => "VA",
            SourceType::Sp => "SP",
        }
    }
}

impl std::fmt::Display for SourceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub kind: SourceType,
    pub location: Vector3<f64>,
}

impl Source {
    pub fn new(kind: SourceType, location: Vector3<f64>) -> Self {
        Self { kind, location }
    }
}

/// Channel parameters of one propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Measurement(pub Vector5<f64>);

impl Measurement {
    pub fn new(pseudorange: f64, doa_el: f64, doa_az: f64, dod_el: f64, dod_az: f64) -> Self {
        Measurement(Vector5::new(pseudorange, doa_el, doa_az, dod_el, dod_az))
    }

    pub fn pseudorange(&self) -> f64 {
        self.0[0]
    }
    pub fn doa_el(&self) -> f64 {
        self.0[1]
    }
    pub fn doa_az(&self) -> f64 {
        self.0[2]
    }
    pub fn dod_el(&self) -> f64 {
        self.0[3]
    }
    pub fn dod_az(&self) -> f64 {
        self.0[4]
    }

    pub fn as_vector(&self) -> &Vector5<f64> {
        &self.0
    }

    /// `self - other` with the angle rows wrapped to (-pi, pi].
    pub fn residual(&self, other: &Measurement) -> Vector5<f64> {
        wrapped_difference(&self.0, &other.0, ANGLE_ROWS)
    }

    /// Wraps all angle entries to (-pi, pi].
    pub fn wrapped(mut self) -> Self {
        for (i, wrap) in ANGLE_ROWS.iter().enumerate() {
            if *wrap {
                self.0[i] = wrap_angle(self.0[i]);
            }
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// `a - b` with the rows selected by `mask` wrapped to (-pi, pi].
pub fn wrapped_difference(a: &Vector5<f64>, b: &Vector5<f64>, mask: [bool; 5]) -> Vector5<f64> {
    let mut d = a - b;
    for (i, wrap) in mask.iter().enumerate() {
        if *wrap {
            d[i] = wrap_angle(d[i]);
        }
    }
    d
}

/// Source-to-measurement map used by the filter. The radio geometry is the
/// production implementation; tests substitute linear surrogates.
pub trait MeasurementModel: Sync {
    fn measure(
        &self,
        kind: SourceType,
        location: &Vector3<f64>,
        state: &VehicleState,
    ) -> Result<Measurement, GeometryError>;

    /// Closed-form starting point for inverting a measurement to a source location.
    fn back_project(&self, kind: SourceType, z: &Measurement, state: &VehicleState) -> Option<Vector3<f64>>;

    /// Location of the base station (the fixed, known source).
    fn base_station(&self) -> Vector3<f64>;

    /// Which measurement rows are angles and must be wrapped in residuals.
    fn angle_rows(&self) -> [bool; 5] {
        ANGLE_ROWS
    }

    fn residual(&self, a: &Vector5<f64>, b: &Vector5<f64>) -> Vector5<f64> {
        wrapped_difference(a, b, self.angle_rows())
    }
}

/// Radio geometry around a single base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioGeometry {
    pub bs: Vector3<f64>,
}

impl RadioGeometry {
    pub fn new(bs: Vector3<f64>) -> Self {
        Self { bs }
    }
}

impl MeasurementModel for RadioGeometry {
    fn measure(
        &self,
        kind: SourceType,
        location: &Vector3<f64>,
        state: &VehicleState,
    ) -> Result<Measurement, GeometryError> {
        measure(kind, location, &self.bs, state)
    }

    fn back_project(&self, kind: SourceType, z: &Measurement, state: &VehicleState) -> Option<Vector3<f64>> {
        back_project(kind, z, &self.bs, state)
    }

    fn base_station(&self) -> Vector3<f64> {
        self.bs
    }
}

fn azimuth(d: &Vector3<f64>) -> f64 {
    d.y.atan2(d.x)
}

fn elevation(d: &Vector3<f64>, norm: f64) -> f64 {
    (d.z / norm).clamp(-1.0, 1.0).asin()
}

fn unit_direction(el: f64, az: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Noise-free channel parameters of the path generated by `location` of type `kind`.
pub fn measure(
    kind: SourceType,
    location: &Vector3<f64>,
    bs: &Vector3<f64>,
    state: &VehicleState,
) -> Result<Measurement, GeometryError> {
    let v = &state.position;
    if !(location.iter().chain(v.iter()).all(|c| c.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let (range, departure, arrival) = match kind {
        SourceType::Bs => {
            // LOS: `location` is the BS itself.
            let dep = v - location;
            (dep.norm(), dep, location - v)
        }
        SourceType::Va => {
            let xs = incidence_point(location, bs, v)?;
            let arr = location - v;
            (arr.norm(), xs - bs, arr)
        }
        SourceType::Sp => {
            let arr = location - v;
            let dep = location - bs;
            (dep.norm() + arr.norm(), dep, arr)
        }
    };
    let dep_norm = departure.norm();
    let arr_norm = arrival.norm();
    if dep_norm == 0.0 {
        return Err(GeometryError::Coincident("departure point at base station"));
    }
    if arr_norm == 0.0 {
        return Err(GeometryError::Coincident("arrival point at vehicle"));
    }
    Ok(Measurement::new(
        range + state.clock_bias,
        elevation(&arrival, arr_norm),
        wrap_angle(azimuth(&arrival) - state.heading),
        elevation(&departure, dep_norm),
        wrap_angle(azimuth(&departure)),
    ))
}

/// Point where the segment VA-vehicle crosses the reflecting plane.
pub fn incidence_point(va: &Vector3<f64>, bs: &Vector3<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let axis = bs - va;
    let axis_norm = axis.norm();
    if axis_norm == 0.0 {
        return Err(GeometryError::AnchorAtBaseStation);
    }
    let u = axis / axis_norm;
    let f = (bs + va) * 0.5;
    let line = v - va;
    let den = line.dot(&u);
    if den.abs() <= 1e-12 * line.norm().max(1.0) {
        return Err(GeometryError::ParallelToSurface);
    }
    Ok(va + line * ((f - va).dot(&u) / den))
}

/// Virtual anchor implied by an incidence point seen from vehicle position `v`.
pub fn va_from_incidence(
    xs: &Vector3<f64>,
    bs: &Vector3<f64>,
    v: &Vector3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let leg = xs - v;
    let leg_norm = leg.norm();
    if leg_norm == 0.0 {
        return Err(GeometryError::Coincident("incidence point at vehicle"));
    }
    let path = leg_norm + (bs - xs).norm();
    Ok(v + leg * (path / leg_norm))
}

/// Central-difference Jacobian of the measurement with respect to the source location.
pub fn jacobian<M: MeasurementModel + ?Sized>(
    model: &M,
    kind: SourceType,
    location: &Vector3<f64>,
    state: &VehicleState,
) -> Result<SMatrix<f64, 5, 3>, GeometryError> {
    numerical_jacobian(model, kind, location, state, JACOBIAN_STEP_M)
}

pub fn numerical_jacobian<M: MeasurementModel + ?Sized>(
    model: &M,
    kind: SourceType,
    location: &Vector3<f64>,
    state: &VehicleState,
    step: f64,
) -> Result<SMatrix<f64, 5, 3>, GeometryError> {
    let mut h = SMatrix::<f64, 5, 3>::zeros();
    let mask = model.angle_rows();
    for c in 0..3 {
        let mut plus = *location;
        let mut minus = *location;
        plus[c] += step;
        minus[c] -= step;
        let zp = model.measure(kind, &plus, state)?;
        let zm = model.measure(kind, &minus, state)?;
        let col = wrapped_difference(&zp.0, &zm.0, mask) / (2.0 * step);
        h.set_column(c, &col);
    }
    Ok(h)
}

/// Closed-form source location from a single measurement, given the vehicle state.
///
/// VA: the anchor sits at `range` along the DOA ray. SP: the source lies on the
/// bistatic ellipsoid; it is intersected with the DOA ray from the vehicle and
/// with the DOD ray from the BS, and the valid intersections are averaged.
pub fn back_project(
    kind: SourceType,
    z: &Measurement,
    bs: &Vector3<f64>,
    state: &VehicleState,
) -> Option<Vector3<f64>> {
    let v = &state.position;
    let range = z.pseudorange() - state.clock_bias;
    if !range.is_finite() || range <= 0.0 {
        return None;
    }
    let doa = unit_direction(z.doa_el(), z.doa_az() + state.heading);
    match kind {
        SourceType::Bs => Some(*bs),
        SourceType::Va => Some(v + doa * range),
        SourceType::Sp => {
            let dod = unit_direction(z.dod_el(), z.dod_az());
            let from_vehicle = ellipsoid_ray(v, &doa, bs, range);
            let from_bs = ellipsoid_ray(bs, &dod, v, range);
            match (from_vehicle, from_bs) {
                (Some(a), Some(b)) => Some((a + b) * 0.5),
                (Some(a), None) | (None, Some(a)) => Some(a),
                (None, None) => None,
            }
        }
    }
}

/// Point `origin + t * dir` (t > 0) with `t + |origin + t*dir - focus| = range`.
fn ellipsoid_ray(origin: &Vector3<f64>, dir: &Vector3<f64>, focus: &Vector3<f64>, range: f64) -> Option<Vector3<f64>> {
    let w = origin - focus;
    let den = 2.0 * (range + w.dot(dir));
    if den.abs() < 1e-12 {
        return None;
    }
    let t = (range * range - w.norm_squared()) / den;
    (t > 0.0 && t < range).then(|| origin + dir * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn state_at(x: f64, y: f64, z: f64, heading: f64, bias: f64) -> VehicleState {
        VehicleState {
            position: Vector3::new(x, y, z),
            heading,
            speed: 0.0,
            turn_rate: 0.0,
            clock_bias: bias,
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15));
        assert!(close(wrap_angle(-7.0), -7.0 + TAU, 1e-15));
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn los_measurement() {
        let bs = Vector3::zeros();
        let s = state_at(100.0, 0.0, 0.0, 0.0, 0.0);
        let z = measure(SourceType::Bs, &bs, &bs, &s).unwrap();
        let expected = [100.0, 0.0, PI, 0.0, 0.0];
        for (a, b) in z.0.iter().zip(expected) {
            assert!(close(*a, b, 1e-12), "{z:?}");
        }
    }

    #[test]
    fn va_measurement_and_incidence() {
        let bs = Vector3::zeros();
        let va = Vector3::new(200.0, 0.0, 0.0);
        let s = state_at(50.0, 0.0, 0.0, 0.0, 0.0);
        let z = measure(SourceType::Va, &va, &bs, &s).unwrap();
        for (a, b) in z.0.iter().zip([150.0, 0.0, 0.0, 0.0, 0.0]) {
            assert!(close(*a, b, 1e-12), "{z:?}");
        }
        let xs = incidence_point(&va, &bs, &s.position).unwrap();
        assert!((xs - Vector3::new(100.0, 0.0, 0.0)).norm() < 1e-12);
        let via = (bs - xs).norm() + (xs - s.position).norm();
        assert!(close(via, (va - s.position).norm(), 1e-12));
    }

    #[test]
    fn sp_measurement() {
        let bs = Vector3::zeros();
        let sp = Vector3::new(50.0, 50.0, 0.0);
        let s = state_at(100.0, 0.0, 0.0, 0.0, 0.0);
        let z = measure(SourceType::Sp, &sp, &bs, &s).unwrap();
        let expected = [141.421_356_237_309_5, 0.0, 3.0 * PI / 4.0, 0.0, PI / 4.0];
        for (a, b) in z.0.iter().zip(expected) {
            assert!(close(*a, b, 1e-9), "{z:?}");
        }
    }

    #[test]
    fn incidence_point_on_plane_when_vehicle_on_plane() {
        let bs = Vector3::zeros();
        let va = Vector3::new(200.0, 0.0, 0.0);
        let v = Vector3::new(100.0, 20.0, 0.0);
        let xs = incidence_point(&va, &bs, &v).unwrap();
        assert!((xs - v).norm() < 1e-12);
    }

    #[test]
    fn incidence_point_reference_geometry() {
        let bs = Vector3::new(0.0, 0.0, 40.0);
        let va = Vector3::new(0.0, 200.0, 40.0);
        let v = Vector3::new(70.7285, 0.0, 0.0);
        let xs = incidence_point(&va, &bs, &v).unwrap();
        assert!(close(xs.y, 100.0, 1e-9));
        // collinear with VA and vehicle
        let cross = (xs - va).cross(&(v - va));
        assert!(cross.norm() < 1e-6);
    }

    #[test]
    fn degenerate_reflection_is_error() {
        let bs = Vector3::zeros();
        let va = Vector3::new(200.0, 0.0, 0.0);
        // vehicle-VA line parallel to the plane x = 100
        let s = state_at(200.0, 50.0, 0.0, 0.0, 0.0);
        assert_eq!(
            measure(SourceType::Va, &va, &bs, &s),
            Err(GeometryError::ParallelToSurface)
        );
        assert_eq!(
            incidence_point(&bs, &bs, &s.position),
            Err(GeometryError::AnchorAtBaseStation)
        );
    }

    #[test]
    fn va_from_incidence_examples() {
        let bs = Vector3::zeros();
        let va = va_from_incidence(&Vector3::new(100.0, 0.0, 0.0), &bs, &Vector3::new(50.0, 0.0, 0.0)).unwrap();
        assert!((va - Vector3::new(200.0, 0.0, 0.0)).norm() < 1e-12);

        let va = va_from_incidence(&Vector3::new(1.0, 1.0, 0.0), &bs, &Vector3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((va - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);

        let v = Vector3::new(3.0, 4.0, 5.0);
        assert!(va_from_incidence(&v, &bs, &v).is_err());
    }

    #[test]
    fn sp_range_row_vanishes_at_symmetric_point() {
        let model = RadioGeometry::new(Vector3::zeros());
        let s = state_at(100.0, 0.0, 0.0, 0.0, 0.0);
        let h = jacobian(&model, SourceType::Sp, &Vector3::new(50.0, 0.0, 0.0), &s).unwrap();
        assert!(h[(0, 0)].abs() < 1e-9, "{h}");
    }

    #[test]
    fn sp_elevation_grows_with_height() {
        let model = RadioGeometry::new(Vector3::zeros());
        let s = state_at(100.0, 0.0, 0.0, 0.0, 0.0);
        let h = jacobian(&model, SourceType::Sp, &Vector3::new(50.0, 50.0, 0.0), &s).unwrap();
        assert!(h[(1, 2)] > 0.0);
    }

    #[test]
    fn jacobian_finite_for_reference_scenario() {
        let model = RadioGeometry::new(Vector3::new(0.0, 0.0, 40.0));
        let s = state_at(70.7285, 0.0, 0.0, PI / 2.0, 300.0);
        let sources = [
            (SourceType::Va, Vector3::new(200.0, 0.0, 40.0)),
            (SourceType::Va, Vector3::new(-200.0, 0.0, 40.0)),
            (SourceType::Va, Vector3::new(0.0, 200.0, 40.0)),
            (SourceType::Va, Vector3::new(0.0, -200.0, 40.0)),
            (SourceType::Sp, Vector3::new(65.0, 65.0, 20.0)),
            (SourceType::Sp, Vector3::new(-65.0, -65.0, 5.0)),
        ];
        for (kind, loc) in sources {
            let h = jacobian(&model, kind, &loc, &s).unwrap();
            assert!(h.iter().all(|v| v.is_finite()), "{kind} {h}");
        }
    }

    #[test]
    fn back_projection_inverts_noise_free_measurements() {
        let bs = Vector3::new(0.0, 0.0, 40.0);
        let s = state_at(70.7285, 3.0, 0.0, 1.2, 300.0);
        for (kind, loc) in [
            (SourceType::Va, Vector3::new(200.0, 0.0, 40.0)),
            (SourceType::Va, Vector3::new(0.0, -200.0, 40.0)),
            (SourceType::Sp, Vector3::new(65.0, 65.0, 12.0)),
        ] {
            let z = measure(kind, &loc, &bs, &s).unwrap();
            let guess = back_project(kind, &z, &bs, &s).unwrap();
            assert!((guess - loc).norm() < 1e-6, "{kind}: {guess} vs {loc}");
        }
    }

    #[test]
    fn back_projection_rejects_negative_range() {
        let bs = Vector3::zeros();
        let s = state_at(10.0, 0.0, 0.0, 0.0, 300.0);
        let z = Measurement::new(100.0, 0.0, 0.0, 0.0, 0.0);
        assert!(back_project(SourceType::Va, &z, &bs, &s).is_none());
    }
}
