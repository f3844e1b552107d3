//! Vehicle state and the coordinated-turn (constant turn rate and velocity) model.

use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;

/// Below this turn rate (rad/s) the straight-line limit of the CT model is used.
pub const TURN_RATE_EPS: f64 = 1e-6;

/// Position (m), heading (rad), speed (m/s), turn rate (rad/s), clock bias (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub heading: f64,
    pub speed: f64,
    pub turn_rate: f64,
    pub clock_bias: f64,
}

impl VehicleState {
    pub fn new(position: Vector3<f64>, heading: f64, speed: f64, turn_rate: f64, clock_bias: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            speed,
            turn_rate,
            clock_bias,
        }
    }

    /// `[x, y, z, heading, speed, turn_rate, clock_bias]`
    pub fn to_vector(&self) -> SVector<f64, 7> {
        SVector::<f64, 7>::from_column_slice(&[
            self.position.x,
            self.position.y,
            self.position.z,
            self.heading,
            self.speed,
            self.turn_rate,
            self.clock_bias,
        ])
    }

    pub fn from_vector(v: &SVector<f64, 7>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
    }
}

/// Process noise standard deviations. Only x, y, heading and clock bias are
/// perturbed; z, speed and turn rate are carried unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub sigma_x_m: f64,
    pub sigma_y_m: f64,
    pub sigma_heading_rad: f64,
    pub sigma_bias_m: f64,
}

impl ProcessNoise {
    pub const ZERO: ProcessNoise = ProcessNoise {
        sigma_x_m: 0.0,
        sigma_y_m: 0.0,
        sigma_heading_rad: 0.0,
        sigma_bias_m: 0.0,
    };

    /// Diagonal of the 7x7 covariance `Q`.
    pub fn covariance_diagonal(&self) -> [f64; 7] {
        [
            self.sigma_x_m.powi(2),
            self.sigma_y_m.powi(2),
            0.0,
            self.sigma_heading_rad.powi(2),
            0.0,
            0.0,
            self.sigma_bias_m.powi(2),
        ]
    }
}

/// Deterministic CT step over `dt` seconds.
pub fn transition(state: &VehicleState, dt: f64) -> VehicleState {
    let VehicleState {
        heading: a,
        speed,
        turn_rate: rho,
        ..
    } = *state;
    let (dx, dy) = if rho.abs() < TURN_RATE_EPS {
        // midpoint heading keeps the limit second-order accurate in rho
        let mid = a + 0.5 * rho * dt;
        (speed * dt * mid.cos(), speed * dt * mid.sin())
    } else {
        let r = speed / rho;
        let a1 = a + rho * dt;
        (r * (a1.sin() - a.sin()), r * (a.cos() - a1.cos()))
    };
    VehicleState {
        position: state.position + Vector3::new(dx, dy, 0.0),
        heading: wrap_angle(a + rho * dt),
        ..*state
    }
}

/// CT step plus Gaussian process noise drawn from `rng`.
pub fn sample_transition<R: Rng + ?Sized>(
    state: &VehicleState,
    dt: f64,
    noise: &ProcessNoise,
    rng: &mut R,
) -> VehicleState {
    let mut next = transition(state, dt);
    let mut draw = |sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            sigma * rng.sample::<f64, _>(StandardNormal)
        }
    };
    next.position.x += draw(noise.sigma_x_m);
    next.position.y += draw(noise.sigma_y_m);
    next.heading = wrap_angle(next.heading + draw(noise.sigma_heading_rad));
    next.clock_bias += draw(noise.sigma_bias_m);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn reference_vehicle_one() -> VehicleState {
        VehicleState::new(Vector3::new(70.7285, 0.0, 0.0), PI / 2.0, 22.22, PI / 10.0, 300.0)
    }

    #[test]
    fn circular_step_from_reference_initial_state() {
        let s = reference_vehicle_one();
        let n = transition(&s, 0.5);
        // closed form: x = 70.7285 + r (sin(pi/2 + pi/20) - 1), y = r cos(pi/2) - r cos(pi/2 + pi/20)
        let r = 22.22 / (PI / 10.0);
        let a1 = PI / 2.0 + PI / 20.0;
        assert!((n.position.x - (70.7285 + r * (a1.sin() - 1.0))).abs() < 1e-12);
        assert!((n.position.y - (-r * a1.cos())).abs() < 1e-12);
        assert!((n.position.x - 69.858).abs() < 1e-3, "{}", n.position.x);
        assert!((n.position.y - 11.064).abs() < 1e-3, "{}", n.position.y);
        assert!((n.heading - a1).abs() < 1e-12);
        let radius = n.position.xy().norm();
        assert!((radius - 70.7285).abs() < 1e-3, "{radius}");
        assert_eq!(n.position.z, 0.0);
        assert_eq!(n.speed, s.speed);
        assert_eq!(n.turn_rate, s.turn_rate);
        assert_eq!(n.clock_bias, s.clock_bias);
    }

    #[test]
    fn straight_line_limit() {
        let s = VehicleState::new(Vector3::new(1.0, 2.0, 3.0), 0.0, 10.0, 0.0, 0.0);
        let n = transition(&s, 0.5);
        assert_eq!(n.position, Vector3::new(6.0, 2.0, 3.0));
    }

    #[test]
    fn zero_speed_only_turns() {
        let s = VehicleState::new(Vector3::new(1.0, 2.0, 0.0), 0.3, 0.0, 0.4, 5.0);
        let n = transition(&s, 0.5);
        assert_eq!(n.position, s.position);
        assert!((n.heading - 0.5).abs() < 1e-15);
    }

    #[test]
    fn continuity_at_turn_rate_singularity() {
        for heading in [0.0, 0.7, -2.0, PI] {
            let base = VehicleState::new(Vector3::zeros(), heading, 22.22, 0.0, 0.0);
            let tiny = VehicleState {
                turn_rate: 1e-7,
                ..base
            };
            let a = transition(&base, 0.5);
            let b = transition(&tiny, 0.5);
            assert!((a.position - b.position).amax() < 1e-6);
        }
    }

    #[test]
    fn heading_is_wrapped() {
        let s = VehicleState::new(Vector3::zeros(), PI - 0.01, 1.0, 1.0, 0.0);
        let n = transition(&s, 0.5);
        assert!(n.heading > -PI && n.heading <= PI);
        assert!((n.heading - (PI - 0.01 + 0.5 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_sample_equals_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = reference_vehicle_one();
        assert_eq!(
            sample_transition(&s, 0.5, &ProcessNoise::ZERO, &mut rng),
            transition(&s, 0.5)
        );
    }

    #[test]
    fn sample_moments_match_process_noise() {
        let noise = ProcessNoise {
            sigma_x_m: 0.2,
            sigma_y_m: 0.3,
            sigma_heading_rad: 0.01,
            sigma_bias_m: 0.5,
        };
        let s = reference_vehicle_one();
        let det = transition(&s, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let sig = [
            noise.sigma_x_m,
            noise.sigma_y_m,
            noise.sigma_heading_rad,
            noise.sigma_bias_m,
        ];
        let mut sum = [0.0; 4];
        let mut outer = [[0.0; 4]; 4];
        for _ in 0..n {
            let x = sample_transition(&s, 0.5, &noise, &mut rng);
            assert_eq!(x.position.z, det.position.z);
            assert_eq!(x.speed, det.speed);
            assert_eq!(x.turn_rate, det.turn_rate);
            let r = [
                x.position.x - det.position.x,
                x.position.y - det.position.y,
                wrap_angle(x.heading - det.heading),
                x.clock_bias - det.clock_bias,
            ];
            for i in 0..4 {
                sum[i] += r[i];
                for j in 0..4 {
                    outer[i][j] += r[i] * r[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..4 {
            let mean = sum[i] / nf;
            assert!(mean.abs() < 4.0 * sig[i] / nf.sqrt(), "mean {i}: {mean}");
            let var = outer[i][i] / nf - mean * mean;
            assert!((var / sig[i].powi(2) - 1.0).abs() < 0.05, "var {i}: {var}");
            for j in 0..4 {
                if i != j {
                    let cov = outer[i][j] / nf;
                    assert!(cov.abs() < 0.05 * sig[i] * sig[j], "cov {i}{j}: {cov}");
                }
            }
        }
    }
}
