//! GOSPA map error and vehicle-state error statistics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;
use crate::motion::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaParams {
    pub cutoff_m: f64,
    pub alpha: f64,
    pub power: f64,
}

impl Default for GospaParams {
    fn default() -> Self {
        Self {
            cutoff_m: 20.0,
            alpha: 2.0,
            power: 2.0,
        }
    }
}

/// Minimum-cost assignment of every row to a distinct column of a
/// `rows x cols` cost matrix with `rows <= cols` (shortest augmenting paths
/// with potentials). Returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // 1-based arrays; column 0 is a virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// GOSPA distance between two finite point sets.
pub fn gospa(truth: &[Vector3<f64>], est: &[Vector3<f64>], params: &GospaParams) -> f64 {
    let c = params.cutoff_m;
    let pw = params.power;
    let (small, large) = if truth.len() <= est.len() {
        (truth, est)
    } else {
        (est, truth)
    };
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| (a - b).norm().min(c).powf(pw)).collect())
        .collect();
    let assignment = hungarian(&cost);
    let localization: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    let unassigned = (large.len() - small.len()) as f64;
    (localization + c.powf(pw) / params.alpha * unassigned).powf(1.0 / pw)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

impl ErrorStats {
    pub fn from_errors<I: IntoIterator<Item = f64>>(errors: I) -> Self {
        let (mut n, mut abs, mut sq) = (0usize, 0.0, 0.0);
        for e in errors {
            n += 1;
            abs += e.abs();
            sq += e * e;
        }
        if n == 0 {
            return Self {
                mae: f64::NAN,
                rmse: f64::NAN,
            };
        }
        Self {
            mae: abs / n as f64,
            rmse: (sq / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateErrorSummary {
    pub location: ErrorStats,
    pub clock_bias: ErrorStats,
    pub heading: ErrorStats,
    pub samples: usize,
}

/// One trajectory: state estimates and truth indexed by time step `k = 1..`.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<'a> {
    pub estimates: &'a [VehicleState],
    pub truth: &'a [VehicleState],
}

/// Per-step absolute errors `(location, clock bias, heading)`.
pub fn state_errors(est: &VehicleState, truth: &VehicleState) -> (f64, f64, f64) {
    (
        (est.position - truth.position).norm(),
        (est.clock_bias - truth.clock_bias).abs(),
        wrap_angle(est.heading - truth.heading).abs(),
    )
}

/// MAE and RMSE over steps `k > k_start` of all trajectories. Element `i`
/// of each slice is step `k = i + 1`.
pub fn mae_rmse(trajectories: &[Trajectory<'_>], k_start: usize) -> StateErrorSummary {
    let errors: Vec<(f64, f64, f64)> = trajectories
        .iter()
        .flat_map(|t| {
            t.estimates
                .iter()
                .zip(t.truth)
                .skip(k_start)
                .map(|(e, x)| state_errors(e, x))
        })
        .collect();
    StateErrorSummary {
        location: ErrorStats::from_errors(errors.iter().map(|e| e.0)),
        clock_bias: ErrorStats::from_errors(errors.iter().map(|e| e.1)),
        heading: ErrorStats::from_errors(errors.iter().map(|e| e.2)),
        samples: errors.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(truth: &[Vector3<f64>], est: &[Vector3<f64>], p: &GospaParams) -> f64 {
        let (small, large) = if truth.len() <= est.len() {
            (truth, est)
        } else {
            (est, truth)
        };
        fn rec(i: usize, small: &[Vector3<f64>], large: &[Vector3<f64>], used: &mut Vec<bool>, p: &GospaParams) -> f64 {
            if i == small.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..large.len() {
                if !used[j] {
                    used[j] = true;
                    let d = (small[i] - large[j]).norm().min(p.cutoff_m).powf(p.power);
                    best = best.min(d + rec(i + 1, small, large, used, p));
                    used[j] = false;
                }
            }
            best
        }
        let loc = rec(0, small, large, &mut vec![false; large.len()], p);
        (loc + p.cutoff_m.powf(p.power) / p.alpha * (large.len() - small.len()) as f64).powf(1.0 / p.power)
    }

    #[test]
    fn gospa_examples() {
        let p = GospaParams::default();
        assert_eq!(gospa(&[], &[], &p), 0.0);
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert!((gospa(&[x], &[], &p) - 200f64.sqrt()).abs() < 1e-12);
        assert!((gospa(&[], &[x], &p) - 14.142135623730951).abs() < 1e-12);
        assert!((gospa(&[x], &[x + Vector3::new(3.0, 0.0, 0.0)], &p) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn mae_rmse_examples() {
        let s = VehicleState::new(Vector3::new(1.0, 2.0, 0.0), 0.5, 1.0, 0.1, 300.0);
        let truth = vec![s; 40];
        let traj = [Trajectory {
            estimates: &truth,
            truth: &truth,
        }];
        let r = mae_rmse(&traj, 20);
        assert_eq!(r.samples, 20);
        assert_eq!(r.location.mae, 0.0);
        let biased: Vec<_> = truth
            .iter()
            .map(|x| VehicleState {
                clock_bias: x.clock_bias + 1.0,
                ..*x
            })
            .collect();
        let r = mae_rmse(
            &[Trajectory {
                estimates: &biased,
                truth: &truth,
            }],
            20,
        );
        assert!((r.clock_bias.mae - 1.0).abs() < 1e-12 && (r.clock_bias.rmse - 1.0).abs() < 1e-12);
        let head: Vec<_> = truth
            .iter()
            .enumerate()
            .map(|(i, x)| VehicleState {
                heading: x.heading + if i % 2 == 0 { 0.1 } else { -0.1 },
                ..*x
            })
            .collect();
        let r = mae_rmse(
            &[Trajectory {
                estimates: &head,
                truth: &truth,
            }],
            20,
        );
        assert!((r.heading.mae - 0.1).abs() < 1e-12 && (r.heading.rmse - 0.1).abs() < 1e-12);
    }

    fn point_set(max: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
        proptest::collection::vec(proptest::array::uniform3(-30.0f64..30.0), 0..=max)
            .prop_map(|v| v.into_iter().map(Vector3::from).collect())
    }

    proptest! {
        #[test]
        fn gospa_matches_brute_force(a in point_set(4), b in point_set(4)) {
            let p = GospaParams::default();
            let g = gospa(&a, &b, &p);
            prop_assert!((g - brute_force(&a, &b, &p)).abs() < 1e-9);
            prop_assert!((g - gospa(&b, &a, &p)).abs() < 1e-12);
            prop_assert!(gospa(&a, &a, &p).abs() < 1e-12);
        }
    }
}
