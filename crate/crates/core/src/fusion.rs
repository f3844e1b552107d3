//! Map exchange between vehicles and the base station.
//!
//! At a sync step a vehicle uploads its particle-averaged map together with
//! the region it has observed since its previous sync. The BS fuses it into
//! its own map by arithmetic averaging, where each component is weighted
//! according to whether it is seen by both sides, only by the BS, or only by
//! the vehicle. Optionally the fused map is sent back and replaces the
//! vehicle's maps.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::SourceType;
use crate::gm::{GaussianComponent, GaussianMixture, PruneParams};
use crate::slam::{normalized_weights, DetectionModel, Particle, SlamError};

/// 99% quantile of a chi-square distribution with 3 degrees of freedom.
pub const DEFAULT_GAMMA_UP: f64 = 11.34;
pub const DEFAULT_GAMMA_D: f64 = 0.7;

/// Particle-weighted average of the VA and SP maps, pruned and merged.
pub fn average_map(
    particles: &[Particle],
    prune: &PruneParams,
) -> Result<(GaussianMixture, GaussianMixture), SlamError> {
    let weights = normalized_weights(particles)?;
    let mut va = GaussianMixture::default();
    let mut sp = GaussianMixture::default();
    for (p, w) in particles.iter().zip(&weights) {
        va.components.extend(p.maps.va.scaled(*w).components);
        sp.components.extend(p.maps.sp.scaled(*w).components);
    }
    Ok((va.prune_merge(prune), sp.prune_merge(prune)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovDisc {
    pub center: Vector3<f64>,
    pub radius_m: f64,
}

impl FovDisc {
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (x - self.center).norm() <= self.radius_m
    }
}

/// Region where a vehicle would have detected a source since its last sync.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccumulatedFoV {
    pub va_universal: bool,
    pub sp_discs: Vec<FovDisc>,
}

impl AccumulatedFoV {
    pub fn contains(&self, kind: SourceType, x: &Vector3<f64>) -> bool {
        match kind {
            SourceType::Bs => true,
            SourceType::Va => self.va_universal,
            SourceType::Sp => self.sp_discs.iter().any(|d| d.contains(x)),
        }
    }
}

/// Points where the detection probability at some estimated pose reaches `gamma_d`.
pub fn accumulate_fov(poses: &[Vector3<f64>], detection: &DetectionModel, gamma_d: f64) -> AccumulatedFoV {
    let visible = detection.p_d >= gamma_d;
    AccumulatedFoV {
        va_universal: visible,
        sp_discs: if visible {
            poses
                .iter()
                .map(|c| FovDisc {
                    center: *c,
                    radius_m: detection.r_fov_m,
                })
                .collect()
        } else {
            Vec::new()
        },
    }
}

/// `c_a[ja][jp]` is set when the BS mean is close under the vehicle
/// covariance, `c_p[ja][jp]` when the vehicle mean is close under the BS covariance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityMatrices {
    pub c_a: Vec<Vec<bool>>,
    pub c_p: Vec<Vec<bool>>,
}

impl ProximityMatrices {
    pub fn build(vehicle: &GaussianMixture, bs: &GaussianMixture, gamma_up: f64) -> Self {
        let inv = |c: &GaussianComponent| c.cov.cholesky().map(|ch| ch.inverse());
        let inv_a: Vec<_> = vehicle.iter().map(inv).collect();
        let inv_p: Vec<_> = bs.iter().map(inv).collect();
        let mut c_a = vec![vec![false; bs.len()]; vehicle.len()];
        let mut c_p = vec![vec![false; bs.len()]; vehicle.len()];
        for (ja, a) in vehicle.iter().enumerate() {
            for (jp, p) in bs.iter().enumerate() {
                let d = a.mean - p.mean;
                let close = |m: &Option<nalgebra::Matrix3<f64>>| match m {
                    Some(m) => d.dot(&(m * d)) < gamma_up,
                    None => false,
                };
                c_a[ja][jp] = close(&inv_a[ja]);
                c_p[ja][jp] = close(&inv_p[jp]);
            }
        }
        Self { c_a, c_p }
    }

    fn matched(&self, ja: usize, jp: usize) -> bool {
        self.c_a[ja][jp] || self.c_p[ja][jp]
    }
}

/// Fusion weights of the vehicle and BS components before concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub beta_a: Vec<f64>,
    pub beta_p: Vec<f64>,
}

/// Components matched to any partner get 1/2; unmatched BS components keep
/// full weight outside the vehicle's accumulated FoV and 1/2 inside it;
/// unmatched vehicle components get full weight.
pub fn fusion_weights(
    kind: SourceType,
    vehicle: &GaussianMixture,
    bs: &GaussianMixture,
    fov: &AccumulatedFoV,
    gamma_up: f64,
) -> FusionWeights {
    let prox = ProximityMatrices::build(vehicle, bs, gamma_up);
    let beta_a = (0..vehicle.len())
        .map(|ja| {
            if (0..bs.len()).any(|jp| prox.matched(ja, jp)) {
                0.5
            } else {
                1.0
            }
        })
        .collect();
    let beta_p = bs
        .iter()
        .enumerate()
        .map(|(jp, c)| {
            if (0..vehicle.len()).any(|ja| prox.matched(ja, jp)) || fov.contains(kind, &c.mean) {
                0.5
            } else {
                1.0
            }
        })
        .collect();
    FusionWeights { beta_a, beta_p }
}

/// Fuse one mixture of the vehicle map into the corresponding BS mixture.
pub fn fuse(
    kind: SourceType,
    bs: &GaussianMixture,
    vehicle: &GaussianMixture,
    fov: &AccumulatedFoV,
    gamma_up: f64,
    prune: &PruneParams,
) -> GaussianMixture {
    if bs.is_empty() {
        return vehicle.clone();
    }
    let beta = fusion_weights(kind, vehicle, bs, fov, gamma_up);
    weighted_union(vehicle, &beta.beta_a, bs, &beta.beta_p).prune_merge(prune)
}

fn weighted_union(a: &GaussianMixture, beta_a: &[f64], p: &GaussianMixture, beta_p: &[f64]) -> GaussianMixture {
    a.iter()
        .zip(beta_a)
        .chain(p.iter().zip(beta_p))
        .map(|(c, b)| GaussianComponent {
            weight: c.weight * b,
            ..*c
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BsMap {
    pub va: GaussianMixture,
    pub sp: GaussianMixture,
}

impl BsMap {
    pub fn mixture(&self, kind: SourceType) -> &GaussianMixture {
        match kind {
            SourceType::Va => &self.va,
            SourceType::Sp => &self.sp,
            SourceType::Bs => panic!("the BS map holds VA and SP intensities only"),
        }
    }
}

/// Vehicle-to-BS message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uplink {
    pub vehicle: usize,
    pub step: usize,
    pub va: GaussianMixture,
    pub sp: GaussianMixture,
    pub fov: AccumulatedFoV,
}

/// BS-to-vehicle message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Downlink {
    pub va: GaussianMixture,
    pub sp: GaussianMixture,
}

impl Uplink {
    pub fn from_particles(
        vehicle: usize,
        step: usize,
        particles: &[Particle],
        fov: AccumulatedFoV,
        prune: &PruneParams,
    ) -> Result<Self, SlamError> {
        let (va, sp) = average_map(particles, prune)?;
        Ok(Self {
            vehicle,
            step,
            va,
            sp,
            fov,
        })
    }
}

/// Fuse an uplink into the BS map.
pub fn fuse_uplink(bs: &BsMap, up: &Uplink, gamma_up: f64, prune: &PruneParams) -> BsMap {
    BsMap {
        va: fuse(SourceType::Va, &bs.va, &up.va, &up.fov, gamma_up, prune),
        sp: fuse(SourceType::Sp, &bs.sp, &up.sp, &up.fov, gamma_up, prune),
    }
}

impl From<&BsMap> for Downlink {
    fn from(bs: &BsMap) -> Self {
        Self {
            va: bs.va.clone(),
            sp: bs.sp.clone(),
        }
    }
}

/// Replace every particle's VA and SP maps by the fused map.
pub fn downlink_apply(particles: &mut [Particle], down: &Downlink) {
    for p in particles.iter_mut() {
        p.maps.va = down.va.clone();
        p.maps.sp = down.sp.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::VehicleState;
    use nalgebra::Matrix3;

    fn comp(w: f64, x: f64, y: f64) -> GaussianComponent {
        GaussianComponent::new(w, Vector3::new(x, y, 10.0), Matrix3::identity())
    }

    fn particle(va: Vec<GaussianComponent>, log_weight: f64) -> Particle {
        let mut p = Particle::new(
            VehicleState::new(Vector3::zeros(), 0.0, 0.0, 0.0, 0.0),
            log_weight,
            Vector3::new(0.0, 0.0, 40.0),
        );
        p.maps.va = GaussianMixture::new(va);
        p
    }

    fn fov_at_origin() -> AccumulatedFoV {
        accumulate_fov(&[Vector3::zeros()], &DetectionModel::default(), DEFAULT_GAMMA_D)
    }

    #[test]
    fn fov_membership() {
        let fov = fov_at_origin();
        assert!(fov.contains(SourceType::Sp, &Vector3::new(30.0, 0.0, 0.0)));
        assert!(!fov.contains(SourceType::Sp, &Vector3::new(51.0, 0.0, 0.0)));
        assert!(fov.contains(SourceType::Va, &Vector3::new(1e4, 0.0, 0.0)));
        let two = accumulate_fov(
            &[Vector3::zeros(), Vector3::new(60.0, 0.0, 0.0)],
            &DetectionModel::default(),
            DEFAULT_GAMMA_D,
        );
        assert!(two.contains(SourceType::Sp, &Vector3::new(30.0, 0.0, 0.0)));
    }

    #[test]
    fn average_of_two_particles() {
        let ps = vec![
            particle(vec![comp(1.0, 0.0, 0.0)], 0.5f64.ln()),
            particle(vec![comp(1.0, 500.0, 0.0), comp(2.0, 900.0, 0.0)], 0.5f64.ln()),
        ];
        let (va, _) = average_map(&ps, &PruneParams::default()).unwrap();
        assert!((va.mass() - 2.0).abs() < 1e-12);
        let same = vec![particle(vec![comp(0.9, 0.0, 0.0)], 0.0); 3];
        let (va, _) = average_map(&same, &PruneParams::default()).unwrap();
        assert_eq!(va.len(), 1);
        assert!((va.mass() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn fusion_examples() {
        let prune = PruneParams::default();
        let fov = fov_at_origin();
        let c = comp(0.8, 10.0, 0.0);
        let bs = GaussianMixture::new(vec![c]);
        let fused = fuse(SourceType::Sp, &bs, &bs, &fov, DEFAULT_GAMMA_UP, &prune);
        assert_eq!(fused.len(), 1);
        assert!((fused.components[0].weight - 0.8).abs() < 1e-12);

        let empty = GaussianMixture::default();
        let far = GaussianMixture::new(vec![comp(0.8, 300.0, 0.0)]);
        let fused = fuse(
            SourceType::Sp,
            &far,
            &GaussianMixture::new(vec![comp(0.1, -300.0, 0.0)]),
            &fov,
            DEFAULT_GAMMA_UP,
            &prune,
        );
        let kept = fused.iter().find(|c| c.mean.x == 300.0).unwrap();
        assert!((kept.weight - 0.8).abs() < 1e-12);

        let near = GaussianMixture::new(vec![comp(0.8, 10.0, 0.0)]);
        let fused = fuse(
            SourceType::Sp,
            &near,
            &GaussianMixture::new(vec![comp(0.1, -30.0, 0.0)]),
            &fov,
            DEFAULT_GAMMA_UP,
            &prune,
        );
        let halved = fused.iter().find(|c| c.mean.x == 10.0).unwrap();
        assert!((halved.weight - 0.4).abs() < 1e-12);

        let fused = fuse(SourceType::Sp, &far, &near, &fov, DEFAULT_GAMMA_UP, &prune);
        let new = fused.iter().find(|c| c.mean.x == 10.0).unwrap();
        assert!((new.weight - 0.8).abs() < 1e-12);

        assert_eq!(
            fuse(SourceType::Sp, &empty, &near, &fov, DEFAULT_GAMMA_UP, &prune),
            near
        );
    }

    #[test]
    fn downlink_overwrites_maps_only() {
        let mut ps = vec![particle(vec![comp(1.0, 0.0, 0.0)], -1.0), particle(vec![], -2.0)];
        let bs_before = ps[0].maps.bs;
        let down = Downlink {
            va: GaussianMixture::new(vec![comp(0.7, 5.0, 5.0)]),
            sp: GaussianMixture::new(vec![comp(0.6, 1.0, 1.0)]),
        };
        downlink_apply(&mut ps, &down);
        assert_eq!(ps[0].maps, ps[1].maps);
        assert_eq!(ps[0].maps.va, down.va);
        assert_eq!(ps[0].log_weight, -1.0);
        assert_eq!(ps[1].log_weight, -2.0);
        assert_eq!(ps[0].maps.bs, bs_before);
    }
}
