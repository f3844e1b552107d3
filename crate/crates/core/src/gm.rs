//! Gaussian-mixture intensities over 3D source locations.
//!
//! Mixture weights are not normalized: the total weight is the expected number
//! of sources.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SourceType;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NumericError {
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        Self { weight, mean, cov }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
}

/// Truncation / merging / capping parameters of the standard GM-PHD reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneParams {
    /// Components with weight below this are dropped.
    pub truncation: f64,
    /// Squared Mahalanobis distance below which components are merged.
    pub merge_threshold: f64,
    pub max_components: usize,
}

impl Default for PruneParams {
    fn default() -> Self {
        Self {
            truncation: 1e-4,
            merge_threshold: 49.0,
            max_components: 50,
        }
    }
}

/// `(a - b)^T cov_a^{-1} (a - b)`
pub fn mahalanobis_sq(
    mean_a: &Vector3<f64>,
    cov_a: &Matrix3<f64>,
    point_b: &Vector3<f64>,
) -> Result<f64, NumericError> {
    let chol = cov_a
        .cholesky()
        .ok_or(NumericError::NotPositiveDefinite("covariance"))?;
    let d = mean_a - point_b;
    Ok(d.dot(&chol.solve(&d)))
}

pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GaussianComponent> {
        self.components.iter()
    }

    pub fn push(&mut self, c: GaussianComponent) {
        self.components.push(c);
    }

    /// Expected number of sources.
    pub fn mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Truncate, merge and cap. The output is sorted by decreasing weight.
    pub fn prune_merge(&self, params: &PruneParams) -> GaussianMixture {
        let mut order: Vec<usize> = (0..self.components.len())
            .filter(|&i| self.components[i].weight >= params.truncation && self.components[i].weight > 0.0)
            .collect();
        // stable: ties keep the lower index first
        order.sort_by(|&a, &b| {
            self.components[b]
                .weight
                .partial_cmp(&self.components[a].weight)
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        let inverses: Vec<Option<Matrix3<f64>>> = order
            .iter()
            .map(|&i| {
                let c = &self.components[i];
                c.cov.cholesky().map(|ch| ch.inverse())
            })
            .collect();

        let mut used = vec![false; order.len()];
        let mut merged = Vec::new();
        let mut members = Vec::new();
        for lead in 0..order.len() {
            if used[lead] {
                continue;
            }
            let leader = &self.components[order[lead]];
            members.clear();
            for cand in lead..order.len() {
                if used[cand] {
                    continue;
                }
                let c = &self.components[order[cand]];
                let d = c.mean - leader.mean;
                let close = match &inverses[cand] {
                    Some(inv) => d.dot(&(inv * d)) <= params.merge_threshold,
                    None => d == Vector3::zeros(),
                };
                if close {
                    used[cand] = true;
                    members.push(order[cand]);
                }
            }
            merged.push(self.moment_match(&members));
        }

        merged.sort_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap_or(std::cmp::Ordering::Equal));
        merged.truncate(params.max_components);
        GaussianMixture { components: merged }
    }

    fn moment_match(&self, members: &[usize]) -> GaussianComponent {
        if let [only] = members {
            return self.components[*only];
        }
        let weight: f64 = members.iter().map(|&i| self.components[i].weight).sum();
        let mean = members
            .iter()
            .map(|&i| self.components[i].mean * self.components[i].weight)
            .sum::<Vector3<f64>>()
            / weight;
        let cov = members
            .iter()
            .map(|&i| {
                let c = &self.components[i];
                let d = mean - c.mean;
                (c.cov + d * d.transpose()) * c.weight
            })
            .sum::<Matrix3<f64>>()
            / weight;
        GaussianComponent {
            weight,
            mean,
            cov: symmetrize(&cov),
        }
    }

    /// Concatenation with every weight multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> GaussianMixture {
        GaussianMixture {
            components: self
                .components
                .iter()
                .map(|c| GaussianComponent {
                    weight: c.weight * scale,
                    ..*c
                })
                .collect(),
        }
    }
}

impl FromIterator<GaussianComponent> for GaussianMixture {
    fn from_iter<T: IntoIterator<Item = GaussianComponent>>(iter: T) -> Self {
        GaussianMixture {
            components: iter.into_iter().collect(),
        }
    }
}

/// One intensity per source type. The BS entry is the known Dirac at `bs`
/// with unit weight and is never modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedMap {
    pub bs: Vector3<f64>,
    pub va: GaussianMixture,
    pub sp: GaussianMixture,
}

impl TypedMap {
    pub fn new(bs: Vector3<f64>) -> Self {
        Self {
            bs,
            va: GaussianMixture::default(),
            sp: GaussianMixture::default(),
        }
    }

    pub const BS_WEIGHT: f64 = 1.0;

    /// The mixture of a mapped type. Panics on `SourceType::Bs`.
    pub fn mixture(&self, kind: SourceType) -> &GaussianMixture {
        match kind {
            SourceType::Va => &self.va,
            SourceType::Sp => &self.sp,
            SourceType::Bs => panic!("the BS intensity is a fixed Dirac, not a mixture"),
        }
    }

    pub fn mixture_mut(&mut self, kind: SourceType) -> &mut GaussianMixture {
        match kind {
            SourceType::Va => &mut self.va,
            SourceType::Sp => &mut self.sp,
            SourceType::Bs => panic!("the BS intensity is a fixed Dirac, not a mixture"),
        }
    }

    pub fn prune_merge(&mut self, params: &PruneParams) {
        self.va = self.va.prune_merge(params);
        self.sp = self.sp.prune_merge(params);
    }
}
