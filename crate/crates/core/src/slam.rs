//! Rao-Blackwellized GM-PHD SLAM for one vehicle.
//!
//! Every particle carries a vehicle state hypothesis, a log-weight and its own
//! conditional map intensities. A step consists of sampling the motion model,
//! appending measurement-driven births, the GM-PHD map correction, and the
//! particle weight update, which reuses the per-measurement denominators
//! `W(z)` of the map correction. Particles are resampled after every update.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{Matrix5, Vector3, Vector5};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ckf::{gaussian_log_density, invert_measurement, update_components, UpdateComponents};
use crate::geometry::{wrap_angle, Measurement, MeasurementModel, Source, SourceType};
use crate::gm::{GaussianComponent, GaussianMixture, PruneParams, TypedMap};
use crate::motion::{sample_transition, ProcessNoise, VehicleState};

/// 95% quantile of a chi-square distribution with 3 degrees of freedom.
pub const CHI2_3DOF_95: f64 = 7.814_727_903_251_178;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlamError {
    #[error("all particle weights vanished")]
    Diverged,
    #[error("particle set is empty")]
    NoParticles,
}

/// How the detection probability of a map component is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdPolicy {
    /// Detection probability at the component mean.
    #[default]
    Mean,
    /// Minimum over the 95% highest-density ellipsoid of the component.
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    /// Detection probability inside the field of view.
    pub p_d: f64,
    /// SPs are visible within this 3D distance of the vehicle (m).
    pub r_fov_m: f64,
    /// Mean number of clutter measurements per scan.
    pub clutter_rate: f64,
    /// Maximum sensing range (m); sets the clutter density.
    pub max_range_m: f64,
    pub pd_policy: PdPolicy,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            p_d: 0.9,
            r_fov_m: 50.0,
            clutter_rate: 1.0,
            max_range_m: 200.0,
            pd_policy: PdPolicy::Mean,
        }
    }
}

impl DetectionModel {
    /// Volume of the measurement space `[0, R] x [-pi/2, pi/2] x [-pi, pi] x [-pi/2, pi/2] x [-pi, pi]`.
    pub fn clutter_volume(&self) -> f64 {
        4.0 * self.max_range_m * PI.powi(4)
    }

    /// Clutter intensity `c(z)`, uniform over the measurement space.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / self.clutter_volume()
    }

    pub fn in_fov(&self, kind: SourceType, x: &Vector3<f64>, vehicle: &Vector3<f64>) -> bool {
        match kind {
            SourceType::Bs | SourceType::Va => true,
            SourceType::Sp => (x - vehicle).norm() <= self.r_fov_m,
        }
    }

    pub fn p_d_at(&self, kind: SourceType, x: &Vector3<f64>, vehicle: &Vector3<f64>) -> f64 {
        if self.in_fov(kind, x, vehicle) {
            self.p_d
        } else {
            0.0
        }
    }

    /// Detection probability assigned to a whole component.
    pub fn component_p_d(&self, kind: SourceType, comp: &GaussianComponent, vehicle: &Vector3<f64>) -> f64 {
        match (self.pd_policy, kind) {
            (_, SourceType::Bs | SourceType::Va) | (PdPolicy::Mean, SourceType::Sp) => {
                self.p_d_at(kind, &comp.mean, vehicle)
            }
            (PdPolicy::Robust, SourceType::Sp) => {
                let lmax = comp.cov.symmetric_eigenvalues().max().max(0.0);
                let far = (comp.mean - vehicle).norm() + (CHI2_3DOF_95 * lmax).sqrt();
                if far <= self.r_fov_m {
                    self.p_d
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub dt_s: f64,
    pub process_noise: ProcessNoise,
    /// Measurement covariance used by the map correction and the births.
    pub sigma_phd: Matrix5<f64>,
    pub detection: DetectionModel,
    pub birth_weight: f64,
    pub prune: PruneParams,
    pub births_enabled: bool,
    /// Skip births whose posterior weight is bound to fall below the
    /// truncation threshold given the evidence already in the map.
    pub birth_gating: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let sigma = Matrix5::from_diagonal(&Vector5::new(1e-2, 1e-4, 1e-4, 1e-4, 1e-4));
        Self {
            dt_s: 0.5,
            process_noise: ProcessNoise {
                sigma_x_m: 0.2,
                sigma_y_m: 0.2,
                sigma_heading_rad: 0.001,
                sigma_bias_m: 0.2,
            },
            sigma_phd: sigma * 9.0,
            detection: DetectionModel::default(),
            birth_weight: 1.5e-5,
            prune: PruneParams::default(),
            births_enabled: true,
            birth_gating: true,
        }
    }
}

/// Map components appended at the current step, tagged with the index of the
/// measurement that generated them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BirthTags {
    pub va: Vec<Option<usize>>,
    pub sp: Vec<Option<usize>>,
}

impl BirthTags {
    fn tags(&self, kind: SourceType) -> &[Option<usize>] {
        match kind {
            SourceType::Va => &self.va,
            SourceType::Sp => &self.sp,
            SourceType::Bs => &[],
        }
    }

    fn tags_mut(&mut self, kind: SourceType) -> &mut Vec<Option<usize>> {
        match kind {
            SourceType::Va => &mut self.va,
            SourceType::Sp => &mut self.sp,
            SourceType::Bs => unreachable!("the BS has no births"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: VehicleState,
    pub log_weight: f64,
    pub maps: TypedMap,
    #[serde(skip)]
    pub births: BirthTags,
}

impl Particle {
    pub fn new(state: VehicleState, log_weight: f64, bs: Vector3<f64>) -> Self {
        Self {
            state,
            log_weight,
            maps: TypedMap::new(bs),
            births: BirthTags::default(),
        }
    }

    /// Birth tag of component `j` of the `kind` mixture, if it is a birth.
    pub fn birth_of(&self, kind: SourceType, j: usize) -> Option<usize> {
        self.births.tags(kind).get(j).copied().flatten()
    }
}

/// `log(sum(exp(terms)))` computed by sorting the terms from large to small,
/// factoring out the largest one.
pub fn log_sum_sorted(terms: &mut [f64]) -> f64 {
    terms.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let Some(&first) = terms.first() else {
        return f64::NEG_INFINITY;
    };
    if first == f64::NEG_INFINITY {
        return first;
    }
    let rest: f64 = terms[1..].iter().map(|t| (t - first).exp()).sum();
    first + rest.ln_1p()
}

/// Advance every particle by the motion model. Weights and maps are untouched.
pub fn predict<R: Rng + ?Sized>(particles: &mut [Particle], dt: f64, noise: &ProcessNoise, rng: &mut R) {
    for p in particles.iter_mut() {
        p.state = sample_transition(&p.state, dt, noise, rng);
    }
}

/// Log of the LOS term `p_D N(z; h(bs), Sigma)` for each measurement.
fn bs_log_terms<M: MeasurementModel + ?Sized>(
    model: &M,
    state: &VehicleState,
    zs: &[Measurement],
    cfg: &FilterConfig,
) -> Vec<f64> {
    let bs = model.base_station();
    let p_d = cfg.detection.p_d_at(SourceType::Bs, &bs, &state.position);
    match model.measure(SourceType::Bs, &bs, state) {
        Ok(h) if p_d > 0.0 => zs
            .iter()
            .map(|z| {
                let r = model.residual(&z.0, &h.0);
                gaussian_log_density(&r, &cfg.sigma_phd)
                    .map(|l| p_d.ln() + l)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .collect(),
        _ => vec![f64::NEG_INFINITY; zs.len()],
    }
}

/// Per-component quantities shared by all measurements of a scan.
struct ComponentTerms {
    p_d: f64,
    update: Option<UpdateComponents>,
}

fn component_terms<M: MeasurementModel + ?Sized>(
    model: &M,
    particle: &Particle,
    kind: SourceType,
    cfg: &FilterConfig,
) -> Vec<ComponentTerms> {
    particle
        .maps
        .mixture(kind)
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let is_birth = particle.birth_of(kind, j).is_some();
            let p_d = if is_birth {
                1.0
            } else {
                cfg.detection.component_p_d(kind, c, &particle.state.position)
            };
            let update = if p_d > 0.0 {
                match update_components(model, c, &particle.state, kind, &cfg.sigma_phd) {
                    Ok(u) => Some(u),
                    Err(e) => {
                        debug!("{kind} component {j} not updated: {e}");
                        None
                    }
                }
            } else {
                None
            };
            ComponentTerms { p_d, update }
        })
        .collect()
}

/// `log mu` of component `j` for measurement `q`.
fn log_mu(c: &GaussianComponent, t: &ComponentTerms, own: bool, z: &Measurement) -> f64 {
    if own {
        return c.weight.ln();
    }
    match &t.update {
        Some(u) if t.p_d > 0.0 && c.weight > 0.0 => t.p_d.ln() + c.weight.ln() + u.log_likelihood(z),
        _ => f64::NEG_INFINITY,
    }
}

/// `log W(z)` for each measurement given the particle's current maps and
/// births; the denominator of the map correction.
pub fn log_evidence<M: MeasurementModel + ?Sized>(
    model: &M,
    particle: &Particle,
    zs: &[Measurement],
    cfg: &FilterConfig,
) -> Vec<f64> {
    let log_c = cfg.detection.clutter_intensity().ln();
    let bs_terms = bs_log_terms(model, &particle.state, zs, cfg);
    let terms: Vec<(SourceType, Vec<ComponentTerms>)> = SourceType::MAPPED
        .iter()
        .map(|&k| (k, component_terms(model, particle, k, cfg)))
        .collect();
    zs.iter()
        .enumerate()
        .map(|(q, z)| {
            let mut logs = vec![log_c, bs_terms[q]];
            for (kind, ts) in &terms {
                for (j, (c, t)) in particle.maps.mixture(*kind).iter().zip(ts).enumerate() {
                    logs.push(log_mu(c, t, particle.birth_of(*kind, j) == Some(q), z));
                }
            }
            log_sum_sorted(&mut logs)
        })
        .collect()
}

/// Outcome of the birth step for one particle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BirthCounts {
    pub appended: usize,
    pub gated: usize,
    pub out_of_fov: usize,
    pub failed: usize,
}

/// Append one VA and one SP birth per measurement. With gating enabled,
/// `prior_log_evidence` holds `log W(z)` of the map before births.
pub fn birth_append<M: MeasurementModel + ?Sized>(
    model: &M,
    particle: &mut Particle,
    zs: &[Measurement],
    cfg: &FilterConfig,
    prior_log_evidence: Option<&[f64]>,
) -> BirthCounts {
    let mut counts = BirthCounts::default();
    let v = particle.state.position;
    let gamma = cfg.birth_weight;
    let r_fov = cfg.detection.r_fov_m;
    for (q, z) in zs.iter().enumerate() {
        if !z.is_finite() {
            counts.failed += 2;
            continue;
        }
        if let Some(log_w) = prior_log_evidence {
            // the birth keeps at most gamma / (W_prior + gamma) of its own measurement
            if gamma / (log_w[q].exp() + gamma) < cfg.prune.truncation {
                counts.gated += 2;
                continue;
            }
        }
        for kind in SourceType::MAPPED {
            if kind == SourceType::Sp {
                // cheap rejection before inverting: the point back-projected from
                // z itself must be near the field of view
                match model.back_project(kind, z, &particle.state) {
                    Some(x0) if (x0 - v).norm() <= 2.0 * r_fov => {}
                    Some(_) => {
                        counts.out_of_fov += 1;
                        continue;
                    }
                    None => {
                        counts.failed += 1;
                        continue;
                    }
                }
            }
            match invert_measurement(model, z, &particle.state, kind, &cfg.sigma_phd) {
                Ok((mean, cov)) => {
                    if !cfg.detection.in_fov(kind, &mean, &v) {
                        counts.out_of_fov += 1;
                        continue;
                    }
                    particle
                        .maps
                        .mixture_mut(kind)
                        .push(GaussianComponent::new(gamma, mean, cov));
                    let n = particle.maps.mixture(kind).len();
                    let tags = particle.births.tags_mut(kind);
                    tags.resize(n - 1, None);
                    tags.push(Some(q));
                    counts.appended += 1;
                }
                Err(e) => {
                    debug!("{kind} birth for measurement {q} skipped: {e}");
                    counts.failed += 1;
                }
            }
        }
    }
    counts
}

/// Bookkeeping returned by the map correction.
#[derive(Debug, Clone, PartialEq)]
pub struct MapUpdate {
    /// `log W(z)` per measurement.
    pub log_evidence: Vec<f64>,
    /// Total weight of the missed-detection copies.
    pub missed_mass: f64,
    /// Total weight of the detection copies generated by each measurement.
    pub detected_mass: Vec<f64>,
    /// `log` of the LOS term per measurement.
    pub log_bs: Vec<f64>,
    pub log_clutter: f64,
}

/// GM-PHD correction of the VA and SP maps of one particle. Birth tags are
/// consumed. The BS intensity is left unchanged.
pub fn update_maps<M: MeasurementModel + ?Sized>(
    model: &M,
    particle: &mut Particle,
    zs: &[Measurement],
    cfg: &FilterConfig,
) -> MapUpdate {
    let log_c = cfg.detection.clutter_intensity().ln();
    let log_bs = bs_log_terms(model, &particle.state, zs, cfg);
    let terms: Vec<Vec<ComponentTerms>> = SourceType::MAPPED
        .iter()
        .map(|&k| component_terms(model, particle, k, cfg))
        .collect();

    // log mu[type][q][j]
    let mut mus: Vec<Vec<Vec<f64>>> = Vec::with_capacity(2);
    for (t, kind) in SourceType::MAPPED.iter().enumerate() {
        let mix = particle.maps.mixture(*kind);
        mus.push(
            zs.iter()
                .enumerate()
                .map(|(q, z)| {
                    mix.iter()
                        .zip(&terms[t])
                        .enumerate()
                        .map(|(j, (c, ct))| log_mu(c, ct, particle.birth_of(*kind, j) == Some(q), z))
                        .collect()
                })
                .collect(),
        );
    }
    let log_evidence: Vec<f64> = (0..zs.len())
        .map(|q| {
            let mut logs = vec![log_c, log_bs[q]];
            for m in &mus {
                logs.extend_from_slice(&m[q]);
            }
            log_sum_sorted(&mut logs)
        })
        .collect();

    let mut missed_mass = 0.0;
    let mut detected_mass = vec![0.0; zs.len()];
    for (t, kind) in SourceType::MAPPED.iter().enumerate() {
        let prior = particle.maps.mixture(*kind);
        let mut post = Vec::with_capacity(prior.len() * (zs.len() + 1));
        for (j, (c, ct)) in prior.iter().zip(&terms[t]).enumerate() {
            if particle.birth_of(*kind, j).is_some() {
                continue;
            }
            let w = c.weight * (1.0 - ct.p_d);
            if w > 0.0 {
                missed_mass += w;
                post.push(GaussianComponent { weight: w, ..*c });
            }
        }
        for (q, z) in zs.iter().enumerate() {
            for (j, (c, ct)) in prior.iter().zip(&terms[t]).enumerate() {
                let w = (mus[t][q][j] - log_evidence[q]).exp();
                if w <= 0.0 || !w.is_finite() {
                    continue;
                }
                detected_mass[q] += w;
                let own = particle.birth_of(*kind, j) == Some(q);
                match (&ct.update, own) {
                    (Some(u), false) => post.push(GaussianComponent::new(w, u.posterior_mean(&c.mean, z), u.p_post)),
                    _ => post.push(GaussianComponent { weight: w, ..*c }),
                }
            }
        }
        *particle.maps.mixture_mut(*kind) = GaussianMixture::new(post);
    }
    particle.births = BirthTags::default();
    MapUpdate {
        log_evidence,
        missed_mass,
        detected_mass,
        log_bs,
        log_clutter: log_c,
    }
}

/// `l += sum_z log W(z)`, summing the terms from large to small.
pub fn update_log_weight(particle: &mut Particle, log_evidence: &[f64]) {
    let mut sorted = log_evidence.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    particle.log_weight += sorted.iter().sum::<f64>();
}

/// Normalized linear weights of the particles.
pub fn normalized_weights(particles: &[Particle]) -> Result<Vec<f64>, SlamError> {
    if particles.is_empty() {
        return Err(SlamError::NoParticles);
    }
    let mut logs: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let total = log_sum_sorted(&mut logs);
    if !total.is_finite() {
        return Err(SlamError::Diverged);
    }
    Ok(particles.iter().map(|p| (p.log_weight - total).exp()).collect())
}

/// Indices chosen by systematic resampling with offset `u0` in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], n: usize, u0: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = 0.0;
    let mut i = 0;
    for s in 0..n {
        let u = (s as f64 + u0) / n as f64 * total;
        while i + 1 < weights.len() && cumulative + weights[i] <= u {
            cumulative += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

/// Normalize and resample systematically; the output weights are uniform.
pub fn normalize_and_resample<R: Rng + ?Sized>(particles: &mut Vec<Particle>, rng: &mut R) -> Result<(), SlamError> {
    let weights = normalized_weights(particles)?;
    let n = particles.len();
    let idx = systematic_indices(&weights, n, rng.random::<f64>());
    let uniform = -(n as f64).ln();
    let resampled: Vec<Particle> = idx
        .into_iter()
        .map(|i| Particle {
            log_weight: uniform,
            ..particles[i].clone()
        })
        .collect();
    *particles = resampled;
    Ok(())
}

/// Weighted mean state; the heading is averaged on the circle.
pub fn estimate_state(particles: &[Particle]) -> Result<VehicleState, SlamError> {
    let weights = normalized_weights(particles)?;
    let mut pos = Vector3::zeros();
    let (mut s, mut c) = (0.0, 0.0);
    let (mut speed, mut rate, mut bias) = (0.0, 0.0, 0.0);
    for (p, w) in particles.iter().zip(&weights) {
        pos += p.state.position * *w;
        s += w * p.state.heading.sin();
        c += w * p.state.heading.cos();
        speed += w * p.state.speed;
        rate += w * p.state.turn_rate;
        bias += w * p.state.clock_bias;
    }
    Ok(VehicleState::new(pos, s.atan2(c), speed, rate, bias))
}

/// Means of the components with weight at least `threshold`.
pub fn extract_map(mixture: &GaussianMixture, threshold: f64) -> Vec<Vector3<f64>> {
    mixture
        .iter()
        .filter(|c| c.weight >= threshold)
        .map(|c| c.mean)
        .collect()
}

/// Detected VA and SP sources of a typed map.
pub fn extract_sources(va: &GaussianMixture, sp: &GaussianMixture, t_va: f64, t_sp: f64) -> Vec<Source> {
    extract_map(va, t_va)
        .into_iter()
        .map(|x| Source::new(SourceType::Va, x))
        .chain(
            extract_map(sp, t_sp)
                .into_iter()
                .map(|x| Source::new(SourceType::Sp, x)),
        )
        .collect()
}

/// Which parts of the filter run at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// Motion model only.
    PredictOnly,
    /// Full correction; births follow `FilterConfig::births_enabled`.
    Correct,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub births: BirthCounts,
    pub mean_log_evidence: f64,
}

/// Particle filter of one vehicle.
#[derive(Debug, Clone)]
pub struct VehicleFilter {
    pub particles: Vec<Particle>,
    pub config: FilterConfig,
}

impl VehicleFilter {
    pub fn new(particles: Vec<Particle>, config: FilterConfig) -> Self {
        Self { particles, config }
    }

    /// One filtering step. Returns the state estimate, taken before resampling.
    pub fn step<M: MeasurementModel + ?Sized, R: Rng + ?Sized>(
        &mut self,
        model: &M,
        zs: &[Measurement],
        kind: UpdateKind,
        rng: &mut R,
    ) -> Result<(VehicleState, StepReport), SlamError> {
        let cfg = &self.config;
        predict(&mut self.particles, cfg.dt_s, &cfg.process_noise, rng);
        if kind == UpdateKind::PredictOnly {
            return Ok((estimate_state(&self.particles)?, StepReport::default()));
        }
        let results: Vec<(BirthCounts, f64)> = self
            .particles
            .par_iter_mut()
            .map(|p| correct_particle(model, p, zs, cfg))
            .collect();
        let mut report = StepReport::default();
        for (b, e) in &results {
            report.births.appended += b.appended;
            report.births.gated += b.gated;
            report.births.out_of_fov += b.out_of_fov;
            report.births.failed += b.failed;
            report.mean_log_evidence += e / results.len() as f64;
        }
        let estimate = estimate_state(&self.particles)?;
        normalize_and_resample(&mut self.particles, rng)?;
        Ok((estimate, report))
    }

    pub fn estimate(&self) -> Result<VehicleState, SlamError> {
        estimate_state(&self.particles)
    }
}

/// Births, map correction, weight update and per-particle prune/merge.
pub fn correct_particle<M: MeasurementModel + ?Sized>(
    model: &M,
    particle: &mut Particle,
    zs: &[Measurement],
    cfg: &FilterConfig,
) -> (BirthCounts, f64) {
    let births = if cfg.births_enabled {
        let prior = cfg.birth_gating.then(|| log_evidence(model, particle, zs, cfg));
        birth_append(model, particle, zs, cfg, prior.as_deref())
    } else {
        BirthCounts::default()
    };
    let update = update_maps(model, particle, zs, cfg);
    update_log_weight(particle, &update.log_evidence);
    particle.maps.prune_merge(&cfg.prune);
    (births, update.log_evidence.iter().sum())
}

/// Angle-aware absolute heading error.
pub fn heading_error(estimate: f64, truth: f64) -> f64 {
    wrap_angle(estimate - truth).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadioGeometry;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bs() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 40.0)
    }

    fn truth() -> VehicleState {
        VehicleState::new(Vector3::new(70.7285, 0.0, 0.0), PI / 2.0, 22.22, PI / 10.0, 300.0)
    }

    #[test]
    fn clutter_intensity_value() {
        let d = DetectionModel::default();
        assert!((d.clutter_intensity() - 1.0 / (800.0 * PI.powi(4))).abs() < 1e-18);
    }

    #[test]
    fn log_sum_sorted_matches_direct_sum() {
        let mut t = vec![-1.0, -3.0, 0.5, -700.0];
        let direct: f64 = [-1.0f64, -3.0, 0.5, -700.0].iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_sorted(&mut t) - direct).abs() < 1e-14);
        let mut big = vec![-1000.0, -1001.0];
        assert!((log_sum_sorted(&mut big) - (-1000.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
        assert_eq!(log_sum_sorted(&mut []), f64::NEG_INFINITY);
    }

    #[test]
    fn systematic_counts() {
        let idx = systematic_indices(&[0.5, 0.3, 0.2], 10, 0.5);
        let mut counts = [0; 3];
        for i in idx {
            counts[i] += 1;
        }
        assert_eq!(counts, [5, 3, 2]);
        assert_eq!(systematic_indices(&[0.0, 1.0, 0.0], 4, 0.3), vec![1, 1, 1, 1]);
        assert_eq!(systematic_indices(&[0.25; 4], 4, 0.9), vec![0, 1, 2, 3]);
    }

    #[test]
    fn circular_heading_mean() {
        let mut ps: Vec<Particle> = [PI - 0.1, -PI + 0.1]
            .iter()
            .map(|&h| {
                let mut s = truth();
                s.heading = h;
                Particle::new(s, 0.0, bs())
            })
            .collect();
        let e = estimate_state(&ps).unwrap();
        assert!((e.heading.abs() - PI).abs() < 1e-12);
        ps[0].state.position.x += 1.0;
        ps[1].state.position.x -= 1.0;
        let e = estimate_state(&ps).unwrap();
        assert!((e.position.x - truth().position.x).abs() < 1e-12);
    }

    #[test]
    fn resampling_degenerate_and_diverged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps: Vec<Particle> = (0..5)
            .map(|i| {
                let mut s = truth();
                s.clock_bias = i as f64;
                Particle::new(s, if i == 2 { 0.0 } else { f64::NEG_INFINITY }, bs())
            })
            .collect();
        normalize_and_resample(&mut ps, &mut rng).unwrap();
        assert!(ps.iter().all(|p| p.state.clock_bias == 2.0));
        assert!(ps.iter().all(|p| (p.log_weight + 5f64.ln()).abs() < 1e-15));
        for p in ps.iter_mut() {
            p.log_weight = f64::NEG_INFINITY;
        }
        assert_eq!(normalize_and_resample(&mut ps, &mut rng), Err(SlamError::Diverged));
    }

    #[test]
    fn zero_detection_probability_update_is_identity() {
        let model = RadioGeometry::new(bs());
        let mut cfg = FilterConfig::default();
        cfg.detection.p_d = 0.0;
        let mut p = Particle::new(truth(), 0.0, bs());
        p.maps.va.push(GaussianComponent::new(
            0.8,
            Vector3::new(200.0, 0.0, 40.0),
            Matrix3::identity(),
        ));
        let before = p.maps.clone();
        let z = model
            .measure(SourceType::Va, &Vector3::new(200.0, 0.0, 40.0), &truth())
            .unwrap();
        update_maps(&model, &mut p, &[z], &cfg);
        assert_eq!(p.maps, before);
    }

    #[test]
    fn single_component_perfect_measurement() {
        let model = RadioGeometry::new(bs());
        let cfg = FilterConfig::default();
        let va = Vector3::new(200.0, 0.0, 40.0);
        let mut p = Particle::new(truth(), 0.0, bs());
        p.maps.va.push(GaussianComponent::new(1.0, va, Matrix3::identity()));
        let z = model.measure(SourceType::Va, &va, &truth()).unwrap();
        let upd = update_maps(&model, &mut p, &[z], &cfg);
        assert_eq!(p.maps.va.len(), 2);
        assert!((p.maps.va.components[0].weight - 0.1).abs() < 1e-12);
        let w = p.maps.va.components[1].weight;
        let uc = update_components(
            &model,
            &GaussianComponent::new(1.0, va, Matrix3::identity()),
            &truth(),
            SourceType::Va,
            &cfg.sigma_phd,
        )
        .unwrap();
        let mu = 0.9 * uc.log_likelihood(&z).exp();
        let expected_w = mu / upd.log_evidence[0].exp();
        assert!((w - expected_w).abs() < 1e-12);
        let total = cfg.detection.clutter_intensity() + mu + upd.log_bs[0].exp();
        assert!((upd.log_evidence[0] - total.ln()).abs() < 1e-12);
    }
}
