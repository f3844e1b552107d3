//! Two-vehicle experiment: ground truth, measurement synthesis, per-vehicle
//! filtering, scheduled map fusion at the base station, and Monte-Carlo runs.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Matrix5, Vector3, Vector5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::{
    accumulate_fov, average_map, downlink_apply, fuse_uplink, BsMap, Downlink, Uplink, DEFAULT_GAMMA_D,
    DEFAULT_GAMMA_UP,
};
use crate::geometry::{wrap_angle, Measurement, MeasurementModel, RadioGeometry, SourceType};
use crate::gm::GaussianMixture;
use crate::metrics::{gospa, mae_rmse, GospaParams, StateErrorSummary, Trajectory};
use crate::motion::{sample_transition, ProcessNoise, VehicleState};
use crate::slam::{extract_map, FilterConfig, Particle, SlamError, UpdateKind, VehicleFilter};

/// Which of the compared processing chains is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Motion model only.
    PredictionOnly,
    /// Filter driven by the LOS path alone.
    LosOnly,
    /// Full local SLAM without any map exchange.
    LocalPhd,
    /// Local SLAM with uplink fusion at the BS.
    FusionUl,
    /// Local SLAM with uplink fusion and downlink of the fused map.
    #[serde(rename = "fusion-uldl")]
    FusionUlDl,
}

impl RunMode {
    pub const ALL: [RunMode; 5] = [
        RunMode::PredictionOnly,
        RunMode::LosOnly,
        RunMode::LocalPhd,
        RunMode::FusionUl,
        RunMode::FusionUlDl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::PredictionOnly => "prediction-only",
            RunMode::LosOnly => "los-only",
            RunMode::LocalPhd => "local-phd",
            RunMode::FusionUl => "fusion-ul",
            RunMode::FusionUlDl => "fusion-uldl",
        }
    }

    pub fn uplink(&self) -> bool {
        matches!(self, RunMode::FusionUl | RunMode::FusionUlDl)
    }

    pub fn downlink(&self) -> bool {
        matches!(self, RunMode::FusionUlDl)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// Standard deviations of the initial particle cloud around the true state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpread {
    pub sigma_x_m: f64,
    pub sigma_y_m: f64,
    pub sigma_heading_rad: f64,
    pub sigma_bias_m: f64,
}

impl Default for PriorSpread {
    fn default() -> Self {
        Self {
            sigma_x_m: 0.3,
            sigma_y_m: 0.3,
            sigma_heading_rad: 0.3,
            sigma_bias_m: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub initial: VehicleState,
    pub prior: PriorSpread,
    /// First sync step; later syncs follow every `Scenario::sync_period` steps.
    pub sync_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs: Vector3<f64>,
    pub vas: Vec<Vector3<f64>>,
    /// Horizontal SP positions; heights are drawn per run.
    pub sp_xy: Vec<[f64; 2]>,
    pub sp_z_min_m: f64,
    pub sp_z_max_m: f64,
    pub vehicles: Vec<VehicleSpec>,
    pub steps: usize,
    /// True process noise; the filters use `filter.process_noise`.
    pub truth_noise: ProcessNoise,
    /// Measurement noise covariance of the synthesized data.
    pub measurement_cov: Matrix5<f64>,
    pub filter: FilterConfig,
    pub particles: usize,
    pub sync_period: usize,
    pub gamma_up: f64,
    pub gamma_d: f64,
    pub t_va: f64,
    pub t_sp: f64,
    pub gospa: GospaParams,
    /// Error statistics use steps strictly after this one.
    pub steady_state_k: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        let filter = FilterConfig::default();
        let noise = filter.process_noise;
        Self {
            bs: Vector3::new(0.0, 0.0, 40.0),
            vas: vec![
                Vector3::new(200.0, 0.0, 40.0),
                Vector3::new(-200.0, 0.0, 40.0),
                Vector3::new(0.0, 200.0, 40.0),
                Vector3::new(0.0, -200.0, 40.0),
            ],
            sp_xy: vec![[65.0, 65.0], [-65.0, 65.0], [-65.0, -65.0], [65.0, -65.0]],
            sp_z_min_m: 0.0,
            sp_z_max_m: 40.0,
            vehicles: vec![
                VehicleSpec {
                    initial: VehicleState::new(
                        Vector3::new(70.7285, 0.0, 0.0),
                        std::f64::consts::FRAC_PI_2,
                        22.22,
                        std::f64::consts::PI / 10.0,
                        300.0,
                    ),
                    prior: PriorSpread::default(),
                    sync_offset: 10,
                },
                VehicleSpec {
                    initial: VehicleState::new(
                        Vector3::new(-70.7285, 0.0, 0.0),
                        std::f64::consts::FRAC_PI_2,
                        -22.22,
                        std::f64::consts::PI / 10.0,
                        300.0,
                    ),
                    prior: PriorSpread::default(),
                    sync_offset: 12,
                },
            ],
            steps: 40,
            truth_noise: noise,
            measurement_cov: Matrix5::from_diagonal(&Vector5::new(1e-2, 1e-4, 1e-4, 1e-4, 1e-4)),
            filter,
            particles: 2000,
            sync_period: 4,
            gamma_up: DEFAULT_GAMMA_UP,
            gamma_d: DEFAULT_GAMMA_D,
            t_va: 0.7,
            t_sp: 0.55,
            gospa: GospaParams::default(),
            steady_state_k: 20,
        }
    }
}

impl Scenario {
    pub fn is_sync_step(&self, vehicle: usize, k: usize) -> bool {
        let offset = self.vehicles[vehicle].sync_offset;
        self.sync_period > 0 && k >= offset && (k - offset).is_multiple_of(self.sync_period)
    }

    pub fn model(&self) -> RadioGeometry {
        RadioGeometry::new(self.bs)
    }
}

/// Independent random streams, one per (run, vehicle, purpose).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Detection = 2,
    MeasurementNoise = 3,
    Clutter = 4,
    Shuffle = 5,
    Prior = 6,
    Filter = 7,
    Environment = 8,
}

pub fn stream_rng(seed: u64, run: usize, vehicle: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 24) | ((vehicle as u64 & 0xffff) << 8) | purpose as u64);
    rng
}

/// Ground-truth origin of a synthesized measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "lowercase")]
pub enum Origin {
    Los,
    Va(usize),
    Sp(usize),
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedMeasurement {
    pub z: Measurement,
    pub origin: Origin,
}

/// SP locations of one run, with heights drawn uniformly.
pub fn draw_sps<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<Vector3<f64>> {
    scenario
        .sp_xy
        .iter()
        .map(|[x, y]| Vector3::new(*x, *y, rng.random_range(scenario.sp_z_min_m..=scenario.sp_z_max_m)))
        .collect()
}

/// True states `k = 0..=K` of one vehicle.
pub fn propagate_truth<R: Rng + ?Sized>(
    initial: &VehicleState,
    steps: usize,
    dt: f64,
    noise: &ProcessNoise,
    rng: &mut R,
) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*initial);
    for _ in 0..steps {
        let next = sample_transition(out.last().expect("non-empty"), dt, noise, rng);
        out.push(next);
    }
    out
}

/// Random streams consumed by measurement synthesis.
pub struct SynthesisRngs<'a, R: Rng + ?Sized> {
    pub detection: &'a mut R,
    pub noise: &'a mut R,
    pub clutter: &'a mut R,
    pub shuffle: &'a mut R,
}

/// Measurement set of one vehicle at one step, shuffled, with origin tags.
///
/// Every source consumes one detection draw and five noise draws whether or
/// not it is visible, so the streams stay aligned across configurations.
pub fn synthesize_measurements<R: Rng + ?Sized>(
    state: &VehicleState,
    scenario: &Scenario,
    sps: &[Vector3<f64>],
    rngs: SynthesisRngs<'_, R>,
) -> Vec<TaggedMeasurement> {
    let model = scenario.model();
    let det = &scenario.filter.detection;
    let chol = crate::ckf::sqrt_factor(&scenario.measurement_cov).expect("measurement covariance is positive definite");
    let sources = std::iter::once((Origin::Los, SourceType::Bs, scenario.bs))
        .chain(
            scenario
                .vas
                .iter()
                .enumerate()
                .map(|(i, x)| (Origin::Va(i), SourceType::Va, *x)),
        )
        .chain(sps.iter().enumerate().map(|(i, x)| (Origin::Sp(i), SourceType::Sp, *x)));
    let mut out = Vec::new();
    for (origin, kind, x) in sources {
        let u: f64 = rngs.detection.random();
        let e = Vector5::from_fn(|_, _| rngs.noise.sample::<f64, _>(StandardNormal));
        let p_d = det.p_d_at(kind, &x, &state.position);
        if u >= p_d {
            continue;
        }
        if let Ok(h) = model.measure(kind, &x, state) {
            out.push(TaggedMeasurement {
                z: Measurement(h.0 + chol * e).wrapped(),
                origin,
            });
        }
    }
    if det.clutter_rate > 0.0 {
        let count = Poisson::new(det.clutter_rate)
            .expect("positive clutter rate")
            .sample(rngs.clutter) as usize;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        for _ in 0..count {
            let z = Measurement::new(
                rngs.clutter.random_range(0.0..det.max_range_m),
                rngs.clutter.random_range(-half_pi..half_pi),
                rngs.clutter.random_range(-pi..pi),
                rngs.clutter.random_range(-half_pi..half_pi),
                rngs.clutter.random_range(-pi..pi),
            );
            out.push(TaggedMeasurement {
                z,
                origin: Origin::Clutter,
            });
        }
    }
    out.shuffle(rngs.shuffle);
    out
}

/// Holder of a map whose GOSPA is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holder {
    Vehicle(usize),
    Bs,
}

impl fmt::Display for Holder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Holder::Vehicle(n) => write!(f, "vehicle{}", n + 1),
            Holder::Bs => f.write_str("bs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaSample {
    pub k: usize,
    pub holder: Holder,
    pub kind: SourceType,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRecord {
    pub k: usize,
    pub vehicle: usize,
    pub bs_map_before: BsMap,
    pub uplink: Uplink,
    pub bs_map_after: BsMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub mode: RunMode,
    pub sps: Vec<Vector3<f64>>,
    /// `truth[n][k]` for `k = 0..=K`.
    pub truth: Vec<Vec<VehicleState>>,
    /// `estimates[n][k - 1]` for `k = 1..=K`.
    pub estimates: Vec<Vec<VehicleState>>,
    /// `measurements[n][k - 1]`.
    pub measurements: Vec<Vec<Vec<TaggedMeasurement>>>,
    pub syncs: Vec<SyncRecord>,
    pub gospa: Vec<GospaSample>,
    /// Set when a filter diverged; the run stops at that step.
    pub diverged: Option<String>,
}

impl RunResult {
    pub fn trajectory(&self, vehicle: usize) -> Trajectory<'_> {
        Trajectory {
            estimates: &self.estimates[vehicle],
            truth: &self.truth[vehicle][1..],
        }
    }

    pub fn gospa_at(&self, k: usize, holder: Holder, kind: SourceType) -> Option<f64> {
        self.gospa
            .iter()
            .find(|g| g.k == k && g.holder == holder && g.kind == kind)
            .map(|g| g.value)
    }
}

fn sample_prior<R: Rng + ?Sized>(spec: &VehicleSpec, n: usize, bs: Vector3<f64>, rng: &mut R) -> Vec<Particle> {
    let lw = -(n as f64).ln();
    (0..n)
        .map(|_| {
            let mut s = spec.initial;
            let mut draw = |sigma: f64| sigma * rng.sample::<f64, _>(StandardNormal);
            s.position.x += draw(spec.prior.sigma_x_m);
            s.position.y += draw(spec.prior.sigma_y_m);
            s.heading = wrap_angle(s.heading + draw(spec.prior.sigma_heading_rad));
            s.clock_bias += draw(spec.prior.sigma_bias_m);
            Particle::new(s, lw, bs)
        })
        .collect()
}

fn gospa_for(scenario: &Scenario, va: &GaussianMixture, sp: &GaussianMixture, sps: &[Vector3<f64>]) -> [f64; 2] {
    [
        gospa(&scenario.vas, &extract_map(va, scenario.t_va), &scenario.gospa),
        gospa(sps, &extract_map(sp, scenario.t_sp), &scenario.gospa),
    ]
}

/// Simulated world of one run.
pub type RunData = (
    Vec<Vector3<f64>>,
    Vec<Vec<VehicleState>>,
    Vec<Vec<Vec<TaggedMeasurement>>>,
);

/// Synthesize the data of one run: SP positions, truth and measurement logs.
pub fn synthesize_run(scenario: &Scenario, seed: u64, run: usize) -> RunData {
    let sps = draw_sps(scenario, &mut stream_rng(seed, run, 0xffff, Purpose::Environment));
    let mut truth = Vec::new();
    let mut logs = Vec::new();
    for (n, spec) in scenario.vehicles.iter().enumerate() {
        let states = propagate_truth(
            &spec.initial,
            scenario.steps,
            scenario.filter.dt_s,
            &scenario.truth_noise,
            &mut stream_rng(seed, run, n, Purpose::Truth),
        );
        let mut detection = stream_rng(seed, run, n, Purpose::Detection);
        let mut noise = stream_rng(seed, run, n, Purpose::MeasurementNoise);
        let mut clutter = stream_rng(seed, run, n, Purpose::Clutter);
        let mut shuffle = stream_rng(seed, run, n, Purpose::Shuffle);
        let scans = states[1..]
            .iter()
            .map(|s| {
                synthesize_measurements(
                    s,
                    scenario,
                    &sps,
                    SynthesisRngs {
                        detection: &mut detection,
                        noise: &mut noise,
                        clutter: &mut clutter,
                        shuffle: &mut shuffle,
                    },
                )
            })
            .collect();
        truth.push(states);
        logs.push(scans);
    }
    (sps, truth, logs)
}

/// One Monte-Carlo run of the two-vehicle experiment.
pub fn run_single(scenario: &Scenario, mode: RunMode, seed: u64, run: usize) -> RunResult {
    let (sps, truth, measurements) = synthesize_run(scenario, seed, run);
    let model = scenario.model();
    let nveh = scenario.vehicles.len();
    let mut cfg = scenario.filter.clone();
    if mode == RunMode::LosOnly {
        cfg.births_enabled = false;
    }
    let mut filters: Vec<VehicleFilter> = scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(n, spec)| {
            let ps = sample_prior(
                spec,
                scenario.particles,
                scenario.bs,
                &mut stream_rng(seed, run, n, Purpose::Prior),
            );
            VehicleFilter::new(ps, cfg.clone())
        })
        .collect();
    let mut filter_rngs: Vec<ChaCha8Rng> = (0..nveh).map(|n| stream_rng(seed, run, n, Purpose::Filter)).collect();
    let update = if mode == RunMode::PredictionOnly {
        UpdateKind::PredictOnly
    } else {
        UpdateKind::Correct
    };

    let mut result = RunResult {
        run,
        mode,
        sps: sps.clone(),
        truth,
        estimates: vec![Vec::with_capacity(scenario.steps); nveh],
        measurements,
        syncs: Vec::new(),
        gospa: Vec::new(),
        diverged: None,
    };
    let mut bs_map = BsMap::default();
    let mut poses: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); nveh];

    'steps: for k in 1..=scenario.steps {
        for n in 0..nveh {
            let scan: Vec<Measurement> = result.measurements[n][k - 1]
                .iter()
                .filter(|m| mode != RunMode::LosOnly || m.origin == Origin::Los)
                .map(|m| m.z)
                .collect();
            match filters[n].step(&model, &scan, update, &mut filter_rngs[n]) {
                Ok((est, _)) => {
                    poses[n].push(est.position);
                    result.estimates[n].push(est);
                }
                Err(e) => {
                    let msg = format!("vehicle {} diverged at k={k}: {e}", n + 1);
                    warn!("run {run}: {msg}");
                    result.diverged = Some(msg);
                    break 'steps;
                }
            }
        }
        if mode.uplink() {
            for n in 0..nveh {
                if !scenario.is_sync_step(n, k) {
                    continue;
                }
                let fov = accumulate_fov(&poses[n], &cfg.detection, scenario.gamma_d);
                let uplink = match Uplink::from_particles(n, k, &filters[n].particles, fov, &cfg.prune) {
                    Ok(u) => u,
                    Err(SlamError::Diverged | SlamError::NoParticles) => continue,
                };
                let after = fuse_uplink(&bs_map, &uplink, scenario.gamma_up, &cfg.prune);
                if mode.downlink() {
                    downlink_apply(&mut filters[n].particles, &Downlink::from(&after));
                }
                result.syncs.push(SyncRecord {
                    k,
                    vehicle: n,
                    bs_map_before: bs_map,
                    uplink,
                    bs_map_after: after.clone(),
                });
                bs_map = after;
                poses[n].clear();
            }
        }
        for (n, f) in filters.iter().enumerate() {
            let (va, sp) = average_map(&f.particles, &cfg.prune).unwrap_or_default();
            let g = gospa_for(scenario, &va, &sp, &sps);
            for (kind, value) in SourceType::MAPPED.into_iter().zip(g) {
                result.gospa.push(GospaSample {
                    k,
                    holder: Holder::Vehicle(n),
                    kind,
                    value,
                });
            }
        }
        let g = gospa_for(scenario, &bs_map.va, &bs_map.sp, &sps);
        for (kind, value) in SourceType::MAPPED.into_iter().zip(g) {
            result.gospa.push(GospaSample {
                k,
                holder: Holder::Bs,
                kind,
                value,
            });
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub mode: RunMode,
    pub seed: u64,
    pub runs: Vec<RunResult>,
}

impl MonteCarloResult {
    /// Runs that completed without divergence.
    pub fn completed(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(|r| r.diverged.is_none())
    }

    /// Steady-state error statistics of one vehicle, or of all vehicles.
    pub fn state_errors(&self, vehicle: Option<usize>, k_start: usize) -> StateErrorSummary {
        let trajs: Vec<Trajectory<'_>> = self
            .completed()
            .flat_map(|r| {
                (0..r.estimates.len())
                    .filter(move |n| vehicle.is_none_or(|v| v == *n))
                    .map(move |n| r.trajectory(n))
            })
            .collect();
        mae_rmse(&trajs, k_start)
    }

    /// Mean GOSPA over completed runs at step `k`.
    pub fn mean_gospa(&self, k: usize, holder: Holder, kind: SourceType) -> Option<f64> {
        let vals: Vec<f64> = self.completed().filter_map(|r| r.gospa_at(k, holder, kind)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// `runs` independent runs; run `r` uses the streams derived from `(seed, r)`.
pub fn run_monte_carlo(scenario: &Scenario, mode: RunMode, seed: u64, runs: usize) -> MonteCarloResult {
    let results: Vec<RunResult> = (0..runs)
        .into_par_iter()
        .map(|r| run_single(scenario, mode, seed, r))
        .collect();
    for r in &results {
        if let Some(msg) = &r.diverged {
            warn!("run {} excluded: {msg}", r.run);
        }
    }
    MonteCarloResult {
        mode,
        seed,
        runs: results,
    }
}
