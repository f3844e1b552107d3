//! TOML run configuration. Key names carry their units; every key is
//! optional and defaults to the reference two-vehicle experiment.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix5, Vector3, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gm::PruneParams;
use crate::metrics::GospaParams;
use crate::motion::{ProcessNoise, VehicleState};
use crate::sim::{PriorSpread, RunMode, Scenario, VehicleSpec};
use crate::slam::{DetectionModel, FilterConfig, PdPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub monte_carlo_runs: usize,
    pub particles: usize,
    pub output_dir: PathBuf,
    pub formats: Vec<ExportFormat>,
    pub scenario: ScenarioSection,
    pub vehicles: Vec<VehicleSection>,
    pub noise: NoiseSection,
    pub detection: DetectionSection,
    pub filter: FilterSection,
    pub fusion: FusionSection,
    pub extraction: ExtractionSection,
    pub gospa: GospaSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub bs_position_m: [f64; 3],
    pub va_positions_m: Vec<[f64; 3]>,
    pub sp_xy_m: Vec<[f64; 2]>,
    pub sp_z_min_m: f64,
    pub sp_z_max_m: f64,
    pub steps: usize,
    pub dt_s: f64,
    pub sync_period_steps: usize,
    pub steady_state_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub initial_position_m: [f64; 3],
    pub initial_heading_rad: f64,
    pub speed_mps: f64,
    pub turn_rate_radps: f64,
    pub clock_bias_m: f64,
    pub prior_sigma_x_m: f64,
    pub prior_sigma_y_m: f64,
    pub prior_sigma_heading_rad: f64,
    pub prior_sigma_bias_m: f64,
    pub sync_offset_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub process_sigma_x_m: f64,
    pub process_sigma_y_m: f64,
    pub process_sigma_heading_rad: f64,
    pub process_sigma_bias_m: f64,
    pub measurement_var_range_m2: f64,
    /// Variances of `[doa_el, doa_az, dod_el, dod_az]`.
    pub measurement_var_angles_rad2: [f64; 4],
    /// The filter uses the measurement covariance scaled by this factor.
    pub phd_cov_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub p_d: f64,
    pub r_fov_m: f64,
    pub clutter_rate: f64,
    pub max_range_m: f64,
    pub pd_policy: PdPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub birth_weight: f64,
    pub truncation_threshold: f64,
    pub merge_threshold: f64,
    pub max_components: usize,
    pub birth_gating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub gamma_up: f64,
    pub gamma_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub t_va: f64,
    pub t_sp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GospaSection {
    pub cutoff_m: f64,
    pub alpha: f64,
    pub power: f64,
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Scenario::default();
        let f = &s.filter;
        Self {
            mode: RunMode::FusionUlDl,
            seed: 1,
            monte_carlo_runs: 20,
            particles: s.particles,
            output_dir: PathBuf::from("out"),
            formats: vec![ExportFormat::Csv],
            scenario: ScenarioSection::default(),
            vehicles: s.vehicles.iter().map(VehicleSection::from).collect(),
            noise: NoiseSection::default(),
            detection: DetectionSection::default(),
            filter: FilterSection {
                birth_weight: f.birth_weight,
                truncation_threshold: f.prune.truncation,
                merge_threshold: f.prune.merge_threshold,
                max_components: f.prune.max_components,
                birth_gating: f.birth_gating,
            },
            fusion: FusionSection {
                gamma_up: s.gamma_up,
                gamma_d: s.gamma_d,
            },
            extraction: ExtractionSection {
                t_va: s.t_va,
                t_sp: s.t_sp,
            },
            gospa: GospaSection {
                cutoff_m: s.gospa.cutoff_m,
                alpha: s.gospa.alpha,
                power: s.gospa.power,
            },
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            bs_position_m: arr3(&s.bs),
            va_positions_m: s.vas.iter().map(arr3).collect(),
            sp_xy_m: s.sp_xy.clone(),
            sp_z_min_m: s.sp_z_min_m,
            sp_z_max_m: s.sp_z_max_m,
            steps: s.steps,
            dt_s: s.filter.dt_s,
            sync_period_steps: s.sync_period,
            steady_state_k: s.steady_state_k,
        }
    }
}

impl From<&VehicleSpec> for VehicleSection {
    fn from(v: &VehicleSpec) -> Self {
        Self {
            initial_position_m: arr3(&v.initial.position),
            initial_heading_rad: v.initial.heading,
            speed_mps: v.initial.speed,
            turn_rate_radps: v.initial.turn_rate,
            clock_bias_m: v.initial.clock_bias,
            prior_sigma_x_m: v.prior.sigma_x_m,
            prior_sigma_y_m: v.prior.sigma_y_m,
            prior_sigma_heading_rad: v.prior.sigma_heading_rad,
            prior_sigma_bias_m: v.prior.sigma_bias_m,
            sync_offset_steps: v.sync_offset,
        }
    }
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self::from(&Scenario::default().vehicles[0])
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        let s = Scenario::default();
        let m = s.measurement_cov;
        Self {
            process_sigma_x_m: s.truth_noise.sigma_x_m,
            process_sigma_y_m: s.truth_noise.sigma_y_m,
            process_sigma_heading_rad: s.truth_noise.sigma_heading_rad,
            process_sigma_bias_m: s.truth_noise.sigma_bias_m,
            measurement_var_range_m2: m[(0, 0)],
            measurement_var_angles_rad2: [m[(1, 1)], m[(2, 2)], m[(3, 3)], m[(4, 4)]],
            phd_cov_scale: 9.0,
        }
    }
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionModel::default();
        Self {
            p_d: d.p_d,
            r_fov_m: d.r_fov_m,
            clutter_rate: d.clutter_rate,
            max_range_m: d.max_range_m,
            pd_policy: d.pd_policy,
        }
    }
}

impl Default for FilterSection {
    fn default() -> Self {
        RunConfig::default().filter
    }
}

impl Default for FusionSection {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            gamma_up: s.gamma_up,
            gamma_d: s.gamma_d,
        }
    }
}

impl Default for ExtractionSection {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            t_va: s.t_va,
            t_sp: s.t_sp,
        }
    }
}

impl Default for GospaSection {
    fn default() -> Self {
        let g = GospaParams::default();
        Self {
            cutoff_m: g.cutoff_m,
            alpha: g.alpha,
            power: g.power,
        }
    }
}

/// One failed check of `RunConfig::validate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, field: impl Into<String>, message: &str) {
        if !ok {
            self.0.push(Violation {
                field: field.into(),
                message: message.to_string(),
            });
        }
    }

    fn positive(&mut self, v: f64, field: impl Into<String>) {
        self.check(v.is_finite() && v > 0.0, field, "must be a finite positive number");
    }

    fn non_negative(&mut self, v: f64, field: impl Into<String>) {
        self.check(v.is_finite() && v >= 0.0, field, "must be a finite non-negative number");
    }

    fn finite(&mut self, v: &[f64], field: impl Into<String>) {
        self.check(v.iter().all(|x| x.is_finite()), field, "must be finite");
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    /// All invariant violations; empty when the configuration is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut c = Checker(Vec::new());
        c.check(self.monte_carlo_runs >= 1, "monte_carlo_runs", "must be at least 1");
        c.check(self.particles >= 1, "particles", "must be at least 1");
        c.check(
            !self.formats.is_empty(),
            "formats",
            "at least one export format is required",
        );

        let s = &self.scenario;
        c.finite(&s.bs_position_m, "scenario.bs_position_m");
        for (i, va) in s.va_positions_m.iter().enumerate() {
            let field = format!("scenario.va_positions_m[{i}]");
            c.finite(va, field.clone());
            c.check(
                *va != s.bs_position_m,
                field,
                "a virtual anchor cannot coincide with the BS",
            );
        }
        for (i, sp) in s.sp_xy_m.iter().enumerate() {
            c.finite(sp, format!("scenario.sp_xy_m[{i}]"));
        }
        c.finite(&[s.sp_z_min_m, s.sp_z_max_m], "scenario.sp_z_min_m");
        c.check(
            s.sp_z_min_m <= s.sp_z_max_m,
            "scenario.sp_z_max_m",
            "must not be below sp_z_min_m",
        );
        c.check(s.steps >= 1, "scenario.steps", "must be at least 1");
        c.positive(s.dt_s, "scenario.dt_s");
        c.check(
            s.sync_period_steps >= 1,
            "scenario.sync_period_steps",
            "must be at least 1",
        );
        c.check(
            s.steady_state_k < s.steps,
            "scenario.steady_state_k",
            "must be below the number of steps",
        );

        c.check(
            !self.vehicles.is_empty(),
            "vehicles",
            "at least one vehicle is required",
        );
        for (i, v) in self.vehicles.iter().enumerate() {
            let f = |name: &str| format!("vehicles[{i}].{name}");
            c.finite(&v.initial_position_m, f("initial_position_m"));
            c.finite(
                &[v.initial_heading_rad, v.speed_mps, v.turn_rate_radps, v.clock_bias_m],
                f("initial_state"),
            );
            c.non_negative(v.prior_sigma_x_m, f("prior_sigma_x_m"));
            c.non_negative(v.prior_sigma_y_m, f("prior_sigma_y_m"));
            c.non_negative(v.prior_sigma_heading_rad, f("prior_sigma_heading_rad"));
            c.non_negative(v.prior_sigma_bias_m, f("prior_sigma_bias_m"));
            c.check(
                v.sync_offset_steps >= 1 && v.sync_offset_steps <= s.steps,
                f("sync_offset_steps"),
                "must lie within 1..=steps",
            );
        }

        let n = &self.noise;
        c.non_negative(n.process_sigma_x_m, "noise.process_sigma_x_m");
        c.non_negative(n.process_sigma_y_m, "noise.process_sigma_y_m");
        c.non_negative(n.process_sigma_heading_rad, "noise.process_sigma_heading_rad");
        c.non_negative(n.process_sigma_bias_m, "noise.process_sigma_bias_m");
        c.positive(n.measurement_var_range_m2, "noise.measurement_var_range_m2");
        for (i, v) in n.measurement_var_angles_rad2.iter().enumerate() {
            c.positive(*v, format!("noise.measurement_var_angles_rad2[{i}]"));
        }
        c.positive(n.phd_cov_scale, "noise.phd_cov_scale");

        let d = &self.detection;
        c.check((0.0..=1.0).contains(&d.p_d), "detection.p_d", "must lie in [0, 1]");
        c.positive(d.r_fov_m, "detection.r_fov_m");
        c.non_negative(d.clutter_rate, "detection.clutter_rate");
        c.positive(d.max_range_m, "detection.max_range_m");

        let fl = &self.filter;
        c.positive(fl.birth_weight, "filter.birth_weight");
        c.non_negative(fl.truncation_threshold, "filter.truncation_threshold");
        c.positive(fl.merge_threshold, "filter.merge_threshold");
        c.check(fl.max_components >= 1, "filter.max_components", "must be at least 1");

        c.positive(self.fusion.gamma_up, "fusion.gamma_up");
        c.check(
            self.fusion.gamma_d > 0.0 && self.fusion.gamma_d <= 1.0,
            "fusion.gamma_d",
            "must lie in (0, 1]",
        );
        c.non_negative(self.extraction.t_va, "extraction.t_va");
        c.non_negative(self.extraction.t_sp, "extraction.t_sp");

        let g = &self.gospa;
        c.positive(g.cutoff_m, "gospa.cutoff_m");
        c.check(
            g.power >= 1.0 && g.power.is_finite(),
            "gospa.power",
            "must be at least 1",
        );
        c.check(g.alpha > 0.0 && g.alpha <= 2.0, "gospa.alpha", "must lie in (0, 2]");
        c.0
    }

    /// Simulation scenario described by this configuration.
    pub fn to_scenario(&self) -> Scenario {
        let s = &self.scenario;
        let n = &self.noise;
        let measurement_cov = Matrix5::from_diagonal(&Vector5::new(
            n.measurement_var_range_m2,
            n.measurement_var_angles_rad2[0],
            n.measurement_var_angles_rad2[1],
            n.measurement_var_angles_rad2[2],
            n.measurement_var_angles_rad2[3],
        ));
        let process_noise = ProcessNoise {
            sigma_x_m: n.process_sigma_x_m,
            sigma_y_m: n.process_sigma_y_m,
            sigma_heading_rad: n.process_sigma_heading_rad,
            sigma_bias_m: n.process_sigma_bias_m,
        };
        let filter = FilterConfig {
            dt_s: s.dt_s,
            process_noise,
            sigma_phd: measurement_cov * n.phd_cov_scale,
            detection: DetectionModel {
                p_d: self.detection.p_d,
                r_fov_m: self.detection.r_fov_m,
                clutter_rate: self.detection.clutter_rate,
                max_range_m: self.detection.max_range_m,
                pd_policy: self.detection.pd_policy,
            },
            birth_weight: self.filter.birth_weight,
            prune: PruneParams {
                truncation: self.filter.truncation_threshold,
                merge_threshold: self.filter.merge_threshold,
                max_components: self.filter.max_components,
            },
            births_enabled: true,
            birth_gating: self.filter.birth_gating,
        };
        Scenario {
            bs: Vector3::from(s.bs_position_m),
            vas: s.va_positions_m.iter().map(|v| Vector3::from(*v)).collect(),
            sp_xy: s.sp_xy_m.clone(),
            sp_z_min_m: s.sp_z_min_m,
            sp_z_max_m: s.sp_z_max_m,
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleSpec {
                    initial: VehicleState::new(
                        Vector3::from(v.initial_position_m),
                        v.initial_heading_rad,
                        v.speed_mps,
                        v.turn_rate_radps,
                        v.clock_bias_m,
                    ),
                    prior: PriorSpread {
                        sigma_x_m: v.prior_sigma_x_m,
                        sigma_y_m: v.prior_sigma_y_m,
                        sigma_heading_rad: v.prior_sigma_heading_rad,
                        sigma_bias_m: v.prior_sigma_bias_m,
                    },
                    sync_offset: v.sync_offset_steps,
                })
                .collect(),
            steps: s.steps,
            truth_noise: process_noise,
            measurement_cov,
            filter,
            particles: self.particles,
            sync_period: s.sync_period_steps,
            gamma_up: self.fusion.gamma_up,
            gamma_d: self.fusion.gamma_d,
            t_va: self.extraction.t_va,
            t_sp: self.extraction.t_sp,
            gospa: GospaParams {
                cutoff_m: self.gospa.cutoff_m,
                alpha: self.gospa.alpha,
                power: self.gospa.power,
            },
            steady_state_k: s.steady_state_k,
        }
    }
}
