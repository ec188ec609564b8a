//! Flat key-value run configuration.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tensegrity_core::inekf::{ContactNoiseModel, FilterConfig, ImuBias, NoiseConfig};
use tensegrity_core::shape::{PrismParams, ShapeSolverConfig};
use tensegrity_core::simulator::{Maneuver, SensorNoise, SimConfig, Terrain};

use crate::CliError;

/// Every tunable of a run. Unknown keys are rejected; missing keys take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Input of `estimate`; defaults to `<out_dir>/sensor_log.jsonl`.
    pub sensor_log: Option<PathBuf>,
    /// Inputs of `evaluate`; default to files in `out_dir`.
    pub ground_truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,

    /// `forward`, `backward`, `right_turn`, `valley` or `custom`.
    pub scenario: String,
    /// Comma-separated `kind:count`, e.g. `forward:3, turn_left:2, dwell:1.5`.
    /// Overrides the scenario's script when non-empty.
    pub script: String,
    /// `flat` or `valley`; empty keeps the scenario's terrain.
    pub terrain: String,
    pub valley_start: f64,
    pub valley_slope_length: f64,
    pub valley_angle_deg: f64,
    pub patch_extent: f64,
    pub rod_length: f64,
    pub d_offset: f64,
    pub bottom_radius: f64,
    pub top_radius: f64,
    pub twist_deg: f64,
    pub turn_taper: f64,
    pub imu_rate: f64,
    pub cable_rate: f64,
    pub initial_dwell: f64,
    pub final_dwell: f64,
    pub pivot_duration: f64,
    pub settle_duration: f64,
    pub breathing_amplitude_deg: f64,
    pub contact_threshold: f64,

    /// Per-sample IMU white-noise standard deviations.
    pub gyro_std: f64,
    pub accel_std: f64,
    /// Bias random-walk densities [unit/√s].
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub contact_velocity_std: f64,
    pub gravity: [f64; 3],
    pub cable_std: f64,
    pub contact_chatter: f64,
    pub initial_gyro_bias: [f64; 3],
    pub initial_accel_bias: [f64; 3],

    pub rod_tol: f64,
    pub inequality_margin: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub convergence_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub triangle_tol: f64,
    pub cable_offsets: [f64; 9],
    pub jacobian_step: f64,
    pub cold_start_radius: f64,
    pub cold_start_twist_deg: f64,

    /// `jacobian` or `empirical`.
    pub contact_noise_model: String,
    /// Cable-length noise fed through the contact Jacobian [m].
    pub fk_cable_std: f64,
    /// World-frame contact noise of the empirical model [m].
    pub fk_empirical_std: f64,
    pub fallback_fk_std: f64,
    /// χ² gate on contact innovations; 0 disables it.
    pub outlier_gate: f64,
    pub max_condition_number: f64,
    pub debounce_on: usize,
    pub debounce_off: usize,
    pub init_std_rotation: f64,
    pub init_std_velocity: f64,
    pub init_std_position: f64,
    pub init_std_bias: f64,
    /// Stationary IMU data used for bias and attitude initialisation [s].
    pub calibration_window: f64,
    /// Initial segment used to align the estimate with ground truth [s].
    pub align_window: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let shape = ShapeSolverConfig::default();
        let filter = FilterConfig::default();
        let std = |m: &Matrix3<f64>| m[(0, 0)].sqrt();
        let n = &filter.noise;
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            sensor_log: None,
            ground_truth: None,
            estimate: None,
            scenario: "forward".into(),
            script: String::new(),
            terrain: String::new(),
            valley_start: 1.5,
            valley_slope_length: 2.5,
            valley_angle_deg: 15.0,
            patch_extent: sim.patch_extent,
            rod_length: sim.rod_length,
            d_offset: sim.d_offset,
            bottom_radius: sim.prism.bottom_radius,
            top_radius: sim.prism.top_radius,
            twist_deg: sim.prism.twist.to_degrees(),
            turn_taper: sim.turn_taper,
            imu_rate: sim.imu_rate,
            cable_rate: sim.cable_rate,
            initial_dwell: sim.initial_dwell,
            final_dwell: sim.final_dwell,
            pivot_duration: sim.pivot_duration,
            settle_duration: sim.settle_duration,
            breathing_amplitude_deg: sim.breathing_amplitude.to_degrees(),
            contact_threshold: sim.contact_threshold,
            gyro_std: std(&n.gyro),
            accel_std: std(&n.accel),
            gyro_bias_walk: std(&n.gyro_bias),
            accel_bias_walk: std(&n.accel_bias),
            contact_velocity_std: std(&n.contact),
            gravity: n.gravity.into(),
            cable_std: sim.noise.cable_std,
            contact_chatter: sim.noise.contact_chatter,
            initial_gyro_bias: [0.0; 3],
            initial_accel_bias: [0.0; 3],
            rod_tol: shape.rod_tol,
            inequality_margin: shape.inequality_margin,
            max_outer_iterations: shape.max_outer_iterations,
            max_inner_iterations: shape.max_inner_iterations,
            convergence_tol: shape.convergence_tol,
            initial_penalty: shape.initial_penalty,
            penalty_growth: shape.penalty_growth,
            max_penalty: shape.max_penalty,
            triangle_tol: shape.triangle_tol,
            cable_offsets: shape.cable_offsets,
            jacobian_step: shape.jacobian_step,
            cold_start_radius: shape.cold_start.bottom_radius,
            cold_start_twist_deg: shape.cold_start.twist.to_degrees(),
            contact_noise_model: "jacobian".into(),
            fk_cable_std: 0.01,
            fk_empirical_std: 0.01,
            fallback_fk_std: filter.fallback_fk_std,
            outlier_gate: filter.outlier_gate.unwrap_or(0.0),
            max_condition_number: filter.max_condition_number,
            debounce_on: filter.debounce_on,
            debounce_off: filter.debounce_off,
            init_std_rotation: filter.init_std_rotation,
            init_std_velocity: filter.init_std_velocity,
            init_std_position: filter.init_std_position,
            init_std_bias: filter.init_std_bias,
            calibration_window: 2.0,
            align_window: 3.0,
        }
    }
}

fn parse_script(s: &str) -> Result<Vec<Maneuver>, CliError> {
    let bad = |item: &str| CliError::Usage(format!("bad script entry `{item}`; expected kind:count"));
    s.split(',')
        .map(str::trim)
        .filter(|item| !item.is_empty())
        .map(|item| {
            let (kind, count) = item.split_once(':').ok_or_else(|| bad(item))?;
            let n = || count.trim().parse::<usize>().map_err(|_| bad(item));
            Ok(match kind.trim() {
                "forward" => Maneuver::RollForward(n()?),
                "backward" => Maneuver::RollBackward(n()?),
                "turn_left" => Maneuver::TurnLeft(n()?),
                "turn_right" => Maneuver::TurnRight(n()?),
                "dwell" => Maneuver::Dwell(count.trim().parse().map_err(|_| bad(item))?),
                _ => return Err(bad(item)),
            })
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// SHA-256 of the fully resolved configuration, excluding file paths.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            sensor_log: None,
            ground_truth: None,
            estimate: None,
            ..self.clone()
        };
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sensor_log_path(&self) -> PathBuf {
        self.sensor_log.clone().unwrap_or_else(|| self.out_dir.join("sensor_log.jsonl"))
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.ground_truth.clone().unwrap_or_else(|| self.out_dir.join("ground_truth.txt"))
    }

    pub fn estimate_path(&self) -> PathBuf {
        self.estimate.clone().unwrap_or_else(|| self.out_dir.join("estimate.txt"))
    }

    fn noise_config(&self) -> NoiseConfig {
        let d = |s: f64| Matrix3::identity() * (s * s);
        NoiseConfig {
            gyro: d(self.gyro_std),
            accel: d(self.accel_std),
            gyro_bias: d(self.gyro_bias_walk),
            accel_bias: d(self.accel_bias_walk),
            contact: d(self.contact_velocity_std),
            gravity: Vector3::from(self.gravity),
            imu_period: 1.0 / self.imu_rate,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let preset = match self.scenario.as_str() {
            "forward" => SimConfig::forward(),
            "backward" => SimConfig::backward(),
            "right_turn" => SimConfig::right_turn(),
            "valley" => SimConfig::valley(),
            "custom" => SimConfig::default(),
            other => return Err(CliError::Usage(format!("unknown scenario `{other}`"))),
        };
        let script = if self.script.trim().is_empty() {
            preset.script
        } else {
            parse_script(&self.script)?
        };
        let terrain = match self.terrain.as_str() {
            "" => preset.terrain,
            "flat" => Terrain::Flat,
            "valley" => Terrain::Valley {
                start: self.valley_start,
                slope_length: self.valley_slope_length,
                angle: self.valley_angle_deg.to_radians(),
            },
            other => return Err(CliError::Usage(format!("unknown terrain `{other}`"))),
        };
        let terrain = match terrain {
            Terrain::Valley { .. } => Terrain::Valley {
                start: self.valley_start,
                slope_length: self.valley_slope_length,
                angle: self.valley_angle_deg.to_radians(),
            },
            t => t,
        };
        Ok(SimConfig {
            seed: self.seed,
            rod_length: self.rod_length,
            d_offset: self.d_offset,
            prism: PrismParams {
                bottom_radius: self.bottom_radius,
                top_radius: self.top_radius,
                twist: self.twist_deg.to_radians(),
            },
            turn_taper: self.turn_taper,
            script,
            terrain,
            patch_extent: self.patch_extent,
            imu_rate: self.imu_rate,
            cable_rate: self.cable_rate,
            initial_dwell: self.initial_dwell,
            final_dwell: self.final_dwell,
            pivot_duration: self.pivot_duration,
            settle_duration: self.settle_duration,
            breathing_amplitude: self.breathing_amplitude_deg.to_radians(),
            contact_threshold: self.contact_threshold,
            gravity: Vector3::from(self.gravity),
            noise: SensorNoise {
                imu: self.noise_config(),
                cable_std: self.cable_std,
                contact_chatter: self.contact_chatter,
                initial_bias: ImuBias {
                    accel: Vector3::from(self.initial_accel_bias),
                    gyro: Vector3::from(self.initial_gyro_bias),
                },
            },
        })
    }

    pub fn shape_config(&self) -> ShapeSolverConfig {
        ShapeSolverConfig {
            rod_length: self.rod_length,
            d_offset: self.d_offset,
            rod_tol: self.rod_tol,
            inequality_margin: self.inequality_margin,
            max_outer_iterations: self.max_outer_iterations,
            max_inner_iterations: self.max_inner_iterations,
            convergence_tol: self.convergence_tol,
            initial_penalty: self.initial_penalty,
            penalty_growth: self.penalty_growth,
            max_penalty: self.max_penalty,
            triangle_tol: self.triangle_tol,
            cable_offsets: self.cable_offsets,
            jacobian_step: self.jacobian_step,
            cold_start: PrismParams::symmetric(self.cold_start_radius, self.cold_start_twist_deg.to_radians()),
        }
    }

    pub fn filter_config(&self) -> Result<FilterConfig, CliError> {
        let contact_noise = match self.contact_noise_model.as_str() {
            "jacobian" => ContactNoiseModel::Jacobian {
                cable_std: self.fk_cable_std,
            },
            "empirical" => ContactNoiseModel::Empirical {
                std: self.fk_empirical_std,
            },
            other => return Err(CliError::Usage(format!("unknown contact_noise_model `{other}`"))),
        };
        let cfg = FilterConfig {
            noise: self.noise_config(),
            contact_noise,
            fallback_fk_std: self.fallback_fk_std,
            outlier_gate: (self.outlier_gate > 0.0).then_some(self.outlier_gate),
            max_condition_number: self.max_condition_number,
            debounce_on: self.debounce_on,
            debounce_off: self.debounce_off,
            init_std_rotation: self.init_std_rotation,
            init_std_velocity: self.init_std_velocity,
            init_std_position: self.init_std_position,
            init_std_bias: self.init_std_bias,
            shape: self.shape_config(),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.filter_config().unwrap(), FilterConfig::default());
        assert_eq!(cfg.shape_config(), ShapeSolverConfig::default());
        let sim = cfg.sim_config().unwrap();
        let reference = SimConfig::forward();
        assert_eq!(sim.script, reference.script);
        assert_eq!(sim.prism, reference.prism);
        assert_eq!(sim.noise.imu, reference.noise.imu);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = RunConfig::parse("seed = 4\nscript = \"forward:2, dwell:1.5, turn_left:1\"\nterrain = \"valley\"\n").unwrap();
        let sim = cfg.sim_config().unwrap();
        assert_eq!(sim.seed, 4);
        assert_eq!(
            sim.script,
            vec![Maneuver::RollForward(2), Maneuver::Dwell(1.5), Maneuver::TurnLeft(1)]
        );
        assert!(matches!(sim.terrain, Terrain::Valley { .. }));
        assert!(RunConfig::parse("no_such_key = 1").is_err());
        let bad = RunConfig {
            script: "hop:3".into(),
            ..Default::default()
        };
        assert!(bad.sim_config().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), moved.hash());
    }
}
