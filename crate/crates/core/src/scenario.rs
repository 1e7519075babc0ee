//! Scenario files.
//!
//! A scenario is a TOML document. Every section except `step`/`mission`
//! has defaults; unknown keys are rejected.
//!
//! ```toml
//! name = "step"
//! seed = 7
//! dt = 0.001
//! duration = 8.0
//!
//! [initial]
//! position = [0.0, 0.0, -50.0]
//! body_velocity = [1.0, 1.0, 0.0]
//!
//! [noise]
//! attitude_sigma = 2e-4
//! altitude_sigma = 0.01
//!
//! [gains.roll]
//! kp = 2.0
//! ki = 0.1436
//! kd = 6.5097
//! ka = 0.5772
//! tf = 0.0437
//! # ... pitch, yaw, altitude
//!
//! [step]
//! step_time = 2.0
//! roll_deg = -5.0
//! pitch_deg = 10.0
//! yaw_deg = 30.0
//! altitude = 20.0
//! ```

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{QuadParams, RigidBodyState, MAX_DT};
use crate::guidance::GuidanceConfig;
use crate::perception::{CameraRig, PixelNoise};
use crate::pida::GainSet;
use crate::sdsa::SdsaConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    /// Earth frame, z down, m.
    pub position: [f64; 3],
    /// Roll, pitch, yaw in degrees.
    pub euler_deg: [f64; 3],
    /// Body frame, m/s.
    pub body_velocity: [f64; 3],
    /// Body frame, rad/s.
    pub body_rates: [f64; 3],
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            euler_deg: [0.0; 3],
            body_velocity: [0.0; 3],
            body_rates: [0.0; 3],
        }
    }
}

impl InitialState {
    pub fn to_state(&self) -> RigidBodyState {
        RigidBodyState {
            euler: Vector3::from(self.euler_deg.map(f64::to_radians)),
            body_rates: Vector3::from(self.body_rates),
            body_velocity: Vector3::from(self.body_velocity),
            position: Vector3::from(self.position),
        }
    }
}

/// Roll-torque white noise switched on at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollDisturbance {
    /// s
    pub start: f64,
    /// Standard deviation of the torque held over each step, N m.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation of the attitude measurements, rad.
    pub attitude_sigma: f64,
    /// Standard deviation of the altitude measurement, m.
    pub altitude_sigma: f64,
    pub roll_disturbance: Option<RollDisturbance>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            attitude_sigma: 2e-4,
            altitude_sigma: 0.01,
            roll_disturbance: None,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            attitude_sigma: 0.0,
            altitude_sigma: 0.0,
            roll_disturbance: None,
        }
    }
}

/// Step commands applied at `step_time`; before it the references hold the
/// initial attitude and altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepCommand {
    pub step_time: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    /// m, positive up.
    pub altitude: f64,
    /// When false the vehicle flies open loop at hover thrust.
    pub closed_loop: bool,
}

impl Default for StepCommand {
    fn default() -> Self {
        Self {
            step_time: 2.0,
            roll_deg: -5.0,
            pitch_deg: 10.0,
            yaw_deg: 30.0,
            altitude: 20.0,
            closed_loop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    /// Target ground position, earth frame, m.
    pub target: [f64; 3],
    /// Height of the observed point above the target position, m.
    pub target_height: f64,
    /// Physics steps per perception and guidance update.
    pub perception_every: usize,
    /// Longest tolerated run of invalid frames, s.
    pub acquisition_timeout: f64,
    pub camera: CameraRig,
    pub pixel_noise: PixelNoise,
    pub guidance: GuidanceConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            target: [5.0, 5.0, 0.0],
            target_height: 1.8,
            perception_every: 10,
            acquisition_timeout: 1.0,
            camera: CameraRig::default(),
            pixel_noise: PixelNoise {
                sigma: 0.3,
                dropout: 0.0,
            },
            guidance: GuidanceConfig::default(),
        }
    }
}

impl MissionConfig {
    /// Earth-frame point the camera looks at.
    pub fn observed_point(&self) -> Vector3<f64> {
        Vector3::from(self.target) - Vector3::new(0.0, 0.0, self.target_height)
    }
}

/// Parameters of the gain search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    /// Desired percent overshoot.
    pub overshoot: f64,
    /// Desired settling time, s.
    pub settling_time: f64,
    /// Lower and upper bounds of `[kp, ki, kd, ka, tf]`.
    pub lower: [f64; 5],
    pub upper: [f64; 5],
    /// Length of each tuning simulation, s.
    pub duration: f64,
    /// Independent SDSA runs per channel; the best one is kept.
    pub starts: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            overshoot: 5.0,
            settling_time: 2.0,
            lower: [0.0, 0.0, 0.0, 0.0, 0.005],
            upper: [50.0, 30.0, 50.0, 30.0, 0.5],
            duration: 8.0,
            starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Physics and control step, s.
    pub dt: f64,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub quad: QuadParams,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default = "GainSet::reference")]
    pub gains: GainSet,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub sdsa: SdsaConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mission: Option<MissionConfig>,
}

impl Scenario {
    /// Four-channel step from 50 m altitude.
    pub fn step_default() -> Self {
        Self {
            name: "step".into(),
            seed: 7,
            dt: 0.001,
            duration: 8.0,
            quad: QuadParams::default(),
            initial: InitialState {
                position: [0.0, 0.0, -50.0],
                body_velocity: [1.0, 1.0, 0.0],
                ..InitialState::default()
            },
            gains: GainSet::tuned(),
            noise: NoiseConfig::default(),
            sdsa: SdsaConfig::default(),
            tuning: TuningConfig::default(),
            step: Some(StepCommand::default()),
            mission: None,
        }
    }

    /// Approach a stationary target from `[0, 0, -5]`.
    pub fn mission_default() -> Self {
        Self {
            name: "mission".into(),
            duration: 10.0,
            initial: InitialState {
                position: [0.0, 0.0, -5.0],
                ..InitialState::default()
            },
            step: None,
            mission: Some(MissionConfig::default()),
            ..Self::step_default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Number of integration steps; the trajectory has one more row.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return bad(format!("dt must lie in (0, {MAX_DT}]"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return bad("duration must be a whole number of steps".into());
        }
        self.quad.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gains.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for c in crate::pida::Channel::ALL {
            if self.gains.get(c).tf <= self.dt {
                return bad(format!("{c} filter constant must exceed dt"));
            }
        }
        self.sdsa.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = &self.noise;
        if !(n.attitude_sigma >= 0.0 && n.altitude_sigma >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some(d) = n.roll_disturbance {
            if !(d.sigma >= 0.0 && d.start >= 0.0) {
                return bad("roll disturbance must have non-negative start and sigma".into());
            }
        }
        let t = &self.tuning;
        if !(t.overshoot > 0.0 && t.settling_time > 0.0 && t.duration > 0.0) {
            return bad("tuning targets must be positive".into());
        }
        if t.starts == 0 {
            return bad("tuning needs at least one start".into());
        }
        if t.lower.iter().zip(&t.upper).any(|(l, u)| !(l < u)) {
            return bad("tuning bounds must satisfy lower < upper".into());
        }
        if !(t.lower[4] > self.dt) {
            return bad("tuning lower bound on tf must exceed dt".into());
        }
        if let Some(s) = &self.step {
            if !(s.step_time >= 0.0 && s.step_time < self.duration) {
                return bad("step_time must lie inside the run".into());
            }
        }
        if let Some(m) = &self.mission {
            if m.perception_every == 0 {
                return bad("perception_every must be >= 1".into());
            }
            if !(m.acquisition_timeout > 0.0) {
                return bad("acquisition_timeout must be positive".into());
            }
            m.camera.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            m.guidance.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !(m.pixel_noise.sigma >= 0.0 && (0.0..=1.0).contains(&m.pixel_noise.dropout)) {
                return bad("pixel noise must be >= 0 and dropout in [0, 1]".into());
            }
        }
        Ok(())
    }
}
