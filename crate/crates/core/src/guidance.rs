//! Proportional navigation and the mapping from commanded acceleration to
//! controller references.
//!
//! Far from the target the horizontal acceleration is the PPN command plus a
//! closing-speed regulator along the line of sight (PPN alone commands
//! nothing when the pursuer starts at rest). Once the horizontal range drops
//! to the safe distance the guidance freezes the relative offset and holds
//! it with a position PD until the range opens past the release distance.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pida::ControllerCommand;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GuidanceError {
    #[error("range {range} m is below the {r_min} m singularity guard")]
    TargetReached { range: f64, r_min: f64 },
    #[error("invalid guidance configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Relative geometry in the earth frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeKinematics {
    /// Target minus pursuer position, m.
    pub range: Vector3<f64>,
    pub pursuer_velocity: Vector3<f64>,
    pub target_velocity: Vector3<f64>,
}

impl RelativeKinematics {
    pub fn relative_velocity(&self) -> Vector3<f64> {
        self.pursuer_velocity - self.target_velocity
    }
}

/// `((V_M - V_T) x R) / |R|^2`.
pub fn los_rate(rel: &RelativeKinematics, r_min: f64) -> Result<Vector3<f64>, GuidanceError> {
    let r2 = rel.range.norm_squared();
    if !(r2.sqrt() >= r_min) {
        return Err(GuidanceError::TargetReached {
            range: r2.sqrt(),
            r_min,
        });
    }
    Ok(rel.relative_velocity().cross(&rel.range) / r2)
}

/// `N * Omega_LOS x (V_M - V_T)`.
pub fn ppn_acceleration(rel: &RelativeKinematics, n: f64, r_min: f64) -> Result<Vector3<f64>, GuidanceError> {
    Ok(n * los_rate(rel, r_min)?.cross(&rel.relative_velocity()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub navigation_constant: f64,
    /// Horizontal range at which hold mode engages, m.
    pub safe_distance: f64,
    /// Hold also engages this far outside the safe distance, so range noise
    /// cannot keep a vehicle that starts at the offset in approach, m.
    pub engage_tolerance: f64,
    /// Horizontal range beyond which hold mode releases, m.
    pub release_distance: f64,
    /// Commanded altitude, m.
    pub target_height: f64,
    /// Roll and pitch reference limit, rad.
    pub max_tilt: f64,
    pub r_min: f64,
    /// Closing speed ceiling, m/s.
    pub approach_speed: f64,
    /// Closing speed per metre of remaining range, 1/s.
    pub approach_gain: f64,
    /// The closing speed is aimed this far inside the safe distance so the
    /// vehicle crosses it at a small positive speed, m.
    pub approach_margin: f64,
    /// Deceleration the closing-speed profile plans to stop with, m/s^2.
    pub braking_accel: f64,
    /// Velocity tracking gain of the closing regulator, 1/s.
    pub velocity_gain: f64,
    /// Hold-mode position gain, 1/s^2.
    pub hold_kp: f64,
    /// Hold-mode velocity gain, 1/s.
    pub hold_kd: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            navigation_constant: 1.0,
            safe_distance: 2.0,
            engage_tolerance: 0.05,
            release_distance: 2.2,
            target_height: 1.8,
            max_tilt: 30f64.to_radians(),
            r_min: 0.1,
            approach_speed: 3.0,
            approach_gain: 2.0,
            approach_margin: 0.05,
            braking_accel: 1.5,
            velocity_gain: 8.0,
            hold_kp: 2.0,
            hold_kd: 3.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let bad = |m| Err(GuidanceError::InvalidConfig(m));
        if !(self.safe_distance > 0.0) {
            return bad("safe_distance must be positive");
        }
        if !(self.engage_tolerance >= 0.0 && self.release_distance > self.safe_distance + self.engage_tolerance) {
            return bad("release_distance must exceed safe_distance + engage_tolerance");
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return bad("max_tilt must lie in (0, pi/2)");
        }
        if !(self.r_min > 0.0) {
            return bad("r_min must be positive");
        }
        if [
            self.navigation_constant,
            self.approach_speed,
            self.approach_gain,
            self.approach_margin,
            self.braking_accel,
            self.velocity_gain,
            self.hold_kp,
            self.hold_kd,
        ]
        .iter()
        .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("gains must be finite and non-negative");
        }
        if !self.target_height.is_finite() {
            return bad("target_height must be finite");
        }
        Ok(())
    }
}

/// Convert an earth-frame horizontal acceleration into roll and pitch
/// references by inverting the hover force balance in the heading frame,
/// clamped to `max_tilt`.
pub fn acceleration_to_references(
    accel: &Vector3<f64>,
    yaw_ref: f64,
    target_height: f64,
    gravity: f64,
    max_tilt: f64,
) -> ControllerCommand {
    let (s, c) = yaw_ref.sin_cos();
    let ax = c * accel.x + s * accel.y;
    let ay = -s * accel.x + c * accel.y;
    ControllerCommand {
        roll: (ay / gravity).atan().clamp(-max_tilt, max_tilt),
        pitch: (-ax / gravity).atan().clamp(-max_tilt, max_tilt),
        yaw: yaw_ref,
        altitude: target_height,
    }
}

/// Commanded closing speed at horizontal range `d`: the smallest of the
/// ceiling, a linear tail and the speed that can still be shed at
/// `braking_accel` before the aim point.
pub fn closing_speed(cfg: &GuidanceConfig, d: f64) -> f64 {
    let e = (d - cfg.safe_distance + cfg.approach_margin).max(0.0);
    cfg.approach_speed
        .min(cfg.approach_gain * e)
        .min((2.0 * cfg.braking_accel * e).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GuidanceMode {
    Approach,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceCommand {
    pub acceleration: Vector3<f64>,
    pub references: ControllerCommand,
    pub mode: GuidanceMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HoldPoint {
    offset: Vector2<f64>,
    yaw: f64,
}

/// Guidance state machine.
#[derive(Debug, Clone)]
pub struct Guidance {
    config: GuidanceConfig,
    gravity: f64,
    hold: Option<HoldPoint>,
    last_yaw: f64,
}

impl Guidance {
    pub fn new(config: GuidanceConfig, gravity: f64, initial_yaw: f64) -> Result<Self, GuidanceError> {
        config.validate()?;
        Ok(Self {
            config,
            gravity,
            hold: None,
            last_yaw: initial_yaw,
        })
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    pub fn mode(&self) -> GuidanceMode {
        if self.hold.is_some() {
            GuidanceMode::Hold
        } else {
            GuidanceMode::Approach
        }
    }

    /// Yaw reference held in hold mode, if engaged.
    pub fn hold_yaw(&self) -> Option<f64> {
        self.hold.map(|h| h.yaw)
    }

    /// Advance the mode logic and produce references from the estimated
    /// relative geometry.
    pub fn command(&mut self, rel: &RelativeKinematics) -> Result<GuidanceCommand, GuidanceError> {
        let cfg = &self.config;
        let horizontal = Vector2::new(rel.range.x, rel.range.y);
        let d = horizontal.norm();
        match self.hold {
            None if d <= cfg.safe_distance + cfg.engage_tolerance => {
                self.hold = Some(HoldPoint {
                    offset: horizontal,
                    yaw: self.last_yaw,
                });
            }
            Some(_) if d > cfg.release_distance => self.hold = None,
            _ => {}
        }

        let v_rel = rel.relative_velocity();
        let v_h = Vector2::new(v_rel.x, v_rel.y);
        let (accel, yaw) = match self.hold {
            Some(h) => {
                let a = cfg.hold_kp * (horizontal - h.offset) - cfg.hold_kd * v_h;
                (Vector3::new(a.x, a.y, 0.0), h.yaw)
            }
            None => {
                let ppn = ppn_acceleration(rel, cfg.navigation_constant, cfg.r_min)?;
                let los = horizontal / d.max(cfg.r_min);
                let closing = closing_speed(cfg, d);
                let a = cfg.velocity_gain * (closing * los - v_h);
                let yaw = if d >= cfg.r_min {
                    rel.range.y.atan2(rel.range.x)
                } else {
                    self.last_yaw
                };
                (Vector3::new(ppn.x + a.x, ppn.y + a.y, 0.0), yaw)
            }
        };
        self.last_yaw = yaw;
        Ok(GuidanceCommand {
            acceleration: accel,
            references: acceleration_to_references(&accel, yaw, cfg.target_height, self.gravity, cfg.max_tilt),
            mode: self.mode(),
        })
    }
}
