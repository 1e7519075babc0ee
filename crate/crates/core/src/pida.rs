//! Discrete PIDA controller with first-order derivative filtering.
//!
//! Each channel realizes
//!
//! ```text
//! U(s) = [ kp + ki/s + kd * sL(s) + ka * (sL(s))^2 ] E(s),   L(s) = 1 / (1 + Tf s)
//! ```
//!
//! with the integrator and both filtered differentiators discretized by the
//! bilinear (Tustin) transform. The acceleration term is the cascade of two
//! identical filtered differentiators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlVector, QuadParams};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PidaError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("time step {dt} is not smaller than filter constant {tf}")]
    FilterUnresolved { dt: f64, tf: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Roll,
    Pitch,
    Yaw,
    Altitude,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Roll, Channel::Pitch, Channel::Yaw, Channel::Altitude];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Roll => "roll",
            Channel::Pitch => "pitch",
            Channel::Yaw => "yaw",
            Channel::Altitude => "altitude",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel `{s}`"))
    }
}

/// One value per control channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels<T> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
    pub altitude: T,
}

impl<T> Channels<T> {
    pub fn get(&self, channel: Channel) -> &T {
        match channel {
            Channel::Roll => &self.roll,
            Channel::Pitch => &self.pitch,
            Channel::Yaw => &self.yaw,
            Channel::Altitude => &self.altitude,
        }
    }

    pub fn get_mut(&mut self, channel: Channel) -> &mut T {
        match channel {
            Channel::Roll => &mut self.roll,
            Channel::Pitch => &mut self.pitch,
            Channel::Yaw => &mut self.yaw,
            Channel::Altitude => &mut self.altitude,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        Self {
            roll: f(Channel::Roll),
            pitch: f(Channel::Pitch),
            yaw: f(Channel::Yaw),
            altitude: f(Channel::Altitude),
        }
    }
}

/// Channel references (attitude in rad, altitude in m, positive up).
pub type ControllerCommand = Channels<f64>;

/// Channel measurements in the same units as [`ControllerCommand`].
pub type MeasuredOutputs = Channels<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidaGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub ka: f64,
    /// Derivative filter time constant, s.
    pub tf: f64,
}

impl PidaGains {
    pub fn new(kp: f64, ki: f64, kd: f64, ka: f64, tf: f64) -> Self {
        Self { kp, ki, kd, ka, tf }
    }

    pub fn proportional(kp: f64) -> Self {
        Self::new(kp, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), PidaError> {
        if [self.kp, self.ki, self.kd, self.ka, self.tf].iter().any(|v| !v.is_finite()) {
            return Err(PidaError::InvalidGains("gains must be finite"));
        }
        if self.tf <= 0.0 {
            return Err(PidaError::InvalidGains("filter constant must be positive"));
        }
        if self.ki < 0.0 {
            return Err(PidaError::InvalidGains("integral gain must be non-negative"));
        }
        Ok(())
    }

    /// Layout used by the tuner: `[kp, ki, kd, ka, tf]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.kp, self.ki, self.kd, self.ka, self.tf]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }
}

pub type GainSet = Channels<PidaGains>;

impl GainSet {
    /// Integral, derivative, acceleration and filter values of the published
    /// tuning, with a proportional gain per channel chosen so the hover
    /// closed loop is stable. The published set omits kp.
    pub fn reference() -> Self {
        Channels {
            roll: PidaGains::new(2.0, 0.1436, 6.5097, 0.5772, 0.0437),
            pitch: PidaGains::new(20.0, 3.6869, 21.2743, 0.3429, 0.0331),
            yaw: PidaGains::new(2.0, 0.0437, 29.9872, 23.5238, 0.0117),
            altitude: PidaGains::new(5.0, 1.00, 11.4676, 7.5114, 0.3752),
        }
    }

    /// Gains the built-in scenarios ship with. Roll and altitude come from
    /// SDSA runs on the four-channel step scenario. Pitch is placed by hand
    /// (second order, wn = 11 rad/s, zeta = 0.8): a slower pitch keeps the yaw
    /// rate from leaking into roll through the Euler kinematics while the
    /// aircraft is still level. Yaw keeps the SDSA kd but sets kp near
    /// 2*sqrt(kd*ki), which critically damps the slow pole pair that the step
    /// response hides behind a zero.
    pub fn tuned() -> Self {
        Channels {
            roll: PidaGains::new(6.739486807193522, 0.0, 2.925607921819008, 0.029253479762896273, 0.005),
            pitch: PidaGains::new(3.751, 1.1253, 0.5456, 0.0, 0.005),
            yaw: PidaGains::new(6.7, 3.0, 3.73, 0.0, 0.005),
            altitude: PidaGains::new(29.179141797164963, 22.985383794241933, 1.941057694042067, 3.72320181363847, 0.3976324236397788),
        }
    }

    pub fn validate(&self) -> Result<(), PidaError> {
        Channel::ALL.iter().try_for_each(|c| self.get(*c).validate())
    }
}

/// Dynamic state of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelState {
    pub integrator: f64,
    /// First filtered derivative of the error.
    pub filter_1: f64,
    /// Filtered derivative of `filter_1`.
    pub filter_2: f64,
    pub prev_error: f64,
    primed: bool,
}

impl ChannelState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Bilinear-transform coefficients `(a, b)` of `y[k] = a*y[k-1] + b*(x[k] - x[k-1])`
/// realizing `s / (1 + tf s)`.
fn tustin_differentiator(tf: f64, dt: f64) -> (f64, f64) {
    let den = 2.0 * tf + dt;
    ((2.0 * tf - dt) / den, 2.0 / den)
}

/// Advance one channel by `dt` and return its output.
///
/// On the first call after construction or [`ChannelState::reset`] the
/// previous error is taken equal to the current one, so a nonzero initial
/// error produces no derivative kick.
pub fn update(
    gains: &PidaGains,
    state: &mut ChannelState,
    reference: f64,
    measurement: f64,
    dt: f64,
) -> Result<f64, PidaError> {
    update_error(gains, state, reference - measurement, dt)
}

pub fn update_error(
    gains: &PidaGains,
    state: &mut ChannelState,
    error: f64,
    dt: f64,
) -> Result<f64, PidaError> {
    if !(dt > 0.0) {
        return Err(PidaError::NonPositiveDt(dt));
    }
    if dt >= gains.tf {
        return Err(PidaError::FilterUnresolved { dt, tf: gains.tf });
    }
    let (a, b) = tustin_differentiator(gains.tf, dt);
    if state.primed {
        state.integrator += 0.5 * dt * (error + state.prev_error);
    } else {
        state.prev_error = error;
        state.primed = true;
    }
    let f1 = a * state.filter_1 + b * (error - state.prev_error);
    let f2 = a * state.filter_2 + b * (f1 - state.filter_1);
    state.filter_1 = f1;
    state.filter_2 = f2;
    state.prev_error = error;
    Ok(gains.kp * error + gains.ki * state.integrator + gains.kd * f1 + gains.ka * f2)
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Four-channel controller producing roll/pitch/yaw torques and total thrust.
///
/// The altitude channel output is added to the weight feed-forward `m g`,
/// and the thrust is clamped at zero. While the thrust is clamped and the
/// altitude error keeps pushing it down, the altitude integrator is frozen.
#[derive(Debug, Clone)]
pub struct PidaController {
    gains: GainSet,
    states: Channels<ChannelState>,
    hover_thrust: f64,
}

impl PidaController {
    pub fn new(gains: GainSet, params: &QuadParams) -> Result<Self, PidaError> {
        gains.validate()?;
        Ok(Self {
            gains,
            states: Channels::default(),
            hover_thrust: params.hover_thrust(),
        })
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn states(&self) -> &Channels<ChannelState> {
        &self.states
    }

    pub fn reset(&mut self) {
        self.states = Channels::default();
    }

    pub fn update(
        &mut self,
        command: &ControllerCommand,
        measured: &MeasuredOutputs,
        dt: f64,
    ) -> Result<ControlVector, PidaError> {
        let g = &self.gains;
        let s = &mut self.states;
        let u_phi = update(&g.roll, &mut s.roll, command.roll, measured.roll, dt)?;
        let u_theta = update(&g.pitch, &mut s.pitch, command.pitch, measured.pitch, dt)?;
        let yaw_error = wrap_angle(command.yaw - measured.yaw);
        let u_psi = update_error(&g.yaw, &mut s.yaw, yaw_error, dt)?;

        let alt_error = command.altitude - measured.altitude;
        let held_integrator = s.altitude.integrator;
        let u_alt = update_error(&g.altitude, &mut s.altitude, alt_error, dt)?;
        let mut u_thrust = self.hover_thrust + u_alt;
        if u_thrust < 0.0 {
            u_thrust = 0.0;
            if alt_error < 0.0 {
                s.altitude.integrator = held_integrator;
            }
        }
        Ok(ControlVector::new(u_phi, u_theta, u_psi, u_thrust))
    }
}
