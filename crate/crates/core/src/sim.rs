//! Closed-loop simulation: step-response and target-approach runs,
//! trajectory logging and run reports.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, controls_to_forces, gyroscopic_disturbance, rotor_speeds, ControlVector, Disturbance,
    DynamicsError, QuadParams, RigidBodyState,
};
use crate::guidance::{Guidance, GuidanceError, GuidanceMode, RelativeKinematics};
use crate::linear::{certify_closed_loop, linearize_hover, LinearError, StabilityReport};
use crate::metrics::{step_response_metrics, MetricsError, StepMetrics, StepSpec};
use crate::perception::{observe, relative_position};
use crate::pida::{Channel, Channels, ControllerCommand, MeasuredOutputs, PidaController, PidaError};
use crate::scenario::{ConfigError, MissionConfig, Scenario, StepCommand};

/// Attitude settling band floor, rad; used only for zero-size steps.
pub const MIN_ATTITUDE_BAND: f64 = 1e-3;
/// Altitude settling band floor, m; used only for zero-size steps.
pub const MIN_ALTITUDE_BAND: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation diverged at t = {time} s: {source}")]
    Diverged { time: f64, source: DynamicsError },
    #[error("controller: {0}")]
    Controller(#[from] PidaError),
    #[error("guidance at t = {time} s: {source}")]
    Guidance { time: f64, source: GuidanceError },
    #[error("target not observed for more than {timeout} s (at t = {time} s)")]
    TargetNeverAcquired { time: f64, timeout: f64 },
    #[error("scenario has no [{0}] section")]
    MissingSection(&'static str),
    #[error("I/O on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed trajectory: {0}")]
    Trajectory(String),
}

pub const CSV_HEADER: [&str; 22] = [
    "t", "x_E", "y_E", "z_E", "phi", "theta", "psi", "p", "q", "r", "u", "v", "w", "u_phi",
    "u_theta", "u_psi", "u_T", "ref_phi", "ref_theta", "ref_psi", "ref_alt", "safe_distance",
];

/// One logged sample. `safe_distance` is the horizontal range to the target
/// (NaN when there is none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub control: ControlVector,
    pub reference: ControllerCommand,
    pub safe_distance: f64,
}

impl TrajectoryRow {
    pub fn to_array(&self) -> [f64; 22] {
        let s = &self.state;
        let u = &self.control;
        let r = &self.reference;
        [
            self.t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.euler.x,
            s.euler.y,
            s.euler.z,
            s.body_rates.x,
            s.body_rates.y,
            s.body_rates.z,
            s.body_velocity.x,
            s.body_velocity.y,
            s.body_velocity.z,
            u.u_phi,
            u.u_theta,
            u.u_psi,
            u.u_thrust,
            r.roll,
            r.pitch,
            r.yaw,
            r.altitude,
            self.safe_distance,
        ]
    }

    pub fn from_array(a: &[f64; 22]) -> Self {
        Self {
            t: a[0],
            state: RigidBodyState {
                position: Vector3::new(a[1], a[2], a[3]),
                euler: Vector3::new(a[4], a[5], a[6]),
                body_rates: Vector3::new(a[7], a[8], a[9]),
                body_velocity: Vector3::new(a[10], a[11], a[12]),
            },
            control: ControlVector::new(a[13], a[14], a[15], a[16]),
            reference: ControllerCommand {
                roll: a[17],
                pitch: a[18],
                yaw: a[19],
                altitude: a[20],
            },
            safe_distance: a[21],
        }
    }

    /// Value of a channel's output in the controller's units.
    pub fn output(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Roll => self.state.euler.x,
            Channel::Pitch => self.state.euler.y,
            Channel::Yaw => self.state.euler.z,
            Channel::Altitude => self.state.altitude(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn channel(&self, channel: Channel) -> Vec<f64> {
        self.rows.iter().map(|r| r.output(channel)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for row in &self.rows {
            // Debug formatting is the shortest representation that parses
            // back to the same f64.
            wr.write_record(row.to_array().iter().map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, SimError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| SimError::Trajectory(e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(SimError::Trajectory(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| SimError::Trajectory(e.to_string()))?;
            let mut a = [0.0; 22];
            if rec.len() != 22 {
                return Err(SimError::Trajectory(format!("row has {} fields", rec.len())));
            }
            for (slot, field) in a.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse()
                    .map_err(|_| SimError::Trajectory(format!("bad number {field:?}")))?;
            }
            rows.push(TrajectoryRow::from_array(&a));
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        let io = |e: &dyn std::fmt::Display| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let f = std::fs::File::create(path).map_err(|e| io(&e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| io(&e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Metrics of one channel, or why they could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOutcome {
    Settled(StepMetrics),
    NotSettled { band: f64, final_error: f64 },
    Invalid(String),
}

impl ChannelOutcome {
    pub fn metrics(&self) -> Option<&StepMetrics> {
        match self {
            Self::Settled(m) => Some(m),
            _ => None,
        }
    }
}

impl From<Result<StepMetrics, MetricsError>> for ChannelOutcome {
    fn from(r: Result<StepMetrics, MetricsError>) -> Self {
        match r {
            Ok(m) => Self::Settled(m),
            Err(MetricsError::NotSettled { band, final_error }) => Self::NotSettled { band, final_error },
            Err(e) => Self::Invalid(e.to_string()),
        }
    }
}

/// Settling specification of each channel of a step run.
pub fn step_specs(scenario: &Scenario, cmd: &StepCommand) -> Channels<StepSpec> {
    let init = scenario.initial.to_state();
    let t = cmd.step_time;
    Channels {
        roll: StepSpec::new(t, init.euler.x, cmd.roll_deg.to_radians(), MIN_ATTITUDE_BAND),
        pitch: StepSpec::new(t, init.euler.y, cmd.pitch_deg.to_radians(), MIN_ATTITUDE_BAND),
        yaw: StepSpec::new(t, init.euler.z, cmd.yaw_deg.to_radians(), MIN_ATTITUDE_BAND),
        altitude: StepSpec::new(t, init.altitude(), cmd.altitude, MIN_ALTITUDE_BAND),
    }
}

/// Step metrics of every channel, computed from the logged trajectory.
pub fn step_metrics_from(trajectory: &Trajectory, specs: &Channels<StepSpec>) -> Channels<ChannelOutcome> {
    let t = trajectory.times();
    Channels::from_fn(|c| step_response_metrics(&t, &trajectory.channel(c), specs.get(c)).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionMetrics {
    /// First time hold mode engaged, s.
    pub time_to_arrive: Option<f64>,
    pub final_height: f64,
    /// Horizontal range extremes from hold engagement to the end, m.
    pub min_hold_distance: Option<f64>,
    pub max_hold_distance: Option<f64>,
    /// Whether hold mode released after first engaging.
    pub hold_released: bool,
    /// Yaw reference frozen at hold engagement, rad.
    pub hold_yaw: Option<f64>,
    /// Largest |roll|, |pitch| and |yaw - hold yaw| over the last second, rad.
    pub final_attitude_error: Option<[f64; 3]>,
    /// Height extremes over the last second, m.
    pub final_height_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<Channels<ChannelOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mission: Option<MissionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_file: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRun {
    pub trajectory: Trajectory,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionRun {
    pub trajectory: Trajectory,
    pub report: RunReport,
    /// Guidance mode at every logged sample.
    pub modes: Vec<GuidanceMode>,
}

/// Measurement and disturbance noise source.
struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Noisy channel outputs; four draws per call.
    fn measure(&mut self, state: &RigidBodyState, scenario: &Scenario) -> MeasuredOutputs {
        let sa = scenario.noise.attitude_sigma;
        let sh = scenario.noise.altitude_sigma;
        MeasuredOutputs {
            roll: state.euler.x + sa * self.normal(),
            pitch: state.euler.y + sa * self.normal(),
            yaw: state.euler.z + sa * self.normal(),
            altitude: state.altitude() + sh * self.normal(),
        }
    }
}

/// Gyroscopic torque from the rotor speeds implied by `u`, plus the roll
/// disturbance when active. Draws one sample per call.
fn disturbance(
    state: &RigidBodyState,
    u: &ControlVector,
    t: f64,
    scenario: &Scenario,
    noise: &mut NoiseSource,
) -> Disturbance {
    let params = &scenario.quad;
    let omega = rotor_speeds(&controls_to_forces(u, params).forces, params);
    let mut d = gyroscopic_disturbance(&state.body_rates, &omega, params);
    let w = noise.normal();
    if let Some(rd) = scenario.noise.roll_disturbance {
        if t >= rd.start {
            d.d_phi += rd.sigma * w;
        }
    }
    d
}

fn integrate(
    state: &RigidBodyState,
    u: &ControlVector,
    d: &Disturbance,
    params: &QuadParams,
    dt: f64,
    t: f64,
) -> Result<RigidBodyState, SimError> {
    dynamics::step(state, u, d, params, dt).map_err(|source| SimError::Diverged { time: t, source })
}

/// Simulate the step scenario and return the trajectory only.
pub fn simulate_step(scenario: &Scenario) -> Result<Trajectory, SimError> {
    let cmd = scenario.step.ok_or(SimError::MissingSection("step"))?;
    scenario.validate()?;
    let params = &scenario.quad;
    let dt = scenario.dt;
    let init = scenario.initial.to_state();
    let before = ControllerCommand {
        roll: init.euler.x,
        pitch: init.euler.y,
        yaw: init.euler.z,
        altitude: init.altitude(),
    };
    let after = ControllerCommand {
        roll: cmd.roll_deg.to_radians(),
        pitch: cmd.pitch_deg.to_radians(),
        yaw: cmd.yaw_deg.to_radians(),
        altitude: cmd.altitude,
    };
    let mut controller = PidaController::new(scenario.gains, params)?;
    let mut noise = NoiseSource::new(scenario.seed);
    let mut state = init;
    let n = scenario.n_steps();
    let mut rows = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let reference = if t >= cmd.step_time { after } else { before };
        let measured = noise.measure(&state, scenario);
        let u = if cmd.closed_loop {
            controller.update(&reference, &measured, dt)?
        } else {
            ControlVector::hover(params)
        };
        rows.push(TrajectoryRow {
            t,
            state,
            control: u,
            reference,
            safe_distance: f64::NAN,
        });
        if k == n {
            break;
        }
        let d = disturbance(&state, &u, t, scenario, &mut noise);
        state = integrate(&state, &u, &d, params, dt, t)?;
    }
    Ok(Trajectory { rows })
}

/// Step scenario with per-channel metrics and a hover stability certificate.
pub fn run_step_response(scenario: &Scenario) -> Result<StepRun, SimError> {
    let cmd = scenario.step.ok_or(SimError::MissingSection("step"))?;
    let trajectory = simulate_step(scenario)?;
    let step = step_metrics_from(&trajectory, &step_specs(scenario, &cmd));
    let stability = certify(scenario).ok();
    Ok(StepRun {
        report: RunReport {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            step: Some(step),
            mission: None,
            stability,
            trajectory_file: None,
        },
        trajectory,
    })
}

/// Linearize at hover and certify the closed loop with the scenario gains.
pub fn certify(scenario: &Scenario) -> Result<StabilityReport, LinearError> {
    certify_closed_loop(&linearize_hover(&scenario.quad)?, &scenario.gains)
}

fn horizontal_range(state: &RigidBodyState, target: &Vector3<f64>) -> f64 {
    let d = target - state.position;
    d.x.hypot(d.y)
}

/// Target-approach mission: perception, guidance, control and dynamics
/// in one loop.
pub fn simulate_mission(scenario: &Scenario) -> Result<(Trajectory, Vec<GuidanceMode>), SimError> {
    let mission: MissionConfig = scenario.mission.ok_or(SimError::MissingSection("mission"))?;
    scenario.validate()?;
    let params = &scenario.quad;
    let dt = scenario.dt;
    let target = Vector3::from(mission.target);
    let observed = mission.observed_point();
    let mut state = scenario.initial.to_state();
    let mut controller = PidaController::new(scenario.gains, params)?;
    let mut guidance = Guidance::new(mission.guidance, params.gravity, state.euler.z)
        .map_err(|source| SimError::Guidance { time: 0.0, source })?;
    let mut noise = NoiseSource::new(scenario.seed);
    // Perception has its own stream so that changing pixel noise leaves the
    // measurement noise untouched.
    let mut vision_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed_0f_5e11);

    let n = scenario.n_steps();
    let frame_dt = dt * mission.perception_every as f64;
    let mut rows = Vec::with_capacity(n + 1);
    let mut modes = Vec::with_capacity(n + 1);
    let mut estimate: Option<Vector3<f64>> = None;
    let mut last_valid = 0.0;
    let mut reference = ControllerCommand {
        roll: 0.0,
        pitch: 0.0,
        yaw: state.euler.z,
        altitude: mission.guidance.target_height,
    };
    for k in 0..=n {
        let t = k as f64 * dt;
        let measured = noise.measure(&state, scenario);
        if k % mission.perception_every == 0 {
            let mut seen = state;
            seen.euler = Vector3::new(measured.roll, measured.pitch, measured.yaw);
            let fresh = observe(&observed, &state, &mission.camera, &mission.pixel_noise, &mut vision_rng)
                .ok()
                .and_then(|obs| relative_position(&obs, &seen, &mission.camera).ok());
            let velocity = state.earth_velocity();
            match (fresh, estimate) {
                (Some(r), _) => {
                    estimate = Some(r);
                    last_valid = t;
                }
                (None, Some(r)) => estimate = Some(r - velocity * frame_dt),
                (None, None) => {}
            }
            if t - last_valid > mission.acquisition_timeout {
                return Err(SimError::TargetNeverAcquired {
                    time: t,
                    timeout: mission.acquisition_timeout,
                });
            }
            if let Some(range) = estimate {
                let cmd = guidance
                    .command(&RelativeKinematics {
                        range,
                        pursuer_velocity: velocity,
                        target_velocity: Vector3::zeros(),
                    })
                    .map_err(|source| SimError::Guidance { time: t, source })?;
                reference = cmd.references;
            }
        }
        let u = controller.update(&reference, &measured, dt)?;
        rows.push(TrajectoryRow {
            t,
            state,
            control: u,
            reference,
            safe_distance: horizontal_range(&state, &target),
        });
        modes.push(guidance.mode());
        if k == n {
            break;
        }
        let d = disturbance(&state, &u, t, scenario, &mut noise);
        state = integrate(&state, &u, &d, params, dt, t)?;
    }
    Ok((Trajectory { rows }, modes))
}

/// Mission figures of merit from a logged trajectory and its mode trace.
pub fn mission_metrics(trajectory: &Trajectory, modes: &[GuidanceMode]) -> MissionMetrics {
    let rows = &trajectory.rows;
    let first_hold = modes.iter().position(|m| *m == GuidanceMode::Hold);
    let last = rows.last().expect("non-empty trajectory");
    let window_start = last.t - 1.0;
    let tail: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.t >= window_start - 1e-9).collect();
    let heights = tail.iter().map(|r| r.state.altitude());
    let final_height_range = [
        heights.clone().fold(f64::INFINITY, f64::min),
        heights.fold(f64::NEG_INFINITY, f64::max),
    ];
    let mut m = MissionMetrics {
        time_to_arrive: None,
        final_height: last.state.altitude(),
        min_hold_distance: None,
        max_hold_distance: None,
        hold_released: false,
        hold_yaw: None,
        final_attitude_error: None,
        final_height_range,
    };
    if let Some(i) = first_hold {
        m.time_to_arrive = Some(rows[i].t);
        let after = &rows[i..];
        m.min_hold_distance = Some(after.iter().map(|r| r.safe_distance).fold(f64::INFINITY, f64::min));
        m.max_hold_distance = Some(after.iter().map(|r| r.safe_distance).fold(f64::NEG_INFINITY, f64::max));
        m.hold_released = modes[i..].iter().any(|m| *m != GuidanceMode::Hold);
        let yaw = rows[i..].iter().find(|r| r.t > rows[i].t).map_or(rows[i].reference.yaw, |r| r.reference.yaw);
        m.hold_yaw = Some(yaw);
        let mut err = [0.0f64; 3];
        for r in &tail {
            err[0] = err[0].max(r.state.euler.x.abs());
            err[1] = err[1].max(r.state.euler.y.abs());
            err[2] = err[2].max(crate::pida::wrap_angle(r.state.euler.z - yaw).abs());
        }
        m.final_attitude_error = Some(err);
    }
    m
}

pub fn run_mission(scenario: &Scenario) -> Result<MissionRun, SimError> {
    let (trajectory, modes) = simulate_mission(scenario)?;
    let mission = mission_metrics(&trajectory, &modes);
    Ok(MissionRun {
        report: RunReport {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            step: None,
            mission: Some(mission),
            stability: certify(scenario).ok(),
            trajectory_file: None,
        },
        trajectory,
        modes,
    })
}
