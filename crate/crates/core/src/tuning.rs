//! Controller tuning: the step-response cost and the per-channel SDSA
//! search.

use serde::{Deserialize, Serialize};

use crate::metrics::{step_response_metrics, MetricsError, StepMetrics, StepSpec};
use crate::pida::{Channel, Channels, GainSet, PidaGains};
use crate::scenario::Scenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sdsa::{
    initial_simplex, minimize, minimize_from_simplexes, simplex_around, Bounds, HistoryEntry, SdsaConfig, SdsaError,
};
use crate::sim::{simulate_step, step_specs, SimError};

/// Cost floor of a response that never settles.
pub const NOT_SETTLED_PENALTY: f64 = 1e6;
/// Cost of a simulation that diverges or cannot run.
pub const FAILURE_PENALTY: f64 = 1e9;

/// Desired step-response shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningObjective {
    /// Percent.
    pub overshoot: f64,
    /// s
    pub settling_time: f64,
}

impl Default for TuningObjective {
    fn default() -> Self {
        Self {
            overshoot: 5.0,
            settling_time: 2.0,
        }
    }
}

/// Sum of squared deviations of the measured overshoot and settling time
/// from the desired ones.
pub fn cost_from_metrics(m: &StepMetrics, objective: &TuningObjective) -> f64 {
    (objective.overshoot - m.overshoot_pct).powi(2) + (objective.settling_time - m.settling_time).powi(2)
}

/// Fraction of the samples at or after the step that lie outside the
/// settling band.
pub fn out_of_band_fraction(times: &[f64], values: &[f64], spec: &StepSpec) -> f64 {
    let after: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= spec.step_time - 1e-12)
        .map(|(_, y)| *y)
        .collect();
    if after.is_empty() {
        return 1.0;
    }
    let out = after.iter().filter(|y| !((*y - spec.reference).abs() <= spec.band)).count();
    out as f64 / after.len() as f64
}

/// Cost of one channel's response. A response that never settles costs
/// `NOT_SETTLED_PENALTY * (1 + f)`, with `f` the out-of-band fraction, so
/// the search still sees a slope towards settling.
pub fn channel_cost(times: &[f64], values: &[f64], spec: &StepSpec, objective: &TuningObjective) -> f64 {
    match step_response_metrics(times, values, spec) {
        Ok(m) => cost_from_metrics(&m, objective),
        Err(MetricsError::NotSettled { .. }) => NOT_SETTLED_PENALTY * (1.0 + out_of_band_fraction(times, values, spec)),
        Err(_) => FAILURE_PENALTY,
    }
}

/// Simulate the step scenario with `x = [kp, ki, kd, ka, tf]` on `channel`
/// and score that channel's response.
pub fn tuning_cost(x: &[f64], channel: Channel, scenario: &Scenario) -> f64 {
    let mut sc = scenario.clone();
    *sc.gains.get_mut(channel) = PidaGains::from_slice(x);
    sc.duration = scenario.tuning.duration;
    let objective = TuningObjective {
        overshoot: scenario.tuning.overshoot,
        settling_time: scenario.tuning.settling_time,
    };
    let Some(cmd) = sc.step else {
        return FAILURE_PENALTY;
    };
    match simulate_step(&sc) {
        Ok(traj) => {
            let spec = *step_specs(&sc, &cmd).get(channel);
            channel_cost(&traj.times(), &traj.channel(channel), &spec, &objective)
        }
        Err(_) => FAILURE_PENALTY,
    }
}

pub fn tuning_bounds(scenario: &Scenario) -> Result<Bounds, SdsaError> {
    Bounds::new(scenario.tuning.lower.to_vec(), scenario.tuning.upper.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTuning {
    pub channel: Channel,
    pub gains: PidaGains,
    pub cost: f64,
    pub evaluations: usize,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub gains: GainSet,
    pub channels: Vec<ChannelTuning>,
}

/// Seed offset between the independent starts of one channel.
const START_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Tune one channel, holding the other channels at the scenario gains.
///
/// Runs `scenario.tuning.starts` independent searches (start `k` uses seed
/// `config.seed + k * START_SEED_STRIDE`) and keeps the best; the history is
/// their concatenation with a running best. The first search anchors one of
/// its simplexes at the channel's current gains, so tuning never returns a
/// cost above the incumbent's.
pub fn tune_channel(scenario: &Scenario, channel: Channel, config: &SdsaConfig) -> Result<ChannelTuning, SimError> {
    scenario.validate()?;
    if scenario.step.is_none() {
        return Err(SimError::MissingSection("step"));
    }
    let invalid = |e: SdsaError| crate::scenario::ConfigError::Invalid(e.to_string());
    let bounds = tuning_bounds(scenario).map_err(invalid)?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut evaluations = 0;
    let mut iterations = 0;
    for k in 0..scenario.tuning.starts {
        let cfg = SdsaConfig {
            seed: config.seed.wrapping_add((k as u64).wrapping_mul(START_SEED_STRIDE)),
            ..config.clone()
        };
        let cost = |x: &[f64]| tuning_cost(x, channel, scenario);
        let r = if k == 0 {
            let mut incumbent = scenario.gains.get(channel).to_array().to_vec();
            bounds.clamp(&mut incumbent);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut simplexes = vec![simplex_around(&incumbent, cfg.a_max, &bounds)];
            simplexes.extend((1..cfg.n_simplexes).map(|_| initial_simplex(&bounds, cfg.a_max, &mut rng)));
            minimize_from_simplexes(cost, &bounds, &cfg, simplexes)
        } else {
            minimize(cost, &bounds, &cfg)
        }
        .map_err(invalid)?;
        let floor = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        history.extend(r.history.iter().map(|h| HistoryEntry {
            iteration: iterations + h.iteration,
            evaluations: evaluations + h.evaluations,
            best_value: h.best_value.min(floor),
        }));
        iterations += r.history.last().map_or(0, |h| h.iteration + 1);
        evaluations += r.evaluations;
        if r.best_value < floor {
            best = Some((r.best_point, r.best_value));
        }
    }
    let (point, cost) = best.expect("validated scenario has at least one start");
    Ok(ChannelTuning {
        channel,
        gains: PidaGains::from_slice(&point),
        cost,
        evaluations,
        history,
    })
}

/// Tune the listed channels independently (each against the scenario's
/// gains for the others) and merge the results into the scenario gains.
/// Channel `i` in the list uses seed `config.seed + i`.
pub fn tune(scenario: &Scenario, channels: &[Channel]) -> Result<TuningResult, SimError> {
    use rayon::prelude::*;
    let results = channels
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = SdsaConfig {
                seed: scenario.sdsa.seed.wrapping_add(i as u64),
                ..scenario.sdsa.clone()
            };
            tune_channel(scenario, *c, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut gains = scenario.gains;
    for r in &results {
        *gains.get_mut(r.channel) = r.gains;
    }
    Ok(TuningResult { gains, channels: results })
}

impl TuningResult {
    pub fn channel(&self, c: Channel) -> Option<&ChannelTuning> {
        self.channels.iter().find(|t| t.channel == c)
    }

    pub fn costs(&self) -> Channels<Option<f64>> {
        Channels::from_fn(|c| self.channel(c).map(|t| t.cost))
    }
}
