//! Step-response figures of merit: percent overshoot, 2% settling time and
//! steady-state error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Settling band half-width as a fraction of the step size.
pub const SETTLING_BAND: f64 = 0.02;

/// Minimum record length for a response to be judged.
pub const MIN_SPAN: f64 = 5.0;

/// A response must remain in band for at least this long before the end of
/// the record to count as settled.
pub const MIN_SETTLED_DWELL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("signal has not settled within the +/-{band} band")]
    NotSettled { band: f64, final_error: f64 },
    #[error("trajectory spans {span} s, need at least {MIN_SPAN} s")]
    TrajectoryTooShort { span: f64 },
    #[error("time and value series differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no samples at or after the step time {0}")]
    NoSamplesAfterStep(f64),
}

/// Description of the applied step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub step_time: f64,
    pub initial: f64,
    pub reference: f64,
    /// Half-width of the settling band in signal units.
    pub band: f64,
}

impl StepSpec {
    /// Band of 2% of the step size; `min_band` applies to zero steps.
    pub fn new(step_time: f64, initial: f64, reference: f64, min_band: f64) -> Self {
        let band = (SETTLING_BAND * (reference - initial).abs()).max(min_band);
        Self {
            step_time,
            initial,
            reference,
            band,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.reference - self.initial
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Peak excursion past the reference as a percentage of the step size.
    pub overshoot_pct: f64,
    /// Time after the step at which the signal last enters the band, s.
    pub settling_time: f64,
    /// Reference minus the final sample.
    pub steady_state_error: f64,
}

pub fn step_response_metrics(
    times: &[f64],
    values: &[f64],
    spec: &StepSpec,
) -> Result<StepMetrics, MetricsError> {
    if times.len() != values.len() {
        return Err(MetricsError::LengthMismatch(times.len(), values.len()));
    }
    let span = match (times.first(), times.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    if span < MIN_SPAN - 1e-9 {
        return Err(MetricsError::TrajectoryTooShort { span });
    }
    let start = times
        .iter()
        .position(|t| *t >= spec.step_time - 1e-12)
        .ok_or(MetricsError::NoSamplesAfterStep(spec.step_time))?;
    let t_after = &times[start..];
    let y_after = &values[start..];

    let step = spec.step_size();
    let overshoot_pct = if step == 0.0 {
        0.0
    } else {
        let dir = step.signum();
        let peak = y_after
            .iter()
            .map(|y| (y - spec.reference) * dir)
            .fold(f64::NEG_INFINITY, f64::max);
        (peak / step.abs() * 100.0).max(0.0)
    };

    let last = *y_after.last().unwrap();
    let final_error = spec.reference - last;
    let last_out = y_after
        .iter()
        .rposition(|y| !((y - spec.reference).abs() <= spec.band));
    let settle_at = match last_out {
        None => t_after[0],
        Some(i) if i + 1 < t_after.len() => t_after[i + 1],
        Some(_) => {
            return Err(MetricsError::NotSettled {
                band: spec.band,
                final_error,
            })
        }
    };
    if t_after[t_after.len() - 1] - settle_at < MIN_SETTLED_DWELL - 1e-9 {
        return Err(MetricsError::NotSettled {
            band: spec.band,
            final_error,
        });
    }
    Ok(StepMetrics {
        overshoot_pct,
        settling_time: settle_at - spec.step_time,
        steady_state_error: final_error,
    })
}
