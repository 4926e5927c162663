//! Monte-Carlo calibration of the day-time drift rate.
//!
//! Two targets are supported:
//! - [`CalibrationTarget::FirstCrossing`]: a launched SOP first falls below
//!   fidelity `F` after a median time `T` (default).
//! - [`CalibrationTarget::FidelityAtTime`]: the median fidelity at time `T`
//!   equals `F`.
//!
//! For angular diffusion the crossing time scales as `1/σ²` and the fidelity
//! deficit `1 − F(T)` grows roughly as `σ²`, so the search rescales the rate
//! until the simulated median lands on target. The same trajectory seeds are
//! reused across iterations, which makes the median a deterministic function
//! of the rate.

use serde::{Deserialize, Serialize};

use crate::channel::{DriftSchedule, FiberChannel};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::polmath::{angle_for_fidelity, sop_fidelity, StokesVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    #[default]
    FirstCrossing,
    FidelityAtTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub target: CalibrationTarget,
    pub target_fidelity: f64,
    pub target_time_s: f64,
    pub trajectories: u64,
    pub sample_dt_s: f64,
    /// Trajectories are followed up to this multiple of the target time.
    pub horizon_factor: f64,
    /// Relative tolerance on the median crossing time, or on the median
    /// fidelity deficit `1 − F`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            target: CalibrationTarget::FirstCrossing,
            target_fidelity: 0.95,
            target_time_s: 20.0,
            trajectories: 4000,
            sample_dt_s: 0.1,
            horizon_factor: 6.0,
            tolerance: 0.01,
            max_iterations: 30,
        }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fidelity > 0.0 && self.target_fidelity <= 1.0) {
            return Err(Error::config("calibration.target_fidelity", "must be in (0, 1]"));
        }
        if !(self.target_time_s > 0.0) {
            return Err(Error::config("calibration.target_time_s", "must be positive"));
        }
        if self.trajectories == 0 {
            return Err(Error::config("calibration.trajectories", "must be at least 1"));
        }
        if !(self.sample_dt_s > 0.0 && self.sample_dt_s < self.target_time_s) {
            return Err(Error::config("calibration.sample_dt_s", "must be in (0, target_time_s)"));
        }
        if !(self.horizon_factor > 1.0) {
            return Err(Error::config("calibration.horizon_factor", "must exceed 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("calibration.tolerance", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Day-time angular diffusion rate, rad²/s.
    pub day_rate: f64,
    pub night_rate: f64,
    pub target: CalibrationTarget,
    pub target_fidelity: f64,
    pub target_time_s: f64,
    pub median_crossing_s: f64,
    pub median_fidelity_at_target_time: f64,
    pub iterations: usize,
    pub trajectories: u64,
    pub seed: u64,
}

/// First time each of `n` trajectories drops below `threshold`; `INFINITY`
/// when it stays above for the whole `horizon_s`.
pub fn crossing_times(
    rate: f64,
    threshold: f64,
    sample_dt_s: f64,
    horizon_s: f64,
    seed: u64,
    n: u64,
    exec: Execution,
) -> Vec<f64> {
    let steps = (horizon_s / sample_dt_s).round() as usize;
    map_range(exec, 0..n, |k| {
        let Ok(mut ch) = FiberChannel::new(DriftSchedule::constant(rate), 0.0, seed.wrapping_add(k)) else {
            return f64::INFINITY;
        };
        let start = ch.transform().apply(&StokesVector::H);
        for i in 1..=steps {
            ch.step(sample_dt_s);
            if sop_fidelity(&start, &ch.transform().apply(&StokesVector::H)) < threshold {
                return i as f64 * sample_dt_s;
            }
        }
        f64::INFINITY
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median_crossing_time(rate: f64, settings: &CalibrationSettings, seed: u64, exec: Execution) -> f64 {
    let horizon = settings.horizon_factor * settings.target_time_s;
    let times = crossing_times(
        rate,
        settings.target_fidelity,
        settings.sample_dt_s,
        horizon,
        seed,
        settings.trajectories,
        exec,
    );
    median(&times)
}

/// Median fidelity after `time_s` of drift at `rate`.
pub fn median_fidelity_at(rate: f64, time_s: f64, settings: &CalibrationSettings, seed: u64, exec: Execution) -> f64 {
    let fids = map_range(exec, 0..settings.trajectories, |k| {
        let Ok(mut ch) = FiberChannel::new(DriftSchedule::constant(rate), 0.0, seed.wrapping_add(k)) else {
            return f64::NAN;
        };
        ch.advance(time_s, settings.sample_dt_s);
        sop_fidelity(&StokesVector::H, &ch.transform().apply(&StokesVector::H))
    });
    median(&fids)
}

/// Searches the day rate that puts the chosen median statistic on target.
pub fn calibrate_day_rate(settings: &CalibrationSettings, seed: u64, exec: Execution) -> Result<Calibration> {
    settings.validate()?;
    let target_t = settings.target_time_s;
    let target_f = settings.target_fidelity;
    let finish = |rate: f64, iterations| Calibration {
        day_rate: rate,
        night_rate: rate / crate::channel::NIGHT_RATE_RATIO,
        target: settings.target,
        target_fidelity: target_f,
        target_time_s: target_t,
        median_crossing_s: median_crossing_time(rate, settings, seed, exec),
        median_fidelity_at_target_time: median_fidelity_at(rate, target_t, settings, seed, exec),
        iterations,
        trajectories: settings.trajectories,
        seed,
    };
    if target_f >= 1.0 {
        return Ok(finish(0.0, 0));
    }

    // Small-angle diffusion estimate: E[θ²] ≈ (2/3)·σ²·t.
    let theta = angle_for_fidelity(target_f);
    let mut rate = 1.5 * theta * theta / target_t;
    // Bracket on the rate: `too_slow` < root < `too_fast`.
    let mut too_slow: Option<f64> = None;
    let mut too_fast: Option<f64> = None;
    for iteration in 1..=settings.max_iterations {
        // `ratio` > 1 means the drift is too slow.
        let ratio = match settings.target {
            CalibrationTarget::FirstCrossing => {
                let m = median_crossing_time(rate, settings, seed, exec);
                if m.is_finite() { m / target_t } else { 4.0 }
            }
            CalibrationTarget::FidelityAtTime => {
                let deficit = 1.0 - median_fidelity_at(rate, target_t, settings, seed, exec);
                if deficit > 0.0 { (1.0 - target_f) / deficit } else { 4.0 }
            }
        };
        if (ratio - 1.0).abs() <= settings.tolerance {
            return Ok(finish(rate, iteration));
        }
        if ratio > 1.0 {
            too_slow = Some(too_slow.map_or(rate, |r: f64| r.max(rate)));
        } else {
            too_fast = Some(too_fast.map_or(rate, |r: f64| r.min(rate)));
        }
        // Diffusion scaling proposal, kept inside the bracket; falls back to
        // geometric bisection when the proposal leaves it.
        let proposal = rate * ratio.clamp(0.25, 4.0);
        rate = match (too_slow, too_fast) {
            (Some(lo), Some(hi)) if !(proposal > lo && proposal < hi) => (lo * hi).sqrt(),
            _ => proposal,
        };
    }
    Err(Error::Calibration(format!(
        "median statistic did not reach its target within {} iterations",
        settings.max_iterations
    )))
}
