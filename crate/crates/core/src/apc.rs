//! Automated polarization compensation.
//!
//! An injector cycles six reference SOPs through the fiber; the compensator
//! measures what arrives, scores the fidelities, and walks an in-line
//! four-paddle controller downhill with finite-difference gradient descent.
//! Every measurement costs one reference cycle of simulated time, during
//! which a drifting channel keeps moving.

use serde::{Deserialize, Serialize};

use crate::channel::FiberChannel;
use crate::error::{Error, Result};
use crate::polmath::{sop_fidelity, PolTransform, StokesVector};

pub const CHECK_THRESHOLD: f64 = 0.98;
pub const TARGET_THRESHOLD: f64 = 0.99;
pub const TIMEOUT_S: f64 = 55.0;
/// One pass through all six reference states.
pub const CYCLE_TIME_S: f64 = 0.12;
/// Launched reference power; recorded only, it has no simulated effect.
pub const REFERENCE_POWER_MW: f64 = 0.5;

/// Measurement cycles per gradient iteration: 8 finite-difference probes
/// plus the measurement at the updated setting.
pub const CYCLES_PER_ITERATION: u64 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSequence {
    states: Vec<StokesVector>,
    dwell_s: f64,
}

impl Default for ReferenceSequence {
    /// H, V, D, A, R, L.
    fn default() -> Self {
        ReferenceSequence {
            states: vec![
                StokesVector::H,
                StokesVector::V,
                StokesVector::D,
                StokesVector::A,
                StokesVector::R,
                StokesVector::L,
            ],
            dwell_s: CYCLE_TIME_S / 6.0,
        }
    }
}

impl ReferenceSequence {
    pub fn new(states: Vec<StokesVector>, dwell_s: f64) -> Result<Self> {
        if states.len() != 6 {
            return Err(Error::invalid(format!(
                "reference sequence needs 6 states, got {}",
                states.len()
            )));
        }
        if !(dwell_s > 0.0) {
            return Err(Error::invalid("reference dwell time must be positive"));
        }
        // Rank 3 ⇔ the scatter matrix Σ s·sᵀ is non-singular.
        let mut scatter = [[0.0; 3]; 3];
        for s in &states {
            let c = s.components();
            for i in 0..3 {
                for j in 0..3 {
                    scatter[i][j] += c[i] * c[j];
                }
            }
        }
        let det = scatter[0][0] * (scatter[1][1] * scatter[2][2] - scatter[1][2] * scatter[2][1])
            - scatter[0][1] * (scatter[1][0] * scatter[2][2] - scatter[1][2] * scatter[2][0])
            + scatter[0][2] * (scatter[1][0] * scatter[2][1] - scatter[1][1] * scatter[2][0]);
        if det.abs() < 1e-9 {
            return Err(Error::invalid("reference states do not span Stokes space"));
        }
        Ok(ReferenceSequence { states, dwell_s })
    }

    pub fn states(&self) -> &[StokesVector] {
        &self.states
    }

    pub fn dwell_s(&self) -> f64 {
        self.dwell_s
    }
}

/// Four-paddle polarization controller: rotations about s1, s3, s1, s3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub params: [f64; 4],
}

impl Default for Controller {
    fn default() -> Self {
        Self::identity()
    }
}

impl Controller {
    /// Identity setting `(0, π/2, 0, −π/2)`. Unlike all-zero paddles, this
    /// point has paddle axes spanning all three Stokes directions.
    pub fn identity() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Controller {
            params: [0.0, FRAC_PI_2, 0.0, -FRAC_PI_2],
        }
    }

    pub fn to_transform(&self) -> PolTransform {
        let [a, b, c, d] = self.params;
        PolTransform::about_s1(a)
            .compose(&PolTransform::about_s3(b))
            .compose(&PolTransform::about_s1(c))
            .compose(&PolTransform::about_s3(d))
    }

    /// Paddle setting realizing `target`, with the last paddle fixed at
    /// `−π/2` and the first three solved as x-z-x Euler angles.
    pub fn from_transform(target: &PolTransform) -> Self {
        use std::f64::consts::FRAC_PI_2;
        let m = *target.compose(&PolTransform::about_s3(FRAC_PI_2)).matrix();
        let beta = m[0][0].clamp(-1.0, 1.0).acos();
        let (alpha, gamma) = if beta.sin().abs() > 1e-9 {
            (m[2][0].atan2(m[1][0]), m[0][2].atan2(-m[0][1]))
        } else if m[0][0] > 0.0 {
            (m[2][1].atan2(m[1][1]), 0.0)
        } else {
            ((-m[2][1]).atan2(-m[1][1]), 0.0)
        };
        Controller {
            params: [alpha, beta, gamma, -FRAC_PI_2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApcConfig {
    pub check_threshold: f64,
    pub target_threshold: f64,
    pub timeout_s: f64,
    pub step_size: f64,
    pub fd_delta: f64,
    pub cycle_time_s: f64,
    /// Halve the step until the cost does not increase. Each trial costs an
    /// extra measurement cycle.
    pub line_search: bool,
    pub max_halvings: u32,
    pub reference_power_mw: f64,
}

impl Default for ApcConfig {
    fn default() -> Self {
        ApcConfig {
            check_threshold: CHECK_THRESHOLD,
            target_threshold: TARGET_THRESHOLD,
            timeout_s: TIMEOUT_S,
            step_size: 2.0,
            fd_delta: 0.05,
            cycle_time_s: CYCLE_TIME_S,
            line_search: false,
            max_halvings: 5,
            reference_power_mw: REFERENCE_POWER_MW,
        }
    }
}

impl ApcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.check_threshold > 0.0
            && self.check_threshold <= self.target_threshold
            && self.target_threshold < 1.0)
        {
            return Err(Error::config(
                "apc.check_threshold",
                "need 0 < check_threshold ≤ target_threshold < 1",
            ));
        }
        if !(self.timeout_s > 0.0) {
            return Err(Error::config("apc.timeout_s", "must be positive"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::config("apc.step_size", "must be positive"));
        }
        if !(self.fd_delta > 0.0) {
            return Err(Error::config("apc.fd_delta", "must be positive"));
        }
        if !(self.cycle_time_s > 0.0) {
            return Err(Error::config("apc.cycle_time_s", "must be positive"));
        }
        if !(self.reference_power_mw >= 0.0) {
            return Err(Error::config("apc.reference_power_mw", "must be non-negative"));
        }
        Ok(())
    }
}

/// Received-reference fidelities `F(r, C·T·r)` for each reference state.
pub fn measure_fidelities(channel: &PolTransform, ctrl: &Controller, refs: &ReferenceSequence) -> Vec<f64> {
    let composite = ctrl.to_transform().compose(channel);
    refs.states
        .iter()
        .map(|r| sop_fidelity(r, &composite.apply(r)))
        .collect()
}

/// Error signal `1 − mean(F)`.
pub fn cost(fids: &[f64]) -> f64 {
    1.0 - fids.iter().sum::<f64>() / fids.len() as f64
}

pub fn min_fidelity(fids: &[f64]) -> f64 {
    fids.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Something the compensator can take one reference-cycle measurement of.
pub trait Plant {
    /// Measures all reference states once, consuming `cycle_time_s`.
    fn measure(&mut self, ctrl: &Controller, refs: &ReferenceSequence, cycle_time_s: f64) -> Vec<f64>;

    fn now(&self) -> f64;
}

/// The drifting channel keeps moving while each reference state dwells.
impl Plant for FiberChannel {
    fn measure(&mut self, ctrl: &Controller, refs: &ReferenceSequence, cycle_time_s: f64) -> Vec<f64> {
        let dwell = cycle_time_s / refs.states.len() as f64;
        let c = ctrl.to_transform();
        refs.states
            .iter()
            .map(|r| {
                self.step(dwell);
                let composite = c.compose(self.transform());
                sop_fidelity(r, &composite.apply(r))
            })
            .collect()
    }

    fn now(&self) -> f64 {
        self.sim_time()
    }
}

/// Fixed channel with its own clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPlant {
    pub transform: PolTransform,
    pub clock_s: f64,
}

impl StaticPlant {
    pub fn new(transform: PolTransform) -> Self {
        StaticPlant { transform, clock_s: 0.0 }
    }
}

impl Plant for StaticPlant {
    fn measure(&mut self, ctrl: &Controller, refs: &ReferenceSequence, cycle_time_s: f64) -> Vec<f64> {
        self.clock_s += cycle_time_s;
        measure_fidelities(&self.transform, ctrl, refs)
    }

    fn now(&self) -> f64 {
        self.clock_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub controller: Controller,
    /// Fidelities measured at the updated setting.
    pub fidelities: Vec<f64>,
    pub gradient: [f64; 4],
    pub cycles: u64,
}

/// One gradient-descent iteration from `ctrl`, whose last measured cost is
/// `base_cost`.
pub fn compensation_step<P: Plant>(
    plant: &mut P,
    ctrl: &Controller,
    refs: &ReferenceSequence,
    cfg: &ApcConfig,
    base_cost: f64,
) -> StepOutcome {
    let mut gradient = [0.0; 4];
    let mut cycles = 0;
    for (i, g) in gradient.iter_mut().enumerate() {
        let mut plus = *ctrl;
        plus.params[i] += cfg.fd_delta;
        let mut minus = *ctrl;
        minus.params[i] -= cfg.fd_delta;
        let c_plus = cost(&plant.measure(&plus, refs, cfg.cycle_time_s));
        let c_minus = cost(&plant.measure(&minus, refs, cfg.cycle_time_s));
        cycles += 2;
        *g = (c_plus - c_minus) / (2.0 * cfg.fd_delta);
    }

    let mut alpha = cfg.step_size;
    let halvings = if cfg.line_search { cfg.max_halvings } else { 0 };
    let mut attempt = 0;
    loop {
        let mut trial = *ctrl;
        for (p, g) in trial.params.iter_mut().zip(gradient) {
            *p -= alpha * g;
        }
        let fids = plant.measure(&trial, refs, cfg.cycle_time_s);
        cycles += 1;
        if attempt >= halvings || cost(&fids) <= base_cost {
            return StepOutcome {
                controller: trial,
                fidelities: fids,
                gradient,
                cycles,
            };
        }
        alpha *= 0.5;
        attempt += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionOutcome {
    /// Reference fidelities already above the check threshold.
    Skipped,
    Converged,
    Timeout,
    /// Fidelity check only; stabilization disabled.
    Monitored,
}

impl SessionOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionOutcome::Skipped => "skipped",
            SessionOutcome::Converged => "converged",
            SessionOutcome::Timeout => "timeout",
            SessionOutcome::Monitored => "monitored",
        }
    }
}

impl std::fmt::Display for SessionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub start_time_s: f64,
    pub outcome: SessionOutcome,
    pub duration_s: f64,
    pub min_fidelity_before: f64,
    pub min_fidelity_after: f64,
    pub iterations: u64,
}

/// One compensation session: check, then iterate until the target or the
/// timeout. With `actuate == false` only the check is performed.
pub fn run_session<P: Plant>(
    plant: &mut P,
    ctrl: &mut Controller,
    refs: &ReferenceSequence,
    cfg: &ApcConfig,
    actuate: bool,
) -> SessionRecord {
    let start = plant.now();
    let mut fids = plant.measure(ctrl, refs, cfg.cycle_time_s);
    let mut cycles: u64 = 1;
    let before = min_fidelity(&fids);
    let record = |outcome, cycles: u64, after, iterations| SessionRecord {
        start_time_s: start,
        outcome,
        duration_s: cfg.cycle_time_s * cycles as f64,
        min_fidelity_before: before,
        min_fidelity_after: after,
        iterations,
    };
    if !actuate {
        return record(SessionOutcome::Monitored, cycles, before, 0);
    }
    if before >= cfg.check_threshold {
        return record(SessionOutcome::Skipped, cycles, before, 0);
    }

    let mut iterations = 0;
    loop {
        let step = compensation_step(plant, ctrl, refs, cfg, cost(&fids));
        *ctrl = step.controller;
        fids = step.fidelities;
        cycles += step.cycles;
        iterations += 1;
        let after = min_fidelity(&fids);
        if after >= cfg.target_threshold {
            return record(SessionOutcome::Converged, cycles, after, iterations);
        }
        if cfg.cycle_time_s * cycles as f64 >= cfg.timeout_s {
            return record(SessionOutcome::Timeout, cycles, after, iterations);
        }
    }
}
