//! Drifting fiber channel.
//!
//! The accumulated polarization transform performs isotropic angular
//! diffusion on SO(3): each step composes a rotation about a uniformly random
//! axis by an angle drawn from `N(0, σ²·dt)`, where `σ²` comes from a
//! periodic day/night [`DriftSchedule`] plus optional burst episodes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::polmath::{sop_fidelity, PolTransform, StokesVector};

pub const FIBER_LOSS_DB: f64 = 18.0;
pub const COMPONENT_LOSS_DB: f64 = 3.0;
/// Total loss on the idler path.
pub const DEFAULT_LOSS_DB: f64 = FIBER_LOSS_DB + COMPONENT_LOSS_DB;

/// Ratio between the daytime and night-time diffusion rates.
pub const NIGHT_RATE_RATIO: f64 = 500.0;
/// Burst episodes diffuse this many times faster than the day rate.
pub const BURST_MULTIPLIER: f64 = 100.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Day-time angular diffusion rate (rad²/s) for which the median time for a
/// launched SOP to first fall below 95% fidelity is 20 s. Produced by
/// `polarlink calibrate` with the default settings and seed 0.
pub const CALIBRATED_DAY_RATE: f64 = 0.0133;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSegment {
    pub start_s: f64,
    /// Angular diffusion rate in rad²/s.
    pub rate: f64,
}

/// Temporary episode of fast drift (wind gusts, traffic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub start_s: f64,
    pub duration_s: f64,
    pub rate: f64,
}

impl Burst {
    fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    segments: Vec<DriftSegment>,
    period_s: f64,
    #[serde(default)]
    bursts: Vec<Burst>,
}

impl DriftSchedule {
    pub fn new(segments: Vec<DriftSegment>, period_s: f64) -> Result<Self> {
        let schedule = DriftSchedule {
            segments,
            period_s,
            bursts: Vec::new(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("drift schedule needs at least one segment"));
        }
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return Err(Error::invalid("drift schedule period must be positive"));
        }
        if self.segments[0].start_s != 0.0 {
            return Err(Error::invalid("first drift segment must start at 0"));
        }
        for pair in self.segments.windows(2) {
            if pair[1].start_s <= pair[0].start_s {
                return Err(Error::invalid("segment start times must be strictly increasing"));
            }
        }
        if self.segments.last().is_some_and(|s| s.start_s >= self.period_s) {
            return Err(Error::invalid("segment starts beyond the schedule period"));
        }
        for s in &self.segments {
            if !(s.rate.is_finite() && s.rate >= 0.0) {
                return Err(Error::invalid("drift rates must be finite and non-negative"));
            }
        }
        for b in &self.bursts {
            if !(b.rate.is_finite() && b.rate >= 0.0 && b.duration_s >= 0.0 && b.start_s >= 0.0) {
                return Err(Error::invalid("burst fields must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn constant(rate: f64) -> Self {
        DriftSchedule {
            segments: vec![DriftSegment { start_s: 0.0, rate }],
            period_s: SECONDS_PER_DAY,
            bursts: Vec::new(),
        }
    }

    pub fn static_channel() -> Self {
        Self::constant(0.0)
    }

    /// 24 h cycle starting at midnight: `night_rate` outside
    /// `[day_start_h, day_end_h)`, `day_rate` inside.
    pub fn day_night(day_rate: f64, night_rate: f64, day_start_h: f64, day_end_h: f64) -> Result<Self> {
        if !(0.0 < day_start_h && day_start_h < day_end_h && day_end_h < 24.0) {
            return Err(Error::invalid("day window must satisfy 0 < start < end < 24 h"));
        }
        Self::new(
            vec![
                DriftSegment { start_s: 0.0, rate: night_rate },
                DriftSegment { start_s: day_start_h * 3600.0, rate: day_rate },
                DriftSegment { start_s: day_end_h * 3600.0, rate: night_rate },
            ],
            SECONDS_PER_DAY,
        )
    }

    pub fn with_bursts(mut self, bursts: Vec<Burst>) -> Result<Self> {
        self.bursts = bursts;
        self.validate()?;
        Ok(self)
    }

    pub fn segments(&self) -> &[DriftSegment] {
        &self.segments
    }

    pub fn bursts(&self) -> &[Burst] {
        &self.bursts
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    /// Periodic base rate at `t`, ignoring bursts.
    pub fn base_rate_at(&self, t: f64) -> f64 {
        let phase = t.rem_euclid(self.period_s);
        self.segments
            .iter()
            .rev()
            .find(|s| s.start_s <= phase)
            .map_or(self.segments[0].rate, |s| s.rate)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let base = self.base_rate_at(t);
        self.bursts
            .iter()
            .filter(|b| b.contains(t))
            .fold(base, |acc, b| acc.max(b.rate))
    }

    pub fn in_burst(&self, t: f64) -> bool {
        self.bursts.iter().any(|b| b.contains(t))
    }

    /// Maps the schedule onto a time axis `factor` times shorter. Rates and
    /// burst durations are kept; segment boundaries, the period and burst
    /// start times are divided by `factor`.
    pub fn compressed(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 1.0) {
            return Err(Error::invalid("time compression factor must be ≥ 1"));
        }
        let out = DriftSchedule {
            segments: self
                .segments
                .iter()
                .map(|s| DriftSegment { start_s: s.start_s / factor, rate: s.rate })
                .collect(),
            period_s: self.period_s / factor,
            bursts: self
                .bursts
                .iter()
                .map(|b| Burst { start_s: b.start_s / factor, ..*b })
                .collect(),
        };
        out.validate()?;
        Ok(out)
    }

    /// Largest base rate of any segment.
    pub fn peak_rate(&self) -> f64 {
        self.segments.iter().map(|s| s.rate).fold(0.0, f64::max)
    }
}

/// Single-owner state of one simulated fiber link.
#[derive(Debug, Clone)]
pub struct FiberChannel {
    transform: PolTransform,
    loss_db: f64,
    schedule: DriftSchedule,
    rng: ChaCha8Rng,
    sim_time: f64,
}

impl FiberChannel {
    pub fn new(schedule: DriftSchedule, loss_db: f64, seed: u64) -> Result<Self> {
        if !(loss_db.is_finite() && loss_db >= 0.0) {
            return Err(Error::invalid("loss must be a non-negative number of dB"));
        }
        schedule.validate()?;
        Ok(FiberChannel {
            transform: PolTransform::identity(),
            loss_db,
            schedule,
            rng: stream_rng(seed, 0),
            sim_time: 0.0,
        })
    }

    pub fn with_transform(mut self, transform: PolTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_start_time(mut self, t: f64) -> Self {
        self.sim_time = t;
        self
    }

    pub fn transform(&self) -> &PolTransform {
        &self.transform
    }

    pub fn schedule(&self) -> &DriftSchedule {
        &self.schedule
    }

    pub fn loss_db(&self) -> f64 {
        self.loss_db
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn transmittance(&self) -> f64 {
        transmittance(self.loss_db)
    }

    /// Advances by `dt` seconds with the rate in force at the current time.
    pub fn step(&mut self, dt: f64) {
        debug_assert!(dt > 0.0, "step needs dt > 0");
        let rate = self.schedule.rate_at(self.sim_time);
        if rate > 0.0 {
            let axis = StokesVector::random(&mut self.rng);
            let z: f64 = self.rng.sample(StandardNormal);
            let angle = (rate * dt).sqrt() * z;
            self.transform = PolTransform::rotation(axis.components(), angle).compose(&self.transform);
            self.transform.orthonormalize();
        }
        self.sim_time += dt;
    }

    /// Advances by `duration` in steps no longer than `max_dt`.
    pub fn advance(&mut self, duration: f64, max_dt: f64) {
        if duration <= 0.0 {
            return;
        }
        let n = (duration / max_dt).ceil().max(1.0) as usize;
        let dt = duration / n as f64;
        for _ in 0..n {
            self.step(dt);
        }
    }

    /// Samples the output SOP for a fixed input every `sample_dt` over
    /// `duration`, with fidelity measured against the first sample.
    pub fn probe_trace(&mut self, input: &StokesVector, duration: f64, sample_dt: f64) -> Result<ProbeTrace> {
        if !(duration > 0.0 && sample_dt > 0.0) {
            return Err(Error::invalid("probe duration and sample interval must be positive"));
        }
        let n = (duration / sample_dt).round() as usize;
        let t0 = self.sim_time;
        let reference = self.transform.apply(input);
        let mut samples = Vec::with_capacity(n + 1);
        for k in 0..=n {
            if k > 0 {
                self.step(sample_dt);
            }
            let out = self.transform.apply(input);
            samples.push(ProbeSample {
                t_s: k as f64 * sample_dt,
                stokes: out,
                fidelity: sop_fidelity(&reference, &out),
            });
        }
        debug_assert!((self.sim_time - t0 - n as f64 * sample_dt).abs() < 1e-6);
        Ok(ProbeTrace { samples })
    }
}

/// `10^(−loss/10)`.
pub fn transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub t_s: f64,
    pub stokes: StokesVector,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub samples: Vec<ProbeSample>,
}

impl ProbeTrace {
    /// Time of the first sample whose fidelity is below `threshold`.
    pub fn first_crossing(&self, threshold: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.fidelity < threshold).map(|s| s.t_s)
    }
}
