//! Experiment configuration: one structured file, every field defaulted to
//! the link's nominal constants.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apc::ApcConfig;
use crate::calibration::CalibrationSettings;
use crate::channel::{
    Burst, DriftSchedule, BURST_MULTIPLIER, CALIBRATED_DAY_RATE, DEFAULT_LOSS_DB, NIGHT_RATE_RATIO, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::scheduler::SchedulerConfig;
use crate::source::{DetectionChain, PairSource, COINCIDENCE_WINDOW_S, LOCAL_PAIR_RATE};

/// RNG stream reserved for burst placement.
const BURST_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Probe,
    Fringe,
    Longrun,
    Calibrate,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Probe, Scenario::Fringe, Scenario::Longrun, Scenario::Calibrate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Probe => "probe",
            Scenario::Fringe => "fringe",
            Scenario::Longrun => "longrun",
            Scenario::Calibrate => "calibrate",
        }
    }

    fn default_start_h(&self) -> f64 {
        match self {
            // Midday, inside the default high-drift window.
            Scenario::Probe | Scenario::Fringe => 12.0,
            Scenario::Longrun | Scenario::Calibrate => 0.0,
        }
    }

    fn default_duration_s(&self) -> f64 {
        match self {
            Scenario::Probe => 60.0,
            Scenario::Longrun => SECONDS_PER_DAY,
            // Fringe scans run until all points are taken.
            Scenario::Fringe | Scenario::Calibrate => 0.0,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// Day rate inside `[day_start_h, day_end_h)`, night rate elsewhere.
    DayNight,
    /// Day rate around the clock.
    Constant,
    /// No drift at all.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialTransform {
    /// Haar-random fiber transform drawn from the run seed.
    Random,
    Identity,
}

/// Explicit burst on the uncompressed time axis; its rate is
/// `multiplier × day_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSpec {
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_burst_multiplier")]
    pub multiplier: f64,
}

fn default_burst_multiplier() -> f64 {
    BURST_MULTIPLIER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub drift: DriftKind,
    /// rad²/s.
    pub day_rate: f64,
    /// Defaults to `day_rate / 500`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub night_rate: Option<f64>,
    pub day_start_h: f64,
    pub day_end_h: f64,
    pub loss_db: f64,
    pub initial: InitialTransform,
    /// Seeded random bursts per simulated day, placed inside the day window.
    /// Only used with `drift = "day_night"`.
    pub bursts_per_day: u32,
    pub burst_duration_s: f64,
    pub burst_multiplier: f64,
    pub bursts: Vec<BurstSpec>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            drift: DriftKind::DayNight,
            day_rate: CALIBRATED_DAY_RATE,
            night_rate: None,
            day_start_h: 10.0,
            day_end_h: 14.0,
            loss_db: DEFAULT_LOSS_DB,
            initial: InitialTransform::Random,
            bursts_per_day: 3,
            burst_duration_s: 60.0,
            burst_multiplier: BURST_MULTIPLIER,
            bursts: Vec::new(),
        }
    }
}

impl ChannelConfig {
    pub fn night_rate(&self) -> f64 {
        self.night_rate.unwrap_or(self.day_rate / NIGHT_RATE_RATIO)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.day_rate) {
            return Err(Error::config("channel.day_rate", "must be finite and non-negative"));
        }
        if !nonneg(self.night_rate()) {
            return Err(Error::config("channel.night_rate", "must be finite and non-negative"));
        }
        if !(0.0 < self.day_start_h && self.day_start_h < self.day_end_h && self.day_end_h < 24.0) {
            return Err(Error::config("channel.day_start_h", "need 0 < day_start_h < day_end_h < 24"));
        }
        if !nonneg(self.loss_db) {
            return Err(Error::config("channel.loss_db", "must be non-negative"));
        }
        if !nonneg(self.burst_duration_s) {
            return Err(Error::config("channel.burst_duration_s", "must be non-negative"));
        }
        if !nonneg(self.burst_multiplier) {
            return Err(Error::config("channel.burst_multiplier", "must be non-negative"));
        }
        for (i, b) in self.bursts.iter().enumerate() {
            if !(nonneg(b.start_s) && nonneg(b.duration_s) && nonneg(b.multiplier)) {
                return Err(Error::config(format!("channel.bursts[{i}]"), "fields must be non-negative"));
            }
        }
        Ok(())
    }

    /// Schedule on the uncompressed axis, with random bursts for every day
    /// overlapping `[start_s, end_s)`.
    pub fn schedule(&self, seed: u64, start_s: f64, end_s: f64) -> Result<DriftSchedule> {
        use rand::Rng;
        let base = match self.drift {
            DriftKind::DayNight => {
                DriftSchedule::day_night(self.day_rate, self.night_rate(), self.day_start_h, self.day_end_h)?
            }
            DriftKind::Constant => DriftSchedule::constant(self.day_rate),
            DriftKind::Static => DriftSchedule::static_channel(),
        };
        let mut bursts: Vec<Burst> = self
            .bursts
            .iter()
            .map(|b| Burst { start_s: b.start_s, duration_s: b.duration_s, rate: b.multiplier * self.day_rate })
            .collect();
        if self.drift == DriftKind::DayNight && self.bursts_per_day > 0 {
            let mut rng = stream_rng(seed, BURST_STREAM);
            let first_day = (start_s / SECONDS_PER_DAY).floor() as i64;
            let last_day = (end_s / SECONDS_PER_DAY).ceil() as i64;
            let (lo, hi) = (self.day_start_h * 3600.0, self.day_end_h * 3600.0);
            for day in first_day..last_day.max(first_day + 1) {
                let offset = day as f64 * SECONDS_PER_DAY;
                for _ in 0..self.bursts_per_day {
                    bursts.push(Burst {
                        start_s: offset + rng.random_range(lo..hi),
                        duration_s: self.burst_duration_s,
                        rate: self.burst_multiplier * self.day_rate,
                    });
                }
            }
        }
        base.with_bursts(bursts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Locally detected pairs per second.
    pub pair_rate: f64,
    pub visibility: f64,
    /// Per arm. The pair rate is already a detected rate, hence 1.
    pub detector_efficiency: f64,
    pub dark_rate: f64,
    pub coincidence_window_s: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate: LOCAL_PAIR_RATE,
            visibility: 0.84,
            detector_efficiency: 1.0,
            dark_rate: 0.0,
            coincidence_window_s: COINCIDENCE_WINDOW_S,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate.is_finite() && self.pair_rate > 0.0) {
            return Err(Error::config("source.pair_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::config("source.visibility", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::config("source.detector_efficiency", "must lie in [0, 1]"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::config("source.dark_rate", "must be non-negative"));
        }
        if !(self.coincidence_window_s > 0.0) {
            return Err(Error::config("source.coincidence_window_s", "must be positive"));
        }
        Ok(())
    }

    pub fn pair_source(&self) -> Result<PairSource> {
        PairSource::new(self.pair_rate, self.visibility)
    }

    pub fn detection_chain(&self, loss_db: f64) -> DetectionChain {
        DetectionChain {
            idler_transmittance: crate::channel::transmittance(loss_db),
            detector_efficiency: self.detector_efficiency,
            dark_rate: self.dark_rate,
            coincidence_window_s: self.coincidence_window_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub sample_dt_s: f64,
    /// Launched Stokes vector, normalized on use.
    pub input: [f64; 3],
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { sample_dt_s: 0.1, input: [1.0, 0.0, 0.0], threshold: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeConfig {
    /// NIST analyzer settings, in H, D, V, A order for the CHSH estimate.
    pub bases_deg: Vec<f64>,
    pub angle_step_deg: f64,
    /// Store expected counts instead of Poisson samples.
    pub noiseless: bool,
}

impl Default for FringeConfig {
    fn default() -> Self {
        FringeConfig { bases_deg: vec![0.0, 45.0, 90.0, 135.0], angle_step_deg: 10.0, noiseless: false }
    }
}

impl FringeConfig {
    pub fn angles(&self) -> Vec<f64> {
        let n = (180.0 / self.angle_step_deg + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.angle_step_deg).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongrunConfig {
    pub histogram_bins: usize,
    pub histogram_min_s: f64,
    pub histogram_max_s: f64,
}

impl Default for LongrunConfig {
    fn default() -> Self {
        LongrunConfig { histogram_bins: 24, histogram_min_s: 0.1, histogram_max_s: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub seed: u64,
    /// Uncompressed run length; scenario default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Time of day at which the run starts; scenario default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_h: Option<f64>,
    /// Divides the schedule's time axis and the run length. Rates and the
    /// APC loop are untouched, so drift-to-loop-bandwidth ratios are kept.
    pub time_compression: f64,
    /// Start with the controller undoing the initial fiber transform.
    pub aligned_start: bool,
    pub execution: Execution,
    pub channel: ChannelConfig,
    pub source: SourceConfig,
    pub apc: ApcConfig,
    pub scheduler: SchedulerConfig,
    pub probe: ProbeConfig,
    pub fringe: FringeConfig,
    pub longrun: LongrunConfig,
    pub calibration: CalibrationSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: None,
            seed: 0,
            duration_s: None,
            start_h: None,
            time_compression: 1.0,
            aligned_start: true,
            execution: Execution::default(),
            channel: ChannelConfig::default(),
            source: SourceConfig::default(),
            apc: ApcConfig::default(),
            scheduler: SchedulerConfig::default(),
            probe: ProbeConfig::default(),
            fringe: FringeConfig::default(),
            longrun: LongrunConfig::default(),
            calibration: CalibrationSettings::default(),
        }
    }
}

fn located<E: fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    let path = if path == "." { "(document)".to_string() } else { path };
    Error::config(path, e.inner().to_string().trim().to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("(document)", e.to_string().trim()))?;
        serde_path_to_error::deserialize(de).map_err(located)
    }

    /// Accepts a bare config object or a summary document embedding one
    /// under `"config"`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("(document)", e.to_string()))?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.get("config").is_some_and(|c| c.is_object()) => {
                m.remove("config").unwrap_or_default()
            }
            other => other,
        };
        serde_path_to_error::deserialize(value).map_err(located)
    }

    /// TOML unless the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("(file)", format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Output(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_compression.is_finite() && self.time_compression >= 1.0) {
            return Err(Error::config("time_compression", "must be ≥ 1"));
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::config("duration_s", "must be finite and non-negative"));
            }
        }
        if let Some(h) = self.start_h {
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::config("start_h", "must be finite and non-negative"));
            }
        }
        self.channel.validate()?;
        self.source.validate()?;
        self.apc.validate()?;
        self.scheduler.validate()?;
        if !(self.probe.sample_dt_s > 0.0) {
            return Err(Error::config("probe.sample_dt_s", "must be positive"));
        }
        if !(self.probe.threshold > 0.0 && self.probe.threshold <= 1.0) {
            return Err(Error::config("probe.threshold", "must be in (0, 1]"));
        }
        if self.probe.input.iter().all(|&c| c == 0.0) || self.probe.input.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("probe.input", "must be a finite non-zero Stokes vector"));
        }
        if self.fringe.bases_deg.len() != 4 {
            return Err(Error::config("fringe.bases_deg", "CHSH needs exactly four NIST bases"));
        }
        if !(self.fringe.angle_step_deg > 0.0 && self.fringe.angles().len() >= crate::analysis::MIN_FIT_POINTS) {
            return Err(Error::config(
                "fringe.angle_step_deg",
                "must be positive and leave at least 6 points in 0°–180°",
            ));
        }
        let l = &self.longrun;
        if !(l.histogram_bins > 0 && l.histogram_min_s > 0.0 && l.histogram_max_s > l.histogram_min_s) {
            return Err(Error::config("longrun.histogram_bins", "need bins > 0 and 0 < min < max"));
        }
        self.calibration.validate()
    }

    /// Fixes scenario, seed and every scenario-dependent default, so the
    /// result reproduces the run on its own.
    pub fn resolved(&self, scenario: Scenario, seed: u64) -> Self {
        ExperimentConfig {
            scenario: Some(scenario),
            seed,
            duration_s: Some(self.duration_s.unwrap_or(scenario.default_duration_s())),
            start_h: Some(self.start_h.unwrap_or(scenario.default_start_h())),
            channel: ChannelConfig { night_rate: Some(self.channel.night_rate()), ..self.channel.clone() },
            ..self.clone()
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s.unwrap_or_else(|| self.scenario.map_or(0.0, |s| s.default_duration_s()))
    }

    pub fn start_h(&self) -> f64 {
        self.start_h.unwrap_or_else(|| self.scenario.map_or(0.0, |s| s.default_start_h()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json_str("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn errors_carry_field_paths() {
        let err = ExperimentConfig::from_toml_str("[apc]\nstep_size = \"big\"\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "apc.step_size"), "{err}");

        let err = ExperimentConfig::from_toml_str("[channel]\nwobble = 1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path.starts_with("channel")), "{err}");

        let err = ExperimentConfig::from_toml_str("seed = [").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));

        let cfg = ExperimentConfig::from_toml_str("[source]\nvisibility = 1.5\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "source.visibility"));

        let cfg = ExperimentConfig::from_toml_str("time_compression = 0.5\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "time_compression"));
    }

    #[test]
    fn resolved_config_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::from_toml_str(
            "time_compression = 4\n[channel]\nbursts = [{ start_s = 100.0, duration_s = 20.0 }]\n",
        )
        .unwrap()
        .resolved(Scenario::Longrun, 9);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);

        let summary = serde_json::json!({ "scenario": "longrun", "config": cfg, "results": {} });
        assert_eq!(ExperimentConfig::from_json_str(&summary.to_string()).unwrap(), cfg);
    }

    #[test]
    fn scenario_defaults() {
        let r = ExperimentConfig::default().resolved(Scenario::Probe, 3);
        assert_eq!((r.duration_s(), r.start_h(), r.seed), (60.0, 12.0, 3));
        assert_eq!(r.channel.night_rate, Some(CALIBRATED_DAY_RATE / 500.0));
        assert_eq!("longrun".parse::<Scenario>().unwrap(), Scenario::Longrun);
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn random_bursts_fall_in_the_day_window() {
        let ch = ChannelConfig::default();
        let s = ch.schedule(1, 0.0, 2.0 * SECONDS_PER_DAY).unwrap();
        assert_eq!(s.bursts().len(), 6);
        for b in s.bursts() {
            let tod = b.start_s.rem_euclid(SECONDS_PER_DAY) / 3600.0;
            assert!((10.0..14.0).contains(&tod));
            assert_eq!(b.rate, 100.0 * CALIBRATED_DAY_RATE);
        }
        assert_eq!(s, ch.schedule(1, 0.0, 2.0 * SECONDS_PER_DAY).unwrap());

        let flat = ChannelConfig { drift: DriftKind::Static, ..ChannelConfig::default() };
        assert!(flat.schedule(1, 0.0, SECONDS_PER_DAY).unwrap().bursts().is_empty());
    }
}
