//! The four experiments: probe trace, fringe scan, long run and drift-rate
//! calibration. Runners return plain values; [`output`] writes them.

pub mod config;
pub mod output;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    average_s, chsh_from_fringes, is_violation, longrun_series, ChshResult, FringeDataset, FringePoint, Histogram,
    SeriesAverage, SeriesPoint, WindowCounts,
};
use crate::apc::{Controller, ReferenceSequence, SessionOutcome, SessionRecord};
use crate::calibration::{calibrate_day_rate, median_crossing_time, Calibration};
use crate::channel::{FiberChannel, ProbeTrace};
use crate::error::Result;
use crate::exec::stream_rng;
use crate::polmath::{AnalyzerSetting, ChshAngles, PolTransform, Port, StokesVector};
use crate::scheduler::{run_link, LinkTimeline, Stop, UptimeObserver, WindowInfo};
use crate::source::{expected_coincidence_rate, sample_counts, DetectionChain, PairSource};

pub use config::{ExperimentConfig, Scenario};

/// RNG streams derived from the run seed.
const INITIAL_TRANSFORM_STREAM: u64 = 1;
const COUNTING_STREAM: u64 = 3;

/// Offset between the calibration seed and its held-out check seed.
pub const HELD_OUT_SEED_OFFSET: u64 = 1_000_000;

/// Fiber and controller at the configured start time. The schedule covers
/// `[start, start + duration)` on the uncompressed axis before compression.
pub fn build_link(cfg: &ExperimentConfig) -> Result<(FiberChannel, Controller)> {
    cfg.validate()?;
    let k = cfg.time_compression;
    let start = cfg.start_h() * 3600.0;
    let schedule = cfg
        .channel
        .schedule(cfg.seed, start, start + cfg.duration_s())?
        .compressed(k)?;
    let initial = match cfg.channel.initial {
        config::InitialTransform::Random => PolTransform::random(&mut stream_rng(cfg.seed, INITIAL_TRANSFORM_STREAM)),
        config::InitialTransform::Identity => PolTransform::identity(),
    };
    let channel = FiberChannel::new(schedule, cfg.channel.loss_db, cfg.seed)?
        .with_transform(initial)
        .with_start_time(start / k);
    let ctrl = if cfg.aligned_start {
        Controller::from_transform(&initial.inverse())
    } else {
        Controller::identity()
    };
    Ok((channel, ctrl))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub trace: ProbeTrace,
    pub first_crossing_s: Option<f64>,
}

/// Fiber-only probe: launch a fixed SOP and record it at the output.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<ProbeOutcome> {
    let (mut channel, _) = build_link(cfg)?;
    let input = StokesVector::normalize(cfg.probe.input)?;
    let duration = cfg.duration_s() / cfg.time_compression;
    if duration == 0.0 {
        return Ok(ProbeOutcome { trace: ProbeTrace { samples: Vec::new() }, first_crossing_s: None });
    }
    let trace = channel.probe_trace(&input, duration, cfg.probe.sample_dt_s)?;
    let first_crossing_s = trace.first_crossing(cfg.probe.threshold);
    Ok(ProbeOutcome { trace, first_crossing_s })
}

/// Integrates expected coincidence rates over a measurement window and
/// turns them into counts when it closes.
struct Counter {
    source: PairSource,
    chain: DetectionChain,
    rng: ChaCha8Rng,
    noiseless: bool,
}

impl Counter {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Counter {
            source: cfg.source.pair_source()?,
            chain: cfg.source.detection_chain(cfg.channel.loss_db),
            rng: stream_rng(cfg.seed, COUNTING_STREAM),
            noiseless: cfg.fringe.noiseless,
        })
    }

    fn rate(&self, a: &AnalyzerSetting, pa: Port, b: &AnalyzerSetting, pb: Port, idler: &PolTransform) -> f64 {
        expected_coincidence_rate(&self.source, &self.chain, a, pa, b, pb, idler)
    }

    /// `expected` is a mean count over `duration`.
    fn draw(&mut self, expected: f64, duration: f64) -> f64 {
        if self.noiseless {
            expected
        } else {
            // Both arguments are validated upstream.
            sample_counts(expected / duration, duration, &mut self.rng).unwrap_or(0) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeSession {
    pub nist_basis_deg: f64,
    pub umd_angle_deg: f64,
    pub session: SessionRecord,
}

struct FringeObserver {
    counter: Counter,
    plan: Vec<(AnalyzerSetting, f64)>,
    mean: f64,
    points: Vec<(usize, FringePoint)>,
    sessions: Vec<FringeSession>,
}

impl UptimeObserver for FringeObserver {
    fn sample(&mut self, window: usize, dt_s: f64, idler: &PolTransform) {
        let (a, b) = self.plan[window];
        self.mean += dt_s * self.counter.rate(&a, Port::Pass, &AnalyzerSetting::new(b), Port::Pass, idler);
    }

    fn window_done(&mut self, info: &WindowInfo) {
        let (a, b) = self.plan[info.index];
        let counts = self.counter.draw(std::mem::take(&mut self.mean), info.measure_s);
        self.points.push((
            info.index / (self.plan.len() / 4).max(1),
            FringePoint { umd_angle_deg: b, counts, duration_s: info.measure_s, post_timeout: info.post_timeout() },
        ));
        self.sessions.push(FringeSession { nist_basis_deg: a.angle_deg(), umd_angle_deg: b, session: info.session });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeOutcome {
    pub datasets: Vec<FringeDataset>,
    /// The session preceding each point, in scan order.
    pub sessions: Vec<FringeSession>,
    pub chsh: ChshResult,
    pub chsh_corrected: ChshResult,
    pub timeline: LinkTimeline,
}

/// Sweeps the UMD analyzer at each NIST basis; every point waits for the
/// compensation session ahead of it and then counts for one measure window.
pub fn run_fringe(cfg: &ExperimentConfig) -> Result<FringeOutcome> {
    let (mut channel, mut ctrl) = build_link(cfg)?;
    let angles = cfg.fringe.angles();
    let bases: Vec<AnalyzerSetting> = cfg.fringe.bases_deg.iter().map(|&d| AnalyzerSetting::new(d)).collect();
    let plan: Vec<(AnalyzerSetting, f64)> =
        bases.iter().flat_map(|a| angles.iter().map(move |&b| (*a, b))).collect();
    let mut obs = FringeObserver {
        counter: Counter::new(cfg)?,
        plan: plan.clone(),
        mean: 0.0,
        points: Vec::with_capacity(plan.len()),
        sessions: Vec::with_capacity(plan.len()),
    };
    let timeline = run_link(
        &mut channel,
        &mut ctrl,
        &ReferenceSequence::default(),
        &cfg.apc,
        &cfg.scheduler,
        Stop::Windows(plan.len()),
        &mut obs,
    )?;
    let datasets: Vec<FringeDataset> = bases
        .iter()
        .enumerate()
        .map(|(k, a)| FringeDataset {
            nist_basis: *a,
            points: obs.points.iter().filter(|(g, _)| *g == k).map(|(_, p)| *p).collect(),
        })
        .collect();
    let sets: [FringeDataset; 4] = [datasets[0].clone(), datasets[1].clone(), datasets[2].clone(), datasets[3].clone()];
    let chsh = chsh_from_fringes(&sets, false)?;
    let chsh_corrected = chsh_from_fringes(&sets, true)?;
    Ok(FringeOutcome { datasets, sessions: obs.sessions, chsh, chsh_corrected, timeline })
}

struct ChshObserver {
    counter: Counter,
    terms: [(AnalyzerSetting, AnalyzerSetting, f64); 4],
    mean: [f64; 4],
    windows: Vec<WindowCounts>,
}

const PORT_PAIRS: [(Port, Port); 4] = [
    (Port::Pass, Port::Pass),
    (Port::Pass, Port::Fail),
    (Port::Fail, Port::Pass),
    (Port::Fail, Port::Fail),
];

impl UptimeObserver for ChshObserver {
    fn sample(&mut self, window: usize, dt_s: f64, idler: &PolTransform) {
        let (a, b, _) = self.terms[window % 4];
        for (m, (pa, pb)) in self.mean.iter_mut().zip(PORT_PAIRS) {
            *m += dt_s * self.counter.rate(&a, pa, &b, pb, idler);
        }
    }

    fn window_done(&mut self, info: &WindowInfo) {
        let means = std::mem::take(&mut self.mean);
        let counts = means.map(|m| self.counter.draw(m, info.measure_s).round() as u64);
        self.windows.push(WindowCounts {
            start_s: info.start_s,
            term: info.index % 4,
            counts,
            post_timeout: info.post_timeout(),
            min_ref_fidelity: info.session.min_fidelity_after,
            compensation_time_s: info.session.duration_s,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongrunSummary {
    pub stabilized: bool,
    pub time_compression: f64,
    /// Simulated (compressed) span.
    pub simulated_s: f64,
    pub sessions: usize,
    pub skipped_fraction: f64,
    pub converged_fraction: f64,
    pub timeout_fraction: f64,
    pub monitored_fraction: f64,
    pub mean_session_s: Option<f64>,
    pub uptime_fraction: Option<f64>,
    pub compensation_fraction: Option<f64>,
    pub s_average: Option<SeriesAverage>,
    pub s_corrected: Option<SeriesAverage>,
    /// Start of the first S estimate below 2, seconds after the run start.
    pub first_below_classical_s: Option<f64>,
    /// Some later estimate flagged `S − 2 > 2σ` after the first drop.
    pub violation_after_drop: bool,
    pub compensation_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongrunOutcome {
    pub timeline: LinkTimeline,
    pub windows: Vec<WindowCounts>,
    pub series: Vec<SeriesPoint>,
    pub summary: LongrunSummary,
}

/// Scheduler run with one CHSH setting pair per uptime window.
pub fn run_longrun(cfg: &ExperimentConfig) -> Result<LongrunOutcome> {
    let (mut channel, mut ctrl) = build_link(cfg)?;
    let origin = channel.sim_time();
    let terms = ChshAngles::canonical().terms();
    let mut obs = ChshObserver { counter: Counter::new(cfg)?, terms, mean: [0.0; 4], windows: Vec::new() };
    let timeline = run_link(
        &mut channel,
        &mut ctrl,
        &ReferenceSequence::default(),
        &cfg.apc,
        &cfg.scheduler,
        Stop::Duration(cfg.duration_s() / cfg.time_compression),
        &mut obs,
    )?;
    let series = longrun_series(&obs.windows, terms.map(|t| t.2));
    let summary = summarize(cfg, origin, &timeline, &series)?;
    Ok(LongrunOutcome { timeline, windows: obs.windows, series, summary })
}

fn summarize(
    cfg: &ExperimentConfig,
    origin: f64,
    timeline: &LinkTimeline,
    series: &[SeriesPoint],
) -> Result<LongrunSummary> {
    let sessions: Vec<&SessionRecord> = timeline.sessions().collect();
    let n = sessions.len();
    let share = |o: SessionOutcome| {
        if n == 0 {
            0.0
        } else {
            sessions.iter().filter(|s| s.outcome == o).count() as f64 / n as f64
        }
    };
    let durations: Vec<f64> = sessions.iter().map(|s| s.duration_s).collect();
    let first_drop = series.iter().position(|p| p.s < 2.0);
    let l = &cfg.longrun;
    Ok(LongrunSummary {
        stabilized: cfg.scheduler.stabilized,
        time_compression: cfg.time_compression,
        simulated_s: timeline.end_s().map_or(0.0, |e| e - origin),
        sessions: n,
        skipped_fraction: share(SessionOutcome::Skipped),
        converged_fraction: share(SessionOutcome::Converged),
        timeout_fraction: share(SessionOutcome::Timeout),
        monitored_fraction: share(SessionOutcome::Monitored),
        mean_session_s: (n > 0).then(|| durations.iter().sum::<f64>() / n as f64),
        uptime_fraction: timeline.uptime_fraction().ok(),
        compensation_fraction: timeline.compensation_fraction().ok(),
        s_average: average_s(series, false),
        s_corrected: average_s(series, true),
        first_below_classical_s: first_drop.map(|i| series[i].t_s - origin),
        violation_after_drop: first_drop.is_some_and(|i| series[i..].iter().any(|p| is_violation(p.s, p.sigma_s))),
        compensation_histogram: Histogram::log_spaced(&durations, l.histogram_min_s, l.histogram_max_s, l.histogram_bins)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateOutcome {
    pub calibration: Calibration,
    /// Median crossing time at the calibrated rate on unseen trajectories.
    pub held_out_median_crossing_s: f64,
    pub held_out_seed: u64,
}

pub fn run_calibrate(cfg: &ExperimentConfig) -> Result<CalibrateOutcome> {
    cfg.validate()?;
    let calibration = calibrate_day_rate(&cfg.calibration, cfg.seed, cfg.execution)?;
    let held_out_seed = cfg.seed.wrapping_add(HELD_OUT_SEED_OFFSET);
    let held_out_median_crossing_s =
        median_crossing_time(calibration.day_rate, &cfg.calibration, held_out_seed, cfg.execution);
    Ok(CalibrateOutcome { calibration, held_out_median_crossing_s, held_out_seed })
}
