//! Time multiplexing of the fiber between compensation sessions and
//! entanglement-distribution uptime windows.
//!
//! The loop is `session → uptime window → session → …`. The channel keeps
//! drifting through both phases; during the measurement part of each uptime
//! window an [`UptimeObserver`] sees the idler-path transform at every
//! channel sub-step so it can integrate coincidence rates.

use serde::{Deserialize, Serialize};

use crate::apc::{run_session, ApcConfig, Controller, ReferenceSequence, SessionOutcome, SessionRecord};
use crate::channel::FiberChannel;
use crate::error::{Error, Result};
use crate::polmath::PolTransform;

pub const UPTIME_WINDOW_S: f64 = 3.0;
pub const MEASURE_WINDOW_S: f64 = 2.0;
pub const CHANNEL_STEP_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub uptime_window_s: f64,
    /// Leading part of each uptime window during which coincidences are
    /// recorded. The remainder is idle but still counts as uptime.
    pub measure_window_s: f64,
    pub stabilized: bool,
    /// Channel integration step during uptime.
    pub channel_step_s: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            uptime_window_s: UPTIME_WINDOW_S,
            measure_window_s: MEASURE_WINDOW_S,
            stabilized: true,
            channel_step_s: CHANNEL_STEP_S,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.uptime_window_s > 0.0) {
            return Err(Error::config("scheduler.uptime_window_s", "must be positive"));
        }
        if !(self.measure_window_s > 0.0 && self.measure_window_s <= self.uptime_window_s) {
            return Err(Error::config(
                "scheduler.measure_window_s",
                "must be in (0, uptime_window_s]",
            ));
        }
        if !(self.channel_step_s > 0.0) {
            return Err(Error::config("scheduler.channel_step_s", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Compensation,
    Uptime,
}

impl EntryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryKind::Compensation => "compensation",
            EntryKind::Uptime => "uptime",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: EntryKind,
    /// Present exactly for compensation entries.
    pub session: Option<SessionRecord>,
}

impl TimelineEntry {
    pub fn span(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeline {
    entries: Vec<TimelineEntry>,
}

impl LinkTimeline {
    /// Checks contiguity, alternation and that sessions sit on compensation
    /// entries only.
    pub fn from_entries(entries: Vec<TimelineEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.end_s >= e.start_s) {
                return Err(Error::invalid(format!("timeline entry {i} ends before it starts")));
            }
            if (e.kind == EntryKind::Compensation) != e.session.is_some() {
                return Err(Error::invalid(format!(
                    "timeline entry {i}: session record must accompany compensation entries only"
                )));
            }
            if i > 0 {
                let prev = &entries[i - 1];
                if prev.end_s != e.start_s {
                    return Err(Error::invalid(format!("timeline entry {i} is not contiguous")));
                }
                if prev.kind == e.kind {
                    return Err(Error::invalid(format!("timeline entry {i} does not alternate")));
                }
            }
        }
        Ok(LinkTimeline { entries })
    }

    pub fn entries(&self) -> &[TimelineEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.entries.iter().filter_map(|e| e.session.as_ref())
    }

    pub fn start_s(&self) -> Option<f64> {
        self.entries.first().map(|e| e.start_s)
    }

    pub fn end_s(&self) -> Option<f64> {
        self.entries.last().map(|e| e.end_s)
    }

    fn time_in(&self, kind: EntryKind) -> f64 {
        self.entries.iter().filter(|e| e.kind == kind).map(TimelineEntry::span).sum()
    }

    fn total(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::invalid("empty timeline"));
        }
        Ok(self.entries.iter().map(TimelineEntry::span).sum())
    }

    /// Share of the total span spent in uptime windows.
    pub fn uptime_fraction(&self) -> Result<f64> {
        let total = self.total()?;
        if total == 0.0 {
            return Err(Error::invalid("timeline has zero span"));
        }
        Ok(self.time_in(EntryKind::Uptime) / total)
    }

    pub fn compensation_fraction(&self) -> Result<f64> {
        let total = self.total()?;
        if total == 0.0 {
            return Err(Error::invalid("timeline has zero span"));
        }
        Ok(self.time_in(EntryKind::Compensation) / total)
    }
}

/// Context handed to the observer when a measurement window completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowInfo {
    /// Counts completed measurement windows from 0.
    pub index: usize,
    pub start_s: f64,
    pub measure_s: f64,
    /// The session that released the fiber for this window.
    pub session: SessionRecord,
}

impl WindowInfo {
    pub fn post_timeout(&self) -> bool {
        self.session.outcome == SessionOutcome::Timeout
    }
}

pub trait UptimeObserver {
    /// One channel sub-step of length `dt_s` inside measurement window
    /// `window`, with `idler` the controller-after-fiber transform in effect.
    fn sample(&mut self, window: usize, dt_s: f64, idler: &PolTransform);

    fn window_done(&mut self, info: &WindowInfo);
}

/// Ignores everything.
impl UptimeObserver for () {
    fn sample(&mut self, _: usize, _: f64, _: &PolTransform) {}

    fn window_done(&mut self, _: &WindowInfo) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    /// Run for this long; the last uptime window is truncated, a session in
    /// progress is allowed to finish.
    Duration(f64),
    /// Run until this many full measurement windows have completed.
    Windows(usize),
}

/// Evenly splits `len` into sub-steps no longer than `max_dt` and walks the
/// channel through them.
fn drift_through(channel: &mut FiberChannel, len: f64, max_dt: f64, mut each: impl FnMut(&FiberChannel, f64)) {
    if len <= 0.0 {
        return;
    }
    let n = (len / max_dt - 1e-9).ceil().max(1.0) as usize;
    let dt = len / n as f64;
    for _ in 0..n {
        each(channel, dt);
        channel.step(dt);
    }
}

/// Alternates sessions and uptime windows on `channel` until `stop`.
pub fn run_link<O: UptimeObserver>(
    channel: &mut FiberChannel,
    ctrl: &mut Controller,
    refs: &ReferenceSequence,
    apc: &ApcConfig,
    sched: &SchedulerConfig,
    stop: Stop,
    observer: &mut O,
) -> Result<LinkTimeline> {
    apc.validate()?;
    sched.validate()?;
    let origin = channel.sim_time();
    let end = match stop {
        Stop::Duration(d) if !(d >= 0.0) => return Err(Error::invalid("run duration must be non-negative")),
        Stop::Duration(d) => origin + d,
        Stop::Windows(_) => f64::INFINITY,
    };
    let windows_wanted = match stop {
        Stop::Windows(n) => n,
        Stop::Duration(_) => usize::MAX,
    };

    let mut entries = Vec::new();
    let mut windows = 0;
    // Absorbs rounding in the accumulated channel clock.
    let end_guard = end - 1e-9;
    while channel.sim_time() < end_guard && windows < windows_wanted {
        let t0 = channel.sim_time();
        let session = run_session(channel, ctrl, refs, apc, sched.stabilized);
        let t1 = channel.sim_time();
        entries.push(TimelineEntry {
            start_s: t0,
            end_s: t1,
            kind: EntryKind::Compensation,
            session: Some(session),
        });
        if t1 >= end_guard {
            break;
        }

        let uptime = sched.uptime_window_s.min(end - t1);
        if uptime >= sched.measure_window_s {
            let index = windows;
            let c = *ctrl;
            drift_through(channel, sched.measure_window_s, sched.channel_step_s, |ch, dt| {
                observer.sample(index, dt, &c.to_transform().compose(ch.transform()));
            });
            observer.window_done(&WindowInfo {
                index,
                start_s: t1,
                measure_s: sched.measure_window_s,
                session,
            });
            windows += 1;
            drift_through(channel, uptime - sched.measure_window_s, sched.channel_step_s, |_, _| {});
        } else {
            drift_through(channel, uptime, sched.channel_step_s, |_, _| {});
        }
        entries.push(TimelineEntry {
            start_s: t1,
            end_s: channel.sim_time(),
            kind: EntryKind::Uptime,
            session: None,
        });
    }
    LinkTimeline::from_entries(entries)
}
