//! Entangled-pair source, detection chain and coincidence identification.
//!
//! Two levels of detail are available. Rate level: expected coincidence rates
//! per analyzer port pair, turned into Poisson counts. Tag level: explicit
//! picosecond time-tag streams matched within a coincidence window, with the
//! remote timing relay modeled as a constant relative delay.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polmath::{outcome_prob, AnalyzerSetting, PolTransform, Port, TwoQubitPolState};

pub const LOCAL_PAIR_RATE: f64 = 2.0e5;
pub const DETECTOR_EFFICIENCY: f64 = 0.70;
pub const COINCIDENCE_WINDOW_S: f64 = 1.6e-9;
pub const PS_PER_S: f64 = 1.0e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSource {
    local_pair_rate: f64,
    state: TwoQubitPolState,
}

impl PairSource {
    pub fn new(local_pair_rate: f64, visibility: f64) -> Result<Self> {
        if !(local_pair_rate.is_finite() && local_pair_rate > 0.0) {
            return Err(Error::invalid("pair rate must be positive"));
        }
        Ok(PairSource {
            local_pair_rate,
            state: TwoQubitPolState::new(visibility)?,
        })
    }

    pub fn local_pair_rate(&self) -> f64 {
        self.local_pair_rate
    }

    pub fn state(&self) -> &TwoQubitPolState {
        &self.state
    }
}

impl Default for PairSource {
    fn default() -> Self {
        PairSource {
            local_pair_rate: LOCAL_PAIR_RATE,
            state: TwoQubitPolState::phi_plus(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub idler_transmittance: f64,
    /// Applied on each arm.
    pub detector_efficiency: f64,
    /// Dark counts per detector, counts/s.
    pub dark_rate: f64,
    pub coincidence_window_s: f64,
}

impl Default for DetectionChain {
    fn default() -> Self {
        DetectionChain {
            idler_transmittance: crate::channel::transmittance(crate::channel::DEFAULT_LOSS_DB),
            detector_efficiency: DETECTOR_EFFICIENCY,
            dark_rate: 0.0,
            coincidence_window_s: COINCIDENCE_WINDOW_S,
        }
    }
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.idler_transmittance) || !prob(self.detector_efficiency) {
            return Err(Error::invalid("transmittance and efficiency must lie in [0, 1]"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::invalid("dark rate must be non-negative"));
        }
        if !(self.coincidence_window_s > 0.0) {
            return Err(Error::invalid("coincidence window must be positive"));
        }
        Ok(())
    }

    /// Singles rate on one signal detector port.
    pub fn signal_singles(&self, src: &PairSource) -> f64 {
        0.5 * src.local_pair_rate * self.detector_efficiency + self.dark_rate
    }

    /// Singles rate on one idler detector port.
    pub fn idler_singles(&self, src: &PairSource) -> f64 {
        0.5 * src.local_pair_rate * self.idler_transmittance * self.detector_efficiency + self.dark_rate
    }

    /// Accidental coincidences between one signal and one idler port.
    pub fn accidental_rate(&self, src: &PairSource) -> f64 {
        self.signal_singles(src) * self.idler_singles(src) * self.coincidence_window_s
    }
}

/// True-pair coincidence rate for one port pair, without accidentals.
pub fn true_coincidence_rate(
    src: &PairSource,
    chain: &DetectionChain,
    a: &AnalyzerSetting,
    pa: Port,
    b: &AnalyzerSetting,
    pb: Port,
    idler_channel: &PolTransform,
) -> f64 {
    src.local_pair_rate
        * chain.idler_transmittance
        * chain.detector_efficiency.powi(2)
        * outcome_prob(&src.state, a, pa, b, pb, idler_channel)
}

/// Expected coincidence rate (true pairs plus accidentals) between port `pa`
/// of the signal analyzer and port `pb` of the idler analyzer.
pub fn expected_coincidence_rate(
    src: &PairSource,
    chain: &DetectionChain,
    a: &AnalyzerSetting,
    pa: Port,
    b: &AnalyzerSetting,
    pb: Port,
    idler_channel: &PolTransform,
) -> f64 {
    true_coincidence_rate(src, chain, a, pa, b, pb, idler_channel) + chain.accidental_rate(src)
}

/// True-pair rate summed over all four port combinations.
pub fn total_pair_rate(src: &PairSource, chain: &DetectionChain) -> f64 {
    src.local_pair_rate * chain.idler_transmittance * chain.detector_efficiency.powi(2)
}

/// Poisson-distributed count with mean `rate · duration`.
pub fn sample_counts<R: Rng + ?Sized>(rate: f64, duration: f64, rng: &mut R) -> Result<u64> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::invalid(format!("count rate {rate} must be non-negative")));
    }
    if !(duration > 0.0) {
        return Err(Error::invalid("counting duration must be positive"));
    }
    let mean = rate * duration;
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

/// Sorted detection times of one detector channel, in picoseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagStream {
    channel_id: u32,
    tags_ps: Vec<i64>,
}

impl TimeTagStream {
    pub fn new(channel_id: u32, tags_ps: Vec<i64>) -> Result<Self> {
        check_sorted(&tags_ps)?;
        Ok(TimeTagStream { channel_id, tags_ps })
    }

    pub fn channel_id(&self) -> u32 {
        self.channel_id
    }

    pub fn tags_ps(&self) -> &[i64] {
        &self.tags_ps
    }

    pub fn len(&self) -> usize {
        self.tags_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags_ps.is_empty()
    }

    /// Adds a constant offset to every tag.
    pub fn shifted(&self, offset_ps: i64) -> Self {
        TimeTagStream {
            channel_id: self.channel_id,
            tags_ps: self.tags_ps.iter().map(|t| t + offset_ps).collect(),
        }
    }
}

fn check_sorted(tags: &[i64]) -> Result<()> {
    if let Some(k) = tags.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::invalid(format!("time tags not sorted at index {}", k + 1)));
    }
    Ok(())
}

/// Poisson arrival process: exponential inter-arrival times at `rate` over
/// `duration` seconds.
pub fn generate_timetags<R: Rng + ?Sized>(
    channel_id: u32,
    rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<TimeTagStream> {
    if !(rate.is_finite() && rate >= 0.0 && duration > 0.0) {
        return Err(Error::invalid("tag generation needs rate ≥ 0 and duration > 0"));
    }
    let mut tags = Vec::new();
    if rate > 0.0 {
        let exp = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
        let mut t = exp.sample(rng);
        while t < duration {
            tags.push((t * PS_PER_S).round() as i64);
            t += exp.sample(rng);
        }
    }
    TimeTagStream::new(channel_id, tags)
}

/// Signal/idler streams sharing `pair_rate` correlated detections (idler
/// delayed by `delay_s` with Gaussian jitter) on top of independent
/// background at `background_rate` on each channel.
pub fn generate_pair_streams<R: Rng + ?Sized>(
    pair_rate: f64,
    background_rate: f64,
    duration: f64,
    delay_s: f64,
    jitter_s: f64,
    rng: &mut R,
) -> Result<(TimeTagStream, TimeTagStream)> {
    let pairs = generate_timetags(0, pair_rate, duration, rng)?;
    let jitter = Normal::new(0.0, jitter_s.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let delay_ps = (delay_s * PS_PER_S).round() as i64;
    let mut signal = pairs.tags_ps.clone();
    let mut idler: Vec<i64> = pairs
        .tags_ps
        .iter()
        .map(|t| t + delay_ps + (jitter.sample(rng) * PS_PER_S).round() as i64)
        .collect();
    signal.extend(generate_timetags(0, background_rate, duration, rng)?.tags_ps);
    idler.extend(generate_timetags(1, background_rate, duration, rng)?.tags_ps);
    signal.sort_unstable();
    idler.sort_unstable();
    Ok((TimeTagStream::new(0, signal)?, TimeTagStream::new(1, idler)?))
}

/// Counts signal/idler pairs with `|t_signal + delay − t_idler| ≤ window/2`,
/// each tag used at most once.
///
/// Walks both sorted streams with two cursors: a pair inside the window is
/// matched immediately; otherwise the earlier tag can no longer match
/// anything and is dropped. This greedy yields a maximum matching and is
/// symmetric under swapping the streams and negating the delay.
pub fn find_coincidences_ps(signal: &[i64], idler: &[i64], window_ps: i64, delay_ps: i64) -> Result<u64> {
    check_sorted(signal)?;
    check_sorted(idler)?;
    if window_ps <= 0 {
        return Err(Error::invalid("coincidence window must be positive"));
    }
    let (mut i, mut j, mut count) = (0, 0, 0u64);
    while i < signal.len() && j < idler.len() {
        let s = signal[i] + delay_ps;
        let t = idler[j];
        if 2 * (s - t).abs() <= window_ps {
            count += 1;
            i += 1;
            j += 1;
        } else if s < t {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(count)
}

pub fn find_coincidences(
    signal: &TimeTagStream,
    idler: &TimeTagStream,
    window_s: f64,
    relative_delay_s: f64,
) -> Result<u64> {
    find_coincidences_ps(
        &signal.tags_ps,
        &idler.tags_ps,
        (window_s * PS_PER_S).round() as i64,
        (relative_delay_s * PS_PER_S).round() as i64,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct TagRow {
    channel_id: u32,
    time_ps: i64,
}

/// Writes streams as `channel_id,time_ps` rows, one stream after another.
pub fn write_tags_csv<W: Write>(writer: W, streams: &[&TimeTagStream]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in streams {
        for &t in &s.tags_ps {
            w.serialize(TagRow { channel_id: s.channel_id, time_ps: t }).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `channel_id,time_ps` rows back into one stream per channel, in
/// order of first appearance.
pub fn read_tags_csv<R: Read>(reader: R) -> Result<Vec<TimeTagStream>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<(u32, Vec<i64>)> = Vec::new();
    for row in r.deserialize::<TagRow>() {
        let row = row.map_err(csv_err)?;
        match out.iter_mut().find(|(c, _)| *c == row.channel_id) {
            Some((_, tags)) => tags.push(row.time_ps),
            None => out.push((row.channel_id, vec![row.time_ps])),
        }
    }
    out.into_iter().map(|(c, tags)| TimeTagStream::new(c, tags)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::transmittance;
    use crate::exec::stream_rng;
    use approx::assert_abs_diff_eq;

    fn nominal_chain() -> DetectionChain {
        DetectionChain {
            idler_transmittance: transmittance(21.0),
            detector_efficiency: 1.0,
            ..DetectionChain::default()
        }
    }

    #[test]
    fn rate_budget_through_21_db() {
        let src = PairSource::new(2.0e5, 0.3).unwrap();
        let chain = nominal_chain();
        let h = AnalyzerSetting::H;
        let id = PolTransform::identity();
        let mut sum = 0.0;
        for pa in Port::BOTH {
            for pb in Port::BOTH {
                sum += true_coincidence_rate(&src, &chain, &h, pa, &h, pb, &id);
            }
        }
        assert_abs_diff_eq!(sum, 1588.66, epsilon = 0.01);
        assert_abs_diff_eq!(sum, total_pair_rate(&src, &chain), epsilon = 1e-9);
    }

    #[test]
    fn zero_transmittance_leaves_only_accidentals() {
        let src = PairSource::default();
        let chain = DetectionChain {
            idler_transmittance: 0.0,
            dark_rate: 100.0,
            ..nominal_chain()
        };
        let r = expected_coincidence_rate(&src, &chain, &AnalyzerSetting::H, Port::Pass, &AnalyzerSetting::H, Port::Pass, &PolTransform::identity());
        assert_abs_diff_eq!(r, (1.0e5 + 100.0) * 100.0 * 1.6e-9, epsilon = 1e-12);
    }

    #[test]
    fn single_port_at_45_degrees_is_a_quarter() {
        let src = PairSource::new(2.0e5, 1.0).unwrap();
        let chain = nominal_chain();
        let r = true_coincidence_rate(&src, &chain, &AnalyzerSetting::H, Port::Pass, &AnalyzerSetting::D, Port::Pass, &PolTransform::identity());
        assert_abs_diff_eq!(r / total_pair_rate(&src, &chain), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn poisson_counts() {
        let mut rng = stream_rng(1, 0);
        assert_eq!(sample_counts(0.0, 2.0, &mut rng).unwrap(), 0);
        let big = sample_counts(1.0e6, 1.0, &mut rng).unwrap();
        assert!((big as f64 - 1.0e6).abs() <= 5.0e3);
        let xs: Vec<f64> = (0..10_000).map(|_| sample_counts(100.0, 1.0, &mut rng).unwrap() as f64).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var - 100.0).abs() <= 10.0, "variance {var}");
        assert!(sample_counts(-1.0, 1.0, &mut rng).is_err());
        assert!(sample_counts(1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn poisson_counts_are_seed_deterministic() {
        let a = sample_counts(1234.5, 2.0, &mut stream_rng(9, 3)).unwrap();
        let b = sample_counts(1234.5, 2.0, &mut stream_rng(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_streams_fully_coincide() {
        let s = generate_timetags(0, 1.0e5, 0.01, &mut stream_rng(2, 0)).unwrap();
        assert_eq!(find_coincidences(&s, &s, 1.6e-9, 0.0).unwrap(), s.len() as u64);
    }

    #[test]
    fn distant_streams_never_coincide() {
        let a = TimeTagStream::new(0, vec![0, 10, 20]).unwrap();
        let b = a.shifted(1_000_000);
        assert_eq!(find_coincidences(&a, &b, 1.6e-9, 0.0).unwrap(), 0);
    }

    #[test]
    fn unsorted_tags_are_rejected() {
        assert!(TimeTagStream::new(0, vec![5, 3]).is_err());
        assert!(find_coincidences_ps(&[5, 3], &[1], 10, 0).is_err());
    }

    #[test]
    fn delay_recovers_correlated_pairs() {
        let mut rng = stream_rng(5, 0);
        let (s, i) = generate_pair_streams(1.0e4, 1.0e4, 0.1, 350e-9, 50e-12, &mut rng).unwrap();
        let aligned = find_coincidences(&s, &i, 1.6e-9, 350e-9).unwrap();
        let misaligned = find_coincidences(&s, &i, 1.6e-9, 0.0).unwrap();
        assert!(aligned >= 950, "aligned {aligned}");
        assert!(misaligned < 10, "misaligned {misaligned}");
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = stream_rng(6, 0);
        let (s, i) = generate_pair_streams(1.0e3, 1.0e3, 0.01, 1e-9, 1e-11, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_tags_csv(&mut buf, &[&s, &i]).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("channel_id,time_ps\n"));
        let back = read_tags_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![s, i]);
    }
}
