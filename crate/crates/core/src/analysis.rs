//! Fringe fitting, visibilities, CHSH estimates and long-run series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polmath::AnalyzerSetting;

/// Fewest fringe points a fit accepts.
pub const MIN_FIT_POINTS: usize = 6;
/// Smallest analyzer span (deg) a fit accepts.
pub const MIN_FIT_SPAN_DEG: f64 = 120.0;

const TWO_SQRT2: f64 = 2.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub umd_angle_deg: f64,
    /// Integral for sampled data; noiseless runs store the expectation.
    pub counts: f64,
    pub duration_s: f64,
    /// Recorded right after a timed-out compensation session.
    pub post_timeout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub nist_basis: AnalyzerSetting,
    pub points: Vec<FringePoint>,
}

impl FringeDataset {
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(0.0..=180.0).contains(&p.umd_angle_deg) {
                return Err(Error::invalid(format!("fringe angle {} outside [0°, 180°]", p.umd_angle_deg)));
            }
            if !(p.counts.is_finite() && p.counts >= 0.0) {
                return Err(Error::invalid("fringe counts must be finite and non-negative"));
            }
            if !(p.duration_s > 0.0) {
                return Err(Error::invalid("fringe point duration must be positive"));
            }
        }
        Ok(())
    }
}

/// `r(θ) = a + b·cos 2θ + c·sin 2θ`, in counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub visibility: f64,
    pub sigma_visibility: f64,
    /// Analyzer angle of the fringe maximum, in [0°, 180°).
    pub phase_deg: f64,
    pub points_used: usize,
}

impl FitResult {
    pub fn rate_at(&self, angle_deg: f64) -> f64 {
        let t = 2.0 * angle_deg.to_radians();
        self.a + self.b * t.cos() + self.c * t.sin()
    }
}

type Mat3 = [[f64; 3]; 3];

fn invert3(m: &Mat3) -> Option<Mat3> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    // Scale-free singularity test: the determinant of the unit-diagonal
    // rescaling of `m` lies in [0, 1] for a Gram matrix.
    // A basis column that is zero up to rounding (all angles equal mod 90°)
    // is caught by the diagonal check first.
    let diag_max = m[0][0].max(m[1][1]).max(m[2][2]);
    let scale = m[0][0] * m[1][1] * m[2][2];
    if (0..3).any(|i| !(m[i][i] > 1e-12 * diag_max)) || !(det / scale > 1e-10) {
        return None;
    }
    Some(adj.map(|row| row.map(|v| v / det)))
}

fn fit_points<'a>(points: impl Iterator<Item = &'a FringePoint>) -> Result<FitResult> {
    let points: Vec<&FringePoint> = points.collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "need at least {MIN_FIT_POINTS} fringe points, got {}",
            points.len()
        )));
    }
    let lo = points.iter().map(|p| p.umd_angle_deg).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.umd_angle_deg).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < MIN_FIT_SPAN_DEG {
        return Err(Error::Fit(format!(
            "fringe points span {:.1}°, need at least {MIN_FIT_SPAN_DEG}°",
            hi - lo
        )));
    }

    // Weighted normal equations; var(rate) = count / T².
    let mut normal = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for p in &points {
        let t = 2.0 * p.umd_angle_deg.to_radians();
        let x = [1.0, t.cos(), t.sin()];
        let rate = p.counts / p.duration_s;
        let w = p.duration_s * p.duration_s / p.counts.max(1.0);
        for i in 0..3 {
            rhs[i] += w * x[i] * rate;
            for j in 0..3 {
                normal[i][j] += w * x[i] * x[j];
            }
        }
    }
    let cov = invert3(&normal).ok_or_else(|| Error::Fit("degenerate fringe design matrix".into()))?;
    let mut p = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i] += cov[i][j] * rhs[j];
        }
    }
    let [a, b, c] = p;
    if !(a > 0.0) {
        return Err(Error::Fit("fitted fringe offset is not positive".into()));
    }
    let amp = b.hypot(c);
    let visibility = amp / a;
    let grad = if amp > 0.0 {
        [-visibility / a, b / (a * amp), c / (a * amp)]
    } else {
        // Direction-free limit: spread the amplitude variance evenly.
        [0.0, std::f64::consts::FRAC_1_SQRT_2 / a, std::f64::consts::FRAC_1_SQRT_2 / a]
    };
    let mut var = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            var += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok(FitResult {
        a,
        b,
        c,
        visibility,
        sigma_visibility: var.max(0.0).sqrt(),
        phase_deg: (0.5 * c.atan2(b).to_degrees()).rem_euclid(180.0),
        points_used: points.len(),
    })
}

/// Poisson-weighted least-squares fit of the whole fringe.
pub fn fit_fringe(d: &FringeDataset) -> Result<FitResult> {
    d.validate()?;
    fit_points(d.points.iter())
}

/// Refit without the points recorded right after a timed-out session.
pub fn corrected_fit(d: &FringeDataset) -> Result<FitResult> {
    d.validate()?;
    fit_points(d.points.iter().filter(|p| !p.post_timeout))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisVisibility {
    pub basis: f64,
    #[serde(rename = "V")]
    pub visibility: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "sigma_S")]
    pub sigma_s: f64,
    pub visibilities: Vec<BasisVisibility>,
    pub corrected: bool,
}

impl ChshResult {
    pub fn violation(&self) -> bool {
        is_violation(self.s, self.sigma_s)
    }
}

/// `S = 2√2·mean(V)`, `σ_S = (2√2/4)·√Σσ²`. Bases are listed H, D, V, A.
pub fn chsh_from_visibilities(vs: &[BasisVisibility; 4], corrected: bool) -> ChshResult {
    let mean = vs.iter().map(|v| v.visibility).sum::<f64>() / 4.0;
    let sum_sq = vs.iter().map(|v| v.sigma * v.sigma).sum::<f64>();
    ChshResult {
        s: TWO_SQRT2 * mean,
        sigma_s: TWO_SQRT2 / 4.0 * sum_sq.sqrt(),
        visibilities: vs.to_vec(),
        corrected,
    }
}

/// Fits four fringes (H, D, V, A order) and combines them.
pub fn chsh_from_fringes(sets: &[FringeDataset; 4], corrected: bool) -> Result<ChshResult> {
    let mut vs = [BasisVisibility { basis: 0.0, visibility: 0.0, sigma: 0.0 }; 4];
    for (slot, d) in vs.iter_mut().zip(sets) {
        let fit = if corrected { corrected_fit(d)? } else { fit_fringe(d)? };
        *slot = BasisVisibility {
            basis: d.nist_basis.angle_deg(),
            visibility: fit.visibility,
            sigma: fit.sigma_visibility,
        };
    }
    Ok(chsh_from_visibilities(&vs, corrected))
}

/// Classical-bound flag: `S − 2 > 2σ`.
pub fn is_violation(s: f64, sigma: f64) -> bool {
    s - 2.0 > 2.0 * sigma
}

/// Coincidences at one CHSH setting pair, by port: `[++, +−, −+, −−]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub start_s: f64,
    /// Which CHSH term (0..4) was measured.
    pub term: usize,
    pub counts: [u64; 4],
    pub post_timeout: bool,
    /// Minimum reference fidelity seen by the preceding session.
    pub min_ref_fidelity: f64,
    pub compensation_time_s: f64,
}

impl WindowCounts {
    /// `E = (N++ + N−− − N+− − N−+)/N` and its binomial standard error.
    pub fn correlation(&self) -> Option<(f64, f64)> {
        let [pp, pm, mp, mm] = self.counts.map(|c| c as f64);
        let n = pp + pm + mp + mm;
        if n == 0.0 {
            return None;
        }
        let e = (pp + mm - pm - mp) / n;
        Some((e, ((1.0 - e * e).max(0.0) / n).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t_s: f64,
    pub s: f64,
    pub sigma_s: f64,
    pub min_ref_fidelity: f64,
    /// Longest compensation session feeding this estimate.
    pub compensation_time_s: f64,
    pub post_timeout: bool,
}

/// One S estimate per 4 consecutive windows, which must cover the four
/// CHSH terms in order. `signs` are the CHSH term signs.
pub fn longrun_series(windows: &[WindowCounts], signs: [f64; 4]) -> Vec<SeriesPoint> {
    windows
        .chunks_exact(4)
        .filter(|g| g.iter().enumerate().all(|(k, w)| w.term == k))
        .filter_map(|g| {
            let mut s = 0.0;
            let mut var = 0.0;
            for (w, sign) in g.iter().zip(signs) {
                let (e, se) = w.correlation()?;
                s += sign * e;
                var += se * se;
            }
            Some(SeriesPoint {
                t_s: g[0].start_s,
                s,
                sigma_s: var.sqrt(),
                min_ref_fidelity: g.iter().map(|w| w.min_ref_fidelity).fold(f64::INFINITY, f64::min),
                compensation_time_s: g.iter().map(|w| w.compensation_time_s).fold(0.0, f64::max),
                post_timeout: g.iter().any(|w| w.post_timeout),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesAverage {
    pub mean: f64,
    /// Standard deviation of the S series (temporal spread plus shot noise).
    pub std: f64,
    pub n: usize,
}

pub fn average_s(series: &[SeriesPoint], corrected: bool) -> Option<SeriesAverage> {
    let vals: Vec<f64> = series
        .iter()
        .filter(|p| !(corrected && p.post_timeout))
        .map(|p| p.s)
        .collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(SeriesAverage { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Log-spaced bins from `lo` to `hi`; values outside land in the end bins.
    pub fn log_spaced(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && bins > 0) {
            return Err(Error::invalid("histogram needs 0 < lo < hi and at least one bin"));
        }
        let ratio = (hi / lo).ln();
        let edges: Vec<f64> = (0..=bins).map(|k| lo * (ratio * k as f64 / bins as f64).exp()).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if v <= lo {
                0
            } else {
                (((v / lo).ln() / ratio * bins as f64) as usize).min(bins - 1)
            };
            counts[k] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    /// Lower edge of the fullest bin.
    pub fn mode_lower_edge(&self) -> f64 {
        let k = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, c)| (c, std::cmp::Reverse(i)))
            .map_or(0, |(i, _)| i);
        self.edges[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn angles() -> Vec<f64> {
        (0..19).map(|k| 10.0 * k as f64).collect()
    }

    fn dataset(basis: f64, mut counts: impl FnMut(f64) -> f64) -> FringeDataset {
        FringeDataset {
            nist_basis: AnalyzerSetting::new(basis),
            points: angles()
                .into_iter()
                .map(|t| FringePoint { umd_angle_deg: t, counts: counts(t), duration_s: 2.0, post_timeout: false })
                .collect(),
        }
    }

    fn model(mean: f64, v: f64, phase: f64, t: f64) -> f64 {
        mean * (1.0 + v * (2.0 * (t - phase)).to_radians().cos())
    }

    #[test]
    fn noiseless_unit_visibility_fringe() {
        // Integer counts cannot follow 1 + cos 2θ exactly, so each point's
        // duration is chosen to make counts/duration the exact model rate.
        let mut d = dataset(0.0, |t| model(1000.0, 1.0, 0.0, t).round());
        for p in &mut d.points {
            let rate = model(500.0, 1.0, 0.0, p.umd_angle_deg);
            if p.counts > 0.0 {
                p.duration_s = p.counts / rate;
            }
        }
        let f = fit_fringe(&d).unwrap();
        assert_abs_diff_eq!(f.visibility, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.a, 500.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.phase_deg.min(180.0 - f.phase_deg), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn integral_model_is_recovered_exactly() {
        // At multiples of 45° every basis function is 0 or ±1, so the counts
        // are exact and least squares must return the generating parameters.
        let (a, b, c) = (600.0, -250.0, 125.0);
        let points = [0.0, 45.0, 90.0, 135.0, 180.0, 45.0, 90.0]
            .iter()
            .map(|&t: &f64| {
                let x = 2.0 * t.to_radians();
                let r = a + b * x.cos().round() + c * x.sin().round();
                FringePoint { umd_angle_deg: t, counts: 2.0 * r, duration_s: 2.0, post_timeout: false }
            })
            .collect();
        let f = fit_fringe(&FringeDataset { nist_basis: AnalyzerSetting::H, points }).unwrap();
        assert_abs_diff_eq!(f.a, a, epsilon = 1e-9);
        assert_abs_diff_eq!(f.b, b, epsilon = 1e-9);
        assert_abs_diff_eq!(f.c, c, epsilon = 1e-9);
        assert_abs_diff_eq!(f.visibility, (b * b + c * c).sqrt() / a, epsilon = 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        let few = FringeDataset { nist_basis: AnalyzerSetting::H, points: dataset(0.0, |_| 10.0).points[..5].to_vec() };
        assert!(matches!(fit_fringe(&few), Err(Error::Fit(_))));

        let narrow = FringeDataset { nist_basis: AnalyzerSetting::H, points: dataset(0.0, |_| 10.0).points[..10].to_vec() };
        assert!(matches!(fit_fringe(&narrow), Err(Error::Fit(_))));

        // Angles equal mod 90°: 0/90/180 only.
        let degenerate = FringeDataset {
            nist_basis: AnalyzerSetting::H,
            points: [0.0, 90.0, 180.0, 0.0, 90.0, 180.0]
                .iter()
                .map(|&t| FringePoint { umd_angle_deg: t, counts: 100.0, duration_s: 1.0, post_timeout: false })
                .collect(),
        };
        assert!(matches!(fit_fringe(&degenerate), Err(Error::Fit(_))));
    }

    #[test]
    fn scaling_counts_keeps_visibility() {
        let d = dataset(45.0, |t| model(400.0, 0.7, 45.0, t).round());
        let f1 = fit_fringe(&d).unwrap();
        let mut scaled = d.clone();
        for p in &mut scaled.points {
            p.counts *= 3.0;
        }
        let f3 = fit_fringe(&scaled).unwrap();
        assert_abs_diff_eq!(f1.visibility, f3.visibility, epsilon = 1e-12);
        assert_abs_diff_eq!(f3.a, 3.0 * f1.a, epsilon = 1e-9);
        assert_abs_diff_eq!(f3.b, 3.0 * f1.b, epsilon = 1e-9);
        assert_abs_diff_eq!(f3.c, 3.0 * f1.c, epsilon = 1e-9);
        assert_abs_diff_eq!(f1.phase_deg, 45.0, epsilon = 0.5);
    }

    #[test]
    fn poisson_fringes_recover_visibility() {
        // Peak count ≈ 3000 per point at V = 0.87.
        let mean = 3000.0 / 1.87;
        let mut within_2sigma = 0;
        for seed in 0..100 {
            let mut rng = stream_rng(seed, 3);
            let d = dataset(0.0, |t| Poisson::new(model(mean, 0.87, 0.0, t)).unwrap().sample(&mut rng));
            let f = fit_fringe(&d).unwrap();
            assert!((f.visibility - 0.87).abs() <= 0.02, "seed {seed}: V = {}", f.visibility);
            if (f.visibility - 0.87).abs() <= 2.0 * f.sigma_visibility {
                within_2sigma += 1;
            }
        }
        // Nominal 2σ coverage is 95.4 %; allow sampling slack.
        assert!(within_2sigma >= 90, "{within_2sigma}/100 within 2σ");
    }

    #[test]
    fn sigma_matches_parametric_bootstrap() {
        let mut rng = stream_rng(11, 0);
        let d = dataset(90.0, |t| Poisson::new(model(400.0, 0.80, 90.0, t)).unwrap().sample(&mut rng));
        let fit = fit_fringe(&d).unwrap();
        let reps = 2000;
        let vs: Vec<f64> = (0..reps)
            .map(|_| {
                let resampled = FringeDataset {
                    nist_basis: d.nist_basis,
                    points: d
                        .points
                        .iter()
                        .map(|p| {
                            let mu = fit.rate_at(p.umd_angle_deg) * p.duration_s;
                            FringePoint { counts: Poisson::new(mu).unwrap().sample(&mut rng), ..*p }
                        })
                        .collect(),
                };
                fit_fringe(&resampled).unwrap().visibility
            })
            .collect();
        let m = vs.iter().sum::<f64>() / reps as f64;
        let sd = (vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let rel = (fit.sigma_visibility - sd).abs() / sd;
        assert!(rel <= 0.2, "propagated {} vs bootstrap {sd}", fit.sigma_visibility);
    }

    #[test]
    fn corrected_fit_without_flags_is_identical() {
        let d = dataset(0.0, |t| model(500.0, 0.8, 0.0, t).round());
        assert_eq!(fit_fringe(&d).unwrap(), corrected_fit(&d).unwrap());
    }

    /// Synthetic V-basis fringe: 44 mean counts per point at V = 0.82 puts
    /// σ_V at ≈ 0.03, and depressing the peak point from 80 to 32 counts
    /// drags the full fit down to 0.76.
    #[test]
    fn outlier_exclusion_restores_visibility() {
        let mut d = dataset(90.0, |t| model(44.0, 0.82, 90.0, t).round());
        let peak = d.points.iter_mut().find(|p| p.umd_angle_deg == 90.0).unwrap();
        assert_eq!(peak.counts, 80.0);
        peak.counts = 32.0;
        peak.post_timeout = true;
        let full = fit_fringe(&d).unwrap();
        let corr = corrected_fit(&d).unwrap();
        assert_eq!(format!("{:.2}", full.visibility), "0.76");
        assert_eq!(format!("{:.2}", corr.visibility), "0.82");
        assert_eq!(format!("{:.2}", corr.sigma_visibility), "0.03");
        assert!((full.sigma_visibility - 0.03).abs() < 0.005);
        assert_eq!(corr.points_used, 18);
    }

    #[test]
    fn flagging_an_on_curve_point_barely_moves_v() {
        let mut rng = stream_rng(5, 0);
        let d = dataset(45.0, |t| Poisson::new(model(700.0, 0.8, 45.0, t)).unwrap().sample(&mut rng));
        let fit = fit_fringe(&d).unwrap();
        let mut on_curve = d.clone();
        let p = &mut on_curve.points[4];
        p.counts = (fit.rate_at(p.umd_angle_deg) * p.duration_s).round();
        let refit = fit_fringe(&on_curve).unwrap();
        on_curve.points[4].post_timeout = true;
        let dropped = corrected_fit(&on_curve).unwrap();
        assert!((dropped.visibility - refit.visibility).abs() < refit.sigma_visibility / 10.0);
        assert!(corrected_fit(&FringeDataset { points: on_curve.points[..6].iter().map(|p| FringePoint { post_timeout: true, ..*p }).collect(), ..on_curve.clone() }).is_err());
    }

    fn bv(v: [f64; 4], s: [f64; 4]) -> [BasisVisibility; 4] {
        let bases = [0.0, 45.0, 90.0, 135.0];
        std::array::from_fn(|k| BasisVisibility { basis: bases[k], visibility: v[k], sigma: s[k] })
    }

    #[test]
    fn chsh_estimator_examples() {
        let sig = [0.02, 0.03, 0.03, 0.03];
        let raw = chsh_from_visibilities(&bv([0.87, 0.78, 0.76, 0.79], sig), false);
        assert_abs_diff_eq!(raw.s, TWO_SQRT2 * 0.8, epsilon = 1e-12);
        assert_eq!(format!("{:.2}", raw.s), "2.26");
        assert_eq!(format!("{:.2}", raw.sigma_s), "0.04");
        assert!(raw.violation());

        let perfect = chsh_from_visibilities(&bv([1.0; 4], [0.0; 4]), false);
        assert_abs_diff_eq!(perfect.s, TWO_SQRT2, epsilon = 1e-15);
        assert_eq!(perfect.sigma_s, 0.0);
    }

    #[test]
    fn chsh_is_increasing_in_each_visibility() {
        let mut rng = stream_rng(6, 0);
        for _ in 0..200 {
            let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..0.99));
            let k = rng.random_range(0..4);
            let mut w = v;
            w[k] += 0.01;
            assert!(chsh_from_visibilities(&bv(w, [0.01; 4]), false).s > chsh_from_visibilities(&bv(v, [0.01; 4]), false).s);
        }
    }

    #[test]
    fn chsh_json_schema() {
        let r = chsh_from_visibilities(&bv([0.9; 4], [0.01; 4]), true);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v["S"].is_number() && v["sigma_S"].is_number());
        assert_eq!(v["corrected"], true);
        assert_eq!(v["visibilities"][2]["basis"], 90.0);
        assert!(v["visibilities"][0]["V"].is_number() && v["visibilities"][0]["sigma"].is_number());
    }

    #[test]
    fn violation_flag() {
        assert!(is_violation(2.3, 0.1));
        assert!(!is_violation(2.19, 0.1));
        assert!(!is_violation(1.9, 0.0));
    }

    fn window(term: usize, counts: [u64; 4], post_timeout: bool) -> WindowCounts {
        WindowCounts { start_s: term as f64, term, counts, post_timeout, min_ref_fidelity: 0.99, compensation_time_s: 0.12 }
    }

    #[test]
    fn correlation_from_counts() {
        let (e, se) = window(0, [40, 10, 10, 40], false).correlation().unwrap();
        assert_abs_diff_eq!(e, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(se, (0.64f64 / 100.0).sqrt(), epsilon = 1e-15);
        assert!(window(0, [0; 4], false).correlation().is_none());
    }

    #[test]
    fn series_groups_and_averages() {
        let signs = [1.0, -1.0, 1.0, 1.0];
        let good = |t| {
            // E = ±0.6 with the sign that adds up in S.
            if signs[t] > 0.0 { [40, 10, 10, 40] } else { [10, 40, 40, 10] }
        };
        let mut w = Vec::new();
        for g in 0..3 {
            for t in 0..4 {
                let bad = g == 1;
                w.push(window(t, if bad { [25; 4] } else { good(t) }, bad && t == 0));
            }
        }
        // A partial trailing group is dropped.
        w.push(window(0, [1; 4], false));
        let s = longrun_series(&w, signs);
        assert_eq!(s.len(), 3);
        assert_abs_diff_eq!(s[0].s, 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1].s, 0.0, epsilon = 1e-12);
        assert!(s[1].post_timeout);
        let raw = average_s(&s, false).unwrap();
        let corr = average_s(&s, true).unwrap();
        assert_abs_diff_eq!(raw.mean, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.mean, 2.4, epsilon = 1e-12);
        assert_eq!(corr.std, 0.0);
        assert!(corr.mean >= raw.mean);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::log_spaced(&[0.12, 0.12, 1.2, 55.0, 100.0, 0.01], 0.1, 100.0, 3).unwrap();
        assert_eq!(h.counts, vec![3, 1, 2]);
        assert_abs_diff_eq!(h.edges[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.mode_lower_edge(), 0.1, epsilon = 1e-12);
    }
}
