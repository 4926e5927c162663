use proptest::prelude::*;

use polarlink::analysis::{chsh_from_visibilities, fit_fringe, BasisVisibility, FringeDataset, FringePoint};
use polarlink::apc::Controller;
use polarlink::exec::stream_rng;
use polarlink::polmath::{
    outcome_prob, sop_fidelity, AnalyzerSetting, PolTransform, Port, StokesVector, TwoQubitPolState,
};
use polarlink::source::find_coincidences_ps;

fn transform(seed: u64) -> PolTransform {
    PolTransform::random(&mut stream_rng(seed, 0))
}

fn sop(seed: u64) -> StokesVector {
    StokesVector::random(&mut stream_rng(seed, 1))
}

/// Largest matching by exhaustive augmenting paths over all compatible pairs.
fn oracle_matches(signal: &[i64], idler: &[i64], window: i64, delay: i64) -> u64 {
    fn augment(u: usize, s: &[i64], t: &[i64], w: i64, d: i64, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for v in 0..t.len() {
            if 2 * (s[u] + d - t[v]).abs() <= w && !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|o| augment(o, s, t, w, d, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; idler.len()];
    (0..signal.len())
        .filter(|&u| augment(u, signal, idler, window, delay, &mut vec![false; idler.len()], &mut owner))
        .count() as u64
}

fn sorted(mut v: Vec<i64>) -> Vec<i64> {
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn matcher_is_a_maximum_matching(
        s in prop::collection::vec(0i64..400, 0..60).prop_map(sorted),
        t in prop::collection::vec(0i64..400, 0..60).prop_map(sorted),
        window in 1i64..40,
        delay in -30i64..30,
    ) {
        let fast = find_coincidences_ps(&s, &t, window, delay).unwrap();
        prop_assert_eq!(fast, oracle_matches(&s, &t, window, delay));
        // Swapping the streams and negating the delay describes the same pairs.
        prop_assert_eq!(fast, find_coincidences_ps(&t, &s, window, -delay).unwrap());
    }

    #[test]
    fn rotations_preserve_fidelity(r in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let (r, a, b) = (transform(r), sop(a), sop(b));
        let before = sop_fidelity(&a, &b);
        let after = sop_fidelity(&r.apply(&a), &r.apply(&b));
        prop_assert!((before - after).abs() < 1e-12);
        let back = r.inverse().compose(&r);
        prop_assert!(back.angle() < 1e-7);
    }

    #[test]
    fn controller_reaches_any_rotation(seed in any::<u64>()) {
        let target = transform(seed);
        let ctrl = Controller::from_transform(&target);
        let err = ctrl.to_transform().inverse().compose(&target).angle();
        prop_assert!(err < 1e-7, "residual rotation {err}");
    }

    #[test]
    fn port_probabilities_form_a_distribution(
        v in 0.0f64..=1.0,
        a in 0.0f64..180.0,
        b in 0.0f64..180.0,
        ch in any::<u64>(),
    ) {
        let state = TwoQubitPolState::new(v).unwrap();
        let (a, b, ch) = (AnalyzerSetting::new(a), AnalyzerSetting::new(b), transform(ch));
        let mut total = 0.0;
        for pa in Port::BOTH {
            for pb in Port::BOTH {
                let p = outcome_prob(&state, &a, pa, &b, pb, &ch);
                prop_assert!((-1e-12..=0.5 + 1e-12).contains(&p));
                total += p;
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_fringes_are_recovered(
        offset in 10.0f64..5000.0,
        v in 0.05f64..0.99,
        phase in 0.0f64..180.0,
    ) {
        // r(θ) = a(1 + V cos 2(θ − φ)), sampled every 10° as mean counts over 1 s.
        let points = (0..19)
            .map(|k| {
                let th = 10.0 * k as f64;
                let counts = offset * (1.0 + v * (2.0 * (th - phase).to_radians()).cos());
                FringePoint { umd_angle_deg: th, counts, duration_s: 1.0, post_timeout: false }
            })
            .collect();
        let fit = fit_fringe(&FringeDataset { nist_basis: AnalyzerSetting::H, points }).unwrap();
        prop_assert!((fit.visibility - v).abs() < 1e-9);
        prop_assert!((fit.a - offset).abs() < 1e-6 * offset);
    }

    #[test]
    fn chsh_is_the_scaled_mean_visibility(vs in prop::array::uniform4(0.0f64..1.0), bump in 0.0f64..0.1) {
        let set = |vs: [f64; 4]| {
            [0, 1, 2, 3].map(|k| BasisVisibility { basis: 45.0 * k as f64, visibility: vs[k], sigma: 0.01 })
        };
        let s = chsh_from_visibilities(&set(vs), false);
        let mean = vs.iter().sum::<f64>() / 4.0;
        prop_assert!((s.s - 2.0 * 2f64.sqrt() * mean).abs() < 1e-12);
        let mut higher = vs;
        higher[1] += bump;
        prop_assert!(chsh_from_visibilities(&set(higher), false).s >= s.s);
    }
}
