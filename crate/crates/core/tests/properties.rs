use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;

use evprofile::dataset::{
    join_weather, resample_points, resample_to_soc_grid, split_dataset, ChargingSession, SessionRecord, SplitMode,
    WeatherTable,
};
use evprofile::gmm::{fit_gmm_em, EmOptions, TargetKind};
use evprofile::metrics::{emae, DistributionSummary, EmaeDomain};
use evprofile::rf::{fit_forest, Criterion, MaxFeatures, RfHyperparams};
use evprofile::transpose::{charging_duration, transpose_to_time, TranspositionInput};
use evprofile::{SocGridProfile, GRID_LEN};

fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 3, 1)
        .unwrap()
        .and_hms_opt(8, 0, 0)
        .unwrap()
}

fn session_from(id: usize, start_min: i64, socs: &[f64], powers: &[f64]) -> ChargingSession {
    let records = socs
        .iter()
        .zip(powers)
        .enumerate()
        .map(|(i, (&soc, &power))| SessionRecord {
            timestamp: t0() + Duration::minutes(start_min + i as i64),
            soc,
            power,
        })
        .collect();
    ChargingSession::new(format!("s{id:03}"), "c", records, 50.0, false).unwrap()
}

/// Non-decreasing SoC track with at least one step up, plus powers.
fn session_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                0.0f64..60.0,
                prop::collection::vec(0.0f64..3.0, n - 1),
                prop::collection::vec(0.0f64..150.0, n),
            )
        })
        .prop_filter_map("needs SoC progress", |(start, steps, powers)| {
            let mut socs = vec![start];
            for s in steps {
                socs.push((socs.last().unwrap() + s).min(100.0));
            }
            (socs.last().unwrap() > &start).then_some((socs, powers))
        })
}

fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..200.0, GRID_LEN)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resampling_grid_profiles_is_idempotent(p in profile_strategy()) {
        let pts: Vec<(f64, f64)> = p.iter().enumerate().map(|(s, &v)| (s as f64, v)).collect();
        let once = resample_points(&pts).unwrap();
        prop_assert_eq!(once.powers(), &p[..]);
        let again: Vec<(f64, f64)> = once.powers().iter().enumerate().map(|(s, &v)| (s as f64, v)).collect();
        prop_assert_eq!(resample_points(&again).unwrap(), once);
    }

    #[test]
    fn resampled_values_stay_within_observed_range((socs, powers) in session_strategy()) {
        let s = session_from(0, 0, &socs, &powers);
        let g = resample_to_soc_grid(&s).unwrap();
        let lo = powers.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in g.powers() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
        let mean_at = |soc: f64| {
            let v: Vec<f64> = socs.iter().zip(&powers).filter(|(s, _)| **s == soc).map(|(_, p)| *p).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (head, tail) = (mean_at(s.soc_a()), mean_at(s.soc_d()));
        for k in 0..GRID_LEN {
            if (k as f64) <= s.soc_a() {
                prop_assert!((g.at(k) - head).abs() <= 1e-9);
            }
            if (k as f64) >= s.soc_d() {
                prop_assert!((g.at(k) - tail).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn split_preserves_the_multiset(n in 2usize..60, ratio in 0.05f64..0.95, seed in any::<u64>(), random in any::<bool>()) {
        let sessions: Vec<ChargingSession> = (0..n)
            .map(|i| session_from(i, (i as i64 * 37) % 101 * 60, &[10.0, 20.0], &[50.0, 40.0]))
            .collect();
        let mode = if random { SplitMode::SeededRandom } else { SplitMode::Chronological };
        let split = split_dataset(sessions.clone(), ratio, mode, seed).unwrap();
        let mut ids: Vec<String> = split.train.iter().chain(&split.test).map(|s| s.session_id.clone()).collect();
        ids.sort();
        let mut want: Vec<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        let target = ratio * n as f64;
        prop_assert!((split.train.len() as f64 - target).abs() <= 1.0);
    }

    #[test]
    fn join_sets_only_the_temperature(offsets in prop::collection::vec(0i64..2000, 1..20)) {
        let weather = WeatherTable::from_pairs((0..48).map(|h| (t0() + Duration::hours(h), h as f64 * 0.5)));
        let sessions: Vec<ChargingSession> = offsets
            .iter()
            .enumerate()
            .map(|(i, &m)| session_from(i, m, &[20.0, 21.0, 23.0], &[60.0, 55.0, 50.0]))
            .collect();
        let (joined, errs) = join_weather(sessions.clone(), &weather);
        prop_assert!(errs.is_empty());
        for (a, b) in sessions.iter().zip(&joined) {
            let mut b = b.clone();
            prop_assert!(b.temp_at_arrival.is_some());
            b.temp_at_arrival = None;
            prop_assert_eq!(a, &b);
        }
    }

    #[test]
    fn em_is_monotone_and_weights_normalized(
        xs in prop::collection::vec(-50.0f64..150.0, 12..80),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let fit = fit_gmm_em(&xs, k, TargetKind::Capacity, seed, &EmOptions::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            prop_assert!(w[1] - w[0] >= -1e-9, "log-likelihood dropped: {:?}", w);
        }
        let total: f64 = fit.model.components.iter().map(|c| c.weight).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(fit.model.components.iter().all(|c| c.variance >= 1e-6));
    }

    #[test]
    fn forest_predictions_within_training_bounds(
        rows in prop::collection::vec(((-10.0f64..30.0, 20.0f64..100.0), prop::collection::vec(0.0f64..150.0, 5)), 2..25),
        q in (-20.0f64..40.0, 0.0f64..120.0),
        seed in any::<u64>(),
        absolute in any::<bool>(),
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|((a, b), _)| vec![*a, *b]).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|(_, p)| p.clone()).collect();
        let hp = RfHyperparams {
            n_estimators: 7,
            max_depth: 6,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Log2,
            bootstrap: true,
            criterion: if absolute { Criterion::Absolute } else { Criterion::Squared },
        };
        let m = fit_forest(&x, &y, vec!["a".into(), "b".into()], &hp, seed).unwrap();
        let p = m.predict(&[q.0, q.1]);
        for o in 0..5 {
            let lo = y.iter().map(|r| r[o]).fold(f64::INFINITY, f64::min);
            let hi = y.iter().map(|r| r[o]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p[o] >= lo && p[o] <= hi);
        }
    }

    #[test]
    fn emae_is_bounded_and_symmetric(pairs in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = emae(&a, &b, EmaeDomain::SocIndexed).unwrap().value;
        let ba = emae(&b, &a, EmaeDomain::SocIndexed).unwrap().value;
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(emae(&a, &a, EmaeDomain::SocIndexed).unwrap().value, 0.0);
    }

    #[test]
    fn transposition_conserves_energy(
        p in prop::collection::vec(1.0f64..200.0, GRID_LEN),
        c in 10.0f64..120.0,
        a in 0.0f64..99.0,
        span in 0.5f64..100.0,
        dt in prop::sample::select(vec![0.25, 1.0, 2.0, 5.0]),
    ) {
        let b = (a + span).min(100.0);
        let input = TranspositionInput { profile: SocGridProfile::new(p).unwrap(), capacity: c, soc_start: a, soc_end: b, dt };
        let ts = transpose_to_time(&input).unwrap();
        let rel = (ts.delivered_energy() - ts.scheduled_energy).abs() / ts.scheduled_energy;
        prop_assert!(rel <= 0.02, "relative energy gap {rel}");
        prop_assert!(ts.powers.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn larger_powers_never_lengthen_charging(
        p in prop::collection::vec(0.0f64..200.0, GRID_LEN),
        bump in prop::collection::vec(0.0f64..50.0, GRID_LEN),
        c in 10.0f64..120.0,
        a in 0.0f64..50.0,
        b in 50.0f64..100.0,
    ) {
        let lo = TranspositionInput { profile: SocGridProfile::new(p.clone()).unwrap(), capacity: c, soc_start: a, soc_end: b, dt: 1.0 };
        let hi_p: Vec<f64> = p.iter().zip(&bump).map(|(x, y)| x + y).collect();
        let hi = TranspositionInput { profile: SocGridProfile::new(hi_p).unwrap(), ..lo.clone() };
        prop_assert!(charging_duration(&hi).unwrap() <= charging_duration(&lo).unwrap());
    }

    #[test]
    fn doubling_capacity_doubles_duration_and_energy(
        p in prop::collection::vec(0.0f64..200.0, GRID_LEN),
        c in 10.0f64..120.0,
        a in 0.0f64..50.0,
        b in 50.0f64..100.0,
    ) {
        let one = TranspositionInput { profile: SocGridProfile::new(p).unwrap(), capacity: c, soc_start: a, soc_end: b, dt: 1.0 };
        let two = TranspositionInput { capacity: 2.0 * c, ..one.clone() };
        prop_assert_eq!(charging_duration(&two).unwrap(), 2.0 * charging_duration(&one).unwrap());
        prop_assert_eq!(
            transpose_to_time(&two).unwrap().scheduled_energy,
            2.0 * transpose_to_time(&one).unwrap().scheduled_energy
        );
    }

    #[test]
    fn box_statistics_match_percentile_oracle(xs in prop::collection::vec(-1e3f64..1e3, 1..1000)) {
        let s = DistributionSummary::from_samples(&xs).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let pct = |q: f64| {
            // order statistic at rank (n-1)q, linear between neighbours
            let h = (sorted.len() - 1) as f64 * q;
            let i = h as usize;
            if i + 1 >= sorted.len() || h == i as f64 { sorted[i] } else { sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i]) }
        };
        prop_assert_eq!(s.q1, pct(0.25));
        prop_assert_eq!(s.median, pct(0.5));
        prop_assert_eq!(s.q3, pct(0.75));
        prop_assert!(s.q1 <= s.median && s.median <= s.q3);
        let iqr = s.q3 - s.q1;
        let inside: Vec<f64> = sorted.iter().cloned().filter(|&x| x >= s.q1 - 1.5 * iqr && x <= s.q3 + 1.5 * iqr).collect();
        prop_assert_eq!(s.lo, inside[0]);
        prop_assert_eq!(s.hi, *inside.last().unwrap());
        prop_assert_eq!(s.outliers, xs.len() - inside.len());
    }
}
