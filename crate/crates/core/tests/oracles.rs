use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as SNormal};

use evprofile::dataset::{filter_uncontrolled, resample_to_soc_grid, ChargingSession};
use evprofile::experiment::{run_ablation, run_forecast_experiment, soc_error_by_hour};
use evprofile::gmm::{
    cv_score_for, fit_gmm_em, kfold_indices, select_gmm_by_cv, Component, CvConfig, CvScore, GmmModel, TargetKind,
};
use evprofile::metrics::{kde_1d, EmaeNormalizer};
use evprofile::pipeline::{prepare, train_models, RunConfig, SplitConfig, TrainedModels};
use evprofile::refiner::{
    build_history_matrix, distances, refine, HistoryMatrix, HistoryRow, RefineOptions, SessionHistory,
};
use evprofile::rf::{fit_forest, Criterion, MaxFeatures, Node, RfHyperparams};
use evprofile::seed::rng_for;
use evprofile::synth::{generate, SynthConfig};
use evprofile::transpose::{charging_duration, TranspositionInput};
use evprofile::SocGridProfile;

fn bimodal(seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[]);
    let a = Normal::new(40.0, 2.0).unwrap();
    let b = Normal::new(80.0, 2.0).unwrap();
    let mut xs: Vec<f64> = (0..150).map(|_| a.sample(&mut rng)).collect();
    xs.extend((0..150).map(|_| b.sample(&mut rng)));
    xs
}

/// Held-out negative log-likelihood by direct density evaluation.
fn nll_oracle(m: &GmmModel, held: &[f64]) -> f64 {
    -held
        .iter()
        .map(|&x| {
            m.components
                .iter()
                .map(|c| {
                    c.weight * (-(x - c.mean).powi(2) / (2.0 * c.variance)).exp()
                        / (2.0 * std::f64::consts::PI * c.variance).sqrt()
                })
                .sum::<f64>()
                .ln()
        })
        .sum::<f64>()
        / held.len() as f64
}

#[test]
fn bimodal_selection_picks_two_and_matches_exhaustive_scoring() {
    for seed in 0..4 {
        let xs = bimodal(seed);
        let cv = CvConfig {
            mc_max: 3,
            seed,
            ..CvConfig::default()
        };
        let sel = select_gmm_by_cv(&xs, TargetKind::Capacity, &cv).unwrap();
        assert_eq!(sel.selected_components(), 2, "seed {seed}");

        let folds = kfold_indices(xs.len(), cv.k_folds, cv.seed);
        let mut best = (0, f64::INFINITY);
        for mc in 1..=3 {
            let mut total = 0.0;
            for (f, fold) in folds.iter().enumerate() {
                let train: Vec<f64> = (0..xs.len()).filter(|i| !fold.contains(i)).map(|i| xs[i]).collect();
                let held: Vec<f64> = fold.iter().map(|&i| xs[i]).collect();
                let fseed = evprofile::seed::derive_seed(cv.seed, &[mc as u64, f as u64]);
                let fit = fit_gmm_em(&train, mc, TargetKind::Capacity, fseed, &cv.em).unwrap();
                total += nll_oracle(&fit.model, &held);
            }
            let score = total / folds.len() as f64;
            let lib = sel.scores[mc - 1].unwrap();
            assert!(
                (score - lib).abs() <= 1e-9 * score.abs().max(1.0),
                "mc {mc}: {score} vs {lib}"
            );
            if score < best.1 {
                best = (mc, score);
            }
        }
        assert_eq!(best.0, 2);
    }
}

#[test]
fn draw_mae_score_matches_quadrature() {
    let m = GmmModel {
        target_kind: TargetKind::Capacity,
        components: vec![
            Component {
                weight: 0.3,
                mean: 40.0,
                variance: 9.0,
            },
            Component {
                weight: 0.7,
                mean: 75.0,
                variance: 25.0,
            },
        ],
    };
    let held = [35.0, 50.0, 60.0, 77.0, 90.0];
    let quad = |x: f64| {
        let (lo, hi, n) = (-20.0, 140.0, 160_000);
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let y = lo + (i as f64 + 0.5) * h;
                let dens: f64 = m
                    .components
                    .iter()
                    .map(|c| {
                        c.weight * (-(y - c.mean).powi(2) / (2.0 * c.variance)).exp()
                            / (2.0 * std::f64::consts::PI * c.variance).sqrt()
                    })
                    .sum();
                (x - y).abs() * dens * h
            })
            .sum::<f64>()
    };
    let want = held.iter().map(|&x| quad(x)).sum::<f64>() / held.len() as f64;
    assert!((CvScore::DrawMae.evaluate(&m, &held) - want).abs() < 1e-6);
    let crps = CvScore::Crps.evaluate(&m, &held);
    assert!(crps > 0.0 && crps < want);
}

#[test]
fn expectation_mae_is_flat_across_component_counts() {
    // The mixture mean equals the sample mean at every EM fixed point, so
    // this score cannot tell candidates apart.
    let xs = bimodal(9);
    let cv = CvConfig {
        score: CvScore::ExpectationMae,
        ..CvConfig::default()
    };
    let folds = kfold_indices(xs.len(), 5, 0);
    let s1 = cv_score_for(&xs, &folds, 1, TargetKind::Capacity, &cv).unwrap();
    let s2 = cv_score_for(&xs, &folds, 2, TargetKind::Capacity, &cv).unwrap();
    assert!((s1 - s2).abs() < 1e-6 * s1);
}

#[test]
fn sampling_matches_mixture_cdf() {
    let m = GmmModel {
        target_kind: TargetKind::ArrivalSoc,
        components: vec![
            Component {
                weight: 0.3,
                mean: 30.0,
                variance: 25.0,
            },
            Component {
                weight: 0.7,
                mean: 70.0,
                variance: 64.0,
            },
        ],
    };
    let mut rng = rng_for(5, &[]);
    let mut xs: Vec<f64> = (0..100_000).map(|_| m.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let parts: Vec<(f64, SNormal)> = m
        .components
        .iter()
        .map(|c| (c.weight, SNormal::new(c.mean, c.variance.sqrt()).unwrap()))
        .collect();
    let cdf = |x: f64| parts.iter().map(|(w, n)| w * n.cdf(x)).sum::<f64>();
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn root_split_lands_on_the_step() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let y: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 8 { 10.0 } else { 50.0 }, 3.0]).collect();
    for criterion in [Criterion::Squared, Criterion::Absolute] {
        let hp = RfHyperparams {
            n_estimators: 1,
            max_depth: 1,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: false,
            criterion,
        };
        let m = fit_forest(&x, &y, vec!["x".into()], &hp, 0).unwrap();
        // exhaustive scan: every midpoint, pick the lowest summed impurity
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..20 {
            let thr = (k as f64 - 1.0 + k as f64) / 2.0;
            let cost: f64 = [&y[..k], &y[k..]]
                .iter()
                .map(|part| {
                    let m = part.iter().map(|r| r[0]).sum::<f64>() / part.len() as f64;
                    part.iter().map(|r| (r[0] - m).powi(2)).sum::<f64>()
                })
                .sum();
            if cost < best.0 {
                best = (cost, thr);
            }
        }
        match &m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, best.1);
                assert!(*threshold > 7.0 && *threshold < 8.0);
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }
}

fn synth_samples(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let fleet = generate(&SynthConfig {
        n_sessions: n,
        ..SynthConfig::default()
    });
    fleet
        .sessions
        .iter()
        .map(|s| {
            let temp = fleet.weather.nearest(s.t_a()).unwrap();
            (vec![temp, s.capacity_kwh], resample_to_soc_grid(s).unwrap().into_vec())
        })
        .unzip()
}

#[test]
fn interpolating_tree_reproduces_training_profiles() {
    let (x, y) = synth_samples(80);
    let hp = RfHyperparams {
        n_estimators: 1,
        max_depth: 1000,
        min_samples_split: 2,
        min_samples_leaf: 1,
        max_features: MaxFeatures::Sqrt,
        bootstrap: false,
        criterion: Criterion::Squared,
    };
    let mut seen = std::collections::HashSet::new();
    let rows: Vec<usize> = (0..x.len())
        .filter(|&i| seen.insert((x[i][0].to_bits(), x[i][1].to_bits())))
        .collect();
    let xs: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<Vec<f64>> = rows.iter().map(|&i| y[i].clone()).collect();
    let m = fit_forest(&xs, &ys, vec!["t".into(), "c".into()], &hp, 3).unwrap();
    for (xi, yi) in xs.iter().zip(&ys) {
        assert_eq!(&m.predict(xi), yi);
    }
}

#[test]
fn more_trees_reduce_seed_variance() {
    let (x, y) = synth_samples(150);
    let queries = [[5.0, 40.0], [12.0, 60.0], [18.0, 80.0], [0.0, 62.0]];
    let spread = |n_trees: usize| {
        let hp = RfHyperparams {
            n_estimators: n_trees,
            min_samples_leaf: 2,
            ..RfHyperparams::default()
        };
        let preds: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|s| {
                let m = fit_forest(&x, &y, vec!["t".into(), "c".into()], &hp, 1000 + s).unwrap();
                queries.iter().map(|q| m.predict(q)).collect()
            })
            .collect();
        let mut total = 0.0;
        for qi in 0..queries.len() {
            for o in 0..101 {
                let v: Vec<f64> = preds.iter().map(|p| p[qi][o]).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                total += v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
            }
        }
        total
    };
    let (v10, v200) = (spread(10), spread(200));
    assert!(v200 < v10, "{v200} !< {v10}");
}

#[test]
fn refine_matches_brute_force_scan() {
    let mut rng = rng_for(77, &[]);
    for case in 0..100 {
        let n_rows = rng.random_range(1..=100);
        let rows: Vec<HistoryRow> = (0..n_rows)
            .map(|j| {
                // coarse values make exact ties common
                let p: Vec<f64> = (0..101).map(|_| rng.random_range(0..6) as f64 * 10.0).collect();
                HistoryRow {
                    session_id: format!("r{j}"),
                    capacity: [40.0, 60.0, 80.0][rng.random_range(0..3)],
                    profile: SocGridProfile::new(p).unwrap(),
                }
            })
            .collect();
        let m = HistoryMatrix::new(rows).unwrap();
        let start = rng.random_range(0..60) as f64;
        let n_obs = rng.random_range(1..15);
        let observed: Vec<(f64, f64)> = (0..n_obs)
            .map(|i| (start + i as f64 * 0.7, rng.random_range(0..6) as f64 * 10.0))
            .collect();
        let h = SessionHistory {
            capacity: [40.0, 60.0, 80.0][rng.random_range(0..3)],
            observed: observed.clone(),
            soc_target: 95.0,
        };
        // brute force: rebuild the query by hand
        let mut pts: Vec<(usize, f64)> = Vec::new();
        for &(s, p) in &observed {
            let g = s.round() as usize;
            if pts.last().map(|l| l.0) != Some(g) {
                pts.push((g, p));
            }
        }
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, r) in m.rows.iter().enumerate() {
            let mut d2 = (r.capacity - h.capacity).powi(2);
            for &(g, p) in &pts {
                d2 += (r.profile.powers()[g] - p).powi(2);
            }
            if d2.sqrt() < best.1 {
                best = (j, d2.sqrt());
            }
        }
        let got = refine(&m, &h).unwrap();
        assert_eq!(got.row, best.0, "case {case}");
        assert_eq!(got.distance, best.1);
        let cur = pts.last().unwrap().0;
        assert_eq!(got.powers, m.rows[best.0].profile.powers()[cur..=95].to_vec());
        assert!(distances(&m, &h, &RefineOptions::default()).iter().all(|&d| d >= 0.0));
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.rf.n_estimators = 40;
    cfg
}

fn trained(n: usize) -> (evprofile::pipeline::PreparedData, TrainedModels) {
    let fleet = generate(&SynthConfig {
        n_sessions: n,
        ..SynthConfig::default()
    });
    let data = prepare(fleet.sessions, &fleet.weather, &SplitConfig::default()).unwrap();
    let models = train_models(&data.split.train, &small_config()).unwrap();
    (data, models)
}

#[test]
fn clone_fleet_first_refinement_is_exact() {
    let (data, mut models) = trained(120);
    // every test session is also in the history; capped sessions can share
    // (capacity, first power) exactly, so only uncapped ones are used
    let unc = filter_uncontrolled(&data.split.test);
    let mut keys: Vec<(u64, u64)> = unc
        .iter()
        .map(|s| (s.capacity_kwh.to_bits(), s.records[0].power.to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    assert_eq!(keys.len(), unc.len());
    models.matrix = build_history_matrix(&unc).unwrap();
    let fe = run_forecast_experiment(&models, &unc, 3, EmaeNormalizer::Envelope, 1).unwrap();
    for s in &fe.sessions {
        assert_eq!(s.emae[2], Some(0.0), "{}", s.session_id);
    }

    // a fleet of identical sessions
    let one = data.split.test[0].clone();
    let clones: Vec<ChargingSession> = (0..5)
        .map(|i| ChargingSession {
            session_id: format!("clone{i}"),
            ..one.clone()
        })
        .collect();
    models.matrix = build_history_matrix(&clones).unwrap();
    let fe = run_forecast_experiment(&models, &clones, 1, EmaeNormalizer::Envelope, 1).unwrap();
    assert!(fe.sessions.iter().all(|s| s.emae[2] == Some(0.0)));
}

#[test]
fn surrogate_reproduces_realized_durations() {
    let fleet = generate(&SynthConfig {
        n_sessions: 300,
        ..SynthConfig::default()
    });
    for s in filter_uncontrolled(&fleet.sessions) {
        let input = TranspositionInput {
            profile: resample_to_soc_grid(&s).unwrap(),
            capacity: s.capacity_kwh,
            soc_start: s.soc_a(),
            soc_end: s.soc_d(),
            dt: 1.0,
        };
        let d = charging_duration(&input).unwrap();
        assert!(
            (d - s.duration_minutes()).abs() <= 2.0,
            "{}: {d} vs {}",
            s.session_id,
            s.duration_minutes()
        );
    }
}

#[test]
fn experiments_are_seed_reproducible() {
    let (data, models) = trained(90);
    let a = run_forecast_experiment(&models, &data.split.test, 5, EmaeNormalizer::Envelope, 4).unwrap();
    let b = run_forecast_experiment(&models, &data.split.test, 5, EmaeNormalizer::Envelope, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.stats("0"), a.iterations[0].summary.as_ref());
    assert_eq!(a.iterations.len(), 7);

    let unc = filter_uncontrolled(&data.split.test);
    let r1 = run_ablation(&models, &unc, 2, 1.0, 8).unwrap();
    let r2 = run_ablation(&models, &unc, 2, 1.0, 8).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.len(), 8);
    for r in &r1 {
        assert_eq!(r.session_count(), unc.len());
        assert_eq!(r.rows.len(), 2 * unc.len());
        let perfect = r.flags.capacity_known && r.flags.soc_start_known && r.flags.soc_end_known;
        assert_eq!(r.rows.iter().all(|x| x.energy_err_pu.is_none()), perfect);
        assert_eq!(r.energy_err.is_none(), perfect);
    }

    let h1 = soc_error_by_hour(&data.split.test, &models.soc, 3, 2);
    assert_eq!(h1, soc_error_by_hour(&data.split.test, &models.soc, 3, 2));
}

#[test]
fn kde_normalization_and_degenerate_peak() {
    let xs = [40.0, 41.0, 58.0, 60.0, 64.0, 77.0, 80.0, 82.0];
    let k = kde_1d(&xs, None).unwrap();
    assert!((k.integral() - 1.0).abs() < 1e-3);
    let same = kde_1d(&[57.4; 6], None).unwrap();
    assert!((same.integral() - 1.0).abs() < 1e-3);
    let peak = same
        .grid
        .iter()
        .zip(&same.density)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert!((peak - 57.4).abs() < same.bandwidth / 2.0);
    assert!(kde_1d(&[1.0], None).is_err());
}
