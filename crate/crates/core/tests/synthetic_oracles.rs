//! Large-sample checks against closed forms of the synthetic generator.

use perfest::calibration::T_MAX;
use perfest::shiftsim::{synthetic_inputs, DEFAULT_POOL_SIZE};
use perfest::{
    adaptive_calibration_error, estimate_all, estimate_auc, fit_temperature, generate_synthetic, realized_auc,
    realized_report, resample_prevalence, root_brier_score, run_sweep, AucMethod, GeneratorSpec, LatentLaw, Method,
    Metric, SweepConfig, SweepKind, Temperature, TemperatureMode,
};

fn calibrated(n: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n,
        seed,
        ..GeneratorSpec::default()
    }
}

#[test]
fn uniform_latent_accuracy_and_brier_closed_forms() {
    let set = generate_synthetic(&calibrated(100_000, 11)).unwrap();
    let report = realized_report(&set).unwrap();
    // integral of max(q, 1 - q) over [0, 1]
    assert!((report.value(Metric::Accuracy).unwrap() - 0.75).abs() < 0.01);
    // E[q (1 - q)] = 1/6
    assert!((root_brier_score(&set).unwrap() - (1.0f64 / 6.0).sqrt()).abs() < 0.01);
}

#[test]
fn calibrated_set_has_small_ace_and_unit_temperature() {
    let set = generate_synthetic(&calibrated(100_000, 12)).unwrap();
    assert!(adaptive_calibration_error(&set, 15).unwrap() < 0.01);
    let fit = fit_temperature(&set, TemperatureMode::Global).unwrap();
    let Temperature::Global { t } = fit.temperature else {
        panic!()
    };
    assert!((t - 1.0).abs() < 0.05, "t = {t}");
    assert!(t < T_MAX);
}

#[test]
fn overconfident_scores_recover_temperature_two() {
    let set = generate_synthetic(&GeneratorSpec {
        distortion: 2.0,
        ..calibrated(100_000, 13)
    })
    .unwrap();
    let Temperature::Global { t } = fit_temperature(&set, TemperatureMode::Global).unwrap().temperature else {
        panic!()
    };
    assert!((t - 2.0).abs() < 0.1, "t = {t}");
}

#[test]
fn quantile_auc_tracks_rank_auc() {
    let set = generate_synthetic(&calibrated(10_000, 14)).unwrap();
    let q = realized_auc(&set, AucMethod::Quantile100).unwrap();
    let r = realized_auc(&set, AucMethod::RankExact).unwrap();
    assert!((q - r).abs() < 0.01);
}

#[test]
fn cbpe_auc_on_calibrated_identical_sets() {
    let set = generate_synthetic(&calibrated(10_000, 15)).unwrap();
    let est = estimate_auc(Method::Cbpe, &set, &set).unwrap();
    let r = realized_auc(&set, AucMethod::RankExact).unwrap();
    assert!((est.value - r).abs() < 0.02, "{} vs {r}", est.value);
}

#[test]
fn cm_atc_is_self_consistent_on_identical_sets() {
    let set = generate_synthetic(&GeneratorSpec {
        distortion: 1.5,
        ..calibrated(5_000, 16)
    })
    .unwrap();
    let all = estimate_all(&[Method::CmAtc], &set, &set).unwrap();
    let est = &all.get(Method::CmAtc).unwrap().metrics;
    let realized = realized_report(&set).unwrap();
    let n = set.len() as f64;
    for m in [Metric::Ppv, Metric::Npv] {
        assert!((est.value(m).unwrap() - realized.value(m).unwrap()).abs() <= 1.0 / n + 1e-12);
    }
}

#[test]
fn resampling_at_pool_prevalence_matches_pool() {
    let pool = generate_synthetic(&calibrated(10_000, 17)).unwrap();
    let target = pool.prevalence().unwrap();
    let pool_acc = realized_report(&pool).unwrap().value(Metric::Accuracy).unwrap();
    let mean: f64 = (0..50)
        .map(|rep| {
            let s = resample_prevalence(&pool, target, 1000, 1700 + rep).unwrap();
            realized_report(&s).unwrap().value(Metric::Accuracy).unwrap()
        })
        .sum::<f64>()
        / 50.0;
    assert!((mean - pool_acc).abs() < 0.02);
}

#[test]
fn prevalence_sweep_keeps_recall_flat() {
    let spec = GeneratorSpec {
        latent: LatentLaw::Beta { a: 0.19, b: 0.31 },
        ..calibrated(1000, 18)
    };
    let (val, pools) = synthetic_inputs(SweepKind::Prevalence, &spec, DEFAULT_POOL_SIZE).unwrap();
    let config = SweepConfig {
        methods: vec![Method::Cbpe],
        seed: 19,
        ..SweepConfig::new(SweepKind::Prevalence)
    };
    let res = run_sweep(&config, &val, &pools).unwrap();
    let recall: Vec<f64> = res
        .levels
        .iter()
        .map(|l| l.realized_mean(Metric::Recall).unwrap())
        .collect();
    let hi = recall.iter().cloned().fold(f64::MIN, f64::max);
    let lo = recall.iter().cloned().fold(f64::MAX, f64::min);
    assert!(hi - lo < 0.03, "recall range {}", hi - lo);
}

#[test]
fn sweep_is_identical_across_worker_counts() {
    let spec = calibrated(400, 20);
    let (val, pools) = synthetic_inputs(SweepKind::Covariate, &spec, 4000).unwrap();
    let config = SweepConfig {
        axis: vec![0.0, 0.5, 1.0],
        repetitions: 6,
        n: 300,
        ..SweepConfig::new(SweepKind::Covariate)
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sweep(&config, &val, &pools).unwrap())
    };
    let one = run(1);
    assert_eq!(one.levels.len(), 3);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn calibrated_generator_matches_bin_frequencies() {
    let set = generate_synthetic(&calibrated(100_000, 21)).unwrap();
    let mut rows: Vec<(f64, bool)> = set.records().iter().map(|r| (r.raw_score, r.label.unwrap())).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per_bin = rows.len() / 15;
    for (b, chunk) in rows.chunks(per_bin).take(15).enumerate() {
        let k = chunk.len() as f64;
        let score = chunk.iter().map(|r| r.0).sum::<f64>() / k;
        let freq = chunk.iter().filter(|r| r.1).count() as f64 / k;
        assert!((score - freq).abs() < 0.02, "bin {b}: score {score} vs frequency {freq}");
    }
}
