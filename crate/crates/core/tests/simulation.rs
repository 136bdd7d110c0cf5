use bell_lab::metrics::{AnalyzerQuad, CountsSextet};
use bell_lab::model::{
    fringe_scan, AnalyzerAngle, Arm, DetectionModel, EntangledState, PolarizerModel,
};
use bell_lab::sim::{
    estimate_f, fit_fringe, fringe_as_pairs, model_fringe_visibility, noise_mix_for_visibility,
    read_fringe_csv, simulate_basis_counts, simulate_fringe, simulate_repeats, simulate_run,
    write_fringe_csv, BasisCounts, SimConfig,
};

fn config(f: f64, duration: f64) -> SimConfig {
    SimConfig {
        state: EntangledState::real(f).unwrap(),
        pol: PolarizerModel::ideal(),
        det: DetectionModel {
            duration,
            ..DetectionModel::ideal()
        },
        quad: AnalyzerQuad::from_array([72.24, 45.0, 17.76, 0.0]).unwrap(),
        seed: 42,
        noise_mix: 0.0,
    }
}

#[test]
fn same_config_same_record_bytes() {
    let cfg = config(0.4, 1e4);
    let a = serde_json::to_vec(&simulate_run(&cfg).unwrap()).unwrap();
    let b = serde_json::to_vec(&simulate_run(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = serde_json::to_vec(&simulate_run(&cfg.with_seed(43)).unwrap()).unwrap();
    assert_ne!(a, other);
}

#[test]
fn large_counts_track_expectation() {
    // the smallest expected term here is about 1.3e4
    let cfg = config(0.4, 1e6);
    for seed in 0..20 {
        let run = simulate_run(&cfg.with_seed(seed)).unwrap();
        for (n, mean) in run.counts.to_array().into_iter().zip(run.expected) {
            assert!(mean >= 1e4);
            assert!(
                (n as f64 - mean).abs() <= 5.0 * mean.sqrt(),
                "seed {seed}: {n} vs {mean}"
            );
        }
    }
}

#[test]
fn report_is_recomputable() {
    for run in simulate_repeats(&config(0.4, 500.0), 10).unwrap() {
        assert_eq!(run.reanalyze(), run.report);
        let sextet: CountsSextet = run.counts.to_sextet();
        assert!(sextet.values().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn repeats_use_distinct_seeds() {
    let runs = simulate_repeats(&config(0.4, 500.0), 20).unwrap();
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 20);
}

#[test]
fn estimate_f_is_exact_on_noiseless_counts() {
    for f in [0.05, 0.4, 1.0, 2.5] {
        let est = estimate_f(&BasisCounts {
            n_vv: f * f * 1e6,
            n_hh: 1e6,
        })
        .unwrap();
        assert!((est.value - f).abs() < 1e-9);
    }
}

#[test]
fn estimate_f_from_simulated_counts() {
    let cfg = config(0.4, 1e4);
    let hits = (0..50)
        .filter(|&seed| {
            let counts = simulate_basis_counts(&cfg.with_seed(seed), 1e4).unwrap();
            let est = estimate_f(&counts).unwrap();
            (est.value - 0.4).abs() <= 3.0 * est.sigma.unwrap()
        })
        .count();
    assert!(hits >= 48, "{hits}/50 within 3 sigma");
}

#[test]
fn fit_recovers_analytic_fringe() {
    let state = EntangledState::real(0.4).unwrap();
    let pol = PolarizerModel::symmetric(0.97, 0.03);
    let scan = |n| fringe_scan(&state, AnalyzerAngle::Degrees(30.0), Arm::One, &pol, n).unwrap();
    let points: Vec<(f64, f64)> = scan(48).iter().map(|&(t, p)| (t, 1e4 * p)).collect();
    let fit = fit_fringe(&points).unwrap();
    assert!(fit.chi2 < 1e-12);

    // extrema of a 0.01-degree scan pin the generating A and B
    let dense = scan(18_000);
    let max = dense.iter().map(|p| 1e4 * p.1).fold(f64::MIN, f64::max);
    let min = dense.iter().map(|p| 1e4 * p.1).fold(f64::MAX, f64::min);
    assert!((fit.amplitude + fit.offset - max).abs() < 1e-4);
    assert!((fit.offset - min).abs() < 1e-4);
    assert!((fit.visibility - (max - min) / (max + min)).abs() < 1e-7);
}

#[test]
fn calibrated_noise_hits_target_visibility() {
    let mut cfg = config(0.4, 1.0);
    for target in [0.99, 0.973, 0.8] {
        cfg.noise_mix = noise_mix_for_visibility(&cfg.with_seed(0), 45.0, target).unwrap();
        assert!((model_fringe_visibility(&cfg, 45.0).unwrap() - target).abs() < 1e-12);
        cfg.noise_mix = 0.0;
    }
}

#[test]
fn fringe_csv_round_trip() {
    let cfg = SimConfig {
        noise_mix: 0.05,
        ..config(0.4, 1.0)
    };
    let points = simulate_fringe(&cfg, 45.0, 24, 2000.0).unwrap();
    let mut buf = Vec::new();
    write_fringe_csv(&mut buf, &points).unwrap();
    assert!(buf.starts_with(b"angle_deg,count\n"));
    let back = read_fringe_csv(buf.as_slice()).unwrap();
    assert_eq!(back, fringe_as_pairs(&points));
    let fit = fit_fringe(&back).unwrap();
    let expected = model_fringe_visibility(&cfg, 45.0).unwrap();
    assert!((fit.visibility - expected).abs() < 5.0 * fit.sigma_visibility);
}
