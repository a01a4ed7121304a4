use super::*;

#[test]
fn exponential_gaps_have_mean_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_gap(&mut rng, 1.0, 10.0, 0.0)).sum::<f64>() / n as f64;
    assert!((mean - 10.0).abs() / 10.0 < 0.02, "{mean}");
}

#[test]
fn gaps_follow_the_weibull_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (shape, scale) = (1.5, 10.0);
    let mut s: Vec<f64> = (0..100_000).map(|_| sample_gap(&mut rng, shape, scale, 0.0)).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let ks = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-(x / scale).powf(shape)).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS = {ks}");
}

#[test]
fn null_effect_gives_uncorrelated_event_counts() {
    let cfg = SimConfig {
        n_patients: 1000,
        beta: [0.0, 0.0],
        seed: 3,
        ..SimConfig::default()
    };
    let t = simulate_recurrent(&cfg).unwrap();
    let per: Vec<(f64, f64, f64)> = t
        .patients()
        .map(|p| {
            (
                p[0].size,
                p[0].treatment.code() as f64,
                p.iter().filter(|r| r.status == 1).count() as f64,
            )
        })
        .collect();
    let corr = |a: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let n = per.len() as f64;
        let (ma, mb) = (
            per.iter().map(a).sum::<f64>() / n,
            per.iter().map(|p| p.2).sum::<f64>() / n,
        );
        let cov: f64 = per.iter().map(|p| (a(p) - ma) * (p.2 - mb)).sum();
        let va: f64 = per.iter().map(|p| (a(p) - ma).powi(2)).sum();
        let vb: f64 = per.iter().map(|p| (p.2 - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    assert!(corr(&|p| p.0).abs() < 0.05);
    assert!(corr(&|p| p.1).abs() < 0.05);
}

#[test]
fn output_respects_the_record_schema() {
    let t = simulate_recurrent(&SimConfig {
        seed: 4,
        ..SimConfig::default()
    })
    .unwrap();
    assert_eq!(t.n_patients(), 50);
    for p in t.patients() {
        assert_eq!(p[0].start, 0.0);
        assert_eq!(p.last().unwrap().status, 0);
        for (k, r) in p.iter().enumerate() {
            assert_eq!(r.interval as usize, k + 1);
            assert!(r.status <= 1 && r.start < r.stop);
            assert_eq!(r.rtumor.is_some(), r.status == 1);
        }
    }
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let (back, _) = crate::data::parse_records(csv.as_slice()).unwrap();
    assert_eq!(back.len(), t.len());
}

#[test]
fn renewal_process_restarts_the_clock() {
    let cfg = SimConfig {
        process: EventProcess::Renewal,
        followup_mean: 200.0,
        seed: 10,
        ..SimConfig::default()
    };
    let poisson = SimConfig {
        process: EventProcess::Poisson,
        ..cfg.clone()
    };
    let count = |c: &SimConfig| {
        simulate_recurrent(c)
            .unwrap()
            .rows()
            .iter()
            .filter(|r| r.status == 1)
            .count()
    };
    // With shape > 1 the Poisson intensity keeps rising, the renewal one resets.
    assert!(count(&poisson) > count(&cfg));
}

#[test]
fn simulation_is_deterministic() {
    let cfg = SimConfig {
        seed: 5,
        ..SimConfig::default()
    };
    assert_eq!(simulate_recurrent(&cfg).unwrap(), simulate_recurrent(&cfg).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SimConfig {
            weibull_shape: 0.0,
            ..SimConfig::default()
        },
        SimConfig {
            weibull_scale: -1.0,
            ..SimConfig::default()
        },
        SimConfig {
            target_censoring: 1.0,
            ..SimConfig::default()
        },
        SimConfig {
            binary_prob: 1.5,
            ..SimConfig::default()
        },
        SimConfig {
            followup_mean: -1e6,
            followup_sd: 1.0,
            ..SimConfig::default()
        },
    ] {
        assert!(simulate_recurrent(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn calibration_hits_the_target() {
    let cfg = SimConfig {
        seed: 6,
        ..SimConfig::default()
    };
    let mean = calibrate_followup(&cfg).unwrap();
    let c = pilot(&cfg, mean).unwrap();
    assert!((c - 0.40).abs() <= 0.02, "{c}");
    assert_eq!(calibrate_followup(&cfg).unwrap(), mean);
}

#[test]
fn zero_target_returns_long_followup() {
    let cfg = SimConfig {
        target_censoring: 0.0,
        seed: 7,
        ..SimConfig::default()
    };
    let mean = calibrate_followup(&cfg).unwrap();
    assert!(mean >= cfg.weibull_scale * 10.0);
    assert!(pilot(&cfg, mean).unwrap() < 0.02);
}

#[test]
fn default_followup_is_calibrated() {
    let mean = (0..5)
        .map(|seed| {
            pilot(
                &SimConfig {
                    seed,
                    ..SimConfig::default()
                },
                DEFAULT_FOLLOWUP_MEAN,
            )
            .unwrap()
        })
        .sum::<f64>()
        / 5.0;
    assert!((mean - 0.40).abs() <= 0.02, "{mean}");
}

#[test]
fn significance_report_finds_the_continuous_effect() {
    let cfg = SimConfig {
        n_patients: 400,
        seed: 9,
        ..SimConfig::default()
    };
    let report = significance_report(&simulate_recurrent(&cfg).unwrap()).unwrap();
    assert!(report.cox.p[0] < 1e-6);
    assert!((report.cox.beta[0] - 1.0).abs() < 4.0 * report.cox.se[0]);
}
