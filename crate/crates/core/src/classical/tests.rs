use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Record, RecordTable, Treatment};

fn rec(pid: i64, interval: u32, start: f64, stop: f64, status: u8, x: (f64, f64)) -> Record {
    Record {
        patient_id: pid,
        treatment: if x.0 > 0.0 {
            Treatment::Thiotepa
        } else {
            Treatment::Placebo
        },
        number: x.1,
        size: 1.0,
        recur: 0.0,
        start,
        stop,
        status,
        rtumor: None,
        rsize: None,
        interval,
    }
}

fn names() -> Vec<String> {
    vec!["treatment".into(), "number".into()]
}

/// Patients with a single interval each.
fn single_interval_table(seed: u64, n: usize) -> RecordTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n as i64)
        .map(|pid| {
            let x = (rng.random_range(0..2) as f64, rng.random_range(1..5) as f64);
            let stop = rng.random_range(1..30) as f64;
            let status = if rng.random_bool(0.6) { 1 } else { 0 };
            rec(pid, 1, 0.0, stop, status, x)
        })
        .collect();
    RecordTable::new(rows).unwrap()
}

fn recurrent_table(seed: u64, n: usize) -> RecordTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for pid in 0..n as i64 {
        let x = (rng.random_range(0..2) as f64, rng.random_range(1..5) as f64);
        let mut t = 0.0;
        let k = rng.random_range(1..5);
        for j in 1..=k {
            let stop = t + rng.random_range(1..15) as f64;
            let status = if j < k { 1 } else { rng.random_range(0..2) };
            rows.push(rec(pid, j, t, stop, status, x));
            t = stop;
        }
    }
    RecordTable::new(rows).unwrap()
}

fn beta(table: &RiskIntervalTable) -> Vec<f64> {
    fit_classical(table, &CoxOptions::default()).unwrap().fit.beta
}

#[test]
fn ag_maps_intervals_directly() {
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 5.0, 1, (0.0, 1.0)),
        rec(1, 2, 5.0, 20.0, 0, (0.0, 1.0)),
    ])
    .unwrap();
    let ag = expand_ag(&t, &names()).unwrap();
    assert_eq!(ag.rows.iter().map(|r| r.event).collect::<Vec<_>>(), vec![true, false]);
    assert_eq!(ag.n_strata(), 1);
    assert_eq!(ag.rows[1].cluster, 1);
}

#[test]
fn ag_drops_zero_length_rows_with_a_warning() {
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 0.0, 3, (0.0, 1.0)),
        rec(2, 1, 0.0, 4.0, 0, (1.0, 1.0)),
    ])
    .unwrap();
    let ag = expand_ag(&t, &names()).unwrap();
    assert_eq!(ag.len(), 1);
    assert_eq!(ag.warnings.len(), 1);
    assert_eq!(ag.n_events(), 0);
}

#[test]
fn pwp_strata_follow_event_order() {
    let x = (0.0, 1.0);
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 3.0, 1, x),
        rec(1, 2, 3.0, 7.0, 1, x),
        rec(1, 3, 7.0, 9.0, 1, x),
        rec(2, 1, 0.0, 4.0, 1, x),
        rec(2, 2, 4.0, 8.0, 1, x),
        rec(2, 3, 8.0, 12.0, 1, x),
    ])
    .unwrap();
    let total = expand_pwp(&t, &names(), Timescale::Total).unwrap();
    assert_eq!(
        total.rows.iter().map(|r| r.stratum).collect::<Vec<_>>(),
        vec![1, 2, 3, 1, 2, 3]
    );
    let gap = expand_pwp(&t, &names(), Timescale::Gap).unwrap();
    assert_eq!(gap.rows[1].start, 0.0);
    assert_eq!(gap.rows[1].stop, 4.0);
}

#[test]
fn pwp_drops_sparse_strata() {
    let x = (0.0, 1.0);
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 3.0, 1, x),
        rec(1, 2, 3.0, 7.0, 1, x),
        rec(2, 1, 0.0, 4.0, 1, x),
        rec(3, 1, 0.0, 5.0, 0, x),
    ])
    .unwrap();
    let pwp = expand_pwp(&t, &names(), Timescale::Total).unwrap();
    assert_eq!(pwp.len(), 3);
    assert!(pwp.warnings.iter().any(|w| w.contains("stratum 2")));
}

#[test]
fn gap_and_total_agree_when_every_start_is_zero() {
    let t = single_interval_table(1, 20);
    let total = expand_pwp(&t, &names(), Timescale::Total).unwrap();
    let gap = expand_pwp(&t, &names(), Timescale::Gap).unwrap();
    assert_eq!(total.rows, gap.rows);
}

#[test]
fn wlw_puts_every_patient_in_every_stratum() {
    let x = (0.0, 1.0);
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 5.0, 1, x),
        rec(1, 2, 5.0, 12.0, 0, x),
        rec(2, 1, 0.0, 9.0, 0, x),
    ])
    .unwrap();
    let wlw = expand_wlw(&t, &names(), 3).unwrap();
    assert_eq!(wlw.len(), 6);
    let p1: Vec<(f64, bool)> = wlw
        .rows
        .iter()
        .filter(|r| r.patient_id == 1)
        .map(|r| (r.stop, r.event))
        .collect();
    assert_eq!(p1, vec![(5.0, true), (12.0, false), (12.0, false)]);
    assert!(expand_wlw(&t, &names(), 0).is_err());
}

#[test]
fn single_event_models_collapse_to_standard_cox() {
    let t = single_interval_table(2, 40);
    let standard = beta(&expand_standard(&t, &names()).unwrap());
    for table in [
        expand_ag(&t, &names()).unwrap(),
        expand_pwp(&t, &names(), Timescale::Total).unwrap(),
        expand_wlw(&t, &names(), 1).unwrap(),
    ] {
        let b = beta(&table);
        for (x, y) in b.iter().zip(&standard) {
            assert!((x - y).abs() < 1e-8, "{}: {b:?} vs {standard:?}", table.kind);
        }
    }
}

#[test]
fn wlw_with_one_stratum_is_the_standard_table() {
    let t = recurrent_table(3, 30);
    let wlw = expand_wlw(&t, &names(), 1).unwrap();
    let std = expand_standard(&t, &names()).unwrap();
    for (a, b) in wlw.rows.iter().zip(&std.rows) {
        assert_eq!((a.stop, a.event, &a.covariates), (b.stop, b.event, &b.covariates));
    }
}

#[test]
fn expansions_ignore_input_row_order() {
    let t = recurrent_table(4, 15);
    let mut rows = t.rows().to_vec();
    rows.reverse();
    let shuffled = RecordTable::new(rows).unwrap();
    let opts = ExpandOptions::default();
    for kind in ModelKind::ALL {
        assert_eq!(
            expand(&t, &names(), kind, &opts).unwrap(),
            expand(&shuffled, &names(), kind, &opts).unwrap()
        );
    }
}

#[test]
fn recurrent_fits_report_metadata() {
    let t = recurrent_table(5, 60);
    for kind in ModelKind::ALL {
        let table = expand(&t, &names(), kind, &ExpandOptions::default()).unwrap();
        let fit = fit_classical(&table, &CoxOptions::default()).unwrap();
        assert!(fit.fit.aic.is_finite(), "{kind}");
        let json = serde_json::to_value(fit.summary()).unwrap();
        assert_eq!(json["model_kind"], kind.as_str());
        assert!(json.get("n_strata").is_some() && json.get("aic").is_some());
        assert_eq!(
            fit.fit.robust,
            matches!(kind, ModelKind::AndersenGill | ModelKind::Pwp | ModelKind::Wlw)
        );
    }
}

#[test]
fn unknown_covariate_is_an_error() {
    let t = single_interval_table(6, 5);
    assert!(expand_ag(&t, &["bogus".to_string()]).is_err());
}

#[test]
fn no_recurrences_means_no_events() {
    let t = RecordTable::new(vec![
        rec(1, 1, 0.0, 5.0, 0, (0.0, 1.0)),
        rec(2, 1, 0.0, 6.0, 2, (1.0, 1.0)),
    ])
    .unwrap();
    assert_eq!(expand_ag(&t, &names()).unwrap().n_events(), 0);
}
