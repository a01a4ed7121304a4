use std::path::PathBuf;

use seqcox::classical::{expand, ExpandOptions, ModelKind, CLASSICAL_COVARIATES};
use seqcox::data::{build_sequences, default_feature_names, derive_survival, load_records_with_report, EventMapping};

fn path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/bladder1.csv")
}

#[test]
fn table_shape_and_outcomes() {
    let (table, report) = load_records_with_report(&path()).unwrap();
    assert_eq!((table.len(), table.n_patients()), (294, 118));
    assert_eq!(report.missing_on_recurrence, 58);
    let outcomes = derive_survival(&table, &EventMapping::default()).unwrap();
    assert_eq!(outcomes.iter().filter(|o| o.event).count(), 15);
    let x = build_sequences(&table, 3, &default_feature_names(), None).unwrap();
    assert_eq!((x.n(), x.steps(), x.n_features()), (118, 3, 10));
    assert_eq!(
        x.valid_steps.iter().filter(|&&v| v == 3).count(),
        table.patients().filter(|p| p.len() >= 3).count()
    );
}

#[test]
fn risk_interval_tables() {
    let (table, _) = load_records_with_report(&path()).unwrap();
    let names: Vec<String> = CLASSICAL_COVARIATES.iter().map(|s| s.to_string()).collect();
    let opts = ExpandOptions::default();
    let ag = expand(&table, &names, ModelKind::AndersenGill, &opts).unwrap();
    // Patients 1 and 49 have a single zero-length interval, which is dropped.
    assert_eq!(ag.len(), 292);
    assert_eq!(ag.n_clusters(), 116);
    let wlw = expand(&table, &names, ModelKind::Wlw, &opts).unwrap();
    assert_eq!(wlw.len(), 4 * 118);
    let standard = expand(&table, &names, ModelKind::StandardCox, &opts).unwrap();
    assert_eq!(standard.len(), 118);
}
