//! Record ingestion, preprocessing and sequence construction.

pub mod container;
mod outcome;
mod records;
mod sequence;

pub use outcome::{derive_first_event, derive_survival, read_outcomes, write_outcomes, EventMapping, SurvivalOutcome};
pub use records::{
    load_records, load_records_with_report, parse_records, ColumnStats, DataSummary, LoadReport, Record, RecordTable,
    Treatment, FEATURE_COLUMNS, SCHEMA,
};
pub use sequence::{
    build_sequences, default_feature_names, standardize, FeatureRows, Scaler, SequenceTensor, DEFAULT_STEPS,
};
