//! Recurrent-event Cox models as risk-set expansions of the record table:
//! standard Cox, per-interval Cox, Andersen–Gill, PWP and WLW.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Record, RecordTable};
use crate::error::{Error, Result};
use crate::survival::{fit_cox_data, CoxData, CoxFit, CoxOptions, CoxSummary};

/// Covariates used for the classical comparators.
pub const CLASSICAL_COVARIATES: [&str; 3] = ["treatment", "number", "size"];

/// Status code of a recurrence row.
const RECURRENCE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One row per patient: time to first recurrence or last follow-up.
    #[serde(rename = "cox")]
    StandardCox,
    /// Every interval treated as an independent subject with its own
    /// duration.
    #[serde(rename = "cox_interval")]
    IntervalCox,
    #[serde(rename = "ag")]
    AndersenGill,
    Pwp,
    Wlw,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::StandardCox,
        ModelKind::IntervalCox,
        ModelKind::AndersenGill,
        ModelKind::Pwp,
        ModelKind::Wlw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::StandardCox => "cox",
            ModelKind::IntervalCox => "cox_interval",
            ModelKind::AndersenGill => "ag",
            ModelKind::Pwp => "pwp",
            ModelKind::Wlw => "wlw",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cox" | "standard" | "standard_cox" => Ok(ModelKind::StandardCox),
            "cox_interval" | "interval" | "naive" => Ok(ModelKind::IntervalCox),
            "ag" | "andersen_gill" => Ok(ModelKind::AndersenGill),
            "pwp" => Ok(ModelKind::Pwp),
            "wlw" => Ok(ModelKind::Wlw),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timescale {
    /// Time since study entry.
    #[default]
    Total,
    /// Time since the previous event.
    Gap,
}

impl FromStr for Timescale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "total" => Ok(Timescale::Total),
            "gap" => Ok(Timescale::Gap),
            other => Err(Error::invalid(format!("unknown timescale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub patient_id: i64,
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub stratum: i64,
    pub cluster: i64,
}

/// Counting-process table ready for a Cox fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskIntervalTable {
    pub kind: ModelKind,
    pub covariate_names: Vec<String>,
    pub rows: Vec<RiskRow>,
    pub warnings: Vec<String>,
}

impl RiskIntervalTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    pub fn n_strata(&self) -> usize {
        let mut s: Vec<i64> = self.rows.iter().map(|r| r.stratum).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }

    pub fn n_clusters(&self) -> usize {
        let mut s: Vec<i64> = self.rows.iter().map(|r| r.cluster).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }

    fn clustered(&self) -> bool {
        matches!(self.kind, ModelKind::AndersenGill | ModelKind::Pwp | ModelKind::Wlw)
    }

    /// Cox input with strata and cluster ids where the model uses them. Start
    /// times are kept only when some row starts after time 0.
    pub fn to_cox_data(&self) -> Result<CoxData> {
        let covs: Vec<Vec<f64>> = self.rows.iter().map(|r| r.covariates.clone()).collect();
        let mut data = CoxData::new(
            &covs,
            self.rows.iter().map(|r| r.stop).collect(),
            self.rows.iter().map(|r| r.event).collect(),
        )?
        .with_names(self.covariate_names.clone())?;
        if self.rows.iter().any(|r| r.start != 0.0) {
            data = data.with_start(self.rows.iter().map(|r| r.start).collect())?;
        }
        if self.n_strata() > 1 {
            data = data.with_strata(self.rows.iter().map(|r| r.stratum).collect())?;
        }
        if self.clustered() {
            data = data.with_cluster(self.rows.iter().map(|r| r.cluster).collect())?;
        }
        Ok(data)
    }
}

fn covariates(r: &Record, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            r.feature(n)
                .ok_or_else(|| Error::invalid(format!("unknown covariate `{n}`")))
        })
        .collect()
}

fn table(kind: ModelKind, names: &[String], rows: Vec<RiskRow>, warnings: Vec<String>) -> RiskIntervalTable {
    for w in &warnings {
        log::warn!("{kind}: {w}");
    }
    RiskIntervalTable {
        kind,
        covariate_names: names.to_vec(),
        rows,
        warnings,
    }
}

/// Interval rows with positive length, plus a warning per dropped row.
fn positive_intervals<'a>(records: &'a RecordTable, warnings: &mut Vec<String>) -> Vec<&'a Record> {
    records
        .rows()
        .iter()
        .filter(|r| {
            let keep = r.stop > r.start;
            if !keep {
                warnings.push(format!(
                    "dropped zero-length interval {} of patient {} at t={}",
                    r.interval, r.patient_id, r.start
                ));
            }
            keep
        })
        .collect()
}

/// Andersen–Gill: one row per at-risk interval, common baseline.
pub fn expand_ag(records: &RecordTable, names: &[String]) -> Result<RiskIntervalTable> {
    let mut warnings = Vec::new();
    let rows = positive_intervals(records, &mut warnings)
        .into_iter()
        .map(|r| {
            Ok(RiskRow {
                patient_id: r.patient_id,
                start: r.start,
                stop: r.stop,
                event: r.status == RECURRENCE,
                covariates: covariates(r, names)?,
                stratum: 0,
                cluster: r.patient_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(table(ModelKind::AndersenGill, names, rows, warnings))
}

/// Prentice–Williams–Peterson: intervals stratified by event order. Strata
/// with fewer than two events are dropped.
pub fn expand_pwp(records: &RecordTable, names: &[String], timescale: Timescale) -> Result<RiskIntervalTable> {
    let mut warnings = Vec::new();
    let mut rows = positive_intervals(records, &mut warnings)
        .into_iter()
        .map(|r| {
            let (start, stop) = match timescale {
                Timescale::Total => (r.start, r.stop),
                Timescale::Gap => (0.0, r.stop - r.start),
            };
            Ok(RiskRow {
                patient_id: r.patient_id,
                start,
                stop,
                event: r.status == RECURRENCE,
                covariates: covariates(r, names)?,
                stratum: r.interval as i64,
                cluster: r.patient_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut events: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &rows {
        *events.entry(r.stratum).or_default() += r.event as usize;
    }
    for (&stratum, &n) in events.iter().filter(|(_, &n)| n < 2) {
        warnings.push(format!("dropped stratum {stratum} with {n} event(s)"));
    }
    rows.retain(|r| events[&r.stratum] >= 2);
    Ok(table(ModelKind::Pwp, names, rows, warnings))
}

/// Wei–Lin–Weissfeld marginal model: every patient contributes one row to
/// each of the `k` event-order strata, timed from study entry.
pub fn expand_wlw(records: &RecordTable, names: &[String], k: usize) -> Result<RiskIntervalTable> {
    if k == 0 {
        return Err(Error::invalid("WLW needs at least one stratum"));
    }
    let mut rows = Vec::with_capacity(k * records.n_patients());
    for patient in records.patients() {
        let first = &patient[0];
        let covs = covariates(first, names)?;
        let entry = first.start;
        let last = patient.last().expect("nonempty patient").stop - entry;
        let events: Vec<f64> = patient
            .iter()
            .filter(|r| r.status == RECURRENCE)
            .map(|r| r.stop - entry)
            .collect();
        for order in 1..=k {
            let (stop, event) = match events.get(order - 1) {
                Some(&t) => (t, true),
                None => (last, false),
            };
            rows.push(RiskRow {
                patient_id: first.patient_id,
                start: 0.0,
                stop,
                event,
                covariates: covs.clone(),
                stratum: order as i64,
                cluster: first.patient_id,
            });
        }
    }
    Ok(table(ModelKind::Wlw, names, rows, Vec::new()))
}

/// One row per patient: time to first recurrence, else last follow-up.
pub fn expand_standard(records: &RecordTable, names: &[String]) -> Result<RiskIntervalTable> {
    let mut rows = Vec::with_capacity(records.n_patients());
    for patient in records.patients() {
        let first = &patient[0];
        let entry = first.start;
        let (stop, event) = match patient.iter().find(|r| r.status == RECURRENCE) {
            Some(r) => (r.stop - entry, true),
            None => (patient.last().expect("nonempty patient").stop - entry, false),
        };
        rows.push(RiskRow {
            patient_id: first.patient_id,
            start: 0.0,
            stop,
            event,
            covariates: covariates(first, names)?,
            stratum: 0,
            cluster: first.patient_id,
        });
    }
    Ok(table(ModelKind::StandardCox, names, rows, Vec::new()))
}

/// Every positive-length interval as an independent subject whose time is
/// the interval length.
pub fn expand_interval(records: &RecordTable, names: &[String]) -> Result<RiskIntervalTable> {
    let mut warnings = Vec::new();
    let rows = positive_intervals(records, &mut warnings)
        .into_iter()
        .map(|r| {
            Ok(RiskRow {
                patient_id: r.patient_id,
                start: 0.0,
                stop: r.stop - r.start,
                event: r.status == RECURRENCE,
                covariates: covariates(r, names)?,
                stratum: 0,
                cluster: r.patient_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(table(ModelKind::IntervalCox, names, rows, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandOptions {
    pub timescale: Timescale,
    pub wlw_k: usize,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self {
            timescale: Timescale::Total,
            wlw_k: 4,
        }
    }
}

pub fn expand(
    records: &RecordTable,
    names: &[String],
    kind: ModelKind,
    opts: &ExpandOptions,
) -> Result<RiskIntervalTable> {
    match kind {
        ModelKind::StandardCox => expand_standard(records, names),
        ModelKind::IntervalCox => expand_interval(records, names),
        ModelKind::AndersenGill => expand_ag(records, names),
        ModelKind::Pwp => expand_pwp(records, names, opts.timescale),
        ModelKind::Wlw => expand_wlw(records, names, opts.wlw_k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalFit {
    pub model_kind: ModelKind,
    pub n_strata: usize,
    pub n_clusters: usize,
    pub fit: CoxFit,
    pub warnings: Vec<String>,
}

/// JSON summary: the Cox summary plus model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSummary {
    pub model_kind: ModelKind,
    pub n_strata: usize,
    pub n_clusters: usize,
    #[serde(flatten)]
    pub cox: CoxSummary,
}

impl ClassicalFit {
    pub fn summary(&self) -> ClassicalSummary {
        ClassicalSummary {
            model_kind: self.model_kind,
            n_strata: self.n_strata,
            n_clusters: self.n_clusters,
            cox: self.fit.summary(),
        }
    }
}

pub fn fit_classical(table: &RiskIntervalTable, opts: &CoxOptions) -> Result<ClassicalFit> {
    let data = table.to_cox_data()?;
    let fit = fit_cox_data(&data, opts)?;
    let mut warnings = table.warnings.clone();
    warnings.extend(fit.warnings.iter().cloned());
    Ok(ClassicalFit {
        model_kind: table.kind,
        n_strata: table.n_strata(),
        n_clusters: table.n_clusters(),
        fit,
        warnings,
    })
}

#[cfg(test)]
mod tests;
