use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use super::records::{RecordTable, FEATURE_COLUMNS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 3;

pub fn default_feature_names() -> Vec<String> {
    FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect()
}

/// Per-feature z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// A constant feature is recorded with std 1 so it maps to 0.
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(names: &[String], rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let f = names.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; f];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            names: names.to_vec(),
            mean,
            std,
        })
    }

    pub fn transform(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Feature rows extracted from a record table (one row per interval).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRows {
    pub names: Vec<String>,
    pub patient_ids: Vec<i64>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureRows {
    pub fn from_table(table: &RecordTable, names: &[String]) -> Result<Self> {
        validate_names(names)?;
        let values = table
            .rows()
            .iter()
            .map(|r| names.iter().map(|n| r.feature(n).expect("validated")).collect())
            .collect();
        Ok(Self {
            names: names.to_vec(),
            patient_ids: table.rows().iter().map(|r| r.patient_id).collect(),
            values,
        })
    }
}

fn validate_names(names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(Error::invalid("feature list is empty"));
    }
    for n in names {
        if !FEATURE_COLUMNS.contains(&n.as_str()) {
            return Err(Error::invalid(format!(
                "unknown feature `{n}` (expected one of {FEATURE_COLUMNS:?})"
            )));
        }
    }
    Ok(())
}

/// Z-scores every feature over the given rows. Returns the standardized copy
/// and the scaler so the same transform can be applied to held-out data.
pub fn standardize(table: &RecordTable, names: &[String]) -> Result<(FeatureRows, Scaler)> {
    let mut rows = FeatureRows::from_table(table, names)?;
    let scaler = Scaler::fit(names, &rows.values)?;
    rows.values.iter_mut().for_each(|r| scaler.transform(r));
    Ok((rows, scaler))
}

/// `N x T x F` standardized sequences, one per patient, zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    data: Tensor,
    pub patient_ids: Vec<i64>,
    pub feature_names: Vec<String>,
    pub valid_steps: Vec<usize>,
    pub scaler: Scaler,
}

#[derive(Serialize, Deserialize)]
struct SequenceHeader {
    shape: Vec<usize>,
    feature_names: Vec<String>,
    patient_ids: Vec<i64>,
    valid_steps: Vec<usize>,
    scaler: Scaler,
}

/// Builds one sequence per patient from their first `steps` intervals in
/// interval order. The scaler is fitted on the retained intervals unless one
/// is supplied.
pub fn build_sequences(
    table: &RecordTable,
    steps: usize,
    names: &[String],
    scaler: Option<&Scaler>,
) -> Result<SequenceTensor> {
    if table.is_empty() {
        return Err(Error::Data("record table is empty".into()));
    }
    if steps == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    validate_names(names)?;
    let f = names.len();
    let mut kept: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut ids = Vec::new();
    for p in table.patients() {
        ids.push(p[0].patient_id);
        kept.push(
            p.iter()
                .take(steps)
                .map(|r| names.iter().map(|n| r.feature(n).expect("validated")).collect())
                .collect(),
        );
    }
    let scaler = match scaler {
        Some(s) => {
            if s.names != names {
                return Err(Error::invalid("scaler was fitted on different features"));
            }
            s.clone()
        }
        None => {
            let flat: Vec<Vec<f64>> = kept.iter().flatten().cloned().collect();
            Scaler::fit(names, &flat)?
        }
    };
    let n = kept.len();
    let mut data = vec![0.0; n * steps * f];
    let mut valid = Vec::with_capacity(n);
    for (i, seq) in kept.iter_mut().enumerate() {
        valid.push(seq.len());
        for (t, row) in seq.iter_mut().enumerate() {
            scaler.transform(row);
            let off = (i * steps + t) * f;
            data[off..off + f].copy_from_slice(row);
        }
    }
    Ok(SequenceTensor {
        data: Tensor::new(vec![n, steps, f], data)?,
        patient_ids: ids,
        feature_names: names.to_vec(),
        valid_steps: valid,
        scaler,
    })
}

impl SequenceTensor {
    pub fn from_parts(
        data: Tensor,
        patient_ids: Vec<i64>,
        feature_names: Vec<String>,
        valid_steps: Vec<usize>,
        scaler: Scaler,
    ) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] != patient_ids.len() || s[0] != valid_steps.len() || s[2] != feature_names.len() {
            return Err(Error::shape("sequence", format!("inconsistent metadata for {s:?}")));
        }
        Ok(Self {
            data,
            patient_ids,
            feature_names,
            valid_steps,
            scaler,
        })
    }

    /// Raw sequences without metadata (identity scaler, all steps valid).
    pub fn from_values(n: usize, steps: usize, features: usize, values: Vec<f64>) -> Result<Self> {
        let names: Vec<String> = (0..features).map(|j| format!("f{j}")).collect();
        let scaler = Scaler {
            names: names.clone(),
            mean: vec![0.0; features],
            std: vec![1.0; features],
        };
        Self::from_parts(
            Tensor::new(vec![n, steps, features], values)?,
            (0..n as i64).collect(),
            names,
            vec![steps; n],
            scaler,
        )
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.data.shape()[2]
    }

    /// Flattened `T * F` values of one sequence.
    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.steps() * self.n_features();
        &self.data.data()[i * w..(i + 1) * w]
    }

    pub fn value(&self, i: usize, t: usize, j: usize) -> f64 {
        self.data.data()[(i * self.steps() + t) * self.n_features() + j]
    }

    /// `rows.len() x F` matrix of step `t` for the selected sequences.
    pub fn step_matrix(&self, t: usize, rows: &[usize]) -> Tensor {
        let f = self.n_features();
        let mut out = Vec::with_capacity(rows.len() * f);
        for &i in rows {
            let off = (i * self.steps() + t) * f;
            out.extend_from_slice(&self.data.data()[off..off + f]);
        }
        Tensor::from_parts(vec![rows.len(), f], out)
    }

    /// Names of the flattened `T * F` features, e.g. `stop@t2`.
    pub fn flat_feature_names(&self) -> Vec<String> {
        (1..=self.steps())
            .flat_map(|t| self.feature_names.iter().map(move |n| format!("{n}@t{t}")))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<SequenceTensor> {
        let w = self.steps() * self.n_features();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            if i >= self.n() {
                return Err(Error::invalid(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.sample(i));
        }
        Self::from_parts(
            Tensor::new(vec![rows.len(), self.steps(), self.n_features()], data)?,
            rows.iter().map(|&i| self.patient_ids[i]).collect(),
            self.feature_names.clone(),
            rows.iter().map(|&i| self.valid_steps[i]).collect(),
            self.scaler.clone(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(&self.header(), self.data.data())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (SequenceHeader, _) = container::decode(bytes)?;
        Self::from_parts(
            Tensor::new(h.shape, payload)?,
            h.patient_ids,
            h.feature_names,
            h.valid_steps,
            h.scaler,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, &self.header(), self.data.data())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn header(&self) -> SequenceHeader {
        SequenceHeader {
            shape: self.data.shape().to_vec(),
            feature_names: self.feature_names.clone(),
            patient_ids: self.patient_ids.clone(),
            valid_steps: self.valid_steps.clone(),
            scaler: self.scaler.clone(),
        }
    }
}
