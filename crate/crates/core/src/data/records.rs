use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the long-format input table.
pub const SCHEMA: [&str; 11] = [
    "id",
    "treatment",
    "number",
    "size",
    "recur",
    "start",
    "stop",
    "status",
    "rtumor",
    "rsize",
    "enum",
];

/// Numeric columns usable as sequence features, in their fixed order.
/// Index 3 is `recur`, 5 is `stop`, 7 is `rtumor`, 8 is `rsize`.
pub const FEATURE_COLUMNS: [&str; 10] = [
    "treatment",
    "number",
    "size",
    "recur",
    "start",
    "stop",
    "status",
    "rtumor",
    "rsize",
    "enum",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Placebo,
    Thiotepa,
    Pyridoxine,
}

impl Treatment {
    pub fn code(self) -> u8 {
        match self {
            Treatment::Placebo => 1,
            Treatment::Thiotepa => 2,
            Treatment::Pyridoxine => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Treatment::Placebo),
            2 => Some(Treatment::Thiotepa),
            3 => Some(Treatment::Pyridoxine),
            _ => None,
        }
    }

    /// Accepts the label used in the published table or the integer code.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "placebo" => Some(Treatment::Placebo),
            "thiotepa" => Some(Treatment::Thiotepa),
            "pyridoxine" | "vitamin b6" | "vitamin_b6" | "b6" => Some(Treatment::Pyridoxine),
            _ => s.parse::<u8>().ok().and_then(Self::from_code),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Treatment::Placebo => "placebo",
            Treatment::Thiotepa => "thiotepa",
            Treatment::Pyridoxine => "pyridoxine",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One at-risk interval of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub patient_id: i64,
    pub treatment: Treatment,
    pub number: f64,
    pub size: f64,
    pub recur: f64,
    pub start: f64,
    pub stop: f64,
    pub status: u8,
    /// `None` where the source had a missing marker.
    pub rtumor: Option<f64>,
    pub rsize: Option<f64>,
    /// 1-based interval index within the patient.
    pub interval: u32,
}

impl Record {
    /// Numeric value of a feature column; missing values read as 0.
    pub fn feature(&self, name: &str) -> Option<f64> {
        Some(match name {
            "treatment" => self.treatment.code() as f64,
            "number" => self.number,
            "size" => self.size,
            "recur" => self.recur,
            "start" => self.start,
            "stop" => self.stop,
            "status" => self.status as f64,
            "rtumor" => self.rtumor.unwrap_or(0.0),
            "rsize" => self.rsize.unwrap_or(0.0),
            "enum" => self.interval as f64,
            _ => return None,
        })
    }
}

/// Long-format recurrent-event table, sorted by `(patient_id, interval)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordTable {
    rows: Vec<Record>,
}

/// Non-fatal findings from parsing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub warnings: Vec<String>,
    /// Missing `rtumor`/`rsize` on intervals that ended in a recurrence.
    pub missing_on_recurrence: usize,
}

impl RecordTable {
    /// Validates and sorts rows.
    pub fn new(mut rows: Vec<Record>) -> Result<Self> {
        rows.sort_by(|a, b| (a.patient_id, a.interval).cmp(&(b.patient_id, b.interval)));
        for (i, r) in rows.iter().enumerate() {
            if r.start < 0.0 || r.stop < 0.0 || !r.start.is_finite() || !r.stop.is_finite() {
                return Err(Error::Schema {
                    row: i + 1,
                    msg: format!("patient {}: negative or non-finite time", r.patient_id),
                });
            }
            if r.start > r.stop {
                return Err(Error::Schema {
                    row: i + 1,
                    msg: format!("patient {}: start {} > stop {}", r.patient_id, r.start, r.stop),
                });
            }
            if r.status > 3 {
                return Err(Error::Schema {
                    row: i + 1,
                    msg: format!("patient {}: status {} not in 0..=3", r.patient_id, r.status),
                });
            }
            if r.interval == 0 {
                return Err(Error::Schema {
                    row: i + 1,
                    msg: format!("patient {}: interval index must be >= 1", r.patient_id),
                });
            }
        }
        for (i, w) in rows.windows(2).enumerate() {
            if w[0].patient_id != w[1].patient_id {
                continue;
            }
            if w[0].interval == w[1].interval {
                return Err(Error::Schema {
                    row: i + 2,
                    msg: format!("duplicate (patient {}, enum {})", w[0].patient_id, w[0].interval),
                });
            }
            if w[1].start < w[0].stop {
                return Err(Error::Schema {
                    row: i + 2,
                    msg: format!("patient {}: overlapping intervals", w[0].patient_id),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows grouped per patient, in patient-id order.
    pub fn patients(&self) -> impl Iterator<Item = &[Record]> {
        self.rows.chunk_by(|a, b| a.patient_id == b.patient_id)
    }

    pub fn patient_ids(&self) -> Vec<i64> {
        self.patients().map(|p| p[0].patient_id).collect()
    }

    pub fn n_patients(&self) -> usize {
        self.patients().count()
    }

    /// Keeps only the given patients.
    pub fn filter_patients(&self, keep: &HashSet<i64>) -> RecordTable {
        RecordTable {
            rows: self
                .rows
                .iter()
                .filter(|r| keep.contains(&r.patient_id))
                .cloned()
                .collect(),
        }
    }

    /// Writes the canonical comma-separated form (integer treatment codes,
    /// `.` for missing values).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SCHEMA)?;
        let opt = |v: Option<f64>| v.map_or_else(|| ".".to_string(), fmt_num);
        for r in &self.rows {
            w.write_record([
                r.patient_id.to_string(),
                r.treatment.code().to_string(),
                fmt_num(r.number),
                fmt_num(r.size),
                fmt_num(r.recur),
                fmt_num(r.start),
                fmt_num(r.stop),
                r.status.to_string(),
                opt(r.rtumor),
                opt(r.rsize),
                r.interval.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn describe(&self) -> DataSummary {
        describe(self)
    }
}

/// Shortest representation that round-trips through `str::parse::<f64>`.
pub(crate) fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "." | "" | "NA" | "NaN" | "nan")
}

/// Parses a delimited table with a header naming every schema column
/// (case-insensitive, any order; extra columns such as row indexes are
/// ignored).
pub fn parse_records<R: Read>(reader: R) -> Result<(RecordTable, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let lower: Vec<String> = headers
        .iter()
        .map(|h| h.trim().trim_matches('"').to_ascii_lowercase())
        .collect();
    let mut col = [0usize; 11];
    for (k, name) in SCHEMA.iter().enumerate() {
        col[k] = lower.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            row: 0,
            msg: format!("header is missing column `{name}` (found {lower:?})"),
        })?;
    }

    let mut report = LoadReport::default();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::Schema {
                row,
                msg: format!("column `{}`: cannot parse {:?}", SCHEMA[k], field(k)),
            })
        };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if is_missing(field(k)) {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<i64> {
            let v = num(k)?;
            if v.fract() != 0.0 {
                return Err(Error::Schema {
                    row,
                    msg: format!("column `{}` must be an integer, got {v}", SCHEMA[k]),
                });
            }
            Ok(v as i64)
        };

        let patient_id = int(0)?;
        let treatment = Treatment::parse(field(1)).ok_or_else(|| Error::Schema {
            row,
            msg: format!("unknown treatment {:?} for patient {patient_id}", field(1)),
        })?;
        let status = int(7)?;
        if !(0..=3).contains(&status) {
            return Err(Error::Schema {
                row,
                msg: format!("status {status} not in 0..=3"),
            });
        }
        let interval = int(10)?;
        if interval < 1 {
            return Err(Error::Schema {
                row,
                msg: format!("enum must be >= 1, got {interval}"),
            });
        }
        let (start, stop) = (num(5)?, num(6)?);
        if start < 0.0 || stop < 0.0 {
            return Err(Error::Schema {
                row,
                msg: format!("negative time (start {start}, stop {stop})"),
            });
        }
        if !seen.insert((patient_id, interval)) {
            return Err(Error::Schema {
                row,
                msg: format!("duplicate (patient {patient_id}, enum {interval})"),
            });
        }
        let rtumor = opt_num(8)?;
        let rsize = opt_num(9)?;
        if status == 1 && (rtumor.is_none() || rsize.is_none()) {
            report.missing_on_recurrence += 1;
            let msg = format!("row {row}: patient {patient_id} recurrence interval has missing rtumor/rsize; using 0");
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
        rows.push(Record {
            patient_id,
            treatment,
            number: num(2)?,
            size: num(3)?,
            recur: num(4)?,
            start,
            stop,
            status: status as u8,
            rtumor,
            rsize,
            interval: interval as u32,
        });
    }
    Ok((RecordTable::new(rows)?, report))
}

pub fn load_records(path: &Path) -> Result<RecordTable> {
    load_records_with_report(path).map(|(t, _)| t)
}

pub fn load_records_with_report(path: &Path) -> Result<(RecordTable, LoadReport)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    /// Non-missing values the statistics were computed over.
    pub count: usize,
}

/// Row-level descriptive statistics and per-patient treatment counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_rows: usize,
    pub n_patients: usize,
    pub columns: BTreeMap<String, ColumnStats>,
    pub treatment_counts: BTreeMap<String, usize>,
}

fn stats(mut v: Vec<f64>) -> Option<ColumnStats> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Some(ColumnStats {
        min: v[0],
        median,
        mean: v.iter().sum::<f64>() / n as f64,
        max: v[n - 1],
        count: n,
    })
}

fn describe(table: &RecordTable) -> DataSummary {
    let rows = table.rows();
    type Getter = fn(&Record) -> Option<f64>;
    let cols: [(&str, Getter); 8] = [
        ("number", |r| Some(r.number)),
        ("size", |r| Some(r.size)),
        ("recur", |r| Some(r.recur)),
        ("start", |r| Some(r.start)),
        ("stop", |r| Some(r.stop)),
        ("rtumor", |r| r.rtumor),
        ("rsize", |r| r.rsize),
        ("enum", |r| Some(r.interval as f64)),
    ];
    let columns = cols
        .iter()
        .filter_map(|(name, get)| stats(rows.iter().filter_map(get).collect()).map(|s| (name.to_string(), s)))
        .collect();
    let mut treatment_counts = BTreeMap::new();
    for p in table.patients() {
        *treatment_counts.entry(p[0].treatment.label().to_string()).or_insert(0) += 1;
    }
    DataSummary {
        n_rows: rows.len(),
        n_patients: table.n_patients(),
        columns,
        treatment_counts,
    }
}
