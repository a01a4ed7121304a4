use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::records::RecordTable;
use crate::error::{Error, Result};

/// Patient-level time-to-event outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub patient_id: i64,
    pub time: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(patient_id: i64, time: f64, event: bool) -> Self {
        Self {
            patient_id,
            time,
            event,
        }
    }
}

/// Which status codes of a patient's last interval count as an event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMapping {
    pub event_codes: Vec<u8>,
}

impl Default for EventMapping {
    /// Recurrence (1) and death from bladder cancer (2).
    fn default() -> Self {
        Self {
            event_codes: vec![1, 2],
        }
    }
}

impl EventMapping {
    pub fn is_event(&self, status: u8) -> bool {
        self.event_codes.contains(&status)
    }

    /// Parses a comma-separated code list such as `1,2`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut codes = s
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<u8>()
                    .ok()
                    .filter(|v| *v <= 3)
                    .ok_or_else(|| Error::invalid(format!("bad status code {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        codes.sort_unstable();
        codes.dedup();
        Ok(Self { event_codes: codes })
    }
}

/// Time = last stop − first start; event from the last interval's status.
/// Output is ordered by patient id regardless of input row order.
pub fn derive_survival(table: &RecordTable, mapping: &EventMapping) -> Result<Vec<SurvivalOutcome>> {
    table
        .patients()
        .map(|rows| {
            let first = rows.iter().min_by_key(|r| r.interval).expect("non-empty group");
            let last = rows.iter().max_by_key(|r| r.interval).expect("non-empty group");
            let time = last.stop - first.start;
            if time < 0.0 {
                return Err(Error::Data(format!(
                    "patient {}: last stop {} precedes first start {}",
                    last.patient_id, last.stop, first.start
                )));
            }
            Ok(SurvivalOutcome::new(
                last.patient_id,
                time,
                mapping.is_event(last.status),
            ))
        })
        .collect()
}

/// Time from first start to the first interval whose status is an event;
/// patients without one are censored at their last stop.
pub fn derive_first_event(table: &RecordTable, mapping: &EventMapping) -> Result<Vec<SurvivalOutcome>> {
    table
        .patients()
        .map(|rows| {
            let start = rows.iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
            let hit = rows
                .iter()
                .filter(|r| mapping.is_event(r.status))
                .min_by_key(|r| r.interval);
            let (end, event) = match hit {
                Some(r) => (r.stop, true),
                None => (rows.iter().map(|r| r.stop).fold(f64::NEG_INFINITY, f64::max), false),
            };
            if end < start {
                return Err(Error::Data(format!(
                    "patient {}: stop {end} precedes start {start}",
                    rows[0].patient_id
                )));
            }
            Ok(SurvivalOutcome::new(rows[0].patient_id, end - start, event))
        })
        .collect()
}

pub fn write_outcomes<W: Write>(outcomes: &[SurvivalOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time", "event"])?;
    for o in outcomes {
        w.write_record([
            o.patient_id.to_string(),
            super::records::fmt_num(o.time),
            u8::from(o.event).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_outcomes<R: Read>(input: R) -> Result<Vec<SurvivalOutcome>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Schema {
            row: i + 1,
            msg: format!("bad {what}"),
        };
        let id = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("patient_id"))?;
        let time: f64 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("time"))?;
        let event = match rec.get(2).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad("event")),
        };
        if !(time >= 0.0) {
            return Err(bad("time"));
        }
        out.push(SurvivalOutcome::new(id, time, event));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::parse_records;

    fn table(body: &str) -> RecordTable {
        let text = format!("id,treatment,number,size,recur,start,stop,status,rtumor,rsize,enum\n{body}");
        parse_records(text.as_bytes()).unwrap().0
    }

    fn single(body: &str) -> SurvivalOutcome {
        derive_survival(&table(body), &EventMapping::default()).unwrap()[0]
    }

    #[test]
    fn first_event_outcome() {
        let t = table("1,1,1,1,1,0,5,1,1,1,1\n1,1,1,1,1,5,20,0,.,.,2\n2,1,1,1,1,0,7,0,.,.,1\n");
        let o = derive_first_event(&t, &EventMapping::default()).unwrap();
        assert_eq!((o[0].time, o[0].event), (5.0, true));
        assert_eq!((o[1].time, o[1].event), (7.0, false));
    }

    #[test]
    fn single_event_interval() {
        let o = single("1,1,1,1,1,0,10,1,1,1,1\n");
        assert_eq!((o.time, o.event), (10.0, true));
    }

    #[test]
    fn censored_after_recurrence() {
        let o = single("1,1,1,1,1,0,5,1,1,1,1\n1,1,1,1,1,5,20,0,.,.,2\n");
        assert_eq!((o.time, o.event), (20.0, false));
    }

    #[test]
    fn other_cause_death_is_censored_by_default() {
        let o = single("1,1,1,1,0,0,8,3,.,.,1\n");
        assert_eq!((o.time, o.event), (8.0, false));
        let m = EventMapping::parse("1,2,3").unwrap();
        assert!(derive_survival(&table("1,1,1,1,0,0,8,3,.,.,1\n"), &m).unwrap()[0].event);
    }

    #[test]
    fn invariant_to_row_order() {
        let a = table("2,1,1,1,1,0,5,1,1,1,1\n2,1,1,1,1,5,20,2,.,.,2\n1,1,1,1,0,3,9,0,.,.,1\n");
        let b = table("1,1,1,1,0,3,9,0,.,.,1\n2,1,1,1,1,5,20,2,.,.,2\n2,1,1,1,1,0,5,1,1,1,1\n");
        let m = EventMapping::default();
        assert_eq!(derive_survival(&a, &m).unwrap(), derive_survival(&b, &m).unwrap());
        assert_eq!(derive_survival(&a, &m).unwrap()[0].time, 6.0);
    }

    #[test]
    fn outcome_csv_round_trip() {
        let o = vec![SurvivalOutcome::new(3, 12.5, true), SurvivalOutcome::new(9, 0.0, false)];
        let mut buf = Vec::new();
        write_outcomes(&o, &mut buf).unwrap();
        assert_eq!(read_outcomes(buf.as_slice()).unwrap(), o);
    }
}
