use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};

/// Product-limit survival curve with one row per distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub censored: Vec<usize>,
}

impl SurvCurve {
    /// Survival probability just after time `t` (right-continuous).
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `time,survival,at_risk,events,group` rows (with header when
    /// `header` is true).
    pub fn write_csv<W: Write>(&self, w: W, group: &str, header: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(["time", "survival", "at_risk", "events", "group"])?;
        }
        for i in 0..self.len() {
            out.write_record([
                self.times[i].to_string(),
                self.survival[i].to_string(),
                self.at_risk[i].to_string(),
                self.events[i].to_string(),
                group.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }
}

pub fn kaplan_meier(outcomes: &[SurvivalOutcome]) -> SurvCurve {
    let mut sorted: Vec<&SurvivalOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut curve = SurvCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        censored: Vec::new(),
    };
    let mut s = 1.0;
    let mut remaining = sorted.len();
    for group in sorted.chunk_by(|a, b| a.time == b.time) {
        let d = group.iter().filter(|o| o.event).count();
        s *= 1.0 - d as f64 / remaining as f64;
        curve.times.push(group[0].time);
        curve.survival.push(s);
        curve.at_risk.push(remaining);
        curve.events.push(d);
        curve.censored.push(group.len() - d);
        remaining -= group.len();
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub chi2: f64,
    pub p: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Two-group log-rank test with the hypergeometric variance.
pub fn logrank_test(a: &[SurvivalOutcome], b: &[SurvivalOutcome]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("log-rank test needs two nonempty groups"));
    }
    let mut pooled: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|o| (o.time, o.event, true))
        .chain(b.iter().map(|o| (o.time, o.event, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut n_a, mut n) = (a.len() as f64, pooled.len() as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for group in pooled.chunk_by(|x, y| x.0 == y.0) {
        let d = group.iter().filter(|g| g.1).count() as f64;
        let d_a = group.iter().filter(|g| g.1 && g.2).count() as f64;
        if d > 0.0 {
            observed += d_a;
            expected += d * n_a / n;
            if n > 1.0 {
                variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n -= group.len() as f64;
        n_a -= group.iter().filter(|g| g.2).count() as f64;
    }
    if pooled.iter().all(|p| !p.1) {
        return Err(Error::invalid("log-rank test needs at least one event"));
    }
    if variance <= 0.0 {
        return Err(Error::invalid("log-rank variance is zero"));
    }
    let chi2 = (observed - expected).powi(2) / variance;
    let p = ChiSquared::new(1.0).expect("valid dof").sf(chi2);
    Ok(LogRank {
        chi2,
        p,
        observed_a: observed,
        expected_a: expected,
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSplit {
    /// `true` for the high-risk group.
    pub high: Vec<bool>,
    pub median: f64,
    /// All scores equal, so every subject is low risk.
    pub degenerate: bool,
}

impl RiskSplit {
    pub fn n_high(&self) -> usize {
        self.high.iter().filter(|&&h| h).count()
    }

    /// Outcomes of the (high, low) groups.
    pub fn partition(&self, outcomes: &[SurvivalOutcome]) -> (Vec<SurvivalOutcome>, Vec<SurvivalOutcome>) {
        let (hi, lo): (Vec<_>, Vec<_>) = outcomes.iter().zip(&self.high).partition(|(_, h)| **h);
        (
            hi.into_iter().map(|p| *p.0).collect(),
            lo.into_iter().map(|p| *p.0).collect(),
        )
    }
}

/// Median split: high risk iff the score exceeds the median.
pub fn risk_groups(scores: &[f64]) -> Result<RiskSplit> {
    if scores.is_empty() {
        return Err(Error::invalid("no risk scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let high: Vec<bool> = scores.iter().map(|&s| s > median).collect();
    let degenerate = sorted[0] == sorted[n - 1];
    if degenerate {
        log::warn!("all risk scores are equal; every subject is assigned to the low-risk group");
    }
    Ok(RiskSplit {
        high,
        median,
        degenerate,
    })
}
