//! Weibull proportional-hazards recurrent-event simulator.
//!
//! Each patient gets a continuous covariate `x1 ~ N(0, 1)`, a binary
//! covariate `x2 ~ Bernoulli(p)` and a follow-up end drawn from a normal
//! distribution truncated to positive values. Events follow a Weibull
//! proportional-hazards intensity with cumulative hazard
//! `(t / scale)^shape * exp(beta^T x)`, either on the study time scale
//! (Poisson process) or restarted after every event (renewal process).
//! In the record schema `x1` is stored as `size` and `x2` as the treatment
//! code (placebo = 1, thiotepa = 2).

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::classical::{expand_ag, fit_classical, ClassicalSummary};
use crate::data::{Record, RecordTable, Treatment};
use crate::error::{Error, Result};
use crate::survival::CoxOptions;

/// Covariate columns carrying the simulated `(continuous, binary)` values.
pub const SIM_COVARIATES: [&str; 2] = ["size", "treatment"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventProcess {
    /// Intensity depends on time since study entry.
    #[default]
    Poisson,
    /// Intensity clock resets at every event.
    Renewal,
}

impl std::str::FromStr for EventProcess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(EventProcess::Poisson),
            "renewal" => Ok(EventProcess::Renewal),
            other => Err(Error::invalid(format!("unknown event process `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_patients: usize,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Effects of the continuous and the binary covariate.
    pub beta: [f64; 2],
    pub binary_prob: f64,
    pub followup_mean: f64,
    pub followup_sd: f64,
    /// Target fraction of censored (status 0) rows.
    pub target_censoring: f64,
    pub process: EventProcess,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_patients: 50,
            weibull_shape: 1.5,
            weibull_scale: 10.0,
            beta: [1.0, -0.5],
            binary_prob: 0.5,
            followup_mean: DEFAULT_FOLLOWUP_MEAN,
            followup_sd: 5.0,
            target_censoring: 0.40,
            process: EventProcess::Poisson,
            seed: 0,
        }
    }
}

/// Follow-up mean (months) at which the default configuration censors 40%
/// of rows, found with [`calibrate_followup`].
pub const DEFAULT_FOLLOWUP_MEAN: f64 = 10.0;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients must be positive"));
        }
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return Err(Error::invalid("Weibull shape and scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.binary_prob) {
            return Err(Error::invalid("binary_prob must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.target_censoring) {
            return Err(Error::invalid("target_censoring must be in [0, 1)"));
        }
        if !(self.followup_sd > 0.0) || !self.followup_mean.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid(
                "follow-up sd must be positive and all parameters finite",
            ));
        }
        Ok(())
    }
}

/// One inter-event gap by inverse transform of the Weibull PH cumulative
/// hazard.
pub fn sample_gap<R: rand::Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64, eta: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    scale * (e / eta.exp()).powf(1.0 / shape)
}

/// Follow-up end from `N(mean, sd)` truncated to `(0, inf)`.
fn truncated_followup(u: f64, lower: f64, mean: f64, sd: f64, normal: &Normal) -> f64 {
    let p = lower + u * (1.0 - lower);
    let x = mean + sd * normal.inverse_cdf(p.min(1.0 - 1e-16));
    x.max(f64::MIN_POSITIVE)
}

pub fn simulate_recurrent(cfg: &SimConfig) -> Result<RecordTable> {
    cfg.validate()?;
    let normal = Normal::standard();
    let lower = normal.cdf(-cfg.followup_mean / cfg.followup_sd);
    if lower >= 1.0 - 1e-12 {
        return Err(Error::invalid(format!(
            "follow-up N({}, {}) has no positive mass",
            cfg.followup_mean, cfg.followup_sd
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for pid in 1..=cfg.n_patients as i64 {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2 = if rng.random_bool(cfg.binary_prob) { 1.0 } else { 0.0 };
        let end = truncated_followup(rng.random::<f64>(), lower, cfg.followup_mean, cfg.followup_sd, &normal);
        let eta = cfg.beta[0] * x1 + cfg.beta[1] * x2;
        let mut times = Vec::new();
        match cfg.process {
            EventProcess::Renewal => {
                let mut t = 0.0;
                loop {
                    t += sample_gap(&mut rng, cfg.weibull_shape, cfg.weibull_scale, eta);
                    if t >= end {
                        break;
                    }
                    times.push(t);
                }
            }
            EventProcess::Poisson => {
                // Unit-rate arrivals on the cumulative-hazard scale.
                let mut cum = 0.0;
                loop {
                    let e: f64 = Exp1.sample(&mut rng);
                    cum += e;
                    let t = cfg.weibull_scale * (cum / eta.exp()).powf(1.0 / cfg.weibull_shape);
                    if t >= end {
                        break;
                    }
                    times.push(t);
                }
            }
        }
        let treatment = if x2 == 1.0 {
            Treatment::Thiotepa
        } else {
            Treatment::Placebo
        };
        let n_events = times.len() as f64;
        let mut start = 0.0;
        for (k, stop) in times.iter().copied().chain(std::iter::once(end)).enumerate() {
            let event = k < times.len();
            rows.push(Record {
                patient_id: pid,
                treatment,
                number: 1.0,
                size: x1,
                recur: n_events,
                start,
                stop,
                status: event as u8,
                rtumor: event.then_some(1.0),
                rsize: event.then_some(1.0),
                interval: k as u32 + 1,
            });
            start = stop;
        }
    }
    RecordTable::new(rows)
}

/// Fraction of rows with status 0.
pub fn censoring_fraction(table: &RecordTable) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    table.rows().iter().filter(|r| r.status == 0).count() as f64 / table.len() as f64
}

const PILOT_PATIENTS: usize = 1000;

fn pilot(cfg: &SimConfig, mean: f64) -> Result<f64> {
    let c = SimConfig {
        n_patients: PILOT_PATIENTS,
        followup_mean: mean,
        ..cfg.clone()
    };
    Ok(censoring_fraction(&simulate_recurrent(&c)?))
}

/// Bisection on the follow-up mean until a 1000-patient pilot (same seed)
/// censors `target_censoring` of rows to within 0.02.
pub fn calibrate_followup(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let (mut lo, mut hi) = (cfg.weibull_scale * 1e-3, cfg.weibull_scale * 100.0);
    let (c_lo, c_hi) = (pilot(cfg, lo)?, pilot(cfg, hi)?);
    let target = cfg.target_censoring;
    if (c_hi - target).abs() <= 0.02 && target < c_hi {
        return Ok(hi);
    }
    if target < c_hi - 0.02 || target > c_lo + 0.02 {
        return Err(Error::invalid(format!(
            "target censoring {target} outside achievable range [{c_hi:.3}, {c_lo:.3}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = pilot(cfg, mid)?;
        if (c - target).abs() <= 0.02 && hi - lo < 1e-3 * cfg.weibull_scale {
            return Ok(mid);
        }
        // Censoring falls as follow-up grows.
        if c > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let c = pilot(cfg, mid)?;
    if (c - target).abs() <= 0.02 {
        Ok(mid)
    } else {
        Err(Error::invalid(format!("bisection stalled at censoring {c:.3}")))
    }
}

/// Andersen–Gill fit on the simulated covariates, used as a significance
/// check of the generated effects.
pub fn significance_report(table: &RecordTable) -> Result<ClassicalSummary> {
    let names: Vec<String> = SIM_COVARIATES.iter().map(|s| s.to_string()).collect();
    let ag = expand_ag(table, &names)?;
    Ok(fit_classical(&ag, &CoxOptions::default())?.summary())
}

#[cfg(test)]
mod tests;
