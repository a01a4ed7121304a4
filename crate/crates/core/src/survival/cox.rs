use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::concordance_index;
use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

impl fmt::Display for Ties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ties::Efron => "efron",
            Ties::Breslow => "breslow",
        })
    }
}

impl FromStr for Ties {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "efron" => Ok(Ties::Efron),
            "breslow" => Ok(Ties::Breslow),
            other => Err(Error::invalid(format!("unknown ties method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: Ties,
    /// Convergence threshold on the largest absolute score component.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Ridge penalty `lambda/2 * |beta|^2`; 0 disables it.
    pub ridge: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            ties: Ties::Efron,
            tol: 1e-9,
            max_iter: 100,
            max_halvings: 10,
            ridge: 0.0,
        }
    }
}

/// Covariates and (start, stop] follow-up for a Cox fit. Rows without a
/// start time are at risk from time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxData {
    x: Vec<f64>,
    d: usize,
    pub start: Option<Vec<f64>>,
    pub stop: Vec<f64>,
    pub event: Vec<bool>,
    pub strata: Option<Vec<i64>>,
    pub cluster: Option<Vec<i64>>,
    pub names: Vec<String>,
}

impl CoxData {
    pub fn new(rows: &[Vec<f64>], stop: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("cox", "ragged covariate rows"));
        }
        Self::from_flat(rows.concat(), d, stop, event)
    }

    pub fn from_flat(x: Vec<f64>, d: usize, stop: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let n = stop.len();
        if event.len() != n || x.len() != n * d {
            return Err(Error::shape(
                "cox",
                format!(
                    "{n} times, {} events, {} covariate values for D={d}",
                    event.len(),
                    x.len()
                ),
            ));
        }
        if x.iter().chain(&stop).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "cox" });
        }
        Ok(Self {
            x,
            d,
            start: None,
            stop,
            event,
            strata: None,
            cluster: None,
            names: (1..=d).map(|j| format!("x{j}")).collect(),
        })
    }

    /// Right-censored data from an `N x D` feature matrix.
    pub fn from_outcomes(features: &Tensor, outcomes: &[SurvivalOutcome]) -> Result<Self> {
        if !features.is_matrix() || features.rows() != outcomes.len() {
            return Err(Error::shape(
                "cox",
                format!("features {:?} vs {} outcomes", features.shape(), outcomes.len()),
            ));
        }
        Self::from_flat(
            features.data().to_vec(),
            features.cols(),
            outcomes.iter().map(|o| o.time).collect(),
            outcomes.iter().map(|o| o.event).collect(),
        )
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.len() {
            return Err(Error::shape("cox", "start length differs from stop length"));
        }
        if start.iter().zip(&self.stop).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("every row needs start < stop"));
        }
        self.start = Some(start);
        Ok(self)
    }

    pub fn with_strata(mut self, strata: Vec<i64>) -> Result<Self> {
        if strata.len() != self.len() {
            return Err(Error::shape("cox", "strata length differs from row count"));
        }
        self.strata = Some(strata);
        Ok(self)
    }

    pub fn with_cluster(mut self, cluster: Vec<i64>) -> Result<Self> {
        if cluster.len() != self.len() {
            return Err(Error::shape("cox", "cluster length differs from row count"));
        }
        self.cluster = Some(cluster);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::shape("cox", "one name per covariate required"));
        }
        self.names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn start_of(&self, i: usize) -> f64 {
        self.start.as_ref().map_or(f64::NEG_INFINITY, |s| s[i])
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn n_strata(&self) -> usize {
        self.strata.as_ref().map_or(1, |s| {
            let mut v = s.clone();
            v.sort_unstable();
            v.dedup();
            v.len()
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster.as_ref().map_or(self.len(), |c| {
            let mut v = c.clone();
            v.sort_unstable();
            v.dedup();
            v.len()
        })
    }

    /// `x^T beta` for every row.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// One tied event time inside a stratum.
struct EventTime {
    time: f64,
    risk: Vec<usize>,
    deaths: Vec<usize>,
}

/// Risk-set layout shared by every likelihood evaluation.
struct RiskSets {
    times: Vec<EventTime>,
}

impl RiskSets {
    fn build(data: &CoxData) -> Self {
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for i in 0..data.len() {
            let s = data.strata.as_ref().map_or(0, |s| s[i]);
            groups.entry(s).or_default().push(i);
        }
        let mut times = Vec::new();
        for rows in groups.values() {
            let mut ev: Vec<f64> = rows.iter().filter(|&&i| data.event[i]).map(|&i| data.stop[i]).collect();
            ev.sort_by(f64::total_cmp);
            ev.dedup();
            for t in ev {
                let risk: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&i| data.start_of(i) < t && t <= data.stop[i])
                    .collect();
                let deaths = risk
                    .iter()
                    .copied()
                    .filter(|&i| data.event[i] && data.stop[i] == t)
                    .collect();
                times.push(EventTime { time: t, risk, deaths });
            }
        }
        Self { times }
    }
}

/// Log partial likelihood, score and observed information at `beta`.
struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Covariates centred by column mean; the fit is invariant to centring.
struct Centered {
    x: DMatrix<f64>,
}

impl Centered {
    fn new(data: &CoxData) -> Self {
        let (n, d) = (data.len(), data.dim());
        let mut x = DMatrix::from_row_slice(n, d, &data.x);
        for j in 0..d {
            let mean = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-mean);
        }
        Self { x }
    }

    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }
}

fn evaluate(c: &Centered, sets: &RiskSets, beta: &DVector<f64>, ties: Ties, ridge: f64, second: bool) -> Evaluation {
    let d = beta.len();
    let eta = c.eta(beta);
    let shift = eta.max();
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(d);
    let mut info = DMatrix::zeros(d, d);
    let mut s1 = DVector::zeros(d);
    let mut s1d = DVector::zeros(d);
    let mut s2 = DMatrix::zeros(d, d);
    let mut s2d = DMatrix::zeros(d, d);
    for et in &sets.times {
        let (mut s0, mut s0d) = (0.0, 0.0);
        s1.fill(0.0);
        s1d.fill(0.0);
        if second {
            s2.fill(0.0);
            s2d.fill(0.0);
        }
        for &i in &et.risk {
            let xi = c.x.row(i).transpose();
            s0 += w[i];
            s1.axpy(w[i], &xi, 1.0);
            if second {
                s2.ger(w[i], &xi, &xi, 1.0);
            }
        }
        for &i in &et.deaths {
            let xi = c.x.row(i).transpose();
            loglik += eta[i];
            score += &xi;
            s0d += w[i];
            s1d.axpy(w[i], &xi, 1.0);
            if second {
                s2d.ger(w[i], &xi, &xi, 1.0);
            }
        }
        let m = et.deaths.len();
        for l in 0..m {
            let frac = match ties {
                Ties::Efron => l as f64 / m as f64,
                Ties::Breslow => 0.0,
            };
            let den = s0 - frac * s0d;
            let num1 = &s1 - frac * &s1d;
            loglik -= den.ln() + shift;
            score.axpy(-1.0 / den, &num1, 1.0);
            if second {
                let num2 = &s2 - frac * &s2d;
                info += num2 / den;
                info.ger(-1.0 / (den * den), &num1, &num1, 1.0);
            }
        }
    }
    if ridge > 0.0 {
        loglik -= 0.5 * ridge * beta.norm_squared();
        score.axpy(-ridge, beta, 1.0);
        for j in 0..d {
            info[(j, j)] += ridge;
        }
    }
    Evaluation { loglik, score, info }
}

/// Per-row score residuals at `beta` (centred covariates). Their sum is the
/// score vector; cluster sums of them form the sandwich meat.
fn score_residuals(c: &Centered, sets: &RiskSets, beta: &DVector<f64>, ties: Ties) -> DMatrix<f64> {
    let (n, d) = (c.x.nrows(), beta.len());
    let eta = c.eta(beta);
    let shift = eta.max();
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let mut resid = DMatrix::zeros(n, d);
    for et in &sets.times {
        let m = et.deaths.len();
        let (mut s0, mut s0d) = (0.0, 0.0);
        let mut s1 = DVector::zeros(d);
        let mut s1d = DVector::zeros(d);
        for &i in &et.risk {
            s0 += w[i];
            s1.axpy(w[i], &c.x.row(i).transpose(), 1.0);
        }
        for &i in &et.deaths {
            s0d += w[i];
            s1d.axpy(w[i], &c.x.row(i).transpose(), 1.0);
        }
        let fracs: Vec<f64> = (0..m)
            .map(|l| match ties {
                Ties::Efron => l as f64 / m as f64,
                Ties::Breslow => 0.0,
            })
            .collect();
        let dens: Vec<f64> = fracs.iter().map(|f| s0 - f * s0d).collect();
        let means: Vec<DVector<f64>> = fracs
            .iter()
            .zip(&dens)
            .map(|(f, den)| (&s1 - *f * &s1d) / *den)
            .collect();
        let mean_of_means = means.iter().fold(DVector::zeros(d), |acc, v| acc + v) / m as f64;
        for &i in &et.risk {
            let xi = c.x.row(i).transpose();
            let dies = et.deaths.contains(&i);
            let mut r = if dies { &xi - &mean_of_means } else { DVector::zeros(d) };
            for l in 0..m {
                let weight = if dies { 1.0 - fracs[l] } else { 1.0 };
                r.axpy(-weight * w[i] / dens[l], &(&xi - &means[l]), 1.0);
            }
            let mut row = resid.row_mut(i);
            row += r.transpose();
        }
    }
    resid
}

fn invert(info: &DMatrix<f64>) -> DMatrix<f64> {
    match info.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => info
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::from_element(info.nrows(), info.ncols(), f64::NAN)),
    }
}

fn solve(info: &DMatrix<f64>, score: &DVector<f64>) -> DVector<f64> {
    match info.clone().cholesky() {
        Some(ch) => ch.solve(score),
        None => invert(info) * score,
    }
}

/// Fitted Cox proportional-hazards model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Whether `covariance` is the cluster-robust sandwich.
    pub robust: bool,
    pub log_partial_likelihood: f64,
    pub null_log_likelihood: f64,
    pub c_index: f64,
    pub aic: f64,
    pub n: usize,
    pub n_events: usize,
    pub ties: Ties,
    pub converged: bool,
    pub iterations: usize,
    /// Monotone likelihood detected; coefficients are not finite in the limit.
    pub separation: bool,
    pub warnings: Vec<String>,
}

/// JSON fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSummary {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub c_index: f64,
    pub aic: f64,
    pub log_partial_likelihood: f64,
    pub n: usize,
    pub n_events: usize,
    pub converged: bool,
}

impl CoxFit {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn se(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.covariance[j][j].max(0.0).sqrt()).collect()
    }

    pub fn linear_predictor(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `F beta` for an `N x D` feature matrix.
    pub fn risk_scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        if !features.is_matrix() || features.cols() != self.dim() {
            return Err(Error::shape(
                "risk_scores",
                format!("{:?} vs D={}", features.shape(), self.dim()),
            ));
        }
        Ok((0..features.rows())
            .map(|i| features.row(i).iter().zip(&self.beta).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn summary(&self) -> CoxSummary {
        let se = self.se();
        let normal = Normal::standard();
        let z: Vec<f64> = self.beta.iter().zip(&se).map(|(b, s)| b / s).collect();
        let p = z.iter().map(|z| 2.0 * normal.sf(z.abs())).collect();
        CoxSummary {
            names: self.names.clone(),
            beta: self.beta.clone(),
            se,
            z,
            p,
            c_index: self.c_index,
            aic: self.aic,
            log_partial_likelihood: self.log_partial_likelihood,
            n: self.n,
            n_events: self.n_events,
            converged: self.converged,
        }
    }
}

/// Log partial likelihood of `data` at `beta` (no penalty).
pub fn partial_log_likelihood(data: &CoxData, beta: &[f64], ties: Ties) -> Result<f64> {
    if beta.len() != data.dim() {
        return Err(Error::shape("partial_log_likelihood", "beta length differs from D"));
    }
    let c = Centered::new(data);
    let sets = RiskSets::build(data);
    let b = DVector::from_column_slice(beta);
    // Centring shifts every eta by a constant per row set, which cancels
    // in the partial likelihood.
    Ok(evaluate(&c, &sets, &b, ties, 0.0, false).loglik)
}

/// Fits a right-censored Cox model to an `N x D` feature matrix.
pub fn fit_cox(features: &Tensor, outcomes: &[SurvivalOutcome], opts: &CoxOptions) -> Result<CoxFit> {
    fit_cox_data(&CoxData::from_outcomes(features, outcomes)?, opts)
}

pub fn fit_cox_data(data: &CoxData, opts: &CoxOptions) -> Result<CoxFit> {
    if data.len() < 2 {
        return Err(Error::Fit("at least two rows are required".into()));
    }
    if data.n_events() == 0 {
        return Err(Error::Fit("no events".into()));
    }
    if opts.ridge < 0.0 || !(opts.tol > 0.0) {
        return Err(Error::invalid("ridge must be >= 0 and tol > 0"));
    }
    let d = data.dim();
    let c = Centered::new(data);
    let sets = RiskSets::build(data);
    let mut beta = DVector::zeros(d);
    let mut ev = evaluate(&c, &sets, &beta, opts.ties, opts.ridge, true);
    let null_ll = ev.loglik;
    let mut converged = ev.score.amax() < opts.tol;
    let mut iterations = 0;
    let mut warnings = Vec::new();

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let step = solve(&ev.info, &ev.score);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &beta + scale * &step;
            let tv = evaluate(&c, &sets, &trial, opts.ties, opts.ridge, true);
            if tv.loglik.is_finite() && tv.loglik >= ev.loglik - 1e-12 * ev.loglik.abs().max(1.0) {
                accepted = Some((trial, tv));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((b, e)) => {
                beta = b;
                ev = e;
                converged = ev.score.amax() < opts.tol;
            }
            None => {
                warnings.push(format!("step-halving exhausted at iteration {iterations}"));
                break;
            }
        }
    }
    if !converged {
        warnings.push(format!(
            "did not converge after {iterations} iterations (max |score| = {:.3e})",
            ev.score.amax()
        ));
    }

    let separation = detect_separation(&c, &sets, &beta, ev.loglik, opts);
    if separation {
        warnings.push("monotone likelihood: coefficients diverge (separation)".into());
    }
    for w in &warnings {
        log::warn!("cox fit: {w}");
    }

    let bread = invert(&ev.info);
    let robust = data.cluster.is_some();
    let cov = match &data.cluster {
        Some(cluster) => {
            let resid = score_residuals(&c, &sets, &beta, opts.ties);
            let mut sums: BTreeMap<i64, DVector<f64>> = BTreeMap::new();
            for (i, id) in cluster.iter().enumerate() {
                *sums.entry(*id).or_insert_with(|| DVector::zeros(d)) += resid.row(i).transpose();
            }
            let mut meat = DMatrix::zeros(d, d);
            for s in sums.values() {
                meat.ger(1.0, s, s, 1.0);
            }
            &bread * meat * &bread
        }
        None => bread,
    };
    let beta_vec: Vec<f64> = beta.iter().copied().collect();
    let lp = data.linear_predictor(&beta_vec);
    let outcomes: Vec<SurvivalOutcome> = (0..data.len())
        .map(|i| SurvivalOutcome::new(i as i64, data.stop[i], data.event[i]))
        .collect();
    let c_index = concordance_index(&lp, &outcomes).unwrap_or(0.5);
    let loglik = ev.loglik + 0.5 * opts.ridge * beta.norm_squared();
    Ok(CoxFit {
        names: data.names.clone(),
        beta: beta_vec,
        covariance: (0..d)
            .map(|r| (0..d).map(|s| 0.5 * (cov[(r, s)] + cov[(s, r)])).collect())
            .collect(),
        robust,
        log_partial_likelihood: loglik,
        null_log_likelihood: null_ll,
        c_index,
        aic: 2.0 * d as f64 - 2.0 * loglik,
        n: data.len(),
        n_events: data.n_events(),
        ties: opts.ties,
        converged,
        iterations,
        separation,
        warnings,
    })
}

/// Flags a monotone likelihood: a coefficient that is huge on the covariate
/// scale, or a large one along which doubling the coefficient vector still
/// does not decrease the likelihood.
fn detect_separation(c: &Centered, sets: &RiskSets, beta: &DVector<f64>, ll: f64, opts: &CoxOptions) -> bool {
    let mut max_scaled: f64 = 0.0;
    for j in 0..beta.len() {
        let col = c.x.column(j);
        let sd = (col.norm_squared() / col.len() as f64).sqrt();
        max_scaled = max_scaled.max((beta[j] * sd).abs());
    }
    if max_scaled > 50.0 {
        return true;
    }
    if max_scaled > 5.0 && opts.ridge == 0.0 {
        let doubled = 2.0 * beta;
        let ll2 = evaluate(c, sets, &doubled, opts.ties, 0.0, false).loglik;
        return ll2 >= ll - 1e-6;
    }
    false
}

/// Breslow estimate of the cumulative baseline hazard at covariates 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub stratum: i64,
    pub time: f64,
    pub cumulative_hazard: f64,
}

pub fn baseline_hazard(data: &CoxData, fit: &CoxFit) -> Result<Vec<BaselinePoint>> {
    if fit.dim() != data.dim() {
        return Err(Error::shape("baseline_hazard", "fit and data dimensions differ"));
    }
    let lp = data.linear_predictor(&fit.beta);
    let sets = RiskSets::build(data);
    let mut out = Vec::with_capacity(sets.times.len());
    let mut current = None;
    let mut cum = 0.0;
    for et in &sets.times {
        let stratum = data.strata.as_ref().map_or(0, |s| s[et.deaths[0]]);
        if current != Some(stratum) {
            current = Some(stratum);
            cum = 0.0;
        }
        let den: f64 = et.risk.iter().map(|&i| lp[i].exp()).sum();
        cum += et.deaths.len() as f64 / den;
        out.push(BaselinePoint {
            stratum,
            time: et.time,
            cumulative_hazard: cum,
        });
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn residual_sum_and_score(data: &CoxData, beta: &[f64], ties: Ties) -> (Vec<f64>, Vec<f64>) {
    let c = Centered::new(data);
    let sets = RiskSets::build(data);
    let b = DVector::from_column_slice(beta);
    let r = score_residuals(&c, &sets, &b, ties);
    let sum = (0..beta.len()).map(|j| r.column(j).sum()).collect();
    let score = evaluate(&c, &sets, &b, ties, 0.0, false)
        .score
        .iter()
        .copied()
        .collect();
    (sum, score)
}
