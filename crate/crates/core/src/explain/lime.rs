use std::io::Write;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceTensor;
use crate::encoders::EncoderModel;
use crate::error::{Error, Result};

/// Anything that maps flattened `T * F` inputs to one scalar each.
pub trait Predictor {
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl Predictor for EncoderModel {
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.predict_flat(rows)
    }
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64,
{
    fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(rows.iter().map(|r| self(r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width; `None` uses `0.75 * sqrt(T * F)`.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            kernel_width: None,
            ridge_lambda: 1e-3,
            seed: 0,
        }
    }
}

/// Local linear surrogate around one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sample_id: i64,
    pub feature_weights: IndexMap<String, f64>,
    pub intercept: f64,
    pub local_fit_r2: f64,
    /// Model output at the explained input.
    pub prediction: f64,
}

/// Explains `model` around the flattened input `x`. Perturbations resample
/// each coordinate independently from the background rows, are weighted by
/// `exp(-d^2 / width^2)` with `d` the distance in background-SD units, and
/// a weighted ridge regression (unpenalised intercept) is fitted to the
/// model outputs.
pub fn lime_explain<P: Predictor + ?Sized>(
    model: &P,
    sample_id: i64,
    x: &[f64],
    names: &[String],
    background: &[Vec<f64>],
    cfg: &LimeConfig,
) -> Result<Explanation> {
    if cfg.n_samples < 10 {
        return Err(Error::invalid(format!(
            "LIME needs at least 10 samples, got {}",
            cfg.n_samples
        )));
    }
    if background.is_empty() {
        return Err(Error::invalid("LIME background set is empty"));
    }
    let p = x.len();
    if names.len() != p || background.iter().any(|b| b.len() != p) {
        return Err(Error::shape(
            "lime_explain",
            "input, names and background widths differ",
        ));
    }
    if !(cfg.ridge_lambda >= 0.0) {
        return Err(Error::invalid("ridge_lambda must be >= 0"));
    }
    let width = cfg.kernel_width.unwrap_or(0.75 * (p as f64).sqrt());
    let nb = background.len() as f64;
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let m = background.iter().map(|b| b[j]).sum::<f64>() / nb;
            let v = background.iter().map(|b| (b[j] - m).powi(2)).sum::<f64>() / nb;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(sample_id as u64));
    let mut samples = Vec::with_capacity(cfg.n_samples);
    samples.push(x.to_vec());
    for _ in 1..cfg.n_samples {
        samples.push(
            (0..p)
                .map(|j| background[rng.random_range(0..background.len())][j])
                .collect(),
        );
    }
    let y = model.predict_rows(&samples)?;
    let w: Vec<f64> = samples
        .iter()
        .map(|z| {
            let d2: f64 = z
                .iter()
                .zip(x)
                .zip(&scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum();
            (-d2 / (width * width)).exp()
        })
        .collect();

    let (coef, intercept, r2) = weighted_ridge(&samples, &y, &w, cfg.ridge_lambda)?;
    Ok(Explanation {
        sample_id,
        feature_weights: names.iter().cloned().zip(coef).collect(),
        intercept,
        local_fit_r2: r2,
        prediction: y[0],
    })
}

/// Weighted ridge regression with an unpenalised intercept. Returns the
/// coefficients, intercept and weighted R^2 (1 when the response is
/// constant).
pub fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::invalid("all sample weights are zero"));
    }
    let xm: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| w[i] * x[i][j]).sum::<f64>() / sw)
        .collect();
    let ym = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let xc = DMatrix::from_fn(n, p, |i, j| (x[i][j] - xm[j]) * w[i].sqrt());
    let yc = DVector::from_fn(n, |i, _| (y[i] - ym) * w[i].sqrt());
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * &yc;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            gram.pseudo_inverse(1e-12)
                .map_err(|e| Error::Fit(format!("singular LIME design: {e}")))?
                * rhs
        }
    };
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        let fit = intercept + x[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
        ss_res += w[i] * (y[i] - fit).powi(2);
        ss_tot += w[i] * (y[i] - ym).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok((beta.iter().copied().collect(), intercept, r2))
}

/// Explains the selected rows of `x` against the whole of `background`.
pub fn lime_batch<P: Predictor + ?Sized>(
    model: &P,
    x: &SequenceTensor,
    rows: &[usize],
    background: &SequenceTensor,
    cfg: &LimeConfig,
) -> Result<Vec<Explanation>> {
    let names = x.flat_feature_names();
    let bg: Vec<Vec<f64>> = (0..background.n()).map(|i| background.sample(i).to_vec()).collect();
    rows.iter()
        .map(|&i| lime_explain(model, x.patient_ids[i], x.sample(i), &names, &bg, cfg))
        .collect()
}

/// How often each feature ranks in the top `k` by absolute weight. Ties in
/// weight are broken by feature order. Counts are listed in descending
/// order; features that never rank are omitted.
pub fn feature_frequency(explanations: &[Explanation], top_k: usize) -> Result<IndexMap<String, usize>> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    if explanations.is_empty() {
        return Err(Error::invalid("no explanations to count"));
    }
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for e in explanations {
        let mut ranked: Vec<(usize, &String, f64)> = e
            .feature_weights
            .iter()
            .enumerate()
            .map(|(i, (k, v))| (i, k, v.abs()))
            .collect();
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for (_, name, _) in ranked.into_iter().take(top_k) {
            *counts.entry(name.clone()).or_default() += 1;
        }
    }
    counts.sort_by(|ka, va, kb, vb| vb.cmp(va).then(ka.cmp(kb)));
    Ok(counts)
}

pub fn write_explanations_jsonl<W: Write>(mut w: W, explanations: &[Explanation]) -> Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(())
}
