//! Exact t-SNE.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 3000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

/// Symmetric joint affinities plus per-point calibration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `N x N`, symmetric, zero diagonal, sums to 1.
    pub p: Vec<f64>,
    /// Entropy (nats) of each conditional distribution.
    pub entropies: Vec<f64>,
    /// Gaussian precision of each point.
    pub betas: Vec<f64>,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// `N x out_dims` coordinates, centred at the origin.
    pub coords: Vec<Vec<f64>>,
    pub kl: f64,
    /// `(iteration, KL)` after every iteration past the exaggeration phase.
    pub kl_history: Vec<(usize, f64)>,
    pub perplexity: f64,
    pub warnings: Vec<String>,
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional row `p_{.|i}` at precision `beta` and its entropy.
fn conditional(d: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r = if j == i { 0.0 } else { (-beta * (d[j] - dmin)).exp() };
        sum += *r;
    }
    let mut h = sum.ln();
    for (j, r) in row.iter_mut().enumerate() {
        *r /= sum;
        if j != i {
            h += beta * (d[j] - dmin) * *r;
        }
    }
    h
}

/// Binary search on each point's precision so the conditional entropy is
/// `ln(perplexity)`.
pub fn joint_probabilities(x: &[Vec<f64>], perplexity: f64) -> Result<(Affinities, Vec<String>)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let mut warnings = Vec::new();
    let d = sq_distances(x);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    let mut betas = vec![1.0; n];
    for i in 0..n {
        let di = &d[i * n..(i + 1) * n];
        // Scale the initial guess to the data.
        let spread = di.iter().sum::<f64>() / (n - 1) as f64;
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let row = &mut cond[i * n..(i + 1) * n];
        let mut h = conditional(di, i, beta, row);
        for _ in 0..500 {
            if (h - target).abs() < 1e-12 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            if beta > 1e300 {
                break;
            }
            h = conditional(di, i, beta, row);
        }
        if (h - target).abs() >= 1e-5 {
            warnings.push(format!("point {i}: entropy {h:.6} misses target {target:.6}"));
        }
        entropies[i] = h;
        betas[i] = beta;
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok((
        Affinities {
            n,
            p,
            entropies,
            betas,
            perplexity,
        },
        warnings,
    ))
}

fn uniform_affinities(n: usize, perplexity: f64) -> Affinities {
    let v = 1.0 / (n * (n - 1)) as f64;
    let p = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { v }).collect();
    Affinities {
        n,
        p,
        entropies: vec![((n - 1) as f64).ln(); n],
        betas: vec![0.0; n],
        perplexity,
    }
}

/// Largest usable perplexity for `n` points.
pub fn max_perplexity(n: usize) -> f64 {
    ((n as f64 - 1.0) / 3.0).max(1.0)
}

fn kl_divergence(p: &[f64], y: &[Vec<f64>]) -> f64 {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d: f64 = y[i].iter().zip(&y[j]).map(|(a, b)| (a - b).powi(2)).sum();
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    p.iter()
        .zip(&num)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, qn)| pv * (pv / (qn / z).max(1e-300)).ln())
        .sum()
}

pub fn tsne(features: &Tensor, cfg: &EmbedConfig) -> Result<Embedding> {
    if !features.is_matrix() {
        return Err(Error::shape(
            "tsne",
            format!("expected a matrix, got {:?}", features.shape()),
        ));
    }
    let n = features.rows();
    if n < 4 {
        return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if cfg.iterations < 250 {
        return Err(Error::invalid("t-SNE needs at least 250 iterations"));
    }
    if cfg.out_dims == 0 || !(cfg.perplexity > 0.0) || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid(
            "out_dims, perplexity and learning_rate must be positive",
        ));
    }
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).to_vec()).collect();

    let d = sq_distances(&x);
    let duplicates = (0..n).any(|i| (i + 1..n).any(|j| d[i * n + j] == 0.0));
    if duplicates {
        warnings.push("duplicate points; adding 1e-10 jitter".into());
        let jitter = Normal::new(0.0, 1e-10).expect("valid sd");
        for row in &mut x {
            for v in row.iter_mut() {
                *v += jitter.sample(&mut rng);
            }
        }
    }
    let mut perplexity = cfg.perplexity;
    let limit = max_perplexity(n);
    if perplexity > limit {
        warnings.push(format!(
            "perplexity {perplexity} too large for {n} points; using {limit}"
        ));
        perplexity = limit;
    }
    let degenerate = d.iter().all(|&v| v == 0.0);
    let aff = if degenerate {
        warnings.push("all points coincide; using uniform affinities".into());
        uniform_affinities(n, perplexity)
    } else {
        let (aff, w) = joint_probabilities(&x, perplexity)?;
        warnings.extend(w);
        aff
    };
    for w in &warnings {
        log::warn!("tsne: {w}");
    }

    let dims = cfg.out_dims;
    let init = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let mut update = vec![vec![0.0; dims]; n];
    let mut gains = vec![vec![1.0; dims]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_history = Vec::new();
    if degenerate {
        // Uniform P is matched by the collapsed initial layout.
        center(&mut y);
        let kl = kl_divergence(&aff.p, &y);
        return Ok(Embedding {
            coords: y,
            kl,
            kl_history,
            perplexity,
            warnings,
        });
    }

    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dd: f64 = y[i].iter().zip(&y[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let q = 1.0 / (1.0 + dd);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut grad = vec![0.0; dims];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = 4.0 * (exaggeration * aff.p[i * n + j] - q / z) * q;
                for (g, (a, b)) in grad.iter_mut().zip(y[i].iter().zip(&y[j])) {
                    *g += mult * (a - b);
                }
            }
            for k in 0..dims {
                let same_sign = (grad[k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign {
                    (gains[i][k] * 0.8f64).max(0.01)
                } else {
                    gains[i][k] + 0.2
                };
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * grad[k];
            }
        }
        for (yi, ui) in y.iter_mut().zip(&update) {
            for (a, b) in yi.iter_mut().zip(ui) {
                *a += b;
            }
        }
        center(&mut y);
        if !early {
            kl_history.push((iter + 1, kl_divergence(&aff.p, &y)));
        }
    }
    let kl = kl_divergence(&aff.p, &y);
    if !kl.is_finite() {
        return Err(Error::NonFinite { op: "tsne" });
    }
    Ok(Embedding {
        coords: y,
        kl,
        kl_history,
        perplexity,
        warnings,
    })
}

fn center(y: &mut [Vec<f64>]) {
    let n = y.len() as f64;
    let dims = y[0].len();
    for k in 0..dims {
        let m = y.iter().map(|r| r[k]).sum::<f64>() / n;
        y.iter_mut().for_each(|r| r[k] -= m);
    }
}

impl Embedding {
    /// `patient_id,x,y,risk_group` rows (first two output dimensions).
    pub fn write_csv<W: Write>(&self, w: W, ids: &[i64], groups: &[String]) -> Result<()> {
        if ids.len() != self.coords.len() || groups.len() != self.coords.len() {
            return Err(Error::shape("tsne csv", "ids/groups length differs from point count"));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["patient_id", "x", "y", "risk_group"])?;
        for ((c, id), g) in self.coords.iter().zip(ids).zip(groups) {
            let yv = c.get(1).copied().unwrap_or(0.0);
            out.write_record([id.to_string(), c[0].to_string(), yv.to_string(), g.clone()])?;
        }
        out.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }
}
