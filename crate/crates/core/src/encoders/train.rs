use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EncoderModel;
use crate::data::{SequenceTensor, SurvivalOutcome};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Standardized survival time of each patient.
    #[default]
    SurvivalTime,
    /// Mean of the standardized features of the last observed step, which
    /// is hidden from the input.
    NextStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout_p: f64,
    pub seed: u64,
    pub target_kind: TargetKind,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            dropout_p: 0.5,
            seed: 0,
            target_kind: TargetKind::SurvivalTime,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training-mode loss per epoch.
    pub loss_history: Vec<f64>,
    /// Eval-mode validation loss per epoch (empty without a validation set).
    pub val_history: Vec<f64>,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

/// Regression targets plus the (possibly masked) inputs they are paired with.
fn build_targets(
    x: &SequenceTensor,
    outcomes: &[SurvivalOutcome],
    kind: TargetKind,
    fit_rows: &[usize],
) -> Result<(SequenceTensor, Vec<f64>)> {
    match kind {
        TargetKind::SurvivalTime => {
            let by_id: HashMap<i64, f64> = outcomes.iter().map(|o| (o.patient_id, o.time)).collect();
            let times = x
                .patient_ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::Data(format!("no outcome for patient {id}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let fit: Vec<f64> = fit_rows.iter().map(|&i| times[i]).collect();
            let mean = fit.iter().sum::<f64>() / fit.len() as f64;
            let var = fit.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / fit.len() as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            Ok((x.clone(), times.iter().map(|t| (t - mean) / sd).collect()))
        }
        TargetKind::NextStep => {
            let (t, f) = (x.steps(), x.n_features());
            let mut data = x.tensor().data().to_vec();
            let mut target = vec![0.0; x.n()];
            for i in 0..x.n() {
                let v = x.valid_steps[i];
                if v < 2 {
                    continue;
                }
                let off = (i * t + v - 1) * f;
                let last = &mut data[off..off + f];
                target[i] = last.iter().sum::<f64>() / f as f64;
                last.fill(0.0);
            }
            let masked = SequenceTensor::from_parts(
                Tensor::new(vec![x.n(), t, f], data)?,
                x.patient_ids.clone(),
                x.feature_names.clone(),
                x.valid_steps.clone(),
                x.scaler.clone(),
            )?;
            Ok((masked, target))
        }
    }
}

fn batch_loss(
    model: &EncoderModel,
    g: &mut Graph,
    x: &SequenceTensor,
    y: &[f64],
    rows: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(crate::tensor::NodeId, Vec<crate::tensor::NodeId>)> {
    let out = model.forward(g, x, rows, rng, false)?;
    let target = g.constant(Tensor::matrix(rows.len(), 1, rows.iter().map(|&i| y[i]).collect())?);
    let loss = g.mse(out.output, target)?;
    Ok((loss, out.params))
}

fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains `model` with mini-batch Adam on an MSE regression target. A
/// seeded fraction of patients is held out for validation-loss monitoring.
pub fn train_encoder(
    mut model: EncoderModel,
    x: &SequenceTensor,
    outcomes: &[SurvivalOutcome],
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    cfg.validate()?;
    if x.n() == 0 {
        return Err(Error::Data("no sequences to train on".into()));
    }
    model.set_dropout(cfg.dropout_p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..x.n()).collect();
    order.shuffle(&mut rng);
    let n_val = ((x.n() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(x.n() - 1);
    let mut val_rows = order[..n_val].to_vec();
    let mut train_rows = order[n_val..].to_vec();
    val_rows.sort_unstable();
    train_rows.sort_unstable();

    let (inputs, y) = build_targets(x, outcomes, cfg.target_kind, &train_rows)?;
    let batch = cfg.batch_size.min(train_rows.len());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(cfg.epochs),
        val_history: Vec::new(),
        train_rows: train_rows.clone(),
        val_rows: val_rows.clone(),
    };

    let mut shuffled = train_rows.clone();
    for epoch in 1..=cfg.epochs {
        shuffled.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, rows) in shuffled.chunks(batch).enumerate() {
            let mut g = Graph::new();
            let (loss, params) =
                batch_loss(&model, &mut g, &inputs, &y, rows, Some(&mut rng)).map_err(|e| diverged(e, epoch, b))?;
            let value = g.value(loss)?.item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            total += value * rows.len() as f64;
            let grads = g.backward(loss)?.collect(&params)?;
            let mut values: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
            adam_step(&mut values, &grads, &mut state, &adam)?;
            for (dst, src) in model.param_values_mut().zip(values) {
                *dst = src;
            }
        }
        let epoch_loss = total / train_rows.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        report.loss_history.push(epoch_loss);
        if !val_rows.is_empty() {
            let mut g = Graph::new();
            let (loss, _) =
                batch_loss(&model, &mut g, &inputs, &y, &val_rows, None).map_err(|e| diverged(e, epoch, 0))?;
            report.val_history.push(g.value(loss)?.item().unwrap_or(f64::NAN));
        }
    }
    Ok((model, report))
}
