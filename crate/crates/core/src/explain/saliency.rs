use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::SequenceTensor;
use crate::encoders::EncoderModel;
use crate::error::Result;
use crate::tensor::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub feature_names: Vec<String>,
    /// `T x F` mean of `|d sum(h_T) / d X_t|` over samples.
    pub avg_gradients: Vec<Vec<f64>>,
    /// Per sample, the feature with the largest time-averaged |gradient|.
    pub max_feature_counts: IndexMap<String, usize>,
}

/// Input-gradient saliency of the summed final hidden representation.
pub fn gradient_saliency(model: &EncoderModel, x: &SequenceTensor) -> Result<SaliencyReport> {
    let (n, t, f) = (x.n(), x.steps(), x.n_features());
    let mut avg = vec![vec![0.0; f]; t];
    let mut counts: IndexMap<String, usize> = x.feature_names.iter().map(|k| (k.clone(), 0)).collect();
    if n > 0 {
        let rows: Vec<usize> = (0..n).collect();
        let mut g = Graph::new();
        let out = model.forward(&mut g, x, &rows, None, true)?;
        let total = g.sum(out.final_hidden)?;
        let grads = g.backward(total)?.collect(&out.inputs)?;
        let mut per_sample = vec![vec![0.0; f]; n];
        for (step, grad) in grads.iter().enumerate() {
            for i in 0..n {
                for j in 0..f {
                    let v = grad.get(i, j).abs();
                    avg[step][j] += v / n as f64;
                    per_sample[i][j] += v / t as f64;
                }
            }
        }
        for s in &per_sample {
            let best = (0..f).fold(0, |b, j| if s[j] > s[b] { j } else { b });
            counts[best] += 1;
        }
    }
    Ok(SaliencyReport {
        feature_names: x.feature_names.clone(),
        avg_gradients: avg,
        max_feature_counts: counts,
    })
}

impl SaliencyReport {
    /// `step,<feature...>` header then one row per time step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        header.extend(self.feature_names.iter().cloned());
        out.write_record(&header)?;
        for (t, row) in self.avg_gradients.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| crate::Error::Data(e.to_string()))?;
        Ok(())
    }
}
