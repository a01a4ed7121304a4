use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lstm, ssm, transformer};
use crate::data::{container, SequenceTensor};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lstm,
    Transformer,
    #[serde(alias = "mamba")]
    Ssm,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Lstm, EncoderKind::Transformer, EncoderKind::Ssm];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm",
            EncoderKind::Transformer => "transformer",
            EncoderKind::Ssm => "ssm",
        }
    }

    /// Row label of the encoder + Cox combination in metric tables.
    pub fn cox_label(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm-cox",
            EncoderKind::Transformer => "transformer-cox",
            EncoderKind::Ssm => "mamba-cox",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lstm" => Ok(EncoderKind::Lstm),
            "transformer" => Ok(EncoderKind::Transformer),
            "ssm" | "mamba" => Ok(EncoderKind::Ssm),
            other => Err(Error::invalid(format!("unknown encoder kind `{other}`"))),
        }
    }
}

/// Architecture of an encoder. `hidden` is the LSTM unit count, the
/// transformer model width, or the state dimension of the SSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input: usize,
    pub steps: usize,
    pub hidden: usize,
    pub output: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub positional_encoding: bool,
    pub dropout_p: f64,
    pub seed: u64,
}

impl EncoderSpec {
    /// Defaults per kind: LSTM with 20 units; transformer with width 16,
    /// 2 heads, FFN width 32; SSM with state dimension 16. Feature output
    /// dimension 8 and dropout 0.5 throughout.
    pub fn new(kind: EncoderKind, input: usize, steps: usize) -> Self {
        let hidden = match kind {
            EncoderKind::Lstm => 20,
            EncoderKind::Transformer | EncoderKind::Ssm => 16,
        };
        Self {
            kind,
            input,
            steps,
            hidden,
            output: 8,
            heads: 2,
            ffn_width: 32,
            positional_encoding: true,
            dropout_p: 0.5,
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_output(mut self, output: usize) -> Self {
        self.output = output;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.steps == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::invalid(format!("encoder dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.kind == EncoderKind::Transformer {
            if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
                return Err(Error::invalid(format!(
                    "model width {} is not divisible by {} heads",
                    self.hidden, self.heads
                )));
            }
            if self.ffn_width == 0 {
                return Err(Error::invalid("ffn width must be positive"));
            }
        }
        Ok(())
    }
}

/// Shape and initialisation fan-in of one parameter.
#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
    /// Fixed initial value instead of uniform noise for columns `range`.
    pub fill: Option<(std::ops::Range<usize>, f64)>,
}

impl ParamSpec {
    pub fn weight(name: &'static str, rows: usize, cols: usize) -> Self {
        Self {
            name,
            rows,
            cols,
            fan_in: rows,
            fill: None,
        }
    }

    pub fn bias(name: &'static str, cols: usize, fan_in: usize) -> Self {
        Self {
            name,
            rows: 1,
            cols,
            fan_in,
            fill: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// A sequence encoder plus its linear feature layer and scalar regression
/// head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    spec: EncoderSpec,
    params: Vec<Param>,
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub params: Vec<NodeId>,
    /// One `N x F` input leaf per time step.
    pub inputs: Vec<NodeId>,
    /// Per-step hidden states (`N x hidden`) where the architecture has them.
    pub hidden: Vec<NodeId>,
    /// Representation the feature layer reads: last LSTM/SSM state or the
    /// mean-pooled transformer output.
    pub final_hidden: NodeId,
    /// `N x M` feature vectors.
    pub features: NodeId,
    /// `N x 1` regression output.
    pub output: NodeId,
}

/// Inverted dropout applied during training only.
pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.p == 0.0 {
            return Ok(x);
        }
        let shape = g.value(x)?.shape().to_vec();
        let keep = 1.0 / (1.0 - self.p);
        let n = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        g.hadamard(x, m)
    }
}

impl EncoderModel {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = Self::param_specs(&spec)
            .into_iter()
            .map(|ps| {
                let bound = 1.0 / (ps.fan_in as f64).sqrt();
                let mut data: Vec<f64> = (0..ps.rows * ps.cols)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                if let Some((range, v)) = &ps.fill {
                    for r in 0..ps.rows {
                        for c in range.clone() {
                            data[r * ps.cols + c] = *v;
                        }
                    }
                }
                Ok(Param {
                    name: ps.name.to_string(),
                    value: Tensor::matrix(ps.rows, ps.cols, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, params })
    }

    pub(crate) fn param_specs(spec: &EncoderSpec) -> Vec<ParamSpec> {
        let mut specs = match spec.kind {
            EncoderKind::Lstm => lstm::param_specs(spec),
            EncoderKind::Transformer => transformer::param_specs(spec),
            EncoderKind::Ssm => ssm::param_specs(spec),
        };
        specs.extend([
            ParamSpec::weight("w_feat", spec.hidden, spec.output),
            ParamSpec::bias("b_feat", spec.output, spec.hidden),
            ParamSpec::weight("w_head", spec.output, 1),
            ParamSpec::bias("b_head", 1, spec.output),
        ]);
        specs
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn kind(&self) -> EncoderKind {
        self.spec.kind
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Replaces one parameter; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn param_values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub(crate) fn set_dropout(&mut self, p: f64) {
        self.spec.dropout_p = p;
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().fill(0.0);
        }
    }

    fn check_input(&self, steps: &[Tensor]) -> Result<()> {
        if steps.len() != self.spec.steps {
            return Err(Error::shape(
                "encoder",
                format!("expected {} time steps, got {}", self.spec.steps, steps.len()),
            ));
        }
        let n = steps[0].rows();
        for s in steps {
            if s.shape() != [n, self.spec.input] {
                return Err(Error::shape(
                    "encoder",
                    format!("step input {:?}, expected [{n}, {}]", s.shape(), self.spec.input),
                ));
            }
        }
        Ok(())
    }

    /// Builds the forward graph from per-step `N x F` inputs. With
    /// `rng = Some(..)` dropout is active (training mode).
    pub fn forward_steps(
        &self,
        g: &mut Graph,
        steps: Vec<Tensor>,
        rng: Option<&mut ChaCha8Rng>,
        input_grad: bool,
    ) -> Result<ForwardNodes> {
        self.check_input(&steps)?;
        let params: Vec<NodeId> = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        let inputs: Vec<NodeId> = steps
            .into_iter()
            .map(|s| if input_grad { g.param(s) } else { g.constant(s) })
            .collect();
        let mut dropout = Dropout {
            p: self.spec.dropout_p,
            rng,
        };
        let core = match self.spec.kind {
            EncoderKind::Lstm => lstm::forward(g, &self.spec, &params, &inputs)?,
            EncoderKind::Transformer => transformer::forward(g, &self.spec, &params, &inputs)?,
            EncoderKind::Ssm => ssm::forward(g, &self.spec, &params, &inputs)?,
        };
        let k = params.len() - 4;
        let (w_feat, b_feat, w_head, b_head) = (params[k], params[k + 1], params[k + 2], params[k + 3]);
        let dropped = dropout.apply(g, core.final_hidden)?;
        let f = g.matmul(dropped, w_feat)?;
        let features = g.add(f, b_feat)?;
        let o = g.matmul(features, w_head)?;
        let output = g.add(o, b_head)?;
        Ok(ForwardNodes {
            params,
            inputs,
            hidden: core.hidden,
            final_hidden: core.final_hidden,
            features,
            output,
        })
    }

    /// Forward pass over selected rows of a sequence tensor.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: &SequenceTensor,
        rows: &[usize],
        rng: Option<&mut ChaCha8Rng>,
        input_grad: bool,
    ) -> Result<ForwardNodes> {
        if x.steps() != self.spec.steps || x.n_features() != self.spec.input {
            return Err(Error::shape(
                "encoder",
                format!(
                    "sequences are {}x{}, model expects {}x{}",
                    x.steps(),
                    x.n_features(),
                    self.spec.steps,
                    self.spec.input
                ),
            ));
        }
        let steps = (0..x.steps()).map(|t| x.step_matrix(t, rows)).collect();
        self.forward_steps(g, steps, rng, input_grad)
    }

    /// Inference-mode feature vectors (`N x M`).
    pub fn extract_features(&self, x: &SequenceTensor) -> Result<Tensor> {
        let rows: Vec<usize> = (0..x.n()).collect();
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, &rows, None, false)?;
        Ok(g.value(out.features)?.clone())
    }

    /// Inference-mode regression output, one value per sequence.
    pub fn predict(&self, x: &SequenceTensor) -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..x.n()).collect();
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, &rows, None, false)?;
        Ok(g.value(out.output)?.data().to_vec())
    }

    /// Regression output for flattened `T * F` inputs.
    pub fn predict_flat(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (t, f) = (self.spec.steps, self.spec.input);
        let n = rows.len();
        let mut steps = vec![Vec::with_capacity(n * f); t];
        for r in rows {
            if r.len() != t * f {
                return Err(Error::shape(
                    "predict_flat",
                    format!("row of {} values, expected {}", r.len(), t * f),
                ));
            }
            for (s, chunk) in steps.iter_mut().zip(r.chunks(f)) {
                s.extend_from_slice(chunk);
            }
        }
        let steps = steps
            .into_iter()
            .map(|d| Tensor::matrix(n, f, d))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let out = self.forward_steps(&mut g, steps, None, false)?;
        Ok(g.value(out.output)?.data().to_vec())
    }

    /// Inference-mode per-step hidden states, each `N x hidden`.
    pub fn hidden_states(&self, x: &SequenceTensor) -> Result<Vec<Tensor>> {
        let rows: Vec<usize> = (0..x.n()).collect();
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, &rows, None, false)?;
        out.hidden.iter().map(|h| g.value(*h).cloned()).collect()
    }

    pub fn save(&self, path: &Path, train: Option<&super::TrainConfig>) -> Result<()> {
        let (header, payload) = self.checkpoint(train);
        container::write(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (Checkpoint, Vec<f64>) = container::read(path)?;
        Self::from_checkpoint(header, payload)
    }

    pub fn to_bytes(&self, train: Option<&super::TrainConfig>) -> Result<Vec<u8>> {
        let (header, payload) = self.checkpoint(train);
        container::encode(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (Checkpoint, Vec<f64>) = container::decode(bytes)?;
        Self::from_checkpoint(header, payload)
    }

    fn checkpoint(&self, train: Option<&super::TrainConfig>) -> (Checkpoint, Vec<f64>) {
        let header = Checkpoint {
            kind: self.spec.kind,
            seed: self.spec.seed,
            dims: self.spec.clone(),
            cfg: train.cloned(),
            params: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect(),
        };
        let payload = self
            .params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect();
        (header, payload)
    }

    fn from_checkpoint(h: Checkpoint, payload: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(h.dims)?;
        let mut offset = 0;
        if model.params.len() != h.params.len() {
            return Err(Error::Format("parameter list does not match architecture".into()));
        }
        for (p, (name, shape)) in model.params.iter_mut().zip(h.params) {
            if p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Format(format!("unexpected parameter `{name}` {shape:?}")));
            }
            let len = p.value.len();
            let chunk = payload
                .get(offset..offset + len)
                .ok_or_else(|| Error::Format("payload too short".into()))?;
            p.value = Tensor::new(shape, chunk.to_vec())?;
            offset += len;
        }
        if offset != payload.len() {
            return Err(Error::Format("payload has trailing values".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    kind: EncoderKind,
    seed: u64,
    dims: EncoderSpec,
    cfg: Option<super::TrainConfig>,
    params: Vec<(String, Vec<usize>)>,
}

/// Hidden-state output of an architecture's sequence core.
pub(crate) struct CoreOutput {
    pub hidden: Vec<NodeId>,
    pub final_hidden: NodeId,
}
