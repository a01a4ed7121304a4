//! Single-layer LSTM. Gate pre-activations are packed `[i | f | g | o]`.

use super::model::{CoreOutput, EncoderSpec, ParamSpec};
use crate::error::Result;
use crate::tensor::{Axis, Graph, NodeId};

pub(crate) const FORGET_BIAS: f64 = 1.0;

pub(crate) fn param_specs(spec: &EncoderSpec) -> Vec<ParamSpec> {
    let u = spec.hidden;
    let mut b = ParamSpec::bias("b", 4 * u, spec.input);
    b.fill = Some((u..2 * u, FORGET_BIAS));
    vec![
        ParamSpec::weight("w_x", spec.input, 4 * u),
        ParamSpec::weight("w_h", u, 4 * u),
        b,
    ]
}

pub(crate) fn forward(g: &mut Graph, spec: &EncoderSpec, p: &[NodeId], xs: &[NodeId]) -> Result<CoreOutput> {
    let u = spec.hidden;
    let (w_x, w_h, b) = (p[0], p[1], p[2]);
    let mut hidden = Vec::with_capacity(xs.len());
    let mut state: Option<(NodeId, NodeId)> = None;
    for &x in xs {
        let zx = g.matmul(x, w_x)?;
        let z = match state {
            Some((h, _)) => {
                let zh = g.matmul(h, w_h)?;
                g.add(zx, zh)?
            }
            None => zx,
        };
        let z = g.add(z, b)?;
        let zi = g.slice(z, Axis::Cols, 0, u)?;
        let zf = g.slice(z, Axis::Cols, u, 2 * u)?;
        let zg = g.slice(z, Axis::Cols, 2 * u, 3 * u)?;
        let zo = g.slice(z, Axis::Cols, 3 * u, 4 * u)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let ic = g.hadamard(i, cand)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = g.hadamard(f, c_prev)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c)?;
        let h = g.hadamard(o, tc)?;
        hidden.push(h);
        state = Some((h, c));
    }
    let final_hidden = *hidden.last().expect("at least one step");
    Ok(CoreOutput { hidden, final_hidden })
}
