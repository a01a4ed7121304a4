//! Linear state-space recurrence `H_t = H_{t-1} A^T + E_t B^T` over
//! projected inputs `E_t = X_t W_enc + b_enc`, with `H_0 = 0`.

use super::model::{CoreOutput, EncoderSpec, ParamSpec};
use crate::error::Result;
use crate::tensor::{Graph, NodeId};

pub(crate) fn param_specs(spec: &EncoderSpec) -> Vec<ParamSpec> {
    let d = spec.hidden;
    vec![
        ParamSpec::weight("w_enc", spec.input, d),
        ParamSpec::bias("b_enc", d, spec.input),
        ParamSpec::weight("a", d, d),
        ParamSpec::weight("b", d, d),
    ]
}

pub(crate) fn forward(g: &mut Graph, _spec: &EncoderSpec, p: &[NodeId], xs: &[NodeId]) -> Result<CoreOutput> {
    let (w_enc, b_enc, a, b) = (p[0], p[1], p[2], p[3]);
    let at = g.transpose(a)?;
    let bt = g.transpose(b)?;
    let mut hidden = Vec::with_capacity(xs.len());
    let mut h: Option<NodeId> = None;
    for &x in xs {
        let e = g.matmul(x, w_enc)?;
        let e = g.add(e, b_enc)?;
        let input = g.matmul(e, bt)?;
        let next = match h {
            Some(prev) => {
                let carried = g.matmul(prev, at)?;
                g.add(carried, input)?
            }
            None => input,
        };
        hidden.push(next);
        h = Some(next);
    }
    let final_hidden = *hidden.last().expect("at least one step");
    Ok(CoreOutput { hidden, final_hidden })
}
