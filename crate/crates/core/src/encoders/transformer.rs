//! One-block transformer encoder: input projection, optional sinusoidal
//! positions, multi-head self-attention and a ReLU feed-forward layer,
//! both residual, followed by mean pooling over time.

use super::model::{CoreOutput, EncoderSpec, ParamSpec};
use crate::error::Result;
use crate::tensor::{Axis, Graph, NodeId, Tensor};

pub(crate) fn param_specs(spec: &EncoderSpec) -> Vec<ParamSpec> {
    let (f, d, h) = (spec.input, spec.hidden, spec.ffn_width);
    vec![
        ParamSpec::weight("w_in", f, d),
        ParamSpec::bias("b_in", d, f),
        ParamSpec::weight("w_q", d, d),
        ParamSpec::weight("w_k", d, d),
        ParamSpec::weight("w_v", d, d),
        ParamSpec::weight("w_o", d, d),
        ParamSpec::weight("w_ff1", d, h),
        ParamSpec::bias("b_ff1", h, d),
        ParamSpec::weight("w_ff2", h, d),
        ParamSpec::bias("b_ff2", d, h),
    ]
}

/// Sinusoidal position code: `sin(t / 10000^(2i/d))` on even columns and
/// the matching cosine on odd columns.
pub fn positional_encoding(steps: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[steps, d]);
    for t in 0..steps {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
            pe.set(t, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

pub(crate) fn forward(g: &mut Graph, spec: &EncoderSpec, p: &[NodeId], xs: &[NodeId]) -> Result<CoreOutput> {
    let (d, heads, t) = (spec.hidden, spec.heads, xs.len());
    let dk = d / heads;
    let n = g.value(xs[0])?.rows();
    let [w_in, b_in, w_q, w_k, w_v, w_o, w_ff1, b_ff1, w_ff2, b_ff2] = p[..10] else {
        unreachable!("transformer parameter list has ten entries")
    };

    // Step-major stack: row t * n + i.
    let x = g.concat(xs, Axis::Rows)?;
    let e = g.matmul(x, w_in)?;
    let mut e = g.add(e, b_in)?;
    if spec.positional_encoding {
        let pe = positional_encoding(t, d);
        let mut rows = Vec::with_capacity(t * n * d);
        for step in 0..t {
            for _ in 0..n {
                rows.extend_from_slice(pe.row(step));
            }
        }
        let pe = g.constant(Tensor::matrix(t * n, d, rows)?);
        e = g.add(e, pe)?;
    }
    // Sample-major: row i * t + step.
    let order: Vec<usize> = (0..n).flat_map(|i| (0..t).map(move |s| s * n + i)).collect();
    let s = g.select_rows(e, &order)?;

    let q = g.matmul(s, w_q)?;
    let k = g.matmul(s, w_k)?;
    let v = g.matmul(s, w_v)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (i * t, (i + 1) * t);
        let qi = g.slice(q, Axis::Rows, lo, hi)?;
        let ki = g.slice(k, Axis::Rows, lo, hi)?;
        let vi = g.slice(v, Axis::Rows, lo, hi)?;
        let mut head_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = g.slice(qi, Axis::Cols, c0, c1)?;
            let kh = g.slice(ki, Axis::Cols, c0, c1)?;
            let vh = g.slice(vi, Axis::Cols, c0, c1)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            head_out.push(g.matmul(attn, vh)?);
        }
        per_sample.push(if heads == 1 {
            head_out[0]
        } else {
            g.concat(&head_out, Axis::Cols)?
        });
    }
    let attn = if n == 1 {
        per_sample[0]
    } else {
        g.concat(&per_sample, Axis::Rows)?
    };
    let o = g.matmul(attn, w_o)?;
    let r1 = g.add(s, o)?;

    let ff = g.matmul(r1, w_ff1)?;
    let ff = g.add(ff, b_ff1)?;
    let ff = g.relu(ff)?;
    let ff = g.matmul(ff, w_ff2)?;
    let ff = g.add(ff, b_ff2)?;
    let r2 = g.add(r1, ff)?;

    let mut pool = Tensor::zeros(&[n, n * t]);
    for i in 0..n {
        for step in 0..t {
            pool.set(i, i * t + step, 1.0 / t as f64);
        }
    }
    let pool = g.constant(pool);
    let pooled = g.matmul(pool, r2)?;
    Ok(CoreOutput {
        hidden: Vec::new(),
        final_hidden: pooled,
    })
}
