use crate::numerics::{Tensor, Var};
use crate::{Error, Result};

/// Additive score for blocked query/key pairs; `exp` of it underflows to 0.
const BLOCKED: f64 = -1e9;

/// Learned key offsets `a_ij` looked up per (query, key) pair.
#[derive(Clone, Copy)]
pub struct RelativeBias<'g, 'a> {
    /// `[buckets × head_dim]`.
    pub table: Var<'g>,
    /// Row-major `[queries × keys]` bucket indices.
    pub buckets: &'a [usize],
}

/// Single-head scaled dot-product attention with relative key offsets.
///
/// Scores are `q_i · (k_j + a_ij) / sqrt(d)` where `a_ij` is the bias row of
/// the pair's bucket. `blocked` (row-major `[queries × keys]`) removes pairs
/// from the softmax. An optional `memory` key/value row is prepended to the
/// keys; it carries no bias and is never blocked.
pub fn attention_with_relative_bias<'g>(
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
    bias: Option<RelativeBias<'g, '_>>,
    blocked: &[bool],
    memory: Option<(Var<'g>, Var<'g>)>,
) -> Result<Var<'g>> {
    let g = q.graph();
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::dim(format!(
            "attention over q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let (tq, tk, d) = (qs[0], ks[0], qs[1]);
    if blocked.len() != tq * tk {
        return Err(Error::dim(format!(
            "attention mask has {} entries for {tq}x{tk} scores",
            blocked.len()
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();

    let mut scores = q.matmul(k.transpose()?)?;
    if let Some(b) = bias {
        if b.buckets.len() != tq * tk {
            return Err(Error::dim(format!(
                "bucket matrix has {} entries for {tq}x{tk} scores",
                b.buckets.len()
            )));
        }
        let per_bucket = q.matmul(b.table.transpose()?)?;
        scores = scores.add(per_bucket.gather_cols(b.buckets, tk)?)?;
    }
    scores = scores.scale(scale);
    if blocked.iter().any(|&x| x) {
        let mask = blocked
            .iter()
            .map(|&x| if x { BLOCKED } else { 0.0 })
            .collect();
        scores = scores.add(g.constant(Tensor::new(vec![tq, tk], mask)?))?;
    }

    let (scores, values) = match memory {
        Some((mk, mv)) => {
            let mem_scores = q.matmul(mk.reshape(&[1, d])?.transpose()?)?.scale(scale);
            (
                g.concat_cols(&[mem_scores, scores])?,
                g.concat_rows(&[mv.reshape(&[1, d])?, v])?,
            )
        }
        None => (scores, v),
    };
    scores.softmax_last().matmul(values)
}
