//! Training losses: masked spans, n-stream reconstruction, free-bits KL and
//! bag-of-words, plus their per-mode combination.

use serde::{Deserialize, Serialize};

use crate::corpus::MaskedBatch;
use crate::model::{Bound, DialogVed};
use crate::numerics::{Graph, RngState, Tensor, Var};
use crate::text::{is_special, BOS};
use crate::{Error, Result};

/// Probability floor inside the bag-of-words log.
pub const BOW_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

/// Scalar values of one loss evaluation. Disabled terms are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_mask: Option<f64>,
    pub l_rc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_bow: Option<f64>,
    pub total: f64,
    #[serde(skip)]
    pub per_dim_kl: Option<Tensor>,
}

/// Summed negative log-likelihood of `targets[i]` under row `rows[i]` of
/// `log_probs`.
fn picked_nll<'g>(log_probs: Var<'g>, picks: &[(usize, usize)]) -> Result<Var<'g>> {
    let v = log_probs.value().last_dim();
    let flat: Vec<usize> = picks.iter().map(|&(r, t)| r * v + t).collect();
    Ok(log_probs.select(&flat)?.sum().neg())
}

/// Mean negative log-softmax probability of each original token; `logits`
/// holds one row per masked position. Zero when nothing is masked.
pub fn loss_masked_spans<'g>(
    graph: &'g Graph,
    logits: Option<Var<'g>>,
    original: &[usize],
) -> Result<Var<'g>> {
    let Some(logits) = logits else {
        if !original.is_empty() {
            return Err(Error::dim(format!(
                "{} original ids but no logits",
                original.len()
            )));
        }
        return Ok(graph.scalar(0.0));
    };
    let rows = logits.value().rows();
    if rows != original.len() {
        return Err(Error::dim(format!(
            "{rows} logit rows for {} masked positions",
            original.len()
        )));
    }
    if original.is_empty() {
        return Ok(graph.scalar(0.0));
    }
    let picks: Vec<(usize, usize)> = original.iter().copied().enumerate().collect();
    Ok(picked_nll(logits.log_softmax_last(), &picks)?.scale(1.0 / rows as f64))
}

/// Per-stream NLL sums and target counts, accumulated across sequences.
#[derive(Clone)]
pub struct StreamNll<'g> {
    sums: Vec<Vec<Var<'g>>>,
    counts: Vec<usize>,
}

impl<'g> StreamNll<'g> {
    pub fn new(streams: usize) -> Self {
        StreamNll {
            sums: vec![Vec::new(); streams],
            counts: vec![0; streams],
        }
    }

    /// Adds one sequence. Stream `k` (0-based) at position `t` is scored
    /// against `targets[t + k]`; positions without a target are skipped.
    pub fn add(&mut self, stream_logits: &[Var<'g>], targets: &[usize]) -> Result<()> {
        if stream_logits.len() != self.sums.len() {
            return Err(Error::dim(format!(
                "{} stream logits for {} streams",
                stream_logits.len(),
                self.sums.len()
            )));
        }
        let t = targets.len();
        for (k, logits) in stream_logits.iter().enumerate() {
            if logits.value().rows() != t {
                return Err(Error::dim(format!(
                    "stream {} has {} rows for {t} targets",
                    k + 1,
                    logits.value().rows()
                )));
            }
            if k >= t {
                continue;
            }
            let picks: Vec<(usize, usize)> = (0..t - k).map(|p| (p, targets[p + k])).collect();
            self.sums[k].push(picked_nll(logits.log_softmax_last(), &picks)?);
            self.counts[k] += picks.len();
        }
        Ok(())
    }

    /// Token-mean NLL per stream, averaged over streams that saw a target.
    pub fn loss(&self, graph: &'g Graph) -> Result<Var<'g>> {
        let mut means = Vec::new();
        for (sums, &count) in self.sums.iter().zip(&self.counts) {
            if count > 0 {
                means.push(graph.add_all(sums)?.scale(1.0 / count as f64));
            }
        }
        if means.is_empty() {
            return Err(Error::dim("reconstruction loss over no targets"));
        }
        let n = means.len() as f64;
        Ok(graph.add_all(&means)?.scale(1.0 / n))
    }
}

/// Reconstruction loss of one sequence; `targets` ends with `[EOS]`.
pub fn loss_reconstruction<'g>(
    graph: &'g Graph,
    stream_logits: &[Var<'g>],
    targets: &[usize],
) -> Result<Var<'g>> {
    let mut acc = StreamNll::new(stream_logits.len());
    acc.add(stream_logits, targets)?;
    acc.loss(graph)
}

/// Free-bits KL against the standard normal: `Σ_i max(λ, KL_i)`.
///
/// Returns the loss and the per-dimension KL values. Where `KL_i ≤ λ` the
/// dimension contributes a constant and receives no gradient.
pub fn loss_kl_free_bits<'g>(
    mu: Var<'g>,
    logvar: Var<'g>,
    lambda: f64,
) -> Result<(Var<'g>, Tensor)> {
    if mu.shape() != logvar.shape() {
        return Err(Error::dim(format!(
            "mu {:?} and logvar {:?} differ in shape",
            mu.shape(),
            logvar.shape()
        )));
    }
    let finite = |v: &Var| v.value().data().iter().all(|x| x.is_finite());
    if !finite(&mu) || !finite(&logvar) || !lambda.is_finite() {
        return Err(Error::Numeric("non-finite input to the KL term".into()));
    }
    let per_dim = mu
        .mul(mu)?
        .add(logvar.exp())?
        .sub(logvar)?
        .add_scalar(-1.0)
        .scale(0.5);
    let values = (*per_dim.value()).clone();
    Ok((per_dim.floor_at(lambda).sum(), values))
}

/// `-Σ_t log f[r_t]` over the content tokens of `response`, with
/// probabilities floored at [`BOW_EPSILON`].
pub fn loss_bow<'g>(f: Var<'g>, response: &[usize]) -> Result<Var<'g>> {
    let v = f.value().len();
    let content: Vec<usize> = response
        .iter()
        .copied()
        .filter(|&t| !is_special(t))
        .collect();
    if let Some(bad) = content.iter().find(|&&t| t >= v) {
        return Err(Error::dim(format!(
            "token {bad} outside a {v}-way distribution"
        )));
    }
    if content.is_empty() {
        return Ok(f.graph().scalar(0.0));
    }
    Ok(f.reshape(&[v])?
        .select(&content)?
        .floor_at(BOW_EPSILON)
        .ln()
        .sum()
        .neg())
}

/// Loss terms computed on one batch.
pub struct LossComponents<'g> {
    pub l_mask: Var<'g>,
    pub l_rc: Var<'g>,
    /// KL loss and per-dimension KL.
    pub l_kl: Option<(Var<'g>, Tensor)>,
    pub l_bow: Option<Var<'g>>,
}

/// Sums the terms enabled by `mode` and `use_latent`.
pub fn total_loss<'g>(
    c: LossComponents<'g>,
    mode: Mode,
    use_latent: bool,
) -> Result<(Var<'g>, LossBreakdown)> {
    let g = c.l_rc.graph();
    let mut terms = vec![c.l_rc];
    let l_mask = (mode == Mode::Pretrain).then(|| {
        terms.push(c.l_mask);
        c.l_mask.item()
    });
    let (mut l_kl, mut l_bow, mut per_dim_kl) = (None, None, None);
    if use_latent {
        let (kl, per_dim) = c
            .l_kl
            .ok_or_else(|| Error::Contract("latent model without a KL term".into()))?;
        let bow = c
            .l_bow
            .ok_or_else(|| Error::Contract("latent model without a bag-of-words term".into()))?;
        terms.push(kl);
        terms.push(bow);
        l_kl = Some(kl.item());
        l_bow = Some(bow.item());
        per_dim_kl = Some(per_dim);
    }
    let total = g.add_all(&terms)?;
    let breakdown = LossBreakdown {
        l_mask,
        l_rc: c.l_rc.item(),
        l_kl,
        l_bow,
        total: total.item(),
        per_dim_kl,
    };
    Ok((total, breakdown))
}

/// Decoder input for a target sequence: `[BOS]` followed by all but the last target.
pub fn decoder_input(targets: &[usize]) -> Vec<usize> {
    std::iter::once(BOS)
        .chain(targets[..targets.len().saturating_sub(1)].iter().copied())
        .collect()
}

/// Full objective over a batch.
///
/// In pretrain mode the batch is expected to carry span-masking records.
/// The latent is drawn from the prior network with `rng`. KL and
/// bag-of-words terms are averaged over rows; masked-span and
/// reconstruction terms are token means over the batch.
pub fn batch_loss<'g>(
    model: &DialogVed,
    b: &Bound<'g>,
    batch: &MaskedBatch,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Var<'g>, LossBreakdown)> {
    let cfg = model.config();
    let g = b.graph();
    let rows = batch.rows();
    if rows == 0 {
        return Err(Error::Batch("empty batch".into()));
    }
    let mut mlm_logits = Vec::new();
    let mut originals = Vec::new();
    let mut recon = StreamNll::new(cfg.ngram);
    let mut kls = Vec::new();
    let mut per_dim = vec![0.0; cfg.latent_size];
    let mut bows = Vec::new();

    for r in 0..rows {
        let enc = model.encode_row(b, batch, r)?;
        if mode == Mode::Pretrain && !batch.masks[r].is_empty() {
            let positions: Vec<usize> = batch.masks[r].iter().map(|m| m.position).collect();
            mlm_logits.push(model.mlm_head(b, enc.hidden.gather_rows(&positions)?)?);
            originals.extend(batch.masks[r].iter().map(|m| m.original));
        }
        let targets = &batch.targets[r][..batch.target_lens[r]];
        let memory = if cfg.use_latent {
            let latent = model.sample_prior(b, enc.h_cls, rng)?;
            let (kl, dims) = loss_kl_free_bits(latent.mu, latent.logvar, cfg.free_bits)?;
            kls.push(kl);
            per_dim
                .iter_mut()
                .zip(dims.data())
                .for_each(|(a, d)| *a += d / rows as f64);
            bows.push(loss_bow(model.bow_head(b, latent.z, enc.h_cls)?, targets)?);
            Some(model.memory_project(b, latent.z)?)
        } else {
            None
        };
        let logits =
            model.decode_nstream(b, &decoder_input(targets), memory.as_ref(), &enc, cfg.ngram)?;
        recon.add(&logits, targets)?;
    }

    let mlm = if mlm_logits.is_empty() {
        None
    } else {
        Some(g.concat_rows(&mlm_logits)?)
    };
    let mean =
        |terms: &[Var<'g>]| -> Result<Var<'g>> { Ok(g.add_all(terms)?.scale(1.0 / rows as f64)) };
    let components = LossComponents {
        l_mask: loss_masked_spans(g, mlm, &originals)?,
        l_rc: recon.loss(g)?,
        l_kl: if cfg.use_latent {
            Some((mean(&kls)?, Tensor::vector(per_dim)))
        } else {
            None
        },
        l_bow: if cfg.use_latent {
            Some(mean(&bows)?)
        } else {
            None
        },
    };
    total_loss(components, mode, cfg.use_latent)
}
