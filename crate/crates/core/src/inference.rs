//! Response generation over stream-1 logits.

use serde::{Deserialize, Serialize};

use crate::model::{Bound, DialogVed, EncoderOutput, MemoryVector};
use crate::numerics::{Graph, RngState, Tensor, Var};
use crate::text::{BOS, CLS, EOS, MASK, PAD, SOT};
use crate::{Error, Result};

/// Ids that decoding never emits.
pub const BANNED: [usize; 5] = [PAD, CLS, MASK, SOT, BOS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
    Topk,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            "topk" => Ok(Strategy::Topk),
            _ => Err(Error::Config(format!(
                "unknown strategy {s:?} (expected greedy, beam or topk)"
            ))),
        }
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::Topk => "topk",
        }
    }
}

/// Where the decoding latent comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// Sample from the context-conditioned prior network.
    PriorNetwork,
    /// Sample from `N(0, I)`, ignoring the context.
    StandardNormal,
    /// Decode without a memory slot.
    None,
}

impl LatentMode {
    pub fn name(self) -> &'static str {
        match self {
            LatentMode::PriorNetwork => "prior_network",
            LatentMode::StandardNormal => "standard_normal",
            LatentMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub k: usize,
    /// Maximum decoding steps; emitting `[EOS]` counts as a step.
    pub max_len: usize,
    pub latent_mode: LatentMode,
    /// Exponent of the beam-search length normalization.
    pub length_penalty: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_size: 5,
            k: 100,
            max_len: 32,
            latent_mode: LatentMode::PriorNetwork,
            length_penalty: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.k == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "beam_size, k and max_len must be at least 1, got {}, {}, {}",
                self.beam_size, self.k, self.max_len
            )));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

fn allowed_log_probs(scorer: &dyn StepScorer, prefix: &[usize]) -> Result<Vec<f64>> {
    let mut lp = scorer.log_probs(prefix)?;
    if lp.len() <= EOS {
        return Err(Error::dim(format!(
            "scorer returned {} log-probabilities",
            lp.len()
        )));
    }
    for &b in &BANNED {
        lp[b] = f64::NEG_INFINITY;
    }
    Ok(lp)
}

/// Highest entry, lowest id on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode(scorer: &dyn StepScorer, max_len: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for _ in 0..max_len {
        let tok = argmax(&allowed_log_probs(scorer, &out)?);
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}

fn normalized(sum: f64, len: usize, alpha: f64) -> f64 {
    sum / (len.max(1) as f64).powf(alpha)
}

/// Length-normalized beam search.
///
/// Candidates are ranked by raw log-probability sum, then by parent
/// hypothesis, then by token id. Hypotheses ending in `[EOS]` are retired;
/// the result is the finished hypothesis with the best `sum / len^alpha`
/// (length counts `[EOS]`), or the best unfinished one when none finished.
pub fn beam_search(
    scorer: &dyn StepScorer,
    beam_size: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Vec<usize>> {
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for _ in 0..max_len {
        let mut candidates = Vec::new();
        for (h, (tokens, sum)) in alive.iter().enumerate() {
            for (tok, lp) in allowed_log_probs(scorer, tokens)?.into_iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((sum + lp, h, tok));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::new();
        for &(sum, h, tok) in candidates.iter().take(beam_size) {
            let tokens = alive[h].0.clone();
            if tok == EOS {
                finished.push((tokens, sum));
            } else {
                let mut t = tokens;
                t.push(tok);
                next.push((t, sum));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    let best = |pool: &[(Vec<usize>, f64)], eos: usize| {
        let mut best: Option<&(Vec<usize>, f64)> = None;
        for cand in pool {
            let score = normalized(cand.1, cand.0.len() + eos, alpha);
            if best.is_none_or(|b| score > normalized(b.1, b.0.len() + eos, alpha)) {
                best = Some(cand);
            }
        }
        best.map(|b| b.0.clone())
    };
    Ok(best(&finished, 1)
        .or_else(|| best(&alive, 0))
        .unwrap_or_default())
}

/// Samples from the `k` most probable allowed tokens, renormalized.
pub fn topk_sample(
    scorer: &dyn StepScorer,
    k: usize,
    max_len: usize,
    rng: &mut RngState,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for _ in 0..max_len {
        let lp = allowed_log_probs(scorer, &out)?;
        let mut ranked: Vec<(usize, f64)> = lp
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .map(|(i, &l)| (i, l))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k.max(1));
        let top = ranked[0].1;
        let weights: Vec<f64> = ranked.iter().map(|&(_, l)| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let u = rng.uniform() * total;
        let mut acc = 0.0;
        let mut tok = ranked[ranked.len() - 1].0;
        for (&(id, _), w) in ranked.iter().zip(&weights) {
            acc += w;
            if u < acc {
                tok = id;
                break;
            }
        }
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}

/// Draws the decoding latent, if any.
pub fn sample_latent<'g>(
    model: &DialogVed,
    b: &Bound<'g>,
    enc: &EncoderOutput<'g>,
    mode: LatentMode,
    rng: &mut RngState,
) -> Result<Option<Var<'g>>> {
    if mode != LatentMode::None && !model.config().use_latent {
        return Err(Error::Config(format!(
            "latent mode {} needs a model built with use_latent",
            mode.name()
        )));
    }
    Ok(match mode {
        LatentMode::PriorNetwork => Some(model.sample_prior(b, enc.h_cls, rng)?.z),
        LatentMode::StandardNormal => {
            let p = model.config().latent_size;
            Some(b.graph().constant(Tensor::vector(rng.normal_vec(p))))
        }
        LatentMode::None => None,
    })
}

/// Stream-1 scorer for one encoded context and a fixed latent.
pub struct ModelScorer<'m, 'g> {
    model: &'m DialogVed,
    bound: Bound<'g>,
    enc: EncoderOutput<'g>,
    memory: Option<MemoryVector<'g>>,
}

impl StepScorer for ModelScorer<'_, '_> {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let input: Vec<usize> = std::iter::once(BOS).chain(prefix.iter().copied()).collect();
        let logits =
            self.model
                .decode_nstream(&self.bound, &input, self.memory.as_ref(), &self.enc, 1)?;
        let value = logits[0].value();
        let last = value.row(input.len() - 1);
        let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + last.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(last.iter().map(|x| x - log_z).collect())
    }
}

/// Context encoder inputs for generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextInput {
    pub tokens: Vec<usize>,
    pub turn_ids: Vec<usize>,
    pub role_ids: Vec<usize>,
}

/// Decodes one response for `context`; the output excludes `[EOS]`.
///
/// The seed in `cfg` fully determines the latent and any sampling.
pub fn generate(
    model: &DialogVed,
    context: &ContextInput,
    cfg: &DecodeConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let graph = Graph::new();
    let bound = model.bind(&graph, false);
    let pad = vec![false; context.tokens.len()];
    let enc = model.encode(
        &bound,
        &context.tokens,
        &context.turn_ids,
        &context.role_ids,
        &pad,
    )?;
    let memory = match sample_latent(model, &bound, &enc, cfg.latent_mode, &mut rng)? {
        Some(z) => Some(model.memory_project(&bound, z)?),
        None => None,
    };
    let scorer = ModelScorer {
        model,
        bound,
        enc,
        memory,
    };
    let max_len = cfg.max_len.min(model.config().max_decoder_len());
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(&scorer, max_len),
        Strategy::Beam => beam_search(&scorer, cfg.beam_size, max_len, cfg.length_penalty),
        Strategy::Topk => topk_sample(&scorer, cfg.k, max_len, &mut rng),
    }
}
