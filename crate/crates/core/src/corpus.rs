//! Dialog corpora: loading, pair extraction, span masking and batching.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::RngState;
use crate::text::{is_special, Vocabulary, CLS, EOS, MASK, NUM_SPECIALS, PAD, SOT};
use crate::{Error, Result};

/// Role id shared by `[CLS]`, knowledge and padding.
pub const ROLE_OTHER: usize = 2;
/// Role of the speaker whose turn is being predicted.
pub const ROLE_RESPONDER: usize = 0;
/// Role of the other speaker, who always holds the last context turn.
pub const ROLE_INTERLOCUTOR: usize = 1;
pub const NUM_ROLES: usize = 3;

/// One multi-turn conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogInstance {
    pub turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge: Vec<String>,
}

impl DialogInstance {
    pub fn new<S: Into<String>>(turns: impl IntoIterator<Item = S>) -> Self {
        DialogInstance {
            turns: turns.into_iter().map(Into::into).collect(),
            knowledge: Vec::new(),
        }
    }
}

/// Truncation limits applied while turning dialogs into id sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairLimits {
    /// Maximum number of dialog turns kept in a context (most recent first).
    pub max_turns: usize,
    /// Maximum context length including `[CLS]` and knowledge.
    pub max_context_len: usize,
    /// Maximum response content tokens (the trailing `[EOS]` is extra).
    pub max_response_len: usize,
}

impl Default for PairLimits {
    fn default() -> Self {
        PairLimits {
            max_turns: 8,
            max_context_len: 128,
            max_response_len: 32,
        }
    }
}

/// A single training sample: an annotated context and the turn that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextResponsePair {
    pub context: Vec<usize>,
    pub turn_ids: Vec<usize>,
    pub role_ids: Vec<usize>,
    /// Response content ids, without `[BOS]`/`[EOS]`.
    pub response: Vec<usize>,
}

impl ContextResponsePair {
    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    /// Decoder targets: the response followed by `[EOS]`.
    pub fn targets(&self) -> Vec<usize> {
        let mut t = self.response.clone();
        t.push(EOS);
        t
    }
}

/// Builds the annotated context for `turns` (oldest first) plus knowledge.
///
/// The layout is `[CLS] ([SOT] knowledge)* turn_0 turn_1 ...`. Turn ids count
/// dialog turns from 0; `[CLS]` and knowledge share turn 0 with the first
/// turn. The last turn belongs to the interlocutor and roles alternate
/// backwards from there.
pub fn build_context(
    turns: &[Vec<usize>],
    knowledge: &[Vec<usize>],
    limits: &PairLimits,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut prefix = vec![CLS];
    for k in knowledge {
        prefix.push(SOT);
        prefix.extend_from_slice(k);
    }
    prefix.truncate(limits.max_context_len.saturating_sub(1).max(1));

    let budget = limits.max_context_len.saturating_sub(prefix.len());
    let mut kept: Vec<&[usize]> = Vec::new();
    let mut used = 0;
    for t in turns.iter().rev().take(limits.max_turns.max(1)) {
        if used + t.len() > budget {
            if kept.is_empty() {
                kept.push(&t[t.len() - budget..]);
            }
            break;
        }
        used += t.len();
        kept.push(t);
    }
    kept.reverse();

    let m = kept.len();
    let mut ids = prefix.clone();
    let mut turn_ids = vec![0; prefix.len()];
    let mut role_ids = vec![ROLE_OTHER; prefix.len()];
    for (i, t) in kept.iter().enumerate() {
        let role = if (m - 1 - i).is_multiple_of(2) {
            ROLE_INTERLOCUTOR
        } else {
            ROLE_RESPONDER
        };
        ids.extend_from_slice(t);
        turn_ids.extend(std::iter::repeat_n(i, t.len()));
        role_ids.extend(std::iter::repeat_n(role, t.len()));
    }
    (ids, turn_ids, role_ids)
}

/// Every `(turns[..i], turns[i])` split of a dialog, for `i` in `1..n`.
pub fn extract_pairs(
    instance: &DialogInstance,
    vocab: &Vocabulary,
    limits: &PairLimits,
) -> Vec<ContextResponsePair> {
    let turns: Vec<Vec<usize>> = instance.turns.iter().map(|t| vocab.encode(t)).collect();
    let knowledge: Vec<Vec<usize>> = instance.knowledge.iter().map(|k| vocab.encode(k)).collect();
    (1..turns.len())
        .map(|i| {
            let (context, turn_ids, role_ids) = build_context(&turns[..i], &knowledge, limits);
            let mut response = turns[i].clone();
            response.truncate(limits.max_response_len);
            ContextResponsePair {
                context,
                turn_ids,
                role_ids,
                response,
            }
        })
        .collect()
}

/// What happened to one selected context position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub position: usize,
    pub original: usize,
    pub action: MaskAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    /// Fixed span length `m`.
    pub span_len: usize,
    /// Target share of maskable tokens.
    pub rate: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            span_len: 3,
            rate: 0.15,
        }
    }
}

impl MaskingConfig {
    /// `round(rate * maskable / span_len)` seeds.
    pub fn seed_count(&self, maskable: usize) -> usize {
        (self.rate * maskable as f64 / self.span_len as f64).round() as usize
    }
}

/// Selects the positions covered by rightward spans of length `span_len`
/// starting at `seeds`, sorted and deduplicated, clipped to the sequence and
/// skipping special tokens.
pub fn span_positions(tokens: &[usize], seeds: &[usize], span_len: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = seeds
        .iter()
        .flat_map(|&s| s..(s + span_len).min(tokens.len()))
        .filter(|&p| !is_special(tokens[p]))
        .collect();
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Corrupts random spans of a context.
///
/// Seeds are drawn uniformly without replacement among non-special positions
/// (clamped to how many exist). Each selected position becomes `[MASK]` with
/// probability 0.8, a random non-special token with probability 0.1, and stays
/// unchanged otherwise.
pub fn mask_spans(
    tokens: &[usize],
    n_seeds: usize,
    span_len: usize,
    vocab_size: usize,
    rng: &mut RngState,
) -> Result<(Vec<usize>, Vec<MaskRecord>)> {
    if span_len == 0 {
        return Err(Error::Contract("span length must be at least 1".into()));
    }
    let maskable: Vec<usize> = (0..tokens.len())
        .filter(|&p| !is_special(tokens[p]))
        .collect();
    if maskable.is_empty() || n_seeds == 0 {
        return Ok((tokens.to_vec(), Vec::new()));
    }
    let seeds: Vec<usize> = rng
        .sample_without_replacement(maskable.len(), n_seeds)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    let positions = span_positions(tokens, &seeds, span_len);

    let mut corrupted = tokens.to_vec();
    let mut records = Vec::with_capacity(positions.len());
    for p in positions {
        let u = rng.uniform();
        let action = if u < 0.8 {
            corrupted[p] = MASK;
            MaskAction::Mask
        } else if u < 0.9 && vocab_size > NUM_SPECIALS {
            corrupted[p] = NUM_SPECIALS + rng.below(vocab_size - NUM_SPECIALS);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        records.push(MaskRecord {
            position: p,
            original: tokens[p],
            action,
        });
    }
    Ok((corrupted, records))
}

/// Undoes [`mask_spans`].
pub fn restore(corrupted: &[usize], records: &[MaskRecord]) -> Vec<usize> {
    let mut out = corrupted.to_vec();
    for r in records {
        out[r.position] = r.original;
    }
    out
}

/// Padded batch of pairs, optionally carrying span-masking records.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// Indices of the pairs in the slice handed to [`sort_and_batch`].
    pub pair_indices: Vec<usize>,
    pub context: Vec<Vec<usize>>,
    pub turn_ids: Vec<Vec<usize>>,
    pub role_ids: Vec<Vec<usize>>,
    pub context_lens: Vec<usize>,
    /// Decoder targets (response + `[EOS]`), padded.
    pub targets: Vec<Vec<usize>>,
    pub target_lens: Vec<usize>,
    /// Per-row span-masking records; empty when unmasked.
    pub masks: Vec<Vec<MaskRecord>>,
}

impl MaskedBatch {
    pub fn from_pairs(pairs: &[&ContextResponsePair], pair_indices: Vec<usize>) -> Self {
        let width = pairs.iter().map(|p| p.context_len()).max().unwrap_or(0);
        let targets: Vec<Vec<usize>> = pairs.iter().map(|p| p.targets()).collect();
        let twidth = targets.iter().map(Vec::len).max().unwrap_or(0);
        let pad = |v: &[usize], w: usize, fill: usize| {
            let mut r = v.to_vec();
            r.resize(w, fill);
            r
        };
        MaskedBatch {
            pair_indices,
            context: pairs.iter().map(|p| pad(&p.context, width, PAD)).collect(),
            turn_ids: pairs.iter().map(|p| pad(&p.turn_ids, width, 0)).collect(),
            role_ids: pairs
                .iter()
                .map(|p| pad(&p.role_ids, width, ROLE_OTHER))
                .collect(),
            context_lens: pairs.iter().map(|p| p.context_len()).collect(),
            target_lens: targets.iter().map(Vec::len).collect(),
            targets: targets.iter().map(|t| pad(t, twidth, PAD)).collect(),
            masks: vec![Vec::new(); pairs.len()],
        }
    }

    pub fn rows(&self) -> usize {
        self.context.len()
    }

    pub fn width(&self) -> usize {
        self.context.first().map_or(0, Vec::len)
    }

    /// `true` at padded context positions.
    pub fn pad_mask(&self) -> Vec<Vec<bool>> {
        self.context_lens
            .iter()
            .map(|&len| (0..self.width()).map(|j| j >= len).collect())
            .collect()
    }

    pub fn padding_tokens(&self) -> usize {
        self.rows() * self.width() - self.context_lens.iter().sum::<usize>()
    }

    /// Span-masks every row in place.
    pub fn apply_masking(
        &mut self,
        cfg: &MaskingConfig,
        vocab_size: usize,
        rng: &mut RngState,
    ) -> Result<()> {
        for r in 0..self.rows() {
            let len = self.context_lens[r];
            let row = &self.context[r][..len];
            let maskable = row.iter().filter(|&&t| !is_special(t)).count();
            let (corrupted, records) =
                mask_spans(row, cfg.seed_count(maskable), cfg.span_len, vocab_size, rng)?;
            self.context[r][..len].copy_from_slice(&corrupted);
            self.masks[r] = records;
        }
        Ok(())
    }

    pub fn masked_positions(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }
}

/// Greedily fills batches in the given order so that
/// `rows * longest_context <= max_tokens`.
pub fn greedy_fill(
    order: &[usize],
    lengths: &[usize],
    max_tokens: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for &i in order {
        let len = lengths[i];
        if len > max_tokens {
            return Err(Error::Batch(format!(
                "pair {i} has {len} context tokens, more than the batch budget of {max_tokens}"
            )));
        }
        let widened = longest.max(len);
        if !current.is_empty() && (current.len() + 1) * widened > max_tokens {
            batches.push(std::mem::take(&mut current));
            longest = 0;
        }
        longest = longest.max(len);
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Pad slots needed by a grouping of sequences with the given lengths.
pub fn padding_of(groups: &[Vec<usize>], lengths: &[usize]) -> usize {
    groups
        .iter()
        .map(|g| {
            let w = g.iter().map(|&i| lengths[i]).max().unwrap_or(0);
            g.iter().map(|&i| w - lengths[i]).sum::<usize>()
        })
        .sum()
}

/// Stable-sorts pair indices by context length and greedily fills batches.
pub fn plan_batches(lengths: &[usize], max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    greedy_fill(&order, lengths, max_tokens)
}

/// Length-sorted, padding-minimizing batches (unmasked).
pub fn sort_and_batch(
    pairs: &[ContextResponsePair],
    max_tokens: usize,
) -> Result<Vec<MaskedBatch>> {
    let lengths: Vec<usize> = pairs.iter().map(ContextResponsePair::context_len).collect();
    let plan = plan_batches(&lengths, max_tokens)?;
    Ok(plan
        .into_iter()
        .map(|idx| {
            let members: Vec<&ContextResponsePair> = idx.iter().map(|&i| &pairs[i]).collect();
            MaskedBatch::from_pairs(&members, idx)
        })
        .collect())
}

/// Partitions pairs into those with at most `threshold` context tokens and the rest.
pub fn split_short_long(
    pairs: Vec<ContextResponsePair>,
    threshold: usize,
) -> (Vec<ContextResponsePair>, Vec<ContextResponsePair>) {
    pairs
        .into_iter()
        .partition(|p| p.context_len() <= threshold)
}

/// Reads one dialog per line: `{"turns": [..], "knowledge": [..]?}`.
pub fn load_jsonl(path: &Path) -> Result<Vec<DialogInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<DialogInstance>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let schema = |what: &str| Error::Schema(format!("{}:{line_no}: {what}", path.display()));
        let obj = value
            .as_object()
            .ok_or_else(|| schema("expected a JSON object"))?;
        match obj.get("turns") {
            None => return Err(schema("missing \"turns\"")),
            Some(t) if !t.is_array() => {
                return Err(schema("\"turns\" must be an array of strings"))
            }
            Some(t) if t.as_array().is_some_and(Vec::is_empty) => {
                return Err(schema("\"turns\" must contain at least one utterance"))
            }
            _ => {}
        }
        let instance: DialogInstance =
            serde_json::from_value(value).map_err(|e| schema(&e.to_string()))?;
        out.push(instance);
    }
    Ok(out)
}
