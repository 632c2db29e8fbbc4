//! Run configuration, training loops and the commands behind the binary.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{
    build_context, extract_pairs, load_jsonl, sort_and_batch, split_short_long,
    ContextResponsePair, DialogInstance, MaskedBatch, MaskingConfig, PairLimits,
};
use crate::inference::{generate, ContextInput, DecodeConfig, Strategy};
use crate::metrics::{evaluate, EvalPair, EvaluationReport};
use crate::model::{Checkpoint, DialogVed, ModelConfig, ParamStore};
use crate::numerics::{Graph, RngState, Tensor};
use crate::objectives::{batch_loss, LossBreakdown, Mode};
use crate::text::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Peak step size of plain SGD.
    pub learning_rate: f64,
    /// Steps of linear warmup from 0 to the peak rate.
    pub warmup_steps: usize,
    pub epochs: usize,
    /// Stop after this many updates, mid-epoch if need be.
    pub max_steps: Option<usize>,
    /// Batch budget: rows × longest context.
    pub max_tokens: usize,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.1,
            warmup_steps: 20,
            epochs: 10,
            max_steps: None,
            max_tokens: 512,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Existing vocabulary file; built from the training data when absent.
    pub vocab: Option<PathBuf>,
    /// Where training writes its checkpoint.
    pub output: PathBuf,
    pub min_freq: usize,
    pub max_vocab: usize,
    /// Contexts up to this many tokens form the short sub-corpus.
    pub short_threshold: usize,
    pub limits: PairLimits,
    pub masking: MaskingConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            vocab: None,
            output: PathBuf::from("dialogved.ckpt.json"),
            min_freq: 1,
            max_vocab: 30_000,
            short_threshold: 64,
            limits: PairLimits {
                max_turns: 8,
                max_context_len: 128,
                max_response_len: 32,
            },
            masking: MaskingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub decode: DecodeConfig,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, else taken as a string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {key:?}: {part:?} is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, overridden by `file`, overridden by each `key=value` in `sets`.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        Self::resolve_from(RunConfig::default(), file, sets)
    }

    /// As [`RunConfig::resolve`], with the model section taken from a checkpoint.
    pub fn resolve_for_checkpoint(
        ckpt: &Path,
        file: Option<&Path>,
        sets: &[String],
    ) -> Result<Self> {
        let base = RunConfig {
            model: Checkpoint::load(ckpt)?.config,
            ..RunConfig::default()
        };
        Self::resolve_from(base, file, sets)
    }

    fn resolve_from(base: RunConfig, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(base)?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let over: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !over.is_object() {
                return Err(Error::Config(format!(
                    "{}: expected a JSON object",
                    path.display()
                )));
            }
            merge(&mut value, over);
        }
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.decode.validate()?;
        let o = &self.optim;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                o.learning_rate
            )));
        }
        if o.epochs == 0 || o.max_tokens == 0 {
            return Err(Error::Config(
                "epochs and max_tokens must be at least 1".into(),
            ));
        }
        if o.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        let l = &self.data.limits;
        if l.max_turns == 0 || l.max_turns > self.model.max_turns {
            return Err(Error::Config(format!(
                "data.limits.max_turns {} must be in 1..={} (model.max_turns)",
                l.max_turns, self.model.max_turns
            )));
        }
        if l.max_context_len < 2 || l.max_context_len > self.model.max_positions {
            return Err(Error::Config(format!(
                "data.limits.max_context_len {} must be in 2..={} (model.max_positions)",
                l.max_context_len, self.model.max_positions
            )));
        }
        if l.max_response_len + 1 > self.model.max_decoder_len() {
            return Err(Error::Config(format!(
                "data.limits.max_response_len {} leaves no room for [EOS] within {} decoder positions",
                l.max_response_len,
                self.model.max_decoder_len()
            )));
        }
        let m = &self.data.masking;
        if m.span_len == 0 || !(0.0..=1.0).contains(&m.rate) {
            return Err(Error::Config(
                "masking needs span_len >= 1 and rate in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Plain SGD with linear warmup and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip: Option<f64>,
    step: usize,
}

impl Sgd {
    pub fn new(cfg: &OptimConfig) -> Self {
        Sgd {
            learning_rate: cfg.learning_rate,
            warmup_steps: cfg.warmup_steps,
            grad_clip: cfg.grad_clip,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Rate for the next update.
    pub fn rate(&self) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((self.step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }

    /// Updates `params` in place; returns the pre-clip gradient norm.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<f64> {
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient norm at step {}",
                self.step
            )));
        }
        let scale = match self.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let lr = self.rate() * scale;
        for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let p = params.get_mut(id);
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
        self.step += 1;
        Ok(norm)
    }
}

/// Forward, backward and one SGD update on a batch.
pub fn train_step(
    model: &mut DialogVed,
    batch: &MaskedBatch,
    mode: Mode,
    opt: &mut Sgd,
    rng: &mut RngState,
) -> Result<LossBreakdown> {
    let (grads, breakdown) = {
        let g = Graph::new();
        let b = model.bind(&g, true);
        let (loss, breakdown) = batch_loss(model, &b, batch, mode, rng)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}",
                opt.steps_taken()
            )));
        }
        g.backward(loss)?;
        (b.grads(), breakdown)
    };
    opt.apply(model.params_mut(), &grads)?;
    Ok(breakdown)
}

/// Loss without an update.
pub fn eval_loss(
    model: &DialogVed,
    batch: &MaskedBatch,
    mode: Mode,
    rng: &mut RngState,
) -> Result<LossBreakdown> {
    let g = Graph::new();
    let b = model.bind(&g, false);
    Ok(batch_loss(model, &b, batch, mode, rng)?.1)
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DialogVed,
    pub vocab: Vocabulary,
    /// Mean total training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean validation loss per epoch (fine-tuning only).
    pub valid_losses: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub selected_epoch: usize,
    pub steps: usize,
}

pub fn dialogs_to_pairs(
    dialogs: &[DialogInstance],
    vocab: &Vocabulary,
    limits: &PairLimits,
) -> Vec<ContextResponsePair> {
    dialogs
        .iter()
        .flat_map(|d| extract_pairs(d, vocab, limits))
        .collect()
}

pub fn build_vocab(dialogs: &[DialogInstance], data: &DataConfig) -> Result<Vocabulary> {
    let text: Vec<&str> = dialogs
        .iter()
        .flat_map(|d| d.turns.iter().chain(&d.knowledge).map(String::as_str))
        .collect();
    Vocabulary::build(&text, data.min_freq, data.max_vocab)
}

fn with_vocab(model: &ModelConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..model.clone()
    }
}

fn epoch_batches(
    run: &RunConfig,
    pairs: Vec<ContextResponsePair>,
    rng: &mut RngState,
) -> Result<(Vec<MaskedBatch>, Vec<MaskedBatch>)> {
    let (short, long) = split_short_long(pairs, run.data.short_threshold);
    let mut s = sort_and_batch(&short, run.optim.max_tokens)?;
    let mut l = sort_and_batch(&long, run.optim.max_tokens)?;
    rng.shuffle(&mut s);
    rng.shuffle(&mut l);
    Ok((s, l))
}

/// Shared epoch loop. Short batches precede long ones within every epoch.
fn train_loop(
    run: &RunConfig,
    mut model: DialogVed,
    vocab: Vocabulary,
    pairs: &[ContextResponsePair],
    valid: Option<&[ContextResponsePair]>,
    mode: Mode,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Batch(
            "training data yields no context/response pairs".into(),
        ));
    }
    let mut rng = RngState::new(run.optim.seed);
    let mut opt = Sgd::new(&run.optim);
    let mut epoch_losses = Vec::new();
    let mut valid_losses = Vec::new();
    let mut best: Option<(f64, usize, DialogVed)> = None;
    let max_steps = run.optim.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..run.optim.epochs {
        let (short, long) = epoch_batches(run, pairs.to_vec(), &mut rng)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for mut batch in short.into_iter().chain(long) {
            if opt.steps_taken() >= max_steps {
                break;
            }
            if mode == Mode::Pretrain {
                batch.apply_masking(&run.data.masking, model.config().vocab_size, &mut rng)?;
            }
            let loss = train_step(&mut model, &batch, mode, &mut opt, &mut rng)?;
            let line = serde_json::to_string(&LogLine {
                step: opt.steps_taken(),
                loss: &loss,
            })?;
            writeln!(log, "{line}").map_err(|e| Error::io("<log>", e))?;
            sum += loss.total;
            count += 1;
        }
        if count == 0 {
            break 'epochs;
        }
        epoch_losses.push(sum / count as f64);
        if let Some(valid) = valid {
            let v = validation_loss(run, &model, valid, mode)?;
            writeln!(
                log,
                "{}",
                serde_json::json!({"epoch": epoch, "valid_loss": v})
            )
            .map_err(|e| Error::io("<log>", e))?;
            valid_losses.push(v);
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
    }
    let last_epoch = epoch_losses.len().saturating_sub(1);
    let (model, selected_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome {
        model,
        vocab,
        epoch_losses,
        valid_losses,
        selected_epoch,
        steps: opt.steps_taken(),
    })
}

/// Mean total loss over `pairs`, with a fixed latent seed so epochs compare.
pub fn validation_loss(
    run: &RunConfig,
    model: &DialogVed,
    pairs: &[ContextResponsePair],
    mode: Mode,
) -> Result<f64> {
    let mut rng = RngState::new(run.optim.seed ^ 0x5eed);
    let batches = sort_and_batch(pairs, run.optim.max_tokens)?;
    let mut sum = 0.0;
    for mut batch in batches.iter().cloned() {
        if mode == Mode::Pretrain {
            batch.apply_masking(&run.data.masking, model.config().vocab_size, &mut rng)?;
        }
        sum += eval_loss(model, &batch, mode, &mut rng)?.total;
    }
    Ok(sum / batches.len().max(1) as f64)
}

/// Pre-trains a fresh model on `dialogs`, building the vocabulary unless given.
pub fn pretrain_on(
    run: &RunConfig,
    dialogs: &[DialogInstance],
    vocab: Option<Vocabulary>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(dialogs, &run.data)?,
    };
    let mut run = run.clone();
    run.model = with_vocab(&run.model, &vocab);
    run.validate()?;
    let model = DialogVed::new(
        run.model.clone(),
        &mut RngState::new(run.optim.seed).fork(1),
    )?;
    let pairs = dialogs_to_pairs(dialogs, &vocab, &run.data.limits);
    train_loop(&run, model, vocab, &pairs, None, Mode::Pretrain, log)
}

/// Fine-tunes `model` without masking or the masked-span loss, keeping the
/// epoch with the lowest validation loss (training loss when no validation
/// data is given).
pub fn finetune_on(
    run: &RunConfig,
    model: DialogVed,
    vocab: Vocabulary,
    train: &[DialogInstance],
    valid: Option<&[DialogInstance]>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let pairs = dialogs_to_pairs(train, &vocab, &run.data.limits);
    let valid_pairs = match valid {
        Some(v) => dialogs_to_pairs(v, &vocab, &run.data.limits),
        None => pairs.clone(),
    };
    if valid_pairs.is_empty() {
        return Err(Error::Batch(
            "validation data yields no context/response pairs".into(),
        ));
    }
    train_loop(
        run,
        model,
        vocab,
        &pairs,
        Some(&valid_pairs),
        Mode::Finetune,
        log,
    )
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| Error::Config(format!("data.{what} is not set")))
}

fn load_vocab_option(run: &RunConfig) -> Result<Option<Vocabulary>> {
    run.data.vocab.as_deref().map(Vocabulary::load).transpose()
}

/// `pretrain`: trains from scratch and writes the checkpoint to `data.output`.
pub fn cmd_pretrain(run: &RunConfig, log: &mut dyn Write) -> Result<TrainOutcome> {
    let dialogs = load_jsonl(require(&run.data.train, "train")?)?;
    let outcome = pretrain_on(run, &dialogs, load_vocab_option(run)?, log)?;
    outcome.model.save(&run.data.output, Some(&outcome.vocab))?;
    Ok(outcome)
}

/// Loads a checkpoint into the architecture described by `run.model`.
///
/// The vocabulary size comes from the checkpoint; every parameter shape must
/// match.
pub fn load_for_run(run: &RunConfig, ckpt: &Path) -> Result<(DialogVed, Vocabulary)> {
    let ck = Checkpoint::load(ckpt)?;
    let vocab = match ck.vocabulary()? {
        Some(v) => v,
        None => match &run.data.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => {
                return Err(Error::Checkpoint(format!(
                    "{} has no vocabulary and data.vocab is not set",
                    ckpt.display()
                )))
            }
        },
    };
    let model = ck.to_model_with(with_vocab(&run.model, &vocab))?;
    Ok((model, vocab))
}

/// `finetune`: continues from `init` and writes the selected epoch to `data.output`.
pub fn cmd_finetune(run: &RunConfig, init: &Path, log: &mut dyn Write) -> Result<TrainOutcome> {
    let (model, vocab) = load_for_run(run, init)?;
    let train = load_jsonl(require(&run.data.train, "train")?)?;
    let valid = run.data.valid.as_deref().map(load_jsonl).transpose()?;
    let outcome = finetune_on(run, model, vocab, &train, valid.as_deref(), log)?;
    outcome.model.save(&run.data.output, Some(&outcome.vocab))?;
    Ok(outcome)
}

/// Encoder input for a dialog history (oldest turn first).
pub fn context_input(
    turns: &[String],
    knowledge: &[String],
    vocab: &Vocabulary,
    limits: &PairLimits,
) -> ContextInput {
    let t: Vec<Vec<usize>> = turns.iter().map(|s| vocab.encode(s)).collect();
    let k: Vec<Vec<usize>> = knowledge.iter().map(|s| vocab.encode(s)).collect();
    let (tokens, turn_ids, role_ids) = build_context(&t, &k, limits);
    ContextInput {
        tokens,
        turn_ids,
        role_ids,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub context: Vec<String>,
    pub response: String,
    pub strategy: String,
    pub seed: u64,
    pub z_mode: String,
}

/// Decodes a response for every dialog; the whole dialog is the context.
/// Line `i` uses seed `decode.seed + i`.
pub fn generate_all(
    run: &RunConfig,
    model: &DialogVed,
    vocab: &Vocabulary,
    dialogs: &[DialogInstance],
) -> Result<Vec<GeneratedLine>> {
    dialogs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let cfg = DecodeConfig {
                seed: run.decode.seed.wrapping_add(i as u64),
                ..run.decode.clone()
            };
            let ctx = context_input(&d.turns, &d.knowledge, vocab, &run.data.limits);
            let ids = generate(model, &ctx, &cfg)?;
            Ok(GeneratedLine {
                context: d.turns.clone(),
                response: vocab.decode(&ids)?,
                strategy: cfg.strategy.name().to_string(),
                seed: cfg.seed,
                z_mode: cfg.latent_mode.name().to_string(),
            })
        })
        .collect()
}

/// `generate`: one JSON line per input dialog.
pub fn cmd_generate(run: &RunConfig, ckpt: &Path, input: &Path, output: &Path) -> Result<usize> {
    let (model, vocab) = load_for_run(run, ckpt)?;
    let dialogs = load_jsonl(input)?;
    let lines = generate_all(run, &model, &vocab, &dialogs)?;
    let mut text = String::new();
    for l in &lines {
        text.push_str(&serde_json::to_string(l)?);
        text.push('\n');
    }
    fs::write(output, text).map_err(|e| Error::io(output, e))?;
    Ok(lines.len())
}

fn read_json_lines(path: &Path) -> Result<Vec<Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn strings_field(v: &Value, path: &Path, line: usize) -> Result<Vec<String>> {
    let schema = |m: &str| Error::Schema(format!("{}:{line}: {m}", path.display()));
    if let Some(s) = v.get("response").and_then(Value::as_str) {
        return Ok(vec![s.to_string()]);
    }
    for key in ["references", "responses"] {
        if let Some(arr) = v.get(key) {
            let arr = arr
                .as_array()
                .ok_or_else(|| schema(&format!("\"{key}\" must be an array")))?;
            let out: Option<Vec<String>> =
                arr.iter().map(|x| x.as_str().map(str::to_string)).collect();
            let out = out.ok_or_else(|| schema(&format!("\"{key}\" must hold strings")))?;
            if out.is_empty() {
                return Err(schema(&format!("\"{key}\" is empty")));
            }
            return Ok(out);
        }
    }
    Err(schema("expected \"response\" or \"references\""))
}

/// `evaluate`: hypotheses carry `"response"`; references carry `"response"`
/// or a `"references"` array, line-aligned with the hypotheses.
pub fn cmd_evaluate(hyp: &Path, reference: &Path) -> Result<EvaluationReport> {
    let hyps = read_json_lines(hyp)?;
    let refs = read_json_lines(reference)?;
    if hyps.len() != refs.len() {
        return Err(Error::Schema(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let pairs = hyps
        .iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (h, r))| {
            let h = strings_field(h, hyp, i + 1)?;
            let r = strings_field(r, reference, i + 1)?;
            EvalPair::from_text(&h[0], &r)
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

/// Line-oriented chat. Each user line becomes a turn; the reply is decoded
/// from the accumulated history and appended to it. Commands: `/reset`,
/// `/seed N`, `/mode greedy|beam|topk`, `/quit`.
pub fn chat_loop(
    run: &RunConfig,
    model: &DialogVed,
    vocab: &Vocabulary,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<()> {
    let io = |e| Error::io("<chat>", e);
    let mut decode = run.decode.clone();
    let mut history: Vec<String> = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            return Ok(());
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(cmd) = text.strip_prefix('/') {
            let mut parts = cmd.split_whitespace();
            let reply = match (parts.next(), parts.next()) {
                (Some("reset"), None) => {
                    history.clear();
                    "history cleared".to_string()
                }
                (Some("seed"), Some(n)) => match n.parse::<u64>() {
                    Ok(s) => {
                        decode.seed = s;
                        format!("seed set to {s}")
                    }
                    Err(_) => format!("invalid seed {n:?}"),
                },
                (Some("mode"), Some(m)) => match m.parse::<Strategy>() {
                    Ok(s) => {
                        decode.strategy = s;
                        format!("mode set to {}", s.name())
                    }
                    Err(e) => e.to_string(),
                },
                (Some("quit"), None) => return Ok(()),
                _ => format!("unknown command /{cmd}"),
            };
            writeln!(output, "{reply}").map_err(io)?;
            continue;
        }
        history.push(text.to_string());
        let ctx = context_input(&history, &[], vocab, &run.data.limits);
        let ids = generate(model, &ctx, &decode)?;
        let response = vocab.decode(&ids)?;
        writeln!(output, "{response}").map_err(io)?;
        history.push(response);
        decode.seed = decode.seed.wrapping_add(1);
    }
}

/// `chat`: interactive session on standard input and output.
pub fn cmd_chat(run: &RunConfig, ckpt: &Path) -> Result<()> {
    let (model, vocab) = load_for_run(run, ckpt)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    chat_loop(run, &model, &vocab, &mut stdin.lock(), &mut stdout.lock())
}
