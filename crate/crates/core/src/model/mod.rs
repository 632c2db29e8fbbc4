//! The DialogVED network.
//!
//! Row-vector convention throughout: a sequence is a `[len × H]` matrix and
//! projections multiply on the right. The token embedding matrix doubles as
//! the output projection of the decoder and of the masked-span head.

mod attention;
mod checkpoint;
mod config;
mod params;
mod position;

pub use attention::{attention_with_relative_bias, RelativeBias};
pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use params::{Bound, ParamId, ParamStore};
pub use position::{axis_bucket, bucket_matrix, relative_bucket};

use crate::corpus::MaskedBatch;
use crate::numerics::{Graph, RngState, Tensor, Var};
use crate::text::BOS;
use crate::{Error, Result};
use params::normal;

#[derive(Debug, Clone, Copy)]
struct LayerNormParams {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttentionParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FeedForwardParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Debug, Clone, Copy)]
struct MlpParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: LayerNormParams,
    attn: AttentionParams,
    rel_bias: Option<ParamId>,
    ln_ff: LayerNormParams,
    ff: FeedForwardParams,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: LayerNormParams,
    self_attn: AttentionParams,
    rel_bias: Option<ParamId>,
    ln_cross: LayerNormParams,
    cross_attn: AttentionParams,
    ln_ff: LayerNormParams,
    ff: FeedForwardParams,
}

#[derive(Debug, Clone)]
struct Layout {
    token_embed: ParamId,
    position_embed: ParamId,
    turn_embed: Option<ParamId>,
    role_embed: Option<ParamId>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    decoder_ln: LayerNormParams,
    stream_embed: ParamId,
    prior: Option<MlpParams>,
    memory: Option<ParamId>,
    bow: Option<MlpParams>,
    mlm_w1: ParamId,
    mlm_b1: ParamId,
}

/// Encoder states for one context.
#[derive(Clone)]
pub struct EncoderOutput<'g> {
    /// `[len × H]`.
    pub hidden: Var<'g>,
    /// Hidden state at the `[CLS]` position, `[H]`.
    pub h_cls: Var<'g>,
    pub pad_mask: Vec<bool>,
}

#[derive(Clone, Copy)]
pub struct LatentSample<'g> {
    pub mu: Var<'g>,
    pub logvar: Var<'g>,
    pub z: Var<'g>,
}

/// The latent variable projected into one extra decoder key/value slot.
#[derive(Clone, Copy)]
pub struct MemoryVector<'g> {
    pub key: Var<'g>,
    pub value: Var<'g>,
}

struct ParamBuilder<'a> {
    store: ParamStore,
    rng: &'a mut RngState,
}

impl ParamBuilder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let t = normal(self.rng, &[rows, cols], 1.0 / (rows as f64).sqrt());
        self.store.add(name, t)
    }

    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = normal(self.rng, shape, std);
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(&[n]))
    }

    fn layer_norm(&mut self, prefix: &str, n: usize) -> LayerNormParams {
        LayerNormParams {
            gain: self
                .store
                .add(format!("{prefix}.gain"), Tensor::full(&[n], 1.0)),
            bias: self.zeros(format!("{prefix}.bias"), n),
        }
    }

    fn attention(&mut self, prefix: &str, h: usize) -> AttentionParams {
        AttentionParams {
            wq: self.weight(format!("{prefix}.wq"), h, h),
            wk: self.weight(format!("{prefix}.wk"), h, h),
            wv: self.weight(format!("{prefix}.wv"), h, h),
            wo: self.weight(format!("{prefix}.wo"), h, h),
        }
    }

    fn feed_forward(&mut self, prefix: &str, h: usize, f: usize) -> FeedForwardParams {
        FeedForwardParams {
            w1: self.weight(format!("{prefix}.w1"), h, f),
            b1: self.zeros(format!("{prefix}.b1"), f),
            w2: self.weight(format!("{prefix}.w2"), f, h),
            b2: self.zeros(format!("{prefix}.b2"), h),
        }
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, output: usize) -> MlpParams {
        MlpParams {
            w1: self.weight(format!("{prefix}.w1"), input, hidden),
            b1: self.zeros(format!("{prefix}.b1"), hidden),
            w2: self.weight(format!("{prefix}.w2"), hidden, output),
            b2: self.zeros(format!("{prefix}.b2"), output),
        }
    }
}

/// Parameters and layout of a DialogVED model.
#[derive(Debug, Clone)]
pub struct DialogVed {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl DialogVed {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let h = c.hidden_size;
        let mut b = ParamBuilder {
            store: ParamStore::new(),
            rng,
        };
        let token_embed = b.normal("embed.token".into(), &[c.vocab_size, h], c.init_std);
        let position_embed = b.normal("embed.position".into(), &[c.max_positions, h], c.init_std);
        let turn_embed = c
            .use_turn_ape
            .then(|| b.normal("embed.turn".into(), &[c.max_turns, h], c.init_std));
        let role_embed = c
            .use_role_ape
            .then(|| b.normal("embed.role".into(), &[c.num_roles, h], c.init_std));

        let rel_table = |b: &mut ParamBuilder, prefix: &str| {
            c.uses_rpe().then(|| {
                b.normal(
                    format!("{prefix}.rel_bias"),
                    &[c.relative_table_size(), c.head_dim()],
                    c.init_std,
                )
            })
        };
        let encoder = (0..c.num_encoder_layers)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderLayer {
                    ln_attn: b.layer_norm(&format!("{p}.ln_attn"), h),
                    attn: b.attention(&format!("{p}.attn"), h),
                    rel_bias: rel_table(&mut b, &p),
                    ln_ff: b.layer_norm(&format!("{p}.ln_ff"), h),
                    ff: b.feed_forward(&format!("{p}.ff"), h, c.ff_size),
                }
            })
            .collect();
        let decoder = (0..c.num_decoder_layers)
            .map(|i| {
                let p = format!("decoder.{i}");
                DecoderLayer {
                    ln_self: b.layer_norm(&format!("{p}.ln_self"), h),
                    self_attn: b.attention(&format!("{p}.self_attn"), h),
                    rel_bias: rel_table(&mut b, &p),
                    ln_cross: b.layer_norm(&format!("{p}.ln_cross"), h),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), h),
                    ln_ff: b.layer_norm(&format!("{p}.ln_ff"), h),
                    ff: b.feed_forward(&format!("{p}.ff"), h, c.ff_size),
                }
            })
            .collect();
        let decoder_ln = b.layer_norm("decoder.final_ln", h);
        let stream_embed = b.normal("decoder.stream_embed".into(), &[c.ngram, h], c.init_std);

        let p = c.latent_size;
        let prior = c.use_latent.then(|| b.mlp("prior", h, h, 2 * p));
        let memory = c.use_latent.then(|| b.weight("memory.w".into(), p, 2 * h));
        let bow = c.use_latent.then(|| b.mlp("bow", p + h, h, c.vocab_size));
        let mlm_w1 = b.weight("mlm.w1".into(), h, h);
        let mlm_b1 = b.zeros("mlm.b1".into(), h);

        let layout = Layout {
            token_embed,
            position_embed,
            turn_embed,
            role_embed,
            encoder,
            decoder,
            decoder_ln,
            stream_embed,
            prior,
            memory,
            bow,
            mlm_w1,
            mlm_b1,
        };
        Ok(DialogVed {
            config,
            params: b.store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn token_embedding_id(&self) -> ParamId {
        self.layout.token_embed
    }

    /// Binds parameters to `graph`; `tracked` enables gradients.
    pub fn bind<'g>(&self, graph: &'g Graph, tracked: bool) -> Bound<'g> {
        self.params.bind(graph, tracked)
    }

    fn check_ids(&self, what: &str, ids: &[usize], limit: usize) -> Result<()> {
        match ids.iter().find(|&&i| i >= limit) {
            Some(bad) => Err(Error::dim(format!(
                "{what} id {bad} out of range (table has {limit} rows)"
            ))),
            None => Ok(()),
        }
    }

    /// Sum of token, position and (when enabled) turn and role embeddings.
    pub fn embed_inputs<'g>(
        &self,
        b: &Bound<'g>,
        token_ids: &[usize],
        turn_ids: &[usize],
        role_ids: &[usize],
    ) -> Result<Var<'g>> {
        let c = &self.config;
        let n = token_ids.len();
        if n == 0 || turn_ids.len() != n || role_ids.len() != n {
            return Err(Error::dim(format!(
                "embed_inputs needs equal non-empty id arrays, got {n}/{}/{}",
                turn_ids.len(),
                role_ids.len()
            )));
        }
        if n > c.max_positions {
            return Err(Error::dim(format!(
                "sequence of {n} tokens exceeds max_positions {}",
                c.max_positions
            )));
        }
        self.check_ids("token", token_ids, c.vocab_size)?;
        self.check_ids("turn", turn_ids, c.max_turns)?;
        self.check_ids("role", role_ids, c.num_roles)?;

        let positions: Vec<usize> = (0..n).collect();
        let mut e = b
            .get(self.layout.token_embed)
            .gather_rows(token_ids)?
            .add(b.get(self.layout.position_embed).gather_rows(&positions)?)?;
        if let Some(t) = self.layout.turn_embed {
            e = e.add(b.get(t).gather_rows(turn_ids)?)?;
        }
        if let Some(r) = self.layout.role_embed {
            e = e.add(b.get(r).gather_rows(role_ids)?)?;
        }
        Ok(e)
    }

    fn layer_norm<'g>(&self, b: &Bound<'g>, p: LayerNormParams, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(b.get(p.gain), b.get(p.bias), self.config.layer_norm_eps)
    }

    fn feed_forward<'g>(&self, b: &Bound<'g>, p: FeedForwardParams, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(b.get(p.w1))?
            .add_row(b.get(p.b1))?
            .gelu()
            .matmul(b.get(p.w2))?
            .add_row(b.get(p.b2))
    }

    fn mlp<'g>(&self, b: &Bound<'g>, p: MlpParams, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(b.get(p.w1))?
            .add_row(b.get(p.b1))?
            .tanh()
            .matmul(b.get(p.w2))?
            .add_row(b.get(p.b2))
    }

    /// Multi-head attention. The memory slot, when present, is projected by
    /// the same key/value weights as the sequence.
    #[allow(clippy::too_many_arguments)]
    fn multi_head<'g>(
        &self,
        b: &Bound<'g>,
        p: AttentionParams,
        query: Var<'g>,
        keys: Var<'g>,
        rel: Option<(ParamId, &[usize])>,
        blocked: &[bool],
        memory: Option<&MemoryVector<'g>>,
    ) -> Result<Var<'g>> {
        let g = b.graph();
        let d = self.config.head_dim();
        let q = query.matmul(b.get(p.wq))?;
        let k = keys.matmul(b.get(p.wk))?;
        let v = keys.matmul(b.get(p.wv))?;
        let mem = match memory {
            Some(m) => Some((
                m.key
                    .reshape(&[1, self.config.hidden_size])?
                    .matmul(b.get(p.wk))?,
                m.value
                    .reshape(&[1, self.config.hidden_size])?
                    .matmul(b.get(p.wv))?,
            )),
            None => None,
        };
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let (lo, hi) = (h * d, (h + 1) * d);
            let bias = rel.map(|(table, buckets)| RelativeBias {
                table: b.get(table),
                buckets,
            });
            let head_mem = match mem {
                Some((mk, mv)) => Some((mk.slice_cols(lo, hi)?, mv.slice_cols(lo, hi)?)),
                None => None,
            };
            heads.push(attention_with_relative_bias(
                q.slice_cols(lo, hi)?,
                k.slice_cols(lo, hi)?,
                v.slice_cols(lo, hi)?,
                bias,
                blocked,
                head_mem,
            )?);
        }
        g.concat_cols(&heads)?.matmul(b.get(p.wo))
    }

    /// Runs the encoder over one (possibly padded) context.
    pub fn encode<'g>(
        &self,
        b: &Bound<'g>,
        token_ids: &[usize],
        turn_ids: &[usize],
        role_ids: &[usize],
        pad_mask: &[bool],
    ) -> Result<EncoderOutput<'g>> {
        let n = token_ids.len();
        if pad_mask.len() != n {
            return Err(Error::dim(format!(
                "pad mask of {} for {n} tokens",
                pad_mask.len()
            )));
        }
        let mut x = self.embed_inputs(b, token_ids, turn_ids, role_ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let buckets = bucket_matrix(&positions, turn_ids, &positions, turn_ids, &self.config);
        let blocked: Vec<bool> = (0..n * n).map(|f| pad_mask[f % n]).collect();
        for layer in &self.layout.encoder {
            let xn = self.layer_norm(b, layer.ln_attn, x)?;
            let rel = layer.rel_bias.map(|t| (t, buckets.as_slice()));
            x = x.add(self.multi_head(b, layer.attn, xn, xn, rel, &blocked, None)?)?;
            let xn = self.layer_norm(b, layer.ln_ff, x)?;
            x = x.add(self.feed_forward(b, layer.ff, xn)?)?;
        }
        Ok(EncoderOutput {
            hidden: x,
            h_cls: x.row(0)?,
            pad_mask: pad_mask.to_vec(),
        })
    }

    /// Encodes row `r` of a batch, padding included.
    pub fn encode_row<'g>(
        &self,
        b: &Bound<'g>,
        batch: &MaskedBatch,
        r: usize,
    ) -> Result<EncoderOutput<'g>> {
        let pad = batch.pad_mask();
        self.encode(
            b,
            &batch.context[r],
            &batch.turn_ids[r],
            &batch.role_ids[r],
            &pad[r],
        )
    }

    /// Mean and log-variance of the latent Gaussian given `[CLS]`.
    pub fn prior_network<'g>(&self, b: &Bound<'g>, h_cls: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let p = self
            .layout
            .prior
            .ok_or_else(|| no_latent("prior_network"))?;
        let ps = self.config.latent_size;
        let out = self.mlp(b, p, h_cls.reshape(&[1, self.config.hidden_size])?)?;
        Ok((
            out.slice_cols(0, ps)?.reshape(&[ps])?,
            out.slice_cols(ps, 2 * ps)?.reshape(&[ps])?,
        ))
    }

    /// Prior network followed by a reparameterized draw.
    pub fn sample_prior<'g>(
        &self,
        b: &Bound<'g>,
        h_cls: Var<'g>,
        rng: &mut RngState,
    ) -> Result<LatentSample<'g>> {
        let (mu, logvar) = self.prior_network(b, h_cls)?;
        let (z, _) = crate::numerics::reparameterize(mu, logvar, rng)?;
        Ok(LatentSample { mu, logvar, z })
    }

    /// `[z_key; z_value] = z · W_M`, a single slot shared by every decoder layer.
    pub fn memory_project<'g>(&self, b: &Bound<'g>, z: Var<'g>) -> Result<MemoryVector<'g>> {
        let w = self
            .layout
            .memory
            .ok_or_else(|| no_latent("memory_project"))?;
        let (p, h) = (self.config.latent_size, self.config.hidden_size);
        let m = z.reshape(&[1, p])?.matmul(b.get(w))?;
        Ok(MemoryVector {
            key: m.slice_cols(0, h)?.reshape(&[h])?,
            value: m.slice_cols(h, 2 * h)?.reshape(&[h])?,
        })
    }

    /// Teacher-forced n-stream decoding.
    ///
    /// `input_ids` starts with `[BOS]`. The main stream attends causally to
    /// itself and to the memory slot; predicting stream `k` (1-based) at
    /// position `t` attends to main-stream states `0..=t` and to itself, and
    /// its logits score the token `k` places after the main-stream input at
    /// `t`. Only the first `streams` predicting streams are computed.
    pub fn decode_nstream<'g>(
        &self,
        b: &Bound<'g>,
        input_ids: &[usize],
        memory: Option<&MemoryVector<'g>>,
        enc: &EncoderOutput<'g>,
        streams: usize,
    ) -> Result<Vec<Var<'g>>> {
        let c = &self.config;
        let g = b.graph();
        let t = input_ids.len();
        if input_ids.first() != Some(&BOS) {
            return Err(Error::Contract(
                "decoder input must start with [BOS]".into(),
            ));
        }
        if t > c.max_decoder_len() {
            return Err(Error::dim(format!(
                "decoder input of {t} tokens exceeds the maximum of {}",
                c.max_decoder_len()
            )));
        }
        if streams == 0 || streams > c.ngram {
            return Err(Error::Config(format!(
                "requested {streams} streams from a model with ngram {}",
                c.ngram
            )));
        }
        if memory.is_some() && !c.use_latent {
            return Err(no_latent("decode_nstream with memory"));
        }
        self.check_ids("token", input_ids, c.vocab_size)?;

        let pos_table = b.get(self.layout.position_embed);
        let positions: Vec<usize> = (0..t).collect();
        let mut main = b
            .get(self.layout.token_embed)
            .gather_rows(input_ids)?
            .add(pos_table.gather_rows(&positions)?)?;
        let stream_table = b.get(self.layout.stream_embed);
        let mut preds = (1..=streams)
            .map(|k| {
                let target_pos: Vec<usize> = (k..k + t).collect();
                pos_table
                    .gather_rows(&target_pos)?
                    .add_row(stream_table.row(k - 1)?)
            })
            .collect::<Result<Vec<_>>>()?;

        let zeros = vec![0; t];
        let main_buckets = bucket_matrix(&positions, &zeros, &positions, &zeros, c);
        let causal: Vec<bool> = (0..t * t).map(|f| f % t > f / t).collect();
        let mut stream_buckets = Vec::with_capacity(2 * t * t);
        let mut stream_blocked = Vec::with_capacity(2 * t * t);
        for i in 0..t {
            let row = &main_buckets[i * t..(i + 1) * t];
            stream_buckets.extend_from_slice(row);
            stream_buckets.extend_from_slice(row);
            stream_blocked.extend((0..t).map(|j| j > i));
            stream_blocked.extend((0..t).map(|j| j != i));
        }
        let m = enc.pad_mask.len();
        let cross_blocked: Vec<bool> = (0..t * m).map(|f| enc.pad_mask[f % m]).collect();

        let depth = self.layout.decoder.len();
        for (li, layer) in self.layout.decoder.iter().enumerate() {
            let main_n = self.layer_norm(b, layer.ln_self, main)?;
            let rel = layer.rel_bias.map(|id| (id, main_buckets.as_slice()));
            let mut next_main = main.add(self.multi_head(
                b,
                layer.self_attn,
                main_n,
                main_n,
                rel,
                &causal,
                memory,
            )?)?;
            let mut next_preds = Vec::with_capacity(preds.len());
            for &s in &preds {
                let sn = self.layer_norm(b, layer.ln_self, s)?;
                let kv = g.concat_rows(&[main_n, sn])?;
                let rel = layer.rel_bias.map(|id| (id, stream_buckets.as_slice()));
                next_preds.push(s.add(self.multi_head(
                    b,
                    layer.self_attn,
                    sn,
                    kv,
                    rel,
                    &stream_blocked,
                    None,
                )?)?);
            }

            // The last layer's main-stream output is never read.
            if li + 1 < depth {
                let xn = self.layer_norm(b, layer.ln_cross, next_main)?;
                next_main = next_main.add(self.multi_head(
                    b,
                    layer.cross_attn,
                    xn,
                    enc.hidden,
                    None,
                    &cross_blocked,
                    None,
                )?)?;
                let xn = self.layer_norm(b, layer.ln_ff, next_main)?;
                next_main = next_main.add(self.feed_forward(b, layer.ff, xn)?)?;
            }
            for s in next_preds.iter_mut() {
                let sn = self.layer_norm(b, layer.ln_cross, *s)?;
                *s = s.add(self.multi_head(
                    b,
                    layer.cross_attn,
                    sn,
                    enc.hidden,
                    None,
                    &cross_blocked,
                    None,
                )?)?;
                let sn = self.layer_norm(b, layer.ln_ff, *s)?;
                *s = s.add(self.feed_forward(b, layer.ff, sn)?)?;
            }
            main = next_main;
            preds = next_preds;
        }

        let out_proj = b.get(self.layout.token_embed).transpose()?;
        preds
            .into_iter()
            .map(|s| {
                self.layer_norm(b, self.layout.decoder_ln, s)?
                    .matmul(out_proj)
            })
            .collect()
    }

    /// Masked-span head: `tanh(h W_1 + b_1) · E^T` for `[k × H]` states.
    pub fn mlm_head<'g>(&self, b: &Bound<'g>, h: Var<'g>) -> Result<Var<'g>> {
        let h = match h.shape().as_slice() {
            [n] => h.reshape(&[1, *n])?,
            _ => h,
        };
        h.matmul(b.get(self.layout.mlm_w1))?
            .add_row(b.get(self.layout.mlm_b1))?
            .tanh()
            .matmul(b.get(self.layout.token_embed).transpose()?)
    }

    /// Bag-of-words distribution over the vocabulary from `[z ; h_cls]`.
    pub fn bow_head<'g>(&self, b: &Bound<'g>, z: Var<'g>, h_cls: Var<'g>) -> Result<Var<'g>> {
        let p = self.layout.bow.ok_or_else(|| no_latent("bow_head"))?;
        let (ps, h) = (self.config.latent_size, self.config.hidden_size);
        let x = b
            .graph()
            .concat_cols(&[z.reshape(&[1, ps])?, h_cls.reshape(&[1, h])?])?;
        Ok(self
            .mlp(b, p, x)?
            .softmax_last()
            .reshape(&[self.config.vocab_size])?)
    }

    /// Copies every parameter from `other` whose name and shape match.
    /// Returns the names that were copied.
    pub fn copy_matching_from(&mut self, other: &DialogVed) -> Vec<String> {
        let mut copied = Vec::new();
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            if let Some(src) = other.params.by_name(&name) {
                if src.shape() == self.params.get(id).shape() {
                    *self.params.get_mut(id) = src.clone();
                    copied.push(name);
                }
            }
        }
        copied
    }

    pub(crate) fn from_parts(config: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = DialogVed::new(config, &mut RngState::new(0))?;
        let expected: Vec<String> = model.params.names().to_vec();
        let mut by_name: std::collections::HashMap<String, Tensor> = values.into_iter().collect();
        let mut ordered = Vec::with_capacity(expected.len());
        for name in &expected {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            ordered.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        model.params.set_tensors(ordered)?;
        Ok(model)
    }
}

fn no_latent(what: &str) -> Error {
    Error::Config(format!("{what} requires a model built with use_latent"))
}
