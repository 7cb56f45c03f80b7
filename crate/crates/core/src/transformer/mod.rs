//! Character-level encoder-decoder transformer used identically by the
//! detector, purificator, and corrector stages.

mod decode;
#[cfg(test)]
mod tests;

pub use decode::{beam_decode, greedy_decode, BeamHypothesis};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::charlex::{Vocab, EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Hyperparameters of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub pf_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
}

impl TransformerConfig {
    /// Published defaults: 5 layers, 8 heads, hidden 128, pf = 2 x hidden,
    /// dropout 10%, lr 5e-4, clip 1, 100 epochs.
    pub fn defaults(vocab_size: usize) -> Self {
        TransformerConfig {
            num_layers: 5,
            num_heads: 8,
            hidden_dim: 128,
            pf_dim: 256,
            dropout: 0.10,
            max_seq_len: 96,
            vocab_size,
            learning_rate: 5e-4,
            grad_clip: 1.0,
            epochs: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone)]
pub struct ParamSet<F: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Captured attention weight matrix (post-softmax).
#[derive(Debug, Clone)]
pub struct AttnCapture<F> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<F>,
}

/// Per-forward run state: train/eval mode, the dropout rng, and an optional
/// sink receiving every attention weight matrix.
pub struct RunCtx<'a, F: Scalar> {
    pub train: bool,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub attn_sink: Option<&'a mut Vec<AttnCapture<F>>>,
}

impl<'a, F: Scalar> RunCtx<'a, F> {
    pub fn eval() -> Self {
        RunCtx {
            train: false,
            rng: None,
            attn_sink: None,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        RunCtx {
            train: true,
            rng: Some(rng),
            attn_sink: None,
        }
    }
}

/// Boolean attention mask over (query, key) positions; true = attendable.
#[derive(Debug, Clone)]
pub struct AttnMask {
    pub t_q: usize,
    pub t_k: usize,
    pub keep: Vec<bool>,
}

impl AttnMask {
    /// Keys masked wherever `key_ok` is false, for every query row.
    pub fn from_key_ok(t_q: usize, key_ok: &[bool]) -> Self {
        let mut keep = Vec::with_capacity(t_q * key_ok.len());
        for _ in 0..t_q {
            keep.extend_from_slice(key_ok);
        }
        AttnMask {
            t_q,
            t_k: key_ok.len(),
            keep,
        }
    }

    /// Causal self-attention over `key_ok` positions: row t sees keys
    /// 0..=t that are not padding.
    pub fn causal(key_ok: &[bool]) -> Self {
        let t = key_ok.len();
        let mut keep = vec![false; t * t];
        for q in 0..t {
            for k in 0..=q {
                keep[q * t + k] = key_ok[k];
            }
        }
        AttnMask {
            t_q: t,
            t_k: t,
            keep,
        }
    }
}

/// Projection weights of one attention block, already bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeightVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Scaled dot-product multi-head attention: per head,
/// softmax(Q K^T / sqrt(d_k)) V with masked positions at -inf pre-softmax;
/// head outputs are concatenated and projected by `wo`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<'p, F: Scalar>(
    tape: &mut Tape<'p, F>,
    w: &AttnWeightVars,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mask: Option<&AttnMask>,
    num_heads: usize,
    dropout: f64,
    ctx: &mut RunCtx<'_, F>,
) -> Result<Var> {
    let h = *tape.shape(q_in).last().unwrap_or(&0);
    if num_heads == 0 || h % num_heads != 0 {
        return Err(Error::Config(format!(
            "hidden dim {h} not divisible by {num_heads} heads"
        )));
    }
    let dk = h / num_heads;
    let scale = real::<F>(1.0 / (dk as f64).sqrt());

    let q_proj = tape.matmul(q_in, w.wq)?;
    let q = tape.add_row(q_proj, w.bq)?;
    let k_proj = tape.matmul(k_in, w.wk)?;
    let k = tape.add_row(k_proj, w.bk)?;
    let v_proj = tape.matmul(v_in, w.wv)?;
    let v = tape.add_row(v_proj, w.bv)?;

    let t_q = tape.shape(q)[0];
    let t_k = tape.shape(k)[0];
    if let Some(m) = mask {
        if m.t_q != t_q || m.t_k != t_k {
            return Err(Error::Shape {
                op: "attention_mask",
                lhs: vec![t_q, t_k],
                rhs: vec![m.t_q, m.t_k],
            });
        }
    }

    let mut head_outputs = Vec::with_capacity(num_heads);
    for head in 0..num_heads {
        let q_h = tape.slice_last(q, head * dk, dk)?;
        let k_h = tape.slice_last(k, head * dk, dk)?;
        let v_h = tape.slice_last(v, head * dk, dk)?;
        let k_t = tape.transpose_last2(k_h)?;
        let scores = tape.matmul(q_h, k_t)?;
        let scaled = tape.scale(scores, scale);
        let masked = match mask {
            Some(m) => tape.masked_fill(scaled, &m.keep)?,
            None => scaled,
        };
        let weights = tape.softmax_last(masked);
        if let Some(sink) = ctx.attn_sink.as_mut() {
            sink.push(AttnCapture {
                rows: t_q,
                cols: t_k,
                weights: tape.value(weights).to_vec(),
            });
        }
        let weights = if ctx.train {
            let rng = ctx.rng.as_mut().expect("train mode carries an rng");
            tape.dropout(weights, dropout, true, *rng)
        } else {
            weights
        };
        head_outputs.push(tape.matmul(weights, v_h)?);
    }
    let concat = tape.concat_last(&head_outputs)?;
    let out = tape.matmul(concat, w.wo)?;
    tape.add_row(out, w.bo)
}

/// Indices of one attention block's weights inside a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
struct AttnParams {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

impl AttnParams {
    fn bind(&self, vars: &[Var]) -> AttnWeightVars {
        AttnWeightVars {
            wq: vars[self.wq],
            bq: vars[self.bq],
            wk: vars[self.wk],
            bk: vars[self.bk],
            wv: vars[self.wv],
            bv: vars[self.bv],
            wo: vars[self.wo],
            bo: vars[self.bo],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NormParams {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct FeedForwardParams {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    self_attn: AttnParams,
    norm1: NormParams,
    ff: FeedForwardParams,
    norm2: NormParams,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: AttnParams,
    norm1: NormParams,
    cross_attn: AttnParams,
    norm2: NormParams,
    ff: FeedForwardParams,
    norm3: NormParams,
}

/// One trained encoder-decoder transformer stage.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel<F: Scalar> {
    config: TransformerConfig,
    vocab: Vocab,
    params: ParamSet<F>,
    tok_embed: usize,
    pos_embed: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_w: usize,
    out_b: usize,
}

fn xavier<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| real::<F>(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_values(&[rows, cols], values).expect("sized values")
}

fn uniform_embed<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let values = (0..rows * cols)
        .map(|_| real::<F>(rng.gen_range(-0.1..0.1)))
        .collect();
    Tensor::from_values(&[rows, cols], values).expect("sized values")
}

impl<F: Scalar> Seq2SeqModel<F> {
    /// Fresh model with seeded initialization.
    pub fn new(config: TransformerConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "config vocab_size {} does not match vocabulary of {}",
                config.vocab_size,
                vocab.size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let pf = config.pf_dim;
        let v = config.vocab_size;
        let mut params = ParamSet::new();

        let tok_embed = params.add("embed.tok", uniform_embed(&mut rng, v, h));
        let pos_embed = params.add("embed.pos", uniform_embed(&mut rng, config.max_seq_len, h));

        let mut attn = |params: &mut ParamSet<F>, rng: &mut ChaCha8Rng, prefix: &str| AttnParams {
            wq: params.add(format!("{prefix}.wq"), xavier(rng, h, h)),
            bq: params.add(format!("{prefix}.bq"), Tensor::zeros(&[h])),
            wk: params.add(format!("{prefix}.wk"), xavier(rng, h, h)),
            bk: params.add(format!("{prefix}.bk"), Tensor::zeros(&[h])),
            wv: params.add(format!("{prefix}.wv"), xavier(rng, h, h)),
            bv: params.add(format!("{prefix}.bv"), Tensor::zeros(&[h])),
            wo: params.add(format!("{prefix}.wo"), xavier(rng, h, h)),
            bo: params.add(format!("{prefix}.bo"), Tensor::zeros(&[h])),
        };
        let norm = |params: &mut ParamSet<F>, prefix: &str| NormParams {
            g: params.add(
                format!("{prefix}.g"),
                Tensor::from_values(&[h], vec![F::one(); h]).expect("sized"),
            ),
            b: params.add(format!("{prefix}.b"), Tensor::zeros(&[h])),
        };
        let ff = |params: &mut ParamSet<F>, rng: &mut ChaCha8Rng, prefix: &str| FeedForwardParams {
            w1: params.add(format!("{prefix}.w1"), xavier(rng, h, pf)),
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[pf])),
            w2: params.add(format!("{prefix}.w2"), xavier(rng, pf, h)),
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[h])),
        };

        let mut encoder = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            encoder.push(EncoderLayer {
                self_attn: attn(&mut params, &mut rng, &format!("enc.{l}.attn")),
                norm1: norm(&mut params, &format!("enc.{l}.norm1")),
                ff: ff(&mut params, &mut rng, &format!("enc.{l}.ff")),
                norm2: norm(&mut params, &format!("enc.{l}.norm2")),
            });
        }
        let mut decoder = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            decoder.push(DecoderLayer {
                self_attn: attn(&mut params, &mut rng, &format!("dec.{l}.self")),
                norm1: norm(&mut params, &format!("dec.{l}.norm1")),
                cross_attn: attn(&mut params, &mut rng, &format!("dec.{l}.cross")),
                norm2: norm(&mut params, &format!("dec.{l}.norm2")),
                ff: ff(&mut params, &mut rng, &format!("dec.{l}.ff")),
                norm3: norm(&mut params, &format!("dec.{l}.norm3")),
            });
        }
        let out_w = params.add("out.w", xavier(&mut rng, h, v));
        let out_b = params.add("out.b", Tensor::zeros(&[v]));

        Ok(Seq2SeqModel {
            config,
            vocab,
            params,
            tok_embed,
            pos_embed,
            encoder,
            decoder,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    /// Total trainable parameter count; a pure function of the config.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Bind every parameter tensor onto the tape, returning vars aligned
    /// with parameter indices.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.leaf(t)).collect()
    }

    /// Token embedding + learned position embedding, then dropout.
    pub fn embed_with_position<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        ids: &[usize],
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<Var> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::InputTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        let tok = tape.embedding_lookup(vars[self.tok_embed], ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding_lookup(vars[self.pos_embed], &positions)?;
        let sum = tape.add(tok, pos)?;
        Ok(self.drop(tape, sum, ctx))
    }

    fn drop<'p>(&self, tape: &mut Tape<'p, F>, x: Var, ctx: &mut RunCtx<'_, F>) -> Var {
        if ctx.train {
            let rng = ctx.rng.as_mut().expect("train mode carries an rng");
            tape.dropout(x, self.config.dropout, true, *rng)
        } else {
            x
        }
    }

    fn attention<'p>(
        &self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        p: &AttnParams,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: Option<&AttnMask>,
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<Var> {
        multi_head_attention(
            tape,
            &p.bind(vars),
            q_in,
            k_in,
            v_in,
            mask,
            self.config.num_heads,
            self.config.dropout,
            ctx,
        )
    }

    fn feed_forward<'p>(
        &self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        p: &FeedForwardParams,
        x: Var,
    ) -> Result<Var> {
        let h1 = tape.matmul(x, vars[p.w1])?;
        let h1 = tape.add_row(h1, vars[p.b1])?;
        let a = tape.relu(h1);
        let h2 = tape.matmul(a, vars[p.w2])?;
        tape.add_row(h2, vars[p.b2])
    }

    fn residual_norm<'p>(
        &self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        norm: &NormParams,
        x: Var,
        branch: Var,
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<Var> {
        let dropped = self.drop(tape, branch, ctx);
        let sum = tape.add(x, dropped)?;
        tape.layer_norm(sum, vars[norm.g], vars[norm.b])
    }

    /// Encoder stack: self-attention + position-wise feed-forward blocks
    /// with post-block normalization. Returns the context sequence `[T, H]`.
    pub fn encode<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        src_ids: &[usize],
        src_key_ok: &[bool],
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<Var> {
        let mut x = self.embed_with_position(tape, vars, src_ids, ctx)?;
        let mask = AttnMask::from_key_ok(src_ids.len(), src_key_ok);
        for layer in &self.encoder {
            let attn = self.attention(tape, vars, &layer.self_attn, x, x, x, Some(&mask), ctx)?;
            x = self.residual_norm(tape, vars, &layer.norm1, x, attn, ctx)?;
            let ff = self.feed_forward(tape, vars, &layer.ff, x)?;
            x = self.residual_norm(tape, vars, &layer.norm2, x, ff, ctx)?;
        }
        Ok(x)
    }

    /// Decoder stack over the target prefix: masked self-attention, then
    /// encoder-attention against `z`, then feed-forward; final projection
    /// to vocabulary logits `[T_tgt, V]`.
    pub fn decode<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        tgt_ids: &[usize],
        z: Var,
        src_key_ok: &[bool],
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<Var> {
        let tgt_key_ok: Vec<bool> = tgt_ids.iter().map(|&id| id != PAD).collect();
        let self_mask = AttnMask::causal(&tgt_key_ok);
        let cross_mask = AttnMask::from_key_ok(tgt_ids.len(), src_key_ok);

        let mut x = self.embed_with_position(tape, vars, tgt_ids, ctx)?;
        for layer in &self.decoder {
            let attn =
                self.attention(tape, vars, &layer.self_attn, x, x, x, Some(&self_mask), ctx)?;
            x = self.residual_norm(tape, vars, &layer.norm1, x, attn, ctx)?;
            let cross =
                self.attention(tape, vars, &layer.cross_attn, x, z, z, Some(&cross_mask), ctx)?;
            x = self.residual_norm(tape, vars, &layer.norm2, x, cross, ctx)?;
            let ff = self.feed_forward(tape, vars, &layer.ff, x)?;
            x = self.residual_norm(tape, vars, &layer.norm3, x, ff, ctx)?;
        }
        let logits = tape.matmul(x, vars[self.out_w])?;
        tape.add_row(logits, vars[self.out_b])
    }

    /// Teacher-forced loss of one (source, target) pair, both given as core
    /// token ids without SOS/EOS. Returns the summed cross-entropy and the
    /// number of predicted positions.
    pub fn sequence_loss<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        vars: &[Var],
        src_core: &[usize],
        tgt_core: &[usize],
        ctx: &mut RunCtx<'_, F>,
    ) -> Result<(Var, usize)> {
        let src = wrap_sos_eos(src_core);
        let src_key_ok: Vec<bool> = src.iter().map(|&id| id != PAD).collect();
        let mut tgt_in = Vec::with_capacity(tgt_core.len() + 1);
        tgt_in.push(SOS);
        tgt_in.extend_from_slice(tgt_core);
        let mut tgt_out = Vec::with_capacity(tgt_core.len() + 1);
        tgt_out.extend_from_slice(tgt_core);
        tgt_out.push(EOS);

        let z = self.encode(tape, vars, &src, &src_key_ok, ctx)?;
        let logits = self.decode(tape, vars, &tgt_in, z, &src_key_ok, ctx)?;
        tape.cross_entropy_sum(logits, &tgt_out, PAD)
    }

    /// Eval-mode decoder logits for a source and a target prefix (core ids;
    /// SOS/EOS handling is internal). Returns the `[len(prefix)+1, V]` rows.
    pub fn prefix_logits(&self, src_core: &[usize], tgt_prefix: &[usize]) -> Result<Vec<Vec<F>>> {
        let src = wrap_sos_eos(src_core);
        let src_key_ok: Vec<bool> = src.iter().map(|&id| id != PAD).collect();
        let mut tgt_in = Vec::with_capacity(tgt_prefix.len() + 1);
        tgt_in.push(SOS);
        tgt_in.extend_from_slice(tgt_prefix);

        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut ctx = RunCtx::eval();
        let z = self.encode(&mut tape, &vars, &src, &src_key_ok, &mut ctx)?;
        let logits = self.decode(&mut tape, &vars, &tgt_in, z, &src_key_ok, &mut ctx)?;
        let v = self.config.vocab_size;
        Ok(tape.value(logits).chunks(v).map(|c| c.to_vec()).collect())
    }
}

/// SOS + core + EOS.
pub fn wrap_sos_eos(core: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(core.len() + 2);
    out.push(SOS);
    out.extend_from_slice(core);
    out.push(EOS);
    out
}
