use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{EncoderConfig, NormKind};
use super::powernorm::PowerNormStats;
use super::Mode;
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::SeededStream;
use crate::textpipe::TokenizedBatch;

/// Additive attention bias on padded keys. Large enough that the softmax
/// weight underflows to exactly zero.
const MASKED_SCORE: f64 = -1e9;

const EMBED_STD: f64 = 0.5;

/// Parameters and normalization statistics of one encoder with its heads.
///
/// Parameters are kept in a fixed, config-determined order with
/// hierarchical names (`layer0.attn.wq`, `proj.b2`, ...). Power-norm running
/// statistics live beside them, one entry per normalization site, and are
/// not parameters: they never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    config: EncoderConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: BTreeMap<String, usize>,
    stats: Vec<PowerNormStats>,
}

/// Parameters of an [`EncoderState`] recorded as leaves on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Output of [`EncoderState::encode`].
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Final token states, `[B*L x d]`.
    pub states: Var,
    /// Masked mean of the token states, `[B x d]`.
    pub pooled: Var,
}

enum Stats<'a> {
    Frozen(&'a [PowerNormStats]),
    Train(&'a mut [PowerNormStats]),
}

struct Forward<'a> {
    cfg: &'a EncoderConfig,
    index: &'a BTreeMap<String, usize>,
    bound: &'a Bound,
    stats: Stats<'a>,
}

impl EncoderState {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededStream::new(config.init_seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let (v, d, ff, p) = (config.vocab_size, config.hidden, config.ff, config.projection_dim);
        let mut add = |name: String, t: Tensor| {
            names.push(name);
            params.push(t);
        };
        let normal = |rng: &mut SeededStream, shape: &[usize], std: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.normal() * std).collect();
            Tensor::new(shape.to_vec(), data).expect("init shape")
        };
        let linear = |rng: &mut SeededStream, fan_in: usize, fan_out: usize| {
            normal(rng, &[fan_in, fan_out], 1.0 / math::sqrt(fan_in as f64))
        };
        let has_norm = config.norm != NormKind::None;

        add("tok_emb".into(), normal(&mut rng, &[v, d], EMBED_STD));
        add("pos_emb".into(), normal(&mut rng, &[config.max_len, d], EMBED_STD));
        if has_norm {
            add("emb_norm.gamma".into(), Tensor::full(&[d], 1.0));
            add("emb_norm.beta".into(), Tensor::zeros(&[d]));
        }
        for l in 0..config.layers {
            for m in ["wq", "wk", "wv", "wo"] {
                add(format!("layer{l}.attn.{m}"), linear(&mut rng, d, d));
                add(format!("layer{l}.attn.b{}", &m[1..]), Tensor::zeros(&[d]));
            }
            if has_norm {
                add(format!("layer{l}.norm1.gamma"), Tensor::full(&[d], 1.0));
                add(format!("layer{l}.norm1.beta"), Tensor::zeros(&[d]));
            }
            add(format!("layer{l}.ff.w1"), linear(&mut rng, d, ff));
            add(format!("layer{l}.ff.b1"), Tensor::zeros(&[ff]));
            add(format!("layer{l}.ff.w2"), linear(&mut rng, ff, d));
            add(format!("layer{l}.ff.b2"), Tensor::zeros(&[d]));
            if has_norm {
                add(format!("layer{l}.norm2.gamma"), Tensor::full(&[d], 1.0));
                add(format!("layer{l}.norm2.beta"), Tensor::zeros(&[d]));
            }
        }
        if config.projection_layers == 2 {
            add("proj.w1".into(), linear(&mut rng, d, 2 * d));
            add("proj.b1".into(), Tensor::zeros(&[2 * d]));
            if has_norm || config.projection_batch_norm {
                add("proj.norm.gamma".into(), Tensor::full(&[2 * d], 1.0));
                add("proj.norm.beta".into(), Tensor::zeros(&[2 * d]));
            }
            add("proj.w2".into(), linear(&mut rng, 2 * d, p));
            add("proj.b2".into(), Tensor::zeros(&[p]));
        } else {
            add("proj.w1".into(), linear(&mut rng, d, p));
            add("proj.b1".into(), Tensor::zeros(&[p]));
        }
        add("mlm.bias".into(), Tensor::zeros(&[v]));
        add("cls.w1".into(), linear(&mut rng, d, d));
        add("cls.b1".into(), Tensor::zeros(&[d]));
        add("cls.w2".into(), linear(&mut rng, d, config.num_classes));
        add("cls.b2".into(), Tensor::zeros(&[config.num_classes]));

        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut stats = Vec::with_capacity(config.norm_sites());
        for site in 0..config.norm_sites() {
            let dim = if site == config.norm_sites() - 1 { 2 * d } else { d };
            stats.push(PowerNormStats::new(dim, config.powernorm_momentum, config.powernorm_warmup));
        }
        Ok(Self {
            config,
            names,
            params,
            index,
            stats,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn stats(&self) -> &[PowerNormStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [PowerNormStats] {
        &mut self.stats
    }

    /// Replaces one parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .param_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_param", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Records every parameter as a tape leaf; `trainable` chooses between
    /// differentiable leaves and constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    fn forward<'a>(&'a mut self, bound: &'a Bound, mode: Mode) -> Forward<'a> {
        let stats = match mode {
            Mode::Train => Stats::Train(&mut self.stats),
            Mode::Eval => Stats::Frozen(&self.stats),
        };
        Forward {
            cfg: &self.config,
            index: &self.index,
            bound,
            stats,
        }
    }

    fn forward_eval<'a>(&'a self, bound: &'a Bound) -> Forward<'a> {
        Forward {
            cfg: &self.config,
            index: &self.index,
            bound,
            stats: Stats::Frozen(&self.stats),
        }
    }

    /// Token states and masked-mean pooled sentence vectors. Training mode
    /// updates power-norm statistics.
    pub fn encode(&mut self, tape: &mut Tape, bound: &Bound, batch: &TokenizedBatch, mode: Mode) -> Result<Encoded> {
        self.forward(bound, mode).encode(tape, batch)
    }

    /// [`Self::encode`] in evaluation mode; never mutates.
    pub fn encode_eval(&self, tape: &mut Tape, bound: &Bound, batch: &TokenizedBatch) -> Result<Encoded> {
        self.forward_eval(bound).encode(tape, batch)
    }

    /// Projection head `g`, `[B x d] -> [B x projection_dim]`. The output
    /// is not normalized.
    pub fn project(&mut self, tape: &mut Tape, bound: &Bound, pooled: Var, mode: Mode) -> Result<Var> {
        self.forward(bound, mode).project(tape, pooled)
    }

    pub fn project_eval(&self, tape: &mut Tape, bound: &Bound, pooled: Var) -> Result<Var> {
        self.forward_eval(bound).project(tape, pooled)
    }

    /// Logits over the vocabulary for every token state, using the token
    /// embedding matrix as output weights: `[B*L x V]`.
    pub fn mlm_logits(&self, tape: &mut Tape, bound: &Bound, states: Var) -> Result<Var> {
        self.forward_eval(bound).mlm_logits(tape, states)
    }

    /// Class logits, `[B x C]`.
    pub fn classify(&self, tape: &mut Tape, bound: &Bound, pooled: Var) -> Result<Var> {
        self.forward_eval(bound).classify(tape, pooled)
    }

    /// Pooled representations in evaluation mode, one row per sentence.
    pub fn embed(&self, batch: &TokenizedBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let enc = self.encode_eval(&mut tape, &bound, batch)?;
        Ok(tape.value(enc.pooled).clone())
    }

    /// Projection-head outputs in evaluation mode.
    pub fn embed_projected(&self, batch: &TokenizedBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let enc = self.encode_eval(&mut tape, &bound, batch)?;
        let z = self.project_eval(&mut tape, &bound, enc.pooled)?;
        Ok(tape.value(z).clone())
    }

    /// Class probabilities in evaluation mode, `[B x C]`.
    pub fn predict_proba(&self, batch: &TokenizedBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let enc = self.encode_eval(&mut tape, &bound, batch)?;
        let logits = self.classify(&mut tape, &bound, enc.pooled)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).clone())
    }
}

impl Forward<'_> {
    fn p(&self, name: &str) -> Var {
        self.bound.vars[self.index[name]]
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: &str, b: &str) -> Result<Var> {
        let h = tape.matmul(x, self.p(w))?;
        tape.add_row(h, self.p(b))
    }

    fn norm_site(&mut self, tape: &mut Tape, site: usize, prefix: &str, x: Var, row_mask: Option<&[u8]>) -> Result<Var> {
        let gamma_name = format!("{prefix}.gamma");
        let beta_name = format!("{prefix}.beta");
        match self.cfg.norm {
            NormKind::None => Ok(x),
            NormKind::Layer => {
                let (g, b) = (self.p(&gamma_name), self.p(&beta_name));
                tape.layer_norm(x, g, b, self.cfg.norm_eps)
            }
            NormKind::Power => {
                let (g, b) = (self.p(&gamma_name), self.p(&beta_name));
                let psi = match &mut self.stats {
                    Stats::Frozen(s) => s[site].clone().divisor(tape.value(x), row_mask, Mode::Eval)?,
                    Stats::Train(s) => s[site].divisor(tape.value(x), row_mask, Mode::Train)?,
                };
                tape.power_norm(x, g, b, &psi)
            }
        }
    }

    fn encode(&mut self, tape: &mut Tape, batch: &TokenizedBatch) -> Result<Encoded> {
        let cfg = self.cfg;
        let (bsz, len, d, heads) = (batch.batch_size(), batch.seq_len(), cfg.hidden, cfg.heads);
        let dh = cfg.head_dim();
        if len > cfg.max_len {
            return Err(Error::shape("encode", &[len], &[cfg.max_len]));
        }
        if let Some(&id) = batch.ids().iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                size: cfg.vocab_size,
            });
        }
        let mask = batch.mask();
        let tok = tape.embedding(self.p("tok_emb"), batch.ids())?;
        let pos_ids: Vec<usize> = (0..bsz).flat_map(|_| 0..len).collect();
        let pos = tape.embedding(self.p("pos_emb"), &pos_ids)?;
        let mut h = tape.add(tok, pos)?;
        h = self.norm_site(tape, 0, "emb_norm", h, Some(mask))?;

        let mut bias = Vec::with_capacity(bsz * heads * len * len);
        for b in 0..bsz {
            let row: Vec<f64> = batch
                .mask_row(b)
                .iter()
                .map(|&m| if m == 1 { 0.0 } else { MASKED_SCORE })
                .collect();
            for _ in 0..heads * len {
                bias.extend_from_slice(&row);
            }
        }
        let bias = tape.constant(Tensor::new(vec![bsz * heads, len, len], bias)?)?;
        let inv_sqrt_dh = 1.0 / math::sqrt(dh as f64);

        for l in 0..cfg.layers {
            let pre = format!("layer{l}.attn");
            let q = self.linear(tape, h, &format!("{pre}.wq"), &format!("{pre}.bq"))?;
            let k = self.linear(tape, h, &format!("{pre}.wk"), &format!("{pre}.bk"))?;
            let v = self.linear(tape, h, &format!("{pre}.wv"), &format!("{pre}.bv"))?;
            let split = |tape: &mut Tape, x: Var, perm: &[usize], shape: &[usize]| -> Result<Var> {
                let x = tape.reshape(x, &[bsz, len, heads, dh])?;
                let x = tape.permute(x, perm)?;
                tape.reshape(x, shape)
            };
            let q = split(tape, q, &[0, 2, 1, 3], &[bsz * heads, len, dh])?;
            let kt = split(tape, k, &[0, 2, 3, 1], &[bsz * heads, dh, len])?;
            let v = split(tape, v, &[0, 2, 1, 3], &[bsz * heads, len, dh])?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, inv_sqrt_dh)?;
            let scores = tape.add(scores, bias)?;
            let att = tape.softmax(scores)?;
            let ctx = tape.matmul(att, v)?;
            let ctx = tape.reshape(ctx, &[bsz, heads, len, dh])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[bsz * len, d])?;
            let attn_out = self.linear(tape, ctx, &format!("{pre}.wo"), &format!("{pre}.bo"))?;
            h = tape.add(h, attn_out)?;
            h = self.norm_site(tape, 1 + 2 * l, &format!("layer{l}.norm1"), h, Some(mask))?;

            let f = self.linear(tape, h, &format!("layer{l}.ff.w1"), &format!("layer{l}.ff.b1"))?;
            let f = tape.gelu(f)?;
            let f = self.linear(tape, f, &format!("layer{l}.ff.w2"), &format!("layer{l}.ff.b2"))?;
            h = tape.add(h, f)?;
            h = self.norm_site(tape, 2 + 2 * l, &format!("layer{l}.norm2"), h, Some(mask))?;
        }

        let mut pool = vec![0.0; bsz * bsz * len];
        for b in 0..bsz {
            let n = batch.row_len(b);
            if n == 0 {
                return Err(Error::EmptyInput("encode: row without tokens"));
            }
            for (t, &m) in batch.mask_row(b).iter().enumerate() {
                if m == 1 {
                    pool[b * bsz * len + b * len + t] = 1.0 / n as f64;
                }
            }
        }
        let pool = tape.constant(Tensor::new(vec![bsz, bsz * len], pool)?)?;
        let pooled = tape.matmul(pool, h)?;
        Ok(Encoded { states: h, pooled })
    }

    fn project(&mut self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        if self.cfg.projection_layers == 1 {
            return self.linear(tape, pooled, "proj.w1", "proj.b1");
        }
        let h = self.linear(tape, pooled, "proj.w1", "proj.b1")?;
        let site = self.cfg.norm_sites() - 1;
        let h = if self.cfg.projection_batch_norm {
            self.batch_norm(tape, h)?
        } else {
            self.norm_site(tape, site, "proj.norm", h, None)?
        };
        let h = tape.gelu(h)?;
        self.linear(tape, h, "proj.w2", "proj.b2")
    }

    /// Normalization over the batch axis with batch statistics in both
    /// modes; gradients flow through the statistics.
    fn batch_norm(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape[0] < 2 {
            return Err(Error::DegenerateInput("batch norm needs at least two rows"));
        }
        let mu = tape.mean_axis(x, 0)?;
        let neg_mu = tape.neg(mu)?;
        let xc = tape.add_row(x, neg_mu)?;
        let sq = tape.mul(xc, xc)?;
        let var = tape.mean_axis(sq, 0)?;
        let var = tape.add_scalar(var, self.cfg.norm_eps)?;
        let std = tape.sqrt(var)?;
        let ones = tape.constant(Tensor::full(&[shape[1]], 1.0))?;
        let inv = tape.div(ones, std)?;
        let xn = tape.mul_row(xc, inv)?;
        let xn = tape.mul_row(xn, self.p("proj.norm.gamma"))?;
        tape.add_row(xn, self.p("proj.norm.beta"))
    }

    fn mlm_logits(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        let et = tape.transpose(self.p("tok_emb"))?;
        let logits = tape.matmul(states, et)?;
        tape.add_row(logits, self.p("mlm.bias"))
    }

    fn classify(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        let h = self.linear(tape, pooled, "cls.w1", "cls.b1")?;
        let h = tape.gelu(h)?;
        self.linear(tape, h, "cls.w2", "cls.b2")
    }
}
