//! Toy transformer encoder with injection and recording taps.
//!
//! The trace records the embedding output at index 0 and the output of
//! block `r` at index `r`. Injecting at layer `b` adds noise to the input of
//! block `b`, i.e. to trace entry `b - 1`; entries below `b` are untouched.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, contract, Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng::{self, Rng, Stream};

/// Standard deviation of the Gaussian used for weight initialization.
pub const INIT_STD: f64 = 0.02;

const ATTENTION_MASK: f64 = -1e9;
const PER_LAYER: usize = 16;
const EMBED_PARAMS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    /// Number of classes, or 1 for a regression head.
    pub num_outputs: usize,
    pub dropout_rate: f64,
    /// Pre-norm residual blocks instead of the post-norm layout.
    pub pre_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 16,
            num_outputs: 2,
            dropout_rate: 0.0,
            pre_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
            ("num_outputs", self.num_outputs),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config(field, "must be at least 1"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(config(
                "num_heads",
                format!("{} does not divide embed_dim {}", self.num_heads, self.embed_dim),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (d, f) = (self.embed_dim, self.ffn_dim);
        let mut shapes = vec![vec![self.vocab_size, d], vec![self.max_seq_len, d], vec![d], vec![d]];
        for _ in 0..self.num_layers {
            shapes.extend([
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, f],
                vec![f],
                vec![f, d],
                vec![d],
                vec![d],
                vec![d],
            ]);
        }
        shapes.push(vec![d, self.num_outputs]);
        shapes.push(vec![self.num_outputs]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        const LAYER: [&str; PER_LAYER] = [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "ffn_w1", "ffn_b1", "ffn_w2",
            "ffn_b2", "ln2_gain", "ln2_bias",
        ];
        let mut names: Vec<String> = [
            "token_embedding",
            "position_embedding",
            "embed_ln_gain",
            "embed_ln_bias",
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect();
        for l in 1..=self.num_layers {
            names.extend(LAYER.iter().map(|n| format!("layer{l}.{n}")));
        }
        names.push("head_weight".into());
        names.push("head_bias".into());
        names
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln1G,
    Ln1B,
    W1,
    B1,
    W2,
    B2,
    Ln2G,
    Ln2B,
}

fn layer_index(layer: usize, slot: Slot) -> usize {
    EMBED_PARAMS + (layer - 1) * PER_LAYER + slot as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: Vec<Tensor>,
}

/// Parameters of a model registered on a particular graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Accumulated gradients in parameter order; unreached parameters get zeros.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect()
    }
}

/// Recorded per-layer outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// `layers[0]` is the embedding output, `layers[r]` the output of block `r`.
    pub layers: Vec<Var>,
    /// Number of real (non-padding) token positions.
    pub valid_len: usize,
    pub injected_layer: Option<usize>,
    pub injected_noise: Option<Var>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn values(&self, g: &Graph) -> Vec<Tensor> {
        self.layers.iter().map(|&v| g.value(v).clone()).collect()
    }
}

/// Noise added to the input of block `layer` (1-based).
#[derive(Debug, Clone, Copy)]
pub struct Injection {
    pub layer: usize,
    pub noise: Var,
}

struct PassCtx {
    mask: Var,
    valid_len: usize,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(init_seed, Stream::Init);
        let names = config.param_names();
        let params = config
            .param_shapes()
            .into_iter()
            .zip(&names)
            .map(|(shape, name)| {
                if name.ends_with("gain") {
                    Tensor::full(&shape, 1.0)
                } else if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| INIT_STD * rng::standard_normal(&mut rng)).collect();
                    Tensor::new(shape, data).expect("shape from config")
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Builds a model from explicit parameter tensors (e.g. a checkpoint).
    pub fn from_params(config: EncoderConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(contract(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if s.as_slice() != p.shape() {
                return Err(Error::Shape {
                    op: "from_params",
                    lhs: s.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn token_embeddings(&self) -> &Tensor {
        &self.params[0]
    }

    /// Zeroes the residual-branch output projections so every block is the
    /// identity. Only meaningful for pre-norm models.
    pub fn make_blocks_passthrough(&mut self) -> Result<()> {
        if !self.config.pre_norm {
            return Err(contract("pass-through blocks require a pre-norm model"));
        }
        for l in 1..=self.config.num_layers {
            for slot in [Slot::Wo, Slot::Bo, Slot::W2, Slot::B2] {
                let p = &mut self.params[layer_index(l, slot)];
                *p = Tensor::zeros(p.shape());
            }
        }
        Ok(())
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| g.leaf(p.clone(), requires_grad)).collect(),
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let m = self.config.max_seq_len;
        if tokens.is_empty() || tokens.len() > m {
            return Err(Error::Index {
                what: "sequence length",
                index: tokens.len(),
                limit: m,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                limit: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn context(&self, g: &mut Graph, valid_len: usize) -> PassCtx {
        let m = self.config.max_seq_len;
        let mut mask = Tensor::zeros(&[m, m]).into_data();
        for i in 0..m {
            for j in valid_len..m {
                mask[i * m + j] = ATTENTION_MASK;
            }
        }
        let mask = g.constant(Tensor::new(vec![m, m], mask).expect("mask shape"));
        PassCtx { mask, valid_len }
    }

    /// Embedding output for `tokens`, padded with id 0 to `max_seq_len`.
    pub fn embed(&self, g: &mut Graph, p: &BoundParams, tokens: &[usize]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let m = self.config.max_seq_len;
        let mut ids = tokens.to_vec();
        ids.resize(m, 0);
        let tok = g.embedding(p.vars[0], &ids)?;
        let positions: Vec<usize> = (0..m).collect();
        let pos = g.embedding(p.vars[1], &positions)?;
        let sum = g.add(tok, pos)?;
        g.layer_norm(sum, p.vars[2], p.vars[3])
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        let rate = self.config.dropout_rate;
        let Some(rng) = rng.as_deref_mut() else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let shape = g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..n)
            .map(|_| if rng::uniform(rng) < rate { 0.0 } else { keep })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }

    fn attention(&self, g: &mut Graph, p: &BoundParams, layer: usize, h: Var, ctx: &PassCtx) -> Result<Var> {
        let w = |s: Slot| p.vars[layer_index(layer, s)];
        let proj = |g: &mut Graph, x: Var, wm: Slot, b: Slot| -> Result<Var> {
            let y = g.matmul(x, w(wm))?;
            g.add_row(y, w(b))
        };
        let q = proj(g, h, Slot::Wq, Slot::Bq)?;
        let k = proj(g, h, Slot::Wk, Slot::Bk)?;
        let v = proj(g, h, Slot::Wv, Slot::Bv)?;
        let dh = self.config.head_dim();
        let inv_sqrt = 1.0 / libm::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for head in 0..self.config.num_heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, inv_sqrt);
            let scores = g.add(scores, ctx.mask)?;
            let probs = g.softmax(scores)?;
            heads.push(g.matmul(probs, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        proj(g, cat, Slot::Wo, Slot::Bo)
    }

    fn feed_forward(&self, g: &mut Graph, p: &BoundParams, layer: usize, h: Var) -> Result<Var> {
        let w = |s: Slot| p.vars[layer_index(layer, s)];
        let a = g.matmul(h, w(Slot::W1))?;
        let a = g.add_row(a, w(Slot::B1))?;
        let a = g.gelu(a);
        let o = g.matmul(a, w(Slot::W2))?;
        g.add_row(o, w(Slot::B2))
    }

    fn block(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        layer: usize,
        h: Var,
        ctx: &PassCtx,
        rng: &mut Option<&mut Rng>,
    ) -> Result<Var> {
        let w = |s: Slot| p.vars[layer_index(layer, s)];
        if self.config.pre_norm {
            let n1 = g.layer_norm(h, w(Slot::Ln1G), w(Slot::Ln1B))?;
            let a = self.attention(g, p, layer, n1, ctx)?;
            let a = self.dropout(g, a, rng)?;
            let h1 = g.add(h, a)?;
            let n2 = g.layer_norm(h1, w(Slot::Ln2G), w(Slot::Ln2B))?;
            let f = self.feed_forward(g, p, layer, n2)?;
            let f = self.dropout(g, f, rng)?;
            g.add(h1, f)
        } else {
            let a = self.attention(g, p, layer, h, ctx)?;
            let a = self.dropout(g, a, rng)?;
            let r1 = g.add(h, a)?;
            let h1 = g.layer_norm(r1, w(Slot::Ln1G), w(Slot::Ln1B))?;
            let f = self.feed_forward(g, p, layer, h1)?;
            let f = self.dropout(g, f, rng)?;
            let r2 = g.add(h1, f)?;
            g.layer_norm(r2, w(Slot::Ln2G), w(Slot::Ln2B))
        }
    }

    fn head(&self, g: &mut Graph, p: &BoundParams, top: Var, valid_len: usize) -> Result<Var> {
        let m = self.config.max_seq_len;
        let mut pool = vec![0.0; m];
        for v in pool.iter_mut().take(valid_len) {
            *v = 1.0 / valid_len as f64;
        }
        let pool = g.constant(Tensor::new(vec![1, m], pool)?);
        let pooled = g.matmul(pool, top)?;
        let n = self.params.len();
        let logits = g.matmul(pooled, p.vars[n - 2])?;
        let logits = g.add_row(logits, p.vars[n - 1])?;
        g.reshape(logits, &[self.config.num_outputs])
    }

    fn check_injection(&self, g: &Graph, inj: &Injection) -> Result<()> {
        let l = self.config.num_layers;
        if inj.layer == 0 || inj.layer > l {
            return Err(contract(format!("injection layer {} outside 1..={l}", inj.layer)));
        }
        let expect = [self.config.max_seq_len, self.config.embed_dim];
        if g.value(inj.noise).shape() != expect {
            return Err(Error::Shape {
                op: "injection noise",
                lhs: expect.to_vec(),
                rhs: g.value(inj.noise).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Full forward pass returning mean-pooled logits and the activation trace.
    ///
    /// `dropout` supplies the randomness for dropout; `None` disables it.
    pub fn forward_with_taps(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        tokens: &[usize],
        injection: Option<Injection>,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, ActivationTrace)> {
        if let Some(inj) = &injection {
            self.check_injection(g, inj)?;
        }
        let emb = self.embed(g, p, tokens)?;
        let ctx = self.context(g, tokens.len());
        let mut layers = vec![emb];
        let mut h = emb;
        for layer in 1..=self.config.num_layers {
            if let Some(inj) = injection.filter(|i| i.layer == layer) {
                h = g.add(h, inj.noise)?;
            }
            h = self.block(g, p, layer, h, &ctx, &mut dropout)?;
            layers.push(h);
        }
        let logits = self.head(g, p, h, ctx.valid_len)?;
        Ok((
            logits,
            ActivationTrace {
                layers,
                valid_len: ctx.valid_len,
                injected_layer: injection.map(|i| i.layer),
                injected_noise: injection.map(|i| i.noise),
            },
        ))
    }

    /// Perturbed pass that shares the clean trace's nodes below the injection
    /// layer and recomputes blocks `b..=L` on the noisy input.
    pub fn forward_perturbed(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        clean: &ActivationTrace,
        injection: Injection,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, ActivationTrace)> {
        self.check_injection(g, &injection)?;
        if clean.len() != self.config.num_layers + 1 {
            return Err(contract("clean trace does not match model depth"));
        }
        let ctx = self.context(g, clean.valid_len);
        let b = injection.layer;
        let mut layers = clean.layers[..b].to_vec();
        let mut h = g.add(clean.layers[b - 1], injection.noise)?;
        for layer in b..=self.config.num_layers {
            h = self.block(g, p, layer, h, &ctx, &mut dropout)?;
            layers.push(h);
        }
        let logits = self.head(g, p, h, ctx.valid_len)?;
        Ok((
            logits,
            ActivationTrace {
                layers,
                valid_len: clean.valid_len,
                injected_layer: Some(b),
                injected_noise: Some(injection.noise),
            },
        ))
    }

    /// Convenience clean pass on a private graph: logits and trace values.
    pub fn forward(&self, tokens: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let (logits, trace) = self.forward_with_taps(&mut g, &p, tokens, None, None)?;
        Ok((g.value(logits).clone(), trace.values(&g)))
    }

    /// Pass with `noise` added to the input of block `layer`, on a private graph.
    pub fn forward_noisy(&self, tokens: &[usize], layer: usize, noise: Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let noise = g.constant(noise);
        let inj = Injection { layer, noise };
        let (logits, trace) = self.forward_with_taps(&mut g, &p, tokens, Some(inj), None)?;
        Ok((g.value(logits).clone(), trace.values(&g)))
    }
}
