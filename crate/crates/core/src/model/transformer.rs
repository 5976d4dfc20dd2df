use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary, PAD};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::indexer::Token;
use crate::tensor::{Grads, NodeId, ParamStore, Tape};

const NORM_EPS: f64 = 1e-6;
const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ff {
    win: usize,
    wout: usize,
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ff: Ff,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ff: Ff,
}

#[derive(Debug, Clone)]
struct Layout {
    shared: usize,
    enc_pos: usize,
    dec_pos: usize,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    enc_final: Norm,
    dec_final: Norm,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct Spec {
    names: Vec<(String, (usize, usize), Init)>,
}

impl Spec {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push((name, shape, init));
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{prefix}.g"), (1, d), Init::Ones),
            b: self.add(format!("{prefix}.b"), (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        let std = Init::Normal(1.0 / (d as f64).sqrt());
        Attn {
            q: self.add(format!("{prefix}.q"), (d, d), std),
            k: self.add(format!("{prefix}.k"), (d, d), std),
            v: self.add(format!("{prefix}.v"), (d, d), std),
            o: self.add(format!("{prefix}.o"), (d, d), std),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, w: usize) -> Ff {
        Ff {
            win: self.add(format!("{prefix}.in"), (d, w), Init::Normal(1.0 / (d as f64).sqrt())),
            wout: self.add(format!("{prefix}.out"), (w, d), Init::Normal(1.0 / (w as f64).sqrt())),
        }
    }
}

fn layout(config: &ModelConfig, vocab_size: usize) -> (Layout, Spec) {
    let d = config.d;
    let mut s = Spec { names: Vec::new() };
    let shared = s.add("shared".into(), (vocab_size, d), Init::Normal(EMBED_STD));
    let enc_pos = s.add("enc.pos".into(), (config.max_len, d), Init::Normal(EMBED_STD));
    let dec_pos = s.add("dec.pos".into(), (config.max_len, d), Init::Normal(EMBED_STD));
    let enc = (0..config.enc_layers)
        .map(|l| EncLayer {
            ln1: s.norm(&format!("enc.{l}.ln1"), d),
            attn: s.attn(&format!("enc.{l}.attn"), d),
            ln2: s.norm(&format!("enc.{l}.ln2"), d),
            ff: s.ff(&format!("enc.{l}.ff"), d, config.w),
        })
        .collect();
    let dec = (0..config.dec_layers)
        .map(|l| DecLayer {
            ln1: s.norm(&format!("dec.{l}.ln1"), d),
            self_attn: s.attn(&format!("dec.{l}.self"), d),
            ln2: s.norm(&format!("dec.{l}.ln2"), d),
            cross: s.attn(&format!("dec.{l}.cross"), d),
            ln3: s.norm(&format!("dec.{l}.ln3"), d),
            ff: s.ff(&format!("dec.{l}.ff"), d, config.w),
        })
        .collect();
    let enc_final = s.norm("enc.final", d);
    let dec_final = s.norm("dec.final", d);
    (
        Layout {
            shared,
            enc_pos,
            dec_pos,
            enc,
            dec,
            enc_final,
            dec_final,
        },
        s,
    )
}

/// Encoder output for one prompt, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct Encoded {
    tokens: Vec<TokenId>,
    states: Array2<f64>,
}

/// Dropout source: `None` at inference.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    stamp: Option<String>,
    config: ModelConfig,
    vocab: Vocabulary,
    params: Vec<CheckpointTensor>,
}

const CHECKPOINT_FORMAT: &str = "genrec-seq2seq-v1";

impl Seq2SeqModel {
    /// Randomly initialized model, deterministic in `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let (layout, spec) = layout(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in spec.names {
            let value = match init {
                Init::Ones => Array2::ones(shape),
                Init::Zeros => Array2::zeros(shape),
                Init::Normal(std) => {
                    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                    Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng))
                }
            };
            params.add(name, value);
        }
        Ok(Seq2SeqModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Index of the shared token embedding (also the output projection).
    pub fn shared_embedding(&self) -> usize {
        self.layout.shared
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::Shape(format!("token {bad} outside vocabulary of {}", self.vocab.len())));
        }
        Ok(())
    }

    fn embed(&self, t: &mut Tape, tokens: &[TokenId], pos: usize, rng: &mut DropoutRng) -> NodeId {
        let rows: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let e = t.gather(self.layout.shared, &rows);
        let p = t.gather(pos, &positions);
        let x = t.add(e, p);
        self.dropout(t, x, rng)
    }

    fn dropout(&self, t: &mut Tape, x: NodeId, rng: &mut DropoutRng) -> NodeId {
        match rng {
            Some(r) => t.dropout(x, self.config.dropout, *r),
            None => x,
        }
    }

    fn norm(&self, t: &mut Tape, x: NodeId, n: Norm) -> NodeId {
        let g = t.param(n.g);
        let b = t.param(n.b);
        t.layer_norm(x, g, b, NORM_EPS)
    }

    fn attention(&self, t: &mut Tape, a: Attn, q_in: NodeId, kv_in: NodeId, keep: &Array2<bool>) -> NodeId {
        let heads = self.config.heads;
        let dh = self.config.d / heads;
        let (wq, wk, wv, wo) = (t.param(a.q), t.param(a.k), t.param(a.v), t.param(a.o));
        let q = t.matmul(q_in, wq);
        let k = t.matmul(kv_in, wk);
        let v = t.matmul(kv_in, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = t.slice_cols(q, lo, hi);
            let kh = t.slice_cols(k, lo, hi);
            let vh = t.slice_cols(v, lo, hi);
            let scores = t.matmul_t(qh, kh);
            let scores = t.scale(scores, scale);
            let p = t.masked_softmax(scores, keep);
            outs.push(t.matmul(p, vh));
        }
        let cat = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        t.matmul(cat, wo)
    }

    fn feed_forward(&self, t: &mut Tape, f: Ff, x: NodeId) -> NodeId {
        let win = t.param(f.win);
        let wout = t.param(f.wout);
        let h = t.matmul(x, win);
        let h = t.relu(h);
        t.matmul(h, wout)
    }

    fn residual(&self, t: &mut Tape, x: NodeId, out: NodeId, rng: &mut DropoutRng) -> NodeId {
        let out = self.dropout(t, out, rng);
        t.add(x, out)
    }

    /// Encoder states (`len × d`); PAD positions are never attended to.
    pub fn encode_on(&self, t: &mut Tape, input: &[TokenId], rng: &mut DropoutRng) -> Result<NodeId> {
        if input.is_empty() {
            return Err(Error::Empty("encoder input has no tokens".into()));
        }
        self.check_tokens(input)?;
        let n = input.len();
        let keep = Array2::from_shape_fn((n, n), |(_, j)| input[j] != PAD);
        let mut x = self.embed(t, input, self.layout.enc_pos, rng);
        for layer in &self.layout.enc {
            let h = self.norm(t, x, layer.ln1);
            let a = self.attention(t, layer.attn, h, h, &keep);
            x = self.residual(t, x, a, rng);
            let h = self.norm(t, x, layer.ln2);
            let f = self.feed_forward(t, layer.ff, h);
            x = self.residual(t, x, f, rng);
        }
        Ok(self.norm(t, x, self.layout.enc_final))
    }

    /// Decoder hidden states (`len × d`) for decoder input `dec_in`.
    pub fn decode_on(
        &self,
        t: &mut Tape,
        enc: NodeId,
        input: &[TokenId],
        dec_in: &[TokenId],
        rng: &mut DropoutRng,
    ) -> Result<NodeId> {
        self.check_tokens(dec_in)?;
        let n = dec_in.len();
        let causal = Array2::from_shape_fn((n, n), |(i, j)| j <= i);
        let cross = Array2::from_shape_fn((n, input.len()), |(_, j)| input[j] != PAD);
        let mut y = self.embed(t, dec_in, self.layout.dec_pos, rng);
        for layer in &self.layout.dec {
            let h = self.norm(t, y, layer.ln1);
            let a = self.attention(t, layer.self_attn, h, h, &causal);
            y = self.residual(t, y, a, rng);
            let h = self.norm(t, y, layer.ln2);
            let c = self.attention(t, layer.cross, h, enc, &cross);
            y = self.residual(t, y, c, rng);
            let h = self.norm(t, y, layer.ln3);
            let f = self.feed_forward(t, layer.ff, h);
            y = self.residual(t, y, f, rng);
        }
        Ok(self.norm(t, y, self.layout.dec_final))
    }

    /// Full-vocabulary logits for every decoder position.
    pub fn logits_on(&self, t: &mut Tape, hidden: NodeId) -> NodeId {
        let shared = t.param(self.layout.shared);
        t.matmul_t(hidden, shared)
    }

    /// Teacher-forced cross-entropy of `target` given `prompt`, divided by `denom`.
    pub fn example_loss(
        &self,
        t: &mut Tape,
        prompt: &[TokenId],
        target: &[TokenId],
        denom: f64,
        rng: &mut DropoutRng,
    ) -> Result<NodeId> {
        if target.is_empty() {
            return Err(Error::Empty("training target has no tokens".into()));
        }
        let mut dec_in = Vec::with_capacity(target.len());
        dec_in.push(PAD);
        dec_in.extend_from_slice(&target[..target.len() - 1]);
        let enc = self.encode_on(t, prompt, rng)?;
        let hidden = self.decode_on(t, enc, prompt, &dec_in, rng)?;
        let logits = self.logits_on(t, hidden);
        let targets: Vec<usize> = target.iter().map(|&x| x as usize).collect();
        Ok(t.cross_entropy(logits, &targets, denom))
    }

    /// Mean per-token cross-entropy and its gradient over `pairs` (no dropout).
    pub fn loss_and_gradients(&self, pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<(f64, Grads)> {
        let denom: usize = pairs.iter().map(|(_, t)| t.len()).sum();
        let mut t = Tape::new(&self.params);
        let mut losses = Vec::with_capacity(pairs.len());
        for (p, tgt) in pairs {
            losses.push(self.example_loss(&mut t, p, tgt, denom as f64, &mut None)?);
        }
        let total = t.sum(&losses);
        Ok((t.scalar(total), t.backward(total)))
    }

    /// Mean per-token cross-entropy over `pairs` at inference (no dropout).
    pub fn loss(&self, pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<f64> {
        let denom: usize = pairs.iter().map(|(_, t)| t.len()).sum();
        let mut total = 0.0;
        for (p, tgt) in pairs {
            let mut t = Tape::new(&self.params);
            let l = self.example_loss(&mut t, p, tgt, denom as f64, &mut None)?;
            total += t.scalar(l);
        }
        Ok(total)
    }

    /// Next-token distribution after `target_prefix`.
    pub fn forward(&self, input: &[TokenId], target_prefix: &[TokenId]) -> Result<Vec<f64>> {
        let enc = self.encode(input)?;
        let h = self.next_hidden(&enc, target_prefix)?;
        let logits = self.params.get(self.layout.shared).dot(&h);
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exp = logits.mapv(|v| (v - max).exp());
        let z = exp.sum();
        Ok(exp.iter().map(|v| v / z).collect())
    }

    pub fn encode(&self, input: &[TokenId]) -> Result<Encoded> {
        let mut t = Tape::new(&self.params);
        let node = self.encode_on(&mut t, input, &mut None)?;
        Ok(Encoded {
            tokens: input.to_vec(),
            states: t.value(node).to_owned(),
        })
    }

    /// Final decoder state at the last position of `[PAD] + target_prefix`.
    pub fn next_hidden(&self, enc: &Encoded, target_prefix: &[TokenId]) -> Result<Array1<f64>> {
        let mut dec_in = Vec::with_capacity(target_prefix.len() + 1);
        dec_in.push(PAD);
        dec_in.extend_from_slice(target_prefix);
        let mut t = Tape::new(&self.params);
        let states = t.constant(enc.states.clone());
        let h = self.decode_on(&mut t, states, &enc.tokens, &dec_in, &mut None)?;
        Ok(t.value(h).row(dec_in.len() - 1).to_owned())
    }

    /// Logits of selected tokens only.
    pub fn candidate_logits(&self, hidden: &Array1<f64>, candidates: &[TokenId]) -> Vec<f64> {
        let shared = self.params.get(self.layout.shared);
        candidates.iter().map(|&c| shared.row(c as usize).dot(hidden)).collect()
    }

    /// Prompt tokens for a user ID.
    pub fn prompt(&self, template: &str, user_id: &[Token]) -> Vec<TokenId> {
        self.vocab.make_prompt(template, user_id)
    }

    pub fn to_json(&self, stamp: Option<&str>) -> Result<String> {
        let params = (0..self.params.len())
            .map(|i| {
                let v = self.params.get(i);
                CheckpointTensor {
                    name: self.params.name(i).to_string(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                    data: v.iter().copied().collect(),
                }
            })
            .collect();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            stamp: stamp.map(str::to_string),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params,
        };
        serde_json::to_string(&ckpt).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Parse a checkpoint; returns the model and its stamp.
    pub fn from_json(text: &str) -> Result<(Self, Option<String>)> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("unknown checkpoint format `{}`", ckpt.format)));
        }
        ckpt.config.validate()?;
        if ckpt.config.max_len > 1 << 16 || ckpt.config.d > 1 << 16 || ckpt.config.w > 1 << 20 {
            return Err(Error::Serde("checkpoint dimensions are implausibly large".into()));
        }
        let (layout, spec) = layout(&ckpt.config, ckpt.vocab.len());
        if spec.names.len() != ckpt.params.len() {
            return Err(Error::Serde(format!(
                "checkpoint has {} tensors, expected {}",
                ckpt.params.len(),
                spec.names.len()
            )));
        }
        let mut params = ParamStore::new();
        for ((name, shape, _), tensor) in spec.names.into_iter().zip(ckpt.params) {
            if tensor.name != name || (tensor.rows, tensor.cols) != shape {
                return Err(Error::Serde(format!(
                    "tensor `{}` {}x{} does not match expected `{name}` {}x{}",
                    tensor.name, tensor.rows, tensor.cols, shape.0, shape.1
                )));
            }
            if tensor.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Serde(format!("tensor `{name}` has non-finite values")));
            }
            let value = Array2::from_shape_vec(shape, tensor.data).map_err(|e| Error::Serde(e.to_string()))?;
            params.add(name, value);
        }
        Ok((
            Seq2SeqModel {
                config: ckpt.config,
                vocab: ckpt.vocab,
                params,
                layout,
            },
            ckpt.stamp,
        ))
    }
}
