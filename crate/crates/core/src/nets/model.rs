//! Sequence encoder and actor/critic heads.
//!
//! Each rendition of the public window gets its own linear input embedding;
//! everything after it is shared. A block is a stride-2 temporal convolution
//! (kernel 3, tanh) with a strided 1x1 shortcut, followed by multi-head
//! self-attention with a residual connection. Attentive pooling over time and
//! a tanh projection give the representation h(s).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{fan_in_init, orthogonal_init, ParamId, ParameterStore};
use super::tape::{Graph, Var};
use super::Matrix;
use crate::error::{Error, Result};

/// Number of private-state scalars appended to head inputs.
pub const PRIVATE_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub features: usize,
    pub window: usize,
    pub blocks: usize,
    pub channels: usize,
    pub heads: usize,
    pub repr: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            features: crate::sim::FEATURES,
            window: 16,
            blocks: 2,
            channels: 16,
            heads: 2,
            repr: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("window", self.window),
            ("blocks", self.blocks),
            ("channels", self.channels),
            ("heads", self.heads),
            ("repr", self.repr),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        let stride = 1usize << self.blocks;
        if self.window % stride != 0 {
            return Err(Error::Config(format!(
                "window {} is not divisible by total stride {stride}",
                self.window
            )));
        }
        if self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by {} attention heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }
}

/// Which rendition of the public window feeds a head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rendition {
    Standardized,
    RawLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeadOutput {
    /// (μ, σ) with σ = σ_min + softplus(raw); σ starts at `sigma_init`.
    Gaussian { sigma_init: f64 },
    Value,
    Logits { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub rendition: Rendition,
    pub private: bool,
    pub output: HeadOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub sigma_min: f64,
    /// Output-layer gain of policy heads.
    pub policy_gain: f64,
    pub heads: Vec<HeadSpec>,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::Config("sigma_min must be positive".into()));
        }
        for h in &self.heads {
            match h.output {
                HeadOutput::Gaussian { sigma_init } if !(sigma_init > self.sigma_min) => {
                    return Err(Error::Config(format!(
                        "head {}: sigma_init must exceed sigma_min",
                        h.name
                    )))
                }
                HeadOutput::Logits { n } if n < 2 => {
                    return Err(Error::Config(format!("head {}: need at least 2 logits", h.name)))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Inputs for one decision point.
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a> {
    pub standardized: &'a Matrix,
    pub raw_log: &'a Matrix,
    pub private: [f64; PRIVATE_FEATURES],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadOut {
    Gaussian { mean: Var, std: Var },
    Value(Var),
    Logits(Var),
}

impl HeadOut {
    pub fn gaussian(self) -> Result<(Var, Var)> {
        match self {
            HeadOut::Gaussian { mean, std } => Ok((mean, std)),
            _ => Err(Error::Shape("head is not gaussian".into())),
        }
    }

    pub fn value(self) -> Result<Var> {
        match self {
            HeadOut::Value(v) => Ok(v),
            _ => Err(Error::Shape("head is not a value head".into())),
        }
    }

    pub fn logits(self) -> Result<Var> {
        match self {
            HeadOut::Logits(v) => Ok(v),
            _ => Err(Error::Shape("head is not a logits head".into())),
        }
    }
}

#[derive(Clone, Debug)]
struct BlockIds {
    conv_w: ParamId,
    conv_b: ParamId,
    shortcut: ParamId,
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Encoder plus heads over one parameter store.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetConfig,
    seed: u64,
    store: ParameterStore,
    embed: BTreeMap<Rendition, (ParamId, ParamId)>,
    blocks: Vec<BlockIds>,
    pool: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    heads: Vec<HeadIds>,
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Network {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let e = &config.encoder;
        let c = e.channels;

        let mut renditions: Vec<Rendition> = config.heads.iter().map(|h| h.rendition).collect();
        renditions.sort();
        renditions.dedup();
        let mut embed = BTreeMap::new();
        for r in renditions {
            // log levels are an order of magnitude larger than standardized values
            let gain = match r {
                Rendition::Standardized => 1.0,
                Rendition::RawLog => 0.15,
            };
            let tag = match r {
                Rendition::Standardized => "std",
                Rendition::RawLog => "raw",
            };
            let w = store.add(&format!("embed.{tag}.w"), fan_in_init(e.features, c, gain, &mut rng))?;
            let b = store.add(&format!("embed.{tag}.b"), Matrix::zeros(1, c))?;
            embed.insert(r, (w, b));
        }

        let mut blocks = Vec::new();
        for i in 0..e.blocks {
            let p = |n: &str| format!("block{i}.{n}");
            blocks.push(BlockIds {
                conv_w: store.add(&p("conv.w"), fan_in_init(3 * c, c, 1.0, &mut rng))?,
                conv_b: store.add(&p("conv.b"), Matrix::zeros(1, c))?,
                shortcut: store.add(&p("shortcut"), fan_in_init(c, c, 1.0, &mut rng))?,
                q: store.add(&p("attn.q"), fan_in_init(c, c, 1.0, &mut rng))?,
                k: store.add(&p("attn.k"), fan_in_init(c, c, 1.0, &mut rng))?,
                v: store.add(&p("attn.v"), fan_in_init(c, c, 1.0, &mut rng))?,
                o: store.add(&p("attn.o"), fan_in_init(c, c, 0.5, &mut rng))?,
            });
        }
        let pool = store.add("pool.w", fan_in_init(c, 1, 1.0, &mut rng))?;
        let proj_w = store.add("proj.w", fan_in_init(c, e.repr, 1.0, &mut rng))?;
        let proj_b = store.add("proj.b", Matrix::zeros(1, e.repr))?;

        let mut heads = Vec::new();
        for h in &config.heads {
            let input = e.repr + if h.private { PRIVATE_FEATURES } else { 0 };
            let (out, gain, bias) = match h.output {
                HeadOutput::Gaussian { sigma_init } => (
                    2,
                    config.policy_gain,
                    vec![0.0, inverse_softplus(sigma_init - config.sigma_min)],
                ),
                HeadOutput::Value => (1, 1.0, vec![0.0]),
                HeadOutput::Logits { n } => (n, config.policy_gain, vec![0.0; n]),
            };
            let p = |n: &str| format!("head.{}.{n}", h.name);
            heads.push(HeadIds {
                w1: store.add(&p("w1"), orthogonal_init(input, config.hidden, 1.0, &mut rng))?,
                b1: store.add(&p("b1"), Matrix::zeros(1, config.hidden))?,
                w2: store.add(&p("w2"), orthogonal_init(config.hidden, out, gain, &mut rng))?,
                b2: store.add(&p("b2"), Matrix::row_vector(bias))?,
            });
        }

        Ok(Network {
            config,
            seed,
            store,
            embed,
            blocks,
            pool,
            proj_w,
            proj_b,
            heads,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.config.heads.iter().position(|h| h.name == name)
    }

    fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = g.param(w);
        let b = g.param(b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// h(s) for one rendition of the window.
    pub fn encode(&self, g: &mut Graph, window: &Matrix, rendition: Rendition) -> Result<Var> {
        let e = &self.config.encoder;
        if window.shape() != (e.window, e.features) {
            return Err(Error::Shape(format!(
                "window is {:?}, encoder expects ({}, {})",
                window.shape(),
                e.window,
                e.features
            )));
        }
        let &(ew, eb) = self
            .embed
            .get(&rendition)
            .ok_or_else(|| Error::Shape(format!("no embedding for {rendition:?}")))?;
        let x = g.input(window.clone());
        let mut z = Self::linear(g, x, ew, eb)?;
        let c = e.channels;
        let dh = c / e.heads;
        for b in &self.blocks {
            let patches = g.im2col(z, 3, 2, 1)?;
            let conv = Self::linear(g, patches, b.conv_w, b.conv_b)?;
            let conv = g.tanh(conv);
            let strided = g.im2col(z, 1, 2, 0)?;
            let sw = g.param(b.shortcut);
            let short = g.matmul(strided, sw)?;
            let y = g.add(conv, short)?;

            let (wq, wk, wv, wo) = (g.param(b.q), g.param(b.k), g.param(b.v), g.param(b.o));
            let q = g.matmul(y, wq)?;
            let k = g.matmul(y, wk)?;
            let v = g.matmul(y, wv)?;
            let mut outs = Vec::with_capacity(e.heads);
            for h in 0..e.heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let kt = g.transpose(kh);
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
                let attn = g.softmax_rows(scores);
                outs.push(g.matmul(attn, vh)?);
            }
            let heads = g.concat_cols(&outs)?;
            let mixed = g.matmul(heads, wo)?;
            z = g.add(y, mixed)?;
        }
        let wp = g.param(self.pool);
        let scores = g.matmul(z, wp)?;
        let scores = g.transpose(scores);
        let weights = g.softmax_rows(scores);
        let pooled = g.matmul(weights, z)?;
        let r = Self::linear(g, pooled, self.proj_w, self.proj_b)?;
        Ok(g.tanh(r))
    }

    fn head(&self, g: &mut Graph, idx: usize, input: Var) -> Result<HeadOut> {
        let ids = &self.heads[idx];
        let hidden = Self::linear(g, input, ids.w1, ids.b1)?;
        let hidden = g.tanh(hidden);
        let out = Self::linear(g, hidden, ids.w2, ids.b2)?;
        Ok(match self.config.heads[idx].output {
            HeadOutput::Gaussian { .. } => {
                let mean = g.slice_cols(out, 0, 1)?;
                let raw = g.slice_cols(out, 1, 1)?;
                let sp = g.softplus(raw);
                let std = g.add_scalar(sp, self.config.sigma_min);
                HeadOut::Gaussian { mean, std }
            }
            HeadOutput::Value => HeadOut::Value(out),
            HeadOutput::Logits { .. } => HeadOut::Logits(out),
        })
    }

    /// Runs the encoder once per needed rendition and the selected heads
    /// (all heads when `only` is `None`). Outputs are indexed like the config.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &NetInput,
        only: Option<&[usize]>,
    ) -> Result<Vec<Option<HeadOut>>> {
        let selected: Vec<usize> = match only {
            Some(s) => s.to_vec(),
            None => (0..self.heads.len()).collect(),
        };
        let mut reprs: BTreeMap<Rendition, Var> = BTreeMap::new();
        let mut private: Option<Var> = None;
        let mut outs = vec![None; self.heads.len()];
        for idx in selected {
            let spec = self
                .config
                .heads
                .get(idx)
                .ok_or_else(|| Error::Shape(format!("no head {idx}")))?;
            let repr = match reprs.get(&spec.rendition) {
                Some(v) => *v,
                None => {
                    let window = match spec.rendition {
                        Rendition::Standardized => input.standardized,
                        Rendition::RawLog => input.raw_log,
                    };
                    let v = self.encode(g, window, spec.rendition)?;
                    reprs.insert(spec.rendition, v);
                    v
                }
            };
            let x = if spec.private {
                let p = *private.get_or_insert_with(|| g.input(Matrix::row_vector(input.private.to_vec())));
                g.concat_cols(&[repr, p])?
            } else {
                repr
            };
            outs[idx] = Some(self.head(g, idx, x)?);
        }
        Ok(outs)
    }
}
