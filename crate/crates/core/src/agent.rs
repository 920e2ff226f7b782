//! Limit-price agents.
//!
//! The two-stage agent first picks a price offset on a grid of realizable
//! percentage moves (discretized Gaussian over the standardized window), then
//! refines it by −K..K ticks (Gaussian-and-softmax over the raw window plus
//! private state). The final offset is the sum. The same machinery also
//! provides the stage-1-only ablation and plain PPO baselines with a Gaussian
//! or a softmax action head.
//!
//! Percentage actions are expressed in per-mille of the current price so that
//! the standardized state and the stage-1 grid share units.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{
    disc_gaussian_sampled_at, grid_dist_deterministic, sample_positions, Categorical, Gaussian,
    GaussianParams, GridFamily, LocationGrid, ScoredDist,
};
use crate::error::{Error, Result};
use crate::lob::ticks_from_pct;
use crate::nets::{
    Checkpoint, EncoderConfig, Gradients, Graph, HeadOutput, HeadSpec, Matrix, NetConfig,
    NetInput, Network, ParameterStore, Rendition, Var,
};
use crate::rng::derive_seed;
use crate::sim::{PublicState, PRICE_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PolicyKind {
    /// Two-stage agent with a 2K+1 tick refinement window.
    Halop { k: i64 },
    /// Stage 1 alone, fed both public and private state.
    HalopStage1,
    /// Continuous Gaussian over per-mille price moves, rounded to ticks.
    PpoGaussian,
    /// Softmax over tick offsets −w..w.
    PpoSoftmax { half_width: i64 },
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Halop { .. } => "halop",
            PolicyKind::HalopStage1 => "halop-stage1",
            PolicyKind::PpoGaussian => "ppo-gaussian",
            PolicyKind::PpoSoftmax { .. } => "ppo-softmax",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: PolicyKind,
    /// Stage-1 half-width in ticks; derived from the price when unset.
    pub stage1_half_width: Option<i64>,
    /// Uniform samples per cell for the stage-1 training distribution.
    pub n_samples: usize,
    pub sigma_min: f64,
    /// Initial σ of per-mille heads.
    pub sigma_init_pct: f64,
    /// Initial σ of tick heads.
    pub sigma_init_ticks: f64,
    pub policy_gain: f64,
    pub hidden: usize,
    pub encoder: EncoderConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: PolicyKind::Halop { k: 3 },
            stage1_half_width: None,
            n_samples: 16,
            sigma_min: 1e-3,
            sigma_init_pct: 3.0,
            sigma_init_ticks: 1.0,
            policy_gain: 0.01,
            hidden: 32,
            encoder: EncoderConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PolicyKind::Halop { k } if k < 0 => {
                return Err(Error::Config(format!("stage-2 K must be >= 0, got {k}")))
            }
            PolicyKind::PpoSoftmax { half_width } if half_width < 1 => {
                return Err(Error::Config("softmax half-width must be >= 1".into()))
            }
            _ => {}
        }
        if let Some(m) = self.stage1_half_width {
            if m < 1 {
                return Err(Error::Config(format!("stage-1 half-width must be >= 1, got {m}")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        self.net_config().validate()
    }

    fn head(name: &str, rendition: Rendition, private: bool, output: HeadOutput) -> HeadSpec {
        HeadSpec {
            name: name.into(),
            rendition,
            private,
            output,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        use Rendition::*;
        let pct = HeadOutput::Gaussian {
            sigma_init: self.sigma_init_pct,
        };
        let heads = match self.kind {
            PolicyKind::Halop { .. } => vec![
                Self::head(ACTOR1, Standardized, false, pct),
                Self::head(
                    ACTOR2,
                    RawLog,
                    true,
                    HeadOutput::Gaussian {
                        sigma_init: self.sigma_init_ticks,
                    },
                ),
                Self::head(CRITIC1, Standardized, false, HeadOutput::Value),
                Self::head(CRITIC2, RawLog, true, HeadOutput::Value),
            ],
            PolicyKind::HalopStage1 | PolicyKind::PpoGaussian => vec![
                Self::head(ACTOR1, Standardized, true, pct),
                Self::head(CRITIC1, Standardized, true, HeadOutput::Value),
            ],
            PolicyKind::PpoSoftmax { half_width } => vec![
                Self::head(
                    ACTOR1,
                    Standardized,
                    true,
                    HeadOutput::Logits {
                        n: (2 * half_width + 1) as usize,
                    },
                ),
                Self::head(CRITIC1, Standardized, true, HeadOutput::Value),
            ],
        };
        NetConfig {
            encoder: self.encoder.clone(),
            hidden: self.hidden,
            sigma_min: self.sigma_min,
            policy_gain: self.policy_gain,
            heads,
        }
    }
}

const ACTOR1: &str = "actor1";
const ACTOR2: &str = "actor2";
const CRITIC1: &str = "critic1";
const CRITIC2: &str = "critic2";

/// Default stage-1 half-width: ticks within ±1% of the price, in [10, 200].
pub fn default_half_width(price_ticks: i64) -> i64 {
    (price_ticks / 100).clamp(10, 200)
}

/// Stage-1 action space: tick offsets and the matching per-mille grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Space {
    pub ticks: Vec<i64>,
    pub grid: LocationGrid,
    pub price_ticks: i64,
    /// Offsets below 1 − price were dropped.
    pub truncated: bool,
}

impl Stage1Space {
    /// Locations as fractions of the price.
    pub fn pct(&self) -> Vec<f64> {
        self.grid.locations().iter().map(|x| x / PRICE_SCALE).collect()
    }
}

pub fn build_stage1_grid(price_ticks: i64, tick_size: f64, half_width: i64) -> Result<Stage1Space> {
    if price_ticks < 1 {
        return Err(Error::InvalidArgument(format!(
            "current price must be at least one tick, got {price_ticks}"
        )));
    }
    if half_width < 1 {
        return Err(Error::InvalidArgument("half-width must be >= 1".into()));
    }
    if !(tick_size > 0.0) {
        return Err(Error::InvalidArgument("tick size must be positive".into()));
    }
    let lowest = (1 - price_ticks).max(-half_width);
    let ticks: Vec<i64> = (lowest..=half_width).collect();
    let grid = LocationGrid::new(
        ticks
            .iter()
            .map(|a| *a as f64 * PRICE_SCALE / price_ticks as f64)
            .collect(),
    )?;
    Ok(Stage1Space {
        ticks,
        grid,
        price_ticks,
        truncated: lowest > -half_width,
    })
}

/// Stage-2 offsets −K..K.
pub fn stage2_offsets(k: i64) -> Vec<i64> {
    (-k..=k).collect()
}

/// Keeps the limit price at one tick or more.
fn clamp_price(price_ticks: i64, offset: i64) -> (i64, bool) {
    let p = price_ticks + offset;
    if p < 1 {
        log::warn!("limit price {p} ticks clamped to 1 tick");
        (1, true)
    } else {
        (p, false)
    }
}

/// Everything the policy sees at one decision point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub public: PublicState,
    pub private: [f64; 3],
}

impl Observation {
    /// SHA-256 over both feature renditions and the private state, little-endian.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.public.standardized, &self.public.raw_log] {
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for x in &m.data {
                h.update(x.to_le_bytes());
            }
        }
        for x in &self.private {
            h.update(x.to_le_bytes());
        }
        h.update(self.public.current_price_ticks.to_le_bytes());
        h.update(self.public.tick_size.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActMode {
    /// Draw from the policy; the seed fixes both the estimator samples and
    /// the action draw.
    Sample { seed: u64 },
    /// Most probable action under the exact distributions, mean for Gaussians.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageChoice {
    pub params: GaussianParams,
    pub index: usize,
    pub log_prob: f64,
}

/// One emitted action with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Stage-1 (or only) choice.
    pub stage1: Option<StageChoice>,
    pub stage1_pct: Option<f64>,
    pub stage1_ticks: Option<i64>,
    pub stage1_truncated: bool,
    pub stage2: Option<StageChoice>,
    pub stage2_offset: Option<i64>,
    /// Final offset from the current price after clamping.
    pub offset_ticks: i64,
    pub limit_price_ticks: i64,
    pub clamped: bool,
    pub log_prob: f64,
    pub value: f64,
}

impl Decision {
    /// log π1 + log π2.
    pub fn joint_log_prob(&self) -> f64 {
        self.stage1.map_or(0.0, |c| c.log_prob) + self.stage2.map_or(0.0, |c| c.log_prob)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RecordedAction {
    Halop { i1: usize, i2: usize },
    Stage1 { i1: usize },
    Gaussian { x: f64 },
    Softmax { i: usize },
}

/// What PPO needs to re-evaluate a sampled action under new parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub standardized: Matrix,
    pub raw_log: Matrix,
    pub private: [f64; 3],
    pub price_ticks: i64,
    pub tick_size: f64,
    pub action: RecordedAction,
    pub sample_seed: u64,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

/// Derivatives of the caller's loss with respect to the evaluation outputs.
/// The value loss is `value_weight · (V − value_target)²` for every critic.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossWeights {
    pub d_log_prob: f64,
    pub d_entropy: f64,
    pub value_target: f64,
    pub value_weight: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    net: Network,
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).data[0]
}

fn seed1(v: f64) -> Matrix {
    Matrix::from_vec(1, 1, vec![v])
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = Network::new(config.net_config(), seed)?;
        Ok(Agent { config, net })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn kind(&self) -> PolicyKind {
        self.config.kind
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn store(&self) -> &ParameterStore {
        self.net.store()
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        self.net.store_mut()
    }

    pub fn window(&self) -> usize {
        self.config.encoder.window
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_network(
            &self.net,
            serde_json::to_value(&self.config)?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: AgentConfig = serde_json::from_value(ck.meta.clone())?;
        config.validate()?;
        if config.net_config() != ck.config {
            return Err(Error::Config(
                "checkpoint network does not match its agent configuration".into(),
            ));
        }
        Ok(Agent {
            config,
            net: ck.to_network()?,
        })
    }

    fn half_width(&self, price_ticks: i64) -> i64 {
        self.config
            .stage1_half_width
            .unwrap_or_else(|| default_half_width(price_ticks))
    }

    pub fn stage1_space(&self, price_ticks: i64, tick_size: f64) -> Result<Stage1Space> {
        build_stage1_grid(price_ticks, tick_size, self.half_width(price_ticks))
    }

    fn head(&self, name: &str) -> usize {
        self.net.head_index(name).expect("head present for policy kind")
    }

    fn stage1_dist(
        &self,
        space: &Stage1Space,
        params: GaussianParams,
        sample_seed: Option<u64>,
    ) -> Result<ScoredDist> {
        match sample_seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
                let positions = sample_positions(&space.grid, self.config.n_samples, &mut rng);
                disc_gaussian_sampled_at(&space.grid, params, &positions)
            }
            None => grid_dist_deterministic(GridFamily::Exact, &space.grid, params),
        }
    }

    fn params(g: &Graph, (mean, std): (Var, Var)) -> Result<GaussianParams> {
        GaussianParams::new(scalar(g, mean), scalar(g, std))
    }

    /// Chooses a limit price for the observation.
    pub fn act(&self, obs: &Observation, mode: ActMode) -> Result<(Decision, StepRecord)> {
        let public = &obs.public;
        let price = public.current_price_ticks;
        let tick = public.tick_size;
        let input = NetInput {
            standardized: &public.standardized,
            raw_log: &public.raw_log,
            private: obs.private,
        };
        let mut g = Graph::new(self.net.store());
        let outs = self.net.forward(&mut g, &input, None)?;
        let out = |name: &str| outs[self.head(name)].expect("head evaluated");
        let (sample_seed, mut draw) = match mode {
            ActMode::Sample { seed } => (
                Some(seed),
                Some(ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]))),
            ),
            ActMode::Greedy => (None, None),
        };
        let value_head = match self.config.kind {
            PolicyKind::Halop { .. } => CRITIC2,
            _ => CRITIC1,
        };
        let value = scalar(&g, out(value_head).value()?);

        let mut d = Decision {
            stage1: None,
            stage1_pct: None,
            stage1_ticks: None,
            stage1_truncated: false,
            stage2: None,
            stage2_offset: None,
            offset_ticks: 0,
            limit_price_ticks: price,
            clamped: false,
            log_prob: 0.0,
            value,
        };
        let action = match self.config.kind {
            PolicyKind::Halop { .. } | PolicyKind::HalopStage1 => {
                let space = self.stage1_space(price, tick)?;
                let p1 = Self::params(&g, out(ACTOR1).gaussian()?)?;
                let dist1 = self.stage1_dist(&space, p1, sample_seed)?;
                let i1 = match draw.as_mut() {
                    Some(rng) => dist1.dist().sample(rng),
                    None => dist1.dist().argmax(),
                };
                let a1 = space.ticks[i1];
                d.stage1 = Some(StageChoice {
                    params: p1,
                    index: i1,
                    log_prob: dist1.log_prob(i1),
                });
                d.stage1_pct = Some(space.grid.locations()[i1] / PRICE_SCALE);
                d.stage1_ticks = Some(a1);
                d.stage1_truncated = space.truncated;
                let mut offset = a1;
                let action = if let PolicyKind::Halop { k } = self.config.kind {
                    let offsets = stage2_offsets(k);
                    let (i2, choice) = if k == 0 {
                        (0, None)
                    } else {
                        let p2 = Self::params(&g, out(ACTOR2).gaussian()?)?;
                        let grid2 = LocationGrid::integers(-k, k)?;
                        let dist2 = grid_dist_deterministic(GridFamily::GSoftmax, &grid2, p2)?;
                        let i2 = match draw.as_mut() {
                            Some(rng) => dist2.dist().sample(rng),
                            None => dist2.dist().argmax(),
                        };
                        let lp = dist2.log_prob(i2);
                        (i2, Some(StageChoice { params: p2, index: i2, log_prob: lp }))
                    };
                    d.stage2 = choice;
                    d.stage2_offset = Some(offsets[i2]);
                    offset += offsets[i2];
                    RecordedAction::Halop { i1, i2 }
                } else {
                    RecordedAction::Stage1 { i1 }
                };
                d.offset_ticks = offset;
                action
            }
            PolicyKind::PpoGaussian => {
                let p = Self::params(&g, out(ACTOR1).gaussian()?)?;
                let gauss = Gaussian(p);
                let x = match draw.as_mut() {
                    Some(rng) => gauss.sample(rng),
                    None => p.mean,
                };
                d.stage1 = Some(StageChoice {
                    params: p,
                    index: 0,
                    log_prob: gauss.log_prob(x),
                });
                d.stage1_pct = Some(x / PRICE_SCALE);
                let ticks = ticks_from_pct(x / PRICE_SCALE, price as f64 * tick, tick)?;
                d.stage1_ticks = Some(ticks);
                d.offset_ticks = ticks;
                RecordedAction::Gaussian { x }
            }
            PolicyKind::PpoSoftmax { half_width } => {
                let logits = g.value(out(ACTOR1).logits()?).data.clone();
                let cat = Categorical::from_logits(&logits)?;
                let i = match draw.as_mut() {
                    Some(rng) => cat.dist().sample(rng),
                    None => cat.dist().argmax(),
                };
                d.stage1 = Some(StageChoice {
                    params: GaussianParams { mean: 0.0, std: 1.0 },
                    index: i,
                    log_prob: cat.log_prob(i),
                });
                d.offset_ticks = i as i64 - half_width;
                RecordedAction::Softmax { i }
            }
        };
        let (limit, clamped) = clamp_price(price, d.offset_ticks);
        d.limit_price_ticks = limit;
        d.clamped = clamped;
        d.offset_ticks = limit - price;
        d.log_prob = d.joint_log_prob();
        let record = StepRecord {
            standardized: public.standardized.clone(),
            raw_log: public.raw_log.clone(),
            private: obs.private,
            price_ticks: price,
            tick_size: tick,
            action,
            sample_seed: sample_seed.unwrap_or(0),
            log_prob: d.log_prob,
            value,
        };
        Ok((d, record))
    }

    /// Recomputes log-probability, entropy and value of a recorded action
    /// under the current parameters. With `grads`, also accumulates the
    /// gradient of the loss described by `weights(&evaluation)`.
    pub fn evaluate(
        &self,
        rec: &StepRecord,
        grads: Option<&mut Gradients>,
        weights: &dyn Fn(&Evaluation) -> LossWeights,
    ) -> Result<Evaluation> {
        let input = NetInput {
            standardized: &rec.standardized,
            raw_log: &rec.raw_log,
            private: rec.private,
        };
        let mut g = Graph::new(self.net.store());
        let outs = self.net.forward(&mut g, &input, None)?;
        let out = |name: &str| outs[self.head(name)].expect("head evaluated");

        let mut ev = Evaluation::default();
        // (var, dlogp/dvar, dH/dvar) per policy output
        let mut policy_terms: Vec<(Var, Matrix, Matrix)> = Vec::new();
        let critics: Vec<Var> = match self.config.kind {
            PolicyKind::Halop { .. } => vec![out(CRITIC2).value()?, out(CRITIC1).value()?],
            _ => vec![out(CRITIC1).value()?],
        };
        ev.value = scalar(&g, critics[0]);

        let mut gaussian_terms = |vars: (Var, Var), lp: f64, h: f64, glp: (f64, f64), gh: (f64, f64), ev: &mut Evaluation| {
            ev.log_prob += lp;
            ev.entropy += h;
            policy_terms.push((vars.0, seed1(glp.0), seed1(gh.0)));
            policy_terms.push((vars.1, seed1(glp.1), seed1(gh.1)));
        };
        match (self.config.kind, rec.action) {
            (PolicyKind::Halop { .. }, RecordedAction::Halop { i1, .. })
            | (PolicyKind::HalopStage1, RecordedAction::Stage1 { i1 }) => {
                let space = self.stage1_space(rec.price_ticks, rec.tick_size)?;
                let vars = out(ACTOR1).gaussian()?;
                let p1 = Self::params(&g, vars)?;
                let dist1 = self.stage1_dist(&space, p1, Some(rec.sample_seed))?;
                if i1 >= dist1.probs().len() {
                    return Err(Error::Training("recorded stage-1 index out of range".into()));
                }
                gaussian_terms(vars, dist1.log_prob(i1), dist1.entropy(), dist1.grad_log_prob(i1), dist1.grad_entropy(), &mut ev);
                if let (PolicyKind::Halop { k }, RecordedAction::Halop { i2, .. }) = (self.config.kind, rec.action) {
                    if k > 0 {
                        let vars2 = out(ACTOR2).gaussian()?;
                        let p2 = Self::params(&g, vars2)?;
                        let grid2 = LocationGrid::integers(-k, k)?;
                        let dist2 = grid_dist_deterministic(GridFamily::GSoftmax, &grid2, p2)?;
                        gaussian_terms(vars2, dist2.log_prob(i2), dist2.entropy(), dist2.grad_log_prob(i2), dist2.grad_entropy(), &mut ev);
                    }
                }
            }
            (PolicyKind::PpoGaussian, RecordedAction::Gaussian { x }) => {
                let vars = out(ACTOR1).gaussian()?;
                let gauss = Gaussian(Self::params(&g, vars)?);
                gaussian_terms(vars, gauss.log_prob(x), gauss.entropy(), gauss.grad_log_prob(x), gauss.grad_entropy(), &mut ev);
            }
            (PolicyKind::PpoSoftmax { .. }, RecordedAction::Softmax { i }) => {
                let var = out(ACTOR1).logits()?;
                let cat = Categorical::from_logits(&g.value(var).data)?;
                if i >= cat.dist().len() {
                    return Err(Error::Training("recorded softmax index out of range".into()));
                }
                ev.log_prob = cat.log_prob(i);
                ev.entropy = cat.entropy();
                policy_terms.push((
                    var,
                    Matrix::row_vector(cat.grad_log_prob(i)),
                    Matrix::row_vector(cat.grad_entropy()),
                ));
            }
            (kind, action) => {
                return Err(Error::Training(format!(
                    "recorded action {action:?} does not belong to policy {kind:?}"
                )))
            }
        }

        if let Some(grads) = grads {
            let w = weights(&ev);
            let mut seeds: Vec<(Var, Matrix)> = policy_terms
                .into_iter()
                .map(|(v, glp, gh)| {
                    let mut m = glp.map(|x| x * w.d_log_prob);
                    m.data.iter_mut().zip(&gh.data).for_each(|(a, b)| *a += w.d_entropy * b);
                    (v, m)
                })
                .collect();
            for c in critics {
                let v = scalar(&g, c);
                seeds.push((c, seed1(2.0 * w.value_weight * (v - w.value_target))));
            }
            g.backward(&seeds, grads)?;
        }
        Ok(ev)
    }
}
