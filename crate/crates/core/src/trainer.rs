//! PPO over per-day batches of execution episodes.

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{ActMode, Agent, Evaluation, LossWeights, StepRecord};
use crate::error::{Error, Result};
use crate::lob::{DaySource, EpisodeData, OrderKind};
use crate::metrics::{compute_metrics, run_strategy, simulate, twap_schedule, MetricsReport, ScheduleKind, Strategy};
use crate::nets::{clip_grad_norm, Adam, Checkpoint, Gradients, Optimizer, ParameterStore};
use crate::rng::{derive_seed, stream};
use crate::sim::SettlementReport;

/// Samples per gradient chunk; chunks are summed in a fixed order so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub rounds: usize,
    pub normalize_advantages: bool,
    /// Rounds between evaluations on the held-out days; 0 disables them.
    pub eval_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 1.0,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 4,
            minibatch_size: 256,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            rounds: 100,
            normalize_advantages: true,
            eval_every: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return bad("epochs and minibatch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// What the update needs from a policy: parameters and a differentiable
/// re-evaluation of a stored step.
pub trait PpoPolicy: Sync {
    type Step: Sync;
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
    fn evaluate_step(
        &self,
        step: &Self::Step,
        grads: Option<&mut Gradients>,
        weights: &dyn Fn(&Evaluation) -> LossWeights,
    ) -> Result<Evaluation>;
}

impl PpoPolicy for Agent {
    type Step = StepRecord;

    fn store(&self) -> &ParameterStore {
        Agent::store(self)
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        Agent::store_mut(self)
    }

    fn evaluate_step(
        &self,
        step: &StepRecord,
        grads: Option<&mut Gradients>,
        weights: &dyn Fn(&Evaluation) -> LossWeights,
    ) -> Result<Evaluation> {
        self.evaluate(step, grads, weights)
    }
}

/// One training sample.
#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub step: S,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// GAE with reward only at the last step: r_t = 0 for t < T, r_T = `reward`,
/// and V after the last step is 0. Returns (advantages, value targets).
pub fn compute_advantages(values: &[f64], reward: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let r = if t + 1 == n { reward } else { 0.0 };
        let delta = r + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Shifts and scales to zero mean and unit population std. Batches of one
/// or with no spread are only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if n > 1 && std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

/// d(loss)/d(log π) of one sample's clipped surrogate, for a minibatch of
/// `n`. Zero where the clipped branch is the active minimum.
pub fn surrogate_weight(ratio: f64, advantage: f64, eps: f64, n: usize) -> f64 {
    let clipped = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    if clipped {
        0.0
    } else {
        -advantage * ratio / n as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of (r − 1) − ln r.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Largest |new − old| log-prob over the first minibatch pass.
    pub initial_log_ratio: f64,
    pub minibatches: usize,
    pub aborted: bool,
}

/// Accumulates the minibatch loss gradient into `grads` and returns the
/// minibatch statistics (unaveraged sums are divided by the batch size).
pub fn ppo_gradients<P: PpoPolicy>(
    policy: &P,
    batch: &[&Sample<P::Step>],
    config: &PpoConfig,
    grads: &mut Gradients,
) -> Result<UpdateStats> {
    let n = batch.len();
    let eps = config.clip_eps;
    let chunks: Vec<Result<(Gradients, UpdateStats)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = policy.store().zero_grads();
            let mut s = UpdateStats::default();
            for sample in chunk {
                let weights = |ev: &Evaluation| {
                    let ratio = (ev.log_prob - sample.old_log_prob).exp();
                    LossWeights {
                        d_log_prob: surrogate_weight(ratio, sample.advantage, eps, n),
                        d_entropy: -config.entropy_coef / n as f64,
                        value_target: sample.value_target,
                        value_weight: config.value_coef / n as f64,
                    }
                };
                let ev = policy.evaluate_step(&sample.step, Some(&mut g), &weights)?;
                let log_ratio = ev.log_prob - sample.old_log_prob;
                let ratio = log_ratio.exp();
                let a = sample.advantage;
                s.policy_loss -= (ratio * a).min(ratio.clamp(1.0 - eps, 1.0 + eps) * a);
                s.value_loss += (ev.value - sample.value_target).powi(2);
                s.entropy += ev.entropy;
                s.approx_kl += (ratio - 1.0) - log_ratio;
                s.clip_fraction += ((ratio - 1.0).abs() > eps) as u8 as f64;
                s.initial_log_ratio = s.initial_log_ratio.max(log_ratio.abs());
            }
            Ok((g, s))
        })
        .collect();
    let mut total = UpdateStats::default();
    for c in chunks {
        let (g, s) = c?;
        grads.add(&g);
        total.policy_loss += s.policy_loss;
        total.value_loss += s.value_loss;
        total.entropy += s.entropy;
        total.approx_kl += s.approx_kl;
        total.clip_fraction += s.clip_fraction;
        total.initial_log_ratio = total.initial_log_ratio.max(s.initial_log_ratio);
    }
    let nf = n as f64;
    total.policy_loss /= nf;
    total.value_loss /= nf;
    total.entropy /= nf;
    total.approx_kl /= nf;
    total.clip_fraction /= nf;
    total.minibatches = 1;
    Ok(total)
}

/// Runs `epochs` passes of shuffled minibatches over `samples`. If a loss or
/// gradient turns non-finite the parameters are restored and the update is
/// reported as aborted.
pub fn ppo_update<P: PpoPolicy, O: Optimizer, R: Rng>(
    policy: &mut P,
    optimizer: &mut O,
    samples: &[Sample<P::Step>],
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let backup = policy.store().data().to_vec();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch_size) {
            let batch: Vec<&Sample<P::Step>> = idx.iter().map(|&i| &samples[i]).collect();
            let mut grads = policy.store().zero_grads();
            let s = ppo_gradients(&*policy, &batch, config, &mut grads)?;
            let loss = s.policy_loss + config.value_coef * s.value_loss - config.entropy_coef * s.entropy;
            if !loss.is_finite() || !grads.is_finite() {
                log::error!("non-finite loss in PPO update, parameters restored");
                policy.store_mut().data_mut().copy_from_slice(&backup);
                stats.aborted = true;
                return Ok(stats);
            }
            let norm = clip_grad_norm(&mut grads, config.max_grad_norm);
            optimizer.step(policy.store_mut(), &grads);
            if epoch == 0 {
                stats.initial_log_ratio = stats.initial_log_ratio.max(if stats.minibatches == 0 {
                    s.initial_log_ratio
                } else {
                    0.0
                });
            }
            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.approx_kl += s.approx_kl;
            stats.clip_fraction += s.clip_fraction;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    stats.grad_norm /= m;
    Ok(stats)
}

/// One settled episode with everything the update needs.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub stock_id: String,
    pub day: NaiveDate,
    pub steps: Vec<StepRecord>,
    /// Terminal reward in bps.
    pub reward: f64,
    pub report: SettlementReport,
}

impl Trajectory {
    pub fn samples(&self, gamma: f64, lambda: f64) -> Vec<Sample<StepRecord>> {
        let values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let (adv, targets) = compute_advantages(&values, self.reward, gamma, lambda);
        self.steps
            .iter()
            .zip(adv.into_iter().zip(targets))
            .map(|(s, (a, v))| Sample {
                step: s.clone(),
                old_log_prob: s.log_prob,
                advantage: a,
                value_target: v,
            })
            .collect()
    }
}

/// Samples the agent through one episode under the TWAP schedule.
pub fn rollout_episode(agent: &Agent, episode: &EpisodeData, seed: u64) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(episode.spec.horizon);
    let report = simulate(episode, twap_schedule(episode.spec.horizon)?, agent.window(), |t, obs| {
        let (d, rec) = agent.act(obs, ActMode::Sample { seed: derive_seed(seed, &[t as u64]) })?;
        steps.push(rec);
        Ok(OrderKind::Limit { price_ticks: d.limit_price_ticks })
    })?;
    Ok(Trajectory {
        stock_id: episode.spec.stock_id.clone(),
        day: episode.spec.trading_day,
        steps,
        reward: report.reward_bps,
        report,
    })
}

/// Parallel rollout of every episode of `day`; failures are logged and
/// skipped. Episode `i` uses the stream `derive_seed(seed, [i])`.
pub fn rollout_day(agent: &Agent, source: &dyn DaySource, day: NaiveDate, seed: u64) -> Result<Vec<Trajectory>> {
    let episodes = source.episodes(day)?;
    let out: Vec<Option<Trajectory>> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| match rollout_episode(agent, ep, derive_seed(seed, &[i as u64])) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("skipping {} {}: {e}", ep.spec.stock_id, ep.spec.trading_day);
                None
            }
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: usize,
    pub train_day: NaiveDate,
    pub episodes: usize,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub eval_return: Option<f64>,
    pub eval_pnl: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    /// Round, held-out metrics and parameters of the best evaluation by PnL.
    pub best: Option<(usize, MetricsReport, Checkpoint)>,
    pub final_checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.curve {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the greedy agent on `days` against the market-order benchmark.
pub fn evaluate_agent(agent: &Agent, source: &dyn DaySource, days: &[NaiveDate]) -> Result<MetricsReport> {
    let results = run_strategy(Strategy::Policy(agent), source, days, ScheduleKind::Twap)?;
    compute_metrics(&results)
}

/// Trains `agent` in place. Each round samples one training day, rolls out
/// all its episodes and runs one PPO update on them.
pub fn train(agent: &mut Agent, source: &dyn DaySource, config: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let train_days = source.train_days();
    let eval_days = source.eval_days();
    if train_days.is_empty() {
        return Err(Error::Training("no training days".into()));
    }
    if let Some(d) = train_days.iter().find(|d| eval_days.contains(d)) {
        return Err(Error::Training(format!("{d} is both a training and an evaluation day")));
    }
    let mut optimizer = Adam::new(config.learning_rate);
    let mut day_rng = stream(seed, &[0]);
    let mut curve = Vec::with_capacity(config.rounds);
    let mut best: Option<(usize, MetricsReport, Checkpoint)> = None;

    for round in 1..=config.rounds {
        let day = train_days[day_rng.random_range(0..train_days.len())];
        let trajectories = rollout_day(agent, source, day, derive_seed(seed, &[1, round as u64]))?;
        if trajectories.is_empty() {
            log::warn!("round {round}: no usable episodes on {day}");
            continue;
        }
        let mean_reward = trajectories.iter().map(|t| t.reward).sum::<f64>() / trajectories.len() as f64;
        let mut samples: Vec<Sample<StepRecord>> = trajectories
            .iter()
            .flat_map(|t| t.samples(config.gamma, config.lambda))
            .collect();
        if config.normalize_advantages {
            let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
            normalize_advantages(&mut adv);
            samples.iter_mut().zip(adv).for_each(|(s, a)| s.advantage = a);
        }
        let mut rng = stream(seed, &[2, round as u64]);
        let stats = ppo_update(agent, &mut optimizer, &samples, config, &mut rng)?;
        let mut row = CurveRow {
            round,
            train_day: day,
            episodes: trajectories.len(),
            mean_reward,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            value_loss: stats.value_loss,
            eval_return: None,
            eval_pnl: None,
        };
        let eval_now = config.eval_every > 0 && (round % config.eval_every == 0 || round == config.rounds);
        if eval_now && eval_days.len() > 0 {
            match evaluate_agent(agent, source, &eval_days) {
                Ok(m) => {
                    row.eval_return = Some(m.return_bps);
                    row.eval_pnl = Some(m.pnl_bps);
                    if best.as_ref().is_none_or(|(_, b, _)| m.pnl_bps > b.pnl_bps) {
                        best = Some((round, m, agent.to_checkpoint()?));
                    }
                }
                Err(e) => log::warn!("round {round}: evaluation failed: {e}"),
            }
        }
        log::info!(
            "round {round} day {day}: reward {mean_reward:.3} bps, kl {:.4}, clip {:.3}, entropy {:.3}",
            stats.approx_kl,
            stats.clip_fraction,
            stats.entropy
        );
        curve.push(row);
    }
    Ok(TrainOutcome {
        curve,
        best,
        final_checkpoint: agent.to_checkpoint()?,
    })
}
