//! Synthetic order-book days.
//!
//! The latent price follows a mean-reverting log walk around the day's anchor
//! price; the best bid is the latent price floored to the tick grid and the ask
//! sits `spread_ticks` above it (occasionally one tick wider). Displayed depth
//! is drawn per level around a configurable top-of-book size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{EpisodeData, EpisodeSpec, TickSnapshot, DEPTH};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub episode: EpisodeSpec,
    /// Anchor price of the day, in currency.
    pub base_price: f64,
    /// Standard deviation of the latent log-price innovation per snapshot, in bps.
    pub volatility_bps: f64,
    /// Fraction of the deviation from the anchor removed per snapshot.
    pub mean_reversion: f64,
    pub spread_ticks: u32,
    /// Probability that a snapshot shows a spread one tick wider.
    pub wide_spread_prob: f64,
    /// Mean displayed shares at the best level.
    pub top_depth_shares: f64,
    /// Relative depth increase per level away from the touch.
    pub depth_slope: f64,
    /// Log-normal dispersion of displayed volumes.
    pub depth_noise: f64,
    pub snapshot_seconds: f64,
    /// History snapshots before the mission start.
    pub warmup_snapshots: usize,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.base_price > 0.0) || !self.base_price.is_finite() {
            return bad("base price must be positive");
        }
        if !(self.volatility_bps >= 0.0) {
            return bad("volatility must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.mean_reversion) {
            return bad("mean reversion must lie in [0, 1]");
        }
        if self.spread_ticks < 1 {
            return bad("spread must be at least one tick");
        }
        if !(0.0..=1.0).contains(&self.wide_spread_prob) {
            return bad("wide-spread probability must lie in [0, 1]");
        }
        if !(self.top_depth_shares >= 1.0) || self.depth_slope < 0.0 || self.depth_noise < 0.0 {
            return bad("depth parameters must be positive");
        }
        if !(self.snapshot_seconds > 0.0) {
            return bad("snapshot interval must be positive");
        }
        if self.base_price / self.episode.tick_size < 2.0 * DEPTH as f64 + 2.0 {
            return bad("base price too close to zero for a five-level book");
        }
        Ok(())
    }

    pub fn mission_snapshots(&self) -> usize {
        (self.episode.mission_seconds() / self.snapshot_seconds).ceil() as usize
    }
}

/// Generates one day deterministically from `seed`.
pub fn generate_synthetic_day(params: &SynthParams, seed: u64) -> Result<EpisodeData> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tick = params.episode.tick_size;
    let anchor_ticks = params.base_price / tick;
    let vol = params.volatility_bps * 1e-4;
    let kappa = params.mean_reversion;
    let min_bid = DEPTH as i64 + 1;

    let total = params.warmup_snapshots + params.mission_snapshots() + 1;
    let mut snapshots = Vec::with_capacity(total);
    let mut log_dev = 0.0f64;
    let mut last: Option<i64> = None;
    let mut prev_bid: Option<i64> = None;

    for n in 0..total {
        if n > 0 {
            let eps: f64 = StandardNormal.sample(&mut rng);
            log_dev = (1.0 - kappa) * log_dev + vol * eps;
        }
        let latent = anchor_ticks * log_dev.exp();
        let bid = ((latent + 1e-9).floor() as i64).max(min_bid);
        let wide = rng.random::<f64>() < params.wide_spread_prob;
        let spread = params.spread_ticks as i64 + i64::from(wide);
        let ask = bid + spread;

        let mut draw_depth = |level: usize| -> u64 {
            let mean = params.top_depth_shares * (1.0 + params.depth_slope * level as f64);
            let z: f64 = StandardNormal.sample(&mut rng);
            let s = params.depth_noise;
            let v = mean * (s * z - 0.5 * s * s).exp();
            v.round().max(1.0) as u64
        };
        let bid_volumes: [u64; DEPTH] = std::array::from_fn(|i| draw_depth(i));
        let ask_volumes: [u64; DEPTH] = std::array::from_fn(|i| draw_depth(i));

        // tick rule: up-moves print at the ask, down-moves at the bid
        let traded = match (last, prev_bid) {
            (Some(_), Some(pb)) if bid > pb => ask,
            (Some(_), Some(pb)) if bid < pb => bid,
            (Some(l), _) => l.clamp(bid, ask),
            (None, _) => bid,
        };
        last = Some(traded);
        prev_bid = Some(bid);

        let time_offset =
            (n as f64 - params.warmup_snapshots as f64) * params.snapshot_seconds;
        snapshots.push(TickSnapshot {
            time_offset,
            last: traded,
            bid_prices: std::array::from_fn(|i| bid - i as i64),
            bid_volumes,
            ask_prices: std::array::from_fn(|i| ask + i as i64),
            ask_volumes,
        });
    }
    Ok(EpisodeData {
        spec: params.episode.clone(),
        snapshots,
    })
}

/// Traded volume per decision interval for a synthetic day: a U-shaped
/// intraday profile with multiplicative noise.
pub fn synth_volume_curve(horizon: usize, base_volume: f64, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|t| {
            let x = if horizon > 1 {
                2.0 * t as f64 / (horizon - 1) as f64 - 1.0
            } else {
                0.0
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            (base_volume * (1.0 + 0.8 * x * x) * (noise * z - 0.5 * noise * noise).exp()).round()
        })
        .collect()
}
