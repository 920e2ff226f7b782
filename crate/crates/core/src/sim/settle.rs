//! Benchmark prices and terminal reward.

use serde::{Deserialize, Serialize};

use super::fill::{execute_window, walk_book, Execution};
use crate::error::{Error, Result};
use crate::lob::{Direction, EpisodeData, Fill, FillChunk, VolumeSchedule};

/// Terminal settlement of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub direction: Direction,
    pub fills: Vec<Fill>,
    /// Δ_T, executed by the closing market order.
    pub final_deficit: f64,
    /// p̃_{-1}; `None` when Δ_T = 0.
    pub final_market_price: Option<f64>,
    /// p*_1..p*_T in currency.
    pub benchmark_prices: Vec<f64>,
    /// Σ v*_t p*_t.
    pub benchmark_notional: f64,
    /// Σ ṽ_t p̃_t + Δ_T p̃_{-1}.
    pub execution_notional: f64,
    /// Reward in fraction·currency units.
    pub reward_raw: f64,
    /// Reward in basis points of the benchmark notional.
    pub reward_bps: f64,
    /// Σ v_t over submitted orders.
    pub submitted_volume: f64,
    /// Δ_T + Σ v_t > 2, i.e. more than half of the submitted volume cancelled.
    pub cancellation_violation: bool,
}

fn shares_of(episode: &EpisodeData, volume: f64) -> f64 {
    volume * episode.spec.inventory_shares
}

fn window_bounds(episode: &EpisodeData, t: usize) -> (f64, f64) {
    let spec = &episode.spec;
    let start = (t - 1) as f64 * spec.step_seconds;
    (start + spec.latency_seconds, start + spec.step_seconds)
}

/// In-window market execution of `volume`; anything the window cannot absorb
/// is priced at the deepest level of the last snapshot in effect.
pub(crate) fn market_execution(
    episode: &EpisodeData,
    direction: Direction,
    t: usize,
    volume: f64,
) -> Execution {
    let (arrival, end) = window_bounds(episode, t);
    let shares = shares_of(episode, volume);
    let mut exec = execute_window(episode, direction, None, shares, arrival, end);
    let missing = shares - exec.filled_shares;
    if missing > 1e-9 * shares.max(1.0) {
        let last = episode
            .snapshot_at(end - 1e-9)
            .unwrap_or(episode.snapshots.len() - 1);
        let (prices, _) = episode.snapshots[last].opposite_side(direction);
        let price = prices[prices.len() - 1];
        exec.filled_shares += missing;
        exec.cost_ticks += missing * price as f64;
        exec.chunks.push(FillChunk {
            snapshot: last,
            price_ticks: price,
            shares: missing,
        });
    }
    exec
}

/// p*_t: average price a market order for v*_t obtains at step `t` under the
/// simulator's fill model and latency.
pub fn benchmark_price(
    episode: &EpisodeData,
    schedule: &VolumeSchedule,
    t: usize,
    direction: Direction,
) -> Result<f64> {
    if t == 0 || t > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside 1..={}",
            schedule.len()
        )));
    }
    let v = schedule.target(t);
    if v <= 0.0 {
        // no target volume: quote the touch at arrival
        let (arrival, _) = window_bounds(episode, t);
        let idx = episode.snapshot_at(arrival).ok_or_else(|| {
            Error::Sim(format!("no snapshot in effect at step {t}"))
        })?;
        let (prices, _) = episode.snapshots[idx].opposite_side(direction);
        return Ok(prices[0] as f64 * episode.spec.tick_size);
    }
    let exec = market_execution(episode, direction, t, v);
    Ok(exec.avg_price_ticks().unwrap_or(0.0) * episode.spec.tick_size)
}

/// Price of the closing market order for `volume` at the end of the mission.
pub fn final_market_price(
    episode: &EpisodeData,
    direction: Direction,
    volume: f64,
) -> Option<f64> {
    if volume <= 0.0 {
        return None;
    }
    let idx = episode
        .snapshot_at(episode.spec.mission_seconds())
        .unwrap_or(episode.snapshots.len() - 1);
    walk_book(episode, idx, direction, shares_of(episode, volume))
        .avg_price_ticks()
        .map(|p| p * episode.spec.tick_size)
}

/// R = D·[Σ v*_t p*_t − (Σ ṽ_t p̃_t + Δ_T p̃_{-1})], returned raw and in bps of
/// the benchmark notional.
pub fn execution_reward(
    direction: Direction,
    benchmark: &[(f64, f64)],
    executions: &[(f64, f64)],
    final_deficit: f64,
    final_price: f64,
) -> (f64, f64) {
    let bench: f64 = benchmark.iter().map(|(v, p)| v * p).sum();
    let exec: f64 = executions.iter().map(|(v, p)| v * p).sum::<f64>() + final_deficit * final_price;
    let raw = direction.sign() * (bench - exec);
    let bps = if bench > 0.0 { raw / bench * 1e4 } else { 0.0 };
    (raw, bps)
}

/// Settles a finished episode from its per-step fills.
pub fn settle(
    fills: &[Fill],
    episode: &EpisodeData,
    schedule: &VolumeSchedule,
    direction: Direction,
) -> Result<SettlementReport> {
    let horizon = schedule.len();
    if fills.len() != horizon {
        return Err(Error::Sim(format!(
            "settlement needs {horizon} fills, got {}",
            fills.len()
        )));
    }
    let mut benchmark_prices = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        benchmark_prices.push(benchmark_price(episode, schedule, t, direction)?);
    }
    let executed: f64 = fills.iter().map(|f| f.executed_volume).sum();
    let final_deficit = fills
        .last()
        .map(|f| f.order_volume - f.executed_volume)
        .unwrap_or(0.0)
        .max(0.0);
    let final_market_price = final_market_price(episode, direction, final_deficit);
    let bench: Vec<(f64, f64)> = schedule
        .targets()
        .iter()
        .copied()
        .zip(benchmark_prices.iter().copied())
        .collect();
    let execs: Vec<(f64, f64)> = fills
        .iter()
        .map(|f| (f.executed_volume, f.avg_price.unwrap_or(0.0)))
        .collect();
    let (reward_raw, reward_bps) = execution_reward(
        direction,
        &bench,
        &execs,
        final_deficit,
        final_market_price.unwrap_or(0.0),
    );
    let submitted_volume: f64 = fills.iter().map(|f| f.order_volume).sum();
    debug_assert!((executed + final_deficit - 1.0).abs() < 1e-6);
    Ok(SettlementReport {
        direction,
        fills: fills.to_vec(),
        final_deficit,
        final_market_price,
        benchmark_notional: bench.iter().map(|(v, p)| v * p).sum(),
        execution_notional: execs.iter().map(|(v, p)| v * p).sum::<f64>()
            + final_deficit * final_market_price.unwrap_or(0.0),
        benchmark_prices,
        reward_raw,
        reward_bps,
        submitted_volume,
        cancellation_violation: final_deficit + submitted_volume > 2.0,
    })
}
