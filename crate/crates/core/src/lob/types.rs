use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of displayed book levels per side.
pub const DEPTH: usize = 5;

/// One market observation with prices in tick units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    /// Seconds from the episode start; negative for warm-up history.
    pub time_offset: f64,
    pub last: i64,
    pub bid_prices: [i64; DEPTH],
    pub bid_volumes: [u64; DEPTH],
    pub ask_prices: [i64; DEPTH],
    pub ask_volumes: [u64; DEPTH],
}

impl TickSnapshot {
    pub fn best_bid(&self) -> i64 {
        self.bid_prices[0]
    }

    pub fn best_ask(&self) -> i64 {
        self.ask_prices[0]
    }

    /// Book side a taker of `direction` trades against: asks for buys, bids for sells.
    pub fn opposite_side(&self, direction: Direction) -> ([i64; DEPTH], [u64; DEPTH]) {
        match direction {
            Direction::Buy => (self.ask_prices, self.ask_volumes),
            Direction::Sell => (self.bid_prices, self.bid_volumes),
        }
    }

    /// Converts back to currency units.
    pub fn to_raw(&self, tick_size: f64) -> RawSnapshot {
        let px = |t: i64| t as f64 * tick_size;
        RawSnapshot {
            time_offset: self.time_offset,
            last: px(self.last),
            bid_prices: self.bid_prices.map(px),
            bid_volumes: self.bid_volumes.map(|v| v as f64),
            ask_prices: self.ask_prices.map(px),
            ask_volumes: self.ask_volumes.map(|v| v as f64),
        }
    }
}

/// A snapshot in currency units, as read from or written to files.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSnapshot {
    pub time_offset: f64,
    pub last: f64,
    pub bid_prices: [f64; DEPTH],
    pub bid_volumes: [f64; DEPTH],
    pub ask_prices: [f64; DEPTH],
    pub ask_volumes: [f64; DEPTH],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Buy,
    Sell,
}

impl Direction {
    /// The multiplier D: +1 for buying, -1 for selling.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Buy => 1.0,
            Direction::Sell => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Buy => Direction::Sell,
            Direction::Sell => Direction::Buy,
        }
    }
}

/// One (stock, trading day) execution mission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub stock_id: String,
    pub trading_day: NaiveDate,
    pub tick_size: f64,
    /// Number of decision steps T.
    pub horizon: usize,
    pub step_seconds: f64,
    pub direction: Direction,
    pub latency_seconds: f64,
    /// Largest fraction of the total inventory a single order may execute.
    pub order_cap: f64,
    /// Shares corresponding to a volume fraction of 1.
    pub inventory_shares: f64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tick size must be positive, got {}",
                self.tick_size
            )));
        }
        if !(self.order_cap > 0.0 && self.order_cap <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "order cap must lie in (0, 1], got {}",
                self.order_cap
            )));
        }
        if !(self.step_seconds > 0.0) || self.latency_seconds < 0.0 {
            return Err(Error::InvalidArgument(
                "step length must be positive and latency non-negative".into(),
            ));
        }
        if self.latency_seconds >= self.step_seconds {
            return Err(Error::InvalidArgument(
                "latency must be shorter than one step".into(),
            ));
        }
        if !(self.inventory_shares > 0.0) {
            return Err(Error::InvalidArgument("inventory must be positive".into()));
        }
        Ok(())
    }

    pub fn mission_seconds(&self) -> f64 {
        self.horizon as f64 * self.step_seconds
    }
}

/// An episode's specification together with its snapshot stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeData {
    pub spec: EpisodeSpec,
    pub snapshots: Vec<TickSnapshot>,
}

impl EpisodeData {
    /// Index of the snapshot in effect at `time`: the latest one not after it.
    pub fn snapshot_at(&self, time: f64) -> Option<usize> {
        let n = self.snapshots.partition_point(|s| s.time_offset <= time);
        n.checked_sub(1)
    }

    /// Last traded price at the end of the mission window, in currency.
    pub fn close_price(&self) -> f64 {
        let idx = self
            .snapshot_at(self.spec.mission_seconds())
            .unwrap_or(self.snapshots.len().saturating_sub(1));
        self.snapshots
            .get(idx)
            .map(|s| s.last as f64 * self.spec.tick_size)
            .unwrap_or(0.0)
    }

    pub fn price_band(&self) -> PriceBand {
        PriceBand::of(self.close_price())
    }
}

/// Close-price grouping used by the grouping study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceBand {
    Low,
    Medium,
    High,
}

impl PriceBand {
    pub const LOW_CEILING: f64 = 10.0;
    pub const HIGH_FLOOR: f64 = 50.0;

    /// Low is strictly below 10.00, high strictly above 50.00.
    pub fn of(price: f64) -> Self {
        if price < Self::LOW_CEILING {
            PriceBand::Low
        } else if price > Self::HIGH_FLOOR {
            PriceBand::High
        } else {
            PriceBand::Medium
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriceBand::Low => "low",
            PriceBand::Medium => "medium",
            PriceBand::High => "high",
        }
    }
}

/// Target execution fractions v*_1..v*_T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSchedule {
    targets: Vec<f64>,
}

impl VolumeSchedule {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(targets: Vec<f64>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("schedule must not be empty".into()));
        }
        if let Some(v) = targets.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule entries must be finite and non-negative, got {v}"
            )));
        }
        let sum: f64 = targets.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "schedule must sum to 1, got {sum}"
            )));
        }
        Ok(Self { targets })
    }

    /// Even split over `horizon` steps.
    pub fn twap(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Self::new(vec![1.0 / horizon as f64; horizon])
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// v*_t for 1-based `t`.
    pub fn target(&self, t: usize) -> f64 {
        self.targets[t - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OrderKind {
    Limit { price_ticks: i64 },
    Market,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    /// 1-based decision step.
    pub step: usize,
    pub kind: OrderKind,
    /// Fraction of total inventory.
    pub volume: f64,
}

impl Order {
    pub fn limit(step: usize, price_ticks: i64, volume: f64) -> Self {
        Order {
            step,
            kind: OrderKind::Limit { price_ticks },
            volume,
        }
    }

    pub fn market(step: usize, volume: f64) -> Self {
        Order {
            step,
            kind: OrderKind::Market,
            volume,
        }
    }
}

/// A piece of an execution: shares taken from one level of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillChunk {
    pub snapshot: usize,
    pub price_ticks: i64,
    pub shares: f64,
}

/// Outcome of one order at the end of its window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    /// Submitted volume v_t (before the size cap).
    pub order_volume: f64,
    /// Executed volume ṽ_t.
    pub executed_volume: f64,
    /// Average execution price p̃_t in currency; `None` when nothing executed.
    pub avg_price: Option<f64>,
    pub cancelled_volume: f64,
    pub chunks: Vec<FillChunk>,
}

impl Fill {
    /// Executed notional ṽ_t·p̃_t in fraction·currency units.
    pub fn notional(&self) -> f64 {
        self.avg_price
            .map(|p| p * self.executed_volume)
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twap_sums_to_one() {
        for t in [1, 2, 3, 7, 90, 997, 10_000] {
            let s = VolumeSchedule::twap(t).unwrap();
            let sum: f64 = s.targets().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "T={t} sum={sum}");
        }
        assert_eq!(VolumeSchedule::twap(1).unwrap().targets(), &[1.0]);
    }

    #[test]
    fn schedule_rejects_bad_sums() {
        assert!(VolumeSchedule::new(vec![0.5, 0.4]).is_err());
        assert!(VolumeSchedule::new(vec![1.5, -0.5]).is_err());
        assert!(VolumeSchedule::new(vec![]).is_err());
    }

    #[test]
    fn band_thresholds_are_strict() {
        assert_eq!(PriceBand::of(9.99), PriceBand::Low);
        assert_eq!(PriceBand::of(10.00), PriceBand::Medium);
        assert_eq!(PriceBand::of(50.00), PriceBand::Medium);
        assert_eq!(PriceBand::of(50.01), PriceBand::High);
    }
}
