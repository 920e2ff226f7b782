//! Replay execution environment.
//!
//! Each decision step t = 1..T covers `step_seconds`. An order submitted at
//! the step start becomes active after the latency, may execute at most
//! `min(v_t, order_cap)` of the inventory, and anything unfilled at the step
//! end is cancelled and carried into the next step's catch-up volume. After
//! step T any remaining deficit is executed by a market order.

mod features;
pub(crate) mod fill;
mod settle;

pub use features::{public_state, raw_log, standardize, PublicState, FEATURES, PRICE_SCALE};
pub use fill::{execute_window, walk_book, Execution};
pub use settle::{
    benchmark_price, execution_reward, final_market_price, settle, SettlementReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{EpisodeData, Fill, Order, OrderKind, VolumeSchedule};

/// Tolerance when checking a submitted volume against the catch-up volume.
pub const VOLUME_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Snapshots per public-state window.
    pub window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { window: 16 }
    }
}

/// Private execution status at the start of step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// 1-based step about to be decided; T + 1 once finished.
    pub t: usize,
    pub horizon: usize,
    /// 1 − Σ_{τ<t} ṽ_τ.
    pub remaining_inventory: f64,
    /// Δ_{t−1}.
    pub deficit: f64,
    /// 1 − t/T.
    pub remaining_time: f64,
    /// Snapshot in effect at the step start.
    pub cursor: usize,
    pub done: bool,
}

impl SimState {
    /// (remaining inventory, deficit, remaining time fraction).
    pub fn private_features(&self) -> [f64; 3] {
        [self.remaining_inventory, self.deficit, self.remaining_time]
    }
}

/// v_t = v*_t + Δ_{t−1}.
pub fn catch_up_volume(state: &SimState, schedule: &VolumeSchedule) -> f64 {
    schedule.target(state.t) + state.deficit
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub public: PublicState,
    pub state: SimState,
    pub fill: Fill,
    pub done: bool,
}

/// One episode's environment. Borrowing the episode keeps rollouts cheap;
/// instances share nothing mutable.
#[derive(Clone, Debug)]
pub struct MarketSim<'a> {
    episode: &'a EpisodeData,
    schedule: VolumeSchedule,
    config: SimConfig,
    state: SimState,
    fills: Vec<Fill>,
}

impl<'a> MarketSim<'a> {
    pub fn new(episode: &'a EpisodeData, schedule: VolumeSchedule, config: SimConfig) -> Result<Self> {
        let spec = &episode.spec;
        spec.validate()?;
        if schedule.len() != spec.horizon {
            return Err(Error::Sim(format!(
                "schedule has {} steps, episode horizon is {}",
                schedule.len(),
                spec.horizon
            )));
        }
        if config.window == 0 {
            return Err(Error::InvalidArgument("window must be positive".into()));
        }
        let first = episode
            .snapshots
            .first()
            .ok_or_else(|| Error::Sim("episode has no snapshots".into()))?;
        let last = episode.snapshots.last().unwrap();
        let last_arrival = (spec.horizon - 1) as f64 * spec.step_seconds + spec.latency_seconds;
        if first.time_offset > 0.0 || last.time_offset < last_arrival {
            return Err(Error::Sim(format!(
                "snapshots cover [{}, {}] but the mission needs [0, {last_arrival}]",
                first.time_offset, last.time_offset
            )));
        }
        let state = Self::initial_state(episode);
        Ok(MarketSim {
            episode,
            schedule,
            config,
            state,
            fills: Vec::new(),
        })
    }

    fn initial_state(episode: &EpisodeData) -> SimState {
        let horizon = episode.spec.horizon;
        SimState {
            t: 1,
            horizon,
            remaining_inventory: 1.0,
            deficit: 0.0,
            remaining_time: 1.0 - 1.0 / horizon as f64,
            cursor: episode.snapshot_at(0.0).unwrap_or(0),
            done: false,
        }
    }

    pub fn episode(&self) -> &'a EpisodeData {
        self.episode
    }

    pub fn schedule(&self) -> &VolumeSchedule {
        &self.schedule
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn fills(&self) -> &[Fill] {
        &self.fills
    }

    /// Restarts the episode at t = 1.
    pub fn reset(&mut self) -> (PublicState, SimState) {
        self.state = Self::initial_state(self.episode);
        self.fills.clear();
        (self.public_state(), self.state.clone())
    }

    pub fn public_state(&self) -> PublicState {
        public_state(self.episode, self.state.cursor, self.config.window)
    }

    /// Volume the next order must carry.
    pub fn order_volume(&self) -> f64 {
        catch_up_volume(&self.state, &self.schedule)
    }

    pub fn step(&mut self, order: Order) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::Sim("episode already finished".into()));
        }
        let t = self.state.t;
        if order.step != t {
            return Err(Error::Sim(format!(
                "order for step {} submitted at step {t}",
                order.step
            )));
        }
        let v_t = self.order_volume();
        if (order.volume - v_t).abs() > VOLUME_TOLERANCE {
            return Err(Error::Sim(format!(
                "order volume {} differs from catch-up volume {v_t}",
                order.volume
            )));
        }
        if let OrderKind::Limit { price_ticks } = order.kind {
            if price_ticks <= 0 {
                return Err(Error::InvalidArgument(format!(
                    "limit price must be positive, got {price_ticks} ticks"
                )));
            }
        }
        let spec = &self.episode.spec;
        let executable = v_t.min(spec.order_cap);
        let start = (t - 1) as f64 * spec.step_seconds;
        let arrival = start + spec.latency_seconds;
        let end = start + spec.step_seconds;
        let shares = executable * spec.inventory_shares;
        // market orders take the same path as the benchmark, including overflow
        let exec = match order.kind {
            OrderKind::Limit { price_ticks } => execute_window(
                self.episode,
                spec.direction,
                Some(price_ticks),
                shares,
                arrival,
                end,
            ),
            OrderKind::Market => settle::market_execution(self.episode, spec.direction, t, executable),
        };
        let executed_volume = if exec.filled_shares >= shares * (1.0 - 1e-12) {
            executable
        } else {
            exec.filled_shares / spec.inventory_shares
        };
        let fill = Fill {
            order_volume: v_t,
            executed_volume,
            avg_price: exec.avg_price_ticks().map(|p| p * spec.tick_size),
            cancelled_volume: v_t - executed_volume,
            chunks: exec.chunks,
        };
        self.fills.push(fill.clone());

        let horizon = spec.horizon;
        self.state.deficit = (v_t - executed_volume).max(0.0);
        self.state.remaining_inventory = (self.state.remaining_inventory - executed_volume).max(0.0);
        self.state.t = t + 1;
        self.state.remaining_time = 1.0 - (t + 1) as f64 / horizon as f64;
        let done = t == horizon;
        self.state.done = done;
        if !done {
            self.state.cursor = self
                .episode
                .snapshot_at(end)
                .unwrap_or(self.state.cursor);
        }
        Ok(StepOutcome {
            public: self.public_state(),
            state: self.state.clone(),
            fill,
            done,
        })
    }

    /// Settles a finished episode.
    pub fn settle(&self) -> Result<SettlementReport> {
        if !self.state.done {
            return Err(Error::Sim("episode not finished".into()));
        }
        settle(
            &self.fills,
            self.episode,
            &self.schedule,
            self.episode.spec.direction,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fill::tests::{episode, snap};
    use super::*;
    use crate::lob::{Direction, EpisodeData};

    /// Flat book: bid 1000, ask 1001, snapshots every 3 s over `horizon` minutes.
    fn flat(horizon: usize) -> EpisodeData {
        let n = horizon * 20 + 1;
        episode(
            (0..n)
                .map(|i| snap(i as f64 * 3.0, 1000, 1001, [500; 5], [500; 5]))
                .collect(),
            horizon,
        )
    }

    #[test]
    fn reset_state_and_purity() {
        let ep = flat(90);
        let mut sim = MarketSim::new(&ep, VolumeSchedule::twap(90).unwrap(), SimConfig::default()).unwrap();
        let (p1, s1) = sim.reset();
        assert_eq!(s1.t, 1);
        assert_eq!(s1.deficit, 0.0);
        assert_eq!(s1.remaining_inventory, 1.0);
        assert!((s1.remaining_time - (1.0 - 1.0 / 90.0)).abs() < 1e-15);
        let (p2, s2) = sim.reset();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn ninety_steps_then_done() {
        let ep = flat(90);
        let mut sim = MarketSim::new(&ep, VolumeSchedule::twap(90).unwrap(), SimConfig::default()).unwrap();
        sim.reset();
        let mut steps = 0;
        loop {
            let t = sim.state().t;
            let out = sim.step(Order::market(t, sim.order_volume())).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 90);
        assert!(sim.step(Order::market(91, 0.0)).is_err());
    }

    #[test]
    fn catch_up_examples() {
        let ep = flat(90);
        let sched = VolumeSchedule::twap(90).unwrap();
        let mut sim = MarketSim::new(&ep, sched.clone(), SimConfig::default()).unwrap();
        sim.reset();
        // never-marketable buy at 999: nothing fills
        let out = sim.step(Order::limit(1, 999, sim.order_volume())).unwrap();
        assert_eq!(out.fill.executed_volume, 0.0);
        assert_eq!(out.fill.cancelled_volume, 1.0 / 90.0);
        assert!((catch_up_volume(&out.state, &sched) - 2.0 / 90.0).abs() < 1e-15);

        let two = VolumeSchedule::new(vec![0.5, 0.5]).unwrap();
        let state = SimState {
            t: 2,
            horizon: 2,
            remaining_inventory: 0.8,
            deficit: 0.5 - 0.2,
            remaining_time: 0.0,
            cursor: 0,
            done: false,
        };
        assert!((catch_up_volume(&state, &two) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn always_filled_means_no_deficit() {
        let ep = flat(10);
        let sched = VolumeSchedule::twap(10).unwrap();
        let mut sim = MarketSim::new(&ep, sched.clone(), SimConfig::default()).unwrap();
        sim.reset();
        for t in 1..=10 {
            assert_eq!(sim.order_volume(), sched.target(t));
            sim.step(Order::market(t, sim.order_volume())).unwrap();
        }
        let report = sim.settle().unwrap();
        assert_eq!(report.final_deficit, 0.0);
        assert_eq!(report.reward_bps, 0.0);
    }

    #[test]
    fn cap_limits_execution() {
        let ep = flat(2);
        let sched = VolumeSchedule::new(vec![0.15, 0.85]).unwrap();
        let mut sim = MarketSim::new(&ep, sched, SimConfig::default()).unwrap();
        sim.reset();
        let out = sim.step(Order::market(1, 0.15)).unwrap();
        assert!(out.fill.executed_volume <= 0.1);
        assert!(out.fill.cancelled_volume >= 0.05 - 1e-15);
        assert!((out.state.deficit - 0.05).abs() < 1e-15);
    }

    #[test]
    fn mismatched_volume_and_step_are_rejected() {
        let ep = flat(3);
        let mut sim = MarketSim::new(&ep, VolumeSchedule::twap(3).unwrap(), SimConfig::default()).unwrap();
        sim.reset();
        assert!(sim.step(Order::market(1, 0.5)).is_err());
        assert!(sim.step(Order::market(2, 1.0 / 3.0)).is_err());
        assert!(sim.step(Order::limit(1, 0, 1.0 / 3.0)).is_err());
        assert!(sim.settle().is_err());
    }

    #[test]
    fn insufficient_snapshots_fail() {
        let ep = flat(2);
        assert!(MarketSim::new(&ep, VolumeSchedule::twap(5).unwrap(), SimConfig::default()).is_err());
        let mut short = flat(5);
        short.snapshots.truncate(30);
        assert!(MarketSim::new(&short, VolumeSchedule::twap(5).unwrap(), SimConfig::default()).is_err());
    }

    #[test]
    fn benchmark_prices() {
        let mut ep = episode(
            (0..21)
                .map(|i| snap(i as f64 * 3.0, 1000, 1001, [100, 200, 300, 400, 500], [100, 200, 300, 400, 500]))
                .collect(),
            1,
        );
        let sched = VolumeSchedule::twap(1).unwrap();
        // 50 shares: inside the touch
        ep.spec.inventory_shares = 50.0;
        let p = benchmark_price(&ep, &sched, 1, Direction::Buy).unwrap();
        assert!((p - 10.01).abs() < 1e-12);
        // 150 shares: two levels
        ep.spec.inventory_shares = 150.0;
        let p = benchmark_price(&ep, &sched, 1, Direction::Buy).unwrap();
        assert!((p - (100.0 * 10.01 + 50.0 * 10.02) / 150.0).abs() < 1e-12);
        let p = benchmark_price(&ep, &sched, 1, Direction::Sell).unwrap();
        assert!((p - (100.0 * 10.00 + 50.0 * 9.99) / 150.0).abs() < 1e-12);
    }

    #[test]
    fn settlement_formula_examples() {
        // fills one tick under every benchmark on a 10.00 stock → +10 bps
        let bench: Vec<(f64, f64)> = (0..4).map(|_| (0.25, 10.00)).collect();
        let execs: Vec<(f64, f64)> = (0..4).map(|_| (0.25, 9.99)).collect();
        let (raw, bps) = execution_reward(Direction::Buy, &bench, &execs, 0.0, 0.0);
        assert!((bps - 10.0).abs() < 1e-9, "{bps}");
        let (raw_s, bps_s) = execution_reward(Direction::Sell, &bench, &execs, 0.0, 0.0);
        assert_eq!(raw_s, -raw);
        assert_eq!(bps_s, -bps);
    }

    #[test]
    fn replay_is_deterministic() {
        let ep = flat(5);
        let run = || {
            let mut sim = MarketSim::new(&ep, VolumeSchedule::twap(5).unwrap(), SimConfig::default()).unwrap();
            sim.reset();
            for t in 1..=5 {
                let price = 1000 + (t as i64 % 2);
                sim.step(Order::limit(t, price, sim.order_volume())).unwrap();
            }
            sim.settle().unwrap()
        };
        assert_eq!(run(), run());
    }
}
