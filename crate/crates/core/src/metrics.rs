//! Schedules, baseline strategies and the evaluation metric suite.
//!
//! Every strategy is scored by its excess return over executing the TWAP
//! schedule with market orders on the same episode, in basis points.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{ActMode, Agent, Decision, Observation};
use crate::error::{Error, Result};
use crate::lob::{DaySource, Direction, EpisodeData, OrderKind, Order, PriceBand, VolumeSchedule};
use crate::sim::{benchmark_price, MarketSim, SettlementReport, SimConfig};

/// Per-episode cancellation penalty in basis points.
pub const CANCELLATION_PENALTY_BPS: f64 = 5.0;
pub const DEFAULT_VWAP_LOOKBACK: usize = 21;

pub fn twap_schedule(horizon: usize) -> Result<VolumeSchedule> {
    VolumeSchedule::twap(horizon)
}

/// Mean per-interval volume share over the given prior days. Days with no
/// volume are ignored; with no usable history the TWAP schedule is returned.
pub fn vwap_schedule(history: &[Vec<f64>], horizon: usize) -> Result<VolumeSchedule> {
    let mut acc = vec![0.0; horizon];
    let mut used = 0usize;
    for day in history {
        if day.len() != horizon {
            return Err(Error::InvalidArgument(format!(
                "volume curve has {} intervals, horizon is {horizon}",
                day.len()
            )));
        }
        if day.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite volume".into()));
        }
        let total: f64 = day.iter().sum();
        if total <= 0.0 {
            continue;
        }
        acc.iter_mut().zip(day).for_each(|(a, v)| *a += v / total);
        used += 1;
    }
    if used == 0 {
        log::warn!("no historical volume available, using the TWAP schedule");
        return VolumeSchedule::twap(horizon);
    }
    let total: f64 = acc.iter().sum();
    VolumeSchedule::new(acc.into_iter().map(|a| a / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Twap,
    Vwap,
}

impl ScheduleKind {
    pub fn schedule(self, source: &dyn DaySource, episode: &EpisodeData) -> Result<VolumeSchedule> {
        let horizon = episode.spec.horizon;
        match self {
            ScheduleKind::Twap => twap_schedule(horizon),
            ScheduleKind::Vwap => vwap_schedule(
                &source.volume_history(
                    &episode.spec.stock_id,
                    episode.spec.trading_day,
                    DEFAULT_VWAP_LOOKBACK,
                ),
                horizon,
            ),
        }
    }
}

/// Drives one episode to settlement. `decide` picks the order kind for each
/// step; the volume always follows the schedule catch-up rule.
pub fn simulate<F>(
    episode: &EpisodeData,
    schedule: VolumeSchedule,
    window: usize,
    mut decide: F,
) -> Result<SettlementReport>
where
    F: FnMut(usize, &Observation) -> Result<OrderKind>,
{
    let mut sim = MarketSim::new(episode, schedule, SimConfig { window })?;
    let (mut public, mut state) = sim.reset();
    loop {
        let obs = Observation {
            public,
            private: state.private_features(),
        };
        let kind = decide(state.t, &obs)?;
        let order = Order {
            step: state.t,
            kind,
            volume: sim.order_volume(),
        };
        let out = sim.step(order)?;
        if out.done {
            break;
        }
        public = out.public;
        state = out.state;
    }
    sim.settle()
}

#[derive(Clone, Copy, Debug)]
pub enum Strategy<'a> {
    /// Market order at every step.
    Market,
    /// Limit at `ticks` from the current price in the trade's favour
    /// direction: a buy with −1 bids one tick below the last price.
    FixedOffset { ticks: i64 },
    /// Greedy actions of a trained agent.
    Policy(&'a Agent),
}

impl Strategy<'_> {
    pub fn name(&self) -> String {
        match self {
            Strategy::Market => "market".into(),
            Strategy::FixedOffset { ticks } => format!("fixed-offset({ticks})"),
            Strategy::Policy(a) => a.kind().name().into(),
        }
    }

    fn window(&self) -> usize {
        match self {
            Strategy::Policy(a) => a.window(),
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub stock_id: String,
    pub day: NaiveDate,
    pub close_price: f64,
    pub band: PriceBand,
    /// Excess return over TWAP with market orders, bps.
    pub excess_bps: f64,
    /// Reward against the strategy's own schedule, bps.
    pub reward_bps: f64,
    pub cancellation_violation: bool,
    pub submitted_volume: f64,
    pub final_deficit: f64,
}

/// Σ (1/T)·p*_t of the TWAP market-order benchmark.
pub fn twap_benchmark_notional(episode: &EpisodeData) -> Result<f64> {
    let twap = twap_schedule(episode.spec.horizon)?;
    let mut total = 0.0;
    for t in 1..=twap.len() {
        total += twap.target(t) * benchmark_price(episode, &twap, t, episode.spec.direction)?;
    }
    Ok(total)
}

pub fn episode_result(episode: &EpisodeData, schedule: &VolumeSchedule, report: &SettlementReport) -> Result<EpisodeResult> {
    let is_twap = schedule.targets().iter().all(|v| *v == 1.0 / schedule.len() as f64);
    let bench = if is_twap {
        report.benchmark_notional
    } else {
        twap_benchmark_notional(episode)?
    };
    let excess = if bench > 0.0 {
        report.direction.sign() * (bench - report.execution_notional) / bench * 1e4
    } else {
        0.0
    };
    Ok(EpisodeResult {
        stock_id: episode.spec.stock_id.clone(),
        day: episode.spec.trading_day,
        close_price: episode.close_price(),
        band: episode.price_band(),
        excess_bps: excess,
        reward_bps: report.reward_bps,
        cancellation_violation: report.cancellation_violation,
        submitted_volume: report.submitted_volume,
        final_deficit: report.final_deficit,
    })
}

/// Runs a strategy once over one episode.
/// Audit line for one policy decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub stock_id: String,
    pub day: NaiveDate,
    pub step: usize,
    pub state_digest: String,
    pub decision: Decision,
}

pub fn run_episode(
    strategy: Strategy,
    episode: &EpisodeData,
    schedule: VolumeSchedule,
) -> Result<(EpisodeResult, Vec<DecisionRecord>)> {
    let direction = episode.spec.direction;
    let mut decisions = Vec::new();
    let report = simulate(episode, schedule.clone(), strategy.window(), |t, obs| match strategy {
        Strategy::Market => Ok(OrderKind::Market),
        Strategy::FixedOffset { ticks } => {
            let sign = match direction {
                Direction::Buy => 1,
                Direction::Sell => -1,
            };
            let price = (obs.public.current_price_ticks + sign * ticks).max(1);
            Ok(OrderKind::Limit { price_ticks: price })
        }
        Strategy::Policy(agent) => {
            let (d, _) = agent.act(obs, ActMode::Greedy)?;
            let price = d.limit_price_ticks;
            decisions.push(DecisionRecord {
                stock_id: episode.spec.stock_id.clone(),
                day: episode.spec.trading_day,
                step: t,
                state_digest: obs.digest(),
                decision: d,
            });
            Ok(OrderKind::Limit { price_ticks: price })
        }
    })?;
    Ok((episode_result(episode, &schedule, &report)?, decisions))
}

/// Runs a strategy over every episode of the given days. Episodes that fail
/// to simulate are logged and skipped. Output order follows days, then the
/// source's episode order.
pub fn run_strategy(
    strategy: Strategy,
    source: &dyn DaySource,
    days: &[NaiveDate],
    schedule: ScheduleKind,
) -> Result<Vec<EpisodeResult>> {
    Ok(run_strategy_logged(strategy, source, days, schedule)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// As [`run_strategy`], keeping the per-step decisions of policy strategies.
pub fn run_strategy_logged(
    strategy: Strategy,
    source: &dyn DaySource,
    days: &[NaiveDate],
    schedule: ScheduleKind,
) -> Result<Vec<(EpisodeResult, Vec<DecisionRecord>)>> {
    let mut out = Vec::new();
    for day in days {
        let episodes = source.episodes(*day)?;
        let results: Vec<Option<(EpisodeResult, Vec<DecisionRecord>)>> = episodes
            .par_iter()
            .map(|ep| {
                let res = schedule
                    .schedule(source, ep)
                    .and_then(|s| run_episode(strategy, ep, s));
                match res {
                    Ok(pair) => Some(pair),
                    Err(e) => {
                        log::warn!(
                            "skipping {} {}: {e}",
                            ep.spec.stock_id,
                            ep.spec.trading_day
                        );
                        None
                    }
                }
            })
            .collect();
        out.extend(results.into_iter().flatten());
    }
    Ok(out)
}

fn ser_real<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_real<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Real {
        Num(f64),
        Text(String),
    }
    match Real::deserialize(d)? {
        Real::Num(x) => Ok(x),
        Real::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub return_bps: f64,
    pub std_bps: f64,
    /// Return / (Std / √(n−1)); infinite when Std = 0 and Return ≠ 0.
    #[serde(serialize_with = "ser_real", deserialize_with = "de_real")]
    pub t_value: f64,
    pub pnl_bps: f64,
    pub violations: usize,
    /// Mean of 1 − executed/submitted volume per episode.
    pub cancellation_rate: f64,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsReport> {
    let n = results.len();
    if n < 2 {
        return Err(Error::Metrics(format!(
            "need at least 2 episodes, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = results.iter().map(|r| r.excess_bps).sum::<f64>() / nf;
    let var = results.iter().map(|r| (r.excess_bps - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();
    let t_value = if std > 0.0 {
        mean / (std / (nf - 1.0).sqrt())
    } else if mean == 0.0 {
        0.0
    } else {
        log::warn!("zero spread of excess returns, t-value is infinite");
        mean.signum() * f64::INFINITY
    };
    let violations = results.iter().filter(|r| r.cancellation_violation).count();
    let pnl = mean - CANCELLATION_PENALTY_BPS * violations as f64 / nf;
    let cancellation_rate = results
        .iter()
        .map(|r| {
            if r.submitted_volume > 0.0 {
                let executed = 1.0 - r.final_deficit;
                (1.0 - executed / r.submitted_volume).max(0.0)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / nf;
    Ok(MetricsReport {
        n,
        return_bps: mean,
        std_bps: std,
        t_value,
        pnl_bps: pnl,
        violations,
        cancellation_rate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: PriceBand,
    pub n: usize,
    /// `None` when the band has fewer than 2 episodes.
    pub metrics: Option<MetricsReport>,
}

/// Metrics per close-price band, in band order. Every band with episodes is
/// listed so counts sum to the total; bands with fewer than 2 episodes carry
/// no metrics.
pub fn grouping_report(results: &[EpisodeResult]) -> Vec<BandReport> {
    [PriceBand::Low, PriceBand::Medium, PriceBand::High]
        .into_iter()
        .filter_map(|band| {
            let sub: Vec<EpisodeResult> = results.iter().filter(|r| r.band == band).cloned().collect();
            if sub.is_empty() {
                return None;
            }
            let metrics = compute_metrics(&sub).ok();
            if metrics.is_none() {
                log::info!("band {} has a single episode, metrics omitted", band.name());
            }
            Some(BandReport {
                band,
                n: sub.len(),
                metrics,
            })
        })
        .collect()
}

/// Everything a backtest produces; serialized as the report JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub schedule: ScheduleKind,
    pub metrics: MetricsReport,
    pub bands: Vec<BandReport>,
    pub episodes: Vec<EpisodeResult>,
}

impl BacktestReport {
    pub fn new(strategy: String, schedule: ScheduleKind, episodes: Vec<EpisodeResult>) -> Result<Self> {
        Ok(BacktestReport {
            strategy,
            schedule,
            metrics: compute_metrics(&episodes)?,
            bands: grouping_report(&episodes),
            episodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fill::tests::{episode, snap};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn result(excess: f64, violation: bool, close: f64) -> EpisodeResult {
        EpisodeResult {
            stock_id: "S".into(),
            day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            close_price: close,
            band: PriceBand::of(close),
            excess_bps: excess,
            reward_bps: excess,
            cancellation_violation: violation,
            submitted_volume: 1.0,
            final_deficit: 0.0,
        }
    }

    #[test]
    fn schedules() {
        let t = twap_schedule(90).unwrap();
        assert_eq!(t.len(), 90);
        assert!(t.targets().iter().all(|v| *v == 1.0 / 90.0));
        assert_eq!(twap_schedule(1).unwrap().targets(), &[1.0]);
        let v = vwap_schedule(&[vec![0.5, 0.3, 0.2]], 3).unwrap();
        for (a, b) in v.targets().iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        let v = vwap_schedule(&[vec![0.6, 0.4], vec![0.2, 0.8]], 2).unwrap();
        assert!((v.targets()[0] - 0.4).abs() < 1e-15 && (v.targets()[1] - 0.6).abs() < 1e-15);
        let v = vwap_schedule(&[vec![5.0; 4], vec![2.0; 4]], 4).unwrap();
        assert!(v.targets().iter().all(|x| (x - 0.25).abs() < 1e-15));
        let v = vwap_schedule(&[vec![0.0; 3]], 3).unwrap();
        assert_eq!(v, twap_schedule(3).unwrap());
        assert!(vwap_schedule(&[vec![1.0; 2]], 3).is_err());
    }

    proptest! {
        #[test]
        fn twap_sums_to_one(t in 1usize..10_000) {
            let s = twap_schedule(t).unwrap();
            prop_assert!((s.targets().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            xs in proptest::collection::vec((-50.0f64..50.0, any::<bool>()), 2..30),
            seed in any::<u64>(),
        ) {
            let rs: Vec<_> = xs.iter().map(|(x, v)| result(*x, *v, 20.0)).collect();
            let mut shuffled = rs.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let a = compute_metrics(&rs).unwrap();
            let b = compute_metrics(&shuffled).unwrap();
            prop_assert!((a.return_bps - b.return_bps).abs() < 1e-9);
            prop_assert!((a.std_bps - b.std_bps).abs() < 1e-9);
            prop_assert!(a.pnl_bps <= a.return_bps);
            prop_assert_eq!(a.pnl_bps == a.return_bps, a.violations == 0);
        }
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[result(0.0, false, 20.0), result(2.0, false, 20.0), result(4.0, false, 20.0)]).unwrap();
        assert!((m.return_bps - 2.0).abs() < 1e-12);
        let std = (8.0f64 / 3.0).sqrt();
        assert!((m.std_bps - std).abs() < 1e-12);
        assert!((m.t_value - 2.0 / (std / 2f64.sqrt())).abs() < 1e-12);
        assert!((m.t_value - 3f64.sqrt()).abs() < 1e-12);

        let flat = compute_metrics(&[result(1.0, false, 20.0), result(1.0, false, 20.0)]).unwrap();
        assert_eq!(flat.t_value, f64::INFINITY);
        let zero = compute_metrics(&[result(0.0, false, 20.0), result(0.0, false, 20.0)]).unwrap();
        assert_eq!(zero.t_value, 0.0);

        let rs = [
            result(1.0, true, 20.0),
            result(2.0, false, 20.0),
            result(3.0, false, 20.0),
            result(4.0, false, 20.0),
        ];
        let m = compute_metrics(&rs).unwrap();
        assert!((m.pnl_bps - (m.return_bps - 1.25)).abs() < 1e-12);
        assert!(compute_metrics(&rs[..1]).is_err());
    }

    #[test]
    fn infinite_t_survives_json() {
        let m = compute_metrics(&[result(1.0, false, 20.0), result(1.0, false, 20.0)]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"inf\""));
        let back: MetricsReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bands() {
        let rs = vec![
            result(1.0, false, 9.99),
            result(2.0, false, 10.0),
            result(3.0, false, 50.0),
            result(4.0, false, 50.01),
            result(5.0, false, 3.0),
        ];
        assert_eq!(rs.iter().map(|r| r.band).collect::<Vec<_>>(), [
            PriceBand::Low,
            PriceBand::Medium,
            PriceBand::Medium,
            PriceBand::High,
            PriceBand::Low
        ]);
        let g = grouping_report(&rs);
        assert_eq!(g.iter().map(|b| b.n).sum::<usize>(), rs.len());
        assert!(g.iter().find(|b| b.band == PriceBand::High).unwrap().metrics.is_none());
        let low = g.iter().find(|b| b.band == PriceBand::Low).unwrap();
        assert_eq!(low.metrics.as_ref().unwrap().return_bps, 3.0);
        let one = grouping_report(&rs[..1].iter().chain(&rs[4..]).cloned().collect::<Vec<_>>());
        assert_eq!(one.len(), 1);
    }

    /// Three one-minute steps, bid 1000 / ask 1001 throughout except that the
    /// ask dips to the bid for a moment in every window.
    fn dipping_episode() -> EpisodeData {
        let mut snaps = Vec::new();
        for i in 0..=60 {
            let t = i as f64 * 3.0;
            let dip = i % 20 == 10;
            let ask = if dip { 1000 } else { 1001 };
            let mut s = snap(t, 1000, ask, [5000; 5], [5000; 5]);
            s.last = 1001;
            snaps.push(s);
        }
        let mut ep = episode(snaps, 3);
        ep.spec.order_cap = 1.0;
        ep
    }

    #[test]
    fn market_strategy_is_the_benchmark() {
        let ep = dipping_episode();
        let (r, _) = run_episode(Strategy::Market, &ep, twap_schedule(3).unwrap()).unwrap();
        assert_eq!(r.excess_bps, 0.0);
        assert_eq!(r.reward_bps, 0.0);
    }

    #[test]
    fn passive_offset_earns_the_spread() {
        let ep = dipping_episode();
        let (r, _) = run_episode(Strategy::FixedOffset { ticks: -1 }, &ep, twap_schedule(3).unwrap()).unwrap();
        // every fill at 10.00 against a 10.01 benchmark
        let want = (10.01 - 10.00) / 10.01 * 1e4;
        assert!((r.excess_bps - want).abs() < 1e-9, "{}", r.excess_bps);
        assert!(!r.cancellation_violation);
    }

    #[test]
    fn non_twap_schedules_are_scored_against_twap() {
        let ep = dipping_episode();
        let sched = VolumeSchedule::new(vec![0.05, 0.05, 0.9]).unwrap();
        let (r, _) = run_episode(Strategy::Market, &ep, sched).unwrap();
        // same flat prices: market execution at the ask matches the TWAP benchmark
        assert!(r.excess_bps.abs() < 1e-9);
    }
}
