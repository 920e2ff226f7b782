//! Order execution against replayed quotes.
//!
//! A buy with limit price p takes displayed ask volume at prices <= p from
//! every snapshot in effect between order arrival and window end, level by
//! level. Volume taken at a price is remembered so that a level re-displayed
//! by the replay cannot be consumed twice: only growth of the displayed volume
//! counts as new liquidity, and the memory shrinks with the displayed volume
//! when others trade the level down. Sells mirror this against bids.

use crate::lob::{Direction, EpisodeData, FillChunk, DEPTH};

/// Result of executing some shares.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Execution {
    pub filled_shares: f64,
    /// Σ price_ticks × shares.
    pub cost_ticks: f64,
    pub chunks: Vec<FillChunk>,
}

impl Execution {
    pub fn avg_price_ticks(&self) -> Option<f64> {
        (self.filled_shares > 0.0).then(|| self.cost_ticks / self.filled_shares)
    }
}

fn eligible(direction: Direction, price: i64, limit: Option<i64>) -> bool {
    match (direction, limit) {
        (_, None) => true,
        (Direction::Buy, Some(l)) => price <= l,
        (Direction::Sell, Some(l)) => price >= l,
    }
}

#[derive(Clone, Copy, Debug)]
struct LevelMemory {
    price: i64,
    consumed: f64,
}

/// Executes up to `shares` over the snapshots in effect during `[arrival, end)`.
/// `limit = None` is a market order restricted to displayed liquidity.
pub fn execute_window(
    episode: &EpisodeData,
    direction: Direction,
    limit: Option<i64>,
    shares: f64,
    arrival: f64,
    end: f64,
) -> Execution {
    let mut exec = Execution::default();
    let Some(first) = episode.snapshot_at(arrival) else {
        return exec;
    };
    let mut memory: Vec<LevelMemory> = Vec::new();
    let mut remaining = shares;
    let snaps = &episode.snapshots;
    let mut idx = first;
    while idx < snaps.len() && remaining > 0.0 {
        if idx > first && snaps[idx].time_offset >= end {
            break;
        }
        let (prices, volumes) = snaps[idx].opposite_side(direction);
        for level in 0..DEPTH {
            let price = prices[level];
            if !eligible(direction, price, limit) {
                break;
            }
            let displayed = volumes[level] as f64;
            let mem = match memory.iter_mut().find(|m| m.price == price) {
                Some(m) => m,
                None => {
                    memory.push(LevelMemory { price, consumed: 0.0 });
                    memory.last_mut().unwrap()
                }
            };
            mem.consumed = mem.consumed.min(displayed);
            let available = (displayed - mem.consumed).max(0.0);
            let take = available.min(remaining);
            if take > 0.0 {
                mem.consumed += take;
                remaining -= take;
                exec.filled_shares += take;
                exec.cost_ticks += take * price as f64;
                exec.chunks.push(FillChunk {
                    snapshot: idx,
                    price_ticks: price,
                    shares: take,
                });
            }
            if remaining <= 0.0 {
                break;
            }
        }
        idx += 1;
    }
    exec
}

/// Walks a single snapshot's book for the full size; whatever exceeds the
/// five displayed levels is priced at the deepest displayed level.
pub fn walk_book(episode: &EpisodeData, snapshot: usize, direction: Direction, shares: f64) -> Execution {
    let mut exec = Execution::default();
    let (prices, volumes) = episode.snapshots[snapshot].opposite_side(direction);
    let mut remaining = shares;
    for level in 0..DEPTH {
        if remaining <= 0.0 {
            break;
        }
        let take = (volumes[level] as f64).min(remaining);
        if take > 0.0 {
            remaining -= take;
            exec.filled_shares += take;
            exec.cost_ticks += take * prices[level] as f64;
            exec.chunks.push(FillChunk {
                snapshot,
                price_ticks: prices[level],
                shares: take,
            });
        }
    }
    if remaining > 0.0 {
        let price = prices[DEPTH - 1];
        exec.filled_shares += remaining;
        exec.cost_ticks += remaining * price as f64;
        exec.chunks.push(FillChunk {
            snapshot,
            price_ticks: price,
            shares: remaining,
        });
    }
    exec
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lob::{EpisodeSpec, TickSnapshot};
    use chrono::NaiveDate;

    pub(crate) fn snap(t: f64, bid: i64, ask: i64, bidv: [u64; 5], askv: [u64; 5]) -> TickSnapshot {
        TickSnapshot {
            time_offset: t,
            last: bid,
            bid_prices: std::array::from_fn(|i| bid - i as i64),
            bid_volumes: bidv,
            ask_prices: std::array::from_fn(|i| ask + i as i64),
            ask_volumes: askv,
        }
    }

    pub(crate) fn episode(snaps: Vec<TickSnapshot>, horizon: usize) -> EpisodeData {
        EpisodeData {
            spec: EpisodeSpec {
                stock_id: "T".into(),
                trading_day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
                tick_size: 0.01,
                horizon,
                step_seconds: 60.0,
                direction: Direction::Buy,
                latency_seconds: 3.0,
                order_cap: 0.1,
                inventory_shares: 1000.0,
            },
            snapshots: snaps,
        }
    }

    #[test]
    fn market_walk_matches_hand_average() {
        let ep = episode(vec![snap(0.0, 1000, 1001, [100; 5], [100, 200, 300, 400, 500])], 1);
        let ex = walk_book(&ep, 0, Direction::Buy, 150.0);
        let avg = ex.avg_price_ticks().unwrap() * 0.01;
        let oracle = (100.0 * 10.01 + 50.0 * 10.02) / 150.0;
        assert!((avg - oracle).abs() < 1e-12, "{avg} vs {oracle}");
        let win = execute_window(&ep, Direction::Buy, None, 150.0, 3.0, 60.0);
        assert_eq!(win, ex);
    }

    #[test]
    fn unmarketable_limit_never_fills() {
        let snaps = (0..20)
            .map(|i| snap(i as f64 * 3.0, 1000, 1001, [100; 5], [100; 5]))
            .collect();
        let ep = episode(snaps, 1);
        let ex = execute_window(&ep, Direction::Buy, Some(1000), 50.0, 3.0, 60.0);
        assert_eq!(ex.filled_shares, 0.0);
    }

    #[test]
    fn replayed_level_is_not_double_counted() {
        // asks drop to 1000 with 30 shares shown in two consecutive snapshots
        let snaps = vec![
            snap(0.0, 1000, 1001, [100; 5], [100; 5]),
            snap(6.0, 999, 1000, [100; 5], [30, 100, 100, 100, 100]),
            snap(9.0, 999, 1000, [100; 5], [30, 100, 100, 100, 100]),
            snap(12.0, 999, 1000, [100; 5], [50, 100, 100, 100, 100]),
        ];
        let ep = episode(snaps, 1);
        let ex = execute_window(&ep, Direction::Buy, Some(1000), 500.0, 3.0, 60.0);
        // 30 at first sight, nothing on the replay, 20 once the level grows to 50
        assert_eq!(ex.filled_shares, 50.0);
        assert_eq!(ex.cost_ticks, 50_000.0);
    }

    #[test]
    fn price_improvement_is_kept() {
        let snaps = vec![
            snap(0.0, 1000, 1001, [100; 5], [100; 5]),
            snap(6.0, 997, 998, [100; 5], [40, 100, 100, 100, 100]),
        ];
        let ep = episode(snaps, 1);
        let ex = execute_window(&ep, Direction::Buy, Some(999), 60.0, 3.0, 60.0);
        // 40 at 998 and 20 at 999
        assert_eq!(ex.filled_shares, 60.0);
        assert_eq!(ex.cost_ticks, 40.0 * 998.0 + 20.0 * 999.0);
    }

    #[test]
    fn sell_side_mirrors_buy_side() {
        let ep = episode(vec![snap(0.0, 1000, 1001, [100, 200, 300, 400, 500], [100; 5])], 1);
        let ex = walk_book(&ep, 0, Direction::Sell, 150.0);
        assert_eq!(ex.cost_ticks, 100.0 * 1000.0 + 50.0 * 999.0);
        let none = execute_window(&ep, Direction::Sell, Some(1001), 10.0, 3.0, 60.0);
        assert_eq!(none.filled_shares, 0.0);
    }

    #[test]
    fn overflow_is_priced_at_deepest_level() {
        let ep = episode(vec![snap(0.0, 1000, 1001, [1; 5], [1; 5])], 1);
        let ex = walk_book(&ep, 0, Direction::Buy, 10.0);
        assert_eq!(ex.filled_shares, 10.0);
        assert_eq!(ex.cost_ticks, 1001.0 + 1002.0 + 1003.0 + 1004.0 + 6.0 * 1005.0);
    }
}
