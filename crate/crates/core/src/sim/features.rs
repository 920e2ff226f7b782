//! Public-state windows in the two renditions the policy stages consume.

use serde::{Deserialize, Serialize};

use crate::lob::{EpisodeData, TickSnapshot, DEPTH};
use crate::nets::Matrix;

/// Columns per snapshot: last, bid1..5, ask1..5, bidv1..5, askv1..5.
pub const FEATURES: usize = 1 + 4 * DEPTH;
/// Standardized prices are relative returns expressed in per-mille.
pub const PRICE_SCALE: f64 = 1000.0;

/// The most recent `W` snapshots at a decision point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicState {
    /// Prices as returns against the window-start midprice, volumes z-scored
    /// within the window.
    pub standardized: Matrix,
    /// Log prices (currency) and log(1 + volume).
    pub raw_log: Matrix,
    /// Last traded price at the decision time.
    pub current_price_ticks: i64,
    pub tick_size: f64,
}

fn price_columns(s: &TickSnapshot) -> [i64; 1 + 2 * DEPTH] {
    let mut out = [0i64; 1 + 2 * DEPTH];
    out[0] = s.last;
    out[1..1 + DEPTH].copy_from_slice(&s.bid_prices);
    out[1 + DEPTH..].copy_from_slice(&s.ask_prices);
    out
}

fn volume_columns(s: &TickSnapshot) -> [u64; 2 * DEPTH] {
    let mut out = [0u64; 2 * DEPTH];
    out[..DEPTH].copy_from_slice(&s.bid_volumes);
    out[DEPTH..].copy_from_slice(&s.ask_volumes);
    out
}

pub fn standardize(window: &[&TickSnapshot]) -> Matrix {
    let mut m = Matrix::zeros(window.len(), FEATURES);
    let Some(first) = window.first() else {
        return m;
    };
    let mid0 = (first.best_bid() + first.best_ask()) as f64 / 2.0;
    let vols: Vec<f64> = window
        .iter()
        .flat_map(|s| volume_columns(s).map(|v| v as f64))
        .collect();
    let n = vols.len() as f64;
    let mean = vols.iter().sum::<f64>() / n;
    let var = vols.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for (r, s) in window.iter().enumerate() {
        for (c, p) in price_columns(s).iter().enumerate() {
            m.set(r, c, (*p as f64 / mid0 - 1.0) * PRICE_SCALE);
        }
        for (c, v) in volume_columns(s).iter().enumerate() {
            let z = if std > 0.0 { (*v as f64 - mean) / std } else { 0.0 };
            m.set(r, 1 + 2 * DEPTH + c, z);
        }
    }
    m
}

pub fn raw_log(window: &[&TickSnapshot], tick_size: f64) -> Matrix {
    let mut m = Matrix::zeros(window.len(), FEATURES);
    for (r, s) in window.iter().enumerate() {
        for (c, p) in price_columns(s).iter().enumerate() {
            m.set(r, c, (*p as f64 * tick_size).ln());
        }
        for (c, v) in volume_columns(s).iter().enumerate() {
            m.set(r, 1 + 2 * DEPTH + c, (*v as f64).ln_1p());
        }
    }
    m
}

/// Window ending at snapshot `end_idx`, front-padded with the earliest
/// snapshot when history is short.
pub fn public_state(episode: &EpisodeData, end_idx: usize, window: usize) -> PublicState {
    let start = (end_idx + 1).saturating_sub(window);
    let mut rows: Vec<&TickSnapshot> = Vec::with_capacity(window);
    for _ in 0..window.saturating_sub(end_idx + 1 - start) {
        rows.push(&episode.snapshots[start]);
    }
    rows.extend(episode.snapshots[start..=end_idx].iter());
    PublicState {
        standardized: standardize(&rows),
        raw_log: raw_log(&rows, episode.spec.tick_size),
        current_price_ticks: episode.snapshots[end_idx].last,
        tick_size: episode.spec.tick_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fill::tests::snap;

    fn window(scale: i64, vol_scale: u64) -> Vec<TickSnapshot> {
        (0..6)
            .map(|i| {
                let mut s = snap(
                    i as f64,
                    (1000 + i % 3) * scale,
                    (1001 + i % 3) * scale,
                    [10 + i as u64, 20, 30, 40, 50].map(|v| v * vol_scale),
                    [15, 25 + i as u64, 35, 45, 55].map(|v| v * vol_scale),
                );
                // keep levels one scaled tick apart
                s.bid_prices = std::array::from_fn(|k| s.bid_prices[0] - k as i64 * scale);
                s.ask_prices = std::array::from_fn(|k| s.ask_prices[0] + k as i64 * scale);
                s
            })
            .collect()
    }

    #[test]
    fn standardized_is_scale_invariant() {
        let a = window(1, 1);
        let b = window(7, 13);
        let ma = standardize(&a.iter().collect::<Vec<_>>());
        let mb = standardize(&b.iter().collect::<Vec<_>>());
        for (x, y) in ma.data.iter().zip(&mb.data) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn short_history_is_padded() {
        let snaps = window(1, 1);
        let ep = crate::sim::fill::tests::episode(snaps, 1);
        let ps = public_state(&ep, 1, 4);
        assert_eq!(ps.standardized.rows, 4);
        assert_eq!(ps.raw_log.row(0), ps.raw_log.row(2));
        assert_eq!(ps.current_price_ticks, ep.snapshots[1].last);
        assert!(ps.standardized.is_finite() && ps.raw_log.is_finite());
    }

    #[test]
    fn constant_volumes_standardize_to_zero() {
        let snaps: Vec<_> = (0..3)
            .map(|i| snap(i as f64, 1000, 1001, [5; 5], [5; 5]))
            .collect();
        let m = standardize(&snaps.iter().collect::<Vec<_>>());
        assert!(m.row(0)[11..].iter().all(|v| *v == 0.0));
    }
}
