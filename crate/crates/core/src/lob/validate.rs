use std::fmt;

use serde::Serialize;

use super::action::price_to_ticks;
use super::types::{RawSnapshot, TickSnapshot, DEPTH};

/// A broken snapshot invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    NonPositivePrice { field: String, price: f64 },
    OffTick { field: String, price: f64 },
    NegativeVolume { field: String, volume: f64 },
    BidsNotDescending { level: usize },
    AsksNotAscending { level: usize },
    CrossedBook { best_bid: f64, best_ask: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositivePrice { field, price } => {
                write!(f, "{field} has non-positive price {price}")
            }
            Violation::OffTick { field, price } => write!(f, "{field} price {price} is off the tick grid"),
            Violation::NegativeVolume { field, volume } => {
                write!(f, "{field} has negative volume {volume}")
            }
            Violation::BidsNotDescending { level } => {
                write!(f, "bid prices not strictly descending at level {}", level + 1)
            }
            Violation::AsksNotAscending { level } => {
                write!(f, "ask prices not strictly ascending at level {}", level + 1)
            }
            Violation::CrossedBook { best_bid, best_ask } => {
                write!(f, "crossed book: best bid {best_bid} >= best ask {best_ask}")
            }
        }
    }
}

/// Checks every snapshot invariant; an empty list means the snapshot is valid.
pub fn validate_snapshot(snap: &RawSnapshot, tick_size: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut price_fields: Vec<(String, f64)> = vec![("last".into(), snap.last)];
    for i in 0..DEPTH {
        price_fields.push((format!("bid{}", i + 1), snap.bid_prices[i]));
        price_fields.push((format!("ask{}", i + 1), snap.ask_prices[i]));
    }
    for (field, price) in price_fields {
        if !(price > 0.0) {
            out.push(Violation::NonPositivePrice { field, price });
        } else if price_to_ticks(price, tick_size).is_none() {
            out.push(Violation::OffTick { field, price });
        }
    }
    for i in 0..DEPTH {
        for (name, v) in [("bidv", snap.bid_volumes[i]), ("askv", snap.ask_volumes[i])] {
            if !(v >= 0.0) {
                out.push(Violation::NegativeVolume {
                    field: format!("{name}{}", i + 1),
                    volume: v,
                });
            }
        }
    }
    for i in 1..DEPTH {
        if !(snap.bid_prices[i] < snap.bid_prices[i - 1]) {
            out.push(Violation::BidsNotDescending { level: i });
        }
        if !(snap.ask_prices[i] > snap.ask_prices[i - 1]) {
            out.push(Violation::AsksNotAscending { level: i });
        }
    }
    if !(snap.ask_prices[0] > snap.bid_prices[0]) {
        out.push(Violation::CrossedBook {
            best_bid: snap.bid_prices[0],
            best_ask: snap.ask_prices[0],
        });
    }
    out
}

impl TickSnapshot {
    pub fn violations(&self, tick_size: f64) -> Vec<Violation> {
        validate_snapshot(&self.to_raw(tick_size), tick_size)
    }
}

impl RawSnapshot {
    /// Converts to tick units, failing with the violations if the snapshot is invalid.
    pub fn to_ticks(&self, tick_size: f64) -> Result<TickSnapshot, Vec<Violation>> {
        let violations = validate_snapshot(self, tick_size);
        if !violations.is_empty() {
            return Err(violations);
        }
        let ticks = |p: f64| price_to_ticks(p, tick_size).expect("validated");
        Ok(TickSnapshot {
            time_offset: self.time_offset,
            last: ticks(self.last),
            bid_prices: self.bid_prices.map(ticks),
            bid_volumes: self.bid_volumes.map(|v| v.round() as u64),
            ask_prices: self.ask_prices.map(ticks),
            ask_volumes: self.ask_volumes.map(|v| v.round() as u64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book() -> RawSnapshot {
        RawSnapshot {
            time_offset: 0.0,
            last: 10.00,
            bid_prices: [10.00, 9.99, 9.98, 9.97, 9.96],
            bid_volumes: [100.0, 200.0, 300.0, 400.0, 500.0],
            ask_prices: [10.01, 10.02, 10.03, 10.04, 10.05],
            ask_volumes: [100.0, 200.0, 300.0, 400.0, 500.0],
        }
    }

    #[test]
    fn well_formed_book_has_no_violations() {
        assert!(validate_snapshot(&book(), 0.01).is_empty());
    }

    #[test]
    fn crossed_book_is_reported() {
        let mut snap = book();
        snap.ask_prices[0] = 10.00;
        snap.bid_prices[0] = 10.01;
        let v = validate_snapshot(&snap, 0.01);
        assert!(v.iter().any(|v| matches!(v, Violation::CrossedBook { .. })), "{v:?}");
    }

    #[test]
    fn off_tick_price_is_reported() {
        let mut snap = book();
        snap.last = 10.005;
        let v = validate_snapshot(&snap, 0.01);
        assert_eq!(
            v,
            vec![Violation::OffTick {
                field: "last".into(),
                price: 10.005
            }]
        );
    }

    #[test]
    fn ordering_and_volume_violations() {
        let mut snap = book();
        snap.bid_prices[2] = 9.99;
        snap.ask_volumes[4] = -1.0;
        snap.bid_prices[4] = 0.0;
        let v = validate_snapshot(&snap, 0.01);
        assert!(v.contains(&Violation::BidsNotDescending { level: 2 }));
        assert!(v.iter().any(|v| matches!(v, Violation::NegativeVolume { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::NonPositivePrice { .. })));
    }

    #[test]
    fn tick_conversion_round_trips() {
        let t = book().to_ticks(0.01).unwrap();
        assert_eq!(t.best_bid(), 1000);
        assert_eq!(t.best_ask(), 1001);
        assert_eq!(t.to_raw(0.01).to_ticks(0.01).unwrap(), t);
    }
}
