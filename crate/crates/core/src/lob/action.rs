//! Conversions between tick actions and percentage actions.

use crate::error::{Error, Result};

fn check_price_and_tick(current_price: f64, tick_size: f64) -> Result<()> {
    if !(current_price > 0.0 && current_price.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "current price must be positive, got {current_price}"
        )));
    }
    if !(tick_size > 0.0 && tick_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tick size must be positive, got {tick_size}"
        )));
    }
    Ok(())
}

/// Percentage action (as a fraction of the current price) of a tick offset.
pub fn pct_from_ticks(ticks: i64, current_price: f64, tick_size: f64) -> Result<f64> {
    check_price_and_tick(current_price, tick_size)?;
    Ok(ticks as f64 * tick_size / current_price)
}

/// Tick offset closest to a percentage action; halves round away from zero.
pub fn ticks_from_pct(pct: f64, current_price: f64, tick_size: f64) -> Result<i64> {
    check_price_and_tick(current_price, tick_size)?;
    if !pct.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite action {pct}")));
    }
    Ok(round_half_away(pct * current_price / tick_size))
}

/// Nearest integer; values within 1e-9 of a half are treated as exact halves
/// and rounded away from zero.
pub fn round_half_away(x: f64) -> i64 {
    let magnitude = x.abs();
    let floor = magnitude.floor();
    let rounded = if (magnitude - floor - 0.5).abs() < 1e-9 {
        floor + 1.0
    } else {
        magnitude.round()
    };
    (rounded as i64) * if x < 0.0 { -1 } else { 1 }
}

/// Exact tick count of a currency price, or `None` when off the grid.
pub fn price_to_ticks(price: f64, tick_size: f64) -> Option<i64> {
    let ratio = price / tick_size;
    let ticks = ratio.round();
    if (ratio - ticks).abs() <= 1e-6 * ticks.abs().max(1.0) {
        Some(ticks as i64)
    } else {
        None
    }
}

/// Number of decimals needed to print prices on a tick grid.
pub fn tick_decimals(tick_size: f64) -> usize {
    (0..=10)
        .find(|d| {
            let scaled = tick_size * 10f64.powi(*d as i32);
            (scaled - scaled.round()).abs() < 1e-9
        })
        .unwrap_or(10)
}

pub fn format_price(ticks: i64, tick_size: f64) -> String {
    format!("{:.*}", tick_decimals(tick_size), ticks as f64 * tick_size)
}
