//! Market data, episodes, orders and fills.
//!
//! Prices are carried as integer tick counts everywhere inside the crate;
//! currency values only appear at I/O boundaries (CSV files, reports).

mod action;
mod csv_io;
mod dataset;
mod synth;
mod types;
mod validate;

pub use action::{
    format_price, pct_from_ticks, price_to_ticks, round_half_away, tick_decimals,
    ticks_from_pct,
};
pub use csv_io::{episode_file_name, load_episode_csv, parse_episode_file_name, write_episode_csv};
pub use dataset::{
    BandProfile, CsvDataset, DaySource, Manifest, ManifestStock, StockProfile, SynthUniverse,
    UniverseConfig,
};
pub use synth::{generate_synthetic_day, synth_volume_curve, SynthParams};
pub use types::{
    Direction, EpisodeData, EpisodeSpec, Fill, FillChunk, Order, OrderKind, PriceBand,
    RawSnapshot, TickSnapshot, VolumeSchedule, DEPTH,
};
pub use validate::{validate_snapshot, Violation};
