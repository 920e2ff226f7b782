//! Day-grouped episode sources: an on-the-fly synthetic universe and a
//! directory of episode CSV files described by `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::csv_io::{episode_file_name, load_episode_csv, write_episode_csv};
use super::synth::{generate_synthetic_day, synth_volume_curve, SynthParams};
use super::types::{Direction, EpisodeData, EpisodeSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Anything that can hand out all episodes of a trading day.
pub trait DaySource: Sync {
    fn train_days(&self) -> Vec<NaiveDate>;
    fn eval_days(&self) -> Vec<NaiveDate>;
    /// Valid episodes of `day`; episodes that fail to load are skipped with a warning.
    fn episodes(&self, day: NaiveDate) -> Result<Vec<EpisodeData>>;
    /// Per-interval traded volume of up to `lookback` trading days strictly
    /// before `day`, most recent last.
    fn volume_history(&self, stock_id: &str, day: NaiveDate, lookback: usize) -> Vec<Vec<f64>>;
}

/// Generation parameters shared by all stocks of one price band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandProfile {
    pub count: usize,
    pub price_low: f64,
    pub price_high: f64,
    pub volatility_bps: f64,
    pub mean_reversion: f64,
    pub spread_ticks: u32,
    pub wide_spread_prob: f64,
    /// Displayed notional at the best level, in currency.
    pub depth_notional: f64,
    pub depth_slope: f64,
    pub depth_noise: f64,
    /// Parent order size as a multiple of the mean best-level depth.
    pub inventory_depth_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    pub start_date: NaiveDate,
    pub train_days: usize,
    pub eval_days: usize,
    pub tick_size: f64,
    pub horizon: usize,
    pub step_seconds: f64,
    pub latency_seconds: f64,
    pub order_cap: f64,
    pub direction: Direction,
    pub snapshot_seconds: f64,
    pub warmup_snapshots: usize,
    /// Standard deviation of the day-to-day anchor drift.
    pub daily_volatility: f64,
    pub volume_noise: f64,
    pub bands: Vec<BandProfile>,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        let band = |count, lo, hi, vol, depth| BandProfile {
            count,
            price_low: lo,
            price_high: hi,
            volatility_bps: vol,
            mean_reversion: 0.02,
            spread_ticks: 1,
            wide_spread_prob: 0.0,
            depth_notional: depth,
            depth_slope: 0.5,
            depth_noise: 0.3,
            inventory_depth_ratio: 6.0,
        };
        UniverseConfig {
            start_date: NaiveDate::from_ymd_opt(2019, 1, 2).unwrap(),
            train_days: 60,
            eval_days: 10,
            tick_size: 0.01,
            horizon: 30,
            step_seconds: 30.0,
            latency_seconds: 3.0,
            order_cap: 0.1,
            direction: Direction::Buy,
            snapshot_seconds: 3.0,
            warmup_snapshots: 16,
            daily_volatility: 0.01,
            volume_noise: 0.3,
            bands: vec![
                band(6, 3.0, 8.0, 12.0, 60_000.0),
                band(8, 12.0, 45.0, 6.0, 200_000.0),
                band(6, 60.0, 150.0, 4.0, 400_000.0),
            ],
        }
    }
}

impl UniverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands.iter().map(|b| b.count).sum::<usize>() == 0 {
            return Err(Error::Config("universe has no stocks".into()));
        }
        if self.train_days + self.eval_days == 0 {
            return Err(Error::Config("universe has no days".into()));
        }
        for b in &self.bands {
            if !(b.price_low > 0.0 && b.price_low <= b.price_high) {
                return Err(Error::Config(format!(
                    "bad band price range [{}, {}]",
                    b.price_low, b.price_high
                )));
            }
        }
        Ok(())
    }

    pub fn trading_days(&self) -> Vec<NaiveDate> {
        let mut days = Vec::with_capacity(self.train_days + self.eval_days);
        let mut d = self.start_date;
        while days.len() < self.train_days + self.eval_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                days.push(d);
            }
            d = d + Days::new(1);
        }
        days
    }
}

/// One stock of the synthetic universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StockProfile {
    pub stock_id: String,
    pub band: usize,
    pub base_price: f64,
    pub inventory_shares: f64,
    /// Anchor price per trading day.
    pub anchors: Vec<f64>,
}

/// Synthetic universe generating each (stock, day) episode on demand.
#[derive(Clone, Debug)]
pub struct SynthUniverse {
    pub config: UniverseConfig,
    pub seed: u64,
    pub stocks: Vec<StockProfile>,
    days: Vec<NaiveDate>,
}

impl SynthUniverse {
    pub fn new(config: UniverseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let days = config.trading_days();
        let mut rng = stream(seed, &[0x5107]);
        let mut stocks = Vec::new();
        for (b, band) in config.bands.iter().enumerate() {
            for _ in 0..band.count {
                let idx = stocks.len();
                let u: f64 = rng.random();
                let base = (band.price_low.ln()
                    + u * (band.price_high.ln() - band.price_low.ln()))
                .exp();
                let base = (base / config.tick_size).round() * config.tick_size;
                let mut anchors = Vec::with_capacity(days.len());
                let mut log_p = base.ln();
                for _ in 0..days.len() {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    log_p += config.daily_volatility * z;
                    log_p = log_p.clamp(band.price_low.ln(), band.price_high.ln());
                    anchors.push(log_p.exp());
                }
                let top_depth = band.depth_notional / base;
                stocks.push(StockProfile {
                    stock_id: format!("SYN{idx:03}"),
                    band: b,
                    base_price: base,
                    inventory_shares: (band.inventory_depth_ratio * top_depth).round().max(1.0),
                    anchors,
                });
            }
        }
        Ok(SynthUniverse {
            config,
            seed,
            stocks,
            days,
        })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    fn day_index(&self, day: NaiveDate) -> Result<usize> {
        self.days
            .binary_search(&day)
            .map_err(|_| Error::InvalidArgument(format!("{day} is not a universe trading day")))
    }

    pub fn synth_params(&self, stock: usize, day_idx: usize) -> SynthParams {
        let c = &self.config;
        let s = &self.stocks[stock];
        let band = &c.bands[s.band];
        let anchor = s.anchors[day_idx];
        SynthParams {
            episode: EpisodeSpec {
                stock_id: s.stock_id.clone(),
                trading_day: self.days[day_idx],
                tick_size: c.tick_size,
                horizon: c.horizon,
                step_seconds: c.step_seconds,
                direction: c.direction,
                latency_seconds: c.latency_seconds,
                order_cap: c.order_cap,
                inventory_shares: s.inventory_shares,
            },
            base_price: anchor,
            volatility_bps: band.volatility_bps,
            mean_reversion: band.mean_reversion,
            spread_ticks: band.spread_ticks,
            wide_spread_prob: band.wide_spread_prob,
            top_depth_shares: (band.depth_notional / anchor).max(1.0),
            depth_slope: band.depth_slope,
            depth_noise: band.depth_noise,
            snapshot_seconds: c.snapshot_seconds,
            warmup_snapshots: c.warmup_snapshots,
        }
    }

    pub fn episode(&self, stock: usize, day_idx: usize) -> Result<EpisodeData> {
        let seed = derive_seed(self.seed, &[1, stock as u64, day_idx as u64]);
        generate_synthetic_day(&self.synth_params(stock, day_idx), seed)
    }

    pub fn volume_curve(&self, stock: usize, day_idx: usize) -> Vec<f64> {
        let s = &self.stocks[stock];
        let band = &self.config.bands[s.band];
        let base = band.depth_notional / s.anchors[day_idx] * 4.0;
        let seed = derive_seed(self.seed, &[2, stock as u64, day_idx as u64]);
        synth_volume_curve(self.config.horizon, base, self.config.volume_noise, seed)
    }

    /// Writes every episode as CSV plus `manifest.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir)?;
        let mut curves = BTreeMap::new();
        for d in 0..self.days.len() {
            for s in 0..self.stocks.len() {
                let ep = self.episode(s, d)?;
                let name = episode_file_name(&ep.spec.stock_id, ep.spec.trading_day);
                write_episode_csv(&dir.join(&name), &ep)?;
                curves.insert(
                    name.trim_end_matches(".csv").to_string(),
                    self.volume_curve(s, d),
                );
            }
        }
        let c = &self.config;
        let manifest = Manifest {
            version: Manifest::VERSION,
            horizon: c.horizon,
            step_seconds: c.step_seconds,
            latency_seconds: c.latency_seconds,
            order_cap: c.order_cap,
            direction: c.direction,
            stocks: self
                .stocks
                .iter()
                .map(|s| ManifestStock {
                    stock_id: s.stock_id.clone(),
                    tick_size: c.tick_size,
                    inventory_shares: s.inventory_shares,
                })
                .collect(),
            train_days: self.days[..c.train_days].to_vec(),
            eval_days: self.days[c.train_days..].to_vec(),
            volume_curves: curves,
        };
        manifest.write(&dir.join(Manifest::FILE_NAME))?;
        Ok(manifest)
    }
}

impl DaySource for SynthUniverse {
    fn train_days(&self) -> Vec<NaiveDate> {
        self.days[..self.config.train_days].to_vec()
    }

    fn eval_days(&self) -> Vec<NaiveDate> {
        self.days[self.config.train_days..].to_vec()
    }

    fn episodes(&self, day: NaiveDate) -> Result<Vec<EpisodeData>> {
        let d = self.day_index(day)?;
        (0..self.stocks.len()).map(|s| self.episode(s, d)).collect()
    }

    fn volume_history(&self, stock_id: &str, day: NaiveDate, lookback: usize) -> Vec<Vec<f64>> {
        let Some(s) = self.stocks.iter().position(|s| s.stock_id == stock_id) else {
            return Vec::new();
        };
        let end = self.days.partition_point(|d| *d < day);
        let start = end.saturating_sub(lookback);
        (start..end).map(|d| self.volume_curve(s, d)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestStock {
    pub stock_id: String,
    pub tick_size: f64,
    pub inventory_shares: f64,
}

/// Description of an episode directory: per-stock metadata the CSV files do
/// not carry, the train/eval day split, and per-episode interval volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub horizon: usize,
    pub step_seconds: f64,
    pub latency_seconds: f64,
    pub order_cap: f64,
    pub direction: Direction,
    pub stocks: Vec<ManifestStock>,
    pub train_days: Vec<NaiveDate>,
    pub eval_days: Vec<NaiveDate>,
    /// Keyed by `{stock_id}_{YYYYMMDD}`.
    #[serde(default)]
    pub volume_curves: BTreeMap<String, Vec<f64>>,
}

impl Manifest {
    pub const VERSION: u32 = 1;
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != Self::VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn spec_for(&self, stock: &ManifestStock, day: NaiveDate) -> EpisodeSpec {
        EpisodeSpec {
            stock_id: stock.stock_id.clone(),
            trading_day: day,
            tick_size: stock.tick_size,
            horizon: self.horizon,
            step_seconds: self.step_seconds,
            direction: self.direction,
            latency_seconds: self.latency_seconds,
            order_cap: self.order_cap,
            inventory_shares: stock.inventory_shares,
        }
    }
}

/// Episode CSV directory.
#[derive(Clone, Debug)]
pub struct CsvDataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl CsvDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join(Manifest::FILE_NAME))?;
        Ok(CsvDataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn all_days(&self) -> Vec<NaiveDate> {
        let mut days: Vec<NaiveDate> = self
            .manifest
            .train_days
            .iter()
            .chain(&self.manifest.eval_days)
            .copied()
            .collect();
        days.sort();
        days.dedup();
        days
    }
}

impl DaySource for CsvDataset {
    fn train_days(&self) -> Vec<NaiveDate> {
        self.manifest.train_days.clone()
    }

    fn eval_days(&self) -> Vec<NaiveDate> {
        self.manifest.eval_days.clone()
    }

    fn episodes(&self, day: NaiveDate) -> Result<Vec<EpisodeData>> {
        let mut out = Vec::new();
        for stock in &self.manifest.stocks {
            let path = self.dir.join(episode_file_name(&stock.stock_id, day));
            if !path.exists() {
                continue;
            }
            match load_episode_csv(&path, self.manifest.spec_for(stock, day)) {
                Ok(ep) => out.push(ep),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(out)
    }

    fn volume_history(&self, stock_id: &str, day: NaiveDate, lookback: usize) -> Vec<Vec<f64>> {
        let days = self.all_days();
        let end = days.partition_point(|d| *d < day);
        days[end.saturating_sub(lookback)..end]
            .iter()
            .filter_map(|d| {
                let key = episode_file_name(stock_id, *d);
                self.manifest
                    .volume_curves
                    .get(key.trim_end_matches(".csv"))
                    .cloned()
            })
            .collect()
    }
}
