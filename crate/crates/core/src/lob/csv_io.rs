//! Episode CSV files: `{stock_id}_{YYYYMMDD}.csv` with header
//! `time_offset_s,last,bid1..bid5,bidv1..bidv5,ask1..ask5,askv1..askv5`.

use std::path::Path;

use chrono::NaiveDate;

use super::action::format_price;
use super::types::{EpisodeData, EpisodeSpec, RawSnapshot, DEPTH};
use crate::error::{Error, Result};

fn header() -> Vec<String> {
    let mut cols = vec!["time_offset_s".to_string(), "last".to_string()];
    for prefix in ["bid", "bidv", "ask", "askv"] {
        for i in 1..=DEPTH {
            cols.push(format!("{prefix}{i}"));
        }
    }
    cols
}

pub fn episode_file_name(stock_id: &str, day: NaiveDate) -> String {
    format!("{stock_id}_{}.csv", day.format("%Y%m%d"))
}

/// Splits `{stock_id}_{YYYYMMDD}.csv` into its parts.
pub fn parse_episode_file_name(path: &Path) -> Option<(String, NaiveDate)> {
    let stem = path.file_stem()?.to_str()?;
    if path.extension()?.to_str()? != "csv" {
        return None;
    }
    let (stock, date) = stem.rsplit_once('_')?;
    let day = NaiveDate::parse_from_str(date, "%Y%m%d").ok()?;
    if stock.is_empty() {
        return None;
    }
    Some((stock.to_string(), day))
}

pub fn write_episode_csv(path: &Path, episode: &EpisodeData) -> Result<()> {
    let tick = episode.spec.tick_size;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header())?;
    for snap in &episode.snapshots {
        let mut row = Vec::with_capacity(2 + 4 * DEPTH);
        row.push(format!("{}", snap.time_offset));
        row.push(format_price(snap.last, tick));
        row.extend(snap.bid_prices.iter().map(|p| format_price(*p, tick)));
        row.extend(snap.bid_volumes.iter().map(|v| v.to_string()));
        row.extend(snap.ask_prices.iter().map(|p| format_price(*p, tick)));
        row.extend(snap.ask_volumes.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads and validates one episode file. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn load_episode_csv(path: &Path, spec: EpisodeSpec) -> Result<EpisodeData> {
    spec.validate()?;
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut columns = Vec::new();
    for name in header() {
        match headers.iter().position(|h| h.trim() == name) {
            Some(i) => columns.push(i),
            None => return Err(load_err(1, format!("missing column `{name}`"))),
        }
    }

    let mut snapshots = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let mut values = [0.0f64; 2 + 4 * DEPTH];
        for (slot, &col) in values.iter_mut().zip(&columns) {
            let field = record
                .get(col)
                .ok_or_else(|| load_err(line, format!("missing field {col}")))?;
            *slot = field
                .trim()
                .parse::<f64>()
                .map_err(|e| load_err(line, format!("bad number `{field}`: {e}")))?;
        }
        let level = |offset: usize| -> [f64; DEPTH] {
            std::array::from_fn(|k| values[offset + k])
        };
        let raw = RawSnapshot {
            time_offset: values[0],
            last: values[1],
            bid_prices: level(2),
            bid_volumes: level(2 + DEPTH),
            ask_prices: level(2 + 2 * DEPTH),
            ask_volumes: level(2 + 3 * DEPTH),
        };
        if !raw.time_offset.is_finite() {
            return Err(load_err(line, "non-finite timestamp".into()));
        }
        for v in raw.bid_volumes.iter().chain(&raw.ask_volumes) {
            if *v >= 0.0 && v.fract() != 0.0 {
                return Err(load_err(line, format!("volume {v} is not an integer")));
            }
        }
        let snap = raw.to_ticks(spec.tick_size).map_err(|violations| {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            load_err(line, msgs.join("; "))
        })?;
        if let Some(prev) = snapshots.last() {
            let prev: &super::types::TickSnapshot = prev;
            if !(snap.time_offset > prev.time_offset) {
                return Err(load_err(
                    line,
                    format!(
                        "timestamp {} does not increase (previous {})",
                        snap.time_offset, prev.time_offset
                    ),
                ));
            }
        }
        snapshots.push(snap);
    }
    if snapshots.is_empty() {
        return Err(load_err(1, "file has no snapshots".into()));
    }
    Ok(EpisodeData { spec, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::Direction;
    use std::io::Write;

    fn spec() -> EpisodeSpec {
        EpisodeSpec {
            stock_id: "S1".into(),
            trading_day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            tick_size: 0.01,
            horizon: 1,
            step_seconds: 60.0,
            direction: Direction::Buy,
            latency_seconds: 3.0,
            order_cap: 0.1,
            inventory_shares: 1000.0,
        }
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("S1_20200102.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{}", header().join(",")).unwrap();
        write!(f, "{body}").unwrap();
        path
    }

    const ROW0: &str = "0,10.00,10.00,9.99,9.98,9.97,9.96,1,2,3,4,5,10.01,10.02,10.03,10.04,10.05,6,7,8,9,10\n";
    const ROW1: &str = "3,10.01,10.00,9.99,9.98,9.97,9.96,1,2,3,4,5,10.01,10.02,10.03,10.04,10.05,6,7,8,9,10\n";

    #[test]
    fn one_row_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), ROW0);
        let ep = load_episode_csv(&path, spec()).unwrap();
        assert_eq!(ep.snapshots.len(), 1);
        assert_eq!(ep.snapshots[0].best_ask(), 1001);
        assert_eq!(ep.snapshots[0].ask_volumes, [6, 7, 8, 9, 10]);
    }

    #[test]
    fn out_of_order_timestamps_fail_at_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), &format!("{ROW1}{ROW0}"));
        match load_episode_csv(&path, spec()) {
            Err(Error::Load { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_snapshot_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let bad = ROW1.replace("10.01,10.00,9.99", "10.015,10.00,9.99");
        let path = write(dir.path(), &format!("{ROW0}{bad}"));
        match load_episode_csv(&path, spec()) {
            Err(Error::Load { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("off the tick grid"), "{message}");
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("S1_20200102.csv");
        std::fs::write(&path, "time_offset_s,last\n0,10.00\n").unwrap();
        assert!(matches!(
            load_episode_csv(&path, spec()),
            Err(Error::Load { row: 1, .. })
        ));
    }

    #[test]
    fn file_names() {
        let day = NaiveDate::from_ymd_opt(2020, 3, 9).unwrap();
        let name = episode_file_name("SH600000", day);
        assert_eq!(name, "SH600000_20200309.csv");
        assert_eq!(
            parse_episode_file_name(Path::new(&name)),
            Some(("SH600000".to_string(), day))
        );
        assert_eq!(parse_episode_file_name(Path::new("manifest.json")), None);
    }
}
