//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::agent::Agent;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::lob::{CsvDataset, DaySource, SynthUniverse};
use crate::metrics::{run_strategy_logged, BacktestReport, MetricsReport, ScheduleKind, Strategy};
use crate::nets::Checkpoint;
use crate::trainer::train;

#[derive(Debug, Parser)]
#[command(name = "halop", version, about = "Limit order placement agents for optimal execution")]
pub struct Cli {
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic order-book dataset.
    GenerateData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains an agent and writes checkpoints and the learning curve.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs a strategy over a dataset and writes a JSON report.
    Backtest {
        /// Agent checkpoint, required for `--strategy policy`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `market`, `fixed-offset:<ticks>` or `policy`.
        #[arg(long, default_value = "policy")]
        strategy: String,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Twap)]
        schedule: ScheduleArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = DaySet::Eval)]
        days: DaySet,
        /// JSON-lines audit log of every policy decision.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Prints a backtest report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        group_by: Option<GroupBy>,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Twap,
    Vwap,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Twap => ScheduleKind::Twap,
            ScheduleArg::Vwap => ScheduleKind::Vwap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DaySet {
    Train,
    Eval,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    PriceBand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Md,
}

/// Machine-readable failure written to stderr by the binary.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport {
            error: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

enum StrategyArg {
    Market,
    FixedOffset(i64),
    Policy,
}

fn parse_strategy(s: &str) -> Result<StrategyArg> {
    match s {
        "market" => Ok(StrategyArg::Market),
        "policy" => Ok(StrategyArg::Policy),
        _ => s
            .strip_prefix("fixed-offset:")
            .and_then(|t| t.parse().ok())
            .map(StrategyArg::FixedOffset)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}"))),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    rounds: usize,
    best_round: Option<usize>,
    best_metrics: Option<MetricsReport>,
}

/// Runs one command; report output goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out } => {
            let config = load_config(config.as_deref(), cli.seed)?;
            let universe = SynthUniverse::new(config.data, config.seed)?;
            let manifest = universe.write_to_dir(&out)?;
            log::info!(
                "wrote {} stocks over {} days to {}",
                manifest.stocks.len(),
                manifest.train_days.len() + manifest.eval_days.len(),
                out.display()
            );
        }
        Command::Train { config, data, out } => {
            let config = load_config(config.as_deref(), cli.seed)?;
            let dataset = CsvDataset::open(&data)?;
            let mut agent = Agent::new(config.agent.clone(), config.seed)?;
            let outcome = train(&mut agent, &dataset, &config.ppo, config.seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), config.to_toml()?)?;
            outcome.write_curve(&out.join("curve.csv"))?;
            outcome.final_checkpoint.save(&out.join("final.json"))?;
            if let Some((_, _, ck)) = &outcome.best {
                ck.save(&out.join("best.json"))?;
            }
            write_json(
                &out.join("summary.json"),
                &TrainSummary {
                    seed: config.seed,
                    rounds: outcome.curve.len(),
                    best_round: outcome.best.as_ref().map(|b| b.0),
                    best_metrics: outcome.best.map(|b| b.1),
                },
            )?;
        }
        Command::Backtest {
            checkpoint,
            strategy,
            schedule,
            data,
            report,
            days,
            decisions,
        } => {
            let dataset = CsvDataset::open(&data)?;
            let days = match days {
                DaySet::Train => dataset.train_days(),
                DaySet::Eval => dataset.eval_days(),
                DaySet::All => {
                    let mut d = dataset.train_days();
                    d.extend(dataset.eval_days());
                    d.sort();
                    d
                }
            };
            let agent = match (&checkpoint, parse_strategy(&strategy)?) {
                (Some(p), StrategyArg::Policy) => Some(Agent::from_checkpoint(&Checkpoint::load(p)?)?),
                (None, StrategyArg::Policy) => {
                    return Err(Error::InvalidArgument("--strategy policy needs --checkpoint".into()))
                }
                _ => None,
            };
            let strat = match (parse_strategy(&strategy)?, &agent) {
                (StrategyArg::Market, _) => Strategy::Market,
                (StrategyArg::FixedOffset(ticks), _) => Strategy::FixedOffset { ticks },
                (StrategyArg::Policy, Some(a)) => Strategy::Policy(a),
                (StrategyArg::Policy, None) => unreachable!("checked above"),
            };
            let schedule = ScheduleKind::from(schedule);
            let logged = run_strategy_logged(strat, &dataset, &days, schedule)?;
            if let Some(path) = decisions {
                use std::io::Write as _;
                let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                for rec in logged.iter().flat_map(|(_, d)| d) {
                    serde_json::to_writer(&mut w, rec)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let results = logged.into_iter().map(|(r, _)| r).collect();
            let rep = BacktestReport::new(strat.name(), schedule, results)?;
            write_json(&report, &rep)?;
        }
        Command::Report { input, group_by, format } => {
            let text = std::fs::read_to_string(&input)?;
            let rep: BacktestReport = serde_json::from_str(&text)?;
            let rendered = render_report(&rep, group_by.is_some(), format)?;
            stdout.write_all(rendered.as_bytes())?;
        }
    }
    Ok(())
}

fn fmt_t(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.3}")
    } else if t > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Renders a report as a JSON document, CSV rows or a markdown table.
pub fn render_report(rep: &BacktestReport, by_band: bool, format: Format) -> Result<String> {
    let mut rows: Vec<(String, usize, Option<&MetricsReport>)> = vec![("all".into(), rep.metrics.n, Some(&rep.metrics))];
    if by_band {
        rows.extend(rep.bands.iter().map(|b| (b.band.name().to_string(), b.n, b.metrics.as_ref())));
    }
    let mut out = String::new();
    match format {
        Format::Json => {
            if by_band {
                out = serde_json::to_string_pretty(&serde_json::json!({
                    "strategy": rep.strategy,
                    "schedule": rep.schedule,
                    "metrics": rep.metrics,
                    "bands": rep.bands,
                }))?;
            } else {
                out = serde_json::to_string_pretty(&serde_json::json!({
                    "strategy": rep.strategy,
                    "schedule": rep.schedule,
                    "metrics": rep.metrics,
                }))?;
            }
            out.push('\n');
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["group", "n", "return_bps", "std_bps", "t_value", "pnl_bps", "violations"])?;
            for (name, n, m) in &rows {
                let cells = match m {
                    Some(m) => vec![
                        format!("{:.6}", m.return_bps),
                        format!("{:.6}", m.std_bps),
                        fmt_t(m.t_value),
                        format!("{:.6}", m.pnl_bps),
                        m.violations.to_string(),
                    ],
                    None => vec![String::new(); 5],
                };
                let mut rec = vec![name.clone(), n.to_string()];
                rec.extend(cells);
                w.write_record(&rec)?;
            }
            out = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
                .expect("csv output is utf-8");
        }
        Format::Md => {
            let _ = writeln!(out, "Strategy `{}`, {:?} schedule\n", rep.strategy, rep.schedule);
            out.push_str("| group | n | Return (bps) | Std (bps) | t | PnL (bps) |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            for (name, n, m) in &rows {
                match m {
                    Some(m) => {
                        let _ = writeln!(
                            out,
                            "| {name} | {n} | {:.2} | {:.2} | {} | {:.2} |",
                            m.return_bps,
                            m.std_bps,
                            fmt_t(m.t_value),
                            m.pnl_bps
                        );
                    }
                    None => {
                        let _ = writeln!(out, "| {name} | {n} | - | - | - | - |");
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::PriceBand;
    use crate::metrics::EpisodeResult;
    use chrono::NaiveDate;

    fn report() -> BacktestReport {
        let r = |x: f64, close: f64| EpisodeResult {
            stock_id: "S".into(),
            day: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            close_price: close,
            band: PriceBand::of(close),
            excess_bps: x,
            reward_bps: x,
            cancellation_violation: false,
            submitted_volume: 1.0,
            final_deficit: 0.0,
        };
        BacktestReport::new("market".into(), ScheduleKind::Twap, vec![r(0.0, 5.0), r(2.0, 5.0), r(4.0, 20.0)]).unwrap()
    }

    #[test]
    fn renders_every_format() {
        let rep = report();
        let md = render_report(&rep, true, Format::Md).unwrap();
        assert!(md.contains("| all | 3 | 2.00 |"));
        assert!(md.contains("| medium | 1 | - |"));
        let csv = render_report(&rep, false, Format::Csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        let json = render_report(&rep, true, Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["bands"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn strategy_names() {
        assert!(matches!(parse_strategy("fixed-offset:-2").unwrap(), StrategyArg::FixedOffset(-2)));
        assert!(parse_strategy("twap").is_err());
        assert!(parse_strategy("fixed-offset:x").is_err());
    }

    #[test]
    fn policy_backtest_needs_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = crate::lob::UniverseConfig::default();
        c.train_days = 1;
        c.eval_days = 1;
        c.horizon = 12;
        c.bands.iter_mut().for_each(|b| b.count = 1);
        SynthUniverse::new(c, 1).unwrap().write_to_dir(dir.path()).unwrap();
        let args = |strategy: &str| {
            Cli::parse_from([
                "halop",
                "backtest",
                "--strategy",
                strategy,
                "--data",
                dir.path().to_str().unwrap(),
                "--report",
                dir.path().join("r.json").to_str().unwrap(),
            ])
        };
        assert_eq!(run(args("policy"), &mut Vec::new()).unwrap_err().kind(), "invalid-argument");
        run(args("market"), &mut Vec::new()).unwrap();
        let rep: BacktestReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(rep.metrics.return_bps, 0.0);
        let missing = Cli::parse_from(["halop", "backtest", "--data", "/nonexistent", "--report", "r.json"]);
        assert_eq!(run(missing, &mut Vec::new()).unwrap_err().kind(), "io");
    }

    #[test]
    fn policy_backtest_writes_decision_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = crate::lob::UniverseConfig::default();
        c.train_days = 1;
        c.eval_days = 1;
        c.horizon = 12;
        c.bands.iter_mut().for_each(|b| b.count = 1);
        SynthUniverse::new(c, 1).unwrap().write_to_dir(dir.path()).unwrap();
        let ck = dir.path().join("ck.json");
        Agent::new(Default::default(), 3).unwrap().to_checkpoint().unwrap().save(&ck).unwrap();
        let log = dir.path().join("decisions.jsonl");
        let cli = Cli::parse_from([
            "halop",
            "backtest",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            dir.path().to_str().unwrap(),
            "--report",
            dir.path().join("r.json").to_str().unwrap(),
            "--decisions",
            log.to_str().unwrap(),
        ]);
        run(cli, &mut Vec::new()).unwrap();
        let rep: BacktestReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let recs: Vec<crate::metrics::DecisionRecord> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), rep.metrics.n * 12);
        assert!(recs.iter().all(|r| r.state_digest.len() == 64 && (1..=12).contains(&r.step)));
        assert!(recs.iter().all(|r| r.decision.stage1.is_some() && r.decision.stage2.is_some()));
    }
}
