//! `lifi-sim`: runs the throughput and feedback experiments and writes one
//! CSV plus a JSON sidecar per table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use lifi_feedback::channel;
use lifi_feedback::config::NetworkConfig;
use lifi_feedback::feedback::{resolve_threshold, FeedbackScheme, SchemeKind};
use lifi_feedback::montecarlo::{
    channel_flatness, compare_schemes_downlink, gain_map, metadata, overhead_table, overload_sweep,
    power_sweep, scenario_sweep, table4, topt_sweep, version, ExperimentConfig, OverloadParam,
    ResultTable, Tier,
};
use lifi_feedback::Error;

const THREADS_ENV: &str = "LIFI_SIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lifi-sim", version, about = "LiFi feedback and throughput experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat JSON network configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,

    /// Run-count tier.
    #[arg(long, global = true, value_enum, default_value_t = TierArg::Paper)]
    tier: TierArg,

    /// Restrict to these schemes (comma separated).
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    scheme: Vec<SchemeArg>,

    /// Speeds in m/s (comma separated); replaces the command's default grid.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    velocity: Vec<f64>,

    /// Fixed update interval in seconds for the periodic scenario.
    #[arg(long = "t-u", global = true)]
    t_u: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// DC gain over the floor plane and multipath flatness.
    ChannelMap {
        /// Grid step in metres.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Downlink throughput of FF, LCF and one-bit against the number of UEs.
    DownlinkCompare,
    /// Feedback bits per frame against the IFFT size.
    Overhead,
    /// Optimal update interval against speed and downlink power.
    Topt,
    /// Optimal update interval against the overload factor.
    Overload {
        #[arg(long, value_enum, default_value_t = ParamArg::AchievedFraction)]
        param: ParamArg,
    },
    /// No update, fixed interval and adaptive interval against speed.
    Scenarios,
    /// Expected sum throughput of the four schemes.
    Table4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TierArg {
    Smoke,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Ff,
    Onebit,
    Lcf,
    Lff,
}

impl SchemeArg {
    fn name(self) -> &'static str {
        match self {
            SchemeArg::Ff => "ff",
            SchemeArg::Onebit => "onebit",
            SchemeArg::Lcf => "lcf",
            SchemeArg::Lff => "lff",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParamArg {
    AchievedFraction,
    RequestScaling,
}

struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config { .. } => 2,
            Error::NoRoot { .. } => 4,
            Error::Io(_) => 1,
            _ => 3,
        };
        Failure { code, error }
    }
}

impl Failure {
    fn report(&self) -> Value {
        let mut v = json!({
            "error": self.error.kind(),
            "message": self.error.to_string(),
            "exit_code": self.code,
        });
        if let Error::Config { key, .. } = &self.error {
            v["key"] = json!(key);
        }
        v
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            let mut so = std::io::stdout().lock();
            for p in written {
                if writeln!(so, "{}", p.display()).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.code)
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text.trim().parse().map_err(|_| Error::Config {
        key: THREADS_ENV.into(),
        reason: format!("expected a thread count, got {text:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config {
            key: THREADS_ENV.into(),
            reason: e.to_string(),
        })
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    init_threads()?;
    let net = match &cli.config {
        Some(p) => NetworkConfig::from_path(p)?,
        None => NetworkConfig::default(),
    };
    fs::create_dir_all(&cli.out).map_err(Error::from)?;
    let tier = match cli.tier {
        TierArg::Smoke => Tier::Smoke,
        TierArg::Paper => Tier::Paper,
    };
    let smoke = matches!(tier, Tier::Smoke);
    let exp = |paper_runs: usize, default_v: &[f64]| -> ExperimentConfig {
        let mut v = if cli.velocity.is_empty() {
            default_v.to_vec()
        } else {
            cli.velocity.clone()
        };
        v.sort_by(f64::total_cmp);
        ExperimentConfig {
            velocity_grid: v,
            ..ExperimentConfig::new(tier.runs(paper_runs), cli.seed)
        }
    };
    let mut written = Vec::new();
    let mut save = |t: &ResultTable| -> Result<(), Failure> {
        let (c, j) = t.save(&cli.out)?;
        written.extend([c, j]);
        Ok(())
    };
    let mut extra = Vec::new();

    match &cli.command {
        Command::ChannelMap { step } => {
            let step = step.unwrap_or(if smoke { 0.25 } else { 0.1 });
            let e = exp(1, &[0.0]);
            let meta = metadata(&net, &e, json!({"step_m": step}));
            let rows = gain_map(&net, step)?;
            let (c, j) = write_gain_map(&cli.out, &rows, &meta)?;
            extra.extend([c, j]);
            let positions = [(0.0, 0.0), (1.2, 0.8), (-2.5, 3.0), (3.3, -3.3), (-4.5, -4.5)];
            let db = channel_flatness(&net, &positions)?;
            let mut t = ResultTable::new("fig3_flatness", "position", metadata(&net, &e, json!({"positions_m": positions})));
            for (i, d) in db.into_iter().enumerate() {
                t.push("fluctuation_db", i as f64, d, 0.0, 1);
            }
            save(&t)?;
        }
        Command::DownlinkCompare => {
            let mut e = exp(1_000, &[0.0]);
            let threshold = resolve_threshold(net.onebit_threshold, &net.link());
            for s in &cli.scheme {
                let kind = match s {
                    SchemeArg::Ff => SchemeKind::Full,
                    SchemeArg::Onebit => SchemeKind::OneBit { threshold },
                    SchemeArg::Lcf => SchemeKind::Lcf,
                    SchemeArg::Lff => SchemeKind::Lff {
                        update_interval: cli.t_u.unwrap_or(0.1),
                    },
                };
                e.schemes.push(FeedbackScheme::new(kind, net.bits_per_sinr)?);
            }
            let sizes = [1, 5, 10, 15, 20];
            let rates = [20e6, 40e6];
            let mut merged: Option<ResultTable> = None;
            for r in rates {
                let t = compare_schemes_downlink(&net, &e, &sizes, r)?;
                let m = merged.get_or_insert_with(|| {
                    let mut meta = t.metadata.clone();
                    meta["extra"]["r_req_bps"] = json!(rates);
                    ResultTable::new(&t.name, &t.x_label, meta)
                });
                for row in t.rows {
                    m.push(&format!("{}-{}mbps", row.series, r / 1e6), row.x, row.mean, row.stderr, row.n);
                }
            }
            save(&merged.expect("at least one rate"))?;
        }
        Command::Overhead => {
            let e = exp(1, &[1.0]);
            let v = e.velocity_grid[0];
            let t = overhead_table(&net, &e, &[64, 128, 256, 512, 1024, 2048], v)?;
            save(&filter_schemes(t, &cli.scheme))?;
        }
        Command::Topt => {
            let grid = if smoke { 20 } else { 200 };
            let e = exp(10_000, &[0.5, 1.0, 1.4, 2.0, 2.5]);
            save(&topt_sweep(&net, &e, &[5e6, 20e6], grid)?)?;
            let powers: Vec<f64> = (1..=20).map(f64::from).collect();
            let e = exp(1, &[0.5, 1.0, 2.0]);
            save(&power_sweep(&net, &e, &powers)?)?;
        }
        Command::Overload { param } => {
            let grid = if smoke { 20 } else { 120 };
            let e = exp(2_000, &[1.0, 1.4, 2.0]);
            let param = match param {
                ParamArg::AchievedFraction => OverloadParam::AchievedFraction,
                ParamArg::RequestScaling => OverloadParam::RequestScaling,
            };
            save(&overload_sweep(&net, &e, &[0.2, 0.4, 0.6, 0.8, 1.0], param, grid)?)?;
        }
        Command::Scenarios => {
            let e = exp(1_000, &[0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5]);
            save(&scenario_sweep(&net, &e, 20e6, cli.t_u.unwrap_or(0.01))?)?;
        }
        Command::Table4 => {
            let e = exp(10_000, &[0.0, 1.0]);
            save(&filter_schemes(table4(&net, &e)?, &cli.scheme))?;
        }
    }
    extra.extend(written);
    Ok(extra)
}

fn filter_schemes(mut t: ResultTable, keep: &[SchemeArg]) -> ResultTable {
    if !keep.is_empty() {
        t.rows.retain(|r| keep.iter().any(|s| s.name() == r.series));
    }
    t
}

fn write_gain_map(dir: &Path, rows: &[(f64, f64, f64)], meta: &Value) -> Result<(PathBuf, PathBuf), Error> {
    let path = dir.join("fig3.csv");
    let mut buf = Vec::new();
    writeln!(buf, "# table: fig3")?;
    writeln!(buf, "# seed: {}", meta["seed"])?;
    writeln!(buf, "# version: {}", version())?;
    writeln!(buf, "# config: {meta}")?;
    channel::write_gain_map(&mut buf, rows)?;
    fs::write(&path, buf)?;
    let side = json!({
        "table": "fig3",
        "columns": ["x", "y", "gain"],
        "rows": rows.len(),
        "version": version(),
        "metadata": meta,
    });
    let json_path = dir.join("fig3.json");
    fs::write(&json_path, serde_json::to_string_pretty(&side).expect("json") + "\n")?;
    Ok((path, json_path))
}
