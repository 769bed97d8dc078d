//! Monte-Carlo experiments: expected sum throughput against the update
//! interval, greedy optimal-interval search, feedback-scheme comparisons and
//! the mobility scenarios.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::channel::{fluctuation_db, normalized_frequency_response, Scene, Vec3};
use crate::config::{LinkBudget, NamedThreshold, NetworkConfig, ThresholdSetting};
use crate::downlink::{
    downlink_rate, downlink_sinr_vector, fair_schedule, schedule_by, simplified_sinr_vector, OfdmaConfig, RateMode,
    SinrVector, UeDemand,
};
use crate::error::{Error, Result};
use crate::feedback::{
    lcf_estimate, lff_frames, one_bit_rate, one_bit_schedule, overhead_per_frame, resolve_threshold,
    FeedbackScheme, OverheadScheme, SchemeKind,
};
use crate::interval::{breakdown, t_opt_closed_form, t_opt_numeric, UpdateIntervalParams};
use crate::mobility::{sample_initial, UeState};
use crate::quad::Rule;
use crate::stats::{mean_stderr, run_rng, NeumaierSum};
use crate::uplink::uplink_sinr;

const STREAM_TOPT: u32 = 1;
const STREAM_CELL: u32 = 2;
const STREAM_PILOT: u32 = 3;
const STREAM_FIG4: u32 = 4;

/// Run-count tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Smoke,
    Paper,
}

impl Tier {
    pub const SMOKE_RUNS: usize = 100;

    /// Runs to use for an experiment whose full-scale count is `paper`.
    pub fn runs(self, paper: usize) -> usize {
        match self {
            Tier::Smoke => Self::SMOKE_RUNS.min(paper),
            Tier::Paper => paper,
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Tier::Smoke),
            "paper" => Ok(Tier::Paper),
            _ => Err(Error::param("tier", format!("expected smoke or paper, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    /// Full feedback once, kept until the UE leaves the cell.
    NoUpdate,
    /// One-bit feedback every `t_u` seconds.
    FixedInterval { t_u: f64 },
    /// Full feedback every optimal interval.
    AdaptiveLff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_runs: usize,
    pub seed: u64,
    pub t_u_grid: Vec<f64>,
    pub velocity_grid: Vec<f64>,
    pub schemes: Vec<FeedbackScheme>,
    pub scenario: Scenario,
}

impl ExperimentConfig {
    pub fn new(n_runs: usize, seed: u64) -> Self {
        ExperimentConfig {
            n_runs,
            seed,
            t_u_grid: vec![0.01, 0.1, 1.0],
            velocity_grid: vec![0.5, 1.0, 1.4, 2.0, 2.5],
            schemes: Vec::new(),
            scenario: Scenario::AdaptiveLff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::param("n_runs", "must be at least 1"));
        }
        for (name, g) in [("t_u_grid", &self.t_u_grid), ("velocity_grid", &self.velocity_grid)] {
            if g.is_empty() {
                return Err(Error::param(name, "must not be empty"));
            }
            if g.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(Error::param(name, "must be sorted ascending"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Experiment output: one row per (series, x) with a metadata echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub x_label: String,
    pub rows: Vec<ResultRow>,
    pub metadata: Value,
}

impl ResultTable {
    pub fn new(name: &str, x_label: &str, metadata: Value) -> Self {
        ResultTable {
            name: name.to_string(),
            x_label: x_label.to_string(),
            rows: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, series: &str, x: f64, mean: f64, stderr: f64, n: usize) {
        self.rows.push(ResultRow {
            series: series.to_string(),
            x,
            mean,
            stderr,
            n,
        });
    }

    pub fn get(&self, series: &str, x: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.series == series && r.x == x)
    }

    pub fn series(&self, series: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.series == series).collect()
    }

    /// CSV preceded by `#` lines carrying the table name, seed, version and
    /// the resolved configuration.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# table: {}", self.name)?;
        writeln!(w, "# seed: {}", self.metadata.get("seed").unwrap_or(&Value::Null))?;
        writeln!(w, "# version: {}", version())?;
        writeln!(w, "# config: {}", self.metadata)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["series", self.x_label.as_str(), "mean", "stderr", "n"])?;
        for r in &self.rows {
            wr.write_record([
                r.series.clone(),
                r.x.to_string(),
                r.mean.to_string(),
                r.stderr.to_string(),
                r.n.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> Value {
        json!({
            "table": self.name,
            "x": self.x_label,
            "columns": ["series", self.x_label, "mean", "stderr", "n"],
            "rows": self.rows.len(),
            "version": version(),
            "metadata": self.metadata,
        })
    }

    /// Writes `<name>.csv` and `<name>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        let json_path = dir.join(format!("{}.json", self.name));
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(&csv_path, buf)?;
        let text = serde_json::to_string_pretty(&self.sidecar()).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&json_path, text + "\n")?;
        Ok((csv_path, json_path))
    }
}

pub fn version() -> String {
    format!("lifi-feedback {}", env!("CARGO_PKG_VERSION"))
}

/// Metadata echo shared by every table.
pub fn metadata(net: &NetworkConfig, exp: &ExperimentConfig, extra: Value) -> Value {
    json!({
        "seed": exp.seed,
        "version": version(),
        "network": net.to_json(),
        "experiment": exp,
        "extra": extra,
    })
}

/// Runs `f(run)` for every run index in parallel and reduces in index order.
fn mc_runs<F>(n_runs: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..n_runs as u64).into_par_iter().map(f).collect()
}

/// `(r0, θ)` draws of one experiment; identical for every grid point.
pub fn initial_draws(seed: u64, n_runs: usize, cell_radius: f64) -> Vec<(f64, f64)> {
    (0..n_runs as u64)
        .map(|run| sample_initial(&mut run_rng(seed, STREAM_TOPT, run), cell_radius))
        .collect()
}

/// Monte-Carlo estimate of E[w_u R̄_u + w_d R̄_d] at interval `t_u`.
pub fn expected_sum_throughput(t_u: f64, p: &UpdateIntervalParams, exp: &ExperimentConfig) -> Result<(f64, f64)> {
    if exp.n_runs == 0 {
        return Err(Error::param("n_runs", "must be at least 1"));
    }
    let draws = initial_draws(exp.seed, exp.n_runs, p.link.cell_radius);
    let xs = mc_runs(exp.n_runs, |run| {
        let (r0, th) = draws[run as usize];
        Ok(breakdown(t_u, r0, th, p)?.weighted_sum)
    })?;
    Ok(mean_stderr(&xs))
}

/// `n` log-spaced intervals on `(1.01 t_fb, 0.999 · 2 r_c / v)`.
pub fn topt_grid(p: &UpdateIntervalParams, n: usize) -> Result<Vec<f64>> {
    if !(p.v > 0.0) || n < 2 {
        return Err(Error::param("v", "interval grid needs a positive speed and two points"));
    }
    let lo = 1.01 * p.t_fb;
    let hi = 0.999 * p.max_interval();
    Ok((0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect())
}

/// Grid argmax of the Monte-Carlo expected sum throughput, with the same
/// draws at every grid point.
pub fn greedy_search_topt(p: &UpdateIntervalParams, exp: &ExperimentConfig) -> Result<f64> {
    let grid: Vec<f64> = exp
        .t_u_grid
        .iter()
        .copied()
        .filter(|&t| t > p.t_fb && t < p.max_interval())
        .collect();
    if grid.len() < 3 {
        return Err(Error::param("t_u_grid", "fewer than three admissible intervals"));
    }
    let draws = initial_draws(exp.seed, exp.n_runs, p.link.cell_radius);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&t| {
            let mut acc = NeumaierSum::default();
            for &(r0, th) in &draws {
                acc.add(breakdown(t, r0, th, p)?.weighted_sum);
            }
            Ok(acc.total())
        })
        .collect::<Result<_>>()?;
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    Ok(grid[best])
}

/// Which feedback a UE sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Full,
    OneBit,
    Lcf,
}

/// How often reports are sent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    PerFrame,
    Every(f64),
    UntilExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdatePlan {
    pub report: ReportKind,
    pub cadence: Cadence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UeOutcome {
    pub uplink: f64,
    pub downlink: f64,
}

/// Single attocell with the LOS SINR model, `n_ues` UEs moving on straight
/// legs and an allocation frozen between updates.
#[derive(Debug, Clone)]
pub struct CellModel {
    pub link: LinkBudget,
    pub n_ues: usize,
    pub r_req: f64,
    pub w_u: f64,
    pub w_d: f64,
    pub t_fb: f64,
    pub t_fr: f64,
    pub bits_per_sinr: u64,
    pub mac_throughput: f64,
    pub threshold: f64,
    decay: Vec<f64>,
    rule: Rule,
}

impl CellModel {
    pub fn from_config(cfg: &NetworkConfig, r_req: f64) -> Result<Self> {
        let p = UpdateIntervalParams::from_config(cfg, 0.0)?;
        let link = p.link;
        let c = link.subcarrier_decay();
        Ok(CellModel {
            link,
            n_ues: p.n_ues,
            r_req,
            w_u: p.w_u,
            w_d: p.w_d,
            t_fb: p.t_fb,
            t_fr: cfg.t_fr(),
            bits_per_sinr: cfg.bits_per_sinr as u64,
            mac_throughput: p.mac_throughput,
            threshold: resolve_threshold(cfg.onebit_threshold, &link),
            decay: (1..=link.data_subcarriers()).map(|k| (-c * k as f64).exp()).collect(),
            rule: Rule::new(24),
        })
    }

    fn report_share(&self, report: ReportKind) -> f64 {
        let n = self.link.data_subcarriers() as f64;
        let full = self.bits_per_sinr as f64 * n;
        match report {
            ReportKind::Full => 1.0,
            ReportKind::OneBit => n / full,
            ReportKind::Lcf => self.bits_per_sinr as f64 / full,
        }
    }

    /// Uplink airtime spent on feedback when the allocation is held for
    /// `window` seconds.
    pub fn airtime(&self, plan: UpdatePlan, window: f64) -> f64 {
        let share = self.report_share(plan.report);
        let e = match plan.cadence {
            Cadence::PerFrame => share * self.t_fb / self.t_fr,
            _ if window.is_infinite() => 0.0,
            _ => share * self.t_fb / window,
        };
        e.min(1.0)
    }

    /// Per-UE outcomes of one run. The run's generator supplies the UE
    /// draws first, then any scheduling randomness.
    pub fn run(&self, rng: &mut ChaCha8Rng, v: f64, plan: UpdatePlan) -> Result<Vec<UeOutcome>> {
        let ues: Vec<UeState> = (0..self.n_ues)
            .map(|_| {
                let (r0, th) = sample_initial(rng, self.link.cell_radius);
                UeState::new(r0, th, v, self.link.cell_radius)
            })
            .collect::<Result<_>>()?;
        let df = self.link.subcarrier_spacing();
        let n = self.link.data_subcarriers();
        let demands = vec![UeDemand::fresh(self.r_req); self.n_ues];
        let sinrs: Vec<SinrVector> = ues.iter().map(|u| simplified_sinr_vector(u.r0, &self.link)).collect();
        let fixed = df * (1.0 + self.threshold).log2();
        // Under the LOS model the LCF rescaling of the connection-time vector
        // is exact, so LCF schedules like full feedback.
        let alloc = match plan.report {
            ReportKind::Full | ReportKind::Lcf => {
                schedule_by(&demands, n, |j, k| df * (1.0 + sinrs[j].at(k)).log2())
            }
            ReportKind::OneBit => {
                let bits: Vec<Vec<bool>> = sinrs
                    .iter()
                    .map(|s| s.per_subcarrier.iter().map(|&g| g >= self.threshold).collect())
                    .collect();
                one_bit_schedule(&demands, &bits, fixed, rng, false)?
            }
        };
        let hold = match plan.cadence {
            Cadence::PerFrame => self.t_fr,
            Cadence::Every(t) => t,
            Cadence::UntilExit => f64::INFINITY,
        };
        let ul_scale = self.mac_throughput * self.link.b_un / self.n_ues as f64;
        let mut out = Vec::with_capacity(self.n_ues);
        for (j, ue) in ues.iter().enumerate() {
            let owned: Vec<usize> = alloc.subcarriers_of(j).collect();
            let window = hold.min(ue.exit_time());
            let served = |r: f64| -> f64 {
                let base = self.link.g_dl / self.link.path_loss(r);
                let raw: f64 = match plan.report {
                    ReportKind::OneBit => owned
                        .iter()
                        .filter(|&&k| base * self.decay[k - 1] >= self.threshold)
                        .count() as f64
                        * fixed,
                    _ => owned.iter().map(|&k| (1.0 + base * self.decay[k - 1]).log2()).sum::<f64>() * df,
                };
                raw.min(self.r_req)
            };
            let up = |r: f64| (1.0 + uplink_sinr(r, &self.link)).log2();
            let (d, u) = if window.is_infinite() || v * window <= 1e-9 * self.link.h {
                (served(ue.r0), up(ue.r0))
            } else {
                let mut d = 0.0;
                let mut u = 0.0;
                for (t, w) in self.rule.mapped(0.0, window) {
                    let r = ue.radial_distance_at(t);
                    d += w * served(r);
                    u += w * up(r);
                }
                (d / window, u / window)
            };
            out.push(UeOutcome {
                uplink: (1.0 - self.airtime(plan, window)) * ul_scale * u,
                downlink: d,
            });
        }
        Ok(out)
    }

    /// Mean over UEs of `w_u U + w_d D`.
    pub fn score(&self, out: &[UeOutcome]) -> f64 {
        out.iter().map(|o| self.w_u * o.uplink + self.w_d * o.downlink).sum::<f64>() / out.len() as f64
    }

    /// Mean and standard error of the per-run score in bit/s.
    pub fn expected(&self, seed: u64, n_runs: usize, v: f64, plan: UpdatePlan) -> Result<(f64, f64)> {
        let xs = mc_runs(n_runs, |run| {
            let mut rng = run_rng(seed, STREAM_CELL, run);
            Ok(self.score(&self.run(&mut rng, v, plan)?))
        })?;
        Ok(mean_stderr(&xs))
    }

    /// Fraction of the requested rate delivered right after a full update,
    /// averaged over `n_runs` placements.
    pub fn estimate_lambda(&self, seed: u64, n_runs: usize) -> Result<f64> {
        let plan = UpdatePlan {
            report: ReportKind::Full,
            cadence: Cadence::UntilExit,
        };
        let xs = mc_runs(n_runs, |run| {
            let mut rng = run_rng(seed, STREAM_PILOT, run);
            let out = self.run(&mut rng, 0.0, plan)?;
            Ok(out.iter().map(|o| o.downlink).sum::<f64>() / (self.n_ues as f64 * self.r_req))
        })?;
        Ok(mean_stderr(&xs).0.clamp(f64::MIN_POSITIVE, 1.0))
    }
}

/// Update plan realising `scenario` at speed `v`. The adaptive interval is
/// the overloaded closed form with the given `lambda`.
pub fn scenario_plan(scenario: Scenario, net: &NetworkConfig, r_req: f64, lambda: f64, v: f64) -> Result<UpdatePlan> {
    Ok(match scenario {
        Scenario::NoUpdate => UpdatePlan {
            report: ReportKind::Full,
            cadence: Cadence::UntilExit,
        },
        Scenario::FixedInterval { t_u } => UpdatePlan {
            report: ReportKind::OneBit,
            cadence: Cadence::Every(t_u),
        },
        Scenario::AdaptiveLff => {
            let cadence = if v > 0.0 {
                let mut p = UpdateIntervalParams::from_config(net, v)?;
                p.r_req = r_req;
                p.lambda = lambda;
                Cadence::Every(t_opt_closed_form(&p, true)?)
            } else {
                Cadence::UntilExit
            };
            UpdatePlan {
                report: ReportKind::Full,
                cadence,
            }
        }
    })
}

/// Expected sum throughput for the no-update, fixed-interval one-bit and
/// adaptive schemes against speed. Throughputs are in Mbit/s.
pub fn scenario_sweep(net: &NetworkConfig, exp: &ExperimentConfig, r_req: f64, fixed_interval: f64) -> Result<ResultTable> {
    exp.validate()?;
    let model = CellModel::from_config(net, r_req)?;
    let pilot = exp.n_runs.min(1000);
    let lambda = model.estimate_lambda(exp.seed, pilot)?;
    let mut table = ResultTable::new(
        "fig12_2",
        "v_mps",
        metadata(net, exp, json!({"r_req_bps": r_req, "fixed_interval_s": fixed_interval, "lambda_estimate": lambda})),
    );
    let scenarios = [
        ("I", Scenario::NoUpdate),
        ("II", Scenario::FixedInterval { t_u: fixed_interval }),
        ("III", Scenario::AdaptiveLff),
    ];
    for &v in &exp.velocity_grid {
        for (name, s) in scenarios {
            let plan = scenario_plan(s, net, r_req, lambda, v)?;
            let (m, se) = model.expected(exp.seed, exp.n_runs, v, plan)?;
            table.push(name, v, m / 1e6, se / 1e6, exp.n_runs);
        }
    }
    Ok(table)
}

/// Expected sum throughput of FF, one-bit, LCF and LFF for each speed in
/// the grid, in Mbit/s. LFF updates at the closed-form optimum.
pub fn table4(net: &NetworkConfig, exp: &ExperimentConfig) -> Result<ResultTable> {
    exp.validate()?;
    let model = CellModel::from_config(net, net.r_req())?;
    let mut table = ResultTable::new("table4", "v_mps", metadata(net, exp, json!({"r_req_bps": net.r_req()})));
    for &v in &exp.velocity_grid {
        let lff = if v > 0.0 {
            Cadence::Every(t_opt_closed_form(&UpdateIntervalParams::from_config(net, v)?, false)?)
        } else {
            Cadence::UntilExit
        };
        let plans = [
            ("ff", ReportKind::Full, Cadence::PerFrame),
            ("onebit", ReportKind::OneBit, Cadence::PerFrame),
            ("lcf", ReportKind::Lcf, Cadence::PerFrame),
            ("lff", ReportKind::Full, lff),
        ];
        for (name, report, cadence) in plans {
            let (m, se) = model.expected(exp.seed, exp.n_runs, v, UpdatePlan { report, cadence })?;
            table.push(name, v, m / 1e6, se / 1e6, exp.n_runs);
        }
    }
    Ok(table)
}

/// Closed-form, numeric and greedy optimal intervals against speed for
/// each requested rate.
pub fn topt_sweep(net: &NetworkConfig, exp: &ExperimentConfig, r_reqs: &[f64], grid_points: usize) -> Result<ResultTable> {
    exp.validate()?;
    let mut table = ResultTable::new("fig13a", "v_mps", metadata(net, exp, json!({"r_req_bps": r_reqs, "grid_points": grid_points})));
    for &r in r_reqs {
        let tag = format!("{}mbps", r / 1e6);
        for &v in &exp.velocity_grid {
            let mut p = UpdateIntervalParams::from_config(net, v)?;
            p.r_req = r;
            let grid = topt_grid(&p, grid_points)?;
            let e = ExperimentConfig {
                t_u_grid: grid,
                ..exp.clone()
            };
            table.push(&format!("closed-{tag}"), v, t_opt_closed_form(&p, false)?, 0.0, 1);
            table.push(&format!("numeric-{tag}"), v, t_opt_numeric(&p)?, 0.0, 1);
            table.push(&format!("greedy-{tag}"), v, greedy_search_topt(&p, &e)?, 0.0, exp.n_runs);
        }
    }
    Ok(table)
}

/// Optimal interval against downlink optical power.
pub fn power_sweep(net: &NetworkConfig, exp: &ExperimentConfig, powers_w: &[f64]) -> Result<ResultTable> {
    exp.validate()?;
    let mut table = ResultTable::new("fig13b", "downlink_power_w", metadata(net, exp, json!({"powers_w": powers_w})));
    for &v in &exp.velocity_grid {
        for &pw in powers_w {
            let cfg = NetworkConfig {
                downlink_power_w: pw,
                ..net.clone()
            };
            let p = UpdateIntervalParams::from_config(&cfg, v)?;
            table.push(&format!("closed-v{v}"), pw, t_opt_closed_form(&p, false)?, 0.0, 1);
            table.push(&format!("numeric-v{v}"), pw, t_opt_numeric(&p)?, 0.0, 1);
        }
    }
    Ok(table)
}

/// How the overload factor enters the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverloadParam {
    /// `R_req` fixed; each UE receives `λ R_req`.
    AchievedFraction,
    /// `R_req` raised to `R_req / λ` at fixed N; each UE still receives the
    /// base rate.
    RequestScaling,
}

/// Greedy and overloaded closed-form optimal intervals over `(λ, v)`.
pub fn overload_sweep(
    net: &NetworkConfig,
    exp: &ExperimentConfig,
    lambdas: &[f64],
    param: OverloadParam,
    grid_points: usize,
) -> Result<ResultTable> {
    exp.validate()?;
    let mut table = ResultTable::new("fig8", "lambda", metadata(net, exp, json!({"lambdas": lambdas, "parametrization": param})));
    for &v in &exp.velocity_grid {
        for &l in lambdas {
            let mut p = UpdateIntervalParams::from_config(net, v)?;
            p.lambda = l;
            if param == OverloadParam::RequestScaling {
                p.r_req = net.r_req() / l;
            }
            p.validate()?;
            let e = ExperimentConfig {
                t_u_grid: topt_grid(&p, grid_points)?,
                ..exp.clone()
            };
            table.push(&format!("closed-v{v}"), l, t_opt_closed_form(&p, true)?, 0.0, 1);
            table.push(&format!("greedy-v{v}"), l, greedy_search_topt(&p, &e)?, 0.0, exp.n_runs);
        }
    }
    Ok(table)
}

/// Feedback bits per frame for each scheme and IFFT size. LFF uses the
/// closed-form optimum at `v`.
pub fn overhead_table(net: &NetworkConfig, exp: &ExperimentConfig, sizes: &[u64], v: f64) -> Result<ResultTable> {
    let t_opt = t_opt_closed_form(&UpdateIntervalParams::from_config(net, v)?, false)?;
    let m = lff_frames(t_opt, net.t_fr());
    let mut table = ResultTable::new("fig5", "n_subcarriers", metadata(net, exp, json!({"v_mps": v, "lff_frames": m})));
    let b = net.bits_per_sinr as u64;
    for &k in sizes {
        for (name, s) in [
            ("ff", OverheadScheme::Full),
            ("onebit", OverheadScheme::OneBit),
            ("lcf", OverheadScheme::Lcf),
            ("lff", OverheadScheme::Lff { m }),
        ] {
            table.push(name, k as f64, overhead_per_frame(s, k, b)? as f64, 0.0, 1);
        }
    }
    Ok(table)
}

/// Centre of the attocell of access point `ap` and its square half-widths.
fn cell_square(scene: &Scene, ap: usize) -> (Vec3, f64, f64) {
    let side = (scene.aps.len() as f64).sqrt().round().max(1.0);
    (
        scene.aps[ap].position,
        0.5 * scene.room.width_m / side,
        0.5 * scene.room.depth_m / side,
    )
}

/// Resolves a one-bit threshold against the multipath and interference
/// SINR of `scene`, sampled on a floor grid with `per_cell` points across
/// each attocell (rounded up to even so cell boundaries are on the grid).
/// `cell-min` is the lowest serving SINR on the top data subcarrier;
/// `cell-median` the median over positions and subcarriers.
pub fn scene_threshold(
    setting: ThresholdSetting,
    scene: &Scene,
    ofdma: &OfdmaConfig,
    z: f64,
    per_cell: usize,
) -> Result<f64> {
    let named = match setting {
        ThresholdSetting::Fixed(t) => return Ok(t),
        ThresholdSetting::Named(n) => n,
    };
    if per_cell == 0 {
        return Err(Error::param("per_cell", "must be at least 1"));
    }
    let side = (scene.aps.len() as f64).sqrt().round().max(1.0) as usize;
    let n = side * (per_cell + per_cell % 2);
    let (w, d) = (scene.room.width_m, scene.room.depth_m);
    let pts: Vec<Vec3> = (0..=n)
        .flat_map(|j| (0..=n).map(move |i| (i, j)))
        .map(|(i, j)| Vec3::new(w * (i as f64 / n as f64 - 0.5), d * (j as f64 / n as f64 - 0.5), z))
        .collect();
    let vectors: Vec<SinrVector> = pts
        .par_iter()
        .map(|&p| downlink_sinr_vector(scene, p, scene.serving_ap(p)?, ofdma))
        .collect::<Result<_>>()?;
    Ok(match named {
        NamedThreshold::CellMin => vectors
            .iter()
            .filter_map(|v| v.per_subcarrier.last().copied())
            .fold(f64::INFINITY, f64::min),
        NamedThreshold::CellMedian => {
            let mut all: Vec<f64> = vectors.iter().flat_map(|v| v.per_subcarrier.iter().copied()).collect();
            let mid = all.len() / 2;
            *all.select_nth_unstable_by(mid, f64::total_cmp).1
        }
    })
}

/// Mean per-UE downlink throughput (Mbit/s) of FF, one-bit and LCF with
/// the multipath channel. UEs are dropped uniformly over the room, join the
/// access point with the largest DC gain and are scheduled per cell. LCF
/// rescales a vector reported from an earlier position in the same cell.
/// Named one-bit thresholds are resolved with [`scene_threshold`].
pub fn compare_schemes_downlink(
    net: &NetworkConfig,
    exp: &ExperimentConfig,
    n_ues_grid: &[usize],
    r_req: f64,
) -> Result<ResultTable> {
    exp.validate()?;
    let mut room = net.room();
    room.wall_patch_resolution = net.mc_patch_resolution_m;
    let scene = Scene::new(room, net.transceiver(), net.access_points())?;
    let ofdma = net.ofdma();
    let z = scene.room.height_m - net.vertical_separation_m;
    let threshold = scene_threshold(net.onebit_threshold, &scene, &ofdma, z, 6)?;
    let schemes: Vec<FeedbackScheme> = if exp.schemes.is_empty() {
        vec![
            FeedbackScheme::new(SchemeKind::Full, net.bits_per_sinr)?,
            FeedbackScheme::new(SchemeKind::Lcf, net.bits_per_sinr)?,
            FeedbackScheme::new(SchemeKind::OneBit { threshold }, net.bits_per_sinr)?,
        ]
    } else {
        exp.schemes.clone()
    };
    if let Some(s) = schemes.iter().find(|s| matches!(s.kind, SchemeKind::Lff { .. })) {
        return Err(Error::param("schemes", format!("{} is not a per-frame scheme", s.name())));
    }
    let df = ofdma.spacing();
    let (w, d) = (scene.room.width_m, scene.room.depth_m);
    let mut table = ResultTable::new(
        "fig4",
        "n_ues",
        metadata(net, exp, json!({"r_req_bps": r_req, "onebit_threshold": threshold, "n_ues_grid": n_ues_grid})),
    );
    for &n in n_ues_grid {
        let per_run: Vec<Vec<f64>> = (0..exp.n_runs as u64)
            .into_par_iter()
            .map(|run| {
                let mut rng = run_rng(exp.seed, STREAM_FIG4 * 1000 + n as u32, run);
                let now: Vec<Vec3> = (0..n)
                    .map(|_| Vec3::new(w * (rng.random::<f64>() - 0.5), d * (rng.random::<f64>() - 0.5), z))
                    .collect();
                let serving: Vec<usize> = now.iter().map(|&p| scene.serving_ap(p)).collect::<Result<_>>()?;
                let before: Vec<Vec3> = serving
                    .iter()
                    .map(|&ap| {
                        let (c, hx, hy) = cell_square(&scene, ap);
                        Vec3::new(
                            c.x + hx * (2.0 * rng.random::<f64>() - 1.0),
                            c.y + hy * (2.0 * rng.random::<f64>() - 1.0),
                            z,
                        )
                    })
                    .collect();
                let truth: Vec<SinrVector> = now
                    .iter()
                    .zip(&serving)
                    .map(|(&p, &ap)| downlink_sinr_vector(&scene, p, ap, &ofdma))
                    .collect::<Result<_>>()?;
                let mut cells: Vec<usize> = serving.clone();
                cells.sort_unstable();
                cells.dedup();
                let mut scores = Vec::with_capacity(schemes.len());
                for s in &schemes {
                    let mut total = 0.0;
                    for &cell in &cells {
                        let members: Vec<usize> = (0..n).filter(|&j| serving[j] == cell).collect();
                        let tr: Vec<SinrVector> = members.iter().map(|&j| truth[j].clone()).collect();
                        let demands = vec![UeDemand::fresh(r_req); members.len()];
                        let rates = match s.kind {
                            SchemeKind::Full => {
                                let alloc = fair_schedule(&demands, &tr, &ofdma)?;
                                downlink_rate(&alloc, &tr, &ofdma, RateMode::Exact)
                            }
                            SchemeKind::Lcf => {
                                let est: Vec<SinrVector> = members
                                    .iter()
                                    .map(|&j| {
                                        let old = downlink_sinr_vector(&scene, before[j], cell, &ofdma)?;
                                        lcf_estimate(&old, truth[j].avg_power_ref)
                                    })
                                    .collect::<Result<_>>()?;
                                let alloc = fair_schedule(&demands, &est, &ofdma)?;
                                downlink_rate(&alloc, &tr, &ofdma, RateMode::Exact)
                            }
                            SchemeKind::OneBit { threshold } => {
                                let bits: Vec<Vec<bool>> = tr
                                    .iter()
                                    .map(|t| t.per_subcarrier.iter().map(|&g| g >= threshold).collect())
                                    .collect();
                                let fixed = df * (1.0 + threshold).log2();
                                let alloc = one_bit_schedule(&demands, &bits, fixed, &mut rng, false)?;
                                one_bit_rate(&alloc, &tr, threshold, df)
                            }
                            SchemeKind::Lff { .. } => unreachable!(),
                        };
                        total += rates.iter().map(|r| r.min(r_req)).sum::<f64>();
                    }
                    scores.push(total / n as f64 / 1e6);
                }
                Ok(scores)
            })
            .collect::<Result<_>>()?;
        for (i, s) in schemes.iter().enumerate() {
            let xs: Vec<f64> = per_run.iter().map(|r| r[i]).collect();
            let (m, se) = mean_stderr(&xs);
            table.push(s.name(), n as f64, m, se, exp.n_runs);
        }
    }
    Ok(table)
}

/// Peak-to-trough spread (dB) of the normalised multipath response over the
/// data band, at each position, from the nearest access point.
pub fn channel_flatness(net: &NetworkConfig, positions: &[(f64, f64)]) -> Result<Vec<f64>> {
    let scene = Scene::new(net.room(), net.transceiver(), net.access_points())?;
    let ofdma = net.ofdma();
    let freqs: Vec<f64> = (1..=ofdma.data_subcarriers()).map(|k| k as f64 * ofdma.spacing()).collect();
    let z = scene.room.height_m - net.vertical_separation_m;
    positions
        .par_iter()
        .map(|&(x, y)| {
            let pos = Vec3::new(x, y, z);
            let ap = scene.serving_ap(pos)?;
            let r = normalized_frequency_response(&scene.aps[ap], pos, &scene.room, &scene.transceiver, &freqs)?;
            Ok(fluctuation_db(&r))
        })
        .collect()
}

/// DC gain from the serving access point on a square grid over the floor
/// plane, as `(x, y, gain)` rows.
pub fn gain_map(net: &NetworkConfig, step: f64) -> Result<Vec<(f64, f64, f64)>> {
    if !(step > 0.0) {
        return Err(Error::param("step", "must be positive"));
    }
    let mut room = net.room();
    room.wall_patch_resolution = net.mc_patch_resolution_m;
    let scene = Scene::new(room, net.transceiver(), net.access_points())?;
    let z = scene.room.height_m - net.vertical_separation_m;
    let nx = (scene.room.width_m / step).round() as usize;
    let ny = (scene.room.depth_m / step).round() as usize;
    let pts: Vec<(f64, f64)> = (0..=ny)
        .flat_map(|j| (0..=nx).map(move |i| (i, j)))
        .map(|(i, j)| {
            (
                -0.5 * scene.room.width_m + i as f64 * step,
                -0.5 * scene.room.depth_m + j as f64 * step,
            )
        })
        .collect();
    pts.par_iter()
        .map(|&(x, y)| {
            let pos = Vec3::new(x, y, z);
            let ap = scene.serving_ap(pos)?;
            Ok((x, y, scene.dc_gain(ap, pos)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::expected_breakdown;

    fn net() -> NetworkConfig {
        NetworkConfig::default()
    }

    #[test]
    fn experiment_config_validation() {
        let mut e = ExperimentConfig::new(10, 1);
        assert!(e.validate().is_ok());
        e.velocity_grid = vec![2.0, 1.0];
        assert!(e.validate().is_err());
        e.velocity_grid.clear();
        assert!(e.validate().is_err());
        assert!(ExperimentConfig::new(0, 1).validate().is_err());
    }

    #[test]
    fn mc_matches_quadrature() {
        let p = UpdateIntervalParams::from_config(&net(), 1.0).unwrap();
        let e = ExperimentConfig::new(4000, 11);
        let (m, se) = expected_sum_throughput(0.15, &p, &e).unwrap();
        let q = expected_breakdown(0.15, &p).unwrap().weighted_sum;
        assert!((m - q).abs() < 3.0 * se, "{m} ± {se} vs {q}");
    }

    #[test]
    fn stderr_shrinks_with_runs() {
        let p = UpdateIntervalParams::from_config(&net(), 1.0).unwrap();
        let (_, a) = expected_sum_throughput(0.15, &p, &ExperimentConfig::new(500, 3)).unwrap();
        let (_, b) = expected_sum_throughput(0.15, &p, &ExperimentConfig::new(2000, 3)).unwrap();
        assert!((a / b - 2.0).abs() < 0.3, "{a} {b}");
    }

    #[test]
    fn runs_are_reproducible() {
        let p = UpdateIntervalParams::from_config(&net(), 1.0).unwrap();
        let e = ExperimentConfig::new(200, 5);
        assert_eq!(
            expected_sum_throughput(0.1, &p, &e).unwrap(),
            expected_sum_throughput(0.1, &p, &e).unwrap()
        );
    }

    #[test]
    fn greedy_within_one_step_of_numeric() {
        let p = UpdateIntervalParams::from_config(&net(), 1.0).unwrap();
        let grid = topt_grid(&p, 200).unwrap();
        let e = ExperimentConfig {
            t_u_grid: grid.clone(),
            ..ExperimentConfig::new(10_000, 2)
        };
        let g = greedy_search_topt(&p, &e).unwrap();
        let n = t_opt_numeric(&p).unwrap();
        let i = grid.iter().position(|&t| t == g).unwrap();
        let step = grid[(i + 1).min(grid.len() - 1)] - grid[i.saturating_sub(1)];
        assert!((g - n).abs() <= step, "{g} vs {n}");
    }

    #[test]
    fn stationary_single_ue_gets_request() {
        let cfg = NetworkConfig {
            n_ues: 1,
            ..net()
        };
        let m = CellModel::from_config(&cfg, 5e6).unwrap();
        let plan = UpdatePlan {
            report: ReportKind::Full,
            cadence: Cadence::UntilExit,
        };
        let out = m.run(&mut run_rng(1, 0, 0), 0.0, plan).unwrap();
        assert_eq!(out[0].downlink, 5e6);
        assert_eq!(m.airtime(plan, f64::INFINITY), 0.0);
    }

    #[test]
    fn airtime_fractions() {
        let m = CellModel::from_config(&net(), 5e6).unwrap();
        let per = |report| m.airtime(UpdatePlan { report, cadence: Cadence::PerFrame }, m.t_fr);
        assert!((per(ReportKind::Full) - 0.5).abs() < 1e-12);
        assert!((per(ReportKind::OneBit) - 0.05).abs() < 1e-12);
        assert!((per(ReportKind::Lcf) - 0.5 / 1023.0).abs() < 1e-12);
        let lff = UpdatePlan {
            report: ReportKind::Full,
            cadence: Cadence::Every(0.16),
        };
        assert!((m.airtime(lff, 0.16) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn table_csv_embeds_metadata() {
        let e = ExperimentConfig::new(1, 9);
        let mut t = ResultTable::new("demo", "x", metadata(&net(), &e, Value::Null));
        t.push("a", 1.0, 2.0, 0.5, 1);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# table: demo\n# seed: 9\n"));
        assert!(s.contains("series,x,mean,stderr,n\na,1,2,0.5,1\n"));
        assert!(s.contains("\"pd_area_cm2\""));
    }

    #[test]
    fn tier_runs() {
        assert_eq!(Tier::Smoke.runs(10_000), 100);
        assert_eq!(Tier::Paper.runs(10_000), 10_000);
        assert!("huge".parse::<Tier>().is_err());
    }
}
