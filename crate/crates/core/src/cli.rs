//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on I/O or parse errors, 2 when a run aborts
//! on infeasibility or a bound check finds violations. The worker count for
//! parallel commands comes from `SBPC_WORKERS`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{beta_sequence, cumulative_bound, verify_bound, BoundReport, KFunction, ModuliPair};
use crate::controller::{run_algorithm, Algorithm, ClosedLoopLog};
use crate::error::{io_error, Error, Result};
use crate::scenario::{algorithm_name, ModuliSource, PlantConfig, Scenario};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "SBPC_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sbpc", version, about = "Shrinking-horizon move-blocking predictive control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop simulation and write its logs.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "sbpc-out")]
        output: PathBuf,
        /// Record wall-clock solve times (logs stop being reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Print the disturbance bound of a scenario.
    Bound { scenario: PathBuf },
    /// Check the disturbance bound by Monte Carlo simulation.
    Verify {
        scenario: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// Scale applied to the bound; values below 1 test the detector.
        #[arg(long, default_value_t = 1.0, hide = true)]
        bound_scale: f64,
        /// Also write the report to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Repeat a run over several values of one parameter.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Omega,
    #[value(name = "d_bar")]
    DBar,
    #[value(name = "L")]
    L,
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return EXIT_ERROR;
    }
    execute(&cli.command, &mut std::io::stdout())
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Argument { name: WORKERS_ENV, reason: format!("expected a positive integer, got `{raw}`") })?;
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command, writing human-readable output to `out`; returns the exit
/// code.
pub fn execute(command: &Command, out: &mut dyn std::io::Write) -> i32 {
    let outcome = match command {
        Command::Run { scenario, output, timing } => cmd_run(scenario, output, *timing, out),
        Command::Bound { scenario } => cmd_bound(scenario, out),
        Command::Verify { scenario, runs, bound_scale, output } => {
            cmd_verify(scenario, *runs, *bound_scale, output.as_deref(), out)
        }
        Command::Sweep { scenario, param, values, output, timing } => {
            cmd_sweep(scenario, *param, values, output.as_deref(), *timing, out)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| io_error(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

/// Per-step log: `k, x1.., u_cmd, u_applied, d, gamma_lb, solve_cost,
/// nodes, wall_ms`. The terminal row leaves the input columns empty.
pub fn steps_csv(log: &ClosedLoopLog) -> String {
    let n = log.records.first().map_or(0, |r| r.state.len());
    let mut s = String::from("k");
    for i in 1..=n {
        write!(s, ",x{i}").unwrap();
    }
    s.push_str(",u_cmd,u_applied,d,gamma_lb,solve_cost,nodes,wall_ms\n");
    for r in &log.records {
        write!(s, "{}", r.k).unwrap();
        for x in r.state.iter() {
            write!(s, ",{x}").unwrap();
        }
        match (&r.u_cmd, &r.u_applied, &r.d) {
            (Some(u), Some(ua), Some(d)) => {
                let wall = r.wall.map_or_else(String::new, |w| format!("{:.3}", w.as_secs_f64() * 1e3));
                writeln!(s, ",{},{},{},{},{},{},{wall}", join(u), join(ua), join(d), r.gamma_lb, r.solve_cost, r.nodes).unwrap();
            }
            _ => s.push_str(",,,,,,,\n"),
        }
    }
    s
}

/// Plot table: time, position, speed, input and, for the train, the speed
/// limit at the current position.
pub fn plot_csv(log: &ClosedLoopLog, scenario: &Scenario) -> String {
    let ts = scenario.model().sampling_time();
    let mut s = String::from("k,time,position,speed,input,speed_limit\n");
    for r in &log.records {
        let limit = match &scenario.plant {
            PlantConfig::Train { train, .. } => Some(train.track.at(r.state[0]).speed_limit_mps),
            PlantConfig::Integrator(_) => None,
        };
        let input = r.u_applied.as_ref().map_or_else(String::new, |u| join(u));
        writeln!(s, "{},{},{},{},{},{}", r.k, r.k as f64 * ts, r.state[0], r.state[1], input, fmt_opt(limit)).unwrap();
    }
    s
}

#[derive(Serialize)]
struct RunSummary<'a> {
    algorithm: &'a str,
    run: u64,
    completed: bool,
    terminal_delta: f64,
    total_cost: f64,
    feasible_steps: usize,
    steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    aborted_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    abort_reason: Option<&'a str>,
    d_bar: f64,
    bound: f64,
    moduli: &'a str,
}

fn moduli_gains(m: &ModuliPair) -> String {
    let show = |f: &KFunction| match f {
        KFunction::Linear(k) => format!("{k}"),
        KFunction::Tabulated(p) => format!("tabulated({} points)", p.len()),
    };
    format!("a_x = {}, a_u = {}", show(&m.a_x), show(&m.a_u))
}

pub fn summary_toml(log: &ClosedLoopLog, scenario: &Scenario) -> Result<String> {
    let (moduli, source) = scenario.moduli()?;
    let d_bar = scenario.disturbance.bound();
    let bound = cumulative_bound(&moduli, d_bar, scenario.horizon)?;
    let aborted = log.summary.aborted.as_ref();
    let summary = RunSummary {
        algorithm: algorithm_name(log.algorithm),
        run: log.run,
        completed: aborted.is_none(),
        terminal_delta: log.summary.terminal_delta,
        total_cost: log.summary.total_cost,
        feasible_steps: log.summary.feasible_steps,
        steps: log.summary.steps,
        aborted_at: aborted.map(|a| a.k),
        abort_reason: aborted.map(|a| a.reason.as_str()),
        d_bar,
        bound,
        moduli: &format!("{} ({})", moduli_gains(&moduli), source.describe()),
    };
    toml::to_string(&summary).map_err(|e| Error::Unsupported(e.to_string()))
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::from_path(path)
}

fn simulate(scenario: &Scenario, timing: bool, run: u64) -> Result<ClosedLoopLog> {
    let mut cl = scenario.closed_loop();
    cl.timing = timing;
    run_algorithm(&cl, scenario.algorithm, scenario.omega_or_default(), run)
}

pub fn cmd_run(scenario: &Path, output: &Path, timing: bool, out: &mut dyn std::io::Write) -> Result<i32> {
    let s = load(scenario)?;
    let log = simulate(&s, timing, 0)?;
    fs::create_dir_all(output).map_err(|e| io_error(output, e))?;
    write_file(&output.join("steps.csv"), &steps_csv(&log))?;
    write_file(&output.join("plot.csv"), &plot_csv(&log, &s))?;
    let summary = summary_toml(&log, &s)?;
    write_file(&output.join("summary.toml"), &summary)?;
    emit(out, &summary)?;
    Ok(match &log.summary.aborted {
        None => EXIT_OK,
        Some(a) => {
            eprintln!("run aborted at k = {}: {}", a.k, a.reason);
            EXIT_INFEASIBLE
        }
    })
}

/// Number of trailing `β_k` entries printed by `bound`.
const BETA_TAIL: usize = 5;

pub fn cmd_bound(scenario: &Path, out: &mut dyn std::io::Write) -> Result<i32> {
    let s = load(scenario)?;
    let (moduli, source) = s.moduli()?;
    let d_bar = s.disturbance.bound();
    let beta = beta_sequence(&moduli, d_bar, s.horizon)?;
    let total = cumulative_bound(&moduli, d_bar, s.horizon)?;
    let mut text = String::new();
    writeln!(text, "d_bar = {d_bar}").unwrap();
    writeln!(text, "k_f = {}", s.horizon).unwrap();
    writeln!(text, "moduli = \"{}\"", moduli_gains(&moduli)).unwrap();
    writeln!(text, "moduli_source = \"{}\"", source.describe()).unwrap();
    if let ModuliSource::Estimated { k_x_raw, k_u_raw, .. } = source {
        writeln!(text, "k_x_raw = {k_x_raw}\nk_u_raw = {k_u_raw}").unwrap();
    }
    let start = beta.len().saturating_sub(BETA_TAIL);
    let tail: Vec<String> = beta[start..].iter().map(|b| format!("{b}")).collect();
    writeln!(text, "beta_tail_from = {start}\nbeta_tail = [{}]", tail.join(", ")).unwrap();
    writeln!(text, "beta_total = {total}").unwrap();
    emit(out, &text)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReportFile {
    d_bar: f64,
    k_f: usize,
    beta_total: f64,
    max_delta_observed: f64,
    violations: usize,
    aborted: usize,
    runs: usize,
    margin: f64,
    moduli: String,
}

pub fn report_toml(r: &BoundReport, moduli: String) -> String {
    let file = ReportFile {
        d_bar: r.d_bar,
        k_f: r.k_f,
        beta_total: r.beta_total,
        max_delta_observed: r.max_delta_observed,
        violations: r.violations,
        aborted: r.aborted,
        runs: r.runs,
        margin: r.margin(),
        moduli,
    };
    toml::to_string(&file).expect("plain report serializes")
}

pub fn cmd_verify(
    scenario: &Path,
    runs: Option<usize>,
    bound_scale: f64,
    output: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> Result<i32> {
    let s = load(scenario)?;
    if s.algorithm == Algorithm::Nominal {
        return Err(Error::Argument { name: "algorithm", reason: "verify needs a relaxed or multiobjective scenario".into() });
    }
    let (moduli, source) = s.moduli()?;
    let runs = runs.unwrap_or(s.runs);
    let report = verify_bound(&s.closed_loop(), s.algorithm, s.omega_or_default(), runs, &moduli, bound_scale)?;
    let text = report_toml(&report, format!("{} ({})", moduli_gains(&moduli), source.describe()));
    if let Some(path) = output {
        write_file(path, &text)?;
    }
    emit(out, &text)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// One row of a sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub terminal_delta: f64,
    pub total_cost: f64,
    /// `γ` at `k = 0`.
    pub gamma0: f64,
    pub nodes: u64,
    pub mean_solve_ms: Option<f64>,
    pub completed: bool,
}

/// Applies one sweep value to a copy of the scenario.
pub fn apply_sweep(s: &Scenario, param: SweepParam, value: &str) -> Result<Scenario> {
    let mut s = s.clone();
    let bad = |reason: String| Error::Argument { name: "values", reason };
    match param {
        SweepParam::Omega => {
            let w: f64 = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a number")))?;
            if !(w > 0.0) {
                return Err(bad(format!("omega must be > 0, got {w}")));
            }
            s.omega = Some(w);
            s.algorithm = Algorithm::MultiObjective;
        }
        SweepParam::DBar => {
            let d: f64 = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a number")))?;
            s.disturbance = s.disturbance.with_bound(d)?;
        }
        SweepParam::L => {
            let l: usize = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a positive integer")))?;
            if l == 0 || l > s.horizon {
                return Err(bad(format!("L must lie in 1..={}, got {l}", s.horizon)));
            }
            s.block_length = l;
        }
    }
    Ok(s)
}

pub fn sweep_rows(s: &Scenario, param: SweepParam, values: &[String], timing: bool) -> Result<Vec<SweepRow>> {
    let scenarios = values.iter().map(|v| apply_sweep(s, param, v)).collect::<Result<Vec<_>>>()?;
    scenarios
        .par_iter()
        .zip(values)
        .map(|(sc, value)| {
            let log = simulate(sc, timing, 0)?;
            let steps = &log.records[..log.records.len() - 1];
            let mean_solve_ms = timing.then(|| {
                let total: f64 = steps.iter().filter_map(|r| r.wall).map(|w| w.as_secs_f64() * 1e3).sum();
                total / steps.len().max(1) as f64
            });
            Ok(SweepRow {
                value: value.trim().to_string(),
                terminal_delta: log.summary.terminal_delta,
                total_cost: log.summary.total_cost,
                gamma0: steps.first().map_or(f64::NAN, |r| r.gamma_lb),
                nodes: steps.iter().map(|r| r.nodes).sum(),
                mean_solve_ms,
                completed: log.completed(),
            })
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = param.to_possible_value().expect("named").get_name().to_string();
    let mut s = format!("{name},terminal_delta,total_cost,gamma0,nodes,mean_solve_ms,completed\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.value,
            r.terminal_delta,
            r.total_cost,
            r.gamma0,
            r.nodes,
            fmt_opt(r.mean_solve_ms),
            r.completed
        )
        .unwrap();
    }
    s
}

pub fn cmd_sweep(
    scenario: &Path,
    param: SweepParam,
    values: &[String],
    output: Option<&Path>,
    timing: bool,
    out: &mut dyn std::io::Write,
) -> Result<i32> {
    let s = load(scenario)?;
    let rows = sweep_rows(&s, param, values, timing)?;
    let table = sweep_csv(param, &rows);
    if let Some(dir) = output {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_file(&dir.join("sweep.csv"), &table)?;
    }
    emit(out, &table)?;
    Ok(if rows.iter().all(|r| r.completed) { EXIT_OK } else { EXIT_INFEASIBLE })
}
