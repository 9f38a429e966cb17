//! Command-line front end: `solve`, `verify`, `bench` and `list`.
//!
//! Exit status: 0 success, 1 solver failure (no convergence or a numerical
//! error along the way), 2 invalid input, 3 a verification or benchmark
//! check failed. Errors go to stderr as one JSON object carrying the
//! machine-readable code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bench::{catalog, find_case, run_bench, BenchmarkCase};
use crate::error::{Error, Result};
use crate::export::{solve_report, to_json, trajectory_csv};
use crate::ocp::json::ProblemDocument;
use crate::ocp::{OcpProblem, TimeMode};
use crate::shoot::{
    default_starts, solve, solve_multistart, ChartPolicy, MultiStartReport, ShootingUnknowns, SolveOptions,
};
use crate::suites::{run_suite, DEFAULT_SEED, SUITES};

pub const THREADS_ENV: &str = "CONTACT_PMP_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "contact-pmp", version, about = "Indirect optimal-control solver on projective costates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimeModeArg {
    Free,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChartArg {
    Normal,
    Abnormal,
    Auto,
}

impl From<ChartArg> for ChartPolicy {
    fn from(c: ChartArg) -> Self {
        match c {
            ChartArg::Normal => ChartPolicy::Normal,
            ChartArg::Abnormal => ChartPolicy::Abnormal,
            ChartArg::Auto => ChartPolicy::Auto,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem by shooting and write the report and trajectory.
    Solve(SolveArgs),
    /// Run the seeded invariant suites.
    Verify(VerifyArgs),
    /// Run the catalog against the analytic and direct oracles.
    Bench(BenchArgs),
    /// List the built-in problems.
    List(ListArgs),
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    /// Built-in problem name or path to a JSON problem document.
    #[arg(long)]
    pub problem: String,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Terminal time: the fixed value, or the initial guess when free.
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long, value_enum)]
    pub time_mode: Option<TimeModeArg>,
    /// Initial costate guess (normal chart), comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub costate: Option<Vec<f64>>,
    /// Residual tolerance (sup norm).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Also start from the default costate grid and report every distinct
    /// extremal found.
    #[arg(long)]
    pub multistart: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub chart: ChartArg,
    /// Directory for report.json and trajectory.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Restrict to these cases (repeatable); all by default.
    #[arg(long = "case")]
    pub cases: Vec<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Directory for bench_results.csv, bench_results.json and
    /// bench_runtimes.log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, clap::Args)]
pub struct ListArgs {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::UnknownName { .. } | Error::Io(_) | Error::BudgetExceeded { .. } => {
            EXIT_INPUT
        }
        _ => EXIT_SOLVER,
    }
}

pub fn error_json(e: &Error) -> String {
    let mut v = json!({ "error": e.code(), "message": e.to_string() });
    if let Error::NoConvergence {
        iterations,
        best_residual,
        best_iterate,
        residual_history,
    } = e
    {
        v["iterations"] = json!(iterations);
        v["best_residual"] = json!(best_residual);
        v["best_iterate"] = json!(best_iterate);
        v["residual_history"] = json!(residual_history);
    }
    v.to_string()
}

struct Resolved {
    problem: OcpProblem,
    guess: ShootingUnknowns,
    opts: SolveOptions,
}

fn resolve_problem(name: &str) -> Result<Resolved> {
    if let Ok(case) = find_case(name) {
        return Ok(Resolved {
            problem: case.problem,
            guess: case.initial_guess,
            opts: SolveOptions::default(),
        });
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(Error::UnknownName {
            kind: "problem (not a built-in name or an existing file)",
            name: name.into(),
        });
    }
    let text = fs::read_to_string(path)?;
    let doc = ProblemDocument::from_json_str(&text)?;
    let problem = doc.to_problem()?;
    let mut opts = SolveOptions::default();
    if let Some(t) = &doc.tolerances {
        if let Some(v) = t.residual {
            opts.newton.tol = v;
        }
        if let Some(v) = t.step {
            opts.integrator.step = v;
        }
        if let Some(v) = t.max_iter {
            opts.newton.max_iter = v;
        }
    }
    let g = doc.initial_guess.clone().unwrap_or_default();
    let t1 = match problem.time_mode {
        TimeMode::Free => Some(g.t1.unwrap_or(problem.t0 + 1.0)),
        TimeMode::Fixed(_) => None,
    };
    let guess = ShootingUnknowns::normal(
        g.costate.unwrap_or_else(|| vec![0.0; problem.n()]),
        t1,
        g.multipliers.unwrap_or_else(|| vec![0.0; problem.k()]),
    );
    Ok(Resolved { problem, guess, opts })
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("--{name} must be positive")))
    }
}

fn apply_solve_args(r: &mut Resolved, a: &SolveArgs) -> Result<()> {
    let p = &mut r.problem;
    if let Some(x0) = &a.x0 {
        if x0.len() != p.n() {
            return Err(Error::InvalidInput(format!("--x0 needs {} entries", p.n())));
        }
        p.x0 = x0.clone();
    }
    let mode = match a.time_mode {
        Some(TimeModeArg::Free) => TimeMode::Free,
        Some(TimeModeArg::Fixed) => {
            let t1 = a
                .t1
                .or(match p.time_mode {
                    TimeMode::Fixed(t) => Some(t),
                    TimeMode::Free => None,
                })
                .ok_or_else(|| Error::InvalidInput("--time-mode fixed needs --t1".into()))?;
            TimeMode::Fixed(t1)
        }
        None => match (p.time_mode, a.t1) {
            (TimeMode::Fixed(_), Some(t1)) => TimeMode::Fixed(t1),
            (m, _) => m,
        },
    };
    p.time_mode = mode;
    r.guess.t1 = match mode {
        TimeMode::Free => Some(a.t1.or(r.guess.t1).unwrap_or(p.t0 + 1.0)),
        TimeMode::Fixed(_) => None,
    };
    if let Some(c) = &a.costate {
        r.guess.chart = crate::projcost::Chart::Normal;
        r.guess.costate = c.clone();
    }
    if let Some(t) = a.tol {
        r.opts.newton.tol = positive("tol", t)?;
    }
    if let Some(m) = a.max_iter {
        r.opts.newton.max_iter = m;
    }
    r.opts.chart = a.chart.into();
    p.validate()?;
    r.guess.validate(p)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn print(s: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(s.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let mut r = resolve_problem(&a.problem)?;
    apply_solve_args(&mut r, a)?;
    let report: MultiStartReport = if a.multistart {
        let mut starts = vec![r.guess.clone()];
        starts.extend(default_starts(&r.guess));
        let ms = solve_multistart(&r.problem, &starts, &r.opts)?;
        if ms.solutions.is_empty() {
            // rerun the primary start to surface its failure details
            solve(&r.problem, &r.guess, &r.opts)?;
        }
        ms
    } else {
        let res = solve(&r.problem, &r.guess, &r.opts)?;
        MultiStartReport {
            solutions: vec![res],
            attempts: 1,
            failures: 0,
        }
    };
    let best = report
        .solutions
        .first()
        .ok_or_else(|| Error::EvaluationFailure("no solution to report".into()))?;
    let json = to_json(&solve_report(&r.problem, &report))?;
    let csv = trajectory_csv(&best.trajectory);
    if let Some(dir) = &a.out {
        write_file(dir, "report.json", &json)?;
        write_file(dir, "trajectory.csv", &csv)?;
    }
    match a.format {
        Format::Json => print(&json)?,
        Format::Csv => print(&csv)?,
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else {
        vec![a.suite.as_str()]
    };
    let mut reports = Vec::with_capacity(names.len());
    for n in names {
        reports.push(run_suite(n, a.seed)?);
    }
    let text = match a.format {
        Format::Json => to_json(&reports)?,
        Format::Csv => {
            let mut s = String::from("suite,check,measured,tolerance,bound,status\n");
            for r in &reports {
                for c in &r.checks {
                    let _ = writeln!(
                        s,
                        "{},{},{:e},{:e},{},{}",
                        r.suite,
                        c.name,
                        c.measured,
                        c.tolerance,
                        if c.lower_bound { "min" } else { "max" },
                        if c.passed { "pass" } else { "FAIL" }
                    );
                }
            }
            s
        }
    };
    if let Some(dir) = &a.out {
        let name = match a.format {
            Format::Json => "verify.json",
            Format::Csv => "verify.csv",
        };
        write_file(dir, name, &text)?;
    }
    print(&text)?;
    Ok(if reports.iter().all(|r| r.passed()) {
        EXIT_OK
    } else {
        EXIT_CHECK
    })
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let cases: Vec<BenchmarkCase> = if a.cases.is_empty() {
        catalog()
    } else {
        a.cases.iter().map(|c| find_case(c)).collect::<Result<_>>()?
    };
    let mut opts = SolveOptions::default();
    if let Some(t) = a.tol {
        opts.newton.tol = positive("tol", t)?;
    }
    if let Some(m) = a.max_iter {
        opts.newton.max_iter = m;
    }
    let report = run_bench(&cases, &opts)?;
    let csv = report.to_csv();
    let json = to_json(&json!({ "schema": crate::export::SCHEMA, "rows": report.rows }))?;
    match &a.out {
        Some(dir) => {
            write_file(dir, "bench_results.csv", &csv)?;
            write_file(dir, "bench_results.json", &json)?;
            write_file(dir, "bench_runtimes.log", &report.runtimes_log())?;
        }
        None => eprint!("{}", report.runtimes_log()),
    }
    match a.format {
        Format::Csv => print(&csv)?,
        Format::Json => print(&json)?,
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_CHECK })
}

fn cmd_list(a: &ListArgs) -> Result<i32> {
    let cat = catalog();
    let text = match a.format {
        Format::Json => to_json(
            &cat.iter()
                .map(|c| {
                    json!({
                        "name": c.name,
                        "description": c.description,
                        "state_dim": c.problem.n(),
                        "control_dim": c.problem.m(),
                        "time_mode": c.problem.time_mode,
                        "has_analytic_oracle": c.analytic.is_some(),
                    })
                })
                .collect::<Vec<_>>(),
        )?,
        Format::Csv => {
            let mut s = String::from("name,state_dim,control_dim,description\n");
            for c in &cat {
                let _ = writeln!(s, "{},{},{},\"{}\"", c.name, c.problem.n(), c.problem.m(), c.description);
            }
            s
        }
    };
    print(&text)?;
    Ok(EXIT_OK)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<i32> {
    configure_threads()?;
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::List(a) => cmd_list(a),
    }
}

/// Parses `args`, runs the command and returns the exit status. Usage
/// errors are printed by clap and map to the invalid-input status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_solve_flags() {
        let cli = Cli::try_parse_from([
            "contact-pmp",
            "solve",
            "--problem",
            "double_integrator_min_time",
            "--x0",
            "1,-0.5",
            "--chart",
            "normal",
            "--multistart",
        ])
        .unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        assert_eq!(a.x0, Some(vec![1.0, -0.5]));
        assert_eq!(a.chart, ChartArg::Normal);
        assert!(a.multistart);
    }

    #[test]
    fn time_mode_override() {
        let mut r = resolve_problem("double_integrator_min_time").unwrap();
        let cli = Cli::try_parse_from([
            "contact-pmp",
            "solve",
            "--problem",
            "x",
            "--time-mode",
            "fixed",
            "--t1",
            "3",
        ])
        .unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        apply_solve_args(&mut r, &a).unwrap();
        assert_eq!(r.problem.time_mode, TimeMode::Fixed(3.0));
        assert_eq!(r.guess.t1, None);
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), EXIT_INPUT);
        let e = Error::NoConvergence {
            iterations: 3,
            best_residual: 0.5,
            best_iterate: vec![1.0],
            residual_history: vec![1.0, 0.5],
        };
        assert_eq!(exit_code(&e), EXIT_SOLVER);
        let v: serde_json::Value = serde_json::from_str(&error_json(&e)).unwrap();
        assert_eq!(v["error"], "no_convergence");
        assert_eq!(v["best_residual"], 0.5);
        assert!(matches!(resolve_problem("no_such_problem"), Err(Error::UnknownName { .. })));
    }
}
