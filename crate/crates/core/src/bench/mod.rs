//! Benchmark catalog with closed-form oracles, and a brute-force direct
//! oracle for cross-checking.

mod oracle;

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ocp::models::{CoordinateTarget, DoubleIntegrator, LinearDynamics, PointTarget, QuadraticCost, ScalarLq};
use crate::ocp::{ControlSet, OcpProblem, TimeMode};
use crate::shoot::{solve, verify_extremal, Diagnostics, ShootingUnknowns, SolveOptions};

pub use oracle::{direct_oracle, time_grid, OracleResult, OracleSpec, DEFAULT_BUDGET, PENALTY};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticOracle {
    pub cost: f64,
    /// Terminal time (the fixed one for fixed-time problems).
    pub t1: f64,
    pub switch_times: Vec<f64>,
    pub unknowns: ShootingUnknowns,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TolerancesProfile {
    pub t1: f64,
    pub switch: f64,
    pub cost: f64,
    pub costate: f64,
    /// Allowed excess of the solver cost over the oracle cost.
    pub oracle_slack: f64,
}

#[derive(Clone)]
pub struct BenchmarkCase {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: OcpProblem,
    pub analytic: Option<AnalyticOracle>,
    pub initial_guess: ShootingUnknowns,
    pub tolerances: TolerancesProfile,
    pub oracle: OracleSpec,
}

fn bang_bang_set() -> ControlSet {
    ControlSet::interval(-1.0, 1.0)
}

fn min_time_origin() -> BenchmarkCase {
    let problem = OcpProblem::new("double_integrator_min_time", Arc::new(DoubleIntegrator), bang_bang_set(), vec![1.0, 0.0])
        .with_target(Arc::new(PointTarget::new(vec![0.0, 0.0])));
    BenchmarkCase {
        name: "double_integrator_min_time",
        description: "double integrator, L = 1, |u| ≤ 1, from (1,0) to the origin, free time",
        problem,
        // λ₁ ≡ −1, λ₂(t) = t − 1 switches sign at t = 1
        analytic: Some(AnalyticOracle {
            cost: 2.0,
            t1: 2.0,
            switch_times: vec![1.0],
            unknowns: ShootingUnknowns::normal(vec![-1.0, -1.0], Some(2.0), vec![-1.0, 1.0]),
        }),
        initial_guess: ShootingUnknowns::normal(vec![-0.6, -0.6], Some(1.5), vec![0.0, 0.0]),
        tolerances: TolerancesProfile {
            t1: 1e-4,
            switch: 1e-4,
            cost: 1e-4,
            costate: 1e-6,
            oracle_slack: 1e-3,
        },
        oracle: OracleSpec {
            intervals: 4,
            grid: 3,
            time_grid: time_grid(1.5, 2.5, 101),
            step: 1e-2,
        },
    }
}

fn min_time_line() -> BenchmarkCase {
    let problem = OcpProblem::new("min_time_to_line", Arc::new(DoubleIntegrator), bang_bang_set(), vec![1.0, 0.0])
        .with_target(Arc::new(
            CoordinateTarget::new(2, vec![1], vec![0.0]).expect("valid coordinate target"),
        ));
    let l1 = -1.0 / SQRT_2;
    BenchmarkCase {
        name: "min_time_to_line",
        description: "double integrator, L = 1, |u| ≤ 1, from (1,0) to the line x1 = 0, free time",
        problem,
        // u ≡ −1; H = 0 at t₁ gives λ₁ x₂(t₁) = 1, and λ₂(t₁) = 0
        analytic: Some(AnalyticOracle {
            cost: SQRT_2,
            t1: SQRT_2,
            switch_times: vec![],
            unknowns: ShootingUnknowns::normal(vec![l1, -1.0], Some(SQRT_2), vec![l1]),
        }),
        initial_guess: ShootingUnknowns::normal(vec![-0.5, -0.8], Some(1.2), vec![0.0]),
        tolerances: TolerancesProfile {
            t1: 1e-4,
            switch: 1e-4,
            cost: 1e-4,
            costate: 1e-6,
            // penalized endpoints may undercut √2 by about 1/(4ρ√2)
            oracle_slack: 1e-3,
        },
        oracle: OracleSpec {
            intervals: 4,
            grid: 3,
            time_grid: time_grid(1.3, 1.5, 201),
            step: 1e-2,
        },
    }
}

fn lq_terminal_cost() -> BenchmarkCase {
    let problem = OcpProblem::new("lq_terminal_cost", Arc::new(ScalarLq), bang_bang_set(), vec![1.0])
        .with_terminal_cost(Arc::new(QuadraticCost::new(vec![1.0], None).expect("valid weights")))
        .with_time_mode(TimeMode::Fixed(1.0));
    BenchmarkCase {
        name: "lq_terminal_cost",
        description: "x' = u, L = u²/2, K = x²/2, x0 = 1, free endpoint, t1 = 1",
        problem,
        // μ constant and μ₁ = −dK(x₁) give u ≡ −0.5, x₁ = 0.5
        analytic: Some(AnalyticOracle {
            cost: 0.25,
            t1: 1.0,
            switch_times: vec![],
            unknowns: ShootingUnknowns::normal(vec![-0.5], None, vec![]),
        }),
        initial_guess: ShootingUnknowns::normal(vec![0.0], None, vec![]),
        tolerances: TolerancesProfile {
            t1: 0.0,
            switch: 0.0,
            cost: 1e-8,
            costate: 1e-8,
            oracle_slack: 1e-8,
        },
        oracle: OracleSpec {
            intervals: 4,
            grid: 21,
            time_grid: vec![],
            step: 1e-2,
        },
    }
}

/// Matrices of the linear benchmark: a damped chain of integrators.
pub fn linear_pairing_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -0.5, -1.0, -1.0]);
    let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
    (a, b)
}

fn linear_pairing() -> BenchmarkCase {
    let (a, b) = linear_pairing_matrices();
    let dynamics = LinearDynamics::new(a, b, vec![], DMatrix::identity(3, 3), 1.0).expect("valid linear model");
    let problem = OcpProblem::new("linear_pairing", Arc::new(dynamics), bang_bang_set(), vec![1.0, 0.0, 0.0])
        .with_time_mode(TimeMode::Fixed(1.0));
    BenchmarkCase {
        name: "linear_pairing",
        description: "3-state x' = Ax + Bu, L = (|x|² + u²)/2, x0 = (1,0,0), free endpoint, t1 = 1",
        problem,
        analytic: None,
        initial_guess: ShootingUnknowns::normal(vec![0.0; 3], None, vec![]),
        tolerances: TolerancesProfile {
            t1: 0.0,
            switch: 0.0,
            cost: 0.0,
            costate: 0.0,
            oracle_slack: 1e-8,
        },
        oracle: OracleSpec {
            intervals: 4,
            grid: 21,
            time_grid: vec![],
            step: 1e-2,
        },
    }
}

/// The built-in benchmark problems, in a fixed order.
pub fn catalog() -> Vec<BenchmarkCase> {
    vec![min_time_origin(), min_time_line(), lq_terminal_cost(), linear_pairing()]
}

pub fn find_case(name: &str) -> Result<BenchmarkCase> {
    catalog()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnknownName {
            kind: "benchmark case",
            name: name.to_string(),
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub converged: bool,
    pub solver_cost: Option<f64>,
    pub solver_t1: Option<f64>,
    pub residual: Option<f64>,
    pub analytic_cost: Option<f64>,
    pub analytic_t1: Option<f64>,
    pub oracle_cost: f64,
    pub oracle_t1: f64,
    pub oracle_penalty: f64,
    /// solver − analytic.
    pub gap_analytic: Option<f64>,
    /// solver − oracle; at most `oracle_slack` when the solver is correct.
    pub gap_oracle: Option<f64>,
    pub oracle_slack: f64,
    pub passed: bool,
    #[serde(skip)]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(case, solve seconds, oracle seconds)`; kept out of the data files.
    pub runtimes: Vec<(String, f64, f64)>,
}

pub const CSV_HEADER: &str = "case,converged,solver_cost,solver_t1,residual,analytic_cost,analytic_t1,\
oracle_cost,oracle_t1,oracle_penalty,gap_analytic,gap_oracle,oracle_slack,passed";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:e},{:e},{:e},{},{},{:e},{}",
                r.case,
                r.converged,
                opt(r.solver_cost),
                opt(r.solver_t1),
                opt(r.residual),
                opt(r.analytic_cost),
                opt(r.analytic_t1),
                r.oracle_cost,
                r.oracle_t1,
                r.oracle_penalty,
                opt(r.gap_analytic),
                opt(r.gap_oracle),
                r.oracle_slack,
                r.passed
            );
        }
        s
    }

    pub fn runtimes_log(&self) -> String {
        let mut s = String::from("case,solve_seconds,oracle_seconds\n");
        for (c, a, b) in &self.runtimes {
            let _ = writeln!(s, "{c},{a:.6},{b:.6}");
        }
        s
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Solves one case from its default guess and compares against both oracles.
pub fn run_case(case: &BenchmarkCase, opts: &SolveOptions) -> Result<(BenchRow, f64, f64)> {
    let start = Instant::now();
    let solved = solve(&case.problem, &case.initial_guess, opts);
    let solve_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let oracle = direct_oracle(&case.problem, &case.oracle, DEFAULT_BUDGET)?;
    let oracle_secs = start.elapsed().as_secs_f64();

    let (converged, cost, t1, residual, diagnostics) = match &solved {
        Ok(r) => (
            r.converged,
            Some(r.cost),
            Some(r.t1()),
            Some(r.residual.norm()),
            verify_extremal(&case.problem, r).ok(),
        ),
        Err(_) => (false, None, None, None, None),
    };
    let tol = &case.tolerances;
    let gap_analytic = cost.zip(case.analytic.as_ref()).map(|(c, a)| c - a.cost);
    let gap_oracle = cost.map(|c| c - oracle.cost);
    let mut passed = converged && gap_oracle.is_some_and(|g| g <= tol.oracle_slack);
    if let (Some(a), Ok(r)) = (&case.analytic, &solved) {
        passed &= gap_analytic.is_some_and(|g| g.abs() <= tol.cost);
        if matches!(case.problem.time_mode, TimeMode::Free) {
            passed &= (r.t1() - a.t1).abs() <= tol.t1;
        }
        let sw = r.trajectory.switch_times();
        passed &= sw.len() == a.switch_times.len()
            && sw.iter().zip(&a.switch_times).all(|(x, y)| (x - y).abs() <= tol.switch);
    }
    let row = BenchRow {
        case: case.name.to_string(),
        converged,
        solver_cost: cost,
        solver_t1: t1,
        residual,
        analytic_cost: case.analytic.as_ref().map(|a| a.cost),
        analytic_t1: case.analytic.as_ref().map(|a| a.t1),
        oracle_cost: oracle.cost,
        oracle_t1: oracle.t1,
        oracle_penalty: oracle.penalty,
        gap_analytic,
        gap_oracle,
        oracle_slack: tol.oracle_slack,
        passed,
        diagnostics,
    };
    Ok((row, solve_secs, oracle_secs))
}

/// Runs every case in order. Solver failures become failing rows; oracle
/// errors abort.
pub fn run_bench(cases: &[BenchmarkCase], opts: &SolveOptions) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(cases.len());
    let mut runtimes = Vec::with_capacity(cases.len());
    for case in cases {
        let (row, s, o) = run_case(case, opts)?;
        runtimes.push((row.case.clone(), s, o));
        rows.push(row);
    }
    Ok(BenchReport { rows, runtimes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::IntegratorOptions;
    use crate::shoot::shooting_residual;

    #[test]
    fn catalog_names_are_unique() {
        let cat = catalog();
        assert!(cat.len() >= 4);
        for (i, a) in cat.iter().enumerate() {
            a.problem.validate().unwrap();
            a.initial_guess.validate(&a.problem).unwrap();
            assert!(cat[i + 1..].iter().all(|b| b.name != a.name));
        }
        assert!(find_case("nope").is_err());
    }

    #[test]
    fn analytic_unknowns_zero_the_residual() {
        for case in catalog() {
            let Some(a) = &case.analytic else { continue };
            let (res, ext) = shooting_residual(&case.problem, &a.unknowns, &IntegratorOptions::default()).unwrap();
            assert!(res.norm() <= 1e-6, "{}: {}", case.name, res.norm());
            assert!((ext.cost(&case.problem) - a.cost).abs() <= 1e-6, "{}", case.name);
            let sw = ext.switch_times();
            assert_eq!(sw.len(), a.switch_times.len(), "{}", case.name);
        }
    }

    #[test]
    fn bench_rows_pass() {
        let report = run_bench(&catalog(), &SolveOptions::default()).unwrap();
        for r in &report.rows {
            assert!(r.passed, "{r:?}");
        }
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
        assert!(!csv.contains("seconds"));
    }
}
