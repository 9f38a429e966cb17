//! Machine-readable outputs: trajectory CSV and the versioned solve report.
//!
//! Numbers are written in shortest round-trip form, so identical inputs
//! give byte-identical files.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::ocp::{OcpProblem, TimeMode};
use crate::projcost::Chart;
use crate::shoot::{
    verify_extremal, Classification, Diagnostics, ExtremalTrajectory, MultiStartReport, ResidualBlocks,
    ShootingResult, ShootingUnknowns,
};

pub const SCHEMA: &str = "1";

/// `t,x0,x1..xn,chart,c1..cn,h_value`.
pub fn trajectory_header(n: usize) -> String {
    let mut s = String::from("t,x0");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",chart");
    for i in 1..=n {
        let _ = write!(s, ",c{i}");
    }
    s.push_str(",h_value");
    s
}

fn chart_label(c: Chart) -> String {
    match c {
        Chart::Normal => "normal".into(),
        Chart::Abnormal(a) => format!("abnormal{a}"),
    }
}

/// One row per sample, in the chart the integrator used at that sample.
/// Chart switches show up as two rows with the same `t`.
pub fn trajectory_csv(ext: &ExtremalTrajectory) -> String {
    let n = ext.final_state().x.dim();
    let mut s = trajectory_header(n);
    s.push('\n');
    for sample in &ext.contact.samples {
        let _ = write!(s, "{:e}", sample.t);
        for v in sample.state.x.as_slice() {
            let _ = write!(s, ",{v:e}");
        }
        let _ = write!(s, ",{}", chart_label(sample.state.costate.chart()));
        for v in sample.state.costate.coords() {
            let _ = write!(s, ",{v:e}");
        }
        let _ = writeln!(s, ",{:e}", sample.h_value);
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub blocks: ResidualBlocks,
    pub norm: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub converged: bool,
    pub classification: Classification,
    pub unknowns: ShootingUnknowns,
    pub t1: f64,
    pub cost: f64,
    pub final_state: Vec<f64>,
    pub switch_times: Vec<f64>,
    pub iterations: usize,
    pub residual: ResidualSummary,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub schema: &'static str,
    pub problem: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub time_mode: TimeMode,
    pub attempts: usize,
    pub failures: usize,
    /// Best first.
    pub solutions: Vec<SolutionReport>,
}

pub fn solution_report(p: &OcpProblem, r: &ShootingResult) -> SolutionReport {
    SolutionReport {
        converged: r.converged,
        classification: r.classification,
        unknowns: r.unknowns.clone(),
        t1: r.t1(),
        cost: r.cost,
        final_state: r.trajectory.final_state().x.state().to_vec(),
        switch_times: r.trajectory.switch_times(),
        iterations: r.iterations,
        residual: ResidualSummary {
            blocks: r.residual.clone(),
            norm: r.residual.norm(),
            history: r.residual_history.clone(),
        },
        diagnostics: verify_extremal(p, r).ok(),
    }
}

pub fn solve_report(p: &OcpProblem, ms: &MultiStartReport) -> SolveReport {
    SolveReport {
        schema: SCHEMA,
        problem: p.name.clone(),
        state_dim: p.n(),
        control_dim: p.m(),
        x0: p.x0.clone(),
        t0: p.t0,
        time_mode: p.time_mode,
        attempts: ms.attempts,
        failures: ms.failures,
        solutions: ms.solutions.iter().map(|r| solution_report(p, r)).collect(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| crate::Error::InvalidInput(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::find_case;
    use crate::shoot::{solve_multistart, SolveOptions};

    #[test]
    fn header_layout() {
        assert_eq!(trajectory_header(2), "t,x0,x1,x2,chart,c1,c2,h_value");
    }

    #[test]
    fn lq_report_is_reproducible() {
        let case = find_case("lq_terminal_cost").unwrap();
        let run = || {
            let ms = solve_multistart(&case.problem, std::slice::from_ref(&case.initial_guess), &SolveOptions::default()).unwrap();
            let rep = solve_report(&case.problem, &ms);
            (to_json(&rep).unwrap(), trajectory_csv(&ms.solutions[0].trajectory))
        };
        let (j1, c1) = run();
        let (j2, c2) = run();
        assert_eq!(j1, j2);
        assert_eq!(c1, c2);
        let v: serde_json::Value = serde_json::from_str(&j1).unwrap();
        assert_eq!(v["schema"], "1");
        assert_eq!(v["solutions"][0]["classification"], "normal");
        let first = c1.lines().nth(1).unwrap();
        assert!(first.starts_with("0e0,0e0,1e0,normal,"), "{first}");
        let cols = c1.lines().next().unwrap().split(',').count();
        assert!(c1.lines().all(|l| l.split(',').count() == cols));
    }
}
