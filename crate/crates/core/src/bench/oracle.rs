//! Exhaustive direct-discretization oracle.
//!
//! Enumerates every piecewise-constant control schedule with values on a
//! grid of `U` (and every terminal time on a grid when time is free), and
//! keeps the cheapest. Target constraints enter as a quadratic penalty, so
//! the result is an upper bound on the optimum up to the penalty slack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{rk4_step, uniform_steps};
use crate::error::{Error, Result};
use crate::ocp::{OcpProblem, TimeMode};

pub const PENALTY: f64 = 1e4;
pub const DEFAULT_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Number `N` of equal control intervals.
    pub intervals: usize,
    /// Grid points `G` per control axis.
    pub grid: usize,
    /// Candidate terminal times; ignored for fixed-time problems.
    pub time_grid: Vec<f64>,
    /// RK4 step used to evaluate each schedule.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub cost: f64,
    pub t1: f64,
    pub schedule: Vec<Vec<f64>>,
    /// Penalty part of `cost`.
    pub penalty: f64,
    pub evaluations: u128,
}

/// `count` evenly spaced points from `a` to `b` inclusive.
pub fn time_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    crate::ocp::linspace(a, b, count)
}

fn schedule_from_index(mut idx: usize, levels: &[Vec<f64>], n: usize) -> Vec<usize> {
    let g = levels.len();
    let mut out = vec![0; n];
    for slot in out.iter_mut().rev() {
        *slot = idx % g;
        idx /= g;
    }
    out
}

/// RK4 over one control interval with `u` held constant.
fn advance(p: &OcpProblem, y: &[f64], u: &[f64], ta: f64, tb: f64, step: f64) -> Result<Vec<f64>> {
    let steps = uniform_steps(ta, tb, step);
    let h = (tb - ta) / steps as f64;
    let field = |_t: f64, y: &[f64]| Ok(p.extended_field(y, u));
    let mut y = y.to_vec();
    for i in 0..steps {
        y = rk4_step(&field, ta + i as f64 * h, &y, h)?;
    }
    Ok(y)
}

/// Total cost and penalty part at the final extended state.
fn terminal(p: &OcpProblem, y: &[f64]) -> Result<(f64, f64)> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepFailure("non-finite state in oracle evaluation".into()));
    }
    let x1 = &y[1..];
    let penalty = p
        .target
        .as_ref()
        .map_or(0.0, |g| PENALTY * g.g(x1).iter().map(|v| v * v).sum::<f64>());
    Ok((y[0] + p.terminal_value(x1) + penalty, penalty))
}

fn interval(p: &OcpProblem, t1: f64, n_int: usize, j: usize) -> (f64, f64) {
    let width = (t1 - p.t0) / n_int as f64;
    let ta = p.t0 + j as f64 * width;
    let tb = if j + 1 == n_int { t1 } else { p.t0 + (j + 1) as f64 * width };
    (ta, tb)
}

/// Cost and penalty of one schedule.
#[cfg(test)]
fn evaluate(p: &OcpProblem, levels: &[Vec<f64>], sched: &[usize], t1: f64, step: f64) -> Result<(f64, f64)> {
    let mut y: Vec<f64> = std::iter::once(0.0).chain(p.x0.iter().copied()).collect();
    for (j, &s) in sched.iter().enumerate() {
        let (ta, tb) = interval(p, t1, sched.len(), j);
        y = advance(p, &y, &levels[s], ta, tb, step)?;
    }
    terminal(p, &y)
}

/// `(cost, schedule index, penalty)`; lower cost wins, then lower index.
type Best = (f64, usize, f64);

fn keep(a: Option<Best>, b: Option<Best>) -> Option<Best> {
    match (a, b) {
        (Some(a), Some(b)) => Some(match a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) {
            std::cmp::Ordering::Greater => b,
            _ => a,
        }),
        (a, None) => a,
        (None, b) => b,
    }
}

struct Search<'a> {
    p: &'a OcpProblem,
    levels: &'a [Vec<f64>],
    n_int: usize,
    t1: f64,
    step: f64,
}

impl Search<'_> {
    /// Depth-first over the remaining intervals, sharing every prefix.
    /// Schedules whose integration fails are skipped.
    fn descend(&self, y: &[f64], depth: usize, index: usize) -> Option<Best> {
        if depth == self.n_int {
            return terminal(self.p, y).ok().map(|(c, pen)| (c, index, pen));
        }
        let (ta, tb) = interval(self.p, self.t1, self.n_int, depth);
        let g = self.levels.len();
        let mut best = None;
        for (s, u) in self.levels.iter().enumerate() {
            if let Ok(next) = advance(self.p, y, u, ta, tb, self.step) {
                best = keep(best, self.descend(&next, depth + 1, index * g + s));
            }
        }
        best
    }
}

/// Exhaustive minimization over `G^(m·N)` schedules times the terminal-time
/// grid; ties go to the smallest (time, schedule) index.
pub fn direct_oracle(p: &OcpProblem, spec: &OracleSpec, budget: u128) -> Result<OracleResult> {
    p.validate()?;
    if spec.intervals == 0 || spec.grid == 0 || !(spec.step > 0.0) {
        return Err(Error::InvalidInput("oracle needs N ≥ 1, G ≥ 1 and a positive step".into()));
    }
    let levels = p.control_set.grid(spec.grid);
    let times: Vec<f64> = match p.time_mode {
        TimeMode::Fixed(t1) => vec![t1],
        TimeMode::Free => spec.time_grid.iter().copied().filter(|t| *t > p.t0).collect(),
    };
    if times.is_empty() {
        return Err(Error::InvalidInput("oracle time grid has no point after t0".into()));
    }
    let per_time = (levels.len() as u128).checked_pow(spec.intervals as u32);
    let required = per_time
        .and_then(|s| s.checked_mul(times.len() as u128))
        .unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::BudgetExceeded {
            required,
            limit: budget,
        });
    }
    let per_time = per_time.unwrap_or(0) as usize;
    let g = levels.len();
    let y0: Vec<f64> = std::iter::once(0.0).chain(p.x0.iter().copied()).collect();
    // one task per (terminal time, first control value)
    let best = (0..times.len() * g)
        .into_par_iter()
        .map(|task| {
            let (ti, s0) = (task / g, task % g);
            let search = Search {
                p,
                levels: &levels,
                n_int: spec.intervals,
                t1: times[ti],
                step: spec.step,
            };
            let (ta, tb) = interval(p, times[ti], spec.intervals, 0);
            let y = advance(p, &y0, &levels[s0], ta, tb, spec.step).ok()?;
            search
                .descend(&y, 1, s0)
                .map(|(c, idx, pen)| (c, ti * per_time + idx, pen))
        })
        .reduce(|| None, keep)
        .ok_or_else(|| Error::EvaluationFailure("every oracle schedule failed".into()))?;
    let (cost, flat, penalty) = best;
    let sched = schedule_from_index(flat % per_time, &levels, spec.intervals);
    Ok(OracleResult {
        cost,
        t1: times[flat / per_time],
        schedule: sched.iter().map(|s| levels[*s].clone()).collect(),
        penalty,
        evaluations: required,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::models::{DoubleIntegrator, PointTarget, QuadraticCost, ScalarLq};
    use crate::ocp::{ControlSet, Dynamics};
    use std::sync::Arc;

    fn lq() -> OcpProblem {
        OcpProblem::new("lq", Arc::new(ScalarLq), ControlSet::interval(-1.0, 1.0), vec![1.0])
            .with_terminal_cost(Arc::new(QuadraticCost::new(vec![1.0], None).unwrap()))
            .with_time_mode(TimeMode::Fixed(1.0))
    }

    #[test]
    fn lq_oracle_matches_closed_form() {
        let spec = OracleSpec {
            intervals: 4,
            grid: 21,
            time_grid: vec![],
            step: 0.05,
        };
        let r = direct_oracle(&lq(), &spec, DEFAULT_BUDGET).unwrap();
        assert!((r.cost - 0.25).abs() <= 2e-3, "{}", r.cost);
        assert!(r.schedule.iter().all(|u| (u[0] + 0.5).abs() < 1e-12));
    }

    #[test]
    fn min_time_oracle_finds_bang_bang() {
        let p = OcpProblem::new("mt", Arc::new(DoubleIntegrator), ControlSet::interval(-1.0, 1.0), vec![1.0, 0.0])
            .with_target(Arc::new(PointTarget::new(vec![0.0, 0.0])));
        let spec = OracleSpec {
            intervals: 4,
            grid: 3,
            time_grid: time_grid(1.5, 2.5, 101),
            step: 0.05,
        };
        let r = direct_oracle(&p, &spec, DEFAULT_BUDGET).unwrap();
        assert!((r.t1 - 2.0).abs() <= 0.01, "{}", r.t1);
        assert_eq!(r.schedule, vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]]);
    }

    #[test]
    fn zero_cost_problem_is_flat() {
        struct Free;
        impl Dynamics for Free {
            fn name(&self) -> &str {
                "free"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn control_dim(&self) -> usize {
                1
            }
            fn f(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
                vec![u[0]]
            }
            fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
                0.0
            }
        }
        let p = OcpProblem::new("z", Arc::new(Free), ControlSet::interval(-1.0, 1.0), vec![0.0])
            .with_time_mode(TimeMode::Fixed(1.0));
        let spec = OracleSpec {
            intervals: 2,
            grid: 3,
            time_grid: vec![],
            step: 0.1,
        };
        let levels = p.control_set.grid(3);
        for i in 0..9 {
            let s = schedule_from_index(i, &levels, 2);
            assert_eq!(evaluate(&p, &levels, &s, 1.0, 0.1).unwrap().0, 0.0);
        }
        let r = direct_oracle(&p, &spec, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.schedule, vec![vec![-1.0], vec![-1.0]]);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = OracleSpec {
            intervals: 8,
            grid: 21,
            time_grid: vec![],
            step: 0.1,
        };
        assert!(matches!(
            direct_oracle(&lq(), &spec, DEFAULT_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
