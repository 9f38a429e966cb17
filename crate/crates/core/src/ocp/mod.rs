//! Optimal-control problem model.
//!
//! A problem is `min ∫ L(x,u) dt (+ K(x(t₁)))` subject to `ẋ = f(x,u)`,
//! `x(t₀) = x₀`, `x(t₁) ∈ S₁`, `u ∈ U`. Dynamics, targets and terminal costs
//! are trait objects, usually built by name from [`models`].

mod hamiltonian;
pub mod json;
pub mod models;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contact::fd_step;
use crate::error::{Error, Result};

pub use hamiltonian::{
    contact_control_hamiltonian, control_hamiltonian, maximize_control, maximize_homogeneous,
    optimal_contact_hamiltonian, FixedControlHamiltonian, OptimalHamiltonian,
};

/// `x̂ = (x⁰, x)`: accumulated running cost followed by the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState(Vec<f64>);

impl ExtendedState {
    pub fn new(entries: Vec<f64>) -> Self {
        debug_assert!(!entries.is_empty());
        Self(entries)
    }

    pub fn from_parts(cost: f64, x: &[f64]) -> Self {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.push(cost);
        v.extend_from_slice(x);
        Self(v)
    }

    pub fn running_cost(&self) -> f64 {
        self.0[0]
    }

    pub fn state(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }
}

pub trait Dynamics: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64;

    /// `∂f/∂x`, with entry `(j, i) = ∂f^j/∂x^i`.
    fn f_jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|p| self.f(p, u), x)
    }

    /// `∂L/∂x`.
    fn cost_gradient(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        fd_gradient(|p| self.running_cost(p, u), x)
    }

    /// Closed-form maximizer of `ν·f(x,u) + ν₀ L(x,u)` over `set`, if known.
    fn argmax(&self, _x: &[f64], _nu0: f64, _nu: &[f64], _set: &ControlSet) -> Option<Vec<f64>> {
        None
    }
}

/// Target `S₁ = {x : g(x) = 0}` with `g: R^n → R^k`.
pub trait TargetSet: Send + Sync {
    fn name(&self) -> &str;
    fn codim(&self) -> usize;
    fn g(&self, x: &[f64]) -> Vec<f64>;

    /// `Dg`, k × n.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|p| self.g(p), x)
    }
}

pub trait TerminalCost: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        fd_gradient(|p| self.value(p), x)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|p| self.gradient(p), x)
    }
}

/// Central-difference Jacobian of a vector map.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let mut p = x.to_vec();
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let s = fd_step(x[i]);
        p[i] = x[i] + s;
        let fp = f(&p);
        p[i] = x[i] - s;
        let fm = f(&p);
        p[i] = x[i];
        for j in 0..rows {
            jac[(j, i)] = (fp[j] - fm[j]) / (2.0 * s);
        }
    }
    jac
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let s = fd_step(x[i]);
            p[i] = x[i] + s;
            let fp = f(&p);
            p[i] = x[i] - s;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Finite(Vec<Vec<f64>>),
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Finite(pts) => pts.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ControlSet::Box { lo, hi } => {
                if lo.len() != m || hi.len() != m {
                    return Err(Error::InvalidInput(format!(
                        "control box must have {m} bounds per side"
                    )));
                }
                for (a, b) in lo.iter().zip(hi) {
                    if !a.is_finite() || !b.is_finite() || a > b {
                        return Err(Error::InvalidInput(format!(
                            "control box bounds [{a}, {b}] are not a finite interval"
                        )));
                    }
                }
            }
            ControlSet::Finite(pts) => {
                if pts.is_empty() {
                    return Err(Error::InvalidInput("finite control set is empty".into()));
                }
                if pts.iter().any(|p| p.len() != m || p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::InvalidInput(format!(
                        "finite control points must be finite {m}-vectors"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Box: componentwise bounds; finite list: exact membership.
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                u.len() == lo.len()
                    && u.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(v, (a, b))| *a <= *v && *v <= *b)
            }
            ControlSet::Finite(pts) => pts.iter().any(|p| p.as_slice() == u),
        }
    }

    /// Evaluation grid: `g` points per axis for a box, the list itself
    /// otherwise. Points are in lexicographic index order.
    pub fn grid(&self, g: usize) -> Vec<Vec<f64>> {
        match self {
            ControlSet::Box { lo, hi } => box_grid(lo, hi, g),
            ControlSet::Finite(pts) => pts.clone(),
        }
    }

    /// Whether two consecutive maximizers differ by a jump rather than by
    /// continuous drift.
    pub fn is_jump(&self, a: &[f64], b: &[f64], fraction: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => a
                .iter()
                .zip(b)
                .zip(lo.iter().zip(hi))
                .any(|((x, y), (l, h))| (x - y).abs() > fraction * (h - l)),
            ControlSet::Finite(_) => a != b,
        }
    }

    pub fn clamp(&self, u: &mut [f64]) {
        if let ControlSet::Box { lo, hi } = self {
            for (v, (l, h)) in u.iter_mut().zip(lo.iter().zip(hi)) {
                *v = v.clamp(*l, *h);
            }
        }
    }
}

pub(crate) fn box_grid(lo: &[f64], hi: &[f64], g: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| linspace(*a, *b, g))
        .collect();
    let mut out = vec![Vec::with_capacity(lo.len())];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

pub(crate) fn linspace(a: f64, b: f64, g: usize) -> Vec<f64> {
    if g <= 1 || a == b {
        return vec![a];
    }
    (0..g)
        .map(|i| {
            if i + 1 == g {
                b
            } else {
                a + (b - a) * i as f64 / (g - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximizerOptions {
    /// Grid points per control axis.
    pub grid: usize,
    /// Local refinement rounds around the grid incumbent.
    pub rounds: usize,
    /// A maximizer moving by more than this fraction of the box width
    /// between steps is treated as a switch.
    pub switch_jump: f64,
}

impl Default for MaximizerOptions {
    fn default() -> Self {
        Self {
            grid: 33,
            rounds: 3,
            switch_jump: 0.25,
        }
    }
}

#[derive(Clone)]
pub struct OcpProblem {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub control_set: ControlSet,
    pub x0: Vec<f64>,
    pub t0: f64,
    /// `None` leaves the endpoint free.
    pub target: Option<Arc<dyn TargetSet>>,
    pub terminal_cost: Option<Arc<dyn TerminalCost>>,
    pub time_mode: TimeMode,
    pub maximizer: MaximizerOptions,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("name", &self.name)
            .field("dynamics", &self.dynamics.name())
            .field("control_set", &self.control_set)
            .field("x0", &self.x0)
            .field("t0", &self.t0)
            .field("target", &self.target.as_ref().map(|t| t.name().to_string()))
            .field(
                "terminal_cost",
                &self.terminal_cost.as_ref().map(|k| k.name().to_string()),
            )
            .field("time_mode", &self.time_mode)
            .finish()
    }
}

impl OcpProblem {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics>,
        control_set: ControlSet,
        x0: Vec<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            dynamics,
            control_set,
            x0,
            t0: 0.0,
            target: None,
            terminal_cost: None,
            time_mode: TimeMode::Free,
            maximizer: MaximizerOptions::default(),
        }
    }

    pub fn with_target(mut self, target: Arc<dyn TargetSet>) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_terminal_cost(mut self, k: Arc<dyn TerminalCost>) -> Self {
        self.terminal_cost = Some(k);
        self
    }

    pub fn with_time_mode(mut self, mode: TimeMode) -> Self {
        self.time_mode = mode;
        self
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// Codimension `k` of the target (0 for a free endpoint).
    pub fn k(&self) -> usize {
        self.target.as_ref().map_or(0, |t| t.codim())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be positive".into()));
        }
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "x0 must be a finite {n}-vector, got {:?}",
                self.x0
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidInput("t0 must be finite".into()));
        }
        self.control_set.validate(m)?;
        if let Some(t) = &self.target {
            if t.codim() == 0 || t.codim() > n {
                return Err(Error::InvalidInput(format!(
                    "target codimension {} outside 1..={n}",
                    t.codim()
                )));
            }
        }
        if let TimeMode::Fixed(t1) = self.time_mode {
            if !(t1 > self.t0) || !t1.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "fixed terminal time {t1} must exceed t0 = {}",
                    self.t0
                )));
            }
        }
        if self.maximizer.grid < 2 {
            return Err(Error::InvalidInput("maximizer grid needs at least 2 points".into()));
        }
        // evaluators must be finite on a probe
        let u = self.control_set.grid(2).swap_remove(0);
        let fx = self.dynamics.f(&self.x0, &u);
        let l = self.dynamics.running_cost(&self.x0, &u);
        if fx.len() != n || fx.iter().any(|v| !v.is_finite()) || !l.is_finite() {
            return Err(Error::InvalidInput(format!(
                "dynamics '{}' not finite at the initial state",
                self.dynamics.name()
            )));
        }
        if let Some(k) = &self.terminal_cost {
            if !k.value(&self.x0).is_finite() {
                return Err(Error::InvalidInput("terminal cost not finite at x0".into()));
            }
        }
        Ok(())
    }

    /// Extended dynamics `f̂(x̂, u) = (L(x,u), f(x,u))`; independent of `x⁰`.
    pub fn extended_field(&self, xh: &[f64], u: &[f64]) -> Vec<f64> {
        let x = &xh[1..];
        let mut out = Vec::with_capacity(xh.len());
        out.push(self.dynamics.running_cost(x, u));
        out.extend(self.dynamics.f(x, u));
        out
    }

    /// `K(x)`, zero when no terminal cost is set.
    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal_cost.as_ref().map_or(0.0, |k| k.value(x))
    }

    pub fn terminal_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.terminal_cost
            .as_ref()
            .map_or_else(|| vec![0.0; x.len()], |k| k.gradient(x))
    }
}

/// The extended system of `p` as a standalone evaluator.
pub fn extend_system(p: &OcpProblem) -> impl Fn(&[f64], &[f64]) -> Vec<f64> + '_ {
    move |xh, u| p.extended_field(xh, u)
}

#[cfg(test)]
mod tests {
    use super::models::{DoubleIntegrator, ScalarLq};
    use super::*;

    #[test]
    fn extended_field_examples() {
        struct Unit;
        impl Dynamics for Unit {
            fn name(&self) -> &str {
                "unit"
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
                1.0
            }
        }
        let p = OcpProblem::new("unit", Arc::new(Unit), ControlSet::interval(-1.0, 1.0), vec![3.0]);
        let fhat = extend_system(&p);
        assert_eq!(fhat(&[0.0, 3.0], &[0.5]), vec![1.0, 0.5]);

        let lq = OcpProblem::new("lq", Arc::new(ScalarLq), ControlSet::interval(-1.0, 1.0), vec![1.0]);
        assert_eq!(lq.extended_field(&[7.0, 1.0], &[0.0])[0], 0.0);

        let di = OcpProblem::new(
            "di",
            Arc::new(DoubleIntegrator),
            ControlSet::interval(-1.0, 1.0),
            vec![1.0, 0.0],
        );
        assert_eq!(di.extended_field(&[0.0, 1.0, 0.0], &[-1.0]), vec![1.0, 0.0, -1.0]);
        // independent of x⁰
        assert_eq!(
            di.extended_field(&[5.0, 1.0, 0.0], &[-1.0]),
            di.extended_field(&[0.0, 1.0, 0.0], &[-1.0])
        );
    }

    #[test]
    fn control_set_membership() {
        let b = ControlSet::Box {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 2.0],
        };
        assert!(b.contains(&[0.0, 2.0]));
        assert!(!b.contains(&[0.0, 2.1]));
        let f = ControlSet::Finite(vec![vec![-1.0], vec![1.0]]);
        assert!(f.contains(&[1.0]));
        assert!(!f.contains(&[0.0]));
        assert_eq!(b.grid(3).len(), 9);
        assert_eq!(b.grid(3)[1], vec![-1.0, 1.0]);
    }

    #[test]
    fn validation_catches_bad_problems() {
        let di = Arc::new(DoubleIntegrator);
        let p = OcpProblem::new("di", di.clone(), ControlSet::interval(1.0, -1.0), vec![1.0, 0.0]);
        assert!(p.validate().is_err());
        let p = OcpProblem::new("di", di.clone(), ControlSet::Finite(vec![]), vec![1.0, 0.0]);
        assert!(p.validate().is_err());
        let p = OcpProblem::new("di", di.clone(), ControlSet::interval(-1.0, 1.0), vec![1.0]);
        assert!(p.validate().is_err());
        let p = OcpProblem::new("di", di, ControlSet::interval(-1.0, 1.0), vec![1.0, 0.0])
            .with_time_mode(TimeMode::Fixed(0.0));
        assert!(p.validate().is_err());
    }

    #[test]
    fn default_jacobians_match_closed_forms() {
        struct Pend;
        impl Dynamics for Pend {
            fn name(&self) -> &str {
                "p"
            }
            fn state_dim(&self) -> usize {
                2
            }
            fn control_dim(&self) -> usize {
                1
            }
            fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
                vec![x[1], -x[0].sin() + u[0] * x[1]]
            }
            fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
                x[0] * x[0] * x[1] + u[0] * u[0]
            }
        }
        let x = [0.7, -0.4];
        let u = [0.3];
        let j = Pend.f_jacobian(&x, &u);
        assert!((j[(1, 0)] + 0.7f64.cos()).abs() < 1e-8);
        assert!((j[(1, 1)] - 0.3).abs() < 1e-8);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-8);
        let g = Pend.cost_gradient(&x, &u);
        assert!((g[0] - 2.0 * 0.7 * -0.4).abs() < 1e-8);
        assert!((g[1] - 0.49).abs() < 1e-8);
    }
}
