//! State, adjoint and tangent propagation along a control signal.
//!
//! The adjoint `ν̂` is propagated backward and the tangent `δx̂` forward on a
//! shared sample grid; their pairing `⟨ν̂(t), δx̂(t)⟩` is constant in exact
//! arithmetic, which gives a numerical certificate for both.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::contact::{rk4_step, uniform_steps};
use crate::error::{Error, Result};
use crate::ocp::{ExtendedState, OcpProblem};
use crate::projcost::CostateVector;

type SignalFn = dyn Fn(f64) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum ControlSignal {
    /// `values[i]` on `[breaks[i], breaks[i+1])`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// Linear on each `[times[i], times[i+1]]` from `right[i]` to
    /// `left[i+1]`; jumps where `left[i] ≠ right[i]`.
    PiecewiseLinear {
        times: Vec<f64>,
        left: Vec<Vec<f64>>,
        right: Vec<Vec<f64>>,
    },
    Function(Arc<SignalFn>),
}

impl fmt::Debug for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSignal::PiecewiseConstant { breaks, values } => f
                .debug_struct("PiecewiseConstant")
                .field("breaks", breaks)
                .field("values", values)
                .finish(),
            ControlSignal::PiecewiseLinear { times, .. } => {
                write!(f, "PiecewiseLinear({} knots)", times.len())
            }
            ControlSignal::Function(_) => f.write_str("Function"),
        }
    }
}

fn check_increasing(t: &[f64]) -> Result<()> {
    if t.len() < 2 || t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "control breakpoints must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

impl ControlSignal {
    pub fn constant(u: Vec<f64>) -> Self {
        ControlSignal::Function(Arc::new(move |_| u.clone()))
    }

    pub fn piecewise(breaks: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_increasing(&breaks)?;
        if values.len() + 1 != breaks.len() {
            return Err(Error::InvalidInput(format!(
                "{} breakpoints need {} values, got {}",
                breaks.len(),
                breaks.len() - 1,
                values.len()
            )));
        }
        Ok(ControlSignal::PiecewiseConstant { breaks, values })
    }

    pub fn piecewise_linear(times: Vec<f64>, left: Vec<Vec<f64>>, right: Vec<Vec<f64>>) -> Result<Self> {
        check_increasing(&times)?;
        if left.len() != times.len() || right.len() != times.len() {
            return Err(Error::InvalidInput("one left and right value per knot".into()));
        }
        Ok(ControlSignal::PiecewiseLinear { times, left, right })
    }

    pub fn function(f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        ControlSignal::Function(Arc::new(f))
    }

    /// Index of the piece containing `t` (clamped to the ends).
    fn piece(knots: &[f64], t: f64) -> usize {
        let i = knots.partition_point(|b| *b <= t);
        i.saturating_sub(1).min(knots.len() - 2)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_in(t, t, t)
    }

    /// Value at `t` as seen from within the step `[ta, tb]`: discontinuities
    /// are resolved by the piece containing the step midpoint.
    pub fn eval_in(&self, t: f64, ta: f64, tb: f64) -> Vec<f64> {
        let mid = 0.5 * (ta + tb);
        match self {
            ControlSignal::PiecewiseConstant { breaks, values } => {
                values[Self::piece(breaks, mid)].clone()
            }
            ControlSignal::PiecewiseLinear { times, left, right } => {
                let i = Self::piece(times, mid);
                let (a, b) = (times[i], times[i + 1]);
                let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
                right[i]
                    .iter()
                    .zip(&left[i + 1])
                    .map(|(p, q)| p + s * (q - p))
                    .collect()
            }
            ControlSignal::Function(f) => f(t),
        }
    }

    /// Discontinuity or kink times strictly inside `(ta, tb)`.
    pub fn breakpoints(&self, ta: f64, tb: f64) -> Vec<f64> {
        let inside = |v: &[f64]| v.iter().copied().filter(|b| *b > ta && *b < tb).collect();
        match self {
            ControlSignal::PiecewiseConstant { breaks, .. } => inside(breaks),
            ControlSignal::PiecewiseLinear { times, .. } => inside(times),
            ControlSignal::Function(_) => Vec::new(),
        }
    }
}

/// Sampled extended-state trajectory together with the control signal that
/// produced it.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ExtendedState>,
}

impl StateTrajectory {
    pub fn last(&self) -> &ExtendedState {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Sample grid: uniform steps of at most `step` inside each control piece.
fn sample_grid(u: &ControlSignal, ta: f64, tb: f64, step: f64) -> Vec<f64> {
    let mut knots = vec![ta];
    knots.extend(u.breakpoints(ta, tb));
    knots.push(tb);
    let mut times = vec![ta];
    for w in knots.windows(2) {
        let n = uniform_steps(w[0], w[1], step);
        let h = (w[1] - w[0]) / n as f64;
        for i in 1..=n {
            times.push(if i == n { w[1] } else { w[0] + i as f64 * h });
        }
    }
    times
}

fn check_span(span: (f64, f64), step: f64) -> Result<()> {
    if !(span.1 > span.0) || !span.0.is_finite() || !span.1.is_finite() || !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need a finite span with t1 > t0 and a positive step, got {span:?}, {step}"
        )));
    }
    Ok(())
}

/// RK4 trajectory of `x̂̇ = f̂(x̂, u(t))` from `x̂(t₀) = (0, x₀)`.
pub fn integrate_extended(
    p: &OcpProblem,
    u: &ControlSignal,
    span: (f64, f64),
    step: f64,
) -> Result<StateTrajectory> {
    integrate_extended_from(p, u, &ExtendedState::from_parts(0.0, &p.x0), span, step)
}

pub fn integrate_extended_from(
    p: &OcpProblem,
    u: &ControlSignal,
    xh0: &ExtendedState,
    span: (f64, f64),
    step: f64,
) -> Result<StateTrajectory> {
    check_span(span, step)?;
    if xh0.dim() != p.n() {
        return Err(Error::InvalidInput("initial state dimension mismatch".into()));
    }
    let times = sample_grid(u, span.0, span.1, step);
    let mut states = Vec::with_capacity(times.len());
    let mut y = xh0.as_slice().to_vec();
    states.push(xh0.clone());
    for w in times.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let field = |t: f64, y: &[f64]| Ok(p.extended_field(y, &u.eval_in(t, ta, tb)));
        y = rk4_step(&field, ta, &y, tb - ta)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite extended state at t = {tb}")));
        }
        states.push(ExtendedState::new(y.clone()));
    }
    Ok(StateTrajectory { times, states })
}

/// Cubic Hermite interpolation of the state on one step.
struct StepInterp<'a> {
    ta: f64,
    h: f64,
    ya: &'a [f64],
    yb: &'a [f64],
    fa: Vec<f64>,
    fb: Vec<f64>,
}

impl StepInterp<'_> {
    fn at(&self, t: f64) -> Vec<f64> {
        let s = (t - self.ta) / self.h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.ya.len())
            .map(|i| {
                h00 * self.ya[i]
                    + h10 * self.h * self.fa[i]
                    + h01 * self.yb[i]
                    + h11 * self.h * self.fb[i]
            })
            .collect()
    }
}

fn step_interp<'a>(
    p: &OcpProblem,
    u: &ControlSignal,
    traj: &'a StateTrajectory,
    k: usize,
) -> StepInterp<'a> {
    let (ta, tb) = (traj.times[k], traj.times[k + 1]);
    let ya = traj.states[k].as_slice();
    let yb = traj.states[k + 1].as_slice();
    StepInterp {
        ta,
        h: tb - ta,
        ya,
        yb,
        fa: p.extended_field(ya, &u.eval_in(ta, ta, tb)),
        fb: p.extended_field(yb, &u.eval_in(tb, ta, tb)),
    }
}

pub type Samples = Vec<(f64, Vec<f64>)>;

/// Backward RK4 of `ν̇₀ = 0`, `ν̇ = −(∂f/∂x)ᵀν − ν₀ ∂L/∂x` from `ν̂(t₁) = ν̂₁`,
/// on the trajectory's sample grid.
pub fn propagate_adjoint(
    p: &OcpProblem,
    traj: &StateTrajectory,
    u: &ControlSignal,
    nu1: &CostateVector,
) -> Result<Samples> {
    let n = p.n();
    if nu1.dim() != n || traj.states.first().is_none_or(|s| s.dim() != n) {
        return Err(Error::InvalidInput("costate and trajectory dimensions differ".into()));
    }
    let nu0 = nu1.nu0();
    let m = traj.times.len();
    let mut out = vec![(0.0, Vec::new()); m];
    let mut nu = nu1.as_slice().to_vec();
    out[m - 1] = (traj.times[m - 1], nu.clone());
    for k in (0..m - 1).rev() {
        let interp = step_interp(p, u, traj, k);
        let (ta, tb) = (traj.times[k], traj.times[k + 1]);
        let field = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let xh = interp.at(t);
            let x = &xh[1..];
            let uu = u.eval_in(t, ta, tb);
            let jac = p.dynamics.f_jacobian(x, &uu);
            let gl = p.dynamics.cost_gradient(x, &uu);
            let mut d = vec![0.0; n + 1];
            for i in 0..n {
                d[i + 1] = -(0..n).map(|j| y[j + 1] * jac[(j, i)]).sum::<f64>() - nu0 * gl[i];
            }
            Ok(d)
        };
        nu = rk4_step(&field, tb, &nu, ta - tb)?;
        nu[0] = nu0;
        if nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite adjoint at t = {ta}")));
        }
        out[k] = (ta, nu.clone());
    }
    Ok(out)
}

/// Forward RK4 of the variational equation `δx̂̇ = Df̂·δx̂`, where `Df̂`
/// stacks `(∂L/∂x, ∂f/∂x)` with a zero `x⁰` column.
pub fn propagate_tangent(
    p: &OcpProblem,
    traj: &StateTrajectory,
    u: &ControlSignal,
    dx0: &[f64],
) -> Result<Samples> {
    let n = p.n();
    if dx0.len() != n + 1 {
        return Err(Error::InvalidInput("tangent must have n+1 entries".into()));
    }
    let mut out = Vec::with_capacity(traj.times.len());
    let mut d = dx0.to_vec();
    out.push((traj.times[0], d.clone()));
    for k in 0..traj.times.len() - 1 {
        let interp = step_interp(p, u, traj, k);
        let (ta, tb) = (traj.times[k], traj.times[k + 1]);
        let field = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let xh = interp.at(t);
            let x = &xh[1..];
            let uu = u.eval_in(t, ta, tb);
            let jac = p.dynamics.f_jacobian(x, &uu);
            let gl = p.dynamics.cost_gradient(x, &uu);
            let dx = &y[1..];
            let mut out = Vec::with_capacity(n + 1);
            out.push(gl.iter().zip(dx).map(|(a, b)| a * b).sum());
            for j in 0..n {
                out.push((0..n).map(|i| jac[(j, i)] * dx[i]).sum());
            }
            Ok(out)
        };
        d = rk4_step(&field, ta, &d, tb - ta)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite tangent at t = {tb}")));
        }
        out.push((tb, d.clone()));
    }
    Ok(out)
}

/// Tangent propagation of each coordinate direction, in parallel.
pub fn propagate_tangent_basis(
    p: &OcpProblem,
    traj: &StateTrajectory,
    u: &ControlSignal,
) -> Result<Vec<Samples>> {
    (0..=p.n())
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; p.n() + 1];
            e[i] = 1.0;
            propagate_tangent(p, traj, u, &e)
        })
        .collect()
}

/// `max_t |⟨ν̂(t), δx̂(t)⟩ − ⟨ν̂(t₁), δx̂(t₁)⟩|`.
pub fn pairing_defect(costates: &Samples, tangents: &Samples) -> Result<f64> {
    if costates.len() != tangents.len() || costates.is_empty() {
        return Err(Error::GridMismatch(format!(
            "{} costate samples vs {} tangent samples",
            costates.len(),
            tangents.len()
        )));
    }
    let scale = 1e-12 * costates.last().map_or(1.0, |c| c.0.abs().max(1.0));
    let mut pairs = Vec::with_capacity(costates.len());
    for ((tc, c), (tt, d)) in costates.iter().zip(tangents) {
        if (tc - tt).abs() > scale || c.len() != d.len() {
            return Err(Error::GridMismatch(format!("sample at t = {tc} vs t = {tt}")));
        }
        pairs.push(c.iter().zip(d).map(|(a, b)| a * b).sum::<f64>());
    }
    let last = *pairs.last().unwrap();
    Ok(pairs.iter().map(|v| (v - last).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{integrate_symplectic, ContactHamiltonian, FnHamiltonian};
    use crate::ocp::models::{DoubleIntegrator, LinearDynamics};
    use crate::ocp::{ControlSet, Dynamics};
    use nalgebra::DMatrix;

    struct Scalar {
        l: f64,
    }
    impl Dynamics for Scalar {
        fn name(&self) -> &str {
            "scalar"
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
            vec![x[0] + u[0]]
        }
        fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
            self.l
        }
    }

    fn scalar(l: f64, x0: f64) -> OcpProblem {
        OcpProblem::new("s", Arc::new(Scalar { l }), ControlSet::interval(-10.0, 10.0), vec![x0])
    }

    #[test]
    fn extended_state_examples() {
        // ẋ = x + u with x₀ = −u keeps x constant; L = 1 accumulates time
        let p = scalar(1.0, -0.5);
        let tr = integrate_extended(&p, &ControlSignal::constant(vec![0.5]), (0.0, 2.0), 1e-2).unwrap();
        let end = tr.last().as_slice();
        assert!((end[0] - 2.0).abs() < 1e-12 && (end[1] + 0.5).abs() < 1e-12);

        let p0 = scalar(0.0, 1.0);
        let tr = integrate_extended(&p0, &ControlSignal::constant(vec![0.0]), (0.0, 1.0), 1e-2).unwrap();
        assert!(tr.states.iter().all(|s| s.running_cost() == 0.0));

        let di = OcpProblem::new("di", Arc::new(DoubleIntegrator), ControlSet::interval(-1.0, 1.0), vec![1.0, 0.0]);
        let tr = integrate_extended(&di, &ControlSignal::constant(vec![-1.0]), (0.0, 1.0), 1e-3).unwrap();
        let x = tr.last().state();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_controls_split_the_grid() {
        let di = OcpProblem::new("di", Arc::new(DoubleIntegrator), ControlSet::interval(-1.0, 1.0), vec![1.0, 0.0]);
        let u = ControlSignal::piecewise(vec![0.0, 1.0, 2.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        let tr = integrate_extended(&di, &u, (0.0, 2.0), 0.3).unwrap();
        assert!(tr.times.contains(&1.0));
        let x = tr.last().state();
        assert!(x[0].abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!((tr.last().running_cost() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_adjoint_tangent_and_pairing() {
        // f = x, L = 0: ν(t) = c e^{t₁−t}, δx(t) = e^{t−t₀}
        let p = scalar(0.0, 1.0);
        let u = ControlSignal::constant(vec![0.0]);
        let tr = integrate_extended(&p, &u, (0.0, 1.0), 1e-3).unwrap();
        let nu = propagate_adjoint(&p, &tr, &u, &CostateVector::new(vec![-1.0, 2.0]).unwrap()).unwrap();
        for (t, v) in &nu {
            assert!((v[1] - 2.0 * (1.0 - t).exp()).abs() < 1e-11);
            assert_eq!(v[0], -1.0);
        }
        let d = propagate_tangent(&p, &tr, &u, &[0.0, 1.0]).unwrap();
        for (t, v) in &d {
            assert!((v[1] - t.exp()).abs() < 1e-11 && v[0] == 0.0);
        }
        assert!(pairing_defect(&nu, &d).unwrap() < 1e-12);
        let z = propagate_tangent(&p, &tr, &u, &[0.0, 0.0]).unwrap();
        assert_eq!(pairing_defect(&nu, &z).unwrap(), 0.0);
        let c = propagate_tangent(&p, &tr, &u, &[1.0, 0.0]).unwrap();
        assert!(c.iter().all(|(_, v)| v == &vec![1.0, 0.0]));
        assert!(matches!(pairing_defect(&nu, &z[1..].to_vec()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn trivial_adjoints_are_constant() {
        let di = OcpProblem::new("di", Arc::new(DoubleIntegrator), ControlSet::interval(-1.0, 1.0), vec![1.0, 0.0]);
        let u = ControlSignal::constant(vec![1.0]);
        let tr = integrate_extended(&di, &u, (0.0, 1.0), 1e-2).unwrap();
        let nu = propagate_adjoint(&di, &tr, &u, &CostateVector::new(vec![-1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(nu.iter().all(|(_, v)| v == &vec![-1.0, 0.0, 0.0]));
    }

    #[test]
    fn adjoint_matches_symplectic_lift() {
        let lin = LinearDynamics::new(
            DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, -0.2]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.4])],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            1.0,
        )
        .unwrap();
        let p = OcpProblem::new("lin", Arc::new(lin), ControlSet::interval(-5.0, 5.0), vec![0.5, -0.3]);
        let u = ControlSignal::function(|t| vec![(7.0 * t).sin()]);
        let tr = integrate_extended(&p, &u, (0.0, 1.0), 1e-3).unwrap();
        let nu1 = CostateVector::new(vec![-1.0, 0.4, -0.8]).unwrap();
        let nu = propagate_adjoint(&p, &tr, &u, &nu1).unwrap();
        // time-dependent lift: carry t as an extra coordinate
        let dynp = p.dynamics.clone();
        let h = FnHamiltonian::new(move |y, nuh| {
            let t = y[3];
            let uu = [(7.0 * t).sin()];
            let x = &y[1..3];
            let f = dynp.f(x, &uu);
            nuh[0] * dynp.running_cost(x, &uu) + nuh[1] * f[0] + nuh[2] * f[1] + nuh[3]
        });
        // integrate backward by reversing time: s = 1 − t
        let hb = FnHamiltonian::new(move |y, nuh| -ContactHamiltonian::value(&h, y, nuh).unwrap_or(f64::NAN));
        let end = tr.last().as_slice();
        let xs = [end[0], end[1], end[2], 1.0];
        let ns = [-1.0, 0.4, -0.8, 0.0];
        let sym = integrate_symplectic(&hb, &xs, &ns, (0.0, 1.0), 1e-3).unwrap();
        let back = sym.last().unwrap();
        let start = &nu[0].1;
        for i in 0..3 {
            assert!((back.nu[i] - start[i]).abs() < 1e-8, "{i}: {} vs {}", back.nu[i], start[i]);
        }
    }
}
