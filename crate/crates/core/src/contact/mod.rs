//! Contact structure on the projectivized cotangent bundle `P(T*R^{n+1})`.
//!
//! In normal-chart coordinates `(x⁰, x, λ)` the contact form is
//! `θ = −dx⁰ + λ_i dx^i`, the two-form is `ω = −dθ = dx^i ∧ dλ_i` and the Reeb
//! field is `−∂/∂x⁰`. The contact Hamiltonian vector field `X_h` is defined by
//! `θ(X_h) = h` and `ι_{X_h} ω = dh − (dh·R_θ) θ`, which in coordinates reads
//!
//! ```text
//! ẋ^i = ∂h/∂λ_i,   λ̇_i = −∂h/∂x^i − λ_i ∂h/∂x⁰,   ẋ⁰ = λ_i ∂h/∂λ_i − h.
//! ```
//!
//! Abnormal charts carry no coordinate contact form here; their field is the
//! quotient of the homogeneous symplectic lift by rescaling.

mod flow;
mod hamiltonian;
mod integrator;

pub use flow::{
    integrate_contact, integrate_symplectic, ContactSample, ContactTrajectory, EventKind,
    SymplecticSample, TrajectoryEvent,
};
pub use hamiltonian::{
    fd_step, finite_difference_jet, finite_difference_mismatch, ContactHamiltonian,
    ControlSwitching, FnHamiltonian, HamiltonianJet, NormalChartHamiltonian,
};
pub(crate) use hamiltonian::check_finite;
pub use integrator::{
    error_norm, rk4_step, rk4_uniform, steppers, uniform_steps, DormandPrince, Field,
    IntegratorOptions, Rk4, StepOutcome, Stepper,
};

use crate::error::{Error, Result};
use crate::ocp::ExtendedState;
use crate::projcost::{representative, ProjectiveCostate};

/// Coordinates beyond this magnitude are treated as having left the chart.
pub const CHART_LIMIT: f64 = 1e12;

/// A point `(x̂, [ν̂])` of `P(T*R^{n+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub x: ExtendedState,
    pub costate: ProjectiveCostate,
}

impl ContactState {
    pub fn new(x: ExtendedState, costate: ProjectiveCostate) -> Result<Self> {
        if x.dim() != costate.dim() {
            return Err(Error::InvalidInput(format!(
                "extended state has n = {} but costate has n = {}",
                x.dim(),
                costate.dim()
            )));
        }
        Ok(Self { x, costate })
    }

    pub fn dim(&self) -> usize {
        self.costate.dim()
    }

    /// Homogeneous representative with `ν₀ ≤ 0`.
    pub fn covector(&self) -> Vec<f64> {
        representative(&self.costate).into_inner()
    }
}

/// Tangent vector in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactTangent {
    /// `(δx⁰, δx)`.
    pub base: Vec<f64>,
    /// `δλ` or `δα`.
    pub fiber: Vec<f64>,
    /// Rate of `ν₀/ν_a`; only meaningful in abnormal charts.
    pub nu0_ratio: f64,
}

impl ContactTangent {
    pub fn zero(n: usize) -> Self {
        Self {
            base: vec![0.0; n + 1],
            fiber: vec![0.0; n],
            nu0_ratio: 0.0,
        }
    }
}

fn require_normal(state: &ContactState) -> Result<&[f64]> {
    match &state.costate {
        ProjectiveCostate::Normal { lambda } => Ok(lambda),
        other => Err(Error::singular(
            other.chart().to_string(),
            "this coordinate expression is specific to the normal chart",
        )),
    }
}

/// `θ(w) = −δx⁰ + λ_i δx^i`.
pub fn contact_form(state: &ContactState, w: &ContactTangent) -> Result<f64> {
    let lambda = require_normal(state)?;
    Ok(-w.base[0]
        + lambda
            .iter()
            .zip(&w.base[1..])
            .map(|(l, d)| l * d)
            .sum::<f64>())
}

/// `ω(v, w)` with `ω = dx^i ∧ dλ_i` (normal chart; constant coefficients).
pub fn two_form(v: &ContactTangent, w: &ContactTangent) -> f64 {
    v.base[1..]
        .iter()
        .zip(&w.fiber)
        .zip(v.fiber.iter().zip(&w.base[1..]))
        .map(|((vx, wl), (vl, wx))| vx * wl - vl * wx)
        .sum()
}

pub fn reeb_field(state: &ContactState) -> Result<ContactTangent> {
    require_normal(state)?;
    let mut t = ContactTangent::zero(state.dim());
    t.base[0] = -1.0;
    Ok(t)
}

/// Contact Hamiltonian vector field in the normal chart.
pub fn contact_vector_field(
    h: &dyn ContactHamiltonian,
    state: &ContactState,
) -> Result<ContactTangent> {
    require_normal(state)?;
    let jet = h.jet(state.x.as_slice(), &state.covector())?;
    tangent_from_jet(state, &jet)
}

/// Field in an abnormal chart: the homogeneous symplectic lift expressed in
/// `α = ν/ν_a`, with the overall scale projected out.
pub fn contact_vector_field_abnormal(
    h: &dyn ContactHamiltonian,
    state: &ContactState,
) -> Result<ContactTangent> {
    if !matches!(state.costate, ProjectiveCostate::Abnormal { .. }) {
        return Err(Error::InvalidInput(
            "abnormal-chart field requested for a normal-chart state".into(),
        ));
    }
    let jet = h.jet(state.x.as_slice(), &state.covector())?;
    tangent_from_jet(state, &jet)
}

/// Chart field built from a precomputed jet of the homogeneous Hamiltonian
/// at the state's representative.
pub(crate) fn tangent_from_jet(
    state: &ContactState,
    jet: &HamiltonianJet,
) -> Result<ContactTangent> {
    let n = state.dim();
    match &state.costate {
        ProjectiveCostate::Normal { lambda } => {
            let xdot = &jet.dnu[1..];
            let x0dot = lambda.iter().zip(xdot).map(|(l, d)| l * d).sum::<f64>() - jet.value;
            let mut base = Vec::with_capacity(n + 1);
            base.push(x0dot);
            base.extend_from_slice(xdot);
            let fiber = (0..n)
                .map(|i| -jet.dx[i + 1] - lambda[i] * jet.dx[0])
                .collect();
            Ok(ContactTangent {
                base,
                fiber,
                nu0_ratio: 0.0,
            })
        }
        ProjectiveCostate::Abnormal {
            pivot,
            alpha,
            nu0_ratio,
        } => {
            if state.costate.coordinate_magnitude() > CHART_LIMIT {
                return Err(Error::singular(
                    state.costate.chart().to_string(),
                    "chart coordinates blew up",
                ));
            }
            let a = *pivot;
            let sign = if *nu0_ratio > 0.0 { -1.0 } else { 1.0 };
            // ν̇ = −∂H/∂x̂ at the representative; ν_a = sign there
            let rdot: Vec<f64> = jet.dx.iter().map(|v| -v).collect();
            let mut fiber: Vec<f64> = (0..n)
                .map(|i| (rdot[i + 1] - alpha[i] * rdot[a]) / sign)
                .collect();
            fiber[a - 1] = 0.0;
            let ratio_dot = (rdot[0] - nu0_ratio * rdot[a]) / sign;
            Ok(ContactTangent {
                base: jet.dnu.clone(),
                fiber,
                nu0_ratio: ratio_dot,
            })
        }
    }
}

/// Canonical Hamilton equations on `T*R^{n+1}`:
/// `dx̂/dt = ∂H/∂ν̂`, `dν̂/dt = −∂H/∂x̂`.
pub fn symplectic_lift_field(
    h: &dyn ContactHamiltonian,
    xh: &[f64],
    nu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let jet = h.jet(xh, nu)?;
    Ok((jet.dnu, jet.dx.iter().map(|v| -v).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projcost::{from_vector, CostateVector, DEFAULT_EPS0};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_state(x: Vec<f64>, lambda: Vec<f64>) -> ContactState {
        ContactState::new(ExtendedState::new(x), ProjectiveCostate::normal(lambda)).unwrap()
    }

    fn tangent(base: Vec<f64>, fiber: Vec<f64>) -> ContactTangent {
        ContactTangent {
            base,
            fiber,
            nu0_ratio: 0.0,
        }
    }

    #[test]
    fn contact_form_examples() {
        let s = normal_state(vec![0.0, 0.0, 0.0], vec![2.0, 3.0]);
        let z = vec![0.0, 0.0];
        assert_eq!(contact_form(&s, &tangent(vec![1.0, 0.0, 0.0], z.clone())).unwrap(), -1.0);
        assert_eq!(contact_form(&s, &tangent(vec![0.0, 1.0, 1.0], z.clone())).unwrap(), 5.0);
        assert_eq!(contact_form(&s, &tangent(vec![5.0, 1.0, 1.0], z)).unwrap(), 0.0);
    }

    #[test]
    fn contact_form_rejects_abnormal_chart() {
        let s = ContactState::new(
            ExtendedState::new(vec![0.0, 0.0, 0.0]),
            ProjectiveCostate::abnormal(1, vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            contact_form(&s, &ContactTangent::zero(2)),
            Err(Error::ChartSingularity { .. })
        ));
        assert!(reeb_field(&s).is_err());
    }

    #[test]
    fn reeb_field_defining_relations() {
        let s = normal_state(vec![0.1, 0.2, 0.3], vec![2.0, -3.0]);
        let r = reeb_field(&s).unwrap();
        assert_eq!(r.base, vec![-1.0, 0.0, 0.0]);
        assert_eq!(contact_form(&s, &r).unwrap(), 1.0);
        for k in 0..5 {
            let mut e = ContactTangent::zero(2);
            if k < 3 {
                e.base[k] = 1.0;
            } else {
                e.fiber[k - 3] = 1.0;
            }
            assert_eq!(two_form(&r, &e), 0.0);
        }
    }

    #[test]
    fn quadratic_hamiltonian_with_cost_dependence() {
        // h = λ²/2 + x⁰ at (x⁰, x, λ) = (0, 0, 1):
        // ẋ = λ = 1, ẋ⁰ = λ·λ − h = 0.5, λ̇ = −∂h/∂x − λ ∂h/∂x⁰ = −1
        let h = NormalChartHamiltonian::new(|xh, l| 0.5 * l[0] * l[0] + xh[0]);
        let s = normal_state(vec![0.0, 0.0], vec![1.0]);
        let t = contact_vector_field(&h, &s).unwrap();
        assert!((t.base[0] - 0.5).abs() < 1e-9);
        assert!((t.base[1] - 1.0).abs() < 1e-9);
        assert!((t.fiber[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_hamiltonian_flows_along_reeb() {
        let h = NormalChartHamiltonian::new(|_, _| 2.5);
        let s = normal_state(vec![0.0, 1.0, -1.0], vec![0.3, 0.7]);
        let t = contact_vector_field(&h, &s).unwrap();
        let r = reeb_field(&s).unwrap();
        for (a, b) in t.base.iter().zip(&r.base) {
            assert!((a - 2.5 * b).abs() < 1e-9);
        }
        assert!(t.fiber.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn one_dimensional_abnormal_fiber_is_frozen() {
        let h = FnHamiltonian::new(|xh, nu| nu[1] * xh[1].sin() + nu[0] * xh[1] * xh[1]);
        let s = ContactState::new(
            ExtendedState::new(vec![0.0, 0.4]),
            ProjectiveCostate::abnormal(1, vec![1.0]).unwrap(),
        )
        .unwrap();
        let t = contact_vector_field_abnormal(&h, &s).unwrap();
        assert_eq!(t.fiber, vec![0.0]);
        assert_eq!(t.nu0_ratio, 0.0);
    }

    #[test]
    fn abnormal_linear_dynamics_match_pivot_renormalized_adjoint() {
        let a = [[0.5, -1.0, 0.2], [0.3, 0.1, -0.7], [1.1, 0.4, 0.0]];
        let h = FnHamiltonian::new(move |xh, nu| {
            let x = &xh[1..];
            (0..3)
                .map(|j| nu[j + 1] * (0..3).map(|i| a[j][i] * x[i]).sum::<f64>())
                .sum::<f64>()
                + nu[0] * x.iter().map(|v| v * v).sum::<f64>()
        });
        let alpha = vec![0.4, 1.0, -0.6];
        let x = vec![0.0, 0.3, -0.2, 0.9];
        let s = ContactState::new(
            ExtendedState::new(x.clone()),
            ProjectiveCostate::abnormal(2, alpha.clone()).unwrap(),
        )
        .unwrap();
        let t = contact_vector_field_abnormal(&h, &s).unwrap();
        let pivot_rate: f64 = (0..3).map(|j| alpha[j] * a[j][1]).sum();
        for i in 0..3 {
            let adj: f64 = -(0..3).map(|j| alpha[j] * a[j][i]).sum::<f64>();
            let expected = adj + alpha[i] * pivot_rate;
            assert!((t.fiber[i] - expected).abs() < 1e-8, "{i}");
            let xdot: f64 = (0..3).map(|k| a[i][k] * x[k + 1]).sum();
            assert!((t.base[i + 1] - xdot).abs() < 1e-8);
        }
        // ẋ⁰ = L
        let l: f64 = x[1..].iter().map(|v| v * v).sum();
        assert!((t.base[0] - l).abs() < 1e-8);
        assert_eq!(t.fiber[1], 0.0);
    }

    #[test]
    fn zero_dynamics_give_zero_abnormal_field() {
        let h = FnHamiltonian::new(|_, _| 0.0);
        let s = ContactState::new(
            ExtendedState::new(vec![0.0, 1.0, 2.0]),
            ProjectiveCostate::abnormal(1, vec![1.0, 3.0]).unwrap(),
        )
        .unwrap();
        let t = contact_vector_field_abnormal(&h, &s).unwrap();
        assert!(t.base.iter().chain(&t.fiber).all(|v| *v == 0.0));
    }

    #[test]
    fn symplectic_lift_examples() {
        // H = ν₁ with n = 1
        let h = FnHamiltonian::new(|_, nu| nu[1]);
        let (dx, dnu) = symplectic_lift_field(&h, &[0.0, 0.0], &[-1.0, 0.5]).unwrap();
        assert!((dx[1] - 1.0).abs() < 1e-9 && dx[0].abs() < 1e-9);
        assert!(dnu.iter().all(|v| v.abs() < 1e-9));

        // f = x, L = 0, ν̂ = (−1, 2): ν̇ = (0, −2), ẋ = (0, x)
        let h = FnHamiltonian::new(|xh, nu| nu[1] * xh[1]);
        let (dx, dnu) = symplectic_lift_field(&h, &[0.0, 1.5], &[-1.0, 2.0]).unwrap();
        assert!(dx[0].abs() < 1e-9 && (dx[1] - 1.5).abs() < 1e-9);
        assert!(dnu[0].abs() < 1e-9 && (dnu[1] + 2.0).abs() < 1e-9);
    }

    fn random_hamiltonian(rng: &mut ChaCha8Rng) -> FnHamiltonian {
        let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FnHamiltonian::new(move |xh, nu| {
            let (x0, x1, x2) = (xh[0], xh[1], xh[2]);
            nu[1] * (c[0] * x2 + c[1] * x1.sin())
                + nu[2] * (c[2] * x1 + c[3] * x0)
                + nu[0] * (c[4] * x1 * x1 + c[5] * x2 * x2)
                + (nu[1] * nu[1] + nu[2] * nu[2] + c[6] * c[6] * nu[0] * nu[0]).sqrt() * c[7]
        })
    }

    #[test]
    fn defining_relations_hold_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let h = random_hamiltonian(&mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lambda: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = normal_state(x.clone(), lambda.clone());
            let xh = contact_vector_field(&h, &s).unwrap();
            let jet = h.jet(&x, &s.covector()).unwrap();
            let theta = contact_form(&s, &xh).unwrap();
            assert!((theta - jet.value).abs() <= 1e-10);
            // dh in chart coordinates: (∂h/∂x⁰, ∂h/∂x, ∂h/∂λ)
            let dh_reeb = -jet.dx[0];
            for k in 0..5 {
                let mut e = ContactTangent::zero(2);
                if k < 3 {
                    e.base[k] = 1.0;
                } else {
                    e.fiber[k - 3] = 1.0;
                }
                let dh_e = if k < 3 { jet.dx[k] } else { jet.dnu[k - 2] };
                let rhs = dh_e - dh_reeb * contact_form(&s, &e).unwrap();
                let lhs = two_form(&xh, &e);
                assert!((lhs - rhs).abs() <= 1e-8, "component {k}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn normal_field_matches_projected_symplectic_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = random_hamiltonian(&mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nu: Vec<f64> = vec![
                -rng.gen_range(0.2..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let pc = from_vector(&CostateVector::new(nu.clone()).unwrap(), DEFAULT_EPS0).unwrap();
            let s = ContactState::new(ExtendedState::new(x.clone()), pc).unwrap();
            let t = contact_vector_field(&h, &s).unwrap();
            let (dx, dnu) = symplectic_lift_field(&h, &x, &nu).unwrap();
            for i in 0..3 {
                assert!((t.base[i] - dx[i]).abs() < 1e-7);
            }
            // λ_i = −ν_i/ν₀ differentiated along the symplectic flow
            for i in 0..2 {
                let dl = -dnu[i + 1] / nu[0] + nu[i + 1] * dnu[0] / (nu[0] * nu[0]);
                assert!((t.fiber[i] - dl).abs() < 1e-7);
            }
        }
    }
}
