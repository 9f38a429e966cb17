//! Control Hamiltonians and their pointwise maximization.

use crate::contact::{check_finite, ContactHamiltonian, ControlSwitching, HamiltonianJet};
use crate::error::{Error, Result};
use crate::projcost::{representative, CostateVector, ProjectiveCostate};

use super::{box_grid, ControlSet, ExtendedState, OcpProblem};

fn check_dims(p: &OcpProblem, xh: &[f64], nu: &[f64]) -> Result<()> {
    let n = p.n();
    if xh.len() != n + 1 || nu.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "expected extended dimension {}, got x̂ {} and ν̂ {}",
            n + 1,
            xh.len(),
            nu.len()
        )));
    }
    Ok(())
}

fn pairing(p: &OcpProblem, x: &[f64], nu0: f64, nu: &[f64], u: &[f64]) -> f64 {
    let f = p.dynamics.f(x, u);
    nu.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + nu0 * p.dynamics.running_cost(x, u)
}

/// `H(x̂, ν̂, u) = ⟨ν̂, f̂(x̂, u)⟩ = ν₀ L + ν·f`.
pub fn control_hamiltonian(
    p: &OcpProblem,
    xh: &ExtendedState,
    nu: &CostateVector,
    u: &[f64],
) -> Result<f64> {
    check_dims(p, xh.as_slice(), nu.as_slice())?;
    if !p.control_set.contains(u) {
        return Err(Error::ControlOutOfSet { control: u.to_vec() });
    }
    let v = pairing(p, xh.state(), nu.nu0(), nu.spatial(), u);
    finite(v)
}

/// Control Hamiltonian at the chart representative; `λ·f − L` in the normal
/// chart.
pub fn contact_control_hamiltonian(
    p: &OcpProblem,
    xh: &ExtendedState,
    pc: &ProjectiveCostate,
    u: &[f64],
) -> Result<f64> {
    control_hamiltonian(p, xh, &representative(pc), u)
}

/// Maximizer `u*` and value of the control Hamiltonian over `U`.
pub fn maximize_control(
    p: &OcpProblem,
    xh: &ExtendedState,
    pc: &ProjectiveCostate,
) -> Result<(Vec<f64>, f64)> {
    let nu = representative(pc);
    check_dims(p, xh.as_slice(), nu.as_slice())?;
    maximize_homogeneous(p, xh.state(), nu.nu0(), nu.spatial())
}

/// `max_{u∈U} h_u` at the chart representative.
pub fn optimal_contact_hamiltonian(
    p: &OcpProblem,
    xh: &ExtendedState,
    pc: &ProjectiveCostate,
) -> Result<f64> {
    Ok(maximize_control(p, xh, pc)?.1)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure(format!("Hamiltonian value {v}")))
    }
}

/// Maximizes `ν·f(x,u) + ν₀ L(x,u)` over the control set of `p`.
///
/// A closed-form maximizer supplied by the dynamics wins. Otherwise a finite
/// set is enumerated exactly (ties go to the smallest index) and a box is
/// searched on a grid followed by local refinement around the incumbent.
pub fn maximize_homogeneous(
    p: &OcpProblem,
    x: &[f64],
    nu0: f64,
    nu: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let set = &p.control_set;
    let obj = |u: &[f64]| pairing(p, x, nu0, nu, u);
    if let Some(mut u) = p.dynamics.argmax(x, nu0, nu, set) {
        set.clamp(&mut u);
        let v = finite(obj(&u))?;
        return Ok((u, v));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |u: Vec<f64>, best: &mut Option<(Vec<f64>, f64)>| {
        let v = obj(&u);
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v > *b) {
            *best = Some((u, v));
        }
    };
    match set {
        ControlSet::Finite(pts) => {
            for u in pts {
                consider(u.clone(), &mut best);
            }
        }
        ControlSet::Box { lo, hi } => {
            let g = p.maximizer.grid;
            for u in box_grid(lo, hi, g) {
                consider(u, &mut best);
            }
            let spacing: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(a, b)| (b - a) / (g - 1) as f64)
                .collect();
            let mut shrink = 1.0;
            for _ in 0..p.maximizer.rounds {
                let Some((centre, _)) = best.clone() else { break };
                let (wlo, whi): (Vec<f64>, Vec<f64>) = centre
                    .iter()
                    .zip(&spacing)
                    .zip(lo.iter().zip(hi))
                    .map(|((c, d), (l, h))| ((c - d * shrink).max(*l), (c + d * shrink).min(*h)))
                    .unzip();
                for u in box_grid(&wlo, &whi, g) {
                    consider(u, &mut best);
                }
                shrink *= 0.25;
            }
        }
    }
    best.ok_or_else(|| {
        Error::EvaluationFailure("control Hamiltonian not finite anywhere on the control set".into())
    })
}

/// Optimal Hamiltonian `H(x̂, ν̂) = max_u ⟨ν̂, f̂(x̂, u)⟩` of a problem.
///
/// Partials follow from the envelope theorem: they are the partials of the
/// control Hamiltonian with the maximizer frozen.
#[derive(Clone, Debug)]
pub struct OptimalHamiltonian {
    pub problem: OcpProblem,
}

impl OptimalHamiltonian {
    pub fn new(problem: OcpProblem) -> Self {
        Self { problem }
    }
}

fn frozen(p: &OcpProblem, xh: &[f64], nu: &[f64], u: &[f64]) -> Result<HamiltonianJet> {
    check_dims(p, xh, nu)?;
    let x = &xh[1..];
    let n = x.len();
    let f = p.dynamics.f(x, u);
    let l = p.dynamics.running_cost(x, u);
    let jac = p.dynamics.f_jacobian(x, u);
    let grad_l = p.dynamics.cost_gradient(x, u);
    let (nu0, nus) = (nu[0], &nu[1..]);
    let value = nus.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + nu0 * l;
    let mut dx = vec![0.0; n + 1];
    for i in 0..n {
        dx[i + 1] = (0..n).map(|j| nus[j] * jac[(j, i)]).sum::<f64>() + nu0 * grad_l[i];
    }
    let mut dnu = Vec::with_capacity(n + 1);
    dnu.push(l);
    dnu.extend(f);
    let jet = HamiltonianJet { value, dx, dnu };
    check_finite(&jet)?;
    Ok(jet)
}

impl ContactHamiltonian for OptimalHamiltonian {
    fn value(&self, xh: &[f64], nu: &[f64]) -> Result<f64> {
        check_dims(&self.problem, xh, nu)?;
        Ok(maximize_homogeneous(&self.problem, &xh[1..], nu[0], &nu[1..])?.1)
    }

    fn jet(&self, xh: &[f64], nu: &[f64]) -> Result<HamiltonianJet> {
        let u = self.active_control(xh, nu)?;
        frozen(&self.problem, xh, nu, &u)
    }

    fn switching(&self) -> Option<&dyn ControlSwitching> {
        Some(self)
    }
}

impl ControlSwitching for OptimalHamiltonian {
    fn active_control(&self, xh: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
        check_dims(&self.problem, xh, nu)?;
        Ok(maximize_homogeneous(&self.problem, &xh[1..], nu[0], &nu[1..])?.0)
    }

    fn is_switch(&self, before: &[f64], after: &[f64]) -> bool {
        self.problem
            .control_set
            .is_jump(before, after, self.problem.maximizer.switch_jump)
    }

    fn frozen_jet(&self, xh: &[f64], nu: &[f64], u: &[f64]) -> Result<HamiltonianJet> {
        frozen(&self.problem, xh, nu, u)
    }
}

/// Control Hamiltonian with one fixed control; linear in `ν̂`.
#[derive(Clone, Debug)]
pub struct FixedControlHamiltonian {
    pub problem: OcpProblem,
    pub control: Vec<f64>,
}

impl ContactHamiltonian for FixedControlHamiltonian {
    fn value(&self, xh: &[f64], nu: &[f64]) -> Result<f64> {
        check_dims(&self.problem, xh, nu)?;
        finite(pairing(&self.problem, &xh[1..], nu[0], &nu[1..], &self.control))
    }

    fn jet(&self, xh: &[f64], nu: &[f64]) -> Result<HamiltonianJet> {
        frozen(&self.problem, xh, nu, &self.control)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::contact::finite_difference_mismatch;
    use crate::ocp::models::{DoubleIntegrator, LinearDynamics, ScalarLq};
    use crate::ocp::Dynamics;

    fn di() -> OcpProblem {
        OcpProblem::new(
            "di",
            Arc::new(DoubleIntegrator),
            ControlSet::interval(-1.0, 1.0),
            vec![1.0, 0.0],
        )
    }

    fn xh(v: &[f64]) -> ExtendedState {
        ExtendedState::new(v.to_vec())
    }

    #[test]
    fn control_hamiltonian_examples() {
        let p = di();
        let nu = CostateVector::new(vec![-1.0, 2.0, 3.0]).unwrap();
        let v = control_hamiltonian(&p, &xh(&[0.0, 1.0, 0.5]), &nu, &[1.0]).unwrap();
        assert_eq!(v, -1.0 + 2.0 * 0.5 + 3.0);
        assert!(matches!(
            control_hamiltonian(&p, &xh(&[0.0, 1.0, 0.5]), &nu, &[2.0]),
            Err(Error::ControlOutOfSet { .. })
        ));
    }

    #[test]
    fn maximization_examples() {
        let p = di();
        let pc = ProjectiveCostate::normal(vec![0.3, -2.0]);
        let (u, v) = maximize_control(&p, &xh(&[0.0, 1.0, 1.0]), &pc).unwrap();
        assert_eq!(u, vec![-1.0]);
        assert!((v - (0.3 + 2.0 - 1.0)).abs() < 1e-12);

        let lq = OcpProblem::new("lq", Arc::new(ScalarLq), ControlSet::interval(-1.0, 1.0), vec![1.0]);
        let (u, v) = maximize_control(&lq, &xh(&[0.0, 1.0]), &ProjectiveCostate::normal(vec![0.4])).unwrap();
        assert!((u[0] - 0.4).abs() < 1e-15);
        assert!((v - 0.08).abs() < 1e-15);
        let (u, _) = maximize_control(&lq, &xh(&[0.0, 1.0]), &ProjectiveCostate::normal(vec![3.0])).unwrap();
        assert_eq!(u, vec![1.0]);
    }

    #[test]
    fn grid_search_agrees_with_closed_form() {
        struct NoArgmax;
        impl Dynamics for NoArgmax {
            fn name(&self) -> &str {
                "scalar_lq_grid"
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
            fn running_cost(&self, _x: &[f64], u: &[f64]) -> f64 {
                0.5 * u[0] * u[0]
            }
        }
        let p = OcpProblem::new("g", Arc::new(NoArgmax), ControlSet::interval(-1.0, 1.0), vec![0.0]);
        for lam in [-2.0, -0.7, -0.123, 0.0, 0.31, 0.9999, 5.0] {
            let (u, v) =
                maximize_control(&p, &xh(&[0.0, 0.0]), &ProjectiveCostate::normal(vec![lam])).unwrap();
            let us = f64::clamp(lam, -1.0, 1.0);
            let vs = lam * us - 0.5 * us * us;
            // grid spacing 1/16 refined three times by 1/4: error in u ≤ (1/16)/64
            assert!((u[0] - us).abs() <= 1.0 / 1024.0, "{lam}: {u:?}");
            assert!(v <= vs + 1e-15 && vs - v < 1e-6);
        }
    }

    #[test]
    fn finite_set_tie_goes_to_first() {
        let mut p = di();
        p.control_set = ControlSet::Finite(vec![vec![1.0], vec![-1.0]]);
        let (u, _) = maximize_control(&p, &xh(&[0.0, 0.0, 0.0]), &ProjectiveCostate::normal(vec![0.0, 0.0]))
            .unwrap();
        assert_eq!(u, vec![1.0]);
    }

    #[test]
    fn optimal_hamiltonian_partials_match_finite_differences() {
        let lin = LinearDynamics::new(
            nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]),
            nalgebra::DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0])],
            nalgebra::DMatrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        let p = OcpProblem::new("lin", Arc::new(lin), ControlSet::interval(-2.0, 2.0), vec![1.0, 0.0]);
        let h = OptimalHamiltonian::new(p);
        let err = finite_difference_mismatch(&h, &[0.0, 0.4, -0.3], &[-1.0, 0.2, 0.7]).unwrap();
        assert!(err < 1e-7, "{err}");
        // homogeneous of degree one in ν̂
        let a = h.value(&[0.0, 0.4, -0.3], &[-1.0, 0.2, 0.7]).unwrap();
        let b = h.value(&[0.0, 0.4, -0.3], &[-2.5, 0.5, 1.75]).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-12);
    }
}
