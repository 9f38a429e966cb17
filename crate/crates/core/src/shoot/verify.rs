//! A posteriori checks of a converged extremal.

use serde::{Deserialize, Serialize};

use crate::contact::ContactHamiltonian;
use crate::error::Result;
use crate::ocp::{OcpProblem, OptimalHamiltonian, TimeMode};
use crate::projcost::{representative, CostateVector, ProjectiveCostate};
use crate::prop::{pairing_defect, propagate_adjoint, propagate_tangent_basis};

use super::newton::inf_norm;
use super::{dg_transpose_c, homogeneous_transversality, normal_coordinates, ShootingResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max_t max_{u ∈ grid} (h_u − h_{u*})`, clipped at zero.
    pub max_principle_defect: f64,
    /// Worst pairing defect over the coordinate basis of perturbations.
    pub pairing_defect: f64,
    /// `ν₀` of the normalized terminal covector.
    pub nu0: f64,
    pub nu0_sign_ok: bool,
    /// `‖λ₁ − Dgᵀc‖∞`, ignoring any terminal cost.
    pub transversality: f64,
    /// `‖λ₁ + dK − Dgᵀc‖∞`.
    pub terminal_cost_transversality: f64,
    /// `|h(t₁)|` for free-time problems.
    pub terminal_h: Option<f64>,
    /// `max_t |h(t) − h(t₁)|`.
    pub h_variation: f64,
}

/// `(−1, λ)` when normal, otherwise the representative scaled to unit
/// max-norm.
fn normalized(pc: &ProjectiveCostate) -> Vec<f64> {
    match normal_coordinates(pc) {
        Some(l) => std::iter::once(-1.0).chain(l).collect(),
        None => {
            let r = representative(pc).into_inner();
            let m = inf_norm(&r);
            r.into_iter().map(|v| v / m).collect()
        }
    }
}

pub fn verify_extremal(p: &OcpProblem, result: &ShootingResult) -> Result<Diagnostics> {
    let ext = &result.trajectory;
    let h = OptimalHamiltonian::new(p.clone());
    let grid = p.control_set.grid(p.maximizer.grid);
    let n = p.n();

    let mut mp_defect: f64 = 0.0;
    let mut h_values = Vec::with_capacity(ext.contact.samples.len());
    for s in &ext.contact.samples {
        let w = normalized(&s.state.costate);
        let x = s.state.x.state();
        let pair = |u: &[f64]| {
            let f = p.dynamics.f(x, u);
            w[0] * p.dynamics.running_cost(x, u) + (0..n).map(|i| w[i + 1] * f[i]).sum::<f64>()
        };
        if let Some(u_star) = &s.control {
            let best = pair(u_star);
            for u in &grid {
                mp_defect = mp_defect.max(pair(u) - best);
            }
        }
        h_values.push(h.value(s.state.x.as_slice(), &w)?);
    }
    let h_end = *h_values.last().unwrap_or(&0.0);
    let h_variation = h_values.iter().map(|v| (v - h_end).abs()).fold(0.0, f64::max);

    let end = ext.final_state();
    let x1 = end.x.state();
    let w1 = normalized(&end.costate);
    let c = &result.unknowns.multipliers;
    let proj = dg_transpose_c(p, x1, c)?;
    let plain: Vec<f64> = (0..n).map(|i| w1[i + 1] - proj[i]).collect();
    let with_k = homogeneous_transversality(p, &w1, x1, c)?;

    let traj = ext.state_trajectory();
    let signal = ext.control_signal()?;
    let nu1 = CostateVector::new(w1.clone())?;
    let adjoint = propagate_adjoint(p, &traj, &signal, &nu1)?;
    let tangents = propagate_tangent_basis(p, &traj, &signal)?;
    let mut pd: f64 = 0.0;
    for t in &tangents {
        pd = pd.max(pairing_defect(&adjoint, t)?);
    }

    Ok(Diagnostics {
        max_principle_defect: mp_defect,
        pairing_defect: pd,
        nu0: w1[0],
        nu0_sign_ok: w1[0] <= 0.0,
        transversality: inf_norm(&plain),
        terminal_cost_transversality: inf_norm(&with_k),
        terminal_h: matches!(p.time_mode, TimeMode::Free).then(|| h_end.abs()),
        h_variation,
    })
}
