//! Seeded invariant suites shared by `verify` and the acceptance tests.
//!
//! Every suite draws its random problems from a ChaCha stream, so a given
//! seed always measures the same defects.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contact::{
    integrate_contact, integrate_symplectic, ContactState, EventKind, FnHamiltonian,
    HamiltonianJet, IntegratorOptions,
};
use crate::error::{Error, Result};
use crate::ocp::models::{fold_terminal_cost, LinearDynamics, QuadraticCost};
use crate::ocp::{
    contact_control_hamiltonian, control_hamiltonian, maximize_control, maximize_homogeneous, ControlSet,
    ExtendedState, OcpProblem, TimeMode,
};
use crate::projcost::{
    from_vector, projective_distance, switch_chart, Chart, CostateVector, ProjectiveCostate, DEFAULT_EPS0,
};
use crate::prop::{integrate_extended, pairing_defect, propagate_adjoint, propagate_tangent, ControlSignal};
use crate::shoot::{map_by_psi, psi_k, psi_k_inverse, solve, ShootingUnknowns, SolveOptions};

pub const SUITES: [&str; 5] = ["homogeneity", "pairing", "chart", "contact", "psi"];
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// `measured ≤ tolerance`, or `≥` for lower-bound checks.
    pub lower_bound: bool,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            lower_bound: false,
            passed: measured <= tolerance,
        }
    }

    fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            lower_bound: true,
            passed: measured >= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let checks = match name {
        "homogeneity" => homogeneity(seed)?,
        "pairing" => pairing(seed)?,
        "chart" => chart(seed)?,
        "contact" => contact(seed)?,
        "psi" => psi(seed)?,
        _ => {
            return Err(Error::UnknownName {
                kind: "suite",
                name: name.into(),
            })
        }
    };
    Ok(SuiteReport {
        suite: name.into(),
        seed,
        checks,
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

/// Random bilinear model with a positive semidefinite state weight.
fn random_linear(rng: &mut ChaCha8Rng, n: usize, m: usize, bilinear: bool) -> Result<LinearDynamics> {
    let a = matrix(rng, n, n, 1.0);
    let b = matrix(rng, n, m, 1.0);
    let n_k = if bilinear {
        (0..m).map(|_| matrix(rng, n, n, 0.5)).collect()
    } else {
        Vec::new()
    };
    let g = matrix(rng, n, n, 1.0);
    let q = &g * g.transpose();
    LinearDynamics::new(a, b, n_k, q, rng.gen_range(0.5..2.0))
}

/// Bilinear model whose drift is dominated by a fast rotation, so RK4
/// truncation error at step 1e−3 sits well above roundoff without the
/// solution growing.
fn random_oscillator(rng: &mut ChaCha8Rng, n: usize) -> Result<LinearDynamics> {
    let s = matrix(rng, n, n, 1.0);
    let speed = rng.gen_range(10.0..25.0);
    let a = (&s - s.transpose()) * speed + matrix(rng, n, n, 0.5);
    let b = matrix(rng, n, 1, 1.0);
    let g = matrix(rng, n, n, 1.0);
    LinearDynamics::new(a, b, vec![matrix(rng, n, n, 0.5)], &g * g.transpose(), 1.0)
}

fn random_problem(rng: &mut ChaCha8Rng, bound: f64) -> Result<OcpProblem> {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=2);
    let dyn_ = random_linear(rng, n, m, true)?;
    let set = ControlSet::Box {
        lo: vec![-bound; m],
        hi: vec![bound; m],
    };
    let x0 = uniform(rng, -1.0, 1.0, n);
    Ok(OcpProblem::new("random_linear", Arc::new(dyn_), set, x0).with_time_mode(TimeMode::Fixed(1.0)))
}

fn nonzero(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let k = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        k
    } else {
        -k
    }
}

fn homogeneity(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut degree1, mut projection) = (0.0_f64, 0.0_f64);
    let mut argmax_mismatch = 0usize;
    for _ in 0..1000 {
        let p = random_problem(&mut rng, 1.0)?;
        let (n, m) = (p.n(), p.m());
        let xh = ExtendedState::new(uniform(&mut rng, -1.0, 1.0, n + 1));
        let nu = uniform(&mut rng, -1.0, 1.0, n + 1);
        let u = uniform(&mut rng, -1.0, 1.0, m);
        let k = nonzero(&mut rng, 0.1, 4.0);
        let base = CostateVector::new(nu.clone())?;
        let scaled = CostateVector::new(nu.iter().map(|v| k * v).collect())?;
        let h = control_hamiltonian(&p, &xh, &base, &u)?;
        let hk = control_hamiltonian(&p, &xh, &scaled, &u)?;
        degree1 = degree1.max((hk - k * h).abs() / (1.0 + h.abs()));

        // projection to the normal chart, for ν₀ < 0
        let mut neg = nu.clone();
        neg[0] = -rng.gen_range(0.1..1.0);
        let nv = CostateVector::new(neg.clone())?;
        let pc = from_vector(&nv, DEFAULT_EPS0)?;
        let hc = contact_control_hamiltonian(&p, &xh, &pc, &u)?;
        let big = control_hamiltonian(&p, &xh, &nv, &u)?;
        projection = projection.max((hc * neg[0].abs() - big).abs());
        let (u_chart, _) = maximize_control(&p, &xh, &pc)?;
        let (u_hom, _) = maximize_homogeneous(&p, xh.state(), neg[0], &neg[1..])?;
        if u_chart.iter().zip(&u_hom).any(|(a, b)| (a - b).abs() > 1e-12) {
            argmax_mismatch += 1;
        }
    }
    Ok(vec![
        Check::at_most("degree_one_relative_defect", degree1, 1e-12),
        Check::at_most("normal_projection_defect", projection, 1e-10),
        Check::at_most("argmax_mismatches", argmax_mismatch as f64, 0.0),
    ])
}

/// Pairing samples of one random time-varying bilinear system: for a step
/// `h`, the grid-consistent defect, `max_t |⟨ν̂, δx̂⟩(t) − P_ref|` against a
/// reference invariant computed at `h/16`, and the drift of `ν₀`.
fn pairing_case(rng: &mut ChaCha8Rng) -> Result<impl Fn(f64) -> Result<(f64, f64, f64)>> {
    let n = rng.gen_range(2..=4);
    let dyn_ = random_oscillator(rng, n)?;
    let set = ControlSet::interval(-3.0, 3.0);
    let x0 = uniform(rng, -1.0, 1.0, n);
    let p = OcpProblem::new("pairing", Arc::new(dyn_), set, x0).with_time_mode(TimeMode::Fixed(1.0));
    let (amp, omega, phase) = (rng.gen_range(0.5..2.0), rng.gen_range(4.0..10.0), rng.gen_range(0.0..6.3));
    let u = ControlSignal::function(move |t| vec![amp * (omega * t + phase).sin()]);
    let nu1 = CostateVector::new(uniform(rng, -1.0, 1.0, n + 1))?;
    let dx0 = uniform(rng, -1.0, 1.0, n + 1);
    Ok(move |step: f64| {
        let traj = integrate_extended(&p, &u, (0.0, 1.0), step)?;
        let adj = propagate_adjoint(&p, &traj, &u, &nu1)?;
        let tan = propagate_tangent(&p, &traj, &u, &dx0)?;
        let fine = integrate_extended(&p, &u, (0.0, 1.0), step / 16.0)?;
        let end = propagate_tangent(&p, &fine, &u, &dx0)?;
        let reference: f64 = nu1.as_slice().iter().zip(&end.last().unwrap().1).map(|(a, b)| a * b).sum();
        let invariant_error = adj
            .iter()
            .zip(&tan)
            .map(|((_, c), (_, d))| (c.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() - reference).abs())
            .fold(0.0, f64::max);
        let nu0_drift = adj.iter().map(|(_, v)| (v[0] - nu1.nu0()).abs()).fold(0.0, f64::max);
        Ok((pairing_defect(&adj, &tan)?, invariant_error, nu0_drift))
    })
}

/// Invariant errors below this are too close to roundoff to carry order
/// information.
pub const PAIRING_FLOOR: f64 = 1e-11;

fn pairing(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    let (mut sum1, mut sum2) = (0.0, 0.0);
    let mut drift: f64 = 0.0;
    for _ in 0..100 {
        let case = pairing_case(&mut rng)?;
        let (d1, e1, z1) = case(1e-3)?;
        let (_, e2, z2) = case(5e-4)?;
        worst = worst.max(d1);
        drift = drift.max(z1).max(z2);
        sum1 += e1;
        sum2 += e2;
        if e1 > PAIRING_FLOOR {
            ratios.push(e1 / e2.max(f64::MIN_POSITIVE));
        }
    }
    ratios.sort_by(f64::total_cmp);
    // a single projected error can have cancelling leading terms, so the
    // order is read from robust statistics over the ensemble
    let median = ratios.get(ratios.len() / 2).copied().unwrap_or(0.0);
    Ok(vec![
        Check::at_most("max_defect_step_1e-3", worst, 1e-6),
        Check::at_least("aggregate_halving_ratio", sum1 / sum2.max(f64::MIN_POSITIVE), 8.0),
        Check::at_least("median_halving_ratio", median, 8.0),
        Check::at_least("systems_above_floor", ratios.len() as f64, 50.0),
        Check::at_most("nu0_drift", drift, 0.0),
    ])
}

fn chart(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round_trip: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=5);
        let lambda = uniform(&mut rng, -5.0, 5.0, n);
        let a = rng.gen_range(1..=n);
        if lambda[a - 1].abs() < 1e-3 {
            continue;
        }
        let pc = ProjectiveCostate::normal(lambda.clone());
        let back = switch_chart(&switch_chart(&pc, Chart::Abnormal(a))?, Chart::Normal)?;
        for (x, y) in lambda.iter().zip(back.coords()) {
            round_trip = round_trip.max((x - y).abs() / x.abs().max(1.0));
        }
        // and from the abnormal side
        let alpha = uniform(&mut rng, -2.0, 2.0, n);
        let ab = ProjectiveCostate::abnormal(a, alpha)?;
        let b = rng.gen_range(1..=n);
        if ab.coords()[b - 1].abs() < 1e-3 {
            continue;
        }
        let back = switch_chart(&switch_chart(&ab, Chart::Abnormal(b))?, Chart::Abnormal(a))?;
        for (x, y) in ab.coords().iter().zip(back.coords()) {
            round_trip = round_trip.max((x - y).abs() / x.abs().max(1.0));
        }
    }

    // flows that leave the normal chart: H = ν₀ (c x⁰) + ν·b
    let mut jump: f64 = 0.0;
    let mut switches = 0usize;
    for _ in 0..20 {
        let n = rng.gen_range(1..=3);
        let c = rng.gen_range(1.0..3.0);
        let b = uniform(&mut rng, 0.5, 1.5, n);
        let h = FnHamiltonian::new(move |xh, nu| {
            c * nu[0] * xh[0] + nu[1..].iter().zip(&b).map(|(v, w)| v * w).sum::<f64>()
        });
        let mut x = vec![1.0];
        x.extend(uniform(&mut rng, -1.0, 1.0, n));
        let s0 = ContactState::new(ExtendedState::new(x), ProjectiveCostate::normal(uniform(&mut rng, 1.0, 3.0, n)))?;
        let opts = IntegratorOptions {
            step: 1e-2,
            chart_bound: 50.0,
            ..Default::default()
        };
        let tr = integrate_contact(&h, &s0, (0.0, 4.0), &opts)?;
        for e in &tr.events {
            if let EventKind::ChartSwitch { before, after, .. } = &e.kind {
                switches += 1;
                jump = jump.max(projective_distance(before, after));
            }
        }
    }
    Ok(vec![
        Check::at_most("round_trip_relative_error", round_trip, 1e-14),
        Check::at_least("chart_switches_observed", switches as f64, 1.0),
        Check::at_most("switch_projective_jump", jump, 1e-9),
    ])
}

/// `H = ν̂ᵀ(M x̂ + b) + β (c·ν̂)³/‖ν̂‖²`: degree one under every nonzero
/// scaling (so it descends to projective space), smooth away from zero and
/// genuinely nonlinear in the costate.
fn random_homogeneous(rng: &mut ChaCha8Rng, n: usize) -> FnHamiltonian {
    let d = n + 1;
    let m = matrix(rng, d, d, 1.0);
    let b = uniform(rng, -1.0, 1.0, d);
    let c = uniform(rng, -1.0, 1.0, d);
    let beta = rng.gen_range(0.0..0.5);
    let (mv, bv, cv) = (m.clone(), b.clone(), c.clone());
    let value = move |xh: &[f64], nu: &[f64]| {
        let sq = nu.iter().map(|v| v * v).sum::<f64>();
        let cn = cv.iter().zip(nu).map(|(a, v)| a * v).sum::<f64>();
        (0..d)
            .map(|i| nu[i] * ((0..d).map(|j| mv[(i, j)] * xh[j]).sum::<f64>() + bv[i]))
            .sum::<f64>()
            + beta * cn.powi(3) / sq
    };
    FnHamiltonian::new(value.clone()).with_jet(move |xh, nu| {
        let sq = nu.iter().map(|v| v * v).sum::<f64>();
        let cn = c.iter().zip(nu).map(|(a, v)| a * v).sum::<f64>();
        HamiltonianJet {
            value: value(xh, nu),
            dx: (0..d).map(|j| (0..d).map(|i| nu[i] * m[(i, j)]).sum()).collect(),
            dnu: (0..d)
                .map(|i| {
                    (0..d).map(|j| m[(i, j)] * xh[j]).sum::<f64>()
                        + b[i]
                        + beta * (3.0 * cn * cn * c[i] / sq - 2.0 * cn.powi(3) * nu[i] / (sq * sq))
                })
                .collect(),
        }
    })
}

fn contact(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costate_gap: f64 = 0.0;
    let mut state_gap: f64 = 0.0;
    let mut abnormal_runs = 0usize;
    let opts = IntegratorOptions::default();
    for run in 0..50 {
        let n = rng.gen_range(1..=3);
        let h = random_homogeneous(&mut rng, n);
        let xh0 = uniform(&mut rng, -1.0, 1.0, n + 1);
        let mut nu0 = uniform(&mut rng, -1.0, 1.0, n + 1);
        // every fifth run starts on the abnormal set
        if run % 5 == 0 {
            nu0[0] = 0.0;
            abnormal_runs += 1;
        } else {
            nu0[0] = -rng.gen_range(0.2..1.0);
        }
        let pc0 = from_vector(&CostateVector::new(nu0.clone())?, DEFAULT_EPS0)?;
        let s0 = ContactState::new(ExtendedState::new(xh0.clone()), pc0)?;
        let ct = integrate_contact(&h, &s0, (0.0, 1.0), &opts)?;
        let sy = integrate_symplectic(&h, &xh0, &nu0, (0.0, 1.0), opts.step)?;
        for s in &ct.samples {
            let j = sy.partition_point(|q| q.t < s.t - 1e-12);
            let q = sy.get(j).filter(|q| (q.t - s.t).abs() <= 1e-12).ok_or_else(|| {
                Error::GridMismatch(format!("no symplectic sample at t = {}", s.t))
            })?;
            let pq = from_vector(&CostateVector::new(q.nu.clone())?, DEFAULT_EPS0)?;
            costate_gap = costate_gap.max(projective_distance(&pq, &s.state.costate));
            for (a, b) in q.x.iter().zip(s.state.x.as_slice()) {
                state_gap = state_gap.max((a - b).abs());
            }
        }
    }
    Ok(vec![
        Check::at_most("projective_costate_gap", costate_gap, 1e-6),
        Check::at_most("extended_state_gap", state_gap, 1e-6),
        Check::at_least("abnormal_starts", abnormal_runs as f64, 5.0),
    ])
}

fn psi(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round_trip: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=4);
        let k = QuadraticCost::new(uniform(&mut rng, 0.0, 2.0, n), Some(uniform(&mut rng, -1.0, 1.0, n)))?;
        let y0 = rng.gen_range(-1.0..1.0);
        let y = uniform(&mut rng, -1.0, 1.0, n);
        let mu = uniform(&mut rng, -1.0, 1.0, n);
        let (x0, x, l) = psi_k(Some(&k), y0, &y, &mu);
        let (b0, b, bm) = psi_k_inverse(Some(&k), x0, &x, &l);
        round_trip = round_trip.max((b0 - y0).abs());
        for (p, q) in b.iter().zip(&y).chain(bm.iter().zip(&mu)) {
            round_trip = round_trip.max((p - q).abs());
        }
    }

    // terminal-cost problem in y-variables vs the folded problem
    let mut gap: f64 = 0.0;
    let opts = SolveOptions::default();
    for _ in 0..5 {
        let n = rng.gen_range(1..=3);
        let dyn_ = random_linear(&mut rng, n, 1, false)?;
        let k = QuadraticCost::new(uniform(&mut rng, 0.5, 2.0, n), Some(uniform(&mut rng, -1.0, 1.0, n)))?;
        let p = OcpProblem::new("psi_check", Arc::new(dyn_), ControlSet::interval(-20.0, 20.0), uniform(&mut rng, -1.0, 1.0, n))
            .with_terminal_cost(Arc::new(k))
            .with_time_mode(TimeMode::Fixed(1.0));
        let folded = fold_terminal_cost(&p)?;
        let guess = ShootingUnknowns::normal(vec![0.0; n], None, vec![]);
        let ry = solve(&p, &guess, &opts)?;
        let rx = solve(&folded, &guess, &opts)?;
        let mapped = map_by_psi(&p, &ry.trajectory);
        let direct = rx.trajectory.normal_costates();
        if mapped.len() != direct.len() {
            return Err(Error::GridMismatch("y- and x-system sample counts differ".into()));
        }
        for (m, (t, l)) in mapped.iter().zip(&direct) {
            let l = l.as_ref().ok_or_else(|| Error::EvaluationFailure(format!("abnormal sample at t = {t}")))?;
            for (a, b) in m.3.iter().zip(l) {
                gap = gap.max((a - b).abs());
            }
        }
    }
    Ok(vec![
        Check::at_most("round_trip_error", round_trip, 1e-14),
        Check::at_most("mapped_costate_sup_gap", gap, 1e-6),
    ])
}
