//! Indirect shooting on the contact Hamiltonian flow.
//!
//! The unknowns are the initial chart coordinates of the costate, the
//! terminal time when it is free, and multipliers `c` representing the
//! terminal covector as `Dg(x₁)ᵀc`. Residual blocks are the target
//! constraint `g(x₁)`, transversality, and `h(t₁) = 0` for free time.

pub mod newton;
mod verify;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{integrate_contact, ContactHamiltonian, ContactState, ContactTrajectory, EventKind, IntegratorOptions};
use crate::error::{Error, Result};
use crate::ocp::{ExtendedState, OcpProblem, OptimalHamiltonian, TerminalCost, TimeMode};
use crate::projcost::{representative, switch_chart, Chart, ProjectiveCostate};
use crate::prop::{ControlSignal, StateTrajectory};

pub use newton::{damped_newton, NewtonOptions, NewtonOutcome};
pub use verify::{verify_extremal, Diagnostics};

use newton::inf_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartPolicy {
    /// Normal chart only.
    Normal,
    /// Abnormal charts only (`ν₀ = 0`).
    Abnormal,
    /// Normal first, abnormal charts if that fails.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub newton: NewtonOptions,
    pub integrator: IntegratorOptions,
    pub chart: ChartPolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            integrator: IntegratorOptions::default(),
            chart: ChartPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingUnknowns {
    pub chart: Chart,
    /// `λ₀` in the normal chart; `α₀` (with `α_a = 1`) in abnormal chart `a`.
    pub costate: Vec<f64>,
    /// Present iff the terminal time is free.
    pub t1: Option<f64>,
    pub multipliers: Vec<f64>,
}

impl ShootingUnknowns {
    pub fn normal(lambda: Vec<f64>, t1: Option<f64>, multipliers: Vec<f64>) -> Self {
        Self {
            chart: Chart::Normal,
            costate: lambda,
            t1,
            multipliers,
        }
    }

    /// Abnormal-chart unknowns with `α` rescaled so that `α_a = 1`.
    pub fn abnormal(pivot: usize, alpha: Vec<f64>, t1: Option<f64>, multipliers: Vec<f64>) -> Result<Self> {
        let pc = ProjectiveCostate::abnormal(pivot, alpha)?;
        Ok(Self {
            chart: Chart::Abnormal(pivot),
            costate: pc.coords().to_vec(),
            t1,
            multipliers,
        })
    }

    pub fn validate(&self, p: &OcpProblem) -> Result<()> {
        let n = p.n();
        if self.costate.len() != n {
            return Err(Error::InvalidInput(format!("costate guess needs {n} entries")));
        }
        if self.multipliers.len() != p.k() {
            return Err(Error::InvalidInput(format!("{} multipliers expected", p.k())));
        }
        match (p.time_mode, self.t1) {
            (TimeMode::Free, None) => {
                return Err(Error::InvalidInput("free terminal time needs a t1 guess".into()))
            }
            (TimeMode::Fixed(_), Some(_)) => {
                return Err(Error::InvalidInput("t1 is not an unknown for fixed-time problems".into()))
            }
            (TimeMode::Free, Some(t1)) if !(t1 > p.t0) => {
                return Err(Error::InvalidInput(format!("t1 = {t1} must exceed t0 = {}", p.t0)))
            }
            _ => {}
        }
        if let Chart::Abnormal(a) = self.chart {
            if a == 0 || a > n {
                return Err(Error::InvalidInput(format!("pivot {a} outside 1..={n}")));
            }
        }
        let all = self.to_vector();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite initial guess".into()));
        }
        Ok(())
    }

    /// Flat unknown vector `[costate (pivot dropped), t₁?, c]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut z: Vec<f64> = match self.chart {
            Chart::Normal => self.costate.clone(),
            Chart::Abnormal(a) => self
                .costate
                .iter()
                .enumerate()
                .filter(|(i, _)| *i + 1 != a)
                .map(|(_, v)| *v)
                .collect(),
        };
        z.extend(self.t1);
        z.extend_from_slice(&self.multipliers);
        z
    }

    pub fn from_vector(template: &Self, z: &[f64]) -> Self {
        let n = template.costate.len();
        let (costate, rest) = match template.chart {
            Chart::Normal => (z[..n].to_vec(), &z[n..]),
            Chart::Abnormal(a) => {
                let mut c = Vec::with_capacity(n);
                c.extend_from_slice(&z[..a - 1]);
                c.push(1.0);
                c.extend_from_slice(&z[a - 1..n - 1]);
                (c, &z[n - 1..])
            }
        };
        let (t1, c) = match template.t1 {
            Some(_) => (Some(rest[0]), &rest[1..]),
            None => (None, rest),
        };
        Self {
            chart: template.chart,
            costate,
            t1,
            multipliers: c.to_vec(),
        }
    }

    pub fn initial_costate(&self) -> Result<ProjectiveCostate> {
        match self.chart {
            Chart::Normal => Ok(ProjectiveCostate::normal(self.costate.clone())),
            Chart::Abnormal(a) => ProjectiveCostate::abnormal(a, self.costate.clone()),
        }
    }

    pub fn terminal_time(&self, p: &OcpProblem) -> f64 {
        match p.time_mode {
            TimeMode::Fixed(t1) => t1,
            TimeMode::Free => self.t1.unwrap_or(p.t0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlocks {
    pub target: Vec<f64>,
    pub transversality: Vec<f64>,
    pub free_time: Option<f64>,
}

impl ResidualBlocks {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.target.clone();
        v.extend_from_slice(&self.transversality);
        v.extend(self.free_time);
        v
    }

    pub fn target_norm(&self) -> f64 {
        inf_norm(&self.target)
    }

    pub fn transversality_norm(&self) -> f64 {
        inf_norm(&self.transversality)
    }

    pub fn free_time_norm(&self) -> f64 {
        self.free_time.map_or(0.0, f64::abs)
    }

    pub fn norm(&self) -> f64 {
        inf_norm(&self.to_vector())
    }
}

fn dg_transpose_c(p: &OcpProblem, x1: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let n = x1.len();
    let Some(target) = &p.target else {
        return Ok(vec![0.0; n]);
    };
    let dg = target.jacobian(x1);
    if dg.shape() != (target.codim(), n) || c.len() != target.codim() {
        return Err(Error::InvalidInput(format!(
            "target Jacobian must be {}×{n} with {} multipliers",
            target.codim(),
            target.codim()
        )));
    }
    check_rank(&dg)?;
    Ok((dg.transpose() * nalgebra::DVector::from_column_slice(c))
        .as_slice()
        .to_vec())
}

fn check_rank(dg: &DMatrix<f64>) -> Result<()> {
    let k = dg.nrows();
    let sv = dg.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-12 * smax.max(f64::MIN_POSITIVE)).count();
    if smax == 0.0 || rank < k {
        return Err(Error::RankDeficient {
            rank: if smax == 0.0 { 0 } else { rank },
            expected: k,
        });
    }
    Ok(())
}

/// Homogeneous transversality `ν − ν₀ dK(x₁) − Dg(x₁)ᵀc`; with `ν₀ = −1` this
/// is `λ₁ + dK − Dgᵀc`.
fn homogeneous_transversality(p: &OcpProblem, nu: &[f64], x1: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let proj = dg_transpose_c(p, x1, c)?;
    let dk = p.terminal_gradient(x1);
    Ok((0..x1.len())
        .map(|i| nu[i + 1] - nu[0] * dk[i] - proj[i])
        .collect())
}

/// `λ₁ − Dg(x₁)ᵀc`; zero iff `λ₁` annihilates `T_{x₁}S₁`.
pub fn transversality_residual(lambda1: &[f64], x1: &[f64], p: &OcpProblem, c: &[f64]) -> Result<Vec<f64>> {
    let proj = dg_transpose_c(p, x1, c)?;
    Ok(lambda1.iter().zip(&proj).map(|(a, b)| a - b).collect())
}

/// `μ₁ + dK(x₁) − Dg(x₁)ᵀc`.
pub fn terminal_cost_transversality_residual(
    mu1: &[f64],
    x1: &[f64],
    p: &OcpProblem,
    c: &[f64],
) -> Result<Vec<f64>> {
    let mut nu = vec![-1.0];
    nu.extend_from_slice(mu1);
    homogeneous_transversality(p, &nu, x1, c)
}

/// `Φ_K(x⁰, x) = (x⁰ − K(x), x)`.
pub fn phi_k(k: Option<&dyn TerminalCost>, x0: f64, x: &[f64]) -> (f64, Vec<f64>) {
    (x0 - k.map_or(0.0, |k| k.value(x)), x.to_vec())
}

/// `Φ_K⁻¹ = Φ_{−K}`.
pub fn phi_k_inverse(k: Option<&dyn TerminalCost>, x0: f64, x: &[f64]) -> (f64, Vec<f64>) {
    (x0 + k.map_or(0.0, |k| k.value(x)), x.to_vec())
}

/// `Ψ_K(y⁰, y, μ) = (y⁰ + K(y), y, μ + dK(y))`.
pub fn psi_k(k: Option<&dyn TerminalCost>, y0: f64, y: &[f64], mu: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    psi_scaled(k, 1.0, y0, y, mu)
}

/// `Ψ_{−K}`, the inverse of [`psi_k`].
pub fn psi_k_inverse(
    k: Option<&dyn TerminalCost>,
    x0: f64,
    x: &[f64],
    lambda: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    psi_scaled(k, -1.0, x0, x, lambda)
}

fn psi_scaled(
    k: Option<&dyn TerminalCost>,
    s: f64,
    y0: f64,
    y: &[f64],
    mu: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    match k {
        None => (y0, y.to_vec(), mu.to_vec()),
        Some(k) => {
            let dk = k.gradient(y);
            (
                y0 + s * k.value(y),
                y.to_vec(),
                mu.iter().zip(&dk).map(|(m, d)| m + s * d).collect(),
            )
        }
    }
}

/// Contact extremal produced by one shooting evaluation.
#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub contact: ContactTrajectory,
    pub t0: f64,
    pub t1: f64,
}

impl ExtremalTrajectory {
    pub fn final_state(&self) -> &ContactState {
        &self.contact.last().state
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.contact.switch_times()
    }

    /// Running plus terminal cost.
    pub fn cost(&self, p: &OcpProblem) -> f64 {
        let x = &self.final_state().x;
        x.running_cost() + p.terminal_value(x.state())
    }

    /// Samples with duplicate times (chart switches) collapsed to the later
    /// entry.
    fn distinct_samples(&self) -> Vec<&crate::contact::ContactSample> {
        let mut out: Vec<&crate::contact::ContactSample> = Vec::with_capacity(self.contact.samples.len());
        for s in &self.contact.samples {
            match out.last() {
                Some(prev) if prev.t == s.t => *out.last_mut().unwrap() = s,
                _ => out.push(s),
            }
        }
        out
    }

    /// `(t, λ(t))` where the costate is normal; `None` at abnormal samples.
    pub fn normal_costates(&self) -> Vec<(f64, Option<Vec<f64>>)> {
        self.distinct_samples()
            .into_iter()
            .map(|s| (s.t, normal_coordinates(&s.state.costate)))
            .collect()
    }

    pub fn state_trajectory(&self) -> StateTrajectory {
        let ds = self.distinct_samples();
        StateTrajectory {
            times: ds.iter().map(|s| s.t).collect(),
            states: ds.iter().map(|s| s.state.x.clone()).collect(),
        }
    }

    /// The maximizing control as a piecewise-linear signal through the
    /// samples, with jumps at located switches.
    pub fn control_signal(&self) -> Result<ControlSignal> {
        let ds = self.distinct_samples();
        let mut times = Vec::with_capacity(ds.len());
        let mut left = Vec::with_capacity(ds.len());
        let mut right = Vec::with_capacity(ds.len());
        for s in ds {
            let u = s.control.clone().ok_or_else(|| {
                Error::InvalidInput("extremal samples carry no control".into())
            })?;
            let before = self.contact.events.iter().find_map(|e| match &e.kind {
                EventKind::ControlSwitch { before, .. }
                    if (e.t - s.t).abs() <= 1e-12 * s.t.abs().max(1.0) && !before.is_empty() =>
                {
                    Some(before.clone())
                }
                _ => None,
            });
            times.push(s.t);
            left.push(before.unwrap_or_else(|| u.clone()));
            right.push(u);
        }
        ControlSignal::piecewise_linear(times, left, right)
    }
}

/// `λ = −ν/ν₀` for any chart, if `ν₀ ≠ 0`.
pub fn normal_coordinates(pc: &ProjectiveCostate) -> Option<Vec<f64>> {
    match pc {
        ProjectiveCostate::Normal { lambda } => Some(lambda.clone()),
        ProjectiveCostate::Abnormal { nu0_ratio, .. } if *nu0_ratio != 0.0 => {
            let r = representative(pc);
            let nu0 = r.nu0();
            Some(r.spatial().iter().map(|v| -v / nu0).collect())
        }
        _ => None,
    }
}

/// Integrates the optimal contact Hamiltonian flow from `(x̂₀, pc(z))`.
pub fn extremal(p: &OcpProblem, z: &ShootingUnknowns, integ: &IntegratorOptions) -> Result<ExtremalTrajectory> {
    let t1 = z.terminal_time(p);
    if !(t1 > p.t0) {
        return Err(Error::InvalidInput(format!("t1 = {t1} must exceed t0 = {}", p.t0)));
    }
    let s0 = ContactState::new(ExtendedState::from_parts(0.0, &p.x0), z.initial_costate()?)?;
    let h = OptimalHamiltonian::new(p.clone());
    let contact = integrate_contact(&h, &s0, (p.t0, t1), integ)?;
    Ok(ExtremalTrajectory {
        contact,
        t0: p.t0,
        t1,
    })
}

/// Terminal covector normalized per the attempt's chart: `(−1, λ₁)` for
/// normal attempts, the initial abnormal chart's `(0, α₁)` otherwise.
fn terminal_covector(start: Chart, pc1: &ProjectiveCostate) -> Result<Vec<f64>> {
    match start {
        Chart::Normal => {
            let lambda = normal_coordinates(pc1).ok_or_else(|| {
                Error::singular(pc1.chart().to_string(), "normal extremal reached ν₀ = 0")
            })?;
            let mut v = vec![-1.0];
            v.extend(lambda);
            Ok(v)
        }
        Chart::Abnormal(a) => {
            let r = match switch_chart(pc1, Chart::Abnormal(a)) {
                Ok(q) => representative(&q).into_inner(),
                Err(_) => {
                    let r = representative(pc1).into_inner();
                    let m = inf_norm(&r);
                    r.into_iter().map(|v| v / m).collect()
                }
            };
            Ok(r)
        }
    }
}

fn residual_blocks(p: &OcpProblem, z: &ShootingUnknowns, ext: &ExtremalTrajectory) -> Result<ResidualBlocks> {
    let end = ext.final_state();
    let x1 = end.x.state();
    let w = terminal_covector(z.chart, &end.costate)?;
    let target = p.target.as_ref().map_or_else(Vec::new, |t| t.g(x1));
    let transversality = homogeneous_transversality(p, &w, x1, &z.multipliers)?;
    let free_time = match p.time_mode {
        TimeMode::Free => Some(OptimalHamiltonian::new(p.clone()).value(end.x.as_slice(), &w)?),
        TimeMode::Fixed(_) => None,
    };
    Ok(ResidualBlocks {
        target,
        transversality,
        free_time,
    })
}

/// Residual blocks at `z`, with the extremal they were computed from.
pub fn shooting_residual(
    p: &OcpProblem,
    z: &ShootingUnknowns,
    integ: &IntegratorOptions,
) -> Result<(ResidualBlocks, ExtremalTrajectory)> {
    z.validate(p)?;
    let ext = extremal(p, z, integ)?;
    Ok((residual_blocks(p, z, &ext)?, ext))
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub converged: bool,
    pub unknowns: ShootingUnknowns,
    pub trajectory: ExtremalTrajectory,
    pub residual: ResidualBlocks,
    pub classification: Classification,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub cost: f64,
}

impl ShootingResult {
    pub fn t1(&self) -> f64 {
        self.trajectory.t1
    }
}

fn attempt(p: &OcpProblem, z0: &ShootingUnknowns, opts: &SolveOptions) -> Result<ShootingResult> {
    z0.validate(p)?;
    let f = |v: &[f64]| -> Result<Vec<f64>> {
        let z = ShootingUnknowns::from_vector(z0, v);
        z.validate(p)?;
        Ok(shooting_residual(p, &z, &opts.integrator)?.0.to_vector())
    };
    let out = damped_newton(&f, &z0.to_vector(), &opts.newton)?;
    let unknowns = ShootingUnknowns::from_vector(z0, &out.z);
    let (residual, trajectory) = shooting_residual(p, &unknowns, &opts.integrator)?;
    let classification = match unknowns.chart {
        Chart::Normal => Classification::Normal,
        Chart::Abnormal(_) => Classification::Abnormal,
    };
    let cost = trajectory.cost(p);
    Ok(ShootingResult {
        converged: residual.norm() <= opts.newton.tol,
        unknowns,
        trajectory,
        residual,
        classification,
        iterations: out.iterations,
        residual_history: out.history,
        cost,
    })
}

/// Abnormal-chart starting points derived from a guess in any chart.
pub fn abnormal_guesses(z: &ShootingUnknowns) -> Vec<ShootingUnknowns> {
    let n = z.costate.len();
    (1..=n)
        .filter_map(|a| {
            let mut alpha = z.costate.clone();
            if alpha[a - 1] == 0.0 {
                alpha = vec![0.0; n];
                alpha[a - 1] = 1.0;
            }
            ShootingUnknowns::abnormal(a, alpha, z.t1, z.multipliers.clone()).ok()
        })
        .collect()
}

fn better(a: &Error, b: &Error) -> bool {
    match (a, b) {
        (Error::NoConvergence { best_residual: ra, .. }, Error::NoConvergence { best_residual: rb, .. }) => ra < rb,
        (Error::NoConvergence { .. }, _) => true,
        _ => false,
    }
}

/// Damped Newton shooting from `z_init`, with abnormal-chart retries
/// according to `opts.chart`.
pub fn solve(p: &OcpProblem, z_init: &ShootingUnknowns, opts: &SolveOptions) -> Result<ShootingResult> {
    p.validate()?;
    opts.integrator.validate()?;
    z_init.validate(p)?;
    let mut queue = Vec::new();
    match opts.chart {
        ChartPolicy::Normal => queue.push(z_init.clone()),
        ChartPolicy::Abnormal => {
            if matches!(z_init.chart, Chart::Abnormal(_)) {
                queue.push(z_init.clone());
            }
            queue.extend(abnormal_guesses(z_init));
        }
        ChartPolicy::Auto => {
            queue.push(z_init.clone());
            queue.extend(abnormal_guesses(z_init));
        }
    }
    let mut worst: Option<Error> = None;
    for z in queue {
        match attempt(p, &z, opts) {
            Ok(r) if r.converged => return Ok(r),
            Ok(_) => {}
            Err(e @ (Error::InvalidInput(_) | Error::UnknownName { .. })) => return Err(e),
            Err(e) => {
                if worst.as_ref().is_none_or(|w| better(&e, w)) {
                    worst = Some(e);
                }
            }
        }
    }
    Err(worst.unwrap_or(Error::NoConvergence {
        iterations: 0,
        best_residual: f64::INFINITY,
        best_iterate: z_init.to_vector(),
        residual_history: Vec::new(),
    }))
}

/// Cartesian grid of normal-chart starts `λ₀ ∈ {−1, −0.3, 0.3, 1}ⁿ` around a
/// template supplying `t₁` and multipliers.
pub fn default_starts(template: &ShootingUnknowns) -> Vec<ShootingUnknowns> {
    const LEVELS: [f64; 4] = [-1.0, -0.3, 0.3, 1.0];
    let n = template.costate.len();
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                LEVELS.iter().map(move |v| {
                    let mut q = prefix.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|lambda| ShootingUnknowns::normal(lambda, template.t1, template.multipliers.clone()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MultiStartReport {
    /// Distinct converged extremals, by increasing cost.
    pub solutions: Vec<ShootingResult>,
    pub attempts: usize,
    pub failures: usize,
}

/// Runs [`solve`] from every start in parallel and keeps the distinct
/// converged extremals. No claim of global optimality is made.
pub fn solve_multistart(p: &OcpProblem, starts: &[ShootingUnknowns], opts: &SolveOptions) -> Result<MultiStartReport> {
    p.validate()?;
    let results: Vec<Result<ShootingResult>> = starts.par_iter().map(|z| solve(p, z, opts)).collect();
    let mut solutions: Vec<(usize, ShootingResult)> = Vec::new();
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                let dup = solutions.iter().any(|(_, s)| {
                    s.unknowns.chart == r.unknowns.chart
                        && (s.t1() - r.t1()).abs() <= 1e-6
                        && s.unknowns
                            .costate
                            .iter()
                            .zip(&r.unknowns.costate)
                            .all(|(a, b)| (a - b).abs() <= 1e-6 * a.abs().max(1.0))
                });
                if !dup {
                    solutions.push((i, r));
                }
            }
            Err(Error::InvalidInput(msg)) => return Err(Error::InvalidInput(msg)),
            Err(_) => failures += 1,
        }
    }
    solutions.sort_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)));
    Ok(MultiStartReport {
        solutions: solutions.into_iter().map(|(_, r)| r).collect(),
        attempts: starts.len(),
        failures,
    })
}

/// Maps a solution of the `y`-system by `Ψ_K`: returns `(t, x⁰, x, λ)` at
/// every normal sample.
pub fn map_by_psi(p: &OcpProblem, ext: &ExtremalTrajectory) -> Vec<(f64, f64, Vec<f64>, Vec<f64>)> {
    let k: Option<&dyn TerminalCost> = p.terminal_cost.as_deref();
    let costates = ext.normal_costates();
    let traj = ext.state_trajectory();
    costates
        .into_iter()
        .zip(traj.states)
        .filter_map(|((t, mu), xh)| {
            let mu = mu?;
            let (x0, x, lambda) = psi_k(k, xh.running_cost(), xh.state(), &mu);
            Some((t, x0, x, lambda))
        })
        .collect()
}
