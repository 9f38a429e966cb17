//! Integration of contact Hamiltonian flows with chart and control-switch
//! handling.

use crate::error::{Error, Result};
use crate::ocp::ExtendedState;
use crate::projcost::{best_chart, switch_chart, Chart, ProjectiveCostate};

use super::hamiltonian::{ContactHamiltonian, ControlSwitching, HamiltonianJet};
use super::integrator::{error_norm, rk4_uniform, uniform_steps, Field, IntegratorOptions, Stepper};
use super::{symplectic_lift_field, tangent_from_jet, ContactState, CHART_LIMIT};

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSample {
    pub t: f64,
    pub state: ContactState,
    /// Maximizing control at this sample, for optimal Hamiltonians.
    pub control: Option<Vec<f64>>,
    pub h_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ControlSwitch {
        before: Vec<f64>,
        after: Vec<f64>,
    },
    ChartSwitch {
        from: Chart,
        to: Chart,
        before: ProjectiveCostate,
        after: ProjectiveCostate,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEvent {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactTrajectory {
    pub samples: Vec<ContactSample>,
    pub events: Vec<TrajectoryEvent>,
}

impl ContactTrajectory {
    pub fn last(&self) -> &ContactSample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ControlSwitch { .. }))
            .map(|e| e.t)
            .collect()
    }

    pub fn chart_switch_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ChartSwitch { .. }))
            .map(|e| e.t)
            .collect()
    }
}

fn pack(state: &ContactState) -> Vec<f64> {
    let mut y = state.x.as_slice().to_vec();
    y.extend_from_slice(state.costate.coords());
    if let ProjectiveCostate::Abnormal { nu0_ratio, .. } = &state.costate {
        y.push(*nu0_ratio);
    }
    y
}

fn unpack(chart: Chart, n: usize, y: &[f64]) -> ContactState {
    let x = ExtendedState::new(y[..n + 1].to_vec());
    let coords = y[n + 1..2 * n + 1].to_vec();
    let costate = match chart {
        Chart::Normal => ProjectiveCostate::Normal { lambda: coords },
        Chart::Abnormal(pivot) => {
            let mut alpha = coords;
            alpha[pivot - 1] = 1.0;
            ProjectiveCostate::Abnormal {
                pivot,
                alpha,
                nu0_ratio: y[2 * n + 1],
            }
        }
    };
    ContactState { x, costate }
}

fn pack_tangent(chart: Chart, t: super::ContactTangent) -> Vec<f64> {
    let mut y = t.base;
    y.extend(t.fiber);
    if matches!(chart, Chart::Abnormal(_)) {
        y.push(t.nu0_ratio);
    }
    y
}

struct Segment<'a> {
    h: &'a dyn ContactHamiltonian,
    switching: Option<&'a dyn ControlSwitching>,
    chart: Chart,
    n: usize,
}

impl Segment<'_> {
    fn jet(&self, state: &ContactState, frozen: Option<&[f64]>) -> Result<HamiltonianJet> {
        let nu = state.covector();
        match (frozen, self.switching) {
            (Some(u), Some(sw)) => sw.frozen_jet(state.x.as_slice(), &nu, u),
            _ => self.h.jet(state.x.as_slice(), &nu),
        }
    }

    fn field(&self, frozen: Option<&[f64]>, y: &[f64]) -> Result<Vec<f64>> {
        let state = unpack(self.chart, self.n, y);
        let jet = self.jet(&state, frozen)?;
        Ok(pack_tangent(self.chart, tangent_from_jet(&state, &jet)?))
    }

    fn control(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.switching {
            None => Ok(None),
            Some(sw) => {
                let s = unpack(self.chart, self.n, y);
                sw.active_control(s.x.as_slice(), &s.covector()).map(Some)
            }
        }
    }

    fn sample(&self, t: f64, y: &[f64]) -> Result<ContactSample> {
        let state = unpack(self.chart, self.n, y);
        let control = self.control(y)?;
        let nu = state.covector();
        let h_value = self.h.value(state.x.as_slice(), &nu)?;
        Ok(ContactSample {
            t,
            state,
            control,
            h_value,
        })
    }
}

enum StepResult {
    Plain(Vec<f64>),
    Switched { dt: f64, y: Vec<f64>, after: Vec<f64> },
}

/// Integrates the contact Hamiltonian flow of `h` from `s0` over `span`.
///
/// Control switches of optimal Hamiltonians are located by bisection with
/// the pre-switch control frozen; the grid restarts at every switch. When
/// chart coordinates exceed `opts.chart_bound` the state is re-expressed in
/// the best-conditioned chart.
pub fn integrate_contact(
    h: &dyn ContactHamiltonian,
    s0: &ContactState,
    span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<ContactTrajectory> {
    opts.validate()?;
    let (ta, tb) = span;
    if !(tb > ta) || !ta.is_finite() || !tb.is_finite() {
        return Err(Error::InvalidInput(format!(
            "degenerate integration span [{ta}, {tb}]"
        )));
    }
    let stepper = opts.stepper()?;
    let n = s0.dim();
    let mut traj = ContactTrajectory::default();
    let mut state = s0.clone();
    let mut t = ta;

    if let Some(ev) = maybe_switch_chart(&mut state, t, opts)? {
        traj.events.push(ev);
    }
    let mut seg = Segment {
        h,
        switching: h.switching(),
        chart: state.costate.chart(),
        n,
    };
    let mut y = pack(&state);
    traj.samples.push(seg.sample(t, &y)?);
    let mut steps = 0usize;
    let mut h_adapt = opts.step.min(tb - ta);

    'outer: while t < tb {
        let seg_start = t;
        let fixed_n = uniform_steps(seg_start, tb, opts.step);
        let fixed_h = (tb - seg_start) / fixed_n as f64;
        let mut i = 0usize;
        loop {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::StepFailure(format!(
                    "exceeded {} steps at t = {t}",
                    opts.max_steps
                )));
            }
            let (dt, y_new) = if stepper.adaptive() {
                let dt = h_adapt.min(tb - t);
                let field = |_t: f64, y: &[f64]| seg.field(None, y);
                let out = stepper.step(&field, t, &y, dt)?;
                let err = error_norm(out.error.as_deref().unwrap_or(&[]), &y, &out.y, opts);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !(err <= 1.0) || out.y.iter().any(|v| !v.is_finite()) {
                    h_adapt = dt * factor.min(0.5);
                    if h_adapt < opts.min_step * t.abs().max(1.0) {
                        return Err(Error::StepFailure(format!(
                            "step size underflow at t = {t}"
                        )));
                    }
                    continue;
                }
                h_adapt = dt * factor;
                (dt, out.y)
            } else {
                let t_next = if i + 1 == fixed_n {
                    tb
                } else {
                    seg_start + (i + 1) as f64 * fixed_h
                };
                let dt = t_next - t;
                let field = |_t: f64, y: &[f64]| seg.field(None, y);
                (dt, stepper.step(&field, t, &y, dt)?.y)
            };
            i += 1;
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepFailure(format!("non-finite state near t = {t}")));
            }

            match locate_switch(&seg, stepper.as_ref(), t, &y, dt, y_new, opts)? {
                StepResult::Plain(yn) => {
                    t = if (tb - (t + dt)).abs() <= 1e-14 * tb.abs().max(1.0) {
                        tb
                    } else {
                        t + dt
                    };
                    y = yn;
                }
                StepResult::Switched { dt, y: ys, after } => {
                    let before = traj.samples.last().and_then(|s| s.control.clone());
                    t += dt;
                    y = ys;
                    traj.events.push(TrajectoryEvent {
                        t,
                        kind: EventKind::ControlSwitch {
                            before: before.unwrap_or_default(),
                            after,
                        },
                    });
                    traj.samples.push(seg.sample(t, &y)?);
                    if tb - t <= 1e-14 * tb.abs().max(1.0) {
                        traj.samples.last_mut().unwrap().t = tb;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }

            let mut current = unpack(seg.chart, n, &y);
            if let Some(ev) = maybe_switch_chart(&mut current, t, opts)? {
                traj.samples.push(seg.sample(t, &y)?);
                traj.events.push(ev);
                seg.chart = current.costate.chart();
                y = pack(&current);
                traj.samples.push(seg.sample(t, &y)?);
                if t >= tb {
                    break 'outer;
                }
                continue 'outer;
            }
            traj.samples.push(seg.sample(t, &y)?);
            if t >= tb {
                break 'outer;
            }
            if !stepper.adaptive() && i >= fixed_n {
                break 'outer;
            }
        }
    }
    Ok(traj)
}

/// Checks a completed step for a jump of the maximizing control; if one
/// occurred, bisects for the switching time with the old control frozen.
fn locate_switch(
    seg: &Segment<'_>,
    stepper: &dyn Stepper,
    t: f64,
    y: &[f64],
    dt: f64,
    y_new: Vec<f64>,
    opts: &IntegratorOptions,
) -> Result<StepResult> {
    let Some(sw) = seg.switching else {
        return Ok(StepResult::Plain(y_new));
    };
    let Some(u_start) = seg.control(y)? else {
        return Ok(StepResult::Plain(y_new));
    };
    let u_end = seg.control(&y_new)?.unwrap_or_default();
    if !sw.is_switch(&u_start, &u_end) {
        return Ok(StepResult::Plain(y_new));
    }
    let frozen_field = |_t: f64, yy: &[f64]| seg.field(Some(&u_start), yy);
    let frozen: &Field = &frozen_field;
    let advance = |tau: f64| -> Result<Vec<f64>> { Ok(stepper.step(frozen, t, y, tau)?.y) };
    let jumped = |yy: &[f64]| -> Result<bool> {
        let u = seg.control(yy)?.unwrap_or_default();
        Ok(sw.is_switch(&u_start, &u))
    };
    let y_hi = advance(dt)?;
    if !jumped(&y_hi)? {
        return Ok(StepResult::Plain(y_new));
    }
    let (mut lo, mut hi) = (0.0, dt);
    while hi - lo > opts.switch_tol {
        let mid = 0.5 * (lo + hi);
        if jumped(&advance(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let ys = advance(hi)?;
    let after = seg.control(&ys)?.unwrap_or_default();
    Ok(StepResult::Switched { dt: hi, y: ys, after })
}

fn maybe_switch_chart(
    state: &mut ContactState,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<Option<TrajectoryEvent>> {
    let mag = state.costate.coordinate_magnitude();
    if mag <= opts.chart_bound {
        return Ok(None);
    }
    let from = state.costate.chart();
    let to = best_chart(&state.costate);
    if to == from {
        if mag > CHART_LIMIT {
            return Err(Error::singular(
                from.to_string(),
                "no chart of the atlas admits this point",
            ));
        }
        return Ok(None);
    }
    let before = state.costate.clone();
    let after = switch_chart(&before, to)?;
    state.costate = after.clone();
    Ok(Some(TrajectoryEvent {
        t,
        kind: EventKind::ChartSwitch {
            from,
            to,
            before,
            after,
        },
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Fixed-step RK4 integration of the canonical Hamilton equations on
/// `T*R^{n+1}`.
pub fn integrate_symplectic(
    h: &dyn ContactHamiltonian,
    x0: &[f64],
    nu0: &[f64],
    span: (f64, f64),
    step: f64,
) -> Result<Vec<SymplecticSample>> {
    if x0.len() != nu0.len() {
        return Err(Error::InvalidInput("x̂ and ν̂ dimensions differ".into()));
    }
    let m = x0.len();
    let field = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (dx, dnu) = symplectic_lift_field(h, &y[..m], &y[m..])?;
        Ok(dx.into_iter().chain(dnu).collect())
    };
    let y0: Vec<f64> = x0.iter().chain(nu0).copied().collect();
    Ok(rk4_uniform(&field, &y0, span.0, span.1, step)?
        .into_iter()
        .map(|(t, y)| SymplecticSample {
            t,
            x: y[..m].to_vec(),
            nu: y[m..].to_vec(),
        })
        .collect())
}
