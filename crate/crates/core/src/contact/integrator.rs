//! One-step integration schemes, selectable by name.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub type Field<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a;

pub struct StepOutcome {
    pub y: Vec<f64>,
    /// Embedded error estimate, present for adaptive schemes.
    pub error: Option<Vec<f64>>,
}

pub trait Stepper: Send + Sync {
    fn name(&self) -> &'static str;
    fn order(&self) -> u32;
    fn adaptive(&self) -> bool {
        false
    }
    fn step(&self, f: &Field, t: f64, y: &[f64], h: f64) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorOptions {
    /// Registry name of the stepping scheme.
    pub method: String,
    /// Nominal step for fixed-step schemes; initial step for adaptive ones.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Chart coordinates beyond this magnitude trigger a chart switch.
    pub chart_bound: f64,
    /// Width to which control switching times are bisected.
    pub switch_tol: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: "rk4".into(),
            step: 1e-3,
            rtol: 1e-8,
            atol: 1e-10,
            min_step: 1e-13,
            max_steps: 10_000_000,
            chart_bound: 10.0,
            switch_tol: 1e-10,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step", self.step),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("min_step", self.min_step),
            ("chart_bound", self.chart_bound),
            ("switch_tol", self.switch_tol),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        // the best chart has all coordinates within 1; a bound above that
        // keeps consecutive switches apart
        if !(self.chart_bound > 1.0) {
            return Err(Error::InvalidInput("chart_bound must exceed 1".into()));
        }
        Ok(())
    }

    pub fn stepper(&self) -> Result<Arc<dyn Stepper>> {
        steppers().build(&self.method, &serde_json::Value::Null)
    }
}

pub fn steppers() -> &'static Registry<dyn Stepper> {
    static REG: OnceLock<Registry<dyn Stepper>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Stepper> = Registry::new("integrator");
        r.register("rk4", "classical fourth-order Runge-Kutta, fixed step", |_| {
            Ok(Arc::new(Rk4))
        });
        r.register(
            "rk45",
            "Dormand-Prince 5(4) with embedded error control",
            |_| Ok(Arc::new(DormandPrince)),
        );
        r
    })
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += h * c * v;
        }
    }
    out
}

pub struct Rk4;

impl Stepper for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn order(&self) -> u32 {
        4
    }

    fn step(&self, f: &Field, t: f64, y: &[f64], h: f64) -> Result<StepOutcome> {
        Ok(StepOutcome {
            y: rk4_step(f, t, y, h)?,
            error: None,
        })
    }
}

pub fn rk4_step(f: &Field, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &[(1.0, &k1)]))?;
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &[(1.0, &k2)]))?;
    let k4 = f(t + h, &axpy(y, h, &[(1.0, &k3)]))?;
    Ok(axpy(
        y,
        h / 6.0,
        &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)],
    ))
}

pub struct DormandPrince;

impl Stepper for DormandPrince {
    fn name(&self) -> &'static str {
        "rk45"
    }

    fn order(&self) -> u32 {
        5
    }

    fn adaptive(&self) -> bool {
        true
    }

    fn step(&self, f: &Field, t: f64, y: &[f64], h: f64) -> Result<StepOutcome> {
        let k1 = f(t, y)?;
        let k2 = f(t + h / 5.0, &axpy(y, h, &[(1.0 / 5.0, &k1)]))?;
        let k3 = f(
            t + 3.0 * h / 10.0,
            &axpy(y, h, &[(3.0 / 40.0, &k1), (9.0 / 40.0, &k2)]),
        )?;
        let k4 = f(
            t + 4.0 * h / 5.0,
            &axpy(y, h, &[(44.0 / 45.0, &k1), (-56.0 / 15.0, &k2), (32.0 / 9.0, &k3)]),
        )?;
        let k5 = f(
            t + 8.0 * h / 9.0,
            &axpy(
                y,
                h,
                &[
                    (19372.0 / 6561.0, &k1),
                    (-25360.0 / 2187.0, &k2),
                    (64448.0 / 6561.0, &k3),
                    (-212.0 / 729.0, &k4),
                ],
            ),
        )?;
        let k6 = f(
            t + h,
            &axpy(
                y,
                h,
                &[
                    (9017.0 / 3168.0, &k1),
                    (-355.0 / 33.0, &k2),
                    (46732.0 / 5247.0, &k3),
                    (49.0 / 176.0, &k4),
                    (-5103.0 / 18656.0, &k5),
                ],
            ),
        )?;
        let y5 = axpy(
            y,
            h,
            &[
                (35.0 / 384.0, &k1),
                (500.0 / 1113.0, &k3),
                (125.0 / 192.0, &k4),
                (-2187.0 / 6784.0, &k5),
                (11.0 / 84.0, &k6),
            ],
        );
        let k7 = f(t + h, &y5)?;
        // difference between the 5th and embedded 4th order solutions
        let e = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
        let err = (0..y.len())
            .map(|i| h * ks.iter().zip(e).map(|(k, c)| c * k[i]).sum::<f64>())
            .collect();
        Ok(StepOutcome {
            y: y5,
            error: Some(err),
        })
    }
}

/// Scaled max-norm of an embedded error estimate.
pub fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &IntegratorOptions) -> f64 {
    err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| e.abs() / (opts.atol + opts.rtol * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Integrates a smooth field over `[ta, tb]` on a uniform grid with the
/// classical RK4 scheme; returns all grid samples including both ends.
pub fn rk4_uniform(
    f: &Field,
    y0: &[f64],
    ta: f64,
    tb: f64,
    nominal_step: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = uniform_steps(ta, tb, nominal_step);
    let h = (tb - ta) / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut y = y0.to_vec();
    out.push((ta, y.clone()));
    for i in 0..n {
        let t = ta + i as f64 * h;
        y = rk4_step(f, t, &y, h)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite state at t = {t}")));
        }
        let t_next = if i + 1 == n { tb } else { ta + (i + 1) as f64 * h };
        out.push((t_next, y.clone()));
    }
    Ok(out)
}

/// Number of uniform steps of size at most `nominal` covering `[ta, tb]`.
pub fn uniform_steps(ta: f64, tb: f64, nominal: f64) -> usize {
    let len = (tb - ta).abs();
    ((len / nominal) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}
