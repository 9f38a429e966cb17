//! Damped Gauss-Newton on a residual map with forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Success when `‖r‖∞ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step, scaled by `max(1, |z_j|)`.
    pub fd_step: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            fd_step: 1e-6,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub z: Vec<f64>,
    pub residual: Vec<f64>,
    pub iterations: usize,
    /// `‖r‖∞` after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn jacobian<F>(f: &F, z: &[f64], r: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let cols: Vec<Vec<f64>> = (0..z.len())
        .into_par_iter()
        .map(|j| {
            let h = step * z[j].abs().max(1.0);
            let mut zp = z.to_vec();
            zp[j] = z[j] + h;
            match f(&zp) {
                Ok(rp) => Ok(rp.iter().zip(r).map(|(a, b)| (a - b) / h).collect()),
                // a forward probe can leave the domain (e.g. a time bound)
                Err(_) => {
                    zp[j] = z[j] - h;
                    let rm = f(&zp)?;
                    Ok(r.iter().zip(&rm).map(|(a, b)| (a - b) / h).collect())
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(r.len(), z.len(), |i, j| cols[j][i]))
}

/// Minimizes `‖f(z)‖` by damped Gauss-Newton steps solved in the
/// least-squares sense, so overdetermined systems are accepted.
pub fn damped_newton<F>(f: &F, z0: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let mut z = z0.to_vec();
    let mut r = f(&z)?;
    let mut history = vec![inf_norm(&r)];
    let mut iterations = 0;
    while inf_norm(&r) > opts.tol {
        if iterations >= opts.max_iter {
            return Err(no_convergence(iterations, z, &r, history));
        }
        iterations += 1;
        let jac = jacobian(f, &z, &r, opts.fd_step)?;
        let svd = jac.svd(true, true);
        let rhs = -DVector::from_column_slice(&r);
        let eps = 1e-13 * svd.singular_values.max();
        let dz = match svd.solve(&rhs, eps) {
            Ok(d) => d,
            Err(_) => return Err(no_convergence(iterations, z, &r, history)),
        };
        let merit = two_norm(&r);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(rt) = f(&trial) {
                if rt.iter().all(|v| v.is_finite()) && two_norm(&rt) < merit {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zn, rn)) => {
                z = zn;
                r = rn;
                history.push(inf_norm(&r));
            }
            None => return Err(no_convergence(iterations, z, &r, history)),
        }
    }
    Ok(NewtonOutcome {
        z,
        residual: r,
        iterations,
        history,
    })
}

fn no_convergence(iterations: usize, z: Vec<f64>, r: &[f64], history: Vec<f64>) -> Error {
    Error::NoConvergence {
        iterations,
        best_residual: inf_norm(r),
        best_iterate: z,
        residual_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_smooth_square_system() {
        let f = |z: &[f64]| Ok(vec![z[0] * z[0] + z[1] - 3.0, z[0] - z[1] * z[1] + 3.0]);
        let out = damped_newton(&f, &[1.5, 1.5], &NewtonOptions::default()).unwrap();
        assert!(inf_norm(&out.residual) <= 1e-8);
        assert!((out.z[0] - 1.0).abs() < 1e-6 && (out.z[1] - 2.0).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] < w[0] * 1.0001 || w[1] <= 1e-8));
    }

    #[test]
    fn consistent_overdetermined_system() {
        let f = |z: &[f64]| Ok(vec![z[0] - 2.0, 2.0 * z[0] - 4.0, (z[0] - 2.0).powi(3)]);
        let out = damped_newton(&f, &[0.0], &NewtonOptions::default()).unwrap();
        assert!((out.z[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn reports_best_iterate_on_failure() {
        // no root: x² + 1
        let f = |z: &[f64]| Ok(vec![z[0] * z[0] + 1.0]);
        match damped_newton(&f, &[3.0], &NewtonOptions::default()) {
            Err(Error::NoConvergence {
                best_residual,
                residual_history,
                ..
            }) => {
                assert!(best_residual >= 1.0);
                assert!(!residual_history.is_empty());
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn domain_errors_are_backtracked() {
        // undefined for z ≤ 0; a full step from 0.1 overshoots into it
        let f = |z: &[f64]| {
            if z[0] <= 0.0 {
                Err(Error::InvalidInput("z must be positive".into()))
            } else {
                Ok(vec![z[0].ln() - 1.0])
            }
        };
        let out = damped_newton(&f, &[0.1], &NewtonOptions::default()).unwrap();
        assert!((out.z[0] - std::f64::consts::E).abs() < 1e-7);
    }
}
