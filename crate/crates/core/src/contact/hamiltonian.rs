//! Hamiltonians on the punctured cotangent bundle and their chart restrictions.
//!
//! Every contact Hamiltonian is carried as its degree-1 (positively)
//! homogeneous extension `H(x̂, ν̂)`. In the normal chart the contact
//! Hamiltonian is `h(x̂, λ) = H(x̂, (−1, λ))`, so `∂h/∂x̂ = ∂H/∂x̂` and
//! `∂h/∂λ = ∂H/∂ν`.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Value and first partials of a homogeneous Hamiltonian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianJet {
    pub value: f64,
    /// `∂H/∂x̂`, n+1 entries.
    pub dx: Vec<f64>,
    /// `∂H/∂ν̂`, n+1 entries.
    pub dnu: Vec<f64>,
}

pub trait ContactHamiltonian: Send + Sync {
    /// `H(x̂, ν̂)`.
    fn value(&self, xh: &[f64], nu: &[f64]) -> Result<f64>;

    /// Value and partials. The default uses central finite differences.
    fn jet(&self, xh: &[f64], nu: &[f64]) -> Result<HamiltonianJet> {
        finite_difference_jet(self, xh, nu)
    }

    /// Present for Hamiltonians defined by pointwise maximization over a
    /// control set; enables switch detection during integration.
    fn switching(&self) -> Option<&dyn ControlSwitching> {
        None
    }
}

/// Access to the maximizing control behind an optimal Hamiltonian.
pub trait ControlSwitching: Send + Sync {
    fn active_control(&self, xh: &[f64], nu: &[f64]) -> Result<Vec<f64>>;

    /// Whether the maximizer jumped between two consecutive evaluations.
    fn is_switch(&self, before: &[f64], after: &[f64]) -> bool;

    /// Jet of the control Hamiltonian with `u` held fixed.
    fn frozen_jet(&self, xh: &[f64], nu: &[f64], u: &[f64]) -> Result<HamiltonianJet>;
}

/// Central-difference step `ε^{1/3} · max(1, |v|)`.
pub fn fd_step(v: f64) -> f64 {
    f64::EPSILON.cbrt() * v.abs().max(1.0)
}

pub fn finite_difference_jet<H: ContactHamiltonian + ?Sized>(
    h: &H,
    xh: &[f64],
    nu: &[f64],
) -> Result<HamiltonianJet> {
    let value = h.value(xh, nu)?;
    let mut dx = vec![0.0; xh.len()];
    let mut p = xh.to_vec();
    for i in 0..xh.len() {
        let s = fd_step(xh[i]);
        p[i] = xh[i] + s;
        let fp = h.value(&p, nu)?;
        p[i] = xh[i] - s;
        let fm = h.value(&p, nu)?;
        p[i] = xh[i];
        dx[i] = (fp - fm) / (2.0 * s);
    }
    let mut dnu = vec![0.0; nu.len()];
    let mut q = nu.to_vec();
    for i in 0..nu.len() {
        let s = fd_step(nu[i]);
        q[i] = nu[i] + s;
        let fp = h.value(xh, &q)?;
        q[i] = nu[i] - s;
        let fm = h.value(xh, &q)?;
        q[i] = nu[i];
        dnu[i] = (fp - fm) / (2.0 * s);
    }
    let jet = HamiltonianJet { value, dx, dnu };
    check_finite(&jet)?;
    Ok(jet)
}

pub(crate) fn check_finite(jet: &HamiltonianJet) -> Result<()> {
    if !jet.value.is_finite()
        || jet.dx.iter().chain(&jet.dnu).any(|v| !v.is_finite())
    {
        return Err(Error::DerivativeFailure(format!(
            "non-finite Hamiltonian jet {jet:?}"
        )));
    }
    Ok(())
}

/// Largest disagreement between supplied partials and central differences.
pub fn finite_difference_mismatch<H: ContactHamiltonian + ?Sized>(
    h: &H,
    xh: &[f64],
    nu: &[f64],
) -> Result<f64> {
    let supplied = h.jet(xh, nu)?;
    let fd = finite_difference_jet(h, xh, nu)?;
    Ok(supplied
        .dx
        .iter()
        .zip(&fd.dx)
        .chain(supplied.dnu.iter().zip(&fd.dnu))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

type ValueFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type JetFn = dyn Fn(&[f64], &[f64]) -> HamiltonianJet + Send + Sync;

/// Homogeneous Hamiltonian given directly as closures on `(x̂, ν̂)`.
#[derive(Clone)]
pub struct FnHamiltonian {
    value: Arc<ValueFn>,
    jet: Option<Arc<JetFn>>,
}

impl FnHamiltonian {
    pub fn new(value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            jet: None,
        }
    }

    pub fn with_jet(
        mut self,
        jet: impl Fn(&[f64], &[f64]) -> HamiltonianJet + Send + Sync + 'static,
    ) -> Self {
        self.jet = Some(Arc::new(jet));
        self
    }
}

impl ContactHamiltonian for FnHamiltonian {
    fn value(&self, xh: &[f64], nu: &[f64]) -> Result<f64> {
        let v = (self.value)(xh, nu);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::EvaluationFailure(format!("H = {v}")))
        }
    }

    fn jet(&self, xh: &[f64], nu: &[f64]) -> Result<HamiltonianJet> {
        match &self.jet {
            Some(j) => {
                let jet = j(xh, nu);
                check_finite(&jet)?;
                Ok(jet)
            }
            None => finite_difference_jet(self, xh, nu),
        }
    }
}

type ChartFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
/// Returns `(∂h/∂x̂, ∂h/∂λ)`.
type ChartPartialsFn = dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync;

/// Contact Hamiltonian written in normal-chart coordinates `h(x̂, λ)`.
///
/// Its homogeneous extension is `H(x̂, ν̂) = −ν₀ · h(x̂, −ν/ν₀)`, defined for
/// `ν₀ < 0`; evaluating it elsewhere is a chart singularity.
#[derive(Clone)]
pub struct NormalChartHamiltonian {
    h: Arc<ChartFn>,
    partials: Option<Arc<ChartPartialsFn>>,
}

impl NormalChartHamiltonian {
    pub fn new(h: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            h: Arc::new(h),
            partials: None,
        }
    }

    pub fn with_partials(
        mut self,
        p: impl Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(p));
        self
    }

    fn chart_point(nu: &[f64]) -> Result<(f64, Vec<f64>)> {
        let nu0 = nu[0];
        if nu0 >= 0.0 {
            return Err(Error::singular(
                "normal",
                "chart-defined Hamiltonian needs ν₀ < 0",
            ));
        }
        Ok((-nu0, nu[1..].iter().map(|v| -v / nu0).collect()))
    }
}

impl ContactHamiltonian for NormalChartHamiltonian {
    fn value(&self, xh: &[f64], nu: &[f64]) -> Result<f64> {
        let (scale, lambda) = Self::chart_point(nu)?;
        Ok(scale * (self.h)(xh, &lambda))
    }

    fn jet(&self, xh: &[f64], nu: &[f64]) -> Result<HamiltonianJet> {
        let Some(p) = &self.partials else {
            return finite_difference_jet(self, xh, nu);
        };
        let (scale, lambda) = Self::chart_point(nu)?;
        let h = (self.h)(xh, &lambda);
        let (dhx, dhl) = p(xh, &lambda);
        let dx = dhx.iter().map(|v| scale * v).collect();
        // Euler's relation fixes ∂H/∂ν₀ = −h + λ·∂h/∂λ.
        let lam_dot: f64 = lambda.iter().zip(&dhl).map(|(a, b)| a * b).sum();
        let mut dnu = vec![lam_dot - h];
        dnu.extend_from_slice(&dhl);
        let jet = HamiltonianJet {
            value: scale * h,
            dx,
            dnu,
        };
        check_finite(&jet)?;
        Ok(jet)
    }
}
