//! Built-in dynamics, targets and terminal costs, registered by name.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::registry::{param_f64, param_matrix, param_vec, Registry};

use super::{ControlSet, Dynamics, OcpProblem, TargetSet, TerminalCost};

/// Maximizes `quad·u² + lin·u` on `[lo, hi]`; ties go to `lo`.
pub fn scalar_quadratic_argmax(lin: f64, quad: f64, lo: f64, hi: f64) -> f64 {
    if quad < 0.0 {
        return (-lin / (2.0 * quad)).clamp(lo, hi);
    }
    let val = |u: f64| quad * u * u + lin * u;
    if val(hi) > val(lo) {
        hi
    } else {
        lo
    }
}

fn box_bounds(set: &ControlSet) -> Option<(&[f64], &[f64])> {
    match set {
        ControlSet::Box { lo, hi } => Some((lo, hi)),
        ControlSet::Finite(_) => None,
    }
}

/// `ẋ₁ = x₂, ẋ₂ = u`, `L = 1` (minimum time).
pub struct DoubleIntegrator;

impl Dynamics for DoubleIntegrator {
    fn name(&self) -> &str {
        "double_integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![x[1], u[0]]
    }
    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        1.0
    }
    fn f_jacobian(&self, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }
    fn cost_gradient(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn argmax(&self, _x: &[f64], _nu0: f64, nu: &[f64], set: &ControlSet) -> Option<Vec<f64>> {
        let (lo, hi) = box_bounds(set)?;
        Some(vec![scalar_quadratic_argmax(nu[1], 0.0, lo[0], hi[0])])
    }
}

/// `ẋ = u`, `L = u²/2`.
pub struct ScalarLq;

impl Dynamics for ScalarLq {
    fn name(&self) -> &str {
        "scalar_lq"
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
    fn f_jacobian(&self, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn cost_gradient(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn argmax(&self, _x: &[f64], nu0: f64, nu: &[f64], set: &ControlSet) -> Option<Vec<f64>> {
        let (lo, hi) = box_bounds(set)?;
        Some(vec![scalar_quadratic_argmax(nu[0], 0.5 * nu0, lo[0], hi[0])])
    }
}

/// `ẋ₁ = x₂, ẋ₂ = −sin x₁ + u`, `L = u²/2`.
pub struct Pendulum;

impl Dynamics for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![x[1], -x[0].sin() + u[0]]
    }
    fn running_cost(&self, _x: &[f64], u: &[f64]) -> f64 {
        0.5 * u[0] * u[0]
    }
    fn argmax(&self, _x: &[f64], nu0: f64, nu: &[f64], set: &ControlSet) -> Option<Vec<f64>> {
        let (lo, hi) = box_bounds(set)?;
        Some(vec![scalar_quadratic_argmax(nu[1], 0.5 * nu0, lo[0], hi[0])])
    }
}

/// Control-affine bilinear system
/// `ẋ = A x + B u + Σ_k u_k N_k x`, `L = ½ xᵀQx + ½ r |u|²`.
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    n_k: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
    r: f64,
}

impl LinearDynamics {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        n_k: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        r: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.nrows() != n || q.shape() != (n, n) {
            return Err(Error::InvalidInput(
                "linear model needs A (n×n), B (n×m) and Q (n×n)".into(),
            ));
        }
        if !n_k.is_empty() && (n_k.len() != b.ncols() || n_k.iter().any(|m| m.shape() != (n, n))) {
            return Err(Error::InvalidInput(
                "bilinear terms need one n×n matrix per control".into(),
            ));
        }
        if !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidInput("control weight r must be non-negative".into()));
        }
        // only the symmetric part of Q matters
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self { a, b, n_k, q, r })
    }

    fn from_params(p: &Value) -> Result<Self> {
        let mat = |key: &str| -> Result<DMatrix<f64>> {
            let rows = param_matrix(p, key)?
                .ok_or_else(|| Error::InvalidInput(format!("linear model needs '{key}'")))?;
            to_matrix(&rows, key)
        };
        let a = mat("a")?;
        let b = mat("b")?;
        let n = a.nrows();
        let n_k = match p.get("n") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => {
                let raw: Vec<Vec<Vec<f64>>> = serde_json::from_value(v.clone())
                    .map_err(|e| Error::InvalidInput(format!("parameter 'n': {e}")))?;
                raw.iter().map(|m| to_matrix(m, "n")).collect::<Result<_>>()?
            }
        };
        let q = match param_matrix(p, "q")? {
            Some(rows) => to_matrix(&rows, "q")?,
            None => DMatrix::zeros(n, n),
        };
        let r = param_f64(p, "r")?.unwrap_or(1.0);
        Self::new(a, b, n_k, q, r)
    }
}

fn to_matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidInput(format!("'{key}' must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl Dynamics for LinearDynamics {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let mut out = &self.a * &xv + &self.b * DVector::from_column_slice(u);
        for (k, nk) in self.n_k.iter().enumerate() {
            out += nk * &xv * u[k];
        }
        out.as_slice().to_vec()
    }
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.q * &xv)) + 0.5 * self.r * u.iter().map(|v| v * v).sum::<f64>()
    }
    fn f_jacobian(&self, _x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let mut j = self.a.clone();
        for (k, nk) in self.n_k.iter().enumerate() {
            j += nk * u[k];
        }
        j
    }
    fn cost_gradient(&self, x: &[f64], _u: &[f64]) -> Vec<f64> {
        (&self.q * DVector::from_column_slice(x)).as_slice().to_vec()
    }
    fn argmax(&self, x: &[f64], nu0: f64, nu: &[f64], set: &ControlSet) -> Option<Vec<f64>> {
        let (lo, hi) = box_bounds(set)?;
        let xv = DVector::from_column_slice(x);
        let nuv = DVector::from_column_slice(nu);
        Some(
            (0..self.b.ncols())
                .map(|k| {
                    let mut col = self.b.column(k).into_owned();
                    if let Some(nk) = self.n_k.get(k) {
                        col += nk * &xv;
                    }
                    scalar_quadratic_argmax(nuv.dot(&col), 0.5 * nu0 * self.r, lo[k], hi[k])
                })
                .collect(),
        )
    }
}

/// `g(x) = x − p`.
pub struct PointTarget {
    point: Vec<f64>,
}

impl PointTarget {
    pub fn new(point: Vec<f64>) -> Self {
        Self { point }
    }
}

impl TargetSet for PointTarget {
    fn name(&self) -> &str {
        "point"
    }
    fn codim(&self) -> usize {
        self.point.len()
    }
    fn g(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.point).map(|(a, b)| a - b).collect()
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.point.len(), self.point.len())
    }
}

/// `g_j(x) = x_{i_j} − v_j` for selected coordinates (indices are 1-based).
pub struct CoordinateTarget {
    indices: Vec<usize>,
    values: Vec<f64>,
    n: usize,
}

impl CoordinateTarget {
    pub fn new(n: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.is_empty()
            || indices.len() != values.len()
            || indices.iter().any(|i| *i == 0 || *i > n)
        {
            return Err(Error::InvalidInput(format!(
                "coordinate target needs matching 1-based indices in 1..={n} and values"
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(Error::InvalidInput("coordinate target repeats an index".into()));
        }
        Ok(Self { indices, values, n })
    }
}

impl TargetSet for CoordinateTarget {
    fn name(&self) -> &str {
        "coordinates"
    }
    fn codim(&self) -> usize {
        self.indices.len()
    }
    fn g(&self, x: &[f64]) -> Vec<f64> {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(i, v)| x[i - 1] - v)
            .collect()
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.indices.len(), self.n);
        for (r, i) in self.indices.iter().enumerate() {
            j[(r, i - 1)] = 1.0;
        }
        j
    }
}

/// `g(x) = a·x − b`.
pub struct HyperplaneTarget {
    normal: Vec<f64>,
    offset: f64,
}

impl TargetSet for HyperplaneTarget {
    fn name(&self) -> &str {
        "hyperplane"
    }
    fn codim(&self) -> usize {
        1
    }
    fn g(&self, x: &[f64]) -> Vec<f64> {
        vec![x.iter().zip(&self.normal).map(|(a, b)| a * b).sum::<f64>() - self.offset]
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.normal.len(), &self.normal)
    }
}

/// `K(x) = ½ Σ w_i (x_i − c_i)²`.
pub struct QuadraticCost {
    weights: Vec<f64>,
    center: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(weights: Vec<f64>, center: Option<Vec<f64>>) -> Result<Self> {
        let center = center.unwrap_or_else(|| vec![0.0; weights.len()]);
        if weights.is_empty() || center.len() != weights.len() {
            return Err(Error::InvalidInput(
                "quadratic cost needs weights and a centre of equal length".into(),
            ));
        }
        Ok(Self { weights, center })
    }
}

impl TerminalCost for QuadraticCost {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.center)
            .zip(&self.weights)
            .map(|((a, c), w)| w * (a - c) * (a - c))
            .sum::<f64>()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .zip(&self.weights)
            .map(|((a, c), w)| w * (a - c))
            .collect()
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights))
    }
}

/// `K(x) = c·x`.
pub struct LinearCost {
    gradient: Vec<f64>,
}

impl TerminalCost for LinearCost {
    fn name(&self) -> &str {
        "linear"
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.gradient).map(|(a, b)| a * b).sum()
    }
    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.gradient.clone()
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.gradient.len(), self.gradient.len())
    }
}

fn required_vec(p: &Value, key: &str, what: &str) -> Result<Vec<f64>> {
    param_vec(p, key)?.ok_or_else(|| Error::InvalidInput(format!("{what} needs '{key}'")))
}

fn state_dim(p: &Value) -> Result<usize> {
    p.get("state_dim")
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::InvalidInput("state dimension unknown for this target".into()))
}

pub fn dynamics_registry() -> &'static Registry<dyn Dynamics> {
    static REG: OnceLock<Registry<dyn Dynamics>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Dynamics> = Registry::new("dynamics");
        r.register(
            "double_integrator",
            "x1' = x2, x2' = u, unit running cost",
            |_| Ok(Arc::new(DoubleIntegrator)),
        );
        r.register("scalar_lq", "x' = u, running cost u^2/2", |_| {
            Ok(Arc::new(ScalarLq))
        });
        r.register(
            "pendulum",
            "x1' = x2, x2' = -sin x1 + u, running cost u^2/2",
            |_| Ok(Arc::new(Pendulum)),
        );
        r.register(
            "linear",
            "x' = Ax + Bu + sum_k u_k N_k x, cost (x'Qx + r|u|^2)/2; params a, b, n, q, r",
            |p| Ok(Arc::new(LinearDynamics::from_params(p)?)),
        );
        r
    })
}

pub fn target_registry() -> &'static Registry<dyn TargetSet> {
    static REG: OnceLock<Registry<dyn TargetSet>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn TargetSet> = Registry::new("target");
        r.register("point", "x(t1) = point; params point", |p| {
            Ok(Arc::new(PointTarget::new(required_vec(p, "point", "point target")?)))
        });
        r.register("origin", "x(t1) = 0", |p| {
            Ok(Arc::new(PointTarget::new(vec![0.0; state_dim(p)?])))
        });
        r.register(
            "coordinates",
            "x_i(t1) = v_i for listed 1-based indices; params indices, values",
            |p| {
                let idx: Vec<usize> = match p.get("indices") {
                    Some(v) => serde_json::from_value(v.clone())
                        .map_err(|e| Error::InvalidInput(format!("parameter 'indices': {e}")))?,
                    None => return Err(Error::InvalidInput("coordinate target needs 'indices'".into())),
                };
                let values = param_vec(p, "values")?.unwrap_or_else(|| vec![0.0; idx.len()]);
                Ok(Arc::new(CoordinateTarget::new(state_dim(p)?, idx, values)?))
            },
        );
        r.register("hyperplane", "a.x(t1) = b; params normal, offset", |p| {
            let normal = required_vec(p, "normal", "hyperplane target")?;
            if normal.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidInput("hyperplane normal is zero".into()));
            }
            Ok(Arc::new(HyperplaneTarget {
                normal,
                offset: param_f64(p, "offset")?.unwrap_or(0.0),
            }))
        });
        r
    })
}

pub fn terminal_cost_registry() -> &'static Registry<dyn TerminalCost> {
    static REG: OnceLock<Registry<dyn TerminalCost>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn TerminalCost> = Registry::new("terminal cost");
        r.register(
            "quadratic",
            "K = sum_i w_i (x_i - c_i)^2 / 2; params weights, center",
            |p| {
                Ok(Arc::new(QuadraticCost::new(
                    required_vec(p, "weights", "quadratic cost")?,
                    param_vec(p, "center")?,
                )?))
            },
        );
        r.register("linear", "K = c.x; params gradient", |p| {
            Ok(Arc::new(LinearCost {
                gradient: required_vec(p, "gradient", "linear cost")?,
            }))
        });
        r
    })
}

/// Dynamics with the terminal cost folded into the running cost:
/// `L̃ = L + ∇K·f`, so that `∫L̃ = ∫L + K(x(t₁)) − K(x(t₀))`.
pub struct FoldedDynamics {
    inner: Arc<dyn Dynamics>,
    k: Arc<dyn TerminalCost>,
    name: String,
}

impl Dynamics for FoldedDynamics {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.inner.f(x, u)
    }
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let f = self.inner.f(x, u);
        let dk = self.k.gradient(x);
        self.inner.running_cost(x, u) + dk.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
    }
    fn f_jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        self.inner.f_jacobian(x, u)
    }
    fn cost_gradient(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let f = DVector::from_vec(self.inner.f(x, u));
        let dk = DVector::from_vec(self.k.gradient(x));
        let hk = self.k.hessian(x);
        let jf = self.inner.f_jacobian(x, u);
        let gl = DVector::from_vec(self.inner.cost_gradient(x, u));
        (gl + hk * f + jf.transpose() * dk).as_slice().to_vec()
    }
    fn argmax(&self, x: &[f64], nu0: f64, nu: &[f64], set: &ControlSet) -> Option<Vec<f64>> {
        let dk = self.k.gradient(x);
        let shifted: Vec<f64> = nu.iter().zip(&dk).map(|(a, b)| a + nu0 * b).collect();
        self.inner.argmax(x, nu0, &shifted, set)
    }
}

/// The same problem with its terminal cost moved into the running cost.
pub fn fold_terminal_cost(p: &OcpProblem) -> Result<OcpProblem> {
    let k = p
        .terminal_cost
        .clone()
        .ok_or_else(|| Error::InvalidInput("problem has no terminal cost to fold".into()))?;
    let mut q = p.clone();
    q.name = format!("{}_folded", p.name);
    q.dynamics = Arc::new(FoldedDynamics {
        name: format!("{}+dK.f", p.dynamics.name()),
        inner: p.dynamics.clone(),
        k,
    });
    q.terminal_cost = None;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::fd_gradient;
    use serde_json::json;

    #[test]
    fn registries_list_builtins() {
        let names: Vec<_> = dynamics_registry().list().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["double_integrator", "linear", "pendulum", "scalar_lq"]);
        assert!(target_registry().contains("origin"));
        assert!(terminal_cost_registry().contains("quadratic"));
    }

    #[test]
    fn linear_model_from_params() {
        let d = dynamics_registry()
            .build(
                "linear",
                &json!({"a": [[0, 1], [-1, 0]], "b": [[0], [1]], "n": [[[0, 0], [1, 0]]], "q": [[2, 0], [0, 0]]}),
            )
            .unwrap();
        assert_eq!(d.state_dim(), 2);
        assert_eq!(d.f(&[1.0, 2.0], &[3.0]), vec![2.0, -1.0 + 3.0 + 3.0]);
        assert_eq!(d.running_cost(&[1.0, 2.0], &[3.0]), 1.0 + 4.5);
        let j = d.f_jacobian(&[1.0, 2.0], &[3.0]);
        assert_eq!(j[(1, 0)], 2.0);
        assert!(dynamics_registry().build("linear", &json!({"a": [[1, 2]]})).is_err());
    }

    #[test]
    fn targets_from_params() {
        let t = target_registry()
            .build("coordinates", &json!({"indices": [1], "state_dim": 2}))
            .unwrap();
        assert_eq!(t.codim(), 1);
        assert_eq!(t.g(&[0.3, 5.0]), vec![0.3]);
        assert_eq!(t.jacobian(&[0.0, 0.0]).as_slice(), &[1.0, 0.0]);
        let o = target_registry().build("origin", &json!({"state_dim": 3})).unwrap();
        assert_eq!(o.codim(), 3);
        assert!(target_registry()
            .build("coordinates", &json!({"indices": [3], "state_dim": 2}))
            .is_err());
    }

    #[test]
    fn folded_cost_gradient_matches_finite_differences() {
        let k: Arc<dyn TerminalCost> = Arc::new(QuadraticCost::new(vec![1.5, 0.5], Some(vec![0.2, -0.1])).unwrap());
        let folded = FoldedDynamics {
            inner: Arc::new(Pendulum),
            k,
            name: "f".into(),
        };
        let x = [0.4, -0.7];
        let u = [0.3];
        let g = folded.cost_gradient(&x, &u);
        let fd = fd_gradient(|p| folded.running_cost(p, &u), &x);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_argmax_cases() {
        assert_eq!(scalar_quadratic_argmax(0.4, -0.5, -1.0, 1.0), 0.4);
        assert_eq!(scalar_quadratic_argmax(3.0, -0.5, -1.0, 1.0), 1.0);
        assert_eq!(scalar_quadratic_argmax(-0.1, 0.0, -1.0, 1.0), -1.0);
        assert_eq!(scalar_quadratic_argmax(0.0, 0.0, -1.0, 1.0), -1.0);
        assert_eq!(scalar_quadratic_argmax(0.1, 1.0, -1.0, 1.0), 1.0);
    }
}
