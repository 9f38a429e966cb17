//! Projective costates.
//!
//! A costate is a line through the origin of `R^{n+1}`, i.e. a point of the
//! projective space `P(R^{n+1})`. Points are stored in one chart of an explicit
//! atlas:
//!
//! * `Normal`: the class `[(-1, λ)]`, valid wherever `ν₀ ≠ 0`;
//! * `Abnormal(a)`: the class `[(ρ, α)]` with `α_a = 1`, valid wherever
//!   `ν_a ≠ 0`. Genuinely abnormal costates have `ρ = 0`; a nonzero `ρ` only
//!   appears after an explicit chart switch of a normal point.
//!
//! Representatives follow the sign convention `ν₀ ≤ 0`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative threshold separating normal from abnormal costates.
pub const DEFAULT_EPS0: f64 = 1e-9;

/// Entries at or below this magnitude count as zero when testing `ν̂ ≠ 0`.
pub const ZERO_COSTATE_TOL: f64 = 1e-300;

/// A nonzero, finite covector `ν̂ = (ν₀, ν₁, …, ν_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateVector(Vec<f64>);

impl CostateVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidInput(
                "a costate vector needs at least two entries".into(),
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "costate vector has non-finite entries: {entries:?}"
            )));
        }
        if entries.iter().all(|v| v.abs() <= ZERO_COSTATE_TOL) {
            return Err(Error::ZeroCostate {
                tolerance: ZERO_COSTATE_TOL,
            });
        }
        Ok(Self(entries))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn nu0(&self) -> f64 {
        self.0[0]
    }

    /// The spatial part `ν = (ν₁, …, ν_n)`.
    pub fn spatial(&self) -> &[f64] {
        &self.0[1..]
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }
}

/// Chart tag. Abnormal pivots are 1-based, matching the coordinate labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    Normal,
    Abnormal(usize),
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Chart::Normal => write!(f, "normal"),
            Chart::Abnormal(a) => write!(f, "abnormal({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCostate", into = "RawCostate")]
pub enum ProjectiveCostate {
    Normal {
        lambda: Vec<f64>,
    },
    Abnormal {
        pivot: usize,
        alpha: Vec<f64>,
        /// `ν₀ / ν_a`; zero for abnormal points.
        nu0_ratio: f64,
    },
}

impl ProjectiveCostate {
    pub fn normal(lambda: Vec<f64>) -> Self {
        ProjectiveCostate::Normal { lambda }
    }

    /// Abnormal chart point `[(0, α)]`. `alpha` is rescaled so that
    /// `α_pivot = 1` exactly.
    pub fn abnormal(pivot: usize, alpha: Vec<f64>) -> Result<Self> {
        Self::pivot_chart(pivot, alpha, 0.0)
    }

    fn pivot_chart(pivot: usize, mut alpha: Vec<f64>, nu0: f64) -> Result<Self> {
        if pivot == 0 || pivot > alpha.len() {
            return Err(Error::InvalidInput(format!(
                "pivot {pivot} out of range 1..={}",
                alpha.len()
            )));
        }
        let scale = alpha[pivot - 1];
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::singular(
                Chart::Abnormal(pivot).to_string(),
                "pivot entry is zero",
            ));
        }
        for v in alpha.iter_mut() {
            *v /= scale;
        }
        alpha[pivot - 1] = 1.0;
        Ok(ProjectiveCostate::Abnormal {
            pivot,
            alpha,
            nu0_ratio: nu0 / scale,
        })
    }

    pub fn chart(&self) -> Chart {
        match self {
            ProjectiveCostate::Normal { .. } => Chart::Normal,
            ProjectiveCostate::Abnormal { pivot, .. } => Chart::Abnormal(*pivot),
        }
    }

    /// Chart coordinates `λ` or `α` (n entries).
    pub fn coords(&self) -> &[f64] {
        match self {
            ProjectiveCostate::Normal { lambda } => lambda,
            ProjectiveCostate::Abnormal { alpha, .. } => alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords().len()
    }

    /// True iff the represented line lies in `{ν₀ = 0}`.
    pub fn is_abnormal(&self) -> bool {
        matches!(self, ProjectiveCostate::Abnormal { nu0_ratio, .. } if *nu0_ratio == 0.0)
    }

    /// Largest coordinate magnitude, used to decide when a chart is
    /// becoming ill conditioned.
    pub fn coordinate_magnitude(&self) -> f64 {
        let base = self.coords().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        match self {
            ProjectiveCostate::Normal { .. } => base,
            ProjectiveCostate::Abnormal { nu0_ratio, .. } => base.max(nu0_ratio.abs()),
        }
    }
}

/// Classifies a covector into a chart.
///
/// `|ν₀| > eps0 · max_i |ν_i|` selects the normal chart with `λ = −ν/ν₀`;
/// otherwise the abnormal chart with the largest-magnitude pivot (smallest
/// index on ties) and `α = ν/ν_a`. Inside the band the `ν₀` component is
/// treated as exactly zero.
pub fn from_vector(nu: &CostateVector, eps0: f64) -> Result<ProjectiveCostate> {
    if eps0.is_nan() || eps0 <= 0.0 {
        return Err(Error::InvalidInput("eps0 must be positive".into()));
    }
    let v = nu.as_slice();
    if v.iter().all(|x| x.abs() <= ZERO_COSTATE_TOL) {
        return Err(Error::ZeroCostate {
            tolerance: ZERO_COSTATE_TOL,
        });
    }
    let nu0 = v[0];
    let spatial = &v[1..];
    let (pivot, big) = spatial
        .iter()
        .enumerate()
        .fold((0usize, 0.0_f64), |(bi, bv), (i, x)| {
            if x.abs() > bv {
                (i, x.abs())
            } else {
                (bi, bv)
            }
        });
    if nu0.abs() > eps0 * big {
        let lambda = spatial.iter().map(|x| -x / nu0).collect();
        Ok(ProjectiveCostate::Normal { lambda })
    } else {
        ProjectiveCostate::abnormal(pivot + 1, spatial.to_vec())
    }
}

/// The representative `(−1, λ)` or `(0, α)` of a chart point; always has
/// `ν₀ ≤ 0`.
pub fn representative(pc: &ProjectiveCostate) -> CostateVector {
    let mut out = Vec::with_capacity(pc.dim() + 1);
    match pc {
        ProjectiveCostate::Normal { lambda } => {
            out.push(-1.0);
            out.extend_from_slice(lambda);
        }
        ProjectiveCostate::Abnormal {
            alpha, nu0_ratio, ..
        } => {
            let sign = if *nu0_ratio > 0.0 { -1.0 } else { 1.0 };
            out.push(sign * nu0_ratio);
            out.extend(alpha.iter().map(|a| sign * a));
        }
    }
    CostateVector(out)
}

/// Distance between two projective points: `min ‖û ∓ v̂‖` over normalized
/// representatives. Zero iff the points coincide.
pub fn projective_distance(p: &ProjectiveCostate, q: &ProjectiveCostate) -> f64 {
    if p.dim() != q.dim() {
        return f64::INFINITY;
    }
    let u = normalized(representative(p).as_slice());
    let v = normalized(representative(q).as_slice());
    let minus = u
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let plus = u
        .iter()
        .zip(&v)
        .map(|(a, b)| (a + b) * (a + b))
        .sum::<f64>()
        .sqrt();
    minus.min(plus)
}

pub fn projectively_equal(p: &ProjectiveCostate, q: &ProjectiveCostate, tol: f64) -> bool {
    projective_distance(p, q) <= tol
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Re-expresses a point in another chart.
pub fn switch_chart(pc: &ProjectiveCostate, target: Chart) -> Result<ProjectiveCostate> {
    if pc.chart() == target {
        return Ok(pc.clone());
    }
    let r = match pc {
        ProjectiveCostate::Normal { lambda } => {
            let mut r = vec![-1.0];
            r.extend_from_slice(lambda);
            r
        }
        ProjectiveCostate::Abnormal {
            alpha, nu0_ratio, ..
        } => {
            let mut r = vec![*nu0_ratio];
            r.extend_from_slice(alpha);
            r
        }
    };
    match target {
        Chart::Normal => {
            if r[0] == 0.0 {
                return Err(Error::singular(
                    "normal",
                    "ν₀ = 0: abnormal points are the singularity of the normal chart",
                ));
            }
            let lambda = r[1..].iter().map(|x| -x / r[0]).collect();
            Ok(ProjectiveCostate::Normal { lambda })
        }
        Chart::Abnormal(a) => {
            if a == 0 || a > pc.dim() {
                return Err(Error::InvalidInput(format!(
                    "pivot {a} out of range 1..={}",
                    pc.dim()
                )));
            }
            if r[a] == 0.0 {
                return Err(Error::singular(
                    target.to_string(),
                    format!("ν_{a} = 0 at this point"),
                ));
            }
            ProjectiveCostate::pivot_chart(a, r[1..].to_vec(), r[0])
        }
    }
}

/// The chart whose pivot entry of the representative has the largest
/// magnitude (normal preferred on ties).
pub fn best_chart(pc: &ProjectiveCostate) -> Chart {
    let r = representative(pc);
    let mut best = 0usize;
    let mut big = r.as_slice()[0].abs();
    for (i, v) in r.as_slice().iter().enumerate().skip(1) {
        if v.abs() > big {
            best = i;
            big = v.abs();
        }
    }
    if best == 0 {
        Chart::Normal
    } else {
        Chart::Abnormal(best)
    }
}

/// Whether `ŵ` lies in the hyperplane `ker ν̂`.
pub fn hyperplane_contains(pc: &ProjectiveCostate, w: &[f64], tol: f64) -> bool {
    let r = representative(pc);
    let r = r.as_slice();
    if r.len() != w.len() {
        return false;
    }
    let dot: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
    let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot.abs() <= tol * nr * nw
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "chart", rename_all = "lowercase")]
enum RawCostate {
    Normal {
        lambda: Vec<f64>,
    },
    Abnormal {
        pivot: usize,
        alpha: Vec<f64>,
        #[serde(default, skip_serializing_if = "is_zero")]
        nu0_ratio: f64,
    },
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl TryFrom<RawCostate> for ProjectiveCostate {
    type Error = Error;

    fn try_from(raw: RawCostate) -> Result<Self> {
        match raw {
            RawCostate::Normal { lambda } => Ok(ProjectiveCostate::Normal { lambda }),
            RawCostate::Abnormal {
                pivot,
                alpha,
                nu0_ratio,
            } => {
                if pivot == 0 || pivot > alpha.len() {
                    return Err(Error::InvalidInput(format!("pivot {pivot} out of range")));
                }
                if alpha[pivot - 1] != 1.0 {
                    return Err(Error::InvalidInput(
                        "abnormal coordinates must satisfy alpha[pivot] = 1".into(),
                    ));
                }
                Ok(ProjectiveCostate::Abnormal {
                    pivot,
                    alpha,
                    nu0_ratio,
                })
            }
        }
    }
}

impl From<ProjectiveCostate> for RawCostate {
    fn from(pc: ProjectiveCostate) -> Self {
        match pc {
            ProjectiveCostate::Normal { lambda } => RawCostate::Normal { lambda },
            ProjectiveCostate::Abnormal {
                pivot,
                alpha,
                nu0_ratio,
            } => RawCostate::Abnormal {
                pivot,
                alpha,
                nu0_ratio,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cv(v: &[f64]) -> CostateVector {
        CostateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normal_from_vector() {
        let pc = from_vector(&cv(&[-2.0, 4.0, 6.0]), 1e-12).unwrap();
        assert_eq!(pc, ProjectiveCostate::normal(vec![2.0, 3.0]));
    }

    #[test]
    fn abnormal_from_vector() {
        let pc = from_vector(&cv(&[0.0, 3.0, -3.0]), 1e-12).unwrap();
        assert_eq!(pc.chart(), Chart::Abnormal(1));
        assert_eq!(pc.coords(), &[1.0, -1.0]);
        assert!(pc.is_abnormal());
    }

    #[test]
    fn zero_costate_rejected() {
        assert!(matches!(
            CostateVector::new(vec![0.0, 0.0, 0.0]),
            Err(Error::ZeroCostate { .. })
        ));
    }

    #[test]
    fn representatives_follow_sign_convention() {
        let r = representative(&ProjectiveCostate::normal(vec![2.0, 3.0]));
        assert_eq!(r.as_slice(), &[-1.0, 2.0, 3.0]);
        let a = ProjectiveCostate::abnormal(1, vec![1.0, -1.0]).unwrap();
        assert_eq!(representative(&a).as_slice(), &[0.0, 1.0, -1.0]);
        let z = representative(&ProjectiveCostate::normal(vec![0.0, 0.0]));
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn projective_equality_examples() {
        let p = ProjectiveCostate::normal(vec![2.0, 3.0]);
        let q = from_vector(&cv(&[2.0, -4.0, -6.0]), 1e-12).unwrap();
        assert!(projectively_equal(&p, &q, 1e-12));
        let r = ProjectiveCostate::normal(vec![2.0, 3.1]);
        assert!(!projectively_equal(&p, &r, 1e-9));
        let a = ProjectiveCostate::abnormal(1, vec![1.0, -1.0]).unwrap();
        let b = from_vector(&cv(&[0.0, -5.0, 5.0]), 1e-12).unwrap();
        assert!(projectively_equal(&a, &b, 1e-12));
    }

    #[test]
    fn switch_normal_to_abnormal_pivot() {
        let p = ProjectiveCostate::normal(vec![2.0, 3.0]);
        let q = switch_chart(&p, Chart::Abnormal(1)).unwrap();
        assert_eq!(representative(&q).as_slice(), &[-0.5, 1.0, 1.5]);
        assert!(projectively_equal(&p, &q, 1e-15));
        assert!(!q.is_abnormal());
    }

    #[test]
    fn switch_chart_singularities() {
        let a = ProjectiveCostate::abnormal(1, vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            switch_chart(&a, Chart::Normal),
            Err(Error::ChartSingularity { .. })
        ));
        let p = ProjectiveCostate::normal(vec![0.0, 5.0]);
        assert!(matches!(
            switch_chart(&p, Chart::Abnormal(1)),
            Err(Error::ChartSingularity { .. })
        ));
    }

    #[test]
    fn hyperplane_examples() {
        let p = ProjectiveCostate::normal(vec![2.0, 3.0]);
        assert!(hyperplane_contains(&p, &[2.0, 1.0, 0.0], 1e-12));
        let z = ProjectiveCostate::normal(vec![0.0, 0.0]);
        assert!(!hyperplane_contains(&z, &[1.0, 0.0, 0.0], 1e-12));
        assert!(hyperplane_contains(&p, &[0.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn best_chart_prefers_dominant_entry() {
        assert_eq!(
            best_chart(&ProjectiveCostate::normal(vec![0.5, -0.2])),
            Chart::Normal
        );
        assert_eq!(
            best_chart(&ProjectiveCostate::normal(vec![0.5, -7.0])),
            Chart::Abnormal(2)
        );
    }

    #[test]
    fn serialization_is_tagged() {
        let p = ProjectiveCostate::normal(vec![2.0, 3.0]);
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"chart":"normal","lambda":[2.0,3.0]}"#
        );
        let a = ProjectiveCostate::abnormal(2, vec![-1.0, 1.0]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"chart":"abnormal","pivot":2,"alpha":[-1.0,1.0]}"#);
        let back: ProjectiveCostate = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
        let bad = r#"{"chart":"abnormal","pivot":1,"alpha":[2.0,1.0]}"#;
        assert!(serde_json::from_str::<ProjectiveCostate>(bad).is_err());
    }

    fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, n + 1)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn scaling_preserves_projective_class(
            v in nonzero_vec(3),
            k in prop_oneof![-100.0..-1e-3f64, 1e-3..100.0f64],
        ) {
            let a = from_vector(&cv(&v), DEFAULT_EPS0).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
            let b = from_vector(&cv(&scaled), DEFAULT_EPS0).unwrap();
            prop_assert!(projectively_equal(&a, &b, 1e-12));
        }

        #[test]
        fn representative_has_nonpositive_nu0(v in nonzero_vec(3), a in 1usize..=3) {
            let pc = from_vector(&cv(&v), DEFAULT_EPS0).unwrap();
            prop_assert!(representative(&pc).nu0() <= 0.0);
            if let Ok(q) = switch_chart(&pc, Chart::Abnormal(a)) {
                prop_assert!(representative(&q).nu0() <= 0.0);
            }
        }

        #[test]
        fn chart_round_trip(lambda in proptest::collection::vec(-10.0..10.0f64, 3), a in 1usize..=3) {
            prop_assume!(lambda[a - 1].abs() > 1e-3);
            let p = ProjectiveCostate::normal(lambda.clone());
            let q = switch_chart(&p, Chart::Abnormal(a)).unwrap();
            let back = switch_chart(&q, Chart::Normal).unwrap();
            for (x, y) in back.coords().iter().zip(&lambda) {
                prop_assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
            }
        }

        #[test]
        fn hyperplane_membership_scale_invariant(
            v in nonzero_vec(2),
            w in proptest::collection::vec(-5.0..5.0f64, 3),
            k in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64],
        ) {
            let a = from_vector(&cv(&v), DEFAULT_EPS0).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
            let b = from_vector(&cv(&scaled), DEFAULT_EPS0).unwrap();
            // project w onto ker ν̂ half the time so both outcomes are exercised
            let dot: f64 = v.iter().zip(&w).map(|(p, q)| p * q).sum();
            let nn: f64 = v.iter().map(|p| p * p).sum();
            let in_plane: Vec<f64> = w.iter().zip(&v).map(|(q, p)| q - dot / nn * p).collect();
            for probe in [&w, &in_plane] {
                prop_assert_eq!(
                    hyperplane_contains(&a, probe, 1e-9),
                    hyperplane_contains(&b, probe, 1e-9)
                );
            }
        }
    }
}
