use std::sync::Arc;

use proptest::prelude::*;

use contact_pmp::contact::ContactHamiltonian;
use contact_pmp::ocp::models::{DoubleIntegrator, QuadraticCost};
use contact_pmp::ocp::{ControlSet, OcpProblem, OptimalHamiltonian};
use contact_pmp::projcost::{
    best_chart, from_vector, projective_distance, representative, switch_chart, Chart, CostateVector,
    ProjectiveCostate,
};
use contact_pmp::shoot::{psi_k, psi_k_inverse};

fn covector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n + 1).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn scale() -> impl Strategy<Value = f64> {
    prop_oneof![1e-3..1e3f64, -1e3..-1e-3f64]
}

proptest! {
    #[test]
    fn chart_point_ignores_scale(v in covector(3), k in scale()) {
        let a = from_vector(&CostateVector::new(v.clone()).unwrap(), 1e-12).unwrap();
        let b = from_vector(&CostateVector::new(v.iter().map(|x| k * x).collect()).unwrap(), 1e-12).unwrap();
        prop_assert!(projective_distance(&a, &b) <= 1e-12);
    }

    #[test]
    fn representative_has_nonpositive_nu0(v in covector(3)) {
        let pc = from_vector(&CostateVector::new(v.clone()).unwrap(), 1e-12).unwrap();
        let r = representative(&pc);
        prop_assert!(r.nu0() <= 0.0);
        let back = from_vector(&r, 1e-12).unwrap();
        prop_assert!(projective_distance(&pc, &back) <= 1e-12);
    }

    #[test]
    fn switching_charts_round_trips(lambda in prop::collection::vec(-5.0..5.0f64, 3), pivot in 1usize..=3) {
        prop_assume!(lambda[pivot - 1].abs() > 1e-2);
        let pc = ProjectiveCostate::normal(lambda.clone());
        let ab = switch_chart(&pc, Chart::Abnormal(pivot)).unwrap();
        let back = switch_chart(&ab, Chart::Normal).unwrap();
        let scale = lambda.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in back.coords().iter().zip(&lambda) {
            prop_assert!((a - b).abs() <= 1e-14 * scale * scale / lambda[pivot - 1].abs());
        }
        prop_assert!(projective_distance(&pc, &switch_chart(&pc, best_chart(&pc)).unwrap()) <= 1e-14);
    }

    #[test]
    fn optimal_hamiltonian_is_positively_homogeneous(
        xh in prop::collection::vec(-3.0..3.0f64, 3),
        nu in covector(2),
        k in 1e-3..1e3f64,
    ) {
        let p = OcpProblem::new("di", Arc::new(DoubleIntegrator), ControlSet::interval(-1.0, 1.0), vec![0.0, 0.0]);
        let h = OptimalHamiltonian::new(p);
        let base = h.value(&xh, &nu).unwrap();
        let scaled = h.value(&xh, &nu.iter().map(|x| k * x).collect::<Vec<_>>()).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-12 * (1.0 + (k * base).abs()));
    }

    #[test]
    fn psi_round_trips(
        w in prop::collection::vec(0.0..2.0f64, 2),
        c in prop::collection::vec(-1.0..1.0f64, 2),
        y0 in -1.0..1.0f64,
        y in prop::collection::vec(-1.0..1.0f64, 2),
        mu in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let k = QuadraticCost::new(w, Some(c)).unwrap();
        let (x0, x, l) = psi_k(Some(&k), y0, &y, &mu);
        let (b0, b, bm) = psi_k_inverse(Some(&k), x0, &x, &l);
        prop_assert!((b0 - y0).abs() <= 1e-14);
        for (p, q) in b.iter().zip(&y).chain(bm.iter().zip(&mu)) {
            prop_assert!((p - q).abs() <= 1e-14);
        }
    }
}
