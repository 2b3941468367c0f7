use mfg_pi::grid::{
    divergence_form, upwind_advection, SpaceField, SpaceTimeField, SpaceTimeVectorField, TorusGrid,
    VectorField,
};
use mfg_pi::linear_pde::{
    solve_ergodic_fp, solve_ergodic_hjb, solve_fp, solve_hjb_linear, LinearSolver,
};
use mfg_pi::policy_iteration::IterationRow;
use mfg_pi::rates::{contraction_factor, order_fit};
use proptest::prelude::*;

fn field(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn upwind_transport_and_divergence_are_adjoint(
        d in 1usize..=2,
        seed in field(3 * 64, -4.0, 4.0),
    ) {
        let g = TorusGrid::ergodic(d, if d == 1 { 32 } else { 6 }).unwrap();
        let n = g.nodes();
        let q = VectorField::new(g, seed[..n * d].to_vec()).unwrap();
        let u = SpaceField::new(g, seed[n * d..n * d + n].to_vec()).unwrap();
        let m = SpaceField::new(g, seed[n * d + n..n * d + 2 * n].iter().map(|v| v.abs()).collect()).unwrap();
        let lhs = upwind_advection(&q, &u).unwrap().dot(&m);
        let rhs = -u.dot(&divergence_form(&m, &q).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!(divergence_form(&m, &q).unwrap().integral().abs() <= 1e-12);
    }

    #[test]
    fn fp_keeps_mass_and_sign(q in field(24 * 6, -30.0, 30.0), bump in field(24, 0.0, 1.0)) {
        let g = TorusGrid::finite_horizon(1, 24, 6, 0.5).unwrap();
        let q = SpaceTimeVectorField::new(g, q).unwrap();
        let mut m0 = SpaceField::new(g.spatial(), bump).unwrap();
        let mass = m0.integral();
        prop_assume!(mass > 1e-3);
        m0.values_mut().iter_mut().for_each(|v| *v /= mass);
        let (m, _) = solve_fp(&q, &m0, LinearSolver::Direct).unwrap();
        for k in 0..g.nt() {
            let s = m.slice(k);
            prop_assert!((s.integral() - 1.0).abs() <= 1e-12);
            prop_assert!(s.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn hjb_solve_is_order_preserving(
        q in field(16 * 5, -10.0, 10.0),
        f in field(16 * 5, -5.0, 5.0),
        df in field(16 * 5, 0.0, 2.0),
        ut in field(16, -1.0, 1.0),
        dut in field(16, 0.0, 1.0),
    ) {
        let g = TorusGrid::finite_horizon(1, 16, 5, 1.0).unwrap();
        let q = SpaceTimeVectorField::new(g, q).unwrap();
        let f1 = SpaceTimeField::new(g, f.clone()).unwrap();
        let f2 = SpaceTimeField::new(g, f.iter().zip(&df).map(|(a, b)| a + b).collect()).unwrap();
        let u1t = SpaceField::new(g.spatial(), ut.clone()).unwrap();
        let u2t = SpaceField::new(g.spatial(), ut.iter().zip(&dut).map(|(a, b)| a + b).collect()).unwrap();
        let (u1, _) = solve_hjb_linear(&q, &f1, &u1t, LinearSolver::Direct).unwrap();
        let (u2, _) = solve_hjb_linear(&q, &f2, &u2t, LinearSolver::Direct).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn ergodic_constant_is_the_stationary_pairing(q in field(20, -8.0, 8.0), f in field(20, -3.0, 3.0)) {
        let g = TorusGrid::ergodic(1, 20).unwrap();
        let q = VectorField::new(g, q).unwrap();
        let f = SpaceField::new(g, f).unwrap();
        let (sol, _) = solve_ergodic_hjb(&q, &f, LinearSolver::Direct).unwrap();
        let (m, _) = solve_ergodic_fp(&q, LinearSolver::Direct).unwrap();
        prop_assert!((sol.lambda - f.dot(&m)).abs() <= 1e-10);
        prop_assert!(sol.u.integral().abs() <= 1e-12);
    }

    #[test]
    fn order_fit_recovers_exact_power_laws(p in 1.0f64..3.0, c in 0.2f64..2.0, e0 in 1e-3f64..0.3) {
        let mut e = vec![e0];
        while e.len() < 6 {
            let next = c * e.last().unwrap().powf(p);
            if next < 1e-11 || next >= *e.last().unwrap() {
                break;
            }
            e.push(next);
        }
        prop_assume!(e.len() >= 3);
        let fit = order_fit(&e, 1.0).unwrap();
        prop_assert!((fit.order - p).abs() < 1e-6, "{} vs {}", fit.order, p);
    }

    #[test]
    fn contraction_of_geometric_history_is_its_ratio(r in 0.05f64..0.95, len in 6usize..30) {
        let rows: Vec<IterationRow> = (0..len)
            .map(|i| {
                let du = r.powi(i as i32);
                IterationRow { n: i + 1, du_norm: du, dm_norm: 0.0, dq_norm: 0.0, lambda: None, combined: du, ratio: None }
            })
            .collect();
        let usable = rows.iter().filter(|row| row.du_norm > 100.0 * f64::EPSILON).count();
        prop_assume!(usable >= 4);
        let est = contraction_factor(&rows, 1.0).unwrap();
        prop_assert!((est.c_star - r).abs() <= 1e-12);
    }
}
