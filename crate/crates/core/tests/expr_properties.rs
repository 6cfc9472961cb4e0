//! Property suite for the directional-derivative calculus: difference
//! quotients, homogeneity, Lipschitz continuity in the parabolic argument,
//! and exact parabolic expansions for piecewise-C² DAGs.

use proptest::prelude::*;

use optcheck_core::expr::{
    regularity_probe, PathFamily, ProbeMode, ProbePath, ProbeVerdict,
};
use optcheck_core::linalg;
use optcheck_core::test_util::{dd1_quotient_oracle, dd2_quotient_oracle, random_dag};
use optcheck_core::tol::Tolerances;

fn tols() -> Tolerances {
    Tolerances::default()
}

#[test]
fn quotients_match_on_seeded_dags() {
    let t = tols();
    let mut checked = 0;
    for seed in 0..200u64 {
        let n = 2 + (seed % 3) as usize;
        let expr = random_dag(n, seed, false);
        // A quotient oracle is only valid where its grid does not straddle
        // a kink; shift the probe point deterministically until the
        // extrapolation itself converges.
        let mut done = false;
        for shift in 0..8u64 {
            let o = (shift as f64) * 0.11;
            let x: Vec<f64> =
                (0..n).map(|i| ((seed as f64 * 0.37 + o + i as f64) % 1.7) - 0.8).collect();
            let d: Vec<f64> =
                (0..n).map(|i| (((seed + 13) as f64 * 0.53 + o + i as f64) % 1.3) - 0.6).collect();
            let w: Vec<f64> =
                (0..n).map(|i| (((seed + 7) as f64 * 0.71 + o + i as f64) % 1.9) - 1.0).collect();
            let d1 = expr.dd1(&x, &d, &t).unwrap();
            let (oracle1, err1) = dd1_quotient_oracle(&expr, &x, &d);
            let scale1 = 1.0 + linalg::norm_inf(&d1);
            if err1 > 1e-6 * scale1 {
                continue;
            }
            let dev1 = linalg::norm_inf(&linalg::sub(&d1, &oracle1));
            assert!(
                dev1 <= 1e-4 * scale1,
                "seed {seed}: dd1 {d1:?} vs quotient {oracle1:?} (err {err1:.2e})"
            );
            let d2 = expr.dd2(&x, &d, &w, &t).unwrap();
            let (oracle2, err2) = dd2_quotient_oracle(&expr, &x, &d, &w);
            let scale2 = 1.0 + linalg::norm_inf(&d2);
            if err2 > 1e-5 * scale2 {
                continue;
            }
            let dev2 = linalg::norm_inf(&linalg::sub(&d2, &oracle2));
            assert!(
                dev2 <= 1e-4 * scale2,
                "seed {seed}: dd2 {d2:?} vs quotient {oracle2:?} (err {err2:.2e})"
            );
            done = true;
            break;
        }
        assert!(done, "seed {seed}: no convergent probe point found");
        checked += 1;
    }
    assert_eq!(checked, 200);
}

#[test]
fn positive_homogeneity_on_seeded_dags() {
    let t = tols();
    for seed in 0..60u64 {
        let n = 2 + (seed % 3) as usize;
        let expr = random_dag(n, seed, false);
        let x: Vec<f64> = (0..n).map(|i| ((seed as f64 * 0.41 + i as f64) % 1.3) - 0.6).collect();
        let d: Vec<f64> = (0..n).map(|i| (((seed + 3) as f64 * 0.59 + i as f64) % 1.1) - 0.5).collect();
        let w: Vec<f64> = (0..n).map(|i| (((seed + 9) as f64 * 0.67 + i as f64) % 1.7) - 0.9).collect();
        let d1 = expr.dd1(&x, &d, &t).unwrap();
        let d2 = expr.dd2(&x, &d, &w, &t).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let d1s = expr.dd1(&x, &linalg::scale(&d, s), &t).unwrap();
            let dev = linalg::norm_inf(&linalg::sub(&d1s, &linalg::scale(&d1, s)));
            assert!(dev <= 1e-9 * (1.0 + s * linalg::norm_inf(&d1)), "seed {seed} s {s}");
            let d2s = expr
                .dd2(&x, &linalg::scale(&d, s), &linalg::scale(&w, s * s), &t)
                .unwrap();
            let dev = linalg::norm_inf(&linalg::sub(&d2s, &linalg::scale(&d2, s * s)));
            assert!(dev <= 1e-9 * (1.0 + s * s * linalg::norm_inf(&d2)), "seed {seed} s {s}");
        }
    }
}

#[test]
fn pc2_dags_have_exact_zero_gph_residual() {
    let t = tols();
    let mut nonzero = 0;
    for seed in 0..60u64 {
        let n = 2 + (seed % 3) as usize;
        let expr = random_dag(n, seed, true);
        // probe at a kink-rich point (origin) with a constant dyadic path
        let x = vec![0.0; n];
        let mut d = vec![0.0; n];
        d[0] = 1.0;
        let mut w = vec![0.0; n];
        w[(seed % n as u64) as usize] = 0.5;
        let path = ProbePath { family: PathFamily::ConstantW, base: Some(w), seed };
        let rep = regularity_probe(&expr, &x, &d, &path, ProbeMode::Gph, &t).unwrap();
        assert_eq!(rep.verdict, ProbeVerdict::Consistent, "seed {seed}");
        // piecewise-C² with polynomial pieces of degree <= 2 would be exact;
        // higher-degree pieces still vanish at the tail of the grid
        let tail = rep.residual_over_t2[rep.residual_over_t2.len() - 4..].to_vec();
        for v in &tail {
            if *v != 0.0 {
                nonzero += 1;
                assert!(*v < 1e-6, "seed {seed}: tail residual {v}");
                break;
            }
        }
    }
    // most PC² probes must cancel exactly in floating point
    assert!(nonzero <= 20, "{nonzero} seeds had nonzero tails");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Lipschitz continuity of dd2 in the parabolic argument.
    #[test]
    fn dd2_lipschitz_in_w(
        seed in 0u64..40,
        wa in proptest::collection::vec(-2.0f64..2.0, 3),
        wb in proptest::collection::vec(-2.0f64..2.0, 3),
    ) {
        let t = tols();
        let expr = random_dag(3, seed, false);
        let x = vec![0.1, -0.2, 0.05];
        let d = vec![0.4, 0.3, -0.7];
        let a = expr.dd2(&x, &d, &wa, &t).unwrap();
        let b = expr.dd2(&x, &d, &wb, &t).unwrap();
        // crude per-DAG modulus from unit probes
        let mut modulus = 0.0f64;
        for i in 0..3 {
            let mut e = vec![0.0; 3];
            e[i] = 1.0;
            let zero = vec![0.0; 3];
            let del = linalg::sub(
                &expr.dd2(&x, &d, &e, &t).unwrap(),
                &expr.dd2(&x, &d, &zero, &t).unwrap(),
            );
            modulus = modulus.max(linalg::norm2(&del));
        }
        let lhs = linalg::norm2(&linalg::sub(&a, &b));
        let rhs = 3.0 * (modulus + 1.0) * linalg::norm2(&linalg::sub(&wa, &wb));
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    /// dd1 of a min DAG equals the min over active-branch dd1 values.
    #[test]
    fn min_dd1_is_hadamard_stable(
        dx in -1.0f64..1.0,
        dy in -1.0f64..1.0,
        eps in 1e-7f64..1e-4,
    ) {
        use optcheck_core::expr::ExprBuilder;
        let t = tols();
        let mut b = ExprBuilder::new(2);
        let x = b.input();
        let m = b.min(vec![x]);
        let e = b.finish(m).unwrap();
        // Hadamard: perturbing the direction perturbs dd1 by at most the
        // Lipschitz modulus (1 for min of coordinates)
        let d = [dx, dy];
        let d_pert = [dx + eps, dy - eps];
        let a = e.dd1(&[0.0, 0.0], &d, &t).unwrap()[0];
        let bb = e.dd1(&[0.0, 0.0], &d_pert, &t).unwrap()[0];
        prop_assert!((a - bb).abs() <= 2.0 * eps + 1e-12);
    }
}
