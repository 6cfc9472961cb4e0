//! Bilevel fixtures: the paper's worked example at (0,1), the degenerate
//! kink fixture at x* = 0, the strictly complementary QP fixture at x* = 1,
//! and a 2-D projection fixture with an active upper constraint.

use optcheck_core::bilevel::{growth_probe, BilevelAnalysis, BilevelProblem, BilevelSecondOrder};
use optcheck_core::linalg;
use optcheck_core::test_util::{degenerate_fixture, paper_example, proj2_fixture, qp_fixture};
use optcheck_core::tol::Tolerances;

fn tols() -> Tolerances {
    Tolerances::default()
}

#[test]
fn multiplier_polytope_paper_example() {
    let bp = paper_example();
    let poly = bp.multiplier_polytope(&tols()).unwrap();
    let mut xs: Vec<Vec<f64>> = poly.vertices.iter().map(|(_, xi)| xi.clone()).collect();
    xs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    assert_eq!(xs.len(), 2);
    assert_eq!(xs[0], vec![0.0, 2.0]);
    assert_eq!(xs[1], vec![2.0, 0.0]);
}

#[test]
fn multiplier_polytope_qp_fixture_unique() {
    let bp = qp_fixture(1.0);
    let poly = bp.multiplier_polytope(&tols()).unwrap();
    assert_eq!(poly.vertices.len(), 1);
    let (mu, xi) = &poly.vertices[0];
    assert!(mu.is_empty());
    assert!((xi[0] - 2.0).abs() < 1e-10);
}

#[test]
fn multiplier_polytope_unconstrained_lower() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    // lower min (y-x)^2 unconstrained, upper min x^2+y^2, at (0,0)
    let f_upper = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![2, 0]), (1.0, vec![0, 2])],
    ));
    let f_lower = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 2]), (-2.0, vec![1, 1]), (1.0, vec![2, 0])],
    ));
    let bp = BilevelProblem::new(
        f_upper,
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        f_lower,
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        vec![0.0],
        vec![0.0],
        &tols(),
    )
    .unwrap();
    let poly = bp.multiplier_polytope(&tols()).unwrap();
    assert_eq!(poly.vertices.len(), 1);
    assert!(poly.vertices[0].0.is_empty() && poly.vertices[0].1.is_empty());
}

#[test]
fn cq_report_paper_example() {
    let bp = paper_example();
    let cq = bp.cq_report(8, 0, &tols()).unwrap();
    assert!(cq.mfcq.holds);
    let w = cq.mfcq.witness.as_ref().unwrap();
    assert!(w[0] < 0.0, "MFCQ witness must strictly decrease both actives");
    assert!(!cq.licq.holds);
    assert_eq!((cq.licq.rank, cq.licq.gradient_count), (1, 2));
    assert!(cq.crcq_probe.consistent_ranks);
    assert!(cq.ssosc.holds);
    assert_eq!(cq.active, vec![0, 1]);
}

#[test]
fn cq_report_qp_fixture_all_hold() {
    let bp = qp_fixture(1.0);
    let cq = bp.cq_report(8, 0, &tols()).unwrap();
    assert!(cq.mfcq.holds && cq.licq.holds && cq.crcq_probe.consistent_ranks && cq.ssosc.holds);
    assert!(cq.a2_a4());
    // strictly complementary vertex: aff C = {0}, positivity vacuous
    assert!(cq.ssosc.margin > 0.0);
}

#[test]
fn licq_fails_for_parallel_gradients() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    // lower min (y-1)^2 s.t. y <= 0, 2y <= 0 at y* = 0
    let f_upper = SmoothFn::from_polynomial(&Polynomial::new(2, vec![(1.0, vec![2, 0])]));
    let f_lower = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 2]), (-2.0, vec![0, 1]), (1.0, vec![0, 0])],
    ));
    let g_lower = SmoothMap::new(vec![
        SmoothFn::from_polynomial(&Polynomial::new(2, vec![(1.0, vec![0, 1])])),
        SmoothFn::from_polynomial(&Polynomial::new(2, vec![(2.0, vec![0, 1])])),
    ])
    .unwrap();
    let bp = BilevelProblem::new(
        f_upper,
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        f_lower,
        g_lower,
        SmoothMap::empty(2),
        vec![0.0],
        vec![0.0],
        &tols(),
    )
    .unwrap();
    let cq = bp.cq_report(4, 0, &tols()).unwrap();
    assert!(!cq.licq.holds);
    assert_eq!(cq.licq.rank, 1);
}

#[test]
fn enumerate_w_examples() {
    let t = tols();
    // strict complementarity: single piece W = [0]
    let bp = qp_fixture(1.0);
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let ws = bp.enumerate_w(&kkt, &t).unwrap();
    assert_eq!(ws, vec![vec![0.0]]);

    // degenerate kink: both branches
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let mut ws = bp.enumerate_w(&kkt, &t).unwrap();
    ws.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    assert_eq!(ws, vec![vec![0.0], vec![1.0]]);
}

#[test]
fn sensitivity_matrices_of_degenerate_fixture() {
    let t = tols();
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();

    let piece0 = bp.assemble_sensitivity(&kkt, &[0.0], &t).unwrap();
    assert_eq!(
        (0..2).map(|i| piece0.a.row(i).to_vec()).collect::<Vec<_>>(),
        vec![vec![2.0, 1.0], vec![1.0, 0.0]]
    );
    assert!((piece0.h.get(0, 0) - 0.0).abs() < 1e-12);
    assert!((piece0.h.get(1, 0) + 2.0).abs() < 1e-12);

    let piece1 = bp.assemble_sensitivity(&kkt, &[1.0], &t).unwrap();
    assert_eq!(
        (0..2).map(|i| piece1.a.row(i).to_vec()).collect::<Vec<_>>(),
        vec![vec![2.0, 1.0], vec![0.0, -1.0]]
    );
    assert!((piece1.h.get(0, 0) + 1.0).abs() < 1e-12);
    assert!((piece1.h.get(1, 0) - 0.0).abs() < 1e-12);

    // QP fixture at x* = 1 shares the W = [0] system
    let bp1 = qp_fixture(1.0);
    let kkt1 = bp1.kkt_vertex(0, &t).unwrap();
    let piece = bp1.assemble_sensitivity(&kkt1, &[0.0], &t).unwrap();
    assert!((piece.h.get(0, 0) - 0.0).abs() < 1e-12);
    assert!((piece.h.get(1, 0) + 2.0).abs() < 1e-12);
}

#[test]
fn solution_map_dd1_degenerate_fixture() {
    let t = tols();
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    for d in [-1.0, -0.3, 0.0, 0.5, 1.0] {
        let triple = bp.solution_map_dd1(&kkt, &[d], &t).unwrap();
        let oracle = d.min(0.0); // y(x) = min(x, 0)
        assert!(
            (triple.y1[0] - oracle).abs() <= 1e-9,
            "d = {d}: y1 = {}, oracle = {oracle}",
            triple.y1[0]
        );
        // boundary direction d = 0 must be accepted by both branches
        if d == 0.0 {
            assert_eq!(triple.accepted.len(), 2);
        } else {
            let expect_w = if d < 0.0 { 1.0 } else { 0.0 };
            assert_eq!(triple.accepted, vec![vec![expect_w]], "d = {d}");
        }
        // xi direction: 2 d_x on the multiplier branch, 0 otherwise
        let xi_oracle = if d > 0.0 { 2.0 * d } else { 0.0 };
        assert!((triple.xi1[0] - xi_oracle).abs() <= 1e-9);
    }
}

#[test]
fn solution_map_dd1_homogeneity() {
    let t = tols();
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    for d in [0.7, -0.4] {
        let base = bp.solution_map_dd1(&kkt, &[d], &t).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let scaled = bp.solution_map_dd1(&kkt, &[s * d], &t).unwrap();
            assert!((scaled.y1[0] - s * base.y1[0]).abs() < 1e-10);
            assert!((scaled.xi1[0] - s * base.xi1[0]).abs() < 1e-10);
        }
    }
}

#[test]
fn solution_map_dd2_degenerate_fixture() {
    let t = tols();
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    // oracle y(x) = min(x, 0): y''(0; d, w) = min-atom second-order formula
    let jet = bp.solution_map_dd2(&kkt, &[1.0], &[0.0], true, &t).unwrap();
    assert!(jet.y2[0].abs() < 1e-9, "{:?}", jet.y2);
    let jet = bp.solution_map_dd2(&kkt, &[0.0], &[1.0], true, &t).unwrap();
    assert!(jet.y2[0].abs() < 1e-9, "{:?}", jet.y2);
    let jet = bp.solution_map_dd2(&kkt, &[0.0], &[-1.0], true, &t).unwrap();
    assert!((jet.y2[0] + 1.0).abs() < 1e-9, "{:?}", jet.y2);
    assert!(!jet.numeric);
}

#[test]
fn solution_map_dd2_smooth_matches_tracking() {
    let t = tols();
    // strictly complementary: y(x) smooth near x* = 1
    let bp = qp_fixture(1.0);
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let jet = bp.solution_map_dd2(&kkt, &[1.0], &[0.5], true, &t).unwrap();
    let (y2_num, err) = bp
        .solution_map_dd2_numeric(&[1.0], &[0.5], &jet.y1, &t)
        .unwrap();
    assert!(
        (jet.y2[0] - y2_num[0]).abs() <= 1e-5_f64.max(10.0 * err),
        "exact {} vs numeric {} (err {err:.2e})",
        jet.y2[0],
        y2_num[0]
    );
}

#[test]
fn kkt_track_paper_example() {
    let t = tols();
    let bp = paper_example();
    let p = bp.kkt_track_best(&[0.5], &t).unwrap();
    assert!((p.y[0] - 0.5).abs() < 1e-9);
    assert!((p.xi[0] - 3.0).abs() < 1e-9);
    assert!(p.xi[1].abs() < 1e-9);

    let p = bp.kkt_track_best(&[-0.5], &t).unwrap();
    assert!((p.y[0] - 0.5).abs() < 1e-9);
    assert!(p.xi[0].abs() < 1e-9);
    assert!((p.xi[1] - 3.0).abs() < 1e-9);
}

#[test]
fn kkt_track_degenerate_fixture() {
    let t = tols();
    let bp = qp_fixture(0.0);
    let p = bp.kkt_track_best(&[-0.3], &t).unwrap();
    assert!((p.y[0] + 0.3).abs() < 1e-9);
    assert!(p.xi[0].abs() < 1e-9);
}

#[test]
fn tracking_matches_dd1_on_exact_fixtures() {
    let t = tols();
    for (bp, dirs) in [
        (qp_fixture(1.0), vec![vec![1.0], vec![-1.0]]),
        (degenerate_fixture(), vec![vec![1.0], vec![-1.0]]),
        (proj2_fixture(), vec![vec![1.0, 0.0], vec![0.0, -1.0], vec![0.6, 0.8]]),
    ] {
        let kkt = bp.kkt_vertex(0, &t).unwrap();
        for d in dirs {
            let exact = bp.solution_map_dd1(&kkt, &d, &t).unwrap();
            let (numeric, err) = bp.solution_map_dd1_numeric(&d, &t).unwrap();
            let dev = linalg::norm_inf(&linalg::sub(&exact.y1, &numeric));
            assert!(dev <= 1e-5_f64.max(10.0 * err), "d = {d:?}: dev {dev:.2e}");
        }
    }
}

#[test]
fn gmfcq_qp_fixture_variants() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    let t = tols();
    // inactive upper constraint: holds vacuously
    let base = qp_fixture(1.0);
    let with_inactive = BilevelProblem::new(
        base.upper_obj.clone(),
        SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
            2,
            vec![(1.0, vec![1, 0]), (-2.0, vec![0, 0])],
        ))])
        .unwrap(),
        SmoothMap::empty(2),
        base.lower_obj.clone(),
        base.lower_ineq.clone(),
        SmoothMap::empty(2),
        vec![1.0],
        vec![0.0],
        &t,
    )
    .unwrap();
    let kkt = with_inactive.kkt_vertex(0, &t).unwrap();
    let rep = with_inactive.gmfcq_check(&kkt, &t).unwrap();
    assert!(rep.holds);

    // active upper G = 1 - x: reduced gradient -1, strict direction d = 1
    let with_active = BilevelProblem::new(
        base.upper_obj.clone(),
        SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
            2,
            vec![(1.0, vec![0, 0]), (-1.0, vec![1, 0])],
        ))])
        .unwrap(),
        SmoothMap::empty(2),
        base.lower_obj.clone(),
        base.lower_ineq.clone(),
        SmoothMap::empty(2),
        vec![1.0],
        vec![0.0],
        &t,
    )
    .unwrap();
    let kkt = with_active.kkt_vertex(0, &t).unwrap();
    let rep = with_active.gmfcq_check(&kkt, &t).unwrap();
    assert!(rep.holds);
    let w = rep.per_w[0].witness.as_ref().unwrap();
    assert!(w[0] > 0.0);
    assert!(rep.per_w.iter().all(|p| p.sp_holds == p.fp_holds));
}

#[test]
fn first_order_exact_fixtures() {
    let t = tols();
    for bp in [qp_fixture(1.0), degenerate_fixture(), proj2_fixture()] {
        let kkt = bp.kkt_vertex(0, &t).unwrap();
        let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
        assert!(analysis.is_exact());
        let rep = analysis.first_order_check(64, 0, &t).unwrap();
        assert!(rep.sp_holds && rep.fp_holds, "{rep:?}");
        assert!(rep.equivalence_enforced);
    }
    // a reference that is not upper-stationary is flagged by both forms:
    // the QP lower problem at the kink with upper min (x-1)² + y²
    let bp = qp_fixture(0.0);
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.first_order_check(64, 0, &t).unwrap();
    assert!(!rep.sp_holds && !rep.fp_holds);
    assert!((rep.sp_min + 2.0).abs() < 1e-9);
    assert!(rep.sp_witness.is_some());
}

#[test]
fn first_order_paper_example_numeric() {
    let t = tols();
    let bp = paper_example();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    assert!(!analysis.is_exact(), "LICQ fails, regime must be numeric");
    // tangent cone is {d_x >= 0}
    assert!(analysis.tangent_member(&[1.0], &t).unwrap());
    assert!(!analysis.tangent_member(&[-1.0], &t).unwrap());
    // F-hat' = 0 on it, so the critical cone is the same half-line
    assert!(analysis.objective_d1(&[1.0], &t).unwrap().abs() < 1e-7);
    assert!(analysis.critical_member(&[1.0], &t).unwrap());
    assert!(!analysis.critical_member(&[-1.0], &t).unwrap());
    let rep = analysis.first_order_check(16, 0, &t).unwrap();
    assert!(rep.sp_holds && rep.fp_holds);
    assert!(!rep.equivalence_enforced);
}

#[test]
fn first_order_unconstrained_descent_fails() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    let t = tols();
    // upper F = x with no upper constraints over the QP lower problem
    let base = qp_fixture(1.0);
    let bp = BilevelProblem::new(
        SmoothFn::from_polynomial(&Polynomial::new(2, vec![(1.0, vec![1, 0])])),
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        base.lower_obj.clone(),
        base.lower_ineq.clone(),
        SmoothMap::empty(2),
        vec![1.0],
        vec![0.0],
        &t,
    )
    .unwrap();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.first_order_check(16, 0, &t).unwrap();
    assert!(!rep.sp_holds && !rep.fp_holds);
    let w = rep.sp_witness.as_ref().unwrap();
    assert!(w[0] < 0.0);

    // dual side must also be infeasible
    let dual = analysis.dual_multipliers(&t).unwrap();
    assert!(!dual.holds);
}

#[test]
fn dual_multipliers_qp_fixture() {
    let t = tols();
    let bp = qp_fixture(1.0);
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.dual_multipliers(&t).unwrap();
    assert!(rep.holds);
    assert_eq!(rep.per_w.len(), 1);
    let per = &rep.per_w[0];
    assert!(per.sp_feasible && per.fp_feasible);
    assert!(per.residual < 1e-9);
    let (lh, lg) = per.sp_lambda.as_ref().unwrap();
    assert!(lh.is_empty() && lg.is_empty());
}

#[test]
fn dual_multipliers_active_constraint() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    let t = tols();
    // active upper G = 1 - x at x* = 1; gradient of F already vanishes so
    // lambda_G = 0 closes the system
    let base = qp_fixture(1.0);
    let bp = BilevelProblem::new(
        base.upper_obj.clone(),
        SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
            2,
            vec![(1.0, vec![0, 0]), (-1.0, vec![1, 0])],
        ))])
        .unwrap(),
        SmoothMap::empty(2),
        base.lower_obj.clone(),
        base.lower_ineq.clone(),
        SmoothMap::empty(2),
        vec![1.0],
        vec![0.0],
        &t,
    )
    .unwrap();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.dual_multipliers(&t).unwrap();
    assert!(rep.holds);
    let (_, lg) = rep.per_w[0].sp_lambda.as_ref().unwrap();
    assert!(lg[0].abs() < 1e-9);
}

#[test]
fn second_order_paper_example_margin_four() {
    let t = tols();
    let bp = paper_example();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.second_order_check(16, 0, &t).unwrap();
    assert!(!rep.exact);
    assert_eq!(rep.verdict, BilevelSecondOrder::CertifiedPositive);
    assert!((rep.margin - 4.0).abs() < 1e-6, "margin {}", rep.margin);
}

#[test]
fn second_order_qp_fixture_margin_two() {
    let t = tols();
    let bp = qp_fixture(1.0);
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.second_order_check(16, 0, &t).unwrap();
    assert!(rep.exact);
    assert_eq!(rep.verdict, BilevelSecondOrder::CertifiedPositive);
    assert!((rep.margin - 2.0).abs() < 1e-8, "margin {}", rep.margin);
    // SP and FP inner values agree on every tested direction
    for out in &rep.per_direction {
        let fp = out.fp_value.unwrap();
        assert!((out.sp_value - fp).abs() <= 1e-7 * (1.0 + fp.abs()));
    }
}

#[test]
fn second_order_degenerate_fixture_margin_two() {
    let t = tols();
    // upper min x² + y² over the kink: F-hat'' = 2d² + 2 min(d,0)², so the
    // d = +1 branch gives the margin 2 and d = -1 gives 4
    let bp = degenerate_fixture();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.second_order_check(16, 0, &t).unwrap();
    assert!(rep.exact);
    assert_eq!(rep.verdict, BilevelSecondOrder::CertifiedPositive);
    assert!((rep.margin - 2.0).abs() < 1e-8, "margin {}", rep.margin);
    let worst = rep
        .per_direction
        .iter()
        .min_by(|a, b| a.sp_value.partial_cmp(&b.sp_value).unwrap())
        .unwrap();
    assert!(worst.d_x[0] > 0.0);
    assert!(rep
        .per_direction
        .iter()
        .any(|o| o.d_x[0] < 0.0 && (o.sp_value - 4.0).abs() < 1e-8));
}

#[test]
fn second_order_flat_upper_degenerate() {
    use optcheck_core::bilevel::{SmoothFn, SmoothMap};
    use optcheck_core::expr::Polynomial;
    let t = tols();
    let base = qp_fixture(1.0);
    let bp = BilevelProblem::new(
        SmoothFn::from_polynomial(&Polynomial::new(2, vec![])),
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        base.lower_obj.clone(),
        base.lower_ineq.clone(),
        SmoothMap::empty(2),
        vec![1.0],
        vec![0.0],
        &t,
    )
    .unwrap();
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    let rep = analysis.second_order_check(16, 0, &t).unwrap();
    assert_eq!(rep.verdict, BilevelSecondOrder::DegenerateZero);
    assert!(rep.margin.abs() < 1e-9);
}

#[test]
fn growth_probe_fixtures() {
    let t = tols();
    let bp = paper_example();
    let rep = growth_probe(&bp, 0.2, 48, 0, &t).unwrap();
    assert!(rep.gamma_hat >= 1.0, "{rep:?}");
    assert!(rep.violations.is_empty());
    assert!(rep.feasible_count > 0);

    let bp = qp_fixture(1.0);
    let rep = growth_probe(&bp, 0.3, 48, 0, &t).unwrap();
    assert!(rep.gamma_hat >= 0.9 && rep.gamma_hat <= 1.1, "{rep:?}");
}

#[test]
fn sp_fp_equivalence_suite() {
    // criterion-4 style: verdicts, dual feasibility, critical-cone
    // membership and inner values agree between forms on A2+A4 fixtures
    let t = tols();
    for bp in [qp_fixture(1.0), degenerate_fixture(), proj2_fixture()] {
        let kkt = bp.kkt_vertex(0, &t).unwrap();
        let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
        assert!(analysis.is_exact());
        let first = analysis.first_order_check(64, 3, &t).unwrap();
        assert_eq!(first.sp_holds, first.fp_holds);
        assert!((first.sp_min - first.fp_min).abs() <= 1e-7 * (1.0 + first.sp_min.abs()));
        let dual = analysis.dual_multipliers(&t).unwrap();
        for per in &dual.per_w {
            assert_eq!(per.sp_feasible, per.fp_feasible);
        }
        let second = analysis.second_order_check(32, 3, &t).unwrap();
        for out in &second.per_direction {
            let fp = out.fp_value.unwrap();
            if out.sp_value.is_finite() {
                assert!((out.sp_value - fp).abs() <= 1e-7 * (1.0 + fp.abs()));
            }
        }
    }
}
