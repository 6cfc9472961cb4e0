//! Acceptance suite: every release criterion as one test, each printing a
//! single pass line (visible with `--nocapture`). Tolerances are pinned in
//! code; fixtures load from the workspace `fixtures/` directory.

use std::path::PathBuf;
use std::time::Instant;

use optcheck_cli::{commands, parse_problem, Command, Form, Instance, Mode, RunOptions};
use optcheck_core::bilevel::{growth_probe, BilevelAnalysis, BilevelProblem};
use optcheck_core::cones::{definitional_residuals, Factor, HForm, PolyhedralSet};
use optcheck_core::expr::{regularity_probe, PathFamily, ProbeMode, ProbePath, ProbeVerdict};
use optcheck_core::linalg::{self, DenseMatrix};
use optcheck_core::lp::{self, Certificate, LpStatus};
use optcheck_core::nsopt::SweepVerdict;
use optcheck_core::sampling;
use optcheck_core::test_util::{dd1_quotient_oracle, dd2_quotient_oracle, random_dag};
use optcheck_core::tol::Tolerances;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn tols() -> Tolerances {
    Tolerances::default()
}

fn load_bilevel(name: &str) -> (optcheck_cli::LoadedProblem, BilevelProblem) {
    let loaded = parse_problem(&fixture(name)).expect("fixture parses");
    let bp = match &loaded.instance {
        Instance::Bilevel(bp) => bp.clone(),
        _ => panic!("{name} is not bilevel"),
    };
    (loaded, bp)
}

#[test]
fn criterion_1_paper_example_end_to_end() {
    let start = Instant::now();
    let t = tols();
    let (loaded, bp) = load_bilevel("paper_example.json");

    // multiplier vertices exactly {(0,2), (2,0)}
    let poly = bp.multiplier_polytope(&t).unwrap();
    let mut xi: Vec<Vec<f64>> = poly.vertices.iter().map(|(_, xi)| xi.clone()).collect();
    xi.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    assert_eq!(xi, vec![vec![0.0, 2.0], vec![2.0, 0.0]]);

    // CQ flags: MFCQ, CRCQ probe, SSOSC hold; LICQ fails
    let cq = bp.cq_report(8, 0, &t).unwrap();
    assert!(cq.mfcq.holds && cq.crcq_probe.consistent_ranks && cq.ssosc.holds);
    assert!(!cq.licq.holds);

    // tangent cone and critical cone are {d_x >= 0}
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let analysis = BilevelAnalysis::new(&bp, kkt, &t).unwrap();
    assert!(analysis.tangent_member(&[1.0], &t).unwrap());
    assert!(!analysis.tangent_member(&[-1.0], &t).unwrap());
    assert!(analysis.critical_member(&[1.0], &t).unwrap());
    assert!(!analysis.critical_member(&[-1.0], &t).unwrap());

    // second-order sufficient margin 4 ± 1e-6 on the unit direction
    let second = analysis.second_order_check(16, 0, &t).unwrap();
    assert!((second.margin - 4.0).abs() <= 1e-6, "margin {}", second.margin);

    // end-to-end CLI verdict
    let report = commands::run(
        &loaded,
        &Command::BilevelSecond { form: Form::Both, mode: Mode::Sufficient },
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(report.exit_code, 0);
    assert!(report.checks.iter().any(|c| c.verdict.contains("strict bi-local minimizer")));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1: PASS - paper example reproduced (margin {:.9}, {:?})",
        second.margin, elapsed
    );
}

#[test]
fn criterion_2_sensitivity_exactness_degenerate_fixture() {
    let t = tols();
    let (_, bp) = load_bilevel("degenerate_fixture.json");
    let kkt = bp.kkt_vertex(0, &t).unwrap();

    // both W pieces invert
    let p0 = bp.assemble_sensitivity(&kkt, &[0.0], &t).unwrap();
    let p1 = bp.assemble_sensitivity(&kkt, &[1.0], &t).unwrap();
    assert!((p0.h.get(1, 0) + 2.0).abs() < 1e-12);
    assert!((p1.h.get(0, 0) + 1.0).abs() < 1e-12);

    let mut max_err = 0.0f64;
    for d in [-1.0, -0.3, 0.0, 0.5, 1.0] {
        let triple = bp.solution_map_dd1(&kkt, &[d], &t).unwrap();
        let oracle = d.min(0.0); // y(x) = min(x, 0)
        max_err = max_err.max((triple.y1[0] - oracle).abs());
        // acceptance selects exactly the oracle-consistent branch
        if d < 0.0 {
            assert_eq!(triple.accepted, vec![vec![1.0]], "d = {d}");
        } else if d > 0.0 {
            assert_eq!(triple.accepted, vec![vec![0.0]], "d = {d}");
        } else {
            assert_eq!(triple.accepted.len(), 2, "boundary direction accepts both");
        }
    }
    assert!(max_err <= 1e-9, "max error {max_err:.3e}");
    println!("criterion 2: PASS - y' = min(d_x, 0) with max error {max_err:.3e}");
}

#[test]
fn criterion_3_tracking_vs_derivative() {
    let t = tols();
    // QP fixture: exact dd1 against Richardson differences of kkt_track
    let (_, bp) = load_bilevel("qp_fixture.json");
    let kkt = bp.kkt_vertex(0, &t).unwrap();
    let mut worst = 0.0f64;
    for d in [1.0, -1.0] {
        let exact = bp.solution_map_dd1(&kkt, &[d], &t).unwrap();
        let (numeric, _) = bp.solution_map_dd1_numeric(&[d], &t).unwrap();
        worst = worst.max((exact.y1[0] - numeric[0]).abs());
    }
    assert!(worst <= 1e-5, "qp fixture deviation {worst:.3e}");

    // paper example: numeric fallback against the closed form y(x) = 1 - |x|
    let (_, bp) = load_bilevel("paper_example.json");
    let mut worst_paper = 0.0f64;
    for (d, oracle) in [(1.0, -1.0), (-1.0, -1.0)] {
        let (numeric, _) = bp.solution_map_dd1_numeric(&[d], &t).unwrap();
        worst_paper = worst_paper.max((numeric[0] - oracle).abs());
    }
    assert!(worst_paper <= 1e-5, "paper example deviation {worst_paper:.3e}");
    println!(
        "criterion 3: PASS - tracking matches derivatives (qp {worst:.2e}, paper {worst_paper:.2e})"
    );
}

#[test]
fn criterion_4_sp_fp_equivalence_suite() {
    let t = tols();
    let mut dirs_checked = 0usize;
    for name in ["qp_fixture.json", "degenerate_fixture.json", "proj2_fixture.json"] {
        let (_, bp) = load_bilevel(name);
        let kkt = bp.kkt_vertex(0, &t).unwrap();
        let analysis = BilevelAnalysis::new(&bp, kkt.clone(), &t).unwrap();
        assert!(analysis.is_exact(), "{name} must satisfy A2+A4");

        // first-order verdicts and values agree (asserted internally too)
        let first = analysis.first_order_check(64, 0, &t).unwrap();
        assert_eq!(first.sp_holds, first.fp_holds, "{name}");
        assert!((first.sp_min - first.fp_min).abs() <= 1e-7 * (1.0 + first.sp_min.abs()));

        // dual feasibility agrees per W
        let dual = analysis.dual_multipliers(&t).unwrap();
        for per in &dual.per_w {
            assert_eq!(per.sp_feasible, per.fp_feasible, "{name}");
        }

        // critical-cone membership on 256 seeded directions: the SP
        // membership oracle against the independently evaluated FP rows
        let pieces = bp.sensitivity_pieces(&kkt, &t).unwrap();
        for d in sampling::unit_sphere(bp.nx, 256, 42) {
            let sp_member = analysis.critical_member(&d, &t).unwrap();
            let fp_member = fp_critical_member(&bp, &kkt, &pieces, &d, &t);
            assert_eq!(sp_member, fp_member, "{name}: direction {d:?}");
            dirs_checked += 1;
        }

        // second-order inner values agree to 1e-7
        let second = analysis.second_order_check(32, 0, &t).unwrap();
        for out in &second.per_direction {
            let fp = out.fp_value.expect("exact regime carries FP values");
            if out.sp_value.is_finite() {
                assert!(
                    (out.sp_value - fp).abs() <= 1e-7 * (1.0 + fp.abs()),
                    "{name}: {} vs {fp}",
                    out.sp_value
                );
            } else {
                assert_eq!(out.sp_value, fp);
            }
        }
    }
    println!("criterion 4: PASS - SP/FP agree on verdicts, duals, {dirs_checked} membership queries, inner values");
}

/// Independent FP-side critical-cone membership: build the FP direction
/// from the sensitivity triple and evaluate the linearized FP rows
/// directly från the problem data.
fn fp_critical_member(
    bp: &BilevelProblem,
    kkt: &optcheck_core::bilevel::KktPoint,
    pieces: &[optcheck_core::bilevel::SensitivityPiece],
    d_x: &[f64],
    t: &Tolerances,
) -> bool {
    let Ok(triple) = bp.solution_map_dd1_with(pieces, kkt, d_x, t) else {
        return false;
    };
    let z = bp.reference_point();
    let (n, m, r, s) = (bp.nx, bp.ny, bp.lower_eq.len(), bp.lower_ineq.len());
    let mut d_joint = d_x.to_vec();
    d_joint.extend_from_slice(&triple.y1);
    let slack = t.check_slack;
    // upper rows
    for i in 0..bp.upper_eq.len() {
        if linalg::dot(&bp.upper_eq.component(i).gradient(&z), &d_joint).abs() > slack {
            return false;
        }
    }
    let gu = bp.upper_ineq.values(&z);
    for i in 0..bp.upper_ineq.len() {
        if gu[i] >= -t.activity
            && linalg::dot(&bp.upper_ineq.component(i).gradient(&z), &d_joint) > slack
        {
            return false;
        }
    }
    // lower KKT linearization rows
    let hess = bp.lagrangian_hessian(&z, &kkt.mu, &kkt.xi);
    let jac_h = bp.lower_eq.jacobian(&z);
    let jac_g = bp.lower_ineq.jacobian(&z);
    for i in 0..m {
        let mut v = 0.0;
        for j in 0..n {
            v += hess.get(n + i, j) * d_x[j];
        }
        for j in 0..m {
            v += hess.get(n + i, n + j) * triple.y1[j];
        }
        for jj in 0..r {
            v += jac_h.get(jj, n + i) * triple.mu1[jj];
        }
        for kk in 0..s {
            v += jac_g.get(kk, n + i) * triple.xi1[kk];
        }
        if v.abs() > slack {
            return false;
        }
    }
    for jj in 0..r {
        if linalg::dot(jac_h.row(jj), &d_joint).abs() > slack {
            return false;
        }
    }
    let g = bp.lower_ineq.values(&z);
    for k in 0..s {
        let zk = g[k] + kkt.xi[k];
        let dgk = linalg::dot(jac_g.row(k), &d_joint);
        let dzk = dgk + triple.xi1[k];
        // linearized projection row: dg_k = min-branch of (dg_k + dxi_k)
        let projected = if zk < -t.degenerate_z {
            dzk
        } else if zk > t.degenerate_z {
            0.0
        } else {
            dzk.min(0.0)
        };
        if (dgk - projected).abs() > slack {
            return false;
        }
    }
    // objective row
    linalg::dot(&bp.upper_obj.gradient(&z), &d_joint) <= slack
}

#[test]
fn criterion_5_directional_calculus_suite() {
    let t = tols();
    let mut quotient_checked = 0;
    for seed in 0..200u64 {
        let n = 2 + (seed % 3) as usize;
        let expr = random_dag(n, seed, false);
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
            let (o1, e1) = dd1_quotient_oracle(&expr, &x, &d);
            if e1 > 1e-6 * (1.0 + linalg::norm_inf(&d1)) {
                continue;
            }
            assert!(
                linalg::norm_inf(&linalg::sub(&d1, &o1)) <= 1e-4 * (1.0 + linalg::norm_inf(&d1)),
                "seed {seed}"
            );
            let d2 = expr.dd2(&x, &d, &w, &t).unwrap();
            let (o2, e2) = dd2_quotient_oracle(&expr, &x, &d, &w);
            if e2 > 1e-5 * (1.0 + linalg::norm_inf(&d2)) {
                continue;
            }
            assert!(
                linalg::norm_inf(&linalg::sub(&d2, &o2)) <= 1e-4 * (1.0 + linalg::norm_inf(&d2)),
                "seed {seed}"
            );
            // homogeneity at the same point
            for s in [0.5, 2.0, 10.0] {
                let d1s = expr.dd1(&x, &linalg::scale(&d, s), &t).unwrap();
                assert!(
                    linalg::norm_inf(&linalg::sub(&d1s, &linalg::scale(&d1, s)))
                        <= 1e-9 * (1.0 + s * linalg::norm_inf(&d1)),
                    "seed {seed}"
                );
                let d2s = expr
                    .dd2(&x, &linalg::scale(&d, s), &linalg::scale(&w, s * s), &t)
                    .unwrap();
                assert!(
                    linalg::norm_inf(&linalg::sub(&d2s, &linalg::scale(&d2, s * s)))
                        <= 1e-9 * (1.0 + s * s * linalg::norm_inf(&d2)),
                    "seed {seed}"
                );
            }
            done = true;
            break;
        }
        assert!(done, "seed {seed}: no convergent probe point");
        quotient_checked += 1;
    }

    // PC²-only DAGs: exactly zero gph residual for constant paths
    let mut exact_zero = 0;
    for seed in 0..40u64 {
        let n = 2 + (seed % 3) as usize;
        let expr = random_dag(n, seed, true);
        let x = vec![0.0; n];
        let mut d = vec![0.0; n];
        d[0] = 1.0;
        let mut w = vec![0.0; n];
        w[(seed % n as u64) as usize] = 0.5;
        let path = ProbePath { family: PathFamily::ConstantW, base: Some(w), seed };
        let rep = regularity_probe(&expr, &x, &d, &path, ProbeMode::Gph, &t).unwrap();
        assert_eq!(rep.verdict, ProbeVerdict::Consistent, "seed {seed}");
        // small-t tail must cancel exactly in floating point
        let tail = &rep.residual_over_t2[rep.residual_over_t2.len() - 3..];
        if tail.iter().all(|&v| v == 0.0) {
            exact_zero += 1;
        }
    }
    assert!(exact_zero >= 30, "only {exact_zero}/40 PC² probes were exactly zero");
    println!(
        "criterion 5: PASS - {quotient_checked} DAGs quotient-checked, {exact_zero}/40 PC² probes exactly zero"
    );
}

#[test]
fn criterion_6_cone_oracle_suite() {
    use rand::Rng;
    use rand::SeedableRng;
    let t = tols();
    let grid: Vec<f64> = (4..=16).map(|k| 2f64.powi(-k)).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
    let mut member_checks = 0;
    let mut nonmember_checks = 0;
    let mut triple_index = 0;
    while triple_index < 50 {
        let n = rng.gen_range(2..4usize);
        let set = random_polyhedral(&mut rng, n);
        // a member point with some active structure
        let Some(y) = random_member(&mut rng, &set, n, &t) else { continue };
        let tangent = set.tangent_cone(&y, &t).unwrap();
        let t_gens = tangent.generators(&t).unwrap_or_default();
        if t_gens.is_empty() {
            continue;
        }
        let d = t_gens[rng.gen_range(0..t_gens.len())].clone();
        let t2 = set.second_order_tangent(&y, &d, &t).unwrap();
        let gens = t2.generators(&t).unwrap_or_default();
        for w in &gens {
            let res = definitional_residuals(&set, &y, &d, w, &grid, &t).unwrap();
            assert!(
                res.last().unwrap() <= &1e-8,
                "triple {triple_index}: generator {w:?} residual {:?}",
                res.last()
            );
            member_checks += 1;
        }
        // sample non-members of T² until the global budget is reached
        if nonmember_checks < 20 {
            for _ in 0..10 {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                if t2.violation(&w) < 0.1 {
                    continue;
                }
                let res = definitional_residuals(&set, &y, &d, &w, &grid, &t).unwrap();
                // read the stall at moderate t: below t ~ 2^-12 the absolute
                // violation t² d(w,T²)/2 dips under the membership tolerance
                let stall = res[4..8].iter().cloned().fold(0.0f64, f64::max);
                assert!(stall > 1e-3, "non-member {w:?} residuals {res:?}");
                nonmember_checks += 1;
                break;
            }
        }
        triple_index += 1;
    }
    assert!(member_checks >= 50, "only {member_checks} generator checks");
    assert_eq!(nonmember_checks, 20);
    println!(
        "criterion 6: PASS - {member_checks} generators pass o(t²), {nonmember_checks} non-members fail it"
    );
}

fn random_polyhedral(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> PolyhedralSet {
    use rand::Rng;
    if rng.gen_bool(0.5) {
        let factors = (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => Factor::Line,
                1 => Factor::Nonpos,
                _ => Factor::Zero,
            })
            .collect();
        PolyhedralSet::Product(factors)
    } else {
        // rows through the origin with a few inactive offsets
        let rows = rng.gen_range(1..=n + 1);
        let mut a_rows = Vec::new();
        let mut b = Vec::new();
        for _ in 0..rows {
            let row: Vec<f64> = (0..n).map(|_| (rng.gen_range(-4..=4i32)) as f64 / 2.0).collect();
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            let active = rng.gen_bool(0.7);
            b.push(if active { 0.0 } else { rng.gen_range(0.5..1.5) });
            a_rows.push(row);
        }
        if a_rows.is_empty() {
            return PolyhedralSet::free(n);
        }
        PolyhedralSet::HForm(HForm {
            a: DenseMatrix::from_rows(&a_rows).unwrap(),
            b,
            c: DenseMatrix::zeros(0, n),
            e: vec![],
        })
    }
}

fn random_member(
    rng: &mut rand_chacha::ChaCha8Rng,
    set: &PolyhedralSet,
    n: usize,
    t: &Tolerances,
) -> Option<Vec<f64>> {
    use rand::Rng;
    match set {
        PolyhedralSet::Product(fs) => Some(
            fs.iter()
                .map(|f| match f {
                    Factor::Line => rng.gen_range(-1.0..1.0),
                    Factor::Nonpos => {
                        if rng.gen_bool(0.5) {
                            0.0
                        } else {
                            -rng.gen_range(0.1..1.0)
                        }
                    }
                    Factor::Zero => 0.0,
                })
                .collect(),
        ),
        PolyhedralSet::HForm(_) => {
            // origin lies in every generated H-form (b >= 0)
            let y = vec![0.0; n];
            (set.violation(&y) <= t.activity).then_some(y)
        }
    }
}

#[test]
fn criterion_7_no_gap_behavior() {
    let t = tols();
    // cubic fixture: necessary holds, sufficient not certified, value 0
    let loaded = parse_problem(&fixture("cubic_fixture.json")).unwrap();
    let Instance::Nonsmooth(cubic) = &loaded.instance else { panic!() };
    let sweep = cubic.sufficient_sweep(Default::default(), &t).unwrap();
    assert_eq!(sweep.verdict, SweepVerdict::DegenerateZero);
    assert!(sweep.margin.abs() <= 1e-9);
    let report = commands::run(
        &loaded,
        &Command::CheckSecond { mode: Mode::Sufficient },
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(report.exit_code, 2);
    assert!(report
        .checks
        .iter()
        .any(|c| c.verdict == "necessary holds, sufficient not certified"));

    // abs fixture: margin 2 ± 1e-8 and grid-verified growth >= 0.5
    let loaded = parse_problem(&fixture("abs_fixture.json")).unwrap();
    let Instance::Nonsmooth(abs_fix) = &loaded.instance else { panic!() };
    let sweep = abs_fix.sufficient_sweep(Default::default(), &t).unwrap();
    assert_eq!(sweep.verdict, SweepVerdict::CertifiedPositive);
    assert!((sweep.margin - 2.0).abs() <= 1e-8, "margin {}", sweep.margin);
    let growth = abs_fix.growth_grid(0.1, 11, &t).unwrap();
    assert!(growth.gamma_hat >= 0.5, "gamma {}", growth.gamma_hat);
    assert_eq!(growth.violations, 0);
    println!(
        "criterion 7: PASS - cubic reports the no-gap degenerate case, abs fixture margin {:.9} with grid gamma {:.3}",
        sweep.margin, growth.gamma_hat
    );
}

#[test]
fn criterion_8_growth_probes() {
    let t = tols();
    let (_, paper) = load_bilevel("paper_example.json");
    let rep = growth_probe(&paper, 0.2, 64, 0, &t).unwrap();
    assert!(rep.gamma_hat >= 1.0, "paper gamma {}", rep.gamma_hat);
    assert!(rep.violations.is_empty());

    let (_, qp) = load_bilevel("qp_fixture.json");
    let rep_qp = growth_probe(&qp, 0.3, 64, 0, &t).unwrap();
    assert!(
        rep_qp.gamma_hat >= 0.9 && rep_qp.gamma_hat <= 1.1,
        "qp gamma {}",
        rep_qp.gamma_hat
    );
    println!(
        "criterion 8: PASS - growth gamma paper {:.3} (0 violations), qp {:.3}",
        rep.gamma_hat, rep_qp.gamma_hat
    );
}

#[test]
fn criterion_9_lp_engine_against_brute_force() {
    use rand::Rng;
    use rand::SeedableRng;
    let t = tols();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut max_gap = 0.0f64;
    for trial in 0..50 {
        let n = rng.gen_range(2..=6usize);
        let extra = rng.gen_range(1..=(12 - 2 * n).max(1));
        // unit box keeps it bounded; random cuts keep the origin feasible
        let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            ineq.push((row.clone(), 1.0));
            row[j] = -1.0;
            ineq.push((row, 1.0));
        }
        for _ in 0..extra {
            if ineq.len() >= 12 {
                break;
            }
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ineq.push((a, rng.gen_range(0.1..1.5)));
        }
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let problem = lp::LinearProgram::from_rows(c.clone(), &[], &ineq).unwrap();
        let res = lp::lp_solve(&problem, &t).unwrap();
        assert_eq!(res.status, LpStatus::Optimal, "trial {trial}");
        let verts = lp::vertex_enumerate(&[], &ineq, 8192, &t).unwrap();
        let brute = verts.iter().map(|v| linalg::dot(&c, v)).fold(f64::INFINITY, f64::min);
        assert!(
            (res.optimum - brute).abs() <= 1e-7 * (1.0 + brute.abs()),
            "trial {trial}: {} vs {brute}",
            res.optimum
        );
        // duality gap from the certificate
        let Certificate::Dual(y) = &res.certificate else { panic!("expected dual") };
        let dual_obj: f64 = ineq.iter().zip(y).map(|((_, b), yi)| b * yi).sum();
        let gap = (dual_obj - res.optimum).abs();
        assert!(gap <= 1e-8 * (1.0 + res.optimum.abs()), "trial {trial}: gap {gap:.3e}");
        max_gap = max_gap.max(gap);
    }
    println!("criterion 9: PASS - 50 LPs match brute force, max duality gap {max_gap:.2e}");
}
