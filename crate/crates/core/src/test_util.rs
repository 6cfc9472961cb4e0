//! Shared test support: fixture builders and a seeded random-DAG
//! generator used by property and acceptance suites. Not part of the
//! public API surface.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bilevel::{BilevelProblem, SmoothFn, SmoothMap};
use crate::expr::{ExprBuilder, NodeId, PiecewiseExpr, Polynomial};
use crate::tol::Tolerances;

/// Scalar polynomial expression over `n` variables.
pub fn poly_expr(n: usize, terms: Vec<(f64, Vec<u32>)>) -> PiecewiseExpr {
    let p = Polynomial::new(n, terms);
    let mut b = ExprBuilder::new(n);
    let x = b.input();
    let root = b.polynomial(&p, vec![x]);
    b.finish(root).unwrap()
}

/// The paper's worked bilevel example at (x*, y*) = (0, 1):
/// upper `min x² + (y-1)²  s.t.  1 - 2x - y <= 0`,
/// lower `min (y-2)²  s.t.  x + y - 1 <= 0, -x + y - 1 <= 0`.
pub fn paper_example() -> BilevelProblem {
    let f_upper = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-2.0, vec![0, 1]), (1.0, vec![0, 0])],
    ));
    let g_upper = SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 0]), (-2.0, vec![1, 0]), (-1.0, vec![0, 1])],
    ))])
    .unwrap();
    let f_lower = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 2]), (-4.0, vec![0, 1]), (4.0, vec![0, 0])],
    ));
    let g_lower = SmoothMap::new(vec![
        SmoothFn::from_polynomial(&Polynomial::new(
            2,
            vec![(1.0, vec![1, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])],
        )),
        SmoothFn::from_polynomial(&Polynomial::new(
            2,
            vec![(-1.0, vec![1, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])],
        )),
    ])
    .unwrap();
    BilevelProblem::new(
        f_upper,
        g_upper,
        SmoothMap::empty(2),
        f_lower,
        g_lower,
        SmoothMap::empty(2),
        vec![0.0],
        vec![1.0],
        &Tolerances::default(),
    )
    .unwrap()
}

/// Lower `min (y-x)²  s.t.  y <= 0` with upper `min (x-1)² + y²`, at the
/// given reference `x*` (0 = degenerate kink, 1 = strict complementarity).
pub fn qp_fixture(x_star: f64) -> BilevelProblem {
    qp_lower_with_upper(
        Polynomial::new(
            2,
            vec![(1.0, vec![2, 0]), (-2.0, vec![1, 0]), (1.0, vec![0, 0]), (1.0, vec![0, 2])],
        ),
        x_star,
    )
}

/// The degenerate complementarity fixture: same lower problem at the kink
/// `x* = 0` with upper `min x² + y²`, which makes the reference a strict
/// bi-local minimizer exercising both W branches.
pub fn degenerate_fixture() -> BilevelProblem {
    qp_lower_with_upper(
        Polynomial::new(2, vec![(1.0, vec![2, 0]), (1.0, vec![0, 2])]),
        0.0,
    )
}

fn qp_lower_with_upper(upper: Polynomial, x_star: f64) -> BilevelProblem {
    let f_upper = SmoothFn::from_polynomial(&upper);
    let f_lower = SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 2]), (-2.0, vec![1, 1]), (1.0, vec![2, 0])],
    ));
    let g_lower = SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
        2,
        vec![(1.0, vec![0, 1])],
    ))])
    .unwrap();
    let y_star = x_star.min(0.0);
    BilevelProblem::new(
        f_upper,
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        f_lower,
        g_lower,
        SmoothMap::empty(2),
        vec![x_star],
        vec![y_star],
        &Tolerances::default(),
    )
    .unwrap()
}

/// Two-dimensional fixture with an active upper constraint and strict
/// lower complementarity (A2+A4 hold):
/// upper `min ||x - (1,1)||² + ||y - (1/2,1/2)||²  s.t.  x1 + x2 - 2 <= 0`,
/// lower `min 1/2||y - x||²  s.t.  y1 + y2 - 1 <= 0`,
/// reference x* = (1,1), y* = (1/2,1/2), xi* = 1/2.
pub fn proj2_fixture() -> BilevelProblem {
    let f_upper = SmoothFn::from_polynomial(&Polynomial::new(
        4,
        vec![
            (1.0, vec![2, 0, 0, 0]),
            (-2.0, vec![1, 0, 0, 0]),
            (1.0, vec![0, 2, 0, 0]),
            (-2.0, vec![0, 1, 0, 0]),
            (1.0, vec![0, 0, 2, 0]),
            (-1.0, vec![0, 0, 1, 0]),
            (1.0, vec![0, 0, 0, 2]),
            (-1.0, vec![0, 0, 0, 1]),
            (2.5, vec![0, 0, 0, 0]),
        ],
    ));
    let g_upper = SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
        4,
        vec![(1.0, vec![1, 0, 0, 0]), (1.0, vec![0, 1, 0, 0]), (-2.0, vec![0, 0, 0, 0])],
    ))])
    .unwrap();
    let f_lower = SmoothFn::from_polynomial(&Polynomial::new(
        4,
        vec![
            (0.5, vec![0, 0, 2, 0]),
            (-1.0, vec![1, 0, 1, 0]),
            (0.5, vec![2, 0, 0, 0]),
            (0.5, vec![0, 0, 0, 2]),
            (-1.0, vec![0, 1, 0, 1]),
            (0.5, vec![0, 2, 0, 0]),
        ],
    ));
    let g_lower = SmoothMap::new(vec![SmoothFn::from_polynomial(&Polynomial::new(
        4,
        vec![(1.0, vec![0, 0, 1, 0]), (1.0, vec![0, 0, 0, 1]), (-1.0, vec![0, 0, 0, 0])],
    ))])
    .unwrap();
    BilevelProblem::new(
        f_upper,
        g_upper,
        SmoothMap::empty(4),
        f_lower,
        g_lower,
        SmoothMap::empty(4),
        vec![1.0, 1.0],
        vec![0.5, 0.5],
        &Tolerances::default(),
    )
    .unwrap()
}

/// Seeded random DAG over `n` inputs with depth <= 4.
///
/// `pc2_only` restricts the atom pool to min/max/abs-with-zero atoms over
/// smooth children (piecewise-C² structure, exact parabolic expansions);
/// otherwise l1/l2 atoms join the pool.
pub fn random_dag(n: usize, seed: u64, pc2_only: bool) -> PiecewiseExpr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ExprBuilder::new(n);
    // layer 0: coordinates and a couple of polynomials
    let mut layer: Vec<NodeId> = (0..n).map(|i| b.coord(i)).collect();
    for _ in 0..2 {
        let terms: Vec<(f64, Vec<u32>)> = (0..rng.gen_range(1..4))
            .map(|_| {
                let mut powers = vec![0u32; n];
                for p in powers.iter_mut() {
                    *p = rng.gen_range(0..3);
                }
                (rng.gen_range(-1.5..1.5), powers)
            })
            .collect();
        let x = b.input();
        let poly = Polynomial::new(n, terms);
        layer.push(b.polynomial(&poly, vec![x]));
    }
    let depth = rng.gen_range(2..=4usize);
    for _ in 0..depth {
        let mut next = layer.clone();
        for _ in 0..rng.gen_range(1..=2usize) {
            let pick = |rng: &mut ChaCha8Rng, layer: &[NodeId]| {
                layer[rng.gen_range(0..layer.len())]
            };
            let kind_max = if pc2_only { 5 } else { 7 };
            let node = match rng.gen_range(0..kind_max) {
                0 => {
                    let a = pick(&mut rng, &layer);
                    let c = pick(&mut rng, &layer);
                    b.min(vec![a, c])
                }
                1 => {
                    let a = pick(&mut rng, &layer);
                    let c = pick(&mut rng, &layer);
                    b.max(vec![a, c])
                }
                2 => {
                    let a = pick(&mut rng, &layer);
                    b.abs(a)
                }
                3 => {
                    let a = pick(&mut rng, &layer);
                    b.min_zero(a)
                }
                4 => {
                    let a = pick(&mut rng, &layer);
                    let c = pick(&mut rng, &layer);
                    let s = b.scale(rng.gen_range(-2.0..2.0), a);
                    b.sum(vec![s, c])
                }
                5 => {
                    let a = pick(&mut rng, &layer);
                    b.l1(a)
                }
                _ => {
                    let a = pick(&mut rng, &layer);
                    let c = pick(&mut rng, &layer);
                    let cat = b.concat(vec![a, c]);
                    b.l2(cat)
                }
            };
            next.push(node);
        }
        layer = next;
    }
    let root = *layer.last().unwrap();
    b.finish(root).unwrap()
}

/// Parabolic difference-quotient oracle for dd1 (Richardson over
/// t-halving); the second value estimates the extrapolation error, which
/// blows up when the grid straddles a kink.
pub fn dd1_quotient_oracle(expr: &PiecewiseExpr, x: &[f64], d: &[f64]) -> (Vec<f64>, f64) {
    let gx = expr.eval(x).unwrap();
    let ts: Vec<f64> = (8..=15).map(|k| 2f64.powi(-k)).collect();
    let qs: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| {
            let gt = expr.eval(&crate::linalg::axpy(x, t, d)).unwrap();
            gt.iter().zip(&gx).map(|(a, b)| (a - b) / t).collect()
        })
        .collect();
    crate::bilevel::extrapolate_quotients(&ts, &qs)
}

/// Parabolic difference-quotient oracle for dd2, using the exact dd1;
/// returns the value with its extrapolation error estimate.
pub fn dd2_quotient_oracle(
    expr: &PiecewiseExpr,
    x: &[f64],
    d: &[f64],
    w: &[f64],
) -> (Vec<f64>, f64) {
    let tol = Tolerances::default();
    let gx = expr.eval(x).unwrap();
    let d1 = expr.dd1(x, d, &tol).unwrap();
    let ts: Vec<f64> = (6..=13).map(|k| 2f64.powi(-k)).collect();
    let qs: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| {
            let point = crate::linalg::axpy(&crate::linalg::axpy(x, t, d), 0.5 * t * t, w);
            let gt = expr.eval(&point).unwrap();
            (0..gt.len())
                .map(|i| (gt[i] - gx[i] - t * d1[i]) / (0.5 * t * t))
                .collect()
        })
        .collect();
    crate::bilevel::extrapolate_quotients(&ts, &qs)
}
