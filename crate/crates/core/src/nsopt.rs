//! Optimality-condition checks for `min f(x)  s.t.  G(x) in K` at a
//! candidate point.
//!
//! Every check works on the linearized problem: membership of `G'(x*;d)` in
//! the tangent cone, nonnegativity of `f'(x*;d)` over that cone, and the
//! per-direction inner problem `min_w f''(x*;d,w)` subject to
//! `G''(x*;d,w)` lying in the second-order tangent set. Whenever the
//! directional derivatives are piecewise linear the checks enumerate
//! selection pieces and solve one LP per piece (exact certificates);
//! otherwise they fall back to seeded direction sampling and say so.
//!
//! Constraint qualification is never claimed proven: reports carry a
//! provenance field and `mscq_probe` only estimates the metric-subregularity
//! ratio numerically.

use std::fmt;

use crate::cones::{ConeError, PolyhedralSet};
use crate::expr::{
    linearize_dd1, linearize_dd2, ExprError, LinearizeError, PiecewiseExpr,
};
use crate::linalg::{self, DenseMatrix};
use crate::lp::{self, LpError, LpResult, LpStatus};
use crate::sampling;
use crate::tol::Tolerances;

#[derive(Clone, Debug)]
pub struct NonsmoothProgram {
    pub f: PiecewiseExpr,
    pub g: PiecewiseExpr,
    pub set: PolyhedralSet,
    pub x_star: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum NsoptError {
    Dimension(String),
    InfeasibleReference { violation: f64 },
    Expr(ExprError),
    Cone(ConeError),
    Lp(LpError),
    ScaleExceeded(String),
}

impl fmt::Display for NsoptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NsoptError::Dimension(s) => write!(f, "dimension error: {s}"),
            NsoptError::InfeasibleReference { violation } => {
                write!(f, "reference point infeasible (violation {violation:.3e})")
            }
            NsoptError::Expr(e) => write!(f, "{e}"),
            NsoptError::Cone(e) => write!(f, "{e}"),
            NsoptError::Lp(e) => write!(f, "{e}"),
            NsoptError::ScaleExceeded(s) => write!(f, "scale exceeded: {s}"),
        }
    }
}

impl std::error::Error for NsoptError {}

impl From<ExprError> for NsoptError {
    fn from(e: ExprError) -> Self {
        NsoptError::Expr(e)
    }
}

impl From<ConeError> for NsoptError {
    fn from(e: ConeError) -> Self {
        NsoptError::Cone(e)
    }
}

impl From<LpError> for NsoptError {
    fn from(e: LpError) -> Self {
        NsoptError::Lp(e)
    }
}

/// How the directions for a check are produced.
#[derive(Clone, Copy, Debug)]
pub enum Sampler {
    /// Enumerate selection pieces, one exact LP certificate each.
    PieceEnumeration,
    /// Seeded low-discrepancy unit directions.
    Directions { count: usize, seed: u64 },
    /// Pieces when the derivatives are piecewise linear at desk scale,
    /// sampling (flagged) otherwise.
    Auto { count: usize, seed: u64 },
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Auto { count: 256, seed: 0 }
    }
}

/// CQ provenance recorded in every report: MSCQ is a hypothesis of the
/// theorems backing these checks, not something the toolkit can decide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CqProvenance {
    Assumed,
    Probed { verdict: MscqVerdict },
    CertifiedViaGmfcq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MscqVerdict {
    Bounded,
    Suspect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMode {
    Pieces,
    Sampled,
    /// Sampling used because piece enumeration was impossible or too large.
    SampledFallback,
}

#[derive(Clone, Debug)]
pub struct FirstOrderReport {
    pub holds: bool,
    pub mode: CheckMode,
    /// Smallest `f'(x*; d)` over tested tangent directions (within the unit
    /// box for piece LPs, unit sphere for sampling).
    pub min_value: f64,
    pub witness: Option<Vec<f64>>,
    pub pieces_tested: usize,
    pub directions_tested: usize,
}

#[derive(Clone, Debug)]
pub struct DirectionVerdict {
    pub d: Vec<f64>,
    pub in_tangent: bool,
    pub f_d1: f64,
    /// Optimal value of the inner second-order problem over `w`
    /// (`-inf` when unbounded below, `+inf` when vacuous/infeasible).
    pub soc_value: f64,
    pub certificate: Option<LpResult>,
    pub piece_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVerdict {
    /// Positive margin over every tested unit critical direction.
    CertifiedPositive,
    /// Necessary condition holds but the inner value hits zero.
    DegenerateZero,
    NecessaryViolated,
    /// Empty critical cone.
    Vacuous,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub verdict: SweepVerdict,
    /// min inner value over tested unit critical directions (`+inf` when
    /// the cone is empty).
    pub margin: f64,
    pub witnesses: Vec<DirectionVerdict>,
    pub directions_tested: usize,
    pub mode: CheckMode,
    pub caveat: String,
}

#[derive(Clone, Debug)]
pub struct GridGrowthReport {
    pub gamma_hat: f64,
    /// Feasible grid points precluding positive growth.
    pub violations: usize,
    pub feasible_points: usize,
}

#[derive(Clone, Debug)]
pub struct MscqProbeReport {
    /// (radius level, max ratio d(x, Psi-estimate)/d(G(x), K) at that level)
    pub levels: Vec<(f64, f64)>,
    pub radius: f64,
    pub samples_used: usize,
    pub verdict: MscqVerdict,
}

impl NonsmoothProgram {
    pub fn new(
        f: PiecewiseExpr,
        g: PiecewiseExpr,
        set: PolyhedralSet,
        x_star: Vec<f64>,
        tol: &Tolerances,
    ) -> Result<Self, NsoptError> {
        if f.output_dim() != 1 {
            return Err(NsoptError::Dimension(format!(
                "objective must be scalar, has dim {}",
                f.output_dim()
            )));
        }
        if f.input_dim() != x_star.len() || g.input_dim() != x_star.len() {
            return Err(NsoptError::Dimension("input dims inconsistent with x_star".into()));
        }
        if g.output_dim() != set.dim() {
            return Err(NsoptError::Dimension(format!(
                "G maps to dim {}, K has dim {}",
                g.output_dim(),
                set.dim()
            )));
        }
        set.validate_nonempty(tol)?;
        let gx = g.eval(&x_star)?;
        let violation = set.violation(&gx);
        if violation > tol.kkt_residual {
            return Err(NsoptError::InfeasibleReference { violation });
        }
        Ok(NonsmoothProgram { f, g, set, x_star })
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn g_at_ref(&self) -> Result<Vec<f64>, NsoptError> {
        Ok(self.g.eval(&self.x_star)?)
    }

    /// Does `G'(x*; d)` lie in the tangent cone `T_K(G(x*))`?
    pub fn linearized_tangent_member(&self, d: &[f64], tol: &Tolerances) -> Result<bool, NsoptError> {
        let gx = self.g_at_ref()?;
        let tangent = self.set.tangent_cone(&gx, tol)?;
        let g1 = self.g.dd1(&self.x_star, d, tol)?;
        Ok(tangent.violation(&g1) <= tol.feasibility)
    }

    pub fn f_d1(&self, d: &[f64], tol: &Tolerances) -> Result<f64, NsoptError> {
        Ok(self.f.dd1(&self.x_star, d, tol)?[0])
    }

    /// First-order necessary condition: `f'(x*;d) >= 0` on the linearized
    /// tangent cone.
    pub fn first_order_check(&self, sampler: Sampler, tol: &Tolerances) -> Result<FirstOrderReport, NsoptError> {
        match sampler {
            Sampler::PieceEnumeration => self.first_order_pieces(tol).map_err(|e| match e {
                PieceFailure::Hard(err) => err,
                PieceFailure::NotLinear(msg) => NsoptError::ScaleExceeded(msg),
            }),
            Sampler::Directions { count, seed } => self.first_order_sampled(count, seed, CheckMode::Sampled, tol),
            Sampler::Auto { count, seed } => match self.first_order_pieces(tol) {
                Ok(rep) => Ok(rep),
                Err(PieceFailure::NotLinear(_)) => {
                    self.first_order_sampled(count, seed, CheckMode::SampledFallback, tol)
                }
                Err(PieceFailure::Hard(err)) => Err(err),
            },
        }
    }

    fn first_order_pieces(&self, tol: &Tolerances) -> Result<FirstOrderReport, PieceFailure> {
        let n = self.dim();
        let gx = self.g_at_ref().map_err(PieceFailure::Hard)?;
        let tangent = self
            .set
            .tangent_cone(&gx, tol)
            .map_err(|e| PieceFailure::Hard(e.into()))?
            .to_hform();
        let f_pieces = linearize_dd1(&self.f, &self.x_star, tol, PIECE_CAP).map_err(piece_err)?;
        let g_pieces = linearize_dd1(&self.g, &self.x_star, tol, PIECE_CAP).map_err(piece_err)?;
        if f_pieces.len().saturating_mul(g_pieces.len()) > PIECE_CAP {
            return Err(PieceFailure::NotLinear(format!(
                "{} combined pieces exceed cap {PIECE_CAP}",
                f_pieces.len() * g_pieces.len()
            )));
        }
        let mut min_value = f64::INFINITY;
        let mut witness = None;
        let mut pieces_tested = 0;
        for fp in &f_pieces {
            for gp in &g_pieces {
                pieces_tested += 1;
                // min c.d s.t. piece validity, tangent rows on G', |d|_inf <= 1
                let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
                for r in fp.validity.iter().chain(&gp.validity) {
                    ineq.push((r.clone(), 0.0));
                }
                let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
                append_cone_rows(&tangent, &gp.map, None, &mut ineq, &mut eq);
                for i in 0..n {
                    let mut row = vec![0.0; n];
                    row[i] = 1.0;
                    ineq.push((row.clone(), 1.0));
                    row[i] = -1.0;
                    ineq.push((row, 1.0));
                }
                let c = fp.map.row(0).to_vec();
                let lp = lp::LinearProgram::from_rows(c, &eq, &ineq)
                    .map_err(|e| PieceFailure::Hard(e.into()))?;
                let r = lp::lp_solve(&lp, tol).map_err(|e| PieceFailure::Hard(e.into()))?;
                match r.status {
                    LpStatus::Infeasible => continue,
                    LpStatus::Unbounded => unreachable!("boxed LP cannot be unbounded"),
                    LpStatus::Optimal => {
                        if r.optimum < min_value {
                            min_value = r.optimum;
                            if r.optimum < -tol.check_slack {
                                witness = Some(r.solution.clone());
                            }
                        }
                    }
                }
            }
        }
        if min_value == f64::INFINITY {
            // tangent cone is {0} in every piece
            min_value = 0.0;
        }
        Ok(FirstOrderReport {
            holds: min_value >= -tol.check_slack,
            mode: CheckMode::Pieces,
            min_value,
            witness,
            pieces_tested,
            directions_tested: 0,
        })
    }

    fn first_order_sampled(
        &self,
        count: usize,
        seed: u64,
        mode: CheckMode,
        tol: &Tolerances,
    ) -> Result<FirstOrderReport, NsoptError> {
        let mut min_value: f64 = 0.0;
        let mut witness = None;
        let mut tested = 0;
        for d in sampling::unit_sphere(self.dim(), count, seed) {
            if !self.linearized_tangent_member(&d, tol)? {
                continue;
            }
            tested += 1;
            let v = self.f_d1(&d, tol)?;
            if v < min_value {
                min_value = v;
                if v < -tol.check_slack {
                    witness = Some(d.clone());
                }
            }
        }
        Ok(FirstOrderReport {
            holds: min_value >= -tol.check_slack,
            mode,
            min_value,
            witness,
            pieces_tested: 0,
            directions_tested: tested,
        })
    }

    /// Unit directions in the critical cone: tangent members with
    /// `f'(x*;d) <= 0` (up to slack). Piece-cone extreme rays are included
    /// whenever the pieces are enumerable.
    pub fn critical_cone_sample(
        &self,
        count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<Vec<Vec<f64>>, NsoptError> {
        let n = self.dim();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        let push = |d: Vec<f64>, dirs: &mut Vec<Vec<f64>>| {
            let norm = linalg::norm2(&d);
            if norm <= tol.dedup {
                return;
            }
            let u = linalg::scale(&d, 1.0 / norm);
            if !dirs.iter().any(|v| linalg::norm2(&linalg::sub(v, &u)) <= tol.dedup) {
                dirs.push(u);
            }
        };

        // extreme rays of the per-piece critical cones
        if let Ok(rays) = self.critical_piece_rays(tol) {
            for r in rays {
                push(r, &mut dirs);
            }
        }
        for d in sampling::unit_sphere(n, count, seed) {
            if self.linearized_tangent_member(&d, tol)? && self.f_d1(&d, tol)? <= tol.check_slack {
                push(d, &mut dirs);
            }
        }
        Ok(dirs)
    }

    fn critical_piece_rays(&self, tol: &Tolerances) -> Result<Vec<Vec<f64>>, NsoptError> {
        let n = self.dim();
        let gx = self.g_at_ref()?;
        let tangent = self.set.tangent_cone(&gx, tol)?.to_hform();
        let not_linear = |e: LinearizeError| NsoptError::ScaleExceeded(e.to_string());
        let f_pieces = linearize_dd1(&self.f, &self.x_star, tol, PIECE_CAP).map_err(not_linear)?;
        let g_pieces = linearize_dd1(&self.g, &self.x_star, tol, PIECE_CAP).map_err(not_linear)?;
        let mut rays = Vec::new();
        for fp in &f_pieces {
            for gp in &g_pieces {
                let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
                for r in fp.validity.iter().chain(&gp.validity) {
                    ineq.push((r.clone(), 0.0));
                }
                let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
                append_cone_rows(&tangent, &gp.map, None, &mut ineq, &mut eq);
                ineq.push((fp.map.row(0).to_vec(), 0.0));
                let a_rows: Vec<Vec<f64>> = ineq.iter().map(|r| r.0.clone()).collect();
                let c_rows: Vec<Vec<f64>> = eq.iter().map(|r| r.0.clone()).collect();
                let cone = PolyhedralSet::HForm(crate::cones::HForm {
                    a: rows_to_matrix_or_empty(&a_rows, n),
                    b: vec![0.0; a_rows.len()],
                    c: rows_to_matrix_or_empty(&c_rows, n),
                    e: vec![0.0; c_rows.len()],
                });
                if let Ok(gens) = cone.generators(tol) {
                    rays.extend(gens);
                }
            }
        }
        Ok(rays)
    }

    /// Inner second-order problem for one critical direction: minimize
    /// `f''(x*;d,w)` over `w` with `G''(x*;d,w)` in the second-order tangent
    /// set, one LP per consistent selection piece.
    pub fn second_order_value(&self, d: &[f64], tol: &Tolerances) -> Result<DirectionVerdict, NsoptError> {
        let gx = self.g_at_ref()?;
        let in_tangent = self.linearized_tangent_member(d, tol)?;
        let f_d1 = self.f_d1(d, tol)?;
        let g1 = self.g.dd1(&self.x_star, d, tol)?;
        if !in_tangent {
            return Ok(DirectionVerdict {
                d: d.to_vec(),
                in_tangent,
                f_d1,
                soc_value: f64::INFINITY,
                certificate: None,
                piece_id: "not tangent".into(),
            });
        }
        let t2 = self.set.second_order_tangent(&gx, &g1, tol)?.to_hform();
        let not_linear = |e: LinearizeError| NsoptError::ScaleExceeded(e.to_string());
        let f_pieces =
            linearize_dd2(&self.f, &self.x_star, d, tol, PIECE_CAP).map_err(not_linear)?;
        let g_pieces =
            linearize_dd2(&self.g, &self.x_star, d, tol, PIECE_CAP).map_err(not_linear)?;
        let mut best: Option<(f64, LpResult, String)> = None;
        for fp in &f_pieces {
            for gp in &g_pieces {
                let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
                for (r, r0) in fp.validity.iter().chain(&gp.validity) {
                    ineq.push((r.clone(), -r0));
                }
                let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
                append_cone_rows(&t2, &gp.form.map, Some(&gp.form.offset), &mut ineq, &mut eq);
                let c = fp.form.map.row(0).to_vec();
                let lp = lp::LinearProgram::from_rows(c, &eq, &ineq)?;
                let r = lp::lp_solve(&lp, tol)?;
                let piece_id = format!("f[{}] g[{}]", fp.selection, gp.selection);
                match r.status {
                    LpStatus::Infeasible => continue,
                    LpStatus::Unbounded => {
                        best = Some((f64::NEG_INFINITY, r, piece_id));
                    }
                    LpStatus::Optimal => {
                        let value = r.optimum + fp.form.offset[0];
                        if best.as_ref().map_or(true, |(v, _, _)| value < *v) {
                            best = Some((value, r, piece_id));
                        }
                    }
                }
                if matches!(best, Some((v, _, _)) if v == f64::NEG_INFINITY) {
                    break;
                }
            }
        }
        let (soc_value, certificate, piece_id) = match best {
            Some((v, r, id)) => (v, Some(r), id),
            // no piece admits a feasible w: the inner problem is vacuous
            None => (f64::INFINITY, None, "infeasible".into()),
        };
        Ok(DirectionVerdict {
            d: d.to_vec(),
            in_tangent,
            f_d1,
            soc_value,
            certificate,
            piece_id,
        })
    }

    /// Sweep the critical cone; a positive margin certifies second-order
    /// growth on the tested directions.
    pub fn sufficient_sweep(&self, sampler: Sampler, tol: &Tolerances) -> Result<SweepReport, NsoptError> {
        let (count, seed, mode) = match sampler {
            Sampler::PieceEnumeration => (0, 0, CheckMode::Pieces),
            Sampler::Directions { count, seed } => (count, seed, CheckMode::Sampled),
            Sampler::Auto { count, seed } => (count, seed, CheckMode::Sampled),
        };
        let dirs = self.critical_cone_sample(count, seed, tol)?;
        if dirs.is_empty() {
            return Ok(SweepReport {
                verdict: SweepVerdict::Vacuous,
                margin: f64::INFINITY,
                witnesses: vec![],
                directions_tested: 0,
                mode,
                caveat: "critical cone empty on tested directions".into(),
            });
        }
        let mut margin = f64::INFINITY;
        let mut witnesses = Vec::new();
        for d in &dirs {
            let v = self.second_order_value(d, tol)?;
            if v.soc_value < margin {
                margin = v.soc_value;
            }
            if v.soc_value <= tol.check_slack {
                witnesses.push(v);
            }
        }
        let verdict = if margin > tol.check_slack {
            SweepVerdict::CertifiedPositive
        } else if margin >= -tol.check_slack {
            SweepVerdict::DegenerateZero
        } else {
            SweepVerdict::NecessaryViolated
        };
        Ok(SweepReport {
            verdict,
            margin,
            witnesses,
            directions_tested: dirs.len(),
            mode,
            caveat: "margin holds on tested unit directions only".into(),
        })
    }

    /// Estimate the metric-subregularity ratio `d(x, Psi) / d(G(x), K)` on
    /// shrinking sampled balls. `d(x, Psi)` is an upper-bound estimate from
    /// a multi-start compass search, so ratios are conservative.
    pub fn mscq_probe(
        &self,
        radius: f64,
        count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<MscqProbeReport, NsoptError> {
        assert!(radius > 0.0, "probe radius must be positive");
        let mut levels = Vec::new();
        let mut used = 0;
        for level in 0..3 {
            let r = radius / 2f64.powi(level);
            let mut max_ratio: f64 = 0.0;
            for x in sampling::ball(&self.x_star, r, count, seed + level as u64) {
                let gdist = self.set.distance(&self.g.eval(&x)?, tol)?;
                if gdist <= 1e-10 {
                    continue;
                }
                used += 1;
                let dpsi = self.estimate_feasible_distance(&x, r, tol)?;
                max_ratio = max_ratio.max(dpsi / gdist);
            }
            levels.push((r, max_ratio));
        }
        let first = levels[0].1;
        let last = levels[levels.len() - 1].1;
        let verdict = if first > 0.0 && last >= 3.0 * first {
            MscqVerdict::Suspect
        } else {
            MscqVerdict::Bounded
        };
        Ok(MscqProbeReport { levels, radius, samples_used: used, verdict })
    }

    /// Grid-search growth verification: the largest `gamma` with
    /// `f(x) >= f(x*) + gamma ||x - x*||²` over feasible grid points in the
    /// box of the given radius.
    pub fn growth_grid(
        &self,
        radius: f64,
        per_axis: usize,
        tol: &Tolerances,
    ) -> Result<GridGrowthReport, NsoptError> {
        let n = self.dim();
        if n > 4 {
            return Err(NsoptError::ScaleExceeded(format!("grid search in dimension {n}")));
        }
        let f_star = self.f.eval(&self.x_star)?[0];
        let per_axis = per_axis.max(3);
        let mut idx = vec![0usize; n];
        let mut gamma_hat = f64::INFINITY;
        let mut feasible_points = 0;
        let mut violations = 0;
        loop {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    self.x_star[i] + radius * (2.0 * idx[i] as f64 / (per_axis - 1) as f64 - 1.0)
                })
                .collect();
            let dist = linalg::norm2(&linalg::sub(&x, &self.x_star));
            if dist > 1e-9 {
                let gx = self.g.eval(&x)?;
                if self.set.violation(&gx) <= tol.feasibility {
                    feasible_points += 1;
                    let ratio = (self.f.eval(&x)?[0] - f_star) / (dist * dist);
                    gamma_hat = gamma_hat.min(ratio);
                    if ratio <= tol.check_slack {
                        violations += 1;
                    }
                }
            }
            // advance the multi-index
            let mut i = 0;
            loop {
                if i == n {
                    let gamma_hat = if gamma_hat == f64::INFINITY { 0.0 } else { gamma_hat.max(0.0) };
                    return Ok(GridGrowthReport { gamma_hat, violations, feasible_points });
                }
                idx[i] += 1;
                if idx[i] < per_axis {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    /// Upper bound on `d(x, Psi)`: compass search on `d(G(z), K)` from `x`
    /// finds a feasible point, bisection along the segment then pulls it
    /// back to the feasibility boundary; `x*` is the guaranteed fallback.
    fn estimate_feasible_distance(
        &self,
        x: &[f64],
        step0: f64,
        tol: &Tolerances,
    ) -> Result<f64, NsoptError> {
        let n = self.dim();
        let phi = |z: &[f64]| -> Result<f64, NsoptError> {
            Ok(self.set.distance(&self.g.eval(z)?, tol)?)
        };
        let mut z = x.to_vec();
        let mut best = phi(&z)?;
        let mut step = step0;
        for _ in 0..300 {
            if best <= 1e-12 || step < 1e-13 {
                break;
            }
            let mut improved = false;
            'outer: for i in 0..n {
                for s in [step, -step] {
                    let mut cand = z.clone();
                    cand[i] += s;
                    let v = phi(&cand)?;
                    if v < best - 1e-15 {
                        z = cand;
                        best = v;
                        improved = true;
                        break 'outer;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let fallback = linalg::norm2(&linalg::sub(x, &self.x_star));
        if best > 1e-10 {
            return Ok(fallback);
        }
        // tighten: first feasible point along [x, z]
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            let cand: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + mid * (b - a)).collect();
            if phi(&cand)? <= 1e-10 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let dist = hi * linalg::norm2(&linalg::sub(&z, x));
        Ok(dist.min(fallback))
    }
}

const PIECE_CAP: usize = 4096;

enum PieceFailure {
    NotLinear(String),
    Hard(NsoptError),
}

fn piece_err(e: LinearizeError) -> PieceFailure {
    match e {
        LinearizeError::NotPiecewiseLinear { .. } | LinearizeError::TooManyPieces { .. } => {
            PieceFailure::NotLinear(e.to_string())
        }
        LinearizeError::Expr(err) => PieceFailure::Hard(err.into()),
    }
}

fn rows_to_matrix_or_empty(rows: &[Vec<f64>], n: usize) -> DenseMatrix {
    if rows.is_empty() {
        DenseMatrix::zeros(0, n)
    } else {
        DenseMatrix::from_rows(rows).expect("finite rows")
    }
}

/// Compose cone rows with an affine image: for each H-form row `a·y <= b`
/// of the cone, append `a·(M w + off) <= b` as a row over `w`.
fn append_cone_rows(
    cone: &crate::cones::HForm,
    map: &DenseMatrix,
    offset: Option<&[f64]>,
    ineq: &mut Vec<(Vec<f64>, f64)>,
    eq: &mut Vec<(Vec<f64>, f64)>,
) {
    let zero = vec![0.0; map.rows()];
    let off = offset.unwrap_or(&zero);
    for i in 0..cone.a.rows() {
        let a = cone.a.row(i);
        let mut row = vec![0.0; map.cols()];
        let mut shift = 0.0;
        for (k, &ak) in a.iter().enumerate() {
            if ak == 0.0 {
                continue;
            }
            shift += ak * off[k];
            for j in 0..map.cols() {
                row[j] += ak * map.get(k, j);
            }
        }
        ineq.push((row, cone.b[i] - shift));
    }
    for i in 0..cone.c.rows() {
        let c = cone.c.row(i);
        let mut row = vec![0.0; map.cols()];
        let mut shift = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            shift += ck * off[k];
            for j in 0..map.cols() {
                row[j] += ck * map.get(k, j);
            }
        }
        eq.push((row, cone.e[i] - shift));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{ExprBuilder, Polynomial};

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    /// f = |x1| + x2^2, G = -x2, K = R_-, x* = 0: the module fixture.
    fn canonical_fixture() -> NonsmoothProgram {
        let t = tols();
        let sq = Polynomial::new(1, vec![(1.0, vec![2])]);
        let mut b = ExprBuilder::new(2);
        let x1 = b.coord(0);
        let a = b.abs(x1);
        let x2 = b.coord(1);
        let s = b.polynomial(&sq, vec![x2]);
        let f_root = b.sum(vec![a, s]);
        let f = b.finish(f_root).unwrap();

        let mut b = ExprBuilder::new(2);
        let x2 = b.coord(1);
        let g_root = b.scale(-1.0, x2);
        let g = b.finish(g_root).unwrap();

        NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(1), vec![0.0, 0.0], &t).unwrap()
    }

    fn scalar_program(f: PiecewiseExpr) -> NonsmoothProgram {
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let g = b.finish(x).unwrap();
        NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(1), vec![0.0], &tols()).unwrap()
    }

    fn poly_expr(n: usize, terms: Vec<(f64, Vec<u32>)>) -> PiecewiseExpr {
        let p = Polynomial::new(n, terms);
        let mut b = ExprBuilder::new(n);
        let x = b.input();
        let root = b.polynomial(&p, vec![x]);
        b.finish(root).unwrap()
    }

    #[test]
    fn tangent_membership_examples() {
        let t = tols();
        // G(x) = x, K = R_-, x* = 0
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![1])]));
        assert!(p.linearized_tangent_member(&[-1.0], &t).unwrap());
        assert!(!p.linearized_tangent_member(&[1.0], &t).unwrap());

        // G(x) = (x1, |x2| - x2), K = R_-^2, d = (-1, 1) -> dd1 = (-1, 0)
        let mut b = ExprBuilder::new(2);
        let x1 = b.coord(0);
        let x2 = b.coord(1);
        let a = b.abs(x2);
        let neg = b.scale(-1.0, x2);
        let second = b.sum(vec![a, neg]);
        let root = b.concat(vec![x1, second]);
        let g = b.finish(root).unwrap();
        let f = poly_expr(2, vec![(1.0, vec![2, 0])]);
        let p = NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(2), vec![0.0, 0.0], &t)
            .unwrap();
        assert_eq!(p.g.dd1(&[0.0, 0.0], &[-1.0, 1.0], &t).unwrap(), vec![-1.0, 0.0]);
        assert!(p.linearized_tangent_member(&[-1.0, 1.0], &t).unwrap());
    }

    #[test]
    fn first_order_fixture_holds() {
        let t = tols();
        let p = canonical_fixture();
        let rep = p.first_order_check(Sampler::default(), &t).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert_eq!(rep.mode, CheckMode::Pieces);
        assert!(rep.min_value >= -1e-12);
    }

    #[test]
    fn first_order_descent_violated() {
        let t = tols();
        // f = x, G = x, K = R_-: witness d = -1
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![1])]));
        let rep = p.first_order_check(Sampler::default(), &t).unwrap();
        assert!(!rep.holds);
        let w = rep.witness.expect("witness");
        assert!(w[0] < 0.0);
        assert!((rep.min_value + 1.0).abs() < 1e-9);
        // witness is genuine descent along the feasible ray
        for step in [1e-3, 1e-2, 0.1] {
            let x = vec![w[0] * step];
            assert!(p.g.eval(&x).unwrap()[0] <= 0.0);
            assert!(p.f.eval(&x).unwrap()[0] < p.f.eval(&[0.0]).unwrap()[0]);
        }
    }

    #[test]
    fn first_order_flat_quadratic_holds() {
        let t = tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![2])]));
        let rep = p.first_order_check(Sampler::default(), &t).unwrap();
        assert!(rep.holds);
    }

    #[test]
    fn critical_cone_of_fixture() {
        let t = tols();
        let p = canonical_fixture();
        let dirs = p.critical_cone_sample(128, 0, &t).unwrap();
        assert!(!dirs.is_empty());
        for d in &dirs {
            // cone is {d1 = 0, d2 >= 0}
            assert!(d[0].abs() < 1e-7, "{d:?}");
            assert!(d[1] > 0.0, "{d:?}");
        }
        assert!(dirs.iter().any(|d| (d[1] - 1.0).abs() < 1e-7));
    }

    #[test]
    fn critical_cone_of_quadratic() {
        let t = tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![2])]));
        let dirs = p.critical_cone_sample(16, 0, &t).unwrap();
        assert_eq!(dirs.len(), 1);
        assert!((dirs[0][0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn critical_cone_empty_for_increasing_objective() {
        let t = tols();
        // f = x on K = R_- with G = -x: tangent cone {d >= 0}, f' = d > 0
        let f = poly_expr(1, vec![(1.0, vec![1])]);
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let root = b.scale(-1.0, x);
        let g = b.finish(root).unwrap();
        let p = NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(1), vec![0.0], &tols())
            .unwrap();
        let dirs = p.critical_cone_sample(16, 0, &t).unwrap();
        assert!(dirs.is_empty());
    }

    #[test]
    fn second_order_value_fixture() {
        let t = tols();
        let p = canonical_fixture();
        // d = (0,1): value = min |w1| + 2 = 2
        let v = p.second_order_value(&[0.0, 1.0], &t).unwrap();
        assert!((v.soc_value - 2.0).abs() < 1e-8, "{v:?}");
        assert!(v.certificate.is_some());
    }

    #[test]
    fn second_order_value_quadratic() {
        let t =tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![2])]));
        let v = p.second_order_value(&[-1.0], &t).unwrap();
        assert!((v.soc_value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn second_order_value_cubic_degenerate() {
        let t = tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![3])]));
        let v = p.second_order_value(&[-1.0], &t).unwrap();
        assert!(v.soc_value.abs() < 1e-9, "{v:?}");
    }

    #[test]
    fn second_order_scale_invariance() {
        let t = tols();
        let p = canonical_fixture();
        let base = p.second_order_value(&[0.0, 1.0], &t).unwrap().soc_value;
        for s in [0.5, 2.0] {
            let v = p.second_order_value(&[0.0, s], &t).unwrap().soc_value;
            assert!((v - s * s * base).abs() < 1e-8, "scale {s}: {v} vs {}", s * s * base);
        }
    }

    #[test]
    fn sufficient_sweep_fixture_certified() {
        let t = tols();
        let p = canonical_fixture();
        let rep = p.sufficient_sweep(Sampler::default(), &t).unwrap();
        assert_eq!(rep.verdict, SweepVerdict::CertifiedPositive);
        assert!((rep.margin - 2.0).abs() < 1e-8, "{rep:?}");
    }

    #[test]
    fn sufficient_sweep_cubic_degenerate() {
        let t = tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![3])]));
        let rep = p.sufficient_sweep(Sampler::default(), &t).unwrap();
        assert_eq!(rep.verdict, SweepVerdict::DegenerateZero);
        assert!(rep.margin.abs() < 1e-9);
        assert!(!rep.witnesses.is_empty());
    }

    #[test]
    fn sufficient_sweep_vacuous() {
        let t = tols();
        let f = poly_expr(1, vec![(1.0, vec![1])]);
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let root = b.scale(-1.0, x);
        let g = b.finish(root).unwrap();
        let p = NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(1), vec![0.0], &tols())
            .unwrap();
        let rep = p.sufficient_sweep(Sampler::default(), &t).unwrap();
        assert_eq!(rep.verdict, SweepVerdict::Vacuous);
        assert_eq!(rep.margin, f64::INFINITY);
    }

    #[test]
    fn growth_grid_matches_certified_margin() {
        let t = tols();
        // margin 2 certified: grid growth must be at least margin/4
        let p = canonical_fixture();
        let rep = p.growth_grid(0.1, 11, &t).unwrap();
        assert!(rep.gamma_hat >= 0.5, "{rep:?}");
        assert_eq!(rep.violations, 0);

        // the cubic fixture has no positive growth on the feasible side
        let q = scalar_program(poly_expr(1, vec![(1.0, vec![3])]));
        let rep = q.growth_grid(0.1, 11, &t).unwrap();
        assert!(rep.gamma_hat <= 1e-9);
        assert!(rep.violations > 0);
    }

    #[test]
    fn mscq_probe_identity_bounded() {
        let t = tols();
        let p = scalar_program(poly_expr(1, vec![(1.0, vec![2])]));
        // here G = x, Psi = K: every ratio is 1
        let rep = p.mscq_probe(0.5, 24, 0, &t).unwrap();
        assert_eq!(rep.verdict, MscqVerdict::Bounded);
        for (_, ratio) in &rep.levels {
            assert!(*ratio <= 1.0 + 1e-6, "{rep:?}");
        }
    }

    #[test]
    fn mscq_probe_squared_equation_suspect() {
        let t = tols();
        // G(x) = x^2, K = {0}: kappa blows up like 1/|x|
        let f = poly_expr(1, vec![(1.0, vec![1])]);
        let g = poly_expr(1, vec![(1.0, vec![2])]);
        let p = NonsmoothProgram::new(f, g, PolyhedralSet::zero(1), vec![0.0], &tols()).unwrap();
        let rep = p.mscq_probe(0.5, 24, 0, &t).unwrap();
        assert_eq!(rep.verdict, MscqVerdict::Suspect, "{rep:?}");
    }

    #[test]
    fn mscq_probe_affine_full_rank_bounded() {
        let t = tols();
        // G(x) = (x1 + x2, x1 - x2) with K = R_-^2
        let mut b = ExprBuilder::new(2);
        let x = b.input();
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let root = b.affine(a, vec![0.0, 0.0], vec![x]);
        let g = b.finish(root).unwrap();
        let f = poly_expr(2, vec![(1.0, vec![2, 0]), (1.0, vec![0, 2])]);
        let p = NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(2), vec![0.0, 0.0], &tols())
            .unwrap();
        let rep = p.mscq_probe(0.4, 24, 1, &t).unwrap();
        assert_eq!(rep.verdict, MscqVerdict::Bounded, "{rep:?}");
    }

    #[test]
    fn infeasible_reference_rejected() {
        let f = poly_expr(1, vec![(1.0, vec![2])]);
        let g = poly_expr(1, vec![(1.0, vec![1])]);
        let err = NonsmoothProgram::new(f, g, PolyhedralSet::nonpos_orthant(1), vec![1.0], &tols())
            .unwrap_err();
        assert!(matches!(err, NsoptError::InfeasibleReference { .. }));
    }
}
