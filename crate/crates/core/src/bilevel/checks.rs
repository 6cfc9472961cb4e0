//! SP/FP optimality checks for the bilevel problem.
//!
//! The implicit-function form (SP) works in the upper variable only, with
//! `y'(x*; d_x)` supplied by the piecewise sensitivity systems; the
//! first-order form (FP) carries `(d_x, d_y, d_mu, d_xi)` explicitly with
//! the linearized KKT rows as constraints. Under SSOSC + LICQ the two forms
//! are provably equivalent and every check here computes both and asserts
//! they agree; under MFCQ + SSOSC + CRCQ only, `y'` and `y''` fall back to
//! numeric differencing of the tracked KKT system and results are flagged
//! `numeric` with the FP comparison recorded but not enforced.

use super::kkt::KktPoint;
use super::sensitivity::SensitivityPiece;
use super::{BilevelError, BilevelProblem};
use crate::linalg::{self, DenseMatrix, LuFactors};
use crate::lp::{self, LpStatus};
use crate::sampling;
use crate::tol::Tolerances;

/// Upper-level data frozen at the reference pair.
struct UpperData {
    f_grad: Vec<f64>,
    f_hess: DenseMatrix,
    g_jac: DenseMatrix,
    h_jac: DenseMatrix,
    g_hess: Vec<DenseMatrix>,
    h_hess: Vec<DenseMatrix>,
    active_g: Vec<usize>,
}

impl UpperData {
    fn new(bp: &BilevelProblem, tol: &Tolerances) -> Self {
        let z = bp.reference_point();
        UpperData {
            f_grad: bp.upper_obj.gradient(&z),
            f_hess: bp.upper_obj.hessian(&z),
            g_jac: bp.upper_ineq.jacobian(&z),
            h_jac: bp.upper_eq.jacobian(&z),
            g_hess: (0..bp.upper_ineq.len())
                .map(|i| bp.upper_ineq.component(i).hessian(&z))
                .collect(),
            h_hess: (0..bp.upper_eq.len())
                .map(|i| bp.upper_eq.component(i).hessian(&z))
                .collect(),
            active_g: bp.upper_active_set(tol),
        }
    }
}

/// `grad_x - M_W^T grad_y` for a joint gradient.
fn reduced_row(grad: &[f64], m_w: &DenseMatrix, nx: usize) -> Vec<f64> {
    let mut row = grad[..nx].to_vec();
    for j in 0..nx {
        for i in 0..m_w.rows() {
            row[j] -= m_w.get(i, j) * grad[nx + i];
        }
    }
    row
}

/// Top `m` rows of `H(x, W)`: `y' = -M_W d_x` on the piece.
fn y_block(piece: &SensitivityPiece, m: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m, piece.h.cols());
    for i in 0..m {
        for j in 0..piece.h.cols() {
            out.set(i, j, piece.h.get(i, j));
        }
    }
    out
}

/// Linear row of `dz_k(d_x)` on a piece: the first-order movement of
/// `z_k = g_k + xi_k`.
fn dz_row(
    bp: &BilevelProblem,
    piece: &SensitivityPiece,
    jac_g_lower: &DenseMatrix,
    m_w: &DenseMatrix,
    k: usize,
) -> Vec<f64> {
    let n = bp.nx;
    let m = bp.ny;
    let r = bp.lower_eq.len();
    let grad = jac_g_lower.row(k);
    let mut row = grad[..n].to_vec();
    for j in 0..n {
        for i in 0..m {
            row[j] -= grad[n + i] * m_w.get(i, j);
        }
        row[j] -= piece.h.get(m + r + k, j);
    }
    row
}

#[derive(Clone, Debug)]
pub struct GmfcqPerW {
    pub w_diag: Vec<f64>,
    pub sp_holds: bool,
    pub fp_holds: bool,
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct GmfcqReport {
    pub holds: bool,
    pub per_w: Vec<GmfcqPerW>,
}

impl BilevelProblem {
    /// GMFCQ for the SP and FP reformulations, per W piece, with the
    /// equivalence of the two forms asserted.
    pub fn gmfcq_check(&self, kkt: &KktPoint, tol: &Tolerances) -> Result<GmfcqReport, BilevelError> {
        let upper = UpperData::new(self, tol);
        let pieces = self.sensitivity_pieces(kkt, tol)?;
        let z = self.reference_point();
        let n = self.nx;
        let m = self.ny;
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        let p = self.upper_eq.len();
        let jac_h_lower = self.lower_eq.jacobian(&z);
        let jac_g_lower = self.lower_ineq.jacobian(&z);
        let hess_l = self.lagrangian_hessian(&z, &kkt.mu, &kkt.xi);

        let mut per_w = Vec::new();
        let mut holds = true;
        for piece in &pieces {
            let m_w = y_block(piece, m);
            // SP form: reduced upper-equality Jacobian has full row rank and
            // a strict-descent direction exists for the active G rows
            let reduced_h: Vec<Vec<f64>> = (0..p)
                .map(|i| reduced_row(upper.h_jac.row(i), &m_w, n))
                .collect();
            let rank_ok = if p == 0 {
                true
            } else {
                linalg::rank(&DenseMatrix::from_rows(&reduced_h)?, tol.activity) == p
            };
            let (sp_strict, witness) = if !rank_ok {
                (false, None)
            } else {
                // max sigma with reduced_h d = 0, reduced_g d + sigma <= 0
                let nv = n + 1;
                let mut obj = vec![0.0; nv];
                obj[n] = -1.0;
                let mut eq = Vec::new();
                for row in &reduced_h {
                    let mut a = row.clone();
                    a.push(0.0);
                    eq.push((a, 0.0));
                }
                let mut ineq = Vec::new();
                for &i in &upper.active_g {
                    let mut a = reduced_row(upper.g_jac.row(i), &m_w, n);
                    a.push(1.0);
                    ineq.push((a, 0.0));
                }
                let mut cap = vec![0.0; nv];
                cap[n] = 1.0;
                ineq.push((cap, 1.0));
                for i in 0..n {
                    let mut a = vec![0.0; nv];
                    a[i] = 1.0;
                    ineq.push((a.clone(), 1.0));
                    a[i] = -1.0;
                    ineq.push((a, 1.0));
                }
                let res = lp::lp_solve(&lp::LinearProgram::from_rows(obj, &eq, &ineq)?, tol)?;
                match res.status {
                    LpStatus::Optimal if -res.optimum > tol.activity => {
                        (true, Some(res.solution[..n].to_vec()))
                    }
                    _ => (false, None),
                }
            };
            let sp_holds = rank_ok && sp_strict;

            // FP form over (d_x, d_y, d_mu, d_xi)
            let nv = n + m + r + s;
            let mut a_rows: Vec<Vec<f64>> = Vec::new();
            for i in 0..p {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(upper.h_jac.row(i));
                a_rows.push(row);
            }
            for i in 0..m {
                let mut row = vec![0.0; nv];
                for j in 0..n {
                    row[j] = hess_l.get(n + i, j);
                }
                for j in 0..m {
                    row[n + j] = hess_l.get(n + i, n + j);
                }
                for jj in 0..r {
                    row[n + m + jj] = jac_h_lower.get(jj, n + i);
                }
                for kk in 0..s {
                    row[n + m + r + kk] = jac_g_lower.get(kk, n + i);
                }
                a_rows.push(row);
            }
            for jj in 0..r {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(jac_h_lower.row(jj));
                a_rows.push(row);
            }
            for kk in 0..s {
                let mut row = vec![0.0; nv];
                let factor = 1.0 - piece.w_diag[kk];
                for j in 0..n + m {
                    row[j] = factor * jac_g_lower.get(kk, j);
                }
                row[n + m + r + kk] = -piece.w_diag[kk];
                a_rows.push(row);
            }
            let big = DenseMatrix::from_rows(&a_rows)?;
            let fp_rank_ok = linalg::rank(&big, tol.activity) == a_rows.len();
            let fp_strict = if !fp_rank_ok {
                false
            } else {
                let mut obj = vec![0.0; nv + 1];
                obj[nv] = -1.0;
                let mut eq = Vec::new();
                for row in &a_rows {
                    let mut a = row.clone();
                    a.push(0.0);
                    eq.push((a, 0.0));
                }
                let mut ineq = Vec::new();
                for &i in &upper.active_g {
                    let mut a = vec![0.0; nv + 1];
                    a[..n + m].copy_from_slice(upper.g_jac.row(i));
                    a[nv] = 1.0;
                    ineq.push((a, 0.0));
                }
                let mut cap = vec![0.0; nv + 1];
                cap[nv] = 1.0;
                ineq.push((cap, 1.0));
                for i in 0..nv {
                    let mut a = vec![0.0; nv + 1];
                    a[i] = 1.0;
                    ineq.push((a.clone(), 1.0));
                    a[i] = -1.0;
                    ineq.push((a, 1.0));
                }
                let res = lp::lp_solve(&lp::LinearProgram::from_rows(obj, &eq, &ineq)?, tol)?;
                matches!(res.status, LpStatus::Optimal if -res.optimum > tol.activity)
            };
            let fp_holds = fp_rank_ok && fp_strict;
            if sp_holds != fp_holds {
                return Err(BilevelError::InvariantViolation(format!(
                    "GMFCQ SP ({sp_holds}) and FP ({fp_holds}) disagree for W = {:?}",
                    piece.w_diag
                )));
            }
            holds &= sp_holds;
            per_w.push(GmfcqPerW { w_diag: piece.w_diag.clone(), sp_holds, fp_holds, witness });
        }
        Ok(GmfcqReport { holds, per_w })
    }
}

/// Regime the first-order machinery operates in.
pub enum BilevelFirstOrder {
    /// A2+A4: exact piecewise sensitivity.
    Exact { pieces: Vec<SensitivityPiece> },
    /// A1-A3 only: numeric differencing of the tracked KKT system.
    Numeric,
}

#[derive(Clone, Debug)]
pub struct FirstOrderBilevelReport {
    pub exact: bool,
    pub sp_holds: bool,
    /// min of the linearized upper objective over the tested tangent
    /// directions (unit box for piece LPs, unit sphere when sampling)
    pub sp_min: f64,
    pub sp_witness: Option<Vec<f64>>,
    pub fp_holds: bool,
    pub fp_min: f64,
    /// true when A2+A4 held so SP = FP was asserted (not just recorded)
    pub equivalence_enforced: bool,
    pub pieces_tested: usize,
    pub directions_tested: usize,
}

/// Analysis context answering direction queries for one reference KKT
/// vertex; built once, reused by the first- and second-order checks.
pub struct BilevelAnalysis<'a> {
    pub bp: &'a BilevelProblem,
    pub kkt: KktPoint,
    pub regime: BilevelFirstOrder,
    upper: UpperData,
}

impl<'a> BilevelAnalysis<'a> {
    pub fn new(bp: &'a BilevelProblem, kkt: KktPoint, tol: &Tolerances) -> Result<Self, BilevelError> {
        let upper = UpperData::new(bp, tol);
        let regime = match bp.sensitivity_pieces(&kkt, tol) {
            Ok(pieces) => BilevelFirstOrder::Exact { pieces },
            Err(BilevelError::RequiresA2A4(_)) => BilevelFirstOrder::Numeric,
            Err(e) => return Err(e),
        };
        Ok(BilevelAnalysis { bp, kkt, regime, upper })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.regime, BilevelFirstOrder::Exact { .. })
    }

    /// `y'(x*; d_x)`, exact or numeric.
    pub fn y_dd1(&self, d_x: &[f64], tol: &Tolerances) -> Result<Vec<f64>, BilevelError> {
        match &self.regime {
            BilevelFirstOrder::Exact { pieces } => Ok(self
                .bp
                .solution_map_dd1_with(pieces, &self.kkt, d_x, tol)?
                .y1),
            BilevelFirstOrder::Numeric => Ok(self.bp.solution_map_dd1_numeric(d_x, tol)?.0),
        }
    }

    /// Membership of `d_x` in the linearized tangent cone of the SP
    /// feasible set.
    pub fn tangent_member(&self, d_x: &[f64], tol: &Tolerances) -> Result<bool, BilevelError> {
        let y1 = self.y_dd1(d_x, tol)?;
        let mut d_joint = d_x.to_vec();
        d_joint.extend_from_slice(&y1);
        let slack = membership_slack(self, tol);
        for i in 0..self.bp.upper_eq.len() {
            if linalg::dot(self.upper.h_jac.row(i), &d_joint).abs() > slack {
                return Ok(false);
            }
        }
        for &i in &self.upper.active_g {
            if linalg::dot(self.upper.g_jac.row(i), &d_joint) > slack {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `F̂'(x*; d_x)` along the solution mapping.
    pub fn objective_d1(&self, d_x: &[f64], tol: &Tolerances) -> Result<f64, BilevelError> {
        let y1 = self.y_dd1(d_x, tol)?;
        let mut d_joint = d_x.to_vec();
        d_joint.extend_from_slice(&y1);
        Ok(linalg::dot(&self.upper.f_grad, &d_joint))
    }

    pub fn critical_member(&self, d_x: &[f64], tol: &Tolerances) -> Result<bool, BilevelError> {
        Ok(self.tangent_member(d_x, tol)?
            && self.objective_d1(d_x, tol)? <= membership_slack(self, tol))
    }

    /// First-order necessary condition in both forms.
    pub fn first_order_check(
        &self,
        count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<FirstOrderBilevelReport, BilevelError> {
        let (fp_holds, fp_min, _fp_witness) = self.fp_first_order_lp(tol)?;
        match &self.regime {
            BilevelFirstOrder::Exact { pieces } => {
                let mut sp_min = f64::INFINITY;
                let mut sp_witness = None;
                let n = self.bp.nx;
                let z = self.bp.reference_point();
                let jac_g_lower = self.bp.lower_ineq.jacobian(&z);
                let g_lower = self.bp.lower_ineq.values(&z);
                for piece in pieces {
                    let m_w = y_block(piece, self.bp.ny);
                    let c = reduced_row(&self.upper.f_grad, &m_w, n);
                    let mut eq = Vec::new();
                    for i in 0..self.bp.upper_eq.len() {
                        eq.push((reduced_row(self.upper.h_jac.row(i), &m_w, n), 0.0));
                    }
                    let mut ineq = Vec::new();
                    for &i in &self.upper.active_g {
                        ineq.push((reduced_row(self.upper.g_jac.row(i), &m_w, n), 0.0));
                    }
                    for k in 0..g_lower.len() {
                        if (g_lower[k] + self.kkt.xi[k]).abs() > tol.degenerate_z {
                            continue;
                        }
                        let row = dz_row(self.bp, piece, &jac_g_lower, &m_w, k);
                        if piece.w_diag[k] == 1.0 {
                            ineq.push((row, 0.0));
                        } else {
                            ineq.push((linalg::scale(&row, -1.0), 0.0));
                        }
                    }
                    for i in 0..n {
                        let mut a = vec![0.0; n];
                        a[i] = 1.0;
                        ineq.push((a.clone(), 1.0));
                        a[i] = -1.0;
                        ineq.push((a, 1.0));
                    }
                    let res = lp::lp_solve(&lp::LinearProgram::from_rows(c, &eq, &ineq)?, tol)?;
                    if let LpStatus::Optimal = res.status {
                        if res.optimum < sp_min {
                            sp_min = res.optimum;
                            if res.optimum < -tol.check_slack {
                                sp_witness = Some(res.solution.clone());
                            }
                        }
                    }
                }
                if sp_min == f64::INFINITY {
                    sp_min = 0.0;
                }
                let sp_holds = sp_min >= -tol.check_slack;
                if sp_holds != fp_holds || (sp_min - fp_min).abs() > 1e-7 * (1.0 + sp_min.abs()) {
                    return Err(BilevelError::InvariantViolation(format!(
                        "first-order SP ({sp_holds}, {sp_min:.3e}) vs FP ({fp_holds}, {fp_min:.3e})"
                    )));
                }
                Ok(FirstOrderBilevelReport {
                    exact: true,
                    sp_holds,
                    sp_min,
                    sp_witness,
                    fp_holds,
                    fp_min,
                    equivalence_enforced: true,
                    pieces_tested: pieces.len(),
                    directions_tested: 0,
                })
            }
            BilevelFirstOrder::Numeric => {
                let mut sp_min: f64 = 0.0;
                let mut sp_witness = None;
                let mut tested = 0;
                let dirs =
                    dedup_directions(sampling::unit_sphere(self.bp.nx, count, seed), tol);
                for d in dirs {
                    if !self.tangent_member(&d, tol)? {
                        continue;
                    }
                    tested += 1;
                    let v = self.objective_d1(&d, tol)?;
                    if v < sp_min {
                        sp_min = v;
                        if v < -membership_slack(self, tol) {
                            sp_witness = Some(d.clone());
                        }
                    }
                }
                let sp_holds = sp_witness.is_none();
                Ok(FirstOrderBilevelReport {
                    exact: false,
                    sp_holds,
                    sp_min,
                    sp_witness,
                    fp_holds,
                    fp_min,
                    equivalence_enforced: false,
                    pieces_tested: 0,
                    directions_tested: tested,
                })
            }
        }
    }

    /// FP first-order LPs over `(d_x, d_y, d_mu, d_xi)`: one per projection
    /// branch of the degenerate complementarity coordinates.
    fn fp_first_order_lp(&self, tol: &Tolerances) -> Result<(bool, f64, Option<Vec<f64>>), BilevelError> {
        let bp = self.bp;
        let (n, m, r, s) = (bp.nx, bp.ny, bp.lower_eq.len(), bp.lower_ineq.len());
        let nv = n + m + r + s;
        let z = bp.reference_point();
        let jac_h_lower = bp.lower_eq.jacobian(&z);
        let jac_g_lower = bp.lower_ineq.jacobian(&z);
        let g_lower = bp.lower_ineq.values(&z);
        let hess_l = bp.lagrangian_hessian(&z, &self.kkt.mu, &self.kkt.xi);

        let degenerate: Vec<usize> = (0..s)
            .filter(|&k| (g_lower[k] + self.kkt.xi[k]).abs() <= tol.degenerate_z)
            .collect();
        if degenerate.len() > 16 {
            return Err(BilevelError::ScaleExceeded(format!(
                "{} degenerate complementarity indices",
                degenerate.len()
            )));
        }
        let mut best_min = f64::INFINITY;
        let mut witness = None;
        for mask in 0u32..(1 << degenerate.len()) {
            let mut w = vec![0.0f64; s];
            for k in 0..s {
                let zk = g_lower[k] + self.kkt.xi[k];
                if zk < -tol.degenerate_z {
                    w[k] = 1.0;
                }
            }
            for (bit, &k) in degenerate.iter().enumerate() {
                w[k] = if mask & (1 << bit) != 0 { 1.0 } else { 0.0 };
            }
            let mut obj = vec![0.0; nv];
            obj[..n + m].copy_from_slice(&self.upper.f_grad);
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for i in 0..bp.upper_eq.len() {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(self.upper.h_jac.row(i));
                eq.push((row, 0.0));
            }
            for &i in &self.upper.active_g {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(self.upper.g_jac.row(i));
                ineq.push((row, 0.0));
            }
            for i in 0..m {
                let mut row = vec![0.0; nv];
                for j in 0..n + m {
                    row[j] = hess_l.get(n + i, j);
                }
                for jj in 0..r {
                    row[n + m + jj] = jac_h_lower.get(jj, n + i);
                }
                for kk in 0..s {
                    row[n + m + r + kk] = jac_g_lower.get(kk, n + i);
                }
                eq.push((row, 0.0));
            }
            for jj in 0..r {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(jac_h_lower.row(jj));
                eq.push((row, 0.0));
            }
            for k in 0..s {
                let mut g_row = vec![0.0; nv];
                g_row[..n + m].copy_from_slice(jac_g_lower.row(k));
                let mut xi_row = vec![0.0; nv];
                xi_row[n + m + r + k] = 1.0;
                let mut dz = g_row.clone();
                dz[n + m + r + k] += 1.0;
                if w[k] == 1.0 {
                    // identity branch: d_xi_k = 0, movement stays nonpositive
                    eq.push((xi_row, 0.0));
                    if degenerate.contains(&k) {
                        ineq.push((dz, 0.0));
                    }
                } else {
                    // zero branch: constraint stays active, multiplier moves up
                    eq.push((g_row, 0.0));
                    if degenerate.contains(&k) {
                        ineq.push((linalg::scale(&dz, -1.0), 0.0));
                    }
                }
            }
            for i in 0..n {
                let mut a = vec![0.0; nv];
                a[i] = 1.0;
                ineq.push((a.clone(), 1.0));
                a[i] = -1.0;
                ineq.push((a, 1.0));
            }
            let res = lp::lp_solve(&lp::LinearProgram::from_rows(obj, &eq, &ineq)?, tol)?;
            match res.status {
                LpStatus::Optimal => {
                    if res.optimum < best_min {
                        best_min = res.optimum;
                        if res.optimum < -tol.check_slack {
                            witness = Some(res.solution[..n].to_vec());
                        }
                    }
                }
                LpStatus::Unbounded => {
                    best_min = f64::NEG_INFINITY;
                    witness = res.solution.get(..n).map(|v| v.to_vec());
                }
                LpStatus::Infeasible => {}
            }
        }
        if best_min == f64::INFINITY {
            best_min = 0.0;
        }
        Ok((best_min >= -tol.check_slack, best_min, witness))
    }

    /// Unit critical directions: piece-cone extreme rays (exact regime)
    /// plus filtered sphere samples.
    pub fn critical_directions(
        &self,
        count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<Vec<Vec<f64>>, BilevelError> {
        let n = self.bp.nx;
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
        if let BilevelFirstOrder::Exact { pieces } = &self.regime {
            let z = self.bp.reference_point();
            let jac_g_lower = self.bp.lower_ineq.jacobian(&z);
            let g_lower = self.bp.lower_ineq.values(&z);
            for piece in pieces {
                let m_w = y_block(piece, self.bp.ny);
                let mut a_rows: Vec<Vec<f64>> = Vec::new();
                for &i in &self.upper.active_g {
                    a_rows.push(reduced_row(self.upper.g_jac.row(i), &m_w, n));
                }
                for k in 0..g_lower.len() {
                    if (g_lower[k] + self.kkt.xi[k]).abs() > tol.degenerate_z {
                        continue;
                    }
                    let row = dz_row(self.bp, piece, &jac_g_lower, &m_w, k);
                    if piece.w_diag[k] == 1.0 {
                        a_rows.push(row);
                    } else {
                        a_rows.push(linalg::scale(&row, -1.0));
                    }
                }
                a_rows.push(reduced_row(&self.upper.f_grad, &m_w, n));
                let c_rows: Vec<Vec<f64>> = (0..self.bp.upper_eq.len())
                    .map(|i| reduced_row(self.upper.h_jac.row(i), &m_w, n))
                    .collect();
                let rows = a_rows.len();
                let cone = crate::cones::PolyhedralSet::HForm(crate::cones::HForm {
                    a: DenseMatrix::from_rows(&a_rows)?,
                    b: vec![0.0; rows],
                    c: if c_rows.is_empty() {
                        DenseMatrix::zeros(0, n)
                    } else {
                        DenseMatrix::from_rows(&c_rows)?
                    },
                    e: vec![0.0; c_rows.len()],
                });
                if let Ok(gens) = cone.generators(tol) {
                    for gen in gens {
                        if self.critical_member(&gen, tol)? {
                            push(gen, &mut dirs);
                        }
                    }
                }
            }
        }
        for d in dedup_directions(sampling::unit_sphere(n, count, seed), tol) {
            if self.critical_member(&d, tol)? {
                push(d, &mut dirs);
            }
        }
        Ok(dirs)
    }
}

fn dedup_directions(dirs: Vec<Vec<f64>>, tol: &Tolerances) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(dirs.len());
    for d in dirs {
        if !out.iter().any(|u| linalg::norm2(&linalg::sub(u, &d)) <= tol.dedup) {
            out.push(d);
        }
    }
    out
}

fn membership_slack(analysis: &BilevelAnalysis, tol: &Tolerances) -> f64 {
    match analysis.regime {
        BilevelFirstOrder::Exact { .. } => tol.check_slack,
        // numeric y' carries extrapolation noise
        BilevelFirstOrder::Numeric => (tol.check_slack * 10.0).max(1e-7),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualForm {
    Sp,
    Fp,
    Both,
}

#[derive(Clone, Debug)]
pub struct DualPerW {
    pub w_diag: Vec<f64>,
    pub sp_feasible: bool,
    pub fp_feasible: bool,
    /// `(lambda_H, lambda_G)` from the SP system when feasible.
    pub sp_lambda: Option<(Vec<f64>, Vec<f64>)>,
    /// `(lambda_H, lambda_G, lambda_L, lambda_h, lambda_g)` from FP.
    pub fp_lambda: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct DualReport {
    pub holds: bool,
    pub per_w: Vec<DualPerW>,
}

impl<'a> BilevelAnalysis<'a> {
    /// Dual first-order conditions: existence of upper multipliers for the
    /// SP stationarity system and for the full FP system, per W piece, with
    /// the equivalence asserted.
    pub fn dual_multipliers(&self, tol: &Tolerances) -> Result<DualReport, BilevelError> {
        let BilevelFirstOrder::Exact { pieces } = &self.regime else {
            return Err(BilevelError::RequiresA2A4(
                "dual systems need H(x*, W*), unavailable without LICQ".into(),
            ));
        };
        let bp = self.bp;
        let (n, m, r, s) = (bp.nx, bp.ny, bp.lower_eq.len(), bp.lower_ineq.len());
        let p = bp.upper_eq.len();
        let act = &self.upper.active_g;
        let z = bp.reference_point();
        let jac_h_lower = bp.lower_eq.jacobian(&z);
        let jac_g_lower = bp.lower_ineq.jacobian(&z);
        let hess_l = bp.lagrangian_hessian(&z, &self.kkt.mu, &self.kkt.xi);

        let mut per_w = Vec::new();
        let mut holds = false;
        for piece in pieces {
            let m_w = y_block(piece, m);
            // SP: find (lambda_H, lambda_G >= 0 on active rows) with
            // reduced(F) + sum lambda_H reduced(H) + sum lambda_G reduced(G) = 0
            let nv = p + act.len();
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            let rf = reduced_row(&self.upper.f_grad, &m_w, n);
            for j in 0..n {
                let mut row = vec![0.0; nv];
                for (col, i) in (0..p).enumerate() {
                    row[col] = reduced_row(self.upper.h_jac.row(i), &m_w, n)[j];
                }
                for (col, &i) in act.iter().enumerate() {
                    row[p + col] = reduced_row(self.upper.g_jac.row(i), &m_w, n)[j];
                }
                eq.push((row, -rf[j]));
            }
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for col in 0..act.len() {
                let mut row = vec![0.0; nv];
                row[p + col] = -1.0;
                ineq.push((row, 0.0));
            }
            let sp = lp::lp_solve(&lp::LinearProgram::from_rows(vec![0.0; nv], &eq, &ineq)?, tol)?;
            let sp_feasible = sp.status != LpStatus::Infeasible;
            let sp_lambda = sp_feasible.then(|| {
                let lh = sp.solution[..p].to_vec();
                let mut lg = vec![0.0; bp.upper_ineq.len()];
                for (col, &i) in act.iter().enumerate() {
                    lg[i] = sp.solution[p + col];
                }
                (lh, lg)
            });

            // FP: variables (lambda_H, lambda_G(active), lambda_L, lambda_h, lambda_g)
            let nv = p + act.len() + m + r + s;
            let col_h = 0;
            let col_g = p;
            let col_l = p + act.len();
            let col_lh = col_l + m;
            let col_lg = col_lh + r;
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            // joint (x,y) stationarity rows
            for j in 0..n + m {
                let mut row = vec![0.0; nv];
                for i in 0..p {
                    row[col_h + i] = self.upper.h_jac.get(i, j);
                }
                for (col, &i) in act.iter().enumerate() {
                    row[col_g + col] = self.upper.g_jac.get(i, j);
                }
                for i in 0..m {
                    row[col_l + i] = hess_l.get(j, n + i);
                }
                for jj in 0..r {
                    row[col_lh + jj] = jac_h_lower.get(jj, j);
                }
                for kk in 0..s {
                    row[col_lg + kk] = (1.0 - piece.w_diag[kk]) * jac_g_lower.get(kk, j);
                }
                eq.push((row, -self.upper.f_grad[j]));
            }
            // J_y h lambda_L = 0
            for jj in 0..r {
                let mut row = vec![0.0; nv];
                for i in 0..m {
                    row[col_l + i] = jac_h_lower.get(jj, n + i);
                }
                eq.push((row, 0.0));
            }
            // J_y g lambda_L - W lambda_g = 0
            for kk in 0..s {
                let mut row = vec![0.0; nv];
                for i in 0..m {
                    row[col_l + i] = jac_g_lower.get(kk, n + i);
                }
                row[col_lg + kk] = -piece.w_diag[kk];
                eq.push((row, 0.0));
            }
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for col in 0..act.len() {
                let mut row = vec![0.0; nv];
                row[col_g + col] = -1.0;
                ineq.push((row, 0.0));
            }
            let fp = lp::lp_solve(&lp::LinearProgram::from_rows(vec![0.0; nv], &eq, &ineq)?, tol)?;
            let fp_feasible = fp.status != LpStatus::Infeasible;
            if sp_feasible != fp_feasible {
                return Err(BilevelError::InvariantViolation(format!(
                    "dual SP ({sp_feasible}) vs FP ({fp_feasible}) for W = {:?}",
                    piece.w_diag
                )));
            }
            let mut residual = 0.0f64;
            if let Some((lh, lg)) = &sp_lambda {
                let mut res = rf.clone();
                for (i, v) in lh.iter().enumerate() {
                    res = linalg::axpy(&res, *v, &reduced_row(self.upper.h_jac.row(i), &m_w, n));
                }
                for (i, v) in lg.iter().enumerate() {
                    if *v != 0.0 {
                        res = linalg::axpy(&res, *v, &reduced_row(self.upper.g_jac.row(i), &m_w, n));
                    }
                }
                residual = linalg::norm_inf(&res);
            }
            let fp_lambda = fp_feasible.then(|| {
                let sol = &fp.solution;
                let lh = sol[col_h..col_h + p].to_vec();
                let mut lg = vec![0.0; bp.upper_ineq.len()];
                for (col, &i) in act.iter().enumerate() {
                    lg[i] = sol[col_g + col];
                }
                (
                    lh,
                    lg,
                    sol[col_l..col_l + m].to_vec(),
                    sol[col_lh..col_lh + r].to_vec(),
                    sol[col_lg..col_lg + s].to_vec(),
                )
            });
            holds |= sp_feasible;
            per_w.push(DualPerW {
                w_diag: piece.w_diag.clone(),
                sp_feasible,
                fp_feasible,
                sp_lambda,
                fp_lambda,
                residual,
            });
        }
        Ok(DualReport { holds, per_w })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecondOrderMode {
    Necessary,
    Sufficient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BilevelSecondOrder {
    /// Positive margin on every tested unit critical direction: the point
    /// is a strict bi-local minimizer (up to the sampling caveat).
    CertifiedPositive,
    DegenerateZero,
    NecessaryViolated,
    /// Empty critical cone.
    Vacuous,
}

#[derive(Clone, Debug)]
pub struct DirectionOutcome {
    pub d_x: Vec<f64>,
    pub sp_value: f64,
    pub fp_value: Option<f64>,
    pub piece: String,
}

#[derive(Clone, Debug)]
pub struct SecondOrderBilevelReport {
    pub exact: bool,
    pub margin: f64,
    pub verdict: BilevelSecondOrder,
    pub per_direction: Vec<DirectionOutcome>,
    pub caveat: String,
}

impl<'a> BilevelAnalysis<'a> {
    /// Second-order check over the critical cone: for each direction the
    /// inner problem minimizes the upper second-order expansion over the
    /// parabolic correction, subject to the second-order feasibility rows.
    pub fn second_order_check(
        &self,
        count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<SecondOrderBilevelReport, BilevelError> {
        let dirs = self.critical_directions(count, seed, tol)?;
        if dirs.is_empty() {
            return Ok(SecondOrderBilevelReport {
                exact: self.is_exact(),
                margin: f64::INFINITY,
                verdict: BilevelSecondOrder::Vacuous,
                per_direction: vec![],
                caveat: "critical cone empty on tested directions".into(),
            });
        }
        let mut per_direction = Vec::new();
        let mut margin = f64::INFINITY;
        for d in &dirs {
            let outcome = if self.is_exact() {
                self.second_order_direction_exact(d, tol)?
            } else {
                self.second_order_direction_numeric(d, seed, tol)?
            };
            margin = margin.min(outcome.sp_value);
            per_direction.push(outcome);
        }
        let verdict = if margin > tol.check_slack {
            BilevelSecondOrder::CertifiedPositive
        } else if margin >= -membership_slack(self, tol) {
            BilevelSecondOrder::DegenerateZero
        } else {
            BilevelSecondOrder::NecessaryViolated
        };
        Ok(SecondOrderBilevelReport {
            exact: self.is_exact(),
            margin,
            verdict,
            per_direction,
            caveat: if self.is_exact() {
                "margin holds on tested unit critical directions".into()
            } else {
                "numeric solution-map derivatives; margin approximate".into()
            },
        })
    }

    fn second_order_direction_exact(
        &self,
        d_x: &[f64],
        tol: &Tolerances,
    ) -> Result<DirectionOutcome, BilevelError> {
        let bp = self.bp;
        let (n, m, r, s) = (bp.nx, bp.ny, bp.lower_eq.len(), bp.lower_ineq.len());
        let BilevelFirstOrder::Exact { pieces } = &self.regime else {
            unreachable!("exact path requires the exact regime");
        };
        let first = bp.solution_map_dd1_with(pieces, &self.kkt, d_x, tol)?;
        let mut d_joint = d_x.to_vec();
        d_joint.extend_from_slice(&first.y1);
        let z = bp.reference_point();
        let jac_g_lower = bp.lower_ineq.jacobian(&z);
        let g_lower = bp.lower_ineq.values(&z);
        let curvature =
            bp.second_order_rhs(&self.kkt, &z, &d_joint, &first.mu1, &first.xi1, true)?;
        let slack1 = tol.feasibility * (1.0 + linalg::norm2(d_x));
        // strictly active upper rows along this direction
        let i_g1: Vec<usize> = self
            .upper
            .active_g
            .iter()
            .copied()
            .filter(|&i| linalg::dot(self.upper.g_jac.row(i), &d_joint).abs() <= slack1)
            .collect();

        // classify complementarity coordinates by (z_k, dz_k)
        let mut dz = vec![0.0; s];
        for k in 0..s {
            let grad = jac_g_lower.row(k);
            dz[k] = linalg::dot(&grad[..n], d_x)
                + linalg::dot(&grad[n..], &first.y1)
                + first.xi1[k];
        }
        let mut base = vec![0.0f64; s];
        let mut doubly = Vec::new();
        for k in 0..s {
            let zk = g_lower[k] + self.kkt.xi[k];
            if zk < -tol.degenerate_z {
                base[k] = 1.0;
            } else if zk > tol.degenerate_z {
                base[k] = 0.0;
            } else if dz[k] < -slack1 {
                base[k] = 1.0;
            } else if dz[k] > slack1 {
                base[k] = 0.0;
            } else {
                doubly.push(k);
            }
        }

        let quad = |h: &DenseMatrix| linalg::dot(&d_joint, &h.matvec(&d_joint));
        let f_const = quad(&self.upper.f_hess);
        let mut sp_best = f64::INFINITY;
        let mut sp_feasible = false;
        let mut fp_best = f64::INFINITY;
        let mut fp_feasible = false;
        let mut best_piece = String::from("infeasible");

        for mask in 0u32..(1 << doubly.len()) {
            let mut w2 = base.clone();
            for (bit, &k) in doubly.iter().enumerate() {
                w2[k] = if mask & (1 << bit) != 0 { 1.0 } else { 0.0 };
            }
            // triple2(wx) = -(h2 wx + c_full)
            let a2 = super::sensitivity::assemble_a(bp, &z, &self.kkt.mu, &self.kkt.xi, &w2);
            let lu = LuFactors::factor(&a2, tol)
                .map_err(|_| BilevelError::SingularSensitivity { w: w2.clone() })?;
            let mut rx = DenseMatrix::zeros(m + r + s, n);
            for i in 0..m {
                for j in 0..n {
                    rx.set(i, j, curvature.hess_yx.get(i, j));
                }
            }
            for jj in 0..r {
                for j in 0..n {
                    rx.set(m + jj, j, curvature.jac_h.get(jj, j));
                }
            }
            for kk in 0..s {
                for j in 0..n {
                    rx.set(m + r + kk, j, (1.0 - w2[kk]) * jac_g_lower.get(kk, j));
                }
            }
            let mut r0 = vec![0.0; m + r + s];
            r0[..m].copy_from_slice(&curvature.a_vec);
            r0[m..m + r].copy_from_slice(&curvature.kappa);
            for kk in 0..s {
                r0[m + r + kk] = (1.0 - w2[kk]) * curvature.beta[kk];
            }
            let h2 = lu.solve_matrix(&rx);
            let c_full = lu.solve(&r0);
            // y2(wx) = -(h2[..m] wx + c_full[..m])
            let affine_joint = |grad: &[f64]| -> (Vec<f64>, f64) {
                // grad·(wx, y2(wx)) as row·wx + off
                let mut row = grad[..n].to_vec();
                let mut off = 0.0;
                for i in 0..m {
                    let gy = grad[n + i];
                    off -= gy * c_full[i];
                    for j in 0..n {
                        row[j] -= gy * h2.get(i, j);
                    }
                }
                (row, off)
            };
            let (obj_row, obj_off) = affine_joint(&self.upper.f_grad);
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for i in 0..bp.upper_eq.len() {
                let (row, off) = affine_joint(self.upper.h_jac.row(i));
                eq.push((row, -(quad(&self.upper.h_hess[i]) + off)));
            }
            for &i in &i_g1 {
                let (row, off) = affine_joint(self.upper.g_jac.row(i));
                ineq.push((row, -(quad(&self.upper.g_hess[i]) + off)));
            }
            for &k in &doubly {
                // wz_k(wx) = beta_k + ∇g_k (wx, y2) + wxi_k
                let (mut row, mut off) = affine_joint(jac_g_lower.row(k));
                off += curvature.beta[k];
                off -= c_full[m + r + k];
                for j in 0..n {
                    row[j] -= h2.get(m + r + k, j);
                }
                if w2[k] == 1.0 {
                    ineq.push((row, -off));
                } else {
                    ineq.push((linalg::scale(&row, -1.0), off));
                }
            }
            let res = lp::lp_solve(&lp::LinearProgram::from_rows(obj_row, &eq, &ineq)?, tol)?;
            match res.status {
                LpStatus::Infeasible => {}
                LpStatus::Unbounded => {
                    sp_feasible = true;
                    if f64::NEG_INFINITY < sp_best {
                        sp_best = f64::NEG_INFINITY;
                        best_piece = format!("W2 = {w2:?} (unbounded)");
                    }
                }
                LpStatus::Optimal => {
                    sp_feasible = true;
                    let value = f_const + obj_off + res.optimum;
                    if value < sp_best {
                        sp_best = value;
                        best_piece = format!("W2 = {w2:?}");
                    }
                }
            }

            // FP inner LP over (wx, wy, wmu, wxi)
            let nv = n + m + r + s;
            let mut obj = vec![0.0; nv];
            obj[..n + m].copy_from_slice(&self.upper.f_grad);
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for i in 0..bp.upper_eq.len() {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(self.upper.h_jac.row(i));
                eq.push((row, -quad(&self.upper.h_hess[i])));
            }
            for &i in &i_g1 {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(self.upper.g_jac.row(i));
                ineq.push((row, -quad(&self.upper.g_hess[i])));
            }
            let hess_l = bp.lagrangian_hessian(&z, &self.kkt.mu, &self.kkt.xi);
            let jac_h_lower = bp.lower_eq.jacobian(&z);
            for i in 0..m {
                let mut row = vec![0.0; nv];
                for j in 0..n + m {
                    row[j] = hess_l.get(n + i, j);
                }
                for jj in 0..r {
                    row[n + m + jj] = jac_h_lower.get(jj, n + i);
                }
                for kk in 0..s {
                    row[n + m + r + kk] = jac_g_lower.get(kk, n + i);
                }
                eq.push((row, -curvature.a_vec[i]));
            }
            for jj in 0..r {
                let mut row = vec![0.0; nv];
                row[..n + m].copy_from_slice(jac_h_lower.row(jj));
                eq.push((row, -curvature.kappa[jj]));
            }
            for k in 0..s {
                let mut g_row = vec![0.0; nv];
                g_row[..n + m].copy_from_slice(jac_g_lower.row(k));
                let mut xi_row = vec![0.0; nv];
                xi_row[n + m + r + k] = 1.0;
                let mut wz = g_row.clone();
                wz[n + m + r + k] += 1.0;
                if w2[k] == 1.0 {
                    eq.push((xi_row, 0.0));
                    if doubly.contains(&k) {
                        ineq.push((wz, -curvature.beta[k]));
                    }
                } else {
                    eq.push((g_row, -curvature.beta[k]));
                    if doubly.contains(&k) {
                        ineq.push((linalg::scale(&wz, -1.0), curvature.beta[k]));
                    }
                }
            }
            let res = lp::lp_solve(&lp::LinearProgram::from_rows(obj, &eq, &ineq)?, tol)?;
            match res.status {
                LpStatus::Infeasible => {}
                LpStatus::Unbounded => {
                    fp_feasible = true;
                    fp_best = f64::NEG_INFINITY;
                }
                LpStatus::Optimal => {
                    fp_feasible = true;
                    fp_best = fp_best.min(f_const + res.optimum);
                }
            }
        }
        let sp_value = if sp_feasible { sp_best } else { f64::INFINITY };
        let fp_value = if fp_feasible { fp_best } else { f64::INFINITY };
        let close = if sp_value.is_finite() && fp_value.is_finite() {
            (sp_value - fp_value).abs() <= 1e-7 * (1.0 + sp_value.abs())
        } else {
            sp_value == fp_value
        };
        if !close {
            return Err(BilevelError::InvariantViolation(format!(
                "second-order SP value {sp_value:.6e} vs FP value {fp_value:.6e} at d_x = {d_x:?}"
            )));
        }
        Ok(DirectionOutcome {
            d_x: d_x.to_vec(),
            sp_value,
            fp_value: Some(fp_value),
            piece: best_piece,
        })
    }

    fn second_order_direction_numeric(
        &self,
        d_x: &[f64],
        seed: u64,
        tol: &Tolerances,
    ) -> Result<DirectionOutcome, BilevelError> {
        let bp = self.bp;
        let n = bp.nx;
        let (y1, err1) = bp.solution_map_dd1_numeric(d_x, tol)?;
        let mut d_joint = d_x.to_vec();
        d_joint.extend_from_slice(&y1);
        let quad = |h: &DenseMatrix| linalg::dot(&d_joint, &h.matvec(&d_joint));
        let slack = (100.0 * err1).max(1e-6);
        let i_g1: Vec<usize> = self
            .upper
            .active_g
            .iter()
            .copied()
            .filter(|&i| linalg::dot(self.upper.g_jac.row(i), &d_joint).abs() <= slack)
            .collect();
        // candidate parabolic corrections
        let mut candidates: Vec<Vec<f64>> = vec![vec![0.0; n]];
        for i in 0..n {
            for mag in [0.5, 1.0, 2.0, 4.0] {
                let mut w = vec![0.0; n];
                w[i] = mag;
                candidates.push(w.clone());
                w[i] = -mag;
                candidates.push(w);
            }
        }
        for dir in sampling::unit_sphere(n, 8, seed ^ 0x50) {
            for mag in [1.0, 3.0] {
                candidates.push(linalg::scale(&dir, mag));
            }
        }
        let f_const = quad(&self.upper.f_hess);
        let mut best = f64::INFINITY;
        for w_x in &candidates {
            let (y2, err2) = bp.solution_map_dd2_numeric(d_x, w_x, &y1, tol)?;
            let mut w_joint = w_x.clone();
            w_joint.extend_from_slice(&y2);
            let ntol = (100.0 * (err1 + err2)).max(1e-6);
            let mut feasible = true;
            for i in 0..bp.upper_eq.len() {
                let v = quad(&self.upper.h_hess[i])
                    + linalg::dot(self.upper.h_jac.row(i), &w_joint);
                if v.abs() > ntol {
                    feasible = false;
                    break;
                }
            }
            if feasible {
                for &i in &i_g1 {
                    let v = quad(&self.upper.g_hess[i])
                        + linalg::dot(self.upper.g_jac.row(i), &w_joint);
                    if v > ntol {
                        feasible = false;
                        break;
                    }
                }
            }
            if feasible {
                let value = f_const + linalg::dot(&self.upper.f_grad, &w_joint);
                best = best.min(value);
            }
        }
        Ok(DirectionOutcome {
            d_x: d_x.to_vec(),
            sp_value: best,
            fp_value: None,
            piece: "numeric".into(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct GrowthReport {
    /// Largest quadratic-growth constant consistent with the samples.
    pub gamma_hat: f64,
    /// Feasible samples with negative growth ratios.
    pub violations: Vec<(Vec<f64>, f64)>,
    pub samples_used: usize,
    pub feasible_count: usize,
    pub tracking_failures: usize,
}

/// Sample the ball, track the lower solution, and fit the largest growth
/// constant `gamma_hat` with `F(x, y(x)) >= F* + gamma ||x - x*||²` on the
/// upper-feasible samples.
pub fn growth_probe(
    bp: &BilevelProblem,
    radius: f64,
    count: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<GrowthReport, BilevelError> {
    assert!(radius > 0.0);
    let z_star = bp.reference_point();
    let f_star = bp.upper_obj.value(&z_star);
    let mut failures = 0;
    let mut used = 0;
    let mut feasible_count = 0;
    let mut gamma_hat = f64::INFINITY;
    let mut violations = Vec::new();
    for x in sampling::ball(&bp.x_star, radius, count, seed) {
        let dist = linalg::norm2(&linalg::sub(&x, &bp.x_star));
        if dist < 1e-8 {
            continue;
        }
        used += 1;
        let tracked = match bp.kkt_track_best(&x, tol) {
            Ok(p) => p,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let mut z = x.clone();
        z.extend_from_slice(&tracked.y);
        let upper_ok = bp
            .upper_eq
            .values(&z)
            .iter()
            .all(|v| v.abs() <= 10.0 * tol.feasibility)
            && bp
                .upper_ineq
                .values(&z)
                .iter()
                .all(|v| *v <= 10.0 * tol.feasibility);
        if !upper_ok {
            continue;
        }
        feasible_count += 1;
        let ratio = (bp.upper_obj.value(&z) - f_star) / (dist * dist);
        if ratio < gamma_hat {
            gamma_hat = ratio;
        }
        // samples that preclude any positive growth constant
        if ratio <= tol.check_slack {
            violations.push((x, ratio));
        }
    }
    if used > 0 && failures * 10 > used {
        return Err(BilevelError::TrackDivergence(format!(
            "{failures} of {used} samples failed to track"
        )));
    }
    if gamma_hat == f64::INFINITY {
        gamma_hat = 0.0;
    }
    Ok(GrowthReport { gamma_hat: gamma_hat.max(0.0), violations, samples_used: used, feasible_count, tracking_failures: failures })
}
