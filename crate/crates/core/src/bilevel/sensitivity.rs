//! Piecewise KKT sensitivity: the matrices `A(x,W)` and `H(x,W)` and the
//! exact first- and second-order directional derivatives of the local
//! solution mapping `(y(x), mu(x), xi(x))`.
//!
//! `W` ranges over the B-subdifferential vertices of the projection onto
//! the nonpositive orthant at `z = g + xi`: strictly negative coordinates
//! force the identity branch (`W_ii = 1`), strictly positive ones the zero
//! branch (`W_ii = 0`), and coordinates at the kink are branched both ways.
//! A direction accepts a piece when the linearized `z`-movement has the
//! sign the branch presumes; all accepting pieces must agree on the triple,
//! and a disagreement is reported as an error rather than tie-broken.

use super::kkt::KktPoint;
use super::{BilevelError, BilevelProblem};
use crate::linalg::{self, DenseMatrix, LuFactors};
use crate::tol::Tolerances;

/// One branch selection with its assembled sensitivity system.
#[derive(Clone, Debug)]
pub struct SensitivityPiece {
    /// Diagonal of `W` (entries 0.0 or 1.0).
    pub w_diag: Vec<f64>,
    /// `A(x,W)`, size `(m+r+s)²`.
    pub a: DenseMatrix,
    /// `H(x,W) = A(x,W)^{-1} [∇²_yx L; J_x h; (I-W) J_x g]`, size `(m+r+s) x n`.
    pub h: DenseMatrix,
}

/// First-order directional derivative of the solution mapping.
#[derive(Clone, Debug)]
pub struct FirstOrderTriple {
    pub y1: Vec<f64>,
    pub mu1: Vec<f64>,
    pub xi1: Vec<f64>,
    /// W diagonals of every piece that accepted the direction.
    pub accepted: Vec<Vec<f64>>,
}

/// First- and second-order derivatives along `(d_x, w_x)`.
#[derive(Clone, Debug)]
pub struct SolutionMapJet {
    pub d_x: Vec<f64>,
    pub w_x: Vec<f64>,
    pub y1: Vec<f64>,
    pub mu1: Vec<f64>,
    pub xi1: Vec<f64>,
    pub y2: Vec<f64>,
    pub mu2: Vec<f64>,
    pub xi2: Vec<f64>,
    /// W diagonals accepted at first and second order.
    pub piece_trace: (Vec<Vec<f64>>, Vec<Vec<f64>>),
    /// True when the second order came from numeric differencing.
    pub numeric: bool,
}

/// Assemble `A(x,W)` at the joint point `z` with multipliers `(mu, xi)`.
pub(super) fn assemble_a(
    bp: &BilevelProblem,
    z: &[f64],
    mu: &[f64],
    xi: &[f64],
    w_diag: &[f64],
) -> DenseMatrix {
    let m = bp.ny;
    let r = bp.lower_eq.len();
    let s = bp.lower_ineq.len();
    let dim = m + r + s;
    let hess = bp.lagrangian_hessian(z, mu, xi);
    let jac_h = bp.lower_eq.jacobian(z);
    let jac_g = bp.lower_ineq.jacobian(z);
    let mut a = DenseMatrix::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            a.set(i, j, hess.get(bp.nx + i, bp.nx + j));
        }
        for jj in 0..r {
            a.set(i, m + jj, jac_h.get(jj, bp.nx + i));
        }
        for kk in 0..s {
            a.set(i, m + r + kk, jac_g.get(kk, bp.nx + i));
        }
    }
    for jj in 0..r {
        for j in 0..m {
            a.set(m + jj, j, jac_h.get(jj, bp.nx + j));
        }
    }
    for kk in 0..s {
        let factor = 1.0 - w_diag[kk];
        for j in 0..m {
            a.set(m + r + kk, j, factor * jac_g.get(kk, bp.nx + j));
        }
        a.set(m + r + kk, m + r + kk, -w_diag[kk]);
    }
    a
}

/// Right-hand side `[∇²_yx L; J_x h; (I-W) J_x g]`, `(m+r+s) x n`.
fn assemble_rhs(
    bp: &BilevelProblem,
    z: &[f64],
    mu: &[f64],
    xi: &[f64],
    w_diag: &[f64],
) -> DenseMatrix {
    let m = bp.ny;
    let r = bp.lower_eq.len();
    let s = bp.lower_ineq.len();
    let n = bp.nx;
    let hess = bp.lagrangian_hessian(z, mu, xi);
    let jac_h = bp.lower_eq.jacobian(z);
    let jac_g = bp.lower_ineq.jacobian(z);
    let mut rhs = DenseMatrix::zeros(m + r + s, n);
    for i in 0..m {
        for j in 0..n {
            rhs.set(i, j, hess.get(bp.nx + i, j));
        }
    }
    for jj in 0..r {
        for j in 0..n {
            rhs.set(m + jj, j, jac_h.get(jj, j));
        }
    }
    for kk in 0..s {
        let factor = 1.0 - w_diag[kk];
        for j in 0..n {
            rhs.set(m + r + kk, j, factor * jac_g.get(kk, j));
        }
    }
    rhs
}

impl BilevelProblem {
    /// All B-subdifferential vertices `W` of the projection at
    /// `z = g + xi`; kink coordinates are branched, capped at 16.
    pub fn enumerate_w(&self, kkt: &KktPoint, tol: &Tolerances) -> Result<Vec<Vec<f64>>, BilevelError> {
        if kkt.residual > tol.kkt_residual {
            return Err(BilevelError::Dimension(format!(
                "kkt residual {:.3e} above tolerance",
                kkt.residual
            )));
        }
        let mut z = self.x_star.clone();
        z.extend_from_slice(&kkt.y);
        let g = self.lower_ineq.values(&z);
        let s = g.len();
        let mut degenerate = Vec::new();
        let mut base = vec![0.0; s];
        for k in 0..s {
            let zk = g[k] + kkt.xi[k];
            if zk < -tol.degenerate_z {
                base[k] = 1.0;
            } else if zk > tol.degenerate_z {
                base[k] = 0.0;
            } else {
                degenerate.push(k);
            }
        }
        if degenerate.len() > 16 {
            return Err(BilevelError::ScaleExceeded(format!(
                "{} degenerate complementarity indices",
                degenerate.len()
            )));
        }
        let mut out = Vec::with_capacity(1 << degenerate.len());
        for mask in 0u32..(1 << degenerate.len()) {
            let mut w = base.clone();
            for (bit, &k) in degenerate.iter().enumerate() {
                w[k] = if mask & (1 << bit) != 0 { 1.0 } else { 0.0 };
            }
            out.push(w);
        }
        Ok(out)
    }

    /// Assemble one sensitivity piece; refuses without SSOSC + LICQ, under
    /// which `A(x,W)` is guaranteed nonsingular.
    pub fn assemble_sensitivity(
        &self,
        kkt: &KktPoint,
        w_diag: &[f64],
        tol: &Tolerances,
    ) -> Result<SensitivityPiece, BilevelError> {
        self.require_a2_a4(tol)?;
        self.assemble_sensitivity_unchecked(kkt, w_diag, tol)
    }

    fn assemble_sensitivity_unchecked(
        &self,
        kkt: &KktPoint,
        w_diag: &[f64],
        tol: &Tolerances,
    ) -> Result<SensitivityPiece, BilevelError> {
        let mut z = self.x_star.clone();
        z.extend_from_slice(&kkt.y);
        let a = assemble_a(self, &z, &kkt.mu, &kkt.xi, w_diag);
        let rhs = assemble_rhs(self, &z, &kkt.mu, &kkt.xi, w_diag);
        let lu = LuFactors::factor(&a, tol)
            .map_err(|_| BilevelError::SingularSensitivity { w: w_diag.to_vec() })?;
        let h = lu.solve_matrix(&rhs);
        // A · H must reproduce the right-hand side
        let check = a.matmul(&h);
        let mut dev: f64 = 0.0;
        for i in 0..check.rows() {
            for j in 0..check.cols() {
                dev = dev.max((check.get(i, j) - rhs.get(i, j)).abs());
            }
        }
        if dev > 1e-9 * (1.0 + rhs.max_abs()) {
            return Err(BilevelError::SingularSensitivity { w: w_diag.to_vec() });
        }
        Ok(SensitivityPiece { w_diag: w_diag.to_vec(), a, h })
    }

    pub(super) fn require_a2_a4(&self, tol: &Tolerances) -> Result<(), BilevelError> {
        let cq = self.cq_report(4, 0, tol)?;
        if !cq.licq.holds {
            return Err(BilevelError::RequiresA2A4(format!(
                "LICQ fails: rank {} of {} active gradients",
                cq.licq.rank, cq.licq.gradient_count
            )));
        }
        if !cq.ssosc.holds {
            return Err(BilevelError::RequiresA2A4(format!(
                "SSOSC fails: margin {:.3e}",
                cq.ssosc.margin
            )));
        }
        Ok(())
    }

    /// Exact first-order directional derivative of the solution mapping:
    /// `[dy; dmu; dxi] = -H(x*, W) d_x` on the piece whose branch signs
    /// accept `d_x`.
    pub fn solution_map_dd1(
        &self,
        kkt: &KktPoint,
        d_x: &[f64],
        tol: &Tolerances,
    ) -> Result<FirstOrderTriple, BilevelError> {
        let pieces = self.sensitivity_pieces(kkt, tol)?;
        self.solution_map_dd1_with(&pieces, kkt, d_x, tol)
    }

    /// Assemble every W piece once; reuse across directions. The A2+A4
    /// gate runs once, not per piece.
    pub fn sensitivity_pieces(
        &self,
        kkt: &KktPoint,
        tol: &Tolerances,
    ) -> Result<Vec<SensitivityPiece>, BilevelError> {
        self.require_a2_a4(tol)?;
        self.enumerate_w(kkt, tol)?
            .into_iter()
            .map(|w| self.assemble_sensitivity_unchecked(kkt, &w, tol))
            .collect()
    }

    pub fn solution_map_dd1_with(
        &self,
        pieces: &[SensitivityPiece],
        kkt: &KktPoint,
        d_x: &[f64],
        tol: &Tolerances,
    ) -> Result<FirstOrderTriple, BilevelError> {
        let m = self.ny;
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        let mut z = self.x_star.clone();
        z.extend_from_slice(&kkt.y);
        let jac_g = self.lower_ineq.jacobian(&z);
        let g = self.lower_ineq.values(&z);
        let slack = tol.feasibility * (1.0 + linalg::norm2(d_x));

        let mut accepted: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for piece in pieces {
            let triple = linalg::scale(&piece.h.matvec(d_x), -1.0);
            let mut ok = true;
            for k in 0..s {
                let zk = g[k] + kkt.xi[k];
                if zk.abs() > tol.degenerate_z {
                    continue;
                }
                // dz_k = ∇g_k · (d_x, dy) + dxi_k
                let grad = jac_g.row(k);
                let mut dz = 0.0;
                for j in 0..self.nx {
                    dz += grad[j] * d_x[j];
                }
                for i in 0..m {
                    dz += grad[self.nx + i] * triple[i];
                }
                dz += triple[m + r + k];
                let fits = if piece.w_diag[k] == 1.0 { dz <= slack } else { dz >= -slack };
                if !fits {
                    ok = false;
                    break;
                }
            }
            if ok {
                accepted.push((piece.w_diag.clone(), triple));
            }
        }
        if accepted.is_empty() {
            return Err(BilevelError::NoAcceptingPiece(format!("d_x = {d_x:?}")));
        }
        let reference = &accepted[0].1;
        for (w, triple) in &accepted[1..] {
            let dev = linalg::norm_inf(&linalg::sub(triple, reference));
            if dev > tol.kkt_residual * (1.0 + linalg::norm_inf(reference)) {
                return Err(BilevelError::ConflictingPieces(format!(
                    "pieces {:?} and {:?} differ by {dev:.3e} on d_x = {d_x:?}",
                    accepted[0].0, w
                )));
            }
        }
        Ok(FirstOrderTriple {
            y1: reference[..m].to_vec(),
            mu1: reference[m..m + r].to_vec(),
            xi1: reference[m + r..].to_vec(),
            accepted: accepted.into_iter().map(|(w, _)| w).collect(),
        })
    }

    /// Exact second-order directional derivative along `(d_x, w_x)`.
    ///
    /// The second-order system reuses `A(x, W₂)` where `W₂` branches on the
    /// first-order movement `dz` of each kink coordinate; its right-hand
    /// side carries the third-order action of the Lagrangian and the
    /// constraint curvatures.
    pub fn solution_map_dd2(
        &self,
        kkt: &KktPoint,
        d_x: &[f64],
        w_x: &[f64],
        allow_fd_third_order: bool,
        tol: &Tolerances,
    ) -> Result<SolutionMapJet, BilevelError> {
        let first = self.solution_map_dd1(kkt, d_x, tol)?;
        self.solution_map_dd2_with(kkt, d_x, w_x, &first, allow_fd_third_order, tol)
    }

    pub fn solution_map_dd2_with(
        &self,
        kkt: &KktPoint,
        d_x: &[f64],
        w_x: &[f64],
        first: &FirstOrderTriple,
        allow_fd_third_order: bool,
        tol: &Tolerances,
    ) -> Result<SolutionMapJet, BilevelError> {
        let m = self.ny;
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        let n = self.nx;
        let mut z = self.x_star.clone();
        z.extend_from_slice(&kkt.y);
        let jac_g = self.lower_ineq.jacobian(&z);
        let g = self.lower_ineq.values(&z);

        // d-tilde = (d_x, y'), the joint first-order direction
        let mut d_joint = d_x.to_vec();
        d_joint.extend_from_slice(&first.y1);

        let curvature = self.second_order_rhs(kkt, &z, &d_joint, &first.mu1, &first.xi1, allow_fd_third_order)?;

        // classify kink coordinates by (z_k, dz_k)
        let mut dz = vec![0.0; s];
        for k in 0..s {
            let grad = jac_g.row(k);
            dz[k] = linalg::dot(&grad[..n], d_x)
                + linalg::dot(&grad[n..], &first.y1)
                + first.xi1[k];
        }
        let slack1 = tol.feasibility * (1.0 + linalg::norm2(d_x));
        let mut base = vec![0.0f64; s];
        let mut doubly = Vec::new();
        for k in 0..s {
            let zk = g[k] + kkt.xi[k];
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
        if doubly.len() > 16 {
            return Err(BilevelError::ScaleExceeded(format!(
                "{} doubly degenerate indices",
                doubly.len()
            )));
        }

        let slack2 =
            tol.feasibility * (1.0 + linalg::norm2(w_x) + linalg::norm2(&d_joint).powi(2));
        let mut accepted: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for mask in 0u32..(1 << doubly.len()) {
            let mut w2 = base.clone();
            for (bit, &k) in doubly.iter().enumerate() {
                w2[k] = if mask & (1 << bit) != 0 { 1.0 } else { 0.0 };
            }
            let a = assemble_a(self, &z, &kkt.mu, &kkt.xi, &w2);
            let lu = LuFactors::factor(&a, tol)
                .map_err(|_| BilevelError::SingularSensitivity { w: w2.clone() })?;
            // rhs = [a_vec + ∇²_yx L w_x; J_x h w_x + kappa; (I-W2)(J_x g w_x + beta)]
            let mut rhs = vec![0.0; m + r + s];
            for i in 0..m {
                rhs[i] = curvature.a_vec[i] + linalg::dot(&curvature.hess_yx_row(i), w_x);
            }
            for j in 0..r {
                rhs[m + j] = curvature.kappa[j] + linalg::dot(curvature.jac_h.row(j).split_at(n).0, w_x);
            }
            for k in 0..s {
                let gxw = linalg::dot(&jac_g.row(k)[..n], w_x);
                rhs[m + r + k] = (1.0 - w2[k]) * (gxw + curvature.beta[k]);
            }
            let neg: Vec<f64> = rhs.iter().map(|v| -v).collect();
            let sol = lu.solve(&neg);
            // acceptance on the doubly degenerate coordinates:
            // wz_k = beta_k + ∇g_k · (w_x, wy) + wxi_k
            let mut ok = true;
            for &k in &doubly {
                let grad = jac_g.row(k);
                let mut wz = curvature.beta[k] + linalg::dot(&grad[..n], w_x);
                for i in 0..m {
                    wz += grad[n + i] * sol[i];
                }
                wz += sol[m + r + k];
                let fits = if w2[k] == 1.0 { wz <= slack2 } else { wz >= -slack2 };
                if !fits {
                    ok = false;
                    break;
                }
            }
            if ok {
                accepted.push((w2, sol));
            }
        }
        if accepted.is_empty() {
            return Err(BilevelError::NoAcceptingPiece(format!(
                "second order, d_x = {d_x:?}, w_x = {w_x:?}"
            )));
        }
        let reference = &accepted[0].1;
        for (w, sol) in &accepted[1..] {
            let dev = linalg::norm_inf(&linalg::sub(sol, reference));
            if dev > tol.kkt_residual * (1.0 + linalg::norm_inf(reference)) {
                return Err(BilevelError::ConflictingPieces(format!(
                    "second-order pieces {:?} and {:?} differ by {dev:.3e}",
                    accepted[0].0, w
                )));
            }
        }
        Ok(SolutionMapJet {
            d_x: d_x.to_vec(),
            w_x: w_x.to_vec(),
            y1: first.y1.clone(),
            mu1: first.mu1.clone(),
            xi1: first.xi1.clone(),
            y2: reference[..m].to_vec(),
            mu2: reference[m..m + r].to_vec(),
            xi2: reference[m + r..].to_vec(),
            piece_trace: (first.accepted.clone(), accepted.into_iter().map(|(w, _)| w).collect()),
            numeric: false,
        })
    }

    /// Curvature data entering the second-order right-hand side.
    pub(super) fn second_order_rhs(
        &self,
        kkt: &KktPoint,
        z: &[f64],
        d_joint: &[f64],
        mu1: &[f64],
        xi1: &[f64],
        allow_fd: bool,
    ) -> Result<CurvatureData, BilevelError> {
        let m = self.ny;
        let n = self.nx;
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        // a = y-block of [L-Hessian-dot(d) d + 2 (sum_j mu1_j ∇²h_j + sum_k xi1_k ∇²g_k) d]
        let hdot = self.lagrangian_hessian_dir(z, &kkt.mu, &kkt.xi, d_joint, allow_fd)?;
        let mut cross = DenseMatrix::zeros(n + m, n + m);
        for (j, &mj) in mu1.iter().enumerate() {
            cross = cross.add(&self.lower_eq.component(j).hessian(z).scale(mj));
        }
        for (k, &xk) in xi1.iter().enumerate() {
            cross = cross.add(&self.lower_ineq.component(k).hessian(z).scale(xk));
        }
        let total = hdot.add(&cross.scale(2.0));
        let td = total.matvec(d_joint);
        let a_vec = td[n..].to_vec();

        let jac_h = self.lower_eq.jacobian(z);
        let mut kappa = vec![0.0; r];
        for j in 0..r {
            let hj = self.lower_eq.component(j).hessian(z);
            kappa[j] = linalg::dot(d_joint, &hj.matvec(d_joint));
        }
        let mut beta = vec![0.0; s];
        for k in 0..s {
            let gk = self.lower_ineq.component(k).hessian(z);
            beta[k] = linalg::dot(d_joint, &gk.matvec(d_joint));
        }
        // the yx-block of the Lagrangian Hessian feeds the w_x coupling
        let hess = self.lagrangian_hessian(z, &kkt.mu, &kkt.xi);
        let mut hess_yx = DenseMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                hess_yx.set(i, j, hess.get(n + i, j));
            }
        }
        Ok(CurvatureData { a_vec, kappa, beta, hess_yx, jac_h })
    }

    /// Numeric fallback (A1-A3 regime): first derivative of `y(x)` by
    /// Richardson-extrapolated differencing of the tracked KKT system.
    pub fn solution_map_dd1_numeric(
        &self,
        d_x: &[f64],
        tol: &Tolerances,
    ) -> Result<(Vec<f64>, f64), BilevelError> {
        let ts: Vec<f64> = (6..=14).map(|k| 2f64.powi(-k)).collect();
        let mut quotients = Vec::with_capacity(ts.len());
        for &t in &ts {
            let x = linalg::axpy(&self.x_star, t, d_x);
            let p = self.kkt_track_best(&x, tol)?;
            let q: Vec<f64> = p
                .y
                .iter()
                .zip(&self.y_star)
                .map(|(a, b)| (a - b) / t)
                .collect();
            quotients.push(q);
        }
        let (val, err) = super::numdiff::extrapolate_quotients(&ts, &quotients);
        Ok((val, err))
    }

    /// Numeric second derivative of `y(x)` along the parabola
    /// `x* + t d + t²/2 w`, given the (numeric or exact) first derivative.
    pub fn solution_map_dd2_numeric(
        &self,
        d_x: &[f64],
        w_x: &[f64],
        y1: &[f64],
        tol: &Tolerances,
    ) -> Result<(Vec<f64>, f64), BilevelError> {
        let ts: Vec<f64> = (6..=14).map(|k| 2f64.powi(-k)).collect();
        let mut quotients = Vec::with_capacity(ts.len());
        for &t in &ts {
            let x = linalg::axpy(&linalg::axpy(&self.x_star, t, d_x), 0.5 * t * t, w_x);
            let p = self.kkt_track_best(&x, tol)?;
            let q: Vec<f64> = (0..self.ny)
                .map(|i| (p.y[i] - self.y_star[i] - t * y1[i]) / (0.5 * t * t))
                .collect();
            quotients.push(q);
        }
        let (val, err) = super::numdiff::extrapolate_quotients(&ts, &quotients);
        Ok((val, err))
    }
}

pub(super) struct CurvatureData {
    /// y-block curvature vector entering the stationarity rows.
    pub a_vec: Vec<f64>,
    /// `d̃ᵀ ∇²h_j d̃` per equality row.
    pub kappa: Vec<f64>,
    /// `d̃ᵀ ∇²g_k d̃` per inequality row.
    pub beta: Vec<f64>,
    pub hess_yx: DenseMatrix,
    pub jac_h: DenseMatrix,
}

impl CurvatureData {
    fn hess_yx_row(&self, i: usize) -> Vec<f64> {
        self.hess_yx.row(i).to_vec()
    }
}
