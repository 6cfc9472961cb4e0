//! Lower-level KKT analysis: multiplier polytope, constraint
//! qualifications A1-A4, and semismooth tracking of the KKT system.

use super::{BilevelError, BilevelProblem};
use crate::linalg::{self, DenseMatrix, Definiteness};
use crate::lp::{self, LpStatus};
use crate::sampling;
use crate::tol::Tolerances;

/// One lower-level KKT triple at a parameter value.
#[derive(Clone, Debug)]
pub struct KktPoint {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
    pub residual: f64,
}

/// `Λ_{x*}(y*)` described by its stationarity rows and enumerated vertices.
#[derive(Clone, Debug)]
pub struct MultiplierPolytope {
    /// Vertices as `(mu, xi)` pairs.
    pub vertices: Vec<(Vec<f64>, Vec<f64>)>,
    /// Stationarity rows over `(mu, xi)`: `rows · [mu; xi] = rhs`.
    pub eq_rows: Vec<(Vec<f64>, f64)>,
    /// Sign/complementarity rows: `rows · [mu; xi] <= rhs`.
    pub ineq_rows: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug)]
pub struct MfcqResult {
    pub holds: bool,
    pub witness: Option<Vec<f64>>,
    pub slack: f64,
}

#[derive(Clone, Debug)]
pub struct LicqResult {
    pub holds: bool,
    pub rank: usize,
    pub gradient_count: usize,
}

#[derive(Clone, Debug)]
pub struct CrcqProbe {
    pub consistent_ranks: bool,
    pub sample_count: usize,
    pub subsets_checked: usize,
}

#[derive(Clone, Debug)]
pub struct SsoscResult {
    pub holds: bool,
    /// Smallest reduced-Hessian pivot over all multiplier vertices.
    pub margin: f64,
    /// Per-vertex (vertex index, verdict, margin).
    pub per_vertex: Vec<(usize, Definiteness, f64)>,
}

/// A1-A4 report plus the index sets driving them.
#[derive(Clone, Debug)]
pub struct CqReport {
    pub mfcq: MfcqResult,
    pub licq: LicqResult,
    pub crcq_probe: CrcqProbe,
    pub ssosc: SsoscResult,
    /// Active inequality indices `I_{x*}(y*)`.
    pub active: Vec<usize>,
    /// Strictly complementary indices `I⁺` per multiplier vertex.
    pub strict_active_per_vertex: Vec<Vec<usize>>,
}

impl CqReport {
    pub fn a2_a4(&self) -> bool {
        self.ssosc.holds && self.licq.holds
    }

    pub fn a1_a3(&self) -> bool {
        self.mfcq.holds && self.ssosc.holds && self.crcq_probe.consistent_ranks
    }
}

impl BilevelProblem {
    /// Enumerate the multiplier polytope `Λ_{x*}(y*)`.
    ///
    /// Stationarity in `(mu, xi)` is linear; complementarity pins inactive
    /// `xi` to zero and active ones to the nonnegative half-line. Vertices
    /// come from basic-solution enumeration, capped at 64.
    pub fn multiplier_polytope(&self, tol: &Tolerances) -> Result<MultiplierPolytope, BilevelError> {
        let z = self.reference_point();
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        let m = self.ny;
        let grad_f_y = &self.lower_obj.gradient(&z)[self.nx..].to_vec();
        let jac_h = self.lower_eq.jacobian(&z);
        let jac_g = self.lower_ineq.jacobian(&z);
        let active = self.lower_active_set(tol);

        if r + s == 0 {
            // unconstrained lower problem: the only "multiplier" is empty
            let resid = linalg::norm2(grad_f_y);
            if resid > tol.kkt_residual {
                return Err(BilevelError::NoMultiplier);
            }
            return Ok(MultiplierPolytope { vertices: vec![(vec![], vec![])], eq_rows: vec![], ineq_rows: vec![] });
        }

        let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..m {
            let mut row = vec![0.0; r + s];
            for j in 0..r {
                row[j] = jac_h.get(j, self.nx + i);
            }
            for k in 0..s {
                row[r + k] = jac_g.get(k, self.nx + i);
            }
            eq_rows.push((row, -grad_f_y[i]));
        }
        let mut ineq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for k in 0..s {
            let mut row = vec![0.0; r + s];
            row[r + k] = -1.0;
            ineq_rows.push((row, 0.0));
        }
        // complementarity: inactive constraints force xi_k = 0
        for k in 0..s {
            if !active.contains(&k) {
                let mut row = vec![0.0; r + s];
                row[r + k] = 1.0;
                eq_rows.push((row, 0.0));
            }
        }
        let verts = lp::vertex_enumerate(&eq_rows, &ineq_rows, 64, tol)
            .map_err(|e| BilevelError::ScaleExceeded(e.to_string()))?;
        if verts.is_empty() {
            // distinguish "no vertex" from "empty": an unbounded multiplier
            // set without vertices cannot occur here because xi >= 0 and mu
            // solves equalities; emptiness is the only cause
            return Err(BilevelError::NoMultiplier);
        }
        let vertices: Vec<(Vec<f64>, Vec<f64>)> = verts
            .into_iter()
            .map(|v| (v[..r].to_vec(), v[r..].to_vec()))
            .collect();
        Ok(MultiplierPolytope { vertices, eq_rows, ineq_rows })
    }

    /// KKT point at the reference pair from a multiplier-polytope vertex.
    pub fn kkt_vertex(&self, index: usize, tol: &Tolerances) -> Result<KktPoint, BilevelError> {
        let poly = self.multiplier_polytope(tol)?;
        let (mu, xi) = poly
            .vertices
            .get(index)
            .cloned()
            .ok_or_else(|| BilevelError::Dimension(format!("vertex {index} out of range")))?;
        Ok(self.make_kkt(self.y_star.clone(), mu, xi))
    }

    pub fn make_kkt(&self, y: Vec<f64>, mu: Vec<f64>, xi: Vec<f64>) -> KktPoint {
        let residual = self.kkt_residual_at(&self.x_star, &y, &mu, &xi);
        KktPoint { y, mu, xi, residual }
    }

    /// `||F_KKT||_inf` at `(x, y, mu, xi)`.
    pub fn kkt_residual_at(&self, x: &[f64], y: &[f64], mu: &[f64], xi: &[f64]) -> f64 {
        let mut z = x.to_vec();
        z.extend_from_slice(y);
        let grad = self.lagrangian_grad_y(&z, mu, xi);
        let mut resid = linalg::norm_inf(&grad);
        for v in self.lower_eq.values(&z) {
            resid = resid.max(v.abs());
        }
        let g = self.lower_ineq.values(&z);
        for k in 0..g.len() {
            let zk = g[k] + xi[k];
            resid = resid.max((g[k] - zk.min(0.0)).abs());
        }
        resid
    }

    /// A1-A4 report at the reference pair.
    pub fn cq_report(&self, probe_count: usize, seed: u64, tol: &Tolerances) -> Result<CqReport, BilevelError> {
        let z = self.reference_point();
        let active = self.lower_active_set(tol);
        let jac_h = self.lower_eq.jacobian(&z);
        let jac_g = self.lower_ineq.jacobian(&z);
        let m = self.ny;
        let r = self.lower_eq.len();

        // MFCQ: independent equality gradients plus a strictly feasible
        // direction for the active inequalities, found by slack maximization
        let h_y_rows: Vec<Vec<f64>> = (0..r).map(|j| jac_h.row(j)[self.nx..].to_vec()).collect();
        let h_rank = if r == 0 {
            0
        } else {
            linalg::rank(&DenseMatrix::from_rows(&h_y_rows)?, tol.activity)
        };
        let mfcq = if h_rank < r {
            MfcqResult { holds: false, witness: None, slack: 0.0 }
        } else {
            // variables (d_y, sigma): max sigma
            let nv = m + 1;
            let mut obj = vec![0.0; nv];
            obj[m] = -1.0;
            let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
            for row in &h_y_rows {
                let mut a = row.clone();
                a.push(0.0);
                eq.push((a, 0.0));
            }
            let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
            for &k in &active {
                let mut a = jac_g.row(k)[self.nx..].to_vec();
                a.push(1.0);
                ineq.push((a, 0.0));
            }
            let mut sigma_cap = vec![0.0; nv];
            sigma_cap[m] = 1.0;
            ineq.push((sigma_cap, 1.0));
            for i in 0..m {
                let mut a = vec![0.0; nv];
                a[i] = 1.0;
                ineq.push((a.clone(), 1.0));
                a[i] = -1.0;
                ineq.push((a, 1.0));
            }
            let lp = lp::LinearProgram::from_rows(obj, &eq, &ineq)?;
            let res = lp::lp_solve(&lp, tol)?;
            match res.status {
                LpStatus::Optimal => {
                    let slack = -res.optimum;
                    let holds = slack > tol.activity;
                    let witness = holds.then(|| res.solution[..m].to_vec());
                    MfcqResult { holds, witness, slack }
                }
                _ => MfcqResult { holds: false, witness: None, slack: 0.0 },
            }
        };

        // LICQ: all active gradients together must be independent
        let mut act_rows = h_y_rows.clone();
        for &k in &active {
            act_rows.push(jac_g.row(k)[self.nx..].to_vec());
        }
        let licq = if act_rows.is_empty() {
            LicqResult { holds: true, rank: 0, gradient_count: 0 }
        } else {
            let rank = linalg::rank(&DenseMatrix::from_rows(&act_rows)?, tol.activity);
            LicqResult { holds: rank == act_rows.len(), rank, gradient_count: act_rows.len() }
        };

        let crcq_probe = self.crcq_probe(&active, probe_count, seed, tol)?;

        // SSOSC at every multiplier vertex
        let poly = self.multiplier_polytope(tol)?;
        let mut per_vertex = Vec::new();
        let mut strict_active_per_vertex = Vec::new();
        let mut margin = f64::INFINITY;
        let mut holds = true;
        for (vi, (mu, xi)) in poly.vertices.iter().enumerate() {
            let strict: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&k| xi[k] > tol.activity)
                .collect();
            let mut aff_rows = h_y_rows.clone();
            for &k in &strict {
                aff_rows.push(jac_g.row(k)[self.nx..].to_vec());
            }
            let hess = self.lagrangian_hessian(&z, mu, xi);
            let mut hess_yy = DenseMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    hess_yy.set(i, j, hess.get(self.nx + i, self.nx + j));
                }
            }
            let basis = if aff_rows.is_empty() {
                DenseMatrix::identity(m)
            } else {
                linalg::null_space_basis(&DenseMatrix::from_rows(&aff_rows)?, tol.activity)
            };
            let d = linalg::pd_on_subspace(&hess_yy, &basis, tol)?;
            if d.verdict != Definiteness::Positive {
                holds = false;
            }
            margin = margin.min(d.margin);
            per_vertex.push((vi, d.verdict, d.margin));
            strict_active_per_vertex.push(strict);
        }
        let ssosc = SsoscResult { holds, margin, per_vertex };

        Ok(CqReport { mfcq, licq, crcq_probe, ssosc, active, strict_active_per_vertex })
    }

    fn crcq_probe(
        &self,
        active: &[usize],
        probe_count: usize,
        seed: u64,
        tol: &Tolerances,
    ) -> Result<CrcqProbe, BilevelError> {
        let r = self.lower_eq.len();
        let subset_bits = active.len() + r;
        if subset_bits > 12 {
            return Err(BilevelError::ScaleExceeded(format!(
                "CRCQ probe over 2^{subset_bits} gradient subsets"
            )));
        }
        let z0 = self.reference_point();
        let count = probe_count.max(4);
        let points = sampling::ball(&z0, 0.05 * (1.0 + linalg::norm2(&z0)), count, seed);
        let mut consistent = true;
        let mut subsets_checked = 0;
        for mask in 1u32..(1 << subset_bits) {
            subsets_checked += 1;
            let mut base_rank: Option<usize> = None;
            for point in std::iter::once(&z0).chain(points.iter()) {
                let jac_h = self.lower_eq.jacobian(point);
                let jac_g = self.lower_ineq.jacobian(point);
                let mut rows: Vec<Vec<f64>> = Vec::new();
                for j in 0..r {
                    if mask & (1 << j) != 0 {
                        rows.push(jac_h.row(j)[self.nx..].to_vec());
                    }
                }
                for (idx, &k) in active.iter().enumerate() {
                    if mask & (1 << (r + idx)) != 0 {
                        rows.push(jac_g.row(k)[self.nx..].to_vec());
                    }
                }
                let rank = linalg::rank(&DenseMatrix::from_rows(&rows)?, tol.activity);
                match base_rank {
                    None => base_rank = Some(rank),
                    Some(b) if b != rank => {
                        consistent = false;
                    }
                    _ => {}
                }
            }
        }
        Ok(CrcqProbe { consistent_ranks: consistent, sample_count: count, subsets_checked })
    }

    /// Track the lower-level KKT system to a nearby parameter `x` by
    /// semismooth Newton on `F_KKT`, starting from `start`.
    pub fn kkt_track(&self, x: &[f64], start: &KktPoint, tol: &Tolerances) -> Result<KktPoint, BilevelError> {
        if x.len() != self.nx {
            return Err(BilevelError::Dimension(format!(
                "x has dim {}, expected {}",
                x.len(),
                self.nx
            )));
        }
        let m = self.ny;
        let r = self.lower_eq.len();
        let s = self.lower_ineq.len();
        let mut y = start.y.clone();
        let mut mu = start.mu.clone();
        let mut xi = start.xi.clone();
        let target = (tol.kkt_residual * 1e-2).min(1e-11);
        for _iter in 0..50 {
            let mut z = x.to_vec();
            z.extend_from_slice(&y);
            let grad = self.lagrangian_grad_y(&z, &mu, &xi);
            let h_vals = self.lower_eq.values(&z);
            let g_vals = self.lower_ineq.values(&z);
            let mut residual = vec![0.0; m + r + s];
            residual[..m].copy_from_slice(&grad);
            residual[m..m + r].copy_from_slice(&h_vals);
            let mut w = vec![0.0; s];
            for k in 0..s {
                let zk = g_vals[k] + xi[k];
                // B-subdifferential vertex: identity branch strictly below 0
                w[k] = if zk < 0.0 { 1.0 } else { 0.0 };
                residual[m + r + k] = g_vals[k] - zk.min(0.0);
            }
            let rnorm = linalg::norm_inf(&residual);
            if rnorm <= target {
                return Ok(KktPoint { y, mu, xi, residual: rnorm });
            }
            let a = super::sensitivity::assemble_a(self, &z, &mu, &xi, &w);
            let neg: Vec<f64> = residual.iter().map(|v| -v).collect();
            let delta = linalg::solve_linear(&a, &neg, tol)
                .map_err(|e| BilevelError::TrackDivergence(format!("Newton system: {e}")))?;
            for i in 0..m {
                y[i] += delta[i];
            }
            for j in 0..r {
                mu[j] += delta[m + j];
            }
            for k in 0..s {
                xi[k] += delta[m + r + k];
            }
        }
        let rnorm = self.kkt_residual_at(x, &y, &mu, &xi);
        if rnorm <= target.max(1e-10) {
            return Ok(KktPoint { y, mu, xi, residual: rnorm });
        }
        Err(BilevelError::TrackDivergence(format!(
            "no convergence in 50 iterations (residual {rnorm:.3e})"
        )))
    }

    /// Track from the best-matching multiplier vertex: vertices are tried
    /// in order of their initial residual at `x`.
    pub fn kkt_track_best(&self, x: &[f64], tol: &Tolerances) -> Result<KktPoint, BilevelError> {
        let poly = self.multiplier_polytope(tol)?;
        let mut starts: Vec<KktPoint> = poly
            .vertices
            .iter()
            .map(|(mu, xi)| KktPoint {
                y: self.y_star.clone(),
                mu: mu.clone(),
                xi: xi.clone(),
                residual: self.kkt_residual_at(x, &self.y_star, mu, xi),
            })
            .collect();
        starts.sort_by(|a, b| a.residual.partial_cmp(&b.residual).expect("finite residuals"));
        let mut last_err = None;
        for start in &starts {
            match self.kkt_track(x, start, tol) {
                Ok(p) => return Ok(p),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or(BilevelError::NoMultiplier))
    }
}
