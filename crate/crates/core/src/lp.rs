//! Dense linear programming with certificates.
//!
//! A two-phase primal simplex over an explicit dense basis inverse, with
//! Bland's anti-cycling rule so that identical inputs always take identical
//! pivot sequences. Every optimal result carries a dual vector whose gap is
//! verified before the result is returned; unbounded results carry a ray and
//! infeasible results a Farkas-type certificate from phase one.
//!
//! `vertex_enumerate` lists all basic feasible solutions of a small
//! polyhedron and is the brute-force oracle the simplex is tested against.

use std::fmt;

use crate::linalg::{self, DenseMatrix};
use crate::tol::Tolerances;

/// `min c^T z` subject to `A_eq z = b_eq`, `A_in z <= b_in`, `z` free.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: DenseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: DenseMatrix,
    pub b_in: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpError {
    Dimension(String),
    NonFinite,
    /// Iteration cap hit or a verified invariant failed afterwards.
    NumericallyStalled(String),
    ScaleExceeded(String),
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpError::Dimension(s) => write!(f, "dimension error: {s}"),
            LpError::NonFinite => write!(f, "non-finite data"),
            LpError::NumericallyStalled(s) => write!(f, "numerically stalled: {s}"),
            LpError::ScaleExceeded(s) => write!(f, "scale exceeded: {s}"),
        }
    }
}

impl std::error::Error for LpError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

/// Certificate attached to an [`LpResult`].
///
/// For `Dual(y)` over the original rows (equalities first, then
/// inequalities): `c = A_eq^T y_eq + A_in^T y_in`, `y_in <= 0`, and the dual
/// objective `b_eq^T y_eq + b_in^T y_in` equals the optimum.
#[derive(Clone, Debug)]
pub enum Certificate {
    Dual(Vec<f64>),
    Ray { point: Vec<f64>, direction: Vec<f64> },
    /// `y` with `A_eq^T y_eq + A_in^T y_in = 0`, `y_in <= 0`,
    /// `b_eq^T y_eq + b_in^T y_in > 0`: no feasible point exists.
    Infeasibility(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct LpResult {
    pub status: LpStatus,
    pub optimum: f64,
    pub solution: Vec<f64>,
    pub certificate: Certificate,
}

impl LinearProgram {
    pub fn new(
        objective: Vec<f64>,
        a_eq: DenseMatrix,
        b_eq: Vec<f64>,
        a_in: DenseMatrix,
        b_in: Vec<f64>,
    ) -> Result<Self, LpError> {
        let n = objective.len();
        if a_eq.cols() != n && a_eq.rows() > 0 {
            return Err(LpError::Dimension(format!(
                "a_eq has {} cols, objective has {n}",
                a_eq.cols()
            )));
        }
        if a_in.cols() != n && a_in.rows() > 0 {
            return Err(LpError::Dimension(format!(
                "a_in has {} cols, objective has {n}",
                a_in.cols()
            )));
        }
        if a_eq.rows() != b_eq.len() || a_in.rows() != b_in.len() {
            return Err(LpError::Dimension("rhs length mismatch".into()));
        }
        let finite = objective.iter().chain(&b_eq).chain(&b_in).all(|v| v.is_finite());
        if !finite {
            return Err(LpError::NonFinite);
        }
        Ok(LinearProgram { objective, a_eq, b_eq, a_in, b_in })
    }

    /// Build from explicit rows; empty row sets are fine.
    pub fn from_rows(
        objective: Vec<f64>,
        eq_rows: &[(Vec<f64>, f64)],
        ineq_rows: &[(Vec<f64>, f64)],
    ) -> Result<Self, LpError> {
        let n = objective.len();
        let a_eq = rows_to_matrix(eq_rows, n)?;
        let b_eq = eq_rows.iter().map(|r| r.1).collect();
        let a_in = rows_to_matrix(ineq_rows, n)?;
        let b_in = ineq_rows.iter().map(|r| r.1).collect();
        LinearProgram::new(objective, a_eq, b_eq, a_in, b_in)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
}

fn rows_to_matrix(rows: &[(Vec<f64>, f64)], n: usize) -> Result<DenseMatrix, LpError> {
    let mut entries = Vec::with_capacity(rows.len() * n);
    for (a, _) in rows {
        if a.len() != n {
            return Err(LpError::Dimension(format!("row of length {}, expected {n}", a.len())));
        }
        entries.extend_from_slice(a);
    }
    DenseMatrix::new(rows.len(), n, entries).map_err(|_| LpError::NonFinite)
}

const MAX_PIVOTS: usize = 200_000;

/// Internal standard form: u = [z+ (n), z- (n), slacks (m_in)] >= 0.
struct Standard {
    a: DenseMatrix,
    b: Vec<f64>,
    cost: Vec<f64>,
    n_orig: usize,
    orig_rows: usize,
    /// rows flipped to make b nonnegative
    flipped: Vec<bool>,
    /// map of retained rows to original row indices (eq then ineq)
    row_origin: Vec<usize>,
}

fn standard_form(lp: &LinearProgram) -> Standard {
    let n = lp.num_vars();
    let m_eq = lp.a_eq.rows();
    let m_in = lp.a_in.rows();
    let m = m_eq + m_in;
    let total = 2 * n + m_in;
    let mut a = DenseMatrix::zeros(m, total);
    let mut b = vec![0.0; m];
    for i in 0..m_eq {
        for j in 0..n {
            a.set(i, j, lp.a_eq.get(i, j));
            a.set(i, n + j, -lp.a_eq.get(i, j));
        }
        b[i] = lp.b_eq[i];
    }
    for i in 0..m_in {
        for j in 0..n {
            a.set(m_eq + i, j, lp.a_in.get(i, j));
            a.set(m_eq + i, n + j, -lp.a_in.get(i, j));
        }
        a.set(m_eq + i, 2 * n + i, 1.0);
        b[m_eq + i] = lp.b_in[i];
    }
    let mut flipped = vec![false; m];
    for i in 0..m {
        if b[i] < 0.0 {
            flipped[i] = true;
            b[i] = -b[i];
            for j in 0..total {
                a.set(i, j, -a.get(i, j));
            }
        }
    }
    let mut cost = vec![0.0; total];
    for j in 0..n {
        cost[j] = lp.objective[j];
        cost[n + j] = -lp.objective[j];
    }
    Standard { a, b, cost, n_orig: n, orig_rows: m, flipped, row_origin: (0..m).collect() }
}

/// Simplex working state over an explicit basis inverse.
struct Tableau<'a> {
    a: &'a DenseMatrix,
    b: &'a [f64],
    basis: Vec<usize>,
    b_inv: DenseMatrix,
    x_basic: Vec<f64>,
}

enum PivotOutcome {
    Optimal,
    Unbounded { entering: usize },
    Stalled,
}

impl<'a> Tableau<'a> {
    fn new(a: &'a DenseMatrix, b: &'a [f64], basis: Vec<usize>, tol: &Tolerances) -> Option<Self> {
        let m = a.rows();
        let mut bmat = DenseMatrix::zeros(m, m);
        for (k, &j) in basis.iter().enumerate() {
            for i in 0..m {
                bmat.set(i, k, a.get(i, j));
            }
        }
        let lu = linalg::LuFactors::factor(&bmat, tol).ok()?;
        let b_inv = lu.solve_matrix(&DenseMatrix::identity(m));
        let x_basic = b_inv.matvec(b);
        Some(Tableau { a, b, basis, b_inv, x_basic })
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.a.rows();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut v = 0.0;
            for (k, &j) in self.basis.iter().enumerate() {
                v += cost[j] * self.b_inv.get(k, i);
            }
            y[i] = v;
        }
        y
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let m = self.a.rows();
        let col: Vec<f64> = (0..m).map(|i| self.a.get(i, j)).collect();
        self.b_inv.matvec(&col)
    }

    /// Run Bland-rule pivots until optimality for `cost`, restricted to
    /// columns where `allowed` is true.
    fn run(&mut self, cost: &[f64], allowed: &[bool], tol: &Tolerances) -> PivotOutcome {
        let m = self.a.rows();
        for _ in 0..MAX_PIVOTS {
            let y = self.duals(cost);
            // Bland: smallest index with negative reduced cost
            let mut entering = None;
            for j in 0..self.a.cols() {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let red = cost[j] - linalg::dot(&y, &self.a.col(j));
                if red < -tol.activity {
                    entering = Some(j);
                    break;
                }
            }
            let Some(enter) = entering else { return PivotOutcome::Optimal };
            let w = self.column(enter);
            // ratio test; Bland tie-break on smallest basic variable index
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if w[i] > tol.pivot {
                    let ratio = self.x_basic[i] / w[i];
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - tol.pivot
                                || (ratio < lr + tol.pivot && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((leave_row, _)) = leave else {
                return PivotOutcome::Unbounded { entering: enter };
            };
            self.pivot(enter, leave_row);
        }
        PivotOutcome::Stalled
    }

    fn pivot(&mut self, entering: usize, leave_row: usize) {
        let m = self.a.rows();
        let w = self.column(entering);
        let piv = w[leave_row];
        // eta update of the basis inverse
        for i in 0..m {
            if i == leave_row {
                continue;
            }
            let f = w[i] / piv;
            if f != 0.0 {
                for j in 0..m {
                    let v = self.b_inv.get(i, j) - f * self.b_inv.get(leave_row, j);
                    self.b_inv.set(i, j, v);
                }
            }
        }
        for j in 0..m {
            let v = self.b_inv.get(leave_row, j) / piv;
            self.b_inv.set(leave_row, j, v);
        }
        self.basis[leave_row] = entering;
        self.x_basic = self.b_inv.matvec(self.b);
        for v in &mut self.x_basic {
            if *v < 0.0 && *v > -1e-12 {
                *v = 0.0;
            }
        }
    }

    fn solution(&self, total: usize) -> Vec<f64> {
        let mut u = vec![0.0; total];
        for (k, &j) in self.basis.iter().enumerate() {
            if j < total {
                u[j] = self.x_basic[k];
            }
        }
        u
    }
}

/// Solve `lp`, verifying the result invariants before returning.
pub fn lp_solve(lp: &LinearProgram, tol: &Tolerances) -> Result<LpResult, LpError> {
    for row in 0..lp.a_eq.rows() {
        if lp.a_eq.row(row).iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
    }
    let mut std_form = standard_form(lp);
    let m = std_form.a.rows();
    let total = std_form.a.cols();

    if m == 0 {
        // no constraints: optimum 0 at z=0 unless c != 0 (then unbounded)
        let n = lp.num_vars();
        if lp.objective.iter().all(|&c| c == 0.0) {
            return Ok(LpResult {
                status: LpStatus::Optimal,
                optimum: 0.0,
                solution: vec![0.0; n],
                certificate: Certificate::Dual(vec![]),
            });
        }
        let direction: Vec<f64> = lp.objective.iter().map(|&c| -c).collect();
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            optimum: f64::NEG_INFINITY,
            solution: vec![0.0; n],
            certificate: Certificate::Ray { point: vec![0.0; n], direction },
        });
    }

    // phase 1: artificial columns appended
    let mut a1 = DenseMatrix::zeros(m, total + m);
    for i in 0..m {
        for j in 0..total {
            a1.set(i, j, std_form.a.get(i, j));
        }
        a1.set(i, total + i, 1.0);
    }
    let mut cost1 = vec![0.0; total + m];
    for i in 0..m {
        cost1[total + i] = 1.0;
    }
    let allowed1 = vec![true; total + m];
    let basis1: Vec<usize> = (0..m).map(|i| total + i).collect();
    let b1 = std_form.b.clone();
    let mut tab = Tableau::new(&a1, &b1, basis1, tol)
        .ok_or_else(|| LpError::NumericallyStalled("phase-1 basis factorization".into()))?;
    match tab.run(&cost1, &allowed1, tol) {
        PivotOutcome::Optimal => {}
        PivotOutcome::Unbounded { .. } => {
            return Err(LpError::NumericallyStalled("phase-1 unbounded".into()))
        }
        PivotOutcome::Stalled => return Err(LpError::NumericallyStalled("phase-1 pivots".into())),
    }
    let phase1_value: f64 = tab
        .basis
        .iter()
        .zip(&tab.x_basic)
        .map(|(&j, &x)| if j >= total { x } else { 0.0 })
        .sum();
    if phase1_value > tol.feasibility {
        let y = tab.duals(&cost1);
        let y_orig = unflip_duals(&y, &std_form);
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            optimum: f64::INFINITY,
            solution: vec![],
            certificate: Certificate::Infeasibility(y_orig),
        });
    }

    // drive artificials out of the basis; drop redundant rows if necessary
    let mut drop_rows: Vec<usize> = Vec::new();
    for row in 0..m {
        if tab.basis[row] >= total {
            let mut replaced = false;
            for j in 0..total {
                if tab.basis.contains(&j) {
                    continue;
                }
                let w = tab.column(j);
                if w[row].abs() > tol.pivot {
                    tab.pivot(j, row);
                    replaced = true;
                    break;
                }
            }
            if !replaced {
                drop_rows.push(row);
            }
        }
    }
    let mut basis2: Vec<usize> = Vec::new();
    if !drop_rows.is_empty() {
        let keep: Vec<usize> = (0..m).filter(|r| !drop_rows.contains(r)).collect();
        let mut a = DenseMatrix::zeros(keep.len(), total);
        let mut b = vec![0.0; keep.len()];
        let mut flipped = vec![false; keep.len()];
        let mut row_origin = vec![0; keep.len()];
        for (new_i, &old_i) in keep.iter().enumerate() {
            for j in 0..total {
                a.set(new_i, j, std_form.a.get(old_i, j));
            }
            b[new_i] = std_form.b[old_i];
            flipped[new_i] = std_form.flipped[old_i];
            row_origin[new_i] = std_form.row_origin[old_i];
            basis2.push(tab.basis[old_i]);
        }
        std_form.a = a;
        std_form.b = b;
        std_form.flipped = flipped;
        std_form.row_origin = row_origin;
    } else {
        basis2 = tab.basis.clone();
    }
    drop(tab);

    // phase 2
    let allowed2 = vec![true; total];
    let mut tab = Tableau::new(&std_form.a, &std_form.b, basis2, tol)
        .ok_or_else(|| LpError::NumericallyStalled("phase-2 basis factorization".into()))?;
    let outcome = tab.run(&std_form.cost, &allowed2, tol);
    let n = std_form.n_orig;
    let recover_z = |u: &[f64]| -> Vec<f64> { (0..n).map(|j| u[j] - u[n + j]).collect() };
    match outcome {
        PivotOutcome::Stalled => Err(LpError::NumericallyStalled("phase-2 pivots".into())),
        PivotOutcome::Unbounded { entering } => {
            let u = tab.solution(total);
            let point = recover_z(&u);
            let w = tab.column(entering);
            let mut du = vec![0.0; total];
            du[entering] = 1.0;
            for (k, &j) in tab.basis.iter().enumerate() {
                du[j] = -w[k];
            }
            let direction = recover_z(&du);
            Ok(LpResult {
                status: LpStatus::Unbounded,
                optimum: f64::NEG_INFINITY,
                solution: point,
                certificate: Certificate::Ray { point: recover_z(&u), direction },
            })
        }
        PivotOutcome::Optimal => {
            let u = tab.solution(total);
            let z = recover_z(&u);
            let optimum = linalg::dot(&lp.objective, &z);
            let y = tab.duals(&std_form.cost);
            let y_orig = unflip_duals(&y, &std_form);
            verify_optimal(lp, &z, &y_orig, optimum, tol)?;
            Ok(LpResult {
                status: LpStatus::Optimal,
                optimum,
                solution: z,
                certificate: Certificate::Dual(y_orig),
            })
        }
    }
}

fn unflip_duals(y: &[f64], std_form: &Standard) -> Vec<f64> {
    let mut out = vec![0.0; std_form.orig_rows];
    for (i, &orig) in std_form.row_origin.iter().enumerate() {
        out[orig] = if std_form.flipped[i] { -y[i] } else { y[i] };
    }
    out
}

fn verify_optimal(
    lp: &LinearProgram,
    z: &[f64],
    y: &[f64],
    optimum: f64,
    tol: &Tolerances,
) -> Result<(), LpError> {
    let scale = 1.0 + optimum.abs();
    let mut feas: f64 = 0.0;
    for i in 0..lp.a_eq.rows() {
        feas = feas.max((linalg::dot(lp.a_eq.row(i), z) - lp.b_eq[i]).abs());
    }
    for i in 0..lp.a_in.rows() {
        feas = feas.max(linalg::dot(lp.a_in.row(i), z) - lp.b_in[i]);
    }
    let data_scale = 1.0
        + linalg::norm_inf(&lp.b_eq).max(linalg::norm_inf(&lp.b_in))
        + lp.a_eq.max_abs().max(lp.a_in.max_abs());
    if feas > tol.feasibility * data_scale {
        return Err(LpError::NumericallyStalled(format!(
            "primal feasibility residual {feas:.3e}"
        )));
    }
    let m_eq = lp.a_eq.rows();
    let mut dual_obj = 0.0;
    for i in 0..m_eq {
        dual_obj += lp.b_eq[i] * y[i];
    }
    for i in 0..lp.a_in.rows() {
        dual_obj += lp.b_in[i] * y[m_eq + i];
    }
    if (dual_obj - optimum).abs() > tol.feasibility * scale * data_scale {
        return Err(LpError::NumericallyStalled(format!(
            "duality gap {:.3e}",
            (dual_obj - optimum).abs()
        )));
    }
    Ok(())
}

/// All basic feasible solutions of `{z : A_eq z = b_eq, A_in z <= b_in}`,
/// deduplicated; errors if the combinatorics or the vertex count exceed the
/// desk-scale guards.
pub fn vertex_enumerate(
    eq_rows: &[(Vec<f64>, f64)],
    ineq_rows: &[(Vec<f64>, f64)],
    bound: usize,
    tol: &Tolerances,
) -> Result<Vec<Vec<f64>>, LpError> {
    let n = eq_rows
        .first()
        .map(|r| r.0.len())
        .or_else(|| ineq_rows.first().map(|r| r.0.len()))
        .unwrap_or(0);
    if n == 0 {
        return Ok(vec![]);
    }
    if n > 12 {
        return Err(LpError::ScaleExceeded(format!("dimension {n} > 12")));
    }
    if eq_rows.len() + ineq_rows.len() > 40 {
        return Err(LpError::ScaleExceeded(format!(
            "{} constraints > 40",
            eq_rows.len() + ineq_rows.len()
        )));
    }
    let m_in = ineq_rows.len();
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let candidate = |z: Vec<f64>, vertices: &mut Vec<Vec<f64>>| -> Result<(), LpError> {
        for (a, b) in eq_rows {
            if (linalg::dot(a, &z) - b).abs() > tol.feasibility * (1.0 + b.abs()) {
                return Ok(());
            }
        }
        for (a, b) in ineq_rows {
            if linalg::dot(a, &z) - b > tol.feasibility * (1.0 + b.abs()) {
                return Ok(());
            }
        }
        if vertices
            .iter()
            .any(|v| linalg::norm2(&linalg::sub(v, &z)) <= tol.dedup)
        {
            return Ok(());
        }
        vertices.push(z);
        if vertices.len() > bound {
            return Err(LpError::ScaleExceeded(format!("more than {bound} vertices")));
        }
        Ok(())
    };

    let solve_active = |active: &[usize], vertices: &mut Vec<Vec<f64>>| -> Result<(), LpError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for (a, b) in eq_rows {
            rows.push(a.clone());
            rhs.push(*b);
        }
        for &i in active {
            rows.push(ineq_rows[i].0.clone());
            rhs.push(ineq_rows[i].1);
        }
        let mat = DenseMatrix::from_rows(&rows).map_err(|_| LpError::NonFinite)?;
        if mat.rows() != n {
            return Ok(());
        }
        match linalg::solve_linear(&mat, &rhs, tol) {
            Ok(z) => candidate(z, vertices),
            Err(_) => Ok(()),
        }
    };

    // number of inequality rows needed to pin a point
    let eq_mat = rows_to_matrix(eq_rows, n)?;
    let eq_rank = if eq_rows.is_empty() { 0 } else { linalg::rank(&eq_mat, tol.activity) };
    let k = n.saturating_sub(eq_rank);
    if k > m_in {
        return Ok(vec![]);
    }
    let combos = binomial(m_in, k);
    if combos > 2_000_000 {
        return Err(LpError::ScaleExceeded(format!("{combos} active-set combinations")));
    }
    // When eq rows are rank deficient we still need n total rows; choose k
    // rows from the inequalities and let the solver reject singular stacks.
    // If eq_rank < eq_rows.len() the stack is n + redundant rows tall, so we
    // instead select a maximal independent eq subset first.
    let eq_keep: Vec<usize> = independent_rows(&eq_mat, tol);
    let kept_eq: Vec<(Vec<f64>, f64)> =
        eq_keep.iter().map(|&i| eq_rows[i].clone()).collect();
    let solve_with_kept = |active: &[usize], vertices: &mut Vec<Vec<f64>>| -> Result<(), LpError> {
        if kept_eq.len() == eq_rows.len() {
            return solve_active(active, vertices);
        }
        let mut rows: Vec<Vec<f64>> = kept_eq.iter().map(|r| r.0.clone()).collect();
        let mut rhs: Vec<f64> = kept_eq.iter().map(|r| r.1).collect();
        for &i in active {
            rows.push(ineq_rows[i].0.clone());
            rhs.push(ineq_rows[i].1);
        }
        if rows.len() != n {
            return Ok(());
        }
        let mat = DenseMatrix::from_rows(&rows).map_err(|_| LpError::NonFinite)?;
        match linalg::solve_linear(&mat, &rhs, tol) {
            Ok(z) => candidate(z, vertices),
            Err(_) => Ok(()),
        }
    };

    let mut active: Vec<usize> = (0..k).collect();
    if k == 0 {
        solve_with_kept(&[], &mut vertices)?;
        return Ok(vertices);
    }
    loop {
        solve_with_kept(&active, &mut vertices)?;
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(vertices);
            }
            i -= 1;
            if active[i] != i + m_in - k {
                active[i] += 1;
                for j in i + 1..k {
                    active[j] = active[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn independent_rows(mat: &DenseMatrix, tol: &Tolerances) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for i in 0..mat.rows() {
        let mut trial = current.clone();
        trial.push(mat.row(i).to_vec());
        let m = DenseMatrix::from_rows(&trial).unwrap();
        if linalg::rank(&m, tol.activity) == trial.len() {
            current = trial;
            keep.push(i);
        }
    }
    keep
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}
