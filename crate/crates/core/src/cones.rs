//! Polyhedral sets with tangent cones and second-order tangent sets.
//!
//! A set is either a product of primitive factors (full line, nonpositive
//! half-line, singleton zero) or an H-form `{y : Ay <= b, Cy = e}`. For
//! polyhedral sets the outer second-order tangent set equals the tangent
//! cone of the tangent cone, `T²_K(y; d) = T_{T_K(y)}(d)`; that identity is
//! the computation rule here, and `definitional_residuals` is the
//! independent `o(t²)` oracle the identity is validated against.

use std::fmt;

use crate::linalg::{self, DenseMatrix};
use crate::lp::{self, LpError, LpStatus};
use crate::tol::Tolerances;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    /// The full real line.
    Line,
    /// The nonpositive half-line `(-inf, 0]`.
    Nonpos,
    /// The singleton `{0}`.
    Zero,
}

/// `{y : a y <= b, c y = e}`
#[derive(Clone, Debug)]
pub struct HForm {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub c: DenseMatrix,
    pub e: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum PolyhedralSet {
    Product(Vec<Factor>),
    HForm(HForm),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConeError {
    Dimension(String),
    NotMember { violation: f64 },
    NotTangent { violation: f64 },
    Empty,
    ScaleExceeded(String),
    Lp(String),
}

impl fmt::Display for ConeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeError::Dimension(s) => write!(f, "dimension error: {s}"),
            ConeError::NotMember { violation } => {
                write!(f, "point is not a member (violation {violation:.3e})")
            }
            ConeError::NotTangent { violation } => {
                write!(f, "direction is not tangent (violation {violation:.3e})")
            }
            ConeError::Empty => write!(f, "set is empty"),
            ConeError::ScaleExceeded(s) => write!(f, "scale exceeded: {s}"),
            ConeError::Lp(s) => write!(f, "lp failure: {s}"),
        }
    }
}

impl std::error::Error for ConeError {}

impl From<LpError> for ConeError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::ScaleExceeded(s) => ConeError::ScaleExceeded(s),
            other => ConeError::Lp(other.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConeMembershipCertificate {
    pub member: bool,
    /// Maximum constraint residual at the queried point.
    pub violation: f64,
    pub nearest_point: Vec<f64>,
}

impl PolyhedralSet {
    pub fn nonpos_orthant(dim: usize) -> Self {
        PolyhedralSet::Product(vec![Factor::Nonpos; dim])
    }

    pub fn zero(dim: usize) -> Self {
        PolyhedralSet::Product(vec![Factor::Zero; dim])
    }

    pub fn free(dim: usize) -> Self {
        PolyhedralSet::Product(vec![Factor::Line; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            PolyhedralSet::Product(fs) => fs.len(),
            PolyhedralSet::HForm(h) => {
                if h.a.rows() > 0 {
                    h.a.cols()
                } else {
                    h.c.cols()
                }
            }
        }
    }

    /// H-form description (products are converted row by row).
    pub fn to_hform(&self) -> HForm {
        match self {
            PolyhedralSet::HForm(h) => h.clone(),
            PolyhedralSet::Product(fs) => {
                let n = fs.len();
                let mut a_rows: Vec<Vec<f64>> = Vec::new();
                let mut b = Vec::new();
                let mut c_rows: Vec<Vec<f64>> = Vec::new();
                let mut e = Vec::new();
                for (i, f) in fs.iter().enumerate() {
                    let mut row = vec![0.0; n];
                    row[i] = 1.0;
                    match f {
                        Factor::Line => {}
                        Factor::Nonpos => {
                            a_rows.push(row);
                            b.push(0.0);
                        }
                        Factor::Zero => {
                            c_rows.push(row);
                            e.push(0.0);
                        }
                    }
                }
                HForm {
                    a: matrix_or_empty(&a_rows, n),
                    b,
                    c: matrix_or_empty(&c_rows, n),
                    e,
                }
            }
        }
    }

    /// Max constraint residual at `y` (0 when inside).
    pub fn violation(&self, y: &[f64]) -> f64 {
        match self {
            PolyhedralSet::Product(fs) => {
                let mut v = 0.0f64;
                for (i, f) in fs.iter().enumerate() {
                    match f {
                        Factor::Line => {}
                        Factor::Nonpos => v = v.max(y[i]),
                        Factor::Zero => v = v.max(y[i].abs()),
                    }
                }
                v
            }
            PolyhedralSet::HForm(h) => {
                let mut v = 0.0f64;
                for i in 0..h.a.rows() {
                    v = v.max(linalg::dot(h.a.row(i), y) - h.b[i]);
                }
                for i in 0..h.c.rows() {
                    v = v.max((linalg::dot(h.c.row(i), y) - h.e[i]).abs());
                }
                v
            }
        }
    }

    pub fn contains(&self, y: &[f64], tol: &Tolerances) -> Result<ConeMembershipCertificate, ConeError> {
        self.check_dim(y)?;
        let violation = self.violation(y);
        let nearest_point = self.project(y, tol)?;
        Ok(ConeMembershipCertificate {
            member: violation <= tol.activity,
            violation,
            nearest_point,
        })
    }

    pub fn distance(&self, y: &[f64], tol: &Tolerances) -> Result<f64, ConeError> {
        self.check_dim(y)?;
        let p = self.project(y, tol)?;
        Ok(linalg::norm2(&linalg::sub(y, &p)))
    }

    /// Euclidean projection of `y` onto the set.
    ///
    /// Products project componentwise; H-forms minimize the squared distance
    /// by enumerating candidate active sets and checking the KKT sign
    /// conditions, which is exact at desk scale.
    pub fn project(&self, y: &[f64], tol: &Tolerances) -> Result<Vec<f64>, ConeError> {
        self.check_dim(y)?;
        match self {
            PolyhedralSet::Product(fs) => Ok(fs
                .iter()
                .zip(y)
                .map(|(f, &v)| match f {
                    Factor::Line => v,
                    Factor::Nonpos => v.min(0.0),
                    Factor::Zero => 0.0,
                })
                .collect()),
            PolyhedralSet::HForm(h) => project_hform(h, y, tol),
        }
    }

    pub fn is_empty(&self, tol: &Tolerances) -> Result<bool, ConeError> {
        match self {
            PolyhedralSet::Product(_) => Ok(false),
            PolyhedralSet::HForm(h) => {
                let n = self.dim();
                let eq_rows: Vec<(Vec<f64>, f64)> =
                    (0..h.c.rows()).map(|i| (h.c.row(i).to_vec(), h.e[i])).collect();
                let ineq_rows: Vec<(Vec<f64>, f64)> =
                    (0..h.a.rows()).map(|i| (h.a.row(i).to_vec(), h.b[i])).collect();
                let lp = lp::LinearProgram::from_rows(vec![0.0; n], &eq_rows, &ineq_rows)
                    .map_err(ConeError::from)?;
                let r = lp::lp_solve(&lp, tol).map_err(ConeError::from)?;
                Ok(r.status == LpStatus::Infeasible)
            }
        }
    }

    /// Reject empty sets; `K` itself must pass this at construction.
    pub fn validate_nonempty(&self, tol: &Tolerances) -> Result<(), ConeError> {
        if self.is_empty(tol)? {
            Err(ConeError::Empty)
        } else {
            Ok(())
        }
    }

    /// Tangent cone `T_K(y)`; requires `y` in `K` up to `tol.feasibility`.
    pub fn tangent_cone(&self, y: &[f64], tol: &Tolerances) -> Result<PolyhedralSet, ConeError> {
        self.check_dim(y)?;
        let violation = self.violation(y);
        if violation > tol.feasibility {
            return Err(ConeError::NotMember { violation });
        }
        match self {
            PolyhedralSet::Product(fs) => Ok(PolyhedralSet::Product(
                fs.iter()
                    .zip(y)
                    .map(|(f, &v)| match f {
                        Factor::Line => Factor::Line,
                        Factor::Zero => Factor::Zero,
                        Factor::Nonpos => {
                            if v < -tol.activity {
                                Factor::Line
                            } else {
                                Factor::Nonpos
                            }
                        }
                    })
                    .collect(),
            )),
            PolyhedralSet::HForm(h) => {
                let n = self.dim();
                let mut a_rows: Vec<Vec<f64>> = Vec::new();
                for i in 0..h.a.rows() {
                    if linalg::dot(h.a.row(i), y) >= h.b[i] - tol.activity {
                        a_rows.push(h.a.row(i).to_vec());
                    }
                }
                let rows = a_rows.len();
                Ok(PolyhedralSet::HForm(HForm {
                    a: matrix_or_empty(&a_rows, n),
                    b: vec![0.0; rows],
                    c: h.c.clone(),
                    e: vec![0.0; h.c.rows()],
                }))
            }
        }
    }

    /// Outer second-order tangent set `T²_K(y; d)`, computed as the tangent
    /// cone to `T_K(y)` at `d`; requires `d` tangent at `y`.
    pub fn second_order_tangent(
        &self,
        y: &[f64],
        d: &[f64],
        tol: &Tolerances,
    ) -> Result<PolyhedralSet, ConeError> {
        let t = self.tangent_cone(y, tol)?;
        let violation = t.violation(d);
        if violation > tol.feasibility {
            return Err(ConeError::NotTangent { violation });
        }
        t.tangent_cone(d, tol)
    }

    /// Generator directions of a polyhedral cone: the nonzero vertices of
    /// its intersection with the unit cube, normalized. Every member of the
    /// cone is a nonnegative combination of these.
    pub fn generators(&self, tol: &Tolerances) -> Result<Vec<Vec<f64>>, ConeError> {
        let n = self.dim();
        let h = self.to_hform();
        let mut ineq: Vec<(Vec<f64>, f64)> =
            (0..h.a.rows()).map(|i| (h.a.row(i).to_vec(), h.b[i])).collect();
        for i in 0..n {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            ineq.push((row.clone(), 1.0));
            row[i] = -1.0;
            ineq.push((row, 1.0));
        }
        let eq: Vec<(Vec<f64>, f64)> =
            (0..h.c.rows()).map(|i| (h.c.row(i).to_vec(), h.e[i])).collect();
        let verts = lp::vertex_enumerate(&eq, &ineq, 4096, tol)?;
        let mut out: Vec<Vec<f64>> = Vec::new();
        for v in verts {
            let nv = linalg::norm2(&v);
            if nv <= tol.dedup {
                continue;
            }
            let dir = linalg::scale(&v, 1.0 / nv);
            if !out
                .iter()
                .any(|u| linalg::norm2(&linalg::sub(u, &dir)) <= tol.dedup)
            {
                out.push(dir);
            }
        }
        Ok(out)
    }

    fn check_dim(&self, y: &[f64]) -> Result<(), ConeError> {
        if y.len() != self.dim() {
            return Err(ConeError::Dimension(format!(
                "point has dim {}, set has dim {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn matrix_or_empty(rows: &[Vec<f64>], n: usize) -> DenseMatrix {
    if rows.is_empty() {
        DenseMatrix::zeros(0, n)
    } else {
        DenseMatrix::from_rows(rows).expect("finite rows")
    }
}

fn project_hform(h: &HForm, y: &[f64], tol: &Tolerances) -> Result<Vec<f64>, ConeError> {
    let n = y.len();
    if h.violation_ok(y, tol) {
        return Ok(y.to_vec());
    }
    // prune redundant equality rows so the KKT systems stay nonsingular
    let eq_keep = independent_row_indices(&h.c, tol);
    let m_in = h.a.rows();

    let mut best: Option<Vec<f64>> = None;
    let mut budget: usize = 200_000;
    let mut subset = Vec::new();
    // candidate active sets in increasing size; the projection is unique so
    // the first KKT-consistent candidate wins
    for k in 0..=n.min(m_in) {
        enumerate_subsets(m_in, k, &mut subset, &mut |s: &[usize]| {
            if best.is_some() || budget == 0 {
                return;
            }
            budget -= 1;
            if let Some(z) = kkt_projection(h, &eq_keep, s, y, tol) {
                best = Some(z);
            }
        });
        if best.is_some() {
            break;
        }
    }
    if budget == 0 && best.is_none() {
        return Err(ConeError::ScaleExceeded("projection active-set enumeration".into()));
    }
    match best {
        Some(z) => Ok(z),
        None => Err(ConeError::Empty),
    }
}

impl HForm {
    fn violation_ok(&self, y: &[f64], tol: &Tolerances) -> bool {
        for i in 0..self.a.rows() {
            if linalg::dot(self.a.row(i), y) - self.b[i] > tol.activity {
                return false;
            }
        }
        for i in 0..self.c.rows() {
            if (linalg::dot(self.c.row(i), y) - self.e[i]).abs() > tol.activity {
                return false;
            }
        }
        true
    }
}

fn independent_row_indices(m: &DenseMatrix, tol: &Tolerances) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..m.rows() {
        let mut trial = rows.clone();
        trial.push(m.row(i).to_vec());
        let t = DenseMatrix::from_rows(&trial).expect("finite rows");
        if linalg::rank(&t, tol.activity) == trial.len() {
            rows = trial;
            keep.push(i);
        }
    }
    keep
}

fn enumerate_subsets(m: usize, k: usize, scratch: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(m: usize, k: usize, start: usize, scratch: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if scratch.len() == k {
            f(scratch);
            return;
        }
        for i in start..m {
            scratch.push(i);
            rec(m, k, i + 1, scratch, f);
            scratch.pop();
        }
    }
    scratch.clear();
    rec(m, k, 0, scratch, f);
}

/// Solve the equality-constrained projection for active set `s` and accept
/// it when primal feasibility and multiplier signs hold.
fn kkt_projection(
    h: &HForm,
    eq_keep: &[usize],
    s: &[usize],
    y: &[f64],
    tol: &Tolerances,
) -> Option<Vec<f64>> {
    let n = y.len();
    let mut e_rows: Vec<Vec<f64>> = Vec::new();
    let mut f_rhs: Vec<f64> = Vec::new();
    for &i in eq_keep {
        e_rows.push(h.c.row(i).to_vec());
        f_rhs.push(h.e[i]);
    }
    for &i in s {
        e_rows.push(h.a.row(i).to_vec());
        f_rhs.push(h.b[i]);
    }
    let m = e_rows.len();
    if m == 0 {
        return h.violation_ok(y, tol).then(|| y.to_vec());
    }
    // KKT system [[I, E^T], [E, 0]] [z; nu] = [y; f]
    let mut kkt = DenseMatrix::zeros(n + m, n + m);
    for i in 0..n {
        kkt.set(i, i, 1.0);
    }
    for (r, row) in e_rows.iter().enumerate() {
        for j in 0..n {
            kkt.set(n + r, j, row[j]);
            kkt.set(j, n + r, row[j]);
        }
    }
    let mut rhs = y.to_vec();
    rhs.extend_from_slice(&f_rhs);
    let sol = linalg::solve_linear(&kkt, &rhs, tol).ok()?;
    let z = &sol[..n];
    // multipliers of inequality rows must be nonnegative
    for (idx, _) in s.iter().enumerate() {
        let nu = sol[n + eq_keep.len() + idx];
        if nu < -tol.feasibility {
            return None;
        }
    }
    // full primal feasibility
    for i in 0..h.a.rows() {
        if linalg::dot(h.a.row(i), z) - h.b[i] > tol.feasibility {
            return None;
        }
    }
    for i in 0..h.c.rows() {
        if (linalg::dot(h.c.row(i), z) - h.e[i]).abs() > tol.feasibility {
            return None;
        }
    }
    Some(z.to_vec())
}

/// The definitional `o(t²)` oracle: residuals `d(y + t d + t²/2 w, K)/t²`
/// over the grid. For `w` in the second-order tangent set these must decay
/// to zero; for non-members they stall near `d(w, T²)/2`.
pub fn definitional_residuals(
    set: &PolyhedralSet,
    y: &[f64],
    d: &[f64],
    w: &[f64],
    grid: &[f64],
    tol: &Tolerances,
) -> Result<Vec<f64>, ConeError> {
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let point = linalg::axpy(&linalg::axpy(y, t, d), 0.5 * t * t, w);
        let dist = set.distance(&point, tol)?;
        out.push(dist / (t * t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn membership_and_distance() {
        let t = tols();
        let k = PolyhedralSet::nonpos_orthant(1);
        let c = k.contains(&[-1.0], &t).unwrap();
        assert!(c.member && c.violation == 0.0);
        assert_eq!(k.distance(&[2.0], &t).unwrap(), 2.0);

        let k2 = PolyhedralSet::Product(vec![Factor::Zero, Factor::Nonpos]);
        let d = k2.distance(&[1.0, 1.0], &t).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hform_projection_matches_product() {
        let t = tols();
        let prod = PolyhedralSet::Product(vec![Factor::Zero, Factor::Nonpos, Factor::Line]);
        let h = PolyhedralSet::HForm(prod.to_hform());
        for y in [[1.0, 1.0, -3.0], [-0.5, -2.0, 0.0], [0.3, 0.1, 5.0]] {
            let p1 = prod.project(&y, &t).unwrap();
            let p2 = h.project(&y, &t).unwrap();
            assert!(linalg::norm2(&linalg::sub(&p1, &p2)) < 1e-9, "{p1:?} vs {p2:?}");
            assert!((prod.violation(&y) <= t.activity) == (h.violation(&y) <= t.activity));
        }
    }

    #[test]
    fn tangent_cone_examples() {
        let t = tols();
        let k = PolyhedralSet::nonpos_orthant(1);
        // at the boundary the cone is the half-line itself
        match k.tangent_cone(&[0.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Nonpos]),
            _ => panic!(),
        }
        // strictly inside it is the full line
        match k.tangent_cone(&[-1.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Line]),
            _ => panic!(),
        }
        let k2 = PolyhedralSet::nonpos_orthant(2);
        match k2.tangent_cone(&[0.0, -1.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Nonpos, Factor::Line]),
            _ => panic!(),
        }
        assert!(k.tangent_cone(&[1.0], &t).is_err());
    }

    #[test]
    fn second_order_tangent_examples() {
        let t = tols();
        // d = 0 gives back the tangent cone
        let k = PolyhedralSet::nonpos_orthant(2);
        match k.second_order_tangent(&[0.0, 0.0], &[0.0, 0.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Nonpos, Factor::Nonpos]),
            _ => panic!(),
        }
        // interior direction in the first coordinate frees it
        match k.second_order_tangent(&[0.0, 0.0], &[-1.0, 0.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Line, Factor::Nonpos]),
            _ => panic!(),
        }
        let z = PolyhedralSet::zero(1);
        match z.second_order_tangent(&[0.0], &[0.0], &t).unwrap() {
            PolyhedralSet::Product(fs) => assert_eq!(fs, vec![Factor::Zero]),
            _ => panic!(),
        }
        assert!(k.second_order_tangent(&[0.0, 0.0], &[1.0, 0.0], &t).is_err());
    }

    #[test]
    fn generators_of_quadrant() {
        let t = tols();
        let k = PolyhedralSet::nonpos_orthant(2);
        let gens = k.generators(&t).unwrap();
        // -e1, -e2 and the corner direction; all members
        assert!(gens.len() >= 2);
        for g in &gens {
            assert!(k.violation(g) <= 1e-9);
        }
        assert!(gens.iter().any(|g| (g[0] + 1.0).abs() < 1e-9 && g[1].abs() < 1e-9));
        assert!(gens.iter().any(|g| (g[1] + 1.0).abs() < 1e-9 && g[0].abs() < 1e-9));
    }

    #[test]
    fn definitional_oracle_on_second_order_tangent() {
        let t = tols();
        let k = PolyhedralSet::nonpos_orthant(2);
        let y = [0.0, 0.0];
        let d = [-1.0, 0.0];
        let t2 = k.second_order_tangent(&y, &d, &t).unwrap();
        let grid: Vec<f64> = (4..=16).map(|k| 2f64.powi(-k)).collect();
        // member of T^2 = R x R_-: residuals vanish
        let res = definitional_residuals(&k, &y, &d, &[5.0, -1.0], &grid, &t).unwrap();
        assert!(res.last().unwrap() < &1e-9);
        assert!(t2.violation(&[5.0, -1.0]) <= 1e-9);
        // non-member: w2 > 0 leaves the set at second order
        let res = definitional_residuals(&k, &y, &d, &[0.0, 2.0], &grid, &t).unwrap();
        assert!(res.last().unwrap() > &0.5);
        assert!(t2.violation(&[0.0, 2.0]) > 1e-9);
    }

    #[test]
    fn empty_detection() {
        let t = tols();
        // {y <= -1} ∩ {y >= 1} in H-form
        let h = HForm {
            a: DenseMatrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            b: vec![-1.0, -1.0],
            c: DenseMatrix::zeros(0, 1),
            e: vec![],
        };
        let k = PolyhedralSet::HForm(h);
        assert!(k.is_empty(&t).unwrap());
        assert_eq!(k.validate_nonempty(&t), Err(ConeError::Empty));
    }
}
