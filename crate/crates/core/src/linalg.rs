//! Dense linear algebra primitives: LU solves, rank / null spaces by row
//! reduction, and positive-definiteness on a subspace.
//!
//! Everything is dense, row-major and deterministic. Matrices reject
//! non-finite entries at construction so NaN can never propagate into a
//! certificate.

use std::fmt;

use crate::tol::Tolerances;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LinalgError {
    NonFinite,
    DimensionMismatch { expected: String, got: String },
    SingularToTolerance { pivot: f64 },
    NotSymmetric { deviation: f64 },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NonFinite => write!(f, "non-finite entry"),
            LinalgError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            LinalgError::SingularToTolerance { pivot } => {
                write!(f, "matrix singular to tolerance (best pivot {pivot:.3e})")
            }
            LinalgError::NotSymmetric { deviation } => {
                write!(f, "matrix not symmetric (deviation {deviation:.3e})")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", entries.len()),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(DenseMatrix { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, entries: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch {
                    expected: format!("row of length {c}"),
                    got: format!("row of length {}", row.len()),
                });
            }
            entries.extend_from_slice(row);
        }
        DenseMatrix::new(r, c, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Stack `blocks` of matrices into one matrix; every row of `blocks`
    /// must have consistent heights, every column consistent widths.
    pub fn from_blocks(blocks: &[Vec<&DenseMatrix>]) -> DenseMatrix {
        let row_heights: Vec<usize> = blocks.iter().map(|r| r[0].rows()).collect();
        let col_widths: Vec<usize> = blocks[0].iter().map(|b| b.cols()).collect();
        let total_rows: usize = row_heights.iter().sum();
        let total_cols: usize = col_widths.iter().sum();
        let mut out = DenseMatrix::zeros(total_rows, total_cols);
        let mut r0 = 0;
        for (bi, block_row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (bj, block) in block_row.iter().enumerate() {
                assert_eq!(block.rows(), row_heights[bi], "block height mismatch");
                assert_eq!(block.cols(), col_widths[bj], "block width mismatch");
                for i in 0..block.rows() {
                    for j in 0..block.cols() {
                        out.set(r0 + i, c0 + j, block.get(i, j));
                    }
                }
                c0 += block.cols();
            }
            r0 += block_row[0].rows();
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn symmetry_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                dev = dev.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        dev
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// a + s*b
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Solve `A z = b` by LU with partial pivoting.
///
/// Pivot threshold comes from `tol.pivot`; the solution is refined by one
/// step of iterative refinement so the residual bound `1e-9 * (1 + |b|)`
/// holds comfortably on desk-scale systems.
pub fn solve_linear(a: &DenseMatrix, b: &[f64], tol: &Tolerances) -> Result<Vec<f64>, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if a.rows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("rhs of length {}", a.rows()),
            got: format!("rhs of length {}", b.len()),
        });
    }
    let lu = LuFactors::factor(a, tol)?;
    let mut z = lu.solve(b);
    // one refinement pass
    let r = sub(b, &a.matvec(&z));
    let dz = lu.solve(&r);
    for i in 0..z.len() {
        z[i] += dz[i];
    }
    Ok(z)
}

/// LU factors with partial pivoting, reusable across right-hand sides.
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(a: &DenseMatrix, tol: &Tolerances) -> Result<Self, LinalgError> {
        let n = a.rows();
        assert_eq!(n, a.cols());
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale_ref = lu.max_abs().max(1.0);
        for k in 0..n {
            let (mut piv_row, mut piv_val) = (k, lu.get(k, k).abs());
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > piv_val {
                    piv_row = i;
                    piv_val = v;
                }
            }
            if piv_val <= tol.pivot * scale_ref {
                return Err(LinalgError::SingularToTolerance { pivot: piv_val });
            }
            if piv_row != k {
                for j in 0..n {
                    let a = lu.get(k, j);
                    let b = lu.get(piv_row, j);
                    lu.set(k, j, b);
                    lu.set(piv_row, j, a);
                }
                perm.swap(k, piv_row);
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let m = lu.get(i, k) / pivot;
                lu.set(i, k, m);
                for j in k + 1..n {
                    let v = lu.get(i, j) - m * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(LuFactors { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = b[self.perm[i]];
            for j in 0..i {
                v -= self.lu.get(i, j) * y[j];
            }
            y[i] = v;
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for j in i + 1..n {
                v -= self.lu.get(i, j) * y[j];
            }
            y[i] = v / self.lu.get(i, i);
        }
        y
    }

    /// Solve for every column of the identity scaled by `rhs` columns.
    pub fn solve_matrix(&self, rhs: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rhs.rows(), rhs.cols());
        for j in 0..rhs.cols() {
            let col = self.solve(&rhs.col(j));
            for i in 0..rhs.rows() {
                out.set(i, j, col[i]);
            }
        }
        out
    }
}

/// Rank by row reduction with partial pivoting.
pub fn rank(a: &DenseMatrix, tol: f64) -> usize {
    row_echelon(a, tol).pivot_cols.len()
}

struct Echelon {
    reduced: DenseMatrix,
    pivot_cols: Vec<usize>,
}

fn row_echelon(a: &DenseMatrix, tol: f64) -> Echelon {
    let mut m = a.clone();
    let (rows, cols) = (m.rows(), m.cols());
    let scale_ref = m.max_abs().max(1.0);
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (mut piv_row, mut piv_val) = (r, m.get(r, c).abs());
        for i in r + 1..rows {
            let v = m.get(i, c).abs();
            if v > piv_val {
                piv_row = i;
                piv_val = v;
            }
        }
        if piv_val <= tol * scale_ref {
            continue;
        }
        if piv_row != r {
            for j in 0..cols {
                let a = m.get(r, j);
                let b = m.get(piv_row, j);
                m.set(r, j, b);
                m.set(piv_row, j, a);
            }
        }
        let pivot = m.get(r, c);
        for j in 0..cols {
            let v = m.get(r, j) / pivot;
            m.set(r, j, v);
        }
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = m.get(i, c);
            if f != 0.0 {
                for j in 0..cols {
                    let v = m.get(i, j) - f * m.get(r, j);
                    m.set(i, j, v);
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    Echelon { reduced: m, pivot_cols }
}

/// Orthonormal basis of the null space of `A`, as matrix columns.
///
/// Free columns of the reduced echelon form generate the kernel; the
/// generators are then Gram-Schmidt orthonormalized.
pub fn null_space_basis(a: &DenseMatrix, tol: f64) -> DenseMatrix {
    let ech = row_echelon(a, tol);
    let cols = a.cols();
    let pivot_set: Vec<bool> = {
        let mut s = vec![false; cols];
        for &c in &ech.pivot_cols {
            s[c] = true;
        }
        s
    };
    let mut basis_vecs: Vec<Vec<f64>> = Vec::new();
    for free in 0..cols {
        if pivot_set[free] {
            continue;
        }
        let mut v = vec![0.0; cols];
        v[free] = 1.0;
        for (r, &pc) in ech.pivot_cols.iter().enumerate() {
            v[pc] = -ech.reduced.get(r, free);
        }
        basis_vecs.push(v);
    }
    // Gram-Schmidt
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for mut v in basis_vecs {
        for u in &ortho {
            let p = dot(&v, u);
            v = axpy(&v, -p, u);
        }
        let n = norm2(&v);
        if n > tol {
            ortho.push(scale(&v, 1.0 / n));
        }
    }
    let k = ortho.len();
    let mut out = DenseMatrix::zeros(cols, k);
    for (j, v) in ortho.iter().enumerate() {
        for i in 0..cols {
            out.set(i, j, v[i]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    NotPositive,
    Degenerate,
}

#[derive(Clone, Copy, Debug)]
pub struct SubspaceDefiniteness {
    pub verdict: Definiteness,
    /// Smallest factor pivot (eigenvalue) of the reduced matrix; by
    /// convention `+inf` on an empty basis, where positivity is vacuous.
    pub margin: f64,
}

/// Decide positive definiteness of `basis^T Q basis` by symmetric
/// eigen-factorization (cyclic Jacobi), `margin` = smallest pivot.
pub fn pd_on_subspace(
    q: &DenseMatrix,
    basis: &DenseMatrix,
    tol: &Tolerances,
) -> Result<SubspaceDefiniteness, LinalgError> {
    let dev = q.symmetry_deviation();
    if dev > 1e-9 * q.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { deviation: dev });
    }
    if basis.cols() == 0 {
        return Ok(SubspaceDefiniteness { verdict: Definiteness::Positive, margin: f64::INFINITY });
    }
    let reduced = basis.transpose().matmul(&q.matmul(basis));
    let eigs = jacobi_eigenvalues(&reduced);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale_ref = reduced.max_abs().max(1.0);
    let verdict = if min_eig > tol.activity * scale_ref {
        Definiteness::Positive
    } else if min_eig < -tol.activity * scale_ref {
        Definiteness::NotPositive
    } else {
        Definiteness::Degenerate
    };
    Ok(SubspaceDefiniteness { verdict, margin: min_eig })
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize to kill roundoff asymmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    for _sweep in 0..64 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off < 1e-14 * a.max_abs().max(1.0) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}
