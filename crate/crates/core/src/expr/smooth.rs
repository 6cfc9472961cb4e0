//! Smooth atoms: analytic callbacks and exact polynomials.

use std::sync::Arc;

use crate::linalg::DenseMatrix;

type ValueFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64]) -> DenseMatrix + Send + Sync;
type HessiansFn = dyn Fn(&[f64]) -> Vec<DenseMatrix> + Send + Sync;
type HessianDirFn = dyn Fn(&[f64], &[f64]) -> Vec<DenseMatrix> + Send + Sync;

/// A twice continuously differentiable atom given by analytic callbacks.
///
/// `hessians` returns one symmetric matrix per output component. The
/// optional `hessian_dir` is the third-order action: the directional
/// derivative of each Hessian along a direction, needed only by consumers
/// that assemble second-order KKT systems.
#[derive(Clone)]
pub struct SmoothAtom {
    pub in_dim: usize,
    pub out_dim: usize,
    pub label: String,
    pub value: Arc<ValueFn>,
    pub jacobian: Arc<JacobianFn>,
    pub hessians: Arc<HessiansFn>,
    pub hessian_dir: Option<Arc<HessianDirFn>>,
}

impl SmoothAtom {
    /// Compare the callbacks with central finite differences at `x`.
    pub(crate) fn check_against_differences(&self, x: &[f64], rel_tol: f64) -> Result<(), String> {
        let scale = 1.0 + crate::linalg::norm_inf(x);
        let h = 1e-6 * scale;
        let jac = (self.jacobian)(x);
        for j in 0..self.in_dim {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = (self.value)(&xp);
            let fm = (self.value)(&xm);
            for i in 0..self.out_dim {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let an = jac.get(i, j);
                if (fd - an).abs() > rel_tol * (1.0 + an.abs().max(fd.abs())) {
                    return Err(format!("jacobian[{i},{j}] = {an}, differences give {fd}"));
                }
            }
        }
        let h2 = 1e-4 * scale;
        let hess = (self.hessians)(x);
        for j in 0..self.in_dim {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h2;
            xm[j] -= h2;
            let jp = (self.jacobian)(&xp);
            let jm = (self.jacobian)(&xm);
            for i in 0..self.out_dim {
                for k in 0..self.in_dim {
                    let fd = (jp.get(i, k) - jm.get(i, k)) / (2.0 * h2);
                    let an = hess[i].get(k, j);
                    if (fd - an).abs() > rel_tol * (10.0 + an.abs().max(fd.abs())) {
                        return Err(format!("hessian[{i}][{k},{j}] = {an}, differences give {fd}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A scalar polynomial over `in_dim` variables with explicit terms
/// `coef * prod x_i^powers_i`; all derivatives are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub in_dim: usize,
    /// (coefficient, exponent per variable)
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(in_dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        for (_, p) in &terms {
            assert_eq!(p.len(), in_dim, "exponent vector length mismatch");
        }
        Polynomial { in_dim, terms }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| {
                c * powers
                    .iter()
                    .zip(x)
                    .map(|(&p, &xi)| xi.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Partial derivative as a new polynomial.
    pub fn differentiate(&self, var: usize) -> Polynomial {
        let mut terms = Vec::new();
        for (c, powers) in &self.terms {
            if powers[var] == 0 {
                continue;
            }
            let mut p = powers.clone();
            p[var] -= 1;
            terms.push((c * powers[var] as f64, p));
        }
        Polynomial { in_dim: self.in_dim, terms }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.in_dim).map(|i| self.differentiate(i).value(x)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> DenseMatrix {
        let n = self.in_dim;
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let di = self.differentiate(i);
            for j in 0..=i {
                let v = di.differentiate(j).value(x);
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        h
    }

    /// Directional derivative of the Hessian along `dir` (exact third-order
    /// action).
    pub fn hessian_dir(&self, x: &[f64], dir: &[f64]) -> DenseMatrix {
        let n = self.in_dim;
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let di = self.differentiate(i);
            for j in 0..=i {
                let dij = di.differentiate(j);
                let mut v = 0.0;
                for k in 0..n {
                    v += dij.differentiate(k).value(x) * dir[k];
                }
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        h
    }

    pub fn to_smooth_atom(&self) -> SmoothAtom {
        let p1 = self.clone();
        let p2 = self.clone();
        let p3 = self.clone();
        let p4 = self.clone();
        SmoothAtom {
            in_dim: self.in_dim,
            out_dim: 1,
            label: "poly".into(),
            value: Arc::new(move |x| vec![p1.value(x)]),
            jacobian: Arc::new(move |x| {
                let g = p2.gradient(x);
                DenseMatrix::new(1, g.len(), g).expect("finite gradient")
            }),
            hessians: Arc::new(move |x| vec![p3.hessian(x)]),
            hessian_dir: Some(Arc::new(move |x, dir| vec![p4.hessian_dir(x, dir)])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives_exact() {
        // f(x, y) = x^2 y + 3 x y^3
        let p = Polynomial::new(2, vec![(1.0, vec![2, 1]), (3.0, vec![1, 3])]);
        let x = [2.0, -1.0];
        assert_eq!(p.value(&x), 4.0 * -1.0 + 3.0 * 2.0 * -1.0);
        // df/dx = 2xy + 3y^3, df/dy = x^2 + 9xy^2
        let g = p.gradient(&x);
        assert_eq!(g, vec![2.0 * 2.0 * -1.0 + 3.0 * -1.0, 4.0 + 9.0 * 2.0 * 1.0]);
        let h = p.hessian(&x);
        // fxx = 2y, fxy = 2x + 9y^2, fyy = 18xy
        assert_eq!(h.get(0, 0), -2.0);
        assert_eq!(h.get(0, 1), 4.0 + 9.0);
        assert_eq!(h.get(1, 1), -36.0);
        // third order along dir (1,0): d/dx of H
        let hd = p.hessian_dir(&x, &[1.0, 0.0]);
        assert_eq!(hd.get(0, 0), 0.0);
        assert_eq!(hd.get(0, 1), 2.0);
        assert_eq!(hd.get(1, 1), -18.0);
    }

    #[test]
    fn smooth_atom_callbacks_agree_with_differences() {
        let p = Polynomial::new(2, vec![(1.0, vec![3, 0]), (2.0, vec![1, 2])]);
        let atom = p.to_smooth_atom();
        atom.check_against_differences(&[0.4, -0.7], 1e-5).unwrap();
    }
}
