//! Smooth problem data: scalar functions and vector maps of the joint
//! variable with analytic gradients and Hessians.
//!
//! Gradients come from unit-direction first directional derivatives and
//! Hessians from polarization of the second ones, both exact for smooth
//! DAGs. Third-order actions (directional derivatives of Hessians) use an
//! analytic callback when the data provides one — polynomials always do —
//! and Richardson-extrapolated central differences of the Hessian with
//! step 1e-4 otherwise.

use std::sync::Arc;

use super::BilevelError;
use crate::expr::{ExprBuilder, ExprError, PiecewiseExpr, Polynomial};
use crate::linalg::DenseMatrix;
use crate::tol::Tolerances;

type HessianDirCb = dyn Fn(&[f64], &[f64]) -> DenseMatrix + Send + Sync;

/// Scalar smooth function backed by a smooth expression DAG.
#[derive(Clone)]
pub struct SmoothFn {
    expr: PiecewiseExpr,
    hessian_dir_cb: Option<Arc<HessianDirCb>>,
}

impl SmoothFn {
    pub fn from_expr(expr: PiecewiseExpr) -> Result<Self, BilevelError> {
        if expr.output_dim() != 1 {
            return Err(BilevelError::Dimension(format!(
                "smooth function must be scalar, has output dim {}",
                expr.output_dim()
            )));
        }
        if !expr.is_smooth() {
            return Err(BilevelError::Dimension(
                "bilevel data must be smooth; expression contains a nonsmooth atom".into(),
            ));
        }
        Ok(SmoothFn { expr, hessian_dir_cb: None })
    }

    /// Polynomial data carries its exact third-order action.
    pub fn from_polynomial(poly: &Polynomial) -> Self {
        let mut b = ExprBuilder::new(poly.in_dim);
        let x = b.input();
        let node = b.polynomial(poly, vec![x]);
        let expr = b.finish(node).expect("polynomial expression is well formed");
        let p = poly.clone();
        SmoothFn {
            expr,
            hessian_dir_cb: Some(Arc::new(move |z, dir| p.hessian_dir(z, dir))),
        }
    }

    pub fn with_hessian_dir(
        mut self,
        cb: impl Fn(&[f64], &[f64]) -> DenseMatrix + Send + Sync + 'static,
    ) -> Self {
        self.hessian_dir_cb = Some(Arc::new(cb));
        self
    }

    pub fn expr(&self) -> &PiecewiseExpr {
        &self.expr
    }

    pub fn input_dim(&self) -> usize {
        self.expr.input_dim()
    }

    pub fn has_analytic_third_order(&self) -> bool {
        self.hessian_dir_cb.is_some()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.expr.eval(z).expect("dimension checked at construction")[0]
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let n = self.input_dim();
        let tol = Tolerances::default();
        let mut g = vec![0.0; n];
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            g[i] = self.expr.dd1(z, &e, &tol).expect("dims checked")[0];
            e[i] = 0.0;
        }
        g
    }

    /// Hessian by polarization of exact second directional derivatives.
    pub fn hessian(&self, z: &[f64]) -> DenseMatrix {
        let n = self.input_dim();
        let tol = Tolerances::default();
        let zero = vec![0.0; n];
        let quad = |d: &[f64]| self.expr.dd2(z, d, &zero, &tol).expect("dims checked")[0];
        let mut diag = vec![0.0; n];
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            diag[i] = quad(&e);
            e[i] = 0.0;
        }
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..n {
            h.set(i, i, diag[i]);
            for j in 0..i {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d[j] = 1.0;
                let v = 0.5 * (quad(&d) - diag[i] - diag[j]);
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        h
    }

    /// Directional derivative of the Hessian along `dir`.
    pub fn hessian_dir(
        &self,
        z: &[f64],
        dir: &[f64],
        allow_fd: bool,
    ) -> Result<DenseMatrix, BilevelError> {
        if let Some(cb) = &self.hessian_dir_cb {
            return Ok(cb(z, dir));
        }
        if !allow_fd {
            return Err(BilevelError::ThirdOrderUnavailable(
                "no analytic third-order callback and finite differences disabled".into(),
            ));
        }
        Ok(self.hessian_dir_fd(z, dir))
    }

    fn hessian_dir_fd(&self, z: &[f64], dir: &[f64]) -> DenseMatrix {
        let scale = 1.0 + crate::linalg::norm_inf(z);
        let central = |h: f64| -> DenseMatrix {
            let zp = crate::linalg::axpy(z, h, dir);
            let zm = crate::linalg::axpy(z, -h, dir);
            self.hessian(&zp).add(&self.hessian(&zm).scale(-1.0)).scale(0.5 / h)
        };
        let h = 1e-4 * scale;
        let d1 = central(h);
        let d2 = central(0.5 * h);
        // one Richardson level: (4 D(h/2) - D(h)) / 3
        d2.scale(4.0 / 3.0).add(&d1.scale(-1.0 / 3.0))
    }
}

/// Vector-valued smooth map: an ordered list of scalar components.
#[derive(Clone)]
pub struct SmoothMap {
    components: Vec<SmoothFn>,
    input_dim: usize,
}

impl SmoothMap {
    pub fn new(components: Vec<SmoothFn>) -> Result<Self, ExprError> {
        let input_dim = components.first().map_or(0, |c| c.input_dim());
        for c in &components {
            if c.input_dim() != input_dim {
                return Err(ExprError::InvalidDag("smooth map components disagree on input dim".into()));
            }
        }
        Ok(SmoothMap { components, input_dim })
    }

    pub fn empty(input_dim: usize) -> Self {
        SmoothMap { components: vec![], input_dim }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn component(&self, i: usize) -> &SmoothFn {
        &self.components[i]
    }

    pub fn values(&self, z: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.value(z)).collect()
    }

    /// Jacobian rows = component gradients.
    pub fn jacobian(&self, z: &[f64]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.len(), self.input_dim);
        for (i, c) in self.components.iter().enumerate() {
            for (j, g) in c.gradient(z).into_iter().enumerate() {
                m.set(i, j, g);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_and_hessian_from_expr() {
        // f(x, y) = x^2 y + y^3
        let p = Polynomial::new(2, vec![(1.0, vec![2, 1]), (1.0, vec![0, 3])]);
        let f = SmoothFn::from_polynomial(&p);
        let z = [1.5, -0.5];
        let g = f.gradient(&z);
        assert!((g[0] - 2.0 * 1.5 * -0.5).abs() < 1e-12);
        assert!((g[1] - (1.5 * 1.5 + 3.0 * 0.25)).abs() < 1e-12);
        let h = f.hessian(&z);
        assert!((h.get(0, 0) - 2.0 * -0.5).abs() < 1e-12);
        assert!((h.get(0, 1) - 2.0 * 1.5).abs() < 1e-12);
        assert!((h.get(1, 1) - 6.0 * -0.5).abs() < 1e-12);
    }

    #[test]
    fn hessian_dir_fd_close_to_exact() {
        let p = Polynomial::new(2, vec![(1.0, vec![3, 1]), (2.0, vec![0, 4])]);
        let exact = SmoothFn::from_polynomial(&p);
        // strip the analytic callback to force the Richardson fallback
        let fd = SmoothFn::from_expr(exact.expr().clone()).unwrap();
        let z = [0.7, -0.3];
        let dir = [1.0, 2.0];
        let a = exact.hessian_dir(&z, &dir, false).unwrap();
        let b = fd.hessian_dir(&z, &dir, true).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-7, "({i},{j})");
            }
        }
        assert!(fd.hessian_dir(&z, &dir, false).is_err());
    }

    #[test]
    fn nonsmooth_expr_rejected() {
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let a = b.abs(x);
        let e = b.finish(a).unwrap();
        assert!(SmoothFn::from_expr(e).is_err());
    }
}
