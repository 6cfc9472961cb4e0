//! Piecewise expression DAGs with exact first- and second-order directional
//! derivatives.
//!
//! An expression is a list of nodes; node inputs are the concatenated
//! outputs of their children, so vector-valued maps are assembled with an
//! identity affine node over several children. Every atom is locally
//! Lipschitz and second-order directionally differentiable; the jet
//! propagation below implements the composite chain rule
//! `(f∘g)'(x;d) = f'(g(x); g'(x;d))` and
//! `(f∘g)''(x;d,w) = f''(g(x); g'(x;d), g''(x;d,w))` node by node.
//!
//! Branch selection at kinks uses the shared activity tolerance: indices
//! within `tol.activity` of a min/max (and values within it of zero for
//! `abs`-like atoms) count as active. Evaluation itself is always exact atom
//! semantics; tolerances only pick derivative branches.

mod linearize;
mod probe;
mod smooth;

pub use linearize::{
    linearize_dd1, linearize_dd2, AffineForm, AffinePiece, LinearPiece, LinearizeError, Selection,
};
pub use probe::{
    regularity_probe, regularity_probe_with_path, PathFamily, ProbeMode, ProbePath, ProbeVerdict,
    RegularityReport,
};
pub use smooth::{Polynomial, SmoothAtom};

use std::fmt;

use crate::linalg::DenseMatrix;
use crate::tol::Tolerances;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone)]
pub enum Atom {
    /// Fixed vector; no children.
    Const(Vec<f64>),
    /// Coordinates `start..start+len` of the input variable; no children.
    Slice { start: usize, len: usize },
    /// `A u + b` over the concatenated child outputs `u`.
    Affine { a: DenseMatrix, b: Vec<f64> },
    /// Smooth atom with analytic Jacobian and Hessian callbacks.
    Smooth(SmoothAtom),
    /// Componentwise absolute value.
    Abs,
    /// Componentwise projection onto the nonpositive half-line, `min(u, 0)`.
    MinZero,
    /// Minimum over the input coordinates (scalar output).
    Min,
    /// Maximum over the input coordinates (scalar output).
    Max,
    /// l1 norm of the input (scalar output).
    L1,
    /// l2 norm of the input (scalar output).
    L2,
    /// Elementwise sum of the children (all children same dimension).
    Sum,
    /// Scalar multiple of the single child.
    Scale(f64),
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Const(v) => write!(f, "Const({v:?})"),
            Atom::Slice { start, len } => write!(f, "Slice[{start}..{}]", start + len),
            Atom::Affine { a, .. } => write!(f, "Affine({}x{})", a.rows(), a.cols()),
            Atom::Smooth(s) => write!(f, "Smooth({})", s.label),
            Atom::Abs => write!(f, "Abs"),
            Atom::MinZero => write!(f, "MinZero"),
            Atom::Min => write!(f, "Min"),
            Atom::Max => write!(f, "Max"),
            Atom::L1 => write!(f, "L1"),
            Atom::L2 => write!(f, "L2"),
            Atom::Sum => write!(f, "Sum"),
            Atom::Scale(c) => write!(f, "Scale({c})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub atom: Atom,
    pub children: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct PiecewiseExpr {
    nodes: Vec<Node>,
    out_dims: Vec<usize>,
    input_dim: usize,
    root: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprError {
    DimensionMismatch { node: usize, detail: String },
    InvalidDag(String),
    CallbackMismatch { node: usize, detail: String },
    InvalidProbePath(String),
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprError::DimensionMismatch { node, detail } => {
                write!(f, "dimension mismatch at node {node}: {detail}")
            }
            ExprError::InvalidDag(s) => write!(f, "invalid DAG: {s}"),
            ExprError::CallbackMismatch { node, detail } => {
                write!(f, "smooth callback disagrees with finite differences at node {node}: {detail}")
            }
            ExprError::InvalidProbePath(s) => write!(f, "invalid probe path: {s}"),
        }
    }
}

impl std::error::Error for ExprError {}

/// Builder for [`PiecewiseExpr`]; children must be created before their
/// parents, which makes the node list acyclic by construction.
pub struct ExprBuilder {
    nodes: Vec<Node>,
    input_dim: usize,
}

impl ExprBuilder {
    pub fn new(input_dim: usize) -> Self {
        ExprBuilder { nodes: Vec::new(), input_dim }
    }

    fn push(&mut self, atom: Atom, children: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { atom, children });
        id
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        self.push(Atom::Const(values), vec![])
    }

    pub fn slice(&mut self, start: usize, len: usize) -> NodeId {
        self.push(Atom::Slice { start, len }, vec![])
    }

    /// The whole input vector.
    pub fn input(&mut self) -> NodeId {
        self.slice(0, self.input_dim)
    }

    pub fn coord(&mut self, index: usize) -> NodeId {
        self.slice(index, 1)
    }

    pub fn affine(&mut self, a: DenseMatrix, b: Vec<f64>, children: Vec<NodeId>) -> NodeId {
        self.push(Atom::Affine { a, b }, children)
    }

    /// Concatenate children (identity affine map).
    pub fn concat(&mut self, children: Vec<NodeId>) -> NodeId {
        let dim: usize = children.iter().map(|c| self.out_dim_of(*c)).sum();
        self.affine(DenseMatrix::identity(dim), vec![0.0; dim], children)
    }

    pub fn smooth(&mut self, atom: SmoothAtom, children: Vec<NodeId>) -> NodeId {
        self.push(Atom::Smooth(atom), children)
    }

    pub fn polynomial(&mut self, poly: &Polynomial, children: Vec<NodeId>) -> NodeId {
        self.smooth(poly.to_smooth_atom(), children)
    }

    pub fn abs(&mut self, child: NodeId) -> NodeId {
        self.push(Atom::Abs, vec![child])
    }

    pub fn min_zero(&mut self, child: NodeId) -> NodeId {
        self.push(Atom::MinZero, vec![child])
    }

    pub fn min(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(Atom::Min, children)
    }

    pub fn max(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(Atom::Max, children)
    }

    pub fn l1(&mut self, child: NodeId) -> NodeId {
        self.push(Atom::L1, vec![child])
    }

    pub fn l2(&mut self, child: NodeId) -> NodeId {
        self.push(Atom::L2, vec![child])
    }

    pub fn sum(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(Atom::Sum, children)
    }

    pub fn scale(&mut self, factor: f64, child: NodeId) -> NodeId {
        self.push(Atom::Scale(factor), vec![child])
    }

    fn out_dim_of(&self, id: NodeId) -> usize {
        node_out_dim(&self.nodes, self.input_dim, id.0).unwrap_or(0)
    }

    pub fn finish(self, root: NodeId) -> Result<PiecewiseExpr, ExprError> {
        PiecewiseExpr::from_nodes(self.nodes, self.input_dim, root)
    }
}

fn node_out_dim(nodes: &[Node], input_dim: usize, idx: usize) -> Result<usize, ExprError> {
    let node = &nodes[idx];
    let in_dim: usize = node
        .children
        .iter()
        .map(|c| node_out_dim(nodes, input_dim, c.0))
        .sum::<Result<usize, _>>()?;
    let err = |detail: String| ExprError::DimensionMismatch { node: idx, detail };
    match &node.atom {
        Atom::Const(v) => Ok(v.len()),
        Atom::Slice { start, len } => {
            if start + len > input_dim {
                Err(err(format!("slice {start}..{} exceeds input dim {input_dim}", start + len)))
            } else {
                Ok(*len)
            }
        }
        Atom::Affine { a, b } => {
            if a.cols() != in_dim {
                Err(err(format!("affine expects input {}, children give {in_dim}", a.cols())))
            } else if a.rows() != b.len() {
                Err(err("affine offset length mismatch".into()))
            } else {
                Ok(a.rows())
            }
        }
        Atom::Smooth(s) => {
            if s.in_dim != in_dim {
                Err(err(format!("smooth atom expects input {}, children give {in_dim}", s.in_dim)))
            } else {
                Ok(s.out_dim)
            }
        }
        Atom::Abs | Atom::MinZero => Ok(in_dim),
        Atom::Min | Atom::Max | Atom::L1 | Atom::L2 => {
            if in_dim == 0 {
                Err(err("reduction over empty input".into()))
            } else {
                Ok(1)
            }
        }
        Atom::Sum => {
            let dims: Vec<usize> = node
                .children
                .iter()
                .map(|c| node_out_dim(nodes, input_dim, c.0))
                .collect::<Result<_, _>>()?;
            if dims.is_empty() || dims.windows(2).any(|w| w[0] != w[1]) {
                Err(err(format!("sum children dims {dims:?} not equal")))
            } else {
                Ok(dims[0])
            }
        }
        Atom::Scale(_) => {
            if node.children.len() != 1 {
                Err(err("scale takes exactly one child".into()))
            } else {
                Ok(in_dim)
            }
        }
    }
}

/// Per-node jet: value, first and second directional derivatives.
#[derive(Clone, Debug)]
pub struct NodeJet {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Jet of the whole expression plus active chains of min/max nodes.
#[derive(Clone, Debug)]
pub struct DirectionalJet {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub active_chain: Vec<NodeActivity>,
}

/// Nested index sets `I(x) ⊇ I(x,d) ⊇ I(x,d,w)` of one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeActivity {
    pub node: NodeId,
    pub i_x: Vec<usize>,
    pub i_xd: Vec<usize>,
    pub i_xdw: Vec<usize>,
}

impl PiecewiseExpr {
    pub fn from_nodes(nodes: Vec<Node>, input_dim: usize, root: NodeId) -> Result<Self, ExprError> {
        if root.0 >= nodes.len() {
            return Err(ExprError::InvalidDag(format!("root {} out of range", root.0)));
        }
        for (idx, node) in nodes.iter().enumerate() {
            for c in &node.children {
                if c.0 >= idx {
                    return Err(ExprError::InvalidDag(format!(
                        "node {idx} references child {} (children must precede parents)",
                        c.0
                    )));
                }
            }
        }
        let mut out_dims = Vec::with_capacity(nodes.len());
        for idx in 0..nodes.len() {
            out_dims.push(node_out_dim(&nodes, input_dim, idx)?);
        }
        Ok(PiecewiseExpr { nodes, out_dims, input_dim, root })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_dims[self.root.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_out_dim(&self, id: NodeId) -> usize {
        self.out_dims[id.0]
    }

    /// True when every atom is smooth (derivatives of all orders exist).
    pub fn is_smooth(&self) -> bool {
        self.nodes.iter().all(|n| {
            matches!(
                n.atom,
                Atom::Const(_)
                    | Atom::Slice { .. }
                    | Atom::Affine { .. }
                    | Atom::Smooth(_)
                    | Atom::Sum
                    | Atom::Scale(_)
            )
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.input_dim {
            return Err(ExprError::DimensionMismatch {
                node: self.root.0,
                detail: format!("input has length {}, expected {}", x.len(), self.input_dim),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.check_input(x)?;
        let zero = vec![0.0; self.input_dim];
        let jets = self.forward(x, &zero, &zero, &Tolerances::default());
        Ok(jets[self.root.0].value.clone())
    }

    pub fn dd1(&self, x: &[f64], d: &[f64], tol: &Tolerances) -> Result<Vec<f64>, ExprError> {
        self.check_input(x)?;
        self.check_input(d)?;
        let zero = vec![0.0; self.input_dim];
        let jets = self.forward(x, d, &zero, tol);
        Ok(jets[self.root.0].d1.clone())
    }

    pub fn dd2(&self, x: &[f64], d: &[f64], w: &[f64], tol: &Tolerances) -> Result<Vec<f64>, ExprError> {
        self.check_input(x)?;
        self.check_input(d)?;
        self.check_input(w)?;
        let jets = self.forward(x, d, w, tol);
        Ok(jets[self.root.0].d2.clone())
    }

    pub fn jet(&self, x: &[f64], d: &[f64], w: &[f64], tol: &Tolerances) -> Result<DirectionalJet, ExprError> {
        self.check_input(x)?;
        self.check_input(d)?;
        self.check_input(w)?;
        let jets = self.forward(x, d, w, tol);
        let active_chain = self.active_chain(&jets, tol);
        let root = &jets[self.root.0];
        Ok(DirectionalJet {
            value: root.value.clone(),
            d1: root.d1.clone(),
            d2: root.d2.clone(),
            active_chain,
        })
    }

    /// Per-node nested index sets; min/max nodes carry their computed
    /// selections, every other node reports the full output index set.
    pub fn active_sets(
        &self,
        x: &[f64],
        d: &[f64],
        w: &[f64],
        tol: &Tolerances,
    ) -> Result<Vec<NodeActivity>, ExprError> {
        Ok(self.jet(x, d, w, tol)?.active_chain)
    }

    fn active_chain(&self, jets: &[NodeJet], tol: &Tolerances) -> Vec<NodeActivity> {
        let mut out = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            match node.atom {
                Atom::Min | Atom::Max => {
                    let input = self.gather(jets, &node.children);
                    let sign = if matches!(node.atom, Atom::Min) { 1.0 } else { -1.0 };
                    let v: Vec<f64> = input.value.iter().map(|a| a * sign).collect();
                    let p: Vec<f64> = input.d1.iter().map(|a| a * sign).collect();
                    let q: Vec<f64> = input.d2.iter().map(|a| a * sign).collect();
                    let i_x = argmin_set(&v, (0..v.len()).collect(), tol.activity);
                    let i_xd = argmin_set(&p, i_x.clone(), tol.activity);
                    let i_xdw = argmin_set(&q, i_xd.clone(), tol.activity);
                    out.push(NodeActivity { node: NodeId(idx), i_x, i_xd, i_xdw });
                }
                _ => {
                    let full: Vec<usize> = (0..self.out_dims[idx]).collect();
                    out.push(NodeActivity {
                        node: NodeId(idx),
                        i_x: full.clone(),
                        i_xd: full.clone(),
                        i_xdw: full,
                    });
                }
            }
        }
        out
    }

    fn gather(&self, jets: &[NodeJet], children: &[NodeId]) -> NodeJet {
        let mut value = Vec::new();
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for c in children {
            value.extend_from_slice(&jets[c.0].value);
            d1.extend_from_slice(&jets[c.0].d1);
            d2.extend_from_slice(&jets[c.0].d2);
        }
        NodeJet { value, d1, d2 }
    }

    pub(crate) fn forward(&self, x: &[f64], d: &[f64], w: &[f64], tol: &Tolerances) -> Vec<NodeJet> {
        let mut jets: Vec<NodeJet> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let jet = match &node.atom {
                Atom::Const(v) => NodeJet {
                    value: v.clone(),
                    d1: vec![0.0; v.len()],
                    d2: vec![0.0; v.len()],
                },
                Atom::Slice { start, len } => NodeJet {
                    value: x[*start..start + len].to_vec(),
                    d1: d[*start..start + len].to_vec(),
                    d2: w[*start..start + len].to_vec(),
                },
                Atom::Affine { a, b } => {
                    let input = self.gather(&jets, &node.children);
                    let mut value = a.matvec(&input.value);
                    for (v, off) in value.iter_mut().zip(b) {
                        *v += off;
                    }
                    NodeJet { value, d1: a.matvec(&input.d1), d2: a.matvec(&input.d2) }
                }
                Atom::Smooth(s) => {
                    let input = self.gather(&jets, &node.children);
                    let value = (s.value)(&input.value);
                    let jac = (s.jacobian)(&input.value);
                    let hess = (s.hessians)(&input.value);
                    let d1 = jac.matvec(&input.d1);
                    let mut d2 = jac.matvec(&input.d2);
                    for (i, h) in hess.iter().enumerate() {
                        d2[i] += quadratic_form(h, &input.d1);
                    }
                    NodeJet { value, d1, d2 }
                }
                Atom::Abs => {
                    let input = self.gather(&jets, &node.children);
                    let n = input.value.len();
                    let mut value = vec![0.0; n];
                    let mut d1 = vec![0.0; n];
                    let mut d2 = vec![0.0; n];
                    for i in 0..n {
                        let (v, p, q) = (input.value[i], input.d1[i], input.d2[i]);
                        value[i] = v.abs();
                        if v > tol.activity {
                            d1[i] = p;
                            d2[i] = q;
                        } else if v < -tol.activity {
                            d1[i] = -p;
                            d2[i] = -q;
                        } else {
                            d1[i] = p.abs();
                            d2[i] = if p > tol.activity {
                                q
                            } else if p < -tol.activity {
                                -q
                            } else {
                                q.abs()
                            };
                        }
                    }
                    NodeJet { value, d1, d2 }
                }
                Atom::MinZero => {
                    let input = self.gather(&jets, &node.children);
                    let n = input.value.len();
                    let mut value = vec![0.0; n];
                    let mut d1 = vec![0.0; n];
                    let mut d2 = vec![0.0; n];
                    for i in 0..n {
                        let (v, p, q) = (input.value[i], input.d1[i], input.d2[i]);
                        value[i] = v.min(0.0);
                        if v < -tol.activity {
                            d1[i] = p;
                            d2[i] = q;
                        } else if v > tol.activity {
                            d1[i] = 0.0;
                            d2[i] = 0.0;
                        } else {
                            d1[i] = p.min(0.0);
                            d2[i] = if p < -tol.activity {
                                q
                            } else if p > tol.activity {
                                0.0
                            } else {
                                q.min(0.0)
                            };
                        }
                    }
                    NodeJet { value, d1, d2 }
                }
                Atom::Min | Atom::Max => {
                    let input = self.gather(&jets, &node.children);
                    let sign = if matches!(node.atom, Atom::Min) { 1.0 } else { -1.0 };
                    let v: Vec<f64> = input.value.iter().map(|a| a * sign).collect();
                    let p: Vec<f64> = input.d1.iter().map(|a| a * sign).collect();
                    let q: Vec<f64> = input.d2.iter().map(|a| a * sign).collect();
                    let i_x = argmin_set(&v, (0..v.len()).collect(), tol.activity);
                    let i_xd = argmin_set(&p, i_x.clone(), tol.activity);
                    let value = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let d1 = i_x.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
                    let d2 = i_xd.iter().map(|&i| q[i]).fold(f64::INFINITY, f64::min);
                    NodeJet {
                        value: vec![sign * value],
                        d1: vec![sign * d1],
                        d2: vec![sign * d2],
                    }
                }
                Atom::L1 => {
                    let input = self.gather(&jets, &node.children);
                    let mut value = 0.0;
                    let mut d1 = 0.0;
                    let mut d2 = 0.0;
                    for i in 0..input.value.len() {
                        let (v, p, q) = (input.value[i], input.d1[i], input.d2[i]);
                        value += v.abs();
                        if v > tol.activity {
                            d1 += p;
                            d2 += q;
                        } else if v < -tol.activity {
                            d1 -= p;
                            d2 -= q;
                        } else {
                            d1 += p.abs();
                            d2 += if p > tol.activity {
                                q
                            } else if p < -tol.activity {
                                -q
                            } else {
                                q.abs()
                            };
                        }
                    }
                    NodeJet { value: vec![value], d1: vec![d1], d2: vec![d2] }
                }
                Atom::L2 => {
                    let input = self.gather(&jets, &node.children);
                    let (v, p, q) = (&input.value, &input.d1, &input.d2);
                    let nv = crate::linalg::norm2(v);
                    let value = nv;
                    let (d1, d2);
                    if nv > tol.activity {
                        let vp = crate::linalg::dot(v, p) / nv;
                        d1 = vp;
                        d2 = (crate::linalg::dot(p, p) - vp * vp) / nv
                            + crate::linalg::dot(v, q) / nv;
                    } else {
                        let np = crate::linalg::norm2(p);
                        d1 = np;
                        if np > tol.activity {
                            d2 = crate::linalg::dot(p, q) / np;
                        } else {
                            d2 = crate::linalg::norm2(q);
                        }
                    }
                    NodeJet { value: vec![value], d1: vec![d1], d2: vec![d2] }
                }
                Atom::Sum => {
                    let dim = self.out_dims[node.children[0].0];
                    let mut value = vec![0.0; dim];
                    let mut d1 = vec![0.0; dim];
                    let mut d2 = vec![0.0; dim];
                    for c in &node.children {
                        for i in 0..dim {
                            value[i] += jets[c.0].value[i];
                            d1[i] += jets[c.0].d1[i];
                            d2[i] += jets[c.0].d2[i];
                        }
                    }
                    NodeJet { value, d1, d2 }
                }
                Atom::Scale(c) => {
                    let child = &jets[node.children[0].0];
                    NodeJet {
                        value: child.value.iter().map(|v| c * v).collect(),
                        d1: child.d1.iter().map(|v| c * v).collect(),
                        d2: child.d2.iter().map(|v| c * v).collect(),
                    }
                }
            };
            jets.push(jet);
        }
        jets
    }

    /// Check every smooth atom's Jacobian and Hessian callbacks against
    /// central finite differences at the given probe points (relative
    /// tolerance 1e-5).
    pub fn validate_smooth_callbacks(&self, probes: &[Vec<f64>]) -> Result<(), ExprError> {
        let tol = Tolerances::default();
        for x in probes {
            self.check_input(x)?;
            let zero = vec![0.0; self.input_dim];
            let jets = self.forward(x, &zero, &zero, &tol);
            for (idx, node) in self.nodes.iter().enumerate() {
                if let Atom::Smooth(s) = &node.atom {
                    let input = self.gather(&jets, &node.children).value;
                    if let Err(detail) = s.check_against_differences(&input, 1e-5) {
                        return Err(ExprError::CallbackMismatch { node: idx, detail });
                    }
                }
            }
        }
        Ok(())
    }
}

fn argmin_set(values: &[f64], candidates: Vec<usize>, tol: f64) -> Vec<usize> {
    let m = candidates
        .iter()
        .map(|&i| values[i])
        .fold(f64::INFINITY, f64::min);
    candidates.into_iter().filter(|&i| values[i] <= m + tol).collect()
}

fn quadratic_form(h: &DenseMatrix, d: &[f64]) -> f64 {
    let hd = h.matvec(d);
    crate::linalg::dot(d, &hd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn abs_expr() -> PiecewiseExpr {
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let a = b.abs(x);
        b.finish(a).unwrap()
    }

    fn min3_expr() -> PiecewiseExpr {
        let mut b = ExprBuilder::new(3);
        let x = b.input();
        let m = b.min(vec![x]);
        b.finish(m).unwrap()
    }

    fn l2_expr(n: usize) -> PiecewiseExpr {
        let mut b = ExprBuilder::new(n);
        let x = b.input();
        let m = b.l2(x);
        b.finish(m).unwrap()
    }

    #[test]
    fn eval_atoms() {
        assert_eq!(abs_expr().eval(&[-3.0]).unwrap(), vec![3.0]);
        assert_eq!(min3_expr().eval(&[1.0, 1.0, 2.0]).unwrap(), vec![1.0]);
        assert_eq!(l2_expr(2).eval(&[3.0, 4.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn eval_dimension_mismatch() {
        assert!(abs_expr().eval(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dd1_examples() {
        let t = tols();
        // abs at x=0, d=-2 -> |d| = 2
        assert_eq!(abs_expr().dd1(&[0.0], &[-2.0], &t).unwrap(), vec![2.0]);
        // min at x=(1,1,2), d=(3,-1,0): I(x)={0,1}, min(3,-1) = -1
        assert_eq!(
            min3_expr().dd1(&[1.0, 1.0, 2.0], &[3.0, -1.0, 0.0], &t).unwrap(),
            vec![-1.0]
        );
        // l2 at 0, d=(3,4) -> ||d|| = 5
        assert_eq!(l2_expr(2).dd1(&[0.0, 0.0], &[3.0, 4.0], &t).unwrap(), vec![5.0]);
    }

    #[test]
    fn dd2_examples() {
        let t = tols();
        // abs at x=0, d=0, w=-5 -> |w| = 5
        assert_eq!(abs_expr().dd2(&[0.0], &[0.0], &[-5.0], &t).unwrap(), vec![5.0]);
        // l2 at 0, d=(3,4), w=(1,0) -> <d,w>/||d|| = 3/5
        let v = l2_expr(2).dd2(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], &t).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12);
        // smooth square: g(x)=x^2 at x=1, d=2, w=3 -> d^T H d + J w = 8 + 6 = 14
        let poly = Polynomial::new(1, vec![(1.0, vec![2])]);
        let mut b = ExprBuilder::new(1);
        let x = b.input();
        let p = b.polynomial(&poly, vec![x]);
        let sq = b.finish(p).unwrap();
        assert_eq!(sq.dd2(&[1.0], &[2.0], &[3.0], &t).unwrap(), vec![14.0]);
    }

    #[test]
    fn min_active_sets_examples() {
        let t = tols();
        let e = min3_expr();
        let acts = e.active_sets(&[1.0, 1.0, 2.0], &[3.0, -1.0, 0.0], &[0.0, 0.0, 0.0], &t).unwrap();
        let min_act = acts.iter().find(|a| a.node == e.root()).unwrap();
        assert_eq!(min_act.i_x, vec![0, 1]);
        assert_eq!(min_act.i_xd, vec![1]);
        assert_eq!(min_act.i_xdw, vec![1]);

        let mut b = ExprBuilder::new(2);
        let x = b.input();
        let m = b.min(vec![x]);
        let e2 = b.finish(m).unwrap();
        let acts = e2.active_sets(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &t).unwrap();
        let a = acts.iter().find(|a| a.node == e2.root()).unwrap();
        assert_eq!(a.i_x, vec![0, 1]);
        assert_eq!(a.i_xd, vec![0, 1]);
        assert_eq!(a.i_xdw, vec![0]);

        let acts = e2.active_sets(&[5.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], &t).unwrap();
        let a = acts.iter().find(|a| a.node == e2.root()).unwrap();
        assert_eq!(a.i_x, vec![1]);
        assert_eq!(a.i_xd, vec![1]);
        assert_eq!(a.i_xdw, vec![1]);
    }

    #[test]
    fn nested_min_chain_rule() {
        // f(x) = min(|x1|, x2) at x = (0, 0): f'(x; d) = min(|d1|, d2)
        let mut b = ExprBuilder::new(2);
        let x1 = b.coord(0);
        let a = b.abs(x1);
        let x2 = b.coord(1);
        let m = b.min(vec![a, x2]);
        let e = b.finish(m).unwrap();
        let t = tols();
        assert_eq!(e.dd1(&[0.0, 0.0], &[-2.0, 1.0], &t).unwrap(), vec![1.0]);
        assert_eq!(e.dd1(&[0.0, 0.0], &[-2.0, 3.0], &t).unwrap(), vec![2.0]);
    }

    #[test]
    fn invalid_dag_rejected() {
        let nodes = vec![Node { atom: Atom::Abs, children: vec![NodeId(0)] }];
        assert!(PiecewiseExpr::from_nodes(nodes, 1, NodeId(0)).is_err());
    }
}
