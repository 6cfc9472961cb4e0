//! Selection-piece linearization.
//!
//! At a fixed point `x` the map `d ↦ g'(x;d)` is piecewise linear whenever
//! the DAG has no l2 kink at its input value; at fixed `(x,d)` the map
//! `w ↦ g''(x;d,w)` is piecewise affine under the same proviso. Each piece
//! corresponds to a branch selection at the active kinks; its validity
//! region is the polyhedral cone where that selection attains the min/max.
//! Enumerating the pieces turns first- and second-order condition checks
//! into finitely many LPs with exact data.

use std::fmt;

use super::{Atom, ExprError, PiecewiseExpr};
use crate::linalg::{self, DenseMatrix};
use crate::tol::Tolerances;

#[derive(Clone, Debug, PartialEq)]
pub enum LinearizeError {
    /// The derivative is not piecewise linear/affine at this point (l2 kink).
    NotPiecewiseLinear { node: usize, detail: String },
    TooManyPieces { pieces: u128, cap: usize },
    Expr(ExprError),
}

impl fmt::Display for LinearizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinearizeError::NotPiecewiseLinear { node, detail } => {
                write!(f, "not piecewise linear at node {node}: {detail}")
            }
            LinearizeError::TooManyPieces { pieces, cap } => {
                write!(f, "{pieces} selection pieces exceed cap {cap}")
            }
            LinearizeError::Expr(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LinearizeError {}

impl From<ExprError> for LinearizeError {
    fn from(e: ExprError) -> Self {
        LinearizeError::Expr(e)
    }
}

/// Branch choices `(node, coordinate, choice)` identifying one piece.
///
/// For `abs`-like coordinates choice 0 is the upper branch (`+p` / zero) and
/// choice 1 the lower (`-p` / identity); for min/max the choice is the
/// selected active index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Selection(pub Vec<(usize, usize, usize)>);

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "smooth");
        }
        for (i, (n, c, ch)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "n{n}.{c}={ch}")?;
        }
        Ok(())
    }
}

/// One piece of the piecewise-linear first directional derivative:
/// `g'(x; d) = map · d` valid on `{d : r·d <= 0 for all validity rows r}`.
#[derive(Clone, Debug)]
pub struct LinearPiece {
    pub selection: Selection,
    pub map: DenseMatrix,
    pub validity: Vec<Vec<f64>>,
}

/// `value(w) = map · w + offset`
#[derive(Clone, Debug)]
pub struct AffineForm {
    pub map: DenseMatrix,
    pub offset: Vec<f64>,
}

impl AffineForm {
    pub fn row(&self, i: usize) -> (Vec<f64>, f64) {
        (self.map.row(i).to_vec(), self.offset[i])
    }

    pub fn eval(&self, w: &[f64]) -> Vec<f64> {
        linalg::add(&self.map.matvec(w), &self.offset)
    }
}

/// One piece of the piecewise-affine second directional derivative:
/// `g''(x;d,w) = form(w)` valid on `{w : r·w + r0 <= 0}`.
#[derive(Clone, Debug)]
pub struct AffinePiece {
    pub selection: Selection,
    pub form: AffineForm,
    pub validity: Vec<(Vec<f64>, f64)>,
}

struct BranchPoint {
    node: usize,
    coord: usize,
    options: Vec<usize>,
}

fn product_guard(points: &[BranchPoint], cap: usize) -> Result<(), LinearizeError> {
    let mut pieces: u128 = 1;
    for p in points {
        pieces = pieces.saturating_mul(p.options.len() as u128);
        if pieces > cap as u128 {
            return Err(LinearizeError::TooManyPieces { pieces, cap });
        }
    }
    Ok(())
}

fn assignments(points: &[BranchPoint]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for p in points {
        let mut next = Vec::with_capacity(out.len() * p.options.len());
        for partial in &out {
            for &opt in &p.options {
                let mut a = partial.clone();
                a.push(opt);
                next.push(a);
            }
        }
        out = next;
    }
    out
}

fn active_within(values: &[f64], best: f64, tol: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= best + tol)
        .map(|(i, _)| i)
        .collect()
}

/// Enumerate the linear pieces of `d ↦ g'(x;d)`.
pub fn linearize_dd1(
    expr: &PiecewiseExpr,
    x: &[f64],
    tol: &Tolerances,
    cap: usize,
) -> Result<Vec<LinearPiece>, LinearizeError> {
    let n = expr.input_dim();
    let zero = vec![0.0; n];
    let jets = expr.forward(x, &zero, &zero, tol);
    let gather_values = |children: &[super::NodeId]| -> Vec<f64> {
        let mut v = Vec::new();
        for c in children {
            v.extend_from_slice(&jets[c.0].value);
        }
        v
    };

    // discover branch points
    let mut points: Vec<BranchPoint> = Vec::new();
    for (idx, node) in expr.nodes().iter().enumerate() {
        let v = gather_values(&node.children);
        match node.atom {
            Atom::Abs | Atom::MinZero | Atom::L1 => {
                for (coord, &vi) in v.iter().enumerate() {
                    if vi.abs() <= tol.activity {
                        points.push(BranchPoint { node: idx, coord, options: vec![0, 1] });
                    }
                }
            }
            Atom::Min => {
                let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let act = active_within(&v, m, tol.activity);
                if act.len() > 1 {
                    points.push(BranchPoint { node: idx, coord: 0, options: act });
                }
            }
            Atom::Max => {
                let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let neg: Vec<f64> = v.iter().map(|a| -a).collect();
                let act = active_within(&neg, -m, tol.activity);
                if act.len() > 1 {
                    points.push(BranchPoint { node: idx, coord: 0, options: act });
                }
            }
            Atom::L2 => {
                if linalg::norm2(&v) <= tol.activity {
                    return Err(LinearizeError::NotPiecewiseLinear {
                        node: idx,
                        detail: "l2 norm at its kink: g' is not piecewise linear in d".into(),
                    });
                }
            }
            _ => {}
        }
    }
    product_guard(&points, cap)?;

    let mut out = Vec::new();
    for assign in assignments(&points) {
        let choice_of = |node: usize, coord: usize| -> Option<usize> {
            points
                .iter()
                .position(|p| p.node == node && p.coord == coord)
                .map(|k| assign[k])
        };
        let mut maps: Vec<DenseMatrix> = Vec::with_capacity(expr.nodes().len());
        let mut validity: Vec<Vec<f64>> = Vec::new();
        for (idx, node) in expr.nodes().iter().enumerate() {
            let stack = |maps: &[DenseMatrix]| -> DenseMatrix {
                let blocks: Vec<Vec<&DenseMatrix>> =
                    node.children.iter().map(|c| vec![&maps[c.0]]).collect();
                if blocks.is_empty() {
                    DenseMatrix::zeros(0, n)
                } else {
                    DenseMatrix::from_blocks(&blocks)
                }
            };
            let v = gather_values(&node.children);
            let map = match &node.atom {
                Atom::Const(c) => DenseMatrix::zeros(c.len(), n),
                Atom::Slice { start, len } => {
                    let mut m = DenseMatrix::zeros(*len, n);
                    for i in 0..*len {
                        m.set(i, start + i, 1.0);
                    }
                    m
                }
                Atom::Affine { a, .. } => a.matmul(&stack(&maps)),
                Atom::Smooth(s) => {
                    let jac = (s.jacobian)(&v);
                    jac.matmul(&stack(&maps))
                }
                Atom::Abs => {
                    let c = stack(&maps);
                    let mut m = DenseMatrix::zeros(v.len(), n);
                    for i in 0..v.len() {
                        let sign = abs_branch_sign(v[i], choice_of(idx, i), tol)?;
                        for j in 0..n {
                            m.set(i, j, sign * c.get(i, j));
                        }
                        if v[i].abs() <= tol.activity {
                            // chosen branch must dominate: -sign * (c_i · d) <= 0
                            validity.push(linalg::scale(c.row(i), -sign));
                        }
                    }
                    m
                }
                Atom::MinZero => {
                    let c = stack(&maps);
                    let mut m = DenseMatrix::zeros(v.len(), n);
                    for i in 0..v.len() {
                        if v[i] < -tol.activity {
                            for j in 0..n {
                                m.set(i, j, c.get(i, j));
                            }
                        } else if v[i] > tol.activity {
                            // row stays zero
                        } else {
                            let choice = choice_of(idx, i).expect("kink registered");
                            if choice == 1 {
                                // identity branch, valid when c_i · d <= 0
                                for j in 0..n {
                                    m.set(i, j, c.get(i, j));
                                }
                                validity.push(c.row(i).to_vec());
                            } else {
                                // zero branch, valid when c_i · d >= 0
                                validity.push(linalg::scale(c.row(i), -1.0));
                            }
                        }
                    }
                    m
                }
                Atom::Min | Atom::Max => {
                    let c = stack(&maps);
                    let is_min = matches!(node.atom, Atom::Min);
                    let cmp: Vec<f64> = if is_min { v.clone() } else { v.iter().map(|a| -a).collect() };
                    let best = cmp.iter().cloned().fold(f64::INFINITY, f64::min);
                    let act = active_within(&cmp, best, tol.activity);
                    let j = if act.len() == 1 {
                        act[0]
                    } else {
                        choice_of(idx, 0).expect("tie registered")
                    };
                    for &k in &act {
                        if k == j {
                            continue;
                        }
                        // row_j · d <= row_k · d (min), reversed for max
                        let diff = if is_min {
                            linalg::sub(c.row(j), c.row(k))
                        } else {
                            linalg::sub(c.row(k), c.row(j))
                        };
                        validity.push(diff);
                    }
                    DenseMatrix::new(1, n, c.row(j).to_vec()).expect("finite row")
                }
                Atom::L1 => {
                    let c = stack(&maps);
                    let mut row = vec![0.0; n];
                    for i in 0..v.len() {
                        let sign = abs_branch_sign(v[i], choice_of(idx, i), tol)?;
                        for j in 0..n {
                            row[j] += sign * c.get(i, j);
                        }
                        if v[i].abs() <= tol.activity {
                            validity.push(linalg::scale(c.row(i), -sign));
                        }
                    }
                    DenseMatrix::new(1, n, row).expect("finite row")
                }
                Atom::L2 => {
                    let c = stack(&maps);
                    let nv = linalg::norm2(&v);
                    let mut row = vec![0.0; n];
                    for i in 0..v.len() {
                        for j in 0..n {
                            row[j] += v[i] / nv * c.get(i, j);
                        }
                    }
                    DenseMatrix::new(1, n, row).expect("finite row")
                }
                Atom::Sum => {
                    let dim = expr.node_out_dim(node.children[0]);
                    let mut m = DenseMatrix::zeros(dim, n);
                    for ch in &node.children {
                        m = m.add(&maps[ch.0]);
                    }
                    m
                }
                Atom::Scale(s) => maps[node.children[0].0].scale(*s),
            };
            maps.push(map);
        }
        let selection = Selection(
            points
                .iter()
                .zip(&assign)
                .map(|(p, &c)| (p.node, p.coord, c))
                .collect(),
        );
        out.push(LinearPiece {
            selection,
            map: maps[expr.root().0].clone(),
            validity,
        });
    }
    Ok(out)
}

fn abs_branch_sign(v: f64, choice: Option<usize>, tol: &Tolerances) -> Result<f64, LinearizeError> {
    if v > tol.activity {
        Ok(1.0)
    } else if v < -tol.activity {
        Ok(-1.0)
    } else {
        match choice.expect("kink registered") {
            0 => Ok(1.0),
            _ => Ok(-1.0),
        }
    }
}

/// Enumerate the affine pieces of `w ↦ g''(x;d,w)` at fixed `(x, d)`.
pub fn linearize_dd2(
    expr: &PiecewiseExpr,
    x: &[f64],
    d: &[f64],
    tol: &Tolerances,
    cap: usize,
) -> Result<Vec<AffinePiece>, LinearizeError> {
    let n = expr.input_dim();
    let zero = vec![0.0; n];
    let jets = expr.forward(x, d, &zero, tol);
    let gather = |children: &[super::NodeId]| -> (Vec<f64>, Vec<f64>) {
        let mut v = Vec::new();
        let mut p = Vec::new();
        for c in children {
            v.extend_from_slice(&jets[c.0].value);
            p.extend_from_slice(&jets[c.0].d1);
        }
        (v, p)
    };

    // branch points are the doubly-degenerate kinks
    let mut points: Vec<BranchPoint> = Vec::new();
    for (idx, node) in expr.nodes().iter().enumerate() {
        let (v, p) = gather(&node.children);
        match node.atom {
            Atom::Abs | Atom::MinZero | Atom::L1 => {
                for coord in 0..v.len() {
                    if v[coord].abs() <= tol.activity && p[coord].abs() <= tol.activity {
                        points.push(BranchPoint { node: idx, coord, options: vec![0, 1] });
                    }
                }
            }
            Atom::Min | Atom::Max => {
                let sign = if matches!(node.atom, Atom::Min) { 1.0 } else { -1.0 };
                let sv: Vec<f64> = v.iter().map(|a| a * sign).collect();
                let sp: Vec<f64> = p.iter().map(|a| a * sign).collect();
                let act = active_within(&sv, sv.iter().cloned().fold(f64::INFINITY, f64::min), tol.activity);
                let best_p = act.iter().map(|&i| sp[i]).fold(f64::INFINITY, f64::min);
                let act_d: Vec<usize> =
                    act.into_iter().filter(|&i| sp[i] <= best_p + tol.activity).collect();
                if act_d.len() > 1 {
                    points.push(BranchPoint { node: idx, coord: 0, options: act_d });
                }
            }
            Atom::L2 => {
                if linalg::norm2(&v) <= tol.activity && linalg::norm2(&p) <= tol.activity {
                    return Err(LinearizeError::NotPiecewiseLinear {
                        node: idx,
                        detail: "l2 norm with zero value and direction: g'' = ||w|| is not affine"
                            .into(),
                    });
                }
            }
            _ => {}
        }
    }
    product_guard(&points, cap)?;

    let mut out = Vec::new();
    for assign in assignments(&points) {
        let choice_of = |node: usize, coord: usize| -> Option<usize> {
            points
                .iter()
                .position(|p| p.node == node && p.coord == coord)
                .map(|k| assign[k])
        };
        let mut forms: Vec<AffineForm> = Vec::with_capacity(expr.nodes().len());
        let mut validity: Vec<(Vec<f64>, f64)> = Vec::new();
        for (idx, node) in expr.nodes().iter().enumerate() {
            let (v, p) = gather(&node.children);
            let stack = |forms: &[AffineForm]| -> AffineForm {
                let mut map_blocks: Vec<Vec<&DenseMatrix>> = Vec::new();
                let mut offset = Vec::new();
                for c in &node.children {
                    map_blocks.push(vec![&forms[c.0].map]);
                    offset.extend_from_slice(&forms[c.0].offset);
                }
                let map = if map_blocks.is_empty() {
                    DenseMatrix::zeros(0, n)
                } else {
                    DenseMatrix::from_blocks(&map_blocks)
                };
                AffineForm { map, offset }
            };
            let form = match &node.atom {
                Atom::Const(c) => AffineForm {
                    map: DenseMatrix::zeros(c.len(), n),
                    offset: vec![0.0; c.len()],
                },
                Atom::Slice { start, len } => {
                    let mut m = DenseMatrix::zeros(*len, n);
                    for i in 0..*len {
                        m.set(i, start + i, 1.0);
                    }
                    AffineForm { map: m, offset: vec![0.0; *len] }
                }
                Atom::Affine { a, .. } => {
                    let c = stack(&forms);
                    AffineForm { map: a.matmul(&c.map), offset: a.matvec(&c.offset) }
                }
                Atom::Smooth(s) => {
                    let c = stack(&forms);
                    let jac = (s.jacobian)(&v);
                    let hess = (s.hessians)(&v);
                    let mut offset = jac.matvec(&c.offset);
                    for (i, h) in hess.iter().enumerate() {
                        offset[i] += linalg::dot(&p, &h.matvec(&p));
                    }
                    AffineForm { map: jac.matmul(&c.map), offset }
                }
                Atom::Abs => {
                    let c = stack(&forms);
                    let mut map = DenseMatrix::zeros(v.len(), n);
                    let mut offset = vec![0.0; v.len()];
                    for i in 0..v.len() {
                        let sign = abs_second_sign(v[i], p[i], choice_of(idx, i), tol);
                        for j in 0..n {
                            map.set(i, j, sign * c.map.get(i, j));
                        }
                        offset[i] = sign * c.offset[i];
                        if v[i].abs() <= tol.activity && p[i].abs() <= tol.activity {
                            validity
                                .push((linalg::scale(c.map.row(i), -sign), -sign * c.offset[i]));
                        }
                    }
                    AffineForm { map, offset }
                }
                Atom::MinZero => {
                    let c = stack(&forms);
                    let mut map = DenseMatrix::zeros(v.len(), n);
                    let mut offset = vec![0.0; v.len()];
                    for i in 0..v.len() {
                        let take_identity = if v[i] < -tol.activity {
                            true
                        } else if v[i] > tol.activity {
                            false
                        } else if p[i] < -tol.activity {
                            true
                        } else if p[i] > tol.activity {
                            false
                        } else {
                            let choice = choice_of(idx, i).expect("kink registered");
                            let ident = choice == 1;
                            let s = if ident { 1.0 } else { -1.0 };
                            validity.push((linalg::scale(c.map.row(i), s), s * c.offset[i]));
                            ident
                        };
                        if take_identity {
                            for j in 0..n {
                                map.set(i, j, c.map.get(i, j));
                            }
                            offset[i] = c.offset[i];
                        }
                    }
                    AffineForm { map, offset }
                }
                Atom::Min | Atom::Max => {
                    let c = stack(&forms);
                    let is_min = matches!(node.atom, Atom::Min);
                    let sign = if is_min { 1.0 } else { -1.0 };
                    let sv: Vec<f64> = v.iter().map(|a| a * sign).collect();
                    let sp: Vec<f64> = p.iter().map(|a| a * sign).collect();
                    let act = active_within(
                        &sv,
                        sv.iter().cloned().fold(f64::INFINITY, f64::min),
                        tol.activity,
                    );
                    let best_p = act.iter().map(|&i| sp[i]).fold(f64::INFINITY, f64::min);
                    let act_d: Vec<usize> =
                        act.into_iter().filter(|&i| sp[i] <= best_p + tol.activity).collect();
                    let j = if act_d.len() == 1 {
                        act_d[0]
                    } else {
                        choice_of(idx, 0).expect("tie registered")
                    };
                    for &k in &act_d {
                        if k == j {
                            continue;
                        }
                        let (rj, oj) = c.row(j);
                        let (rk, ok) = c.row(k);
                        let (row, off) = if is_min {
                            (linalg::sub(&rj, &rk), oj - ok)
                        } else {
                            (linalg::sub(&rk, &rj), ok - oj)
                        };
                        validity.push((row, off));
                    }
                    AffineForm {
                        map: DenseMatrix::new(1, n, c.map.row(j).to_vec()).expect("finite row"),
                        offset: vec![c.offset[j]],
                    }
                }
                Atom::L1 => {
                    let c = stack(&forms);
                    let mut row = vec![0.0; n];
                    let mut off = 0.0;
                    for i in 0..v.len() {
                        let sign = abs_second_sign(v[i], p[i], choice_of(idx, i), tol);
                        for j in 0..n {
                            row[j] += sign * c.map.get(i, j);
                        }
                        off += sign * c.offset[i];
                        if v[i].abs() <= tol.activity && p[i].abs() <= tol.activity {
                            validity
                                .push((linalg::scale(c.map.row(i), -sign), -sign * c.offset[i]));
                        }
                    }
                    AffineForm {
                        map: DenseMatrix::new(1, n, row).expect("finite row"),
                        offset: vec![off],
                    }
                }
                Atom::L2 => {
                    let c = stack(&forms);
                    let nv = linalg::norm2(&v);
                    let (dir, constant) = if nv > tol.activity {
                        let vp = linalg::dot(&v, &p) / nv;
                        (
                            linalg::scale(&v, 1.0 / nv),
                            (linalg::dot(&p, &p) - vp * vp) / nv,
                        )
                    } else {
                        // value 0, direction nonzero: g'' = <p, q>/||p||
                        let np = linalg::norm2(&p);
                        (linalg::scale(&p, 1.0 / np), 0.0)
                    };
                    let mut row = vec![0.0; n];
                    let mut off = constant;
                    for i in 0..v.len() {
                        for j in 0..n {
                            row[j] += dir[i] * c.map.get(i, j);
                        }
                        off += dir[i] * c.offset[i];
                    }
                    AffineForm {
                        map: DenseMatrix::new(1, n, row).expect("finite row"),
                        offset: vec![off],
                    }
                }
                Atom::Sum => {
                    let dim = expr.node_out_dim(node.children[0]);
                    let mut map = DenseMatrix::zeros(dim, n);
                    let mut offset = vec![0.0; dim];
                    for ch in &node.children {
                        map = map.add(&forms[ch.0].map);
                        offset = linalg::add(&offset, &forms[ch.0].offset);
                    }
                    AffineForm { map, offset }
                }
                Atom::Scale(s) => AffineForm {
                    map: forms[node.children[0].0].map.scale(*s),
                    offset: linalg::scale(&forms[node.children[0].0].offset, *s),
                },
            };
            forms.push(form);
        }
        let selection = Selection(
            points
                .iter()
                .zip(&assign)
                .map(|(pt, &c)| (pt.node, pt.coord, c))
                .collect(),
        );
        out.push(AffinePiece {
            selection,
            form: forms[expr.root().0].clone(),
            validity,
        });
    }
    Ok(out)
}

fn abs_second_sign(v: f64, p: f64, choice: Option<usize>, tol: &Tolerances) -> f64 {
    if v > tol.activity || (v.abs() <= tol.activity && p > tol.activity) {
        1.0
    } else if v < -tol.activity || (v.abs() <= tol.activity && p < -tol.activity) {
        -1.0
    } else {
        match choice.expect("kink registered") {
            0 => 1.0,
            _ => -1.0,
        }
    }
}
