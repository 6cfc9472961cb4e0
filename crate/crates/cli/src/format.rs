//! The on-disk problem format: one JSON document per problem.
//!
//! Expressions are node lists mirroring the core atom vocabulary; smooth
//! atoms in files are polynomial coefficient tables so that gradients,
//! Hessians and third-order actions are exact. Sets are factor products or
//! H-forms. Schema violations surface with the JSON line/column from the
//! parser; semantic violations (unknown names, dimension clashes,
//! infeasible reference points) carry the offending path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use optcheck_core::bilevel::{BilevelProblem, SmoothFn, SmoothMap};
use optcheck_core::cones::{Factor, HForm, PolyhedralSet};
use optcheck_core::expr::{Atom, Node, NodeId, PiecewiseExpr, Polynomial};
use optcheck_core::linalg::DenseMatrix;
use optcheck_core::nsopt::NonsmoothProgram;
use optcheck_core::tol::Tolerances;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: String,
    pub kind: ProblemKind,
    #[serde(default)]
    pub expressions: BTreeMap<String, ExprDoc>,
    #[serde(default)]
    pub sets: BTreeMap<String, SetDoc>,
    pub points: PointsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonsmooth: Option<NonsmoothDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bilevel: Option<BilevelDoc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    NonsmoothP,
    Bilevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExprDoc {
    pub input_dim: usize,
    pub nodes: Vec<NodeDoc>,
    pub root: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeDoc {
    Const { values: Vec<f64> },
    Slice { start: usize, len: usize },
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64>, children: Vec<usize> },
    Poly { terms: Vec<PolyTermDoc>, children: Vec<usize> },
    Abs { children: Vec<usize> },
    MinZero { children: Vec<usize> },
    Min { children: Vec<usize> },
    Max { children: Vec<usize> },
    L1 { children: Vec<usize> },
    L2 { children: Vec<usize> },
    Sum { children: Vec<usize> },
    Scale { factor: f64, children: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTermDoc {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum SetDoc {
    #[serde(rename = "product")]
    Product(Vec<FactorDoc>),
    #[serde(rename = "h_form")]
    HForm { a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<Vec<f64>>, e: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorDoc {
    Line,
    Nonpos,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsDoc {
    pub x_star: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_star: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonsmoothDoc {
    pub objective: String,
    pub constraint: String,
    pub set: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilevelDoc {
    pub nx: usize,
    pub ny: usize,
    pub upper: LevelDoc,
    pub lower: LevelDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelDoc {
    pub objective: String,
    #[serde(default)]
    pub ineq: Vec<String>,
    #[serde(default)]
    pub eq: Vec<String>,
}

#[derive(Debug)]
pub enum ParseError {
    Io(std::io::Error),
    /// JSON syntax or schema violation, with line and column.
    Schema { line: usize, column: usize, message: String },
    /// Semantic violation with the offending path.
    Semantic { path: String, message: String },
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseError::Io(e) => write!(f, "io error: {e}"),
            ParseError::Schema { line, column, message } => {
                write!(f, "schema error at line {line}, column {column}: {message}")
            }
            ParseError::Semantic { path, message } => {
                write!(f, "invalid problem at {path}: {message}")
            }
        }
    }
}

impl std::error::Error for ParseError {}

/// A parsed and semantically validated problem, ready to run.
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub digest: String,
    pub tolerances: Tolerances,
    pub instance: Instance,
}

pub enum Instance {
    Nonsmooth(NonsmoothProgram),
    Bilevel(BilevelProblem),
}

pub fn parse_problem(path: &std::path::Path) -> Result<LoadedProblem, ParseError> {
    let bytes = std::fs::read(path).map_err(ParseError::Io)?;
    let text = String::from_utf8(bytes).map_err(|e| ParseError::Semantic {
        path: "file".into(),
        message: format!("not valid UTF-8: {e}"),
    })?;
    parse_problem_str(&text)
}

pub fn parse_problem_str(text: &str) -> Result<LoadedProblem, ParseError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| ParseError::Schema {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let digest = format!("{:016x}", fnv1a(text.as_bytes()));
    let tolerances = match &file.tolerances {
        Some(t) => Tolerances::default().scaled(t.scale.unwrap_or(1.0)),
        None => Tolerances::default(),
    };
    if file.format_version != "1" {
        return Err(ParseError::Semantic {
            path: "format_version".into(),
            message: format!("unsupported version {:?}", file.format_version),
        });
    }
    let instance = build_instance(&file, &tolerances)?;
    Ok(LoadedProblem { file, digest, tolerances, instance })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn build_instance(file: &ProblemFile, tol: &Tolerances) -> Result<Instance, ParseError> {
    match file.kind {
        ProblemKind::NonsmoothP => {
            let doc = file.nonsmooth.as_ref().ok_or_else(|| ParseError::Semantic {
                path: "nonsmooth".into(),
                message: "kind is nonsmooth_p but the nonsmooth section is missing".into(),
            })?;
            let f = build_expr(file, &doc.objective)?;
            let g = build_expr(file, &doc.constraint)?;
            let set = build_set(file, &doc.set)?;
            set.validate_nonempty(tol).map_err(|e| ParseError::Semantic {
                path: format!("sets.{}", doc.set),
                message: e.to_string(),
            })?;
            let p = NonsmoothProgram::new(f, g, set, file.points.x_star.clone(), tol).map_err(
                |e| ParseError::Semantic { path: "points.x_star".into(), message: e.to_string() },
            )?;
            Ok(Instance::Nonsmooth(p))
        }
        ProblemKind::Bilevel => {
            let doc = file.bilevel.as_ref().ok_or_else(|| ParseError::Semantic {
                path: "bilevel".into(),
                message: "kind is bilevel but the bilevel section is missing".into(),
            })?;
            let y_star = file.points.y_star.clone().ok_or_else(|| ParseError::Semantic {
                path: "points.y_star".into(),
                message: "bilevel problems need y_star".into(),
            })?;
            let joint = doc.nx + doc.ny;
            let smooth_fn = |name: &str| -> Result<SmoothFn, ParseError> {
                // a document that is one polynomial over the whole input
                // keeps its exact third-order action
                if let Some(poly) = doc_as_polynomial(file, name, joint) {
                    return Ok(SmoothFn::from_polynomial(&poly));
                }
                let expr = build_expr(file, name)?;
                if expr.input_dim() != joint {
                    return Err(ParseError::Semantic {
                        path: format!("expressions.{name}"),
                        message: format!(
                            "bilevel data must take nx+ny = {joint} inputs, found {}",
                            expr.input_dim()
                        ),
                    });
                }
                SmoothFn::from_expr(expr).map_err(|e| ParseError::Semantic {
                    path: format!("expressions.{name}"),
                    message: e.to_string(),
                })
            };
            let smooth_map = |names: &[String]| -> Result<SmoothMap, ParseError> {
                if names.is_empty() {
                    return Ok(SmoothMap::empty(joint));
                }
                let comps: Result<Vec<SmoothFn>, ParseError> =
                    names.iter().map(|n| smooth_fn(n)).collect();
                SmoothMap::new(comps?).map_err(|e| ParseError::Semantic {
                    path: "bilevel".into(),
                    message: e.to_string(),
                })
            };
            let bp = BilevelProblem::new(
                smooth_fn(&doc.upper.objective)?,
                smooth_map(&doc.upper.ineq)?,
                smooth_map(&doc.upper.eq)?,
                smooth_fn(&doc.lower.objective)?,
                smooth_map(&doc.lower.ineq)?,
                smooth_map(&doc.lower.eq)?,
                file.points.x_star.clone(),
                y_star,
                tol,
            )
            .map_err(|e| ParseError::Semantic {
                path: "points".into(),
                message: e.to_string(),
            })?;
            Ok(Instance::Bilevel(bp))
        }
    }
}

fn build_expr(file: &ProblemFile, name: &str) -> Result<PiecewiseExpr, ParseError> {
    let doc = file.expressions.get(name).ok_or_else(|| ParseError::Semantic {
        path: format!("expressions.{name}"),
        message: "expression not defined".into(),
    })?;
    let ctx = |i: usize| format!("expressions.{name}.nodes[{i}]");
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (i, nd) in doc.nodes.iter().enumerate() {
        let children = |c: &[usize]| c.iter().map(|&j| NodeId(j)).collect::<Vec<_>>();
        let node = match nd {
            NodeDoc::Const { values } => Node { atom: Atom::Const(values.clone()), children: vec![] },
            NodeDoc::Slice { start, len } => {
                Node { atom: Atom::Slice { start: *start, len: *len }, children: vec![] }
            }
            NodeDoc::Affine { matrix, offset, children: ch } => {
                let a = DenseMatrix::from_rows(matrix).map_err(|e| ParseError::Semantic {
                    path: ctx(i),
                    message: e.to_string(),
                })?;
                Node { atom: Atom::Affine { a, b: offset.clone() }, children: children(ch) }
            }
            NodeDoc::Poly { terms, children: ch } => {
                let in_dim = terms.first().map(|t| t.powers.len()).unwrap_or(0);
                for t in terms {
                    if t.powers.len() != in_dim {
                        return Err(ParseError::Semantic {
                            path: ctx(i),
                            message: "polynomial terms disagree on variable count".into(),
                        });
                    }
                }
                let poly = Polynomial::new(
                    in_dim,
                    terms.iter().map(|t| (t.coef, t.powers.clone())).collect(),
                );
                Node { atom: Atom::Smooth(poly.to_smooth_atom()), children: children(ch) }
            }
            NodeDoc::Abs { children: ch } => Node { atom: Atom::Abs, children: children(ch) },
            NodeDoc::MinZero { children: ch } => Node { atom: Atom::MinZero, children: children(ch) },
            NodeDoc::Min { children: ch } => Node { atom: Atom::Min, children: children(ch) },
            NodeDoc::Max { children: ch } => Node { atom: Atom::Max, children: children(ch) },
            NodeDoc::L1 { children: ch } => Node { atom: Atom::L1, children: children(ch) },
            NodeDoc::L2 { children: ch } => Node { atom: Atom::L2, children: children(ch) },
            NodeDoc::Sum { children: ch } => Node { atom: Atom::Sum, children: children(ch) },
            NodeDoc::Scale { factor, children: ch } => {
                Node { atom: Atom::Scale(*factor), children: children(ch) }
            }
        };
        nodes.push(node);
    }
    PiecewiseExpr::from_nodes(nodes, doc.input_dim, NodeId(doc.root)).map_err(|e| {
        ParseError::Semantic { path: format!("expressions.{name}"), message: e.to_string() }
    })
}

fn build_set(file: &ProblemFile, name: &str) -> Result<PolyhedralSet, ParseError> {
    let doc = file.sets.get(name).ok_or_else(|| ParseError::Semantic {
        path: format!("sets.{name}"),
        message: "set not defined".into(),
    })?;
    match doc {
        SetDoc::Product(fs) => Ok(PolyhedralSet::Product(
            fs.iter()
                .map(|f| match f {
                    FactorDoc::Line => Factor::Line,
                    FactorDoc::Nonpos => Factor::Nonpos,
                    FactorDoc::Zero => Factor::Zero,
                })
                .collect(),
        )),
        SetDoc::HForm { a, b, c, e } => {
            let dim = a.first().or(c.first()).map(|r| r.len()).unwrap_or(0);
            let mk = |rows: &Vec<Vec<f64>>| -> Result<DenseMatrix, ParseError> {
                if rows.is_empty() {
                    Ok(DenseMatrix::zeros(0, dim))
                } else {
                    DenseMatrix::from_rows(rows).map_err(|er| ParseError::Semantic {
                        path: format!("sets.{name}"),
                        message: er.to_string(),
                    })
                }
            };
            Ok(PolyhedralSet::HForm(HForm { a: mk(a)?, b: b.clone(), c: mk(c)?, e: e.clone() }))
        }
    }
}

/// Detect the "single polynomial over the whole input" document pattern:
/// `nodes = [slice(0, input_dim), poly over it]` with the poly as root.
fn doc_as_polynomial(file: &ProblemFile, name: &str, joint: usize) -> Option<Polynomial> {
    let doc = file.expressions.get(name)?;
    if doc.input_dim != joint || doc.nodes.len() != 2 || doc.root != 1 {
        return None;
    }
    let NodeDoc::Slice { start: 0, len } = doc.nodes[0] else { return None };
    if len != joint {
        return None;
    }
    let NodeDoc::Poly { terms, children } = &doc.nodes[1] else { return None };
    if children != &[0] || terms.iter().any(|t| t.powers.len() != joint) {
        return None;
    }
    Some(Polynomial::new(
        joint,
        terms.iter().map(|t| (t.coef, t.powers.clone())).collect(),
    ))
}

/// Serialize back to the canonical JSON text (round-trip identity).
pub fn to_canonical_json(file: &ProblemFile) -> String {
    serde_json::to_string_pretty(file).expect("format structs always serialize")
}
