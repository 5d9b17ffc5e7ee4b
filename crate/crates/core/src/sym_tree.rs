//! Hard symbolic trees: skeleton indexing, pruning, evaluation, design
//! matrices and canonical printing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::DenseMatrix;
use crate::{Error, Real, Result};

/// Largest argument passed to `exp`; larger inputs are clamped.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Add,
    Mul,
    Sub,
    Div,
    Exp,
    Log,
    Sin,
    Cos,
    Square,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Operator::Add,
        Operator::Mul,
        Operator::Sub,
        Operator::Div,
        Operator::Exp,
        Operator::Log,
        Operator::Sin,
        Operator::Cos,
        Operator::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Mul => "mul",
            Operator::Sub => "sub",
            Operator::Div => "div",
            Operator::Exp => "exp",
            Operator::Log => "log",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
            Operator::Square => "sq",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Operator::Add | Operator::Mul | Operator::Sub | Operator::Div
        )
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Operator::Add | Operator::Mul)
    }

    pub fn apply_unary<T: Real>(self, x: T) -> T {
        match self {
            Operator::Exp => clamp_exp(x).exp(),
            Operator::Log => {
                if x < T::zero() {
                    T::nan()
                } else {
                    x.ln()
                }
            }
            Operator::Sin => x.sin(),
            Operator::Cos => x.cos(),
            Operator::Square => x * x,
            _ => panic!("{} is not unary", self.name()),
        }
    }

    pub fn apply_binary<T: Real>(self, a: T, b: T) -> T {
        match self {
            Operator::Add => a + b,
            Operator::Mul => a * b,
            Operator::Sub => a - b,
            Operator::Div => a / b,
            _ => panic!("{} is not binary", self.name()),
        }
    }
}

/// `min(x, EXP_CLAMP)` that keeps NaN.
pub(crate) fn clamp_exp<T: Real>(x: T) -> T {
    let c = T::lit(EXP_CLAMP);
    if x > c {
        c
    } else {
        x
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let op = match s {
            "add" | "+" => Operator::Add,
            "mul" | "*" => Operator::Mul,
            "sub" | "-" => Operator::Sub,
            "div" | "/" => Operator::Div,
            "exp" => Operator::Exp,
            "log" => Operator::Log,
            "sin" => Operator::Sin,
            "cos" => Operator::Cos,
            "sq" | "square" | "^2" => Operator::Square,
            _ => return Err(Error::Config(format!("unknown operator '{s}'"))),
        };
        Ok(op)
    }
}

/// Ordered operator catalog. Index `r` in [`OperatorSet::ops`] is the value of
/// the per-node operator label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSet {
    ops: Vec<Operator>,
}

impl Default for OperatorSet {
    fn default() -> Self {
        Self {
            ops: Operator::ALL.to_vec(),
        }
    }
}

impl OperatorSet {
    pub fn new(ops: Vec<Operator>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Config("operator set is empty".into()));
        }
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].contains(op) {
                return Err(Error::Config(format!("operator '{op}' listed twice")));
            }
        }
        Ok(Self { ops })
    }

    /// Parses a comma-separated list such as `add,mul,sin`.
    pub fn parse(list: &str) -> Result<Self> {
        let ops = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn get(&self, r: usize) -> Operator {
        self.ops[r]
    }

    pub fn unary(&self) -> Vec<Operator> {
        self.ops.iter().copied().filter(|o| !o.is_binary()).collect()
    }

    pub fn binary(&self) -> Vec<Operator> {
        self.ops.iter().copied().filter(|o| o.is_binary()).collect()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|o| o.name()).collect()
    }
}

impl fmt::Display for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

/// Full binary skeleton of depth `depth` in heap order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub depth: usize,
}

impl Topology {
    pub fn new(depth: usize) -> Self {
        Self { depth }
    }

    pub fn node_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    /// Nodes above the maximal depth, i.e. those that may expand.
    pub fn internal_count(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn node_depth(zeta: usize) -> usize {
        (usize::BITS - 1 - (zeta + 1).leading_zeros()) as usize
    }

    pub fn left(zeta: usize) -> usize {
        2 * zeta + 1
    }

    pub fn right(zeta: usize) -> usize {
        2 * zeta + 2
    }

    pub fn is_internal(&self, zeta: usize) -> bool {
        zeta < self.internal_count()
    }
}

/// Hard labels of one skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardSkeleton {
    pub expand: Vec<bool>,
    pub op: Vec<usize>,
    pub feature: Vec<usize>,
}

impl HardSkeleton {
    /// All nodes unexpanded with operator 0 and feature 0.
    pub fn leaves(topo: Topology) -> Self {
        let n = topo.node_count();
        Self {
            expand: vec![false; n],
            op: vec![0; n],
            feature: vec![0; n],
        }
    }

    pub fn validate(&self, topo: Topology, ops: &OperatorSet, p: usize) -> Result<()> {
        let n = topo.node_count();
        for (name, len) in [
            ("skeleton expand", self.expand.len()),
            ("skeleton op", self.op.len()),
            ("skeleton feature", self.feature.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: n,
                    found: len,
                });
            }
        }
        if (topo.internal_count()..n).any(|z| self.expand[z]) {
            return Err(Error::Config("maximal-depth node marked as expanded".into()));
        }
        if self.op.iter().any(|&o| o >= ops.len()) || self.feature.iter().any(|&h| h >= p) {
            return Err(Error::Config("skeleton label out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolicTree {
    Feature(usize),
    Unary(Operator, Box<SymbolicTree>),
    Binary(Operator, Box<SymbolicTree>, Box<SymbolicTree>),
}

impl SymbolicTree {
    pub fn feature(k: usize) -> Self {
        SymbolicTree::Feature(k)
    }

    pub fn unary(op: Operator, child: SymbolicTree) -> Self {
        SymbolicTree::Unary(op, Box::new(child))
    }

    pub fn binary(op: Operator, left: SymbolicTree, right: SymbolicTree) -> Self {
        SymbolicTree::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn depth(&self) -> usize {
        match self {
            SymbolicTree::Feature(_) => 0,
            SymbolicTree::Unary(_, c) => 1 + c.depth(),
            SymbolicTree::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            SymbolicTree::Feature(_) => 1,
            SymbolicTree::Unary(_, c) => 1 + c.size(),
            SymbolicTree::Binary(_, l, r) => 1 + l.size() + r.size(),
        }
    }

    pub fn max_feature(&self) -> usize {
        match self {
            SymbolicTree::Feature(k) => *k,
            SymbolicTree::Unary(_, c) => c.max_feature(),
            SymbolicTree::Binary(_, l, r) => l.max_feature().max(r.max_feature()),
        }
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        eval_tree(self, x)
    }

    pub fn canonical(&self) -> String {
        canonicalize(self)
    }
}

impl fmt::Display for SymbolicTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonicalize(self))
    }
}

/// Pruning driven by a label reader, so callers can observe which skeleton
/// nodes are consulted.
pub fn prune_with<R>(topo: Topology, ops: &OperatorSet, mut read: R) -> SymbolicTree
where
    R: FnMut(usize) -> (bool, usize, usize),
{
    fn go<R: FnMut(usize) -> (bool, usize, usize)>(
        zeta: usize,
        topo: Topology,
        ops: &OperatorSet,
        read: &mut R,
    ) -> SymbolicTree {
        let (e, o, h) = read(zeta);
        if !e || !topo.is_internal(zeta) {
            return SymbolicTree::Feature(h);
        }
        let op = ops.get(o);
        let left = go(Topology::left(zeta), topo, ops, read);
        if op.is_binary() {
            let right = go(Topology::right(zeta), topo, ops, read);
            SymbolicTree::binary(op, left, right)
        } else {
            SymbolicTree::unary(op, left)
        }
    }
    go(0, topo, ops, &mut read)
}

/// Maps a hard skeleton to its symbolic tree.
pub fn prune(skel: &HardSkeleton, topo: Topology, ops: &OperatorSet) -> SymbolicTree {
    prune_with(topo, ops, |z| (skel.expand[z], skel.op[z], skel.feature[z]))
}

/// Skeleton nodes retained by pruning, in ascending heap order.
pub fn surviving_nodes(skel: &HardSkeleton, topo: Topology, ops: &OperatorSet) -> Vec<usize> {
    let mut seen = Vec::new();
    prune_with(topo, ops, |z| {
        seen.push(z);
        (skel.expand[z], skel.op[z], skel.feature[z])
    });
    seen.sort_unstable();
    seen
}

pub fn eval_tree<T: Real>(tree: &SymbolicTree, x: &[T]) -> T {
    match tree {
        SymbolicTree::Feature(k) => x[*k],
        SymbolicTree::Unary(op, c) => op.apply_unary(eval_tree(c, x)),
        SymbolicTree::Binary(op, l, r) => op.apply_binary(eval_tree(l, x), eval_tree(r, x)),
    }
}

/// Column 0 is the intercept; column `j` holds tree `j − 1` evaluated rowwise.
/// Any non-finite entry is reported as [`Error::InvalidDesign`].
pub fn design_matrix<T: Real>(
    trees: &[SymbolicTree],
    x: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if let Some(m) = trees.iter().map(SymbolicTree::max_feature).max() {
        if m >= x.cols() {
            return Err(Error::DimensionMismatch {
                context: "design matrix features",
                expected: m + 1,
                found: x.cols(),
            });
        }
    }
    let n = x.rows();
    let k = trees.len();
    let mut t = DenseMatrix::zeros(n, k + 1);
    for i in 0..n {
        let row = x.row(i);
        t[(i, 0)] = T::one();
        for (j, tree) in trees.iter().enumerate() {
            let v = eval_tree(tree, row);
            if !v.is_finite() {
                return Err(Error::InvalidDesign { row: i, col: j + 1 });
            }
            t[(i, j + 1)] = v;
        }
    }
    Ok(t)
}

/// Prefix form with sorted commutative operands and `x·x → (sq x)`.
pub fn canonicalize(tree: &SymbolicTree) -> String {
    match tree {
        SymbolicTree::Feature(k) => format!("x{k}"),
        SymbolicTree::Unary(op, c) => format!("({} {})", op.name(), canonicalize(c)),
        SymbolicTree::Binary(op, l, r) => {
            let (a, b) = (canonicalize(l), canonicalize(r));
            if *op == Operator::Mul && a == b {
                return format!("(sq {a})");
            }
            if op.is_commutative() && b < a {
                format!("({} {b} {a})", op.name())
            } else {
                format!("({} {a} {b})", op.name())
            }
        }
    }
}

/// Infix rendering using `names` for features (falls back to `x{k}`).
pub fn infix(tree: &SymbolicTree, names: &[String]) -> String {
    match tree {
        SymbolicTree::Feature(k) => names.get(*k).cloned().unwrap_or_else(|| format!("x{k}")),
        SymbolicTree::Unary(Operator::Square, c) => match **c {
            SymbolicTree::Feature(_) => format!("{}^2", infix(c, names)),
            _ => format!("({})^2", infix(c, names)),
        },
        SymbolicTree::Unary(op, c) => format!("{}({})", op.name(), infix(c, names)),
        SymbolicTree::Binary(op, l, r) => {
            let sym = match op {
                Operator::Add => "+",
                Operator::Mul => "*",
                Operator::Sub => "-",
                _ => "/",
            };
            format!("({} {sym} {})", infix(l, names), infix(r, names))
        }
    }
}

/// `b0 + b1*g1 + ...` with coefficients printed to `decimals` places.
pub fn render_ensemble(
    trees: &[SymbolicTree],
    beta: &[f64],
    names: &[String],
    decimals: usize,
) -> String {
    let mut out = format!("{:.*}", decimals, beta.first().copied().unwrap_or(0.0));
    for (tree, &b) in trees.iter().zip(beta.iter().skip(1)) {
        let sign = if b < 0.0 { '-' } else { '+' };
        out.push_str(&format!(" {sign} {:.*}*{}", decimals, b.abs(), infix(tree, names)));
    }
    out
}
