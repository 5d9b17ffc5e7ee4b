//! Relaxed structural samples and soft tree evaluation.
//!
//! The variational parameters live in one flat vector. Per tree the layout is
//! `[ℓ (internal nodes) | a_op (internal nodes) | a_ft (all nodes)]`, followed
//! once by `log η̃_op` and `log η̃_ft`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Node, Tape};
use crate::conjugate::TapeDesign;
use crate::numerics::{DenseMatrix, DrawKind, RandomSource};
use crate::sym_tree::{Operator, OperatorSet, Topology, EXP_CLAMP};
use crate::tree_prior::{split_prob, PriorConfig};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub k: usize,
    pub depth: usize,
    pub n_ops: usize,
    pub p: usize,
}

impl ParamLayout {
    pub fn new(k: usize, depth: usize, n_ops: usize, p: usize) -> Self {
        Self { k, depth, n_ops, p }
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.depth)
    }

    fn internal(&self) -> usize {
        self.topology().internal_count()
    }

    fn nodes(&self) -> usize {
        self.topology().node_count()
    }

    pub fn tree_block(&self) -> usize {
        self.internal() * (1 + self.n_ops) + self.nodes() * self.p
    }

    pub fn len(&self) -> usize {
        self.k * self.tree_block() + self.n_ops + self.p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ell(&self, j: usize, z: usize) -> usize {
        debug_assert!(z < self.internal());
        j * self.tree_block() + z
    }

    pub fn a_op(&self, j: usize, z: usize) -> std::ops::Range<usize> {
        debug_assert!(z < self.internal());
        let s = j * self.tree_block() + self.internal() + z * self.n_ops;
        s..s + self.n_ops
    }

    pub fn a_ft(&self, j: usize, z: usize) -> std::ops::Range<usize> {
        let s = j * self.tree_block() + self.internal() * (1 + self.n_ops) + z * self.p;
        s..s + self.p
    }

    pub fn log_eta_op(&self) -> std::ops::Range<usize> {
        let s = self.k * self.tree_block();
        s..s + self.n_ops
    }

    pub fn log_eta_ft(&self) -> std::ops::Range<usize> {
        let s = self.k * self.tree_block() + self.n_ops;
        s..s + self.p
    }
}

/// Plain-valued variational parameters φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl VariationalParams {
    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                context: "variational parameters",
                expected: layout.len(),
                found: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    /// `ℓ = logit(p_ζ)`, zero categorical logits, `log η̃ = log η`.
    pub fn prior_matched(layout: ParamLayout, prior: &PriorConfig) -> Self {
        let mut values = vec![0.0; layout.len()];
        let topo = layout.topology();
        for j in 0..layout.k {
            for z in 0..topo.internal_count() {
                let p = split_prob(Topology::node_depth(z), prior);
                values[layout.ell(j, z)] = (p / (1.0 - p)).ln();
            }
        }
        for (v, e) in values[layout.log_eta_op()].iter_mut().zip(&prior.eta_op) {
            *v = e.ln();
        }
        for (v, e) in values[layout.log_eta_ft()].iter_mut().zip(&prior.eta_ft) {
            *v = e.ln();
        }
        Self { layout, values }
    }

    /// Prior-matched start with categorical logits drawn from `N(0, sd²)`.
    pub fn init(layout: ParamLayout, prior: &PriorConfig, sd: f64, src: &mut RandomSource) -> Self {
        let mut phi = Self::prior_matched(layout, prior);
        let topo = layout.topology();
        for j in 0..layout.k {
            for z in 0..topo.node_count() {
                if topo.is_internal(z) {
                    for i in layout.a_op(j, z) {
                        phi.values[i] = sd * src.gaussian();
                    }
                }
                for i in layout.a_ft(j, z) {
                    phi.values[i] = sd * src.gaussian();
                }
            }
        }
        phi
    }

    pub fn ell(&self, j: usize, z: usize) -> f64 {
        self.values[self.layout.ell(j, z)]
    }

    pub fn a_op(&self, j: usize, z: usize) -> &[f64] {
        &self.values[self.layout.a_op(j, z)]
    }

    pub fn a_ft(&self, j: usize, z: usize) -> &[f64] {
        &self.values[self.layout.a_ft(j, z)]
    }

    pub fn log_eta_op(&self) -> &[f64] {
        &self.values[self.layout.log_eta_op()]
    }

    pub fn log_eta_ft(&self) -> &[f64] {
        &self.values[self.layout.log_eta_ft()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Registers every coordinate as a tape leaf.
    pub fn to_tape<T: Real>(&self, tape: &mut Tape<T>) -> Result<ParamNodes<T>> {
        let nodes = self
            .values
            .iter()
            .map(|&v| tape.leaf(T::lit(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamNodes::from_nodes(self.layout, nodes))
    }
}

/// φ as tape nodes, indexed like [`VariationalParams`].
#[derive(Debug, Clone)]
pub struct ParamNodes<T> {
    layout: ParamLayout,
    nodes: Vec<Node<T>>,
}

impl<T: Real> ParamNodes<T> {
    pub fn from_nodes(layout: ParamLayout, nodes: Vec<Node<T>>) -> Self {
        assert_eq!(nodes.len(), layout.len(), "parameter node count");
        Self { layout, nodes }
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn ell(&self, j: usize, z: usize) -> Node<T> {
        self.nodes[self.layout.ell(j, z)]
    }

    pub fn a_op(&self, j: usize, z: usize) -> &[Node<T>] {
        &self.nodes[self.layout.a_op(j, z)]
    }

    pub fn a_ft(&self, j: usize, z: usize) -> &[Node<T>] {
        &self.nodes[self.layout.a_ft(j, z)]
    }

    pub fn log_eta_op(&self) -> &[Node<T>] {
        &self.nodes[self.layout.log_eta_op()]
    }

    pub fn log_eta_ft(&self) -> &[Node<T>] {
        &self.nodes[self.layout.log_eta_ft()]
    }
}

/// Linear annealing from `tau_start` to `tau_end` over `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub steps: usize,
}

impl Default for TempSchedule {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.5,
            steps: 1500,
        }
    }
}

impl TempSchedule {
    pub fn temperature(&self, step: usize) -> f64 {
        if step >= self.steps {
            return self.tau_end;
        }
        let frac = step as f64 / self.steps as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end) {
            return Err(Error::Config(format!(
                "temperature schedule needs tau_start >= tau_end > 0, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        Ok(())
    }
}

/// Temperatures for the expansion gate, operator and feature relaxations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    pub ex: f64,
    pub op: f64,
    pub ft: f64,
}

impl Temperatures {
    pub fn uniform(tau: f64) -> Self {
        Self { ex: tau, op: tau, ft: tau }
    }
}

/// Optional fixed temperatures overriding the shared schedule per kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TempOverrides {
    pub ex: Option<f64>,
    pub op: Option<f64>,
    pub ft: Option<f64>,
}

impl TempOverrides {
    pub fn apply(&self, tau: f64) -> Temperatures {
        Temperatures {
            ex: self.ex.unwrap_or(tau),
            op: self.op.unwrap_or(tau),
            ft: self.ft.unwrap_or(tau),
        }
    }
}

/// Relaxed labels of one tree. `e` and `o` cover internal nodes; `h` covers
/// all nodes.
#[derive(Debug, Clone)]
pub struct SoftTree<T> {
    pub e: Vec<Node<T>>,
    pub o: Vec<Vec<Node<T>>>,
    pub h: Vec<Vec<Node<T>>>,
}

#[derive(Debug, Clone)]
pub struct SoftSample<T> {
    pub trees: Vec<SoftTree<T>>,
}

/// Draws the relaxed labels. Noise is consumed per tree and node in heap
/// order: the gate uniform (internal nodes), operator Gumbels (internal
/// nodes), then feature Gumbels.
pub fn sample_soft<T: Real>(
    tape: &mut Tape<T>,
    phi: &ParamNodes<T>,
    temps: Temperatures,
    src: &mut RandomSource,
) -> SoftSample<T> {
    let layout = phi.layout();
    let topo = layout.topology();
    let mut trees = Vec::with_capacity(layout.k);
    for j in 0..layout.k {
        let mut tree = SoftTree {
            e: Vec::with_capacity(topo.internal_count()),
            o: Vec::with_capacity(topo.internal_count()),
            h: Vec::with_capacity(topo.node_count()),
        };
        for z in 0..topo.node_count() {
            if topo.is_internal(z) {
                let u = src.uniform01();
                let logistic = T::lit(u.ln() - (-u).ln_1p());
                let shifted = tape.add_const(phi.ell(j, z), logistic);
                let scaled = tape.mul_const(shifted, T::lit(1.0 / temps.ex));
                tree.e.push(tape.sigmoid(scaled));
                let logits: Vec<_> = phi
                    .a_op(j, z)
                    .iter()
                    .map(|&a| {
                        let g = T::lit(src.draw(DrawKind::Gumbel));
                        tape.add_const(a, g)
                    })
                    .collect();
                tree.o.push(softmax(tape, &logits, T::lit(temps.op)));
            }
            let logits: Vec<_> = phi
                .a_ft(j, z)
                .iter()
                .map(|&a| {
                    let g = T::lit(src.draw(DrawKind::Gumbel));
                    tape.add_const(a, g)
                })
                .collect();
            tree.h.push(softmax(tape, &logits, T::lit(temps.ft)));
        }
        trees.push(tree);
    }
    SoftSample { trees }
}

fn apply_unary_tape<T: Real>(tape: &mut Tape<T>, op: Operator, x: Node<T>) -> Node<T> {
    match op {
        Operator::Exp => {
            let c = tape.min_const(x, T::lit(EXP_CLAMP));
            tape.exp(c)
        }
        Operator::Log => tape.ln(x),
        Operator::Sin => tape.sin(x),
        Operator::Cos => tape.cos(x),
        Operator::Square => tape.square(x),
        _ => unreachable!("binary operator in unary slot"),
    }
}

fn apply_binary_tape<T: Real>(tape: &mut Tape<T>, op: Operator, a: Node<T>, b: Node<T>) -> Node<T> {
    match op {
        Operator::Add => tape.add(a, b),
        Operator::Mul => tape.mul(a, b),
        Operator::Sub => tape.sub(a, b),
        Operator::Div => tape.div(a, b),
        _ => unreachable!("unary operator in binary slot"),
    }
}

/// Soft value of node `zeta` for one data row:
/// `(1 − ẽ)·h̃ᵀx + ẽ·[Σᵤ õᵤ·u(L) + Σ_b õ_b·b(L, R)]`, and `h̃ᵀx` at maximal
/// depth. Mixture terms with exactly zero weight are skipped.
pub fn soft_eval_node<T: Real>(
    tape: &mut Tape<T>,
    zeta: usize,
    x: &[T],
    tree: &SoftTree<T>,
    ops: &OperatorSet,
    topo: Topology,
) -> Node<T> {
    let terminal = tape.lin_comb(x, &tree.h[zeta]);
    if !topo.is_internal(zeta) {
        return terminal;
    }
    let e = tree.e[zeta];
    if e.value() == T::zero() {
        return terminal;
    }
    let left = soft_eval_node(tape, Topology::left(zeta), x, tree, ops, topo);
    let needs_right = ops
        .ops()
        .iter()
        .zip(&tree.o[zeta])
        .any(|(op, w)| op.is_binary() && w.value() != T::zero());
    let right = if needs_right {
        Some(soft_eval_node(tape, Topology::right(zeta), x, tree, ops, topo))
    } else {
        None
    };
    let mut weights = Vec::with_capacity(ops.len());
    let mut values = Vec::with_capacity(ops.len());
    for (&op, &w) in ops.ops().iter().zip(&tree.o[zeta]) {
        if w.value() == T::zero() {
            continue;
        }
        let v = if op.is_binary() {
            apply_binary_tape(tape, op, left, right.expect("right child evaluated"))
        } else {
            apply_unary_tape(tape, op, left)
        };
        weights.push(w);
        values.push(v);
    }
    let nonterminal = tape.mix(&weights, &values);
    tape.lerp(e, terminal, nonterminal)
}

/// Soft design matrix: a shared constant-one intercept column followed by one
/// column per tree.
pub fn soft_eval<T: Real>(
    tape: &mut Tape<T>,
    sample: &SoftSample<T>,
    x: &DenseMatrix<T>,
    ops: &OperatorSet,
    topo: Topology,
) -> TapeDesign<T> {
    let n = x.rows();
    let one = tape.constant(T::one());
    let mut columns = Vec::with_capacity(sample.trees.len() + 1);
    columns.push(vec![one; n]);
    for tree in &sample.trees {
        let col = (0..n)
            .map(|i| soft_eval_node(tape, 0, x.row(i), tree, ops, topo))
            .collect();
        columns.push(col);
    }
    TapeDesign { rows: n, columns }
}

/// Builds a degenerate soft sample from hard labels: `ẽ ∈ {0,1}` and one-hot
/// `õ`, `h̃` as tape constants.
pub fn one_hot_sample<T: Real>(
    tape: &mut Tape<T>,
    skeletons: &[crate::sym_tree::HardSkeleton],
    topo: Topology,
    n_ops: usize,
    p: usize,
) -> SoftSample<T> {
    let one_hot = |tape: &mut Tape<T>, len: usize, at: usize| -> Vec<Node<T>> {
        (0..len)
            .map(|i| tape.constant(if i == at { T::one() } else { T::zero() }))
            .collect()
    };
    let trees = skeletons
        .iter()
        .map(|s| {
            let mut t = SoftTree {
                e: Vec::new(),
                o: Vec::new(),
                h: Vec::new(),
            };
            for z in 0..topo.node_count() {
                if topo.is_internal(z) {
                    let e = if s.expand[z] { T::one() } else { T::zero() };
                    t.e.push(tape.constant(e));
                    t.o.push(one_hot(tape, n_ops, s.op[z]));
                }
                t.h.push(one_hot(tape, p, s.feature[z]));
            }
            t
        })
        .collect();
    SoftSample { trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_errors;
    use crate::sym_tree::{design_matrix, prune, HardSkeleton};
    use approx::assert_abs_diff_eq;

    #[test]
    fn layout_is_contiguous() {
        let l = ParamLayout::new(3, 3, 9, 3);
        assert_eq!(l.tree_block(), 7 * 10 + 15 * 3);
        assert_eq!(l.len(), 3 * 115 + 12);
        assert_eq!(l.ell(1, 0), 115);
        assert_eq!(l.a_op(0, 6).end, 7 + 63);
        assert_eq!(l.a_ft(0, 14).end, 115);
        assert_eq!(l.log_eta_ft().end, l.len());
    }

    #[test]
    fn temperature_examples() {
        let s = TempSchedule::default();
        assert_eq!(s.temperature(0), 1.0);
        assert_eq!(s.temperature(750), 0.75);
        assert_eq!(s.temperature(1500), 0.5);
        assert_eq!(s.temperature(5000), 0.5);
        let mut prev = f64::INFINITY;
        for t in 0..3000 {
            let v = s.temperature(t);
            assert!(v <= prev);
            prev = v;
        }
    }

    fn tree_with(tape: &mut Tape<f64>, e: f64, o: &[f64], h: &[&[f64]]) -> SoftTree<f64> {
        SoftTree {
            e: vec![tape.constant(e)],
            o: vec![o.iter().map(|&v| tape.constant(v)).collect()],
            h: h.iter().map(|r| r.iter().map(|&v| tape.constant(v)).collect()).collect(),
        }
    }

    #[test]
    fn soft_node_examples() {
        let ops = OperatorSet::default();
        let topo = Topology::new(1);
        let mut add = vec![0.0; 9];
        add[0] = 1.0;
        let h: [&[f64]; 3] = [&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let x = [3.0, 7.0];
        let mut t = Tape::new();
        for (e, want) in [(0.0, 3.0), (1.0, 10.0), (0.5, 6.5)] {
            let tree = tree_with(&mut t, e, &add, &h);
            let v = soft_eval_node(&mut t, 0, &x, &tree, &ops, topo);
            assert_abs_diff_eq!(v.value(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_soft_examples() {
        let layout = ParamLayout::new(1, 1, 9, 2);
        let phi = VariationalParams::from_values(layout, vec![0.0; layout.len()]).unwrap();
        let mut t = Tape::<f64>::new();
        let nodes = phi.to_tape(&mut t).unwrap();
        let mut src = RandomSource::new(1, 0);
        let s = sample_soft(&mut t, &nodes, Temperatures::uniform(0.7), &mut src);
        assert_eq!(s.trees[0].e.len(), 1);
        assert_eq!(s.trees[0].h.len(), 3);
        let e = s.trees[0].e[0].value();
        assert!(e > 0.0 && e < 1.0);
        for simplex in s.trees[0].o.iter().chain(&s.trees[0].h) {
            let total: f64 = simplex.iter().map(|n| n.value()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn gate_at_half_uniform_is_half() {
        // ℓ = 0 and u = 0.5 give σ(0) at every temperature
        let mut t = Tape::<f64>::new();
        let ell = t.leaf(0.0).unwrap();
        let u: f64 = 0.5;
        for tau in [0.1, 1.0, 3.0] {
            let s = t.add_const(ell, u.ln() - (-u).ln_1p());
            let z = t.mul_const(s, 1.0 / tau);
            assert_eq!(t.sigmoid(z).value(), 0.5);
        }
    }

    #[test]
    fn equal_noise_gives_uniform_and_low_temperature_gives_one_hot() {
        let mut t = Tape::<f64>::new();
        let logits: Vec<_> = (0..4).map(|_| t.leaf(0.3).unwrap()).collect();
        let s = softmax(&mut t, &logits, 0.5);
        for n in &s {
            assert_abs_diff_eq!(n.value(), 0.25, epsilon = 1e-15);
        }
        let logits: Vec<_> = [0.1, 0.4, 0.2].iter().map(|&v| t.leaf(v).unwrap()).collect();
        let s = softmax(&mut t, &logits, 1e-4);
        assert_abs_diff_eq!(s[1].value(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_shapes() {
        let ops = OperatorSet::default();
        let topo = Topology::new(2);
        let mut t = Tape::<f64>::new();
        let sample = one_hot_sample(&mut t, &[HardSkeleton::leaves(topo)], topo, ops.len(), 2);
        let x = DenseMatrix::zeros(0, 2);
        let d = soft_eval(&mut t, &sample, &x, &ops, topo);
        assert_eq!((d.rows, d.cols()), (0, 2));
    }

    #[test]
    fn terminal_root_weights_features() {
        let ops = OperatorSet::default();
        let topo = Topology::new(0);
        let mut t = Tape::<f64>::new();
        let tree = SoftTree {
            e: vec![],
            o: vec![],
            h: vec![vec![t.constant(0.25), t.constant(0.75)]],
        };
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 0.0]]);
        let d = soft_eval(&mut t, &SoftSample { trees: vec![tree] }, &x, &ops, topo);
        let v = d.values();
        assert_eq!(v.col_vec(0), vec![1.0, 1.0]);
        assert_eq!(v.col_vec(1), vec![1.75, 1.0]);
    }

    #[test]
    fn one_hot_sample_matches_hard_design() {
        let ops = OperatorSet::default();
        let mut src = RandomSource::new(21, 0);
        for depth in 0..4 {
            let topo = Topology::new(depth);
            for _ in 0..50 {
                let skels: Vec<HardSkeleton> = (0..2)
                    .map(|_| {
                        let mut s = HardSkeleton::leaves(topo);
                        for z in 0..topo.node_count() {
                            s.expand[z] = topo.is_internal(z) && src.bernoulli(0.6);
                            s.op[z] = src.below(ops.len());
                            s.feature[z] = src.below(3);
                        }
                        s
                    })
                    .collect();
                let x = DenseMatrix::from_rows(
                    &(0..10)
                        .map(|_| (0..3).map(|_| src.uniform(0.5, 3.0)).collect())
                        .collect::<Vec<_>>(),
                );
                let trees: Vec<_> = skels.iter().map(|s| prune(s, topo, &ops)).collect();
                let Ok(hard) = design_matrix(&trees, &x) else { continue };
                let mut t = Tape::new();
                let sample = one_hot_sample(&mut t, &skels, topo, ops.len(), 3);
                let soft = soft_eval(&mut t, &sample, &x, &ops, topo).values();
                assert!(soft.max_abs_diff(&hard) <= 1e-8 * hard.frobenius().max(1.0));
            }
        }
    }

    #[test]
    fn reparameterization_gradient() {
        let ops = OperatorSet::parse("add,mul,sub,sin,cos,sq").unwrap();
        let layout = ParamLayout::new(1, 2, ops.len(), 2);
        let topo = layout.topology();
        let mut src = RandomSource::new(22, 0);
        let values: Vec<f64> = (0..layout.len()).map(|_| src.uniform(-1.0, 1.0)).collect();
        let row = [0.7, 1.3];
        for entry in 0..3 {
            let f = |t: &mut Tape<f64>, xs: &[Node<f64>]| {
                let nodes = ParamNodes::from_nodes(layout, xs.to_vec());
                let mut noise = RandomSource::new(99, entry);
                let s = sample_soft(t, &nodes, Temperatures::uniform(0.8), &mut noise);
                soft_eval_node(t, 0, &row, &s.trees[0], &ops, topo)
            };
            let errs = gradient_errors(f, &values, 1e-6).unwrap();
            assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
        }
    }
}
