//! Reverse-mode differentiation over a flat scalar tape.
//!
//! Nodes are appended in evaluation order, so operands always precede their
//! consumers and a single reverse sweep yields every adjoint. Domain escapes
//! (`log` of a negative, division by zero) do not raise: the non-finite value
//! is recorded and propagates, and [`Tape::backward`] refuses a non-finite
//! root so the caller can skip the step.

use crate::numerics::raw;
use crate::{Error, Real, Result};

/// Handle to a tape entry. Carries the forward value for convenience; it is
/// only meaningful for the tape (and tape generation) that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node<T> {
    idx: u32,
    value: T,
}

impl<T: Copy> Node<T> {
    pub fn index(&self) -> usize {
        self.idx as usize
    }

    pub fn value(&self) -> T {
        self.value
    }
}

/// Primitive catalog accepted by [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive<T> {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Square,
    Sqrt,
    Sigmoid,
    Lgamma,
    Digamma,
    MaxConst(T),
    MinConst(T),
    AddConst(T),
    MulConst(T),
    /// n-ary sum.
    Sum,
    /// Inner product of the first and second halves of the operand list.
    Dot,
    /// Like `Dot`, but pairs whose weight (first half) is exactly zero are
    /// skipped, so an unused mixture branch cannot poison the result.
    Mix,
    /// `(1 − e)·a + e·b` over operands `[e, a, b]`; exact at `e ∈ {0, 1}`.
    Lerp,
}

impl<T> Primitive<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Lgamma => "lgamma",
            Primitive::Digamma => "digamma",
            Primitive::MaxConst(_) => "max-const",
            Primitive::MinConst(_) => "min-const",
            Primitive::AddConst(_) => "add-const",
            Primitive::MulConst(_) => "mul-const",
            Primitive::Sum => "sum",
            Primitive::Dot => "dot",
            Primitive::Mix => "mix",
            Primitive::Lerp => "lerp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Square,
    Sqrt,
    Sigmoid,
    Lgamma,
    Digamma,
    MaxConst,
    MinConst,
    AddConst,
    MulConst,
    Sum,
    Dot,
    Mix,
    Lerp,
    LinComb,
}

/// `a`/`b` are operand indices; for n-ary ops `a` is the start in `args` and
/// `b` the count; for constant ops `b` indexes `consts`.
#[derive(Debug, Clone, Copy)]
struct Entry {
    op: Op,
    a: u32,
    b: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    entries: Vec<Entry>,
    values: Vec<T>,
    args: Vec<u32>,
    consts: Vec<T>,
    first_nonfinite: Option<usize>,
}

/// Adjoints indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    adj: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, node: Node<T>) -> T {
        self.adj.get(node.index()).copied().unwrap_or_else(T::zero)
    }

    pub fn wrt(&self, nodes: &[Node<T>]) -> Vec<T> {
        nodes.iter().map(|&n| self.get(n)).collect()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
            args: Vec::new(),
            consts: Vec::new(),
            first_nonfinite: None,
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            entries: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            args: Vec::with_capacity(nodes),
            consts: Vec::new(),
            first_nonfinite: None,
        }
    }

    /// Drops every node but keeps the allocations.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.values.clear();
        self.args.clear();
        self.consts.clear();
        self.first_nonfinite = None;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, node: Node<T>) -> T {
        self.values[node.index()]
    }

    /// Index of the first node whose value was not finite, if any.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.first_nonfinite
    }

    #[inline]
    fn push(&mut self, op: Op, a: u32, b: u32, value: T) -> Node<T> {
        let idx = self.entries.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(idx);
        }
        self.entries.push(Entry { op, a, b });
        self.values.push(value);
        Node {
            idx: idx as u32,
            value,
        }
    }

    #[inline]
    fn v(&self, n: Node<T>) -> T {
        self.values[n.idx as usize]
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: T) -> Result<Node<T>> {
        if !value.is_finite() {
            return Err(Error::NonFiniteLeaf(value.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(self.push(Op::Leaf, 0, 0, value))
    }

    /// Input that is not differentiated (its adjoint is computed but ignored).
    pub fn constant(&mut self, value: T) -> Node<T> {
        self.push(Op::Const, 0, 0, value)
    }

    fn const_op(&mut self, op: Op, x: Node<T>, c: T, value: T) -> Node<T> {
        let ci = self.consts.len() as u32;
        self.consts.push(c);
        self.push(op, x.idx, ci, value)
    }

    fn nary(&mut self, op: Op, operands: &[Node<T>], value: T) -> Node<T> {
        let start = self.args.len() as u32;
        self.args.extend(operands.iter().map(|n| n.idx));
        self.push(op, start, operands.len() as u32, value)
    }

    /// Generic entry point over the primitive catalog.
    pub fn record(&mut self, prim: Primitive<T>, operands: &[Node<T>]) -> Result<Node<T>> {
        let arity = |expected: usize| -> Result<()> {
            if operands.len() == expected {
                Ok(())
            } else {
                Err(Error::Arity {
                    primitive: prim.name(),
                    expected,
                    found: operands.len(),
                })
            }
        };
        let even = || -> Result<()> {
            if operands.len() % 2 == 0 {
                Ok(())
            } else {
                Err(Error::Arity {
                    primitive: prim.name(),
                    expected: operands.len() + 1,
                    found: operands.len(),
                })
            }
        };
        Ok(match prim {
            Primitive::Add => {
                arity(2)?;
                self.add(operands[0], operands[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(operands[0], operands[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(operands[0], operands[1])
            }
            Primitive::Div => {
                arity(2)?;
                self.div(operands[0], operands[1])
            }
            Primitive::Neg => {
                arity(1)?;
                self.neg(operands[0])
            }
            Primitive::Exp => {
                arity(1)?;
                self.exp(operands[0])
            }
            Primitive::Log => {
                arity(1)?;
                self.ln(operands[0])
            }
            Primitive::Sin => {
                arity(1)?;
                self.sin(operands[0])
            }
            Primitive::Cos => {
                arity(1)?;
                self.cos(operands[0])
            }
            Primitive::Square => {
                arity(1)?;
                self.square(operands[0])
            }
            Primitive::Sqrt => {
                arity(1)?;
                self.sqrt(operands[0])
            }
            Primitive::Sigmoid => {
                arity(1)?;
                self.sigmoid(operands[0])
            }
            Primitive::Lgamma => {
                arity(1)?;
                self.lgamma(operands[0])
            }
            Primitive::Digamma => {
                arity(1)?;
                self.digamma(operands[0])
            }
            Primitive::MaxConst(c) => {
                arity(1)?;
                self.max_const(operands[0], c)
            }
            Primitive::MinConst(c) => {
                arity(1)?;
                self.min_const(operands[0], c)
            }
            Primitive::AddConst(c) => {
                arity(1)?;
                self.add_const(operands[0], c)
            }
            Primitive::MulConst(c) => {
                arity(1)?;
                self.mul_const(operands[0], c)
            }
            Primitive::Sum => self.sum(operands),
            Primitive::Dot => {
                even()?;
                let h = operands.len() / 2;
                self.dot(&operands[..h], &operands[h..])
            }
            Primitive::Mix => {
                even()?;
                let h = operands.len() / 2;
                self.mix(&operands[..h], &operands[h..])
            }
            Primitive::Lerp => {
                arity(3)?;
                self.lerp(operands[0], operands[1], operands[2])
            }
        })
    }

    pub fn add(&mut self, a: Node<T>, b: Node<T>) -> Node<T> {
        let v = self.v(a) + self.v(b);
        self.push(Op::Add, a.idx, b.idx, v)
    }

    pub fn sub(&mut self, a: Node<T>, b: Node<T>) -> Node<T> {
        let v = self.v(a) - self.v(b);
        self.push(Op::Sub, a.idx, b.idx, v)
    }

    pub fn mul(&mut self, a: Node<T>, b: Node<T>) -> Node<T> {
        let v = self.v(a) * self.v(b);
        self.push(Op::Mul, a.idx, b.idx, v)
    }

    pub fn div(&mut self, a: Node<T>, b: Node<T>) -> Node<T> {
        let v = self.v(a) / self.v(b);
        self.push(Op::Div, a.idx, b.idx, v)
    }

    pub fn neg(&mut self, a: Node<T>) -> Node<T> {
        let v = -self.v(a);
        self.push(Op::Neg, a.idx, 0, v)
    }

    pub fn exp(&mut self, a: Node<T>) -> Node<T> {
        let v = self.v(a).exp();
        self.push(Op::Exp, a.idx, 0, v)
    }

    pub fn ln(&mut self, a: Node<T>) -> Node<T> {
        let x = self.v(a);
        let v = if x < T::zero() { T::nan() } else { x.ln() };
        self.push(Op::Log, a.idx, 0, v)
    }

    pub fn sin(&mut self, a: Node<T>) -> Node<T> {
        let v = self.v(a).sin();
        self.push(Op::Sin, a.idx, 0, v)
    }

    pub fn cos(&mut self, a: Node<T>) -> Node<T> {
        let v = self.v(a).cos();
        self.push(Op::Cos, a.idx, 0, v)
    }

    pub fn square(&mut self, a: Node<T>) -> Node<T> {
        let x = self.v(a);
        self.push(Op::Square, a.idx, 0, x * x)
    }

    pub fn sqrt(&mut self, a: Node<T>) -> Node<T> {
        let v = self.v(a).sqrt();
        self.push(Op::Sqrt, a.idx, 0, v)
    }

    pub fn sigmoid(&mut self, a: Node<T>) -> Node<T> {
        let v = sigmoid(self.v(a));
        self.push(Op::Sigmoid, a.idx, 0, v)
    }

    pub fn lgamma(&mut self, a: Node<T>) -> Node<T> {
        let v = raw::lgamma(self.v(a));
        self.push(Op::Lgamma, a.idx, 0, v)
    }

    pub fn digamma(&mut self, a: Node<T>) -> Node<T> {
        let v = raw::digamma(self.v(a));
        self.push(Op::Digamma, a.idx, 0, v)
    }

    pub fn max_const(&mut self, a: Node<T>, c: T) -> Node<T> {
        let x = self.v(a);
        let v = if x.is_nan() { x } else { x.max(c) };
        self.const_op(Op::MaxConst, a, c, v)
    }

    pub fn min_const(&mut self, a: Node<T>, c: T) -> Node<T> {
        let x = self.v(a);
        let v = if x.is_nan() { x } else { x.min(c) };
        self.const_op(Op::MinConst, a, c, v)
    }

    pub fn add_const(&mut self, a: Node<T>, c: T) -> Node<T> {
        let v = self.v(a) + c;
        self.const_op(Op::AddConst, a, c, v)
    }

    pub fn mul_const(&mut self, a: Node<T>, c: T) -> Node<T> {
        let v = self.v(a) * c;
        self.const_op(Op::MulConst, a, c, v)
    }

    pub fn sum(&mut self, xs: &[Node<T>]) -> Node<T> {
        let v = xs.iter().fold(T::zero(), |s, &n| s + self.v(n));
        self.nary(Op::Sum, xs, v)
    }

    pub fn dot(&mut self, a: &[Node<T>], b: &[Node<T>]) -> Node<T> {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let v = a
            .iter()
            .zip(b)
            .fold(T::zero(), |s, (&x, &y)| s + self.v(x) * self.v(y));
        let start = self.args.len() as u32;
        self.args.extend(a.iter().map(|n| n.idx));
        self.args.extend(b.iter().map(|n| n.idx));
        self.push(Op::Dot, start, (2 * a.len()) as u32, v)
    }

    pub fn mix(&mut self, weights: &[Node<T>], values: &[Node<T>]) -> Node<T> {
        assert_eq!(weights.len(), values.len(), "mix operands differ in length");
        let mut v = T::zero();
        for (&w, &x) in weights.iter().zip(values) {
            let wv = self.v(w);
            if wv != T::zero() {
                v = v + wv * self.v(x);
            }
        }
        let start = self.args.len() as u32;
        self.args.extend(weights.iter().map(|n| n.idx));
        self.args.extend(values.iter().map(|n| n.idx));
        self.push(Op::Mix, start, (2 * weights.len()) as u32, v)
    }

    /// `Σ cᵢ·xᵢ` with constant coefficients.
    pub fn lin_comb(&mut self, coeffs: &[T], xs: &[Node<T>]) -> Node<T> {
        assert_eq!(coeffs.len(), xs.len(), "lin_comb operands differ in length");
        let v = coeffs
            .iter()
            .zip(xs)
            .fold(T::zero(), |s, (&c, &x)| s + c * self.v(x));
        let start = self.args.len() as u32;
        self.args.push(self.consts.len() as u32);
        self.consts.extend_from_slice(coeffs);
        self.args.extend(xs.iter().map(|n| n.idx));
        self.push(Op::LinComb, start, xs.len() as u32, v)
    }

    pub fn lerp(&mut self, e: Node<T>, a: Node<T>, b: Node<T>) -> Node<T> {
        let ev = self.v(e);
        let v = if ev == T::zero() {
            self.v(a)
        } else if ev == T::one() {
            self.v(b)
        } else {
            (T::one() - ev) * self.v(a) + ev * self.v(b)
        };
        let start = self.args.len() as u32;
        self.args.extend([e.idx, a.idx, b.idx]);
        self.push(Op::Lerp, start, 3, v)
    }

    /// Reverse sweep from `root`. Returns adjoints for every node at or
    /// before the root.
    pub fn backward(&self, root: Node<T>) -> Result<Gradients<T>> {
        let r = root.index();
        let rv = self.values[r];
        if !rv.is_finite() {
            return Err(Error::NonFiniteRoot);
        }
        let mut adj = vec![T::zero(); r + 1];
        adj[r] = T::one();
        for i in (0..=r).rev() {
            let g = adj[i];
            if g == T::zero() {
                continue;
            }
            let Entry { op, a, b } = self.entries[i];
            let (a, b) = (a as usize, b as usize);
            let v = &self.values;
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add => {
                    adj[a] = adj[a] + g;
                    adj[b] = adj[b] + g;
                }
                Op::Sub => {
                    adj[a] = adj[a] + g;
                    adj[b] = adj[b] - g;
                }
                Op::Mul => {
                    let (va, vb) = (v[a], v[b]);
                    adj[a] = adj[a] + g * vb;
                    adj[b] = adj[b] + g * va;
                }
                Op::Div => {
                    let vb = v[b];
                    adj[a] = adj[a] + g / vb;
                    adj[b] = adj[b] - g * v[i] / vb;
                }
                Op::Neg => adj[a] = adj[a] - g,
                Op::Exp => adj[a] = adj[a] + g * v[i],
                Op::Log => adj[a] = adj[a] + g / v[a],
                Op::Sin => adj[a] = adj[a] + g * v[a].cos(),
                Op::Cos => adj[a] = adj[a] - g * v[a].sin(),
                Op::Square => adj[a] = adj[a] + g * T::lit(2.0) * v[a],
                Op::Sqrt => adj[a] = adj[a] + g * T::lit(0.5) / v[i],
                Op::Sigmoid => adj[a] = adj[a] + g * v[i] * (T::one() - v[i]),
                Op::Lgamma => adj[a] = adj[a] + g * raw::digamma(v[a]),
                Op::Digamma => adj[a] = adj[a] + g * raw::trigamma(v[a]),
                Op::MaxConst => {
                    if v[a] > self.consts[b] {
                        adj[a] = adj[a] + g;
                    }
                }
                Op::MinConst => {
                    if v[a] < self.consts[b] {
                        adj[a] = adj[a] + g;
                    }
                }
                Op::AddConst => adj[a] = adj[a] + g,
                Op::MulConst => adj[a] = adj[a] + g * self.consts[b],
                Op::Sum => {
                    for &k in &self.args[a..a + b] {
                        adj[k as usize] = adj[k as usize] + g;
                    }
                }
                Op::Dot | Op::Mix => {
                    let h = b / 2;
                    let (ws, xs) = self.args[a..a + b].split_at(h);
                    for (&w, &x) in ws.iter().zip(xs) {
                        let (w, x) = (w as usize, x as usize);
                        let (vw, vx) = (v[w], v[x]);
                        if op == Op::Mix && vw == T::zero() {
                            continue;
                        }
                        adj[w] = adj[w] + g * vx;
                        adj[x] = adj[x] + g * vw;
                    }
                }
                Op::LinComb => {
                    let c0 = self.args[a] as usize;
                    let xs = &self.args[a + 1..a + 1 + b];
                    for (&x, &c) in xs.iter().zip(&self.consts[c0..c0 + b]) {
                        adj[x as usize] = adj[x as usize] + g * c;
                    }
                }
                Op::Lerp => {
                    let e = self.args[a] as usize;
                    let lo = self.args[a + 1] as usize;
                    let hi = self.args[a + 2] as usize;
                    let ve = v[e];
                    let de = v[hi] - v[lo];
                    if ve == T::zero() {
                        adj[lo] = adj[lo] + g;
                    } else if ve == T::one() {
                        adj[hi] = adj[hi] + g;
                    } else {
                        adj[lo] = adj[lo] + g * (T::one() - ve);
                        adj[hi] = adj[hi] + g * ve;
                    }
                    if de.is_finite() {
                        adj[e] = adj[e] + g * de;
                    } else if ve != T::zero() && ve != T::one() {
                        adj[e] = T::nan();
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

/// Numerically stable softmax of `logits / temperature` on the tape.
/// The running maximum is subtracted as a constant, which leaves gradients
/// unchanged.
pub fn softmax<T: Real>(tape: &mut Tape<T>, logits: &[Node<T>], temperature: T) -> Vec<Node<T>> {
    let inv = T::one() / temperature;
    let scaled: Vec<Node<T>> = logits.iter().map(|&l| tape.mul_const(l, inv)).collect();
    let m = scaled
        .iter()
        .map(|n| n.value())
        .fold(T::neg_infinity(), T::max);
    let shift = if m.is_finite() { m } else { T::zero() };
    let exps: Vec<Node<T>> = scaled
        .iter()
        .map(|&s| {
            let d = tape.add_const(s, -shift);
            tape.exp(d)
        })
        .collect();
    let total = tape.sum(&exps);
    exps.iter().map(|&e| tape.div(e, total)).collect()
}

/// Log-softmax via log-sum-exp with max subtraction.
pub fn log_softmax<T: Real>(tape: &mut Tape<T>, logits: &[Node<T>]) -> Vec<Node<T>> {
    let m = logits
        .iter()
        .map(|n| n.value())
        .fold(T::neg_infinity(), T::max);
    let shift = if m.is_finite() { m } else { T::zero() };
    let shifted: Vec<Node<T>> = logits.iter().map(|&l| tape.add_const(l, -shift)).collect();
    let exps: Vec<Node<T>> = shifted.iter().map(|&s| tape.exp(s)).collect();
    let total = tape.sum(&exps);
    let lse = tape.ln(total);
    shifted.iter().map(|&s| tape.sub(s, lse)).collect()
}

/// Relative error with a small absolute floor so that coordinates whose true
/// derivative is zero are compared on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of `f` at `point` against central differences and
/// returns the per-coordinate relative errors.
pub fn gradient_errors<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Node<f64>]) -> Node<f64>,
{
    let mut tape = Tape::new();
    let leaves = point
        .iter()
        .map(|&x| tape.leaf(x))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut tape, &leaves);
    let grads = tape.backward(root)?.wrt(&leaves);
    let eval = |x: &[f64]| -> f64 {
        let mut t = Tape::new();
        let ls: Vec<_> = x.iter().map(|&v| t.constant(v)).collect();
        f(&mut t, &ls).value()
    };
    let mut errs = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let up = eval(&x);
        x[i] = point[i] - step;
        let down = eval(&x);
        x[i] = point[i];
        errs.push(relative_error(grads[i], (up - down) / (2.0 * step)));
    }
    Ok(errs)
}

/// Maximum relative error between tape and central-difference gradients.
pub fn check_gradient<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Node<f64>]) -> Node<f64>,
{
    Ok(gradient_errors(f, point, step)?
        .into_iter()
        .fold(0.0, f64::max))
}
