//! Reverse-mode differentiation on a recording tape.
//!
//! Scalar expressions are recorded as nodes with precomputed partials; dense
//! layers are recorded as single fused ops that save their input activations
//! and backpropagate straight into a flat parameter-gradient buffer. A tape
//! is single-writer and meant to live for one ray; gradients from concurrent
//! tapes are combined by summation at a synchronization point.
//!
//! Numeric code that must run both with and without recording is written
//! against the [`Real`] trait, implemented by plain `f64` (no recording) and
//! by [`Var`] (recording).

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by the plain and the recorded execution paths.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lift a constant. Constants carry no derivative.
    fn lit(c: f64) -> Self;
    /// Current numeric value.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    /// `exp(x) - 1`, accurate near zero.
    fn exp_m1(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn relu(self) -> Self;
    fn softplus(self) -> Self;
    fn logistic(self) -> Self;
    /// Cut the value loose from the graph (identity for `f64`).
    fn detach(self) -> Self;
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logistic_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn lit(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn logistic(self) -> Self {
        logistic_f64(self)
    }
    fn detach(self) -> Self {
        self
    }
}

const CONST_ARG: u32 = u32::MAX;

#[derive(Clone, Copy)]
enum Op {
    /// Leaf reading parameter `slot`; backward adds the adjoint to the slot.
    Param { out: u32, slot: u32 },
    Unary { out: u32, x: u32, dx: f64 },
    Binary { out: u32, x: u32, dx: f64, y: u32, dy: f64 },
    /// `out0..out0+out_dim` = W·x + b for a layer stored flat at
    /// `w_off`/`b_off`. Input values live in the `saved` arena, input node
    /// ids (or `CONST_ARG`) in the `args` arena.
    Affine {
        out0: u32,
        in_dim: u32,
        out_dim: u32,
        w_off: u32,
        b_off: u32,
        saved_off: u32,
        args_off: u32,
    },
}

#[derive(Default)]
struct TapeData {
    vals: Vec<f64>,
    ops: Vec<Op>,
    saved: Vec<f64>,
    args: Vec<u32>,
}

/// Recording tape for one differentiable computation.
pub struct Tape {
    n_params: usize,
    data: RefCell<TapeData>,
    kink_margin: std::cell::Cell<f64>,
}

impl Tape {
    pub fn new(n_params: usize) -> Self {
        Tape {
            n_params,
            data: RefCell::new(TapeData::default()),
            kink_margin: std::cell::Cell::new(f64::INFINITY),
        }
    }

    /// Smallest |argument| seen at a nonsmooth op (relu, abs). Finite
    /// differencing is only valid when this margin exceeds the step size
    /// times the local sensitivity.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    fn note_kink(&self, dist: f64) {
        if dist < self.kink_margin.get() {
            self.kink_margin.set(dist);
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.data.borrow().vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn val(&self, idx: u32) -> f64 {
        self.data.borrow().vals[idx as usize]
    }

    fn push_node(&self, v: f64, op: impl FnOnce(u32) -> Op) -> u32 {
        let mut d = self.data.borrow_mut();
        let out = d.vals.len() as u32;
        d.vals.push(v);
        let rec = op(out);
        d.ops.push(rec);
        out
    }

    /// Introduce parameter `slot` (current value `value`) as a leaf node.
    pub fn param(&self, slot: usize, value: f64) -> Var<'_> {
        assert!(slot < self.n_params, "parameter slot out of range");
        let out = self.push_node(value, |out| Op::Param {
            out,
            slot: slot as u32,
        });
        Var::Node(self, out)
    }

    /// Record a dense layer `y = W x + b`.
    ///
    /// `params` is the flat parameter vector; the layer's weights occupy
    /// `w_off .. w_off + out_dim*in_dim` row-major and its biases
    /// `b_off .. b_off + out_dim`. Inputs may freely mix constants and nodes.
    pub fn affine(
        &self,
        params: &[f64],
        w_off: usize,
        b_off: usize,
        in_dim: usize,
        out_dim: usize,
        xs: &[Var<'_>],
    ) -> Vec<Var<'_>> {
        assert_eq!(xs.len(), in_dim, "affine input width mismatch");
        let (saved_off, args_off);
        {
            let mut d = self.data.borrow_mut();
            saved_off = d.saved.len() as u32;
            args_off = d.args.len() as u32;
            for x in xs {
                match *x {
                    Var::Const(c) => {
                        d.saved.push(c);
                        d.args.push(CONST_ARG);
                    }
                    Var::Node(_, i) => {
                        let v = d.vals[i as usize];
                        d.saved.push(v);
                        d.args.push(i);
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(out_dim);
        let mut out0 = 0u32;
        {
            let mut d = self.data.borrow_mut();
            for j in 0..out_dim {
                let row = &params[w_off + j * in_dim..w_off + (j + 1) * in_dim];
                let x = &d.saved[saved_off as usize..saved_off as usize + in_dim];
                let mut acc = params[b_off + j];
                for i in 0..in_dim {
                    acc += row[i] * x[i];
                }
                let idx = d.vals.len() as u32;
                if j == 0 {
                    out0 = idx;
                }
                d.vals.push(acc);
            }
            d.ops.push(Op::Affine {
                out0,
                in_dim: in_dim as u32,
                out_dim: out_dim as u32,
                w_off: w_off as u32,
                b_off: b_off as u32,
                saved_off,
                args_off,
            });
        }
        for j in 0..out_dim {
            out.push(Var::Node(self, out0 + j as u32));
        }
        out
    }

    /// Reverse sweep from the scalar `loss`, adding parameter gradients into
    /// `grad` (length `n_params`). Nodes are visited in reverse recording
    /// order, i.e. reverse topological order, exactly once.
    pub fn backward_into(&self, loss: Var<'_>, params: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_params, "gradient buffer length mismatch");
        let root = match loss {
            Var::Const(_) => return, // constant loss: zero gradient everywhere
            Var::Node(_, i) => i,
        };
        let d = self.data.borrow();
        let mut adj = vec![0.0f64; d.vals.len()];
        adj[root as usize] = 1.0;
        for op in d.ops.iter().rev() {
            match *op {
                Op::Param { out, slot } => {
                    let g = adj[out as usize];
                    if g != 0.0 {
                        grad[slot as usize] += g;
                    }
                }
                Op::Unary { out, x, dx } => {
                    let g = adj[out as usize];
                    if g != 0.0 {
                        adj[x as usize] += g * dx;
                    }
                }
                Op::Binary { out, x, dx, y, dy } => {
                    let g = adj[out as usize];
                    if g != 0.0 {
                        adj[x as usize] += g * dx;
                        adj[y as usize] += g * dy;
                    }
                }
                Op::Affine {
                    out0,
                    in_dim,
                    out_dim,
                    w_off,
                    b_off,
                    saved_off,
                    args_off,
                } => {
                    let (in_dim, out_dim) = (in_dim as usize, out_dim as usize);
                    let saved = &d.saved[saved_off as usize..saved_off as usize + in_dim];
                    let args = &d.args[args_off as usize..args_off as usize + in_dim];
                    for j in 0..out_dim {
                        let g = adj[out0 as usize + j];
                        if g == 0.0 {
                            continue;
                        }
                        grad[b_off as usize + j] += g;
                        let row_off = w_off as usize + j * in_dim;
                        let row = &params[row_off..row_off + in_dim];
                        let grow = &mut grad[row_off..row_off + in_dim];
                        for i in 0..in_dim {
                            grow[i] += g * saved[i];
                        }
                        for i in 0..in_dim {
                            let a = args[i];
                            if a != CONST_ARG {
                                adj[a as usize] += g * row[i];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Convenience wrapper allocating a fresh gradient vector.
    pub fn backward(&self, loss: Var<'_>, params: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params];
        self.backward_into(loss, params, &mut grad);
        grad
    }
}

/// A scalar on a [`Tape`]: either a plain constant or a recorded node.
#[derive(Clone, Copy)]
pub enum Var<'t> {
    Const(f64),
    Node(&'t Tape, u32),
}

impl<'t> Var<'t> {
    fn unary(self, f: impl FnOnce(f64) -> f64, df: impl FnOnce(f64, f64) -> f64) -> Var<'t> {
        match self {
            Var::Const(c) => Var::Const(f(c)),
            Var::Node(t, i) => {
                let x = t.val(i);
                let y = f(x);
                let out = t.push_node(y, |out| Op::Unary {
                    out,
                    x: i,
                    dx: df(x, y),
                });
                Var::Node(t, out)
            }
        }
    }

    /// Record a binary op. Partials are evaluated at the current operand
    /// values; constant operands contribute no edge.
    fn binary(
        a: Var<'t>,
        b: Var<'t>,
        f: impl FnOnce(f64, f64) -> f64,
        df: impl FnOnce(f64, f64) -> (f64, f64),
    ) -> Var<'t> {
        let (xa, xb) = (a.value(), b.value());
        match (a, b) {
            (Var::Const(_), Var::Const(_)) => Var::Const(f(xa, xb)),
            (Var::Node(t, i), Var::Const(_)) => {
                let (da, _) = df(xa, xb);
                let out = t.push_node(f(xa, xb), |out| Op::Unary { out, x: i, dx: da });
                Var::Node(t, out)
            }
            (Var::Const(_), Var::Node(t, j)) => {
                let (_, db) = df(xa, xb);
                let out = t.push_node(f(xa, xb), |out| Op::Unary { out, x: j, dx: db });
                Var::Node(t, out)
            }
            (Var::Node(t, i), Var::Node(t2, j)) => {
                debug_assert!(std::ptr::eq(t, t2), "operands from different tapes");
                let (da, db) = df(xa, xb);
                let out = t.push_node(f(xa, xb), |out| Op::Binary {
                    out,
                    x: i,
                    dx: da,
                    y: j,
                    dy: db,
                });
                Var::Node(t, out)
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, |a, b| a + b, |_, _| (1.0, 1.0))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, |a, b| a - b, |_, _| (1.0, -1.0))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, |a, b| a * b, |a, b| (b, a))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        Var::binary(self, rhs, |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(|x| -x, |_, _| -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn lit(c: f64) -> Self {
        Var::Const(c)
    }

    fn value(self) -> f64 {
        match self {
            Var::Const(c) => c,
            Var::Node(t, i) => t.val(i),
        }
    }

    fn exp(self) -> Self {
        self.unary(f64::exp, |_, y| y)
    }

    fn exp_m1(self) -> Self {
        self.unary(f64::exp_m1, |_, y| y + 1.0)
    }

    fn ln(self) -> Self {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    fn abs(self) -> Self {
        if let Var::Node(t, _) = self {
            t.note_kink(self.value().abs());
        }
        // subgradient 0 at the kink
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    fn sqrt(self) -> Self {
        self.unary(f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    fn relu(self) -> Self {
        if let Var::Node(t, _) = self {
            t.note_kink(self.value().abs());
        }
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    fn softplus(self) -> Self {
        self.unary(softplus_f64, |x, _| logistic_f64(x))
    }

    fn logistic(self) -> Self {
        self.unary(logistic_f64, |_, y| y * (1.0 - y))
    }

    fn detach(self) -> Self {
        Var::Const(self.value())
    }
}
