//! Minimal vector-valued reverse-mode tape.
//!
//! Nodes hold dense `f64` vectors. The primitive set is small on purpose:
//! affine maps, elementwise arithmetic and activations, reductions (sum,
//! log-sum-exp), concatenation and slicing. A tape is built per loss
//! evaluation and discarded afterwards.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param { offset: usize },
    Affine { w: Var, b: Var, x: Var, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift { a: Var, scale: f64 },
    Silu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Softplus(Var),
    Sum(Var),
    LogSumExp(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param { .. } => "param",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScaleShift { .. } => "scale_shift",
            Op::Silu(_) => "silu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Softplus(_) => "softplus",
            Op::Sum(_) => "sum",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Max-shifted log-sum-exp.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
    nonfinite: Option<&'static str>,
}

impl Tape {
    /// A tape whose `param` leaves index into a parameter vector of length `n_params`.
    pub fn new(n_params: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            n_params,
            nonfinite: None,
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        if self.nonfinite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.nonfinite = Some(op.name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// First primitive that produced a NaN or infinity, if any.
    pub fn first_nonfinite(&self) -> Option<&'static str> {
        self.nonfinite
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Leaf reading `params[range]`; its gradient lands in the same range.
    pub fn param(&mut self, params: &[f64], range: Range<usize>) -> Var {
        assert!(range.end <= self.n_params, "parameter range out of bounds");
        let offset = range.start;
        self.push(params[range].to_vec(), Op::Param { offset })
    }

    /// `W x + b` with `W` stored row-major as `rows × cols`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        assert_eq!(wv.len(), rows * cols);
        assert_eq!(bv.len(), rows);
        assert_eq!(xv.len(), cols);
        let out = (0..rows)
            .map(|i| {
                let row = &wv[i * cols..(i + 1) * cols];
                bv[i] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(out, Op::Affine { w, b, x, rows, cols })
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operands differ in length");
        let out = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        self.push(out, op)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `scale · a + shift`, elementwise.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, Op::ScaleShift { a, scale }, |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.scale_shift(a, scale, 0.0)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, Op::Silu(a), silu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp(self.value(a));
        self.push(vec![s], Op::LogSumExp(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, range: Range<usize>) -> Var {
        let out = self.value(a)[range.clone()].to_vec();
        self.push(out, Op::Slice { a, start: range.start })
    }

    /// Reverse sweep from the scalar `out`. Returns d(out)/d(params).
    pub fn gradient(&self, out: Var) -> Result<Vec<f64>> {
        if let Some(op) = self.nonfinite {
            return Err(Error::NonFinite { op });
        }
        assert_eq!(self.len(out), 1, "gradient needs a scalar output");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); out.0 + 1];
        grads[out.0] = vec![1.0];
        let mut param_grad = vec![0.0; self.n_params];

        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let g = &mut grads[v.0];
            if g.is_empty() {
                g.resize(len, 0.0);
            }
            g
        }

        for idx in (0..=out.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (i, gi) in g.iter().enumerate() {
                        param_grad[offset + i] += gi;
                    }
                }
                Op::Affine { w, b, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    {
                        let gw = acc(&mut grads, *w, rows * cols);
                        for i in 0..rows {
                            let gi = g[i];
                            if gi != 0.0 {
                                for (gw_ij, xj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                                    *gw_ij += gi * xj;
                                }
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *b, rows);
                        for i in 0..rows {
                            gb[i] += g[i];
                        }
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for i in 0..rows {
                        let gi = g[i];
                        if gi != 0.0 {
                            for (gxj, wij) in gx.iter_mut().zip(&wv[i * cols..(i + 1) * cols]) {
                                *gxj += wij * gi;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(t, s)| *t += s);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(t, s)| *t += s);
                }
                Op::Sub(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(t, s)| *t += s);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(t, s)| *t -= s);
                }
                Op::Mul(a, b) => {
                    let n = g.len();
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, n);
                    for i in 0..n {
                        ga[i] += g[i] * bv[i];
                    }
                    let gb = acc(&mut grads, *b, n);
                    for i in 0..n {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::ScaleShift { a, scale } => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (t, s) in ga.iter_mut().zip(&g) {
                        *t += scale * s;
                    }
                }
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        let s = sigmoid(av[i]);
                        ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * node.value[i];
                    }
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] / av[i];
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += 2.0 * av[i] * g[i];
                    }
                }
                Op::Sqrt(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] / (2.0 * node.value[i]);
                    }
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * sigmoid(av[i]);
                    }
                }
                Op::Sum(a) => {
                    let n = self.len(*a);
                    acc(&mut grads, *a, n).iter_mut().for_each(|t| *t += g[0]);
                }
                Op::LogSumExp(a) => {
                    let av = self.value(*a);
                    let lse = node.value[0];
                    let ga = acc(&mut grads, *a, av.len());
                    for i in 0..av.len() {
                        ga[i] += g[0] * (av[i] - lse).exp();
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.len(*p);
                        let gp = acc(&mut grads, *p, n);
                        for i in 0..n {
                            gp[i] += g[off + i];
                        }
                        off += n;
                    }
                }
                Op::Slice { a, start } => {
                    let n = self.len(*a);
                    let ga = acc(&mut grads, *a, n);
                    for i in 0..g.len() {
                        ga[start + i] += g[i];
                    }
                }
            }
        }
        Ok(param_grad)
    }
}

/// Value and exact gradient of the scalar built by `f` at `at`.
pub fn grad<F>(f: F, at: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &[f64]) -> Var,
{
    let mut tape = Tape::new(at.len());
    let out = f(&mut tape, at);
    let g = tape.gradient(out)?;
    Ok((tape.scalar(out), g))
}
