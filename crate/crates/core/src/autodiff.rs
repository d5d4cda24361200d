//! Reverse-mode differentiation over batches of small dense matrices.
//!
//! Every value on a [`Tape`] is a `[batch, rows, cols]` tensor. Elementwise
//! ops broadcast size-1 dimensions; batch size 1 is how parameters are shared
//! by all samples. Forward tangents ([`Jet`]) are built from ordinary tape ops,
//! so the reverse pass also differentiates through them. This is how
//! parameter gradients of expressions containing `∂H/∂q` are obtained.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{sym_eigen3, Mat3};
use crate::math::{sigmoid, softplus, sqrt, tanh};
use crate::{Error, Result};

/// Smallest eigenvalue gap for which eigenvector sensitivities are used.
pub const EIGEN_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    b: usize,
    r: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(b: usize, r: usize, c: usize) -> Tensor {
        Tensor { b, r, c, data: vec![0.0; b * r * c] }
    }

    /// # Panics
    /// If `data.len() != b·r·c`.
    pub fn new(b: usize, r: usize, c: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), b * r * c, "tensor data does not match shape [{b}, {r}, {c}]");
        Tensor { b, r, c, data }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::new(1, 1, 1, vec![x])
    }

    pub fn filled(b: usize, r: usize, c: usize, x: f64) -> Tensor {
        Tensor { b, r, c, data: vec![x; b * r * c] }
    }

    /// Column vector per sample from rows of equal length.
    pub fn from_columns<'a>(cols: impl IntoIterator<Item = &'a [f64]>) -> Tensor {
        let mut data = Vec::new();
        let mut b = 0;
        let mut r = 0;
        for col in cols {
            r = col.len();
            data.extend_from_slice(col);
            b += 1;
        }
        Tensor::new(b, r, 1, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.b, self.r, self.c)
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.data[(b * self.r + i) * self.c + j]
    }

    /// Slice of sample `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.r * self.c;
        &self.data[b * n..(b + 1) * n]
    }

    /// Samples `idx` in order.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.r * self.c);
        idx.iter().for_each(|&i| data.extend_from_slice(self.sample(i)));
        Tensor { b: idx.len(), r: self.r, c: self.c, data }
    }

    fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape(), o.shape());
        self.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { b: self.b, r: self.r, c: self.c, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

fn broadcast(a: (usize, usize, usize), b: (usize, usize, usize)) -> (usize, usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1), dim(a.2, b.2))
}

fn strides(t: &Tensor) -> (usize, usize, usize) {
    (if t.b == 1 { 0 } else { t.r * t.c }, if t.r == 1 { 0 } else { t.c }, if t.c == 1 { 0 } else { 1 })
}

/// Visits every output index of a broadcast pair with the matching input offsets.
fn for_each_broadcast(a: &Tensor, b: &Tensor, mut f: impl FnMut(usize, usize, usize)) -> (usize, usize, usize) {
    let shape = broadcast(a.shape(), b.shape());
    let (sa, sb) = (strides(a), strides(b));
    let mut o = 0;
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            for k in 0..shape.2 {
                f(o, i * sa.0 + j * sa.1 + k * sa.2, i * sb.0 + j * sb.1 + k * sb.2);
                o += 1;
            }
        }
    }
    shape
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut data = Vec::new();
    let (ad, bd) = (&a.data, &b.data);
    let shape = for_each_broadcast(a, b, |_, ia, ib| data.push(f(ad[ia], bd[ib])));
    Tensor::new(shape.0, shape.1, shape.2, data)
}

/// Sums `g` (broadcast shape) into a tensor of shape `like`, optionally
/// weighting each entry by the broadcast partner `w`.
fn reduce_into(like: &Tensor, g: &Tensor, w: Option<&Tensor>) -> Tensor {
    let mut out = Tensor::zeros(like.b, like.r, like.c);
    let sl = strides(like);
    match w {
        None => {
            let mut o = 0;
            for i in 0..g.b {
                for j in 0..g.r {
                    for k in 0..g.c {
                        out.data[i * sl.0 + j * sl.1 + k * sl.2] += g.data[o];
                        o += 1;
                    }
                }
            }
        }
        Some(w) => {
            let sw = strides(w);
            let mut o = 0;
            for i in 0..g.b {
                for j in 0..g.r {
                    for k in 0..g.c {
                        out.data[i * sl.0 + j * sl.1 + k * sl.2] += g.data[o] * w.data[i * sw.0 + j * sw.1 + k * sw.2];
                        o += 1;
                    }
                }
            }
        }
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.c, b.r, "matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape());
    let nb = broadcast((a.b, 1, 1), (b.b, 1, 1)).0;
    let (r, k, c) = (a.r, a.c, b.c);
    let mut out = Tensor::zeros(nb, r, c);
    for s in 0..nb {
        let ao = if a.b == 1 { 0 } else { s * r * k };
        let bo = if b.b == 1 { 0 } else { s * k * c };
        let oo = s * r * c;
        for i in 0..r {
            for p in 0..k {
                let x = a.data[ao + i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &b.data[bo + p * c..bo + (p + 1) * c];
                let orow = &mut out.data[oo + i * c..oo + (i + 1) * c];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
    }
    out
}

fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.b, a.c, a.r);
    for s in 0..a.b {
        let o = s * a.r * a.c;
        for i in 0..a.r {
            for j in 0..a.c {
                out.data[o + j * a.r + i] = a.data[o + i * a.c + j];
            }
        }
    }
    out
}

/// Batch-preserving sparse linear map between per-sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    input: (usize, usize),
    output: (usize, usize),
    terms: Vec<(u32, u32, f64)>,
}

impl LinearMap {
    pub fn new(input: (usize, usize), output: (usize, usize)) -> LinearMap {
        LinearMap { input, output, terms: Vec::new() }
    }

    /// `out[oi, oj] += coef · in[ii, ij]`.
    pub fn term(mut self, out: (usize, usize), inp: (usize, usize), coef: f64) -> LinearMap {
        self.push(out, inp, coef);
        self
    }

    pub fn push(&mut self, out: (usize, usize), inp: (usize, usize), coef: f64) {
        assert!(out.0 < self.output.0 && out.1 < self.output.1, "linear map output index out of range");
        assert!(inp.0 < self.input.0 && inp.1 < self.input.1, "linear map input index out of range");
        let o = out.0 * self.output.1 + out.1;
        let i = inp.0 * self.input.1 + inp.1;
        self.terms.push((o as u32, i as u32, coef));
    }

    /// Copies the input into the output at an offset.
    pub fn embed(input: (usize, usize), output: (usize, usize), at: (usize, usize)) -> LinearMap {
        let mut m = LinearMap::new(input, output);
        for i in 0..input.0 {
            for j in 0..input.1 {
                m.push((at.0 + i, at.1 + j), (i, j), 1.0);
            }
        }
        m
    }

    /// Extracts the block of size `size` starting at `at`.
    pub fn block(input: (usize, usize), at: (usize, usize), size: (usize, usize)) -> LinearMap {
        let mut m = LinearMap::new(input, size);
        for i in 0..size.0 {
            for j in 0..size.1 {
                m.push((i, j), (at.0 + i, at.1 + j), 1.0);
            }
        }
        m
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!((x.r, x.c), self.input, "linear map input shape");
        let (ni, no) = (self.input.0 * self.input.1, self.output.0 * self.output.1);
        let mut out = Tensor::zeros(x.b, self.output.0, self.output.1);
        for s in 0..x.b {
            let (xi, yo) = (&x.data[s * ni..(s + 1) * ni], &mut out.data[s * no..(s + 1) * no]);
            for &(o, i, c) in &self.terms {
                yo[o as usize] += c * xi[i as usize];
            }
        }
        out
    }

    fn apply_adjoint(&self, g: &Tensor) -> Tensor {
        let (ni, no) = (self.input.0 * self.input.1, self.output.0 * self.output.1);
        let mut out = Tensor::zeros(g.b, self.input.0, self.input.1);
        for s in 0..g.b {
            let (gi, xo) = (&g.data[s * no..(s + 1) * no], &mut out.data[s * ni..(s + 1) * ni]);
            for &(o, i, c) in &self.terms {
                xo[i as usize] += c * gi[o as usize];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Linear(Var, Arc<LinearMap>),
    Reshape(Var),
    SumBatch(Var),
    SumAll(Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    SymEig3(Var),
    CholRev(Var),
    TriInv(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation; gradients flow to leaves created with [`Tape::param`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    degenerate: usize,
}

/// Gradients of a scalar root with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient data of `v`, zeros if it did not influence the root.
    pub fn data_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], |g| g.data.clone())
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Eigenvector sensitivities dropped for near-repeated eigenvalues during
    /// the reverse passes run so far.
    pub fn degenerate_events(&self) -> usize {
        self.degenerate
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| k * x);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let c = self.scalar(k);
        self.add(a, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transpose(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn linear(&mut self, a: Var, map: &Arc<LinearMap>) -> Var {
        let v = map.apply(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Linear(a, map.clone()), ng)
    }

    /// Reinterprets the data with a new shape of equal size.
    pub fn reshape(&mut self, a: Var, b: usize, r: usize, c: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.data.len(), b * r * c, "reshape changes element count");
        let v = Tensor::new(b, r, c, t.data.clone());
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    pub fn sum_batch(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.r * t.c;
        let mut out = Tensor::zeros(1, t.r, t.c);
        for s in 0..t.b {
            out.data.iter_mut().zip(&t.data[s * n..(s + 1) * n]).for_each(|(o, x)| *o += x);
        }
        let ng = self.ng(a);
        self.push(out, Op::SumBatch(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// Eigen-decomposition of symmetric `[B, 3, 3]` input, packed as
    /// `[B, 3, 4]`: columns 0..3 hold eigenvectors, column 3 the ascending
    /// eigenvalues.
    pub fn sym_eig3(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!((t.r, t.c), (3, 3), "sym_eig3 expects 3x3 blocks");
        let mut out = Tensor::zeros(t.b, 3, 4);
        for s in 0..t.b {
            let e = sym_eigen3(&mat3_at(t, s));
            for i in 0..3 {
                for j in 0..3 {
                    out.data[s * 12 + i * 4 + j] = e.vectors.0[i][j];
                }
                out.data[s * 12 + i * 4 + 3] = e.values[i];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SymEig3(a), ng)
    }

    /// Lower-triangular `L` with `A = LᵀL` for each symmetric positive definite block.
    pub fn chol_rev(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        assert_eq!(t.r, t.c, "chol_rev expects square blocks");
        let n = t.r;
        let mut out = Tensor::zeros(t.b, n, n);
        for s in 0..t.b {
            reverse_cholesky_into(&t.data[s * n * n..(s + 1) * n * n], &mut out.data[s * n * n..(s + 1) * n * n], n)?;
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::CholRev(a), ng))
    }

    /// Inverse of lower-triangular blocks.
    pub fn tri_inv(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.r, t.c, "tri_inv expects square blocks");
        let n = t.r;
        let mut out = Tensor::zeros(t.b, n, n);
        for s in 0..t.b {
            lower_inverse_into(&t.data[s * n * n..(s + 1) * n * n], &mut out.data[s * n * n..(s + 1) * n * n], n);
        }
        let ng = self.ng(a);
        self.push(out, Op::TriInv(a), ng)
    }

    /// Reverse pass from a `[1, 1, 1]` root.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let (contributions, degenerate) = self.local_vjp(idx, &g);
            self.degenerate += degenerate;
            grads[idx] = Some(g);
            for (v, c) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot => *slot = Some(c),
                }
            }
        }
        Gradients { grads }
    }

    fn local_vjp(&self, idx: usize, g: &Tensor) -> (Vec<(Var, Tensor)>, usize) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        let mut out = Vec::with_capacity(2);
        let mut degenerate = 0;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if ng(*a) {
                    out.push((*a, reduce_into(val(*a), g, None)));
                }
                if ng(*b) {
                    out.push((*b, reduce_into(val(*b), g, None)));
                }
            }
            Op::Sub(a, b) => {
                if ng(*a) {
                    out.push((*a, reduce_into(val(*a), g, None)));
                }
                if ng(*b) {
                    out.push((*b, reduce_into(val(*b), g, None).map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    out.push((*a, reduce_into(val(*a), g, Some(val(*b)))));
                }
                if ng(*b) {
                    out.push((*b, reduce_into(val(*b), g, Some(val(*a)))));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.map(|x| k * x))),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ng(*a) {
                    let ga = matmul(g, &transpose(tb));
                    out.push((*a, if ta.b == 1 && ga.b > 1 { reduce_into(ta, &ga, None) } else { ga }));
                }
                if ng(*b) {
                    let gb = matmul(&transpose(ta), g);
                    out.push((*b, if tb.b == 1 && gb.b > 1 { reduce_into(tb, &gb, None) } else { gb }));
                }
            }
            Op::Transpose(a) => out.push((*a, transpose(g))),
            Op::Linear(a, map) => out.push((*a, map.apply_adjoint(g))),
            Op::Reshape(a) => {
                let t = val(*a);
                out.push((*a, Tensor::new(t.b, t.r, t.c, g.data.clone())));
            }
            Op::SumBatch(a) => {
                let t = val(*a);
                let mut d = Vec::with_capacity(t.data.len());
                for _ in 0..t.b {
                    d.extend_from_slice(&g.data);
                }
                out.push((*a, Tensor::new(t.b, t.r, t.c, d)));
            }
            Op::SumAll(a) => {
                let t = val(*a);
                out.push((*a, Tensor::filled(t.b, t.r, t.c, g.data[0])));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g.data.iter().zip(&y.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                out.push((*a, Tensor::new(y.b, y.r, y.c, d)));
            }
            Op::Softplus(a) => {
                let x = val(*a);
                let d = g.data.iter().zip(&x.data).map(|(g, &x)| g * sigmoid(x)).collect();
                out.push((*a, Tensor::new(x.b, x.r, x.c, d)));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                out.push((*a, Tensor::new(y.b, y.r, y.c, d)));
            }
            Op::SymEig3(a) => {
                let (grad, count) = sym_eig3_vjp(&node.value, g);
                degenerate = count;
                out.push((*a, grad));
            }
            Op::CholRev(a) => out.push((*a, chol_rev_vjp(&node.value, g))),
            Op::TriInv(a) => out.push((*a, tri_inv_vjp(&node.value, g))),
        }
        (out, degenerate)
    }
}

fn mat3_at(t: &Tensor, s: usize) -> Mat3 {
    let d = &t.data[s * 9..(s + 1) * 9];
    Mat3([[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]])
}

fn reverse_cholesky_into(a: &[f64], l: &mut [f64], n: usize) -> Result<()> {
    for i in (0..n).rev() {
        let mut d = a[i * n + i];
        for k in i + 1..n {
            d -= l[k * n + i] * l[k * n + i];
        }
        if !(d > 0.0) {
            return Err(Error::NotSpd { index: i, pivot: d });
        }
        let lii = sqrt(d);
        l[i * n + i] = lii;
        for j in 0..i {
            let mut s = a[i * n + j];
            for k in i + 1..n {
                s -= l[k * n + i] * l[k * n + j];
            }
            l[i * n + j] = s / lii;
        }
    }
    Ok(())
}

fn lower_inverse_into(l: &[f64], y: &mut [f64], n: usize) {
    for j in 0..n {
        y[j * n + j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * y[k * n + j];
            }
            y[i * n + j] = -s / l[i * n + i];
        }
    }
}

fn small_matmul(a: &[f64], b: &[f64], n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                let x = if ta { a[k * n + i] } else { a[i * n + k] };
                let y = if tb { b[j * n + k] } else { b[k * n + j] };
                s += x * y;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `Ā = sym(L⁻¹ Φ(tril(L̄) Lᵀ) L⁻ᵀ)`, with `Φ` taking the lower triangle and
/// halving the diagonal.
fn chol_rev_vjp(l: &Tensor, g: &Tensor) -> Tensor {
    let n = l.r;
    let mut out = Tensor::zeros(l.b, n, n);
    for s in 0..l.b {
        let ls = &l.data[s * n * n..(s + 1) * n * n];
        let mut gl = g.data[s * n * n..(s + 1) * n * n].to_vec();
        for i in 0..n {
            for j in i + 1..n {
                gl[i * n + j] = 0.0;
            }
        }
        let mut p = small_matmul(&gl, ls, n, false, true);
        for i in 0..n {
            p[i * n + i] *= 0.5;
            for j in i + 1..n {
                p[i * n + j] = 0.0;
            }
        }
        let mut y = vec![0.0; n * n];
        lower_inverse_into(ls, &mut y, n);
        let t = small_matmul(&small_matmul(&y, &p, n, false, false), &y, n, false, true);
        let o = &mut out.data[s * n * n..(s + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                o[i * n + j] = 0.5 * (t[i * n + j] + t[j * n + i]);
            }
        }
    }
    out
}

/// `L̄ = tril(−Yᵀ Ȳ Yᵀ)` for `Y = L⁻¹`.
fn tri_inv_vjp(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.r;
    let mut out = Tensor::zeros(y.b, n, n);
    for s in 0..y.b {
        let ys = &y.data[s * n * n..(s + 1) * n * n];
        let gs = &g.data[s * n * n..(s + 1) * n * n];
        let t = small_matmul(&small_matmul(ys, gs, n, true, false), ys, n, false, true);
        let o = &mut out.data[s * n * n..(s + 1) * n * n];
        for i in 0..n {
            for j in 0..=i {
                o[i * n + j] = -t[i * n + j];
            }
        }
    }
    out
}

/// `Ā = V (diag(λ̄) + F∘(VᵀV̄)) Vᵀ` symmetrized, `F_ij = 1/(λ_j − λ_i)`.
fn sym_eig3_vjp(packed: &Tensor, g: &Tensor) -> (Tensor, usize) {
    let mut out = Tensor::zeros(packed.b, 3, 3);
    let mut degenerate = 0;
    for s in 0..packed.b {
        let p = &packed.data[s * 12..(s + 1) * 12];
        let gs = &g.data[s * 12..(s + 1) * 12];
        let v = |i: usize, j: usize| p[i * 4 + j];
        let lam = [p[3], p[7], p[11]];
        let mut inner = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    inner[i][i] = gs[i * 4 + 3];
                    continue;
                }
                let vg: f64 = (0..3).map(|k| v(k, i) * gs[k * 4 + j]).sum();
                if vg == 0.0 {
                    continue;
                }
                let gap = lam[j] - lam[i];
                if gap.abs() < EIGEN_GAP {
                    degenerate += 1;
                    continue;
                }
                inner[i][j] = vg / gap;
            }
        }
        let o = &mut out.data[s * 9..(s + 1) * 9];
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += v(a, i) * inner[i][j] * v(b, j);
                    }
                }
                o[a * 3 + b] += 0.5 * acc;
                o[b * 3 + a] += 0.5 * acc;
            }
        }
    }
    (out, degenerate)
}

/// Value together with forward tangents along each generalized joint coordinate.
#[derive(Debug, Clone)]
pub struct Jet {
    pub val: Var,
    pub tan: Vec<Option<Var>>,
}

impl Jet {
    /// A value with zero tangents in `d` directions.
    pub fn constant(val: Var, d: usize) -> Jet {
        Jet { val, tan: vec![None; d] }
    }

    pub fn dims(&self) -> usize {
        self.tan.len()
    }
}

/// Which end of the spectrum [`Tape::j_eig_extreme`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

impl Tape {
    fn tan_sum(&mut self, a: Option<Var>, b: Option<Var>) -> Option<Var> {
        match (a, b) {
            (Some(x), Some(y)) => Some(self.add(x, y)),
            (x, None) => x,
            (None, y) => y,
        }
    }

    fn tan_map(&mut self, t: &[Option<Var>], mut f: impl FnMut(&mut Tape, Var) -> Var) -> Vec<Option<Var>> {
        t.iter().map(|x| x.map(|v| f(self, v))).collect()
    }

    pub fn j_add(&mut self, a: &Jet, b: &Jet) -> Jet {
        let val = self.add(a.val, b.val);
        let tan = a.tan.iter().zip(&b.tan).map(|(&x, &y)| self.tan_sum(x, y)).collect();
        Jet { val, tan }
    }

    pub fn j_sub(&mut self, a: &Jet, b: &Jet) -> Jet {
        let val = self.sub(a.val, b.val);
        let tan = a
            .tan
            .iter()
            .zip(&b.tan)
            .map(|(&x, &y)| match (x, y) {
                (Some(x), Some(y)) => Some(self.sub(x, y)),
                (x, None) => x,
                (None, Some(y)) => Some(self.neg(y)),
            })
            .collect();
        Jet { val, tan }
    }

    fn j_bilinear(&mut self, a: &Jet, b: &Jet, f: fn(&mut Tape, Var, Var) -> Var) -> Jet {
        let val = f(self, a.val, b.val);
        let tan = a
            .tan
            .iter()
            .zip(&b.tan)
            .map(|(&x, &y)| {
                let l = x.map(|x| f(self, x, b.val));
                let r = y.map(|y| f(self, a.val, y));
                self.tan_sum(l, r)
            })
            .collect();
        Jet { val, tan }
    }

    pub fn j_mul(&mut self, a: &Jet, b: &Jet) -> Jet {
        self.j_bilinear(a, b, Tape::mul)
    }

    pub fn j_matmul(&mut self, a: &Jet, b: &Jet) -> Jet {
        self.j_bilinear(a, b, Tape::matmul)
    }

    /// Product with a tangent-free factor on the left.
    pub fn j_matmul_left(&mut self, a: Var, b: &Jet) -> Jet {
        let val = self.matmul(a, b.val);
        let tan = self.tan_map(&b.tan, |t, x| t.matmul(a, x));
        Jet { val, tan }
    }

    pub fn j_mul_const(&mut self, a: &Jet, k: Var) -> Jet {
        let val = self.mul(a.val, k);
        let tan = self.tan_map(&a.tan, |t, x| t.mul(x, k));
        Jet { val, tan }
    }

    pub fn j_scale(&mut self, a: &Jet, k: f64) -> Jet {
        let val = self.scale(a.val, k);
        let tan = self.tan_map(&a.tan, |t, x| t.scale(x, k));
        Jet { val, tan }
    }

    pub fn j_add_const(&mut self, a: &Jet, k: Var) -> Jet {
        Jet { val: self.add(a.val, k), tan: a.tan.clone() }
    }

    pub fn j_transpose(&mut self, a: &Jet) -> Jet {
        let val = self.transpose(a.val);
        let tan = self.tan_map(&a.tan, Tape::transpose);
        Jet { val, tan }
    }

    pub fn j_linear(&mut self, a: &Jet, map: &Arc<LinearMap>) -> Jet {
        let val = self.linear(a.val, map);
        let tan = self.tan_map(&a.tan, |t, x| t.linear(x, map));
        Jet { val, tan }
    }

    pub fn j_tanh(&mut self, a: &Jet) -> Jet {
        let val = self.tanh(a.val);
        if a.tan.iter().all(Option::is_none) {
            return Jet { val, tan: a.tan.clone() };
        }
        let sq = self.mul(val, val);
        let one = self.scalar(1.0);
        let d = self.sub(one, sq);
        let tan = self.tan_map(&a.tan, |t, x| t.mul(d, x));
        Jet { val, tan }
    }

    pub fn j_softplus(&mut self, a: &Jet) -> Jet {
        let val = self.softplus(a.val);
        if a.tan.iter().all(Option::is_none) {
            return Jet { val, tan: a.tan.clone() };
        }
        let d = self.sigmoid(a.val);
        let tan = self.tan_map(&a.tan, |t, x| t.mul(d, x));
        Jet { val, tan }
    }

    /// Extremal eigenvalue `[B, 1, 1]` with tangents `vᵀ A' v`, plus the unit
    /// eigenvector `[B, 3, 1]`.
    pub fn j_eig_extreme(&mut self, a: &Jet, which: Extreme) -> (Jet, Var) {
        let k = if which == Extreme::Min { 0 } else { 2 };
        let packed = self.sym_eig3(a.val);
        let lam_map = Arc::new(LinearMap::new((3, 4), (1, 1)).term((0, 0), (k, 3), 1.0));
        let vec_map = Arc::new(LinearMap::block((3, 4), (0, k), (3, 1)));
        let lam = self.linear(packed, &lam_map);
        let v = self.linear(packed, &vec_map);
        let vt = self.transpose(v);
        let tan = self.tan_map(&a.tan, |t, x| {
            let av = t.matmul(x, v);
            t.matmul(vt, av)
        });
        (Jet { val: lam, tan }, v)
    }

    /// Inverse of a lower-triangular jet: `Y' = −Y L' Y`.
    pub fn j_tri_inv(&mut self, l: &Jet) -> Jet {
        let y = self.tri_inv(l.val);
        let tan = self.tan_map(&l.tan, |t, x| {
            let xy = t.matmul(x, y);
            let yxy = t.matmul(y, xy);
            t.neg(yxy)
        });
        Jet { val: y, tan }
    }

    /// Reverse Cholesky of a jet, `L' = Φ(L⁻ᵀ A' L⁻¹) L`. Also returns `L⁻¹`.
    pub fn j_chol_rev(&mut self, a: &Jet) -> Result<(Jet, Jet)> {
        let n = self.shape(a.val).1;
        let l = self.chol_rev(a.val)?;
        let y = self.tri_inv(l);
        let yt = self.transpose(y);
        let phi = Arc::new(lower_half_map(n));
        let tan: Vec<Option<Var>> = self.tan_map(&a.tan, |t, x| {
            let m = t.matmul(x, y);
            let m = t.matmul(yt, m);
            let p = t.linear(m, &phi);
            t.matmul(p, l)
        });
        let l_jet = Jet { val: l, tan };
        let inv_tan = self.tan_map(&l_jet.tan, |t, x| {
            let xy = t.matmul(x, y);
            let yxy = t.matmul(y, xy);
            t.neg(yxy)
        });
        Ok((l_jet, Jet { val: y, tan: inv_tan }))
    }
}

/// Lower triangle with halved diagonal.
pub fn lower_half_map(n: usize) -> LinearMap {
    let mut m = LinearMap::new((n, n), (n, n));
    for i in 0..n {
        for j in 0..=i {
            m.push((i, j), (i, j), if i == j { 0.5 } else { 1.0 });
        }
    }
    m
}

/// Extracts tape values of a `[1, 1, 1]` node.
pub fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.shape() != (1, 1, 1) {
        return Err(Error::NumericalFailure(format!("expected a scalar node, found {:?}", t.shape())));
    }
    Ok(t.data[0])
}
