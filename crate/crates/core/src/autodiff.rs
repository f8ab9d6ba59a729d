//! Reverse-mode automatic differentiation over 2D tensors, plus Adam.
//!
//! A [`Tape`] records every operation as it runs; [`Tape::backward`] walks
//! the record once in reverse. Batches are stacked along rows.

use std::fmt::Debug;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

use crate::meshnet::SparseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<(usize, usize)>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Floating-point element type with a matrix-multiply kernel.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static + std::iter::Sum {
    /// `c = alpha * a · b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let extent = |r: usize, c: usize, rs: isize, cs: isize| {
                    if r == 0 || c == 0 {
                        0
                    } else {
                        ((r - 1) as isize * rs + (c - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= extent(m, k, rsa, csa));
                assert!(b.len() >= extent(k, n, rsb, csb));
                // SAFETY: bounds asserted above for non-negative strides
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    fn add_assign(&mut self, o: &Tensor<T>) {
        for (a, &b) in self.data.iter_mut().zip(&o.data) {
            *a = *a + b;
        }
    }
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Gather { x: Var, idx: Arc<Vec<u32>> },
    Sparse { x: Var, map: Arc<SparseMatrix>, blocks: usize },
    RepeatRows { x: Var, times: usize },
    Reshape { x: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Sum { x: Var },
    Bce { p: Var, t: Var },
    Cce { q: Var, t: Var },
    Kl { mu: Var, lv: Var },
    Reparam { mu: Var, lv: Var, eps: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Lower clamp for probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if it received none.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

fn shape_err<T>(op: &'static str, shapes: &[(usize, usize)]) -> Result<T> {
    Err(AutodiffError::Shape {
        op,
        shapes: shapes.to_vec(),
    })
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `x · w + b` with `w` of shape `in × out` and `b` of shape `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.0 || b.is_some_and(|b| self.shape(b) != (1, ws.1)) {
            let mut s = vec![xs, ws];
            if let Some(b) = b {
                s.push(self.shape(b));
            }
            return shape_err("linear", &s);
        }
        let (n, k, m) = (xs.0, xs.1, ws.1);
        let mut out = Tensor::zeros(n, m);
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value.data;
            for r in 0..n {
                out.data[r * m..(r + 1) * m].copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n,
            k,
            m,
            &self.value(x).data,
            k as isize,
            1,
            &self.value(w).data,
            m as isize,
            1,
            beta,
            &mut out.data,
        );
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &ins))
    }

    /// Row `r` of the output concatenates rows `idx[r*group .. (r+1)*group]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<u32>>, group: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if group == 0 || idx.len() % group != 0 || idx.iter().any(|&i| i as usize >= rows) {
            return shape_err("gather_rows", &[(rows, cols), (idx.len(), group)]);
        }
        let out_rows = idx.len() / group;
        let mut out = Tensor::zeros(out_rows, group * cols);
        let xv = &self.value(x).data;
        for (slot, &i) in out.data.chunks_exact_mut(cols).zip(idx.iter()) {
            slot.copy_from_slice(&xv[i as usize * cols..(i as usize + 1) * cols]);
        }
        Ok(self.push(out, Op::Gather { x, idx }, &[x]))
    }

    /// Applies `map` to each of `blocks` consecutive row blocks of `x`.
    pub fn sparse_map(&mut self, x: Var, map: Arc<SparseMatrix>, blocks: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if rows != map.cols * blocks {
            return shape_err("sparse_map", &[(rows, cols), (map.rows, map.cols)]);
        }
        let mut out = Tensor::zeros(map.rows * blocks, cols);
        let xv = &self.value(x).data;
        for b in 0..blocks {
            for r in 0..map.rows {
                let dst = (b * map.rows + r) * cols;
                for (c, v) in map.row(r) {
                    let v = T::lit(v);
                    let src = (b * map.cols + c) * cols;
                    for j in 0..cols {
                        out.data[dst + j] = out.data[dst + j] + v * xv[src + j];
                    }
                }
            }
        }
        Ok(self.push(out, Op::Sparse { x, map, blocks }, &[x]))
    }

    /// Each row of `x` repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        let mut data = Vec::with_capacity(rows * times * cols);
        for r in self.value(x).data.chunks_exact(cols.max(1)).take(rows) {
            for _ in 0..times {
                data.extend_from_slice(r);
            }
        }
        Ok(self.push(Tensor::from_vec(rows * times, cols, data), Op::RepeatRows { x, times }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return shape_err("reshape", &[s, (rows, cols)]);
        }
        let data = self.value(x).data.clone();
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::Reshape { x }, &[x]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return shape_err("concat_cols", &[sa, sb]);
        }
        let mut out = Tensor::zeros(sa.0, sa.1 + sb.1);
        for r in 0..sa.0 {
            let o = r * (sa.1 + sb.1);
            out.data[o..o + sa.1].copy_from_slice(self.value(a).row(r));
            out.data[o + sa.1..o + sa.1 + sb.1].copy_from_slice(self.value(b).row(r));
        }
        Ok(self.push(out, Op::Concat { a, b }, &[a, b]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start >= end || end > cols {
            return shape_err("slice_cols", &[(rows, cols), (start, end)]);
        }
        let w = end - start;
        let mut out = Tensor::zeros(rows, w);
        for r in 0..rows {
            out.data[r * w..(r + 1) * w].copy_from_slice(&self.value(x).row(r)[start..end]);
        }
        Ok(self.push(out, Op::Slice { x, start }, &[x]))
    }

    /// Elementwise sum of same-shaped values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err("add", &[sa, sb]);
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::lit(s);
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = *v * k);
        self.push(out, Op::Scale { x, s }, &[x])
    }

    /// `Σ wᵢ xᵢ` over same-shaped values.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s)?,
            });
        }
        acc.ok_or(AutodiffError::Shape {
            op: "weighted_sum",
            shapes: vec![],
        })
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid { x })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let cols = out.cols.max(1);
        for row in out.data.chunks_exact_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        self.push(out, Op::Softmax { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).data.len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Elementwise binary cross-entropy of probabilities `p` against `t`.
    pub fn bce(&mut self, p: Var, t: Var) -> Result<Var> {
        let (sp, st) = (self.shape(p), self.shape(t));
        if sp != st {
            return shape_err("bce", &[sp, st]);
        }
        let out: Vec<T> = self
            .value(p)
            .data
            .iter()
            .zip(&self.value(t).data)
            .map(|(&p, &t)| {
                let pc = clamp_prob(p);
                -(t * pc.ln() + (T::one() - t) * (T::one() - pc).ln())
            })
            .collect();
        Ok(self.push(Tensor::from_vec(sp.0, sp.1, out), Op::Bce { p, t }, &[p, t]))
    }

    /// Per-row categorical cross-entropy `−Σ t ln q`; output is `rows × 1`.
    pub fn cce(&mut self, q: Var, t: Var) -> Result<Var> {
        let (sq, st) = (self.shape(q), self.shape(t));
        if sq != st {
            return shape_err("cce", &[sq, st]);
        }
        let cols = sq.1.max(1);
        let out: Vec<T> = self
            .value(q)
            .data
            .chunks_exact(cols)
            .zip(self.value(t).data.chunks_exact(cols))
            .map(|(q, t)| {
                q.iter()
                    .zip(t)
                    .map(|(&q, &t)| if t == T::zero() { T::zero() } else { -t * clamp_prob(q).ln() })
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::from_vec(sq.0, 1, out), Op::Cce { q, t }, &[q, t]))
    }

    /// Elementwise `½(μ² + e^{lv} − 1 − lv)`.
    pub fn kl_normal(&mut self, mu: Var, lv: Var) -> Result<Var> {
        let (sm, sl) = (self.shape(mu), self.shape(lv));
        if sm != sl {
            return shape_err("kl_normal", &[sm, sl]);
        }
        let half = T::lit(0.5);
        let out: Vec<T> = self
            .value(mu)
            .data
            .iter()
            .zip(&self.value(lv).data)
            .map(|(&m, &l)| half * (m * m + l.exp() - T::one() - l))
            .collect();
        Ok(self.push(Tensor::from_vec(sm.0, sm.1, out), Op::Kl { mu, lv }, &[mu, lv]))
    }

    /// `μ + exp(½ lv) · ε`.
    pub fn reparameterize(&mut self, mu: Var, lv: Var, eps: Var) -> Result<Var> {
        let (sm, sl, se) = (self.shape(mu), self.shape(lv), self.shape(eps));
        if sm != sl || sm != se {
            return shape_err("reparameterize", &[sm, sl, se]);
        }
        let half = T::lit(0.5);
        let out: Vec<T> = (0..sm.0 * sm.1)
            .map(|i| {
                self.value(mu).data[i] + (half * self.value(lv).data[i]).exp() * self.value(eps).data[i]
            })
            .collect();
        Ok(self.push(Tensor::from_vec(sm.0, sm.1, out), Op::Reparam { mu, lv, eps }, &[mu, lv, eps]))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(s));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, k) = self.shape(*x);
                let m = self.shape(*w).1;
                if self.wants(*x) {
                    let mut gx = Tensor::zeros(n, k);
                    T::gemm(n, m, k, &g.data, m as isize, 1, &self.value(*w).data, 1, m as isize, T::zero(), &mut gx.data);
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = Tensor::zeros(k, m);
                    T::gemm(k, n, m, &self.value(*x).data, 1, k as isize, &g.data, m as isize, 1, T::zero(), &mut gw.data);
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = Tensor::zeros(1, m);
                        for row in g.data.chunks_exact(m.max(1)) {
                            for (a, &v) in gb.data.iter_mut().zip(row) {
                                *a = *a + v;
                            }
                        }
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Gather { x, idx } => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for (slot, &i) in g.data.chunks_exact(cols).zip(idx.iter()) {
                    let dst = &mut gx.data[i as usize * cols..(i as usize + 1) * cols];
                    for (d, &s) in dst.iter_mut().zip(slot) {
                        *d = *d + s;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sparse { x, map, blocks } => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for b in 0..*blocks {
                    for r in 0..map.rows {
                        let src = (b * map.rows + r) * cols;
                        for (c, v) in map.row(r) {
                            let v = T::lit(v);
                            let dst = (b * map.cols + c) * cols;
                            for j in 0..cols {
                                gx.data[dst + j] = gx.data[dst + j] + v * g.data[src + j];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RepeatRows { x, times } => {
                let (rows, cols) = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for t in 0..*times {
                        let src = &g.data[(r * times + t) * cols..(r * times + t + 1) * cols];
                        for (d, &s) in gx.data[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape { x } => {
                let (rows, cols) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::from_vec(rows, cols, g.data.clone()));
            }
            Op::Concat { a, b } => {
                let (ra, ca) = self.shape(*a);
                let cb = self.shape(*b).1;
                let (mut ga, mut gb) = (Tensor::zeros(ra, ca), Tensor::zeros(ra, cb));
                for r in 0..ra {
                    let row = g.row(r);
                    ga.data[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                    gb.data[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Slice { x, start } => {
                let (rows, cols) = self.shape(*x);
                let w = g.cols;
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    gx.data[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, s } => {
                let k = T::lit(*s);
                let mut gx = g.clone();
                gx.data.iter_mut().for_each(|v| *v = *v * k);
                self.accumulate(grads, *x, gx);
            }
            Op::Relu { x } => {
                let mut gx = g.clone();
                for (d, &xv) in gx.data.iter_mut().zip(&self.value(*x).data) {
                    if xv <= T::zero() {
                        *d = T::zero();
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid { x } => {
                let mut gx = g.clone();
                for (d, &y) in gx.data.iter_mut().zip(&out.data) {
                    *d = *d * y * (T::one() - y);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax { x } => {
                let cols = out.cols.max(1);
                let mut gx = g.clone();
                for (gr, yr) in gx.data.chunks_exact_mut(cols).zip(out.data.chunks_exact(cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (d, &y) in gr.iter_mut().zip(yr) {
                        *d = y * (*d - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum { x } => {
                let (rows, cols) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::from_vec(rows, cols, vec![g.data[0]; rows * cols]));
            }
            Op::Bce { p, t } => {
                let (rows, cols) = self.shape(*p);
                let lo = T::lit(PROB_CLAMP);
                let hi = T::one() - lo;
                let data = self
                    .value(*p)
                    .data
                    .iter()
                    .zip(&self.value(*t).data)
                    .zip(&g.data)
                    .map(|((&p, &t), &gv)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else {
                            gv * (-(t / p) + (T::one() - t) / (T::one() - p))
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::from_vec(rows, cols, data));
            }
            Op::Cce { q, t } => {
                let (rows, cols) = self.shape(*q);
                let lo = T::lit(PROB_CLAMP);
                let hi = T::one() - lo;
                let mut gq = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        let (qv, tv) = (self.value(*q).data[i], self.value(*t).data[i]);
                        if tv != T::zero() && qv >= lo && qv <= hi {
                            gq.data[i] = -g.data[r] * tv / qv;
                        }
                    }
                }
                self.accumulate(grads, *q, gq);
            }
            Op::Kl { mu, lv } => {
                let (rows, cols) = self.shape(*mu);
                let half = T::lit(0.5);
                let gm = g.data.iter().zip(&self.value(*mu).data).map(|(&g, &m)| g * m).collect();
                let gl = g
                    .data
                    .iter()
                    .zip(&self.value(*lv).data)
                    .map(|(&g, &l)| g * half * (l.exp() - T::one()))
                    .collect();
                self.accumulate(grads, *mu, Tensor::from_vec(rows, cols, gm));
                self.accumulate(grads, *lv, Tensor::from_vec(rows, cols, gl));
            }
            Op::Reparam { mu, lv, eps } => {
                let (rows, cols) = self.shape(*mu);
                let half = T::lit(0.5);
                self.accumulate(grads, *mu, g.clone());
                let (lvv, ev) = (&self.value(*lv).data, &self.value(*eps).data);
                let gl = (0..rows * cols).map(|i| g.data[i] * half * (half * lvv[i]).exp() * ev[i]).collect();
                self.accumulate(grads, *lv, Tensor::from_vec(rows, cols, gl));
                if self.wants(*eps) {
                    let ge = (0..rows * cols).map(|i| g.data[i] * (half * lvv[i]).exp()).collect();
                    self.accumulate(grads, *eps, Tensor::from_vec(rows, cols, ge));
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::lit(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Bias-corrected Adam over a list of flat parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return shape_err("adam_step", &[(params.len(), grads.len()), (self.m.len(), 0)]);
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return shape_err("adam_step", &[(p.len(), g.len()), (self.m[i].len(), i)]);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` (0 when both vanish).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of `f` at `inputs` against central differences
/// with step `h`; returns the largest relative error over inputs.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).data[0])
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data.clone())
            .unwrap_or_else(|| vec![0.0; input.data.len()]);
        let mut numeric = vec![0.0; input.data.len()];
        let mut xs = inputs.to_vec();
        for j in 0..input.data.len() {
            let orig = xs[k].data[j];
            xs[k].data[j] = orig + h;
            let fp = eval(&xs)?;
            xs[k].data[j] = orig - h;
            let fm = eval(&xs)?;
            xs[k].data[j] = orig;
            numeric[j] = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect())
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    const TOL: f64 = 1e-6;
    const H: f64 = 1e-5;

    #[test]
    fn kl_closed_forms() {
        let mut t = Tape::<f64>::new();
        let mu = t.constant(Tensor::from_vec(1, 2, vec![0.0, 1.0]));
        let lv = t.constant(Tensor::zeros(1, 2));
        let kl = t.kl_normal(mu, lv).unwrap();
        assert_eq!(t.value(kl).data, vec![0.0, 0.5]);
    }

    #[test]
    fn bce_half() {
        let mut t = Tape::<f64>::new();
        let p = t.constant(Tensor::scalar(0.5));
        let y = t.constant(Tensor::scalar(1.0));
        let l = t.bce(p, y).unwrap();
        assert!((t.value(l).data[0] - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn relu_sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(2, 2, vec![0.5, 1.0, 2.0, 3.0]));
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![1.0; 4]);
    }

    #[test]
    fn bce_minimum_at_matching_logit() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(0.3));
        let p = t.sigmoid(x);
        let target = t.constant(Tensor::scalar(sigmoid(0.3)));
        let l = t.bce(p, target).unwrap();
        let s = t.sum(l);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().data[0].abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::zeros(2, 1));
        assert_eq!(t.backward(x).unwrap_err(), AutodiffError::NonScalarLoss((2, 1)));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::zeros(2, 3));
        let b = t.param(Tensor::zeros(2, 3));
        match t.linear(a, b, None) {
            Err(AutodiffError::Shape { op, shapes }) => {
                assert_eq!(op, "linear");
                assert_eq!(shapes, vec![(2, 3), (2, 3)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grad_linear() {
        let mut r = rng();
        let ins = [rand_t(&mut r, 4, 3, -1.0, 1.0), rand_t(&mut r, 3, 5, -1.0, 1.0), rand_t(&mut r, 1, 5, -1.0, 1.0)];
        let e = check_gradients(&ins, H, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            let y2 = t.sigmoid(y);
            Ok(t.sum(y2))
        })
        .unwrap();
        assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_gather_sparse_repeat_reshape() {
        let mut r = rng();
        let idx = Arc::new(vec![0u32, 2, 1, 1, 3, 0, 2, 2, 3]);
        let map = Arc::new(SparseMatrix::from_rows(2, &[vec![(0, 0.25), (1, 0.75)], vec![(1, 1.0)], vec![(0, 1.0)]]));
        let ins = [rand_t(&mut r, 4, 2, -1.0, 1.0), rand_t(&mut r, 4, 2, -1.0, 1.0)];
        let w = rand_t(&mut r, 6, 9, -1.0, 1.0);
        let e = check_gradients(&ins, H, |t, v| {
            let g = t.gather_rows(v[0], idx.clone(), 3)?;
            let s = t.sparse_map(v[1], map.clone(), 2)?;
            let s = t.reshape(s, 3, 4)?;
            let rep = t.repeat_rows(v[1], 2)?;
            let g2 = t.reshape(g, 1, 18)?;
            let g3 = t.reshape(g2, 3, 6)?;
            let wv = t.constant(w.clone());
            let gw = t.linear(g3, wv, None)?;
            let a = t.sigmoid(gw);
            let b = t.sigmoid(s);
            let c = t.sigmoid(rep);
            let (sa, sb, sc) = (t.sum(a), t.sum(b), t.sum(c));
            t.weighted_sum(&[(1.0, sa), (0.5, sb), (2.0, sc)])
        })
        .unwrap();
        assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_concat_slice_add_scale() {
        let mut r = rng();
        let ins = [rand_t(&mut r, 3, 2, -1.0, 1.0), rand_t(&mut r, 3, 3, -1.0, 1.0), rand_t(&mut r, 3, 5, -1.0, 1.0)];
        let e = check_gradients(&ins, H, |t, v| {
            let c = t.concat_cols(v[0], v[1])?;
            let a = t.add(c, v[2])?;
            let s = t.slice_cols(a, 1, 4)?;
            let q = t.sigmoid(s);
            let sc = t.scale(q, -1.5);
            let m = t.mean(sc);
            let s2 = t.sigmoid(m);
            Ok(t.sum(s2))
        })
        .unwrap();
        assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_relu_softmax() {
        let mut r = rng();
        // keep relu inputs away from the kink
        let mut x = rand_t(&mut r, 3, 4, 0.1, 1.0);
        for (i, v) in x.data.iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let w = rand_t(&mut r, 3, 4, -1.0, 1.0);
        let e = check_gradients(&[x], H, |t, v| {
            let a = t.relu(v[0]);
            let s = t.softmax(a);
            let wv = t.constant(w.clone());
            let prod = t.concat_cols(s, wv)?;
            let y = t.sigmoid(prod);
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_losses() {
        let mut r = rng();
        let p = rand_t(&mut r, 3, 4, 0.05, 0.95);
        let tgt = Tensor::from_vec(3, 4, (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect());
        let e = check_gradients(&[p], H, |t, v| {
            let tv = t.constant(tgt.clone());
            let l = t.bce(v[0], tv)?;
            Ok(t.sum(l))
        })
        .unwrap();
        assert!(e < TOL, "bce {e}");

        let logits = rand_t(&mut r, 3, 4, -2.0, 2.0);
        let onehot = Tensor::from_vec(3, 4, vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0.]);
        let e = check_gradients(&[logits], H, |t, v| {
            let q = t.softmax(v[0]);
            let tv = t.constant(onehot.clone());
            let l = t.cce(q, tv)?;
            Ok(t.sum(l))
        })
        .unwrap();
        assert!(e < TOL, "cce {e}");

        let ins = [rand_t(&mut r, 2, 3, -1.0, 1.0), rand_t(&mut r, 2, 3, -1.0, 1.0), rand_t(&mut r, 2, 3, -1.0, 1.0)];
        let e = check_gradients(&ins, H, |t, v| {
            let k = t.kl_normal(v[0], v[1])?;
            let z = t.reparameterize(v[0], v[1], v[2])?;
            let zs = t.sigmoid(z);
            let (a, b) = (t.sum(k), t.sum(zs));
            t.weighted_sum(&[(0.1, a), (1.0, b)])
        })
        .unwrap();
        assert!(e < TOL, "kl/reparam {e}");
    }

    #[test]
    fn grad_three_layer_network() {
        let mut r = rng();
        // 3·4+4 + 4·5+5 + 5·1+1 = 47 weights, plus the 17 input entries → 64
        let ins = [
            rand_t(&mut r, 1, 17, -1.0, 1.0),
            rand_t(&mut r, 3, 4, -1.0, 1.0),
            rand_t(&mut r, 1, 4, -1.0, 1.0),
            rand_t(&mut r, 4, 5, -1.0, 1.0),
            rand_t(&mut r, 1, 5, -1.0, 1.0),
            rand_t(&mut r, 5, 1, -1.0, 1.0),
            rand_t(&mut r, 1, 1, -1.0, 1.0),
        ];
        let total: usize = ins.iter().map(|t| t.data.len()).sum();
        assert_eq!(total, 64);
        let x = rand_t(&mut r, 6, 3, -1.0, 1.0);
        let e = check_gradients(&ins, H, |t, v| {
            let xv = t.constant(x.clone());
            let h1 = t.linear(xv, v[1], Some(v[2]))?;
            let h1 = t.sigmoid(h1);
            let h2 = t.linear(h1, v[3], Some(v[4]))?;
            let h2 = t.softmax(h2);
            let o = t.linear(h2, v[5], Some(v[6]))?;
            let o = t.sigmoid(o);
            let extra = t.sigmoid(v[0]);
            let (a, b) = (t.sum(o), t.sum(extra));
            t.weighted_sum(&[(1.0, a), (0.25, b)])
        })
        .unwrap();
        assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_normalized_and_shift_invariant() {
        let mut r = rng();
        let x = rand_t(&mut r, 4, 6, -3.0, 3.0);
        let mut shifted = x.clone();
        shifted.data.iter_mut().for_each(|v| *v += 100.0);
        let mut t = Tape::<f64>::new();
        let a = t.constant(x);
        let b = t.constant(shifted);
        let (sa, sb) = (t.softmax(a), t.softmax(b));
        for row in 0..4 {
            let s: f64 = t.value(sa).row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            for (p, q) in t.value(sa).row(row).iter().zip(t.value(sb).row(row)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reparameterize_zero_noise_is_mu() {
        let mut r = rng();
        let mut t = Tape::<f32>::new();
        let mu = t.constant(rand_t(&mut r, 2, 3, -1.0, 1.0).cast());
        let lv = t.constant(rand_t(&mut r, 2, 3, -1.0, 1.0).cast());
        let eps = t.constant(Tensor::zeros(2, 3));
        let z = t.reparameterize(mu, lv, eps).unwrap();
        assert_eq!(t.value(z), t.value(mu));
    }

    #[test]
    fn f32_gemm_matches_f64() {
        let mut r = rng();
        let a = rand_t(&mut r, 7, 5, -1.0, 1.0);
        let b = rand_t(&mut r, 5, 3, -1.0, 1.0);
        let mut t64 = Tape::<f64>::new();
        let (x, w) = (t64.constant(a.clone()), t64.constant(b.clone()));
        let y64 = t64.linear(x, w, None).unwrap();
        let mut t32 = Tape::<f32>::new();
        let (x, w) = (t32.constant(a.cast()), t32.constant(b.cast()));
        let y32 = t32.linear(x, w, None).unwrap();
        for (p, q) in t64.value(y64).data.iter().zip(&t32.value(y32).data) {
            assert!((p - *q as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut s = AdamState::<f64>::new(&[3], 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            s.update(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_descends_constant_gradient() {
        let mut s = AdamState::<f64>::new(&[1], 0.01);
        let mut p = vec![0.0];
        for _ in 0..50 {
            s.update(&mut [&mut p], &[&[2.0]]).unwrap();
        }
        assert!(p[0] < -0.4);
    }

    #[test]
    fn adam_matches_hand_trace() {
        let mut s = AdamState::<f64>::new(&[1], 0.1);
        let mut p = vec![1.0];
        // independent recurrence written out longhand
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for k in 1..=10 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);

            let g = [2.0 * p[0]];
            s.update(&mut [&mut p], &[&g]).unwrap();
            assert!((p[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut s = AdamState::<f64>::new(&[2], 0.1);
        let mut p = vec![0.0; 3];
        assert!(s.update(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }
}
