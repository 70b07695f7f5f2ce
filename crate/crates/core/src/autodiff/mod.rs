//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] replays the tape in reverse from a scalar loss and
//! returns [`Gradients`] for every node that requires a gradient.

mod backward;
pub mod kernels;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};
use kernels::ConvGeom;

pub use backward::Gradients;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Silu,
    Sigmoid,
    Tanh,
    Exp,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample2x(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    RmsNorm { x: Var, rstd: Vec<T> },
    L2Normalize { x: Var, norms: Vec<T> },
    Softmax(Var),
    LogSumExp(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Attention { q: Var, k: Var, v: Var, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanLast(Var),
    GradScale(Var, T),
    Embedding { table: Var, ids: Vec<usize> },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    StraightThrough(Var),
    ChannelAffine { x: Var, gamma: Var, beta: Var },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Binding {
    pub(crate) var: Var,
    pub(crate) store: u64,
    pub(crate) param: ParamId,
}

pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) bindings: Vec<Binding>,
    bound: BTreeMap<(u64, usize), Var>,
    flops: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bindings: Vec::new(), bound: BTreeMap::new(), flops: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add FLOPs spent by forward matmul, convolution and attention
    /// kernels so far (2 per multiply-accumulate).
    pub fn forward_flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable leaf (gradient is reported by [`Graph::backward`]).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a stored parameter as a leaf. Binding the same parameter twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.id(), id.0);
        if let Some(v) = self.bound.get(&key) {
            return *v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.bindings.push(Binding { var: v, store: store.id(), param: id });
        self.bound.insert(key, v);
        v
    }

    /// Forward value is `x`; no gradient flows back through it.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Leaf, false)
    }

    /// Identity forward; multiplies the incoming gradient by `factor`.
    pub fn grad_scale(&mut self, x: Var, factor: T) -> Var {
        let t = self.value(x).clone();
        let ng = self.ng(&[x]);
        self.push(t, Op::GradScale(x, factor), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, node, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn bcast(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, sa, sb));
        }
        let inner = self.value(b).numel().max(1);
        let bd = self.data(b);
        let data = self.data(a).iter().enumerate().map(|(i, x)| f(*x, bd[i % inner])).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, node, ng))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (broadcast over leading axes).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast("add_bcast", a, b, |x, y| x + y, Op::AddBcast(a, b))
    }

    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast("mul_bcast", a, b, |x, y| x * y, Op::MulBcast(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, node: Op<T>) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|a| f(*a)).collect();
        let t = Tensor::new(v.shape(), data).expect("same numel");
        let ng = self.ng(&[x]);
        self.push(t, node, ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.map(x, |a| a * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.map(x, |a| a + s, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |a| a * a, Op::Square(x))
    }

    pub fn unary(&mut self, x: Var, u: Unary) -> Var {
        self.map(x, |a| unary_fwd(u, a), Op::Unary(x, u))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    /// `x [.., k] · w [k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sw[0] {
            return Err(Error::shape("matmul", &sx, &sw));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).numel() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(x), k as isize, 1, self.data(w), n as isize, 1, T::zero(), &mut out);
        self.flops += 2 * (m * k * n) as u64;
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(&[x, w]);
        Ok(self.push(t, Op::MatMul(x, w), ng))
    }

    /// 2-D convolution, `x [n, cin, h, w]`, `w [cout, cin, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("conv2d bias", self.shape(b), &sw[..1]));
            }
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], sw[2], stride, pad)
            .ok_or_else(|| Error::invalid("conv2d", alloc::format!("kernel {} stride {} does not fit {:?}", sw[2], stride, sx)))?;
        let (n, cout) = (sx[0], sw[0]);
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let in_sz = sx[1] * sx[2] * sx[3];
        if kernels::use_shifted(&geom) {
            let out = self.conv_shifted(x, w, b, &geom, n, cout);
            self.flops += 2 * (n * cout * rows * cols_n) as u64;
            let t = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
            let mut deps = vec![x, w];
            deps.extend(b);
            let ng = self.ng(&deps);
            return Ok(self.push(t, Op::Conv2d { x, w, b, geom }, ng));
        }
        let group = kernels::conv_group(cols_n, n);
        let mut out = vec![T::zero(); n * cout * cols_n];
        let mut cm = vec![T::zero(); cout * group * cols_n];
        for i0 in (0..n).step_by(group) {
            let m = group.min(n - i0);
            let ld = m * cols_n;
            let cols = kernels::im2col_batch(&self.data(x)[i0 * in_sz..(i0 + m) * in_sz], &geom, m);
            T::gemm(cout, rows, ld, self.data(w), rows as isize, 1, &cols, ld as isize, 1, T::zero(), &mut cm[..cout * ld]);
            for c in 0..cout {
                let bias = b.map_or(T::zero(), |b| self.data(b)[c]);
                for i in 0..m {
                    let src = &cm[c * ld + i * cols_n..c * ld + (i + 1) * cols_n];
                    let o = ((i0 + i) * cout + c) * cols_n;
                    for (d, s) in out[o..o + cols_n].iter_mut().zip(src) {
                        *d = *s + bias;
                    }
                }
            }
        }
        self.flops += 2 * (n * cout * rows * cols_n) as u64;
        let t = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, ng))
    }

    fn conv_shifted(&self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, n: usize, cout: usize) -> Vec<T> {
        let (k, cin) = (geom.k, geom.cin);
        let kk = k * k;
        let in_sz = cin * geom.h * geom.w;
        let plane = (geom.h + 2 * geom.pad) * (geom.w + 2 * geom.pad);
        let group = kernels::conv_group(plane, n);
        let (xv, wv) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); n * cout * geom.ho * geom.wo];
        for i0 in (0..n).step_by(group) {
            let m = group.min(n - i0);
            let s = kernels::Shifted::new(geom, m);
            let xp = kernels::shifted_pack(&xv[i0 * in_sz..(i0 + m) * in_sz], geom, &s, m);
            let mut wide = vec![T::zero(); cout * s.cols];
            for ky in 0..k {
                for kx in 0..k {
                    let t = ky * k + kx;
                    let beta = if t == 0 { T::zero() } else { T::one() };
                    let b = &xp[s.offset(ky, kx)..];
                    T::gemm(cout, cin, s.cols, &wv[t..], (cin * kk) as isize, kk as isize, b, s.row as isize, 1, beta, &mut wide);
                }
            }
            for i in 0..m {
                for c in 0..cout {
                    let bias = b.map_or(T::zero(), |b| self.data(b)[c]);
                    let dst = &mut out[((i0 + i) * cout + c) * geom.ho * geom.wo..];
                    let src = &wide[c * s.cols..];
                    for y in 0..geom.ho {
                        let o = s.col(i, y, 0);
                        for (d, v) in dst[y * geom.wo..(y + 1) * geom.wo].iter_mut().zip(&src[o..o + geom.wo]) {
                            *d = *v + bias;
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbour 2× upsampling of `[n, c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", &s, &[0, 0, 0, 0]));
        }
        let (h, w) = (s[2], s[3]);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len() * 4];
        for (p, plane) in src.chunks(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Upsample2x(x), ng))
    }

    fn rows(&self, x: Var) -> (usize, usize) {
        let s = self.shape(x);
        let d = s.last().copied().unwrap_or(1).max(1);
        (self.value(x).numel() / d, d)
    }

    /// Zero-mean unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let (r, d) = self.rows(x);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); r];
        let inv_d = T::one() / T::c(d as f64);
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[i] = rs;
            for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (*v - mean) * rs;
            }
        }
        let t = Tensor::new(self.shape(x), out).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(t, Op::LayerNorm { x, rstd }, ng)
    }

    /// Root-mean-square normalization over the last axis (no gain).
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Var {
        let (r, d) = self.rows(x);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); r];
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let ms = row.iter().map(|v| *v * *v).sum::<T>() / T::c(d as f64);
            let rs = T::one() / (ms + T::c(eps)).sqrt();
            rstd[i] = rs;
            for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = *v * rs;
            }
        }
        let t = Tensor::new(self.shape(x), out).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(t, Op::RmsNorm { x, rstd }, ng)
    }

    /// Scales every row (last axis) to unit L2 norm. Rows with norm below
    /// `1e-12` are divided by `1e-12` instead, so the zero row maps to zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (r, d) = self.rows(x);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        let mut norms = vec![T::zero(); r];
        let floor = T::c(1e-12);
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt().max(floor);
            norms[i] = n;
            for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = *v / n;
            }
        }
        let t = Tensor::new(self.shape(x), out).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(t, Op::L2Normalize { x, norms }, ng)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, d) = self.rows(x);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(d).take(r) {
            softmax_in_place(row);
        }
        let t = Tensor::new(self.shape(x), out).expect("same shape");
        let ng = self.ng(&[x]);
        self.push(t, Op::Softmax(x), ng)
    }

    /// Log-partition of each row; output drops the last axis.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let (_, d) = self.rows(x);
        let out: Vec<T> = self.data(x).chunks(d).map(logsumexp).collect();
        let s = self.shape(x);
        let shape = &s[..s.len().saturating_sub(1)];
        let t = Tensor::new(shape, out).expect("row count");
        let ng = self.ng(&[x]);
        self.push(t, Op::LogSumExp(x), ng)
    }

    /// Mean next-token cross-entropy (nats) of `logits [.., k]` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, k) = self.rows(logits);
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid("cross_entropy", alloc::format!("target {} >= {}", bad, k)));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(k).zip(targets) {
            let lse = logsumexp(row);
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let t = Tensor::scalar(loss / T::c(r.max(1) as f64));
        let ng = self.ng(&[logits]);
        Ok(self.push(t, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng))
    }

    /// Causal scaled dot-product attention over `[b, h, t, d]` operands.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("causal_attention", &s, &[0, 0, 0, 0]));
        }
        self.same_shape("causal_attention", q, k)?;
        self.same_shape("causal_attention", q, v)?;
        let (bh, t, d) = (s[0] * s[1], s[2], s[3]);
        let mut out = vec![T::zero(); bh * t * d];
        let mut probs = vec![T::zero(); bh * t * t];
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        for i in 0..bh {
            let r = i * t * d..(i + 1) * t * d;
            kernels::causal_attention_fwd(
                &qd[r.clone()],
                &kd[r.clone()],
                &vd[r.clone()],
                t,
                d,
                &mut out[r],
                &mut probs[i * t * t..(i + 1) * t * t],
            );
        }
        self.flops += 2 * (bh * d * t * (t + 1)) as u64;
        let out = Tensor::new(&s, out)?;
        let ng = self.ng(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, probs }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.data(x).iter().copied().sum::<T>() / T::c(n as f64);
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    fn reduce_last(&mut self, x: Var, mean: bool) -> Var {
        let (_, d) = self.rows(x);
        let div = if mean { T::c(d as f64) } else { T::one() };
        let out: Vec<T> = self.data(x).chunks(d).map(|c| c.iter().copied().sum::<T>() / div).collect();
        let s = self.shape(x);
        let t = Tensor::new(&s[..s.len().saturating_sub(1)], out).expect("row count");
        let ng = self.ng(&[x]);
        let op = if mean { Op::MeanLast(x) } else { Op::SumLast(x) };
        self.push(t, op, ng)
    }

    pub fn sum_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, false)
    }

    pub fn mean_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, true)
    }

    /// Row gather from `table [v, d]`; output shape is `ids_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", &st, ids_shape));
        }
        let d = st[1];
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= st[0] {
                return Err(Error::invalid("embedding", alloc::format!("id {} >= {}", i, st[0])));
            }
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(&[table]);
        Ok(self.push(t, Op::Embedding { table, ids: ids.to_vec() }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", &s, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let mut out = vec![T::zero(); self.value(x).numel()];
        kernels::permute(self.data(x), &s, perm, &mut out);
        let t = Tensor::new(&out_shape, out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Permute(x, perm.to_vec()), ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or(Error::Empty("concat"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(xs);
        Ok(self.push(t, Op::Concat(xs.to_vec(), axis), ng))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::invalid("slice", alloc::format!("{}..{} on axis {} of {:?}", start, start + len, axis, s)));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Slice { x, axis, start }, ng))
    }

    /// Straight-through estimator: the forward value is exactly `e`, the
    /// backward pass copies the incoming gradient to `z` unchanged and gives
    /// `e` nothing.
    pub fn straight_through(&mut self, z: Var, e: Var) -> Result<Var> {
        self.same_shape("straight_through", z, e)?;
        let t = self.value(e).clone();
        let ng = self.ng(&[z]);
        Ok(self.push(t, Op::StraightThrough(z), ng))
    }

    /// Per-channel `x * gamma + beta` for `x [n, c, ..]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(Error::shape("channel_affine", &s, self.shape(gamma)));
        }
        let c = s[1];
        let plane: usize = s[2..].iter().product();
        let (g, b) = (self.data(gamma), self.data(beta));
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / plane) % c;
                *v * g[ch] + b[ch]
            })
            .collect();
        let t = Tensor::new(&s, out)?;
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(t, Op::ChannelAffine { x, gamma, beta }, ng))
    }

    /// Group normalization without affine over `[n, c, ..]` with `groups` groups.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || s[1] % groups != 0 {
            return Err(Error::invalid("group_norm", alloc::format!("{} groups for {:?}", groups, s)));
        }
        let per = self.value(x).numel() / (s[0] * groups);
        let flat = self.reshape(x, &[s[0] * groups, per])?;
        let normed = self.layer_norm(flat, eps);
        self.reshape(normed, &s)
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        backward::run(self, loss)
    }
}

pub(crate) fn unary_fwd<T: Real>(u: Unary, a: T) -> T {
    match u {
        Unary::Relu => a.max(T::zero()),
        Unary::LeakyRelu(s) => {
            if a > T::zero() {
                a
            } else {
                a * T::c(s)
            }
        }
        Unary::Silu => a / (T::one() + (-a).exp()),
        Unary::Sigmoid => T::one() / (T::one() + (-a).exp()),
        Unary::Tanh => a.tanh(),
        Unary::Exp => a.exp(),
    }
}

/// Derivative of the unary map at input `a` (output `y`).
pub(crate) fn unary_grad<T: Real>(u: Unary, a: T, y: T) -> T {
    match u {
        Unary::Relu => {
            if a > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::LeakyRelu(s) => {
            if a > T::zero() {
                T::one()
            } else {
                T::c(s)
            }
        }
        Unary::Silu => {
            let sg = T::one() / (T::one() + (-a).exp());
            sg * (T::one() + a * (T::one() - sg))
        }
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Tanh => T::one() - y * y,
        Unary::Exp => y,
    }
}

pub fn logsumexp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (*v - max).exp()).sum::<T>().ln()
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}
