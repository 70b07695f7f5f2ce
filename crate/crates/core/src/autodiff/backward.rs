use alloc::vec;
use alloc::vec::Vec;

use super::{kernels, unary_grad, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Gradients of a scalar loss with respect to every graph node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

struct Acc<'g, T: Real> {
    graph: &'g Graph<T>,
    grads: Vec<Option<Vec<T>>>,
}

impl<'g, T: Real> Acc<'g, T> {
    /// Mutable gradient buffer of `v`, allocated on first use; `None` if `v`
    /// does not require a gradient.
    fn buf(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.graph.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_with(&mut self, v: Var, f: impl Fn(usize) -> T) {
        if let Some(b) = self.buf(v) {
            for (i, g) in b.iter_mut().enumerate() {
                *g += f(i);
            }
        }
    }

    fn val(&self, v: Var) -> &'g [T] {
        self.graph.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &'g [usize] {
        self.graph.nodes[v.0].value.shape()
    }
}

pub(super) fn run<T: Real>(graph: &Graph<T>, loss: Var) -> Result<Gradients<T>> {
    let lv = &graph.nodes[loss.0].value;
    if lv.numel() != 1 {
        return Err(Error::NonScalarLoss(lv.shape().to_vec()));
    }
    let mut acc = Acc { graph, grads: (0..graph.nodes.len()).map(|_| None).collect() };
    if graph.nodes[loss.0].needs_grad {
        acc.grads[loss.0] = Some(vec![T::one()]);
    }
    for idx in (0..=loss.0).rev() {
        let Some(g) = acc.grads[idx].take() else { continue };
        let node = &graph.nodes[idx];
        step(&mut acc, &node.op, Var(idx), &g);
        acc.grads[idx] = Some(g);
    }
    Ok(Gradients { grads: acc.grads })
}

fn step<T: Real>(acc: &mut Acc<'_, T>, op: &Op<T>, out: Var, g: &[T]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc.add_with(*a, |i| g[i]);
            acc.add_with(*b, |i| g[i]);
        }
        Op::Sub(a, b) => {
            acc.add_with(*a, |i| g[i]);
            acc.add_with(*b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (acc.val(*a), acc.val(*b));
            acc.add_with(*a, |i| g[i] * bv[i]);
            acc.add_with(*b, |i| g[i] * av[i]);
        }
        Op::AddBcast(a, b) => {
            acc.add_with(*a, |i| g[i]);
            if let Some(bb) = acc.buf(*b) {
                let inner = bb.len();
                for (i, gi) in g.iter().enumerate() {
                    bb[i % inner] += *gi;
                }
            }
        }
        Op::MulBcast(a, b) => {
            let (av, bv) = (acc.val(*a), acc.val(*b));
            let inner = bv.len();
            acc.add_with(*a, |i| g[i] * bv[i % inner]);
            if let Some(bb) = acc.buf(*b) {
                for (i, gi) in g.iter().enumerate() {
                    bb[i % inner] += *gi * av[i];
                }
            }
        }
        Op::Scale(x, s) => acc.add_with(*x, |i| g[i] * *s),
        Op::AddScalar(x) | Op::Reshape(x) => acc.add_with(*x, |i| g[i]),
        Op::GradScale(x, s) => acc.add_with(*x, |i| g[i] * *s),
        Op::StraightThrough(z) => {
            if let Some(b) = acc.buf(*z) {
                b.iter_mut().zip(g).for_each(|(d, v)| *d += *v);
            }
        }
        Op::Square(x) => {
            let xv = acc.val(*x);
            acc.add_with(*x, |i| g[i] * T::c(2.0) * xv[i]);
        }
        Op::Unary(x, u) => {
            let (xv, yv) = (acc.val(*x), acc.val(out));
            acc.add_with(*x, |i| g[i] * unary_grad(*u, xv[i], yv[i]));
        }
        Op::MatMul(x, w) => {
            let (xv, wv) = (acc.val(*x), acc.val(*w));
            let sw = acc.shape(*w);
            let (k, n) = (sw[0], sw[1]);
            let m = xv.len() / k.max(1);
            if let Some(dx) = acc.buf(*x) {
                // dx[m,k] += g[m,n] · wᵀ
                T::gemm(m, n, k, g, n as isize, 1, wv, 1, n as isize, T::one(), dx);
            }
            if let Some(dw) = acc.buf(*w) {
                // dw[k,n] += xᵀ · g
                T::gemm(k, m, n, xv, 1, k as isize, g, n as isize, 1, T::one(), dw);
            }
        }
        Op::Conv2d { x, w, b, geom } => conv_backward(acc, *x, *w, *b, geom, g),
        Op::Upsample2x(x) => {
            let s = acc.shape(*x);
            let (h, w) = (s[2], s[3]);
            if let Some(dx) = acc.buf(*x) {
                for (p, plane) in dx.chunks_mut(h * w).enumerate() {
                    let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            plane[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, rstd } => {
            let y = acc.val(out);
            let d = y.len() / rstd.len().max(1);
            let inv_d = T::one() / T::c(d as f64);
            if let Some(dx) = acc.buf(*x) {
                for (r, rs) in rstd.iter().enumerate() {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let mg = gr.iter().copied().sum::<T>() * inv_d;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<T>() * inv_d;
                    for c in 0..d {
                        dx[r * d + c] += *rs * (gr[c] - mg - yr[c] * mgy);
                    }
                }
            }
        }
        Op::RmsNorm { x, rstd } => {
            let y = acc.val(out);
            let d = y.len() / rstd.len().max(1);
            let inv_d = T::one() / T::c(d as f64);
            if let Some(dx) = acc.buf(*x) {
                for (r, rs) in rstd.iter().enumerate() {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let mgy = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<T>() * inv_d;
                    for c in 0..d {
                        dx[r * d + c] += *rs * (gr[c] - yr[c] * mgy);
                    }
                }
            }
        }
        Op::L2Normalize { x, norms } => {
            let y = acc.val(out);
            let d = y.len() / norms.len().max(1);
            let floor = T::c(1e-12);
            if let Some(dx) = acc.buf(*x) {
                for (r, n) in norms.iter().enumerate() {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    if *n <= floor {
                        for c in 0..d {
                            dx[r * d + c] += gr[c] / *n;
                        }
                        continue;
                    }
                    let dot = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<T>();
                    for c in 0..d {
                        dx[r * d + c] += (gr[c] - yr[c] * dot) / *n;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let y = acc.val(out);
            let d = *acc.shape(out).last().unwrap_or(&1);
            if let Some(dx) = acc.buf(*x) {
                for ((dr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                    let dot = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<T>();
                    for c in 0..d {
                        dr[c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
        }
        Op::LogSumExp(x) => {
            let xv = acc.val(*x);
            let d = *acc.shape(*x).last().unwrap_or(&1);
            let lse = acc.val(out);
            if let Some(dx) = acc.buf(*x) {
                for (r, (dr, xr)) in dx.chunks_mut(d).zip(xv.chunks(d)).enumerate() {
                    for c in 0..d {
                        dr[c] += g[r] * (xr[c] - lse[r]).exp();
                    }
                }
            }
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let k = *acc.shape(*logits).last().unwrap_or(&1);
            let scale = g[0] / T::c(targets.len().max(1) as f64);
            if let Some(dl) = acc.buf(*logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == t { T::one() } else { T::zero() };
                        dl[r * k + c] += scale * (probs[r * k + c] - onehot);
                    }
                }
            }
        }
        Op::Attention { q, k, v, probs } => {
            let s = acc.shape(*q);
            let (bh, t, d) = (s[0] * s[1], s[2], s[3]);
            let (qv, kv, vv) = (acc.val(*q), acc.val(*k), acc.val(*v));
            let n = qv.len();
            let (mut dq, mut dk, mut dv) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
            for i in 0..bh {
                let r = i * t * d..(i + 1) * t * d;
                kernels::causal_attention_bwd(
                    &qv[r.clone()],
                    &kv[r.clone()],
                    &vv[r.clone()],
                    &probs[i * t * t..(i + 1) * t * t],
                    &g[r.clone()],
                    t,
                    d,
                    &mut dq[r.clone()],
                    &mut dk[r.clone()],
                    &mut dv[r],
                );
            }
            acc.add_with(*q, |i| dq[i]);
            acc.add_with(*k, |i| dk[i]);
            acc.add_with(*v, |i| dv[i]);
        }
        Op::Sum(x) => acc.add_with(*x, |_| g[0]),
        Op::Mean(x) => {
            let n = T::c(acc.val(*x).len().max(1) as f64);
            acc.add_with(*x, |_| g[0] / n);
        }
        Op::SumLast(x) | Op::MeanLast(x) => {
            let d = *acc.shape(*x).last().unwrap_or(&1);
            let div = if matches!(op, Op::MeanLast(_)) { T::c(d as f64) } else { T::one() };
            acc.add_with(*x, |i| g[i / d] / div);
        }
        Op::Embedding { table, ids } => {
            let d = acc.shape(*table)[1];
            if let Some(dt) = acc.buf(*table) {
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += g[r * d + c];
                    }
                }
            }
        }
        Op::Permute(x, perm) => {
            let out_shape = acc.shape(out);
            let mut inv = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let mut back = vec![T::zero(); g.len()];
            kernels::permute(g, out_shape, &inv, &mut back);
            acc.add_with(*x, |i| back[i]);
        }
        Op::Concat(xs, axis) => {
            let os = acc.shape(out);
            let outer: usize = os[..*axis].iter().product();
            let inner: usize = os[*axis + 1..].iter().product();
            let total = os[*axis];
            let mut offset = 0;
            for &v in xs {
                let len = acc.shape(v)[*axis];
                if let Some(b) = acc.buf(v) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        for (d, s) in b[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let xs = acc.shape(*x);
            let len = acc.shape(out)[*axis];
            let outer: usize = xs[..*axis].iter().product();
            let inner: usize = xs[*axis + 1..].iter().product();
            let full = xs[*axis];
            if let Some(b) = acc.buf(*x) {
                for o in 0..outer {
                    let dst = &mut b[(o * full + start) * inner..(o * full + start + len) * inner];
                    for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                        *d += *s;
                    }
                }
            }
        }
        Op::ChannelAffine { x, gamma, beta } => {
            let s = acc.shape(*x);
            let c = s[1];
            let plane: usize = s[2..].iter().product();
            let (xv, gv) = (acc.val(*x), acc.val(*gamma));
            acc.add_with(*x, |i| g[i] * gv[(i / plane) % c]);
            if let Some(dg) = acc.buf(*gamma) {
                for (i, gi) in g.iter().enumerate() {
                    dg[(i / plane) % c] += *gi * xv[i];
                }
            }
            if let Some(db) = acc.buf(*beta) {
                for (i, gi) in g.iter().enumerate() {
                    db[(i / plane) % c] += *gi;
                }
            }
        }
    }
}

fn conv_backward<T: Real>(acc: &mut Acc<'_, T>, x: Var, w: Var, b: Option<Var>, geom: &kernels::ConvGeom, g: &[T]) {
    let (xv, wv) = (acc.val(x), acc.val(w));
    let n = acc.shape(x)[0];
    let cout = acc.shape(w)[0];
    let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
    let in_sz = geom.cin * geom.h * geom.w;
    let want_x = acc.graph.nodes[x.0].needs_grad;
    let want_w = acc.graph.nodes[w.0].needs_grad;
    if let Some(b) = b {
        if let Some(db) = acc.buf(b) {
            for i in 0..n {
                for (c, chunk) in g[i * cout * cols_n..(i + 1) * cout * cols_n].chunks(cols_n).enumerate() {
                    db[c] += chunk.iter().copied().sum::<T>();
                }
            }
        }
    }
    if !want_x && !want_w {
        return;
    }
    let mut dw = vec![T::zero(); if want_w { wv.len() } else { 0 }];
    let mut dx = vec![T::zero(); if want_x { xv.len() } else { 0 }];
    if kernels::use_shifted(geom) {
        conv_backward_shifted(xv, wv, geom, g, n, cout, want_w.then_some(&mut dw[..]), want_x.then_some(&mut dx[..]));
        if want_w {
            acc.add_with(w, |i| dw[i]);
        }
        if want_x {
            acc.add_with(x, |i| dx[i]);
        }
        return;
    }
    let group = kernels::conv_group(cols_n, n);
    for i0 in (0..n).step_by(group) {
        let m = group.min(n - i0);
        let ld = m * cols_n;
        // Gradient of this group in channel-major layout `[cout, m·ho·wo]`.
        let mut gcm = vec![T::zero(); cout * ld];
        for i in 0..m {
            for c in 0..cout {
                let src = ((i0 + i) * cout + c) * cols_n;
                gcm[c * ld + i * cols_n..c * ld + (i + 1) * cols_n].copy_from_slice(&g[src..src + cols_n]);
            }
        }
        if want_w {
            let cols = kernels::im2col_batch(&xv[i0 * in_sz..(i0 + m) * in_sz], geom, m);
            // dw[cout, rows] += g[cout, m·cols] · colsᵀ
            T::gemm(cout, ld, rows, &gcm, ld as isize, 1, &cols, 1, ld as isize, T::one(), &mut dw);
        }
        if want_x {
            // dcols[rows, m·cols] = wᵀ · g
            let mut dcols = vec![T::zero(); rows * ld];
            T::gemm(rows, cout, ld, wv, 1, rows as isize, &gcm, ld as isize, 1, T::zero(), &mut dcols);
            for i in 0..m {
                let j = i0 + i;
                kernels::col2im(&dcols[i * cols_n..], geom, &mut dx[j * in_sz..(j + 1) * in_sz], ld);
            }
        }
    }
    if want_w {
        acc.add_with(w, |i| dw[i]);
    }
    if want_x {
        acc.add_with(x, |i| dx[i]);
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_shifted<T: Real>(
    xv: &[T],
    wv: &[T],
    geom: &kernels::ConvGeom,
    g: &[T],
    n: usize,
    cout: usize,
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let (k, cin) = (geom.k, geom.cin);
    let kk = k * k;
    let in_sz = cin * geom.h * geom.w;
    let out_sz = geom.ho * geom.wo;
    let plane = (geom.h + 2 * geom.pad) * (geom.w + 2 * geom.pad);
    let group = kernels::conv_group(plane, n);
    // Per-tap weight gradients `[kk, cout, cin]`.
    let mut dwt = vec![T::zero(); if dw.is_some() { kk * cout * cin } else { 0 }];
    for i0 in (0..n).step_by(group) {
        let m = group.min(n - i0);
        let s = kernels::Shifted::new(geom, m);
        let mut gw = vec![T::zero(); cout * s.cols];
        for i in 0..m {
            for c in 0..cout {
                let src = &g[((i0 + i) * cout + c) * out_sz..];
                let dst = &mut gw[c * s.cols..];
                for y in 0..geom.ho {
                    let o = s.col(i, y, 0);
                    dst[o..o + geom.wo].copy_from_slice(&src[y * geom.wo..(y + 1) * geom.wo]);
                }
            }
        }
        if dw.is_some() {
            let xp = kernels::shifted_pack(&xv[i0 * in_sz..(i0 + m) * in_sz], geom, &s, m);
            for t in 0..kk {
                let b = &xp[s.offset(t / k, t % k)..];
                let c = &mut dwt[t * cout * cin..(t + 1) * cout * cin];
                T::gemm(cout, s.cols, cin, &gw, s.cols as isize, 1, b, 1, s.row as isize, T::one(), c);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut dxp = vec![T::zero(); cin * s.row];
            for t in 0..kk {
                let off = s.offset(t / k, t % k);
                T::gemm_ld(
                    cin,
                    cout,
                    s.cols,
                    &wv[t..],
                    kk as isize,
                    (cin * kk) as isize,
                    &gw,
                    s.cols as isize,
                    1,
                    T::one(),
                    &mut dxp[off..],
                    s.row,
                );
            }
            kernels::shifted_unpack_add(&dxp, geom, &s, m, &mut dx[i0 * in_sz..(i0 + m) * in_sz]);
        }
    }
    if let Some(dw) = dw.as_deref_mut() {
        for o in 0..cout {
            for c in 0..cin {
                for t in 0..kk {
                    dw[(o * cin + c) * kk + t] = dwt[(t * cout + o) * cin + c];
                }
            }
        }
    }
}
