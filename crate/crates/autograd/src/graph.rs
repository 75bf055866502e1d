//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! reverse pass is a single sweep from the last node to the first. Feature
//! maps are single images laid out `[C, H, W]`; batching happens outside by
//! accumulating parameter gradients across graphs.

use crate::error::{AutogradError, Result};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv2dGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(AutogradError::Shape(format!(
                "conv2d: kernel {k} stride {stride} pad {pad} does not fit {h}x{w}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold `[C, H, W]` into `[C*k*k, H_out*W_out]`.
pub fn im2col<T: Scalar>(x: &[T], g: &Conv2dGeom, out: &mut [T]) {
    let (kk, p) = (g.k, g.cols());
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kk {
            for kx in 0..kk {
                let row = (c * kk + ky) * kk + kx;
                let dst = &mut out[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Fold `[C*k*k, H_out*W_out]` back into `[C, H, W]`, accumulating overlaps.
pub fn col2im<T: Scalar>(cols: &[T], g: &Conv2dGeom, dx: &mut [T]) {
    let (kk, p) = (g.k, g.cols());
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kk {
            for kx in 0..kk {
                let row = (c * kk + ky) * kk + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            line[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
        /// im2col buffer; empty for pointwise convolutions (which read `x` directly).
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    Concat {
        parts: Vec<Var>,
    },
    Narrow {
        x: Var,
        offset: usize,
    },
    Sum {
        x: Var,
    },
    /// `out[i] = sum_p f[i, p] * weights[p]`.
    WeightedPool {
        f: Var,
        weights: Vec<T>,
    },
    /// `out[p] = sum_i t[i] * f[i, p]`.
    Correlate {
        t: Var,
        f: Var,
    },
    /// Class-wise element-wise max; `winner[c*P + p]` is the index into
    /// `maps` that supplied the value, or `usize::MAX` for an empty class.
    ClassMax {
        maps: Vec<Var>,
        winner: Vec<usize>,
    },
    /// Scalar computed outside the tape, with its gradient w.r.t. `x`.
    External {
        x: Var,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn parameter(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(AutogradError::Shape(format!("conv2d: input {xs:?} with weight {ws:?}")));
        }
        let c_out = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(AutogradError::Shape(format!("conv2d: bias {:?} for {c_out} outputs", self.shape(b))));
            }
        }
        let geom = Conv2dGeom::new(xs[0], xs[1], xs[2], ws[2], stride, pad)?;
        let (rows, p) = (geom.rows(), geom.cols());
        let mut out = vec![T::zero(); c_out * p];
        if let Some(b) = b {
            for (o, &bv) in self.value(b).data().iter().enumerate() {
                out[o * p..(o + 1) * p].fill(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let cols = if geom.is_pointwise() {
            gemm(Trans::No, Trans::No, c_out, rows, p, self.value(w).data(), self.value(x).data(), beta, &mut out);
            Vec::new()
        } else {
            let mut cols = vec![T::zero(); rows * p];
            im2col(self.value(x).data(), &geom, &mut cols);
            gemm(Trans::No, Trans::No, c_out, rows, p, self.value(w).data(), &cols, beta, &mut out);
            cols
        };
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(&[c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    /// Per-channel standardization over the spatial extent, then affine.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || self.shape(gamma) != [xs[0]] || self.shape(beta) != [xs[0]] {
            return Err(AutogradError::Shape(format!(
                "instance_norm: input {xs:?}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (c, p) = (xs[0], xs[1] * xs[2]);
        let n = T::from_usize(p).unwrap();
        let eps = T::from_f64_lossy(eps);
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); c * p];
        let mut inv_std = vec![T::zero(); c];
        let mut out = vec![T::zero(); c * p];
        for ch in 0..c {
            let src = &xv[ch * p..(ch + 1) * p];
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in 0..p {
                let h = (src[i] - mean) * is;
                xhat[ch * p + i] = h;
                out[ch * p + i] = gv[ch] * h + bv[ch];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::from_vec(&xs, out)?;
        Ok(self.push(
            value,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(AutogradError::Shape(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, s }, needs)
    }

    /// Concatenate along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| AutogradError::Shape("concat of nothing".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(AutogradError::Shape(format!("concat: {s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, needs))
    }

    /// Channels `start..start+len` of a `[C, ...]` tensor.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if start + len > s[0] {
            return Err(AutogradError::Shape(format!("narrow {start}+{len} of {s:?}")));
        }
        let stride: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * stride..(start + len) * stride].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let needs = self.needs(x);
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            value,
            Op::Narrow {
                x,
                offset: start * stride,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum { x }, needs)
    }

    /// Weighted global sum pooling: `out[i] = sum_{y,x} f[i,y,x] * weights[y,x]`.
    /// The weights are constants.
    pub fn weighted_pool(&mut self, f: Var, weights: &Tensor<T>) -> Result<Var> {
        let fs = self.shape(f).to_vec();
        if fs.len() != 3 || weights.shape() != &fs[1..] {
            return Err(AutogradError::Shape(format!("weighted_pool: features {fs:?}, weights {:?}", weights.shape())));
        }
        let (c, p) = (fs[0], fs[1] * fs[2]);
        let mut out = vec![T::zero(); c];
        gemm(Trans::No, Trans::No, c, p, 1, self.value(f).data(), weights.data(), T::zero(), &mut out);
        let needs = self.needs(f);
        Ok(self.push(
            Tensor::from_vec(&[c], out)?,
            Op::WeightedPool {
                f,
                weights: weights.data().to_vec(),
            },
            needs,
        ))
    }

    /// Per-location dot product of a channel vector with a feature map:
    /// `out[y,x] = sum_i t[i] * f[i,y,x]`.
    pub fn correlate(&mut self, t: Var, f: Var) -> Result<Var> {
        let fs = self.shape(f).to_vec();
        if fs.len() != 3 || self.shape(t) != [fs[0]] {
            return Err(AutogradError::Shape(format!("correlate: template {:?}, features {fs:?}", self.shape(t))));
        }
        let (c, p) = (fs[0], fs[1] * fs[2]);
        let mut out = vec![T::zero(); p];
        gemm(Trans::No, Trans::No, 1, c, p, self.value(t).data(), self.value(f).data(), T::zero(), &mut out);
        let needs = self.needs(t) || self.needs(f);
        Ok(self.push(Tensor::from_vec(&fs[1..], out)?, Op::Correlate { t, f }, needs))
    }

    /// Stack `[H, W]` maps into `[C, H, W]`, taking the element-wise max of
    /// all maps assigned to the same class. Classes without maps are zero.
    pub fn class_max(&mut self, maps: &[(Var, usize)], num_classes: usize, h: usize, w: usize) -> Result<Var> {
        let p = h * w;
        let mut out = vec![T::zero(); num_classes * p];
        let mut winner = vec![usize::MAX; num_classes * p];
        for (k, &(m, class)) in maps.iter().enumerate() {
            if self.shape(m) != [h, w] {
                return Err(AutogradError::Shape(format!("class_max: map {:?}, expected [{h}, {w}]", self.shape(m))));
            }
            if class >= num_classes {
                return Err(AutogradError::Shape(format!("class_max: class {class} of {num_classes}")));
            }
            let src = self.value(m).data();
            for i in 0..p {
                let slot = class * p + i;
                // First map wins on ties.
                if winner[slot] == usize::MAX || src[i] > out[slot] {
                    out[slot] = src[i];
                    winner[slot] = k;
                }
            }
        }
        let needs = maps.iter().any(|&(m, _)| self.needs(m));
        Ok(self.push(
            Tensor::from_vec(&[num_classes, h, w], out)?,
            Op::ClassMax {
                maps: maps.iter().map(|&(m, _)| m).collect(),
                winner,
            },
            needs,
        ))
    }

    /// Attach a scalar computed outside the graph whose gradient w.r.t. `x`
    /// is already known.
    pub fn external_scalar(&mut self, x: Var, value: T, grad: Tensor<T>) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(AutogradError::Shape(format!(
                "external_scalar: gradient {:?} for input {:?}",
                grad.shape(),
                self.shape(x)
            )));
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(value), Op::External { x, grad }, needs))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(AutogradError::Shape(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let c_out = node.value.dim(0);
                let (rows, p) = (geom.rows(), geom.cols());
                if let Some(b) = b {
                    self.accumulate(grads, *b, |db| {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += gd[o * p..(o + 1) * p].iter().copied().sum::<T>();
                        }
                    });
                }
                let unfolded: &[T] = if geom.is_pointwise() { self.value(*x).data() } else { cols };
                self.accumulate(grads, *w, |dw| {
                    gemm(Trans::No, Trans::Yes, c_out, p, rows, gd, unfolded, T::one(), dw);
                });
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    if geom.is_pointwise() {
                        self.accumulate(grads, *x, |dx| gemm(Trans::Yes, Trans::No, rows, c_out, p, wv, gd, T::one(), dx));
                    } else {
                        let mut dcols = vec![T::zero(); rows * p];
                        gemm(Trans::Yes, Trans::No, rows, c_out, p, wv, gd, T::zero(), &mut dcols);
                        self.accumulate(grads, *x, |dx| col2im(&dcols, geom, dx));
                    }
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = node.value.dim(0);
                let p = gd.len() / c;
                let n = T::from_usize(p).unwrap();
                self.accumulate(grads, *beta, |db| {
                    for ch in 0..c {
                        db[ch] += gd[ch * p..(ch + 1) * p].iter().copied().sum::<T>();
                    }
                });
                self.accumulate(grads, *gamma, |dg| {
                    for ch in 0..c {
                        let s: T = (0..p).map(|i| gd[ch * p + i] * xhat[ch * p + i]).sum();
                        dg[ch] += s;
                    }
                });
                let gamma_v = self.value(*gamma).data();
                self.accumulate(grads, *x, |dx| {
                    for ch in 0..c {
                        let r = ch * p..(ch + 1) * p;
                        let (gs, hs) = (&gd[r.clone()], &xhat[r.clone()]);
                        let sum_g: T = gs.iter().copied().sum();
                        let sum_gh: T = gs.iter().zip(hs).map(|(&a, &b)| a * b).sum();
                        let k = gamma_v[ch] * inv_std[ch] / n;
                        for (i, d) in dx[r].iter_mut().enumerate() {
                            *d += k * (n * gs[i] - sum_g - hs[i] * sum_gh);
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let out = node.value.data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        if out[i] > T::zero() {
                            dx[i] += gd[i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g));
                }
            }
            Op::Scale { x, s } => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d += *s * g));
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |d| {
                        d.iter_mut().zip(&gd[off..off + n]).for_each(|(d, &g)| *d += g)
                    });
                    off += n;
                }
            }
            Op::Narrow { x, offset } => {
                self.accumulate(grads, *x, |d| {
                    d[*offset..*offset + gd.len()].iter_mut().zip(gd).for_each(|(d, &g)| *d += g)
                });
            }
            Op::Sum { x } => {
                let g0 = gd[0];
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::WeightedPool { f, weights } => {
                let c = gd.len();
                let p = weights.len();
                self.accumulate(grads, *f, |df| gemm(Trans::No, Trans::No, c, 1, p, gd, weights, T::one(), df));
            }
            Op::Correlate { t, f } => {
                let c = self.value(*t).len();
                let p = gd.len();
                let fv = self.value(*f).data();
                let tv = self.value(*t).data();
                self.accumulate(grads, *t, |dt| gemm(Trans::No, Trans::No, c, p, 1, fv, gd, T::one(), dt));
                self.accumulate(grads, *f, |df| gemm(Trans::No, Trans::No, c, 1, p, tv, gd, T::one(), df));
            }
            Op::ClassMax { maps, winner } => {
                let p = self.value(maps.first().copied().unwrap_or(Var(0))).len();
                for (k, &m) in maps.iter().enumerate() {
                    self.accumulate(grads, m, |dm| {
                        for (slot, &win) in winner.iter().enumerate() {
                            if win == k {
                                dm[slot % p] += gd[slot];
                            }
                        }
                    });
                }
            }
            Op::External { x, grad } => {
                let g0 = gd[0];
                self.accumulate(grads, *x, |d| {
                    d.iter_mut().zip(grad.data()).for_each(|(d, &v)| *d += g0 * v)
                });
            }
        }
    }
}
