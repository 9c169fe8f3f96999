//! Differentiable operations on `[B * N, C, H, W]` tensors.
//!
//! Each op computes its forward value eagerly and registers an exact backward
//! rule on the tape. Stack ops take `n`, the number of slots per stack; the
//! leading dimension must be divisible by it.

use super::graph::Var;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn dims4<T: Scalar>(x: &Var<'_, T>) -> Result<(usize, usize, usize, usize)> {
    x.value().dims4()
}

fn check_stack(bn: usize, n: usize) -> Result<usize> {
    if n == 0 || bn % n != 0 {
        return Err(Error::shape(format!(
            "leading dimension {bn} is not divisible by stack size {n}"
        )));
    }
    Ok(bn / n)
}

/// Output extent of a convolution along one axis.
fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if size + 2 * pad < k || stride == 0 {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded input {size}+2*{pad}"
        )));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Geometry of a strided sliding window over a `c x h x w` grid.
#[derive(Clone, Copy, Debug)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// For output column `ox` and kernel column `kj`, the valid `ox` range.
    fn valid_range(&self, k: usize, out: usize, size: usize) -> (usize, usize) {
        // input index = o * stride + k - pad must lie in [0, size)
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        let hi = if size + self.pad > k {
            ((size + self.pad - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds output rows `y0..y1` of `src` (`c x h x w`) into `dst`
    /// (`rows x (y1 - y0) * wo`).
    fn im2col<T: Scalar>(&self, src: &[T], dst: &mut [T], y0: usize, y1: usize) {
        let (wo, s) = (self.wo, self.stride);
        let cw = (y1 - y0) * wo;
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (ylo, yhi) = self.valid_range(ki, self.ho, self.h);
                let (ylo, yhi) = (ylo.max(y0), yhi.min(y1));
                for kj in 0..self.kw {
                    let (xlo, xhi) = self.valid_range(kj, wo, self.w);
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let out = &mut dst[row * cw..(row + 1) * cw];
                    if ylo >= yhi || xlo >= xhi {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    out[..(ylo - y0) * wo].iter_mut().for_each(|v| *v = T::zero());
                    out[(yhi - y0) * wo..].iter_mut().for_each(|v| *v = T::zero());
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - self.pad;
                        let srow = &plane[iy * self.w..(iy + 1) * self.w];
                        let orow = &mut out[(oy - y0) * wo..(oy - y0 + 1) * wo];
                        orow[..xlo].iter_mut().for_each(|v| *v = T::zero());
                        orow[xhi..].iter_mut().for_each(|v| *v = T::zero());
                        if s == 1 {
                            let ix0 = xlo + kj - self.pad;
                            orow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] = srow[ox * s + kj - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: accumulates the columns of output rows
    /// `y0..y1` into `dst`.
    fn col2im<T: Scalar>(&self, src: &[T], dst: &mut [T], y0: usize, y1: usize) {
        let (wo, s) = (self.wo, self.stride);
        let cw = (y1 - y0) * wo;
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (ylo, yhi) = self.valid_range(ki, self.ho, self.h);
                let (ylo, yhi) = (ylo.max(y0), yhi.min(y1));
                for kj in 0..self.kw {
                    let (xlo, xhi) = self.valid_range(kj, wo, self.w);
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let col = &src[row * cw..(row + 1) * cw];
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - self.pad;
                        let drow = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let crow = &col[(oy - y0) * wo..(oy - y0 + 1) * wo];
                        if s == 1 {
                            let ix0 = xlo + kj - self.pad;
                            for (d, &v) in drow[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&crow[xlo..xhi]) {
                                *d += v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                drow[ox * s + kj - self.pad] += crow[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output rows per column chunk, sized so a chunk stays in cache.
    fn chunk_rows(&self) -> usize {
        (CHUNK_ELEMS / (self.rows() * self.wo).max(1)).clamp(1, self.ho)
    }
}

const CHUNK_ELEMS: usize = 1 << 15;

fn bias_shape_ok<T: Scalar>(b: &Option<Var<'_, T>>, co: usize) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [co] {
            return Err(Error::shape(format!("bias shape {:?}, expected [{co}]", b.shape())));
        }
    }
    Ok(())
}

fn bias_grad<T: Scalar>(dy: &[T], n: usize, co: usize, p: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); co];
    for i in 0..n {
        for (c, acc) in db.iter_mut().enumerate() {
            *acc += dy[(i * co + c) * p..(i * co + c + 1) * p].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[co], db).expect("bias shape")
}

/// 2D cross-correlation. `weight` is `[C_out, C_in, kh, kw]`, `bias` `[C_out]`.
pub fn conv2d<'g, T: Scalar>(
    x: Var<'g, T>,
    weight: Var<'g, T>,
    bias: Option<Var<'g, T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<'g, T>> {
    let (n, ci, h, w) = dims4(&x)?;
    let wv = weight.value();
    let (co, wci, kh, kw) = wv.dims4()?;
    if wci != ci {
        return Err(Error::shape(format!("conv weight expects {wci} input channels, got {ci}")));
    }
    bias_shape_ok(&bias, co)?;
    let win = Window {
        c: ci,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: conv_out(h, kh, stride, pad)?,
        wo: conv_out(w, kw, stride, pad)?,
    };
    let (k, p) = (win.rows(), win.cols());
    let xv = x.value();
    let pointwise = win.is_pointwise();
    let rows = win.chunk_rows();
    let mut buf = if pointwise { Vec::new() } else { vec![T::zero(); k * rows * win.wo] };
    let mut out = vec![T::zero(); n * co * p];
    let bv = bias.map(|b| b.value());
    let beta = if bv.is_some() { T::one() } else { T::zero() };
    for i in 0..n {
        let src = &xv.data()[i * ci * h * w..(i + 1) * ci * h * w];
        let dst = &mut out[i * co * p..(i + 1) * co * p];
        if let Some(b) = &bv {
            for (c, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[c]);
            }
        }
        if pointwise {
            T::gemm(co, k, p, T::one(), wv.data(), k as isize, 1, src, p as isize, 1, beta, dst, p as isize, 1);
            continue;
        }
        for y0 in (0..win.ho).step_by(rows) {
            let y1 = (y0 + rows).min(win.ho);
            let cw = (y1 - y0) * win.wo;
            win.im2col(src, &mut buf, y0, y1);
            let c = &mut dst[y0 * win.wo..];
            T::gemm(co, k, cw, T::one(), wv.data(), k as isize, 1, &buf, cw as isize, 1, beta, c, p as isize, 1);
        }
    }
    let value = Tensor::new(&[n, co, win.ho, win.wo], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bias.is_some();
    Ok(x.graph().op(&inputs, value, move |dy, wants| {
        let dy = dy.data();
        let xd = xv.data();
        let mut dx = wants[0].then(|| vec![T::zero(); n * ci * h * w]);
        let mut dw = wants[1].then(|| vec![T::zero(); co * k]);
        let mut buf = if pointwise { Vec::new() } else { vec![T::zero(); k * rows * win.wo] };
        for i in 0..n {
            let g = &dy[i * co * p..(i + 1) * co * p];
            let src = &xd[i * ci * h * w..(i + 1) * ci * h * w];
            if pointwise {
                if let Some(dx) = &mut dx {
                    let dst = &mut dx[i * ci * p..(i + 1) * ci * p];
                    T::gemm(ci, co, p, T::one(), wv.data(), 1, k as isize, g, p as isize, 1, T::zero(), dst, p as isize, 1);
                }
                if let Some(dw) = &mut dw {
                    T::gemm(co, p, k, T::one(), g, p as isize, 1, src, 1, p as isize, T::one(), dw, k as isize, 1);
                }
                continue;
            }
            for y0 in (0..win.ho).step_by(rows) {
                let y1 = (y0 + rows).min(win.ho);
                let cw = (y1 - y0) * win.wo;
                let gc = &g[y0 * win.wo..];
                if let Some(dw) = &mut dw {
                    win.im2col(src, &mut buf, y0, y1);
                    T::gemm(co, cw, k, T::one(), gc, p as isize, 1, &buf, 1, cw as isize, T::one(), dw, k as isize, 1);
                }
                if let Some(dx) = &mut dx {
                    T::gemm(k, co, cw, T::one(), wv.data(), 1, k as isize, gc, p as isize, 1, T::zero(), &mut buf, cw as isize, 1);
                    win.col2im(&buf, &mut dx[i * ci * h * w..(i + 1) * ci * h * w], y0, y1);
                }
            }
        }
        let mut grads = vec![
            dx.map(|d| Tensor::new(&[n, ci, h, w], d).expect("shape")),
            dw.map(|d| Tensor::new(&[co, ci, kh, kw], d).expect("shape")),
        ];
        if has_bias {
            grads.push(wants[2].then(|| bias_grad(dy, n, co, p)));
        }
        grads
    }))
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same
/// stride/padding. `weight` is `[C_in, C_out, kh, kw]`.
pub fn conv_transpose2d<'g, T: Scalar>(
    x: Var<'g, T>,
    weight: Var<'g, T>,
    bias: Option<Var<'g, T>>,
    stride: usize,
    pad: usize,
) -> Result<Var<'g, T>> {
    let (n, ci, h, w) = dims4(&x)?;
    let wv = weight.value();
    let (wci, co, kh, kw) = wv.dims4()?;
    if wci != ci {
        return Err(Error::shape(format!(
            "transposed conv weight expects {wci} input channels, got {ci}"
        )));
    }
    bias_shape_ok(&bias, co)?;
    if stride == 0 || (h - 1) * stride + kh < 2 * pad + 1 || (w - 1) * stride + kw < 2 * pad + 1 {
        return Err(Error::shape("transposed conv output would be empty"));
    }
    let ho = (h - 1) * stride + kh - 2 * pad;
    let wo = (w - 1) * stride + kw - 2 * pad;
    // The window runs over the large output grid and lands on the input grid.
    let win = Window {
        c: co,
        h: ho,
        w: wo,
        kh,
        kw,
        stride,
        pad,
        ho: h,
        wo: w,
    };
    let (k, p) = (win.rows(), h * w);
    let po = ho * wo;
    let xv = x.value();
    let mut out = vec![T::zero(); n * co * po];
    let mut col = vec![T::zero(); k * p];
    let bv = bias.map(|b| b.value());
    for i in 0..n {
        let src = &xv.data()[i * ci * p..(i + 1) * ci * p];
        T::gemm(k, ci, p, T::one(), wv.data(), 1, k as isize, src, p as isize, 1, T::zero(), &mut col, p as isize, 1);
        let dst = &mut out[i * co * po..(i + 1) * co * po];
        win.col2im(&col, dst, 0, h);
        if let Some(b) = &bv {
            for (c, chunk) in dst.chunks_mut(po).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b.data()[c]);
            }
        }
    }
    let value = Tensor::new(&[n, co, ho, wo], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bias.is_some();
    Ok(x.graph().op(&inputs, value, move |dy, wants| {
        let dy = dy.data();
        let mut dx = wants[0].then(|| vec![T::zero(); n * ci * p]);
        let mut dw = wants[1].then(|| vec![T::zero(); ci * k]);
        let mut dcol = vec![T::zero(); k * p];
        for i in 0..n {
            win.im2col(&dy[i * co * po..(i + 1) * co * po], &mut dcol, 0, h);
            if let Some(dx) = &mut dx {
                let dst = &mut dx[i * ci * p..(i + 1) * ci * p];
                T::gemm(ci, k, p, T::one(), wv.data(), k as isize, 1, &dcol, p as isize, 1, T::zero(), dst, p as isize, 1);
            }
            if let Some(dw) = &mut dw {
                let src = &xv.data()[i * ci * p..(i + 1) * ci * p];
                T::gemm(ci, p, k, T::one(), src, p as isize, 1, &dcol, 1, p as isize, T::one(), dw, k as isize, 1);
            }
        }
        let mut grads = vec![
            dx.map(|d| Tensor::new(&[n, ci, h, w], d).expect("shape")),
            dw.map(|d| Tensor::new(&[ci, co, kh, kw], d).expect("shape")),
        ];
        if has_bias {
            grads.push(wants[2].then(|| bias_grad(dy, n, co, po)));
        }
        grads
    }))
}

fn unary<'g, T: Scalar>(
    x: Var<'g, T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T) -> T + 'static,
) -> Var<'g, T> {
    let xv = x.value();
    let value = xv.map(f);
    x.graph().op(&[x], value, move |dy, _| {
        let data = xv.data().iter().zip(dy.data()).map(|(&v, &g)| g * df(v)).collect();
        vec![Some(Tensor::new(xv.shape(), data).expect("shape"))]
    })
}

pub fn relu<'g, T: Scalar>(x: Var<'g, T>) -> Var<'g, T> {
    unary(x, |v| v.max(T::zero()), |v| if v > T::zero() { T::one() } else { T::zero() })
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<'g, T: Scalar>(x: Var<'g, T>) -> Var<'g, T> {
    let half = T::lit(0.5);
    let inv_sqrt2 = T::FRAC_1_SQRT_2();
    let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
    unary(
        x,
        move |v| half * v * (T::one() + (v * inv_sqrt2).erf_exact()),
        move |v| half * (T::one() + (v * inv_sqrt2).erf_exact()) + v * inv_sqrt_2pi * (-half * v * v).exp(),
    )
}

/// 2x2 spatial max pooling with stride 2. Ties go to the first element in
/// row-major order.
pub fn max_pool2d<'g, T: Scalar>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let (n, c, h, w) = dims4(&x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max_pool2d needs even extents, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xv = x.value();
    let src = xv.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut arg = vec![0usize; out.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let o = (plane * ho + oy) * wo + ox;
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [best + 1, best + w, best + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out[o] = src[best];
                arg[o] = best;
            }
        }
    }
    let value = Tensor::new(&[n, c, ho, wo], out)?;
    let len = xv.len();
    let shape = xv.shape().to_vec();
    Ok(x.graph().op(&[x], value, move |dy, _| {
        let mut dx = vec![T::zero(); len];
        for (&a, &g) in arg.iter().zip(dy.data()) {
            dx[a] += g;
        }
        vec![Some(Tensor::new(&shape, dx).expect("shape"))]
    }))
}

pub fn add<'g, T: Scalar>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(Error::shape(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
    }
    let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
    let value = Tensor::new(av.shape(), data)?;
    Ok(a.graph().op(&[a, b], value, |dy, wants| {
        vec![wants[0].then(|| dy.clone()), wants[1].then(|| dy.clone())]
    }))
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<'g, T: Scalar>(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    let (n, _, h, w) = dims4(first)?;
    let p = h * w;
    let mut chans = Vec::with_capacity(parts.len());
    let values: Vec<_> = parts.iter().map(|v| v.value()).collect();
    for v in &values {
        let (vn, vc, vh, vw) = v.dims4()?;
        if (vn, vh, vw) != (n, h, w) {
            return Err(Error::shape(format!("concat: {:?} vs {:?}", v.shape(), first.shape())));
        }
        chans.push(vc);
    }
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * total * p);
    for i in 0..n {
        for (v, &c) in values.iter().zip(&chans) {
            out.extend_from_slice(&v.data()[i * c * p..(i + 1) * c * p]);
        }
    }
    let value = Tensor::new(&[n, total, h, w], out)?;
    Ok(first.graph().op(parts, value, move |dy, wants| {
        let mut offset = 0;
        chans
            .iter()
            .zip(wants)
            .map(|(&c, &want)| {
                let start = offset;
                offset += c;
                want.then(|| {
                    let mut g = Vec::with_capacity(n * c * p);
                    for i in 0..n {
                        let s = (i * total + start) * p;
                        g.extend_from_slice(&dy.data()[s..s + c * p]);
                    }
                    Tensor::new(&[n, c, h, w], g).expect("shape")
                })
            })
            .collect()
    }))
}

/// Channels `start..start + len` of a rank-4 tensor.
pub fn slice_channels<'g, T: Scalar>(x: Var<'g, T>, start: usize, len: usize) -> Result<Var<'g, T>> {
    let (n, c, h, w) = dims4(&x)?;
    if start + len > c || len == 0 {
        return Err(Error::shape(format!("channel slice {start}+{len} outside {c}")));
    }
    let p = h * w;
    let xv = x.value();
    let mut out = Vec::with_capacity(n * len * p);
    for i in 0..n {
        let s = (i * c + start) * p;
        out.extend_from_slice(&xv.data()[s..s + len * p]);
    }
    let value = Tensor::new(&[n, len, h, w], out)?;
    Ok(x.graph().op(&[x], value, move |dy, _| {
        let mut dx = vec![T::zero(); n * c * p];
        for i in 0..n {
            let s = (i * c + start) * p;
            dx[s..s + len * p].copy_from_slice(&dy.data()[i * len * p..(i + 1) * len * p]);
        }
        vec![Some(Tensor::new(&[n, c, h, w], dx).expect("shape"))]
    }))
}

fn per_channel<'g, T: Scalar>(x: &Var<'g, T>, p: &Var<'g, T>, what: &str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = dims4(x)?;
    if p.shape() != [c] {
        return Err(Error::shape(format!("{what}: parameter {:?} for {c} channels", p.shape())));
    }
    Ok((n, c, h * w))
}

/// Normalizes across channels at every (sample, pixel), then applies a
/// per-channel affine map.
pub fn layer_norm<'g, T: Scalar>(x: Var<'g, T>, weight: Var<'g, T>, bias: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
    let (n, c, p) = per_channel(&x, &weight, "layer_norm")?;
    per_channel(&x, &bias, "layer_norm")?;
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    let eps = T::lit(eps);
    let cf = T::from_usize_lossy(c);
    let mut xhat = vec![T::zero(); n * c * p];
    let mut inv_std = vec![T::zero(); n * p];
    let mut out = vec![T::zero(); n * c * p];
    let mut mean = vec![T::zero(); p];
    let mut var = vec![T::zero(); p];
    for i in 0..n {
        let base = i * c * p;
        mean.iter_mut().for_each(|v| *v = T::zero());
        var.iter_mut().for_each(|v| *v = T::zero());
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xv.data()[base + ch * p..base + (ch + 1) * p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cf);
        for ch in 0..c {
            for ((s, &v), &m) in var.iter_mut().zip(&xv.data()[base + ch * p..base + (ch + 1) * p]).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let istd = &mut inv_std[i * p..(i + 1) * p];
        for (is, &s) in istd.iter_mut().zip(&var) {
            *is = T::one() / (s / cf + eps).sqrt();
        }
        for ch in 0..c {
            let r = base + ch * p..base + (ch + 1) * p;
            let (wc, bc) = (wv.data()[ch], bv.data()[ch]);
            for (((xh, o), &v), (&m, &is)) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut out[r.clone()])
                .zip(&xv.data()[r])
                .zip(mean.iter().zip(istd.iter()))
            {
                *xh = (v - m) * is;
                *o = wc * *xh + bc;
            }
        }
    }
    let value = Tensor::new(&[n, c, xv.shape()[2], xv.shape()[3]], out)?;
    let shape = value.shape().to_vec();
    Ok(x.graph().op(&[x, weight, bias], value, move |dy, wants| {
        let dy = dy.data();
        let dx = wants[0].then(|| {
            let mut dx = vec![T::zero(); n * c * p];
            let mut m1 = vec![T::zero(); p];
            let mut m2 = vec![T::zero(); p];
            for i in 0..n {
                let base = i * c * p;
                m1.iter_mut().for_each(|v| *v = T::zero());
                m2.iter_mut().for_each(|v| *v = T::zero());
                for ch in 0..c {
                    let wc = wv.data()[ch];
                    let r = base + ch * p..base + (ch + 1) * p;
                    for ((a, b), (&g, &xh)) in m1.iter_mut().zip(m2.iter_mut()).zip(dy[r.clone()].iter().zip(&xhat[r])) {
                        *a += g * wc;
                        *b += g * wc * xh;
                    }
                }
                for ch in 0..c {
                    let wc = wv.data()[ch];
                    let r = base + ch * p..base + (ch + 1) * p;
                    for (j, idx) in r.enumerate() {
                        dx[idx] = inv_std[i * p + j] * (dy[idx] * wc - m1[j] / cf - xhat[idx] * m2[j] / cf);
                    }
                }
            }
            Tensor::new(&shape, dx).expect("shape")
        });
        let dw = wants[1].then(|| {
            let mut dw = vec![T::zero(); c];
            for i in 0..n {
                for (ch, acc) in dw.iter_mut().enumerate() {
                    let r = (i * c + ch) * p..(i * c + ch + 1) * p;
                    *acc += dy[r.clone()].iter().zip(&xhat[r]).map(|(&g, &xh)| g * xh).sum::<T>();
                }
            }
            Tensor::new(&[c], dw).expect("shape")
        });
        let db = wants[2].then(|| bias_grad(dy, n, c, p));
        vec![dx, dw, db]
    }))
}

/// Per-channel multiplicative gate.
pub fn layer_scale<'g, T: Scalar>(x: Var<'g, T>, weight: Var<'g, T>) -> Result<Var<'g, T>> {
    let (n, c, p) = per_channel(&x, &weight, "layer_scale")?;
    let (xv, wv) = (x.value(), weight.value());
    let mut out = xv.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let wc = wv.data()[ch];
            out[(i * c + ch) * p..(i * c + ch + 1) * p].iter_mut().for_each(|v| *v *= wc);
        }
    }
    let value = Tensor::new(xv.shape(), out)?;
    Ok(x.graph().op(&[x, weight], value, move |dy, wants| {
        let dy = dy.data();
        let dx = wants[0].then(|| {
            let mut dx = dy.to_vec();
            for i in 0..n {
                for ch in 0..c {
                    let wc = wv.data()[ch];
                    dx[(i * c + ch) * p..(i * c + ch + 1) * p].iter_mut().for_each(|v| *v *= wc);
                }
            }
            Tensor::new(xv.shape(), dx).expect("shape")
        });
        let dw = wants[1].then(|| {
            let mut dw = vec![T::zero(); c];
            for i in 0..n {
                for (ch, acc) in dw.iter_mut().enumerate() {
                    let r = (i * c + ch) * p..(i * c + ch + 1) * p;
                    *acc += dy[r.clone()].iter().zip(&xv.data()[r]).map(|(&g, &v)| g * v).sum::<T>();
                }
            }
            Tensor::new(&[c], dw).expect("shape")
        });
        vec![dx, dw]
    }))
}

/// Elementwise maximum over the stack axis, broadcast back to every slot.
///
/// The gradient of each position goes to the slot holding the maximum; ties
/// resolve to the lowest slot index.
pub fn stack_max<'g, T: Scalar>(x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
    let (bn, c, h, w) = dims4(&x)?;
    let b = check_stack(bn, n)?;
    let m = c * h * w;
    let xv = x.value();
    let src = xv.data();
    let mut out = vec![T::zero(); bn * m];
    let mut arg = vec![0u32; b * m];
    for bi in 0..b {
        let base = bi * n * m;
        let mut best = src[base..base + m].to_vec();
        let a = &mut arg[bi * m..(bi + 1) * m];
        for s in 1..n {
            for ((bv, ai), &v) in best.iter_mut().zip(a.iter_mut()).zip(&src[base + s * m..base + (s + 1) * m]) {
                if v > *bv {
                    *bv = v;
                    *ai = s as u32;
                }
            }
        }
        for s in 0..n {
            out[base + s * m..base + (s + 1) * m].copy_from_slice(&best);
        }
    }
    let value = Tensor::new(xv.shape(), out)?;
    let shape = xv.shape().to_vec();
    Ok(x.graph().op(&[x], value, move |dy, _| {
        let dy = dy.data();
        let mut dx = vec![T::zero(); bn * m];
        for bi in 0..b {
            let base = bi * n * m;
            for j in 0..m {
                let mut g = T::zero();
                for s in 0..n {
                    g += dy[base + s * m + j];
                }
                dx[base + arg[bi * m + j] as usize * m + j] = g;
            }
        }
        vec![Some(Tensor::new(&shape, dx).expect("shape"))]
    }))
}

/// Mean over the stack axis, broadcast back to every slot.
pub fn stack_mean<'g, T: Scalar>(x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
    let (bn, c, h, w) = dims4(&x)?;
    let b = check_stack(bn, n)?;
    let m = c * h * w;
    let xv = x.value();
    let inv = T::one() / T::from_usize_lossy(n);
    let mean_bcast = move |src: &[T]| {
        let mut out = vec![T::zero(); bn * m];
        for bi in 0..b {
            let base = bi * n * m;
            let mut acc = vec![T::zero(); m];
            for s in 0..n {
                for (a, &v) in acc.iter_mut().zip(&src[base + s * m..base + (s + 1) * m]) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
            for s in 0..n {
                out[base + s * m..base + (s + 1) * m].copy_from_slice(&acc);
            }
        }
        out
    };
    let value = Tensor::new(xv.shape(), mean_bcast(xv.data()))?;
    let shape = xv.shape().to_vec();
    Ok(x.graph().op(&[x], value, move |dy, _| {
        vec![Some(Tensor::new(&shape, mean_bcast(dy.data())).expect("shape"))]
    }))
}

/// Softmax over the stack axis at every (stack, channel, pixel).
pub fn stack_softmax<'g, T: Scalar>(x: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
    let (bn, c, h, w) = dims4(&x)?;
    let b = check_stack(bn, n)?;
    let m = c * h * w;
    let xv = x.value();
    let src = xv.data();
    let mut out = vec![T::zero(); bn * m];
    for bi in 0..b {
        let base = bi * n * m;
        for j in 0..m {
            let mut mx = T::neg_infinity();
            for s in 0..n {
                mx = mx.max(src[base + s * m + j]);
            }
            let mut z = T::zero();
            for s in 0..n {
                let e = (src[base + s * m + j] - mx).exp();
                out[base + s * m + j] = e;
                z += e;
            }
            for s in 0..n {
                out[base + s * m + j] /= z;
            }
        }
    }
    let value = Tensor::new(xv.shape(), out)?;
    let sm = value.clone();
    Ok(x.graph().op(&[x], value, move |dy, _| {
        let (dy, s_) = (dy.data(), sm.data());
        let mut dx = vec![T::zero(); bn * m];
        for bi in 0..b {
            let base = bi * n * m;
            for j in 0..m {
                let mut dot = T::zero();
                for s in 0..n {
                    dot += s_[base + s * m + j] * dy[base + s * m + j];
                }
                for s in 0..n {
                    let i = base + s * m + j;
                    dx[i] = s_[i] * (dy[i] - dot);
                }
            }
        }
        vec![Some(Tensor::new(sm.shape(), dx).expect("shape"))]
    }))
}

/// Lambda summary: `out[k * C + c] = sum_m weights[m, k] * q[m, c]` per pixel,
/// identical for every slot of a stack.
///
/// `weights` is `[B * N, k, H, W]` (normally softmax-normalized over the
/// stack), `q` is `[B * N, C, H, W]`; the output is `[B * N, k * C, H, W]`.
pub fn lambda_summary<'g, T: Scalar>(weights: Var<'g, T>, q: Var<'g, T>, n: usize) -> Result<Var<'g, T>> {
    let (bn, kk, h, w) = dims4(&weights)?;
    let (qbn, c, qh, qw) = dims4(&q)?;
    if (bn, h, w) != (qbn, qh, qw) {
        return Err(Error::shape(format!(
            "lambda summary: weights {:?} vs queries {:?}",
            weights.shape(),
            q.shape()
        )));
    }
    let b = check_stack(bn, n)?;
    let p = h * w;
    let (kv, qv) = (weights.value(), q.value());
    let (kd, qd) = (kv.data(), qv.data());
    let oc = kk * c;
    let mut out = vec![T::zero(); bn * oc * p];
    let mut summary = vec![T::zero(); oc * p];
    for bi in 0..b {
        summary.iter_mut().for_each(|v| *v = T::zero());
        for s in 0..n {
            let slot = bi * n + s;
            for ki in 0..kk {
                let kw = &kd[(slot * kk + ki) * p..(slot * kk + ki + 1) * p];
                for ci in 0..c {
                    let qc = &qd[(slot * c + ci) * p..(slot * c + ci + 1) * p];
                    let dst = &mut summary[(ki * c + ci) * p..(ki * c + ci + 1) * p];
                    for ((d, &a), &bq) in dst.iter_mut().zip(kw).zip(qc) {
                        *d += a * bq;
                    }
                }
            }
        }
        for s in 0..n {
            let slot = bi * n + s;
            out[slot * oc * p..(slot + 1) * oc * p].copy_from_slice(&summary);
        }
    }
    let value = Tensor::new(&[bn, oc, h, w], out)?;
    Ok(weights.graph().op(&[weights, q], value, move |dy, wants| {
        let (dy, kd, qd) = (dy.data(), kv.data(), qv.data());
        let mut dk = wants[0].then(|| vec![T::zero(); bn * kk * p]);
        let mut dq = wants[1].then(|| vec![T::zero(); bn * c * p]);
        let mut gsum = vec![T::zero(); oc * p];
        for bi in 0..b {
            gsum.iter_mut().for_each(|v| *v = T::zero());
            for s in 0..n {
                let slot = bi * n + s;
                for (g, &d) in gsum.iter_mut().zip(&dy[slot * oc * p..(slot + 1) * oc * p]) {
                    *g += d;
                }
            }
            for s in 0..n {
                let slot = bi * n + s;
                for ki in 0..kk {
                    for ci in 0..c {
                        let g = &gsum[(ki * c + ci) * p..(ki * c + ci + 1) * p];
                        if let Some(dk) = &mut dk {
                            let qc = &qd[(slot * c + ci) * p..(slot * c + ci + 1) * p];
                            let dst = &mut dk[(slot * kk + ki) * p..(slot * kk + ki + 1) * p];
                            for ((d, &gv), &qv) in dst.iter_mut().zip(g).zip(qc) {
                                *d += gv * qv;
                            }
                        }
                        if let Some(dq) = &mut dq {
                            let kw = &kd[(slot * kk + ki) * p..(slot * kk + ki + 1) * p];
                            let dst = &mut dq[(slot * c + ci) * p..(slot * c + ci + 1) * p];
                            for ((d, &gv), &a) in dst.iter_mut().zip(g).zip(kw) {
                                *d += gv * a;
                            }
                        }
                    }
                }
            }
        }
        vec![
            dk.map(|d| Tensor::new(kv.shape(), d).expect("shape")),
            dq.map(|d| Tensor::new(qv.shape(), d).expect("shape")),
        ]
    }))
}

/// Attention weights `A[b, head, n, m, pixel] = softmax_m(<Q_n, K_m> / sqrt(C / heads))`,
/// stored as `[B, heads, N, N, H * W]`.
pub fn stack_attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, n: usize, heads: usize) -> Result<Tensor<T>> {
    let (bn, c, h, w) = q.dims4()?;
    if k.shape() != q.shape() {
        return Err(Error::shape("attention: query and key shapes differ"));
    }
    let b = check_stack(bn, n)?;
    if heads == 0 || c % heads != 0 {
        return Err(Error::invalid(format!("{heads} heads do not divide {c} channels")));
    }
    let dh = c / heads;
    let p = h * w;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let (qd, kd) = (q.data(), k.data());
    let mut a = vec![T::zero(); b * heads * n * n * p];
    for bi in 0..b {
        for hd in 0..heads {
            let blk = &mut a[(bi * heads + hd) * n * n * p..(bi * heads + hd + 1) * n * n * p];
            for i in 0..n {
                for j in 0..n {
                    let dst = &mut blk[(i * n + j) * p..(i * n + j + 1) * p];
                    for ci in hd * dh..(hd + 1) * dh {
                        let qi = &qd[((bi * n + i) * c + ci) * p..((bi * n + i) * c + ci + 1) * p];
                        let kj = &kd[((bi * n + j) * c + ci) * p..((bi * n + j) * c + ci + 1) * p];
                        for ((d, &x), &y) in dst.iter_mut().zip(qi).zip(kj) {
                            *d += x * y;
                        }
                    }
                    dst.iter_mut().for_each(|v| *v *= scale);
                }
                // softmax over j for each pixel
                let row = &mut blk[i * n * p..(i + 1) * n * p];
                for px in 0..p {
                    let mut mx = T::neg_infinity();
                    for j in 0..n {
                        mx = mx.max(row[j * p + px]);
                    }
                    let mut z = T::zero();
                    for j in 0..n {
                        let e = (row[j * p + px] - mx).exp();
                        row[j * p + px] = e;
                        z += e;
                    }
                    for j in 0..n {
                        row[j * p + px] /= z;
                    }
                }
            }
        }
    }
    Tensor::new(&[b, heads, n, n, p], a)
}

/// Pixelwise multi-head attention across the stack axis:
/// `g_n = sum_m A[n, m] V_m` per head.
pub fn stack_attention<'g, T: Scalar>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
    n: usize,
    heads: usize,
) -> Result<Var<'g, T>> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    if vv.shape() != qv.shape() {
        return Err(Error::shape("attention: value shape differs from query"));
    }
    let attn = stack_attention_weights(&qv, &kv, n, heads)?;
    let (bn, c, h, w) = qv.dims4()?;
    let b = bn / n;
    let dh = c / heads;
    let p = h * w;
    let ad = attn.data();
    let vd = vv.data();
    let mut out = vec![T::zero(); bn * c * p];
    for bi in 0..b {
        for hd in 0..heads {
            let blk = &ad[(bi * heads + hd) * n * n * p..(bi * heads + hd + 1) * n * n * p];
            for i in 0..n {
                for ci in hd * dh..(hd + 1) * dh {
                    let dst = &mut out[((bi * n + i) * c + ci) * p..((bi * n + i) * c + ci + 1) * p];
                    for j in 0..n {
                        let aij = &blk[(i * n + j) * p..(i * n + j + 1) * p];
                        let vj = &vd[((bi * n + j) * c + ci) * p..((bi * n + j) * c + ci + 1) * p];
                        for ((d, &a), &x) in dst.iter_mut().zip(aij).zip(vj) {
                            *d += a * x;
                        }
                    }
                }
            }
        }
    }
    let value = Tensor::new(qv.shape(), out)?;
    Ok(q.graph().op(&[q, k, v], value, move |dy, wants| {
        let (dy, ad, qd, kd, vd) = (dy.data(), attn.data(), qv.data(), kv.data(), vv.data());
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut dq = vec![T::zero(); bn * c * p];
        let mut dk = vec![T::zero(); bn * c * p];
        let mut dv = vec![T::zero(); bn * c * p];
        let mut ds = vec![T::zero(); n * n * p];
        let idx = |slot: usize, ci: usize| (slot * c + ci) * p;
        for bi in 0..b {
            for hd in 0..heads {
                let blk = &ad[(bi * heads + hd) * n * n * p..(bi * heads + hd + 1) * n * n * p];
                // dA[i, j] = <dy_i, V_j>;  dV_j += A[i, j] dy_i
                ds.iter_mut().for_each(|x| *x = T::zero());
                for i in 0..n {
                    for j in 0..n {
                        let d = &mut ds[(i * n + j) * p..(i * n + j + 1) * p];
                        let aij = &blk[(i * n + j) * p..(i * n + j + 1) * p];
                        for ci in hd * dh..(hd + 1) * dh {
                            let gi = &dy[idx(bi * n + i, ci)..idx(bi * n + i, ci) + p];
                            let vj = &vd[idx(bi * n + j, ci)..idx(bi * n + j, ci) + p];
                            for ((x, &g), &y) in d.iter_mut().zip(gi).zip(vj) {
                                *x += g * y;
                            }
                            let dvj = &mut dv[idx(bi * n + j, ci)..idx(bi * n + j, ci) + p];
                            for ((x, &a), &g) in dvj.iter_mut().zip(aij).zip(gi) {
                                *x += a * g;
                            }
                        }
                    }
                }
                // dS = A * (dA - sum_j A dA)
                for i in 0..n {
                    for px in 0..p {
                        let mut dot = T::zero();
                        for j in 0..n {
                            dot += blk[(i * n + j) * p + px] * ds[(i * n + j) * p + px];
                        }
                        for j in 0..n {
                            let t = (i * n + j) * p + px;
                            ds[t] = blk[t] * (ds[t] - dot) * scale;
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let d = &ds[(i * n + j) * p..(i * n + j + 1) * p];
                        for ci in hd * dh..(hd + 1) * dh {
                            let (oi, oj) = (idx(bi * n + i, ci), idx(bi * n + j, ci));
                            for px in 0..p {
                                dq[oi + px] += d[px] * kd[oj + px];
                                dk[oj + px] += d[px] * qd[oi + px];
                            }
                        }
                    }
                }
            }
        }
        let shape = qv.shape();
        vec![
            wants[0].then(|| Tensor::new(shape, dq).expect("shape")),
            wants[1].then(|| Tensor::new(shape, dk).expect("shape")),
            wants[2].then(|| Tensor::new(shape, dv).expect("shape")),
        ]
    }))
}

/// Mean absolute difference against a constant target; returns a `[1]` tensor.
///
/// The subgradient at zero difference is 0.
pub fn l1_loss<'g, T: Scalar>(pred: Var<'g, T>, target: &Tensor<T>) -> Result<Var<'g, T>> {
    let pv = pred.value();
    if pv.shape() != target.shape() {
        return Err(Error::shape(format!("l1: {:?} vs {:?}", pv.shape(), target.shape())));
    }
    let len = T::from_usize_lossy(pv.len());
    let total: T = pv.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum();
    let signs: Vec<T> = pv
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            if a > b {
                T::one()
            } else if a < b {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let shape = pv.shape().to_vec();
    Ok(pred.graph().op(&[pred], Tensor::scalar(total / len), move |dy, _| {
        let g = dy.data()[0] / len;
        vec![Some(Tensor::new(&shape, signs.into_iter().map(|s| s * g).collect()).expect("shape"))]
    }))
}

/// `sum(x * c)` for a constant `c`; a linear probe used for gradient checks.
pub fn dot_const<'g, T: Scalar>(x: Var<'g, T>, c: &Tensor<T>) -> Result<Var<'g, T>> {
    let xv = x.value();
    if xv.shape() != c.shape() {
        return Err(Error::shape(format!("dot: {:?} vs {:?}", xv.shape(), c.shape())));
    }
    let total: T = xv.data().iter().zip(c.data()).map(|(&a, &b)| a * b).sum();
    let c = c.clone();
    Ok(x.graph().op(&[x], Tensor::scalar(total), move |dy, _| {
        let g = dy.data()[0];
        vec![Some(c.map(|v| v * g))]
    }))
}
