//! Forward and backward kernels on plain tensors.
//!
//! Every kernel runs single-threaded with a fixed reduction order, so results
//! are bit-reproducible for identical inputs.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Valid index range `lo..hi` of output positions whose tap `pos + offset`
/// lands inside `0..len`.
#[inline]
fn tap_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn check_conv(x: Shape, w: Shape, b: Shape, pad: usize) -> Result<()> {
    if w.h != w.w {
        return Err(Error::contract(
            "conv2d",
            format!("kernel {}x{} is not square", w.h, w.w),
        ));
    }
    if x.c != w.c {
        return Err(Error::contract(
            "conv2d",
            format!("input channels {} != weight in_c {}", x.c, w.c),
        ));
    }
    if 2 * pad + 1 != w.h {
        return Err(Error::contract(
            "conv2d",
            format!("padding {pad} is not same-size for kernel {}", w.h),
        ));
    }
    if b.numel() != w.n {
        return Err(Error::contract(
            "conv2d",
            format!("bias length {} != out_c {}", b.numel(), w.n),
        ));
    }
    Ok(())
}

/// Stride-1, zero-padded "same" convolution.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    check_conv(xs, ws, b.shape(), pad)?;
    let k = ws.h;
    let (h, wd) = (xs.h, xs.w);
    let plane = xs.plane();
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, h, wd));
    let wdata = w.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for o in 0..ws.n {
            let oplane = &mut od[(n * ws.n + o) * plane..(n * ws.n + o + 1) * plane];
            oplane.fill(b.data()[o]);
            for i in 0..xs.c {
                let iplane = x.plane(n, i);
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let (x0, x1) = tap_range(wd, dx);
                        let wv = wdata[((o * ws.c + i) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut oplane[y * wd + x0..y * wd + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let irow = &iplane[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            for (o, &v) in orow.iter_mut().zip(irow) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Dot product with independent partial sums so the loop vectorises.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().fold(tail, |s, &l| s + l)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    pad: usize,
    need_input: bool,
) -> ConvGrads<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let (h, wd) = (xs.h, xs.w);
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(Shape::new(ws.n, 1, 1, 1));
    let mut gx = need_input.then(|| Tensor::zeros(xs));
    let plane = xs.plane();

    for n in 0..xs.n {
        for o in 0..ws.n {
            let gplane = grad.plane(n, o);
            let mut bsum = T::zero();
            for &g in gplane {
                bsum += g;
            }
            gb.data_mut()[o] += bsum;
            for i in 0..xs.c {
                let iplane = x.plane(n, i);
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let (x0, x1) = tap_range(wd, dx);
                        let widx = ((o * ws.c + i) * k + ky) * k + kx;
                        let wv = w.data()[widx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let grow = &gplane[y * wd + x0..y * wd + x1];
                            let irow = &iplane[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            acc += dot(grow, irow);
                            if let Some(gx) = gx.as_mut() {
                                let start = (n * xs.c + i) * plane + sy * wd + sx0;
                                let xrow = &mut gx.data_mut()[start..start + (x1 - x0)];
                                for (d, &g) in xrow.iter_mut().zip(grow) {
                                    *d += wv * g;
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

fn check_slopes(x: Shape, slopes: Shape) -> Result<()> {
    if slopes.numel() != x.c {
        return Err(Error::contract(
            "prelu",
            format!("{} slopes for {} channels", slopes.numel(), x.c),
        ));
    }
    Ok(())
}

/// Per-channel parametric ReLU.
pub fn prelu<T: Real>(x: &Tensor<T>, slopes: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    check_slopes(s, slopes.shape())?;
    let plane = s.plane();
    let mut out = x.clone();
    for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let a = slopes.data()[idx % s.c];
        for v in chunk {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
    Ok(out)
}

pub fn prelu_backward<T: Real>(x: &Tensor<T>, slopes: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let plane = s.plane();
    let mut gx = grad.clone();
    let mut gs = Tensor::zeros(slopes.shape());
    for (idx, (gchunk, xchunk)) in gx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
        let c = idx % s.c;
        let a = slopes.data()[c];
        let mut acc = T::zero();
        for (g, &v) in gchunk.iter_mut().zip(xchunk) {
            if v < T::zero() {
                acc += *g * v;
                *g = a * *g;
            }
        }
        gs.data_mut()[c] += acc;
    }
    (gx, gs)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Branching on sign keeps exp() from overflowing for large |v|.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward through `y = sigmoid(x)` given the forward output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut g = grad.clone();
    for (g, &y) in g.data_mut().iter_mut().zip(y.data()) {
        *g = *g * y * (T::one() - y);
    }
    g
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn tanh_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut g = grad.clone();
    for (g, &y) in g.data_mut().iter_mut().zip(y.data()) {
        *g *= T::one() - y * y;
    }
    g
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::contract("global_avg_pool", "empty spatial extent"));
    }
    let denom = T::of(s.plane() as f64);
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| {
            let mut acc = T::zero();
            for &v in p {
                acc += v;
            }
            acc / denom
        })
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward<T: Real>(input: Shape, grad: &Tensor<T>) -> Tensor<T> {
    let denom = T::of(input.plane() as f64);
    let mut out = Tensor::zeros(input);
    for (chunk, &g) in out.data_mut().chunks_mut(input.plane()).zip(grad.data()) {
        chunk.fill(g / denom);
    }
    out
}

/// Depth-to-space: `out[n, o, y*r+i, x*r+j] = in[n, o*r*r + i*r + j, y, x]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::contract(
            "pixel_shuffle",
            format!("channels {} not divisible by r^2 = {}", s.c, r * r),
        ));
    }
    let oc = s.c / (r * r);
    let mut out = Tensor::zeros(Shape::new(s.n, oc, s.h * r, s.w * r));
    for n in 0..s.n {
        for o in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, o * r * r + i * r + j);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, o, y * r + i, xx * r + j, src[y * s.w + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::contract(
            "pixel_unshuffle",
            format!("spatial {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let (h, w) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c * r * r, h, w));
    for n in 0..s.n {
        for o in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..h {
                        for xx in 0..w {
                            out.set(n, o * r * r + i * r + j, y, xx, x.at(n, o, y * r + i, xx * r + j));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::contract("concat_channels", "no inputs"))?
        .shape();
    let mut c = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::contract(
                "concat_channels",
                format!("input {s} does not match batch/spatial of {first}"),
            ));
        }
        c += s.c;
    }
    let mut data = Vec::with_capacity(first.n * c * first.plane());
    for n in 0..first.n {
        for t in inputs {
            let per = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(Shape::new(first.n, c, first.h, first.w), data)
}

/// Splits a concatenated gradient back into per-input pieces.
pub fn split_channels<T: Real>(grad: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let s = grad.shape();
    let mut parts: Vec<Vec<T>> = widths.iter().map(|c| Vec::with_capacity(s.n * c * s.plane())).collect();
    for n in 0..s.n {
        let mut c0 = 0;
        for (part, &c) in parts.iter_mut().zip(widths) {
            let start = (n * s.c + c0) * s.plane();
            part.extend_from_slice(&grad.data()[start..start + c * s.plane()]);
            c0 += c;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d).expect("split sizes"))
        .collect()
}

/// How the second operand of a binary op maps onto the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    /// `(n, 1, 1, 1)`: one scalar per sample.
    PerSample,
    /// `(n, c, 1, 1)`: one scalar per sample and channel.
    PerChannel,
}

pub fn broadcast_kind(a: Shape, b: Shape, op: &'static str) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.n == a.n && b.h == 1 && b.w == 1 {
        if b.c == 1 {
            return Ok(Broadcast::PerSample);
        }
        if b.c == a.c {
            return Ok(Broadcast::PerChannel);
        }
    }
    Err(Error::contract(op, format!("cannot broadcast {b} onto {a}")))
}

fn zip_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>, kind: Broadcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let s = a.shape();
    let mut out = a.clone();
    match kind {
        Broadcast::Same => {
            for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
                *o = f(*o, v);
            }
        }
        Broadcast::PerSample | Broadcast::PerChannel => {
            for (idx, chunk) in out.data_mut().chunks_mut(s.plane()).enumerate() {
                let bi = if kind == Broadcast::PerSample { idx / s.c } else { idx };
                let v = b.data()[bi];
                for o in chunk {
                    *o = f(*o, v);
                }
            }
        }
    }
    out
}

/// Sums a full-size gradient down to the broadcast operand's shape.
pub fn reduce_broadcast<T: Real>(grad: &Tensor<T>, b: Shape, kind: Broadcast) -> Tensor<T> {
    match kind {
        Broadcast::Same => grad.clone(),
        Broadcast::PerSample | Broadcast::PerChannel => {
            let s = grad.shape();
            let mut out = Tensor::zeros(b);
            for (idx, chunk) in grad.data().chunks(s.plane()).enumerate() {
                let bi = if kind == Broadcast::PerSample { idx / s.c } else { idx };
                let mut acc = T::zero();
                for &v in chunk {
                    acc += v;
                }
                out.data_mut()[bi] += acc;
            }
            out
        }
    }
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let kind = broadcast_kind(a.shape(), b.shape(), "add")?;
    Ok(zip_broadcast(a, b, kind, |x, y| x + y))
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let kind = broadcast_kind(a.shape(), b.shape(), "mul")?;
    Ok(zip_broadcast(a, b, kind, |x, y| x * y))
}

/// Gradients of `a * b` with respect to `a` and `b`.
pub fn mul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let kind = broadcast_kind(a.shape(), b.shape(), "mul").expect("checked in forward");
    let ga = zip_broadcast(grad, b, kind, |g, y| g * y);
    let mut prod = grad.clone();
    for (p, &x) in prod.data_mut().iter_mut().zip(a.data()) {
        *p *= x;
    }
    let gb = reduce_broadcast(&prod, b.shape(), kind);
    (ga, gb)
}

/// Extracts channel `ch` as an `(n, 1, h, w)` tensor.
pub fn select_channel<T: Real>(x: &Tensor<T>, ch: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if ch >= s.c {
        return Err(Error::contract(
            "select_channel",
            format!("channel {ch} out of {}", s.c),
        ));
    }
    let mut data = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        data.extend_from_slice(x.plane(n, ch));
    }
    Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), data)
}

pub fn select_channel_backward<T: Real>(input: Shape, ch: usize, grad: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(input);
    let p = input.plane();
    for n in 0..input.n {
        let start = (n * input.c + ch) * p;
        out.data_mut()[start..start + p].copy_from_slice(&grad.data()[n * p..(n + 1) * p]);
    }
    out
}

/// Mean absolute error.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::contract(
            "l1_loss",
            format!("pred {} vs target {}", pred.shape(), target.shape()),
        ));
    }
    let mut acc = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc += (p - t).abs().as_f64();
    }
    Ok(T::of(acc / pred.len() as f64))
}

/// Subgradient of the mean absolute error; zero at exact ties.
pub fn l1_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::of(pred.len() as f64);
    let mut g = pred.clone();
    for (g, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *g = if *g > t {
            scale
        } else if *g < t {
            -scale
        } else {
            T::zero()
        };
    }
    g
}
