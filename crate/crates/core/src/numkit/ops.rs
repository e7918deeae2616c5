//! Forward primitives and their analytic vector-Jacobian products.
//!
//! Every function here is pure. The tape in [`super::tape`] stitches them
//! together; the same functions are public so they can be checked in
//! isolation against brute-force oracles.

use super::{NumError, Tensor};

pub(crate) fn shape_err(op: &'static str, msg: impl Into<String>) -> NumError {
    NumError::Shape { op, msg: msg.into() }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// Dense products. All matrices are row-major.

/// `a[m,k] · b[n,k]ᵀ -> [m,n]`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(ar, br);
        }
    }
}

/// `a[m,k] · b[k,n] -> [m,n]` (accumulates)
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a[k,m]ᵀ · b[k,n] -> [m,n]` (accumulates)
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// ---------------------------------------------------------------------------
// Gated linear unit over the leading (channel) axis.

pub fn glu(x: &Tensor) -> Result<Tensor, NumError> {
    let (half, inner) = glu_dims(x)?;
    let d = x.data();
    let mut out = Vec::with_capacity(half * inner);
    for i in 0..half * inner {
        out.push(d[i] * sigmoid_scalar(d[half * inner + i]));
    }
    let mut shape = x.shape().to_vec();
    shape[0] = half;
    Tensor::new(shape, out)
}

pub fn glu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor, NumError> {
    let (half, inner) = glu_dims(x)?;
    let d = x.data();
    let g = dy.data();
    let mut dx = vec![0.0; d.len()];
    let n = half * inner;
    for i in 0..n {
        let s = sigmoid_scalar(d[n + i]);
        dx[i] = g[i] * s;
        dx[n + i] = g[i] * d[i] * s * (1.0 - s);
    }
    Tensor::new(x.shape().to_vec(), dx)
}

fn glu_dims(x: &Tensor) -> Result<(usize, usize), NumError> {
    if x.rank() == 0 {
        return Err(shape_err("glu", "input has no channel axis"));
    }
    let c = x.dim(0);
    if c % 2 != 0 {
        return Err(shape_err("glu", format!("channel count {c} is odd")));
    }
    let inner: usize = x.shape()[1..].iter().product();
    Ok((c / 2, inner))
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation with "same" zero padding.

struct ConvDims {
    c_in: usize,
    c_out: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
}

fn conv_dims(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<ConvDims, NumError> {
    if x.rank() != 3 || w.rank() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("expected x[C,T,F] and w[Co,Ci,kT,kF], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    }
    let (c_in, t, f) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, wc, kt, kf) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if wc != c_in {
        return Err(shape_err("conv2d", format!("input has {c_in} channels, kernel expects {wc}")));
    }
    if kt % 2 == 0 || kf % 2 == 0 {
        return Err(shape_err("conv2d", format!("kernel {kt}x{kf} must have odd sides")));
    }
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(shape_err("conv2d", format!("bias shape {:?} != [{c_out}]", b.shape())));
        }
    }
    Ok(ConvDims { c_in, c_out, t, f, kt, kf })
}

/// Visits every (kernel tap, output row) pair. The callback receives
/// `(tap index, output row, input row, output column start, input column
/// start, span length)`.
#[inline]
fn for_each_tap(
    d: &ConvDims,
    mut visit: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let (pt, pf) = (d.kt / 2, d.kf / 2);
    for dt in 0..d.kt {
        for df in 0..d.kf {
            // output column range whose input column f + df - pf is in [0, F)
            let f_lo = pf.saturating_sub(df);
            let f_hi = (d.f + pf).saturating_sub(df).min(d.f);
            if f_lo >= f_hi {
                continue;
            }
            let t_lo = pt.saturating_sub(dt);
            let t_hi = (d.t + pt).saturating_sub(dt).min(d.t);
            for t in t_lo..t_hi {
                visit(dt * d.kf + df, t, t + dt - pt, f_lo, f_lo + df - pf, f_hi - f_lo);
            }
        }
    }
}

/// Unfolds `x[C,T,F]` into `[C·kT·kF, T·F]`; row `(c, tap)` holds the input
/// plane shifted by that tap, zero outside the borders.
fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let plane = d.t * d.f;
    let taps = d.kt * d.kf;
    let mut cols = vec![0.0; d.c_in * taps * plane];
    for ci in 0..d.c_in {
        let xplane = &x[ci * plane..(ci + 1) * plane];
        for_each_tap(d, |tap, t, ti, f_lo, fi_lo, len| {
            let row = (ci * taps + tap) * plane;
            cols[row + t * d.f + f_lo..row + t * d.f + f_lo + len]
                .copy_from_slice(&xplane[ti * d.f + fi_lo..ti * d.f + fi_lo + len]);
        });
    }
    cols
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor, NumError> {
    let d = conv_dims(x, w, b)?;
    let plane = d.t * d.f;
    let k = d.c_in * d.kt * d.kf;
    let mut out = vec![0.0; d.c_out * plane];
    if let Some(b) = b {
        for (co, oplane) in out.chunks_exact_mut(plane.max(1)).enumerate() {
            oplane.iter_mut().for_each(|v| *v = b.data()[co]);
        }
    }
    let cols = im2col(x.data(), &d);
    matmul_nn(w.data(), &cols, d.c_out, k, plane, &mut out);
    Tensor::new(vec![d.c_out, d.t, d.f], out)
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor), NumError> {
    let d = conv_dims(x, w, None)?;
    let plane = d.t * d.f;
    if dy.shape() != [d.c_out, d.t, d.f] {
        return Err(shape_err("conv2d_backward", format!("upstream shape {:?}", dy.shape())));
    }
    let taps = d.kt * d.kf;
    let k = d.c_in * taps;
    let gd = dy.data();
    let cols = im2col(x.data(), &d);
    let mut dw = vec![0.0; w.len()];
    matmul_nt(gd, &cols, d.c_out, plane, k, &mut dw);
    let db: Vec<f64> = (0..d.c_out).map(|co| gd[co * plane..(co + 1) * plane].iter().sum()).collect();
    let dx = if need_dx {
        let mut dcols = vec![0.0; k * plane];
        matmul_tn(w.data(), gd, d.c_out, k, plane, &mut dcols);
        let mut dx = vec![0.0; x.len()];
        for ci in 0..d.c_in {
            let dplane = &mut dx[ci * plane..(ci + 1) * plane];
            for_each_tap(&d, |tap, t, ti, f_lo, fi_lo, len| {
                let row = (ci * taps + tap) * plane + t * d.f + f_lo;
                for (o, &g) in dplane[ti * d.f + fi_lo..ti * d.f + fi_lo + len].iter_mut().zip(&dcols[row..row + len]) {
                    *o += g;
                }
            });
        }
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::new(w.shape().to_vec(), dw)?, Tensor::new(vec![d.c_out], db)?))
}

// ---------------------------------------------------------------------------
// Max pooling over the two trailing axes of a [C, T, F] tensor. Partial
// windows at the far edges behave as if padded with -inf.

pub fn pooled_len(n: usize, window: usize) -> usize {
    n.div_ceil(window)
}

/// Forward pass returning the output and, per output cell, the flat input
/// index that won (first occurrence in row-major window order on ties).
pub fn max_pool2d_with_argmax(
    x: &Tensor,
    window: (usize, usize),
) -> Result<(Tensor, Vec<usize>), NumError> {
    let (pt, pf) = window;
    if pt == 0 || pf == 0 {
        return Err(NumError::InvalidArgument(format!("pool window {pt}x{pf} has a zero side")));
    }
    if x.rank() != 3 {
        return Err(shape_err("max_pool2d", format!("expected [C,T,F], got {:?}", x.shape())));
    }
    let (c, t, f) = (x.dim(0), x.dim(1), x.dim(2));
    let (to, fo) = (pooled_len(t, pt), pooled_len(f, pf));
    let xd = x.data();
    let mut out = Vec::with_capacity(c * to * fo);
    let mut arg = Vec::with_capacity(c * to * fo);
    for ch in 0..c {
        for ot in 0..to {
            for of in 0..fo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for it in ot * pt..((ot + 1) * pt).min(t) {
                    for jf in of * pf..((of + 1) * pf).min(f) {
                        let idx = (ch * t + it) * f + jf;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, to, fo], out)?, arg))
}

pub fn max_pool2d(x: &Tensor, window: (usize, usize)) -> Result<Tensor, NumError> {
    max_pool2d_with_argmax(x, window).map(|(y, _)| y)
}

pub fn max_pool2d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// [C, T, F] -> [T, C*F] with feature index c*F + f.

pub fn to_sequence(x: &Tensor) -> Result<Tensor, NumError> {
    if x.rank() != 3 {
        return Err(shape_err("to_sequence", format!("expected [C,T,F], got {:?}", x.shape())));
    }
    let (c, t, f) = (x.dim(0), x.dim(1), x.dim(2));
    let xd = x.data();
    let mut out = vec![0.0; c * t * f];
    for ch in 0..c {
        for ti in 0..t {
            let src = &xd[(ch * t + ti) * f..(ch * t + ti + 1) * f];
            out[ti * c * f + ch * f..ti * c * f + (ch + 1) * f].copy_from_slice(src);
        }
    }
    Tensor::new(vec![t, c * f], out)
}

pub fn to_sequence_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let (c, t, f) = (input_shape[0], input_shape[1], input_shape[2]);
    let gd = dy.data();
    let mut dx = vec![0.0; c * t * f];
    for ch in 0..c {
        for ti in 0..t {
            dx[(ch * t + ti) * f..(ch * t + ti + 1) * f]
                .copy_from_slice(&gd[ti * c * f + ch * f..ti * c * f + (ch + 1) * f]);
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("same size")
}

// ---------------------------------------------------------------------------
// Affine map over the trailing axis: x[T, D] · w[O, D]ᵀ + b[O].

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    if x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.shape() != [w.dim(0)] {
        return Err(shape_err(
            "linear",
            format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let (t, d, o) = (x.dim(0), x.dim(1), w.dim(0));
    let mut out = Vec::with_capacity(t * o);
    for _ in 0..t {
        out.extend_from_slice(b.data());
    }
    matmul_nt(x.data(), w.data(), t, d, o, &mut out);
    Tensor::new(vec![t, o], out)
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (t, d, o) = (x.dim(0), x.dim(1), w.dim(0));
    let gd = dy.data();
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; t * d];
        matmul_nn(gd, w.data(), t, o, d, &mut dx);
        Tensor::new(vec![t, d], dx).expect("shape")
    });
    let mut dw = vec![0.0; o * d];
    matmul_tn(gd, x.data(), t, o, d, &mut dw);
    let mut db = vec![0.0; o];
    for row in gd.chunks(o) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    (dx, Tensor::new(vec![o, d], dw).expect("shape"), Tensor::from_vec(db))
}

// ---------------------------------------------------------------------------
// Attention pooling: out[c] = Σ_t softmax_t(logits)[t,c] · probs[t,c].

/// Returns the pooled vector and the softmax weights.
pub fn attention_pool_weights(logits: &Tensor, probs: &Tensor) -> Result<(Tensor, Tensor), NumError> {
    if logits.rank() != 2 || logits.shape() != probs.shape() {
        return Err(shape_err(
            "attention_pool",
            format!("logits {:?} vs probs {:?}", logits.shape(), probs.shape()),
        ));
    }
    let (t, c) = (logits.dim(0), logits.dim(1));
    if t == 0 {
        return Err(shape_err("attention_pool", "no frames to pool"));
    }
    let ld = logits.data();
    let pd = probs.data();
    let mut weights = vec![0.0; t * c];
    let mut out = vec![0.0; c];
    for k in 0..c {
        let max = (0..t).map(|i| ld[i * c + k]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..t {
            let e = (ld[i * c + k] - max).exp();
            weights[i * c + k] = e;
            z += e;
        }
        for i in 0..t {
            weights[i * c + k] /= z;
            out[k] += weights[i * c + k] * pd[i * c + k];
        }
    }
    Ok((Tensor::from_vec(out), Tensor::new(vec![t, c], weights)?))
}

/// Returns `(d_logits, d_probs)`.
pub fn attention_pool_backward(
    weights: &Tensor,
    probs: &Tensor,
    pooled: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor) {
    let (t, c) = (weights.dim(0), weights.dim(1));
    let wd = weights.data();
    let pd = probs.data();
    let mut dl = vec![0.0; t * c];
    let mut dp = vec![0.0; t * c];
    for i in 0..t {
        for k in 0..c {
            let g = dy.data()[k];
            let w = wd[i * c + k];
            dp[i * c + k] = w * g;
            dl[i * c + k] = w * g * (pd[i * c + k] - pooled.data()[k]);
        }
    }
    (
        Tensor::new(vec![t, c], dl).expect("shape"),
        Tensor::new(vec![t, c], dp).expect("shape"),
    )
}

// ---------------------------------------------------------------------------
// Reductions used by the objective.

pub const PROB_CLAMP: f64 = 1e-7;

/// Sum of element-wise binary cross-entropy with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce_sum(pred: &Tensor, target: &Tensor) -> Result<f64, NumError> {
    if pred.shape() != target.shape() {
        return Err(shape_err("bce", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| bce_term(p, y))
        .sum())
}

#[inline]
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn bce_sum_backward(pred: &Tensor, target: &Tensor, g: f64) -> Tensor {
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                0.0
            } else {
                g * (p - y) / (p * (1.0 - p))
            }
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data).expect("shape")
}

pub fn sq_err_sum(pred: &Tensor, target: &Tensor) -> Result<f64, NumError> {
    if pred.shape() != target.shape() {
        return Err(shape_err("sq_err", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn sq_err_sum_backward(pred: &Tensor, target: &Tensor, g: f64) -> Tensor {
    let data = pred.data().iter().zip(target.data()).map(|(a, b)| 2.0 * g * (a - b)).collect();
    Tensor::new(pred.shape().to_vec(), data).expect("shape")
}
