//! Bidirectional gated recurrent layer.
//!
//! Gate layout inside the stacked `3H` rows is `[reset, update, candidate]`:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use super::ops::{matmul_nn, matmul_nt, matmul_tn, shape_err, sigmoid_scalar};
use super::{NumError, Tensor};

/// Weights of one recurrent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirection {
    /// `[3H, D]`
    pub w_ih: Tensor,
    /// `[3H, H]`
    pub w_hh: Tensor,
    /// `[3H]`
    pub b_ih: Tensor,
    /// `[3H]`
    pub b_hh: Tensor,
}

impl GruDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruDirection {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn input(&self) -> usize {
        self.w_ih.dim(1)
    }

    fn validate(&self) -> Result<(), NumError> {
        let h = self.w_hh.dim(1);
        if self.w_ih.rank() != 2
            || self.w_ih.dim(0) != 3 * h
            || self.w_hh.shape() != [3 * h, h]
            || self.b_ih.shape() != [3 * h]
            || self.b_hh.shape() != [3 * h]
        {
            return Err(shape_err(
                "gru",
                format!(
                    "inconsistent direction shapes: w_ih {:?} w_hh {:?} b_ih {:?} b_hh {:?}",
                    self.w_ih.shape(),
                    self.w_hh.shape(),
                    self.b_ih.shape(),
                    self.b_hh.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// Per-step activations saved for the backward pass of one direction.
#[derive(Clone, Debug)]
pub struct DirectionCache {
    /// Hidden states `h_0 .. h_T` in processing order, each `[H]`.
    hidden: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn` per step.
    gh_n: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BiGruCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

/// Gradients for one direction, same layout as [`GruDirection`].
pub type GruDirectionGrad = GruDirection;

fn run_direction(
    x: &[f64],
    t_len: usize,
    d: usize,
    p: &GruDirection,
    reverse: bool,
    out: &mut [f64],
    out_offset: usize,
    out_stride: usize,
) -> DirectionCache {
    let h = p.hidden();
    let g3 = 3 * h;
    // Input projections for every frame at once.
    let mut gi = Vec::with_capacity(t_len * g3);
    for _ in 0..t_len {
        gi.extend_from_slice(p.b_ih.data());
    }
    matmul_nt(x, p.w_ih.data(), t_len, d, g3, &mut gi);

    let mut cache = DirectionCache {
        hidden: vec![0.0; (t_len + 1) * h],
        r: vec![0.0; t_len * h],
        z: vec![0.0; t_len * h],
        n: vec![0.0; t_len * h],
        gh_n: vec![0.0; t_len * h],
    };
    let mut gh = vec![0.0; g3];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let (prev, rest) = cache.hidden.split_at_mut((step + 1) * h);
        let h_prev = &prev[step * h..];
        let h_next = &mut rest[..h];
        gh.copy_from_slice(p.b_hh.data());
        matmul_nt(h_prev, p.w_hh.data(), 1, h, g3, &mut gh);
        let gi_t = &gi[t * g3..(t + 1) * g3];
        for j in 0..h {
            let r = sigmoid_scalar(gi_t[j] + gh[j]);
            let z = sigmoid_scalar(gi_t[h + j] + gh[h + j]);
            let n = (gi_t[2 * h + j] + r * gh[2 * h + j]).tanh();
            let hn = (1.0 - z) * n + z * h_prev[j];
            cache.r[step * h + j] = r;
            cache.z[step * h + j] = z;
            cache.n[step * h + j] = n;
            cache.gh_n[step * h + j] = gh[2 * h + j];
            h_next[j] = hn;
            out[t * out_stride + out_offset + j] = hn;
        }
    }
    cache
}

fn check_input(x: &Tensor, fwd: &GruDirection, bwd: &GruDirection) -> Result<(usize, usize), NumError> {
    fwd.validate()?;
    bwd.validate()?;
    if x.rank() != 2 {
        return Err(shape_err("bigru", format!("expected [T, D], got {:?}", x.shape())));
    }
    let (t, d) = (x.dim(0), x.dim(1));
    if t == 0 {
        return Err(shape_err("bigru", "sequence has zero frames"));
    }
    if fwd.input() != d || bwd.input() != d || fwd.hidden() != bwd.hidden() {
        return Err(shape_err(
            "bigru",
            format!("input width {d} vs directions ({}, {})", fwd.input(), bwd.input()),
        ));
    }
    Ok((t, d))
}

/// Runs both directions and concatenates them as `[T, 2H]` (forward first).
pub fn bigru_layer_with_cache(
    x: &Tensor,
    fwd: &GruDirection,
    bwd: &GruDirection,
) -> Result<(Tensor, BiGruCache), NumError> {
    let (t, d) = check_input(x, fwd, bwd)?;
    let h = fwd.hidden();
    let mut out = vec![0.0; t * 2 * h];
    let cf = run_direction(x.data(), t, d, fwd, false, &mut out, 0, 2 * h);
    let cb = run_direction(x.data(), t, d, bwd, true, &mut out, h, 2 * h);
    Ok((Tensor::new(vec![t, 2 * h], out)?, BiGruCache { fwd: cf, bwd: cb }))
}

pub fn bigru_layer(x: &Tensor, fwd: &GruDirection, bwd: &GruDirection) -> Result<Tensor, NumError> {
    bigru_layer_with_cache(x, fwd, bwd).map(|(y, _)| y)
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    x: &[f64],
    t_len: usize,
    d: usize,
    p: &GruDirection,
    cache: &DirectionCache,
    reverse: bool,
    dy: &[f64],
    dy_offset: usize,
    dy_stride: usize,
    dx: Option<&mut [f64]>,
) -> GruDirectionGrad {
    let h = p.hidden();
    let g3 = 3 * h;
    let mut grad = GruDirection::zeros(d, h);
    let mut dgi_all = vec![0.0; t_len * g3];
    let mut dh = vec![0.0; h];
    let mut dgh = vec![0.0; g3];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        for j in 0..h {
            dh[j] += dy[t * dy_stride + dy_offset + j];
        }
        let h_prev = &cache.hidden[step * h..(step + 1) * h];
        let dgi = &mut dgi_all[t * g3..(t + 1) * g3];
        let mut dh_prev = vec![0.0; h];
        for j in 0..h {
            let r = cache.r[step * h + j];
            let z = cache.z[step * h + j];
            let n = cache.n[step * h + j];
            let dn = dh[j] * (1.0 - z);
            let dz = dh[j] * (h_prev[j] - n);
            dh_prev[j] = dh[j] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.gh_n[step * h + j];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgi[j] = dr_pre;
            dgi[h + j] = dz_pre;
            dgi[2 * h + j] = dn_pre;
            dgh[j] = dr_pre;
            dgh[h + j] = dz_pre;
            dgh[2 * h + j] = dn_pre * r;
        }
        // recurrent weights
        matmul_tn(&dgh, h_prev, 1, g3, h, grad.w_hh.data_mut());
        for (acc, &g) in grad.b_hh.data_mut().iter_mut().zip(&dgh) {
            *acc += g;
        }
        matmul_nn(&dgh, p.w_hh.data(), 1, g3, h, &mut dh_prev);
        dh.copy_from_slice(&dh_prev);
    }
    matmul_tn(&dgi_all, x, t_len, g3, d, grad.w_ih.data_mut());
    for row in dgi_all.chunks(g3) {
        for (acc, &g) in grad.b_ih.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    if let Some(dx) = dx {
        matmul_nn(&dgi_all, p.w_ih.data(), t_len, g3, d, dx);
    }
    grad
}

/// Returns `(dx, forward-direction grads, backward-direction grads)`.
pub fn bigru_layer_backward(
    x: &Tensor,
    fwd: &GruDirection,
    bwd: &GruDirection,
    cache: &BiGruCache,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, GruDirectionGrad, GruDirectionGrad) {
    let (t, d) = (x.dim(0), x.dim(1));
    let h = fwd.hidden();
    let mut dx = if need_dx { vec![0.0; t * d] } else { Vec::new() };
    let gf = backprop_direction(
        x.data(),
        t,
        d,
        fwd,
        &cache.fwd,
        false,
        dy.data(),
        0,
        2 * h,
        need_dx.then_some(dx.as_mut_slice()),
    );
    let gb = backprop_direction(
        x.data(),
        t,
        d,
        bwd,
        &cache.bwd,
        true,
        dy.data(),
        h,
        2 * h,
        need_dx.then_some(dx.as_mut_slice()),
    );
    let dx = need_dx.then(|| Tensor::new(vec![t, d], dx).expect("shape"));
    (dx, gf, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(d: usize, h: usize, rng: &mut ChaCha8Rng) -> GruDirection {
        let mut r = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap()
        };
        GruDirection {
            w_ih: r(&[3 * h, d]),
            w_hh: r(&[3 * h, h]),
            b_ih: r(&[3 * h]),
            b_hh: r(&[3 * h]),
        }
    }

    /// Hand-unrolled scalar recurrence, written independently of the
    /// vectorised implementation.
    fn oracle(x: &[Vec<f64>], p: &GruDirection) -> Vec<Vec<f64>> {
        let h = p.hidden();
        let d = p.input();
        let wi = |row: usize, col: usize| p.w_ih.data()[row * d + col];
        let wh = |row: usize, col: usize| p.w_hh.data()[row * h + col];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut state = vec![0.0; h];
        let mut outs = Vec::new();
        for xt in x {
            let mut next = vec![0.0; h];
            for j in 0..h {
                let mut ar = p.b_ih.data()[j] + p.b_hh.data()[j];
                let mut az = p.b_ih.data()[h + j] + p.b_hh.data()[h + j];
                let mut an_x = p.b_ih.data()[2 * h + j];
                let mut an_h = p.b_hh.data()[2 * h + j];
                for k in 0..d {
                    ar += wi(j, k) * xt[k];
                    az += wi(h + j, k) * xt[k];
                    an_x += wi(2 * h + j, k) * xt[k];
                }
                for k in 0..h {
                    ar += wh(j, k) * state[k];
                    az += wh(h + j, k) * state[k];
                    an_h += wh(2 * h + j, k) * state[k];
                }
                let r = sig(ar);
                let z = sig(az);
                let n = (an_x + r * an_h).tanh();
                next[j] = (1.0 - z) * n + z * state[j];
            }
            state = next;
            outs.push(state.clone());
        }
        outs
    }

    #[test]
    fn zero_weights_zero_input_gives_zero() {
        let dir = GruDirection::zeros(3, 4);
        let y = bigru_layer(&Tensor::zeros(&[5, 3]), &dir, &dir).unwrap();
        assert_eq!(y.shape(), &[5, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_directions_agree_with_identical_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dir = random_dir(3, 4, &mut rng);
        let x = Tensor::new(vec![1, 3], vec![0.3, -0.7, 0.1]).unwrap();
        let y = bigru_layer(&x, &dir, &dir).unwrap();
        assert_eq!(&y.data()[..4], &y.data()[4..]);
    }

    #[test]
    fn matches_unrolled_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, d, h) = (4, 3, 5);
        let fwd = random_dir(d, h, &mut rng);
        let bwd = random_dir(d, h, &mut rng);
        let rows: Vec<Vec<f64>> =
            (0..t).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = Tensor::new(vec![t, d], rows.concat()).unwrap();
        let y = bigru_layer(&x, &fwd, &bwd).unwrap();
        let of = oracle(&rows, &fwd);
        let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let mut ob = oracle(&rev, &bwd);
        ob.reverse();
        for ti in 0..t {
            for j in 0..h {
                assert!((y.data()[ti * 2 * h + j] - of[ti][j]).abs() <= 1e-10);
                assert!((y.data()[ti * 2 * h + h + j] - ob[ti][j]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let dir = GruDirection::zeros(3, 2);
        assert!(bigru_layer(&Tensor::zeros(&[0, 3]), &dir, &dir).is_err());
    }
}
