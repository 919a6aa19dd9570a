//! Dense row-major kernels used by the encoder, with their backward passes.

use super::params::{LayerNorm, Linear};
use super::real::Real;

/// `x (rows×in) · W (in×out) + b`.
pub fn linear<F: Real>(x: &[F], rows: usize, lin: &Linear<F>) -> Vec<F> {
    let (din, dout) = (lin.in_dim, lin.out_dim);
    debug_assert_eq!(x.len(), rows * din);
    let mut y = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        y.extend_from_slice(&lin.bias);
        let yr = &mut y[r * dout..(r + 1) * dout];
        for (i, &xi) in x[r * din..(r + 1) * din].iter().enumerate() {
            if xi == F::zero() {
                continue;
            }
            let wrow = &lin.weight[i * dout..(i + 1) * dout];
            for (yj, &wij) in yr.iter_mut().zip(wrow) {
                *yj += xi * wij;
            }
        }
    }
    y
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` into `grad` and returns `dx = dy Wᵀ`.
pub fn linear_backward<F: Real>(
    x: &[F],
    rows: usize,
    lin: &Linear<F>,
    dy: &[F],
    grad: &mut Linear<F>,
) -> Vec<F> {
    let (din, dout) = (lin.in_dim, lin.out_dim);
    let mut dx = vec![F::zero(); rows * din];
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for (gb, &d) in grad.bias.iter_mut().zip(dyr) {
            *gb += d;
        }
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for i in 0..din {
            let wrow = &lin.weight[i * dout..(i + 1) * dout];
            let grow = &mut grad.weight[i * dout..(i + 1) * dout];
            let xi = xr[i];
            let mut acc = F::zero();
            for j in 0..dout {
                grow[j] += xi * dyr[j];
                acc += dyr[j] * wrow[j];
            }
            dxr[i] = acc;
        }
    }
    dx
}

/// Saved normalized values and reciprocal std per row.
#[derive(Clone, Debug)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm<F: Real>(x: &[F], rows: usize, ln: &LayerNorm<F>, eps: F) -> (Vec<F>, NormCache<F>) {
    let d = ln.gamma.len();
    let n = F::from_usize(d).unwrap();
    let mut y = vec![F::zero(); rows * d];
    let mut xhat = vec![F::zero(); rows * d];
    let mut rstd = vec![F::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = ln.gamma[j] * h + ln.beta[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Real>(
    cache: &NormCache<F>,
    ln: &LayerNorm<F>,
    dy: &[F],
    grad: &mut LayerNorm<F>,
) -> Vec<F> {
    let d = ln.gamma.len();
    let rows = cache.rstd.len();
    let n = F::from_usize(d).unwrap();
    let mut dx = vec![F::zero(); rows * d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_dxh = F::zero();
        let mut mean_dxh_xh = F::zero();
        for j in 0..d {
            grad.gamma[j] += dyr[j] * xh[j];
            grad.beta[j] += dyr[j];
            let dxh = dyr[j] * ln.gamma[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        for j in 0..d {
            let dxh = dyr[j] * ln.gamma[j];
            dx[r * d + j] = cache.rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x)
}

/// Max-subtracted softmax in place.
pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
