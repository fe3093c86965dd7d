//! Plain slice kernels shared by the graph operations.
//!
//! Every output element is reduced in a fixed order that does not depend
//! on how many rows are processed together, so dispatching a subset of
//! rows through a kernel yields bit-identical results for those rows.

use crate::numerics::Real;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) {
    for (t, &s) in y.iter_mut().zip(x) {
        *t += alpha * s;
    }
}

/// `[m×k] · [k×n]`
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(row, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `[m×k]ᵀ`-free product `aᵀ · b` for `a: [m×k]`, `b: [m×n]`, giving `[k×n]`.
pub fn matmul_tn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(&mut out[p * n..(p + 1) * n], a[i * k + p], brow);
        }
    }
    out
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`, giving `[m×n]`.
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// Exact GeLU, `x·Φ(x)`.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    x * normal_cdf(x)
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`
#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    normal_cdf(x) + x * normal_pdf(x)
}

#[inline]
pub fn normal_cdf<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    half * (F::one() + (x * F::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn normal_pdf<F: Real>(x: F) -> F {
    let inv_sqrt_2pi = F::lit(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * F::lit(0.5)).exp()
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row<F: Real>(row: &[F], out: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
