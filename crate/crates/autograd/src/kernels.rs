//! Plain loops over row-major slices. Accumulation order is fixed, so results
//! are bit-reproducible for a given input.

use crate::scalar::Scalar;

/// `out[m,n] = a[m,k] · b[k,n]`
pub(crate) fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &x) in row.iter_mut().zip(brow) {
                *o = *o + s * x;
            }
        }
    }
    out
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn matmul_a_bt_acc<F: Scalar>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn matmul_at_b_acc<F: Scalar>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o = *o + s * x;
            }
        }
    }
}

pub(crate) fn transpose<F: Scalar>(a: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[inline]
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `−[t·log σ(z) + (1−t)·log(1−σ(z))]` as `max(z,0) − z·t + log(1 + e^{−|z|})`.
#[inline]
pub fn bce_with_logits<F: Scalar>(z: F, t: F) -> F {
    z.max(F::zero()) - z * t + (-z.abs()).exp().ln_1p()
}
