//! Fixed-order dense kernels and reductions.
//!
//! Every loop runs in a fixed order with separate multiply and add, so results
//! do not depend on thread count or on CPU feature detection.

use ndarray::{Array2, ArrayView2};

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        s
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Pairwise sum of `f(i)` over `0..n`.
pub fn pairwise_map(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        if hi - lo <= 32 {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// A · B.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    let b = b.as_standard_layout();
    let bs = b.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((n, m));
    {
        let os = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let row = &mut os[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = a[[i, p]];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bs[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
    }
    out
}

/// A · Bᵀ.
pub fn matmul_bt(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    matmul(a, b.t())
}

/// A · Bᵀ by row dot products; faster when A·Bᵀ is small and the rows are long.
pub fn matmul_bt_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (m, k2) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let as_ = a.as_slice().expect("standard layout");
    let bs = b.as_slice().expect("standard layout");
    Array2::from_shape_fn((n, m), |(i, j)| dot(&as_[i * k..(i + 1) * k], &bs[j * k..(j + 1) * k]))
}

/// Aᵀ · B.
pub fn matmul_at(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    matmul(a.t(), b)
}
