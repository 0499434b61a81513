//! Dense matrix kernels used by the tape.
//!
//! Each output element is accumulated over the inner dimension in
//! ascending order on a single thread, so the row-parallel variants are
//! bitwise identical to the sequential ones.

use crate::parallel::{for_each_row, Execution};

/// Below this many multiply-adds the thread hand-off costs more than it saves.
pub const PAR_THRESHOLD: usize = 1 << 15;

fn policy(work: usize) -> Execution {
    if work >= PAR_THRESHOLD {
        Execution::default()
    } else {
        Execution::Sequential
    }
}

/// `a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_with(policy(m * k * n), a, b, m, k, n)
}

/// `a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_nt_with(policy(m * k * n), a, b, m, k, n)
}

/// `a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_tn_with(policy(m * k * n), a, b, m, k, n)
}

pub fn matmul_with(
    exec: Execution,
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_each_row(exec, &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

pub fn matmul_nt_with(
    exec: Execution,
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for_each_row(exec, &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o = a_row.iter().zip(b_row).fold(0.0, |s, (x, y)| s + x * y);
        }
    });
    out
}

pub fn matmul_tn_with(
    exec: Execution,
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_each_row(exec, &mut out, n, |i, row| {
        for p in 0..k {
            let av = a[p * m + i];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
