//! Small dense kernels on row-major slices.
//!
//! The mixed-model deviance is evaluated tens of thousands of times per fit
//! on blocks of size `R * p` (rarely more than a few dozen), so these work on
//! caller-owned buffers instead of allocating matrices.

/// In-place Cholesky factorization `A = L L'` of a symmetric positive
/// definite `n x n` matrix. Only the lower triangle of `a` is read; on
/// success it holds `L` and the upper triangle is zeroed.
///
/// Returns `log det A`, or `None` when a pivot is not strictly positive.
pub fn cholesky(a: &mut [f64], n: usize) -> Option<f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut logdet = 0.0;
    for j in 0..n {
        let rj = &a[j * n..j * n + j];
        let d = a[j * n + j] - dot(rj, rj);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        logdet += 2.0 * ljj.ln();
        for i in (j + 1)..n {
            let s = a[i * n + j] - dot(&a[i * n..i * n + j], &a[j * n..j * n + j]);
            a[i * n + j] = s / ljj;
        }
        a[j * n + j + 1..(j + 1) * n].iter_mut().for_each(|v| *v = 0.0);
    }
    Some(logdet)
}

/// Solves `L x = b` in place.
pub fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L X = B` in place for a row-major `n x m` right-hand side.
pub fn solve_lower_multi(l: &[f64], n: usize, b: &mut [f64], m: usize) {
    for i in 0..n {
        let (done, rest) = b.split_at_mut(i * m);
        let bi = &mut rest[..m];
        for (k, &lik) in l[i * n..i * n + i].iter().enumerate() {
            if lik != 0.0 {
                for (x, y) in bi.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                    *x -= lik * y;
                }
            }
        }
        let inv = 1.0 / l[i * n + i];
        bi.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Solves `L' x = b` in place.
pub fn solve_upper_transposed(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `A x = b` given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    solve_lower(l, n, b);
    solve_upper_transposed(l, n, b);
}

/// Inverse of `A` from its Cholesky factor.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        cholesky_solve(l, n, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // symmetrize away rounding
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    inv
}

/// Copies the rows/columns `keep` of a square `n x n` matrix.
pub fn submatrix(a: &[f64], n: usize, keep: &[usize]) -> Vec<f64> {
    let m = keep.len();
    let mut out = vec![0.0; m * m];
    for (i, &ki) in keep.iter().enumerate() {
        for (j, &kj) in keep.iter().enumerate() {
            out[i * m + j] = a[ki * n + kj];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
