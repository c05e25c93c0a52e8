//! Dense linear algebra helpers: symmetric eigendecomposition (via nalgebra)
//! and blocked Cholesky / triangular solves on ndarray matrices. The blocked
//! kernels route their inner updates through matrix multiplication so the
//! large whitening solves in CCA stay fast.

use crate::error::{Error, Result};
use ndarray::{s, Array1, Array2, ArrayView2};

const BLOCK: usize = 128;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
/// Returns (eigenvalues, eigenvectors-as-columns).
pub fn symmetric_eigen_desc(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Numerical("symmetric_eigen on non-square matrix".into()));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = eig.eigenvectors[(row, src)];
        }
    }
    Ok((values, vectors))
}

/// Flip column signs so the largest-magnitude entry of each column is
/// positive (first occurrence wins on ties). Gives deterministic bases.
pub fn fix_column_signs(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

fn cholesky_unblocked(a: &mut ndarray::ArrayViewMut2<f64>) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "cholesky failed at pivot {j}: {d}"
            )));
        }
        let dj = d.sqrt();
        a[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / dj;
        }
    }
    Ok(())
}

/// Blocked lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Numerical("cholesky on non-square matrix".into()));
    }
    let mut l = a.clone();
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + BLOCK).min(n);
        cholesky_unblocked(&mut l.slice_mut(s![k0..k1, k0..k1]))?;
        if k1 < n {
            // panel solve: L[k1.., k0..k1] <- A[k1.., k0..k1] * L_kk^-T
            let lkk = l.slice(s![k0..k1, k0..k1]).to_owned();
            let panel_t = l.slice(s![k1.., k0..k1]).t().to_owned();
            let solved_t = solve_lower_inplace(&lkk, panel_t)?;
            l.slice_mut(s![k1.., k0..k1]).assign(&solved_t.t());
            // trailing update per block column: A[j0.., j0..j1] -= X[j0-k1..,:] X[j0..j1-k1,:]^T
            let x = l.slice(s![k1.., k0..k1]).to_owned();
            let mut j0 = k1;
            while j0 < n {
                let j1 = (j0 + BLOCK).min(n);
                let upd = x.slice(s![(j0 - k1).., ..]).dot(&x.slice(s![(j0 - k1)..(j1 - k1), ..]).t());
                let mut tgt = l.slice_mut(s![j0.., j0..j1]);
                tgt -= &upd;
                j0 = j1;
            }
        }
        k0 = k1;
    }
    // zero the strict upper triangle (stale input entries)
    for i in 0..n {
        for j in (i + 1)..n {
            l[[i, j]] = 0.0;
        }
    }
    Ok(l)
}

fn solve_lower_unblocked(l: ArrayView2<f64>, b: &mut ndarray::ArrayViewMut2<f64>) {
    let n = l.nrows();
    let m = b.ncols();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                for c in 0..m {
                    let v = b[[k, c]] * lik;
                    b[[i, c]] -= v;
                }
            }
        }
        let d = l[[i, i]];
        for c in 0..m {
            b[[i, c]] /= d;
        }
    }
}

fn solve_lower_inplace(l: &Array2<f64>, mut b: Array2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Numerical("solve_lower: shape mismatch".into()));
    }
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + BLOCK).min(n);
        {
            let lkk = l.slice(s![k0..k1, k0..k1]);
            let mut bk = b.slice_mut(s![k0..k1, ..]);
            solve_lower_unblocked(lkk, &mut bk);
        }
        if k1 < n {
            let upd = l.slice(s![k1.., k0..k1]).dot(&b.slice(s![k0..k1, ..]));
            let mut tail = b.slice_mut(s![k1.., ..]);
            tail -= &upd;
        }
        k0 = k1;
    }
    Ok(b)
}

/// Solve `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    solve_lower_inplace(l, b.clone())
}

/// Solve `L^T X = B` for lower-triangular `L` (backward substitution).
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Numerical("solve_lower_transpose: shape mismatch".into()));
    }
    let mut x = b.clone();
    let nblocks = n.div_ceil(BLOCK);
    for bi in (0..nblocks).rev() {
        let k0 = bi * BLOCK;
        let k1 = (k0 + BLOCK).min(n);
        if k1 < n {
            let upd = l.slice(s![k1.., k0..k1]).t().dot(&x.slice(s![k1.., ..]));
            let mut blk = x.slice_mut(s![k0..k1, ..]);
            blk -= &upd;
        }
        // unblocked backward solve with L_kk^T (upper triangular)
        let lkk = l.slice(s![k0..k1, k0..k1]);
        let mut blk = x.slice_mut(s![k0..k1, ..]);
        let nb = k1 - k0;
        let m = blk.ncols();
        for ii in (0..nb).rev() {
            for k in (ii + 1)..nb {
                let v = lkk[[k, ii]];
                if v != 0.0 {
                    for c in 0..m {
                        let t = blk[[k, c]] * v;
                        blk[[ii, c]] -= t;
                    }
                }
            }
            let d = lkk[[ii, ii]];
            for c in 0..m {
                blk[[ii, c]] /= d;
            }
        }
    }
    Ok(x)
}

/// l2 norm of a slice.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// l2-normalize in place; the zero vector stays zero. Returns the norm.
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
