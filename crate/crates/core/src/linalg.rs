//! Small dense linear algebra kernels.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solves `G x = b` for a small symmetric positive (semi)definite `G`
/// stored row-major in `g` (overwritten). Tiny pivots are regularized so the
/// routine never fails; callers only use it on well-posed systems.
pub(crate) fn solve_spd_small<T: Scalar>(g: &mut [T], b: &[T], k: usize) -> Vec<T> {
    let scale = (0..k).map(|i| g[i * k + i]).fold(T::zero(), T::max);
    let floor = scale * T::epsilon() * T::lit(64.0) + T::min_positive_value();
    for j in 0..k {
        let mut s = g[j * k + j];
        for p in 0..j {
            s -= g[j * k + p] * g[j * k + p];
        }
        let ljj = s.max(floor).sqrt();
        g[j * k + j] = ljj;
        for i in j + 1..k {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= g[i * k + p] * g[j * k + p];
            }
            g[i * k + j] = s / ljj;
        }
    }
    let mut y = b.to_vec();
    for i in 0..k {
        for p in 0..i {
            y[i] = y[i] - g[i * k + p] * y[p];
        }
        y[i] /= g[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            y[i] = y[i] - g[p * k + i] * y[p];
        }
        y[i] /= g[i * k + i];
    }
    y
}

/// Cholesky factor `L` with `A = L L^T`, reporting an error when the matrix
/// is numerically singular. The condition estimate is `(max L_ii / min L_ii)^2`.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut s = a[[j, j]];
        for p in 0..j {
            s -= l[[j, p]] * l[[j, p]];
        }
        if !(s > T::zero()) {
            return Err(Error::IllConditioned {
                condition: f64::INFINITY,
            });
        }
        let ljj = s.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    let diag = l.diag();
    let (lo, hi) = diag
        .iter()
        .fold((T::infinity(), T::zero()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if n > 0 {
        let cond = (hi / lo).powi(2);
        if cond.as_f64() * T::epsilon().as_f64() > 1.0 {
            return Err(Error::IllConditioned {
                condition: cond.as_f64(),
            });
        }
    }
    Ok(l)
}

/// Solves `A x = b` given the Cholesky factor of `A`.
pub fn cholesky_solve<T: Scalar>(l: ArrayView2<T>, b: &Array1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for p in 0..i {
            let v = l[[i, p]] * y[p];
            y[i] -= v;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            let v = l[[p, i]] * y[p];
            y[i] -= v;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, run for at least `min_iter` steps and until the Rayleigh
/// quotient stabilizes.
pub fn power_iteration<T: Scalar>(a: ArrayView2<T>, min_iter: usize) -> T {
    let n = a.nrows();
    if n == 0 {
        return T::zero();
    }
    // deterministic start with no exact symmetry
    let mut v: Array1<T> = (0..n)
        .map(|i| T::one() + T::lit(0.1) * T::lit(((i * 7919) % 101) as f64 / 101.0))
        .collect();
    let mut est = T::zero();
    for it in 0..10_000 {
        let nv = v.dot(&v).sqrt();
        if nv == T::zero() {
            return T::zero();
        }
        v.mapv_inplace(|x| x / nv);
        let av = a.dot(&v);
        let next = v.dot(&av);
        v = av;
        if it >= min_iter && (next - est).abs() <= T::lit(1e-12) * next.abs() {
            return next;
        }
        est = next;
    }
    est
}

/// A unit vector `c` with `V c ~= 0` when the columns of `V` are linearly
/// dependent (relative to `rel_tol`), found by Gaussian elimination with
/// complete pivoting.
pub fn null_vector<T: Scalar>(v: ArrayView2<T>, rel_tol: T) -> Option<Array1<T>> {
    let (rows, cols) = v.dim();
    if cols == 0 {
        return None;
    }
    let mut m = v.to_owned();
    let scale = m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if scale == T::zero() {
        let mut c = Array1::zeros(cols);
        c[0] = T::one();
        return Some(c);
    }
    let mut col_perm: Vec<usize> = (0..cols).collect();
    let mut rank = 0;
    for r in 0..rows.min(cols) {
        let mut best = (r, r, T::zero());
        for i in r..rows {
            for j in r..cols {
                let x = m[[i, j]].abs();
                if x > best.2 {
                    best = (i, j, x);
                }
            }
        }
        if best.2 <= rel_tol * scale {
            break;
        }
        let (pi, pj, _) = best;
        for j in 0..cols {
            m.swap([r, j], [pi, j]);
        }
        for i in 0..rows {
            m.swap([i, r], [i, pj]);
        }
        col_perm.swap(r, pj);
        let piv = m[[r, r]];
        for i in r + 1..rows {
            let f = m[[i, r]] / piv;
            if f != T::zero() {
                for j in r..cols {
                    let v = m[[r, j]];
                    m[[i, j]] -= f * v;
                }
            }
        }
        rank += 1;
    }
    if rank == cols {
        return None;
    }
    // free variable: column `rank` (first non-pivot), back-substitute pivots
    let mut x = vec![T::zero(); cols];
    x[rank] = T::one();
    for r in (0..rank).rev() {
        let mut s = T::zero();
        for j in r + 1..cols {
            s += m[[r, j]] * x[j];
        }
        x[r] = -s / m[[r, r]];
    }
    let mut c = Array1::zeros(cols);
    for (k, &j) in col_perm.iter().enumerate() {
        c[j] = x[k];
    }
    let nc = c.dot(&c).sqrt();
    c.mapv_inplace(|x| x / nc);
    Some(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn small_spd_solve() {
        let mut g = vec![4.0_f64, 2.0, 2.0, 3.0];
        let x = solve_spd_small(&mut g, &[2.0, 1.0], 2);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_round_trip() {
        let a: Array2<f64> = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let l = cholesky(a.view()).unwrap();
        assert!((l.dot(&l.t()) - &a).iter().all(|v| v.abs() < 1e-14));
        let b: Array1<f64> = array![1.0, 2.0, 3.0];
        let x = cholesky_solve(l.view(), &b);
        assert!((a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn cholesky_flags_singular() {
        let a: Array2<f64> = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(cholesky(a.view()), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a: Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        assert!((power_iteration(a.view(), 20) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn null_vector_of_dependent_columns() {
        let v: Array2<f64> = array![[1.0, 2.0, 3.0], [0.0, 1.0, 1.0]];
        let c = null_vector(v.view(), 1e-12).unwrap();
        assert!(v.dot(&c).iter().all(|x| x.abs() < 1e-12));
        let id: Array2<f64> = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(null_vector(id.view(), 1e-12).is_none());
    }
}
