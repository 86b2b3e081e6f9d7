//! Euclidean projection onto polyhedral cones `{u : s_j <x_j, u> >= 0}`.
//!
//! The constraint normals are rows of a design matrix with a per-row sign, so
//! the cone of an activation pattern never has to be materialized. A primal
//! active-set method is used: the origin is always feasible, the dimension is
//! small, and the working set never exceeds the ambient dimension.

use ndarray::ArrayView2;

use crate::scalar::{dot, norm2, Scalar};

/// Orthonormal basis (modified Gram-Schmidt) of the span of `rows`, dropping
/// numerically dependent rows.
pub(crate) fn orthonormal_basis<T: Scalar>(rows: &[Vec<T>], rel_tol: T) -> Vec<Vec<T>> {
    let mut basis: Vec<Vec<T>> = Vec::new();
    for r in rows {
        let scale = norm2(r);
        if scale == T::zero() {
            continue;
        }
        let mut v = r.clone();
        // two passes for stability
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(vi, &qi)| *vi -= c * qi);
            }
        }
        let nv = norm2(&v);
        if nv > rel_tol * scale {
            v.iter_mut().for_each(|vi| *vi /= nv);
            basis.push(v);
        }
    }
    basis
}

/// Projects `v` onto `{u : s_j <x_j, u> >= 0 for j in subset}`.
///
/// `signs[j]` flips row `j` of `design`; `subset == None` uses every row.
pub fn project_onto_cone<T: Scalar>(
    design: ArrayView2<T>,
    signs: &[T],
    subset: Option<&[usize]>,
    v: &[T],
) -> Vec<T> {
    let dim = v.len();
    let all: Vec<usize>;
    let idx: &[usize] = match subset {
        Some(s) => s,
        None => {
            all = (0..design.nrows()).collect();
            &all
        }
    };
    let row = |j: usize| -> Vec<T> {
        let s = signs[j];
        design.row(j).iter().map(|&x| s * x).collect()
    };
    let rows: Vec<Vec<T>> = idx.iter().map(|&j| row(j)).collect();
    let row_norms: Vec<T> = rows.iter().map(|r| norm2(r)).collect();
    let vn = norm2(v);
    let feas_tol = T::epsilon() * T::lit(16.0);

    if rows
        .iter()
        .zip(&row_norms)
        .all(|(r, &rn)| dot(r, v) >= -feas_tol * rn * vn)
    {
        return v.to_vec();
    }

    let mut u = vec![T::zero(); dim];
    let mut working: Vec<usize> = Vec::new();
    let max_iter = 8 * (rows.len() + dim) + 16;
    let step_tol = T::epsilon().sqrt() * (T::one() + vn);

    for _ in 0..max_iter {
        let (target, lambdas) = equality_projection(&rows, &working, v);
        let dir: Vec<T> = target.iter().zip(&u).map(|(&t, &ui)| t - ui).collect();
        if norm2(&dir) <= step_tol {
            u = target;
            // multipliers of u - v = sum_W lambda_j a_j must be nonnegative
            let (pos, most_negative) = lambdas
                .iter()
                .enumerate()
                .fold((None, T::zero()), |(arg, best), (k, &l)| {
                    if l < best {
                        (Some(k), l)
                    } else {
                        (arg, best)
                    }
                });
            let drop_tol = T::epsilon().sqrt() * (T::one() + vn);
            match pos {
                Some(k) if most_negative < -drop_tol => {
                    working.remove(k);
                }
                _ => return u,
            }
            continue;
        }
        let mut alpha = T::one();
        let mut blocking = None;
        for (k, r) in rows.iter().enumerate() {
            if working.contains(&k) {
                continue;
            }
            let ad = dot(r, &dir);
            if ad < T::zero() {
                let au = dot(r, &u).max(T::zero());
                let t = au / -ad;
                if t < alpha {
                    alpha = t;
                    blocking = Some(k);
                }
            }
        }
        u.iter_mut()
            .zip(&dir)
            .for_each(|(ui, &di)| *ui += alpha * di);
        if let Some(k) = blocking {
            if working.len() < dim {
                working.push(k);
            }
        }
    }
    u
}

/// Projection of `v` onto `{u : <a_j, u> = 0, j in working}` together with
/// the multipliers `lambda` of `u - v = sum_j lambda_j a_j`.
fn equality_projection<T: Scalar>(
    rows: &[Vec<T>],
    working: &[usize],
    v: &[T],
) -> (Vec<T>, Vec<T>) {
    if working.is_empty() {
        return (v.to_vec(), Vec::new());
    }
    let k = working.len();
    let full_rank = k == v.len();
    // Gram system G mu = A v, u = v - A^T mu, lambda = -mu
    let mut g = vec![T::zero(); k * k];
    let mut rhs = vec![T::zero(); k];
    for (i, &wi) in working.iter().enumerate() {
        rhs[i] = dot(&rows[wi], v);
        for (j, &wj) in working.iter().enumerate() {
            g[i * k + j] = dot(&rows[wi], &rows[wj]);
        }
    }
    let mu = crate::linalg::solve_spd_small(&mut g, &rhs, k);
    let mut u = v.to_vec();
    if full_rank {
        u.iter_mut().for_each(|ui| *ui = T::zero());
    } else {
        for (i, &wi) in working.iter().enumerate() {
            u.iter_mut()
                .zip(&rows[wi])
                .for_each(|(ui, &ai)| *ui -= mu[i] * ai);
        }
    }
    (u, mu.into_iter().map(|m| -m).collect())
}
