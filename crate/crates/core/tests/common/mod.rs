//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Convex hull of 2-D points, counter-clockwise, no collinear vertices.
fn hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Edges `(normal, offset)` of a polygon containing the origin in its
/// interior, so that the gauge is `max <normal, u> / offset`.
fn facets(poly: &[[f64; 2]]) -> Vec<([f64; 2], f64)> {
    (0..poly.len())
        .map(|k| {
            let a = poly[k];
            let b = poly[(k + 1) % poly.len()];
            let nrm = [b[1] - a[1], a[0] - b[0]];
            (nrm, nrm[0] * a[0] + nrm[1] * a[1])
        })
        .collect()
}

fn golden<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Optimal value of the two-point, one-dimensional group-lasso program by
/// brute force.
///
/// For each angular sector between the lines orthogonal to `(x_i, 1)`, unit
/// directions are sampled on a dense grid and mapped to the prediction they
/// produce with either outer sign. The penalty of a prediction vector `u` is
/// then the gauge of the convex hull of those atoms, and the 2-D objective
/// `|y - u|^2 / 4 + lambda * gauge(u)` is minimized by nested golden-section
/// line searches.
pub fn brute_force_two_point(x: [f64; 2], y: [f64; 2], lambda: f64, per_sector: usize) -> f64 {
    let z = [[x[0], 1.0], [x[1], 1.0]];
    let mut cuts: Vec<f64> = Vec::new();
    for zi in &z {
        // directions orthogonal to z_i
        for s in [1.0, -1.0] {
            cuts.push((s * zi[0]).atan2(-s).rem_euclid(2.0 * PI));
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut atoms = vec![[0.0, 0.0]];
    for k in 0..cuts.len() {
        let a = cuts[k];
        let mut b = cuts[(k + 1) % cuts.len()];
        if b <= a {
            b += 2.0 * PI;
        }
        let mid = 0.5 * (a + b);
        let mask: Vec<bool> = z.iter().map(|zi| zi[0] * mid.cos() + zi[1] * mid.sin() > 0.0).collect();
        for j in 0..=per_sector {
            let phi = a + (b - a) * j as f64 / per_sector as f64;
            let u = [phi.cos(), phi.sin()];
            let p: Vec<f64> = z
                .iter()
                .zip(&mask)
                .map(|(zi, &m)| if m { zi[0] * u[0] + zi[1] * u[1] } else { 0.0 })
                .collect();
            atoms.push([p[0], p[1]]);
            atoms.push([-p[0], -p[1]]);
        }
    }
    let f = facets(&hull(atoms));
    let gauge = |u: [f64; 2]| f.iter().map(|(n, b)| (n[0] * u[0] + n[1] * u[1]) / b).fold(0.0, f64::max);
    let obj = |u: [f64; 2]| ((y[0] - u[0]).powi(2) + (y[1] - u[1]).powi(2)) / 4.0 + lambda * gauge(u);
    let r = 2.0 * (y[0].hypot(y[1])) + 0.1;
    let inner = |u0: f64| golden(|u1| obj([u0, u1]), -r, r, 90).1;
    golden(inner, -r, r, 90).1
}

/// Strict activation masks seen on a dense grid of directions on the unit
/// sphere of `R^{d+1}`, `d <= 2`, for the augmented rows `(x_i, 1)`.
pub fn grid_patterns(x: &Array2<f64>, points: usize) -> BTreeSet<Vec<bool>> {
    let (n, d) = x.dim();
    assert!(d <= 2);
    let dirs: Vec<Vec<f64>> = match d {
        1 => (0..points)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / points as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci lattice
            let ga = PI * (3.0 - 5f64.sqrt());
            (0..points)
                .map(|k| {
                    let zc = 1.0 - 2.0 * (k as f64 + 0.5) / points as f64;
                    let rr = (1.0 - zc * zc).sqrt();
                    let t = ga * k as f64;
                    vec![rr * t.cos(), rr * t.sin(), zc]
                })
                .collect()
        }
    };
    let mut out = BTreeSet::new();
    for u in dirs {
        let pre: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|j| x[[i, j]] * u[j]).sum::<f64>() + u[d])
            .collect();
        if pre.iter().all(|v| v.abs() > 1e-12) {
            out.insert(pre.iter().map(|&v| v > 0.0).collect());
        }
    }
    out
}

/// Number of regions of a central arrangement of `n` hyperplanes in general
/// position in `R^k`.
pub fn generic_region_count(n: usize, k: usize) -> usize {
    let binom = |a: usize, b: usize| -> usize {
        if b > a {
            return 0;
        }
        (0..b).fold(1usize, |acc, i| acc * (a - i) / (i + 1))
    };
    2 * (0..k).map(|i| binom(n - 1, i)).sum::<usize>()
}

/// Points uniform in `[-1, 1]^d`.
pub fn uniform_design(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
}

pub fn gaussian_vector(n: usize, seed: u64) -> Array1<f64> {
    let mut r = rng(seed);
    Array1::from_shape_fn(n, |_| r.sample::<f64, _>(rand_distr::StandardNormal))
}
