//! Cone-constrained group lasso
//!
//! ```text
//! min_beta (1/2n) || Y - sum_i s_i D_i X beta_i ||^2 + lambda sum_i ||beta_i||_2
//!     s.t. beta_i in closure(P_i)
//! ```
//!
//! solved by monotone FISTA with blockwise proximal steps. The cone
//! constraint keeps `D_i X beta_i = relu(X beta_i)` on the training points,
//! which is what makes the program equivalent to the network objective.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::arrangement::{GroupedCoefficients, SignPatternSet, CONE_TOL};
use crate::cone::project_onto_cone;
use crate::error::{input_err, Error, Result};
use crate::linalg::{null_vector, power_iteration};
use crate::scalar::{norm2, Scalar};

#[derive(Debug, Clone)]
pub struct GroupLassoProblem<T> {
    patterns: Arc<SignPatternSet<T>>,
    y: Array1<T>,
    lambda: T,
    /// `p x n` 0/1 activation masks.
    masks: Array2<T>,
}

impl<T: Scalar> GroupLassoProblem<T> {
    pub fn new(patterns: Arc<SignPatternSet<T>>, y: Array1<T>, lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return input_err("lambda must be positive and finite");
        }
        if y.len() != patterns.n() {
            return Err(Error::Dimension {
                expected: patterns.n(),
                got: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) || !patterns.design().iter().all(|v| v.is_finite()) {
            return input_err("responses and design must be finite");
        }
        let p = patterns.len();
        let n = patterns.n();
        let mut masks = Array2::zeros((p, n));
        for (i, m) in patterns.masks().iter().enumerate() {
            for (j, &b) in m.iter().enumerate() {
                if b {
                    masks[[i, j]] = T::one();
                }
            }
        }
        Ok(Self {
            patterns,
            y,
            lambda,
            masks,
        })
    }

    pub fn patterns(&self) -> &Arc<SignPatternSet<T>> {
        &self.patterns
    }

    pub fn y(&self) -> &Array1<T> {
        &self.y
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn check_shape(&self, blocks: ArrayView2<T>) -> Result<()> {
        let want = (self.patterns.num_cones(), self.patterns.dim());
        if blocks.dim() != want {
            return input_err(format!("expected {want:?} blocks, got {:?}", blocks.dim()));
        }
        Ok(())
    }

    /// `sum_i s_i D_i X beta_i`.
    pub fn predict(&self, blocks: ArrayView2<T>) -> Array1<T> {
        let p = self.patterns.len();
        let net = &blocks.slice(ndarray::s![..p, ..]) - &blocks.slice(ndarray::s![p.., ..]);
        // z[j, i] = <x_j, u_i>
        let z = self.patterns.design().dot(&net.t());
        (&z * &self.masks.t()).sum_axis(ndarray::Axis(1))
    }

    /// Rows `(1/n) X^T D_i r` for the `p` base patterns; the negative
    /// gradient of the data term for cone `i` is `outer_sign(i)` times row
    /// `i mod p`.
    fn correlations(&self, residual: &Array1<T>) -> Array2<T> {
        let inv_n = T::one() / T::from_usize_lossy(self.n());
        let weighted = &self.masks * &residual.view().insert_axis(ndarray::Axis(0));
        weighted.dot(&self.patterns.design()) * inv_n
    }

    fn data_term(&self, pred: &Array1<T>) -> T {
        let r = &self.y - pred;
        r.dot(&r) / (T::lit(2.0) * T::from_usize_lossy(self.n()))
    }

    fn penalty(&self, blocks: ArrayView2<T>) -> T {
        self.lambda
            * blocks
                .outer_iter()
                .map(|b| b.dot(&b).sqrt())
                .sum::<T>()
    }

    /// `J^g(beta; lambda)`.
    pub fn objective(&self, beta: &GroupedCoefficients<T>) -> T {
        let pred = self.predict(beta.blocks.view());
        self.data_term(&pred) + self.penalty(beta.blocks.view())
    }

    /// Lipschitz constant of the data-term gradient over all blocks jointly:
    /// the top eigenvalue of `(1/n) sum_i D_i X X^T D_i`.
    pub fn lipschitz(&self) -> T {
        let design = self.patterns.design();
        let gram = design.dot(&design.t());
        let co = self.masks.t().dot(&self.masks);
        let inv_n = T::one() / T::from_usize_lossy(self.n());
        let op = &gram * &co * (T::lit(2.0) * inv_n);
        power_iteration(op.view(), 20)
    }

    fn negative_gradient_block(&self, corr: &Array2<T>, cone: usize) -> Vec<T> {
        let p = self.patterns.len();
        let s = self.patterns.outer_sign(cone);
        corr.row(cone % p).iter().map(|&v| s * v).collect()
    }
}

/// `max(0, 1 - t / ||v||) v`.
pub fn prox_group<T: Scalar>(v: &[T], t: T) -> Vec<T> {
    let nv = norm2(v);
    if nv == T::zero() || nv <= t {
        return vec![T::zero(); v.len()];
    }
    let f = T::one() - t / nv;
    v.iter().map(|&x| f * x).collect()
}

/// Optimality violation of `beta`.
///
/// With `g_i` the negative gradient of the data term for block `i`, a zero
/// block contributes `max(0, ||Pi_C(g_i)|| - lambda)` and a nonzero block the
/// norm of the projection of `g_i - lambda beta_i / ||beta_i||` onto the
/// tangent cone of its constraint set. For blocks strictly inside their cone
/// this is `||g_i - lambda beta_i/||beta_i|| ||`.
pub fn kkt_residual<T: Scalar>(problem: &GroupLassoProblem<T>, beta: &GroupedCoefficients<T>) -> T {
    kkt_by_block(problem, beta).into_iter().fold(T::zero(), T::max)
}

/// Per-block terms of [`kkt_residual`].
pub fn kkt_by_block<T: Scalar>(
    problem: &GroupLassoProblem<T>,
    beta: &GroupedCoefficients<T>,
) -> Vec<T> {
    let pred = problem.predict(beta.blocks.view());
    block_violations(problem, beta.blocks.view(), &pred)
}

fn kkt_from_prediction<T: Scalar>(
    problem: &GroupLassoProblem<T>,
    blocks: ArrayView2<T>,
    pred: &Array1<T>,
) -> T {
    block_violations(problem, blocks, pred)
        .into_iter()
        .fold(T::zero(), T::max)
}

fn block_violations<T: Scalar>(
    problem: &GroupLassoProblem<T>,
    blocks: ArrayView2<T>,
    pred: &Array1<T>,
) -> Vec<T> {
    let residual = problem.y() - pred;
    let corr = problem.correlations(&residual);
    let design = problem.patterns.design();
    let tol = T::lit(CONE_TOL);
    let mut out = Vec::with_capacity(problem.patterns.num_cones());
    for cone in 0..problem.patterns.num_cones() {
        let g = problem.negative_gradient_block(&corr, cone);
        let signs = problem.patterns.cone_signs(cone);
        let viol = block_violation(design, &signs, &g, blocks.row(cone), problem.lambda, tol);
        out.push(viol);
    }
    out
}

fn block_violation<T: Scalar>(
    design: ArrayView2<T>,
    signs: &[T],
    g: &[T],
    b: ndarray::ArrayView1<T>,
    lambda: T,
    tol: T,
) -> T {
    let bn = b.dot(&b).sqrt();
    if bn == T::zero() {
        if norm2(g) <= lambda {
            return T::zero();
        }
        let proj = project_onto_cone(design, signs, None, g);
        return (norm2(&proj) - lambda).max(T::zero());
    }
    let z: Vec<T> = g
        .iter()
        .zip(b.iter())
        .map(|(&gi, &bi)| gi - lambda * bi / bn)
        .collect();
    let active: Vec<usize> = design
        .outer_iter()
        .enumerate()
        .filter(|(_, r)| r.dot(&b).abs() <= tol * r.dot(r).sqrt() * bn)
        .map(|(j, _)| j)
        .collect();
    if active.is_empty() {
        norm2(&z)
    } else {
        norm2(&project_onto_cone(design, signs, Some(&active), &z))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T> {
    /// Target KKT residual.
    pub tol: T,
    pub max_iter: usize,
    /// Iterations between KKT checks.
    pub check_every: usize,
    /// Drop blocks along null directions of the fitted contributions until at
    /// most `n` blocks remain nonzero.
    pub reduce_support: bool,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 200_000,
            check_every: 10,
            reduce_support: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub beta: GroupedCoefficients<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub converged: bool,
    /// Step-size constant actually used (after any backtracking).
    pub lipschitz: T,
}

impl<T: Scalar> SolveReport<T> {
    pub fn nonzero_blocks(&self) -> usize {
        self.beta.nonzero_blocks().len()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Block {
            index: usize,
            sign: f64,
            mask: String,
            beta: Vec<f64>,
        }
        #[derive(Serialize)]
        struct Raw {
            objective: f64,
            kkt_residual: f64,
            iterations: usize,
            converged: bool,
            lipschitz: f64,
            p: usize,
            l21_norm: f64,
            nonzero_blocks: usize,
            blocks: Vec<Block>,
        }
        let pats = &self.beta.patterns;
        let blocks = self
            .beta
            .nonzero_blocks()
            .into_iter()
            .map(|i| Block {
                index: i,
                sign: pats.outer_sign(i).as_f64(),
                mask: pats
                    .mask(i)
                    .iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect(),
                beta: self.beta.block(i).iter().map(|v| v.as_f64()).collect(),
            })
            .collect::<Vec<_>>();
        let raw = Raw {
            objective: self.objective.as_f64(),
            kkt_residual: self.kkt_residual.as_f64(),
            iterations: self.iterations,
            converged: self.converged,
            lipschitz: self.lipschitz.as_f64(),
            p: pats.len(),
            l21_norm: self.beta.l21_norm().as_f64(),
            nonzero_blocks: blocks.len(),
            blocks,
        };
        Ok(crate::json::to_string_pretty(&raw)?)
    }
}

/// FISTA with adaptive (gradient-based) restart, run on a growing working
/// set of blocks. Blocks outside the set stay at zero; after each inner solve
/// the full residual is checked and the worst violators are added.
pub fn solve<T: Scalar>(
    problem: &GroupLassoProblem<T>,
    opts: &SolveOptions<T>,
) -> Result<SolveReport<T>> {
    solve_from(problem, opts, None)
}

/// [`solve`] started from `init` (zero when `None`).
pub fn solve_from<T: Scalar>(
    problem: &GroupLassoProblem<T>,
    opts: &SolveOptions<T>,
    init: Option<&GroupedCoefficients<T>>,
) -> Result<SolveReport<T>> {
    if !(opts.tol > T::zero()) {
        return input_err("tolerance must be positive");
    }
    let pats = problem.patterns.clone();
    let cones = pats.num_cones();
    let dim = pats.dim();

    let mut blocks = match init {
        Some(b) => {
            problem.check_shape(b.blocks.view())?;
            b.blocks.clone()
        }
        None => Array2::zeros((cones, dim)),
    };
    let mut in_set = vec![false; cones];
    let mut iterations = 0;
    let mut lip = T::zero();
    loop {
        let pred = problem.predict(blocks.view());
        let viol = block_violations(problem, blocks.view(), &pred);
        let worst = viol.iter().copied().fold(T::zero(), T::max);
        if worst <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        let mut added = 0;
        for (i, &nz) in blocks
            .outer_iter()
            .map(|r| r.iter().any(|&v| v != T::zero()))
            .collect::<Vec<_>>()
            .iter()
            .enumerate()
        {
            if nz && !in_set[i] {
                in_set[i] = true;
                added += 1;
            }
        }
        let mut violators: Vec<usize> = (0..cones)
            .filter(|&i| !in_set[i] && viol[i] > opts.tol)
            .collect();
        violators.sort_by(|&a, &b| viol[b].partial_cmp(&viol[a]).unwrap_or(std::cmp::Ordering::Equal));
        let batch = pats.n().max(8);
        for &i in violators.iter().take(batch) {
            in_set[i] = true;
            added += 1;
        }
        let set: Vec<usize> = (0..cones).filter(|&i| in_set[i]).collect();
        let sub = Restricted::new(problem, &set);
        let start = sub.gather(&blocks);
        let (out, used, l) = sub.fista(start, opts, opts.max_iter - iterations);
        iterations += used;
        lip = lip.max(l);
        sub.scatter(&out, &mut blocks);
        if added == 0 && used == 0 {
            break;
        }
    }

    let mut beta = GroupedCoefficients::from_blocks(blocks, pats.clone())?;
    if opts.reduce_support {
        reduce_support(&mut beta);
    }
    let pred = problem.predict(beta.blocks.view());
    let objective = problem.data_term(&pred) + problem.penalty(beta.blocks.view());
    let kkt_residual = kkt_from_prediction(problem, beta.blocks.view(), &pred);
    Ok(SolveReport {
        beta,
        objective,
        kkt_residual,
        iterations,
        converged: kkt_residual <= opts.tol,
        lipschitz: lip,
    })
}

/// The problem restricted to a subset of blocks.
struct Restricted<'a, T> {
    problem: &'a GroupLassoProblem<T>,
    cones: Vec<usize>,
    /// `|set| x n`: outer sign times activation mask.
    weights: Array2<T>,
    signs: Vec<Vec<T>>,
}

impl<'a, T: Scalar> Restricted<'a, T> {
    fn new(problem: &'a GroupLassoProblem<T>, cones: &[usize]) -> Self {
        let pats = &problem.patterns;
        let p = pats.len();
        let n = pats.n();
        let mut weights = Array2::zeros((cones.len(), n));
        for (k, &i) in cones.iter().enumerate() {
            let s = pats.outer_sign(i);
            weights.row_mut(k).assign(&(&problem.masks.row(i % p) * s));
        }
        let signs = cones.iter().map(|&i| pats.cone_signs(i)).collect();
        Self {
            problem,
            cones: cones.to_vec(),
            weights,
            signs,
        }
    }

    fn gather(&self, blocks: &Array2<T>) -> Array2<T> {
        blocks.select(ndarray::Axis(0), &self.cones)
    }

    fn scatter(&self, sub: &Array2<T>, blocks: &mut Array2<T>) {
        for (k, &i) in self.cones.iter().enumerate() {
            blocks.row_mut(i).assign(&sub.row(k));
        }
    }

    fn predict(&self, b: &Array2<T>) -> Array1<T> {
        let z = b.dot(&self.problem.patterns.design().t());
        (&z * &self.weights).sum_axis(ndarray::Axis(0))
    }

    /// Negative gradient of the data term, one row per block.
    fn gradient(&self, pred: &Array1<T>) -> Array2<T> {
        let r = self.problem.y() - pred;
        let inv_n = T::one() / T::from_usize_lossy(self.problem.n());
        let w = &self.weights * &r.view().insert_axis(ndarray::Axis(0));
        w.dot(&self.problem.patterns.design()) * inv_n
    }

    fn lipschitz(&self) -> T {
        let design = self.problem.patterns.design();
        let gram = design.dot(&design.t());
        let co = self.weights.t().dot(&self.weights);
        let inv_n = T::one() / T::from_usize_lossy(self.problem.n());
        let op = &gram * &co * inv_n;
        power_iteration(op.view(), 20)
    }

    fn kkt(&self, b: &Array2<T>, pred: &Array1<T>) -> T {
        let g = self.gradient(pred);
        let lambda = self.problem.lambda;
        let design = self.problem.patterns.design();
        let tol = T::lit(CONE_TOL);
        let mut worst = T::zero();
        for k in 0..self.cones.len() {
            let gk = g.row(k).to_vec();
            let bk = b.row(k);
            let v = block_violation(design, &self.signs[k], &gk, bk, lambda, tol);
            worst = worst.max(v);
        }
        worst
    }

    /// Returns the final iterate, iterations used, and the step constant.
    fn fista(&self, start: Array2<T>, opts: &SolveOptions<T>, budget: usize) -> (Array2<T>, usize, T) {
        let (m, dim) = start.dim();
        let mut lip = self.lipschitz() * T::lit(1.05);
        if !(lip > T::zero()) {
            lip = T::one();
        }
        let mut x = start;
        let mut pred_x = self.predict(&x);
        let mut y = x.clone();
        let mut t = T::one();
        let check_every = opts.check_every.max(1);
        let target = opts.tol * T::lit(0.5);
        let mut iterations = 0;
        let mut kkt = self.kkt(&x, &pred_x);
        let design = self.problem.patterns.design();
        while kkt > target && iterations < budget {
            iterations += 1;
            let pred_y = self.predict(&y);
            let g = self.gradient(&pred_y);
            let step = T::one() / lip;
            let thresh = self.problem.lambda * step;
            let v = &y + &(&g * step);
            let mut z = Array2::zeros((m, dim));
            for k in 0..m {
                let vk = v.row(k).to_vec();
                if norm2(&vk) <= thresh {
                    continue;
                }
                let proj = project_onto_cone(design, &self.signs[k], None, &vk);
                z.row_mut(k).assign(&Array1::from(prox_group(&proj, thresh)));
            }
            let pred_z = self.predict(&z);
            let data_z = self.problem.data_term(&pred_z);

            // sufficient decrease of the smooth part; fails only if `lip` is
            // below the true constant, up to rounding
            let data_y = self.problem.data_term(&pred_y);
            let diff = &z - &y;
            let lin = (&g * &diff).sum();
            let model = data_y - lin + lip / T::lit(2.0) * diff.iter().map(|&v| v * v).sum::<T>();
            let slack = T::lit(1e3) * T::epsilon() * (T::one() + data_y.abs());
            if data_z > model + slack {
                lip *= T::lit(2.0);
                continue;
            }

            // gradient restart: drop momentum once it points uphill
            let uphill = ((&y - &z) * (&z - &x)).sum();
            let x_prev = std::mem::replace(&mut x, z);
            pred_x = pred_z;
            if uphill > T::zero() {
                y.assign(&x);
                t = T::one();
            } else {
                let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
                let mom = (t - T::one()) / t_next;
                y = &x + &((&x - &x_prev) * mom);
                t = t_next;
            }
            if iterations % check_every == 0 {
                kkt = self.kkt(&x, &pred_x);
            }
        }
        (x, iterations, lip)
    }
}

/// Removes linear dependence among the fitted contributions
/// `v_i = s_i D_i X beta_i` of nonzero blocks by rescaling blocks along a null
/// direction: fitted values stay fixed, the penalty does not increase, and at
/// least one block vanishes per step. Afterward the support has at most `n`
/// blocks.
pub fn reduce_support<T: Scalar>(beta: &mut GroupedCoefficients<T>) {
    loop {
        let support = beta.nonzero_blocks();
        if support.is_empty() {
            return;
        }
        let v = contributions(beta, &support);
        let c = match null_vector(v.view(), T::lit(1e-10)) {
            Some(c) => c,
            None => return,
        };
        let norms: Vec<T> = support
            .iter()
            .map(|&i| {
                let b = beta.blocks.row(i);
                b.dot(&b).sqrt()
            })
            .collect();
        let slope: T = c.iter().zip(&norms).map(|(&ci, &ni)| ci * ni).sum();
        let c = if slope > T::zero() { c.mapv(|x| -x) } else { c };
        // largest step keeping every scale factor 1 + t c_k nonnegative
        let (hit, t_max) = c.iter().enumerate().filter(|(_, &ck)| ck < T::zero()).fold(
            (None, T::infinity()),
            |(arg, best), (k, &ck)| {
                let t = -T::one() / ck;
                if t < best {
                    (Some(k), t)
                } else {
                    (arg, best)
                }
            },
        );
        let Some(hit) = hit else { return };
        for (k, &i) in support.iter().enumerate() {
            let f = if k == hit {
                T::zero()
            } else {
                (T::one() + t_max * c[k]).max(T::zero())
            };
            let mut row = beta.blocks.row_mut(i);
            row.mapv_inplace(|x| x * f);
        }
    }
}

/// Columns `s_i D_i X beta_i` for the blocks in `support`.
fn contributions<T: Scalar>(beta: &GroupedCoefficients<T>, support: &[usize]) -> Array2<T> {
    let pats = &beta.patterns;
    let mut v = Array2::zeros((pats.n(), support.len()));
    for (k, &i) in support.iter().enumerate() {
        let s = pats.outer_sign(i);
        let z = pats.design().dot(&beta.blocks.row(i));
        for (j, &active) in pats.mask(i).iter().enumerate() {
            if active {
                v[[j, k]] = s * z[j];
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::{enumerate_patterns, EnumerationMode};
    use ndarray::array;

    fn tiny(y: Array1<f64>, lambda: f64) -> GroupLassoProblem<f64> {
        let p = enumerate_patterns(array![[0.5], [-0.5]].view(), EnumerationMode::Exact).unwrap();
        GroupLassoProblem::new(Arc::new(p), y, lambda).unwrap()
    }

    #[test]
    fn prox_group_examples() {
        assert_eq!(prox_group(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
        assert_eq!(prox_group(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
        assert_eq!(prox_group(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(prox_group(&[0.0, 0.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_lambda_rejected() {
        let p = enumerate_patterns(array![[0.5]].view(), EnumerationMode::Exact).unwrap();
        assert!(GroupLassoProblem::new(Arc::new(p), array![1.0], 0.0).is_err());
    }

    #[test]
    fn non_finite_response_rejected() {
        let p = enumerate_patterns(array![[0.5]].view(), EnumerationMode::Exact).unwrap();
        assert!(GroupLassoProblem::new(Arc::new(p), array![f64::NAN], 0.1).is_err());
    }

    #[test]
    fn large_lambda_gives_null_solution() {
        let prob = tiny(array![1.0, 0.0], 10.0);
        let rep = solve(&prob, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.nonzero_blocks(), 0);
        assert!((rep.objective - 0.25).abs() < 1e-15);
        assert_eq!(rep.kkt_residual, 0.0);
    }

    #[test]
    fn tiny_instance_converges() {
        let prob = tiny(array![1.0, 0.0], 0.05);
        let rep = solve(&prob, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "kkt {}", rep.kkt_residual);
        assert!(rep.beta.cone_violations().is_empty());
        assert!(rep.nonzero_blocks() <= 2);
    }

    #[test]
    fn perturbing_an_optimum_raises_the_residual() {
        let prob = tiny(array![1.0, 0.0], 0.05);
        let rep = solve(&prob, &SolveOptions::default()).unwrap();
        let mut b = rep.beta.clone();
        let i = b.nonzero_blocks()[0];
        b.blocks[[i, 0]] += 0.1;
        assert!(kkt_residual(&prob, &b) > 1e-3);
    }
}
