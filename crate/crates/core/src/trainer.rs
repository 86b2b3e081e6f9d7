//! Forward-Euler (sub)gradient descent on the penalized least-squares
//! objective, in either the scaled-variation or the ridge parametrization.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::network::{augment, NetworkParams};
use crate::scalar::{relu, sign0, Scalar};
use crate::synthetic::{rng_for, sample_ball};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `lambda sum_k |a_k| ||w_k||`.
    ScaledVariation,
    /// `(lambda/2) sum_k (a_k^2 + ||w_k||^2)`.
    Ridge,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" | "scaled_variation" => Ok(Variant::ScaledVariation),
            "ridge" => Ok(Variant::Ridge),
            _ => input_err(format!("unknown variant {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Init<T> {
    /// `width` neurons with rows uniform on the sphere of radius `scale` and
    /// outer weights `+-scale`.
    BalancedRandom { width: usize, seed: u64, scale: f64 },
    Explicit(NetworkParams<T>),
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub variant: Variant,
    pub lambda: T,
    pub step: T,
    pub max_steps: usize,
    pub init: Init<T>,
    /// Stop once the (sub)gradient norm falls to this value; zero disables.
    pub stop_tol: T,
    pub snapshot_every: usize,
    /// Train the output bias `c` as well. Off by default so that trained
    /// objectives stay comparable with the convex program, which has no
    /// intercept.
    pub fit_intercept: bool,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(variant: Variant, lambda: T, step: T, max_steps: usize, init: Init<T>) -> Self {
        Self {
            variant,
            lambda,
            step,
            max_steps,
            init,
            stop_tol: T::zero(),
            snapshot_every: 100,
            fit_intercept: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return input_err("step must be positive");
        }
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return input_err("lambda must be positive");
        }
        if !(self.stop_tol >= T::zero()) {
            return input_err("stop_tol must be nonnegative");
        }
        Ok(())
    }
}

/// Balanced random network: each row uniform on the sphere of radius `scale`
/// in `R^{d+1}` and `a_k = +-scale`.
pub fn balanced_random<T: Scalar>(d: usize, width: usize, seed: u64, scale: f64) -> NetworkParams<T> {
    let mut rng = rng_for(seed);
    let mut w = Array2::zeros((width, d + 1));
    let mut a = Array1::zeros(width);
    for k in 0..width {
        let u = sample_ball::<f64, _>(&mut rng, 1, d + 1);
        // direction from a ball sample; resample the degenerate origin
        let mut u = u.row(0).to_owned();
        let mut n = u.dot(&u).sqrt();
        while n < 1e-12 {
            u = sample_ball::<f64, _>(&mut rng, 1, d + 1).row(0).to_owned();
            n = u.dot(&u).sqrt();
        }
        for j in 0..=d {
            w[[k, j]] = T::lit(scale * u[j] / n);
        }
        a[k] = T::lit(if rng.random_bool(0.5) { scale } else { -scale });
    }
    NetworkParams { w, a, c: T::zero() }.balance()
}

/// `(1/2n) ||y - g(x)||^2 + penalty`.
pub fn objective<T: Scalar>(
    net: &NetworkParams<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
    variant: Variant,
) -> Result<T> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let pred = net.forward_batch(x)?;
    Ok(data_term(&pred, y) + lambda * penalty(net, variant))
}

fn data_term<T: Scalar>(pred: &Array1<T>, y: ArrayView1<T>) -> T {
    let r = &y - pred;
    r.dot(&r) / (T::lit(2.0) * T::from_usize_lossy(y.len()))
}

fn penalty<T: Scalar>(net: &NetworkParams<T>, variant: Variant) -> T {
    match variant {
        Variant::ScaledVariation => net.scaled_variation().value(),
        Variant::Ridge => net.ridge_penalty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub objective: f64,
    pub balance_gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub snapshots: Vec<Snapshot>,
    pub final_net: NetworkParams<T>,
    pub steps: usize,
    /// Largest balance gap over every iterate, not only snapshots.
    pub max_balance_gap: T,
    /// Steps at which the objective rose by more than `1e-10`.
    pub ascents: usize,
    /// Ascents at which some activation or outer-weight sign changed.
    pub kink_ascents: usize,
    pub diverged: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_objective(&self) -> f64 {
        self.snapshots.last().map_or(f64::NAN, |s| s.objective)
    }

    /// `step,objective,balance_gap,grad_norm` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "objective", "balance_gap", "grad_norm"])?;
        for s in &self.snapshots {
            w.write_record([
                s.step.to_string(),
                format!("{:e}", s.objective),
                format!("{:e}", s.balance_gap),
                format!("{:e}", s.grad_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Objective and gradient state at the current iterate.
struct Eval<T> {
    objective: T,
    grad_a: Array1<T>,
    grad_w: Array2<T>,
    grad_c: T,
}

/// Step-by-step trainer; [`train`] drives it to completion.
pub struct Trainer<T> {
    net: NetworkParams<T>,
    xa: Array2<T>,
    y: Array1<T>,
    cfg: TrainConfig<T>,
    steps: usize,
    current: Eval<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(x: ArrayView2<T>, y: ArrayView1<T>, cfg: TrainConfig<T>) -> Result<Self> {
        cfg.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return input_err("training data is empty");
        }
        let d = x.ncols();
        let net = match &cfg.init {
            Init::BalancedRandom { width, seed, scale } => balanced_random(d, *width, *seed, *scale),
            Init::Explicit(net) => net.clone(),
        };
        if net.input_dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: net.input_dim(),
            });
        }
        let xa = augment(x);
        let current = evaluate(&net, xa.view(), y, &cfg);
        Ok(Self {
            net,
            xa,
            y: y.to_owned(),
            cfg,
            steps: 0,
            current,
        })
    }

    pub fn net(&self) -> &NetworkParams<T> {
        &self.net
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn objective(&self) -> T {
        self.current.objective
    }

    pub fn grad_norm(&self) -> T {
        let c = if self.cfg.fit_intercept {
            self.current.grad_c * self.current.grad_c
        } else {
            T::zero()
        };
        (self.current.grad_a.dot(&self.current.grad_a)
            + self.current.grad_w.iter().map(|&v| v * v).sum::<T>()
            + c)
            .sqrt()
    }

    /// One Euler step.
    pub fn step(&mut self) {
        let h = self.cfg.step;
        self.net.a.scaled_add(-h, &self.current.grad_a);
        self.net.w.scaled_add(-h, &self.current.grad_w);
        if self.cfg.fit_intercept {
            self.net.c -= h * self.current.grad_c;
        }
        self.steps += 1;
        self.current = evaluate(&self.net, self.xa.view(), self.y.view(), &self.cfg);
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            step: self.steps,
            objective: self.current.objective.as_f64(),
            balance_gap: self.net.balance_gap().as_f64(),
            grad_norm: self.grad_norm().as_f64(),
        }
    }
}

/// `n x m` matrix of `<w_k, x_i>`.
fn preactivations<T: Scalar>(net: &NetworkParams<T>, xa: ArrayView2<T>) -> Array2<T> {
    let wt = net.w.t().as_standard_layout().into_owned();
    let mut z = Array2::zeros((xa.nrows(), net.width()));
    for (mut zr, xr) in z.rows_mut().into_iter().zip(xa.rows()) {
        for (wj, &xj) in wt.rows().into_iter().zip(xr.iter()) {
            zr.scaled_add(xj, &wj);
        }
    }
    z
}

/// Whether any activation `1[<w_k, x_i> > 0]` or outer-weight sign differs.
fn crossed_kink<T: Scalar>(old: &NetworkParams<T>, new: &NetworkParams<T>, xa: ArrayView2<T>) -> bool {
    if old.a.iter().zip(new.a.iter()).any(|(&u, &v)| sign0(u) != sign0(v)) {
        return true;
    }
    let zo = preactivations(old, xa);
    let zn = preactivations(new, xa);
    zo.iter()
        .zip(zn.iter())
        .any(|(&u, &v)| (u > T::zero()) != (v > T::zero()))
}

fn evaluate<T: Scalar>(
    net: &NetworkParams<T>,
    xa: ArrayView2<T>,
    y: ArrayView1<T>,
    cfg: &TrainConfig<T>,
) -> Eval<T> {
    let n = T::from_usize_lossy(y.len());
    let mut h = preactivations(net, xa);
    h.mapv_inplace(relu);
    let r = &y - &(h.dot(&net.a) + net.c);
    let data = r.dot(&r) / (T::lit(2.0) * n);

    // d/da_k = -(1/n) sum_i r_i relu(z_ik),
    // d/dw_k = -(a_k/n) sum_i r_i 1[z_ik > 0] x_i
    let (m, dim) = net.w.dim();
    let inv = -T::one() / n;
    let mut grad_a = Array1::zeros(m);
    for (hr, &ri) in h.rows().into_iter().zip(r.iter()) {
        grad_a.scaled_add(ri * inv, &hr);
    }
    Zip::from(h.rows_mut()).and(&r).for_each(|mut row, &ri| {
        row.mapv_inplace(|v| if v > T::zero() { ri } else { T::zero() });
    });
    let mut grad_wt = Array2::zeros((dim, m));
    for (hr, xr) in h.rows().into_iter().zip(xa.rows()) {
        for (mut g, &xj) in grad_wt.rows_mut().into_iter().zip(xr.iter()) {
            g.scaled_add(xj, &hr);
        }
    }
    let mut grad_w = grad_wt.reversed_axes().as_standard_layout().into_owned();
    Zip::from(grad_w.rows_mut()).and(&net.a).for_each(|mut row, &ak| {
        let f = ak * inv;
        row.mapv_inplace(|v| v * f);
    });
    let grad_c = -r.sum() / n;

    let lambda = cfg.lambda;
    let pen = match cfg.variant {
        Variant::ScaledVariation => {
            let mut total = T::zero();
            for ((mut gw, ga), (wk, &ak)) in grad_w
                .outer_iter_mut()
                .zip(grad_a.iter_mut())
                .zip(net.w.outer_iter().zip(net.a.iter()))
            {
                let wn = wk.dot(&wk).sqrt();
                total += ak.abs() * wn;
                *ga += lambda * sign0(ak) * wn;
                if wn > T::zero() {
                    gw.scaled_add(lambda * ak.abs() / wn, &wk);
                }
            }
            total
        }
        Variant::Ridge => {
            grad_a.scaled_add(lambda, &net.a);
            grad_w.scaled_add(lambda, &net.w);
            net.ridge_penalty()
        }
    };
    Eval {
        objective: data + lambda * pen,
        grad_a,
        grad_w,
        grad_c,
    }
}

/// Runs the configured number of steps, stopping early on a small gradient
/// or divergence (objective above `1e12` or non-finite).
pub fn train<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, cfg: &TrainConfig<T>) -> Result<Trajectory<T>> {
    let every = cfg.snapshot_every.max(1);
    let mut tr = Trainer::new(x, y, cfg.clone())?;
    let mut snapshots = vec![tr.snapshot()];
    let mut max_gap = tr.net.balance_gap();
    let mut ascents = 0;
    let mut kink_ascents = 0;
    let mut diverged = false;
    let limit = T::lit(1e12);
    while tr.steps < cfg.max_steps {
        if cfg.stop_tol > T::zero() && tr.grad_norm() <= cfg.stop_tol {
            break;
        }
        let before = tr.objective();
        let prev = tr.net.clone();
        tr.step();
        let after = tr.objective();
        if !after.is_finite() || after > limit {
            diverged = true;
            snapshots.push(tr.snapshot());
            break;
        }
        if after > before + T::lit(1e-10) {
            ascents += 1;
            if crossed_kink(&prev, &tr.net, tr.xa.view()) {
                kink_ascents += 1;
            }
        }
        max_gap = max_gap.max(tr.net.balance_gap());
        if tr.steps % every == 0 {
            snapshots.push(tr.snapshot());
        }
    }
    if snapshots.last().map(|s| s.step) != Some(tr.steps) {
        snapshots.push(tr.snapshot());
    }
    Ok(Trajectory {
        snapshots,
        final_net: tr.net,
        steps: tr.steps,
        max_balance_gap: max_gap,
        ascents,
        kink_ascents,
        diverged,
    })
}

/// Monte-Carlo estimate of `E (net(X) - target(X))^2` for
/// `X ~ Uniform(unit ball)`.
pub fn excess_risk<T: Scalar>(
    net: &NetworkParams<T>,
    target: &NetworkParams<T>,
    n_test: usize,
    seed: u64,
) -> Result<T> {
    excess_risk_with_error(net, target, n_test, seed).map(|(m, _)| m)
}

/// [`excess_risk`] together with its Monte-Carlo standard error.
pub fn excess_risk_with_error<T: Scalar>(
    net: &NetworkParams<T>,
    target: &NetworkParams<T>,
    n_test: usize,
    seed: u64,
) -> Result<(T, T)> {
    let d = target.input_dim();
    if net.input_dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: net.input_dim(),
        });
    }
    if n_test == 0 {
        return input_err("n_test must be positive");
    }
    let mut rng = rng_for(seed);
    let x = sample_ball::<T, _>(&mut rng, n_test, d);
    let diff = net.forward_batch(x.view())? - target.forward_batch(x.view())?;
    Ok(mean_and_stderr(&diff.mapv(|v| v * v)))
}

pub(crate) fn mean_and_stderr<T: Scalar>(v: &Array1<T>) -> (T, T) {
    let n = T::from_usize_lossy(v.len());
    let mean = v.sum() / n;
    if v.len() < 2 {
        return (mean, T::zero());
    }
    let var = v.mapv(|x| (x - mean) * (x - mean)).sum() / (n - T::one());
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    fn data() -> (Array2<f64>, Array1<f64>) {
        let mut rng = rng_for(3);
        let x = sample_ball::<f64, _>(&mut rng, 30, 2);
        let y = x.map_axis(Axis(1), |r| (2.0 * r[0]).sin() + r[1]);
        (x, y)
    }

    #[test]
    fn objective_examples() {
        let zero = NetworkParams::<f64>::empty(1, 0.0);
        let x = array![[0.1], [0.2]];
        assert_eq!(
            objective(&zero, x.view(), array![0.0, 0.0].view(), 0.3, Variant::Ridge).unwrap(),
            0.0
        );
        let j = objective(&zero, x.view(), array![2.0, 0.0].view(), 7.0, Variant::ScaledVariation).unwrap();
        assert_eq!(j, 1.0);
    }

    #[test]
    fn balanced_objectives_agree() {
        let (x, y) = data();
        let net = balanced_random::<f64>(2, 10, 1, 0.7);
        let a = objective(&net, x.view(), y.view(), 0.1, Variant::ScaledVariation).unwrap();
        let b = objective(&net, x.view(), y.view(), 0.1, Variant::Ridge).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn balanced_init_shape() {
        let net = balanced_random::<f64>(3, 7, 2, 0.1);
        assert_eq!(net.width(), 7);
        assert!(net.balance_gap() < 1e-15);
        for (row, &a) in net.w.outer_iter().zip(net.a.iter()) {
            assert!((row.dot(&row).sqrt() - 0.1).abs() < 1e-15);
            assert!((a.abs() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = data();
        for variant in [Variant::ScaledVariation, Variant::Ridge] {
            let net = balanced_random::<f64>(2, 4, 5, 0.8);
            let mut cfg = TrainConfig::new(variant, 0.05, 1e-3, 1, Init::Explicit(net.clone()));
            cfg.fit_intercept = true;
            let ev = evaluate(&net, augment(x.view()).view(), y.view(), &cfg);
            let f = |n: &NetworkParams<f64>| objective(n, x.view(), y.view(), 0.05, variant).unwrap();
            let eps = 1e-6;
            for k in 0..4 {
                let mut p = net.clone();
                p.a[k] += eps;
                let mut m = net.clone();
                m.a[k] -= eps;
                assert!(((f(&p) - f(&m)) / (2.0 * eps) - ev.grad_a[k]).abs() < 1e-6);
                for j in 0..3 {
                    let mut p = net.clone();
                    p.w[[k, j]] += eps;
                    let mut m = net.clone();
                    m.w[[k, j]] -= eps;
                    assert!(((f(&p) - f(&m)) / (2.0 * eps) - ev.grad_w[[k, j]]).abs() < 1e-6);
                }
            }
            let mut p = net.clone();
            p.c += eps;
            let mut m = net.clone();
            m.c -= eps;
            assert!(((f(&p) - f(&m)) / (2.0 * eps) - ev.grad_c).abs() < 1e-6);
        }
    }

    #[test]
    fn dead_neurons_stay_dead() {
        let (x, y) = data();
        let mut net = balanced_random::<f64>(2, 3, 5, 0.5);
        net.a[1] = 0.0;
        net.w.row_mut(1).fill(0.0);
        let cfg = TrainConfig::new(Variant::ScaledVariation, 0.01, 1e-2, 200, Init::Explicit(net));
        let tr = train(x.view(), y.view(), &cfg).unwrap();
        assert_eq!(tr.final_net.a[1], 0.0);
        assert!(tr.final_net.w.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_decreases_objective_and_records_snapshots() {
        let (x, y) = data();
        let mut cfg = TrainConfig::new(
            Variant::ScaledVariation,
            0.01,
            0.05,
            500,
            Init::BalancedRandom {
                width: 16,
                seed: 1,
                scale: 0.1,
            },
        );
        cfg.snapshot_every = 50;
        let tr = train(x.view(), y.view(), &cfg).unwrap();
        assert_eq!(tr.snapshots.len(), 11);
        assert!(tr.final_objective() < tr.snapshots[0].objective);
        let exact = objective(&tr.final_net, x.view(), y.view(), 0.01, cfg.variant).unwrap();
        assert_eq!(exact, tr.final_objective());
        assert!(!tr.diverged);
        let again = train(x.view(), y.view(), &cfg).unwrap();
        assert_eq!(again.final_net, tr.final_net);
    }

    #[test]
    fn huge_step_diverges() {
        let (x, y) = data();
        let cfg = TrainConfig::new(
            Variant::Ridge,
            0.01,
            1e3,
            1000,
            Init::BalancedRandom {
                width: 4,
                seed: 1,
                scale: 1.0,
            },
        );
        let tr = train(x.view(), y.view(), &cfg).unwrap();
        assert!(tr.diverged);
    }

    #[test]
    fn risk_examples() {
        let t = balanced_random::<f64>(2, 5, 8, 1.0);
        assert_eq!(excess_risk(&t, &t, 1000, 1).unwrap(), 0.0);
        let mut s = t.clone();
        s.c += 0.3;
        assert!((excess_risk(&s, &t, 1000, 1).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn csv_columns() {
        let (x, y) = data();
        let cfg = TrainConfig::new(
            Variant::Ridge,
            0.01,
            0.01,
            3,
            Init::BalancedRandom {
                width: 2,
                seed: 1,
                scale: 0.1,
            },
        );
        let tr = train(x.view(), y.view(), &cfg).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,objective,balance_gap,grad_norm\n0,"));
        assert_eq!(s.lines().count(), 3);
    }
}
