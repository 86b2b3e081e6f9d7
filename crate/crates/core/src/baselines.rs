//! Random-feature ridge regression with frozen ReLU features
//! `x -> (1/sqrt m) sum_k a_k relu(<w_k, (x, 1)>)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{input_err, Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::network::{augment, NetworkParams};
use crate::scalar::{relu, Scalar};
use crate::synthetic::{rng_for, sample_ball, RegressionDataset};
use crate::trainer::mean_and_stderr;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureModel<T> {
    /// `m x (d+1)` frozen feature weights.
    pub w: Array2<T>,
    pub a: Array1<T>,
    pub lambda: T,
    /// `1/sqrt(m)`.
    pub scale: T,
}

/// `m` feature rows uniform on the unit sphere of `R^{d+1}`.
pub fn sample_features<T: Scalar>(d: usize, m: usize, seed: u64) -> Array2<T> {
    let mut rng = rng_for(seed);
    let mut w = Array2::zeros((m, d + 1));
    for mut row in w.rows_mut() {
        loop {
            let u = sample_ball::<f64, _>(&mut rng, 1, d + 1);
            let n = u.row(0).dot(&u.row(0)).sqrt();
            if n > 1e-12 {
                row.assign(&u.row(0).mapv(|v| T::lit(v / n)));
                break;
            }
        }
    }
    w
}

/// `n x m` feature matrix `relu(X W^T) / sqrt(m)`.
pub fn feature_matrix<T: Scalar>(w: ArrayView2<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    if x.ncols() + 1 != w.ncols() {
        return Err(Error::Dimension {
            expected: w.ncols() - 1,
            got: x.ncols(),
        });
    }
    let scale = T::one() / T::from_usize_lossy(w.nrows().max(1)).sqrt();
    let mut f = augment(x).dot(&w.t());
    f.mapv_inplace(|v| relu(v) * scale);
    Ok(f)
}

/// `K_m(x, x') = (1/m) sum_k relu(<w_k, x>) relu(<w_k, x'>)`.
pub fn kernel<T: Scalar>(w: ArrayView2<T>, x1: ArrayView2<T>, x2: ArrayView2<T>) -> Result<Array2<T>> {
    let f1 = feature_matrix(w, x1)?;
    let f2 = feature_matrix(w, x2)?;
    Ok(f1.dot(&f2.t()))
}

fn check_fit_inputs<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return input_err("lambda must be positive");
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.nrows() == 0 {
        return input_err("no training data");
    }
    Ok(())
}

/// `a = (F^T F + n lambda I)^{-1} F^T y`.
pub fn fit_feature_space<T: Scalar>(
    w: ArrayView2<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
) -> Result<Array1<T>> {
    check_fit_inputs(x, y, lambda)?;
    let f = feature_matrix(w, x)?;
    let nl = T::from_usize_lossy(x.nrows()) * lambda;
    let mut g = f.t().dot(&f);
    g.diag_mut().mapv_inplace(|v| v + nl);
    let l = cholesky(g.view())?;
    Ok(cholesky_solve(l.view(), &f.t().dot(&y)))
}

/// `a = F^T (F F^T + n lambda I)^{-1} y`.
pub fn fit_kernel_space<T: Scalar>(
    w: ArrayView2<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
) -> Result<Array1<T>> {
    check_fit_inputs(x, y, lambda)?;
    let f = feature_matrix(w, x)?;
    let nl = T::from_usize_lossy(x.nrows()) * lambda;
    let mut k = f.dot(&f.t());
    k.diag_mut().mapv_inplace(|v| v + nl);
    let l = cholesky(k.view())?;
    let alpha = cholesky_solve(l.view(), &y.to_owned());
    Ok(f.t().dot(&alpha))
}

/// Ridge fit on fixed features, solving in whichever space is smaller.
pub fn fit_with_features<T: Scalar>(
    w: Array2<T>,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: T,
) -> Result<RandomFeatureModel<T>> {
    let a = if w.nrows() < x.nrows() {
        fit_feature_space(w.view(), x, y, lambda)?
    } else {
        fit_kernel_space(w.view(), x, y, lambda)?
    };
    let scale = T::one() / T::from_usize_lossy(w.nrows().max(1)).sqrt();
    Ok(RandomFeatureModel { w, a, lambda, scale })
}

/// Draws `m` features with `seed` and fits ridge coefficients.
pub fn rf_fit<T: Scalar>(
    data: &RegressionDataset<T>,
    m: usize,
    lambda: T,
    seed: u64,
) -> Result<RandomFeatureModel<T>> {
    if m == 0 {
        return input_err("need at least one feature");
    }
    let w = sample_features(data.d(), m, seed);
    fit_with_features(w, data.x.view(), data.y.view(), lambda)
}

impl<T: Scalar> RandomFeatureModel<T> {
    pub fn input_dim(&self) -> usize {
        self.w.ncols() - 1
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        Ok(feature_matrix(self.w.view(), x)?.dot(&self.a))
    }

    /// The same predictor as an explicit network.
    pub fn to_network(&self) -> NetworkParams<T> {
        NetworkParams {
            w: self.w.clone(),
            a: self.a.mapv(|v| v * self.scale),
            c: T::zero(),
        }
    }
}

/// Monte-Carlo `E (model(X) - target(X))^2` over `X ~ Uniform(ball)`.
pub fn rf_excess_risk<T: Scalar>(
    model: &RandomFeatureModel<T>,
    target: &NetworkParams<T>,
    n_test: usize,
    seed: u64,
) -> Result<T> {
    let d = target.input_dim();
    if model.input_dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: model.input_dim(),
        });
    }
    if n_test == 0 {
        return input_err("n_test must be positive");
    }
    let mut rng = rng_for(seed);
    let x = sample_ball::<T, _>(&mut rng, n_test, d);
    let mut sq = Array1::zeros(n_test);
    // chunk to bound the n_test x m feature buffer
    let chunk = (1 << 20) / model.w.nrows().max(1) + 1;
    for (xs, mut out) in x
        .axis_chunks_iter(Axis(0), chunk)
        .zip(sq.axis_chunks_iter_mut(Axis(0), chunk))
    {
        let diff = model.predict(xs)? - target.forward_batch(xs)?;
        out.assign(&diff.mapv(|v| v * v));
    }
    Ok(mean_and_stderr(&sq).0)
}
