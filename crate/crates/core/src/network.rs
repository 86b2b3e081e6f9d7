//! Finite two-layer ReLU networks `x -> c + sum_k a_k relu(<w_k, (x, 1)>)`.
//!
//! The inner weight row `w_k` carries the neuron bias in its last entry, so
//! the scaled variation `sum_k |a_k| ||w_k||_2` penalizes biases as well. The
//! output bias `c` is never penalized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::arrangement::SignPatternSet;
use crate::error::{input_err, Error, Result};
use crate::scalar::{norm2, relu, Scalar};

/// Neurons whose outer weight or inner-weight norm falls below this value are
/// treated as absent when merging or assigning cones.
pub const ZERO_NEURON_TOL: f64 = 1e-12;

/// Appends a column of ones to an `n x d` design.
pub fn augment<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let (n, d) = x.dim();
    let mut out = Array2::ones((n, d + 1));
    out.slice_mut(ndarray::s![.., ..d]).assign(&x);
    out
}

/// Value of `sum_k |a_k| ||w_k||_2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ScaledVariation<T>(pub T);

impl<T: Scalar> ScaledVariation<T> {
    pub fn value(self) -> T {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    /// `m x (d+1)` inner weights; the last column holds the biases.
    pub w: Array2<T>,
    /// Length-`m` outer weights.
    pub a: Array1<T>,
    /// Output bias.
    pub c: T,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(w: Array2<T>, a: Array1<T>, c: T) -> Result<Self> {
        if w.ncols() == 0 {
            return input_err("inner weights need at least the bias column");
        }
        if w.nrows() != a.len() {
            return Err(Error::Dimension {
                expected: w.nrows(),
                got: a.len(),
            });
        }
        if !w.iter().chain(a.iter()).all(|v| v.is_finite()) || !c.is_finite() {
            return input_err("network parameters must be finite");
        }
        Ok(Self { w, a, c })
    }

    /// Builds a network from `(a_k, w_k)` pairs.
    pub fn from_neurons(d: usize, neurons: &[(T, Vec<T>)], c: T) -> Result<Self> {
        let mut w = Array2::zeros((neurons.len(), d + 1));
        let mut a = Array1::zeros(neurons.len());
        for (k, (ak, wk)) in neurons.iter().enumerate() {
            if wk.len() != d + 1 {
                return Err(Error::Dimension {
                    expected: d + 1,
                    got: wk.len(),
                });
            }
            a[k] = *ak;
            w.row_mut(k).assign(&ArrayView1::from(wk.as_slice()));
        }
        Self::new(w, a, c)
    }

    /// Width-zero network computing the constant `c`.
    pub fn empty(d: usize, c: T) -> Self {
        Self {
            w: Array2::zeros((0, d + 1)),
            a: Array1::zeros(0),
            c,
        }
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols() - 1
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        let mut out = self.c;
        for (wk, &ak) in self.w.outer_iter().zip(self.a.iter()) {
            let wk = wk.as_slice().expect("row-major weights");
            let pre = wk[..d]
                .iter()
                .zip(x)
                .fold(wk[d], |acc, (&wi, &xi)| acc + wi * xi);
            out += ak * relu(pre);
        }
        Ok(out)
    }

    /// Predictions on an `n x d` design (no ones column).
    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(self.forward_augmented(augment(x).view()))
    }

    /// Predictions on an already augmented `n x (d+1)` design.
    pub fn forward_augmented(&self, xa: ArrayView2<T>) -> Array1<T> {
        // bound the n x m pre-activation buffer
        let chunk = (1 << 20) / self.width().max(1) + 1;
        let mut out = Array1::from_elem(xa.nrows(), self.c);
        for (rows, mut o) in xa
            .axis_chunks_iter(Axis(0), chunk)
            .zip(out.axis_chunks_iter_mut(Axis(0), chunk))
        {
            let mut pre = rows.dot(&self.w.t());
            pre.mapv_inplace(relu);
            o += &pre.dot(&self.a);
        }
        out
    }

    pub fn scaled_variation(&self) -> ScaledVariation<T> {
        let v = self
            .w
            .outer_iter()
            .zip(self.a.iter())
            .fold(T::zero(), |acc, (wk, &ak)| acc + ak.abs() * norm2(wk.as_slice().unwrap()));
        ScaledVariation(v)
    }

    /// `(1/2) sum_k (a_k^2 + ||w_k||^2)`.
    pub fn ridge_penalty(&self) -> T {
        let half = T::lit(0.5);
        half * (self.a.dot(&self.a) + self.w.iter().map(|&v| v * v).sum::<T>())
    }

    /// `max_k | a_k^2 - ||w_k||^2 |`.
    pub fn balance_gap(&self) -> T {
        self.w
            .outer_iter()
            .zip(self.a.iter())
            .map(|(wk, &ak)| (ak * ak - wk.dot(&wk)).abs())
            .fold(T::zero(), T::max)
    }

    /// Rescales each neuron so that `|a_k| = ||w_k||_2`, leaving the function
    /// and the scaled variation unchanged. Neurons with a zero factor are
    /// zeroed out entirely.
    pub fn balance(&self) -> Self {
        let mut out = self.clone();
        for (mut wk, ak) in out.w.outer_iter_mut().zip(out.a.iter_mut()) {
            let wn = norm2(wk.as_slice().unwrap());
            let an = ak.abs();
            if wn == T::zero() || an == T::zero() {
                wk.fill(T::zero());
                *ak = T::zero();
                continue;
            }
            let s = (an / wn).sqrt();
            wk.mapv_inplace(|v| v * s);
            *ak /= s;
        }
        out
    }

    /// Replaces all neurons sharing a cone of the arrangement by a single
    /// neuron with inner weight `sum_j |a_j| w_j` and outer weight `+-1`.
    ///
    /// Training-point predictions are preserved exactly and the scaled
    /// variation can only decrease (triangle inequality).
    pub fn merge_cone_neurons(&self, patterns: &SignPatternSet<T>) -> Result<Self> {
        let d = self.input_dim();
        if patterns.dim() != d + 1 {
            return Err(Error::Dimension {
                expected: d + 1,
                got: patterns.dim(),
            });
        }
        let tol = T::lit(ZERO_NEURON_TOL);
        let mut merged: std::collections::BTreeMap<usize, Array1<T>> = Default::default();
        for (k, (wk, &ak)) in self.w.outer_iter().zip(self.a.iter()).enumerate() {
            let wk = wk.as_slice().unwrap();
            if ak.abs() < tol || norm2(wk) < tol {
                continue;
            }
            let idx = patterns
                .pattern_of(wk, ak)
                .map_err(|_| Error::UnmappedCone { neuron: k })?;
            let acc = merged
                .entry(idx)
                .or_insert_with(|| Array1::zeros(d + 1));
            acc.scaled_add(ak.abs(), &ArrayView1::from(wk));
        }
        let p = patterns.len();
        let mut w = Array2::zeros((merged.len(), d + 1));
        let mut a = Array1::zeros(merged.len());
        for (row, (idx, acc)) in merged.into_iter().enumerate() {
            w.row_mut(row).assign(&acc);
            a[row] = if idx < p { T::one() } else { -T::one() };
        }
        Ok(Self { w, a, c: self.c })
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            w: self.w.mapv(|v| U::lit(v.as_f64())),
            a: self.a.mapv(|v| U::lit(v.as_f64())),
            c: U::lit(self.c.as_f64()),
        }
    }

    /// Per-neuron `|a_k| ||w_k||_2` contributions.
    pub fn neuron_masses(&self) -> Array1<T> {
        self.w
            .map_axis(Axis(1), |wk| wk.dot(&wk).sqrt())
            .iter()
            .zip(self.a.iter())
            .map(|(&wn, &ak)| wn * ak.abs())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(&NetworkJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: NetworkJson = serde_json::from_str(s)?;
        raw.into_params()
    }
}

/// On-disk form: `{d, m, c, a: [...], W: [[...]]}` with row-major `W`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkJson {
    pub d: usize,
    pub m: usize,
    pub c: f64,
    pub a: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
}

impl<T: Scalar> From<&NetworkParams<T>> for NetworkJson {
    fn from(net: &NetworkParams<T>) -> Self {
        Self {
            d: net.input_dim(),
            m: net.width(),
            c: net.c.as_f64(),
            a: net.a.iter().map(|v| v.as_f64()).collect(),
            w: net
                .w
                .outer_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
        }
    }
}

impl NetworkJson {
    pub fn into_params<T: Scalar>(self) -> Result<NetworkParams<T>> {
        if self.a.len() != self.m || self.w.len() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                got: self.a.len().min(self.w.len()),
            });
        }
        let mut w = Array2::zeros((self.m, self.d + 1));
        for (k, row) in self.w.iter().enumerate() {
            if row.len() != self.d + 1 {
                return Err(Error::Dimension {
                    expected: self.d + 1,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                w[[k, j]] = T::lit(v);
            }
        }
        let a = self.a.iter().map(|&v| T::lit(v)).collect();
        NetworkParams::new(w, a, T::lit(self.c))
    }
}
