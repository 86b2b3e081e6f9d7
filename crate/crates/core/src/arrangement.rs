//! Activation patterns of the hyperplane arrangement `{u : <x_i, u> = 0}`
//! induced by the augmented training design, and the maps between network
//! parameters and the grouped coefficients of the convex program.
//!
//! Pattern `i` is the set `I_+ = {j : <x_j, u> > 0}`; ties go to `I_-`. Cone
//! indices `0..p` carry outer sign `+1` and `p..2p` reuse the same masks with
//! outer sign `-1`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cone::orthonormal_basis;
use crate::error::{input_err, Error, Result};
use crate::network::{augment, NetworkParams, ZERO_NEURON_TOL};
use crate::scalar::{dot, norm2, Scalar};

/// Largest `n` for which [`EnumerationMode::Auto`] enumerates exactly.
pub const AUTO_EXACT_MAX_N: usize = 32;
/// Largest augmented dimension for which [`EnumerationMode::Auto`] enumerates exactly.
pub const AUTO_EXACT_MAX_DIM: usize = 4;
/// Tolerance on sign violations when checking cone membership.
pub const CONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    /// Every realizable pattern is present.
    Exact,
    /// Patterns discovered by random search; possibly incomplete.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationMode {
    Auto,
    Exact,
    Sampled { samples: Option<usize>, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct SignPatternSet<T> {
    design: Array2<T>,
    masks: Vec<Vec<bool>>,
    witnesses: Vec<Vec<T>>,
    coverage: Coverage,
    index: HashMap<Vec<bool>, usize>,
}

impl<T: Scalar> SignPatternSet<T> {
    fn build(
        design: Array2<T>,
        found: BTreeMap<Vec<bool>, Vec<f64>>,
        coverage: Coverage,
    ) -> Self {
        let mut masks = Vec::with_capacity(found.len());
        let mut witnesses = Vec::with_capacity(found.len());
        for (m, w) in found {
            masks.push(m);
            witnesses.push(w.into_iter().map(T::lit).collect());
        }
        let index = masks
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            design,
            masks,
            witnesses,
            coverage,
            index,
        }
    }

    /// Number of distinct base patterns `p`.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Number of cones `2p`.
    pub fn num_cones(&self) -> usize {
        2 * self.masks.len()
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// Augmented dimension `d + 1`.
    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> ArrayView2<'_, T> {
        self.design.view()
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn witnesses(&self) -> &[Vec<T>] {
        &self.witnesses
    }

    /// Mask of cone `i` (`0..2p`).
    pub fn mask(&self, cone: usize) -> &[bool] {
        &self.masks[cone % self.len()]
    }

    /// `+1` for cones `0..p`, `-1` for `p..2p`.
    pub fn outer_sign(&self, cone: usize) -> T {
        if cone < self.len() {
            T::one()
        } else {
            -T::one()
        }
    }

    /// Per-row signs `+1` on `I_+` and `-1` on `I_-`: the closure of the cone
    /// is `{u : s_j <x_j, u> >= 0}`.
    pub fn cone_signs(&self, cone: usize) -> Vec<T> {
        self.mask(cone)
            .iter()
            .map(|&b| if b { T::one() } else { -T::one() })
            .collect()
    }

    /// Activation mask of `w` on the design, ties counted as inactive.
    pub fn mask_of(&self, w: &[T]) -> Vec<bool> {
        self.design
            .outer_iter()
            .map(|row| dot(row.as_slice().unwrap(), w) > T::zero())
            .collect()
    }

    /// Cone index of a neuron with inner weight `w` and outer weight sign `sign`.
    pub fn pattern_of(&self, w: &[T], sign: T) -> Result<usize> {
        if w.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: w.len(),
            });
        }
        let i = *self
            .index
            .get(&self.mask_of(w))
            .ok_or(Error::UnmappedPattern)?;
        Ok(if sign < T::zero() { i + self.len() } else { i })
    }

    /// Largest relative sign violation of `u` against the closed cone `cone`.
    pub fn cone_violation(&self, cone: usize, u: &[T]) -> T {
        let un = norm2(u);
        if un == T::zero() {
            return T::zero();
        }
        self.design
            .outer_iter()
            .zip(self.mask(cone))
            .map(|(row, &pos)| {
                let r = row.as_slice().unwrap();
                let v = dot(r, u) / (norm2(r) * un);
                if pos {
                    (-v).max(T::zero())
                } else {
                    v.max(T::zero())
                }
            })
            .fold(T::zero(), T::max)
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = PatternJson {
            n: self.n(),
            p: self.len(),
            mode: self.coverage,
            masks: self
                .masks
                .iter()
                .map(|m| m.iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect(),
            witnesses: self
                .witnesses
                .iter()
                .map(|w| w.iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        Ok(crate::json::to_string_pretty(&raw)?)
    }

    /// Reloads a serialized pattern set for the (unaugmented) design `x`,
    /// checking every witness against its mask.
    pub fn from_json(s: &str, x: ArrayView2<T>) -> Result<Self> {
        let raw: PatternJson = serde_json::from_str(s)?;
        let design = augment(x);
        if raw.n != design.nrows() || raw.masks.len() != raw.p || raw.witnesses.len() != raw.p {
            return input_err("pattern file does not match the design");
        }
        let mut found = BTreeMap::new();
        for (m, w) in raw.masks.iter().zip(raw.witnesses) {
            let mask: Vec<bool> = m.chars().map(|c| c == '1').collect();
            if mask.len() != raw.n || w.len() != design.ncols() {
                return input_err("malformed mask or witness");
            }
            let wt: Vec<T> = w.iter().map(|&v| T::lit(v)).collect();
            let realized: Vec<bool> = design
                .outer_iter()
                .map(|row| dot(row.as_slice().unwrap(), &wt) > T::zero())
                .collect();
            if realized != mask {
                return input_err(format!("witness does not realize mask {m}"));
            }
            found.insert(mask, w);
        }
        Ok(Self::build(design, found, raw.mode))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternJson {
    n: usize,
    p: usize,
    mode: Coverage,
    masks: Vec<String>,
    witnesses: Vec<Vec<f64>>,
}

/// Upper bound `2 d' (e n / d')^{d'}` on the number of patterns, `d' = d + 1`.
pub fn pattern_count_bound(n: usize, d: usize) -> f64 {
    let dp = (d + 1) as f64;
    2.0 * dp * (std::f64::consts::E * n as f64 / dp).powf(dp)
}

/// Enumerates the activation patterns of the augmented design `[X, 1]`.
pub fn enumerate_patterns<T: Scalar>(
    x: ArrayView2<T>,
    mode: EnumerationMode,
) -> Result<SignPatternSet<T>> {
    let (n, d) = x.dim();
    if n == 0 {
        return input_err("design has no rows");
    }
    if !x.iter().all(|v| v.is_finite()) {
        return input_err("design must be finite");
    }
    if x
        .outer_iter()
        .any(|r| norm2(r.as_slice().unwrap_or(&r.to_vec())) > T::one() + T::lit(1e-12))
    {
        log::warn!("design rows lie outside the unit ball");
    }
    let design = augment(x);
    let rows: Vec<Vec<f64>> = design
        .outer_iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let exact = match mode {
        EnumerationMode::Exact => true,
        EnumerationMode::Auto => n <= AUTO_EXACT_MAX_N && d < AUTO_EXACT_MAX_DIM,
        EnumerationMode::Sampled { .. } => false,
    };
    if exact {
        let regions = exact_regions(&rows);
        let found = regions
            .into_iter()
            .map(|(signs, w)| (signs.iter().map(|&s| s > 0).collect(), w))
            .collect();
        Ok(SignPatternSet::build(design, found, Coverage::Exact))
    } else {
        let (samples, seed) = match mode {
            EnumerationMode::Sampled { samples, seed } => (samples, seed),
            _ => (None, 0),
        };
        let samples = samples.unwrap_or(50 * (1usize << (d + 1).min(20)) * n);
        let found = sampled_patterns(&rows, samples, seed);
        Ok(SignPatternSet::build(design, found, Coverage::Sampled))
    }
}

const RANK_TOL: f64 = 1e-10;
const ZERO_TOL: f64 = 1e-11;

/// Sign vectors (no zeros) and strict interior witnesses of every region of
/// the central arrangement with normals `rows`.
fn exact_regions(rows: &[Vec<f64>]) -> BTreeMap<Vec<i8>, Vec<f64>> {
    let dim = rows[0].len();
    let basis = orthonormal_basis(rows, RANK_TOL);
    let coords: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| basis.iter().map(|q| dot(r, q)).collect())
        .collect();
    let mut out = BTreeMap::new();
    for (signs, wr) in essential_regions(&coords) {
        // lift back to the ambient space
        let mut w = vec![0.0; dim];
        for (c, q) in wr.iter().zip(&basis) {
            w.iter_mut().zip(q).for_each(|(wi, &qi)| *wi += c * qi);
        }
        let nw = norm2(&w);
        w.iter_mut().for_each(|v| *v /= nw);
        out.insert(signs, w);
    }
    out
}

/// Regions of an essential central arrangement (normals span the space).
fn essential_regions(rows: &[Vec<f64>]) -> Vec<(Vec<i8>, Vec<f64>)> {
    let r = rows[0].len();
    let sgn = |v: f64| if v > 0.0 { 1i8 } else { -1i8 };
    if r == 1 {
        let plus: Vec<i8> = rows.iter().map(|c| sgn(c[0])).collect();
        let minus: Vec<i8> = plus.iter().map(|s| -s).collect();
        return vec![(plus, vec![1.0]), (minus, vec![-1.0])];
    }
    let norms: Vec<f64> = rows.iter().map(|v| norm2(v)).collect();
    let mut seen_lines: HashSet<Vec<usize>> = HashSet::new();
    let mut found: BTreeMap<Vec<i8>, Vec<f64>> = BTreeMap::new();

    let mut visit = |subset: &[usize]| {
        let sub: Vec<Vec<f64>> = subset.iter().map(|&j| rows[j].clone()).collect();
        let q = match complement_direction(&sub, r) {
            Some(q) => q,
            None => return,
        };
        let through: Vec<usize> = (0..rows.len())
            .filter(|&j| dot(&rows[j], &q).abs() <= ZERO_TOL * norms[j])
            .collect();
        if !seen_lines.insert(through.clone()) {
            return;
        }
        // local arrangement of the hyperplanes through the line, in q-perp
        let local_rows: Vec<Vec<f64>> = through
            .iter()
            .map(|&j| {
                let c = dot(&rows[j], &q);
                rows[j].iter().zip(&q).map(|(&a, &b)| a - c * b).collect()
            })
            .collect();
        let local = exact_regions(&local_rows);
        for s in [1.0, -1.0] {
            let qq: Vec<f64> = q.iter().map(|v| s * v).collect();
            for (lsigns, lw) in &local {
                // keep signs of rows off the line while entering the local region
                let mut eps: f64 = 1.0;
                for (j, row) in rows.iter().enumerate() {
                    if through.binary_search(&j).is_ok() {
                        continue;
                    }
                    let a = dot(row, &qq);
                    let b = dot(row, lw);
                    if a * b < 0.0 {
                        eps = eps.min(0.5 * a.abs() / b.abs());
                    }
                }
                let w: Vec<f64> = qq.iter().zip(lw).map(|(&a, &b)| a + eps * b).collect();
                let mut signs = vec![0i8; rows.len()];
                for j in 0..rows.len() {
                    signs[j] = match through.binary_search(&j) {
                        Ok(k) => lsigns[k],
                        Err(_) => sgn(dot(&rows[j], &qq)),
                    };
                }
                found.entry(signs).or_insert(w);
            }
        }
    };

    // every pointed region has an extreme ray cut out by r - 1 independent rows
    let k = r - 1;
    let mut idx: Vec<usize> = (0..k).collect();
    if rows.len() >= k {
        loop {
            visit(&idx);
            // next k-combination
            let mut i = k;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if idx[i] < rows.len() - k + i {
                    idx[i] += 1;
                    for t in i + 1..k {
                        idx[t] = idx[t - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    found.into_iter().collect()
}

/// Unit vector orthogonal to `sub` (which must have rank `r - 1`).
fn complement_direction(sub: &[Vec<f64>], r: usize) -> Option<Vec<f64>> {
    let basis = orthonormal_basis(sub, RANK_TOL);
    if basis.len() != r - 1 {
        return None;
    }
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for t in 0..r {
        let mut e = vec![0.0; r];
        e[t] = 1.0;
        for q in &basis {
            let c = dot(&e, q);
            e.iter_mut().zip(q).for_each(|(ei, &qi)| *ei -= c * qi);
        }
        let ne = norm2(&e);
        if ne > best_norm {
            best_norm = ne;
            best = Some(e);
        }
    }
    best.map(|mut e| {
        for q in &basis {
            let c = dot(&e, q);
            e.iter_mut().zip(q).for_each(|(ei, &qi)| *ei -= c * qi);
        }
        let ne = norm2(&e);
        e.iter_mut().for_each(|v| *v /= ne);
        e
    })
}

fn sampled_patterns(rows: &[Vec<f64>], samples: usize, seed: u64) -> BTreeMap<Vec<bool>, Vec<f64>> {
    let dim = rows[0].len();
    let norms: Vec<f64> = rows.iter().map(|r| norm2(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found = BTreeMap::new();
    for s in 0..samples {
        let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if s % 2 == 1 {
            // perturbed data normal: lands next to a hyperplane
            let j = rng.random_range(0..rows.len());
            let scale = 0.05 * norm2(&u) / norms[j].max(1e-300);
            let base = &rows[j];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            // move onto the hyperplane of row j, then nudge off it
            let c = dot(&u, base) / (norms[j] * norms[j]);
            u.iter_mut().zip(base).for_each(|(ui, &b)| *ui -= c * b);
            u.iter_mut()
                .zip(base)
                .for_each(|(ui, &b)| *ui += sign * 1e-3 * scale * b);
        }
        let nu = norm2(&u);
        if nu == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= nu);
        let vals: Vec<f64> = rows.iter().map(|r| dot(r, &u)).collect();
        if vals
            .iter()
            .zip(&norms)
            .any(|(v, &rn)| v.abs() <= 1e-12 * rn)
        {
            continue;
        }
        let mask: Vec<bool> = vals.iter().map(|&v| v > 0.0).collect();
        found.entry(mask).or_insert(u);
    }
    found
}

/// Group-lasso variable: one `(d+1)`-block per cone.
#[derive(Debug, Clone)]
pub struct GroupedCoefficients<T> {
    /// `2p x (d+1)`; row `i` is the block of cone `i`.
    pub blocks: Array2<T>,
    pub patterns: Arc<SignPatternSet<T>>,
}

impl<T: Scalar> GroupedCoefficients<T> {
    pub fn zeros(patterns: Arc<SignPatternSet<T>>) -> Self {
        Self {
            blocks: Array2::zeros((patterns.num_cones(), patterns.dim())),
            patterns,
        }
    }

    pub fn from_blocks(blocks: Array2<T>, patterns: Arc<SignPatternSet<T>>) -> Result<Self> {
        if blocks.dim() != (patterns.num_cones(), patterns.dim()) {
            return input_err(format!(
                "expected {}x{} blocks, got {:?}",
                patterns.num_cones(),
                patterns.dim(),
                blocks.dim()
            ));
        }
        if !blocks.iter().all(|v| v.is_finite()) {
            return input_err("coefficients must be finite");
        }
        Ok(Self { blocks, patterns })
    }

    pub fn block(&self, i: usize) -> ArrayView1<'_, T> {
        self.blocks.row(i)
    }

    /// `sum_i ||beta_i||_2`.
    pub fn l21_norm(&self) -> T {
        self.blocks
            .outer_iter()
            .map(|b| b.dot(&b).sqrt())
            .sum()
    }

    pub fn nonzero_blocks(&self) -> Vec<usize> {
        self.blocks
            .outer_iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|&v| v != T::zero()))
            .map(|(i, _)| i)
            .collect()
    }

    /// `sum_i D_i X beta_i` on the training design.
    pub fn predictions(&self) -> Array1<T> {
        let pats = &self.patterns;
        let design = pats.design();
        let mut out = Array1::zeros(pats.n());
        for i in self.nonzero_blocks() {
            let s = pats.outer_sign(i);
            let z = design.dot(&self.blocks.row(i));
            for (j, &active) in pats.mask(i).iter().enumerate() {
                if active {
                    out[j] += s * z[j];
                }
            }
        }
        out
    }

    /// Blocks lying outside the closure of their cone beyond [`CONE_TOL`].
    pub fn cone_violations(&self) -> Vec<usize> {
        let tol = T::lit(CONE_TOL);
        self.nonzero_blocks()
            .into_iter()
            .filter(|&i| {
                self.patterns
                    .cone_violation(i, self.blocks.row(i).as_slice().unwrap())
                    > tol
            })
            .collect()
    }

    /// Blocks with a zero entry in `X beta_i` (on a cone face).
    pub fn boundary_blocks(&self) -> Vec<usize> {
        let design = self.patterns.design();
        self.nonzero_blocks()
            .into_iter()
            .filter(|&i| {
                let b = self.blocks.row(i);
                let bn = b.dot(&b).sqrt();
                design.outer_iter().any(|r| {
                    r.dot(&b).abs() <= T::lit(CONE_TOL) * bn * r.dot(&r).sqrt()
                })
            })
            .collect()
    }
}

/// `beta_i = sum_j |a_j| w_j 1{(w_j, a_j) in A_i}`.
pub fn beta_of_theta<T: Scalar>(
    net: &NetworkParams<T>,
    patterns: Arc<SignPatternSet<T>>,
) -> Result<GroupedCoefficients<T>> {
    if net.input_dim() + 1 != patterns.dim() {
        return Err(Error::Dimension {
            expected: patterns.dim(),
            got: net.input_dim() + 1,
        });
    }
    let tol = T::lit(ZERO_NEURON_TOL);
    let mut out = GroupedCoefficients::zeros(patterns);
    for (k, (wk, &ak)) in net.w.outer_iter().zip(net.a.iter()).enumerate() {
        let wk = wk.as_slice().unwrap();
        if ak.abs() < tol || norm2(wk) < tol {
            continue;
        }
        let i = out
            .patterns
            .pattern_of(wk, ak)
            .map_err(|_| Error::UnmappedCone { neuron: k })?;
        out.blocks
            .row_mut(i)
            .scaled_add(ak.abs(), &ArrayView1::from(wk));
    }
    Ok(out)
}

/// One neuron per nonzero block, outer weight `+1` for the first half of the
/// cones and `-1` for the second, output bias `0`.
pub fn theta_of_beta<T: Scalar>(coeffs: &GroupedCoefficients<T>) -> NetworkParams<T> {
    let nz = coeffs.nonzero_blocks();
    let dim = coeffs.patterns.dim();
    let mut w = Array2::zeros((nz.len(), dim));
    let mut a = Array1::zeros(nz.len());
    for (k, &i) in nz.iter().enumerate() {
        w.row_mut(k).assign(&coeffs.blocks.row(i));
        a[k] = coeffs.patterns.outer_sign(i);
    }
    NetworkParams { w, a, c: T::zero() }
}
