//! Atomic target networks, regression datasets on the unit ball, stratified
//! compression of wide targets, and the default regularization level.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{input_err, Error, Result};
use crate::network::{NetworkParams, ZERO_NEURON_TOL};
use crate::scalar::Scalar;

/// Seeded generator used throughout the crate.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub d: usize,
    /// Number of atoms.
    pub atoms: usize,
    /// Scaled-variation budget; the generated net has `nu = r`.
    pub r: f64,
    pub seed: u64,
    /// Unit-norm inner weights.
    pub normalized: bool,
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random atomic network with `spec.atoms` neurons and `nu = spec.r`.
///
/// Inner weights are uniform on the unit sphere of `R^{d+1}` (Gaussian when
/// not normalized); outer weights carry random signs and Dirichlet(1)
/// magnitudes. The output bias is zero.
pub fn sample_target<T: Scalar>(spec: &TargetSpec) -> Result<NetworkParams<T>> {
    if spec.d == 0 || spec.atoms == 0 {
        return input_err("target needs d >= 1 and at least one atom");
    }
    if !(spec.r > 0.0) || !spec.r.is_finite() {
        return input_err("target budget must be positive");
    }
    let mut rng = rng_for(spec.seed);
    let dim = spec.d + 1;
    let mut rows = Vec::with_capacity(spec.atoms);
    let mut mags = Vec::with_capacity(spec.atoms);
    for _ in 0..spec.atoms {
        let w = if spec.normalized {
            unit_vector(&mut rng, dim)
        } else {
            (0..dim).map(|_| rng.sample(StandardNormal)).collect()
        };
        let e: f64 = rng.sample(Exp1);
        let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        rows.push(w);
        mags.push((s, e));
    }
    let mass: f64 = rows
        .iter()
        .zip(&mags)
        .map(|(w, (_, e))| e * w.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum();
    let scale = spec.r / mass;
    let w = Array2::from_shape_fn((spec.atoms, dim), |(k, j)| T::lit(rows[k][j]));
    let a = Array1::from_iter(mags.iter().map(|(s, e)| T::lit(s * e * scale)));
    NetworkParams::new(w, a, T::zero())
}

/// One neuron `s * r * relu(<v, x>)` with `v` uniform on the unit sphere of
/// `R^d` and zero bias.
pub fn single_atom_target<T: Scalar>(d: usize, r: f64, seed: u64) -> Result<NetworkParams<T>> {
    if d == 0 || !(r > 0.0) {
        return input_err("single atom needs d >= 1 and r > 0");
    }
    let mut rng = rng_for(seed);
    let mut v = unit_vector(&mut rng, d);
    v.push(0.0);
    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    NetworkParams::from_neurons(d, &[(T::lit(s * r), v.into_iter().map(T::lit).collect())], T::zero())
}

/// `n` points uniform on the closed unit ball of `R^d`.
pub fn sample_ball<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Array2<T> {
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        let u = unit_vector(rng, d);
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        for (o, ui) in row.iter_mut().zip(u) {
            *o = T::lit(ui * radius);
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct RegressionDataset<T> {
    pub x: Array2<T>,
    pub y: Array1<T>,
    pub sigma: f64,
    /// Generating network; absent for datasets read from disk.
    pub target: Option<NetworkParams<T>>,
    pub seed: u64,
}

impl<T: Scalar> RegressionDataset<T> {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (row, y) in self.x.rows().into_iter().zip(self.y.iter()) {
            let rec: Vec<String> = row
                .iter()
                .chain(std::iter::once(y))
                .map(|v| format!("{:e}", v.as_f64()))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `x1,...,xd,y` CSV.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 2 || header.get(cols - 1) != Some("y") {
            return input_err("dataset header must be x1,...,xd,y");
        }
        for (j, h) in header.iter().take(cols - 1).enumerate() {
            if h != format!("x{}", j + 1) {
                return input_err(format!("unexpected column {h:?}"));
            }
        }
        let d = cols - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: rec.len(),
                });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("bad number {field:?}")))?;
                if !v.is_finite() {
                    return input_err("dataset values must be finite");
                }
                if j < d {
                    xs.push(T::lit(v));
                } else {
                    ys.push(T::lit(v));
                }
            }
        }
        if ys.is_empty() {
            return input_err("dataset has no rows");
        }
        let x = Array2::from_shape_vec((ys.len(), d), xs).expect("row-major shape");
        Ok(Self {
            x,
            y: Array1::from(ys),
            sigma: f64::NAN,
            target: None,
            seed: 0,
        })
    }
}

/// `n` samples `Y = target(X) + eps` with `X ~ Uniform(ball)` and
/// `eps ~ N(0, sigma^2)`.
pub fn generate_dataset<T: Scalar>(
    target: &NetworkParams<T>,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<RegressionDataset<T>> {
    if n == 0 {
        return input_err("dataset needs n >= 1");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return input_err("noise level must be nonnegative");
    }
    let d = target.input_dim();
    let mut rng = rng_for(seed);
    let x = sample_ball::<T, _>(&mut rng, n, d);
    let clean = target.forward_batch(x.view())?;
    let y = clean.mapv(|f| {
        let e: f64 = rng.sample(StandardNormal);
        f + T::lit(sigma * e)
    });
    Ok(RegressionDataset {
        x,
        y,
        sigma,
        target: Some(target.clone()),
        seed,
    })
}

/// `4 sigma sqrt(tau ln(n/d) / n)`.
pub fn lambda_default(n: usize, d: usize, sigma: f64, tau: f64) -> Result<f64> {
    if d == 0 || n <= d {
        return input_err("lambda_default needs n > d >= 1");
    }
    if !(tau >= 1.0) || !(sigma >= 0.0) {
        return input_err("lambda_default needs tau >= 1 and sigma >= 0");
    }
    Ok(4.0 * sigma * (tau * (n as f64 / d as f64).ln() / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct Compressed<T> {
    pub net: NetworkParams<T>,
    pub cells: usize,
    /// Plain importance sampling was used because the budget could not cover
    /// one atom per sign class.
    pub fallback: bool,
}

/// Stratified resampling of a wide atomic network down to at most `m`
/// neurons.
///
/// Atoms are normalized to unit inner weight, grouped by sign, and covered by
/// about `m/2` cells using greedy farthest-point centers on the unit sphere.
/// Cell `v` with mass `S_v` receives `ceil(m' S_v)` draws proportional to
/// `|a_i|`, each weighted `S_v sign / n_v`. The result is unbiased, keeps the
/// target's (direction, sign) pairs, and has `nu` equal to the target's.
pub fn compress<T: Scalar>(target: &NetworkParams<T>, m: usize, seed: u64) -> Result<Compressed<T>> {
    if m == 0 {
        return input_err("compression budget must be at least 1");
    }
    // unit-direction atoms with signed mass
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (row, &a) in target.w.rows().into_iter().zip(target.a.iter()) {
        let wn = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let am = a.as_f64() * wn;
        if wn <= ZERO_NEURON_TOL || am.abs() <= ZERO_NEURON_TOL {
            continue;
        }
        dirs.push(row.iter().map(|v| v.as_f64() / wn).collect());
        mass.push(am);
    }
    let d = target.input_dim();
    let build = |atoms: &BTreeMap<usize, f64>| -> Result<NetworkParams<T>> {
        let neurons: Vec<(T, Vec<T>)> = atoms
            .iter()
            .map(|(&i, &a)| (T::lit(a), dirs[i].iter().map(|&v| T::lit(v)).collect()))
            .collect();
        NetworkParams::from_neurons(d, &neurons, target.c)
    };
    if dirs.len() <= m {
        let all: BTreeMap<usize, f64> = mass.iter().copied().enumerate().collect();
        return Ok(Compressed {
            net: build(&all)?,
            cells: dirs.len(),
            fallback: false,
        });
    }
    let mut rng = rng_for(seed);
    let classes = {
        let pos = mass.iter().any(|&a| a > 0.0);
        let neg = mass.iter().any(|&a| a < 0.0);
        pos as usize + neg as usize
    };
    let total: f64 = mass.iter().map(|a| a.abs()).sum();

    if m < classes {
        let weights: Vec<f64> = mass.iter().map(|a| a.abs()).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Input(e.to_string()))?;
        let mut atoms = BTreeMap::new();
        for _ in 0..m {
            let i = dist.sample(&mut rng);
            *atoms.entry(i).or_insert(0.0) += total * mass[i].signum() / m as f64;
        }
        return Ok(Compressed {
            net: build(&atoms)?,
            cells: 1,
            fallback: true,
        });
    }

    let k = (m / 2).max(classes);
    let cell = farthest_point_cells(&dirs, &mass, k);
    let cells = cell.iter().copied().max().map_or(0, |c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (i, &c) in cell.iter().enumerate() {
        members[c].push(i);
    }
    let per_mass = (m - cells) as f64 / total;
    let mut atoms = BTreeMap::new();
    for group in members.iter().filter(|g| !g.is_empty()) {
        let weights: Vec<f64> = group.iter().map(|&i| mass[i].abs()).collect();
        let s_v: f64 = weights.iter().sum();
        let n_v = ((per_mass * s_v).ceil() as usize).max(1);
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Input(e.to_string()))?;
        for _ in 0..n_v {
            let i = group[dist.sample(&mut rng)];
            *atoms.entry(i).or_insert(0.0) += s_v * mass[i].signum() / n_v as f64;
        }
    }
    Ok(Compressed {
        net: build(&atoms)?,
        cells,
        fallback: false,
    })
}

/// Assigns each atom to the nearest of `k` greedy farthest-point centers.
/// Atoms of opposite sign are never in the same cell.
fn farthest_point_cells(dirs: &[Vec<f64>], mass: &[f64], k: usize) -> Vec<usize> {
    let dist = |i: usize, j: usize| -> f64 {
        if (mass[i] > 0.0) != (mass[j] > 0.0) {
            return f64::INFINITY;
        }
        dirs[i]
            .iter()
            .zip(&dirs[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let first = (0..mass.len())
        .max_by(|&a, &b| mass[a].abs().total_cmp(&mass[b].abs()))
        .expect("nonempty atom list");
    let mut owner = vec![0usize; mass.len()];
    let mut near: Vec<f64> = (0..mass.len()).map(|i| dist(i, first)).collect();
    let mut centers = vec![first];
    while centers.len() < k {
        let (far, &gap) = near
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty atom list");
        if gap == 0.0 {
            break;
        }
        let c = centers.len();
        centers.push(far);
        for i in 0..mass.len() {
            let di = dist(i, far);
            if di < near[i] {
                near[i] = di;
                owner[i] = c;
            }
        }
    }
    owner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_default_examples() {
        let l = lambda_default(100, 2, 1.0, 1.0).unwrap();
        assert!((l - 4.0 * (50f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((l - 0.79119).abs() < 1e-3);
        assert_eq!(lambda_default(100, 2, 0.0, 1.0).unwrap(), 0.0);
        let l4 = lambda_default(100, 2, 1.0, 4.0).unwrap();
        assert!((l4 - 2.0 * l).abs() < 1e-15);
        assert!(lambda_default(2, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_atom_target_spec() {
        let spec = TargetSpec {
            d: 3,
            atoms: 1,
            r: 2.0,
            seed: 5,
            normalized: true,
        };
        let t: NetworkParams<f64> = sample_target(&spec).unwrap();
        assert_eq!(t.width(), 1);
        assert!((t.a[0].abs() - 2.0).abs() < 1e-12);
        assert!((t.w.row(0).dot(&t.w.row(0)).sqrt() - 1.0).abs() < 1e-12);
        assert!((t.scaled_variation().value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn targets_hit_budget_and_repeat() {
        for normalized in [true, false] {
            let spec = TargetSpec {
                d: 2,
                atoms: 50,
                r: 3.5,
                seed: 9,
                normalized,
            };
            let t: NetworkParams<f64> = sample_target(&spec).unwrap();
            assert!((t.scaled_variation().value() - 3.5).abs() < 1e-12);
            assert_eq!(t, sample_target(&spec).unwrap());
            assert_eq!(t.c, 0.0);
        }
    }

    #[test]
    fn noiseless_dataset_is_exact_and_in_ball() {
        let t = single_atom_target::<f64>(3, 1.0, 2).unwrap();
        let ds = generate_dataset(&t, 500, 0.0, 4).unwrap();
        let f = t.forward_batch(ds.x.view()).unwrap();
        assert_eq!(f, ds.y);
        for row in ds.x.rows() {
            assert!(row.dot(&row) <= 1.0);
        }
    }

    #[test]
    fn noise_variance() {
        let t = single_atom_target::<f64>(2, 1.0, 2).unwrap();
        let ds = generate_dataset(&t, 10_000, 1.0, 11).unwrap();
        let e = &ds.y - &t.forward_batch(ds.x.view()).unwrap();
        let mean = e.mean().unwrap();
        let var = e.mapv(|v| (v - mean).powi(2)).sum() / (e.len() - 1) as f64;
        assert!((0.94..=1.06).contains(&var), "{var}");
    }

    #[test]
    fn csv_round_trip_is_reproducible() {
        let t = single_atom_target::<f64>(2, 1.0, 2).unwrap();
        let ds = generate_dataset(&t, 20, 0.3, 1).unwrap();
        let mut a = Vec::new();
        ds.write_csv(&mut a).unwrap();
        let mut b = Vec::new();
        generate_dataset(&t, 20, 0.3, 1).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8_lossy(&a).starts_with("x1,x2,y\n"));
        let back = RegressionDataset::<f64>::read_csv(a.as_slice()).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
    }

    #[test]
    fn compress_trivial_cases() {
        let t = single_atom_target::<f64>(2, 1.5, 3).unwrap();
        for m in [1, 2, 7] {
            let c = compress(&t, m, 0).unwrap();
            assert_eq!(c.net, t);
        }
        let spec = TargetSpec {
            d: 1,
            atoms: 10,
            r: 1.0,
            seed: 1,
            normalized: true,
        };
        let wide: NetworkParams<f64> = sample_target(&spec).unwrap();
        let c = compress(&wide, 10, 0).unwrap();
        assert_eq!(c.net.width(), 10);
    }

    #[test]
    fn compress_respects_budget_and_signs() {
        let spec = TargetSpec {
            d: 2,
            atoms: 300,
            r: 1.0,
            seed: 4,
            normalized: true,
        };
        let t: NetworkParams<f64> = sample_target(&spec).unwrap();
        for m in [1, 2, 5, 16, 40] {
            let c = compress(&t, m, 3).unwrap();
            assert!(c.net.width() <= m);
            assert_eq!(c.fallback, m < 2);
            assert!(c.net.scaled_variation().value() <= 1.0 + 1e-12);
            for (row, &a) in c.net.w.rows().into_iter().zip(c.net.a.iter()) {
                let found = t.w.rows().into_iter().zip(t.a.iter()).any(|(r2, &a2)| {
                    (&row - &r2).iter().all(|v| v.abs() < 1e-12) && a.signum() == a2.signum()
                });
                assert!(found);
            }
        }
    }
}
