//! Finite-state Markov chains over the dataset indices `0..n`.
//!
//! A [`TransitionMatrix`] is row-stochastic: row `i` is the distribution of the
//! next index given the current index `i`. [`analyze`] computes the spectrum
//! and the mixing quantities used by the convergence analysis of MC-SGD:
//!
//! ```text
//! lambda(P) = (max{|lambda_2|, |lambda_n|} + 1) / 2
//! max_{i,i'} |1/n - [P^j]_{i,i'}| <= C_P * lambda(P)^j        (j >= K_P)
//! ```
//!
//! For symmetric `P` the constant is `n^{3/2}` and `K_P = 0`. For other
//! diagonalizable matrices `C_P = sqrt(n - 1) * ||U||_F * ||U^{-1}||_F` with
//! `U` the unit-column eigenvector matrix. Defective matrices are rejected.
//!
//! Indices are zero-based throughout the crate.

use nalgebra::{Complex, DMatrix};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Tolerance on row sums and entry signs.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Largest eigenvector-matrix condition number accepted as diagonalizable.
pub const MAX_EIGVEC_CONDITION: f64 = 1e10;
/// Chains with `lambda(P) >= 1 - MIXING_TOL` are treated as not mixing.
pub const MIXING_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-14;
const CLUSTER_TOL: f64 = 1e-6;
const NULLSPACE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    /// Row-major `n * n` entries.
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Validates a row-major matrix: entries `>= 0`, rows summing to 1 within
    /// [`STOCHASTIC_TOL`].
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("transition matrix needs at least one state"));
        }
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        for (i, row) in data.chunks(n).enumerate() {
            if let Some(j) = row.iter().position(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::invalid(format!(
                    "entry ({i},{j}) = {} is not a probability",
                    row[j]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("transition matrix must be square"));
        }
        Self::from_row_major(n, rows.concat())
    }

    /// Renormalizes each row to absorb construction rounding, then validates.
    fn normalized(n: usize, mut data: Vec<f64>) -> Result<Self> {
        for row in data.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        Self::from_row_major(n, data)
    }

    /// `P = (1/n) 1 1^T`: every step is an independent uniform draw.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform chain needs n >= 1"));
        }
        Self::normalized(n, vec![1.0 / n as f64; n * n])
    }

    /// Lazy walk on a cycle: stay, step left or step right with probability 1/3 each.
    pub fn lazy_cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("lazy cycle needs n >= 3, got {n}")));
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for off in [n - 1, 0, 1] {
                data[i * n + (i + off) % n] += 1.0 / 3.0;
            }
        }
        Self::normalized(n, data)
    }

    /// `P = alpha * U_n + (1 - alpha) * (Pi + Pi^T) / 2` with `Pi` a seeded
    /// random permutation matrix. Symmetric, doubly stochastic, and ergodic
    /// for `alpha > 0`.
    pub fn random_symmetric(n: usize, alpha: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("random symmetric chain needs n >= 2, got {n}")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from_seed(seed));
        Self::mixture_with_permutation(alpha, &perm)
    }

    /// The `random_symmetric` construction with an explicit permutation
    /// (`perm[i]` is the image of `i`).
    pub fn mixture_with_permutation(alpha: f64, perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::invalid("not a permutation"));
            }
            seen[p] = true;
        }
        let mut data = vec![alpha / n as f64; n * n];
        let half = (1.0 - alpha) / 2.0;
        for (i, &p) in perm.iter().enumerate() {
            data[i * n + p] += half;
            data[p * n + i] += half;
        }
        Self::normalized(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= SYMMETRY_TOL))
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Serializable chain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChainSpec {
    Uniform {
        #[serde(default)]
        n: usize,
    },
    LazyCycle {
        #[serde(default)]
        n: usize,
    },
    RandomSymmetric {
        #[serde(default)]
        n: usize,
        alpha: f64,
        seed: u64,
    },
    Explicit {
        n: usize,
        rows: Vec<f64>,
    },
}

impl ChainSpec {
    pub fn build(&self) -> Result<TransitionMatrix> {
        match self {
            ChainSpec::Uniform { n } => TransitionMatrix::uniform(*n),
            ChainSpec::LazyCycle { n } => TransitionMatrix::lazy_cycle(*n),
            ChainSpec::RandomSymmetric { n, alpha, seed } => TransitionMatrix::random_symmetric(*n, *alpha, *seed),
            ChainSpec::Explicit { n, rows } => TransitionMatrix::from_row_major(*n, rows.clone()),
        }
    }

    /// Same chain family resized to `n` states. Explicit matrices cannot be resized.
    pub fn with_n(&self, n: usize) -> Result<ChainSpec> {
        Ok(match self {
            ChainSpec::Uniform { .. } => ChainSpec::Uniform { n },
            ChainSpec::LazyCycle { .. } => ChainSpec::LazyCycle { n },
            ChainSpec::RandomSymmetric { alpha, seed, .. } => ChainSpec::RandomSymmetric {
                n,
                alpha: *alpha,
                seed: *seed,
            },
            ChainSpec::Explicit { n: m, .. } if *m == n => self.clone(),
            ChainSpec::Explicit { .. } => {
                return Err(Error::invalid("explicit chain cannot be resized to a different n"))
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ChainSpec::Uniform { .. } => "uniform",
            ChainSpec::LazyCycle { .. } => "lazy-cycle",
            ChainSpec::RandomSymmetric { .. } => "random-symmetric",
            ChainSpec::Explicit { .. } => "explicit",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainSpectrum {
    pub n: usize,
    /// Sorted by descending modulus, ties by descending real part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub lambda: f64,
    pub stationary: Vec<f64>,
    pub symmetric: bool,
    pub c_p: Option<f64>,
    pub k_p: usize,
}

/// The three numbers the bounds need from a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub lambda: f64,
    /// `n^{3/2}` for symmetric chains, `C_P` otherwise.
    pub c_eff: f64,
    pub k_p: usize,
}

impl MixingProfile {
    pub fn new(lambda: f64, c_eff: f64, k_p: usize) -> Result<Self> {
        if !(0.0 < lambda && lambda < 1.0) {
            return Err(Error::ChainNotMixing { lambda });
        }
        if !(c_eff > 0.0 && c_eff.is_finite()) {
            return Err(Error::invalid(format!("mixing constant must be positive, got {c_eff}")));
        }
        Ok(Self { lambda, c_eff, k_p })
    }
}

impl ChainSpectrum {
    pub fn c_eff(&self) -> Result<f64> {
        if self.symmetric {
            Ok((self.n as f64).powf(1.5))
        } else {
            self.c_p
                .ok_or_else(|| Error::UnsupportedMatrix("C_P unavailable for this non-symmetric chain".into()))
        }
    }

    pub fn mixing(&self) -> Result<MixingProfile> {
        MixingProfile::new(self.lambda, self.c_eff()?, self.k_p)
    }

    pub fn record(&self) -> SpectrumRecord {
        SpectrumRecord {
            lambda: self.lambda,
            k_p: self.k_p,
            c_p: self.c_p,
            stationary: self.stationary.clone(),
            eigenvalues: self.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

/// Export form of a [`ChainSpectrum`]; eigenvalues as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub lambda: f64,
    pub k_p: usize,
    pub c_p: Option<f64>,
    pub stationary: Vec<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
}

/// Full spectral analysis of a transition matrix.
pub fn analyze(p: &TransitionMatrix) -> Result<ChainSpectrum> {
    let n = p.n();
    let symmetric = p.is_symmetric();
    let m = p.to_dmatrix();

    let (mut eigenvalues, c_p, stationary) = if symmetric {
        let eig = m.symmetric_eigen();
        let vals: Vec<Complex<f64>> = eig.eigenvalues.iter().map(|&x| Complex::new(x, 0.0)).collect();
        // Symmetric + row-stochastic means doubly stochastic: Pi* is uniform.
        (vals, Some((n as f64).powf(1.5)), vec![1.0 / n as f64; n])
    } else {
        let vals: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
        let u = eigenvector_matrix(&m, &vals)?;
        let c_p = eigenbasis_constant(&u)?;
        (vals, Some(c_p), stationary_distribution(p)?)
    };

    eigenvalues.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
    });

    let lambda = contraction_parameter(&eigenvalues);
    if lambda >= 1.0 - MIXING_TOL {
        return Err(Error::ChainNotMixing { lambda });
    }

    Ok(ChainSpectrum {
        n,
        eigenvalues,
        lambda,
        stationary,
        symmetric,
        c_p,
        k_p: 0,
    })
}

/// `(s + 1) / 2` where `s` is the largest modulus among the eigenvalues other
/// than the unit eigenvalue. For real spectra `s = max(|lambda_2|, |lambda_n|)`.
fn contraction_parameter(eigenvalues: &[Complex<f64>]) -> f64 {
    let one = Complex::new(1.0, 0.0);
    let unit = eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - one).norm().partial_cmp(&(b.1 - one).norm()).unwrap())
        .map(|(i, _)| i);
    let slem = eigenvalues
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != unit)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max);
    (slem.min(1.0) + 1.0) / 2.0
}

/// Unit-column eigenvectors, one per eigenvalue (with multiplicity). Each
/// cluster of numerically equal eigenvalues must have a null space of full
/// dimension, otherwise the matrix is defective.
fn eigenvector_matrix(m: &DMatrix<f64>, vals: &[Complex<f64>]) -> Result<DMatrix<Complex<f64>>> {
    let n = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));

    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for &z in vals {
        match clusters.iter_mut().find(|c| (c[0] - z).norm() < CLUSTER_TOL) {
            Some(c) => c.push(z),
            None => clusters.push(vec![z]),
        }
    }

    let mut columns: Vec<nalgebra::DVector<Complex<f64>>> = Vec::with_capacity(n);
    for cluster in clusters {
        let k = cluster.len();
        let center = cluster.iter().sum::<Complex<f64>>() / k as f64;
        let shifted = &mc - DMatrix::<Complex<f64>>::identity(n, n) * center;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
        for &idx in order.iter().take(k) {
            if svd.singular_values[idx] > NULLSPACE_TOL {
                return Err(Error::UnsupportedMatrix(format!(
                    "eigenvalue {center} has algebraic multiplicity {k} but a smaller eigenspace (defective)"
                )));
            }
            let col = v_t.row(idx).transpose().map(|z| z.conj());
            let norm = col.norm();
            columns.push(col / Complex::new(norm, 0.0));
        }
    }
    Ok(DMatrix::from_columns(&columns))
}

/// `sqrt(n - 1) * ||U||_F * ||U^{-1}||_F` (all Jordan blocks of size 1).
fn eigenbasis_constant(u: &DMatrix<Complex<f64>>) -> Result<f64> {
    let n = u.nrows();
    let sv = u.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = smax / smin;
    if !(cond <= MAX_EIGVEC_CONDITION) {
        return Err(Error::UnsupportedMatrix(format!(
            "eigenvector matrix condition number {cond:.3e} exceeds {MAX_EIGVEC_CONDITION:.0e}"
        )));
    }
    let inv = u
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::UnsupportedMatrix("eigenvector matrix is singular".into()))?;
    Ok(((n - 1) as f64).sqrt() * u.norm() * inv.norm())
}

/// Left Perron vector of `P`, normalized to sum 1.
fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = p.n();
    let mut a = p.to_dmatrix().transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("nonempty");
    let mut pi: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let s: f64 = pi.iter().sum();
    if s.abs() < 1e-300 {
        return Err(Error::UnsupportedMatrix("stationary vector has zero mass".into()));
    }
    pi.iter_mut().for_each(|x| *x = (*x / s).max(0.0));
    // A few multiplications by P polish the vector; Pi* is a fixed point.
    for _ in 0..4 {
        pi = left_multiply(&pi, p);
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= s);
    }
    Ok(pi)
}

/// Row vector times matrix: `x P`.
pub fn left_multiply(x: &[f64], p: &TransitionMatrix) -> Vec<f64> {
    let n = p.n();
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (o, &pij) in out.iter_mut().zip(p.row(i)) {
                *o += xi * pij;
            }
        }
    }
    out
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Row-major `P^j`.
pub fn matrix_power(p: &TransitionMatrix, j: usize) -> Vec<f64> {
    let n = p.n();
    let mut out = identity(n);
    for _ in 0..j {
        out = mat_mul(&out, p.as_row_major(), n);
    }
    out
}

fn identity(n: usize) -> Vec<f64> {
    let mut id = vec![0.0; n * n];
    for i in 0..n {
        id[i * n + i] = 1.0;
    }
    id
}

fn entrywise_gap(power: &[f64], n: usize) -> f64 {
    let target = 1.0 / n as f64;
    power.iter().map(|x| (target - x).abs()).fold(0.0, f64::max)
}

fn row_sum_gap(power: &[f64], n: usize) -> f64 {
    let target = 1.0 / n as f64;
    power
        .chunks(n)
        .map(|row| row.iter().map(|x| (target - x).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `max_{i,i'} |1/n - [P^j]_{i,i'}|`.
pub fn deviation(p: &TransitionMatrix, j: usize) -> f64 {
    entrywise_gap(&matrix_power(p, j), p.n())
}

/// Operator-norm variant: `max_i sum_{i'} |1/n - [P^j]_{i,i'}|`.
pub fn deviation_row_sum(p: &TransitionMatrix, j: usize) -> f64 {
    row_sum_gap(&matrix_power(p, j), p.n())
}

/// `deviation(p, j)` for `j = 0..=max_j`, computed incrementally.
pub fn deviation_curve(p: &TransitionMatrix, max_j: usize) -> Vec<f64> {
    let n = p.n();
    let mut power = identity(n);
    let mut out = Vec::with_capacity(max_j + 1);
    out.push(entrywise_gap(&power, n));
    for _ in 0..max_j {
        power = mat_mul(&power, p.as_row_major(), n);
        out.push(entrywise_gap(&power, n));
    }
    out
}

/// Smallest `j >= 0` with `c_eff * lambda^j <= eps`.
pub fn mixing_time_to(mixing: &MixingProfile, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let MixingProfile { lambda, c_eff, .. } = *mixing;
    if c_eff <= eps {
        return Ok(0);
    }
    let mut j = ((c_eff / eps).ln() / (1.0 / lambda).ln()).ceil().max(0.0) as usize;
    let bound = |j: usize| c_eff * lambda.powi(j as i32);
    while bound(j) > eps {
        j += 1;
    }
    while j > 0 && bound(j - 1) <= eps {
        j -= 1;
    }
    Ok(j)
}

fn horizon(mixing: &MixingProfile, d: f64, n: usize, t: usize, power: i32) -> Result<Vec<usize>> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("D must be positive, got {d}")));
    }
    let log_inv_lambda = (1.0 / mixing.lambda).ln();
    Ok((1..=t)
        .map(|j| {
            let arg = 2.0 * mixing.c_eff * d * n as f64 * (j as f64).powi(power);
            let raw = (arg.ln() / log_inv_lambda).ceil();
            let raw = if raw > 0.0 { raw as usize } else { 0 };
            raw.max(mixing.k_p).min(j)
        })
        .collect())
}

/// Look-back horizons `k_1..k_T` of the MC-SGD analysis:
/// `k_j = min{max{ceil(log(2 C D n j) / log(1/lambda)), K_P}, j}`.
pub fn k_schedule(mixing: &MixingProfile, d: f64, n: usize, t: usize) -> Result<Vec<usize>> {
    horizon(mixing, d, n, t, 1)
}

/// The MC-SGDA variant, with `n j^2` inside the logarithm.
pub fn k_schedule_sgda(mixing: &MixingProfile, d: f64, n: usize, t: usize) -> Result<Vec<usize>> {
    horizon(mixing, d, n, t, 2)
}

/// One realization of the index chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub indices: Vec<usize>,
    pub seed: u64,
    pub initial: Vec<f64>,
}

impl ChainPath {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn uniform_distribution(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Inverse CDF: first index whose cumulative mass exceeds `u`. Rounding slack
/// at the top falls back to the last state carrying mass.
fn invert_cdf(cdf: &[f64], weights: &[f64], u: f64) -> usize {
    match cdf.iter().position(|&c| u < c) {
        Some(k) => k,
        None => weights.iter().rposition(|&w| w > 0.0).unwrap_or(0),
    }
}

/// Samples `i_1 ~ initial`, `i_{t+1} ~ P[i_t, .]` with one uniform draw per step.
pub fn sample_path(p: &TransitionMatrix, t: usize, initial: &[f64], seed: u64) -> Result<ChainPath> {
    let n = p.n();
    if initial.len() != n {
        return Err(Error::invalid(format!(
            "initial distribution has length {}, chain has {n} states",
            initial.len()
        )));
    }
    if initial.iter().any(|&x| !(x >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("initial vector is not a probability distribution"));
    }
    let row_cdfs: Vec<Vec<f64>> = (0..n).map(|i| cumulative(p.row(i))).collect();
    let init_cdf = cumulative(initial);

    let mut rng = rng_from_seed(seed);
    let mut indices = Vec::with_capacity(t);
    if t > 0 {
        let mut cur = invert_cdf(&init_cdf, initial, rng.random::<f64>());
        indices.push(cur);
        for _ in 1..t {
            cur = invert_cdf(&row_cdfs[cur], p.row(cur), rng.random::<f64>());
            indices.push(cur);
        }
    }
    Ok(ChainPath {
        indices,
        seed,
        initial: initial.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn uniform_entries() {
        let p = TransitionMatrix::uniform(2).unwrap();
        assert_eq!(p.as_row_major(), &[0.5, 0.5, 0.5, 0.5]);
        let p = TransitionMatrix::uniform(3).unwrap();
        assert!(p.as_row_major().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-16));
        let p = TransitionMatrix::uniform(1).unwrap();
        assert_eq!(p.as_row_major(), &[1.0]);
        assert!(matches!(TransitionMatrix::uniform(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lazy_cycle_structure() {
        let p = TransitionMatrix::lazy_cycle(4).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(p.row(0), &[third, third, 0.0, third]);
        assert_eq!(p.row(1), &[third, third, third, 0.0]);
        let p3 = TransitionMatrix::lazy_cycle(3).unwrap();
        let u3 = TransitionMatrix::uniform(3).unwrap();
        for (a, b) in p3.as_row_major().iter().zip(u3.as_row_major()) {
            assert_close(*a, *b, 1e-15);
        }
        let p5 = TransitionMatrix::lazy_cycle(5).unwrap();
        // states 1 and 3 (zero-based) are not adjacent
        assert_eq!(p5.get(1, 3), 0.0);
        assert!(TransitionMatrix::lazy_cycle(2).is_err());
    }

    #[test]
    fn random_symmetric_construction() {
        let p = TransitionMatrix::random_symmetric(6, 1.0, 99).unwrap();
        assert!(p.as_row_major().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        let q = TransitionMatrix::random_symmetric(7, 0.3, 5).unwrap();
        assert!(q.is_symmetric());
        // identity permutation, alpha = 0.5, n = 3
        let r = TransitionMatrix::mixture_with_permutation(0.5, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 / 3.0 } else { 1.0 / 6.0 };
                assert_close(r.get(i, j), want, 1e-15);
            }
        }
        assert!(TransitionMatrix::random_symmetric(4, 0.0, 1).is_err());
        assert!(TransitionMatrix::random_symmetric(4, 1.5, 1).is_err());
    }

    #[test]
    fn from_rows_validation() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.0]]).is_ok());
        assert!(TransitionMatrix::from_rows(&[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn uniform_lambda_is_half() {
        for n in [1, 2, 4, 9] {
            let s = analyze(&TransitionMatrix::uniform(n).unwrap()).unwrap();
            assert_close(s.lambda, 0.5, 1e-12);
            assert_eq!(s.k_p, 0);
            assert!(s.symmetric);
        }
    }

    #[test]
    fn lazy_cycle_spectrum() {
        // circulant eigenvalues (1 + 2 cos(2 pi k / n)) / 3
        let s = analyze(&TransitionMatrix::lazy_cycle(4).unwrap()).unwrap();
        let mut re: Vec<f64> = s.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let want = [1.0, 1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in re.iter().zip(want) {
            assert_close(*a, b, 1e-12);
        }
        assert_close(s.lambda, 2.0 / 3.0, 1e-12);
    }

    #[test]
    fn reducible_chain_rejected() {
        let id = TransitionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(analyze(&id), Err(Error::ChainNotMixing { .. })));
        // periodic: deterministic swap
        let swap = TransitionMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(analyze(&swap), Err(Error::ChainNotMixing { .. })));
    }

    #[test]
    fn nonsymmetric_diagonalizable() {
        // half uniform, half a directed 3-cycle: normal, complex eigenvalues
        let p = TransitionMatrix::from_rows(&[
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            vec![1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
            vec![2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        ])
        .unwrap();
        let s = analyze(&p).unwrap();
        assert!(!s.symmetric);
        // non-unit eigenvalues 0.5 * exp(+-2 pi i / 3), modulus 1/2
        assert_close(s.lambda, 0.75, 1e-10);
        let c = s.c_p.unwrap();
        // unitary eigenbasis: sqrt(n - 1) * sqrt(n) * sqrt(n)
        assert_close(c, 2f64.sqrt() * 3.0, 1e-8);
        for x in &s.stationary {
            assert_close(*x, 1.0 / 3.0, 1e-12);
        }
    }

    #[test]
    fn nonuniform_stationary() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let s = analyze(&p).unwrap();
        assert_close(s.stationary[0], 0.75, 1e-12);
        assert_close(s.stationary[1], 0.25, 1e-12);
        let back = left_multiply(&s.stationary, &p);
        for (a, b) in back.iter().zip(&s.stationary) {
            assert_close(*a, *b, 1e-10);
        }
        // eigenvalues 1 and 0.6
        assert_close(s.lambda, 0.8, 1e-12);
    }

    #[test]
    fn defective_matrix_rejected() {
        // eigenvalues {1, -1/5, -1/5} with a single eigenvector for -1/5
        let p = TransitionMatrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.1, 0.0, 0.9], vec![0.0, 0.4, 0.6]]).unwrap();
        assert!(matches!(analyze(&p), Err(Error::UnsupportedMatrix(_))));
    }

    #[test]
    fn deviation_examples() {
        let u = TransitionMatrix::uniform(5).unwrap();
        assert_close(deviation(&u, 1), 0.0, 1e-15);
        assert_close(deviation(&u, 0), 1.0 - 1.0 / 5.0, 1e-15);
        let c = TransitionMatrix::lazy_cycle(4).unwrap();
        assert_close(deviation(&c, 1), 0.25, 1e-15);
        let curve = deviation_curve(&c, 5);
        for (j, v) in curve.iter().enumerate() {
            assert_close(*v, deviation(&c, j), 1e-15);
        }
        // row-sum variant dominates the entrywise one
        for j in 0..5 {
            assert!(deviation_row_sum(&c, j) >= deviation(&c, j));
        }
    }

    #[test]
    fn mixing_time_examples() {
        let cyc = analyze(&TransitionMatrix::lazy_cycle(4).unwrap())
            .unwrap()
            .mixing()
            .unwrap();
        assert_eq!(mixing_time_to(&cyc, 0.01).unwrap(), 17);
        assert_eq!(mixing_time_to(&cyc, 8.0).unwrap(), 0);
        assert_eq!(mixing_time_to(&cyc, 100.0).unwrap(), 0);
        let uni = analyze(&TransitionMatrix::uniform(4).unwrap())
            .unwrap()
            .mixing()
            .unwrap();
        assert_eq!(mixing_time_to(&uni, 0.01).unwrap(), 10);
        assert!(mixing_time_to(&uni, 0.0).is_err());
    }

    #[test]
    fn k_schedule_examples() {
        let cyc = analyze(&TransitionMatrix::lazy_cycle(4).unwrap())
            .unwrap()
            .mixing()
            .unwrap();
        let k = k_schedule(&cyc, 1.0, 4, 40).unwrap();
        assert_eq!(k[0], 1);
        // ceil(log(64 j) / log 1.5) first drops below j at j = 17
        assert_eq!(k[15], 16);
        assert_eq!(k[16], 17.min(((64.0f64 * 17.0).ln() / 1.5f64.ln()).ceil() as usize));
        for (j, w) in k.windows(2).enumerate() {
            assert!(w[0] <= w[1], "not monotone at {j}");
        }
        for (j, &kj) in k.iter().enumerate() {
            assert!(kj <= j + 1);
        }
        let k2 = k_schedule_sgda(&cyc, 1.0, 4, 40).unwrap();
        for (a, b) in k.iter().zip(&k2) {
            assert!(a <= b);
        }
    }

    #[test]
    fn path_sampling_basics() {
        let one = TransitionMatrix::uniform(1).unwrap();
        let path = sample_path(&one, 10, &[1.0], 3).unwrap();
        assert!(path.indices.iter().all(|&i| i == 0));

        // permutation 0 -> 2 -> 1 -> 0
        let perm =
            TransitionMatrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let path = sample_path(&perm, 7, &[1.0, 0.0, 0.0], 11).unwrap();
        assert_eq!(path.indices, vec![0, 2, 1, 0, 2, 1, 0]);

        let p = TransitionMatrix::random_symmetric(8, 0.4, 1).unwrap();
        let init = uniform_distribution(8);
        let a = sample_path(&p, 500, &init, 42).unwrap();
        let b = sample_path(&p, 500, &init, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&p, 500, &init, 43).unwrap();
        assert_ne!(a.indices, c.indices);

        assert!(sample_path(&p, 5, &[0.5, 0.5], 1).is_err());
        assert!(sample_path(&p, 5, &[0.5; 8], 1).is_err());
    }

    #[test]
    fn chain_spec_roundtrip() {
        let spec = ChainSpec::RandomSymmetric {
            n: 5,
            alpha: 0.5,
            seed: 9,
        };
        let text = toml::to_string(&spec).unwrap();
        let back: ChainSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(
            spec.build().unwrap(),
            TransitionMatrix::random_symmetric(5, 0.5, 9).unwrap()
        );
    }
}
