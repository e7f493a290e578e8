//! Finite-dimensional Koopman projections.
//!
//! Convention: for a dictionary `Ψ = (ψ₁, …, ψ_N)` the matrix `K` acts on
//! coefficient rows, `𝒦 ψ_j = Σ_k K_jk ψ_k`, so `Ψ(x′) ≈ K Ψ(x)` for flow
//! pairs and eigenfunctions are `vᵀΨ` for left eigenvectors `vᵀK = λvᵀ`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::SampleBox;
use crate::dynsys::{SamplePairs, SystemSpec};
use crate::error::{Error, Result};
use crate::linalg::{canonicalize, cond, eigenvalues, hungarian, null_vector, to_complex, CMatrix, CVector};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictKind {
    Multinomial,
    Mlp,
    Custom,
}

/// A finite basis `Ψ: ℝᵈ → ℝᴺ`.
pub trait Dictionary: Send + Sync {
    fn len(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// Number of leading entries that are the constant and coordinate maps.
    fn fixed_prefix(&self) -> usize;

    fn kind(&self) -> DictKind;

    /// Index of the entry equal to the coordinate map `z_i`.
    fn coordinate_index(&self, i: usize) -> Option<usize>;

    /// Exponent vectors, for dictionaries made of monomials.
    fn monomials(&self) -> Option<&[Vec<u32>]> {
        None
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N × M` matrix with columns `Ψ(x_m)`.
    fn eval_batch(&self, xs: &[Vec<f64>], exec: Exec) -> DMatrix<f64> {
        let cols = par::map(exec, xs, |x| self.eval(x));
        DMatrix::from_fn(self.len(), xs.len(), |i, j| cols[j][i])
    }

    /// Selection matrix `B` (d × N) with `BΨ(z) = z`.
    fn selector(&self) -> Result<DMatrix<f64>> {
        let d = self.input_dim();
        let mut b = DMatrix::zeros(d, self.len());
        for i in 0..d {
            let j = self
                .coordinate_index(i)
                .ok_or_else(|| Error::InvalidArgument(format!("dictionary lacks the coordinate map z{}", i + 1)))?;
            b[(i, j)] = 1.0;
        }
        Ok(b)
    }
}

/// Cantor pairing `c(m, n) = ½(m+n)(m+n+1) + n`.
pub fn cantor(m: u32, n: u32) -> u64 {
    let s = (m + n) as u64;
    s * (s + 1) / 2 + n as u64
}

/// Inverse of [`cantor`].
pub fn cantor_inv(j: u64) -> (u32, u32) {
    let w = ((((8 * j + 1) as f64).sqrt() - 1.0) / 2.0).floor() as u64;
    // Guard against rounding in the square root.
    let w = (w.saturating_sub(1)..=w + 1).rev().find(|w| w * (w + 1) / 2 <= j).unwrap();
    let n = j - w * (w + 1) / 2;
    ((w - n) as u32, n as u32)
}

/// Dictionary of monomials `z^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialDictionary {
    pub dim: usize,
    pub exps: Vec<Vec<u32>>,
    pub kind: DictKind,
}

impl MonomialDictionary {
    /// Bivariate monomials `ψ_j = z₁^m z₂^n` with `c(m, n) = j` for
    /// `j = 1..=max_index`; the constant `(0, 0)` is excluded.
    pub fn multinomial(d: usize, max_index: usize) -> Result<Self> {
        if d != 2 {
            return Err(Error::InvalidArgument(format!("Cantor-indexed dictionary is bivariate, got d = {d}")));
        }
        if max_index < 2 {
            return Err(Error::InvalidArgument("max_index must be at least 2".into()));
        }
        let exps = (1..=max_index as u64)
            .map(|j| {
                let (m, n) = cantor_inv(j);
                vec![m, n]
            })
            .collect();
        Ok(MonomialDictionary { dim: 2, exps, kind: DictKind::Multinomial })
    }

    /// `(z₁, …, z_d)`.
    pub fn linear(d: usize) -> Self {
        let exps = (0..d)
            .map(|i| {
                let mut e = vec![0; d];
                e[i] = 1;
                e
            })
            .collect();
        MonomialDictionary { dim: d, exps, kind: DictKind::Custom }
    }

    pub fn custom(dim: usize, exps: Vec<Vec<u32>>) -> Result<Self> {
        if exps.iter().any(|e| e.len() != dim) {
            return Err(Error::InvalidArgument("exponent length differs from dimension".into()));
        }
        Ok(MonomialDictionary { dim, exps, kind: DictKind::Custom })
    }

    fn index(&self) -> HashMap<Vec<u32>, usize> {
        self.exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect()
    }
}

impl Dictionary for MonomialDictionary {
    fn len(&self) -> usize {
        self.exps.len()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.exps
            .iter()
            .map(|e| e.iter().zip(x).map(|(k, v)| v.powi(*k as i32)).product())
            .collect()
    }

    fn fixed_prefix(&self) -> usize {
        let mut k = 0;
        for e in &self.exps {
            if e.iter().sum::<u32>() <= 1 {
                k += 1;
            } else {
                break;
            }
        }
        k
    }

    fn kind(&self) -> DictKind {
        self.kind
    }

    fn coordinate_index(&self, i: usize) -> Option<usize> {
        self.exps.iter().position(|e| e.iter().enumerate().all(|(k, v)| *v == u32::from(k == i)))
    }

    fn monomials(&self) -> Option<&[Vec<u32>]> {
        Some(&self.exps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KoopmanMode {
    Generator,
    Discrete { dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KoopmanProvenance {
    Analytic,
    LeastSquares,
    Similarity,
}

/// Projected Koopman operator (or generator) on a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanMatrix {
    pub k: DMatrix<f64>,
    pub mode: KoopmanMode,
    pub provenance: KoopmanProvenance,
}

#[derive(Serialize, Deserialize)]
struct KoopmanJson {
    rows: Vec<Vec<f64>>,
    mode: KoopmanMode,
    provenance: KoopmanProvenance,
}

impl Serialize for KoopmanMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KoopmanJson { rows: crate::io::rows(&self.k), mode: self.mode, provenance: self.provenance }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KoopmanMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = KoopmanJson::deserialize(d)?;
        let k = crate::io::from_rows(&j.rows).map_err(serde::de::Error::custom)?;
        if k.nrows() != k.ncols() {
            return Err(serde::de::Error::custom("Koopman matrix must be square"));
        }
        Ok(KoopmanMatrix { k, mode: j.mode, provenance: j.provenance })
    }
}

impl KoopmanMatrix {
    pub fn generator(k: DMatrix<f64>) -> Self {
        KoopmanMatrix { k, mode: KoopmanMode::Generator, provenance: KoopmanProvenance::Analytic }
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Eigenvalue on the generator scale: `λ = ln μ / dt` (principal branch)
    /// for discrete matrices, unchanged for generators.
    pub fn to_generator_scale(&self, mu: Complex64) -> Complex64 {
        match self.mode {
            KoopmanMode::Generator => mu,
            KoopmanMode::Discrete { dt } => mu.ln() / dt,
        }
    }
}

/// What to do with terms of `F·∇ψ_j` outside the dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Any such term is an error.
    #[default]
    Strict,
    /// Drop them; for triangular generators this yields the leading block.
    Truncate,
}

/// Exact generator matrix from the polynomial field: row `j` holds the
/// coefficients of `F·∇ψ_j` in the dictionary.
pub fn project_generator(sys: &SystemSpec, dict: &MonomialDictionary, closure: Closure) -> Result<KoopmanMatrix> {
    let field = sys
        .polynomial
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no polynomial form", sys.id)))?;
    if dict.dim != sys.dim {
        return Err(Error::Dimension { expected: sys.dim, got: dict.dim });
    }
    let idx = dict.index();
    let n = dict.len();
    let mut k = DMatrix::zeros(n, n);
    for (j, e) in dict.exps.iter().enumerate() {
        let psi = crate::poly::Poly::monomial(e.clone(), 1.0);
        let lie = psi.lie_derivative(field);
        for (term, c) in lie.terms() {
            match idx.get(term) {
                Some(&col) => k[(j, col)] += c,
                None if closure == Closure::Truncate => {}
                None => {
                    return Err(Error::Closure(format!(
                        "F·∇ψ_{} contains {c}·z^{term:?}, which is not in the dictionary",
                        j + 1
                    )))
                }
            }
        }
    }
    Ok(KoopmanMatrix::generator(k))
}

/// Least-squares Koopman matrix from flow pairs with ridge regularisation:
/// `K = Aᵀ (G + ridge·I)⁻¹` with `G = mean Ψ(x)Ψ(x)ᵀ`, `A = mean Ψ(x)Ψ(x′)ᵀ`.
pub fn edmd_fit(pairs: &SamplePairs, dict: &dyn Dictionary, ridge: f64) -> Result<KoopmanMatrix> {
    edmd_fit_with(Exec::default(), pairs, dict, ridge)
}

pub fn edmd_fit_with(exec: Exec, pairs: &SamplePairs, dict: &dyn Dictionary, ridge: f64) -> Result<KoopmanMatrix> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no sample pairs".into()));
    }
    let px = dict.eval_batch(&pairs.x, exec);
    let py = dict.eval_batch(&pairs.x_next, exec);
    let k = fit_from_features(&px, &py, ridge)?;
    Ok(KoopmanMatrix { k, mode: KoopmanMode::Discrete { dt: pairs.dt }, provenance: KoopmanProvenance::LeastSquares })
}

/// Gram and cross moments `(G, A)` from feature matrices (`N × M`).
pub fn moments(px: &DMatrix<f64>, py: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = px.ncols() as f64;
    (px * px.transpose() / m, px * py.transpose() / m)
}

pub fn fit_from_features(px: &DMatrix<f64>, py: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
    }
    let (n, m) = px.shape();
    if m < n {
        log::warn!("EDMD fit is underdetermined: {m} samples for {n} dictionary entries");
    }
    let (g, a) = moments(px, py);
    let reg = g + DMatrix::identity(n, n) * ridge;
    let c = cond(&reg);
    if !(c < 1e14) {
        return Err(Error::Singular(format!("Gram matrix condition number {c:e}")));
    }
    let sol = reg.lu().solve(&a).ok_or_else(|| Error::Singular("Gram matrix".into()))?;
    Ok(sol.transpose())
}

/// Smallest singular value of the probe Gram matrix `mean Ψ(x)Ψ(x)ᵀ`.
pub fn gram_min_singular(dict: &dyn Dictionary, probe: &[Vec<f64>]) -> f64 {
    let p = dict.eval_batch(probe, Exec::default());
    let g = &p * p.transpose() / probe.len() as f64;
    g.svd(false, false).singular_values.min()
}

/// Linear-independence check on a probe set of about 200 points.
pub fn check_independence(dict: &dyn Dictionary, bx: &SampleBox) -> Result<f64> {
    let per_axis = (200f64.powf(1.0 / dict.input_dim() as f64)).ceil() as usize;
    let s = gram_min_singular(dict, &bx.grid(per_axis));
    if s > 1e-10 {
        Ok(s)
    } else {
        Err(Error::Singular(format!("dictionary entries are dependent on the probe grid (σ_min = {s:e})")))
    }
}

/// Left eigendecomposition `vⱼᵀK = λⱼvⱼᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    #[serde(with = "crate::io::complex_vec")]
    pub eigenvalues: Vec<Complex64>,
    #[serde(with = "cmatrix_rows")]
    pub left_vectors: CMatrix,
    pub distinct: bool,
    pub min_gap: f64,
    /// Basis built by forward substitution on a triangular matrix.
    pub triangular: bool,
}

mod cmatrix_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::io::complex_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(CMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
    }
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn row(&self, j: usize) -> CVector {
        self.left_vectors.row(j).transpose()
    }

    /// `vⱼᵀ Ψ(z)`.
    pub fn eigenfunction_value(&self, j: usize, psi: &[f64]) -> Complex64 {
        self.left_vectors.row(j).iter().zip(psi).map(|(v, p)| v * p).sum()
    }

    /// `max_j ‖vⱼᵀK − λⱼvⱼᵀ‖`.
    pub fn residual(&self, k: &DMatrix<f64>) -> f64 {
        let kc = to_complex(k);
        (0..self.n())
            .map(|j| {
                let v = self.left_vectors.row(j);
                (v * &kc - v * self.eigenvalues[j]).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Builds a decomposition from given rows (no canonicalisation).
    pub fn from_rows(eigenvalues: Vec<Complex64>, left_vectors: CMatrix) -> Self {
        let min_gap = min_gap(&eigenvalues);
        SpectralDecomposition { eigenvalues, left_vectors, distinct: min_gap > 0.0, min_gap, triangular: false }
    }
}

fn min_gap(l: &[Complex64]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..l.len() {
        for j in i + 1..l.len() {
            g = g.min((l[i] - l[j]).norm());
        }
    }
    g
}

fn is_upper_triangular(k: &DMatrix<f64>) -> bool {
    let scale = k.norm().max(f64::MIN_POSITIVE);
    (0..k.nrows()).all(|i| (0..i).all(|j| k[(i, j)].abs() <= 1e-14 * scale))
}

/// Left eigenvector for diagonal entry `j` of an upper-triangular `K` by
/// forward substitution: `v_i = 0` for `i < j`, `v_j = 1`, and
/// `v_k (λ − K_kk) = Σ_{j≤i<k} v_i K_ik`. At resonances (`λ = K_kk`) the
/// entry is set to zero, which requires the right-hand side to vanish.
fn triangular_left_vector(k: &DMatrix<f64>, j: usize) -> Result<CVector> {
    let n = k.nrows();
    let lam = k[(j, j)];
    let scale = k.norm().max(1.0);
    let mut v = vec![0.0; n];
    v[j] = 1.0;
    for c in j + 1..n {
        let rhs: f64 = (j..c).map(|i| v[i] * k[(i, c)]).sum();
        let den = lam - k[(c, c)];
        if den.abs() <= 1e-12 * scale {
            let mag: f64 = (j..c).map(|i| (v[i] * k[(i, c)]).abs()).sum::<f64>().max(1.0);
            if rhs.abs() > 1e-10 * mag {
                return Err(Error::NonDistinct(0.0));
            }
            v[c] = 0.0;
        } else {
            v[c] = rhs / den;
        }
    }
    Ok(CVector::from_iterator(n, v.into_iter().map(|x| Complex64::new(x, 0.0))))
}

/// Full left eigendecomposition, sorted by `(Re λ, Im λ)` (stable, so ties
/// keep index order). Upper-triangular matrices use the triangular
/// canonical basis, which stays well defined at resonant eigenvalues.
/// Rows are scaled to unit norm with the first nonzero entry real positive.
pub fn left_eigens(km: &KoopmanMatrix) -> Result<SpectralDecomposition> {
    let k = &km.k;
    let n = k.nrows();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Koopman matrix".into()));
    }
    let triangular = is_upper_triangular(k);
    let (lams, vecs): (Vec<Complex64>, Vec<CVector>) = if triangular {
        let mut vs = Vec::with_capacity(n);
        for j in 0..n {
            vs.push(triangular_left_vector(k, j)?);
        }
        ((0..n).map(|j| Complex64::new(k[(j, j)], 0.0)).collect(), vs)
    } else {
        let lams = eigenvalues(k);
        if lams.len() != n || lams.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
            return Err(Error::NoConvergence("eigenvalue solver failed".into()));
        }
        let kt = to_complex(&k.transpose());
        let vs = lams
            .iter()
            .map(|l| null_vector(&(&kt - CMatrix::identity(n, n) * *l)).0)
            .collect();
        (lams, vs)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        lams[a].re.total_cmp(&lams[b].re).then(lams[a].im.total_cmp(&lams[b].im))
    });
    let mut left = CMatrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    for (row, &i) in order.iter().enumerate() {
        let mut v = vecs[i].clone();
        canonicalize(&mut v);
        left.set_row(row, &v.transpose());
        sorted.push(lams[i]);
    }
    let gap = min_gap(&sorted);
    let distinct = gap >= 1e-8 * k.norm().max(f64::MIN_POSITIVE);
    Ok(SpectralDecomposition { eigenvalues: sorted, left_vectors: left, distinct, min_gap: gap, triangular })
}

/// Pairs eigenvalues of `s1` with those of `s2` by minimum total distance;
/// `perm[j]` is the index in `s2` matched with entry `j` of `s1`. Ties are
/// broken by index proximity. When both spectra have the same numbers of
/// real eigenvalues and conjugate pairs, real eigenvalues are paired among
/// themselves and conjugate pairs with conjugate pairs, so that the
/// reconstructed map of a real system stays real.
pub fn pair_spectra(s1: &SpectralDecomposition, s2: &SpectralDecomposition, tol: f64) -> Result<Vec<usize>> {
    let n = s1.n();
    if s2.n() != n {
        return Err(Error::Dimension { expected: n, got: s2.n() });
    }
    let (l1, l2) = (&s1.eigenvalues, &s2.eigenvalues);
    let scale = l1.iter().chain(l2).map(|l| l.norm()).fold(1.0, f64::max);
    let eps = 1e-13 * scale / n.max(1) as f64;
    let assign = |rows: &[usize], cols: &[usize]| -> Vec<usize> {
        let cost = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            let (a, b) = (rows[i], cols[j]);
            (l1[a] - l2[b]).norm() + eps * (a as f64 - b as f64).abs()
        });
        hungarian(&cost).into_iter().map(|j| cols[j]).collect()
    };
    let perm = match (conjugate_classes(l1, scale), conjugate_classes(l2, scale)) {
        (Some(c1), Some(c2)) if c1.real.len() == c2.real.len() && c1.upper.len() == c2.upper.len() => {
            let mut perm = vec![0; n];
            for (i, j) in c1.real.iter().zip(assign(&c1.real, &c2.real)) {
                perm[*i] = j;
            }
            let up1: Vec<usize> = c1.upper.iter().map(|p| p.0).collect();
            let up2: Vec<usize> = c2.upper.iter().map(|p| p.0).collect();
            for (k, j) in assign(&up1, &up2).into_iter().enumerate() {
                let (i, ic) = c1.upper[k];
                let jc = c2.upper.iter().find(|p| p.0 == j).unwrap().1;
                perm[i] = j;
                perm[ic] = jc;
            }
            perm
        }
        _ => assign(&(0..n).collect::<Vec<_>>(), &(0..n).collect::<Vec<_>>()),
    };
    for (j, &p) in perm.iter().enumerate() {
        let d = (l1[j] - l2[p]).norm();
        if d > tol {
            return Err(Error::Unmatched(format!(
                "λ¹_{j} = {} has no partner within {tol:e} (closest paired: {}, distance {d:e})",
                l1[j], l2[p]
            )));
        }
    }
    Ok(perm)
}

struct ConjugateClasses {
    real: Vec<usize>,
    /// `(upper, lower)` index pairs with `λ_lower = conj(λ_upper)`.
    upper: Vec<(usize, usize)>,
}

/// Splits a spectrum into real eigenvalues and conjugate pairs; `None` if
/// it is not closed under conjugation.
fn conjugate_classes(l: &[Complex64], scale: f64) -> Option<ConjugateClasses> {
    let tol = 1e-12 * scale;
    let mut real = Vec::new();
    let mut upper = Vec::new();
    let mut used = vec![false; l.len()];
    for i in 0..l.len() {
        if l[i].im.abs() <= tol {
            real.push(i);
            used[i] = true;
        }
    }
    for i in 0..l.len() {
        if used[i] || l[i].im < 0.0 {
            continue;
        }
        let j = (0..l.len())
            .filter(|&j| !used[j] && l[j].im < 0.0)
            .min_by(|&a, &b| (l[a] - l[i].conj()).norm().total_cmp(&(l[b] - l[i].conj()).norm()))?;
        if (l[j] - l[i].conj()).norm() > 1e-8 * scale {
            return None;
        }
        used[i] = true;
        used[j] = true;
        upper.push((i, j));
    }
    used.iter().all(|u| *u).then_some(ConjugateClasses { real, upper })
}

/// Serializable dictionary description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictSpec {
    Multinomial { max_index: usize },
    Linear { dim: usize },
    Monomials { dim: usize, exponents: Vec<Vec<u32>> },
}

impl DictSpec {
    pub fn build(&self) -> Result<MonomialDictionary> {
        match self {
            DictSpec::Multinomial { max_index } => MonomialDictionary::multinomial(2, *max_index),
            DictSpec::Linear { dim } => Ok(MonomialDictionary::linear(*dim)),
            DictSpec::Monomials { dim, exponents } => MonomialDictionary::custom(*dim, exponents.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_system, system};
    use crate::dynsys::sample_pairs;

    #[test]
    fn cantor_examples() {
        assert_eq!(cantor(1, 0), 1);
        assert_eq!(cantor(0, 1), 2);
        assert_eq!(cantor(2, 0), 3);
        for j in 0..500 {
            let (m, n) = cantor_inv(j);
            assert_eq!(cantor(m, n), j);
        }
    }

    #[test]
    fn multinomial_first_nine() {
        let d = MonomialDictionary::multinomial(2, 9).unwrap();
        let want: [[u32; 2]; 9] = [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2], [3, 0], [2, 1], [1, 2], [0, 3]];
        for (e, w) in d.exps.iter().zip(want) {
            assert_eq!(e.as_slice(), w.as_slice());
        }
        assert_eq!(d.eval(&[1.0, 1.0]), vec![1.0; 9]);
        assert!(MonomialDictionary::multinomial(3, 9).is_err());
        assert_eq!(d.fixed_prefix(), 2);
    }

    #[test]
    fn example5_generators() {
        let lin = MonomialDictionary::linear(2);
        let k1 = project_generator(&default_system("ex5a").unwrap(), &lin, Closure::Strict).unwrap();
        let k2 = project_generator(&default_system("ex5b").unwrap(), &lin, Closure::Strict).unwrap();
        assert_eq!(k1.k, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(k2.k, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn lindiag_generator_is_diagonal() {
        let (a1, a2) = (0.7, -0.3);
        let s = system("lindiag", &[("a1".into(), a1), ("a2".into(), a2)].into()).unwrap();
        let d = MonomialDictionary::multinomial(2, 9).unwrap();
        let k = project_generator(&s, &d, Closure::Strict).unwrap().k;
        for j in 0..9 {
            let (m, n) = cantor_inv(j as u64 + 1);
            for c in 0..9 {
                let want = if c == j { m as f64 * a1 + n as f64 * a2 } else { 0.0 };
                assert!((k[(j, c)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closure_violation_reported() {
        let d = MonomialDictionary::multinomial(2, 5).unwrap();
        let e = project_generator(&default_system("quad2d").unwrap(), &d, Closure::Strict).unwrap_err();
        assert!(matches!(e, Error::Closure(_)));
    }

    #[test]
    fn fit_recovers_linear_flow() {
        let s = system("lindiag", &[("a1".into(), 1.0), ("a2".into(), -1.0)].into()).unwrap();
        let p = sample_pairs(&s, &SampleBox::cube(2, -1.0, 1.0), 50, 0.1, 3).unwrap();
        let k = edmd_fit(&p, &MonomialDictionary::linear(2), 0.0).unwrap().k;
        let want = DMatrix::from_row_slice(2, 2, &[0.1f64.exp(), 0.0, 0.0, (-0.1f64).exp()]);
        assert!((k - want).amax() < 1e-8);
    }

    #[test]
    fn fit_zero_dt_is_identity_and_empty_is_error() {
        let s = default_system("vdp").unwrap();
        let p = sample_pairs(&s, &SampleBox::cube(2, -1.0, 1.0), 30, 0.0, 3).unwrap();
        let k = edmd_fit(&p, &MonomialDictionary::multinomial(2, 5).unwrap(), 0.0).unwrap().k;
        assert!((k - DMatrix::identity(5, 5)).amax() < 1e-12);
        let e = sample_pairs(&s, &SampleBox::cube(2, -1.0, 1.0), 0, 0.1, 3).unwrap();
        assert!(edmd_fit(&e, &MonomialDictionary::linear(2), 0.0).is_err());
    }

    #[test]
    fn left_eigens_examples() {
        let k1 = KoopmanMatrix::generator(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let s = left_eigens(&k1).unwrap();
        assert!((s.eigenvalues[0] + 1.0).norm() < 1e-12 && (s.eigenvalues[1] - 1.0).norm() < 1e-12);
        // Rows proportional to (−1, 1) and (1, 1).
        let r0 = s.row(0);
        assert!((r0[0] + r0[1]).norm() < 1e-12);
        let r1 = s.row(1);
        assert!((r1[0] - r1[1]).norm() < 1e-12);
        assert!(s.residual(&k1.k) < 1e-12);

        let k2 = KoopmanMatrix::generator(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let s2 = left_eigens(&k2).unwrap();
        assert_eq!(s2.row(0)[0].norm(), 0.0);
        assert_eq!(s2.row(1)[1].norm(), 0.0);

        let k3 = KoopmanMatrix::generator(DMatrix::from_element(1, 1, 3.0));
        let s3 = left_eigens(&k3).unwrap();
        assert_eq!(s3.eigenvalues[0], Complex64::new(3.0, 0.0));
        assert_eq!(s3.row(0)[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn pairing_examples() {
        let mk = |l: &[f64]| {
            SpectralDecomposition::from_rows(
                l.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
                CMatrix::identity(l.len(), l.len()),
            )
        };
        assert_eq!(pair_spectra(&mk(&[1.0, 2.0]), &mk(&[1.0, 2.0]), 1e-9).unwrap(), vec![0, 1]);
        assert_eq!(pair_spectra(&mk(&[1.0, -1.0]), &mk(&[-1.0, 1.0]), 1e-9).unwrap(), vec![1, 0]);
        assert!(pair_spectra(&mk(&[1.0, 2.0]), &mk(&[5.0, 6.0]), 0.1).is_err());
    }

    #[test]
    fn pairing_respects_conjugation() {
        let c = Complex64::new;
        let mk = |l: Vec<Complex64>| {
            let n = l.len();
            SpectralDecomposition::from_rows(l, CMatrix::identity(n, n))
        };
        // Unconstrained matching would send 0.9 + 0.1i to the real 0.95.
        let s1 = mk(vec![c(0.9, -0.1), c(0.9, 0.1), c(0.5, 0.0)]);
        let s2 = mk(vec![c(0.5, 0.0), c(0.95, 0.0), c(0.3, 0.0)]);
        let p = pair_spectra(&s1, &s2, f64::INFINITY).unwrap();
        let mut q = p.clone();
        q.sort();
        assert_eq!(q, vec![0, 1, 2]);
        let s3 = mk(vec![c(0.3, 0.0), c(0.85, 0.2), c(0.85, -0.2)]);
        let p = pair_spectra(&s1, &s3, f64::INFINITY).unwrap();
        assert_eq!(p, vec![2, 1, 0]);
    }

    #[test]
    fn koopman_json_round_trip() {
        let k = KoopmanMatrix::generator(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<KoopmanMatrix>(&s).unwrap(), k);
        let sd = left_eigens(&k).unwrap();
        let v: serde_json::Value = serde_json::to_value(&sd).unwrap();
        let l0 = &v["eigenvalues"][0];
        assert!((l0[0].as_f64().unwrap() + 1.0).abs() < 1e-12 && l0[1].as_f64().unwrap().abs() < 1e-12);
        let back: SpectralDecomposition = serde_json::from_value(v).unwrap();
        assert_eq!(back.left_vectors, sd.left_vectors);
    }
}
