//! Matching maps from two projected Koopman matrices and a single matched
//! point: `h(z) = Re(B V₂⁻¹ D V₁ Ψ(z))`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::edmd::{left_eigens, pair_spectra, Dictionary, DictKind, KoopmanMatrix, SpectralDecomposition};
use crate::error::{Error, Result};
use crate::linalg::{cond_c, to_complex, CMatrix, CVector};
use crate::matching::TransformMap;

/// A pair of points known to correspond, `z² = h(z¹)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingPoint {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdmdmOptions {
    /// Maximum distance between paired eigenvalues.
    pub pair_tol: f64,
    /// Denominators `|v¹ⱼ·Ψ(z¹)|` below this are rejected.
    pub degenerate_tol: f64,
    pub max_cond: f64,
    /// Largest admissible `|Im h|` on the probe points.
    pub imag_tol: f64,
    /// Keep only the leading `N` dictionary entries.
    pub truncate: Option<usize>,
    /// Points where the imaginary residue is measured (the matching point
    /// is always included).
    pub probe: Vec<Vec<f64>>,
}

impl Default for EdmdmOptions {
    fn default() -> Self {
        EdmdmOptions {
            pair_tol: 1e-6,
            degenerate_tol: 1e-10,
            max_cond: 1e10,
            imag_tol: 1e-6,
            truncate: None,
            probe: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    #[serde(with = "crate::io::complex_vec")]
    pub eigenvalues1: Vec<Complex64>,
    #[serde(with = "crate::io::complex_vec")]
    pub eigenvalues2: Vec<Complex64>,
    pub perm: Vec<usize>,
    pub denominators: Vec<f64>,
    pub cond_v2: f64,
    pub distinct1: bool,
    pub distinct2: bool,
    /// Largest distance between paired eigenvalues.
    pub similarity_residual: f64,
    /// `‖P K₁ − K₂ P‖ / (‖P‖ ‖K₁‖)` with `P = V₂⁻¹ D V₁`.
    pub intertwining_residual: f64,
    pub imag_residue: f64,
}

#[derive(Clone)]
pub struct MatchResult {
    pub d: Vec<Complex64>,
    /// `B V₂⁻¹ D V₁`, d × N.
    pub h_matrix: CMatrix,
    pub h: TransformMap,
    pub diagnostics: MatchDiagnostics,
}

#[derive(Serialize)]
struct MatchResultJson<'a> {
    #[serde(with = "crate::io::complex_vec")]
    d: &'a [Complex64],
    h_matrix: Vec<Vec<[f64; 2]>>,
    diagnostics: &'a MatchDiagnostics,
}

impl Serialize for MatchResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatchResultJson {
            d: &self.d,
            h_matrix: crate::io::complex_rows(&self.h_matrix),
            diagnostics: &self.diagnostics,
        }
        .serialize(s)
    }
}

/// The leading `n` entries of another dictionary.
pub struct Truncated {
    inner: Arc<dyn Dictionary>,
    n: usize,
}

impl Truncated {
    pub fn new(inner: Arc<dyn Dictionary>, n: usize) -> Result<Self> {
        if n == 0 || n > inner.len() {
            return Err(Error::InvalidArgument(format!("truncation {n} outside 1..={}", inner.len())));
        }
        Ok(Truncated { inner, n })
    }
}

impl Dictionary for Truncated {
    fn len(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.inner.eval(x);
        v.truncate(self.n);
        v
    }

    fn fixed_prefix(&self) -> usize {
        self.inner.fixed_prefix().min(self.n)
    }

    fn kind(&self) -> DictKind {
        self.inner.kind()
    }

    fn coordinate_index(&self, i: usize) -> Option<usize> {
        self.inner.coordinate_index(i).filter(|j| *j < self.n)
    }
}

/// Rows of `s2` reordered so that row `j` pairs with row `j` of `s1`.
pub fn align(s2: &SpectralDecomposition, perm: &[usize]) -> CMatrix {
    let n = perm.len();
    let mut v = CMatrix::zeros(n, s2.left_vectors.ncols());
    for (j, &p) in perm.iter().enumerate() {
        v.set_row(j, &s2.left_vectors.row(p));
    }
    v
}

/// `D_jj = (v²_{perm j}·Ψ(z²)) / (v¹_j·Ψ(z¹))`. Also returns the moduli of
/// the denominators.
pub fn compute_d(
    s1: &SpectralDecomposition,
    s2: &SpectralDecomposition,
    perm: &[usize],
    dict: &dyn Dictionary,
    mp: &MatchingPoint,
    degenerate_tol: f64,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let n = dict.len();
    if s1.left_vectors.ncols() != n || s2.left_vectors.ncols() != n || perm.len() != s1.n() {
        return Err(Error::Dimension { expected: n, got: s1.left_vectors.ncols() });
    }
    for z in [&mp.z1, &mp.z2] {
        if z.len() != dict.input_dim() {
            return Err(Error::Dimension { expected: dict.input_dim(), got: z.len() });
        }
    }
    let p1 = dict.eval(&mp.z1);
    let p2 = dict.eval(&mp.z2);
    if p1.iter().chain(&p2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dictionary at the matching point".into()));
    }
    let dens: Vec<Complex64> = (0..s1.n()).map(|j| s1.eigenfunction_value(j, &p1)).collect();
    let mags: Vec<f64> = dens.iter().map(|c| c.norm()).collect();
    if let Some((mode, &magnitude)) = mags.iter().enumerate().find(|(_, m)| **m < degenerate_tol) {
        let bad: Vec<usize> = mags.iter().enumerate().filter(|(_, m)| **m < degenerate_tol).map(|(i, _)| i).collect();
        log::error!("matching point is degenerate for modes {bad:?}");
        return Err(Error::DegenerateMatchingPoint { mode, magnitude });
    }
    let d = perm
        .iter()
        .enumerate()
        .map(|(j, &p)| s2.eigenfunction_value(p, &p2) / dens[j])
        .collect();
    Ok((d, mags))
}

/// `B V₂⁻¹ D V₁` and the conditioning of `V₂`.
pub fn h_matrix(
    b: &DMatrix<f64>,
    v1: &CMatrix,
    v2_aligned: &CMatrix,
    d: &[Complex64],
    max_cond: f64,
) -> Result<(CMatrix, f64)> {
    let c = cond_c(v2_aligned);
    if !(c <= max_cond) {
        return Err(Error::Singular(format!("system-2 eigenvector matrix has condition number {c:e}")));
    }
    let v2inv = v2_aligned
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("system-2 eigenvector matrix".into()))?;
    let dm = CMatrix::from_diagonal(&CVector::from_column_slice(d));
    Ok((to_complex(b) * v2inv * dm * v1, c))
}

fn apply_matrix(m: &CMatrix, psi: &[f64]) -> Vec<Complex64> {
    (0..m.nrows()).map(|i| m.row(i).iter().zip(psi).map(|(a, p)| a * p).sum()).collect()
}

/// Full pipeline: spectra, pairing, `D`, and the reconstructed map.
pub fn edmdm_pipeline(
    k1: &KoopmanMatrix,
    k2: &KoopmanMatrix,
    dict: Arc<dyn Dictionary>,
    mp: &MatchingPoint,
    opts: &EdmdmOptions,
) -> Result<MatchResult> {
    let (k1m, k2m, dict): (DMatrix<f64>, DMatrix<f64>, Arc<dyn Dictionary>) = match opts.truncate {
        Some(n) => {
            if n > k1.n() || n > k2.n() {
                return Err(Error::InvalidArgument(format!("truncation {n} exceeds the matrix size")));
            }
            let t = Truncated::new(dict, n)?;
            (k1.k.view((0, 0), (n, n)).into_owned(), k2.k.view((0, 0), (n, n)).into_owned(), Arc::new(t))
        }
        None => (k1.k.clone(), k2.k.clone(), dict),
    };
    let n = dict.len();
    if k1m.nrows() != n || k2m.nrows() != n {
        return Err(Error::Dimension { expected: n, got: k1m.nrows() });
    }
    if k1.mode != k2.mode {
        return Err(Error::InvalidArgument("Koopman matrices are of different kinds".into()));
    }
    let s1 = left_eigens(&KoopmanMatrix { k: k1m.clone(), ..k1.clone() })?;
    let s2 = left_eigens(&KoopmanMatrix { k: k2m.clone(), ..k2.clone() })?;
    for s in [&s1, &s2] {
        // Triangular bases stay well defined at repeated eigenvalues.
        if !s.distinct && !s.triangular {
            return Err(Error::NonDistinct(s.min_gap));
        }
    }
    let perm = pair_spectra(&s1, &s2, opts.pair_tol)?;
    let (d, denominators) = compute_d(&s1, &s2, &perm, dict.as_ref(), mp, opts.degenerate_tol)?;
    let v2a = align(&s2, &perm);
    let b = dict.selector()?;
    let (hm, cond_v2) = h_matrix(&b, &s1.left_vectors, &v2a, &d, opts.max_cond)?;

    let mut imag_residue: f64 = 0.0;
    for z in std::iter::once(&mp.z1).chain(&opts.probe) {
        let y = apply_matrix(&hm, &dict.eval(z));
        imag_residue = imag_residue.max(y.iter().map(|c| c.im.abs()).fold(0.0, f64::max));
    }
    if !(imag_residue <= opts.imag_tol) {
        return Err(Error::NonFinite(format!("reconstructed map has imaginary residue {imag_residue:e}")));
    }

    // P maps Ψ₁ to Ψ₂∘h; the exact relation is P K₁ = K₂ P.
    let v2inv = v2a.clone().try_inverse().ok_or_else(|| Error::Singular("V₂".into()))?;
    let p = v2inv * CMatrix::from_diagonal(&CVector::from_column_slice(&d)) * &s1.left_vectors;
    let (k1c, k2c) = (to_complex(&k1m), to_complex(&k2m));
    let intertwining_residual =
        (&p * &k1c - &k2c * &p).norm() / (p.norm() * k1c.norm()).max(f64::MIN_POSITIVE);
    let similarity_residual = perm
        .iter()
        .enumerate()
        .map(|(j, &q)| (s1.eigenvalues[j] - s2.eigenvalues[q]).norm())
        .fold(0.0, f64::max);

    let dim = dict.input_dim();
    let (fd, fm) = (dict.clone(), hm.clone());
    let h = TransformMap::new(dim, "edmdm", Domain::All, move |x| {
        Ok(apply_matrix(&fm, &fd.eval(x)).iter().map(|c| c.re).collect())
    });
    Ok(MatchResult {
        d,
        h_matrix: hm,
        h,
        diagnostics: MatchDiagnostics {
            eigenvalues1: s1.eigenvalues.clone(),
            eigenvalues2: s2.eigenvalues.clone(),
            perm,
            denominators,
            cond_v2,
            distinct1: s1.distinct,
            distinct2: s2.distinct,
            similarity_residual,
            intertwining_residual,
            imag_residue,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_system, quad2d_h};
    use crate::domain::SampleBox;
    use crate::edmd::{project_generator, Closure, MonomialDictionary};

    fn ex5() -> (KoopmanMatrix, KoopmanMatrix, Arc<dyn Dictionary>) {
        let lin = MonomialDictionary::linear(2);
        let k1 = project_generator(&default_system("ex5a").unwrap(), &lin, Closure::Strict).unwrap();
        let k2 = project_generator(&default_system("ex5b").unwrap(), &lin, Closure::Strict).unwrap();
        (k1, k2, Arc::new(lin))
    }

    #[test]
    fn example5_h_matrix() {
        let (k1, k2, dict) = ex5();
        let mp = MatchingPoint { z1: vec![1.0, 2.0], z2: vec![3.0, -1.0] };
        let r = edmdm_pipeline(&k1, &k2, dict, &mp, &EdmdmOptions::default()).unwrap();
        let want = [[1.0, 1.0], [1.0, -1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.h_matrix[(i, j)] - Complex64::new(want[i][j], 0.0)).norm() < 1e-12);
            }
        }
        assert!(r.diagnostics.similarity_residual < 1e-12);
        assert!(r.diagnostics.intertwining_residual < 1e-12);
    }

    #[test]
    fn example5_d_with_printed_vectors() {
        // Printed eigenvector rows, listed with eigenvalue +1 first.
        let c = |v: f64| Complex64::new(v, 0.0);
        let s1 = SpectralDecomposition::from_rows(
            vec![c(1.0), c(-1.0)],
            CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(-1.0), c(1.0)]),
        );
        let s2 = SpectralDecomposition::from_rows(
            vec![c(1.0), c(-1.0)],
            CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(1.0)]),
        );
        let mp = MatchingPoint { z1: vec![1.0, 2.0], z2: vec![3.0, -1.0] };
        let (d, _) = compute_d(&s1, &s2, &[0, 1], &MonomialDictionary::linear(2), &mp, 1e-10).unwrap();
        assert_eq!(d, vec![c(1.0), c(-1.0)]);
    }

    #[test]
    fn h_is_invariant_to_row_scaling() {
        let (k1, k2, dict) = ex5();
        let mp = MatchingPoint { z1: vec![1.0, 2.0], z2: vec![3.0, -1.0] };
        let s1 = left_eigens(&k1).unwrap();
        let s2 = left_eigens(&k2).unwrap();
        let perm = pair_spectra(&s1, &s2, 1e-9).unwrap();
        let b = dict.selector().unwrap();
        let (d, _) = compute_d(&s1, &s2, &perm, dict.as_ref(), &mp, 1e-10).unwrap();
        let (h0, _) = h_matrix(&b, &s1.left_vectors, &align(&s2, &perm), &d, 1e10).unwrap();
        let mut t1 = s1.clone();
        let mut t2 = s2.clone();
        t1.left_vectors.row_mut(0).scale_mut(-3.5);
        t2.left_vectors.row_mut(1).apply(|v| *v *= Complex64::new(0.0, 2.0));
        let (d2, _) = compute_d(&t1, &t2, &perm, dict.as_ref(), &mp, 1e-10).unwrap();
        let (h1, _) = h_matrix(&b, &t1.left_vectors, &align(&t2, &perm), &d2, 1e10).unwrap();
        assert!((h0 - h1).norm() < 1e-12);
    }

    #[test]
    fn degenerate_matching_point() {
        let (k1, k2, dict) = ex5();
        let mp = MatchingPoint { z1: vec![1.0, 1.0], z2: vec![2.0, 0.0] };
        let e = edmdm_pipeline(&k1, &k2, dict, &mp, &EdmdmOptions::default()).err().unwrap();
        assert!(matches!(e, Error::DegenerateMatchingPoint { mode: 0, .. }));
    }

    #[test]
    fn example6_truncated_reconstruction() {
        let dict = MonomialDictionary::multinomial(2, 14).unwrap();
        let k1 = project_generator(&default_system("quad2d").unwrap(), &dict, Closure::Truncate).unwrap();
        let k2 = project_generator(&default_system("lindiag").unwrap(), &dict, Closure::Strict).unwrap();
        let mp = MatchingPoint { z1: vec![2.0, 2.0], z2: vec![-2.0, -2.0] };
        let r = edmdm_pipeline(&k1, &k2, Arc::new(dict), &mp, &EdmdmOptions::default()).unwrap();
        let mut err: f64 = 0.0;
        for x in SampleBox::cube(2, -2.0, 2.0).grid(41) {
            let want = quad2d_h(&x);
            let got = r.h.apply(&x).unwrap();
            err = err.max((want[0] - got[0]).abs().max((want[1] - got[1]).abs()));
        }
        assert!(err <= 1e-8, "max error {err:e}");
    }

    #[test]
    fn unmatched_spectra() {
        let (k1, _, dict) = ex5();
        let k2 = KoopmanMatrix::generator(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]));
        let mp = MatchingPoint { z1: vec![1.0, 2.0], z2: vec![3.0, -1.0] };
        let e = edmdm_pipeline(&k1, &k2, dict, &mp, &EdmdmOptions::default()).err().unwrap();
        assert!(matches!(e, Error::Unmatched(_)));
    }
}
