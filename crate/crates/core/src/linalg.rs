//! Small dense linear-algebra helpers on top of nalgebra: finite differences,
//! conditioning, null vectors, matrix functions and assignment.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Central-difference step for a point `x`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-6 * norm(x).max(1.0)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Jacobian of `f: ℝⁿ → ℝᵐ` by central differences; row i is ∂fᵢ.
pub fn fd_jacobian<F>(f: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fd_jacobian_h(f, x, fd_step(x))
}

pub fn fd_jacobian_h<F>(f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
}

/// Gradient of a complex-valued scalar function by central differences.
pub fn fd_gradient_c<F>(f: F, x: &[f64]) -> Result<Vec<Complex64>>
where
    F: Fn(&[f64]) -> Result<Complex64>,
{
    let h = fd_step(x);
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Gradient of a real scalar function with an explicit step.
pub fn fd_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// 2-norm condition number; `inf` for singular matrices.
pub fn cond(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn cond_c(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Eigenvalues of a real square matrix (real Schur form).
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().schur().complex_eigenvalues().iter().copied().collect()
}

/// Unit vector `v` minimising `‖A v‖`, i.e. the right singular vector of the
/// smallest singular value. Returns the vector and that singular value.
pub fn null_vector(a: &CMatrix) -> (CVector, f64) {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let (k, s) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let v = CVector::from_fn(n, |j, _| vt[(k, j)].conj());
    (v, s)
}

/// Scale to unit norm and rotate so the first entry with modulus above
/// `1e-12` (relative) is real and positive.
pub fn canonicalize(v: &mut CVector) {
    let nrm = v.norm();
    if nrm == 0.0 {
        return;
    }
    *v /= Complex64::new(nrm, 0.0);
    let thresh = 1e-12 * v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some(first) = v.iter().find(|c| c.norm() > thresh).copied() {
        let phase = first.conj() / first.norm();
        *v *= phase;
    }
}

/// Full right eigendecomposition `M = V Λ V⁻¹` of a real matrix, computed
/// per eigenvalue from null vectors. Requires distinct eigenvalues.
pub fn eig_right(m: &DMatrix<f64>) -> Result<(Vec<Complex64>, CMatrix)> {
    let n = m.nrows();
    let lam = eigenvalues(m);
    let mc = to_complex(m);
    let mut v = CMatrix::zeros(n, n);
    for (j, l) in lam.iter().enumerate() {
        let a = &mc - CMatrix::identity(n, n) * *l;
        let (x, _) = null_vector(&a);
        v.set_column(j, &x);
    }
    Ok((lam, v))
}

/// Principal matrix logarithm via eigendecomposition (diagonalizable case).
pub fn logm(m: &DMatrix<f64>) -> Result<CMatrix> {
    let n = m.nrows();
    let (lam, v) = eig_right(m)?;
    if lam.iter().any(|l| l.norm() == 0.0) {
        return Err(Error::Singular("logarithm of a singular matrix".into()));
    }
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("eigenvector matrix not invertible".into()))?;
    let d = CMatrix::from_diagonal(&CVector::from_iterator(n, lam.iter().map(|l| l.ln())));
    Ok(v * d * vinv)
}

/// Matrix exponential (nalgebra's Padé scaling-and-squaring).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// algorithm with potentials, O(n³)). Returns `assign[row] = col`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobian_of_linear_map() {
        let j = fd_jacobian(|x| Ok(vec![2.0 * x[0] + x[1], -x[1]]), &[0.3, 0.7]).unwrap();
        assert_relative_eq!(j[(0, 0)], 2.0, epsilon = 1e-9);
        assert_relative_eq!(j[(0, 1)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(j[(1, 1)], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let a = hungarian(&c);
        let cost: f64 = a.iter().enumerate().map(|(i, j)| c[(i, *j)]).sum();
        let mut best = f64::INFINITY;
        for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            best = best.min(p.iter().enumerate().map(|(i, j)| c[(i, *j)]).sum());
        }
        assert_eq!(cost, best);
    }

    #[test]
    fn log_inverts_exp() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, -0.05]);
        let l = logm(&expm(&a)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((l[(i, j)].re - a[(i, j)]).abs() < 1e-10);
                assert!(l[(i, j)].im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn canonical_vector_has_positive_lead() {
        let mut v = CVector::from_vec(vec![Complex64::new(0.0, -2.0), Complex64::new(1.0, 0.0)]);
        canonicalize(&mut v);
        assert!((v.norm() - 1.0).abs() < 1e-14);
        assert!(v[0].im.abs() < 1e-14 && v[0].re > 0.0);
    }
}
