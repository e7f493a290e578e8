//! Sparse multivariate polynomials with real coefficients.

use std::collections::BTreeMap;
use std::fmt;

/// `Σ c_α x^α` stored as exponent vector → coefficient. Zero coefficients are
/// never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    dim: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Poly::zero(dim);
        p.add_term(vec![0; dim], c);
        p
    }

    /// The coordinate map `x_i`.
    pub fn var(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Poly::monomial(e, 1.0)
    }

    pub fn monomial(exp: Vec<u32>, c: f64) -> Self {
        let mut p = Poly::zero(exp.len());
        p.add_term(exp, c);
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs.
    pub fn from_terms(dim: usize, terms: &[(f64, &[u32])]) -> Self {
        let mut p = Poly::zero(dim);
        for (c, e) in terms {
            assert_eq!(e.len(), dim, "exponent length");
            p.add_term(e.to_vec(), *c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn coeff(&self, exp: &[u32]) -> f64 {
        self.terms.get(exp).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, exp: Vec<u32>, c: f64) {
        debug_assert_eq!(exp.len(), self.dim);
        if c == 0.0 {
            return;
        }
        let v = self.terms.get(&exp).copied().unwrap_or(0.0) + c;
        if v == 0.0 {
            self.terms.remove(&exp);
        } else {
            self.terms.insert(exp, v);
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(k, v)| v.powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * e[i] as f64);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim);
        let mut out = Poly::zero(self.dim);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    /// Lie derivative `F·∇p` for a polynomial field `F`.
    pub fn lie_derivative(&self, field: &[Poly]) -> Poly {
        assert_eq!(field.len(), self.dim);
        let mut out = Poly::zero(self.dim);
        for (i, fi) in field.iter().enumerate() {
            out = out.add(&fi.mul(&self.derivative(i)));
        }
        out
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{k}", i + 1)?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        // x1 - x2^2
        let p = Poly::from_terms(2, &[(1.0, &[1, 0]), (-1.0, &[0, 2])]);
        assert_eq!(p.eval(&[3.0, 2.0]), -1.0);
        assert_eq!(p.derivative(1), Poly::from_terms(2, &[(-2.0, &[0, 1])]));
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn cancellation_removes_terms() {
        let x = Poly::var(2, 0);
        assert!(x.add(&x.scale(-1.0)).is_zero());
    }

    #[test]
    fn lie_derivative_of_linear_field() {
        // F = (x1, -x2), p = x1*x2 → F·∇p = x2*x1 - x1*x2 = 0
        let f = [Poly::var(2, 0), Poly::var(2, 1).scale(-1.0)];
        let p = Poly::var(2, 0).mul(&Poly::var(2, 1));
        assert!(p.lie_derivative(&f).is_zero());
    }
}
