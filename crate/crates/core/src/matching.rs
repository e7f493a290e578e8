//! Transformations `h = G²⁻¹ ∘ G¹` from matched eigenfunction stacks, their
//! numerical inversion, the conjugacy defect, push-forward fields and
//! composition.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SampleBox};
use crate::dynsys::{integrate_at, time_grid, IntegratorOptions, SystemSpec};
use crate::error::{Error, Result};
use crate::keig::Eigenfunction;
use crate::linalg::{cond, dist, fd_jacobian, norm};
use crate::par::{self, Exec};

pub type InverseFn = Arc<dyn Fn(&[Complex64]) -> Result<Vec<f64>> + Send + Sync>;
pub type MapFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// A stack `G = [g_{λ₁}, …, g_{λ_d}]` of eigenfunctions.
#[derive(Clone)]
pub struct EigenStack {
    pub entries: Vec<Eigenfunction>,
    pub closed_inverse: Option<InverseFn>,
    pub domain: Domain,
    pub label: String,
}

impl fmt::Debug for EigenStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EigenStack")
            .field("label", &self.label)
            .field("lambdas", &self.lambdas())
            .field("closed_inverse", &self.closed_inverse.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl EigenStack {
    pub fn new(entries: Vec<Eigenfunction>, label: &str) -> Self {
        let mut doms: Vec<Domain> = Vec::new();
        for e in &entries {
            if e.domain != Domain::All && !doms.contains(&e.domain) {
                doms.push(e.domain.clone());
            }
        }
        let domain = match doms.len() {
            0 => Domain::All,
            1 => doms.pop().unwrap(),
            _ => Domain::All_(doms),
        };
        EigenStack { entries, closed_inverse: None, domain, label: label.to_string() }
    }

    pub fn with_inverse(mut self, f: impl Fn(&[Complex64]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.closed_inverse = Some(Arc::new(f));
        self
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn lambdas(&self) -> Vec<Complex64> {
        self.entries.iter().map(|e| e.lambda).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        self.entries.iter().map(|g| g.eval(x)).collect()
    }

    /// Closed-form inverse; errors when the stack has none.
    pub fn invert(&self, z: &[Complex64]) -> Result<Vec<f64>> {
        match &self.closed_inverse {
            Some(f) => f(z),
            None => Err(Error::InvalidArgument(format!("stack `{}` has no closed-form inverse", self.label))),
        }
    }

    /// Real FD Jacobian of `x ↦ G(x)`, stacking real and imaginary parts.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        fd_jacobian(|p| Ok(split(&self.eval(p)?)), x)
    }

    /// Condition number of the stacked Jacobian at `x`.
    pub fn jacobian_cond(&self, x: &[f64]) -> Result<f64> {
        Ok(cond(&self.jacobian(x)?))
    }
}

fn split(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

/// An evaluable map `h` with optional inverse; membership of a point in the
/// domain of `h` is decided per point (the declared descriptor and success
/// of evaluation).
#[derive(Clone)]
pub struct TransformMap {
    pub dim: usize,
    forward: MapFn,
    inverse: Option<MapFn>,
    pub domain: Domain,
    pub label: String,
}

impl fmt::Debug for TransformMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformMap")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("inverse", &self.inverse.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl TransformMap {
    pub fn new(
        dim: usize,
        label: &str,
        domain: Domain,
        forward: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        TransformMap { dim, forward: Arc::new(forward), inverse: None, domain, label: label.to_string() }
    }

    pub fn with_inverse(mut self, inverse: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    pub fn identity(dim: usize) -> Self {
        TransformMap::new(dim, "identity", Domain::All, |x| Ok(x.to_vec())).with_inverse(|y| Ok(y.to_vec()))
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        self.domain.check(x)?;
        let y = (self.forward)(x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("h({x:?})")));
        }
        Ok(y)
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        let inv = self
            .inverse
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("`{}` has no inverse", self.label)))?;
        if y.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: y.len() });
        }
        let x = inv(y)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("h⁻¹({y:?})")));
        }
        Ok(x)
    }

    /// Whether `x` lies in the domain of `h`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.apply(x).is_ok()
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        fd_jacobian(|p| self.apply(p), x)
    }

    /// The map with forward and inverse exchanged.
    pub fn inverted(&self) -> Result<TransformMap> {
        let inv = self
            .inverse
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("`{}` has no inverse", self.label)))?;
        Ok(TransformMap {
            dim: self.dim,
            forward: inv,
            inverse: Some(self.forward.clone()),
            domain: Domain::All,
            label: format!("inverse({})", self.label),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Initial guess for Newton inversion; otherwise a grid search over
    /// `search_box` picks the start.
    pub guess: Option<Vec<f64>>,
    pub search_box: Option<SampleBox>,
    pub grid_points: usize,
    pub eig_tol: f64,
    /// Accepted `‖G²(h(x)) − G¹(x)‖`, relative to `max(1, ‖G¹(x)‖)`.
    pub honesty_tol: f64,
    pub imag_tol: f64,
    pub max_cond: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            newton_tol: 1e-12,
            max_iter: 50,
            guess: None,
            search_box: None,
            grid_points: 21,
            eig_tol: 1e-9,
            honesty_tol: 1e-9,
            imag_tol: 1e-9,
            max_cond: 1e10,
        }
    }
}

fn cnorm(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn cdist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `G(y) = z` for real `y` by Gauss–Newton on the stacked real and
/// imaginary residual, starting from `y0`.
pub fn newton_invert(g: &EigenStack, z: &[Complex64], y0: &[f64], opts: &MatchOptions) -> Result<Vec<f64>> {
    let d = g.dim();
    let target = split(z);
    let scale = cnorm(z).max(1.0);
    let resid = |y: &[f64]| -> Result<Vec<f64>> {
        let v = split(&g.eval(y)?);
        Ok(v.iter().zip(&target).map(|(a, b)| a - b).collect())
    };
    let mut y = y0.to_vec();
    let mut r = resid(&y)?;
    for _ in 0..opts.max_iter {
        let rn = norm(&r);
        if rn <= opts.newton_tol * scale {
            return Ok(y);
        }
        let j = fd_jacobian(resid, &y)?;
        let c = cond(&j);
        if c > opts.max_cond {
            return Err(Error::Singular(format!("stack Jacobian at {y:?} has condition {c:e}")));
        }
        let svd = j.svd(true, true);
        let step = svd
            .solve(&DVector::from_column_slice(&r), 1e-300)
            .map_err(|e| Error::Singular(e.to_string()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = (0..d).map(|i| y[i] - t * step[i]).collect();
            if let Ok(rc) = resid(&cand) {
                if norm(&rc) < rn {
                    y = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if rn <= 1e3 * opts.newton_tol * scale {
                return Ok(y);
            }
            return Err(Error::NoConvergence(format!("Newton inversion stalled at |r| = {rn:e}")));
        }
        if t * norm(step.as_slice()) <= 1e-15 * norm(&y).max(1.0) && norm(&r) <= 1e3 * opts.newton_tol * scale {
            return Ok(y);
        }
    }
    if norm(&r) <= opts.newton_tol * scale {
        Ok(y)
    } else {
        Err(Error::NoConvergence(format!("Newton inversion did not reach {:e} in {} iterations", opts.newton_tol, opts.max_iter)))
    }
}

/// Best grid point of `bx` for `‖G(y) − z‖`.
fn grid_start(g: &EigenStack, z: &[Complex64], bx: &SampleBox, n: usize) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for p in bx.grid(n) {
        if let Ok(v) = g.eval(&p) {
            let e = cdist(&v, z);
            if e.is_finite() && best.as_ref().is_none_or(|b| e < b.0) {
                best = Some((e, p));
            }
        }
    }
    best.map(|b| b.1).ok_or_else(|| Error::NoConvergence("no grid start inside the stack domain".into()))
}

/// `G⁻¹(z)`: closed form when available, else Newton.
pub fn invert_stack(g: &EigenStack, z: &[Complex64], opts: &MatchOptions) -> Result<Vec<f64>> {
    if g.closed_inverse.is_some() {
        return g.invert(z);
    }
    let start = match &opts.guess {
        Some(y0) => y0.clone(),
        None => {
            let bx = opts.search_box.clone().unwrap_or_else(|| SampleBox::cube(g.dim(), -2.0, 2.0));
            grid_start(g, z, &bx, opts.grid_points)?
        }
    };
    newton_invert(g, z, &start, opts)
}

fn one_way(g1: &EigenStack, g2: &EigenStack, x: &[f64], opts: &MatchOptions) -> Result<Vec<f64>> {
    let z = g1.eval(x)?;
    if let Some(v) = z.iter().find(|c| c.im.abs() > opts.imag_tol) {
        return Err(Error::OutsideDomain(format!("G¹({x:?}) has imaginary part {:e}", v.im)));
    }
    let y = invert_stack(g2, &z, opts)?;
    let back = g2.eval(&y)?;
    let err = cdist(&back, &z);
    if !(err <= opts.honesty_tol * cnorm(&z).max(1.0)) {
        return Err(Error::OutsideDomain(format!("G²(h({x:?})) misses G¹({x:?}) by {err:e}")));
    }
    Ok(y)
}

fn check_eigenvalues(g1: &EigenStack, g2: &EigenStack, tol: f64) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::Dimension { expected: g1.dim(), got: g2.dim() });
    }
    for (i, (a, b)) in g1.lambdas().iter().zip(g2.lambdas()).enumerate() {
        if (a - b).norm() > tol {
            return Err(Error::EigenvalueMismatch(format!("entry {i}: {a} vs {b}")));
        }
    }
    Ok(())
}

/// `h = G²⁻¹ ∘ G¹`. The inverse `G¹⁻¹ ∘ G²` is attached as well.
pub fn build_match(g1: &EigenStack, g2: &EigenStack, opts: &MatchOptions) -> Result<TransformMap> {
    check_eigenvalues(g1, g2, opts.eig_tol)?;
    let d = g1.dim();
    let (a1, a2, o1) = (g1.clone(), g2.clone(), opts.clone());
    let (b1, b2, o2) = (g1.clone(), g2.clone(), opts.clone());
    let label = format!("{} -> {}", g1.label, g2.label);
    Ok(TransformMap::new(d, &label, g1.domain.clone(), move |x| one_way(&a1, &a2, x, &o1))
        .with_inverse(move |y| one_way(&b2, &b1, y, &o2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub defect: f64,
    pub retained: usize,
    pub skipped: usize,
    /// Per-sample maximum over time, `NaN` for skipped samples.
    pub per_sample: Vec<f64>,
}

/// `max ‖h(S¹_t x) − S²_t(h(x))‖` over samples and `t_j = j·horizon/steps`.
/// Samples whose trajectories leave either domain are skipped and counted.
pub fn conjugacy_defect(
    h: &TransformMap,
    sys1: &SystemSpec,
    sys2: &SystemSpec,
    samples: &[Vec<f64>],
    horizon: f64,
    steps: usize,
) -> Result<DefectReport> {
    conjugacy_defect_with(Exec::default(), h, sys1, sys2, samples, horizon, steps, IntegratorOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn conjugacy_defect_with(
    exec: Exec,
    h: &TransformMap,
    sys1: &SystemSpec,
    sys2: &SystemSpec,
    samples: &[Vec<f64>],
    horizon: f64,
    steps: usize,
    opts: IntegratorOptions,
) -> Result<DefectReport> {
    if steps == 0 || !horizon.is_finite() {
        return Err(Error::InvalidArgument("steps must be positive and horizon finite".into()));
    }
    let times = time_grid(horizon, steps);
    let per: Vec<Option<f64>> = par::map(exec, samples, |x| {
        let hx = h.apply(x).ok()?;
        let t1 = integrate_at(sys1, x, &times, opts).ok()?;
        let t2 = integrate_at(sys2, &hx, &times, opts).ok()?;
        if t1.terminated_early || t2.terminated_early {
            return None;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in t1.states.iter().zip(&t2.states) {
            worst = worst.max(dist(&h.apply(a).ok()?, b));
        }
        Some(worst)
    });
    let retained = per.iter().filter(|v| v.is_some()).count();
    if retained == 0 {
        return Err(Error::OutsideDomain("every sample left the domain of h".into()));
    }
    Ok(DefectReport {
        defect: per.iter().flatten().fold(0.0, |a, b| a.max(*b)),
        retained,
        skipped: samples.len() - retained,
        per_sample: per.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
    })
}

/// `Dh(h⁻¹(y)) · F¹(h⁻¹(y))`.
pub fn pushforward_field(h: &TransformMap, sys1: &SystemSpec, y: &[f64]) -> Result<Vec<f64>> {
    let x = h.apply_inverse(y)?;
    let j = h.jacobian(&x)?;
    let f = sys1.evaluate_field(&x)?;
    Ok((j * DVector::from_vec(f)).as_slice().to_vec())
}

/// `h_outer ∘ h_inner`. When `probe` is nonempty, at least one probe point
/// must lie in the composed domain.
pub fn compose(outer: &TransformMap, inner: &TransformMap, probe: &[Vec<f64>]) -> Result<TransformMap> {
    if outer.dim != inner.dim {
        return Err(Error::Dimension { expected: inner.dim, got: outer.dim });
    }
    let (o, i) = (outer.clone(), inner.clone());
    let mut c = TransformMap::new(
        inner.dim,
        &format!("{} ∘ {}", outer.label, inner.label),
        inner.domain.clone(),
        move |x| o.apply(&i.apply(x)?),
    );
    if outer.has_inverse() && inner.has_inverse() {
        let (o, i) = (outer.clone(), inner.clone());
        c = c.with_inverse(move |y| i.apply_inverse(&o.apply_inverse(y)?));
    }
    if !probe.is_empty() && !probe.iter().any(|p| c.contains(p)) {
        return Err(Error::OutsideDomain(format!("`{}` is empty on the probe set", c.label)));
    }
    Ok(c)
}
