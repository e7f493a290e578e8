//! Koopman eigenfunctions: closed forms, 1D integrating-factor quadrature,
//! the method of characteristics and the PDE residual `∇g·F − λg`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::domain::Domain;
use crate::dynsys::{integrate_at, IntegratorOptions, SystemSpec};
use crate::error::{Error, Result};
use crate::linalg::{fd_gradient, fd_gradient_c, fd_step, norm};
use crate::matching::EigenStack;
use crate::par::{self, Exec};

pub type EvalFn = Arc<dyn Fn(&[f64]) -> Result<Complex64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Quadrature1d,
    Characteristics,
    EdmdReconstructed,
}

/// A Koopman eigenpair `(λ, g)`.
#[derive(Clone)]
pub struct Eigenfunction {
    pub lambda: Complex64,
    eval: EvalFn,
    pub domain: Domain,
    pub provenance: Provenance,
}

impl fmt::Debug for Eigenfunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Eigenfunction")
            .field("lambda", &self.lambda)
            .field("domain", &self.domain)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl Eigenfunction {
    pub fn new(
        lambda: Complex64,
        domain: Domain,
        provenance: Provenance,
        eval: impl Fn(&[f64]) -> Result<Complex64> + Send + Sync + 'static,
    ) -> Self {
        Eigenfunction { lambda, eval: Arc::new(eval), domain, provenance }
    }

    /// Real-valued closed form.
    pub fn real(lambda: f64, domain: Domain, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Eigenfunction::new(Complex64::new(lambda, 0.0), domain, Provenance::ClosedForm, move |x| {
            Ok(Complex64::new(f(x), 0.0))
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        self.domain.check(x)?;
        let v = (self.eval)(x)?;
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite(format!("g({x:?})")));
        }
        Ok(v)
    }

    /// `c·g`, again an eigenfunction for the same λ.
    pub fn scaled(&self, c: Complex64) -> Self {
        let inner = self.eval.clone();
        Eigenfunction { eval: Arc::new(move |x| Ok(c * inner(x)?)), ..self.clone() }
    }
}

/// Initial data on a hypersurface `Σ = {implicit = 0}` transverse to the flow.
#[derive(Clone)]
pub struct InitialSurface {
    pub dim: usize,
    pub implicit: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub data: Arc<dyn Fn(&[f64]) -> Result<Complex64> + Send + Sync>,
    pub transversality_check: bool,
}

impl InitialSurface {
    pub fn new(
        dim: usize,
        implicit: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        data: impl Fn(&[f64]) -> Result<Complex64> + Send + Sync + 'static,
    ) -> Self {
        InitialSurface { dim, implicit: Arc::new(implicit), data: Arc::new(data), transversality_check: true }
    }

    /// Constant data `g₀ ≡ c`.
    pub fn constant(dim: usize, implicit: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, c: Complex64) -> Self {
        InitialSurface::new(dim, implicit, move |_| Ok(c))
    }
}

impl fmt::Debug for InitialSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSurface")
            .field("dim", &self.dim)
            .field("transversality_check", &self.transversality_check)
            .finish()
    }
}

// 15-point Kronrod nodes on [0, 1] (symmetric), with 7-point Gauss weights
// on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` on `[a, b]` to absolute
/// error `tol`. `f` may veto a node by returning an error.
pub fn gauss_kronrod<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    fn rec<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c)?;
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        for i in 0..7 {
            let dx = h * XGK[i];
            let s = f(c - dx)? + f(c + dx)?;
            k += WGK[i] * s;
            if i % 2 == 1 {
                g += WG[i / 2] * s;
            }
        }
        let (k, g) = (k * h, g * h);
        if (k - g).abs() <= tol.max(1e-15 * k.abs()) {
            return Ok(k);
        }
        if depth >= 40 {
            return Err(Error::NoConvergence(format!("quadrature on [{a}, {b}]")));
        }
        Ok(rec(f, a, c, 0.5 * tol, depth + 1)? + rec(f, c, b, 0.5 * tol, depth + 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    rec(f, a, b, tol, 0)
}

/// `g(x) = exp(λ ∫_{x_ref}^{x} ds / F(s))`, normalised so `g(x_ref) = 1`.
pub fn keig_1d_quadrature(sys: &SystemSpec, lambda: Complex64, x_ref: f64, x: f64) -> Result<Complex64> {
    if sys.dim != 1 {
        return Err(Error::Dimension { expected: 1, got: sys.dim });
    }
    let f_ref = sys.evaluate_field(&[x_ref])?[0];
    let f_end = sys.evaluate_field(&[x])?[0];
    let sign = f_ref.signum();
    let check = |s: f64, v: f64| {
        if v.abs() < 1e-12 || v.signum() != sign {
            Err(Error::SingularPath { at: s })
        } else {
            Ok(v)
        }
    };
    check(x_ref, f_ref)?;
    check(x, f_end)?;
    let inv = |s: f64| -> Result<f64> {
        let v = match sys.evaluate_field(&[s]) {
            Ok(v) => v[0],
            Err(_) => return Err(Error::SingularPath { at: s }),
        };
        Ok(1.0 / check(s, v)?)
    };
    let integral = gauss_kronrod(&inv, x_ref, x, 1e-12)?;
    Ok((lambda * integral).exp())
}

/// Quadrature eigenfunction as an [`Eigenfunction`] on the half-line
/// containing `x_ref` where `F` keeps its sign.
pub fn quadrature_eigenfunction(sys: &SystemSpec, lambda: Complex64, x_ref: f64) -> Eigenfunction {
    let s = sys.clone();
    Eigenfunction::new(lambda, sys.domain.clone(), Provenance::Quadrature1d, move |x| {
        keig_1d_quadrature(&s, lambda, x_ref, x[0])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicsOptions {
    pub t_max: f64,
    /// Scan step for locating the first sign change of the implicit function.
    pub scan_dt: f64,
    pub integrator: IntegratorOptions,
}

impl Default for CharacteristicsOptions {
    fn default() -> Self {
        CharacteristicsOptions {
            t_max: 50.0,
            scan_dt: 0.05,
            integrator: IntegratorOptions { atol: 1e-12, rtol: 1e-12, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicsResult {
    pub value: Complex64,
    /// Crossing point on Σ.
    pub sigma: Vec<f64>,
    /// Signed time with `σ = S_τ(x)`.
    pub tau: f64,
}

fn advance(sys: &SystemSpec, x: &[f64], t: f64, opts: IntegratorOptions) -> Option<Vec<f64>> {
    if t == 0.0 {
        return Some(x.to_vec());
    }
    let tr = integrate_at(sys, x, &[t], opts).ok()?;
    (!tr.terminated_early).then(|| tr.last().to_vec())
}

/// First crossing of `Σ` along the orbit of `x` in direction `dir`: returns
/// `(τ, σ)` with bracketing state at the start of the crossing interval.
fn scan_crossing(
    sys: &SystemSpec,
    surface: &InitialSurface,
    x: &[f64],
    dir: f64,
    opts: &CharacteristicsOptions,
) -> Result<Option<(f64, Vec<f64>)>> {
    let phi = |p: &[f64]| (surface.implicit)(p);
    let mut t = 0.0;
    let mut y = x.to_vec();
    let mut v = phi(&y);
    while t < opts.t_max {
        let dt = opts.scan_dt.min(opts.t_max - t);
        let Some(y1) = advance(sys, &y, dir * dt, opts.integrator) else {
            return Ok(None);
        };
        let v1 = phi(&y1);
        if v1 == 0.0 {
            return Ok(Some((dir * (t + dt), y1)));
        }
        if v.signum() != v1.signum() {
            // Illinois regula falsi on s ∈ [0, dt] from y.
            let (mut a, mut b, mut fa, mut fb) = (0.0, dt, v, v1);
            let mut side = 0;
            let mut best = (dt, y1.clone(), v1);
            for _ in 0..200 {
                let s = (a * fb - b * fa) / (fb - fa);
                let s = if s <= a || s >= b { 0.5 * (a + b) } else { s };
                let ys = advance(sys, &y, dir * s, opts.integrator)
                    .ok_or_else(|| Error::NoConvergence("characteristic left the domain".into()))?;
                let fs = phi(&ys);
                if fs.abs() < best.2.abs() {
                    best = (s, ys.clone(), fs);
                }
                if fs.abs() <= 1e-10 || (b - a) < 1e-15 * (t + dt).max(1.0) {
                    break;
                }
                if fs.signum() == fb.signum() {
                    b = s;
                    fb = fs;
                    if side == -1 {
                        fa *= 0.5;
                    }
                    side = -1;
                } else {
                    a = s;
                    fa = fs;
                    if side == 1 {
                        fb *= 0.5;
                    }
                    side = 1;
                }
            }
            if best.2.abs() > 1e-10 {
                return Err(Error::NoConvergence(format!("crossing bisection stalled at |φ| = {:e}", best.2.abs())));
            }
            return Ok(Some((dir * (t + best.0), best.1)));
        }
        t += dt;
        y = y1;
        v = v1;
    }
    Ok(None)
}

/// Evaluates the eigenfunction determined by data on `Σ` at `x`: finds the
/// nearest crossing `σ = S_τ(x)` of Σ (searching both time directions up to
/// `t_max`) and returns `g₀(σ) e^{−λτ}`.
pub fn keig_characteristics(
    sys: &SystemSpec,
    lambda: Complex64,
    surface: &InitialSurface,
    x: &[f64],
    opts: &CharacteristicsOptions,
) -> Result<CharacteristicsResult> {
    if x.len() != sys.dim || surface.dim != sys.dim {
        return Err(Error::Dimension { expected: sys.dim, got: x.len() });
    }
    sys.domain.check(x)?;
    let (tau, sigma) = if (surface.implicit)(x).abs() <= 1e-10 {
        (0.0, x.to_vec())
    } else {
        let fwd = scan_crossing(sys, surface, x, 1.0, opts)?;
        let bwd = scan_crossing(sys, surface, x, -1.0, opts)?;
        match (fwd, bwd) {
            (Some(f), Some(b)) => {
                if f.0.abs() <= b.0.abs() {
                    f
                } else {
                    b
                }
            }
            (Some(f), None) => f,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::NoCrossing(opts.t_max)),
        }
    };
    if surface.transversality_check {
        let f = sys.evaluate_field(&sigma)?;
        let grad = fd_gradient(|p| Ok((surface.implicit)(p)), &sigma, fd_step(&sigma))?;
        let dot: f64 = f.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if dot.abs() <= 1e-8 * norm(&f) * norm(&grad) {
            return Err(Error::Tangential(sigma));
        }
    }
    let g0 = (surface.data)(&sigma)?;
    Ok(CharacteristicsResult { value: g0 * (-lambda * tau).exp(), sigma, tau })
}

/// Eigenfunction evaluated by characteristics from `surface`.
pub fn characteristics_eigenfunction(
    sys: &SystemSpec,
    lambda: Complex64,
    surface: InitialSurface,
    opts: CharacteristicsOptions,
) -> Eigenfunction {
    let s = sys.clone();
    Eigenfunction::new(lambda, sys.domain.clone(), Provenance::Characteristics, move |x| {
        Ok(keig_characteristics(&s, lambda, &surface, x, &opts)?.value)
    })
}

/// `max |∇g·F − λg|` over `points`, with a central-difference gradient.
pub fn keig_residual(sys: &SystemSpec, g: &Eigenfunction, points: &[Vec<f64>]) -> Result<f64> {
    keig_residual_with(Exec::default(), sys, g, points)
}

pub fn keig_residual_with(exec: Exec, sys: &SystemSpec, g: &Eigenfunction, points: &[Vec<f64>]) -> Result<f64> {
    let per_point = par::map(exec, points, |x| -> Result<f64> {
        let h = fd_step(x);
        for j in 0..x.len() {
            for s in [-h, h] {
                let mut p = x.clone();
                p[j] += s;
                if !g.domain.contains(&p) || !sys.domain.contains(&p) {
                    return Err(Error::OutsideDomain(format!("{x:?} is within the FD stencil of the domain boundary")));
                }
            }
        }
        let f = sys.evaluate_field(x)?;
        let grad = fd_gradient_c(|p| g.eval(p), x)?;
        let lhs: Complex64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
        Ok((lhs - g.lambda * g.eval(x)?).norm())
    });
    let mut worst: f64 = 0.0;
    for r in per_point {
        worst = worst.max(r?);
    }
    Ok(worst)
}

/// Samples `g` to CSV rows `x1,…,xd,re_g,im_g`; points outside the domain
/// are skipped.
pub fn grid_csv(g: &Eigenfunction, points: &[Vec<f64>]) -> String {
    let d = points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("re_g".into());
    header.push("im_g".into());
    let rows = par::map(Exec::default(), points, |p| {
        g.eval(p).ok().map(|v| {
            let mut r = p.clone();
            r.push(v.re);
            r.push(v.im);
            r
        })
    });
    crate::io::csv_string(&header, rows.into_iter().flatten())
}

/// Which closed-form stack to build for a catalog system.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Eigenvalues; defaults depend on the system.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// `rect2d`: `"q1"` (identity, default) or `"q2"`.
    /// `appB2`: `"const"` (g₀ ≡ 1, default) or `"x"` (g₀ = x).
    #[serde(default)]
    pub variant: Option<String>,
}

impl StackSpec {
    pub fn new(system: &str) -> Self {
        StackSpec { system: system.to_string(), ..Default::default() }
    }

    pub fn lambdas(mut self, l: &[f64]) -> Self {
        self.lambdas = Some(l.to_vec());
        self
    }

    pub fn variant(mut self, v: &str) -> Self {
        self.variant = Some(v.to_string());
        self
    }

    pub fn param(mut self, k: &str, v: f64) -> Self {
        self.params.insert(k.to_string(), v);
        self
    }
}

fn real_positive(z: &[Complex64], tol: f64) -> Result<Vec<f64>> {
    z.iter()
        .map(|v| {
            if v.im.abs() > tol * v.norm().max(1.0) || v.re <= 0.0 {
                Err(Error::OutsideDomain(format!("{v} is not a positive real")))
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

fn real_part(z: &[Complex64], tol: f64) -> Result<Vec<f64>> {
    z.iter()
        .map(|v| {
            if v.im.abs() > tol * v.norm().max(1.0) {
                Err(Error::OutsideDomain(format!("{v} is not real")))
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

/// `x^p` on the positive half-line, or on ℝ when `p` is a non-negative
/// integer.
fn signed_pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p >= 0.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Closed-form eigenfunction stacks for the catalog systems.
pub fn catalog_eigenstack(spec: &StackSpec) -> Result<EigenStack> {
    let id = spec.system.as_str();
    let p = catalog::resolve_params(id, &spec.params)?;
    let lam = |defaults: &[f64]| -> Result<Vec<f64>> {
        let l = spec.lambdas.clone().unwrap_or_else(|| defaults.to_vec());
        if l.len() != defaults.len() {
            return Err(Error::Dimension { expected: defaults.len(), got: l.len() });
        }
        if l.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::InvalidArgument(format!("eigenvalues must be finite and nonzero: {l:?}")));
        }
        Ok(l)
    };
    let variant = spec.variant.as_deref();
    let bad_variant = |v: &str| Err(Error::InvalidArgument(format!("{id}: unknown stack variant `{v}`")));
    const TOL: f64 = 1e-9;
    let stack = match id {
        "quad1d" => {
            let l = lam(&[1.0])?[0];
            let g = Eigenfunction::real(l, Domain::Punctured, move |x| (-l / x[0]).exp());
            EigenStack::new(vec![g], id).with_inverse(move |z| {
                let z = real_positive(z, TOL)?[0];
                if z == 1.0 {
                    return Err(Error::OutsideDomain("g = 1 has no preimage".into()));
                }
                Ok(vec![-l / z.ln()])
            })
        }
        "lin1d" => {
            let a = p["a"];
            let l = lam(&[a])?[0];
            let e = l / a;
            let dom = if e.fract() == 0.0 && e > 0.0 { Domain::All } else { Domain::positive_quadrant(1) };
            let g = Eigenfunction::real(l, dom, move |x| signed_pow(x[0], e));
            EigenStack::new(vec![g], id).with_inverse(move |z| {
                if e == 1.0 {
                    return real_part(z, TOL);
                }
                Ok(vec![real_positive(z, TOL)?[0].powf(1.0 / e)])
            })
        }
        "rect1d" => {
            let l = lam(&[1.0])?[0];
            let g = Eigenfunction::real(l, Domain::All, move |x| (l * x[0]).exp());
            EigenStack::new(vec![g], id).with_inverse(move |z| Ok(vec![real_positive(z, TOL)?[0].ln() / l]))
        }
        "lindiag" | "ex5b" => {
            let a = if id == "lindiag" { [p["a1"], p["a2"]] } else { [1.0, -1.0] };
            let l = lam(&a)?;
            let e = [l[0] / a[0], l[1] / a[1]];
            let identity = e == [1.0, 1.0];
            let dom = if identity { Domain::All } else { Domain::positive_quadrant(2) };
            let gs = (0..2)
                .map(|i| {
                    let ei = e[i];
                    Eigenfunction::real(l[i], dom.clone(), move |x| signed_pow(x[i], ei))
                })
                .collect();
            EigenStack::new(gs, id).with_inverse(move |z| {
                if identity {
                    return real_part(z, TOL);
                }
                let z = real_positive(z, TOL)?;
                Ok(vec![z[0].powf(1.0 / e[0]), z[1].powf(1.0 / e[1])])
            })
        }
        "ex5a" => {
            let l = lam(&[1.0, -1.0])?;
            if l != [1.0, -1.0] {
                return Err(Error::InvalidArgument("ex5a eigenvalues are (1, -1)".into()));
            }
            let g1 = Eigenfunction::real(1.0, Domain::All, |x| x[0] + x[1]);
            let g2 = Eigenfunction::real(-1.0, Domain::All, |x| x[0] - x[1]);
            EigenStack::new(vec![g1, g2], id).with_inverse(|z| {
                let z = real_part(z, TOL)?;
                Ok(vec![0.5 * (z[0] + z[1]), 0.5 * (z[0] - z[1])])
            })
        }
        "quad2d" => {
            let a = [p["a1"], p["a2"]];
            let l = lam(&a)?;
            if l != a {
                return Err(Error::InvalidArgument(format!("quad2d closed forms have eigenvalues {a:?}")));
            }
            let g1 = Eigenfunction::real(a[0], Domain::All, |x| catalog::quad2d_h(x)[0]);
            let g2 = Eigenfunction::real(a[1], Domain::All, |x| catalog::quad2d_h(x)[1]);
            EigenStack::new(vec![g1, g2], id).with_inverse(|z| Ok(catalog::quad2d_h_inv(&real_part(z, TOL)?)))
        }
        "rect2d" => {
            let l = lam(&[1.0, -0.5])?;
            if l[0] == l[1] {
                return Err(Error::InvalidArgument(
                    "rect2d needs distinct eigenvalues for a complete stack".into(),
                ));
            }
            let (q, q_inv): (fn(f64) -> f64, fn(f64) -> f64) = match variant.unwrap_or("q1") {
                "q1" => (|y| y, |s| s),
                // q⁻¹(s) = ln(10 + e^{−s})
                "q2" => (|y| -(y.exp() - 10.0).ln(), |s| (10.0 + (-s).exp()).ln()),
                v => return bad_variant(v),
            };
            let dom = if variant == Some("q2") {
                Domain::Box { lo: vec![f64::NEG_INFINITY, 10f64.ln()], hi: vec![f64::INFINITY; 2] }
            } else {
                Domain::All
            };
            let gs = (0..2)
                .map(|i| {
                    let li = l[i];
                    Eigenfunction::real(li, dom.clone(), move |y| (li * y[0] + q(y[1])).exp())
                })
                .collect();
            let (l1, l2) = (l[0], l[1]);
            EigenStack::new(gs, id).with_inverse(move |z| {
                let z = real_positive(z, TOL)?;
                let (a, b) = (z[0].ln(), z[1].ln());
                Ok(vec![(a - b) / (l1 - l2), q_inv((l1 * b - l2 * a) / (l1 - l2))])
            })
        }
        "appB1" => {
            if p["k"] != 2.0 {
                return Err(Error::InvalidArgument("appB1 closed forms require k = 2".into()));
            }
            let l = lam(&[1.0, 2.0])?;
            let dom = Domain::All_(vec![Domain::NonzeroCoord { axis: 0 }, Domain::NonzeroCoord { axis: 1 }]);
            // G₀ ≡ 0 for the first entry, G₀(u) = ln u (g₀ = u) for the second.
            let (l1, l2) = (l[0], l[1]);
            let g1 = Eigenfunction::real(l1, dom.clone(), move |x| (l1 * (x[1] - x[0]) / x[1]).exp());
            let g2 = Eigenfunction::real(l2, dom, move |x| {
                x[0] * x[0] / x[1] * (l2 * (x[1] - x[0]) / x[1]).exp()
            });
            EigenStack::new(vec![g1, g2], id)
        }
        "appB2" => {
            let (a, b) = (p["a"], p["b"]);
            let l = lam(&[a, b])?;
            let r = move |x: &[f64]| x[0] * x[0] + x[1].abs().powf(2.0 * a / b);
            match variant.unwrap_or("const") {
                "const" => {
                    let gs = l
                        .iter()
                        .map(|&li| Eigenfunction::real(li, Domain::Punctured, move |x| r(x).powf(li / (2.0 * a))))
                        .collect();
                    EigenStack::new(gs, id)
                }
                "x" => {
                    let gs = l
                        .iter()
                        .map(|&li| {
                            Eigenfunction::real(li, Domain::Punctured, move |x| x[0] * r(x).powf((li - a) / (2.0 * a)))
                        })
                        .collect();
                    let (l1, l2) = (l[0], l[1]);
                    // Branch y ≥ 0.
                    EigenStack::new(gs, id).with_inverse(move |z| {
                        let z = real_part(z, TOL)?;
                        if z[1] == 0.0 || z[0] / z[1] <= 0.0 {
                            return Err(Error::OutsideDomain(format!("{z:?} not in the stack range")));
                        }
                        let rr = (z[0] / z[1]).powf(2.0 * a / (l1 - l2));
                        let x = z[0] * rr.powf(-(l1 - a) / (2.0 * a));
                        let rem = rr - x * x;
                        if rem < -1e-12 * rr {
                            return Err(Error::OutsideDomain(format!("{z:?} not in the stack range")));
                        }
                        Ok(vec![x, rem.max(0.0).powf(b / (2.0 * a))])
                    })
                }
                v => return bad_variant(v),
            }
        }
        "vdp" | "tvdp" => {
            return Err(Error::InvalidArgument(format!("{id} has no closed-form eigenfunctions")));
        }
        _ => return Err(Error::UnknownEntry(id.to_string())),
    };
    Ok(stack)
}

/// The catalog system a stack belongs to.
pub fn stack_system(spec: &StackSpec) -> Result<SystemSpec> {
    catalog::system(&spec.system, &spec.params)
}
