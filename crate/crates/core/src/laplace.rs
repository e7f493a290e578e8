//! Laplace averages and continuation of their modulus level sets.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynsys::{integrate_at, IntegratorOptions, SystemSpec};
use crate::error::{Error, Result};
use crate::keig::InitialSurface;
use crate::linalg::{dist, eigenvalues, fd_jacobian, norm};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    /// Backward when `Re λ > 0`, forward otherwise.
    #[default]
    Auto,
}

/// Observable integrated along trajectories.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Coordinate { index: usize },
    Norm,
    Zero,
    #[serde(skip)]
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observable::Coordinate { index } => write!(f, "x{}", index + 1),
            Observable::Norm => write!(f, "|x|"),
            Observable::Zero => write!(f, "0"),
            Observable::Custom(_) => write!(f, "custom"),
        }
    }
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Coordinate { index } => x[*index],
            Observable::Norm => norm(x),
            Observable::Zero => 0.0,
            Observable::Custom(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceConfig {
    pub observable: Observable,
    #[serde(with = "crate::io::complex")]
    pub lambda: Complex64,
    pub horizon: f64,
    #[serde(default)]
    pub direction: Direction,
    /// Quadrature step; rounded down so the horizon holds an even number
    /// of steps.
    pub step: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-11
}

impl LaplaceConfig {
    pub fn new(observable: Observable, lambda: Complex64, horizon: f64) -> Self {
        LaplaceConfig { observable, lambda, horizon, direction: Direction::Auto, step: horizon / 2000.0, tol: default_tol() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        if !(self.step > 0.0 && self.step < self.horizon / 10.0) {
            return Err(Error::InvalidArgument(format!("quadrature step {} must lie in (0, T/10)", self.step)));
        }
        if !(self.lambda.re.is_finite() && self.lambda.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite eigenvalue".into()));
        }
        Ok(())
    }

    pub fn backward(&self) -> bool {
        match self.direction {
            Direction::Forward => false,
            Direction::Backward => true,
            Direction::Auto => self.lambda.re > 0.0,
        }
    }
}

/// Eigenvalues of the linearisation at `x_star` (finite differences).
pub fn linearization_eigenvalues(sys: &SystemSpec, x_star: &[f64]) -> Result<Vec<Complex64>> {
    let j = fd_jacobian(|x| sys.evaluate_field(x), x_star)?;
    Ok(eigenvalues(&j))
}

/// Time-averaged Laplace integral by composite Simpson quadrature:
/// forward `(1/T)∫₀ᵀ f(Sₜx) e^{−λt} dt`, backward
/// `(1/T)∫₀ᵀ f(S₋ₜx) e^{λt} dt`.
pub fn laplace_average(cfg: &LaplaceConfig, sys: &SystemSpec, x: &[f64]) -> Result<Complex64> {
    cfg.validate()?;
    let mut n = (cfg.horizon / cfg.step).ceil() as usize;
    n += n % 2;
    let h = cfg.horizon / n as f64;
    let back = cfg.backward();
    let sign = if back { -1.0 } else { 1.0 };
    let times: Vec<f64> = (0..=n).map(|k| sign * k as f64 * h).collect();
    let tr = integrate_at(sys, x, &times, IntegratorOptions::with_tol(cfg.tol))?;
    if tr.terminated_early {
        return Err(Error::BlowUp { t: tr.t_last() });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, s) in tr.states.iter().enumerate() {
        let t = k as f64 * h;
        let w = (-sign * cfg.lambda * t).exp();
        if !(w.re.is_finite() && w.im.is_finite()) {
            return Err(Error::NonFinite(format!("exponential weight overflows at t = {t}")));
        }
        let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * (c * cfg.observable.eval(s));
    }
    let v = acc * (h / 3.0) / cfg.horizon;
    if !(v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::NonFinite("Laplace average".into()));
    }
    Ok(v)
}

pub fn laplace_batch(exec: Exec, cfg: &LaplaceConfig, sys: &SystemSpec, xs: &[Vec<f64>]) -> Vec<Result<Complex64>> {
    par::map(exec, xs, |x| laplace_average(cfg, sys, x))
}

/// Ordered polyline on `{|f*| = c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub points: Vec<[f64; 2]>,
    pub level: f64,
    pub closed: bool,
}

impl LevelSet {
    pub fn to_csv(&self) -> String {
        let header = vec!["x1".to_string(), "x2".to_string()];
        crate::io::csv_string(&header, self.points.iter().map(|p| p.to_vec()))
    }

    pub fn from_csv(text: &str, level: f64, closed: bool) -> Result<Self> {
        let (h, rows) = crate::io::parse_csv(text).map_err(Error::InvalidArgument)?;
        if h != ["x1", "x2"] {
            return Err(Error::InvalidArgument(format!("expected header x1,x2, got {h:?}")));
        }
        Ok(LevelSet { points: rows.iter().map(|r| [r[0], r[1]]).collect(), level, closed })
    }

    fn segments(&self) -> Vec<([f64; 2], [f64; 2])> {
        let n = self.points.len();
        let m = if self.closed { n } else { n.saturating_sub(1) };
        (0..m).map(|i| (self.points[i], self.points[(i + 1) % n])).collect()
    }

    /// Distance from `x` to the polyline, with the segment index and the
    /// position along it.
    pub fn nearest(&self, x: &[f64]) -> (f64, usize, f64) {
        let mut best = (f64::INFINITY, 0, 0.0);
        for (i, (a, b)) in self.segments().into_iter().enumerate() {
            let d = [b[0] - a[0], b[1] - a[1]];
            let l2 = d[0] * d[0] + d[1] * d[1];
            let s = if l2 > 0.0 { (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
            let p = [a[0] + s * d[0], a[1] + s * d[1]];
            let e = dist(x, &p);
            if e < best.0 {
                best = (e, i, s);
            }
        }
        best
    }

    /// Winding number of the closed polyline around `x`.
    pub fn winding_number(&self, x: &[f64]) -> i32 {
        let mut angle = 0.0;
        for (a, b) in self.segments() {
            let u = [a[0] - x[0], a[1] - x[1]];
            let v = [b[0] - x[0], b[1] - x[1]];
            angle += (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
        }
        (angle / (2.0 * std::f64::consts::PI)).round() as i32
    }

    pub fn is_self_intersecting(&self) -> bool {
        let s = self.segments();
        let n = s.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (self.closed && i == 0 && j == n - 1);
                if !adjacent && segments_cross(s[i], s[j]) {
                    return true;
                }
            }
        }
        false
    }
}

fn segments_cross((a, b): ([f64; 2], [f64; 2]), (c, d): ([f64; 2], [f64; 2])) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    /// Predictor step; `None` uses 1% of the estimated bounding-box diagonal.
    pub step: Option<f64>,
    pub max_points: usize,
    /// Corrector tolerance relative to the level.
    pub corrector_tol: f64,
    pub min_step: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { step: None, max_points: 2000, corrector_tol: 1e-8, min_step: 1e-5 }
    }
}

/// Traces the connected component of `{|f*| = |f*(x0)|}` through `x0` with a
/// tangent predictor and a Newton corrector along the gradient.
pub fn levelset_continuation(
    cfg: &LaplaceConfig,
    sys: &SystemSpec,
    x0: &[f64],
    opts: &ContinuationOptions,
) -> Result<LevelSet> {
    let modulus = |x: &[f64]| laplace_average(cfg, sys, x).map(|v| v.norm());
    levelset_of(&modulus, x0, opts)
}

/// Continuation for an arbitrary scalar function `F` on the plane.
pub fn levelset_of<F>(f: &F, x0: &[f64], opts: &ContinuationOptions) -> Result<LevelSet>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if x0.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: x0.len() });
    }
    let c = f(x0)?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("level |f*(x0)| = {c} is not positive")));
    }
    let grad = |x: &[f64]| -> Result<[f64; 2]> {
        let h = 1e-6 * norm(x).max(1e-2);
        let mut g = [0.0; 2];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut p = x.to_vec();
            p[i] += h;
            let fp = f(&p)?;
            p[i] -= 2.0 * h;
            *gi = (fp - f(&p)?) / (2.0 * h);
        }
        Ok(g)
    };
    let g0 = grad(x0)?;
    let gn = g0[0].hypot(g0[1]);
    if !(gn > 1e-12 * c.max(1e-300)) {
        return Err(Error::Singular(format!("gradient of |f*| vanishes at {x0:?}")));
    }
    let base = opts.step.unwrap_or_else(|| 0.01 * 2.0 * std::f64::consts::SQRT_2 * c / gn);
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::InvalidArgument(format!("continuation step {base}")));
    }
    let tol = opts.corrector_tol * c;

    let correct = |mut x: [f64; 2]| -> Result<Option<[f64; 2]>> {
        for _ in 0..30 {
            let v = f(&x)? - c;
            if v.abs() <= tol {
                return Ok(Some(x));
            }
            let g = grad(&x)?;
            let g2 = g[0] * g[0] + g[1] * g[1];
            if !(g2 > 0.0) {
                return Ok(None);
            }
            x = [x[0] - v * g[0] / g2, x[1] - v * g[1] / g2];
        }
        Ok(None)
    };

    let start = [x0[0], x0[1]];
    let mut pts = vec![start];
    // Counter-clockwise with respect to increasing |f*|.
    let mut tangent = [-g0[1] / gn, g0[0] / gn];
    let mut step = base;
    let mut closed = false;
    while pts.len() < opts.max_points {
        let x = *pts.last().unwrap();
        let g = grad(&x)?;
        let n = g[0].hypot(g[1]);
        if !(n > 0.0) {
            return Err(Error::Singular(format!("gradient of |f*| vanishes at {x:?}")));
        }
        let mut t = [-g[1] / n, g[0] / n];
        if t[0] * tangent[0] + t[1] * tangent[1] < 0.0 {
            t = [-t[0], -t[1]];
        }
        let next = loop {
            let pred = [x[0] + step * t[0], x[1] + step * t[1]];
            let corrected = match f(&pred) {
                Ok(_) => correct(pred)?,
                Err(_) => None,
            };
            match corrected {
                Some(p) if dist(&p, &x) <= 3.0 * step => break p,
                _ => {
                    step *= 0.5;
                    if step < opts.min_step {
                        return Err(Error::NoConvergence(format!("corrector failed near {x:?}")));
                    }
                }
            }
        };
        tangent = t;
        if pts.len() >= 10 {
            let ls = LevelSet { points: vec![x, next], level: c, closed: false };
            if ls.nearest(&start).0 <= base / 2.0 {
                closed = true;
                break;
            }
        }
        pts.push(next);
        step = (step * 1.5).min(base);
    }
    Ok(LevelSet { points: pts, level: c, closed })
}

/// Initial surface from a closed level-set polyline: the implicit function
/// is the signed distance (negative inside) and the data interpolate the
/// per-vertex values linearly along each segment.
pub fn surface_from_levelset(ls: &LevelSet, g0_values: &[Complex64]) -> Result<InitialSurface> {
    let n = ls.points.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("level set has only {n} points")));
    }
    if g0_values.len() != n {
        return Err(Error::Dimension { expected: n, got: g0_values.len() });
    }
    if g0_values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("initial data".into()));
    }
    if ls.is_self_intersecting() {
        return Err(Error::InvalidArgument("level-set polyline intersects itself".into()));
    }
    let shape = Arc::new(ls.clone());
    let data_shape = shape.clone();
    let values = g0_values.to_vec();
    Ok(InitialSurface::new(
        2,
        move |x| {
            let (d, _, _) = shape.nearest(x);
            if shape.closed && shape.winding_number(x) != 0 {
                -d
            } else {
                d
            }
        },
        move |x| {
            let (_, i, s) = data_shape.nearest(x);
            let j = (i + 1) % values.len();
            Ok(values[i] * (1.0 - s) + values[j] * s)
        },
    ))
}
