//! Vector fields, adaptive integration and sampling of flow pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SampleBox};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::par::{self, Exec};
use crate::poly::Poly;

pub type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// `(x0, t) ↦ S_t(x0)`, `None` where the closed form does not exist (past a
/// blow-up or outside the domain).
pub type FlowFn = Arc<dyn Fn(&[f64], f64) -> Option<Vec<f64>> + Send + Sync>;

/// A vector field `F: ℝᵈ → ℝᵈ` with metadata.
#[derive(Clone)]
pub struct SystemSpec {
    pub id: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    pub field: FieldFn,
    pub analytic_flow: Option<FlowFn>,
    /// Componentwise polynomial form of the field, when it has one.
    pub polynomial: Option<Vec<Poly>>,
    pub domain: Domain,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("analytic_flow", &self.analytic_flow.is_some())
            .field("polynomial", &self.polynomial.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl SystemSpec {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        domain: Domain,
        field: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        SystemSpec {
            id: id.into(),
            dim,
            params: BTreeMap::new(),
            field: Arc::new(field),
            analytic_flow: None,
            polynomial: None,
            domain,
        }
    }

    /// System given by polynomial components; the field evaluates them.
    pub fn from_polynomials(id: impl Into<String>, polys: Vec<Poly>, domain: Domain) -> Self {
        let dim = polys.len();
        let p2 = polys.clone();
        let mut s = SystemSpec::new(id, dim, domain, move |x| p2.iter().map(|p| p.eval(x)).collect());
        s.polynomial = Some(polys);
        s
    }

    pub fn with_flow(
        mut self,
        flow: impl Fn(&[f64], f64) -> Option<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.analytic_flow = Some(Arc::new(flow));
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// `F(x)`, with dimension, domain and finiteness checks.
    pub fn evaluate_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.domain.check(x)?;
        let f = (self.field)(x);
        if f.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("F({x:?}) = {f:?}")));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Norm beyond which the trajectory is declared blown up.
    pub cap: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { atol: 1e-10, rtol: 1e-10, cap: 1e8, max_steps: 2_000_000 }
    }
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorOptions { atol: tol, rtol: tol, ..Default::default() }
    }
}

/// Sampled solution. Times run in the direction of integration, so they
/// decrease for backward runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub terminated_early: bool,
    pub reason: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn t_last(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }

    /// Final state, or an error when the run stopped before `t_end`.
    pub fn final_state(&self) -> Result<&[f64]> {
        if self.terminated_early {
            return Err(Error::BlowUp { t: self.t_last() });
        }
        Ok(self.last())
    }

    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, |s| s.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        let rows = self.times.iter().zip(&self.states).map(|(t, s)| {
            let mut r = vec![*t];
            r.extend_from_slice(s);
            r
        });
        crate::io::csv_string(&header, rows)
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper<'a> {
    f: &'a (dyn Fn(&[f64]) -> Vec<f64> + Send + Sync),
    domain: &'a Domain,
    opts: IntegratorOptions,
    dim: usize,
}

enum StepOutcome {
    Accepted { y: Vec<f64>, k_last: Vec<f64>, err: f64 },
    Rejected { err: f64 },
}

impl Stepper<'_> {
    fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        if !self.domain.contains(x) {
            return None;
        }
        let v = (self.f)(x);
        v.iter().all(|c| c.is_finite()).then_some(v)
    }

    fn step(&self, y: &[f64], k0: &[f64], h: f64) -> StepOutcome {
        let d = self.dim;
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(k0.to_vec());
        let mut tmp = vec![0.0; d];
        for s in 1..7 {
            for i in 0..d {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    acc += A[s][j] * kj[i];
                }
                tmp[i] = y[i] + h * acc;
            }
            match self.eval(&tmp) {
                Some(v) => k.push(v),
                None => return StepOutcome::Rejected { err: f64::INFINITY },
            }
        }
        // Stage 7 is evaluated at the 5th-order solution (FSAL).
        let y5 = tmp;
        let mut err: f64 = 0.0;
        for i in 0..d {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B5[s] - B4[s]) * k[s][i];
            }
            let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((h * e).abs() / sc);
        }
        if !err.is_finite() {
            return StepOutcome::Rejected { err: f64::INFINITY };
        }
        let k_last = k.pop().unwrap();
        if err <= 1.0 {
            StepOutcome::Accepted { y: y5, k_last, err }
        } else {
            StepOutcome::Rejected { err }
        }
    }

    fn initial_step(&self, y: &[f64], f0: &[f64], dir: f64) -> f64 {
        let sc = |i: usize| self.opts.atol + self.opts.rtol * y[i].abs();
        let d0 = (0..self.dim).map(|i| (y[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
        let d1 = (0..self.dim).map(|i| (f0[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1: Vec<f64> = (0..self.dim).map(|i| y[i] + dir * h0 * f0[i]).collect();
        let Some(f1) = self.eval(&y1) else {
            return h0 * 1e-3;
        };
        let d2 = (0..self.dim).map(|i| ((f1[i] - f0[i]) / sc(i)).powi(2)).sum::<f64>().sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }
}

/// Integrates `ẋ = F(x)` from `x0`, reporting the state at each of `times`
/// (monotone in the direction of integration, starting at or after 0).
/// Steps are clamped to land on every requested time. The returned
/// trajectory starts with `(0, x0)` only when `times[0] == 0`.
pub fn integrate_at(
    sys: &SystemSpec,
    x0: &[f64],
    times: &[f64],
    opts: IntegratorOptions,
) -> Result<Trajectory> {
    sys.check_dim(x0)?;
    if !(opts.atol > 0.0 && opts.rtol >= 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite output time".into()));
    }
    let t_end = times.last().copied().unwrap_or(0.0);
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    if times.windows(2).any(|w| dir * (w[1] - w[0]) < 0.0) || times.first().is_some_and(|t| dir * t < 0.0) {
        return Err(Error::InvalidArgument("output times must be monotone from 0".into()));
    }
    if norm(x0) > opts.cap {
        return Err(Error::BlowUp { t: 0.0 });
    }
    let stepper = Stepper { f: sys.field.as_ref(), domain: &sys.domain, opts, dim: sys.dim };
    let mut k = match stepper.eval(x0) {
        Some(v) => v,
        None if !sys.domain.contains(x0) => {
            return Err(Error::OutsideDomain(format!("{x0:?} not in {:?}", sys.domain)))
        }
        None => return Err(Error::NonFinite(format!("F({x0:?})"))),
    };

    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), terminated_early: false, reason: None };
    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut next = 0;
    while next < times.len() && dir * times[next] <= 0.0 {
        traj.times.push(times[next]);
        traj.states.push(y.clone());
        next += 1;
    }
    if next == times.len() {
        return Ok(traj);
    }
    let mut h = stepper.initial_step(&y, &k, dir);
    let mut steps = 0usize;
    let h_min = |t: f64| 1e-14 * t.abs().max(1.0);
    while next < times.len() {
        steps += 1;
        if steps > opts.max_steps {
            traj.terminated_early = true;
            traj.reason = Some(format!("step limit reached at t = {t}"));
            return Ok(traj);
        }
        let target = times[next];
        let remaining = (target - t).abs();
        let clamped = h >= remaining;
        let hs = if clamped { remaining } else { h };
        match stepper.step(&y, &k, dir * hs) {
            StepOutcome::Accepted { y: y_new, k_last, err } => {
                t = if clamped { target } else { t + dir * hs };
                y = y_new;
                k = k_last;
                if norm(&y) > opts.cap {
                    traj.times.push(t);
                    traj.states.push(y);
                    traj.terminated_early = true;
                    traj.reason = Some(format!("blow-up: |x| > {:e} at t = {t}", opts.cap));
                    return Ok(traj);
                }
                while next < times.len() && times[next] == t {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                    next += 1;
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // A clamped step says nothing about the natural step size.
                if !clamped || hs * fac > h {
                    h = hs * fac;
                }
            }
            StepOutcome::Rejected { err } => {
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
                h = hs * fac;
                if h < h_min(t) {
                    traj.terminated_early = true;
                    let why = if norm(&y) > 1e-3 * opts.cap || !err.is_finite() {
                        "step size underflow near a singularity or domain boundary"
                    } else {
                        "step size underflow"
                    };
                    traj.times.push(t);
                    traj.states.push(y);
                    traj.reason = Some(format!("{why} at t = {t}"));
                    return Ok(traj);
                }
            }
        }
    }
    Ok(traj)
}

/// Integrates from `x0` to `t_end` (negative for backward time) with
/// `atol = rtol = tol`. Only the endpoints are recorded.
pub fn integrate(sys: &SystemSpec, x0: &[f64], t_end: f64, tol: f64) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if !t_end.is_finite() {
        return Err(Error::InvalidArgument("t_end must be finite".into()));
    }
    integrate_at(sys, x0, &[0.0, t_end], IntegratorOptions::with_tol(tol))
}

/// `S_t(x0)`, failing if the trajectory does not reach `t`.
pub fn flow(sys: &SystemSpec, x0: &[f64], t: f64, opts: IntegratorOptions) -> Result<Vec<f64>> {
    let tr = integrate_at(sys, x0, &[t], opts)?;
    Ok(tr.final_state()?.to_vec())
}

/// Uniform grid `0, dt, …, n·dt` (with sign) for [`integrate_at`].
pub fn time_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePairs {
    pub x: Vec<Vec<f64>>,
    pub x_next: Vec<Vec<f64>>,
    pub dt: f64,
    pub seed: u64,
    /// Pairs dropped because the trajectory did not reach `dt`.
    pub discarded: usize,
}

impl SamplePairs {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Uniform points from a seeded ChaCha stream.
pub fn uniform_points(bx: &SampleBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            bx.lo
                .iter()
                .zip(&bx.hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

pub fn sample_pairs(sys: &SystemSpec, bx: &SampleBox, n: usize, dt: f64, seed: u64) -> Result<SamplePairs> {
    sample_pairs_with(Exec::default(), sys, bx, n, dt, seed, IntegratorOptions::default())
}

/// Points are drawn sequentially from the root seed, then advanced in
/// parallel; the output does not depend on the schedule.
pub fn sample_pairs_with(
    exec: Exec,
    sys: &SystemSpec,
    bx: &SampleBox,
    n: usize,
    dt: f64,
    seed: u64,
    opts: IntegratorOptions,
) -> Result<SamplePairs> {
    if bx.dim() != sys.dim {
        return Err(Error::Dimension { expected: sys.dim, got: bx.dim() });
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be finite and non-negative, got {dt}")));
    }
    if bx.as_domain().box_within(&sys.domain) == Some(false) {
        return Err(Error::OutsideDomain(format!("sampling box {bx:?} not inside {:?}", sys.domain)));
    }
    let pts = uniform_points(bx, n, seed);
    if let Some(p) = pts.iter().find(|p| !sys.domain.contains(p)) {
        return Err(Error::OutsideDomain(format!("sample {p:?} not in {:?}", sys.domain)));
    }
    let advanced = par::map(exec, &pts, |p| {
        if dt == 0.0 {
            Ok::<_, Error>(Some(p.clone()))
        } else {
            let tr = integrate_at(sys, p, &[dt], opts)?;
            Ok(if tr.terminated_early { None } else { Some(tr.last().to_vec()) })
        }
    });
    let mut out = SamplePairs { x: Vec::new(), x_next: Vec::new(), dt, seed, discarded: 0 };
    for (p, a) in pts.into_iter().zip(advanced) {
        match a? {
            Some(q) => {
                out.x.push(p);
                out.x_next.push(q);
            }
            None => out.discarded += 1,
        }
    }
    if out.discarded > 0 {
        log::warn!("{}: discarded {} of {n} sample pairs (blow-up within dt)", sys.id, out.discarded);
    }
    Ok(out)
}
