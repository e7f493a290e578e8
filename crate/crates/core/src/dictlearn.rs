//! Shared dictionary learning for two systems.
//!
//! The dictionary is `Ψ(z) = (1, z₁, z₂, o₁(z), …, o₅(z))` where `o` is a
//! tanh network. Training alternates least-squares K-steps with gradient
//! steps on the combined loss; every `sim_every` iterations the K pair is
//! refined by the similarity-regularised problem over `(A, B, P)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{log_transform, system};
use crate::domain::SampleBox;
use crate::dynsys::{integrate_at, sample_pairs_with, uniform_points, IntegratorOptions, SamplePairs};
use crate::edmd::{
    fit_from_features, moments, pair_spectra, DictKind, Dictionary, KoopmanMatrix, KoopmanMode, KoopmanProvenance,
    SpectralDecomposition,
};
use crate::edmdm::{edmdm_pipeline, EdmdmOptions, MatchingPoint};
use crate::error::{Error, Result};
use crate::linalg::{cond, eigenvalues, CMatrix};
use crate::par::{self, Exec};

pub const LEARNED: usize = 5;
pub const PREFIX: usize = 3;
const CHUNK: usize = 64;

/// `2 → w → w → w → 5` tanh network behind the fixed prefix `(1, z₁, z₂)`.
///
/// `theta` holds `[W1, b1, W2, b2, W3, b3, W4, b4]`, weights row-major
/// (`W[out][in]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDictionary {
    pub width: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

/// Forward activations of one input.
#[derive(Debug, Clone)]
pub struct Activations {
    hidden: [Vec<f64>; 3],
    out: [f64; LEARNED],
}

impl MlpDictionary {
    pub fn param_count(width: usize) -> usize {
        2 * width + width + 2 * (width * width + width) + LEARNED * width + LEARNED
    }

    /// Weights and biases uniform in `±1/√fan_in`, drawn from `seed`.
    pub fn new(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("network width must be positive".into()));
        }
        let mut d = MlpDictionary { width, theta: vec![0.0; Self::param_count(width)] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in d.layers() {
            let s = 1.0 / (l.cols as f64).sqrt();
            for v in &mut d.theta[l.w..l.b + l.rows] {
                *v = s * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        Ok(d)
    }

    fn layers(&self) -> [Layer; 4] {
        let w = self.width;
        let dims = [(w, 2), (w, w), (w, w), (LEARNED, w)];
        let mut off = 0;
        dims.map(|(rows, cols)| {
            let l = Layer { rows, cols, w: off, b: off + rows * cols };
            off += rows * cols + rows;
            l
        })
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        let ls = self.layers();
        let mut input: Vec<f64> = x.to_vec();
        let mut hidden: [Vec<f64>; 3] = Default::default();
        for (k, l) in ls[..3].iter().enumerate() {
            hidden[k] = affine(&self.theta, l, &input).into_iter().map(f64::tanh).collect();
            input = hidden[k].clone();
        }
        let o = affine(&self.theta, &ls[3], &input);
        let mut out = [0.0; LEARNED];
        out.copy_from_slice(&o);
        Activations { hidden, out }
    }

    /// Full dictionary vector from activations.
    pub fn features(x: &[f64], a: &Activations) -> Vec<f64> {
        let mut v = Vec::with_capacity(PREFIX + LEARNED);
        v.push(1.0);
        v.extend_from_slice(&x[..2]);
        v.extend_from_slice(&a.out);
        v
    }

    /// Accumulates `(∂o/∂θ)ᵀ dout` into `grad`.
    pub fn backward(&self, x: &[f64], a: &Activations, dout: &[f64], grad: &mut [f64]) {
        let ls = self.layers();
        let mut delta: Vec<f64> = dout.to_vec();
        for k in (0..4).rev() {
            let l = ls[k];
            let input: &[f64] = if k == 0 { x } else { &a.hidden[k - 1] };
            for r in 0..l.rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grad[l.b + r] += d;
                let row = &mut grad[l.w + r * l.cols..l.w + (r + 1) * l.cols];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if k == 0 {
                break;
            }
            let prev = &a.hidden[k - 1];
            let mut next = vec![0.0; l.cols];
            for r in 0..l.rows {
                let d = delta[r];
                let row = &self.theta[l.w + r * l.cols..l.w + (r + 1) * l.cols];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for (n, h) in next.iter_mut().zip(prev) {
                *n *= 1.0 - h * h;
            }
            delta = next;
        }
    }
}

fn affine(theta: &[f64], l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|r| {
            let row = &theta[l.w + r * l.cols..l.w + (r + 1) * l.cols];
            theta[l.b + r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

impl Dictionary for MlpDictionary {
    fn len(&self) -> usize {
        PREFIX + LEARNED
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        Self::features(x, &self.forward(x))
    }

    fn fixed_prefix(&self) -> usize {
        PREFIX
    }

    fn kind(&self) -> DictKind {
        DictKind::Mlp
    }

    fn coordinate_index(&self, i: usize) -> Option<usize> {
        (i < 2).then_some(1 + i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub ridge: f64,
    pub beta: f64,
    pub iters: usize,
    pub sim_every: usize,
    pub seed: u64,
    pub width: usize,
    pub batch: usize,
    /// Iteration cap of each similarity solve.
    pub sim_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            ridge: 1e-8,
            beta: 100.0,
            iters: 5000,
            sim_every: 50,
            seed: 0,
            width: 32,
            batch: 1000,
            sim_max_iter: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || !(self.ridge >= 0.0) || self.width == 0 {
            return Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// Forward pass over a batch: activations and the `N × M` feature matrix.
fn features_batch(exec: Exec, dict: &MlpDictionary, xs: &[Vec<f64>]) -> (Vec<Activations>, DMatrix<f64>) {
    let acts = par::map(exec, xs, |x| dict.forward(x));
    let n = dict.len();
    let mut f = DMatrix::zeros(n, xs.len());
    for (j, (x, a)) in xs.iter().zip(&acts).enumerate() {
        f.set_column(j, &nalgebra::DVector::from_vec(MlpDictionary::features(x, a)));
    }
    (acts, f)
}

struct Batch {
    ax: Vec<Activations>,
    ay: Vec<Activations>,
    px: DMatrix<f64>,
    py: DMatrix<f64>,
}

fn batch(exec: Exec, dict: &MlpDictionary, data: &SamplePairs) -> Batch {
    let (ax, px) = features_batch(exec, dict, &data.x);
    let (ay, py) = features_batch(exec, dict, &data.x_next);
    Batch { ax, ay, px, py }
}

fn check_dims(k: &DMatrix<f64>, dict: &dyn Dictionary) -> Result<()> {
    if k.nrows() != dict.len() || k.ncols() != dict.len() {
        return Err(Error::Dimension { expected: dict.len(), got: k.nrows() });
    }
    Ok(())
}

/// Mean squared one-step residual `mean ‖Ψ(x′) − KΨ(x)‖²` and its gradient
/// with respect to θ, accumulated into `grad`. Chunked so the summation
/// order is fixed.
fn system_loss_grad(exec: Exec, dict: &MlpDictionary, k: &DMatrix<f64>, data: &SamplePairs, b: &Batch, grad: &mut [f64]) -> f64 {
    let m = data.len();
    if m == 0 {
        return 0.0;
    }
    let inv = 1.0 / m as f64;
    let kt = k.transpose();
    let parts = par::map(exec, &par::chunks(m, CHUNK), |range| {
        let mut g = vec![0.0; dict.theta.len()];
        let mut loss = 0.0;
        for j in range.clone() {
            let r = b.py.column(j) - k * b.px.column(j);
            loss += r.norm_squared();
            let gy = &r * (2.0 * inv);
            let gx = &kt * &r * (-2.0 * inv);
            dict.backward(&data.x_next[j], &b.ay[j], &gy.as_slice()[PREFIX..], &mut g);
            dict.backward(&data.x[j], &b.ax[j], &gx.as_slice()[PREFIX..], &mut g);
        }
        (loss, g)
    });
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    loss * inv
}

fn system_loss(px: &DMatrix<f64>, py: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    if px.ncols() == 0 {
        return 0.0;
    }
    (py - k * px).norm_squared() / px.ncols() as f64
}

/// Combined loss `J` (per-sample means of both sums).
pub fn combined_loss(
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    dict: &MlpDictionary,
    data1: &SamplePairs,
    data2: &SamplePairs,
) -> Result<f64> {
    check_dims(k1, dict)?;
    check_dims(k2, dict)?;
    if data1.is_empty() || data2.is_empty() {
        return Err(Error::InvalidArgument("no sample pairs".into()));
    }
    let exec = Exec::default();
    let b1 = batch(exec, dict, data1);
    let b2 = batch(exec, dict, data2);
    Ok(system_loss(&b1.px, &b1.py, k1) + system_loss(&b2.px, &b2.py, k2))
}

/// `J` and `∇_θ J` with `K⁽¹⁾`, `K⁽²⁾` held fixed.
pub fn loss_and_gradient(
    exec: Exec,
    dict: &MlpDictionary,
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    data1: &SamplePairs,
    data2: &SamplePairs,
) -> Result<(f64, Vec<f64>)> {
    check_dims(k1, dict)?;
    check_dims(k2, dict)?;
    let b1 = batch(exec, dict, data1);
    let b2 = batch(exec, dict, data2);
    let mut g = vec![0.0; dict.theta.len()];
    let j = system_loss_grad(exec, dict, k1, data1, &b1, &mut g) + system_loss_grad(exec, dict, k2, data2, &b2, &mut g);
    Ok((j, g))
}

/// Ridge least-squares K for the current dictionary.
pub fn kstep(dict: &MlpDictionary, data: &SamplePairs, ridge: f64) -> Result<KoopmanMatrix> {
    crate::edmd::edmd_fit(data, dict, ridge)
}

/// Moments `G = mean ΨΨᵀ`, `C = mean Ψ(x)Ψ(x′)ᵀ`, `s = mean ‖Ψ(x′)‖²` in
/// which the one-step loss is `s − 2 tr(AC) + tr(AGAᵀ)`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub s: f64,
}

impl Moments {
    pub fn from_features(px: &DMatrix<f64>, py: &DMatrix<f64>) -> Self {
        let (g, c) = moments(px, py);
        let s = py.norm_squared() / py.ncols().max(1) as f64;
        Moments { g, c, s }
    }

    pub fn loss(&self, a: &DMatrix<f64>) -> f64 {
        self.s - 2.0 * (a * &self.c).trace() + (a * &self.g * a.transpose()).trace()
    }

    pub fn grad(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        (a * &self.g - self.c.transpose()) * 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityState {
    #[serde(with = "matrix_rows")]
    pub p: DMatrix<f64>,
    /// `‖PK⁽¹'⁾ − K⁽²'⁾P‖_F` at exit.
    pub residual: f64,
    pub initial_residual: f64,
    pub cond: f64,
    /// `cond(P) ≥ 1e8`.
    pub ill_conditioned: bool,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    /// The objective did not decrease; inputs were returned unchanged.
    pub stalled: bool,
}

mod matrix_rows {
    use super::*;

    pub fn serialize<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::io::rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::io::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityOptions {
    pub max_iter: usize,
    /// Stop when a step moves the iterate by less than this (relative).
    pub step_tol: f64,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        SimilarityOptions { max_iter: 2000, step_tol: 1e-15 }
    }
}

pub struct SimilarityOutcome {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub state: SimilarityState,
}

/// Minimises `β‖PA − BP‖²_F + J(A, B)` subject to `‖P‖_F ≥ 1` from
/// `(K⁽¹⁾, K⁽²⁾, random P)` by projected gradient descent with
/// Barzilai–Borwein steps and a monotone backtracking line search.
pub fn similarity_step(
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    m1: &Moments,
    m2: &Moments,
    beta: f64,
    seed: u64,
    opts: &SimilarityOptions,
) -> Result<SimilarityOutcome> {
    let n = k1.nrows();
    if k2.nrows() != n || m1.g.nrows() != n || m2.g.nrows() != n {
        return Err(Error::Dimension { expected: n, got: k2.nrows() });
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p0 = project(DMatrix::from_fn(n, n, |_, _| 2.0 * rng.random::<f64>() - 1.0));

    let objective = |a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>| {
        beta * (p * a - b * p).norm_squared() + m1.loss(a) + m2.loss(b)
    };
    let gradient = |a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>| {
        let r = p * a - b * p;
        let gp = (&r * a.transpose() - b.transpose() * &r) * (2.0 * beta);
        let ga = m1.grad(a) + p.transpose() * &r * (2.0 * beta);
        let gb = m2.grad(b) - &r * p.transpose() * (2.0 * beta);
        (ga, gb, gp)
    };

    let (mut a, mut b, mut p) = (k1.clone(), k2.clone(), p0);
    let f0 = objective(&a, &b, &p);
    let r0 = (&p * &a - &b * &p).norm();
    let mut f = f0;
    let mut g = gradient(&a, &b, &p);
    let mut alpha = 1.0 / (g.0.norm_squared() + g.1.norm_squared() + g.2.norm_squared()).sqrt().max(1e-12);
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..60 {
            let na = &a - &g.0 * step;
            let nb = &b - &g.1 * step;
            let np = project(&p - &g.2 * step);
            let moved = (&na - &a).norm_squared() + (&nb - &b).norm_squared() + (&np - &p).norm_squared();
            let nf = objective(&na, &nb, &np);
            if nf <= f - 1e-4 * moved / step {
                accepted = Some((na, nb, np, nf, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((na, nb, np, nf, moved)) = accepted else { break };
        let scale = a.norm_squared() + b.norm_squared() + p.norm_squared();
        let ng = gradient(&na, &nb, &np);
        // Barzilai–Borwein step from the change in iterate and gradient.
        let sy = (&na - &a).dot(&(&ng.0 - &g.0)) + (&nb - &b).dot(&(&ng.1 - &g.1)) + (&np - &p).dot(&(&ng.2 - &g.2));
        alpha = if sy > 0.0 { (moved / sy).clamp(1e-12, 1e12) } else { step * 2.0 };
        a = na;
        b = nb;
        p = np;
        f = nf;
        g = ng;
        if moved <= opts.step_tol * opts.step_tol * (1.0 + scale) || f <= 0.0 {
            break;
        }
    }
    let residual = (&p * &a - &b * &p).norm();
    let c = cond(&p);
    if !(f < f0) && f0 > 0.0 {
        let state = SimilarityState {
            residual: r0,
            initial_residual: r0,
            cond: c,
            ill_conditioned: !(c < 1e8),
            objective: f0,
            initial_objective: f0,
            iterations: it,
            stalled: true,
            p,
        };
        return Ok(SimilarityOutcome { k1: k1.clone(), k2: k2.clone(), state });
    }
    Ok(SimilarityOutcome {
        k1: a,
        k2: b,
        state: SimilarityState {
            p,
            residual,
            initial_residual: r0,
            cond: c,
            ill_conditioned: !(c < 1e8),
            objective: f,
            initial_objective: f0,
            iterations: it,
            stalled: false,
        },
    })
}

fn project(p: DMatrix<f64>) -> DMatrix<f64> {
    let nrm = p.norm();
    if nrm < 1.0 && nrm > 0.0 {
        p / nrm
    } else {
        p
    }
}

/// Largest paired eigenvalue distance between two matrices.
pub fn spectrum_gap(k1: &DMatrix<f64>, k2: &DMatrix<f64>) -> f64 {
    let mk = |k: &DMatrix<f64>| {
        let n = k.nrows();
        SpectralDecomposition::from_rows(eigenvalues(k), CMatrix::zeros(n, n))
    };
    let (s1, s2) = (mk(k1), mk(k2));
    match pair_spectra(&s1, &s2, f64::INFINITY) {
        Ok(perm) => perm
            .iter()
            .enumerate()
            .map(|(j, &p)| (s1.eigenvalues[j] - s2.eigenvalues[p]).norm())
            .fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub sim_residual: f64,
    pub spectrum_gap: f64,
}

pub fn history_csv(h: &[HistoryRow]) -> String {
    let header: Vec<String> = ["iter", "J", "sim_residual", "spectrum_gap"].iter().map(|s| s.to_string()).collect();
    crate::io::csv_string(&header, h.iter().map(|r| vec![r.iter as f64, r.j, r.sim_residual, r.spectrum_gap]))
}

#[derive(Clone)]
pub struct TrainOutcome {
    pub dict: MlpDictionary,
    pub k1: KoopmanMatrix,
    pub k2: KoopmanMatrix,
    /// Similarity-refined pair for the final dictionary (when `beta > 0`).
    pub similar: Option<(KoopmanMatrix, KoopmanMatrix, SimilarityState)>,
    pub history: Vec<HistoryRow>,
    pub diverged: bool,
}

fn discrete(k: DMatrix<f64>, dt: f64, provenance: KoopmanProvenance) -> KoopmanMatrix {
    KoopmanMatrix { k, mode: KoopmanMode::Discrete { dt }, provenance }
}

/// Alternating training loop.
pub fn train(data1: &SamplePairs, data2: &SamplePairs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(Exec::default(), data1, data2, cfg)
}

pub fn train_with(exec: Exec, data1: &SamplePairs, data2: &SamplePairs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data1.is_empty() || data2.is_empty() {
        return Err(Error::InvalidArgument("both data sets must be nonempty".into()));
    }
    let mut dict = MlpDictionary::new(cfg.width, cfg.seed)?;
    let sim_opts = SimilarityOptions { max_iter: cfg.sim_max_iter, ..Default::default() };
    let mut history = Vec::with_capacity(cfg.iters);
    let mut best = f64::INFINITY;
    let mut sim_residual = f64::NAN;
    let mut diverged = false;
    for it in 0..cfg.iters {
        let b1 = batch(exec, &dict, data1);
        let b2 = batch(exec, &dict, data2);
        let mut k1 = fit_from_features(&b1.px, &b1.py, cfg.ridge)?;
        let mut k2 = fit_from_features(&b2.px, &b2.py, cfg.ridge)?;
        // Loss of the least-squares pair; the refined pair trades J for
        // similarity, so divergence is judged on this value.
        let j = system_loss(&b1.px, &b1.py, &k1) + system_loss(&b2.px, &b2.py, &k2);
        if cfg.beta > 0.0 && cfg.sim_every > 0 && it % cfg.sim_every == 0 {
            let m1 = Moments::from_features(&b1.px, &b1.py);
            let m2 = Moments::from_features(&b2.px, &b2.py);
            let s = similarity_step(&k1, &k2, &m1, &m2, cfg.beta, cfg.seed.wrapping_add(it as u64 + 1), &sim_opts)?;
            sim_residual = s.state.residual;
            k1 = s.k1;
            k2 = s.k2;
        }
        let mut grad = vec![0.0; dict.theta.len()];
        let jr = system_loss_grad(exec, &dict, &k1, data1, &b1, &mut grad)
            + system_loss_grad(exec, &dict, &k2, data2, &b2, &mut grad);
        if !j.is_finite() || !jr.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training loss at iteration {it}")));
        }
        history.push(HistoryRow { iter: it, j, sim_residual, spectrum_gap: spectrum_gap(&k1, &k2) });
        best = best.min(j);
        if j > 10.0 * best {
            log::warn!("training diverged at iteration {it}: J = {j:e}, minimum {best:e}");
            diverged = true;
            break;
        }
        for (t, g) in dict.theta.iter_mut().zip(&grad) {
            *t -= cfg.lr * g;
        }
    }
    let b1 = batch(exec, &dict, data1);
    let b2 = batch(exec, &dict, data2);
    let k1 = fit_from_features(&b1.px, &b1.py, cfg.ridge)?;
    let k2 = fit_from_features(&b2.px, &b2.py, cfg.ridge)?;
    let similar = if cfg.beta > 0.0 {
        let m1 = Moments::from_features(&b1.px, &b1.py);
        let m2 = Moments::from_features(&b2.px, &b2.py);
        let s = similarity_step(&k1, &k2, &m1, &m2, cfg.beta, cfg.seed.wrapping_add(cfg.iters as u64 + 1), &sim_opts)?;
        Some((
            discrete(s.k1, data1.dt, KoopmanProvenance::Similarity),
            discrete(s.k2, data2.dt, KoopmanProvenance::Similarity),
            s.state,
        ))
    } else {
        None
    };
    Ok(TrainOutcome {
        dict,
        k1: discrete(k1, data1.dt, KoopmanProvenance::LeastSquares),
        k2: discrete(k2, data2.dt, KoopmanProvenance::LeastSquares),
        similar,
        history,
        diverged,
    })
}

/// Largest relative error between the analytic gradient and central
/// differences over 50 random parameters. Relative errors use the floor
/// `1e-8` in the denominator; components that are both zero count as 0.
pub fn grad_check(
    dict: &MlpDictionary,
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    data1: &SamplePairs,
    data2: &SamplePairs,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps = {eps} outside [1e-8, 1e-4]")));
    }
    let exec = Exec::default();
    let (_, g) = loss_and_gradient(exec, dict, k1, k2, data1, data2)?;
    let loss = |d: &MlpDictionary| -> Result<f64> {
        let b1 = batch(exec, d, data1);
        let b2 = batch(exec, d, data2);
        Ok(system_loss(&b1.px, &b1.py, k1) + system_loss(&b2.px, &b2.py, k2))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dict.theta.len();
    let mut worst: f64 = 0.0;
    let mut probe = dict.clone();
    for _ in 0..50.min(n) {
        let i = rng.random_range(0..n);
        let t = probe.theta[i];
        probe.theta[i] = t + eps;
        let fp = loss(&probe)?;
        probe.theta[i] = t - eps;
        let fm = loss(&probe)?;
        probe.theta[i] = t;
        let fd = (fp - fm) / (2.0 * eps);
        let diff = (fd - g[i]).abs();
        if diff > 0.0 {
            worst = worst.max(diff / fd.abs().max(g[i].abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// Time-reversed Van der Pol system and its image under the coordinatewise
/// map `ln(a + e^{b x})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpConfig {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub half_width: f64,
    pub samples: usize,
    pub dt: f64,
    pub train: TrainConfig,
    pub seed: u64,
    pub n_test: usize,
    pub t_final: f64,
    pub n_times: usize,
    /// Pairing tolerance for the spectra; unlimited by default, since the
    /// learned matrices are only approximately similar.
    pub pair_tol: Option<f64>,
}

impl Default for VdpConfig {
    fn default() -> Self {
        VdpConfig {
            mu: 1.0,
            a: 1.2,
            b: -1.5,
            half_width: 0.5,
            samples: 1000,
            dt: 0.1,
            train: TrainConfig::default(),
            seed: 0,
            n_test: 100,
            t_final: 10.0,
            n_times: 100,
            pair_tol: None,
        }
    }
}

#[derive(Clone, Serialize)]
pub struct VdpReport {
    pub times: Vec<f64>,
    /// Mean relative error per coordinate at each time.
    pub rel_error: Vec<[f64; 2]>,
    pub initial_error: [f64; 2],
    pub final_error: [f64; 2],
    pub matching_point: MatchingPoint,
    pub p_cond: Option<f64>,
    pub sim_residual: Option<f64>,
    pub final_loss: f64,
    pub diverged: bool,
    pub spectrum_gap: f64,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
    #[serde(skip)]
    pub trained: Option<TrainOutcome>,
}

impl VdpReport {
    pub fn errors_csv(&self) -> String {
        let header: Vec<String> = ["t", "rel_err_1", "rel_err_2"].iter().map(|s| s.to_string()).collect();
        crate::io::csv_string(&header, self.times.iter().zip(&self.rel_error).map(|(t, e)| vec![*t, e[0], e[1]]))
    }
}

/// Trains on seeded data from both systems, reconstructs `ĥ` from one
/// matched point, and measures `|h_i − ĥ_i| / |h_i|` along trajectories of
/// the first system.
pub fn vdp_experiment(exec: Exec, cfg: &VdpConfig) -> Result<VdpReport> {
    let params = |v: &[(&str, f64)]| v.iter().map(|(k, x)| (k.to_string(), *x)).collect();
    let sys1 = system("vdp", &params(&[("mu", cfg.mu)]))?;
    let sys2 = system("tvdp", &params(&[("mu", cfg.mu), ("a", cfg.a), ("b", cfg.b)]))?;
    let (a, b) = (cfg.a, cfg.b);
    let h = move |x: &[f64]| log_transform(a, b, x);
    let w = cfg.half_width;
    let box1 = SampleBox::cube(2, -w, w);
    let (lo, hi) = {
        let e1 = h(&[-w, -w]);
        let e2 = h(&[w, w]);
        (e1[0].min(e2[0]), e1[0].max(e2[0]))
    };
    let box2 = SampleBox::cube(2, lo, hi);
    let opts = IntegratorOptions::default();
    let data1 = sample_pairs_with(exec, &sys1, &box1, cfg.samples, cfg.dt, cfg.seed, opts)?;
    let data2 = sample_pairs_with(exec, &sys2, &box2, cfg.samples, cfg.dt, cfg.seed.wrapping_add(1), opts)?;
    let tc = TrainConfig { seed: cfg.train.seed ^ cfg.seed, ..cfg.train.clone() };
    let out = train_with(exec, &data1, &data2, &tc)?;
    // The least-squares pair is used for matching; the similarity-refined
    // pair only feeds the diagnostics.
    let (k1, k2) = (out.k1.clone(), out.k2.clone());
    let p_cond = out.similar.as_ref().map(|s| s.2.cond);
    let sim_residual = out.similar.as_ref().map(|s| s.2.residual);
    let z1 = uniform_points(&box1, 1, cfg.seed.wrapping_add(2)).remove(0);
    let mp = MatchingPoint { z2: h(&z1), z1 };
    let ics = uniform_points(&box1, cfg.n_test, cfg.seed.wrapping_add(3));
    let eopts = EdmdmOptions { pair_tol: cfg.pair_tol.unwrap_or(f64::INFINITY), probe: ics.clone(), ..Default::default() };
    let dict: Arc<dyn Dictionary> = Arc::new(out.dict.clone());
    let r = edmdm_pipeline(&k1, &k2, dict, &mp, &eopts)?;

    let times = crate::dynsys::time_grid(cfg.t_final, cfg.n_times);
    let per_ic = par::map(exec, &ics, |x0| -> Result<Vec<[f64; 2]>> {
        let tr = integrate_at(&sys1, x0, &times, opts)?;
        if tr.terminated_early {
            return Err(Error::BlowUp { t: tr.t_last() });
        }
        tr.states
            .iter()
            .map(|x| {
                let want = h(x);
                let got = r.h.apply(x)?;
                Ok([0, 1].map(|i| (want[i] - got[i]).abs() / want[i].abs()))
            })
            .collect()
    });
    let mut rel = vec![[0.0; 2]; times.len()];
    for e in per_ic {
        for (acc, v) in rel.iter_mut().zip(e?) {
            acc[0] += v[0] / cfg.n_test as f64;
            acc[1] += v[1] / cfg.n_test as f64;
        }
    }
    Ok(VdpReport {
        initial_error: rel[0],
        final_error: *rel.last().unwrap(),
        times,
        rel_error: rel,
        matching_point: mp,
        p_cond,
        sim_residual,
        final_loss: out.history.last().map_or(f64::NAN, |h| h.j),
        diverged: out.diverged,
        spectrum_gap: spectrum_gap(&k1.k, &k2.k),
        history: out.history.clone(),
        trained: Some(out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_system;
    use crate::dynsys::sample_pairs;

    fn small_data(seed: u64, n: usize) -> (SamplePairs, SamplePairs) {
        let s1 = default_system("vdp").unwrap();
        let s2 = default_system("lindiag").unwrap();
        let bx = SampleBox::cube(2, -0.5, 0.5);
        (sample_pairs(&s1, &bx, n, 0.1, seed).unwrap(), sample_pairs(&s2, &bx, n, 0.1, seed + 1).unwrap())
    }

    #[test]
    fn parameter_count() {
        assert_eq!(MlpDictionary::param_count(32), 2373);
        let d = MlpDictionary::new(32, 1).unwrap();
        assert_eq!(d.theta.len(), 2373);
        let v = d.eval(&[0.3, -0.2]);
        assert_eq!(&v[..3], &[1.0, 0.3, -0.2]);
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn loss_zero_for_identity_on_zero_dt() {
        let s = default_system("vdp").unwrap();
        let p = sample_pairs(&s, &SampleBox::cube(2, -2.0, 2.0), 20, 0.0, 1).unwrap();
        let d = MlpDictionary::new(8, 1).unwrap();
        let i = DMatrix::identity(8, 8);
        assert_eq!(combined_loss(&i, &i, &d, &p, &p).unwrap(), 0.0);
        let k = kstep(&d, &p, 0.0).unwrap();
        assert!((k.k - DMatrix::identity(8, 8)).amax() < 1e-8);
    }

    #[test]
    fn gradient_matches_differences() {
        let (d1, d2) = small_data(4, 40);
        let d = MlpDictionary::new(32, 9).unwrap();
        let k1 = kstep(&d, &d1, 1e-8).unwrap().k;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k2 = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
        for eps in [1e-4, 1e-6] {
            let e = grad_check(&d, &k1, &k2, &d1, &d2, eps, 5).unwrap();
            assert!(e <= 1e-5, "eps {eps}: {e:e}");
        }
    }

    #[test]
    fn similarity_example5() {
        let k1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let xs = uniform_points(&SampleBox::cube(2, -1.0, 1.0), 50, 3);
        let px = DMatrix::from_fn(2, 50, |i, j| xs[j][i]);
        let m1 = Moments::from_features(&px, &(&k1 * &px));
        let m2 = Moments::from_features(&px, &(&k2 * &px));
        let s = similarity_step(&k1, &k2, &m1, &m2, 100.0, 7, &SimilarityOptions::default()).unwrap();
        assert!(s.state.residual <= 1e-6, "{:?}", s.state);
        assert!(s.state.p.norm_squared() >= 1.0 - 1e-12);
        assert!(s.state.cond < 1e8);
        assert!(s.state.residual <= s.state.initial_residual);
        // Rows of P are (p, p) and (q, −q).
        let p = &s.state.p;
        assert!((p[(0, 0)] - p[(0, 1)]).abs() < 1e-5 && (p[(1, 0)] + p[(1, 1)]).abs() < 1e-5);
    }

    #[test]
    fn similarity_identical_and_beta_zero() {
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, -0.2]);
        let xs = uniform_points(&SampleBox::cube(2, -1.0, 1.0), 30, 1);
        let px = DMatrix::from_fn(2, 30, |i, j| xs[j][i]);
        let m = Moments::from_features(&px, &(&k * &px));
        let s = similarity_step(&k, &k, &m, &m, 100.0, 1, &SimilarityOptions::default()).unwrap();
        assert!(s.state.residual < 1e-6);
        let z = similarity_step(&k, &k, &m, &m, 0.0, 1, &SimilarityOptions::default()).unwrap();
        assert!(z.state.objective <= z.state.initial_objective);
    }

    #[test]
    fn zero_iterations_returns_initial_dictionary() {
        let (d1, d2) = small_data(1, 30);
        let cfg = TrainConfig { iters: 0, width: 8, ..Default::default() };
        let out = train(&d1, &d2, &cfg).unwrap();
        assert_eq!(out.dict, MlpDictionary::new(8, 0).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_keeps_prefix() {
        let (d1, d2) = small_data(2, 60);
        let cfg = TrainConfig { iters: 30, width: 8, sim_every: 10, sim_max_iter: 200, ..Default::default() };
        let a = train_with(Exec::Parallel, &d1, &d2, &cfg).unwrap();
        let b = train_with(Exec::Sequential, &d1, &d2, &cfg).unwrap();
        assert_eq!(a.dict, b.dict);
        assert_eq!(a.history, b.history);
        assert_eq!(&a.dict.eval(&[0.1, 0.2])[..3], &[1.0, 0.1, 0.2]);
    }
}
