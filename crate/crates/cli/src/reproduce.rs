//! Pinned configurations for the worked examples, each compared against
//! its known answer.

use std::f64::consts::PI;
use std::sync::Arc;

use eigenmatch::catalog::{default_system, quad2d_h, quad2d_h_inv};
use eigenmatch::dictlearn::{history_csv, vdp_experiment, TrainConfig, VdpConfig};
use eigenmatch::domain::SampleBox;
use eigenmatch::dynsys::uniform_points;
use eigenmatch::edmd::{project_generator, Closure, MonomialDictionary, SpectralDecomposition};
use eigenmatch::edmdm::{compute_d, edmdm_pipeline, EdmdmOptions, MatchingPoint};
use eigenmatch::io::csv_string;
use eigenmatch::keig::{
    catalog_eigenstack, keig_1d_quadrature, keig_characteristics, keig_residual, InitialSurface, StackSpec,
};
use eigenmatch::linalg::{dist, CMatrix};
use eigenmatch::matching::{build_match, compose, conjugacy_defect, pushforward_field, MatchOptions, TransformMap};
use eigenmatch::par::Exec;
use eigenmatch::Complex64;

use crate::{Check, CliError, Output};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 1;

/// Step size of the Van der Pol training run (see README).
pub const VDP_LR: f64 = 1.0;
/// Outer iterations of the Van der Pol training run.
pub const VDP_ITERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entry {
    Example1,
    Example2,
    Example3,
    Example4,
    Example5,
    Example6,
    AppendixB,
    AppendixD,
    Vdp,
}

impl Entry {
    pub const ALL: [Entry; 9] = [
        Entry::Example1,
        Entry::Example2,
        Entry::Example3,
        Entry::Example4,
        Entry::Example5,
        Entry::Example6,
        Entry::AppendixB,
        Entry::AppendixD,
        Entry::Vdp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Entry::Example1 => "example1",
            Entry::Example2 => "example2",
            Entry::Example3 => "example3",
            Entry::Example4 => "example4",
            Entry::Example5 => "example5",
            Entry::Example6 => "example6",
            Entry::AppendixB => "appendixB",
            Entry::AppendixD => "appendixD",
            Entry::Vdp => "vdp",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Entry::ALL.into_iter().find(|e| e.name() == name).ok_or_else(|| {
            let names: Vec<&str> = Entry::ALL.iter().map(|e| e.name()).collect();
            CliError::invalid(format!("unknown reproduction `{name}`; expected one of {}", names.join(", ")))
        })
    }

    pub fn run(self, seed: u64) -> Result<Output, CliError> {
        match self {
            Entry::Example1 => example1(seed),
            Entry::Example2 => example2(seed),
            Entry::Example3 => example3(seed),
            Entry::Example4 => example4(seed),
            Entry::Example5 => example5(),
            Entry::Example6 => example6(),
            Entry::AppendixB => appendix_b(),
            Entry::AppendixD => appendix_d(seed),
            Entry::Vdp => vdp(seed),
        }
    }
}

fn stack(id: &str) -> Result<eigenmatch::matching::EigenStack, CliError> {
    Ok(catalog_eigenstack(&StackSpec::new(id))?)
}

fn stack_residual(spec: &StackSpec, pts: &[Vec<f64>]) -> Result<f64, CliError> {
    let sys = eigenmatch::keig::stack_system(spec)?;
    let mut worst: f64 = 0.0;
    for g in catalog_eigenstack(spec)?.entries {
        worst = worst.max(keig_residual(&sys, &g, pts)?);
    }
    Ok(worst)
}

fn max_err(pts: &[Vec<f64>], h: &TransformMap, want: impl Fn(&[f64]) -> Vec<f64>) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for x in pts {
        let got = h.apply(x)?;
        let w = want(x);
        worst = got.iter().zip(&w).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    Ok(worst)
}

fn map_csv(h: &TransformMap, pts: &[Vec<f64>]) -> Result<String, CliError> {
    let d = h.dim;
    let mut head: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    head.extend((1..=d).map(|i| format!("h{i}")));
    let mut rows = Vec::with_capacity(pts.len());
    for x in pts {
        let mut r = x.clone();
        r.extend(h.apply(x)?);
        rows.push(r);
    }
    Ok(csv_string(&head, rows))
}

/// Largest `‖Dh F¹ − F²‖` at `h(x)` over `pts`.
fn pushforward_error(h: &TransformMap, from: &str, to: &str, pts: &[Vec<f64>]) -> Result<f64, CliError> {
    let s1 = default_system(from)?;
    let s2 = default_system(to)?;
    let mut worst: f64 = 0.0;
    for x in pts {
        let y = h.apply(x)?;
        let f = pushforward_field(h, &s1, &y)?;
        worst = worst.max(dist(&f, &s2.evaluate_field(&y)?));
    }
    Ok(worst)
}

/// One-dimensional match `quad1d → to` against the closed form `want`.
fn one_dim(seed: u64, to: &str, want: fn(f64) -> f64) -> Result<Output, CliError> {
    let mut out = Output::default();
    let pts = SampleBox::cube(1, 0.5, 5.0).grid(100);
    out.checks.push(Check::at_most("residual quad1d", stack_residual(&StackSpec::new("quad1d"), &pts)?, 1e-6));
    out.checks.push(Check::at_most(&format!("residual {to}"), stack_residual(&StackSpec::new(to), &pts)?, 1e-6));
    let h = build_match(&stack("quad1d")?, &stack(to)?, &MatchOptions::default())?;
    out.checks.push(Check::at_most("h vs closed form", max_err(&pts, &h, |x| vec![want(x[0])])?, 1e-10));
    out.checks.push(Check::at_most("pushforward", pushforward_error(&h, "quad1d", to, &pts)?, 1e-6));
    // Short enough that no sample reaches the blow-up time 1/x.
    let samples = uniform_points(&SampleBox::cube(1, 0.2, 0.9), 100, seed);
    let r = conjugacy_defect(&h, &default_system("quad1d")?, &default_system(to)?, &samples, 1.0, 10)?;
    out.checks.push(Check::at_most("defect", r.defect, 1e-5));
    out.metric("defect", r.defect);
    out.file("h.csv", map_csv(&h, &pts)?);
    Ok(out)
}

fn example1(seed: u64) -> Result<Output, CliError> {
    let mut out = one_dim(seed, "lin1d", |x| (-1.0 / x).exp())?;
    let sys = default_system("quad1d")?;
    let pts = SampleBox::cube(1, 0.5, 5.0).grid(100);
    let mut rows = Vec::new();
    for l in [0.5, 1.0, 2.0] {
        let mut worst: f64 = 0.0;
        for x in &pts {
            let q = keig_1d_quadrature(&sys, Complex64::new(l, 0.0), 1.0, x[0])?;
            let exact = (l - l / x[0]).exp();
            worst = worst.max((q - exact).norm());
            rows.push(vec![l, x[0], q.re, exact]);
        }
        out.checks.push(Check::at_most(&format!("quadrature lambda={l}"), worst, 1e-8));
    }
    let head: Vec<String> = ["lambda", "x1", "g_quad", "g_exact"].iter().map(|s| s.to_string()).collect();
    out.file("quadrature.csv", csv_string(&head, rows));
    Ok(out)
}

fn example2(seed: u64) -> Result<Output, CliError> {
    one_dim(seed, "rect1d", |x| -1.0 / x)
}

fn example3(seed: u64) -> Result<Output, CliError> {
    let mut out = Output::default();
    let interior = SampleBox::cube(2, -0.9, 0.9).grid(10);
    for id in ["quad2d", "lindiag"] {
        out.checks.push(Check::at_most(&format!("residual {id}"), stack_residual(&StackSpec::new(id), &interior)?, 1e-6));
    }
    let h = build_match(&stack("quad2d")?, &stack("lindiag")?, &MatchOptions::default())?;
    let grid = SampleBox::cube(2, -1.0, 1.0).grid(21);
    out.checks.push(Check::at_most("h vs closed form", max_err(&grid, &h, quad2d_h)?, 1e-10));
    let samples = uniform_points(&SampleBox::cube(2, -1.0, 1.0), 100, seed);
    let r = conjugacy_defect(&h, &default_system("quad2d")?, &default_system("lindiag")?, &samples, 1.0, 10)?;
    out.checks.push(Check::at_most("defect", r.defect, 1e-5));
    out.metric("defect", r.defect);
    out.file("h_grid.csv", map_csv(&h, &grid)?);
    Ok(out)
}

fn example4(seed: u64) -> Result<Output, CliError> {
    let mut out = Output::default();
    let lin = stack("lindiag")?;
    let h3 = build_match(&stack("quad2d")?, &lin, &MatchOptions::default())?;
    // Interior of the positive quadrant in lindiag coordinates, pulled back.
    let z = uniform_points(&SampleBox::cube(2, 0.1, 1.0), 50, seed);
    let xs: Vec<Vec<f64>> = z.iter().map(|p| quad2d_h_inv(p)).collect();
    let residual_box = SampleBox::new(vec![-1.0, 2.5], vec![1.0, 4.0])?.grid(10);
    let mut maps = Vec::new();
    for q in ["q1", "q2"] {
        let spec = StackSpec::new("rect2d").variant(q);
        out.checks.push(Check::at_most(&format!("residual rect2d {q}"), stack_residual(&spec, &residual_box)?, 1e-6));
        let h4 = build_match(&lin, &catalog_eigenstack(&spec)?, &MatchOptions::default())?;
        out.checks.push(Check::at_most(&format!("pushforward lindiag {q}"), pushforward_error(&h4, "lindiag", "rect2d", &z)?, 1e-6));
        let h = compose(&h4, &h3, &xs)?;
        out.checks.push(Check::at_most(&format!("pushforward quad2d {q}"), pushforward_error(&h, "quad2d", "rect2d", &xs)?, 1e-6));
        out.file(&format!("h_{q}.csv"), map_csv(&h, &xs)?);
        maps.push(h);
    }
    let mut spread: f64 = 0.0;
    for x in &xs {
        spread = spread.max(dist(&maps[0].apply(x)?, &maps[1].apply(x)?));
    }
    out.checks.push(Check::at_least("max |h_q1 - h_q2|", spread, 0.1));
    Ok(out)
}

fn example5() -> Result<Output, CliError> {
    let mut out = Output::default();
    let lin = MonomialDictionary::linear(2);
    let k1 = project_generator(&default_system("ex5a")?, &lin, Closure::Strict)?;
    let k2 = project_generator(&default_system("ex5b")?, &lin, Closure::Strict)?;
    let entry_err = |m: &nalgebra::DMatrix<f64>, want: [f64; 4]| {
        m.iter().zip(want_col_major(want)).fold(0.0f64, |w, (a, b)| w.max((a - b).abs()))
    };
    out.checks.push(Check::at_most("K1 = [[0,1],[1,0]]", entry_err(&k1.k, [0.0, 1.0, 1.0, 0.0]), 1e-12));
    out.checks.push(Check::at_most("K2 = diag(1,-1)", entry_err(&k2.k, [1.0, 0.0, 0.0, -1.0]), 1e-12));
    let mp = MatchingPoint { z1: vec![1.0, 2.0], z2: vec![3.0, -1.0] };
    let r = edmdm_pipeline(&k1, &k2, Arc::new(lin.clone()), &mp, &EdmdmOptions::default())?;
    let want = [[1.0, 1.0], [1.0, -1.0]];
    let mut herr: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            herr = herr.max((r.h_matrix[(i, j)] - Complex64::new(want[i][j], 0.0)).norm());
        }
    }
    out.checks.push(Check::at_most("h matrix", herr, 1e-12));
    // D for the eigenvector rows as printed, modes listed (+1, −1).
    let c = |v: f64| Complex64::new(v, 0.0);
    let s1 = SpectralDecomposition::from_rows(
        vec![c(1.0), c(-1.0)],
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(-1.0), c(1.0)]),
    );
    let s2 = SpectralDecomposition::from_rows(
        vec![c(1.0), c(-1.0)],
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(1.0)]),
    );
    let (d, _) = compute_d(&s1, &s2, &[0, 1], &lin, &mp, 1e-10)?;
    let derr = (d[0] - 1.0).norm().max((d[1] + 1.0).norm());
    out.checks.push(Check::at_most("D = diag(1,-1) for printed vectors", derr, 1e-12));
    out.metric("d_canonical", r.d.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>());
    out.json("koopman1.json", &k1)?;
    out.json("koopman2.json", &k2)?;
    out.json("match_result.json", &r)?;
    Ok(out)
}

fn want_col_major(rm: [f64; 4]) -> [f64; 4] {
    [rm[0], rm[2], rm[1], rm[3]]
}

/// Coefficients of `h(x) = (x₁ − x₂², −x₁² + x₂ + 2x₁x₂² − x₂⁴)`.
const EXAMPLE6_H: [&[([u32; 2], f64)]; 2] =
    [&[([1, 0], 1.0), ([0, 2], -1.0)], &[([2, 0], -1.0), ([0, 1], 1.0), ([1, 2], 2.0), ([0, 4], -1.0)]];

fn example6() -> Result<Output, CliError> {
    let mut out = Output::default();
    let dict = MonomialDictionary::multinomial(2, 14)?;
    let k1 = project_generator(&default_system("quad2d")?, &dict, Closure::Truncate)?;
    let k2 = project_generator(&default_system("lindiag")?, &dict, Closure::Strict)?;
    let mp = MatchingPoint { z1: vec![2.0, 2.0], z2: vec![-2.0, -2.0] };
    let r = edmdm_pipeline(&k1, &k2, Arc::new(dict.clone()), &mp, &EdmdmOptions::default())?;
    let mut coef_err: f64 = 0.0;
    for (i, terms) in EXAMPLE6_H.iter().enumerate() {
        for (j, e) in dict.exps.iter().enumerate() {
            let want = terms.iter().find(|(t, _)| t.as_slice() == e.as_slice()).map_or(0.0, |t| t.1);
            coef_err = coef_err.max((r.h_matrix[(i, j)] - Complex64::new(want, 0.0)).norm());
        }
    }
    out.checks.push(Check::at_most("h coefficients", coef_err, 1e-8));
    let grid = SampleBox::cube(2, -1.0, 1.0).grid(41);
    out.checks.push(Check::at_most("h on 41x41 grid", max_err(&grid, &r.h, quad2d_h)?, 1e-8));
    out.metric("similarity_residual", r.diagnostics.similarity_residual);
    out.json("match_result.json", &r)?;
    out.file("h_grid.csv", map_csv(&r.h, &grid)?);
    Ok(out)
}

fn appendix_b() -> Result<Output, CliError> {
    let mut out = Output::default();
    let b1 = SampleBox::cube(2, 0.5, 1.5).grid(10);
    out.checks.push(Check::at_most("residual appB1", stack_residual(&StackSpec::new("appB1"), &b1)?, 1e-6));
    let b2 = SampleBox::cube(2, 0.2, 1.0).grid(10);
    for v in ["const", "x"] {
        let spec = StackSpec::new("appB2").variant(v);
        out.checks.push(Check::at_most(&format!("residual appB2 {v}"), stack_residual(&spec, &b2)?, 1e-6));
    }
    // Characteristics from g₀ ≡ 1 on {x = y} reproduce the first closed form.
    let sys = default_system("appB1")?;
    let g = &stack("appB1")?.entries[0];
    let surface = InitialSurface::constant(2, |p| p[0] - p[1], Complex64::new(1.0, 0.0));
    let pts = SampleBox::new(vec![1.2, 0.5], vec![2.0, 1.0])?.grid(5);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for x in &pts {
        let v = keig_characteristics(&sys, g.lambda, &surface, x, &Default::default())?.value;
        let exact = g.eval(x)?;
        worst = worst.max((v - exact).norm());
        rows.push(vec![x[0], x[1], v.re, exact.re]);
    }
    out.checks.push(Check::at_most("characteristics vs closed form", worst, 1e-6));
    let head: Vec<String> = ["x1", "x2", "g_char", "g_exact"].iter().map(|s| s.to_string()).collect();
    out.file("characteristics.csv", csv_string(&head, rows));
    Ok(out)
}

fn appendix_d(seed: u64) -> Result<Output, CliError> {
    let mut out = Output::default();
    let g1 = catalog_eigenstack(&StackSpec::new("appB2").variant("const"))?;
    let g2 = catalog_eigenstack(&StackSpec::new("appB2").variant("x"))?;
    let h = build_match(&g1, &g2, &MatchOptions::default())?;
    let polar = uniform_points(&SampleBox::new(vec![0.5, 0.0], vec![1.5, 2.0 * PI])?, 100, seed);
    let samples: Vec<Vec<f64>> = polar.iter().map(|p| vec![p[0] * p[1].cos(), p[0] * p[1].sin()]).collect();
    let mut moved: f64 = 0.0;
    for x in &samples {
        moved = moved.max(dist(&h.apply(x)?, x));
    }
    out.checks.push(Check::at_least("max |h(x) - x|", moved, 0.1));
    let sys = default_system("appB2")?;
    let r = conjugacy_defect(&h, &sys, &sys, &samples, 1.0, 10)?;
    out.checks.push(Check::at_least("defect", r.defect, 0.1));
    out.metric("defect", r.defect);
    out.metric("skipped", r.skipped);
    out.file("h.csv", map_csv(&h, &samples)?);
    Ok(out)
}

/// Pinned Van der Pol configuration.
pub fn vdp_config(seed: u64) -> VdpConfig {
    VdpConfig { seed, train: TrainConfig { lr: VDP_LR, iters: VDP_ITERS, ..Default::default() }, ..Default::default() }
}

fn vdp(seed: u64) -> Result<Output, CliError> {
    let r = vdp_experiment(Exec::default(), &vdp_config(seed))?;
    let mut out = Output::default();
    for i in 0..2 {
        out.checks.push(Check::at_most(&format!("initial error x{}", i + 1), r.initial_error[i], 0.1));
        out.checks.push(Check::at_most(
            &format!("final - initial error x{}", i + 1),
            r.final_error[i] - r.initial_error[i],
            0.0,
        ));
    }
    if let Some(c) = r.p_cond {
        out.checks.push(Check::at_most("cond(P)", c, 1e8));
    }
    out.json("vdp_report.json", &r)?;
    out.file("errors.csv", r.errors_csv());
    out.file("history.csv", history_csv(&r.history));
    Ok(out)
}

