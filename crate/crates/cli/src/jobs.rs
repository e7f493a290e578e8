//! Payloads of the seven job subcommands.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use eigenmatch::catalog::{self, log_transform, log_transform_inv};
use eigenmatch::dictlearn::{history_csv, train, MlpDictionary, TrainConfig};
use eigenmatch::domain::{Domain, SampleBox};
use eigenmatch::dynsys::{sample_pairs, uniform_points, SystemSpec};
use eigenmatch::edmd::{edmd_fit, left_eigens, project_generator, Closure, DictSpec, Dictionary, KoopmanMatrix};
use eigenmatch::edmdm::{edmdm_pipeline, EdmdmOptions, MatchingPoint};
use eigenmatch::io::{complex_rows, csv_string};
use eigenmatch::keig::{
    catalog_eigenstack, characteristics_eigenfunction, grid_csv, keig_residual, quadrature_eigenfunction,
    CharacteristicsOptions, Eigenfunction, StackSpec,
};
use eigenmatch::laplace::{
    laplace_average, levelset_continuation, surface_from_levelset, ContinuationOptions, LaplaceConfig, LevelSet,
};
use eigenmatch::matching::{build_match, conjugacy_defect, MatchOptions, TransformMap};
use eigenmatch::Complex64;
use serde::{Deserialize, Serialize};

use crate::{payload, CliError, JobConfig, Output, Subcommand};

/// A catalog system with parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysRef {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SysRef {
    pub fn build(&self) -> Result<SystemSpec, CliError> {
        Ok(catalog::system(&self.id, &self.params)?)
    }
}

/// Tensor grid with `n` points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<Vec<f64>>, CliError> {
        Ok(SampleBox::new(self.lo.clone(), self.hi.clone())?.grid(self.n))
    }
}

/// `n` uniform random points in a box, drawn from the job seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

impl SampleSpec {
    pub fn sample_box(&self) -> Result<SampleBox, CliError> {
        Ok(SampleBox::new(self.lo.clone(), self.hi.clone())?)
    }

    pub fn points(&self, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
        Ok(uniform_points(&self.sample_box()?, self.n, seed))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeigJob {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub method: KeigMethod,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KeigMethod {
    /// Closed-form stack from the catalog.
    Closed {
        #[serde(default)]
        lambdas: Option<Vec<f64>>,
        #[serde(default)]
        variant: Option<String>,
    },
    /// 1D integrating-factor quadrature normalized at `x_ref`.
    Quadrature {
        #[serde(with = "eigenmatch::io::complex")]
        lambda: Complex64,
        x_ref: f64,
    },
    /// Characteristics from constant data on a level-set polyline (CSV
    /// `x1,x2`, read as a closed curve).
    Characteristics {
        #[serde(with = "eigenmatch::io::complex")]
        lambda: Complex64,
        levelset: PathBuf,
        #[serde(with = "eigenmatch::io::complex")]
        value: Complex64,
        #[serde(default)]
        options: CharacteristicsOptions,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchJob {
    pub stack1: StackSpec,
    pub stack2: StackSpec,
    pub samples: SampleSpec,
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub options: MatchOptions,
}

fn default_steps() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Identity,
    /// `G²⁻¹ ∘ G¹` from two catalog stacks.
    Stacks {
        stack1: StackSpec,
        stack2: StackSpec,
        #[serde(default)]
        options: MatchOptions,
    },
    /// Coordinatewise `ln(a + e^{b x})`.
    LogTransform { a: f64, b: f64 },
}

impl MapSpec {
    pub fn build(&self, dim: usize) -> Result<TransformMap, CliError> {
        Ok(match self {
            MapSpec::Identity => TransformMap::identity(dim),
            MapSpec::Stacks { stack1, stack2, options } => {
                build_match(&catalog_eigenstack(stack1)?, &catalog_eigenstack(stack2)?, options)?
            }
            &MapSpec::LogTransform { a, b } => {
                if !(a > 0.0) || b == 0.0 {
                    return Err(CliError::invalid(format!("log transform needs a > 0 and b != 0, got a={a}, b={b}")));
                }
                TransformMap::new(dim, "ln(a + e^{bx})", Domain::All, move |x| Ok(log_transform(a, b, x)))
                    .with_inverse(move |y| Ok(log_transform_inv(a, b, y)))
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectJob {
    pub system1: SysRef,
    pub system2: SysRef,
    pub map: MapSpec,
    pub samples: SampleSpec,
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitMethod {
    /// Exact generator projection of a polynomial field.
    Generator {
        #[serde(default)]
        closure: Closure,
    },
    /// Least squares on seeded flow pairs `(x, S_dt x)`.
    LeastSquares {
        samples: SampleSpec,
        dt: f64,
        #[serde(default)]
        ridge: f64,
    },
}

impl FitMethod {
    pub fn fit(&self, sys: &SystemSpec, dict: &DictSpec, seed: u64) -> Result<KoopmanMatrix, CliError> {
        let d = dict.build()?;
        Ok(match self {
            FitMethod::Generator { closure } => project_generator(sys, &d, *closure)?,
            FitMethod::LeastSquares { samples, dt, ridge } => {
                let data = sample_pairs(sys, &samples.sample_box()?, samples.n, *dt, seed)?;
                edmd_fit(&data, &d, *ridge)?
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdmdJob {
    pub system: SysRef,
    pub dict: DictSpec,
    pub method: FitMethod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdmdmJob {
    pub system1: SysRef,
    pub system2: SysRef,
    pub dict: DictSpec,
    pub method: FitMethod,
    pub matching_point: MatchingPoint,
    #[serde(default)]
    pub truncate: Option<usize>,
    pub grid: GridSpec,
    #[serde(default)]
    pub options: EdmdmOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub system1: SysRef,
    pub system2: SysRef,
    pub box1: SampleBox,
    pub box2: SampleBox,
    pub dt: f64,
    /// `seed` is replaced by the job seed.
    #[serde(default)]
    pub config: TrainConfig,
}

/// Format tag of [`Checkpoint`] files.
pub const CHECKPOINT_VERSION: &str = "eigenmatch.checkpoint/1";

/// Trained dictionary and the final least-squares pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub dictionary: MlpDictionary,
    pub k1: KoopmanMatrix,
    pub k2: KoopmanMatrix,
}

impl Checkpoint {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::invalid(format!("checkpoint: {e}")))?;
        if c.format != CHECKPOINT_VERSION {
            return Err(CliError::invalid(format!(
                "checkpoint format `{}` is not supported; expected `{CHECKPOINT_VERSION}`",
                c.format
            )));
        }
        if c.dictionary.theta.len() != MlpDictionary::param_count(c.dictionary.width) {
            return Err(CliError::invalid("checkpoint parameter count does not match its width"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsetJob {
    pub system: SysRef,
    pub laplace: LaplaceConfig,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub continuation: ContinuationOptions,
    /// Point the winding number is measured around (default: origin).
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

pub fn dispatch(job: &JobConfig) -> Result<Output, CliError> {
    let seed = job.seed;
    match job.subcommand {
        Subcommand::Keig => keig(&payload(&job.payload)?),
        Subcommand::Match => match_job(&payload(&job.payload)?, seed),
        Subcommand::Defect => defect(&payload(&job.payload)?, seed),
        Subcommand::Edmd => edmd(&payload(&job.payload)?, seed),
        Subcommand::Edmdm => edmdm(&payload(&job.payload)?, seed),
        Subcommand::Train => train_job(&payload(&job.payload)?, seed),
        Subcommand::Levelset => levelset(&payload(&job.payload)?),
    }
}

fn header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn keig(p: &KeigJob) -> Result<Output, CliError> {
    let sys = catalog::system(&p.system, &p.params)?;
    let gs: Vec<Eigenfunction> = match &p.method {
        KeigMethod::Closed { lambdas, variant } => {
            let spec = StackSpec {
                system: p.system.clone(),
                params: p.params.clone(),
                lambdas: lambdas.clone(),
                variant: variant.clone(),
            };
            catalog_eigenstack(&spec)?.entries
        }
        KeigMethod::Quadrature { lambda, x_ref } => {
            if sys.dim != 1 {
                return Err(CliError::invalid("quadrature needs a one-dimensional system"));
            }
            vec![quadrature_eigenfunction(&sys, *lambda, *x_ref)]
        }
        KeigMethod::Characteristics { lambda, levelset, value, options } => {
            let text = std::fs::read_to_string(levelset)
                .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", levelset.display())))?;
            let ls = LevelSet::from_csv(&text, value.norm(), true)?;
            let surface = surface_from_levelset(&ls, &vec![*value; ls.points.len()])?;
            vec![characteristics_eigenfunction(&sys, *lambda, surface, *options)]
        }
    };
    let pts = p.grid.points()?;
    if pts.first().is_some_and(|x| x.len() != sys.dim) {
        return Err(CliError::invalid(format!("grid is not {}-dimensional", sys.dim)));
    }
    let mut out = Output::default();
    let mut residuals = Vec::new();
    let mut lambdas = Vec::new();
    for (i, g) in gs.iter().enumerate() {
        out.file(&format!("g{}.csv", i + 1), grid_csv(g, &pts));
        let inside: Vec<Vec<f64>> = pts.iter().filter(|x| g.eval(x).is_ok()).cloned().collect();
        residuals.push(if inside.is_empty() { f64::NAN } else { keig_residual(&sys, g, &inside)? });
        lambdas.push([g.lambda.re, g.lambda.im]);
    }
    out.metric("eigenvalues", lambdas);
    out.metric("residual", residuals);
    Ok(out)
}

fn samples_csv(xs: &[Vec<f64>], h: &TransformMap, per_sample: &[f64]) -> String {
    let d = xs.first().map_or(0, |x| x.len());
    let mut head = header("x", d);
    head.extend(header("y", h.dim));
    head.push("defect".into());
    let rows = xs.iter().zip(per_sample).map(|(x, e)| {
        let mut r = x.clone();
        r.extend(h.apply(x).unwrap_or_else(|_| vec![f64::NAN; h.dim]));
        r.push(*e);
        r
    });
    csv_string(&head, rows)
}

fn defect_output(h: &TransformMap, s1: &SystemSpec, s2: &SystemSpec, xs: &[Vec<f64>], horizon: f64, steps: usize) -> Result<Output, CliError> {
    let r = conjugacy_defect(h, s1, s2, xs, horizon, steps)?;
    let mut out = Output::default();
    out.file("samples.csv", samples_csv(xs, h, &r.per_sample));
    out.metric("defect", r.defect);
    out.metric("retained", r.retained);
    out.metric("skipped", r.skipped);
    out.metric("acceptance_rate", r.retained as f64 / xs.len() as f64);
    Ok(out)
}

fn match_job(p: &MatchJob, seed: u64) -> Result<Output, CliError> {
    let g1 = catalog_eigenstack(&p.stack1)?;
    let g2 = catalog_eigenstack(&p.stack2)?;
    let s1 = catalog::system(&p.stack1.system, &p.stack1.params)?;
    let s2 = catalog::system(&p.stack2.system, &p.stack2.params)?;
    let h = build_match(&g1, &g2, &p.options)?;
    defect_output(&h, &s1, &s2, &p.samples.points(seed)?, p.horizon, p.steps)
}

fn defect(p: &DefectJob, seed: u64) -> Result<Output, CliError> {
    let s1 = p.system1.build()?;
    let s2 = p.system2.build()?;
    let h = p.map.build(s1.dim)?;
    defect_output(&h, &s1, &s2, &p.samples.points(seed)?, p.horizon, p.steps)
}

fn edmd(p: &EdmdJob, seed: u64) -> Result<Output, CliError> {
    let sys = p.system.build()?;
    let k = p.method.fit(&sys, &p.dict, seed)?;
    let spec = left_eigens(&k)?;
    let mut out = Output::default();
    out.json("koopman.json", &k)?;
    out.json("spectrum.json", &spec)?;
    out.metric("n", k.n());
    out.metric("distinct", spec.distinct);
    out.metric("min_gap", spec.min_gap);
    out.metric("eigenvalues", spec.eigenvalues.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>());
    Ok(out)
}

fn edmdm(p: &EdmdmJob, seed: u64) -> Result<Output, CliError> {
    let s1 = p.system1.build()?;
    let s2 = p.system2.build()?;
    let k1 = p.method.fit(&s1, &p.dict, seed)?;
    let k2 = p.method.fit(&s2, &p.dict, seed.wrapping_add(1))?;
    let mut opts = p.options.clone();
    if p.truncate.is_some() {
        opts.truncate = p.truncate;
    }
    let dict: Arc<dyn Dictionary> = Arc::new(p.dict.build()?);
    let r = edmdm_pipeline(&k1, &k2, dict, &p.matching_point, &opts)?;
    let pts = p.grid.points()?;
    let d = r.h.dim;
    let mut head = header("x", d);
    head.extend(header("h", d));
    let mut rows = Vec::with_capacity(pts.len());
    for x in &pts {
        let mut row = x.clone();
        row.extend(r.h.apply(x)?);
        rows.push(row);
    }
    let mut out = Output::default();
    out.json("koopman1.json", &k1)?;
    out.json("koopman2.json", &k2)?;
    out.json("match_result.json", &r)?;
    out.file("h_grid.csv", csv_string(&head, rows));
    out.metric("h_matrix", complex_rows(&r.h_matrix));
    out.metric("similarity_residual", r.diagnostics.similarity_residual);
    out.metric("intertwining_residual", r.diagnostics.intertwining_residual);
    out.metric("imag_residue", r.diagnostics.imag_residue);
    out.metric("cond_v2", r.diagnostics.cond_v2);
    Ok(out)
}

fn train_job(p: &TrainJob, seed: u64) -> Result<Output, CliError> {
    let s1 = p.system1.build()?;
    let s2 = p.system2.build()?;
    let cfg = TrainConfig { seed, ..p.config.clone() };
    cfg.validate()?;
    let d1 = sample_pairs(&s1, &p.box1, cfg.batch, p.dt, seed)?;
    let d2 = sample_pairs(&s2, &p.box2, cfg.batch, p.dt, seed.wrapping_add(1))?;
    let t = train(&d1, &d2, &cfg)?;
    let ck = Checkpoint { format: CHECKPOINT_VERSION.into(), dictionary: t.dict.clone(), k1: t.k1.clone(), k2: t.k2.clone() };
    let mut out = Output::default();
    out.json("checkpoint.json", &ck)?;
    out.file("history.csv", history_csv(&t.history));
    out.metric("final_loss", t.history.last().map(|h| h.j));
    out.metric("diverged", t.diverged);
    out.metric("spectrum_gap", t.history.last().map(|h| h.spectrum_gap));
    if let Some((_, _, st)) = &t.similar {
        out.metric("sim_residual", st.residual);
        out.metric("p_cond", st.cond);
    }
    Ok(out)
}

fn levelset(p: &LevelsetJob) -> Result<Output, CliError> {
    let sys = p.system.build()?;
    p.laplace.validate()?;
    let ls = levelset_continuation(&p.laplace, &sys, &p.x0, &p.continuation)?;
    let mut level_error: f64 = 0.0;
    for x in &ls.points {
        let v = laplace_average(&p.laplace, &sys, x)?.norm();
        level_error = level_error.max((v - ls.level).abs() / ls.level);
    }
    let center = p.center.clone().unwrap_or_else(|| vec![0.0; 2]);
    let mut out = Output::default();
    out.file("levelset.csv", ls.to_csv());
    out.metric("points", ls.points.len());
    out.metric("closed", ls.closed);
    out.metric("level", ls.level);
    out.metric("relative_level_error", level_error);
    out.metric("winding_number", ls.winding_number(&center));
    out.metric("self_intersecting", ls.is_self_intersecting());
    Ok(out)
}
