//! Error metrics, experiment configuration, convergence studies and reports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, Field};
use crate::error::{invalid, Error, Result};
use crate::extrinsic::{assemble_covariant_extrinsic, assemble_extrinsic};
use crate::geometry::{analytic_frames, sample_manifold, Manifold, NeighborIndex, PointCloud, Stencils};
use crate::gmls::MultiIndexSet;
use crate::intrinsic::{assemble_covariant_intrinsic, assemble_intrinsic, Degrees};
use crate::operators::{
    eigen_dense, eigen_extremal, leading_real_part, stabilize, BlockOperator, CovariantOperator, ExtremalOptions,
    LaplacianKind, Spectrum, DENSE_EIGEN_CAP,
};
use crate::pde::{self, EvolutionProblem, Scheme, TimeStepper};
use crate::tangent::{estimate_frames, FrameField, Refinement};

/// max_i ‖a_i − b_i‖₂ over rows of length `n`.
pub fn max_row_distance(a: &[f64], b: &[f64], n: usize) -> f64 {
    a.chunks(n)
        .zip(b.chunks(n))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// max_i ‖T̂_i (L û)_i − ΔU(x_i)‖₂ with û = T̂ᵀU.
pub fn forward_error(op: &BlockOperator, frames: &FrameField, u_ambient: &[f64], lap_ambient: &[f64]) -> Result<f64> {
    if u_ambient.len() != lap_ambient.len() || u_ambient.len() != frames.len() * frames.ambient_dim() {
        return invalid("ambient fields do not match the frames");
    }
    let lu = op.apply(&frames.to_coefficients(u_ambient))?;
    Ok(max_row_distance(&frames.to_ambient(&lu), lap_ambient, frames.ambient_dim()))
}

/// max_i ‖T̂_i û_i − U(x_i)‖₂.
pub fn inverse_error(u_hat: &[f64], frames: &FrameField, u_ambient: &[f64]) -> Result<f64> {
    if u_hat.len() != frames.len() * frames.dim() || u_ambient.len() != frames.len() * frames.ambient_dim() {
        return invalid("fields do not match the frames");
    }
    Ok(max_row_distance(&frames.to_ambient(u_hat), u_ambient, frames.ambient_dim()))
}

/// Same norm as [`inverse_error`], applied to a time snapshot.
pub fn solution_error(u_hat: &[f64], frames: &FrameField, truth_ambient: &[f64]) -> Result<f64> {
    inverse_error(u_hat, frames, truth_ambient)
}

/// Least-squares line through (log N, log e).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (0 for two points).
    pub stderr: f64,
    pub points: usize,
}

pub fn fit_slope(ns: &[f64], errs: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errs)
        .filter(|(n, e)| **n > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(n, e)| (n.ln(), e.ln()))
        .collect();
    let m = pts.len();
    if m < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let stderr = if m > 2 {
        let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (ss / (m - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some(SlopeFit {
        slope,
        intercept,
        stderr,
        points: m,
    })
}

/// Mean and standard deviation (n − 1 denominator; 0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Intrinsic,
    Extrinsic,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intrinsic" => Ok(Method::Intrinsic),
            "extrinsic" => Ok(Method::Extrinsic),
            o => invalid(format!("unknown method '{o}'")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Intrinsic => "intrinsic",
            Method::Extrinsic => "extrinsic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameSource {
    Analytic,
    Estimated,
}

impl FromStr for FrameSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analytic" => Ok(FrameSource::Analytic),
            "estimated" => Ok(FrameSource::Estimated),
            o => invalid(format!("unknown frame source '{o}'")),
        }
    }
}

impl fmt::Display for FrameSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameSource::Analytic => "analytic",
            FrameSource::Estimated => "estimated",
        })
    }
}

/// What a study measures at each (N, seed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    /// max ‖P̂ − P‖_F of estimated frames.
    Projection,
    /// Forward error of the assembled Laplacian.
    Forward,
    /// Forward and inverse errors of the screened Poisson problem.
    Poisson,
    /// Solution error of forced diffusion started at its steady state.
    Diffusion,
    /// Solution error of Burgers' equation with manufactured forcing.
    Burgers,
    /// Leading eigenvalues.
    Eigen,
}

impl FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "projection" => Ok(Study::Projection),
            "forward" => Ok(Study::Forward),
            "poisson" => Ok(Study::Poisson),
            "diffusion" => Ok(Study::Diffusion),
            "burgers" => Ok(Study::Burgers),
            "eigen" => Ok(Study::Eigen),
            o => invalid(format!("unknown study '{o}'")),
        }
    }
}

/// Everything a convergence study needs. Parsed from `key = value` lines.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub study: Study,
    pub manifold: Manifold,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub l_field: usize,
    pub l_manifold: usize,
    pub method: Method,
    pub kind: LaplacianKind,
    pub frames: FrameSource,
    pub field: Field,
    pub a: f64,
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub stepper: Scheme,
    /// Covariant-derivative formulation for Burgers runs (defaults to `method`).
    pub covariant: Option<Method>,
    /// Shift the operator so that no eigenvalue has positive real part before time stepping.
    pub stabilize: bool,
    pub eig_count: usize,
    pub parallel: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            study: Study::Forward,
            manifold: Manifold::UnitSphere,
            n_list: vec![800, 1600, 3200],
            seeds: vec![0],
            k: 50,
            l_field: 3,
            l_manifold: 3,
            method: Method::Extrinsic,
            kind: LaplacianKind::Bochner,
            frames: FrameSource::Analytic,
            field: Field::SphereCubic,
            a: 1.0,
            nu: 0.1,
            dt: 1e-4,
            t_end: 0.05,
            stepper: Scheme::Rk2,
            covariant: None,
            stabilize: true,
            eig_count: 8,
            parallel: false,
            output: None,
        }
    }
}

fn parse_list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Parse(format!("bad entry '{s}' for {key}"))))
        .collect()
}

fn parse_one<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))
}

impl ExperimentConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim() {
            "study" => self.study = v.parse()?,
            "manifold" => self.manifold = v.parse()?,
            "n" | "n_list" => self.n_list = parse_list(v, key)?,
            "seeds" => self.seeds = parse_list(v, key)?,
            "k" => self.k = parse_one(v, key)?,
            "l" => {
                self.l_field = parse_one(v, key)?;
                self.l_manifold = self.l_field;
            }
            "l_field" => self.l_field = parse_one(v, key)?,
            "l_manifold" => self.l_manifold = parse_one(v, key)?,
            "method" => self.method = v.parse()?,
            "kind" => self.kind = v.parse()?,
            "frames" => self.frames = v.parse()?,
            "field" => self.field = v.parse()?,
            "a" => self.a = parse_one(v, key)?,
            "nu" => self.nu = parse_one(v, key)?,
            "dt" => self.dt = parse_one(v, key)?,
            "t_end" => self.t_end = parse_one(v, key)?,
            "stepper" => self.stepper = v.parse()?,
            "covariant" => self.covariant = Some(v.parse()?),
            "stabilize" => self.stabilize = parse_one(v, key)?,
            "eig_count" => self.eig_count = parse_one(v, key)?,
            "parallel" => self.parallel = parse_one(v, key)?,
            "output" => self.output = Some(PathBuf::from(v)),
            other => return invalid(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    /// Parse and validate `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let c = Self::parse_unchecked(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Parse without validating, so that later overrides can still fix things up.
    pub fn parse_unchecked(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("N list must be nonempty and strictly increasing");
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        let d = self.manifold.intrinsic_dim();
        let m = MultiIndexSet::new(d, 0, self.l_field.max(self.l_manifold)).len();
        if self.k <= m {
            return invalid(format!("K = {} must exceed the basis size {m}", self.k));
        }
        if self.l_field < 2 || self.l_manifold < 2 {
            return invalid("polynomial degrees must be at least 2");
        }
        if self.n_list[0] <= self.k {
            return invalid("every N must exceed K");
        }
        Ok(())
    }
}

/// Sampled cloud with its neighbor stencils and frames.
pub struct Prepared {
    pub cloud: PointCloud,
    pub stencils: Stencils,
    /// Frames used for discretization.
    pub frames: FrameField,
    /// Analytic frames, when the cloud has a parametrization.
    pub exact: Option<FrameField>,
}

/// Sample, find neighbors and obtain frames.
pub fn prepare(m: Manifold, n: usize, seed: u64, k: usize, source: FrameSource, l_manifold: usize) -> Result<Prepared> {
    let cloud = sample_manifold(m, n, seed)?;
    let stencils = Stencils::build(&NeighborIndex::build(&cloud), k)?;
    let exact = analytic_frames(&cloud)?;
    let frames = match source {
        FrameSource::Analytic => exact.clone(),
        FrameSource::Estimated => estimate_frames(&cloud, &stencils, l_manifold, Refinement::Auto)?,
    };
    Ok(Prepared {
        cloud,
        stencils,
        frames,
        exact: Some(exact),
    })
}

impl Prepared {
    pub fn laplacian(&self, method: Method, kind: LaplacianKind, deg: Degrees) -> Result<BlockOperator> {
        match method {
            Method::Intrinsic => assemble_intrinsic(&self.cloud, &self.frames, &self.stencils, kind, deg),
            Method::Extrinsic => assemble_extrinsic(&self.cloud, &self.frames, &self.stencils, kind, deg.field),
        }
    }

    pub fn covariant(&self, method: Method, deg: Degrees) -> Result<CovariantOperator> {
        match method {
            Method::Intrinsic => assemble_covariant_intrinsic(&self.cloud, &self.frames, &self.stencils, deg),
            Method::Extrinsic => assemble_covariant_extrinsic(&self.cloud, &self.frames, &self.stencils, deg.field),
        }
    }
}

/// Leading eigenvalues, dense when small enough.
pub fn leading_eigenvalues(op: &BlockOperator, count: usize) -> Result<Spectrum> {
    if op.dim() <= DENSE_EIGEN_CAP.min(3200) {
        let mut s = eigen_dense(op, false)?;
        s.values.truncate(count);
        Ok(s)
    } else {
        eigen_extremal(
            op,
            ExtremalOptions {
                count,
                ..ExtremalOptions::default()
            },
        )
    }
}

/// One measured value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub manifold: String,
    pub method: String,
    pub kind: String,
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub seconds: f64,
}

/// A run that failed and was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
}

impl ErrorReport {
    /// Values of `metric` grouped by N: (N, per-seed values).
    pub fn by_n(&self, metric: &str) -> Vec<(usize, Vec<f64>)> {
        let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.metric == metric) {
            match out.iter_mut().find(|(n, _)| *n == r.n) {
                Some((_, v)) => v.push(r.value),
                None => out.push((r.n, vec![r.value])),
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }

    /// Slope of the mean log-error against log N; `None` below three N values.
    pub fn slope(&self, metric: &str) -> Option<SlopeFit> {
        let groups = self.by_n(metric);
        if groups.len() < 3 {
            return None;
        }
        let ns: Vec<f64> = groups.iter().map(|g| g.0 as f64).collect();
        let errs: Vec<f64> = groups
            .iter()
            .map(|g| {
                let logs: Vec<f64> = g.1.iter().filter(|v| **v > 0.0).map(|v| v.ln()).collect();
                if logs.is_empty() {
                    f64::NAN
                } else {
                    mean_std(&logs).0.exp()
                }
            })
            .collect();
        fit_slope(&ns, &errs)
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.metric) {
                m.push(r.metric.clone());
            }
        }
        m
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["manifold", "method", "kind", "l", "K", "N", "seed", "metric", "value", "seconds"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(ErrorReport {
            rows,
            failures: Vec::new(),
        })
    }

    /// `report.csv`, `slopes.json` and (if any) `failures.csv` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        let slopes: std::collections::BTreeMap<String, Option<SlopeFit>> =
            self.metrics().into_iter().map(|m| (m.clone(), self.slope(&m))).collect();
        std::fs::write(dir.join("slopes.json"), serde_json::to_string_pretty(&slopes)?)?;
        if !self.failures.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
            w.write_record(["N", "seed", "message"])?;
            for f in &self.failures {
                w.write_record([f.n.to_string(), f.seed.to_string(), f.message.clone()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn ambient_over(cloud: &PointCloud, f: impl Fn(&Manifold, &[f64]) -> Vec<f64> + Sync) -> Result<Vec<f64>> {
    analytic::over_cloud(cloud, f)
}

/// Run one (N, seed) case, returning (metric, value, seconds) triples.
pub fn run_case(c: &ExperimentConfig, n: usize, seed: u64) -> Result<Vec<(String, f64, f64)>> {
    let t0 = Instant::now();
    let prep = prepare(c.manifold, n, seed, c.k, c.frames, c.l_manifold)?;
    let deg = Degrees {
        field: c.l_field,
        manifold: c.l_manifold,
    };
    let exact = prep.exact.as_ref().expect("sampled clouds carry analytic frames");
    let mut out = Vec::new();
    if c.study == Study::Projection {
        let est = match c.frames {
            FrameSource::Estimated => prep.frames.clone(),
            FrameSource::Analytic => estimate_frames(&prep.cloud, &prep.stencils, c.l_manifold, Refinement::Auto)?,
        };
        out.push(("projection_error".into(), est.max_projection_error(exact)?, t0.elapsed().as_secs_f64()));
        return Ok(out);
    }
    let ta = Instant::now();
    let op = prep.laplacian(c.method, c.kind, deg)?;
    let t_assembly = ta.elapsed().as_secs_f64();
    out.push(("time_assembly".into(), t_assembly, t_assembly));
    let (field, kind) = (c.field, c.kind);
    let u_amb = ambient_over(&prep.cloud, |m, p| analytic::field_ambient(m, &field, p))?;
    let ts = Instant::now();
    match c.study {
        Study::Projection => unreachable!(),
        Study::Forward => {
            let lap = ambient_over(&prep.cloud, |m, p| analytic::laplacian_ambient(m, &field, kind, p))?;
            out.push(("fe".into(), forward_error(&op, &prep.frames, &u_amb, &lap)?, 0.0));
        }
        Study::Poisson => {
            let lap = ambient_over(&prep.cloud, |m, p| analytic::laplacian_ambient(m, &field, kind, p))?;
            out.push(("fe".into(), forward_error(&op, &prep.frames, &u_amb, &lap)?, 0.0));
            let f = pde::poisson_forcing(&prep.cloud, &prep.frames, field, kind, c.a)?;
            let u = pde::solve_screened_poisson(&op, c.a, &f)?;
            out.push(("ie".into(), inverse_error(&u, &prep.frames, &u_amb)?, 0.0));
        }
        Study::Eigen => {
            let s = leading_eigenvalues(&op, c.eig_count)?;
            for (k, z) in s.values.iter().enumerate() {
                out.push((format!("eig_re_{k}"), z.re, 0.0));
                out.push((format!("eig_im_{k}"), z.im, 0.0));
            }
        }
        Study::Diffusion | Study::Burgers => {
            let op = if c.stabilize {
                stabilize(&op, leading_real_part(&op)?)?.0
            } else {
                op
            };
            let u0 = prep.frames.to_coefficients(&u_amb);
            let mut prob = EvolutionProblem::new(op, c.nu, u0)?;
            let truth_scale;
            if c.study == Study::Burgers {
                prob = prob
                    .with_forcing(pde::burgers_forcing(&prep.cloud, &prep.frames, field, kind, c.nu)?)
                    .with_covariant(prep.covariant(c.covariant.unwrap_or(c.method), deg)?)?;
                truth_scale = c.t_end.cos();
            } else {
                prob = prob.with_forcing(pde::diffusion_forcing(&prep.cloud, &prep.frames, field, kind, c.nu)?);
                truth_scale = 1.0;
            }
            let traj = pde::integrate(&prob, TimeStepper::new(c.stepper, c.dt)?, c.t_end, None)?;
            let truth: Vec<f64> = u_amb.iter().map(|v| v * truth_scale).collect();
            out.push(("se".into(), solution_error(&traj.last().u, &prep.frames, &truth)?, 0.0));
        }
    }
    let t_solve = ts.elapsed().as_secs_f64();
    out.push(("time_solve".into(), t_solve, t_solve));
    let total = t0.elapsed().as_secs_f64();
    for r in out.iter_mut().filter(|r| !r.0.starts_with("time_")) {
        r.2 = total;
    }
    Ok(out)
}

/// Run every (N, seed) pair; failures are recorded and skipped.
pub fn run_convergence_study(c: &ExperimentConfig) -> Result<ErrorReport> {
    use rayon::prelude::*;
    c.validate()?;
    let cases: Vec<(usize, u64)> = c
        .n_list
        .iter()
        .flat_map(|&n| c.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let run = |&(n, s): &(usize, u64)| (n, s, run_case(c, n, s));
    let results: Vec<_> = if c.parallel {
        cases.par_iter().map(run).collect()
    } else {
        cases.iter().map(run).collect()
    };
    let l = if c.study == Study::Projection { c.l_manifold } else { c.l_field };
    let mut report = ErrorReport::default();
    for (n, seed, r) in results {
        match r {
            Ok(vals) => {
                for (metric, value, seconds) in vals {
                    report.rows.push(ReportRow {
                        manifold: c.manifold.name().into(),
                        method: c.method.to_string(),
                        kind: c.kind.name().into(),
                        l,
                        k: c.k,
                        n,
                        seed,
                        metric,
                        value,
                        seconds,
                    });
                }
            }
            Err(e) => report.failures.push(Failure {
                n,
                seed,
                message: e.to_string(),
            }),
        }
    }
    if let Some(dir) = &c.output {
        report.write(dir)?;
    }
    Ok(report)
}
