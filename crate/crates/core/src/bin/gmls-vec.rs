use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gmls_vec::analytic::{self, Field};
use gmls_vec::geometry::{analytic_frames, sample_manifold, NeighborIndex, PointCloud, Stencils};
use gmls_vec::harness::{
    self, inverse_error, forward_error, solution_error, ExperimentConfig, FrameSource, Method, Prepared,
};
use gmls_vec::intrinsic::Degrees;
use gmls_vec::io;
use gmls_vec::operators::{
    eigen_dense, eigen_extremal, leading_real_part, stabilize, BlockOperator, ExtremalOptions, LaplacianKind,
    DENSE_EIGEN_CAP,
};
use gmls_vec::pde::{self, EvolutionProblem, Scheme, Snapshot, TimeStepper, Trajectory};
use gmls_vec::tangent::{estimate_frames, Refinement};
use gmls_vec::{Error, Manifold, Result};

#[derive(Parser)]
#[command(name = "gmls-vec", version, about = "Vector Laplacians and covariant derivatives on point clouds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a point cloud from a test manifold.
    Sample {
        #[arg(long)]
        manifold: Manifold,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write analytic or estimated tangent frames for a cloud.
    Frames {
        #[command(flatten)]
        cloud: CloudArgs,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long = "l-manifold", default_value_t = 3)]
        l_manifold: usize,
        #[arg(long, default_value = "estimated")]
        source: FrameSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a vector Laplacian and write it as triplets.
    Assemble {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leading eigenvalues of an assembled operator.
    Eig {
        #[arg(long)]
        operator: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Force the iterative solver even for small operators.
        #[arg(long)]
        extremal: bool,
        #[arg(long)]
        sigma: Option<f64>,
        /// Shift the operator so that no eigenvalue has positive real part first.
        #[arg(long)]
        stabilize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve (aI − L)u = f for a manufactured field.
    Poisson {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        field: Field,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time-dependent vector diffusion or Burgers' equation.
    Evolve {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        field: Field,
        /// none, diffusion or burgers.
        #[arg(long, default_value = "diffusion")]
        forcing: String,
        #[arg(long, default_value_t = 0.1)]
        nu: f64,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long = "t-end", default_value_t = 0.05)]
        t_end: f64,
        #[arg(long, default_value = "rk2")]
        stepper: Scheme,
        /// Covariant-derivative formulation for Burgers (defaults to --method).
        #[arg(long)]
        covariant: Option<Method>,
        #[arg(long)]
        every: Option<f64>,
        #[arg(long = "no-stabilize")]
        no_stabilize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence study over N and seeds.
    Study {
        /// key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CloudArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Manifold the cloud was sampled from; enables analytic frames and fields.
    #[arg(long)]
    manifold: Option<Manifold>,
    /// Intrinsic dimension, when the file has no parameter columns.
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct Setup {
    #[command(flatten)]
    cloud: CloudArgs,
    /// Frame file; analytic frames are used when absent and a manifold is given.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    #[arg(long = "l-manifold")]
    l_manifold: Option<usize>,
    #[arg(long, default_value = "extrinsic")]
    method: Method,
    #[arg(long, default_value = "bochner")]
    kind: LaplacianKind,
}

impl CloudArgs {
    fn load(&self) -> Result<PointCloud> {
        io::read_cloud(&self.cloud, self.d, self.manifold)
    }
}

impl Setup {
    fn degrees(&self) -> Degrees {
        Degrees {
            field: self.l,
            manifold: self.l_manifold.unwrap_or(self.l),
        }
    }

    fn prepare(&self) -> Result<Prepared> {
        let cloud = self.cloud.load()?;
        let stencils = Stencils::build(&NeighborIndex::build(&cloud), self.k)?;
        let exact = cloud.manifold().map(|_| analytic_frames(&cloud)).transpose()?;
        let frames = match (&self.frames, &exact) {
            (Some(p), _) => io::read_frames(p)?,
            (None, Some(f)) => f.clone(),
            (None, None) => estimate_frames(&cloud, &stencils, self.degrees().manifold, Refinement::Auto)?,
        };
        Ok(Prepared {
            cloud,
            stencils,
            frames,
            exact,
        })
    }
}

fn report(name: &str, v: f64) {
    println!("{name} {v:.6e}");
}

fn single(t: f64, u: Vec<f64>) -> Trajectory {
    Trajectory {
        snapshots: vec![Snapshot { t, u }],
    }
}

fn assemble(setup: &Setup, prep: &Prepared) -> Result<BlockOperator> {
    let t = Instant::now();
    let op = prep.laplacian(setup.method, setup.kind, setup.degrees())?;
    eprintln!("assembled {} x {} in {:.2}s", op.dim(), op.dim(), t.elapsed().as_secs_f64());
    Ok(op)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Sample { manifold, n, seed, out } => {
            let cloud = sample_manifold(manifold, n, seed)?;
            io::write_cloud(&out, &cloud)
        }
        Cmd::Frames {
            cloud,
            k,
            l_manifold,
            source,
            out,
        } => {
            let cloud = cloud.load()?;
            let frames = match source {
                FrameSource::Analytic => analytic_frames(&cloud)?,
                FrameSource::Estimated => {
                    let st = Stencils::build(&NeighborIndex::build(&cloud), k)?;
                    estimate_frames(&cloud, &st, l_manifold, Refinement::Auto)?
                }
            };
            if source == FrameSource::Estimated && cloud.manifold().is_some() {
                report("projection_error", frames.max_projection_error(&analytic_frames(&cloud)?)?);
            }
            io::write_frames(&out, &frames)
        }
        Cmd::Assemble { setup, out } => {
            let prep = setup.prepare()?;
            let op = assemble(&setup, &prep)?;
            io::write_operator(&out, &op, setup.k, setup.kind)
        }
        Cmd::Eig {
            operator,
            count,
            extremal,
            sigma,
            stabilize: stab,
            out,
        } => {
            let (mut op, _) = io::read_operator(&operator)?;
            if stab {
                let (shifted, shift) = stabilize(&op, leading_real_part(&op)?)?;
                if shift != 0.0 {
                    eprintln!("shifted by {shift:.3e}");
                }
                op = shifted;
            }
            let mut s = if extremal || op.dim() > DENSE_EIGEN_CAP.min(3200) {
                let mut opts = ExtremalOptions {
                    count,
                    ..ExtremalOptions::default()
                };
                if let Some(s) = sigma {
                    opts.sigma = s;
                }
                eigen_extremal(&op, opts)?
            } else {
                eigen_dense(&op, false)?
            };
            s.values.truncate(count);
            for (k, z) in s.values.iter().enumerate() {
                println!("{k} {:.10} {:+.3e}", z.re, z.im);
            }
            io::write_spectrum(&out, &s)
        }
        Cmd::Poisson { setup, field, a, out } => {
            let prep = setup.prepare()?;
            let op = assemble(&setup, &prep)?;
            let f = pde::poisson_forcing(&prep.cloud, &prep.frames, field, setup.kind, a)?;
            let u = pde::solve_screened_poisson(&op, a, &f)?;
            let kind = setup.kind;
            let u_amb = analytic::over_cloud(&prep.cloud, |m, p| analytic::field_ambient(m, &field, p))?;
            let lap = analytic::over_cloud(&prep.cloud, |m, p| analytic::laplacian_ambient(m, &field, kind, p))?;
            report("fe", forward_error(&op, &prep.frames, &u_amb, &lap)?);
            report("ie", inverse_error(&u, &prep.frames, &u_amb)?);
            io::write_trajectory(&out, &single(0.0, u), &prep.frames, prep.cloud.manifold()).map(|_| ())
        }
        Cmd::Evolve {
            setup,
            field,
            forcing,
            nu,
            dt,
            t_end,
            stepper,
            covariant,
            every,
            no_stabilize,
            out,
        } => {
            let prep = setup.prepare()?;
            let mut op = assemble(&setup, &prep)?;
            if !no_stabilize {
                op = stabilize(&op, leading_real_part(&op)?)?.0;
            }
            let u0 = pde::field_coefficients(&prep.cloud, &prep.frames, field)?;
            let mut prob = EvolutionProblem::new(op, nu, u0)?;
            let scale: Option<f64> = match forcing.as_str() {
                "none" => None,
                "diffusion" => {
                    prob = prob.with_forcing(pde::diffusion_forcing(&prep.cloud, &prep.frames, field, setup.kind, nu)?);
                    Some(1.0)
                }
                "burgers" => {
                    let cov = prep.covariant(covariant.unwrap_or(setup.method), setup.degrees())?;
                    prob = prob
                        .with_forcing(pde::burgers_forcing(&prep.cloud, &prep.frames, field, setup.kind, nu)?)
                        .with_covariant(cov)?;
                    Some(t_end.cos())
                }
                o => return Err(Error::Invalid(format!("unknown forcing '{o}'"))),
            };
            let t = Instant::now();
            let traj = pde::integrate(&prob, TimeStepper::new(stepper, dt)?, t_end, every)?;
            eprintln!("integrated in {:.2}s", t.elapsed().as_secs_f64());
            if let Some(s) = scale {
                let truth: Vec<f64> = analytic::over_cloud(&prep.cloud, |m, p| analytic::field_ambient(m, &field, p))?
                    .into_iter()
                    .map(|v| v * s)
                    .collect();
                report("se", solution_error(&traj.last().u, &prep.frames, &truth)?);
            }
            io::write_trajectory(&out, &traj, &prep.frames, prep.cloud.manifold()).map(|_| ())
        }
        Cmd::Study { config, set, output } => {
            let mut c = match &config {
                Some(p) => ExperimentConfig::parse_unchecked(&std::fs::read_to_string(p)?)?,
                None => ExperimentConfig::default(),
            };
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("expected key=value, got '{kv}'")))?;
                c.set(k, v)?;
            }
            if output.is_some() {
                c.output = output;
            }
            let r = harness::run_convergence_study(&c)?;
            for m in r.metrics() {
                if m.starts_with("time_") {
                    continue;
                }
                for (n, v) in r.by_n(&m) {
                    let (mean, sd) = harness::mean_std(&v);
                    println!("{m} N={n} mean {mean:.4e} sd {sd:.2e}");
                }
                match r.slope(&m) {
                    Some(s) => println!("{m} slope {:.3} ± {:.3}", s.slope, s.stderr),
                    None => println!("{m} slope unavailable"),
                }
            }
            for f in &r.failures {
                eprintln!("failed N={} seed={}: {}", f.n, f.seed, f.message);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
