//! Command-line front end: `gen`, `optimum`, `solve` and `verify`.
//!
//! Exit codes: 0 success, 1 failed bound assertions, 2 usage or configuration
//! errors, 3 numerical failures (a matrix that should be positive definite is
//! not).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{compute_bounds, verify_bounds_with, VerifyConfig};
use crate::error::{Error, Result};
use crate::instance::{choose_weights, generate_instance, validate_assumptions, ProblemInstance};
use crate::linalg::Vector;
use crate::sketch::SketchConfig;
use crate::solver::{reference_optimum, solve, uniform_in_ball, ReferenceOptimum, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "srnewton", version, about = "Softmax-ReLU regression: instances, Newton solvers, bound checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a weighted instance and print its assumption report.
    Gen(GenArgs),
    /// Compute a reference optimum by restarted exact Newton.
    Optimum(OptimumArgs),
    /// Run a solver and write the iteration trace as CSV.
    Solve(SolveArgs),
    /// Check the theoretical bounds on random points of the ball.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Target lower bound on the smallest Hessian eigenvalue.
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.6)]
    pub theta: f64,
    /// Added to every squared weight above the threshold.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    /// Extra uniform probe points (beyond the reference point) for the report.
    #[arg(long, default_value_t = 0)]
    pub probes: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimumArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    pub grad_tol: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Approx,
    Loss,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Approx)]
    pub mode: ModeArg,
    /// Step size; defaults to 1 (approx) or 1/N (loss).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Sketch the Hessian with this accuracy (approx mode only).
    #[arg(long)]
    pub sketch_eps0: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub sketch_delta: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Target loss gap (loss mode, needs --ref-optimum).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Hessian lower bound used for the constant N in loss mode.
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    /// Seeds the sketch stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `reference`, `zero`, `random:<seed>` or `file:<path>` (JSON array).
    #[arg(long, default_value = "reference")]
    pub x0: String,
    #[arg(long)]
    pub ref_optimum: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Point pairs for the Lipschitz checks; defaults to --samples.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    /// Skip the finite-difference and decomposition cross-checks.
    #[arg(long)]
    pub no_cross_checks: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Maps a library error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotPd(_) | Error::DegenerateC | Error::RankDeficient { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Optimum(a) => cmd_optimum(&a, out),
        Command::Solve(a) => cmd_solve(&a, out, err),
        Command::Verify(a) => cmd_verify(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let raw = generate_instance(a.n, a.m, a.d, a.radius, a.seed, a.theta)?;
    let inst = choose_weights(&raw, a.l, a.margin)?;
    let mut probes = vec![inst.reference_point()];
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    probes.extend((0..a.probes).map(|_| uniform_in_ball(&mut rng, inst.d, inst.radius)));
    let report = validate_assumptions(&inst, &probes, a.l)?;
    inst.write_json(&a.output)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(EXIT_OK)
}

pub fn cmd_optimum(a: &OptimumArgs, out: &mut dyn Write) -> Result<i32> {
    let inst = ProblemInstance::read_json(&a.instance)?;
    let opt = reference_optimum(&inst, a.restarts, a.seed, a.grad_tol)?;
    let text = serde_json::to_string_pretty(&opt)? + "\n";
    emit(&text, a.output.as_deref(), out)?;
    Ok(EXIT_OK)
}

pub fn cmd_solve(a: &SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let inst = ProblemInstance::read_json(&a.instance)?;
    let reference = match &a.ref_optimum {
        Some(p) => Some(serde_json::from_str::<ReferenceOptimum>(&fs::read_to_string(p)?)?),
        None => None,
    };
    if let Some(r) = &reference {
        if r.x_star.len() != inst.d {
            return Err(Error::Dimension(format!("reference optimum has {} coordinates, expected {}", r.x_star.len(), inst.d)));
        }
    }
    let x0 = parse_x0(&a.x0, &inst)?;

    let mut cfg = match a.mode {
        ModeArg::Approx => SolverConfig::approx_newton(),
        ModeArg::Loss => {
            if !(a.l > 0.0) {
                return Err(Error::InvalidConfig(format!("l must be positive, got {}", a.l)));
            }
            SolverConfig::loss_newton(compute_bounds(&inst, a.l, inst.radius).n_const)
        }
    };
    if let Some(eta) = a.eta {
        cfg.eta = eta;
    }
    if let Some(k) = a.max_iters {
        cfg.max_iters = k;
    }
    if let Some(t) = a.grad_tol {
        cfg.grad_tol = t;
    }
    if let Some(e) = a.eps {
        cfg.eps = e;
    }
    cfg.seed = a.seed;
    if let Some(eps0) = a.sketch_eps0 {
        cfg.sketch = Some(SketchConfig { epsilon0: eps0, delta: a.sketch_delta, seed: a.seed, ..Default::default() });
    }

    let trace = solve(&inst, &x0, &cfg, reference.as_ref())?;
    emit(&trace.to_csv(), a.output.as_deref(), out)?;
    writeln!(
        err,
        "{} after {} iterations{}",
        if trace.converged { "converged" } else { "stopped" },
        trace.iterations_used,
        if trace.ball_exit { " (left the ball)" } else { "" }
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let inst = ProblemInstance::read_json(&a.instance)?;
    if !(a.l > 0.0) {
        return Err(Error::InvalidConfig(format!("l must be positive, got {}", a.l)));
    }
    let cfg = VerifyConfig {
        samples: a.samples,
        pairs: a.pairs.unwrap_or(a.samples),
        seed: a.seed,
        l: a.l,
        cross_checks: !a.no_cross_checks,
    };
    let report = verify_bounds_with(&inst, &cfg);
    let text = report.to_json() + "\n";
    if let Some(p) = &a.output {
        fs::write(p, &text)?;
    }
    out.write_all(text.as_bytes())?;
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_CHECKS_FAILED })
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Parses the `--x0` specification.
pub fn parse_x0(spec: &str, inst: &ProblemInstance) -> Result<Vector> {
    let x = if spec == "reference" {
        inst.reference_point()
    } else if spec == "zero" {
        Vector::zeros(inst.d)
    } else if let Some(seed) = spec.strip_prefix("random:") {
        let seed: u64 = seed.parse().map_err(|_| Error::InvalidConfig(format!("bad seed in --x0 {spec}")))?;
        uniform_in_ball(&mut ChaCha8Rng::seed_from_u64(seed), inst.d, inst.radius)
    } else if let Some(path) = spec.strip_prefix("file:") {
        let v: Vec<f64> = serde_json::from_str(&fs::read_to_string(path)?)?;
        Vector::from_vec(v)
    } else {
        return Err(Error::InvalidConfig(format!("--x0 must be reference, zero, random:<seed> or file:<path>; got {spec}")));
    };
    if x.len() != inst.d {
        return Err(Error::Dimension(format!("x0 has {} coordinates, expected {}", x.len(), inst.d)));
    }
    Ok(x)
}
