//! `lowprec`: run low-precision solver experiments from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lowprec::experiment::{
    default_block_sizes, dot_error_sweep, export_problem, format_table, run_experiments, sweep_csv, ExperimentConfig,
    ExperimentReport, SolverKind, DEFAULT_SWEEP_TRIALS,
};
use lowprec::{Execution, FloatFormat, PhantomKind, ProblemKind};

#[derive(Parser)]
#[command(name = "lowprec", version, about = "Emulated low-precision CGLS and Chebyshev experiments")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian deblurring of a phantom image.
    Deblur(RunArgs),
    /// Parallel-beam tomography of a phantom image.
    Tomo(RunArgs),
    /// Mean inner-product error by format and block size.
    DotSweep(SweepArgs),
    /// Print the preset formats and their unit roundoffs.
    Formats,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags given on the command line take precedence.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Output root; each run writes to `<root>/<kind>-<solver>-<format>`.
    #[arg(long, short, env = "LOWPREC_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    /// One or more comma-separated formats, run in parallel.
    #[arg(long, short, value_delimiter = ',')]
    format: Vec<String>,

    #[arg(long, short)]
    solver: Option<SolverKind>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    phantom: Option<PhantomKind>,
    /// Relative noise level `||e|| / ||b_exact||`.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Tikhonov parameter; required (> 0) for the Chebyshev solver.
    #[arg(long)]
    lambda: Option<f64>,
    /// Multiply A and b by this factor before solving.
    #[arg(long)]
    rescale: Option<f64>,
    #[arg(long)]
    power_iters: Option<usize>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long)]
    n_angles: Option<usize>,
    #[arg(long)]
    n_detectors: Option<usize>,

    /// Also write A.mtx and the vectors of the (unscaled, noisy) problem.
    #[arg(long)]
    export_problem: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SWEEP_TRIALS)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "fp16,bfloat16,fp32,fp64")]
    formats: Vec<FloatFormat>,
    /// Defaults to the powers of two below n, then n.
    #[arg(long, value_delimiter = ',')]
    block_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn solver_name(s: SolverKind) -> &'static str {
    match s {
        SolverKind::Cgls => "cgls",
        SolverKind::Chebyshev => "chebyshev",
    }
}

fn kind_name(k: ProblemKind) -> &'static str {
    match k {
        ProblemKind::Deblur => "deblur",
        ProblemKind::Tomo => "tomo",
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// One configuration per requested format, each with its own directory.
fn build_configs(kind: ProblemKind, args: &RunArgs) -> Result<Vec<ExperimentConfig>> {
    let mut base = load_config(args.config.as_deref())?;
    base.problem.kind = kind;
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(base.solver, args.solver);
    set!(base.problem.grid_n, args.grid_n);
    set!(base.problem.phantom, args.phantom);
    set!(base.noise_level, args.noise);
    set!(base.seed, args.seed);
    set!(base.block_size, args.block_size);
    set!(base.max_iter, args.max_iter);
    set!(base.tol, args.tol);
    set!(base.eps, args.eps);
    set!(base.lambda, args.lambda);
    set!(base.rescale, args.rescale);
    set!(base.power_iters, args.power_iters);
    set!(base.problem.blur_sigma, args.blur_sigma);
    set!(base.problem.bandwidth, args.bandwidth);
    if args.n_angles.is_some() {
        base.problem.n_angles = args.n_angles;
    }
    if args.n_detectors.is_some() {
        base.problem.n_detectors = args.n_detectors;
    }
    let root = args.output_dir.clone().unwrap_or_else(|| base.output_dir.clone());

    let formats = if args.format.is_empty() {
        vec![base.format.clone()]
    } else {
        args.format.clone()
    };
    let mut cfgs = Vec::with_capacity(formats.len());
    for name in formats {
        let fmt = FloatFormat::from_name(name.trim())?;
        let mut cfg = base.clone();
        cfg.format = fmt.to_string();
        cfg.output_dir = root.join(format!("{}-{}-{}", kind_name(kind), solver_name(cfg.solver), cfg.format));
        cfg.validate()?;
        cfgs.push(cfg);
    }
    Ok(cfgs)
}

fn report_line(r: &ExperimentReport) -> String {
    let s = &r.summary;
    let err = |e: Option<f64>| e.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    let site = s.nonfinite_site.map(|x| format!(" at {x:?}")).unwrap_or_default();
    let dir = r.files.first().and_then(|f| f.parent()).unwrap_or(Path::new("."));
    format!(
        "{:<9} {:?}{site} after {} iterations; best {} at k={}, final {} -> {}",
        s.format,
        s.termination,
        s.iterations,
        err(s.best_rel_error),
        s.best_iter,
        err(s.final_rel_error),
        dir.display(),
    )
}

fn run(kind: ProblemKind, args: &RunArgs, exec: Execution) -> Result<()> {
    let cfgs = build_configs(kind, args)?;
    if args.export_problem {
        let first = &cfgs[0];
        let problem = lowprec::add_noise(&first.problem.generate()?, first.noise_level, first.seed)?;
        let dir = first.output_dir.parent().unwrap_or(Path::new(".")).join(format!("{}-problem", kind_name(kind)));
        export_problem(&problem, &dir)?;
        println!("problem written to {}", dir.display());
    }
    let mut failed = 0;
    for (cfg, outcome) in cfgs.iter().zip(run_experiments(&cfgs, exec)) {
        match outcome {
            Ok(report) => println!("{}", report_line(&report)),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", cfg.format);
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} runs failed", cfgs.len());
    }
    Ok(())
}

fn sweep(args: &SweepArgs, exec: Execution) -> Result<()> {
    let sizes = if args.block_sizes.is_empty() {
        default_block_sizes(args.n)
    } else {
        args.block_sizes.clone()
    };
    let rows = dot_error_sweep(args.n, &args.formats, &sizes, args.trials, args.seed, exec)?;
    let csv = sweep_csv(&rows);
    match &args.output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = match &cli.command {
        Command::Deblur(args) => run(ProblemKind::Deblur, args, exec),
        Command::Tomo(args) => run(ProblemKind::Tomo, args, exec),
        Command::DotSweep(args) => sweep(args, exec),
        Command::Formats => {
            print!("{}", format_table());
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
