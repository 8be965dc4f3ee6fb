//! Experiment runner: problem generation, noise, rescaling, solve, and
//! artifact export. Also hosts the blocked inner-product error sweep.
//!
//! A run writes into its output directory:
//!
//! | file          | contents                                         |
//! |---------------|--------------------------------------------------|
//! | `history.csv` | per-iteration diagnostics                        |
//! | `summary.json`| [`Summary`]                                      |
//! | `x_true.pgm`  | ground truth image                               |
//! | `b.pgm`       | noisy data, deblurring only                      |
//! | `x_final.pgm` | last finite iterate                              |
//! | `x_best.pgm`  | iterate with the smallest error                  |
//!
//! Everything is a deterministic function of the configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io;
use crate::linops::{estimate_sigma_bounds, pad_rhs, tikhonov_augment, LinearOperator, SigmaBounds, SparseOperator};
use crate::precision::{chopped_dot, unit_roundoff, BlockedReduceConfig, CounterSnapshot, FloatFormat};
use crate::problems::{
    add_noise, gen_deblur, gen_tomo, rescale_problem, BlurParams, PhantomKind, Problem, ProblemKind, TomoGeometry,
};
use crate::solvers::{cgls, chebyshev_si, history_csv, NonFiniteSite, SolveResult, SolverConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cgls,
    Chebyshev,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cgls" => Ok(SolverKind::Cgls),
            "chebyshev" | "cs" => Ok(SolverKind::Chebyshev),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub grid_n: usize,
    pub phantom: PhantomKind,
    pub blur_sigma: f64,
    pub bandwidth: usize,
    /// Defaults to `grid_n`.
    pub n_angles: Option<usize>,
    /// Defaults to `ceil(sqrt(2) grid_n)`.
    pub n_detectors: Option<usize>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            kind: ProblemKind::Deblur,
            grid_n: 32,
            phantom: PhantomKind::Shapes,
            blur_sigma: BlurParams::MILD.sigma,
            bandwidth: BlurParams::MILD.bandwidth,
            n_angles: None,
            n_detectors: None,
        }
    }
}

impl ProblemConfig {
    pub fn geometry(&self) -> TomoGeometry {
        let d = TomoGeometry::default_for(self.grid_n);
        TomoGeometry {
            n_angles: self.n_angles.unwrap_or(d.n_angles),
            n_detectors: self.n_detectors.unwrap_or(d.n_detectors),
        }
    }

    pub fn generate(&self) -> Result<Problem> {
        match self.kind {
            ProblemKind::Deblur => gen_deblur(
                self.grid_n,
                BlurParams {
                    sigma: self.blur_sigma,
                    bandwidth: self.bandwidth,
                },
                self.phantom,
            ),
            ProblemKind::Tomo => gen_tomo(self.grid_n, self.geometry(), self.phantom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub noise_level: f64,
    pub seed: u64,
    pub solver: SolverKind,
    /// Preset name: `fp16`, `bfloat16`, `fp32` or `fp64`.
    pub format: String,
    pub block_size: usize,
    pub max_iter: usize,
    /// CGLS stopping threshold on `||A^T r||^2`.
    pub tol: f64,
    /// Chebyshev accuracy target in the iteration-count formula.
    pub eps: f64,
    pub lambda: f64,
    pub rescale: f64,
    pub power_iters: usize,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemConfig::default(),
            noise_level: 0.0,
            seed: 0,
            solver: SolverKind::Cgls,
            format: "fp64".into(),
            block_size: BlockedReduceConfig::DEFAULT_BLOCK_SIZE,
            max_iter: 100,
            tol: 0.0,
            eps: 1e-6,
            lambda: 0.0,
            rescale: 1.0,
            power_iters: 100,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        FloatFormat::from_name(&self.format)?;
        BlockedReduceConfig::new(self.block_size)?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level must be nonnegative, got {}", self.noise_level));
        }
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return Err(Error::InvalidScale(self.rescale));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if self.solver == SolverKind::Chebyshev {
            if !(self.lambda > 0.0) {
                return bad("the Chebyshev solver needs lambda > 0 (its lower spectral bound)".into());
            }
            if !(self.eps > 0.0 && self.eps < 1.0) {
                return bad(format!("eps must lie in (0, 1), got {}", self.eps));
            }
            if self.power_iters == 0 {
                return bad("power_iters must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn float_format(&self) -> Result<FloatFormat> {
        FloatFormat::from_name(&self.format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub kind: ProblemKind,
    pub solver: SolverKind,
    pub format: String,
    pub termination: Termination,
    pub nonfinite_site: Option<NonFiniteSite>,
    pub iterations: usize,
    pub planned_iterations: Option<usize>,
    pub best_iter: usize,
    pub best_rel_error: Option<f64>,
    pub final_rel_error: Option<f64>,
    pub final_residual_norm: Option<f64>,
    pub scale: f64,
    pub sigma_bounds: Option<SigmaBounds>,
    pub counters: CounterSnapshot,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub result: SolveResult,
    pub files: Vec<PathBuf>,
}

pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Generate, solve and export one experiment. See the module docs for the
/// file set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fmt = cfg.float_format()?;
    let problem = cfg.problem.generate()?;
    let problem = add_noise(&problem, cfg.noise_level, cfg.seed)?;
    let problem = rescale_problem(&problem, cfg.rescale)?;

    let solver_cfg = SolverConfig::new(fmt, cfg.max_iter)
        .with_reduce(BlockedReduceConfig::new(cfg.block_size)?)
        .with_tol(cfg.tol)
        .with_lambda(cfg.lambda)
        .tracking(problem.x_true.clone());

    let op = SparseOperator::new(problem.a.clone());
    let mut sigma_bounds = None;
    let result = if cfg.lambda > 0.0 {
        let rhs = pad_rhs(&problem.b, op.n_cols());
        let aug = tikhonov_augment(&op, cfg.lambda)?;
        match cfg.solver {
            SolverKind::Cgls => cgls(&aug, &rhs, &solver_cfg)?,
            SolverKind::Chebyshev => {
                let bounds = estimate_sigma_bounds(&op, cfg.lambda, cfg.power_iters, cfg.seed)?;
                sigma_bounds = Some(bounds);
                chebyshev_si(&aug, &rhs, bounds.sigma_lower, bounds.sigma_upper, cfg.eps, &solver_cfg)?
            }
        }
    } else {
        cgls(&op, &problem.b, &solver_cfg)?
    };

    let last = result.history.last();
    let summary = Summary {
        kind: problem.kind,
        solver: cfg.solver,
        format: fmt.to_string(),
        termination: result.termination,
        nonfinite_site: result.nonfinite_site,
        iterations: result.iterations(),
        planned_iterations: result.planned_iterations,
        best_iter: result.best_iter,
        best_rel_error: result.best_record().and_then(|r| r.rel_error),
        final_rel_error: last.and_then(|r| r.rel_error),
        final_residual_norm: last.map(|r| r.residual_norm),
        scale: problem.scale,
        sigma_bounds,
        counters: result.counters,
        config: cfg.clone(),
    };

    let files = write_artifacts(&cfg.output_dir, &problem, &result, &summary)?;
    Ok(ExperimentReport { summary, result, files })
}

/// Run several experiments, each in its own output directory, in parallel
/// when `exec` allows it. Results keep the input order.
pub fn run_experiments(cfgs: &[ExperimentConfig], exec: Execution) -> Vec<Result<ExperimentReport>> {
    exec::map_indexed_unbounded(exec, cfgs.len(), |i| run_experiment(&cfgs[i]))
}

fn write_artifacts(dir: &Path, problem: &Problem, result: &SolveResult, summary: &Summary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    put(HISTORY_FILE, history_csv(&result.history).as_bytes())?;
    let mut json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Parse(format!("summary serialization: {e}")))?;
    json.push('\n');
    put(SUMMARY_FILE, json.as_bytes())?;

    let n = problem.grid_n;
    put("x_true.pgm", &io::pgm_bytes(&problem.x_true, n, n)?)?;
    if let Some((w, h)) = problem.rhs_image_shape() {
        put("b.pgm", &io::pgm_bytes(&problem.b, w, h)?)?;
    }
    put("x_final.pgm", &io::pgm_bytes(&result.x_final, n, n)?)?;
    put("x_best.pgm", &io::pgm_bytes(&result.x_best, n, n)?)?;
    Ok(files)
}

/// Write the problem itself: `A.mtx`, and `x_true.bin`, `b_exact.bin`,
/// `b.bin` in the binary vector format.
pub fn export_problem(problem: &Problem, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let path = dir.join("A.mtx");
    io::write_matrix_market(&problem.a, std::io::BufWriter::new(fs::File::create(&path)?))?;
    files.push(path);
    for (name, v) in [("x_true.bin", &problem.x_true), ("b_exact.bin", &problem.b_exact), ("b.bin", &problem.b)] {
        let path = dir.join(name);
        let mut buf = Vec::new();
        io::write_vector(v, &mut buf)?;
        fs::write(&path, buf)?;
        files.push(path);
    }
    Ok(files)
}

/// One line of the blocked inner-product error study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub format: String,
    pub block_size: usize,
    pub mean_abs_error: f64,
}

pub const DEFAULT_SWEEP_TRIALS: usize = 20;

/// Powers of two below `n`, followed by `n` itself (the unblocked case).
pub fn default_block_sizes(n: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = std::iter::successors(Some(1usize), |b| b.checked_mul(2))
        .take_while(|&b| b < n)
        .collect();
    sizes.push(n.max(1));
    sizes
}

/// Mean `|chopped_dot(x, y) - x.y|` over `trials` seeded pairs of uniform
/// `(0, 1)` vectors of length `n`, for every format and block size. The same
/// vector pairs are used across all formats and block sizes; the reference is
/// a sequential working-precision sum.
pub fn dot_error_sweep(
    n: usize,
    formats: &[FloatFormat],
    block_sizes: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let configs = block_sizes
        .iter()
        .map(|&b| BlockedReduceConfig::new(b))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let x = (0..n).map(|_| rng.random::<f64>()).collect();
            let y = (0..n).map(|_| rng.random::<f64>()).collect();
            (x, y)
        })
        .collect();
    let exact: Vec<f64> = pairs
        .iter()
        .map(|(x, y)| x.iter().zip(y).fold(0.0, |acc, (a, b)| acc + a * b))
        .collect();

    let cells: Vec<(FloatFormat, BlockedReduceConfig)> = formats
        .iter()
        .flat_map(|f| configs.iter().map(move |c| (*f, *c)))
        .collect();
    let errors = exec::map_indexed_unbounded(exec, cells.len(), |i| {
        let (fmt, cfg) = &cells[i];
        let mut total = 0.0;
        for ((x, y), reference) in pairs.iter().zip(&exact) {
            total += (chopped_dot(x, y, fmt, cfg)? - reference).abs();
        }
        Ok::<f64, Error>(total / trials as f64)
    });
    cells
        .iter()
        .zip(errors)
        .map(|((fmt, cfg), err)| {
            Ok(SweepRow {
                format: fmt.to_string(),
                block_size: cfg.block_size,
                mean_abs_error: err?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fmt,block_size,mean_abs_error\n");
    for r in rows {
        out.push_str(&format!("{},{},{:e}\n", r.format, r.block_size, r.mean_abs_error));
    }
    out
}

/// Preset formats with their parameters and unit roundoffs.
pub fn format_table() -> String {
    let mut out = format!(
        "{:<10} {:>4} {:>6} {:>10} {:>12} {:>12}\n",
        "name", "t", "emax", "u", "max", "min_normal"
    );
    for name in FloatFormat::PRESET_NAMES {
        let f = FloatFormat::from_name(name).expect("preset");
        out.push_str(&format!(
            "{:<10} {:>4} {:>6} {:>10.2e} {:>12.4e} {:>12.4e}\n",
            name,
            f.significand_bits,
            f.max_exponent,
            unit_roundoff(&f),
            f.max_finite(),
            f.min_normal()
        ));
    }
    out
}
