//! Emulated low-precision arithmetic and regularized iterative solvers for
//! ill-posed inverse problems.
//!
//! - [`precision`]: rounding to reduced formats, chopped kernels, blocked sums
//! - [`sparse`], [`linops`]: CSR storage, operators, Tikhonov augmentation
//! - [`problems`]: deblurring and tomography test problems
//! - [`solvers`]: CGLS and the Chebyshev semi-iterative method
//! - [`experiment`]: experiment runner and the blocked-dot error sweep

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod linops;
pub mod precision;
pub mod problems;
pub mod solvers;
pub mod sparse;

pub use error::{Error, Result};
pub use exec::Execution;
pub use linops::{
    direct_tikhonov_solve, estimate_sigma_bounds, filter_factor, pad_rhs, tikhonov_augment,
    LinearOperator, SigmaBounds, SparseOperator, TikhonovOperator,
};
pub use precision::{
    chop_scalar, chopped_dot, chopped_ew, chopped_spmv, gamma_bound, unit_roundoff,
    BlockedReduceConfig, ChopContext, ElementOp, FloatFormat, Rounding,
};
pub use problems::{add_noise, gen_deblur, gen_tomo, phantom, rescale_problem, PhantomKind, Problem, ProblemKind};
pub use solvers::{
    cgls, chebyshev_si, cs_coefficients, cs_iteration_count, SolveResult, SolverConfig, Termination,
};
pub use sparse::SparseMatrix;
