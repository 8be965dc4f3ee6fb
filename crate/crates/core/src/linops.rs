//! Linear operators evaluated in chopped arithmetic, Tikhonov augmentation,
//! singular-value bounds and a dense Tikhonov reference solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::precision::ChopContext;
use crate::sparse::SparseMatrix;

/// A matrix-free operator with its transpose. Both products run in the
/// arithmetic of the supplied context.
pub trait LinearOperator: Send + Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn apply(&self, x: &[f64], ctx: &ChopContext) -> Result<Vec<f64>>;
    fn apply_transpose(&self, y: &[f64], ctx: &ChopContext) -> Result<Vec<f64>>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn n_rows(&self) -> usize {
        (**self).n_rows()
    }
    fn n_cols(&self) -> usize {
        (**self).n_cols()
    }
    fn apply(&self, x: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        (**self).apply(x, ctx)
    }
    fn apply_transpose(&self, y: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        (**self).apply_transpose(y, ctx)
    }
}

/// A sparse matrix together with its cached transpose.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    a: SparseMatrix,
    at: SparseMatrix,
}

impl SparseOperator {
    pub fn new(a: SparseMatrix) -> Self {
        let at = a.transpose();
        SparseOperator { a, at }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }
}

impl From<SparseMatrix> for SparseOperator {
    fn from(a: SparseMatrix) -> Self {
        SparseOperator::new(a)
    }
}

impl LinearOperator for SparseOperator {
    fn n_rows(&self) -> usize {
        self.a.n_rows()
    }
    fn n_cols(&self) -> usize {
        self.a.n_cols()
    }
    fn apply(&self, x: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        ctx.spmv(&self.a, x)
    }
    fn apply_transpose(&self, y: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        ctx.spmv(&self.at, y)
    }
}

/// The stacked operator `[A; lambda I]`, of size `(m + n) x n`.
#[derive(Debug, Clone)]
pub struct TikhonovOperator<O> {
    inner: O,
    lambda: f64,
}

impl<O: LinearOperator> TikhonovOperator<O> {
    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn tikhonov_augment<O: LinearOperator>(inner: O, lambda: f64) -> Result<TikhonovOperator<O>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "regularization parameter must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(TikhonovOperator { inner, lambda })
}

/// The right-hand side `[b; 0]` matching a Tikhonov-augmented operator with
/// `n_cols` unknowns.
pub fn pad_rhs(b: &[f64], n_cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b.len() + n_cols);
    out.extend_from_slice(b);
    out.resize(b.len() + n_cols, 0.0);
    out
}

impl<O: LinearOperator> LinearOperator for TikhonovOperator<O> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows() + self.inner.n_cols()
    }
    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn apply(&self, x: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        check_len("augmented operand", self.n_cols(), x.len())?;
        let mut out = self.inner.apply(x, ctx)?;
        out.extend(ctx.scale(self.lambda, x));
        Ok(out)
    }

    fn apply_transpose(&self, y: &[f64], ctx: &ChopContext) -> Result<Vec<f64>> {
        check_len("augmented transpose operand", self.n_rows(), y.len())?;
        let (top, bottom) = y.split_at(self.inner.n_rows());
        let at_top = self.inner.apply_transpose(top, ctx)?;
        ctx.axpy(self.lambda, bottom, &at_top)
    }
}

/// `sigma^2 / (sigma^2 + lambda^2)`.
pub fn filter_factor(sigma: f64, lambda: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 / (s2 + lambda * lambda)
}

/// Singular-value interval of the augmented operator `[A; lambda I]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaBounds {
    pub sigma_lower: f64,
    pub sigma_upper: f64,
}

/// Relative margin added on top of the power-method estimate.
pub const SIGMA_UPPER_SAFETY: f64 = 0.05;

/// Bounds `[lambda, sqrt(rho + lambda^2) (1 + 5%)]` for the spectrum of the
/// augmented operator, where `rho` is a power-method estimate of the largest
/// eigenvalue of `A^T A`. The iteration runs in working precision.
pub fn estimate_sigma_bounds<O: LinearOperator>(
    a: &O,
    lambda: f64,
    power_iters: usize,
    seed: u64,
) -> Result<SigmaBounds> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidBounds(format!(
            "the lower bound is lambda and must be positive, got {lambda}"
        )));
    }
    if power_iters == 0 {
        return Err(Error::Config("power_iters must be at least 1".into()));
    }
    let rho = largest_gram_eigenvalue(a, power_iters, seed)?;
    Ok(SigmaBounds {
        sigma_lower: lambda,
        sigma_upper: (rho + lambda * lambda).sqrt() * (1.0 + SIGMA_UPPER_SAFETY),
    })
}

/// Power-method estimate of `lambda_max(A^T A)`, as a Rayleigh quotient of
/// the final iterate (so it never exceeds the true value in exact arithmetic).
pub fn largest_gram_eigenvalue<O: LinearOperator>(
    a: &O,
    power_iters: usize,
    seed: u64,
) -> Result<f64> {
    let ctx = ChopContext::passthrough();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..a.n_cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    if !normalize(&mut v) {
        return Ok(0.0);
    }
    for _ in 0..power_iters {
        let w = a.apply_transpose(&a.apply(&v, &ctx)?, &ctx)?;
        v = w;
        if !normalize(&mut v) {
            return Ok(0.0);
        }
    }
    let av = a.apply(&v, &ctx)?;
    Ok(av.iter().map(|x| x * x).sum())
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Largest system the dense reference solver accepts.
pub const DIRECT_SOLVE_MAX_COLS: usize = 4096;

/// `(A^T A + lambda^2 I)^{-1} A^T b` by a dense Cholesky factorization of the
/// normal equations. Intended as a small-scale reference solution.
pub fn direct_tikhonov_solve(a: &SparseMatrix, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_len("right-hand side", a.n_rows(), b.len())?;
    let n = a.n_cols();
    if n > DIRECT_SOLVE_MAX_COLS {
        return Err(Error::Dimension(format!(
            "dense solve limited to {DIRECT_SOLVE_MAX_COLS} columns, got {n}"
        )));
    }
    // Lower triangle of the Gram matrix, accumulated row by row of A.
    let mut g = vec![0.0; n * n];
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (p, (&j, &vj)) in cols.iter().zip(vals).enumerate() {
            for (&k, &vk) in cols[..=p].iter().zip(&vals[..=p]) {
                g[j * n + k] += vj * vk;
            }
        }
    }
    for j in 0..n {
        g[j * n + j] += lambda * lambda;
    }
    let mut rhs = vec![0.0; n];
    for (i, &bi) in b.iter().enumerate() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            rhs[j] += v * bi;
        }
    }

    let max_diag = (0..n).map(|j| g[j * n + j]).fold(0.0f64, f64::max);
    let pivot_floor = max_diag * f64::EPSILON * n.max(1) as f64;
    // In-place Cholesky, G = L L^T, lower triangle.
    for j in 0..n {
        let mut d = g[j * n + j];
        for k in 0..j {
            d -= g[j * n + k] * g[j * n + k];
        }
        if !(d > pivot_floor) {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        g[j * n + j] = d;
        for i in j + 1..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= g[i * n + k] * rhs[k];
        }
        rhs[i] = s / g[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in i + 1..n {
            s -= g[k * n + i] * rhs[k];
        }
        rhs[i] = s / g[i * n + i];
    }
    Ok(rhs)
}

/// Working-precision `A^T A x` through an operator; handy for identity checks.
pub fn gram_apply<O: LinearOperator>(op: &O, x: &[f64]) -> Result<Vec<f64>> {
    let ctx = ChopContext::passthrough();
    op.apply_transpose(&op.apply(x, &ctx)?, &ctx)
}
