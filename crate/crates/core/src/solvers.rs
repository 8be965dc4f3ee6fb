//! CGLS and the Chebyshev semi-iterative method in chopped arithmetic.
//!
//! Both solvers start from `x = 0` and route every vector and scalar
//! operation through a [`ChopContext`]. Diagnostics (error and residual
//! norms) are evaluated in working precision and do not feed back into the
//! iteration.
//!
//! Tikhonov regularization is applied by the caller: pass the operator from
//! [`tikhonov_augment`](crate::linops::tikhonov_augment) together with the
//! padded right-hand side from [`pad_rhs`](crate::linops::pad_rhs).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::linops::LinearOperator;
use crate::precision::{BlockedReduceConfig, ChopContext, CounterSnapshot, ElementOp, FloatFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub fmt: FloatFormat,
    pub reduce: BlockedReduceConfig,
    pub max_iter: usize,
    /// CGLS stops once `psi_k <= tol`; the Chebyshev method uses `tol` as
    /// the `eps` of its iteration-count formula only through
    /// [`chebyshev_si`]'s explicit argument.
    pub tol: f64,
    /// Regularization parameter recorded with the run. It has no effect on
    /// the iteration; regularized runs use an augmented operator.
    pub lambda: f64,
    pub track_error_against: Option<Vec<f64>>,
    pub exec: Execution,
}

impl SolverConfig {
    pub fn new(fmt: FloatFormat, max_iter: usize) -> Self {
        SolverConfig {
            fmt,
            reduce: BlockedReduceConfig::default(),
            max_iter,
            tol: 0.0,
            lambda: 0.0,
            track_error_against: None,
            exec: Execution::default(),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_reduce(mut self, reduce: BlockedReduceConfig) -> Self {
        self.reduce = reduce;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn tracking(mut self, x_true: Vec<f64>) -> Self {
        self.track_error_against = Some(x_true);
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if let Some(x) = &self.track_error_against {
            check_len("tracked reference solution", n_cols, x.len())?;
        }
        Ok(())
    }

    fn context(&self) -> ChopContext {
        ChopContext::new(self.fmt, self.reduce).with_execution(self.exec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rel_error: Option<f64>,
    pub residual_norm: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Tolerance,
    MaxIter,
    NonFinite,
}

/// The kind of operation that produced the first non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonFiniteSite {
    InnerProduct,
    MatVec,
    VectorUpdate,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x_final: Vec<f64>,
    pub x_best: Vec<f64>,
    /// Iteration of `x_best`; 0 when no iteration completed.
    pub best_iter: usize,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub nonfinite_site: Option<NonFiniteSite>,
    pub counters: CounterSnapshot,
    /// Chebyshev only: the iteration count the spectral bounds call for.
    pub planned_iterations: Option<usize>,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn best_record(&self) -> Option<&IterationRecord> {
        self.history.iter().find(|r| r.k == self.best_iter)
    }
}

/// `iter,rel_error,residual_norm,finite`, one row per iteration; `rel_error`
/// is empty when untracked.
pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from("iter,rel_error,residual_norm,finite\n");
    for r in history {
        let err = r.rel_error.map(|e| format!("{e:e}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:e},{}\n", r.k, err, r.residual_norm, r.finite));
    }
    out
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Working-precision diagnostics and best-iterate bookkeeping.
struct Tracker<'a, O> {
    op: &'a O,
    b: &'a [f64],
    x_true: Option<(&'a [f64], f64)>,
    diag_ctx: ChopContext,
    history: Vec<IterationRecord>,
    best: Option<(f64, usize, Vec<f64>)>,
}

impl<'a, O: LinearOperator> Tracker<'a, O> {
    fn new(op: &'a O, b: &'a [f64], x_true: Option<&'a [f64]>) -> Self {
        Tracker {
            op,
            b,
            x_true: x_true.map(|x| (x, norm2(x))),
            diag_ctx: ChopContext::passthrough(),
            history: Vec::new(),
            best: None,
        }
    }

    fn record(&mut self, k: usize, x: &[f64]) -> Result<()> {
        let ax = self.op.apply(x, &self.diag_ctx)?;
        let residual_norm = norm2(&ax.iter().zip(self.b).map(|(a, b)| b - a).collect::<Vec<_>>());
        let rel_error = self.x_true.map(|(xt, nt)| {
            let d = norm2(&x.iter().zip(xt).map(|(a, b)| a - b).collect::<Vec<_>>());
            if nt > 0.0 {
                d / nt
            } else {
                d
            }
        });
        let finite = all_finite(x) && residual_norm.is_finite();
        self.history.push(IterationRecord {
            k,
            rel_error,
            residual_norm,
            finite,
        });
        let score = rel_error.unwrap_or(residual_norm);
        let better = match &self.best {
            None => true,
            Some((s, _, _)) => score < *s,
        };
        if better && score.is_finite() {
            self.best = Some((score, k, x.to_vec()));
        }
        Ok(())
    }

    fn finish(
        self,
        x_final: Vec<f64>,
        termination: Termination,
        nonfinite_site: Option<NonFiniteSite>,
        ctx: &ChopContext,
        planned_iterations: Option<usize>,
    ) -> SolveResult {
        let (best_iter, x_best) = match self.best {
            Some((_, k, x)) => (k, x),
            None => (0, vec![0.0; x_final.len()]),
        };
        SolveResult {
            x_final,
            x_best,
            best_iter,
            history: self.history,
            termination,
            nonfinite_site,
            counters: ctx.counters(),
            planned_iterations,
        }
    }
}

/// CGLS on the normal equations `A^T A x = A^T b`, every step chopped.
///
/// ```text
/// r = b, s = p = A^T r, psi = ||s||^2
/// while psi > tol:
///     q = A p, alpha = psi / ||q||^2
///     x = x + alpha p, r = r - alpha q
///     s = A^T r, psi' = ||s||^2, beta = psi' / psi
///     p = s + beta p
/// ```
///
/// The run stops early with [`Termination::NonFinite`] at the first NaN or
/// infinity; `x_final` is then the last iterate that was entirely finite.
pub fn cgls<O: LinearOperator>(op: &O, b: &[f64], cfg: &SolverConfig) -> Result<SolveResult> {
    check_len("right-hand side", op.n_rows(), b.len())?;
    cfg.validate(op.n_cols())?;
    let ctx = cfg.context();
    let mut tracker = Tracker::new(op, b, cfg.track_error_against.as_deref());

    let n = op.n_cols();
    let mut x = vec![0.0; n];
    let mut r = ctx.chop_vec(b);
    let mut s = op.apply_transpose(&r, &ctx)?;
    let mut p = s.clone();
    let mut psi = ctx.dot(&s, &s)?;

    let stop = |x: Vec<f64>, t: Termination, site: Option<NonFiniteSite>, tr: Tracker<'_, O>| {
        Ok(tr.finish(x, t, site, &ctx, None))
    };

    if !all_finite(&s) {
        return stop(x, Termination::NonFinite, Some(NonFiniteSite::MatVec), tracker);
    }
    if !psi.is_finite() {
        return stop(x, Termination::NonFinite, Some(NonFiniteSite::InnerProduct), tracker);
    }

    let mut k = 0;
    loop {
        if psi <= cfg.tol {
            return stop(x, Termination::Tolerance, None, tracker);
        }
        if k == cfg.max_iter {
            return stop(x, Termination::MaxIter, None, tracker);
        }

        let q = op.apply(&p, &ctx)?;
        if !all_finite(&q) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::MatVec), tracker);
        }
        let qq = ctx.dot(&q, &q)?;
        if !qq.is_finite() {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::InnerProduct), tracker);
        }
        let alpha = ctx.scalar(ElementOp::Div, psi, qq);
        if !alpha.is_finite() {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::Scalar), tracker);
        }
        let x_next = ctx.axpy(alpha, &p, &x)?;
        if !all_finite(&x_next) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
        x = x_next;
        k += 1;
        tracker.record(k, &x)?;

        r = ctx.axmy(alpha, &q, &r)?;
        if !all_finite(&r) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
        s = op.apply_transpose(&r, &ctx)?;
        if !all_finite(&s) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::MatVec), tracker);
        }
        let psi_next = ctx.dot(&s, &s)?;
        if !psi_next.is_finite() {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::InnerProduct), tracker);
        }
        let beta = ctx.scalar(ElementOp::Div, psi_next, psi);
        if !beta.is_finite() {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::Scalar), tracker);
        }
        p = ctx.axpy(beta, &p, &s)?;
        if !all_finite(&p) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
        psi = psi_next;
    }
}

/// Largest iteration count [`cs_iteration_count`] returns.
pub const CS_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCount {
    pub count: usize,
    /// The formula's value fell outside `[1, CS_MAX_ITERATIONS]`.
    pub clamped: bool,
}

fn check_sigma(sigma_lower: f64, sigma_upper: f64) -> Result<()> {
    if !(sigma_lower > 0.0 && sigma_lower < sigma_upper && sigma_upper.is_finite()) {
        return Err(Error::InvalidBounds(format!(
            "need 0 < sigma_L < sigma_U, got [{sigma_lower}, {sigma_upper}]"
        )));
    }
    Ok(())
}

/// `ceil((ln eps - ln 2) / ln((sigma_U - sigma_L) / (sigma_U + sigma_L)))`,
/// clamped to `[1, CS_MAX_ITERATIONS]`.
pub fn cs_iteration_count(sigma_lower: f64, sigma_upper: f64, eps: f64) -> Result<IterationCount> {
    check_sigma(sigma_lower, sigma_upper)?;
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::Config(format!("eps must lie in (0, 2], got {eps}")));
    }
    let ratio = (sigma_upper - sigma_lower) / (sigma_upper + sigma_lower);
    let raw = (eps.ln() - 2f64.ln()) / ratio.ln();
    if !raw.is_finite() {
        return Err(Error::CountOverflow(raw));
    }
    let k = raw.ceil();
    Ok(if k < 1.0 {
        IterationCount { count: 1, clamped: true }
    } else if k > CS_MAX_ITERATIONS as f64 {
        IterationCount {
            count: CS_MAX_ITERATIONS,
            clamped: true,
        }
    } else {
        IterationCount {
            count: k as usize,
            clamped: false,
        }
    })
}

/// Chebyshev step coefficients `(alpha_k, beta_k)`:
///
/// ```text
/// k = 0:  alpha = 1/d,                          beta = 0
/// k = 1:  alpha = 1/(d - c^2/(2d)),             beta = (c/d)^2 / 2
/// k >= 2: alpha = 1/(d - alpha_prev c^2/4),     beta = (alpha_prev c/2)^2
/// ```
pub fn cs_coefficients(k: usize, c: f64, d: f64, alpha_prev: Option<f64>) -> Result<(f64, f64)> {
    coefficients_with(k, c, d, alpha_prev, |op, a, b| op.apply(a, b))
}

fn coefficients_with<F>(k: usize, c: f64, d: f64, alpha_prev: Option<f64>, f: F) -> Result<(f64, f64)>
where
    F: Fn(ElementOp, f64, f64) -> f64,
{
    use ElementOp::*;
    if !(d > 0.0) {
        return Err(Error::Coefficient(d));
    }
    let invert = |den: f64| {
        if den.is_finite() && den <= 0.0 {
            Err(Error::Coefficient(den))
        } else {
            Ok(f(Div, 1.0, den))
        }
    };
    match k {
        0 => Ok((invert(d)?, 0.0)),
        1 => {
            let c2 = f(Mul, c, c);
            let den = f(Sub, d, f(Div, c2, f(Mul, 2.0, d)));
            let ratio = f(Div, c, d);
            let beta = f(Mul, 0.5, f(Mul, ratio, ratio));
            Ok((invert(den)?, beta))
        }
        _ => {
            let a = alpha_prev.ok_or_else(|| {
                Error::Config("alpha_prev is required for k >= 2".into())
            })?;
            let half = f(Div, f(Mul, a, c), 2.0);
            let beta = f(Mul, half, half);
            let den = f(Sub, d, f(Div, f(Mul, a, f(Mul, c, c)), 4.0));
            Ok((invert(den)?, beta))
        }
    }
}

/// Chebyshev semi-iterative method for least squares; uses no inner
/// products.
///
/// With `d = (sigma_U^2 + sigma_L^2)/2` and `c = (sigma_U^2 - sigma_L^2)/2`,
/// runs `K + 1` steps (`K` from [`cs_iteration_count`], capped by
/// `cfg.max_iter`) of
///
/// ```text
/// v = beta v + A^T r
/// x = x + alpha v
/// r = r - alpha A v
/// ```
pub fn chebyshev_si<O: LinearOperator>(
    op: &O,
    b: &[f64],
    sigma_lower: f64,
    sigma_upper: f64,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    check_len("right-hand side", op.n_rows(), b.len())?;
    cfg.validate(op.n_cols())?;
    check_sigma(sigma_lower, sigma_upper)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
    }
    let plan = cs_iteration_count(sigma_lower, sigma_upper, eps)?;
    let planned = plan.count + 1;
    let steps = planned.min(cfg.max_iter);

    let ctx = cfg.context();
    let mut tracker = Tracker::new(op, b, cfg.track_error_against.as_deref());
    let sc = |op: ElementOp, a: f64, b: f64| ctx.scalar(op, a, b);

    let upper2 = sc(ElementOp::Mul, sigma_upper, sigma_upper);
    let lower2 = sc(ElementOp::Mul, sigma_lower, sigma_lower);
    let d = sc(ElementOp::Div, sc(ElementOp::Add, upper2, lower2), 2.0);
    let c = sc(ElementOp::Div, sc(ElementOp::Sub, upper2, lower2), 2.0);

    let n = op.n_cols();
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut r = ctx.chop_vec(b);
    let mut alpha_prev = None;

    let stop = |x: Vec<f64>, t: Termination, site: Option<NonFiniteSite>, tr: Tracker<'_, O>| {
        Ok(tr.finish(x, t, site, &ctx, Some(planned)))
    };

    if !(d.is_finite() && c.is_finite()) {
        return stop(x, Termination::NonFinite, Some(NonFiniteSite::Scalar), tracker);
    }

    for k in 0..steps {
        let (alpha, beta) = coefficients_with(k, c, d, alpha_prev, sc)?;
        if !(alpha.is_finite() && beta.is_finite()) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::Scalar), tracker);
        }
        alpha_prev = Some(alpha);

        let atr = op.apply_transpose(&r, &ctx)?;
        if !all_finite(&atr) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::MatVec), tracker);
        }
        v = ctx.axpy(beta, &v, &atr)?;
        if !all_finite(&v) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
        let x_next = ctx.axpy(alpha, &v, &x)?;
        if !all_finite(&x_next) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
        x = x_next;
        tracker.record(k + 1, &x)?;

        let av = op.apply(&v, &ctx)?;
        if !all_finite(&av) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::MatVec), tracker);
        }
        r = ctx.axmy(alpha, &av, &r)?;
        if !all_finite(&r) {
            return stop(x, Termination::NonFinite, Some(NonFiniteSite::VectorUpdate), tracker);
        }
    }
    let termination = if steps == planned {
        Termination::Tolerance
    } else {
        Termination::MaxIter
    };
    stop(x, termination, None, tracker)
}
