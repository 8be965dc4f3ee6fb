//! Reduced-precision arithmetic emulated in `f64`.
//!
//! Values always live in working precision (`f64`); a [`FloatFormat`]
//! describes the target format and [`chop_scalar`] rounds a working value to
//! the nearest value that format can represent. Full emulation means rounding
//! after every arithmetic operation:
//!
//! ```text
//! a = chop(x + chop(y * z))
//! ```
//!
//! Inner products form the elementwise product once (one rounding per
//! element) and then accumulate it in blocks: each block of `block_size`
//! addends is summed sequentially with a rounding after each addition, and
//! the block partial sums are then combined sequentially the same way.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::exec::{self, Execution};
use crate::sparse::SparseMatrix;

/// Rounding applied by [`chop_scalar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    #[default]
    NearestTiesToEven,
}

/// A binary floating-point format with `significand_bits` of precision
/// (implicit bit included) and exponents in `[1 - max_exponent, max_exponent]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloatFormat {
    pub significand_bits: u32,
    pub max_exponent: i32,
    pub supports_subnormals: bool,
    pub rounding: Rounding,
    /// Chopping is the identity; the format stands for working precision.
    pub passthrough: bool,
}

impl FloatFormat {
    pub const FP16: FloatFormat = FloatFormat::preset(11, 15);
    pub const BFLOAT16: FloatFormat = FloatFormat::preset(8, 127);
    pub const FP32: FloatFormat = FloatFormat::preset(24, 127);
    pub const FP64: FloatFormat = FloatFormat {
        significand_bits: 53,
        max_exponent: 1023,
        supports_subnormals: true,
        rounding: Rounding::NearestTiesToEven,
        passthrough: true,
    };

    /// Names accepted by [`FloatFormat::from_name`], in table order.
    pub const PRESET_NAMES: [&'static str; 4] = ["fp16", "bfloat16", "fp32", "fp64"];

    const fn preset(significand_bits: u32, max_exponent: i32) -> FloatFormat {
        FloatFormat {
            significand_bits,
            max_exponent,
            supports_subnormals: true,
            rounding: Rounding::NearestTiesToEven,
            passthrough: false,
        }
    }

    /// A custom chopped format. The emulation requires `2 <= t <= 53` and a
    /// range whose smallest subnormal is still an `f64`.
    pub fn custom(
        significand_bits: u32,
        max_exponent: i32,
        supports_subnormals: bool,
    ) -> Result<FloatFormat> {
        if !(2..=53).contains(&significand_bits) {
            return Err(Error::Format(format!(
                "significand_bits must be in [2, 53], got {significand_bits}"
            )));
        }
        if !(1..=1023).contains(&max_exponent) {
            return Err(Error::Format(format!(
                "max_exponent must be in [1, 1023], got {max_exponent}"
            )));
        }
        if max_exponent + significand_bits as i32 > 1076 {
            return Err(Error::Format(
                "subnormal spacing of this format is below the f64 range".into(),
            ));
        }
        Ok(FloatFormat::preset(significand_bits, max_exponent)).map(|f| FloatFormat {
            supports_subnormals,
            ..f
        })
    }

    pub fn from_name(name: &str) -> Result<FloatFormat> {
        match name.trim().to_ascii_lowercase().as_str() {
            "fp16" | "half" | "binary16" => Ok(FloatFormat::FP16),
            "bfloat16" | "bf16" => Ok(FloatFormat::BFLOAT16),
            "fp32" | "single" | "binary32" => Ok(FloatFormat::FP32),
            "fp64" | "double" | "binary64" => Ok(FloatFormat::FP64),
            other => Err(Error::Format(format!("unknown format name `{other}`"))),
        }
    }

    /// Canonical preset name, if this format is one of the presets.
    pub fn name(&self) -> Option<&'static str> {
        FloatFormat::PRESET_NAMES
            .iter()
            .copied()
            .find(|n| FloatFormat::from_name(n).ok().as_ref() == Some(self))
    }

    pub fn min_exponent(&self) -> i32 {
        1 - self.max_exponent
    }

    /// Largest finite representable magnitude, `2^emax * (2 - 2^(1-t))`.
    pub fn max_finite(&self) -> f64 {
        (2.0 - exp2i(1 - self.significand_bits as i32)) * exp2i(self.max_exponent)
    }

    /// Smallest positive normal number, `2^emin`.
    pub fn min_normal(&self) -> f64 {
        exp2i(self.min_exponent())
    }

    /// Smallest positive subnormal number, `2^(emin + 1 - t)`.
    pub fn min_subnormal(&self) -> f64 {
        exp2i(self.min_exponent() + 1 - self.significand_bits as i32)
    }

    pub fn unit_roundoff(&self) -> f64 {
        unit_roundoff(self)
    }
}

impl FromStr for FloatFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FloatFormat::from_name(s)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(
                f,
                "custom(t={}, emax={}{})",
                self.significand_bits,
                self.max_exponent,
                if self.supports_subnormals { "" } else { ", no subnormals" }
            ),
        }
    }
}

/// Block size used by blocked reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedReduceConfig {
    pub block_size: usize,
}

impl BlockedReduceConfig {
    pub const DEFAULT_BLOCK_SIZE: usize = 256;

    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        Ok(BlockedReduceConfig { block_size })
    }
}

impl Default for BlockedReduceConfig {
    fn default() -> Self {
        BlockedReduceConfig {
            block_size: Self::DEFAULT_BLOCK_SIZE,
        }
    }
}

/// `2^k` for `k` in `[-1074, 1023]`, built from bits so subnormal powers are exact.
pub(crate) fn exp2i(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

/// `floor(log2(a))` for finite `a > 0`.
fn floor_log2(a: f64) -> i32 {
    let bits = a.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased != 0 {
        biased - 1023
    } else {
        let mantissa = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mantissa.leading_zeros() as i32)
    }
}

/// Round `x` to the nearest value representable in `fmt`, ties to even.
///
/// Overflow produces a signed infinity and underflow below half the
/// smallest subnormal produces a signed zero. NaN and infinities pass
/// through unchanged.
pub fn chop_scalar(x: f64, fmt: &FloatFormat) -> f64 {
    if fmt.passthrough || x == 0.0 || !x.is_finite() {
        return x;
    }
    let t = fmt.significand_bits as i32;
    let emin = fmt.min_exponent();
    let e = floor_log2(x.abs());
    let quantum_exp = if e < emin && fmt.supports_subnormals {
        emin + 1 - t
    } else {
        e + 1 - t
    };
    if quantum_exp < -1074 {
        // Below the f64 range only for formats that flush subnormals.
        return 0.0f64.copysign(x);
    }
    let quantum = exp2i(quantum_exp);
    // Division by a power of two is exact here; the rounding below is the
    // only inexact step.
    let mut y = (x / quantum).round_ties_even() * quantum;
    if y.abs() > fmt.max_finite() {
        y = f64::INFINITY.copysign(x);
    } else if !fmt.supports_subnormals && y.abs() < fmt.min_normal() {
        y = 0.0f64.copysign(x);
    }
    y
}

pub fn chop_slice(x: &[f64], fmt: &FloatFormat) -> Vec<f64> {
    x.iter().map(|&v| chop_scalar(v, fmt)).collect()
}

pub fn chop_in_place(x: &mut [f64], fmt: &FloatFormat) {
    if fmt.passthrough {
        return;
    }
    for v in x.iter_mut() {
        *v = chop_scalar(*v, fmt);
    }
}

/// `2^(1 - t)`.
pub fn unit_roundoff(fmt: &FloatFormat) -> f64 {
    exp2i(1 - fmt.significand_bits as i32)
}

/// The accumulated-roundoff constant `n u / (1 - n u)`.
pub fn gamma_bound(n: usize, u: f64) -> Result<f64> {
    let nu = n as f64 * u;
    if !(nu < 1.0) {
        return Err(Error::BoundUndefined(nu));
    }
    Ok(nu / (1.0 - nu))
}

/// `floor(log2 n) + 1`, the effective operation count of the blocked bound.
pub fn blocked_bound_terms(n: usize) -> usize {
    assert!(n > 0, "blocked bound needs n >= 1");
    (usize::BITS - 1 - n.leading_zeros()) as usize + 1
}

/// Elementwise binary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ElementOp {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementOp::Add => a + b,
            ElementOp::Sub => a - b,
            ElementOp::Mul => a * b,
            ElementOp::Div => a / b,
        }
    }
}

/// `z_i = chop(chop(x_i) op chop(y_i))`.
pub fn chopped_ew(op: ElementOp, x: &[f64], y: &[f64], fmt: &FloatFormat) -> Result<Vec<f64>> {
    chopped_ew_with(Execution::default(), op, x, y, fmt)
}

pub fn chopped_ew_with(
    exec: Execution,
    op: ElementOp,
    x: &[f64],
    y: &[f64],
    fmt: &FloatFormat,
) -> Result<Vec<f64>> {
    check_len("elementwise operand", x.len(), y.len())?;
    Ok(exec::map_indexed(exec, x.len(), |i| {
        chop_scalar(
            op.apply(chop_scalar(x[i], fmt), chop_scalar(y[i], fmt)),
            fmt,
        )
    }))
}

/// Blocked, chopped accumulation of already-chopped addends.
///
/// In passthrough formats the reduction is a plain sequential `f64` sum so
/// that it reproduces the working-precision result bit for bit.
fn reduce_addends<I>(addends: I, fmt: &FloatFormat, block_size: usize) -> f64
where
    I: Iterator<Item = f64>,
{
    if fmt.passthrough {
        return addends.fold(0.0, |acc, z| acc + z);
    }
    let mut total = 0.0;
    let mut partial = 0.0;
    let mut in_block = 0usize;
    for z in addends {
        partial = chop_scalar(partial + z, fmt);
        in_block += 1;
        if in_block == block_size {
            total = chop_scalar(total + partial, fmt);
            partial = 0.0;
            in_block = 0;
        }
    }
    if in_block > 0 {
        total = chop_scalar(total + partial, fmt);
    }
    total
}

/// Chopped inner product with blocked accumulation.
///
/// Inputs are chopped on entry, the elementwise product is formed with one
/// rounding per element, and the products are summed per block with a
/// rounding after every addition.
pub fn chopped_dot(
    x: &[f64],
    y: &[f64],
    fmt: &FloatFormat,
    cfg: &BlockedReduceConfig,
) -> Result<f64> {
    check_len("dot operand", x.len(), y.len())?;
    let products = x.iter().zip(y).map(|(&a, &b)| {
        chop_scalar(chop_scalar(a, fmt) * chop_scalar(b, fmt), fmt)
    });
    Ok(reduce_addends(products, fmt, cfg.block_size))
}

/// Chopped sparse matrix-vector product; each output element is a blocked
/// chopped dot of a row (or column, when `transpose`) with `x`.
pub fn chopped_spmv(
    a: &SparseMatrix,
    x: &[f64],
    fmt: &FloatFormat,
    cfg: &BlockedReduceConfig,
    transpose: bool,
) -> Result<Vec<f64>> {
    chopped_spmv_with(Execution::default(), a, x, fmt, cfg, transpose)
}

pub fn chopped_spmv_with(
    exec: Execution,
    a: &SparseMatrix,
    x: &[f64],
    fmt: &FloatFormat,
    cfg: &BlockedReduceConfig,
    transpose: bool,
) -> Result<Vec<f64>> {
    if transpose {
        let at = a.transpose();
        return spmv_rows(exec, &at, x, fmt, cfg);
    }
    spmv_rows(exec, a, x, fmt, cfg)
}

pub(crate) fn spmv_rows(
    exec: Execution,
    a: &SparseMatrix,
    x: &[f64],
    fmt: &FloatFormat,
    cfg: &BlockedReduceConfig,
) -> Result<Vec<f64>> {
    check_len("matrix-vector operand", a.n_cols(), x.len())?;
    let xc;
    let x = if fmt.passthrough {
        x
    } else {
        xc = chop_slice(x, fmt);
        &xc
    };
    Ok(exec::map_indexed(exec, a.n_rows(), |i| {
        let (cols, vals) = a.row(i);
        let products = cols.iter().zip(vals).map(|(&j, &v)| {
            chop_scalar(chop_scalar(v, fmt) * x[j], fmt)
        });
        reduce_addends(products, fmt, cfg.block_size)
    }))
}

/// Per-kernel invocation counts, including how often a kernel turned
/// all-finite inputs into a non-finite output (overflow or invalid op).
#[derive(Debug, Default)]
pub struct OpCounters {
    dot_calls: AtomicU64,
    dot_nonfinite: AtomicU64,
    spmv_calls: AtomicU64,
    spmv_nonfinite: AtomicU64,
    ew_calls: AtomicU64,
    ew_nonfinite: AtomicU64,
    scalar_calls: AtomicU64,
    scalar_nonfinite: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub dot_calls: u64,
    pub dot_nonfinite: u64,
    pub spmv_calls: u64,
    pub spmv_nonfinite: u64,
    pub ew_calls: u64,
    pub ew_nonfinite: u64,
    pub scalar_calls: u64,
    pub scalar_nonfinite: u64,
}

impl CounterSnapshot {
    /// Counts accumulated between `earlier` and `self`.
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            dot_calls: self.dot_calls - earlier.dot_calls,
            dot_nonfinite: self.dot_nonfinite - earlier.dot_nonfinite,
            spmv_calls: self.spmv_calls - earlier.spmv_calls,
            spmv_nonfinite: self.spmv_nonfinite - earlier.spmv_nonfinite,
            ew_calls: self.ew_calls - earlier.ew_calls,
            ew_nonfinite: self.ew_nonfinite - earlier.ew_nonfinite,
            scalar_calls: self.scalar_calls - earlier.scalar_calls,
            scalar_nonfinite: self.scalar_nonfinite - earlier.scalar_nonfinite,
        }
    }
}

impl OpCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        let ld = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            dot_calls: ld(&self.dot_calls),
            dot_nonfinite: ld(&self.dot_nonfinite),
            spmv_calls: ld(&self.spmv_calls),
            spmv_nonfinite: ld(&self.spmv_nonfinite),
            ew_calls: ld(&self.ew_calls),
            ew_nonfinite: ld(&self.ew_nonfinite),
            scalar_calls: ld(&self.scalar_calls),
            scalar_nonfinite: ld(&self.scalar_nonfinite),
        }
    }

    fn bump(calls: &AtomicU64, nonfinite: &AtomicU64, produced_nonfinite: bool) {
        calls.fetch_add(1, Ordering::Relaxed);
        if produced_nonfinite {
            nonfinite.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Arithmetic context for one solver run: the target format, the reduction
/// block size, how loops execute, and instrumentation counters.
///
/// Every chopped kernel a solver uses goes through a context, so the
/// counters tell exactly which kernels ran and which produced the first
/// non-finite values.
#[derive(Debug, Default)]
pub struct ChopContext {
    pub fmt: FloatFormat,
    pub reduce: BlockedReduceConfig,
    pub exec: Execution,
    counters: OpCounters,
}

impl Default for FloatFormat {
    fn default() -> Self {
        FloatFormat::FP64
    }
}

impl ChopContext {
    pub fn new(fmt: FloatFormat, reduce: BlockedReduceConfig) -> Self {
        ChopContext {
            fmt,
            reduce,
            exec: Execution::default(),
            counters: OpCounters::default(),
        }
    }

    pub fn passthrough() -> Self {
        ChopContext::new(FloatFormat::FP64, BlockedReduceConfig::default())
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    #[inline]
    pub fn chop(&self, x: f64) -> f64 {
        chop_scalar(x, &self.fmt)
    }

    pub fn chop_vec(&self, x: &[f64]) -> Vec<f64> {
        chop_slice(x, &self.fmt)
    }

    /// One chopped scalar operation, `chop(chop(a) op chop(b))`.
    pub fn scalar(&self, op: ElementOp, a: f64, b: f64) -> f64 {
        let out = self.chop(op.apply(self.chop(a), self.chop(b)));
        let c = &self.counters;
        OpCounters::bump(
            &c.scalar_calls,
            &c.scalar_nonfinite,
            a.is_finite() && b.is_finite() && !out.is_finite(),
        );
        out
    }

    pub fn dot(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let out = chopped_dot(x, y, &self.fmt, &self.reduce)?;
        let c = &self.counters;
        OpCounters::bump(
            &c.dot_calls,
            &c.dot_nonfinite,
            !out.is_finite() && all_finite(x) && all_finite(y),
        );
        Ok(out)
    }

    /// `A x` for a matrix whose rows are the output elements.
    pub fn spmv(&self, a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
        let out = spmv_rows(self.exec, a, x, &self.fmt, &self.reduce)?;
        let c = &self.counters;
        OpCounters::bump(
            &c.spmv_calls,
            &c.spmv_nonfinite,
            !all_finite(&out) && all_finite(x) && all_finite(a.values()),
        );
        Ok(out)
    }

    pub fn ew(&self, op: ElementOp, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let out = chopped_ew_with(self.exec, op, x, y, &self.fmt)?;
        self.note_ew(&out, all_finite(x) && all_finite(y));
        Ok(out)
    }

    /// `chop(x + chop(alpha * y))` elementwise.
    pub fn axpy(&self, alpha: f64, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.combine(x, alpha, y, ElementOp::Add)
    }

    /// `chop(x - chop(alpha * y))` elementwise.
    pub fn axmy(&self, alpha: f64, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.combine(x, alpha, y, ElementOp::Sub)
    }

    /// `chop(alpha * y)` elementwise.
    pub fn scale(&self, alpha: f64, y: &[f64]) -> Vec<f64> {
        let a = self.chop(alpha);
        let fmt = self.fmt;
        let out = exec::map_indexed(self.exec, y.len(), |i| {
            chop_scalar(a * chop_scalar(y[i], &fmt), &fmt)
        });
        self.note_ew(&out, alpha.is_finite() && all_finite(y));
        out
    }

    fn combine(&self, x: &[f64], alpha: f64, y: &[f64], op: ElementOp) -> Result<Vec<f64>> {
        check_len("vector update operand", x.len(), y.len())?;
        let a = self.chop(alpha);
        let fmt = self.fmt;
        let out = exec::map_indexed(self.exec, x.len(), |i| {
            let t = chop_scalar(a * chop_scalar(y[i], &fmt), &fmt);
            chop_scalar(op.apply(chop_scalar(x[i], &fmt), t), &fmt)
        });
        self.note_ew(&out, alpha.is_finite() && all_finite(x) && all_finite(y));
        Ok(out)
    }

    fn note_ew(&self, out: &[f64], inputs_finite: bool) {
        let c = &self.counters;
        OpCounters::bump(
            &c.ew_calls,
            &c.ew_nonfinite,
            inputs_finite && !all_finite(out),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use half::f16;
    use proptest::prelude::*;

    fn f16_oracle(x: f64) -> f64 {
        f16::from_f64(x).to_f64()
    }

    #[test]
    fn presets_have_expected_fields() {
        assert_eq!(
            (FloatFormat::FP16.significand_bits, FloatFormat::FP16.max_exponent),
            (11, 15)
        );
        assert_eq!(
            (FloatFormat::BFLOAT16.significand_bits, FloatFormat::BFLOAT16.max_exponent),
            (8, 127)
        );
        assert_eq!(
            (FloatFormat::FP32.significand_bits, FloatFormat::FP32.max_exponent),
            (24, 127)
        );
        assert_eq!(FloatFormat::from_name("fp64").unwrap(), FloatFormat::FP64);
        for name in FloatFormat::PRESET_NAMES {
            let f = FloatFormat::from_name(name).unwrap();
            assert_eq!(f.name(), Some(name));
            assert!(f.supports_subnormals);
        }
        assert!(FloatFormat::from_name("fp8").is_err());
        assert_eq!(FloatFormat::FP16.max_finite(), 65504.0);
        assert_eq!(FloatFormat::FP16.min_subnormal(), 2f64.powi(-24));
    }

    #[test]
    fn chop_examples() {
        let h = FloatFormat::FP16;
        assert_eq!(chop_scalar(0.0, &h), 0.0);
        let tie = 1.0 + 2f64.powi(-11);
        assert_eq!(chop_scalar(tie, &h), f16_oracle(tie));
        assert_eq!(chop_scalar(tie, &h), 1.0);
        assert_eq!(chop_scalar(100000.0, &h), f16_oracle(100000.0));
        assert_eq!(chop_scalar(100000.0, &h), f64::INFINITY);
        assert_eq!(chop_scalar(0.1, &h), f16_oracle(0.1));
        assert_eq!(chop_scalar(0.1, &h), 0.0999755859375);
    }

    #[test]
    fn overflow_threshold_follows_ieee() {
        let h = FloatFormat::FP16;
        // 65520 is the midpoint between 65504 and 2^16; ties go to even (inf).
        assert_eq!(chop_scalar(65519.99, &h), 65504.0);
        assert_eq!(chop_scalar(65520.0, &h), f64::INFINITY);
        assert_eq!(chop_scalar(-65520.0, &h), f64::NEG_INFINITY);
    }

    #[test]
    fn underflow_and_specials() {
        let h = FloatFormat::FP16;
        let tiny = h.min_subnormal();
        assert_eq!(chop_scalar(tiny * 0.5, &h), 0.0);
        assert_eq!(chop_scalar(tiny * 0.51, &h), tiny);
        assert!(chop_scalar(-tiny * 0.25, &h).is_sign_negative());
        assert!(chop_scalar(f64::NAN, &h).is_nan());
        assert_eq!(chop_scalar(f64::NEG_INFINITY, &h), f64::NEG_INFINITY);
        assert_eq!(chop_scalar(f64::MIN_POSITIVE / 4.0, &h), 0.0);

        let flush = FloatFormat::custom(11, 15, false).unwrap();
        assert_eq!(chop_scalar(h.min_normal() * 0.75, &flush), 0.0);
        assert_eq!(chop_scalar(h.min_normal(), &flush), h.min_normal());
    }

    #[test]
    fn fp32_matches_native_cast() {
        let f = FloatFormat::FP32;
        for &x in &[0.1, 1.0 / 3.0, 3.4e38, 3.5e38, 1e-40, 1e-46, -7.25e-39] {
            assert_eq!(chop_scalar(x, &f), x as f32 as f64, "x = {x:e}");
        }
    }

    #[test]
    fn passthrough_is_identity() {
        for &x in &[0.1, -1e-310, 1e308, f64::MIN_POSITIVE] {
            assert_eq!(chop_scalar(x, &FloatFormat::FP64).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn custom_format_validation() {
        assert!(FloatFormat::custom(1, 15, true).is_err());
        assert!(FloatFormat::custom(11, 0, true).is_err());
        assert!(FloatFormat::custom(54, 15, true).is_err());
        let f = FloatFormat::custom(4, 3, true).unwrap();
        // t = 4, emax = 3: largest finite is 2^3 * (2 - 2^-3) = 15.
        assert_eq!(f.max_finite(), 15.0);
        assert_eq!(chop_scalar(15.4, &f), 15.0);
        assert_eq!(chop_scalar(16.0, &f), f64::INFINITY);
        assert_eq!(f.to_string(), "custom(t=4, emax=3)");
    }

    #[test]
    fn ew_examples() {
        let h = FloatFormat::FP16;
        assert_eq!(
            chopped_ew(ElementOp::Add, &[1.0, 2.0], &[1.0, 2.0], &h).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            chopped_ew(ElementOp::Add, &[1.0], &[2f64.powi(-11)], &h).unwrap(),
            vec![f16_oracle(1.0 + 2f64.powi(-11))]
        );
        assert_eq!(
            chopped_ew(ElementOp::Mul, &[300.0], &[300.0], &h).unwrap(),
            vec![f64::INFINITY]
        );
        assert_eq!(
            chopped_ew(ElementOp::Div, &[1.0], &[3.0], &h).unwrap(),
            vec![f16_oracle(1.0 / 3.0)]
        );
        assert!(matches!(
            chopped_ew(ElementOp::Sub, &[1.0], &[1.0, 2.0], &h),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dot_examples() {
        let h = FloatFormat::FP16;
        let cfg = BlockedReduceConfig::default();
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(chopped_dot(&e1, &e2, &h, &cfg).unwrap(), 0.0);
        assert_eq!(chopped_dot(&[1.0; 4], &[1.0; 4], &h, &cfg).unwrap(), 4.0);
        assert_eq!(chopped_dot(&[], &[], &h, &cfg).unwrap(), 0.0);
        assert!(chopped_dot(&[1.0], &[], &h, &cfg).is_err());
    }

    #[test]
    fn sequential_accumulation_stagnates_in_fp16() {
        // 2048 + 1 is a tie in fp16 and rounds back to 2048.
        let h = FloatFormat::FP16;
        let ones = vec![1.0; 4096];
        let seq = chopped_dot(&ones, &ones, &h, &BlockedReduceConfig::new(4096).unwrap()).unwrap();
        assert_eq!(seq, 2048.0);
        let blocked = chopped_dot(&ones, &ones, &h, &BlockedReduceConfig::new(256).unwrap()).unwrap();
        assert_eq!(blocked, 4096.0);
    }

    #[test]
    fn unit_roundoff_values() {
        assert_eq!(unit_roundoff(&FloatFormat::FP16), 2f64.powi(-10));
        assert!((unit_roundoff(&FloatFormat::FP16) - 9.77e-4).abs() < 5e-7);
        assert!((unit_roundoff(&FloatFormat::FP32) - 1.19e-7).abs() < 5e-10);
        assert!((unit_roundoff(&FloatFormat::FP64) - 2.22e-16).abs() < 5e-19);
        assert_eq!(unit_roundoff(&FloatFormat::BFLOAT16), 2f64.powi(-7));
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_bound(1, 0.0).unwrap(), 0.0);
        let u = 9.766e-4;
        let expected = 10.0 * u / (1.0 - 10.0 * u);
        assert!((gamma_bound(10, u).unwrap() - expected).abs() < 1e-15);
        assert!((gamma_bound(10, u).unwrap() - 9.862e-3).abs() < 5e-6);

        let u = 2f64.powi(-10);
        assert!(matches!(gamma_bound(2048, u), Err(Error::BoundUndefined(_))));
        assert!(matches!(gamma_bound(1024, u), Err(Error::BoundUndefined(_))));
        assert_eq!(blocked_bound_terms(2048), 12);
        let g12 = gamma_bound(blocked_bound_terms(2048), u).unwrap();
        assert!((g12 - 12.0 * u / (1.0 - 12.0 * u)).abs() < 1e-16);
        assert!((g12 - 1.186e-2).abs() < 5e-6);
        assert_eq!(blocked_bound_terms(1), 1);
        assert_eq!(blocked_bound_terms(4096), 13);
        assert_eq!(blocked_bound_terms(4095), 12);
    }

    #[test]
    fn context_counts_kernels() {
        let ctx = ChopContext::new(FloatFormat::FP16, BlockedReduceConfig::default());
        let big = vec![300.0; 4];
        assert_eq!(ctx.dot(&big, &big).unwrap(), f64::INFINITY);
        let _ = ctx.axpy(2.0, &[1.0], &[1.0]).unwrap();
        let _ = ctx.scalar(ElementOp::Div, 1.0, 0.0);
        let s = ctx.counters();
        assert_eq!((s.dot_calls, s.dot_nonfinite), (1, 1));
        assert_eq!((s.ew_calls, s.ew_nonfinite), (1, 0));
        assert_eq!((s.scalar_calls, s.scalar_nonfinite), (1, 1));
        assert_eq!(s.since(&s), CounterSnapshot::default());
    }

    #[test]
    fn axpy_rounds_twice() {
        let ctx = ChopContext::new(FloatFormat::FP16, BlockedReduceConfig::default());
        let out = ctx.axpy(0.1, &[1.0], &[1.0]).unwrap();
        let expected = f16_oracle(1.0 + f16_oracle(f16_oracle(0.1) * 1.0));
        assert_eq!(out, vec![expected]);
    }

    fn any_format() -> impl Strategy<Value = FloatFormat> {
        prop_oneof![
            Just(FloatFormat::FP16),
            Just(FloatFormat::BFLOAT16),
            Just(FloatFormat::FP32),
            (3u32..20, 2i32..40).prop_map(|(t, e)| FloatFormat::custom(t, e, true).unwrap()),
        ]
    }

    fn spread_value() -> impl Strategy<Value = f64> {
        (-1.0f64..1.0, -40i32..40).prop_map(|(m, e)| m * 2f64.powi(e))
    }

    proptest! {
        #[test]
        fn chop_is_idempotent(x in spread_value(), fmt in any_format()) {
            let c = chop_scalar(x, &fmt);
            prop_assert_eq!(chop_scalar(c, &fmt).to_bits(), c.to_bits());
        }

        #[test]
        fn chop_is_odd(x in spread_value(), fmt in any_format()) {
            prop_assert_eq!(chop_scalar(-x, &fmt).to_bits(), (-chop_scalar(x, &fmt)).to_bits());
        }

        #[test]
        fn chop_is_monotone(x in spread_value(), y in spread_value(), fmt in any_format()) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(chop_scalar(lo, &fmt) <= chop_scalar(hi, &fmt));
        }

        #[test]
        fn fp16_bit_patterns_are_fixed_points(bits in 0u16..0x7c00) {
            let v = f16::from_bits(bits).to_f64();
            prop_assert_eq!(chop_scalar(v, &FloatFormat::FP16), v);
            prop_assert_eq!(chop_scalar(-v, &FloatFormat::FP16), -v);
        }

        #[test]
        fn block_size_at_least_n_is_sequential(
            v in proptest::collection::vec(0.0f64..4.0, 1..300),
            extra in 0usize..50,
        ) {
            let n = v.len();
            let h = FloatFormat::FP16;
            let a = chopped_dot(&v, &v, &h, &BlockedReduceConfig::new(n).unwrap()).unwrap();
            let b = chopped_dot(&v, &v, &h, &BlockedReduceConfig::new(n + extra).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
