//! Test problems with known ground truth: Gaussian deblurring and
//! parallel-beam tomography on an `n x n` pixel grid.
//!
//! Images are flattened row-major, pixel `(row, col)` at index `row * n + col`,
//! with row 0 at the top of the image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Deblur,
    Tomo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    #[default]
    Shapes,
    Dot,
    Flat,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shapes" => Ok(PhantomKind::Shapes),
            "dot" => Ok(PhantomKind::Dot),
            "flat" => Ok(PhantomKind::Flat),
            other => Err(Error::Config(format!("unknown phantom `{other}`"))),
        }
    }
}

/// An inverse problem `b = A x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: SparseMatrix,
    pub x_true: Vec<f64>,
    pub b_exact: Vec<f64>,
    pub b: Vec<f64>,
    /// The realized noise vector `b - b_exact`.
    pub noise: Vec<f64>,
    pub noise_level: f64,
    pub scale: f64,
    pub kind: ProblemKind,
    pub grid_n: usize,
}

impl Problem {
    fn noiseless(a: SparseMatrix, x_true: Vec<f64>, kind: ProblemKind, grid_n: usize) -> Result<Self> {
        let b_exact = a.mul_vec(&x_true)?;
        Ok(Problem {
            noise: vec![0.0; b_exact.len()],
            b: b_exact.clone(),
            b_exact,
            a,
            x_true,
            noise_level: 0.0,
            scale: 1.0,
            kind,
            grid_n,
        })
    }

    /// `(width, height)` of `b` when it is itself an image.
    pub fn rhs_image_shape(&self) -> Option<(usize, usize)> {
        match self.kind {
            ProblemKind::Deblur => Some((self.grid_n, self.grid_n)),
            ProblemKind::Tomo => None,
        }
    }
}

/// Gaussian blur parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub sigma: f64,
    pub bandwidth: usize,
}

impl BlurParams {
    /// Labeled "mild" blur preset.
    pub const MILD: BlurParams = BlurParams {
        sigma: 1.0,
        bandwidth: 4,
    };
}

impl Default for BlurParams {
    fn default() -> Self {
        BlurParams::MILD
    }
}

fn check_grid(grid_n: usize) -> Result<()> {
    if grid_n < 8 {
        return Err(Error::Geometry(format!("grid_n must be at least 8, got {grid_n}")));
    }
    Ok(())
}

pub fn phantom(kind: PhantomKind, grid_n: usize) -> Result<Vec<f64>> {
    check_grid(grid_n)?;
    let n = grid_n;
    Ok(match kind {
        PhantomKind::Flat => vec![1.0; n * n],
        PhantomKind::Dot => {
            let mut x = vec![0.0; n * n];
            x[(n / 2) * n + n / 2] = 1.0;
            x
        }
        PhantomKind::Shapes => shapes_phantom(n),
    })
}

// (intensity, semi-axis a, semi-axis b, center x, center y, rotation degrees)
// on the square [-1, 1]^2, y pointing up.
const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.3, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.3, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.3, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.3, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.3, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.3, 0.023, 0.046, 0.06, -0.605, 0.0),
];

// (intensity, x range, y range)
type Rectangle = (f64, (f64, f64), (f64, f64));
const RECTANGLES: [Rectangle; 1] = [(0.45, (-0.3, 0.05), (-0.45, -0.25))];

fn shapes_phantom(n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    for row in 0..n {
        let y = 1.0 - 2.0 * (row as f64 + 0.5) / n as f64;
        for col in 0..n {
            let x = 2.0 * (col as f64 + 0.5) / n as f64 - 1.0;
            let mut v = 0.0;
            for &(intensity, a, b, cx, cy, deg) in &ELLIPSES {
                let (sin, cos) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let w = -dx * sin + dy * cos;
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += intensity;
                }
            }
            for &(intensity, (x0, x1), (y0, y1)) in &RECTANGLES {
                if (x0..=x1).contains(&x) && (y0..=y1).contains(&y) {
                    v += intensity;
                }
            }
            img[row * n + col] = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Total mass of the 1-D integer-sampled Gaussian over all of Z.
fn gaussian_mass_1d(sigma: f64) -> f64 {
    let reach = (12.0 * sigma).ceil() as i64 + 1;
    (-reach..=reach)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .sum()
}

/// The blur operator alone: 2-D Gaussian convolution with zero boundary.
pub fn blur_matrix(grid_n: usize, blur: BlurParams) -> Result<SparseMatrix> {
    check_grid(grid_n)?;
    if !(blur.sigma > 0.0) || !blur.sigma.is_finite() {
        return Err(Error::Geometry(format!("blur sigma must be positive, got {}", blur.sigma)));
    }
    if blur.bandwidth >= grid_n {
        return Err(Error::Geometry(format!(
            "bandwidth {} must be below grid size {grid_n}",
            blur.bandwidth
        )));
    }
    let n = grid_n as i64;
    let bw = blur.bandwidth as i64;
    let z = gaussian_mass_1d(blur.sigma).powi(2);
    let two_s2 = 2.0 * blur.sigma * blur.sigma;
    let kernel = |di: i64, dj: i64| (-((di * di + dj * dj) as f64) / two_s2).exp() / z;

    let mut row_offsets = Vec::with_capacity((n * n + 1) as usize);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for r in 0..n {
        for c in 0..n {
            for rr in (r - bw).max(0)..=(r + bw).min(n - 1) {
                for cc in (c - bw).max(0)..=(c + bw).min(n - 1) {
                    col_indices.push((rr * n + cc) as usize);
                    values.push(kernel(rr - r, cc - c));
                }
            }
            row_offsets.push(col_indices.len());
        }
    }
    SparseMatrix::try_new(grid_n * grid_n, grid_n * grid_n, row_offsets, col_indices, values)
}

pub fn gen_deblur(grid_n: usize, blur: BlurParams, phantom_kind: PhantomKind) -> Result<Problem> {
    let a = blur_matrix(grid_n, blur)?;
    let x_true = phantom(phantom_kind, grid_n)?;
    Problem::noiseless(a, x_true, ProblemKind::Deblur, grid_n)
}

/// Parallel-beam acquisition geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomoGeometry {
    pub n_angles: usize,
    pub n_detectors: usize,
}

impl TomoGeometry {
    /// `grid_n` angles over `[0, 180)` degrees and `ceil(sqrt(2) grid_n)`
    /// detectors spanning the grid diagonal.
    pub fn default_for(grid_n: usize) -> Self {
        TomoGeometry {
            n_angles: grid_n,
            n_detectors: (std::f64::consts::SQRT_2 * grid_n as f64).ceil() as usize,
        }
    }

    pub fn angle(&self, k: usize) -> f64 {
        std::f64::consts::PI * k as f64 / self.n_angles as f64
    }

    /// Signed distance of detector `j` from the grid center.
    pub fn detector_offset(&self, grid_n: usize, j: usize) -> f64 {
        let span = std::f64::consts::SQRT_2 * grid_n as f64;
        -0.5 * span + (j as f64 + 0.5) * span / self.n_detectors as f64
    }
}

const EDGE_EPS: f64 = 1e-12;

/// Exact intersection lengths of a ray with the pixels of an `n x n` grid of
/// unit pixels centered at the origin.
///
/// The ray runs along `(cos theta, sin theta)` through the point
/// `offset * (-sin theta, cos theta)`. Returns `(pixel, length)` sorted by
/// pixel index.
pub fn ray_pixel_lengths(grid_n: usize, theta: f64, offset: f64) -> Vec<(usize, f64)> {
    let h = grid_n as f64 / 2.0;
    let (sin, cos) = theta.sin_cos();
    let (ox, oy) = (-offset * sin, offset * cos);
    let (dx, dy) = (cos, sin);

    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < EDGE_EPS {
            if o < -h || o > h {
                return Vec::new();
            }
        } else {
            let (t0, t1) = ((-h - o) / d, (h - o) / d);
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
    }
    if !(t_hi - t_lo > EDGE_EPS) {
        return Vec::new();
    }

    let mut ts = vec![t_lo, t_hi];
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < EDGE_EPS {
            continue;
        }
        for k in 0..=grid_n {
            let t = (-h + k as f64 - o) / d;
            if t > t_lo && t < t_hi {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);

    let last = grid_n - 1;
    let mut hits: Vec<(usize, f64)> = Vec::new();
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= EDGE_EPS {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let (mx, my) = (ox + tm * dx, oy + tm * dy);
        let col = ((mx + h).floor().max(0.0) as usize).min(last);
        let row = ((h - my).floor().max(0.0) as usize).min(last);
        hits.push((row * grid_n + col, len));
    }
    hits.sort_by_key(|&(p, _)| p);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(hits.len());
    for (p, len) in hits {
        match merged.last_mut() {
            Some((q, l)) if *q == p => *l += len,
            _ => merged.push((p, len)),
        }
    }
    merged
}

pub fn tomo_matrix(grid_n: usize, geometry: TomoGeometry) -> Result<SparseMatrix> {
    check_grid(grid_n)?;
    if geometry.n_angles == 0 || geometry.n_detectors == 0 {
        return Err(Error::Geometry("need at least one angle and one detector".into()));
    }
    let mut row_offsets = vec![0usize];
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for k in 0..geometry.n_angles {
        let theta = geometry.angle(k);
        for j in 0..geometry.n_detectors {
            for (p, len) in ray_pixel_lengths(grid_n, theta, geometry.detector_offset(grid_n, j)) {
                col_indices.push(p);
                values.push(len);
            }
            row_offsets.push(col_indices.len());
        }
    }
    SparseMatrix::try_new(
        geometry.n_angles * geometry.n_detectors,
        grid_n * grid_n,
        row_offsets,
        col_indices,
        values,
    )
}

pub fn gen_tomo(grid_n: usize, geometry: TomoGeometry, phantom_kind: PhantomKind) -> Result<Problem> {
    let a = tomo_matrix(grid_n, geometry)?;
    let x_true = phantom(phantom_kind, grid_n)?;
    Problem::noiseless(a, x_true, ProblemKind::Tomo, grid_n)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Replace the noise with a seeded Gaussian draw scaled so that
/// `||e|| = level ||b_exact||`.
pub fn add_noise(problem: &Problem, level: f64, seed: u64) -> Result<Problem> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Config(format!("noise level must be nonnegative, got {level}")));
    }
    let m = problem.b_exact.len();
    let mut out = problem.clone();
    out.noise_level = level;
    if level == 0.0 {
        out.noise = vec![0.0; m];
        out.b = problem.b_exact.clone();
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let factor = level * norm2(&problem.b_exact) / norm2(&e);
    e.iter_mut().for_each(|v| *v *= factor);
    out.b = problem.b_exact.iter().zip(&e).map(|(b, e)| b + e).collect();
    out.noise = e;
    Ok(out)
}

/// Multiply `A`, `b`, `b_exact` and the noise by `s`.
pub fn rescale_problem(problem: &Problem, s: f64) -> Result<Problem> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidScale(s));
    }
    let mul = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<f64>>();
    Ok(Problem {
        a: problem.a.scaled(s),
        x_true: problem.x_true.clone(),
        b_exact: mul(&problem.b_exact),
        b: mul(&problem.b),
        noise: mul(&problem.noise),
        noise_level: problem.noise_level,
        scale: problem.scale * s,
        kind: problem.kind,
        grid_n: problem.grid_n,
    })
}
