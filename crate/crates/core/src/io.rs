//! File formats: Matrix Market for matrices, a little-endian binary layout
//! for vectors, and 8-bit PGM for images.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Write `a` as a Matrix Market `coordinate real general` file with 1-based,
/// row-major sorted entries.
pub fn write_matrix_market<W: Write>(a: &SparseMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn read_matrix_market<R: BufRead>(r: R) -> Result<SparseMatrix> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty Matrix Market file".into()))??;
    let banner: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if banner.len() < 5 || banner[0] != "%%matrixmarket" || banner[1] != "matrix" {
        return Err(Error::Parse(format!("not a Matrix Market header: {header}")));
    }
    if banner[2] != "coordinate" || banner[3] != "real" || banner[4] != "general" {
        return Err(Error::Parse(format!(
            "only coordinate real general is supported, got {}",
            banner[2..].join(" ")
        )));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad integer `{s}`: {e}")))
        };
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(Error::Parse(format!("bad size line `{line}`")));
                }
                size = Some((parse_usize(fields[0])?, parse_usize(fields[1])?, parse_usize(fields[2])?));
            }
            Some((m, n, _)) => {
                if fields.len() != 3 {
                    return Err(Error::Parse(format!("bad entry line `{line}`")));
                }
                let (i, j) = (parse_usize(fields[0])?, parse_usize(fields[1])?);
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(Error::Parse(format!("entry ({i}, {j}) out of range")));
                }
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad value `{}`: {e}", fields[2])))?;
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (m, n, nnz) = size.ok_or_else(|| Error::Parse("missing size line".into()))?;
    if triplets.len() != nnz {
        return Err(Error::Parse(format!(
            "expected {nnz} entries, found {}",
            triplets.len()
        )));
    }
    SparseMatrix::from_triplets(m, n, &triplets)
}

/// Magic bytes opening a binary vector file.
pub const VECTOR_MAGIC: &[u8; 8] = b"LPVEC\x00\x01\x00";

/// `VECTOR_MAGIC`, then the length as `u64` LE, then the values as `f64` LE.
pub fn write_vector<W: Write>(v: &[f64], mut w: W) -> Result<()> {
    w.write_all(VECTOR_MAGIC)?;
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != VECTOR_MAGIC {
        return Err(Error::Parse("bad vector file magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse("trailing bytes after vector data".into()));
    }
    Ok(out)
}

/// Binary PGM (P5) bytes of a row-major `width x height` image, linearly
/// mapping `[min, max]` to `[0, 255]`. Constant images map to 0, as do
/// non-finite pixels.
pub fn pgm_bytes(img: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if img.len() != width * height {
        return Err(Error::Dimension(format!(
            "image of {} pixels is not {width}x{height}",
            img.len()
        )));
    }
    let finite = img.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let span = hi - lo;
    out.extend(img.iter().map(|&v| {
        if !v.is_finite() || !(span > 0.0) {
            0u8
        } else {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }));
    Ok(out)
}

pub fn write_pgm<W: Write>(img: &[f64], width: usize, height: usize, mut w: W) -> Result<()> {
    w.write_all(&pgm_bytes(img, width, height)?)?;
    Ok(())
}
