//! File formats.
//!
//! Covariance, text: a header line `FCOV-TEXT N` followed by `N²` lines
//! `i j re im` in row-major order, 0-based indices, 17 significant digits.
//!
//! Covariance, binary: `FCOV1`, little-endian `u32` N, then `2N²`
//! little-endian `f64` in full-vectorization order (real part column-major,
//! then imaginary part column-major).
//!
//! Conversion operator: `FCNV1`, little-endian `u32` rows and `u32` columns,
//! row-major `f64` entries, then UTF-8 `key=value` provenance lines.

use std::fs;
use std::path::Path;

use crate::conversion::{ConversionOperator, Provenance, VectorizationMode};
use crate::covariance::{full_devectorize, full_vectorize, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::{CMatrix, Complex, RMatrix};

const TEXT_MAGIC: &str = "FCOV-TEXT";
const BINARY_MAGIC: &[u8] = b"FCOV1";
const OPERATOR_MAGIC: &[u8] = b"FCNV1";

pub fn covariance_to_text(r: &CMatrix) -> String {
    let n = r.nrows();
    let mut out = String::with_capacity(64 * n * n + 16);
    out.push_str(&format!("{TEXT_MAGIC} {n}\n"));
    for i in 0..n {
        for j in 0..n {
            let z = r[(i, j)];
            out.push_str(&format!("{i} {j} {:.16e} {:.16e}\n", z.re, z.im));
        }
    }
    out
}

pub fn covariance_from_text(text: &str) -> Result<CMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty covariance file".into()))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(TEXT_MAGIC) {
        return Err(Error::Format(format!("missing {TEXT_MAGIC} header")));
    }
    let n: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Format("bad matrix size in header".into()))?;
    let mut m = CMatrix::zeros(n, n);
    let mut seen = vec![false; n * n];
    for (ln, line) in lines {
        let bad = || Error::Format(format!("line {}: expected `i j re im`", ln + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let j: usize = f[1].parse().map_err(|_| bad())?;
        let re: f64 = f[2].parse().map_err(|_| bad())?;
        let im: f64 = f[3].parse().map_err(|_| bad())?;
        if i >= n || j >= n {
            return Err(Error::Format(format!("line {}: index out of range", ln + 1)));
        }
        if std::mem::replace(&mut seen[i * n + j], true) {
            return Err(Error::Format(format!("line {}: duplicate entry ({i}, {j})", ln + 1)));
        }
        m[(i, j)] = Complex::new(re, im);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Format("missing matrix entries".into()));
    }
    Ok(m)
}

pub fn covariance_to_binary(r: &CMatrix) -> Vec<u8> {
    let v = full_vectorize(r);
    let mut out = Vec::with_capacity(9 + 8 * v.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(r.nrows() as u32).to_le_bytes());
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

fn read_f64s(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    if bytes.len() < 8 * count {
        return Err(Error::Format("truncated data".into()));
    }
    Ok(bytes[..8 * count]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn covariance_from_binary(bytes: &[u8]) -> Result<CMatrix> {
    if !bytes.starts_with(BINARY_MAGIC) {
        return Err(Error::Format("missing FCOV1 magic".into()));
    }
    let n = read_u32(bytes, 5)? as usize;
    let data = &bytes[9..];
    if data.len() != 16 * n * n {
        return Err(Error::Format(format!("expected {} data bytes, found {}", 16 * n * n, data.len())));
    }
    full_devectorize(&crate::RVector::from_vec(read_f64s(data, 2 * n * n)?), n)
}

/// Reads either covariance format, detected from the leading bytes.
pub fn read_covariance(path: &Path) -> Result<CovarianceMatrix> {
    let bytes = fs::read(path)?;
    let m = if bytes.starts_with(BINARY_MAGIC) {
        covariance_from_binary(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format("covariance file is neither text nor FCOV1".into()))?;
        covariance_from_text(text)?
    };
    CovarianceMatrix::new(m)
}

/// Writes the text format, or the binary one when the extension is `.bin`.
pub fn write_covariance(path: &Path, r: &CMatrix) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        fs::write(path, covariance_to_binary(r))?;
    } else {
        fs::write(path, covariance_to_text(r))?;
    }
    Ok(())
}

pub fn operator_to_bytes(op: &ConversionOperator) -> Vec<u8> {
    let (rows, cols) = op.matrix.shape();
    let mut out = Vec::with_capacity(13 + 8 * rows * cols + 256);
    out.extend_from_slice(OPERATOR_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&op.matrix[(i, j)].to_le_bytes());
        }
    }
    let p = &op.provenance;
    let grid = p.grid_shape.map_or_else(|| "custom".to_string(), |(a, z)| format!("{a}x{z}"));
    let footer = format!(
        "geometry_hash={:016x}\nul_hz={:e}\ndl_hz={:e}\ngrid={grid}\ngrid_hash={:016x}\ntruncation={:e}\nmode={}\n",
        p.geometry_hash,
        p.ul_hz,
        p.dl_hz,
        p.grid_hash,
        p.truncation,
        p.mode.as_str()
    );
    out.extend_from_slice(footer.as_bytes());
    out
}

pub fn operator_from_bytes(bytes: &[u8]) -> Result<ConversionOperator> {
    if !bytes.starts_with(OPERATOR_MAGIC) {
        return Err(Error::Format("missing FCNV1 magic".into()));
    }
    let rows = read_u32(bytes, 5)? as usize;
    let cols = read_u32(bytes, 9)? as usize;
    let data = read_f64s(&bytes[13..], rows * cols)?;
    let matrix = RMatrix::from_row_slice(rows, cols, &data);
    let footer = std::str::from_utf8(&bytes[13 + 8 * rows * cols..]).map_err(|_| Error::Format("provenance is not UTF-8".into()))?;

    let get = |key: &str| -> Result<String> {
        footer
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("provenance lacks `{key}`")))
    };
    let hex = |s: String| u64::from_str_radix(&s, 16).map_err(|_| Error::Format(format!("bad hash `{s}`")));
    let float = |s: String| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
    let grid = get("grid")?;
    let grid_shape = if grid == "custom" {
        None
    } else {
        let (a, z) = grid.split_once('x').ok_or_else(|| Error::Format(format!("bad grid `{grid}`")))?;
        Some((
            a.parse().map_err(|_| Error::Format(format!("bad grid `{grid}`")))?,
            z.parse().map_err(|_| Error::Format(format!("bad grid `{grid}`")))?,
        ))
    };
    let mode = get("mode")?;
    let provenance = Provenance {
        geometry_hash: hex(get("geometry_hash")?)?,
        ul_hz: float(get("ul_hz")?)?,
        dl_hz: float(get("dl_hz")?)?,
        grid_shape,
        grid_hash: hex(get("grid_hash")?)?,
        truncation: float(get("truncation")?)?,
        mode: VectorizationMode::parse(&mode).ok_or_else(|| Error::Format(format!("bad mode `{mode}`")))?,
    };
    Ok(ConversionOperator { matrix, provenance })
}

pub fn write_operator(path: &Path, op: &ConversionOperator) -> Result<()> {
    fs::write(path, operator_to_bytes(op))?;
    Ok(())
}

pub fn read_operator(path: &Path) -> Result<ConversionOperator> {
    operator_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMatrix {
        CMatrix::from_fn(3, 3, |i, j| Complex::new((i * 3 + j) as f64 / 7.0, i as f64 - j as f64 + 0.1))
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = sample();
        let text = covariance_to_text(&m);
        assert!(text.starts_with("FCOV-TEXT 3\n0 0 "));
        assert_eq!(text.lines().count(), 10);
        assert_eq!(covariance_from_text(&text).unwrap(), m);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let m = sample();
        let bytes = covariance_to_binary(&m);
        assert_eq!(&bytes[..5], b"FCOV1");
        assert_eq!(bytes.len(), 9 + 16 * 9);
        assert_eq!(covariance_from_binary(&bytes).unwrap(), m);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(covariance_from_text("").is_err());
        assert!(covariance_from_text("FCOV-TEXT 1\n").is_err());
        assert!(covariance_from_text("FCOV-TEXT 1\n0 0 1.0\n").is_err());
        assert!(covariance_from_text("FCOV-TEXT 1\n1 0 1.0 0.0\n").is_err());
        assert!(covariance_from_text("NOPE 1\n0 0 1.0 0.0\n").is_err());
    }

    #[test]
    fn operator_round_trip_is_exact() {
        let op = ConversionOperator {
            matrix: RMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.3) * (j as f64 - 1.7) / 3.0),
            provenance: Provenance {
                geometry_hash: 0xdead_beef_0123_4567,
                ul_hz: 1.8e9,
                dl_hz: 1.9e9,
                grid_shape: Some((120, 60)),
                grid_hash: 42,
                truncation: 1e-8,
                mode: VectorizationMode::Structured,
            },
        };
        let back = operator_from_bytes(&operator_to_bytes(&op)).unwrap();
        assert_eq!(back, op);
    }
}
