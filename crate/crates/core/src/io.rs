//! Binary field dumps and spectrum CSV.
//!
//! Field layout (little endian): magic `CHSF`, format version `u32`, `d`, `n`,
//! dealias numerator and denominator (all `u32`), then `n^d` physical values
//! as `f64` in row-major node order.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::spectral::{SpectralError, SpectralField, TorusGrid};

pub const FIELD_MAGIC: &[u8; 4] = b"CHSF";
pub const FIELD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldIoError {
    #[error("not a field file (bad magic)")]
    BadMagic,
    #[error("unsupported field format version {0}")]
    Version(u32),
    #[error("field file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Grid(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_field(u: &SpectralField) -> Vec<u8> {
    let g = u.grid();
    let (num, den) = g.dealias();
    let mut buf = Vec::with_capacity(24 + 8 * g.len());
    buf.extend_from_slice(FIELD_MAGIC);
    for v in [FIELD_VERSION, g.d() as u32, g.n() as u32, num, den] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for x in u.to_physical() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_field(bytes: &[u8]) -> Result<SpectralField, FieldIoError> {
    if bytes.len() < 24 {
        return Err(FieldIoError::Truncated { expected: 24, found: bytes.len() });
    }
    if &bytes[..4] != FIELD_MAGIC {
        return Err(FieldIoError::BadMagic);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FIELD_VERSION {
        return Err(FieldIoError::Version(version));
    }
    let grid = TorusGrid::with_dealias(word(1) as usize, word(2) as usize, (word(3), word(4)))?;
    let expected = 24 + 8 * grid.len();
    if bytes.len() != expected {
        return Err(FieldIoError::Truncated { expected, found: bytes.len() });
    }
    let values: Vec<f64> = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(SpectralField::from_physical(grid, &values)?)
}

pub fn write_field(path: &Path, u: &SpectralField) -> Result<(), FieldIoError> {
    std::fs::write(path, encode_field(u))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<SpectralField, FieldIoError> {
    decode_field(&std::fs::read(path)?)
}

/// One row per stored coefficient: wavevector components, real part, imaginary part.
pub fn spectrum_csv(u: &SpectralField) -> String {
    let g = u.grid();
    let mut out = String::new();
    for i in 1..=g.d() {
        let _ = write!(out, "k{i},");
    }
    out.push_str("re,im\n");
    for (idx, c) in u.coeffs().iter().enumerate() {
        let Some(k) = g.wavevector(idx) else { continue };
        for ki in &k {
            let _ = write!(out, "{ki},");
        }
        let _ = writeln!(out, "{:.17e},{:.17e}", c.re, c.im);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = SpectralField::from_fn(g, |x| (x[0] + 2.0 * x[1]).sin() + 0.3 * x[0].cos());
        let bytes = encode_field(&u);
        assert_eq!(&bytes[..4], b"CHSF");
        assert_eq!(bytes.len(), 24 + 8 * 256);
        let v = decode_field(&bytes).unwrap();
        assert_eq!(v.grid(), g);
        assert!(u.distance(&v, 0) < 1e-15);
    }

    #[test]
    fn rejects_corrupt_headers() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mut bytes = encode_field(&SpectralField::constant(g, 1.0));
        assert!(matches!(decode_field(&bytes[..30]), Err(FieldIoError::Truncated { .. })));
        bytes[4] = 9;
        assert!(matches!(decode_field(&bytes), Err(FieldIoError::Version(9))));
        bytes[0] = b'X';
        assert!(matches!(decode_field(&bytes), Err(FieldIoError::BadMagic)));
    }

    #[test]
    fn spectrum_lists_sine_coefficients() {
        let g = TorusGrid::new(1, 8).unwrap();
        let csv = spectrum_csv(&SpectralField::trig(g, &[1], false, 2.0));
        assert!(csv.starts_with("k1,re,im\n"));
        let row = csv.lines().find(|l| l.starts_with("1,")).unwrap();
        let im: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((im + 1.0).abs() < 1e-15);
    }
}
