//! Raster files: a 32-byte header, a geometry block, then little-endian
//! `f64` values in row-major order (last axis fastest).
//!
//! Header layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `ATWF` |
//! | 4..6  | format version (`u16`, currently 1) |
//! | 6..8  | dimension (`u16`) |
//! | 8..20 | cells per axis (`u32` x 3, unused axes are 1) |
//! | 20..28| spacing along axis 0 (`f64`) |
//! | 28..32| flags (`u32`, bit 0: values are a 0/1 indicator) |
//!
//! The geometry block holds `origin[3]` and `spacing[3]` as `f64`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AtwError, Result};
use crate::grid::{GridDomain, IndicatorField, ScalarField};

pub const MAGIC: &[u8; 4] = b"ATWF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
const FLAG_INDICATOR: u32 = 1;

/// Contents of a raster file.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub field: ScalarField,
    pub indicator: bool,
}

impl Raster {
    pub fn to_indicator(&self) -> Result<IndicatorField> {
        IndicatorField::new(&self.field.domain, self.field.values.iter().map(|v| *v > 0.5).collect())
    }
}

pub fn encode(dom: &GridDomain, values: &[f64], indicator: bool) -> Result<Vec<u8>> {
    if values.len() != dom.len() {
        return Err(AtwError::DomainMismatch);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 48 + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dom.dim() as u16).to_le_bytes());
    for a in 0..3 {
        let n = dom.cells().get(a).copied().unwrap_or(1);
        let n = u32::try_from(n).map_err(|_| AtwError::InvalidGrid("too many cells for a raster".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.extend_from_slice(&dom.spacing()[0].to_le_bytes());
    out.extend_from_slice(&(if indicator { FLAG_INDICATOR } else { 0 }).to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    for a in 0..3 {
        out.extend_from_slice(&dom.origin().get(a).copied().unwrap_or(0.0).to_le_bytes());
    }
    for a in 0..3 {
        out.extend_from_slice(&dom.spacing().get(a).copied().unwrap_or(1.0).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let bad = |m: &str| AtwError::Invalid(format!("raster: {m}"));
    if bytes.len() < HEADER_LEN + 48 || &bytes[..4] != MAGIC {
        return Err(bad("not an ATWF file"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if u16_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let dim = u16_at(6) as usize;
    if !(dim == 2 || dim == 3) {
        return Err(bad("dimension must be 2 or 3"));
    }
    let cells: Vec<usize> = (0..dim).map(|a| u32_at(8 + 4 * a) as usize).collect();
    let indicator = u32_at(28) & FLAG_INDICATOR != 0;
    let origin: Vec<f64> = (0..dim).map(|a| f64_at(HEADER_LEN + 8 * a)).collect();
    let spacing: Vec<f64> = (0..dim).map(|a| f64_at(HEADER_LEN + 24 + 8 * a)).collect();
    if spacing[0] != f64_at(20) {
        return Err(bad("header and geometry spacing disagree"));
    }
    let dom = GridDomain::from_spacing(&origin, &spacing, &cells)?;
    let payload = &bytes[HEADER_LEN + 48..];
    if payload.len() != 8 * dom.len() {
        return Err(bad("payload length does not match the cell count"));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Raster { field: ScalarField::new(&dom, values)?, indicator })
}

pub fn write_scalar(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    let bytes = encode(&f.domain, &f.values, false)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn write_indicator(path: impl AsRef<Path>, e: &IndicatorField) -> Result<()> {
    let bytes = encode(e.domain(), &e.as_scalar().values, true)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Plain-text greymap (`P2`) of a 2D field, top row first, values mapped
/// linearly onto `0..=255`. Non-finite values are drawn black.
pub fn to_pgm(f: &ScalarField) -> Result<String> {
    let dom = &f.domain;
    if dom.dim() != 2 {
        return Err(AtwError::Dimension { expected: 2, got: dom.dim() });
    }
    let (nx, ny) = (dom.cells()[0], dom.cells()[1]);
    let finite = f.values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(s, "P2\n# range {lo} {hi}\n{nx} {ny}\n255");
    // axis 0 is x, axis 1 is y; the image's first row is the largest y
    for j in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|i| {
                let v = f.values[dom.index([i, j, 0])];
                let g = if v.is_finite() { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
                g.to_string()
            })
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_32_bytes() {
        let dom = GridDomain::centered(2, 1.0, 8).unwrap();
        let b = encode(&dom, &vec![0.0; 64], false).unwrap();
        assert_eq!(&b[..4], b"ATWF");
        assert_eq!(b.len(), HEADER_LEN + 48 + 64 * 8);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 0.25);
    }

    #[test]
    fn round_trip_scalar_and_indicator() {
        let dom = GridDomain::new(&[-1.0, 0.5], &[3.0, 1.3], &[12, 7]).unwrap();
        let f = ScalarField::from_fn(&dom, |x| x[0] * 3.0 - x[1].sin());
        let r = decode(&encode(&dom, &f.values, false).unwrap()).unwrap();
        assert_eq!(r.field, f);
        assert!(!r.indicator);
        let e = IndicatorField::from_fn(&dom, |x| x[0].abs() < 0.4 && (x[1] - 1.1).abs() < 0.2).unwrap();
        let r = decode(&encode(&dom, &e.as_scalar().values, true).unwrap()).unwrap();
        assert!(r.indicator);
        assert_eq!(r.to_indicator().unwrap(), e);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let dom = GridDomain::centered(2, 1.0, 8).unwrap();
        let mut b = encode(&dom, &vec![1.0; 64], false).unwrap();
        b.pop();
        assert!(decode(&b).is_err());
    }

    #[test]
    fn pgm_dimensions() {
        let dom = GridDomain::new(&[0.0, 0.0], &[5.0, 4.0], &[5, 4]).unwrap();
        let f = ScalarField::from_fn(&dom, |x| x[1]);
        let p = to_pgm(&f).unwrap();
        let lines: Vec<&str> = p.lines().collect();
        assert_eq!(lines[2], "5 4");
        assert_eq!(lines[4], "255 255 255 255 255");
        assert_eq!(lines[7], "0 0 0 0 0");
    }
}
