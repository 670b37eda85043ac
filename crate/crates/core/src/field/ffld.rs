//! Binary field files: "FFLD", u16 version, u16 dim, u32 N, f64 q, then the values,
//! all little-endian.

use std::io::{Read, Write};

use super::grid::{GridSpec, WeightedMeasure};
use super::vector::VectorField;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFLD";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 2 + 4 + 8;

pub fn write_ffld<W: Write>(w: &mut W, v: &VectorField, mu: WeightedMeasure) -> Result<()> {
    let g = v.grid();
    let mut buf = Vec::with_capacity(HEADER + v.values().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.dim as u16).to_le_bytes());
    buf.extend_from_slice(&(g.cells_per_axis as u32).to_le_bytes());
    buf.extend_from_slice(&mu.q.to_le_bytes());
    for x in v.values() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

pub fn parse_ffld(bytes: &[u8]) -> Result<(VectorField, WeightedMeasure)> {
    if bytes.len() < HEADER {
        return Err(fmt_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fmt_err(4, format!("unsupported version {version}")));
    }
    let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let grid = GridSpec::new(dim, n).map_err(|e| fmt_err(6, e.to_string()))?;
    let q = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let mu = WeightedMeasure::new(q).map_err(|e| fmt_err(12, e.to_string()))?;
    let count = grid
        .num_cells()
        .checked_mul(dim)
        .ok_or_else(|| fmt_err(8, "grid too large"))?;
    let expected = HEADER + count * 8;
    if bytes.len() != expected {
        return Err(fmt_err(bytes.len().min(expected), format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (i, c) in bytes[HEADER..].chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(c.try_into().unwrap());
        if !x.is_finite() {
            return Err(fmt_err(HEADER + 8 * i, "nonfinite value"));
        }
        values.push(x);
    }
    Ok((VectorField::from_values(grid, values)?, mu))
}

pub fn read_ffld<R: Read>(r: &mut R) -> Result<(VectorField, WeightedMeasure)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_ffld(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::generators::gen_divfree;

    #[test]
    fn roundtrip_bitwise() {
        let v = gen_divfree(9, 3, 6).unwrap();
        let mu = WeightedMeasure::new(-0.25).unwrap();
        let mut buf = Vec::new();
        write_ffld(&mut buf, &v, mu).unwrap();
        assert_eq!(&buf[..4], b"FFLD");
        let (w, mu2) = parse_ffld(&buf).unwrap();
        assert_eq!(mu2.q.to_bits(), mu.q.to_bits());
        assert_eq!(w.grid(), v.grid());
        assert!(w.values().iter().zip(v.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        write_ffld(&mut again, &w, mu2).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn malformed_reports_offset() {
        let v = gen_divfree(1, 2, 4).unwrap();
        let mut buf = Vec::new();
        write_ffld(&mut buf, &v, WeightedMeasure::lebesgue()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(parse_ffld(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_ffld(&buf[..buf.len() - 3]), Err(Error::Format { .. })));
        let mut nan = buf.clone();
        nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(parse_ffld(&nan), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(parse_ffld(&buf[..5]), Err(Error::Format { offset: 5, .. })));
    }
}
