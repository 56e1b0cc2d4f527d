//! Binary field snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "SPFLD1"                6 bytes
//! d                              u64
//! grid   n1 n2 n3                3 x u64
//! periods                        d x 3 x f64
//! trunc                          (3 - d) x f64
//! samples (re, im), row-major    n1 n2 n3 x 2 x f64
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Cell;
use crate::persist::write_atomic;
use crate::spectral::ScalarField;

pub const MAGIC: &[u8; 6] = b"SPFLD1";

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let cell = field.cell();
    let mut out = Vec::with_capacity(6 + 8 * (4 + 9 + 2 * field.len()));
    out.extend_from_slice(MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u64::<LittleEndian>(cell.dim() as u64).unwrap();
    for n in cell.grid() {
        out.write_u64::<LittleEndian>(n as u64).unwrap();
    }
    for p in cell.periods() {
        for c in p {
            out.write_f64::<LittleEndian>(*c).unwrap();
        }
    }
    for l in cell.trunc() {
        out.write_f64::<LittleEndian>(*l).unwrap();
    }
    for v in field.values() {
        out.write_f64::<LittleEndian>(v.re).unwrap();
        out.write_f64::<LittleEndian>(v.im).unwrap();
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField> {
    let bad = |what: &str| Error::BadSnapshot(what.to_string());
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let rd_u = |r: &mut Cursor<&[u8]>| r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"));
    let d = rd_u(&mut r)? as usize;
    if !(1..=3).contains(&d) {
        return Err(bad("dimension out of range"));
    }
    let grid = [rd_u(&mut r)? as usize, rd_u(&mut r)? as usize, rd_u(&mut r)? as usize];
    let rd_f = |r: &mut Cursor<&[u8]>| r.read_f64::<LittleEndian>().map_err(|_| bad("truncated header"));
    let mut periods = Vec::with_capacity(d);
    for _ in 0..d {
        periods.push([rd_f(&mut r)?, rd_f(&mut r)?, rd_f(&mut r)?]);
    }
    let mut trunc = Vec::with_capacity(3 - d);
    for _ in d..3 {
        trunc.push(rd_f(&mut r)?);
    }
    let cell = Cell::new(d, &periods, &trunc, grid)?;
    let n = cell.len();
    let remaining = bytes.len() - r.position() as usize;
    if remaining != 16 * n {
        return Err(bad("sample block length does not match grid"));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let re = rd_f(&mut r)?;
        let im = rd_f(&mut r)?;
        values.push(Complex64::new(re, im));
    }
    ScalarField::new(&cell, values)
}

pub fn write(path: &Path, field: &ScalarField) -> Result<()> {
    write_atomic(path, &encode(field))
}

pub fn read(path: &Path) -> Result<ScalarField> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let cell = Cell::new(2, &[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], &[3.0], [2, 2, 4]).unwrap();
        let f = ScalarField::from_fn(&cell, |x| Complex64::new(x[0], x[2]));
        let bytes = encode(&f);
        assert_eq!(&bytes[..6], b"SPFLD1");
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[30..38].try_into().unwrap()), 4);
        // trunc follows the 2 x 3 period block
        let t = f64::from_le_bytes(bytes[38 + 48..38 + 56].try_into().unwrap());
        assert_eq!(t, 3.0);
        assert_eq!(bytes.len(), 6 + 8 * 4 + 8 * 6 + 8 + 16 * 16);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.cell(), f.cell());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode(b"NOPE"), Err(Error::BadSnapshot(_))));
        let cell = Cell::unit_torus(2).unwrap();
        let mut bytes = encode(&ScalarField::zeros(&cell));
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::BadSnapshot(_))));
    }
}
