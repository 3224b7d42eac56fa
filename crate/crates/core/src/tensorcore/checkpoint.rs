//! Binary tensor-block serialization.
//!
//! Layout (little-endian): 4 magic bytes, u32 version, u32 tensor count,
//! then per tensor a u32 rank, u32 dims, and the f64 payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TCKP";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[&Tensor]) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(path, "unexpected end of file"))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

/// Read a tensor block; `path` is used only for error messages.
pub fn read_tensors<R: Read>(mut r: R, path: &Path) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic: expected {MAGIC:?}, found {magic:?}"),
        ));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version: expected {VERSION}, found {version}"),
        ));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut r, path)? as usize;
        if rank > 8 {
            return Err(Error::format(path, format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in &mut data {
            read_exact(&mut r, &mut buf, path)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push(Tensor { shape, data });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.1, f64::MIN_POSITIVE, 1e300, -0.0])
            .unwrap();
        let b = Tensor::from_vec(&[4], vec![0.3, 0.7, -1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&a, &b]).unwrap();
        let back = read_tensors(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].shape, a.shape);
        assert_eq!(back[1].shape, b.shape);
        // Bitwise, not just approximate.
        for (x, y) in back[0].data.iter().zip(&a.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corrupted_magic_is_rejected_with_both_values() {
        let t = Tensor::zeros(&[2]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        buf[0] = b'X';
        let err = read_tensors(&buf[..], Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected") && msg.contains("found"), "{msg}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let t = Tensor::from_vec(&[8], vec![1.0; 8]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        buf.truncate(buf.len() - 5);
        let err = read_tensors(&buf[..], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("unexpected end of file"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let t = Tensor::zeros(&[1]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[&t]).unwrap();
        buf[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = read_tensors(&buf[..], Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("99") && msg.contains('1'), "{msg}");
    }
}
