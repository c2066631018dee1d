//! Binary tensor records.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    16 bytes  "BPLAB-TENSOR" padded with NUL
//! rank     u32
//! extents  rank x u32
//! payload  prod(extents) x f64
//! ```
//!
//! A file may hold several records back to back.

use std::io::{Read, Write};
use std::path::Path;

use bplab_core::Tensor;

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 16] = *b"BPLAB-TENSOR\0\0\0\0";
const MAX_RANK: u32 = 4;

pub fn write_tensor(out: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        out.write_all(&(e as u32).to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    for t in tensors {
        write_tensor(&mut buf, t).expect("writing to memory");
    }
    buf
}

/// Reads every record in `bytes`; `origin` only labels errors.
pub fn decode_tensors(bytes: &[u8], origin: &Path) -> Result<Vec<Tensor>> {
    let mut cur = bytes;
    let mut out = Vec::new();
    while !cur.is_empty() {
        out.push(read_tensor(&mut cur, origin)?);
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read, origin: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| LabError::format(origin, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor(r: &mut impl Read, origin: &Path) -> Result<Tensor> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)
        .map_err(|_| LabError::format(origin, "truncated magic"))?;
    if magic != MAGIC {
        return Err(LabError::format(origin, "bad magic, not a tensor record"));
    }
    let rank = read_u32(r, origin)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(LabError::format(origin, format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r, origin).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n > 0 && n <= (1 << 31))
        .ok_or_else(|| LabError::format(origin, format!("implausible extents {shape:?}")))?;
    let mut payload = vec![0u8; len * 8];
    r.read_exact(&mut payload)
        .map_err(|_| LabError::format(origin, "truncated payload"))?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| LabError::format(origin, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_as_documented() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let bytes = encode_tensors(std::slice::from_ref(&t));
        assert_eq!(bytes.len(), 16 + 4 + 2 * 4 + 2 * 8);
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[28..36], &1.0f64.to_le_bytes());
        assert_eq!(decode_tensors(&bytes, Path::new("t")).unwrap(), vec![t]);
    }

    #[test]
    fn corrupt_records_are_rejected() {
        let t = Tensor::from_slice(&[1.0, 2.0, 3.0]);
        let mut bytes = encode_tensors(&[t]);
        let origin = Path::new("t");
        assert!(decode_tensors(&bytes[..bytes.len() - 3], origin).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_tensors(&bytes, origin),
            Err(LabError::Format { .. })
        ));
    }
}
