//! Golden forward record: a flat binary array with a small self-describing
//! header, used to pin a seeded forward pass against refactors.
//!
//! Layout (little-endian): 8-byte magic, u32 version, u64 seed, u32 ndim,
//! u32 dims, 32-byte SHA-256 of the payload, then the f64 payload in
//! row-major order.

use std::io::{self, Read};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"TSGOLD01";
const VERSION: u32 = 1;

fn payload_bytes(arr: &ArrayD<f64>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(arr.len() * 8);
    for v in arr.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn write_golden(path: &Path, seed: u64, arr: &ArrayD<f64>) -> io::Result<()> {
    let payload = payload_bytes(arr);
    let digest = Sha256::digest(&payload);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&(arr.ndim() as u32).to_le_bytes());
    for &d in arr.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&digest);
    out.extend_from_slice(&payload);
    std::fs::write(path, out)
}

pub fn read_golden(path: &Path) -> io::Result<(u64, ArrayD<f64>)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());

    let mut cursor = 0usize;
    let mut take = |n: usize| -> io::Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(bad("truncated golden record"));
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };

    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    let stored_digest: [u8; 32] = take(32)?.try_into().unwrap();
    let count: usize = dims.iter().product();
    let payload = take(count * 8)?;
    let digest = Sha256::digest(payload);
    if digest[..] != stored_digest {
        return Err(bad("checksum mismatch"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let arr = ArrayD::from_shape_vec(IxDyn(&dims), values)
        .map_err(|_| bad("shape/payload mismatch"))?;
    Ok((seed, arr))
}

/// Atomic variant of [`write_golden`]: write next to the target, then rename.
pub fn write_golden_atomic(path: &Path, seed: u64, arr: &ArrayD<f64>) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    write_golden(&tmp, seed, arr)?;
    std::fs::rename(&tmp, path)
}

/// Convenience for text dumps of header info.
pub fn describe(path: &Path) -> io::Result<String> {
    let (seed, arr) = read_golden(path)?;
    let mut out = String::new();
    let _ = write!(
        out,
        "seed={seed} shape={:?} len={} checksum=ok",
        arr.shape(),
        arr.len()
    );
    Ok(out)
}

use std::fmt::Write as _;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("golden.bin");
        let arr = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |idx| {
            (idx[0] * 100 + idx[1] * 10 + idx[2]) as f64 * 0.1 - 0.7
        });
        write_golden(&path, 99, &arr).unwrap();
        let (seed, back) = read_golden(&path).unwrap();
        assert_eq!(seed, 99);
        assert_eq!(arr.shape(), back.shape());
        for (a, b) in arr.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("golden.bin");
        let arr = ArrayD::from_elem(IxDyn(&[4]), 1.5);
        write_golden(&path, 1, &arr).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(read_golden(&path).is_err());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("golden.bin");
        std::fs::write(&path, b"NOTGOLD!rest").unwrap();
        assert!(read_golden(&path).is_err());
    }
}
