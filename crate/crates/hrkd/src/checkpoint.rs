//! Self-describing binary checkpoints.
//!
//! Layout, byte-exact (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "HRKDCKPT"
//! version    u32       1
//! digest     32 bytes  SHA-256 of the owning config's canonical JSON
//! n_entries  u32
//! entry*     n_entries of:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x f64 (IEEE-754 bits, little-endian)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use hrkd_core::params::ParamSet;
use hrkd_core::tensor::Tensor;

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 8] = *b"HRKDCKPT";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, digest: &[u8; 32], params: &ParamSet) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(digest)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for entry in params.entries() {
        let name = entry.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(entry.value.shape.len() as u32).to_le_bytes())?;
        for &dim in &entry.value.shape {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in &entry.value.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<([u8; 32], ParamSet)> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?,
    );
    let bad = |what: &str| HarnessError::Format(format!("{}: {what}", path.display()));

    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut digest = [0u8; 32];
    file.read_exact(&mut digest).map_err(|_| bad("truncated digest"))?;
    file.read_exact(&mut u32buf).map_err(|_| bad("truncated entry count"))?;
    let n_entries = u32::from_le_bytes(u32buf) as usize;

    let mut params = ParamSet::new();
    for i in 0..n_entries {
        let entry_err = |what: &str| HarnessError::Format(format!(
            "{}: entry {i}: {what}", path.display()
        ));
        file.read_exact(&mut u32buf).map_err(|_| entry_err("truncated name length"))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name).map_err(|_| entry_err("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| entry_err("name is not UTF-8"))?;
        file.read_exact(&mut u32buf).map_err(|_| entry_err("truncated ndim"))?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut u64buf = [0u8; 8];
        for _ in 0..ndim {
            file.read_exact(&mut u64buf).map_err(|_| entry_err("truncated dims"))?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            file.read_exact(&mut u64buf).map_err(|_| entry_err("truncated values"))?;
            data.push(f64::from_le_bytes(u64buf));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| entry_err(&format!("invalid tensor: {e}")))?;
        params
            .push(name, tensor)
            .map_err(|e| entry_err(&format!("{e}")))?;
    }
    Ok((digest, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrkd_core::params::ParamInit;

    #[test]
    fn round_trip_preserves_bits_and_order() {
        let mut init = ParamInit::new(3);
        let mut params = ParamSet::new();
        params.push("b.second", init.normal_tensor(vec![2, 3], 1.0)).unwrap();
        params.push("a.first", init.normal_tensor(vec![4], 1.0)).unwrap();
        let digest = [7u8; 32];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save(&path, &digest, &params).unwrap();
        let (got_digest, got) = load(&path).unwrap();
        assert_eq!(got_digest, digest);
        assert_eq!(got, params);
        assert_eq!(got.entries()[0].name, "b.second");
    }

    #[test]
    fn save_is_byte_deterministic() {
        let mut init = ParamInit::new(4);
        let mut params = ParamSet::new();
        params.push("w", init.normal_tensor(vec![8, 8], 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&a, &[1; 32], &params).unwrap();
        save(&b, &[1; 32], &params).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(HarnessError::Format(_))));
    }
}
