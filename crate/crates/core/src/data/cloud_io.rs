use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Binary tensor file: this magic, `u64` rank, `rank` `u64` extents, then
/// the values as little-endian `f64`.
pub const CLOUD_MAGIC: &[u8; 8] = b"SFCLOUD\0";

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&(t.rank() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * t.len());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let bad = |msg: String| Error::Data(format!("cloud file: {msg}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(format!("missing header ({e})")))?;
    if &magic != CLOUD_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut word).map_err(|e| bad(format!("truncated header ({e})")))?;
        Ok(u64::from_le_bytes(word))
    };
    let rank = read_u64(r)?;
    if rank > 8 {
        return Err(bad(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("shape {shape:?} overflows")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != 8 * len {
        return Err(bad(format!("expected {} data bytes for shape {shape:?}, found {}", 8 * len, bytes.len())));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_tensor(&mut f, t).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    read_tensor(&mut f)
}
