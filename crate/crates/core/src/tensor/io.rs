use std::io::{Read, Write};

use super::{numel_of, Result, Tensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"HSTN";

/// Writes `t` as: magic `HSTN`, u32 rank, u64 extents, f64 payload; all
/// little-endian.
pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    if rank == 0 || rank > 8 {
        return Err(TensorError::Format(format!("unsupported rank {rank}")));
    }
    let mut b8 = [0u8; 8];
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut b8)?;
        shape.push(usize::try_from(u64::from_le_bytes(b8)).map_err(|e| TensorError::Format(e.to_string()))?);
    }
    let n = numel_of(&shape);
    if n == 0 || n > (1 << 32) {
        return Err(TensorError::Format(format!("implausible shape {shape:?}")));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Tensor::from_vec(&shape, data)
}
