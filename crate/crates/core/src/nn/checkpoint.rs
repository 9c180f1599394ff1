//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `PRBGAN01`, then for every tensor its rank as a
//! little-endian `u64`, each extent as a little-endian `u64`, and the payload
//! as little-endian `f64` values in row-major order. Tensors run until EOF.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ParamSet;

pub const MAGIC: &[u8; 8] = b"PRBGAN01";

pub fn write_tensors<S: Scalar, W: Write>(mut w: W, tensors: &[&Tensor<S>]) -> Result<()> {
    w.write_all(MAGIC)?;
    for t in tensors {
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_tensors<S: Scalar, R: Read>(mut r: R) -> Result<Vec<Tensor<S>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 8];
        match r.read_exact(&mut first) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let rank = u64::from_le_bytes(first) as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated payload: {e}")))?;
            data.push(S::of(f64::from_le_bytes(buf)));
        }
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn save<S: Scalar, P: ParamSet<S>>(params: &P, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_tensors(f, &params.tensors())
}

/// Loads into a parameter set of known layout; shapes must agree exactly.
pub fn load_into<S: Scalar, P: ParamSet<S>>(params: &mut P, path: &Path) -> Result<()> {
    let tensors: Vec<Tensor<S>> = read_tensors(BufReader::new(File::open(path)?))?;
    let mut slots = params.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, file holds {}",
            slots.len(),
            tensors.len()
        )));
    }
    for (slot, t) in slots.iter().zip(&tensors) {
        if slot.shape() != t.shape() {
            return Err(Error::Dimension {
                op: "checkpoint",
                lhs: slot.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    for (slot, t) in slots.iter_mut().zip(tensors) {
        **slot = t;
    }
    Ok(())
}
