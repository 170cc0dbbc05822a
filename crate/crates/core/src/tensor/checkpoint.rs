//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "PKT1"                          magic + format version
//! count                           number of parameters
//! repeated count times:
//!   name_len, name bytes (UTF-8)
//!   rank, dims[rank]
//!   values                        prod(dims) little-endian f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"PKT1";

pub fn write_params<T: Scalar, W: Write>(store: &ParamStore<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    write_u32(&mut out, store.len())?;
    for (name, value) in store.iter() {
        write_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        write_u32(&mut out, value.rank())?;
        for d in value.shape() {
            write_u32(&mut out, *d)?;
        }
        let mut buf = Vec::with_capacity(value.numel() * 4);
        for v in value.data() {
            let v = v
                .to_f32()
                .ok_or_else(|| Error::Checkpoint("value not representable as f32".into()))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<T: Scalar, R: Read>(mut input: R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut input)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut input)?;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut input)?;
        let shape = (0..rank).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                T::from_f32(v).ok_or_else(|| Error::Checkpoint("value not representable".into()))
            })
            .collect::<Result<Vec<T>>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.insert(name, tensor)?;
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    write_params(store, BufWriter::new(File::create(path)?))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    read_params(BufReader::new(File::open(path)?))
}

fn write_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}
