//! Flat binary container of named tensors.
//!
//! Layout: `b"PGCK"`, version byte, then until EOF one record per tensor:
//! `u32` name length, UTF-8 name, `u32` rank, `u32` dims, little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGCK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", bytes[4])));
    }
    let mut cur = &bytes[5..];
    let mut out = Vec::new();
    while !cur.is_empty() {
        let n = read_u32(&mut cur)? as usize;
        if n > cur.len() {
            return Err(Error::Checkpoint("truncated name".into()));
        }
        let name = std::str::from_utf8(&cur[..n])
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        cur = &cur[n..];
        let rank = read_u32(&mut cur)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut cur).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        if count * 4 > cur.len() {
            return Err(Error::Checkpoint(format!("truncated values for {name}")));
        }
        let values = cur[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        cur = &cur[count * 4..];
        out.push(NamedTensor { name, shape, values });
    }
    Ok(out)
}

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let tensors: Vec<NamedTensor> = store
        .iter()
        .map(|p| NamedTensor {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, &tensors)?;
    w.flush()?;
    Ok(())
}

/// Load values into an existing store. Names and shapes must match exactly.
pub fn load<F: Real>(store: &mut ParamStore<F>, path: &Path) -> Result<()> {
    let tensors = read_tensors(&mut BufReader::new(File::open(path)?))?;
    load_from(store, tensors)
}

pub fn load_from<F: Real>(store: &mut ParamStore<F>, tensors: Vec<NamedTensor>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            store.len(),
            tensors.len()
        )));
    }
    for t in &tensors {
        let id = store
            .find(&t.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", t.name)))?;
        let p = store.get(id);
        if p.value.shape() != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match model shape {:?}",
                t.name,
                t.shape,
                p.value.shape()
            )));
        }
    }
    for t in tensors {
        let id = store.find(&t.name).expect("checked above");
        let p = store.get_mut(id);
        for (dst, &v) in p.value.data_mut().iter_mut().zip(&t.values) {
            *dst = F::lit(v as f64);
        }
    }
    Ok(())
}
