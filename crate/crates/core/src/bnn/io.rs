//! Versioned little-endian weight file.
//!
//! ```text
//! magic "GMPC-BNN" | u32 version | u32 hidden | u32 t_hist | u32 t_fut
//! f64 dropout | f64 meal_scale | f64 dose_scale | u32 tensor count
//! per tensor: u32 ndims | u32 dims[ndims] | f64 data (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, ModelWeights, Normalization};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GMPC-BNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_weights<W: Write>(w: &ModelWeights, out: &mut W) -> Result<()> {
    out.write_all(MAGIC)?;
    for v in [FORMAT_VERSION, w.arch.hidden as u32, w.arch.t_hist as u32, w.arch.t_fut as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [w.arch.dropout, w.norm.meal_scale, w.norm.dose_scale] {
        out.write_all(&v.to_le_bytes())?;
    }
    let layout = w.layout();
    let dims = w.arch.tensor_dims();
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for (range, d) in layout.tensors().iter().zip(&dims) {
        out.write_all(&(d.len() as u32).to_le_bytes())?;
        for &x in d {
            out.write_all(&(x as u32).to_le_bytes())?;
        }
        for v in &w.params[range.clone()] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_weights<R: Read>(input: &mut R) -> Result<ModelWeights> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a GMPC-BNN weight file".into()));
    }
    let version = read_u32(input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let hidden = read_u32(input)? as usize;
    let t_hist = read_u32(input)? as usize;
    let t_fut = read_u32(input)? as usize;
    let dropout = read_f64(input)?;
    let norm = Normalization {
        meal_scale: read_f64(input)?,
        dose_scale: read_f64(input)?,
    };
    let arch = Architecture { hidden, t_hist, t_fut, dropout };
    let mut w = ModelWeights::zeros(arch, norm).map_err(|e| Error::Format(e.to_string()))?;
    let layout = w.layout();
    let expected = arch.tensor_dims();
    let count = read_u32(input)? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", expected.len())));
    }
    for (range, want) in layout.tensors().iter().zip(&expected) {
        let nd = read_u32(input)? as usize;
        let dims = (0..nd).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != want {
            return Err(Error::Format(format!("tensor dims {dims:?} do not match {want:?}")));
        }
        for p in &mut w.params[range.clone()] {
            *p = read_f64(input)?;
        }
    }
    if w.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Format("non-finite parameter in weight file".into()));
    }
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_weights(w, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    read_weights(&mut BufReader::new(File::open(path)?))
}
