//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "ACRF"
//! version    u32      1
//! dim        u32      embedding dimension
//! n_classes  u32      then n_classes strings
//! n_attrs    u32      then n_attrs strings
//! n_weights  u64      then n_weights f64 values
//! ```
//!
//! A string is a u32 byte length followed by UTF-8 bytes. Weights use the
//! in-memory layout of [`CrfModel`]. Files are not guaranteed to load across
//! format versions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::features::FeatureRegistry;
use super::model::CrfModel;
use crate::corpus::LabelScheme;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACRF";
const VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LE>().map_err(bad)? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(bad)?;
    String::from_utf8(buf).map_err(|_| Error::BadModelFile("invalid UTF-8".into()))
}

fn bad(e: std::io::Error) -> Error {
    Error::BadModelFile(e.to_string())
}

pub fn write_model_to(model: &CrfModel, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(model.dim() as u32)?;
    let classes = model.label_scheme().classes();
    w.write_u32::<LE>(classes.len() as u32)?;
    for c in classes {
        write_str(&mut w, c)?;
    }
    w.write_u32::<LE>(model.attributes().len() as u32)?;
    for a in model.attributes() {
        write_str(&mut w, a)?;
    }
    w.write_u64::<LE>(model.weights().len() as u64)?;
    for &x in model.weights() {
        w.write_f64::<LE>(x)?;
    }
    w.flush()
}

/// Reads a model. Attribute rows are unbound; call [`CrfModel::bind`] with
/// the registry used for featurization before inference.
pub fn read_model_from(mut r: impl Read) -> Result<CrfModel> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::BadModelFile("bad magic".into()));
    }
    let version = r.read_u32::<LE>().map_err(bad)?;
    if version != VERSION {
        return Err(Error::BadModelFile(format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LE>().map_err(bad)? as usize;
    let n_classes = r.read_u32::<LE>().map_err(bad)?;
    let classes = (0..n_classes).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let scheme = LabelScheme::new(classes).map_err(|e| Error::BadModelFile(e.to_string()))?;
    let n_attrs = r.read_u32::<LE>().map_err(bad)?;
    let attributes = (0..n_attrs).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let n_weights = r.read_u64::<LE>().map_err(bad)? as usize;
    let m = scheme.num_tags();
    let expected = 3 * dim * m + attributes.len() * m + m * m;
    if n_weights != expected {
        return Err(Error::BadModelFile(format!(
            "expected {expected} weights, header says {n_weights}"
        )));
    }
    let mut weights = vec![0.0; n_weights];
    r.read_f64_into::<LE>(&mut weights).map_err(bad)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(bad)? != 0 {
        return Err(Error::BadModelFile("trailing bytes".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::BadModelFile("non-finite weight".into()));
    }
    let mut model = CrfModel::new(scheme, dim, &FeatureRegistry::new(), &[]);
    model.attributes = attributes;
    model.weights = weights;
    Ok(model)
}

pub fn save_model(model: &CrfModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model_to(model, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>, registry: &FeatureRegistry) -> Result<CrfModel> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut model = read_model_from(BufReader::new(f))?;
    model.bind(registry);
    Ok(model)
}
