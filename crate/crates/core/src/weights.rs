//! Named weight tensors — the unit of federated exchange — and their on-disk
//! container format (name, shape, row-major float64 payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FLTENSOR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub array: Array2<f64>,
}

/// Ordered collection of named tensors. Aggregation requires that every
/// participant ships the same names and shapes in the same order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    tensors: Vec<NamedTensor>,
}

impl WeightSet {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        WeightSet { tensors }
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.array)
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array2<f64>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            array,
        });
    }

    /// True when names and shapes line up pairwise.
    pub fn same_layout(&self, other: &WeightSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.array.dim() == b.array.dim())
    }

    /// Copy with every tensor name prefixed (used to pack a generator and a
    /// discriminator into one exchangeable set).
    pub fn with_prefix(&self, prefix: &str) -> WeightSet {
        WeightSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: format!("{prefix}{}", t.name),
                    array: t.array.clone(),
                })
                .collect(),
        }
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> WeightSet {
        WeightSet {
            tensors: self
                .tensors
                .iter()
                .filter_map(|t| {
                    t.name.strip_prefix(prefix).map(|rest| NamedTensor {
                        name: rest.to_string(),
                        array: t.array.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn concat(mut self, other: WeightSet) -> WeightSet {
        self.tensors.extend(other.tensors);
        self
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(|t| t.array.len()).sum()
    }
}

/// Write the set to the named-tensor container file.
pub fn save_weights(path: impl AsRef<Path>, ws: &WeightSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ws.tensors.len() as u32).to_le_bytes())?;
    for t in &ws.tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let (rows, cols) = t.array.dim();
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for v in t.array.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a container file written by [`save_weights`].
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet> {
    let mut r = BufReader::new(File::open(path.as_ref())?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat(format!(
            "{}: not a tensor container (bad magic)",
            path.as_ref().display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported container version {version}"
        )));
    }

    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::ModelFormat(format!("tensor name is not utf-8: {e}")))?;
        let ndim = read_u32(&mut r)?;
        if ndim != 2 {
            return Err(Error::ModelFormat(format!(
                "tensor '{name}' has {ndim} dims, expected 2"
            )));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0f64; rows * cols];
        for v in &mut data {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let array = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::ModelFormat(format!("tensor '{name}': {e}")))?;
        tensors.push(NamedTensor { name, array });
    }
    Ok(WeightSet { tensors })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
