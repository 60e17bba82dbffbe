//! Binary tensor container shared by checkpoints and Fisher files.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TICKTACK"
//! 8       4     u32 format version (currently 1)
//! 12      4     u32 header length H
//! 16      H     UTF-8 JSON header (see `ContainerHeader`)
//! 16+H    4     u32 tensor count N
//! then N records:
//!         4     u32 name length K
//!         K     UTF-8 tensor name
//!         4     u32 rows R
//!         4     u32 cols C
//!         8·R·C f64 values, row-major, IEEE-754 little-endian
//! ```
//!
//! Nothing follows the last record; trailing bytes are rejected.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, NamedTensor, ParameterSet};
use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TICKTACK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    /// `"checkpoint"` or `"fisher"`.
    pub kind: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub step: u64,
    /// Free-form metadata: tokenizer vocabulary, encoding config, run mode.
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub tensors: ParameterSet,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Container {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self.header)?;
        write_u32(&mut w, header.len())?;
        w.write_all(&header)?;
        write_u32(&mut w, self.tensors.tensors.len())?;
        for t in &self.tensors.tensors {
            write_u32(&mut w, t.name.len())?;
            w.write_all(t.name.as_bytes())?;
            write_u32(&mut w, t.value.rows)?;
            write_u32(&mut w, t.value.cols)?;
            for v in &t.value.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: ContainerHeader = serde_json::from_slice(&hbuf)?;
        let n = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let klen = read_u32(&mut r)? as usize;
            let mut kbuf = vec![0u8; klen];
            r.read_exact(&mut kbuf)?;
            let name = String::from_utf8(kbuf).map_err(|e| Error::Format(e.to_string()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push(NamedTensor {
                name,
                value: Matrix::from_vec(rows, cols, data),
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            header,
            tensors: ParameterSet { tensors },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&bytes[..])
    }
}
