//! Versioned binary container for parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ADSS" | u32 version | u32 meta_len | meta (UTF-8 JSON) | u32 n_records
//! n_records x { u32 name_len | name | u32 rows | u32 cols | u8 width | values }
//! ```
//!
//! `width` is 4 when every value of the record is exactly representable as a
//! 32-bit float (values then stored as LE f32), otherwise 8 (LE f64). Either
//! way a load reproduces the saved bits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"ADSS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub records: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, records: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.records.push((name.into(), value));
    }

    /// Appends every parameter of `module` under `prefix.`.
    pub fn push_module(&mut self, prefix: &str, module: &impl Module) {
        for (name, p) in module.params() {
            self.records.push((format!("{prefix}.{name}"), p.value.clone()));
        }
    }

    pub fn index(&self) -> BTreeMap<&str, &Matrix> {
        self.records.iter().map(|(n, m)| (n.as_str(), m)).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    /// Overwrites every parameter of `module` from records under `prefix.`.
    pub fn load_module(&self, prefix: &str, module: &mut impl Module) -> Result<()> {
        let names: Vec<String> = module.params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(module.params_mut()) {
            let full = format!("{prefix}.{name}");
            let m = self.get(&full)?;
            if m.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "record {full} has shape {:?}, expected {:?}",
                    m.shape(),
                    p.value.shape()
                )));
            }
            p.value = m.clone();
            p.reset_state();
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, m) in &self.records {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            let fits_f32 = m.as_slice().iter().all(|&v| (v as f32) as f64 == v || v.is_nan());
            if fits_f32 {
                w.write_all(&[4])?;
                for &v in m.as_slice() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            } else {
                w.write_all(&[8])?;
                for &v in m.as_slice() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(r, &mut meta)?;
        let meta: serde_json::Value = serde_json::from_slice(&meta)?;
        let n = read_u32(r)? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut width = [0u8; 1];
            read_exact(r, &mut width)?;
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("record {name} shape overflows")))?;
            let mut data = Vec::with_capacity(count.min(1 << 24));
            match width[0] {
                4 => {
                    let mut b = [0u8; 4];
                    for _ in 0..count {
                        read_exact(r, &mut b)?;
                        data.push(f32::from_le_bytes(b) as f64);
                    }
                }
                8 => {
                    let mut b = [0u8; 8];
                    for _ in 0..count {
                        read_exact(r, &mut b)?;
                        data.push(f64::from_le_bytes(b));
                    }
                }
                other => {
                    return Err(Error::Checkpoint(format!("record {name}: bad value width {other}")))
                }
            }
            records.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
