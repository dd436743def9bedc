//! Checkpoint format: a TOML manifest listing every tensor (name, shape,
//! element offset) plus one flat little-endian `f64` array, row-major, in
//! manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::{Params, Scalar};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub data_file: String,
    #[serde(default)]
    pub meta: toml::Table,
    #[serde(rename = "tensor", default)]
    pub tensors: Vec<TensorEntry>,
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest.toml"))
}

pub fn data_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.bin"))
}

#[derive(Debug, Default)]
pub struct CheckpointWriter {
    tensors: Vec<TensorEntry>,
    data: Vec<f64>,
    meta: toml::Table,
}

impl CheckpointWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta(mut self, meta: toml::Table) -> Self {
        self.meta = meta;
        self
    }

    /// Appends every tensor of `model` under `prefix.`.
    pub fn add<T: Scalar, M: Params<T>>(&mut self, prefix: &str, model: &M) -> &mut Self {
        for (name, t) in model.tensors() {
            let values: Vec<f64> = t.iter().map(|v| v.to_f64_lossless()).collect();
            self.add_raw(&format!("{prefix}.{name}"), t.shape(), &values);
        }
        self
    }

    pub fn add_raw(&mut self, name: &str, shape: &[usize], values: &[f64]) -> &mut Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend_from_slice(values);
        self
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            dtype: "f64-le".into(),
            data_file: format!("{stem}.bin"),
            meta: self.meta.clone(),
            tensors: self.tensors.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(data_path(dir, stem), bytes)?;
        fs::write(manifest_path(dir, stem), text)?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct CheckpointReader {
    pub manifest: Manifest,
    data: Vec<f64>,
}

impl CheckpointReader {
    pub fn open(dir: &Path, stem: &str) -> Result<Self> {
        let text = fs::read_to_string(manifest_path(dir, stem))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        if bytes.len() % 8 != 0 {
            return Err(NnError::Checkpoint("data file length is not a multiple of 8".into()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset + n > data.len() {
                return Err(NnError::Checkpoint(format!("tensor {} overruns data file", e.name)));
            }
        }
        Ok(CheckpointReader { manifest, data })
    }

    pub fn meta(&self) -> &toml::Table {
        &self.manifest.meta
    }

    pub fn raw(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let e = self
            .manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
        let n: usize = e.shape.iter().product();
        Ok((&e.shape, &self.data[e.offset..e.offset + n]))
    }

    /// Overwrites every tensor of `model` from entries stored under `prefix.`.
    pub fn load_into<T: Scalar, M: Params<T>>(&self, prefix: &str, model: &mut M) -> Result<()> {
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, mut dst) in names.into_iter().zip(model.tensors_mut()) {
            let full = format!("{prefix}.{name}");
            let (shape, values) = self.raw(&full)?;
            if shape != dst.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {full}: stored shape {shape:?}, model expects {:?}",
                    dst.shape()
                )));
            }
            for (d, &v) in dst.iter_mut().zip(values) {
                *d = T::of(v);
            }
        }
        Ok(())
    }
}
