//! Binary tensor files.
//!
//! Layout on disk: the 8-byte magic, the header length as a little-endian
//! `u64`, a UTF-8 JSON header, then the blocks of every section in order as
//! little-endian `f64`. The header names each section, its tensor layout and
//! its block count, so files are readable without knowing the model type.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, LayoutEntry, ParamVector};
use crate::bayes::{PosteriorEnsemble, PsgldConfig};
use crate::error::{Error, Result};
use crate::gru::GruDims;

pub const MAGIC: &[u8; 8] = b"MFVEB\x00T1";

/// Named group of equally shaped flat vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub layout: Vec<LayoutEntry>,
    pub blocks: Vec<Vec<f64>>,
}

impl Section {
    pub fn from_params<'a, I>(name: &str, params: I) -> Result<Section>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let params: Vec<&ParamVector> = params.into_iter().collect();
        let first = params.first().ok_or(Error::Empty("tensor section"))?;
        let layout = first.layout().clone();
        let mut blocks = Vec::with_capacity(params.len());
        for p in &params {
            if p.layout() != &layout {
                return Err(Error::DimensionMismatch {
                    expected: layout.len(),
                    actual: p.len(),
                    context: "section blocks must share a layout",
                });
            }
            blocks.push(p.values().to_vec());
        }
        Ok(Section {
            name: name.to_string(),
            layout: layout.entries().to_vec(),
            blocks,
        })
    }

    pub fn to_params(&self) -> Result<Vec<ParamVector>> {
        let layout = Arc::new(Layout::new(self.layout.clone())?);
        self.blocks
            .iter()
            .map(|b| ParamVector::new(layout.clone(), b.clone()))
            .collect()
    }

    fn block_len(&self) -> usize {
        self.layout.iter().map(LayoutEntry::size).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    layout: Vec<LayoutEntry>,
    blocks: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    sections: Vec<SectionHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub sections: Vec<Section>,
}

impl TensorFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionHeader {
                    name: s.name.clone(),
                    layout: s.layout.clone(),
                    blocks: s.blocks.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format("<tensor header>", e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for s in &self.sections {
            let len = s.block_len();
            for b in &s.blocks {
                if b.len() != len {
                    return Err(Error::DimensionMismatch {
                        expected: len,
                        actual: b.len(),
                        context: "tensor block length vs section layout",
                    });
                }
                for v in b {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<TensorFile> {
        let bad = |detail: &str| Error::format(origin, detail);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing tensor-file magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if hlen > body.len() {
            return Err(bad("header length exceeds file size"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::format(origin, e.to_string()))?;
        let mut floats = body[hlen..].chunks_exact(8);
        if !floats.remainder().is_empty() {
            return Err(bad("data block is not a whole number of f64 values"));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        for sh in header.sections {
            let len: usize = sh.layout.iter().map(LayoutEntry::size).sum();
            let mut blocks = Vec::with_capacity(sh.blocks);
            for _ in 0..sh.blocks {
                let mut b = Vec::with_capacity(len);
                for _ in 0..len {
                    let chunk = floats.next().ok_or_else(|| bad("data ends before the last section"))?;
                    b.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
                }
                blocks.push(b);
            }
            sections.push(Section {
                name: sh.name,
                layout: sh.layout,
                blocks,
            });
        }
        if floats.next().is_some() {
            return Err(bad("trailing data after the last section"));
        }
        Ok(TensorFile {
            kind: header.kind,
            meta: header.meta,
            sections,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<TensorFile> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, origin: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                origin,
                format!("expected a `{kind}` file, found `{}`", self.kind),
            ));
        }
        Ok(())
    }

    pub fn section(&self, name: &str, origin: &Path) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::format(origin, format!("missing section `{name}`")))
    }

    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, origin: &Path) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::format(origin, format!("header: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleMeta {
    dims: GruDims,
    burn_in: usize,
    stride: usize,
    config: PsgldConfig,
    seed: u64,
}

impl PosteriorEnsemble {
    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let meta = EnsembleMeta {
            dims: self.dims,
            burn_in: self.burn_in,
            stride: self.stride,
            config: self.config.clone(),
            seed: self.seed,
        };
        Ok(TensorFile {
            kind: "ensemble".into(),
            meta: serde_json::to_value(meta).map_err(|e| Error::format("<ensemble header>", e.to_string()))?,
            sections: vec![Section::from_params("samples", &self.samples)?],
        })
    }

    pub fn from_tensor_file(file: &TensorFile, origin: &Path) -> Result<PosteriorEnsemble> {
        file.expect_kind("ensemble", origin)?;
        let meta: EnsembleMeta = file.meta_as(origin)?;
        let samples = file.section("samples", origin)?.to_params()?;
        if let Some(s) = samples.first() {
            if **s.layout() != *meta.dims.layout()? {
                return Err(Error::format(origin, "sample layout does not match the recorded dims"));
            }
        }
        Ok(PosteriorEnsemble {
            dims: meta.dims,
            samples,
            burn_in: meta.burn_in,
            stride: meta.stride,
            config: meta.config,
            seed: meta.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.write(path)
    }

    pub fn load(path: &Path) -> Result<PosteriorEnsemble> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }
}
