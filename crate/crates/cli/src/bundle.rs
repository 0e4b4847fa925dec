//! On-disk model bundle: `manifest.json` plus raw little-endian arrays.

use std::fs;
use std::path::Path;

use circlstm::lstm::{FxpConfig, NamedTensor, TensorShape};
use circlstm::spectral::dft;
use circlstm::{FxpFormat, FxpVector, LstmArchSpec, LstmWeights, ShiftPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::sha256_hex;

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS_F64: &str = "weights.f64.bin";
pub const WEIGHTS_I16: &str = "weights.i16.bin";
pub const SPECTRA_F64: &str = "spectra.f64.bin";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read bundle: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] circlstm::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: TensorShape,
    /// Element offset into both weight arrays.
    pub offset: usize,
    pub len: usize,
    /// Format of this tensor in the 16-bit copy.
    pub format: FxpFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FxpSection {
    pub data: FxpFormat,
    pub weight: FxpFormat,
    pub policy: ShiftPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub bundle_version: u32,
    pub arch: LstmArchSpec,
    pub block_size: usize,
    pub fxp: FxpSection,
    pub seed: Option<u64>,
    pub tensors: Vec<TensorEntry>,
    pub weights_f64: FileRef,
    pub weights_i16: FileRef,
    pub spectra_f64: Option<FileRef>,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub weights: LstmWeights,
    pub quantized: Vec<i16>,
    pub spectra: Option<Vec<f64>>,
}

impl ModelBundle {
    pub fn new(weights: LstmWeights, fxp: FxpConfig, seed: Option<u64>, with_spectra: bool) -> circlstm::Result<Self> {
        let named = weights.to_named();
        let mut tensors = Vec::new();
        let mut flat = Vec::new();
        let mut quantized = Vec::new();
        for t in &named {
            tensors.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape,
                offset: flat.len(),
                len: t.data.len(),
                format: fxp.weight,
            });
            flat.extend_from_slice(&t.data);
            quantized.extend(FxpVector::quantize(&t.data, fxp.weight).raw);
        }
        let spectra = if with_spectra { Some(spectra_of(&named)?) } else { None };
        let f64_bytes = f64_le(&flat);
        let i16_bytes = i16_le(&quantized);
        let manifest = Manifest {
            bundle_version: BUNDLE_VERSION,
            block_size: weights.arch.block_size,
            arch: weights.arch.clone(),
            fxp: FxpSection {
                data: fxp.data,
                weight: fxp.weight,
                policy: fxp.policy,
            },
            seed,
            tensors,
            weights_f64: file_ref(WEIGHTS_F64, &f64_bytes),
            weights_i16: file_ref(WEIGHTS_I16, &i16_bytes),
            spectra_f64: spectra.as_ref().map(|s| file_ref(SPECTRA_F64, &f64_le(s))),
        };
        Ok(ModelBundle {
            manifest,
            weights,
            quantized,
            spectra,
        })
    }

    pub fn fxp_config(&self) -> FxpConfig {
        FxpConfig {
            data: self.manifest.fxp.data,
            weight: self.manifest.fxp.weight,
            policy: self.manifest.fxp.policy,
        }
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        fs::create_dir_all(dir)?;
        let flat: Vec<f64> = self.weights.to_named().into_iter().flat_map(|t| t.data).collect();
        fs::write(dir.join(WEIGHTS_F64), f64_le(&flat))?;
        fs::write(dir.join(WEIGHTS_I16), i16_le(&self.quantized))?;
        match &self.spectra {
            Some(s) => fs::write(dir.join(SPECTRA_F64), f64_le(s))?,
            None => {
                let stale = dir.join(SPECTRA_F64);
                if stale.exists() {
                    fs::remove_file(stale)?;
                }
            }
        }
        fs::write(dir.join(MANIFEST), self.manifest_json())?;
        Ok(())
    }

    /// Reads a bundle and checks every payload against its manifest hash.
    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        if manifest.bundle_version != BUNDLE_VERSION {
            return Err(BundleError::Corrupt(format!(
                "unsupported bundle version {}",
                manifest.bundle_version
            )));
        }
        if manifest.arch.block_size != manifest.block_size {
            return Err(BundleError::Corrupt("block_size disagrees with arch".into()));
        }
        let f64_bytes = read_checked(dir, &manifest.weights_f64)?;
        let i16_bytes = read_checked(dir, &manifest.weights_i16)?;
        let flat = from_f64_le(&f64_bytes)?;
        let quantized = from_i16_le(&i16_bytes)?;
        let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
        if flat.len() != total || quantized.len() != total {
            return Err(BundleError::Corrupt(format!(
                "arrays hold {} / {} values, manifest lists {total}",
                flat.len(),
                quantized.len()
            )));
        }
        let mut tensors = Vec::new();
        let mut cursor = 0;
        for t in &manifest.tensors {
            if t.offset != cursor || t.len != t.shape.len() {
                return Err(BundleError::Corrupt(format!("tensor `{}` has a bad offset or length", t.name)));
            }
            tensors.push(NamedTensor {
                name: t.name.clone(),
                shape: t.shape,
                data: flat[cursor..cursor + t.len].to_vec(),
            });
            cursor += t.len;
        }
        let weights = LstmWeights::from_named(&manifest.arch, tensors)?;
        let spectra = match &manifest.spectra_f64 {
            Some(r) => Some(from_f64_le(&read_checked(dir, r)?)?),
            None => None,
        };
        Ok(ModelBundle {
            manifest,
            weights,
            quantized,
            spectra,
        })
    }
}

/// Packed DFT bins of every stored circulant row: for each circulant tensor
/// in manifest order, blocks in row-major `(i, j)` order, `k/2 + 1` bins as
/// `(re, im)` pairs.
pub fn spectra_of(tensors: &[NamedTensor]) -> circlstm::Result<Vec<f64>> {
    let mut out = Vec::new();
    for t in tensors {
        if let TensorShape::Circulant { k, .. } = t.shape {
            for row in t.data.chunks(k) {
                for b in dft(row)?.bins() {
                    out.push(b.re);
                    out.push(b.im);
                }
            }
        }
    }
    Ok(out)
}

fn file_ref(name: &str, bytes: &[u8]) -> FileRef {
    FileRef {
        file: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}

fn read_checked(dir: &Path, r: &FileRef) -> Result<Vec<u8>, BundleError> {
    if r.file.contains(['/', '\\']) || r.file.starts_with('.') {
        return Err(BundleError::Corrupt(format!("file reference `{}` leaves the bundle", r.file)));
    }
    let bytes = fs::read(dir.join(&r.file))?;
    if bytes.len() as u64 != r.bytes {
        return Err(BundleError::Corrupt(format!(
            "{}: {} bytes, manifest says {}",
            r.file,
            bytes.len(),
            r.bytes
        )));
    }
    let got = sha256_hex(&bytes);
    if got != r.sha256 {
        return Err(BundleError::Corrupt(format!("{}: sha256 {got} does not match manifest", r.file)));
    }
    Ok(bytes)
}

fn f64_le(xs: &[f64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn i16_le(xs: &[i16]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_f64_le(b: &[u8]) -> Result<Vec<f64>, BundleError> {
    if b.len() % 8 != 0 {
        return Err(BundleError::Corrupt("f64 array length is not a multiple of 8".into()));
    }
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn from_i16_le(b: &[u8]) -> Result<Vec<i16>, BundleError> {
    if b.len() % 2 != 0 {
        return Err(BundleError::Corrupt("i16 array length is not a multiple of 2".into()));
    }
    Ok(b.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
}
