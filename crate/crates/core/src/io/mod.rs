//! File formats: tensors, checkpoints, netpbm images, run configs and loss
//! logs.

mod checkpoint;
mod config;
mod image;
mod tensor_file;

pub use checkpoint::{checkpoint_for_config, checkpoint_from_bytes, checkpoint_to_bytes, parse_checkpoint_header};
pub use config::{parse_run_config, DataConfig, RunConfig};
pub use image::{decode_netpbm, encode_netpbm, quantize};
pub use tensor_file::{encode_tensor, tensor_from_bytes, tensor_to_bytes, AnyTensor, MAGIC, VERSION};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::ModelWeights;
use crate::training::LogEntry;
use crate::{Scalar, Tensor};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Attaches `path` to decode errors.
fn in_file<V>(path: &Path, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::File {
            path: path.to_path_buf(),
            source: Box::new(other),
        },
    })
}

pub fn read_tensor_file(path: &Path) -> Result<AnyTensor> {
    in_file(path, tensor_from_bytes(&read(path)?))
}

pub fn write_tensor_file<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_bytes(path, &tensor_to_bytes(t)?)
}

pub fn read_image(path: &Path) -> Result<Tensor<f64>> {
    in_file(path, decode_netpbm(&read(path)?))
}

pub fn write_image<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_bytes(path, &encode_netpbm(t)?)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm")
    )
}

/// Reads an image (`.pgm`/`.ppm`) or a tensor file (anything else).
pub fn read_image_or_tensor(path: &Path) -> Result<Tensor<f64>> {
    if is_image(path) {
        read_image(path)
    } else {
        Ok(read_tensor_file(path)?.into_tensor())
    }
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<ModelWeights<T>> {
    in_file(path, checkpoint_from_bytes(&read(path)?))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, w: &ModelWeights<T>) -> Result<()> {
    write_bytes(path, &checkpoint_to_bytes(w)?)
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    in_file(path, parse_run_config(&text))
}

pub fn write_loss_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut s = String::with_capacity(log.len() * 32);
    for e in log {
        s.push_str(&e.line());
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

/// Sorted image files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// `(clean, noisy)` pairs from `dir/clean/NAME` and `dir/noisy/NAME`.
pub fn load_pair_directory<T: Scalar>(dir: &Path) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    Ok(load_named_pairs(dir)?.into_iter().map(|(_, c, n)| (c, n)).collect())
}

/// Like [`load_pair_directory`], keeping file names.
pub fn load_named_pairs<T: Scalar>(dir: &Path) -> Result<Vec<(String, Tensor<T>, Tensor<T>)>> {
    let clean_dir = dir.join("clean");
    let noisy_dir = dir.join("noisy");
    let files = list_images(&clean_dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("no .pgm/.ppm images in {}", clean_dir.display())));
    }
    files
        .into_iter()
        .map(|clean_path| {
            let name = clean_path.file_name().expect("listed file").to_string_lossy().into_owned();
            let noisy_path = noisy_dir.join(&name);
            if !noisy_path.is_file() {
                return Err(Error::Invalid(format!(
                    "{} has no counterpart {}",
                    clean_path.display(),
                    noisy_path.display()
                )));
            }
            let clean = read_image(&clean_path)?;
            let noisy = read_image(&noisy_path)?;
            if clean.shape() != noisy.shape() {
                return Err(Error::Invalid(format!(
                    "{name}: clean shape {:?} differs from noisy shape {:?}",
                    clean.shape(),
                    noisy.shape()
                )));
            }
            Ok((name, clean.cast(), noisy.cast()))
        })
        .collect()
}
