//! Checkpoints: a JSON header next to a little-endian `f64` blob.
//!
//! The blob holds every tensor of [`CheckpointHeader::tensors`] in order,
//! row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GcnModel, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub config: ModelConfig,
    pub n_genes: usize,
    pub n_classes: usize,
    pub gene_names: Option<Vec<String>>,
    pub bn_tracked: Vec<u64>,
    pub fingerprint: String,
    pub tensors: Vec<TensorEntry>,
}

fn named_tensors(model: &GcnModel) -> Vec<(String, &Matrix)> {
    let mut out: Vec<(String, &Matrix)> = model
        .convs
        .iter()
        .enumerate()
        .map(|(i, w)| (format!("conv{i}.weight"), w))
        .collect();
    out.push(("head.weight".into(), &model.head_weight));
    out.push(("head.bias".into(), &model.head_bias));
    for (i, bn) in model.norms.iter().enumerate() {
        out.push((format!("bn{i}.gamma"), &bn.gamma));
        out.push((format!("bn{i}.beta"), &bn.beta));
        out.push((format!("bn{i}.running_mean"), &bn.running_mean));
        out.push((format!("bn{i}.running_var"), &bn.running_var));
    }
    out
}

fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `<path>` (JSON) and `<path>.bin` with extension replaced.
pub fn save_checkpoint(model: &GcnModel, gene_names: Option<&[String]>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = named_tensors(model);
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT,
        config: model.config.clone(),
        n_genes: model.n_genes,
        n_classes: model.n_classes,
        gene_names: gene_names.map(<[String]>::to_vec),
        bn_tracked: model.norms.iter().map(|b| b.tracked).collect(),
        fingerprint: model.fingerprint(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let mut blob = Vec::new();
    for (_, m) in &tensors {
        for v in m.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    fs::write(blob_path(path), blob)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(GcnModel, CheckpointHeader)> {
    let path = path.as_ref();
    let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format {}", header.format)));
    }
    let blob = fs::read(blob_path(path))?;
    let mut model = GcnModel::new(header.n_genes, header.n_classes, header.config.clone(), 0)?;
    let expected = named_tensors(&model);
    if expected.len() != header.tensors.len() {
        return Err(Error::Data("checkpoint tensor list does not match the model layout".into()));
    }
    for ((name, m), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || m.shape() != (entry.rows, entry.cols) {
            return Err(Error::Data(format!("checkpoint tensor {} does not match {name}", entry.name)));
        }
    }
    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    if blob.len() != total * 8 {
        return Err(Error::Data(format!("checkpoint blob has {} bytes, expected {}", blob.len(), total * 8)));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut fill = |m: &mut Matrix| m.data_mut().iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    model.convs.iter_mut().for_each(&mut fill);
    fill(&mut model.head_weight);
    fill(&mut model.head_bias);
    for (bn, &tracked) in model.norms.iter_mut().zip(&header.bn_tracked) {
        fill(&mut bn.gamma);
        fill(&mut bn.beta);
        fill(&mut bn.running_mean);
        fill(&mut bn.running_var);
        bn.tracked = tracked;
    }
    model.set_mode(Mode::Eval);
    if model.fingerprint() != header.fingerprint {
        return Err(Error::Data("checkpoint fingerprint mismatch".into()));
    }
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_then_load_restores_the_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = GcnModel::new(7, 3, ModelConfig::default(), 12).unwrap();
        m.norms[1].running_var = m.norms[1].running_var.scale(2.5);
        m.norms[1].tracked = 9;
        m.set_mode(Mode::Eval);
        let path = dir.path().join("model.json");
        save_checkpoint(&m, None, &path).unwrap();
        let (back, header) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.tensors.len(), 3 + 2 + 8);

        let bin = path.with_extension("bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[3] ^= 0x40;
        std::fs::write(&bin, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
