//! Checkpoint directories: one tensor archive per parameter and per
//! batch-norm running statistic, plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::{read_archive_file, write_archive_file, Element, Tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form metric history (the trainer stores its eval rows here).
    pub history: serde_json::Value,
    pub params: Vec<String>,
    pub batch_norm: Vec<String>,
}

fn file_name(name: &str) -> String {
    format!("{name}.tensor")
}

pub fn save<T: Element>(
    model: &Model<T>,
    dir: impl AsRef<Path>,
    step: u64,
    history: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in model.params() {
        write_archive_file(&p.value, dir.join(file_name(&p.name)))?;
    }
    for st in model.bn_states() {
        let n = st.running_mean.len();
        write_archive_file(
            &Tensor::new(vec![n], st.running_mean.clone())?,
            dir.join(file_name(&format!("{}.running_mean", st.name))),
        )?;
        write_archive_file(
            &Tensor::new(vec![n], st.running_var.clone())?,
            dir.join(file_name(&format!("{}.running_var", st.name))),
        )?;
    }
    let manifest = CheckpointManifest {
        config: model.config().clone(),
        step,
        history,
        params: model.params().iter().map(|p| p.name.clone()).collect(),
        batch_norm: model.bn_states().iter().map(|s| s.name.clone()).collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load<T: Element>(dir: impl AsRef<Path>) -> Result<(Model<T>, CheckpointManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw)?;
    let mut model = Model::<T>::new(manifest.config.clone())?;
    for p in model.params_mut() {
        let t: Tensor<T> = read_archive_file(dir.join(file_name(&p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Data {
                array: p.name.clone(),
                reason: format!(
                    "checkpoint shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                ),
            });
        }
        p.value = t;
    }
    for st in model.bn_states_mut() {
        let mean: Tensor<T> =
            read_archive_file(dir.join(file_name(&format!("{}.running_mean", st.name))))?;
        let var: Tensor<T> =
            read_archive_file(dir.join(file_name(&format!("{}.running_var", st.name))))?;
        if mean.numel() != st.running_mean.len() || var.numel() != st.running_var.len() {
            return Err(Error::Data {
                array: st.name.clone(),
                reason: "running statistics length".into(),
            });
        }
        st.running_mean = mean.into_data();
        st.running_var = var.into_data();
    }
    Ok((model, manifest))
}
