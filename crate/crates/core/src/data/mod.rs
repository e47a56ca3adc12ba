//! Region datasets: on-disk manifest format, preprocessing and a synthetic
//! linear-nonlinear-Poisson generator.

mod preprocess;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use preprocess::{preprocess, resize_bilinear, GrayImage};
pub use synth::{gabor, smooth_noise_image, synth_lnp, SynthConfig};

use crate::error::{Error, Result};
use crate::models::INPUT_SIZE;
use crate::tensor::{read_archive_file, write_archive, write_archive_file, Tensor};

/// Paired stimuli and responses for one recording region.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionDataset {
    pub region_name: String,
    /// `[n,32,32,1]` in `[-1, 1]`.
    pub train_stimuli: Tensor<f32>,
    /// `[n,m]`, nonnegative.
    pub train_responses: Tensor<f32>,
    /// `[t,32,32,1]`.
    pub test_stimuli: Tensor<f32>,
    /// `[t,r,m]`, `r` repeats per test image.
    pub test_responses: Tensor<f32>,
    /// Which neurons truly depend on the stimulus, when known.
    pub ground_truth_informative: Option<Vec<bool>>,
}

/// Disjoint train and validation row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayPaths {
    pub train_stimuli: PathBuf,
    pub train_responses: PathBuf,
    pub test_stimuli: PathBuf,
    pub test_responses: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub region_name: String,
    /// Paths are relative to the manifest's directory unless absolute.
    pub arrays: ArrayPaths,
    pub repeats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_informative: Option<PathBuf>,
}

fn bad(array: &str, reason: impl Into<String>) -> Error {
    Error::Data {
        array: array.into(),
        reason: reason.into(),
    }
}

fn check_stimuli(name: &str, t: &Tensor<f32>) -> Result<usize> {
    let s = t.shape();
    if s.len() != 4 || s[1..] != [INPUT_SIZE, INPUT_SIZE, 1] {
        return Err(bad(name, format!("shape {s:?}, expected [n, 32, 32, 1]")));
    }
    if let Some(v) = t.data().iter().find(|v| !(v.abs() <= 1.0)) {
        return Err(bad(name, format!("value {v} outside [-1, 1]")));
    }
    Ok(s[0])
}

fn check_responses(name: &str, t: &Tensor<f32>) -> Result<()> {
    if let Some(v) = t.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(bad(name, format!("response {v} is negative or not finite")));
    }
    Ok(())
}

impl RegionDataset {
    /// Checks every invariant, naming the offending array on failure.
    pub fn validate(&self) -> Result<()> {
        let n = check_stimuli("train_stimuli", &self.train_stimuli)?;
        let t = check_stimuli("test_stimuli", &self.test_stimuli)?;
        let rs = self.train_responses.shape();
        if rs.len() != 2 || rs[0] != n || rs[1] == 0 {
            return Err(bad(
                "train_responses",
                format!("shape {rs:?} for {n} stimuli"),
            ));
        }
        let m = rs[1];
        let ts = self.test_responses.shape();
        if ts.len() != 3 || ts[0] != t || ts[1] == 0 || ts[2] != m {
            return Err(bad(
                "test_responses",
                format!("shape {ts:?}, expected [{t}, repeats >= 1, {m}]"),
            ));
        }
        check_responses("train_responses", &self.train_responses)?;
        check_responses("test_responses", &self.test_responses)?;
        if let Some(gt) = &self.ground_truth_informative {
            if gt.len() != m {
                return Err(bad(
                    "ground_truth_informative",
                    format!("{} labels for {m} neurons", gt.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.train_stimuli.shape()[0]
    }

    pub fn n_test(&self) -> usize {
        self.test_stimuli.shape()[0]
    }

    pub fn n_neurons(&self) -> usize {
        self.train_responses.shape()[1]
    }

    pub fn repeats(&self) -> usize {
        self.test_responses.shape()[1]
    }

    /// Test responses averaged over repeats, `[t,m]`.
    pub fn test_mean_responses(&self) -> Tensor<f32> {
        let (t, r, m) = (self.n_test(), self.repeats(), self.n_neurons());
        let src = self.test_responses.data();
        Tensor::from_fn(&[t, m], |i| {
            let (ti, j) = (i / m, i % m);
            (0..r).map(|k| src[(ti * r + k) * m + j]).sum::<f32>() / r as f32
        })
    }

    /// Mean response of each neuron over the given training rows.
    pub fn mean_rates(&self, rows: &[usize]) -> Vec<f64> {
        let m = self.n_neurons();
        let mut acc = vec![0.0; m];
        for &i in rows {
            for (a, &v) in acc
                .iter_mut()
                .zip(&self.train_responses.data()[i * m..(i + 1) * m])
            {
                *a += v as f64;
            }
        }
        acc.iter().map(|a| a / rows.len().max(1) as f64).collect()
    }

    /// The same region restricted to neurons `ids` (in the given order).
    pub fn select_neurons(&self, ids: &[usize]) -> Result<RegionDataset> {
        if ids.is_empty() {
            return Err(Error::Config("neuron subset is empty".into()));
        }
        if let Some(&bad_id) = ids.iter().find(|&&i| i >= self.n_neurons()) {
            return Err(Error::Config(format!(
                "neuron id {bad_id} out of range for {} neurons",
                self.n_neurons()
            )));
        }
        Ok(RegionDataset {
            region_name: self.region_name.clone(),
            train_stimuli: self.train_stimuli.clone(),
            train_responses: self.train_responses.select_last(ids),
            test_stimuli: self.test_stimuli.clone(),
            test_responses: self.test_responses.select_last(ids),
            ground_truth_informative: self
                .ground_truth_informative
                .as_ref()
                .map(|gt| ids.iter().map(|&i| gt[i]).collect()),
        })
    }

    /// SHA-256 over the region name and every array's archive bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.region_name.as_bytes());
        for t in [
            &self.train_stimuli,
            &self.train_responses,
            &self.test_stimuli,
            &self.test_responses,
        ] {
            let mut buf = Vec::new();
            write_archive(t, &mut buf).expect("writing to memory");
            h.update(&buf);
        }
        if let Some(gt) = &self.ground_truth_informative {
            h.update(gt.iter().map(|&b| b as u8).collect::<Vec<_>>());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes tensor archives and `manifest.json` into `dir`; returns the
    /// manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let arrays = ArrayPaths {
            train_stimuli: "train_stimuli.tensor".into(),
            train_responses: "train_responses.tensor".into(),
            test_stimuli: "test_stimuli.tensor".into(),
            test_responses: "test_responses.tensor".into(),
        };
        write_archive_file(&self.train_stimuli, dir.join(&arrays.train_stimuli))?;
        write_archive_file(&self.train_responses, dir.join(&arrays.train_responses))?;
        write_archive_file(&self.test_stimuli, dir.join(&arrays.test_stimuli))?;
        write_archive_file(&self.test_responses, dir.join(&arrays.test_responses))?;
        let gt_path = self.ground_truth_informative.as_ref().map(|gt| {
            let p = PathBuf::from("ground_truth_informative.tensor");
            let t = Tensor::new(vec![gt.len()], gt.iter().map(|&b| b as u8 as f32).collect());
            (p, t)
        });
        let ground_truth_informative = match gt_path {
            Some((p, t)) => {
                write_archive_file(&t?, dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        let manifest = Manifest {
            region_name: self.region_name.clone(),
            arrays,
            repeats: self.repeats(),
            ground_truth_informative,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Loads and validates the dataset described by a manifest. No preprocessing
/// is applied.
pub fn load_region(manifest_path: impl AsRef<Path>) -> Result<RegionDataset> {
    let manifest_path = manifest_path.as_ref();
    let raw = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |name: &str, p: &Path| -> Result<Tensor<f32>> {
        read_archive_file(base.join(p)).map_err(|e| bad(name, e.to_string()))
    };
    let a = &manifest.arrays;
    let ground_truth_informative = match &manifest.ground_truth_informative {
        Some(p) => Some(
            read("ground_truth_informative", p)?
                .data()
                .iter()
                .map(|&v| v != 0.0)
                .collect(),
        ),
        None => None,
    };
    let ds = RegionDataset {
        region_name: manifest.region_name.clone(),
        train_stimuli: read("train_stimuli", &a.train_stimuli)?,
        train_responses: read("train_responses", &a.train_responses)?,
        test_stimuli: read("test_stimuli", &a.test_stimuli)?,
        test_responses: read("test_responses", &a.test_responses)?,
        ground_truth_informative,
    };
    ds.validate()?;
    if ds.repeats() != manifest.repeats {
        return Err(bad(
            "test_responses",
            format!(
                "{} repeats stored, manifest declares {}",
                ds.repeats(),
                manifest.repeats
            ),
        ));
    }
    Ok(ds)
}

/// Seeded random split of `0..n` into train and validation rows.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} outside (0, 0.5)"
        )));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val })
}
