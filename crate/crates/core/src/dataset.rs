//! Scene-to-tile conversion, seeded train/val/test splits and dataset
//! digests used for provenance checks.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{denoise, fuse};
use crate::label::LabelMap;
use crate::raster::Modality;
use crate::rng::{stream, substream};
use crate::synthgen::SceneSample;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Channels the model input will have for a scene under a modality choice.
pub fn input_channel_count(sample: &SceneSample, modality: Modality) -> usize {
    match modality {
        Modality::Lidar => sample.lidar.channels(),
        Modality::Sar => sample.sar.channels(),
        Modality::Optical => sample.optical.channels(),
        Modality::Fused => {
            sample.lidar.channels() + sample.sar.channels() + sample.optical.channels()
        }
    }
}

/// Build the model input for one scene: the requested single modality or
/// the fused stack, optionally denoised first.
pub fn scene_input(sample: &SceneSample, modality: Modality, clean: bool) -> Result<Tensor> {
    let pick = |raster: &crate::raster::Raster| -> Result<Tensor> {
        if clean {
            Ok(denoise(raster)?.to_tensor())
        } else {
            Ok(raster.to_tensor())
        }
    };
    match modality {
        Modality::Lidar => pick(&sample.lidar),
        Modality::Sar => pick(&sample.sar),
        Modality::Optical => pick(&sample.optical),
        Modality::Fused => {
            let (lidar, sar, optical) = if clean {
                (
                    denoise(&sample.lidar)?,
                    denoise(&sample.sar)?,
                    denoise(&sample.optical)?,
                )
            } else {
                (
                    sample.lidar.clone(),
                    sample.sar.clone(),
                    sample.optical.clone(),
                )
            };
            Ok(fuse(&lidar, &sar, &optical)?.to_tensor())
        }
    }
}

pub fn scene_tile(sample: &SceneSample, modality: Modality, clean: bool) -> Result<(Tensor, LabelMap)> {
    Ok((scene_input(sample, modality, clean)?, sample.labels.clone()))
}

pub fn scenes_to_tiles(
    samples: &[SceneSample],
    modality: Modality,
    clean: bool,
) -> Result<Vec<(Tensor, LabelMap)>> {
    samples
        .iter()
        .map(|s| scene_tile(s, modality, clean))
        .collect()
}

/// Index split produced by a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split `n` tile indices by fraction (floor counts for train and val, the
/// remainder is test) after a seeded shuffle.
pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be non-negative and sum to at most 1, got {train_frac} and {val_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &[stream::SPLIT]);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    let val_end = (n_train + n_val).min(n);
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..val_end].to_vec(),
        test: order[val_end..].to_vec(),
    })
}

pub fn select<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}

/// Hex SHA-256 over the serialized scene content.
pub fn scene_digest(sample: &SceneSample) -> String {
    let mut hasher = Sha256::new();
    hasher.update(sample.lidar.to_bytes());
    hasher.update(sample.sar.to_bytes());
    hasher.update(sample.optical.to_bytes());
    hasher.update(sample.labels.to_bytes());
    hex_digest(hasher)
}

/// Hex SHA-256 over an ordered set of scenes.
pub fn dataset_digest(samples: &[SceneSample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(scene_digest(s).as_bytes());
    }
    hex_digest(hasher)
}

/// Hex SHA-256 of raw bytes (file digests for manifests).
pub fn bytes_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(hasher)
}

fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
