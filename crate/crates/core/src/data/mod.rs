//! Split files, image loading and dataset integrity checks.

pub mod image;
pub mod split;
pub mod synth;
pub mod verify;
pub mod voc;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use self::image::{decode_resized, to_tensor, BaseImage, Mode, PreprocessConfig};
pub use self::split::{load_splits, parse_split_file, parse_split_text, partition_train_val, SplitEntry, SplitManifest, SplitName};
pub use self::verify::{official_sizes, verify_dataset, IntegrityReport};

use crate::error::Result;
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// `3 x size x size`, standardized.
    pub image: Vec<f32>,
    pub label: usize,
    pub path: String,
}

pub fn load_record<R: Rng + ?Sized>(
    entry: &SplitEntry,
    root: &Path,
    size: usize,
    cfg: &PreprocessConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<DatasetRecord> {
    let base = decode_resized(&root.join(&entry.path), size)?;
    Ok(DatasetRecord {
        image: to_tensor(&base, cfg, mode, rng),
        label: entry.label,
        path: entry.path.clone(),
    })
}

/// One split decoded into memory at the model resolution.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: SplitName,
    pub size: usize,
    pub images: Vec<BaseImage>,
    pub labels: Vec<usize>,
    pub paths: Vec<String>,
}

impl Dataset {
    pub fn load(manifest: &SplitManifest, root: &Path, size: usize) -> Result<Self> {
        let images = manifest
            .entries
            .iter()
            .map(|e| decode_resized(&root.join(&e.path), size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: manifest.name,
            size,
            images,
            labels: manifest.labels(),
            paths: manifest.entries.iter().map(|e| e.path.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
        self.paths.truncate(n);
    }

    /// Stacks samples into a batch. Sample `i` draws its augmentation from
    /// stream `i` of a generator seeded with `aug_seed`, so results do not
    /// depend on batch composition.
    pub fn batch(&self, indices: &[usize], cfg: &PreprocessConfig, mode: Mode, aug_seed: u64) -> (Tensor<f32>, Vec<usize>) {
        let len = 3 * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            let mut rng = ChaCha8Rng::seed_from_u64(aug_seed);
            rng.set_stream(i as u64);
            data.extend(to_tensor(&self.images[i], cfg, mode, &mut rng));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_vec(data, indices.len(), 3, self.size, self.size), labels)
    }
}
