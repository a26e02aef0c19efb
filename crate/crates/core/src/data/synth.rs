//! Synthetic ultrasound-like nodule images for smoke tests and desk-scale runs.
//!
//! Benign nodules are smooth, wider-than-tall and iso- to hyperechoic;
//! malignant ones are hypoechoic, taller-than-wide with an irregular margin.
//! Each class has two appearance subtypes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::split::{SplitEntry, SplitManifest, SplitName};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 120,
            val: 40,
            test: 40,
            size: 96,
            seed: 0,
        }
    }
}

pub fn render_nodule<R: Rng + ?Sized>(label: usize, size: usize, rng: &mut R) -> image::GrayImage {
    let s = size as f64;
    let speckle = Normal::new(1.0, 0.25).expect("valid normal");
    let subtype = rng.random::<bool>();
    let cx = s * (0.4 + 0.2 * rng.random::<f64>());
    let cy = s * (0.4 + 0.2 * rng.random::<f64>());
    let r = s * (0.16 + 0.08 * rng.random::<f64>());
    let (rx, ry, level, rim, wobble) = if label == 0 {
        let level = if subtype { 0.55 } else { 0.42 };
        (r * 1.3, r * 0.85, level, if subtype { 0.25 } else { 0.0 }, 0.03)
    } else {
        let level = if subtype { 0.12 } else { 0.2 };
        (r * 0.85, r * 1.25, level, 0.0, 0.22)
    };
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let lobes = if label == 0 { 2.0 } else { 7.0 + (rng.random::<f64>() * 4.0).floor() };
    let background = 0.32 + 0.06 * rng.random::<f64>();
    image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        let theta = dy.atan2(dx);
        let edge = 1.0 + wobble * (lobes * theta + phase).sin();
        let d = (dx * dx + dy * dy).sqrt() / edge;
        let depth = 0.8 + 0.4 * (y as f64 / s);
        let mut v = if d < 1.0 {
            level
        } else if d < 1.12 {
            level + rim
        } else {
            background * depth
        };
        if label == 1 && !subtype && d < 0.7 && (x * 7 + y * 13) % 23 == 0 {
            // punctate echogenic foci
            v += 0.5;
        }
        let noisy = v * speckle.sample(rng);
        image::Luma([(noisy.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Writes `images/<split>_<index>.png` and `splits/<split>.txt` under `root`.
pub fn generate(root: &Path, cfg: &SynthConfig) -> Result<Vec<SplitManifest>> {
    if cfg.size < 16 {
        return Err(Error::Invalid("synthetic image size must be >= 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fs::create_dir_all(root.join("images"))?;
    let mut manifests = Vec::new();
    for (name, n) in [(SplitName::Train, cfg.train), (SplitName::Val, cfg.val), (SplitName::Test, cfg.test)] {
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i + rng.random_range(0..2usize)) % 2;
            let rel = format!("images/{name}_{i:05}.png");
            render_nodule(label, cfg.size, &mut rng)
                .save(root.join(&rel))
                .map_err(|e| Error::Image {
                    path: root.join(&rel),
                    message: e.to_string(),
                })?;
            entries.push(SplitEntry { path: rel, label });
        }
        let m = SplitManifest { name, entries };
        m.write(&root.join("splits").join(format!("{name}.txt")))?;
        manifests.push(m);
    }
    Ok(manifests)
}
