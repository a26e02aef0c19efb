use std::path::Path;

use image::imageops::FilterType;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub augment: bool,
    pub flip_prob: f64,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f64,
    /// Maximum relative brightness change.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.25; 3],
            augment: true,
            flip_prob: 0.5,
            rotate_deg: 10.0,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("data.mean must be finite and data.std positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("data.flip_prob must lie in [0, 1], got {}", self.flip_prob)));
        }
        for (name, v) in [("data.rotate_deg", self.rotate_deg), ("data.brightness", self.brightness), ("data.contrast", self.contrast)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.brightness >= 1.0 || self.contrast >= 1.0 {
            return Err(Error::Config("data.brightness and data.contrast must be < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Decoded RGB image resized to a square, kept as bytes in CHW order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseImage {
    pub size: usize,
    pub chw: Vec<u8>,
}

/// Decode, replicate to three channels and resize (bilinear).
pub fn decode_resized(path: &Path, size: usize) -> Result<BaseImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let resized = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    let plane = size * size;
    let mut chw = vec![0u8; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            chw[c * plane + i] = px.0[c];
        }
    }
    Ok(BaseImage { size, chw })
}

/// Scale to `[0, 1]`, optionally augment, then standardize per channel.
pub fn to_tensor<R: Rng + ?Sized>(base: &BaseImage, cfg: &PreprocessConfig, mode: Mode, rng: &mut R) -> Vec<f32> {
    let mut x: Vec<f64> = base.chw.iter().map(|&v| v as f64 / 255.0).collect();
    if mode == Mode::Train && cfg.augment {
        augment(&mut x, base.size, cfg, rng);
    }
    let plane = base.size * base.size;
    x.chunks(plane)
        .enumerate()
        .flat_map(|(c, ch)| ch.iter().map(move |&v| ((v - cfg.mean[c]) / cfg.std[c]) as f32))
        .collect()
}

/// Horizontal flip, rotation, brightness and contrast jitter on a `[0, 1]` CHW image.
/// Every random draw happens regardless of the outcome so the stream stays aligned.
pub fn augment<R: Rng + ?Sized>(x: &mut [f64], size: usize, cfg: &PreprocessConfig, rng: &mut R) {
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let angle = (rng.random::<f64>() * 2.0 - 1.0) * cfg.rotate_deg;
    let brightness = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * cfg.brightness;
    let contrast = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * cfg.contrast;
    let plane = size * size;
    if flip {
        for ch in x.chunks_mut(plane) {
            for row in ch.chunks_mut(size) {
                row.reverse();
            }
        }
    }
    if angle != 0.0 {
        for ch in x.chunks_mut(plane) {
            let rotated = rotate(ch, size, angle.to_radians());
            ch.copy_from_slice(&rotated);
        }
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v = (((*v - mean) * contrast + mean) * brightness).clamp(0.0, 1.0);
    }
}

/// Rotation about the image centre with bilinear sampling; outside pixels become 0.
fn rotate(src: &[f64], size: usize, theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let centre = (size as f64 - 1.0) / 2.0;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
            0.0
        } else {
            src[y as usize * size + x as usize]
        }
    };
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 - centre;
            let dy = y as f64 - centre;
            let sx = c * dx + s * dy + centre;
            let sy = -s * dx + c * dy + centre;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[y * size + x] = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn save(dir: &Path, name: &str, img: image::DynamicImage) -> std::path::PathBuf {
        let p = dir.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn mid_gray_normalizes_to_constant() {
        let dir = tempfile::tempdir().unwrap();
        let p = save(dir.path(), "g.png", image::DynamicImage::ImageLuma8(image::GrayImage::from_pixel(40, 30, image::Luma([128]))));
        let base = decode_resized(&p, 128).unwrap();
        let cfg = PreprocessConfig::default();
        let t = to_tensor(&base, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.len(), 3 * 128 * 128);
        let want = ((128.0 / 255.0 - 0.5) / 0.25) as f32;
        assert!(t.iter().all(|&v| (v - want).abs() < 1e-6));
    }

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::GrayImage::from_fn(17, 23, |x, y| image::Luma([(x * 7 + y * 3) as u8]));
        let p = save(dir.path(), "g.png", image::DynamicImage::ImageLuma8(img));
        let base = decode_resized(&p, 32).unwrap();
        let plane = 32 * 32;
        assert_eq!(base.chw[..plane], base.chw[plane..2 * plane]);
        assert_eq!(base.chw[..plane], base.chw[2 * plane..]);
    }

    #[test]
    fn eval_is_deterministic_and_train_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_fn(50, 40, |x, y| image::Rgb([(x * 5) as u8, (y * 6) as u8, 90]));
        let p = save(dir.path(), "c.png", image::DynamicImage::ImageRgb8(img));
        let base = decode_resized(&p, 64).unwrap();
        assert_eq!(base, decode_resized(&p, 64).unwrap());
        let cfg = PreprocessConfig::default();
        let e1 = to_tensor(&base, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1));
        let e2 = to_tensor(&base, &cfg, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(e1, e2);
        let t1 = to_tensor(&base, &cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1));
        let t1b = to_tensor(&base, &cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1));
        let t2 = to_tensor(&base, &cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(t1, t1b);
        assert_ne!(t1, t2);
        assert!(t1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        let e = decode_resized(&p, 8).unwrap_err();
        assert!(e.to_string().contains("bad.png"));
    }

    #[test]
    fn quarter_turn_and_identity() {
        let src: Vec<f64> = (0..9).map(|v| v as f64).collect();
        assert_eq!(rotate(&src, 3, 0.0), src);
        let r = rotate(&src, 3, std::f64::consts::FRAC_PI_2);
        let want = [6.0, 3.0, 0.0, 7.0, 4.0, 1.0, 8.0, 5.0, 2.0];
        assert!(r.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9), "{r:?}");
    }
}
