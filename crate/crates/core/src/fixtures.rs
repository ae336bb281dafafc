//! Seeded synthetic image datasets for tests, demos and benchmarks.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// The six common tree species used by the demo dataset, in survey order.
pub const TREE_CLASSES: [&str; 6] = ["cypress", "locust", "pine", "sycamore", "ginkgo", "magnolia"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub size: u32,
    pub seed: u64,
    /// Standard deviation of per-pixel noise, in 8-bit levels.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: TREE_CLASSES.iter().map(|s| s.to_string()).collect(),
            per_class: 10,
            size: 64,
            seed: 7,
            noise: 24.0,
        }
    }
}

/// HSV (hue in degrees, s and v in [0, 1]) to 8-bit RGB components.
fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// One image of class `class` out of `num_classes`: a dominant hue unique to
/// the class, a darker vertical band of random width and position, and
/// Gaussian pixel noise.
pub fn synthetic_image(class: usize, num_classes: usize, size: u32, noise: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let hue = 360.0 * class as f64 / num_classes as f64 + rng.random_range(-8.0..8.0);
    let value = rng.random_range(0.85..1.0);
    let base = hsv(hue, 1.0, value);
    let band = hsv(hue, 0.8, value * 0.6);
    let band_w = rng.random_range(size / 8..=size / 4).max(1);
    let band_x = rng.random_range(0..size - band_w);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid noise");
    RgbImage::from_fn(size, size, |x, _| {
        let colour = if (band_x..band_x + band_w).contains(&x) { band } else { base };
        let mut px = [0u8; 3];
        for (out, c) in px.iter_mut().zip(colour) {
            let jitter = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            *out = (c + jitter).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// Writes `root/<class>/<class>_NNN.png` for every class. Returns the
/// written paths in class then index order.
pub fn write_synthetic_dataset(root: &Path, spec: &SyntheticSpec) -> Result<Vec<PathBuf>> {
    if spec.classes.is_empty() || spec.per_class == 0 || spec.size < 8 {
        return Err(Error::invalid(
            "synthetic dataset needs classes, at least one image per class and size >= 8",
        ));
    }
    let mut written = Vec::new();
    for (c, name) in spec.classes.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..spec.per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((c as u64) << 32) ^ i as u64);
            let img = synthetic_image(c, spec.classes.len(), spec.size, spec.noise, &mut rng);
            let path = dir.join(format!("{name}_{i:03}.png"));
            img.save(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
            written.push(path);
        }
    }
    Ok(written)
}
