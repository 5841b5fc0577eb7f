//! SAR image features: discretized gray level and Sobel gradient norm.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionRecord, EmpiricalDistribution};
use crate::error::{Error, Result};

/// Largest 16-bit pixel value.
pub const PIXEL_MAX: u32 = 65535;

/// Largest attainable Sobel norm, `65535·√5/2`.
///
/// Evaluated the same way as [`sobel_gradient_norm`] evaluates the extremal
/// window, so the two agree bit for bit.
pub fn g_max() -> f64 {
    let gx4 = 4.0 * PIXEL_MAX as f64;
    let gy4 = 2.0 * PIXEL_MAX as f64;
    (gx4 * gx4 + gy4 * gy4).sqrt() / 4.0
}

/// A single-channel 16-bit image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    height: usize,
    width: usize,
    pixels: Vec<u16>,
    pub source: Option<PathBuf>,
    pub label: Option<String>,
}

impl SarImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u16>) -> Result<Self> {
        if height * width != pixels.len() || height == 0 || width == 0 {
            return Err(Error::Input(format!(
                "{} pixels do not form a {height}×{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            source: None,
            label: None,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u16) -> Result<Self> {
        let pixels = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.pixels[r * self.width + c]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::from_fn(self.width, self.height, |r, c| self.get(c, r)).expect("nonempty");
        t.source.clone_from(&self.source);
        t.label.clone_from(&self.label);
        t
    }

    /// Decode a grayscale PNG; 8-bit inputs are scaled by 257.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            DynamicImage::ImageLuma8(buf) => {
                log::warn!("{}: 8-bit image scaled to 16 bits", path.display());
                buf.into_raw().into_iter().map(|v| v as u16 * 257).collect()
            }
            other => {
                return Err(Error::format(
                    path,
                    format!("expected single-channel grayscale, got {:?}", other.color()),
                ))
            }
        };
        let mut out = Self::new(h, w, pixels)?;
        out.source = Some(path.to_path_buf());
        Ok(out)
    }

    /// Write as a 16-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone()).expect("size checked");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// `floor(v · M / 65535)` per pixel, row-major; values lie in `[0, M]`.
pub fn discretize_intensity(img: &SarImage, levels: u32) -> Vec<u32> {
    img.pixels.iter().map(|&v| intensity_level(v, levels)).collect()
}

fn intensity_level(v: u16, levels: u32) -> u32 {
    ((v as u64 * levels as u64) / PIXEL_MAX as u64) as u32
}

/// Real-valued matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }
}

/// Sobel gradient norm `√(gx² + gy²)` with the ¼-scaled kernels, on the
/// `(H−2)×(W−2)` interior.
///
/// `gx` responds to left-to-right increases and `gy` to top-to-bottom ones.
/// Both are accumulated in integers before the single rounding of the root.
pub fn sobel_gradient_norm(img: &SarImage) -> Result<Grid> {
    let (h, w) = (img.height, img.width);
    if h < 3 || w < 3 {
        return Err(Error::Input(format!("Sobel needs at least 3×3 pixels, image is {h}×{w}")));
    }
    let p = |r: usize, c: usize| img.get(r, c) as i64;
    let mut values = Vec::with_capacity((h - 2) * (w - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let gx4 = (p(r - 1, c + 1) + 2 * p(r, c + 1) + p(r + 1, c + 1)) - (p(r - 1, c - 1) + 2 * p(r, c - 1) + p(r + 1, c - 1));
            let gy4 = (p(r + 1, c - 1) + 2 * p(r + 1, c) + p(r + 1, c + 1)) - (p(r - 1, c - 1) + 2 * p(r - 1, c) + p(r - 1, c + 1));
            let (gx4, gy4) = (gx4 as f64, gy4 as f64);
            values.push((gx4 * gx4 + gy4 * gy4).sqrt() / 4.0);
        }
    }
    Ok(Grid {
        height: h - 2,
        width: w - 2,
        values,
    })
}

/// `floor(v / (G_max / M))`, capped at `M`.
///
/// Ratios within 1e-9 of an integer snap to it, so `G_max` maps to `M` and
/// `G_max / 2` to `M / 2` despite rounding in the product.
pub fn discretize_filter(values: &[f64], levels: u32) -> Result<Vec<u32>> {
    let gm = g_max();
    values
        .iter()
        .map(|&v| {
            if !(v >= 0.0) {
                return Err(Error::Input(format!("negative or NaN filter value {v}")));
            }
            let ratio = v * levels as f64 / gm;
            let near = ratio.round();
            let level = if (ratio - near).abs() <= 1e-9 * near.max(1.0) { near } else { ratio.floor() };
            Ok((level as u32).min(levels))
        })
        .collect()
}

/// Feature extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SarFeatureConfig {
    #[serde(default = "default_intensity")]
    pub intensity_levels: u32,
    #[serde(default = "default_filter")]
    pub filter_levels: u32,
    #[serde(default)]
    pub include_derivative: bool,
    /// Uniformly subsample at most this many pixels per image.
    #[serde(default)]
    pub pixel_cap: Option<usize>,
    #[serde(default)]
    pub cap_seed: u64,
}

fn default_intensity() -> u32 {
    256
}
fn default_filter() -> u32 {
    200
}

impl Default for SarFeatureConfig {
    fn default() -> Self {
        Self {
            intensity_levels: default_intensity(),
            filter_levels: default_filter(),
            include_derivative: false,
            pixel_cap: None,
            cap_seed: 0,
        }
    }
}

impl SarFeatureConfig {
    /// Gray level only, 256 levels.
    pub fn univariate() -> Self {
        Self::default()
    }

    /// Gray level in 100 levels and gradient norm in 200.
    pub fn bivariate() -> Self {
        Self {
            intensity_levels: 100,
            include_derivative: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intensity_levels < 2 || self.filter_levels < 2 {
            return Err(Error::Config("discretization levels must be ≥ 2".into()));
        }
        if self.pixel_cap == Some(0) {
            return Err(Error::Config("pixel_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Empirical distribution of an image's features, labeled like the image.
///
/// Univariate: one gray level per pixel. Bivariate: `(X₁, X₂)` over interior
/// pixels, where the gradient is defined.
pub fn extract_record(img: &SarImage, config: &SarFeatureConfig) -> Result<DistributionRecord> {
    config.validate()?;
    let (data, dim) = if config.include_derivative {
        let grad = sobel_gradient_norm(img)?;
        let x2 = discretize_filter(&grad.values, config.filter_levels)?;
        let mut data = Vec::with_capacity(2 * x2.len());
        for r in 1..img.height - 1 {
            for c in 1..img.width - 1 {
                let k = (r - 1) * grad.width + (c - 1);
                data.push(intensity_level(img.get(r, c), config.intensity_levels) as f64);
                data.push(x2[k] as f64);
            }
        }
        (data, 2)
    } else {
        let data = discretize_intensity(img, config.intensity_levels).into_iter().map(f64::from).collect();
        (data, 1)
    };
    let data = match config.pixel_cap {
        Some(cap) if data.len() / dim > cap => {
            let n = data.len() / dim;
            let mut rng = ChaCha8Rng::seed_from_u64(config.cap_seed);
            let mut keep = index::sample(&mut rng, n, cap).into_vec();
            keep.sort_unstable();
            keep.iter().flat_map(|&j| data[j * dim..(j + 1) * dim].iter().copied()).collect()
        }
        _ => data,
    };
    let e = EmpiricalDistribution::new(data, dim)?;
    Ok(DistributionRecord::new(e.into(), img.label.clone()))
}

/// One image chosen by [`ingest_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestedFile {
    pub class: String,
    pub path: PathBuf,
}

/// Sorted `*.png` files of one class directory.
pub fn list_class_files(root: &Path, class: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(class);
    if !dir.is_dir() {
        return Err(Error::Input(format!("missing class directory {}", dir.display())));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Sample `per_class` images per class without replacement and extract
/// their records.
///
/// Selection depends only on the sorted file listing and `seed`; records
/// follow the order of `classes`, then file name.
pub fn ingest_dataset(
    root: &Path,
    classes: &[String],
    per_class: usize,
    seed: u64,
    config: &SarFeatureConfig,
) -> Result<(Vec<DistributionRecord>, Vec<IngestedFile>)> {
    config.validate()?;
    let mut chosen = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let files = list_class_files(root, class)?;
        if files.len() < per_class {
            return Err(Error::Input(format!(
                "class {class} has {} images, {per_class} requested",
                files.len()
            )));
        }
        let mut rng = crate::seeds::stream_rng(seed, c as u64);
        let mut picks = index::sample(&mut rng, files.len(), per_class).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|k| IngestedFile {
            class: class.clone(),
            path: files[k].clone(),
        }));
    }
    let records = chosen
        .par_iter()
        .map(|f| {
            let mut img = SarImage::load(&f.path)?;
            img.label = Some(f.class.clone());
            extract_record(&img, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, chosen))
}
