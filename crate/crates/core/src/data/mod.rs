//! Image and mask ingestion, manifests, batching and synthetic datasets.

mod pnm;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::arch::check_input_size;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use pnm::{decode_pnm, encode_pnm, read_image, write_image, RawImage};
pub use synth::{generate_synthetic, SyntheticStyle, FOREGROUND_RANGE};

#[cfg(feature = "png")]
pub use pnm::decode_png;

/// Default synthetic split sizes.
pub const DEFAULT_TRAIN: usize = 24;
pub const DEFAULT_TEST: usize = 5;

/// One image and its binary mask, both shaped `(1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub id: String,
}

impl SegmentationSample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>, id: impl Into<String>) -> Result<Self> {
        let s = Self {
            image,
            mask,
            id: id.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn size(&self) -> (usize, usize) {
        let sh = self.image.shape();
        (sh[1], sh[2])
    }

    pub fn validate(&self) -> Result<()> {
        let sh = self.image.shape();
        if sh.len() != 3 || sh[0] != 1 {
            return Err(Error::InvalidShape {
                shape: sh.to_vec(),
                reason: "sample image must be (1, H, W)".into(),
            });
        }
        if self.mask.shape() != sh {
            return Err(Error::mismatch("sample", sh, self.mask.shape()));
        }
        check_input_size(sh[1], sh[2])?;
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format(format!("sample `{}`: image values outside [0, 1]", self.id)));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format(format!("sample `{}`: mask is not binary", self.id)));
        }
        Ok(())
    }
}

/// Nearest-neighbour resampling of a single-channel raster.
pub fn resize_nearest(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let sy = ((2 * y + 1) * sh / (2 * dh)).min(sh - 1);
        for x in 0..dw {
            let sx = ((2 * x + 1) * sw / (2 * dw)).min(sw - 1);
            out.push(src[sy * sw + sx]);
        }
    }
    out
}

fn distinct_levels(values: &[f64]) -> usize {
    let mut seen: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Loads an image/mask pair, converting to one channel and resampling to
/// `height x width`. Mask pixels at or above mid-gray become 1.
pub fn load_sample(image_path: &Path, mask_path: &Path, height: usize, width: usize) -> Result<SegmentationSample> {
    check_input_size(height, width)?;
    let img = read_image(image_path)?;
    let mask = read_image(mask_path)?;
    let pixels = resize_nearest(&img.luma(), img.width, img.height, width, height);
    let mask_luma = mask.luma();
    let levels = distinct_levels(&mask_luma);
    if levels > 2 {
        log::warn!(
            "{}: mask has {levels} gray levels; thresholding at mid-gray",
            mask_path.display()
        );
    }
    let mask_px = resize_nearest(&mask_luma, mask.width, mask.height, width, height);
    let image = Tensor::from_vec(&[1, height, width], pixels.iter().map(|&v| v as f32).collect())?;
    let mask = Tensor::from_vec(
        &[1, height, width],
        mask_px.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
    )?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SegmentationSample::new(image, mask, id)
}

/// Writes an image (or mask) tensor `(1, H, W)` in [0, 1] as a binary PGM.
pub fn write_pgm(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let sh = t.shape();
    if sh.len() != 3 || sh[0] != 1 {
        return Err(Error::InvalidShape {
            shape: sh.to_vec(),
            reason: "expected (1, H, W)".into(),
        });
    }
    write_image(
        path,
        &RawImage {
            width: sh[2],
            height: sh[1],
            channels: 1,
            samples: t.data().iter().map(|&v| v as f64).collect(),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// Tab-separated `image<TAB>mask<TAB>split` lines; `#` starts a comment.
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim_end();
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, mask, split] = fields[..] else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            let split: Split = split
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
            let image = base.join(image.trim());
            if !seen.insert(image.clone()) {
                return Err(Error::Format(format!(
                    "manifest line {}: image {} listed twice",
                    n + 1,
                    image.display()
                )));
            }
            entries.push(ManifestEntry {
                image,
                mask: base.join(mask.trim()),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Text form with paths written relative to `base` where possible.
    pub fn render(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::from("# image\tmask\tsplit\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", rel(&e.image), rel(&e.mask), e.split));
        }
        out
    }

    /// Loads every entry of one split, in manifest order.
    pub fn load_split(&self, split: Split, height: usize, width: usize) -> Result<Vec<SegmentationSample>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| load_sample(&e.image, &e.mask, height, width))
            .collect()
    }
}

/// Writes samples as PGM pairs plus a manifest; returns the manifest path.
pub fn write_dataset(dir: &Path, train: &[SegmentationSample], test: &[SegmentationSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest::default();
    for (split, samples) in [(Split::Train, train), (Split::Test, test)] {
        for s in samples {
            let image = dir.join(format!("{}.pgm", s.id));
            let mask = dir.join(format!("{}_mask.pgm", s.id));
            write_pgm(&image, &s.image)?;
            write_pgm(&mask, &s.mask)?;
            manifest.entries.push(ManifestEntry { image, mask, split });
        }
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest.render(dir))?;
    Ok(path)
}

/// Index batches for one epoch. With an RNG the order is shuffled; the last
/// batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, rng: Option<&mut SeededRng>) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Batches of samples; shuffled when a seed is given, manifest order otherwise.
pub fn batch_iterator(
    data: &[SegmentationSample],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<impl Iterator<Item = Vec<&SegmentationSample>>> {
    let mut rng = shuffle_seed.map(crate::rng::seeded);
    let batches = batch_indices(data.len(), batch_size, rng.as_mut())?;
    Ok(batches.into_iter().map(move |b| b.into_iter().map(|i| &data[i]).collect()))
}
