use std::path::PathBuf;

use anyhow::Context;
use segattn::arch::check_input_size;
use segattn::data::{generate_synthetic, DatasetManifest, SegmentationSample, Split, SyntheticStyle};

use crate::config::{Settings, DATA_KEYS};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticStyle),
    Manifest(PathBuf),
}

/// Everything needed to reproduce an evaluation or training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

/// `N` for a square image or `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = |why: String| CliError::Usage(format!("invalid value `{s}` for `size`: {why}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (h.trim(), w.trim()),
        None => (s.trim(), s.trim()),
    };
    let h: usize = h.parse().map_err(|_| bad("expected N or HxW".into()))?;
    let w: usize = w.parse().map_err(|_| bad("expected N or HxW".into()))?;
    check_input_size(h, w).map_err(|e| bad(e.to_string()))?;
    Ok((h, w))
}

impl DataSpec {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let data = s.get("data");
        let source = match data.strip_prefix("synthetic:") {
            Some(style) => DataSource::Synthetic(
                style
                    .parse()
                    .map_err(|e| CliError::Usage(format!("invalid value `{data}` for `data`: {e}")))?,
            ),
            None => DataSource::Manifest(PathBuf::from(data)),
        };
        let (height, width) = parse_size(s.get("size"))?;
        Ok(Self {
            source,
            height,
            width,
            train_count: s.parse("train_count")?,
            test_count: s.parse("test_count")?,
            seed: s.parse("data_seed")?,
        })
    }

    /// The data keys as recorded in checkpoints and compared across them.
    pub fn descriptor(s: &Settings) -> Vec<(&'static str, String)> {
        DATA_KEYS.iter().map(|k| (k.name, s.get(k.name).to_string())).collect()
    }

    pub fn load(&self, split: Split) -> anyhow::Result<Vec<SegmentationSample>> {
        match &self.source {
            DataSource::Synthetic(style) => {
                let n = self.train_count + self.test_count;
                let mut all = generate_synthetic(n, self.height, self.width, self.seed, *style)?;
                let test = all.split_off(self.train_count);
                Ok(match split {
                    Split::Train => all,
                    Split::Test => test,
                })
            }
            DataSource::Manifest(path) => {
                let manifest = DatasetManifest::load(path)?;
                let samples = manifest
                    .load_split(split, self.height, self.width)
                    .with_context(|| format!("loading {split} split of {}", path.display()))?;
                Ok(samples)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("64").unwrap(), (64, 64));
        assert_eq!(parse_size("32x48").unwrap(), (32, 48));
        assert!(matches!(parse_size("30"), Err(CliError::Usage(_))));
        assert!(parse_size("ax3").is_err());
    }

    #[test]
    fn synthetic_splits_are_disjoint_and_sized() {
        let spec = DataSpec {
            source: DataSource::Synthetic(SyntheticStyle::Cells),
            height: 16,
            width: 32,
            train_count: 3,
            test_count: 2,
            seed: 4,
        };
        let train = spec.load(Split::Train).unwrap();
        let test = spec.load(Split::Test).unwrap();
        assert_eq!((train.len(), test.len()), (3, 2));
        assert_eq!(test[0].size(), (16, 32));
        assert!(train.iter().all(|t| test.iter().all(|s| s.id != t.id)));
    }
}
