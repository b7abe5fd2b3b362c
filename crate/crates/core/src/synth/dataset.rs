use std::path::Path;

use super::io::{load_dataset, load_images, write_dataset, UnlabeledImage};
use super::layout::{sample_layout, validate_geometry};
use super::style::{render, DomainStyle, Sample};
use crate::error::Result;
use crate::losses::DomainLabel;

pub const SOURCE_TRAIN: &str = "source_train";
pub const TARGET_TRAIN: &str = "target_train";
pub const TARGET_TEST: &str = "target_test";

/// Parameters of a paired source/target dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub source_train: usize,
    pub target_train: usize,
    pub target_test: usize,
    pub source_style: DomainStyle,
    pub target_style: DomainStyle,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            classes: 4,
            height: 48,
            width: 48,
            source_train: 200,
            target_train: 200,
            target_test: 50,
            source_style: DomainStyle::source(),
            target_style: DomainStyle::target(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        validate_geometry(self.height, self.width, self.classes)?;
        self.source_style.validate()?;
        self.target_style.validate()
    }
}

/// All three splits in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source_train: Vec<Sample>,
    /// Labeled on disk; training code only sees [`DomainPair::target_images`].
    pub target_train: Vec<Sample>,
    pub target_test: Vec<Sample>,
}

impl DomainPair {
    pub fn target_images(&self) -> Vec<UnlabeledImage> {
        self.target_train.iter().map(UnlabeledImage::from).collect()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        write_dataset(&root.join(SOURCE_TRAIN), &self.source_train)?;
        write_dataset(&root.join(TARGET_TRAIN), &self.target_train)?;
        write_dataset(&root.join(TARGET_TEST), &self.target_test)
    }
}

/// Splits as the trainer sees them: labeled source, image-only target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub source: Vec<Sample>,
    pub target: Vec<UnlabeledImage>,
}

impl TrainingData {
    pub fn load(root: &Path) -> Result<Self> {
        Ok(TrainingData {
            source: load_dataset(&root.join(SOURCE_TRAIN))?,
            target: load_images(&root.join(TARGET_TRAIN))?,
        })
    }
}

impl From<&DomainPair> for TrainingData {
    fn from(pair: &DomainPair) -> Self {
        TrainingData {
            source: pair.source_train.clone(),
            target: pair.target_images(),
        }
    }
}

/// SplitMix64 finalizer; maps consecutive inputs to well-spread seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Layout seed of sample `index` in split `split` (0, 1, 2). Indices are
/// laid out in disjoint ranges per split before mixing, so no two samples
/// of a dataset share a layout seed.
pub fn layout_seed(dataset_seed: u64, split: u64, index: u64) -> u64 {
    splitmix64(dataset_seed ^ splitmix64((split << 40) | index))
}

fn split(
    cfg: &DatasetConfig,
    split: u64,
    count: usize,
    style: &DomainStyle,
    domain: DomainLabel,
) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| {
            let seed = layout_seed(cfg.seed, split, i);
            let layout = sample_layout(seed, cfg.height, cfg.width, cfg.classes)?;
            Ok(render(&layout, style, domain, splitmix64(seed)))
        })
        .collect()
}

pub fn generate(cfg: &DatasetConfig) -> Result<DomainPair> {
    cfg.validate()?;
    Ok(DomainPair {
        source_train: split(cfg, 0, cfg.source_train, &cfg.source_style, DomainLabel::Source)?,
        target_train: split(cfg, 1, cfg.target_train, &cfg.target_style, DomainLabel::Target)?,
        target_test: split(cfg, 2, cfg.target_test, &cfg.target_style, DomainLabel::Target)?,
    })
}

/// Fraction of pixels per class over a set of samples.
pub fn class_frequencies(samples: &[Sample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    let mut total = 0u64;
    for s in samples {
        for &l in &s.labels {
            if let Some(c) = counts.get_mut(usize::from(l)) {
                *c += 1;
                total += 1;
            }
        }
    }
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}
