use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{GanObjective, LossWeights};
use crate::networks::{DiscriminatorSpec, SegNetSpec, DISCRIMINATOR_CHANNELS};
use crate::optim::{D_BASE_LR, G_SCRATCH_LR};

/// Where (if anywhere) the adversarial alignment is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AdaptMode {
    /// Segmentation loss on source only; no discriminator.
    SourceOnly,
    /// One discriminator on the level-2 feature map.
    Feature,
    /// One discriminator on the final softmax output.
    #[default]
    SingleLevel,
    /// Discriminators on both softmax outputs.
    MultiLevel,
}

impl AdaptMode {
    pub const ALL: [AdaptMode; 4] = [
        AdaptMode::SourceOnly,
        AdaptMode::Feature,
        AdaptMode::SingleLevel,
        AdaptMode::MultiLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdaptMode::SourceOnly => "source_only",
            AdaptMode::Feature => "feature",
            AdaptMode::SingleLevel => "single_level",
            AdaptMode::MultiLevel => "multi_level",
        }
    }

    pub fn discriminators(self) -> usize {
        match self {
            AdaptMode::SourceOnly => 0,
            AdaptMode::Feature | AdaptMode::SingleLevel => 1,
            AdaptMode::MultiLevel => 2,
        }
    }

    /// Number of segmentation outputs that receive a supervised loss.
    pub fn seg_levels(self) -> usize {
        if self == AdaptMode::MultiLevel {
            2
        } else {
            1
        }
    }

    pub fn default_weights(self) -> LossWeights {
        if self == AdaptMode::MultiLevel {
            LossWeights::multi_level()
        } else {
            LossWeights::single_level()
        }
    }
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdaptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdaptMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

pub fn gan_name(gan: GanObjective) -> &'static str {
    match gan {
        GanObjective::Vanilla => "vanilla",
        GanObjective::LeastSquares => "least_squares",
    }
}

pub fn parse_gan(s: &str) -> Result<GanObjective> {
    match s {
        "vanilla" => Ok(GanObjective::Vanilla),
        "least_squares" => Ok(GanObjective::LeastSquares),
        _ => Err(Error::Config(format!("unknown GAN objective {s:?}"))),
    }
}

/// Largest step count whose counter survives the f32 checkpoint record.
pub const MAX_STEPS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: AdaptMode,
    pub gan: GanObjective,
    pub weights: LossWeights,
    pub total_steps: u64,
    pub seed: u64,
    pub g_lr: f64,
    pub d_lr: f64,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: u64,
    pub widths: [usize; 5],
    pub disc_channels: Vec<usize>,
    /// Leave wall-clock timings out of the log so reruns are byte-identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: AdaptMode::SingleLevel,
            gan: GanObjective::Vanilla,
            weights: LossWeights::single_level(),
            total_steps: 2000,
            seed: 0,
            g_lr: G_SCRATCH_LR,
            d_lr: D_BASE_LR,
            checkpoint_every: 0,
            widths: SegNetSpec::DEFAULT_WIDTHS,
            disc_channels: DISCRIMINATOR_CHANNELS.to_vec(),
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for `mode`, including its loss weights.
    pub fn for_mode(mode: AdaptMode) -> Self {
        TrainConfig {
            mode,
            weights: mode.default_weights(),
            ..TrainConfig::default()
        }
    }

    /// Sets λ_adv for every level, keeping the level-2 ratio of the defaults.
    pub fn with_lambda_adv(mut self, lambda: f32) -> Self {
        let base = self.mode.default_weights();
        self.weights.lambda_adv = base
            .lambda_adv
            .iter()
            .enumerate()
            .map(|(i, l)| if i == 0 { lambda } else { l * (lambda / base.lambda_adv[0]) })
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.weights.levels() != self.mode.seg_levels() {
            return Err(Error::Config(format!(
                "mode {} needs {} weight levels, got {}",
                self.mode,
                self.mode.seg_levels(),
                self.weights.levels()
            )));
        }
        if self.total_steps >= MAX_STEPS {
            return Err(Error::Config(format!(
                "total_steps {} must be below {MAX_STEPS}",
                self.total_steps
            )));
        }
        for (name, lr) in [("g_lr", self.g_lr), ("d_lr", self.d_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} {lr} must be finite and >= 0")));
            }
        }
        DiscriminatorSpec::new(1)
            .with_channels(self.disc_channels.clone())
            .validate()
    }

    pub fn seg_spec(&self, classes: usize) -> SegNetSpec {
        SegNetSpec::new(classes).with_widths(self.widths)
    }

    /// Input channels of each discriminator: the class count for softmax
    /// outputs, the level-2 width for features.
    pub fn disc_specs(&self, classes: usize) -> Vec<DiscriminatorSpec> {
        let input = match self.mode {
            AdaptMode::Feature => self.seg_spec(classes).level2_channels(),
            _ => classes,
        };
        (0..self.mode.discriminators())
            .map(|_| DiscriminatorSpec::new(input).with_channels(self.disc_channels.clone()))
            .collect()
    }

    /// FNV-1a hash of everything that determines parameter and optimizer
    /// record shapes.
    pub fn model_hash(&self, classes: usize) -> u64 {
        let seg = self.seg_spec(classes);
        let text = format!(
            "mode={};classes={};in={};widths={:?};aspp={:?};disc={:?}",
            self.mode, classes, seg.in_channels, seg.widths, seg.aspp_rates, self.disc_channels
        );
        fnv1a(text.as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AdaptMode::ALL {
            assert_eq!(m.name().parse::<AdaptMode>().unwrap(), m);
        }
        assert!("both".parse::<AdaptMode>().is_err());
        assert_eq!(parse_gan(gan_name(GanObjective::LeastSquares)).unwrap(), GanObjective::LeastSquares);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::for_mode(AdaptMode::MultiLevel).validate().is_ok());
        let bad = TrainConfig {
            mode: AdaptMode::MultiLevel,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let neg = TrainConfig::default().with_lambda_adv(-1.0);
        assert!(neg.validate().is_err());
        let long = TrainConfig {
            total_steps: MAX_STEPS,
            ..TrainConfig::default()
        };
        assert!(long.validate().is_err());
    }

    #[test]
    fn lambda_sweep_keeps_level_ratio() {
        let c = TrainConfig::for_mode(AdaptMode::MultiLevel).with_lambda_adv(0.002);
        assert_eq!(c.weights.lambda_adv[0], 0.002);
        assert!((c.weights.lambda_adv[1] - 0.0004).abs() < 1e-9);
        assert_eq!(c.weights.lambda_seg, vec![1.0, 0.1]);
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            seed: 9,
            total_steps: 10,
            ..a.clone()
        };
        assert_eq!(a.model_hash(4), b.model_hash(4));
        let c = TrainConfig {
            widths: [8, 16, 32, 32, 32],
            ..a.clone()
        };
        assert_ne!(a.model_hash(4), c.model_hash(4));
        assert_ne!(a.model_hash(4), a.model_hash(5));
    }

    #[test]
    fn feature_discriminator_reads_level2_width() {
        let c = TrainConfig::for_mode(AdaptMode::Feature);
        assert_eq!(c.disc_specs(4)[0].in_channels, 64);
        assert_eq!(TrainConfig::default().disc_specs(4)[0].in_channels, 4);
        assert!(TrainConfig::for_mode(AdaptMode::SourceOnly).disc_specs(4).is_empty());
    }
}
