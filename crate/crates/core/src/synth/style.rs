use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layout::{SceneLayout, MAX_CLASSES};
use crate::error::{Error, Result};
use crate::losses::DomainLabel;
use crate::tensor::Tensor;

/// Appearance of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStyle {
    /// RGB base color per class id.
    pub base_colors: [[f32; 3]; MAX_CLASSES],
    /// Amplitude of the per-class luminance texture.
    pub texture: f32,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f32,
    pub gamma: f32,
    pub brightness: f32,
}

impl DomainStyle {
    /// Daylight palette.
    pub fn source() -> Self {
        DomainStyle {
            base_colors: [
                [0.45, 0.45, 0.47], // road
                [0.55, 0.75, 0.95], // sky
                [0.70, 0.45, 0.35], // building
                [0.25, 0.60, 0.25], // vegetation
                [0.85, 0.15, 0.15], // car
                [0.80, 0.80, 0.20], // pole
                [0.95, 0.60, 0.10], // sign
                [0.60, 0.20, 0.70], // person
            ],
            texture: 0.12,
            noise: 0.04,
            gamma: 1.0,
            brightness: 0.0,
        }
    }

    /// Dusk palette: shifted hues, lower contrast, a gamma curve and a
    /// brightness lift. Textures keep the same structure as the source.
    pub fn target() -> Self {
        DomainStyle {
            base_colors: [
                [0.40, 0.30, 0.45], // road
                [0.70, 0.50, 0.55], // sky
                [0.35, 0.35, 0.50], // building
                [0.30, 0.40, 0.35], // vegetation
                [0.60, 0.25, 0.40], // car
                [0.55, 0.55, 0.35], // pole
                [0.65, 0.45, 0.35], // sign
                [0.45, 0.30, 0.55], // person
            ],
            texture: 0.12,
            noise: 0.06,
            gamma: 1.3,
            brightness: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let colors_ok = self
            .base_colors
            .iter()
            .flatten()
            .all(|c| (0.0..=1.0).contains(c));
        if !colors_ok {
            return Err(Error::Config("base colors must lie in [0, 1]".into()));
        }
        if !(self.texture >= 0.0 && self.noise >= 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "invalid style: texture {}, noise {}, gamma {}",
                self.texture, self.noise, self.gamma
            )));
        }
        if !self.brightness.is_finite() {
            return Err(Error::Config("brightness must be finite".into()));
        }
        Ok(())
    }
}

/// One image with its label map, tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// 3×H×W image with values in [0, 1].
    pub image: Tensor,
    pub labels: Vec<u8>,
    pub classes: usize,
    pub domain: DomainLabel,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.image.dims()[2]
    }

    /// The image as a 1×3×H×W batch.
    pub fn batch_image(&self) -> Tensor {
        self.image
            .clone()
            .reshape([1, 3, self.height(), self.width()])
            .expect("same element count")
    }
}

/// Luminance texture in [-1, 1] for class `class` at pixel (y, x). The
/// patterns are shared by all domains; only their amplitude is styled.
fn texture(class: u8, y: usize, x: usize, height: usize) -> f32 {
    let (fy, fx) = (y as f32, x as f32);
    match class {
        // road: horizontal lane striping
        0 => (fy * std::f32::consts::FRAC_PI_2).sin(),
        // sky: vertical gradient
        1 => 1.0 - 2.0 * fy / height as f32,
        // building: window grid
        2 => {
            if (y / 3 + x / 3) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        // vegetation: blotches
        3 => (fx * 1.1).sin() * (fy * 0.9 + 0.5).sin(),
        // car: vertical stripes
        4 => (fx * std::f32::consts::PI * 0.5).cos(),
        _ => ((fx + fy) * 0.7).sin(),
    }
}

/// Paints a layout: base color plus texture plus noise, clamped to [0, 1],
/// then gamma and brightness, clamped again.
pub fn render(layout: &SceneLayout, style: &DomainStyle, domain: DomainLabel, seed: u64) -> Sample {
    let (h, w) = (layout.height, layout.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, style.noise.max(0.0)).expect("finite noise");
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let class = layout.label(y, x);
            let tex = style.texture * texture(class, y, x, h);
            let base = style.base_colors[usize::from(class)];
            for (ch, &b) in base.iter().enumerate() {
                let noise = if style.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                let v = (b + tex + noise).clamp(0.0, 1.0);
                let v = v.powf(style.gamma) + style.brightness;
                data[(ch * h + y) * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Sample {
        image: Tensor::from_vec([3, h, w], data).expect("image shape"),
        labels: layout.labels.clone(),
        classes: layout.classes,
        domain,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_layout;

    #[test]
    fn shared_layout_shares_labels() {
        let layout = sample_layout(3, 48, 48, 4).unwrap();
        let s = render(&layout, &DomainStyle::source(), DomainLabel::Source, 1);
        let t = render(&layout, &DomainStyle::target(), DomainLabel::Target, 2);
        assert_eq!(s.labels, t.labels);
        assert_ne!(s.image, t.image);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(t.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flat_style_paints_base_colors() {
        let layout = sample_layout(9, 32, 32, 5).unwrap();
        let style = DomainStyle {
            texture: 0.0,
            noise: 0.0,
            gamma: 1.0,
            brightness: 0.0,
            ..DomainStyle::source()
        };
        let s = render(&layout, &style, DomainLabel::Source, 0);
        for y in 0..32 {
            for x in 0..32 {
                let base = style.base_colors[usize::from(layout.label(y, x))];
                for ch in 0..3 {
                    assert_eq!(s.image.data()[(ch * 32 + y) * 32 + x], base[ch]);
                }
            }
        }
    }

    #[test]
    fn brightness_offset_shifts_mean() {
        let layout = sample_layout(5, 48, 48, 4).unwrap();
        let dark = DomainStyle {
            noise: 0.0,
            ..DomainStyle::source()
        };
        // All base colors ± texture stay below 0.8, so no clamping occurs.
        let dark = DomainStyle {
            base_colors: dark.base_colors.map(|c| c.map(|v| v.min(0.6))),
            ..dark
        };
        let bright = DomainStyle {
            brightness: 0.2,
            ..dark.clone()
        };
        let a = render(&layout, &dark, DomainLabel::Source, 0);
        let b = render(&layout, &bright, DomainLabel::Target, 0);
        let mean = |s: &Sample| s.image.sum() / s.image.numel() as f32;
        assert!((mean(&b) - mean(&a) - 0.2).abs() < 1e-4);
    }

    #[test]
    fn style_validation() {
        assert!(DomainStyle::source().validate().is_ok());
        assert!(DomainStyle::target().validate().is_ok());
        let bad = DomainStyle {
            gamma: 0.0,
            ..DomainStyle::source()
        };
        assert!(bad.validate().is_err());
    }
}
