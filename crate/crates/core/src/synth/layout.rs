use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_CLASSES: usize = 3;
pub const MAX_CLASSES: usize = 8;

/// Class ids in drawing order. A scene with C classes uses the first C.
pub const CLASS_NAMES: [&str; MAX_CLASSES] = [
    "road",
    "sky",
    "building",
    "vegetation",
    "car",
    "pole",
    "sign",
    "person",
];

const ROAD: u8 = 0;
const SKY: u8 = 1;
const BUILDING: u8 = 2;
const VEGETATION: u8 = 3;
const CAR: u8 = 4;
const POLE: u8 = 5;
const SIGN: u8 = 6;
const PERSON: u8 = 7;

/// Street-scene label map: sky band on top, road band at the bottom,
/// buildings in between and rising into the sky, then vegetation blobs and
/// small objects when the class count allows them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    pub labels: Vec<u8>,
}

impl SceneLayout {
    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Number of distinct class ids present.
    pub fn distinct_classes(&self) -> usize {
        let mut seen = [false; 256];
        self.labels.iter().for_each(|&l| seen[usize::from(l)] = true);
        seen.iter().filter(|&&s| s).count()
    }

    fn fill_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, class: u8) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.labels[y * self.width + x] = class;
            }
        }
    }

    fn fill_ellipse(&mut self, cy: f32, cx: f32, ry: f32, rx: f32, class: u8, over: &[u8]) {
        for y in 0..self.height {
            for x in 0..self.width {
                let dy = (y as f32 + 0.5 - cy) / ry;
                let dx = (x as f32 + 0.5 - cx) / rx;
                let i = y * self.width + x;
                if dy * dy + dx * dx <= 1.0 && over.contains(&self.labels[i]) {
                    self.labels[i] = class;
                }
            }
        }
    }
}

pub fn validate_geometry(height: usize, width: usize, classes: usize) -> Result<()> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&classes) {
        return Err(Error::Config(format!(
            "class count {classes} outside {MIN_CLASSES}..={MAX_CLASSES}"
        )));
    }
    if height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0 {
        return Err(Error::Config(format!(
            "image size {height}x{width} must be a positive multiple of 8"
        )));
    }
    if height > usize::from(u16::MAX) || width > usize::from(u16::MAX) {
        return Err(Error::Config(format!("image size {height}x{width} too large")));
    }
    Ok(())
}

/// Deterministic function of (seed, height, width, classes).
pub fn sample_layout(seed: u64, height: usize, width: usize, classes: usize) -> Result<SceneLayout> {
    validate_geometry(height, width, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f32, width as f32);
    let mut scene = SceneLayout {
        height,
        width,
        classes,
        seed,
        labels: vec![BUILDING; height * width],
    };

    let sky_end = (h * rng.random_range(0.18..0.42)).round() as usize;
    let road_start = height - (h * rng.random_range(0.2..0.4)).round() as usize;
    scene.fill_rect(0, sky_end, 0, width, SKY);
    scene.fill_rect(road_start, height, 0, width, ROAD);

    // Gaps in the building row that open onto the sky.
    let gaps = rng.random_range(0..3);
    for _ in 0..gaps {
        let gw = (w * rng.random_range(0.1..0.3)).round() as usize;
        let x0 = rng.random_range(0..width);
        let gap_bottom = sky_end + (road_start.saturating_sub(sky_end)) / rng.random_range(2..4);
        scene.fill_rect(sky_end, gap_bottom, x0, x0 + gw, SKY);
    }
    // Towers rising into the sky.
    let towers = rng.random_range(1..4);
    for _ in 0..towers {
        let tw = (w * rng.random_range(0.1..0.25)).round() as usize;
        let x0 = rng.random_range(0..width);
        let top = (sky_end as f32 * rng.random_range(0.2..0.9)) as usize;
        scene.fill_rect(top, road_start, x0, x0 + tw, BUILDING);
    }

    if classes > usize::from(VEGETATION) {
        let blobs = rng.random_range(0..4);
        for _ in 0..blobs {
            let cy = rng.random_range(sky_end as f32..road_start as f32 + 0.1 * h);
            let cx = rng.random_range(0.0..w);
            let ry = h * rng.random_range(0.08..0.2);
            let rx = w * rng.random_range(0.08..0.25);
            scene.fill_ellipse(cy, cx, ry, rx, VEGETATION, &[BUILDING, SKY, ROAD]);
        }
    }
    if classes > usize::from(CAR) {
        for _ in 0..rng.random_range(0..3) {
            let cw = (w * rng.random_range(0.12..0.22)).round() as usize;
            let ch = (h * rng.random_range(0.06..0.12)).round().max(2.0) as usize;
            let x0 = rng.random_range(0..width);
            let y1 = rng.random_range(road_start..=height);
            scene.fill_rect(y1.saturating_sub(ch), y1, x0, x0 + cw, CAR);
        }
    }
    if classes > usize::from(POLE) {
        for _ in 0..rng.random_range(0..3) {
            let x0 = rng.random_range(0..width);
            let top = rng.random_range(0..road_start.max(1));
            let bottom = (road_start + 2).min(height);
            scene.fill_rect(top, bottom, x0, x0 + 1 + width / 48, POLE);
            if classes > usize::from(SIGN) && rng.random_bool(0.5) {
                let s = 2 + height / 24;
                scene.fill_rect(top, top + s, x0.saturating_sub(s / 2), x0 + s / 2 + 1, SIGN);
            }
        }
    }
    if classes > usize::from(PERSON) {
        for _ in 0..rng.random_range(0..3) {
            let cx = rng.random_range(0.0..w);
            let cy = rng.random_range(road_start.saturating_sub(height / 8) as f32..h);
            scene.fill_ellipse(cy, cx, h * 0.08, w * 0.025, PERSON, &[ROAD, BUILDING, VEGETATION]);
        }
    }
    debug_assert!(scene.distinct_classes() >= 2);
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = sample_layout(17, 48, 48, 4).unwrap();
        let b = sample_layout(17, 48, 48, 4).unwrap();
        let c = sample_layout(18, 48, 48, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn labels_respect_class_count() {
        for seed in 0..50 {
            let s = sample_layout(seed, 48, 48, 3).unwrap();
            assert!(s.labels.iter().all(|&l| l < 3));
            let s = sample_layout(seed, 32, 64, 8).unwrap();
            assert!(s.labels.iter().all(|&l| l < 8));
            assert!(s.distinct_classes() >= 2);
        }
    }

    #[test]
    fn every_class_is_common_at_four_classes() {
        let mut scenes_with = [0usize; 4];
        for seed in 0..1000 {
            let s = sample_layout(seed, 48, 48, 4).unwrap();
            let mut seen = [false; 4];
            s.labels.iter().for_each(|&l| seen[usize::from(l)] = true);
            assert!(seen.iter().filter(|&&b| b).count() >= 2);
            for c in 0..4 {
                scenes_with[c] += usize::from(seen[c]);
            }
        }
        for (c, &n) in scenes_with.iter().enumerate() {
            assert!(n >= 100, "class {c} appears in only {n}/1000 scenes");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_layout(0, 48, 48, 2).is_err());
        assert!(sample_layout(0, 48, 48, 9).is_err());
        assert!(sample_layout(0, 50, 48, 4).is_err());
        assert!(sample_layout(0, 48, 0, 4).is_err());
    }
}
