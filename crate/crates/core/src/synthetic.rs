//! Synthetic contrail-like scenes: thin bright line segments over a smooth,
//! noisy background. Used by tests, demos and the desk-scale experiments.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ingest::{LabeledScene, Split};

/// A straight segment in pixel coordinates (x = column, y = row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Segment { x0, y0, x1, y1 }
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// Euclidean distance from `(x, y)` to the closest point of the segment.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - self.x0) * dx + (y - self.y0) * dy) / len2).clamp(0.0, 1.0)
        };
        (x - self.x0 - t * dx).hypot(y - self.y0 - t * dy)
    }
}

/// Binary mask of all pixels whose center lies within `width / 2` of a segment.
pub fn draw_segments(height: usize, width: usize, segments: &[Segment], stroke: f64) -> Array2<u8> {
    let half = stroke / 2.0;
    Array2::from_shape_fn((height, width), |(r, c)| {
        let (x, y) = (c as f64, r as f64);
        u8::from(segments.iter().any(|s| s.distance(x, y) <= half))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of contrails per scene.
    pub lines: (usize, usize),
    pub stroke: f64,
    /// Segment length range as fractions of the image diagonal.
    pub length_range: (f64, f64),
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
    /// Brightness of contrail pixels above the local background.
    pub contrast: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 320,
            width: 320,
            lines: (2, 5),
            stroke: 2.5,
            length_range: (0.3, 0.8),
            noise: 0.03,
            contrast: 0.35,
        }
    }
}

impl SyntheticConfig {
    pub fn sized(height: usize, width: usize) -> Self {
        SyntheticConfig {
            height,
            width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("synthetic scene must be non-empty".into()));
        }
        if self.lines.0 > self.lines.1 {
            return Err(Error::InvalidArgument(format!("bad line count range {:?}", self.lines)));
        }
        let (lo, hi) = self.length_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad length range {:?}", self.length_range)));
        }
        if !(self.stroke > 0.0 && self.noise >= 0.0) {
            return Err(Error::InvalidArgument("stroke must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// Random segments whose midpoints lie inside the frame.
pub fn random_segments<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig) -> Vec<Segment> {
    let n = rng.gen_range(cfg.lines.0..=cfg.lines.1);
    let diag = (cfg.height as f64).hypot(cfg.width as f64);
    (0..n)
        .map(|_| {
            let cx = rng.gen_range(0.0..cfg.width as f64);
            let cy = rng.gen_range(0.0..cfg.height as f64);
            let theta = rng.gen_range(0.0..PI);
            let len = diag * rng.gen_range(cfg.length_range.0..=cfg.length_range.1);
            let (dx, dy) = (theta.cos() * len / 2.0, theta.sin() * len / 2.0);
            Segment::new(cx - dx, cy - dy, cx + dx, cy + dy)
        })
        .collect()
}

/// Smooth background in roughly `[0.1, 0.55]`: a few random plane waves plus noise.
pub fn background<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig) -> Array2<f32> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.gen_range(0.5..3.0) * 2.0 * PI / cfg.width.max(cfg.height) as f64;
            let dir = rng.gen_range(0.0..2.0 * PI);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = rng.gen_range(0.02..0.08);
            (freq * dir.cos(), freq * dir.sin(), phase, amp)
        })
        .collect();
    let level = rng.gen_range(0.25..0.4);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    Array2::from_shape_fn((cfg.height, cfg.width), |(r, c)| {
        let smooth: f64 = waves
            .iter()
            .map(|&(kx, ky, ph, a)| a * (kx * c as f64 + ky * r as f64 + ph).sin())
            .sum();
        let n = if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
        (level + smooth + n).clamp(0.0, 1.0) as f32
    })
}

/// Renders `segments` over a random background.
pub fn render_scene<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SyntheticConfig,
    segments: &[Segment],
) -> (Array2<f32>, Array2<u8>) {
    let mut image = background(rng, cfg);
    let mask = draw_segments(cfg.height, cfg.width, segments, cfg.stroke);
    let half = cfg.stroke / 2.0;
    for ((r, c), v) in image.indexed_iter_mut() {
        let d = segments
            .iter()
            .map(|s| s.distance(c as f64, r as f64))
            .fold(f64::INFINITY, f64::min);
        // soft profile a little wider than the labeled stroke, like a real plume
        let profile = (-(d / (half + 0.5)).powi(2)).exp();
        *v = (*v as f64 + cfg.contrast * profile).clamp(0.0, 1.0) as f32;
    }
    (image, mask)
}

pub fn synthetic_scene(
    scene_id: impl Into<String>,
    split: Split,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<LabeledScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = random_segments(&mut rng, cfg);
    let (image, mask) = render_scene(&mut rng, cfg, &segments);
    LabeledScene::new(scene_id, split, image, mask)
}

/// `n_train` training and `n_eval` evaluation scenes with ids `syn-000`, `syn-001`, ...
pub fn synthetic_dataset(
    n_train: usize,
    n_eval: usize,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<Vec<LabeledScene>> {
    (0..n_train + n_eval)
        .map(|i| {
            let split = if i < n_train { Split::Train } else { Split::Eval };
            synthetic_scene(format!("syn-{i:03}"), split, cfg, seed.wrapping_add(i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance() {
        let s = Segment::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(s.distance(5.0, 3.0), 3.0);
        assert_eq!(s.distance(-4.0, 3.0), 5.0);
        assert_eq!(s.length(), 10.0);
    }

    #[test]
    fn horizontal_stroke_is_two_rows_thick() {
        let m = draw_segments(10, 20, &[Segment::new(2.0, 4.5, 17.0, 4.5)], 2.0);
        assert_eq!(m.row(4).sum(), 16);
        assert_eq!(m.row(5).sum(), 16);
        assert_eq!(m.sum(), 32);
    }

    #[test]
    fn scenes_are_valid_and_reproducible() {
        let cfg = SyntheticConfig::sized(48, 64);
        let a = synthetic_scene("a", Split::Train, &cfg, 3).unwrap();
        let b = synthetic_scene("a", Split::Train, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.foreground_pixels() > 0);
        let mean_fg: f32 = a
            .image
            .iter()
            .zip(&a.mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&v, _)| v)
            .sum::<f32>()
            / a.foreground_pixels() as f32;
        assert!(mean_fg > a.image.mean().unwrap());
    }
}
