//! Per-step augmentation of labeled scenes.
//!
//! Every training step draws fresh geometric and photometric parameters, so the
//! few labeled scenes turn into an unbounded stream of distinct samples. Geometry
//! is applied jointly to image and mask, photometry to the image only. The order is
//! geometric warp, then pad/crop to `out_size`, then photometric.
//!
//! A step's randomness depends only on `(seed, step)`, see [`step_seed`].

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ingest::LabeledScene;

/// Spatial sizes must be multiples of this so every encoder stage divides evenly.
pub const SIZE_MULTIPLE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformProbabilities {
    /// Rotation, scale and shift.
    pub affine: f64,
    pub perspective: f64,
    pub brightness_contrast: f64,
    pub gamma: f64,
}

impl Default for TransformProbabilities {
    fn default() -> Self {
        TransformProbabilities {
            affine: 0.9,
            perspective: 0.5,
            brightness_contrast: 0.5,
            gamma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub out_size: usize,
    /// Rotations are drawn from `[-rotate_limit, rotate_limit]` degrees.
    pub rotate_limit: f64,
    pub scale_range: (f64, f64),
    /// Shifts are drawn per axis from `[-shift_fraction, shift_fraction]` of the size.
    pub shift_fraction: f64,
    /// Corner displacement of the perspective warp as a fraction of the size.
    pub perspective_range: (f64, f64),
    pub brightness_limit: f64,
    pub contrast_limit: f64,
    pub gamma_range: (f64, f64),
    pub probabilities: TransformProbabilities,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            out_size: 320,
            rotate_limit: 45.0,
            scale_range: (0.5, 1.5),
            shift_fraction: 0.2,
            perspective_range: (0.05, 0.1),
            brightness_limit: 0.2,
            contrast_limit: 0.2,
            gamma_range: (0.7, 1.4),
            probabilities: TransformProbabilities::default(),
        }
    }
}

impl AugmentationConfig {
    /// No augmentation at all; samples are only padded or cropped.
    pub fn disabled(out_size: usize) -> Self {
        AugmentationConfig {
            out_size,
            probabilities: TransformProbabilities {
                affine: 0.0,
                perspective: 0.0,
                brightness_contrast: 0.0,
                gamma: 0.0,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("augmentation: {msg}")));
        if self.out_size == 0 || !self.out_size.is_multiple_of(SIZE_MULTIPLE) {
            return bad(format!(
                "out_size must be a positive multiple of {SIZE_MULTIPLE}, got {}",
                self.out_size
            ));
        }
        let p = &self.probabilities;
        for (name, v) in [
            ("affine", p.affine),
            ("perspective", p.perspective),
            ("brightness_contrast", p.brightness_contrast),
            ("gamma", p.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("probability {name} must lie in [0, 1], got {v}"));
            }
        }
        if p.affine > 0.0 {
            let (lo, hi) = self.scale_range;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("scale_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
            }
            if !(self.rotate_limit >= 0.0 && self.rotate_limit <= 180.0) {
                return bad(format!("rotate_limit must lie in [0, 180], got {}", self.rotate_limit));
            }
            if !(0.0..1.0).contains(&self.shift_fraction) {
                return bad(format!("shift_fraction must lie in [0, 1), got {}", self.shift_fraction));
            }
        }
        if p.perspective > 0.0 {
            let (lo, hi) = self.perspective_range;
            if !(lo >= 0.0 && lo <= hi && hi < 0.25) {
                return bad(format!(
                    "perspective_range must satisfy 0 <= min <= max < 0.25, got ({lo}, {hi})"
                ));
            }
        }
        if p.brightness_contrast > 0.0 {
            if !(0.0..1.0).contains(&self.brightness_limit) {
                return bad(format!("brightness_limit must lie in [0, 1), got {}", self.brightness_limit));
            }
            if !(0.0..1.0).contains(&self.contrast_limit) {
                return bad(format!("contrast_limit must lie in [0, 1), got {}", self.contrast_limit));
            }
        }
        if p.gamma > 0.0 {
            let (lo, hi) = self.gamma_range;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("gamma_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// Parameters of one joint geometric warp.
///
/// The warp maps input coordinates `(x, y)` (column, row; pixel centers at integers)
/// to output coordinates: rotate and scale about the image center, shift, then
/// displace the four corners by `perspective`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeometricParams {
    /// Counter-clockwise in image coordinates (y pointing down), degrees.
    pub rotation_deg: f64,
    pub scale: f64,
    /// Fractions of width and height.
    pub shift: (f64, f64),
    /// Output-corner displacements as fractions of (width, height), in the order
    /// top-left, top-right, bottom-right, bottom-left.
    pub perspective: Option<[(f64, f64); 4]>,
}

impl GeometricParams {
    pub fn identity() -> Self {
        GeometricParams {
            rotation_deg: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
            perspective: None,
        }
    }

    /// Forward homography for an `height x width` frame.
    pub fn homography(&self, height: usize, width: usize) -> Matrix3<f64> {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (a, b) = (self.scale * cos, self.scale * sin);
        let tx = cx + self.shift.0 * width as f64;
        let ty = cy + self.shift.1 * height as f64;
        // y points down, so a counter-clockwise turn on screen is (x, y) -> (x cos + y sin, -x sin + y cos)
        let affine = Matrix3::new(
            a, b, tx - a * cx - b * cy,
            -b, a, ty + b * cx - a * cy,
            0.0, 0.0, 1.0,
        );
        match self.perspective {
            None => affine,
            Some(offsets) => {
                let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
                let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
                let mut moved = corners;
                for (c, (dx, dy)) in moved.iter_mut().zip(offsets) {
                    c.0 += dx * width as f64;
                    c.1 += dy * height as f64;
                }
                four_point_homography(&corners, &moved).unwrap_or_else(Matrix3::identity) * affine
            }
        }
    }
}

/// Homography taking each `src[k]` to `dst[k]`; `None` when the points are degenerate.
fn four_point_homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Matrix3<f64>> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for (k, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r = 2 * k;
        m.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        m.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        rhs[r] = u;
        rhs[r + 1] = v;
    }
    let h = m.lu().solve(&rhs)?;
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

fn sample_symmetric<R: Rng + ?Sized>(rng: &mut R, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.gen_range(-limit..=limit)
    } else {
        0.0
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws one set of geometric parameters.
pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentationConfig) -> GeometricParams {
    let mut params = GeometricParams::identity();
    if rng.gen_bool(cfg.probabilities.affine) {
        params.rotation_deg = sample_symmetric(rng, cfg.rotate_limit);
        params.scale = sample_range(rng, cfg.scale_range);
        params.shift = (
            sample_symmetric(rng, cfg.shift_fraction),
            sample_symmetric(rng, cfg.shift_fraction),
        );
    }
    if rng.gen_bool(cfg.probabilities.perspective) {
        let strength = sample_range(rng, cfg.perspective_range);
        let mut offsets = [(0.0, 0.0); 4];
        for o in offsets.iter_mut() {
            *o = (sample_symmetric(rng, strength), sample_symmetric(rng, strength));
        }
        params.perspective = Some(offsets);
    }
    params
}

fn inverse_map(params: &GeometricParams, height: usize, width: usize) -> Matrix3<f64> {
    let h = params.homography(height, width);
    h.try_inverse().unwrap_or_else(Matrix3::identity)
}

#[inline]
fn project(inv: &Matrix3<f64>, x: usize, y: usize) -> Option<(f64, f64)> {
    let p = inv * Vector3::new(x as f64, y as f64, 1.0);
    if p.z.abs() < 1e-12 {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

/// Bilinear warp of `image`; samples falling outside the frame read as 0.
pub fn warp_image(image: ArrayView2<f32>, params: &GeometricParams) -> Array2<f32> {
    let (h, w) = image.dim();
    let inv = inverse_map(params, h, w);
    let at = |r: isize, c: isize| -> f64 {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            image[[r as usize, c as usize]] as f64
        } else {
            0.0
        }
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let Some((sx, sy)) = project(&inv, x, y) else {
            return 0.0;
        };
        if !(sx > -1.0 && sy > -1.0 && sx < w as f64 && sy < h as f64) {
            return 0.0;
        }
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (c, r) = (x0 as isize, y0 as isize);
        let top = at(r, c) * (1.0 - fx) + at(r, c + 1) * fx;
        let bottom = at(r + 1, c) * (1.0 - fx) + at(r + 1, c + 1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Nearest-neighbor warp of a binary mask; outside the frame reads as 0.
pub fn warp_mask(mask: ArrayView2<u8>, params: &GeometricParams) -> Array2<u8> {
    let (h, w) = mask.dim();
    let inv = inverse_map(params, h, w);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let Some((sx, sy)) = project(&inv, x, y) else {
            return 0;
        };
        let (c, r) = (sx.round(), sy.round());
        if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
            mask[[r as usize, c as usize]]
        } else {
            0
        }
    })
}

pub fn apply_geometric(
    image: ArrayView2<f32>,
    mask: ArrayView2<u8>,
    params: &GeometricParams,
) -> (Array2<f32>, Array2<u8>) {
    let image = warp_image(image, params);
    // bilinear blending can leave values a hair above 1
    let image = image.mapv(|v| v.clamp(0.0, 1.0));
    (image, warp_mask(mask, params))
}

pub fn random_geometric<R: Rng + ?Sized>(
    scene: &LabeledScene,
    rng: &mut R,
    cfg: &AugmentationConfig,
) -> (Array2<f32>, Array2<u8>) {
    let params = sample_geometric(rng, cfg);
    apply_geometric(scene.image.view(), scene.mask.view(), &params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricParams {
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
}

impl PhotometricParams {
    pub fn identity() -> Self {
        PhotometricParams {
            brightness: 0.0,
            contrast: 1.0,
            gamma: 1.0,
        }
    }

    /// `clamp((x - 0.5) * contrast + 0.5 + brightness, 0, 1) ^ gamma`.
    pub fn apply(&self, image: ArrayView2<f32>) -> Array2<f32> {
        let PhotometricParams {
            brightness: b,
            contrast: c,
            gamma: g,
        } = *self;
        image.mapv(|x| {
            let v = ((x - 0.5) * c + 0.5 + b).clamp(0.0, 1.0);
            if g == 1.0 {
                v
            } else {
                v.powf(g)
            }
        })
    }
}

pub fn sample_photometric<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentationConfig) -> PhotometricParams {
    let mut params = PhotometricParams::identity();
    if rng.gen_bool(cfg.probabilities.brightness_contrast) {
        params.brightness = sample_symmetric(rng, cfg.brightness_limit) as f32;
        params.contrast = 1.0 + sample_symmetric(rng, cfg.contrast_limit) as f32;
    }
    if rng.gen_bool(cfg.probabilities.gamma) {
        params.gamma = sample_range(rng, cfg.gamma_range) as f32;
    }
    params
}

pub fn random_photometric<R: Rng + ?Sized>(
    image: ArrayView2<f32>,
    rng: &mut R,
    cfg: &AugmentationConfig,
) -> Array2<f32> {
    sample_photometric(rng, cfg).apply(image)
}

/// Where the output window sits when an axis is longer than `out_size`.
pub enum Placement<'a> {
    Centered,
    Random(&'a mut dyn rand::RngCore),
}

/// Pads (centered, zero fill) or crops each axis to `out_size`.
pub fn pad_or_crop(
    image: ArrayView2<f32>,
    mask: ArrayView2<u8>,
    out_size: usize,
    mut placement: Placement<'_>,
) -> Result<(Array2<f32>, Array2<u8>)> {
    if out_size == 0 || !out_size.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::InvalidArgument(format!(
            "output size must be a positive multiple of {SIZE_MULTIPLE}, got {out_size}"
        )));
    }
    if image.dim() != mask.dim() {
        return Err(Error::shape("mask", image.shape(), mask.shape()));
    }
    // (source start, destination start, length) per axis
    let mut axis = |len: usize| -> (usize, usize, usize) {
        if len <= out_size {
            (0, (out_size - len) / 2, len)
        } else {
            let slack = len - out_size;
            let start = match &mut placement {
                Placement::Centered => slack / 2,
                Placement::Random(rng) => rng.gen_range(0..=slack),
            };
            (start, 0, out_size)
        }
    };
    let (h, w) = image.dim();
    let (sr, dr, lr) = axis(h);
    let (sc, dc, lc) = axis(w);
    let mut out_image = Array2::zeros((out_size, out_size));
    let mut out_mask = Array2::zeros((out_size, out_size));
    out_image
        .slice_mut(s![dr..dr + lr, dc..dc + lc])
        .assign(&image.slice(s![sr..sr + lr, sc..sc + lc]));
    out_mask
        .slice_mut(s![dr..dr + lr, dc..dc + lc])
        .assign(&mask.slice(s![sr..sr + lr, sc..sc + lc]));
    Ok((out_image, out_mask))
}

/// One augmented training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Array2<f32>,
    pub mask: Array2<u8>,
    pub scene_id: String,
    /// Seed of the generator that produced this sample.
    pub seed: u64,
}

impl Sample {
    /// Un-augmented, center-cropped view of a scene, as used for evaluation.
    pub fn centered(scene: &LabeledScene, out_size: usize) -> Result<Self> {
        let (image, mask) =
            pad_or_crop(scene.image.view(), scene.mask.view(), out_size, Placement::Centered)?;
        Ok(Sample {
            image,
            mask,
            scene_id: scene.scene_id.clone(),
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub step: u64,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Images stacked to `(batch, height, width)`.
    pub fn images(&self) -> Array3<f32> {
        stack(self.samples.iter().map(|s| s.image.view()))
    }

    /// Masks stacked to `(batch, height, width)` as 0.0/1.0.
    pub fn masks(&self) -> Array3<f64> {
        let views: Vec<_> = self.samples.iter().map(|s| s.mask.mapv(f64::from)).collect();
        stack(views.iter().map(|m| m.view()))
    }
}

pub(crate) fn stack<'a, T: Clone + 'a>(views: impl Iterator<Item = ArrayView2<'a, T>>) -> Array3<T> {
    let views: Vec<_> = views.map(|v| v.insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("samples share one shape")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of step `step` in a stream seeded with `seed`.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    splitmix64(seed ^ splitmix64(step))
}

/// Deterministic, unbounded stream of augmented batches.
///
/// Batch `k` is a pure function of `(seed, k)`, so batches may be produced in
/// any order or in parallel.
#[derive(Debug, Clone)]
pub struct StepStream {
    scenes: Arc<[LabeledScene]>,
    cfg: AugmentationConfig,
    seed: u64,
    batch_size: usize,
    next_step: u64,
}

pub fn make_step_stream(
    scenes: Vec<LabeledScene>,
    cfg: AugmentationConfig,
    seed: u64,
    batch_size: usize,
) -> Result<StepStream> {
    if scenes.is_empty() {
        return Err(Error::Data("cannot build a step stream from an empty scene list".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    cfg.validate()?;
    Ok(StepStream {
        scenes: scenes.into(),
        cfg,
        seed,
        batch_size,
        next_step: 0,
    })
}

impl StepStream {
    pub fn scenes(&self) -> &[LabeledScene] {
        &self.scenes
    }

    pub fn config(&self) -> &AugmentationConfig {
        &self.cfg
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Makes the iterator continue from `step`.
    pub fn seek(&mut self, step: u64) {
        self.next_step = step;
    }

    pub fn sample(&self, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = &self.scenes[rng.gen_range(0..self.scenes.len())];
        let (image, mask) = random_geometric(scene, &mut rng, &self.cfg);
        let (image, mask) = pad_or_crop(
            image.view(),
            mask.view(),
            self.cfg.out_size,
            Placement::Random(&mut rng),
        )
        .expect("out_size validated at construction");
        let image = random_photometric(image.view(), &mut rng, &self.cfg);
        Sample {
            image,
            mask,
            scene_id: scene.scene_id.clone(),
            seed,
        }
    }

    pub fn batch_at(&self, step: u64) -> Batch {
        let base = step_seed(self.seed, step);
        let samples = (0..self.batch_size as u64)
            .into_par_iter()
            .map(|k| self.sample(splitmix64(base ^ k)))
            .collect();
        Batch { step, samples }
    }

    /// Batches for `steps`, produced on the rayon pool and returned in step order.
    pub fn par_batches(&self, steps: Range<u64>) -> Vec<Batch> {
        steps.into_par_iter().map(|k| self.batch_at(k)).collect()
    }
}

impl Iterator for StepStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let batch = self.batch_at(self.next_step);
        self.next_step += 1;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;

    fn ramp(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(r, c)| ((r * w + c) as f32) / ((h * w) as f32))
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ramp(17, 23);
        let mask = img.mapv(|v| u8::from(v > 0.4));
        let (wi, wm) = apply_geometric(img.view(), mask.view(), &GeometricParams::identity());
        assert_eq!(wi, img);
        assert_eq!(wm, mask);
    }

    #[test]
    fn half_turn_flips_both_axes() {
        let mut mask = Array2::<u8>::zeros((9, 12));
        mask[[1, 2]] = 1;
        mask[[1, 3]] = 1;
        mask[[6, 10]] = 1;
        let params = GeometricParams {
            rotation_deg: 180.0,
            ..GeometricParams::identity()
        };
        let flipped = mask.slice(s![..;-1, ..;-1]).to_owned();
        assert_eq!(warp_mask(mask.view(), &params), flipped);
    }

    #[test]
    fn quarter_turn_direction() {
        // counter-clockwise on screen: the right edge moves to the top
        let mut mask = Array2::<u8>::zeros((5, 5));
        mask[[2, 4]] = 1;
        let params = GeometricParams {
            rotation_deg: 90.0,
            ..GeometricParams::identity()
        };
        let out = warp_mask(mask.view(), &params);
        assert_eq!(out[[0, 2]], 1);
        assert_eq!(out.sum(), 1);
    }

    #[test]
    fn shift_moves_content_and_fills_zero() {
        let img = Array2::from_elem((4, 4), 1.0f32);
        let params = GeometricParams {
            shift: (0.25, 0.0),
            ..GeometricParams::identity()
        };
        let out = warp_image(img.view(), &params);
        assert!(out.column(0).iter().all(|&v| v == 0.0));
        assert!(out.column(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn four_point_homography_maps_corners() {
        let src = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
        let dst = [(1.0, 0.5), (9.0, -0.5), (10.5, 11.0), (-0.5, 9.0)];
        let h = four_point_homography(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let p = h * Vector3::new(s.0, s.1, 1.0);
            assert!((p.x / p.z - d.0).abs() < 1e-9 && (p.y / p.z - d.1).abs() < 1e-9);
        }
    }

    #[test]
    fn photometric_examples() {
        let img = Array2::from_elem((3, 3), 0.5f32);
        assert_eq!(PhotometricParams::identity().apply(img.view()), img);
        let sq = PhotometricParams {
            gamma: 2.0,
            ..PhotometricParams::identity()
        };
        assert!(sq.apply(img.view()).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn pad_and_centered_crop() {
        let img = Array2::from_elem((100, 100), 1.0f32);
        let mask = Array2::from_elem((100, 100), 1u8);
        let (pi, pm) = pad_or_crop(img.view(), mask.view(), 320, Placement::Centered).unwrap();
        assert_eq!(pi.dim(), (320, 320));
        assert_eq!(pm.iter().map(|&v| v as usize).sum::<usize>(), 10_000);
        assert_eq!(pi[[110, 110]], 1.0);
        assert_eq!(pi[[109, 110]], 0.0);

        let big = ramp(500, 400);
        let bm = Array2::zeros((500, 400));
        let (ci, _) = pad_or_crop(big.view(), bm.view(), 320, Placement::Centered).unwrap();
        assert_eq!(ci, big.slice(s![90..410, 40..360]));
        assert!(pad_or_crop(big.view(), bm.view(), 100, Placement::Centered).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let cfg = AugmentationConfig {
            out_size: 300,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AugmentationConfig {
            scale_range: (0.0, 1.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentationConfig {
            gamma_range: (-1.0, 1.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.probabilities.gamma = 0.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(make_step_stream(vec![], AugmentationConfig::default(), 0, 1).is_err());
        let scene = LabeledScene::new(
            "a",
            Split::Train,
            Array2::zeros((32, 32)),
            Array2::zeros((32, 32)),
        )
        .unwrap();
        assert!(make_step_stream(vec![scene], AugmentationConfig::disabled(32), 0, 0).is_err());
    }
}
