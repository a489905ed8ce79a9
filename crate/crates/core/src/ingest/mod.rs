//! Two-channel scenes to normalized BTD images paired with contrail masks.
//!
//! The brightness temperature difference is `BT(12.3 um) - BT(10.35 um)`, i.e. the
//! shorter-wavelength band is always the subtrahend. On GOES-16/17 ABI those are
//! bands 13 and 15.

mod formats;
mod persist;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use formats::{load_scene, read_btdr, write_btdr, BTDR_MAGIC};
pub use persist::{
    binarize_mask, mask_to_png, read_manifest, read_unit_image, unit_to_png16, write_manifest,
    ManifestEntry, SceneMetadata,
};

/// Central wavelengths of the GOES-R ABI bands, micrometers.
const ABI_WAVELENGTHS_UM: [f64; 16] = [
    0.47, 0.64, 0.865, 1.378, 1.61, 2.24, 3.9, 6.185, 6.95, 7.34, 8.5, 9.61, 10.35, 11.2, 12.3,
    13.3,
];

/// Central wavelength of an ABI band (1-16).
pub fn abi_wavelength_um(band: u8) -> Option<f64> {
    band.checked_sub(1)
        .and_then(|i| ABI_WAVELENGTHS_UM.get(i as usize))
        .copied()
}

/// One band of brightness temperatures in kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRaster {
    pub values: Array2<f32>,
    /// `false` marks missing data. Always `false` where `values` is not finite.
    pub valid: Array2<bool>,
    pub band_id: u8,
    pub wavelength_um: f64,
}

impl ChannelRaster {
    pub fn new(band_id: u8, wavelength_um: f64, values: Array2<f32>) -> Result<Self> {
        let valid = values.mapv(f32::is_finite);
        Self::with_valid(band_id, wavelength_um, values, valid)
    }

    /// Raster with an explicit missing-data mask (intersected with finiteness).
    pub fn with_valid(
        band_id: u8,
        wavelength_um: f64,
        values: Array2<f32>,
        valid: Array2<bool>,
    ) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "band {band_id} raster is empty ({h}x{w})"
            )));
        }
        if valid.dim() != (h, w) {
            return Err(Error::shape(
                format!("band {band_id} missing-data mask"),
                &[h, w],
                valid.shape(),
            ));
        }
        let valid = Zip::from(&valid)
            .and(&values)
            .map_collect(|&ok, v| ok && v.is_finite());
        Ok(ChannelRaster {
            values,
            valid,
            band_id,
            wavelength_um,
        })
    }

    /// Raster for an ABI band, looking up its wavelength.
    pub fn abi(band_id: u8, values: Array2<f32>) -> Result<Self> {
        let wl = abi_wavelength_um(band_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ABI band {band_id}")))?;
        Self::new(band_id, wl, values)
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Brightness temperature difference in kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct BtdImage {
    pub values: Array2<f32>,
    pub valid: Array2<bool>,
    /// `(minuend, subtrahend)` band ids.
    pub source_bands: (u8, u8),
}

impl BtdImage {
    /// Wraps an existing difference field; non-finite values are marked invalid.
    pub fn from_values(values: Array2<f32>) -> Self {
        let valid = values.mapv(f32::is_finite);
        BtdImage {
            values,
            valid,
            source_bands: (0, 0),
        }
    }
}

/// `minuend - subtrahend` elementwise, without any wavelength check.
pub fn difference(minuend: &ChannelRaster, subtrahend: &ChannelRaster) -> Result<BtdImage> {
    if minuend.values.dim() != subtrahend.values.dim() {
        return Err(Error::shape(
            format!("band {}", subtrahend.band_id),
            minuend.values.shape(),
            subtrahend.values.shape(),
        ));
    }
    let values = &minuend.values - &subtrahend.values;
    let valid = Zip::from(&minuend.valid)
        .and(&subtrahend.valid)
        .and(&values)
        .map_collect(|&a, &b, v| a && b && v.is_finite());
    Ok(BtdImage {
        values,
        valid,
        source_bands: (minuend.band_id, subtrahend.band_id),
    })
}

/// BTD of the long-wave band minus the short-wave band.
///
/// `short_wave` (ABI band 13, 10.35 um) must have the shorter wavelength of the two.
pub fn compute_btd(short_wave: &ChannelRaster, long_wave: &ChannelRaster) -> Result<BtdImage> {
    if short_wave.values.dim() != long_wave.values.dim() {
        return Err(Error::shape(
            format!("band {}", long_wave.band_id),
            short_wave.values.shape(),
            long_wave.values.shape(),
        ));
    }
    if !(short_wave.wavelength_um < long_wave.wavelength_um) {
        return Err(Error::WavelengthOrder {
            subtrahend: short_wave.band_id,
            subtrahend_um: short_wave.wavelength_um,
            minuend: long_wave.band_id,
            minuend_um: long_wave.wavelength_um,
        });
    }
    difference(long_wave, short_wave)
}

/// Unit-interval image produced by [`normalize`], with the mapping that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub image: Array2<f32>,
    pub lo_percentile: f64,
    pub hi_percentile: f64,
    /// BTD value mapped to 0.
    pub lo_value: f64,
    /// BTD value mapped to 1.
    pub hi_value: f64,
    /// Set when both percentiles hit the same value; the image is then constant 0.5.
    pub degenerate: bool,
}

/// Percentile of unsorted data with linear interpolation between order statistics
/// (rank `p / 100 * (n - 1)`). Reorders `values`.
pub(crate) fn percentile_in_place(values: &mut [f64], pct: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let rank = pct / 100.0 * (values.len() - 1) as f64;
    let k = rank.floor() as usize;
    let frac = rank - k as f64;
    let (_, &mut lower, upper) = values.select_nth_unstable_by(k, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lower;
    }
    let next = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lower + frac * (next - lower)
}

/// Maps valid pixels linearly so the `lo` percentile goes to 0 and `hi` to 1, then
/// clamps to `[0, 1]`. Invalid pixels become 0.
pub fn normalize(btd: &BtdImage, lo_percentile: f64, hi_percentile: f64) -> Result<NormalizedImage> {
    if !(0.0 <= lo_percentile && lo_percentile < hi_percentile && hi_percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_percentile}, {hi_percentile})"
        )));
    }
    let mut samples: Vec<f64> = Zip::from(&btd.values)
        .and(&btd.valid)
        .fold(Vec::new(), |mut acc, &v, &ok| {
            if ok {
                acc.push(v as f64);
            }
            acc
        });
    if samples.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let lo_value = percentile_in_place(&mut samples, lo_percentile);
    let hi_value = percentile_in_place(&mut samples, hi_percentile);
    let degenerate = hi_value <= lo_value;
    if degenerate {
        log::warn!("degenerate percentile range: both percentiles equal {lo_value}");
    }
    let image = Zip::from(&btd.values)
        .and(&btd.valid)
        .map_collect(|&v, &ok| {
            if !ok {
                0.0
            } else if degenerate {
                0.5
            } else {
                ((v as f64 - lo_value) / (hi_value - lo_value)).clamp(0.0, 1.0) as f32
            }
        });
    Ok(NormalizedImage {
        image,
        lo_percentile,
        hi_percentile,
        lo_value,
        hi_value,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "eval" | "val" | "test" => Ok(Split::Eval),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// A normalized image with its binary contrail mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub image: Array2<f32>,
    /// 1 marks a contrail pixel.
    pub mask: Array2<u8>,
    pub scene_id: String,
    pub split: Split,
}

impl LabeledScene {
    pub fn new(
        scene_id: impl Into<String>,
        split: Split,
        image: Array2<f32>,
        mask: Array2<u8>,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        if image.dim() != mask.dim() {
            return Err(Error::shape(
                format!("mask of scene {scene_id}"),
                image.shape(),
                mask.shape(),
            ));
        }
        if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "scene {scene_id}: image values must lie in [0, 1]"
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::InvalidArgument(format!(
                "scene {scene_id}: mask values must be 0 or 1"
            )));
        }
        Ok(LabeledScene {
            image,
            mask,
            scene_id,
            split,
        })
    }

    pub fn foreground_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Reads a label mask and pairs it with `image`.
///
/// The mask is binarized at half its bit depth's range (`v / max >= 0.5`).
pub fn pair_with_mask(
    image: Array2<f32>,
    mask_path: &Path,
    scene_id: &str,
    split: Split,
) -> Result<LabeledScene> {
    let decoded = image::open(mask_path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(mask_path, io),
        other => Error::Image(other),
    })?;
    let mask = binarize_mask(&decoded);
    LabeledScene::new(scene_id, split, image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn raster(band: u8, v: f32, n: usize) -> ChannelRaster {
        ChannelRaster::abi(band, Array2::from_elem((n, n), v)).unwrap()
    }

    #[test]
    fn btd_of_constant_fields() {
        let btd = compute_btd(&raster(13, 280.0, 4), &raster(15, 278.0, 4)).unwrap();
        assert!(btd.values.iter().all(|&v| v == -2.0));
        assert_eq!(btd.source_bands, (15, 13));
        let same = compute_btd(&raster(13, 250.0, 3), &raster(15, 250.0, 3)).unwrap();
        assert!(same.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn btd_rejects_wrong_wavelength_order() {
        let err = compute_btd(&raster(15, 1.0, 2), &raster(13, 1.0, 2)).unwrap_err();
        assert!(matches!(err, Error::WavelengthOrder { .. }));
    }

    #[test]
    fn btd_rejects_shape_mismatch() {
        let err = compute_btd(&raster(13, 1.0, 2), &raster(15, 1.0, 3)).unwrap_err();
        assert!(err.to_string().contains("band 15"), "{err}");
    }

    #[test]
    fn btd_validity_is_and_of_inputs() {
        let mut a = Array2::from_elem((2, 2), 280.0f32);
        a[[0, 0]] = f32::NAN;
        let c13 = ChannelRaster::abi(13, a).unwrap();
        let valid = array![[true, true], [false, true]];
        let c15 =
            ChannelRaster::with_valid(15, 12.3, Array2::from_elem((2, 2), 279.0), valid).unwrap();
        let btd = compute_btd(&c13, &c15).unwrap();
        assert_eq!(btd.valid, array![[false, true], [false, true]]);
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        let btd = BtdImage::from_values(Array2::from_elem((5, 5), -1.5));
        let n = normalize(&btd, 2.0, 98.0).unwrap();
        assert!(n.degenerate);
        assert!(n.image.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_two_valued_image_hits_endpoints() {
        let btd = BtdImage::from_values(array![[-5.0, 5.0], [5.0, -5.0]]);
        let n = normalize(&btd, 0.0, 100.0).unwrap();
        assert_eq!(n.image, array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(!n.degenerate);
    }

    #[test]
    fn normalize_errors() {
        let btd = BtdImage::from_values(Array2::from_elem((2, 2), f32::NAN));
        assert!(matches!(normalize(&btd, 2.0, 98.0), Err(Error::NoValidPixels)));
        let ok = BtdImage::from_values(Array2::zeros((2, 2)));
        assert!(normalize(&ok, 50.0, 50.0).is_err());
        assert!(normalize(&ok, -1.0, 50.0).is_err());
        assert!(normalize(&ok, 1.0, 101.0).is_err());
    }

    #[test]
    fn invalid_pixels_are_zero_and_ignored() {
        let mut v = array![[0.0f32, 10.0], [1000.0, 5.0]];
        let mut btd = BtdImage::from_values(v.clone());
        btd.valid[[1, 0]] = false;
        let n = normalize(&btd, 0.0, 100.0).unwrap();
        assert_eq!(n.hi_value, 10.0);
        assert_eq!(n.image[[1, 0]], 0.0);
        v[[1, 0]] = f32::INFINITY;
        let n = normalize(&BtdImage::from_values(v), 0.0, 100.0).unwrap();
        assert_eq!(n.image[[0, 1]], 1.0);
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile_in_place(&mut v, 50.0), 2.5);
        assert_eq!(percentile_in_place(&mut v, 0.0), 1.0);
        assert_eq!(percentile_in_place(&mut v, 100.0), 4.0);
    }

    #[test]
    fn abi_band_table() {
        assert_eq!(abi_wavelength_um(13), Some(10.35));
        assert_eq!(abi_wavelength_um(15), Some(12.3));
        assert_eq!(abi_wavelength_um(0), None);
        assert_eq!(abi_wavelength_um(17), None);
    }

    #[test]
    fn labeled_scene_validates() {
        let img = Array2::from_elem((2, 2), 0.5f32);
        assert!(LabeledScene::new("a", Split::Train, img.clone(), Array2::zeros((2, 3))).is_err());
        assert!(LabeledScene::new("a", Split::Train, img.clone(), Array2::from_elem((2, 2), 2)).is_err());
        assert!(LabeledScene::new("a", Split::Train, img * 3.0, Array2::zeros((2, 2))).is_err());
    }
}
