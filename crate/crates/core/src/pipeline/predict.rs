use candle_core::Device;
use image::{ImageBuffer, Rgb};
use ndarray::{s, Array2, Array3, ArrayView2};
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::ingest::{mask_to_png, read_unit_image};
use crate::model::SegmentationModel;

pub const DEFAULT_OVERLAP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileConfig {
    /// Window side; a multiple of the model's divisor.
    pub window: usize,
    pub overlap: usize,
    /// Windows predicted per forward pass.
    pub batch_size: usize,
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Tiling used for a checkpoint: its training size as the window, with the
/// overlap capped at half the window.
pub fn checkpoint_tiles(out_size: usize, batch_size: usize) -> TileConfig {
    TileConfig {
        window: out_size,
        overlap: DEFAULT_OVERLAP.min(out_size / 2),
        batch_size,
    }
}

/// Window starts covering `len` with windows of `window` overlapping by at least
/// `overlap`; the last window is flush with the end.
pub fn tile_starts(len: usize, window: usize, overlap: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let stride = window.saturating_sub(overlap).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + window < len).collect();
    starts.push(len - window);
    starts
}

/// Foreground probabilities for an image of any size.
///
/// Images no larger than the window run in one pass (zero-padded up to the model's
/// divisor). Larger images are cut into overlapping windows whose probabilities
/// are combined by taking the maximum.
pub fn predict_probabilities(
    model: &SegmentationModel,
    image: ArrayView2<f32>,
    tiles: &TileConfig,
) -> Result<Array2<f32>> {
    let d = model.config().divisor();
    if tiles.window == 0 || !tiles.window.is_multiple_of(d) {
        return Err(Error::InvalidArgument(format!(
            "tile window {} must be a positive multiple of {d}",
            tiles.window
        )));
    }
    if tiles.overlap >= tiles.window {
        return Err(Error::InvalidArgument("tile overlap must be smaller than the window".into()));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    // an axis shorter than the window is padded to the divisor and covered once
    let frame = |len: usize| if len <= tiles.window { round_up(len, d) } else { tiles.window };
    let (fh, fw) = (frame(h), frame(w));
    let mut windows = Vec::new();
    for &r in &tile_starts(h, fh, tiles.overlap) {
        for &c in &tile_starts(w, fw, tiles.overlap) {
            windows.push((r, c));
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for chunk in windows.chunks(tiles.batch_size.max(1)) {
        let mut batch = Array3::<f32>::zeros((chunk.len(), fh, fw));
        for (k, &(r, c)) in chunk.iter().enumerate() {
            let (lr, lc) = (fh.min(h - r), fw.min(w - c));
            batch
                .slice_mut(s![k, ..lr, ..lc])
                .assign(&image.slice(s![r..r + lr, c..c + lc]));
        }
        let probs = model.predict_proba(batch.view())?;
        for (k, &(r, c)) in chunk.iter().enumerate() {
            let (lr, lc) = (fh.min(h - r), fw.min(w - c));
            let mut dst = out.slice_mut(s![r..r + lr, c..c + lc]);
            dst.zip_mut_with(&probs.slice(s![k, ..lr, ..lc]), |o, &p| *o = o.max(p));
        }
    }
    Ok(out)
}

/// Grayscale image with foreground pixels painted red.
pub fn overlay(image: ArrayView2<f32>, mask: ArrayView2<u8>) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (h, w) = image.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        if mask[[r, c]] > 0 {
            Rgb([255, 0, 0])
        } else {
            let v = (image[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub mask: PathBuf,
    pub overlay: PathBuf,
    pub foreground_pixels: usize,
}

/// Segments one image file with a checkpoint; writes `<stem>_mask.png` and
/// `<stem>_overlay.png` into `out_dir`. The checkpoint is only read.
pub fn predict(checkpoint: &Path, image_path: &Path, out_dir: &Path) -> Result<PredictOutput> {
    let (model, meta) = load_checkpoint(checkpoint, &Device::Cpu)?;
    let image = read_unit_image(image_path)?;
    let tiles = checkpoint_tiles(meta.out_size, meta.batch_size);
    let probs = predict_probabilities(&model, image.view(), &tiles)?;
    let mask = probs.mapv(|p| u8::from(p as f64 >= super::evaluate::IOU_THRESHOLD));
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mask_path = out_dir.join(format!("{stem}_mask.png"));
    let overlay_path = out_dir.join(format!("{stem}_overlay.png"));
    mask_to_png(&mask).save(&mask_path)?;
    overlay(image.view(), mask.view()).save(&overlay_path)?;
    Ok(PredictOutput {
        mask: mask_path,
        overlay: overlay_path,
        foreground_pixels: mask.iter().filter(|&&m| m == 1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_cover_with_overlap() {
        assert_eq!(tile_starts(320, 320, 32), vec![0]);
        assert_eq!(tile_starts(100, 320, 32), vec![0]);
        assert_eq!(tile_starts(640, 320, 32), vec![0, 288, 320]);
        let starts = tile_starts(1000, 320, 32);
        assert_eq!(*starts.last().unwrap(), 680);
        for pair in starts.windows(2) {
            assert!(pair[0] + 320 >= pair[1] + 32);
        }
    }
}
