use candle_core::Device;
use image::{GrayImage, Luma};
use ndarray::{Array2, ArrayView2};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use super::predict::{checkpoint_tiles, predict_probabilities};
use crate::error::{Error, Result};
use crate::hough::{extract_lines, render_lines, HoughGrid, LineExtraction, LineSet};
use crate::ingest::{binarize_mask, read_unit_image};
use crate::losses::HoughParams;

pub const FIGURE_FILE: &str = "hough_panels.png";
pub const SUMMARY_FILE: &str = "hough_summary.txt";
const GUTTER: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnoseConfig {
    pub hough: HoughParams,
    pub lines: LineExtraction,
}

/// Masks, detected lines and squashed Hough maps of a target and a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughDiagnosis {
    pub target_lines: LineSet,
    pub prediction_lines: LineSet,
    /// Squashed accumulators; lines are extracted before squashing.
    pub target_hough: Array2<f64>,
    pub prediction_hough: Array2<f64>,
    /// Target mask, target lines, target Hough map, then the same for the
    /// prediction; every panel has the mask's size.
    pub panels: [Array2<u8>; 6],
}

fn to_gray(values: ArrayView2<f64>) -> Array2<u8> {
    values.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Nearest-neighbor resize to `(height, width)`.
fn resize(src: ArrayView2<u8>, height: usize, width: usize) -> Array2<u8> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((height, width), |(r, c)| src[[r * h / height, c * w / width]])
}

pub fn hough_diagnosis(
    target: ArrayView2<f64>,
    prediction: ArrayView2<f64>,
    cfg: &DiagnoseConfig,
) -> Result<HoughDiagnosis> {
    if target.dim() != prediction.dim() {
        return Err(Error::shape("prediction", target.shape(), prediction.shape()));
    }
    let (h, w) = target.dim();
    let grid = HoughGrid::new(h, w, cfg.hough.n_theta, cfg.hough.rho_resolution)?;
    let analyse = |mask: ArrayView2<f64>| -> Result<(LineSet, Array2<f64>, [Array2<u8>; 3])> {
        let acc = grid.soft_accumulate(mask)?;
        let lines = extract_lines(&acc, &cfg.lines);
        let squashed = acc.squash(cfg.hough.tau, cfg.hough.beta).values;
        let rendered = render_lines(&lines.lines, h, w).mapv(|v| v * 255);
        let map = resize(to_gray(squashed.view()).view(), h, w);
        Ok((lines, squashed, [to_gray(mask), rendered, map]))
    };
    let (target_lines, target_hough, [t1, t2, t3]) = analyse(target)?;
    let (prediction_lines, prediction_hough, [p1, p2, p3]) = analyse(prediction)?;
    Ok(HoughDiagnosis {
        target_lines,
        prediction_lines,
        target_hough,
        prediction_hough,
        panels: [t1, t2, t3, p1, p2, p3],
    })
}

impl HoughDiagnosis {
    /// Three columns (mask, lines, Hough map) by two rows (target, prediction).
    pub fn figure(&self) -> GrayImage {
        let (h, w) = self.panels[0].dim();
        let (h, w) = (h as u32, w as u32);
        let mut img = GrayImage::from_pixel(3 * w + 2 * GUTTER, 2 * h + GUTTER, Luma([96]));
        for (k, panel) in self.panels.iter().enumerate() {
            let (x0, y0) = ((k as u32 % 3) * (w + GUTTER), (k as u32 / 3) * (h + GUTTER));
            for ((r, c), &v) in panel.indexed_iter() {
                img.put_pixel(x0 + c as u32, y0 + r as u32, Luma([v]));
            }
        }
        img
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "target_lines\t{}", self.target_lines.len());
        let _ = writeln!(out, "prediction_lines\t{}", self.prediction_lines.len());
        for (name, set) in [("target", &self.target_lines), ("prediction", &self.prediction_lines)] {
            for l in set.iter() {
                let _ = writeln!(
                    out,
                    "{name}\trho={:.2}\ttheta_deg={:.1}\tsupport={:.4}",
                    l.rho,
                    l.theta.to_degrees(),
                    l.support
                );
            }
        }
        out
    }
}

/// Where the prediction of a diagnosis comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSource {
    /// A mask or probability image.
    Mask(PathBuf),
    /// A checkpoint applied to an image.
    Checkpoint { checkpoint: PathBuf, image: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOutput {
    pub figure: PathBuf,
    pub summary: PathBuf,
    pub target_lines: usize,
    pub prediction_lines: usize,
}

/// Writes the six-panel figure and a line summary for a target mask file and a
/// prediction.
pub fn diagnose_hough(
    target_mask: &Path,
    prediction: &PredictionSource,
    cfg: &DiagnoseConfig,
    out_dir: &Path,
) -> Result<DiagnoseOutput> {
    let target = image::open(target_mask).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(target_mask, io),
        other => Error::Image(other),
    })?;
    let target = binarize_mask(&target).mapv(f64::from);
    let predicted = match prediction {
        PredictionSource::Mask(path) => read_unit_image(path)?.mapv(f64::from),
        PredictionSource::Checkpoint { checkpoint, image } => {
            let (model, meta) = load_checkpoint(checkpoint, &Device::Cpu)?;
            let image = read_unit_image(image)?;
            let tiles = checkpoint_tiles(meta.out_size, meta.batch_size);
            predict_probabilities(&model, image.view(), &tiles)?.mapv(f64::from)
        }
    };
    let diag = hough_diagnosis(target.view(), predicted.view(), cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let figure = out_dir.join(FIGURE_FILE);
    let summary = out_dir.join(SUMMARY_FILE);
    diag.figure().save(&figure)?;
    fs::write(&summary, diag.summary()).map_err(|e| Error::io(&summary, e))?;
    Ok(DiagnoseOutput {
        figure,
        summary,
        target_lines: diag.target_lines.len(),
        prediction_lines: diag.prediction_lines.len(),
    })
}
