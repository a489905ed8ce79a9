use candle_core::Device;
use ndarray::Array3;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::checkpoint::load_checkpoint;
use crate::data::{stack, Sample};
use crate::error::{Error, Result};
use crate::ingest::{read_manifest, LabeledScene, Split};
use crate::losses::iou_metric;
use crate::model::SegmentationModel;

/// Probability threshold separating foreground from background.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Anything that maps samples to foreground probabilities.
pub trait Segmenter {
    /// `(batch, height, width)` probabilities for equally sized samples.
    fn probabilities(&self, samples: &[Sample]) -> Result<Array3<f32>>;
}

impl Segmenter for SegmentationModel {
    fn probabilities(&self, samples: &[Sample]) -> Result<Array3<f32>> {
        let images = stack(samples.iter().map(|s| s.image.view()));
        self.predict_proba(images.view())
    }
}

/// Predicts the ground truth itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Segmenter for GroundTruth {
    fn probabilities(&self, samples: &[Sample]) -> Result<Array3<f32>> {
        Ok(stack(samples.iter().map(|s| s.mask.view())).mapv(f32::from))
    }
}

/// Predicts the same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f32);

impl Segmenter for Constant {
    fn probabilities(&self, samples: &[Sample]) -> Result<Array3<f32>> {
        let (h, w) = samples.first().map_or((0, 0), |s| s.image.dim());
        Ok(Array3::from_elem((samples.len(), h, w), self.0))
    }
}

/// Runs `seg` over `samples` in chunks of `batch_size`.
pub fn predict_samples<S: Segmenter + ?Sized>(
    seg: &S,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Array3<f32>> {
    let chunks = samples
        .chunks(batch_size.max(1))
        .map(|c| seg.probabilities(c))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::Data(format!("inconsistent prediction shapes: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub scene_id: String,
    pub split: Split,
    pub iou: f64,
    pub target_pixels: usize,
    pub predicted_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<SceneScore>,
    pub mean_iou: f64,
}

impl EvalReport {
    /// Tab-separated table, one scene per line, then a `# mean_iou` trailer.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# scene_id\tsplit\tiou\ttarget_px\tpredicted_px\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{}",
                r.scene_id, r.split, r.iou, r.target_pixels, r.predicted_pixels
            );
        }
        let _ = writeln!(out, "# mean_iou\t{:.6}", self.mean_iou);
        out
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_table()).map_err(|e| Error::io(path, e))
    }
}

/// Per-scene IoU of un-augmented, center-cropped scenes.
pub fn evaluate_scenes<S: Segmenter + ?Sized>(
    seg: &S,
    scenes: &[LabeledScene],
    out_size: usize,
    batch_size: usize,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Data("no scenes to evaluate".into()));
    }
    let samples = scenes
        .iter()
        .map(|s| Sample::centered(s, out_size))
        .collect::<Result<Vec<_>>>()?;
    let probs = predict_samples(seg, &samples, batch_size)?;
    let rows = samples
        .iter()
        .zip(scenes)
        .zip(probs.outer_iter())
        .map(|((sample, scene), p)| {
            let p = p.mapv(f64::from);
            let g = sample.mask.mapv(f64::from);
            Ok(SceneScore {
                scene_id: scene.scene_id.clone(),
                split: scene.split,
                iou: iou_metric(p.view(), g.view(), IOU_THRESHOLD)?,
                target_pixels: sample.mask.iter().filter(|&&m| m == 1).count(),
                predicted_pixels: p.iter().filter(|&&v| v >= IOU_THRESHOLD).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_iou = rows.iter().map(|r| r.iou).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport { rows, mean_iou })
}

/// Evaluates a checkpoint on the manifest's scenes of `split` (all scenes when
/// `None`) and optionally writes the table.
pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    split: Option<Split>,
    table: Option<&Path>,
) -> Result<EvalReport> {
    let (model, meta) = load_checkpoint(checkpoint, &Device::Cpu)?;
    let scenes = read_manifest(manifest)?
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| e.load())
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_scenes(&model, &scenes, meta.out_size, meta.batch_size)?;
    if let Some(path) = table {
        report.write_table(path)?;
    }
    Ok(report)
}
