//! Checkpoint directories and the metrics log.
//!
//! A checkpoint is a directory holding
//!
//! - `model.safetensors`: every model variable, batch-norm statistics included;
//! - `optimizer.safetensors`: Adam moments (`m.<name>`, `v.<name>`) and step count `t`;
//! - `checkpoint.json`: the sidecar described by [`CheckpointMeta`].
//!
//! The metrics log is a tab-separated text file, one record per line:
//!
//! ```text
//! # step	split	iou	loss
//! 100	train	0.412000	0.530000
//! 100	eval	0.188000	0.701000
//! ```

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::Split;
use crate::losses::LossId;
use crate::model::{ModelConfig, SegmentationModel};

pub const MODEL_FILE: &str = "model.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const META_FILE: &str = "checkpoint.json";
pub const FORMAT_VERSION: u32 = 1;

/// One evaluation event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub train_iou: f64,
    pub eval_iou: f64,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    /// Loss on the un-augmented evaluation split.
    pub eval_loss: f64,
}

/// Sidecar of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub step: u64,
    pub seed: u64,
    pub loss: LossId,
    pub out_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub history: Vec<HistoryEntry>,
    /// Training-loss accumulator of the current evaluation window.
    pub window_loss_sum: f64,
    pub window_loss_count: u64,
}

pub fn checkpoint_dir(output_dir: &Path, step: u64) -> PathBuf {
    output_dir.join("checkpoints").join(format!("step-{step:07}"))
}

/// Most recent checkpoint under `output_dir`, if any.
pub fn latest_checkpoint(output_dir: &Path) -> Result<Option<PathBuf>> {
    let root = output_dir.join("checkpoints");
    if !root.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        let name = entry.file_name();
        let Some(step) = name
            .to_str()
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if entry.path().join(META_FILE).exists() && best.as_ref().is_none_or(|b| step > b.0) {
            best = Some((step, entry.path()));
        }
    }
    Ok(best.map(|b| b.1))
}

pub fn write_meta(dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("{}: {e}", path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            path.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Rebuilds the model stored in a checkpoint directory.
pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<(SegmentationModel, CheckpointMeta)> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let meta = read_meta(dir)?;
    let mut cfg = meta.model.clone();
    // the weights file already holds the pretrained values
    cfg.use_pretrained = false;
    let model = SegmentationModel::new(&cfg, device, DType::F32, 0)
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    model.load_weights(&dir.join(MODEL_FILE)).map_err(|e| match e {
        Error::MissingFile(_) => e,
        other => Error::IncompatibleCheckpoint(other.to_string()),
    })?;
    Ok((model, meta))
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub split: Split,
    pub iou: f64,
    pub loss: f64,
}

pub const METRICS_HEADER: &str = "# step\tsplit\tiou\tloss";

pub fn records_of(entry: &HistoryEntry) -> [MetricRecord; 2] {
    [
        MetricRecord {
            step: entry.step,
            split: Split::Train,
            iou: entry.train_iou,
            loss: entry.train_loss,
        },
        MetricRecord {
            step: entry.step,
            split: Split::Eval,
            iou: entry.eval_iou,
            loss: entry.eval_loss,
        },
    ]
}

pub fn format_records(history: &[HistoryEntry]) -> String {
    let mut out = String::new();
    for entry in history {
        for r in records_of(entry) {
            let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}", r.step, r.split, r.iou, r.loss);
        }
    }
    out
}

pub fn read_metrics_log(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_log(&text, &path.display().to_string())
}

pub fn parse_metrics_log(text: &str, source: &str) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |detail: String| Error::Malformed {
            what: source.to_string(),
            line: n + 1,
            detail,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        records.push(MetricRecord {
            step: fields[0].parse().map_err(|e| malformed(format!("step: {e}")))?,
            split: fields[1].parse().map_err(|e: Error| malformed(e.to_string()))?,
            iou: fields[2].parse().map_err(|e| malformed(format!("iou: {e}")))?,
            loss: fields[3].parse().map_err(|e| malformed(format!("loss: {e}")))?,
        });
    }
    if records.is_empty() {
        return Err(Error::Malformed {
            what: source.to_string(),
            line: 0,
            detail: "no metric records".into(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let h = [HistoryEntry {
            step: 10,
            train_iou: 0.5,
            eval_iou: 0.25,
            train_loss: 0.4,
            eval_loss: 0.6,
        }];
        let text = format!("{METRICS_HEADER}\n{}", format_records(&h));
        let recs = parse_metrics_log(&text, "t").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].split, Split::Eval);
        assert_eq!(recs[1].iou, 0.25);
    }

    #[test]
    fn log_errors() {
        assert!(parse_metrics_log(METRICS_HEADER, "t").is_err());
        let e = parse_metrics_log("1\ttrain\tx\t0.1\n", "t").unwrap_err();
        assert!(matches!(e, Error::Malformed { line: 1, .. }), "{e}");
        assert!(parse_metrics_log("1 train 0.1 0.1\n", "t").is_err());
    }
}
