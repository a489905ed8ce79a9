use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array3;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::{
    checkpoint_dir, format_records, latest_checkpoint, read_meta, write_meta, CheckpointMeta,
    HistoryEntry, FORMAT_VERSION, METRICS_HEADER, MODEL_FILE, OPTIMIZER_FILE,
};
use super::config::RunConfig;
use super::evaluate::{predict_samples, IOU_THRESHOLD};
use super::optim::Adam;
use crate::data::{make_step_stream, Batch, Sample, StepStream};
use crate::error::{Error, Result};
use crate::hough::logistic;
use crate::ingest::{read_manifest, LabeledScene, Split};
use crate::losses::{iou_metric, Objective};
use crate::model::SegmentationModel;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const CONFIG_FILE: &str = "run.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryEntry>,
    pub final_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    /// Steps executed by this call (fewer than `steps` after a resume).
    pub steps_run: u64,
}

/// Single controller of a training run.
pub struct Trainer {
    cfg: RunConfig,
    model: SegmentationModel,
    trainable: Vec<(String, Var)>,
    adam: Adam,
    objective: Objective,
    stream: StepStream,
    train_eval: Vec<Sample>,
    eval_eval: Vec<Sample>,
    step: u64,
    history: Vec<HistoryEntry>,
    window_loss_sum: f64,
    window_loss_count: u64,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    /// Prepares a fresh run. `scenes` must contain at least one scene of each split.
    pub fn new(cfg: RunConfig, scenes: Vec<LabeledScene>) -> Result<Self> {
        cfg.validate()?;
        let (train, eval): (Vec<_>, Vec<_>) = scenes.into_iter().partition(|s| s.split == Split::Train);
        if train.is_empty() || eval.is_empty() {
            return Err(Error::Data(format!(
                "training needs at least one train and one eval scene, got {} and {}",
                train.len(),
                eval.len()
            )));
        }
        let out = cfg.augmentation.out_size;
        let centered = |scenes: &[LabeledScene]| {
            scenes
                .iter()
                .map(|s| Sample::centered(s, out))
                .collect::<Result<Vec<_>>>()
        };
        let train_eval = centered(&train)?;
        let eval_eval = centered(&eval)?;
        let stream = make_step_stream(train, cfg.augmentation.clone(), cfg.seed, cfg.batch_size)?;
        let objective = Objective::new(cfg.loss, cfg.focal, cfg.sr)?;
        let model = SegmentationModel::new(&cfg.model, &Device::Cpu, DType::F32, cfg.seed)?;
        let trainable = model.trainable_vars();
        log::info!(
            "training {} parameters with {} loss for {} steps",
            model.parameter_count(),
            cfg.loss,
            cfg.steps()
        );
        Ok(Trainer {
            adam: Adam::new(cfg.learning_rate),
            cfg,
            model,
            trainable,
            objective,
            stream,
            train_eval,
            eval_eval,
            step: 0,
            history: Vec::new(),
            window_loss_sum: 0.0,
            window_loss_count: 0,
            last_checkpoint: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &SegmentationModel {
        &self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Restores model, optimizer, step counter and history from a checkpoint.
    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        let meta = read_meta(dir)?;
        let cfg = &self.cfg;
        let mismatch = if meta.model != cfg.model {
            Some("model configuration")
        } else if meta.loss != cfg.loss {
            Some("loss")
        } else if meta.seed != cfg.seed {
            Some("seed")
        } else if meta.out_size != cfg.augmentation.out_size {
            Some("out_size")
        } else if meta.batch_size != cfg.batch_size {
            Some("batch_size")
        } else {
            None
        };
        if let Some(what) = mismatch {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: {what} differs from the run configuration",
                dir.display()
            )));
        }
        self.model.load_weights(&dir.join(MODEL_FILE))?;
        self.adam
            .load(&dir.join(OPTIMIZER_FILE), self.model.device(), self.model.dtype())?;
        self.step = meta.step;
        self.history = meta.history;
        self.window_loss_sum = meta.window_loss_sum;
        self.window_loss_count = meta.window_loss_count;
        self.last_checkpoint = Some(dir.to_path_buf());
        log::info!("resumed from {} at step {}", dir.display(), self.step);
        Ok(())
    }

    /// Loss and logit gradient of one batch; no parameter update.
    fn loss_and_logit_grad(&mut self, batch: &Batch) -> Result<(Tensor, f64, Array3<f64>)> {
        let x = self.model.input_tensor(batch.images().view())?;
        let logits = self.model.forward_t(&x, true)?.squeeze(1)?;
        let (n, h, w) = logits.dims3()?;
        let z = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let p = Array3::from_shape_vec((n, h, w), z)
            .expect("length matches dims")
            .mapv(logistic);
        let (loss, dp) = self.objective.value_and_grad(p.view(), batch.masks().view())?;
        // chain rule through the logistic: dp/dz = p (1 - p)
        let dz = dp * p.mapv(|v| v * (1.0 - v));
        Ok((logits, loss, dz))
    }

    /// Runs one optimization step and returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.stream.batch_at(self.step);
        let (logits, loss, dz) = self.loss_and_logit_grad(&batch)?;
        if !loss.is_finite() || dz.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: self.step + 1,
                last_checkpoint: self.last_checkpoint.clone(),
            });
        }
        let upstream = Tensor::from_vec(dz.into_raw_vec(), logits.shape(), self.model.device())?
            .to_dtype(self.model.dtype())?;
        let surrogate = (logits * upstream)?.sum_all()?;
        let grads = surrogate.backward()?;
        self.adam.step(&self.trainable, &grads)?;
        self.step += 1;
        self.window_loss_sum += loss;
        self.window_loss_count += 1;
        Ok(loss)
    }

    fn split_scores(&mut self, samples: &[Sample]) -> Result<(f64, f64)> {
        let probs = predict_samples(&self.model, samples, self.cfg.batch_size)?.mapv(f64::from);
        let masks = crate::data::stack(samples.iter().map(|s| s.mask.view())).mapv(f64::from);
        let mut iou = 0.0;
        for (p, g) in probs.outer_iter().zip(masks.outer_iter()) {
            iou += iou_metric(p, g, IOU_THRESHOLD)?;
        }
        let loss = self.objective.value(probs.view(), masks.view())?;
        Ok((iou / samples.len() as f64, loss))
    }

    /// Scores the un-augmented train and eval splits and records the result.
    pub fn evaluate_now(&mut self) -> Result<HistoryEntry> {
        let train = std::mem::take(&mut self.train_eval);
        let eval = std::mem::take(&mut self.eval_eval);
        let scores = self
            .split_scores(&train)
            .and_then(|t| Ok((t, self.split_scores(&eval)?)));
        self.train_eval = train;
        self.eval_eval = eval;
        let ((train_iou, _), (eval_iou, eval_loss)) = scores?;
        let train_loss = if self.window_loss_count > 0 {
            self.window_loss_sum / self.window_loss_count as f64
        } else {
            f64::NAN
        };
        let entry = HistoryEntry {
            step: self.step,
            train_iou,
            eval_iou,
            train_loss,
            eval_loss,
        };
        self.history.push(entry);
        self.window_loss_sum = 0.0;
        self.window_loss_count = 0;
        log::info!(
            "step {}: train iou {train_iou:.4}, eval iou {eval_iou:.4}, train loss {train_loss:.4}",
            self.step
        );
        Ok(entry)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            model: self.cfg.model.clone(),
            step: self.step,
            seed: self.cfg.seed,
            loss: self.cfg.loss,
            out_size: self.cfg.augmentation.out_size,
            batch_size: self.cfg.batch_size,
            learning_rate: self.cfg.learning_rate,
            history: self.history.clone(),
            window_loss_sum: self.window_loss_sum,
            window_loss_count: self.window_loss_count,
        }
    }

    /// Writes a checkpoint for the current step and returns its directory.
    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        let dir = checkpoint_dir(&self.cfg.output_dir, self.step);
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.model.save(&tmp.join(MODEL_FILE))?;
        self.adam.save(&tmp.join(OPTIMIZER_FILE))?;
        write_meta(&tmp, &self.meta())?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        self.last_checkpoint = Some(dir.clone());
        Ok(dir)
    }

    /// Trains until `steps`, evaluating and checkpointing on schedule.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let out = self.cfg.output_dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let cfg_path = out.join(CONFIG_FILE);
        fs::write(&cfg_path, self.cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let log_path = out.join(METRICS_FILE);
        let existing = format!("{METRICS_HEADER}\n{}", format_records(&self.history));
        fs::write(&log_path, existing).map_err(|e| Error::io(&log_path, e))?;

        let total = self.cfg.steps();
        let start = self.step;
        while self.step < total {
            self.train_step()?;
            if self.step.is_multiple_of(self.cfg.eval_every) {
                let entry = self.evaluate_now()?;
                let mut log = OpenOptions::new()
                    .append(true)
                    .open(&log_path)
                    .map_err(|e| Error::io(&log_path, e))?;
                log.write_all(format_records(&[entry]).as_bytes())
                    .map_err(|e| Error::io(&log_path, e))?;
            }
            if self.step.is_multiple_of(self.cfg.checkpoint_every) || self.step == total {
                self.save_checkpoint()?;
            }
        }
        let final_checkpoint = match &self.last_checkpoint {
            Some(p) if p == &checkpoint_dir(&out, self.step) => p.clone(),
            _ => self.save_checkpoint()?,
        };
        Ok(TrainOutcome {
            history: self.history.clone(),
            final_checkpoint,
            metrics_log: log_path,
            steps_run: self.step - start,
        })
    }
}

/// Trains on in-memory scenes, resuming from the newest checkpoint in
/// `cfg.output_dir` when `resume` is set and one exists.
pub fn train_on(cfg: &RunConfig, scenes: Vec<LabeledScene>, resume: bool) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), scenes)?;
    if resume {
        if let Some(dir) = latest_checkpoint(&cfg.output_dir)? {
            trainer.restore(&dir)?;
        }
    }
    trainer.run()
}

/// Trains on the scenes listed in `cfg.manifest`.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no data manifest given".into()))?;
    let scenes = read_manifest(manifest)?
        .iter()
        .map(|e| e.load())
        .collect::<Result<Vec<_>>>()?;
    train_on(cfg, scenes, resume)
}
