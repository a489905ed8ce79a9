//! Trains a compact ResUNet on synthetic contrail scenes and prints the IoU history.
//!
//! ```text
//! cargo run --release -p contrail-core --example synthetic_run -- [steps] [loss] [augment]
//! ```

use contrail_core::data::AugmentationConfig;
use contrail_core::losses::LossId;
use contrail_core::model::ModelConfig;
use contrail_core::pipeline::{train_on, RunConfig};
use contrail_core::synthetic::{synthetic_dataset, SyntheticConfig};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let loss: LossId = args.next().map(|s| s.parse()).transpose()?.unwrap_or(LossId::Dice);
    let augment = args.next().is_some_and(|a| a == "augment");
    let size = 64;
    let scenes = synthetic_dataset(3, 2, &SyntheticConfig::sized(size, size), 11)?;
    let out = std::env::temp_dir().join("contrail-synthetic-run");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = RunConfig {
        loss,
        steps: Some(steps),
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 1,
        eval_every: (steps / 10).max(1),
        checkpoint_every: steps,
        output_dir: out,
        augmentation: if augment {
            AugmentationConfig {
                out_size: size,
                ..Default::default()
            }
        } else {
            AugmentationConfig::disabled(size)
        },
        model: ModelConfig::compact(4),
        ..Default::default()
    };
    let t0 = Instant::now();
    let outcome = train_on(&cfg, scenes, false)?;
    for h in &outcome.history {
        println!(
            "step {:5}  train iou {:.3}  eval iou {:.3}  train loss {:.4}",
            h.step, h.train_iou, h.eval_iou, h.train_loss
        );
    }
    println!("{:.2} s/step", t0.elapsed().as_secs_f64() / steps as f64);
    Ok(())
}
