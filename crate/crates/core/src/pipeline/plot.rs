use plotters::prelude::*;
use std::path::{Path, PathBuf};

use super::checkpoint::{read_metrics_log, MetricRecord};
use crate::error::{Error, Result};
use crate::ingest::Split;

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

/// One labelled metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub label: String,
    pub records: Vec<MetricRecord>,
}

impl RunLog {
    /// Reads a log, labelling it with its parent directory name.
    pub fn read(path: &Path) -> Result<Self> {
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        Ok(RunLog {
            label,
            records: read_metrics_log(path)?,
        })
    }

    /// `(step, iou)` points of one split in step order.
    pub fn series(&self, split: Split) -> Vec<(f64, f64)> {
        let mut pts: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| (r.step as f64, r.iou))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Data(format!("plotting failed: {e}"))
}

/// IoU against step for every run: solid lines for the training split, dashed
/// for evaluation, one legend entry per curve. Writes an SVG file.
pub fn plot_runs(runs: &[RunLog], out: &Path) -> Result<PathBuf> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no metrics logs to plot".into()));
    }
    let max_step = runs
        .iter()
        .flat_map(|r| r.records.iter().map(|m| m.step))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let root = SVGBackend::new(out, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("IoU during training", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_step, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("IoU")
        .draw()
        .map_err(plot_err)?;
    for (k, run) in runs.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let train = run.series(Split::Train);
        chart
            .draw_series(LineSeries::new(train, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{} train", run.label))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        let eval = run.series(Split::Eval);
        chart
            .draw_series(DashedLineSeries::new(eval, 6, 4, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{} eval", run.label))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(1)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(out.to_path_buf())
}

/// Reads each log and plots them together.
pub fn plot_metrics(logs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let runs = logs.iter().map(|p| RunLog::read(p)).collect::<Result<Vec<_>>>()?;
    plot_runs(&runs, out)
}
