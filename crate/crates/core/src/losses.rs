//! Segmentation losses over probability maps, each with an analytic gradient.
//!
//! Every loss takes predicted probabilities `p` and a binary ground truth `g` of the
//! same shape. Pixel losses accept any dimensionality; sums run over every element, so
//! a `(batch, height, width)` array is scored as one pooled set of pixels. The SR loss
//! needs `(batch, height, width)` because each image is projected into Hough space
//! separately before the Hough-space Dice pools the batch.

use ndarray::{Array, Array2, Array3, ArrayView, ArrayView3, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hough::{HoughGrid, DEFAULT_N_THETA, DEFAULT_RHO_RESOLUTION};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Dice smoothing constant added to numerator and denominator.
const SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { gamma: 2.0 }
    }
}

/// Hough discretization and squashing used inside the SR loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub n_theta: usize,
    pub rho_resolution: f64,
    /// Vote density at which a bin counts as half a line.
    pub tau: f64,
    /// Sharpness of the logistic squash.
    pub beta: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            n_theta: DEFAULT_N_THETA,
            rho_resolution: DEFAULT_RHO_RESOLUTION,
            tau: 0.25,
            beta: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrLossConfig {
    /// Weight of the pixel-space Dice term; `1 - alpha` weights the Hough-space term.
    pub alpha: f64,
    pub hough: HoughParams,
}

impl Default for SrLossConfig {
    fn default() -> Self {
        SrLossConfig {
            alpha: 0.5,
            hough: HoughParams::default(),
        }
    }
}

impl SrLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "sr alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.hough.beta.is_finite() && self.hough.beta > 0.0) {
            return Err(Error::Config(format!(
                "sr beta must be positive, got {}",
                self.hough.beta
            )));
        }
        Ok(())
    }
}

fn check_pair<D: Dimension>(p: &ArrayView<f64, D>, g: &ArrayView<f64, D>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::shape("prediction vs ground truth", g.shape(), p.shape()));
    }
    Ok(())
}

/// Mean focal loss `-(1 - p_t)^gamma log(p_t)`, `p_t = p` where `g = 1` else `1 - p`.
pub fn focal_loss<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
    cfg: &FocalConfig,
) -> Result<f64> {
    Ok(focal_loss_grad(p, g, cfg)?.0)
}

/// Focal loss and its gradient with respect to `p`.
///
/// The gradient is zero where `p` lies outside the clamping interval.
pub fn focal_loss_grad<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
    cfg: &FocalConfig,
) -> Result<(f64, Array<f64, D>)> {
    check_pair(&p, &g)?;
    if !(cfg.gamma > 0.0) {
        return Err(Error::Config(format!(
            "focal gamma must be positive, got {}",
            cfg.gamma
        )));
    }
    let n = p.len().max(1) as f64;
    let gamma = cfg.gamma;
    let mut grad = Array::zeros(p.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(&p)
        .and(&g)
        .for_each(|dp, &pv, &gv| {
            let pc = pv.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let positive = gv >= 0.5;
            let pt = if positive { pc } else { 1.0 - pc };
            let q = 1.0 - pt;
            let log_pt = pt.ln();
            total += -q.powf(gamma) * log_pt;
            // d/dpt of -(1-pt)^g log(pt)
            let d_pt = gamma * q.powf(gamma - 1.0) * log_pt - q.powf(gamma) / pt;
            let inside = pv > PROB_EPS && pv < 1.0 - PROB_EPS;
            *dp = if inside {
                (if positive { d_pt } else { -d_pt }) / n
            } else {
                0.0
            };
        });
    Ok((total / n, grad))
}

fn dice_sums<D: Dimension>(p: &ArrayView<f64, D>, g: &ArrayView<f64, D>) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    Zip::from(p).and(g).for_each(|&pv, &gv| {
        inter += pv * gv;
        sum_p += pv;
        sum_g += gv;
    });
    (inter, sum_p, sum_g)
}

/// `1 - (2 sum(g p) + 1) / (sum(g) + sum(p) + 1)` with sums over every element.
pub fn dice_loss<D: Dimension>(p: ArrayView<f64, D>, g: ArrayView<f64, D>) -> Result<f64> {
    check_pair(&p, &g)?;
    let (inter, sum_p, sum_g) = dice_sums(&p, &g);
    Ok(1.0 - (2.0 * inter + SMOOTH) / (sum_g + sum_p + SMOOTH))
}

pub fn dice_loss_grad<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
) -> Result<(f64, Array<f64, D>)> {
    check_pair(&p, &g)?;
    let (inter, sum_p, sum_g) = dice_sums(&p, &g);
    let num = 2.0 * inter + SMOOTH;
    let den = sum_g + sum_p + SMOOTH;
    let grad = g.mapv(|gv| -(2.0 * gv * den - num) / (den * den));
    Ok((1.0 - num / den, grad))
}

/// Negated log Dice coefficient, `-log((2 sum(g p) + 1) / (sum(g) + sum(p) + 1))`.
pub fn log_dice_loss<D: Dimension>(p: ArrayView<f64, D>, g: ArrayView<f64, D>) -> Result<f64> {
    check_pair(&p, &g)?;
    let (inter, sum_p, sum_g) = dice_sums(&p, &g);
    Ok((sum_g + sum_p + SMOOTH).ln() - (2.0 * inter + SMOOTH).ln())
}

pub fn log_dice_loss_grad<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
) -> Result<(f64, Array<f64, D>)> {
    check_pair(&p, &g)?;
    let (inter, sum_p, sum_g) = dice_sums(&p, &g);
    let num = 2.0 * inter + SMOOTH;
    let den = sum_g + sum_p + SMOOTH;
    let grad = g.mapv(|gv| 1.0 / den - 2.0 * gv / num);
    Ok((den.ln() - num.ln(), grad))
}

/// `1 - (2 sum(g p) + 1) / (sum(p^2) + sum(g^2) + 1)`.
///
/// Agrees with [`dice_loss`] on binary inputs but is also zero for identical soft maps,
/// which is what the Hough term needs: squashed accumulators are never binary.
pub fn soft_dice_loss<D: Dimension>(p: ArrayView<f64, D>, g: ArrayView<f64, D>) -> Result<f64> {
    Ok(soft_dice_loss_grad(p, g)?.0)
}

pub fn soft_dice_loss_grad<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
) -> Result<(f64, Array<f64, D>)> {
    check_pair(&p, &g)?;
    let mut inter = 0.0;
    let mut sq = 0.0;
    Zip::from(&p).and(&g).for_each(|&pv, &gv| {
        inter += pv * gv;
        sq += pv * pv + gv * gv;
    });
    let num = 2.0 * inter + SMOOTH;
    let den = sq + SMOOTH;
    let grad = Zip::from(&p)
        .and(&g)
        .map_collect(|&pv, &gv| -(2.0 * gv * den - 2.0 * pv * num) / (den * den));
    Ok((1.0 - num / den, grad))
}

/// Intersection over union after binarizing `p` at `threshold` (`p >= threshold` is
/// foreground). Two empty masks score 1.
pub fn iou_metric<D: Dimension>(
    p: ArrayView<f64, D>,
    g: ArrayView<f64, D>,
    threshold: f64,
) -> Result<f64> {
    check_pair(&p, &g)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    Zip::from(&p).and(&g).for_each(|&pv, &gv| {
        let a = pv >= threshold;
        let b = gv >= 0.5;
        inter += usize::from(a && b);
        union += usize::from(a || b);
    });
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixel-space and Hough-space Dice terms of the SR loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrTerms {
    pub pixel: f64,
    pub hough: f64,
    pub alpha: f64,
}

impl SrTerms {
    pub fn total(&self) -> f64 {
        self.alpha * self.pixel + (1.0 - self.alpha) * self.hough
    }
}

/// SR loss bound to one image size, holding the Hough grid for reuse across steps.
#[derive(Debug, Clone)]
pub struct SrLoss {
    cfg: SrLossConfig,
    grid: HoughGrid,
}

impl SrLoss {
    pub fn new(cfg: SrLossConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let grid = HoughGrid::new(height, width, cfg.hough.n_theta, cfg.hough.rho_resolution)?;
        Ok(SrLoss { cfg, grid })
    }

    pub fn grid(&self) -> &HoughGrid {
        &self.grid
    }

    pub fn config(&self) -> &SrLossConfig {
        &self.cfg
    }

    fn check(&self, p: &ArrayView3<f64>, g: &ArrayView3<f64>) -> Result<()> {
        check_pair(p, g)?;
        let (_, h, w) = p.dim();
        if (h, w) != (self.grid.height(), self.grid.width()) {
            return Err(Error::shape(
                "sr loss image",
                &[self.grid.height(), self.grid.width()],
                &[h, w],
            ));
        }
        Ok(())
    }

    /// Squashed Hough maps of every image in the batch, stacked along axis 0.
    pub fn hough_maps(&self, masks: ArrayView3<f64>) -> Result<Array3<f64>> {
        let HoughParams { tau, beta, .. } = self.cfg.hough;
        let maps: Vec<Array2<f64>> = masks
            .outer_iter()
            .map(|m| Ok(self.grid.soft_accumulate(m)?.squash(tau, beta).values))
            .collect::<Result<_>>()?;
        let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
        Ok(ndarray::stack(Axis(0), &views).expect("equal grid shapes"))
    }

    pub fn terms(&self, p: ArrayView3<f64>, g: ArrayView3<f64>) -> Result<SrTerms> {
        self.check(&p, &g)?;
        let pixel = dice_loss(p, g)?;
        let hough = if self.cfg.alpha < 1.0 {
            let ph = self.hough_maps(p)?;
            let gh = self.hough_maps(g)?;
            soft_dice_loss(ph.view(), gh.view())?
        } else {
            0.0
        };
        Ok(SrTerms {
            pixel,
            hough,
            alpha: self.cfg.alpha,
        })
    }

    /// `alpha * Dice(p, g) + (1 - alpha) * SoftDice(p_h, g_h)`.
    pub fn value(&self, p: ArrayView3<f64>, g: ArrayView3<f64>) -> Result<f64> {
        Ok(self.terms(p, g)?.total())
    }

    pub fn value_and_grad(
        &self,
        p: ArrayView3<f64>,
        g: ArrayView3<f64>,
    ) -> Result<(f64, Array3<f64>)> {
        self.check(&p, &g)?;
        let alpha = self.cfg.alpha;
        let (pixel, pixel_grad) = dice_loss_grad(p, g)?;
        let mut grad = pixel_grad * alpha;
        if alpha >= 1.0 {
            return Ok((pixel, grad));
        }
        let beta = self.cfg.hough.beta;
        // Squash derivative is beta s (1 - s), expressed through the squashed maps.
        let ph = self.hough_maps(p)?;
        let gh = self.hough_maps(g)?;
        let (hough, d_ph) = soft_dice_loss_grad(ph.view(), gh.view())?;
        for ((mut gi, dphi), phi) in grad
            .outer_iter_mut()
            .zip(d_ph.outer_iter())
            .zip(ph.outer_iter())
        {
            let upstream = Zip::from(&dphi)
                .and(&phi)
                .map_collect(|&d, &s| (1.0 - alpha) * d * beta * s * (1.0 - s));
            let back = self.grid.accumulate_backward(upstream.view())?;
            gi += &back;
        }
        Ok((alpha * pixel + (1.0 - alpha) * hough, grad))
    }
}

/// One-shot SR loss on a batch, building the Hough grid for the batch's image size.
pub fn sr_loss(p: ArrayView3<f64>, g: ArrayView3<f64>, cfg: &SrLossConfig) -> Result<f64> {
    let (_, h, w) = p.dim();
    SrLoss::new(*cfg, h, w)?.value(p, g)
}

/// Loss identifiers accepted in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossId {
    Dice,
    #[serde(rename = "logdice")]
    LogDice,
    Focal,
    Sr,
}

impl LossId {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossId::Dice => "dice",
            LossId::LogDice => "logdice",
            LossId::Focal => "focal",
            LossId::Sr => "sr",
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossId::Dice),
            "logdice" => Ok(LossId::LogDice),
            "focal" => Ok(LossId::Focal),
            "sr" => Ok(LossId::Sr),
            other => Err(Error::UnknownLoss(other.to_string())),
        }
    }
}

/// A configured training objective over `(batch, height, width)` probability maps.
#[derive(Debug, Clone)]
pub enum Objective {
    Dice,
    LogDice,
    Focal(FocalConfig),
    Sr {
        cfg: SrLossConfig,
        cache: Option<SrLoss>,
    },
}

impl Objective {
    pub fn new(id: LossId, focal: FocalConfig, sr: SrLossConfig) -> Result<Self> {
        Ok(match id {
            LossId::Dice => Objective::Dice,
            LossId::LogDice => Objective::LogDice,
            LossId::Focal => {
                if !(focal.gamma > 0.0) {
                    return Err(Error::Config(format!(
                        "focal gamma must be positive, got {}",
                        focal.gamma
                    )));
                }
                Objective::Focal(focal)
            }
            LossId::Sr => {
                sr.validate()?;
                Objective::Sr {
                    cfg: sr,
                    cache: None,
                }
            }
        })
    }

    pub fn id(&self) -> LossId {
        match self {
            Objective::Dice => LossId::Dice,
            Objective::LogDice => LossId::LogDice,
            Objective::Focal(_) => LossId::Focal,
            Objective::Sr { .. } => LossId::Sr,
        }
    }

    fn sr_for(cfg: &SrLossConfig, cache: &mut Option<SrLoss>, h: usize, w: usize) -> Result<()> {
        let stale = cache
            .as_ref()
            .is_none_or(|c| (c.grid.height(), c.grid.width()) != (h, w));
        if stale {
            *cache = Some(SrLoss::new(*cfg, h, w)?);
        }
        Ok(())
    }

    pub fn value(&mut self, p: ArrayView3<f64>, g: ArrayView3<f64>) -> Result<f64> {
        match self {
            Objective::Dice => dice_loss(p, g),
            Objective::LogDice => log_dice_loss(p, g),
            Objective::Focal(cfg) => focal_loss(p, g, cfg),
            Objective::Sr { cfg, cache } => {
                let (_, h, w) = p.dim();
                Self::sr_for(cfg, cache, h, w)?;
                cache.as_ref().expect("cache filled").value(p, g)
            }
        }
    }

    pub fn value_and_grad(
        &mut self,
        p: ArrayView3<f64>,
        g: ArrayView3<f64>,
    ) -> Result<(f64, Array3<f64>)> {
        match self {
            Objective::Dice => dice_loss_grad(p, g),
            Objective::LogDice => log_dice_loss_grad(p, g),
            Objective::Focal(cfg) => focal_loss_grad(p, g, cfg),
            Objective::Sr { cfg, cache } => {
                let (_, h, w) = p.dim();
                Self::sr_for(cfg, cache, h, w)?;
                cache.as_ref().expect("cache filled").value_and_grad(p, g)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    #[test]
    fn focal_single_pixel() {
        let l = focal_loss(arr1(&[0.9]).view(), arr1(&[1.0]).view(), &FocalConfig::default())
            .unwrap();
        let expected = -(0.1f64).powi(2) * 0.9f64.ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 1.0536e-3).abs() < 1e-7);
    }

    #[test]
    fn focal_perfect_prediction_is_near_zero() {
        let g = arr1(&[1.0, 0.0, 1.0, 0.0]);
        let l = focal_loss(g.view(), g.view(), &FocalConfig { gamma: 2.0 }).unwrap();
        assert!((0.0..1e-12).contains(&l));
    }

    #[test]
    fn focal_rejects_non_positive_gamma() {
        let g = arr1(&[1.0]);
        assert!(focal_loss(g.view(), g.view(), &FocalConfig { gamma: 0.0 }).is_err());
    }

    #[test]
    fn dice_examples() {
        let g = arr1(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(dice_loss(g.view(), g.view()).unwrap(), 0.0);
        let ones = Array1::ones(4);
        let zeros = Array1::zeros(4);
        assert!((dice_loss(ones.view(), zeros.view()).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(dice_loss(zeros.view(), zeros.view()).unwrap(), 0.0);
    }

    #[test]
    fn log_dice_examples() {
        let ones = Array1::ones(4);
        let zeros = Array1::zeros(4);
        let l = log_dice_loss(ones.view(), zeros.view()).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        let g = arr1(&[1.0, 0.0]);
        assert_eq!(log_dice_loss(g.view(), g.view()).unwrap(), 0.0);
    }

    #[test]
    fn iou_examples() {
        let a = arr1(&[1.0, 1.0, 0.0, 0.0]);
        let b = arr1(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(iou_metric(a.view(), a.view(), 0.5).unwrap(), 1.0);
        assert_eq!(iou_metric(a.view(), b.view(), 0.5).unwrap(), 0.0);
        let z = Array1::zeros(4);
        assert_eq!(iou_metric(z.view(), z.view(), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Array1::zeros(3);
        let b = Array1::zeros(4);
        assert!(dice_loss(a.view(), b.view()).is_err());
        assert!(log_dice_loss(a.view(), b.view()).is_err());
        assert!(focal_loss(a.view(), b.view(), &FocalConfig::default()).is_err());
        assert!(iou_metric(a.view(), b.view(), 0.5).is_err());
    }

    #[test]
    fn loss_ids_round_trip() {
        for id in ["dice", "logdice", "focal", "sr"] {
            assert_eq!(id.parse::<LossId>().unwrap().as_str(), id);
        }
        assert!(matches!("bce".parse::<LossId>(), Err(Error::UnknownLoss(_))));
    }

    #[test]
    fn sr_alpha_out_of_range_is_rejected() {
        let cfg = SrLossConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(SrLoss::new(cfg, 8, 8).is_err());
    }
}
