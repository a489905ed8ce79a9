//! Soft, differentiable Hough transform over a discretized `(rho, theta)` plane.
//!
//! Lines are parameterized as `rho = x' cos(theta) + y' sin(theta)` in pixel coordinates
//! centered on the image (`x' = x - (w - 1) / 2`, `y' = y - (h - 1) / 2`), with
//! `theta` in `[0, pi)` and signed `rho`.
//!
//! Each pixel votes into the two `rho` bins bracketing its exact `rho(theta)` with a
//! triangular kernel of one-bin support, i.e. linear interpolation of the classical
//! integer vote. Votes are linear in the mask, so the accumulator is differentiable
//! everywhere and its adjoint is the same two-bin gather run in reverse. Each bin is
//! finally divided by the summed kernel weight of every pixel in the frame, which is
//! the in-image length of that bin's line, so normalized values are vote densities in
//! `[0, 1]`.

use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Floor of the per-bin length used when normalizing votes.
pub const NORMALIZATION_EPS: f64 = 1e-6;

pub const DEFAULT_N_THETA: usize = 180;
pub const DEFAULT_RHO_RESOLUTION: f64 = 1.0;

/// Discretization of Hough space for a fixed image size.
#[derive(Debug, Clone)]
pub struct HoughGrid {
    height: usize,
    width: usize,
    n_theta: usize,
    n_rho: usize,
    rho_resolution: f64,
    rho_max: f64,
    thetas: Vec<f64>,
    trig: Vec<(f64, f64)>,
    /// Summed kernel weight of all pixels per bin, shape `(n_rho, n_theta)`.
    line_length: Array2<f64>,
}

impl HoughGrid {
    /// Builds the grid for an image of `height x width` pixels.
    ///
    /// `rho_max` is the largest `|rho|` any pixel center can reach, half the diagonal
    /// between the outermost pixel centers. The `rho` axis holds `2 * ceil(rho_max / res) + 1`
    /// bins spaced `res` apart and symmetric about zero, so `rho = 0` is always a bin.
    pub fn new(height: usize, width: usize, n_theta: usize, rho_resolution: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "hough grid needs positive image dims, got {height}x{width}"
            )));
        }
        if n_theta < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_theta must be at least 2, got {n_theta}"
            )));
        }
        if !(rho_resolution.is_finite() && rho_resolution > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho resolution must be positive, got {rho_resolution}"
            )));
        }
        let rho_max = ((height - 1) as f64).hypot((width - 1) as f64) / 2.0;
        let half_bins = (rho_max / rho_resolution).ceil() as usize;
        let n_rho = 2 * half_bins + 1;
        let thetas: Vec<f64> = (0..n_theta).map(|j| j as f64 * PI / n_theta as f64).collect();
        let trig = thetas.iter().map(|t| (t.cos(), t.sin())).collect();
        let mut grid = HoughGrid {
            height,
            width,
            n_theta,
            n_rho,
            rho_resolution,
            rho_max,
            thetas,
            trig,
            line_length: Array2::zeros((n_rho, n_theta)),
        };
        let ones = Array2::<f64>::ones((height, width));
        grid.line_length = grid.votes(ones.view());
        Ok(grid)
    }

    /// Grid with the default 1 degree / 1 pixel resolution.
    pub fn for_image(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, DEFAULT_N_THETA, DEFAULT_RHO_RESOLUTION)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn rho_resolution(&self) -> f64 {
        self.rho_resolution
    }

    pub fn theta_values(&self) -> &[f64] {
        &self.thetas
    }

    pub fn theta(&self, bin: usize) -> f64 {
        self.thetas[bin]
    }

    pub fn rho(&self, bin: usize) -> f64 {
        (bin as f64 - self.center_bin()) * self.rho_resolution
    }

    pub fn rho_values(&self) -> Vec<f64> {
        (0..self.n_rho).map(|i| self.rho(i)).collect()
    }

    /// Image-space origin of the line parameterization, `(x, y)`.
    pub fn origin(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// In-image length of every bin's line in vote units.
    pub fn line_length(&self) -> ArrayView2<'_, f64> {
        self.line_length.view()
    }

    /// Bin index of `rho`, rounded to the nearest node.
    pub fn rho_bin(&self, rho: f64) -> Option<usize> {
        let bin = (rho / self.rho_resolution + self.center_bin()).round();
        (bin >= 0.0 && (bin as usize) < self.n_rho).then_some(bin as usize)
    }

    fn center_bin(&self) -> f64 {
        ((self.n_rho - 1) / 2) as f64
    }

    fn check_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if shape != [self.height, self.width] {
            return Err(Error::shape(what, &[self.height, self.width], shape));
        }
        Ok(())
    }

    /// Fractional bin position of pixel `(x, y)` for theta bin `j`.
    #[inline]
    fn bin_position(&self, j: usize, xc: f64, yc: f64) -> (usize, f64) {
        let (c, s) = self.trig[j];
        let t = ((xc * c + yc * s) / self.rho_resolution + self.center_bin())
            .clamp(0.0, (self.n_rho - 1) as f64);
        let lower = t.floor();
        (lower as usize, t - lower)
    }

    /// Raw soft votes `A[i, j] = sum_pixels mask * k(|rho_ij(pixel) - rho_i| / res)`.
    ///
    /// Columns are filled independently (one per theta); within a column pixels are
    /// visited in raster order, so the result is bit-reproducible.
    fn votes(&self, mask: ArrayView2<'_, f64>) -> Array2<f64> {
        let (ox, oy) = self.origin();
        let columns: Vec<Vec<f64>> = (0..self.n_theta)
            .into_par_iter()
            .map(|j| {
                let mut col = vec![0.0; self.n_rho];
                for (y, row) in mask.outer_iter().enumerate() {
                    let yc = y as f64 - oy;
                    for (x, &m) in row.iter().enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        let (lower, frac) = self.bin_position(j, x as f64 - ox, yc);
                        col[lower] += m * (1.0 - frac);
                        if frac > 0.0 {
                            col[lower + 1] += m * frac;
                        }
                    }
                }
                col
            })
            .collect();
        let mut out = Array2::zeros((self.n_rho, self.n_theta));
        for (j, col) in columns.into_iter().enumerate() {
            out.column_mut(j).assign(&ndarray::Array1::from(col));
        }
        out
    }

    /// Unnormalized votes of `mask`; linear in the mask.
    pub fn raw_votes(&self, mask: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_shape(mask.shape(), "hough mask")?;
        Ok(self.votes(mask))
    }

    /// Length-normalized soft accumulator of a unit-interval mask.
    pub fn soft_accumulate(&self, mask: ArrayView2<'_, f64>) -> Result<HoughAccumulator<'_>> {
        let mut values = self.raw_votes(mask)?;
        Zip::from(&mut values)
            .and(&self.line_length)
            .for_each(|v, &l| *v /= l.max(NORMALIZATION_EPS));
        Ok(HoughAccumulator { values, grid: self })
    }

    /// Vector-Jacobian product of [`soft_accumulate`](Self::soft_accumulate): maps a
    /// gradient over normalized accumulator values back onto mask pixels.
    pub fn accumulate_backward(&self, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if upstream.shape() != [self.n_rho, self.n_theta] {
            return Err(Error::shape(
                "hough upstream gradient",
                &[self.n_rho, self.n_theta],
                upstream.shape(),
            ));
        }
        let mut scaled = upstream.to_owned();
        Zip::from(&mut scaled)
            .and(&self.line_length)
            .for_each(|v, &l| *v /= l.max(NORMALIZATION_EPS));
        let scaled = scaled;
        let (ox, oy) = self.origin();
        let rows: Vec<Vec<f64>> = (0..self.height)
            .into_par_iter()
            .map(|y| {
                let yc = y as f64 - oy;
                (0..self.width)
                    .map(|x| {
                        let xc = x as f64 - ox;
                        let mut g = 0.0;
                        for j in 0..self.n_theta {
                            let (lower, frac) = self.bin_position(j, xc, yc);
                            g += scaled[[lower, j]] * (1.0 - frac);
                            if frac > 0.0 {
                                g += scaled[[lower + 1, j]] * frac;
                            }
                        }
                        g
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((self.height, self.width), flat)
            .expect("row-major pixel buffer"))
    }
}

/// Soft vote map over a [`HoughGrid`], indexed `(rho_bin, theta_bin)`.
#[derive(Debug, Clone)]
pub struct HoughAccumulator<'g> {
    pub values: Array2<f64>,
    grid: &'g HoughGrid,
}

impl<'g> HoughAccumulator<'g> {
    pub fn from_values(grid: &'g HoughGrid, values: Array2<f64>) -> Result<Self> {
        if values.shape() != [grid.n_rho, grid.n_theta] {
            return Err(Error::shape(
                "hough accumulator",
                &[grid.n_rho, grid.n_theta],
                values.shape(),
            ));
        }
        Ok(HoughAccumulator { values, grid })
    }

    pub fn grid(&self) -> &'g HoughGrid {
        self.grid
    }

    /// `(rho_bin, theta_bin)` of the largest value; first in raster order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_value = f64::NEG_INFINITY;
        for ((i, j), &v) in self.values.indexed_iter() {
            if v > best_value {
                best_value = v;
                best = (i, j);
            }
        }
        best
    }

    /// Logistic line-presence scores `1 / (1 + exp(-beta (v - tau)))`.
    pub fn squash(&self, tau: f64, beta: f64) -> HoughAccumulator<'g> {
        HoughAccumulator {
            values: self.values.mapv(|v| logistic(beta * (v - tau))),
            grid: self.grid,
        }
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A detected line on a grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughLine {
    pub rho: f64,
    pub theta: f64,
    pub rho_bin: usize,
    pub theta_bin: usize,
    /// Normalized vote density of the bin.
    pub support: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineSet {
    pub lines: Vec<HoughLine>,
}

impl LineSet {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, HoughLine> {
        self.lines.iter()
    }
}

/// Peak extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LineExtraction {
    /// Minimum normalized support of a kept bin.
    pub threshold: f64,
    /// Chebyshev suppression radius in bins.
    pub nms_radius: usize,
    /// Bins whose line crosses less than this many pixels of the frame are ignored.
    pub min_length: f64,
}

impl Default for LineExtraction {
    fn default() -> Self {
        LineExtraction {
            threshold: 0.5,
            nms_radius: 2,
            min_length: 8.0,
        }
    }
}

/// Local maxima of a normalized accumulator.
///
/// A bin survives if its value reaches the threshold and no bin within `nms_radius`
/// (Chebyshev distance) beats it. Theta wraps modulo `n_theta`; crossing the wrap
/// mirrors the rho index because `(rho, theta + pi)` is the line `(-rho, theta)`.
/// Equal values are resolved in favour of the smaller `(rho_bin, theta_bin)`.
pub fn extract_lines(acc: &HoughAccumulator<'_>, params: &LineExtraction) -> LineSet {
    let grid = acc.grid;
    let (n_rho, n_theta) = (grid.n_rho, grid.n_theta);
    let r = params.nms_radius as isize;
    let values = &acc.values;
    let eligible = |i: usize, j: usize| grid.line_length[[i, j]] >= params.min_length;

    let mut lines = Vec::new();
    for ((i, j), &v) in values.indexed_iter() {
        if v < params.threshold || !eligible(i, j) {
            continue;
        }
        let mut is_peak = true;
        'scan: for dj in -r..=r {
            let mut nj = j as isize + dj;
            let mut mirror = false;
            if nj < 0 {
                nj += n_theta as isize;
                mirror = true;
            } else if nj >= n_theta as isize {
                nj -= n_theta as isize;
                mirror = true;
            }
            for di in -r..=r {
                if di == 0 && dj == 0 {
                    continue;
                }
                let ni = i as isize + di;
                if ni < 0 || ni >= n_rho as isize {
                    continue;
                }
                let ni = if mirror {
                    n_rho - 1 - ni as usize
                } else {
                    ni as usize
                };
                let nj = nj as usize;
                if (ni, nj) == (i, j) || !eligible(ni, nj) {
                    continue;
                }
                let nv = values[[ni, nj]];
                if nv > v || (nv == v && (ni, nj) < (i, j)) {
                    is_peak = false;
                    break 'scan;
                }
            }
        }
        if is_peak {
            lines.push(HoughLine {
                rho: grid.rho(i),
                theta: grid.theta(j),
                rho_bin: i,
                theta_bin: j,
                support: v,
            });
        }
    }
    lines.sort_by(|a, b| {
        b.support
            .total_cmp(&a.support)
            .then((a.rho_bin, a.theta_bin).cmp(&(b.rho_bin, b.theta_bin)))
    });
    LineSet { lines }
}

/// Rasterizes lines one pixel wide, clipped to a `height x width` frame.
///
/// Coordinates are centered the same way as [`HoughGrid`]. Near-horizontal lines are
/// stepped along columns and near-vertical lines along rows, so the trace is 8-connected.
pub fn render_lines(lines: &[HoughLine], height: usize, width: usize) -> Array2<u8> {
    let mut out = Array2::zeros((height, width));
    let ox = (width as f64 - 1.0) / 2.0;
    let oy = (height as f64 - 1.0) / 2.0;
    for line in lines {
        let (s, c) = line.theta.sin_cos();
        if s.abs() >= c.abs() {
            for x in 0..width {
                let xc = x as f64 - ox;
                let y = ((line.rho - xc * c) / s + oy).round();
                if y >= 0.0 && (y as usize) < height {
                    out[[y as usize, x]] = 1;
                }
            }
        } else {
            for y in 0..height {
                let yc = y as f64 - oy;
                let x = ((line.rho - yc * s) / c + ox).round();
                if x >= 0.0 && (x as usize) < width {
                    out[[y, x as usize]] = 1;
                }
            }
        }
    }
    out
}
