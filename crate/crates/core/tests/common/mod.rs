#![allow(dead_code)]

use ndarray::{Array2, Array3, ArrayView2};
use std::f64::consts::PI;

/// Classical per-pixel, per-bin vote loop with a triangular kernel evaluated against
/// every rho bin, then divided by the same loop over an all-ones frame.
pub fn brute_force_accumulate(
    mask: ArrayView2<f64>,
    n_theta: usize,
    res: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = mask.dim();
    let rho_max = ((h - 1) as f64).hypot((w - 1) as f64) / 2.0;
    let half = (rho_max / res).ceil() as i64;
    let n_rho = (2 * half + 1) as usize;
    let ox = (w as f64 - 1.0) / 2.0;
    let oy = (h as f64 - 1.0) / 2.0;
    let mut raw = Array2::zeros((n_rho, n_theta));
    let mut len = Array2::zeros((n_rho, n_theta));
    for j in 0..n_theta {
        let theta = j as f64 * PI / n_theta as f64;
        for i in 0..n_rho {
            let rho = (i as i64 - half) as f64 * res;
            for y in 0..h {
                for x in 0..w {
                    let r = (x as f64 - ox) * theta.cos() + (y as f64 - oy) * theta.sin();
                    let k = (1.0 - (r - rho).abs() / res).max(0.0);
                    raw[[i, j]] += mask[[y, x]] * k;
                    len[[i, j]] += k;
                }
            }
        }
    }
    let norm = ndarray::Zip::from(&raw)
        .and(&len)
        .map_collect(|&a, &l| a / f64::max(l, 1e-6));
    (raw, norm)
}

/// Central differences of `f` at every element of `x`.
pub fn finite_difference<F: FnMut(&Array3<f64>) -> f64>(
    x: &Array3<f64>,
    step: f64,
    mut f: F,
) -> Array3<f64> {
    let mut grad = Array3::zeros(x.raw_dim());
    let mut probe = x.clone();
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe);
        probe[idx] = orig - step;
        let down = f(&probe);
        probe[idx] = orig;
        *g = (up - down) / (2.0 * step);
    }
    grad
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Array3<f64>, b: &Array3<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
