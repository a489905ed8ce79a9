mod common;

use common::{brute_force_accumulate, finite_difference, max_relative_error};
use contrail_core::hough::{extract_lines, render_lines, HoughGrid, HoughLine, LineExtraction};
use contrail_core::synthetic::{draw_segments, Segment};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| {
        if rng.gen_bool(0.3) {
            rng.gen_range(0.0..1.0)
        } else {
            0.0
        }
    })
}

#[test]
fn matches_brute_force_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let n_theta = [2, 7, 45, 180][trial % 4];
        let res = [1.0, 0.5, 1.5][trial % 3];
        let mask = random_mask(&mut rng, h, w);
        let grid = HoughGrid::new(h, w, n_theta, res).unwrap();
        let (raw, norm) = brute_force_accumulate(mask.view(), n_theta, res);
        assert_eq!(raw.dim(), (grid.n_rho(), grid.n_theta()));
        let got_raw = grid.raw_votes(mask.view()).unwrap();
        let got = grid.soft_accumulate(mask.view()).unwrap().values;
        for ((a, b), (c, d)) in got_raw.iter().zip(&raw).zip(got.iter().zip(&norm)) {
            assert!((a - b).abs() < 1e-9, "raw {a} vs {b}");
            assert!((c - d).abs() < 1e-6, "norm {c} vs {d}");
        }
    }
}

#[test]
fn horizontal_line_peaks_at_its_row() {
    let grid = HoughGrid::for_image(33, 33).unwrap();
    for r in [3usize, 16, 25] {
        let mut m = Array2::zeros((33, 33));
        m.row_mut(r).fill(1.0);
        let acc = grid.soft_accumulate(m.view()).unwrap();
        let (i, j) = acc.argmax();
        assert!((grid.theta(j) - PI / 2.0).abs() < 1e-12);
        assert_eq!(grid.rho(i), r as f64 - 16.0);
        assert!(acc.values[[i, j]] >= 0.9);
        let (_, oracle) = brute_force_accumulate(m.view(), 180, 1.0);
        let worst = acc
            .values
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6);
    }
}

#[test]
fn votes_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = HoughGrid::for_image(13, 10).unwrap();
    let (m1, m2) = (random_mask(&mut rng, 13, 10), random_mask(&mut rng, 13, 10));
    let (a, b) = (0.3, 1.7);
    let combined = grid.raw_votes((&m1 * a + &m2 * b).view()).unwrap();
    let separate =
        grid.raw_votes(m1.view()).unwrap() * a + grid.raw_votes(m2.view()).unwrap() * b;
    for (x, y) in combined.iter().zip(&separate) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn bin_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = HoughGrid::for_image(16, 16).unwrap();
    for _ in 0..5 {
        let mask = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0..1.0));
        let (i, j) = (rng.gen_range(0..grid.n_rho()), rng.gen_range(0..grid.n_theta()));
        let mut upstream = Array2::zeros((grid.n_rho(), grid.n_theta()));
        upstream[[i, j]] = 1.0;
        let analytic = grid.accumulate_backward(upstream.view()).unwrap();
        let x = mask.clone().insert_axis(Axis(0));
        let fd = finite_difference(&x, 1e-4, |m| {
            grid.soft_accumulate(m.index_axis(Axis(0), 0)).unwrap().values[[i, j]]
        });
        let err = max_relative_error(&analytic.insert_axis(Axis(0)), &fd, 1e-8);
        assert!(err < 1e-3, "bin ({i}, {j}) relative error {err}");
    }
}

#[test]
fn quarter_turn_moves_theta_by_half_range() {
    let grid = HoughGrid::for_image(41, 41).unwrap();
    let m = draw_segments(41, 41, &[Segment::new(4.0, 8.0, 36.0, 20.0)], 1.5).mapv(f64::from);
    // rot90 counter-clockwise: new[y, x] = old[x, w - 1 - y]
    let rotated = Array2::from_shape_fn((41, 41), |(y, x)| m[[x, 40 - y]]);
    let (i0, j0) = grid.soft_accumulate(m.view()).unwrap().argmax();
    let (i1, j1) = grid.soft_accumulate(rotated.view()).unwrap().argmax();
    let n = grid.n_theta();
    let dj = (j1 + n - j0) % n;
    // theta moves by -pi/2; wrapping below zero negates rho
    let wrapped = j0 < n / 2;
    assert!(dj.abs_diff(n / 2) <= 1, "theta {j0} -> {j1}");
    let expected_rho = if wrapped { -grid.rho(i0) } else { grid.rho(i0) };
    assert!((grid.rho(i1) - expected_rho).abs() <= 1.0, "rho {} -> {}", grid.rho(i0), grid.rho(i1));
}

#[test]
fn rendered_line_round_trips() {
    let grid = HoughGrid::for_image(49, 49).unwrap();
    for (i, j) in [(30usize, 40usize), (grid.rho_bin(0.0).unwrap(), 0), (50, 135), (20, 90)] {
        let line = HoughLine {
            rho: grid.rho(i),
            theta: grid.theta(j),
            rho_bin: i,
            theta_bin: j,
            support: 1.0,
        };
        let m = render_lines(&[line], 49, 49).mapv(f64::from);
        let (ri, rj) = grid.soft_accumulate(m.view()).unwrap().argmax();
        assert_eq!((ri, rj), (i, j));
    }
}

#[test]
fn one_line_gives_one_detection_near_truth() {
    let grid = HoughGrid::for_image(64, 64).unwrap();
    let seg = Segment::new(5.0, 10.0, 58.0, 50.0);
    let m = draw_segments(64, 64, &[seg], 2.0).mapv(f64::from);
    let lines = extract_lines(&grid.soft_accumulate(m.view()).unwrap(), &LineExtraction::default());
    assert_eq!(lines.len(), 1, "{:?}", lines.lines);
    // normal form of the segment's supporting line in centered coordinates
    let (ox, oy) = grid.origin();
    let mut theta = (seg.x1 - seg.x0).atan2(-(seg.y1 - seg.y0));
    if theta < 0.0 {
        theta += PI;
    }
    let rho = (seg.x0 - ox) * theta.cos() + (seg.y0 - oy) * theta.sin();
    let l = lines.lines[0];
    assert!((l.theta - theta).abs() <= PI / 180.0 + 1e-9, "{} vs {theta}", l.theta);
    assert!((l.rho - rho).abs() <= 1.0 + 1e-9, "{} vs {rho}", l.rho);
}

#[test]
fn parallel_lines_six_pixels_apart_are_separated() {
    let grid = HoughGrid::for_image(64, 64).unwrap();
    // two-pixel strokes, as in hand-labeled masks
    for (a, b) in [((0.0, 25.5), (63.0, 25.5)), ((3.0, 13.0), (59.0, 45.0))] {
        let m = draw_segments(
            64,
            64,
            &[
                Segment::new(a.0, a.1, b.0, b.1),
                Segment::new(a.0, a.1 + 6.0, b.0, b.1 + 6.0),
            ],
            2.0,
        )
        .mapv(f64::from);
        let lines =
            extract_lines(&grid.soft_accumulate(m.view()).unwrap(), &LineExtraction::default());
        assert_eq!(lines.len(), 2, "{:?}", lines.lines);
        assert_eq!(lines.lines[0].theta_bin, lines.lines[1].theta_bin);
    }
}

#[test]
fn extraction_respects_threshold_and_suppression() {
    let grid = HoughGrid::for_image(40, 40).unwrap();
    let m = draw_segments(40, 40, &[Segment::new(0.0, 9.0, 39.0, 30.0)], 2.0).mapv(f64::from);
    let acc = grid.soft_accumulate(m.view()).unwrap();
    let params = LineExtraction {
        threshold: 0.3,
        nms_radius: 3,
        ..Default::default()
    };
    let lines = extract_lines(&acc, &params);
    assert!(!lines.is_empty());
    for (a, l) in lines.iter().enumerate() {
        assert!(l.support >= 0.3);
        assert_eq!(l.rho, grid.rho(l.rho_bin));
        assert_eq!(l.theta, grid.theta(l.theta_bin));
        for other in &lines.lines[a + 1..] {
            let di = l.rho_bin.abs_diff(other.rho_bin);
            let dj = l.theta_bin.abs_diff(other.theta_bin);
            assert!(di > 3 || dj > 3, "{l:?} and {other:?} within radius");
        }
    }
}

#[test]
fn accumulation_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = HoughGrid::for_image(30, 22).unwrap();
    let m = random_mask(&mut rng, 30, 22);
    let a = grid.soft_accumulate(m.view()).unwrap().values;
    let b = grid.soft_accumulate(m.view()).unwrap().values;
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
