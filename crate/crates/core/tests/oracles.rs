//! Independent reference computations: FFT-based DCT-II and phase-mask
//! pipelines, plus the coefficient energy map of a natural image.

use std::f64::consts::PI;
use std::path::PathBuf;

use blpcs::bases::{dct_matrix, rpfrct2d_forward, rpfrct_matrix, IndexRegion};
use blpcs::cipher::{drpe_transfer_matrix, DrpeMasks};
use blpcs::imaging::load_pgm;
use blpcs::keyrand::{derive_stream, KeySeed};
use blpcs::DenseMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// DCT-II through a length-`2n` FFT of the mirrored sequence, orthonormal.
fn dct_fft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().chain(x.iter().rev()).map(|v| Complex64::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(2 * n).process(&mut buf);
    (0..n)
        .map(|l| {
            let w = Complex64::from_polar(1.0, -PI * l as f64 / (2 * n) as f64);
            let scale = if l == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            0.5 * scale * (w * buf[l]).re
        })
        .collect()
}

#[test]
fn dct_matrix_matches_fft_dct() {
    let mut st = derive_stream(KeySeed(11), "dct");
    for n in [4, 7, 16, 33, 64] {
        let x: Vec<f64> = (0..n).map(|_| st.next_gaussian()).collect();
        let a = dct_matrix(n).matvec(&x).unwrap();
        let b = dct_fft(&x);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10, "n={n}: {p} vs {q}");
        }
    }
}

#[test]
fn order_one_transform_is_blockwise_dct() {
    let n = 16;
    let h = n / 2;
    let mut st = derive_stream(KeySeed(12), "blocks");
    let x: Vec<f64> = (0..n).map(|_| st.next_gaussian()).collect();
    let got = rpfrct_matrix(n, 1.0).unwrap().matvec(&x).unwrap();
    let want: Vec<f64> = dct_fft(&x[..h]).into_iter().chain(dct_fft(&x[h..])).collect();
    for (p, q) in got.iter().zip(&want) {
        assert!((p - q).abs() < 1e-10);
    }
}

/// `F⁻¹ Q F P` on an `m x m` plane with unitary 2D FFTs.
fn drpe_fft(masks: &DrpeMasks, m: usize, plane: &[Complex64]) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let fft2 = |data: &mut Vec<Complex64>, plan: &std::sync::Arc<dyn rustfft::Fft<f64>>| {
        // Column-major: columns are contiguous.
        for col in data.chunks_exact_mut(m) {
            plan.process(col);
        }
        for r in 0..m {
            let mut row: Vec<Complex64> = (0..m).map(|c| data[c * m + r]).collect();
            plan.process(&mut row);
            for c in 0..m {
                data[c * m + r] = row[c];
            }
        }
        let s = 1.0 / m as f64;
        data.iter_mut().for_each(|v| *v *= s);
    };
    let mut v: Vec<Complex64> = plane.iter().zip(&masks.p).map(|(a, p)| a * p).collect();
    fft2(&mut v, &fwd);
    v.iter_mut().zip(&masks.q).for_each(|(a, q)| *a *= q);
    fft2(&mut v, &inv);
    v
}

#[test]
fn phase_mask_matrix_matches_fft_pipeline() {
    let m = 4;
    let masks = DrpeMasks::random(KeySeed(3), m);
    let t = drpe_transfer_matrix(&masks, m).unwrap();
    let mut st = derive_stream(KeySeed(13), "plane");
    let plane: Vec<Complex64> = (0..m * m).map(|_| Complex64::new(st.next_gaussian(), 0.0)).collect();
    let a = t.matvec(&plane).unwrap();
    let b = drpe_fft(&masks, m, &plane);
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).norm() < 1e-10, "{p} vs {q}");
    }
}

#[test]
fn trivial_masks_give_identity_transfer() {
    let t = drpe_transfer_matrix(&DrpeMasks::trivial(4), 4).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((t[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn natural_image_energy_sits_in_sub_block_corners() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/coffee512.pgm");
    let img = load_pgm(path).unwrap();
    let n = img.side();
    let s: DenseMatrix = rpfrct2d_forward(&img.to_matrix(), 0.99, 0.95).unwrap();
    let region = IndexRegion::corners_2d(n, 0.5);
    let (mut inside, mut total) = (0.0, 0.0);
    for col in 0..n {
        for row in 0..n {
            let e = s[(row, col)] * s[(row, col)];
            total += e;
            if region.contains(col * n + row) {
                inside += e;
            }
        }
    }
    assert!(inside / total >= 0.7, "corner energy share {}", inside / total);
}
