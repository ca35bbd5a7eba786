use evograd_core::task::idx::{decode_images, decode_labels, decode_pair, encode_images, encode_labels, IdxError};
use evograd_core::task::*;
use evograd_core::tensor::Matrix;
use proptest::prelude::*;

#[test]
fn splits_are_disjoint() {
    // Tag every sample with its index so membership can be traced.
    let n = 50;
    let all = Split::new(Matrix::from_fn(n, 1, |r, _| r as f64), (0..n).map(|i| i % 3).collect());
    let d = split_dataset(&all, 20, 15, 10, 3, 77);
    let mut seen: Vec<usize> = [&d.train, &d.val, &d.test]
        .iter()
        .flat_map(|s| s.x.data().iter().map(|&v| v as usize).collect::<Vec<_>>())
        .collect();
    assert_eq!(seen.len(), 45);
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 45);
}

#[test]
fn every_kind_is_deterministic() {
    for kind in [SyntheticKind::Blobs, SyntheticKind::TwoMoons, SyntheticKind::Spirals] {
        let spec = SyntheticSpec::new(kind, 12);
        assert_eq!(generate(&spec), generate(&spec), "{}", kind.name());
        assert_eq!(SyntheticKind::from_name(kind.name()), Some(kind));
    }
}

#[test]
fn idx_fixture_decodes_exactly() {
    let images = [
        0u8, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, //
        0, 255, 51, 102, //
        1, 2, 3, 4,
    ];
    let m = decode_images(&images).unwrap().to_matrix();
    assert_eq!(m.shape(), (2, 4));
    assert_eq!(m.row(0), &[0.0, 1.0, 51.0 / 255.0, 102.0 / 255.0]);
    assert_eq!(m.row(1), &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0]);
    assert!(matches!(decode_labels(&images), Err(IdxError::BadMagic { .. })));
    let labels = encode_labels(&[1, 0, 1]);
    assert!(matches!(decode_pair(&images, &labels), Err(IdxError::CountMismatch { images: 2, labels: 3 })));
}

proptest! {
    #[test]
    fn idx_round_trip(rows in 1usize..5, cols in 1usize..5, count in 0usize..6, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..rows * cols * count).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        let img = encode_images(rows, cols, &pixels);
        let lab = encode_labels(&labels);
        let decoded = decode_images(&img).unwrap();
        prop_assert_eq!((decoded.count, decoded.rows, decoded.cols), (count, rows, cols));
        prop_assert_eq!(&decoded.pixels, &pixels);
        prop_assert_eq!(decode_labels(&lab).unwrap(), labels.clone());
        prop_assert_eq!(encode_images(rows, cols, &decoded.pixels), img.clone());
        let (m, l) = decode_pair(&img, &lab).unwrap();
        prop_assert_eq!(m.shape(), (count, rows * cols));
        prop_assert_eq!(l, labels.iter().map(|&v| usize::from(v)).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_is_reported(cut in 1usize..20) {
        let img = encode_images(2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let short = &img[..img.len().saturating_sub(cut)];
        let truncated = matches!(decode_images(short), Err(IdxError::Truncated { .. }));
        prop_assert!(truncated);
    }
}

/// Solves `a x = b` for square `a` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..b[row].len() {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..b[col].len() {
            let tail: f64 = (col + 1..n).map(|j| a[col][j] * b[j][k]).sum();
            b[col][k] = (b[col][k] - tail) / a[col][col];
        }
    }
    b
}

#[test]
fn low_noise_blobs_are_linearly_separable() {
    for seed in 0..3 {
        let spec = SyntheticSpec { noise: 0.3, ..SyntheticSpec::new(SyntheticKind::Blobs, seed) };
        let d = generate(&spec);
        let (x, y) = (&d.train.x, &d.train.labels);
        // Features plus a bias column, regressed onto one-hot targets.
        let f = x.cols() + 1;
        let row = |r: usize| (0..f).map(move |c| if c < f - 1 { x.get(r, c) } else { 1.0 });
        let mut xtx = vec![vec![0.0; f]; f];
        let mut xty = vec![vec![0.0; d.classes]; f];
        for r in 0..x.rows() {
            let v: Vec<f64> = row(r).collect();
            for i in 0..f {
                for j in 0..f {
                    xtx[i][j] += v[i] * v[j];
                }
                xty[i][y[r]] += v[i];
            }
        }
        let w = solve(xtx, xty);
        let correct = (0..x.rows())
            .filter(|&r| {
                let v: Vec<f64> = row(r).collect();
                let scores: Vec<f64> = (0..d.classes).map(|k| (0..f).map(|i| v[i] * w[i][k]).sum()).collect();
                let best = (0..d.classes).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
                best == y[r]
            })
            .count();
        let acc = correct as f64 / x.rows() as f64;
        assert!(acc >= 0.99, "seed {seed}: {acc}");
    }
}
