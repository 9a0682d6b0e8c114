use std::path::PathBuf;

use nalgebra::Matrix3;
use sha2::{Digest, Sha256};

use super::*;
use crate::haar::SamplerConfig;
use crate::lie::{AlgebraVector, GroupElement, GroupKind, GroupSpec};

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

fn idx_images_bytes(n: u32, h: u32, w: u32, payload: &[u8]) -> Vec<u8> {
    let mut b = 0x0803u32.to_be_bytes().to_vec();
    for v in [n, h, w] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut b = 0x0801u32.to_be_bytes().to_vec();
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

#[test]
fn idx_two_images() {
    let payload: Vec<u8> = (0..1568).map(|i| (i % 256) as u8).collect();
    let images = parse_idx_images(&idx_images_bytes(2, 28, 28, &payload)).unwrap();
    assert_eq!(images.len(), 2);
    assert_eq!((images[1].height(), images[1].width()), (28, 28));
    assert_eq!(images[1].get(0, 0, 0), (784 % 256) as f64 / 255.0);
    assert_eq!(images[0].get(27, 27, 0), (783 % 256) as f64 / 255.0);
}

#[test]
fn idx_errors_carry_offsets() {
    let mut bad = idx_images_bytes(1, 2, 2, &[0, 1, 2, 3]);
    bad[3] = 0x01;
    match parse_idx_images(&bad) {
        Err(DataError::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("unexpected {other:?}"),
    }
    let short = idx_images_bytes(2, 2, 2, &[0, 1, 2, 3, 4]);
    match parse_idx_images(&short) {
        Err(DataError::Format { offset, .. }) => assert_eq!(offset, 21),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(DataError::Format { .. })));
}

#[test]
fn idx_label_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&ip, idx_images_bytes(2, 1, 1, &[0, 255])).unwrap();
    std::fs::write(&lp, idx_labels_bytes(&[1, 2, 3])).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::Format { .. })));
    std::fs::write(&lp, idx_labels_bytes(&[1, 2])).unwrap();
    let data = load_idx(&ip, &lp).unwrap();
    assert_eq!(data.labels, vec![1, 2]);
    assert_eq!(data.images[1].pixels(), &[1.0]);
}

#[test]
fn bundled_mnist_subset_matches_recorded_checksums() {
    let expected = [
        ("train-images-idx3-ubyte", "74422b12132c7d8b0957cdb994d971a505f77a57ddac808ef1ea84f4bb9e7a2e"),
        ("train-labels-idx1-ubyte", "5dbd7686910cb66a8a6303f16940c2fae43896243c187897cd3976aab00f4817"),
        ("test-images-idx3-ubyte", "39a5f23fe7320d50d2b650bd96c756db7999a84cb13541d939296ed59f1e0663"),
        ("test-labels-idx1-ubyte", "66e4c6deb5f2a061f7d8cd5ec53025fdb9dabb08265e449acb8cf64b8cd36cac"),
    ];
    for (name, digest) in expected {
        let bytes = std::fs::read(mnist_dir().join(name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), digest, "{name}");
    }
    for (split, n) in [("train", 4000), ("test", 1000)] {
        let dir = mnist_dir();
        let data = load_idx(
            &dir.join(format!("{split}-images-idx3-ubyte")),
            &dir.join(format!("{split}-labels-idx1-ubyte")),
        )
        .unwrap();
        assert_eq!(data.len(), n);
        let mut hist = [0usize; 10];
        for &l in &data.labels {
            hist[l as usize] += 1;
        }
        assert!(hist.iter().all(|&c| c == n / 10), "{hist:?}");
        assert!(data.images.iter().all(|im| im.height() == 28 && im.width() == 28));
    }
}

fn mnist_digit(i: usize) -> ImageGrid {
    let dir = mnist_dir();
    let data = load_idx(&dir.join("test-images-idx3-ubyte"), &dir.join("test-labels-idx1-ubyte")).unwrap();
    data.images[i].clone()
}

fn blob_image(h: usize, w: usize) -> ImageGrid {
    let img = ImageGrid::new(h, w, 1, vec![0.0; h * w]).unwrap();
    let mut px = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let [x, y] = img.plane_point(r, c);
            let v = 0.8 * (-((x - 0.2).powi(2) + (y + 0.1).powi(2)) / 0.08).exp()
                + 0.5 * (-((x + 0.3).powi(2) + (y - 0.25).powi(2)) / 0.03).exp();
            px.push(v);
        }
    }
    ImageGrid::new(h, w, 1, px).unwrap()
}

#[test]
fn plane_embedding_is_centred() {
    let img = ImageGrid::new(28, 28, 1, vec![0.0; 784]).unwrap();
    assert_eq!(img.scale(), 13.5);
    assert_eq!(img.plane_point(0, 0), [-1.0, 1.0]);
    assert_eq!(img.plane_point(27, 27), [1.0, -1.0]);
    let (r, c) = img.lattice_coords(img.plane_point(5, 17));
    assert!((r - 5.0).abs() < 1e-12 && (c - 17.0).abs() < 1e-12);
    assert!((img.cell_area() - 1.0 / 182.25).abs() < 1e-15);
}

#[test]
fn ingest_clamps_and_rejects_nan() {
    let img = ImageGrid::new(1, 2, 1, vec![-0.5, 1.5]).unwrap();
    assert_eq!(img.pixels(), &[0.0, 1.0]);
    assert!(ImageGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
    assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
}

#[test]
fn identity_warp_is_exact() {
    let img = mnist_digit(3);
    let spec = GroupSpec::get(GroupKind::Homography);
    let out = warp_image(&img, &spec.identity(), (28, 28)).unwrap();
    assert_eq!(out.image, img);
    assert_eq!(out.at_infinity, 0);
}

#[test]
fn integer_translation_is_a_pixel_shift() {
    let img = mnist_digit(7);
    let (dx, dy) = (3.0, -2.0);
    let s = img.scale();
    let m = Matrix3::new(1.0, 0.0, dx / s, 0.0, 1.0, dy / s, 0.0, 0.0, 1.0);
    let u = GroupElement::new(m, GroupKind::Affine).unwrap();
    let out = warp_image(&img, &u, (28, 28)).unwrap().image;
    for r in 0..28usize {
        for c in 0..28usize {
            // Content moves right by 3 columns and down by 2 rows.
            let (sr, sc) = (r as isize - 2, c as isize - 3);
            let expected = if (0..28).contains(&sr) && (0..28).contains(&sc) {
                img.get(sr as usize, sc as usize, 0)
            } else {
                0.0
            };
            assert_eq!(out.get(r, c, 0), expected, "({r}, {c})");
        }
    }
}

fn random_warp(spec: &GroupSpec, scale: f64, seed: u64) -> GroupElement {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = AlgebraVector::new(raw).unwrap();
    let v = v.scaled(scale / v.norm());
    spec.exp(&v).unwrap()
}

#[test]
fn warp_round_trip_psnr() {
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let spec = GroupSpec::get(kind);
        for seed in 0..5 {
            let u = random_warp(spec, 0.2, seed);
            let canvas = blob_image(28, 28).padded(56, 56).unwrap();
            let there = warp_image(&canvas, &u, (56, 56)).unwrap().image;
            let back = warp_image(&there, &u.inverse().unwrap(), (56, 56)).unwrap().image;
            let p = psnr(&back, &canvas).unwrap();
            assert!(p >= 30.0, "{kind} seed {seed}: {p:.2} dB");
        }
    }
}

#[test]
fn warp_composition_matches_product() {
    let img = mnist_digit(11).padded(40, 40).unwrap();
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let spec = GroupSpec::get(kind);
        for seed in 0..5 {
            let (u, v) = (random_warp(spec, 0.1, seed), random_warp(spec, 0.1, 100 + seed));
            let twice = warp_image(&warp_image(&img, &v, (40, 40)).unwrap().image, &u, (40, 40))
                .unwrap()
                .image;
            let once = warp_image(&img, &u.multiply(&v).unwrap(), (40, 40)).unwrap().image;
            let mad = twice
                .pixels()
                .iter()
                .zip(once.pixels())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / once.pixels().len() as f64;
            assert!(mad <= 2e-2, "{kind} seed {seed}: {mad}");
        }
    }
}

#[test]
fn homography_far_pixels_are_counted() {
    let img = blob_image(28, 28);
    let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0);
    let u = GroupElement::new(m, GroupKind::Homography).unwrap();
    // u⁻¹ has denominator 1 − x, zero on the column at plane x = 1.
    let out = warp_image(&img, &u, (28, 28)).unwrap();
    assert_eq!(out.at_infinity, 28);
    for r in 0..28 {
        assert_eq!(out.image.get(r, 27, 0), 0.0);
    }
}

#[test]
fn bicubic_upsampling_keeps_lattice_values() {
    let img = mnist_digit(2);
    let up = upsample_bicubic(&img).unwrap();
    assert_eq!((up.height(), up.width()), (55, 55));
    assert_eq!(up.scale(), 27.0);
    for r in 0..28 {
        for c in 0..28 {
            assert_eq!(up.get(2 * r, 2 * c, 0), img.get(r, c, 0));
            assert_eq!(up.plane_point(2 * r, 2 * c), img.plane_point(r, c));
        }
    }
    // A linear ramp is reproduced exactly away from the border.
    let ramp: Vec<f64> = (0..100).map(|i| (i % 10) as f64 / 10.0).collect();
    let ramp = ImageGrid::new(10, 10, 1, ramp).unwrap();
    let up = upsample_bicubic(&ramp).unwrap();
    for r in 4..15 {
        for c in 4..15 {
            assert!((up.get(r, c, 0) - c as f64 / 20.0).abs() < 1e-12);
        }
    }
}

#[test]
fn padding_preserves_plane_positions() {
    let img = mnist_digit(0);
    let pad = img.padded(40, 40).unwrap();
    assert_eq!(pad.scale(), img.scale());
    assert_eq!(pad.plane_point(6, 6), img.plane_point(0, 0));
    assert_eq!(pad.get(6 + 10, 6 + 12, 0), img.get(10, 12, 0));
    assert!(img.padded(39, 40).is_err());
}

fn small_set(n: usize) -> LabeledImages {
    let dir = mnist_dir();
    load_idx(&dir.join("test-images-idx3-ubyte"), &dir.join("test-labels-idx1-ubyte"))
        .unwrap()
        .take(n)
}

#[test]
fn tiny_support_gives_centred_originals() {
    let data = small_set(10);
    let spec = GroupSpec::get(GroupKind::Affine);
    let cfg = SamplerConfig::new(1, 1e-6, 3);
    let ds = generate_warped_testset(&data, spec, 1, &cfg, (40, 40)).unwrap();
    for (ex, img) in ds.examples.iter().zip(&data.images) {
        let p = psnr(&ex.image, &img.padded(40, 40).unwrap()).unwrap();
        assert!(p >= 40.0, "{p}");
    }
}

fn hom_cfg(seed: u64) -> SamplerConfig {
    let mut cfg = SamplerConfig::new(1, 0.3, seed);
    cfg.num_chains = 32;
    cfg.thinning = 5;
    cfg.burn_in = 200;
    cfg
}

#[test]
fn homography_protocol_size_and_determinants() {
    let data = small_set(100);
    let spec = GroupSpec::get(GroupKind::Homography);
    let ds = generate_warped_testset(&data, spec, 32, &hom_cfg(9), (40, 40)).unwrap();
    assert_eq!(ds.len(), 3200);
    for (i, ex) in ds.examples.iter().enumerate() {
        assert!((ex.warp.matrix().determinant() - 1.0).abs() < 1e-9);
        assert_eq!(ex.base_id, i / 32);
        assert_eq!(ex.label, data.labels[i / 32]);
    }
    let mut bytes = Vec::new();
    write_warped_dataset(&ds, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 41 + 3200 * (1 + 9 * 8 + 40 * 40 * 4));
    assert_eq!(bytes.len(), ds.encoded_len());
}

#[test]
fn lgwd_round_trip_is_bit_identical() {
    let data = small_set(6);
    let spec = GroupSpec::get(GroupKind::Affine);
    let ds = generate_warped_testset(&data, spec, 3, &hom_cfg(4), (40, 40)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.lgwd");
    save_warped_dataset(&ds, &path).unwrap();
    let back = load_warped_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let mut a = Vec::new();
    write_warped_dataset(&back, &mut a).unwrap();
    assert_eq!(a, std::fs::read(&path).unwrap());

    let manifest = dir.path().join("set.csv");
    write_manifest(&ds, &manifest).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 1 + ds.len());
    assert!(text.starts_with("id,label,m11"));
}

#[test]
fn empty_dataset_is_header_only() {
    let ds = WarpedDataset {
        kind: GroupKind::Homography,
        support_radius: 0.3,
        plane_scale: 13.5,
        n_per_image: 32,
        height: 40,
        width: 40,
        examples: vec![],
    };
    let mut bytes = Vec::new();
    write_warped_dataset(&ds, &mut bytes).unwrap();
    assert_eq!(bytes.len(), LGWD_HEADER_BYTES);
    assert_eq!(read_warped_dataset(bytes.as_slice()).unwrap(), ds);
}

#[test]
fn lgwd_version_mismatch_is_rejected() {
    let ds = WarpedDataset {
        kind: GroupKind::Affine,
        support_radius: 0.3,
        plane_scale: 13.5,
        n_per_image: 1,
        height: 2,
        width: 2,
        examples: vec![],
    };
    let mut bytes = Vec::new();
    write_warped_dataset(&ds, &mut bytes).unwrap();
    bytes[4] = 2;
    match read_warped_dataset(bytes.as_slice()) {
        Err(DataError::Format { offset, message }) => {
            assert_eq!(offset, 4);
            assert!(message.contains("version"));
        }
        other => panic!("unexpected {other:?}"),
    }
    bytes[4] = 1;
    bytes.push(0);
    assert!(read_warped_dataset(bytes.as_slice()).is_err());
}

#[test]
fn generation_is_deterministic() {
    let data = small_set(4);
    let spec = GroupSpec::get(GroupKind::Homography);
    let a = generate_warped_testset(&data, spec, 2, &hom_cfg(21), (40, 40)).unwrap();
    let b = generate_warped_testset(&data, spec, 2, &hom_cfg(21), (40, 40)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn edge_constraint_exhaustion_is_a_config_error() {
    // A full-frame image cannot move at all on its own canvas.
    let data = LabeledImages {
        images: vec![ImageGrid::new(28, 28, 1, vec![1.0; 784]).unwrap()],
        labels: vec![0],
    };
    let spec = GroupSpec::get(GroupKind::Affine);
    let err = generate_warped_testset(&data, spec, 1, &hom_cfg(1), (28, 28)).unwrap_err();
    assert!(matches!(err, DataError::Config(ref m) if m.contains("support_radius")), "{err}");
}

/// Marginal of coordinate `k` of the box-restricted Haar density, integrated
/// by the midpoint rule on a tensor grid.
fn marginal_oracle(spec: &GroupSpec, r: f64, k: usize, bins: usize, per_bin: usize, others: usize) -> Vec<f64> {
    let dim = spec.dim();
    let mut mass = vec![0.0; bins];
    let nk = bins * per_bin;
    let mut idx = vec![0usize; dim];
    let counts: Vec<usize> = (0..dim).map(|d| if d == k { nk } else { others }).collect();
    loop {
        let xi: Vec<f64> = (0..dim)
            .map(|d| -r + (idx[d] as f64 + 0.5) * 2.0 * r / counts[d] as f64)
            .collect();
        let dens = spec.haar_density(&AlgebraVector::new(xi).unwrap()).unwrap();
        mass[idx[k] / per_bin] += dens;
        let mut d = 0;
        loop {
            if d == dim {
                let total: f64 = mass.iter().sum();
                return mass.iter().map(|m| m / total).collect();
            }
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[test]
fn stored_warps_follow_haar_marginals() {
    // A single bright centre pixel never leaves the canvas, so no draw is
    // rejected and the stored warps are exactly the sampler's output.
    let mut px = vec![0.0; 29 * 29];
    px[14 * 29 + 14] = 1.0;
    let data = LabeledImages {
        images: vec![ImageGrid::with_scale(29, 29, 1, px, 14.0).unwrap()],
        labels: vec![5],
    };
    let spec = GroupSpec::get(GroupKind::Affine);
    // Small enough that every warp has a principal logarithm.
    let r = 0.3;
    let mut cfg = SamplerConfig::new(1, r, 77);
    cfg.num_chains = 0;
    cfg.burn_in = 300;
    let n = 3000;
    let ds = generate_warped_testset(&data, spec, n, &cfg, (41, 41)).unwrap();
    let bins = 8;
    for k in [0, 2, 4] {
        let oracle = marginal_oracle(spec, r, k, bins, 3, 5);
        let mut hist = vec![0usize; bins];
        for ex in &ds.examples {
            let xi = spec.log(&ex.warp).unwrap();
            let b = (((xi[k] + r) / (2.0 * r)) * bins as f64).floor() as usize;
            hist[b.min(bins - 1)] += 1;
        }
        for (b, (&h, &p)) in hist.iter().zip(&oracle).enumerate() {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (h as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sd, "coord {k} bin {b}: {h} vs {:.1} ± {sd:.1}", n as f64 * p);
        }
    }
}
