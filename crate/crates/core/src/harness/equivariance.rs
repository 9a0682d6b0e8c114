use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::autodiff::ParamStore;
use crate::data::{load_idx, upsample_bicubic, ImageGrid};
use crate::haar::{metropolis_haar, SamplerConfig};
use crate::layers::{
    group_conv, lifting_equivariance, max_relative_deviation, summarize_equivariance, LiftedImage, Model,
    Translated,
};
use crate::lie::{AlgebraVector, GroupElement, GroupKind, GroupSpec};

use super::train::mix;
use super::{ExperimentConfig, HarnessError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivarianceRow {
    pub layer: String,
    pub group: GroupKind,
    /// Image width in pixels at this resolution.
    pub width: usize,
    pub plane_scale: f64,
    /// Haar sample count for the group convolution.
    pub samples: Option<usize>,
    pub warp_sigma: f64,
    pub warps: usize,
    pub points: usize,
    pub images: usize,
    pub error: f64,
    pub pair_mean: f64,
    pub skipped_pairs: usize,
    pub max_relative_deviation: Option<f64>,
}

/// `n` warps `exp(ξ)` with `ξ ~ N(0, σ² I)` in algebra coordinates.
pub fn gaussian_warps(spec: &GroupSpec, sigma: f64, n: usize, seed: u64) -> Result<Vec<GroupElement>, HarnessError> {
    let normal = Normal::new(0.0, sigma).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let xi = AlgebraVector::new((0..spec.dim()).map(|_| normal.sample(&mut rng)).collect())?;
            Ok(spec.exp(&xi)?)
        })
        .collect()
}

fn test_images(cfg: &ExperimentConfig) -> Result<Vec<ImageGrid>, HarnessError> {
    let (Some(i), Some(l)) = (&cfg.data.test_images, &cfg.data.test_labels) else {
        return Err(HarnessError::Config("equivariance test needs data.test_images".into()));
    };
    let data = load_idx(i, l)?;
    let e = &cfg.equivariance;
    let end = e.first_image + e.images;
    if end > data.len() {
        return Err(HarnessError::Config(format!("test split has {} images, need {end}", data.len())));
    }
    Ok(data.images[e.first_image..end].to_vec())
}

/// Measures the equivariance error of the lifting layer (with and without
/// the Jacobian factor, at the native grid and after each bicubic
/// doubling) and of the sampled group convolution. Writes
/// `equivariance.csv` and `equivariance.json` when `out` is given.
pub fn equivariance_test(
    cfg: &ExperimentConfig,
    params: Option<&ParamStore>,
    out: Option<&Path>,
) -> Result<Vec<EquivarianceRow>, HarnessError> {
    let e = &cfg.equivariance;
    let model = Model::new(cfg.model.clone())?;
    let owned;
    let params = match params {
        Some(p) => {
            model.check_params(p)?;
            p
        }
        None => {
            owned = model.init_params(cfg.seed)?;
            &owned
        }
    };
    let spec = model.spec();
    let images = test_images(cfg)?;
    let warps = gaussian_warps(spec, e.warp_sigma, e.warps, mix(cfg.seed, 1))?;
    let points = metropolis_haar(spec, &SamplerConfig::new(e.points, e.point_radius, mix(cfg.seed, 2)))?;
    let points = points.exp_pos();
    let row = |layer: &str, img: &ImageGrid, samples, n_points, error, pair_mean, skipped, dev| EquivarianceRow {
        layer: layer.to_string(),
        group: spec.kind(),
        width: img.width(),
        plane_scale: img.scale(),
        samples,
        warp_sigma: e.warp_sigma,
        warps: warps.len(),
        points: n_points,
        images: images.len(),
        error,
        pair_mean,
        skipped_pairs: skipped,
        max_relative_deviation: dev,
    };

    let mut rows = Vec::new();
    let mut level: Vec<ImageGrid> = images.clone();
    let mut canvas = (e.canvas[0], e.canvas[1]);
    for d in 0..=e.doublings {
        if d > 0 {
            level = level.iter().map(upsample_bicubic).collect::<Result<_, _>>()?;
            canvas = (2 * canvas.0 - 1, 2 * canvas.1 - 1);
        }
        for (layer, jac) in [("lifting", true), ("naive-lifting", false)] {
            let mut per_warp = Vec::new();
            let (mut pair, mut skipped) = (0.0, 0);
            for img in &level {
                let r = lifting_equivariance(params, model.lifting(), img, &warps, points, canvas, jac)?;
                per_warp.extend(r.per_warp);
                pair += r.pair_mean / level.len() as f64;
                skipped += r.skipped_pairs;
            }
            let err = per_warp.iter().sum::<f64>() / per_warp.len().max(1) as f64;
            log::info!("{layer} at {} px: error {err:.5}", level[0].width());
            rows.push(row(layer, &level[0], None, points.len(), err, pair, skipped, None));
        }
    }

    let conv_points = &points[..e.conv_points.min(points.len())];
    let k = model.algebra().out_channels();
    for &n in &e.conv_samples {
        let haar = metropolis_haar(spec, &model.config().sampler.sampler(n, mix(cfg.seed, 100 + n as u64)))?;
        let mut reference = Vec::new();
        let mut other = Vec::new();
        let mut dev: f64 = 0.0;
        for img in &images {
            let field = LiftedImage {
                kind: spec.kind(),
                filter: model.lifting(),
                params,
                image: img,
                jacobian: true,
                relu: true,
            };
            for u in &warps {
                let u_inv = u.inverse()?;
                let moved = conv_points
                    .iter()
                    .map(|v| u_inv.multiply(v))
                    .collect::<Result<Vec<_>, _>>()?;
                let lhs = group_conv(&field, model.algebra(), params, &haar, &moved)?;
                let shifted = Translated::new(&field, u)?;
                let rhs = group_conv(&shifted, model.algebra(), params, &haar, conv_points)?;
                dev = dev.max(max_relative_deviation(&lhs, &rhs, k));
                reference.push(lhs);
                other.push(rhs);
            }
        }
        let r = summarize_equivariance(&reference, &other, k);
        log::info!("group-conv N={n}: error {:.3e}, max deviation {dev:.3e}", r.error);
        rows.push(row("group-conv", &images[0], Some(n), conv_points.len(), r.error, r.pair_mean, r.skipped_pairs, Some(dev)));
    }

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("equivariance.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        std::fs::write(out.join("equivariance.json"), serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(rows)
}
