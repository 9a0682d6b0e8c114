//! Equivariance error of the lifting layer and the sampled group
//! convolution.
//!
//! For warps `u` and evaluation points `v` the error compares `L_u(f*ψ)(v)`,
//! computed as `(f*ψ)(u⁻¹v)`, with `(L_u f)*ψ(v)`. Per warp the squared
//! differences and squared references are summed over points and channels
//! and their ratio taken; the reported error is the mean of these ratios
//! over warps.

use serde::Serialize;

use crate::autodiff::ParamStore;
use crate::data::{warp_image, ImageGrid};
use crate::haar::SampleSet;
use crate::lie::{AlgebraVector, GroupElement, GroupSpec};

use super::group_conv::{group_conv, AlgebraFilter, FeatureField, Translated};
use super::lifting::{lifting_values, LiftingFilter};
use super::LayerError;

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    /// Mean over warps of `Σ_v ‖Δ‖² / Σ_v ‖ref‖²`.
    pub error: f64,
    /// Mean of the per-pair ratios `‖Δ‖² / ‖ref‖²` over pairs with a nonzero
    /// reference.
    pub pair_mean: f64,
    /// Per-warp ratios.
    pub per_warp: Vec<f64>,
    /// Pairs skipped for a zero reference.
    pub skipped_pairs: usize,
    /// Warps skipped because every reference vanished.
    pub skipped_warps: usize,
}

/// Aggregates reference and comparison values, each `[warps][points·K]`.
pub fn summarize_equivariance(reference: &[Vec<f64>], other: &[Vec<f64>], k: usize) -> EquivarianceReport {
    let mut per_warp = Vec::with_capacity(reference.len());
    let (mut pair_sum, mut pairs, mut skipped_pairs, mut skipped_warps) = (0.0, 0usize, 0, 0);
    for (a, b) in reference.iter().zip(other) {
        let (mut num, mut den) = (0.0, 0.0);
        for (ra, rb) in a.chunks(k).zip(b.chunks(k)) {
            let d: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
            let n: f64 = ra.iter().map(|x| x * x).sum();
            num += d;
            den += n;
            if n > 0.0 {
                pair_sum += d / n;
                pairs += 1;
            } else {
                skipped_pairs += 1;
            }
        }
        if den > 0.0 {
            per_warp.push(num / den);
        } else {
            skipped_warps += 1;
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    EquivarianceReport {
        error: mean(&per_warp),
        pair_mean: if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 },
        per_warp,
        skipped_pairs,
        skipped_warps,
    }
}

/// Lifting-layer equivariance on one image. Warped copies are rendered onto
/// `canvas` with bilinear interpolation; `jacobian = false` measures the
/// naive layer.
pub fn lifting_equivariance(
    params: &ParamStore,
    filter: &LiftingFilter,
    image: &ImageGrid,
    warps: &[GroupElement],
    points: &[GroupElement],
    canvas: (usize, usize),
    jacobian: bool,
) -> Result<EquivarianceReport, LayerError> {
    let k = filter.out_channels();
    let mut moved = Vec::with_capacity(warps.len() * points.len());
    for u in warps {
        let u_inv = u.inverse()?;
        for v in points {
            moved.push(u_inv.multiply(v)?);
        }
    }
    let flat = lifting_values(params, filter, image, &moved, jacobian)?;
    let width = points.len() * k;
    let reference: Vec<Vec<f64>> = flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect();
    let mut other = Vec::with_capacity(warps.len());
    for u in warps {
        let warped = warp_image(image, u, canvas)?.image;
        other.push(lifting_values(params, filter, &warped, points, jacobian)?);
    }
    Ok(summarize_equivariance(&reference, &other, k))
}

/// Sampled group-convolution equivariance for a field `f` and a fixed
/// sample set.
pub fn group_conv_equivariance<F: FeatureField>(
    f: &F,
    filter: &AlgebraFilter,
    params: &ParamStore,
    haar: &SampleSet,
    warps: &[GroupElement],
    points: &[GroupElement],
) -> Result<EquivarianceReport, LayerError> {
    let k = filter.out_channels();
    let mut reference = Vec::with_capacity(warps.len());
    let mut other = Vec::with_capacity(warps.len());
    for u in warps {
        let u_inv = u.inverse()?;
        let moved = points
            .iter()
            .map(|v| u_inv.multiply(v))
            .collect::<Result<Vec<_>, _>>()?;
        reference.push(group_conv(f, filter, params, haar, &moved)?);
        let shifted = Translated::new(f, u)?;
        other.push(group_conv(&shifted, filter, params, haar, points)?);
    }
    Ok(summarize_equivariance(&reference, &other, k))
}

/// Largest relative deviation `‖a − b‖ / ‖a‖` over points, each a row of
/// `k` values.
pub fn max_relative_deviation(a: &[f64], b: &[f64], k: usize) -> f64 {
    a.chunks(k)
        .zip(b.chunks(k))
        .map(|(x, y)| {
            let d: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let n: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            if n > 0.0 {
                d / n
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

/// Largest radius `t` on the grid `t_max·k/steps` such that
/// `score(exp(t'·d/‖d‖))` equals `score(e)` exactly for every direction `d`
/// and every grid radius `t' ≤ t`. Returns 0 when the first radius fails.
pub fn certified_radius<F>(
    spec: &GroupSpec,
    directions: &[AlgebraVector],
    t_max: f64,
    steps: usize,
    mut score: F,
) -> Result<f64, LayerError>
where
    F: FnMut(&GroupElement) -> Result<Vec<f64>, LayerError>,
{
    let base = score(&spec.identity())?;
    let mut certified = 0.0;
    for k in 1..=steps {
        let t = t_max * k as f64 / steps as f64;
        for d in directions {
            let v = spec.exp(&d.scaled(t / d.norm()))?;
            if score(&v)? != base {
                return Ok(certified);
            }
        }
        certified = t;
    }
    Ok(certified)
}
