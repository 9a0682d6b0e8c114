use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::autodiff::{grad_check, ParamStore, Tape, Tensor};
use crate::data::ImageGrid;
use crate::haar::{gaussian_identity_samples, metropolis_haar, SampleSet, SamplerConfig};
use crate::lie::{AlgebraVector, GroupElement, GroupKind, GroupSpec};

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

fn random_algebra(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> AlgebraVector {
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    AlgebraVector::new(v.into_iter().map(|x| x * scale / norm).collect()).unwrap()
}

fn random_elements(spec: &GroupSpec, n: usize, scale: f64, seed: u64) -> Vec<GroupElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| spec.exp(&random_algebra(spec.dim(), scale, &mut rng)).unwrap())
        .collect()
}

fn lifting_setup(k: usize, radius: f64, seed: u64) -> (LiftingFilter, ParamStore) {
    let filter = LiftingFilter::new("lift", &[16, 16], 1, k, radius).unwrap();
    let mut store = ParamStore::new();
    filter.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (filter, store)
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n
}

#[test]
fn support_mask_profile() {
    assert_eq!(support_mask(0.0), 1.0);
    assert_eq!(support_mask(0.8), 1.0);
    assert!((support_mask(0.9) - 0.5).abs() < 1e-12);
    assert_eq!(support_mask(1.0), 0.0);
    assert_eq!(support_mask(3.0), 0.0);
    let mut prev = 1.0;
    for i in 0..=100 {
        let m = support_mask(0.8 + 0.002 * i as f64);
        assert!(m <= prev);
        prev = m;
    }
}

#[test]
fn lifting_filter_vanishes_outside_its_disc() {
    let (filter, params) = lifting_setup(4, 0.25, 1);
    let v = filter.eval(&params, &[[0.25, 0.0], [0.0, -0.3], [0.2, 0.2]]).unwrap();
    assert!(v.iter().all(|x| *x == 0.0));
    let inside = filter.eval(&params, &[[0.05, -0.02]]).unwrap();
    assert_eq!(inside.len(), 4);
    assert!(inside.iter().any(|x| *x != 0.0));
}

#[test]
fn lifting_at_identity_is_plain_correlation() {
    let img = blob_image(28, 28);
    let (filter, params) = lifting_setup(4, 0.25, 2);
    let spec = GroupSpec::get(GroupKind::Affine);
    let got = lifting_values(&params, &filter, &img, &[spec.identity()], true).unwrap();
    let mut want = vec![0.0; 4];
    for r in 0..28 {
        for c in 0..28 {
            let psi = filter.eval(&params, &[img.plane_point(r, c)]).unwrap();
            for k in 0..4 {
                want[k] += img.get(r, c, 0) * psi[k] * img.cell_area();
            }
        }
    }
    assert!(rel_diff(&want, &got) < 1e-12, "{want:?} vs {got:?}");
}

#[test]
fn lifting_plan_matches_direct_sum() {
    let img = blob_image(28, 28);
    let (filter, params) = lifting_setup(3, 0.25, 3);
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let spec = GroupSpec::get(kind);
        let elements = random_elements(spec, 12, 0.4, 5);
        for jacobian in [true, false] {
            let fast = lifting_values(&params, &filter, &img, &elements, jacobian).unwrap();
            for (g, row) in elements.iter().zip(fast.chunks(3)) {
                let slow = lifting_reference(&params, &filter, &img, g, jacobian).unwrap();
                assert!(rel_diff(&slow, row) < 1e-10, "{kind} {jacobian}: {slow:?} vs {row:?}");
            }
        }
    }
}

/// `∫ ψ(y) dy` over the filter disc by midpoint quadrature in polar
/// coordinates.
fn filter_integral(filter: &LiftingFilter, params: &ParamStore) -> Vec<f64> {
    let (nr, na) = (200, 256);
    let r = filter.radius();
    let mut pts = Vec::with_capacity(nr * na);
    let mut w = Vec::with_capacity(nr * na);
    for i in 0..nr {
        let rho = r * (i as f64 + 0.5) / nr as f64;
        for j in 0..na {
            let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / na as f64;
            pts.push([rho * th.cos(), rho * th.sin()]);
            w.push(rho * (r / nr as f64) * (2.0 * std::f64::consts::PI / na as f64));
        }
    }
    let v = filter.eval(params, &pts).unwrap();
    let k = filter.out_channels();
    let mut out = vec![0.0; k];
    for (p, wp) in w.iter().enumerate() {
        for c in 0..k {
            out[c] += wp * v[p * k + c];
        }
    }
    out
}

#[test]
fn constant_image_lifting_is_warp_independent() {
    let c = 0.7;
    let (filter, params) = lifting_setup(4, 0.25, 4);
    let oracle: Vec<f64> = filter_integral(&filter, &params).iter().map(|v| c * v).collect();
    // A 109-pixel lattice over the same square keeps the Riemann sum close
    // to the integral; the lattice error at 28 pixels is several percent.
    let img = ImageGrid::new(109, 109, 1, vec![c; 109 * 109]).unwrap();
    let spec = GroupSpec::get(GroupKind::Affine);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut warps = vec![spec.identity()];
    for _ in 0..20 {
        // Traceless linear part keeps the warp volume preserving.
        let mut xi = random_algebra(6, 0.1, &mut rng).into_vec();
        let t = 0.5 * (xi[0] + xi[4]);
        xi[0] -= t;
        xi[4] -= t;
        warps.push(spec.exp(&AlgebraVector::new(xi).unwrap()).unwrap());
    }
    let vals = lifting_values(&params, &filter, &img, &warps, true).unwrap();
    for row in vals.chunks(4) {
        assert!(rel_diff(&oracle, row) < 0.01, "{oracle:?} vs {row:?}");
    }
}

fn volume_preserving(spec: &GroupSpec, n: usize, scale: f64, seed: u64) -> Vec<GroupElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut xi = random_algebra(6, scale, &mut rng).into_vec();
            let t = 0.5 * (xi[0] + xi[4]);
            xi[0] -= t;
            xi[4] -= t;
            spec.exp(&AlgebraVector::new(xi).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn naive_and_corrected_lifting_agree_for_volume_preserving_warps() {
    let img = blob_image(28, 28);
    let (filter, params) = lifting_setup(4, 0.25, 6);
    let spec = GroupSpec::get(GroupKind::Affine);
    let warps = volume_preserving(spec, 5, 0.2, 10);
    let points = volume_preserving(spec, 20, 0.4, 11);
    let a = lifting_equivariance(&params, &filter, &img, &warps, &points, (40, 40), true).unwrap();
    let b = lifting_equivariance(&params, &filter, &img, &warps, &points, (40, 40), false).unwrap();
    assert!((a.error - b.error).abs() <= 1e-12, "{} vs {}", a.error, b.error);
    assert!((a.pair_mean - b.pair_mean).abs() <= 1e-12);

    // With arbitrary evaluation points both layers differ by the constant
    // factor det(v⁻¹) on each side, so per-pair ratios still coincide.
    let haar = metropolis_haar(spec, &SamplerConfig::new(20, 0.5, 3)).unwrap();
    let a = lifting_equivariance(&params, &filter, &img, &warps, haar.exp_pos(), (40, 40), true).unwrap();
    let b = lifting_equivariance(&params, &filter, &img, &warps, haar.exp_pos(), (40, 40), false).unwrap();
    assert!((a.pair_mean - b.pair_mean).abs() <= 1e-12, "{} vs {}", a.pair_mean, b.pair_mean);
}

#[test]
fn naive_lifting_breaks_under_scaling() {
    let img = blob_image(28, 28);
    let (filter, params) = lifting_setup(4, 0.25, 7);
    let spec = GroupSpec::get(GroupKind::Affine);
    let mut xi = vec![0.0; 6];
    xi[0] = 0.3;
    xi[4] = 0.3;
    let u = spec.exp(&AlgebraVector::new(xi).unwrap()).unwrap();
    let points = metropolis_haar(spec, &SamplerConfig::new(30, 0.5, 4)).unwrap();
    let corrected = lifting_equivariance(&params, &filter, &img, &[u.clone()], points.exp_pos(), (40, 40), true).unwrap();
    let naive = lifting_equivariance(&params, &filter, &img, &[u], points.exp_pos(), (40, 40), false).unwrap();
    assert!(naive.error >= 10.0 * corrected.error, "naive {} corrected {}", naive.error, corrected.error);

    let id = spec.identity();
    for jac in [true, false] {
        let r = lifting_equivariance(&params, &filter, &img, &[id.clone()], points.exp_pos(), (28, 28), jac).unwrap();
        assert!(r.error < 1e-24, "{}", r.error);
    }
}

fn smooth_field(kind: GroupKind) -> impl FeatureField {
    FnField::new(kind, 3, |g: &GroupElement| {
        let m = g.to_row_major();
        Ok(vec![
            (m[0] + 0.3 * m[5]).sin() + m[1],
            (m[4] * m[2]).cos() - m[3] * m[3],
            m.iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum::<f64>().tanh(),
        ])
    })
}

fn algebra_setup(dim: usize, kin: usize, kout: usize, r: f64, seed: u64) -> (AlgebraFilter, ParamStore) {
    let f = AlgebraFilter::new("gconv", dim, &[32, 32], kin, kout, r).unwrap();
    let mut store = ParamStore::new();
    f.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (f, store)
}

#[test]
fn sampled_group_conv_is_exactly_equivariant() {
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let spec = GroupSpec::get(kind);
        let field = smooth_field(kind);
        let (filter, params) = algebra_setup(spec.dim(), 3, 5, 0.5, 11);
        let points = random_elements(spec, 20, 0.3, 12);
        let warps = random_elements(spec, 5, 0.4, 13);
        for n in [1, 5, 50] {
            let haar = metropolis_haar(spec, &SamplerConfig::new(n, 0.5, 14)).unwrap();
            for w in &warps {
                let w_inv = w.inverse().unwrap();
                let moved: Vec<_> = points.iter().map(|v| w_inv.multiply(v).unwrap()).collect();
                let lhs = group_conv(&field, &filter, &params, &haar, &moved).unwrap();
                let shifted = Translated::new(&field, w).unwrap();
                let rhs = group_conv(&shifted, &filter, &params, &haar, &points).unwrap();
                let dev = max_relative_deviation(&lhs, &rhs, 5);
                assert!(dev <= 1e-10, "{kind} N={n}: {dev}");
            }
        }
    }
}

#[test]
fn sampled_equivariance_holds_on_lifted_images() {
    let spec = GroupSpec::get(GroupKind::Affine);
    let img = blob_image(28, 28);
    let (lift, lift_params) = lifting_setup(4, 0.25, 15);
    let (filter, mut params) = algebra_setup(6, 4, 3, 0.5, 16);
    for (name, t) in lift_params.iter() {
        params.insert(name, t.clone()).unwrap();
    }
    let field = LiftedImage {
        kind: GroupKind::Affine,
        filter: &lift,
        params: &params,
        image: &img,
        jacobian: true,
        relu: true,
    };
    let haar = metropolis_haar(spec, &SamplerConfig::new(5, 0.5, 17)).unwrap();
    let points = random_elements(spec, 20, 0.2, 18);
    let warps = random_elements(spec, 3, 0.3, 19);
    let report = group_conv_equivariance(&field, &filter, &params, &haar, &warps, &points).unwrap();
    assert!(report.error <= 1e-20, "{report:?}");
}

#[test]
fn identity_filter_averages_the_field() {
    let spec = GroupSpec::get(GroupKind::Affine);
    let filter = AlgebraFilter::new("id", 6, &[4], 3, 3, 0.5).unwrap();
    let mut params = ParamStore::new();
    params.insert("id.w0", Tensor::zeros(vec![6, 4])).unwrap();
    params.insert("id.b0", Tensor::zeros(vec![4])).unwrap();
    params.insert("id.w1", Tensor::zeros(vec![4, 9])).unwrap();
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    params.insert("id.b1", Tensor::new(vec![9], eye).unwrap()).unwrap();
    let field = smooth_field(GroupKind::Affine);
    let haar = metropolis_haar(spec, &SamplerConfig::new(7, 0.5, 20)).unwrap();
    let points = random_elements(spec, 4, 0.3, 21);
    let got = group_conv(&field, &filter, &params, &haar, &points).unwrap();
    for (u, row) in points.iter().zip(got.chunks(3)) {
        let mut mean = vec![0.0; 3];
        for e in haar.exp_neg() {
            let v = field.eval(&[u.multiply(e).unwrap()]).unwrap();
            for k in 0..3 {
                mean[k] += v[k] / 7.0;
            }
        }
        assert!(rel_diff(&mean, row) < 1e-13);
    }
}

#[test]
fn group_conv_rejects_mixed_groups() {
    let field = smooth_field(GroupKind::Affine);
    let spec = GroupSpec::get(GroupKind::Homography);
    let (filter, params) = algebra_setup(8, 3, 2, 0.5, 22);
    let haar = metropolis_haar(spec, &SamplerConfig::new(3, 0.5, 23)).unwrap();
    let err = group_conv(&field, &filter, &params, &haar, &[spec.identity()]).unwrap_err();
    assert!(matches!(err, LayerError::GroupMismatch(_)));
}

#[test]
fn group_conv_tape_matches_direct_sum() {
    let spec = GroupSpec::get(GroupKind::Affine);
    let img = blob_image(20, 20);
    let (lift, mut params) = lifting_setup(3, 0.3, 24);
    let filter = AlgebraFilter::new("gconv", 6, &[8], 3, 2, 0.5).unwrap();
    filter.init(&mut params, &mut ChaCha8Rng::seed_from_u64(25)).unwrap();
    let haar = metropolis_haar(spec, &SamplerConfig::new(6, 0.5, 26)).unwrap();
    let pool = gaussian_identity_samples(spec, 0.1, 4, 27).unwrap();
    let mut elements = Vec::new();
    for u in pool.exp_pos() {
        for e in haar.exp_neg() {
            elements.push(u.multiply(e).unwrap());
        }
    }
    let plan = LiftingPlan::build(GridShape::of(&img), &lift, &elements, true).unwrap();
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape).unwrap();
    let l = lifting_forward(&mut tape, &pv, &lift, &plan, &[&img]).unwrap();
    let y = group_conv_forward(&mut tape, &pv, &filter, l, &haar, 4).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 2]);
    let field = LiftedImage {
        kind: GroupKind::Affine,
        filter: &lift,
        params: &params,
        image: &img,
        jacobian: true,
        relu: false,
    };
    let direct = group_conv(&field, &filter, &params, &haar, pool.exp_pos()).unwrap();
    assert!(rel_diff(&direct, tape.value(y).data()) < 1e-12);
}

#[test]
fn residual_block_with_zero_output_layer_is_identity() {
    let block = ResidualBlock::new("fc", 5, 7);
    let mut params = ParamStore::new();
    block.init(&mut params, &mut ChaCha8Rng::seed_from_u64(28)).unwrap();
    params.get_mut("fc.w2").unwrap().data_mut().fill(0.0);
    let x = Tensor::from_fn(vec![4, 5], |i| (i as f64 * 0.37).sin());
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape).unwrap();
    let xv = tape.constant(x.clone()).unwrap();
    let y = block.forward(&mut tape, &pv, xv).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn residual_block_commutes_with_row_permutation() {
    let block = ResidualBlock::new("fc", 4, 6);
    let mut params = ParamStore::new();
    block.init(&mut params, &mut ChaCha8Rng::seed_from_u64(29)).unwrap();
    let x = Tensor::from_fn(vec![5, 4], |i| (i as f64 * 0.91).cos());
    let perm = [3, 0, 4, 1, 2];
    let mut xp = Vec::new();
    for &p in &perm {
        xp.extend_from_slice(&x.data()[p * 4..(p + 1) * 4]);
    }
    let run = |t: Tensor| {
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape).unwrap();
        let xv = tape.constant(t).unwrap();
        let h = block.forward(&mut tape, &pv, xv).unwrap();
        let h = tape.relu(h).unwrap();
        tape.value(h).data().to_vec()
    };
    let y = run(x.clone());
    let yp = run(Tensor::new(vec![5, 4], xp).unwrap());
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(&yp[i * 4..(i + 1) * 4], &y[p * 4..(p + 1) * 4]);
    }
}

#[test]
fn residual_block_rejects_wrong_width() {
    let block = ResidualBlock::new("fc", 4, 6);
    let mut params = ParamStore::new();
    block.init(&mut params, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape).unwrap();
    let x = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
    assert!(matches!(block.forward(&mut tape, &pv, x), Err(LayerError::Config(_))));
}

#[test]
fn residual_block_gradients_match_finite_differences() {
    let block = ResidualBlock::new("fc", 4, 6);
    let mut params = ParamStore::new();
    block.init(&mut params, &mut ChaCha8Rng::seed_from_u64(31)).unwrap();
    for name in ["fc.b1", "fc.b2"] {
        let t = params.get_mut(name).unwrap();
        let n = t.numel();
        t.data_mut().copy_from_slice(&(0..n).map(|i| 0.1 * i as f64 - 0.2).collect::<Vec<_>>());
    }
    let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(Tensor::from_fn(vec![3, 4], |i| (i as f64 * 1.3).sin()));
    let report = grad_check(&inputs, 1e-6, |tape, vars| {
        let (p, x) = vars.split_at(vars.len() - 1);
        let pv = params.bind(p)?;
        let y = block.forward(tape, &pv, x[0]).map_err(|e| match e {
            LayerError::Ad(e) => e,
            other => panic!("{other}"),
        })?;
        let y = tape.mul(y, y)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn max_head_matches_plain_evaluation() {
    let head = MaxHead::new("head", 3, 4);
    let mut params = ParamStore::new();
    head.init(&mut params, &mut ChaCha8Rng::seed_from_u64(32)).unwrap();
    params.get_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
    let x = Tensor::from_fn(vec![2 * 5, 3], |i| (i as f64 * 0.77).sin());
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape).unwrap();
    let xv = tape.constant(x.clone()).unwrap();
    let s = head.forward(&mut tape, &pv, xv, 5).unwrap();
    assert_eq!(tape.value(s).shape(), &[2, 4]);
    let a = params.get("head.a").unwrap().data();
    let b = params.get("head.b").unwrap().data();
    for i in 0..2 {
        let want = invariant_max_head(&x.data()[i * 15..(i + 1) * 15], 3, a, b).unwrap();
        assert!(rel_diff(&want, &tape.value(s).data()[i * 4..(i + 1) * 4]) < 1e-14);
    }
}

#[test]
fn max_head_single_sample_and_constant_features() {
    let a = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
    let b = [0.25, -0.5];
    let f = [0.3, -0.7, 1.1];
    let single = invariant_max_head(&f, 3, &a, &b).unwrap();
    let want = [
        0.3 * 1.0 - 0.7 * 0.5 + 1.1 * 0.0 + 0.25,
        0.3 * -2.0 - 0.7 * 3.0 + 1.1 * 1.0 - 0.5,
    ];
    for (s, w) in single.iter().zip(want) {
        assert!((s - w).abs() < 1e-15);
    }
    for m in [2, 7, 40] {
        let rep: Vec<f64> = f.iter().copied().cycle().take(3 * m).collect();
        assert_eq!(invariant_max_head(&rep, 3, &a, &b).unwrap(), single);
    }
    assert!(invariant_max_head(&[], 3, &a, &b).is_err());
}

/// Flat-topped bump on `‖log g‖`: one on `[0, ρ]`, falling linearly to zero
/// over the next 0.2.
fn plateau(g: &GroupElement, spec: &GroupSpec, rho: f64) -> f64 {
    match spec.log(g) {
        Ok(xi) => (1.0 - (xi.norm() - rho).max(0.0) / 0.2).max(0.0),
        Err(_) => 0.0,
    }
}

#[test]
fn head_is_invariant_inside_certified_radius() {
    let spec = GroupSpec::get(GroupKind::Affine);
    let rho = 0.15;
    let pool = gaussian_identity_samples(spec, 0.1, 100, 33).unwrap();
    let a = [1.0, 2.0];
    let b = [0.0, 0.5];
    let score = |v: &GroupElement| -> Result<Vec<f64>, LayerError> {
        let v_inv = v.inverse()?;
        let values: Vec<f64> = pool
            .exp_pos()
            .iter()
            .map(|u| plateau(&v_inv.multiply(u).unwrap(), spec, rho))
            .collect();
        invariant_max_head(&values, 1, &a, &b)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let dirs: Vec<_> = (0..50).map(|_| random_algebra(6, 1.0, &mut rng)).collect();
    let delta = certified_radius(spec, &dirs, 0.5, 100, score).unwrap();
    assert!(delta >= rho - 0.005, "delta {delta}");
    // Inside the ball the best pool sample stays on the plateau.
    let v = spec.exp(&dirs[0].scaled(0.9 * rho)).unwrap();
    assert_eq!(score(&v).unwrap(), vec![1.0, 2.5]);
}

fn tiny_config(kind: GroupKind) -> ModelConfig {
    ModelConfig {
        group: kind,
        lift_channels: 3,
        conv_channels: 4,
        lift_hidden: vec![5],
        algebra_hidden: vec![5],
        lift_radius: 0.5,
        fc_blocks: 1,
        fc_width: 6,
        num_classes: 3,
        n_conv_samples: 4,
        n_pool_samples: 3,
        sampler: ConvSampling {
            burn_in: 50,
            ..ConvSampling::default()
        },
        ..ModelConfig::default()
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let model = Model::new(tiny_config(kind)).unwrap();
        let params = model.init_params(35).unwrap();
        let samples = model.draw_samples(36).unwrap();
        let images = [blob_image(12, 12), blob_image(12, 12).padded(12, 12).unwrap()];
        let refs: Vec<&ImageGrid> = images.iter().collect();
        let plan = model.plan(GridShape::of(&images[0]), &samples).unwrap();
        let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let report = grad_check(&inputs, 1e-6, |tape, vars| {
            let pv = params.bind(vars)?;
            let s = model
                .forward_planned(tape, &pv, &refs, &samples, &plan)
                .map_err(|e| match e {
                    LayerError::Ad(e) => e,
                    other => panic!("{other}"),
                })?;
            tape.softmax_cross_entropy(s, &[0, 2])
        })
        .unwrap();
        assert!(report.passes(1e-3), "{kind}: {}", report.max_rel_error);
    }
}

#[test]
fn model_smoke_and_eval_determinism() {
    let cfg = ModelConfig {
        n_conv_samples: 20,
        n_pool_samples: 10,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg).unwrap();
    let params = model.init_params(37).unwrap();
    let img = blob_image(28, 28);
    let s1 = model.eval_samples().unwrap();
    let s2 = model.eval_samples().unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1.pool.xi()[0].as_slice(), &[0.0; 6]);
    let a = model.predict(&params, &[&img], &s1, None).unwrap();
    let b = model.predict(&params, &[&img], &s2, None).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].len(), 10);
    assert!(a[0].iter().all(|v| v.is_finite()));
    assert_eq!(a, b);
    let plan = model.plan(GridShape::of(&img), &s1).unwrap();
    assert_eq!(plan.num_elements(), 20 * 10);

    let fresh = model.draw_samples(99).unwrap();
    assert_ne!(fresh.conv, s1.conv);
}

fn channel_moments(values: &[f64], channels: usize) -> Vec<(f64, f64)> {
    let n = (values.len() / channels) as f64;
    (0..channels)
        .map(|c| {
            let m = values.iter().skip(c).step_by(channels).sum::<f64>() / n;
            let v = values.iter().skip(c).step_by(channels).map(|x| (x - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect()
}

#[test]
fn calibration_standardises_both_convolutions() {
    for kind in [GroupKind::Affine, GroupKind::Homography] {
        let cfg = ModelConfig {
            n_conv_samples: 6,
            ..tiny_config(kind)
        };
        let model = Model::new(cfg.clone()).unwrap();
        let mut params = model.init_params(40).unwrap();
        let a = blob_image(16, 16);
        let b = ImageGrid::new(16, 16, 1, a.pixels().iter().rev().copied().collect()).unwrap();
        let refs = [&a, &b];
        let s = model.draw_samples(41).unwrap();
        model.calibrate(&mut params, &refs, &s).unwrap();
        assert!(model.check_params(&params).is_ok());

        let plan = model.plan(GridShape::of(&a), &s).unwrap();
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape).unwrap();
        let lifted = model.lifted(&mut tape, &pv, &refs, &plan).unwrap();
        let relu = tape.relu(lifted).unwrap();
        let conv = model.convolved(&mut tape, &pv, relu, &s).unwrap();
        for (v, k) in [(lifted, cfg.lift_channels), (conv, cfg.conv_channels)] {
            for (m, sd) in channel_moments(tape.value(v).data(), k) {
                assert!(m.abs() < 1e-9, "{kind}: mean {m}");
                assert!(sd == 0.0 || (sd - 1.0).abs() < 1e-9, "{kind}: sd {sd}");
            }
        }

        let mut again = model.init_params(40).unwrap();
        model.calibrate(&mut again, &refs, &s).unwrap();
        assert_eq!(again, params);
    }
}

#[test]
fn batched_scores_match_single_images() {
    let model = Model::new(tiny_config(GroupKind::Affine)).unwrap();
    let params = model.init_params(38).unwrap();
    let s = model.draw_samples(39).unwrap();
    let a = blob_image(16, 16);
    let b = ImageGrid::new(16, 16, 1, a.pixels().iter().rev().copied().collect()).unwrap();
    let both = model.predict(&params, &[&a, &b], &s, None).unwrap();
    let sa = model.predict(&params, &[&a], &s, None).unwrap();
    let sb = model.predict(&params, &[&b], &s, None).unwrap();
    assert!(rel_diff(&sa[0], &both[0]) < 1e-13);
    assert!(rel_diff(&sb[0], &both[1]) < 1e-13);
}

#[test]
fn model_config_validation_and_parsing() {
    assert!(Model::new(ModelConfig {
        n_conv_samples: 0,
        ..ModelConfig::default()
    })
    .is_err());
    assert!(Model::new(ModelConfig {
        lift_radius: -1.0,
        ..ModelConfig::default()
    })
    .is_err());
    let cfg: ModelConfig = toml::from_str("group = \"homography\"\nn_conv_samples = 7\n[sampler]\nburn_in = 10\n").unwrap();
    assert_eq!(cfg.group, GroupKind::Homography);
    assert_eq!(cfg.n_conv_samples, 7);
    assert_eq!(cfg.sampler.burn_in, 10);
    assert_eq!(cfg.sampler.support_radius, 0.5);
    assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
}

#[test]
fn model_rejects_mismatched_params() {
    let model = Model::new(tiny_config(GroupKind::Affine)).unwrap();
    let other = Model::new(tiny_config(GroupKind::Homography)).unwrap();
    let params = other.init_params(1).unwrap();
    assert!(model.check_params(&params).is_err());
    assert!(model.check_params(&model.init_params(2).unwrap()).is_ok());
}

#[test]
fn conv_samples_come_from_configured_box() {
    let model = Model::new(tiny_config(GroupKind::Homography)).unwrap();
    let s: SampleSet = model.draw_samples(40).unwrap().conv;
    assert_eq!(s.len(), 4);
    assert!(s.xi().iter().all(|x| x.max_norm() <= 0.5));
}
