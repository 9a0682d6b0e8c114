//! Monte-Carlo group convolution with filters parameterised on the algebra.
//!
//! `(f * ψ)(u) ≈ (1/N) Σᵢ f(u·exp(−ξᵢ)) ψ̃(ξᵢ)` for Haar samples `ξᵢ`.

use rand::Rng;

use crate::autodiff::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::data::ImageGrid;
use crate::haar::SampleSet;
use crate::lie::{GroupElement, GroupKind};

use super::lifting::{lifting_values, LiftingFilter};
use super::{LayerError, Mlp};

/// `ψ̃: ℝ^dim → ℝ^{K_in × K_out}` as an MLP on `ξ / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraFilter {
    mlp: Mlp,
    support_radius: f64,
    in_channels: usize,
    out_channels: usize,
}

impl AlgebraFilter {
    pub fn new(
        prefix: &str,
        dim: usize,
        hidden: &[usize],
        in_channels: usize,
        out_channels: usize,
        support_radius: f64,
    ) -> Result<Self, LayerError> {
        if !(support_radius > 0.0) || in_channels == 0 || out_channels == 0 {
            return Err(LayerError::Config(format!(
                "algebra filter needs positive radius and channels, got r={support_radius}, {in_channels}→{out_channels}"
            )));
        }
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(in_channels * out_channels);
        Ok(Self {
            mlp: Mlp::new(prefix, widths),
            support_radius,
            in_channels,
            out_channels,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn dim(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), LayerError> {
        Ok(self.mlp.init(store, rng)?)
    }

    fn inputs(&self, samples: &SampleSet) -> Result<Tensor, LayerError> {
        if samples.dim() != self.dim() {
            return Err(LayerError::GroupMismatch(format!(
                "filter takes {}-dimensional coordinates, samples have {}",
                self.dim(),
                samples.dim()
            )));
        }
        let data = samples
            .flat_coords()
            .into_iter()
            .map(|v| v / self.support_radius)
            .collect();
        Ok(Tensor::new(vec![samples.len(), self.dim()], data)?)
    }

    /// Filter matrices stacked as `[N·K_in, K_out]` on the tape.
    pub fn forward(&self, tape: &mut Tape, pv: &ParamVars, samples: &SampleSet) -> Result<Var, LayerError> {
        let x = tape.constant(self.inputs(samples)?)?;
        let y = self.mlp.forward(tape, pv, x)?;
        Ok(tape.reshape(y, vec![samples.len() * self.in_channels, self.out_channels])?)
    }

    /// `ψ̃(ξᵢ)` for every sample, `[N, K_in, K_out]` row-major.
    pub fn eval(&self, params: &ParamStore, samples: &SampleSet) -> Result<Vec<f64>, LayerError> {
        let x = self.inputs(samples)?;
        Ok(self.mlp.eval(params, samples.len(), x.into_data())?)
    }
}

/// A vector-valued function on a group.
pub trait FeatureField {
    fn kind(&self) -> GroupKind;

    fn channels(&self) -> usize;

    /// Values at each element, `[elements, channels]` row-major.
    fn eval(&self, elements: &[GroupElement]) -> Result<Vec<f64>, LayerError>;
}

/// `L_w f: g ↦ f(w⁻¹ g)`.
pub struct Translated<F> {
    inner: F,
    w_inv: GroupElement,
}

impl<F: FeatureField> Translated<F> {
    pub fn new(inner: F, w: &GroupElement) -> Result<Self, LayerError> {
        if w.kind() != inner.kind() {
            return Err(LayerError::GroupMismatch(format!(
                "cannot translate a {} field by a {} element",
                inner.kind(),
                w.kind()
            )));
        }
        Ok(Self {
            inner,
            w_inv: w.inverse()?,
        })
    }
}

impl<F: FeatureField> FeatureField for Translated<F> {
    fn kind(&self) -> GroupKind {
        self.inner.kind()
    }

    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn eval(&self, elements: &[GroupElement]) -> Result<Vec<f64>, LayerError> {
        let moved = elements
            .iter()
            .map(|g| self.w_inv.multiply(g))
            .collect::<Result<Vec<_>, _>>()?;
        self.inner.eval(&moved)
    }
}

impl<F: FeatureField + ?Sized> FeatureField for &F {
    fn kind(&self) -> GroupKind {
        (**self).kind()
    }

    fn channels(&self) -> usize {
        (**self).channels()
    }

    fn eval(&self, elements: &[GroupElement]) -> Result<Vec<f64>, LayerError> {
        (**self).eval(elements)
    }
}

/// A field given by a closure.
pub struct FnField<Func> {
    kind: GroupKind,
    channels: usize,
    func: Func,
}

impl<Func> FnField<Func>
where
    Func: Fn(&GroupElement) -> Result<Vec<f64>, LayerError>,
{
    pub fn new(kind: GroupKind, channels: usize, func: Func) -> Self {
        Self { kind, channels, func }
    }
}

impl<Func> FeatureField for FnField<Func>
where
    Func: Fn(&GroupElement) -> Result<Vec<f64>, LayerError>,
{
    fn kind(&self) -> GroupKind {
        self.kind
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn eval(&self, elements: &[GroupElement]) -> Result<Vec<f64>, LayerError> {
        let mut out = Vec::with_capacity(elements.len() * self.channels);
        for g in elements {
            let v = (self.func)(g)?;
            if v.len() != self.channels {
                return Err(LayerError::Config(format!(
                    "field returned {} values, expected {}",
                    v.len(),
                    self.channels
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(LayerError::NonFinite("feature field".into()));
            }
            out.extend(v);
        }
        Ok(out)
    }
}

/// The lifting layer applied to a fixed image, as a field on the group.
pub struct LiftedImage<'a> {
    pub kind: GroupKind,
    pub filter: &'a LiftingFilter,
    pub params: &'a ParamStore,
    pub image: &'a ImageGrid,
    /// `false` drops the Jacobian factor.
    pub jacobian: bool,
    /// Apply relu to the lifted values.
    pub relu: bool,
}

impl FeatureField for LiftedImage<'_> {
    fn kind(&self) -> GroupKind {
        self.kind
    }

    fn channels(&self) -> usize {
        self.filter.out_channels()
    }

    fn eval(&self, elements: &[GroupElement]) -> Result<Vec<f64>, LayerError> {
        if let Some(g) = elements.iter().find(|g| g.kind() != self.kind) {
            return Err(LayerError::GroupMismatch(format!(
                "{} element passed to a {} field",
                g.kind(),
                self.kind
            )));
        }
        let mut v = lifting_values(self.params, self.filter, self.image, elements, self.jacobian)?;
        if self.relu {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        Ok(v)
    }
}

/// Sampled group convolution evaluated at `points`, `[points, K_out]`
/// row-major.
pub fn group_conv(
    f: &dyn FeatureField,
    filter: &AlgebraFilter,
    params: &ParamStore,
    haar: &SampleSet,
    points: &[GroupElement],
) -> Result<Vec<f64>, LayerError> {
    if haar.kind() != f.kind() || points.iter().any(|u| u.kind() != f.kind()) {
        return Err(LayerError::GroupMismatch(
            "field, samples and evaluation points must share one group".into(),
        ));
    }
    if f.channels() != filter.in_channels() {
        return Err(LayerError::Config(format!(
            "field has {} channels, filter expects {}",
            f.channels(),
            filter.in_channels()
        )));
    }
    if haar.is_empty() {
        return Err(LayerError::Config("group convolution needs at least one sample".into()));
    }
    let n = haar.len();
    let (kin, kout) = (filter.in_channels(), filter.out_channels());
    let psi = filter.eval(params, haar)?;
    let mut elements = Vec::with_capacity(points.len() * n);
    for u in points {
        for e in haar.exp_neg() {
            elements.push(u.multiply(e)?);
        }
    }
    let values = f.eval(&elements)?;
    let mut out = vec![0.0; points.len() * kout];
    for (p, row) in out.chunks_mut(kout).enumerate() {
        for i in 0..n {
            let fv = &values[(p * n + i) * kin..(p * n + i + 1) * kin];
            let w = &psi[i * kin * kout..(i + 1) * kin * kout];
            for (a, fa) in fv.iter().enumerate() {
                for (b, o) in row.iter_mut().enumerate() {
                    *o += fa * w[a * kout + b];
                }
            }
        }
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(out)
}

/// Tape version for the model. `lifted` is `[batch, M·N, K_in]` with the
/// element index `j·N + i` standing for `u_j·exp(−ξᵢ)`; the result is
/// `[batch·M, K_out]`.
pub fn group_conv_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    filter: &AlgebraFilter,
    lifted: Var,
    haar: &SampleSet,
    num_points: usize,
) -> Result<Var, LayerError> {
    let shape = tape.value(lifted).shape().to_vec();
    let n = haar.len();
    if shape.len() != 3 || shape[1] != num_points * n || shape[2] != filter.in_channels() {
        return Err(LayerError::Config(format!(
            "lifted features {shape:?} do not match {num_points} points × {n} samples × {} channels",
            filter.in_channels()
        )));
    }
    let x = tape.reshape(lifted, vec![shape[0] * num_points, n * filter.in_channels()])?;
    let psi = filter.forward(tape, pv, haar)?;
    let y = tape.matmul(x, psi)?;
    Ok(tape.scale(y, 1.0 / n as f64)?)
}
