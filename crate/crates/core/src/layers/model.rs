use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::data::ImageGrid;
use crate::haar::{gaussian_identity_samples, metropolis_haar, SampleSet, SamplerConfig};
use crate::lie::{GroupElement, GroupKind, GroupSpec};

use super::group_conv::{group_conv_forward, AlgebraFilter};
use super::head::{MaxHead, ResidualBlock};
use super::lifting::{lifting_forward, GridShape, LiftingFilter, LiftingPlan};
use super::LayerError;

/// Metropolis settings for the convolution samples. The sample count comes
/// from [`ModelConfig::n_conv_samples`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvSampling {
    pub support_radius: f64,
    pub burn_in: usize,
    /// 0 means one chain per sample.
    pub num_chains: usize,
    /// 0 means `support_radius`.
    pub proposal_sigma: f64,
    pub thinning: usize,
}

impl Default for ConvSampling {
    fn default() -> Self {
        Self {
            support_radius: 0.5,
            burn_in: 500,
            num_chains: 0,
            proposal_sigma: 0.0,
            thinning: 1,
        }
    }
}

impl ConvSampling {
    pub fn sampler(&self, num_samples: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            num_samples,
            num_chains: self.num_chains,
            burn_in: self.burn_in,
            proposal_sigma: self.proposal_sigma,
            support_radius: self.support_radius,
            seed,
            thinning: self.thinning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub group: GroupKind,
    /// Channels produced by the lifting layer.
    pub lift_channels: usize,
    /// Channels produced by the group convolution.
    pub conv_channels: usize,
    pub lift_hidden: Vec<usize>,
    pub algebra_hidden: Vec<usize>,
    /// Radius of the lifting filter's support disc in plane units.
    pub lift_radius: f64,
    pub fc_blocks: usize,
    pub fc_width: usize,
    pub num_classes: usize,
    pub n_conv_samples: usize,
    pub n_pool_samples: usize,
    pub pool_sigma: f64,
    pub sampler: ConvSampling,
    /// Seed of the frozen samples used in evaluation.
    pub eval_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            group: GroupKind::Affine,
            lift_channels: 16,
            conv_channels: 32,
            lift_hidden: vec![16, 16],
            algebra_hidden: vec![32, 32],
            lift_radius: 0.25,
            fc_blocks: 2,
            fc_width: 64,
            num_classes: 10,
            n_conv_samples: 100,
            n_pool_samples: 100,
            pool_sigma: 0.1,
            sampler: ConvSampling::default(),
            eval_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LayerError> {
        let sizes = [
            ("lift_channels", self.lift_channels),
            ("conv_channels", self.conv_channels),
            ("fc_width", self.fc_width),
            ("num_classes", self.num_classes),
            ("n_conv_samples", self.n_conv_samples),
            ("n_pool_samples", self.n_pool_samples),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(LayerError::Config(format!("{name} must be positive")));
        }
        if self.lift_hidden.contains(&0) || self.algebra_hidden.contains(&0) {
            return Err(LayerError::Config("hidden widths must be positive".into()));
        }
        if !(self.lift_radius > 0.0) || !(self.pool_sigma > 0.0) {
            return Err(LayerError::Config("lift_radius and pool_sigma must be positive".into()));
        }
        self.sampler.sampler(self.n_conv_samples, 0).validate()?;
        Ok(())
    }
}

/// Convolution and pooling samples used by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSamples {
    pub conv: SampleSet,
    pub pool: SampleSet,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    spec: &'static GroupSpec,
    lifting: LiftingFilter,
    algebra: AlgebraFilter,
    blocks: Vec<ResidualBlock>,
    head: MaxHead,
}

/// Per-channel biases added after the lifting and group convolutions.
const LIFT_BIAS: &str = "lift.bias";
const CONV_BIAS: &str = "gconv.bias";

/// Adds `bias` along the last axis of `x`.
fn channel_bias(tape: &mut Tape, x: Var, bias: Var) -> Result<Var, LayerError> {
    let shape = tape.value(x).shape().to_vec();
    let c = *shape.last().expect("non-scalar feature");
    let flat = tape.reshape(x, vec![shape.iter().product::<usize>() / c, c])?;
    let flat = tape.add_bias(flat, bias)?;
    Ok(tape.reshape(flat, shape)?)
}

/// Mean and standard deviation of each channel of a row-major array.
fn channel_stats(values: &[f64], channels: usize) -> Vec<(f64, f64)> {
    let n = (values.len() / channels) as f64;
    (0..channels)
        .map(|c| {
            let col = || values.iter().skip(c).step_by(channels);
            let mean = col().sum::<f64>() / n;
            let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Distinct stream for pooling samples drawn from the same seed.
const POOL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, LayerError> {
        config.validate()?;
        let spec = GroupSpec::get(config.group);
        let lifting = LiftingFilter::new("lift", &config.lift_hidden, 1, config.lift_channels, config.lift_radius)?;
        let algebra = AlgebraFilter::new(
            "gconv",
            spec.dim(),
            &config.algebra_hidden,
            config.lift_channels,
            config.conv_channels,
            config.sampler.support_radius,
        )?;
        let blocks = (0..config.fc_blocks)
            .map(|i| ResidualBlock::new(format!("fc{i}"), config.conv_channels, config.fc_width))
            .collect();
        let head = MaxHead::new("head", config.conv_channels, config.num_classes);
        Ok(Self {
            config,
            spec,
            lifting,
            algebra,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &'static GroupSpec {
        self.spec
    }

    pub fn lifting(&self) -> &LiftingFilter {
        &self.lifting
    }

    pub fn algebra(&self) -> &AlgebraFilter {
        &self.algebra
    }

    pub fn head(&self) -> &MaxHead {
        &self.head
    }

    /// Fresh parameters from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore, LayerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.lifting.init(&mut store, &mut rng)?;
        self.algebra.init(&mut store, &mut rng)?;
        store.insert(LIFT_BIAS, Tensor::zeros(vec![self.config.lift_channels]))?;
        store.insert(CONV_BIAS, Tensor::zeros(vec![self.config.conv_channels]))?;
        for b in &self.blocks {
            b.init(&mut store, &mut rng)?;
        }
        self.head.init(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Checks that a parameter store has this model's layout.
    pub fn check_params(&self, params: &ParamStore) -> Result<(), LayerError> {
        let reference = self.init_params(0)?;
        if !reference.same_layout(params) {
            return Err(LayerError::Config(
                "parameters do not match the model's layer shapes".into(),
            ));
        }
        Ok(())
    }

    /// Haar samples for the group convolution and Gaussian pooling samples,
    /// both derived from `seed`.
    pub fn draw_samples(&self, seed: u64) -> Result<ForwardSamples, LayerError> {
        let cfg = self.config.sampler.sampler(self.config.n_conv_samples, seed);
        let conv = metropolis_haar(self.spec, &cfg)?;
        let pool = gaussian_identity_samples(
            self.spec,
            self.config.pool_sigma,
            self.config.n_pool_samples,
            seed ^ POOL_SEED_SALT,
        )?;
        Ok(ForwardSamples { conv, pool })
    }

    /// The frozen samples used for evaluation.
    pub fn eval_samples(&self) -> Result<ForwardSamples, LayerError> {
        self.draw_samples(self.config.eval_seed)
    }

    /// `u_j·exp(−ξᵢ)` ordered `j`-major.
    pub fn lifting_elements(&self, s: &ForwardSamples) -> Result<Vec<GroupElement>, LayerError> {
        let mut out = Vec::with_capacity(s.pool.len() * s.conv.len());
        for u in s.pool.exp_pos() {
            for e in s.conv.exp_neg() {
                out.push(u.multiply(e)?);
            }
        }
        Ok(out)
    }

    pub fn plan(&self, grid: GridShape, s: &ForwardSamples) -> Result<LiftingPlan, LayerError> {
        LiftingPlan::build(grid, &self.lifting, &self.lifting_elements(s)?, true)
    }

    /// Class scores `[batch, classes]` on the tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        images: &[&ImageGrid],
        s: &ForwardSamples,
    ) -> Result<Var, LayerError> {
        let first = images
            .first()
            .ok_or_else(|| LayerError::Config("empty batch".into()))?;
        let plan = self.plan(GridShape::of(first), s)?;
        self.forward_planned(tape, pv, images, s, &plan)
    }

    /// As [`Model::forward`] with a plan built for the same samples.
    pub fn forward_planned(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        images: &[&ImageGrid],
        s: &ForwardSamples,
        plan: &LiftingPlan,
    ) -> Result<Var, LayerError> {
        if s.conv.kind() != self.spec.kind() || s.pool.kind() != self.spec.kind() {
            return Err(LayerError::GroupMismatch("samples come from another group".into()));
        }
        if plan.num_elements() != s.pool.len() * s.conv.len() {
            return Err(LayerError::Config("plan was built for different samples".into()));
        }
        let lifted = self.lifted(tape, pv, images, plan)?;
        let lifted = tape.relu(lifted)?;
        let h = self.convolved(tape, pv, lifted, s)?;
        let mut h = tape.relu(h)?;
        for b in &self.blocks {
            h = b.forward(tape, pv, h)?;
        }
        self.head.forward(tape, pv, h, s.pool.len())
    }

    /// Lifting pre-activations `[batch, elements, K₁]`.
    pub(crate) fn lifted(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        images: &[&ImageGrid],
        plan: &LiftingPlan,
    ) -> Result<Var, LayerError> {
        let lifted = lifting_forward(tape, pv, &self.lifting, plan, images)?;
        channel_bias(tape, lifted, pv.var(LIFT_BIAS))
    }

    /// Group-convolution pre-activations `[batch·pool, K₂]`.
    pub(crate) fn convolved(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        lifted: Var,
        s: &ForwardSamples,
    ) -> Result<Var, LayerError> {
        let h = group_conv_forward(tape, pv, &self.algebra, lifted, &s.conv, s.pool.len())?;
        channel_bias(tape, h, pv.var(CONV_BIAS))
    }

    /// Data-dependent initialisation. Rescales the output layer of each
    /// filter MLP and sets the channel biases so that, on `images` with
    /// samples `s`, every pre-activation channel of the lifting and group
    /// convolutions has zero mean and unit variance. Channels that are
    /// constant on the batch are left alone.
    pub fn calibrate(
        &self,
        params: &mut ParamStore,
        images: &[&ImageGrid],
        s: &ForwardSamples,
    ) -> Result<(), LayerError> {
        let first = images
            .first()
            .ok_or_else(|| LayerError::Config("calibration needs images".into()))?;
        let plan = self.plan(GridShape::of(first), s)?;
        let k_in = self.lifting.in_channels();
        let (k1, k2) = (self.config.lift_channels, self.config.conv_channels);
        for lift_stage in [true, false] {
            let mut tape = Tape::new();
            let pv = params.attach(&mut tape)?;
            let mut out = self.lifted(&mut tape, &pv, images, &plan)?;
            if !lift_stage {
                let relu = tape.relu(out)?;
                out = self.convolved(&mut tape, &pv, relu, s)?;
            }
            let (mlp, bias, channels, inputs) = if lift_stage {
                (self.lifting.mlp(), LIFT_BIAS, k1, k_in)
            } else {
                (self.algebra.mlp(), CONV_BIAS, k2, k1)
            };
            // ψ rows are laid out [c][k], ψ̃ rows [k][c].
            let column = |c: usize, k: usize| if lift_stage { c * k_in + k } else { k * k2 + c };
            let last = mlp.num_layers() - 1;
            let (wn, bn) = (mlp.weight_name(last), mlp.bias_name(last));
            let width = mlp.output_width();
            for (c, (mean, sd)) in channel_stats(tape.value(out).data(), channels).into_iter().enumerate() {
                if !(sd > 1e-12) {
                    continue;
                }
                for k in 0..inputs {
                    let col = column(c, k);
                    let w = params.get_mut(&wn).expect("filter weights");
                    w.data_mut().iter_mut().skip(col).step_by(width).for_each(|v| *v /= sd);
                    params.get_mut(&bn).expect("filter bias").data_mut()[col] /= sd;
                }
                let b = &mut params.get_mut(bias).expect("channel bias").data_mut()[c];
                *b = (*b - mean) / sd;
            }
        }
        Ok(())
    }

    /// Class scores for a batch without keeping the tape.
    pub fn predict(
        &self,
        params: &ParamStore,
        images: &[&ImageGrid],
        s: &ForwardSamples,
        plan: Option<&LiftingPlan>,
    ) -> Result<Vec<Vec<f64>>, LayerError> {
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape)?;
        let scores = match plan {
            Some(p) => self.forward_planned(&mut tape, &pv, images, s, p)?,
            None => self.forward(&mut tape, &pv, images, s)?,
        };
        Ok(tape
            .value(scores)
            .data()
            .chunks(self.config.num_classes)
            .map(<[f64]>::to_vec)
            .collect())
    }
}
