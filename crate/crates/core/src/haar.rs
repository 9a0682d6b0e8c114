//! Haar-measure sampling on a bounded region of the Lie algebra.
//!
//! Right Haar measure pulled back through `exp` has density
//! [`GroupSpec::haar_density`]. The sampler runs many random-walk Metropolis
//! chains in lockstep over that density, restricted to the max-norm box
//! `‖ξ‖∞ ≤ support_radius`. Each chain owns its own counter-based RNG stream,
//! so output does not depend on how chains are scheduled.
//!
//! Haar measure on the affine and homography groups has infinite total mass;
//! only its restriction to the box is sampled. The normalizing constant of
//! that restriction is never computed.

use std::collections::HashSet;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{AlgebraVector, GroupElement, GroupKind, GroupSpec, LieError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error(transparent)]
    Lie(#[from] LieError),
}

fn default_burn_in() -> usize {
    500
}

fn default_thinning() -> usize {
    1
}

/// Metropolis sampler settings. `num_chains == 0` and `proposal_sigma == 0`
/// select the defaults: one chain per sample and a proposal scale equal to
/// `support_radius`.
///
/// The Haar density varies by less than a factor of three over a box of
/// radius 0.5 for both the affine and the homography group, so acceptance
/// stays high for any proposal scale; large steps mix fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_samples: usize,
    #[serde(default)]
    pub num_chains: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub proposal_sigma: f64,
    pub support_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
}

impl SamplerConfig {
    pub fn new(num_samples: usize, support_radius: f64, seed: u64) -> Self {
        Self {
            num_samples,
            num_chains: num_samples,
            burn_in: default_burn_in(),
            proposal_sigma: support_radius,
            support_radius,
            seed,
            thinning: default_thinning(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_samples(&self, num_samples: usize) -> Self {
        Self {
            num_samples,
            ..self.clone()
        }
    }

    pub fn chains(&self) -> usize {
        if self.num_chains == 0 {
            self.num_samples
        } else {
            self.num_chains
        }
    }

    pub fn sigma(&self) -> f64 {
        if self.proposal_sigma == 0.0 {
            self.support_radius
        } else {
            self.proposal_sigma
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: &str| Err(SamplerError::Config(msg.to_string()));
        if self.num_samples == 0 {
            return fail("num_samples must be positive");
        }
        if !(self.sigma() > 0.0) || !self.sigma().is_finite() {
            return fail("proposal_sigma must be positive");
        }
        if !(self.support_radius > 0.0 && self.support_radius <= 1.0) {
            return fail("support_radius must lie in (0, 1]");
        }
        if self.thinning == 0 {
            return fail("thinning must be at least 1");
        }
        Ok(())
    }
}

/// A batch of algebra samples with their exponentials cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    kind: GroupKind,
    xi: Vec<AlgebraVector>,
    exp_neg: Vec<GroupElement>,
    exp_pos: Vec<GroupElement>,
    chain: Vec<usize>,
    acceptance_rate: f64,
}

impl SampleSet {
    /// Builds a sample set from given coordinates, e.g. for externally drawn
    /// samples. `chain[i]` labels the chain sample `i` came from.
    pub fn from_coords(
        spec: &GroupSpec,
        xi: Vec<AlgebraVector>,
        chain: Vec<usize>,
        acceptance_rate: f64,
    ) -> Result<Self, SamplerError> {
        if chain.len() != xi.len() {
            return Err(SamplerError::Config(
                "chain labels must match the sample count".into(),
            ));
        }
        let mut exp_neg = Vec::with_capacity(xi.len());
        let mut exp_pos = Vec::with_capacity(xi.len());
        for x in &xi {
            exp_neg.push(spec.exp(&-x)?);
            exp_pos.push(spec.exp(x)?);
        }
        Ok(Self {
            kind: spec.kind(),
            xi,
            exp_neg,
            exp_pos,
            chain,
            acceptance_rate,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn xi(&self) -> &[AlgebraVector] {
        &self.xi
    }

    /// `exp(−ξᵢ)` for every sample.
    pub fn exp_neg(&self) -> &[GroupElement] {
        &self.exp_neg
    }

    /// `exp(ξᵢ)` for every sample.
    pub fn exp_pos(&self) -> &[GroupElement] {
        &self.exp_pos
    }

    pub fn chain_ids(&self) -> &[usize] {
        &self.chain
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    /// Coordinates flattened row-major, `len × dim`.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.xi.iter().flat_map(|x| x.as_slice().to_vec()).collect()
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> SampleSet {
        let n = n.min(self.len());
        SampleSet {
            kind: self.kind,
            xi: self.xi[..n].to_vec(),
            exp_neg: self.exp_neg[..n].to_vec(),
            exp_pos: self.exp_pos[..n].to_vec(),
            chain: self.chain[..n].to_vec(),
            acceptance_rate: self.acceptance_rate,
        }
    }
}

/// Reflects `x` into `[-r, r]`.
pub fn reflect_into_box(x: f64, r: f64) -> f64 {
    let y = (x + r).rem_euclid(4.0 * r);
    let folded = if y > 2.0 * r { 4.0 * r - y } else { y };
    folded - r
}

/// Random-walk Metropolis kernel targeting the Haar density on the box.
pub struct MetropolisKernel<'a> {
    spec: &'a GroupSpec,
    radius: f64,
    step: Normal<f64>,
}

impl<'a> MetropolisKernel<'a> {
    pub fn new(spec: &'a GroupSpec, support_radius: f64, proposal_sigma: f64) -> Result<Self, SamplerError> {
        let step = Normal::new(0.0, proposal_sigma)
            .map_err(|e| SamplerError::Config(format!("proposal_sigma: {e}")))?;
        Ok(Self {
            spec,
            radius: support_radius,
            step,
        })
    }

    pub fn density(&self, xi: &[f64]) -> Result<f64, SamplerError> {
        Ok(self.spec.haar_density(&AlgebraVector::new(xi.to_vec())?)?)
    }

    /// Advances every chain by one proposal. `densities[c]` must hold the
    /// target density at `states[c]`; both are updated in place. Returns the
    /// accept mask for this step.
    pub fn sweep(
        &self,
        states: &mut [Vec<f64>],
        densities: &mut [f64],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<bool>, SamplerError> {
        let mut mask = Vec::with_capacity(states.len());
        for ((state, dens), rng) in states.iter_mut().zip(densities.iter_mut()).zip(rngs.iter_mut()) {
            let proposal: Vec<f64> = state
                .iter()
                .map(|x| reflect_into_box(x + self.step.sample(rng), self.radius))
                .collect();
            let prop_density = self.density(&proposal)?;
            let u: f64 = rng.random();
            let accept = u * *dens < prop_density;
            if accept {
                *state = proposal;
                *dens = prop_density;
            }
            mask.push(accept);
        }
        Ok(mask)
    }
}

/// Per-chain RNG: a shared key with the chain index as stream id.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

static WARNED: Mutex<Option<HashSet<GroupKind>>> = Mutex::new(None);
static PROBED: Mutex<Option<HashSet<(GroupKind, u64)>>> = Mutex::new(None);

/// Checks the density on the grid `{−r, 0, r}^dim`. Results are memoized per
/// group and radius.
pub fn probe_density(spec: &GroupSpec, radius: f64) -> Result<(), SamplerError> {
    let key = (spec.kind(), radius.to_bits());
    if spec.basis().len() == spec.kind().dim() {
        if let Some(set) = PROBED.lock().expect("probe cache poisoned").as_ref() {
            if set.contains(&key) {
                return Ok(());
            }
        }
    }
    let dim = spec.dim();
    let total = 3usize.pow(dim as u32);
    let mut coords = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for c in coords.iter_mut() {
            *c = (rem % 3) as f64 * radius - radius;
            rem /= 3;
        }
        spec.haar_density(&AlgebraVector::new(coords.clone())?)?;
    }
    PROBED
        .lock()
        .expect("probe cache poisoned")
        .get_or_insert_with(HashSet::new)
        .insert(key);
    Ok(())
}

/// Draws `cfg.num_samples` points from the Haar density restricted to the
/// support box using lockstep Metropolis chains.
///
/// Chains start uniformly in the box, discard `burn_in` steps, then emit one
/// sample every `thinning` steps. Samples are ordered step-major,
/// chain-minor.
pub fn metropolis_haar(spec: &GroupSpec, cfg: &SamplerConfig) -> Result<SampleSet, SamplerError> {
    cfg.validate()?;
    probe_density(spec, cfg.support_radius)?;
    let dim = spec.dim();
    let chains = cfg.chains();
    let r = cfg.support_radius;
    let kernel = MetropolisKernel::new(spec, r, cfg.sigma())?;

    let mut rngs: Vec<ChaCha8Rng> = (0..chains).map(|c| chain_rng(cfg.seed, c)).collect();
    let mut states: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|rng| (0..dim).map(|_| rng.random_range(-r..=r)).collect())
        .collect();
    let mut densities = states
        .iter()
        .map(|s| kernel.density(s))
        .collect::<Result<Vec<_>, _>>()?;

    for _ in 0..cfg.burn_in {
        kernel.sweep(&mut states, &mut densities, &mut rngs)?;
    }

    let mut xi = Vec::with_capacity(cfg.num_samples);
    let mut chain = Vec::with_capacity(cfg.num_samples);
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    while xi.len() < cfg.num_samples {
        for _ in 0..cfg.thinning {
            let mask = kernel.sweep(&mut states, &mut densities, &mut rngs)?;
            accepted += mask.iter().filter(|&&a| a).count();
            proposed += mask.len();
        }
        for (c, s) in states.iter().enumerate() {
            if xi.len() == cfg.num_samples {
                break;
            }
            xi.push(AlgebraVector::new(s.clone())?);
            chain.push(c);
        }
    }

    let acceptance_rate = accepted as f64 / proposed as f64;
    if !(0.05..=0.95).contains(&acceptance_rate) {
        let first = WARNED
            .lock()
            .expect("warning set poisoned")
            .get_or_insert_with(HashSet::new)
            .insert(spec.kind());
        if first {
            log::warn!(
                "{} Haar sampler acceptance rate {acceptance_rate:.3} is outside [0.05, 0.95] \
                 (reported once per group)",
                spec.kind()
            );
        } else {
            log::debug!("{} Haar sampler acceptance rate {acceptance_rate:.3}", spec.kind());
        }
    }
    SampleSet::from_coords(spec, xi, chain, acceptance_rate)
}

/// `n` samples `ξ ~ N(0, σ² I)`, the first one forced to ξ = 0 so the
/// identity is always present.
pub fn gaussian_identity_samples(
    spec: &GroupSpec,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<SampleSet, SamplerError> {
    if !(sigma > 0.0) || n == 0 {
        return Err(SamplerError::Config(
            "gaussian samples need sigma > 0 and n > 0".into(),
        ));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| SamplerError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.dim();
    let mut xi = vec![AlgebraVector::zeros(dim)];
    for _ in 1..n {
        xi.push(AlgebraVector::new(
            (0..dim).map(|_| normal.sample(&mut rng)).collect(),
        )?);
    }
    SampleSet::from_coords(spec, xi, vec![0; n], 1.0)
}

/// Summary statistics of a sample set.
#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub num_samples: usize,
    pub num_chains: usize,
    pub acceptance_rate: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Split-chain potential scale reduction per coordinate.
    pub psr: Option<Vec<f64>>,
    pub notice: Option<String>,
}

impl ChainDiagnostics {
    pub fn max_psr(&self) -> Option<f64> {
        self.psr.as_ref().map(|p| p.iter().cloned().fold(f64::NAN, f64::max))
    }
}

pub fn chain_diagnostics(s: &SampleSet) -> Result<ChainDiagnostics, SamplerError> {
    if s.is_empty() {
        return Err(SamplerError::Config("empty sample set".into()));
    }
    let dim = s.dim();
    let n = s.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in s.xi() {
        for (m, v) in mean.iter_mut().zip(x.as_slice()) {
            *m += v / n;
        }
    }
    let mut variance = vec![0.0; dim];
    if s.len() > 1 {
        for x in s.xi() {
            for ((acc, v), m) in variance.iter_mut().zip(x.as_slice()).zip(&mean) {
                *acc += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }

    let max_chain = s.chain_ids().iter().max().copied().unwrap_or(0);
    let mut per_chain: Vec<Vec<&AlgebraVector>> = vec![Vec::new(); max_chain + 1];
    for (x, &c) in s.xi().iter().zip(s.chain_ids()) {
        per_chain[c].push(x);
    }
    per_chain.retain(|c| !c.is_empty());
    let num_chains = per_chain.len();

    let (psr, notice) = if num_chains < 2 {
        (None, Some("single chain: potential scale reduction omitted".to_string()))
    } else {
        let half = per_chain.iter().map(|c| c.len() / 2).min().unwrap_or(0);
        if half < 2 {
            (
                None,
                Some("chains too short to split: potential scale reduction omitted".to_string()),
            )
        } else {
            let segments: Vec<&[&AlgebraVector]> = per_chain
                .iter()
                .flat_map(|c| [&c[..half], &c[half..2 * half]])
                .collect();
            (Some(split_psr(&segments, dim, half)), None)
        }
    };

    Ok(ChainDiagnostics {
        num_samples: s.len(),
        num_chains,
        acceptance_rate: s.acceptance_rate(),
        mean,
        variance,
        psr,
        notice,
    })
}

fn split_psr(segments: &[&[&AlgebraVector]], dim: usize, len: usize) -> Vec<f64> {
    let m = segments.len() as f64;
    let n = len as f64;
    (0..dim)
        .map(|d| {
            let means: Vec<f64> = segments
                .iter()
                .map(|seg| seg.iter().map(|x| x[d]).sum::<f64>() / n)
                .collect();
            let grand = means.iter().sum::<f64>() / m;
            let between = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
            let within = segments
                .iter()
                .zip(&means)
                .map(|(seg, mu)| seg.iter().map(|x| (x[d] - mu).powi(2)).sum::<f64>() / (n - 1.0))
                .sum::<f64>()
                / m;
            let pooled = (n - 1.0) / n * within + between / n;
            (pooled / within).sqrt()
        })
        .collect()
}
