use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::haar::SamplerConfig;
use crate::layers::ModelConfig;
use crate::lie::GroupKind;

use super::HarnessError;

/// Bundled profiles, keyed by name. Their data paths are relative to the
/// `configs/` directory of the source tree.
const PROFILES: &[(&str, &str)] = &[
    ("toy-affine", include_str!("../../../../configs/toy-affine.toml")),
    ("toy-hom", include_str!("../../../../configs/toy-hom.toml")),
    ("paper-affine", include_str!("../../../../configs/paper-affine.toml")),
    ("paper-hom", include_str!("../../../../configs/paper-hom.toml")),
];

fn profiles_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub equivariance: EquivarianceConfig,
    pub ablation: AblationConfig,
    pub sample_haar: SampleHaarConfig,
    pub gen_dataset: GenDatasetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("runs/run"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            equivariance: EquivarianceConfig::default(),
            ablation: AblationConfig::default(),
            sample_haar: SampleHaarConfig::default(),
            gen_dataset: GenDatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first `n` training examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// A warped evaluation split stored as LGWD.
    pub warped_test: Option<PathBuf>,
    /// Generate a warped split from the test subset with Haar warps of this
    /// support radius (ignored when `warped_test` is set).
    pub warp_radius: Option<f64>,
    pub warp_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Evaluate every `n` epochs; 0 evaluates after the last epoch only.
    pub eval_every: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 150,
            batch_size: 60,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            eval_every: 1,
            eval_batch_size: 100,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivarianceConfig {
    pub warps: usize,
    pub points: usize,
    /// Standard deviation of warp algebra coordinates; 0 gives identity
    /// warps.
    pub warp_sigma: f64,
    /// Support box of the Haar-distributed evaluation points.
    pub point_radius: f64,
    pub canvas: [usize; 2],
    /// Test images used, starting at `first_image`.
    pub images: usize,
    pub first_image: usize,
    /// Bicubic resolution doublings measured after the native grid.
    pub doublings: usize,
    /// Sample counts for the group-convolution check.
    pub conv_samples: Vec<usize>,
    pub conv_points: usize,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            warps: 100,
            points: 100,
            warp_sigma: 0.1,
            point_radius: 0.5,
            canvas: [40, 40],
            images: 1,
            first_image: 0,
            doublings: 3,
            conv_samples: vec![1, 5, 50],
            conv_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub values: Vec<usize>,
    pub sweep_conv: bool,
    pub sweep_pool: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            values: vec![100, 75, 50, 25, 1],
            sweep_conv: true,
            sweep_pool: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleHaarConfig {
    /// Defaults to the model's group.
    pub group: Option<GroupKind>,
    pub num_samples: usize,
    pub support_radius: f64,
    pub burn_in: usize,
    pub num_chains: usize,
    pub proposal_sigma: f64,
    pub thinning: usize,
    pub output: PathBuf,
}

impl Default for SampleHaarConfig {
    fn default() -> Self {
        Self {
            group: None,
            num_samples: 10_000,
            support_radius: 0.5,
            burn_in: 500,
            num_chains: 0,
            proposal_sigma: 0.0,
            thinning: 1,
            output: PathBuf::from("haar_samples.csv"),
        }
    }
}

impl SampleHaarConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            num_samples: self.num_samples,
            num_chains: self.num_chains,
            burn_in: self.burn_in,
            proposal_sigma: self.proposal_sigma,
            support_radius: self.support_radius,
            seed,
            thinning: self.thinning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDatasetConfig {
    pub group: Option<GroupKind>,
    pub source: Split,
    /// Use the split's configured limit when unset.
    pub limit: Option<usize>,
    pub n_per_image: usize,
    pub support_radius: f64,
    pub canvas: [usize; 2],
    pub output: PathBuf,
    pub manifest: bool,
}

impl Default for GenDatasetConfig {
    fn default() -> Self {
        Self {
            group: None,
            source: Split::Test,
            limit: None,
            n_per_image: 1,
            support_radius: 0.3,
            canvas: [28, 28],
            output: PathBuf::from("warped.lgwd"),
            manifest: true,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn require(p: &Option<PathBuf>, key: &str) -> Result<(), HarnessError> {
    match p {
        Some(path) if path.exists() => Ok(()),
        Some(path) => Err(HarnessError::Config(format!("{key}: {} does not exist", path.display()))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative data paths are taken relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        let d = &mut cfg.data;
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
            &mut d.warped_test,
        ] {
            resolve(base_dir, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    /// A bundled profile by name.
    pub fn profile(name: &str) -> Result<Self, HarnessError> {
        let (_, text) = PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| HarnessError::Config(format!("unknown profile {name}")))?;
        Self::from_toml(text, &profiles_dir())
    }

    /// A `--config` argument: an existing file, otherwise a profile name.
    pub fn load_or_profile(arg: &str) -> Result<Self, HarnessError> {
        let path = Path::new(arg);
        if path.is_file() {
            Self::load(path)
        } else if PROFILES.iter().any(|(n, _)| *n == arg) {
            Self::profile(arg)
        } else {
            Err(HarnessError::Config(format!("{arg} is neither a config file nor a profile")))
        }
    }

    pub fn profile_names() -> impl Iterator<Item = &'static str> {
        PROFILES.iter().map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        let d = &self.data;
        require(&d.train_images, "data.train_images")?;
        require(&d.train_labels, "data.train_labels")?;
        require(&d.test_images, "data.test_images")?;
        require(&d.test_labels, "data.test_labels")?;
        require(&d.warped_test, "data.warped_test")?;
        if d.train_images.is_some() != d.train_labels.is_some() || d.test_images.is_some() != d.test_labels.is_some() {
            return Err(HarnessError::Config("image and label paths come in pairs".into()));
        }
        if let Some(r) = d.warp_radius {
            if !(r > 0.0 && r <= 1.0) {
                return Err(HarnessError::Config(format!("data.warp_radius {r} outside (0, 1]")));
            }
        }
        if self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return Err(HarnessError::Config("batch sizes must be positive".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(HarnessError::Config("train.lr must be positive".into()));
        }
        let e = &self.equivariance;
        if e.warps == 0 || e.points == 0 || e.images == 0 || !(e.warp_sigma >= 0.0) {
            return Err(HarnessError::Config(
                "equivariance needs positive warps, points and images and warp_sigma >= 0".into(),
            ));
        }
        if self.ablation.values.contains(&0) {
            return Err(HarnessError::Config("ablation sample counts must be positive".into()));
        }
        self.sample_haar.sampler(0).validate()?;
        if self.gen_dataset.n_per_image == 0 {
            return Err(HarnessError::Config("gen_dataset.n_per_image must be positive".into()));
        }
        Ok(())
    }

    /// Serialized form recorded next to run outputs.
    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
