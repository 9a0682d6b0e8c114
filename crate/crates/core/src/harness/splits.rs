use crate::data::{generate_warped_testset, load_idx, load_warped_dataset, LabeledImages};
use crate::haar::SamplerConfig;
use crate::lie::GroupSpec;

use super::{ExperimentConfig, HarnessError};

/// Datasets named by a config. Evaluation splits are labelled `clean` and
/// `warped`.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Option<LabeledImages>,
    pub eval: Vec<(String, LabeledImages)>,
}

impl Splits {
    pub fn split(&self, name: &str) -> Option<&LabeledImages> {
        self.eval.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }
}

fn limited(data: LabeledImages, limit: Option<usize>) -> LabeledImages {
    match limit {
        Some(n) => data.take(n),
        None => data,
    }
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits, HarnessError> {
    let d = &cfg.data;
    let train = match (&d.train_images, &d.train_labels) {
        (Some(i), Some(l)) => Some(limited(load_idx(i, l)?, d.train_limit)),
        _ => None,
    };
    let mut eval = Vec::new();
    if let (Some(i), Some(l)) = (&d.test_images, &d.test_labels) {
        let clean = limited(load_idx(i, l)?, d.test_limit);
        if d.warped_test.is_none() {
            if let Some(r) = d.warp_radius {
                let spec = GroupSpec::get(cfg.model.group);
                let first = clean
                    .images
                    .first()
                    .ok_or_else(|| HarnessError::Config("test split is empty".into()))?;
                let canvas = (first.height(), first.width());
                let sampler = SamplerConfig::new(clean.len(), r, d.warp_seed);
                let ds = generate_warped_testset(&clean, spec, 1, &sampler, canvas)?;
                eval.push(("clean".to_string(), clean));
                eval.push(("warped".to_string(), ds.to_labeled()));
                return Ok(Splits { train, eval });
            }
        }
        eval.push(("clean".to_string(), clean));
    }
    if let Some(p) = &d.warped_test {
        let ds = load_warped_dataset(p)?;
        eval.push(("warped".to_string(), limited(ds.to_labeled(), d.test_limit)));
    }
    Ok(Splits { train, eval })
}
