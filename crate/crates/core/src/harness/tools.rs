use std::path::Path;

use crate::data::{generate_warped_testset, load_idx, save_warped_dataset, write_manifest, WarpedDataset};
use crate::haar::{chain_diagnostics, metropolis_haar, ChainDiagnostics, SampleSet};
use crate::lie::GroupSpec;

use super::{ExperimentConfig, HarnessError, Split};

#[derive(Debug, Clone)]
pub struct SampleHaarOutput {
    pub samples: SampleSet,
    pub diagnostics: ChainDiagnostics,
}

/// Draws Haar samples per `[sample_haar]` and writes them as CSV
/// (`chain, xi0, xi1, ...`) plus a JSON diagnostics report next to it.
pub fn sample_haar(cfg: &ExperimentConfig, out: &Path) -> Result<SampleHaarOutput, HarnessError> {
    let s = &cfg.sample_haar;
    let spec = GroupSpec::get(s.group.unwrap_or(cfg.model.group));
    let samples = metropolis_haar(spec, &s.sampler(cfg.seed))?;
    let diagnostics = chain_diagnostics(&samples)?;
    log::info!(
        "{} samples, acceptance rate {:.3}",
        samples.len(),
        samples.acceptance_rate()
    );
    std::fs::create_dir_all(out)?;
    let path = out.join(&s.output);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["chain".to_string()];
    header.extend((0..samples.dim()).map(|i| format!("xi{i}")));
    w.write_record(&header)?;
    for (xi, chain) in samples.xi().iter().zip(samples.chain_ids()) {
        let mut rec = vec![chain.to_string()];
        rec.extend(xi.as_slice().iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&diagnostics)?)?;
    Ok(SampleHaarOutput { samples, diagnostics })
}

/// Builds a warped dataset per `[gen_dataset]` and writes it as LGWD, with
/// a CSV manifest of warps when requested.
pub fn gen_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<WarpedDataset, HarnessError> {
    let g = &cfg.gen_dataset;
    let d = &cfg.data;
    let (images, labels, limit) = match g.source {
        Split::Train => (&d.train_images, &d.train_labels, d.train_limit),
        Split::Test => (&d.test_images, &d.test_labels, d.test_limit),
    };
    let (Some(images), Some(labels)) = (images, labels) else {
        return Err(HarnessError::Config(format!("gen-dataset source {:?} has no paths", g.source)));
    };
    let mut data = load_idx(images, labels)?;
    if let Some(n) = g.limit.or(limit) {
        data = data.take(n);
    }
    let spec = GroupSpec::get(g.group.unwrap_or(cfg.model.group));
    let sampler = crate::haar::SamplerConfig::new(data.len() * g.n_per_image, g.support_radius, cfg.seed);
    let ds = generate_warped_testset(&data, spec, g.n_per_image, &sampler, (g.canvas[0], g.canvas[1]))?;
    std::fs::create_dir_all(out)?;
    let path = out.join(&g.output);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_warped_dataset(&ds, &path)?;
    if g.manifest {
        write_manifest(&ds, &path.with_extension("csv"))?;
    }
    log::info!("wrote {} warped examples to {}", ds.len(), path.display());
    Ok(ds)
}
