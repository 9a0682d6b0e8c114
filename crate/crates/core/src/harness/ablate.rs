use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;


use super::train::params_sha256;
use super::{initial_params, train, ExperimentConfig, HarnessError, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub conv_samples: usize,
    pub pool_samples: usize,
    pub clean_accuracy: f64,
    pub warped_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub init_sha256: String,
    /// Conv-sample sweep with pool samples at the configured count.
    pub conv: Vec<AblationRow>,
    /// Pool-sample sweep with conv samples at the configured count.
    pub pool: Vec<AblationRow>,
}

fn write_table(path: &Path, rows: &[AblationRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one model per sample count from a shared initialisation and
/// reports final accuracies. The two sweeps share the run at the configured
/// counts. Each run's initial checkpoint is hashed and must match.
pub fn ablate_samples(cfg: &ExperimentConfig, out: &Path) -> Result<AblationReport, HarnessError> {
    let init = initial_params(cfg)?;
    let init_sha256 = params_sha256(&init)?;
    std::fs::create_dir_all(out)?;
    let (c0, p0) = (cfg.model.n_conv_samples, cfg.model.n_pool_samples);
    let mut wanted = Vec::new();
    if cfg.ablation.sweep_conv {
        wanted.extend(cfg.ablation.values.iter().map(|&n| (n, p0)));
    }
    if cfg.ablation.sweep_pool {
        wanted.extend(cfg.ablation.values.iter().map(|&n| (c0, n)));
    }
    let mut done: BTreeMap<(usize, usize), AblationRow> = BTreeMap::new();
    for (c, p) in wanted {
        if done.contains_key(&(c, p)) {
            continue;
        }
        let mut run_cfg = cfg.clone();
        run_cfg.model.n_conv_samples = c;
        run_cfg.model.n_pool_samples = p;
        run_cfg.train.eval_every = 0;
        run_cfg.name = format!("{}-conv{c}-pool{p}", cfg.name);
        log::info!("ablation run: {c} conv samples, {p} pool samples");
        let outcome = train(
            &run_cfg,
            &out.join(format!("conv{c}-pool{p}")),
            TrainOptions {
                init: Some(init.clone()),
            },
        )?;
        if outcome.init_sha256 != init_sha256 {
            return Err(HarnessError::Config(format!(
                "run conv{c}-pool{p} started from different parameters"
            )));
        }
        let acc = |name: &str| outcome.final_eval.iter().find(|r| r.split == name).map(|r| r.accuracy);
        let clean = acc("clean").ok_or_else(|| HarnessError::Config("ablation needs a clean test split".into()))?;
        done.insert(
            (c, p),
            AblationRow {
                conv_samples: c,
                pool_samples: p,
                clean_accuracy: clean,
                warped_accuracy: acc("warped"),
            },
        );
    }
    let pick = |pairs: Vec<(usize, usize)>| pairs.into_iter().map(|k| done[&k].clone()).collect::<Vec<_>>();
    let conv = if cfg.ablation.sweep_conv {
        pick(cfg.ablation.values.iter().map(|&n| (n, p0)).collect())
    } else {
        Vec::new()
    };
    let pool = if cfg.ablation.sweep_pool {
        pick(cfg.ablation.values.iter().map(|&n| (c0, n)).collect())
    } else {
        Vec::new()
    };
    if !conv.is_empty() {
        write_table(&out.join("ablation_conv.csv"), &conv)?;
    }
    if !pool.is_empty() {
        write_table(&out.join("ablation_pool.csv"), &pool)?;
    }
    let report = AblationReport {
        init_sha256,
        conv,
        pool,
    };
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
