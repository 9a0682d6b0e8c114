use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{save_checkpoint, write_checkpoint, Adam, AdError, AdamConfig, ParamStore, Tape};
use crate::data::LabeledImages;
use crate::layers::{GridShape, LayerError, Model};

use super::eval::{argmax, evaluate};
use super::{
    load_splits, EvalReport, ExperimentConfig, HarnessError, MetricsRecord, MetricsWriter, RunLock, Splits,
};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Start from these parameters instead of initialising from the seed.
    pub init: Option<ParamStore>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub params: ParamStore,
    pub history: Vec<MetricsRecord>,
    /// Evaluation after the last epoch, one report per split.
    pub final_eval: Vec<EvalReport>,
    pub init_sha256: String,
    pub last_checkpoint: PathBuf,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    name: &'a str,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    optimizer: AdamConfig,
    n_conv_samples: usize,
    n_pool_samples: usize,
    num_params: usize,
    init_sha256: &'a str,
    last_checkpoint: &'a Path,
    wall_time_s: f64,
    final_train: Option<&'a MetricsRecord>,
    final_eval: &'a [EvalReport],
}

/// splitmix64 finaliser, used to derive independent seeds.
/// Salt for the samples drawn by the data-dependent initialisation.
const CALIBRATION_SALT: u64 = 0x00ca_1b4a_7e5a_17ed;

fn training_split(splits: &Splits) -> Result<&LabeledImages, HarnessError> {
    let train = splits
        .train
        .as_ref()
        .ok_or_else(|| HarnessError::Config("training needs data.train_images".into()))?;
    if train.is_empty() {
        return Err(HarnessError::Config("training split is empty".into()));
    }
    Ok(train)
}

fn calibrated_init(cfg: &ExperimentConfig, model: &Model, train: &LabeledImages) -> Result<ParamStore, HarnessError> {
    let mut params = model.init_params(cfg.seed)?;
    let n = cfg.train.batch_size.min(train.len());
    let images: Vec<_> = train.images[..n].iter().collect();
    let samples = model.draw_samples(mix(cfg.seed, CALIBRATION_SALT))?;
    model.calibrate(&mut params, &images, &samples)?;
    Ok(params)
}

/// The parameters a fresh training run starts from: the seeded
/// initialisation calibrated on the first training batch (see
/// [`Model::calibrate`]).
pub fn initial_params(cfg: &ExperimentConfig) -> Result<ParamStore, HarnessError> {
    let model = Model::new(cfg.model.clone())?;
    let splits = load_splits(cfg)?;
    calibrated_init(cfg, &model, training_split(&splits)?)
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn params_sha256(params: &ParamStore) -> Result<String, HarnessError> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn is_non_finite(e: &HarnessError) -> bool {
    matches!(
        e,
        HarnessError::Ad(AdError::NonFinite { .. })
            | HarnessError::Layer(LayerError::Ad(AdError::NonFinite { .. }))
            | HarnessError::Layer(LayerError::NonFinite(_))
    )
}

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch-{epoch:04}.ckpt"))
}

/// Trains with fresh samples per batch and writes, under `out`: one
/// checkpoint per epoch (epoch 0 is the initialisation), `metrics.csv`,
/// `summary.json` and the resolved `config.toml`.
pub fn train(cfg: &ExperimentConfig, out: &Path, opts: TrainOptions) -> Result<TrainOutcome, HarnessError> {
    let _lock = RunLock::acquire(out)?;
    let start = Instant::now();
    std::fs::create_dir_all(out.join("checkpoints"))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let model = Model::new(cfg.model.clone())?;
    let splits = load_splits(cfg)?;
    let train = training_split(&splits)?;
    let mut params = match opts.init {
        Some(p) => {
            model.check_params(&p)?;
            p
        }
        None => calibrated_init(cfg, &model, train)?,
    };
    let init_sha256 = params_sha256(&params)?;
    let mut last_good = checkpoint_path(out, 0);
    save_checkpoint(&params, &last_good)?;

    let adam_cfg = cfg.train.adam();
    let mut adam = Adam::new(adam_cfg, &params);
    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"))?;
    let mut history = Vec::new();
    let mut final_eval = Vec::new();
    let record = |epoch: usize, split: &str, accuracy: f64, loss: f64, acc_rate: Option<f64>| MetricsRecord {
        run_id: cfg.name.clone(),
        epoch,
        split: split.to_string(),
        accuracy,
        loss,
        equivariance_error: None,
        acceptance_rate: acc_rate,
        wall_time_s: start.elapsed().as_secs_f64(),
        n_conv_samples: cfg.model.n_conv_samples,
        n_pool_samples: cfg.model.n_pool_samples,
        lr: adam_cfg.lr,
    };
    let eval_samples = model.eval_samples()?;
    let epochs = cfg.train.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut acc_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.train.batch_size).enumerate() {
            let step = mix(mix(cfg.seed, epoch as u64), b as u64 + 1);
            let imgs: Vec<_> = idx.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i] as usize).collect();
            let result = (|| -> Result<(f64, usize), HarnessError> {
                let samples = model.draw_samples(step)?;
                acc_sum += samples.conv.acceptance_rate();
                let plan = model.plan(GridShape::of(imgs[0]), &samples)?;
                let mut tape = Tape::new();
                let pv = params.attach(&mut tape)?;
                let scores = model.forward_planned(&mut tape, &pv, &imgs, &samples, &plan)?;
                let loss = tape.softmax_cross_entropy(scores, &labels)?;
                let k = cfg.model.num_classes;
                let hits = tape
                    .value(scores)
                    .data()
                    .chunks(k)
                    .zip(&labels)
                    .filter(|(s, &l)| argmax(s) == l)
                    .count();
                let grads = tape.backward(loss)?;
                let grads = pv.collect_grads(&tape, &grads);
                adam.step(&mut params, &grads)?;
                if params.iter().any(|(_, t)| !t.is_finite()) {
                    return Err(AdError::NonFinite { op: "adam update" }.into());
                }
                Ok((tape.value(loss).item(), hits))
            })();
            let (loss, hits) = match result {
                Ok(v) => v,
                Err(e) if is_non_finite(&e) => {
                    log::error!("aborting: {e}");
                    return Err(HarnessError::NonFinite {
                        what: e.to_string(),
                        epoch,
                        batch: b,
                        last_good,
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss * idx.len() as f64;
            correct += hits;
            batches += 1;
        }
        let ck = checkpoint_path(out, epoch);
        save_checkpoint(&params, &ck)?;
        last_good = ck;
        let n = train.len() as f64;
        let row = record(epoch, "train", correct as f64 / n, loss_sum / n, Some(acc_sum / batches as f64));
        log::info!(
            "epoch {epoch}/{epochs}: train loss {:.4} accuracy {:.4} ({:.0}s)",
            row.loss,
            row.accuracy,
            row.wall_time_s
        );
        metrics.push(&row)?;
        history.push(row);

        let due = match cfg.train.eval_every {
            0 => epoch == epochs,
            k => epoch % k == 0 || epoch == epochs,
        };
        if due {
            let mut reports = Vec::new();
            for (name, data) in &splits.eval {
                let r = evaluate(&model, &params, &eval_samples, data, cfg.train.eval_batch_size, name)?;
                log::info!("epoch {epoch}: {name} accuracy {:.4}", r.accuracy);
                let row = record(epoch, name, r.accuracy, r.loss, None);
                metrics.push(&row)?;
                history.push(row);
                reports.push(r);
            }
            if epoch == epochs {
                final_eval = reports;
            }
        }
    }

    let summary = RunSummary {
        name: &cfg.name,
        seed: cfg.seed,
        epochs,
        batch_size: cfg.train.batch_size,
        optimizer: adam_cfg,
        n_conv_samples: cfg.model.n_conv_samples,
        n_pool_samples: cfg.model.n_pool_samples,
        num_params: params.num_scalars(),
        init_sha256: &init_sha256,
        last_checkpoint: &last_good,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_train: history.iter().rev().find(|r| r.split == "train"),
        final_eval: &final_eval,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(TrainOutcome {
        out_dir: out.to_path_buf(),
        params,
        history,
        final_eval,
        init_sha256,
        last_checkpoint: last_good,
    })
}
