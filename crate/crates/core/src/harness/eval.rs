use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::autodiff::{load_checkpoint, ParamStore};
use crate::data::LabeledImages;
use crate::layers::{ForwardSamples, GridShape, LiftingPlan, Model};

use super::{load_splits, ExperimentConfig, HarnessError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub count: usize,
    pub accuracy: f64,
    /// Mean softmax cross-entropy.
    pub loss: f64,
    pub per_class: Vec<ClassAccuracy>,
}

/// First index of the largest score.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[label]
}

/// Accuracy with fixed samples. One lifting plan serves every batch of the
/// same grid.
pub fn evaluate(
    model: &Model,
    params: &ParamStore,
    samples: &ForwardSamples,
    data: &LabeledImages,
    batch_size: usize,
    split: &str,
) -> Result<EvalReport, HarnessError> {
    let classes = model.config().num_classes;
    let mut counts = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    let mut loss = 0.0;
    let mut plan: Option<LiftingPlan> = None;
    for (imgs, labels) in data.images.chunks(batch_size).zip(data.labels.chunks(batch_size)) {
        let refs: Vec<_> = imgs.iter().collect();
        let grid = GridShape::of(refs[0]);
        if plan.as_ref().map(|p| p.grid()) != Some(grid) {
            plan = Some(model.plan(grid, samples)?);
        }
        let scores = model.predict(params, &refs, samples, plan.as_ref())?;
        for (s, &l) in scores.iter().zip(labels) {
            let l = l as usize;
            if l >= classes {
                return Err(HarnessError::Config(format!("label {l} outside {classes} classes")));
            }
            counts[l] += 1;
            if argmax(s) == l {
                correct[l] += 1;
            }
            loss += cross_entropy(s, l);
        }
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(HarnessError::Config(format!("split {split} is empty")));
    }
    let per_class = (0..classes)
        .map(|c| ClassAccuracy {
            class: c,
            count: counts[c],
            correct: correct[c],
            accuracy: if counts[c] == 0 { 0.0 } else { correct[c] as f64 / counts[c] as f64 },
        })
        .collect();
    Ok(EvalReport {
        split: split.to_string(),
        count: n,
        accuracy: correct.iter().sum::<usize>() as f64 / n as f64,
        loss: loss / n as f64,
        per_class,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitAggregate {
    pub split: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Standard error of the mean across checkpoints; 0 for a single run.
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<Vec<EvalReport>>,
    pub aggregate: Vec<SplitAggregate>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluates each checkpoint on every configured split with the model's
/// frozen samples and writes `eval.json` and `eval.csv` to `out`.
pub fn evaluate_checkpoints(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    out: &Path,
) -> Result<EvalSummary, HarnessError> {
    if checkpoints.is_empty() {
        return Err(HarnessError::Config("eval needs at least one checkpoint".into()));
    }
    let model = Model::new(cfg.model.clone())?;
    let splits = load_splits(cfg)?;
    if splits.eval.is_empty() {
        return Err(HarnessError::Config("no evaluation split configured".into()));
    }
    let samples = model.eval_samples()?;
    let mut reports = Vec::new();
    for ck in checkpoints {
        let params = load_checkpoint(ck)?;
        model.check_params(&params)?;
        let mut per = Vec::new();
        for (name, data) in &splits.eval {
            let r = evaluate(&model, &params, &samples, data, cfg.train.eval_batch_size, name)?;
            log::info!("{}: {name} accuracy {:.4}", ck.display(), r.accuracy);
            per.push(r);
        }
        reports.push(per);
    }
    let aggregate = splits
        .eval
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let accs: Vec<f64> = reports.iter().map(|r| r[i].accuracy).collect();
            let (mean, stderr) = mean_stderr(&accs);
            SplitAggregate {
                split: name.clone(),
                runs: accs.len(),
                mean_accuracy: mean,
                stderr,
            }
        })
        .collect();
    let summary = EvalSummary {
        checkpoints: checkpoints.to_vec(),
        reports,
        aggregate,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
    w.write_record(["checkpoint", "split", "class", "count", "correct", "accuracy"])?;
    for (ck, per) in summary.checkpoints.iter().zip(&summary.reports) {
        for r in per {
            for c in &r.per_class {
                w.write_record([
                    ck.display().to_string(),
                    r.split.clone(),
                    c.class.to_string(),
                    c.count.to_string(),
                    c.correct.to_string(),
                    c.accuracy.to_string(),
                ])?;
            }
            w.write_record([
                ck.display().to_string(),
                r.split.clone(),
                "all".into(),
                r.count.to_string(),
                ((r.accuracy * r.count as f64).round() as usize).to_string(),
                r.accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(summary)
}

#[cfg(test)]
pub(crate) fn mean_stderr_for_tests(xs: &[f64]) -> (f64, f64) {
    mean_stderr(xs)
}
