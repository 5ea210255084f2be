//! Two-stage training: each branch with its own temporary classifier, then
//! the fusion head on frozen branch features.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::flops::count_flops;
use super::metrics::{Accuracies, EpochRecord, FreezeReport, RunMetrics, StepSummary};
use super::model::{Model, Prediction, Sample, FUSION, RGB, RGB_HEAD, SEMANTIC, SEMANTIC_HEAD};
use crate::error::{Error, Result};
use crate::fusion::classify;
use crate::nn::{name_matches, Backbone, ParamStore};
use crate::optim::Optimizer;
use crate::synth::{generate_range, read_corpus, splitmix64, SyntheticScene};
use crate::tensor::{DiffTensor, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SyntheticScene>,
    pub test: Vec<SyntheticScene>,
}

/// Reads the configured corpus, or generates train scenes `0..n_train` and
/// test scenes `n_train..n_train + n_test`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    if let Some(dir) = &cfg.corpus {
        let (_, train, test) = read_corpus(dir)?;
        return Ok(Dataset { train, test });
    }
    Ok(Dataset {
        train: generate_range(&cfg.recipe, 0, cfg.train_scenes)?,
        test: generate_range(&cfg.recipe, cfg.train_scenes as u64, cfg.test_scenes)?,
    })
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: RunMetrics,
    /// Step size of every optimizer update, in order.
    pub steps: Vec<f64>,
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |h, p| splitmix64(h ^ p))
}

fn check_finite(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: loss {loss}")))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn batches(n: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Mean loss over a batch: stacks per-sample scalars and averages them.
fn batch_mean(tape: &mut Tape, losses: &[Var]) -> Result<Var> {
    let s = tape.stack(losses)?;
    Ok(tape.mean(s))
}

struct Branch<'a> {
    backbone: &'a Backbone,
    name: &'static str,
    head: &'static str,
    input: fn(&Sample) -> &DiffTensor,
}

fn branch_specs(model: &Model) -> [Branch<'_>; 2] {
    [
        Branch {
            backbone: &model.semantic,
            name: SEMANTIC,
            head: SEMANTIC_HEAD,
            input: |s| &s.score,
        },
        Branch {
            backbone: &model.rgb,
            name: RGB,
            head: RGB_HEAD,
            input: |s| &s.rgb,
        },
    ]
}

fn branch_epoch(
    b: &Branch,
    work: &mut ParamStore,
    opt: &mut Optimizer,
    samples: &[Sample],
    batches: &[Vec<usize>],
    ctx: &str,
) -> Result<(f64, f64)> {
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (bi, idx) in batches.iter().enumerate() {
        let mut tape = Tape::new();
        let bound = work.bind(&mut tape, |_| true);
        let head = Model::head_vars(&bound, b.head)?;
        let mut losses = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &samples[i];
            let x = tape.constant((b.input)(s).clone());
            let f = b.backbone.forward(&mut tape, &bound, x)?;
            let y = classify(&mut tape, f, head, 0.0, false, 0)?;
            correct += usize::from(argmax(tape.value(y)) == s.label);
            losses.push(tape.cross_entropy(y, s.label)?);
        }
        let loss = batch_mean(&mut tape, &losses)?;
        let lv = tape.item(loss);
        check_finite(lv, &format!("{ctx}, {} batch {bi}", b.name))?;
        tape.backward(loss)?;
        opt.step(work, &bound.gradients(&tape), lv)?;
        loss_sum += lv * idx.len() as f64;
    }
    let n = samples.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Branch features `(F_S, F_R)` of every sample with the current parameters.
pub fn branch_features(model: &Model, samples: &[Sample]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut branches = model.params.subset(SEMANTIC);
    branches.extend(model.params.subset(RGB))?;
    samples
        .iter()
        .map(|s| {
            let mut tape = Tape::new();
            let bound = branches.bind(&mut tape, |_| false);
            let (fs, fr) = model.features(&mut tape, &bound, s)?;
            Ok((tape.value(fs).to_vec(), tape.value(fr).to_vec()))
        })
        .collect()
}

/// Checksum over both branches.
pub fn branch_checksum(params: &ParamStore) -> u64 {
    splitmix64(params.checksum(SEMANTIC)) ^ params.checksum(RGB)
}

/// Runs the complete stage-two graph (branches included, as trainable
/// leaves) on `samples`, stopping gradients at the branch outputs, and
/// returns the largest absolute branch-parameter gradient together with the
/// number of branch tensors inspected.
pub fn stage2_gradient_probe(model: &Model, samples: &[Sample], seed: u64) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| true);
    let mut losses = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (fs, fr) = model.features(&mut tape, &bound, s)?;
        let (fs, fr) = (tape.detach(fs), tape.detach(fr));
        let y = model
            .fusion
            .forward(&mut tape, &bound, fr, fs, true, mix(&[seed, i as u64]))?;
        losses.push(tape.cross_entropy(y, s.label)?);
    }
    if losses.is_empty() {
        return Ok((0.0, 0));
    }
    let loss = batch_mean(&mut tape, &losses)?;
    tape.backward(loss)?;
    let (mut max, mut count) = (0.0f64, 0);
    for (name, v) in bound.iter() {
        if name_matches(name, SEMANTIC) || name_matches(name, RGB) {
            count += 1;
            for g in tape.grad(v) {
                max = max.max(g.abs());
            }
        }
    }
    Ok((max, count))
}

/// Predictions for every scene: ten-crop or a single full view.
pub fn predict_all(model: &Model, scenes: &[SyntheticScene], ten_crop: bool, crop: usize) -> Result<Vec<Prediction>> {
    scenes
        .iter()
        .map(|s| {
            if ten_crop {
                model.predict_ten_crop(s, crop)
            } else {
                model.predict(s)
            }
        })
        .collect()
}

/// Accuracy and mean negative log-likelihood of each head.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub accuracy: Accuracies,
    pub loss: Accuracies,
}

pub fn score_predictions(preds: &[Prediction], labels: &[usize]) -> Scores {
    let n = preds.len().max(1) as f64;
    let mut s = Scores::default();
    let nll = |p: &[f64], y: usize| -p[y].max(1e-300).ln();
    for (p, &y) in preds.iter().zip(labels) {
        s.accuracy.fused += f64::from(u8::from(p.class() == y));
        s.loss.fused += nll(&p.fused, y);
        if let Some(q) = &p.semantic {
            s.accuracy.semantic += f64::from(u8::from(argmax(q) == y));
            s.loss.semantic += nll(q, y);
        }
        if let Some(q) = &p.rgb {
            s.accuracy.rgb += f64::from(u8::from(argmax(q) == y));
            s.loss.rgb += nll(q, y);
        }
    }
    for a in [&mut s.accuracy, &mut s.loss] {
        a.fused /= n;
        a.semantic /= n;
        a.rgb /= n;
    }
    s
}

pub fn evaluate(model: &Model, scenes: &[SyntheticScene], ten_crop: bool, crop: usize) -> Result<Scores> {
    let preds = predict_all(model, scenes, ten_crop, crop)?;
    let labels: Vec<usize> = scenes.iter().map(|s| s.label).collect();
    Ok(score_predictions(&preds, &labels))
}

fn record(stage: u8, epoch: usize, model: &str, split: &str, loss: f64, accuracy: f64, t: Instant) -> EpochRecord {
    EpochRecord {
        stage,
        epoch,
        model: model.into(),
        split: split.into(),
        loss,
        accuracy,
        wall_ms: t.elapsed().as_millis() as u64,
    }
}

/// Trains per `cfg`. Checkpoints go to `outdir/stage1` and `outdir/stage2`
/// when `outdir` is given.
pub fn train_two_stage(cfg: &ExperimentConfig, data: &Dataset, outdir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::init(cfg, cfg.seed)?;
    let train: Vec<SyntheticScene> = data
        .train
        .iter()
        .map(|s| model.adapt_scene(s))
        .collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let samples: Vec<Sample> = train.iter().map(|s| model.sample(s)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut steps = Vec::new();
    let mut max_step: f64 = 0.0;

    // Stage 1: each branch with its temporary classifier.
    let mut works = Vec::new();
    let mut opts = Vec::new();
    for b in branch_specs(&model) {
        let mut w = model.params.subset(b.name);
        w.extend(model.heads.subset(b.head))?;
        works.push(w);
        opts.push(Optimizer::new(cfg.optimizer)?);
    }
    for epoch in 1..=cfg.stage1_epochs {
        for (bi, b) in branch_specs(&model).iter().enumerate() {
            let t = Instant::now();
            let order = batches(samples.len(), cfg.batch_size, mix(&[cfg.seed, 1, epoch as u64, bi as u64]));
            let (loss, acc) = branch_epoch(
                b,
                &mut works[bi],
                &mut opts[bi],
                &samples,
                &order,
                &format!("stage 1 epoch {epoch}"),
            )?;
            records.push(record(1, epoch, b.name, "train", loss, acc, t));
        }
    }
    for (w, opt) in works.iter().zip(&opts) {
        model.params.assign_from(&w.subset(SEMANTIC))?;
        model.params.assign_from(&w.subset(RGB))?;
        model.heads.assign_from(&w.subset(SEMANTIC_HEAD))?;
        model.heads.assign_from(&w.subset(RGB_HEAD))?;
        for s in opt.history() {
            steps.push(s.step);
            max_step = max_step.max(s.step);
        }
    }
    if cfg.stage1_epochs > 0 && !data.test.is_empty() {
        let t = Instant::now();
        let sc = evaluate(&model, &data.test, cfg.ten_crop, cfg.crop)?;
        records.push(record(1, cfg.stage1_epochs, SEMANTIC, "test", sc.loss.semantic, sc.accuracy.semantic, t));
        records.push(record(1, cfg.stage1_epochs, RGB, "test", sc.loss.rgb, sc.accuracy.rgb, t));
    }
    if let Some(dir) = outdir {
        let mut s1 = model.params.subset(SEMANTIC);
        s1.extend(model.params.subset(RGB))?;
        s1.extend(model.heads.clone())?;
        s1.write_checkpoint(&dir.join("stage1"))?;
    }

    // Stage 2: frozen branches, fusion head from scratch on cached features.
    let checksum_before = branch_checksum(&model.params);
    let probe_n = cfg.batch_size.min(samples.len());
    let (probe_max, probe_count) = stage2_gradient_probe(&model, &samples[..probe_n], mix(&[cfg.seed, 2]))?;
    let feats = branch_features(&model, &samples)?;
    let mut work = model.params.subset(FUSION);
    let mut opt = Optimizer::new(cfg.optimizer)?;
    opt.freeze(&[SEMANTIC, RGB]);
    for epoch in 1..=cfg.stage2_epochs {
        let t = Instant::now();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in batches(samples.len(), cfg.batch_size, mix(&[cfg.seed, 2, epoch as u64]))
            .iter()
            .enumerate()
        {
            let mut tape = Tape::new();
            let bound = work.bind(&mut tape, |_| true);
            let mut losses = Vec::with_capacity(idx.len());
            for &i in idx {
                let (fs, fr) = &feats[i];
                let c = fs.len();
                let fs = tape.constant(DiffTensor::new(&[c], fs.clone())?);
                let fr = tape.constant(DiffTensor::new(&[c], fr.clone())?);
                let seed = mix(&[cfg.seed, 2, epoch as u64, i as u64]);
                let y = model.fusion.forward(&mut tape, &bound, fr, fs, true, seed)?;
                correct += usize::from(argmax(tape.value(y)) == samples[i].label);
                losses.push(tape.cross_entropy(y, samples[i].label)?);
            }
            let loss = batch_mean(&mut tape, &losses)?;
            let lv = tape.item(loss);
            check_finite(lv, &format!("stage 2 epoch {epoch} batch {bi}"))?;
            tape.backward(loss)?;
            opt.step(&mut work, &bound.gradients(&tape), lv)?;
            loss_sum += lv * idx.len() as f64;
        }
        let n = samples.len() as f64;
        records.push(record(2, epoch, FUSION, "train", loss_sum / n, correct as f64 / n, t));
    }
    model.params.assign_from(&work)?;
    for s in opt.history() {
        steps.push(s.step);
        max_step = max_step.max(s.step);
    }
    let checksum_after = branch_checksum(&model.params);

    let t = Instant::now();
    let test = if data.test.is_empty() {
        Scores::default()
    } else {
        evaluate(&model, &data.test, cfg.ten_crop, cfg.crop)?
    };
    if cfg.stage2_epochs > 0 && !data.test.is_empty() {
        records.push(record(2, cfg.stage2_epochs, FUSION, "test", test.loss.fused, test.accuracy.fused, t));
    }
    let train_preds = samples
        .iter()
        .map(|s| model.predict_sample(s))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let train_scores = score_predictions(&train_preds, &labels);

    if let Some(dir) = outdir {
        model.params.write_checkpoint(&dir.join("stage2"))?;
    }
    let metrics = RunMetrics {
        records,
        train: train_scores.accuracy,
        test: test.accuracy,
        freeze: FreezeReport {
            checksum_before,
            checksum_after,
            probe_max_abs_grad_bits: probe_max.to_bits(),
            probe_parameters: probe_count,
        },
        steps: StepSummary {
            updates: steps.len(),
            max_step,
            max_lr: cfg.optimizer.max_lr,
        },
        flops: count_flops(cfg)?,
    };
    Ok(TrainOutcome {
        model,
        metrics,
        steps,
    })
}

/// Loads data, trains, and writes `metrics.jsonl`, `config.toml` and both
/// checkpoints under `outdir` (argument, else `cfg.outdir`).
pub fn run_experiment(cfg: &ExperimentConfig, outdir: Option<&Path>) -> Result<TrainOutcome> {
    let outdir = outdir.or(cfg.outdir.as_deref());
    let data = load_dataset(cfg)?;
    if let Some(dir) = outdir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.toml");
        std::fs::write(&p, cfg.to_toml_string()?).map_err(|e| Error::io(&p, e))?;
    }
    let out = train_two_stage(cfg, &data, outdir)?;
    if let Some(dir) = outdir {
        out.metrics.write_jsonl(&dir.join("metrics.jsonl"))?;
    }
    Ok(out)
}
