use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::objective;
use super::pairs::{make_pairs, PairIndex};
use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::neuralcore::{backward, forward, Mode, NetworkSpec, ParamStore, Real, Tensor};
use crate::seeds;
use crate::splits::SplitBundle;

/// Which OoD approaches a run applies. Only `late_stopping` changes the loop
/// (epoch budget); the other two document where `bn_momentum` and `lambda`
/// were tuned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproachFlags {
    pub late_stopping: bool,
    pub tuned_bn: bool,
    pub invariance_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub late_stopping_epochs: usize,
    pub batch_size: usize,
    pub bn_momentum: f64,
    pub lambda: f64,
    pub pair_refresh_interval: usize,
    pub seed: u64,
    pub flags: ApproachFlags,
    pub restart_rule_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 100,
            late_stopping_epochs: 1000,
            batch_size: 32,
            bn_momentum: 0.99,
            lambda: 0.0,
            pair_refresh_interval: 10,
            seed: 0,
            flags: ApproachFlags::default(),
            restart_rule_enabled: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_epochs(&self) -> usize {
        if self.flags.late_stopping {
            self.late_stopping_epochs
        } else {
            self.epochs
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(invalid(format!("bn_momentum {} outside [0, 1]", self.bn_momentum)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda must be >= 0"));
        }
        if self.lambda > 0.0 && self.pair_refresh_interval == 0 {
            return Err(invalid("lambda > 0 requires pair_refresh_interval >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ind_val_accuracy: f64,
    pub ood_accuracy: f64,
    pub train_ce_loss: f64,
    pub train_inv_loss: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    /// Records of the final (successful) attempt.
    pub records: Vec<EpochRecord>,
    pub restarts: usize,
    pub final_learning_rate: f64,
    pub pair_refreshes: usize,
    /// The network actually trained (BN momentum taken from the config).
    pub spec: NetworkSpec,
}

/// Stacks the selected images into a `[n, 1, h, w]` tensor with values in `[0, 1]`.
pub fn image_batch<T: Real>(dataset: &Dataset, indices: &[usize]) -> Tensor<T> {
    let len = dataset.image_len();
    let mut data = Vec::with_capacity(indices.len() * len);
    for &i in indices {
        data.extend(dataset.items[i].bytes.iter().map(|&b| T::lit(f64::from(b) / 255.0)));
    }
    Tensor::new(vec![indices.len(), 1, dataset.height, dataset.width], data)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

const EVAL_CHUNK: usize = 128;

/// Eval-mode predicted category of every item.
pub fn predict(params: &ParamStore<f32>, spec: &NetworkSpec, dataset: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = image_batch::<f32>(dataset, chunk);
        let trace = forward(spec, params, &x, Mode::Eval)?;
        let k = spec.num_classes;
        out.extend(trace.logits.data.chunks_exact(k).map(argmax));
    }
    Ok(out)
}

/// Fraction of items whose eval-mode argmax equals the category label.
pub fn evaluate(params: &ParamStore<f32>, spec: &NetworkSpec, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("cannot evaluate on an empty dataset"));
    }
    let pred = predict(params, spec, dataset)?;
    let hits = pred
        .iter()
        .zip(&dataset.items)
        .filter(|(p, it)| **p == it.category)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Per-epoch CSV log, flushed after every row.
pub struct EpochCsvWriter {
    out: BufWriter<File>,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,ind_val_acc,ood_acc,ce_loss,inv_loss,restarted";

impl EpochCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{EPOCH_CSV_HEADER}")?;
        out.flush()?;
        Ok(EpochCsvWriter { out })
    }

    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.out, "{}", epoch_csv_row(r))?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn epoch_csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.epoch, r.ind_val_accuracy, r.ood_accuracy, r.train_ce_loss, r.train_inv_loss, r.restarted
    )
}

pub fn write_epoch_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = EpochCsvWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

struct Attempt {
    params: ParamStore<f32>,
    records: Vec<EpochRecord>,
    refreshes: usize,
    failed_at_chance: bool,
}

pub fn train(config: &TrainConfig, split: &SplitBundle, spec: &NetworkSpec) -> Result<TrainOutcome> {
    train_with_observer(config, split, spec, &mut |_| Ok(()))
}

/// Trains with the restart rule, calling `observer` after every epoch.
/// Records of abandoned attempts are still passed to the observer.
pub fn train_with_observer(
    config: &TrainConfig,
    split: &SplitBundle,
    spec: &NetworkSpec,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.ood.is_empty() {
        return Err(invalid("train, validation and OoD sets must all be nonempty"));
    }
    if split.train.num_categories != spec.num_classes {
        return Err(invalid(format!(
            "dataset has {} categories, network emits {} logits",
            split.train.num_categories, spec.num_classes
        )));
    }
    let spec = spec.with_bn_momentum(config.bn_momentum);
    spec.validate()?;
    const MAX_RESTARTS: usize = 3;
    let mut lr = config.learning_rate;
    let mut restarts = 0;
    loop {
        let attempt = run_attempt(config, split, &spec, lr, restarts, observer)?;
        if !attempt.failed_at_chance {
            return Ok(TrainOutcome {
                params: attempt.params,
                records: attempt.records,
                restarts,
                final_learning_rate: lr,
                pair_refreshes: attempt.refreshes,
                spec,
            });
        }
        if restarts == MAX_RESTARTS {
            return Err(Error::TrainingFailure {
                restarts,
                records: attempt.records,
            });
        }
        restarts += 1;
        lr *= 0.1;
    }
}

fn run_attempt(
    config: &TrainConfig,
    split: &SplitBundle,
    spec: &NetworkSpec,
    lr: f64,
    attempt: usize,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<Attempt> {
    let a = attempt as u64;
    let mut params = ParamStore::<f32>::init(spec, seeds::hash64("train-init", &[config.seed, a]))?;
    let mut adam = AdamState::for_params(&params);
    let mut rng = seeds::rng(seeds::hash64("train-shuffle", &[config.seed, a]));
    let train = &split.train;
    let n = train.len();
    let labels: Vec<usize> = train.items.iter().map(|it| it.category).collect();
    let x_all = image_batch::<f32>(train, &(0..n).collect::<Vec<_>>());
    let use_pairs = config.lambda > 0.0;
    let has_bn = spec.has_batch_norm();
    let chance = 1.0 / spec.num_classes as f64;
    let mut pairs: Option<PairIndex> = None;
    let mut refreshes = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::new();

    for epoch in 0..config.effective_epochs() {
        if use_pairs && epoch % config.pair_refresh_interval == 0 {
            let mut p = make_pairs(&labels, seeds::hash64("pairs", &[config.seed, a, epoch as u64]))?;
            refreshes += 1;
            p.refresh_count = refreshes;
            pairs = Some(p);
        }
        order.shuffle(&mut rng);
        let (mut ce_sum, mut inv_sum, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if has_bn && chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let xb = gather(&x_all, chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = match &pairs {
                Some(p) => {
                    let partners: Vec<usize> = chunk.iter().map(|&i| p.partners[i]).collect();
                    let x = Tensor::concat_batch(&xb, &gather(&x_all, &partners));
                    forward(spec, &params, &x, Mode::Train)?
                }
                None => forward(spec, &params, &xb, Mode::Train)?,
            };
            let obj = objective(&trace, &batch_labels, config.lambda, pairs.is_some())?;
            let (ce, inv, total) = (obj.ce, obj.inv, obj.total);
            if !total.is_finite() {
                return Err(Error::Numeric(format!("loss became {total} at epoch {epoch}")));
            }
            let grads = backward(spec, &params, &trace, &obj.logit_grad, obj.probe_grad.as_ref())?;
            adam_step(&mut params, &grads, &mut adam, lr)?;
            params.update_running_stats(&trace)?;
            ce_sum += ce * b as f64;
            inv_sum += inv * b as f64;
            seen += b;
        }
        let seen = seen.max(1) as f64;
        let record = EpochRecord {
            epoch,
            ind_val_accuracy: evaluate(&params, spec, &split.val)?,
            ood_accuracy: evaluate(&params, spec, &split.ood)?,
            train_ce_loss: ce_sum / seen,
            train_inv_loss: inv_sum / seen,
            restarted: attempt > 0 && epoch == 0,
        };
        observer(&record)?;
        let at_chance = record.ind_val_accuracy <= 1.1 * chance;
        records.push(record);
        if config.restart_rule_enabled && epoch >= 10 && at_chance {
            return Ok(Attempt {
                params,
                records,
                refreshes,
                failed_at_chance: true,
            });
        }
    }
    Ok(Attempt {
        params,
        records,
        refreshes,
        failed_at_chance: false,
    })
}

fn gather(x: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let l = x.item_len();
    let mut data = Vec::with_capacity(idx.len() * l);
    for &i in idx {
        data.extend_from_slice(x.item(i));
    }
    let mut shape = x.shape.clone();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}
