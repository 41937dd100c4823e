use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::net::{argmax, WbcNet};
use crate::data::{Batch, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::optim::{cross_entropy, Adam, AdamConfig};
use crate::real::Real;

/// Which loss decides the retained "best" weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BestCriterion {
    ValidationLoss,
    TrainLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub criterion: BestCriterion,
    /// When false the `seconds` column is written as 0 so runs stay
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 42,
            criterion: BestCriterion::ValidationLoss,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub records: Vec<EpochRecord>,
}

/// Loss, accuracy and per-sample decisions over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub truths: Vec<usize>,
    pub predictions: Vec<usize>,
}

/// One optimizer step on a batch with dropout active. Returns the batch
/// loss and the number of correct training-mode predictions.
pub fn train_step<T: Real>(model: &mut WbcNet<T>, adam: &mut Adam<T>, batch: &Batch<T>) -> Result<(f64, usize)> {
    let probs = model.forward(&batch.inputs, Mode::Train)?;
    let loss = cross_entropy(&probs, &batch.labels)?;
    if !loss.value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {}", loss.value)));
    }
    model.zero_grad();
    model.backward(&loss.grad_logits)?;
    adam.step(&mut model.params_mut())?;
    model.clear_caches();
    Ok((
        loss.value,
        count_correct(&probs.cast::<f64>().into_data(), &batch.labels),
    ))
}

fn count_correct(probs: &[f64], labels: &[usize]) -> usize {
    let n = probs.len() / labels.len().max(1);
    probs.chunks(n).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}

/// Inference-mode loss and accuracy over one split.
pub fn evaluate<T: Real>(model: &WbcNet<T>, dataset: &Dataset, split: Split, batch_size: usize) -> Result<Evaluation> {
    let members = dataset.indices_of(split);
    let mut truths = Vec::with_capacity(members.len());
    let mut predictions = Vec::with_capacity(members.len());
    let mut total = 0.0;
    for chunk in members.chunks(batch_size.max(1)) {
        let batch = dataset.gather::<T>(chunk)?;
        let probs = model.infer(&batch.inputs)?;
        total += cross_entropy(&probs, &batch.labels)?.value * chunk.len() as f64;
        let classes = model.n_classes();
        for row in probs.data().chunks(classes) {
            let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            predictions.push(argmax(&row));
        }
        truths.extend(batch.labels);
    }
    let n = truths.len();
    let correct = truths.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    Ok(Evaluation {
        loss: if n == 0 { 0.0 } else { total / n as f64 },
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        truths,
        predictions,
    })
}

/// Runs `config.epochs` epochs over the train split, scoring the validation
/// split after each one. Whenever the selection loss reaches a new minimum
/// the weights are captured; `on_epoch` sees every record plus the new best
/// checkpoint when one was taken.
pub fn train<T: Real>(
    model: &mut WbcNet<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    let n_train = dataset.indices_of(Split::Train).len();
    let n_val = dataset.indices_of(Split::Validation).len();
    if n_train == 0 {
        return Err(Error::InsufficientData("train split is empty".into()));
    }
    if n_val == 0 {
        return Err(Error::InsufficientData("validation split is empty".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be >= 1".into()));
    }
    if dataset.class_names().len() != model.n_classes() {
        return Err(Error::IncompatibleArchitecture(format!(
            "dataset has {} classes, model outputs {}",
            dataset.class_names().len(),
            model.n_classes()
        )));
    }

    let mut adam = Adam::new(config.adam)?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=config.epochs as u64 {
        let started = Instant::now();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in dataset.batches::<T>(Split::Train, config.batch_size, config.seed, epoch)? {
            let batch = batch?;
            let (loss, hits) = train_step(model, &mut adam, &batch)?;
            loss_sum += loss * batch.labels.len() as f64;
            correct += hits;
        }
        let val = evaluate(model, dataset, Split::Validation, config.batch_size)?;
        if !val.loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {}", val.loss)));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            train_acc: correct as f64 / n_train as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: if config.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        let score = match config.criterion {
            BestCriterion::ValidationLoss => record.val_loss,
            BestCriterion::TrainLoss => record.train_loss,
        };
        let improved = best.as_ref().is_none_or(|(b, _)| score < *b);
        if improved {
            let meta = CheckpointMeta {
                epoch,
                train_loss: record.train_loss,
                val_loss: record.val_loss,
                seed: config.seed,
                class_names: dataset.class_names().to_vec(),
            };
            best = Some((score, Checkpoint::capture(model, meta)));
        }
        log::info!(
            "epoch {epoch}/{}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}{} ({:.1}s)",
            config.epochs,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc,
            if improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        on_epoch(&record, if improved { best.as_ref().map(|(_, c)| c) } else { None })?;
        records.push(record);
    }
    let (_, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, records })
}

pub fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
        );
    }
    out
}

pub fn write_epochs_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    fs::write(path, epochs_csv(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledImage, SplitRatios};
    use crate::model::Architecture;
    use crate::tensor::Tensor;
    use std::path::PathBuf;

    fn tiny_dataset(per_class: usize, side: usize) -> Dataset {
        let mut images = Vec::new();
        for label in 0..4 {
            for k in 0..per_class {
                let base = [0.1, 0.4, 0.7, 0.95][label];
                images.push(LabeledImage {
                    pixels: Tensor::from_fn(&[3, side, side], |i| (base + ((i * 7 + k) % 5) as f32 * 0.01).min(1.0))
                        .unwrap(),
                    label,
                    source_path: PathBuf::from(format!("{label}/{k}.bmp")),
                    split: Split::Unassigned,
                });
            }
        }
        Dataset::new(["A", "B", "C", "D"].map(String::from).to_vec(), images).unwrap()
    }

    fn net(side: usize) -> WbcNet<f32> {
        WbcNet::from_architecture(&Architecture::wbc(4).with_input([3, side, side]), 7).unwrap()
    }

    #[test]
    fn loop_contract() {
        let data = tiny_dataset(4, 16).split(SplitRatios::default(), 1).unwrap();
        let mut model = net(16);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let out = train(&mut model, &data, &config, |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(seen, 2);
        assert!((1..=2).contains(&out.best.meta.epoch));
        let min = out.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.meta.val_loss, min);
        for r in &out.records {
            assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
            assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
            assert_eq!(r.seconds, 0.0);
        }
    }

    #[test]
    fn requires_train_and_validation() {
        let data = tiny_dataset(4, 16);
        let mut model = net(16);
        let err = train(&mut model, &data, &TrainConfig::default(), |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_dataset(5, 16).split(SplitRatios::default(), 3).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = net(16);
            let out = train(&mut model, &data, &config, |_, _| Ok(())).unwrap();
            (epochs_csv(&out.records), out.best.to_bytes())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_layout() {
        let text = epochs_csv(&[EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.25,
            val_loss: 1.0,
            val_acc: 0.5,
            seconds: 0.0,
        }]);
        assert_eq!(
            text,
            "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n1,0.500000,0.250000,1.000000,0.500000,0.000\n"
        );
    }
}
