use std::io;
use std::time::Instant;

use super::{Model, ModelSpec};
use crate::data::{eval_batches, train_batches, DatasetContainer, Subset};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, confusion_matrix, EvalReport};
use crate::optim::Adam;

/// One optimizer step as written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based count of completed optimizer steps.
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// Accuracy of the train-mode (dropout active) predictions on the batch.
    pub batch_accuracy: f64,
    /// Milliseconds since training started; 0 when timing is disabled.
    pub wall_ms: u64,
}

/// Receives step records in order.
pub trait MetricsSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<StepRecord>,
}

impl MetricsSink for MemorySink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(*rec);
        Ok(())
    }
}

/// CSV log with columns `step,epoch,loss,batch_accuracy,wall_ms`.
pub struct CsvLog<W: io::Write> {
    writer: csv::Writer<W>,
}

impl<W: io::Write> CsvLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(["step", "epoch", "loss", "batch_accuracy", "wall_ms"])?;
        Ok(Self { writer })
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl<W: io::Write> MetricsSink for CsvLog<W> {
    fn record(&mut self, r: &StepRecord) -> Result<()> {
        self.writer.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.loss.to_string(),
            r.batch_accuracy.to_string(),
            r.wall_ms.to_string(),
        ])?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// When false every `wall_ms` is 0, making logs byte-reproducible.
    pub record_wall_time: bool,
    /// Also score the test split after each epoch.
    pub eval_each_epoch: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            record_wall_time: true,
            eval_each_epoch: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEval {
    pub epoch: u64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub total_steps: u64,
    pub last_loss: f64,
    /// Mean batch accuracy over every step run in this call.
    pub mean_batch_accuracy: f64,
    /// Mean batch accuracy over the final epoch.
    pub final_epoch_accuracy: f64,
    pub epoch_evals: Vec<EpochEval>,
}

/// A model, its optimizer, and how many steps it has taken.
#[derive(Debug)]
pub struct Session {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
}

impl Session {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            model: Model::build(spec)?,
            adam: Adam::new(spec.lr),
            step: 0,
        })
    }

    /// Forward, loss, backward and Adam update on one batch. Returns the
    /// loss and the batch accuracy.
    pub fn train_step(&mut self, x: &crate::Tensor<f32>, labels: &[usize]) -> Result<(f64, f64)> {
        let (loss, pred) = self.model.compute_gradients(x, labels, self.step)?;
        self.adam.step(&mut self.model.params_mut())?;
        self.step += 1;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok((loss, hits as f64 / labels.len() as f64))
    }
}

fn check_compatible(spec: &ModelSpec, data: &DatasetContainer) -> Result<()> {
    if spec.classes != data.num_classes() {
        return Err(Error::config(format!(
            "model has {} classes but dataset has {}",
            spec.classes,
            data.num_classes()
        )));
    }
    if spec.input_dim() != data.feature_dim {
        return Err(Error::config(format!(
            "model expects {} features but dataset rows have {}",
            spec.input_dim(),
            data.feature_dim
        )));
    }
    Ok(())
}

/// Runs the session up to `spec.epochs` epochs, resuming from
/// `session.step`. Each epoch reshuffles the training split from
/// `(spec.seed, epoch)` and drops any short final batch.
pub fn train(
    session: &mut Session,
    data: &DatasetContainer,
    sinks: &mut [&mut dyn MetricsSink],
    opts: &TrainOptions,
) -> Result<TrainSummary> {
    let spec = session.model.spec().clone();
    check_compatible(&spec, data)?;
    let train_idx = data.indices(Subset::Train);
    let per_epoch = (train_idx.len() / spec.batch) as u64;
    if per_epoch == 0 {
        return Err(Error::input(format!(
            "training split of {} samples cannot fill a batch of {}",
            train_idx.len(),
            spec.batch
        )));
    }
    if !train_idx.len().is_multiple_of(spec.batch) {
        log::warn!(
            "training split of {} is not a multiple of batch {}; {} samples per epoch are skipped",
            train_idx.len(),
            spec.batch,
            train_idx.len() % spec.batch
        );
    }
    let total = per_epoch * spec.epochs as u64;
    let started = Instant::now();
    let mut summary = TrainSummary {
        steps_run: 0,
        total_steps: total,
        last_loss: f64::NAN,
        mean_batch_accuracy: 0.0,
        final_epoch_accuracy: 0.0,
        epoch_evals: Vec::new(),
    };
    let mut acc_sum = 0.0;
    let first_epoch = session.step / per_epoch;
    for epoch in first_epoch..spec.epochs as u64 {
        let skip = if epoch == first_epoch {
            (session.step % per_epoch) as usize
        } else {
            0
        };
        let mut epoch_acc = 0.0;
        let mut epoch_steps = 0u64;
        for batch in train_batches(train_idx, spec.batch, spec.seed, epoch).iter().skip(skip) {
            let x = data.batch_features(batch);
            let y = data.batch_labels(batch);
            let (loss, acc) = session.train_step(&x, &y)?;
            let rec = StepRecord {
                step: session.step,
                epoch,
                loss,
                batch_accuracy: acc,
                wall_ms: if opts.record_wall_time {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            for sink in sinks.iter_mut() {
                sink.record(&rec)?;
            }
            summary.steps_run += 1;
            summary.last_loss = loss;
            acc_sum += acc;
            epoch_acc += acc;
            epoch_steps += 1;
        }
        if epoch_steps > 0 {
            summary.final_epoch_accuracy = epoch_acc / epoch_steps as f64;
        }
        log::debug!(
            "epoch {epoch}: step {} loss {:.4} batch accuracy {:.4}",
            session.step,
            summary.last_loss,
            summary.final_epoch_accuracy
        );
        if opts.eval_each_epoch && !data.indices(Subset::Test).is_empty() {
            let report = evaluate(&session.model, data, Subset::Test)?;
            log::info!("epoch {epoch}: test accuracy {:.4}", report.accuracy);
            summary.epoch_evals.push(EpochEval {
                epoch,
                test_accuracy: report.accuracy,
            });
        }
    }
    for sink in sinks.iter_mut() {
        sink.flush()?;
    }
    if summary.steps_run > 0 {
        summary.mean_batch_accuracy = acc_sum / summary.steps_run as f64;
    }
    Ok(summary)
}

/// One inference-mode pass over a split, in fixed order.
pub fn evaluate(model: &Model<f32>, data: &DatasetContainer, subset: Subset) -> Result<EvalReport> {
    check_compatible(model.spec(), data)?;
    let indices = data.indices(subset);
    if indices.is_empty() {
        return Err(Error::input(format!("{subset:?} split is empty")));
    }
    let mut y_true = Vec::with_capacity(indices.len());
    let mut y_pred = Vec::with_capacity(indices.len());
    for batch in eval_batches(indices, model.spec().batch) {
        y_pred.extend(model.predict(&data.batch_features(&batch))?);
        y_true.extend(data.batch_labels(&batch));
    }
    classification_report(&confusion_matrix(&y_true, &y_pred, model.spec().classes)?)
}
