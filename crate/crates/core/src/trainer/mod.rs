//! Training loop: class-balanced batching, the combined loss, SGD with
//! warm-up and step decay, evaluation and checkpoints.

mod batching;
mod checkpoint;
mod config;
mod eval;
mod schedule;

pub use batching::{balanced_batches, make_batches};
pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{Ablation, TrainConfig};
pub use eval::{evaluate, EvalReport, Prediction};
pub use schedule::lr_at;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::extractor::{Extractor, ExtractorVars, FeatureMaps, Mode};
use crate::mfcc::{batch_scores, mfcc_loss, CenterBank};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng;
use crate::scalar::Scalar;
use crate::sfd::{sfd_loss, SfdOutput};

/// Extractor plus center bank, with the configuration that built them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub extractor: Extractor<T>,
    pub bank: CenterBank<T>,
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    /// Completed training epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

/// Values recorded by one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub l_disc: f64,
    pub l_mfc: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// One line of the metrics trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub l_disc: f64,
    pub l_mfc: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
}

/// Loss terms recorded on a tape for one batch.
pub struct BatchLoss<T> {
    pub l_disc: Option<Var>,
    pub l_mfc: Var,
    pub total: Var,
    pub sfd: Option<SfdOutput<T>>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model for `class_names.len()` classes. Ablations are applied by
    /// building from the effective configuration.
    pub fn new(config: &TrainConfig, class_names: Vec<String>) -> Result<Self> {
        let n = class_names.len();
        config.validate(n)?;
        let eff = config.effective();
        let extractor = Extractor::new(&eff.extractor, eff.seed)?;
        let bank = CenterBank::init(eff.extractor.embed_dim, n, &eff.centers, eff.seed)?;
        Ok(Self { extractor, bank, config: config.clone(), class_names, epoch: 0, step: 0 })
    }

    pub fn num_classes(&self) -> usize {
        self.bank.num_classes
    }

    pub fn effective_config(&self) -> TrainConfig {
        self.config.effective()
    }

    /// All trainable arrays by name: extractor layers, then `centers`.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.extractor.params();
        out.push(("centers".to_string(), &self.bank.centers));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.extractor.params_mut();
        out.push(("centers".to_string(), &mut self.bank.centers));
        out
    }

    /// Records the combined loss for one batch. The discrimination term is
    /// left off the tape entirely when its weight is zero.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<T>,
        vars: &ExtractorVars,
        centers: Var,
        images: &[&Tensor<T>],
        labels: &[usize],
        dropout: &mut dyn RngCore,
    ) -> Result<BatchLoss<T>> {
        if images.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: images.len(), got: labels.len() });
        }
        let eff = self.effective_config();
        let mut maps: Vec<FeatureMaps> = Vec::with_capacity(images.len());
        let mut vectors = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            let x = tape.constant((*img).clone());
            let m = self.extractor.forward_maps(tape, vars, x, i)?;
            let v = self.extractor.embed(tape, vars, &m, Mode::Train(&mut *dropout))?;
            maps.push(m);
            vectors.push(v.values);
        }
        let stacked = tape.stack(&vectors)?;
        let stacked = tape.reshape(stacked, &[images.len(), eff.extractor.embed_dim])?;
        let scores = batch_scores(tape, stacked, centers)?;
        let l_mfc = mfcc_loss(tape, scores, labels, &self.bank)?.loss;
        let mut total = tape.scale(l_mfc, T::lit(eff.lambda1));
        let (mut l_disc, mut sfd) = (None, None);
        if eff.lambda2 != 0.0 {
            let out = sfd_loss(tape, &maps, &vectors, labels, &eff.sfd)?;
            let weighted = tape.scale(out.loss, T::lit(eff.lambda2));
            total = tape.add(total, weighted)?;
            l_disc = Some(out.loss);
            sfd = Some(out);
        }
        Ok(BatchLoss { l_disc, l_mfc, total, sfd })
    }

    /// One forward/backward pass and plain gradient-descent update.
    /// Non-finite losses or gradients abort before any parameter changes.
    pub fn train_step(&mut self, images: &[&Tensor<T>], labels: &[usize], lr: f64, dropout: &mut dyn RngCore) -> Result<StepReport> {
        let mut tape = Tape::new();
        let vars = self.extractor.bind(&mut tape);
        let centers = tape.leaf(self.bank.centers.clone());
        let loss = self.batch_loss(&mut tape, &vars, centers, images, labels, dropout)?;
        let l_mfc = tape.value(loss.l_mfc).item().as_f64();
        let l_disc = loss.l_disc.map_or(0.0, |v| tape.value(v).item().as_f64());
        let total = tape.value(loss.total).item().as_f64();
        let step = self.step;
        let non_finite = move || Error::NonFiniteLoss { step, l_disc, l_mfc, total };
        if !total.is_finite() {
            return Err(non_finite());
        }
        let grads = tape.backward(loss.total)?;
        let mut handles = vars.all();
        handles.push(centers);
        let grads: Vec<Tensor<T>> = handles.iter().map(|&v| grads.wrt(v)).collect();
        let grad_norm = grads.iter().map(|g| g.data().iter().map(|x| x.as_f64().powi(2)).sum::<f64>()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(non_finite());
        }
        let lr = T::lit(lr);
        for ((_, p), g) in self.params_mut().into_iter().zip(&grads) {
            for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *w = *w - lr * d;
            }
        }
        self.step += 1;
        Ok(StepReport { l_disc, l_mfc, total, grad_norm })
    }

    /// Runs one epoch over `ds` and returns the batch-mean loss terms.
    pub fn train_epoch(&mut self, ds: &Dataset<T>) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let lr = lr_at(epoch, &self.config);
        let batches = make_batches(ds, &self.config, epoch)?;
        let (mut l_disc, mut l_mfc, mut total) = (0.0, 0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            let images: Vec<&Tensor<T>> = batch.iter().map(|&i| &ds.samples[i].image).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| ds.samples[i].label).collect();
            let mut dropout = rng::stream(self.config.seed, &[rng::STREAM_DROPOUT, epoch as u64, b as u64]);
            let r = self.train_step(&images, &labels, lr, &mut dropout)?;
            l_disc += r.l_disc;
            l_mfc += r.l_mfc;
            total += r.total;
        }
        let k = batches.len() as f64;
        self.epoch += 1;
        Ok(EpochRecord { epoch, lr, l_disc: l_disc / k, l_mfc: l_mfc / k, total: total / k, eval_accuracy: None })
    }

    /// Trains for the configured number of epochs (counting any already
    /// completed). `on_epoch` sees each record as it is produced; when a
    /// held-out set is given, the final record carries its accuracy.
    pub fn fit(
        &mut self,
        train: &Dataset<T>,
        held_out: Option<&Dataset<T>>,
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        if train.num_classes() != self.num_classes() {
            return Err(Error::DimensionMismatch { expected: self.num_classes(), got: train.num_classes() });
        }
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let mut rec = self.train_epoch(train)?;
            if let (Some(ds), true) = (held_out, self.epoch == self.config.epochs) {
                rec.eval_accuracy = Some(evaluate(self, ds)?.micro_accuracy);
            }
            on_epoch(&rec)?;
            records.push(rec);
        }
        Ok(records)
    }

    /// Predicted class for one image, dropout off.
    pub fn predict(&self, image: &Tensor<T>) -> Result<usize> {
        let (_, v) = self.extractor.infer(image)?;
        self.bank.predict(v.data())
    }
}
