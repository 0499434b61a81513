//! MAE training with Adam over shuffled mini-batches of windows.

mod adam;
mod loss;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, Mode};
use crate::preprocess::WindowedDataset;
use crate::rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::mae_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Full passes over the training windows.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and yields a null update.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be a non-negative number",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} {b} outside [0, 1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Sample-weighted mean batch loss, one entry per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub epoch_times: Vec<Duration>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// Mean of the first `n` epoch losses.
    pub fn head_mean(&self, n: usize) -> f64 {
        let k = n.min(self.epoch_losses.len()).max(1);
        self.epoch_losses[..k].iter().sum::<f64>() / k as f64
    }

    /// Mean of the last `n` epoch losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.epoch_losses.len()).max(1);
        let s = &self.epoch_losses[self.epoch_losses.len() - k..];
        s.iter().sum::<f64>() / k as f64
    }

    /// `epoch,loss` table. Timing is left out so the file is reproducible.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("train report", e);
        writeln!(w, "epoch,loss").map_err(io)?;
        for (i, l) in self.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1).map_err(io)?;
        }
        Ok(())
    }
}

fn check_dataset(model: &ForecastModel, data: &WindowedDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let c = model.config();
    if data.window != c.window || data.n_inputs() != c.inputs || data.n_targets() != c.targets {
        return Err(Error::Shape(format!(
            "dataset windows {}×{}→{} do not fit model {}×{}→{}",
            data.window,
            data.n_inputs(),
            data.n_targets(),
            c.window,
            c.inputs,
            c.targets
        )));
    }
    Ok(())
}

/// Trains `model` in place. The model is left in eval mode.
///
/// Each epoch draws a fresh permutation of the windows from a generator
/// keyed by `(seed, epoch)`, runs every batch (the last one may be short)
/// and takes one Adam step per batch. Dropout masks are keyed by
/// `(seed, epoch, batch)`. Given the same inputs the trained parameters
/// are reproducible bit for bit.
pub fn train(model: &mut ForecastModel, data: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(model, data)?;
    model.set_mode(Mode::Train);
    let adam_cfg = cfg.adam();
    let mut state = AdamState::new(model.parameters().into_iter().map(|(_, t)| t));
    let mut report = TrainReport::default();
    let start_epoch = model.epochs_trained();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let global_epoch = (start_epoch + epoch) as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::SHUFFLE, global_epoch]));

        let mut weighted = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(batch);
            let mut tape = Tape::new();
            let xv = tape.leaf(&x);
            let yv = tape.leaf(&y);
            let dropout_seed = rng::derive_seed(cfg.seed, &[global_epoch, bi as u64]);
            let fwd = model.forward(&mut tape, xv, dropout_seed)?;
            let loss = mae_loss(&mut tape, fwd.output, yv)?;
            let lv = tape.value(loss)[0];
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: bi + 1,
                    loss: lv,
                });
            }
            let grads = tape.backward(loss)?;
            model.accumulate_gradients(&fwd, &grads);
            if let Some(stats) = &fwd.batch_stats {
                model.update_running_stats(stats);
            }
            let mut params: Vec<_> = model.parameters_mut().into_iter().map(|(_, t)| t).collect();
            adam_step(&mut params, &mut state, &adam_cfg).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "epoch {}, batch {}: {msg}",
                    epoch + 1,
                    bi + 1
                )),
                other => other,
            })?;
            model.zero_grad();
            weighted += lv * batch.len() as f64;
        }
        let epoch_loss = weighted / data.len() as f64;
        report.epoch_losses.push(epoch_loss);
        report.epoch_times.push(started.elapsed());
        model.set_epochs_trained(start_epoch + epoch + 1);
        debug!(
            "epoch {}/{}: loss {epoch_loss:.6} ({:.2?})",
            epoch + 1,
            cfg.epochs,
            started.elapsed()
        );
    }
    model.set_mode(Mode::Eval);
    Ok(report)
}
