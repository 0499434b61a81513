//! The forecasting network:
//! input → attention → LSTM → BatchNorm → Dropout → LSTM → BatchNorm → Linear.

mod checkpoint;
pub mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::rng;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, LoadedCheckpoint, NamedArray, TrainingMeta,
    CHECKPOINT_VERSION,
};
pub use layers::{AttentionOut, BatchStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input features per day.
    pub inputs: usize,
    /// Window length in days.
    pub window: usize,
    /// Hidden units in each LSTM.
    pub hidden: usize,
    /// Target channels.
    pub targets: usize,
    /// Width of the attention projection.
    pub attention_dim: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            inputs: 6,
            window: 730,
            hidden: 512,
            targets: 2,
            attention_dim: 64,
            dropout: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("inputs", self.inputs),
            ("window", self.window),
            ("hidden", self.hidden),
            ("targets", self.targets),
            ("attention_dim", self.attention_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model {name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::InvalidArgument("bn_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument("bn_momentum outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4H × D_in`, gate order i, f, g, o.
    pub w_ih: Tensor,
    /// `4H × H`
    pub w_hh: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(h: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(vec![h], 1.0).with_grad(),
            beta: Tensor::zeros(vec![h]).with_grad(),
            running_mean: vec![0.0; h],
            running_var: vec![1.0; h],
        }
    }

    /// `r ← (1 − momentum)·r + momentum·batch`
    pub fn update_running(&mut self, stats: &BatchStats, momentum: f64) {
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `P × H`
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    config: ModelConfig,
    pub attention: Attention,
    pub lstm1: Lstm,
    pub bn1: BatchNorm,
    pub lstm2: Lstm,
    pub bn2: BatchNorm,
    pub head: Linear,
    mode: Mode,
    epochs_trained: usize,
}

/// Result of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, T, P]`
    pub output: Var,
    pub attention_weights: Var,
    /// Parameter variables in [`ForecastModel::parameters`] order.
    pub params: Vec<Var>,
    /// Batch statistics of both BatchNorm layers (training mode only).
    pub batch_stats: Option<[BatchStats; 2]>,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::new(vec![rows, cols], data)
        .expect("glorot shape")
        .with_grad()
}

fn lstm_init(rng: &mut impl Rng, d_in: usize, h: usize) -> Lstm {
    let w_ih = glorot(rng, 4 * h, d_in);
    let w_hh = glorot(rng, 4 * h, h);
    let mut bias = Tensor::zeros(vec![4 * h]).with_grad();
    bias.data_mut()[h..2 * h].fill(1.0);
    Lstm { w_ih, w_hh, bias }
}

impl ForecastModel {
    /// Glorot-uniform weights, zero biases except forget gates (1.0),
    /// identity BatchNorm. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, &[rng::INIT]);
        let (f, h, p, d_a) = (config.inputs, config.hidden, config.targets, config.attention_dim);
        let attention = Attention {
            w: glorot(&mut r, d_a, f),
            b: Tensor::zeros(vec![d_a]).with_grad(),
            v: glorot(&mut r, d_a, 1).reshape(vec![d_a]).expect("vector"),
        };
        let lstm1 = lstm_init(&mut r, f, h);
        let lstm2 = lstm_init(&mut r, h, h);
        let head = Linear {
            w: glorot(&mut r, p, h),
            b: Tensor::zeros(vec![p]).with_grad(),
        };
        Ok(ForecastModel {
            config: ModelConfig { seed, ..config },
            attention,
            lstm1,
            bn1: BatchNorm::new(h),
            lstm2,
            bn2: BatchNorm::new(h),
            head,
            mode: Mode::Train,
            epochs_trained: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub(crate) fn set_epochs_trained(&mut self, n: usize) {
        self.epochs_trained = n;
    }

    /// Trainable tensors with their checkpoint names, in a fixed order.
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("attention.w", &self.attention.w),
            ("attention.b", &self.attention.b),
            ("attention.v", &self.attention.v),
            ("lstm1.w_ih", &self.lstm1.w_ih),
            ("lstm1.w_hh", &self.lstm1.w_hh),
            ("lstm1.bias", &self.lstm1.bias),
            ("bn1.gamma", &self.bn1.gamma),
            ("bn1.beta", &self.bn1.beta),
            ("lstm2.w_ih", &self.lstm2.w_ih),
            ("lstm2.w_hh", &self.lstm2.w_hh),
            ("lstm2.bias", &self.lstm2.bias),
            ("bn2.gamma", &self.bn2.gamma),
            ("bn2.beta", &self.bn2.beta),
            ("head.w", &self.head.w),
            ("head.b", &self.head.b),
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("attention.w", &mut self.attention.w),
            ("attention.b", &mut self.attention.b),
            ("attention.v", &mut self.attention.v),
            ("lstm1.w_ih", &mut self.lstm1.w_ih),
            ("lstm1.w_hh", &mut self.lstm1.w_hh),
            ("lstm1.bias", &mut self.lstm1.bias),
            ("bn1.gamma", &mut self.bn1.gamma),
            ("bn1.beta", &mut self.bn1.beta),
            ("lstm2.w_ih", &mut self.lstm2.w_ih),
            ("lstm2.w_hh", &mut self.lstm2.w_hh),
            ("lstm2.bias", &mut self.lstm2.bias),
            ("bn2.gamma", &mut self.bn2.gamma),
            ("bn2.beta", &mut self.bn2.beta),
            ("head.w", &mut self.head.w),
            ("head.b", &mut self.head.b),
        ]
    }

    /// Non-trainable state: BatchNorm running statistics.
    pub fn buffers(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("bn1.running_mean", &self.bn1.running_mean),
            ("bn1.running_var", &self.bn1.running_var),
            ("bn2.running_mean", &self.bn2.running_mean),
            ("bn2.running_var", &self.bn2.running_var),
        ]
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("bn1.running_mean", &mut self.bn1.running_mean),
            ("bn1.running_var", &mut self.bn1.running_var),
            ("bn2.running_mean", &mut self.bn2.running_mean),
            ("bn2.running_var", &mut self.bn2.running_var),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, t, f] if t == self.config.window && f == self.config.inputs => Ok(()),
            _ => Err(Error::Shape(format!(
                "model expects [B, {}, {}], got {shape:?}",
                self.config.window, self.config.inputs
            ))),
        }
    }

    /// Records the network on `tape` in the current mode. `dropout_seed`
    /// fixes the dropout mask; it is ignored in eval mode.
    pub fn forward(&self, tape: &mut Tape, x: Var, dropout_seed: u64) -> Result<Forward> {
        self.forward_in(tape, x, self.mode, dropout_seed)
    }

    fn forward_in(&self, tape: &mut Tape, x: Var, mode: Mode, dropout_seed: u64) -> Result<Forward> {
        let params: Vec<Var> = self.parameters().iter().map(|(_, t)| tape.leaf(t)).collect();
        self.forward_bound(tape, x, params, mode, dropout_seed)
    }

    /// Forward pass with parameters already recorded on the tape, in
    /// [`ForecastModel::parameters`] order. BatchNorm running statistics
    /// still come from `self` in eval mode.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        x: Var,
        params: Vec<Var>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Forward> {
        self.check_input(tape.shape(x))?;
        let expected = self.parameters();
        if params.len() != expected.len()
            || params
                .iter()
                .zip(&expected)
                .any(|(&v, (_, t))| tape.shape(v) != t.shape())
        {
            return Err(Error::Shape("bound parameters do not match the model".into()));
        }
        let [aw, ab, av, l1w, l1u, l1b, g1, b1, l2w, l2u, l2b, g2, b2, hw, hb] = params[..] else {
            unreachable!("length checked above")
        };
        let training = mode == Mode::Train;
        let eps = self.config.bn_eps;

        let att = layers::attention(tape, x, aw, ab, av)?;
        let h1 = layers::lstm(tape, att.output, l1w, l1u, l1b, None, None)?;
        let (n1, s1) = if training {
            let (y, s) = layers::batchnorm_train(tape, h1, g1, b1, eps)?;
            (y, Some(s))
        } else {
            let y = layers::batchnorm_eval(
                tape,
                h1,
                g1,
                b1,
                &self.bn1.running_mean,
                &self.bn1.running_var,
                eps,
            )?;
            (y, None)
        };
        let mut drng = rng::stream(dropout_seed, &[rng::DROPOUT]);
        let d1 = layers::dropout(tape, n1, self.config.dropout, training, &mut drng)?;
        let h2 = layers::lstm(tape, d1, l2w, l2u, l2b, None, None)?;
        let (n2, s2) = if training {
            let (y, s) = layers::batchnorm_train(tape, h2, g2, b2, eps)?;
            (y, Some(s))
        } else {
            let y = layers::batchnorm_eval(
                tape,
                h2,
                g2,
                b2,
                &self.bn2.running_mean,
                &self.bn2.running_var,
                eps,
            )?;
            (y, None)
        };
        let output = layers::linear(tape, n2, hw, hb)?;
        Ok(Forward {
            output,
            attention_weights: att.weights,
            params,
            batch_stats: s1.zip(s2).map(|(a, b)| [a, b]),
        })
    }

    /// Adds the gradients of one backward pass into every parameter.
    pub fn accumulate_gradients(&mut self, fwd: &Forward, grads: &Gradients) {
        for ((_, p), &v) in self.parameters_mut().into_iter().zip(&fwd.params) {
            grads.accumulate_into(v, p);
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats; 2]) {
        let m = self.config.bn_momentum;
        self.bn1.update_running(&stats[0], m);
        self.bn2.update_running(&stats[1], m);
    }

    /// Eval-mode prediction `[B, T, F] → [B, T, P]`, whatever the current mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
        let fwd = self.forward_in(&mut tape, xv, Mode::Eval, 0)?;
        Ok(tape.to_tensor(fwd.output))
    }

    /// Predicts every sample of `x` independently, batching `chunk`
    /// samples per tape. Eval-mode samples do not interact, so the result
    /// equals [`ForecastModel::predict`] bitwise.
    pub fn predict_batched(&self, x: &Tensor, chunk: usize, exec: Execution) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let chunk = chunk.max(1);
        let per = t * f;
        let n_chunks = b.div_ceil(chunk);
        let parts = map_indexed(exec, n_chunks, |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(b);
            let part = Tensor::new(vec![hi - lo, t, f], x.data()[lo * per..hi * per].to_vec())?;
            self.predict(&part)
        });
        let mut data = Vec::with_capacity(b * t * self.config.targets);
        for p in parts {
            data.extend_from_slice(p?.data());
        }
        Tensor::new(vec![b, t, self.config.targets], data)
    }
}

#[cfg(test)]
mod tests;
