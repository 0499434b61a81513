//! Differentiable layers over tape variables. Shapes follow the
//! `[batch, time, channels]` convention throughout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

fn dims3(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, t, d] => Ok((b, t, d)),
        ref s => Err(Error::Shape(format!("{what} expects [B, T, D], got {s:?}"))),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOut {
    /// Reweighted sequence, same shape as the input.
    pub output: Var,
    /// Softmax weights over time, `[B, T]`.
    pub weights: Var,
}

/// Additive temporal attention.
///
/// `s_t = vᵀ tanh(W x_t + b)`, `α = softmax_t(s)`, `x̃_t = T · α_t · x_t`.
/// The `T` factor makes uniform attention the identity map.
pub fn attention(tape: &mut Tape, x: Var, w: Var, b: Var, v: Var) -> Result<AttentionOut> {
    let (bs, t, f) = dims3(tape, x, "attention")?;
    let d_a = tape.shape(v)[0];
    let flat = tape.reshape(x, vec![bs * t, f])?;
    let wt = tape.transpose(w)?;
    let proj = tape.matmul(flat, wt)?;
    let proj = tape.add_bias(proj, b)?;
    let act = tape.tanh(proj);
    let vcol = tape.reshape(v, vec![d_a, 1])?;
    let scores = tape.matmul(act, vcol)?;
    let scores = tape.reshape(scores, vec![bs, t])?;
    let weights = tape.softmax(scores, 1)?;
    let scaled = tape.scale(weights, t as f64);
    let spread = tape.repeat_last(scaled, f);
    let output = tape.mul(x, spread)?;
    Ok(AttentionOut { output, weights })
}

/// Single-layer LSTM returning every hidden state, `[B, T, H]`.
///
/// Gate blocks in `w_ih` (`4H × D`), `w_hh` (`4H × H`) and `bias` (`4H`)
/// are ordered input, forget, cell, output. `h0`/`c0` default to zeros.
pub fn lstm(
    tape: &mut Tape,
    x: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    h0: Option<Var>,
    c0: Option<Var>,
) -> Result<Var> {
    let (bs, t, d) = dims3(tape, x, "lstm")?;
    let (four_h, d_w) = match *tape.shape(w_ih) {
        [r, c] => (r, c),
        ref s => return Err(Error::Shape(format!("lstm input weights {s:?}"))),
    };
    if d_w != d || four_h % 4 != 0 {
        return Err(Error::Shape(format!(
            "lstm input weights {four_h}×{d_w} for input width {d}"
        )));
    }
    let h = four_h / 4;
    if tape.shape(w_hh) != [four_h, h] {
        return Err(Error::Shape(format!(
            "lstm recurrent weights {:?}, expected [{four_h}, {h}]",
            tape.shape(w_hh)
        )));
    }
    let mut h_prev = match h0 {
        Some(v) => v,
        None => tape.constant(vec![bs, h], vec![0.0; bs * h])?,
    };
    let mut c_prev = match c0 {
        Some(v) => v,
        None => tape.constant(vec![bs, h], vec![0.0; bs * h])?,
    };
    for s in [h_prev, c_prev] {
        if tape.shape(s) != [bs, h] {
            return Err(Error::Shape(format!(
                "lstm initial state {:?}, expected [{bs}, {h}]",
                tape.shape(s)
            )));
        }
    }

    // input projections for all steps at once
    let flat = tape.reshape(x, vec![bs * t, d])?;
    let w_ih_t = tape.transpose(w_ih)?;
    let xw = tape.matmul(flat, w_ih_t)?;
    let xw = tape.add_bias(xw, bias)?;
    let xw = tape.reshape(xw, vec![bs, t, four_h])?;
    let w_hh_t = tape.transpose(w_hh)?;

    let mut outputs = Vec::with_capacity(t);
    for step in 0..t {
        let xs = tape.select_time(xw, step)?;
        let hu = tape.matmul(h_prev, w_hh_t)?;
        let z = tape.add(xs, hu)?;
        let zi = tape.slice_last(z, 0, h)?;
        let zf = tape.slice_last(z, h, h)?;
        let zg = tape.slice_last(z, 2 * h, h)?;
        let zo = tape.slice_last(z, 3 * h, h)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h_new = tape.mul(o, tc)?;
        outputs.push(h_new);
        h_prev = h_new;
        c_prev = c;
    }
    tape.stack_time(&outputs)
}

/// Population mean and variance per channel of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization with batch statistics over the `B·T` axis.
pub fn batchnorm_train(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, BatchStats)> {
    let (bs, t, _) = dims3(tape, x, "batchnorm")?;
    if bs * t < 2 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm in training mode needs at least 2 values per channel, got {}",
            bs * t
        )));
    }
    let mean = tape.mean(x, &[0, 1])?;
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_bias(x, neg_mean)?;
    let sq = tape.square(centered);
    let var = tape.mean(sq, &[0, 1])?;
    let inv_std = tape.rsqrt(var, eps);
    let xhat = tape.mul_bias(centered, inv_std)?;
    let y = tape.mul_bias(xhat, gamma)?;
    let y = tape.add_bias(y, beta)?;
    let stats = BatchStats {
        mean: tape.value(mean).to_vec(),
        var: tape.value(var).to_vec(),
    };
    Ok((y, stats))
}

/// Batch normalization with fixed running statistics.
pub fn batchnorm_eval(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Var> {
    dims3(tape, x, "batchnorm")?;
    let n = running_mean.len();
    let shift = tape.constant(vec![n], running_mean.iter().map(|m| -m).collect())?;
    let inv = tape.constant(
        vec![n],
        running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect(),
    )?;
    let centered = tape.add_bias(x, shift)?;
    let xhat = tape.mul_bias(centered, inv)?;
    let y = tape.mul_bias(xhat, gamma)?;
    tape.add_bias(y, beta)
}

/// Inverted dropout: survivors are scaled by `1/(1−p)`. Identity when not
/// training or when `p == 0`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = tape.constant(tape.shape(x).to_vec(), mask)?;
    tape.mul(x, m)
}

/// Per-step affine map `W h_t + b`, `[B, T, H] → [B, T, P]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (bs, t, h) = dims3(tape, x, "linear")?;
    let p = tape.shape(w)[0];
    let flat = tape.reshape(x, vec![bs * t, h])?;
    let wt = tape.transpose(w)?;
    let y = tape.matmul(flat, wt)?;
    let y = tape.add_bias(y, b)?;
    tape.reshape(y, vec![bs, t, p])
}
