use rand::Rng;

use super::*;
use crate::autodiff::grad_check_many;
use crate::preprocess::NormalizationStats;
use crate::training::mae_loss;

fn tiny() -> ModelConfig {
    ModelConfig {
        inputs: 3,
        window: 12,
        hidden: 8,
        targets: 2,
        attention_dim: 4,
        ..ModelConfig::default()
    }
}

fn random(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[42]);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn init_is_deterministic() {
    let a = ForecastModel::init(tiny(), 7).unwrap();
    let b = ForecastModel::init(tiny(), 7).unwrap();
    let c = ForecastModel::init(tiny(), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.lstm1.w_ih, c.lstm1.w_ih);
}

#[test]
fn init_contract() {
    let m = ForecastModel::init(tiny(), 1).unwrap();
    let h = m.config().hidden;
    for bn in [&m.bn1, &m.bn2] {
        assert!(bn.gamma.data().iter().all(|&g| g == 1.0));
        assert!(bn.beta.data().iter().all(|&b| b == 0.0));
        assert!(bn.running_mean.iter().all(|&v| v == 0.0));
        assert!(bn.running_var.iter().all(|&v| v == 1.0));
    }
    for l in [&m.lstm1, &m.lstm2] {
        let b = l.bias.data();
        assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(b[..h].iter().chain(&b[2 * h..]).all(|&v| v == 0.0));
    }
    let limit = (6.0f64 / (4 * h + 3) as f64).sqrt();
    assert!(m.lstm1.w_ih.data().iter().all(|v| v.abs() <= limit));
    assert_eq!(m.lstm1.w_ih.shape(), &[4 * h, 3]);
    assert_eq!(m.lstm2.w_ih.shape(), &[4 * h, h]);
    assert_eq!(m.head.w.shape(), &[2, h]);
    assert!(m.attention.b.data().iter().all(|&v| v == 0.0));
    assert!(m.head.b.data().iter().all(|&v| v == 0.0));
}

#[test]
fn config_validation() {
    assert!(ForecastModel::init(ModelConfig { hidden: 0, ..tiny() }, 0).is_err());
    assert!(ForecastModel::init(ModelConfig { dropout: 1.0, ..tiny() }, 0).is_err());
}

#[test]
fn output_shape_and_eval_determinism() {
    let m = ForecastModel::init(tiny(), 3).unwrap();
    let x = random(vec![2, 12, 3], 1);
    let a = m.predict(&x).unwrap();
    let b = m.predict(&x).unwrap();
    assert_eq!(a.shape(), &[2, 12, 2]);
    assert_eq!(a, b);
    assert!(m.predict(&random(vec![2, 11, 3], 1)).is_err());
}

#[test]
fn predict_batched_matches_predict() {
    let m = ForecastModel::init(tiny(), 3).unwrap();
    let x = random(vec![5, 12, 3], 2);
    let whole = m.predict(&x).unwrap();
    for exec in [Execution::Sequential, Execution::Parallel] {
        assert_eq!(m.predict_batched(&x, 2, exec).unwrap(), whole);
    }
}

#[test]
fn attention_weights_sum_to_one() {
    let m = ForecastModel::init(tiny(), 4).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(&random(vec![3, 12, 3], 5));
    let fwd = m.forward(&mut tape, x, 0).unwrap();
    for row in tape.value(fwd.attention_weights).chunks(12) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn lstm_outputs_are_bounded() {
    let m = ForecastModel::init(tiny(), 4).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(vec![2, 12, 3], vec![50.0; 72]).unwrap();
    let params: Vec<Var> = m.parameters().iter().map(|(_, t)| tape.leaf(t)).collect();
    let h = layers::lstm(&mut tape, x, params[3], params[4], params[5], None, None).unwrap();
    assert!(tape.value(h).iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn train_mode_updates_running_stats() {
    let mut m = ForecastModel::init(tiny(), 4).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(&random(vec![2, 12, 3], 6));
    let fwd = m.forward(&mut tape, x, 0).unwrap();
    let stats = fwd.batch_stats.clone().unwrap();
    m.update_running_stats(&stats);
    for (r, b) in m.bn1.running_mean.iter().zip(&stats[0].mean) {
        assert!((r - 0.1 * b).abs() < 1e-15);
    }
    for (r, b) in m.bn1.running_var.iter().zip(&stats[0].var) {
        assert!((r - (0.9 + 0.1 * b)).abs() < 1e-15);
        assert!(*r >= 0.0);
    }
}

/// Central differences over every parameter of the tiny network, MAE loss,
/// dropout mask held fixed.
pub(crate) fn full_model_grad_check(seed: u64) -> crate::autodiff::GradCheckReport {
    let model = ForecastModel::init(tiny(), seed).unwrap();
    let x = random(vec![2, 12, 3], seed + 100);
    let y = random(vec![2, 12, 2], seed + 200);
    let params: Vec<Tensor> = model.parameters().iter().map(|(_, t)| (*t).clone()).collect();
    grad_check_many(
        |tape, vars| {
            let xv = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
            let yv = tape.constant(y.shape().to_vec(), y.data().to_vec())?;
            let fwd = model.forward_bound(tape, xv, vars.to_vec(), Mode::Train, 11)?;
            mae_loss(tape, fwd.output, yv)
        },
        &params,
        1e-4,
        1e-4,
    )
    .unwrap()
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let r = full_model_grad_check(0);
    let names: Vec<&str> = ForecastModel::init(tiny(), 0)
        .unwrap()
        .parameters()
        .iter()
        .map(|(n, _)| *n)
        .collect();
    assert!(
        r.passed(),
        "max rel error {} at {} [{}]",
        r.max_rel_error,
        names[r.worst.0],
        r.worst.1
    );
}

fn stats3() -> NormalizationStats {
    NormalizationStats {
        columns: vec!["a".into(), "b".into(), "c".into(), "p".into(), "q".into()],
        mean: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        std: vec![1.0, 0.5, 2.0, 1.5, 3.0],
    }
}

fn cols() -> (Vec<String>, Vec<String>) {
    (
        vec!["a".into(), "b".into(), "c".into()],
        vec!["p".into(), "q".into()],
    )
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut m = ForecastModel::init(tiny(), 9).unwrap();
    m.bn1.running_mean[0] = 0.1 + 0.2;
    m.bn2.running_var[3] = std::f64::consts::PI / 7.0;
    let (ic, tc) = cols();
    let ck = Checkpoint::from_model(&m, &stats3(), &ic, &tc, TrainingMeta::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&ck, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    for ((_, a), (_, b)) in m.parameters().iter().zip(loaded.model.parameters()) {
        let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
    assert_eq!(loaded.model.bn1.running_mean, m.bn1.running_mean);
    assert_eq!(loaded.model.bn2.running_var, m.bn2.running_var);
    assert_eq!(loaded.stats, stats3());
    let x = random(vec![2, 12, 3], 10);
    assert_eq!(m.predict(&x).unwrap(), loaded.model.predict(&x).unwrap());
}

#[test]
fn checkpoint_rejects_bad_version() {
    let m = ForecastModel::init(tiny(), 9).unwrap();
    let (ic, tc) = cols();
    let mut ck = Checkpoint::from_model(&m, &stats3(), &ic, &tc, TrainingMeta::default());
    ck.format_version = 99;
    let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
    assert!(err.to_string().contains("unsupported checkpoint version"), "{err}");
}

#[test]
fn checkpoint_rejects_truncated_array() {
    let m = ForecastModel::init(tiny(), 9).unwrap();
    let (ic, tc) = cols();
    let mut ck = Checkpoint::from_model(&m, &stats3(), &ic, &tc, TrainingMeta::default());
    ck.parameters[4].data.pop();
    let err = Checkpoint::from_json(&ck.to_json().unwrap())
        .unwrap()
        .into_loaded()
        .unwrap_err();
    assert!(err.to_string().contains("shape mismatch"), "{err}");
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(Checkpoint::from_json("{not json").is_err());
    assert!(Checkpoint::from_json("{\"format_version\": 1}").is_err());
}
