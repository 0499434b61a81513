use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::parallel::{map_indexed, Execution};
use crate::preprocess::WindowedDataset;
use crate::rng;

pub const DEFAULT_REPEATS: usize = 10;

/// Anything that maps `[B, T, F]` inputs to `[B, T, P]` outputs.
pub trait Forecaster: Sync {
    fn predict(&self, x: &Tensor) -> Result<Tensor>;

    /// False for a model that has never been trained.
    fn is_ready(&self) -> bool {
        true
    }
}

impl Forecaster for ForecastModel {
    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_batched(x, 8, Execution::Sequential)
    }

    fn is_ready(&self) -> bool {
        self.epochs_trained() > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean MAE over the shuffled repeats.
    pub shuffled_mae: f64,
    /// Mean of `repeat_mae - base_mae`. Positive means the feature matters.
    pub importance: f64,
    pub repeat_maes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    /// MAE on unmodified inputs, in normalized units.
    pub base_mae: f64,
    pub repeats: usize,
    pub seed: u64,
    pub features: Vec<FeatureImportance>,
}

fn mae(pred: &Tensor, truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "model produced {} values for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let s: f64 = pred.data().iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / truth.len() as f64)
}

/// Shuffles each input feature across time within every window and reports
/// the rise in MAE.
pub fn permutation_importance<M: Forecaster>(
    model: &M,
    data: &WindowedDataset,
    seed: u64,
    repeats: usize,
    exec: Execution,
) -> Result<ImportanceReport> {
    permutation_importance_with(model, data, seed, repeats, exec, |rng, order| order.shuffle(rng))
}

/// As [`permutation_importance`] with a caller-supplied reordering of the
/// time indices of one window.
pub fn permutation_importance_with<M, P>(
    model: &M,
    data: &WindowedDataset,
    seed: u64,
    repeats: usize,
    exec: Execution,
    permute: P,
) -> Result<ImportanceReport>
where
    M: Forecaster,
    P: Fn(&mut ChaCha8Rng, &mut [usize]) + Sync,
{
    if !model.is_ready() {
        return Err(Error::InvalidArgument("model has not been trained".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("importance dataset is empty".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let (x, _) = data.all();
    let base_mae = mae(&model.predict(&x)?, &data.targets)?;
    let (b, t, f) = (data.len(), data.window, data.n_inputs());

    let runs = map_indexed(exec, f * repeats, |job| -> Result<f64> {
        let (feat, rep) = (job / repeats, job % repeats);
        let mut r = rng::stream(seed, &[rng::PERMUTE, feat as u64, rep as u64]);
        let mut shuffled = x.data().to_vec();
        let mut order: Vec<usize> = (0..t).collect();
        for s in 0..b {
            order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
            permute(&mut r, &mut order);
            let src = data.input_sample(s);
            let dst = &mut shuffled[s * t * f..(s + 1) * t * f];
            for (step, &from) in order.iter().enumerate() {
                dst[step * f + feat] = src[from * f + feat];
            }
        }
        let xs = Tensor::new(x.shape().to_vec(), shuffled)?;
        mae(&model.predict(&xs)?, &data.targets)
    });
    let runs = runs.into_iter().collect::<Result<Vec<f64>>>()?;

    let features = data
        .input_columns
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let repeat_maes = runs[i * repeats..(i + 1) * repeats].to_vec();
            let n = repeats as f64;
            let shuffled_mae = repeat_maes.iter().sum::<f64>() / n;
            // mean of per-repeat deltas, so unchanged repeats give exactly 0
            let importance = repeat_maes.iter().map(|m| m - base_mae).sum::<f64>() / n;
            FeatureImportance {
                feature: name.clone(),
                shuffled_mae,
                importance,
                repeat_maes,
            }
        })
        .collect();
    Ok(ImportanceReport {
        base_mae,
        repeats,
        seed,
        features,
    })
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }

    /// `feature,base_mae,shuffled_mae,importance,repeat_maes`, the last
    /// column holding the per-repeat values joined by `;`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("importance report", e);
        writeln!(w, "feature,base_mae,shuffled_mae,importance,repeat_maes").map_err(io)?;
        for f in &self.features {
            let reps: Vec<String> = f.repeat_maes.iter().map(f64::to_string).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                f.feature,
                self.base_mae,
                f.shuffled_mae,
                f.importance,
                reps.join(";")
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::InvalidArgument(format!("serializing importance: {e}")))?;
        writeln!(w).map_err(|e| Error::io("importance report", e))
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    /// y_t = Σ_f w_f x_{t,f} + 0.5 x_{t-1,0}. Only the lag term sees time order.
    struct Lagged(Vec<f64>);

    impl Forecaster for Lagged {
        fn predict(&self, x: &Tensor) -> Result<Tensor> {
            let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let d = x.data();
            let mut out = vec![0.0; b * t];
            for s in 0..b {
                for step in 0..t {
                    let row = &d[(s * t + step) * f..(s * t + step + 1) * f];
                    let mut y: f64 = row.iter().zip(&self.0).map(|(a, w)| a * w).sum();
                    if step > 0 {
                        y += 0.5 * d[(s * t + step - 1) * f];
                    }
                    out[s * t + step] = y;
                }
            }
            Tensor::new(vec![b, t, 1], out)
        }
    }

    fn dataset(model: &Lagged, samples: usize, t: usize, seed: u64) -> WindowedDataset {
        let f = model.0.len();
        let mut r = rng::stream(seed, &[]);
        let inputs: Vec<f64> = (0..samples * t * f).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![samples, t, f], inputs.clone()).unwrap();
        let targets = model.predict(&x).unwrap().into_data();
        WindowedDataset {
            window: t,
            stride: t,
            input_columns: (0..f).map(|i| format!("f{i}")).collect(),
            target_columns: vec!["y".into()],
            start_days: (0..samples).map(|i| i * t).collect(),
            inputs,
            targets,
        }
    }

    #[test]
    fn identity_permutation_is_zero() {
        let m = Lagged(vec![1.0, -0.5, 0.2]);
        let mut data = dataset(&m, 4, 10, 1);
        data.targets.iter_mut().for_each(|v| *v += 0.1);
        let r = permutation_importance_with(&m, &data, 3, 4, Execution::Parallel, |_, _| {}).unwrap();
        assert!(r.base_mae > 0.0);
        for f in &r.features {
            assert_eq!(f.importance, 0.0);
            assert!(f.repeat_maes.iter().all(|&v| v == r.base_mae));
        }
    }

    #[test]
    fn only_the_lagged_feature_matters() {
        let m = Lagged(vec![1.0, 0.0, 0.0]);
        let data = dataset(&m, 6, 20, 2);
        let r = permutation_importance(&m, &data, 5, DEFAULT_REPEATS, Execution::Parallel).unwrap();
        assert_eq!(r.base_mae, 0.0);
        let first = r.features[0].importance;
        assert!(first > 0.1);
        for f in &r.features[1..] {
            assert_eq!(f.importance, 0.0);
        }
        assert_eq!(r.features[0].repeat_maes.len(), DEFAULT_REPEATS);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let m = Lagged(vec![0.7, -0.4, 0.3, 0.1]);
        let data = dataset(&m, 5, 12, 3);
        let a = permutation_importance(&m, &data, 9, 3, Execution::Parallel).unwrap();
        let b = permutation_importance(&m, &data, 9, 3, Execution::Sequential).unwrap();
        let c = permutation_importance(&m, &data, 10, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn truth_is_untouched() {
        let m = Lagged(vec![1.0, 1.0]);
        let data = dataset(&m, 3, 8, 4);
        let before = data.clone();
        permutation_importance(&m, &data, 0, 2, Execution::Sequential).unwrap();
        assert_eq!(data, before);
    }

    #[test]
    fn rejects_untrained_model_and_empty_data() {
        let cfg = crate::model::ModelConfig {
            inputs: 2,
            window: 8,
            hidden: 4,
            targets: 1,
            attention_dim: 2,
            ..Default::default()
        };
        let model = ForecastModel::init(cfg, 0).unwrap();
        let lag = Lagged(vec![1.0, 1.0]);
        let data = dataset(&lag, 2, 8, 5);
        let err = permutation_importance(&model, &data, 0, 2, Execution::Sequential).unwrap_err();
        assert!(err.to_string().contains("not been trained"));
        let mut empty = data.clone();
        empty.start_days.clear();
        empty.inputs.clear();
        empty.targets.clear();
        assert!(permutation_importance(&lag, &empty, 0, 2, Execution::Sequential).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = ImportanceReport {
            base_mae: 0.5,
            repeats: 2,
            seed: 0,
            features: vec![FeatureImportance {
                feature: "a".into(),
                shuffled_mae: 0.75,
                importance: 0.25,
                repeat_maes: vec![0.5, 1.0],
            }],
        };
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "feature,base_mae,shuffled_mae,importance,repeat_maes\na,0.5,0.75,0.25,0.5;1\n"
        );
    }
}
