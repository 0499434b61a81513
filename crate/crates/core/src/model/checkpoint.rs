//! Versioned JSON checkpoints with named arrays.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so a save/load cycle reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForecastModel, Mode, ModelConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::NormalizationStats;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_completed: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    /// Statistics for every frame column the model was trained against.
    pub normalization: NormalizationStats,
    pub seed: u64,
    pub training: TrainingMeta,
    pub parameters: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
}

/// A checkpoint turned back into a usable model.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub model: ForecastModel,
    pub stats: NormalizationStats,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model(
        model: &ForecastModel,
        stats: &NormalizationStats,
        input_columns: &[String],
        target_columns: &[String],
        training: TrainingMeta,
    ) -> Self {
        let parameters = model
            .parameters()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name: name.into(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let buffers = model
            .buffers()
            .into_iter()
            .map(|(name, b)| NamedArray {
                name: name.into(),
                shape: vec![b.len()],
                data: b.to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            input_columns: input_columns.to_vec(),
            target_columns: target_columns.to_vec(),
            normalization: stats.clone(),
            seed: model.config().seed,
            training,
            parameters,
            buffers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {v}"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))
    }

    /// Rebuilds the model, checking every array against the embedded config.
    pub fn into_loaded(self) -> Result<LoadedCheckpoint> {
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if self.input_columns.len() != self.config.inputs
            || self.target_columns.len() != self.config.targets
        {
            return Err(Error::Checkpoint(
                "shape mismatch: column lists disagree with config".into(),
            ));
        }
        self.normalization
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut model = ForecastModel::init(self.config.clone(), self.seed)?;
        restore(
            "parameter",
            &self.parameters,
            model
                .parameters_mut()
                .into_iter()
                .map(|(n, t)| (n, t as &mut dyn Slot)),
        )?;
        restore(
            "buffer",
            &self.buffers,
            model
                .buffers_mut()
                .into_iter()
                .map(|(n, b)| (n, b as &mut dyn Slot)),
        )?;
        model.set_epochs_trained(self.training.epochs_completed);
        model.set_mode(Mode::Eval);
        Ok(LoadedCheckpoint {
            model,
            stats: self.normalization,
            input_columns: self.input_columns,
            target_columns: self.target_columns,
            training: self.training,
        })
    }
}

trait Slot {
    fn shape(&self) -> Vec<usize>;
    fn fill(&mut self, data: &[f64]);
}

impl Slot for Tensor {
    fn shape(&self) -> Vec<usize> {
        Tensor::shape(self).to_vec()
    }
    fn fill(&mut self, data: &[f64]) {
        self.data_mut().copy_from_slice(data);
    }
}

impl Slot for Vec<f64> {
    fn shape(&self) -> Vec<usize> {
        vec![self.len()]
    }
    fn fill(&mut self, data: &[f64]) {
        self.copy_from_slice(data);
    }
}

fn restore<'a>(
    kind: &str,
    arrays: &[NamedArray],
    slots: impl Iterator<Item = (&'static str, &'a mut dyn Slot)>,
) -> Result<()> {
    let mut expected = 0;
    for (name, slot) in slots {
        expected += 1;
        let arr = arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing {kind} `{name}`")))?;
        let n: usize = arr.shape.iter().product();
        if arr.shape != slot.shape() || arr.data.len() != n {
            return Err(Error::Checkpoint(format!(
                "shape mismatch in `{name}`: stored {:?} with {} values, model expects {:?}",
                arr.shape,
                arr.data.len(),
                slot.shape()
            )));
        }
        if let Some(v) = arr.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value {v} in `{name}`")));
        }
        slot.fill(&arr.data);
    }
    if arrays.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} {kind} arrays, found {}",
            arrays.len()
        )));
    }
    Ok(())
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, checkpoint).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_loaded()
}
