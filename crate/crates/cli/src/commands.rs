//! The four subcommands. Each writes only inside its output directory and
//! rewrites the same bytes when run again with the same inputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aqf::analysis::{compute_metrics, permutation_importance, pollutant_label, Series};
use aqf::ingest::{
    merge_tables, parse_source_csv, table1_schema, validate_schema, RawTable, Source, ValidationReport,
    REPORT_ORDER,
};
use aqf::model::{load_checkpoint, save_checkpoint, Checkpoint, ForecastModel, TrainingMeta};
use aqf::parallel::Execution;
use aqf::preprocess::{prepare, prepare_with, Prepared};
use aqf::synth::{generate, write_fixture, SynthConfig};
use aqf::training::train;
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const PROCESSED_CSV: &str = "processed.csv";
pub const NORMALIZATION_CSV: &str = "normalization.csv";
pub const VALIDATION_JSON: &str = "validation.json";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const TRAIN_REPORT_CSV: &str = "train_report.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const IMPORTANCE_CSV: &str = "importance.csv";
pub const IMPORTANCE_JSON: &str = "importance.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";

fn write_file<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let file = File::create(path)
        .map_err(|e| CliError::output(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()
        .map_err(|e| CliError::output(format!("writing {}: {e}", path.display())))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.data.out_dir.as_path();
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::output(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Files written by `synth`.
#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub noaa: PathBuf,
    pub epa: PathBuf,
    pub config: PathBuf,
}

/// Writes a synthetic NOAA/EPA pair plus a config pointing at them.
pub fn cmd_synth(cfg: &SynthConfig, dir: &Path) -> Result<SynthOutputs, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = generate(cfg).map_err(CliError::data)?;
    let (noaa, epa) = write_fixture(&data, dir).map_err(CliError::output)?;
    let config = dir.join("config.toml");
    let text = RunConfig::template("noaa.csv", "epa.csv", &[aqf::ingest::O3, aqf::ingest::CO]);
    let header = format!(
        "# synthetic fixture: {} days from {}, {:?} dependence, seed {}\n",
        cfg.days, cfg.start, cfg.dependence, cfg.seed
    );
    write_file(&config, |w| {
        w.write_all(header.as_bytes())
            .and_then(|_| w.write_all(text.as_bytes()))
            .map_err(CliError::output)
    })?;
    info!("wrote {} and {}", noaa.display(), epa.display());
    Ok(SynthOutputs { noaa, epa, config })
}

/// Validation of one source export.
#[derive(Debug, Clone, Serialize)]
pub struct SourceValidation {
    pub file: PathBuf,
    pub rows: usize,
    #[serde(flatten)]
    pub report: ValidationReport,
}

/// Parses and merges both exports, failing on columns the run needs.
/// Each export is validated against its own part of the schema.
pub fn load_raw(cfg: &RunConfig) -> Result<(RawTable, Vec<SourceValidation>), CliError> {
    let schema = table1_schema();
    let mut tables = Vec::new();
    let mut checks = Vec::new();
    for (path, source) in [(&cfg.data.noaa, Source::Noaa), (&cfg.data.epa, Source::Epa)] {
        let part: Vec<_> = schema.iter().filter(|v| v.source == source).cloned().collect();
        let table = parse_source_csv(path, &part).map_err(CliError::data)?;
        for col in cfg.frame_columns() {
            let wanted = part.iter().any(|v| v.name == col);
            if wanted && table.column(col).is_none() {
                return Err(CliError::Data(format!(
                    "{}: missing column `{col}`",
                    path.display()
                )));
            }
        }
        let report = validate_schema(&table, &part);
        for issue in report.issues() {
            warn!("{}: {issue}", path.display());
        }
        checks.push(SourceValidation {
            file: path.clone(),
            rows: table.len(),
            report,
        });
        tables.push(table);
    }
    let raw = merge_tables(&tables[0], &tables[1]).map_err(CliError::data)?;
    Ok((raw, checks))
}

fn prepared(cfg: &RunConfig, raw: &RawTable) -> Result<Prepared, CliError> {
    prepare(raw, &cfg.frame_columns(), &cfg.prep_config()).map_err(CliError::data)
}

#[derive(Serialize)]
struct ValidationOut<'a> {
    clean: bool,
    days: usize,
    train_days: usize,
    test_days: usize,
    train_windows: usize,
    test_windows: usize,
    noaa: &'a SourceValidation,
    epa: &'a SourceValidation,
}

/// Files written by `preprocess`.
#[derive(Debug, Clone)]
pub struct PreprocessOutputs {
    pub processed: PathBuf,
    pub normalization: PathBuf,
    pub validation: PathBuf,
}

/// Gap-free daily frame in physical units, training statistics and a
/// validation summary.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessOutputs, CliError> {
    let (raw, checks) = load_raw(cfg)?;
    let p = prepared(cfg, &raw)?;
    let dir = out_dir(cfg)?;
    let out = PreprocessOutputs {
        processed: dir.join(PROCESSED_CSV),
        normalization: dir.join(NORMALIZATION_CSV),
        validation: dir.join(VALIDATION_JSON),
    };
    write_file(&out.processed, |w| p.frame.write_csv(w).map_err(CliError::output))?;
    write_file(&out.normalization, |w| p.stats.write_text(w).map_err(CliError::output))?;
    let summary = ValidationOut {
        clean: checks.iter().all(|c| c.report.is_clean()),
        days: p.frame.n_days(),
        train_days: p.train.n_days(),
        test_days: p.test.n_days(),
        train_windows: p.train_windows.len(),
        test_windows: p.test_windows.len(),
        noaa: &checks[0],
        epa: &checks[1],
    };
    write_file(&out.validation, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(CliError::output)?;
        writeln!(w).map_err(CliError::output)
    })?;
    info!(
        "{} days ({} train, {} test), {} training windows",
        p.frame.n_days(),
        p.train.n_days(),
        p.test.n_days(),
        p.train_windows.len()
    );
    Ok(out)
}

/// Files written by `train`.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub epoch_losses: Vec<f64>,
}

/// Runs the pipeline from the raw exports and trains a fresh model.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs, CliError> {
    let (raw, _) = load_raw(cfg)?;
    let p = prepared(cfg, &raw)?;
    let mut model = ForecastModel::init(cfg.model_config(), cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    info!(
        "training {} parameters on {} windows for {} epochs",
        model.parameter_count(),
        p.train_windows.len(),
        cfg.train.epochs
    );
    let started = Instant::now();
    let report = train(&mut model, &p.train_windows, &cfg.train_config()).map_err(CliError::data)?;
    info!(
        "final loss {:.6} after {:.1?}",
        report.final_loss().unwrap_or(f64::NAN),
        started.elapsed()
    );

    let dir = out_dir(cfg)?;
    let checkpoint = dir.join(CHECKPOINT_JSON);
    let ck = Checkpoint::from_model(
        &model,
        &p.stats,
        &cfg.input_columns(),
        &cfg.data.targets,
        TrainingMeta {
            epochs_completed: model.epochs_trained(),
            final_loss: report.final_loss(),
        },
    );
    save_checkpoint(&ck, &checkpoint).map_err(CliError::output)?;
    let report_path = dir.join(TRAIN_REPORT_CSV);
    write_file(&report_path, |w| report.write_csv(w).map_err(CliError::output))?;
    Ok(TrainOutputs {
        checkpoint,
        report: report_path,
        epoch_losses: report.epoch_losses,
    })
}

/// Files written by `report`.
#[derive(Debug, Clone)]
pub struct ReportOutputs {
    pub metrics_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub importance_csv: PathBuf,
    pub importance_json: PathBuf,
    pub predictions: PathBuf,
}

fn check_compatible(cfg: &RunConfig, model: &ForecastModel, inputs: &[String], targets: &[String]) -> Result<(), CliError> {
    if targets != cfg.data.targets.as_slice() {
        return Err(CliError::Artifact(format!(
            "checkpoint predicts {targets:?} but config lists {:?}",
            cfg.data.targets
        )));
    }
    if inputs != cfg.input_columns().as_slice() {
        return Err(CliError::Artifact(format!("checkpoint inputs {inputs:?} differ from the schema")));
    }
    let mut want = cfg.model_config();
    want.seed = model.config().seed;
    if *model.config() != want {
        return Err(CliError::Artifact(format!(
            "checkpoint model {:?} does not match config {:?}",
            model.config(),
            want
        )));
    }
    Ok(())
}

/// Scores the test partition: metrics in physical units, permutation
/// importance and the per-day predicted-vs-actual series.
pub fn cmd_report(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ReportOutputs, CliError> {
    let ck_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.data.out_dir.join(CHECKPOINT_JSON));
    let loaded = load_checkpoint(&ck_path).map_err(CliError::artifact)?;
    check_compatible(cfg, &loaded.model, &loaded.input_columns, &loaded.target_columns)?;

    let (raw, _) = load_raw(cfg)?;
    let mut prep = cfg.prep_config();
    // overlapping windows cover every scored day
    prep.stride = prep.stride.min(prep.window);
    let stats = loaded
        .stats
        .select(&cfg.frame_columns().iter().map(|c| c.to_string()).collect::<Vec<_>>())
        .map_err(CliError::artifact)?;
    let p = prepare_with(&raw, &cfg.frame_columns(), stats, &prep).map_err(CliError::data)?;
    let model = &loaded.model;
    let windows = &p.test_windows;
    let (x, _) = windows.all();
    let pred = model
        .predict_batched(&x, 8, Execution::default())
        .map_err(CliError::data)?;

    let (t, n_p) = (windows.window, windows.n_targets());
    let days = windows.start_days.last().map_or(0, |s| s + t);
    let mut sum = vec![0.0; days * n_p];
    let mut count = vec![0usize; days];
    for (i, &start) in windows.start_days.iter().enumerate() {
        for step in 0..t {
            count[start + step] += 1;
            for k in 0..n_p {
                sum[(start + step) * n_p + k] += pred.data()[(i * t + step) * n_p + k];
            }
        }
    }
    let mut predicted = Vec::with_capacity(n_p);
    let mut actual = Vec::with_capacity(n_p);
    for (k, col) in cfg.data.targets.iter().enumerate() {
        let si = p.stats.index(col).map_err(CliError::artifact)?;
        let ti = p.test.column_index(col).map_err(CliError::data)?;
        let values: Vec<f64> = (0..days)
            .map(|d| sum[d * n_p + k] / count[d] as f64 * p.stats.scale(si) + p.stats.mean[si])
            .collect();
        let truth: Vec<f64> = (0..days).map(|d| p.test.get(d, ti)).collect();
        let start = p.test.start_date();
        predicted.push(Series { pollutant: col.clone(), start, values });
        actual.push(Series { pollutant: col.clone(), start, values: truth });
    }
    let metrics = compute_metrics(&predicted, &actual).map_err(CliError::data)?;
    let importance = permutation_importance(model, windows, cfg.seed, cfg.report.repeats, Execution::default())
        .map_err(CliError::data)?;

    let dir = out_dir(cfg)?;
    let out = ReportOutputs {
        metrics_csv: dir.join(METRICS_CSV),
        metrics_json: dir.join(METRICS_JSON),
        importance_csv: dir.join(IMPORTANCE_CSV),
        importance_json: dir.join(IMPORTANCE_JSON),
        predictions: dir.join(PREDICTIONS_CSV),
    };
    write_file(&out.metrics_csv, |w| metrics.write_csv(w).map_err(CliError::output))?;
    write_file(&out.metrics_json, |w| metrics.write_json(w).map_err(CliError::output))?;
    write_file(&out.importance_csv, |w| importance.write_csv(w).map_err(CliError::output))?;
    write_file(&out.importance_json, |w| importance.write_json(w).map_err(CliError::output))?;
    write_file(&out.predictions, |w| {
        writeln!(w, "date,pollutant,actual,predicted").map_err(CliError::output)?;
        for col in REPORT_ORDER {
            let Some(k) = cfg.data.targets.iter().position(|c| c == col) else {
                continue;
            };
            for d in 0..days {
                writeln!(
                    w,
                    "{},{},{},{}",
                    p.test.date(d),
                    pollutant_label(col),
                    actual[k].values[d],
                    predicted[k].values[d]
                )
                .map_err(CliError::output)?;
            }
        }
        Ok(())
    })?;
    for row in &metrics.rows {
        if let Some(m) = &row.metrics {
            info!(
                "{}: MAE {:.4} RMSE {:.4} MSE {:.4} MAPE {:.2}%",
                row.pollutant, m.mae, m.rmse, m.mse, m.mape_pct
            );
        }
    }
    Ok(out)
}
