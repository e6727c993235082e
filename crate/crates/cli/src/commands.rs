use std::fs;
use std::path::{Path, PathBuf};

use mvfd::dataset::{generate, load_dataset, save_dataset, split, Class, Manifest, FORMAT_VERSION};
use mvfd::eval::{
    ablate, conv3d_cost_model, count_flops, metrics, time_inference, AblationCase, AblationRow, MetricsReport, Stat,
};
use mvfd::model::{Container, FusionMode, Model, ModelConfig};
use mvfd::trainer::{fit, infer, GateLogRow, HistoryRow, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{config_hash, ExperimentConfig};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATE_FILE: &str = "train_state.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const GATE_LOG_FILE: &str = "gate_log.csv";
pub const CONFIG_ECHO_FILE: &str = "config.json";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv<'a>(header: &str, rows: impl Iterator<Item = String> + 'a) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Writes the merged config next to every output.
fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write(&dir.join(CONFIG_ECHO_FILE), cfg.to_json())
}

fn load_data(dir: &Path) -> Result<(Manifest, Vec<mvfd::dataset::MultiViewSample>)> {
    if !dir.is_dir() {
        return Err(CliError::Missing(dir.to_path_buf()));
    }
    Ok(load_dataset(dir)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub dir: PathBuf,
    pub n_samples: usize,
    pub counts: [usize; 4],
    pub config_hash: String,
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<GenDataSummary> {
    let samples = generate(&cfg.dataset)?;
    let hash = config_hash(&cfg.dataset);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_samples: samples.len(),
        counts: cfg.dataset.counts,
        main_dims: cfg.dataset.main_dims,
        top_dims: cfg.dataset.top_dims,
        noise_level: cfg.dataset.noise_level,
        seed: cfg.dataset.seed,
        config_hash: Some(hash.clone()),
    };
    save_dataset(out, &samples, &manifest)?;
    Ok(GenDataSummary {
        dir: out.to_path_buf(),
        n_samples: samples.len(),
        counts: cfg.dataset.counts,
        config_hash: hash,
    })
}

/// Metadata stored alongside the best parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub split_seed: u64,
    pub split: mvfd::dataset::SplitRatios,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub final_validation: HistoryRow,
    pub freeze_events: usize,
}

pub fn train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<TrainSummary> {
    let (manifest, samples) = load_data(data_dir)?;
    let model_cfg = cfg.train.model_config(&cfg.model);
    check_dims(&model_cfg, &manifest)?;
    let sp = split(&samples, cfg.split, cfg.train.seed)?;
    let r = fit::<f64>(&cfg.model, &cfg.train, &sp)?;

    create_dir(out)?;
    let info = CheckpointInfo {
        split_seed: sp.seed,
        split: cfg.split,
        train: cfg.train.clone(),
        best_epoch: r.best_epoch,
        best_val_accuracy: r.best_val_accuracy,
        config_hash: config_hash(&cfg.experiment()),
    };
    r.best.to_container(&info)?.write(&out.join(CHECKPOINT_FILE))?;
    r.state.to_container(&cfg.train)?.write(&out.join(STATE_FILE))?;
    write(
        &out.join(HISTORY_FILE),
        csv(HistoryRow::CSV_HEADER, r.state.history.iter().map(HistoryRow::to_csv)),
    )?;
    write(
        &out.join(GATE_LOG_FILE),
        csv(GateLogRow::CSV_HEADER, r.state.gate_log.iter().map(GateLogRow::to_csv)),
    )?;
    echo_config(out, cfg)?;

    let final_validation = r
        .state
        .history
        .iter()
        .rev()
        .find(|h| h.split == "validation")
        .cloned()
        .expect("fit always records a validation row");
    Ok(TrainSummary {
        out_dir: out.to_path_buf(),
        epochs: r.state.epoch,
        best_epoch: r.best_epoch,
        best_val_accuracy: r.best_val_accuracy,
        final_validation,
        freeze_events: r.state.gate_log.iter().filter(|g| g.freeze).count(),
    })
}

fn check_dims(model: &ModelConfig, manifest: &Manifest) -> Result<()> {
    let top_matters = model.fusion != FusionMode::SingleView;
    if model.main_dims != manifest.main_dims || (top_matters && model.top_dims != manifest.top_dims) {
        return Err(mvfd::Error::Shape {
            op: "eval",
            detail: format!(
                "checkpoint expects main {}x{} / top {}x{}, dataset has main {}x{} / top {}x{}",
                model.main_dims.height,
                model.main_dims.width,
                model.top_dims.height,
                model.top_dims.width,
                manifest.main_dims.height,
                manifest.main_dims.width,
                manifest.top_dims.height,
                manifest.top_dims.width
            ),
        }
        .into());
    }
    Ok(())
}

/// Scores a checkpoint on the test split it was trained against.
pub fn eval(checkpoint: &Path, data_dir: &Path, out: Option<&Path>) -> Result<MetricsReport> {
    if !checkpoint.is_file() {
        return Err(CliError::Missing(checkpoint.to_path_buf()));
    }
    let c = Container::read(checkpoint)?;
    let model = Model::<f64>::from_container(&c)?;
    let info: CheckpointInfo = serde_json::from_value(c.metadata.clone())
        .map_err(|e| mvfd::Error::Format(format!("{}: {e}", checkpoint.display())))?;
    let (manifest, samples) = load_data(data_dir)?;
    check_dims(model.config(), &manifest)?;
    let sp = split(&samples, info.split, info.split_seed)?;
    let predictions = sp.test.iter().map(|s| infer(&model, s).map(|(c, _)| c)).collect::<mvfd::Result<Vec<Class>>>()?;
    let labels: Vec<Class> = sp.test.iter().map(|s| s.label).collect();
    let report = metrics(&predictions, &labels)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    create_dir(&dir)?;
    write(&dir.join("metrics.csv"), csv(MetricsReport::CSV_HEADER, std::iter::once(report.to_csv())))?;
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&report).map_err(mvfd::Error::from)?)?;
    Ok(report)
}

pub fn ablation(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let rows = ablate(&cfg.experiment(), cfg.eval.n_runs)?;
    create_dir(out)?;
    write(&out.join("ablation.csv"), csv(AblationRow::CSV_HEADER, rows.iter().map(AblationRow::to_csv)))?;
    write(&out.join("ablation.json"), serde_json::to_string_pretty(&rows).map_err(mvfd::Error::from)?)?;
    echo_config(out, cfg)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub macs: u64,
    /// Seconds per sample; absent for the analytic-only 3-D row.
    pub time: Option<Stat>,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "model,macs,time_mean_s,time_std_s";

    pub fn to_csv(&self) -> String {
        let mean = self.time.as_ref().map(|t| t.mean.to_string()).unwrap_or_default();
        let std = self.time.as_ref().and_then(|t| t.std).map(|s| s.to_string()).unwrap_or_default();
        format!("{},{},{mean},{std}", self.model, self.macs)
    }
}

/// MAC counts for single-view, the configured multi-view model and a 3-D
/// convolutional model at matched volume, plus per-sample timing for the
/// first two. Only `macs` is reproducible; timing is informational.
pub fn bench(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<BenchRow>> {
    let single = ModelConfig { fusion: FusionMode::SingleView, ..cfg.model.clone() };
    let multi = cfg.model.clone();
    let data = generate(&mvfd::dataset::GenerateConfig { counts: [4, 4, 4, 4], ..cfg.dataset.clone() })?;
    let mut rows = Vec::new();
    for (name, mc) in [("single_view", single), ("multi_view", multi)] {
        let model = Model::<f64>::init(mc.clone(), cfg.train.seed)?;
        let timing = time_inference(&model, &data, cfg.eval.bench_trials)?;
        rows.push(BenchRow { model: name.into(), macs: count_flops(&mc)?.total, time: Some(timing.per_sample) });
    }
    let volume = cfg.volume();
    rows.push(BenchRow {
        model: format!("conv3d_{}x{}x{}", volume[0], volume[1], volume[2]),
        macs: conv3d_cost_model(&cfg.model, volume)?.total,
        time: None,
    });
    create_dir(out)?;
    write(&out.join("bench.csv"), csv(BenchRow::CSV_HEADER, rows.iter().map(BenchRow::to_csv)))?;
    write(
        &out.join("bench.json"),
        serde_json::to_string_pretty(&json!({ "warmup_trials": mvfd::eval::WARMUP_TRIALS, "rows": rows }))
            .map_err(mvfd::Error::from)?,
    )?;
    echo_config(out, cfg)?;
    Ok(rows)
}

pub fn parse_case(s: &str) -> Result<AblationCase> {
    s.parse().map_err(|e: mvfd::Error| CliError::Config(e.to_string()))
}
