//! Command implementations behind the `lumos` binary.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numeric failure, 3 I/O
//! failure (including unreadable or corrupt files).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::RngStream;
use crate::checkpoint;
use crate::codec::FormatError;
use crate::data::{self, DataError, Dataset, GraphSet, Inputs, Task};
use crate::extraction::{self, sample_batch, verify_equivalence, EquivalenceReport, ExtractionError};
use crate::graph::ModelSpec;
use crate::layers::{Model, ModelError};
use crate::metrics::MetricsReport;
use crate::train::{self, History, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Format { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } | TrainError::Tensor(_) => CliError::Numeric(e.to_string()),
            TrainError::Data(d) => d.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ExtractionError> for CliError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::Format(_) => CliError::Io(e.to_string()),
            ExtractionError::Tensor(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn format_err(path: &Path, e: FormatError) -> CliError {
    io_err(path, e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { generator: String, n: usize, seed: u64 },
    Csv { path: PathBuf, #[serde(default)] task: Task },
    Tensors { features: PathBuf, targets: PathBuf, #[serde(default)] task: Task },
    Graphs { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving `model.lumc`, `history.csv` and `masks.txt`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Everything one run needs, parsed and validated before any compute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses JSON, reporting the failing field path and line.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Validation(format!(
                "config line {} column {}, at `{}`: {inner}",
                inner.line(),
                inner.column(),
                e.path()
            ))
        })?;
        cfg.train.validate()?;
        crate::graph::ModelGraph::build(&cfg.model).map_err(|e| CliError::Validation(format!("model: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_dataset(source: &DataSource, base: &Path) -> Result<Dataset, CliError> {
    Ok(match source {
        DataSource::Synthetic { generator, n, seed } => data::generate(generator, *seed, *n)?,
        DataSource::Csv { path, task } => data::load_csv(&resolve(base, path), *task)?,
        DataSource::Tensors { features, targets, task } => {
            let x = data::load_tensor(&resolve(base, features))?;
            let mut y = data::load_tensor(&resolve(base, targets))?;
            if y.rank() == 1 {
                let n = y.len();
                y = y.reshape(vec![n, 1]).map_err(|e| CliError::Validation(e.to_string()))?;
            }
            Dataset::new(Inputs::Dense(x), y, *task)?
        }
        DataSource::Graphs { path } => data::load_graphs(&resolve(base, path))?,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    checkpoint::decode(&bytes).map_err(|e| format_err(path, e))
}

pub fn read_compact(path: &Path) -> Result<extraction::CompactModel, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    extraction::deserialize(&bytes).map_err(|e| format_err(path, e))
}

/// Files written by `train`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub masks: PathBuf,
    pub history_data: History,
}

pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<TrainArtifacts, CliError> {
    let (mut cfg, base) = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dir = match (out, &cfg.output.dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => resolve(&base, d),
        (None, None) => base.join("lumos-out"),
    };
    let data = load_dataset(&cfg.data, &base)?;
    let mut model = train::build_model(cfg.model.clone(), &cfg.train)?;
    let history = train::train(&mut model, &data, &cfg.train)?;
    let masks = crate::consistency::propagate_masks(&model.graph, &model.params, &model.snapshots())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let art = TrainArtifacts {
        checkpoint: dir.join("model.lumc"),
        history: dir.join("history.csv"),
        masks: dir.join("masks.txt"),
        history_data: history,
    };
    write(&art.checkpoint, checkpoint::encode(&model))?;
    write(&art.history, art.history_data.to_csv())?;
    write(&art.masks, masks.report())?;
    Ok(art)
}

/// Writes `out` (`.lum`) and its companion `.masks` listing.
pub fn cmd_extract(checkpoint: &Path, out: &Path) -> Result<extraction::Extraction, CliError> {
    let model = read_checkpoint(checkpoint)?;
    let ex = extraction::extract_model(&model)?;
    write(out, extraction::serialize(&ex.compact))?;
    write(&out.with_extension("masks"), ex.masks.report())?;
    Ok(ex)
}

/// Compares the gated checkpoint and the compact file on `samples` random
/// inputs; deviation above `tol` is a numeric failure.
pub fn cmd_verify(
    checkpoint: &Path,
    compact: &Path,
    tol: f64,
    samples: usize,
    seed: u64,
) -> Result<EquivalenceReport, CliError> {
    if !(tol >= 0.0) {
        return Err(CliError::Validation(format!("tolerance must be >= 0, got {tol}")));
    }
    let model = read_checkpoint(checkpoint)?;
    let compact = read_compact(compact)?;
    let mut rng = RngStream::new(seed).fork_named("verify");
    let batch = sample_batch(&model.graph, samples, &mut rng)?;
    let report = verify_equivalence(&model, &compact, &batch, tol)?;
    if !report.passed {
        return Err(CliError::Numeric(format!(
            "max deviation {:e} exceeds tolerance {tol:e} (relative {:e})",
            report.max_abs, report.max_rel
        )));
    }
    Ok(report)
}

pub fn cmd_report(config: &Path, checkpoint: &Path, compact: &Path) -> Result<MetricsReport, CliError> {
    let (cfg, base) = RunConfig::load(config)?;
    let data = load_dataset(&cfg.data, &base)?;
    let model = read_checkpoint(checkpoint)?;
    let compact = read_compact(compact)?;
    Ok(train::build_report(&model, &compact, &data, None)?)
}

/// Writes a generated dataset. `.csv` holds `[N, d]` features plus target,
/// `.json` a graph set, `.lumt` the features with targets in `<stem>.targets.lumt`.
pub fn cmd_gen(kind: &str, seed: u64, n: usize, out: &Path) -> Result<Dataset, CliError> {
    let d = data::generate(kind, seed, n)?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            data::write_csv(out, &d)?
        }
        Some("json") => {
            let set = GraphSet::from_dataset(&d)
                .ok_or_else(|| CliError::Validation(format!("`{kind}` is not a graph dataset; use .csv or .lumt")))?;
            write(out, serde_json::to_vec(&set).expect("graph sets serialize"))?
        }
        Some("lumt") => {
            let Inputs::Dense(x) = &d.inputs else {
                return Err(CliError::Validation("graph datasets are written as .json".into()));
            };
            write(out, data::encode_tensor(x))?;
            write(&targets_path(out), data::encode_tensor(&d.targets))?;
        }
        _ => return Err(CliError::Validation(format!("{}: output must end in .csv, .json or .lumt", out.display()))),
    }
    Ok(d)
}

pub fn targets_path(features: &Path) -> PathBuf {
    features.with_extension("targets.lumt")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model":{"nodes":[{"kind":"input","name":"x","shape":[16]},
        {"kind":"fc","name":"h","units":4},{"kind":"fc","name":"o","units":1}]},
        "data":{"kind":"synthetic","generator":"sparse16","n":50,"seed":1}}"#;

    #[test]
    fn config_errors_name_the_field() {
        RunConfig::parse(MINIMAL).unwrap();
        let unknown = MINIMAL.replace("\"seed\":1}", "\"seed\":1,\"bogus\":2}");
        let e = RunConfig::parse(&unknown).unwrap_err();
        assert!(e.to_string().contains("data"), "{e}");
        let neg = MINIMAL.replace("\"seed\":1}", "\"seed\":1},\"train\":{\"lambda\":-1.0}");
        let e = RunConfig::parse(&neg).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("lambda"), "{e}");
    }
}
