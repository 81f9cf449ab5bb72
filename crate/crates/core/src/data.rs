//! Datasets: in-memory form, file formats and synthetic generators.
//!
//! Files:
//!
//! - CSV with a header row; every cell numeric; the last column is the target
//! - `.lumt` tensors: `"LUMT"`, dtype `u8` (0 = f64), `ndim u8`, extents
//!   `u32`, row-major little-endian payload, CRC32
//! - graph sets as JSON ([`GraphSet`])

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{RngStream, Tensor, TensorError};
use crate::batch::{Batch, BatchError, Graph};
use crate::codec::{ByteReader, ByteWriter, FormatError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("{path}: {source}")]
    Format { path: String, source: FormatError },
    #[error("dataset: {0}")]
    Invalid(String),
    #[error("unknown generator `{0}` (expected sparse16, image or graph)")]
    UnknownGenerator(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }

    fn malformed(path: &Path, detail: impl Into<String>) -> Self {
        DataError::Malformed { path: path.display().to_string(), detail: detail.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Task {
    #[default]
    Regression,
    Classification { classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    /// `[N, ...sample shape]`.
    Dense(Tensor),
    Graphs { graphs: Vec<Graph>, node_features: usize, edge_features: usize },
}

/// Samples with targets. Regression targets are `[N, k]`; classification
/// targets are `[N, 1]` integer class ids below the class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub targets: Tensor,
    pub task: Task,
}

impl Dataset {
    pub fn new(inputs: Inputs, targets: Tensor, task: Task) -> Result<Self, DataError> {
        let n = match &inputs {
            Inputs::Dense(x) => *x.shape().first().ok_or_else(|| DataError::Invalid("features need a sample axis".into()))?,
            Inputs::Graphs { graphs, node_features, edge_features } => {
                for (i, g) in graphs.iter().enumerate() {
                    g.validate(i, *node_features, *edge_features)?;
                }
                graphs.len()
            }
        };
        if targets.rank() != 2 || targets.shape()[0] != n {
            return Err(DataError::Invalid(format!("{n} samples but targets of shape {:?}", targets.shape())));
        }
        if let Task::Classification { classes } = task {
            if targets.shape()[1] != 1 {
                return Err(DataError::Invalid("classification targets are one class id per row".into()));
            }
            if let Some(bad) = targets.data().iter().find(|&&v| v.fract() != 0.0 || v < 0.0 || v >= classes as f64) {
                return Err(DataError::Invalid(format!("class id {bad} is not an integer below {classes}")));
            }
        }
        Ok(Self { inputs, targets, task })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model batch and target rows for the given samples.
    pub fn batch(&self, index: &[usize]) -> Result<(Batch, Tensor), DataError> {
        let batch = match &self.inputs {
            Inputs::Dense(x) => Batch::dense(x.select(0, index)?),
            Inputs::Graphs { graphs, node_features, edge_features } => {
                let picked: Vec<&Graph> = index.iter().map(|&i| &graphs[i]).collect();
                Batch::from_graphs(&picked, *node_features, *edge_features)?
            }
        };
        Ok((batch, self.targets.select(0, index)?))
    }

    pub fn full(&self) -> Result<(Batch, Tensor), DataError> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Column `j` of a `[N, d]` dense feature matrix.
    pub fn feature_column(&self, j: usize) -> Option<Vec<f64>> {
        match &self.inputs {
            Inputs::Dense(x) if x.rank() == 2 && j < x.shape()[1] => {
                let d = x.shape()[1];
                Some(x.data().iter().skip(j).step_by(d).copied().collect())
            }
            _ => None,
        }
    }

    /// Class ids of a classification dataset.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.data().iter().map(|&v| v as usize).collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Loads a CSV whose last column is the target.
pub fn load_csv(path: &Path, task: Task) -> Result<Dataset, DataError> {
    let bytes = read_file(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes.as_slice());
    let width = reader.headers().map_err(|e| DataError::malformed(path, e.to_string()))?.len();
    if width < 2 {
        return Err(DataError::malformed(path, "header needs at least one feature and a target column"));
    }
    let (mut x, mut y) = (vec![], vec![]);
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::malformed(path, e.to_string()))?;
        if rec.len() != width {
            return Err(DataError::malformed(path, format!("row {} has {} cells, header has {width}", row + 1, rec.len())));
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| DataError::malformed(path, format!("row {} column {}: `{cell}` is not a number", row + 1, col + 1)))?;
            if col + 1 == width {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len();
    Dataset::new(Inputs::Dense(Tensor::new(vec![n, width - 1], x)?), Tensor::new(vec![n, 1], y)?, task)
}

/// Writes features and a single target column as CSV.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<(), DataError> {
    let Inputs::Dense(x) = &data.inputs else {
        return Err(DataError::Invalid("only dense datasets have a CSV form".into()));
    };
    if x.rank() != 2 || data.targets.shape()[1] != 1 {
        return Err(DataError::Invalid("CSV needs [N, d] features and one target column".into()));
    }
    let d = x.shape()[1];
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let csv_err = |e: csv::Error| DataError::malformed(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = x.data()[i * d..(i + 1) * d].iter().map(|v| format!("{v:?}")).collect();
        row.push(format!("{:?}", data.targets.data()[i]));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DataError::malformed(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

const TENSOR_MAGIC: &[u8; 4] = b"LUMT";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut w = ByteWriter::new(TENSOR_MAGIC);
    w.u8(0);
    w.tensor(t);
    w.finish()
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut r = ByteReader::open(bytes, TENSOR_MAGIC)?;
    match r.u8()? {
        0 => {}
        d => return Err(FormatError::Invalid(format!("dtype {d} (only 0 = f64 is supported)"))),
    }
    let t = r.tensor()?;
    r.expect_end()?;
    Ok(t)
}

pub fn load_tensor(path: &Path) -> Result<Tensor, DataError> {
    decode_tensor(&read_file(path)?).map_err(|source| DataError::Format { path: path.display().to_string(), source })
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), DataError> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| DataError::io(path, e))
}

/// JSON form of a graph dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSet {
    pub node_features: usize,
    pub edge_features: usize,
    pub graphs: Vec<Graph>,
    /// One target row per graph.
    pub targets: Vec<Vec<f64>>,
    #[serde(default)]
    pub task: Task,
}

impl GraphSet {
    pub fn into_dataset(self) -> Result<Dataset, DataError> {
        let width = self.targets.first().map(Vec::len).unwrap_or(1);
        let targets = if self.targets.is_empty() { Tensor::zeros(vec![0, 1]) } else { Tensor::from_rows(&self.targets)? };
        if targets.shape()[1] != width {
            return Err(DataError::Invalid("target rows differ in width".into()));
        }
        let inputs = Inputs::Graphs { graphs: self.graphs, node_features: self.node_features, edge_features: self.edge_features };
        Dataset::new(inputs, targets, self.task)
    }

    pub fn from_dataset(data: &Dataset) -> Option<Self> {
        let Inputs::Graphs { graphs, node_features, edge_features } = &data.inputs else { return None };
        let k = data.targets.shape()[1];
        Some(Self {
            node_features: *node_features,
            edge_features: *edge_features,
            graphs: graphs.clone(),
            targets: data.targets.data().chunks(k.max(1)).map(<[f64]>::to_vec).collect(),
            task: data.task,
        })
    }
}

pub fn load_graphs(path: &Path) -> Result<Dataset, DataError> {
    let bytes = read_file(path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let set: GraphSet = serde_path_to_error::deserialize(de).map_err(|e| DataError::malformed(path, e.to_string()))?;
    set.into_dataset()
}

/// Informative features of the sparse regression task.
pub const SPARSE16_INFORMATIVE: [usize; 3] = [3, 7, 12];

/// `y = 2·x3 − x7 + 0.5·x12 + 0.1·noise` with 16 standard normal features.
pub fn sparse16(seed: u64, n: usize) -> Result<Dataset, DataError> {
    let mut rng = RngStream::new(seed).fork_named("sparse16");
    let mut x = Vec::with_capacity(n * 16);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..16).map(|_| rng.normal(0.0, 1.0)).collect();
        y.push(2.0 * row[3] - row[7] + 0.5 * row[12] + 0.1 * rng.normal(0.0, 1.0));
        x.extend(row);
    }
    Dataset::new(Inputs::Dense(Tensor::new(vec![n, 16], x)?), Tensor::new(vec![n, 1], y)?, Task::Regression)
}

/// 1×6×6 images holding one Gaussian blob over noise; the label says whether
/// the blob centre lies in the left (0) or right (1) half.
pub fn image(seed: u64, n: usize) -> Result<Dataset, DataError> {
    let mut rng = RngStream::new(seed).fork_named("image");
    let mut x = Vec::with_capacity(n * 36);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.below(2);
        let cx = if label == 0 { rng.uniform(0.0, 2.5) } else { rng.uniform(3.5, 6.0) } - 0.5;
        let cy = rng.uniform(0.0, 6.0) - 0.5;
        for r in 0..6 {
            for c in 0..6 {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                x.push((-d2 / 2.0).exp() + 0.05 * rng.normal(0.0, 1.0));
            }
        }
        y.push(label as f64);
    }
    Dataset::new(
        Inputs::Dense(Tensor::new(vec![n, 1, 6, 6], x)?),
        Tensor::new(vec![n, 1], y)?,
        Task::Classification { classes: 2 },
    )
}

/// Random graphs of 4 to 8 nodes with 3 node and 2 edge features, both edge
/// directions present. Label 1 when the degree-weighted sum of node feature 0
/// is positive.
pub fn graphs(seed: u64, n: usize) -> Result<Dataset, DataError> {
    let mut rng = RngStream::new(seed).fork_named("graph");
    let mut out = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let v = 4 + rng.below(5);
        let nodes: Vec<Vec<f64>> = (0..v).map(|_| (0..3).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        let mut edges = vec![];
        let mut edge_features = vec![];
        for a in 0..v {
            for b in a + 1..v {
                if rng.unit_open() < 0.35 {
                    let f: Vec<f64> = (0..2).map(|_| rng.uniform(0.0, 1.0)).collect();
                    edges.push((a, b));
                    edges.push((b, a));
                    edge_features.push(f.clone());
                    edge_features.push(f);
                }
            }
        }
        let mut score = 0.0;
        for (i, row) in nodes.iter().enumerate() {
            let degree = edges.iter().filter(|e| e.1 == i).count() as f64;
            score += (1.0 + degree) * row[0];
        }
        y.push(if score > 0.0 { 1.0 } else { 0.0 });
        out.push(Graph { nodes, edges, edge_features, root: 0 });
    }
    Dataset::new(
        Inputs::Graphs { graphs: out, node_features: 3, edge_features: 2 },
        Tensor::new(vec![n, 1], y)?,
        Task::Classification { classes: 2 },
    )
}

pub fn generate(kind: &str, seed: u64, n: usize) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::Invalid("need at least one sample".into()));
    }
    match kind {
        "sparse16" => sparse16(seed, n),
        "image" => image(seed, n),
        "graph" => graphs(seed, n),
        other => Err(DataError::UnknownGenerator(other.into())),
    }
}
