//! Mini-batch training of `L_A + λ·L_C` over weights and gate log-alphas.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{RngStream, Tape, Tensor, TensorError, Var};
use crate::batch::Batch;
use crate::data::{DataError, Dataset, Inputs, Task};
use crate::extraction::CompactModel;
use crate::gate::{total_loss, GateConfig, GateError};
use crate::graph::{Layout, ModelSpec};
use crate::layers::{Gating, Model, ModelError};
use crate::metrics::{accuracy, argmax_rows, mse, pearson, r2, CostModel, FeatureStat, GraphSize, MetricsReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("loss diverged (non-finite) at step {step}, epoch {epoch}")]
    Divergence { step: usize, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        let nf = |t: &TensorError| matches!(t, TensorError::NonFinite { .. });
        match self {
            TrainError::Tensor(t) | TrainError::Model(ModelError::Tensor(t)) => nf(t),
            TrainError::Gate(GateError::Tensor(t)) | TrainError::Model(ModelError::Gate(GateError::Tensor(t))) => nf(t),
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Learning rate of the gate log-alphas; the weight rate when absent.
    pub gate_lr: Option<f64>,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Applied when the model is built.
    pub gate: GateConfig,
    pub loss: LossKind,
    /// `false` trains the plain network with gates removed.
    pub gated: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            gate_lr: None,
            lambda: 1e-4,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            gate: GateConfig::default(),
            loss: LossKind::Mse,
            gated: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if let Some(g) = self.gate_lr {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gate_lr must be finite and > 0, got {g}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        self.gate.validate()?;
        Ok(())
    }

    pub fn gate_lr(&self) -> f64 {
        self.gate_lr.unwrap_or(self.lr)
    }
}

/// Builds `spec` with the config's gate settings and seed.
pub fn build_model(spec: ModelSpec, config: &TrainConfig) -> Result<Model, TrainError> {
    config.validate()?;
    Ok(Model::new(spec, config.gate, config.seed)?)
}

pub fn sgd_step(param: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    if state.m.len() != param.len() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
        state.t = 0;
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..param.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        param[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// Per-tensor optimizer state keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub state: BTreeMap<String, AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, state: BTreeMap::new() }
    }

    pub fn step(&mut self, key: &str, param: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(param, grad, lr),
            OptimizerKind::Adam => adam_step(param, grad, self.state.entry(key.to_string()).or_default(), lr),
        }
    }
}

/// Accuracy loss on a recorded output.
pub fn accuracy_loss(tape: &mut Tape, out: Var, targets: &Tensor, kind: LossKind) -> Result<Var, TensorError> {
    match kind {
        LossKind::Mse => {
            let t = tape.constant(targets.clone());
            let d = tape.sub(out, t)?;
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        }
        LossKind::CrossEntropy => {
            let shape = tape.shape(out).to_vec();
            let (rows, classes) = (shape[0], shape[1]);
            let mut onehot = vec![0.0; rows * classes];
            for (r, &c) in targets.data().iter().enumerate() {
                onehot[r * classes + c as usize] = 1.0;
            }
            let ls = tape.log_softmax(out)?;
            let oh = tape.constant(Tensor::new(shape, onehot)?);
            let picked = tape.mul(ls, oh)?;
            let total = tape.sum(picked)?;
            tape.scale(total, -1.0 / rows as f64)
        }
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the epoch's mini-batches.
    pub accuracy_loss: f64,
    pub complexity_loss: f64,
    pub total_loss: f64,
    /// Gates with a non-zero evaluation value after the epoch.
    pub open_gates: usize,
    /// R² (regression) or accuracy (classification) on the training set with
    /// evaluation gates; `None` when undefined.
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,L_A,L_C,L_T,open_gates,metric\n");
        for r in &self.records {
            let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.accuracy_loss, r.complexity_loss, r.total_loss, r.open_gates, metric
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn check_shapes(model: &Model, data: &Dataset, config: &TrainConfig) -> Result<(), TrainError> {
    let out = match model.graph.output_layout() {
        Layout::Vector(k) => k,
        other => return Err(TrainError::Config(format!("model output {other:?} is not a vector"))),
    };
    match (data.task, config.loss) {
        (Task::Classification { classes }, LossKind::CrossEntropy) if classes != out => {
            Err(TrainError::Config(format!("{classes} classes but the model outputs {out} logits")))
        }
        (Task::Regression, LossKind::CrossEntropy) => {
            Err(TrainError::Config("cross_entropy needs a classification dataset".into()))
        }
        (_, LossKind::Mse) if data.targets.shape()[1] != out => Err(TrainError::Config(format!(
            "targets have {} columns but the model outputs {out}",
            data.targets.shape()[1]
        ))),
        _ => Ok(()),
    }
}

/// Predictions for every sample, computed in chunks.
pub fn predict_all(
    data: &Dataset,
    chunk: usize,
    mut f: impl FnMut(&Batch) -> Result<Tensor, TrainError>,
) -> Result<Tensor, TrainError> {
    let n = data.len();
    let mut rows = vec![];
    let mut width = 0;
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let (batch, _) = data.batch(&idx)?;
        let out = f(&batch)?;
        width = out.len() / idx.len();
        rows.extend_from_slice(out.data());
        start += chunk;
    }
    Ok(Tensor::new(vec![n, width], rows)?)
}

/// R² of the first target column or classification accuracy.
pub fn task_metric(pred: &Tensor, data: &Dataset) -> Option<f64> {
    match data.task {
        Task::Regression => {
            let k = data.targets.shape()[1];
            let p: Vec<f64> = pred.data().iter().step_by(k).copied().collect();
            let t: Vec<f64> = data.targets.data().iter().step_by(k).copied().collect();
            r2(&p, &t).ok()
        }
        Task::Classification { classes } => accuracy(&argmax_rows(pred.data(), classes), &data.labels()).ok(),
    }
}

const EVAL_CHUNK: usize = 256;

/// Trains `model` in place and returns the per-epoch history.
pub fn train(model: &mut Model, data: &Dataset, config: &TrainConfig) -> Result<History, TrainError> {
    config.validate()?;
    model.validate()?;
    check_shapes(model, data, config)?;
    if data.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    let root = RngStream::new(config.seed).fork_named("train");
    let mut shuffle = root.fork_named("shuffle");
    let mut noise = root.fork_named("gates");
    let mut opt = Optimizer::new(config.optimizer);
    let mut history = History::default();
    let mut step = 0;
    let n = data.len();
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, shuffle.below(i + 1));
        }
        let (mut sum_a, mut sum_c, mut sum_t, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            step += 1;
            let diverged = |e: TrainError| if e.is_non_finite() { TrainError::Divergence { step, epoch } } else { e };
            let (batch, targets) = data.batch(idx)?;
            let gating = if config.gated { Gating::Train(&mut noise) } else { Gating::Ungated };
            let mut pass = model.forward(&batch, gating).map_err(|e| diverged(e.into()))?;
            let la = accuracy_loss(&mut pass.tape, pass.output, &targets, config.loss).map_err(|e| diverged(e.into()))?;
            let lc = if config.gated { pass.complexity(model).map_err(|e| diverged(e.into()))? } else { None };
            let lt = total_loss(&mut pass.tape, la, lc.as_slice(), config.lambda).map_err(|e| diverged(e.into()))?;
            let (va, vc, vt) = (
                pass.tape.scalar_value(la),
                lc.map(|c| pass.tape.scalar_value(c)).unwrap_or(0.0),
                pass.tape.scalar_value(lt),
            );
            if !vt.is_finite() {
                return Err(TrainError::Divergence { step, epoch });
            }
            let grads = pass.tape.backward(lt).map_err(|e| diverged(e.into()))?;
            for (key, &var) in &pass.params {
                let g = grads.get_or_zeros(var);
                let p = model.params.get_mut(key).expect("bound params exist");
                opt.step(key, p.data_mut(), g.data(), config.lr);
            }
            for (key, &var) in &pass.log_alpha {
                let g = grads.get_or_zeros(var);
                let gate = model.gates.get_mut(key).expect("bound gates exist");
                opt.step(&format!("{key}#log_alpha"), gate.log_alpha.data_mut(), g.data(), config.gate_lr());
            }
            sum_a += va;
            sum_c += vc;
            sum_t += vt;
            batches += 1;
        }
        let pred = predict_all(data, EVAL_CHUNK, |b| Ok(model.predict(b)?))?;
        let record = EpochRecord {
            epoch,
            accuracy_loss: sum_a / batches as f64,
            complexity_loss: sum_c / batches as f64,
            total_loss: sum_t / batches as f64,
            open_gates: if config.gated { model.open_gates() } else { model.gate_count() },
            metric: task_metric(&pred, data),
        };
        log::info!(
            "epoch {epoch}: L_A {:.6} L_C {:.4} open {} metric {:?}",
            record.accuracy_loss,
            record.complexity_loss,
            record.open_gates,
            record.metric
        );
        history.records.push(record);
    }
    Ok(history)
}

/// Mean graph size over a graph dataset, for FLOPs of graph layers.
pub fn mean_graph_size(data: &Dataset) -> GraphSize {
    match &data.inputs {
        Inputs::Graphs { graphs, .. } if !graphs.is_empty() => {
            let n = graphs.len();
            GraphSize {
                nodes: (graphs.iter().map(|g| g.nodes.len()).sum::<usize>() + n / 2) / n,
                edges: (graphs.iter().map(|g| g.edges.len()).sum::<usize>() + n / 2) / n,
            }
        }
        _ => GraphSize::default(),
    }
}

/// Task metrics of `compact` on `data`, costs before and after extraction,
/// and the correlation of every input feature with the target.
pub fn build_report(
    original: &Model,
    compact: &CompactModel,
    data: &Dataset,
    train_seconds: Option<f64>,
) -> Result<MetricsReport, TrainError> {
    let pred = predict_all(data, EVAL_CHUNK, |b| compact.forward(b).map_err(|e| TrainError::Config(e.to_string())))?;
    let (mut r2v, mut msev, mut acc) = (None, None, None);
    match data.task {
        Task::Regression => {
            r2v = task_metric(&pred, data);
            msev = mse(pred.data(), data.targets.data()).ok();
        }
        Task::Classification { .. } => acc = task_metric(&pred, data),
    }
    let size = mean_graph_size(data);
    let target: Vec<f64> = data.targets.data().iter().step_by(data.targets.shape()[1]).copied().collect();
    let mut features = vec![];
    let mut j = 0;
    while let Some(col) = data.feature_column(j) {
        features.push(FeatureStat {
            index: j,
            rho: pearson(&col, &target).ok(),
            kept: compact.input_keep.binary_search(&j).is_ok(),
        });
        j += 1;
    }
    Ok(MetricsReport {
        r2: r2v,
        mse: msev,
        accuracy: acc,
        params_before: original.count_params(),
        params_after: compact.count_params(),
        flops_before: original.count_flops(size),
        flops_after: compact.count_flops(size),
        features,
        train_seconds,
    })
}

/// Wall-clock helper for reports.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64())
}
