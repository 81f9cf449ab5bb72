//! Gated layer computations and the trainable model that wires them together.
//!
//! Every `*_apply` function takes its gate as `Option<Var>`; `None` runs the
//! plain layer. The same functions execute extracted compact models, so the
//! gated and compact paths share one implementation of the layer math.
//!
//! Gate placement per kind:
//!
//! - fc: rows of `W` (input features)
//! - conv2d: output channels of the kernel
//! - gin: input feature channels, one gate used on both the self term and the
//!   aggregated neighbour term
//! - gcn: output channels of both the propagated and the root term
//! - attention: rows of `W_Q`, `W_K`, `W_V` (three independent gates)

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{uniform_sample, normal_sample, RngStream, Tape, Tensor, TensorError, Var};
use crate::batch::{Batch, GraphBatch};
use crate::gate::{GateConfig, GateError, GateSnapshot, GateVector};
use crate::graph::{Activation, GraphError, Layout, ModelGraph, ModelSpec, NodeOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("input: {0}")]
    Input(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{key}` has shape {actual:?}, expected {expected:?}")]
    ParamShape { key: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("embedding `{node}`: id {value} is not an integer in [0, {vocab})")]
    BadId { node: String, value: f64, vocab: usize },
}

/// Graph structure bound on a tape.
pub struct GraphVars {
    pub adjacency: Var,
    pub incidence: Var,
    pub edge_features: Var,
    pub root: Vec<usize>,
    pub pool: Var,
}

impl GraphVars {
    pub fn bind(tape: &mut Tape, g: &GraphBatch) -> Self {
        Self {
            adjacency: tape.constant(g.adjacency.clone()),
            incidence: tape.constant(g.incidence.clone()),
            edge_features: tape.constant(g.edge_features.clone()),
            root: g.root.clone(),
            pool: tape.constant(g.pool.clone()),
        }
    }
}

pub fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var, TensorError> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
    }
}

fn gated(tape: &mut Tape, x: Var, gate: Option<Var>, axis: usize) -> Result<Var, TensorError> {
    match gate {
        Some(m) => tape.mul_along(x, m, axis),
        None => Ok(x),
    }
}

/// `act(x · (m ⊙_rows W) + b)` for `x: [rows, n]`, `W: [n, k]`.
pub fn fc_apply(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    gate: Option<Var>,
    act: Activation,
) -> Result<Var, TensorError> {
    let w = gated(tape, w, gate, 0)?;
    let mut z = tape.matmul(x, w)?;
    if let Some(b) = b {
        z = tape.add_along(z, b, 1)?;
    }
    activate(tape, z, act)
}

/// `act(conv(x, m ⊙_out W) + b)` for `x: [B, C, H, W]`, `W: [D, C, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_apply(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    gate: Option<Var>,
    stride: usize,
    padding: usize,
    act: Activation,
) -> Result<Var, TensorError> {
    let w = gated(tape, w, gate, 0)?;
    let mut z = tape.conv2d(x, w, stride, padding)?;
    if let Some(b) = b {
        z = tape.add_along(z, b, 1)?;
    }
    activate(tape, z, act)
}

/// `act(((1 + eps)·(m ⊙ X) + m ⊙ (A·X + S·(E·edge_embed))) · W)`.
#[allow(clippy::too_many_arguments)]
pub fn gin_apply(
    tape: &mut Tape,
    x: Var,
    g: &GraphVars,
    w: Var,
    eps: Var,
    edge_embed: Var,
    gate: Option<Var>,
    act: Activation,
) -> Result<Var, TensorError> {
    let xg = gated(tape, x, gate, 1)?;
    let one_plus = tape.add_scalar(eps, 1.0)?;
    let own = tape.mul_scalar(xg, one_plus)?;
    let neighbours = tape.matmul(g.adjacency, x)?;
    let embedded = tape.matmul(g.edge_features, edge_embed)?;
    let edge_msgs = tape.matmul(g.incidence, embedded)?;
    let agg = tape.add(neighbours, edge_msgs)?;
    let agg = gated(tape, agg, gate, 1)?;
    let h = tape.add(own, agg)?;
    let z = tape.matmul(h, w)?;
    activate(tape, z, act)
}

/// Parameters of one graph-convolution layer on a tape.
pub struct GcnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub root: Var,
}

/// `H' = X·W1 + b1`, `E' = E·W2 + b2`,
/// `act(m ⊙ (A·H' + S·E') + m ⊙ relu(H' + root[R]))`.
pub fn gcn_apply(
    tape: &mut Tape,
    x: Var,
    g: &GraphVars,
    p: &GcnVars,
    gate: Option<Var>,
    act: Activation,
) -> Result<Var, TensorError> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add_along(h, p.b1, 1)?;
    let e = tape.matmul(g.edge_features, p.w2)?;
    let e = tape.add_along(e, p.b2, 1)?;
    let from_nodes = tape.matmul(g.adjacency, h)?;
    let from_edges = tape.matmul(g.incidence, e)?;
    let prop = tape.add(from_nodes, from_edges)?;
    let r = tape.gather(p.root, 0, &g.root)?;
    let hr = tape.add(h, r)?;
    let root_term = tape.relu(hr)?;
    let prop = gated(tape, prop, gate, 1)?;
    let root_term = gated(tape, root_term, gate, 1)?;
    let z = tape.add(prop, root_term)?;
    activate(tape, z, act)
}

/// Parameters of one attention layer on a tape.
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Multi-head self-attention on `x: [B, T, d]`. `rows`, when given, selects
/// the input features each projection reads (compact models).
pub fn attention_apply(
    tape: &mut Tape,
    x: Var,
    p: &AttentionVars,
    gates: [Option<Var>; 3],
    rows: Option<&[Vec<usize>; 3]>,
    heads: usize,
) -> Result<Var, TensorError> {
    let shape = tape.shape(x).to_vec();
    let [b, t, d] = shape[..] else {
        return Err(TensorError::Shape { op: "attention", detail: format!("input {shape:?} is not [B, T, d]") });
    };
    let inner = tape.shape(p.wq)[1];
    if heads == 0 || !inner.is_multiple_of(heads) {
        return Err(TensorError::Config(format!("head count {heads} must divide projection width {inner}")));
    }
    let dh = inner / heads;
    let weights = [
        gated(tape, p.wq, gates[0], 0)?,
        gated(tape, p.wk, gates[1], 0)?,
        gated(tape, p.wv, gates[2], 0)?,
    ];
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(b);
    for s in 0..b {
        let xs = tape.gather(x, 0, &[s])?;
        let xs = tape.reshape(xs, &[t, d])?;
        let mut proj = [xs; 3];
        for (k, w) in weights.iter().enumerate() {
            let xin = match rows {
                Some(r) => tape.gather(xs, 1, &r[k])?,
                None => xs,
            };
            proj[k] = tape.matmul(xin, *w)?;
        }
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols: Vec<usize> = (h * dh..(h + 1) * dh).collect();
            let [q, k, v] = if heads == 1 {
                proj
            } else {
                [tape.gather(proj[0], 1, &cols)?, tape.gather(proj[1], 1, &cols)?, tape.gather(proj[2], 1, &cols)?]
            };
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores)?;
            head_outs.push(tape.matmul(attn, v)?);
        }
        let joined = if heads == 1 { head_outs[0] } else { tape.concat(&head_outs, 1)? };
        outs.push(tape.matmul(joined, p.wo)?);
    }
    let out_width = tape.shape(p.wo)[1];
    let stacked = tape.concat(&outs, 0)?;
    tape.reshape(stacked, &[b, t, out_width])
}

/// Table lookup for `x: [rows, 1]` holding integer ids.
pub fn embedding_apply(tape: &mut Tape, node: &str, x: Var, table: Var) -> Result<Var, ModelError> {
    let vocab = tape.shape(table)[0];
    let mut ids = Vec::with_capacity(tape.value(x).len());
    for &v in tape.value(x).data() {
        if v.fract() != 0.0 || v < 0.0 || v >= vocab as f64 {
            return Err(ModelError::BadId { node: node.to_string(), value: v, vocab });
        }
        ids.push(v as usize);
    }
    Ok(tape.gather(table, 0, &ids)?)
}

/// Flattens the per-sample part of `x` (channel-major, row-major within).
pub fn flatten_apply(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(x);
    let rows = shape[0];
    let rest = shape[1..].iter().product();
    tape.reshape(x, &[rows, rest])
}

pub fn sum_apply(tape: &mut Tape, parts: &[Var]) -> Result<Var, TensorError> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Zero-width batch tensor standing in for a producer that was pruned away.
pub fn empty_input(rows: usize, layout: Layout) -> Tensor {
    let mut shape = vec![rows];
    shape.extend(layout.with_units(0).shape());
    Tensor::zeros(shape)
}

/// How gate values enter a forward pass.
pub enum Gating<'a> {
    /// Fresh hard-concrete samples per pass.
    Train(&'a mut RngStream),
    /// Deterministic evaluation gates.
    Eval,
    /// Caller-chosen gate values keyed like [`Model::gates`]; missing keys
    /// fall back to evaluation gates.
    Fixed(&'a BTreeMap<String, Vec<f64>>),
    /// Gates removed entirely (the plain network).
    Ungated,
}

/// A recorded forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub output: Var,
    pub params: BTreeMap<String, Var>,
    pub log_alpha: BTreeMap<String, Var>,
    pub gate_values: BTreeMap<String, Var>,
}

impl ForwardPass {
    /// Sum of complexity penalties of every gate in the pass.
    pub fn complexity(&mut self, model: &Model) -> Result<Option<Var>, ModelError> {
        let mut terms = vec![];
        for (key, &la) in &self.log_alpha {
            terms.push(model.gates[key].complexity_loss(&mut self.tape, la)?);
        }
        if terms.is_empty() {
            return Ok(None);
        }
        Ok(Some(sum_apply(&mut self.tape, &terms)?))
    }
}

/// Trainable gated model: topology, weights and gate locations.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub graph: ModelGraph,
    pub gate_config: GateConfig,
    pub params: BTreeMap<String, Tensor>,
    pub gates: BTreeMap<String, GateVector>,
}

fn fan_uniform(rng: &mut RngStream, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform_sample(rng, -bound, bound, shape)
}

impl Model {
    /// Builds the topology and draws every tensor from sub-streams of `seed`
    /// keyed by parameter name.
    pub fn new(spec: ModelSpec, gate_config: GateConfig, seed: u64) -> Result<Self, ModelError> {
        gate_config.validate()?;
        let graph = ModelGraph::build(&spec)?;
        let root = RngStream::new(seed).fork_named("init");
        let mut params = BTreeMap::new();
        for (key, shape) in graph.param_slots() {
            let mut rng = root.fork_named(&key);
            let role = key.rsplit('.').next().unwrap_or("");
            let t = match role {
                "eps" => Tensor::zeros(shape.clone()),
                "table" => normal_sample(&mut rng, 0.0, 1.0, &shape),
                "root" => uniform_sample(&mut rng, -0.5, 0.5, &shape),
                "bias" | "b1" | "b2" => {
                    let fan = Self::fan_for(&graph, &key);
                    fan_uniform(&mut rng, &shape, fan)
                }
                _ => {
                    let fan = match shape.len() {
                        4 => shape[1] * shape[2] * shape[3],
                        _ => shape[0],
                    };
                    fan_uniform(&mut rng, &shape, fan)
                }
            };
            params.insert(key, t);
        }
        let mut gates = BTreeMap::new();
        for (key, len) in graph.gate_slots() {
            let mut rng = root.fork_named(&key);
            gates.insert(key, GateVector::new(len, gate_config, &mut rng)?);
        }
        Ok(Self { spec, graph, gate_config, params, gates })
    }

    fn fan_for(graph: &ModelGraph, key: &str) -> usize {
        let node = key.rsplit_once('.').map(|(n, _)| n).unwrap_or(key);
        let Some(i) = graph.index_of(node) else { return 1 };
        let inp = graph.input_layout_of(i).map(|l| l.units()).unwrap_or(1);
        match (&graph.nodes[i].op, key.ends_with("b2")) {
            (NodeOp::Conv2d { kh, kw, .. }, _) => inp * kh * kw,
            (NodeOp::Gcn { .. }, true) => graph.edge_features,
            _ => inp,
        }
    }

    /// Same weights on a different topology (used after dead-block removal).
    pub fn with_graph(&self, graph: ModelGraph) -> Self {
        Self { graph, ..self.clone() }
    }

    /// Checks that every parameter and gate the graph needs is present with
    /// the right shape.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (key, shape) in self.graph.param_slots() {
            let t = self.params.get(&key).ok_or_else(|| ModelError::MissingParam(key.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape { key, expected: shape, actual: t.shape().to_vec() });
            }
        }
        for (key, len) in self.graph.gate_slots() {
            let g = self.gates.get(&key).ok_or_else(|| ModelError::MissingParam(key.clone()))?;
            if g.len() != len {
                return Err(ModelError::ParamShape { key, expected: vec![len], actual: vec![g.len()] });
            }
        }
        Ok(())
    }

    /// Weight and bias elements reachable from the graph; gates excluded.
    pub fn param_count(&self) -> usize {
        self.graph.param_slots().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn gate_count(&self) -> usize {
        self.graph.gate_slots().iter().map(|(_, n)| n).sum()
    }

    pub fn snapshots(&self) -> BTreeMap<String, GateSnapshot> {
        self.graph.gate_slots().into_iter().map(|(k, _)| {
            let s = self.gates[&k].gate_eval();
            (k, s)
        }).collect()
    }

    pub fn open_gates(&self) -> usize {
        self.snapshots().values().map(|s| s.open_count()).sum()
    }

    /// Checks that `batch` matches the model input.
    pub fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        let layout = self.graph.input_layout();
        let shape = batch.x.shape();
        if self.graph.graph_input {
            let g = batch.graph.as_ref().ok_or_else(|| ModelError::Input("graph model needs a graph batch".into()))?;
            if shape != [g.nodes(), layout.units()] {
                return Err(ModelError::Input(format!("node features {shape:?}, expected [{}, {}]", g.nodes(), layout.units())));
            }
            if g.edge_features.shape()[1] != self.graph.edge_features {
                return Err(ModelError::Input(format!(
                    "edge features of width {}, model expects {}",
                    g.edge_features.shape()[1],
                    self.graph.edge_features
                )));
            }
        } else if shape.len() != 1 + layout.shape().len() || shape[1..] != layout.shape()[..] {
            return Err(ModelError::Input(format!("batch {shape:?} does not match sample shape {:?}", layout.shape())));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Batch, gating: Gating<'_>) -> Result<ForwardPass, ModelError> {
        self.check_batch(batch)?;
        let mut run = Run { model: self, tape: Tape::new(), params: BTreeMap::new(), log_alpha: BTreeMap::new(), gate_values: BTreeMap::new(), gating };
        let gv = batch.graph.as_ref().map(|g| GraphVars::bind(&mut run.tape, g));
        let mut values: Vec<Option<Var>> = vec![None; self.graph.nodes.len()];
        for (i, node) in self.graph.nodes.iter().enumerate() {
            let ins: Vec<Var> = node.inputs.iter().map(|&p| values[p].expect("topological order")).collect();
            let v = match &node.op {
                NodeOp::Input => run.tape.constant(batch.x.clone()),
                _ => run.node(i, &ins, gv.as_ref())?,
            };
            values[i] = Some(v);
        }
        let output = values[self.graph.output].expect("output computed");
        Ok(ForwardPass { tape: run.tape, output, params: run.params, log_alpha: run.log_alpha, gate_values: run.gate_values })
    }

    /// Evaluation-mode output, shaped `[samples, ...output layout]`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let pass = self.forward(batch, Gating::Eval)?;
        Ok(pass.tape.value(pass.output).clone())
    }
}

struct Run<'m, 'g> {
    model: &'m Model,
    tape: Tape,
    params: BTreeMap<String, Var>,
    log_alpha: BTreeMap<String, Var>,
    gate_values: BTreeMap<String, Var>,
    gating: Gating<'g>,
}

impl Run<'_, '_> {
    fn param(&mut self, key: String) -> Result<Var, ModelError> {
        if let Some(&v) = self.params.get(&key) {
            return Ok(v);
        }
        let t = self.model.params.get(&key).ok_or_else(|| ModelError::MissingParam(key.clone()))?;
        let v = self.tape.leaf(t.clone());
        self.params.insert(key, v);
        Ok(v)
    }

    /// One gate tensor per key per pass, so every use site of a gate shares
    /// the same instance.
    fn gate(&mut self, key: String) -> Result<Option<Var>, ModelError> {
        if let Some(&v) = self.gate_values.get(&key) {
            return Ok(Some(v));
        }
        let g = self.model.gates.get(&key).ok_or_else(|| ModelError::MissingParam(key.clone()))?;
        let fixed = match &self.gating {
            Gating::Ungated => return Ok(None),
            Gating::Fixed(map) => map.get(&key).cloned(),
            _ => None,
        };
        let v = match fixed {
            Some(values) => {
                if values.len() != g.len() {
                    return Err(ModelError::ParamShape { key, expected: vec![g.len()], actual: vec![values.len()] });
                }
                self.tape.constant(Tensor::vector(values))
            }
            None => {
                let la = self.tape.leaf(g.log_alpha.clone());
                self.log_alpha.insert(key.clone(), la);
                match &mut self.gating {
                    Gating::Train(rng) => g.sample_train(&mut self.tape, la, rng)?,
                    _ => g.eval_var(&mut self.tape, la)?,
                }
            }
        };
        self.gate_values.insert(key, v);
        Ok(Some(v))
    }

    fn node(&mut self, i: usize, ins: &[Var], gv: Option<&GraphVars>) -> Result<Var, ModelError> {
        let node = &self.model.graph.nodes[i];
        let name = node.name.clone();
        let key = |role: &str| format!("{name}.{role}");
        let graph_vars = || gv.ok_or_else(|| ModelError::Input(format!("`{name}` needs a graph batch")));
        let x = ins.first().copied();
        let out = match node.op.clone() {
            NodeOp::Input => unreachable!(),
            NodeOp::Fc { bias, act, .. } => {
                let w = self.param(key("weight"))?;
                let b = if bias { Some(self.param(key("bias"))?) } else { None };
                let m = self.gate(key("gate"))?;
                fc_apply(&mut self.tape, x.unwrap(), w, b, m, act)?
            }
            NodeOp::Conv2d { stride, padding, bias, act, .. } => {
                let w = self.param(key("weight"))?;
                let b = if bias { Some(self.param(key("bias"))?) } else { None };
                let m = self.gate(key("gate"))?;
                conv_apply(&mut self.tape, x.unwrap(), w, b, m, stride, padding, act)?
            }
            NodeOp::Flatten => flatten_apply(&mut self.tape, x.unwrap())?,
            NodeOp::Concat => {
                let axis = node.layout.unit_axis() + 1;
                self.tape.concat(ins, axis)?
            }
            NodeOp::Embedding { .. } => {
                let table = self.param(key("table"))?;
                embedding_apply(&mut self.tape, &name, x.unwrap(), table)?
            }
            NodeOp::Gin { act, .. } => {
                let g = graph_vars()?;
                let w = self.param(key("weight"))?;
                let eps = self.param(key("eps"))?;
                let ee = self.param(key("edge_embed"))?;
                let m = self.gate(key("gate"))?;
                gin_apply(&mut self.tape, x.unwrap(), g, w, eps, ee, m, act)?
            }
            NodeOp::Gcn { act, .. } => {
                let g = graph_vars()?;
                let p = GcnVars {
                    w1: self.param(key("w1"))?,
                    b1: self.param(key("b1"))?,
                    w2: self.param(key("w2"))?,
                    b2: self.param(key("b2"))?,
                    root: self.param(key("root"))?,
                };
                let m = self.gate(key("gate"))?;
                gcn_apply(&mut self.tape, x.unwrap(), g, &p, m, act)?
            }
            NodeOp::Attention { heads, .. } => {
                let p = AttentionVars {
                    wq: self.param(key("wq"))?,
                    wk: self.param(key("wk"))?,
                    wv: self.param(key("wv"))?,
                    wo: self.param(key("wo"))?,
                };
                let gates = [self.gate(key("gate_q"))?, self.gate(key("gate_k"))?, self.gate(key("gate_v"))?];
                attention_apply(&mut self.tape, x.unwrap(), &p, gates, None, heads)?
            }
            NodeOp::Pool => {
                let g = graph_vars()?;
                self.tape.matmul(g.pool, x.unwrap())?
            }
            NodeOp::Add => sum_apply(&mut self.tape, ins)?,
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(json: &str, seed: u64) -> Model {
        Model::new(serde_json::from_str(json).unwrap(), GateConfig::default(), seed).unwrap()
    }

    const MLP: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[6]},
        {"kind":"fc","name":"h","units":5},{"kind":"fc","name":"o","units":2}]}"#;

    #[test]
    fn initialization_is_seeded_and_counted() {
        let a = model(MLP, 1);
        assert_eq!(a, model(MLP, 1));
        assert_ne!(a.params, model(MLP, 2).params);
        assert_eq!(a.param_count(), 6 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(a.gate_count(), 11);
        assert_eq!(a.open_gates(), 11);
        a.validate().unwrap();
    }

    #[test]
    fn shared_gate_is_one_instance() {
        let m = model(
            r#"{"nodes":[{"kind":"input","name":"x","shape":[3],"graph":true,"edge_features":1},
            {"kind":"gin","name":"g","units":2},{"kind":"pool","name":"p"}]}"#,
            3,
        );
        let graph = crate::batch::Graph {
            nodes: vec![vec![1.0, 0.0, 2.0], vec![0.5, 0.5, 0.5]],
            edges: vec![(0, 1)],
            edge_features: vec![vec![1.0]],
            root: 0,
        };
        let batch = Batch::from_graphs(&[&graph], 3, 1).unwrap();
        let pass = m.forward(&batch, Gating::Eval).unwrap();
        assert_eq!(pass.gate_values.len(), 1);
        assert_eq!(pass.log_alpha.len(), 1);
    }

    #[test]
    fn batch_shape_is_checked() {
        let m = model(MLP, 1);
        let bad = Batch::dense(Tensor::zeros(vec![2, 5]));
        assert!(matches!(m.forward(&bad, Gating::Eval), Err(ModelError::Input(_))));
    }
}
