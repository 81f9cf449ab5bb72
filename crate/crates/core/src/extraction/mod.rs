//! Compact models: the gated network with every pruned unit physically
//! removed and every surviving gate value folded into its weights.
//!
//! Folding multiplies each retained slice by the same deterministic gate value
//! the gated model multiplies it by, so the compact forward pass computes the
//! same products. Units the gated model would read as constants are folded
//! into biases where the consistency pass said so.

mod format;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{RngStream, Tape, Tensor, TensorError};
use crate::batch::{Batch, Graph};
use crate::codec::FormatError;
use crate::consistency::{propagate_masks, remove_dead_blocks, ConsistencyError, MaskTable, UnitState};
use crate::gate::GateSnapshot;
use crate::graph::{Activation, Layout, ModelGraph, NodeOp};
use crate::layers::{
    attention_apply, conv_apply, embedding_apply, empty_input, fc_apply, flatten_apply, gcn_apply, gin_apply,
    sum_apply, AttentionVars, GcnVars, GraphVars, Model, ModelError,
};

pub use format::{deserialize, serialize, FORMAT_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("layer `{node}`: {detail}")]
    Layer { node: String, detail: String },
    #[error("input: {0}")]
    Input(String),
    #[error("the model has no layers")]
    Empty,
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CompactOp {
    Input,
    Fc { weight: Tensor, bias: Option<Tensor>, act: Activation },
    Conv2d { weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize, act: Activation },
    Flatten,
    Concat,
    Embedding { table: Tensor },
    Gin { weight: Tensor, eps: Tensor, edge_embed: Tensor, act: Activation },
    Gcn { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, root: Tensor, act: Activation },
    /// `rows[k]` lists the input features projection `k` (Q, K, V) reads.
    Attention { heads: usize, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, rows: [Vec<usize>; 3] },
    Pool,
    Add,
}

impl CompactOp {
    pub fn kind(&self) -> &'static str {
        match self {
            CompactOp::Input => "input",
            CompactOp::Fc { .. } => "fc",
            CompactOp::Conv2d { .. } => "conv2d",
            CompactOp::Flatten => "flatten",
            CompactOp::Concat => "concat",
            CompactOp::Embedding { .. } => "embedding",
            CompactOp::Gin { .. } => "gin",
            CompactOp::Gcn { .. } => "gcn",
            CompactOp::Attention { .. } => "attention",
            CompactOp::Pool => "pool",
            CompactOp::Add => "add",
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            CompactOp::Fc { weight, bias, .. } | CompactOp::Conv2d { weight, bias, .. } => {
                std::iter::once(weight).chain(bias.as_ref()).collect()
            }
            CompactOp::Embedding { table } => vec![table],
            CompactOp::Gin { weight, eps, edge_embed, .. } => vec![weight, eps, edge_embed],
            CompactOp::Gcn { w1, b1, w2, b2, root, .. } => vec![w1, b1, w2, b2, root],
            CompactOp::Attention { wq, wk, wv, wo, .. } => vec![wq, wk, wv, wo],
            _ => vec![],
        }
    }
}

/// Where a compact node reads one of its inputs from.
#[derive(Clone, Debug, PartialEq)]
pub enum CompactInput {
    /// Output of an earlier compact node, optionally restricted to `select`
    /// (positions within that node's produced units).
    Node { index: usize, select: Option<Vec<usize>> },
    /// The producer was pruned entirely; the consumer sees a zero-width batch.
    Empty { layout: Layout, node_level: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactNode {
    pub name: String,
    pub op: CompactOp,
    pub inputs: Vec<CompactInput>,
    /// Per-sample layout with the compact unit count.
    pub layout: Layout,
    pub node_level: bool,
}

/// A pruned dense model with no gates.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel {
    /// Layout of the full (unselected) model input.
    pub input_layout: Layout,
    pub graph_input: bool,
    pub edge_features: usize,
    /// Selected input units, ascending.
    pub input_keep: Vec<usize>,
    /// Topologically ordered; node 0 is the input when non-empty.
    pub nodes: Vec<CompactNode>,
    pub output: usize,
}

/// Result of the full pipeline on a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub compact: CompactModel,
    /// Topology after dead residual branches were deleted.
    pub graph: ModelGraph,
    pub masks: MaskTable,
}

/// Masks from the model's evaluation gates, dead-branch removal, then
/// materialization.
pub fn extract_model(model: &Model) -> Result<Extraction, ExtractionError> {
    extract_with_snapshots(model, &model.snapshots())
}

/// As [`extract_model`] with caller-supplied gate decisions.
pub fn extract_with_snapshots(
    model: &Model,
    snapshots: &BTreeMap<String, GateSnapshot>,
) -> Result<Extraction, ExtractionError> {
    model.validate()?;
    let masks = propagate_masks(&model.graph, &model.params, snapshots)?;
    let (graph, masks) = remove_dead_blocks(&model.graph, &model.params, &masks)?;
    let compact = extract(&graph, &model.params, &masks)?;
    Ok(Extraction { compact, graph, masks })
}

fn fetch<'a>(params: &'a BTreeMap<String, Tensor>, node: &str, role: &str, shape: &[usize]) -> Result<&'a Tensor, ExtractionError> {
    let key = format!("{node}.{role}");
    let t = params.get(&key).ok_or_else(|| ExtractionError::Layer { node: node.into(), detail: format!("missing `{key}`") })?;
    if t.shape() != shape {
        return Err(ExtractionError::Layer {
            node: node.into(),
            detail: format!("`{key}` has shape {:?}, masks need {shape:?}", t.shape()),
        });
    }
    Ok(t)
}

/// Multiplies every slice along `axis` by the matching entry of `s`.
fn scale_axis(t: &mut Tensor, axis: usize, s: &[f64]) {
    let (outer, n, inner) = t.axis_split(axis);
    debug_assert_eq!(n, s.len());
    let data = t.data_mut();
    for o in 0..outer {
        for (i, &f) in s.iter().enumerate() {
            let st = (o * n + i) * inner;
            data[st..st + inner].iter_mut().for_each(|d| *d *= f);
        }
    }
}

fn values_at(snap: &GateSnapshot, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| snap.values[i]).collect()
}

/// Positions of `sub` within the ascending list `within`, or `None` when the
/// two are equal.
fn select_positions(sub: &[usize], within: &[usize]) -> Option<Vec<usize>> {
    if sub == within {
        return None;
    }
    Some(sub.iter().map(|u| within.binary_search(u).expect("read units are produced")).collect())
}

/// Builds the compact model for `graph` under `masks`.
pub fn extract(
    graph: &ModelGraph,
    params: &BTreeMap<String, Tensor>,
    masks: &MaskTable,
) -> Result<CompactModel, ExtractionError> {
    if masks.nodes.len() != graph.nodes.len() {
        return Err(ExtractionError::Input(format!(
            "mask table has {} nodes, graph has {}",
            masks.nodes.len(),
            graph.nodes.len()
        )));
    }
    let snap = |node: &str, role: &str| -> Result<&GateSnapshot, ExtractionError> {
        let key = format!("{node}.{role}");
        masks.snapshots.get(&key).ok_or(ExtractionError::Consistency(ConsistencyError::MissingSnapshot(key)))
    };
    let mut index: Vec<Option<usize>> = vec![None; graph.nodes.len()];
    let mut nodes: Vec<CompactNode> = vec![];
    for (i, node) in graph.nodes.iter().enumerate() {
        let m = &masks.nodes[i];
        if m.name != node.name {
            return Err(ExtractionError::Input(format!("mask `{}` does not match node `{}`", m.name, node.name)));
        }
        let produced = &m.output_mask;
        if produced.is_empty() && i != graph.input {
            continue;
        }
        let name = node.name.as_str();
        let mut inputs = vec![];
        for (k, &p) in node.inputs.iter().enumerate() {
            let reads = &m.reads[k];
            if node.op == NodeOp::Add && reads.is_empty() {
                continue;
            }
            inputs.push(match index[p] {
                Some(q) => CompactInput::Node { index: q, select: select_positions(reads, &masks.nodes[p].output_mask) },
                None => {
                    let src = &graph.nodes[p];
                    CompactInput::Empty { layout: src.layout.with_units(0), node_level: src.node_level }
                }
            });
        }
        let in_units = graph.input_layout_of(i).map(|l| l.units()).unwrap_or(0);
        let input_states: Option<&[UnitState]> = node.inputs.first().map(|&p| masks.nodes[p].states.as_slice());
        let reads0: &[usize] = m.reads.first().map(|r| r.as_slice()).unwrap_or(&[]);
        let op = match &node.op {
            NodeOp::Input => CompactOp::Input,
            NodeOp::Fc { units, bias, act } => {
                let g = snap(name, "gate")?;
                let w = fetch(params, name, "weight", &[in_units, *units])?;
                let mut weight = w.select(0, reads0)?.select(1, produced)?;
                scale_axis(&mut weight, 0, &values_at(g, reads0));
                let bias = if *bias {
                    let b = fetch(params, name, "bias", &[*units])?;
                    let st = input_states.expect("fc input");
                    let mut out = b.select(0, produced)?;
                    for (j, &p) in produced.iter().enumerate() {
                        let mut z = out.data()[j];
                        for (a, s) in st.iter().enumerate() {
                            if let UnitState::Const(c) = *s {
                                if g.keep[a] && c != 0.0 && reads0.binary_search(&a).is_err() {
                                    z += c * (g.values[a] * w.data()[a * units + p]);
                                }
                            }
                        }
                        out.data_mut()[j] = z;
                    }
                    Some(out)
                } else {
                    None
                };
                CompactOp::Fc { weight, bias, act: *act }
            }
            NodeOp::Conv2d { channels, kh, kw, stride, padding, bias, act } => {
                let g = snap(name, "gate")?;
                let w = fetch(params, name, "weight", &[*channels, in_units, *kh, *kw])?;
                let mut weight = w.select(0, produced)?.select(1, reads0)?;
                scale_axis(&mut weight, 0, &values_at(g, produced));
                let bias = if *bias {
                    let b = fetch(params, name, "bias", &[*channels])?;
                    let st = input_states.expect("conv input");
                    let mut out = b.select(0, produced)?;
                    for (j, &d) in produced.iter().enumerate() {
                        let mut z = 0.0;
                        for (c, s) in st.iter().enumerate() {
                            if let UnitState::Const(v) = *s {
                                if v != 0.0 && reads0.binary_search(&c).is_err() {
                                    let start = (d * in_units + c) * kh * kw;
                                    let sum: f64 = w.data()[start..start + kh * kw].iter().sum();
                                    z += v * sum;
                                }
                            }
                        }
                        if z != 0.0 {
                            out.data_mut()[j] += g.values[d] * z;
                        }
                    }
                    Some(out)
                } else {
                    None
                };
                CompactOp::Conv2d { weight, bias, stride: *stride, padding: *padding, act: *act }
            }
            NodeOp::Flatten => CompactOp::Flatten,
            NodeOp::Concat => CompactOp::Concat,
            NodeOp::Pool => CompactOp::Pool,
            NodeOp::Add => CompactOp::Add,
            NodeOp::Embedding { vocab, width } => {
                let t = fetch(params, name, "table", &[*vocab, *width])?;
                CompactOp::Embedding { table: t.select(1, produced)? }
            }
            NodeOp::Gin { units, act } => {
                let g = snap(name, "gate")?;
                let e = graph.edge_features;
                let w = fetch(params, name, "weight", &[in_units, *units])?;
                let mut weight = w.select(0, reads0)?.select(1, produced)?;
                scale_axis(&mut weight, 0, &values_at(g, reads0));
                let eps = fetch(params, name, "eps", &[1])?.clone();
                let edge_embed = fetch(params, name, "edge_embed", &[e, in_units])?.select(1, reads0)?;
                CompactOp::Gin { weight, eps, edge_embed, act: *act }
            }
            NodeOp::Gcn { units, act } => {
                let g = snap(name, "gate")?;
                let e = graph.edge_features;
                let z = values_at(g, produced);
                let w1 = fetch(params, name, "w1", &[in_units, *units])?;
                let mut w1c = w1.select(0, reads0)?.select(1, produced)?;
                scale_axis(&mut w1c, 1, &z);
                let st = input_states.expect("gcn input");
                let b1 = fetch(params, name, "b1", &[*units])?;
                let mut b1c = b1.select(0, produced)?;
                for (j, &p) in produced.iter().enumerate() {
                    let mut acc = b1c.data()[j];
                    for (a, s) in st.iter().enumerate() {
                        if let UnitState::Const(c) = *s {
                            if c != 0.0 {
                                acc += c * w1.data()[a * units + p];
                            }
                        }
                    }
                    b1c.data_mut()[j] = z[j] * acc;
                }
                let mut w2 = fetch(params, name, "w2", &[e, *units])?.select(1, produced)?;
                scale_axis(&mut w2, 1, &z);
                let mut b2 = fetch(params, name, "b2", &[*units])?.select(0, produced)?;
                scale_axis(&mut b2, 0, &z);
                let mut root = fetch(params, name, "root", &[2, *units])?.select(1, produced)?;
                scale_axis(&mut root, 1, &z);
                CompactOp::Gcn { w1: w1c, b1: b1c, w2, b2, root, act: *act }
            }
            NodeOp::Attention { inner, heads, out } => {
                let mut ws = vec![];
                let mut rows: [Vec<usize>; 3] = Default::default();
                for (k, (role, gate)) in [("wq", "gate_q"), ("wk", "gate_k"), ("wv", "gate_v")].into_iter().enumerate() {
                    let g = snap(name, gate)?;
                    rows[k] = g.kept();
                    let mut w = fetch(params, name, role, &[in_units, *inner])?.select(0, &rows[k])?;
                    scale_axis(&mut w, 0, &values_at(g, &rows[k]));
                    ws.push(w);
                }
                let wo = fetch(params, name, "wo", &[*inner, *out])?.select(1, produced)?;
                let wv = ws.pop().expect("three projections");
                let wk = ws.pop().expect("three projections");
                let wq = ws.pop().expect("three projections");
                CompactOp::Attention { heads: *heads, wq, wk, wv, wo, rows }
            }
        };
        index[i] = Some(nodes.len());
        nodes.push(CompactNode {
            name: node.name.clone(),
            op,
            inputs,
            layout: node.layout.with_units(produced.len()),
            node_level: node.node_level,
        });
    }
    let input = &graph.nodes[graph.input];
    Ok(CompactModel {
        input_layout: input.layout,
        graph_input: graph.graph_input,
        edge_features: graph.edge_features,
        input_keep: masks.nodes[graph.input].output_mask.clone(),
        output: index[graph.output].expect("the output node is always materialized"),
        nodes,
    })
}

impl CompactModel {
    /// A model with no layers; it serializes but cannot run.
    pub fn empty() -> Self {
        Self {
            input_layout: Layout::Vector(0),
            graph_input: false,
            edge_features: 0,
            input_keep: vec![],
            nodes: vec![],
            output: 0,
        }
    }

    /// Weight and bias elements stored in the model.
    pub fn param_count(&self) -> usize {
        self.nodes.iter().flat_map(|n| n.op.tensors()).map(|t| t.len()).sum()
    }

    /// Runs on a batch shaped like the original model input; dropped input
    /// units are discarded before the first layer.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor, ExtractionError> {
        self.check_input(batch, self.input_layout)?;
        let axis = self.input_layout.unit_axis() + 1;
        let x = batch.x.select(axis, &self.input_keep)?;
        self.run(batch, x)
    }

    /// Runs on a batch that already holds only the kept input units.
    pub fn forward_selected(&self, batch: &Batch) -> Result<Tensor, ExtractionError> {
        self.check_input(batch, self.input_layout.with_units(self.input_keep.len()))?;
        self.run(batch, batch.x.clone())
    }

    fn check_input(&self, batch: &Batch, layout: Layout) -> Result<(), ExtractionError> {
        if self.nodes.is_empty() {
            return Err(ExtractionError::Empty);
        }
        let shape = batch.x.shape();
        if shape.len() != 1 + layout.shape().len() || shape[1..] != layout.shape()[..] {
            return Err(ExtractionError::Input(format!("batch {shape:?} does not match sample shape {:?}", layout.shape())));
        }
        match (&batch.graph, self.graph_input) {
            (None, true) => Err(ExtractionError::Input("graph model needs a graph batch".into())),
            (Some(g), true) if g.edge_features.shape()[1] != self.edge_features || g.nodes() != shape[0] => {
                Err(ExtractionError::Input(format!(
                    "graph batch with {} nodes and edge width {} does not fit",
                    g.nodes(),
                    g.edge_features.shape()[1]
                )))
            }
            _ => Ok(()),
        }
    }

    fn run(&self, batch: &Batch, x: Tensor) -> Result<Tensor, ExtractionError> {
        let mut tape = Tape::new();
        let gv = batch.graph.as_ref().map(|g| GraphVars::bind(&mut tape, g));
        let rows = |node_level: bool| match &batch.graph {
            Some(g) if node_level => g.nodes(),
            Some(g) => g.graphs(),
            None => batch.x.shape()[0],
        };
        let mut values = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut ins = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                ins.push(match input {
                    CompactInput::Node { index, select } => {
                        let v = values[*index];
                        match select {
                            Some(sel) => {
                                let axis = self.nodes[*index].layout.unit_axis() + 1;
                                tape.gather(v, axis, sel)?
                            }
                            None => v,
                        }
                    }
                    CompactInput::Empty { layout, node_level } => tape.constant(empty_input(rows(*node_level), *layout)),
                });
            }
            let graph_vars = || {
                gv.as_ref().ok_or_else(|| ExtractionError::Input(format!("`{}` needs a graph batch", node.name)))
            };
            let x0 = ins.first().copied();
            let v = match &node.op {
                CompactOp::Input => tape.constant(x.clone()),
                CompactOp::Fc { weight, bias, act } => {
                    let w = tape.constant(weight.clone());
                    let b = bias.as_ref().map(|b| tape.constant(b.clone()));
                    fc_apply(&mut tape, x0.expect("fc input"), w, b, None, *act)?
                }
                CompactOp::Conv2d { weight, bias, stride, padding, act } => {
                    let w = tape.constant(weight.clone());
                    let b = bias.as_ref().map(|b| tape.constant(b.clone()));
                    conv_apply(&mut tape, x0.expect("conv input"), w, b, None, *stride, *padding, *act)?
                }
                CompactOp::Flatten => flatten_apply(&mut tape, x0.expect("flatten input"))?,
                CompactOp::Concat => tape.concat(&ins, node.layout.unit_axis() + 1)?,
                CompactOp::Embedding { table } => {
                    let t = tape.constant(table.clone());
                    embedding_apply(&mut tape, &node.name, x0.expect("embedding input"), t)?
                }
                CompactOp::Gin { weight, eps, edge_embed, act } => {
                    let g = graph_vars()?;
                    let w = tape.constant(weight.clone());
                    let e = tape.constant(eps.clone());
                    let ee = tape.constant(edge_embed.clone());
                    gin_apply(&mut tape, x0.expect("gin input"), g, w, e, ee, None, *act)?
                }
                CompactOp::Gcn { w1, b1, w2, b2, root, act } => {
                    let g = graph_vars()?;
                    let p = GcnVars {
                        w1: tape.constant(w1.clone()),
                        b1: tape.constant(b1.clone()),
                        w2: tape.constant(w2.clone()),
                        b2: tape.constant(b2.clone()),
                        root: tape.constant(root.clone()),
                    };
                    gcn_apply(&mut tape, x0.expect("gcn input"), g, &p, None, *act)?
                }
                CompactOp::Attention { heads, wq, wk, wv, wo, rows } => {
                    let p = AttentionVars {
                        wq: tape.constant(wq.clone()),
                        wk: tape.constant(wk.clone()),
                        wv: tape.constant(wv.clone()),
                        wo: tape.constant(wo.clone()),
                    };
                    attention_apply(&mut tape, x0.expect("attention input"), &p, [None; 3], Some(rows), *heads)?
                }
                CompactOp::Pool => {
                    let g = graph_vars()?;
                    tape.matmul(g.pool, x0.expect("pool input"))?
                }
                CompactOp::Add => sum_apply(&mut tape, &ins)?,
            };
            values.push(v);
        }
        Ok(tape.value(values[self.output]).clone())
    }
}

/// Deviation between a gated model in evaluation mode and its compact form.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub max_abs: f64,
    /// `max_abs` over the largest reference magnitude.
    pub max_rel: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Runs both models on `batch` and compares every output element.
pub fn verify_equivalence(
    original: &Model,
    compact: &CompactModel,
    batch: &Batch,
    tol: f64,
) -> Result<EquivalenceReport, ExtractionError> {
    let reference = original.predict(batch)?;
    let got = compact.forward(batch)?;
    let max_abs = reference.max_abs_diff(&got).ok_or_else(|| {
        ExtractionError::Input(format!("output shapes differ: {:?} vs {:?}", reference.shape(), got.shape()))
    })?;
    let scale = reference.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_rel = if scale > 0.0 { max_abs / scale } else { max_abs };
    Ok(EquivalenceReport { samples: batch.samples(), max_abs, max_rel, tol, passed: max_abs <= tol })
}

/// Random inputs matching the model input: uniform features in `[-1, 1]`,
/// integer ids for embedding inputs, small random graphs for graph models.
pub fn sample_batch(graph: &ModelGraph, n: usize, rng: &mut RngStream) -> Result<Batch, ExtractionError> {
    let layout = graph.input_layout();
    if graph.graph_input {
        let width = layout.units();
        let mut graphs = Vec::with_capacity(n);
        for _ in 0..n {
            let v = 2 + rng.below(5);
            let nodes = (0..v).map(|_| (0..width).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
            let mut edges = vec![];
            for s in 0..v {
                for d in 0..v {
                    if s != d && rng.unit_open() < 0.4 {
                        edges.push((s, d));
                    }
                }
            }
            let edge_features =
                edges.iter().map(|_| (0..graph.edge_features).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
            graphs.push(Graph { nodes, edges, edge_features, root: rng.below(v) });
        }
        let refs: Vec<&Graph> = graphs.iter().collect();
        return Batch::from_graphs(&refs, width, graph.edge_features)
            .map_err(|e| ExtractionError::Input(e.to_string()));
    }
    let vocab = graph.consumers()[graph.input].iter().find_map(|&c| match graph.nodes[c].op {
        NodeOp::Embedding { vocab, .. } => Some(vocab),
        _ => None,
    });
    let mut shape = vec![n];
    shape.extend(layout.shape());
    let numel = shape.iter().product();
    let data = match vocab {
        Some(v) => (0..numel).map(|_| rng.below(v) as f64).collect(),
        None => (0..numel).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    };
    Ok(Batch::dense(Tensor::new(shape, data)?))
}

/// Elements removed from one original tensor along one axis, or the whole
/// tensor when `axis` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedSlice {
    pub key: String,
    pub axis: Option<usize>,
    pub removed: Vec<usize>,
    pub elements: usize,
}

fn complement(kept: &[usize], extent: usize) -> Vec<usize> {
    (0..extent).filter(|i| kept.binary_search(i).is_err()).collect()
}

/// Every slice of `original`'s parameters that extraction on `reduced` under
/// `masks` leaves out. Axes are removed in ascending order, each counted
/// against the extents left by earlier removals.
pub fn pruned_slices(original: &ModelGraph, reduced: &ModelGraph, masks: &MaskTable) -> Vec<PrunedSlice> {
    let mut out = vec![];
    for (key, shape) in original.param_slots() {
        let (node, role) = key.rsplit_once('.').expect("param keys are node.role");
        let whole = PrunedSlice { key: key.clone(), axis: None, removed: vec![], elements: shape.iter().product() };
        let Some(i) = reduced.index_of(node) else {
            out.push(whole);
            continue;
        };
        let m = &masks.nodes[i];
        if m.output_mask.is_empty() {
            out.push(whole);
            continue;
        }
        let p = m.output_mask.clone();
        let r = m.reads.first().cloned().unwrap_or_default();
        let kept_axes: Vec<(usize, Vec<usize>)> = match (&reduced.nodes[i].op, role) {
            (NodeOp::Fc { .. } | NodeOp::Gin { .. }, "weight") | (NodeOp::Gcn { .. }, "w1") => vec![(0, r), (1, p)],
            (NodeOp::Conv2d { .. }, "weight") => vec![(0, p), (1, r)],
            (_, "bias" | "b1" | "b2") => vec![(0, p)],
            (NodeOp::Gin { .. }, "edge_embed") => vec![(1, r)],
            (NodeOp::Gcn { .. }, "w2" | "root") | (NodeOp::Embedding { .. }, "table") | (NodeOp::Attention { .. }, "wo") => {
                vec![(1, p)]
            }
            (NodeOp::Attention { .. }, "wq" | "wk" | "wv") => {
                let gate = format!("{node}.gate_{}", &role[1..]);
                vec![(0, masks.snapshots[&gate].kept())]
            }
            _ => vec![],
        };
        let mut extents = shape.clone();
        for (axis, kept) in kept_axes {
            let removed = complement(&kept, extents[axis]);
            if removed.is_empty() {
                continue;
            }
            let others: usize = extents.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, e)| e).product();
            out.push(PrunedSlice { key: key.clone(), axis: Some(axis), elements: removed.len() * others, removed });
            extents[axis] = kept.len();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::GateConfig;

    fn mlp(json: &str) -> Model {
        Model::new(serde_json::from_str(json).unwrap(), GateConfig::default(), 11).unwrap()
    }

    #[test]
    fn open_gates_copy_weights_bit_for_bit() {
        let mut m = mlp(r#"{"nodes":[{"kind":"input","name":"x","shape":[4]},{"kind":"fc","name":"o","units":3}]}"#);
        m.gates.get_mut("o.gate").unwrap().log_alpha = Tensor::vector(vec![50.0; 4]);
        let ex = extract_model(&m).unwrap();
        match &ex.compact.nodes[1].op {
            CompactOp::Fc { weight, bias, .. } => {
                assert_eq!(weight, &m.params["o.weight"]);
                assert_eq!(bias.as_ref().unwrap(), &m.params["o.bias"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_pruned_rows_leave_forty_parameters() {
        let mut m = mlp(r#"{"nodes":[{"kind":"input","name":"x","shape":[10]},{"kind":"fc","name":"o","units":5}]}"#);
        let mut la = vec![50.0; 10];
        for r in [1, 4, 8] {
            la[r] = -50.0;
        }
        m.gates.get_mut("o.gate").unwrap().log_alpha = Tensor::vector(la);
        let ex = extract_model(&m).unwrap();
        assert_eq!(ex.compact.param_count(), 40);
        assert_eq!(ex.compact.input_keep, vec![0, 2, 3, 5, 6, 7, 9]);
        let slices = pruned_slices(&m.graph, &ex.graph, &ex.masks);
        assert_eq!(slices.iter().map(|s| s.elements).sum::<usize>(), 15);
    }

    #[test]
    fn select_positions_are_relative() {
        assert_eq!(select_positions(&[2, 7], &[1, 2, 5, 7]), Some(vec![1, 3]));
        assert_eq!(select_positions(&[1, 2], &[1, 2]), None);
    }
}
