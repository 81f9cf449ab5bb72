//! Mask bookkeeping: which units of every node survive extraction.
//!
//! Propagation runs in three sweeps over the topologically ordered graph.
//!
//! 1. Forward, unit states. Each output unit is either `Live` (depends on the
//!    input) or `Const(c)` (the same value for every input). Closed conv
//!    channels give `act(b)`, closed gcn channels give `act(0)`, and a layer
//!    whose open inputs are all constant gives a constant.
//! 2. Backward, requests. The output needs all units. Each consumer states
//!    which producer units it reads; constants are not read when the consumer
//!    can fold them into a bias, and units behind closed gates are never read.
//! 3. Forward, production. Weighted nodes produce exactly the requested
//!    units; flatten, concat and pool produce the image of what their inputs
//!    produce under the index remapping rules.
//!
//! A consumer reading a strict subset of its producer's output (fan-out)
//! selects its units on the edge.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::gate::GateSnapshot;
use crate::graph::{GraphError, Layout, ModelGraph, NodeOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("no gate snapshot for `{0}`")]
    MissingSnapshot(String),
    #[error("snapshot `{key}` has {actual} entries, gate has {expected}")]
    SnapshotLength { key: String, expected: usize, actual: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("index {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },
    #[error("residual block `{block}`: dead branch node `{node}` also feeds `{consumer}` outside the block")]
    Topology { block: String, node: String, consumer: String },
    #[error("add node `{0}` has no surviving input for units that are still needed")]
    EmptyAdd(String),
    #[error("edge `{producer}` -> `{consumer}`: {detail}")]
    Executability { producer: String, consumer: String, detail: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `input_mask[i] = output_mask[j] * w * h + k` for `k in 0..w*h`: flat
/// indices of kept channels of a channel-major `[c, h, w]` map.
pub fn conv2fc_map(output_mask: &[usize], w: usize, h: usize) -> Vec<usize> {
    let area = w * h;
    output_mask.iter().flat_map(|&c| c * area..(c + 1) * area).collect()
}

/// Flat indices of kept units after flattening a per-sample layout.
pub fn flatten_map(layout: Layout, mask: &[usize]) -> Vec<usize> {
    match layout {
        Layout::Vector(_) => mask.to_vec(),
        Layout::Image { h, w, .. } => conv2fc_map(mask, w, h),
        Layout::Sequence { t, d } => (0..t).flat_map(|s| mask.iter().map(move |&j| s * d + j)).collect(),
    }
}

/// Units of `layout` touched by flat indices.
pub fn unflatten_units(layout: Layout, flat: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = match layout {
        Layout::Vector(_) => flat.iter().copied().collect(),
        Layout::Image { h, w, .. } => flat.iter().map(|&i| i / (h * w)).collect(),
        Layout::Sequence { d, .. } => flat.iter().map(|&i| i % d).collect(),
    };
    set.into_iter().collect()
}

/// `mask_a ∪ {i + extent_a : i ∈ mask_b}`.
pub fn concat_coordinate(mask_a: &[usize], extent_a: usize, mask_b: &[usize]) -> Vec<usize> {
    let mut out = mask_a.to_vec();
    out.extend(mask_b.iter().map(|i| i + extent_a));
    out
}

/// Embedding columns kept to match the consuming layer's kept inputs.
pub fn share_embedding_mask(fc_input_mask: &[usize], embedding_width: usize) -> Result<Vec<usize>, ConsistencyError> {
    if let Some(&bad) = fc_input_mask.iter().find(|&&i| i >= embedding_width) {
        return Err(ConsistencyError::Index { index: bad, extent: embedding_width });
    }
    Ok(fc_input_mask.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnitState {
    Live,
    Const(f64),
}

impl UnitState {
    pub fn is_zero(&self) -> bool {
        *self == UnitState::Const(0.0)
    }
}

/// Masks of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeMasks {
    pub name: String,
    pub kind: &'static str,
    /// Units along the input unit axis this node reads (concatenated over
    /// inputs for concat).
    pub input_mask: Vec<usize>,
    /// Units this node produces.
    pub output_mask: Vec<usize>,
    pub input_extent: usize,
    pub output_extent: usize,
    /// Per input edge, producer units read.
    pub reads: Vec<Vec<usize>>,
    pub states: Vec<UnitState>,
}

/// Per-node masks plus the gate snapshots they were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTable {
    pub nodes: Vec<NodeMasks>,
    pub snapshots: BTreeMap<String, GateSnapshot>,
}

impl MaskTable {
    pub fn get(&self, name: &str) -> Option<&NodeMasks> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Kept model input units (selected features).
    pub fn input_keep(&self, graph: &ModelGraph) -> &[usize] {
        &self.nodes[graph.input].output_mask
    }

    /// Human-readable audit listing.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            s.push_str(&format!(
                "{} {} in {}/{} {:?} out {}/{} {:?}\n",
                n.name,
                n.kind,
                n.input_mask.len(),
                n.input_extent,
                n.input_mask,
                n.output_mask.len(),
                n.output_extent,
                n.output_mask
            ));
        }
        s
    }
}

fn snapshot<'a>(
    snaps: &'a BTreeMap<String, GateSnapshot>,
    key: &str,
    len: usize,
) -> Result<&'a GateSnapshot, ConsistencyError> {
    let s = snaps.get(key).ok_or_else(|| ConsistencyError::MissingSnapshot(key.to_string()))?;
    if s.len() != len {
        return Err(ConsistencyError::SnapshotLength { key: key.to_string(), expected: len, actual: s.len() });
    }
    Ok(s)
}

fn param(params: &BTreeMap<String, Tensor>, key: String) -> Result<&Tensor, ConsistencyError> {
    params.get(&key).ok_or(ConsistencyError::MissingParam(key))
}

fn all_const(states: &[UnitState]) -> Option<Vec<f64>> {
    states
        .iter()
        .map(|s| match s {
            UnitState::Const(c) => Some(*c),
            UnitState::Live => None,
        })
        .collect()
}

/// Derives the mask table for `graph` under frozen gate decisions.
pub fn propagate_masks(
    graph: &ModelGraph,
    params: &BTreeMap<String, Tensor>,
    snapshots: &BTreeMap<String, GateSnapshot>,
) -> Result<MaskTable, ConsistencyError> {
    let n = graph.nodes.len();
    let mut snaps: Vec<Vec<&GateSnapshot>> = Vec::with_capacity(n);
    for i in 0..n {
        let node = &graph.nodes[i];
        let mut v = vec![];
        for (role, len) in node.op.gates(graph.input_layout_of(i)) {
            v.push(snapshot(snapshots, &format!("{}.{role}", node.name), len)?);
        }
        snaps.push(v);
    }
    let states = unit_states(graph, params, &snaps)?;
    let (requested, reads) = requests(graph, &states, &snaps)?;
    let produced = production(graph, &requested);
    let mut nodes = Vec::with_capacity(n);
    for (i, node) in graph.nodes.iter().enumerate() {
        let mut reads_i = reads[i].clone();
        if matches!(node.op, NodeOp::Flatten | NodeOp::Concat | NodeOp::Pool) {
            reads_i = node.inputs.iter().map(|&p| if produced[i].is_empty() { vec![] } else { produced[p].clone() }).collect();
        }
        let input_extent = match node.op {
            NodeOp::Concat => node.inputs.iter().map(|&p| graph.nodes[p].layout.units()).sum(),
            _ => graph.input_layout_of(i).map(|l| l.units()).unwrap_or(0),
        };
        let input_mask = match node.op {
            NodeOp::Concat => {
                let mut acc = vec![];
                let mut offset = 0;
                for (k, &p) in node.inputs.iter().enumerate() {
                    acc = concat_coordinate(&acc, offset, &reads_i[k]);
                    offset += graph.nodes[p].layout.units();
                }
                acc
            }
            NodeOp::Add => {
                let set: BTreeSet<usize> = reads_i.iter().flatten().copied().collect();
                set.into_iter().collect()
            }
            NodeOp::Input => vec![],
            _ => reads_i.first().cloned().unwrap_or_default(),
        };
        nodes.push(NodeMasks {
            name: node.name.clone(),
            kind: node.op.kind(),
            input_mask,
            output_mask: produced[i].clone(),
            input_extent,
            output_extent: node.layout.units(),
            reads: reads_i,
            states: states[i].clone(),
        });
    }
    let table = MaskTable { nodes, snapshots: snapshots.clone() };
    check_executable(graph, &table)?;
    Ok(table)
}

fn unit_states(
    graph: &ModelGraph,
    params: &BTreeMap<String, Tensor>,
    snaps: &[Vec<&GateSnapshot>],
) -> Result<Vec<Vec<UnitState>>, ConsistencyError> {
    let mut states: Vec<Vec<UnitState>> = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let units = node.layout.units();
        let key = |role: &str| format!("{}.{role}", node.name);
        let input = node.inputs.first().map(|&p| &states[p]);
        let live = vec![UnitState::Live; units];
        let s = match &node.op {
            NodeOp::Input | NodeOp::Embedding { .. } => live,
            NodeOp::Fc { units: k, bias, act } => {
                let g = snaps[i][0];
                let input = input.expect("fc has an input");
                let contributing_live = (0..g.len()).any(|r| g.keep[r] && input[r] == UnitState::Live);
                if contributing_live {
                    live
                } else {
                    let w = param(params, key("weight"))?;
                    let b = if *bias { Some(param(params, key("bias"))?) } else { None };
                    (0..*k)
                        .map(|j| {
                            let mut z = b.map(|b| b.data()[j]).unwrap_or(0.0);
                            for (r, st) in input.iter().enumerate() {
                                if let (true, UnitState::Const(c)) = (g.keep[r], st) {
                                    z += c * (g.values[r] * w.data()[r * k + j]);
                                }
                            }
                            UnitState::Const(act.value(z))
                        })
                        .collect()
                }
            }
            NodeOp::Conv2d { channels, kh, kw, padding, bias, act, .. } => {
                let g = snaps[i][0];
                let input = input.expect("conv has an input");
                let b = if *bias { Some(param(params, key("bias"))?) } else { None };
                let consts = all_const(input).filter(|_| *padding == 0);
                let w = param(params, key("weight"))?;
                let c_in = input.len();
                (0..*channels)
                    .map(|d| {
                        let bd = b.map(|b| b.data()[d]).unwrap_or(0.0);
                        if !g.keep[d] {
                            return UnitState::Const(act.value(bd));
                        }
                        match &consts {
                            Some(cs) => {
                                let mut z = 0.0;
                                for (c, val) in cs.iter().enumerate() {
                                    let start = (d * c_in + c) * kh * kw;
                                    let s: f64 = w.data()[start..start + kh * kw].iter().sum();
                                    z += val * s;
                                }
                                UnitState::Const(act.value(bd + g.values[d] * z))
                            }
                            None => UnitState::Live,
                        }
                    })
                    .collect()
            }
            NodeOp::Gin { act, .. } => {
                if snaps[i][0].all_closed() {
                    vec![UnitState::Const(act.value(0.0)); units]
                } else {
                    live
                }
            }
            NodeOp::Gcn { act, .. } => {
                let g = snaps[i][0];
                g.keep.iter().map(|&k| if k { UnitState::Live } else { UnitState::Const(act.value(0.0)) }).collect()
            }
            NodeOp::Attention { .. } => {
                if snaps[i][2].all_closed() {
                    vec![UnitState::Const(0.0); units]
                } else {
                    live
                }
            }
            NodeOp::Flatten => {
                let src = graph.nodes[node.inputs[0]].layout;
                let input = input.expect("flatten has an input");
                (0..units).map(|f| input[unflatten_units(src, &[f])[0]]).collect()
            }
            NodeOp::Concat => node.inputs.iter().flat_map(|&p| states[p].iter().copied()).collect(),
            NodeOp::Pool => input.expect("pool has an input").clone(),
            NodeOp::Add => (0..units)
                .map(|u| {
                    let mut total = 0.0;
                    for &p in &node.inputs {
                        match states[p][u] {
                            UnitState::Const(c) => total += c,
                            UnitState::Live => return UnitState::Live,
                        }
                    }
                    UnitState::Const(total)
                })
                .collect(),
        };
        states.push(s);
    }
    Ok(states)
}

type Requests = (Vec<BTreeSet<usize>>, Vec<Vec<Vec<usize>>>);

fn requests(
    graph: &ModelGraph,
    states: &[Vec<UnitState>],
    snaps: &[Vec<&GateSnapshot>],
) -> Result<Requests, ConsistencyError> {
    let n = graph.nodes.len();
    let mut requested: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut reads: Vec<Vec<Vec<usize>>> = graph.nodes.iter().map(|nd| vec![vec![]; nd.inputs.len()]).collect();
    requested[graph.output] = (0..graph.nodes[graph.output].layout.units()).collect();
    for i in (0..n).rev() {
        let node = &graph.nodes[i];
        if requested[i].is_empty() {
            continue;
        }
        let want: Vec<usize> = requested[i].iter().copied().collect();
        let input_states = node.inputs.first().map(|&p| &states[p]);
        let per_edge: Vec<Vec<usize>> = match &node.op {
            NodeOp::Input => vec![],
            NodeOp::Fc { bias, .. } => {
                let g = snaps[i][0];
                let st = input_states.expect("fc input");
                let r = (0..g.len())
                    .filter(|&r| {
                        g.keep[r]
                            && match st[r] {
                                UnitState::Live => true,
                                UnitState::Const(c) => c != 0.0 && !bias,
                            }
                    })
                    .collect();
                vec![r]
            }
            NodeOp::Conv2d { padding, bias, .. } => {
                let g = snaps[i][0];
                let st = input_states.expect("conv input");
                let any_open = want.iter().any(|&d| g.keep[d]);
                let absorb = *bias && *padding == 0;
                let r = if any_open {
                    (0..st.len())
                        .filter(|&c| match st[c] {
                            UnitState::Live => true,
                            UnitState::Const(v) => v != 0.0 && !absorb,
                        })
                        .collect()
                } else {
                    vec![]
                };
                vec![r]
            }
            NodeOp::Gin { .. } => vec![snaps[i][0].kept()],
            NodeOp::Gcn { .. } => {
                let st = input_states.expect("gcn input");
                vec![(0..st.len()).filter(|&u| st[u] == UnitState::Live).collect()]
            }
            NodeOp::Attention { .. } | NodeOp::Embedding { .. } => {
                let units = graph.nodes[node.inputs[0]].layout.units();
                vec![(0..units).collect()]
            }
            NodeOp::Flatten => {
                let src = graph.nodes[node.inputs[0]].layout;
                vec![unflatten_units(src, &want)]
            }
            NodeOp::Concat => {
                let mut out = vec![];
                let mut base = 0;
                for &p in &node.inputs {
                    let ext = graph.nodes[p].layout.units();
                    out.push(want.iter().filter(|&&u| u >= base && u < base + ext).map(|u| u - base).collect());
                    base += ext;
                }
                out
            }
            NodeOp::Pool => vec![want.clone()],
            NodeOp::Add => {
                let mut out = vec![];
                for &p in &node.inputs {
                    let zero = want.iter().all(|&u| states[p][u].is_zero());
                    out.push(if zero { vec![] } else { want.clone() });
                }
                if out.iter().all(|r| r.is_empty()) && want.iter().any(|&u| !states[i][u].is_zero()) {
                    return Err(ConsistencyError::EmptyAdd(node.name.clone()));
                }
                if out.iter().all(|r| r.is_empty()) {
                    // All-zero sum: keep the skip path so the node still has a
                    // batch to add into.
                    out[0] = want.clone();
                }
                out
            }
        };
        for (k, &p) in node.inputs.iter().enumerate() {
            requested[p].extend(per_edge[k].iter().copied());
        }
        reads[i] = per_edge;
    }
    Ok((requested, reads))
}

fn production(graph: &ModelGraph, requested: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    let mut produced: Vec<Vec<usize>> = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        if requested[i].is_empty() && i != graph.input {
            produced.push(vec![]);
            continue;
        }
        let p = match node.op {
            NodeOp::Flatten => {
                let src = node.inputs[0];
                flatten_map(graph.nodes[src].layout, &produced[src])
            }
            NodeOp::Concat => {
                let mut acc = vec![];
                let mut offset = 0;
                for &src in &node.inputs {
                    acc = concat_coordinate(&acc, offset, &produced[src]);
                    offset += graph.nodes[src].layout.units();
                }
                acc
            }
            NodeOp::Pool => produced[node.inputs[0]].clone(),
            _ => requested[i].iter().copied().collect(),
        };
        produced.push(p);
    }
    produced
}

fn strictly_increasing_within(mask: &[usize], extent: usize) -> bool {
    mask.windows(2).all(|w| w[0] < w[1]) && mask.last().is_none_or(|&l| l < extent)
}

/// Every read is produced, masks are sorted and in range, and remapping
/// nodes produce exactly the image of their inputs.
pub fn check_executable(graph: &ModelGraph, table: &MaskTable) -> Result<(), ConsistencyError> {
    for (i, node) in graph.nodes.iter().enumerate() {
        let m = &table.nodes[i];
        let fail = |p: usize, detail: String| ConsistencyError::Executability {
            producer: graph.nodes[p].name.clone(),
            consumer: node.name.clone(),
            detail,
        };
        if !strictly_increasing_within(&m.output_mask, m.output_extent) {
            return Err(fail(i, format!("output mask {:?} not sorted within {}", m.output_mask, m.output_extent)));
        }
        for (k, &p) in node.inputs.iter().enumerate() {
            let produced: BTreeSet<usize> = table.nodes[p].output_mask.iter().copied().collect();
            let r = &m.reads[k];
            if !strictly_increasing_within(r, graph.nodes[p].layout.units()) {
                return Err(fail(p, format!("read set {r:?} not sorted within range")));
            }
            if let Some(u) = r.iter().find(|u| !produced.contains(u)) {
                return Err(fail(p, format!("reads unit {u} which is not produced")));
            }
        }
        let image = match node.op {
            NodeOp::Flatten if !m.output_mask.is_empty() => {
                let src = node.inputs[0];
                Some(flatten_map(graph.nodes[src].layout, &table.nodes[src].output_mask))
            }
            NodeOp::Pool if !m.output_mask.is_empty() => Some(table.nodes[node.inputs[0]].output_mask.clone()),
            NodeOp::Concat if !m.output_mask.is_empty() => Some(m.input_mask.clone()),
            _ => None,
        };
        if let Some(img) = image {
            if img != m.output_mask {
                return Err(fail(node.inputs[0], format!("remapped mask {img:?} != output mask {:?}", m.output_mask)));
            }
        }
    }
    Ok(())
}

/// Deletes residual branches whose output is identically zero and recomputes
/// the masks on the smaller graph.
pub fn remove_dead_blocks(
    graph: &ModelGraph,
    params: &BTreeMap<String, Tensor>,
    masks: &MaskTable,
) -> Result<(ModelGraph, MaskTable), ConsistencyError> {
    let consumers = graph.consumers();
    let mut drop = vec![];
    for (add, node) in graph.nodes.iter().enumerate() {
        if node.op != NodeOp::Add {
            continue;
        }
        for (_, members) in graph.branch_members(add) {
            let end = *members.last().expect("non-empty branch");
            if !masks.nodes[end].states.iter().all(UnitState::is_zero) {
                continue;
            }
            for &m in &members {
                for &c in &consumers[m] {
                    if c != add && !members.contains(&c) {
                        return Err(ConsistencyError::Topology {
                            block: node.name.clone(),
                            node: graph.nodes[m].name.clone(),
                            consumer: graph.nodes[c].name.clone(),
                        });
                    }
                }
            }
            drop.extend(members);
        }
    }
    if drop.is_empty() {
        return Ok((graph.clone(), masks.clone()));
    }
    let smaller = graph.without(&drop)?;
    let table = propagate_masks(&smaller, params, &masks.snapshots)?;
    Ok((smaller, table))
}
