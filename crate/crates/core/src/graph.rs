//! Declarative model description and its validated, shape-inferred form.
//!
//! A model is a list of named nodes. Each node reads the previous node unless
//! it names its `input` (or `inputs` for concat). Residual blocks hold one or
//! more branches and are expanded into flat nodes followed by an add node that
//! carries the block's name.
//!
//! Per-sample layouts and their unit axis (the axis that gates and masks
//! index):
//!
//! | layout     | shape       | units |
//! |------------|-------------|-------|
//! | `Vector`   | `[n]`       | `n`   |
//! | `Image`    | `[c, h, w]` | `c`   |
//! | `Sequence` | `[t, d]`    | `d`   |
//!
//! Graph inputs (`"graph": true`) carry one row per node; `pool` averages
//! node rows into one row per graph.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::kernels::{sigmoid, ConvGeom};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node `{node}`: {detail}")]
    Invalid { node: String, detail: String },
    #[error("duplicate node name `{0}`")]
    Duplicate(String),
    #[error("node `{node}` reads unknown node `{input}`")]
    UnknownInput { node: String, input: String },
    #[error("model needs exactly one input node, found {0}")]
    InputCount(usize),
    #[error("model has no nodes")]
    Empty,
}

fn invalid(node: &str, detail: impl Into<String>) -> GraphError {
    GraphError::Invalid { node: node.to_string(), detail: detail.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh].get(tag as usize).copied()
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// One entry of a model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeSpec {
    Input {
        name: String,
        shape: Vec<usize>,
        #[serde(default)]
        graph: bool,
        #[serde(default)]
        edge_features: usize,
    },
    Fc {
        name: String,
        #[serde(default)]
        input: Option<String>,
        units: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default)]
        activation: Option<Activation>,
    },
    Conv2d {
        name: String,
        #[serde(default)]
        input: Option<String>,
        channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default)]
        activation: Option<Activation>,
    },
    Flatten {
        name: String,
        #[serde(default)]
        input: Option<String>,
    },
    Concat {
        name: String,
        inputs: Vec<String>,
    },
    Embedding {
        name: String,
        #[serde(default)]
        input: Option<String>,
        vocab: usize,
        width: usize,
    },
    Gin {
        name: String,
        #[serde(default)]
        input: Option<String>,
        units: usize,
        #[serde(default)]
        activation: Option<Activation>,
    },
    Gcn {
        name: String,
        #[serde(default)]
        input: Option<String>,
        units: usize,
        #[serde(default)]
        activation: Option<Activation>,
    },
    Attention {
        name: String,
        #[serde(default)]
        input: Option<String>,
        inner: usize,
        #[serde(default = "one")]
        heads: usize,
        #[serde(default)]
        out: Option<usize>,
    },
    Pool {
        name: String,
        #[serde(default)]
        input: Option<String>,
    },
    ResidualBlock {
        name: String,
        #[serde(default)]
        input: Option<String>,
        branches: Vec<Vec<NodeSpec>>,
    },
}

impl NodeSpec {
    pub fn name(&self) -> &str {
        match self {
            NodeSpec::Input { name, .. }
            | NodeSpec::Fc { name, .. }
            | NodeSpec::Conv2d { name, .. }
            | NodeSpec::Flatten { name, .. }
            | NodeSpec::Concat { name, .. }
            | NodeSpec::Embedding { name, .. }
            | NodeSpec::Gin { name, .. }
            | NodeSpec::Gcn { name, .. }
            | NodeSpec::Attention { name, .. }
            | NodeSpec::Pool { name, .. }
            | NodeSpec::ResidualBlock { name, .. } => name,
        }
    }

    fn explicit_inputs(&self) -> Option<Vec<String>> {
        match self {
            NodeSpec::Input { .. } => Some(vec![]),
            NodeSpec::Concat { inputs, .. } => Some(inputs.clone()),
            NodeSpec::Fc { input, .. }
            | NodeSpec::Conv2d { input, .. }
            | NodeSpec::Flatten { input, .. }
            | NodeSpec::Embedding { input, .. }
            | NodeSpec::Gin { input, .. }
            | NodeSpec::Gcn { input, .. }
            | NodeSpec::Attention { input, .. }
            | NodeSpec::Pool { input, .. }
            | NodeSpec::ResidualBlock { input, .. } => input.clone().map(|i| vec![i]),
        }
    }
}

/// Serializable model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub nodes: Vec<NodeSpec>,
    /// Output node; defaults to the last top-level node.
    #[serde(default)]
    pub output: Option<String>,
}

/// Per-sample tensor layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Vector(usize),
    Image { c: usize, h: usize, w: usize },
    Sequence { t: usize, d: usize },
}

impl Layout {
    pub fn from_shape(shape: &[usize]) -> Option<Self> {
        match *shape {
            [n] => Some(Layout::Vector(n)),
            [t, d] => Some(Layout::Sequence { t, d }),
            [c, h, w] => Some(Layout::Image { c, h, w }),
            _ => None,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match *self {
            Layout::Vector(n) => vec![n],
            Layout::Image { c, h, w } => vec![c, h, w],
            Layout::Sequence { t, d } => vec![t, d],
        }
    }

    pub fn units(&self) -> usize {
        match *self {
            Layout::Vector(n) => n,
            Layout::Image { c, .. } => c,
            Layout::Sequence { d, .. } => d,
        }
    }

    /// Unit axis within the per-sample shape.
    pub fn unit_axis(&self) -> usize {
        match self {
            Layout::Vector(_) | Layout::Image { .. } => 0,
            Layout::Sequence { .. } => 1,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn with_units(&self, units: usize) -> Self {
        match *self {
            Layout::Vector(_) => Layout::Vector(units),
            Layout::Image { h, w, .. } => Layout::Image { c: units, h, w },
            Layout::Sequence { t, .. } => Layout::Sequence { t, d: units },
        }
    }

    fn same_kind(&self, other: &Layout) -> bool {
        matches!(
            (self, other),
            (Layout::Vector(_), Layout::Vector(_))
                | (Layout::Image { .. }, Layout::Image { .. })
                | (Layout::Sequence { .. }, Layout::Sequence { .. })
        )
    }
}

/// Where a node sits inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRef {
    /// Index of the block's add node.
    pub block: usize,
    pub branch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeOp {
    Input,
    Fc { units: usize, bias: bool, act: Activation },
    Conv2d { channels: usize, kh: usize, kw: usize, stride: usize, padding: usize, bias: bool, act: Activation },
    Flatten,
    Concat,
    Embedding { vocab: usize, width: usize },
    Gin { units: usize, act: Activation },
    Gcn { units: usize, act: Activation },
    Attention { inner: usize, heads: usize, out: usize },
    Pool,
    Add,
}

impl NodeOp {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeOp::Input => "input",
            NodeOp::Fc { .. } => "fc",
            NodeOp::Conv2d { .. } => "conv2d",
            NodeOp::Flatten => "flatten",
            NodeOp::Concat => "concat",
            NodeOp::Embedding { .. } => "embedding",
            NodeOp::Gin { .. } => "gin",
            NodeOp::Gcn { .. } => "gcn",
            NodeOp::Attention { .. } => "attention",
            NodeOp::Pool => "pool",
            NodeOp::Add => "add",
        }
    }

    /// Gate vectors owned by this op as `(role, length)` given its input layout.
    pub fn gates(&self, input: Option<Layout>) -> Vec<(&'static str, usize)> {
        let units = input.map(|l| l.units()).unwrap_or(0);
        match self {
            NodeOp::Fc { .. } | NodeOp::Gin { .. } => vec![("gate", units)],
            NodeOp::Conv2d { channels, .. } => vec![("gate", *channels)],
            NodeOp::Gcn { units, .. } => vec![("gate", *units)],
            NodeOp::Attention { .. } => vec![("gate_q", units), ("gate_k", units), ("gate_v", units)],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: NodeOp,
    pub inputs: Vec<usize>,
    pub layout: Layout,
    /// Rows are graph nodes rather than samples.
    pub node_level: bool,
    pub branch: Option<BranchRef>,
}

/// Validated model topology with inferred per-sample layouts. Nodes are stored
/// in a topological order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub nodes: Vec<Node>,
    pub input: usize,
    pub output: usize,
    pub graph_input: bool,
    pub edge_features: usize,
}

impl ModelGraph {
    pub fn build(spec: &ModelSpec) -> Result<Self, GraphError> {
        Builder::default().run(spec)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn input_layout(&self) -> Layout {
        self.nodes[self.input].layout
    }

    pub fn output_layout(&self) -> Layout {
        self.nodes[self.output].layout
    }

    /// Input layout of node `i` (first input for multi-input nodes).
    pub fn input_layout_of(&self, i: usize) -> Option<Layout> {
        self.nodes[i].inputs.first().map(|&p| self.nodes[p].layout)
    }

    /// For each node, the nodes that read it.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &p in &n.inputs {
                out[p].push(i);
            }
        }
        out
    }

    /// Gate vectors of the whole model keyed `node.role`, with lengths.
    pub fn gate_slots(&self) -> Vec<(String, usize)> {
        let mut out = vec![];
        for (i, n) in self.nodes.iter().enumerate() {
            for (role, len) in n.op.gates(self.input_layout_of(i)) {
                out.push((format!("{}.{role}", n.name), len));
            }
        }
        out
    }

    /// Weight tensors of the whole model keyed `node.role`, with shapes.
    pub fn param_slots(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![];
        for (i, n) in self.nodes.iter().enumerate() {
            let inp = self.input_layout_of(i).map(|l| l.units()).unwrap_or(0);
            let key = |role: &str| format!("{}.{role}", n.name);
            match &n.op {
                NodeOp::Fc { units, bias, .. } => {
                    out.push((key("weight"), vec![inp, *units]));
                    if *bias {
                        out.push((key("bias"), vec![*units]));
                    }
                }
                NodeOp::Conv2d { channels, kh, kw, bias, .. } => {
                    out.push((key("weight"), vec![*channels, inp, *kh, *kw]));
                    if *bias {
                        out.push((key("bias"), vec![*channels]));
                    }
                }
                NodeOp::Embedding { vocab, width } => out.push((key("table"), vec![*vocab, *width])),
                NodeOp::Gin { units, .. } => {
                    out.push((key("weight"), vec![inp, *units]));
                    out.push((key("eps"), vec![1]));
                    out.push((key("edge_embed"), vec![self.edge_features, inp]));
                }
                NodeOp::Gcn { units, .. } => {
                    out.push((key("w1"), vec![inp, *units]));
                    out.push((key("b1"), vec![*units]));
                    out.push((key("w2"), vec![self.edge_features, *units]));
                    out.push((key("b2"), vec![*units]));
                    out.push((key("root"), vec![2, *units]));
                }
                NodeOp::Attention { inner, out: o, .. } => {
                    out.push((key("wq"), vec![inp, *inner]));
                    out.push((key("wk"), vec![inp, *inner]));
                    out.push((key("wv"), vec![inp, *inner]));
                    out.push((key("wo"), vec![*inner, *o]));
                }
                _ => {}
            }
        }
        out
    }

    /// Nodes of each branch of the residual block whose add node is `block`.
    pub fn branch_members(&self, block: usize) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(b) = n.branch {
                if b.block == block {
                    out.entry(b.branch).or_default().push(i);
                }
            }
        }
        out
    }

    /// Copy of the graph without the nodes in `drop`; indices are remapped.
    pub fn without(&self, drop: &[usize]) -> Result<Self, GraphError> {
        let mut remap = vec![None; self.nodes.len()];
        let mut next = 0;
        for (i, slot) in remap.iter_mut().enumerate() {
            if !drop.contains(&i) {
                *slot = Some(next);
                next += 1;
            }
        }
        let mut nodes = vec![];
        for (i, n) in self.nodes.iter().enumerate() {
            if remap[i].is_none() {
                continue;
            }
            let mut inputs = vec![];
            for &p in &n.inputs {
                match remap[p] {
                    Some(q) => inputs.push(q),
                    None if n.op == NodeOp::Add => {}
                    None => {
                        return Err(invalid(&n.name, format!("would lose its input `{}`", self.nodes[p].name)));
                    }
                }
            }
            let branch = match n.branch {
                Some(b) => match remap[b.block] {
                    Some(block) => Some(BranchRef { block, branch: b.branch }),
                    None => return Err(invalid(&n.name, "its residual block was removed")),
                },
                None => None,
            };
            nodes.push(Node { inputs, branch, ..n.clone() });
        }
        let (input, output) = match (remap[self.input], remap[self.output]) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(invalid(&self.nodes[self.output].name, "cannot drop the model input or output")),
        };
        Ok(Self { nodes, input, output, graph_input: self.graph_input, edge_features: self.edge_features })
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<Node>,
    by_name: HashMap<String, usize>,
    graph_input: bool,
    edge_features: usize,
    inputs_seen: usize,
    implicit_act: std::collections::HashSet<usize>,
}

impl Builder {
    fn run(mut self, spec: &ModelSpec) -> Result<ModelGraph, GraphError> {
        if spec.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut prev = None;
        for s in &spec.nodes {
            prev = Some(self.add(s, prev, None)?);
        }
        if self.inputs_seen != 1 {
            return Err(GraphError::InputCount(self.inputs_seen));
        }
        let output = match &spec.output {
            Some(name) => *self
                .by_name
                .get(name)
                .ok_or_else(|| GraphError::UnknownInput { node: "<output>".into(), input: name.clone() })?,
            None => prev.expect("non-empty"),
        };
        let input = self.nodes.iter().position(|n| n.op == NodeOp::Input).expect("one input");
        self.resolve_default_activations(output);
        Ok(ModelGraph {
            nodes: self.nodes,
            input,
            output,
            graph_input: self.graph_input,
            edge_features: self.edge_features,
        })
    }

    // Activations left unspecified default to ReLU, except on the output node.
    fn resolve_default_activations(&mut self, output: usize) {
        if !self.implicit_act.contains(&output) {
            return;
        }
        match &mut self.nodes[output].op {
            NodeOp::Fc { act, .. } | NodeOp::Conv2d { act, .. } | NodeOp::Gin { act, .. } | NodeOp::Gcn { act, .. } => {
                *act = Activation::Identity
            }
            _ => {}
        }
    }

    fn lookup(&self, node: &str, input: &str) -> Result<usize, GraphError> {
        self.by_name
            .get(input)
            .copied()
            .ok_or_else(|| GraphError::UnknownInput { node: node.into(), input: input.into() })
    }

    fn push(&mut self, node: Node) -> Result<usize, GraphError> {
        if self.by_name.contains_key(&node.name) {
            return Err(GraphError::Duplicate(node.name));
        }
        let idx = self.nodes.len();
        self.by_name.insert(node.name.clone(), idx);
        self.nodes.push(node);
        Ok(idx)
    }

    fn add(&mut self, s: &NodeSpec, prev: Option<usize>, branch: Option<(usize, usize, usize)>) -> Result<usize, GraphError> {
        let name = s.name().to_string();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(invalid(&name, "names must be non-empty without whitespace"));
        }
        let inputs: Vec<usize> = match s.explicit_inputs() {
            Some(list) => list.iter().map(|i| self.lookup(&name, i)).collect::<Result<_, _>>()?,
            None => vec![prev.ok_or_else(|| invalid(&name, "has no preceding node to read"))?],
        };
        if let Some((block_input, first, _)) = branch {
            for &i in &inputs {
                if i != block_input && i < first {
                    return Err(invalid(&name, "branch nodes may only read the block input or their own branch"));
                }
            }
        }
        if let NodeSpec::ResidualBlock { branches, .. } = s {
            return self.add_block(&name, inputs[0], branches, branch);
        }
        if let NodeSpec::Input { shape, graph, edge_features, .. } = s {
            if branch.is_some() {
                return Err(invalid(&name, "input nodes cannot sit inside a residual block"));
            }
            self.inputs_seen += 1;
            let layout = Layout::from_shape(shape)
                .filter(|l| l.shape().iter().all(|&e| e > 0))
                .ok_or_else(|| invalid(&name, format!("unsupported input shape {shape:?}")))?;
            if *graph && !matches!(layout, Layout::Vector(_)) {
                return Err(invalid(&name, "graph inputs carry one feature vector per node"));
            }
            self.graph_input = *graph;
            self.edge_features = *edge_features;
            return self.push(Node { name, op: NodeOp::Input, inputs, layout, node_level: *graph, branch: None });
        }
        let first = &self.nodes[inputs[0]];
        let (in_layout, node_level) = (first.layout, first.node_level);
        let fail = |d: String| Err(invalid(&name, d));
        let pick = |a: &Option<Activation>| a.unwrap_or(Activation::Relu);
        let (op, layout, node_level) = match s {
            NodeSpec::Fc { units, bias, activation, .. } => {
                if !matches!(in_layout, Layout::Vector(_)) {
                    return fail(format!("fc needs vector input, got {in_layout:?}"));
                }
                (NodeOp::Fc { units: *units, bias: *bias, act: pick(activation) }, Layout::Vector(*units), node_level)
            }
            NodeSpec::Conv2d { channels, kernel, stride, padding, bias, activation, .. } => {
                let Layout::Image { h, w, .. } = in_layout else {
                    return fail(format!("conv2d needs image input, got {in_layout:?}"));
                };
                if node_level {
                    return fail("conv2d cannot run on graph node rows".into());
                }
                if *stride == 0 {
                    return fail("stride must be at least 1".into());
                }
                let oh = ConvGeom::out_extent(h, kernel[0], *stride, *padding);
                let ow = ConvGeom::out_extent(w, kernel[1], *stride, *padding);
                let (Some(oh), Some(ow)) = (oh, ow) else {
                    return fail(format!(
                        "kernel {kernel:?} stride {stride} padding {padding} gives a non-integral output on {h}x{w}"
                    ));
                };
                let op = NodeOp::Conv2d {
                    channels: *channels,
                    kh: kernel[0],
                    kw: kernel[1],
                    stride: *stride,
                    padding: *padding,
                    bias: *bias,
                    act: pick(activation),
                };
                (op, Layout::Image { c: *channels, h: oh, w: ow }, false)
            }
            NodeSpec::Flatten { .. } => {
                if matches!(in_layout, Layout::Vector(_)) {
                    return fail("flatten input is already a vector".into());
                }
                (NodeOp::Flatten, Layout::Vector(in_layout.numel()), node_level)
            }
            NodeSpec::Concat { .. } => {
                if inputs.len() < 2 {
                    return fail("concat needs at least two inputs".into());
                }
                let mut units = 0;
                for &i in &inputs {
                    let n = &self.nodes[i];
                    let same_rest = n.layout.with_units(0) == in_layout.with_units(0);
                    if !n.layout.same_kind(&in_layout) || !same_rest || n.node_level != node_level {
                        return fail(format!("concat of incompatible `{}` {:?} and {:?}", n.name, n.layout, in_layout));
                    }
                    units += n.layout.units();
                }
                (NodeOp::Concat, in_layout.with_units(units), node_level)
            }
            NodeSpec::Embedding { vocab, width, .. } => {
                if in_layout != Layout::Vector(1) {
                    return fail(format!("embedding reads one id per row, got {in_layout:?}"));
                }
                if *vocab == 0 {
                    return fail("vocab must be positive".into());
                }
                (NodeOp::Embedding { vocab: *vocab, width: *width }, Layout::Vector(*width), node_level)
            }
            NodeSpec::Gin { units, activation, .. } | NodeSpec::Gcn { units, activation, .. } => {
                if !node_level {
                    return fail("graph layers need node rows from a graph input".into());
                }
                if !matches!(in_layout, Layout::Vector(_)) {
                    return fail(format!("graph layers need vector node features, got {in_layout:?}"));
                }
                let op = match s {
                    NodeSpec::Gin { .. } => NodeOp::Gin { units: *units, act: pick(activation) },
                    _ => NodeOp::Gcn { units: *units, act: pick(activation) },
                };
                (op, Layout::Vector(*units), true)
            }
            NodeSpec::Attention { inner, heads, out, .. } => {
                let Layout::Sequence { t, d } = in_layout else {
                    return fail(format!("attention needs sequence input, got {in_layout:?}"));
                };
                if *heads == 0 || inner % heads != 0 || *inner == 0 {
                    return fail(format!("head count {heads} must divide projection width {inner}"));
                }
                let o = out.unwrap_or(d);
                (NodeOp::Attention { inner: *inner, heads: *heads, out: o }, Layout::Sequence { t, d: o }, false)
            }
            NodeSpec::Pool { .. } => {
                if !node_level {
                    return fail("pool reads graph node rows".into());
                }
                (NodeOp::Pool, in_layout, false)
            }
            NodeSpec::Input { .. } | NodeSpec::ResidualBlock { .. } => unreachable!(),
        };
        let branch_ref = branch.map(|(_, _, b)| BranchRef { block: usize::MAX, branch: b });
        let implicit = matches!(
            s,
            NodeSpec::Fc { activation: None, .. }
                | NodeSpec::Conv2d { activation: None, .. }
                | NodeSpec::Gin { activation: None, .. }
                | NodeSpec::Gcn { activation: None, .. }
        );
        if implicit {
            self.implicit_act.insert(self.nodes.len());
        }
        self.push(Node { name, op, inputs, layout, node_level, branch: branch_ref })
    }

    fn add_block(
        &mut self,
        name: &str,
        input: usize,
        branches: &[Vec<NodeSpec>],
        outer: Option<(usize, usize, usize)>,
    ) -> Result<usize, GraphError> {
        if outer.is_some() {
            return Err(invalid(name, "residual blocks cannot nest"));
        }
        if branches.is_empty() || branches.iter().any(|b| b.is_empty()) {
            return Err(invalid(name, "residual block needs non-empty branches"));
        }
        let skip = &self.nodes[input];
        let (skip_layout, skip_level, skip_name) = (skip.layout, skip.node_level, skip.name.clone());
        let mut ends = vec![input];
        let mut members = vec![];
        for (b, branch) in branches.iter().enumerate() {
            let first = self.nodes.len();
            let mut prev = input;
            for s in branch {
                prev = self.add(s, Some(prev), Some((input, first, b)))?;
            }
            let end = &self.nodes[prev];
            if end.layout != skip_layout || end.node_level != skip_level {
                return Err(invalid(
                    name,
                    format!(
                        "branch ending at `{}` produces {:?}, skip `{skip_name}` carries {skip_layout:?}",
                        end.name, end.layout
                    ),
                ));
            }
            ends.push(prev);
            members.extend(first..self.nodes.len());
        }
        let add = self.push(Node {
            name: name.to_string(),
            op: NodeOp::Add,
            inputs: ends,
            layout: skip_layout,
            node_level: skip_level,
            branch: None,
        })?;
        for m in members {
            if let Some(b) = self.nodes[m].branch.as_mut() {
                b.block = add;
            }
        }
        Ok(add)
    }
}
