//! Mini-batches fed to models, including the dense form of a set of graphs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatchError {
    #[error("graph {graph}: edge {edge} endpoint {endpoint} out of range for {nodes} nodes")]
    Endpoint { graph: usize, edge: usize, endpoint: usize, nodes: usize },
    #[error("graph {graph}: {detail}")]
    Graph { graph: usize, detail: String },
    #[error("batch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One graph sample. Edges are directed `(src, dst)`; messages flow from
/// `src` into `dst`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    /// Row-major `[nodes, node_features]`.
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    /// One row per edge, `[edges, edge_features]`.
    pub edge_features: Vec<Vec<f64>>,
    pub root: usize,
}

impl Graph {
    pub fn validate(&self, index: usize, node_features: usize, edge_features: usize) -> Result<(), BatchError> {
        let fail = |d: String| Err(BatchError::Graph { graph: index, detail: d });
        let v = self.nodes.len();
        if v == 0 {
            return fail("graphs need at least one node".into());
        }
        if let Some(r) = self.nodes.iter().find(|r| r.len() != node_features) {
            return fail(format!("node feature row of width {} where {node_features} expected", r.len()));
        }
        if self.edge_features.len() != self.edges.len() {
            return fail(format!("{} edges but {} edge feature rows", self.edges.len(), self.edge_features.len()));
        }
        if let Some(r) = self.edge_features.iter().find(|r| r.len() != edge_features) {
            return fail(format!("edge feature row of width {} where {edge_features} expected", r.len()));
        }
        for (e, &(s, d)) in self.edges.iter().enumerate() {
            for endpoint in [s, d] {
                if endpoint >= v {
                    return Err(BatchError::Endpoint { graph: index, edge: e, endpoint, nodes: v });
                }
            }
        }
        if self.root >= v {
            return fail(format!("root {} out of range for {v} nodes", self.root));
        }
        Ok(())
    }
}

/// Block-diagonal dense encoding of several graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    /// `[V, V]`, entry `(dst, src)` counts edges `src -> dst`.
    pub adjacency: Tensor,
    /// `[V, E]`, entry `(dst, e)` is 1 when edge `e` ends at `dst`.
    pub incidence: Tensor,
    /// `[E, edge_features]`.
    pub edge_features: Tensor,
    /// Per node: 1 for the graph's root, else 0.
    pub root: Vec<usize>,
    /// `[G, V]` mean readout.
    pub pool: Tensor,
}

impl GraphBatch {
    pub fn nodes(&self) -> usize {
        self.root.len()
    }

    pub fn graphs(&self) -> usize {
        self.pool.shape()[0]
    }

    pub fn edges(&self) -> usize {
        self.edge_features.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, ...sample shape]`, or `[V, node_features]` for graph batches.
    pub x: Tensor,
    pub graph: Option<GraphBatch>,
}

impl Batch {
    pub fn dense(x: Tensor) -> Self {
        Self { x, graph: None }
    }

    /// Rows of the model output: samples, or graphs for graph batches.
    pub fn samples(&self) -> usize {
        match &self.graph {
            Some(g) => g.graphs(),
            None => self.x.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn from_graphs(graphs: &[&Graph], node_features: usize, edge_features: usize) -> Result<Self, BatchError> {
        let v: usize = graphs.iter().map(|g| g.nodes.len()).sum();
        let e: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let gcount = graphs.len();
        let mut x = Vec::with_capacity(v * node_features);
        let mut adj = vec![0.0; v * v];
        let mut inc = vec![0.0; v * e];
        let mut ef = Vec::with_capacity(e * edge_features);
        let mut root = vec![0; v];
        let mut pool = vec![0.0; gcount * v];
        let (mut node0, mut edge0) = (0, 0);
        for (gi, g) in graphs.iter().enumerate() {
            g.validate(gi, node_features, edge_features)?;
            let n = g.nodes.len();
            for row in &g.nodes {
                x.extend_from_slice(row);
            }
            for (k, &(s, d)) in g.edges.iter().enumerate() {
                adj[(node0 + d) * v + node0 + s] += 1.0;
                inc[(node0 + d) * e + edge0 + k] = 1.0;
                ef.extend_from_slice(&g.edge_features[k]);
            }
            root[node0 + g.root] = 1;
            for j in 0..n {
                pool[gi * v + node0 + j] = 1.0 / n as f64;
            }
            node0 += n;
            edge0 += g.edges.len();
        }
        Ok(Self {
            x: Tensor::new(vec![v, node_features], x)?,
            graph: Some(GraphBatch {
                adjacency: Tensor::new(vec![v, v], adj)?,
                incidence: Tensor::new(vec![v, e], inc)?,
                edge_features: Tensor::new(vec![e, edge_features], ef)?,
                root,
                pool: Tensor::new(vec![gcount, v], pool)?,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> Graph {
        Graph {
            nodes: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            edges: vec![(0, 1), (1, 0)],
            edge_features: vec![vec![0.5], vec![-0.5]],
            root: 0,
        }
    }

    #[test]
    fn block_diagonal_encoding() {
        let (a, b) = (path(), path());
        let batch = Batch::from_graphs(&[&a, &b], 2, 1).unwrap();
        let g = batch.graph.as_ref().unwrap();
        assert_eq!(batch.x.shape(), &[4, 2]);
        assert_eq!(g.adjacency.data()[1], 1.0);
        assert_eq!(g.adjacency.data()[4], 1.0);
        assert_eq!(g.adjacency.data()[2 * 4 + 3], 1.0);
        assert_eq!(g.adjacency.data()[3], 0.0);
        assert_eq!(g.incidence.shape(), &[4, 4]);
        assert_eq!(g.incidence.data()[4], 1.0);
        assert_eq!(g.root, vec![1, 0, 1, 0]);
        assert_eq!(g.pool.data(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(batch.samples(), 2);
    }

    #[test]
    fn endpoint_out_of_range() {
        let mut g = path();
        g.edges[1] = (5, 0);
        assert!(matches!(Batch::from_graphs(&[&g], 2, 1), Err(BatchError::Endpoint { endpoint: 5, .. })));
    }
}
