//! Task metrics and model cost counters.
//!
//! FLOPs count multiply and add separately for every multiply-accumulate in
//! a weighted layer, per forward sample:
//!
//! - fc: `2·n·k` (times graph nodes for node-level rows)
//! - conv2d: `2·C·kh·kw·D·H'·W'`
//! - gin: `2·V·n·k + 2·E·e·n`
//! - gcn: `2·V·n·d + 2·E·e·d`
//! - attention: `2·T·(r_Q + r_K + r_V)·inner + 4·T²·inner + 2·T·inner·out`,
//!   where `r_*` are the input rows each projection reads
//!
//! Bias additions, activations, lookups and pure data movement (flatten,
//! concat, pooling, residual sums) are not counted.

use serde::Serialize;
use thiserror::Error;

use crate::extraction::{CompactModel, CompactOp};
use crate::graph::{Layout, NodeOp};
use crate::layers::Model;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions, {1} targets")]
    Length(usize, usize),
    #[error("need at least two values, got {0}")]
    TooShort(usize),
    #[error("undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
}

fn check(pred: &[f64], truth: &[f64], min: usize) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    if truth.len() < min {
        return Err(MetricsError::TooShort(truth.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check(pred, truth, 2)?;
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance("truth"));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::TooShort(0));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

/// `Cov(x, y) / (σ_x σ_y)`, clamped to `[-1, 1]` against rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Row-wise argmax of a `[rows, classes]` buffer.
pub fn argmax_rows(data: &[f64], classes: usize) -> Vec<usize> {
    data.chunks(classes.max(1))
        .map(|row| row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect()
}

/// Graph extent used for FLOPs of graph layers; ignored by dense models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GraphSize {
    pub nodes: usize,
    pub edges: usize,
}

/// Parameter and FLOPs counting shared by gated and compact models.
pub trait CostModel {
    /// Weight and bias elements; gate parameters are not counted.
    fn count_params(&self) -> usize;
    /// FLOPs of one forward sample.
    fn count_flops(&self, graph: GraphSize) -> usize;
}

fn attention_flops(t: usize, rows: usize, inner: usize, out: usize) -> usize {
    2 * t * rows * inner + 4 * t * t * inner + 2 * t * inner * out
}

impl CostModel for Model {
    fn count_params(&self) -> usize {
        self.param_count()
    }

    fn count_flops(&self, size: GraphSize) -> usize {
        let g = &self.graph;
        let (v, e, ef) = (size.nodes, size.edges, g.edge_features);
        let mut total = 0;
        for (i, node) in g.nodes.iter().enumerate() {
            let n = g.input_layout_of(i).map(|l| l.units()).unwrap_or(0);
            let rows = if node.node_level { v } else { 1 };
            total += match node.op {
                NodeOp::Fc { units, .. } => 2 * n * units * rows,
                NodeOp::Conv2d { channels, kh, kw, .. } => match node.layout {
                    Layout::Image { h, w, .. } => 2 * n * kh * kw * channels * h * w,
                    _ => unreachable!("conv output is an image"),
                },
                NodeOp::Gin { units, .. } => 2 * v * n * units + 2 * e * ef * n,
                NodeOp::Gcn { units, .. } => 2 * v * n * units + 2 * e * ef * units,
                NodeOp::Attention { inner, out, .. } => match node.layout {
                    Layout::Sequence { t, .. } => attention_flops(t, 3 * n, inner, out),
                    _ => unreachable!("attention output is a sequence"),
                },
                _ => 0,
            };
        }
        total
    }
}

impl CostModel for CompactModel {
    fn count_params(&self) -> usize {
        self.param_count()
    }

    fn count_flops(&self, size: GraphSize) -> usize {
        let (v, e) = (size.nodes, size.edges);
        let mut total = 0;
        for node in &self.nodes {
            let rows = if node.node_level { v } else { 1 };
            total += match &node.op {
                CompactOp::Fc { weight, .. } => 2 * weight.shape()[0] * weight.shape()[1] * rows,
                CompactOp::Conv2d { weight, .. } => match node.layout {
                    Layout::Image { h, w, .. } => 2 * weight.len() * h * w,
                    _ => unreachable!("conv output is an image"),
                },
                CompactOp::Gin { weight, edge_embed, .. } => 2 * v * weight.len() + 2 * e * edge_embed.len(),
                CompactOp::Gcn { w1, w2, .. } => 2 * v * w1.len() + 2 * e * w2.len(),
                CompactOp::Attention { wq, wo, rows, .. } => match node.layout {
                    Layout::Sequence { t, .. } => {
                        let read: usize = rows.iter().map(Vec::len).sum();
                        attention_flops(t, read, wq.shape()[1], wo.shape()[1])
                    }
                    _ => unreachable!("attention output is a sequence"),
                },
                _ => 0,
            };
        }
        total
    }
}

/// Correlation of one input feature with the target, and whether extraction
/// kept it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureStat {
    pub index: usize,
    /// `None` when either side has zero variance.
    pub rho: Option<f64>,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub r2: Option<f64>,
    pub mse: Option<f64>,
    pub accuracy: Option<f64>,
    pub params_before: usize,
    pub params_after: usize,
    pub flops_before: usize,
    pub flops_after: usize,
    pub features: Vec<FeatureStat>,
    pub train_seconds: Option<f64>,
}

impl MetricsReport {
    /// Fraction of parameters removed.
    pub fn param_reduction(&self) -> f64 {
        if self.params_before == 0 {
            return 0.0;
        }
        1.0 - self.params_after as f64 / self.params_before as f64
    }

    pub fn flops_reduction(&self) -> f64 {
        if self.flops_before == 0 {
            return 0.0;
        }
        1.0 - self.flops_after as f64 / self.flops_before as f64
    }

    /// Plain-text rendering with a per-feature table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
        s.push_str(&format!("r2        {}\nmse       {}\naccuracy  {}\n", opt(self.r2), opt(self.mse), opt(self.accuracy)));
        s.push_str(&format!(
            "params    {} -> {} ({:.2}% removed)\nflops     {} -> {} ({:.2}% removed)\n",
            self.params_before,
            self.params_after,
            100.0 * self.param_reduction(),
            self.flops_before,
            self.flops_after,
            100.0 * self.flops_reduction()
        ));
        if let Some(t) = self.train_seconds {
            s.push_str(&format!("train     {t:.2}s\n"));
        }
        if !self.features.is_empty() {
            s.push_str("feature  rho        kept\n");
            for f in &self.features {
                let rho = f.rho.map(|r| format!("{r:+.5}")).unwrap_or_else(|| "undefined".into());
                s.push_str(&format!("{:<8} {:<10} {}\n", f.index, rho, if f.kept { "yes" } else { "no" }));
            }
        }
        s
    }
}
