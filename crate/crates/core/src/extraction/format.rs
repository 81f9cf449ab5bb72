//! `.lum` files.
//!
//! ```text
//! "LUM1" | version u16 | node count u32 | model header | nodes... | crc32 u32
//! ```
//!
//! Each node is a kind tag `u8`, its name, inputs, layout, attributes and
//! tensors (`ndim u8`, extents `u32`, `f64` payload). Integers and floats are
//! little-endian; the CRC covers every byte before it.

use crate::codec::{ByteReader, ByteWriter, FormatError};
use crate::graph::{Activation, Layout};

use super::{CompactInput, CompactModel, CompactNode, CompactOp};

const MAGIC: &[u8; 4] = b"LUM1";
pub const FORMAT_VERSION: u16 = 1;

fn write_layout(w: &mut ByteWriter, l: Layout) {
    match l {
        Layout::Vector(n) => {
            w.u8(0);
            w.u32(n);
        }
        Layout::Image { c, h, w: width } => {
            w.u8(1);
            w.u32(c);
            w.u32(h);
            w.u32(width);
        }
        Layout::Sequence { t, d } => {
            w.u8(2);
            w.u32(t);
            w.u32(d);
        }
    }
}

fn read_layout(r: &mut ByteReader<'_>) -> Result<Layout, FormatError> {
    Ok(match r.u8()? {
        0 => Layout::Vector(r.u32()?),
        1 => Layout::Image { c: r.u32()?, h: r.u32()?, w: r.u32()? },
        2 => Layout::Sequence { t: r.u32()?, d: r.u32()? },
        t => return Err(FormatError::Invalid(format!("layout tag {t}"))),
    })
}

fn kind_tag(op: &CompactOp) -> u8 {
    match op {
        CompactOp::Input => 0,
        CompactOp::Fc { .. } => 1,
        CompactOp::Conv2d { .. } => 2,
        CompactOp::Flatten => 3,
        CompactOp::Concat => 4,
        CompactOp::Embedding { .. } => 5,
        CompactOp::Gin { .. } => 6,
        CompactOp::Gcn { .. } => 7,
        CompactOp::Attention { .. } => 8,
        CompactOp::Pool => 9,
        CompactOp::Add => 10,
    }
}

fn read_act(r: &mut ByteReader<'_>) -> Result<Activation, FormatError> {
    let t = r.u8()?;
    Activation::from_tag(t).ok_or_else(|| FormatError::Invalid(format!("activation tag {t}")))
}

pub fn serialize(m: &CompactModel) -> Vec<u8> {
    let mut w = ByteWriter::new(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(m.nodes.len());
    write_layout(&mut w, m.input_layout);
    w.u8(m.graph_input as u8);
    w.u32(m.edge_features);
    w.indices(&m.input_keep);
    w.u32(m.output);
    for n in &m.nodes {
        w.u8(kind_tag(&n.op));
        w.str(&n.name);
        write_layout(&mut w, n.layout);
        w.u8(n.node_level as u8);
        w.u32(n.inputs.len());
        for i in &n.inputs {
            match i {
                CompactInput::Node { index, select } => {
                    w.u8(0);
                    w.u32(*index);
                    w.u8(select.is_some() as u8);
                    if let Some(s) = select {
                        w.indices(s);
                    }
                }
                CompactInput::Empty { layout, node_level } => {
                    w.u8(1);
                    write_layout(&mut w, *layout);
                    w.u8(*node_level as u8);
                }
            }
        }
        match &n.op {
            CompactOp::Fc { bias, act, .. } => {
                w.u8(act.tag());
                w.u8(bias.is_some() as u8);
            }
            CompactOp::Conv2d { bias, stride, padding, act, .. } => {
                w.u8(act.tag());
                w.u8(bias.is_some() as u8);
                w.u32(*stride);
                w.u32(*padding);
            }
            CompactOp::Gin { act, .. } | CompactOp::Gcn { act, .. } => w.u8(act.tag()),
            CompactOp::Attention { heads, rows, .. } => {
                w.u32(*heads);
                for r in rows {
                    w.indices(r);
                }
            }
            _ => {}
        }
        for t in n.op.tensors() {
            w.tensor(t);
        }
    }
    w.finish()
}

pub fn deserialize(bytes: &[u8]) -> Result<CompactModel, FormatError> {
    let mut r = ByteReader::open(bytes, MAGIC)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version, supported: FORMAT_VERSION });
    }
    let count = r.u32()?;
    let input_layout = read_layout(&mut r)?;
    let graph_input = r.bool()?;
    let edge_features = r.u32()?;
    let input_keep = r.indices()?;
    let output = r.u32()?;
    let mut nodes = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let tag = r.u8()?;
        let name = r.str()?;
        let layout = read_layout(&mut r)?;
        let node_level = r.bool()?;
        let n_inputs = r.u32()?;
        let mut inputs = Vec::with_capacity(n_inputs.min(64));
        for _ in 0..n_inputs {
            inputs.push(match r.u8()? {
                0 => {
                    let index = r.u32()?;
                    if index >= i {
                        return Err(FormatError::Invalid(format!("node {i} reads later node {index}")));
                    }
                    let select = if r.bool()? { Some(r.indices()?) } else { None };
                    CompactInput::Node { index, select }
                }
                1 => CompactInput::Empty { layout: read_layout(&mut r)?, node_level: r.bool()? },
                t => return Err(FormatError::Invalid(format!("input tag {t}"))),
            });
        }
        let op = match tag {
            0 => CompactOp::Input,
            1 => {
                let act = read_act(&mut r)?;
                let has_bias = r.bool()?;
                let weight = r.tensor()?;
                let bias = if has_bias { Some(r.tensor()?) } else { None };
                CompactOp::Fc { weight, bias, act }
            }
            2 => {
                let act = read_act(&mut r)?;
                let has_bias = r.bool()?;
                let stride = r.u32()?;
                let padding = r.u32()?;
                let weight = r.tensor()?;
                let bias = if has_bias { Some(r.tensor()?) } else { None };
                CompactOp::Conv2d { weight, bias, stride, padding, act }
            }
            3 => CompactOp::Flatten,
            4 => CompactOp::Concat,
            5 => CompactOp::Embedding { table: r.tensor()? },
            6 => {
                let act = read_act(&mut r)?;
                CompactOp::Gin { weight: r.tensor()?, eps: r.tensor()?, edge_embed: r.tensor()?, act }
            }
            7 => {
                let act = read_act(&mut r)?;
                CompactOp::Gcn {
                    w1: r.tensor()?,
                    b1: r.tensor()?,
                    w2: r.tensor()?,
                    b2: r.tensor()?,
                    root: r.tensor()?,
                    act,
                }
            }
            8 => {
                let heads = r.u32()?;
                let rows = [r.indices()?, r.indices()?, r.indices()?];
                CompactOp::Attention { heads, wq: r.tensor()?, wk: r.tensor()?, wv: r.tensor()?, wo: r.tensor()?, rows }
            }
            9 => CompactOp::Pool,
            10 => CompactOp::Add,
            t => return Err(FormatError::Invalid(format!("node kind tag {t}"))),
        };
        nodes.push(CompactNode { name, op, inputs, layout, node_level });
    }
    r.expect_end()?;
    if !nodes.is_empty() && output >= nodes.len() {
        return Err(FormatError::Invalid(format!("output index {output} out of range")));
    }
    Ok(CompactModel { input_layout, graph_input, edge_features, input_keep, nodes, output })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_is_a_minimal_file() {
        let bytes = serialize(&CompactModel::empty());
        assert_eq!(&bytes[..4], b"LUM1");
        assert_eq!(deserialize(&bytes).unwrap(), CompactModel::empty());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut w = ByteWriter::new(MAGIC);
        w.u16(FORMAT_VERSION + 1);
        let bytes = w.finish();
        assert_eq!(deserialize(&bytes), Err(FormatError::Version { found: 2, supported: 1 }));
    }
}
