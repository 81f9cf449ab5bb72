//! `.lumc` checkpoints of gated models: topology, gate settings, weights and
//! gate log-alphas, written in sorted key order so identical models give
//! identical bytes.

use std::collections::BTreeMap;

use crate::codec::{ByteReader, ByteWriter, FormatError};
use crate::gate::{GateConfig, GateVector};
use crate::graph::{ModelGraph, ModelSpec};
use crate::layers::Model;

const MAGIC: &[u8; 4] = b"LUMC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut w = ByteWriter::new(MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.str(&serde_json::to_string(&model.spec).expect("specs serialize"));
    w.str(&serde_json::to_string(&model.gate_config).expect("gate configs serialize"));
    w.u32(model.params.len());
    for (k, t) in &model.params {
        w.str(k);
        w.tensor(t);
    }
    w.u32(model.gates.len());
    for (k, g) in &model.gates {
        w.str(k);
        w.tensor(&g.log_alpha);
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Model, FormatError> {
    let mut r = ByteReader::open(bytes, MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version { found: version, supported: CHECKPOINT_VERSION });
    }
    let invalid = |e: String| FormatError::Invalid(e);
    let spec: ModelSpec = serde_json::from_str(&r.str()?).map_err(|e| invalid(format!("model spec: {e}")))?;
    let gate_config: GateConfig = serde_json::from_str(&r.str()?).map_err(|e| invalid(format!("gate config: {e}")))?;
    let graph = ModelGraph::build(&spec).map_err(|e| invalid(e.to_string()))?;
    let mut params = BTreeMap::new();
    for _ in 0..r.u32()? {
        let k = r.str()?;
        params.insert(k, r.tensor()?);
    }
    let mut gates = BTreeMap::new();
    for _ in 0..r.u32()? {
        let k = r.str()?;
        let la = r.tensor()?;
        let g = GateVector::from_log_alpha(la.into_data(), gate_config).map_err(|e| invalid(e.to_string()))?;
        gates.insert(k, g);
    }
    r.expect_end()?;
    let model = Model { spec, graph, gate_config, params, gates };
    model.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let spec: ModelSpec = serde_json::from_str(
            r#"{"nodes":[{"kind":"input","name":"x","shape":[3]},{"kind":"fc","name":"o","units":2}]}"#,
        )
        .unwrap();
        let m = Model::new(spec, GateConfig::default(), 4).unwrap();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(decode(&bad), Err(FormatError::Checksum { .. })));
    }
}
