//! Model descriptions shared by the extraction tests and the acceptance run.

use lumos::autodiff::{RngStream, Tensor};
use lumos::gate::GateConfig;
use lumos::graph::ModelSpec;
use lumos::layers::Model;

pub const FC_CHAIN: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[8]},
    {"kind":"fc","name":"h1","units":7},
    {"kind":"fc","name":"h2","units":6,"activation":"tanh"},
    {"kind":"fc","name":"o","units":3}]}"#;

pub const CONV_FLATTEN_FC: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[2,6,6]},
    {"kind":"conv2d","name":"c","channels":5,"kernel":[3,3]},
    {"kind":"flatten","name":"f"},
    {"kind":"fc","name":"o","units":3}]}"#;

pub const CONCAT_CONVS: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[3,5,5]},
    {"kind":"conv2d","name":"a","input":"x","channels":4,"kernel":[3,3],"padding":1,"activation":"sigmoid"},
    {"kind":"conv2d","name":"b","input":"x","channels":3,"kernel":[1,1]},
    {"kind":"concat","name":"cat","inputs":["a","b"]},
    {"kind":"flatten","name":"f"},
    {"kind":"fc","name":"o","units":2}]}"#;

pub const RESIDUAL: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[6]},
    {"kind":"fc","name":"h","units":6},
    {"kind":"residual_block","name":"r","branches":[[
        {"kind":"fc","name":"a","units":5},
        {"kind":"fc","name":"b","units":6,"bias":false,"activation":"tanh"}]]},
    {"kind":"fc","name":"o","units":2}]}"#;

pub const GIN: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[4],"graph":true,"edge_features":2},
    {"kind":"gin","name":"g1","units":5},
    {"kind":"gin","name":"g2","units":4,"activation":"tanh"},
    {"kind":"pool","name":"p"},
    {"kind":"fc","name":"o","units":2}]}"#;

pub const GCN: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[4],"graph":true,"edge_features":2},
    {"kind":"gcn","name":"g1","units":5},
    {"kind":"gcn","name":"g2","units":4,"activation":"sigmoid"},
    {"kind":"pool","name":"p"},
    {"kind":"fc","name":"o","units":2}]}"#;

pub const ATTENTION: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[4,6]},
    {"kind":"attention","name":"a","inner":5,"heads":1},
    {"kind":"flatten","name":"f"},
    {"kind":"fc","name":"o","units":2}]}"#;

/// The seven reference topologies by name.
pub const SEVEN: [(&str, &str); 7] = [
    ("fc_chain", FC_CHAIN),
    ("conv_flatten_fc", CONV_FLATTEN_FC),
    ("concat_of_convs", CONCAT_CONVS),
    ("residual_block", RESIDUAL),
    ("gin", GIN),
    ("gcn", GCN),
    ("attention", ATTENTION),
];

/// Further shapes exercising fan-out, padding, heads and embeddings.
pub const EXTRA: [(&str, &str); 4] = [
    (
        "multi_head_attention",
        r#"{"nodes":[{"kind":"input","name":"x","shape":[3,4]},
        {"kind":"attention","name":"a","inner":6,"heads":2,"out":5},
        {"kind":"attention","name":"b","inner":4,"heads":2},
        {"kind":"flatten","name":"f"},{"kind":"fc","name":"o","units":2}]}"#,
    ),
    (
        "embedding",
        r#"{"nodes":[{"kind":"input","name":"x","shape":[1]},
        {"kind":"embedding","name":"e","vocab":7,"width":5},
        {"kind":"fc","name":"h","units":4,"activation":"sigmoid"},
        {"kind":"fc","name":"o","units":2}]}"#,
    ),
    (
        "fan_out",
        r#"{"nodes":[{"kind":"input","name":"x","shape":[6]},
        {"kind":"fc","name":"h","units":6,"activation":"sigmoid"},
        {"kind":"fc","name":"a","input":"h","units":4},
        {"kind":"fc","name":"b","input":"h","units":3,"bias":false},
        {"kind":"concat","name":"cat","inputs":["a","b"]},
        {"kind":"fc","name":"o","units":2}]}"#,
    ),
    (
        "padded_conv_chain",
        r#"{"nodes":[{"kind":"input","name":"x","shape":[2,5,5]},
        {"kind":"conv2d","name":"c1","channels":4,"kernel":[3,3],"padding":1,"activation":"sigmoid"},
        {"kind":"conv2d","name":"c2","channels":3,"kernel":[3,3],"stride":2},
        {"kind":"flatten","name":"f"},{"kind":"fc","name":"o","units":2}]}"#,
    ),
];

pub fn build(json: &str, seed: u64) -> Model {
    let spec: ModelSpec = serde_json::from_str(json).expect("valid spec");
    Model::new(spec, GateConfig::default(), seed).expect("valid model")
}

/// Draws log-alpha so that roughly `closed` of the gates evaluate to zero,
/// a share saturate at one and the rest sit strictly inside (0, 1).
pub fn randomize_gates(model: &mut Model, closed: f64, rng: &mut RngStream) {
    for g in model.gates.values_mut() {
        let la: Vec<f64> = (0..g.len())
            .map(|_| {
                let u = rng.unit_open();
                if u < closed {
                    rng.uniform(-6.0, -3.0)
                } else if u < closed + (1.0 - closed) / 2.0 {
                    rng.uniform(3.0, 6.0)
                } else {
                    rng.uniform(-2.0, 2.0)
                }
            })
            .collect();
        g.log_alpha = Tensor::vector(la);
    }
}

/// Sets every gate of `key` to the given log-alpha.
pub fn set_gate(model: &mut Model, key: &str, log_alpha: f64) {
    let g = model.gates.get_mut(key).expect("gate exists");
    g.log_alpha = Tensor::vector(vec![log_alpha; g.len()]);
}
