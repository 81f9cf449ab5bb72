mod common;

use common::topologies::{build, randomize_gates, set_gate, EXTRA, RESIDUAL, SEVEN};
use lumos::autodiff::RngStream;
use lumos::codec::FormatError;
use lumos::consistency::propagate_masks;
use lumos::extraction::{deserialize, extract_model, pruned_slices, sample_batch, serialize, verify_equivalence};
use proptest::prelude::*;

#[test]
fn every_topology_matches_its_gated_model() {
    for (name, json) in SEVEN.iter().chain(EXTRA.iter()) {
        for trial in 0..6u64 {
            let mut rng = RngStream::new(100 + trial).fork_named(name);
            let mut m = build(json, trial);
            randomize_gates(&mut m, 0.15 * trial as f64, &mut rng);
            let ex = extract_model(&m).unwrap_or_else(|e| panic!("{name}/{trial}: {e}"));
            let batch = sample_batch(&m.graph, 100, &mut rng).unwrap();
            let report = verify_equivalence(&m, &ex.compact, &batch, 1e-10).unwrap();
            assert!(report.passed, "{name}/{trial}: {report:?}");
            let slices: usize = pruned_slices(&m.graph, &ex.graph, &ex.masks).iter().map(|s| s.elements).sum();
            assert_eq!(m.param_count(), ex.compact.param_count() + slices, "{name}/{trial}");
        }
    }
}

#[test]
fn fully_closed_model_still_runs() {
    for (name, json) in SEVEN.iter() {
        let mut m = build(json, 3);
        let keys: Vec<String> = m.gates.keys().cloned().collect();
        for k in keys {
            set_gate(&mut m, &k, -20.0);
        }
        let ex = extract_model(&m).unwrap();
        let mut rng = RngStream::new(5);
        let batch = sample_batch(&m.graph, 10, &mut rng).unwrap();
        let report = verify_equivalence(&m, &ex.compact, &batch, 1e-12).unwrap();
        assert!(report.passed, "{name}: {report:?}");
        assert!(ex.compact.param_count() < m.param_count(), "{name}");
    }
}

#[test]
fn dropped_inputs_never_matter() {
    let mut m = build(SEVEN[0].1, 8);
    set_gate(&mut m, "h1.gate", 5.0);
    let mut la = m.gates["h1.gate"].log_alpha.clone();
    for r in [0, 3, 6] {
        la.data_mut()[r] = -8.0;
    }
    m.gates.get_mut("h1.gate").unwrap().log_alpha = la;
    let ex = extract_model(&m).unwrap();
    assert_eq!(ex.compact.input_keep, vec![1, 2, 4, 5, 7]);
    let mut rng = RngStream::new(2);
    let batch = sample_batch(&m.graph, 20, &mut rng).unwrap();
    let base = ex.compact.forward(&batch).unwrap();
    for dropped in [0, 3, 6] {
        let mut poked = batch.clone();
        for row in 0..20 {
            poked.x.data_mut()[row * 8 + dropped] += 1e3;
        }
        assert_eq!(ex.compact.forward(&poked).unwrap(), base);
        assert_eq!(m.predict(&poked).unwrap().max_abs_diff(&m.predict(&batch).unwrap()), Some(0.0));
    }
}

#[test]
fn perturbed_compact_weight_is_detected() {
    let m = build(SEVEN[0].1, 1);
    let mut ex = extract_model(&m).unwrap();
    let batch = sample_batch(&m.graph, 50, &mut RngStream::new(4)).unwrap();
    assert_eq!(verify_equivalence(&m, &ex.compact, &batch, 0.0).unwrap().max_abs, 0.0);
    if let lumos::extraction::CompactOp::Fc { weight, .. } = &mut ex.compact.nodes[3].op {
        weight.data_mut()[0] += 1e-3;
    }
    let report = verify_equivalence(&m, &ex.compact, &batch, 1e-8).unwrap();
    assert!(!report.passed && report.max_abs > 1e-6, "{report:?}");
}

#[test]
fn closing_more_gates_strictly_shrinks_the_model() {
    let mut m = build(SEVEN[0].1, 4);
    let keys: Vec<String> = m.gates.keys().cloned().collect();
    for k in &keys {
        set_gate(&mut m, k, 5.0);
    }
    let mut last = extract_model(&m).unwrap().compact.param_count();
    for k in &keys {
        // The last unit of each gate stays open so every closure still owns a
        // weight slice.
        for u in 0..m.gates[k].len() - 1 {
            m.gates.get_mut(k).unwrap().log_alpha.data_mut()[u] = -8.0;
            let now = extract_model(&m).unwrap().compact.param_count();
            assert!(now < last, "closing {k}[{u}] kept {now} >= {last}");
            last = now;
        }
    }
}

#[test]
fn dead_branch_is_removed() {
    let mut m = build(RESIDUAL, 2);
    set_gate(&mut m, "b.gate", -10.0);
    let ex = extract_model(&m).unwrap();
    assert!(ex.graph.index_of("a").is_none() && ex.graph.index_of("b").is_none());
    assert!(ex.compact.nodes.iter().all(|n| n.name != "a" && n.name != "b"));
    let batch = sample_batch(&m.graph, 30, &mut RngStream::new(1)).unwrap();
    assert!(verify_equivalence(&m, &ex.compact, &batch, 1e-12).unwrap().passed);
}

#[test]
fn serialization_round_trips_and_detects_corruption() {
    for (name, json) in SEVEN.iter().chain(EXTRA.iter()) {
        let mut rng = RngStream::new(9).fork_named(name);
        let mut m = build(json, 6);
        randomize_gates(&mut m, 0.3, &mut rng);
        let ex = extract_model(&m).unwrap();
        let bytes = serialize(&ex.compact);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, ex.compact, "{name}");
        assert_eq!(serialize(&back), bytes);
        let batch = sample_batch(&m.graph, 5, &mut rng).unwrap();
        assert_eq!(back.forward(&batch).unwrap(), ex.compact.forward(&batch).unwrap());

        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] = bad[mid].wrapping_add(1);
        assert!(matches!(deserialize(&bad), Err(FormatError::Checksum { .. })), "{name}");
        assert!(deserialize(&bytes[..bytes.len() - 9]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Masks are always executable and the compact model always agrees with
    /// the gated one, whatever the gate pattern.
    #[test]
    fn random_gate_patterns_stay_consistent(seed in 0u64..10_000, which in 0usize..11, closed in 0.0f64..0.9) {
        let (name, json) = SEVEN.iter().chain(EXTRA.iter()).nth(which).unwrap();
        let mut rng = RngStream::new(seed);
        let mut m = build(json, seed);
        randomize_gates(&mut m, closed, &mut rng);
        let masks = propagate_masks(&m.graph, &m.params, &m.snapshots()).unwrap();
        for (node, nm) in m.graph.nodes.iter().zip(&masks.nodes) {
            prop_assert!(nm.output_mask.len() <= node.layout.units());
        }
        let ex = extract_model(&m).unwrap();
        let batch = sample_batch(&m.graph, 8, &mut rng).unwrap();
        let report = verify_equivalence(&m, &ex.compact, &batch, 1e-9).unwrap();
        prop_assert!(report.passed, "{}: {:?}", name, report);
    }
}
