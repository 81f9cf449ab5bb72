use lumos::autodiff::{RngStream, Tensor};
use lumos::data::{sparse16, Dataset, Inputs, Task, SPARSE16_INFORMATIVE};
use lumos::extraction::extract_model;
use lumos::graph::ModelSpec;
use lumos::train::{build_model, build_report, train, LossKind, OptimizerKind, TrainConfig, TrainError};

fn spec(json: &str) -> ModelSpec {
    serde_json::from_str(json).unwrap()
}

const MLP16: &str = r#"{"nodes":[{"kind":"input","name":"x","shape":[16]},
    {"kind":"fc","name":"h","units":16},{"kind":"fc","name":"o","units":1}]}"#;

#[test]
fn heavy_penalty_closes_every_gate_on_zero_targets() {
    let mut data = sparse16(1, 64).unwrap();
    data.targets = Tensor::zeros(vec![64, 1]);
    let cfg = TrainConfig { lambda: 10.0, epochs: 200, lr: 0.05, batch_size: 64, ..Default::default() };
    let mut m = build_model(spec(MLP16), &cfg).unwrap();
    let h = train(&mut m, &data, &cfg).unwrap();
    let closed_at = h.records.iter().position(|r| r.open_gates == 0).map(|i| i + 1);
    assert!(closed_at.is_some_and(|e| e <= 200), "open gates {:?}", h.last());
    assert_eq!(m.open_gates(), 0);
}

#[test]
fn sparse_regression_keeps_the_informative_features() {
    let data = sparse16(7, 1000).unwrap();
    let cfg = TrainConfig { lambda: 0.05, epochs: 100, seed: 7, ..Default::default() };
    let mut m = build_model(spec(MLP16), &cfg).unwrap();
    train(&mut m, &data, &cfg).unwrap();
    let ex = extract_model(&m).unwrap();
    assert_eq!(ex.compact.input_keep, SPARSE16_INFORMATIVE.to_vec());
    let report = build_report(&m, &ex.compact, &sparse16(1007, 500).unwrap(), None).unwrap();
    assert!(report.r2.unwrap() >= 0.95, "{report:?}");
    // The kept features are the ones with the largest |rho|.
    let mut by_rho: Vec<_> = report.features.iter().map(|f| (f.rho.unwrap().abs(), f.index)).collect();
    by_rho.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut top: Vec<usize> = by_rho[..3].iter().map(|p| p.1).collect();
    top.sort();
    assert_eq!(top, SPARSE16_INFORMATIVE.to_vec());
}

#[test]
fn training_is_reproducible() {
    let data = sparse16(3, 200).unwrap();
    let cfg = TrainConfig { epochs: 5, seed: 11, ..Default::default() };
    let run = || {
        let mut m = build_model(spec(MLP16), &cfg).unwrap();
        let h = train(&mut m, &data, &cfg).unwrap();
        (h.to_csv(), lumos::checkpoint::encode(&m))
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_reports_the_step() {
    let data = sparse16(3, 64).unwrap();
    let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, lr: 1e150, epochs: 3, batch_size: 16, ..Default::default() };
    let mut m = build_model(spec(MLP16), &cfg).unwrap();
    match train(&mut m, &data, &cfg) {
        Err(TrainError::Divergence { step, epoch }) => assert!(step >= 1 && epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Two Gaussian clusters, separable by the sign of the first coordinate.
fn separable(seed: u64, n: usize) -> Dataset {
    let mut rng = RngStream::new(seed);
    let mut x = vec![];
    let mut y = vec![];
    for i in 0..n {
        let c = (i % 2) as f64;
        x.push(if c == 1.0 { 2.0 } else { -2.0 } + rng.normal(0.0, 0.3));
        x.push(rng.normal(0.0, 1.0));
        y.push(c);
    }
    Dataset::new(
        Inputs::Dense(Tensor::new(vec![n, 2], x).unwrap()),
        Tensor::new(vec![n, 1], y).unwrap(),
        Task::Classification { classes: 2 },
    )
    .unwrap()
}

#[test]
fn penalty_off_trains_like_the_plain_network() {
    let data = separable(2, 200);
    let net = r#"{"nodes":[{"kind":"input","name":"x","shape":[2]},{"kind":"fc","name":"o","units":2}]}"#;
    let base = TrainConfig { lambda: 0.0, epochs: 20, loss: LossKind::CrossEntropy, seed: 5, ..Default::default() };
    let mut gated = build_model(spec(net), &base).unwrap();
    let hg = train(&mut gated, &data, &base).unwrap();
    let plain_cfg = TrainConfig { gated: false, ..base.clone() };
    let mut plain = build_model(spec(net), &plain_cfg).unwrap();
    let hp = train(&mut plain, &data, &plain_cfg).unwrap();
    assert_eq!(hg.last().unwrap().metric, Some(1.0));
    assert_eq!(hp.last().unwrap().metric, Some(1.0));
    for r in &hg.records {
        assert_eq!(r.total_loss, r.accuracy_loss);
    }
}

#[test]
fn graph_and_image_tasks_train() {
    let cfg = TrainConfig { epochs: 8, loss: LossKind::CrossEntropy, lambda: 1e-3, ..Default::default() };
    let img = lumos::data::image(1, 200).unwrap();
    let conv = r#"{"nodes":[{"kind":"input","name":"x","shape":[1,6,6]},
        {"kind":"conv2d","name":"c","channels":4,"kernel":[3,3]},{"kind":"flatten","name":"f"},
        {"kind":"fc","name":"o","units":2}]}"#;
    let mut m = build_model(spec(conv), &cfg).unwrap();
    let h = train(&mut m, &img, &cfg).unwrap();
    assert!(h.last().unwrap().metric.unwrap() > 0.9, "{:?}", h.last());

    let g = lumos::data::graphs(1, 120).unwrap();
    let gnn = r#"{"nodes":[{"kind":"input","name":"x","shape":[3],"graph":true,"edge_features":2},
        {"kind":"gin","name":"g","units":8},{"kind":"pool","name":"p"},{"kind":"fc","name":"o","units":2}]}"#;
    let mut m = build_model(spec(gnn), &TrainConfig { epochs: 30, ..cfg.clone() }).unwrap();
    let h = train(&mut m, &g, &TrainConfig { epochs: 30, ..cfg }).unwrap();
    assert!(h.last().unwrap().metric.unwrap() > 0.7, "{:?}", h.last());
}
