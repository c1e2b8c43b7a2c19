use posegraf::checkpoint;
use posegraf::io::dataset::{read_dataset, write_dataset, PoseSample};
use posegraf::io::synth::{generate_synthetic, SyntheticGenConfig, H36M_BONE_LENGTHS_MM};
use posegraf::io::RunConfig;
use posegraf::{Error, ModelConfig, PoseGrafModel, SkeletonTopology};

#[test]
fn hundred_samples_round_trip_bit_exact() {
    let topo = SkeletonTopology::human36m();
    let mut samples = generate_synthetic(&SyntheticGenConfig::human36m(3, 100), &topo).unwrap();
    for (i, s) in samples.iter_mut().enumerate() {
        if i % 3 == 0 {
            s.action = Some("Walking".into());
        }
        // Values that stress shortest round-trip formatting.
        s.joints_3d[5][1] = 0.1 + 0.2;
        s.joints_2d[2][0] = 1e-300 * (i as f64 + 1.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_dataset(&path, &samples).unwrap();
    let back = read_dataset(&path, &topo).unwrap();
    assert_eq!(back.len(), 100);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.action, b.action);
        for (x, y) in a.joints_2d.iter().flatten().zip(b.joints_2d.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.joints_3d.iter().flatten().zip(b.joints_3d.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn synthetic_samples_reproject() {
    let topo = SkeletonTopology::human36m();
    let cfg = SyntheticGenConfig::human36m(7, 200);
    for s in generate_synthetic(&cfg, &topo).unwrap() {
        assert_eq!(s.joints_3d[0], [0.0, 0.0, 0.0]);
        for (p3, p2) in s.joints_3d.iter().zip(&s.joints_2d) {
            let z = p3[2] + cfg.camera_distance_mm;
            assert!(z > 0.0);
            assert!((cfg.focal_px * p3[0] / z - p2[0]).abs() < 1e-9);
            assert!((cfg.focal_px * p3[1] / z - p2[1]).abs() < 1e-9);
        }
        for j in 1..17 {
            let p = topo.parent(j).unwrap();
            let len: f64 = (0..3).map(|k| (s.joints_3d[j][k] - s.joints_3d[p][k]).powi(2)).sum::<f64>().sqrt();
            assert!((len - H36M_BONE_LENGTHS_MM[j - 1]).abs() < 1e-9);
        }
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let topo = SkeletonTopology::human36m();
    let a = generate_synthetic(&SyntheticGenConfig::human36m(5, 20), &topo).unwrap();
    let b = generate_synthetic(&SyntheticGenConfig::human36m(5, 20), &topo).unwrap();
    let c = generate_synthetic(&SyntheticGenConfig::human36m(6, 20), &topo).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].joints_3d, c[0].joints_3d);
}

#[test]
fn malformed_lines_are_reported() {
    let topo = SkeletonTopology::human36m();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = serde_json::to_string(&PoseSample {
        id: "a".into(),
        action: None,
        joints_2d: vec![[0.0, 0.0]; 17],
        joints_3d: vec![[0.0, 0.0, 0.0]; 17],
    })
    .unwrap();
    std::fs::write(&path, format!("{good}\n\n{good}\n{{\"id\": 1}}\n")).unwrap();
    match read_dataset(&path, &topo) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(read_dataset(&dir.path().join("missing"), &topo), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_file_round_trip() {
    let model = PoseGrafModel::new(ModelConfig::desk(), SkeletonTopology::human36m(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params(), model.params());
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    assert!(matches!(checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
}

#[test]
fn config_text_round_trip() {
    let text = "profile = desk\nmu = 3\nfusion_mode = static\nlr = 0.0005\n";
    let cfg = RunConfig::parse_str(text).unwrap();
    assert_eq!(cfg.model.mu, 3);
    assert_eq!(cfg.model.dim, 64);
    let again = RunConfig::parse_str(&cfg.to_key_values()).unwrap();
    assert_eq!(again.model, cfg.model);
    assert_eq!(again.train, cfg.train);
}
