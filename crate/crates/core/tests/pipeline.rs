use rcodean::data::{encode_bundle, gen_synthetic, load_bundle, load_bundle_for, save_bundle, ImageSource};
use rcodean::pipeline::{train_pipeline, PipelineConfig};
use rcodean::Error;

fn tiny_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig { hidden_dim: 8, seed, ..PipelineConfig::default() };
    cfg.autoencoder.epochs = 2;
    cfg.head.epochs = 3;
    cfg.stage2_mlp.epochs = 3;
    cfg.forest.trees = 4;
    cfg
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let ds = gen_synthetic(120, 3, 1).unwrap();
    let (a, ra) = train_pipeline(&ds, &tiny_config(7)).unwrap();
    let (b, rb) = train_pipeline(&ds, &tiny_config(7)).unwrap();
    assert_eq!(encode_bundle(&a).unwrap(), encode_bundle(&b).unwrap());
    assert_eq!(ra.ae_logs, rb.ae_logs);
    let (c, _) = train_pipeline(&ds, &tiny_config(8)).unwrap();
    assert_ne!(encode_bundle(&a).unwrap(), encode_bundle(&c).unwrap());
}

#[test]
fn bundle_file_round_trip_and_guards() {
    let ds = gen_synthetic(100, 2, 2).unwrap();
    let (p, _) = train_pipeline(&ds, &tiny_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rcb");
    save_bundle(&p, &path).unwrap();
    let q = load_bundle(&path).unwrap();
    let ImageSource::Memory(images) = &ds.images else { unreachable!() };
    assert_eq!(p.predict_images(&images[..10]).unwrap(), q.predict_images(&images[..10]).unwrap());
    assert!(matches!(load_bundle_for(&path, 3), Err(Error::Config(_))));
    assert!(matches!(load_bundle(dir.path().join("missing.rcb")), Err(Error::Usage(_))));
}

#[test]
fn any_image_size_is_accepted() {
    let ds = gen_synthetic(100, 2, 3).unwrap();
    let (p, _) = train_pipeline(&ds, &tiny_config(2)).unwrap();
    let img = rcodean::tensor::Mat::filled(90, 70, 128.0);
    let pred = p.predict(&img).unwrap();
    assert_eq!(pred.bits.len(), 2);
    assert!(pred.confidence.iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(p.predict(&rcodean::tensor::Mat::filled(4, 4, 1.0)).is_err());
}
