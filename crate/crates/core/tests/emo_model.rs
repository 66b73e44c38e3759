use emo_core::analysis::count_costs;
use emo_core::{build_emo, Init, Model, Rng, Shape, Tensor, Variant};

fn image(seed: u64, n: usize, side: usize) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(Shape::new(n, 3, side, side), |_, _, _, _| rng.uniform(-1.0, 1.0))
}

fn small(v: Variant) -> Model<f64> {
    let mut cfg = v.config();
    cfg.num_classes = 10;
    build_emo(&cfg, 7, Init::Generic).unwrap()
}

#[test]
fn emo_5m_traced_work_matches_static_count() {
    let m = build_emo::<f32>(&Variant::Emo5M.config(), 1, Init::Default).unwrap();
    let (logits, trace) = m.forward_traced(&image(2, 1, 224).cast()).unwrap();
    assert_eq!(logits.shape(), Shape::new(1, 1000, 1, 1));
    let r = count_costs(&m.config, 224, 224).unwrap();
    assert_eq!(trace.macs, r.totals.macs);
    assert_eq!(trace.softmax_flops, r.totals.softmax_flops);
    assert_eq!(m.param_count() as u64, r.totals.params);
    assert_eq!(m.buffer_count() as u64, r.buffers);
}

#[test]
fn batch_items_are_independent() {
    let m = small(Variant::Emo1M);
    let x = image(3, 2, 64);
    let both = m.forward(&x).unwrap();
    for n in 0..2 {
        let one = m.forward(&x.item(n).unwrap()).unwrap();
        assert!(one.max_abs_diff(&both.item(n).unwrap()).unwrap() < 1e-12);
    }
}

#[test]
fn identical_images_give_identical_logits() {
    let m = small(Variant::Emo2M);
    let z = Tensor::<f64>::zeros(Shape::new(3, 3, 64, 64));
    let y = m.forward(&z).unwrap();
    let first = y.item(0).unwrap();
    for n in 1..3 {
        assert_eq!(y.item(n).unwrap(), first);
    }
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn weights_survive_a_file_round_trip() {
    let m = small(Variant::Emo1M);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    std::fs::write(&path, m.save_weights().unwrap()).unwrap();
    let mut other = build_emo::<f64>(&m.config, 99, Init::Generic).unwrap();
    other.load_weights(&std::fs::read(&path).unwrap()).unwrap();
    let x = image(4, 1, 32);
    assert_eq!(m.forward(&x).unwrap(), other.forward(&x).unwrap());
    assert_eq!(other.save_weights().unwrap(), m.save_weights().unwrap());
}

#[test]
fn wrong_precision_container_is_rejected() {
    let m = small(Variant::Emo1M);
    let mut f32_model = build_emo::<f32>(&m.config, 7, Init::Generic).unwrap();
    assert!(f32_model.load_weights(&m.save_weights().unwrap()).is_err());
}
