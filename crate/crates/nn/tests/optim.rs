use catheter_nn::{polyak_update, Activation, Adam, CheckpointReader, CheckpointWriter, Dense, Lstm, Mlp, Params};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn polyak_single_step_and_fixed_point() {
    let mut target = Dense::<f64>::zeros(2, 2, Activation::Linear);
    let mut online = target.zeros_like();
    online.weights.fill(1.0);
    online.bias.fill(1.0);
    polyak_update(&mut target, &online, 0.005);
    assert!(target.weights.iter().all(|&w| (w - 0.005).abs() < 1e-15));

    let snapshot = online.clone();
    let mut same = online.clone();
    polyak_update(&mut same, &snapshot, 0.005);
    assert_eq!(same, snapshot);
}

#[test]
fn polyak_converges_geometrically() {
    let tau = 0.005f64;
    let mut target = Dense::<f64>::zeros(3, 1, Activation::Linear);
    let mut online = target.zeros_like();
    online.weights.fill(1.0);
    for k in 1..=1000 {
        polyak_update(&mut target, &online, tau);
        if k % 100 == 0 {
            let expected = 1.0 - (1.0 - tau).powi(k);
            assert!((target.weights[[0, 0]] - expected).abs() < 1e-12, "k={k}");
        }
    }
}

#[test]
fn adam_runs_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::<f64>::new(&[4, 8, 2], Activation::Relu, Activation::Linear, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let mut opt = Adam::new(1e-3);
        for _ in 0..20 {
            let trace = net.forward_trace(x.view()).unwrap();
            let mut grads = net.zeros_like();
            let g_out = trace.output().clone();
            net.backward(&trace, g_out.view(), Some(&mut grads), false);
            opt.step(&mut net, &grads).unwrap();
        }
        net.flatten()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lstm = Lstm::<f64>::new(3, 8, &mut rng);
    let head = Dense::<f32>::new(8, 2, Activation::Linear, &mut rng);
    let mut meta = toml::Table::new();
    meta.insert("kind".into(), "test".into());
    let mut w = CheckpointWriter::new().meta(meta.clone());
    w.add("lstm", &lstm).add("head", &head).add_raw("extra", &[2], &[0.1, -1e-300]);
    w.write(dir.path(), "model").unwrap();

    let r = CheckpointReader::open(dir.path(), "model").unwrap();
    assert_eq!(r.meta(), &meta);
    let mut lstm2 = lstm.zeros_like();
    let mut head2 = head.zeros_like();
    r.load_into("lstm", &mut lstm2).unwrap();
    r.load_into("head", &mut head2).unwrap();
    assert_eq!(lstm2, lstm);
    assert_eq!(head2, head);
    assert_eq!(r.raw("extra").unwrap().1, &[0.1, -1e-300]);

    let mut wrong = Lstm::<f64>::zeros(3, 9);
    assert!(r.load_into("lstm", &mut wrong).is_err());
    assert!(r.raw("missing").is_err());
}

proptest! {
    #[test]
    fn adam_keeps_parameters_finite(grads in proptest::collection::vec(-1e6f64..1e6, 6), lr in 1e-5f64..1.0) {
        let mut p = Dense::<f64>::zeros(2, 2, Activation::Linear);
        let mut g = p.zeros_like();
        for (slot, v) in g.tensors_mut().into_iter().flat_map(|t| t.into_iter()).zip(&grads) {
            *slot = *v;
        }
        let mut opt = Adam::new(lr);
        for _ in 0..3 {
            opt.step(&mut p, &g).unwrap();
        }
        prop_assert!(p.all_finite());
    }
}
