use catheter_core::rng::stream;
use catheter_core::surrogate::SurrogateNet;
use catheter_core::td3::{actor_gradient, actor_objective};
use catheter_nn::{mse_loss, Activation, Dropout, GradCheck, Mlp, Params};
use ndarray::{Array2, Array3};
use rand::Rng;

#[test]
fn stacked_surrogate_matches_finite_differences() {
    let mut rng = stream(11, 0);
    let mut net = SurrogateNet::<f64>::new(&mut rng);
    let input = Array3::from_shape_simple_fn((4, 10, 3), || rng.random_range(0.0..1.0));
    let target = Array3::from_shape_simple_fn((4, 10, 2), || rng.random_range(0.0..1.0));
    let dropout = Dropout::new(0.2).unwrap();

    let (pred, cache) = net.forward(input.view(), &dropout, false, &mut rng).unwrap();
    let (_, g) = mse_loss(pred.view(), target.view()).unwrap();
    let mut grads = net.zeros_like();
    let dx = net.backward(&cache, g.view(), &mut grads, true).unwrap();

    let loss = |n: &SurrogateNet<f64>| mse_loss(n.infer(input.view()).unwrap().view(), target.view()).unwrap().0;
    let check = GradCheck {
        per_tensor: Some(200),
        ..GradCheck::default()
    };
    let report = check.run(&mut net, &grads, loss, &mut rng);
    assert!(report.max_rel_error < 1e-4, "{report:?}");

    let h = 1e-5;
    for idx in [(0, 0, 0), (1, 5, 1), (3, 9, 2)] {
        let mut up = input.clone();
        up[idx] += h;
        let mut dn = input.clone();
        dn[idx] -= h;
        let f = |i: &Array3<f64>| mse_loss(net.infer(i.view()).unwrap().view(), target.view()).unwrap().0;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        assert!((fd - dx[idx]).abs() / fd.abs().max(dx[idx].abs()).max(1e-6) < 1e-4, "{idx:?}");
    }
}

#[test]
fn dropout_mask_is_part_of_the_gradient() {
    let mut rng = stream(12, 0);
    let net = SurrogateNet::<f64>::new(&mut rng);
    let input = Array3::from_shape_simple_fn((2, 10, 3), || rng.random_range(0.0..1.0));
    let dropout = Dropout::new(0.5).unwrap();
    let (out_a, cache) = net.forward(input.view(), &dropout, true, &mut stream(5, 5)).unwrap();
    let (out_b, _) = net.forward(input.view(), &dropout, true, &mut stream(5, 5)).unwrap();
    assert_eq!(out_a, out_b);
    let mut grads = net.zeros_like();
    net.backward(&cache, Array3::ones((2, 10, 2)).view(), &mut grads, false);
    // A fixed mask makes the training-mode forward a deterministic function of the weights.
    let mut probe = net.clone();
    let loss = |n: &SurrogateNet<f64>| n.forward(input.view(), &dropout, true, &mut stream(5, 5)).unwrap().0.sum();
    let check = GradCheck {
        per_tensor: Some(50),
        ..GradCheck::default()
    };
    let report = check.run(&mut probe, &grads, loss, &mut rng);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn actor_gradient_through_critic() {
    let mut rng = stream(13, 0);
    let mut actor = Mlp::<f64>::new(&[4, 32, 32, 2], Activation::Tanh, Activation::Tanh, &mut rng);
    let critic = Mlp::<f64>::new(&[6, 32, 32, 1], Activation::Tanh, Activation::Linear, &mut rng);
    let obs = Array2::from_shape_simple_fn((8, 4), || rng.random_range(0.0..1.0));
    let mut grads = actor.zeros_like();
    let value = actor_gradient(&actor, &critic, obs.view(), &mut grads).unwrap();
    assert_eq!(value, actor_objective(&actor, &critic, obs.view()).unwrap());
    let report = GradCheck::default().run(
        &mut actor,
        &grads,
        |a| actor_objective(a, &critic, obs.view()).unwrap(),
        &mut rng,
    );
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}
