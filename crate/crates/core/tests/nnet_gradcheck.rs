use helpnav_core::learn::ppo::{surrogate_loss, value_loss, PolicySample};
use helpnav_core::nnet::*;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_net(rng: &mut helpnav_core::Rng) -> MlpParams {
    let depth = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
    let mut p = MlpParams::init(&sizes, rng).unwrap();
    // Spread the weights beyond the init scale so tanh curvature matters.
    for v in p.values_mut() {
        *v *= 1.5;
    }
    p
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = helpnav_core::seeded_rng(42);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..net.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x).unwrap();
        let analytic = net.backward(&cache, &g).unwrap();
        let analytic: Vec<f64> = analytic.params().copied().collect();
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.values_mut().nth(i).unwrap() += H;
            let mut minus = net.clone();
            *minus.values_mut().nth(i).unwrap() -= H;
            let n = (dot(&plus.predict(&x).unwrap(), &g) - dot(&minus.predict(&x).unwrap(), &g)) / (2.0 * H);
            worst = worst.max(rel_err(*a, n));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = helpnav_core::seeded_rng(7);
    for _ in 0..20 {
        let net = random_net(&mut rng);
        let x: Vec<f64> = (0..net.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..net.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += H;
            let mut xm = x.clone();
            xm[i] -= H;
            let n = (dot(&net.predict(&xp).unwrap(), &g) - dot(&net.predict(&xm).unwrap(), &g)) / (2.0 * H);
            assert!(rel_err(grads.input[i], n) < 1e-4);
        }
    }
}

/// A pinned minibatch whose probability ratios sit on both sides of the clip range
/// and well away from its edges.
fn pinned_batch(policy: &[MlpParams]) -> Vec<(Vec<f64>, usize, f64, f64)> {
    let obs = [
        vec![0.3, -0.2, 0.8, 0.1],
        vec![-0.5, 0.4, 0.0, 0.9],
        vec![0.7, 0.7, -0.3, -0.6],
        vec![-0.1, -0.9, 0.5, 0.2],
        vec![0.0, 0.25, -0.75, 0.5],
    ];
    // (action, log-ratio offset, advantage)
    let spec = [(0, -0.1, 1.0), (1, 0.4, 0.8), (2, -0.6, -1.2), (1, 0.05, -0.5), (0, 0.3, -0.7)];
    obs.iter()
        .zip(spec)
        .map(|(o, (a, shift, adv))| {
            let logits = chain_forward(policy, o).unwrap().0;
            let lp = log_softmax(&logits)[a];
            (o.clone(), a, lp - shift, adv)
        })
        .collect()
}

#[test]
fn surrogate_gradient_matches_central_differences() {
    let mut rng = helpnav_core::seeded_rng(3);
    let policy = vec![
        MlpParams::init(&[4, 6], &mut rng).unwrap(),
        MlpParams::init(&[6, 5, 3], &mut rng).unwrap(),
    ];
    let batch = pinned_batch(&policy);
    let samples: Vec<PolicySample<'_>> = batch
        .iter()
        .map(|(o, a, lp, adv)| PolicySample {
            observation: o,
            action: *a,
            old_log_prob: *lp,
            advantage: *adv,
        })
        .collect();
    let (_, _, grads) = surrogate_loss(&policy, &samples, 0.2, 0.01).unwrap();
    let mut worst = 0.0f64;
    for (k, net_grads) in grads.iter().enumerate() {
        for (i, a) in net_grads.params().enumerate() {
            let eval = |delta: f64| {
                let mut p = policy.clone();
                *p[k].values_mut().nth(i).unwrap() += delta;
                surrogate_loss(&p, &samples, 0.2, 0.01).unwrap().0
            };
            let n = (eval(H) - eval(-H)) / (2.0 * H);
            worst = worst.max(rel_err(*a, n));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn value_loss_gradient_matches_central_differences() {
    let mut rng = helpnav_core::seeded_rng(4);
    let value = MlpParams::init(&[3, 5, 1], &mut rng).unwrap();
    let xs = [vec![0.1, 0.2, -0.3], vec![-0.6, 0.0, 0.9]];
    let batch: Vec<(&[f64], f64)> = vec![(&xs[0], 0.7), (&xs[1], -1.1)];
    let (_, grads) = value_loss(&value, &batch).unwrap();
    for (i, a) in grads.params().enumerate() {
        let eval = |delta: f64| {
            let mut v = value.clone();
            *v.values_mut().nth(i).unwrap() += delta;
            value_loss(&v, &batch).unwrap().0
        };
        let n = (eval(H) - eval(-H)) / (2.0 * H);
        assert!(rel_err(*a, n) < 1e-4);
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = MlpParams::from_parts(vec![1, 1], vec![vec![0.0]], vec![vec![0.0]], Activation::Tanh).unwrap();
    let mut grads = MlpGrads::zeros_like(&p);
    for g in grads.params_mut() {
        *g = 1.0;
    }
    let mut opt = OptState::new(&p, 0.1);
    adam_step(&mut p, &grads, &mut opt).unwrap();
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    assert!((p.weights()[0][0] + 0.1).abs() < 1e-8);
}

proptest! {
    #[test]
    fn cross_entropy_is_nonnegative(logits in prop::collection::vec(-50.0f64..50.0, 2..6), pick in 0usize..6) {
        let label = pick % logits.len();
        let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-9);
    }
}
