//! Dueling aggregation, TD targets, syncing and the dense-network substrate.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavx_core::memory::Transition;
use uavx_core::nn::{mse_loss, Activation, Network, Optimizer, OptimizerConfig, Tensor};
use uavx_core::qpolicy::{aggregate, argmax_lowest, DuelingQNetwork, PolicyPair, QConfig};
use uavx_core::worldsim::{ActionId, NUM_ACTIONS};

fn small_cfg() -> QConfig {
    QConfig { hidden: vec![16, 8], ..QConfig::default() }
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> Tensor {
    Tensor::vector((0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Plain nested-loop forward pass.
fn manual_forward(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in net.layers() {
        let (n_out, n_in) = (l.biases.len(), h.len());
        let w = l.weights.values();
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = l.biases.values()[o];
            for i in 0..n_in {
                acc += w[o * n_in + i] * h[i];
            }
            out[o] = if l.activation == Activation::Relu { acc.max(0.0) } else { acc };
        }
        h = out;
    }
    h
}

fn manual_q(net: &DuelingQNetwork, x: &[f64]) -> Vec<f64> {
    let feat = manual_forward(&net.trunk, x);
    let v = manual_forward(&net.value_head, &feat)[0];
    let a = manual_forward(&net.advantage_head, &feat);
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|x| v + x - mean).collect()
}

#[test]
fn aggregation_examples() {
    let q = aggregate(2.0, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!((q[0] - 2.9).abs() < 1e-15);
    assert!(q[1..].iter().all(|&x| (x - 1.9).abs() < 1e-15));
    assert_eq!(aggregate(-1.5, &[0.3; NUM_ACTIONS]), [-1.5; NUM_ACTIONS]);
}

#[test]
fn mean_zero_identity_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = DuelingQNetwork::new(32, &[24, 12], 0.99, 5).unwrap();
    for _ in 0..200 {
        let s = random_state(&mut rng, 32);
        let (v, _) = net.value_and_advantages(&s).unwrap();
        let q = net.q_values(&s).unwrap();
        let mean = q.iter().map(|x| x - v[0]).sum::<f64>() / NUM_ACTIONS as f64;
        assert!(mean.abs() < 1e-12);
        for (a, b) in q.iter().zip(manual_q(&net, s.values())) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_tie_breaking() {
    let mut q = [0.0; NUM_ACTIONS];
    q[9] = 5.0;
    assert_eq!(argmax_lowest(&q), 9);
    assert_eq!(argmax_lowest(&[1.0; NUM_ACTIONS]), 0);
    let mut q = [0.0; NUM_ACTIONS];
    q[3] = 2.0;
    q[7] = 2.0;
    assert_eq!(argmax_lowest(&q), 3);
}

fn constant_q_net(input: usize, q: f64) -> DuelingQNetwork {
    let zero = |net: &mut Network| {
        for l in net.layers_mut() {
            l.weights.values_mut().iter_mut().for_each(|w| *w = 0.0);
        }
    };
    let mut v = Network::init(&[4, 1], &[Activation::Identity], 0).unwrap();
    zero(&mut v);
    v.layers_mut()[0].biases.values_mut()[0] = q;
    let mut a = Network::init(&[4, NUM_ACTIONS], &[Activation::Identity], 1).unwrap();
    zero(&mut a);
    let trunk = Network::init(&[input, 4], &[Activation::Relu], 2).unwrap();
    DuelingQNetwork::from_parts(trunk, v, a, 0.99).unwrap()
}

#[test]
fn td_target_fixture() {
    let target = constant_q_net(6, 2.0);
    let mut pair = PolicyPair::from_online(constant_q_net(6, -3.0), &QConfig::default());
    pair.target = target;
    let t = Transition {
        state: Tensor::vector(vec![0.1; 6]).unwrap(),
        action: ActionId::FORWARD,
        reward: 0.6,
        next_state: Tensor::vector(vec![0.4; 6]).unwrap(),
        terminal: false,
    };
    assert!((pair.td_target(&t).unwrap() - 2.58).abs() < 1e-12);
    let done = Transition { terminal: true, reward: -10.0, ..t.clone() };
    assert_eq!(pair.td_target(&done).unwrap(), -10.0);
}

#[test]
fn td_targets_match_manual_bootstrap() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for double_dqn in [false, true] {
        let mut pair = PolicyPair::new(12, &QConfig { double_dqn, ..small_cfg() }, 9).unwrap();
        pair.target = DuelingQNetwork::new(12, &[16, 8], 0.99, 10).unwrap();
        for _ in 0..50 {
            let t = Transition {
                state: random_state(&mut rng, 12),
                action: ActionId::new(rng.gen_range(0..10)).unwrap(),
                reward: rng.gen_range(-1.0..1.0),
                next_state: random_state(&mut rng, 12),
                terminal: false,
            };
            let qt = manual_q(&pair.target, t.next_state.values());
            let boot = if double_dqn {
                qt[argmax_lowest(&manual_q(&pair.online, t.next_state.values()))]
            } else {
                qt.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            assert!((pair.td_target(&t).unwrap() - (t.reward + 0.99 * boot)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_gamma_returns_the_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pair = PolicyPair::new(8, &QConfig { gamma: 0.0, ..small_cfg() }, 1).unwrap();
    let t = Transition {
        state: random_state(&mut rng, 8),
        action: ActionId::FORWARD,
        reward: 0.37,
        next_state: random_state(&mut rng, 8),
        terminal: false,
    };
    assert_eq!(pair.td_target(&t).unwrap(), 0.37);
}

fn batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            state: random_state(rng, dim),
            action: ActionId::new(rng.gen_range(0..10)).unwrap(),
            reward: rng.gen_range(-1.0..1.0),
            next_state: random_state(rng, dim),
            terminal: rng.gen_bool(0.2),
        })
        .collect()
}

#[test]
fn train_batch_reports_pre_update_errors_and_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = QConfig { optimizer: OptimizerConfig::sgd(1e-3), ..small_cfg() };
    let mut pair = PolicyPair::new(10, &cfg, 2).unwrap();
    let data = batch(&mut rng, 8, 10);
    let refs: Vec<&Transition> = data.iter().collect();
    let expected: Vec<f64> = data
        .iter()
        .map(|t| pair.td_target(t).unwrap() - pair.online.q_values(&t.state).unwrap()[t.action.index()])
        .collect();
    let before = pair.loss_gradients(&refs, None).unwrap().0.loss;
    let stats = pair.train_batch(&refs).unwrap();
    assert_eq!(stats.loss, before);
    for (a, b) in stats.td_errors.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(pair.loss_gradients(&refs, None).unwrap().0.loss < before);
    assert!(pair.train_batch(&[]).is_err());
}

#[test]
fn satisfied_targets_leave_parameters_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = QConfig { gamma: 0.0, optimizer: OptimizerConfig::sgd(0.1), ..small_cfg() };
    let mut pair = PolicyPair::new(6, &cfg, 3).unwrap();
    let mut data = batch(&mut rng, 4, 6);
    for t in &mut data {
        t.reward = pair.online.q_values(&t.state).unwrap()[t.action.index()];
    }
    let refs: Vec<&Transition> = data.iter().collect();
    let before = pair.online.clone();
    let stats = pair.train_batch(&refs).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert_eq!(pair.online, before);
}

#[test]
fn only_the_taken_action_carries_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pair = PolicyPair::new(6, &small_cfg(), 4).unwrap();
    let data = batch(&mut rng, 1, 6);
    let (_, [_, _, ga]) = pair.loss_gradients(&[&data[0]], None).unwrap();
    let a = data[0].action.index();
    // advantage-head bias gradient is dQ_a * (e_a - 1/10)
    let gb = ga.layers[0].biases.values();
    let others: Vec<f64> = (0..NUM_ACTIONS).filter(|&k| k != a).map(|k| gb[k]).collect();
    assert!(others.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
    assert!((gb[a] + 9.0 * others[0]).abs() < 1e-12);
}

#[test]
fn sync_makes_the_pair_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = QConfig { sync_interval: 5, optimizer: OptimizerConfig::adam(1e-2), ..small_cfg() };
    let mut pair = PolicyPair::new(16, &cfg, 5).unwrap();
    let data = batch(&mut rng, 16, 16);
    let refs: Vec<&Transition> = data.iter().collect();
    let states: Vec<Tensor> = (0..100).map(|_| random_state(&mut rng, 16)).collect();
    let differs = |p: &PolicyPair| {
        states.iter().any(|s| p.online.q_values(s).unwrap() != p.target.q_values(s).unwrap())
    };
    for step in 1..=12u64 {
        pair.train_batch(&refs).unwrap();
        let before = pair.target.clone();
        let synced = pair.maybe_sync(step);
        assert_eq!(synced, step % 5 == 0);
        if synced {
            assert!(!differs(&pair));
        } else {
            assert_eq!(pair.target, before);
            assert!(differs(&pair));
        }
    }

    let mut every = PolicyPair::new(16, &QConfig { sync_interval: 1, ..cfg }, 6).unwrap();
    for step in 1..=3 {
        every.train_batch(&refs).unwrap();
        every.maybe_sync(step);
        assert!(!differs(&every));
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut pair = PolicyPair::new(16, &small_cfg(), 8).unwrap();
    pair.target = DuelingQNetwork::new(16, &[16, 8], 0.99, 77).unwrap();
    pair.save_checkpoint(dir.path(), 1234).unwrap();
    let (back, step) = PolicyPair::load_checkpoint(dir.path(), OptimizerConfig::default()).unwrap();
    assert_eq!(step, 1234);
    assert_eq!(back.online, pair.online);
    assert_eq!(back.target, pair.target);
    assert_eq!(back.sync_interval, pair.sync_interval);
}

#[test]
fn network_examples() {
    let mut id = Network::init(&[3, 3], &[Activation::Identity], 0).unwrap();
    assert!(id.layers()[0].biases.values().iter().all(|&b| b == 0.0));
    assert_eq!(id.params(), Network::init(&[3, 3], &[Activation::Identity], 0).unwrap().params());
    assert!(Network::init(&[], &[], 0).is_err());
    let w = id.layers_mut()[0].weights.values_mut();
    w.iter_mut().enumerate().for_each(|(i, x)| *x = if i % 4 == 0 { 1.0 } else { 0.0 });
    let x = Tensor::vector(vec![0.5, -2.0, 3.0]).unwrap();
    assert_eq!(id.forward(&x).unwrap().values(), x.values());

    let relu = Network::init(&[4, 5], &[Activation::Relu], 1).unwrap();
    let neg = Tensor::vector(vec![-1.0; 4]).unwrap();
    let mut relu_pos = relu.clone();
    relu_pos.layers_mut()[0].weights.values_mut().iter_mut().for_each(|w| *w = w.abs());
    assert!(relu_pos.forward(&neg).unwrap().values().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::init(&[5, 7, 3], &[Activation::Relu, Activation::Identity], 2).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = net.forward(&Tensor::vector(x.clone()).unwrap()).unwrap();
        for (a, b) in got.values().iter().zip(manual_forward(&net, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(net.forward(&Tensor::vector(vec![0.0; 4]).unwrap()).is_err());
}

#[test]
fn backward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Network::init(&[4, 3], &[Activation::Identity], 3).unwrap();
    let x = Tensor::matrix(2, 4, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let zero = net.backward(&x, &Tensor::zeros(vec![2, 3])).unwrap();
    assert!(zero.iter().all(|g| g == 0.0));

    // single linear layer under MSE: dW = (2 / (B * n_out)) sum_b (pred_b - y_b) x_b^T
    let y = Tensor::matrix(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let pred = net.forward(&x).unwrap();
    let (_, dl) = mse_loss(&pred, &y).unwrap();
    let g = net.backward(&x, &dl).unwrap();
    let scale = 2.0 / 6.0;
    for o in 0..3 {
        for i in 0..4 {
            let want: f64 = (0..2).map(|b| scale * (pred.row(b)[o] - y.row(b)[o]) * x.row(b)[i]).sum();
            assert!((g.layers[0].weights.values()[o * 4 + i] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn optimizer_examples() {
    let mut net = Network::init(&[3, 2], &[Activation::Identity], 4).unwrap();
    let start = net.params();
    let grads = {
        let x = Tensor::vector(vec![0.3, -0.2, 0.9]).unwrap();
        net.backward(&x, &Tensor::vector(vec![0.5, -1.5]).unwrap()).unwrap()
    };
    let g: Vec<f64> = grads.iter().collect();

    let mut sgd = Optimizer::new(OptimizerConfig::sgd(0.1));
    sgd.step(&mut net, &grads).unwrap();
    for ((p, s), g) in net.params().iter().zip(&start).zip(&g) {
        assert_eq!(*p, s - 0.1 * g);
    }

    // first Adam step: m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    let mut net = Network::init(&[3, 2], &[Activation::Identity], 4).unwrap();
    let mut adam = Optimizer::new(OptimizerConfig::adam(0.01));
    adam.step(&mut net, &grads).unwrap();
    for ((p, s), g) in net.params().iter().zip(&start).zip(&g) {
        let eps = adam.config().eps;
        assert!((p - (s - 0.01 * g / (g.abs() + eps))).abs() < 1e-15);
    }

    let mut still = Network::init(&[3, 2], &[Activation::Identity], 4).unwrap();
    let zeros = uavx_core::nn::Gradients::zeros_like(&still);
    Optimizer::new(OptimizerConfig::sgd(0.5)).step(&mut still, &zeros).unwrap();
    assert_eq!(still.params(), start);

    let mut bad = zeros.clone();
    bad.layers[0].weights.values_mut()[0] = f64::NAN;
    assert!(Optimizer::new(OptimizerConfig::sgd(0.5)).step(&mut still, &bad).is_err());
}

#[test]
fn clones_are_deep() {
    let mut src = Network::init(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 5).unwrap();
    let copy = src.clone_parameters();
    let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
    let before = copy.forward(&x).unwrap();
    assert_eq!(src.forward(&x).unwrap(), before);
    src.layers_mut()[0].weights.values_mut()[0] += 1.0;
    assert_eq!(copy.forward(&x).unwrap(), before);
    assert_eq!(copy.clone_parameters().clone_parameters().forward(&x).unwrap(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_mean_zero(v in -100.0f64..100.0, a in prop::collection::vec(-100.0f64..100.0, NUM_ACTIONS)) {
        let q = aggregate(v, &a);
        let mean = q.iter().map(|x| x - v).sum::<f64>() / NUM_ACTIONS as f64;
        prop_assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn terminal_targets_are_the_reward(r in -50.0f64..50.0, seed in 0u64..50) {
        let pair = PolicyPair::new(4, &QConfig { hidden: vec![3], ..QConfig::default() }, seed).unwrap();
        let t = Transition {
            state: Tensor::vector(vec![0.5; 4]).unwrap(),
            action: ActionId::FORWARD,
            reward: r,
            next_state: Tensor::vector(vec![0.9; 4]).unwrap(),
            terminal: true,
        };
        prop_assert_eq!(pair.td_target(&t).unwrap().to_bits(), r.to_bits());
    }

    #[test]
    fn forward_is_pure(seed in 0u64..1000, x in prop::collection::vec(-3.0f64..3.0, 6)) {
        let net = Network::init(&[6, 5, 2], &[Activation::Relu, Activation::Identity], seed).unwrap();
        let t = Tensor::vector(x).unwrap();
        prop_assert_eq!(net.forward(&t).unwrap(), net.forward(&t).unwrap());
    }
}
