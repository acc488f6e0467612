use super::*;
use crate::data::{gen_synthetic, Split, SyntheticKind};
use crate::network::init_params;
use crate::Layer;

fn affine(w: Vec<Vec<f64>>, b: Vec<f64>) -> Layer {
    let (r, c) = (w.len(), w[0].len());
    Layer::affine(
        Tensor::matrix(r, c, w.into_iter().flatten().collect()).unwrap(),
        Tensor::vector(b).unwrap(),
    )
}

fn rows(n: usize, d: usize, f: impl Fn(usize) -> f64) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(f).collect()).unwrap()
}

/// 2 -> 4 -> 2 -> 2 with all hidden pre-activations positive on the unit square.
fn positive_net() -> Network {
    Network::new(
        vec![2],
        vec![
            affine(vec![vec![1.0, 0.5]; 4], vec![0.1, 0.2, 0.3, 0.4]),
            Layer::Relu,
            affine(vec![vec![0.5, 0.5, 0.5, 0.5]; 2], vec![0.1, 0.2]),
            Layer::Relu,
            affine(vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![0.0, 0.0]),
        ],
    )
    .unwrap()
}

#[test]
fn identical_inputs_score_the_gamma_sum() {
    let net = positive_net();
    let gamma = net_gamma(&net, &TrainConfig::default()).unwrap();
    assert_eq!(gamma.factors, vec![4.0, 2.0]);
    let x = Tensor::vector(vec![0.3, 0.7]).unwrap();
    let s = nbc_score(&net, &x, &x, &gamma).unwrap();
    assert!((s - 0.75).abs() < 1e-12, "{s}");
}

#[test]
fn dead_layer_contributes_zero() {
    // Second hidden layer has pre-activation exactly zero for x' = 0.
    let net = Network::new(
        vec![1],
        vec![
            affine(vec![vec![1.0]], vec![1.0]),
            Layer::Relu,
            affine(vec![vec![0.0]], vec![0.0]),
            Layer::Relu,
            affine(vec![vec![1.0]], vec![0.0]),
        ],
    )
    .unwrap();
    let gamma = gamma_factors(&[1, 1], GammaScheme::Unit).unwrap();
    let x = Tensor::vector(vec![0.5]).unwrap();
    let s = nbc_score(&net, &x, &x, &gamma).unwrap();
    assert!((s - 1.0).abs() < 1e-12, "{s}");
}

#[test]
fn adversary_stays_in_ball_and_is_deterministic() {
    let net = init_params(&Network::mlp(3, &[8, 4], 3).unwrap(), 1);
    let gamma = net_gamma(&net, &TrainConfig::default()).unwrap();
    let x = rows(5, 3, |i| (i as f64 * 0.37) % 1.0);
    let rng = RngStream::new(4, "t");
    for k in [0, 1, 10] {
        let a = find_adversary_nbc(&net, &x, 0.1, k, 0.5, [0.0, 1.0], &gamma, &rng).unwrap();
        let b = find_adversary_nbc(&net, &x, 0.1, k, 0.5, [0.0, 1.0], &gamma, &rng).unwrap();
        assert_eq!(a, b);
        for (p, c) in a.data().iter().zip(x.data()) {
            assert!((p - c).abs() <= 0.1 + 1e-15 && (0.0..=1.0).contains(p));
        }
    }
}

#[test]
fn nbc_loss_degenerate_cases() {
    let net = positive_net();
    let x = rows(3, 2, |i| 0.1 + 0.1 * i as f64);
    let y = vec![0, 1, 0];
    let rng = RngStream::new(0, "t");
    let mut cfg = TrainConfig::default();
    let ce_only = {
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, false).unwrap();
        build_loss(&mut tape, &net, &p, &x, &y, LossKind::Ce, 0.0, &cfg, &rng).unwrap().1
    };
    let zero_beta = nbc_loss(&net, &x, &y, &cfg, 0.0, &rng).unwrap();
    assert_eq!(zero_beta.total, ce_only.total);
    cfg.epsilon = 0.0;
    let v = nbc_loss(&net, &x, &y, &cfg, 2.0, &rng).unwrap();
    assert!((v.total - (ce_only.ce - 2.0 * 0.75)).abs() < 1e-12, "{v:?}");
}

#[test]
fn pgd_matches_linear_closed_form() {
    // logits (3x, 0) with label 0: the loss falls as x grows, so one sign step of 0.1 goes down.
    let net = Network::new(vec![1], vec![affine(vec![vec![3.0], vec![0.0]], vec![0.0, 0.0])]).unwrap();
    let x = Tensor::matrix(1, 1, vec![0.5]).unwrap();
    let adv = pgd_attack(&net, &x, &[0], 0.1, 1, 0.1, [0.0, 1.0], &RngStream::new(0, "t"), 1).unwrap();
    assert!((adv.data()[0] - 0.4).abs() < 1e-12);
    let same = pgd_attack(&net, &x, &[0], 0.0, 10, 0.1, [0.0, 1.0], &RngStream::new(0, "t"), 3).unwrap();
    assert_eq!(same, x);
}

#[test]
fn rs_penalty_hand_values() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::row(vec![-1.0, 1.0]).unwrap()).unwrap();
    let u = tape.constant(Tensor::row(vec![1.0, 2.0]).unwrap()).unwrap();
    let p = rs_penalty(&mut tape, &[(l, u)], 1).unwrap();
    let want = -(0.0f64.tanh()) - 3.0f64.tanh();
    assert!((tape.value(p).data()[0] - want).abs() < 1e-12);
    assert!((want + 0.995).abs() < 1e-3);
}

#[test]
fn tape_ibp_matches_hand_intervals() {
    let net = Network::new(
        vec![1],
        vec![affine(vec![vec![2.0]], vec![-1.0]), Layer::Relu, affine(vec![vec![1.0]], vec![0.0])],
    )
    .unwrap();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, false).unwrap();
    let x = Tensor::matrix(1, 1, vec![0.5]).unwrap();
    let b = TapeIbp.relu_bounds(&mut tape, &net, &params, &x, 0.5, [0.0, 1.0]).unwrap();
    assert_eq!(tape.value(b[0].0).data(), &[-1.0]);
    assert_eq!(tape.value(b[0].1).data(), &[1.0]);
}

#[test]
fn baselines_reduce_to_ce() {
    let net = positive_net();
    let x = rows(2, 2, |i| 0.2 * i as f64);
    let y = vec![1, 0];
    let rng = RngStream::new(0, "t");
    let eval = |kind, cfg: &TrainConfig, bounds: Option<&dyn BoundsProvider>| {
        let mut tape = Tape::new();
        let p = net.bind(&mut tape, false).unwrap();
        build_loss_with(&mut tape, &net, &p, &x, &y, kind, 1.0, cfg, &rng, bounds).map(|r| r.1)
    };
    let cfg = TrainConfig::default();
    let ce = eval(LossKind::Ce, &cfg, None).unwrap().total;
    let trades = eval(LossKind::Trades, &TrainConfig { trades_lambda: 0.0, ..cfg.clone() }, None).unwrap();
    assert_eq!(trades.total, ce);
    let madry = eval(LossKind::Madry, &TrainConfig { epsilon: 0.0, ..cfg.clone() }, None).unwrap();
    assert_eq!(madry.total, ce);
    assert!(eval(LossKind::Rs, &cfg, None).is_err());
    let rs = eval(LossKind::Rs, &cfg, Some(&TapeIbp)).unwrap();
    assert!((rs.total - (rs.ce + cfg.rs_weight * rs.regularizer)).abs() < 1e-12);
}

#[test]
fn zero_epochs_returns_initial_net() {
    let ds = gen_synthetic(SyntheticKind::Blobs, 20, 0.05, 0, Split::Train).unwrap();
    let net = init_params(&Network::mlp(2, &[4], 2).unwrap(), 0);
    let (out, hist) = train(&net, &ds, None, &TrainConfig::single(LossKind::Nbc, 0)).unwrap();
    assert!(hist.is_empty());
    assert_eq!(out.params(), net.params());
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let ds = gen_synthetic(SyntheticKind::Blobs, 200, 0.05, 0, Split::Train).unwrap();
    let net = init_params(&Network::mlp(2, &[16], 2).unwrap(), 0);
    let cfg = TrainConfig {
        batch_size: 32,
        adam: crate::optim::AdamHyper { lr: 1e-2, ..Default::default() },
        ..TrainConfig::single(LossKind::Ce, 200)
    };
    let (trained, hist) = train(&net, &ds, None, &cfg).unwrap();
    assert_eq!(hist.len(), 200);
    assert_eq!(accuracy(&trained, &ds).unwrap(), 100.0);
}

#[test]
fn training_is_deterministic_and_history_round_trips() {
    let ds = gen_synthetic(SyntheticKind::Moons, 64, 0.05, 1, Split::Train).unwrap();
    let net = init_params(&Network::mlp(2, &[8, 8], 2).unwrap(), 3);
    let cfg = TrainConfig {
        phases: vec![
            Phase { loss: LossKind::Madry, epochs: 1, beta: None },
            Phase { loss: LossKind::MadryNbc, epochs: 1, beta: Some(0.5) },
            Phase { loss: LossKind::RsNbc, epochs: 1, beta: None },
            Phase { loss: LossKind::TradesNbc, epochs: 1, beta: None },
        ],
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (a, ha) = train(&net, &ds, Some(&ds), &cfg).unwrap();
    let (b, hb) = train(&net, &ds, Some(&ds), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    write_history_csv(&ha, &p).unwrap();
    assert_eq!(read_history_csv(&p).unwrap(), ha);
    assert!(std::fs::read_to_string(&p).unwrap().starts_with("epoch,phase,loss,train_acc,test_acc"));
}

proptest::proptest! {
    #[test]
    fn projection_lands_in_ball_and_domain(
        x in proptest::collection::vec(0.0f64..=1.0, 1..8),
        noise in proptest::collection::vec(-3.0f64..3.0, 8),
        eps in 0.0f64..0.6,
    ) {
        let n = x.len();
        let x = Tensor::matrix(1, n, x).unwrap();
        let mut xp = Tensor::matrix(1, n, x.data().iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        project_into_ball(&mut xp, &x, eps, [0.0, 1.0]);
        for (&p, &c) in xp.data().iter().zip(x.data()) {
            proptest::prop_assert!((p - c).abs() <= eps + 1e-15);
            proptest::prop_assert!((0.0..=1.0).contains(&p));
        }
        let again = { let mut t = xp.clone(); project_into_ball(&mut t, &x, eps, [0.0, 1.0]); t };
        proptest::prop_assert_eq!(again, xp);
    }
}
