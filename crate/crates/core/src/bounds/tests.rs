use proptest::prelude::*;

use super::*;
use crate::bab::RobustnessProperty;

fn dense(inp: usize, out: usize, weight: Vec<f64>, bias: Vec<f64>) -> DenseAffine {
    DenseAffine { inp, out, weight, bias }
}

fn free() -> BranchConstraints {
    BranchConstraints::new()
}

fn boxed(l: &[f64], u: &[f64]) -> InputBox {
    InputBox::new(l.to_vec(), u.to_vec()).unwrap()
}

/// `h = relu(x, -x)`, `out = h1 + h2 = |x|`.
fn abs_net() -> AffineNet {
    AffineNet {
        input_dim: 1,
        hidden: vec![dense(1, 2, vec![1.0, -1.0], vec![0.0, 0.0])],
        output: dense(2, 1, vec![1.0, 1.0], vec![0.0]),
    }
}

#[test]
fn ibp_on_monotone_affine_and_relu() {
    let net = AffineNet {
        input_dim: 1,
        hidden: vec![dense(1, 1, vec![2.0], vec![-1.0])],
        output: dense(1, 1, vec![1.0], vec![0.0]),
    };
    let b = ibp_bounds(&net, &boxed(&[0.0], &[1.0]), &free()).unwrap();
    assert_eq!((b.lower[0][0], b.upper[0][0]), (-1.0, 1.0));
    assert_eq!((b.output_lower[0], b.output_upper[0]), (0.0, 1.0));
    assert_eq!(b.method, BoundMethod::Ibp);
}

#[test]
fn abs_toy_interval_versus_linear() {
    let bx = boxed(&[-1.0], &[1.0]);
    let ibp = ibp_bounds(&abs_net(), &bx, &free()).unwrap();
    assert_eq!((ibp.output_lower[0], ibp.output_upper[0]), (0.0, 2.0));
    let lin = linear_bounds(&abs_net(), &bx, &free()).unwrap();
    assert!((lin.output_upper[0] - 1.0).abs() < 1e-12, "{}", lin.output_upper[0]);
    let both = compute_bounds(&abs_net(), &bx, &free()).unwrap();
    assert!((both.output_upper[0] - 1.0).abs() < 1e-12);
    assert!(both.output_lower[0] >= 0.0);
    assert_eq!(both.method, BoundMethod::Intersected);
}

#[test]
fn linear_equals_interval_without_relus() {
    let net = AffineNet { input_dim: 2, hidden: vec![], output: dense(2, 2, vec![1.0, -2.0, 0.5, 3.0], vec![0.1, -0.2]) };
    let bx = boxed(&[-1.0, 0.0], &[0.5, 2.0]);
    let ibp = ibp_bounds(&net, &bx, &free()).unwrap();
    let lin = linear_bounds(&net, &bx, &free()).unwrap();
    for i in 0..2 {
        assert!((ibp.output_lower[i] - lin.output_lower[i]).abs() < 1e-12);
        assert!((ibp.output_upper[i] - lin.output_upper[i]).abs() < 1e-12);
    }
}

#[test]
fn branch_phases_change_only_the_transfer() {
    let bx = boxed(&[-1.0], &[1.0]);
    let off = free().with(0, 1, Phase::Inactive).unwrap();
    let b = compute_bounds(&abs_net(), &bx, &off).unwrap();
    // Pre-activation intervals are not shrunk by the split.
    assert_eq!((b.lower[0][1], b.upper[0][1]), (-1.0, 1.0));
    // out = relu(x) only.
    assert!((b.output_upper[0] - 1.0).abs() < 1e-12);
    assert!(free().with(0, 1, Phase::Active).unwrap().insert(0, 1, Phase::Inactive).is_err());
}

#[test]
fn intersection_examples() {
    let a = BoundsMap {
        lower: vec![vec![-2.0]],
        upper: vec![vec![2.0]],
        output_lower: vec![0.0],
        output_upper: vec![1.0],
        method: BoundMethod::Ibp,
    };
    let b = BoundsMap { lower: vec![vec![-1.0]], upper: vec![vec![3.0]], method: BoundMethod::Linear, ..a.clone() };
    let c = intersect_bounds(&a, &b).unwrap();
    assert_eq!((c.lower[0][0], c.upper[0][0]), (-1.0, 2.0));
    let same = intersect_bounds(&a, &a).unwrap();
    assert_eq!((same.lower.clone(), same.upper.clone()), (a.lower.clone(), a.upper.clone()));

    let crossed = BoundsMap { lower: vec![vec![2.5]], upper: vec![vec![3.0]], ..b.clone() };
    assert!(matches!(intersect_bounds(&a, &crossed), Err(Error::CrossedBounds { layer: 0, neuron: 0, .. })));
    // Rounding-level crossings are tolerated.
    let touching = BoundsMap { lower: vec![vec![2.0 + 1e-14]], upper: vec![vec![3.0]], ..b };
    let t = intersect_bounds(&a, &touching).unwrap();
    assert!(t.lower[0][0] <= t.upper[0][0]);
}

#[test]
fn classification_rules() {
    assert_eq!(classify(0.1, 0.5), Stability::Active);
    assert_eq!(classify(-0.5, -0.1), Stability::Inactive);
    assert_eq!(classify(-0.1, 0.1), Stability::Unstable);
    assert_eq!(classify(0.0, 0.0), Stability::Inactive);
    assert_eq!(classify(0.0, 1.0), Stability::Active);
}

#[test]
fn stable_percent_averages_per_property_ratios() {
    // h1 = x, h2 = x - 0.5.
    let net = AffineNet {
        input_dim: 1,
        hidden: vec![dense(1, 2, vec![1.0, 1.0], vec![0.0, -0.5])],
        output: dense(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
    };
    // Around 0.9 both neurons are active; around 0.5 the second is unstable.
    let a = RobustnessProperty::new(vec![0.9], 0.05, 0, [0.0, 1.0], 2).unwrap();
    let b = RobustnessProperty::new(vec![0.5], 0.1, 0, [0.0, 1.0], 2).unwrap();
    assert_eq!(property_stability(&net, &a).unwrap().stable_ratio, 1.0);
    assert_eq!(property_stability(&net, &b).unwrap().stable_ratio, 0.5);
    assert!((stable_percent(&net, &[a.clone(), b]).unwrap() - 75.0).abs() < 1e-12);
    assert_eq!(stable_percent(&net, &[a]).unwrap(), 100.0);
    assert!(stable_percent(&net, &[]).is_err());

    // At a point box a pre-activation of exactly 0 has l = u = 0 and counts as inactive.
    let zero = RobustnessProperty::new(vec![0.5], 0.0, 0, [0.0, 1.0], 2).unwrap();
    let r = property_stability(&net, &zero).unwrap();
    assert_eq!(r.stable_ratio, 1.0);
    assert_eq!(r.per_layer[0], LayerStability { active: 1, inactive: 1, unstable: 0 });
}

#[test]
fn stability_report_json_shape() {
    let r = classify_neurons(&BoundsMap {
        lower: vec![vec![-1.0, 0.5]],
        upper: vec![vec![1.0, 1.0]],
        output_lower: vec![],
        output_upper: vec![],
        method: BoundMethod::Intersected,
    });
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["per_layer"][0]["unstable"], 1);
    assert_eq!(v["stable_ratio"], 0.5);
}

fn random_net(seed: u64, sizes: &[usize]) -> AffineNet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut layers: Vec<DenseAffine> = sizes
        .windows(2)
        .map(|w| {
            let weight = (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            dense(w[0], w[1], weight, bias)
        })
        .collect();
    let output = layers.pop().unwrap();
    AffineNet { input_dim: sizes[0], hidden: layers, output }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ibp_is_monotone_in_the_box(seed in 0u64..1000, x in 0.2f64..0.8, y in 0.2f64..0.8, e1 in 0.0f64..0.2, extra in 0.0f64..0.2) {
        let net = random_net(seed, &[2, 8, 8, 3]);
        let small = InputBox::ball(&[x, y], e1, [0.0, 1.0]).unwrap();
        let big = InputBox::ball(&[x, y], e1 + extra, [0.0, 1.0]).unwrap();
        let a = ibp_bounds(&net, &small, &free()).unwrap();
        let b = ibp_bounds(&net, &big, &free()).unwrap();
        for k in 0..a.lower.len() {
            for j in 0..a.lower[k].len() {
                prop_assert!(a.lower[k][j] >= b.lower[k][j] - 1e-12 && a.upper[k][j] <= b.upper[k][j] + 1e-12);
            }
        }
        prop_assert!(classify_neurons(&a).stable_ratio >= classify_neurons(&b).stable_ratio);
    }

    #[test]
    fn intersected_bounds_contain_sampled_passes(seed in 0u64..1000, x in 0.0f64..1.0, y in 0.0f64..1.0, e in 0.0f64..0.3) {
        use rand::{Rng, SeedableRng};
        let net = random_net(seed, &[2, 8, 8, 2]);
        let bx = InputBox::ball(&[x, y], e, [0.0, 1.0]).unwrap();
        let b = compute_bounds(&net, &bx, &free()).unwrap();
        let ibp = ibp_bounds(&net, &bx, &free()).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let p: Vec<f64> = (0..2).map(|i| rng.random_range(bx.lower[i]..=bx.upper[i])).collect();
            let (pre, logits) = net.forward(&p);
            prop_assert!(b.contains(&pre, &logits, 1e-9));
        }
        for k in 0..b.lower.len() {
            for j in 0..b.lower[k].len() {
                prop_assert!(b.lower[k][j] >= ibp.lower[k][j] && b.upper[k][j] <= ibp.upper[k][j]);
                prop_assert!(b.lower[k][j] <= b.upper[k][j]);
            }
        }
    }
}
