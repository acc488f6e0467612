//! Library outputs against plain-loop reference implementations, plus
//! serialization round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use nbc_core::data::{load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages, Split};
use nbc_core::network::{load_model, save_model, Conv2d};
use nbc_core::training::{gamma_factors, nbc_scores, GammaScheme};
use nbc_core::{Layer, Network, Tensor};

fn uniform(r: &mut ChaCha12Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-s..s)).collect()
}

struct Dense {
    w: Vec<f64>,
    b: Vec<f64>,
    out: usize,
}

struct Conv {
    k: Vec<f64>,
    b: Vec<f64>,
    oc: usize,
    ic: usize,
    kh: usize,
    stride: usize,
    pad: usize,
}

/// 1x8x8 input -> conv 3x3x3 stride 2 pad 1 -> relu -> 48 -> 12 -> relu -> 4.
fn conv_case(r: &mut ChaCha12Rng) -> (Network, Conv, Dense, Dense) {
    let conv = Conv { k: uniform(r, 3 * 9, 0.7), b: uniform(r, 3, 0.2), oc: 3, ic: 1, kh: 3, stride: 2, pad: 1 };
    let d1 = Dense { w: uniform(r, 12 * 48, 0.3), b: uniform(r, 12, 0.2), out: 12 };
    let d2 = Dense { w: uniform(r, 4 * 12, 0.5), b: uniform(r, 4, 0.2), out: 4 };
    let net = Network::new(
        vec![1, 8, 8],
        vec![
            Layer::Conv2d(Conv2d {
                kernels: Tensor::new(vec![3, 1, 3, 3], conv.k.clone()).unwrap(),
                bias: Tensor::vector(conv.b.clone()).unwrap(),
                stride: 2,
                padding: 1,
            }),
            Layer::Relu,
            Layer::Flatten,
            Layer::affine(Tensor::matrix(12, 48, d1.w.clone()).unwrap(), Tensor::vector(d1.b.clone()).unwrap()),
            Layer::Relu,
            Layer::affine(Tensor::matrix(4, 12, d2.w.clone()).unwrap(), Tensor::vector(d2.b.clone()).unwrap()),
        ],
    )
    .unwrap();
    (net, conv, d1, d2)
}

fn dense(d: &Dense, x: &[f64]) -> Vec<f64> {
    (0..d.out).map(|o| d.b[o] + (0..x.len()).map(|i| d.w[o * x.len() + i] * x[i]).sum::<f64>()).collect()
}

fn conv(c: &Conv, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let oh = (h + 2 * c.pad - c.kh) / c.stride + 1;
    let ow = (w + 2 * c.pad - c.kh) / c.stride + 1;
    let mut out = vec![0.0; c.oc * oh * ow];
    for o in 0..c.oc {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = c.b[o];
                for i in 0..c.ic {
                    for ky in 0..c.kh {
                        for kx in 0..c.kh {
                            let iy = (y * c.stride + ky) as isize - c.pad as isize;
                            let ix = (xo * c.stride + kx) as isize - c.pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += c.k[((o * c.ic + i) * c.kh + ky) * c.kh + kx] * x[(i * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = s;
            }
        }
    }
    out
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn conv_forward_matches_reference_loops() {
    let mut r = ChaCha12Rng::seed_from_u64(1);
    let (net, c, d1, d2) = conv_case(&mut r);
    let x: Vec<f64> = (0..20 * 64).map(|_| r.random::<f64>()).collect();
    let got = net.logits_batch(&Tensor::matrix(20, 64, x.clone()).unwrap()).unwrap();
    for (row, sample) in x.chunks(64).enumerate() {
        let want = dense(&d2, &relu(&dense(&d1, &relu(&conv(&c, sample, 8, 8)))));
        for (k, w) in want.iter().enumerate() {
            assert!((got.data()[row * 4 + k] - w).abs() < 1e-12, "row {row} logit {k}");
        }
    }
}

#[test]
fn mlp_forward_matches_reference_loops() {
    let mut r = ChaCha12Rng::seed_from_u64(2);
    let layers = [Dense { w: uniform(&mut r, 9 * 5, 1.0), b: uniform(&mut r, 9, 0.5), out: 9 }, Dense { w: uniform(&mut r, 6 * 9, 1.0), b: uniform(&mut r, 6, 0.5), out: 6 }, Dense { w: uniform(&mut r, 3 * 6, 1.0), b: uniform(&mut r, 3, 0.5), out: 3 }];
    let widths = [5, 9, 6];
    let mut net_layers = Vec::new();
    for (i, d) in layers.iter().enumerate() {
        net_layers.push(Layer::affine(Tensor::matrix(d.out, widths[i], d.w.clone()).unwrap(), Tensor::vector(d.b.clone()).unwrap()));
        if i < 2 {
            net_layers.push(Layer::Relu);
        }
    }
    let net = Network::new(vec![5], net_layers).unwrap();
    let x: Vec<f64> = (0..30 * 5).map(|_| r.random::<f64>()).collect();
    let got = net.logits_batch(&Tensor::matrix(30, 5, x.clone()).unwrap()).unwrap();
    for (row, s) in x.chunks(5).enumerate() {
        let want = dense(&layers[2], &relu(&dense(&layers[1], &relu(&dense(&layers[0], s)))));
        for k in 0..3 {
            assert!((got.data()[row * 3 + k] - want[k]).abs() < 1e-12);
        }
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn consistency_score_matches_reference() {
    let mut r = ChaCha12Rng::seed_from_u64(3);
    let (w1, b1) = (uniform(&mut r, 8 * 4, 1.0), uniform(&mut r, 8, 0.5));
    let (w2, b2) = (uniform(&mut r, 5 * 8, 1.0), uniform(&mut r, 5, 0.5));
    let (w3, b3) = (uniform(&mut r, 3 * 5, 1.0), uniform(&mut r, 3, 0.5));
    let net = Network::new(
        vec![4],
        vec![
            Layer::affine(Tensor::matrix(8, 4, w1.clone()).unwrap(), Tensor::vector(b1.clone()).unwrap()),
            Layer::Relu,
            Layer::affine(Tensor::matrix(5, 8, w2.clone()).unwrap(), Tensor::vector(b2.clone()).unwrap()),
            Layer::Relu,
            Layer::affine(Tensor::matrix(3, 5, w3.clone()).unwrap(), Tensor::vector(b3.clone()).unwrap()),
        ],
    )
    .unwrap();
    // Widths 8 and 5: the wider layer ranks 2, so factors are 4 and 2.
    let gamma = gamma_factors(&[8, 5], GammaScheme::ExpRank).unwrap();
    assert_eq!(gamma.factors, vec![4.0, 2.0]);

    let x: Vec<f64> = (0..10 * 4).map(|_| r.random::<f64>()).collect();
    let xp: Vec<f64> = x.iter().map(|v| (v + r.random_range(-0.2..0.2)).clamp(0.0, 1.0)).collect();
    let got = nbc_scores(&net, &Tensor::matrix(10, 4, x.clone()).unwrap(), &Tensor::matrix(10, 4, xp.clone()).unwrap(), &gamma).unwrap();

    let l1 = Dense { w: w1, b: b1, out: 8 };
    let l2 = Dense { w: w2, b: b2, out: 5 };
    let l3 = Dense { w: w3, b: b3, out: 3 };
    let pass = |s: &[f64]| {
        let p1 = dense(&l1, s);
        let p2 = dense(&l2, &relu(&p1));
        let y = dense(&l3, &relu(&p2));
        (p1, p2, y)
    };
    for i in 0..10 {
        let (a1, a2, ya) = pass(&x[i * 4..i * 4 + 4]);
        let (c1, c2, yc) = pass(&xp[i * 4..i * 4 + 4]);
        let (p, q) = (softmax(&ya), softmax(&yc));
        let kl: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
        let want = cosine(&a1, &c1) / 4.0 + cosine(&a2, &c2) / 2.0 - kl;
        assert!((got[i] - want).abs() < 1e-10, "row {i}: {} vs {want}", got[i]);
    }
}

#[test]
fn model_json_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha12Rng::seed_from_u64(4);
    let (conv_net, ..) = conv_case(&mut r);
    let mlp = nbc_core::network::init_params(&Network::mlp(64, &[16, 8], 4).unwrap(), 9);
    for (name, net) in [("conv", conv_net), ("mlp", mlp)] {
        let path = dir.path().join(format!("{name}.json"));
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        let x = Tensor::matrix(100, 64, (0..6400).map(|_| r.random::<f64>()).collect()).unwrap();
        let (a, b) = (net.logits_batch(&x).unwrap(), back.logits_batch(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()), "{name}");
    }
}

#[test]
fn idx_files_round_trip_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha12Rng::seed_from_u64(5);
    let images = IdxImages { count: 30, rows: 4, cols: 3, pixels: (0..360).map(|_| r.random::<u8>()).collect() };
    let labels: Vec<u8> = (0..30).map(|i| (i % 10) as u8).collect();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    std::fs::write(&ip, write_idx_images(&images)).unwrap();
    std::fs::write(&lp, write_idx_labels(&labels)).unwrap();
    assert_eq!(parse_idx_images(&std::fs::read(&ip).unwrap()).unwrap(), images);
    assert_eq!(parse_idx_labels(&std::fs::read(&lp).unwrap()).unwrap(), labels);

    let ds = load_mnist_idx(&ip, &lp, None, Split::Train).unwrap();
    assert_eq!(ds.len(), 30);
    assert_eq!(ds.features(), 12);
    for i in 0..30 {
        assert_eq!(ds.labels()[i], labels[i] as usize);
        for (k, &v) in ds.input(i).iter().enumerate() {
            assert_eq!(v, images.pixels[i * 12 + k] as f64 / 255.0);
        }
    }
    let limited = load_mnist_idx(&ip, &lp, Some(2), Split::Train).unwrap();
    assert_eq!(limited.len(), 20);
    assert_eq!(limited.labels()[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"), None, Split::Train).unwrap();
    let test = load_mnist_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"), None, Split::Test).unwrap();
    assert_eq!(train.features(), 784);
    assert_eq!(train.class_counts(), vec![200; 10]);
    assert_eq!(test.class_counts(), vec![100; 10]);
    assert!(train.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = nbc_core::experiment::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        assert!(!cfg.methods().is_empty());
    }
}
