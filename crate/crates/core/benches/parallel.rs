//! Serial versus rayon on the data-parallel hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use nbc_core::bab::RobustnessProperty;
use nbc_core::bounds::{stable_percent, AffineNet};
use nbc_core::data::RngStream;
use nbc_core::network::init_params;
use nbc_core::training::{nbc_loss, LossKind, TrainConfig};
use nbc_core::{par, Network, Tensor};

fn inputs(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for serial in [true, false] {
        let label = if serial { "serial" } else { "parallel" };
        g.bench_function(BenchmarkId::from_parameter(label), |b| {
            par::set_serial(serial);
            b.iter(&mut f);
        });
    }
    par::set_serial(false);
    g.finish();
}

fn forward(c: &mut Criterion) {
    let net = init_params(&Network::mlp(784, &[256, 128], 10).unwrap(), 0);
    let x = inputs(512, 784, 1);
    modes(c, "forward_batch_512x784", || {
        black_box(net.logits_batch(&x).unwrap());
    });
}

fn stability(c: &mut Criterion) {
    let net = init_params(&Network::mlp(784, &[64, 32], 10).unwrap(), 0);
    let affine = AffineNet::from_network(&net).unwrap();
    let x = inputs(64, 784, 2);
    let props: Vec<_> = (0..64)
        .map(|i| RobustnessProperty::new(x.data()[i * 784..(i + 1) * 784].to_vec(), 0.03, i % 10, [0.0, 1.0], 10).unwrap())
        .collect();
    modes(c, "stable_percent_64_props", || {
        black_box(stable_percent(&affine, &props).unwrap());
    });
}

fn nbc_step(c: &mut Criterion) {
    let net = init_params(&Network::mlp(784, &[64, 32], 10).unwrap(), 0);
    let x = inputs(128, 784, 3);
    let labels: Vec<usize> = (0..128).map(|i| i % 10).collect();
    let cfg = TrainConfig::single(LossKind::Nbc, 1);
    let rng = RngStream::new(0, "bench");
    modes(c, "nbc_loss_batch_128", || {
        black_box(nbc_loss(&net, &x, &labels, &cfg, 1.0, &rng).unwrap());
    });
}

criterion_group!(benches, forward, stability, nbc_step);
criterion_main!(benches);
