//! Networks flattened to alternating affine maps and ReLUs.

use crate::network::{conv::lower_conv_to_affine, Layer, Network};
use crate::tensor::{self, Tensor};
use crate::{Error, Result};

/// Dense `out x inp` affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseAffine {
    pub inp: usize,
    pub out: usize,
    /// Row-major `[out, inp]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseAffine {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weight[j * self.inp..(j + 1) * self.inp]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = tensor::matmul_bt(x, 1, self.inp, &self.weight, self.out);
        y.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        y
    }

    /// `self ∘ first`.
    fn after(&self, first: &DenseAffine) -> DenseAffine {
        let weight = tensor::matmul(&self.weight, self.out, self.inp, &first.weight, first.inp);
        let bias = (0..self.out).map(|j| tensor::dot(self.row(j), &first.bias) + self.bias[j]).collect();
        DenseAffine { inp: first.inp, out: self.out, weight, bias }
    }
}

/// `hidden[k]` feeds the `k`-th ReLU layer; `output` maps the last ReLU
/// layer (or the input) to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineNet {
    pub input_dim: usize,
    pub hidden: Vec<DenseAffine>,
    pub output: DenseAffine,
}

impl AffineNet {
    /// Lowers convolutions, drops flattens and composes consecutive affine maps.
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut hidden = Vec::new();
        let mut pending: Option<DenseAffine> = None;
        for (i, layer) in net.layers().iter().enumerate() {
            let map = match layer {
                Layer::Affine(a) => DenseAffine {
                    inp: a.weight.shape()[1],
                    out: a.weight.shape()[0],
                    weight: a.weight.data().to_vec(),
                    bias: a.bias.data().to_vec(),
                },
                Layer::Conv2d(c) => {
                    let g = net.conv_geometry(i).expect("conv geometry");
                    let (w, b) = lower_conv_to_affine(&c.kernels, &c.bias, &g)?;
                    DenseAffine {
                        inp: g.in_len(),
                        out: g.out_len(),
                        weight: w.into_data(),
                        bias: b.into_data(),
                    }
                }
                Layer::Flatten => continue,
                Layer::Relu => {
                    let p = pending
                        .take()
                        .ok_or_else(|| Error::InvalidNetwork(format!("layer {i}: relu without affine input")))?;
                    hidden.push(p);
                    continue;
                }
            };
            pending = Some(match pending {
                Some(prev) => map.after(&prev),
                None => map,
            });
        }
        let output = pending.ok_or_else(|| Error::InvalidNetwork("network ends with a relu".into()))?;
        Ok(Self { input_dim: net.input_dim(), hidden, output })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|h| h.out).collect()
    }

    pub fn num_neurons(&self) -> usize {
        self.hidden.iter().map(|h| h.out).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.output.out
    }

    /// Pre-activations of every hidden layer and the logits.
    pub fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut a = x.to_vec();
        for h in &self.hidden {
            let z = h.apply(&a);
            a = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
        }
        (pre, self.output.apply(&a))
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).1
    }

    /// The same function as a plain affine/ReLU [`Network`] on flat inputs.
    pub fn to_network(&self) -> Result<Network> {
        let mut layers = Vec::new();
        for h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            layers.push(Layer::affine(
                Tensor::matrix(h.out, h.inp, h.weight.clone())?,
                Tensor::vector(h.bias.clone())?,
            ));
            layers.push(Layer::Relu);
        }
        layers.pop();
        Network::new(vec![self.input_dim], layers)
    }
}
