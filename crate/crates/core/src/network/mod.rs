//! Feed-forward ReLU networks: layer graph, forward passes (plain and on the
//! autograd tape), initialization and the JSON model format.

pub mod conv;
mod io;

use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::data::RngStream;
use crate::tensor::{self, Tensor};
use crate::{Error, Result};

pub use conv::ConvGeometry;
pub use io::{load_model, model_from_json, model_to_json, save_model};

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[out_c, in_c, kh, kw]`
    pub kernels: Tensor,
    /// `[out_c]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Affine(Affine),
    Conv2d(Conv2d),
    Relu,
    Flatten,
}

impl Layer {
    pub fn affine(weight: Tensor, bias: Tensor) -> Self {
        Layer::Affine(Affine { weight, bias })
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }
}

/// A validated layer stack. The structure is fixed after construction; only
/// parameter values change (through [`Network::params_mut`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Output shape of each layer.
    shapes: Vec<Vec<usize>>,
    /// Geometry of each conv layer, `None` elsewhere.
    geoms: Vec<Option<ConvGeometry>>,
    seed: Option<u64>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut geoms = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            let width: usize = cur.iter().product();
            let (next, geom) = match layer {
                Layer::Affine(a) => {
                    let ws = a.weight.shape();
                    if ws.len() != 2 || ws[1] != width {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: affine weight {ws:?} does not accept width {width}"
                        )));
                    }
                    if a.bias.len() != ws[0] {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: bias length {} for {} outputs",
                            a.bias.len(),
                            ws[0]
                        )));
                    }
                    (vec![ws[0]], None)
                }
                Layer::Conv2d(c) => {
                    let ks = c.kernels.shape();
                    if ks.len() != 4 {
                        return Err(Error::InvalidNetwork(format!("layer {i}: kernels must be 4-D, got {ks:?}")));
                    }
                    if cur.len() != 3 || cur[0] != ks[1] {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: conv with {} input channels cannot follow shape {cur:?}",
                            ks[1]
                        )));
                    }
                    let g = ConvGeometry::new(&cur, ks[0], ks[2], ks[3], c.stride, c.padding)?;
                    if c.bias.len() != ks[0] {
                        return Err(Error::InvalidNetwork(format!("layer {i}: conv bias length mismatch")));
                    }
                    (g.out_shape(), Some(g))
                }
                Layer::Relu => {
                    let prev = i.checked_sub(1).map(|p| &layers[p]);
                    if !matches!(prev, Some(Layer::Affine(_)) | Some(Layer::Conv2d(_))) {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: relu must directly follow an affine or conv layer"
                        )));
                    }
                    (cur.clone(), None)
                }
                Layer::Flatten => (vec![width], None),
            };
            shapes.push(next.clone());
            geoms.push(geom);
            cur = next;
        }
        match layers.iter().rev().find(|l| !matches!(l, Layer::Flatten)) {
            Some(Layer::Affine(_)) => {}
            other => {
                return Err(Error::InvalidNetwork(format!(
                    "final layer must be affine (logits), found {}",
                    other.map_or("nothing", Layer::kind)
                )))
            }
        }
        let net = Self {
            input_shape,
            layers,
            shapes,
            geoms,
            seed: None,
        };
        for p in net.params() {
            p.check_finite("network parameters")?;
        }
        Ok(net)
    }

    /// Zero-initialized MLP `input -> hidden... -> classes` with ReLU between
    /// affine layers.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::affine(Tensor::zeros(&[h, width]), Tensor::zeros(&[h])));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::affine(Tensor::zeros(&[classes, width]), Tensor::zeros(&[classes])));
        Self::new(vec![input], layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn conv_geometry(&self, i: usize) -> Option<ConvGeometry> {
        self.geoms[i]
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.iter().product())
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        self.seed = seed;
    }

    /// Flattened pre-activation width of each ReLU layer.
    pub fn hidden_layer_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .map(|(i, _)| self.shapes[i].iter().product())
            .collect()
    }

    /// Parameter tensors in layer order (weight then bias).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Affine(a) => out.extend([&a.weight, &a.bias]),
                Layer::Conv2d(c) => out.extend([&c.kernels, &c.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Affine(a) => out.extend([&mut a.weight, &mut a.bias]),
                Layer::Conv2d(c) => out.extend([&mut c.kernels, &mut c.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batched forward pass without recording gradients. `x` is `[batch, input_dim]`;
    /// returns the per-layer outputs.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let batch = x.rows();
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input {:?}",
                x.cols(),
                self.input_shape
            )));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut cur = x.data().to_vec();
        let mut width = x.cols();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Affine(a) => {
                    let out_w = a.weight.shape()[0];
                    let mut z = tensor::matmul_bt(&cur, batch, width, a.weight.data(), out_w);
                    z.chunks_mut(out_w)
                        .for_each(|r| r.iter_mut().zip(a.bias.data()).for_each(|(v, b)| *v += b));
                    width = out_w;
                    z
                }
                Layer::Conv2d(c) => {
                    let g = self.geoms[i].expect("conv geometry");
                    width = g.out_len();
                    conv::conv_forward(&cur, batch, c.kernels.data(), Some(c.bias.data()), &g)
                }
                Layer::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
                Layer::Flatten => cur,
            };
            let t = Tensor::from_parts(vec![batch, width], cur.clone())?;
            t.check_finite(&format!("output of layer {i} ({})", layer.kind()))?;
            outputs.push(t);
        }
        Ok(outputs)
    }

    /// Logits for a batch `[batch, input_dim]`.
    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_batch(x)?.pop().expect("non-empty network"))
    }

    /// Places every parameter on `tape`, tracked or constant.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<BoundParams> {
        let mut vars = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let pair = match l {
                Layer::Affine(a) => Some((a.weight.clone(), a.bias.clone())),
                Layer::Conv2d(c) => {
                    let g = self.geoms[i].expect("conv geometry");
                    Some((c.kernels.clone().reshape(vec![g.out_c, g.kernel_len()])?, c.bias.clone()))
                }
                _ => None,
            };
            vars.push(match pair {
                Some((w, b)) => {
                    let b = b.reshape(vec![1, self.shapes[i][0]])?;
                    let (w, b) = if track {
                        (tape.var(w)?, tape.var(b)?)
                    } else {
                        (tape.constant(w)?, tape.constant(b)?)
                    };
                    Some((w, b))
                }
                None => None,
            });
        }
        Ok(BoundParams { per_layer: vars })
    }

    /// Forward pass recorded on `tape`. `x` is a `[batch, input_dim]` node.
    pub fn forward_tape(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<TapeTrace> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input {:?}",
                tape.value(x).cols(),
                self.input_shape
            )));
        }
        let mut cur = x;
        let mut relu_pre = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Affine(_) => {
                    let (w, b) = params.per_layer[i].expect("bound affine");
                    tape.linear(cur, w, b)?
                }
                Layer::Conv2d(_) => {
                    let (k, b) = params.per_layer[i].expect("bound conv");
                    tape.conv2d(cur, k, Some(b), self.geoms[i].expect("conv geometry"))?
                }
                Layer::Relu => {
                    relu_pre.push(cur);
                    tape.relu(cur)?
                }
                Layer::Flatten => cur,
            };
        }
        Ok(TapeTrace { relu_pre, logits: cur })
    }

    /// Gradient tensors for every parameter, reshaped to the parameter shapes.
    pub fn param_grads(&self, params: &BoundParams, grads: &mut crate::autograd::Gradients) -> Result<Vec<Tensor>> {
        let shapes: Vec<Vec<usize>> = self.params().iter().map(|p| p.shape().to_vec()).collect();
        let vars: Vec<Var> = params.per_layer.iter().flatten().flat_map(|&(w, b)| [w, b]).collect();
        vars.into_iter()
            .zip(shapes)
            .map(|(v, s)| grads.take(v).reshape(s))
            .collect()
    }
}

/// Parameter nodes of a network placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    per_layer: Vec<Option<(Var, Var)>>,
}

impl BoundParams {
    /// Weight (or kernel) and bias nodes of layer `i`, if it has parameters.
    pub fn layer(&self, i: usize) -> Option<(Var, Var)> {
        self.per_layer.get(i).copied().flatten()
    }
}

/// Nodes produced by [`Network::forward_tape`].
#[derive(Clone, Debug)]
pub struct TapeTrace {
    /// Input of each ReLU layer, `[batch, width]`.
    pub relu_pre: Vec<Var>,
    pub logits: Var,
}

/// Per-layer outputs of one forward pass over a single input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub input: Tensor,
    /// Output of each layer, flattened to 1-D.
    pub outputs: Vec<Tensor>,
    relu_layers: Vec<usize>,
}

impl ActivationTrace {
    /// Pre-activation vectors feeding each ReLU layer.
    pub fn pre_activations(&self) -> Vec<&Tensor> {
        self.relu_layers
            .iter()
            .map(|&i| if i == 0 { &self.input } else { &self.outputs[i - 1] })
            .collect()
    }

    pub fn post_activations(&self) -> Vec<&Tensor> {
        self.relu_layers.iter().map(|&i| &self.outputs[i]).collect()
    }

    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("non-empty trace")
    }
}

/// Single-sample forward pass returning every intermediate value.
pub fn forward(net: &Network, x: &Tensor) -> Result<ActivationTrace> {
    if x.len() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input of {} values for network input {:?}",
            x.len(),
            net.input_shape
        )));
    }
    x.check_finite("network input")?;
    let batch = Tensor::from_parts(vec![1, x.len()], x.data().to_vec())?;
    let outputs = net
        .forward_batch(&batch)?
        .into_iter()
        .map(|t| {
            let n = t.len();
            t.reshape(vec![n])
        })
        .collect::<Result<Vec<_>>>()?;
    let relu_layers = net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Relu))
        .map(|(i, _)| i)
        .collect();
    Ok(ActivationTrace {
        input: Tensor::from_parts(vec![x.len()], x.data().to_vec())?,
        outputs,
        relu_layers,
    })
}

/// He-normal weights (variance `2 / fan_in`) and zero biases, deterministic in `seed`.
pub fn init_params(net: &Network, seed: u64) -> Network {
    let mut out = net.clone();
    let mut rng = RngStream::new(seed, "init").into_rng();
    for l in &mut out.layers {
        let (w, b, fan_in) = match l {
            Layer::Affine(a) => {
                let fan_in = a.weight.shape()[1];
                (&mut a.weight, &mut a.bias, fan_in)
            }
            Layer::Conv2d(c) => {
                let s = c.kernels.shape();
                let fan_in = s[1] * s[2] * s[3];
                (&mut c.kernels, &mut c.bias, fan_in)
            }
            _ => continue,
        };
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        w.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        b.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    out.seed = Some(seed);
    out
}
