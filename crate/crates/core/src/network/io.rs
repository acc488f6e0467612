//! JSON model documents.
//!
//! ```json
//! {"layers":[{"kind":"affine","w":[[0.5,-1.0]],"b":[0.0]}],
//!  "meta":{"input_shape":[2],"seed":0}}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Affine, Conv2d, Layer, Network};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerDoc {
    Affine {
        w: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Conv2d {
        /// `[out_c][in_c][kh][kw]`
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
}

#[derive(Serialize, Deserialize)]
struct MetaDoc {
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layers: Vec<LayerDoc>,
    meta: MetaDoc,
}

fn rectangular<T>(rows: &[Vec<T>], what: &str) -> Result<usize> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidNetwork(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(width)
}

impl LayerDoc {
    fn from_layer(layer: &Layer) -> Self {
        match layer {
            Layer::Affine(a) => LayerDoc::Affine {
                w: a.weight.data().chunks(a.weight.cols()).map(<[f64]>::to_vec).collect(),
                b: a.bias.data().to_vec(),
            },
            Layer::Conv2d(c) => {
                let s = c.kernels.shape();
                let (kh, kw) = (s[2], s[3]);
                let kernels = c
                    .kernels
                    .data()
                    .chunks(s[1] * kh * kw)
                    .map(|o| o.chunks(kh * kw).map(|ch| ch.chunks(kw).map(<[f64]>::to_vec).collect()).collect())
                    .collect();
                LayerDoc::Conv2d {
                    kernels,
                    bias: c.bias.data().to_vec(),
                    stride: c.stride,
                    padding: c.padding,
                }
            }
            Layer::Relu => LayerDoc::Relu,
            Layer::Flatten => LayerDoc::Flatten,
        }
    }

    fn into_layer(self, index: usize) -> Result<Layer> {
        let ctx = |what: &str| format!("layer {index}: {what}");
        Ok(match self {
            LayerDoc::Affine { w, b } => {
                let cols = rectangular(&w, &ctx("w"))?;
                let rows = w.len();
                Layer::Affine(Affine {
                    weight: Tensor::matrix(rows, cols, w.into_iter().flatten().collect())?,
                    bias: Tensor::vector(b)?,
                })
            }
            LayerDoc::Conv2d { kernels, bias, stride, padding } => {
                let in_c = rectangular(&kernels, &ctx("kernels"))?;
                let kh = rectangular(&kernels[0], &ctx("kernels"))?;
                let kw = rectangular(&kernels[0][0], &ctx("kernels"))?;
                let mut flat = Vec::with_capacity(kernels.len() * in_c * kh * kw);
                for o in &kernels {
                    for ch in o {
                        if ch.len() != kh || ch.iter().any(|r| r.len() != kw) {
                            return Err(Error::InvalidNetwork(ctx("ragged kernels")));
                        }
                        ch.iter().for_each(|r| flat.extend_from_slice(r));
                    }
                    if o.len() != in_c {
                        return Err(Error::InvalidNetwork(ctx("ragged kernels")));
                    }
                }
                Layer::Conv2d(Conv2d {
                    kernels: Tensor::new(vec![kernels.len(), in_c, kh, kw], flat)?,
                    bias: Tensor::vector(bias)?,
                    stride,
                    padding,
                })
            }
            LayerDoc::Relu => Layer::Relu,
            LayerDoc::Flatten => Layer::Flatten,
        })
    }
}

/// Serializes a network to the JSON model format.
pub fn model_to_json(net: &Network) -> Result<String> {
    let doc = ModelDoc {
        layers: net.layers().iter().map(LayerDoc::from_layer).collect(),
        meta: MetaDoc {
            input_shape: net.input_shape().to_vec(),
            seed: net.seed(),
        },
    };
    Ok(serde_json::to_string(&doc)?)
}

/// Parses the JSON model format. Schema violations report the offending field path.
pub fn model_from_json(text: &str) -> Result<Network> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.into_layer(i))
        .collect::<Result<Vec<_>>>()?;
    let mut net = Network::new(doc.meta.input_shape, layers)?;
    net.set_seed(doc.meta.seed);
    Ok(net)
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn missing_layers_names_the_field() {
        let err = model_from_json(r#"{"meta":{"input_shape":[2]}}"#).unwrap_err();
        assert!(err.to_string().contains("layers"), "{err}");
    }

    #[test]
    fn unknown_kind_is_a_schema_error() {
        let err = model_from_json(r#"{"layers":[{"kind":"maxpool"}],"meta":{"input_shape":[2]}}"#).unwrap_err();
        match err {
            Error::Schema { path, message } => {
                assert!(path.starts_with("layers"), "{path}");
                assert!(message.contains("maxpool"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn conv_model_round_trips() {
        let net = Network::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv2d(Conv2d {
                    kernels: Tensor::zeros(&[2, 1, 2, 2]),
                    bias: Tensor::zeros(&[2]),
                    stride: 2,
                    padding: 0,
                }),
                Layer::Relu,
                Layer::Flatten,
                Layer::affine(Tensor::zeros(&[3, 8]), Tensor::zeros(&[3])),
            ],
        )
        .unwrap();
        let net = init_params(&net, 5);
        let back = model_from_json(&model_to_json(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
