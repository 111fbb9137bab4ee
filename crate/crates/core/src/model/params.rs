//! Named convolution parameters and their per-pass graph bindings.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::tensor::{conv, ops, ConvSpec, Gradients, Real, Tensor, Var};

/// Layers initialised to zero so that an untrained model predicts zero flow
/// updates and an unweighted average of the warped frames.
const ZERO_INIT: [&str; 2] = ["flow.5", "synth.head"];

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Real = f32> {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All parameters of a model, in the order of [`ModelConfig::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> ParamStore<T> {
    /// He-uniform weights (gain for the leaky slope), zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let layers = config
            .layers()
            .into_iter()
            .map(|(name, spec)| {
                let (kh, kw) = spec.kernel;
                let fan_in = if spec.transposed {
                    spec.in_channels * kh * kw / (spec.stride.0 * spec.stride.1)
                } else {
                    spec.in_channels * kh * kw
                };
                let bound = (3.0 * gain / fan_in.max(1) as f64).sqrt();
                let zero = ZERO_INIT.contains(&name.as_str());
                let weight = Tensor::from_fn(spec.weight_shape(), |_| {
                    let u: f64 = rng.gen_range(-bound..bound);
                    if zero {
                        T::zero()
                    } else {
                        T::lit(u)
                    }
                });
                Layer {
                    name,
                    spec,
                    weight,
                    bias: Tensor::zeros(spec.bias_shape()),
                }
            })
            .collect();
        ParamStore { layers }
    }

    /// Build from named tensors (`<layer>.weight`, `<layer>.bias`), checking
    /// names and shapes against the config.
    pub fn from_named(config: &ModelConfig, tensors: &[(String, Tensor<T>)]) -> Result<Self> {
        let map: HashMap<&str, &Tensor<T>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut layers = Vec::new();
        for (name, spec) in config.layers() {
            let fetch = |suffix: &str, shape: [usize; 4]| -> Result<Tensor<T>> {
                let key = format!("{name}.{suffix}");
                let t = map.get(key.as_str()).ok_or_else(|| {
                    Error::invalid("load parameters", format!("missing tensor {key}"))
                })?;
                if t.shape() != shape {
                    return Err(Error::invalid(
                        "load parameters",
                        format!("{key} has shape {:?}, expected {shape:?}", t.shape()),
                    ));
                }
                Ok((*t).clone())
            };
            let weight = fetch("weight", spec.weight_shape())?;
            let bias = fetch("bias", spec.bias_shape())?;
            layers.push(Layer {
                name,
                spec,
                weight,
                bias,
            });
        }
        Ok(ParamStore { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// `(name, tensor)` pairs, weight before bias per layer.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.name), &l.weight),
                    (format!("{}.bias", l.name), &l.bias),
                ]
            })
            .collect()
    }

    /// Every tensor in [`ParamStore::named`] order.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    spec: l.spec,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Graph leaves for one pass. With `trainable` false the leaves are
    /// constants and the pass records no history.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        let leaf = |t: &Tensor<T>| {
            if trainable {
                Var::param(t.clone())
            } else {
                Var::constant(t.clone())
            }
        };
        let vars = self
            .layers
            .iter()
            .map(|l| (l.name.clone(), (l.spec, leaf(&l.weight), leaf(&l.bias))))
            .collect::<Vec<_>>();
        let index = vars
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Bound { vars, index }
    }
}

/// Parameters as graph leaves, shared by every pyramid level of a pass.
pub struct Bound<T: Real = f32> {
    vars: Vec<(String, (ConvSpec, Var<T>, Var<T>))>,
    index: HashMap<String, usize>,
}

impl<T: Real> Bound<T> {
    fn get(&self, name: &str) -> &(ConvSpec, Var<T>, Var<T>) {
        &self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown layer {name}"))]
        .1
    }

    pub fn spec(&self, name: &str) -> ConvSpec {
        self.get(name).0
    }

    /// Convolution (or transposed convolution) of layer `name`, followed by
    /// the leaky ReLU when `activate` is set.
    pub fn apply(&self, name: &str, x: &Var<T>, activate: bool) -> Result<Var<T>> {
        let (spec, w, b) = self.get(name);
        let y = if spec.transposed {
            conv::transpose_conv2d(x, w, b, *spec)?
        } else {
            conv::conv2d(x, w, b, *spec)?
        };
        if activate {
            ops::leaky_relu(&y, T::lit(LEAKY_SLOPE))
        } else {
            Ok(y)
        }
    }

    /// Gradients in [`ParamStore::tensors_mut`] order (zero where unused).
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .flat_map(|(_, (_, w, b))| [grads.get_or_zero(w), grads.get_or_zero(b)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::count_parameters;

    #[test]
    fn init_is_seeded_and_sized() {
        let c = ModelConfig::scaled(0.25).unwrap();
        let a = ParamStore::<f32>::init(&c, 3);
        assert_eq!(a, ParamStore::init(&c, 3));
        assert_ne!(a, ParamStore::init(&c, 4));
        assert_eq!(a.count(), count_parameters(&c));
        let head = a.layers().iter().find(|l| l.name == "synth.head").unwrap();
        assert!(head.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn named_round_trip_and_shape_guard() {
        let c = ModelConfig::scaled(0.25).unwrap();
        let a = ParamStore::<f32>::init(&c, 1);
        let owned: Vec<(String, Tensor<f32>)> =
            a.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(ParamStore::from_named(&c, &owned).unwrap(), a);
        let other = ModelConfig::scaled(0.5).unwrap();
        assert!(ParamStore::from_named(&other, &owned).is_err());
    }
}
