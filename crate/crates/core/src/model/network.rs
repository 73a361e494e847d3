use std::collections::BTreeMap;

use super::config::{LayerKind, MapShape, ModelConfig, EXFEAT_KERNELS};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, elective_backward, elective_fuse, fc_backward, fc_forward, Activation,
    ConvParams, FcParams,
};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer<T> {
    Conv { conv: ConvParams<T>, act: Activation },
    ExFeat { branches: Vec<ConvParams<T>> },
    Add { skip: usize },
    Fc { fc: FcParams<T>, act: Activation },
}

/// Activations recorded by name during one forward pass.
pub type FeatureCapture<T> = BTreeMap<String, Tensor<T>>;

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    /// Pre-fusion branch responses of each ExFeat layer.
    branches: Vec<Option<Vec<Tensor<T>>>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// `batch x classes` logits.
    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().expect("network has layers")
    }

    pub fn output(&self, layer: usize) -> &Tensor<T> {
        &self.outputs[layer]
    }
}

/// Instantiated network: config, parameters and the per-layer shape table.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    shapes: Vec<MapShape>,
}

fn he_conv<T: Scalar>(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut SeededRng) -> Result<ConvParams<T>> {
    let std = T::from_f64_lossy((2.0 / (c_in * k * k) as f64).sqrt());
    ConvParams::same(
        Tensor::rand(&[c_out, c_in, k, k], std, rng)?,
        Tensor::zeros(&[c_out])?,
        stride,
    )
}

fn he_fc<T: Scalar>(len: usize, units: usize, rng: &mut SeededRng) -> Result<FcParams<T>> {
    let std = T::from_f64_lossy((2.0 / len as f64).sqrt());
    FcParams::new(Tensor::rand(&[units, len], std, rng)?, Tensor::zeros(&[units])?)
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the network with weights drawn from `N(0, 2/fan_in)` and zero
    /// biases.
    pub fn build(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let shapes = config.shape_table()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut cur = config.input;
        for (spec, &out) in config.layers.iter().zip(&shapes) {
            let layer = match &spec.kind {
                LayerKind::Conv {
                    kernel,
                    out_channels,
                    stride,
                    act,
                } => Layer::Conv {
                    conv: he_conv(cur[0], *out_channels, *kernel, *stride, rng)?,
                    act: *act,
                },
                LayerKind::ExFeat => Layer::ExFeat {
                    branches: EXFEAT_KERNELS
                        .iter()
                        .map(|&k| he_conv(cur[0], cur[0], k, 1, rng))
                        .collect::<Result<_>>()?,
                },
                LayerKind::Add { skip } => Layer::Add {
                    skip: config.layer_index(skip).expect("validated skip"),
                },
                LayerKind::Fc { out_units, act } => Layer::Fc {
                    fc: he_fc(cur.iter().product(), *out_units, rng)?,
                    act: *act,
                },
                LayerKind::Classifier { classes } => Layer::Fc {
                    fc: he_fc(cur.iter().product(), *classes, rng)?,
                    act: Activation::Identity,
                },
            };
            layers.push(layer);
            cur = out;
        }
        Ok(Network { config, layers, shapes })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Output shape of every layer, in layer order.
    pub fn shape_table(&self) -> Vec<(&str, MapShape)> {
        self.config
            .layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, &s)| (l.name.as_str(), s))
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    /// All parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { conv, .. } => out.extend([&conv.weights, &conv.bias]),
                Layer::ExFeat { branches } => {
                    for b in branches {
                        out.extend([&b.weights, &b.bias]);
                    }
                }
                Layer::Add { .. } => {}
                Layer::Fc { fc, .. } => out.extend([&fc.weights, &fc.bias]),
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { conv, .. } => out.extend([&mut conv.weights, &mut conv.bias]),
                Layer::ExFeat { branches } => {
                    for b in branches {
                        out.extend([&mut b.weights, &mut b.bias]);
                    }
                }
                Layer::Add { .. } => {}
                Layer::Fc { fc, .. } => out.extend([&mut fc.weights, &mut fc.bias]),
            }
        }
        out
    }

    /// `Layer.weights` / `Layer.bias` names matching [`Network::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (spec, layer) in self.config.layers.iter().zip(&self.layers) {
            match layer {
                Layer::Conv { .. } | Layer::Fc { .. } => {
                    out.push(format!("{}.weights", spec.name));
                    out.push(format!("{}.bias", spec.name));
                }
                Layer::ExFeat { .. } => {
                    for k in EXFEAT_KERNELS {
                        out.push(format!("{}.b{k}x{k}.weights", spec.name));
                        out.push(format!("{}.b{k}x{k}.bias", spec.name));
                    }
                }
                Layer::Add { .. } => {}
            }
        }
        out
    }

    /// Number of learnable scalars held by each layer.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv { conv, .. } => conv.weights.len() + conv.bias.len(),
                Layer::ExFeat { branches } => branches.iter().map(|b| b.weights.len() + b.bias.len()).sum(),
                Layer::Add { .. } => 0,
                Layer::Fc { fc, .. } => fc.weights.len() + fc.bias.len(),
            })
            .collect()
    }

    /// Replaces every parameter tensor, e.g. after deserialization.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.dims() != v.dims() {
                return Err(Error::Format(format!(
                    "parameter shape {} does not match expected {}",
                    v.shape(),
                    slot.shape()
                )));
            }
            **slot = v;
        }
        Ok(())
    }

    /// Same network with a different element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            weights: c.weights.cast(),
            bias: c.bias.cast(),
            stride: c.stride,
            padding: c.padding,
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv { conv: c, act } => Layer::Conv { conv: conv(c), act: *act },
                Layer::ExFeat { branches } => Layer::ExFeat {
                    branches: branches.iter().map(conv).collect(),
                },
                Layer::Add { skip } => Layer::Add { skip: *skip },
                Layer::Fc { fc, act } => Layer::Fc {
                    fc: FcParams {
                        weights: fc.weights.cast(),
                        bias: fc.bias.cast(),
                    },
                    act: *act,
                },
            })
            .collect();
        Network {
            config: self.config.clone(),
            layers,
            shapes: self.shapes.clone(),
        }
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let d = batch.dims();
        if d.len() != 4 || d[1..] != self.config.input {
            return Err(Error::Shape(format!(
                "input batch {} does not match network input (N,{},{},{})",
                batch.shape(),
                self.config.input[0],
                self.config.input[1],
                self.config.input[2]
            )));
        }
        Ok(())
    }

    /// Runs every layer, keeping what the backward pass needs.
    pub fn forward_cached(&self, batch: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(batch)?;
        let n = batch.dims()[0];
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        let mut branch_cache = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { batch } else { &outputs[i - 1] };
            let mut branches_out = None;
            let y = match layer {
                Layer::Conv { conv, act } => act.apply(&conv2d(x, conv)?),
                Layer::ExFeat { branches } => {
                    let rs: Vec<Tensor<T>> = branches.iter().map(|b| conv2d(x, b)).collect::<Result<_>>()?;
                    let refs: Vec<&Tensor<T>> = rs.iter().collect();
                    let fused = elective_fuse(&refs, self.config.elective_mode)?;
                    branches_out = Some(rs);
                    fused
                }
                Layer::Add { skip } => x.add(&outputs[*skip])?,
                Layer::Fc { fc, act } => {
                    let units = fc.out_units();
                    fc_forward(x, fc, *act)?.reshape(&[n, units, 1, 1])?
                }
            };
            outputs.push(y);
            branch_cache.push(branches_out);
        }
        let last = outputs.pop().expect("at least one layer");
        let classes = last.dims()[1];
        outputs.push(last.reshape(&[n, classes])?);
        Ok(ForwardCache {
            input: batch.clone(),
            outputs,
            branches: branch_cache,
        })
    }

    /// Logits (`batch x classes`) plus the activations of the requested
    /// layers, reported with the shapes of the shape table.
    pub fn forward(&self, batch: &Tensor<T>, capture: &[&str]) -> Result<(Tensor<T>, FeatureCapture<T>)> {
        let mut wanted = Vec::with_capacity(capture.len());
        for name in capture {
            let idx = self.config.layer_index(name).ok_or_else(|| Error::Lookup {
                name: name.to_string(),
                valid: self.config.layer_names().join(", "),
            })?;
            wanted.push((name.to_string(), idx));
        }
        let cache = self.forward_cached(batch)?;
        let n = batch.dims()[0];
        let mut captures = FeatureCapture::new();
        for (name, idx) in wanted {
            let [c, h, w] = self.shapes[idx];
            captures.insert(name, cache.outputs[idx].clone().reshape(&[n, c, h, w])?);
        }
        let ForwardCache { mut outputs, .. } = cache;
        Ok((outputs.pop().unwrap(), captures))
    }

    /// Reverse pass from the gradient of the loss w.r.t. the logits; returns
    /// one gradient per parameter tensor, in [`Network::params`] order.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.backward_full(cache, grad_logits)?.0)
    }

    /// Like [`Network::backward`], also returning the gradient w.r.t. the
    /// input batch.
    pub fn backward_full(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        if cache.outputs.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "forward state holds {} layers, network has {}",
                cache.outputs.len(),
                self.layers.len()
            )));
        }
        cache.logits().check_same_shape(grad_logits)?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.layers.len()];
        let mut input_grad: Option<Tensor<T>> = None;
        grads[self.layers.len() - 1] = Some(grad_logits.clone());
        let mut param_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];

        for i in (0..self.layers.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => Tensor::zeros_like(&cache.outputs[i]),
            };
            let x = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let g_x = match &self.layers[i] {
                Layer::Conv { conv, act } => {
                    let g_pre = act.backward(&cache.outputs[i], &g)?;
                    let b = conv2d_backward(x, conv, &g_pre)?;
                    param_grads[i] = b.params;
                    b.inputs.into_iter().next().unwrap()
                }
                Layer::ExFeat { branches } => {
                    let rs = cache.branches[i]
                        .as_ref()
                        .ok_or_else(|| Error::Usage("missing ExFeat branch cache".into()))?;
                    let refs: Vec<&Tensor<T>> = rs.iter().collect();
                    let g_r = elective_backward(&refs, &g, self.config.elective_mode)?;
                    let mut g_x: Option<Tensor<T>> = None;
                    for (conv, g_branch) in branches.iter().zip(&g_r) {
                        let b = conv2d_backward(x, conv, g_branch)?;
                        param_grads[i].extend(b.params);
                        accumulate(&mut g_x, b.inputs.into_iter().next().unwrap())?;
                    }
                    g_x.unwrap()
                }
                Layer::Add { skip } => {
                    accumulate(&mut grads[*skip], g.clone())?;
                    g
                }
                Layer::Fc { fc, act } => {
                    let out = &cache.outputs[i];
                    let b = fc_backward(x, fc, *act, out, &g.reshape(out.dims())?)?;
                    param_grads[i] = b.params;
                    b.inputs.into_iter().next().unwrap()
                }
            };
            if i == 0 {
                input_grad = Some(g_x);
            } else {
                accumulate(&mut grads[i - 1], g_x)?;
            }
        }
        Ok((param_grads.into_iter().flatten().collect(), input_grad.unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_xent_batch;

    fn desk64(seed: u64) -> Network<f64> {
        Network::build(ModelConfig::desk(), &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn param_layout_matches_names() {
        let net = desk64(1);
        assert_eq!(net.params().len(), net.param_names().len());
        assert_eq!(net.param_names()[0], "Conv1.weights");
        assert!(net.param_names().contains(&"ExFeat1.b7x7.bias".to_string()));
        let total: usize = net.params().iter().map(|p| p.len()).sum();
        assert_eq!(total, net.layer_param_counts().iter().sum::<usize>());
    }

    #[test]
    fn biases_start_at_zero() {
        let net = desk64(2);
        for (name, p) in net.param_names().iter().zip(net.params()) {
            if name.ends_with(".bias") {
                assert!(p.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn wrong_input_shape() {
        let net = desk64(3);
        let x = Tensor::zeros(&[1, 3, 16, 16]).unwrap();
        assert!(matches!(net.forward(&x, &[]), Err(Error::Shape(_))));
        let x = Tensor::zeros(&[1, 3, 32, 32]).unwrap();
        assert!(matches!(net.forward(&x, &["Nope"]), Err(Error::Lookup { .. })));
    }

    #[test]
    fn zero_input_gives_uniform_logits() {
        let net = desk64(4);
        let x = Tensor::zeros(&[2, 3, 32, 32]).unwrap();
        let (logits, _) = net.forward(&x, &[]).unwrap();
        assert_eq!(logits.dims(), &[2, 4]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = desk64(5);
        let x = Tensor::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut SeededRng::new(1)).unwrap();
        let cache = net.forward_cached(&x).unwrap();
        let grads = net.backward(&cache, &Tensor::zeros(&[1, 4]).unwrap()).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_usage_error() {
        let net = desk64(6);
        let mut other = ModelConfig::desk();
        other.layers.remove(8); // drop Conv6
        let small = Network::<f64>::build(other, &mut SeededRng::new(1)).unwrap();
        let x = Tensor::zeros(&[1, 3, 32, 32]).unwrap();
        let cache = small.forward_cached(&x).unwrap();
        assert!(matches!(
            net.backward(&cache, &Tensor::zeros(&[1, 4]).unwrap()),
            Err(Error::Usage(_))
        ));
    }

    /// conv A -> conv B -> add(skip A): the gradient reaching A is the sum
    /// of the direct skip path and the path through B.
    #[test]
    fn skip_gradient_sums_both_paths() {
        let cfg: ModelConfig = "input c=1 h=1 w=1\n\
            conv name=A k=1 out=1\n\
            conv name=B k=1 out=1\n\
            add name=S skip=A\n\
            classifier classes=2"
            .parse()
            .unwrap();
        let mut net = Network::<f64>::build(cfg, &mut SeededRng::new(0)).unwrap();
        // A: a = 2x + 0.5; B: b = 3a - 1; S: s = a + b; logits = [s, -s]
        net.set_params(vec![
            Tensor::new(&[1, 1, 1, 1], 2.0).unwrap(),
            Tensor::new(&[1], 0.5).unwrap(),
            Tensor::new(&[1, 1, 1, 1], 3.0).unwrap(),
            Tensor::new(&[1], -1.0).unwrap(),
            Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
        ])
        .unwrap();
        let x = Tensor::new(&[1, 1, 1, 1], 1.5).unwrap();
        let cache = net.forward_cached(&x).unwrap();
        // a = 3.5, b = 9.5, s = 13
        assert_eq!(cache.logits().data(), &[13.0, -13.0]);
        let (grads, gx) = net.backward_full(&cache, &Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        // ds/da = 1 + 3 = 4; dL/dwA = 4 * x = 6; dL/dbA = 4; dL/dx = 4 * 2 = 8
        assert_eq!(grads[0].data(), &[6.0]);
        assert_eq!(grads[1].data(), &[4.0]);
        // dL/dwB = a = 3.5; dL/dbB = 1
        assert_eq!(grads[2].data(), &[3.5]);
        assert_eq!(grads[3].data(), &[1.0]);
        assert_eq!(gx.data(), &[8.0]);
    }

    #[test]
    fn loss_gradient_shapes() {
        let net = desk64(7);
        let x = Tensor::rand_uniform(&[3, 3, 32, 32], 0.0, 1.0, &mut SeededRng::new(2)).unwrap();
        let cache = net.forward_cached(&x).unwrap();
        let loss = softmax_xent_batch(cache.logits(), &[0, 1, 3]).unwrap();
        let grads = net.backward(&cache, &loss.grad).unwrap();
        for (g, p) in grads.iter().zip(net.params()) {
            assert_eq!(g.dims(), p.dims());
            assert!(g.all_finite());
        }
    }
}
