//! Small residual convolutional networks used as the dual-space correction
//! and the primal update operator.
//!
//! Architecture: a stack of 3x3 same-padding conv layers with leaky-ReLU
//! between them, final layer mapping to a single channel, plus an optional
//! additive residual connection from a designated input channel. The final
//! layer is zero-initialized so a freshly constructed net acts as the
//! identity on its residual channel.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PatError, Result};

use super::tape::{DiffTensor, Tape};

/// Persistent power-iteration vectors for spectral normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    /// Input-side vector, shape (cin, H, W).
    pub u: Array3<f64>,
    /// Output-side vector, shape (cout, H, W).
    pub v: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (cout, cin, 3, 3).
    pub weight: ArrayD<f64>,
    pub bias: Array1<f64>,
    /// Present when the layer is spectrally normalized.
    pub spectral: Option<SpectralState>,
}

impl ConvLayer {
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    /// Total number of conv layers (>= 1); the last maps to 1 channel.
    pub conv_layers: usize,
    pub leaky_slope: f64,
    /// Input channel added to the output (identity start), if any.
    pub residual_channel: Option<usize>,
    pub spectral_norm: bool,
    /// Field shape the net operates on; fixes spectral power-iteration
    /// vector shapes.
    pub field_shape: (usize, usize),
}

impl NetConfig {
    pub fn small(in_channels: usize, field_shape: (usize, usize)) -> NetConfig {
        NetConfig {
            in_channels,
            hidden_channels: 16,
            conv_layers: 3,
            leaky_slope: 0.2,
            residual_channel: Some(0),
            spectral_norm: false,
            field_shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<ConvLayer>,
    pub leaky_slope: f64,
    pub residual_channel: Option<usize>,
    pub in_channels: usize,
    pub field_shape: (usize, usize),
}

/// Tape handles of one net's parameters, in `flat_params` order.
pub struct NetBinding {
    pub weights: Vec<DiffTensor>,
    pub biases: Vec<DiffTensor>,
}

impl NetParams {
    /// Kaiming fan-in initialization, zero bias, zero-initialized final
    /// layer. Spectral power-iteration vectors are warm-started so the first
    /// normalization already has an accurate estimate.
    pub fn init(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Result<NetParams> {
        if cfg.conv_layers == 0 || cfg.in_channels == 0 || cfg.hidden_channels == 0 {
            return Err(PatError::Invalid("NetConfig: zero-sized net".into()));
        }
        if let Some(rc) = cfg.residual_channel {
            if rc >= cfg.in_channels {
                return Err(PatError::Invalid(format!(
                    "residual channel {rc} out of range for {} input channels",
                    cfg.in_channels
                )));
            }
        }
        let mut layers = Vec::with_capacity(cfg.conv_layers);
        for l in 0..cfg.conv_layers {
            let cin = if l == 0 { cfg.in_channels } else { cfg.hidden_channels };
            let cout = if l + 1 == cfg.conv_layers { 1 } else { cfg.hidden_channels };
            let fan_in = (cin * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let last = l + 1 == cfg.conv_layers;
            let weight = ArrayD::from_shape_fn(IxDyn(&[cout, cin, 3, 3]), |_| {
                if last {
                    0.0
                } else {
                    normal_sample(rng) * std
                }
            });
            let spectral = if cfg.spectral_norm {
                let (h, w) = cfg.field_shape;
                let mut u = Array3::from_shape_fn((cin, h, w), |_| normal_sample(rng));
                let nu = frob(&u);
                if nu > 0.0 {
                    u.mapv_inplace(|x| x / nu);
                }
                let v = Array3::zeros((cout, h, w));
                Some(SpectralState { u, v })
            } else {
                None
            };
            let mut layer = ConvLayer {
                weight,
                bias: Array1::zeros(cout),
                spectral,
            };
            if cfg.spectral_norm && !last {
                // Warm-start the persistent vectors.
                for _ in 0..2 {
                    spectral_normalize(&mut layer)?;
                }
            }
            layers.push(layer);
        }
        Ok(NetParams {
            layers,
            leaky_slope: cfg.leaky_slope,
            residual_channel: cfg.residual_channel,
            in_channels: cfg.in_channels,
            field_shape: cfg.field_shape,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in a stable order (layer 0 weight, layer 0 bias, ...).
    pub fn flat_params(&self) -> Vec<ArrayD<f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.clone());
            out.push(l.bias.clone().into_dyn());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[ArrayD<f64>]) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(PatError::Invalid(format!(
                "set_flat_params: expected {} tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.weight.assign(&params[2 * i]);
            let b = params[2 * i + 1]
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| PatError::Invalid("bias must be rank 1".into()))?;
            l.bias.assign(&b);
        }
        Ok(())
    }

    /// Pushes parameters onto a tape as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> NetBinding {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.leaf(l.weight.clone()));
            biases.push(tape.leaf(l.bias.clone().into_dyn()));
        }
        NetBinding { weights, biases }
    }

    /// Forward pass through bound parameters. `inputs` are rank-2 field
    /// nodes forming the channel stack; output is a rank-2 field.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        binding: &NetBinding,
        inputs: &[DiffTensor],
    ) -> Result<DiffTensor> {
        if inputs.len() != self.in_channels {
            return Err(PatError::shape(
                "forward_net",
                format!("{} input channels", self.in_channels),
                format!("{}", inputs.len()),
            ));
        }
        let mut x = tape.stack(inputs)?;
        let n = self.layers.len();
        for (l, _) in self.layers.iter().enumerate() {
            x = tape.conv2d(x, binding.weights[l], binding.biases[l])?;
            if l + 1 < n {
                x = tape.leaky_relu(x, self.leaky_slope);
            }
        }
        let mut out = tape.channel(x, 0)?;
        if let Some(rc) = self.residual_channel {
            out = tape.add(out, inputs[rc])?;
        }
        Ok(out)
    }

    /// Plain (non-recording) forward pass; shares the conv kernels with the
    /// tape path, so both produce bit-identical values.
    pub fn apply(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        if inputs.len() != self.in_channels {
            return Err(PatError::shape(
                "net apply",
                format!("{} input channels", self.in_channels),
                format!("{}", inputs.len()),
            ));
        }
        let (h, w) = inputs[0].dim();
        let mut x = Array3::zeros((inputs.len(), h, w));
        for (c, part) in inputs.iter().enumerate() {
            if part.dim() != (h, w) {
                return Err(PatError::shape(
                    "net apply",
                    format!("{:?}", (h, w)),
                    format!("{:?}", part.dim()),
                ));
            }
            x.index_axis_mut(Axis(0), c).assign(part);
        }
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            x = super::tape::conv2d_plain(&x.view(), &layer.weight.view(), &layer.bias);
            if l + 1 < n {
                let slope = self.leaky_slope;
                x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            }
        }
        let mut out = x.index_axis(Axis(0), 0).to_owned();
        if let Some(rc) = self.residual_channel {
            out += inputs[rc];
        }
        Ok(out)
    }
}

/// Convenience wrapper matching the operation-level contract: records the
/// net on a fresh binding and returns the output node.
pub fn forward_net(tape: &mut Tape, net: &NetParams, inputs: &[DiffTensor]) -> Result<(DiffTensor, NetBinding)> {
    let binding = net.bind(tape);
    let out = net.forward_bound(tape, &binding, inputs)?;
    Ok((out, binding))
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per sample keeps the stream simple and
    // deterministic.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn frob(a: &Array3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Applies the layer's linear part (no bias) to a (cin,H,W) field.
pub fn conv_linear(layer: &ConvLayer, x: &Array3<f64>) -> Array3<f64> {
    let zero_bias = Array1::zeros(layer.out_channels());
    super::tape::conv2d_plain(&x.view(), &layer.weight.view(), &zero_bias)
}

/// Transpose of [`conv_linear`] on a (cout,H,W) cotangent.
pub fn conv_linear_transpose(layer: &ConvLayer, y: &Array3<f64>) -> Array3<f64> {
    super::tape::conv2d_input_transpose(&y.view(), &layer.weight.view(), layer.in_channels())
}

/// Rescales the layer weight by 1/sigma_hat, where sigma_hat is a 5-step
/// power-iteration estimate of the layer's operator norm on its configured
/// field shape. Persistent vectors live in the layer. Zero weight is a
/// no-op.
pub fn spectral_normalize(layer: &mut ConvLayer) -> Result<()> {
    let state = layer
        .spectral
        .as_ref()
        .ok_or_else(|| PatError::Invalid("spectral_normalize: layer has no spectral state".into()))?;
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    let mut sigma = 0.0;
    for _ in 0..5 {
        v = conv_linear(layer, &u);
        let nv = frob(&v);
        if nv == 0.0 {
            return Ok(());
        }
        v.mapv_inplace(|x| x / nv);
        u = conv_linear_transpose(layer, &v);
        let nu = frob(&u);
        if nu == 0.0 {
            return Ok(());
        }
        u.mapv_inplace(|x| x / nu);
        sigma = nu;
    }
    // sigma = |W^T v| at unit v equals v^T W u at the converged pair.
    if sigma > 0.0 {
        layer.weight.mapv_inplace(|x| x / sigma);
    }
    layer.spectral = Some(SpectralState { u, v });
    Ok(())
}

/// Lower bound on the net's Lipschitz constant from random probe pairs:
/// max over pairs of |net(a) - net(b)| / |a - b|.
pub fn lipschitz_estimate(net: &NetParams, probes: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    if probes == 0 {
        return Err(PatError::Invalid("lipschitz_estimate: probes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = net.field_shape;
    let mut best = 0.0f64;
    for _ in 0..probes {
        let a: Vec<Array2<f64>> = (0..net.in_channels)
            .map(|_| Array2::from_shape_fn((h, w), |_| normal_sample(&mut rng)))
            .collect();
        let b: Vec<Array2<f64>> = (0..net.in_channels)
            .map(|_| Array2::from_shape_fn((h, w), |_| normal_sample(&mut rng)))
            .collect();
        let fa = net.apply(&a.iter().collect::<Vec<_>>())?;
        let fb = net.apply(&b.iter().collect::<Vec<_>>())?;
        let num = (&fa - &fb).iter().map(|x| x * x).sum::<f64>().sqrt();
        let den: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).iter().map(|d| d * d).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = NetConfig {
            residual_channel: None,
            ..NetConfig::small(2, (6, 5))
        };
        let mut net = NetParams::init(&cfg, &mut rng()).unwrap();
        for l in &mut net.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let a = Array2::from_shape_fn((6, 5), |(i, j)| (i + j) as f64);
        let b = Array2::ones((6, 5));
        let out = net.apply(&[&a, &b]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_net_is_identity_on_residual_channel() {
        let cfg = NetConfig::small(2, (4, 7));
        let net = NetParams::init(&cfg, &mut rng()).unwrap();
        let a = Array2::from_shape_fn((4, 7), |(i, j)| (2 * i + j) as f64 * 0.1);
        let b = Array2::from_shape_fn((4, 7), |(i, j)| (i as f64 - j as f64) * 0.3);
        let out = net.apply(&[&a, &b]).unwrap();
        // Final layer is zero-initialized, so output = residual channel.
        assert_eq!(out, a);
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let cfg = NetConfig {
            hidden_channels: 4,
            ..NetConfig::small(2, (5, 5))
        };
        let mut net = NetParams::init(&cfg, &mut rng()).unwrap();
        // Give the zero-initialized final layer structure so its input grads
        // flow; parameter grads exist regardless.
        for l in &mut net.layers {
            if l.weight.iter().all(|&v| v == 0.0) {
                l.weight.mapv_inplace(|_| 0.01);
            }
        }
        let mut tape = Tape::new();
        let mut r = rng();
        let a = tape.leaf(Array2::from_shape_fn((5, 5), |_| normal_sample(&mut r)).into_dyn());
        let b = tape.leaf(Array2::from_shape_fn((5, 5), |_| normal_sample(&mut r)).into_dyn());
        let (out, binding) = forward_net(&mut tape, &net, &[a, b]).unwrap();
        assert!(tape.value(out).iter().all(|v| v.is_finite()));
        let loss = tape.sum_squares(out);
        let grads = tape.backward(loss).unwrap();
        for (w, bi) in binding.weights.iter().zip(&binding.biases) {
            assert!(grads.get(*w).is_some(), "weight gradient missing");
            assert!(grads.get(*bi).is_some(), "bias gradient missing");
        }
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let cfg = NetConfig {
            hidden_channels: 3,
            ..NetConfig::small(2, (6, 4))
        };
        let mut net = NetParams::init(&cfg, &mut rng()).unwrap();
        let mut r = rng();
        for l in &mut net.layers {
            l.weight.mapv_inplace(|_| normal_sample(&mut r) * 0.2);
            l.bias.mapv_inplace(|_| normal_sample(&mut r) * 0.1);
        }
        let a = Array2::from_shape_fn((6, 4), |_| normal_sample(&mut r));
        let b = Array2::from_shape_fn((6, 4), |_| normal_sample(&mut r));
        let plain = net.apply(&[&a, &b]).unwrap();
        let mut tape = Tape::new();
        let an = tape.constant(a.into_dyn());
        let bn = tape.constant(b.into_dyn());
        let (out, _) = forward_net(&mut tape, &net, &[an, bn]).unwrap();
        assert_eq!(tape.value(out).clone().into_dimensionality::<ndarray::Ix2>().unwrap(), plain);
    }

    #[test]
    fn spectral_normalize_identity_kernel_unchanged() {
        // Center-tap identity conv has every singular value 1.
        let mut weight = ArrayD::zeros(IxDyn(&[1, 1, 3, 3]));
        weight[[0, 0, 1, 1]] = 1.0;
        let mut layer = ConvLayer {
            weight: weight.clone(),
            bias: Array1::zeros(1),
            spectral: Some(SpectralState {
                u: Array3::from_shape_fn((1, 5, 5), |(_, i, j)| ((i * 5 + j) as f64 * 0.7).sin() + 0.1),
                v: Array3::zeros((1, 5, 5)),
            }),
        };
        spectral_normalize(&mut layer).unwrap();
        let diff = (&layer.weight - &weight)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-3, "identity weight changed by {diff}");
    }

    #[test]
    fn spectral_normalize_zero_weight_is_noop() {
        let mut layer = ConvLayer {
            weight: ArrayD::zeros(IxDyn(&[2, 2, 3, 3])),
            bias: Array1::zeros(2),
            spectral: Some(SpectralState {
                u: Array3::ones((2, 4, 4)),
                v: Array3::zeros((2, 4, 4)),
            }),
        };
        spectral_normalize(&mut layer).unwrap();
        assert!(layer.weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lipschitz_of_identity_and_scaling() {
        let cfg = NetConfig::small(1, (6, 6));
        let net = NetParams::init(&cfg, &mut rng()).unwrap();
        // Identity net (zero final layer + residual).
        let l = lipschitz_estimate(&net, 50, 9).unwrap();
        assert!((l - 1.0).abs() < 1e-9, "identity net Lipschitz {l}");

        // Scaling net: no residual, single layer with center tap 0.5.
        let mut weight = ArrayD::zeros(IxDyn(&[1, 1, 3, 3]));
        weight[[0, 0, 1, 1]] = 0.5;
        let half = NetParams {
            layers: vec![ConvLayer {
                weight,
                bias: Array1::zeros(1),
                spectral: None,
            }],
            leaky_slope: 0.2,
            residual_channel: None,
            in_channels: 1,
            field_shape: (6, 6),
        };
        let l = lipschitz_estimate(&half, 50, 9).unwrap();
        assert!((l - 0.5).abs() < 1e-9, "scaling net Lipschitz {l}");
    }

    #[test]
    fn zero_probes_is_an_error() {
        let cfg = NetConfig::small(1, (4, 4));
        let net = NetParams::init(&cfg, &mut rng()).unwrap();
        assert!(lipschitz_estimate(&net, 0, 1).is_err());
    }
}
