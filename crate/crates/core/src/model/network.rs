use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layout::{Layout, Slot};
use super::ops::{self, Tensor};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::sdt::SdtVolume;
use crate::volume::{ValueKind, Volume};

/// Weights and biases of the encoder–decoder, flattened in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    config: NetConfig,
    values: Vec<f64>,
}

impl NetworkParams {
    /// He-normal weights for rectified layers, unit-gain normal weights for the
    /// linear transposed convs and head, zero biases.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (_, slot) in layout.named() {
            // a transposed-conv output sees one tap per input channel
            let (fan_in, gain) = match slot.taps {
                27 => (slot.cin * 27, 2.0),
                _ => (slot.cin, 1.0),
            };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            for v in &mut values[slot.weight()] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(NetworkParams { config: config.clone(), values })
    }

    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let len = Layout::new(config).len;
        Ok(NetworkParams { config: config.clone(), values: vec![0.0; len] })
    }

    pub fn from_values(config: &NetConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let len = Layout::new(config).len;
        if values.len() != len {
            return Err(Error::InvalidParameter(format!(
                "expected {len} parameters for {config:?}, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("parameter {i} is not finite")));
        }
        Ok(NetworkParams { config: config.clone(), values })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Named tensors `(name, weight shape, weights, biases)` in storage order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64], &[f64])> {
        Layout::new(&self.config)
            .named()
            .into_iter()
            .map(|(name, s)| {
                let shape = match s.taps {
                    27 => vec![s.cout, s.cin, 3, 3, 3],
                    8 => vec![s.cin, s.cout, 2, 2, 2],
                    _ => vec![s.cout, s.cin],
                };
                (name, shape, &self.values[s.weight()], &self.values[s.bias()])
            })
            .collect()
    }

    fn slot(&self, slot: Slot) -> (&[f64], &[f64]) {
        (&self.values[slot.weight()], &self.values[slot.bias()])
    }
}

struct EncoderLevel {
    input: Tensor,
    a: Tensor,
    b: Tensor,
    pool_arg: Vec<u32>,
}

struct DecoderLevel {
    up_input: Tensor,
    cat: Tensor,
    a: Tensor,
    b: Tensor,
}

/// Activations recorded by a forward pass, consumed by [`Trace::backward`].
pub struct Trace {
    layout: Layout,
    encoder: Vec<EncoderLevel>,
    bottleneck: [Tensor; 3],
    decoder: Vec<DecoderLevel>,
    output_len: usize,
}

fn check_input(config: &NetConfig, input: &Volume) -> Result<()> {
    let factor = 1usize << config.depth;
    let shape = input.shape();
    if shape.iter().any(|&d| d % factor != 0) {
        return Err(Error::NotDivisible { shape, factor });
    }
    Ok(())
}

fn conv_relu(x: &Tensor, params: &NetworkParams, slot: Slot) -> Tensor {
    let (w, b) = params.slot(slot);
    let mut y = ops::conv3(x, w, b);
    ops::relu_in_place(&mut y);
    y
}

/// Runs the network, keeping every activation needed for backpropagation.
pub fn forward_trace(params: &NetworkParams, input: &Volume) -> Result<(SdtVolume, Trace)> {
    let cfg = params.config();
    check_input(cfg, input)?;
    let layout = Layout::new(cfg);
    let mut x = Tensor { channels: 1, dims: input.shape(), data: input.data().to_vec() };
    let mut encoder = Vec::with_capacity(cfg.depth);
    for pair in &layout.encoder {
        let a = conv_relu(&x, params, pair[0]);
        let b = conv_relu(&a, params, pair[1]);
        let (pooled, pool_arg) = ops::max_pool2(&b);
        encoder.push(EncoderLevel { input: std::mem::replace(&mut x, pooled), a, b, pool_arg });
    }
    let a = conv_relu(&x, params, layout.bottleneck[0]);
    let b = conv_relu(&a, params, layout.bottleneck[1]);
    let bottleneck = [x, a, b.clone()];
    x = b;
    let mut decoder: Vec<Option<DecoderLevel>> = (0..cfg.depth).map(|_| None).collect();
    for l in (0..cfg.depth).rev() {
        let (w, bias) = params.slot(layout.up[l]);
        let up = ops::up_conv2(&x, w, bias);
        let cat = ops::concat(&up, &encoder[l].b);
        let a = conv_relu(&cat, params, layout.decoder[l][0]);
        let b = conv_relu(&a, params, layout.decoder[l][1]);
        let up_input = std::mem::replace(&mut x, b.clone());
        decoder[l] = Some(DecoderLevel { up_input, cat, a, b });
    }
    let (w, bias) = params.slot(layout.head);
    let out = ops::head(&x, w, bias[0]);
    let output_len = out.len();
    let volume = Volume::new(out, *input.geometry(), ValueKind::Distance)?
        .with_orientation(input.orientation().cloned());
    let trace = Trace {
        layout,
        encoder,
        bottleneck,
        decoder: decoder.into_iter().map(Option::unwrap).collect(),
        output_len,
    };
    Ok((SdtVolume::from_volume(volume)?, trace))
}

/// Predicted signed distance for a normalized intensity volume. No output
/// activation is applied.
pub fn forward(params: &NetworkParams, input: &Volume) -> Result<SdtVolume> {
    Ok(forward_trace(params, input)?.0)
}

/// Parameter gradient for an output gradient, recomputing the forward pass.
pub fn backward(params: &NetworkParams, input: &Volume, grad_output: &[f64]) -> Result<Vec<f64>> {
    let (_, trace) = forward_trace(params, input)?;
    let mut grad = vec![0.0; params.len()];
    trace.backward(params, grad_output, &mut grad)?;
    Ok(grad)
}

impl Trace {
    /// Rectifier on/off states and pooling argmaxes, which fix the linear
    /// region the forward pass ran in.
    #[cfg(test)]
    pub(crate) fn pattern(&self) -> (Vec<bool>, Vec<u32>) {
        let mut active = Vec::new();
        let mut pools = Vec::new();
        let mut push = |t: &Tensor| active.extend(t.data.iter().map(|&v| v > 0.0));
        for level in &self.encoder {
            push(&level.a);
            push(&level.b);
            pools.extend_from_slice(&level.pool_arg);
        }
        push(&self.bottleneck[1]);
        push(&self.bottleneck[2]);
        for level in &self.decoder {
            push(&level.a);
            push(&level.b);
        }
        (active, pools)
    }

    /// Accumulates the parameter gradient for `grad_output` into `grad`.
    pub fn backward(&self, params: &NetworkParams, grad_output: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad_output.len() != self.output_len {
            return Err(Error::InvalidShape(format!(
                "output gradient has {} values, forward produced {}",
                grad_output.len(),
                self.output_len
            )));
        }
        if grad.len() != params.len() {
            return Err(Error::InvalidShape(format!(
                "gradient buffer has {} values, network has {}",
                grad.len(),
                params.len()
            )));
        }
        let layout = &self.layout;
        let values = params.values();
        let conv_back = |slot: Slot, input: &Tensor, out: &Tensor, mut g: Tensor, grad: &mut [f64], want_input: bool| {
            ops::relu_backward(out, &mut g);
            let (gw, gb) = grad[slot.offset..slot.offset + slot.len()].split_at_mut(slot.weight_len());
            ops::conv3_backward(input, &values[slot.weight()], &g, gw, gb, want_input)
        };

        let head = layout.head;
        let top = &self.decoder[0].b;
        let (gw, gb) = grad[head.offset..head.offset + head.len()].split_at_mut(head.weight_len());
        let mut g = ops::head_backward(top, &values[head.weight()], grad_output, gw, &mut gb[0]);

        let mut skip_grads = Vec::with_capacity(self.decoder.len());
        for (l, level) in self.decoder.iter().enumerate() {
            let [s0, s1] = layout.decoder[l];
            let ga = conv_back(s1, &level.a, &level.b, g, grad, true).expect("input gradient");
            let gcat = conv_back(s0, &level.cat, &level.a, ga, grad, true).expect("input gradient");
            let up = layout.up[l];
            let (gup, gskip) = ops::split(gcat, up.cout);
            skip_grads.push(gskip);
            let (gw, gb) = grad[up.offset..up.offset + up.len()].split_at_mut(up.weight_len());
            g = ops::up_conv2_backward(&level.up_input, &values[up.weight()], &gup, gw, gb);
        }

        let [b_in, b_a, b_b] = &self.bottleneck;
        let ga = conv_back(layout.bottleneck[1], b_a, b_b, g, grad, true).expect("input gradient");
        g = conv_back(layout.bottleneck[0], b_in, b_a, ga, grad, true).expect("input gradient");

        for l in (0..self.encoder.len()).rev() {
            let level = &self.encoder[l];
            let mut gb = ops::max_pool2_backward(&g, &level.pool_arg, level.b.dims);
            for (x, s) in gb.data.iter_mut().zip(&skip_grads[l].data) {
                *x += s;
            }
            let [s0, s1] = layout.encoder[l];
            let ga = conv_back(s1, &level.a, &level.b, gb, grad, true).expect("input gradient");
            match conv_back(s0, &level.input, &level.a, ga, grad, l > 0) {
                Some(gin) => g = gin,
                None => break,
            }
        }
        Ok(())
    }
}
