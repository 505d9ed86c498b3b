//! The learned regularizer: a small convolutional network (plain CNN or a
//! one-level encoder/decoder) with hand-written reverse-mode derivatives and
//! per-layer spectral normalization.

pub mod checkpoint;
pub mod conv;
mod spectral;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Result, TomoError};
use crate::geometry::Image;
use crate::io::{Decoder, Encoder};
use crate::linalg;

pub use conv::ConvShape;
pub use spectral::{spectral_normalize, ConvOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    z
                } else {
                    a * z
                }
            }
        }
    }

    #[inline]
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

/// Architecture description.
///
/// `n_scales = 1` is a plain CNN with `depth` convolutions
/// (`1 -> C -> ... -> C -> 1`). `n_scales = 2` is a fixed five-layer
/// encoder/decoder: full-resolution encoder, 2x2 average pooling, two
/// half-resolution layers, nearest upsampling merged with the encoder
/// features by averaging, a decoder layer and a `C -> 1` output layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserSpec {
    pub n_scales: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub depth: usize,
    pub activation: Activation,
    /// Output `x + correction` instead of `correction`.
    pub use_skip: bool,
    pub sn_power_iters: usize,
    /// Image side at which spectral norms are measured.
    pub resolution: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            n_scales: 2,
            channels: 16,
            kernel_size: 3,
            depth: 3,
            activation: Activation::LeakyRelu(0.1),
            use_skip: true,
            sn_power_iters: 1,
            resolution: 32,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_scales) {
            return Err(TomoError::config("n_scales must be 1 or 2"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(TomoError::config("kernel_size must be odd"));
        }
        if self.channels == 0 {
            return Err(TomoError::config("channels must be >= 1"));
        }
        if self.n_scales == 1 && self.depth < 1 {
            return Err(TomoError::config("depth must be >= 1"));
        }
        if self.resolution % (1 << (self.n_scales - 1)) != 0 || self.resolution == 0 {
            return Err(TomoError::config(
                "resolution must be divisible by 2^(n_scales - 1)",
            ));
        }
        Ok(())
    }

    /// `(shape, resolution divisor)` for each convolution in forward order.
    pub fn layer_plan(&self) -> Vec<(ConvShape, usize)> {
        let c = self.channels;
        let k = self.kernel_size;
        let sh = |i, o| ConvShape {
            in_ch: i,
            out_ch: o,
            kernel: k,
        };
        if self.n_scales == 1 {
            if self.depth == 1 {
                return vec![(sh(1, 1), 1)];
            }
            let mut v = vec![(sh(1, c), 1)];
            for _ in 0..self.depth - 2 {
                v.push((sh(c, c), 1));
            }
            v.push((sh(c, 1), 1));
            v
        } else {
            vec![
                (sh(1, c), 1),
                (sh(c, c), 2),
                (sh(c, c), 2),
                (sh(c, c), 1),
                (sh(c, 1), 1),
            ]
        }
    }
}

/// Persistent power-iteration state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SnState {
    /// Left singular vector estimate (output-shaped).
    pub u: Vec<f64>,
    /// Right singular vector estimate (input-shaped).
    pub v: Vec<f64>,
    /// Most recent operator-norm estimate.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub shape: ConvShape,
    /// Side of the feature maps this layer sees at the reference resolution.
    pub side: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub sn: SnState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub spec: DenoiserSpec,
    pub layers: Vec<ConvLayer>,
}

/// Gradient (or any other quantity) shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(p: &DenoiserParams) -> Self {
        ParamGrads {
            layers: p
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            linalg::axpy(1.0, &b.weight, &mut a.weight);
            linalg::axpy(1.0, &b.bias, &mut a.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            linalg::scale(&mut l.weight, s);
            linalg::scale(&mut l.bias, s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| linalg::all_finite(&l.weight) && linalg::all_finite(&l.bias))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

impl DenoiserParams {
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(TomoError::dim(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Index ranges of each layer's entries in [`flatten`](Self::flatten).
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = off..off + l.weight.len() + l.bias.len();
                off = r.end;
                r
            })
            .collect()
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        for l in &mut p.layers {
            l.weight.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    pub(crate) fn encode_into(&self, e: &mut Encoder) {
        let s = &self.spec;
        e.u32(s.n_scales as u32);
        e.u32(s.channels as u32);
        e.u32(s.kernel_size as u32);
        e.u32(s.depth as u32);
        match s.activation {
            Activation::Relu => {
                e.u8(0);
                e.f64(0.0);
            }
            Activation::LeakyRelu(a) => {
                e.u8(1);
                e.f64(a);
            }
        }
        e.u8(s.use_skip as u8);
        e.u32(s.sn_power_iters as u32);
        e.u32(s.resolution as u32);
        e.u32(self.layers.len() as u32);
        for l in &self.layers {
            e.u32(l.shape.in_ch as u32);
            e.u32(l.shape.out_ch as u32);
            e.u32(l.shape.kernel as u32);
            e.u32(l.side as u32);
            e.f64s(&l.weight);
            e.f64s(&l.bias);
            e.f64(l.sn.sigma);
            e.f64s(&l.sn.u);
            e.f64s(&l.sn.v);
        }
    }

    pub(crate) fn decode_from(d: &mut Decoder<'_>) -> Result<Self> {
        let n_scales = d.u32()? as usize;
        let channels = d.u32()? as usize;
        let kernel_size = d.u32()? as usize;
        let depth = d.u32()? as usize;
        let act_tag = d.u8()?;
        let slope = d.f64()?;
        let activation = match act_tag {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu(slope),
            t => return Err(d.format(format!("unknown activation tag {t}"))),
        };
        let use_skip = d.u8()? != 0;
        let sn_power_iters = d.u32()? as usize;
        let resolution = d.u32()? as usize;
        let spec = DenoiserSpec {
            n_scales,
            channels,
            kernel_size,
            depth,
            activation,
            use_skip,
            sn_power_iters,
            resolution,
        };
        spec.validate().map_err(|e| d.format(e.to_string()))?;
        let plan = spec.layer_plan();
        let n_layers = d.u32()? as usize;
        if n_layers != plan.len() {
            return Err(d.format(format!(
                "checkpoint has {n_layers} layers, architecture needs {}",
                plan.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (shape, div) in plan {
            let in_ch = d.u32()? as usize;
            let out_ch = d.u32()? as usize;
            let kernel = d.u32()? as usize;
            let side = d.u32()? as usize;
            if (ConvShape { in_ch, out_ch, kernel }) != shape || side != resolution / div {
                return Err(d.format("layer shape does not match the architecture header"));
            }
            let weight = d.f64s(shape.weight_len())?;
            let bias = d.f64s(out_ch)?;
            let sigma = d.f64()?;
            let u = d.f64s(out_ch * side * side)?;
            let v = d.f64s(in_ch * side * side)?;
            layers.push(ConvLayer {
                shape,
                side,
                weight,
                bias,
                sn: SnState { u, v, sigma },
            });
        }
        Ok(DenoiserParams { spec, layers })
    }
}

fn unit_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let nv = linalg::norm(&v);
    linalg::scale(&mut v, 1.0 / nv);
    v
}

/// Kaiming-normal kernels (`std = sqrt(2 / fan_in)`), zero biases, random
/// unit power-iteration vectors.
pub fn init_denoiser(spec: &DenoiserSpec, seed: u64) -> Result<DenoiserParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_plan()
        .into_iter()
        .map(|(shape, div)| {
            let fan_in = (shape.in_ch * shape.kernel * shape.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            let weight = (0..shape.weight_len()).map(|_| normal.sample(&mut rng)).collect();
            let side = spec.resolution / div;
            let u = unit_normal(shape.out_ch * side * side, &mut rng);
            let v = unit_normal(shape.in_ch * side * side, &mut rng);
            ConvLayer {
                shape,
                side,
                weight,
                bias: vec![0.0; shape.out_ch],
                sn: SnState { u, v, sigma: 1.0 },
            }
        })
        .collect();
    Ok(DenoiserParams {
        spec: *spec,
        layers,
    })
}

/// Intermediate values needed by the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    side: usize,
    /// Input of each convolution.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each convolution.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    /// Which side of the activation kink each hidden pre-activation sits on.
    /// The forward map is smooth in `(p, x)` while this pattern is fixed.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden].iter().flat_map(|z| z.iter().map(|v| *v > 0.0)).collect()
    }
}

fn check_side(p: &DenoiserParams, side: usize) -> Result<()> {
    let div = 1 << (p.spec.n_scales - 1);
    if side == 0 || side % div != 0 {
        return Err(TomoError::dim(format!(
            "image side {side} must be divisible by {div} for {} scales",
            p.spec.n_scales
        )));
    }
    Ok(())
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| act.apply(v)).collect()
}

fn activate_backward(act: Activation, z: &[f64], g: &mut [f64]) {
    for (gi, &zi) in g.iter_mut().zip(z) {
        *gi *= act.slope(zi);
    }
}

fn layer_forward(l: &ConvLayer, input: &[f64], side: usize) -> Vec<f64> {
    conv::conv_forward(input, side, l.shape, &l.weight, Some(&l.bias))
}

fn forward_impl(p: &DenoiserParams, x: &Image) -> Result<(Image, Tape)> {
    check_side(p, x.side)?;
    let act = p.spec.activation;
    let n = x.side;
    let mut tape = Tape {
        side: n,
        inputs: Vec::with_capacity(p.layers.len()),
        pre: Vec::with_capacity(p.layers.len()),
    };
    let correction = if p.spec.n_scales == 1 {
        let mut h = x.data.clone();
        let last = p.layers.len() - 1;
        for (i, l) in p.layers.iter().enumerate() {
            let z = layer_forward(l, &h, n);
            let next = if i == last { z.clone() } else { activate(act, &z) };
            tape.inputs.push(std::mem::replace(&mut h, next));
            tape.pre.push(z);
        }
        h
    } else {
        let c = p.spec.channels;
        let h2 = n / 2;
        let l = &p.layers;
        let z0 = layer_forward(&l[0], &x.data, n);
        let a0 = activate(act, &z0);
        let pooled = conv::avg_pool2(&a0, c, n);
        let z1 = layer_forward(&l[1], &pooled, h2);
        let a1 = activate(act, &z1);
        let z2 = layer_forward(&l[2], &a1, h2);
        let a2 = activate(act, &z2);
        let up = conv::upsample2(&a2, c, h2);
        let merged: Vec<f64> = up.iter().zip(&a0).map(|(u, e)| 0.5 * (u + e)).collect();
        let z3 = layer_forward(&l[3], &merged, n);
        let a3 = activate(act, &z3);
        let z4 = layer_forward(&l[4], &a3, n);
        tape.inputs = vec![x.data.clone(), pooled, a1, merged, a3];
        tape.pre = vec![z0, z1, z2, z3, z4.clone()];
        z4
    };
    let mut out = Image::from_vec(n, correction)?;
    if p.spec.use_skip {
        linalg::axpy(1.0, &x.data, &mut out.data);
    }
    Ok((out, tape))
}

/// `f_theta(x)`.
pub fn denoiser_forward(p: &DenoiserParams, x: &Image) -> Result<Image> {
    forward_impl(p, x).map(|(o, _)| o)
}

/// Forward pass that also records what the reverse pass needs.
pub fn denoiser_forward_with_tape(p: &DenoiserParams, x: &Image) -> Result<(Image, Tape)> {
    forward_impl(p, x)
}

fn layer_backward(
    l: &ConvLayer,
    input: &[f64],
    g_out: &[f64],
    side: usize,
    need_input: bool,
) -> (LayerGrads, Option<Vec<f64>>) {
    let (weight, bias) = conv::conv_backward_params(input, g_out, side, l.shape);
    let gi = need_input.then(|| conv::conv_backward_input(g_out, side, l.shape, &l.weight));
    (LayerGrads { weight, bias }, gi)
}

/// Reverse pass from a recorded tape.
pub fn denoiser_backward(p: &DenoiserParams, tape: &Tape, cotangent: &Image) -> Result<(ParamGrads, Image)> {
    if cotangent.side != tape.side {
        return Err(TomoError::dim(format!(
            "cotangent side {} != forward side {}",
            cotangent.side, tape.side
        )));
    }
    let act = p.spec.activation;
    let n = tape.side;
    let mut grads: Vec<Option<LayerGrads>> = vec![None; p.layers.len()];
    let g_x = if p.spec.n_scales == 1 {
        let mut g = cotangent.data.clone();
        let last = p.layers.len() - 1;
        for i in (0..p.layers.len()).rev() {
            if i != last {
                activate_backward(act, &tape.pre[i], &mut g);
            }
            let (lg, gi) = layer_backward(&p.layers[i], &tape.inputs[i], &g, n, true);
            grads[i] = Some(lg);
            g = gi.unwrap();
        }
        g
    } else {
        let c = p.spec.channels;
        let h2 = n / 2;
        let l = &p.layers;
        let (g4, g_a3) = layer_backward(&l[4], &tape.inputs[4], &cotangent.data, n, true);
        let mut g_z3 = g_a3.unwrap();
        activate_backward(act, &tape.pre[3], &mut g_z3);
        let (g3, g_m) = layer_backward(&l[3], &tape.inputs[3], &g_z3, n, true);
        let g_m = g_m.unwrap();
        let half: Vec<f64> = g_m.iter().map(|v| 0.5 * v).collect();
        let mut g_z2 = conv::upsample2_adjoint(&half, c, h2);
        activate_backward(act, &tape.pre[2], &mut g_z2);
        let (g2, g_a1) = layer_backward(&l[2], &tape.inputs[2], &g_z2, h2, true);
        let mut g_z1 = g_a1.unwrap();
        activate_backward(act, &tape.pre[1], &mut g_z1);
        let (g1, g_p) = layer_backward(&l[1], &tape.inputs[1], &g_z1, h2, true);
        let mut g_z0 = conv::avg_pool2_adjoint(&g_p.unwrap(), c, h2);
        linalg::axpy(1.0, &half, &mut g_z0);
        activate_backward(act, &tape.pre[0], &mut g_z0);
        let (g0, g_x) = layer_backward(&l[0], &tape.inputs[0], &g_z0, n, true);
        grads = vec![Some(g0), Some(g1), Some(g2), Some(g3), Some(g4)];
        g_x.unwrap()
    };
    let mut input_grad = Image::from_vec(n, g_x)?;
    if p.spec.use_skip {
        linalg::axpy(1.0, &cotangent.data, &mut input_grad.data);
    }
    Ok((
        ParamGrads {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        },
        input_grad,
    ))
}

/// Vector-Jacobian product of `denoiser_forward` at `(p, x)` with `cotangent`.
pub fn denoiser_vjp(p: &DenoiserParams, x: &Image, cotangent: &Image) -> Result<(ParamGrads, Image)> {
    x.same_shape(cotangent)?;
    let (_, tape) = forward_impl(p, x)?;
    denoiser_backward(p, &tape, cotangent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_spec(n_scales: usize) -> DenoiserSpec {
        DenoiserSpec {
            n_scales,
            channels: 4,
            kernel_size: 3,
            depth: 3,
            activation: Activation::LeakyRelu(0.1),
            use_skip: true,
            sn_power_iters: 1,
            resolution: 8,
        }
    }

    fn random_image(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(side, (0..side * side).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let s = small_spec(2);
        let a = init_denoiser(&s, 7).unwrap();
        let b = init_denoiser(&s, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert_ne!(a, init_denoiser(&s, 8).unwrap());
    }

    #[test]
    fn kaiming_variance() {
        let spec = DenoiserSpec {
            channels: 32,
            ..small_spec(1)
        };
        let p = init_denoiser(&spec, 3).unwrap();
        let mid = &p.layers[1];
        assert_eq!(mid.shape.in_ch, 32);
        let n = mid.weight.len() as f64;
        let mean = mid.weight.iter().sum::<f64>() / n;
        let var = mid.weight.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / (32.0 * 9.0);
        assert!((var - target).abs() < 0.2 * target, "{var} vs {target}");
    }

    #[test]
    fn zero_params_identity_or_zero() {
        for scales in [1, 2] {
            let p = init_denoiser(&small_spec(scales), 1).unwrap().zeroed();
            let x = random_image(8, 2);
            assert_eq!(denoiser_forward(&p, &x).unwrap(), x);
            let mut q = p.clone();
            q.spec.use_skip = false;
            assert!(denoiser_forward(&q, &x).unwrap().data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_side_rejected_for_two_scales() {
        let p = init_denoiser(&small_spec(2), 1).unwrap();
        assert!(denoiser_forward(&p, &Image::zeros(7)).is_err());
        let q = init_denoiser(&small_spec(1), 1).unwrap();
        assert!(denoiser_forward(&q, &Image::zeros(7)).is_ok());
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let mut spec = small_spec(2);
        spec.use_skip = false;
        let p = init_denoiser(&spec, 4).unwrap();
        let x = random_image(8, 5);
        let (g, gi) = denoiser_vjp(&p, &x, &Image::zeros(8)).unwrap();
        assert!(g.is_zero());
        assert!(gi.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip_and_ranges() {
        let p = init_denoiser(&small_spec(2), 9).unwrap();
        let flat = p.flatten();
        let mut q = p.zeroed();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        let ranges = p.layer_ranges();
        assert_eq!(ranges.last().unwrap().end, p.n_params());
        assert!(q.set_flat(&flat[1..]).is_err());
    }
}
