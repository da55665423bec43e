//! A small fully convolutional encoder-decoder with hand-written backward
//! pass, an Adam optimizer and a binary checkpoint format.
//!
//! Layout for a `c1`/`c2` architecture on an `H x W` image (`H`, `W`
//! divisible by 4):
//!
//! ```text
//! enc1 3x3 1->c1   relu        H x W
//! enc2 3x3 c1->c1  relu  = s1  H x W     then 2x2 max-pool
//! enc3 3x3 c1->c2  relu        H/2
//! enc4 3x3 c2->c2  relu  = s2  H/2       then 2x2 max-pool
//! up 2x, + s2
//! dec1 3x3 c2->c2  relu        H/2
//! dec2 3x3 c2->c1  relu        H/2
//! up 2x, + s1
//! dec3 3x3 c1->c1  relu        H x W
//! dec4 3x3 c1->c1  relu        H x W
//! head 1x1 c1->1   sigmoid
//! ```
//!
//! The input is mapped from `[0, 1]` to `[-1, 1]` before `enc1`.
//! Convolutions are cross-correlations with zero padding ("same" size),
//! lowered to matrix products via im2col.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GradMap, ProbMap, Shape};

/// Channel-major stack of equally sized maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Stack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Stack {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::LengthMismatch {
                expected: channels * height * width,
                found: data.len(),
            });
        }
        Ok(Stack {
            channels,
            height,
            width,
            data,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Convolution weights of one layer: `cout x cin x k x k` followed by `cout` biases.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
}

impl LayerSpec {
    fn weight_len(&self) -> usize {
        self.cout * self.cin * self.ksize * self.ksize
    }

    fn len(&self) -> usize {
        self.weight_len() + self.cout
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    /// Channels at full resolution.
    pub base_channels: usize,
    /// Channels at half resolution.
    pub deep_channels: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            base_channels: 6,
            deep_channels: 12,
        }
    }
}

impl Architecture {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let (c1, c2) = (self.base_channels, self.deep_channels);
        let conv = |cin, cout| LayerSpec { cin, cout, ksize: 3 };
        vec![
            conv(1, c1),
            conv(c1, c1),
            conv(c1, c2),
            conv(c2, c2),
            conv(c2, c2),
            conv(c2, c1),
            conv(c1, c1),
            conv(c1, c1),
            LayerSpec {
                cin: c1,
                cout: 1,
                ksize: 1,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.deep_channels == 0 {
            return Err(Error::param("architecture", "channel counts must be positive"));
        }
        Ok(())
    }
}

/// All weights and biases in one flat vector, layer after layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    flat: Vec<f64>,
    /// Bumped on every mutation so stale forward caches can be detected.
    version: u64,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.len();
        }
        ModelParams {
            arch: *arch,
            layers,
            offsets,
            flat: vec![0.0; total],
            version: 0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &off) in params.layers.iter().zip(&params.offsets) {
            let area = (l.ksize * l.ksize) as f64;
            let a = (6.0 / ((l.cin as f64 + l.cout as f64) * area)).sqrt();
            for w in &mut params.flat[off..off + l.weight_len()] {
                *w = rng.random_range(-a..=a);
            }
        }
        params
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.flat
    }

    fn weight(&self, layer: usize) -> &[f64] {
        let off = self.offsets[layer];
        &self.flat[off..off + self.layers[layer].weight_len()]
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        let off = self.offsets[layer] + l.weight_len();
        &self.flat[off..off + l.cout]
    }
}

/// Gradient with the same flat layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(Vec<f64>);

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads(vec![0.0; params.param_count()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.0
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}

fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach,
    // since each operand is densely packed with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `(cin * k * k) x (h * w)` patch matrix with zero padding.
fn im2col(input: &Stack, ksize: usize) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    if ksize == 1 {
        return input.data.clone();
    }
    let r = ksize / 2;
    let plane = h * w;
    let mut col = vec![0.0; input.channels * ksize * ksize * plane];
    for ci in 0..input.channels {
        let src = &input.data[ci * plane..(ci + 1) * plane];
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (ci * ksize + ky) * ksize + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (x0, x1) = (r.saturating_sub(kx), (w + r).saturating_sub(kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < r || sy - r >= h {
                        continue;
                    }
                    let sy = sy - r;
                    if x0 < x1 {
                        let sx0 = x0 + kx - r;
                        dst[y * w + x0..y * w + x1]
                            .copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], channels: usize, h: usize, w: usize, ksize: usize) -> Stack {
    if ksize == 1 {
        return Stack {
            channels,
            height: h,
            width: w,
            data: col.to_vec(),
        };
    }
    let r = ksize / 2;
    let plane = h * w;
    let mut out = Stack::zeros(channels, h, w);
    for ci in 0..channels {
        let dst = &mut out.data[ci * plane..(ci + 1) * plane];
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (ci * ksize + ky) * ksize + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (x0, x1) = (r.saturating_sub(kx), (w + r).saturating_sub(kx).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy < r || sy - r >= h || x0 >= x1 {
                        continue;
                    }
                    let sy = sy - r;
                    let sx0 = x0 + kx - r;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (a, b) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

fn check_conv(input: &Stack, spec: &LayerSpec, weight: &[f64], bias: &[f64]) -> Result<()> {
    if input.channels != spec.cin || weight.len() != spec.weight_len() || bias.len() != spec.cout {
        return Err(Error::param(
            "conv2d",
            format!(
                "input has {} channels, layer expects {}->{} with {} weights",
                input.channels,
                spec.cin,
                spec.cout,
                spec.weight_len()
            ),
        ));
    }
    if spec.ksize % 2 == 0 {
        return Err(Error::param("conv2d", "kernel size must be odd"));
    }
    Ok(())
}

/// Same-size cross-correlation with zero padding.
pub fn conv2d(input: &Stack, spec: &LayerSpec, weight: &[f64], bias: &[f64]) -> Result<Stack> {
    check_conv(input, spec, weight, bias)?;
    let plane = input.plane();
    let kdim = spec.cin * spec.ksize * spec.ksize;
    let col = im2col(input, spec.ksize);
    let mut out = Stack::zeros(spec.cout, input.height, input.width);
    for (co, &b) in bias.iter().enumerate() {
        out.data[co * plane..(co + 1) * plane].fill(b);
    }
    gemm((spec.cout, kdim, plane), weight, (kdim, 1), &col, (plane, 1), 1.0, &mut out.data);
    Ok(out)
}

pub struct ConvGrads {
    pub input: Stack,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &Stack,
    spec: &LayerSpec,
    weight: &[f64],
    upstream: &Stack,
) -> Result<ConvGrads> {
    let mut gw = vec![0.0; spec.weight_len()];
    let mut gb = vec![0.0; spec.cout];
    let input_grad = conv2d_backward_into(input, spec, weight, upstream, &mut gw, &mut gb, true)?;
    Ok(ConvGrads {
        input: input_grad.expect("requested"),
        weight: gw,
        bias: gb,
    })
}

/// Accumulates kernel and bias gradients into `gw`/`gb`.
fn conv2d_backward_into(
    input: &Stack,
    spec: &LayerSpec,
    weight: &[f64],
    upstream: &Stack,
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Result<Option<Stack>> {
    if upstream.channels != spec.cout
        || upstream.height != input.height
        || upstream.width != input.width
        || input.channels != spec.cin
    {
        return Err(Error::param("conv2d_backward", "upstream shape does not match layer"));
    }
    let plane = input.plane();
    let kdim = spec.cin * spec.ksize * spec.ksize;
    let col = im2col(input, spec.ksize);
    // dW (cout x kdim) += dOut (cout x plane) * col^T
    gemm((spec.cout, plane, kdim), &upstream.data, (plane, 1), &col, (1, plane), 1.0, gw);
    for (co, b) in gb.iter_mut().enumerate() {
        *b += upstream.data[co * plane..(co + 1) * plane].iter().sum::<f64>();
    }
    if !want_input {
        return Ok(None);
    }
    // dcol (kdim x plane) = W^T * dOut
    let mut dcol = vec![0.0; kdim * plane];
    gemm((kdim, spec.cout, plane), weight, (1, kdim), &upstream.data, (plane, 1), 0.0, &mut dcol);
    Ok(Some(col2im(&dcol, spec.cin, input.height, input.width, spec.ksize)))
}

fn relu_in_place(s: &mut Stack) {
    s.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient wherever the activation was clipped.
fn relu_backward(grad: &mut Stack, activation: &Stack) {
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max-pool; ties go to the first pixel in row-major order.
fn pool2(input: &Stack) -> (Stack, Vec<u32>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = Stack::zeros(input.channels, h, w);
    let mut arg = Vec::with_capacity(out.data.len());
    let iw = input.width;
    for c in 0..input.channels {
        let base = c * input.plane();
        for y in 0..h {
            for x in 0..w {
                let mut best = base + 2 * y * iw + 2 * x;
                for k in [base + 2 * y * iw + 2 * x + 1, base + (2 * y + 1) * iw + 2 * x, base + (2 * y + 1) * iw + 2 * x + 1] {
                    if input.data[k] > input.data[best] {
                        best = k;
                    }
                }
                out.data[(c * h + y) * w + x] = input.data[best];
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn pool2_backward(grad: &Stack, arg: &[u32], channels: usize, h: usize, w: usize) -> Stack {
    let mut out = Stack::zeros(channels, h, w);
    for (&g, &k) in grad.data.iter().zip(arg) {
        out.data[k as usize] += g;
    }
    out
}

fn upsample2(input: &Stack) -> Stack {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = Stack::zeros(input.channels, h, w);
    for c in 0..input.channels {
        for y in 0..h {
            for x in 0..w {
                out.data[(c * h + y) * w + x] =
                    input.data[(c * input.height + y / 2) * input.width + x / 2];
            }
        }
    }
    out
}

fn upsample2_backward(grad: &Stack) -> Stack {
    let (h, w) = (grad.height / 2, grad.width / 2);
    let mut out = Stack::zeros(grad.channels, h, w);
    for c in 0..grad.channels {
        for y in 0..grad.height {
            for x in 0..grad.width {
                out.data[(c * h + y / 2) * w + x / 2] += grad.data[(c * grad.height + y) * grad.width + x];
            }
        }
    }
    out
}

fn add_in_place(a: &mut Stack, b: &Stack) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    arch: Architecture,
    shape: Shape,
    /// Input of every layer, in layer order.
    inputs: Vec<Stack>,
    /// Post-ReLU output of every hidden layer.
    activations: Vec<Stack>,
    pool_args: [Vec<u32>; 2],
    output: Vec<f64>,
}

impl ForwardCache {
    /// ReLU on/off bits and pooling selections of this evaluation.
    pub fn pattern(&self) -> Vec<u32> {
        let mut p: Vec<u32> = self
            .activations
            .iter()
            .flat_map(|a| a.data.iter().map(|&v| u32::from(v > 0.0)))
            .collect();
        p.extend(self.pool_args.iter().flatten());
        p
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn check_image(shape: Shape) -> Result<()> {
    if shape.height % 4 != 0 || shape.width % 4 != 0 {
        return Err(Error::param(
            "image",
            format!("size {shape} must be divisible by 4"),
        ));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, image: &ProbMap) -> Result<(ProbMap, ForwardCache)> {
    let shape = image.shape();
    check_image(shape)?;
    let x0 = Stack::new(1, shape.height, shape.width, image.values().iter().map(|v| 2.0 * v - 1.0).collect())?;
    let mut inputs = Vec::with_capacity(9);
    let mut activations = Vec::with_capacity(8);

    let layer = |inputs: &mut Vec<Stack>, acts: &mut Vec<Stack>, x: Stack, l: usize| -> Result<Stack> {
        let mut y = conv2d(&x, &params.layers[l], params.weight(l), params.bias(l))?;
        inputs.push(x);
        relu_in_place(&mut y);
        acts.push(y.clone());
        Ok(y)
    };

    let a1 = layer(&mut inputs, &mut activations, x0, 0)?;
    let a2 = layer(&mut inputs, &mut activations, a1, 1)?;
    let (p1, arg1) = pool2(&a2);
    let a3 = layer(&mut inputs, &mut activations, p1, 2)?;
    let a4 = layer(&mut inputs, &mut activations, a3, 3)?;
    let (p2, arg2) = pool2(&a4);

    let mut u1 = upsample2(&p2);
    add_in_place(&mut u1, &a4);
    let a5 = layer(&mut inputs, &mut activations, u1, 4)?;
    let a6 = layer(&mut inputs, &mut activations, a5, 5)?;
    let mut u2 = upsample2(&a6);
    add_in_place(&mut u2, &a2);
    let a7 = layer(&mut inputs, &mut activations, u2, 6)?;
    let a8 = layer(&mut inputs, &mut activations, a7, 7)?;

    let z = conv2d(&a8, &params.layers[8], params.weight(8), params.bias(8))?;
    inputs.push(a8);
    let output: Vec<f64> = z.data.iter().map(|&v| sigmoid(v)).collect();
    let prob = ProbMap::new(shape.height, shape.width, output.clone())?;
    Ok((
        prob,
        ForwardCache {
            version: params.version,
            arch: params.arch,
            shape,
            inputs,
            activations,
            pool_args: [arg1, arg2],
            output,
        },
    ))
}

/// Parameter gradients of the scalar whose gradient w.r.t. the output map
/// is `upstream`.
pub fn backward(params: &ModelParams, cache: &ForwardCache, upstream: &GradMap) -> Result<ParamGrads> {
    if cache.version != params.version || cache.arch != params.arch {
        return Err(Error::StaleCache(
            "parameters changed since the forward pass".into(),
        ));
    }
    if upstream.shape() != cache.shape {
        return Err(Error::StaleCache(format!(
            "upstream gradient is {}, forward pass was {}",
            upstream.shape(),
            cache.shape
        )));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let (h, w) = (cache.shape.height, cache.shape.width);

    let mut back = |l: usize, dout: &Stack, want_input: bool| -> Result<Option<Stack>> {
        let spec = params.layers[l];
        let off = params.offsets[l];
        let (gw, gb) = grads.0[off..off + spec.len()].split_at_mut(spec.weight_len());
        conv2d_backward_into(&cache.inputs[l], &spec, params.weight(l), dout, gw, gb, want_input)
    };
    let relu = |mut g: Stack, l: usize| -> Stack {
        relu_backward(&mut g, &cache.activations[l]);
        g
    };

    let dz: Vec<f64> = upstream
        .values()
        .iter()
        .zip(&cache.output)
        .map(|(u, y)| u * y * (1.0 - y))
        .collect();
    let dz = Stack::new(1, h, w, dz)?;
    let da8 = back(8, &dz, true)?.unwrap();
    let da7 = back(7, &relu(da8, 7), true)?.unwrap();
    let du2 = back(6, &relu(da7, 6), true)?.unwrap();
    let da6 = upsample2_backward(&du2);
    let da5 = back(5, &relu(da6, 5), true)?.unwrap();
    let du1 = back(4, &relu(da5, 4), true)?.unwrap();
    let mut da4 = pool2_backward(&upsample2_backward(&du1), &cache.pool_args[1], du1.channels, h / 2, w / 2);
    add_in_place(&mut da4, &du1);
    let da3 = back(3, &relu(da4, 3), true)?.unwrap();
    let dp1 = back(2, &relu(da3, 2), true)?.unwrap();
    let mut da2 = pool2_backward(&dp1, &cache.pool_args[0], dp1.channels, h, w);
    add_in_place(&mut da2, &du2);
    let da1 = back(1, &relu(da2, 1), true)?.unwrap();
    back(0, &relu(da1, 0), false)?;
    Ok(grads)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        OptState {
            m: vec![0.0; params.param_count()],
            v: vec![0.0; params.param_count()],
            t: 0,
        }
    }
}

/// One Adam update in the Keras formulation, where the bias correction is
/// folded into the step size and `eps` is added to `sqrt(v)` uncorrected.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut OptState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.0.len() != params.param_count() || state.m.len() != params.param_count() {
        return Err(Error::LengthMismatch {
            expected: params.param_count(),
            found: grads.0.len(),
        });
    }
    if let Some(index) = grads.0.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let step = lr * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
    let flat = params.flat_mut();
    for i in 0..flat.len() {
        let g = grads.0[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        flat[i] -= step * state.m[i] / (state.v[i].sqrt() + cfg.eps);
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BFLCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialize parameters (see `docs/checkpoint.md` for the layout).
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 12 * params.layers.len() + 4 * params.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        for v in [l.cin, l.cout, l.ksize] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for &v in &params.flat {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |reason: &str| Error::param("checkpoint", reason.to_string());
    let mut words = bytes
        .get(8..)
        .ok_or_else(|| bad("truncated header"))?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let mut next = || words.next().ok_or_else(|| bad("truncated header"));
    let version = next()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = next()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        table.push(LayerSpec {
            cin: next()? as usize,
            cout: next()? as usize,
            ksize: next()? as usize,
        });
    }
    let arch = Architecture {
        base_channels: table.first().map_or(0, |l| l.cout),
        deep_channels: table.get(2).map_or(0, |l| l.cout),
    };
    arch.validate()?;
    if arch.layers() != table {
        return Err(bad("layer table does not describe a supported architecture"));
    }
    let mut params = ModelParams::zeros(&arch);
    let start = 16 + 12 * count;
    let body = &bytes[start.min(bytes.len())..];
    if body.len() != 4 * params.param_count() {
        return Err(bad(&format!(
            "expected {} parameters, found {} bytes",
            params.param_count(),
            body.len()
        )));
    }
    for (dst, c) in params.flat.iter_mut().zip(body.chunks_exact(4)) {
        *dst = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
