//! Compact skip-connected encoder-decoder regression network with explicit
//! forward and backward passes.
//!
//! Topology for `depth = D`, `base_channels = C` (level `l` has `C * 2^l` channels):
//!
//! ```text
//! encoder  l = 0..=D : conv3x3 -> lrelu -> conv3x3 -> lrelu [-> maxpool2 if l < D]
//! decoder  l = D-1..=0: upsample2 -> concat(skip_l) -> conv3x3 -> lrelu -> conv3x3 -> lrelu
//! head             : conv1x1 -> 1 channel (linear)
//! ```
//!
//! `base_channels = 0` (with `depth = 0`) degenerates to a single learned
//! output bias: the constant predictor.

mod io;
pub mod layers;
mod train;

use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use io::{load_params, save_params, PARAMS_MAGIC};
pub use layers::{ConvParams, Scalar};
pub use train::{
    adam_step, crop_aligned, train, train_with, AdamState, LossKind, PairSource, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use layers::{
    conv_backward, conv_forward, leaky_backward, leaky_forward, maxpool_backward, maxpool_forward,
    upsample_backward, upsample_forward,
};

/// Dense `[batch][channels][height][width]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            values: vec![T::zero(); batch * channels * height * width],
        }
    }

    pub fn new(batch: usize, channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != batch * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for tensor ({batch},{channels},{height},{width})",
                values.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values,
        })
    }

    /// Stacks same-sized images as a single-channel batch.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptySequence)?;
        let (h, w) = first.dims();
        let mut values = Vec::with_capacity(images.len() * h * w);
        for img in images {
            crate::image::check_dims((h, w), img.dims())?;
            values.extend(img.pixels().iter().map(|&v| T::from_f64(v as f64)));
        }
        Self::new(images.len(), 1, h, w, values)
    }

    /// Splits channel 0 of every batch item into an image.
    pub fn to_images(&self) -> Vec<Image> {
        (0..self.batch)
            .map(|b| {
                let s = self.sample(b);
                Image::from_fn(self.height, self.width, |r, c| s[r * self.width + c].as_f64() as f32)
            })
            .collect()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sample(&self, b: usize) -> &[T] {
        &self.values[b * self.sample_len()..(b + 1) * self.sample_len()]
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    /// Number of 2x downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            depth: 2,
            base_channels: 16,
            kernel_size: 3,
            leaky_slope: 0.1,
        }
    }
}

impl NetworkSpec {
    pub fn new(depth: usize, base_channels: usize) -> Self {
        Self {
            depth,
            base_channels,
            ..Self::default()
        }
    }

    /// Single output bias, no convolutions.
    pub fn constant() -> Self {
        Self::new(0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 && self.depth != 0 {
            return Err(Error::Validation("base_channels 0 requires depth 0".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Validation("kernel_size must be odd".into()));
        }
        if self.depth > 8 {
            return Err(Error::Validation("depth above 8 is not supported".into()));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(Error::Validation("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn alignment(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn has_body(&self) -> bool {
        self.base_channels > 0
    }

    /// `(in, out, kernel)` of every convolution in declaration order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        if self.has_body() {
            let mut inc = 1;
            for l in 0..=self.depth {
                let c = self.channels(l);
                shapes.push((inc, c, k));
                shapes.push((c, c, k));
                inc = c;
            }
            for l in (0..self.depth).rev() {
                let c = self.channels(l);
                shapes.push((self.channels(l + 1) + c, c, k));
                shapes.push((c, c, k));
            }
        }
        shapes.push((self.channels(0), 1, 1));
        shapes
    }

    /// Stable 64-bit hash of every field.
    pub fn fingerprint(&self) -> u64 {
        let text = format!(
            "depth={};base={};kernel={};slope={:016x};in=1;out=1",
            self.depth,
            self.base_channels,
            self.kernel_size,
            self.leaky_slope.to_bits()
        );
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let a = self.alignment();
        if height == 0 || width == 0 || !height.is_multiple_of(a) || !width.is_multiple_of(a) {
            return Err(Error::ShapeMismatch(format!(
                "input {height}x{width} is not a nonzero multiple of {a}"
            )));
        }
        Ok(())
    }

    fn enc_layer(&self, level: usize, second: bool) -> usize {
        2 * level + second as usize
    }

    fn dec_layer(&self, level: usize, second: bool) -> usize {
        2 * (self.depth + 1) + 2 * (self.depth - 1 - level) + second as usize
    }
}

/// Learned weights, one [`ConvParams`] per layer in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<ConvParams<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o, k)| ConvParams::zeros(i, o, k))
                .collect(),
        }
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(spec);
        for layer in &mut p.layers {
            let fan_in = layer.in_ch * layer.ksize * layer.ksize;
            if fan_in == 0 {
                continue;
            }
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in &mut layer.weight {
                *w = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter in declaration order (weights then bias, per layer).
    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn get_flat(&self, mut i: usize) -> T {
        for l in &self.layers {
            if i < l.weight.len() {
                return l.weight[i];
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: T) {
        for l in &mut self.layers {
            if i < l.weight.len() {
                l.weight[i] = v;
                return;
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                l.bias[i] = v;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        let shapes = spec.layer_shapes();
        shapes.len() == self.layers.len()
            && shapes.iter().zip(&self.layers).all(|(&(i, o, k), l)| {
                l.in_ch == i && l.out_ch == o && l.ksize == k && l.weight.len() == o * i * k * k && l.bias.len() == o
            })
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvParams {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    ksize: l.ksize,
                    weight: l.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Activations of one conv-lrelu-conv-lrelu block.
struct BlockCache<T> {
    input: Vec<T>,
    pre_a: Vec<T>,
    act_a: Vec<T>,
    pre_b: Vec<T>,
    h: usize,
    w: usize,
}

struct Cache<T> {
    enc: Vec<BlockCache<T>>,
    pool_idx: Vec<Vec<u32>>,
    /// Indexed by level.
    dec: Vec<Option<BlockCache<T>>>,
    head_input: Vec<T>,
}

fn block_forward<T: Scalar>(
    params: &NetworkParams<T>,
    first: usize,
    second: usize,
    input: Vec<T>,
    h: usize,
    w: usize,
    slope: T,
) -> (Vec<T>, BlockCache<T>) {
    let pre_a = conv_forward(&params.layers[first], &input, h, w);
    let act_a = leaky_forward(&pre_a, slope);
    let pre_b = conv_forward(&params.layers[second], &act_a, h, w);
    let out = leaky_forward(&pre_b, slope);
    (
        out,
        BlockCache {
            input,
            pre_a,
            act_a,
            pre_b,
            h,
            w,
        },
    )
}

/// Returns the gradient with respect to the block input when requested.
#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    params: &NetworkParams<T>,
    grads: &mut NetworkParams<T>,
    first: usize,
    second: usize,
    cache: &BlockCache<T>,
    mut d_out: Vec<T>,
    slope: T,
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (h, w) = (cache.h, cache.w);
    leaky_backward(&cache.pre_b, &mut d_out, slope);
    let mut d_act_a = conv_backward(&params.layers[second], &cache.act_a, h, w, &d_out, &mut grads.layers[second], true)
        .expect("input grad requested");
    leaky_backward(&cache.pre_a, &mut d_act_a, slope);
    conv_backward(
        &params.layers[first],
        &cache.input,
        h,
        w,
        &d_act_a,
        &mut grads.layers[first],
        need_input_grad,
    )
}

fn forward_sample<T: Scalar>(
    params: &NetworkParams<T>,
    spec: &NetworkSpec,
    x: &[T],
    h: usize,
    w: usize,
    keep: bool,
) -> (Vec<T>, Option<Cache<T>>) {
    let slope = T::from_f64(spec.leaky_slope);
    let head = params.layers.len() - 1;
    if !spec.has_body() {
        let out = conv_forward(&params.layers[head], &[], h, w);
        let cache = keep.then(|| Cache {
            enc: Vec::new(),
            pool_idx: Vec::new(),
            dec: Vec::new(),
            head_input: Vec::new(),
        });
        return (out, cache);
    }

    let d = spec.depth;
    let mut enc = Vec::with_capacity(d + 1);
    let mut skips: Vec<Vec<T>> = Vec::with_capacity(d);
    let mut pool_idx = Vec::with_capacity(d);
    let mut cur = x.to_vec();
    let (mut ch, mut cw) = (h, w);
    for l in 0..=d {
        let (out, cache) = block_forward(params, spec.enc_layer(l, false), spec.enc_layer(l, true), cur, ch, cw, slope);
        enc.push(cache);
        if l < d {
            let (pooled, idx) = maxpool_forward(&out, spec.channels(l), ch, cw);
            skips.push(out);
            pool_idx.push(idx);
            cur = pooled;
            ch /= 2;
            cw /= 2;
        } else {
            cur = out;
        }
    }
    let mut dec: Vec<Option<BlockCache<T>>> = (0..d).map(|_| None).collect();
    for l in (0..d).rev() {
        let mut cat = upsample_forward(&cur, spec.channels(l + 1), ch, cw);
        ch *= 2;
        cw *= 2;
        cat.extend_from_slice(&skips[l]);
        let (out, cache) = block_forward(params, spec.dec_layer(l, false), spec.dec_layer(l, true), cat, ch, cw, slope);
        dec[l] = Some(cache);
        cur = out;
    }
    let out = conv_forward(&params.layers[head], &cur, h, w);
    let cache = keep.then_some(Cache {
        enc,
        pool_idx,
        dec,
        head_input: cur,
    });
    (out, cache)
}

fn backward_sample<T: Scalar>(
    params: &NetworkParams<T>,
    spec: &NetworkSpec,
    cache: &Cache<T>,
    d_out: &[T],
    h: usize,
    w: usize,
) -> NetworkParams<T> {
    let mut grads = NetworkParams::zeros(spec);
    let slope = T::from_f64(spec.leaky_slope);
    let head = params.layers.len() - 1;
    let d_head_in = conv_backward(&params.layers[head], &cache.head_input, h, w, d_out, &mut grads.layers[head], spec.has_body());
    if !spec.has_body() {
        return grads;
    }
    let d = spec.depth;
    let mut g = d_head_in.expect("input grad requested");
    let mut d_skips: Vec<Vec<T>> = Vec::with_capacity(d);
    for l in 0..d {
        let c = cache.dec[l].as_ref().expect("decoder cache");
        let d_cat = block_backward(params, &mut grads, spec.dec_layer(l, false), spec.dec_layer(l, true), c, g, slope, true)
            .expect("input grad requested");
        let up_len = spec.channels(l + 1) * c.h * c.w;
        d_skips.push(d_cat[up_len..].to_vec());
        g = upsample_backward(&d_cat[..up_len], spec.channels(l + 1), c.h / 2, c.w / 2);
    }
    for l in (0..=d).rev() {
        let c = &cache.enc[l];
        let d_in = block_backward(params, &mut grads, spec.enc_layer(l, false), spec.enc_layer(l, true), c, g, slope, l > 0);
        if l == 0 {
            break;
        }
        let prev = &cache.enc[l - 1];
        let mut d_prev = maxpool_backward(&d_in.expect("input grad requested"), &cache.pool_idx[l - 1], spec.channels(l - 1) * prev.h * prev.w);
        d_prev.iter_mut().zip(&d_skips[l - 1]).for_each(|(a, &b)| *a += b);
        g = d_prev;
    }
    grads
}

fn check_batch<T: Scalar>(params: &NetworkParams<T>, spec: &NetworkSpec, input: &Tensor4<T>) -> Result<()> {
    spec.validate()?;
    if !params.matches(spec) {
        return Err(Error::ShapeMismatch("parameters do not match the network spec".into()));
    }
    if input.channels != 1 {
        return Err(Error::ShapeMismatch(format!("expected 1 input channel, got {}", input.channels)));
    }
    spec.check_input(input.height, input.width)
}

/// Evaluates the network on a batch; output is `(B, 1, H, W)`.
pub fn forward<T: Scalar>(params: &NetworkParams<T>, spec: &NetworkSpec, input: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_batch(params, spec, input)?;
    let (h, w) = (input.height, input.width);
    let outs: Vec<Vec<T>> = (0..input.batch)
        .into_par_iter()
        .map(|b| forward_sample(params, spec, input.sample(b), h, w, false).0)
        .collect();
    Tensor4::new(input.batch, 1, h, w, outs.concat())
}

/// Elementwise loss averaged over every output pixel of the batch.
pub fn loss_and_grad<T: Scalar>(
    params: &NetworkParams<T>,
    spec: &NetworkSpec,
    input: &Tensor4<T>,
    target: &Tensor4<T>,
    loss: LossKind,
) -> Result<(f64, NetworkParams<T>)> {
    check_batch(params, spec, input)?;
    if target.batch != input.batch || target.channels != 1 || target.height != input.height || target.width != input.width {
        return Err(Error::ShapeMismatch(format!(
            "target ({},{},{},{}) does not match input ({},{},{},{})",
            target.batch, target.channels, target.height, target.width, input.batch, 1, input.height, input.width
        )));
    }
    let (h, w) = (input.height, input.width);
    let n = (input.batch * h * w) as f64;
    let inv_n = T::from_f64(1.0 / n);
    let per_sample: Vec<(f64, NetworkParams<T>)> = (0..input.batch)
        .into_par_iter()
        .map(|b| {
            let (out, cache) = forward_sample(params, spec, input.sample(b), h, w, true);
            let t = target.sample(b);
            let mut sum = 0.0;
            let d_out: Vec<T> = out
                .iter()
                .zip(t)
                .map(|(&o, &y)| {
                    let diff = o - y;
                    match loss {
                        LossKind::L1 => {
                            sum += diff.abs().as_f64();
                            if diff > T::zero() {
                                inv_n
                            } else if diff < T::zero() {
                                -inv_n
                            } else {
                                T::zero()
                            }
                        }
                        LossKind::L2 => {
                            sum += (diff * diff).as_f64();
                            T::from_f64(2.0) * diff * inv_n
                        }
                    }
                })
                .collect();
            let grads = backward_sample(params, spec, cache.as_ref().expect("cache kept"), &d_out, h, w);
            (sum, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = NetworkParams::zeros(spec);
    for (s, g) in &per_sample {
        total += s;
        grads.add_assign(g);
    }
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_tensor(b: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        let v = (0..b * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::new(b, 1, h, w, v).unwrap()
    }

    #[test]
    fn layer_shapes_default() {
        let spec = NetworkSpec::default();
        let shapes = spec.layer_shapes();
        assert_eq!(shapes.len(), 2 * 3 + 2 * 2 + 1);
        assert_eq!(shapes[0], (1, 16, 3));
        assert_eq!(shapes[4], (32, 64, 3));
        assert_eq!(shapes[6], (64 + 32, 32, 3));
        assert_eq!(shapes[8], (32 + 16, 16, 3));
        assert_eq!(*shapes.last().unwrap(), (16, 1, 1));
        assert_eq!(NetworkSpec::constant().layer_shapes(), vec![(0, 1, 1)]);
    }

    #[test]
    fn output_shape_and_zero_net() {
        let spec = NetworkSpec::new(2, 4);
        let mut rng = Rng::seed_from_u64(0);
        let p = NetworkParams::<f64>::init(&spec, &mut rng);
        let x = rand_tensor(3, 8, 12, 1);
        let y = forward(&p, &spec, &x).unwrap();
        assert_eq!((y.batch, y.channels, y.height, y.width), (3, 1, 8, 12));
        let z = forward(&NetworkParams::zeros(&spec), &spec, &x).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(matches!(forward(&p, &spec, &rand_tensor(1, 6, 8, 2)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn single_layer_impulse_reproduces_kernel() {
        // depth 0, base 1: conv(1->1) -> lrelu -> conv(1->1) -> lrelu -> 1x1.
        // Make the second conv and head identities so the output is lrelu(lrelu(conv_a(x))).
        let spec = NetworkSpec::new(0, 1);
        let mut p = NetworkParams::<f64>::zeros(&spec);
        p.layers[0].weight = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        p.layers[1].weight[4] = 1.0;
        p.layers[2].weight[0] = 1.0;
        let mut x = Tensor4::zeros(1, 1, 5, 5);
        x.values[2 * 5 + 2] = 1.0;
        let y = forward(&p, &spec, &x).unwrap();
        for ky in 0..3 {
            for kx in 0..3 {
                let want = p.layers[0].weight[ky * 3 + kx];
                assert!((y.values[(3 - ky) * 5 + (3 - kx)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn l2_zero_at_own_output() {
        let spec = NetworkSpec::new(1, 3);
        let p = NetworkParams::<f64>::init(&spec, &mut Rng::seed_from_u64(5));
        let x = rand_tensor(2, 4, 4, 6);
        let y = forward(&p, &spec, &x).unwrap();
        let (loss, g) = loss_and_grad(&p, &spec, &x, &y, LossKind::L2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_predictor_gradient_closed_form() {
        // out = b everywhere; L2 grad = 2 * mean(b - t).
        let spec = NetworkSpec::constant();
        let mut p = NetworkParams::<f64>::zeros(&spec);
        p.layers[0].bias[0] = 0.5;
        let x = Tensor4::zeros(1, 1, 1, 3);
        let t = Tensor4::new(1, 1, 1, 3, vec![1.0, 2.0, 9.0]).unwrap();
        let (loss, g) = loss_and_grad(&p, &spec, &x, &t, LossKind::L2).unwrap();
        let expect_loss = (0.25 + 2.25 + 72.25) / 3.0;
        assert!((loss - expect_loss).abs() < 1e-12);
        assert!((g.layers[0].bias[0] - 2.0 * (0.5 - 4.0)).abs() < 1e-12);
        let (_, g1) = loss_and_grad(&p, &spec, &x, &t, LossKind::L1).unwrap();
        assert!((g1.layers[0].bias[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_head_least_squares_gradient() {
        // Single 1x1 linear map y = w x + b on scalar data: dL/dw = 2 mean((wx+b-t) x).
        let spec = NetworkSpec::new(0, 1);
        let mut p = NetworkParams::<f64>::zeros(&spec);
        // identity body on positive inputs
        p.layers[0].weight[4] = 1.0;
        p.layers[1].weight[4] = 1.0;
        p.layers[2].weight[0] = 0.7;
        p.layers[2].bias[0] = -0.2;
        let xs = [0.5, 1.5, 2.0];
        let ts = [1.0, 0.0, 3.0];
        let x = Tensor4::new(3, 1, 1, 1, xs.to_vec()).unwrap();
        let t = Tensor4::new(3, 1, 1, 1, ts.to_vec()).unwrap();
        let (_, g) = loss_and_grad(&p, &spec, &x, &t, LossKind::L2).unwrap();
        let r: Vec<f64> = xs.iter().zip(&ts).map(|(x, t)| 0.7 * x - 0.2 - t).collect();
        let dw = 2.0 * r.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>() / 3.0;
        let db = 2.0 * r.iter().sum::<f64>() / 3.0;
        assert!((g.layers[2].weight[0] - dw).abs() < 1e-12);
        assert!((g.layers[2].bias[0] - db).abs() < 1e-12);
    }

    #[test]
    fn flat_indexing_round_trip() {
        let spec = NetworkSpec::new(1, 2);
        let mut p = NetworkParams::<f64>::init(&spec, &mut Rng::seed_from_u64(9));
        let flat = p.flat();
        assert_eq!(flat.len(), p.num_params());
        for (i, &v) in flat.iter().enumerate() {
            assert_eq!(p.get_flat(i), v);
        }
        p.set_flat(flat.len() - 1, 42.0);
        assert_eq!(p.layers.last().unwrap().bias[0], 42.0);
    }
}
