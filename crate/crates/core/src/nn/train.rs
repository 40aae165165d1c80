use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::{loss_and_grad, NetworkParams, NetworkSpec, Scalar, Tensor4};
use crate::error::{Error, Result};
use crate::image::{check_dims, Image};
use crate::rng::{item_stream, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(format!("unknown loss `{other}` (expected l1 or l2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Side of the square training crops.
    pub patch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::L1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            batch_size: 8,
            patch_size: 64,
            steps: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(spec.alignment()) {
            return Err(Error::Validation(format!(
                "patch_size {} must be a positive multiple of 2^depth = {}",
                self.patch_size,
                spec.alignment()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Validation("moment decays must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Supplies `(input, target)` pairs. `rng` is derived from the training seed,
/// the step and the batch slot, so sources that draw only from it are
/// reproducible.
pub trait PairSource {
    fn pair(&mut self, step: usize, slot: usize, rng: &mut Rng) -> Result<(Image, Image)>;
}

impl<F> PairSource for F
where
    F: FnMut(usize, usize, &mut Rng) -> Result<(Image, Image)>,
{
    fn pair(&mut self, step: usize, slot: usize, rng: &mut Rng) -> Result<(Image, Image)> {
        self(step, slot, rng)
    }
}

/// Crops the same `patch x patch` window from both images at a random position.
pub fn crop_aligned(input: &Image, target: &Image, patch: usize, rng: &mut Rng) -> Result<(Image, Image)> {
    check_dims(input.dims(), target.dims())?;
    let (h, w) = input.dims();
    if h < patch || w < patch {
        return Err(Error::ShapeMismatch(format!(
            "training image {h}x{w} is smaller than patch {patch}"
        )));
    }
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    Ok((input.crop(top, left, patch, patch)?, target.crop(top, left, patch, patch)?))
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        let n = params.num_params();
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update.
pub fn adam_step<T: Scalar>(params: &mut NetworkParams<T>, grads: &NetworkParams<T>, state: &mut AdamState<T>, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = T::from_f64(cfg.learning_rate * c2.sqrt() / c1);
    let eps = T::from_f64(cfg.epsilon * c2.sqrt());
    let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
    let one = T::one();
    let grad_iter = grads.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias));
    let param_iter = params
        .layers
        .iter_mut()
        .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()));
    for (((p, &g), m), v) in param_iter.zip(grad_iter).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p -= lr * *m / (v.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Trains from a fresh He-uniform initialization.
pub fn train<T: Scalar>(source: &mut impl PairSource, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(source, spec, cfg, None, |_, _, _| {})
}

/// Like [`train`], optionally resuming from `init`, calling `observer(step,
/// loss, params)` after every update.
pub fn train_with<T: Scalar>(
    source: &mut impl PairSource,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    init: Option<NetworkParams<T>>,
    mut observer: impl FnMut(usize, f64, &NetworkParams<T>),
) -> Result<TrainOutcome<T>> {
    spec.validate()?;
    cfg.validate(spec)?;
    let mut params = match init {
        Some(p) if p.matches(spec) => p,
        Some(_) => return Err(Error::ShapeMismatch("initial parameters do not match the network spec".into())),
        None => NetworkParams::init(spec, &mut stream(cfg.seed, "init")),
    };
    let mut adam = AdamState::new(&params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for slot in 0..cfg.batch_size {
            let mut rng = item_stream(cfg.seed, "pairs", step as u64, slot as u64);
            let (x, y) = source.pair(step, slot, &mut rng)?;
            let (x, y) = crop_aligned(&x, &y, cfg.patch_size, &mut rng)?;
            inputs.push(x);
            targets.push(y);
        }
        let input = Tensor4::<T>::from_images(&inputs)?;
        let target = Tensor4::<T>::from_images(&targets)?;
        let (loss, grads) = loss_and_grad(&params, spec, &input, &target, cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        adam_step(&mut params, &grads, &mut adam, cfg);
        losses.push(loss);
        observer(step, loss, &params);
    }
    Ok(TrainOutcome { params, losses })
}
