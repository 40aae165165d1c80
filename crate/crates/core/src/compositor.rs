//! Scene synthesis under the additive layer model `x = target + clutter + background`
//! and Noise2Noise-style training pairs built from it.
//!
//! All layer intensities are snapped to the
//! [`DYADIC_QUANTUM`](crate::image::DYADIC_QUANTUM) grid when they
//! are created, so the composite equals the sum of its layers exactly in any
//! evaluation order. Nothing is clamped here; clamping happens on PNG export.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::{quantize_dyadic, BBox, BinaryMask, Image};
use crate::imageio::{read_imgf, write_atomic, write_imgf};
use crate::rng::Rng;

/// Object category: the class to keep or everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Target,
    Clutter,
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectClass::Target => "target",
            ObjectClass::Clutter => "clutter",
        })
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "target" => Ok(ObjectClass::Target),
            "clutter" => Ok(ObjectClass::Clutter),
            other => Err(format!("unknown object class `{other}`")),
        }
    }
}

/// Masked patch of one isolated object.
#[derive(Debug, Clone, PartialEq)]
pub struct CropExemplar {
    pixels: Image,
    mask: BinaryMask,
    class: ObjectClass,
    source_id: String,
}

impl CropExemplar {
    /// Validates that `pixels` vanish outside `mask` and that `mask` is nonempty.
    pub fn new(
        pixels: Image,
        mask: BinaryMask,
        class: ObjectClass,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        crate::image::check_dims(pixels.dims(), mask.dims())?;
        if mask.is_all_false() {
            return Err(Error::DegenerateCrop);
        }
        if pixels
            .pixels()
            .iter()
            .zip(mask.bits())
            .any(|(&v, &m)| !m && v != 0.0)
        {
            return Err(Error::InvalidArgument(
                "crop pixels must be zero outside the mask".into(),
            ));
        }
        Ok(Self {
            pixels,
            mask,
            class,
            source_id: source_id.into(),
        })
    }

    /// Crop whose support is its positive pixels.
    pub fn from_pixels(pixels: Image, class: ObjectClass, source_id: impl Into<String>) -> Result<Self> {
        let mask = pixels.threshold(0.0);
        let pixels = pixels.map(|v| if v > 0.0 { v } else { 0.0 });
        Self::new(pixels, mask, class, source_id)
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_class(mut self, class: ObjectClass) -> Self {
        self.class = class;
        self
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min <= self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Validation(format!(
                "{name}: empty range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Inclusive integer range for object counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub const fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Ranges for per-crop augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Rotation angle in degrees.
    pub rotation: UniformRange,
    pub hflip: bool,
    pub vflip: bool,
    /// Resize factor.
    pub scale: UniformRange,
    /// Multiplicative intensity constant.
    pub gain: UniformRange,
    /// Subtracted intensity constant.
    pub bias: UniformRange,
    /// Constant written into zero pixels of background patches.
    pub background_fill: UniformRange,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: UniformRange::new(0.0, 360.0),
            hflip: true,
            vflip: true,
            scale: UniformRange::new(0.8, 1.2),
            gain: UniformRange::new(0.8, 1.2),
            bias: UniformRange::new(0.0, 0.05),
            background_fill: UniformRange::new(0.0, 0.1),
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            rotation: UniformRange::fixed(0.0),
            hflip: false,
            vflip: false,
            scale: UniformRange::fixed(1.0),
            gain: UniformRange::fixed(1.0),
            bias: UniformRange::fixed(0.0),
            background_fill: UniformRange::fixed(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation.validate("rotation")?;
        self.scale.validate("scale")?;
        self.gain.validate("gain")?;
        self.bias.validate("bias")?;
        self.background_fill.validate("background_fill")?;
        if self.scale.min <= 0.0 {
            return Err(Error::Validation("scale range must be positive".into()));
        }
        Ok(())
    }
}

/// Concrete augmentation drawn from an [`AugmentConfig`].
///
/// Flips apply first, then rotation (clockwise in row/column coordinates) and
/// scaling about the crop center, then `max(0, gain * v - bias)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f64,
    pub gain: f64,
    pub bias: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            hflip: false,
            vflip: false,
            scale: 1.0,
            gain: 1.0,
            bias: 0.0,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let angle_deg = cfg.rotation.sample(rng);
        let hflip = cfg.hflip && rng.random_bool(0.5);
        let vflip = cfg.vflip && rng.random_bool(0.5);
        let scale = cfg.scale.sample(rng);
        let gain = cfg.gain.sample(rng);
        let bias = cfg.bias.sample(rng);
        Self {
            angle_deg,
            hflip,
            vflip,
            scale,
            gain,
            bias,
        }
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Applies a concrete augmentation. Pixels resample bilinearly, the mask by
/// nearest neighbor; the output mask is re-derived as the positive pixels.
pub fn apply_augment(crop: &CropExemplar, p: &AugmentParams) -> Result<CropExemplar> {
    if !(p.scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {}", p.scale)));
    }
    let (h, w) = crop.pixels.dims();
    let theta = p.angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let out_h = ((p.scale * (cos.abs() * h as f64 + sin.abs() * w as f64)) - 1e-6)
        .ceil()
        .max(1.0) as usize;
    let out_w = ((p.scale * (sin.abs() * h as f64 + cos.abs() * w as f64)) - 1e-6)
        .ceil()
        .max(1.0) as usize;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (oy, ox) = ((out_h as f64 - 1.0) / 2.0, (out_w as f64 - 1.0) / 2.0);

    let src = &crop.pixels;
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            src.get(r as usize, c as usize) as f64
        }
    };

    let mut pixels = Image::zeros(out_h, out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let dr = (r as f64 - oy) / p.scale;
            let dc = (c as f64 - ox) / p.scale;
            let mut sr = snap(cos * dr - sin * dc + cy);
            let mut sc = snap(sin * dr + cos * dc + cx);
            if p.vflip {
                sr = h as f64 - 1.0 - sr;
            }
            if p.hflip {
                sc = w as f64 - 1.0 - sc;
            }
            let nr = (sr + 0.5).floor() as isize;
            let nc = (sc + 0.5).floor() as isize;
            let inside = nr >= 0
                && nc >= 0
                && nr < h as isize
                && nc < w as isize
                && crop.mask.get(nr as usize, nc as usize);
            if !inside {
                continue;
            }
            let r0 = sr.floor();
            let c0 = sc.floor();
            let fr = sr - r0;
            let fc = sc - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = (1.0 - fr) * ((1.0 - fc) * sample(r0, c0) + fc * sample(r0, c0 + 1))
                + fr * ((1.0 - fc) * sample(r0 + 1, c0) + fc * sample(r0 + 1, c0 + 1));
            let out = quantize_dyadic((p.gain * v - p.bias).max(0.0) as f32);
            pixels.set(r, c, out);
        }
    }
    let mask = pixels.threshold(0.0);
    if mask.is_all_false() {
        return Err(Error::DegenerateCrop);
    }
    Ok(CropExemplar {
        pixels,
        mask,
        class: crop.class,
        source_id: crop.source_id.clone(),
    })
}

/// Samples augmentation parameters from `cfg` and applies them.
pub fn augment_crop(
    crop: &CropExemplar,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(CropExemplar, AugmentParams)> {
    let params = AugmentParams::sample(cfg, rng);
    Ok((apply_augment(crop, &params)?, params))
}

/// Record of one accepted object placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub source_id: String,
    pub class: ObjectClass,
    pub transform: AugmentParams,
    pub top: usize,
    pub left: usize,
    /// Object support in crop-local coordinates.
    pub mask: BinaryMask,
}

impl Placement {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.top, self.left, self.mask.height(), self.mask.width())
    }

    /// Tight box around the placed support.
    pub fn support_bbox(&self) -> BBox {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for r in 0..self.mask.height() {
            for c in 0..self.mask.width() {
                if self.mask.get(r, c) {
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                }
            }
        }
        BBox::new(self.top + r0, self.left + c0, r1 - r0 + 1, c1 - c0 + 1)
    }

    /// Mask center of mass in canvas coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for r in 0..self.mask.height() {
            for c in 0..self.mask.width() {
                if self.mask.get(r, c) {
                    sr += r as f64;
                    sc += c as f64;
                    n += 1;
                }
            }
        }
        (self.top as f64 + sr / n as f64, self.left as f64 + sc / n as f64)
    }

    pub fn canvas_mask(&self, height: usize, width: usize) -> BinaryMask {
        let mut m = BinaryMask::new(height, width);
        for r in 0..self.mask.height() {
            for c in 0..self.mask.width() {
                if self.mask.get(r, c) {
                    m.set(self.top + r, self.left + c, true);
                }
            }
        }
        m
    }
}

/// Placement options shared by every object of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceOptions {
    /// Largest accepted fraction of the new object's mask covered by earlier objects.
    pub max_overlap: f64,
    /// Rejections per object before it is skipped.
    pub max_attempts: usize,
    pub augment: AugmentConfig,
}

impl Default for PlaceOptions {
    fn default() -> Self {
        Self {
            max_overlap: 0.5,
            max_attempts: 50,
            augment: AugmentConfig::default(),
        }
    }
}

/// A placed object together with its augmented appearance.
#[derive(Debug, Clone)]
pub(crate) struct PlacedObject {
    pub crop: CropExemplar,
    pub placement: Placement,
}

fn stamp(layer: &mut Image, crop: &CropExemplar, top: usize, left: usize) {
    let (h, w) = crop.pixels.dims();
    for r in 0..h {
        for c in 0..w {
            if crop.mask.get(r, c) {
                let v = layer.get(top + r, left + c) + crop.pixels.get(r, c);
                layer.set(top + r, left + c, v);
            }
        }
    }
}

pub(crate) fn place_objects(
    canvas: (usize, usize),
    pool: &[CropExemplar],
    n_objects: usize,
    opts: &PlaceOptions,
    rng: &mut Rng,
) -> Result<(Image, Vec<PlacedObject>)> {
    let (height, width) = canvas;
    let mut layer = Image::zeros(height, width);
    let mut placed = Vec::new();
    if n_objects == 0 {
        return Ok((layer, placed));
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool("crop pool"));
    }
    let mut occupied = BinaryMask::new(height, width);
    for _ in 0..n_objects {
        for _attempt in 0..opts.max_attempts {
            let source = &pool[rng.random_range(0..pool.len())];
            let (crop, transform) = match augment_crop(source, &opts.augment, rng) {
                Ok(v) => v,
                Err(Error::DegenerateCrop) => continue,
                Err(e) => return Err(e),
            };
            let (ch, cw) = crop.pixels.dims();
            if ch > height || cw > width {
                continue;
            }
            let top = rng.random_range(0..=height - ch);
            let left = rng.random_range(0..=width - cw);
            let mut area = 0usize;
            let mut overlap = 0usize;
            for r in 0..ch {
                for c in 0..cw {
                    if crop.mask.get(r, c) {
                        area += 1;
                        if occupied.get(top + r, left + c) {
                            overlap += 1;
                        }
                    }
                }
            }
            if overlap as f64 > opts.max_overlap * area as f64 {
                continue;
            }
            stamp(&mut layer, &crop, top, left);
            for r in 0..ch {
                for c in 0..cw {
                    if crop.mask.get(r, c) {
                        occupied.set(top + r, left + c, true);
                    }
                }
            }
            let placement = Placement {
                source_id: crop.source_id.clone(),
                class: crop.class,
                transform,
                top,
                left,
                mask: crop.mask.clone(),
            };
            placed.push(PlacedObject { crop, placement });
            break;
        }
    }
    Ok((layer, placed))
}

/// Places up to `n_objects` augmented crops on an empty canvas.
///
/// Each object is drawn with replacement, positioned uniformly with the whole
/// crop inside the canvas, and accepted only if at most `max_overlap` of its
/// mask covers earlier objects. Overlapping intensities add. An object that is
/// rejected `max_attempts` times is skipped.
pub fn place_layer(
    canvas: (usize, usize),
    pool: &[CropExemplar],
    n_objects: usize,
    opts: &PlaceOptions,
    rng: &mut Rng,
) -> Result<(Image, Vec<Placement>)> {
    let (layer, placed) = place_objects(canvas, pool, n_objects, opts, rng)?;
    Ok((layer, placed.into_iter().map(|p| p.placement).collect()))
}

/// Background canvas from a patch pool: the selected patch is tiled or
/// cropped to size and its zero pixels get one constant drawn from `fill`.
pub fn make_background(
    patches: &[Image],
    fill: UniformRange,
    canvas: (usize, usize),
    rng: &mut Rng,
) -> Result<Image> {
    if patches.is_empty() {
        return Err(Error::EmptyPool("background patches"));
    }
    let patch = &patches[rng.random_range(0..patches.len())];
    let (ph, pw) = patch.dims();
    if ph == 0 || pw == 0 {
        return Err(Error::InvalidArgument("empty background patch".into()));
    }
    let (h, w) = canvas;
    let r0 = if ph >= h { rng.random_range(0..=ph - h) } else { rng.random_range(0..ph) };
    let c0 = if pw >= w { rng.random_range(0..=pw - w) } else { rng.random_range(0..pw) };
    let constant = quantize_dyadic(fill.sample(rng) as f32);
    Ok(Image::from_fn(h, w, |r, c| {
        let v = patch.get((r0 + r) % ph, (c0 + c) % pw);
        if v == 0.0 {
            constant
        } else {
            quantize_dyadic(v)
        }
    }))
}

/// Parameters for one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub n_target: CountRange,
    pub n_clutter: CountRange,
    pub place: PlaceOptions,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            n_target: CountRange::new(2, 6),
            n_clutter: CountRange::new(2, 6),
            place: PlaceOptions::default(),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation("scene dimensions must be positive".into()));
        }
        if self.n_target.min > self.n_target.max || self.n_clutter.min > self.n_clutter.max {
            return Err(Error::Validation("object count range is empty".into()));
        }
        if !(0.0..1.0).contains(&self.place.max_overlap) {
            return Err(Error::Validation("max_overlap must lie in [0, 1)".into()));
        }
        self.place.augment.validate()
    }
}

/// Crop and background pools feeding the compositor.
#[derive(Debug, Clone, Default)]
pub struct CropPools {
    pub target: Vec<CropExemplar>,
    pub clutter: Vec<CropExemplar>,
    pub backgrounds: Vec<Image>,
}

/// A composed scene with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayers {
    pub target_layer: Image,
    pub clutter_layer: Image,
    pub background: Image,
    pub composite: Image,
    pub placements: Vec<Placement>,
}

impl SceneLayers {
    /// Sums the layers; placement records are taken as given.
    pub fn assemble(
        target_layer: Image,
        clutter_layer: Image,
        background: Image,
        placements: Vec<Placement>,
    ) -> Result<Self> {
        let composite = target_layer.add(&clutter_layer)?.add(&background)?;
        Ok(Self {
            target_layer,
            clutter_layer,
            background,
            composite,
            placements,
        })
    }

    /// Union of placed target masks.
    pub fn target_mask(&self) -> BinaryMask {
        self.class_mask(ObjectClass::Target)
    }

    pub fn class_mask(&self, class: ObjectClass) -> BinaryMask {
        let (h, w) = self.composite.dims();
        let mut m = BinaryMask::new(h, w);
        for p in self.placements.iter().filter(|p| p.class == class) {
            for r in 0..p.mask.height() {
                for c in 0..p.mask.width() {
                    if p.mask.get(r, c) {
                        m.set(p.top + r, p.left + c, true);
                    }
                }
            }
        }
        m
    }

    pub fn placements_of(&self, class: ObjectClass) -> impl Iterator<Item = &Placement> {
        self.placements.iter().filter(move |p| p.class == class)
    }

    /// Largest |composite - target - clutter - background| over all pixels.
    pub fn additivity_residual(&self) -> f32 {
        self.composite
            .pixels()
            .iter()
            .zip(self.target_layer.pixels())
            .zip(self.clutter_layer.pixels())
            .zip(self.background.pixels())
            .map(|(((&x, &t), &u), &b)| (x - t - u - b).abs())
            .fold(0.0, f32::max)
    }
}

fn with_class(mut placements: Vec<Placement>, class: ObjectClass) -> Vec<Placement> {
    for p in &mut placements {
        p.class = class;
    }
    placements
}

fn build_layer(
    pool: &[CropExemplar],
    counts: CountRange,
    class: ObjectClass,
    params: &SceneParams,
    rng: &mut Rng,
) -> Result<(Image, Vec<Placement>)> {
    let n = counts.sample(rng);
    let (layer, placements) = place_layer((params.height, params.width), pool, n, &params.place, rng)?;
    Ok((layer, with_class(placements, class)))
}

/// Builds target, clutter and background layers and sums them.
pub fn compose_scene(pools: &CropPools, params: &SceneParams, rng: &mut Rng) -> Result<SceneLayers> {
    let (target, mut placements) = build_layer(&pools.target, params.n_target, ObjectClass::Target, params, rng)?;
    let (clutter, pc) = build_layer(&pools.clutter, params.n_clutter, ObjectClass::Clutter, params, rng)?;
    let background = make_background(
        &pools.backgrounds,
        params.place.augment.background_fill,
        (params.height, params.width),
        rng,
    )?;
    placements.extend(pc);
    SceneLayers::assemble(target, clutter, background, placements)
}

/// Which layers a training pair shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Shared target layer; clutter and background resampled. Learns to keep targets.
    TargetPreserving,
    /// Shared clutter and background; target layer resampled. Learns to remove targets.
    TargetRemoving,
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairMode::TargetPreserving => "preserve",
            PairMode::TargetRemoving => "remove",
        })
    }
}

impl FromStr for PairMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "preserve" | "target-preserving" => Ok(PairMode::TargetPreserving),
            "remove" | "target-removing" => Ok(PairMode::TargetRemoving),
            other => Err(format!("unknown pair mode `{other}`")),
        }
    }
}

/// Input/target pair with the ground truth of both images.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: Image,
    pub target: Image,
    pub mode: PairMode,
    pub truth: (SceneLayers, SceneLayers),
}

/// Composes two scenes that share the layers `mode` prescribes.
pub fn make_training_pair(
    mode: PairMode,
    pools: &CropPools,
    params: &SceneParams,
    rng: &mut Rng,
) -> Result<TrainingPair> {
    let canvas = (params.height, params.width);
    let fill = params.place.augment.background_fill;
    let (a, b) = match mode {
        PairMode::TargetPreserving => {
            let (target, pt) = build_layer(&pools.target, params.n_target, ObjectClass::Target, params, rng)?;
            let scene = |rng: &mut Rng| -> Result<SceneLayers> {
                let (clutter, pc) =
                    build_layer(&pools.clutter, params.n_clutter, ObjectClass::Clutter, params, rng)?;
                let bg = make_background(&pools.backgrounds, fill, canvas, rng)?;
                let mut placements = pt.clone();
                placements.extend(pc);
                SceneLayers::assemble(target.clone(), clutter, bg, placements)
            };
            let a = scene(rng)?;
            (a, scene(rng)?)
        }
        PairMode::TargetRemoving => {
            let (clutter, pc) = build_layer(&pools.clutter, params.n_clutter, ObjectClass::Clutter, params, rng)?;
            let bg = make_background(&pools.backgrounds, fill, canvas, rng)?;
            let scene = |rng: &mut Rng| -> Result<SceneLayers> {
                let (target, mut placements) =
                    build_layer(&pools.target, params.n_target, ObjectClass::Target, params, rng)?;
                placements.extend(pc.iter().cloned());
                SceneLayers::assemble(target, clutter.clone(), bg.clone(), placements)
            };
            let a = scene(rng)?;
            (a, scene(rng)?)
        }
    };
    Ok(TrainingPair {
        input: a.composite.clone(),
        target: b.composite.clone(),
        mode,
        truth: (a, b),
    })
}

/// How non-static objects move between video frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionModel {
    /// Uniformly random new position every frame.
    Resample,
    /// Integer steps drawn uniformly from `[-step, step]` per axis, clamped to the canvas.
    RandomWalk { step: usize },
    /// No object moves.
    Static,
}

/// Parameters for a synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoParams {
    pub n_objects: usize,
    /// The first `static_objects` objects keep their position for the whole video.
    pub static_objects: usize,
    pub motion: MotionModel,
    pub place: PlaceOptions,
}

/// A static background with moving targets, plus per-frame ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub background: Image,
    pub frames: Vec<Image>,
    pub target_layers: Vec<Image>,
    pub placements: Vec<Vec<Placement>>,
}

impl SyntheticVideo {
    /// Consecutive-frame pairs; each is a valid target-removing pair.
    pub fn consecutive_pairs(&self) -> impl Iterator<Item = (&Image, &Image)> {
        self.frames.windows(2).map(|w| (&w[0], &w[1]))
    }
}

/// Renders a video of target objects moving over a fixed background.
///
/// Object appearance is fixed per video; positions follow `params.motion`.
pub fn make_synthetic_video(
    background: &Image,
    target_pool: &[CropExemplar],
    n_frames: usize,
    params: &VideoParams,
    rng: &mut Rng,
) -> Result<SyntheticVideo> {
    if n_frames < 2 {
        return Err(Error::InvalidArgument(format!("a video needs >= 2 frames, got {n_frames}")));
    }
    let canvas = background.dims();
    let background = background.quantize_dyadic();
    let (_, mut objects) = place_objects(canvas, target_pool, params.n_objects, &params.place, rng)?;
    for o in &mut objects {
        o.placement.class = ObjectClass::Target;
    }

    let mut frames = Vec::with_capacity(n_frames);
    let mut layers = Vec::with_capacity(n_frames);
    let mut records = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        if t > 0 {
            // Static objects first, then each moving object in index order,
            // re-positioned subject to the overlap cap.
            let mut occupied = BinaryMask::new(canvas.0, canvas.1);
            for o in objects.iter().take(params.static_objects) {
                occupied = occupied.union(&o.placement.canvas_mask(canvas.0, canvas.1))?;
            }
            for o in objects.iter_mut().skip(params.static_objects) {
                let (ch, cw) = o.crop.pixels.dims();
                let (max_top, max_left) = (canvas.0 - ch, canvas.1 - cw);
                let mut best: Option<(usize, usize, usize)> = None;
                for _attempt in 0..params.place.max_attempts.max(1) {
                    let (top, left) = match params.motion {
                        MotionModel::Static => (o.placement.top, o.placement.left),
                        MotionModel::Resample => (rng.random_range(0..=max_top), rng.random_range(0..=max_left)),
                        MotionModel::RandomWalk { step } => {
                            let s = step as i64;
                            let dr = rng.random_range(-s..=s) as isize;
                            let dc = rng.random_range(-s..=s) as isize;
                            (
                                (o.placement.top as isize + dr).clamp(0, max_top as isize) as usize,
                                (o.placement.left as isize + dc).clamp(0, max_left as isize) as usize,
                            )
                        }
                    };
                    let overlap = mask_overlap(&o.crop.mask, &occupied, top, left);
                    if best.is_none_or(|(b, _, _)| overlap < b) {
                        best = Some((overlap, top, left));
                    }
                    if overlap as f64 <= params.place.max_overlap * o.crop.mask.count() as f64
                        || params.motion == MotionModel::Static
                    {
                        break;
                    }
                }
                let (_, top, left) = best.expect("at least one attempt");
                o.placement.top = top;
                o.placement.left = left;
                occupied = occupied.union(&o.placement.canvas_mask(canvas.0, canvas.1))?;
            }
        }
        let mut layer = Image::zeros(canvas.0, canvas.1);
        for o in &objects {
            stamp(&mut layer, &o.crop, o.placement.top, o.placement.left);
        }
        frames.push(layer.add(&background)?);
        layers.push(layer);
        records.push(objects.iter().map(|o| o.placement.clone()).collect());
    }
    Ok(SyntheticVideo {
        background,
        frames,
        target_layers: layers,
        placements: records,
    })
}

/// Mask pixels of a crop at (`top`, `left`) that land on `occupied`.
fn mask_overlap(mask: &BinaryMask, occupied: &BinaryMask, top: usize, left: usize) -> usize {
    let (ch, cw) = mask.dims();
    let mut n = 0;
    for r in 0..ch {
        for c in 0..cw {
            n += (mask.get(r, c) && occupied.get(top + r, left + c)) as usize;
        }
    }
    n
}

/// Writes crops and background patches as IMGF files plus `manifest.tsv`
/// (`id<TAB>class<TAB>pixels_path<TAB>mask_path`, paths relative to `dir`).
/// Background patches use class `background` and mask path `-`.
pub fn write_pool(dir: &Path, pools: &CropPools) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, crop) in pools.target.iter().chain(&pools.clutter).enumerate() {
        let pix = format!("crop_{i:05}.imgf");
        let mask = format!("crop_{i:05}_mask.imgf");
        write_imgf(crop.pixels(), dir.join(&pix))?;
        write_imgf(&crop.mask().to_image(), dir.join(&mask))?;
        manifest.push_str(&format!("{}\t{}\t{pix}\t{mask}\n", crop.source_id(), crop.class()));
    }
    for (i, bg) in pools.backgrounds.iter().enumerate() {
        let pix = format!("background_{i:05}.imgf");
        write_imgf(bg, dir.join(&pix))?;
        manifest.push_str(&format!("bg{i}\tbackground\t{pix}\t-\n"));
    }
    let path = dir.join("manifest.tsv");
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Loads pools from a manifest written by [`write_pool`] (or by hand).
pub fn read_pool(manifest: &Path) -> Result<CropPools> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut pools = CropPools::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                "manifest",
                manifest,
                format!("line {}: expected 4 tab-separated fields", lineno + 1),
            ));
        }
        let pixels = read_imgf(base.join(fields[2]))?;
        if fields[1] == "background" {
            pools.backgrounds.push(pixels);
            continue;
        }
        let class: ObjectClass = fields[1]
            .parse()
            .map_err(|m: String| Error::format("manifest", manifest, format!("line {}: {m}", lineno + 1)))?;
        let mask_img = read_imgf(base.join(fields[3]))?;
        let mask = mask_img.threshold(0.5);
        let crop = CropExemplar::new(pixels, mask, class, fields[0])
            .map_err(|e| Error::format("manifest", manifest, format!("line {}: {e}", lineno + 1)))?;
        match class {
            ObjectClass::Target => pools.target.push(crop),
            ObjectClass::Clutter => pools.clutter.push(crop),
        }
    }
    Ok(pools)
}

fn placement_line(tag: &str, p: &Placement) -> String {
    let t = &p.transform;
    format!(
        "{tag}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        p.source_id,
        p.class,
        p.top,
        p.left,
        p.mask.height(),
        p.mask.width(),
        p.mask.count(),
        t.angle_deg,
        t.hflip as u8,
        t.vflip as u8,
        t.scale,
        t.gain,
        t.bias
    )
}

/// Header of the plain-text placement log.
pub const PLACEMENT_LOG_HEADER: &str =
    "# image\tsource_id\tclass\ttop\tleft\theight\twidth\tmask_pixels\tangle_deg\thflip\tvflip\tscale\tgain\tbias\n";

/// Dumps a pair: input/target plus every ground-truth layer as IMGF, and the
/// placement records appended to `placements.log`.
pub fn write_pair(dir: &Path, index: usize, pair: &TrainingPair) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("pair_{index:05}");
    write_imgf(&pair.input, dir.join(format!("{stem}_input.imgf")))?;
    write_imgf(&pair.target, dir.join(format!("{stem}_target.imgf")))?;
    let mut log = String::new();
    for (side, scene) in [("a", &pair.truth.0), ("b", &pair.truth.1)] {
        write_imgf(&scene.target_layer, dir.join(format!("{stem}_{side}_target_layer.imgf")))?;
        write_imgf(&scene.clutter_layer, dir.join(format!("{stem}_{side}_clutter_layer.imgf")))?;
        write_imgf(&scene.background, dir.join(format!("{stem}_{side}_background.imgf")))?;
        for p in &scene.placements {
            log.push_str(&placement_line(&format!("{stem}_{side}"), p));
        }
    }
    write_atomic(&dir.join(format!("{stem}_placements.log")), format!("{PLACEMENT_LOG_HEADER}{log}").as_bytes())
}

/// Reads every `pair_*_input.imgf` / `pair_*_target.imgf` couple in `dir`, sorted by index.
pub fn read_pairs(dir: &Path) -> Result<Vec<(Image, Image)>> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("pair_") && n.ends_with("_input.imgf"))
        })
        .collect();
    inputs.sort();
    inputs
        .into_iter()
        .map(|input| {
            let name = input.file_name().unwrap().to_string_lossy().replace("_input.imgf", "_target.imgf");
            let target = input.with_file_name(name);
            Ok((read_imgf(&input)?, read_imgf(&target)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn square_crop(side: usize, v: f32, class: ObjectClass) -> CropExemplar {
        CropExemplar::from_pixels(Image::filled(side, side, v), class, "sq").unwrap()
    }

    fn asymmetric() -> CropExemplar {
        let px = Image::from_vec(3, 2, vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5]).unwrap();
        CropExemplar::from_pixels(px, ObjectClass::Target, "asym").unwrap()
    }

    #[test]
    fn crop_invariants_enforced() {
        let px = Image::from_vec(1, 2, vec![1.0, 0.5]).unwrap();
        let mask = BinaryMask::from_vec(1, 2, vec![true, false]).unwrap();
        assert!(CropExemplar::new(px, mask, ObjectClass::Target, "x").is_err());
        assert!(matches!(
            CropExemplar::from_pixels(Image::zeros(2, 2), ObjectClass::Target, "z"),
            Err(Error::DegenerateCrop)
        ));
    }

    #[test]
    fn identity_augment_is_noop() {
        let c = asymmetric();
        assert_eq!(apply_augment(&c, &AugmentParams::identity()).unwrap(), c);
        let (out, p) = augment_crop(&c, &AugmentConfig::identity(), &mut rng(1)).unwrap();
        assert_eq!(p, AugmentParams::identity());
        assert_eq!(out, c);
    }

    #[test]
    fn double_hflip_restores() {
        let c = asymmetric();
        let p = AugmentParams { hflip: true, ..AugmentParams::identity() };
        let once = apply_augment(&c, &p).unwrap();
        assert_ne!(once, c);
        assert_eq!(once.pixels().get(0, 0), 0.5);
        assert_eq!(apply_augment(&once, &p).unwrap(), c);
    }

    #[test]
    fn rotation_90_matches_index_permutation() {
        let c = asymmetric();
        let p = AugmentParams { angle_deg: 90.0, ..AugmentParams::identity() };
        let out = apply_augment(&c, &p).unwrap();
        let rows = c.pixels().height();
        assert_eq!(out.pixels().dims(), (2, 3));
        for r in 0..3 {
            for col in 0..2 {
                assert_eq!(out.pixels().get(col, rows - 1 - r), c.pixels().get(r, col));
            }
        }
    }

    #[test]
    fn gain_and_bias_rederive_mask() {
        let px = Image::from_vec(1, 3, vec![0.25, 0.5, 1.0]).unwrap();
        let c = CropExemplar::from_pixels(px, ObjectClass::Clutter, "g").unwrap();
        let p = AugmentParams { gain: 2.0, bias: 0.5, ..AugmentParams::identity() };
        let out = apply_augment(&c, &p).unwrap();
        assert_eq!(out.pixels().pixels(), &[0.0, 0.5, 1.5]);
        assert_eq!(out.mask().bits(), &[false, true, true]);
        let wipe = AugmentParams { bias: 5.0, ..AugmentParams::identity() };
        assert!(matches!(apply_augment(&c, &wipe), Err(Error::DegenerateCrop)));
    }

    #[test]
    fn single_object_layer() {
        let pool = vec![asymmetric()];
        let opts = PlaceOptions { augment: AugmentConfig::identity(), ..Default::default() };
        let (layer, placements) = place_layer((10, 12), &pool, 1, &opts, &mut rng(3)).unwrap();
        assert_eq!(placements.len(), 1);
        let p = &placements[0];
        for r in 0..10 {
            for c in 0..12 {
                let inside = r >= p.top && r < p.top + 3 && c >= p.left && c < p.left + 2;
                let expect = if inside { pool[0].pixels().get(r - p.top, c - p.left) } else { 0.0 };
                assert_eq!(layer.get(r, c), expect);
            }
        }
    }

    #[test]
    fn zero_overlap_cap_gives_disjoint_masks() {
        let pool = vec![square_crop(5, 0.5, ObjectClass::Target)];
        let opts = PlaceOptions { max_overlap: 0.0, augment: AugmentConfig::identity(), ..Default::default() };
        for seed in 0..20 {
            let (_, ps) = place_layer((12, 12), &pool, 2, &opts, &mut rng(seed)).unwrap();
            if ps.len() == 2 {
                let a = ps[0].canvas_mask(12, 12);
                let b = ps[1].canvas_mask(12, 12);
                assert_eq!(a.intersection_count(&b).unwrap(), 0);
            }
        }
    }

    #[test]
    fn oversized_crops_are_skipped() {
        let pool = vec![square_crop(20, 0.5, ObjectClass::Target)];
        let opts = PlaceOptions { augment: AugmentConfig::identity(), ..Default::default() };
        let (layer, ps) = place_layer((10, 10), &pool, 3, &opts, &mut rng(0)).unwrap();
        assert!(ps.is_empty());
        assert!(layer.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn background_examples() {
        let full = Image::from_fn(4, 4, |r, c| 0.25 + (r * 4 + c) as f32 * 0.125);
        let out = make_background(std::slice::from_ref(&full), UniformRange::fixed(0.3), (4, 4), &mut rng(0)).unwrap();
        assert_eq!(out, full);

        let zeros = Image::zeros(6, 6);
        let out = make_background(&[zeros], UniformRange::fixed(0.2), (6, 6), &mut rng(0)).unwrap();
        let q = quantize_dyadic(0.2);
        assert!(out.pixels().iter().all(|&v| v == q));
    }

    #[test]
    fn background_tiles_small_patches() {
        let patch = Image::from_fn(3, 2, |r, c| 0.5 + (r * 2 + c) as f32 * 0.0625);
        let out = make_background(std::slice::from_ref(&patch), UniformRange::fixed(0.0), (7, 5), &mut rng(4)).unwrap();
        assert_eq!(out.dims(), (7, 5));
        for r in 0..7 {
            for c in 0..5 {
                assert!(patch.pixels().contains(&out.get(r, c)));
            }
        }
        // Vertical period of the tiling is the patch height.
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(out.get(r, c), out.get(r + 3, c));
            }
        }
    }

    #[test]
    fn empty_pools() {
        let params = SceneParams { n_clutter: CountRange::fixed(0), ..Default::default() };
        let pools = CropPools {
            target: vec![square_crop(5, 0.5, ObjectClass::Target)],
            clutter: vec![],
            backgrounds: vec![Image::zeros(8, 8)],
        };
        assert!(compose_scene(&pools, &params, &mut rng(0)).is_ok());
        let no_bg = CropPools { backgrounds: vec![], ..pools };
        assert!(matches!(compose_scene(&no_bg, &params, &mut rng(0)), Err(Error::EmptyPool(_))));
    }

    #[test]
    fn video_requires_two_frames() {
        let params = VideoParams {
            n_objects: 0,
            static_objects: 0,
            motion: MotionModel::Static,
            place: PlaceOptions::default(),
        };
        assert!(make_synthetic_video(&Image::zeros(8, 8), &[], 1, &params, &mut rng(0)).is_err());
        let v = make_synthetic_video(&Image::filled(8, 8, 0.25), &[], 3, &params, &mut rng(0)).unwrap();
        assert!(v.frames.iter().all(|f| *f == v.background));
    }

    #[test]
    fn pair_mode_parses() {
        assert_eq!("preserve".parse::<PairMode>().unwrap(), PairMode::TargetPreserving);
        assert_eq!("remove".parse::<PairMode>().unwrap(), PairMode::TargetRemoving);
        assert!("x".parse::<PairMode>().is_err());
    }
}
