//! Flat `key = value` run configuration shared by every command.
//!
//! Blank lines and lines starting with `#` are ignored. Every key except
//! `seed` has a default; unknown and repeated keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::compositor::{AugmentConfig, CountRange, PairMode, PlaceOptions, SceneParams, UniformRange};
use crate::error::{Error, Result};
use crate::eval;
use crate::harvest::{BoxHarvestParams, ThresholdMethod};
use crate::nn::{LossKind, NetworkSpec, TrainConfig};
use crate::separate::{Blend, TilingPlan};

/// Which harvesting recipe `harvest` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestMode {
    Area,
    Points,
    Boxes,
}

impl fmt::Display for HarvestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HarvestMode::Area => "area",
            HarvestMode::Points => "points",
            HarvestMode::Boxes => "boxes",
        })
    }
}

impl FromStr for HarvestMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "area" => Ok(HarvestMode::Area),
            "points" => Ok(HarvestMode::Points),
            "boxes" => Ok(HarvestMode::Boxes),
            other => Err(format!("unknown harvest mode `{other}` (expected area, points or boxes)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Otsu,
    Fixed,
    Local,
}

impl fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdKind::Otsu => "otsu",
            ThresholdKind::Fixed => "fixed",
            ThresholdKind::Local => "local",
        })
    }
}

impl FromStr for ThresholdKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "otsu" => Ok(ThresholdKind::Otsu),
            "fixed" => Ok(ThresholdKind::Fixed),
            "local" => Ok(ThresholdKind::Local),
            other => Err(format!("unknown threshold `{other}` (expected otsu, fixed or local)")),
        }
    }
}

/// Conversion between a config value and its text form.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    /// `None` omits the key when serializing.
    fn format_value(&self) -> Option<String>;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }

            fn format_value(&self) -> Option<String> {
                Some(self.to_string())
            }
        }
    )*};
}

display_value!(u64, usize, bool, String, LossKind, Blend, PairMode, HarvestMode, ThresholdKind);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }

    fn format_value(&self) -> Option<String> {
        // Display prints the shortest representation that parses back exactly.
        Some(self.to_string())
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            Err("path must not be empty".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }

    fn format_value(&self) -> Option<String> {
        Some(self.display().to_string())
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        T::parse_value(s).map(Some)
    }

    fn format_value(&self) -> Option<String> {
        self.as_ref().and_then(T::format_value)
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every setting of a run. See the README for the meaning of each key.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            pub seed: u64,
            $( $(#[$doc])* pub $name: $ty, )*
        }

        impl RunConfig {
            /// Defaults for everything but the seed.
            pub fn with_seed(seed: u64) -> Self {
                Self { seed, $( $name: $default, )* }
            }

            fn set(&mut self, key: &str, value: &str) -> Option<std::result::Result<(), String>> {
                match key {
                    "seed" => Some(u64::parse_value(value).map(|v| self.seed = v)),
                    $( stringify!($name) => Some(<$ty>::parse_value(value).map(|v| self.$name = v)), )*
                    _ => None,
                }
            }

            fn entries(&self) -> Vec<(&'static str, Option<String>)> {
                vec![
                    ("seed", self.seed.format_value()),
                    $( (stringify!($name), self.$name.format_value()), )*
                ]
            }
        }
    };
}

run_config! {
    /// Output directory; `--out` overrides it.
    out_dir: PathBuf = PathBuf::from("layerlens-out"),

    scene_height: usize = 128,
    scene_width: usize = 128,
    n_target_min: usize = 2,
    n_target_max: usize = 6,
    n_clutter_min: usize = 2,
    n_clutter_max: usize = 6,
    /// Largest fraction of a new object's mask that may cover earlier objects.
    max_overlap: f64 = 0.5,
    place_attempts: usize = 50,
    rotation_min: f64 = 0.0,
    rotation_max: f64 = 360.0,
    hflip: bool = true,
    vflip: bool = true,
    scale_min: f64 = 0.8,
    scale_max: f64 = 1.2,
    gain_min: f64 = 0.8,
    gain_max: f64 = 1.2,
    bias_min: f64 = 0.0,
    bias_max: f64 = 0.05,
    fill_min: f64 = 0.0,
    fill_max: f64 = 0.1,
    pair_mode: PairMode = PairMode::TargetPreserving,
    /// Crop pool manifest read by `synth` and `train`.
    pool: Option<PathBuf> = None,
    /// Number of pairs `synth` writes.
    pairs: usize = 64,
    /// Pair dump directory; when set, `train` samples from it instead of synthesizing.
    pairs_dir: Option<PathBuf> = None,

    harvest_mode: HarvestMode = HarvestMode::Area,
    harvest_image: Option<PathBuf> = None,
    annotations: Option<PathBuf> = None,
    /// Complement the harvest image to bright-on-dark first.
    invert: bool = false,
    threshold: ThresholdKind = ThresholdKind::Otsu,
    threshold_value: f64 = 0.5,
    local_window: usize = 31,
    local_offset: f64 = 0.0,
    min_area: usize = 10_000,
    focus_sigma: f64 = 2.0,
    focus_low: Option<f64> = None,
    focus_high: Option<f64> = None,
    target_class: String = "target".to_string(),
    clutter_class: String = "clutter".to_string(),
    patch_min: usize = 64,
    patch_max: usize = 192,
    clutter_patches: usize = 20,

    depth: usize = 2,
    base_channels: usize = 16,
    kernel_size: usize = 3,
    leaky_slope: f64 = 0.1,

    loss: LossKind = LossKind::L1,
    learning_rate: f64 = 1e-3,
    beta1: f64 = 0.9,
    beta2: f64 = 0.99,
    epsilon: f64 = 1e-8,
    batch_size: usize = 8,
    patch_size: usize = 64,
    steps: usize = 1000,
    /// Parameter file read by `infer`.
    params: Option<PathBuf> = None,

    tile: usize = 128,
    overlap: usize = 16,
    blend: Blend = Blend::Average,
    /// Image file or directory for `infer`.
    input: Option<PathBuf> = None,
    /// Write `max(0, input - output)` instead of the network output.
    subtract: bool = false,
    /// Frame directory for `median-baseline`.
    frames: Option<PathBuf> = None,

    /// Network outputs for `eval`.
    predictions: Option<PathBuf> = None,
    /// Truth masks for `eval`, one per prediction with the same file name.
    truth: Option<PathBuf> = None,
    min_blob: usize = eval::MIN_BLOB,
    iou_threshold: f64 = eval::DEFAULT_IOU_THRESHOLD,

    /// Held-out scenes scored by `demo`.
    eval_scenes: usize = 20,
    /// Minimum blob size for `demo` detections; the procedural disks are far below `min_blob`.
    demo_min_blob: usize = 20,
    /// Scenes per epoch of the `demo` training set; 0 draws a fresh scene every time.
    train_scenes: usize = 0,
}

impl RunConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::with_seed(0);
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::TypeError {
                    key: line.to_string(),
                    line: lineno,
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::TypeError {
                    key: key.to_string(),
                    line: lineno,
                    message: "key given more than once".into(),
                });
            }
            match cfg.set(key, value) {
                None => {
                    return Err(Error::UnknownKey {
                        key: key.to_string(),
                        line: lineno,
                    })
                }
                Some(Err(message)) => {
                    return Err(Error::TypeError {
                        key: key.to_string(),
                        line: lineno,
                        message,
                    })
                }
                Some(Ok(())) => seen.push(key.to_string()),
            }
        }
        if !seen.iter().any(|k| k == "seed") {
            return Err(Error::MissingKey { key: "seed".into() });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, one `key = value` line each; unset optional keys are omitted.
    pub fn serialize(&self) -> String {
        self.entries()
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.network_spec();
        spec.validate()?;
        self.train_config().validate(&spec)?;
        self.tiling_plan().validate(&spec)?;
        self.scene_params().validate()?;
        if let (Some(lo), Some(hi)) = (self.focus_low, self.focus_high) {
            if lo > hi {
                return Err(Error::InvalidBounds { low: lo, high: hi });
            }
        }
        if self.focus_low.is_some() != self.focus_high.is_some() {
            return Err(Error::Validation("focus_low and focus_high must be given together".into()));
        }
        if !(self.focus_sigma > 0.0) {
            return Err(Error::Validation("focus_sigma must be positive".into()));
        }
        if self.patch_min == 0 || self.patch_min > self.patch_max {
            return Err(Error::Validation("clutter patch range is empty".into()));
        }
        if self.min_area == 0 {
            return Err(Error::Validation("min_area must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Validation("iou_threshold must lie in [0, 1]".into()));
        }
        if self.threshold == ThresholdKind::Local && (self.local_window < 3 || self.local_window.is_multiple_of(2)) {
            return Err(Error::Validation("local_window must be odd and at least 3".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            depth: self.depth,
            base_channels: self.base_channels,
            kernel_size: self.kernel_size,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            steps: self.steps,
            seed: crate::rng::derive_seed(self.seed, "train", &[]),
        }
    }

    pub fn tiling_plan(&self) -> TilingPlan {
        TilingPlan {
            tile: self.tile,
            overlap: self.overlap,
            blend: self.blend,
        }
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            height: self.scene_height,
            width: self.scene_width,
            n_target: CountRange::new(self.n_target_min, self.n_target_max),
            n_clutter: CountRange::new(self.n_clutter_min, self.n_clutter_max),
            place: PlaceOptions {
                max_overlap: self.max_overlap,
                max_attempts: self.place_attempts,
                augment: AugmentConfig {
                    rotation: UniformRange::new(self.rotation_min, self.rotation_max),
                    hflip: self.hflip,
                    vflip: self.vflip,
                    scale: UniformRange::new(self.scale_min, self.scale_max),
                    gain: UniformRange::new(self.gain_min, self.gain_max),
                    bias: UniformRange::new(self.bias_min, self.bias_max),
                    background_fill: UniformRange::new(self.fill_min, self.fill_max),
                },
            },
        }
    }

    pub fn threshold_method(&self) -> ThresholdMethod {
        match self.threshold {
            ThresholdKind::Otsu => ThresholdMethod::Otsu,
            ThresholdKind::Fixed => ThresholdMethod::Fixed(self.threshold_value),
            ThresholdKind::Local => ThresholdMethod::Local {
                window: self.local_window,
                offset: self.local_offset,
            },
        }
    }

    pub fn box_harvest_params(&self) -> BoxHarvestParams {
        BoxHarvestParams {
            patch_min: self.patch_min,
            patch_max: self.patch_max,
            clutter_patches: self.clutter_patches,
            max_attempts: self.place_attempts,
            background_window: self.local_window,
            background_offset: self.local_offset,
        }
    }
}
