//! Whole-image inference by overlapping tiles, and recovery of the removed
//! layer by subtraction.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{check_dims, Image};
use crate::nn::{forward, NetworkParams, NetworkSpec, Tensor4};

/// Tiles evaluated per forward call.
const TILE_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Blend {
    /// Mean of every tile prediction covering the pixel.
    #[default]
    Average,
    /// Each pixel from one tile, cutting half the overlap off each shared edge.
    CenterCrop,
}

impl fmt::Display for Blend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Blend::Average => "average",
            Blend::CenterCrop => "center-crop",
        })
    }
}

impl FromStr for Blend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "average" => Ok(Blend::Average),
            "center-crop" => Ok(Blend::CenterCrop),
            other => Err(format!("unknown blend `{other}` (expected average or center-crop)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilingPlan {
    pub tile: usize,
    pub overlap: usize,
    pub blend: Blend,
}

impl Default for TilingPlan {
    fn default() -> Self {
        Self {
            tile: 128,
            overlap: 16,
            blend: Blend::Average,
        }
    }
}

impl TilingPlan {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.tile == 0 || !self.tile.is_multiple_of(spec.alignment()) {
            return Err(Error::Validation(format!(
                "tile {} must be a positive multiple of 2^depth = {}",
                self.tile,
                spec.alignment()
            )));
        }
        if 2 * self.overlap >= self.tile {
            return Err(Error::Validation(format!(
                "overlap {} must be less than half the tile {}",
                self.overlap, self.tile
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.tile - self.overlap
    }

    /// Number of tiles along an axis of length `n`.
    pub fn tiles_along(&self, n: usize) -> usize {
        if n <= self.tile {
            1
        } else {
            (n - self.tile).div_ceil(self.stride()) + 1
        }
    }

    /// Padded length covering `n` with whole tiles.
    pub fn padded_len(&self, n: usize) -> usize {
        self.tile + (self.tiles_along(n) - 1) * self.stride()
    }

    /// Half-open span of padded coordinates that tile `i` of `count` owns
    /// under center-crop blending.
    pub fn owned_span(&self, i: usize, count: usize) -> (usize, usize) {
        let m = self.overlap;
        let start = i * self.stride() + if i > 0 { m / 2 } else { 0 };
        let end = i * self.stride() + self.tile - if i + 1 < count { m - m / 2 } else { 0 };
        (start, end)
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// Reflect-pads `img` at the bottom and right to `(ph, pw)`.
pub fn reflect_pad(img: &Image, ph: usize, pw: usize) -> Image {
    let (h, w) = img.dims();
    Image::from_fn(ph, pw, |r, c| img.get(reflect(r, h), reflect(c, w)))
}

/// Runs the network tile by tile and stitches the predictions.
pub fn filter_image(params: &NetworkParams<f32>, spec: &NetworkSpec, img: &Image, plan: &TilingPlan) -> Result<Image> {
    plan.validate(spec)?;
    let (h, w) = img.dims();
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch("cannot filter an empty image".into()));
    }
    let (ny, nx) = (plan.tiles_along(h), plan.tiles_along(w));
    let (ph, pw) = (plan.padded_len(h), plan.padded_len(w));
    let padded = reflect_pad(img, ph, pw);
    let s = plan.stride();
    let t = plan.tile;
    let origins: Vec<(usize, usize)> = (0..ny).flat_map(|i| (0..nx).map(move |j| (i, j))).collect();

    let mut acc = vec![0.0f64; ph * pw];
    let mut count = vec![0u32; ph * pw];
    for chunk in origins.chunks(TILE_BATCH) {
        let tiles: Vec<Image> = chunk
            .iter()
            .map(|&(i, j)| padded.crop(i * s, j * s, t, t))
            .collect::<Result<_>>()?;
        let out = forward(params, spec, &Tensor4::from_images(&tiles)?)?;
        for (k, &(i, j)) in chunk.iter().enumerate() {
            let pred = out.sample(k);
            let (r0, r1, c0, c1) = match plan.blend {
                Blend::Average => (0, t, 0, t),
                Blend::CenterCrop => {
                    let (a, b) = plan.owned_span(i, ny);
                    let (c, d) = plan.owned_span(j, nx);
                    (a - i * s, b - i * s, c - j * s, d - j * s)
                }
            };
            for r in r0..r1 {
                for c in c0..c1 {
                    let dst = (i * s + r) * pw + j * s + c;
                    acc[dst] += pred[r * t + c] as f64;
                    count[dst] += 1;
                }
            }
        }
    }
    Ok(Image::from_fn(h, w, |r, c| {
        let k = r * pw + c;
        (acc[k] / count[k] as f64) as f32
    }))
}

/// Per-pixel `max(0, original - predicted_background)`.
pub fn recover_by_subtraction(original: &Image, predicted_background: &Image) -> Result<Image> {
    check_dims(original.dims(), predicted_background.dims())?;
    let px = original
        .pixels()
        .iter()
        .zip(predicted_background.pixels())
        .map(|(&o, &p)| (o - p).max(0.0))
        .collect();
    Image::from_vec(original.height(), original.width(), px)
}
