//! Extraction of crop exemplars and background patches from real images.
//!
//! Three recipes, by annotation type: size-filtered foreground components
//! sorted by focus (no labels), Otsu components labeled by seed points, and
//! per-box Otsu crops with clutter sampled outside the boxes.

use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng as _;

use crate::compositor::{CropExemplar, CropPools, ObjectClass};
use crate::error::{Error, Result};
use crate::image::{
    check_dims, connected_components, local_threshold, log_filter, log_transform, otsu_threshold, BBox, BinaryMask,
    Connectivity, Image, LabelMap,
};
use crate::rng::Rng;

/// Histogram resolution used wherever the recipes call for Otsu.
pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PointAnnotation {
    pub row: usize,
    pub col: usize,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxAnnotation {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub class: String,
}

impl BoxAnnotation {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.top, self.left, self.height, self.width)
    }
}

/// How foreground is separated from background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
    Local { window: usize, offset: f64 },
}

impl ThresholdMethod {
    /// A constant image has no Otsu foreground.
    pub fn apply(&self, img: &Image) -> Result<BinaryMask> {
        match *self {
            ThresholdMethod::Otsu => match otsu_threshold(img, OTSU_BINS) {
                Ok(t) => Ok(img.threshold(t)),
                Err(Error::DegenerateHistogram) => Ok(BinaryMask::new(img.height(), img.width())),
                Err(e) => Err(e),
            },
            ThresholdMethod::Fixed(t) => Ok(img.threshold(t)),
            ThresholdMethod::Local { window, offset } => local_threshold(img, window, offset),
        }
    }
}

/// Output of one harvesting pass.
#[derive(Debug, Clone, Default)]
pub struct Harvest {
    pub target: Vec<CropExemplar>,
    pub clutter: Vec<CropExemplar>,
    pub background: Option<Image>,
    /// Indices of boxes whose interior had no Otsu split.
    pub skipped_boxes: Vec<usize>,
    /// Patch windows the clutter crops were cut from, in crop order.
    pub patch_windows: Vec<BBox>,
}

impl Harvest {
    pub fn into_pools(self) -> CropPools {
        CropPools {
            target: self.target,
            clutter: self.clutter,
            backgrounds: self.background.into_iter().collect(),
        }
    }
}

/// Crop of component `label` at its tight bounding box, other pixels zeroed.
fn component_crop(
    img: &Image,
    labels: &LabelMap,
    label: u32,
    bbox: BBox,
    class: ObjectClass,
    id: String,
) -> Result<CropExemplar> {
    let mask = BinaryMask::from_fn(bbox.height, bbox.width, |r, c| {
        labels.get(bbox.top + r, bbox.left + c) == label
    });
    let pixels = Image::from_fn(bbox.height, bbox.width, |r, c| {
        if mask.get(r, c) {
            img.get(bbox.top + r, bbox.left + c)
        } else {
            0.0
        }
    });
    CropExemplar::new(pixels, mask, class, id)
}

/// Components with at least `min_area` pixels become crops; the background is
/// the input with every foreground pixel zeroed, kept or not.
pub fn harvest_by_area(img: &Image, method: ThresholdMethod, min_area: usize) -> Result<(Vec<CropExemplar>, Image)> {
    if min_area == 0 {
        return Err(Error::InvalidArgument("min_area must be at least 1".into()));
    }
    let fg = method.apply(img)?;
    let labels = connected_components(&fg, Connectivity::Eight);
    let mut crops = Vec::new();
    for s in labels.stats() {
        if s.area >= min_area {
            crops.push(component_crop(
                img,
                &labels,
                s.label,
                s.bbox,
                ObjectClass::Target,
                format!("area{}", s.label),
            )?);
        }
    }
    Ok((crops, img.zero_where(&fg)?))
}

/// Mean absolute LoG response over the crop's mask.
pub fn focus_score(crop: &CropExemplar, sigma: f64) -> Result<f64> {
    let response = log_filter(crop.pixels(), sigma)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&v, &m) in response.pixels().iter().zip(crop.mask().bits()) {
        if m {
            sum += (v as f64).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Debug, Clone, Default)]
pub struct FocusSplit {
    pub target: Vec<CropExemplar>,
    pub clutter: Vec<CropExemplar>,
    pub discarded: Vec<CropExemplar>,
}

/// Scores below `low` are out of focus (clutter), above `high` in focus
/// (target); scores in `[low, high]` are dropped.
pub fn split_by_focus(crops: Vec<CropExemplar>, sigma: f64, low: f64, high: f64) -> Result<FocusSplit> {
    if low > high {
        return Err(Error::InvalidBounds { low, high });
    }
    let mut split = FocusSplit::default();
    for crop in crops {
        let s = focus_score(&crop, sigma)?;
        if s < low {
            split.clutter.push(crop.with_class(ObjectClass::Clutter));
        } else if s > high {
            split.target.push(crop.with_class(ObjectClass::Target));
        } else {
            split.discarded.push(crop);
        }
    }
    Ok(split)
}

/// Otsu on the log-transformed image; each component goes to the pool
/// matching its points when they all share one of the two classes.
pub fn harvest_by_points(
    img: &Image,
    points: &[PointAnnotation],
    target_class: &str,
    clutter_class: &str,
) -> Result<Harvest> {
    let (h, w) = img.dims();
    if let Some(p) = points.iter().find(|p| p.row >= h || p.col >= w) {
        return Err(Error::InvalidArgument(format!(
            "point ({}, {}) outside {h}x{w} image",
            p.row, p.col
        )));
    }
    let fg = ThresholdMethod::Otsu.apply(&log_transform(img)?)?;
    let labels = connected_components(&fg, Connectivity::Eight);
    let stats = labels.stats();
    // Per component: (has target, has clutter, has other).
    let mut seen = vec![(false, false, false); stats.len()];
    for p in points {
        let l = labels.get(p.row, p.col);
        if l == 0 {
            continue;
        }
        let s = &mut seen[l as usize - 1];
        if p.class == target_class {
            s.0 = true;
        } else if p.class == clutter_class {
            s.1 = true;
        } else {
            s.2 = true;
        }
    }
    let mut out = Harvest::default();
    for (s, &(t, c, other)) in stats.iter().zip(&seen) {
        let class = match (t, c, other) {
            (true, false, false) => ObjectClass::Target,
            (false, true, false) => ObjectClass::Clutter,
            _ => continue,
        };
        let crop = component_crop(img, &labels, s.label, s.bbox, class, format!("point{}", s.label))?;
        match class {
            ObjectClass::Target => out.target.push(crop),
            ObjectClass::Clutter => out.clutter.push(crop),
        }
    }
    out.background = Some(img.zero_where(&fg)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxHarvestParams {
    /// Inclusive range of clutter patch sides.
    pub patch_min: usize,
    pub patch_max: usize,
    pub clutter_patches: usize,
    pub max_attempts: usize,
    pub background_window: usize,
    pub background_offset: f64,
}

impl Default for BoxHarvestParams {
    fn default() -> Self {
        Self {
            patch_min: 64,
            patch_max: 192,
            clutter_patches: 20,
            max_attempts: 50,
            background_window: 31,
            background_offset: 0.0,
        }
    }
}

/// Otsu inside `region` of `img`, keeping only the largest 8-connected
/// component (lowest label on ties). `None` when the region is constant or empty.
fn largest_component(img: &Image, region: BBox) -> Result<Option<(LabelMap, u32, BBox)>> {
    let sub = img.crop(region.top, region.left, region.height, region.width)?;
    let t = match otsu_threshold(&sub, OTSU_BINS) {
        Ok(t) => t,
        Err(Error::DegenerateHistogram) => return Ok(None),
        Err(e) => return Err(e),
    };
    let labels = connected_components(&sub.threshold(t), Connectivity::Eight);
    let best = labels
        .stats()
        .into_iter()
        .fold(None::<crate::image::ComponentStats>, |best, s| match best {
            Some(b) if b.area >= s.area => Some(b),
            _ => Some(s),
        });
    Ok(best.map(|s| (labels, s.label, s.bbox)))
}

fn crop_in_region(img: &Image, region: BBox, class: ObjectClass, id: String) -> Result<Option<(CropExemplar, BBox)>> {
    let Some((labels, label, bbox)) = largest_component(img, region)? else {
        return Ok(None);
    };
    let sub = img.crop(region.top, region.left, region.height, region.width)?;
    let crop = component_crop(&sub, &labels, label, bbox, class, id)?;
    let placed = BBox::new(region.top + bbox.top, region.left + bbox.left, bbox.height, bbox.width);
    Ok(Some((crop, placed)))
}

/// Target crops from boxes, clutter from random patches that avoid every box,
/// and a local-threshold background of the box-zeroed image. `img` must
/// already be bright-on-dark.
pub fn harvest_by_boxes(img: &Image, boxes: &[BoxAnnotation], params: &BoxHarvestParams, rng: &mut Rng) -> Result<Harvest> {
    let (h, w) = img.dims();
    if params.patch_min == 0 || params.patch_min > params.patch_max {
        return Err(Error::InvalidArgument(format!(
            "clutter patch range [{}, {}] is empty",
            params.patch_min, params.patch_max
        )));
    }
    for b in boxes {
        if b.height == 0 || b.width == 0 || b.top + b.height > h || b.left + b.width > w {
            return Err(Error::InvalidArgument(format!(
                "box ({}, {}, {}, {}) outside {h}x{w} image",
                b.top, b.left, b.height, b.width
            )));
        }
    }
    let mut out = Harvest::default();
    let mut box_mask = BinaryMask::new(h, w);
    for (i, b) in boxes.iter().enumerate() {
        let bb = b.bbox();
        for r in bb.top..bb.bottom() {
            for c in bb.left..bb.right() {
                box_mask.set(r, c, true);
            }
        }
        match crop_in_region(img, bb, ObjectClass::Target, format!("box{i}"))? {
            Some((crop, _)) => out.target.push(crop),
            None => {
                warn!("{}", Error::EmptyBoxForeground);
                out.skipped_boxes.push(i);
            }
        }
    }
    let zeroed = img.zero_where(&box_mask)?;

    let mut taken = BinaryMask::new(h, w);
    for k in 0..params.clutter_patches {
        for _ in 0..params.max_attempts {
            let side = rng.random_range(params.patch_min..=params.patch_max);
            if side > h || side > w {
                continue;
            }
            let patch = BBox::new(rng.random_range(0..=h - side), rng.random_range(0..=w - side), side, side);
            if boxes.iter().any(|b| b.bbox().intersects(&patch)) {
                continue;
            }
            if let Some((crop, placed)) = crop_in_region(&zeroed, patch, ObjectClass::Clutter, format!("patch{k}"))? {
                for r in 0..placed.height {
                    for c in 0..placed.width {
                        if crop.mask().get(r, c) {
                            taken.set(placed.top + r, placed.left + c, true);
                        }
                    }
                }
                out.clutter.push(crop);
                out.patch_windows.push(patch);
            }
            break;
        }
    }

    let fg = local_threshold(&zeroed, params.background_window, params.background_offset)?;
    out.background = Some(zeroed.zero_where(&fg.union(&taken)?)?);
    Ok(out)
}

/// Luminance-weighted gray conversion.
pub fn rgb_to_gray(r: &Image, g: &Image, b: &Image) -> Result<Image> {
    check_dims(r.dims(), g.dims())?;
    check_dims(r.dims(), b.dims())?;
    let px = r
        .pixels()
        .iter()
        .zip(g.pixels())
        .zip(b.pixels())
        .map(|((&r, &g), &b)| (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32)
        .collect();
    Image::from_vec(r.height(), r.width(), px)
}

fn fields<'a>(line: &'a str, n: usize, what: &'static str, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != n {
        return Err(Error::format(
            what,
            path,
            format!("line {lineno}: expected {n} tab-separated fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn number(s: &str, what: &'static str, path: &Path, lineno: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(what, path, format!("line {lineno}: `{s}` is not a pixel coordinate")))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Parses `row<TAB>col<TAB>class` lines; `path` is used in messages only.
pub fn parse_points(text: &str, path: &Path) -> Result<Vec<PointAnnotation>> {
    data_lines(text)
        .map(|(n, line)| {
            let f = fields(line, 3, "point annotations", path, n)?;
            Ok(PointAnnotation {
                row: number(f[0], "point annotations", path, n)?,
                col: number(f[1], "point annotations", path, n)?,
                class: f[2].trim().to_string(),
            })
        })
        .collect()
}

/// Parses `top<TAB>left<TAB>height<TAB>width<TAB>class` lines.
pub fn parse_boxes(text: &str, path: &Path) -> Result<Vec<BoxAnnotation>> {
    data_lines(text)
        .map(|(n, line)| {
            let f = fields(line, 5, "box annotations", path, n)?;
            Ok(BoxAnnotation {
                top: number(f[0], "box annotations", path, n)?,
                left: number(f[1], "box annotations", path, n)?,
                height: number(f[2], "box annotations", path, n)?,
                width: number(f[3], "box annotations", path, n)?,
                class: f[4].trim().to_string(),
            })
        })
        .collect()
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<PointAnnotation>> {
    let path = path.as_ref();
    parse_points(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoxAnnotation>> {
    let path = path.as_ref();
    parse_boxes(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
}
