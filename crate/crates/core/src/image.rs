//! Grayscale image container and the classical processing primitives used by
//! the compositor, harvester and evaluation code.
//!
//! Images are row-major `f32` grids. Intermediate arithmetic runs in `f64`;
//! every public operation returns a fresh value and leaves its inputs alone.
//! Borders are handled by edge replication throughout.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Grid spacing used to keep composited layers exactly additive.
///
/// Values that are integer multiples of 2^-16 with magnitude below 64 sum
/// without rounding in `f32`, in any order.
pub const DYADIC_QUANTUM: f32 = 1.0 / 65536.0;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    /// Builds an image from row-major pixels. Fails on a length mismatch or a
    /// non-finite value.
    pub fn from_vec(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel value {v}")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value;
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f32 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixels[r * self.width + c]
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        let mut it = self.pixels.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn max(&self) -> Option<f32> {
        self.min_max().map(|(_, hi)| hi)
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        check_dims(self.dims(), other.dims())?;
        Ok(Image {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Copies the `height`x`width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "window {height}x{width} at ({top},{left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(top + r, left + c)))
    }

    /// Strict-greater thresholding.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.pixels.iter().map(|&v| v as f64 > threshold).collect(),
        }
    }

    /// Snaps every pixel to the nearest multiple of [`DYADIC_QUANTUM`].
    pub fn quantize_dyadic(&self) -> Image {
        self.map(quantize_dyadic)
    }

    /// Zeroes every pixel where `mask` is set.
    pub fn zero_where(&self, mask: &BinaryMask) -> Result<Image> {
        check_dims(self.dims(), mask.dims())?;
        let mut out = self.clone();
        for (p, &m) in out.pixels.iter_mut().zip(&mask.bits) {
            if m {
                *p = 0.0;
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn quantize_dyadic(v: f32) -> f32 {
    ((v as f64) * 65536.0).round() as f32 * DYADIC_QUANTUM
}

pub(crate) fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_dims(self.dims(), other.dims())?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        })
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        check_dims(self.dims(), other.dims())?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    /// Converts to a 0/1 image.
    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn crop(&self, bbox: BBox) -> BinaryMask {
        BinaryMask::from_fn(bbox.height, bbox.width, |r, c| {
            self.get(bbox.top + r, bbox.left + c)
        })
    }
}

/// Axis-aligned box in pixel coordinates; `height`/`width` are extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let h = self.bottom().min(other.bottom()).saturating_sub(self.top.max(other.top));
        let w = self.right().min(other.right()).saturating_sub(self.left.max(other.left));
        h * w
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Whether the continuous point `(row, col)` lies inside the box's pixel
    /// span, `[top, bottom)` x `[left, right)`.
    pub fn contains_point(&self, row: f64, col: f64) -> bool {
        row >= self.top as f64
            && row < self.bottom() as f64
            && col >= self.left as f64
            && col < self.right() as f64
    }
}

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Per-component summary from a [`LabelMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    /// Mean (row, col) of the component's pixels.
    pub centroid: (f64, f64),
}

/// Labels 1..=K for K components, 0 for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Number of components K.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Stats for labels 1..=K, indexed by `label - 1`.
    pub fn stats(&self) -> Vec<ComponentStats> {
        let mut acc: Vec<(usize, usize, usize, usize, usize, f64, f64)> =
            vec![(0, usize::MAX, usize::MAX, 0, 0, 0.0, 0.0); self.count];
        for r in 0..self.height {
            for c in 0..self.width {
                let l = self.labels[r * self.width + c];
                if l == 0 {
                    continue;
                }
                let a = &mut acc[l as usize - 1];
                a.0 += 1;
                a.1 = a.1.min(r);
                a.2 = a.2.min(c);
                a.3 = a.3.max(r);
                a.4 = a.4.max(c);
                a.5 += r as f64;
                a.6 += c as f64;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(i, (area, r0, c0, r1, c1, sr, sc))| ComponentStats {
                label: i as u32 + 1,
                area,
                bbox: BBox::new(r0, c0, r1 - r0 + 1, c1 - c0 + 1),
                centroid: (sr / area as f64, sc / area as f64),
            })
            .collect()
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }
}

/// Otsu threshold over a `bins`-bin histogram spanning `[min, max]`.
///
/// Candidate thresholds are the interior bin edges `min + k * (max - min) / bins`
/// for `k = 1..bins`. Bin `k` holds values in `(edge_k, edge_{k+1}]`, so a
/// split at `edge_k` matches the strict-greater foreground rule exactly. Ties
/// go to the smallest maximizing edge.
pub fn otsu_threshold(img: &Image, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("otsu needs >= 2 bins, got {bins}")));
    }
    let (lo, hi) = img.min_max().ok_or(Error::EmptySequence)?;
    if lo == hi {
        return Err(Error::DegenerateHistogram);
    }
    let edges = otsu_edges(lo as f64, hi as f64, bins);
    let mut counts = vec![0usize; bins];
    let mut sums = vec![0.0f64; bins];
    for &v in img.pixels() {
        let b = bin_index(v as f64, lo as f64, hi as f64, &edges);
        counts[b] += 1;
        sums[b] += v as f64;
    }

    let n = img.len() as f64;
    let total: f64 = sums.iter().sum();
    let mut n_bg = 0usize;
    let mut sum_bg = 0.0f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 1..bins {
        n_bg += counts[k - 1];
        sum_bg += sums[k - 1];
        let n_fg = img.len() - n_bg;
        if n_bg == 0 || n_fg == 0 {
            continue;
        }
        let w0 = n_bg as f64 / n;
        let w1 = n_fg as f64 / n;
        let mu0 = sum_bg / n_bg as f64;
        let mu1 = (total - sum_bg) / n_fg as f64;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best.0 {
            best = (var, k);
        }
    }
    Ok(edges[best.1])
}

/// Interior edges indexed by `k` (entry 0 is `min`, entry `bins` is `max`).
pub fn otsu_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let delta = (hi - lo) / bins as f64;
    (0..=bins).map(|k| lo + k as f64 * delta).collect()
}

fn bin_index(v: f64, lo: f64, hi: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let guess = (((v - lo) / (hi - lo)) * bins as f64).ceil() as isize - 1;
    let mut b = guess.clamp(0, bins as isize - 1) as usize;
    // Settle rounding so that bin b satisfies edges[b] < v <= edges[b+1].
    while b > 0 && v <= edges[b] {
        b -= 1;
    }
    while b + 1 < bins && v > edges[b + 1] {
        b += 1;
    }
    b
}

/// Foreground where a pixel exceeds its `window`x`window` neighborhood mean
/// plus `offset`.
pub fn local_threshold(img: &Image, window: usize, offset: f64) -> Result<BinaryMask> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidWindow(window));
    }
    let (h, w) = img.dims();
    if window > (h.min(w) * 2).saturating_sub(1) {
        return Err(Error::WindowTooLarge {
            window,
            height: h,
            width: w,
        });
    }
    let half = (window / 2) as isize;
    // Separable box sums with edge replication.
    let mut rows = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for dc in -half..=half {
                s += img.get_clamped(r as isize, c as isize + dc) as f64;
            }
            rows[r * w + c] = s;
        }
    }
    let n = (window * window) as f64;
    let mut out = BinaryMask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for dr in -half..=half {
                let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                s += rows[rr * w + c];
            }
            let v = img.get(r, c) as f64;
            // v > s/n + offset, without the division
            out.set(r, c, v * n > s + offset * n);
        }
    }
    Ok(out)
}

/// Labels maximal connected regions 1..=K in row-major first-encounter order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (h, w) = mask.dims();
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    let neighbors: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let mut current = 0u32;
            for &(dr, dc) in neighbors {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr < 0 || cc < 0 || cc >= w as isize {
                    continue;
                }
                let l = provisional[rr as usize * w + cc as usize];
                if l == 0 {
                    continue;
                }
                if current == 0 {
                    current = find(&mut parent, l);
                } else {
                    let a = find(&mut parent, current);
                    let b = find(&mut parent, l);
                    if a != b {
                        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
                        parent[drop as usize] = keep;
                        current = keep;
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            provisional[r * w + c] = current;
        }
    }

    // Resolve roots, then renumber in first-encounter order.
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; h * w];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p);
        if remap[root as usize] == 0 {
            next += 1;
            remap[root as usize] = next;
        }
        labels[i] = remap[root as usize];
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count: next as usize,
    }
}

/// Sampled Laplacian-of-Gaussian kernel with radius `ceil(3 sigma)`, corrected
/// to zero mean. Returns `(radius, row-major samples)`.
pub fn log_kernel(sigma: f64) -> (usize, Vec<f64>) {
    let radius = (3.0 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let s2 = sigma * sigma;
    let norm = -1.0 / (std::f64::consts::PI * s2 * s2);
    let mut k = Vec::with_capacity(side * side);
    for dy in -(radius as isize)..=radius as isize {
        for dx in -(radius as isize)..=radius as isize {
            let q = (dx * dx + dy * dy) as f64 / (2.0 * s2);
            k.push(norm * (1.0 - q) * (-q).exp());
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    (radius, k)
}

/// Laplacian-of-Gaussian response with edge-replicated borders.
pub fn log_filter(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let (radius, kernel) = log_kernel(sigma);
    let side = 2 * radius + 1;
    let r = radius as isize;
    let (h, w) = img.dims();
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for dy in -r..=r {
                let row = (dy + r) as usize * side;
                for dx in -r..=r {
                    let v = img.get_clamped(y as isize + dy, x as isize + dx);
                    acc += kernel[row + (dx + r) as usize] * v as f64;
                }
            }
            out.set(y, x, acc as f32);
        }
    }
    Ok(out)
}

/// Separable Gaussian blur, edge-replicated, radius `ceil(3 sigma)`.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (h, w) = img.dims();
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(y as isize, x as isize + i as isize - radius) as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    Image::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
            acc += kv * tmp[yy * w + x];
        }
        acc as f32
    })
}

/// `ln(1 + v)`, rescaled so the maximum maps to 1.
pub fn log_transform(img: &Image) -> Result<Image> {
    if let Some(&v) = img.pixels().iter().find(|&&v| v < 0.0) {
        return Err(Error::NegativeInput(v));
    }
    let logged: Vec<f64> = img.pixels().iter().map(|&v| (v as f64).ln_1p()).collect();
    let peak = logged.iter().copied().fold(0.0f64, f64::max);
    let pixels = if peak > 0.0 {
        logged.iter().map(|&v| (v / peak) as f32).collect()
    } else {
        vec![0.0; img.len()]
    };
    Image::from_vec(img.height(), img.width(), pixels)
}

/// Per-pixel `max(img) - v`.
pub fn complement(img: &Image) -> Image {
    let peak = img.max().unwrap_or(0.0);
    img.map(|v| peak - v)
}

/// Per-pixel median across frames; an even count averages the two middle values.
pub fn median_projection(frames: &[Image]) -> Result<Image> {
    let first = frames.first().ok_or(Error::EmptySequence)?;
    for f in &frames[1..] {
        check_dims(first.dims(), f.dims())?;
    }
    let n = frames.len();
    let mut column = vec![0.0f32; n];
    let mut out = Image::zeros(first.height(), first.width());
    for i in 0..first.len() {
        for (slot, f) in column.iter_mut().zip(frames) {
            *slot = f.pixels()[i];
        }
        column.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        out.pixels_mut()[i] = if n % 2 == 1 {
            column[n / 2]
        } else {
            ((column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0) as f32
        };
    }
    Ok(out)
}
