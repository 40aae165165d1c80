//! Procedural objects and backgrounds with analytic ground truth, used by
//! `demo` and the end-to-end tests.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::compositor::{CropExemplar, CropPools, ObjectClass};
use crate::error::Result;
use crate::image::{quantize_dyadic, Image};
use crate::rng::Rng;

fn radial(radius: f64, f: impl Fn(f64) -> f32) -> Image {
    let c = radius.ceil() as usize;
    let side = 2 * c + 1;
    Image::from_fn(side, side, |r, col| {
        let d = ((r as f64 - c as f64).powi(2) + (col as f64 - c as f64).powi(2)).sqrt();
        quantize_dyadic(f(d))
    })
}

/// Hard-edged filled disk.
pub fn disk(radius: f64, intensity: f32) -> Image {
    radial(radius, |d| if d <= radius { intensity } else { 0.0 })
}

/// Annulus with outer radius `outer` and thickness `width`.
pub fn ring(outer: f64, width: f64, intensity: f32) -> Image {
    radial(outer, |d| if d <= outer && d >= outer - width { intensity } else { 0.0 })
}

/// Gaussian bump truncated at three standard deviations.
pub fn gaussian_blob(sigma: f64, peak: f32) -> Image {
    let radius = 3.0 * sigma;
    radial(radius, |d| {
        if d <= radius {
            peak * (-(d * d) / (2.0 * sigma * sigma)).exp() as f32
        } else {
            0.0
        }
    })
}

/// Sum of a few long-wavelength plane waves around `level`, kept positive.
pub fn smooth_background(height: usize, width: usize, level: f64, rng: &mut Rng) -> Image {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let wavelength = rng.random_range(40.0..120.0);
            let angle = rng.random_range(0.0..PI);
            let amp = rng.random_range(0.02..0.05);
            let phase = rng.random_range(0.0..2.0 * PI);
            (2.0 * PI / wavelength, angle, amp, phase)
        })
        .collect();
    Image::from_fn(height, width, |r, c| {
        let v = waves.iter().fold(level, |acc, &(k, a, amp, ph)| {
            acc + amp * (k * (r as f64 * a.cos() + c as f64 * a.sin()) + ph).sin()
        });
        quantize_dyadic(v.max(0.01) as f32)
    })
}

/// Smooth field plus a fine grating and fixed faint speckles.
pub fn textured_background(height: usize, width: usize, rng: &mut Rng) -> Image {
    let base = smooth_background(height, width, 0.2, rng);
    let period = rng.random_range(5.0..9.0);
    let angle = rng.random_range(0.0..PI);
    let speckles: Vec<(f64, f64)> = (0..(height * width / 150))
        .map(|_| (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64)))
        .collect();
    let mut img = Image::from_fn(height, width, |r, c| {
        let g = 0.04 * (2.0 * PI * (r as f64 * angle.cos() + c as f64 * angle.sin()) / period).sin();
        base.get(r, c) + g as f32
    });
    for &(sr, sc) in &speckles {
        let (r0, c0) = (sr as usize, sc as usize);
        for r in r0.saturating_sub(1)..(r0 + 2).min(height) {
            for c in c0.saturating_sub(1)..(c0 + 2).min(width) {
                let v = img.get(r, c) + 0.05;
                img.set(r, c, v);
            }
        }
    }
    img.map(|v| quantize_dyadic(v.max(0.01)))
}

/// Disk targets of radius 4-8, ring and Gaussian-blob clutter, and smooth
/// background patches.
pub fn procedural_pools(per_class: usize, rng: &mut Rng) -> Result<CropPools> {
    let mut pools = CropPools::default();
    for i in 0..per_class {
        let r = rng.random_range(4.0..=8.0);
        let v = rng.random_range(0.5..1.0);
        pools
            .target
            .push(CropExemplar::from_pixels(disk(r, v), ObjectClass::Target, format!("disk{i}"))?);
    }
    for i in 0..per_class {
        let crop = if i % 2 == 0 {
            let outer = rng.random_range(5.0..=10.0);
            let width = rng.random_range(1.5..3.0);
            ring(outer, width, rng.random_range(0.4..0.9))
        } else {
            gaussian_blob(rng.random_range(2.0..4.0), rng.random_range(0.5..1.0))
        };
        pools
            .clutter
            .push(CropExemplar::from_pixels(crop, ObjectClass::Clutter, format!("clutter{i}"))?);
    }
    for _ in 0..4 {
        pools.backgrounds.push(smooth_background(256, 256, 0.15, rng));
    }
    Ok(pools)
}
