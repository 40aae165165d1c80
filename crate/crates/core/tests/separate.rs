mod common;

use common::*;
use layerlens::image::Image;
use layerlens::nn::{forward, NetworkParams, NetworkSpec, Tensor4};
use layerlens::rng::stream;
use layerlens::separate::{filter_image, recover_by_subtraction, Blend, TilingPlan};
use proptest::prelude::*;
use rand::Rng;

fn net(spec: &NetworkSpec, seed: u64) -> NetworkParams<f32> {
    let mut p = NetworkParams::init(spec, &mut stream(seed, "init"));
    let mut r = rng(seed);
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = r.random_range(-0.1..0.1);
        }
    }
    p
}

fn forward_one(p: &NetworkParams<f32>, spec: &NetworkSpec, img: &Image) -> Image {
    forward(p, spec, &Tensor4::from_images(std::slice::from_ref(img)).unwrap()).unwrap().to_images().remove(0)
}

/// Mirror without repeating the edge sample.
fn mirror(i: usize, n: usize) -> usize {
    let mut i = i as isize;
    let n = n as isize;
    loop {
        if i < n {
            return i as usize;
        }
        i = 2 * (n - 1) - i;
        if i < 0 {
            i = -i;
        }
    }
}

#[test]
fn single_tile_equals_forward() {
    let spec = NetworkSpec::new(2, 4);
    let p = net(&spec, 1);
    let mut r = rng(1);
    let img = Image::from_fn(32, 32, |_, _| r.random_range(0.0..1.0));
    for blend in [Blend::Average, Blend::CenterCrop] {
        let plan = TilingPlan { tile: 32, overlap: 8, blend };
        assert_eq!(filter_image(&p, &spec, &img, &plan).unwrap(), forward_one(&p, &spec, &img));
    }
}

#[test]
fn average_blend_is_mean_of_covering_tiles() {
    let spec = NetworkSpec::new(1, 4);
    let p = net(&spec, 2);
    let mut r = rng(2);
    let (h, w) = (37, 45);
    let img = Image::from_fn(h, w, |_, _| r.random_range(0.0..1.0));
    let (t, m) = (16, 6);
    let s = t - m;
    let plan = TilingPlan { tile: t, overlap: m, blend: Blend::Average };
    let got = filter_image(&p, &spec, &img, &plan).unwrap();

    let tiles = |n: usize| if n <= t { 1 } else { (n - t).div_ceil(s) + 1 };
    let (ny, nx) = (tiles(h), tiles(w));
    let mut preds = Vec::new();
    for i in 0..ny {
        for j in 0..nx {
            let tile = Image::from_fn(t, t, |y, x| img.get(mirror(i * s + y, h), mirror(j * s + x, w)));
            preds.push(((i * s, j * s), forward_one(&p, &spec, &tile)));
        }
    }
    for y in 0..h {
        for x in 0..w {
            let cover: Vec<f64> = preds
                .iter()
                .filter(|((ty, tx), _)| (*ty..ty + t).contains(&y) && (*tx..tx + t).contains(&x))
                .map(|((ty, tx), pred)| pred.get(y - ty, x - tx) as f64)
                .collect();
            assert!(!cover.is_empty());
            let want = cover.iter().sum::<f64>() / cover.len() as f64;
            assert!((got.get(y, x) as f64 - want).abs() < 1e-6, "({y},{x})");
        }
    }
}

#[test]
fn center_crop_takes_each_pixel_from_one_tile() {
    let spec = NetworkSpec::new(1, 4);
    let p = net(&spec, 3);
    let mut r = rng(3);
    let img = Image::from_fn(40, 40, |_, _| r.random_range(0.0..1.0));
    let plan = TilingPlan { tile: 16, overlap: 6, blend: Blend::CenterCrop };
    let got = filter_image(&p, &spec, &img, &plan).unwrap();
    let s = 10;
    for y in 0..40 {
        for x in 0..40 {
            let candidates: Vec<f32> = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|&(i, j)| (i * s..i * s + 16).contains(&y) && (j * s..j * s + 16).contains(&x))
                .map(|(i, j)| {
                    let tile = Image::from_fn(16, 16, |a, b| img.get(mirror(i * s + a, 40), mirror(j * s + b, 40)));
                    forward_one(&p, &spec, &tile).get(y - i * s, x - j * s)
                })
                .collect();
            assert!(candidates.contains(&got.get(y, x)), "({y},{x})");
        }
    }
}

#[test]
fn constant_image_through_pointwise_net() {
    let spec = NetworkSpec { kernel_size: 1, ..NetworkSpec::new(2, 4) };
    let p = net(&spec, 5);
    let img = Image::filled(50, 70, 0.3);
    let plan = TilingPlan { tile: 16, overlap: 4, blend: Blend::Average };
    let tiled = filter_image(&p, &spec, &img, &plan).unwrap();
    let untiled = forward_one(&p, &spec, &Image::filled(64, 80, 0.3));
    let v = untiled.get(10, 10);
    assert!(tiled.pixels().iter().all(|&x| (x - v).abs() < 1e-5));
    assert_eq!(tiled.dims(), (50, 70));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subtraction_is_clamped(seed: u64, h in 1usize..20, w in 1usize..20) {
        let mut r = rng(seed);
        let a = Image::from_fn(h, w, |_, _| r.random_range(0.0..1.0));
        let b = Image::from_fn(h, w, |_, _| r.random_range(0.0..1.5));
        let d = recover_by_subtraction(&a, &b).unwrap();
        prop_assert!(d.pixels().iter().zip(a.pixels()).all(|(&x, &o)| x >= 0.0 && x <= o));
        prop_assert_eq!(recover_by_subtraction(&a, &a).unwrap(), Image::zeros(h, w));
        prop_assert_eq!(recover_by_subtraction(&a, &Image::zeros(h, w)).unwrap(), a);
    }

    #[test]
    fn filtering_preserves_dims(seed: u64, h in 1usize..40, w in 1usize..40) {
        let spec = NetworkSpec::new(1, 2);
        let p = net(&spec, seed);
        let img = Image::from_fn(h, w, |y, x| ((y * 3 + x) % 7) as f32 / 7.0);
        let plan = TilingPlan { tile: 8, overlap: 2, blend: Blend::Average };
        let out = filter_image(&p, &spec, &img, &plan).unwrap();
        prop_assert_eq!(out.dims(), (h, w));
        prop_assert_eq!(out, filter_image(&p, &spec, &img, &plan).unwrap());
    }
}
