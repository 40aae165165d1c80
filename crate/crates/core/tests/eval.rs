mod common;

use common::*;
use layerlens::eval::{
    candidate_pairs, detections_from_output, image_iou, match_detections, prf1, two_sample_pvalue, z_factor,
    Detection, Truth,
};
use layerlens::image::{Connectivity, Image};
use layerlens::BBox;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_box(r: &mut rand_chacha::ChaCha8Rng) -> BBox {
    BBox::new(r.random_range(0..30), r.random_range(0..30), r.random_range(2..14), r.random_range(2..14))
}

fn det(b: BBox) -> Detection {
    Detection {
        bbox: b,
        area: b.area(),
        centroid: (b.top as f64 + (b.height as f64 - 1.0) / 2.0, b.left as f64 + (b.width as f64 - 1.0) / 2.0),
    }
}

/// Truth boxes jittered from the predictions so IoU ties and near-misses occur.
fn instance(seed: u64) -> (Vec<Detection>, Vec<BBox>) {
    let mut r = rng(seed);
    let np = r.random_range(0..=8);
    let nt = r.random_range(0..=8);
    let preds: Vec<BBox> = (0..np).map(|_| random_box(&mut r)).collect();
    let truth: Vec<BBox> = (0..nt)
        .map(|_| {
            if !preds.is_empty() && r.random_bool(0.7) {
                let b = preds[r.random_range(0..preds.len())];
                BBox::new(b.top + r.random_range(0..3), b.left + r.random_range(0..3), b.height, b.width)
            } else {
                random_box(&mut r)
            }
        })
        .collect();
    (preds.into_iter().map(det).collect(), truth)
}

#[test]
fn greedy_matching_against_exhaustive_optimum() {
    let mut suboptimal = Vec::new();
    for seed in 0..400 {
        let (preds, truth) = instance(seed);
        let boxes: Vec<BBox> = preds.iter().map(|d| d.bbox).collect();
        let cents: Vec<(f64, f64)> = preds.iter().map(|d| d.centroid).collect();
        let t = Truth::Boxes(truth.clone());
        let allowed: Vec<(usize, usize)> = candidate_pairs(&boxes, &cents, &t, 0.5).iter().map(|&(_, i, j)| (i, j)).collect();
        let a = match_detections(&preds, &t, 0.5);
        let best = max_matching(preds.len(), truth.len(), &allowed);
        assert!(a.tp() <= best);
        if a.tp() < best {
            suboptimal.push((seed, a.tp(), best));
        }
        // Every match is an allowed pair.
        assert!(a.matches.iter().all(|m| allowed.contains(m)));
    }
    // Greedy by IoU is not optimal in general; report how often it falls short.
    eprintln!("greedy below optimum on {} of 400 instances: {suboptimal:?}", suboptimal.len());
    assert!(suboptimal.len() <= 20, "{suboptimal:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matching_is_a_partition(seed: u64, points: bool) {
        let (preds, truth) = instance(seed);
        let t = if points {
            Truth::Points(truth.iter().map(|b| (b.top as f64 + 1.0, b.left as f64 + 1.0)).collect())
        } else {
            Truth::Boxes(truth.clone())
        };
        let a = match_detections(&preds, &t, 0.5);
        let mut ps: Vec<usize> = a.matches.iter().map(|m| m.0).chain(a.false_positives.iter().copied()).collect();
        let mut ts: Vec<usize> = a.matches.iter().map(|m| m.1).chain(a.false_negatives.iter().copied()).collect();
        ps.sort_unstable();
        ts.sort_unstable();
        prop_assert_eq!(ps, (0..preds.len()).collect::<Vec<_>>());
        prop_assert_eq!(ts, (0..truth.len()).collect::<Vec<_>>());
        if let Truth::Points(pts) = &t {
            for &(i, j) in &a.matches {
                prop_assert!(preds[i].bbox.contains_point(pts[j].0, pts[j].1));
            }
        }
    }

    #[test]
    fn scores_ignore_detection_order(seed: u64) {
        let (mut preds, truth) = instance(seed);
        let t = Truth::Boxes(truth);
        let before = prf1(&match_detections(&preds, &t, 0.5));
        preds.shuffle(&mut rng(seed ^ 1));
        let after = prf1(&match_detections(&preds, &t, 0.5));
        prop_assert_eq!((before.tp, before.fp, before.fn_), (after.tp, after.fp, after.fn_));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(seed: u64) {
        let mut r = rng(seed);
        let a = random_mask(12, 12, 0.4, &mut r);
        let b = random_mask(12, 12, 0.4, &mut r);
        let x = image_iou(&a, &b).unwrap();
        prop_assert_eq!(x, image_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        let inter = a.intersection_count(&b).unwrap() as f64;
        let union = a.union(&b).unwrap().count() as f64;
        prop_assert_eq!(x, if union == 0.0 { 1.0 } else { inter / union });
    }

    #[test]
    fn z_grows_with_separation(seed: u64, n in 3usize..30) {
        let mut r = rng(seed);
        let pos: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
        let neg: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
        let mut last = f64::NEG_INFINITY;
        for k in 1..10 {
            let shifted: Vec<f64> = pos.iter().map(|v| v + 10.0 * k as f64).collect();
            let z = z_factor(&shifted, &neg).unwrap();
            prop_assert!(z > last);
            last = z;
        }
    }

    #[test]
    fn pvalue_is_symmetric(seed: u64, n in 2usize..40, m in 2usize..40) {
        let mut r = rng(seed);
        let a: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
        let b: Vec<f64> = (0..m).map(|_| 0.5 + 2.0 * standard_normal(&mut r)).collect();
        let p = two_sample_pvalue(&a, &b).unwrap();
        prop_assert_eq!(p, two_sample_pvalue(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn detections_match_flood_fill(seed: u64, min_blob in 1usize..40) {
        let mut r = rng(seed);
        let mask = random_mask(32, 32, 0.35, &mut r);
        let img = Image::from_fn(32, 32, |y, x| if mask.get(y, x) { 0.9 } else { 0.1 });
        let d = detections_from_output(&img, min_blob);
        let (labels, count) = flood_fill_labels(&mask, Connectivity::Eight);
        let mut want = Vec::new();
        for l in 1..=count as u32 {
            let px: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
            if px.len() >= min_blob {
                let rows: Vec<usize> = px.iter().map(|i| i / 32).collect();
                let cols: Vec<usize> = px.iter().map(|i| i % 32).collect();
                let (t, b) = (*rows.iter().min().unwrap(), *rows.iter().max().unwrap());
                let (le, ri) = (*cols.iter().min().unwrap(), *cols.iter().max().unwrap());
                want.push((BBox::new(t, le, b - t + 1, ri - le + 1), px.len()));
            }
        }
        let got: Vec<(BBox, usize)> = d.items.iter().map(|x| (x.bbox, x.area)).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn pvalue_agrees_with_permutation_test() {
    let mut r = rng(11);
    let mut checked = 0;
    for shift in [0.3, 0.6, 0.9, 1.2] {
        for _ in 0..5 {
            let a: Vec<f64> = (0..30).map(|_| standard_normal(&mut r)).collect();
            let b: Vec<f64> = (0..30).map(|_| shift + standard_normal(&mut r)).collect();
            let p = two_sample_pvalue(&a, &b).unwrap();
            let q = permutation_pvalue(&a, &b, 20_000, &mut r);
            // Below ~1e-3 the permutation estimate has too few hits to compare.
            if q >= 2e-3 {
                assert!(p / q < 10.0 && q / p < 10.0, "shift {shift}: welch {p} vs permutation {q}");
                checked += 1;
            } else {
                assert!(p < 2e-2, "shift {shift}: welch {p} vs permutation {q}");
            }
        }
    }
    assert!(checked >= 8);
}

#[test]
fn well_separated_groups_give_tiny_pvalue() {
    let mut r = rng(12);
    for _ in 0..10 {
        let a: Vec<f64> = (0..30).map(|_| standard_normal(&mut r)).collect();
        let b: Vec<f64> = (0..30).map(|_| 5.0 + standard_normal(&mut r)).collect();
        let p = two_sample_pvalue(&a, &b).unwrap();
        assert!(p < 1e-6, "{p}");
        // No permutation of the pooled sample beats the observed split.
        assert!(permutation_pvalue(&a, &b, 2000, &mut r) <= 1.0 / 2001.0 + 1e-12);
    }
}

#[test]
fn perfect_detections_score_one() {
    let truth: Vec<BBox> = (0..5).map(|k| BBox::new(k * 12, k * 10, 8, 6)).collect();
    let preds: Vec<Detection> = truth.iter().copied().map(det).collect();
    let p = prf1(&match_detections(&preds, &Truth::Boxes(truth), 0.5));
    assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    let none = prf1(&match_detections(&[], &Truth::Boxes(vec![BBox::new(0, 0, 2, 2)]), 0.5));
    assert_eq!((none.precision, none.recall, none.fn_), (0.0, 0.0, 1));
}
