//! Video-mode experiment: train on consecutive frames so the network learns
//! the static scene, recover moving objects by subtraction, and compare with
//! the temporal median on a video where one object never moves.

use crate::compositor::{make_synthetic_video, AugmentConfig, MotionModel, PlaceOptions, SyntheticVideo, UniformRange, VideoParams};
use crate::error::Result;
use crate::eval::{image_iou, MetricsReport, Truth};
use crate::image::{median_projection, BBox, BinaryMask, Image};
use crate::nn::{train, LossKind, NetworkParams, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, item_stream, stream};
use crate::separate::{filter_image, recover_by_subtraction, Blend, TilingPlan};

use super::{evaluate_output, list_source, shapes};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoExperiment {
    pub seed: u64,
    pub frame_size: usize,
    pub n_frames: usize,
    /// Videos whose objects all move.
    pub moving_videos: usize,
    pub n_objects: usize,
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub min_blob: usize,
    pub iou_threshold: f64,
}

impl VideoExperiment {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            frame_size: 64,
            n_frames: 32,
            moving_videos: 4,
            n_objects: 3,
            spec: NetworkSpec::new(2, 8),
            train: TrainConfig {
                loss: LossKind::L1,
                batch_size: 4,
                patch_size: 64,
                steps: 3000,
                seed: derive_seed(seed, "train", &[]),
                ..TrainConfig::default()
            },
            min_blob: 20,
            iou_threshold: 0.5,
        }
    }

    fn place(&self) -> PlaceOptions {
        PlaceOptions {
            max_overlap: 0.0,
            max_attempts: 50,
            augment: AugmentConfig {
                rotation: UniformRange::new(0.0, 360.0),
                hflip: true,
                vflip: true,
                scale: UniformRange::new(0.9, 1.1),
                gain: UniformRange::new(0.9, 1.1),
                bias: UniformRange::fixed(0.0),
                background_fill: UniformRange::fixed(0.0),
            },
        }
    }

    fn video(&self, index: u64, static_objects: usize) -> Result<SyntheticVideo> {
        let pools = shapes::procedural_pools(16, &mut stream(self.seed, "synth"))?;
        let background =
            shapes::textured_background(self.frame_size, self.frame_size, &mut item_stream(self.seed, "background", 0, index));
        let params = VideoParams {
            n_objects: self.n_objects,
            static_objects,
            motion: MotionModel::Resample,
            place: self.place(),
        };
        make_synthetic_video(
            &background,
            &pools.target,
            self.n_frames,
            &params,
            &mut item_stream(self.seed, "video", 0, index),
        )
    }
}

#[derive(Debug, Clone)]
pub struct VideoOutcome {
    /// Detections after subtraction, pooled over every frame of every video.
    pub report: MetricsReport,
    /// Fraction of the static object's pixels the median keeps at least half of.
    pub median_static_retained: f64,
    /// Mean IoU of the median-subtraction mask with the static object, per frame.
    pub median_static_iou: f64,
    /// Mean IoU of the network-subtraction mask with the static object, per frame.
    pub network_static_iou: f64,
    pub losses: Vec<f64>,
    pub params: NetworkParams<f32>,
}

/// Predicted pixels near `object`, compared with its mask.
fn local_iou(pred: &BinaryMask, object: &BinaryMask, bbox: BBox, margin: usize) -> Result<f64> {
    let (h, w) = pred.dims();
    let top = bbox.top.saturating_sub(margin);
    let left = bbox.left.saturating_sub(margin);
    let bottom = (bbox.bottom() + margin).min(h);
    let right = (bbox.right() + margin).min(w);
    let near = BinaryMask::from_fn(h, w, |r, c| (top..bottom).contains(&r) && (left..right).contains(&c) && pred.get(r, c));
    image_iou(&near, object)
}

/// Runs the experiment: trains on consecutive frames of `moving_videos` videos
/// with every object moving, then scores every frame of those videos plus one
/// held-out video whose first object never moves.
pub fn run_video_experiment(exp: &VideoExperiment) -> Result<VideoOutcome> {
    let mut videos = (0..exp.moving_videos as u64)
        .map(|v| exp.video(v, 0))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Image, Image)> = videos
        .iter()
        .flat_map(|v| v.consecutive_pairs().map(|(a, b)| (a.clone(), b.clone())))
        .collect();
    let outcome = train(&mut list_source(&pairs)?, &exp.spec, &exp.train)?;
    videos.push(exp.video(exp.moving_videos as u64, 1)?);
    let plan = TilingPlan {
        tile: exp.frame_size,
        overlap: 0,
        blend: Blend::Average,
    };

    let mut reports = Vec::new();
    for video in &videos {
        for (t, frame) in video.frames.iter().enumerate() {
            let background = filter_image(&outcome.params, &exp.spec, frame, &plan)?;
            let recovered = recover_by_subtraction(frame, &background)?;
            let truth = Truth::Boxes(video.placements[t].iter().map(|p| p.support_bbox()).collect());
            let mask = video.target_layers[t].threshold(0.0);
            let (report, _) = evaluate_output(&recovered, &truth, &mask, exp.min_blob, exp.iou_threshold)?;
            reports.push(report);
        }
    }

    let stat = videos.last().expect("static video");
    let object = &stat.placements[0][0];
    let (h, w) = stat.frames[0].dims();
    let object_mask = object.canvas_mask(h, w);
    let bbox = object.support_bbox();
    let median = median_projection(&stat.frames)?;
    let mut kept = 0usize;
    for r in 0..h {
        for c in 0..w {
            if object_mask.get(r, c) {
                let obj = stat.target_layers[0].get(r, c) as f64;
                let excess = median.get(r, c) as f64 - stat.background.get(r, c) as f64;
                kept += (excess >= 0.5 * obj) as usize;
            }
        }
    }
    let mut median_iou = 0.0;
    let mut network_iou = 0.0;
    for frame in &stat.frames {
        let by_median = recover_by_subtraction(frame, &median)?;
        let background = filter_image(&outcome.params, &exp.spec, frame, &plan)?;
        let by_network = recover_by_subtraction(frame, &background)?;
        for (img, acc) in [(&by_median, &mut median_iou), (&by_network, &mut network_iou)] {
            let dets = crate::eval::detections_from_output(img, exp.min_blob);
            let mask = dets.mask.unwrap_or_else(|| BinaryMask::new(h, w));
            *acc += local_iou(&mask, &object_mask, bbox, 3)?;
        }
    }
    let n = stat.frames.len() as f64;
    Ok(VideoOutcome {
        report: MetricsReport::aggregate(&reports),
        median_static_retained: kept as f64 / object_mask.count() as f64,
        median_static_iou: median_iou / n,
        network_static_iou: network_iou / n,
        losses: outcome.losses,
        params: outcome.params,
    })
}
