//! Commands of the `layerlens` tool. Each reads a [`RunConfig`], writes its
//! artifacts under an output directory and never touches its inputs.

pub mod shapes;
pub mod video;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::Rng as _;

use crate::compositor::{
    compose_scene, make_training_pair, read_pairs, read_pool, write_pair, write_pool, CropPools, ObjectClass,
    PairMode, SceneParams,
};
use crate::config::{HarvestMode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    detections_from_output, detections_to_text, image_iou, match_detections, MetricsReport, Truth,
};
use crate::harvest::{
    harvest_by_area, harvest_by_boxes, harvest_by_points, read_boxes, read_points, rgb_to_gray, split_by_focus,
    Harvest,
};
use crate::image::{complement, connected_components, median_projection, BinaryMask, Connectivity, Image};
use crate::imageio::{read_image, read_png_planes, write_atomic, write_imgf, PngPixels};
use crate::nn::{load_params, save_params, train, NetworkParams, NetworkSpec, PairSource, TrainOutcome};
use crate::rng::{item_stream, stream, Rng};
use crate::separate::{filter_image, recover_by_subtraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Harvest,
    Synth,
    Train,
    Infer,
    MedianBaseline,
    Eval,
    Demo,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Harvest => "harvest",
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::MedianBaseline => "median-baseline",
            Command::Eval => "eval",
            Command::Demo => "demo",
        })
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "harvest" => Command::Harvest,
            "synth" => Command::Synth,
            "train" => Command::Train,
            "infer" => Command::Infer,
            "median-baseline" => Command::MedianBaseline,
            "eval" => Command::Eval,
            "demo" => Command::Demo,
            other => return Err(format!("unknown command `{other}`")),
        })
    }
}

/// Runs `cmd`, writing under `out`. Returns the metrics for `eval` and `demo`.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Option<MetricsReport>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cmd {
        Command::Harvest => harvest_cmd(cfg, out).map(|_| None),
        Command::Synth => synth_cmd(cfg, out).map(|_| None),
        Command::Train => train_cmd(cfg, out).map(|_| None),
        Command::Infer => infer_cmd(cfg, out).map(|_| None),
        Command::MedianBaseline => median_cmd(cfg, out).map(|_| None),
        Command::Eval => eval_cmd(cfg, out).map(Some),
        Command::Demo => run_demo(cfg, Some(out)).map(|d| Some(d.report)),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::MissingKey { key: key.to_string() })
}

/// Loads a gray image; RGB PNGs are converted by luminance.
fn read_gray(path: &Path) -> Result<Image> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return read_image(path);
    }
    match read_png_planes(path)? {
        PngPixels::Gray(img) => Ok(img),
        PngPixels::Rgb([r, g, b]) => rgb_to_gray(&r, &g, &b),
    }
}

/// Image files (`.imgf`/`.png`) of a directory in name order, or the file itself.
fn image_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "imgf" | "png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn harvest_cmd(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let path = required(&cfg.harvest_image, "harvest_image")?;
    let mut img = read_gray(path)?;
    if cfg.invert {
        img = complement(&img);
    }
    let harvest = match cfg.harvest_mode {
        HarvestMode::Area => {
            let (crops, background) = harvest_by_area(&img, cfg.threshold_method(), cfg.min_area)?;
            let (target, clutter) = match (cfg.focus_low, cfg.focus_high) {
                (Some(lo), Some(hi)) => {
                    let split = split_by_focus(crops, cfg.focus_sigma, lo, hi)?;
                    info!("focus split: {} discarded", split.discarded.len());
                    (split.target, split.clutter)
                }
                _ => (crops, Vec::new()),
            };
            Harvest {
                target,
                clutter,
                background: Some(background),
                ..Harvest::default()
            }
        }
        HarvestMode::Points => {
            let points = read_points(required(&cfg.annotations, "annotations")?)?;
            harvest_by_points(&img, &points, &cfg.target_class, &cfg.clutter_class)?
        }
        HarvestMode::Boxes => {
            let boxes = read_boxes(required(&cfg.annotations, "annotations")?)?;
            let h = harvest_by_boxes(&img, &boxes, &cfg.box_harvest_params(), &mut stream(cfg.seed, "harvest"))?;
            if !h.skipped_boxes.is_empty() {
                info!("skipped {} boxes without an Otsu split", h.skipped_boxes.len());
            }
            h
        }
    };
    let prefix = stem(path);
    let mut pools = harvest.into_pools();
    for crop in pools.target.iter_mut().chain(pools.clutter.iter_mut()) {
        *crop = crop.clone().with_source_id(format!("{prefix}:{}", crop.source_id()));
    }
    info!("harvested {} target and {} clutter crops", pools.target.len(), pools.clutter.len());
    write_pool(&out.join("pool"), &pools)
}

fn load_pool(cfg: &RunConfig) -> Result<CropPools> {
    read_pool(required(&cfg.pool, "pool")?)
}

fn synth_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pools = load_pool(cfg)?;
    let params = cfg.scene_params();
    let dir = out.join("pairs");
    for i in 0..cfg.pairs {
        let pair = make_training_pair(cfg.pair_mode, &pools, &params, &mut item_stream(cfg.seed, "synth", 0, i as u64))?;
        write_pair(&dir, i, &pair)?;
    }
    info!("wrote {} {} pairs to {}", cfg.pairs, cfg.pair_mode, dir.display());
    Ok(())
}

/// Pair source composing fresh pairs from crop pools.
pub fn synthetic_source<'a>(
    pools: &'a CropPools,
    params: &'a SceneParams,
    mode: PairMode,
) -> impl PairSource + 'a {
    move |_step: usize, _slot: usize, rng: &mut Rng| {
        let pair = make_training_pair(mode, pools, params, rng)?;
        Ok((pair.input, pair.target))
    }
}

/// Pair source sampling uniformly from a fixed list.
pub fn list_source(pairs: &[(Image, Image)]) -> Result<impl PairSource + '_> {
    if pairs.is_empty() {
        return Err(Error::EmptyPool("training pairs"));
    }
    Ok(move |_step: usize, _slot: usize, rng: &mut Rng| {
        let (a, b) = &pairs[rng.random_range(0..pairs.len())];
        Ok((a.clone(), b.clone()))
    })
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let text: String = losses.iter().enumerate().map(|(i, l)| format!("{i}\t{l}\n")).collect();
    write_atomic(path, text.as_bytes())
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome<f32>> {
    let spec = cfg.network_spec();
    let tcfg = cfg.train_config();
    let outcome = if let Some(dir) = &cfg.pairs_dir {
        let pairs = read_pairs(dir)?;
        let mut source = list_source(&pairs)?;
        train(&mut source, &spec, &tcfg)?
    } else {
        let pools = load_pool(cfg)?;
        let params = cfg.scene_params();
        let mut source = synthetic_source(&pools, &params, cfg.pair_mode);
        train(&mut source, &spec, &tcfg)?
    };
    save_params(&outcome.params, &spec, out.join("params.llnp"))?;
    write_losses(&out.join("losses.tsv"), &outcome.losses)?;
    info!(
        "trained {} steps, final loss {:.6}",
        outcome.losses.len(),
        outcome.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(outcome)
}

fn infer_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.network_spec();
    let params = load_params(&spec, required(&cfg.params, "params")?)?;
    let plan = cfg.tiling_plan();
    let dir = out.join(if cfg.subtract { "subtracted" } else { "filtered" });
    for file in image_files(required(&cfg.input, "input")?)? {
        let img = read_gray(&file)?;
        let mut result = filter_image(&params, &spec, &img, &plan)?;
        if cfg.subtract {
            result = recover_by_subtraction(&img, &result)?;
        }
        write_imgf(&result, dir.join(format!("{}.imgf", stem(&file))))?;
    }
    Ok(())
}

fn median_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let files = image_files(required(&cfg.frames, "frames")?)?;
    let frames: Vec<Image> = files.iter().map(|f| read_gray(f)).collect::<Result<_>>()?;
    let median = median_projection(&frames)?;
    write_imgf(&median, out.join("median.imgf"))?;
    for (file, frame) in files.iter().zip(&frames) {
        let rec = recover_by_subtraction(frame, &median)?;
        write_imgf(&rec, out.join("median_subtracted").join(format!("{}.imgf", stem(file))))?;
    }
    Ok(())
}

/// Scores one output image against a truth mask whose 8-connected components
/// are the true objects.
pub fn evaluate_mask(output: &Image, truth: &BinaryMask, min_blob: usize, iou_threshold: f64) -> Result<(MetricsReport, String)> {
    let boxes = connected_components(truth, Connectivity::Eight)
        .stats()
        .into_iter()
        .map(|s| s.bbox)
        .collect();
    evaluate_output(output, &Truth::Boxes(boxes), truth, min_blob, iou_threshold)
}

/// Scores one output image: detections against `truth`, Otsu mask against `truth_mask`.
pub fn evaluate_output(
    output: &Image,
    truth: &Truth,
    truth_mask: &BinaryMask,
    min_blob: usize,
    iou_threshold: f64,
) -> Result<(MetricsReport, String)> {
    let dets = detections_from_output(output, min_blob);
    let assignment = match_detections(&dets.items, truth, iou_threshold);
    let pred_mask = dets.mask.unwrap_or_else(|| BinaryMask::new(output.height(), output.width()));
    let iou = image_iou(&pred_mask, truth_mask)?;
    Ok((MetricsReport::single(&assignment, iou, dets.degenerate), detections_to_text(&dets.items)))
}

fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let truth_dir = required(&cfg.truth, "truth")?;
    let mut reports = Vec::new();
    for file in image_files(required(&cfg.predictions, "predictions")?)? {
        let name = file.file_name().expect("listed file has a name");
        let pred = read_gray(&file)?;
        let truth = read_gray(&truth_dir.join(name))?.threshold(0.5);
        let (report, dets) = evaluate_mask(&pred, &truth, cfg.min_blob, cfg.iou_threshold)?;
        write_atomic(&out.join("detections").join(format!("{}.tsv", stem(&file))), dets.as_bytes())?;
        reports.push(report);
    }
    let report = MetricsReport::aggregate(&reports);
    report.write(out)?;
    Ok(report)
}

/// Result of the end-to-end synthetic experiment.
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub report: MetricsReport,
    pub per_scene: Vec<MetricsReport>,
    pub losses: Vec<f64>,
    pub params: NetworkParams<f32>,
}

/// Procedural crop pools for `demo`, drawn from the `synth` stream.
pub fn demo_pools(seed: u64) -> Result<CropPools> {
    shapes::procedural_pools(32, &mut stream(seed, "synth"))
}

/// Trains a target-preserving filter on procedural scenes and scores it on
/// `eval_scenes` held-out scenes against their placement records.
pub fn run_demo(cfg: &RunConfig, out: Option<&Path>) -> Result<DemoOutcome> {
    let pools = demo_pools(cfg.seed)?;
    let params = cfg.scene_params();
    let spec = cfg.network_spec();
    let tcfg = cfg.train_config();
    let mode = PairMode::TargetPreserving;
    let outcome = if cfg.train_scenes > 0 {
        let pairs: Vec<(Image, Image)> = (0..cfg.train_scenes)
            .map(|i| {
                let p = make_training_pair(mode, &pools, &params, &mut item_stream(cfg.seed, "synth", 0, i as u64))?;
                Ok((p.input, p.target))
            })
            .collect::<Result<_>>()?;
        let mut source = list_source(&pairs)?;
        train(&mut source, &spec, &tcfg)?
    } else {
        train(&mut synthetic_source(&pools, &params, mode), &spec, &tcfg)?
    };
    let (report, per_scene) = evaluate_demo(cfg, &pools, &spec, &outcome.params, out)?;
    if let Some(out) = out {
        save_params(&outcome.params, &spec, out.join("params.llnp"))?;
        write_losses(&out.join("losses.tsv"), &outcome.losses)?;
        report.write(out)?;
    }
    Ok(DemoOutcome {
        report,
        per_scene,
        losses: outcome.losses,
        params: outcome.params,
    })
}

/// Held-out evaluation of the demo; scenes come from the `eval` stream.
pub fn evaluate_demo(
    cfg: &RunConfig,
    pools: &CropPools,
    spec: &NetworkSpec,
    params: &NetworkParams<f32>,
    out: Option<&Path>,
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    let scene_params = cfg.scene_params();
    let plan = cfg.tiling_plan();
    let mut reports = Vec::with_capacity(cfg.eval_scenes);
    for i in 0..cfg.eval_scenes {
        let scene = compose_scene(pools, &scene_params, &mut item_stream(cfg.seed, "eval", 0, i as u64))?;
        let output = filter_image(params, spec, &scene.composite, &plan)?;
        let truth = Truth::Boxes(scene.placements_of(ObjectClass::Target).map(|p| p.support_bbox()).collect());
        let (report, dets) = evaluate_output(&output, &truth, &scene.target_mask(), cfg.demo_min_blob, cfg.iou_threshold)?;
        if let Some(out) = out {
            let dir = out.join("scenes");
            write_imgf(&scene.composite, dir.join(format!("scene_{i:03}_input.imgf")))?;
            write_imgf(&output, dir.join(format!("scene_{i:03}_output.imgf")))?;
            write_imgf(&scene.target_layer, dir.join(format!("scene_{i:03}_target_layer.imgf")))?;
            write_atomic(&dir.join(format!("scene_{i:03}_detections.tsv")), dets.as_bytes())?;
        }
        reports.push(report);
    }
    Ok((MetricsReport::aggregate(&reports), reports))
}
