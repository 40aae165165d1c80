//! Drives the `layerlens` binary through the whole workflow.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layerlens::config::RunConfig;
use layerlens::image::Image;
use layerlens::imageio::{read_imgf, write_imgf, write_png, BitDepth};
use proptest::prelude::*;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerlens"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn layerlens")
}

fn run_cfg(cmd: &str, cfg: &Path, out: &Path) -> Output {
    run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

/// Bright squares of two sizes on a dim ramp.
fn field() -> Image {
    Image::from_fn(96, 96, |r, c| {
        let big = (10..30).contains(&r) && (10..30).contains(&c) || (50..72).contains(&r) && (40..60).contains(&c);
        let small = (80..84).contains(&r) && (80..84).contains(&c);
        if big || small {
            0.9
        } else {
            0.05 + 0.001 * c as f32
        }
    })
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate", "--config", "x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let unknown = write_cfg(d, "unknown.cfg", "seed = 1\nstepz = 3\n");
    let o = run_cfg("train", &unknown, d);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("stepz") && msg.contains('2'), "{msg}");
    let no_seed = write_cfg(d, "noseed.cfg", "steps = 3\n");
    assert_eq!(run_cfg("train", &no_seed, d).status.code(), Some(2));
    let bad_patch = write_cfg(d, "patch.cfg", "seed = 1\npatch_size = 63\n");
    assert_eq!(run_cfg("train", &bad_patch, d).status.code(), Some(2));

    assert_eq!(run_cfg("train", &d.join("missing.cfg"), d).status.code(), Some(3));
    let missing_input = write_cfg(d, "io.cfg", "seed = 1\nharvest_image = /nonexistent/x.png\n");
    assert_eq!(run_cfg("harvest", &missing_input, d).status.code(), Some(3));

    // A huge step size drives the parameters, then the loss, to infinity.
    layerlens::compositor::write_pool(&d.join("pool"), &layerlens::pipeline::demo_pools(1).unwrap()).unwrap();
    let blowup = write_cfg(
        d,
        "blowup.cfg",
        &format!(
            "seed = 1\npool = {}\nloss = l2\nlearning_rate = 1e38\nsteps = 5\nbatch_size = 1\npatch_size = 32\nbase_channels = 2\n",
            d.join("pool/manifest.tsv").display()
        ),
    );
    assert_eq!(run_cfg("train", &blowup, &d.join("blowup")).status.code(), Some(4));
}

#[test]
fn workflow_harvest_synth_train_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_png(&field(), d.join("field.png"), BitDepth::Sixteen).unwrap();
    let harvest = write_cfg(
        d,
        "harvest.cfg",
        &format!("seed = 3\nharvest_image = {}\nmin_area = 100\n", d.join("field.png").display()),
    );
    ok(&run_cfg("harvest", &harvest, d));
    let manifest = fs::read_to_string(d.join("pool/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.contains("\ttarget\t")).count(), 2, "{manifest}");
    assert_eq!(manifest.lines().filter(|l| l.contains("\tbackground\t")).count(), 1);

    let common = format!(
        "seed = 3\npool = {}\nscene_height = 64\nscene_width = 64\nscale_min = 0.5\nscale_max = 0.6\nn_clutter_min = 0\nn_clutter_max = 0\n\
         pairs = 3\nbase_channels = 4\nsteps = 4\nbatch_size = 2\npatch_size = 32\ntile = 32\noverlap = 8\n",
        d.join("pool/manifest.tsv").display()
    );
    let synth = write_cfg(d, "synth.cfg", &common);
    ok(&run_cfg("synth", &synth, d));
    let pairs: Vec<_> = fs::read_dir(d.join("pairs")).unwrap().collect();
    assert!(pairs.len() >= 6);

    let train = write_cfg(d, "train.cfg", &format!("{common}pairs_dir = {}\n", d.join("pairs").display()));
    let t1 = d.join("t1");
    ok(&run_cfg("train", &train, &t1));
    let t2 = d.join("t2");
    ok(&run_cfg("train", &train, &t2));
    assert_eq!(fs::read(t1.join("params.llnp")).unwrap(), fs::read(t2.join("params.llnp")).unwrap());
    assert_eq!(fs::read_to_string(t1.join("losses.tsv")).unwrap().lines().count(), 4);

    write_imgf(&field(), d.join("frames/a.imgf")).unwrap();
    let infer = write_cfg(
        d,
        "infer.cfg",
        &format!(
            "{common}params = {}\ninput = {}\nsubtract = true\n",
            t1.join("params.llnp").display(),
            d.join("frames").display()
        ),
    );
    ok(&run_cfg("infer", &infer, d));
    let sub = read_imgf(d.join("subtracted/a.imgf")).unwrap();
    assert_eq!(sub.dims(), (96, 96));
    assert!(sub.pixels().iter().all(|&v| v >= 0.0));

    // Wrong spec for the saved parameters.
    let wrong = write_cfg(
        d,
        "wrong.cfg",
        &format!(
            "{}params = {}\ninput = {}\n",
            common.replace("base_channels = 4", "base_channels = 5"),
            t1.join("params.llnp").display(),
            d.join("frames").display()
        ),
    );
    assert_eq!(run_cfg("infer", &wrong, d).status.code(), Some(3));
}

#[test]
fn median_baseline_and_perfect_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bg = Image::from_fn(40, 40, |r, c| 0.1 + 0.002 * (r + c) as f32);
    for t in 0..5 {
        let frame = Image::from_fn(40, 40, |r, c| {
            let inside = (r as isize - 8 - 6 * t as isize).abs() <= 2 && (c as isize - 20).abs() <= 2;
            bg.get(r, c) + if inside { 0.5 } else { 0.0 }
        });
        write_imgf(&frame, d.join(format!("frames/f{t}.imgf"))).unwrap();
    }
    let cfg = write_cfg(d, "median.cfg", &format!("seed = 1\nframes = {}\n", d.join("frames").display()));
    ok(&run_cfg("median-baseline", &cfg, d));
    assert_eq!(read_imgf(d.join("median.imgf")).unwrap(), bg);
    assert_eq!(fs::read_dir(d.join("median_subtracted")).unwrap().count(), 5);

    let truth = Image::from_fn(64, 64, |r, c| ((5..25).contains(&r) && (5..25).contains(&c) || (30..60).contains(&r) && (35..55).contains(&c)) as u8 as f32);
    write_imgf(&truth, d.join("truth/s.imgf")).unwrap();
    write_imgf(&truth, d.join("pred/s.imgf")).unwrap();
    let eval = write_cfg(
        d,
        "eval.cfg",
        &format!("seed = 1\npredictions = {}\ntruth = {}\n", d.join("pred").display(), d.join("truth").display()),
    );
    let o = run_cfg("eval", &eval, &d.join("eval"));
    ok(&o);
    let report = fs::read_to_string(d.join("eval/metrics.tsv")).unwrap();
    assert!(report.lines().any(|l| l == "f1\t1"), "{report}");
    assert!(report.lines().any(|l| l == "iou\t1"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["tp"], 2);
    assert_eq!(fs::read_to_string(d.join("eval/detections/s.tsv")).unwrap().lines().count(), 3);
}

#[test]
fn demo_with_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "demo.cfg", "seed = 7\n");
    let out = dir.path().join("demo");
    let o = run_cfg("demo", &cfg, &out);
    ok(&o);
    let report = fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("f1\t")));
    assert!(report.lines().any(|l| l.starts_with("iou\t")));
    assert_eq!(String::from_utf8_lossy(&o.stdout), report);
    assert!(out.join("params.llnp").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(seed: u64, steps in 1usize..100_000, lr in 1e-9f64..1.0, slope in 0.0f64..1.0, subtract: bool, class in "[a-z][a-z0-9_]{0,12}") {
        let mut cfg = RunConfig::with_seed(seed);
        cfg.steps = steps;
        cfg.learning_rate = lr;
        cfg.leaky_slope = slope;
        cfg.subtract = subtract;
        cfg.target_class = class;
        cfg.pool = Some(PathBuf::from("/data/pool dir/manifest.tsv"));
        let text = cfg.serialize();
        prop_assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
