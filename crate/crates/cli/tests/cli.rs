use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mvfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvfi")).args(args).output().expect("spawn mvfi")
}

fn ok(args: &[&str]) -> Output {
    let out = mvfi(args);
    assert!(out.status.success(), "mvfi {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

struct Work(TempDir);

impl Work {
    fn new() -> Self {
        Work(tempfile::tempdir().unwrap())
    }
    fn p(&self, s: &str) -> String {
        self.0.path().join(s).to_string_lossy().into_owned()
    }
    fn path(&self, s: &str) -> PathBuf {
        self.0.path().join(s)
    }
    fn synth(&self, name: &str, extra: &[&str]) {
        let out = self.p(name);
        let mut args = vec!["synth", "--out", &out, "--seed", "3", "--width", "64", "--height", "48"];
        args.extend_from_slice(extra);
        ok(&args);
    }
    fn weights(&self, name: &str, arch: &str, init: &str) -> String {
        let out = self.p(name);
        ok(&["init-weights", "--arch", arch, "--seed", "1", "--init", init, "--out", &out]);
        out
    }
}

fn pngs(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.starts_with(prefix) && n.ends_with(".png")
        })
        .collect();
    v.sort();
    v
}

fn interpolate(w: &Work, clip: &str, weights: &str, out: &str, extra: &[&str]) -> Value {
    let (frames, mvs, out) = (w.p(&format!("{clip}/frames")), w.p(&format!("{clip}/mvs.csv")), w.p(out));
    let mut args = vec!["interpolate", "--frames", &frames, "--mvs", &mvs, "--weights", weights, "--out", &out];
    args.extend_from_slice(extra);
    ok(&args);
    json(&Path::new(&out).join("manifest.json"))
}

#[test]
fn empty_sidecar_passes_every_pair_through() {
    let w = Work::new();
    w.synth("clip", &["--frames", "4"]);
    std::fs::write(w.path("empty.csv"), "").unwrap();
    let weights = w.weights("w.bin", "s", "zero-head");
    let out = w.p("out");
    ok(&["interpolate", "--frames", &w.p("clip/frames"), "--mvs", &w.p("empty.csv"), "--weights", &weights, "--out", &out]);
    let m = json(&w.path("out/manifest.json"));
    assert_eq!(m["passthrough"], 3);
    assert_eq!(m["written"], 0);
    assert!(pngs(&w.path("out"), "mid_").is_empty());
}

#[test]
fn zero_head_interpolation_matches_prealign_blend() {
    let w = Work::new();
    w.synth("clip", &["--frames", "3", "--mv-noise", "1", "--outlier-rate", "0.05"]);
    let weights = w.weights("w.bin", "s", "zero-head");
    interpolate(&w, "clip", &weights, "interp", &[]);
    ok(&["prealign", "--frames", &w.p("clip/frames"), "--mvs", &w.p("clip/mvs.csv"), "--out", &w.p("pre")]);
    let mids = pngs(&w.path("interp"), "mid_");
    let blends = pngs(&w.path("pre"), "blend_");
    assert_eq!(mids.len(), 2);
    assert_eq!(mids.len(), blends.len());
    for (a, b) in mids.iter().zip(&blends) {
        let a = image::open(a).unwrap().to_rgb8();
        let b = image::open(b).unwrap().to_rgb8();
        assert_eq!(a.as_raw(), b.as_raw());
    }
}

#[test]
fn thirty_frames_yield_twenty_nine_midframes() {
    let w = Work::new();
    w.synth("clip", &["--frames", "30", "--drop-last", "4"]);
    let weights = w.weights("w.bin", "s", "zero-head");
    let m = interpolate(&w, "clip", &weights, "out", &[]);
    assert_eq!(m["entries"].as_array().unwrap().len(), 29);
    assert_eq!(m["written"], 25);
    assert_eq!(m["passthrough"], 4);
    assert_eq!(pngs(&w.path("out"), "mid_").len(), 25);
}

#[test]
fn fuse_bn_flag_leaves_frames_unchanged() {
    let w = Work::new();
    w.synth("clip", &["--frames", "3", "--mv-noise", "1"]);
    let weights = w.weights("w.bin", "s", "random");
    interpolate(&w, "clip", &weights, "plain", &[]);
    let m = interpolate(&w, "clip", &weights, "fused", &["--fuse-bn"]);
    assert_eq!(m["fused"], true);
    let (mut same, mut total) = (0usize, 0usize);
    for (a, b) in pngs(&w.path("plain"), "mid_").iter().zip(&pngs(&w.path("fused"), "mid_")) {
        let a = image::open(a).unwrap().to_rgb8();
        let b = image::open(b).unwrap().to_rgb8();
        total += a.as_raw().len();
        same += a.as_raw().iter().zip(b.as_raw()).filter(|(x, y)| x == y).count();
    }
    assert!(total > 0);
    assert!(same as f64 / total as f64 >= 0.999, "{same}/{total} identical samples");
}

#[test]
fn fuse_command_removes_every_norm() {
    let w = Work::new();
    let weights = w.weights("w.bin", "s", "random");
    let out = w.p("fused.bin");
    ok(&["fuse", "--weights", &weights, "--out", &out, "--report", &w.p("fuse.json")]);
    let r = json(&w.path("fuse.json"));
    assert!(r["norm_nodes_before"].as_u64().unwrap() > 0);
    assert_eq!(r["norm_nodes_after"], 0);
    assert!(r["probe_max_abs_diff"].as_f64().unwrap() < 1e-4);

    // Already-fused weights have nothing left to fold.
    let again = mvfi(&["fuse", "--weights", &out, "--out", &w.p("twice.bin")]);
    assert!(!again.status.success());
}

#[test]
fn accum_lab_reports_scaled_below_unit() {
    let out = ok(&["accum-lab", "--seed", "7", "--stages", "3", "--trials", "5"]);
    let r = stdout_json(&out);
    assert_eq!(r["command"], "accum-lab");
    assert_eq!(r["scaled_below_unit_every_stage"], true);
    assert_eq!(r["curves"]["unit"].as_array().unwrap().len(), 3);
}

#[test]
fn quant_progression_rows() {
    let out = ok(&["quant", "--seed", "5", "--net", "accum", "--calib", "2", "--eval", "2"]);
    let r = stdout_json(&out);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows[0]["filter"], "fp32");
    assert!(rows.len() >= 5);
}

#[test]
fn ablate_ranks_production_above_zoh() {
    let w = Work::new();
    ok(&["ablate", "--seed", "2", "--n", "6", "--size", "64", "--report", &w.p("ablate.json")]);
    let r = json(&w.path("ablate.json"));
    let rows = r["rows"].as_array().unwrap();
    let psnr = |m: &str| rows.iter().find(|r| r["method"] == m).unwrap()["mean_psnr"].as_f64().unwrap();
    assert!(psnr("production") > psnr("zoh"));
    assert!(psnr("production-exact-mv") > psnr("naive"));
}

#[test]
fn prealign_beats_naive_and_production_beats_zoh() {
    let w = Work::new();
    w.synth("clip", &["--frames", "4", "--mv-noise", "2", "--outlier-rate", "0.05"]);
    let score = |profile: &str| {
        let out = w.p(&format!("pre_{profile}"));
        ok(&[
            "prealign", "--frames", &w.p("clip/frames"), "--mvs", &w.p("clip/mvs.csv"), "--gt", &w.p("clip/gt"),
            "--profile", profile, "--out", &out,
        ]);
        json(&Path::new(&out).join("prealign.json"))
    };
    let prod = score("production");
    let zoh = score("zoh");
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap();
    assert!(f(&prod, "mean_psnr_blend") > f(&prod, "mean_psnr_naive"));
    assert!(f(&prod, "mean_psnr_blend") > f(&zoh, "mean_psnr_blend"));
    assert_eq!(pngs(&w.path("pre_production"), "w0_").len(), 3);
    assert!(w.path("pre_production/flow_0000.flo").exists());
}

#[test]
fn weights_of_another_config_are_rejected() {
    let w = Work::new();
    w.synth("clip", &["--frames", "2"]);
    let weights = w.weights("m.bin", "m", "zero-head");
    let out = mvfi(&[
        "interpolate", "--frames", &w.p("clip/frames"), "--mvs", &w.p("clip/mvs.csv"), "--weights", &weights,
        "--arch", "s", "--out", &w.p("out"),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("shape"), "{err}");
}

#[test]
fn missing_input_fails_before_writing() {
    let w = Work::new();
    let weights = w.weights("w.bin", "s", "zero-head");
    let out = mvfi(&[
        "interpolate", "--frames", &w.p("nope"), "--mvs", &w.p("nope.csv"), "--weights", &weights, "--out",
        &w.p("out"),
    ]);
    assert!(!out.status.success());
    assert!(!w.path("out").exists());
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let w = Work::new();
    std::fs::write(w.path("run.cfg"), "seed = 4\nwidth = 40\nheight = 32\nframes = 5\nformat = ppm\n").unwrap();
    ok(&["synth", "--config", &w.p("run.cfg"), "--out", &w.p("clip"), "--frames", "2"]);
    let r = json(&w.path("clip/synth.json"));
    assert_eq!(r["seed"], 4);
    assert_eq!(r["frames"].as_array().unwrap().len(), 2);
    assert!(w.path("clip/frames/frame_0000.ppm").exists());
}

#[test]
fn y4m_input_and_output() {
    let w = Work::new();
    w.synth("clip", &["--frames", "3", "--format", "y4m"]);
    let weights = w.weights("w.bin", "s", "zero-head");
    let out = w.p("out");
    let y4m_out = w.p("out/double.y4m");
    ok(&[
        "interpolate", "--y4m", &w.p("clip/frames.y4m"), "--mvs", &w.p("clip/mvs.csv"), "--weights", &weights, "--out",
        &out, "--y4m-out", &y4m_out,
    ]);
    let seq = mvfi_cli::io::read_y4m_file(Path::new(&y4m_out)).unwrap();
    assert_eq!(seq.frames.len(), 5);
    assert_eq!(pngs(&w.path("out"), "mid_").len(), 2);
}

#[test]
fn bench_op_and_graph_modes() {
    let out = ok(&["bench", "--seed", "1", "--op", "conv3x3", "--size", "32", "--warmup", "2"]);
    let r = stdout_json(&out);
    assert_eq!(r["timing"]["samples_ns"].as_array().unwrap().len(), 50);
    assert!(r["timing"]["flops_per_byte"].as_f64().unwrap() > 0.0);

    let w = Work::new();
    let csv = w.p("nodes.csv");
    let out = ok(&["bench", "--seed", "1", "--size", "32", "--warmup", "1", "--iters", "2", "--csv", &csv]);
    let r = stdout_json(&out);
    let total: f64 = r["report"]["shares"].as_array().unwrap().iter().map(|s| s["share_pct"].as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-6, "{total}");
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 10);
}
