use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use ssdpose::eval::parse_key_value;
use ssdpose::inference::Detection;
use ssdpose::io::{format_detections, format_manifest, parse_detections, parse_manifest, Dataset};
use ssdpose::raster::Raster;
use ssdpose::targets::pose_bin;
use tempfile::TempDir;

fn ssdpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdpose"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ssdpose(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

/// Small dataset plus a checkpoint trained for a few steps.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        ok(&["generate", "--out", p(&f.data()), "--count", "12", "--seed", "3"]);
        ok(&[
            "train", "--data", p(&f.data()), "--out", p(&f.ckpt()), "--steps", "4",
            "--batch-size", "2", "--log", p(&f.path("fixture.log")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn ckpt(&self) -> PathBuf {
        self.path("model.ckpt")
    }
}

#[test]
fn generate_is_reproducible_and_guards_its_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--out", p(&a), "--count", "5", "--seed", "11"]);
    ok(&["generate", "--out", p(&b), "--count", "5", "--seed", "11"]);
    assert_eq!(sha(&a.join("manifest.txt")), sha(&b.join("manifest.txt")));

    let text = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(format_manifest(&parse_manifest(&text).unwrap()), text);

    let again = ssdpose(&["generate", "--out", p(&a), "--count", "5"]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("not empty"), "{}", stderr(&again));
    ok(&["generate", "--out", p(&a), "--count", "5", "--seed", "11", "--force"]);

    let zero = ssdpose(&["generate", "--out", p(&dir.path().join("z")), "--count", "0"]);
    assert_eq!(code(&zero), 2);
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ssdpose(&["train"])), 2);
    assert_eq!(code(&ssdpose(&["frobnicate"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[optim]\nlearning_rate = 0.1\n").unwrap();
    let out = ssdpose(&["generate", "--out", p(&dir.path().join("x")), "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssdpose(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("manifest.txt"), "{}", stderr(&out));
}

#[test]
fn ten_steps_give_ten_log_records() {
    let f = Fixture::new();
    let log = f.path("ten.log");
    ok(&[
        "train", "--data", p(&f.data()), "--out", p(&f.path("ten.ckpt")), "--steps", "10",
        "--batch-size", "2", "--log", p(&log),
    ]);
    let text = fs::read_to_string(&log).unwrap();
    let records: Vec<BTreeMap<String, String>> = text
        .lines()
        .map(|l| {
            l.split_whitespace()
                .map(|kv| {
                    let (k, v) = kv.split_once('=').expect("key=value");
                    (k.to_string(), v.to_string())
                })
                .collect()
        })
        .collect();
    assert_eq!(records.len(), 10);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["step"], (i + 1).to_string());
        for k in ["l_cls", "l_loc", "l_pose", "l_total", "lr"] {
            let v: f64 = r[k].parse().unwrap();
            assert!(v.is_finite());
        }
        let _: usize = r["n_matched"].parse().unwrap();
    }
    assert!(f.path("ten.ckpt").is_file());
}

#[test]
fn split_training_matches_uninterrupted_training() {
    let f = Fixture::new();
    let data = f.data();
    let (full, half, split) = (f.path("full.ckpt"), f.path("half.ckpt"), f.path("split.ckpt"));
    let (full_log, split_log) = (f.path("full.log"), f.path("split.log"));
    let common = ["--data", p(&data), "--steps", "6", "--batch-size", "2"];
    let mut args = vec!["train", "--out", p(&full), "--log", p(&full_log)];
    args.extend(common);
    ok(&args);

    let mut first = vec!["train", "--out", p(&half), "--log", p(&split_log), "--stop-after", "3"];
    first.extend(common);
    ok(&first);
    ok(&["train", "--data", p(&data), "--resume", p(&half), "--out", p(&split), "--log", p(&split_log)]);
    assert_eq!(fs::read_to_string(&full_log).unwrap(), fs::read_to_string(&split_log).unwrap());
    assert_eq!(sha(&full), sha(&split));
}

#[test]
fn resume_refuses_a_different_head() {
    let f = Fixture::new();
    let out = ssdpose(&[
        "train", "--data", p(&f.data()), "--resume", p(&f.ckpt()), "--out", p(&f.path("x.ckpt")),
        "--n-pose-bins", "24",
    ]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("8") && msg.contains("24"), "{msg}");
}

#[test]
fn divergence_exits_with_four_and_keeps_earlier_checkpoints() {
    let f = Fixture::new();
    let out = ssdpose(&[
        "train", "--data", p(&f.data()), "--out", p(&f.path("div.ckpt")), "--steps", "50",
        "--batch-size", "2", "--lr", "1e30", "--checkpoint-every", "1",
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite") || stderr(&out).contains("NaN") || stderr(&out).contains("finite"));
    assert!(f.path("div.step000001.ckpt").is_file());
    assert!(!f.path("div.ckpt").exists());
}

#[test]
fn oracle_detections_score_perfectly() {
    let f = Fixture::new();
    let ds = Dataset::open(&f.data()).unwrap();
    let dets = ds
        .entries
        .iter()
        .map(|e| {
            let d = e
                .objects
                .iter()
                .map(|o| Detection {
                    class_id: o.class_id,
                    score: 0.99,
                    box_: o.box_,
                    pose_bin: pose_bin(o.azimuth, 24),
                    pose_conf: 1.0,
                })
                .collect();
            (e.filename.clone(), d)
        })
        .collect();
    let file = f.path("oracle.txt");
    fs::write(&file, format_detections(&dets, 24)).unwrap();
    let out_dir = f.path("oracle_eval");
    ok(&["eval", "--data", p(&f.data()), "--detections", p(&file), "--out", p(&out_dir)]);
    let kv = parse_key_value(&fs::read_to_string(out_dir.join("metrics.txt")).unwrap());
    assert_eq!(kv["mAP"], "1");
    for n in [4, 8, 16, 24] {
        assert_eq!(kv[&format!("mAVP{n}")], "1", "{n}");
    }
}

#[test]
fn eval_is_repeatable_and_checks_merge_targets() {
    let f = Fixture::new();
    let (a, b) = (f.path("eval_a"), f.path("eval_b"));
    ok(&["eval", "--data", p(&f.data()), "--checkpoint", p(&f.ckpt()), "--out", p(&a)]);
    ok(&["eval", "--data", p(&f.data()), "--checkpoint", p(&f.ckpt()), "--out", p(&b)]);
    for name in ["metrics.txt", "report.txt", "pr.csv"] {
        assert_eq!(sha(&a.join(name)), sha(&b.join(name)), "{name}");
    }
    let bad = ssdpose(&["eval", "--data", p(&f.data()), "--checkpoint", p(&f.ckpt()), "--merge-from-fine", "16"]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("16") && stderr(&bad).contains(" 8 "), "{}", stderr(&bad));
    ok(&["eval", "--data", p(&f.data()), "--checkpoint", p(&f.ckpt()), "--merge-from-fine", "4"]);
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let f = Fixture::new();
    let mut bytes = fs::read(f.ckpt()).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = f.path("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let out = ssdpose(&["eval", "--data", p(&f.data()), "--checkpoint", p(&bad)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn blank_image_at_high_threshold_gives_an_empty_valid_file() {
    let f = Fixture::new();
    let blank = f.path("blank.png");
    Raster::new(1, 64, 64).save_png(&blank).unwrap();
    let out = f.path("blank.txt");
    ok(&["predict", "--checkpoint", p(&f.ckpt()), p(&blank), "--out", p(&out), "--score-thresh", "0.999999"]);
    let (dets, bins) = parse_detections(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(bins, Some(8));
    assert!(dets.values().all(Vec::is_empty));
}

#[test]
fn predictions_on_a_dataset_feed_back_into_eval() {
    let f = Fixture::new();
    let out = f.path("pred.txt");
    let overlays = f.path("overlays");
    ok(&[
        "predict", "--checkpoint", p(&f.ckpt()), p(&f.data()), "--out", p(&out),
        "--overlay-dir", p(&overlays), "--score-thresh", "0.01",
    ]);
    let (dets, _) = parse_detections(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(dets.len(), 12);
    assert!(dets.keys().all(|k| k.starts_with("images/")));
    assert_eq!(fs::read_dir(&overlays).unwrap().count(), 12);
    ok(&["eval", "--data", p(&f.data()), "--detections", p(&out)]);
}

#[test]
fn unreadable_images_are_skipped_unless_all_fail() {
    let f = Fixture::new();
    let junk = f.path("junk.png");
    fs::write(&junk, b"not a png").unwrap();
    let good = f.data().join("images/img_000000.png");
    let out = ssdpose(&["predict", "--checkpoint", p(&f.ckpt()), p(&junk), p(&good)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("junk.png"));
    let all_bad = ssdpose(&["predict", "--checkpoint", p(&f.ckpt()), p(&junk)]);
    assert_eq!(code(&all_bad), 3);
}

#[test]
fn overlay_arrow_points_along_the_bin_center() {
    use ssdpose::anchors::BoxGeom;
    use ssdpose::cli::render_overlay;

    let image = Raster::new(3, 32, 32);
    for bin in 0..8 {
        let det = Detection {
            class_id: 1,
            score: 0.5,
            box_: BoxGeom::new(0.5, 0.5, 0.8, 0.8),
            pose_bin: bin,
            pose_conf: 1.0,
        };
        let img = render_overlay(&image, &[det], 8);
        let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
        // Image rows grow downward, azimuth grows counterclockwise.
        let a = (45.0 * bin as f64).to_radians();
        let at = |r: f64| {
            let px = img.get_pixel((cx + r * a.cos()).round() as u32, (cy - r * a.sin()).round() as u32);
            px.0 != [0, 0, 0]
        };
        let len = 0.4 * 0.8 * img.width() as f64;
        assert!(at(0.5 * len) && at(0.8 * len), "bin {bin}");
        assert!(!at(-0.5 * len), "bin {bin} drawn backwards");
    }
}
