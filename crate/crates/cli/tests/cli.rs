use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoothfool::net::{save_weights, LayerSpec};
use smoothfool::{Network, Tensor};
use smoothfool_cli::export::{export_image, ImageMode};

const SAMPLES: usize = 12;

/// A random linear model plus IDX test files it classifies perfectly.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = [LayerSpec::Flatten, LayerSpec::Dense { inputs: 784, outputs: 10 }];
    let net = Network::initialize(vec![1, 28, 28], &specs, &mut rng).unwrap();
    save_weights(&net, dir.path().join("model.sfw")).unwrap();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..SAMPLES {
        let img: Vec<u8> = (0..784).map(|_| rng.gen_range(60..=200)).collect();
        let x = Tensor::from_fn(&[1, 28, 28], |j| img[j] as f64 / 255.0);
        labels.push(net.predict(&x).unwrap() as u8);
        pixels.extend(img);
    }
    let mnist = dir.path().join("mnist");
    fs::create_dir(&mnist).unwrap();
    let mut images = vec![0, 0, 8, 3];
    for n in [SAMPLES as u32, 28, 28] {
        images.extend(n.to_be_bytes());
    }
    images.extend(pixels);
    fs::write(mnist.join("t10k-images-idx3-ubyte"), images).unwrap();
    let mut idx_labels = vec![0, 0, 8, 1];
    idx_labels.extend((SAMPLES as u32).to_be_bytes());
    idx_labels.extend(labels);
    fs::write(mnist.join("t10k-labels-idx1-ubyte"), idx_labels).unwrap();
    dir
}

fn smoothfool(dir: &Path, args: &[&str]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smoothfool"));
    cmd.args(args)
        .arg("--mnist-dir")
        .arg(dir.join("mnist"))
        .arg("--model-path")
        .arg(dir.join("model.sfw"))
        .env_remove("SMOOTHFOOL_OUT_DIR")
        .env("RUST_LOG", "warn")
        .current_dir(dir);
    cmd.output().unwrap()
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join("runs").join(name)
}

fn without_wall_time(manifest: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_s").expect("manifest records wall time");
    v
}

#[test]
fn graymap_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Tensor::from_fn(&[1, 9, 7], |_| rng.gen::<f64>());
    let path = dir.path().join("t.pgm");
    export_image(&t, &path, ImageMode::Raw).unwrap();
    let img = image::open(&path).unwrap().into_luma8();
    assert_eq!(img.dimensions(), (7, 9));
    for (v, p) in t.data().iter().zip(img.as_raw()) {
        assert!((v - *p as f64 / 255.0).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn pixmap_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Tensor::from_fn(&[3, 4, 5], |_| rng.gen::<f64>());
    let path = dir.path().join("t.ppm");
    export_image(&t, &path, ImageMode::Raw).unwrap();
    let img = image::open(&path).unwrap().into_rgb8();
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..5 {
                let stored = img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
                assert!((t.data()[c * 20 + y * 5 + x] - stored).abs() <= 1.0 / 255.0);
            }
        }
    }
}

#[test]
fn batch_runs_are_reproducible() {
    let dir = workspace();
    let d = dir.path();
    for run in ["a", "b"] {
        let o = smoothfool(d, &["attack-batch", "--samples", "6", "--workers", "2", "--output-dir", &format!("runs/{run}")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(without_wall_time(&out(d, "a/manifest.json")), without_wall_time(&out(d, "b/manifest.json")));
    for file in ["outcomes.jsonl", "summary.json", "per_class.csv", "perturbations/00003.sft"] {
        assert_eq!(fs::read(out(d, "a").join(file)).unwrap(), fs::read(out(d, "b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn worker_count_does_not_change_records() {
    let dir = workspace();
    let d = dir.path();
    for (run, workers) in [("one", "1"), ("three", "3")] {
        let o = smoothfool(d, &["attack-batch", "--samples", "6", "--workers", workers, "--output-dir", &format!("runs/{run}")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(out(d, "one/outcomes.jsonl")).unwrap(), fs::read(out(d, "three/outcomes.jsonl")).unwrap());
}

#[test]
fn manifest_describes_the_run() {
    let dir = workspace();
    let d = dir.path();
    let o = smoothfool(d, &["attack", "--first-index", "2", "--output-dir", "runs/one"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = without_wall_time(&out(d, "one/manifest.json"));
    assert_eq!(m["command"], "attack");
    assert_eq!(m["config"]["first_index"], 2);
    assert!(m["config"].get("output_dir").is_none());
    assert_eq!(m["models"][0]["sha256"].as_str().unwrap().len(), 64);
    for file in m["outputs"].as_array().unwrap() {
        assert!(out(d, "one").join(file.as_str().unwrap()).exists());
    }
    let r = Tensor::load(out(d, "one/r.sft")).unwrap();
    let outcome: serde_json::Value = serde_json::from_str(&fs::read_to_string(out(d, "one/outcome.json")).unwrap()).unwrap();
    assert_eq!(outcome["status"], "success");
    assert!((outcome["l2"].as_f64().unwrap() - r.norm_l2()).abs() < 1e-12);
}

#[test]
fn metrics_recompute_matches_the_batch() {
    let dir = workspace();
    let d = dir.path();
    let o = smoothfool(d, &["attack-batch", "--samples", "5", "--output-dir", "runs/batch"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = smoothfool(d, &["metrics", "--input-dir", "runs/batch", "--output-dir", "runs/metrics"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |p: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(out(d, p)).unwrap()).unwrap() };
    let (batch, metrics) = (read("batch/summary.json"), read("metrics/metrics.json"));
    for key in ["omega_bar", "omega_bar_n", "median_omega_n", "mean_l2"] {
        let (a, b) = (batch["roughness"][key].as_f64().unwrap(), metrics["roughness"][key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-12 * a.abs(), "{key}: {a} vs {b}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    for args in [
        vec!["attack", "--config", "bad.toml"],
        vec!["attack", "--sigma-g-px", "0.5"],
        vec!["attack", "--samples", "lots"],
        vec!["attack", "--kernel", "triangle:3"],
        vec!["attack", "--bogus-flag", "1"],
    ] {
        let o = smoothfool(d, &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn data_errors_exit_with_three() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("mnist/t10k-labels-idx1-ubyte"), [0, 0, 8, 1, 0, 0, 0, 1, 3]).unwrap();
    let o = smoothfool(d, &["attack"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = smoothfool(d, &["metrics", "--input-dir", "missing"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unsuccessful_attack_exits_with_four_and_keeps_artifacts() {
    let dir = workspace();
    let d = dir.path();
    let o = smoothfool(d, &["attack", "--orthogonality-floor", "0.49", "--sigma-g-px", "8", "--output-dir", "runs/short"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out(d, "short/r.pgm").exists());
    assert!(out(d, "short/manifest.json").exists());
}
