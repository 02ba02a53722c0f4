use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paramscope_core::data::{write_idx, Dataset, DatasetName, Split, IDX_FILES};
use paramscope_core::nn::{RngState, Tensor};

/// MNIST-shaped digits: class k lights rows 2k..2k+3, plus noise.
fn synthetic(split: Split, n: usize, seed: u64) -> Dataset {
    let mut rng = RngState::new(seed);
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = (i % 10) as u8;
        for r in 0..28 {
            for _ in 0..28 {
                let on = (2 * k as usize..2 * k as usize + 3).contains(&r);
                let v: f64 = if on { 0.8 } else { 0.0 } + 0.2 * rng.uniform();
                pixels.push((v * 255.0).round() / 255.0);
            }
        }
        labels.push(k);
    }
    Dataset { name: DatasetName::Mnist, split, images: Tensor::new(vec![n, 1, 28, 28], pixels).unwrap(), labels }
}

fn make_cache(root: &Path) -> PathBuf {
    let cache = root.join("cache");
    let dir = cache.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    write_idx(&synthetic(Split::Train, 600, 1), &dir.join(IDX_FILES[0]), &dir.join(IDX_FILES[1])).unwrap();
    write_idx(&synthetic(Split::Test, 200, 2), &dir.join(IDX_FILES[2]), &dir.join(IDX_FILES[3])).unwrap();
    cache
}

const CONFIG: &str = r#"
[experiment]
dataset = "mnist"
trials = 5
epochs = 3
subset = 500
base_seed = 7
model = { family = "dnn", input_shape = [1, 28, 28], hidden = [16, 16] }

[projection.tsne]
iterations = 200
"#;

fn paramscope(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paramscope")).args(args).arg("--quiet").env("PARAMSCOPE_CACHE", cache).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut all = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                all.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    all.sort();
    all
}

fn full_pipeline(cache: &Path, config: &Path, out: &Path) {
    let out_s = out.to_str().unwrap();
    let cfg = config.to_str().unwrap();
    ok(paramscope(cache, &["train", "--config", cfg, "--out", out_s, "--fixed-clock"]));
    ok(paramscope(cache, &["analyze", "--out", out_s]));
    ok(paramscope(cache, &["project", "--out", out_s]));
    ok(paramscope(cache, &["report", "--out", out_s]));
}

#[test]
fn train_analyze_project_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = make_cache(tmp.path());
    let config = tmp.path().join("exp.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    // report before analyze is an actionable error
    ok(paramscope(&cache, &["train", "--config", config.to_str().unwrap(), "--out", out_s, "--fixed-clock"]));
    let early = paramscope(&cache, &["report", "--out", out_s]);
    assert!(!early.status.success());
    let msg = stderr(&early);
    assert!(msg.contains("error[missing-input]") && msg.contains("paramscope analyze"), "{msg}");

    ok(paramscope(&cache, &["analyze", "--out", out_s]));
    let trials = fs::read_to_string(out.join("analysis/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 5);
    let groups = fs::read_to_string(out.join("analysis/groups.csv")).unwrap();
    assert!(groups.starts_with("trial_id,group,N,mu,sigma,mean_S,mean_S_plus,mean_S_minus,kde0,accuracy,label\n"));
    assert_eq!(groups.lines().count(), 1 + 5 * 4);

    // rerunning analyze reproduces the CSVs byte for byte
    let before = fs::read(out.join("analysis/groups.csv")).unwrap();
    let dens_before = fs::read(out.join("analysis/density.csv")).unwrap();
    ok(paramscope(&cache, &["analyze", "--out", out_s]));
    assert_eq!(before, fs::read(out.join("analysis/groups.csv")).unwrap());
    assert_eq!(dens_before, fs::read(out.join("analysis/density.csv")).unwrap());

    let proj = paramscope(&cache, &["project", "--out", out_s]);
    assert!(proj.status.success(), "{}", stderr(&proj));
    // 5 trials is below the default perplexity, so it is clamped with a warning
    assert!(stderr(&proj).contains("clamped"));
    let emb = fs::read_to_string(out.join("projection/embedding.csv")).unwrap();
    assert!(emb.starts_with("trial_id,cohort,x,y,accuracy,label\n"));
    assert_eq!(emb.lines().count(), 1 + 5);

    ok(paramscope(&cache, &["report", "--out", out_s]));
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report/index.json")).unwrap()).unwrap();
    let files = index["files"].as_object().unwrap();
    let of_kind = |k: &str| files.iter().filter(|(name, v)| name.ends_with(".svg") && v["kind"] == k).count();
    assert_eq!(of_kind("convergence-lines"), 1);
    assert_eq!(of_kind("mean-sigma-scatter"), 4);
    assert_eq!(of_kind("density-curves"), 4);
    assert_eq!(of_kind("strength-scatter"), 9);
    assert_eq!(of_kind("embedding-scatter"), 1);
    for g in ["ip_fc1", "fc1_fc2", "fc2_op", "whole_net"] {
        assert_eq!(files[&format!("mean_sigma_{g}.svg")]["group"], g);
    }
    // every SVG sits next to its CSV, one mark per data row
    for (name, v) in files.iter().filter(|(n, _)| n.ends_with(".svg")) {
        let svg = fs::read_to_string(out.join("report").join(name)).unwrap();
        let csv = fs::read_to_string(out.join("report").join(v["pair"].as_str().unwrap())).unwrap();
        if v["kind"].as_str().unwrap().ends_with("scatter") {
            assert_eq!(svg.matches("<circle").count(), csv.lines().count() - 1, "{name}");
        }
    }
    let sigma = fs::read_to_string(out.join("report/mean_sigma_fc2_op.svg")).unwrap();
    assert!(sigma.contains("FC2-O/P"));

    let resolved = fs::read_to_string(out.join("paramscope.resolved.toml")).unwrap();
    assert!(resolved.contains("[experiment]") && resolved.contains("base_seed = 7"));
}

#[test]
fn identical_config_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = make_cache(tmp.path());
    let config = tmp.path().join("exp.toml");
    fs::write(&config, CONFIG.replace("trials = 5", "trials = 4")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    full_pipeline(&cache, &config, &a);
    full_pipeline(&cache, &config, &b);
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert!(fa.len() > 40);
    for f in fa {
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn missing_dataset_points_to_fetch() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = paramscope(&tmp.path().join("empty"), &["train", "--config", config.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("error[missing-dataset]") && msg.contains("paramscope fetch --dataset mnist"), "{msg}");
}

#[test]
fn bad_config_exits_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(&config, CONFIG.replace("epochs = 3", "epochs = 3\nepoch = 4")).unwrap();
    let out = paramscope(tmp.path(), &["train", "--config", config.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("error[config]") && msg.contains("epoch") && msg.contains("line"), "{msg}");

    let mismatched = CONFIG.replace("input_shape = [1, 28, 28]", "input_shape = [3, 32, 32]");
    fs::write(&config, mismatched).unwrap();
    let out = paramscope(tmp.path(), &["train", "--config", config.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not match"));
}

#[test]
fn analyze_without_training_is_actionable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = paramscope(tmp.path(), &["analyze", "--out", tmp.path().join("nothing").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("run `paramscope train` first"));
}
