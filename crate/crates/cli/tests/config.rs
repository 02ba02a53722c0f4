use std::path::Path;

use paramscope::config::CliConfig;
use paramscope::{resolve_config, CliError, Common};

const SAMPLE: &str = r#"
output_dir = "runs/x"

[experiment]
dataset = "mnist"
trials = 5
epochs = 3
subset = 500
model = { family = "dnn", input_shape = [1, 28, 28], hidden = [16, 16] }

[analysis]
bins = 40
thresholds = { non_max = 15.0, low_max = 56.0, high_min = 95.0 }

[projection]
group = "fc2_op"
tsne = { perplexity = 10.0, iterations = 300 }
"#;

#[test]
fn sample_parses_with_defaults() {
    let cfg = CliConfig::parse(SAMPLE, Path::new("sample.toml")).unwrap();
    let exp = cfg.experiment().unwrap();
    assert_eq!(exp.trials, 5);
    assert_eq!(exp.batch_size, 100);
    assert_eq!(cfg.analysis.bins, 40);
    assert_eq!(cfg.analysis.grid_points, 401);
    assert_eq!(cfg.projection.tsne.perplexity, 10.0);
    assert_eq!(cfg.projection.tsne.learning_rate, 200.0);
    assert_eq!(cfg.fetch.attempts, 4);
}

#[test]
fn unknown_keys_rejected_with_location() {
    let bad = SAMPLE.replace("bins = 40", "bins = 40\nbinz = 3");
    let err = CliConfig::parse(&bad, Path::new("bad.toml")).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Config(_)));
    assert!(msg.starts_with("error[config]: bad.toml"), "{msg}");
    assert!(msg.contains("binz"), "{msg}");
    assert!(msg.contains("line 13"), "{msg}");

    let nested = SAMPLE.replace("hidden = [16, 16]", "hidden = [16, 16], dropout = 0.5");
    assert!(CliConfig::parse(&nested, Path::new("n.toml")).unwrap_err().to_string().contains("dropout"));
}

#[test]
fn malformed_value_reports_field() {
    let bad = SAMPLE.replace("trials = 5", "trials = \"five\"");
    let msg = CliConfig::parse(&bad, Path::new("c.toml")).unwrap_err().to_string();
    assert!(msg.contains("trials"), "{msg}");
}

#[test]
fn unknown_source_dataset_rejected() {
    let bad = format!("{SAMPLE}\n[fetch]\nsources.svhn = []\n");
    let msg = CliConfig::parse(&bad, Path::new("c.toml")).unwrap_err().to_string();
    assert!(msg.contains("svhn"), "{msg}");
}

#[test]
fn resolved_config_round_trips() {
    let cfg = CliConfig::parse(SAMPLE, Path::new("sample.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfg.write_resolved(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(paramscope::config::RESOLVED_CONFIG)).unwrap();
    let back = CliConfig::parse(&text, Path::new("resolved")).unwrap();
    let exp = back.experiment().unwrap();
    // defaults are written out explicitly
    assert!(text.contains("learning_rate"));
    assert!(text.contains("std = 0.05"));
    assert_eq!(exp.model, cfg.experiment().unwrap().model.clone().resolved());
    assert_eq!(back.output_dir, None);
    assert_eq!(back.analysis, cfg.analysis);
    assert_eq!(back.projection, cfg.projection);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, SAMPLE).unwrap();
    let common = Common {
        config: Some(path),
        out: Some(dir.path().join("o")),
        seed: Some(9),
        subset: Some(200),
        parallel: Some(3),
        strict_paper_mode: true,
        ..Common::default()
    };
    let cfg = resolve_config(&common).unwrap();
    let exp = cfg.experiment().unwrap();
    assert_eq!((exp.base_seed, exp.subset, exp.parallelism, exp.strict_paper_mode), (9, Some(200), 3, true));
    assert_eq!(cfg.output_dir, Some(dir.path().join("o")));
}
