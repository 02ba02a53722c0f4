use super::*;
use crate::data::Split;
use crate::models::MNIST_SHAPE;

/// Two blobs per class on 28×28 images: class k lights up row 2k.
fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = RngState::new(seed);
    let mut data = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 10;
        for r in 0..28 {
            for _ in 0..28 {
                let base = if r == 2 * label || r == 2 * label + 1 { 0.9 } else { 0.05 };
                data.push((base + 0.05 * rng.uniform()).min(1.0));
            }
        }
        labels.push(label as u8);
    }
    Dataset { name: DatasetName::Mnist, split: Split::Train, images: Tensor::new(vec![n, 1, 28, 28], data).unwrap(), labels }
}

fn config(trials: usize) -> TrainConfig {
    TrainConfig { epochs: 3, trials, base_seed: 11, ..TrainConfig::new(ModelSpec::dnn(MNIST_SHAPE, 8, 8), DatasetName::Mnist) }
}

fn quiet() -> RunOptions {
    RunOptions { quiet: true, fixed_clock: true, out_dir: None }
}

fn prepared(cfg: &TrainConfig) -> PreparedData {
    PreparedData::new(cfg, toy(300, 1), toy(100, 2))
}

#[test]
fn trial_learns_toy_problem() {
    let cfg = TrainConfig { epochs: 8, model: ModelSpec::dnn(MNIST_SHAPE, 32, 32), ..config(1) };
    let data = PreparedData::new(&cfg, toy(2000, 1), toy(100, 2));
    let rec = run_trial(&cfg, 0, &data.view(), &quiet()).unwrap();
    assert_eq!(rec.train_loss.len(), 8);
    assert_eq!(rec.test_accuracy.len(), 8);
    assert!(rec.train_loss[7] < rec.train_loss[0]);
    assert!(rec.final_accuracy > 90.0, "{rec:?}");
    assert_eq!(rec.final_accuracy, rec.test_accuracy[7]);
    assert!(!rec.diverged);
    assert_eq!(rec.seed, split_seed(11, 0));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let cfg = config(1);
    let data = prepared(&cfg);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_trial(&cfg, 2, &data.view(), &RunOptions { out_dir: Some(a.path().into()), ..quiet() }).unwrap();
    let rb = run_trial(&cfg, 2, &data.view(), &RunOptions { out_dir: Some(b.path().into()), ..quiet() }).unwrap();
    assert_eq!(ra, rb);
    let rel = ra.checkpoint.unwrap();
    assert_eq!(rel, "checkpoints/trial_0002.pscp");
    assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap());
}

#[test]
fn different_trials_differ() {
    let cfg = config(1);
    let data = prepared(&cfg);
    let r0 = run_trial(&cfg, 0, &data.view(), &quiet()).unwrap();
    let r1 = run_trial(&cfg, 1, &data.view(), &quiet()).unwrap();
    assert_ne!(r0.train_loss, r1.train_loss);
}

#[test]
fn zero_epochs_keeps_init() {
    let cfg = TrainConfig { epochs: 0, ..config(1) };
    let data = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let rec = run_trial(&cfg, 0, &data.view(), &RunOptions { out_dir: Some(dir.path().into()), ..quiet() }).unwrap();
    assert!(rec.train_loss.is_empty() && rec.test_accuracy.is_empty());
    let ck = load_checkpoint(&dir.path().join(rec.checkpoint.unwrap())).unwrap();
    let init = Model::build(&cfg.model.clone().resolved(), false, &mut RngState::new(rec.seed).split(0)).unwrap();
    assert_eq!(ck.model, init);
    assert_eq!(ck.seed, rec.seed);
}

#[test]
fn non_finite_input_flags_divergence() {
    let cfg = config(1);
    let mut train = toy(200, 1);
    train.images.data_mut()[5] = f64::INFINITY;
    train.images.data_mut()[900] = f64::NEG_INFINITY;
    let data = PreparedData { train, test: toy(50, 2), eval: None };
    let rec = run_trial(&cfg, 0, &data.view(), &quiet()).unwrap();
    assert!(rec.diverged);
    assert!(rec.train_loss.last().unwrap().is_nan());
    assert!((0.0..=100.0).contains(&rec.final_accuracy));
}

#[test]
fn failing_trials_are_recorded() {
    let cfg = config(2);
    let bad_test = Dataset { images: Tensor::zeros(&[10, 1, 27, 28]), labels: vec![0; 10], ..toy(10, 3) };
    let data = PreparedData { train: toy(100, 1), test: bad_test, eval: None };
    let m = run_experiment(&cfg, &data, &quiet()).unwrap();
    assert_eq!(m.trials.len(), 2);
    assert!(m.trials.iter().all(|t| t.error.is_some()));
}

#[test]
fn serial_and_parallel_manifests_match() {
    let serial = config(4);
    let parallel = TrainConfig { parallelism: 4, ..serial.clone() };
    let data = prepared(&serial);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ms = run_experiment(&serial, &data, &RunOptions { out_dir: Some(a.path().into()), ..quiet() }).unwrap();
    let mp = run_experiment(&parallel, &data, &RunOptions { out_dir: Some(b.path().into()), ..quiet() }).unwrap();
    assert_eq!(ms.to_json(), mp.to_json());
    assert_eq!(fs::read(a.path().join("manifest.json")).unwrap(), fs::read(b.path().join("manifest.json")).unwrap());
    for t in &ms.trials {
        let rel = t.checkpoint.as_ref().unwrap();
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
    }
    assert_eq!(ms.trials.len(), 4);
    assert_eq!(ExperimentManifest::read(&a.path().join("manifest.json")).unwrap(), ms);
}

#[test]
fn config_hash_tracks_results_not_scheduling() {
    let base = config(3);
    let mut lr = base.clone();
    lr.adam.learning_rate = 0.002;
    assert_ne!(base.hash(), lr.hash());
    assert_eq!(base.hash(), TrainConfig { parallelism: 8, ..base.clone() }.hash());
    assert_ne!(base.hash(), TrainConfig { base_seed: 12, ..base.clone() }.hash());
    assert_eq!(base.hash().len(), 64);
}

#[test]
fn config_validation() {
    assert!(config(1).validate().is_ok());
    assert!(TrainConfig { trials: 0, ..config(1) }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..config(1) }.validate().is_err());
    let mut c = config(1);
    c.adam.learning_rate = 0.0;
    assert!(c.validate().is_err());
    assert!(TrainConfig { dataset: DatasetName::Cifar10, ..config(1) }.validate().is_err());
    assert!(TrainConfig { strict_paper_mode: true, ..config(1) }.validate().is_err());
    let strict = TrainConfig { strict_paper_mode: true, epochs: 20, ..config(1) };
    assert!(strict.validate().is_ok());
}

#[test]
fn manifest_records_sizes_and_seeds() {
    let cfg = TrainConfig { subset: Some(250), eval_subset: Some(40), ..config(2) };
    let data = prepared(&cfg);
    let m = run_experiment(&cfg, &data, &quiet()).unwrap();
    assert_eq!((m.train_size, m.eval_size, m.test_size, m.dropped_per_epoch), (250, 40, 100, 50));
    assert_eq!(m.warnings.len(), 1);
    assert_eq!(m.trials[1].seed, cfg.trial_seed(1));
    assert_eq!(m.schema_version, MANIFEST_SCHEMA_VERSION);
    assert!(m.config.model.init.is_some());
    let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    assert!(json["config"].get("parallelism").is_none());
}

#[test]
fn history_checkpoints_opt_in() {
    let cfg = TrainConfig { keep_history: true, epochs: 2, ..config(1) };
    let data = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    run_trial(&cfg, 0, &data.view(), &RunOptions { out_dir: Some(dir.path().into()), ..quiet() }).unwrap();
    assert!(dir.path().join("checkpoints/trial_0000/epoch_01.pscp").is_file());
}

#[test]
fn accuracy_reporting() {
    assert_eq!(accuracy(50, 100), 50.0);
    assert_eq!(format!("{:.2}", accuracy(50, 100)), "50.00");
    assert_eq!(accuracy(0, 0), 0.0);
    assert_eq!(progress_line(3, 7, 0.12341, 97.1), "trial=3 epoch=7 loss=0.1234 acc=97.10");
    assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    assert_eq!(argmax(&[f64::NAN, 0.3, 0.1]), 1);
}

/// A DNN whose only nonzero parameter is one output bias.
fn constant_predictor(class: usize) -> Model {
    let spec = ModelSpec::dnn(MNIST_SHAPE, 5, 5).with_init(0.0, 0.0);
    let mut m = Model::build(&spec, true, &mut RngState::new(0)).unwrap();
    let bias = m.params_mut().iter_mut().find(|p| p.name == "fc2_op.bias").unwrap();
    bias.tensor.data_mut()[class] = 1.0;
    m
}

#[test]
fn evaluate_counts_argmax_hits() {
    let ds = toy(100, 4);
    assert_eq!(evaluate(&constant_predictor(3), &ds).unwrap(), 10.0);
    let cfg = config(1);
    let data = prepared(&cfg);
    let rec = run_trial(&cfg, 0, &data.view(), &quiet()).unwrap();
    assert!((0.0..=100.0).contains(&rec.final_accuracy));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for spec in [ModelSpec::dnn(MNIST_SHAPE, 7, 5), ModelSpec::cnn(MNIST_SHAPE, 3), ModelSpec::vit([1, 8, 8], 2)] {
        let mut m = Model::build(&spec, false, &mut RngState::new(9)).unwrap();
        m.params_mut()[0].tensor.data_mut()[0] = -0.0;
        m.params_mut()[0].tensor.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let bytes = encode_checkpoint(&m, 77);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.seed, 77);
        for (a, b) in m.params().iter().zip(back.model.params()) {
            assert_eq!(a.name, b.name);
            assert!(a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.model.spec(), m.spec());
    }
}

#[test]
fn checkpoint_header_checks() {
    let m = Model::build(&ModelSpec::dnn(MNIST_SHAPE, 5, 5), true, &mut RngState::new(1)).unwrap();
    let good = encode_checkpoint(&m, 1);
    assert_eq!(&good[..4], b"PSCP");
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
    let mut v2 = good.clone();
    v2[4] = 2;
    assert!(decode_checkpoint(&v2).unwrap_err().to_string().contains("version"));
    assert!(decode_checkpoint(&good[..good.len() - 3]).is_err());
    let mut long = good.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
    assert!(decode_checkpoint(b"PS").is_err());
}

