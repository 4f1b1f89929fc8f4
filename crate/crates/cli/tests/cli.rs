use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundmetric::dataset::LabeledDataset;
use groundmetric::eval::{self, BenchmarkConfig, ClusterTarget, Linkage, Method};
use groundmetric::metric::{GroundMetric, LowRankMahalanobis};
use tempfile::TempDir;

fn groundmetric(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundmetric"))
        .args(args)
        .env_remove("GROUNDMETRIC_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = groundmetric(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr_of_failure(args: &[&str]) -> String {
    let out = groundmetric(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset with enough distributions per class for learned evaluation.
fn small_dataset(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("data.csv");
    ok(&["synth", "--distributions-per-class", "8", "--points", "10", "--seed", "4", "--out", s(&path)]);
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn manifest(path: &Path) -> toml::Table {
    read(path).parse().unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["synth", "--dim", "5", "--points", "7", "--seed", "11", "--out", s(&a)]);
    ok(&["synth", "--dim", "5", "--points", "7", "--seed", "11", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = LabeledDataset::load_csv(&a).unwrap();
    assert_eq!((ds.dimension(), ds.len(), ds.classes().len()), (5, 30, 3));

    let m = manifest(&dir.path().join("a.csv.manifest.toml"));
    assert_eq!(m["command"].as_str(), Some("synth"));
    assert_eq!(m["seed"].as_integer(), Some(11));
    assert_eq!(m["noise"].as_float(), Some(1.0));
    assert_eq!(m["artifacts"]["dataset"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_without_out_writes_csv_to_stdout() {
    let out = ok(&["synth", "--distributions-per-class", "2", "--points", "3"]);
    let ds = LabeledDataset::read_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(ds.len(), 6);
}

#[test]
fn invalid_arguments_fail_with_a_message() {
    assert!(stderr_of_failure(&["synth", "--dim", "1"]).contains("dimension must be at least 2"));

    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("no_such_file.csv");
    let err = stderr_of_failure(&["train", "--data", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert!(err.contains(s(&missing)), "{err}");

    let data = small_dataset(&dir);
    let err = stderr_of_failure(&["train", "--data", s(&data), "--lambda", "-1", "--out", s(&dir.path().join("run"))]);
    assert!(err.contains("lambda"), "{err}");
    assert!(!dir.path().join("run").exists());

    assert!(stderr_of_failure(&["train", "--out", s(&dir.path().join("run"))]).contains("--data"));
    let err = stderr_of_failure(&["eval-cluster", "--data", s(&data), "--metric", "learned"]);
    assert!(err.contains("learned"), "{err}");
}

#[test]
fn train_writes_params_loss_and_manifest_and_reruns_from_manifest() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--epochs", "3", "--neighbors", "2", "--alpha", "1", "--out", s(&run)]);

    let (params, names) = LowRankMahalanobis::load_csv(run.join("params.csv")).unwrap();
    assert_eq!((params.rank(), params.dimension()), (2, 2));
    assert_eq!(names, ["f0", "f1"]);

    let loss = read(&run.join("loss.csv"));
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 1 + 4);
    for (epoch, line) in lines[1..].iter().enumerate() {
        let (e, v) = line.split_once(',').unwrap();
        assert_eq!(e.parse::<usize>().unwrap(), epoch);
        assert!(v.parse::<f64>().unwrap().is_finite());
    }

    let m = manifest(&run.join("manifest.toml"));
    assert_eq!(m["epochs"].as_integer(), Some(3));
    assert_eq!(m["alpha"].as_float(), Some(1.0));
    assert_eq!(m["lambda"].as_float(), Some(0.5));
    assert_eq!(m["results"]["triplets"].as_integer(), Some(24 * 2 * 2 * 2));

    let rerun = dir.path().join("rerun");
    ok(&["train", "--config", s(&run.join("manifest.toml")), "--out", s(&rerun)]);
    let again = manifest(&rerun.join("manifest.toml"));
    for artifact in ["params", "loss"] {
        assert_eq!(m["artifacts"][artifact]["sha256"], again["artifacts"][artifact]["sha256"], "{artifact}");
    }
}

#[test]
fn flags_override_config_values() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "seed = 5\npoints = 4\ndistributions_per_class = 2\n").unwrap();
    let from_file = ok(&["synth", "--config", s(&config)]).stdout;
    let explicit = ok(&["synth", "--seed", "5", "--points", "4", "--distributions-per-class", "2"]).stdout;
    assert_eq!(from_file, explicit);

    let overridden = ok(&["synth", "--config", s(&config), "--seed", "6"]).stdout;
    let explicit = ok(&["synth", "--seed", "6", "--points", "4", "--distributions-per-class", "2"]).stdout;
    assert_eq!(overridden, explicit);

    std::fs::write(&config, "sed = 5\n").unwrap();
    assert!(stderr_of_failure(&["synth", "--config", s(&config)]).contains("unknown key `sed`"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    ok(&["train", "--threads", "1", "--data", s(&data), "--epochs", "2", "--neighbors", "2", "--out", s(&one)]);
    let out = Command::new(env!("CARGO_BIN_EXE_groundmetric"))
        .args(["train", "--data", s(&data), "--epochs", "2", "--neighbors", "2", "--out", s(&two)])
        .env("GROUNDMETRIC_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&two.join("manifest.toml"))["run"]["threads"].as_integer(), Some(3));
    assert_eq!(read(&one.join("params.csv")), read(&two.join("params.csv")));
    assert_eq!(read(&one.join("loss.csv")), read(&two.join("loss.csv")));

    let bad = Command::new(env!("CARGO_BIN_EXE_groundmetric"))
        .args(["synth", "--points", "2"])
        .env("GROUNDMETRIC_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn eval_classify_matches_library_benchmark() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = dir.path().join("bench.csv");
    ok(&["eval-classify", "--data", s(&data), "--metric", "manhattan", "--splits", "3", "--k", "3", "--seed", "2", "--out", s(&out)]);

    let ds = LabeledDataset::load_csv(&data).unwrap();
    let config = BenchmarkConfig { splits: 3, k: Some(3), seed: 2, ..BenchmarkConfig::default() };
    let expected = eval::classification_benchmark(&ds, &Method::Fixed(GroundMetric::Manhattan), &config).unwrap();
    let mut bytes = Vec::new();
    expected.write_csv(&mut bytes).unwrap();
    assert_eq!(read(&out), String::from_utf8(bytes).unwrap());

    let m = manifest(&dir.path().join("bench.csv.manifest.toml"));
    assert_eq!(m["results"]["mean"].as_float(), Some(expected.mean));
    assert_eq!(m["metric"].as_str(), Some("manhattan"));
    assert!(m.get("alpha").is_none(), "training settings recorded for a fixed metric");
}

#[test]
fn eval_cluster_matches_library_clustering() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = dir.path().join("labels.csv");
    ok(&["eval-cluster", "--data", s(&data), "--linkage", "complete", "--out", s(&out)]);

    let ds = LabeledDataset::load_csv(&data).unwrap();
    let d = eval::pairwise_wasserstein(&ds, &GroundMetric::Euclidean).unwrap();
    let labels = eval::agglomerative_cluster(d.values().view(), Linkage::Complete, ClusterTarget::Count(3)).unwrap();
    let mut expected = String::from("id,cluster\n");
    for (id, l) in ds.ids().iter().zip(&labels) {
        expected.push_str(&format!("{id},{l}\n"));
    }
    assert_eq!(read(&out), expected);
    let m = manifest(&dir.path().join("labels.csv.manifest.toml"));
    let scores = eval::clustering_metrics(&labels, &ds.class_indices()).unwrap();
    assert_eq!(m["results"]["ari"].as_float(), Some(scores.ari));

    let median = ok(&["eval-cluster", "--data", s(&data), "--median-threshold"]).stdout;
    let expected = eval::agglomerative_cluster(d.values().view(), Linkage::Average, ClusterTarget::MedianThreshold).unwrap();
    let got: Vec<usize> = String::from_utf8(median)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(got, expected);
}

#[test]
fn distances_export_distribution_and_filtered_point_matrices() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let ds = LabeledDataset::load_csv(&data).unwrap();

    let out = ok(&["distances", "--data", s(&data)]).stdout;
    let mut expected = Vec::new();
    eval::pairwise_wasserstein(&ds, &GroundMetric::Euclidean).unwrap().write_csv(&mut expected).unwrap();
    assert_eq!(out, expected);

    let all = ok(&["distances", "--data", s(&data), "--level", "point"]).stdout;
    assert_eq!(String::from_utf8(all).unwrap().lines().count(), 1 + ds.point_count());

    let args = ["distances", "--data", s(&data), "--level", "point", "--splits", "2", "--k", "5"];
    let filtered = ok(&[&args[..], &["--min-point-accuracy", "1"]].concat()).stdout;
    let rates = eval::point_hit_rates(
        &ds,
        &GroundMetric::Euclidean,
        &BenchmarkConfig { level: eval::Level::Point, splits: 2, k: Some(5), ..BenchmarkConfig::default() },
    )
    .unwrap();
    let kept = rates.iter().filter(|r| r.is_some_and(|r| r >= 1.0)).count();
    let text = String::from_utf8(filtered).unwrap();
    assert_eq!(text.lines().count(), 1 + kept);
    assert!(kept < ds.point_count());

    assert!(stderr_of_failure(&["distances", "--data", s(&data), "--min-point-accuracy", "0.5"]).contains("--level point"));
}

#[test]
fn importance_ranks_features_and_accepts_names() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("params.csv");
    std::fs::write(&params, "a,b,c\n0.1,2.0,-1.0\n0.0,0.5,1.0\n").unwrap();
    let out = ok(&["importance", "--params", s(&params)]).stdout;
    assert_eq!(String::from_utf8(out).unwrap(), "rank,feature,importance\n1,b,4.25\n2,c,2\n3,a,0.010000000000000002\n");

    let names = dir.path().join("names.txt");
    std::fs::write(&names, "x\ny\nz\n").unwrap();
    let ranked = dir.path().join("ranked.csv");
    ok(&["importance", "--params", s(&params), "--names", s(&names), "--out", s(&ranked)]);
    assert!(read(&ranked).starts_with("rank,feature,importance\n1,y,"));
    assert!(dir.path().join("ranked.csv.manifest.toml").exists());

    std::fs::write(&names, "x\ny\n").unwrap();
    stderr_of_failure(&["importance", "--params", s(&params), "--names", s(&names)]);

    std::fs::write(&params, "f0,f1,f2\n1,0,0\n0,1,0\n0,0,1\n").unwrap();
    let identity = String::from_utf8(ok(&["importance", "--params", s(&params)]).stdout).unwrap();
    assert_eq!(identity, "rank,feature,importance\n1,f0,1\n2,f1,1\n3,f2,1\n");
    std::fs::write(&params, "f0,f1\n0,0\n").unwrap();
    let zero = String::from_utf8(ok(&["importance", "--params", s(&params)]).stdout).unwrap();
    assert_eq!(zero, "rank,feature,importance\n1,f0,0\n2,f1,0\n");
}

#[test]
fn grid_reports_every_cell_and_matches_a_single_learned_evaluation() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let common = ["--data", s(&data), "--epochs", "2", "--neighbors", "2", "--splits", "2", "--validation-fraction", "0.5"];

    let grid = dir.path().join("grid.csv");
    ok(&[&["grid", "--alphas", "0.5,2", "--lambdas", "0.1", "--out", s(&grid)][..], &common[..]].concat());
    let text = read(&grid);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "alpha,lambda,val_accuracy");
    assert_eq!(rows.len(), 1 + 2);
    assert!(rows[1].starts_with("0.5,0.1,") && rows[2].starts_with("2,0.1,"));

    let single = dir.path().join("single.csv");
    ok(&[
        &["eval-classify", "--metric", "learned", "--evaluate-on", "validation", "--alpha", "2", "--lambda", "0.1", "--out", s(&single)][..],
        &common[..],
    ]
    .concat());
    let m = manifest(&dir.path().join("single.csv.manifest.toml"));
    let grid_value: f64 = rows[2].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(m["results"]["mean"].as_float(), Some(grid_value));
    assert_eq!(m["alpha"].as_float(), Some(2.0));
}
