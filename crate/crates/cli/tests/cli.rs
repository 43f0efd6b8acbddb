use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn targetrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_targetrank"))
        .args(args)
        .current_dir(dir)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// A small benchmark in `<dir>/data`.
fn small_data(dir: &Path) -> PathBuf {
    let o = targetrank(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--seed",
            "5",
            "--set",
            "synth_block_sizes=[40, 160]",
            "--set",
            "synth_p_in=0.15",
            "--set",
            "synth_p_out=0.01",
        ],
    );
    ok(&o);
    dir.join("data")
}

const DATA: [&str; 6] = [
    "--set",
    "edges=data/edges.tsv",
    "--set",
    "features=data/features.csv",
    "--set",
    "labels=data/labels.csv",
];

const FAST: [&str; 14] = [
    "--folds",
    "3",
    "--set",
    "gbt_rounds=20",
    "--set",
    "imgagn_generator_epochs=2",
    "--set",
    "imgagn_discriminator_epochs=3",
    "--set",
    "n2v_walks_per_node=2",
    "--set",
    "n2v_epochs=1",
    "--set",
    "line_samples=20000",
];

fn args<'a>(head: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    head.iter()
        .chain(DATA.iter())
        .chain(FAST.iter())
        .chain(extra)
        .copied()
        .collect()
}

#[test]
fn unknown_method_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = targetrank(d.path(), &["pipeline", "--method", "gcn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("method"), "{}", stderr(&o));
}

#[test]
fn missing_labels_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    let o = targetrank(
        d.path(),
        &[
            "pipeline",
            "--set",
            "edges=data/edges.tsv",
            "--set",
            "features=data/features.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_block_sizes_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = targetrank(d.path(), &["synth", "--set", "synth_block_sizes=[10, 0]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("block"), "{}", stderr(&o));
    let o = targetrank(d.path(), &["synth", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn env_layer_sits_between_file_and_flags() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_targetrank"))
        .args(["synth", "--out", "a"])
        .current_dir(d.path())
        .env_clear()
        .env("TARGETRANK_SYNTH_BLOCK_SIZES", "[10, 0]")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_targetrank"))
        .args(["synth", "--out", "a", "--set", "synth_block_sizes=[10, 30]"])
        .current_dir(d.path())
        .env_clear()
        .env("TARGETRANK_SYNTH_BLOCK_SIZES", "[10, 0]")
        .output()
        .unwrap();
    ok(&o);
}

#[test]
fn synth_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    for (out, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        ok(&targetrank(d.path(), &["synth", "--out", out, "--seed", seed]));
    }
    for f in ["edges.tsv", "features.csv", "labels.csv", "manifest.json"] {
        assert!(d.path().join("a").join(f).is_file(), "{f}");
    }
    let read = |dir: &str| fs::read(d.path().join(dir).join("edges.tsv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn imgagn_embedding_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    for out in ["e1", "e2"] {
        ok(&targetrank(
            d.path(),
            &args(&["embed", "--method", "imgagn", "--out", out], &[]),
        ));
    }
    let a = fs::read_to_string(d.path().join("e1/embeddings.tsv")).unwrap();
    let b = fs::read_to_string(d.path().join("e2/embeddings.tsv")).unwrap();
    assert_eq!(a, b);
    let row = a.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(row.split('\t').count(), 1 + 80);
    let log = fs::read_to_string(d.path().join("e1/train_log.tsv")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
}

#[test]
fn pipeline_writes_reports_and_reruns_from_its_config() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    ok(&targetrank(
        d.path(),
        &args(&["pipeline", "--method", "line", "--out", "p"], &[]),
    ));
    let p = d.path().join("p");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("metrics.json")).unwrap()).unwrap();
    let auc = metrics["cross_validation"]["mean_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(metrics["percentile_bins"].as_array().unwrap().len(), 20);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    for f in [
        "embeddings.tsv",
        "predictions.csv",
        "metrics.json",
        "config.resolved.toml",
    ] {
        assert!(outputs.contains(&f), "{f} not in {outputs:?}");
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);

    let before = fs::read(p.join("predictions.csv")).unwrap();
    let before_emb = fs::read(p.join("embeddings.tsv")).unwrap();
    ok(&targetrank(
        d.path(),
        &["pipeline", "--config", "p/config.resolved.toml"],
    ));
    assert_eq!(before, fs::read(p.join("predictions.csv")).unwrap());
    assert_eq!(before_emb, fs::read(p.join("embeddings.tsv")).unwrap());
}

#[test]
fn grid_search_and_eval_round_trip() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    fs::write(
        d.path().join("grid.toml"),
        "classifier = \"dt\"\n[[grid]]\nmax_depth = 2\n[[grid]]\nmax_depth = 5\n",
    )
    .unwrap();
    fs::write(
        d.path().join("sets.gmt"),
        "early\tx\tg00000\tg00001\tg00002\tg00003\nlate\tx\tg00150\tg00151\tg00199\nmixed\tx\tg00004\tg00180\n",
    )
    .unwrap();
    ok(&targetrank(
        d.path(),
        &args(
            &[
                "pipeline",
                "--config",
                "grid.toml",
                "--method",
                "none",
                "--out",
                "p",
            ],
            &["--set", "gene_sets=sets.gmt"],
        ),
    ));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("p/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["grid"]["mean_auc"].as_array().unwrap().len(), 2);
    assert_eq!(metrics["enrichment"]["pathways"], 3);
    assert!(d.path().join("p/enrichment_curve.csv").is_file());

    ok(&targetrank(
        d.path(),
        &[
            "eval",
            "--set",
            "predictions=p/predictions.csv",
            "--set",
            "labels=data/labels.csv",
            "--out",
            "e",
        ],
    ));
    let ev: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("e/metrics.json")).unwrap()).unwrap();
    assert!(ev["auc"].as_f64().unwrap() > 0.5);
    assert_eq!(ev["n_ranked"], 200);
    assert_eq!(ev["percentile_bins"], metrics["percentile_bins"]);
}

#[test]
fn compare_single_cell() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    ok(&targetrank(
        d.path(),
        &args(
            &["compare", "--out", "c"],
            &[
                "--set",
                "compare_methods=[\"none\"]",
                "--set",
                "compare_classifiers=[\"gbt\"]",
            ],
        ),
    ));
    let tsv = fs::read_to_string(d.path().join("c/comparison.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "method\tgbt");
    assert!(lines[1].starts_with("none\t0."), "{tsv}");
    assert_eq!(lines.len(), 2);
}

#[test]
fn compare_marks_failed_cells_and_exits_nonzero() {
    let d = tempfile::tempdir().unwrap();
    small_data(d.path());
    let o = targetrank(
        d.path(),
        &args(
            &["compare", "--out", "c"],
            &[
                "--set",
                "compare_methods=[\"none\"]",
                "--set",
                "compare_classifiers=[\"dt\", \"rf\"]",
                "--set",
                "rf_feature_frac=0.0",
            ],
        ),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let tsv = fs::read_to_string(d.path().join("c/comparison.tsv")).unwrap();
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    assert!(row[1].parse::<f64>().is_ok(), "{tsv}");
    assert_eq!(row[2], "FAILED");
    let cells: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("c/comparison.json")).unwrap()).unwrap();
    assert!(cells[1]["error"].as_str().unwrap().contains("feature_frac"));
}
