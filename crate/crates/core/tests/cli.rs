use std::path::Path;
use std::process::Command;

use knn_calibrate::cli::{factor_curve, run};
use knn_calibrate::model::ClassifierParams;
use knn_calibrate::synthetic::{gaussian_classes, GaussianSpec};
use knn_calibrate::{load_store, ModulatingFactor};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("knn-calibrate").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_split(dir: &Path) {
    let spec = GaussianSpec {
        dev_size: 100,
        ..GaussianSpec::default()
    };
    let split = gaussian_classes(&spec, 5).unwrap();
    split.train.write_tsv(&dir.join("train.tsv")).unwrap();
    split.dev.write_tsv(&dir.join("dev.tsv")).unwrap();
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_split(d);
    let train_tsv = d.join("train.tsv");
    let train = d.join("train.femb");
    let dev = d.join("dev.femb");

    let (code, out, _) = call(&["build-store", "--input", p(&train_tsv), "--output", p(&train)]);
    assert_eq!(code, 0);
    assert!(out.contains("80 rows"));
    let (code, out, _) = call(&[
        "build-store",
        "--input",
        p(&d.join("dev.tsv")),
        "--output",
        p(&dev),
        "--json",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with(r#"{"schema":1,"command":"build-store""#));
    assert_eq!(load_store(&train).unwrap().len(), 80);

    let params = d.join("model.fcls");
    let log = d.join("log.jsonl");
    let priors = d.join("priors.tsv");
    let train_args = [
        "train",
        "--train",
        p(&train),
        "--dev",
        p(&dev),
        "--out",
        p(&params),
        "--log",
        p(&log),
        "--priors-out",
        p(&priors),
        "--max-steps",
        "200",
        "--eval-every",
        "50",
    ];
    let (code, out, err) = call(&train_args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("best checkpoint at step"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 4);
    assert_eq!(std::fs::read_to_string(&priors).unwrap().lines().count(), 81);
    let first = std::fs::read(&params).unwrap();
    let (code, _, _) = call(&train_args);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&params).unwrap(), first);
    ClassifierParams::load(&params).unwrap();

    let eval_args = [
        "eval",
        "--params",
        p(&params),
        "--store",
        p(&train),
        "--eval",
        p(&dev),
        "--json",
    ];
    let (code, a, _) = call(&eval_args);
    assert_eq!(code, 0);
    let (_, b, _) = call(&eval_args);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["n_examples"], 100);
    assert_eq!(v["confusion"].as_array().unwrap().len(), 5);

    let (code, out, _) = call(&["knn-eval", "--store", p(&train), "--eval", p(&dev), "--k", "8"]);
    assert_eq!(code, 0);
    assert!(out.contains("accuracy"));

    let labels = d.join("pseudo.tsv");
    let pseudo_store = d.join("pseudo.femb");
    let (code, _, err) = call(&[
        "pseudo-label",
        "--params",
        p(&params),
        "--input",
        p(&d.join("dev.tsv")),
        "--output",
        p(&labels),
        "--store-out",
        p(&pseudo_store),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read_to_string(&labels).unwrap().lines().count(), 100);
    let relabeled = d.join("relabeled.femb");
    let (code, _, _) = call(&[
        "build-store",
        "--input",
        p(&d.join("dev.tsv")),
        "--output",
        p(&relabeled),
        "--labels-from",
        p(&labels),
    ]);
    assert_eq!(code, 0);
    assert_eq!(load_store(&relabeled).unwrap(), load_store(&pseudo_store).unwrap());

    let grid = d.join("grid.json");
    std::fs::write(&grid, r#"{"k":[4,16],"tau":[1.0],"lambda":[0.3,0.7]}"#).unwrap();
    let sweep_args = [
        "sweep",
        "--train",
        p(&train),
        "--dev",
        p(&dev),
        "--grid",
        p(&grid),
        "--max-steps",
        "30",
        "--eval-every",
        "10",
        "--json",
    ];
    let (code, a, err) = call(&sweep_args);
    assert_eq!(code, 0, "{err}");
    let (_, b, _) = call(&sweep_args);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 4);
}

#[test]
fn factor_curve_output() {
    let (code, out, _) = call(&["factor-curve", "--kind", "focal", "--gamma", "2", "--points", "5"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines,
        ["p\tf", "0\t1", "0.25\t0.5625", "0.5\t0.25", "0.75\t0.0625", "1\t0"]
    );
    let curve = factor_curve(ModulatingFactor::Nll { alpha: 1.0 }, 3).unwrap();
    assert_eq!(curve[2], (1.0, 0.0));
    assert!((curve[1].1 - std::f64::consts::LN_2).abs() < 1e-15);
    let (code, out, _) = call(&["factor-curve", "--kind", "nll", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 101);
    assert_eq!(v["factor"]["kind"], "nll");
}

#[test]
fn exit_codes() {
    assert_eq!(call(&["train", "--help"]).0, 0);
    assert_eq!(call(&["--version"]).0, 0);
    assert_eq!(call(&["train", "--bogus"]).0, 1);
    assert_eq!(call(&[]).0, 1);
    assert_eq!(call(&["factor-curve", "--kind", "focal", "--gamma", "-1"]).0, 1);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, _, err) = call(&[
        "build-store",
        "--input",
        p(&d.join("missing.tsv")),
        "--output",
        p(&d.join("x.femb")),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.tsv"));

    let bad = d.join("bad.tsv");
    std::fs::write(&bad, "#femb\tn=1\td=2\tc=2\n0\t1.0\tnan\n").unwrap();
    assert_eq!(
        call(&["build-store", "--input", p(&bad), "--output", p(&d.join("x.femb"))]).0,
        2
    );

    write_split(d);
    let train = d.join("train.tsv");
    let (code, _, _) = call(&[
        "train",
        "--train",
        p(&train),
        "--dev",
        p(&d.join("dev.tsv")),
        "--out",
        p(&d.join("m.fcls")),
        "--tau",
        "0",
    ]);
    assert_eq!(code, 1);
    let (code, _, _) = call(&["eval", "--params", p(&train), "--store", p(&train), "--eval", p(&train)]);
    assert_eq!(code, 2);
}

#[test]
fn binary_entry_point() {
    let bin = env!("CARGO_BIN_EXE_knn-calibrate");
    let ok = Command::new(bin)
        .args(["factor-curve", "--kind", "focal", "--points", "3"])
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert_eq!(String::from_utf8(ok.stdout).unwrap(), "p\tf\n0\t1\n0.5\t0.25\n1\t0\n");
    let bad = Command::new(bin).arg("no-such-command").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
}
