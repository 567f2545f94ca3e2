mod common;

use geoseg::engine::Engine;
use geoseg::wire::*;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn geoseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoseg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = geoseg(&["synth", "--bogus"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&geoseg(&["frobnicate"], tmp.path())), 2);
    assert_eq!(code(&geoseg(&[], tmp.path())), 2);
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    for d in ["a", "b"] {
        let o = geoseg(
            &["synth", "--seed", "7", "--count", "10", "--out", d],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert_eq!(a.len(), 21);
    assert_eq!(a, b);
    geoseg(
        &["synth", "--seed", "8", "--count", "10", "--out", "c"],
        tmp.path(),
    );
    assert_ne!(a, tree(&tmp.path().join("c")));
    // extents below 32 and bad config files are validation errors
    assert_eq!(
        code(&geoseg(
            &["synth", "--height", "16", "--out", "d"],
            tmp.path()
        )),
        2
    );
    std::fs::write(tmp.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        code(&geoseg(
            &["synth", "--config", "bad.json", "--out", "e"],
            tmp.path()
        )),
        2
    );
    std::fs::write(tmp.path().join("cfg.json"), r#"{"contrast": [0.3, 0.3]}"#).unwrap();
    assert_eq!(
        code(&geoseg(
            &["synth", "--count", "2", "--config", "cfg.json", "--out", "f"],
            tmp.path()
        )),
        0
    );
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("f/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["samples"][0]["synth"]["contrast"], 0.3);
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = TempDir::new().unwrap();
    let o = geoseg(
        &[
            "segment",
            "--image",
            "missing.pgm",
            "--ckpt",
            "missing.json",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn cli_and_service_paths_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let models = dir.join("models");
    common::write_models(&models);
    let sample = common::sample(21, 40);
    let bytes = common::pgm_bytes(&sample);
    std::fs::write(dir.join("x.pgm"), &bytes).unwrap();

    let o = geoseg(
        &[
            "segment",
            "--image",
            "x.pgm",
            "--ckpt",
            "models/pnet.json",
            "--out",
            "seg",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scribbles = SubmitScribbles {
        scribbles: vec![
            ScribbleWire {
                pixel: [12, 14],
                label: 1,
            },
            ScribbleWire {
                pixel: [33, 2],
                label: 0,
            },
            ScribbleWire {
                pixel: [20, 20],
                label: 1,
            },
        ],
    };
    std::fs::write(dir.join("s.json"), serde_json::to_vec(&scribbles).unwrap()).unwrap();
    let o = geoseg(
        &[
            "refine",
            "--image",
            "x.pgm",
            "--ckpt",
            "models/pnet.json",
            "--rnet",
            "models/rnet.json",
            "--initial",
            "seg/probability.f32",
            "--scribbles",
            "s.json",
            "--out",
            "ref",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let engine = Engine::new(dir.join("sessions"), &models).unwrap();
    let view = engine
        .create(&CreateSession {
            image: ImageWire::from_pgm_bytes(&bytes),
            pnet: None,
            rnet: None,
        })
        .unwrap();
    let sdir = dir.join("sessions").join(&view.id);
    let same = |a: &Path, b: &Path| {
        assert_eq!(
            std::fs::read(a).unwrap(),
            std::fs::read(b).unwrap(),
            "{}",
            a.display()
        )
    };
    same(&dir.join("seg/mask.pgm"), &sdir.join("mask.pgm"));
    same(
        &dir.join("seg/probability.f32"),
        &sdir.join("probability.f32"),
    );
    engine.add_scribbles(&view.id, &scribbles).unwrap();
    let refined = engine.refine(&view.id).unwrap();
    same(&dir.join("ref/mask.pgm"), &sdir.join("mask.pgm"));
    same(
        &dir.join("ref/probability.f32"),
        &sdir.join("probability.f32"),
    );
    assert_eq!(
        decode_mask(&refined.segmentation.mask).unwrap(),
        geoseg_core::imageio::Pgm::read(&dir.join("ref/mask.pgm"))
            .unwrap()
            .to_mask()
    );

    // a validation failure inside the pipeline maps to exit 2
    let small = geoseg_core::imageio::Pgm {
        width: 8,
        height: 8,
        maxval: 255,
        pixels: vec![3; 64],
    };
    small.write(&dir.join("small.pgm")).unwrap();
    assert_eq!(
        code(&geoseg(
            &[
                "segment",
                "--image",
                "small.pgm",
                "--ckpt",
                "models/pnet.json"
            ],
            dir
        )),
        2
    );
    std::fs::write(
        dir.join("oob.json"),
        r#"{"scribbles": [{"pixel": [99, 0], "label": 1}]}"#,
    )
    .unwrap();
    let o = geoseg(
        &[
            "refine",
            "--image",
            "x.pgm",
            "--ckpt",
            "models/pnet.json",
            "--rnet",
            "models/rnet.json",
            "--scribbles",
            "oob.json",
        ],
        dir,
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn train_and_eval_smoke() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(
        code(&geoseg(
            &["synth", "--count", "4", "--height", "32", "--width", "32", "--out", "data"],
            dir
        )),
        0
    );
    std::fs::write(
        dir.join("plan.json"),
        r#"{"network": {"width": 2}, "stage1": {"iterations": 3}, "stage3": {"iterations": 1},
            "rnet_stage1": {"iterations": 2}, "rnet_stage3": {"iterations": 1},
            "stage2": {"epochs": 1}, "pretrain_set": {"samples": 200}, "validate_every": 0}"#,
    )
    .unwrap();
    let o = geoseg(
        &[
            "train-pnet",
            "--data",
            "data",
            "--config",
            "plan.json",
            "--out",
            "m",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = geoseg(
        &[
            "train-rnet",
            "--data",
            "data",
            "--pnet",
            "m/pnet.json",
            "--config",
            "plan.json",
            "--out",
            "m",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = geoseg(
        &[
            "eval",
            "--data",
            "data",
            "--pnet",
            "m/pnet.json",
            "--rnet",
            "m/rnet.json",
            "--out",
            "ev",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(
        table.contains("Dice(%)") && table.contains("R-Net + CRF-Net(fu), geodesic"),
        "{table}"
    );
    let report: geoseg_core::metrics::EvalReport =
        serde_json::from_slice(&std::fs::read(dir.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(report.methods.len(), 3);
    assert_eq!(report.methods[0].dice.len(), 4);

    let o = geoseg(
        &["pretrain-pairwise", "--config", "pw.json", "--out", "pw"],
        dir,
    );
    assert_eq!(code(&o), 2, "missing config file is a validation error");
    std::fs::write(
        dir.join("pw.json"),
        r#"{"set": {"samples": 500}, "train": {"epochs": 2}}"#,
    )
    .unwrap();
    let o = geoseg(
        &["pretrain-pairwise", "--config", "pw.json", "--out", "pw"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("pw/pairwise.json")).unwrap()).unwrap();
    assert!(v["report"]["holdout_mse"].as_f64().unwrap().is_finite());
}
