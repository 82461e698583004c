use std::path::Path;
use std::process::{Command, Output};

fn radmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radmap"))
        .args(args)
        .output()
        .expect("failed to spawn radmap")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_scene_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = radmap(&["simulate", "no/such/scene.toml", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn invalid_scene_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("bad.toml");
    std::fs::write(&scene, "name = \"bad\"\nseed = 1\nn_frames = 0\n").unwrap();
    let out = radmap(&["simulate", path(&scene), "--out", path(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let out = radmap(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[trainer]\nnot_a_key = 3\n").unwrap();
    let out = radmap(&["train", "--data", path(tmp.path()), "--out", path(&tmp.path().join("o")), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let out = radmap(&["simulate", "sphere", "--out", path(dir), "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (sa, sb, sc) = (snapshot(&a), snapshot(&b), snapshot(&c));
    assert!(sa.iter().any(|(f, _)| f.starts_with("frames")));
    assert_eq!(sa, sb);
    assert_ne!(sa, sc);
}

#[test]
fn pipeline_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    assert!(radmap(&["simulate", "sphere", "--out", path(&data)]).status.success());
    let out = radmap(&[
        "pipeline",
        "--data",
        path(&data),
        "--out",
        path(&run),
        "--iterations",
        "40",
        "--holdout",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "map.bin", "mesh.ply", "metrics.json", "run_config.toml", "train_log.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let metrics = tmp.path().join("eval.json");
    let out = radmap(&[
        "eval",
        path(&run.join("mesh.ply")),
        "--gt",
        path(&data.join("ground_truth.ply")),
        "--out",
        path(&metrics),
        "--box=-2,-2,-2,2,2,2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.contains("f_score"), "{text}");
}
