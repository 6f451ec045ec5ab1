use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use echores::model::{ModelConfig, TasNet, Variant};
use echores::{write_wav, Waveform};

fn echores(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echores"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = echores(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing run.
fn fails(args: &[&str]) -> (i32, String) {
    let out = echores(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    (out.status.code().unwrap(), err.trim_end().to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--seed", "7", "--items", "4", "--item-secs", "1", "--out", s(&a)]);
    ok(&["synth", "--seed", "7", "--items", "4", "--item-secs", "1", "--out", s(&b), "--jobs", "3"]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 4);
    assert_eq!(ta, tb);
    let c = dir.path().join("c");
    ok(&["synth", "--seed", "8", "--items", "4", "--item-secs", "1", "--out", s(&c)]);
    assert_ne!(tree(&c), ta);
}

#[test]
fn infer_on_silence_is_silent() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    TasNet::new(ModelConfig::tiny(Variant::Mi), 3).unwrap().save(&ckpt).unwrap();
    let zeros = dir.path().join("zeros.wav");
    write_wav(&zeros, &Waveform::zeros(8000, 16000)).unwrap();
    let out = dir.path().join("out.wav");
    ok(&["infer", "--checkpoint", s(&ckpt), "--s-aec", s(&zeros), "--d-hat", s(&zeros), "--out", s(&out)]);
    let w = echores::read_wav(&out).unwrap();
    assert_eq!(w.len(), 8000);
    assert!(w.peak() < 1e-3, "peak {}", w.peak());
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("partial.toml");
    std::fs::write(&partial, "seed = 3\n[train]\nepochs = 7\n[fdkf]\nblock_len = 1024\n").unwrap();
    let first = ok(&["--config", s(&partial), "--seed", "11", "--dump-config"]);
    assert!(first.contains("seed = 11"));
    assert!(first.contains("epochs = 7"));
    assert!(first.contains("block_len = 1024"));
    let full = dir.path().join("full.toml");
    std::fs::write(&full, &first).unwrap();
    let second = ok(&["--config", s(&full), "--dump-config"]);
    assert_eq!(first, second);
    let defaults = ok(&["--dump-config"]);
    assert!(defaults.contains("bottleneck = 256"));
}

#[test]
fn errors_have_distinct_codes_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");

    let (code, line) = fails(&["laec", "--data", s(&missing)]);
    assert_eq!(code, 4);
    assert!(line.starts_with("error kind=missing-file code=4: "), "{line}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = \"many\"\n").unwrap();
    let (code, line) = fails(&["--config", s(&bad), "--dump-config"]);
    assert_eq!(code, 3);
    assert!(line.starts_with("error kind=config code=3: "), "{line}");
    assert_eq!(line.lines().count(), 1);

    std::fs::write(&bad, "[model]\nwidth = 4\n").unwrap();
    assert_eq!(fails(&["--config", s(&bad), "--dump-config"]).0, 3);

    std::fs::write(&bad, "[train]\nclip_norm = -1.0\n").unwrap();
    assert_eq!(fails(&["--config", s(&bad), "--dump-config"]).0, 3);

    let ckpt = dir.path().join("m.ckpt");
    TasNet::new(ModelConfig::tiny(Variant::L), 3).unwrap().save(&ckpt).unwrap();
    let wav = dir.path().join("x.wav");
    write_wav(&wav, &Waveform::zeros(800, 16000)).unwrap();
    let other = dir.path().join("other.toml");
    std::fs::write(&other, "[model]\nvariant = \"O\"\n").unwrap();
    let out = dir.path().join("o.wav");
    let (code, line) = fails(&[
        "--config", s(&other), "infer", "--checkpoint", s(&ckpt), "--s-aec", s(&wav), "--out", s(&out),
    ]);
    assert_eq!(code, 5);
    assert!(line.starts_with("error kind=checkpoint code=5: "), "{line}");

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(fails(&["infer", "--checkpoint", s(&junk), "--s-aec", s(&wav), "--out", s(&out)]).0, 5);

    // A manifest without canceller outputs cannot be trained on.
    let data = dir.path().join("data");
    ok(&["synth", "--items", "2", "--item-secs", "0.5", "--out", s(&data)]);
    let (code, line) = fails(&["train", "--data", s(&data), "--out", s(&dir.path().join("m"))]);
    assert_eq!(code, 6);
    assert!(line.contains("laec"), "{line}");

    assert_eq!(fails(&["train", "--data", s(&data), "--out", "m", "--variant", "Q"]).0, 2);
    assert_eq!(fails(&["train", "--data", s(&data), "--out", "m", "--preset", "huge"]).0, 3);
    assert_eq!(fails(&[]).0, 3);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let report = dir.path().join("metrics.csv");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[fdkf]\nblock_len = 512\n[eval]\nval_fraction = 0.25\n").unwrap();
    let c = s(&cfg);
    ok(&["--config", c, "synth", "--seed", "5", "--items", "5", "--item-secs", "1.5", "--out", s(&data)]);
    ok(&["--config", c, "laec", "--data", s(&data)]);
    let first = tree(&data);
    ok(&["--config", c, "laec", "--data", s(&data)]);
    assert_eq!(tree(&data), first, "laec is idempotent");
    ok(&[
        "--config", c, "--seed", "5", "--deterministic", "train", "--data", s(&data), "--out", s(&model),
        "--preset", "tiny", "--epochs", "5",
    ]);
    for f in ["best.ckpt", "last.ckpt", "loss_curve.csv", "config.toml"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let table = ok(&[
        "--config", c, "eval", "--data", s(&data), "--checkpoint", s(&model.join("best.ckpt")), "--out",
        s(&report), "--systems", "laec,model,pass-through,oracle-mask", "--erle-skip", "0.5",
    ]);
    assert!(table.contains("TasNet-MI"));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("id,system,"));
    assert!(lines.count() >= 5 * 3);
    assert!(!csv.contains("NaN") && !csv.contains("inf"));
}
