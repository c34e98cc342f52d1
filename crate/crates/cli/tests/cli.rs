use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &["--set", "scene_count=4", "--set", "scene_size=16", "--set", "val_count=1", "--set", "batch_size=2", "--set", "epochs=2"];

fn lsnet(out: &Path, args: &[&str]) -> Output {
    lsnet_with(out, &[], args)
}

fn lsnet_with(out: &Path, sets: &[&str], args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsnet")).arg("--out").arg(out).args(TINY).args(sets).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lsnet")).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_lsnet")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(code(&lsnet_with(dir.path(), &["--set", "epochs=0"], &["train"])), 1);
    assert_eq!(code(&lsnet_with(dir.path(), &["--set", "nonsense=3"], &["train"])), 1);
    assert_eq!(code(&lsnet(dir.path(), &["train", "--set", "epochs=3"])), 1);
    assert_eq!(code(&lsnet(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["train", "--manifest", "/definitely/missing/manifest.txt"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing/manifest.txt"));
    std::fs::write(dir.path().join("bad.lsnt"), b"NOPE").unwrap();
    let bad = dir.path().join("bad.lsnt");
    let o = lsnet(dir.path(), &["enhance", "--checkpoint", bad.to_str().unwrap(), "x.png"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet_with(dir.path(), &["--set", "lr=1e30"], &["train"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(code(&lsnet(&data, &["degrade"])), 0);
    let manifest = data.join("manifest.txt");
    let m = manifest.to_str().unwrap();

    let run = d.join("run");
    let o = lsnet_with(&run, &["--set", "resolution=16"], &["train", "--manifest", m]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.lsnt", "final.lsnt", "curve.csv", "config.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let ckpt = run.join("final.lsnt");
    let ck = ckpt.to_str().unwrap();
    let raw = data.join("raw/synth_003.png");
    let raw_s = raw.to_str().unwrap();
    let (e1, e2) = (d.join("e1"), d.join("e2"));
    assert_eq!(code(&lsnet(&e1, &["enhance", "--checkpoint", ck, "--decomposition", raw_s])), 0);
    assert_eq!(code(&lsnet(&e2, &["enhance", "--checkpoint", ck, "--decomposition", raw_s])), 0);
    for f in ["synth_003.png", "synth_003_dx.png", "synth_003_ox.png"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap(), "{f}");
    }

    let ev = d.join("eval");
    let o = lsnet(&ev, &["eval", "--checkpoint", ck, "--manifest", m, "--split", "val"]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("image,psnr,ssim,uiqm,uicm,uism,uciqe,uiconm\n"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(ev.join("metrics.csv")).unwrap(), csv);

    let h = d.join("hist");
    assert_eq!(code(&lsnet(&h, &["hist", "--checkpoint", ck, raw_s])), 0);
    let table = std::fs::read_to_string(h.join("hist.csv")).unwrap();
    assert_eq!(table.lines().count(), 257);
    assert!(table.starts_with("bin,raw_r,raw_g,raw_b,enh_r"));
    assert!(h.join("hist.png").exists());

    let deg = d.join("deg");
    let clean = data.join("clean/synth_000.png");
    assert_eq!(code(&lsnet(&deg, &["degrade", clean.to_str().unwrap()])), 0);
    assert!(deg.join("synth_000.png").exists());
}

#[test]
fn seeded_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&lsnet(&a, &["--seed", "9", "train"])), 0);
    assert_eq!(code(&lsnet(&b, &["--seed", "9", "train"])), 0);
    for f in ["final.lsnt", "best.lsnt", "curve.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn raw_only_eval_has_no_reference_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&lsnet(&data, &["degrade"])), 0);
    let manifest = data.join("raw_only.txt");
    std::fs::write(&manifest, "test,raw/synth_000.png\ntest,raw/synth_001.png\n").unwrap();
    let o = lsnet(&dir.path().join("ev"), &["eval", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.split(',').nth(1).unwrap().is_empty() && line.split(',').nth(2).unwrap().is_empty(), "{line}");
        assert!(!line.split(',').nth(3).unwrap().is_empty());
    }
}
