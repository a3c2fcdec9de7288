use std::path::Path;
use std::process::{Command, Output};

fn hsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsplat")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = hsplat(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, seed: &str) {
    ok(&[
        "generate-data", "--out", s(dir), "--instances", "4", "--views", "4", "--size", "16", "--seed", seed,
    ]);
}

fn train(data: &Path, out: &Path) {
    ok(&[
        "train", "--data", s(data), "--out", s(out), "--stage1", "1", "--iters", "3", "--seed", "2",
        "--set", "feature_width=8", "--set", "batch_size=2", "--set", "eval_every=3", "--set", "probes=1",
    ]);
}

#[test]
fn generate_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path(), "5");
    generate(b.path(), "5");
    for f in ["manifest.txt", "dataset.meta", "images/i0002_v03.ppm", "scenes/i0001.gauss"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let meta = std::fs::read_to_string(a.path().join("run.meta")).unwrap();
    assert!(meta.contains("seed = 5") && meta.contains("code_version"));
}

#[test]
fn gradcheck_reports_every_check() {
    let out = ok(&["gradcheck", "--module", "all", "--seed", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 30);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn bad_invocations_fail_with_a_message() {
    assert!(!hsplat(&["frobnicate"]).status.success());
    let out = hsplat(&["train", "--data", "/nonexistent/hsplat", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("/nonexistent/hsplat"), "{err}");
}

#[test]
fn train_render_sweep_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    generate(&data, "1");
    train(&data, &run);
    let ckpt = run.join("final.hspl");
    assert!(ckpt.exists() && run.join("metrics.csv").exists() && run.join("run.meta").exists());

    let input = format!(
        "{}+{}",
        s(&data.join("images/i0000_v00.ppm")),
        s(&data.join("poses/i0000_v00.pose"))
    );
    let target = data.join("poses/i0000_v02.pose");
    let (full, parents) = (dir.path().join("full.ppm"), dir.path().join("parents.ppm"));
    ok(&["render", "--ckpt", s(&ckpt), "--input", &input, "--target", s(&target), "--out", s(&full)]);
    ok(&[
        "render", "--ckpt", s(&ckpt), "--input", &input, "--target", s(&target), "--out", s(&parents),
        "--parents-only",
    ]);
    let (f, p) = (std::fs::read(&full).unwrap(), std::fs::read(&parents).unwrap());
    assert!(f.starts_with(b"P6\n16 16\n255\n"));
    assert_ne!(f, p);

    let sweep = dir.path().join("sweep");
    ok(&["sweep", "--ckpt", s(&ckpt), "--input", &input, "--orbit", "3", "--out", s(&sweep)]);
    for i in 0..3 {
        assert!(sweep.join(format!("frame_{i:03}.ppm")).exists());
        assert!(sweep.join(format!("frame_{i:03}.pose")).exists());
    }

    let csv = dir.path().join("eval.csv");
    let out = ok(&[
        "evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "train", "--out", s(&csv),
        "--baseline", s(&ckpt),
    ]);
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("psnr"), "{summary}");
    assert!(summary.contains("model_lead_on_baseline_bad = 0"), "{summary}");
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    generate(&data, "1");
    train(&data, &run);
    let ckpt = run.join("ckpt_000001.hspl");
    assert!(ckpt.exists());
    let again = dir.path().join("again");
    ok(&[
        "train", "--data", s(&data), "--out", s(&again), "--stage1", "1", "--iters", "3", "--seed", "2",
        "--set", "feature_width=8", "--set", "batch_size=2", "--set", "eval_every=3", "--set", "probes=1",
        "--resume", s(&ckpt),
    ]);
    let rows = |p: &Path, skip: usize| {
        std::fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .skip(skip)
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&run, 2), rows(&again, 1));
    assert!(std::fs::read_to_string(again.join("run.meta")).unwrap().contains("resumed_from"));
}
