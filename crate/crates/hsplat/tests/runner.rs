use hsplat::checkpoint;
use hsplat::config::RunConfig;
use hsplat::runner::{checkpoint_path, final_path, select_probes, train, METRICS_HEADER};
use hsplat_core::dataset::{generate, Dataset, DatasetConfig};
use hsplat_core::trainer::Stage;

fn data() -> Dataset {
    generate(&DatasetConfig::new(3, 4, 16, 7)).unwrap()
}

fn config() -> RunConfig {
    RunConfig {
        size: 16,
        feature_width: 8,
        batch_size: 2,
        targets: 2,
        stage1: 3,
        iters: 6,
        lr: 1e-3,
        seed: 4,
        eval_every: 2,
        checkpoint_every: 2,
        probes: 3,
        ..RunConfig::default()
    }
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn metrics_log_marks_the_stage_switch() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config(), &data(), dir.path(), None, &mut |_| {}).unwrap();
    assert_eq!(out.trainer.iter, 6);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    let r = rows(&csv);
    assert_eq!(r.len(), 6);
    let stages: Vec<&str> = r.iter().map(|x| x[1].as_str()).collect();
    assert_eq!(stages, ["1", "1", "1", "2", "2", "2"]);
    let evaluated: Vec<&str> = r.iter().filter(|x| !x[3].is_empty()).map(|x| x[0].as_str()).collect();
    assert_eq!(evaluated, ["1", "3", "5"]);
    assert_eq!(out.evaluations.len(), 3);
}

#[test]
fn checkpoints_record_the_stage_boundary() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(), &data(), dir.path(), None, &mut |_| {}).unwrap();
    let before = checkpoint::load(&checkpoint_path(dir.path(), 2)).unwrap();
    let at = checkpoint::load(&checkpoint_path(dir.path(), 3)).unwrap();
    assert_eq!((before.iter, before.stage), (2, Stage::Parents));
    assert_eq!((at.iter, at.stage), (3, Stage::Full));
    assert_eq!(checkpoint::load(&final_path(dir.path())).unwrap().iter, 6);
}

#[test]
fn probe_renders_include_a_parent_only_version() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(), &data(), dir.path(), None, &mut |_| {}).unwrap();
    for stem in ["iter000006_p0", "iter000006_p1"] {
        for kind in ["full", "parents"] {
            assert!(dir.path().join("probes").join(format!("{stem}_{kind}.ppm")).exists());
        }
    }
    let full = std::fs::read(dir.path().join("probes/iter000006_p0_full.ppm")).unwrap();
    let parents = std::fs::read(dir.path().join("probes/iter000006_p0_parents.ppm")).unwrap();
    assert_ne!(full, parents);
}

#[test]
fn run_meta_holds_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(), &data(), dir.path(), None, &mut |_| {}).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("run.meta")).unwrap();
    assert!(meta.contains("seed = 4") && meta.contains("code_version = hsplat "));
    let mut c = RunConfig::default();
    for line in meta.lines().filter(|l| !l.starts_with("code_version") && !l.starts_with("resumed_from")) {
        c.apply(line).unwrap();
    }
    assert_eq!(c, config());
}

#[test]
fn resumed_run_matches_an_unbroken_one() {
    let data = data();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = train(&config(), &data, a.path(), None, &mut |_| {}).unwrap();

    // a run whose later iterations are discarded by resuming at iteration 2
    train(&config(), &data, b.path(), None, &mut |_| {}).unwrap();
    let ck = checkpoint::load(&checkpoint_path(b.path(), 2)).unwrap();
    let rest = train(&config(), &data, b.path(), Some(ck), &mut |_| {}).unwrap();

    assert_eq!(rest.losses.len(), 4);
    for (x, y) in full.losses[2..].iter().zip(&rest.losses) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
    assert_eq!(full.trainer.model.params, rest.trainer.model.params);
    let ra = rows(&std::fs::read_to_string(a.path().join("metrics.csv")).unwrap());
    let rb = rows(&std::fs::read_to_string(b.path().join("metrics.csv")).unwrap());
    assert_eq!(ra, rb);
}

#[test]
fn probes_spread_over_instances() {
    let data = data();
    let p = select_probes(&data.train, 3);
    assert_eq!(p.len(), 3);
    assert_eq!(p.iter().map(|x| x.instance).collect::<Vec<_>>(), [0, 1, 2]);
    assert!(p.iter().all(|x| x.input == 0 && x.target != 0));
}

#[test]
fn size_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config();
    c.size = 32;
    assert!(train(&c, &data(), dir.path(), None, &mut |_| {}).is_err());
}
