use std::path::Path;

use hsplat::data::{load_dataset, read_pose, record_paths, save_dataset};
use hsplat::ppm;
use hsplat_core::dataset::{generate, render_image, DatasetConfig};

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = DatasetConfig::new(3, 4, 16, 11);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(a.path(), &generate(&cfg).unwrap()).unwrap();
    save_dataset(b.path(), &generate(&cfg).unwrap()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 1 + 1 + 3 + 2 * 12);
    assert_eq!(ta, tb);
}

#[test]
fn manifest_has_one_line_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&DatasetConfig::new(10, 8, 8, 2)).unwrap();
    save_dataset(dir.path(), &data).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 80);
    assert!(manifest.lines().all(|l| l.split_whitespace().count() == 30));
}

#[test]
fn load_restores_split_poses_and_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&DatasetConfig::new(6, 4, 16, 4)).unwrap();
    save_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.config, data.config);
    let ids = |v: &[hsplat_core::dataset::Instance]| v.iter().map(|i| i.id).collect::<Vec<_>>();
    assert_eq!(ids(&back.train), ids(&data.train));
    assert_eq!(ids(&back.test), ids(&data.test));
    assert!(ids(&back.train).iter().all(|i| !ids(&back.test).contains(i)));
    for (x, y) in back.train.iter().chain(&back.test).zip(data.train.iter().chain(&data.test)) {
        assert_eq!(x.scene, y.scene);
        for (u, v) in x.views.iter().zip(&y.views) {
            assert_eq!(u.pose, v.pose);
            assert_eq!(u.image, ppm::decode(&ppm::encode(&v.image).unwrap()).unwrap());
        }
    }
}

#[test]
fn stored_images_are_reproduced_by_their_stored_scene_and_pose() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &generate(&DatasetConfig::new(2, 4, 16, 6)).unwrap()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    for inst in data.train.iter().chain(&data.test) {
        for v in &inst.views {
            let (img_path, pose_path) = record_paths(dir.path(), inst.id, v.view);
            let pose = read_pose(&pose_path).unwrap();
            assert_eq!(pose, v.pose);
            let again = render_image(&inst.scene.mixture, &pose, data.config.size).unwrap();
            assert_eq!(ppm::encode(&again).unwrap(), std::fs::read(img_path).unwrap());
        }
    }
}

#[test]
fn missing_or_corrupt_files_are_reported_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let e = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(e.contains("dataset.meta"), "{e}");

    save_dataset(dir.path(), &generate(&DatasetConfig::new(1, 4, 8, 6)).unwrap()).unwrap();
    let (img, _) = record_paths(dir.path(), 0, 2);
    std::fs::write(&img, b"P6\n8 8\n255\n").unwrap();
    let e = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(e.contains("i0000_v02.ppm") && e.contains("truncated"), "{e}");
}
