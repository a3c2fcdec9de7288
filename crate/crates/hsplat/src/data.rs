//! On-disk datasets.
//!
//! ```text
//! DIR/dataset.meta          key = value generator settings
//! DIR/manifest.txt          instance view image K(9) extrinsics(16) znear zfar
//! DIR/images/iNNNN_vMM.ppm  P6 renders
//! DIR/poses/iNNNN_vMM.pose  the pose fields of the matching manifest line
//! DIR/scenes/iNNNN.gauss    ground-truth mixture
//! ```
//!
//! `.gauss` files are little-endian: `"HSGS"`, u32 version, u32 hidden start,
//! u32 hidden end, f32 extent, u32 count, then per Gaussian 3 mean, 4 quat,
//! 3 scale and 1 opacity floats, a color tag byte (0 = SH, 1 = RGB) and 12 or
//! 3 color floats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hsplat_core::dataset::{Dataset, DatasetConfig, Instance, SyntheticScene, View};
use hsplat_core::scene::{CameraPose, Gaussian3D, GaussianColor, GaussianMixture, SH_COEFFS};

use crate::config::parse_pairs;
use crate::{create_dir, ppm, read_file, read_text, write_file, Error, CODE_VERSION};

pub const SCENE_MAGIC: &[u8; 4] = b"HSGS";
pub const SCENE_VERSION: u32 = 1;

pub fn image_name(instance: usize, view: usize) -> String {
    format!("i{instance:04}_v{view:02}")
}

/// The 27 pose numbers of a manifest line.
pub fn pose_fields(pose: &CameraPose) -> String {
    let mut s = String::new();
    for row in pose.intrinsics() {
        for v in row {
            let _ = write!(s, "{v} ");
        }
    }
    for row in pose.world_to_camera() {
        for v in row {
            let _ = write!(s, "{v} ");
        }
    }
    let _ = write!(s, "{} {}", pose.znear(), pose.zfar());
    s
}

pub fn parse_pose(fields: &[&str]) -> Result<CameraPose, String> {
    if fields.len() != 27 {
        return Err(format!("a pose has 27 numbers, found {}", fields.len()));
    }
    let v: Vec<f32> = fields
        .iter()
        .map(|f| f.parse().map_err(|_| format!("bad number {f:?}")))
        .collect::<Result<_, _>>()?;
    let k = std::array::from_fn(|i| std::array::from_fn(|j| v[i * 3 + j]));
    let e = std::array::from_fn(|i| std::array::from_fn(|j| v[9 + i * 4 + j]));
    CameraPose::new(k, e, v[25], v[26]).map_err(|e| e.to_string())
}

pub fn write_pose(path: &Path, pose: &CameraPose) -> Result<(), Error> {
    write_file(path, format!("{}\n", pose_fields(pose)).as_bytes())
}

pub fn read_pose(path: &Path) -> Result<CameraPose, Error> {
    let text = read_text(path)?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    parse_pose(&fields).map_err(|r| Error::format(path, r))
}

pub fn encode_scene(scene: &SyntheticScene) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SCENE_MAGIC);
    for v in [
        SCENE_VERSION,
        scene.hidden.start as u32,
        scene.hidden.end as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&scene.extent.to_le_bytes());
    out.extend_from_slice(&(scene.mixture.len() as u32).to_le_bytes());
    let floats = |out: &mut Vec<u8>, fs: &[f32]| {
        for f in fs {
            out.extend_from_slice(&f.to_le_bytes());
        }
    };
    for g in &scene.mixture.gaussians {
        floats(&mut out, &g.mean());
        floats(&mut out, &g.quat());
        floats(&mut out, &g.scale());
        floats(&mut out, &[g.opacity()]);
        match g.color() {
            GaussianColor::Sh(c) => {
                out.push(0);
                floats(&mut out, c);
            }
            GaussianColor::Rgb(c) => {
                out.push(1);
                floats(&mut out, c);
            }
        }
    }
    out
}

pub fn decode_scene(bytes: &[u8]) -> Result<SyntheticScene, String> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated scene")?;
        pos += n;
        Ok(s)
    };
    if take(4)? != SCENE_MAGIC {
        return Err("not a scene file (bad magic)".into());
    }
    let mut u32s = [0u32; 3];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    }
    if u32s[0] != SCENE_VERSION {
        return Err(format!("scene format version {}, expected {SCENE_VERSION}", u32s[0]));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().expect("4 bytes"));
    let extent = f(take(4)?);
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let mut gaussians = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let v: Vec<f32> = take(44)?.chunks_exact(4).map(f).collect();
        let color = match take(1)?[0] {
            0 => {
                let c: Vec<f32> = take(4 * SH_COEFFS)?.chunks_exact(4).map(f).collect();
                GaussianColor::Sh(c.try_into().expect("SH coefficients"))
            }
            1 => {
                let c: Vec<f32> = take(12)?.chunks_exact(4).map(f).collect();
                GaussianColor::Rgb(c.try_into().expect("3 channels"))
            }
            t => return Err(format!("unknown color tag {t}")),
        };
        let g = Gaussian3D::new(
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5], v[6]],
            [v[7], v[8], v[9]],
            v[10],
            color,
        )
        .map_err(|e| e.to_string())?;
        gaussians.push(g);
    }
    if pos != bytes.len() {
        return Err("trailing bytes after the last Gaussian".into());
    }
    let hidden = u32s[1] as usize..u32s[2] as usize;
    if hidden.start > hidden.end || hidden.end > count {
        return Err(format!("hidden range {hidden:?} outside {count} Gaussians"));
    }
    Ok(SyntheticScene {
        mixture: GaussianMixture::new(gaussians),
        hidden,
        extent,
    })
}

fn meta_text(c: &DatasetConfig) -> String {
    format!(
        "instances = {}\nviews = {}\nsize = {}\nseed = {}\ntest_every = {}\nradius = {}\nfocal = {}\nznear = {}\nzfar = {}\ncode_version = {CODE_VERSION}\n",
        c.instances, c.views, c.size, c.seed, c.test_every, c.radius, c.focal, c.znear, c.zfar
    )
}

fn parse_meta(path: &Path, text: &str) -> Result<DatasetConfig, Error> {
    let pairs: BTreeMap<String, String> = parse_pairs(text)
        .map_err(|e| Error::format(path, e.to_string()))?
        .into_iter()
        .collect();
    fn get<T: std::str::FromStr>(path: &Path, m: &BTreeMap<String, String>, k: &str) -> Result<T, Error> {
        m.get(k)
            .ok_or_else(|| Error::format(path, format!("missing {k}")))?
            .parse()
            .map_err(|_| Error::format(path, format!("bad {k}")))
    }
    Ok(DatasetConfig {
        instances: get(path, &pairs, "instances")?,
        views: get(path, &pairs, "views")?,
        size: get(path, &pairs, "size")?,
        seed: get(path, &pairs, "seed")?,
        test_every: get(path, &pairs, "test_every")?,
        radius: get(path, &pairs, "radius")?,
        focal: get(path, &pairs, "focal")?,
        znear: get(path, &pairs, "znear")?,
        zfar: get(path, &pairs, "zfar")?,
    })
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<(), Error> {
    for sub in ["images", "poses", "scenes"] {
        create_dir(&dir.join(sub))?;
    }
    let mut instances: Vec<&Instance> = data.train.iter().chain(&data.test).collect();
    instances.sort_by_key(|i| i.id);
    let mut manifest = String::new();
    for inst in instances {
        write_file(
            &dir.join("scenes").join(format!("i{:04}.gauss", inst.id)),
            &encode_scene(&inst.scene),
        )?;
        for v in &inst.views {
            let name = image_name(inst.id, v.view);
            let rel = format!("images/{name}.ppm");
            ppm::write(&dir.join(&rel), &v.image)?;
            write_pose(&dir.join("poses").join(format!("{name}.pose")), &v.pose)?;
            let _ = writeln!(manifest, "{} {} {rel} {}", inst.id, v.view, pose_fields(&v.pose));
        }
    }
    write_file(&dir.join("manifest.txt"), manifest.as_bytes())?;
    write_file(&dir.join("dataset.meta"), meta_text(&data.config).as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, Error> {
    let meta_path = dir.join("dataset.meta");
    let config = parse_meta(&meta_path, &read_text(&meta_path)?)?;
    let manifest_path = dir.join("manifest.txt");
    let manifest = read_text(&manifest_path)?;
    let mut views: BTreeMap<usize, Vec<View>> = BTreeMap::new();
    for (no, line) in manifest.lines().enumerate() {
        let bad = |r: String| Error::format(&manifest_path, format!("line {}: {r}", no + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 30 {
            return Err(bad(format!("expected 30 fields, found {}", f.len())));
        }
        let instance: usize = f[0].parse().map_err(|_| bad("bad instance id".into()))?;
        let view: usize = f[1].parse().map_err(|_| bad("bad view id".into()))?;
        let pose = parse_pose(&f[3..]).map_err(bad)?;
        let image = ppm::read(&dir.join(f[2]))?;
        if image.shape() != [config.size, config.size, 3] {
            return Err(bad(format!("image {} has shape {:?}", f[2], image.shape())));
        }
        views.entry(instance).or_default().push(View { view, image, pose });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (id, mut vs) in views {
        vs.sort_by_key(|v| v.view);
        let scene_path = dir.join("scenes").join(format!("i{id:04}.gauss"));
        let scene = decode_scene(&read_file(&scene_path)?).map_err(|r| Error::format(&scene_path, r))?;
        let inst = Instance { id, scene, views: vs };
        if config.is_test(id) {
            test.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok(Dataset { config, train, test })
}

/// Paths of the image and pose files of one record.
pub fn record_paths(dir: &Path, instance: usize, view: usize) -> (PathBuf, PathBuf) {
    let name = image_name(instance, view);
    (
        dir.join("images").join(format!("{name}.ppm")),
        dir.join("poses").join(format!("{name}.pose")),
    )
}
