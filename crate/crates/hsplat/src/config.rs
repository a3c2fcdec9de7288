//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments win,
//! so command line flags are applied by calling [`RunConfig::set`] after the
//! file has been read.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use hsplat_core::encoder::{EncoderConfig, LiftConfig};
use hsplat_core::hierarchy::{CameraMode, HierarchyConfig};
use hsplat_core::rasterizer::RasterConfig;
use hsplat_core::trainer::{AdamHyper, ModelConfig, TrainConfig};

use crate::{read_text, Error};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Image side; taken from the dataset when training.
    pub size: usize,
    pub feature_width: usize,
    pub depth: usize,
    pub extent: f32,
    pub k: usize,
    pub hidden: usize,
    pub camera_mode: CameraMode,
    pub children: bool,
    pub offset_cap: Option<f32>,
    pub child_opacity: f32,
    pub tile_size: usize,
    pub batch_size: usize,
    pub targets: usize,
    pub stage1: u64,
    pub iters: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
    pub random_input: bool,
    /// Start of the linear learning-rate decay; `none` keeps it constant.
    pub anneal_from: Option<u64>,
    /// Probe evaluation period in iterations; 0 disables.
    pub eval_every: u64,
    /// Checkpoint period in iterations; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Number of (input, target) probe pairs.
    pub probes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        let train = TrainConfig::default();
        let hierarchy = HierarchyConfig::default();
        Self {
            size: 32,
            feature_width: 32,
            depth: 2,
            extent: 1.0,
            k: hierarchy.k,
            hidden: hierarchy.hidden,
            camera_mode: hierarchy.mode,
            children: true,
            offset_cap: hierarchy.offset_cap,
            child_opacity: hierarchy.init_opacity,
            tile_size: 8,
            batch_size: train.batch_size,
            targets: train.targets,
            stage1: train.stage1,
            iters: train.total,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            random_input: train.random_input,
            anneal_from: train.anneal_from,
            eval_every: 500,
            checkpoint_every: 1000,
            probes: 8,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, Error> {
    match value {
        "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or("none".to_string(), |v| v.to_string())
}

/// `(key, value)` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key {
            "size" => self.size = parse(key, value)?,
            "feature_width" => self.feature_width = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "extent" => self.extent = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "camera_mode" => self.camera_mode = parse(key, value)?,
            "children" => self.children = parse(key, value)?,
            "offset_cap" => self.offset_cap = parse_opt(key, value)?,
            "child_opacity" => self.child_opacity = parse(key, value)?,
            "tile_size" => self.tile_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "targets" => self.targets = parse(key, value)?,
            "stage1" => self.stage1 = parse(key, value)?,
            "iters" => self.iters = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "random_input" => self.random_input = parse(key, value)?,
            "anneal_from" => self.anneal_from = parse_opt(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "probes" => self.probes = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, text: &str) -> Result<(), Error> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut c = Self::default();
        c.apply(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_text(&read_text(path)?).map_err(|e| match e {
            Error::Config(reason) => Error::format(path, reason),
            e => e,
        })
    }

    /// Every key, one per line, in a form [`RunConfig::from_text`] reads back
    /// exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("size", self.size.to_string());
        line("feature_width", self.feature_width.to_string());
        line("depth", self.depth.to_string());
        line("extent", self.extent.to_string());
        line("k", self.k.to_string());
        line("hidden", self.hidden.to_string());
        line("camera_mode", self.camera_mode.to_string());
        line("children", self.children.to_string());
        line("offset_cap", show_opt(self.offset_cap));
        line("child_opacity", self.child_opacity.to_string());
        line("tile_size", self.tile_size.to_string());
        line("batch_size", self.batch_size.to_string());
        line("targets", self.targets.to_string());
        line("stage1", self.stage1.to_string());
        line("iters", self.iters.to_string());
        line("lr", self.lr.to_string());
        line("beta1", self.beta1.to_string());
        line("beta2", self.beta2.to_string());
        line("adam_eps", self.adam_eps.to_string());
        line("seed", self.seed.to_string());
        line("random_input", self.random_input.to_string());
        line("anneal_from", show_opt(self.anneal_from));
        line("eval_every", self.eval_every.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        line("probes", self.probes.to_string());
        s
    }

    pub fn model_config(&self) -> Result<ModelConfig, Error> {
        let encoder = EncoderConfig::new(self.feature_width, self.depth, self.size, self.size)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.k == 0 || self.hidden == 0 || self.tile_size == 0 {
            return Err(Error::Config("k, hidden and tile_size must be positive".into()));
        }
        Ok(ModelConfig {
            encoder,
            lift: LiftConfig::new(self.extent),
            hierarchy: HierarchyConfig {
                k: self.k,
                hidden: self.hidden,
                mode: self.camera_mode,
                offset_cap: self.offset_cap,
                init_opacity: self.child_opacity,
                ..HierarchyConfig::default()
            },
            children: self.children,
            raster: RasterConfig {
                tile_size: self.tile_size,
                ..RasterConfig::default()
            },
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            targets: self.targets,
            stage1: self.stage1,
            total: self.iters,
            adam: AdamHyper {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            seed: self.seed,
            random_input: self.random_input,
            anneal_from: self.anneal_from,
        }
    }
}
