use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hsplat::checkpoint;
use hsplat::config::RunConfig;
use hsplat::data::{load_dataset, read_pose, save_dataset, write_pose};
use hsplat::report::{evaluate, orbit};
use hsplat::runner::{self, write_run_meta};
use hsplat::{create_dir, ppm, write_file, CODE_VERSION};
use hsplat_core::dataset::{generate, DatasetConfig};
use hsplat_core::hierarchy::CameraMode;
use hsplat_core::verify;

#[derive(Parser)]
#[command(name = "hsplat", version, about = "Single-image 3D reconstruction with parent and child Gaussian splats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view dataset with hidden parts.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes checkpoints, metrics.csv and probe renders.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        camera_mode: Option<CameraMode>,
        #[arg(long)]
        stage1: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render one target view from an input image and its pose.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// `IMAGE.ppm+POSE.pose`
        #[arg(long)]
        input: String,
        /// Pose file of the target camera.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave the child Gaussians out.
        #[arg(long)]
        parents_only: bool,
    },
    /// Render an orbit of views around the reconstruction.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        /// `IMAGE.ppm+POSE.pose`
        #[arg(long)]
        input: String,
        #[arg(long, default_value_t = 8)]
        orbit: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parents_only: bool,
    },
    /// Score a checkpoint on a dataset split; prints a summary to stdout.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Second checkpoint for the two-way bad-pixel comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Module::All)]
        module: Module,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Module {
    Numerics,
    Rasterizer,
    Encoder,
    Hierarchy,
    All,
}

fn split_input(input: &str) -> Result<(PathBuf, PathBuf)> {
    let (img, pose) = input
        .rsplit_once('+')
        .with_context(|| format!("--input must be IMAGE+POSE, got {input:?}"))?;
    Ok((img.into(), pose.into()))
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn load_model(path: &Path) -> Result<hsplat_core::trainer::Model> {
    Ok(checkpoint::load(path)?.model()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            out,
            instances,
            views,
            size,
            seed,
        } => {
            let cfg = DatasetConfig::new(instances, views, size, seed);
            let data = generate(&cfg)?;
            save_dataset(&out, &data)?;
            let meta = format!(
                "verb = generate-data\ninstances = {instances}\nviews = {views}\nsize = {size}\nseed = {seed}\ncode_version = {CODE_VERSION}\n"
            );
            write_file(&out.join("run.meta"), meta.as_bytes())?;
            eprintln!("wrote {} records to {}", data.records(), out.display());
        }
        Command::Train {
            data,
            out,
            config,
            camera_mode,
            stage1,
            iters,
            k,
            seed,
            resume,
            overrides,
        } => {
            let dataset = load_dataset(&data)?;
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            cfg.size = dataset.config.size;
            for o in &overrides {
                let (key, value) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
                cfg.set(key.trim(), value.trim())?;
            }
            if let Some(m) = camera_mode {
                cfg.camera_mode = m;
            }
            if let Some(v) = stage1 {
                cfg.stage1 = v;
            }
            if let Some(v) = iters {
                cfg.iters = v;
            }
            if let Some(v) = k {
                cfg.k = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let resume = resume.as_deref().map(checkpoint::load).transpose()?;
            eprintln!("resolved config:\n{}", cfg.to_text());
            let outcome = runner::train(&cfg, &dataset, &out, resume, &mut |line| eprintln!("{line}"))?;
            eprintln!(
                "finished at iteration {}; final checkpoint {}",
                outcome.trainer.iter,
                runner::final_path(&out).display()
            );
        }
        Command::Render {
            ckpt,
            input,
            target,
            out,
            parents_only,
        } => {
            let ck = checkpoint::load(&ckpt)?;
            let model = ck.model()?;
            let (img_path, pose_path) = split_input(&input)?;
            let image = ppm::read(&img_path)?;
            let input_pose = read_pose(&pose_path)?;
            let target_pose = read_pose(&target)?;
            let children = model.config.children && !parents_only;
            let img = model.render(&image, &input_pose, &target_pose, children)?;
            ppm::write(&out, &img)?;
            write_run_meta(
                parent_dir(&out),
                &ck.config,
                &[
                    ("verb", "render".into()),
                    ("ckpt", ckpt.display().to_string()),
                    ("input", input.clone()),
                    ("target", target.display().to_string()),
                    ("parents_only", parents_only.to_string()),
                ],
            )?;
        }
        Command::Sweep {
            ckpt,
            input,
            orbit: n,
            out,
            parents_only,
        } => {
            if n == 0 {
                bail!("--orbit must be positive");
            }
            let ck = checkpoint::load(&ckpt)?;
            let model = ck.model()?;
            let (img_path, pose_path) = split_input(&input)?;
            let image = ppm::read(&img_path)?;
            let input_pose = read_pose(&pose_path)?;
            create_dir(&out)?;
            let children = model.config.children && !parents_only;
            for (i, pose) in orbit(&input_pose, n)?.iter().enumerate() {
                let img = model.render(&image, &input_pose, pose, children)?;
                ppm::write(&out.join(format!("frame_{i:03}.ppm")), &img)?;
                write_pose(&out.join(format!("frame_{i:03}.pose")), pose)?;
            }
            write_run_meta(
                &out,
                &ck.config,
                &[
                    ("verb", "sweep".into()),
                    ("ckpt", ckpt.display().to_string()),
                    ("input", input.clone()),
                    ("orbit", n.to_string()),
                    ("parents_only", parents_only.to_string()),
                ],
            )?;
        }
        Command::Evaluate {
            ckpt,
            data,
            split,
            out,
            baseline,
        } => {
            let ck = checkpoint::load(&ckpt)?;
            let model = ck.model()?;
            let base = baseline.as_deref().map(load_model).transpose()?;
            let dataset = load_dataset(&data)?;
            let instances = match split {
                Split::Train => &dataset.train,
                Split::Test => &dataset.test,
            };
            if instances.is_empty() {
                bail!("the requested split of {} is empty", data.display());
            }
            let report = evaluate(&model, instances, base.as_ref())?;
            write_file(&out, report.to_csv().as_bytes())?;
            print!("{}", report.summary());
            write_run_meta(
                parent_dir(&out),
                &ck.config,
                &[
                    ("verb", "evaluate".into()),
                    ("ckpt", ckpt.display().to_string()),
                    ("data", data.display().to_string()),
                    (
                        "baseline",
                        baseline.map_or("none".into(), |b| b.display().to_string()),
                    ),
                ],
            )?;
        }
        Command::Gradcheck { module, seed } => {
            let mut checks = Vec::new();
            let want = |m: Module| module == m || module == Module::All;
            if want(Module::Numerics) {
                checks.extend(verify::primitives(seed, 10)?);
            }
            if want(Module::Rasterizer) {
                checks.extend(verify::rasterizer(seed)?);
            }
            if want(Module::Encoder) {
                checks.extend(verify::encoder(seed)?);
            }
            if want(Module::Hierarchy) {
                checks.extend(verify::hierarchy(seed)?);
            }
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{} {} max_rel_error={:.3e} tol={:.0e} entries={}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_rel_error,
                    c.tol,
                    c.entries
                );
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks failed", checks.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
