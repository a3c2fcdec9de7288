//! Training runs on disk: metric log, checkpoints, probe renders.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hsplat_core::dataset::{Dataset, Instance};
use hsplat_core::trainer::{mean, probe_renders, probes_for, Model, Probe, Stage, Trainer};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::{create_dir, ppm, read_text, write_file, Error, CODE_VERSION};

pub const METRICS_HEADER: &str = "iter,stage,loss,psnr_probe";
/// Probe renders written per evaluation.
const SAVED_PROBES: usize = 2;

/// Instances the probes are drawn from: the test split, or the training
/// split when there is no test split.
pub fn probe_pool(data: &Dataset) -> &[Instance] {
    if data.test.is_empty() {
        &data.train
    } else {
        &data.test
    }
}

/// Up to `n` (view 0, target) pairs, taking one target per instance in turn
/// so the probes spread over instances.
pub fn select_probes(pool: &[Instance], n: usize) -> Vec<Probe> {
    let all = probes_for(pool, |_| true);
    let per = pool.iter().map(|i| i.views.len().saturating_sub(1)).max().unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..per {
        for inst in 0..pool.len() {
            if out.len() == n {
                return out;
            }
            if let Some(p) = all.iter().filter(|p| p.instance == inst).nth(round) {
                out.push(*p);
            }
        }
    }
    out
}

pub fn render_children(model: &Model, stage: Stage) -> bool {
    model.config.children && stage == Stage::Full
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub iter: u64,
    pub psnr: f64,
}

pub struct RunOutcome {
    pub trainer: Trainer,
    /// Loss of every iteration run in this call.
    pub losses: Vec<f32>,
    pub evaluations: Vec<Evaluation>,
}

pub fn checkpoint_path(out: &Path, iter: u64) -> PathBuf {
    out.join(format!("ckpt_{iter:06}.hspl"))
}

pub fn final_path(out: &Path) -> PathBuf {
    out.join("final.hspl")
}

pub fn write_run_meta(out: &Path, config: &RunConfig, extra: &[(&str, String)]) -> Result<(), Error> {
    let mut s = config.to_text();
    let _ = writeln!(s, "code_version = {CODE_VERSION}");
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    write_file(&out.join("run.meta"), s.as_bytes())
}

/// Keeps the header and rows of iterations before `iter`.
fn truncate_metrics(text: &str, iter: u64) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for line in text.lines().skip(1) {
        let keep = line
            .split(',')
            .next()
            .and_then(|f| f.parse::<u64>().ok())
            .is_some_and(|i| i < iter);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Probe PSNR of the current model, plus full and parent-only renders of
/// the first probes.
pub fn evaluate_probes(
    trainer: &Trainer,
    pool: &[Instance],
    probes: &[Probe],
    render_dir: Option<&Path>,
) -> Result<f64, Error> {
    let model = &trainer.model;
    let children = render_children(model, trainer.stage());
    let (images, scores) = probe_renders(model, pool, probes, children)?;
    if let Some(dir) = render_dir {
        let (parents, _) = probe_renders(model, pool, &probes[..probes.len().min(SAVED_PROBES)], false)?;
        for (k, p) in parents.iter().enumerate() {
            let stem = format!("iter{:06}_p{k}", trainer.iter);
            ppm::write(&dir.join(format!("{stem}_parents.ppm")), p)?;
            ppm::write(&dir.join(format!("{stem}_full.ppm")), &images[k])?;
        }
    }
    Ok(mean(&scores))
}

/// Trains until `config.iters`, starting from `resume` when given. Writes
/// `metrics.csv`, `run.meta`, periodic checkpoints, `final.hspl` and probe
/// renders under `out`. `log` receives one progress line per evaluation.
pub fn train(
    config: &RunConfig,
    data: &Dataset,
    out: &Path,
    resume: Option<Checkpoint>,
    log: &mut dyn FnMut(&str),
) -> Result<RunOutcome, Error> {
    if data.train.is_empty() {
        return Err(Error::Config("dataset has no training instances".into()));
    }
    if config.size != data.config.size {
        return Err(Error::Config(format!(
            "config size {} does not match the dataset's {}",
            config.size, data.config.size
        )));
    }
    create_dir(out)?;
    let render_dir = out.join("probes");
    create_dir(&render_dir)?;
    let metrics_path = out.join("metrics.csv");
    let resumed_from = resume.as_ref().map(|c| c.iter);
    let mut trainer = match resume {
        Some(ck) => {
            let mut ck = ck;
            ck.config = config.clone();
            ck.into_trainer()?
        }
        None => Trainer::new(Model::init(config.model_config()?, config.seed)?, config.train_config())?,
    };
    let mut metrics = match resumed_from {
        Some(iter) if metrics_path.exists() => truncate_metrics(&read_text(&metrics_path)?, iter),
        _ => format!("{METRICS_HEADER}\n"),
    };
    write_run_meta(
        out,
        config,
        &[(
            "resumed_from",
            resumed_from.map_or("none".into(), |i| i.to_string()),
        )],
    )?;

    let pool = probe_pool(data);
    let probes = select_probes(pool, config.probes);
    let mut losses = Vec::new();
    let mut evaluations = Vec::new();
    let start = Instant::now();
    let first = trainer.iter;
    while !trainer.done() {
        let report = trainer.step(&data.train)?;
        losses.push(report.loss);
        let done = trainer.iter;
        let eval = !probes.is_empty()
            && ((config.eval_every > 0 && done % config.eval_every == 0) || trainer.done());
        let psnr = if eval {
            let p = evaluate_probes(&trainer, pool, &probes, Some(&render_dir))?;
            evaluations.push(Evaluation { iter: done, psnr: p });
            let rate = start.elapsed().as_secs_f64() / (done - first) as f64;
            log(&format!(
                "iter {done} stage {} loss {:.6} probe psnr {p:.3} ({:.0} ms/iter)",
                report.stage as u8,
                report.loss,
                rate * 1e3
            ));
            format!("{p}")
        } else {
            String::new()
        };
        let _ = writeln!(metrics, "{},{},{},{psnr}", report.iter, report.stage as u8, report.loss);
        let boundary = done == config.stage1;
        let periodic = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
        if boundary || periodic {
            checkpoint::save(&checkpoint_path(out, done), &Checkpoint::from_trainer(config, &trainer))?;
            write_file(&metrics_path, metrics.as_bytes())?;
        }
    }
    write_file(&metrics_path, metrics.as_bytes())?;
    checkpoint::save(&final_path(out), &Checkpoint::from_trainer(config, &trainer))?;
    Ok(RunOutcome {
        trainer,
        losses,
        evaluations,
    })
}
