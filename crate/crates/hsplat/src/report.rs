//! Split evaluation and orbit sweeps.

use std::fmt::Write as _;

use hsplat_core::dataset::Instance;
use hsplat_core::evaluate::{bad_pixel_analysis, psnr, ssim, BadPixelReport, SSIM_WINDOW};
use hsplat_core::numerics::Tensor;
use hsplat_core::scene::CameraPose;
use hsplat_core::trainer::{mean, probes_for, Model};

use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub instance: usize,
    pub view: usize,
    pub back: bool,
    pub psnr: f64,
    /// `None` below the SSIM window size.
    pub ssim: Option<f64>,
    pub baseline: Option<(f64, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<Row>,
    /// Baseline as A, evaluated model as B.
    pub bad_pixels: Option<BadPixelReport>,
}

fn scores(render: &Tensor<f32>, truth: &Tensor<f32>) -> Result<(f64, Option<f64>), Error> {
    let s = truth.shape();
    let ssim = if s[0] >= SSIM_WINDOW && s[1] >= SSIM_WINDOW {
        Some(ssim(render, truth)?)
    } else {
        None
    };
    Ok((psnr(render, truth)?.min(100.0), ssim))
}

/// Every non-input view of every instance reconstructed from view 0 with
/// the full model (children included when the model has them).
pub fn evaluate(model: &Model, instances: &[Instance], baseline: Option<&Model>) -> Result<EvalReport, Error> {
    let probes = probes_for(instances, |_| true);
    let mut rows = Vec::with_capacity(probes.len());
    let (mut a, mut b, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for p in &probes {
        let inst = &instances[p.instance];
        let input = &inst.views[p.input];
        let target = &inst.views[p.target];
        let img = model.render(&input.image, &input.pose, &target.pose, model.config.children)?;
        let (ps, ss) = scores(&img, &target.image)?;
        let base = match baseline {
            Some(m) => {
                let bi = m.render(&input.image, &input.pose, &target.pose, m.config.children)?;
                let s = scores(&bi, &target.image)?;
                a.push(bi);
                b.push(img);
                truth.push(target.image.clone());
                Some(s)
            }
            None => None,
        };
        rows.push(Row {
            instance: inst.id,
            view: target.view,
            back: target.is_back(),
            psnr: ps,
            ssim: ss,
            baseline: base,
        });
    }
    let bad_pixels = match baseline {
        Some(_) => Some(bad_pixel_analysis(&a, &b, &truth)?),
        None => None,
    };
    Ok(EvalReport { rows, bad_pixels })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("instance,view,back,psnr,ssim,baseline_psnr,baseline_ssim\n");
        for r in &self.rows {
            let (bp, bs) = r.baseline.map_or((None, None), |(p, s)| (Some(p), s));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.instance,
                r.view,
                r.back as u8,
                r.psnr,
                opt(r.ssim),
                opt(bp),
                opt(bs)
            );
        }
        s
    }

    /// `key = value` summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let psnrs: Vec<f64> = self.rows.iter().map(|r| r.psnr).collect();
        let back: Vec<f64> = self.rows.iter().filter(|r| r.back).map(|r| r.psnr).collect();
        let ssims: Vec<f64> = self.rows.iter().filter_map(|r| r.ssim).collect();
        let _ = writeln!(s, "views = {}", self.rows.len());
        let _ = writeln!(s, "psnr = {:.4}", mean(&psnrs));
        let _ = writeln!(s, "psnr_back = {:.4}", mean(&back));
        let _ = writeln!(s, "ssim = {:.4}", mean(&ssims));
        if self.rows.iter().any(|r| r.baseline.is_some()) {
            let bp: Vec<f64> = self.rows.iter().filter_map(|r| r.baseline.map(|b| b.0)).collect();
            let bb: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.back)
                .filter_map(|r| r.baseline.map(|b| b.0))
                .collect();
            let _ = writeln!(s, "baseline_psnr = {:.4}", mean(&bp));
            let _ = writeln!(s, "baseline_psnr_back = {:.4}", mean(&bb));
        }
        if let Some(r) = &self.bad_pixels {
            let _ = writeln!(s, "baseline_on_baseline_bad = {:.4}", r.a_on_a);
            let _ = writeln!(s, "model_on_baseline_bad = {:.4}", r.b_on_a);
            let _ = writeln!(s, "baseline_on_model_bad = {:.4}", r.a_on_b);
            let _ = writeln!(s, "model_on_model_bad = {:.4}", r.b_on_b);
            let _ = writeln!(s, "model_lead_on_baseline_bad = {:.4}", r.b_lead_on_a());
            let _ = writeln!(s, "baseline_lead_on_model_bad = {:.4}", r.a_lead_on_b());
        }
        s
    }
}

/// `n` cameras at the input camera's distance and height, evenly spaced in
/// azimuth about the vertical axis, looking at the origin.
pub fn orbit(input: &CameraPose, n: usize) -> Result<Vec<CameraPose>, Error> {
    let c = input.center();
    let radial = (c[0] * c[0] + c[2] * c[2]).sqrt();
    let start = c[0].atan2(c[2]);
    (0..n)
        .map(|i| {
            let az = start + std::f32::consts::TAU * i as f32 / n as f32;
            let eye = [radial * az.sin(), c[1], radial * az.cos()];
            Ok(CameraPose::look_at(
                eye,
                [0.0; 3],
                [0.0, 1.0, 0.0],
                *input.intrinsics(),
                input.znear(),
                input.zfar(),
            )?)
        })
        .collect()
}
