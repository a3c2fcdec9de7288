//! Two-stage photometric training with Adam.
//!
//! Stage 1 trains the parent branch alone and renders parents only. Stage 2
//! adds the children to every render and unfreezes the child heads.

mod model;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Instance, INPUT_VIEW};
use crate::evaluate::psnr;
use crate::numerics::{mse, NumericsError, ParamSet, Tape, Tensor};

pub use model::{encode, is_child_param, render_target, Model, ModelConfig, ModelGaussianError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iter} (instances {instances:?})")]
    NonFinite { iter: u64, instances: Vec<usize> },
    #[error("no training instances")]
    NoData,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Instances per step.
    pub batch_size: usize,
    /// Target views rendered per instance.
    pub targets: usize,
    pub stage1: u64,
    pub total: u64,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Draw the input view at random instead of always using view 0.
    pub random_input: bool,
    /// From this iteration on the learning rate falls linearly to zero at
    /// `total`.
    pub anneal_from: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            targets: 3,
            stage1: 10_000,
            total: 20_000,
            adam: AdamHyper::default(),
            seed: 0,
            random_input: true,
            anneal_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.stage1 > self.total {
            return Err(TrainError::Config("stage1 must not exceed total iterations"));
        }
        if self.anneal_from.is_some_and(|a| a >= self.total) {
            return Err(TrainError::Config("anneal_from must be below total iterations"));
        }
        if self.batch_size == 0 || self.targets == 0 {
            return Err(TrainError::Config("batch size and target count must be positive"));
        }
        Ok(())
    }

    /// Learning rate of iteration `iter`.
    pub fn lr_at(&self, iter: u64) -> f32 {
        match self.anneal_from {
            Some(a) if iter >= a => {
                let left = self.total.saturating_sub(iter) as f64 / (self.total - a) as f64;
                (self.adam.lr as f64 * left) as f32
            }
            _ => self.adam.lr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Parents = 1,
    Full = 2,
}

impl Stage {
    pub fn at(iter: u64, stage1: u64) -> Self {
        if iter < stage1 {
            Stage::Parents
        } else {
            Stage::Full
        }
    }
}

/// First and second moments mirroring the parameter set, with one step
/// counter per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for (name, t) in params.iter() {
            m.insert(name, Tensor::zeros(t.shape())).expect("unique names");
            v.insert(name, Tensor::zeros(t.shape())).expect("unique names");
        }
        Self {
            m,
            v,
            steps: alloc::vec![0; params.len()],
        }
    }
}

/// One bias-corrected Adam step; `step` counts this update, starting at 1.
pub fn adam_update(param: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], step: u64, hp: &AdamHyper) {
    let b1c = 1.0 - num_traits::Float::powi(hp.beta1 as f64, step as i32);
    let b2c = 1.0 - num_traits::Float::powi(hp.beta2 as f64, step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let mh = m[i] as f64 / b1c;
        let vh = v[i] as f64 / b2c;
        param[i] -= (hp.lr as f64 * mh / (num_traits::Float::sqrt(vh) + hp.eps as f64)) as f32;
    }
}

/// One instance of a batch: an input view and the views to reconstruct.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub instance: usize,
    pub input: usize,
    pub targets: Vec<usize>,
}

/// Batch of iteration `iter`, a pure function of the seed and `iter` so a
/// resumed run draws the same batches.
pub fn sample_batch(config: &TrainConfig, data: &[Instance], iter: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iter);
    let n = config.batch_size.min(data.len());
    let mut picked: Vec<usize> = sample(&mut rng, data.len(), n).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|instance| {
            let views = data[instance].views.len();
            let input = if config.random_input {
                rng.random_range(0..views)
            } else {
                INPUT_VIEW
            };
            let others: Vec<usize> = (0..views).filter(|&v| v != input).collect();
            let k = config.targets.min(others.len());
            let mut targets: Vec<usize> = sample(&mut rng, others.len(), k)
                .into_iter()
                .map(|i| others[i])
                .collect();
            targets.sort_unstable();
            Sample {
                instance,
                input,
                targets,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub iter: u64,
    pub stage: Stage,
    pub loss: f32,
    /// Sum of absolute child-head gradient entries.
    pub child_grad_l1: f64,
}

/// Mean over all (instance, target) pairs of the per-image MSE, followed by
/// one Adam update of every trainable tensor. Child heads are left out of
/// the render and the update in stage 1.
pub fn training_step(
    model: &mut Model,
    adam: &mut AdamState,
    hp: &AdamHyper,
    stage: Stage,
    data: &[Instance],
    batch: &[Sample],
    iter: u64,
) -> Result<StepReport, TrainError> {
    let with_children = stage == Stage::Full && model.config.children;
    let trainable = |name: &str| with_children || !is_child_param(name);
    let tape = Tape::<f32>::new();
    let p = model.params.bind(&tape, trainable);
    let mut terms = Vec::new();
    for s in batch {
        let inst = &data[s.instance];
        let input = &inst.views[s.input];
        let parent = encode(&model.config, &p, &input.image, &input.pose)?;
        for &t in &s.targets {
            let target = &inst.views[t];
            let img = render_target(&model.config, &p, &parent, &input.pose, &target.pose, with_children)?;
            let gt = tape.constant(target.image.clone());
            terms.push(mse(img, gt)?);
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = loss.add(t)?;
    }
    let loss = loss.mul_scalar(1.0 / terms.len() as f32)?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            iter,
            instances: batch.iter().map(|s| data[s.instance].id).collect(),
        });
    }
    let mut grads = tape.backward(loss)?;
    let mut child_grad_l1 = 0.0f64;
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for (idx, name) in names.iter().enumerate() {
        if !trainable(name) {
            continue;
        }
        let var = p.get(name)?;
        let Some(g) = grads.take(var) else { continue };
        if is_child_param(name) {
            child_grad_l1 += g.data().iter().map(|v| v.abs() as f64).sum::<f64>();
        }
        adam.steps[idx] += 1;
        let step = adam.steps[idx];
        let param = model.params.get_mut(name).expect("bound name");
        let m = adam.m.get_mut(name).expect("moment per parameter");
        let v = adam.v.get_mut(name).expect("moment per parameter");
        adam_update(param.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, hp);
    }
    Ok(StepReport {
        iter,
        stage,
        loss: value,
        child_grad_l1,
    })
}

/// Model, optimizer state and iteration counter of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    /// Completed iterations.
    pub iter: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = AdamState::zeros_like(&model.params);
        Ok(Self {
            model,
            config,
            adam,
            iter: 0,
        })
    }

    pub fn stage(&self) -> Stage {
        Stage::at(self.iter, self.config.stage1)
    }

    pub fn done(&self) -> bool {
        self.iter >= self.config.total
    }

    pub fn step(&mut self, data: &[Instance]) -> Result<StepReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::NoData);
        }
        let batch = sample_batch(&self.config, data, self.iter);
        let stage = self.stage();
        let hyper = AdamHyper {
            lr: self.config.lr_at(self.iter),
            ..self.config.adam
        };
        let report = training_step(
            &mut self.model,
            &mut self.adam,
            &hyper,
            stage,
            data,
            &batch,
            self.iter,
        )?;
        self.iter += 1;
        Ok(report)
    }
}

/// An input view and a view to reconstruct from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub instance: usize,
    pub input: usize,
    pub target: usize,
}

/// Every non-input view of every instance, seen from view 0.
pub fn probes_for(data: &[Instance], filter: impl Fn(&crate::dataset::View) -> bool) -> Vec<Probe> {
    data.iter()
        .enumerate()
        .flat_map(|(i, inst)| {
            inst.views
                .iter()
                .filter(|v| v.view != INPUT_VIEW && filter(v))
                .map(move |v| Probe {
                    instance: i,
                    input: INPUT_VIEW,
                    target: v.view,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Renders of every probe plus their PSNR against ground truth. Infinite
/// PSNRs are capped at 100 dB before averaging.
pub fn probe_renders(
    model: &Model,
    data: &[Instance],
    probes: &[Probe],
    with_children: bool,
) -> Result<(Vec<Tensor<f32>>, Vec<f64>), NumericsError> {
    let mut images = Vec::with_capacity(probes.len());
    let mut scores = Vec::with_capacity(probes.len());
    for pr in probes {
        let inst = &data[pr.instance];
        let input = &inst.views[pr.input];
        let target = &inst.views[pr.target];
        let img = model.render(&input.image, &input.pose, &target.pose, with_children)?;
        scores.push(psnr(&img, &target.image)?.min(100.0));
        images.push(img);
    }
    Ok((images, scores))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
