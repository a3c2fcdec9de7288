//! Finite-difference gradient suites for every differentiable stage.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{activate_and_lift, regress_parent_raw, EncoderConfig, LiftConfig};
use crate::hierarchy::HierarchyConfig;
use crate::numerics::{
    concat, gradcheck, gradcheck_subset, mse, GradcheckReport, NumericsError, Objective, ParamSet, Real, Tape,
    Tensor, Var,
};
use crate::rasterizer::{sh_color_var, RasterConfig, RenderLoss};
use crate::scene::CameraPose;
use crate::trainer::{encode, render_target, Model, ModelConfig};

/// Default central-difference step.
pub const STEP: f64 = 1e-3;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;
/// Smaller step for networks with ReLU, so probes rarely straddle a kink.
pub const NETWORK_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn from_report(name: String, r: &GradcheckReport) -> Self {
        Self {
            name,
            entries: r.indices.len(),
            max_rel_error: r.max_rel_error,
            tol: r.tol,
            passed: r.passed,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive shape")
}

/// Magnitudes in `[0.1, 1.5)` with random sign, keeping kinks and poles
/// outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1f32..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    AddBroadcast,
    MulBroadcast,
    AddScalar,
    MulScalar,
    Neg,
    Square,
    Matmul,
    Conv,
    ConvStrided,
    Relu,
    Sigmoid,
    Exp,
    Sqrt,
    Tanh,
    Clamp,
    Sum,
    SumAxis,
    MeanAxis,
    MeanAll,
    Concat,
    L2Norm,
    Reshape,
    BroadcastTo,
    Upsample,
    Narrow,
    Channels,
    Mse,
}

pub const PRIMITIVES: [Prim; 31] = [
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::AddBroadcast,
    Prim::MulBroadcast,
    Prim::AddScalar,
    Prim::MulScalar,
    Prim::Neg,
    Prim::Square,
    Prim::Matmul,
    Prim::Conv,
    Prim::ConvStrided,
    Prim::Relu,
    Prim::Sigmoid,
    Prim::Exp,
    Prim::Sqrt,
    Prim::Tanh,
    Prim::Clamp,
    Prim::Sum,
    Prim::SumAxis,
    Prim::MeanAxis,
    Prim::MeanAll,
    Prim::Concat,
    Prim::L2Norm,
    Prim::Reshape,
    Prim::BroadcastTo,
    Prim::Upsample,
    Prim::Narrow,
    Prim::Channels,
    Prim::Mse,
];

fn apply<'t, T: Real>(prim: Prim, x: Var<'t, T>, other: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
    match prim {
        Prim::Add | Prim::AddBroadcast => x.add(other),
        Prim::Sub => x.sub(other),
        Prim::Mul | Prim::MulBroadcast => x.mul(other),
        Prim::Div => other.div(x),
        Prim::AddScalar => x.add_scalar(T::of(0.7)),
        Prim::MulScalar => x.mul_scalar(T::of(-1.3)),
        Prim::Neg => x.neg(),
        Prim::Square => x.square(),
        Prim::Matmul => x.matmul(other),
        Prim::Conv => x.conv2d(other, None, 1, 1),
        Prim::ConvStrided => x.conv2d(other, None, 2, 1),
        Prim::Relu => x.relu(),
        Prim::Sigmoid => x.sigmoid(),
        Prim::Exp => x.exp(),
        Prim::Sqrt => x.sqrt(),
        Prim::Tanh => x.tanh(),
        Prim::Clamp => x.clamp(T::of(-0.05), T::of(0.05)),
        Prim::Sum => x.sum(),
        Prim::SumAxis => x.sum_axis(1, false),
        Prim::MeanAxis => x.mean_axis(2, true),
        Prim::MeanAll => x.square()?.mean(),
        Prim::Concat => concat(&[other, x, x], 1),
        Prim::L2Norm => x.l2norm_last(),
        Prim::Reshape => x.reshape(&[4, 3]),
        Prim::BroadcastTo => x.broadcast_to(&[2, 3, 4]),
        Prim::Upsample => x.upsample2x(),
        Prim::Narrow => x.narrow(1, 1, 2),
        Prim::Channels => x.channels(1, 2),
        Prim::Mse => mse(x, other),
    }
}

/// `sum(weights * prim(x, other))` with fixed random weights so every
/// output element has its own sensitivity.
pub struct PrimObjective {
    pub prim: Prim,
    pub other: Tensor<f32>,
    pub weights: Tensor<f32>,
}

impl Objective for PrimObjective {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let y = apply(self.prim, x, tape.constant(self.other.cast()))?;
        y.mul(tape.constant(self.weights.cast()))?.sum()
    }
}

/// Random objective and input point for one primitive.
pub fn primitive_case(prim: Prim, rng: &mut ChaCha8Rng) -> (PrimObjective, Tensor<f32>) {
    let none = || Tensor::zeros(&[1]);
    let (x, other) = match prim {
        Prim::Add | Prim::Sub | Prim::Mul | Prim::Mse => (uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)),
        Prim::Div => (away_from_zero(rng, &[3, 4]), uniform(rng, &[3, 4], -1.0, 1.0)),
        Prim::AddBroadcast | Prim::MulBroadcast => (uniform(rng, &[4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)),
        Prim::Matmul => (uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 2], -1.0, 1.0)),
        Prim::Conv | Prim::ConvStrided => (uniform(rng, &[5, 4, 2], -1.0, 1.0), uniform(rng, &[3, 3, 2, 3], -1.0, 1.0)),
        Prim::Relu | Prim::L2Norm => (away_from_zero(rng, &[4, 3]), none()),
        Prim::Clamp => {
            // inside or clearly outside the band, never on its edges
            let mut t = away_from_zero(rng, &[3, 4]);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                if i % 3 == 0 {
                    *v *= 0.02;
                }
            }
            (t, none())
        }
        Prim::Sigmoid | Prim::Exp | Prim::Tanh | Prim::AddScalar | Prim::MulScalar | Prim::Neg | Prim::Square | Prim::Reshape => {
            (uniform(rng, &[3, 4], -2.0, 2.0), none())
        }
        Prim::Sqrt => (uniform(rng, &[3, 4], 0.2, 2.0), none()),
        Prim::Sum | Prim::SumAxis | Prim::MeanAxis | Prim::MeanAll | Prim::Narrow | Prim::Channels => {
            (uniform(rng, &[2, 3, 4], -1.0, 1.0), none())
        }
        Prim::Concat => (uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 2], -1.0, 1.0)),
        Prim::BroadcastTo => (uniform(rng, &[3, 1], -1.0, 1.0), none()),
        Prim::Upsample => (uniform(rng, &[2, 3, 2], -1.0, 1.0), none()),
    };
    let out_shape = {
        let tape = Tape::<f32>::new();
        let y = apply(prim, tape.constant(x.clone()), tape.constant(other.clone())).expect("valid case");
        y.shape()
    };
    let weights = uniform(rng, &out_shape, -1.0, 1.0);
    (PrimObjective { prim, other, weights }, x)
}

/// Every primitive on `trials` random points.
pub fn primitives(seed: u64, trials: usize) -> Result<Vec<Check>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for prim in PRIMITIVES {
        let mut worst: Option<Check> = None;
        for _ in 0..trials {
            let (f, x) = primitive_case(prim, &mut rng);
            let r = gradcheck(&f, &x, STEP, PRIMITIVE_TOL)?;
            let c = Check::from_report(format!("numerics/{prim:?}"), &r);
            if worst.as_ref().is_none_or(|w| c.max_rel_error >= w.max_rel_error) {
                worst = Some(c);
            }
        }
        out.extend(worst);
    }
    Ok(out)
}

fn look_at(eye: [f32; 3], size: usize, focal: f32) -> CameraPose {
    CameraPose::look_at(
        eye,
        [0.0; 3],
        [0.0, 1.0, 0.0],
        CameraPose::intrinsics_for(size, size, focal),
        0.8,
        4.2,
    )
    .expect("valid camera")
}

/// `[N, 14]` rows of mean, quaternion, scale, opacity and RGB.
pub fn three_gaussians() -> Tensor<f32> {
    let rows: [[f32; 14]; 3] = [
        [-0.5, -0.4, 0.1, 0.9, 0.2, -0.1, 0.3, 0.25, 0.15, 0.2, 0.7, 0.9, 0.2, 0.1],
        [0.45, 0.1, -0.2, 0.7, -0.3, 0.5, 0.1, 0.12, 0.3, 0.18, 0.55, 0.1, 0.8, 0.3],
        [0.0, 0.5, 0.4, 0.5, 0.5, 0.1, -0.6, 0.2, 0.2, 0.1, 0.8, 0.2, 0.3, 0.9],
    ];
    Tensor::new(&[3, 14], rows.iter().flatten().copied().collect()).expect("3x14")
}

struct ShLoss {
    center: [f32; 3],
    n: usize,
}

impl Objective for ShLoss {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let x = x.reshape(&[self.n, 15])?;
        let rgb = sh_color_var(x.channels(0, 12)?, x.channels(12, 3)?, self.center)?;
        let w = Tensor::new(
            &[self.n, 3],
            (0..self.n * 3).map(|i| T::of(0.3 + 0.1 * i as f64)).collect(),
        )?;
        rgb.mul(tape.constant(w))?.sum()
    }
}

/// Render loss of three Gaussians on 16x16 against a random target, and
/// degree-1 SH colors.
pub fn rasterizer(seed: u64) -> Result<Vec<Check>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = CameraPose::look_at(
        [0.3, -0.2, -3.0],
        [0.0; 3],
        [0.0, -1.0, 0.0],
        CameraPose::intrinsics_for(16, 16, 18.0),
        0.1,
        10.0,
    )
    .expect("valid camera");
    let loss = RenderLoss {
        cam,
        width: 16,
        height: 16,
        target: (0..16 * 16 * 3).map(|_| rng.random_range(0.0..1.0)).collect(),
        cfg: RasterConfig::untruncated(),
    };
    let r = gradcheck(&loss, &three_gaussians(), STEP, COMPOSITE_TOL)?;
    let mut out = vec![Check::from_report("rasterizer/render-3-gaussians-16x16".into(), &r)];

    let n = 4;
    let data: Vec<f32> = (0..n)
        .flat_map(|_| {
            let mut row: Vec<f32> = (0..12).map(|_| rng.random_range(-0.3..0.3)).collect();
            row.extend((0..3).map(|_| rng.random_range(-1.0..1.0)));
            row
        })
        .collect();
    let x = Tensor::new(&[n * 15], data)?;
    let r = gradcheck(&ShLoss { center: [0.2, -0.1, -3.0], n }, &x, STEP, COMPOSITE_TOL)?;
    out.push(Check::from_report("rasterizer/sh-color".into(), &r));
    Ok(out)
}

struct HeadLoss {
    params: ParamSet,
    weights: Tensor<f32>,
}

impl Objective for HeadLoss {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let p = self.params.bind(tape, |_| false);
        let y = regress_parent_raw(&p, x)?;
        y.mul(tape.constant(self.weights.cast()))?.sum()
    }
}

/// MSE of a model render against a fixed target, differentiated with
/// respect to the listed parameter tensors flattened into one vector.
pub struct ModelLoss {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub names: Vec<String>,
    pub image: Tensor<f32>,
    pub input_cam: CameraPose,
    pub target_cam: CameraPose,
    pub target: Tensor<f32>,
    pub with_children: bool,
}

impl ModelLoss {
    pub fn pack(&self) -> Tensor<f32> {
        let data: Vec<f32> = self
            .names
            .iter()
            .flat_map(|n| self.params.get(n).expect("listed parameter").data().to_vec())
            .collect();
        let len = data.len();
        Tensor::new(&[len], data).expect("non-empty")
    }

    /// Up to `per_tensor` random flat indices inside every listed tensor.
    pub fn sample_indices(&self, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for n in &self.names {
            let len = self.params.get(n).expect("listed parameter").len();
            for _ in 0..per_tensor.min(len) {
                out.push(off + rng.random_range(0..len));
            }
            off += len;
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl Objective for ModelLoss {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let mut p = self.params.bind(tape, |_| false);
        let mut off = 0;
        for n in &self.names {
            let t = self.params.get(n).ok_or_else(|| NumericsError::UnknownParameter(n.clone()))?;
            let v = x.narrow(0, off, t.len())?.reshape(t.shape())?;
            p.replace(n, v)?;
            off += t.len();
        }
        let parent = encode(&self.config, &p, &self.image, &self.input_cam)?;
        let img = render_target(
            &self.config,
            &p,
            &parent,
            &self.input_cam,
            &self.target_cam,
            self.with_children,
        )?;
        mse(img, tape.constant(self.target.cast()))
    }
}

/// Small model on 8x8 images with nonzero child output layers, plus input
/// and target cameras, an input image and a target.
pub fn tiny_setup(seed: u64) -> Result<ModelLoss, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 8;
    let config = ModelConfig {
        encoder: EncoderConfig::new(8, 2, size, size).expect("8 divides by 4"),
        lift: LiftConfig::new(1.0),
        hierarchy: HierarchyConfig::default(),
        children: true,
        raster: RasterConfig::untruncated(),
    };
    let mut model = Model::init(config.clone(), seed)?;
    for name in ["child.offset.w2", "child.cov.w2", "child.color.w2", "child.opacity.w2"] {
        let t = model.params.get_mut(name).expect("child head");
        for v in t.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let input_cam = look_at([0.0, 0.4, -2.5], size, 8.0);
    let target_cam = look_at([1.25, 0.6, -2.1], size, 8.0);
    let image = uniform(&mut rng, &[size, size, 3], 0.0, 1.0);
    let target = uniform(&mut rng, &[size, size, 3], 0.0, 1.0);
    Ok(ModelLoss {
        config,
        params: model.params,
        names: Vec::new(),
        image,
        input_cam,
        target_cam,
        target,
        with_children: true,
    })
}

/// The 1x1 head on 4x4 features, and the end-to-end render loss of an
/// 8x8 input with respect to encoder and head weights (parents only).
pub fn encoder(seed: u64) -> Result<Vec<Check>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.insert("head.w", uniform(&mut rng, &[1, 1, 6, 24], -0.5, 0.5))?;
    params.insert("head.b", uniform(&mut rng, &[24], -0.5, 0.5))?;
    let head = HeadLoss {
        params,
        weights: uniform(&mut rng, &[4, 4, 24], -1.0, 1.0),
    };
    let feats = uniform(&mut rng, &[4, 4, 6], -1.0, 1.0);
    let r = gradcheck(&head, &feats, STEP, PRIMITIVE_TOL)?;
    let mut out = vec![Check::from_report("encoder/head-4x4".into(), &r)];

    let mut loss = tiny_setup(seed)?;
    loss.with_children = false;
    loss.names = loss
        .params
        .names()
        .filter(|n| n.starts_with("enc.") || n.starts_with("head."))
        .map(String::from)
        .collect();
    let idx = loss.sample_indices(3, &mut rng);
    let r = gradcheck_subset(&loss, &loss.pack(), NETWORK_STEP, COMPOSITE_TOL, &idx)?;
    out.push(Check::from_report("encoder/end-to-end-8x8".into(), &r));
    Ok(out)
}

/// Render of parents plus children differentiated with respect to the raw
/// parent map (so gradients reach parent means through distance and
/// direction) and with respect to the child heads.
struct RawLoss {
    setup: ModelLoss,
}

impl Objective for RawLoss {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        let s = &self.setup;
        let p = s.params.bind(tape, |_| false);
        let parent = activate_and_lift(x, &s.input_cam, &s.config.lift)?;
        let img = render_target(&s.config, &p, &parent, &s.input_cam, &s.target_cam, true)?;
        mse(img, tape.constant(s.target.cast()))
    }
}

pub fn hierarchy(seed: u64) -> Result<Vec<Check>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let setup = tiny_setup(seed)?;
    let (h, w) = setup.config.size();
    let mut raw = Vec::with_capacity(h * w * 24);
    for _ in 0..h * w {
        raw.push(rng.random_range(-0.5..0.5));
        raw.extend((0..3).map(|_| rng.random_range(-0.1..0.1)));
        raw.extend((0..4).map(|_| rng.random_range(-1.0..1.0)));
        raw.extend((0..3).map(|_| rng.random_range(-2.2..-1.6)));
        raw.push(rng.random_range(-1.5..0.0));
        raw.extend((0..12).map(|_| rng.random_range(-0.3..0.3)));
    }
    let x = Tensor::new(&[h, w, 24], raw)?;
    let raw_loss = RawLoss { setup };
    let idx: Vec<usize> = {
        let mut v: Vec<usize> = (0..96).map(|_| rng.random_range(0..x.len())).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let r = gradcheck_subset(&raw_loss, &x, NETWORK_STEP, COMPOSITE_TOL, &idx)?;
    let mut out = vec![Check::from_report("hierarchy/parent-map-through-children-8x8".into(), &r)];

    let mut loss = raw_loss.setup;
    loss.names = loss.params.names().map(String::from).collect();
    let idx = loss.sample_indices(2, &mut rng);
    let r = gradcheck_subset(&loss, &loss.pack(), NETWORK_STEP, COMPOSITE_TOL, &idx)?;
    out.push(Check::from_report("hierarchy/end-to-end-8x8".into(), &r));
    Ok(out)
}
