use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Vec3;
use crate::numerics::{NumericsError, Real, Tensor, Var};
use crate::scene::{sh_basis, CameraPose, SH_BASIS, SH_C1, SH_COEFFS};

use super::{render_batch, RasterConfig, RasterError, RenderMode, SplatBatch};

fn expect_rows<T: Real>(
    op: &'static str,
    v: &Tensor<T>,
    n: usize,
    cols: usize,
) -> Result<(), NumericsError> {
    let ok = match v.shape() {
        [r, c] => *r == n && *c == cols,
        [r] => cols == 1 && *r == n,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch {
            op,
            lhs: v.shape().to_vec(),
            rhs: vec![n, cols],
        })
    }
}

/// Tiled render as a tape op. Inputs are `[N, 3]` means, `[N, 4]`
/// quaternions, `[N, 3]` scales, `[N, 1]` opacities and `[N, 3]` colors;
/// the output is the `[H, W, 3]` image.
pub fn render_var<'t, T: Real>(
    means: Var<'t, T>,
    quats: Var<'t, T>,
    scales: Var<'t, T>,
    opacities: Var<'t, T>,
    colors: Var<'t, T>,
    cam: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Result<Var<'t, T>, RasterError> {
    let mv = means.value();
    if mv.rank() != 2 || mv.shape()[1] != 3 {
        return Err(NumericsError::InvalidShape {
            shape: mv.shape().to_vec(),
            reason: "render expects [N, 3] means",
        }
        .into());
    }
    let n = mv.shape()[0];
    let (qv, sv, ov, cv) = (quats.value(), scales.value(), opacities.value(), colors.value());
    expect_rows("render", &qv, n, 4)?;
    expect_rows("render", &sv, n, 3)?;
    expect_rows("render", &ov, n, 1)?;
    expect_rows("render", &cv, n, 3)?;
    let batch = SplatBatch {
        means: mv.data().to_vec(),
        quats: qv.data().to_vec(),
        scales: sv.data().to_vec(),
        opacities: ov.data().to_vec(),
        colors: cv.data().to_vec(),
    };
    let (out, trace) = render_batch(&batch, cam, width, height, cfg, RenderMode::Tiled)?;
    let image = Tensor::from_parts(vec![height, width, 3], out.image);
    let shapes: Vec<Vec<usize>> = [&mv, &qv, &sv, &ov, &cv]
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    let tape = means.tape();
    Ok(tape.record(
        "render",
        &[means, quats, scales, opacities, colors],
        image,
        move |args| {
            let g = trace
                .frame
                .backward(&trace.cam, args.inputs[1].data(), n, args.grad.data());
            let parts = [g.means, g.quats, g.scales, g.opacities, g.colors];
            parts
                .into_iter()
                .zip(shapes.iter())
                .zip(args.needs_grad)
                .map(|((d, s), &need)| need.then(|| Tensor::from_parts(s.clone(), d)))
                .collect()
        },
    )?)
}

/// Per-Gaussian RGB from `[N, 12]` degree-1 SH coefficients seen from
/// `center` along the ray to each `[N, 3]` mean: expansion plus 0.5,
/// clamped to `[0, 1]`. Differentiable in both the coefficients and the
/// means.
pub fn sh_color_var<'t, T: Real>(
    coeffs: Var<'t, T>,
    means: Var<'t, T>,
    center: [f32; 3],
) -> Result<Var<'t, T>, NumericsError> {
    let (kv, mv) = (coeffs.value(), means.value());
    if mv.rank() != 2 || mv.shape()[1] != 3 {
        return Err(NumericsError::InvalidShape {
            shape: mv.shape().to_vec(),
            reason: "SH colors expect [N, 3] means",
        });
    }
    let n = mv.shape()[0];
    expect_rows("sh_color", &kv, n, SH_COEFFS)?;
    let c = center.map(|v| T::of(v as f64));
    let mut rgb = vec![T::zero(); n * 3];
    let mut raw = vec![T::zero(); n * 3];
    for i in 0..n {
        let (dir, _) = direction(&mv.data()[i * 3..i * 3 + 3], &c);
        let basis = sh_basis(&dir);
        for ch in 0..3 {
            let k = &kv.data()[i * SH_COEFFS + ch * SH_BASIS..][..SH_BASIS];
            let v = (0..SH_BASIS).fold(T::zero(), |acc, b| acc + k[b] * basis[b]) + T::of(0.5);
            raw[i * 3 + ch] = v;
            rgb[i * 3 + ch] = v.max(T::zero()).min(T::one());
        }
    }
    let tape = coeffs.tape();
    tape.record(
        "sh_color",
        &[coeffs, means],
        Tensor::from_parts(vec![n, 3], rgb),
        move |args| {
            let (kd, md, gd) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let mut gk = vec![T::zero(); n * SH_COEFFS];
            let mut gm = vec![T::zero(); n * 3];
            let c1 = T::of(SH_C1);
            for i in 0..n {
                let (dir, len) = direction(&md[i * 3..i * 3 + 3], &c);
                let basis = sh_basis(&dir);
                let mut g_dir = [T::zero(); 3];
                for ch in 0..3 {
                    let r = raw[i * 3 + ch];
                    if r <= T::zero() || r >= T::one() {
                        continue;
                    }
                    let g = gd[i * 3 + ch];
                    let base = i * SH_COEFFS + ch * SH_BASIS;
                    for b in 0..SH_BASIS {
                        gk[base + b] += g * basis[b];
                    }
                    g_dir[0] -= g * c1 * kd[base + 3];
                    g_dir[1] -= g * c1 * kd[base + 1];
                    g_dir[2] += g * c1 * kd[base + 2];
                }
                if len > T::zero() {
                    // d(v/|v|) = (I - d d^T) / |v|
                    let proj = g_dir[0] * dir[0] + g_dir[1] * dir[1] + g_dir[2] * dir[2];
                    for k in 0..3 {
                        gm[i * 3 + k] = (g_dir[k] - proj * dir[k]) / len;
                    }
                }
            }
            vec![
                args.needs_grad[0].then(|| Tensor::from_parts(vec![n, SH_COEFFS], gk)),
                args.needs_grad[1].then(|| Tensor::from_parts(vec![n, 3], gm)),
            ]
        },
    )
}

fn direction<T: Real>(m: &[T], c: &Vec3<T>) -> (Vec3<T>, T) {
    let v = [m[0] - c[0], m[1] - c[1], m[2] - c[2]];
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if len > T::zero() {
        (v.map(|x| x / len), len)
    } else {
        ([T::zero(), T::zero(), T::one()], T::zero())
    }
}

impl From<RasterError> for NumericsError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Numerics(inner) => inner,
            RasterError::EmptyMixture => NumericsError::InvalidArgument("empty mixture"),
            RasterError::EmptyImage(..) => NumericsError::InvalidArgument("empty image"),
            RasterError::ZeroTile => NumericsError::InvalidArgument("zero tile size"),
            RasterError::Length { .. } | RasterError::GradientLength { .. } => {
                NumericsError::InvalidArgument("render buffer length mismatch")
            }
        }
    }
}

/// Columns of one packed Gaussian row: mean, quaternion, scale, opacity,
/// RGB.
pub const PACKED_WIDTH: usize = 14;

/// Mean squared error between a render of packed `[N, 14]` Gaussians and a
/// fixed target image.
#[derive(Clone, Debug)]
pub struct RenderLoss {
    pub cam: CameraPose,
    pub width: usize,
    pub height: usize,
    pub target: Vec<f32>,
    pub cfg: RasterConfig,
}

impl crate::numerics::Objective for RenderLoss {
    fn eval<'t, T: Real>(
        &self,
        tape: &'t crate::numerics::Tape<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, NumericsError> {
        let image = render_var(
            x.channels(0, 3)?,
            x.channels(3, 4)?,
            x.channels(7, 3)?,
            x.channels(10, 1)?,
            x.channels(11, 3)?,
            &self.cam,
            self.width,
            self.height,
            &self.cfg,
        )?;
        let target = Tensor::new(
            &[self.height, self.width, 3],
            self.target.iter().map(|&v| T::of(v as f64)).collect(),
        )?;
        crate::numerics::mse(image, tape.constant(target))
    }
}
