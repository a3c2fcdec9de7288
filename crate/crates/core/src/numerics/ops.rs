//! Differentiable primitives on [`Var`].
//!
//! Binary elementwise ops broadcast with trailing-axis alignment (numpy
//! rules). Spatial ops use channel-last `[H, W, C]` layout.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{
    broadcast_shape, col2im, for_each_broadcast, gemm_nn, gemm_nt, gemm_tn, im2col, reduce_to,
    sum_f64, ConvGeom,
};
use super::tensor::numel;
use super::{NumericsError, Real, Tape, Tensor, Var};

type Res<'t, T> = Result<Var<'t, T>, NumericsError>;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline(always)]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

fn binary<'t, T: Real>(op: Binary, a: Var<'t, T>, b: Var<'t, T>) -> Res<'t, T> {
    let (av, bv) = (a.value(), b.value());
    let out_shape =
        broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| NumericsError::ShapeMismatch {
            op: op.name(),
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
    let mut out = vec![T::zero(); numel(&out_shape)];
    let (ad, bd) = (av.data(), bv.data());
    for_each_broadcast(&out_shape, av.shape(), bv.shape(), |i, ia, ib| {
        out[i] = op.apply(ad[ia], bd[ib]);
    });
    let shape = out_shape.clone();
    a.tape().record(
        op.name(),
        &[a, b],
        Tensor::from_parts(out_shape, out),
        move |args| {
            let (a, b) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad.data();
            let (ad, bd) = (a.data(), b.data());
            let mut ga = args.needs_grad[0].then(|| vec![T::zero(); a.len()]);
            let mut gb = args.needs_grad[1].then(|| vec![T::zero(); b.len()]);
            for_each_broadcast(&shape, a.shape(), b.shape(), |i, ia, ib| {
                let (da, db) = match op {
                    Binary::Add => (g[i], g[i]),
                    Binary::Sub => (g[i], -g[i]),
                    Binary::Mul => (g[i] * bd[ib], g[i] * ad[ia]),
                    Binary::Div => {
                        let inv = T::one() / bd[ib];
                        (g[i] * inv, -g[i] * ad[ia] * inv * inv)
                    }
                };
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += db;
                }
            });
            vec![
                ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
                gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
            ]
        },
    )
}

/// Elementwise op whose derivative is expressed through input `x` and
/// output `y`.
fn unary<'t, T: Real>(
    x: Var<'t, T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Res<'t, T> {
    let out = x.value().map(f);
    x.tape().record(op, &[x], out, move |args| {
        let xs = args.inputs[0].data();
        let ys = args.output.data();
        let g = args.grad.data();
        let d = xs
            .iter()
            .zip(ys)
            .zip(g)
            .map(|((&x, &y), &g)| g * df(x, y))
            .collect();
        vec![Some(Tensor::from_parts(args.output.shape().to_vec(), d))]
    })
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, rhs: Var<'t, T>) -> Res<'t, T> {
        binary(Binary::Add, self, rhs)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Res<'t, T> {
        binary(Binary::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Res<'t, T> {
        binary(Binary::Mul, self, rhs)
    }

    pub fn div(self, rhs: Var<'t, T>) -> Res<'t, T> {
        binary(Binary::Div, self, rhs)
    }

    pub fn add_scalar(self, c: T) -> Res<'t, T> {
        unary(self, "add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(self, c: T) -> Res<'t, T> {
        unary(self, "mul_scalar", move |x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Res<'t, T> {
        self.mul_scalar(-T::one())
    }

    pub fn square(self) -> Res<'t, T> {
        unary(self, "square", |x| x * x, |x, _| x + x)
    }

    pub fn relu(self) -> Res<'t, T> {
        unary(
            self,
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Res<'t, T> {
        unary(self, "sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(self) -> Res<'t, T> {
        unary(self, "exp", T::exp, |_, y| y)
    }

    pub fn sqrt(self) -> Res<'t, T> {
        unary(self, "sqrt", T::sqrt, |_, y| T::of(0.5) / y)
    }

    pub fn tanh(self) -> Res<'t, T> {
        unary(self, "tanh", T::tanh, |_, y| T::one() - y * y)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: T, hi: T) -> Res<'t, T> {
        unary(
            self,
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Res<'t, T> {
        let v = self.value();
        let s = T::of(sum_f64(v.data().iter().copied()));
        self.tape()
            .record("sum", &[self], Tensor::scalar(s), move |args| {
                let g = args.grad.item();
                vec![Some(Tensor::full(args.inputs[0].shape(), g))]
            })
    }

    pub fn mean(self) -> Res<'t, T> {
        let n = self.value().len();
        self.sum()?.mul_scalar(T::of(1.0 / n as f64))
    }

    /// Sums over `axis`; the axis is kept with extent 1 when `keepdim`.
    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Res<'t, T> {
        let v = self.value();
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidArgument("sum_axis: axis out of range"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        let d = v.data();
        for o in 0..outer {
            for a in 0..len {
                let src = &d[(o * len + a) * inner..][..inner];
                for (dst, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim || shape.len() == 1 {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        self.tape().record(
            "sum_axis",
            &[self],
            Tensor::from_parts(out_shape, out),
            move |args| {
                let g = args.grad.data();
                let mut gi = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        gi[(o * len + a) * inner..][..inner]
                            .copy_from_slice(&g[o * inner..][..inner]);
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), gi))]
            },
        )
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Res<'t, T> {
        let n = self.shape()[axis];
        self.sum_axis(axis, keepdim)?.mul_scalar(T::of(1.0 / n as f64))
    }

    /// Euclidean norm over the last axis, which is kept with extent 1. The
    /// gradient at a zero vector is taken as zero.
    pub fn l2norm_last(self) -> Res<'t, T> {
        let v = self.value();
        let shape = v.shape().to_vec();
        let c = *shape.last().unwrap();
        let out: Vec<T> = v
            .data()
            .chunks_exact(c)
            .map(|row| row.iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect();
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = 1;
        self.tape().record(
            "l2norm",
            &[self],
            Tensor::from_parts(out_shape, out),
            move |args| {
                let x = args.inputs[0].data();
                let y = args.output.data();
                let g = args.grad.data();
                let mut gi = vec![T::zero(); x.len()];
                for (r, (row, grow)) in x.chunks_exact(c).zip(gi.chunks_exact_mut(c)).enumerate() {
                    if y[r] > T::zero() {
                        let s = g[r] / y[r];
                        for (gx, &xv) in grow.iter_mut().zip(row) {
                            *gx = s * xv;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), gi))]
            },
        )
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(self, rhs: Var<'t, T>) -> Res<'t, T> {
        let (a, b) = (self.value(), rhs.value());
        let mismatch = || NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![T::zero(); m * n];
        gemm_nn(m, k, n, a.data(), b.data(), &mut c);
        self.tape().record(
            "matmul",
            &[self, rhs],
            Tensor::from_parts(vec![m, n], c),
            move |args| {
                let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
                let g = args.grad.data();
                let ga = args.needs_grad[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, g, b, &mut ga);
                    Tensor::from_parts(vec![m, k], ga)
                });
                let gb = args.needs_grad[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(m, k, n, a, g, &mut gb);
                    Tensor::from_parts(vec![k, n], gb)
                });
                vec![ga, gb]
            },
        )
    }

    /// 2-D convolution of an `[H, W, Cin]` map with `[kh, kw, Cin, Cout]`
    /// weights and optional `[Cout]` bias.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Res<'t, T> {
        let (x, w) = (self.value(), weight.value());
        let mismatch = || NumericsError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        if x.rank() != 3 || w.rank() != 4 || x.shape()[2] != w.shape()[2] || stride == 0 {
            return Err(mismatch());
        }
        let (h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, cout) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(mismatch());
        }
        let geom = ConvGeom {
            h,
            w: wd,
            cin,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: b.shape(),
                    rhs: vec![cout],
                });
            }
        }
        let rows = geom.ho * geom.wo;
        let patch = geom.patch();
        let cols: Rc<Vec<T>> = if geom.is_pointwise() {
            Rc::new(x.data().to_vec())
        } else {
            Rc::new(im2col(&geom, x.data()))
        };
        let mut out = match bias {
            Some(b) => {
                let bv = b.value();
                let mut o = Vec::with_capacity(rows * cout);
                for _ in 0..rows {
                    o.extend_from_slice(bv.data());
                }
                o
            }
            None => vec![T::zero(); rows * cout],
        };
        gemm_nn(rows, patch, cout, &cols, w.data(), &mut out);
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.tape().record(
            "conv2d",
            &inputs,
            Tensor::from_parts(vec![geom.ho, geom.wo, cout], out),
            move |args| {
                let g = args.grad.data();
                let wd = args.inputs[1].data();
                let gx = args.needs_grad[0].then(|| {
                    let mut gcols = vec![T::zero(); rows * patch];
                    gemm_nt(rows, cout, patch, g, wd, &mut gcols);
                    let gx = if geom.is_pointwise() {
                        gcols
                    } else {
                        col2im(&geom, &gcols)
                    };
                    Tensor::from_parts(vec![geom.h, geom.w, geom.cin], gx)
                });
                let gw = args.needs_grad[1].then(|| {
                    let mut gw = vec![T::zero(); patch * cout];
                    gemm_tn(rows, patch, cout, &cols, g, &mut gw);
                    Tensor::from_parts(vec![geom.kh, geom.kw, geom.cin, cout], gw)
                });
                let mut res = vec![gx, gw];
                if has_bias {
                    let gb = args.needs_grad[2].then(|| {
                        let mut gb = vec![T::zero(); cout];
                        for row in g.chunks_exact(cout) {
                            for (b, &v) in gb.iter_mut().zip(row) {
                                *b += v;
                            }
                        }
                        Tensor::from_parts(vec![cout], gb)
                    });
                    res.push(gb);
                }
                res
            },
        )
    }

    /// Nearest-neighbour 2x upsampling of an `[H, W, C]` map.
    pub fn upsample2x(self) -> Res<'t, T> {
        let x = self.value();
        if x.rank() != 3 {
            return Err(NumericsError::InvalidArgument("upsample2x expects [H, W, C]"));
        }
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = vec![T::zero(); 4 * h * w * c];
        let d = x.data();
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let src = ((y / 2) * w + xx / 2) * c;
                let dst = (y * 2 * w + xx) * c;
                out[dst..dst + c].copy_from_slice(&d[src..src + c]);
            }
        }
        self.tape().record(
            "upsample2x",
            &[self],
            Tensor::from_parts(vec![2 * h, 2 * w, c], out),
            move |args| {
                let g = args.grad.data();
                let mut gi = vec![T::zero(); h * w * c];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let dst = ((y / 2) * w + xx / 2) * c;
                        let src = (y * 2 * w + xx) * c;
                        for (a, &b) in gi[dst..dst + c].iter_mut().zip(&g[src..src + c]) {
                            *a += b;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![h, w, c], gi))]
            },
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Res<'t, T> {
        let v = self.value();
        let out = v.reshape(shape)?;
        let in_shape = v.shape().to_vec();
        self.tape().record("reshape", &[self], out, move |args| {
            vec![Some(Tensor::from_parts(
                in_shape.clone(),
                args.grad.data().to_vec(),
            ))]
        })
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Res<'t, T> {
        let v = self.value();
        let target = shape.to_vec();
        match broadcast_shape(v.shape(), shape) {
            Some(s) if s == target => {}
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: v.shape().to_vec(),
                    rhs: target,
                })
            }
        }
        let mut out = vec![T::zero(); numel(shape)];
        let d = v.data();
        for_each_broadcast(shape, shape, v.shape(), |i, _, j| out[i] = d[j]);
        let in_shape = v.shape().to_vec();
        self.tape().record(
            "broadcast_to",
            &[self],
            Tensor::from_parts(target, out),
            move |args| vec![Some(reduce_to(args.grad, &in_shape))],
        )
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Res<'t, T> {
        let v = self.value();
        let shape = v.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(NumericsError::InvalidArgument("narrow: range out of bounds"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let d = v.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.tape().record(
            "narrow",
            &[self],
            Tensor::from_parts(out_shape, out),
            move |args| {
                let g = args.grad.data();
                let mut gi = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    gi[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                vec![Some(Tensor::from_parts(shape.clone(), gi))]
            },
        )
    }

    /// Channel slice of a channel-last tensor.
    pub fn channels(self, start: usize, len: usize) -> Res<'t, T> {
        let axis = self.shape().len() - 1;
        self.narrow(axis, start, len)
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(parts: &[Var<'t, T>], axis: usize) -> Res<'t, T> {
    let first = parts
        .first()
        .ok_or(NumericsError::InvalidArgument("concat of zero tensors"))?;
    let tape: &'t Tape<T> = first.tape();
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(NumericsError::InvalidArgument("concat: axis out of range"));
    }
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(NumericsError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (v, &w) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[o * w..][..w]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total / inner;
    tape.record(
        "concat",
        parts,
        Tensor::from_parts(out_shape, out),
        move |args| {
            let g = args.grad.data();
            let mut offset = 0;
            let mut res = Vec::with_capacity(widths.len());
            for (k, &w) in widths.iter().enumerate() {
                if args.needs_grad[k] {
                    let mut gi = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        gi.extend_from_slice(&g[o * total + offset..][..w]);
                    }
                    res.push(Some(Tensor::from_parts(
                        args.inputs[k].shape().to_vec(),
                        gi,
                    )));
                } else {
                    res.push(None);
                }
                offset += w;
            }
            res
        },
    )
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mean squared error between two equally shaped tensors.
pub fn mse<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Res<'t, T> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "mse",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    pred.sub(target)?.square()?.mean()
}
