use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::numerics::Real;

use super::project::{project_backward, CameraContext, ScreenGrad, Splat};
use super::{RasterConfig, RenderMode, SplatGradients};

#[derive(Clone, Copy, Debug)]
struct Consts<T> {
    alpha_min: T,
    alpha_max: T,
    t_min: T,
    background: [T; 3],
}

pub(crate) struct Frame<T: Real> {
    pub width: usize,
    pub height: usize,
    splats: Vec<Splat<T>>,
    tile_size: usize,
    tiles_x: usize,
    mode: RenderMode,
    /// Per tile, indices into `splats` in depth order. The naive path keeps
    /// a single list holding every splat.
    lists: Vec<Vec<u32>>,
    t_final: Vec<T>,
    /// Per pixel, how many list entries the forward walk consumed.
    end: Vec<u32>,
    consts: Consts<T>,
}

struct Hit<T> {
    alpha: T,
    raw: T,
    dx: T,
    dy: T,
}

#[inline]
fn hit<T: Real>(s: &Splat<T>, px: T, py: T, c: &Consts<T>) -> Option<Hit<T>> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let [a, b, cc] = s.conic;
    let power = -T::of(0.5) * (a * dx * dx + cc * dy * dy) - b * dx * dy;
    if power > T::zero() || power < s.power_floor {
        return None;
    }
    let raw = s.opacity * power.exp();
    if raw < c.alpha_min {
        return None;
    }
    Some(Hit {
        alpha: raw.min(c.alpha_max),
        raw,
        dx,
        dy,
    })
}

#[inline]
fn pixel_center<T: Real>(x: usize, y: usize) -> (T, T) {
    (T::of(x as f64 + 0.5), T::of(y as f64 + 0.5))
}

impl<T: Real> Frame<T> {
    pub fn forward(
        mut splats: Vec<Splat<T>>,
        width: usize,
        height: usize,
        cfg: &RasterConfig,
        mode: RenderMode,
    ) -> (Self, Vec<T>, Vec<T>) {
        splats.sort_by(|a, b| {
            a.depth
                .partial_cmp(&b.depth)
                .unwrap_or(Ordering::Equal)
                .then(a.index.cmp(&b.index))
        });
        let tile_size = cfg.tile_size;
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let lists = match mode {
            RenderMode::Naive => vec![(0..splats.len() as u32).collect()],
            RenderMode::Tiled => bin_splats(&splats, width, height, tile_size, tiles_x, tiles_y),
        };
        let consts = Consts {
            alpha_min: T::of(cfg.alpha_min as f64),
            alpha_max: T::of(cfg.alpha_max as f64),
            t_min: T::of(cfg.transmittance_min as f64),
            background: cfg.background.map(|v| T::of(v as f64)),
        };
        let mut frame = Frame {
            width,
            height,
            splats,
            tile_size,
            tiles_x,
            mode,
            lists,
            t_final: vec![T::one(); width * height],
            end: vec![0; width * height],
            consts,
        };
        let mut image = vec![T::zero(); width * height * 3];
        let mut alpha = vec![T::zero(); width * height];
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let list = &frame.lists[frame.list_of(x, y)];
                let (px, py) = pixel_center::<T>(x, y);
                let mut t = T::one();
                let mut rgb = [T::zero(); 3];
                let mut consumed = 0u32;
                for &si in list.iter() {
                    consumed += 1;
                    let s = &frame.splats[si as usize];
                    let Some(h) = hit(s, px, py, &consts) else {
                        continue;
                    };
                    let w = h.alpha * t;
                    for ch in 0..3 {
                        rgb[ch] += s.color[ch] * w;
                    }
                    t *= T::one() - h.alpha;
                    if t < consts.t_min {
                        break;
                    }
                }
                for ch in 0..3 {
                    image[p * 3 + ch] = rgb[ch] + t * consts.background[ch];
                }
                alpha[p] = T::one() - t;
                frame.t_final[p] = t;
                frame.end[p] = consumed;
            }
        }
        (frame, image, alpha)
    }

    #[inline]
    fn list_of(&self, x: usize, y: usize) -> usize {
        match self.mode {
            RenderMode::Naive => 0,
            RenderMode::Tiled => (y / self.tile_size) * self.tiles_x + x / self.tile_size,
        }
    }

    pub fn backward(
        &self,
        cam: &CameraContext<T>,
        raw_quats: &[T],
        n: usize,
        grad_image: &[T],
    ) -> SplatGradients<T> {
        let m = self.splats.len();
        let mut d_mean2d = vec![[T::zero(); 2]; m];
        let mut d_conic = vec![[T::zero(); 3]; m];
        let mut d_opacity = vec![T::zero(); m];
        let mut d_color = vec![[T::zero(); 3]; m];
        let c = &self.consts;
        let half = T::of(0.5);

        for y in 0..self.height {
            for x in 0..self.width {
                let p = y * self.width + x;
                let g = [grad_image[p * 3], grad_image[p * 3 + 1], grad_image[p * 3 + 2]];
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                let list = &self.lists[self.list_of(x, y)];
                let (px, py) = pixel_center::<T>(x, y);
                let mut t = self.t_final[p];
                // Color composited behind the current splat, background included.
                let mut behind = [
                    t * c.background[0],
                    t * c.background[1],
                    t * c.background[2],
                ];
                for &si in list[..self.end[p] as usize].iter().rev() {
                    let si = si as usize;
                    let s = &self.splats[si];
                    let Some(h) = hit(s, px, py, c) else {
                        continue;
                    };
                    let one_minus = T::one() - h.alpha;
                    t /= one_minus;
                    let w = h.alpha * t;
                    let mut d_alpha = T::zero();
                    for ch in 0..3 {
                        d_color[si][ch] += g[ch] * w;
                        d_alpha += g[ch] * (s.color[ch] * t - behind[ch] / one_minus);
                        behind[ch] += s.color[ch] * w;
                    }
                    if h.raw >= c.alpha_max {
                        continue;
                    }
                    let g_kernel = h.raw / s.opacity;
                    d_opacity[si] += d_alpha * g_kernel;
                    let d_power = d_alpha * h.raw;
                    let [a, b, cc] = s.conic;
                    d_mean2d[si][0] += d_power * (a * h.dx + b * h.dy);
                    d_mean2d[si][1] += d_power * (b * h.dx + cc * h.dy);
                    d_conic[si][0] -= d_power * half * h.dx * h.dx;
                    d_conic[si][1] -= d_power * h.dx * h.dy;
                    d_conic[si][2] -= d_power * half * h.dy * h.dy;
                }
            }
        }

        let mut out = SplatGradients {
            means: vec![T::zero(); n * 3],
            quats: vec![T::zero(); n * 4],
            scales: vec![T::zero(); n * 3],
            opacities: vec![T::zero(); n],
            colors: vec![T::zero(); n * 3],
        };
        for (si, s) in self.splats.iter().enumerate() {
            let i = s.index;
            let q = &raw_quats[i * 4..i * 4 + 4];
            let wg = project_backward(
                s,
                &[q[0], q[1], q[2], q[3]],
                &ScreenGrad {
                    d_mean2d: d_mean2d[si],
                    d_conic: d_conic[si],
                },
                cam,
            );
            out.means[i * 3..i * 3 + 3].copy_from_slice(&wg.d_mean);
            out.quats[i * 4..i * 4 + 4].copy_from_slice(&wg.d_quat);
            out.scales[i * 3..i * 3 + 3].copy_from_slice(&wg.d_scale);
            out.opacities[i] = d_opacity[si];
            out.colors[i * 3..i * 3 + 3].copy_from_slice(&d_color[si]);
        }
        out
    }
}

/// Tile lists from a bound that contains every pixel whose kernel reaches
/// the alpha threshold. Splats are pushed in depth order so lists stay
/// sorted.
fn bin_splats<T: Real>(
    splats: &[Splat<T>],
    width: usize,
    height: usize,
    tile_size: usize,
    tiles_x: usize,
    tiles_y: usize,
) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let r = s.radius.to_f64();
        let (mx, my) = (s.mean2d[0].to_f64(), s.mean2d[1].to_f64());
        let Some((x0, x1)) = pixel_span(mx, r, width) else {
            continue;
        };
        let Some((y0, y1)) = pixel_span(my, r, height) else {
            continue;
        };
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    lists
}

/// Inclusive pixel index range whose centers lie within `r` of `m`.
fn pixel_span(m: f64, r: f64, extent: usize) -> Option<(usize, usize)> {
    let lo = num_traits::Float::ceil(m - r - 0.5).max(0.0);
    let hi = num_traits::Float::floor(m + r - 0.5).min(extent as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}
