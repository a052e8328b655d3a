use super::float::gemm;
use super::{Float, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.ci
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Input column where output column `ox`, tap 0 lands, and whether all `kw`
/// taps are inside the image (one contiguous run of `kw·ci` values).
fn tap_run(g: &ConvGeom, ox: usize) -> (isize, bool) {
    let ix0 = (ox * g.stride) as isize - g.pad as isize;
    (ix0, ix0 >= 0 && ix0 as usize + g.kw <= g.w)
}

fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let k = g.patch();
    let run = g.kw * g.ci;
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * k..(oy * g.wo + ox + 1) * k];
            let (ix0, inside) = tap_run(g, ox);
            for ky in 0..g.kh {
                let dst = &mut row[ky * run..(ky + 1) * run];
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy as usize >= g.h {
                    dst.fill(T::zero());
                } else if inside {
                    let src = (iy as usize * g.w + ix0 as usize) * g.ci;
                    dst.copy_from_slice(&x[src..src + run]);
                } else {
                    for kx in 0..g.kw {
                        let ix = ix0 + kx as isize;
                        let d = &mut dst[kx * g.ci..(kx + 1) * g.ci];
                        if ix >= 0 && (ix as usize) < g.w {
                            let src = (iy as usize * g.w + ix as usize) * g.ci;
                            d.copy_from_slice(&x[src..src + g.ci]);
                        } else {
                            d.fill(T::zero());
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let k = g.patch();
    let run = g.kw * g.ci;
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * k..(oy * g.wo + ox + 1) * k];
            let (ix0, inside) = tap_run(g, ox);
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy as usize >= g.h {
                    continue;
                }
                let src = &row[ky * run..(ky + 1) * run];
                if inside {
                    let at = (iy as usize * g.w + ix0 as usize) * g.ci;
                    for (d, &s) in dx[at..at + run].iter_mut().zip(src) {
                        *d += s;
                    }
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = ix0 + kx as isize;
                    if ix < 0 || ix as usize >= g.w {
                        continue;
                    }
                    let at = (iy as usize * g.w + ix as usize) * g.ci;
                    for (d, &s) in dx[at..at + g.ci].iter_mut().zip(&src[kx * g.ci..(kx + 1) * g.ci]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// 2-D cross-correlation of `[B,H,W,Cin]` with a `[Kh,Kw,Cin,Cout]` kernel,
    /// zero padding.
    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let (x, k) = (self.value(), kernel.value());
        if x.rank() != 4 || k.rank() != 4 {
            return shape_err(format!(
                "conv2d expects [B,H,W,C] and [Kh,Kw,Cin,Cout], got {:?} and {:?}",
                x.shape(),
                k.shape()
            ));
        }
        let (xs, ks) = (x.shape(), k.shape());
        if xs[3] != ks[2] {
            return shape_err(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                xs[3], ks[2]
            ));
        }
        if ks[0] % 2 == 0 || ks[1] % 2 == 0 || stride == 0 {
            return shape_err(format!("conv2d needs odd kernel sizes, got {:?}", ks));
        }
        if xs[1] + 2 * padding < ks[0] || xs[2] + 2 * padding < ks[1] {
            return shape_err(format!("conv2d kernel {:?} larger than input {:?}", ks, xs));
        }
        let g = ConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            ci: xs[3],
            kh: ks[0],
            kw: ks[1],
            co: ks[3],
            stride,
            pad: padding,
            ho: (xs[1] + 2 * padding - ks[0]) / stride + 1,
            wo: (xs[2] + 2 * padding - ks[1]) / stride + 1,
        };
        let (patch, npix) = (g.patch(), g.ho * g.wo);
        let mut out = vec![T::zero(); g.batch * npix * g.co];
        if g.pointwise() {
            gemm(g.batch * npix, patch, g.co, x.data(), false, k.data(), false, &mut out, false);
        } else {
            let mut cols = vec![T::zero(); npix * patch];
            let img = g.h * g.w * g.ci;
            for b in 0..g.batch {
                im2col(&x.data()[b * img..(b + 1) * img], &g, &mut cols);
                gemm(
                    npix,
                    patch,
                    g.co,
                    &cols,
                    false,
                    k.data(),
                    false,
                    &mut out[b * npix * g.co..(b + 1) * npix * g.co],
                    false,
                );
            }
        }
        let y = Tensor::from_vec(&[g.batch, g.ho, g.wo, g.co], out);
        Ok(self.tape().record(y, &[self, kernel], move || {
            Box::new(move |grad, mask| {
                let gd = grad.data();
                let mut dx = mask[0].then(|| vec![T::zero(); x.len()]);
                let mut dk = mask[1].then(|| vec![T::zero(); k.len()]);
                if g.pointwise() {
                    if let Some(dx) = dx.as_mut() {
                        gemm(g.batch * npix, g.co, patch, gd, false, k.data(), true, dx, false);
                    }
                    if let Some(dk) = dk.as_mut() {
                        gemm(patch, g.batch * npix, g.co, x.data(), true, gd, false, dk, false);
                    }
                } else {
                    let img = g.h * g.w * g.ci;
                    let mut cols = vec![T::zero(); npix * patch];
                    for b in 0..g.batch {
                        let gb = &gd[b * npix * g.co..(b + 1) * npix * g.co];
                        if let Some(dk) = dk.as_mut() {
                            im2col(&x.data()[b * img..(b + 1) * img], &g, &mut cols);
                            gemm(patch, npix, g.co, &cols, true, gb, false, dk, true);
                        }
                        if let Some(dx) = dx.as_mut() {
                            gemm(npix, g.co, patch, gb, false, k.data(), true, &mut cols, false);
                            col2im(&cols, &g, &mut dx[b * img..(b + 1) * img]);
                        }
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_vec(x.shape(), d)),
                    dk.map(|d| Tensor::from_vec(k.shape(), d)),
                ]
            })
        }))
    }

    /// Nearest-neighbour upsampling of `[B,H,W,C]` by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 4 || factor == 0 {
            return shape_err(format!("upsample_nearest on {:?} by {}", x.shape(), factor));
        }
        let y = upsample_nearest_tensor(&x, factor);
        let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| {
                let (ho, wo) = (h * factor, w * factor);
                let gd = g.data();
                let mut d = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let src = ((bi * ho + oy) * wo + ox) * c;
                            let dst = ((bi * h + oy / factor) * w + ox / factor) * c;
                            for ch in 0..c {
                                d[dst + ch] += gd[src + ch];
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&[b, h, w, c], d))]
            })
        }))
    }

    /// Mean over non-overlapping `factor×factor` blocks.
    pub fn avg_pool(self, factor: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 4 || factor == 0 || x.shape()[1] % factor != 0 || x.shape()[2] % factor != 0
        {
            return shape_err(format!("avg_pool on {:?} by {}", x.shape(), factor));
        }
        let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ho, wo) = (h / factor, w / factor);
        let scale = T::one() / T::of((factor * factor) as f64);
        let mut out = vec![T::zero(); b * ho * wo * c];
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let src = ((bi * h + y) * w + xx) * c;
                    let dst = ((bi * ho + y / factor) * wo + xx / factor) * c;
                    for ch in 0..c {
                        out[dst + ch] += x.data()[src + ch] * scale;
                    }
                }
            }
        }
        let y = Tensor::from_vec(&[b, ho, wo, c], out);
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| {
                let up = upsample_nearest_tensor(g, factor);
                vec![Some(up.scale(scale))]
            })
        }))
    }
}

/// LR tap (0, 1 or 2 in a padded 3-window) read by HR phase `p`, HR tap `k`.
fn phase_tap(p: usize, k: usize, s: usize) -> usize {
    // floor((p + k - 1) / s) + 1 with p + k - 1 >= -1.
    (p + k + s - 1) / s
}

impl<'t, T: Float> Var<'t, T> {
    /// Nearest-neighbour upsampling by `scale` followed by a 3×3, pad-1
    /// convolution, computed on the low-resolution grid.
    ///
    /// Every HR output phase reads at most a 3×3 LR neighbourhood, so the
    /// kernel is folded into a `[3,3,Cin,scale²·Cout]` LR kernel and the
    /// phases are interleaved afterwards. Exact, boundaries included.
    pub fn upsample_conv(self, kernel: Var<'t, T>, scale: usize) -> Result<Var<'t, T>> {
        let ks = kernel.shape();
        let xs = self.shape();
        if ks.len() != 4 || ks[0] != 3 || ks[1] != 3 || xs.len() != 4 || xs[3] != ks[2] || scale == 0 {
            return shape_err(format!(
                "upsample_conv of {:?} with kernel {:?} by {}",
                xs, ks, scale
            ));
        }
        let co = ks[3];
        let folded = kernel.fold_upsample_kernel(scale)?;
        let (b, h, w) = (xs[0], xs[1], xs[2]);
        self.conv2d(folded, 1, 1)?
            .reshape(&[b, h, w, scale, scale, co])?
            .permute(&[0, 1, 3, 2, 4, 5])?
            .reshape(&[b, h * scale, w * scale, co])
    }

    fn fold_upsample_kernel(self, s: usize) -> Result<Var<'t, T>> {
        let k = self.value();
        let (ci, co) = (k.shape()[2], k.shape()[3]);
        let wide = s * s * co;
        // Folded index of (a, b, c, phase, o) and source index of (ky, kx, c, o).
        let fold = move |a: usize, bb: usize, c: usize, py: usize, px: usize, o: usize| {
            ((a * 3 + bb) * ci + c) * wide + (py * s + px) * co + o
        };
        let src = move |ky: usize, kx: usize, c: usize, o: usize| ((ky * 3 + kx) * ci + c) * co + o;
        let visit = move |f: &mut dyn FnMut(usize, usize)| {
            for py in 0..s {
                for px in 0..s {
                    for ky in 0..3 {
                        let a = phase_tap(py, ky, s);
                        for kx in 0..3 {
                            let bb = phase_tap(px, kx, s);
                            for c in 0..ci {
                                for o in 0..co {
                                    f(fold(a, bb, c, py, px, o), src(ky, kx, c, o));
                                }
                            }
                        }
                    }
                }
            }
        };
        let mut out = vec![T::zero(); 9 * ci * wide];
        let kd = k.data();
        visit(&mut |dst, from| out[dst] += kd[from]);
        let y = Tensor::from_vec(&[3, 3, ci, wide], out);
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| {
                let gd = g.data();
                let mut d = vec![T::zero(); 9 * ci * co];
                visit(&mut |dst, from| d[from] += gd[dst]);
                vec![Some(Tensor::from_vec(&[3, 3, ci, co], d))]
            })
        }))
    }
}

pub fn upsample_nearest_tensor<T: Float>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(b * ho * wo * c);
    for bi in 0..b {
        for oy in 0..ho {
            let row = (bi * h + oy / factor) * w;
            for ox in 0..wo {
                let src = (row + ox / factor) * c;
                out.extend_from_slice(&x.data()[src..src + c]);
            }
        }
    }
    Tensor::from_vec(&[b, ho, wo, c], out)
}
