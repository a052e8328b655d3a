use super::{Float, Tensor, Var};
use crate::error::{shape_err, Result};

/// Bilinear taps at pixel-space position `pos` (texel centres at integers)
/// along an axis of `size` cells. Returns (lower index, upper index, fraction,
/// d(clamped)/d(pos)), the last being 0 where the position is clamped.
#[inline]
fn pixel_taps<T: Float>(pos: T, size: usize) -> (usize, usize, T, T) {
    let hi = T::of((size - 1) as f64);
    let (clamped, slope) = if pos < T::zero() {
        (T::zero(), T::zero())
    } else if pos > hi {
        (hi, T::zero())
    } else {
        (pos, T::one())
    };
    // `clamped ≥ 0`, so truncation is the floor.
    let i0 = (clamped.as_f64() as usize).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, clamped - T::of(i0 as f64), slope)
}

/// [`pixel_taps`] for a normalized coordinate; the slope is w.r.t. `coord`.
#[inline]
fn taps<T: Float>(coord: T, size: usize) -> (usize, usize, T, T) {
    let scale = T::of(size as f64);
    let (i0, i1, f, slope) = pixel_taps(coord * scale - T::of(0.5), size);
    (i0, i1, f, slope * scale)
}

impl<'t, T: Float> Var<'t, T> {
    /// Samples `[B,h,w,C]` at `[B,Q,2]` normalized `(x, y)` coordinates.
    ///
    /// Coordinate `(col + 0.5) / w` hits the centre of column `col` exactly;
    /// positions beyond the outermost centres are clamped to the border.
    pub fn bilinear_sample(self, coords: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, p) = (self.value(), coords.value());
        if x.rank() != 4 || p.rank() != 3 || p.shape()[2] != 2 || p.shape()[0] != x.shape()[0] {
            return shape_err(format!(
                "bilinear_sample expects [B,h,w,C] and [B,Q,2], got {:?} and {:?}",
                x.shape(),
                p.shape()
            ));
        }
        let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let q = p.shape()[1];
        if h == 0 || w == 0 {
            return shape_err("bilinear_sample on an empty map");
        }
        let mut out = vec![T::zero(); b * q * c];
        let xd = x.data();
        for bi in 0..b {
            let img = &xd[bi * h * w * c..(bi + 1) * h * w * c];
            for qi in 0..q {
                let at = (bi * q + qi) * 2;
                let (x0, x1, fx, _) = taps(p.data()[at], w);
                let (y0, y1, fy, _) = taps(p.data()[at + 1], h);
                let w00 = (T::one() - fx) * (T::one() - fy);
                let w01 = fx * (T::one() - fy);
                let w10 = (T::one() - fx) * fy;
                let w11 = fx * fy;
                let dst = &mut out[(bi * q + qi) * c..(bi * q + qi + 1) * c];
                let (r00, r01) = ((y0 * w + x0) * c, (y0 * w + x1) * c);
                let (r10, r11) = ((y1 * w + x0) * c, (y1 * w + x1) * c);
                for ch in 0..c {
                    dst[ch] = w00 * img[r00 + ch]
                        + w01 * img[r01 + ch]
                        + w10 * img[r10 + ch]
                        + w11 * img[r11 + ch];
                }
            }
        }
        let y = Tensor::from_vec(&[b, q, c], out);
        Ok(self.tape().record(y, &[self, coords], move || {
            Box::new(move |g, mask| {
                let gd = g.data();
                let xd = x.data();
                let mut dx = mask[0].then(|| vec![T::zero(); x.len()]);
                let mut dp = mask[1].then(|| vec![T::zero(); p.len()]);
                for bi in 0..b {
                    let base = bi * h * w * c;
                    for qi in 0..q {
                        let at = (bi * q + qi) * 2;
                        let (x0, x1, fx, sx) = taps(p.data()[at], w);
                        let (y0, y1, fy, sy) = taps(p.data()[at + 1], h);
                        let go = &gd[(bi * q + qi) * c..(bi * q + qi + 1) * c];
                        let (r00, r01) = (base + (y0 * w + x0) * c, base + (y0 * w + x1) * c);
                        let (r10, r11) = (base + (y1 * w + x0) * c, base + (y1 * w + x1) * c);
                        if let Some(dx) = dx.as_mut() {
                            let w00 = (T::one() - fx) * (T::one() - fy);
                            let w01 = fx * (T::one() - fy);
                            let w10 = (T::one() - fx) * fy;
                            let w11 = fx * fy;
                            for ch in 0..c {
                                dx[r00 + ch] += w00 * go[ch];
                                dx[r01 + ch] += w01 * go[ch];
                                dx[r10 + ch] += w10 * go[ch];
                                dx[r11 + ch] += w11 * go[ch];
                            }
                        }
                        if let Some(dp) = dp.as_mut() {
                            let (mut gx, mut gy) = (T::zero(), T::zero());
                            for ch in 0..c {
                                let (v00, v01) = (xd[r00 + ch], xd[r01 + ch]);
                                let (v10, v11) = (xd[r10 + ch], xd[r11 + ch]);
                                gx += go[ch]
                                    * ((T::one() - fy) * (v01 - v00) + fy * (v11 - v10));
                                gy += go[ch]
                                    * ((T::one() - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                            dp[at] += gx * sx;
                            dp[at + 1] += gy * sy;
                        }
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_vec(x.shape(), d)),
                    dp.map(|d| Tensor::from_vec(p.shape(), d)),
                ]
            })
        }))
    }
}

type Taps<T> = (usize, usize, T, T);

/// Sampling geometry of [`deformable_aggregate`].
struct SampleGrid<'a, T: Float> {
    dims: &'a [(usize, usize)],
    refs: &'a Tensor<T>,
    offsets: &'a Tensor<T>,
    batch: usize,
    tokens: usize,
    heads: usize,
    samples: usize,
}

impl<T: Float> SampleGrid<'_, T> {
    /// Calls `f(slot, level, batch, head, x taps, y taps)` for every sample;
    /// `slot` indexes the flattened `[B, N, heads, L, K]` sample grid.
    #[inline]
    fn visit(&self, mut f: impl FnMut(usize, usize, usize, usize, Taps<T>, Taps<T>)) {
        let half = T::of(0.5);
        let (levels, k) = (self.dims.len(), self.samples);
        let (r, o) = (self.refs.data(), self.offsets.data());
        for bi in 0..self.batch {
            for ni in 0..self.tokens {
                let (rx, ry) = (r[2 * ni], r[2 * ni + 1]);
                for h in 0..self.heads {
                    for (l, &(hl, wl)) in self.dims.iter().enumerate() {
                        let px = rx * T::of(wl as f64) - half;
                        let py = ry * T::of(hl as f64) - half;
                        let first = ((bi * self.tokens + ni) * self.heads + h) * levels * k + l * k;
                        for slot in first..first + k {
                            let tx = pixel_taps(px + o[2 * slot], wl);
                            let ty = pixel_taps(py + o[2 * slot + 1], hl);
                            f(slot, l, bi, h, tx, ty);
                        }
                    }
                }
            }
        }
    }
}

/// Multi-level deformable sampling with attention-weighted aggregation.
///
/// * `values[l]`: `[B, h_l, w_l, heads·d]` value maps, heads contiguous.
/// * `offsets`: `[B, N, heads, L, K, 2]` `(x, y)` offsets in cells of level `l`.
/// * `refs`: `[N, 2]` normalized reference points.
/// * `weights`: `[B, N, heads, L·K]`.
///
/// Returns `[B, N, heads·d]` with
/// `out[b,n,h] = Σ_{l,k} weights[b,n,h,lK+k] · bilinear(values[l][b,·,·,h], refs[n] + offsets[b,n,h,l,k] / (w_l, h_l))`.
/// Equivalent to per-level `bilinear_sample` followed by a weighted sum, in one pass.
pub fn deformable_aggregate<'t, T: Float>(
    values: &[Var<'t, T>],
    offsets: Var<'t, T>,
    refs: &Tensor<T>,
    weights: Var<'t, T>,
    heads: usize,
) -> Result<Var<'t, T>> {
    let vals: Vec<_> = values.iter().map(|v| v.value()).collect();
    let (off, wts) = (offsets.value(), weights.value());
    let os = off.shape().to_vec();
    let levels = vals.len();
    if levels == 0 || os.len() != 6 || os[2] != heads || os[3] != levels || os[5] != 2 {
        return shape_err(format!(
            "deformable_aggregate: offsets {:?} for {} levels and {} heads",
            os, levels, heads
        ));
    }
    let (b, n, k) = (os[0], os[1], os[4]);
    let c = vals[0].shape().get(3).copied().unwrap_or(0);
    if heads == 0 || c % heads != 0 || wts.shape() != [b, n, heads, levels * k] || refs.shape() != [n, 2] {
        return shape_err(format!(
            "deformable_aggregate: weights {:?}, refs {:?}, {} channels",
            wts.shape(),
            refs.shape(),
            c
        ));
    }
    for v in &vals {
        let s = v.shape();
        if s.len() != 4 || s[0] != b || s[3] != c || s[1] == 0 || s[2] == 0 {
            return shape_err(format!("deformable_aggregate: value map {:?}", s));
        }
    }
    let d = c / heads;
    let dims: Vec<(usize, usize)> = vals.iter().map(|v| (v.shape()[1], v.shape()[2])).collect();

    let refs = refs.clone();
    let mut out = vec![T::zero(); b * n * c];
    let geo = SampleGrid { dims: &dims, refs: &refs, offsets: &off, batch: b, tokens: n, heads, samples: k };
    geo.visit(|slot, l, bi, h, (x0, x1, fx, _), (y0, y1, fy, _)| {
        let (hl, wl) = dims[l];
        let a = wts.data()[slot];
        let img = &vals[l].data()[bi * hl * wl * c + h * d..];
        let (w00, w01) = (a * (T::one() - fx) * (T::one() - fy), a * fx * (T::one() - fy));
        let (w10, w11) = (a * (T::one() - fx) * fy, a * fx * fy);
        let (r00, r01) = ((y0 * wl + x0) * c, (y0 * wl + x1) * c);
        let (r10, r11) = ((y1 * wl + x0) * c, (y1 * wl + x1) * c);
        let token = slot / (levels * k * heads);
        let dst = &mut out[token * c + h * d..token * c + (h + 1) * d];
        for (ch, o) in dst.iter_mut().enumerate() {
            *o += w00 * img[r00 + ch] + w01 * img[r01 + ch] + w10 * img[r10 + ch] + w11 * img[r11 + ch];
        }
    });
    let tape = offsets.tape();
    let mut parents = values.to_vec();
    parents.push(offsets);
    parents.push(weights);
    let y = Tensor::from_vec(&[b, n, c], out);
    Ok(tape.record(y, &parents, move || {
        Box::new(move |g, mask| {
            let gd = g.data();
            let mut dv: Vec<Option<Vec<T>>> =
                vals.iter().enumerate().map(|(l, v)| mask[l].then(|| vec![T::zero(); v.len()])).collect();
            let mut doff = mask[levels].then(|| vec![T::zero(); off.len()]);
            let mut dw = mask[levels + 1].then(|| vec![T::zero(); wts.len()]);
            let geo = SampleGrid { dims: &dims, refs: &refs, offsets: &off, batch: b, tokens: n, heads, samples: k };
            geo.visit(|slot, l, bi, h, (x0, x1, fx, sx), (y0, y1, fy, sy)| {
                let (hl, wl) = dims[l];
                let a = wts.data()[slot];
                let base = bi * hl * wl * c + h * d;
                let (r00, r01) = (base + (y0 * wl + x0) * c, base + (y0 * wl + x1) * c);
                let (r10, r11) = (base + (y1 * wl + x0) * c, base + (y1 * wl + x1) * c);
                let token = slot / (levels * k * heads);
                let go = &gd[token * c + h * d..token * c + (h + 1) * d];
                let (gx_, gy_) = (T::one() - fx, T::one() - fy);
                if let Some(dvl) = dv[l].as_mut() {
                    let (w00, w01) = (a * gx_ * gy_, a * fx * gy_);
                    let (w10, w11) = (a * gx_ * fy, a * fx * fy);
                    for (ch, &gv) in go.iter().enumerate() {
                        dvl[r00 + ch] += w00 * gv;
                        dvl[r01 + ch] += w01 * gv;
                        dvl[r10 + ch] += w10 * gv;
                        dvl[r11 + ch] += w11 * gv;
                    }
                }
                if doff.is_some() || dw.is_some() {
                    let img = vals[l].data();
                    let (mut gs, mut gx, mut gy) = (T::zero(), T::zero(), T::zero());
                    for (ch, &gv) in go.iter().enumerate() {
                        let (v00, v01) = (img[r00 + ch], img[r01 + ch]);
                        let (v10, v11) = (img[r10 + ch], img[r11 + ch]);
                        gs += gv * (gy_ * (gx_ * v00 + fx * v01) + fy * (gx_ * v10 + fx * v11));
                        gx += gv * (gy_ * (v01 - v00) + fy * (v11 - v10));
                        gy += gv * (gx_ * (v10 - v00) + fx * (v11 - v01));
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[slot] += gs;
                    }
                    if let Some(doff) = doff.as_mut() {
                        doff[2 * slot] += a * gx * sx;
                        doff[2 * slot + 1] += a * gy * sy;
                    }
                }
            });
            let mut grads: Vec<Option<Tensor<T>>> = dv
                .into_iter()
                .zip(&vals)
                .map(|(g, v)| g.map(|g| Tensor::from_vec(v.shape(), g)))
                .collect();
            grads.push(doff.map(|g| Tensor::from_vec(off.shape(), g)));
            grads.push(dw.map(|g| Tensor::from_vec(wts.shape(), g)));
            grads
        })
    }))
}
