use super::float::gemm;
use super::ops::broadcast_shape;
use super::tensor::strides;
use super::{Float, Tensor, Var};
use crate::error::{shape_err, Result};

/// Batch offsets for a broadcast batched matmul.
fn batch_offsets(batch: &[usize], own: &[usize]) -> Vec<usize> {
    let n: usize = batch.iter().product();
    let own_strides = strides(own);
    let off = batch.len() - own.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; batch.len()];
    for _ in 0..n {
        let mut o = 0;
        for (a, &i) in idx.iter().enumerate() {
            if a >= off && own[a - off] != 1 {
                o += i * own_strides[a - off];
            }
        }
        out.push(o);
        let mut axis = batch.len();
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < batch[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    a_off: Vec<usize>,
    b_off: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return shape_err(format!("matmul needs rank >= 2, got {:?} and {:?}", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return shape_err(format!("matmul inner dimensions {:?} x {:?}", a, b));
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = broadcast_shape(ab, bb)?;
    Ok(MatmulPlan {
        m,
        k,
        n,
        a_off: batch_offsets(&batch, ab),
        b_off: batch_offsets(&batch, bb),
        batch,
    })
}

impl<'t, T: Float> Var<'t, T> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// broadcasting over the leading dimensions.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let p = plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let nb = p.a_off.len();
        let mut out = vec![T::zero(); nb * m * n];
        // Fold a 2-D right operand into a single tall product.
        let a_contiguous = p.a_off.iter().enumerate().all(|(i, &o)| o == i);
        if b.rank() == 2 && a_contiguous {
            gemm(nb * m, k, n, a.data(), false, b.data(), false, &mut out, false);
        } else {
            for (i, (&ao, &bo)) in p.a_off.iter().zip(&p.b_off).enumerate() {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[ao * m * k..],
                    false,
                    &b.data()[bo * k * n..],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = p.batch.clone();
        shape.extend([m, n]);
        let y = Tensor::from_vec(&shape, out);
        Ok(self.tape().record(y, &[self, other], move || {
            Box::new(move |g, mask| {
                let gd = g.data();
                let ga = mask[0].then(|| {
                    let mut d = vec![T::zero(); a.len()];
                    for (i, (&ao, &bo)) in p.a_off.iter().zip(&p.b_off).enumerate() {
                        // dA = G * B^T
                        gemm(
                            m,
                            n,
                            k,
                            &gd[i * m * n..],
                            false,
                            &b.data()[bo * k * n..],
                            true,
                            &mut d[ao * m * k..(ao + 1) * m * k],
                            true,
                        );
                    }
                    Tensor::from_vec(a.shape(), d)
                });
                let gb = mask[1].then(|| {
                    let mut d = vec![T::zero(); b.len()];
                    for (i, (&ao, &bo)) in p.a_off.iter().zip(&p.b_off).enumerate() {
                        // dB = A^T * G
                        gemm(
                            k,
                            m,
                            n,
                            &a.data()[ao * m * k..],
                            true,
                            &gd[i * m * n..],
                            false,
                            &mut d[bo * k * n..(bo + 1) * k * n],
                            true,
                        );
                    }
                    Tensor::from_vec(b.shape(), d)
                });
                vec![ga, gb]
            })
        }))
    }

    /// Softmax along `axis`, with max-subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return shape_err(format!("softmax axis {} for shape {:?}", axis, x.shape()));
        }
        let y = softmax_tensor(&x, axis);
        let yv = y.clone();
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| {
                let shape = yv.shape();
                let outer: usize = shape[..axis].iter().product();
                let dim = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let (yd, gd) = (yv.data(), g.data());
                let mut d = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * dim + j) * inner + i;
                        let dot: T = (0..dim).map(|j| yd[at(j)] * gd[at(j)]).sum();
                        for j in 0..dim {
                            d[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(shape, d))]
            })
        }))
    }

    /// Layer normalization over the last axis with per-channel gain and bias.
    pub fn layer_norm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let x = self.value();
        let c = *x.shape().last().unwrap_or(&0);
        if gain.shape() != [c] || bias.shape() != [c] {
            return shape_err(format!(
                "layer_norm gain {:?}/bias {:?} for channels {}",
                gain.shape(),
                bias.shape(),
                c
            ));
        }
        let rows = x.len() / c.max(1);
        let (gv, bv) = (gain.value(), bias.value());
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let cf = T::of(c as f64);
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let is = if var + eps > T::zero() {
                T::one() / (var + eps).sqrt()
            } else {
                T::zero()
            };
            inv_std[r] = is;
            for (o, &v) in xhat[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let y: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv.data()[i % c] + bv.data()[i % c])
            .collect();
        let shape = x.shape().to_vec();
        let y = Tensor::from_vec(&shape, y);
        Ok(self.tape().record(y, &[self, gain, bias], move || {
            Box::new(move |g, mask| {
                let gd = g.data();
                let dx = mask[0].then(|| {
                    let mut d = vec![T::zero(); gd.len()];
                    for r in 0..rows {
                        let gh: Vec<T> = (0..c).map(|j| gd[r * c + j] * gv.data()[j]).collect();
                        let h = &xhat[r * c..(r + 1) * c];
                        let mean_gh = gh.iter().copied().sum::<T>() / cf;
                        let mean_ghh = gh.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / cf;
                        for j in 0..c {
                            d[r * c + j] = inv_std[r] * (gh[j] - mean_gh - h[j] * mean_ghh);
                        }
                    }
                    Tensor::from_vec(&shape, d)
                });
                let dgain = mask[1].then(|| {
                    let mut d = vec![T::zero(); c];
                    for (i, (&gv_, &h)) in gd.iter().zip(&xhat).enumerate() {
                        d[i % c] += gv_ * h;
                    }
                    Tensor::from_vec(&[c], d)
                });
                let dbias = mask[2].then(|| {
                    let mut d = vec![T::zero(); c];
                    for (i, &gv_) in gd.iter().enumerate() {
                        d[i % c] += gv_;
                    }
                    Tensor::from_vec(&[c], d)
                });
                vec![dx, dgain, dbias]
            })
        }))
    }
}

/// Plain (non-differentiable) softmax along `axis`.
pub fn softmax_tensor<T: Float>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let dim = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * dim + j) * inner + i;
            let mx = (0..dim).fold(T::neg_infinity(), |m, j| m.max(xd[at(j)]));
            let mut total = T::zero();
            for j in 0..dim {
                let e = (xd[at(j)] - mx).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..dim {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::from_vec(shape, out)
}
