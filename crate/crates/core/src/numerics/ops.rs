use std::rc::Rc;

use super::tensor::strides;
use super::{Float, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("shapes {:?} and {:?} do not broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Visits every index of `out`, yielding the flat offsets into two broadcast
/// operands. The innermost axis runs as a plain strided loop.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let Some(last) = out.len().checked_sub(1) else {
        f(0, 0, 0);
        return;
    };
    let (inner, ia, ib) = (out[last], sa[last], sb[last]);
    let mut idx = vec![0usize; last];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut i = 0;
    loop {
        for k in 0..inner {
            f(i + k, oa + k * ia, ob + k * ib);
        }
        i += inner;
        if i >= n {
            return;
        }
        let mut axis = last;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= idx[axis] * sa[axis];
            ob -= idx[axis] * sb[axis];
            idx[axis] = 0;
        }
    }
}

/// `pattern` repeated up to roughly 256 elements without exceeding `total`
/// (a multiple of `pattern.len()`).
fn tiled<T: Copy>(pattern: &[T], total: usize) -> Vec<T> {
    let reps = (256 / pattern.len().max(1)).clamp(1, (total / pattern.len().max(1)).max(1));
    pattern.repeat(reps)
}

pub(crate) fn broadcast_binary<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    if out == a.shape() && is_suffix(b.shape(), &out) {
        let tile = tiled(bd, ad.len());
        let mut data = ad.to_vec();
        for chunk in data.chunks_mut(tile.len()) {
            chunk.iter_mut().zip(&tile).for_each(|(x, &y)| *x = f(*x, y));
        }
        return Tensor::new(&out, data);
    }
    if out == b.shape() && is_suffix(a.shape(), &out) {
        let tile = tiled(ad, bd.len());
        let mut data = bd.to_vec();
        for chunk in data.chunks_mut(tile.len()) {
            chunk.iter_mut().zip(&tile).for_each(|(y, &x)| *y = f(x, *y));
        }
        return Tensor::new(&out, data);
    }
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    for_each_broadcast(&out, &sa, &sb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
    Tensor::new(&out, data)
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    if n == 1 {
        out[0] = g.sum();
    } else if is_suffix(shape, g.shape()) {
        // Accumulate whole tiles first so short suffixes still vectorize.
        let mut acc = tiled(&out, g.len());
        for chunk in g.data().chunks(acc.len()) {
            acc.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
        }
        for part in acc.chunks(n) {
            out.iter_mut().zip(part).for_each(|(o, &v)| *o += v);
        }
    } else {
        let gs = g.shape().to_vec();
        let st = aligned_strides(shape, &gs);
        let zero = vec![0usize; gs.len()];
        let gd = g.data();
        for_each_broadcast(&gs, &st, &zero, |i, io, _| out[io] += gd[i]);
    }
    Tensor::from_vec(shape, out)
}

impl<'t, T: Float> Var<'t, T> {
    fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let out_val = y.clone();
        self.tape().record_shared(y, &[self], move || {
            Box::new(move |g, _| {
                let d = x
                    .data()
                    .iter()
                    .zip(out_val.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                    .collect();
                vec![Some(Tensor::from_vec(x.shape(), d))]
            })
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let y = broadcast_binary(&a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape().record(y, &[self, other], move || {
            Box::new(move |g, m| {
                vec![
                    m[0].then(|| reduce_to(g, &sa)),
                    m[1].then(|| reduce_to(g, &sb)),
                ]
            })
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let y = broadcast_binary(&a, &b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape().record(y, &[self, other], move || {
            Box::new(move |g, m| {
                vec![
                    m[0].then(|| reduce_to(g, &sa)),
                    m[1].then(|| reduce_to(&g.scale(-T::one()), &sb)),
                ]
            })
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let y = broadcast_binary(&a, &b, |x, y| x * y)?;
        Ok(self.tape().record(y, &[self, other], move || {
            Box::new(move |g, m| {
                let ga = m[0].then(|| {
                    let full = broadcast_binary(g, &b, |gv, bv| gv * bv).expect("broadcast");
                    reduce_to(&full, a.shape())
                });
                let gb = m[1].then(|| {
                    let full = broadcast_binary(g, &a, |gv, av| gv * av).expect("broadcast");
                    reduce_to(&full, b.shape())
                });
                vec![ga, gb]
            })
        }))
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if b.data().iter().any(|&v| v == T::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        let y = broadcast_binary(&a, &b, |x, y| x / y)?;
        let out_val = Rc::new(y.clone());
        Ok(self.tape().record(y, &[self, other], move || {
            Box::new(move |g, m| {
                let ga = m[0].then(|| {
                    let full = broadcast_binary(g, &b, |gv, bv| gv / bv).expect("broadcast");
                    reduce_to(&full, a.shape())
                });
                let gb = m[1].then(|| {
                    // d(a/b)/db = -y/b
                    let gy = g.zip_map(&out_val, |gv, yv| gv * yv).expect("same shape");
                    let full = broadcast_binary(&gy, &b, |v, bv| -v / bv).expect("broadcast");
                    reduce_to(&full, b.shape())
                });
                vec![ga, gb]
            })
        }))
    }

    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(self, s: T) -> Var<'t, T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.mul_scalar(-T::one())
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        if let Some(v) = self.value().data().iter().find(|&&v| v <= T::zero()) {
            return Err(Error::Domain(format!("log of non-positive value {}", v)));
        }
        Ok(self.unary(|x| x.ln(), |x, _| T::one() / x))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, T> {
        self.unary(gelu, |x, _| gelu_grad(x))
    }

    /// Clamps values; the gradient passes only where the input was inside the range.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record(Tensor::scalar(x.sum()), &[self], move || {
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().len().max(1);
        self.sum().mul_scalar(T::one() / T::of(n as f64))
    }

    /// Sums over `axis`, keeping it with size 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return shape_err(format!("axis {} for shape {:?}", axis, x.shape()));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let dim = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for d in 0..dim {
                let src = &xd[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let in_shape = x.shape().to_vec();
        Ok(self
            .tape()
            .record(Tensor::from_vec(&shape, out), &[self], move || {
                Box::new(move |g, _| {
                    let gd = g.data();
                    let mut d = vec![T::zero(); outer * dim * inner];
                    for o in 0..outer {
                        for k in 0..dim {
                            d[(o * dim + k) * inner..(o * dim + k + 1) * inner]
                                .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                        }
                    }
                    vec![Some(Tensor::from_vec(&in_shape, d))]
                })
            }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let dim = self.value().shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.mul_scalar(T::one() / T::of(dim as f64)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let y = (*x).clone().reshape(shape)?;
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| vec![Some(g.clone().reshape(&in_shape).expect("reshape back"))])
        }))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let y = self.value().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| vec![Some(g.permute(&inverse).expect("inverse permutation"))])
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return shape_err("transpose needs rank >= 2");
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.narrow(axis, start, len)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape().record(y, &[self], move || {
            Box::new(move |g, _| {
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let dim = in_shape[axis];
                let mut d = vec![T::zero(); outer * dim * inner];
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    d[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_vec(&in_shape, d))]
            })
        }))
    }

    /// Concatenates along `axis`.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = match parts.first() {
            Some(p) => *p,
            None => return shape_err("concat of zero tensors"),
        };
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape().record(y, parts, move || {
            Box::new(move |g, m| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(m)
                    .map(|(&len, &needed)| {
                        let piece = needed.then(|| g.narrow(axis, start, len).expect("split"));
                        start += len;
                        piece
                    })
                    .collect()
            })
        }))
    }

    /// Mean absolute difference between two same-shape tensors.
    pub fn l1_loss(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.shape() != target.shape() {
            return shape_err(format!(
                "l1 operands {:?} and {:?}",
                self.shape(),
                target.shape()
            ));
        }
        Ok(self.sub(target)?.abs().mean())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Float>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn add_matches_example() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().item(), 0.5);
    }

    #[test]
    fn log_exp_identity() {
        let tape = Tape::<f64>::no_grad();
        let t = Tensor::<f64>::from_fn(&[200], |i| 0.05 * i as f64);
        let y = tape.constant(t.clone()).exp().log().unwrap();
        assert!(y.value().max_abs_diff(&t) < 1e-6);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain(_))));
    }

    #[test]
    fn incompatible_broadcast_is_a_shape_error() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(a.add(b), Err(Error::Shape(_))));
    }

    #[test]
    fn broadcast_grad_reduces_to_operand_shape() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let b = tape.leaf(Tensor::from_fn(&[3, 1], |i| 1.0 + i as f64));
        let y = a.mul(b).unwrap().sum();
        let g = tape.backward(y);
        let gb = g.get(b).unwrap();
        assert_eq!(gb.shape(), &[3, 1]);
        // d/db_j = sum over i,k of a[i,j,k]
        let a_val = a.value();
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..2 {
                for k in 0..4 {
                    s += a_val.data()[(i * 3 + j) * 4 + k];
                }
            }
            assert_eq!(gb.data()[j], s);
        }
        assert_eq!(g.get(a).unwrap().data()[5], 2.0);
    }
}
