//! Orthonormal Haar wavelet packet transform on channels-last feature maps.
//!
//! A level-`ℓ` packet decomposition of `[B,H,W,C]` is held as one stacked
//! tensor `[4^ℓ, B, H/2^ℓ, W/2^ℓ, C]`. Band `i` is addressed by its filter
//! path written in base 4, most significant digit first, with digits
//! 0 = LL, 1 = LH, 2 = HL, 3 = HH. Band 0 is the pure low-pass path.
//!
//! One analysis step maps each 2×2 block `[[a, b], [c, d]]` to
//! `LL = (a+b+c+d)/2`, `LH = (a+b-c-d)/2`, `HL = (a-b+c-d)/2`,
//! `HH = (a-b-c+d)/2`. The step is orthogonal, so synthesis is its transpose
//! and band energy equals input energy.

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Float, Tape, Tensor, Var};

#[inline]
fn ll<T: Float>(a: T, b: T, c: T, d: T) -> T {
    ((a + b) + (c + d)) * T::of(0.5)
}

#[inline]
fn analysis<T: Float>(a: T, b: T, c: T, d: T) -> [T; 4] {
    let half = T::of(0.5);
    [
        ll(a, b, c, d),
        ((a + b) - (c + d)) * half,
        ((a - b) + (c - d)) * half,
        ((a - b) - (c - d)) * half,
    ]
}

#[inline]
fn synthesis<T: Float>(s: [T; 4]) -> [T; 4] {
    let half = T::of(0.5);
    let [l, lh, hl, hh] = s;
    [
        ((l + lh) + (hl + hh)) * half,
        ((l + lh) - (hl + hh)) * half,
        ((l - lh) + (hl - hh)) * half,
        ((l - lh) - (hl - hh)) * half,
    ]
}

fn check_dims(shape: &[usize], level: usize) -> Result<()> {
    if shape.len() != 4 {
        return shape_err(format!("wavelet input must be [B,H,W,C], got {:?}", shape));
    }
    if level == 0 || level > 16 {
        return Err(Error::Config(format!("wavelet level must be >= 1, got {}", level)));
    }
    let m = 1usize << level;
    for (axis, name) in [(1, "height"), (2, "width")] {
        if shape[axis] % m != 0 {
            return shape_err(format!(
                "{} {} is not divisible by 2^{} = {}",
                name, shape[axis], level, m
            ));
        }
    }
    Ok(())
}

/// One analysis step on a stack `[P,B,H,W,C]` → `[4P,B,H/2,W/2,C]`.
fn analysis_step<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (p, b, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let (ho, wo) = (h / 2, w / 2);
    let band = b * ho * wo * c;
    let mut out = vec![T::zero(); p * 4 * band];
    let xd = x.data();
    for pi in 0..p {
        for bi in 0..b {
            let src = (pi * b + bi) * h * w * c;
            for i in 0..ho {
                for j in 0..wo {
                    let r0 = src + (2 * i * w + 2 * j) * c;
                    let r1 = r0 + w * c;
                    let dst = ((bi * ho + i) * wo + j) * c;
                    for ch in 0..c {
                        let v = analysis(xd[r0 + ch], xd[r0 + c + ch], xd[r1 + ch], xd[r1 + c + ch]);
                        for (k, &vk) in v.iter().enumerate() {
                            out[(pi * 4 + k) * band + dst + ch] = vk;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[p * 4, b, ho, wo, c], out)
}

/// Inverse of [`analysis_step`]: `[4P,B,h,w,C]` → `[P,B,2h,2w,C]`.
fn synthesis_step<T: Float>(s: &Tensor<T>) -> Tensor<T> {
    let sh = s.shape();
    let (p4, b, ho, wo, c) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    let p = p4 / 4;
    let (h, w) = (ho * 2, wo * 2);
    let band = b * ho * wo * c;
    let mut out = vec![T::zero(); p * b * h * w * c];
    let sd = s.data();
    for pi in 0..p {
        for bi in 0..b {
            let dst0 = (pi * b + bi) * h * w * c;
            for i in 0..ho {
                for j in 0..wo {
                    let at = ((bi * ho + i) * wo + j) * c;
                    let r0 = dst0 + (2 * i * w + 2 * j) * c;
                    let r1 = r0 + w * c;
                    for ch in 0..c {
                        let v = synthesis([
                            sd[(pi * 4) * band + at + ch],
                            sd[(pi * 4 + 1) * band + at + ch],
                            sd[(pi * 4 + 2) * band + at + ch],
                            sd[(pi * 4 + 3) * band + at + ch],
                        ]);
                        out[r0 + ch] = v[0];
                        out[r0 + c + ch] = v[1];
                        out[r1 + ch] = v[2];
                        out[r1 + c + ch] = v[3];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[p, b, h, w, c], out)
}

/// Low-pass-only step `[P,B,H,W,C]` → `[P,B,H/2,W/2,C]`.
fn lowpass_step<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (p, b, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(p * b * ho * wo * c);
    let xd = x.data();
    for pb in 0..p * b {
        let src = pb * h * w * c;
        for i in 0..ho {
            for j in 0..wo {
                let r0 = src + (2 * i * w + 2 * j) * c;
                let r1 = r0 + w * c;
                for ch in 0..c {
                    out.push(ll(xd[r0 + ch], xd[r0 + c + ch], xd[r1 + ch], xd[r1 + c + ch]));
                }
            }
        }
    }
    Tensor::from_vec(&[p, b, ho, wo, c], out)
}

fn lowpass_adjoint<T: Float>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let (p, b, ho, wo, c) = (s[0], s[1], s[2], s[3], s[4]);
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![T::zero(); p * b * h * w * c];
    let half = T::of(0.5);
    for pb in 0..p * b {
        let dst = pb * h * w * c;
        for i in 0..ho {
            for j in 0..wo {
                let at = ((pb * ho + i) * wo + j) * c;
                let r0 = dst + (2 * i * w + 2 * j) * c;
                let r1 = r0 + w * c;
                for ch in 0..c {
                    let v = g.data()[at + ch] * half;
                    out[r0 + ch] = v;
                    out[r0 + c + ch] = v;
                    out[r1 + ch] = v;
                    out[r1 + c + ch] = v;
                }
            }
        }
    }
    Tensor::from_vec(&[p, b, h, w, c], out)
}

fn haar_analysis<'t, T: Float>(x: Var<'t, T>) -> Var<'t, T> {
    let y = analysis_step(&x.value());
    x.tape().record(y, &[x], || {
        Box::new(|g, _| vec![Some(synthesis_step(g))])
    })
}

fn haar_synthesis<'t, T: Float>(s: Var<'t, T>) -> Var<'t, T> {
    let y = synthesis_step(&s.value());
    s.tape().record(y, &[s], || {
        Box::new(|g, _| vec![Some(analysis_step(g))])
    })
}

fn haar_lowpass<'t, T: Float>(x: Var<'t, T>) -> Var<'t, T> {
    let y = lowpass_step(&x.value());
    x.tape().record(y, &[x], || {
        Box::new(|g, _| vec![Some(lowpass_adjoint(g))])
    })
}

/// The `4^level` packet sub-bands of a feature map.
#[derive(Clone, Copy, Debug)]
pub struct SubbandSet<'t, T: Float = f32> {
    level: usize,
    bands: Var<'t, T>,
}

impl<'t, T: Float> SubbandSet<'t, T> {
    /// Wraps a stacked `[4^level, B, h, w, C]` tensor.
    pub fn from_stacked(level: usize, bands: Var<'t, T>) -> Result<Self> {
        let s = bands.shape();
        if s.len() != 5 || s[0] != 1 << (2 * level) {
            return shape_err(format!(
                "level-{} sub-band stack must be [{}, B, h, w, C], got {:?}",
                level,
                1usize << (2 * level),
                s
            ));
        }
        Ok(Self { level, bands })
    }

    /// Builds a set from individual `[B, h, w, C]` bands, in filter-path order.
    pub fn from_bands(level: usize, bands: &[Var<'t, T>]) -> Result<Self> {
        let want = 1usize << (2 * level);
        if bands.len() != want {
            return shape_err(format!("level {} needs {} bands, got {}", level, want, bands.len()));
        }
        let first = bands[0].shape();
        let mut stacked = Vec::with_capacity(want);
        for (i, b) in bands.iter().enumerate() {
            let s = b.shape();
            if s != first || s.len() != 4 {
                return shape_err(format!(
                    "band {} has shape {:?}, band 0 has {:?}",
                    i, s, first
                ));
            }
            let mut with_axis = vec![1];
            with_axis.extend_from_slice(&s);
            stacked.push(b.reshape(&with_axis)?);
        }
        Self::from_stacked(level, Var::concat(&stacked, 0)?)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn count(&self) -> usize {
        1 << (2 * self.level)
    }

    /// All bands as one `[4^level, B, h, w, C]` variable.
    pub fn stacked(&self) -> Var<'t, T> {
        self.bands
    }

    /// Shape of a single band, `[B, h, w, C]`.
    pub fn band_shape(&self) -> Vec<usize> {
        self.bands.shape()[1..].to_vec()
    }

    pub fn band(&self, index: usize) -> Result<Var<'t, T>> {
        if index >= self.count() {
            return shape_err(format!("band {} of {}", index, self.count()));
        }
        self.bands.narrow(0, index, 1)?.reshape(&self.band_shape())
    }

    /// The pure low-pass band `s_0`.
    pub fn low(&self) -> Result<Var<'t, T>> {
        self.band(0)
    }

    /// Same set with band 0 replaced; every other band is carried over as is.
    pub fn with_low(&self, low: Var<'t, T>) -> Result<Self> {
        if low.shape() != self.band_shape() {
            return shape_err(format!(
                "replacement low band {:?} for bands of {:?}",
                low.shape(),
                self.band_shape()
            ));
        }
        let mut s = vec![1];
        s.extend(self.band_shape());
        let rest = self.bands.narrow(0, 1, self.count() - 1)?;
        let bands = Var::concat(&[low.reshape(&s)?, rest], 0)?;
        Ok(Self {
            level: self.level,
            bands,
        })
    }

    /// Sum of squared coefficients over all bands.
    pub fn energy(&self) -> T {
        self.bands.value().sum_squares()
    }
}

fn as_stack<'t, T: Float>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let mut s = vec![1];
    s.extend(x.shape());
    x.reshape(&s)
}

/// Full packet decomposition: every band is split again at every level.
pub fn wpt_decompose<'t, T: Float>(f: Var<'t, T>, level: usize) -> Result<SubbandSet<'t, T>> {
    check_dims(&f.shape(), level)?;
    let mut x = as_stack(f)?;
    for _ in 0..level {
        x = haar_analysis(x);
    }
    SubbandSet::from_stacked(level, x)
}

/// Exact inverse of [`wpt_decompose`].
pub fn wpt_reconstruct<'t, T: Float>(s: &SubbandSet<'t, T>) -> Result<Var<'t, T>> {
    let mut x = s.bands;
    for _ in 0..s.level {
        x = haar_synthesis(x);
    }
    x.reshape(&s.band_shape_at_full())
}

/// Decompositions at several strictly increasing levels, sharing one chain of
/// analysis steps. Each set is bit-identical to [`wpt_decompose`] at its level.
pub fn wpt_decompose_levels<'t, T: Float>(
    f: Var<'t, T>,
    levels: &[usize],
) -> Result<Vec<SubbandSet<'t, T>>> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("levels must be strictly increasing, got {:?}", levels)));
    }
    check_dims(&f.shape(), levels[levels.len() - 1])?;
    let mut x = as_stack(f)?;
    let mut depth = 0;
    let mut out = Vec::with_capacity(levels.len());
    for &l in levels {
        while depth < l {
            x = haar_analysis(x);
            depth += 1;
        }
        out.push(SubbandSet::from_stacked(l, x)?);
    }
    Ok(out)
}

/// `Σ wpt_reconstruct(set)` over sets of distinct levels, all from maps of the
/// same shape. Synthesis is linear, so the sum is nested and every synthesis
/// step runs once.
pub fn wpt_reconstruct_sum<'t, T: Float>(sets: &[SubbandSet<'t, T>]) -> Result<Var<'t, T>> {
    let mut sorted: Vec<&SubbandSet<'t, T>> = sets.iter().collect();
    sorted.sort_by(|a, b| b.level.cmp(&a.level));
    let top = match sorted.first() {
        Some(s) => *s,
        None => return Err(Error::Config("no sub-band sets to reconstruct".into())),
    };
    let full = top.band_shape_at_full();
    let mut acc = top.bands;
    let mut depth = top.level;
    for s in &sorted[1..] {
        if s.level == depth || s.band_shape_at_full() != full {
            return shape_err(format!(
                "cannot sum level {} set {:?} into level {} output {:?}",
                s.level,
                s.bands.shape(),
                depth,
                full
            ));
        }
        while depth > s.level {
            acc = haar_synthesis(acc);
            depth -= 1;
        }
        acc = acc.add(s.bands)?;
    }
    while depth > 0 {
        acc = haar_synthesis(acc);
        depth -= 1;
    }
    acc.reshape(&full)
}

impl<T: Float> SubbandSet<'_, T> {
    fn band_shape_at_full(&self) -> Vec<usize> {
        let mut s = self.band_shape();
        s[1] <<= self.level;
        s[2] <<= self.level;
        s
    }
}

/// Low-frequency band `s_0` at `level`, computed along the low-pass path only.
pub fn low_band<'t, T: Float>(x: Var<'t, T>, level: usize) -> Result<Var<'t, T>> {
    check_dims(&x.shape(), level)?;
    let mut s = as_stack(x)?;
    for _ in 0..level {
        s = haar_lowpass(s);
    }
    let shape = s.shape()[1..].to_vec();
    s.reshape(&shape)
}

/// The three detail children (LH, HL, HH) of the `(level-1)`-fold low-pass
/// band, concatenated on channels: `[B, H/2^level, W/2^level, 3C]`.
pub fn high_bands<'t, T: Float>(x: Var<'t, T>, level: usize) -> Result<Var<'t, T>> {
    check_dims(&x.shape(), level)?;
    let mut s = as_stack(x)?;
    for _ in 1..level {
        s = haar_lowpass(s);
    }
    let split = haar_analysis(s);
    let sh = split.shape();
    let (b, h, w, c) = (sh[1], sh[2], sh[3], sh[4]);
    split
        .narrow(0, 1, 3)?
        .permute(&[1, 2, 3, 0, 4])?
        .reshape(&[b, h, w, 3 * c])
}

/// Plain-tensor packet decomposition, stacked `[4^level, B, h, w, C]`.
pub fn decompose_tensor<T: Float>(x: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let s = wpt_decompose(tape.constant(x.clone()), level)?;
    Ok((*s.stacked().value()).clone())
}

/// Plain-tensor inverse of [`decompose_tensor`].
pub fn reconstruct_tensor<T: Float>(bands: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let s = SubbandSet::from_stacked(level, tape.constant(bands.clone()))?;
    Ok((*wpt_reconstruct(&s)?.value()).clone())
}

pub fn low_band_tensor<T: Float>(x: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    Ok((*low_band(tape.constant(x.clone()), level)?.value()).clone())
}

pub fn high_bands_tensor<T: Float>(x: &Tensor<T>, level: usize) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    Ok((*high_bands(tape.constant(x.clone()), level)?.value()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_level_one() {
        let x = Tensor::<f64>::ones(&[1, 4, 4, 1]);
        let s = decompose_tensor(&x, 1).unwrap();
        assert_eq!(s.shape(), &[4, 1, 2, 2, 1]);
        assert!(s.data()[..4].iter().all(|&v| v == 2.0));
        assert!(s.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_closed_form() {
        let (a, b, c, d) = (0.3, -1.2, 2.5, 0.7);
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 1], vec![a, b, c, d]);
        let s = decompose_tensor(&x, 1).unwrap();
        let expected = [
            (a + b + c + d) / 2.0,
            (a + b - c - d) / 2.0,
            (a - b + c - d) / 2.0,
            (a - b - c + d) / 2.0,
        ];
        for (v, e) in s.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        let hb = high_bands_tensor(&x, 1).unwrap();
        assert_eq!(hb.shape(), &[1, 1, 1, 3]);
        for (v, e) in hb.data().iter().zip(&expected[1..]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn low_band_matches_full_decomposition_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[2, 16, 8, 3], 1.0, &mut rng);
        for level in 1..=3 {
            let full = decompose_tensor(&x, level).unwrap();
            let band0 = full.narrow(0, 0, 1).unwrap();
            let low = low_band_tensor(&x, level).unwrap();
            assert_eq!(band0.data(), low.data(), "level {level}");
        }
    }

    #[test]
    fn constant_low_gain_and_zero_high() {
        let x = Tensor::<f64>::full(&[1, 16, 16, 2], 0.3);
        for level in 1..=4 {
            let low = low_band_tensor(&x, level).unwrap();
            let gain = (1 << level) as f64;
            assert!(low.data().iter().all(|&v| (v - gain * 0.3).abs() < 1e-12));
            assert!(high_bands_tensor(&x, level).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn lr_and_sr_detail_bands_align() {
        let lr = Tensor::<f32>::zeros(&[2, 48, 48, 3]);
        let sr = Tensor::<f32>::zeros(&[2, 192, 192, 3]);
        assert_eq!(high_bands_tensor(&lr, 1).unwrap().shape(), &[2, 24, 24, 9]);
        assert_eq!(high_bands_tensor(&sr, 3).unwrap().shape(), &[2, 24, 24, 9]);
        assert_eq!(low_band_tensor(&lr, 1).unwrap().shape(), &[2, 24, 24, 3]);
        assert_eq!(low_band_tensor(&sr, 3).unwrap().shape(), &[2, 24, 24, 3]);
    }

    #[test]
    fn indivisible_dims_name_the_axis() {
        let x = Tensor::<f32>::zeros(&[1, 12, 10, 1]);
        let err = decompose_tensor(&x, 2).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
        let x = Tensor::<f32>::zeros(&[1, 6, 8, 1]);
        let err = decompose_tensor(&x, 2).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
    }

    #[test]
    fn inconsistent_bands_are_rejected() {
        let tape = Tape::<f32>::no_grad();
        let mut bands: Vec<_> = (0..3).map(|_| tape.constant(Tensor::zeros(&[1, 2, 2, 1]))).collect();
        bands.push(tape.constant(Tensor::zeros(&[1, 2, 3, 1])));
        assert!(SubbandSet::from_bands(1, &bands).is_err());
        assert!(SubbandSet::from_bands(1, &bands[..3]).is_err());
    }

    #[test]
    fn zero_bands_reconstruct_to_zero() {
        let z = Tensor::<f64>::zeros(&[16, 1, 2, 2, 3]);
        let x = reconstruct_tensor(&z, 2).unwrap();
        assert_eq!(x.shape(), &[1, 8, 8, 3]);
        assert_eq!(x.max_abs(), 0.0);
    }
}
