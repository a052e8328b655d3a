//! Wavelet Augmentation Transformer.
//!
//! Features are split into wavelet packets at several levels. The low-pass
//! band of each level is mixed across the batch by single-head attention
//! (batch augmentation attention), the mixed low bands of all levels are
//! concatenated into one token sequence and refined by a pre-norm
//! transformer block whose attention is multi-head deformable sampling
//! across levels. The refined low bands are written back next to the
//! untouched detail bands, every level is reconstructed, and the
//! reconstructions are fused.
//!
//! Output projections are zero-initialized, so a freshly initialized
//! transformer with mean fusion returns its input.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{deformable_aggregate, Binding, Float, ParamStore, Tensor, Var};
use crate::wavelet::{wpt_decompose_levels, wpt_reconstruct_sum, SubbandSet};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Average of the per-level reconstructions.
    Mean,
    /// Plain sum of the per-level reconstructions.
    Sum,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Fusion::Mean),
            "sum" => Ok(Fusion::Sum),
            _ => Err(Error::Config(format!("unknown fusion mode '{}'", s))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Mean => "mean",
            Fusion::Sum => "sum",
        })
    }
}

/// Ordered wavelet levels the transformer works on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSet(Vec<usize>);

impl LevelSet {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() || levels[0] == 0 || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "levels must be non-empty, positive and strictly increasing, got {:?}",
                levels
            )));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    /// Feature dims must split into whole cells at the deepest level.
    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let m = 1usize << self.max();
        if h % m != 0 || w % m != 0 {
            return shape_err(format!(
                "feature map {}x{} is not divisible by 2^{} = {}",
                h,
                w,
                self.max(),
                m
            ));
        }
        Ok(())
    }

    /// Token count of each level's low band for an `h×w` map.
    pub fn token_counts(&self, h: usize, w: usize) -> Vec<usize> {
        self.0.iter().map(|&l| (h >> l) * (w >> l)).collect()
    }
}

impl Default for LevelSet {
    fn default() -> Self {
        Self(vec![1, 2, 3, 4])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatConfig {
    pub channels: usize,
    pub heads: usize,
    /// Sampling points per head per level.
    pub samples: usize,
    pub levels: LevelSet,
    pub fusion: Fusion,
    pub mlp_ratio: usize,
}

impl WatConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            heads: 4,
            samples: 4,
            levels: LevelSet::default(),
            fusion: Fusion::Mean,
            mlp_ratio: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels ({}) must be a positive multiple of heads ({})",
                self.channels, self.heads
            )));
        }
        if self.samples == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("samples and mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Number of sampling slots each head normalizes over.
    pub fn slots(&self) -> usize {
        self.levels.len() * self.samples
    }
}

/// Learnable parameters of the transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct WatParams<T: Float = f32> {
    pub config: WatConfig,
    pub params: ParamStore<T>,
}

fn baa_name(level: usize, which: &str) -> String {
    format!("baa{}.{}", level, which)
}

impl<T: Float> WatParams<T> {
    pub fn init<R: Rng + ?Sized>(config: WatConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let std = 1.0 / (c as f64).sqrt();
        let mut p = ParamStore::new();
        for &l in config.levels.levels() {
            for w in ["q", "k", "v"] {
                p.insert(baa_name(l, w), Tensor::randn(&[c, c], std, rng));
            }
            p.insert(baa_name(l, "o"), Tensor::zeros(&[c, c]));
        }
        let n_off = config.heads * config.slots() * 2;
        let n_att = config.heads * config.slots();
        p.insert("ln1.g", Tensor::ones(&[c]));
        p.insert("ln1.b", Tensor::zeros(&[c]));
        p.insert("mhda.value", Tensor::randn(&[c, c], std, rng));
        p.insert("mhda.out", Tensor::zeros(&[c, c]));
        p.insert("mhda.offset.w", Tensor::zeros(&[c, n_off]));
        p.insert("mhda.offset.b", Tensor::zeros(&[n_off]));
        p.insert("mhda.attn.w", Tensor::zeros(&[c, n_att]));
        p.insert("mhda.attn.b", Tensor::zeros(&[n_att]));
        let hidden = c * config.mlp_ratio;
        p.insert("ln2.g", Tensor::ones(&[c]));
        p.insert("ln2.b", Tensor::zeros(&[c]));
        p.insert("mlp.fc1.w", Tensor::randn(&[c, hidden], std, rng));
        p.insert("mlp.fc1.b", Tensor::zeros(&[hidden]));
        p.insert("mlp.fc2.w", Tensor::zeros(&[hidden, c]));
        p.insert("mlp.fc2.b", Tensor::zeros(&[c]));
        Ok(Self { config, params: p })
    }

    /// Rebuilds from stored tensors, checking every expected shape.
    pub fn from_store(config: WatConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let template = Self::init(config.clone(), &mut rng)?;
        crate::backbone::check_layout(&template.params, &params)?;
        Ok(Self { config, params })
    }
}

/// Batch augmentation attention on one level's low band `[B, n, C]`:
/// attention runs over the batch axis independently at every position.
pub fn baa_forward<'t, T: Float>(
    s0: Var<'t, T>,
    p: &Binding<'t, T>,
    level: usize,
) -> Result<Var<'t, T>> {
    let s = s0.shape();
    if s.len() != 3 || s[0] == 0 {
        return shape_err(format!("BAA input must be [B,n,C] with B >= 1, got {:?}", s));
    }
    let c = s[2];
    let x = s0.permute(&[1, 0, 2])?;
    let q = x.matmul(p.get(&baa_name(level, "q")))?;
    let k = x.matmul(p.get(&baa_name(level, "k")))?;
    let v = x.matmul(p.get(&baa_name(level, "v")))?;
    let scores = q
        .matmul(k.transpose_last()?)?
        .mul_scalar(T::one() / T::of(c as f64).sqrt());
    let attn = scores.softmax(2)?;
    let out = attn.matmul(v)?.matmul(p.get(&baa_name(level, "o")))?;
    out.permute(&[1, 0, 2])
}

/// Normalized cell centres `(x, y)` of every low-band token, level by level.
pub fn compute_reference_points<T: Float>(levels: &LevelSet, h: usize, w: usize) -> Result<Tensor<T>> {
    levels.check_dims(h, w)?;
    let mut pts = Vec::new();
    for &l in levels.levels() {
        let (hl, wl) = (h >> l, w >> l);
        for row in 0..hl {
            for col in 0..wl {
                pts.push(T::of((col as f64 + 0.5) / wl as f64));
                pts.push(T::of((row as f64 + 0.5) / hl as f64));
            }
        }
    }
    let n = pts.len() / 2;
    Tensor::new(&[n, 2], pts)
}

/// Multi-head deformable attention across levels.
///
/// `tokens` is `[B, N, C]`, `level_maps[i]` the same features of level `i` as
/// `[B, h_i, w_i, C]`, `ref_points` the `[N, 2]` token positions. Returns the
/// output and the per-head attention weights `[B, N, heads, slots]`.
pub fn mhda_forward<'t, T: Float>(
    tokens: Var<'t, T>,
    level_maps: &[Var<'t, T>],
    ref_points: &Tensor<T>,
    p: &Binding<'t, T>,
    config: &WatConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let ts = tokens.shape();
    let (b, n, c) = (ts[0], ts[1], ts[2]);
    let (heads, k) = (config.heads, config.samples);
    let levels = level_maps.len();
    if c != config.channels || levels != config.levels.len() || ref_points.shape() != [n, 2] {
        return shape_err(format!(
            "MHDA got tokens {:?}, {} level maps and reference points {:?}",
            ts,
            levels,
            ref_points.shape()
        ));
    }
    let offsets = tokens
        .matmul(p.get("mhda.offset.w"))?
        .add(p.get("mhda.offset.b"))?
        .reshape(&[b, n, heads, levels, k, 2])?;
    let weights = tokens
        .matmul(p.get("mhda.attn.w"))?
        .add(p.get("mhda.attn.b"))?
        .reshape(&[b, n, heads, levels * k])?
        .softmax(3)?;
    let mut values = Vec::with_capacity(levels);
    for map in level_maps {
        let ms = map.shape();
        if ms.len() != 4 || ms[0] != b || ms[3] != c {
            return shape_err(format!("level map {:?} for tokens {:?}", ms, ts));
        }
        values.push(map.matmul(p.get("mhda.value"))?);
    }
    // Offsets are measured in cells of the sampled level.
    let heads_out = deformable_aggregate(&values, offsets, ref_points, weights, heads)?;
    Ok((heads_out.matmul(p.get("mhda.out"))?, weights))
}

fn mlp<'t, T: Float>(x: Var<'t, T>, p: &Binding<'t, T>) -> Result<Var<'t, T>> {
    x.matmul(p.get("mlp.fc1.w"))?
        .add(p.get("mlp.fc1.b"))?
        .gelu()
        .matmul(p.get("mlp.fc2.w"))?
        .add(p.get("mlp.fc2.b"))
}

/// Intermediate products of one forward pass.
pub struct WatTrace<'t, T: Float> {
    pub output: Var<'t, T>,
    pub original: Vec<SubbandSet<'t, T>>,
    pub augmented: Vec<SubbandSet<'t, T>>,
    pub attention: Var<'t, T>,
}

pub fn wat_forward<'t, T: Float>(
    f_in: Var<'t, T>,
    p: &Binding<'t, T>,
    config: &WatConfig,
) -> Result<Var<'t, T>> {
    Ok(wat_forward_traced(f_in, p, config)?.output)
}

pub fn wat_forward_traced<'t, T: Float>(
    f_in: Var<'t, T>,
    p: &Binding<'t, T>,
    config: &WatConfig,
) -> Result<WatTrace<'t, T>> {
    let fs = f_in.shape();
    if fs.len() != 4 || fs[3] != config.channels {
        return shape_err(format!(
            "WAT expects [B,H,W,{}], got {:?}",
            config.channels, fs
        ));
    }
    let (b, h, w, c) = (fs[0], fs[1], fs[2], fs[3]);
    config.levels.check_dims(h, w)?;
    let levels = config.levels.levels();
    let counts = config.levels.token_counts(h, w);

    let sets = wpt_decompose_levels(f_in, levels)?;
    let mut mixed = Vec::with_capacity(levels.len());
    for ((&l, &n), set) in levels.iter().zip(&counts).zip(&sets) {
        let s0 = set.low()?.reshape(&[b, n, c])?;
        mixed.push(s0.add(baa_forward(s0, p, l)?)?);
    }
    let x1 = Var::concat(&mixed, 1)?;
    let normed = x1.layer_norm(p.get("ln1.g"), p.get("ln1.b"), T::of(LN_EPS))?;
    let mut maps = Vec::with_capacity(levels.len());
    let mut start = 0;
    for (&l, &n) in levels.iter().zip(&counts) {
        maps.push(normed.narrow(1, start, n)?.reshape(&[b, h >> l, w >> l, c])?);
        start += n;
    }
    let refs = compute_reference_points::<T>(&config.levels, h, w)?;
    let (attended, attention) = mhda_forward(normed, &maps, &refs, p, config)?;
    let x2 = x1.add(attended)?;
    let x3 = x2.add(mlp(
        x2.layer_norm(p.get("ln2.g"), p.get("ln2.b"), T::of(LN_EPS))?,
        p,
    )?)?;

    let mut augmented = Vec::with_capacity(levels.len());
    let mut start = 0;
    for ((&l, &n), set) in levels.iter().zip(&counts).zip(&sets) {
        let low = x3.narrow(1, start, n)?.reshape(&[b, h >> l, w >> l, c])?;
        start += n;
        augmented.push(set.with_low(low)?);
    }
    let mut output = wpt_reconstruct_sum(&augmented)?;
    if config.fusion == Fusion::Mean {
        output = output.mul_scalar(T::one() / T::of(levels.len() as f64));
    }
    Ok(WatTrace {
        output,
        original: sets,
        augmented,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_points_examples() {
        let lv = LevelSet::new(vec![1]).unwrap();
        let p = compute_reference_points::<f64>(&lv, 4, 4).unwrap();
        assert_eq!(p.data(), &[0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75]);
        let all = compute_reference_points::<f64>(&LevelSet::default(), 48, 48).unwrap();
        assert_eq!(all.shape(), &[765, 2]);
        assert!(all.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn level_set_validation() {
        assert!(LevelSet::new(vec![2, 1]).is_err());
        assert!(LevelSet::new(vec![]).is_err());
        assert!(LevelSet::new(vec![0, 1]).is_err());
        assert!(LevelSet::default().check_dims(40, 48).is_err());
    }

    #[test]
    fn head_divisibility_is_checked() {
        let mut cfg = WatConfig::new(6);
        cfg.heads = 4;
        assert!(WatParams::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn head_output_sizes() {
        let cfg = WatConfig::new(8);
        let p = WatParams::<f32>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.params.get("mhda.offset.w").unwrap().shape(), &[8, 4 * 4 * 4 * 2]);
        assert_eq!(p.params.get("mhda.attn.w").unwrap().shape(), &[8, 4 * 4 * 4]);
    }

    #[test]
    fn singleton_batch_reduces_to_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = WatConfig::new(4);
        let mut wp = WatParams::<f64>::init(cfg, &mut rng).unwrap();
        wp.params.insert("baa1.o", Tensor::randn(&[4, 4], 0.5, &mut rng));
        let tape = Tape::new();
        let p = wp.params.bind(&tape, true);
        let x = Tensor::randn(&[1, 5, 4], 1.0, &mut rng);
        let out = baa_forward(tape.constant(x.clone()), &p, 1).unwrap();
        let expected = tape
            .constant(x)
            .matmul(p.get("baa1.v"))
            .unwrap()
            .matmul(p.get("baa1.o"))
            .unwrap();
        assert!(out.value().max_abs_diff(&expected.value()) < 1e-12);
    }
}
