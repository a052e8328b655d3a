//! Toy SR generator and the wavelet-domain discriminator.
//!
//! `ToySRNet` = head conv → residual blocks with channel attention → nearest
//! ×s upsampling + conv → linear 1×1 tail, plus a bicubic skip of the input. The
//! feature extractor (head + body) and the reconstructor (the rest) are
//! separate calls so the transformer can sit between them.

use rand::{Rng, RngCore};

use crate::data::bicubic_resize;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Binding, Float, ParamStore, Tape, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;

/// Normalization used inside channel attention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormMode {
    Softmax,
    Gumbel { tau: f64 },
}

impl NormMode {
    pub fn gumbel(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("Gumbel temperature must be > 0, got {}", tau)));
        }
        Ok(NormMode::Gumbel { tau })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub scale: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 4,
            scale: 4,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !matches!(self.scale, 2 | 4) {
            return Err(Error::Config(format!(
                "need channels > 0 and scale in {{2, 4}}, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Standard Gumbel(0, 1) draws.
pub fn gumbel_noise<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Open interval keeps both logs finite.
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((log v + g) / τ)`; `g` is drawn from `rng`, or zero without one.
pub fn gumbel_softmax(v: &[f64], tau: f64, rng: Option<&mut dyn RngCore>) -> Result<Vec<f64>> {
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("Gumbel-Softmax needs v > 0, got {}", bad)));
    }
    NormMode::gumbel(tau)?;
    let g = match rng {
        Some(r) => gumbel_noise(r, v.len()),
        None => vec![0.0; v.len()],
    };
    let z: Vec<f64> = v.iter().zip(&g).map(|(x, g)| (x.ln() + g) / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// Channel attention on `[B,H,W,C]`.
///
/// Scores are `v = exp(z)` with `z = pool(x)·W + b`, so `log v = z` feeds the
/// normalization directly. The normalized weights `a` gate the channels by
/// `1 + a − 1/C`: uniform weights are the identity and a one-hot draw (small
/// Gumbel temperature) stays a bounded perturbation. `noise` is `[B,C]`
/// Gumbel noise; `None` means zero. Returns the gated map and `a`.
pub fn channel_attention<'t, T: Float>(
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
    mode: NormMode,
    noise: Option<&Tensor<T>>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let s = x.shape();
    if s.len() != 4 {
        return shape_err(format!("channel attention on {:?}", s));
    }
    let (bn, c) = (s[0], s[3]);
    let pooled = x.reshape(&[bn, s[1] * s[2], c])?.mean_axis(1)?.reshape(&[bn, c])?;
    let mut z = pooled.matmul(w)?.add(b)?;
    if let NormMode::Gumbel { tau } = mode {
        if let Some(g) = noise {
            z = z.add(x.tape().constant(g.clone()))?;
        }
        z = z.mul_scalar(T::of(1.0 / tau));
    }
    let a = z.softmax(1)?;
    let gate = a
        .add_scalar(T::one() - T::of(1.0 / c as f64))
        .reshape(&[bn, 1, 1, c])?;
    Ok((x.mul(gate)?, a))
}

fn conv_init<R: Rng + ?Sized, T: Float>(k: usize, ci: usize, co: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let std = gain * (2.0 / (k * k * ci) as f64).sqrt();
    Tensor::randn(&[k, k, ci, co], std, rng)
}

/// Source of Gumbel noise for one forward pass.
pub type NoiseSource<'a> = Option<&'a mut dyn RngCore>;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySRNet<T: Float = f32> {
    pub config: NetConfig,
    pub params: ParamStore<T>,
}

impl<T: Float> ToySRNet<T> {
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut p = ParamStore::new();
        p.insert("head.w", conv_init(3, IMAGE_CHANNELS, c, 1.0, rng));
        p.insert("head.b", Tensor::zeros(&[c]));
        for i in 0..config.blocks {
            let n = |s: &str| format!("body{}.{}", i, s);
            p.insert(n("conv1.w"), conv_init(3, c, c, 1.0, rng));
            p.insert(n("conv1.b"), Tensor::zeros(&[c]));
            p.insert(n("conv2.w"), conv_init(3, c, c, 0.1, rng));
            p.insert(n("conv2.b"), Tensor::zeros(&[c]));
            p.insert(n("att.w"), Tensor::zeros(&[c, c]));
            p.insert(n("att.b"), Tensor::zeros(&[c]));
        }
        p.insert("up.w", conv_init(3, c, c, 1.0, rng));
        p.insert("up.b", Tensor::zeros(&[c]));
        p.insert("tail.w", conv_init(1, c, IMAGE_CHANNELS, 0.1, rng));
        p.insert("tail.b", Tensor::zeros(&[IMAGE_CHANNELS]));
        Ok(Self { config, params: p })
    }

    /// Wraps stored parameters after checking names and shapes.
    pub fn from_store(config: NetConfig, params: ParamStore<T>) -> Result<Self> {
        let template = Self::init(config, &mut template_rng())?;
        check_layout(&template.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Evaluation-mode forward: no tape, output clamped to [0,1].
    pub fn infer(&self, x: &Tensor<T>, mode: NormMode, noise: NoiseSource) -> Result<Tensor<T>> {
        self.infer_with_skip(x, &upsample_skip(&self.config, x)?, mode, noise)
    }

    /// [`ToySRNet::infer`] with the bicubic skip already computed.
    pub fn infer_with_skip(
        &self,
        x: &Tensor<T>,
        skip: &Tensor<T>,
        mode: NormMode,
        noise: NoiseSource,
    ) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape, false);
        let f = extract_features(&self.config, &p, tape.constant(x.clone()), mode, noise)?;
        Ok((*reconstruct(&self.config, &p, f, skip, true)?.value()).clone())
    }
}

fn template_rng() -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(0)
}

pub(crate) fn check_layout<T: Float>(expected: &ParamStore<T>, got: &ParamStore<T>) -> Result<()> {
    for (name, t) in expected.iter() {
        let g = got.require(name)?;
        if g.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                name,
                g.shape(),
                t.shape()
            )));
        }
    }
    if got.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    Ok(())
}

fn conv_bias<'t, T: Float>(x: Var<'t, T>, p: &Binding<'t, T>, name: &str) -> Result<Var<'t, T>> {
    x.conv2d(p.get(&format!("{}.w", name)), 1, 1)?
        .add(p.get(&format!("{}.b", name)))
}

/// Head + residual body: `[B,h,w,3]` → `[B,h,w,C]`.
pub fn extract_features<'t, T: Float>(
    cfg: &NetConfig,
    p: &Binding<'t, T>,
    x: Var<'t, T>,
    mode: NormMode,
    mut noise: NoiseSource,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || s[3] != IMAGE_CHANNELS {
        return shape_err(format!("expected [B,h,w,3] input, got {:?}", s));
    }
    let (b, c) = (s[0], cfg.channels);
    let mut f = conv_bias(x, p, "head")?;
    for i in 0..cfg.blocks {
        let n = |s: &str| format!("body{}.{}", i, s);
        let r = conv_bias(f, p, &n("conv1"))?.relu();
        let r = conv_bias(r, p, &n("conv2"))?;
        let g = match (mode, noise.as_deref_mut()) {
            (NormMode::Gumbel { .. }, Some(rng)) => {
                let g = gumbel_noise(rng, b * c);
                Some(Tensor::from_vec(&[b, c], g.into_iter().map(T::of).collect()))
            }
            _ => None,
        };
        let (r, _) = channel_attention(r, p.get(&n("att.w")), p.get(&n("att.b")), mode, g.as_ref())?;
        f = f.add(r)?;
    }
    Ok(f)
}

/// Bicubic upscale of an LR batch, the skip path of [`reconstruct`].
pub fn upsample_skip<T: Float>(cfg: &NetConfig, x_lr: &Tensor<T>) -> Result<Tensor<T>> {
    bicubic_resize(x_lr, cfg.scale as f64)
}

/// Upsampler + tail + the HR `skip` ([`upsample_skip`] of the input).
/// Clamped to [0,1] when `eval`.
///
/// The upsampler (nearest ×s, 3×3 conv) and the 1×1 tail are linear with no
/// activation between them, so they are applied as one composed 3×3 kernel
/// `[3,3,C,3]`; no C-channel map is ever built at HR resolution.
pub fn reconstruct<'t, T: Float>(
    cfg: &NetConfig,
    p: &Binding<'t, T>,
    features: Var<'t, T>,
    skip: &Tensor<T>,
    eval: bool,
) -> Result<Var<'t, T>> {
    let fs = features.shape();
    let ss = skip.shape();
    let (c, r) = (cfg.channels, cfg.scale);
    if fs.len() != 4 || fs[3] != c || ss != [fs[0], fs[1] * r, fs[2] * r, IMAGE_CHANNELS] {
        return shape_err(format!("features {:?} do not match skip {:?}", fs, ss));
    }
    let tail = p.get("tail.w").reshape(&[c, IMAGE_CHANNELS])?;
    let kernel = p
        .get("up.w")
        .reshape(&[9 * c, c])?
        .matmul(tail)?
        .reshape(&[3, 3, c, IMAGE_CHANNELS])?;
    let bias = p
        .get("up.b")
        .reshape(&[1, c])?
        .matmul(tail)?
        .reshape(&[IMAGE_CHANNELS])?
        .add(p.get("tail.b"))?;
    let y = features
        .upsample_conv(kernel, cfg.scale)?
        .add(bias)?
        .add(features.tape().constant(skip.clone()))?;
    Ok(if eval { y.clamp(T::zero(), T::one()) } else { y })
}

/// Patch discriminator over wavelet detail bands `[B,h,w,3·3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Float = f32> {
    pub in_channels: usize,
    pub params: ParamStore<T>,
}

const DISC_WIDTHS: [usize; 3] = [32, 64, 64];
const LEAKY_SLOPE: f64 = 0.2;

impl<T: Float> Discriminator<T> {
    /// The final linear layer starts at zero, so D ≡ 0.5 initially.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let mut ci = in_channels;
        for (i, &co) in DISC_WIDTHS.iter().enumerate() {
            p.insert(format!("conv{}.w", i + 1), conv_init(3, ci, co, 1.0, rng));
            p.insert(format!("conv{}.b", i + 1), Tensor::zeros(&[co]));
            ci = co;
        }
        p.insert("fc.w", Tensor::zeros(&[ci, 1]));
        p.insert("fc.b", Tensor::zeros(&[1]));
        Self {
            in_channels,
            params: p,
        }
    }

    pub fn from_store(in_channels: usize, params: ParamStore<T>) -> Result<Self> {
        let template = Self::init(in_channels, &mut template_rng());
        check_layout(&template.params, &params)?;
        Ok(Self {
            in_channels,
            params,
        })
    }
}

/// Probability `[B]` that each input is real.
pub fn discriminator_forward<'t, T: Float>(
    p: &Binding<'t, T>,
    in_channels: usize,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || s[3] != in_channels {
        return shape_err(format!(
            "discriminator expects {} channels, got {:?}",
            in_channels, s
        ));
    }
    let mut h = x;
    for i in 1..=DISC_WIDTHS.len() {
        h = h
            .conv2d(p.get(&format!("conv{}.w", i)), 2, 1)?
            .add(p.get(&format!("conv{}.b", i)))?
            .leaky_relu(T::of(LEAKY_SLOPE));
    }
    let hs = h.shape();
    let pooled = h
        .reshape(&[hs[0], hs[1] * hs[2], hs[3]])?
        .mean_axis(1)?
        .reshape(&[hs[0], hs[3]])?;
    pooled
        .matmul(p.get("fc.w"))?
        .add(p.get("fc.b"))?
        .sigmoid()
        .reshape(&[hs[0]])
}
