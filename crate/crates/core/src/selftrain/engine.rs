//! Teacher-student state, one adaptation step and the full logged run.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::losses::{
    loss_high_d, loss_high_g, loss_low, loss_perceptual, loss_rec, total_loss, total_loss_var, LossTerms,
    LossWeights, LowBandNorm,
};
use super::transform::EnsembleMode;
use super::uncertainty::{estimate_uncertainty, PseudoLabelConfig};
use crate::backbone::{extract_features, reconstruct, upsample_skip, Discriminator, NetConfig, NormMode, ToySRNet, IMAGE_CHANNELS};
use crate::data::{psnr_y, sample_lr_batch, ssim, Image, Pairs};
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, AdamConfig, AdamState, Float, ParamStore, Tape, Tensor};
use crate::rng::{stream_rng, Stream};
use crate::wat::{wat_forward, Fusion, WatConfig, WatParams};

/// Learning rate used with the large pre-trained backbones in the literature;
/// far too small for the toy network, but selectable.
pub const LARGE_BACKBONE_LEARNING_RATE: f64 = 2e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptHyperParams {
    /// EMA decay η of the teacher.
    pub ema_decay: f64,
    /// Gumbel-Softmax temperature of the teacher.
    pub tau: f64,
    /// Stochastic teacher passes N.
    pub passes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub weights: LossWeights,
    /// Wavelet level of the LR side of the regularizers.
    pub l1: usize,
    /// Wavelet level of the SR side; `l2 − l1 = log2(scale)`.
    pub l2: usize,
    pub wat_probability: f64,
    pub patch: usize,
    pub batch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    pub ensemble: EnsembleMode,
    /// `false` replaces the confidence map by ones.
    pub use_uncertainty: bool,
    pub low_norm: LowBandNorm,
    pub eval_interval: usize,
    /// Evaluate (and keep the best of) the teacher instead of the student.
    pub eval_teacher: bool,
    pub wat_heads: usize,
    pub wat_samples: usize,
    pub fusion: Fusion,
}

impl Default for AdaptHyperParams {
    fn default() -> Self {
        Self {
            ema_decay: 0.999,
            tau: 0.1,
            passes: 5,
            alpha: 4e-4,
            beta: 1.5,
            weights: LossWeights::default(),
            l1: 1,
            l2: 3,
            wat_probability: 0.5,
            patch: 48,
            batch: 8,
            iterations: 2000,
            learning_rate: 1e-4,
            disc_learning_rate: 1e-4,
            ensemble: EnsembleMode::Full,
            use_uncertainty: true,
            low_norm: LowBandNorm::Compensated,
            eval_interval: 100,
            eval_teacher: false,
            wat_heads: 4,
            wat_samples: 4,
            fusion: Fusion::Mean,
        }
    }
}

impl AdaptHyperParams {
    pub fn validate(&self, scale: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0,1]", self.ema_decay));
        }
        if !(0.0..=1.0).contains(&self.wat_probability) {
            return bad(format!("wat_probability {} outside [0,1]", self.wat_probability));
        }
        let positive = [
            ("tau", self.tau),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("learning_rate", self.learning_rate),
            ("disc_learning_rate", self.disc_learning_rate),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{} must be positive, got {}", k, v));
            }
        }
        let w = self.weights;
        if [w.perceptual, w.low, w.high].iter().any(|v| !(*v >= 0.0)) {
            return bad("loss weights must be non-negative".into());
        }
        if self.passes < 2 {
            return bad(format!("passes must be at least 2, got {}", self.passes));
        }
        if self.batch == 0 || self.eval_interval == 0 || self.l1 == 0 {
            return bad("batch, eval_interval and l1 must be positive".into());
        }
        if !scale.is_power_of_two() || self.l2 != self.l1 + scale.trailing_zeros() as usize {
            return bad(format!(
                "l2 − l1 must equal log2(scale = {}), got l1 = {}, l2 = {}",
                scale, self.l1, self.l2
            ));
        }
        let unit = 1usize << self.l1.max(4);
        if self.patch == 0 || self.patch % unit != 0 {
            return bad(format!("patch {} must be a multiple of {}", self.patch, unit));
        }
        Ok(())
    }

    pub fn wat_config(&self, channels: usize) -> WatConfig {
        WatConfig {
            heads: self.wat_heads,
            samples: self.wat_samples,
            fusion: self.fusion,
            ..WatConfig::new(channels)
        }
    }

    fn pseudo_label_config(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            passes: self.passes,
            tau: self.tau,
            ensemble: self.ensemble,
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// The four component ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Never route through the transformer.
    NoWat,
    /// Freeze the teacher (η = 1).
    NoEma,
    /// Confidence map ≡ 1.
    NoUe,
    /// Drop the frequency regularizers (λ2 = λ3 = 0).
    NoReg,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::NoWat, Ablation::NoEma, Ablation::NoUe, Ablation::NoReg];

    pub fn apply(self, hp: &mut AdaptHyperParams) {
        match self {
            Ablation::NoWat => hp.wat_probability = 0.0,
            Ablation::NoEma => hp.ema_decay = 1.0,
            Ablation::NoUe => hp.use_uncertainty = false,
            Ablation::NoReg => {
                hp.weights.low = 0.0;
                hp.weights.high = 0.0;
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoWat => "no-wat",
            Ablation::NoEma => "no-ema",
            Ablation::NoUe => "no-ue",
            Ablation::NoReg => "no-reg",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{}'", s)))
    }
}

/// `ξ ← η·ξ + (1−η)·θ` for every parameter.
pub fn ema_update<T: Float>(teacher: &mut ParamStore<T>, student: &ParamStore<T>, eta: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Shape("teacher and student layouts differ".into()));
    }
    let (a, b) = (T::of(eta), T::of(1.0 - eta));
    for ((name, t), (sname, s)) in teacher.iter_mut().zip(student.iter()) {
        if name != sname || t.shape() != s.shape() {
            return Err(Error::Shape(format!("EMA: '{}' vs '{}'", name, sname)));
        }
        for (x, &y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = a * *x + b * y;
        }
    }
    Ok(())
}

/// Channels seen by the discriminator: three detail bands of an RGB image.
pub const DISC_CHANNELS: usize = 3 * IMAGE_CHANNELS;

/// Everything the adaptation loop mutates.
#[derive(Clone, Debug)]
pub struct TeacherStudentState<T: Float = f32> {
    pub teacher: ToySRNet<T>,
    pub student: ToySRNet<T>,
    pub wat: WatParams<T>,
    pub disc: Discriminator<T>,
    /// Frozen source model; its feature extractor defines the perceptual loss.
    pub source: ToySRNet<T>,
    pub ema_decay: f64,
    pub student_opt: AdamState<T>,
    pub wat_opt: AdamState<T>,
    pub disc_opt: AdamState<T>,
    pub iteration: usize,
}

impl<T: Float> TeacherStudentState<T> {
    /// Teacher and student both start from `source`; the transformer starts
    /// at its identity initialization.
    pub fn new<R: Rng + ?Sized>(source: &ToySRNet<T>, hp: &AdaptHyperParams, rng: &mut R) -> Result<Self> {
        hp.validate(source.config.scale)?;
        let wat = WatParams::init(hp.wat_config(source.config.channels), rng)?;
        let disc = Discriminator::init(DISC_CHANNELS, rng);
        let adam = AdamConfig::with_lr(hp.learning_rate);
        Ok(Self {
            teacher: source.clone(),
            student: source.clone(),
            student_opt: AdamState::new(adam, &source.params),
            wat_opt: AdamState::new(adam, &wat.params),
            disc_opt: AdamState::new(AdamConfig::with_lr(hp.disc_learning_rate), &disc.params),
            wat,
            disc,
            source: source.clone(),
            ema_decay: hp.ema_decay,
            iteration: 0,
        })
    }

    pub fn config(&self) -> NetConfig {
        self.student.config
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.teacher.params, &self.student.params, self.ema_decay)
    }

    /// All parameters under the `student.`, `teacher.`, `wat.` and `disc.` prefixes.
    pub fn to_checkpoint(&self) -> ParamStore<T> {
        let mut out = self.student.params.with_prefix("student.");
        out.extend(&self.teacher.params.with_prefix("teacher."));
        out.extend(&self.wat.params.with_prefix("wat."));
        out.extend(&self.disc.params.with_prefix("disc."));
        out
    }
}

/// Per-concern generators of one run.
#[derive(Clone, Debug)]
pub struct AdaptRngs {
    pub gumbel: ChaCha8Rng,
    pub routing: ChaCha8Rng,
    pub patches: ChaCha8Rng,
}

impl AdaptRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            gumbel: stream_rng(seed, Stream::Gumbel),
            routing: stream_rng(seed, Stream::Routing),
            patches: stream_rng(seed, Stream::Patches),
        }
    }
}

/// Values produced by one [`adapt_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub terms: LossTerms,
    pub total: f64,
    pub high_d: f64,
    pub cof_mean: f64,
    pub wat_used: bool,
}

/// One iteration: pseudo-labels from the teacher, a student update through
/// the (randomly routed) transformer, a discriminator update, then EMA.
pub fn adapt_step<T: Float>(
    state: &mut TeacherStudentState<T>,
    x: &Tensor<T>,
    hp: &AdaptHyperParams,
    rngs: &mut AdaptRngs,
) -> Result<StepRecord> {
    let cfg = state.config();
    let est = estimate_uncertainty(
        &state.teacher,
        x,
        &hp.pseudo_label_config(),
        state.iteration,
        Some(&mut rngs.gumbel),
    )?;
    let cof = if hp.use_uncertainty {
        est.cof.clone()
    } else {
        Tensor::ones(est.cof.shape())
    };
    // Exactly one draw per step keeps the routing stream aligned across settings.
    let wat_used = rngs.routing.random::<f64>() < hp.wat_probability;

    let tape = Tape::new();
    let sp = state.student.params.bind(&tape, true);
    let wp = wat_used.then(|| state.wat.params.bind(&tape, true));
    let extractor = state.source.params.bind(&tape, false);
    let dp = state.disc.params.bind(&tape, false);
    let mut f = extract_features(&cfg, &sp, tape.constant(x.clone()), NormMode::Softmax, None)?;
    if let Some(wp) = &wp {
        f = wat_forward(f, wp, &state.wat.config)?;
    }
    let sr = reconstruct(&cfg, &sp, f, &upsample_skip(&cfg, x)?, false)?;
    let rec = loss_rec(sr, &est.mean, &cof)?;
    let per = loss_perceptual(sr, &est.mean, &cfg, &extractor)?;
    let low = loss_low(x, sr, hp.l1, hp.l2, hp.low_norm)?;
    let high_g = loss_high_g(sr, &dp, DISC_CHANNELS, hp.l2)?;
    let terms = LossTerms {
        rec: rec.value().item().as_f64(),
        perceptual: per.value().item().as_f64(),
        low: low.value().item().as_f64(),
        high_g: high_g.value().item().as_f64(),
    };
    let total = total_loss(&terms, &hp.weights)?;
    let objective = total_loss_var(rec, per, low, high_g, &hp.weights)?;
    let grads = tape.backward(objective);
    state.student_opt.step(&mut state.student.params, &sp.grads(&grads))?;
    if let Some(wp) = &wp {
        state.wat_opt.step(&mut state.wat.params, &wp.grads(&grads))?;
    }
    let sr_value = (*sr.value()).clone();

    let dtape = Tape::new();
    let dp = state.disc.params.bind(&dtape, true);
    let ld = loss_high_d(dtape.constant(x.clone()), &sr_value, &dp, DISC_CHANNELS, hp.l1, hp.l2)?;
    let high_d = ld.value().item().as_f64();
    if !high_d.is_finite() {
        return Err(Error::NonFinite(format!("loss term l_highD = {}", high_d)));
    }
    let dgrads = dtape.backward(ld);
    state.disc_opt.step(&mut state.disc.params, &dp.grads(&dgrads))?;

    state.ema_update()?;
    state.iteration += 1;
    Ok(StepRecord {
        terms,
        total,
        high_d,
        cof_mean: est.cof_mean(),
        wat_used,
    })
}

/// Mean PSNR-Y and SSIM of `net` (Softmax mode, clamped) over `pairs`,
/// shaving `scale` border pixels.
pub fn evaluate<T: Float>(net: &ToySRNet<T>, pairs: &Pairs, chunk: usize) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let shave = net.config.scale;
    let (mut p, mut s) = (0.0, 0.0);
    for (lr, hr) in pairs.lr.chunks(chunk.max(1)).zip(pairs.hr.chunks(chunk.max(1))) {
        let x = crate::data::stack_images(lr)?.cast::<T>();
        let y = crate::data::stack_images(hr)?.cast::<T>();
        let sr = net.infer(&x, NormMode::Softmax, None)?;
        let n = lr.len() as f64;
        p += n * psnr_y(&sr, &y, shave)?;
        s += n * ssim(&sr, &y, shave)?;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

/// Interval means of the step records, as logged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RowTerms {
    pub l_rec: f64,
    pub l_per: f64,
    pub l_low: f64,
    pub l_high_g: f64,
    pub l_high_d: f64,
    pub l_total: f64,
    pub cof_mean: f64,
    /// Fraction of steps routed through the transformer.
    pub wat_used: f64,
}

/// One CSV line. The iteration-0 row carries no losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub terms: Option<RowTerms>,
    pub psnr_y_val: f64,
    pub ssim_val: f64,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "iteration",
    "l_rec",
    "l_per",
    "l_low",
    "l_highG",
    "l_highD",
    "l_total",
    "cof_mean",
    "wat_used",
    "psnr_y_val",
    "ssim_val",
];

impl LogRow {
    pub fn to_csv(&self) -> String {
        let mut cells = vec![self.iteration.to_string()];
        match &self.terms {
            Some(t) => cells.extend(
                [t.l_rec, t.l_per, t.l_low, t.l_high_g, t.l_high_d, t.l_total, t.cof_mean, t.wat_used]
                    .iter()
                    .map(|v| v.to_string()),
            ),
            None => cells.extend(std::iter::repeat_n(String::new(), 8)),
        }
        cells.push(self.psnr_y_val.to_string());
        cells.push(self.ssim_val.to_string());
        cells.join(",")
    }
}

#[derive(Default)]
struct Accumulator {
    sums: [f64; 8],
    n: usize,
}

impl Accumulator {
    fn push(&mut self, r: &StepRecord) {
        let v = [
            r.terms.rec,
            r.terms.perceptual,
            r.terms.low,
            r.terms.high_g,
            r.high_d,
            r.total,
            r.cof_mean,
            r.wat_used as u8 as f64,
        ];
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        self.n += 1;
    }

    fn take(&mut self) -> Option<RowTerms> {
        if self.n == 0 {
            return None;
        }
        let m = self.sums.map(|s| s / self.n as f64);
        *self = Self::default();
        Some(RowTerms {
            l_rec: m[0],
            l_per: m[1],
            l_low: m[2],
            l_high_g: m[3],
            l_high_d: m[4],
            l_total: m[5],
            cof_mean: m[6],
            wat_used: m[7],
        })
    }
}

/// Unlabeled training images plus the labeled validation split.
#[derive(Clone, Copy, Debug)]
pub struct TargetData<'a> {
    pub train_lr: &'a [Image],
    pub val: &'a Pairs,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// CSV log destination.
    pub csv: Option<PathBuf>,
    /// Where the best checkpoint is written whenever it improves.
    pub checkpoint: Option<PathBuf>,
    /// Extra `# key = value` header lines (e.g. ablation flags).
    pub metadata: Vec<(String, String)>,
}

pub struct AdaptOutcome<T: Float = f32> {
    /// State after the last iteration.
    pub state: TeacherStudentState<T>,
    /// Combined checkpoint of the best validation evaluation.
    pub best: ParamStore<T>,
    pub best_iteration: usize,
    pub best_psnr: f64,
    pub rows: Vec<LogRow>,
}

impl<T: Float> AdaptOutcome<T> {
    /// The evaluated model (student, or teacher when so configured) at the best evaluation.
    pub fn best_model(&self, hp: &AdaptHyperParams) -> Result<ToySRNet<T>> {
        let prefix = if hp.eval_teacher { "teacher." } else { "student." };
        ToySRNet::from_store(self.state.config(), self.best.strip_prefix(prefix))
    }
}

const EVAL_CHUNK: usize = 8;

/// Adapts `source` to the target domain for `hp.iterations` steps, evaluating
/// at iteration 0, every `eval_interval` steps and at the end.
pub fn adapt_run<T: Float>(
    source: &ToySRNet<T>,
    data: TargetData,
    hp: &AdaptHyperParams,
    opts: &RunOptions,
) -> Result<AdaptOutcome<T>> {
    hp.validate(source.config.scale)?;
    if data.train_lr.is_empty() {
        return Err(Error::Config("no target training images".into()));
    }
    let mut state = TeacherStudentState::new(source, hp, &mut stream_rng(opts.seed, Stream::AdaptInit))?;
    let mut rngs = AdaptRngs::new(opts.seed);

    let mut csv = match &opts.csv {
        Some(path) => {
            let mut f = fs::File::create(path)?;
            writeln!(f, "# seed = {}", opts.seed)?;
            for (k, v) in &opts.metadata {
                writeln!(f, "# {} = {}", k, v)?;
            }
            writeln!(f, "{}", CSV_COLUMNS.join(","))?;
            Some(f)
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut acc = Accumulator::default();
    let mut best = state.to_checkpoint();
    let (mut best_psnr, mut best_iteration) = (f64::NEG_INFINITY, 0);
    let mut it = 0;
    loop {
        if it == 0 || it % hp.eval_interval == 0 || it == hp.iterations {
            let (p, s) = evaluate(if hp.eval_teacher { &state.teacher } else { &state.student }, data.val, EVAL_CHUNK)?;
            let row = LogRow {
                iteration: it,
                terms: acc.take(),
                psnr_y_val: p,
                ssim_val: s,
            };
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", row.to_csv())?;
                f.flush()?;
            }
            log::info!("iteration {}: val PSNR-Y {:.4} dB, SSIM {:.4}", it, p, s);
            rows.push(row);
            if p > best_psnr {
                best_psnr = p;
                best_iteration = it;
                best = state.to_checkpoint();
                if let Some(path) = &opts.checkpoint {
                    checkpoint::save(&best, path)?;
                }
            }
        }
        if it == hp.iterations {
            break;
        }
        let x = sample_lr_batch(data.train_lr, hp.batch, hp.patch, &mut rngs.patches)?.cast::<T>();
        let rec = adapt_step(&mut state, &x, hp, &mut rngs)?;
        acc.push(&rec);
        it += 1;
    }
    Ok(AdaptOutcome {
        state,
        best,
        best_iteration,
        best_psnr,
        rows,
    })
}
