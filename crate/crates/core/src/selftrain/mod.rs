//! Source-free adaptation: EMA teacher, uncertainty-rectified pseudo-labels,
//! the wavelet transformer on the student and frequency regularizers.

mod engine;
mod losses;
mod transform;
mod uncertainty;

pub use engine::{
    adapt_run, adapt_step, ema_update, evaluate, Ablation, AdaptHyperParams, AdaptOutcome, AdaptRngs, LogRow,
    RowTerms, RunOptions, StepRecord, TargetData, TeacherStudentState, CSV_COLUMNS, DISC_CHANNELS,
    LARGE_BACKBONE_LEARNING_RATE,
};
pub use losses::{
    loss_high_d, loss_high_g, loss_low, loss_perceptual, loss_rec, total_loss, total_loss_var, LossTerms,
    LossWeights, LowBandNorm, LOG_EPS,
};
pub use transform::{
    geometric_ensemble, transformed_outputs, transformed_outputs_multi, EnsembleMode, GeometricTransform,
};
pub use uncertainty::{confidence_map, estimate_from_passes, estimate_uncertainty, PseudoLabelConfig, UncertaintyEstimate};
