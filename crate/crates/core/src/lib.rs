//! Soft decision-tree ensembles with embedded group-ℓ0 feature selection.
//!
//! The ensemble is trained by proximal mini-batch gradient descent: a
//! gradient step on the smooth loss (plus ridge on the hyperplanes) is
//! followed by a group hard-thresholding prox that zeroes whole feature
//! slices of the hyperplane tensor. A dense-to-sparse scheduler ramps the
//! ℓ0 strength during training. Features whose slices are zero are never
//! read at inference time.

pub mod activation;
pub mod certify;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod gradients;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod prox;
pub mod rng;
pub mod schedule;
pub mod train;

pub use activation::{smooth_step, smooth_step_derivative};
pub use certify::{CertificateConfig, DescentCertificate, descent_certificate};
pub use data::{
    CsvOptions, Dataset, SyntheticSpec, TargetKind, TrueSupport, generate_synthetic, load_csv,
    split, znormalize,
};
pub use error::{Error, Result};
pub use gradients::{GradientPair, LossKind, Targets, backward, loss_value};
pub use metrics::{EvalReport, auc, compression_ratio, select_within_budget, support_f1};
pub use model::{EnsembleConfig, EnsembleModel, HyperplaneTensor, LeafTensor, SupportMask};
pub use prox::{hard_threshold_group, soft_threshold_group};
pub use schedule::{SchedulerConfig, scheduler_lambda0};
pub use train::{PenaltyMode, TrainConfig, TrainReport, train};
