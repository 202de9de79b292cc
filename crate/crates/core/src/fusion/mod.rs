//! Late fusion of the two streams, beta selection and the evaluation,
//! ablation and zero-shot protocols.

pub mod eval;
pub mod fuse;

pub use eval::{ablate_localization, evaluate, zero_shot_eval, AblationTable, EvalReport, StreamOutputs};
pub use fuse::{fuse_scores, fused_predict, select_beta, FusionConfig, BETA_GRID, DEFAULT_BETA};
