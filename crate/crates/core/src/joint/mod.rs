//! Language stream: compatibility between image features and text
//! embeddings, class banks, the max-margin surrogate and joint training.

pub mod compat;
pub mod loss;
pub mod train;

pub use compat::{
    classify_image_fv, classify_text_ft, compatibility, empirical_risk, language_class_scores, ClassBank,
    ClassImageBank, ClassTextBank,
};
pub use loss::{dssje_minibatch_loss, BatchLoss, DEFAULT_MARGIN};
pub use train::{sample_batch, train_joint, ImageInputs, JointEpoch, JointModel, JointSamples, JointTrainConfig};
