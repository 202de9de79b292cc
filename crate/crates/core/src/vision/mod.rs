//! Vision stream: image encoder, saliency localization and the
//! original-plus-crop classifier.

pub mod encoder;
pub mod image;
pub mod localize;
pub mod predict;
pub mod scores;
pub mod train;

pub use encoder::{conv_features, project, vision_backward, vision_forward_cached, VisionBackward, VisionParams};
pub use image::{crop_and_resize, BoundingBox, Image, IMAGE_SIZE};
pub use localize::{extract_box, localize, saliency_map, LocalizeConfig, Localization};
pub use predict::{image_forward, vision_predict, vision_predict_detailed, VisionPrediction};
pub use scores::ClassScores;
