//! Two-stage denoiser: a noise estimator followed by a wavelet-pyramid
//! reconstructor built from EAM+ blocks.

mod config;
mod eam;
mod model;

pub use config::ModelConfig;
pub use eam::EamPlusParams;
pub use model::{
    aligned_extent, crop, denoise_image, model_backward, reflect_pad, stage1_backward,
    stage1_estimate, stage2_backward, stage2_reconstruct, EstimatorParams, ModelWeights,
    ReconstructorParams, ESTIMATOR_CONVS,
};


