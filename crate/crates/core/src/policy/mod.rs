//! Trajectory-prediction backends behind one output contract: a per-frame
//! gradient-descent refiner over the raw variables and a small trainable head
//! over per-cell depth features. Also detection decoding, sample labels,
//! detection losses and the training-state sampler.

pub mod camera;
pub mod dataset;
pub use dataset::{generate_frames, load_frames, save_frames, DatasetSpec};
pub mod detection;
pub mod features;
pub mod frame;
pub mod head;
pub mod refine;
pub mod sampler;
pub mod training;

pub use crate::costs::SampleLabel;
pub use camera::{camera_from_optical, CameraModel, Intrinsics, Projection};
pub use detection::{
    assign_samples, bce_with_logit, decode_target, detection_loss_grads, detection_losses, sigmoid, visible_cell,
    DecodedTarget,
};
pub use features::{extract_features, FeatureConfig, FrustumFeatures, FEATURE_DIM};
pub use frame::{tracking_goal_point, FrameContext, FrameSetup};
pub use head::{HeadGradient, Optimizer, OptimizerConfig, OptimizerKind, PolicyHead};
pub use refine::{refine, Candidate, RefinerConfig};
pub use crate::tracker::{select, SelectionResult};
pub use sampler::{sample_training_state, StateSampler};
pub use training::{
    backward_and_step, batch_gradient, dataset_loss, frame_loss, head_frame_loss, refiner_selected_cost, selected_cost, smoothed, train,
    PreparedFrame, TrainingConfig,
    TrainingEnv, TrainingFrame,
};
