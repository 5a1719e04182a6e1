//! Exercise classification from body-landmark time series.
//!
//! The pipeline is: landmark frames (33 points × `[x, y, z, visibility]`)
//! are sanitized and padded into fixed-length [`PoseSequence`]s, fed through a
//! masked two-layer LSTM with a softmax head, trained with BPTT + RMSProp, and
//! served over a sliding window of the most recent frames.
//!
//! Padding frames are skipped by the recurrent layers: hidden and cell state
//! pass through them unchanged, so appending padding never alters the output.

pub mod error;
pub mod evaluation;
pub mod landmarks;
pub mod model;
pub mod real;
pub mod serving;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};

pub use evaluation::{evaluate, render_report, ConfusionMatrix, EvalReport, ReportFormat};
pub use landmarks::{
    flatten_frame, pad_or_truncate, sanitize_frame, ClassRegistry, ExerciseLabel, LandmarkFrame,
    LandmarkPoint, PoseSequence, FEATURES_PER_POINT, FRAME_FEATURES, NUM_LANDMARKS,
};
pub use model::{
    forward, forward_features, init_params, param_count, softmax, ClassProbabilities,
    FeatureSequence, LayerParams, Mode, ModelConfig, ModelParams,
};
pub use real::Real;
pub use serving::{ClassificationResult, Inbound, Outbound, Session};
pub use synthgen::{generate, SynthSpec};
pub use training::{train, TrainConfig, TrainHistory};
