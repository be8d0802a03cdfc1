//! Latency-aware detection evaluation.
//!
//! Replays annotated clips through a simulated detector with finite
//! processing time, optionally forecasts its stale outputs forward, and
//! scores what was visible at each frame with COCO-style AP. Also provides
//! the trend-aware loss weighting and triplet sampling used to train
//! forecasting detectors.

pub mod datamodel;
pub mod error;
pub mod forecast;
pub mod geometry;
pub mod metrics;
pub mod stream_sim;
pub mod synth;
pub mod tal;

pub use datamodel::{
    ClipStream, Dataset, Detection, DetectionSet, FrameAnnotations, GtBox, Triplet, TripletSet,
};
pub use error::{Error, Result};
pub use forecast::{Forecaster, ForecasterKind, Horizon, KalmanConfig};
pub use geometry::{iou, AreaBucket, BBox};
pub use metrics::{ColdStart, EvalReport, StreamEvalOptions, VelocityEvalReport};
pub use stream_sim::{EmissionEntry, EmissionLog, LatencyModel};
pub use tal::TrendConfig;
