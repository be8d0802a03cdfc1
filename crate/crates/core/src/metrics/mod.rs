//! Offline AP, streaming AP and velocity-averaged streaming AP.

mod ap;
mod streaming;

pub use ap::{
    evaluate_frames, iou_thresholds, EvalFrame, EvalReport, MAX_DETS_PER_FRAME, NUM_IOU_THRESHOLDS,
    NUM_RECALL_POINTS,
};
pub use streaming::{
    average_precision, evaluate_streaming, evaluate_vsap, mean_defined, run_streaming, static_sap,
    ColdStart, StreamEvalOptions, StreamRun, VelocityEvalReport,
};
