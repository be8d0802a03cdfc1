//! Streaming evaluation: each ground-truth frame is scored against whatever
//! the detector (plus forecaster) had published when that frame arrived.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::{evaluate_frames, EvalFrame, EvalReport};
use crate::datamodel::{
    resample_clip, triplet_count, ClipStream, Detection, DetectionSet, FrameId,
};
use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::stream_sim::{
    apply_forecaster, query_prediction, simulate, EmissionLog, LatencyModel, TIME_EPS,
};

/// What to do with query times that precede the first emission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    /// Leave them out of the score and count them separately.
    #[default]
    Exclude,
    /// Score them against an empty prediction.
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvalOptions {
    pub cold_start: ColdStart,
}

/// Offline AP: every frame against its own detections.
pub fn average_precision(clips: &[ClipStream], detections: &DetectionSet) -> Result<EvalReport> {
    let known: BTreeSet<FrameId> = clips
        .iter()
        .flat_map(|c| c.frames.iter().map(|f| f.frame_id))
        .collect();
    if let Some((f, _)) = detections.frames().find(|(f, _)| !known.contains(f)) {
        return Err(Error::Reference(format!(
            "detections reference frame {f}, which has no ground truth"
        )));
    }
    let pairs: Vec<EvalFrame<'_>> = clips
        .iter()
        .flat_map(|c| c.frames.iter())
        .map(|f| EvalFrame {
            gt: &f.boxes,
            detections: detections.get(f.frame_id).unwrap_or(&[]),
        })
        .collect();
    Ok(evaluate_frames(&pairs))
}

/// Scores each clip's frames against the matching emission log.
pub fn evaluate_streaming(
    clips: &[ClipStream],
    logs: &[EmissionLog],
    opts: StreamEvalOptions,
) -> Result<EvalReport> {
    if clips.len() != logs.len() {
        return Err(Error::validation(format!(
            "{} clips but {} emission logs",
            clips.len(),
            logs.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut cold = 0;
    for (clip, log) in clips.iter().zip(logs) {
        if clip.clip_id != log.clip_id {
            return Err(Error::validation(format!(
                "clip {} paired with the emission log of clip {}",
                clip.clip_id, log.clip_id
            )));
        }
        for f in &clip.frames {
            match query_prediction(log, f.timestamp) {
                Some(e) => pairs.push(EvalFrame {
                    gt: &f.boxes,
                    detections: &e.detections,
                }),
                None => {
                    cold += 1;
                    if opts.cold_start == ColdStart::Empty {
                        pairs.push(EvalFrame {
                            gt: &f.boxes,
                            detections: &[],
                        });
                    }
                }
            }
        }
    }
    let mut report = evaluate_frames(&pairs);
    report.cold_start_frames = cold;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRun {
    pub logs: Vec<EmissionLog>,
    pub report: EvalReport,
}

/// Simulates and forecasts every clip (in parallel), then scores them.
pub fn run_streaming(
    clips: &[ClipStream],
    detections: &DetectionSet,
    latency: &LatencyModel,
    forecaster: &Forecaster,
    opts: StreamEvalOptions,
) -> Result<StreamRun> {
    let logs = clips
        .par_iter()
        .map(|c| {
            simulate(c, detections, latency).and_then(|log| apply_forecaster(&log, c, forecaster))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_streaming(clips, &logs, opts)?;
    Ok(StreamRun { logs, report })
}

/// Streaming AP with no motion: every frame is held still long enough for
/// its own output to appear, then scored against itself.
pub fn static_sap(
    clips: &[ClipStream],
    detections: &DetectionSet,
    latency: &LatencyModel,
    forecaster: &Forecaster,
) -> Result<EvalReport> {
    latency.validate()?;
    forecaster.validate()?;
    let per_clip = clips
        .par_iter()
        .map(|clip| {
            clip.frames
                .iter()
                .map(|f| {
                    let delay = latency.latency_of(f.frame_id)? + forecaster.extra_latency;
                    let copies = ((delay - TIME_EPS) * clip.fps).ceil().max(0.0) as usize + 2;
                    let held = ClipStream::from_frames(
                        clip.clip_id,
                        clip.fps,
                        (0..copies).map(|_| (f.frame_id, f.boxes.clone())),
                    )?;
                    let log = apply_forecaster(
                        &simulate(&held, detections, latency)?,
                        &held,
                        forecaster,
                    )?;
                    let last = held.frames[copies - 1].timestamp;
                    query_prediction(&log, last)
                        .map(|e| e.detections.clone())
                        .ok_or_else(|| {
                            Error::Simulation(format!(
                                "frame {}: no output after holding {copies} frames",
                                f.frame_id
                            ))
                        })
                })
                .collect::<Result<Vec<Vec<Detection>>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<EvalFrame<'_>> = clips
        .iter()
        .zip(&per_clip)
        .flat_map(|(c, preds)| {
            c.frames.iter().zip(preds).map(|(f, p)| EvalFrame {
                gt: &f.boxes,
                detections: p,
            })
        })
        .collect();
    Ok(evaluate_frames(&pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityEvalReport {
    pub velocities: Vec<u32>,
    pub sap_by_velocity: BTreeMap<u32, EvalReport>,
    /// Velocities with no scorable frames; left out of `vsap`.
    pub undefined_velocities: Vec<u32>,
    /// Mean of the defined per-velocity streaming APs.
    pub vsap: Option<f64>,
}

/// Mean over the `Some` entries, `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Streaming AP at each playback speed-up `M` and their mean.
///
/// `M = 0` holds every frame still (see [`static_sap`]). For `M ≥ 1` each
/// clip is subsampled at stride `M` and replayed at the original rate.
/// Clips too short to hold a single `(t-M, t, t+M)` triplet are skipped for
/// that `M`.
pub fn evaluate_vsap(
    clips: &[ClipStream],
    detections: &DetectionSet,
    latency: &LatencyModel,
    forecaster: &Forecaster,
    velocities: &[u32],
    opts: StreamEvalOptions,
) -> Result<VelocityEvalReport> {
    if velocities.is_empty() {
        return Err(Error::config("velocity set is empty"));
    }
    let mut velocities = velocities.to_vec();
    velocities.sort_unstable();
    velocities.dedup();

    let mut sap_by_velocity = BTreeMap::new();
    let mut undefined = Vec::new();
    for &m in &velocities {
        let report = if m == 0 {
            static_sap(clips, detections, latency, forecaster)?
        } else {
            let resampled: Vec<ClipStream> = clips
                .iter()
                .filter(|c| triplet_count(c.len(), m) > 0)
                .map(|c| resample_clip(c, m))
                .collect();
            if resampled.is_empty() {
                log::warn!(
                    "velocity {m}: every clip is shorter than {} frames, skipping",
                    2 * m + 1
                );
                undefined.push(m);
                continue;
            }
            run_streaming(&resampled, detections, latency, forecaster, opts)?.report
        };
        if report.ap.is_none() {
            log::warn!("velocity {m}: no ground truth was scored, skipping");
            undefined.push(m);
        }
        sap_by_velocity.insert(m, report);
    }

    let vsap = mean_defined(sap_by_velocity.values().map(|r| r.ap));
    Ok(VelocityEvalReport {
        velocities,
        sap_by_velocity,
        undefined_velocities: undefined,
        vsap,
    })
}
