//! Constant-velocity Kalman filter over `(cx, cy, w, h)` with a small
//! multi-object tracker on top.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::{CategoryId, ClipStream, Detection, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::assignment::associate;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;

/// Smallest eigenvalue tolerated before a covariance is declared non-PSD.
const PSD_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// Per-step process noise variance (pixels² on position and size,
    /// pixels²/frame² on velocities).
    pub process_noise_scale: f64,
    /// Measurement noise variance on each of `cx, cy, w, h`.
    pub measurement_noise_scale: f64,
    /// Velocity variance given to a freshly spawned track.
    pub init_velocity_variance: f64,
    pub iou_gate: f64,
    pub max_age: u32,
    pub min_hits: u32,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
            init_velocity_variance: 10.0,
            iou_gate: 0.3,
            max_age: 3,
            min_hits: 1,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_gate > 0.0 && self.iou_gate < 1.0) {
            return Err(Error::config(format!(
                "iou_gate must lie in (0, 1), got {}",
                self.iou_gate
            )));
        }
        for (name, v) in [
            ("process_noise_scale", self.process_noise_scale),
            ("measurement_noise_scale", self.measurement_noise_scale),
            ("init_velocity_variance", self.init_velocity_variance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// `(cx, cy, w, h, v_cx, v_cy, v_w, v_h)`, velocities in pixels/frame.
    pub mean: StateVector,
    pub covariance: StateCovariance,
    pub category_id: CategoryId,
    pub last_score: f64,
    /// Id of the detection that last updated this track.
    pub last_detection_id: u64,
    /// Frames since the last measurement update.
    pub age: u32,
    pub hit_count: u32,
}

fn measurement_of(b: &BBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.w, b.h)
}

fn transition(steps: u32) -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = steps as f64;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    SMatrix::<f64, 4, 8>::identity()
}

impl TrackState {
    /// A new track sits at the detection with zero velocity. Its position
    /// variance is the measurement noise; velocities start much less certain.
    pub fn spawn(det: &Detection, cfg: &KalmanConfig) -> Self {
        let z = measurement_of(&det.bbox);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let mut diag = StateVector::zeros();
        for i in 0..4 {
            diag[i] = cfg.measurement_noise_scale;
            diag[i + 4] = cfg.init_velocity_variance;
        }
        TrackState {
            mean,
            covariance: StateCovariance::from_diagonal(&diag),
            category_id: det.category_id,
            last_score: det.score,
            last_detection_id: det.id,
            age: 0,
            hit_count: 1,
        }
    }

    /// Current box estimate; negative extents are clamped to zero.
    pub fn bbox(&self) -> BBox {
        let m = &self.mean;
        BBox::from_center(m[0], m[1], m[2].max(0.0), m[3].max(0.0))
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }
}

/// Advances the state `steps` frames under constant velocity, adding
/// process noise once per step.
pub fn kf_predict(track: &TrackState, steps: u32, cfg: &KalmanConfig) -> TrackState {
    if steps == 0 {
        return track.clone();
    }
    let f1 = transition(1);
    let q = StateCovariance::identity() * cfg.process_noise_scale;
    let mut p = track.covariance;
    for _ in 0..steps {
        p = f1 * p * f1.transpose() + q;
    }
    TrackState {
        mean: transition(steps) * track.mean,
        covariance: p,
        age: track.age.saturating_add(steps),
        ..track.clone()
    }
}

/// Measurement update with the Joseph-form covariance.
pub fn kf_update(track: &TrackState, measurement: &BBox, cfg: &KalmanConfig) -> Result<TrackState> {
    if !measurement.is_valid() {
        return Err(Error::validation(format!(
            "invalid measurement {measurement:?}"
        )));
    }
    let h = observation();
    let r = SMatrix::<f64, 4, 4>::identity() * cfg.measurement_noise_scale;
    let p = track.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = match s.try_inverse() {
        Some(inv) => inv,
        None => s
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("innovation covariance: {e}")))?,
    };
    let gain = p * h.transpose() * s_inv;
    let innovation = measurement_of(measurement) - h * track.mean;
    let mean = track.mean + gain * innovation;

    let i_kh = StateCovariance::identity() - gain * h;
    let mut cov = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    cov = (cov + cov.transpose()) * 0.5;

    if !cov.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite state after update".into()));
    }
    let min_eig = cov.symmetric_eigenvalues().min();
    if min_eig < PSD_FLOOR * cov.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "covariance lost positive semi-definiteness (min eigenvalue {min_eig:e})"
        )));
    }

    Ok(TrackState {
        mean,
        covariance: cov,
        age: 0,
        hit_count: track.hit_count + 1,
        ..track.clone()
    })
}

/// Multi-object tracker: predict, associate, update, spawn, retire.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: KalmanConfig,
    tracks: Vec<TrackState>,
    last_index: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: KalmanConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            last_index: None,
        })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Feeds the detections observed at `frame_index`. Indices must not go
    /// backwards; gaps are bridged by a multi-step prediction.
    pub fn step(&mut self, frame_index: usize, detections: &[Detection]) -> Result<()> {
        let steps = match self.last_index {
            Some(last) if frame_index < last => {
                return Err(Error::validation(format!(
                    "tracker fed frame {frame_index} after frame {last}"
                )))
            }
            Some(last) => (frame_index - last) as u32,
            None => 0,
        };
        self.last_index = Some(frame_index);

        let cfg = self.cfg;
        for t in &mut self.tracks {
            *t = kf_predict(t, steps, &cfg);
        }

        let assoc = associate(&self.tracks, detections, cfg.iou_gate);
        for &(ti, di) in &assoc.pairs {
            let det = &detections[di];
            let mut updated = kf_update(&self.tracks[ti], &det.bbox, &cfg)?;
            updated.last_score = det.score;
            updated.last_detection_id = det.id;
            self.tracks[ti] = updated;
        }

        self.tracks.retain(|t| t.age <= cfg.max_age);
        for &di in &assoc.unmatched_right {
            self.tracks.push(TrackState::spawn(&detections[di], &cfg));
        }
        Ok(())
    }

    /// Boxes of the tracks confirmed at the latest step, extrapolated
    /// `horizon` frames ahead. `frame_id` is stamped on the output.
    pub fn forecast(&self, horizon: u32, frame_id: u64) -> Vec<Detection> {
        self.tracks
            .iter()
            .filter(|t| t.age == 0 && t.hit_count >= self.cfg.min_hits)
            .map(|t| {
                let ahead = kf_predict(t, horizon, &self.cfg);
                Detection {
                    id: t.last_detection_id,
                    frame_id,
                    bbox: ahead.bbox(),
                    category_id: t.category_id,
                    score: t.last_score,
                }
            })
            .collect()
    }
}

/// Runs the tracker over every frame of `clip` and emits, per frame, the
/// boxes forecast `horizon` frames ahead.
pub fn forecast_stream(
    detections: &DetectionSet,
    clip: &ClipStream,
    cfg: &KalmanConfig,
    horizon: u32,
) -> Result<DetectionSet> {
    let mut tracker = Tracker::new(*cfg)?;
    let mut out = DetectionSet::new();
    for frame in &clip.frames {
        let dets = detections.get(frame.frame_id).ok_or_else(|| {
            Error::Simulation(format!(
                "no detections available for frame {}",
                frame.frame_id
            ))
        })?;
        tracker.step(frame.index_in_clip, dets)?;
        out.insert_frame(frame.frame_id, tracker.forecast(horizon, frame.frame_id));
    }
    Ok(out)
}
