//! Box forecasting baselines applied to detector output before evaluation.

mod assignment;
mod kalman;

use serde::{Deserialize, Serialize};

use crate::datamodel::Detection;
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use assignment::{associate, associate_boxes, max_weight_assignment, Association};
pub use kalman::{
    forecast_stream, kf_predict, kf_update, KalmanConfig, StateCovariance, StateVector, TrackState,
    Tracker,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    /// Pass detections through untouched.
    None,
    /// Two-frame linear extrapolation.
    ConstantVelocity,
    Kalman,
}

impl ForecasterKind {
    pub const ALL: [ForecasterKind; 3] = [
        ForecasterKind::None,
        ForecasterKind::ConstantVelocity,
        ForecasterKind::Kalman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForecasterKind::None => "none",
            ForecasterKind::ConstantVelocity => "cv",
            ForecasterKind::Kalman => "kalman",
        }
    }

    /// Per-frame processing overhead charged to each emission, in seconds.
    pub fn default_extra_latency(self) -> f64 {
        match self {
            ForecasterKind::None => 0.0,
            ForecasterKind::ConstantVelocity => 0.0005,
            ForecasterKind::Kalman => 0.0031,
        }
    }
}

impl std::str::FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "identity" => Ok(ForecasterKind::None),
            "cv" | "constant_velocity" => Ok(ForecasterKind::ConstantVelocity),
            "kalman" | "kf" => Ok(ForecasterKind::Kalman),
            other => Err(Error::config(format!("unknown forecaster '{other}'"))),
        }
    }
}

/// How far ahead a forecaster extrapolates each emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Up to the first query time at which the emission becomes visible.
    Auto,
    /// A fixed number of frames past the source frame.
    Frames(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub kind: ForecasterKind,
    pub horizon: Horizon,
    /// Seconds added to every emission's finish time.
    pub extra_latency: f64,
    pub kalman: KalmanConfig,
}

impl Forecaster {
    pub fn new(kind: ForecasterKind) -> Self {
        Forecaster {
            kind,
            horizon: Horizon::Auto,
            extra_latency: kind.default_extra_latency(),
            kalman: KalmanConfig::default(),
        }
    }

    pub fn identity() -> Self {
        Self::new(ForecasterKind::None)
    }

    pub fn constant_velocity() -> Self {
        Self::new(ForecasterKind::ConstantVelocity)
    }

    pub fn kalman(cfg: KalmanConfig) -> Self {
        Forecaster {
            kalman: cfg,
            ..Self::new(ForecasterKind::Kalman)
        }
    }

    pub fn with_horizon(mut self, horizon: Horizon) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_extra_latency(mut self, seconds: f64) -> Self {
        self.extra_latency = seconds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extra_latency.is_finite() && self.extra_latency >= 0.0) {
            return Err(Error::config(format!(
                "forecaster extra latency must be non-negative, got {}",
                self.extra_latency
            )));
        }
        self.kalman.validate()
    }
}

impl Default for Forecaster {
    fn default() -> Self {
        Self::identity()
    }
}

/// Extrapolates each current box matched to a previous one by
/// `horizon * (cur - prev)` on every coordinate. `horizon` is measured in
/// units of the prev → cur interval. Unmatched current boxes pass through.
pub fn constant_velocity_forecast(
    prev: &[Detection],
    cur: &[Detection],
    horizon: f64,
    gate: f64,
) -> Vec<Detection> {
    let left: Vec<_> = prev.iter().map(|d| (d.bbox, d.category_id)).collect();
    let right: Vec<_> = cur.iter().map(|d| (d.bbox, d.category_id)).collect();
    let assoc = associate_boxes(&left, &right, gate);

    let mut out = cur.to_vec();
    for (pi, ci) in assoc.pairs {
        let p = prev[pi].bbox;
        let c = cur[ci].bbox;
        out[ci].bbox = BBox::new(
            c.x + horizon * (c.x - p.x),
            c.y + horizon * (c.y - p.y),
            (c.w + horizon * (c.w - p.w)).max(0.0),
            (c.h + horizon * (c.h - p.h)).max(0.0),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: u64, x: f64) -> Detection {
        Detection {
            id,
            frame_id: 0,
            bbox: BBox::new(x, 10.0, 40.0, 40.0),
            category_id: 1,
            score: 0.8,
        }
    }

    #[test]
    fn zero_velocity_is_identity() {
        let boxes = vec![det(1, 0.0), det(2, 200.0)];
        for h in [0.0, 1.0, 5.0] {
            assert_eq!(constant_velocity_forecast(&boxes, &boxes, h, 0.3), boxes);
        }
    }

    #[test]
    fn extrapolates_matched_boxes() {
        let out = constant_velocity_forecast(&[det(1, 100.0)], &[det(2, 110.0)], 1.0, 0.3);
        assert_eq!(out[0].bbox.x, 120.0);
        assert_eq!(out[0].id, 2);
        let out = constant_velocity_forecast(&[det(1, 100.0)], &[det(2, 110.0)], 0.5, 0.3);
        assert_eq!(out[0].bbox.x, 115.0);
    }

    #[test]
    fn unmatched_passes_through() {
        let cur = vec![det(2, 110.0), det(3, 500.0)];
        let out = constant_velocity_forecast(&[det(1, 100.0)], &cur, 1.0, 0.3);
        assert_eq!(out[1], cur[1]);
        assert_eq!(constant_velocity_forecast(&[], &cur, 1.0, 0.3), cur);
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            "cv".parse::<ForecasterKind>().unwrap(),
            ForecasterKind::ConstantVelocity
        );
        assert_eq!(
            "kalman".parse::<ForecasterKind>().unwrap(),
            ForecasterKind::Kalman
        );
        assert_eq!(
            "none".parse::<ForecasterKind>().unwrap(),
            ForecasterKind::None
        );
        assert!("lstm".parse::<ForecasterKind>().is_err());
    }
}
