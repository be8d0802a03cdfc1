//! Discrete-event replay of a fixed-rate camera feeding a single detector.
//!
//! Frame `i` of a clip arrives at `i / fps`. The detector handles one frame
//! at a time; whenever it goes idle it takes the newest frame that has
//! arrived and not been processed, and every older pending frame is dropped
//! for good. If nothing is pending it waits for the next arrival.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClipId, ClipStream, Detection, DetectionSet, FrameId};
use crate::error::{Error, Result};
use crate::forecast::{constant_velocity_forecast, Forecaster, ForecasterKind, Horizon, Tracker};

/// Slack used for every time comparison, in seconds. Timestamps are
/// `index / fps` while finish times are sums of latencies, so exact
/// boundary hits would otherwise depend on rounding.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant {
        seconds: f64,
    },
    PerFrame {
        seconds: BTreeMap<FrameId, f64>,
    },
    /// Gaussian latency clamped below at `floor`. Each frame's draw depends
    /// only on `(seed, frame_id)`, not on which other frames were processed.
    Stochastic {
        mean: f64,
        stddev: f64,
        seed: u64,
        floor: f64,
    },
}

impl LatencyModel {
    pub fn constant(seconds: f64) -> Self {
        LatencyModel::Constant { seconds }
    }

    pub fn constant_ms(ms: f64) -> Self {
        LatencyModel::Constant {
            seconds: ms / 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match self {
            LatencyModel::Constant { seconds } if !ok(*seconds) => {
                Err(Error::config(format!("latency must be non-negative, got {seconds}")))
            }
            LatencyModel::PerFrame { seconds } => match seconds.iter().find(|(_, v)| !ok(**v)) {
                Some((f, v)) => Err(Error::config(format!("frame {f}: latency {v} is not non-negative"))),
                None => Ok(()),
            },
            LatencyModel::Stochastic {
                mean,
                stddev,
                floor,
                ..
            } if !(mean.is_finite() && ok(*stddev) && ok(*floor)) => Err(Error::config(format!(
                "stochastic latency needs finite mean and non-negative stddev/floor, got mean {mean}, stddev {stddev}, floor {floor}"
            ))),
            _ => Ok(()),
        }
    }

    /// Processing time of `frame_id`, in seconds.
    pub fn latency_of(&self, frame_id: FrameId) -> Result<f64> {
        match self {
            LatencyModel::Constant { seconds } => Ok(*seconds),
            LatencyModel::PerFrame { seconds } => {
                seconds.get(&frame_id).copied().ok_or_else(|| {
                    Error::Simulation(format!("latency table has no entry for frame {frame_id}"))
                })
            }
            LatencyModel::Stochastic {
                mean,
                stddev,
                seed,
                floor,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(frame_id);
                let normal = Normal::new(*mean, *stddev)
                    .map_err(|e| Error::config(format!("stochastic latency: {e}")))?;
                Ok(normal.sample(&mut rng).max(*floor))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionEntry {
    pub source_frame_id: FrameId,
    pub source_index: usize,
    pub start_time: f64,
    pub finish_time: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionLog {
    pub clip_id: ClipId,
    pub fps: f64,
    pub entries: Vec<EmissionEntry>,
}

impl EmissionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the single-detector invariants: no overlap between
    /// consecutive jobs and no job starting before its frame exists.
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.entries.iter().enumerate() {
            let arrival = e.source_index as f64 / self.fps;
            if e.start_time + TIME_EPS < arrival {
                return Err(Error::validation(format!(
                    "entry {k} starts at {} before frame {} arrives at {arrival}",
                    e.start_time, e.source_frame_id
                )));
            }
            if e.finish_time + TIME_EPS < e.start_time {
                return Err(Error::validation(format!(
                    "entry {k} finishes before it starts"
                )));
            }
            if k > 0 && e.start_time + TIME_EPS < self.entries[k - 1].finish_time {
                return Err(Error::validation(format!(
                    "entry {k} starts before entry {} finishes",
                    k - 1
                )));
            }
        }
        Ok(())
    }
}

/// Replays `clip` through a detector whose outputs are `detections` and
/// whose processing time per frame is given by `latency`.
pub fn simulate(
    clip: &ClipStream,
    detections: &DetectionSet,
    latency: &LatencyModel,
) -> Result<EmissionLog> {
    latency.validate()?;
    let frames = &clip.frames;
    let n = frames.len();
    let mut entries = Vec::new();
    let mut now = 0.0f64;
    let mut next_unseen = 0usize;

    while next_unseen < n {
        let arrived = frames[next_unseen..]
            .iter()
            .take_while(|f| f.timestamp <= now + TIME_EPS)
            .count();
        let Some(k) = (next_unseen + arrived)
            .checked_sub(1)
            .filter(|_| arrived > 0)
        else {
            now = frames[next_unseen].timestamp;
            continue;
        };
        let frame = &frames[k];
        let dets = detections.get(frame.frame_id).ok_or_else(|| {
            Error::Simulation(format!(
                "no detections available for frame {}",
                frame.frame_id
            ))
        })?;
        let start = now.max(frame.timestamp);
        let finish = start + latency.latency_of(frame.frame_id)?;
        entries.push(EmissionEntry {
            source_frame_id: frame.frame_id,
            source_index: k,
            start_time: start,
            finish_time: finish,
            detections: dets.to_vec(),
        });
        next_unseen = k + 1;
        now = finish;
    }

    Ok(EmissionLog {
        clip_id: clip.clip_id,
        fps: clip.fps,
        entries,
    })
}

/// The latest emission whose finish time is at or before `t` (an output
/// finishing exactly at `t` is visible at `t`).
pub fn query_prediction(log: &EmissionLog, t: f64) -> Option<&EmissionEntry> {
    let visible = log
        .entries
        .partition_point(|e| e.finish_time <= t + TIME_EPS);
    visible.checked_sub(1).map(|i| &log.entries[i])
}

/// Frames between an emission's source frame and the first query time at
/// which it is visible.
fn auto_horizon(entry: &EmissionEntry, fps: f64) -> u32 {
    let first_query = (entry.finish_time * fps - TIME_EPS * fps).ceil().max(0.0) as usize;
    first_query.saturating_sub(entry.source_index) as u32
}

/// Rewrites each emission with the forecaster's extrapolation toward the
/// time it will be read, and charges the forecaster's overhead to its
/// finish time.
pub fn apply_forecaster(
    log: &EmissionLog,
    clip: &ClipStream,
    forecaster: &Forecaster,
) -> Result<EmissionLog> {
    forecaster.validate()?;
    if log.clip_id != clip.clip_id {
        return Err(Error::validation(format!(
            "emission log for clip {} applied to clip {}",
            log.clip_id, clip.clip_id
        )));
    }
    let mut out = log.clone();
    for e in &mut out.entries {
        e.finish_time += forecaster.extra_latency;
    }
    let horizon = |e: &EmissionEntry| match forecaster.horizon {
        Horizon::Auto => auto_horizon(e, clip.fps),
        Horizon::Frames(h) => h,
    };

    match forecaster.kind {
        ForecasterKind::None => {}
        ForecasterKind::ConstantVelocity => {
            for k in 1..out.entries.len() {
                let prev = &log.entries[k - 1];
                let cur = &log.entries[k];
                let gap = (cur.source_index - prev.source_index).max(1) as f64;
                let h = horizon(&out.entries[k]) as f64 / gap;
                out.entries[k].detections = constant_velocity_forecast(
                    &prev.detections,
                    &cur.detections,
                    h,
                    forecaster.kalman.iou_gate,
                );
            }
        }
        ForecasterKind::Kalman => {
            let mut tracker = Tracker::new(forecaster.kalman)?;
            for e in &mut out.entries {
                tracker.step(e.source_index, &e.detections)?;
                e.detections = tracker.forecast(horizon(e), e.source_frame_id);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::GtBox;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn clip(n: usize) -> ClipStream {
        ClipStream::from_frames(0, 30.0, (0..n as u64).map(|i| (i, vec![]))).unwrap()
    }

    fn tagged_detections(n: usize) -> DetectionSet {
        (0..n as u64)
            .map(|i| Detection {
                id: i + 1,
                frame_id: i,
                bbox: BBox::new(i as f64, 0.0, 10.0, 10.0),
                category_id: 1,
                score: 0.5,
            })
            .collect()
    }

    fn processed(log: &EmissionLog) -> Vec<u64> {
        log.entries.iter().map(|e| e.source_frame_id).collect()
    }

    #[test]
    fn real_time_processes_every_frame() {
        let c = clip(6);
        let log = simulate(&c, &tagged_detections(6), &LatencyModel::constant_ms(20.0)).unwrap();
        assert_eq!(processed(&log), vec![0, 1, 2, 3, 4, 5]);
        for (i, e) in log.entries.iter().enumerate() {
            assert_eq!(e.start_time, c.frames[i].timestamp);
        }
        // each result is current at the next frame
        let at = query_prediction(&log, c.frames[3].timestamp).unwrap();
        assert_eq!(at.source_frame_id, 2);
        log.validate().unwrap();
    }

    #[test]
    fn zero_latency_finishes_on_arrival() {
        let c = clip(4);
        let log = simulate(&c, &tagged_detections(4), &LatencyModel::constant(0.0)).unwrap();
        assert_eq!(log.len(), 4);
        for (e, f) in log.entries.iter().zip(&c.frames) {
            assert_eq!(e.finish_time, f.timestamp);
            assert_eq!(
                query_prediction(&log, f.timestamp).unwrap().source_frame_id,
                f.frame_id
            );
        }
    }

    #[test]
    fn slow_detector_skips_stale_frames() {
        let c = clip(5);
        let log = simulate(&c, &tagged_detections(5), &LatencyModel::constant_ms(50.0)).unwrap();
        assert_eq!(processed(&log), vec![0, 1, 3, 4]);
        // frame 1's output is what the world sees at frame 3; frame 2 never runs
        assert_eq!(
            query_prediction(&log, 3.0 / 30.0).unwrap().source_frame_id,
            1
        );
        assert_eq!(
            query_prediction(&log, 2.0 / 30.0).unwrap().source_frame_id,
            0
        );
        log.validate().unwrap();
    }

    #[test]
    fn cold_start_and_boundary() {
        let c = clip(5);
        let log = simulate(&c, &tagged_detections(5), &LatencyModel::constant_ms(50.0)).unwrap();
        assert!(query_prediction(&log, 0.0).is_none());
        assert!(query_prediction(&log, 0.049).is_none());
        assert_eq!(query_prediction(&log, 0.05).unwrap().source_frame_id, 0);
    }

    #[test]
    fn missing_detections_is_an_error() {
        let c = clip(3);
        let mut dets = tagged_detections(3);
        dets = dets.iter().filter(|d| d.frame_id != 1).copied().collect();
        match simulate(&c, &dets, &LatencyModel::constant_ms(10.0)) {
            Err(Error::Simulation(msg)) => assert!(msg.contains("frame 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn per_frame_and_stochastic_latency() {
        let c = clip(4);
        let table = LatencyModel::PerFrame {
            seconds: [(0, 0.01), (1, 0.07), (2, 0.01), (3, 0.01)]
                .into_iter()
                .collect(),
        };
        let log = simulate(&c, &tagged_detections(4), &table).unwrap();
        // frame 1 runs 1/30 .. 1/30 + 0.07 ≈ 0.103, by then frame 3 has arrived
        assert_eq!(processed(&log), vec![0, 1, 3]);

        let partial = LatencyModel::PerFrame {
            seconds: [(0, 0.01)].into_iter().collect(),
        };
        assert!(simulate(&c, &tagged_detections(4), &partial).is_err());

        let noisy = LatencyModel::Stochastic {
            mean: 0.04,
            stddev: 0.02,
            seed: 9,
            floor: 0.005,
        };
        let a = simulate(&c, &tagged_detections(4), &noisy).unwrap();
        let b = simulate(&c, &tagged_detections(4), &noisy).unwrap();
        assert_eq!(a, b);
        for e in &a.entries {
            assert!(e.finish_time - e.start_time >= 0.005);
        }
        assert!(LatencyModel::constant(-1.0).validate().is_err());
    }

    #[test]
    fn identity_forecaster_is_noop() {
        let c = clip(5);
        let log = simulate(&c, &tagged_detections(5), &LatencyModel::constant_ms(20.0)).unwrap();
        let out = apply_forecaster(&log, &c, &Forecaster::identity()).unwrap();
        assert_eq!(out, log);
    }

    #[test]
    fn forecaster_latency_is_charged() {
        let c = clip(5);
        let log = simulate(&c, &tagged_detections(5), &LatencyModel::constant_ms(20.0)).unwrap();
        let out = apply_forecaster(&log, &c, &Forecaster::kalman(Default::default())).unwrap();
        for (a, b) in log.entries.iter().zip(&out.entries) {
            assert!((b.finish_time - a.finish_time - 0.0031).abs() < 1e-12);
        }
    }

    fn translating(n: usize, step: f64) -> (ClipStream, DetectionSet) {
        let boxes: Vec<BBox> = (0..n)
            .map(|i| BBox::new(50.0 + step * i as f64, 40.0, 60.0, 60.0))
            .collect();
        let c = ClipStream::from_frames(
            0,
            30.0,
            boxes
                .iter()
                .enumerate()
                .map(|(i, b)| (i as u64, vec![GtBox::new(*b, 1)])),
        )
        .unwrap();
        let d = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Detection {
                id: i as u64 + 1,
                frame_id: i as u64,
                bbox: *b,
                category_id: 1,
                score: 0.9,
            })
            .collect();
        (c, d)
    }

    #[test]
    fn constant_velocity_shifts_toward_query() {
        let (c, d) = translating(6, 10.0);
        let log = simulate(&c, &d, &LatencyModel::constant_ms(20.0)).unwrap();
        let out = apply_forecaster(&log, &c, &Forecaster::constant_velocity()).unwrap();
        assert_eq!(out.entries[0].detections, log.entries[0].detections);
        for k in 1..out.len() {
            let before = log.entries[k].detections[0].bbox.x;
            let after = out.entries[k].detections[0].bbox.x;
            assert!(
                (after - before - 10.0).abs() < 1e-9,
                "entry {k}: {before} -> {after}"
            );
        }
    }

    #[test]
    fn horizon_spans_skipped_frames() {
        let (c, d) = translating(8, 4.0);
        // 50 ms: frame k is read two frames later in some cases
        let log = simulate(&c, &d, &LatencyModel::constant_ms(50.0)).unwrap();
        let out = apply_forecaster(
            &log,
            &c,
            &Forecaster::constant_velocity().with_extra_latency(0.0),
        )
        .unwrap();
        for k in 1..out.len() {
            let e = &out.entries[k];
            let read_at = (e.finish_time * 30.0 - 1e-6).ceil() as usize;
            let want = 50.0 + 4.0 * read_at as f64;
            assert!((e.detections[0].bbox.x - want).abs() < 1e-9, "entry {k}");
        }
    }

    proptest! {
        #[test]
        fn scheduling_invariants(n in 1usize..60, latency_ms in 0.0..120.0f64) {
            let c = clip(n);
            let log = simulate(&c, &tagged_detections(n), &LatencyModel::constant_ms(latency_ms)).unwrap();
            prop_assert!(log.validate().is_ok());
            // the newest frame is always processed
            prop_assert_eq!(log.entries.last().unwrap().source_index, n - 1);
            if latency_ms < 1000.0 / 30.0 {
                prop_assert_eq!(log.len(), n);
            }
            if latency_ms > 1000.0 / 30.0 && latency_ms < 2000.0 / 30.0 {
                // never two skipped frames in a row
                prop_assert!(log.len() >= n.div_ceil(2));
                for w in log.entries.windows(2) {
                    prop_assert!(w[1].source_index - w[0].source_index <= 2);
                }
            }
            let mut last = 0;
            for q in 0..n {
                if let Some(e) = query_prediction(&log, c.frames[q].timestamp) {
                    prop_assert!(e.source_frame_id >= last);
                    last = e.source_frame_id;
                }
            }
        }
    }
}
