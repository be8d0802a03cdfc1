//! Clips, frames, ground truth and detections.

mod coco;
mod triplet;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use coco::{
    load_dataset, load_detections, save_dataset, save_detections, Manifest, ManifestClip,
};
pub use triplet::{
    build_triplets, resample_clip, sample_mixed_velocity, triplet_count, MixedVelocitySampler,
    Triplet, TripletSet,
};

pub type FrameId = u64;
pub type ClipId = u64;
pub type CategoryId = u64;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

/// One ground-truth object on a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub category_id: CategoryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default)]
    pub iscrowd: bool,
}

impl GtBox {
    pub fn new(bbox: BBox, category_id: CategoryId) -> Self {
        GtBox {
            bbox,
            category_id,
            track_id: None,
            iscrowd: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub frame_id: FrameId,
    pub clip_id: ClipId,
    pub index_in_clip: usize,
    /// Seconds from the start of the clip (`index_in_clip / fps`).
    pub timestamp: f64,
    pub boxes: Vec<GtBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipStream {
    pub clip_id: ClipId,
    pub fps: f64,
    pub frames: Vec<FrameAnnotations>,
}

impl ClipStream {
    /// Builds a clip from per-frame `(frame_id, boxes)`, deriving indices and
    /// timestamps from position.
    pub fn from_frames(
        clip_id: ClipId,
        fps: f64,
        frames: impl IntoIterator<Item = (FrameId, Vec<GtBox>)>,
    ) -> Result<Self> {
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(index, (frame_id, boxes))| FrameAnnotations {
                frame_id,
                clip_id,
                index_in_clip: index,
                timestamp: index as f64 / fps,
                boxes,
            })
            .collect();
        let clip = ClipStream {
            clip_id,
            fps,
            frames,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_interval(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn timestamp_of(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation(format!(
                "clip {}: fps must be positive, got {}",
                self.clip_id, self.fps
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::validation(format!(
                "clip {} has no frames",
                self.clip_id
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index_in_clip != i {
                return Err(Error::validation(format!(
                    "clip {}: frame {} has index {} but sits at position {i}; indices must be contiguous from 0",
                    self.clip_id, f.frame_id, f.index_in_clip
                )));
            }
            if f.clip_id != self.clip_id {
                return Err(Error::validation(format!(
                    "frame {} claims clip {} but is stored in clip {}",
                    f.frame_id, f.clip_id, self.clip_id
                )));
            }
            if f.timestamp != self.timestamp_of(i) {
                return Err(Error::validation(format!(
                    "frame {}: timestamp {} does not equal index/fps",
                    f.frame_id, f.timestamp
                )));
            }
            if let Some(b) = f.boxes.iter().find(|b| !b.bbox.is_valid()) {
                return Err(Error::validation(format!(
                    "frame {}: invalid box {:?}",
                    f.frame_id, b.bbox
                )));
            }
        }
        Ok(())
    }
}

/// A loaded dataset: category table plus clips in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub fps: f64,
    pub categories: Vec<Category>,
    pub clips: Vec<ClipStream>,
}

impl Dataset {
    pub fn num_frames(&self) -> usize {
        self.clips.iter().map(ClipStream::len).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameAnnotations> {
        self.clips.iter().flat_map(|c| c.frames.iter())
    }

    pub fn clip(&self, clip_id: ClipId) -> Option<&ClipStream> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn category_ids(&self) -> BTreeSet<CategoryId> {
        self.categories.iter().map(|c| c.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cats = self.category_ids();
        if cats.len() != self.categories.len() {
            return Err(Error::validation("duplicate category ids"));
        }
        let mut seen = BTreeSet::new();
        let mut clip_ids = BTreeSet::new();
        for clip in &self.clips {
            if !clip_ids.insert(clip.clip_id) {
                return Err(Error::validation(format!(
                    "duplicate clip id {}",
                    clip.clip_id
                )));
            }
            clip.validate()?;
            if clip.fps != self.fps {
                return Err(Error::validation(format!(
                    "clip {} fps {} differs from dataset fps {}",
                    clip.clip_id, clip.fps, self.fps
                )));
            }
            for f in &clip.frames {
                if !seen.insert(f.frame_id) {
                    return Err(Error::validation(format!(
                        "duplicate frame id {}",
                        f.frame_id
                    )));
                }
                if let Some(b) = f.boxes.iter().find(|b| !cats.contains(&b.category_id)) {
                    return Err(Error::validation(format!(
                        "frame {}: category {} not in category table",
                        f.frame_id, b.category_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Unique per detection set; breaks score ties deterministically.
    pub id: u64,
    pub frame_id: FrameId,
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub score: f64,
}

/// Detector output grouped by the frame it was computed on.
///
/// A frame present with an empty list means the detector ran and found
/// nothing; an absent frame means no output is available for it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    by_frame: BTreeMap<FrameId, Vec<Detection>>,
}

impl DetectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `frame_id` as covered even if it ends up with no detections.
    pub fn cover(&mut self, frame_id: FrameId) {
        self.by_frame.entry(frame_id).or_default();
    }

    pub fn push(&mut self, det: Detection) {
        self.by_frame.entry(det.frame_id).or_default().push(det);
    }

    pub fn insert_frame(&mut self, frame_id: FrameId, dets: Vec<Detection>) {
        self.by_frame.insert(frame_id, dets);
    }

    pub fn get(&self, frame_id: FrameId) -> Option<&[Detection]> {
        self.by_frame.get(&frame_id).map(Vec::as_slice)
    }

    pub fn frames(&self) -> impl Iterator<Item = (FrameId, &[Detection])> {
        self.by_frame.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn num_frames(&self) -> usize {
        self.by_frame.len()
    }

    /// Total number of detections over all frames.
    pub fn len(&self) -> usize {
        self.by_frame.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.by_frame.values().flatten()
    }
}

impl FromIterator<Detection> for DetectionSet {
    fn from_iter<T: IntoIterator<Item = Detection>>(iter: T) -> Self {
        let mut set = DetectionSet::new();
        for d in iter {
            set.push(d);
        }
        set
    }
}

/// Perfect detections: every ground-truth box with score 1.
pub fn detections_from_ground_truth(dataset: &Dataset) -> DetectionSet {
    let mut set = DetectionSet::new();
    let mut next_id = 1;
    for f in dataset.frames() {
        set.cover(f.frame_id);
        for b in &f.boxes {
            set.push(Detection {
                id: next_id,
                frame_id: f.frame_id,
                bbox: b.bbox,
                category_id: b.category_id,
                score: 1.0,
            });
            next_id += 1;
        }
    }
    set
}
