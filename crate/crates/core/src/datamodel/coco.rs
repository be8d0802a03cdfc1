//! COCO annotation/result JSON plus the clip manifest that orders images
//! into streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Category, CategoryId, ClipId, ClipStream, Dataset, Detection, DetectionSet, FrameAnnotations,
    FrameId, GtBox, DEFAULT_FPS,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub clips: Vec<ManifestClip>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub clip_id: ClipId,
    /// Image ids in stream order; position is the frame index.
    pub image_ids: Vec<FrameId>,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoImage {
    id: FrameId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_name: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoAnnotation {
    id: u64,
    image_id: FrameId,
    category_id: CategoryId,
    bbox: BBox,
    #[serde(default, skip_deserializing)]
    area: f64,
    #[serde(default, with = "flag")]
    iscrowd: bool,
    #[serde(default, alias = "track", skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: FrameId,
    category_id: CategoryId,
    bbox: BBox,
    score: f64,
}

/// COCO writes `iscrowd` as 0/1; accept bools too.
mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(i64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        Ok(match Flag::deserialize(d)? {
            Flag::Bool(b) => b,
            Flag::Int(i) => i != 0,
        })
    }

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("in-memory values always serialize");
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// serde_json reports 1-based line/column; turn that into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Loads COCO annotations and orders their images into clips using the
/// manifest.
pub fn load_dataset(annotations_path: &Path, manifest_path: &Path) -> Result<Dataset> {
    let coco: CocoFile = read_json(annotations_path)?;
    let manifest: Manifest = read_json(manifest_path)?;
    assemble_dataset(coco, manifest)
}

fn assemble_dataset(coco: CocoFile, manifest: Manifest) -> Result<Dataset> {
    if !(manifest.fps.is_finite() && manifest.fps > 0.0) {
        return Err(Error::validation(format!(
            "manifest fps must be positive, got {}",
            manifest.fps
        )));
    }

    let mut placement: BTreeMap<FrameId, (usize, usize)> = BTreeMap::new();
    for (ci, clip) in manifest.clips.iter().enumerate() {
        if clip.image_ids.is_empty() {
            return Err(Error::validation(format!(
                "manifest clip {} is empty",
                clip.clip_id
            )));
        }
        for (index, &image_id) in clip.image_ids.iter().enumerate() {
            if placement.insert(image_id, (ci, index)).is_some() {
                return Err(Error::validation(format!(
                    "image id {image_id} listed more than once in the manifest"
                )));
            }
        }
    }

    let mut images = BTreeSet::new();
    for img in &coco.images {
        if !images.insert(img.id) {
            return Err(Error::validation(format!("duplicate image id {}", img.id)));
        }
        if !placement.contains_key(&img.id) {
            return Err(Error::Reference(format!(
                "image id {} is in the annotations but not in the manifest",
                img.id
            )));
        }
    }
    if let Some(missing) = placement.keys().find(|id| !images.contains(id)) {
        return Err(Error::Reference(format!(
            "manifest references image id {missing} which the annotations do not define"
        )));
    }

    let categories = coco.categories;
    let category_ids: BTreeSet<_> = categories.iter().map(|c| c.id).collect();

    let mut boxes: BTreeMap<FrameId, Vec<GtBox>> = BTreeMap::new();
    for ann in coco.annotations {
        if !placement.contains_key(&ann.image_id) {
            return Err(Error::Reference(format!(
                "annotation {} refers to image id {} which is not in the manifest",
                ann.id, ann.image_id
            )));
        }
        if !category_ids.contains(&ann.category_id) {
            return Err(Error::validation(format!(
                "annotation {}: unknown category {}",
                ann.id, ann.category_id
            )));
        }
        if !ann.bbox.is_valid() {
            return Err(Error::validation(format!(
                "annotation {}: invalid bbox {:?}",
                ann.id, ann.bbox
            )));
        }
        boxes.entry(ann.image_id).or_default().push(GtBox {
            bbox: ann.bbox,
            category_id: ann.category_id,
            track_id: ann.track_id,
            iscrowd: ann.iscrowd,
        });
    }

    let clips = manifest
        .clips
        .into_iter()
        .map(|mc| {
            let frames = mc
                .image_ids
                .iter()
                .enumerate()
                .map(|(index, id)| FrameAnnotations {
                    frame_id: *id,
                    clip_id: mc.clip_id,
                    index_in_clip: index,
                    timestamp: index as f64 / manifest.fps,
                    boxes: boxes.remove(id).unwrap_or_default(),
                })
                .collect();
            ClipStream {
                clip_id: mc.clip_id,
                fps: manifest.fps,
                frames,
            }
        })
        .collect();

    let dataset = Dataset {
        fps: manifest.fps,
        categories,
        clips,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dataset` as COCO annotations plus a manifest that [`load_dataset`]
/// reads back into an identical value.
pub fn save_dataset(
    dataset: &Dataset,
    annotations_path: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let mut images = Vec::with_capacity(dataset.num_frames());
    let mut annotations = Vec::new();
    for f in dataset.frames() {
        images.push(CocoImage {
            id: f.frame_id,
            file_name: Some(format!("{}/{:06}.jpg", f.clip_id, f.index_in_clip)),
        });
        for b in &f.boxes {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: f.frame_id,
                category_id: b.category_id,
                bbox: b.bbox,
                area: b.bbox.area(),
                iscrowd: b.iscrowd,
                track_id: b.track_id,
            });
        }
    }
    let coco = CocoFile {
        images,
        annotations,
        categories: dataset.categories.clone(),
    };
    let manifest = Manifest {
        fps: dataset.fps,
        clips: dataset
            .clips
            .iter()
            .map(|c| ManifestClip {
                clip_id: c.clip_id,
                image_ids: c.frames.iter().map(|f| f.frame_id).collect(),
            })
            .collect(),
    };
    write_json(annotations_path, &coco)?;
    write_json(manifest_path, &manifest)
}

/// Loads a COCO results file. Every dataset frame is covered in the returned
/// set, so frames without detections map to an empty list.
pub fn load_detections(path: &Path, dataset: &Dataset) -> Result<DetectionSet> {
    let results: Vec<CocoResult> = read_json(path)?;
    detections_from_results(results, dataset)
}

fn detections_from_results(results: Vec<CocoResult>, dataset: &Dataset) -> Result<DetectionSet> {
    let frames: BTreeSet<FrameId> = dataset.frames().map(|f| f.frame_id).collect();
    let categories = dataset.category_ids();

    let mut set = DetectionSet::new();
    for &f in &frames {
        set.cover(f);
    }
    let mut ids = BTreeSet::new();
    for (pos, r) in results.into_iter().enumerate() {
        if !frames.contains(&r.image_id) {
            return Err(Error::Reference(format!(
                "detection #{pos} refers to unknown image id {}",
                r.image_id
            )));
        }
        if !categories.contains(&r.category_id) {
            return Err(Error::validation(format!(
                "detection #{pos}: unknown category {}",
                r.category_id
            )));
        }
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::validation(format!(
                "detection #{pos}: score {} outside [0, 1]",
                r.score
            )));
        }
        if !r.bbox.is_valid() {
            return Err(Error::validation(format!(
                "detection #{pos}: invalid bbox {:?}",
                r.bbox
            )));
        }
        let id = r.id.unwrap_or(pos as u64 + 1);
        if !ids.insert(id) {
            return Err(Error::validation(format!("duplicate detection id {id}")));
        }
        set.push(Detection {
            id,
            frame_id: r.image_id,
            bbox: r.bbox,
            category_id: r.category_id,
            score: r.score,
        });
    }
    Ok(set)
}

pub fn save_detections(detections: &DetectionSet, path: &Path) -> Result<()> {
    let results: Vec<CocoResult> = detections
        .iter()
        .map(|d| CocoResult {
            id: Some(d.id),
            image_id: d.frame_id,
            category_id: d.category_id,
            bbox: d.bbox,
            score: d.score,
        })
        .collect();
    write_json(path, &results)
}
