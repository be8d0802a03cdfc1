//! Synthetic clips with known motion, and a noisy detector over them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Category, CategoryId, ClipId, ClipStream, Dataset, Detection, DetectionSet, FrameId, GtBox,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Boxes smaller than this after clipping to the image are dropped.
const MIN_VISIBLE_AREA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// Box at frame 0 (may lie partly outside the image).
    pub initial: BBox,
    /// Pixels per frame, `(dx, dy)`.
    pub velocity: (f64, f64),
    /// Pixels per frame added to `(w, h)`.
    #[serde(default)]
    pub size_rate: (f64, f64),
    pub category_id: CategoryId,
    /// First frame index at which the object exists.
    #[serde(default)]
    pub spawn: usize,
    /// First frame index at which it is gone.
    #[serde(default)]
    pub despawn: Option<usize>,
}

impl ObjectSpec {
    pub fn new(initial: BBox, velocity: (f64, f64), category_id: CategoryId) -> Self {
        ObjectSpec {
            initial,
            velocity,
            size_rate: (0.0, 0.0),
            category_id,
            spawn: 0,
            despawn: None,
        }
    }

    fn box_at(&self, t: usize, ego: (f64, f64)) -> BBox {
        let t = t as f64;
        BBox::new(
            self.initial.x + t * (self.velocity.0 + ego.0),
            self.initial.y + t * (self.velocity.1 + ego.1),
            (self.initial.w + t * self.size_rate.0).max(0.0),
            (self.initial.h + t * self.size_rate.1).max(0.0),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub clip_id: ClipId,
    /// Frame ids are `frame_id_offset + index`.
    #[serde(default)]
    pub frame_id_offset: FrameId,
    pub image_size: (f64, f64),
    pub fps: f64,
    pub num_frames: usize,
    pub objects: Vec<ObjectSpec>,
    /// Camera motion in pixels per frame, added to every object.
    #[serde(default)]
    pub ego_shift: (f64, f64),
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::config("scene needs at least one frame"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::config(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        let (w, h) = self.image_size;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::config(format!(
                "image size must be positive, got {w}x{h}"
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.initial.is_valid() {
                return Err(Error::config(format!(
                    "object {i}: invalid initial box {:?}",
                    o.initial
                )));
            }
            if o.despawn.is_some_and(|d| d <= o.spawn) {
                return Err(Error::config(format!(
                    "object {i}: despawn must come after spawn"
                )));
            }
        }
        Ok(())
    }
}

/// Renders a scene into ground truth. Object `k` carries track id `k`.
pub fn generate_clip(cfg: &SceneConfig) -> Result<ClipStream> {
    cfg.validate()?;
    let (w, h) = cfg.image_size;
    let frames = (0..cfg.num_frames).map(|t| {
        let boxes = cfg
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| t >= o.spawn && o.despawn.is_none_or(|d| t < d))
            .filter_map(|(k, o)| {
                let b = o.box_at(t, cfg.ego_shift).clip_to(w, h, MIN_VISIBLE_AREA)?;
                Some(GtBox {
                    track_id: Some(k as u64),
                    ..GtBox::new(b, o.category_id)
                })
            })
            .collect();
        (cfg.frame_id_offset + t as FrameId, boxes)
    });
    let clip = ClipStream::from_frames(cfg.clip_id, cfg.fps, frames)?;
    if clip.frames.iter().all(|f| f.boxes.is_empty()) {
        log::warn!("clip {}: no object is visible in any frame", cfg.clip_id);
    }
    Ok(clip)
}

/// Bundles generated clips into a dataset with categories `1..=num_categories`.
pub fn generate_dataset(scenes: &[SceneConfig], num_categories: u64) -> Result<Dataset> {
    let fps = scenes
        .first()
        .map_or(crate::datamodel::DEFAULT_FPS, |s| s.fps);
    let dataset = Dataset {
        fps,
        categories: (1..=num_categories)
            .map(|id| Category {
                id,
                name: format!("class{id}"),
            })
            .collect(),
        clips: scenes.iter().map(generate_clip).collect::<Result<_>>()?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneConfig {
    pub image_size: (f64, f64),
    pub fps: f64,
    pub num_frames: usize,
    pub num_objects: usize,
    pub num_categories: u64,
    /// Largest per-axis speed in pixels per frame.
    pub max_speed: f64,
    pub size_range: (f64, f64),
    pub ego_shift: (f64, f64),
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        RandomSceneConfig {
            image_size: (640.0, 480.0),
            fps: 30.0,
            num_frames: 30,
            num_objects: 5,
            num_categories: 2,
            max_speed: 5.0,
            size_range: (30.0, 120.0),
            ego_shift: (0.0, 0.0),
        }
    }
}

/// A scene with uniformly drawn boxes and velocities.
pub fn random_scene(
    cfg: &RandomSceneConfig,
    clip_id: ClipId,
    frame_id_offset: FrameId,
    seed: u64,
) -> Result<SceneConfig> {
    let (lo, hi) = cfg.size_range;
    if !(lo > 0.0 && hi >= lo)
        || cfg.num_categories == 0
        || cfg.max_speed.is_nan()
        || cfg.max_speed < 0.0
    {
        return Err(Error::config(
            "random scene needs 0 < min size <= max size, a category and a non-negative speed",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = cfg.image_size;
    let objects = (0..cfg.num_objects)
        .map(|_| {
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let x = rng.random_range(0.0..=(iw - w).max(0.0));
            let y = rng.random_range(0.0..=(ih - h).max(0.0));
            let v = (
                rng.random_range(-cfg.max_speed..=cfg.max_speed),
                rng.random_range(-cfg.max_speed..=cfg.max_speed),
            );
            ObjectSpec::new(
                BBox::new(x, y, w, h),
                v,
                rng.random_range(1..=cfg.num_categories),
            )
        })
        .collect();
    let scene = SceneConfig {
        clip_id,
        frame_id_offset,
        image_size: cfg.image_size,
        fps: cfg.fps,
        num_frames: cfg.num_frames,
        objects,
        ego_shift: cfg.ego_shift,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Default for ScoreDistribution {
    fn default() -> Self {
        ScoreDistribution::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Std. dev. of the box-center jitter, pixels.
    pub center_jitter_std: f64,
    /// Std. dev. of the width/height jitter, pixels.
    pub size_jitter_std: f64,
    /// Chance that a ground-truth box goes undetected.
    pub drop_prob: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
    pub true_positive_score: ScoreDistribution,
    pub false_positive_score: ScoreDistribution,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            center_jitter_std: 0.0,
            size_jitter_std: 0.0,
            drop_prob: 0.0,
            false_positive_rate: 0.0,
            true_positive_score: ScoreDistribution::default(),
            false_positive_score: ScoreDistribution::Uniform {
                low: 0.0,
                high: 0.5,
            },
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.center_jitter_std)
            || !nonneg(self.size_jitter_std)
            || !nonneg(self.false_positive_rate)
        {
            return Err(Error::config(
                "jitter and false-positive rate must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config(format!(
                "drop_prob must lie in [0, 1], got {}",
                self.drop_prob
            )));
        }
        Ok(())
    }
}

struct ScoreSampler(ScoreSamplerKind);

enum ScoreSamplerKind {
    Constant(f64),
    Uniform(Uniform<f64>),
    Beta(Beta<f64>),
}

impl ScoreSampler {
    fn new(d: ScoreDistribution) -> Result<Self> {
        let bad = |e: String| Error::config(format!("score distribution: {e}"));
        Ok(ScoreSampler(match d {
            ScoreDistribution::Constant { value } if (0.0..=1.0).contains(&value) => {
                ScoreSamplerKind::Constant(value)
            }
            ScoreDistribution::Constant { value } => {
                return Err(bad(format!("{value} is outside [0, 1]")))
            }
            ScoreDistribution::Uniform { low, high } if 0.0 <= low && high <= 1.0 => {
                ScoreSamplerKind::Uniform(
                    Uniform::new_inclusive(low, high).map_err(|e| bad(e.to_string()))?,
                )
            }
            ScoreDistribution::Uniform { low, high } => {
                return Err(bad(format!("[{low}, {high}] is not inside [0, 1]")))
            }
            ScoreDistribution::Beta { alpha, beta } => {
                ScoreSamplerKind::Beta(Beta::new(alpha, beta).map_err(|e| bad(e.to_string()))?)
            }
        }))
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            ScoreSamplerKind::Constant(v) => *v,
            ScoreSamplerKind::Uniform(u) => u.sample(rng),
            ScoreSamplerKind::Beta(b) => b.sample(rng),
        }
    }
}

/// Detections derived from ground truth with jitter, misses and false
/// positives. Frame `f` draws from its own stream of `seed`, so a frame's
/// detections do not depend on which other frames are present. Ids are
/// assigned in frame order starting at 1.
pub fn noisy_detector(dataset: &Dataset, noise: &NoiseConfig) -> Result<DetectionSet> {
    noise.validate()?;
    let tp_score = ScoreSampler::new(noise.true_positive_score)?;
    let fp_score = ScoreSampler::new(noise.false_positive_score)?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let fp_count = (noise.false_positive_rate > 0.0)
        .then(|| Poisson::new(noise.false_positive_rate))
        .transpose()
        .map_err(|e| Error::config(format!("false-positive rate: {e}")))?;
    let categories: Vec<CategoryId> = dataset.category_ids().into_iter().collect();

    let mut out = DetectionSet::new();
    let mut next_id = 1u64;
    for clip in &dataset.clips {
        let (img_w, img_h) = clip
            .frames
            .iter()
            .flat_map(|f| f.boxes.iter())
            .fold((1.0f64, 1.0f64), |(w, h), b| {
                (w.max(b.bbox.right()), h.max(b.bbox.bottom()))
            });
        for frame in &clip.frames {
            out.cover(frame.frame_id);
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(frame.frame_id);
            for gt in frame.boxes.iter().filter(|g| !g.iscrowd) {
                if rng.random::<f64>() < noise.drop_prob {
                    continue;
                }
                let b = gt.bbox;
                let (cx, cy) = b.center();
                let jitter = |rng: &mut ChaCha8Rng, scale: f64| scale * unit.sample(rng);
                let cx = cx + jitter(&mut rng, noise.center_jitter_std);
                let cy = cy + jitter(&mut rng, noise.center_jitter_std);
                let w = (b.w + jitter(&mut rng, noise.size_jitter_std)).max(1.0);
                let h = (b.h + jitter(&mut rng, noise.size_jitter_std)).max(1.0);
                out.push(Detection {
                    id: next_id,
                    frame_id: frame.frame_id,
                    bbox: BBox::from_center(cx, cy, w, h),
                    category_id: gt.category_id,
                    score: tp_score.sample(&mut rng),
                });
                next_id += 1;
            }
            let n_fp = fp_count.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            for _ in 0..n_fp {
                if categories.is_empty() {
                    break;
                }
                let w = rng.random_range(8.0..=img_w.max(9.0) / 2.0);
                let h = rng.random_range(8.0..=img_h.max(9.0) / 2.0);
                let x = rng.random_range(0.0..=(img_w - w).max(0.0));
                let y = rng.random_range(0.0..=(img_h - h).max(0.0));
                out.push(Detection {
                    id: next_id,
                    frame_id: frame.frame_id,
                    bbox: BBox::new(x, y, w, h),
                    category_id: categories[rng.random_range(0..categories.len())],
                    score: fp_score.sample(&mut rng),
                });
                next_id += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::average_precision;

    fn one_object(velocity: (f64, f64)) -> SceneConfig {
        SceneConfig {
            clip_id: 0,
            frame_id_offset: 0,
            image_size: (640.0, 480.0),
            fps: 30.0,
            num_frames: 10,
            objects: vec![ObjectSpec::new(
                BBox::new(100.0, 100.0, 50.0, 50.0),
                velocity,
                1,
            )],
            ego_shift: (0.0, 0.0),
        }
    }

    #[test]
    fn linear_motion() {
        let clip = generate_clip(&one_object((5.0, -2.0))).unwrap();
        assert_eq!(clip.len(), 10);
        for (t, f) in clip.frames.iter().enumerate() {
            let b = f.boxes[0].bbox;
            assert_eq!((b.x, b.y), (100.0 + 5.0 * t as f64, 100.0 - 2.0 * t as f64));
            assert_eq!(f.boxes[0].track_id, Some(0));
        }
    }

    #[test]
    fn ego_motion_and_clipping() {
        let mut s = one_object((0.0, 0.0));
        s.ego_shift = (100.0, 0.0);
        let clip = generate_clip(&s).unwrap();
        // frame 5 straddles the right edge, frame 6 starts past it
        assert_eq!(clip.frames[4].boxes[0].bbox.w, 50.0);
        assert_eq!(clip.frames[5].boxes[0].bbox.w, 40.0);
        assert!(clip.frames[6].boxes.is_empty());
    }

    #[test]
    fn spawn_window() {
        let mut s = one_object((1.0, 0.0));
        s.objects[0].spawn = 2;
        s.objects[0].despawn = Some(5);
        let clip = generate_clip(&s).unwrap();
        let present: Vec<usize> = clip.frames.iter().map(|f| f.boxes.len()).collect();
        assert_eq!(present, vec![0, 0, 1, 1, 1, 0, 0, 0, 0, 0]);
        s.objects[0].despawn = Some(2);
        assert!(generate_clip(&s).is_err());
    }

    #[test]
    fn noiseless_detector_is_perfect() {
        let ds = generate_dataset(&[one_object((3.0, 1.0))], 1).unwrap();
        let dets = noisy_detector(&ds, &NoiseConfig::default()).unwrap();
        assert_eq!(dets.len(), 10);
        assert_eq!(average_precision(&ds.clips, &dets).unwrap().ap, Some(1.0));
    }

    #[test]
    fn drop_everything() {
        let ds = generate_dataset(&[one_object((3.0, 1.0))], 1).unwrap();
        let noise = NoiseConfig {
            drop_prob: 1.0,
            ..Default::default()
        };
        let dets = noisy_detector(&ds, &noise).unwrap();
        assert!(dets.is_empty());
        assert_eq!(dets.num_frames(), 10);
        assert_eq!(average_precision(&ds.clips, &dets).unwrap().ap, Some(0.0));
    }

    #[test]
    fn noise_is_reproducible() {
        let scene = random_scene(&RandomSceneConfig::default(), 3, 1000, 11).unwrap();
        let ds = generate_dataset(&[scene], 2).unwrap();
        let noise = NoiseConfig {
            center_jitter_std: 2.0,
            size_jitter_std: 2.0,
            drop_prob: 0.1,
            false_positive_rate: 1.5,
            seed: 5,
            ..Default::default()
        };
        let a = noisy_detector(&ds, &noise).unwrap();
        let b = noisy_detector(&ds, &noise).unwrap();
        assert_eq!(a, b);
        let c = noisy_detector(&ds, &NoiseConfig { seed: 6, ..noise }).unwrap();
        assert_ne!(a, c);
        for d in a.iter() {
            assert!((0.0..=1.0).contains(&d.score));
            assert!(d.bbox.is_valid());
        }
    }

    #[test]
    fn rejects_bad_noise() {
        let ds = generate_dataset(&[one_object((0.0, 0.0))], 1).unwrap();
        let bad = NoiseConfig {
            drop_prob: 1.5,
            ..Default::default()
        };
        assert!(noisy_detector(&ds, &bad).is_err());
    }
}
