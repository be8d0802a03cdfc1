//! (previous, current, future) frame triplets at a velocity multiplier, and
//! stride resampling of whole clips.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClipId, ClipStream, FrameAnnotations, FrameId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub clip_id: ClipId,
    pub prev_frame_id: FrameId,
    pub cur_frame_id: FrameId,
    pub future_frame_id: FrameId,
    /// Index of the current frame within its clip.
    pub cur_index: usize,
    pub velocity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSet {
    pub velocity: u32,
    pub triplets: Vec<Triplet>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Number of triplets a clip of `len` frames yields at velocity `m`.
pub fn triplet_count(len: usize, m: u32) -> usize {
    if m == 0 {
        len
    } else {
        len.saturating_sub(2 * m as usize)
    }
}

/// `(t-M, t, t+M)` for every `t` with both neighbours inside the clip; for
/// `M = 0` every frame becomes `(t, t, t)`.
pub fn build_triplets(clip: &ClipStream, velocity: u32) -> TripletSet {
    let m = velocity as usize;
    let frames = &clip.frames;
    let range = if m == 0 {
        0..frames.len()
    } else if frames.len() > 2 * m {
        m..frames.len() - m
    } else {
        0..0
    };
    let triplets = range
        .map(|t| Triplet {
            clip_id: clip.clip_id,
            prev_frame_id: frames[t - m].frame_id,
            cur_frame_id: frames[t].frame_id,
            future_frame_id: frames[t + m].frame_id,
            cur_index: t,
            velocity,
        })
        .collect();
    TripletSet { velocity, triplets }
}

/// Shuffled union of triplet sets over several velocities. Each epoch is a
/// permutation of the same pool, reproducible from `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct MixedVelocitySampler {
    pool: Vec<Triplet>,
    seed: u64,
}

impl MixedVelocitySampler {
    pub fn new(clips: &[ClipStream], velocities: &[u32], seed: u64) -> Result<Self> {
        if velocities.is_empty() {
            return Err(Error::validation("velocity set is empty"));
        }
        let mut velocities = velocities.to_vec();
        velocities.sort_unstable();
        velocities.dedup();

        let pool: Vec<Triplet> = velocities
            .iter()
            .flat_map(|&m| {
                clips
                    .iter()
                    .flat_map(move |c| build_triplets(c, m).triplets)
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::validation(
                "no clip is long enough to form a triplet at any requested velocity",
            ));
        }
        Ok(Self { pool, seed })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Triplet> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order = self.pool.clone();
        order.shuffle(&mut rng);
        order
    }
}

/// First epoch of a [`MixedVelocitySampler`].
pub fn sample_mixed_velocity(
    clips: &[ClipStream],
    velocities: &[u32],
    seed: u64,
) -> Result<Vec<Triplet>> {
    Ok(MixedVelocitySampler::new(clips, velocities, seed)?.epoch(0))
}

/// Keeps every `stride`-th frame (indices `0, M, 2M, ...`) and replays them
/// at the original rate, so objects appear to move `M` times faster.
/// `stride = 0` returns the clip unchanged; static duplication happens at
/// the triplet / evaluation level.
pub fn resample_clip(clip: &ClipStream, stride: u32) -> ClipStream {
    if stride <= 1 {
        return clip.clone();
    }
    let frames = clip
        .frames
        .iter()
        .step_by(stride as usize)
        .enumerate()
        .map(|(index, f)| FrameAnnotations {
            index_in_clip: index,
            timestamp: index as f64 / clip.fps,
            ..f.clone()
        })
        .collect();
    ClipStream {
        clip_id: clip.clip_id,
        fps: clip.fps,
        frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn clip(len: usize) -> ClipStream {
        ClipStream::from_frames(0, 30.0, (0..len as u64).map(|i| (100 + i, vec![]))).unwrap()
    }

    #[test]
    fn counts_for_31_frames() {
        let c = clip(31);
        assert_eq!(build_triplets(&c, 1).len(), 29);
        assert_eq!(build_triplets(&c, 3).len(), 25);
        let zero = build_triplets(&c, 0);
        assert_eq!(zero.len(), 31);
        assert!(zero
            .triplets
            .iter()
            .all(|t| t.prev_frame_id == t.cur_frame_id && t.cur_frame_id == t.future_frame_id));
    }

    #[test]
    fn first_and_last_are_dropped() {
        let set = build_triplets(&clip(5), 1);
        let cur: Vec<_> = set.triplets.iter().map(|t| t.cur_frame_id).collect();
        assert_eq!(cur, vec![101, 102, 103]);
        assert_eq!(set.triplets[0].prev_frame_id, 100);
        assert_eq!(set.triplets[2].future_frame_id, 104);
    }

    #[test]
    fn short_clip_gives_empty_set() {
        assert!(build_triplets(&clip(6), 3).is_empty());
        assert_eq!(build_triplets(&clip(7), 3).len(), 1);
    }

    #[test]
    fn count_formula_exhaustive() {
        for len in 1..=100 {
            let c = clip(len);
            for m in 0..=6 {
                let set = build_triplets(&c, m);
                assert_eq!(set.len(), triplet_count(len, m), "L={len} M={m}");
                let ids: BTreeSet<_> = c.frames.iter().map(|f| f.frame_id).collect();
                for t in &set.triplets {
                    assert!(ids.contains(&t.prev_frame_id) && ids.contains(&t.future_frame_id));
                }
            }
        }
        assert_eq!(triplet_count(0, 0), 0);
        assert_eq!(triplet_count(0, 4), 0);
    }

    #[test]
    fn mixed_velocity_pool() {
        let c = clip(31);
        let all =
            sample_mixed_velocity(std::slice::from_ref(&c), &[0, 1, 2, 3, 4, 5, 6], 7).unwrap();
        assert_eq!(all.len(), 175);
        let unique: BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 175);

        let again =
            sample_mixed_velocity(std::slice::from_ref(&c), &[0, 1, 2, 3, 4, 5, 6], 7).unwrap();
        assert_eq!(all, again);

        let mut single = sample_mixed_velocity(std::slice::from_ref(&c), &[1], 3).unwrap();
        single.sort();
        assert_eq!(single, build_triplets(&c, 1).triplets);
    }

    #[test]
    fn epochs_are_permutations() {
        let c = clip(20);
        let s = MixedVelocitySampler::new(std::slice::from_ref(&c), &[1, 2], 11).unwrap();
        let (mut a, mut b) = (s.epoch(0), s.epoch(1));
        assert_ne!(a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_velocity_errors() {
        let c = clip(3);
        assert!(sample_mixed_velocity(std::slice::from_ref(&c), &[], 0).is_err());
        assert!(sample_mixed_velocity(std::slice::from_ref(&c), &[2, 3], 0).is_err());
    }

    #[test]
    fn resample_stride() {
        let c = clip(31);
        let r = resample_clip(&c, 3);
        assert_eq!(r.len(), 11);
        let ids: Vec<_> = r.frames.iter().map(|f| f.frame_id - 100).collect();
        assert_eq!(ids, (0..=30).step_by(3).collect::<Vec<_>>());
        r.validate().unwrap();
        assert_eq!(resample_clip(&c, 1), c);
        assert_eq!(resample_clip(&c, 0), c);
    }
}
