//! Fixed workloads shared by the benchmarks.

use streamap::synth::{
    generate_dataset, noisy_detector, random_scene, NoiseConfig, RandomSceneConfig,
};
use streamap::{Dataset, DetectionSet};

/// `clips` random clips of `frames` frames with `objects` objects each, plus
/// jittered detections with a few false positives.
pub fn workload(clips: usize, frames: usize, objects: usize) -> (Dataset, DetectionSet) {
    let cfg = RandomSceneConfig {
        num_frames: frames,
        num_objects: objects,
        max_speed: 6.0,
        ..Default::default()
    };
    let scenes: Vec<_> = (0..clips)
        .map(|c| {
            random_scene(&cfg, c as u64, (c * frames) as u64, 1000 + c as u64).expect("valid scene")
        })
        .collect();
    let dataset = generate_dataset(&scenes, cfg.num_categories).expect("valid dataset");
    let noise = NoiseConfig {
        center_jitter_std: 2.0,
        size_jitter_std: 2.0,
        drop_prob: 0.05,
        false_positive_rate: 1.0,
        true_positive_score: streamap::synth::ScoreDistribution::Uniform {
            low: 0.5,
            high: 1.0,
        },
        seed: 7,
        ..Default::default()
    };
    let dets = noisy_detector(&dataset, &noise).expect("valid noise");
    (dataset, dets)
}
