//! Resolving command-line flags into the run configuration recorded in
//! every report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use streamap::datamodel::{load_dataset, load_detections, FrameId};
use streamap::synth::{generate_dataset, noisy_detector, NoiseConfig, SceneConfig};
use streamap::{
    ColdStart, Dataset, DetectionSet, Error, Forecaster, ForecasterKind, KalmanConfig,
    LatencyModel, Result, TrendConfig,
};

use crate::args::{DataArgs, KalmanArgs, LatencyArgs};

/// Independent sub-seeds drawn from the root seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Scenes = 1,
    Noise = 2,
    Latency = 3,
}

pub fn derive_seed(root: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

/// A scene spec file: clips to render and how the detector errs on them.
/// The noise seed is always taken from the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "one")]
    pub num_categories: u64,
    pub scenes: Vec<SceneConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Files {
        annotations: PathBuf,
        manifest: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        detections: Option<PathBuf>,
    },
    Synthetic {
        #[serde(skip_serializing_if = "Option::is_none")]
        scene: Option<PathBuf>,
        spec: SyntheticSpec,
    },
}

/// Everything that determines a report's content. Output locations and
/// thread count are left out, so they never change the bytes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyModel>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub forecasters: Vec<Forecaster>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub velocities: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_start: Option<ColdStart>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tal: Option<TrendConfig>,
    /// Subcommand-specific settings.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        RunConfig {
            subcommand: subcommand.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("plain data serializes");
        self.options.insert(key.to_string(), v);
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
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

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

pub struct Loaded {
    pub dataset: Dataset,
    pub detections: DetectionSet,
    pub source: DataSource,
}

/// Loads files or renders a scene spec. Evaluation always needs detections.
pub fn load_data(args: &DataArgs, seed: u64) -> Result<Loaded> {
    match (&args.annotations, &args.manifest, &args.scene) {
        (Some(ann), Some(man), None) => {
            let det_path = args.detections.as_ref().ok_or_else(|| {
                Error::Config("--detections is required with --annotations/--manifest".into())
            })?;
            let dataset = load_dataset(ann, man)?;
            let detections = load_detections(det_path, &dataset)?;
            Ok(Loaded {
                dataset,
                detections,
                source: DataSource::Files {
                    annotations: ann.clone(),
                    manifest: man.clone(),
                    detections: Some(det_path.clone()),
                },
            })
        }
        (None, None, Some(scene)) => {
            let spec: SyntheticSpec = read_json(scene)?;
            let (dataset, detections, spec) = render(spec, seed)?;
            Ok(Loaded {
                dataset,
                detections,
                source: DataSource::Synthetic {
                    scene: Some(scene.clone()),
                    spec,
                },
            })
        }
        _ => Err(Error::Config(
            "give either --annotations, --manifest and --detections, or --scene".into(),
        )),
    }
}

/// Generates ground truth and detections, returning the spec with the seed
/// actually used.
pub fn render(
    mut spec: SyntheticSpec,
    seed: u64,
) -> Result<(Dataset, DetectionSet, SyntheticSpec)> {
    if spec.scenes.is_empty() {
        return Err(Error::Config("scene spec has no scenes".into()));
    }
    spec.noise.seed = derive_seed(seed, SeedStream::Noise);
    let dataset = generate_dataset(&spec.scenes, spec.num_categories)?;
    let detections = noisy_detector(&dataset, &spec.noise)?;
    Ok((dataset, detections, spec))
}

pub fn latency_model(args: &LatencyArgs, seed: u64) -> Result<LatencyModel> {
    let model = if let Some(ms) = args.latency_ms {
        LatencyModel::constant_ms(ms)
    } else if let Some(path) = &args.latency_file {
        let value: serde_json::Value = read_json(path)?;
        if value.get("kind").is_some() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value::<BTreeMap<FrameId, f64>>(value).map(|t| {
                LatencyModel::PerFrame {
                    seconds: t.into_iter().map(|(f, ms)| (f, ms / 1000.0)).collect(),
                }
            })
        }
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
    } else if let (Some(mean), Some(std)) = (args.latency_mean_ms, args.latency_std_ms) {
        LatencyModel::Stochastic {
            mean: mean / 1000.0,
            stddev: std / 1000.0,
            seed: args
                .latency_seed
                .unwrap_or_else(|| derive_seed(seed, SeedStream::Latency)),
            floor: args.latency_floor_ms / 1000.0,
        }
    } else {
        return Err(Error::Config("no latency model given".into()));
    };
    model.validate()?;
    Ok(model)
}

pub fn forecaster(kind: ForecasterKind, args: &KalmanArgs) -> Result<Forecaster> {
    let kalman = KalmanConfig {
        iou_gate: args.kf_gate,
        max_age: args.kf_max_age,
        min_hits: args.kf_min_hits,
        ..KalmanConfig::default()
    };
    let mut f = Forecaster {
        kalman,
        ..Forecaster::new(kind)
    }
    .with_horizon(args.horizon);
    if let Some(ms) = args.forecaster_latency_ms {
        f = f.with_extra_latency(ms / 1000.0);
    }
    f.validate()?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ_and_repeat() {
        let a = derive_seed(7, SeedStream::Noise);
        assert_eq!(a, derive_seed(7, SeedStream::Noise));
        assert_ne!(a, derive_seed(7, SeedStream::Latency));
        assert_ne!(a, derive_seed(8, SeedStream::Noise));
    }

    #[test]
    fn offsets_count_bytes() {
        assert_eq!(byte_offset("ab\ncd\n", 2, 2), 4);
        assert_eq!(byte_offset("x", 1, 1), 0);
    }
}
