use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use streamap::datamodel::{
    build_triplets, load_dataset, load_detections, resample_clip, save_dataset, save_detections,
    triplet_count,
};
use streamap::metrics::{average_precision, evaluate_vsap, run_streaming};
use streamap::synth::{random_scene, NoiseConfig, RandomSceneConfig};
use streamap::tal::{trend_weights, triplet_trend_weights, TrendWeights};
use streamap::{
    BBox, ClipStream, Dataset, DetectionSet, Error, EvalReport, GtBox, Result, StreamEvalOptions,
    TrendConfig, VelocityEvalReport,
};

use crate::args::{
    Command, EvalArgs, ForecastArgs, OutputArgs, ResampleArgs, SapArgs, SimulateArgs, TalArgs,
    VsapArgs,
};
use crate::config::{self, derive_seed, DataSource, Loaded, RunConfig, SeedStream, SyntheticSpec};
use crate::report::{table, Outcome, Report, Row};

pub fn run(command: &Command) -> Result<Outcome> {
    match command {
        Command::Sap(a) => sap(a),
        Command::Vsap(a) => vsap(a),
        Command::Forecast(a) => forecast(a),
        Command::Resample(a) => resample(a),
        Command::Simulate(a) => simulate(a),
        Command::TalWeights(a) => tal_weights(a),
    }
}

fn envelope<T: Serialize>(
    cfg: &RunConfig,
    warnings: &[String],
    result: T,
) -> Result<serde_json::Value> {
    serde_json::to_value(Report {
        tool: "streamap",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        warnings,
        result,
    })
    .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))
}

fn outcome(
    json: serde_json::Value,
    table: String,
    rows: Vec<Row>,
    undefined: bool,
    out: &OutputArgs,
) -> Outcome {
    Outcome {
        json,
        table,
        rows,
        undefined,
        output: out.output.clone(),
        csv: out.csv.clone(),
    }
}

struct EvalSetup {
    loaded: Loaded,
    cfg: RunConfig,
    opts: StreamEvalOptions,
}

fn eval_setup(name: &str, e: &EvalArgs) -> Result<EvalSetup> {
    let seed = e.out.seed;
    let loaded = config::load_data(&e.data, seed)?;
    let latency = config::latency_model(&e.latency, seed)?;
    let opts = StreamEvalOptions {
        cold_start: e.cold_start.into(),
    };
    let mut cfg = RunConfig::new(name, seed);
    cfg.data = Some(loaded.source.clone());
    cfg.latency = Some(latency);
    cfg.cold_start = Some(opts.cold_start);
    Ok(EvalSetup { loaded, cfg, opts })
}

#[derive(Serialize)]
struct EmissionSummary {
    clip_id: u64,
    frames: usize,
    processed: usize,
    cold_start_frames: usize,
}

#[derive(Serialize)]
struct SapResult {
    offline: EvalReport,
    streaming: EvalReport,
    emissions: Vec<EmissionSummary>,
}

fn sap(a: &SapArgs) -> Result<Outcome> {
    let mut s = eval_setup("sap", &a.eval)?;
    let f = config::forecaster(a.forecaster, &a.eval.kalman)?;
    s.cfg.forecasters = vec![f];
    let clips = &s.loaded.dataset.clips;
    let latency = s.cfg.latency.clone().expect("set in setup");

    let offline = average_precision(clips, &s.loaded.detections)?;
    let run = run_streaming(clips, &s.loaded.detections, &latency, &f, s.opts)?;
    if let Some(path) = &a.emission_log {
        crate::report::write_json(path, &run.logs)?;
    }
    let emissions = clips
        .iter()
        .zip(&run.logs)
        .map(|(c, log)| EmissionSummary {
            clip_id: c.clip_id,
            frames: c.len(),
            processed: log.len(),
            cold_start_frames: c
                .frames
                .iter()
                .filter(|fr| streamap::stream_sim::query_prediction(log, fr.timestamp).is_none())
                .count(),
        })
        .collect();

    let mut warnings = Vec::new();
    if run.report.ap.is_none() {
        warnings.push("no ground truth was scored; streaming AP is undefined".to_string());
    }
    let rows = vec![
        Row::new("offline", &offline),
        Row::new(format!("streaming/{}", f.kind.name()), &run.report),
    ];
    let undefined = run.report.ap.is_none();
    let json = envelope(
        &s.cfg,
        &warnings,
        SapResult {
            offline,
            streaming: run.report,
            emissions,
        },
    )?;
    Ok(outcome(
        json,
        table("AP", &rows),
        rows,
        undefined,
        &a.eval.out,
    ))
}

fn vsap_rows(r: &VelocityEvalReport) -> Vec<Row> {
    let mut rows: Vec<Row> = r
        .velocities
        .iter()
        .map(|m| match r.sap_by_velocity.get(m) {
            Some(rep) => Row::new(format!("M={m}"), rep),
            None => Row::headline(format!("M={m}"), None),
        })
        .collect();
    rows.push(Row::headline("VsAP", r.vsap));
    rows
}

fn undefined_warnings(r: &VelocityEvalReport) -> Vec<String> {
    r.undefined_velocities
        .iter()
        .map(|m| format!("velocity {m} is undefined on this data and left out of the mean"))
        .collect()
}

fn vsap(a: &VsapArgs) -> Result<Outcome> {
    let mut s = eval_setup("vsap", &a.eval)?;
    let f = config::forecaster(a.forecaster, &a.eval.kalman)?;
    s.cfg.forecasters = vec![f];
    let latency = s.cfg.latency.clone().expect("set in setup");
    let r = evaluate_vsap(
        &s.loaded.dataset.clips,
        &s.loaded.detections,
        &latency,
        &f,
        &a.velocities,
        s.opts,
    )?;
    s.cfg.velocities = r.velocities.clone();

    let warnings = undefined_warnings(&r);
    let rows = vsap_rows(&r);
    let undefined = r.vsap.is_none();
    let json = envelope(&s.cfg, &warnings, &r)?;
    Ok(outcome(
        json,
        table("sAP", &rows),
        rows,
        undefined,
        &a.eval.out,
    ))
}

#[derive(Serialize)]
struct ForecastRow {
    velocity: u32,
    forecaster: &'static str,
    extra_latency_ms: f64,
    report: Option<EvalReport>,
}

fn forecast(a: &ForecastArgs) -> Result<Outcome> {
    let mut s = eval_setup("forecast", &a.eval)?;
    let mut kinds = a.forecasters.clone();
    kinds.dedup();
    let forecasters = kinds
        .iter()
        .map(|&k| config::forecaster(k, &a.eval.kalman))
        .collect::<Result<Vec<_>>>()?;
    let mut velocities = a.velocities.clone();
    velocities.sort_unstable();
    velocities.dedup();
    s.cfg.forecasters = forecasters.clone();
    s.cfg.velocities = velocities.clone();
    let latency = s.cfg.latency.clone().expect("set in setup");

    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &m in &velocities {
        for f in &forecasters {
            let mut r = evaluate_vsap(
                &s.loaded.dataset.clips,
                &s.loaded.detections,
                &latency,
                f,
                &[m],
                s.opts,
            )?;
            if f == &forecasters[0] {
                warnings.extend(undefined_warnings(&r));
            }
            let report = r.sap_by_velocity.remove(&m);
            let label = format!(
                "M={m} {} (+{:.1} ms)",
                f.kind.name(),
                1000.0 * f.extra_latency
            );
            rows.push(match &report {
                Some(rep) => Row::new(label, rep),
                None => Row::headline(label, None),
            });
            results.push(ForecastRow {
                velocity: m,
                forecaster: f.kind.name(),
                extra_latency_ms: 1000.0 * f.extra_latency,
                report,
            });
        }
    }
    let undefined = rows.iter().any(|r| r.ap.is_none());
    let json = envelope(&s.cfg, &warnings, &results)?;
    Ok(outcome(
        json,
        table("sAP", &rows),
        rows,
        undefined,
        &a.eval.out,
    ))
}

fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    detections: Option<&DetectionSet>,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    save_dataset(
        dataset,
        &dir.join("annotations.json"),
        &dir.join("manifest.json"),
    )?;
    let mut files = vec!["annotations.json".to_string(), "manifest.json".to_string()];
    if let Some(d) = detections {
        save_detections(d, &dir.join("detections.json"))?;
        files.push("detections.json".to_string());
    }
    Ok(files)
}

#[derive(Serialize)]
struct DatasetSummary {
    clips: usize,
    frames: usize,
    gt_boxes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    detections: Option<usize>,
    files: Vec<String>,
}

fn summarize(
    dataset: &Dataset,
    detections: Option<&DetectionSet>,
    files: Vec<String>,
) -> DatasetSummary {
    DatasetSummary {
        clips: dataset.clips.len(),
        frames: dataset.num_frames(),
        gt_boxes: dataset.frames().map(|f| f.boxes.len()).sum(),
        detections: detections.map(DetectionSet::len),
        files,
    }
}

fn summary_table(s: &DatasetSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<10} {:>8}", "clips", s.clips);
    let _ = writeln!(t, "{:<10} {:>8}", "frames", s.frames);
    let _ = writeln!(t, "{:<10} {:>8}", "gt boxes", s.gt_boxes);
    if let Some(d) = s.detections {
        let _ = writeln!(t, "{:<10} {:>8}", "detections", d);
    }
    t
}

#[derive(Serialize)]
struct ResampleResult {
    stride: u32,
    skipped_clips: Vec<u64>,
    written: DatasetSummary,
}

fn resample(a: &ResampleArgs) -> Result<Outcome> {
    let dataset = load_dataset(&a.annotations, &a.manifest)?;
    let detections = a
        .detections
        .as_ref()
        .map(|p| load_detections(p, &dataset))
        .transpose()?;

    let mut cfg = RunConfig::new("resample", a.out.seed);
    cfg.data = Some(DataSource::Files {
        annotations: a.annotations.clone(),
        manifest: a.manifest.clone(),
        detections: a.detections.clone(),
    });
    cfg.option("stride", a.stride);

    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    let mut clips: Vec<ClipStream> = Vec::new();
    for c in &dataset.clips {
        if a.stride >= 2 && triplet_count(c.len(), a.stride) == 0 {
            let w = format!(
                "clip {} has {} frames, fewer than {} needed at stride {}; skipped",
                c.clip_id,
                c.len(),
                2 * a.stride + 1,
                a.stride
            );
            log::warn!("{w}");
            warnings.push(w);
            skipped.push(c.clip_id);
            continue;
        }
        clips.push(resample_clip(c, a.stride));
    }
    if clips.is_empty() {
        return Err(Error::Validation(format!(
            "no clip is long enough for stride {}",
            a.stride
        )));
    }
    let out = Dataset {
        fps: dataset.fps,
        categories: dataset.categories.clone(),
        clips,
    };
    let kept_dets = detections.map(|d| {
        let mut kept = DetectionSet::new();
        for f in out.frames() {
            kept.insert_frame(f.frame_id, d.get(f.frame_id).unwrap_or(&[]).to_vec());
        }
        kept
    });
    let files = write_dataset(&a.out_dir, &out, kept_dets.as_ref())?;
    let written = summarize(&out, kept_dets.as_ref(), files);
    let t = summary_table(&written);
    let json = envelope(
        &cfg,
        &warnings,
        ResampleResult {
            stride: a.stride,
            skipped_clips: skipped,
            written,
        },
    )?;
    Ok(outcome(json, t, Vec::new(), false, &a.out))
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let seed = a.out.seed;
    let (scene_path, spec) = match &a.scene {
        Some(p) => (Some(p.clone()), config::read_json::<SyntheticSpec>(p)?),
        None => {
            let rcfg = RandomSceneConfig {
                num_frames: a.frames,
                num_objects: a.objects,
                num_categories: a.categories,
                max_speed: a.max_speed,
                ..Default::default()
            };
            let base = derive_seed(seed, SeedStream::Scenes);
            let scenes = (0..a.clips)
                .map(|c| {
                    random_scene(
                        &rcfg,
                        c as u64,
                        (c * a.frames) as u64,
                        base.wrapping_add(c as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let noise = NoiseConfig {
                center_jitter_std: a.center_jitter,
                size_jitter_std: a.size_jitter,
                drop_prob: a.drop_prob,
                false_positive_rate: a.fp_rate,
                ..Default::default()
            };
            (
                None,
                SyntheticSpec {
                    num_categories: a.categories,
                    scenes,
                    noise,
                },
            )
        }
    };
    let (dataset, detections, spec) = config::render(spec, seed)?;

    let mut files = write_dataset(&a.out_dir, &dataset, Some(&detections))?;
    // the resolved spec renders the same data again via --scene
    crate::report::write_json(&a.out_dir.join("scene.json"), &spec)?;
    files.push("scene.json".to_string());

    let mut cfg = RunConfig::new("simulate", seed);
    cfg.data = Some(DataSource::Synthetic {
        scene: scene_path,
        spec,
    });
    let summary = summarize(&dataset, Some(&detections), files);
    let t = summary_table(&summary);
    let json = envelope(&cfg, &[], summary)?;
    Ok(outcome(json, t, Vec::new(), false, &a.out))
}

#[derive(Deserialize)]
struct TripletFile {
    future: Vec<GtBox>,
    #[serde(default)]
    reference: Vec<GtBox>,
    #[serde(default)]
    reg_losses: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ObjectWeight {
    bbox: BBox,
    category_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
    m_iou: f64,
    omega: f64,
    omega_hat: f64,
}

#[derive(Serialize)]
struct TalResult {
    tau: f64,
    nu: f64,
    advanced: bool,
    objects: Vec<ObjectWeight>,
}

fn tal_weights(a: &TalArgs) -> Result<Outcome> {
    let trend = TrendConfig::new(a.tau, a.nu)?;
    let mut cfg = RunConfig::new("tal-weights", a.out.seed);
    cfg.tal = Some(trend);
    cfg.option("advanced", a.advanced);

    let (future, weights): (Vec<GtBox>, TrendWeights) = if let Some(path) = &a.triplet {
        cfg.option("triplet", path);
        let t: TripletFile = config::read_json(path)?;
        let losses = a
            .reg_losses
            .clone()
            .or(t.reg_losses)
            .unwrap_or_else(|| vec![1.0; t.future.len()]);
        let w = trend_weights(&t.future, &t.reference, &losses, &trend)?;
        (t.future, w)
    } else {
        let (ann, man) = (
            a.annotations.as_ref().expect("required by clap"),
            a.manifest.as_ref().expect("required by clap"),
        );
        let (clip_id, index) = (
            a.clip.expect("required by clap"),
            a.index.expect("required by clap"),
        );
        cfg.data = Some(DataSource::Files {
            annotations: ann.clone(),
            manifest: man.clone(),
            detections: None,
        });
        cfg.option("clip", clip_id);
        cfg.option("index", index);
        cfg.option("velocity", a.velocity);
        let dataset = load_dataset(ann, man)?;
        let clip = dataset
            .clip(clip_id)
            .ok_or_else(|| Error::Reference(format!("no clip {clip_id} in the manifest")))?;
        let triplet = build_triplets(clip, a.velocity)
            .triplets
            .into_iter()
            .find(|t| t.cur_index == index)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "clip {clip_id} ({} frames) has no triplet centred on index {index} at velocity {}",
                    clip.len(),
                    a.velocity
                ))
            })?;
        let future = clip.frames[index + a.velocity as usize].boxes.clone();
        let w = triplet_trend_weights(clip, &triplet, a.reg_losses.as_deref(), &trend, a.advanced)?;
        (future, w)
    };

    let objects: Vec<ObjectWeight> = future
        .iter()
        .enumerate()
        .map(|(i, g)| ObjectWeight {
            bbox: g.bbox,
            category_id: g.category_id,
            track_id: g.track_id,
            m_iou: weights.m_iou[i],
            omega: weights.omega[i],
            omega_hat: weights.omega_hat[i],
        })
        .collect();
    let mut t = String::new();
    let _ = writeln!(t, "tau = {}, nu = {}", trend.tau, trend.nu);
    let _ = writeln!(
        t,
        "{:>4} {:>9} {:>9} {:>9}",
        "obj", "mIoU", "omega", "omega^"
    );
    for (i, o) in objects.iter().enumerate() {
        let _ = writeln!(
            t,
            "{:>4} {:>9.4} {:>9.4} {:>9.4}",
            i, o.m_iou, o.omega, o.omega_hat
        );
    }
    let warnings = trend.warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let json = envelope(
        &cfg,
        &warnings,
        TalResult {
            tau: trend.tau,
            nu: trend.nu,
            advanced: a.advanced,
            objects,
        },
    )?;
    Ok(outcome(json, t, Vec::new(), false, &a.out))
}
