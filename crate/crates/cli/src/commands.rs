//! Subcommand implementations: thin glue over the library pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;

use ulm_core::config::PipelineConfig;
use ulm_core::dataset::{export_coco, split_by_correlation, CocoDataset, SplitManifest};
use ulm_core::detector::{load_checkpoint, Detector};
use ulm_core::evaluation::{evaluate as evaluate_frames, EvalConfig, FrameEval};
use ulm_core::io::{atomic_write_bytes, atomic_write_json, read_json, read_jsonl, JsonlWriter};
use ulm_core::postprocess::{Detection, DetectionRecord};
use ulm_core::renderer::{export_image, export_raw, render_sequence};
use ulm_core::simulator::Frame;
use ulm_core::training::{infer_frames, Trainer};

use crate::{CliError, CliResult};

fn echo_config(config: &PipelineConfig, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    atomic_write_bytes(&dir.join("effective_config.json"), config.to_json_pretty().as_bytes())
        .context("writing effective config")?;
    Ok(())
}

/// Generates `scenes × frames_per_scene` frames with globally increasing
/// frame indices, writes raw frames plus COCO ground truth.
pub fn simulate(config: &PipelineConfig, out: &Path) -> CliResult<()> {
    let sim = &config.simulator;
    let frames = sim.generate(config.seed).map_err(CliError::usage)?;
    let gt = export_coco(&frames).context("exporting ground truth")?;
    ulm_core::io::write_dataset(out, &frames, &gt, sim.previews).context("writing dataset")?;
    echo_config(config, out)?;
    eprintln!(
        "simulated {} frames ({} scenes x {}) into {}",
        frames.len(),
        sim.scenes,
        sim.frames_per_scene,
        out.display()
    );
    Ok(())
}

fn load_frames(data: &Path) -> CliResult<Vec<Frame>> {
    Ok(ulm_core::io::load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?)
}

pub fn split(config: &PipelineConfig, data: &Path, out: &Path) -> CliResult<()> {
    let frames = load_frames(data)?;
    let mut rng = ulm_core::rng::stream(config.seed, "split");
    let manifest = split_by_correlation(&frames, config.split.test_size, config.split.threshold, &mut rng)
        .map_err(CliError::usage)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    atomic_write_json(out, &manifest).context("writing manifest")?;
    if let Some(dir) = out.parent() {
        echo_config(config, dir)?;
    }
    eprintln!(
        "split: {} train / {} test (threshold {}), manifest {}",
        manifest.train_ids.len(),
        manifest.test_ids.len(),
        manifest.threshold,
        out.display()
    );
    Ok(())
}

pub fn train(
    config: &PipelineConfig,
    data: &Path,
    manifest_path: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<()> {
    let frames = load_frames(data)?;
    let manifest: SplitManifest = read_json(manifest_path).context("reading split manifest")?;
    if let Some(f) = frames.first() {
        if f.width() != 2 * config.detector.patch_w || f.height() != 2 * config.detector.patch_h {
            return Err(CliError::Usage(format!(
                "dataset frames are {}x{} but the detector expects {}x{} patches",
                f.width(),
                f.height(),
                config.detector.patch_w,
                config.detector.patch_h
            )));
        }
    }
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).context("loading resume checkpoint")?;
            let trainer = Trainer::from_checkpoint(&ckpt).map_err(CliError::usage)?;
            if trainer.detector.config != config.detector {
                return Err(CliError::Usage(
                    "checkpoint detector config differs from the requested config".into(),
                ));
            }
            eprintln!("resuming from epoch {}", trainer.epoch);
            trainer
        }
        None => {
            let detector = Detector::new(config.detector.clone(), config.seed).map_err(CliError::usage)?;
            Trainer::new(detector, config.seed)
        }
    };
    echo_config(config, out)?;
    let log_path = out.join("train_log.jsonl");
    let mut log = if resume.is_some() {
        JsonlWriter::append(&log_path)
    } else {
        JsonlWriter::create(&log_path)
    }
    .context("opening train log")?;
    let ckpt_path = out.join("model.ckpt");
    let outcome = trainer
        .run(
            &frames,
            &manifest,
            &config.train,
            &config.loss,
            &config.infer,
            Some(&ckpt_path),
            |l| {
                let _ = log.write(l);
                let val = l
                    .val
                    .as_ref()
                    .map(|v| {
                        format!(
                            " val ap50 {:.3} loc-recall {:.3}",
                            v.ap50.unwrap_or(f64::NAN),
                            v.loc_recall.unwrap_or(f64::NAN)
                        )
                    })
                    .unwrap_or_default();
                eprintln!("epoch {:>3}  loss {:.4}{val}  ({:.1}s)", l.epoch, l.loss, l.seconds);
            },
        )
        .map_err(|e| match e {
            ulm_core::training::TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        })?;
    log.flush().context("flushing train log")?;
    eprintln!(
        "trained {} epochs, final loss {:.4}, checkpoint {}{}",
        outcome.epochs_run,
        outcome.final_loss,
        ckpt_path.display(),
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn subset_ids(manifest: Option<&Path>, subset: &str, n: usize) -> CliResult<Vec<usize>> {
    match manifest {
        None => Ok((0..n).collect()),
        Some(path) => {
            let m: SplitManifest = read_json(path).context("reading split manifest")?;
            Ok(match subset {
                "train" => m.train_ids,
                "test" => m.test_ids,
                _ => (0..n).collect(),
            })
        }
    }
}

pub fn infer(
    config: &PipelineConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    manifest: Option<&Path>,
    subset: &str,
) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint).context("loading checkpoint")?;
    let detector = Detector::from_checkpoint(&ckpt).map_err(CliError::usage)?;
    let frames = load_frames(data)?;
    let ids = subset_ids(manifest, subset, frames.len())?;
    let selected: Vec<&Frame> = ids.iter().map(|&i| &frames[i]).collect();
    let dets = infer_frames(&detector, &selected, &config.infer).map_err(CliError::usage)?;
    echo_config(config, out)?;
    let path = out.join("detections.jsonl");
    let mut w = JsonlWriter::create(&path).context("opening detections output")?;
    let mut count = 0;
    for (f, frame_dets) in selected.iter().zip(&dets) {
        for d in frame_dets {
            w.write(&DetectionRecord::new(f.frame_index, d)).context("writing detection")?;
            count += 1;
        }
    }
    w.flush().context("flushing detections")?;
    eprintln!("inferred {count} detections over {} frames into {}", selected.len(), path.display());
    Ok(())
}

/// Groups detection records by frame index.
fn detections_by_frame(path: &Path) -> CliResult<BTreeMap<usize, Vec<Detection>>> {
    let records: Vec<DetectionRecord> = read_jsonl(path).context("reading detections")?;
    let mut map: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for r in records {
        map.entry(r.frame).or_default().push(r.detection());
    }
    Ok(map)
}

pub fn evaluate(
    config: &PipelineConfig,
    detections: &Path,
    data: &Path,
    out: &Path,
    manifest: Option<&Path>,
    subset: &str,
) -> CliResult<()> {
    let gt: CocoDataset = read_json(&ulm_core::io::ground_truth_path(data)).context("reading ground truth")?;
    gt.validate().map_err(CliError::usage)?;
    let mut dets = detections_by_frame(detections)?;
    let ids: Vec<usize> = subset_ids(manifest, subset, gt.images.len())?;
    let keep: std::collections::HashSet<usize> = ids.iter().copied().collect();
    let mut scenes = Vec::new();
    for img in &gt.images {
        let frame_index = (img.id - 1) as usize;
        if !keep.contains(&frame_index) {
            continue;
        }
        let anns = gt.annotations_of(img.id);
        scenes.push(FrameEval {
            frame: frame_index,
            detections: dets.remove(&frame_index).unwrap_or_default(),
            gt_boxes: anns.iter().map(|a| a.bbox).collect(),
            gt_centroids: anns
                .iter()
                .map(|a| a.centroid.unwrap_or([a.bbox[0] + a.bbox[2] / 2.0, a.bbox[1] + a.bbox[3] / 2.0]))
                .collect(),
        });
    }
    let cfg: &EvalConfig = &config.eval;
    let report = evaluate_frames(&scenes, cfg).map_err(CliError::usage)?;
    echo_config(config, out)?;
    atomic_write_json(&out.join("eval_report.json"), &report).context("writing report")?;
    atomic_write_bytes(&out.join("eval_report.txt"), report.to_table().as_bytes())
        .context("writing report table")?;
    eprint!("{}", report.to_table());
    Ok(())
}

pub fn render(
    config: &PipelineConfig,
    detections: Option<&Path>,
    data: &Path,
    out: &Path,
) -> CliResult<()> {
    let gt: CocoDataset = read_json(&ulm_core::io::ground_truth_path(data)).context("reading ground truth")?;
    gt.validate().map_err(CliError::usage)?;
    let (fw, fh) = match gt.images.first() {
        Some(img) => (img.width as usize, img.height as usize),
        None => return Err(CliError::Usage("dataset has no frames".into())),
    };
    let mut per_frame: BTreeMap<usize, Vec<[f64; 2]>> = BTreeMap::new();
    for img in &gt.images {
        per_frame.insert((img.id - 1) as usize, Vec::new());
    }
    match detections {
        Some(path) => {
            for (frame, dets) in detections_by_frame(path)? {
                per_frame.entry(frame).or_default().extend(dets.iter().map(|d| d.centroid));
            }
        }
        None => {
            for a in &gt.annotations {
                let frame = (a.image_id - 1) as usize;
                let c = a.centroid.unwrap_or([a.bbox[0] + a.bbox[2] / 2.0, a.bbox[1] + a.bbox[3] / 2.0]);
                per_frame.entry(frame).or_default().push(c);
            }
        }
    }
    let frames: Vec<Vec<[f64; 2]>> = per_frame.into_values().collect();
    let map = render_sequence(&frames, fw, fh, &config.render).map_err(CliError::usage)?;
    echo_config(config, out)?;
    export_image(&map, &out.join("sr_map.png"), config.render.colormap, config.render.gamma)
        .context("writing PNG")?;
    export_raw(&map, &out.join("sr_map.f32")).context("writing raw map")?;
    eprintln!(
        "rendered {} splats over {} frames into {} ({}x{} at {}x)",
        map.splat_count,
        map.frame_count,
        out.display(),
        map.width(),
        map.height(),
        map.factor
    );
    Ok(())
}
