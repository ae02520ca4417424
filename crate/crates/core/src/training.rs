//! From-scratch training of the detector on synthetic frames, and the
//! patch-based inference path shared by validation and the CLI.
//!
//! Determinism contract: every stochastic choice (shuffles, augmentations)
//! is drawn from a substream keyed by `(seed, label, epoch/frame)`, batch
//! gradients are computed in parallel but reduced in index order, and the
//! optimizer state rides along in checkpoints. Resuming from epoch k
//! therefore replays exactly what an uninterrupted run would have done.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{augment, split_patches, DatasetError, PatchLayout, SplitManifest};
use crate::detector::{
    save_checkpoint, Checkpoint, DetectionSet, Detector, DetectorError, ParamSet,
};
use crate::evaluation::{evaluate, EvalConfig, EvalError, EvalReport, FrameEval};
use crate::io::IoError;
use crate::loss::{set_loss, LossError, LossWeights};
use crate::numerics::{Graph, NumArray, NumericsError};
use crate::postprocess::{extract, merge_patches, Detection, PostprocessError};
use crate::rng::substream;
use crate::simulator::{Frame, SimError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

// ── configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per optimizer step; each frame contributes its four patches.
    pub batch_frames: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; `null` disables clipping.
    pub grad_clip: Option<f64>,
    /// Epoch at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    /// Run validation every this many epochs (and always on the last).
    pub val_every: usize,
    pub augment: bool,
    /// Stop once validation clears both bars (when both are set).
    pub early_stop_ap50: Option<f64>,
    pub early_stop_loc_recall: Option<f64>,
    /// Centroid tolerance used for the validation localization metrics.
    pub val_loc_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_frames: 2,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            grad_clip: Some(1.0),
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
            val_every: 2,
            augment: true,
            early_stop_ap50: Some(0.80),
            early_stop_loc_recall: Some(0.70),
            val_loc_tolerance: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_frames == 0 || self.val_every == 0 {
            return err("epochs, batch_frames and val_every must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return err("learning_rate must be positive, weight_decay non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return err(format!("grad_clip {c} must be positive"));
            }
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return err("lr_drop_factor must be in (0,1]".into());
        }
        if !(self.val_loc_tolerance > 0.0) {
            return err("val_loc_tolerance must be positive".into());
        }
        for t in [self.early_stop_ap50, self.early_stop_loc_recall].into_iter().flatten() {
            if !(0.0..=1.0).contains(&t) {
                return err(format!("early-stop threshold {t} outside [0,1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub score_threshold: f64,
    /// Border band for cross-patch deduplication, in pixels.
    pub border_band: f64,
    /// Suppression radius inside the band, in pixels.
    pub dedup_radius: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { score_threshold: 0.5, border_band: 4.0, dedup_radius: 3.0 }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.score_threshold && self.score_threshold < 1.0) {
            return Err(TrainError::Config(format!(
                "score_threshold {} outside (0,1)",
                self.score_threshold
            )));
        }
        if self.border_band < 0.0 || self.dedup_radius <= 0.0 {
            return Err(TrainError::Config("border_band must be >= 0 and dedup_radius > 0".into()));
        }
        Ok(())
    }
}

// ── Adam optimizer ──────────────────────────────────────────────────────

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay on matrix-shaped tensors (biases,
/// norms and emb° vectors are exempt).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<NumArray>,
    v: Vec<NumArray>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.values().map(|p| NumArray::zeros(p.shape())).collect(),
            v: params.values().map(|p| NumArray::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[NumArray], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let old = params.value_at(i);
            let decay = if old.shape().len() >= 2 { weight_decay } else { 0.0 };
            let g = grads[i].data();
            let mut new = old.data().to_vec();
            let m = self.m[i].data().to_vec();
            let v = self.v[i].data().to_vec();
            let mut m_new = Vec::with_capacity(m.len());
            let mut v_new = Vec::with_capacity(v.len());
            for j in 0..new.len() {
                let mj = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                let vj = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                new[j] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + decay * new[j]);
                m_new.push(mj);
                v_new.push(vj);
            }
            let shape = old.shape().to_vec();
            params.set(i, NumArray::from_vec(shape.clone(), new).map_err(TrainError::from)?);
            self.m[i] = NumArray::from_vec(shape.clone(), m_new).map_err(TrainError::from)?;
            self.v[i] = NumArray::from_vec(shape, v_new).map_err(TrainError::from)?;
        }
        Ok(())
    }
}

// ── inference path ──────────────────────────────────────────────────────

/// Patch targets in normalized `(cx, cy, w, h)`.
fn patch_targets(patch: &Frame) -> Vec<[f64; 4]> {
    let (w, h) = (patch.width() as f64, patch.height() as f64);
    patch
        .annotations
        .iter()
        .map(|a| {
            [
                (a.bbox[0] + a.bbox[2] / 2.0) / w,
                (a.bbox[1] + a.bbox[3] / 2.0) / h,
                a.bbox[2] / w,
                a.bbox[3] / h,
            ]
        })
        .collect()
}

fn patch_image(patch: &Frame) -> Result<NumArray> {
    let (h, w) = (patch.height(), patch.width());
    Ok(patch.image.reshaped(vec![1, h, w]).map_err(TrainError::from)?)
}

/// Full per-frame inference: four-patch split, per-patch detection,
/// thresholding, and border-deduplicated merge back to frame coordinates.
pub fn infer_frame(detector: &Detector, frame: &Frame, cfg: &InferConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let layout = PatchLayout::quad(frame.width(), frame.height())?;
    let patches = split_patches(frame, &layout)?;
    let mut per_patch = Vec::with_capacity(4);
    for (pi, p) in patches.iter().enumerate() {
        let image = patch_image(p)?;
        let pred: DetectionSet = detector.predict_patch(&image)?;
        per_patch.push(extract(&pred, p.width(), p.height(), cfg.score_threshold, pi)?);
    }
    Ok(merge_patches(&per_patch, &layout, cfg.border_band, cfg.dedup_radius)?)
}

/// Inference over many frames, parallel but order-stable.
pub fn infer_frames(detector: &Detector, frames: &[&Frame], cfg: &InferConfig) -> Result<Vec<Vec<Detection>>> {
    frames
        .par_iter()
        .map(|f| infer_frame(detector, f, cfg))
        .collect()
}

// ── training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValSummary {
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub loc_precision: Option<f64>,
    pub loc_recall: Option<f64>,
}

impl ValSummary {
    fn from_report(r: &EvalReport) -> Self {
        Self { map: r.map, ap50: r.ap50, loc_precision: r.loc_precision, loc_recall: r.loc_recall }
    }
}

/// One JSON-lines record per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub l1_loss: f64,
    pub giou_loss: f64,
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<ValSummary>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub first_epoch_loss: f64,
    pub stopped_early: bool,
    pub last_val: Option<ValSummary>,
}

pub struct Trainer {
    pub detector: Detector,
    pub adam: AdamState,
    /// Next epoch to run (0-based).
    pub epoch: usize,
    pub seed: u64,
}

impl Trainer {
    pub fn new(detector: Detector, seed: u64) -> Self {
        let adam = AdamState::new(&detector.params);
        Self { detector, adam, epoch: 0, seed }
    }

    /// Restores detector, optimizer moments, epoch counter and seed.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let detector = Detector::from_checkpoint(ckpt)?;
        let mut trainer = Self::new(detector, 0);
        let meta = &ckpt.meta;
        trainer.epoch = meta.get("epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        trainer.seed = meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        trainer.adam.t = meta.get("adam_t").and_then(|v| v.as_u64()).unwrap_or(0);
        if !ckpt.extra.is_empty() {
            let n = trainer.detector.params.len();
            if ckpt.extra.len() != 2 * n {
                return Err(TrainError::Config(format!(
                    "checkpoint carries {} optimizer tensors, expected {}",
                    ckpt.extra.len(),
                    2 * n
                )));
            }
            for i in 0..n {
                let name = trainer.detector.params.name_at(i);
                let (mn, mv) = (&ckpt.extra[i], &ckpt.extra[n + i]);
                if mn.0 != format!("adam.m.{name}") || mv.0 != format!("adam.v.{name}") {
                    return Err(TrainError::Config(format!("optimizer tensor order mismatch at {name}")));
                }
                trainer.adam.m[i] = mn.1.clone();
                trainer.adam.v[i] = mv.1.clone();
            }
        }
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_detector(&self.detector);
        for (i, (name, _)) in self.detector.params.iter().enumerate().map(|(i, nv)| (i, nv)) {
            ckpt.extra.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
        }
        for (i, (name, _)) in self.detector.params.iter().enumerate().map(|(i, nv)| (i, nv)) {
            ckpt.extra.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        ckpt.meta = serde_json::json!({
            "epoch": self.epoch,
            "seed": self.seed,
            "adam_t": self.adam.t,
        });
        ckpt
    }

    /// Loss and parameter gradients for a batch of patches, averaged.
    /// Patches are processed in parallel; the reduction is sequential in
    /// index order, so results do not depend on thread scheduling.
    fn batch_step(
        &self,
        batch: &[(NumArray, Vec<[f64; 4]>)],
        weights: &LossWeights,
    ) -> Result<(f64, f64, f64, f64, Vec<NumArray>)> {
        let nq = self.detector.config.queries;
        for (_, gt) in batch {
            if gt.len() >= nq {
                return Err(TrainError::Config(format!(
                    "patch carries {} ground truths but the detector has only {nq} queries",
                    gt.len()
                )));
            }
        }
        let results: Vec<Result<(f64, f64, f64, f64, Vec<Option<NumArray>>)>> = batch
            .par_iter()
            .map(|(image, gt)| {
                let mut g = Graph::new();
                let bound = self.detector.bind(&mut g);
                let out = self.detector.forward(&mut g, &bound, image)?;
                let layers = if self.detector.config.aux_loss {
                    out.layers.clone()
                } else {
                    vec![*out.final_layer()]
                };
                let loss = set_loss(&mut g, &layers, gt, weights, None)?;
                let value = g.value(loss.total).scalar_value().map_err(TrainError::from)?;
                let mut grads = g.backward(loss.total)?;
                let param_grads: Vec<Option<NumArray>> =
                    bound.ids.iter().map(|id| grads.take(*id)).collect();
                Ok((value, loss.class_component, loss.l1_component, loss.giou_component, param_grads))
            })
            .collect();
        let mut total = vec![];
        let scale = 1.0 / batch.len() as f64;
        let (mut loss_sum, mut ce_sum, mut l1_sum, mut gi_sum) = (0.0, 0.0, 0.0, 0.0);
        for r in results {
            let (value, ce, l1, gi, grads) = r?;
            loss_sum += value;
            ce_sum += ce;
            l1_sum += l1;
            gi_sum += gi;
            if total.is_empty() {
                total = self
                    .detector
                    .params
                    .values()
                    .map(|p| vec![0.0; p.numel()])
                    .collect();
            }
            for (acc, g) in total.iter_mut().zip(&grads) {
                if let Some(g) = g {
                    for (a, v) in acc.iter_mut().zip(g.data()) {
                        *a += v * scale;
                    }
                }
            }
        }
        let grads: Vec<NumArray> = total
            .into_iter()
            .zip(self.detector.params.values())
            .map(|(data, p)| NumArray::from_vec(p.shape().to_vec(), data).map_err(TrainError::from))
            .collect::<Result<_>>()?;
        Ok((loss_sum * scale, ce_sum * scale, l1_sum * scale, gi_sum * scale, grads))
    }

    fn clip_gradients(grads: &mut [NumArray], max_norm: f64) -> Result<()> {
        let norm: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in grads.iter_mut() {
                let shape = g.shape().to_vec();
                let data = g.data().iter().map(|v| v * scale).collect();
                *g = NumArray::from_vec(shape, data).map_err(TrainError::from)?;
            }
        }
        Ok(())
    }

    /// Runs training epochs. `frames` is the full dataset; the manifest
    /// selects training and held-out frames. Calls `log` once per epoch and
    /// writes a checkpoint after every epoch when a path is given.
    pub fn run(
        &mut self,
        frames: &[Frame],
        manifest: &SplitManifest,
        train_cfg: &TrainConfig,
        loss_weights: &LossWeights,
        infer_cfg: &InferConfig,
        checkpoint_path: Option<&Path>,
        mut log: impl FnMut(&EpochLog),
    ) -> Result<TrainOutcome> {
        train_cfg.validate()?;
        loss_weights.validate().map_err(TrainError::from)?;
        infer_cfg.validate()?;
        if manifest.train_ids.is_empty() {
            return Err(TrainError::Config("manifest has no training frames".into()));
        }
        for &i in manifest.train_ids.iter().chain(&manifest.test_ids) {
            if i >= frames.len() {
                return Err(TrainError::Config(format!("manifest references frame {i} of {}", frames.len())));
            }
        }
        let (fw, fh) = (frames[0].width(), frames[0].height());
        let layout = PatchLayout::quad(fw, fh)?;
        // the object-query budget must exceed any patch's ground-truth count
        let mut worst = 0;
        for f in frames {
            for p in split_patches(f, &layout)? {
                worst = worst.max(p.annotations.len());
            }
        }
        if worst >= self.detector.config.queries {
            return Err(TrainError::Config(format!(
                "a patch carries {worst} ground truths; queries must exceed that, got {}",
                self.detector.config.queries
            )));
        }

        let val_frames: Vec<&Frame> = manifest.test_ids.iter().map(|&i| &frames[i]).collect();
        let eval_cfg = EvalConfig { loc_tolerance: train_cfg.val_loc_tolerance, ..EvalConfig::default() };

        let mut first_epoch_loss = f64::NAN;
        let mut final_loss = f64::NAN;
        let mut last_val: Option<ValSummary> = None;
        let mut stopped_early = false;
        let mut epochs_run = 0;

        while self.epoch < train_cfg.epochs {
            let epoch = self.epoch;
            let started = Instant::now();
            let lr = match train_cfg.lr_drop_epoch {
                Some(drop) if epoch >= drop => train_cfg.learning_rate * train_cfg.lr_drop_factor,
                _ => train_cfg.learning_rate,
            };
            let mut order: Vec<usize> = manifest.train_ids.to_vec();
            {
                use rand::seq::SliceRandom;
                order.shuffle(&mut substream(self.seed, "shuffle", epoch as u64));
            }
            let (mut loss_acc, mut ce_acc, mut l1_acc, mut gi_acc) = (0.0, 0.0, 0.0, 0.0);
            let mut steps = 0;
            for chunk in order.chunks(train_cfg.batch_frames) {
                let mut batch = Vec::with_capacity(chunk.len() * 4);
                for &fi in chunk {
                    let frame = if train_cfg.augment {
                        augment(
                            &frames[fi],
                            &mut substream(self.seed, "augment", (epoch as u64) << 32 | fi as u64),
                        )?
                    } else {
                        frames[fi].clone()
                    };
                    for p in split_patches(&frame, &layout)? {
                        let image = patch_image(&p)?;
                        let targets = patch_targets(&p);
                        batch.push((image, targets));
                    }
                }
                let (loss, ce, l1, gi, mut grads) = self.batch_step(&batch, loss_weights)?;
                if let Some(max_norm) = train_cfg.grad_clip {
                    Self::clip_gradients(&mut grads, max_norm)?;
                }
                self.adam.step(&mut self.detector.params, &grads, lr, train_cfg.weight_decay)?;
                loss_acc += loss;
                ce_acc += ce;
                l1_acc += l1;
                gi_acc += gi;
                steps += 1;
            }
            let epoch_loss = loss_acc / steps as f64;
            if epoch == 0 {
                first_epoch_loss = epoch_loss;
            }
            if first_epoch_loss.is_nan() {
                first_epoch_loss = epoch_loss;
            }
            final_loss = epoch_loss;
            self.epoch += 1;
            epochs_run += 1;

            let is_last = self.epoch == train_cfg.epochs;
            let val = if !val_frames.is_empty() && (epoch % train_cfg.val_every == 0 || is_last) {
                let dets = infer_frames(&self.detector, &val_frames, infer_cfg)?;
                let evals: Vec<FrameEval> = val_frames
                    .iter()
                    .zip(dets)
                    .map(|(f, d)| FrameEval::from_frame(f, d))
                    .collect();
                let report = evaluate(&evals, &eval_cfg)?;
                Some(ValSummary::from_report(&report))
            } else {
                None
            };
            if val.is_some() {
                last_val = val.clone();
            }

            if let Some(path) = checkpoint_path {
                save_checkpoint(path, &self.checkpoint())?;
            }
            log(&EpochLog {
                epoch,
                loss: epoch_loss,
                class_loss: ce_acc / steps as f64,
                l1_loss: l1_acc / steps as f64,
                giou_loss: gi_acc / steps as f64,
                learning_rate: lr,
                val: val.clone(),
                seconds: started.elapsed().as_secs_f64(),
            });

            if let (Some(ap_bar), Some(rec_bar)) = (train_cfg.early_stop_ap50, train_cfg.early_stop_loc_recall) {
                if let Some(v) = &val {
                    if v.ap50.unwrap_or(0.0) >= ap_bar && v.loc_recall.unwrap_or(0.0) >= rec_bar {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(TrainOutcome {
            epochs_run,
            final_loss,
            first_epoch_loss,
            stopped_early,
            last_val,
        })
    }
}
