//! Whole-pipeline configuration.
//!
//! One JSON file mirrors every stage's tunables. Unknown keys are rejected,
//! every value is range-checked at load, and the fully resolved config is
//! echoed next to each command's outputs so any artifact can be reproduced
//! from its directory alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::evaluation::EvalConfig;
use crate::loss::LossWeights;
use crate::renderer::RenderConfig;
use crate::simulator::SimConfig;
use crate::training::{InferConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Dataset generation settings: how many independent scenes to simulate and
/// how many consecutive frames each contributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scenes: usize,
    pub frames_per_scene: usize,
    /// Also write 8-bit PNG previews of every frame.
    pub previews: bool,
    pub sim: SimConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { scenes: 150, frames_per_scene: 4, previews: false, sim: SimConfig::default() }
    }
}

impl SimulateConfig {
    pub fn total_frames(&self) -> usize {
        self.scenes * self.frames_per_scene
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.frames_per_scene == 0 {
            return Err(ConfigError::Invalid("scenes and frames_per_scene must be positive".into()));
        }
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Simulates all scenes (in parallel, order-stable) with globally
    /// increasing frame indices.
    pub fn generate(&self, seed: u64) -> Result<Vec<crate::simulator::Frame>> {
        use rayon::prelude::*;
        self.validate()?;
        let fps = self.frames_per_scene;
        let per_scene: Vec<_> = (0..self.scenes)
            .into_par_iter()
            .map(|scene| {
                let scene_seed = crate::rng::derive_seed(seed, "scene-sequence", scene as u64);
                crate::simulator::simulate_sequence(&self.sim, fps, scene_seed).map(|mut frames| {
                    for (k, f) in frames.iter_mut().enumerate() {
                        f.frame_index = scene * fps + k;
                    }
                    frames
                })
            })
            .collect();
        let mut frames = Vec::with_capacity(self.total_frames());
        for r in per_scene {
            frames.extend(r.map_err(|e| ConfigError::Invalid(e.to_string()))?);
        }
        Ok(frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_size: usize,
    pub threshold: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_size: 100, threshold: 0.18 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.test_size == 0 {
            return Err(ConfigError::Invalid("test_size must be positive".into()));
        }
        if !(0.0 < self.threshold && self.threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!("threshold {} outside (0,1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub simulator: SimulateConfig,
    pub split: SplitConfig,
    pub detector: DetectorConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    pub render: RenderConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let inv = |m: String| ConfigError::Invalid(m);
        self.simulator.validate()?;
        self.split.validate()?;
        self.detector.validate().map_err(|e| inv(e.to_string()))?;
        self.loss.validate().map_err(|e| inv(e.to_string()))?;
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        self.infer.validate().map_err(|e| inv(e.to_string()))?;
        self.eval.validate().map_err(|e| inv(e.to_string()))?;
        self.render.validate().map_err(|e| inv(e.to_string()))?;
        let sim = &self.simulator.sim;
        if sim.width % 2 != 0 || sim.height % 2 != 0 {
            return Err(inv(format!("frame {}x{} must be even for the four-patch split", sim.width, sim.height)));
        }
        if self.detector.patch_w * 2 != sim.width || self.detector.patch_h * 2 != sim.height {
            return Err(inv(format!(
                "detector patch {}x{} must be half the {}x{} frame",
                self.detector.patch_w, self.detector.patch_h, sim.width, sim.height
            )));
        }
        if self.split.test_size >= self.simulator.total_frames() {
            return Err(inv(format!(
                "test_size {} must be below the {} generated frames",
                self.split.test_size,
                self.simulator.total_frames()
            )));
        }
        Ok(())
    }

    /// Loads a config: defaults, overlaid by the optional file, overlaid by
    /// `key.path=value` overrides, then validated.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(PipelineConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
            let file_value: serde_json::Value = serde_json::from_str(&text)?;
            merge(&mut value, &file_value);
        }
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: PipelineConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Recursive overlay: objects merge, everything else replaces.
fn merge(base: &mut serde_json::Value, other: &serde_json::Value) {
    match (base, other) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Applies one `dotted.path=value` override. The value parses as JSON when
/// possible and falls back to a plain string.
pub fn apply_override(root: &mut serde_json::Value, expr: &str) -> Result<()> {
    let Some((path, raw)) = expr.split_once('=') else {
        return Err(ConfigError::Invalid(format!("override `{expr}` must look like key.path=value")));
    };
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override path `{path}` crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"split": {"test_size": 10, "bogus": 1}}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path), &[]).is_err());
        std::fs::write(&path, r#"{"not_a_section": {}}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn partial_file_overlays_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 9, "split": {"threshold": 0.25}}"#).unwrap();
        let cfg = PipelineConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.split.threshold, 0.25);
        assert_eq!(cfg.split.test_size, 100);
        assert_eq!(cfg.detector, DetectorConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 9}"#).unwrap();
        let cfg = PipelineConfig::load(
            Some(&path),
            &["seed=42".into(), "train.epochs=3".into(), "simulator.sim.noise_sigma=0.1".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.simulator.sim.noise_sigma, 0.1);
    }

    #[test]
    fn range_violations_are_caught() {
        assert!(PipelineConfig::load(None, &["split.threshold=1.5".into()]).is_err());
        assert!(PipelineConfig::load(None, &["simulator.frames_per_scene=0".into()]).is_err());
        assert!(PipelineConfig::load(None, &["detector.patch_w=32".into()]).is_err());
        assert!(PipelineConfig::load(None, &["train.learning_rate=-1".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_json_pretty();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
