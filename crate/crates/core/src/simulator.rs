//! Synthetic microbubble sequence generation.
//!
//! Stands in for an acquisition: piecewise-linear vessels carry bubbles that
//! advect along the path, each rendered as a depth-dependent anisotropic
//! Gaussian blob plus additive background noise. Every frame carries exact
//! sub-pixel centroids and boxes, so the ground truth is free.
//!
//! Coordinates are corner-convention: pixel (row i, col j) spans
//! `[j, j+1) × [i, i+1)` with its center at `(j+0.5, i+0.5)`; a centroid
//! `(x, y)` therefore lives in `[0, W) × [0, H)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::NumArray;
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("frame invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

// ── domain types ────────────────────────────────────────────────────────

/// A piecewise-linear vessel path with a tube radius and flow speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub control_points: Vec<[f64; 2]>,
    pub radius: f64,
    pub flow_speed: f64,
}

impl Vessel {
    pub fn segment_lengths(&self) -> Vec<f64> {
        self.control_points
            .windows(2)
            .map(|w| {
                let dx = w[1][0] - w[0][0];
                let dy = w[1][1] - w[0][1];
                (dx * dx + dy * dy).sqrt()
            })
            .collect()
    }

    pub fn total_length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    /// Position and unit tangent at arc length `s` (clamped to the path).
    pub fn point_at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let lengths = self.segment_lengths();
        let mut remaining = s.max(0.0);
        for (seg, len) in self.control_points.windows(2).zip(&lengths) {
            if remaining <= *len {
                let t = if *len > 0.0 { (remaining / len).min(1.0) } else { 0.0 };
                let x = seg[0][0] + t * (seg[1][0] - seg[0][0]);
                let y = seg[0][1] + t * (seg[1][1] - seg[0][1]);
                let tangent = if *len > 0.0 {
                    [(seg[1][0] - seg[0][0]) / len, (seg[1][1] - seg[0][1]) / len]
                } else {
                    [1.0, 0.0]
                };
                return ([x, y], tangent);
            }
            remaining -= len;
        }
        // past the end: clamp to the final point
        let last = *self.control_points.last().unwrap();
        let n = self.control_points.len();
        let prev = self.control_points[n - 2];
        let dx = last[0] - prev[0];
        let dy = last[1] - prev[1];
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        (last, [dx / len, dy / len])
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.control_points.len() < 2 {
            return Err(SimError::Invariant("vessel needs at least 2 control points".into()));
        }
        if self.radius <= 0.0 || self.flow_speed <= 0.0 {
            return Err(SimError::Invariant("vessel radius and flow speed must be positive".into()));
        }
        let r = self.radius;
        for p in &self.control_points {
            if p[0] < r - 1e-9
                || p[0] > width as f64 - r + 1e-9
                || p[1] < r - 1e-9
                || p[1] > height as f64 - r + 1e-9
            {
                return Err(SimError::Invariant(format!(
                    "control point {p:?} leaves the frame when inflated by radius {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Depth-affine point-spread model: `sigma(y) = base + slope·y`, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfModel {
    /// (base, slope) of the lateral sigma in pixels as a function of depth row.
    pub sigma_lateral: (f64, f64),
    /// (base, slope) of the axial sigma in pixels as a function of depth row.
    pub sigma_axial: (f64, f64),
    pub amplitude: f64,
}

impl PsfModel {
    pub fn lateral_at(&self, depth: f64) -> f64 {
        self.sigma_lateral.0 + self.sigma_lateral.1 * depth
    }

    pub fn axial_at(&self, depth: f64) -> f64 {
        self.sigma_axial.0 + self.sigma_axial.1 * depth
    }

    pub fn validate(&self, height: usize) -> Result<()> {
        let h = height as f64;
        for (name, (base, slope)) in [("lateral", self.sigma_lateral), ("axial", self.sigma_axial)] {
            if base <= 0.0 || base + slope * h <= 0.0 {
                return Err(SimError::Config(format!("{name} sigma must stay positive over the depth range")));
            }
        }
        if self.amplitude <= 0.0 {
            return Err(SimError::Config("PSF amplitude must be positive".into()));
        }
        Ok(())
    }
}

/// One annotated microbubble: exact sub-pixel centroid plus a corner-convention
/// `(x, y, w, h)` box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbAnnotation {
    pub id: u64,
    pub centroid: [f64; 2],
    pub bbox: [f64; 4],
}

impl MbAnnotation {
    pub fn contains_centroid(&self) -> bool {
        let [x, y] = self.centroid;
        let [bx, by, bw, bh] = self.bbox;
        bw > 0.0 && bh > 0.0 && x >= bx - 1e-9 && x <= bx + bw + 1e-9 && y >= by - 1e-9 && y <= by + bh + 1e-9
    }
}

/// A single simulated frame with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: NumArray,
    pub annotations: Vec<MbAnnotation>,
    pub frame_index: usize,
}

impl Frame {
    pub fn new(image: NumArray, annotations: Vec<MbAnnotation>, frame_index: usize) -> Result<Self> {
        let f = Self { image, annotations, frame_index };
        f.validate()?;
        Ok(f)
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.shape().len() != 2 {
            return Err(SimError::Invariant("frame image must be rank 2".into()));
        }
        let (h, w) = (self.height() as f64, self.width() as f64);
        for a in &self.annotations {
            let [x, y] = a.centroid;
            if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
                return Err(SimError::Invariant(format!("centroid {:?} outside [0,{w})x[0,{h})", a.centroid)));
            }
            if !a.contains_centroid() {
                return Err(SimError::Invariant(format!(
                    "box {:?} does not contain centroid {:?}",
                    a.bbox, a.centroid
                )));
            }
        }
        Ok(())
    }
}

// ── configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of vessels per scene.
    pub vessel_count: (usize, usize),
    pub vessel_radius: (f64, f64),
    /// Flow speed range in pixels per frame.
    pub flow_speed: (f64, f64),
    pub path_segments: usize,
    pub segment_length: f64,
    /// Inclusive range of bubbles per scene (constant over a sequence).
    pub bubble_count: (usize, usize),
    /// Transverse jitter as a fraction of the vessel radius, in [0, 1).
    pub lateral_jitter: f64,
    pub psf: PsfModel,
    pub noise_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            vessel_count: (3, 6),
            vessel_radius: (2.0, 5.0),
            flow_speed: (4.0, 10.0),
            path_segments: 8,
            segment_length: 22.0,
            bubble_count: (2, 20),
            lateral_jitter: 0.8,
            psf: PsfModel {
                sigma_lateral: (1.7, 0.004),
                sigma_axial: (1.3, 0.008),
                amplitude: 1.0,
            },
            noise_sigma: 0.06,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(SimError::Config("frame must be at least 8x8".into()));
        }
        if self.vessel_count.0 > self.vessel_count.1 {
            return Err(SimError::Config("vessel_count range is empty".into()));
        }
        if self.vessel_radius.0 <= 0.0 || self.vessel_radius.0 > self.vessel_radius.1 {
            return Err(SimError::Config("vessel_radius range must be positive and ordered".into()));
        }
        if self.flow_speed.0 <= 0.0 || self.flow_speed.0 > self.flow_speed.1 {
            return Err(SimError::Config("flow_speed range must be positive and ordered".into()));
        }
        if self.path_segments == 0 {
            return Err(SimError::Config("path_segments must be at least 1".into()));
        }
        if self.segment_length <= 0.0 {
            return Err(SimError::Config("segment_length must be positive".into()));
        }
        if self.bubble_count.0 > self.bubble_count.1 {
            return Err(SimError::Config("bubble_count range is empty".into()));
        }
        if !(0.0..1.0).contains(&self.lateral_jitter) {
            return Err(SimError::Config("lateral_jitter must be in [0, 1)".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(SimError::Config("noise_sigma must be non-negative".into()));
        }
        self.psf.validate(self.height)?;
        let r = self.vessel_radius.1;
        if 2.0 * r >= self.width.min(self.height) as f64 {
            return Err(SimError::Config(format!(
                "vessel radius {r} cannot fit inside a {}x{} frame",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Expected bubbles per frame; the midpoint of the configured range.
    pub fn mean_bubble_target(&self) -> f64 {
        (self.bubble_count.0 + self.bubble_count.1) as f64 / 2.0
    }
}

// ── scene construction ──────────────────────────────────────────────────

/// Samples a set of vessels that fit inside the frame when inflated by
/// their radius. Deterministic for a given RNG state.
pub fn build_scene<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<Vessel>> {
    cfg.validate()?;
    let count = rng.gen_range(cfg.vessel_count.0..=cfg.vessel_count.1);
    let mut vessels = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = rng.gen_range(cfg.vessel_radius.0..=cfg.vessel_radius.1);
        let speed = rng.gen_range(cfg.flow_speed.0..=cfg.flow_speed.1);
        let lo_x = radius;
        let hi_x = cfg.width as f64 - radius;
        let lo_y = radius;
        let hi_y = cfg.height as f64 - radius;
        if lo_x >= hi_x || lo_y >= hi_y {
            return Err(SimError::Config(format!("vessel of radius {radius} cannot fit in frame")));
        }
        let clamp = |p: [f64; 2]| -> [f64; 2] { [p[0].clamp(lo_x, hi_x), p[1].clamp(lo_y, hi_y)] };
        let center = [(lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0];
        let mut pts = Vec::with_capacity(cfg.path_segments + 1);
        let mut p = [rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y)];
        pts.push(p);
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 0..cfg.path_segments {
            heading += rng.gen_range(-0.6..0.6);
            let mut next = [
                p[0] + cfg.segment_length * heading.cos(),
                p[1] + cfg.segment_length * heading.sin(),
            ];
            if next[0] < lo_x || next[0] > hi_x || next[1] < lo_y || next[1] > hi_y {
                // turn toward the frame center and try again
                heading = (center[1] - p[1]).atan2(center[0] - p[0]) + rng.gen_range(-0.3..0.3);
                next = [
                    p[0] + cfg.segment_length * heading.cos(),
                    p[1] + cfg.segment_length * heading.sin(),
                ];
                next = clamp(next);
            }
            let d = ((next[0] - p[0]).powi(2) + (next[1] - p[1]).powi(2)).sqrt();
            if d < 1e-6 {
                // degenerate after clamping: step halfway toward the center
                next = clamp([(p[0] + center[0]) / 2.0, (p[1] + center[1]) / 2.0]);
                heading = (next[1] - p[1]).atan2(next[0] - p[0]);
            }
            pts.push(next);
            p = next;
        }
        let vessel = Vessel { control_points: pts, radius, flow_speed: speed };
        vessel.validate(cfg.width, cfg.height)?;
        vessels.push(vessel);
    }
    Ok(vessels)
}

// ── bubble dynamics ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleState {
    pub vessel: usize,
    pub arc: f64,
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneState {
    pub bubbles: Vec<BubbleState>,
}

/// Places the scene's bubbles uniformly along the vessels, with vessel choice
/// weighted by path length.
pub fn init_bubbles<R: Rng>(scene: &[Vessel], cfg: &SimConfig, rng: &mut R) -> SceneState {
    if scene.is_empty() {
        return SceneState::default();
    }
    let total = rng.gen_range(cfg.bubble_count.0..=cfg.bubble_count.1);
    let lengths: Vec<f64> = scene.iter().map(Vessel::total_length).collect();
    let length_sum: f64 = lengths.iter().sum();
    let mut bubbles = Vec::with_capacity(total);
    for _ in 0..total {
        let mut pick = rng.gen_range(0.0..length_sum);
        let mut vessel = scene.len() - 1;
        for (i, len) in lengths.iter().enumerate() {
            if pick < *len {
                vessel = i;
                break;
            }
            pick -= len;
        }
        let arc = rng.gen_range(0.0..lengths[vessel]);
        let lateral = rng.gen_range(-1.0..1.0) * cfg.lateral_jitter * scene[vessel].radius;
        bubbles.push(BubbleState { vessel, arc, lateral });
    }
    SceneState { bubbles }
}

/// Advances every bubble by `flow_speed · dt` along its vessel. Bubbles that
/// run off the end respawn at the entry, carrying the overshoot, with fresh
/// transverse jitter. Per-vessel bubble counts are preserved.
pub fn advance_bubbles<R: Rng>(scene: &[Vessel], state: &SceneState, dt: f64, cfg: &SimConfig, rng: &mut R) -> SceneState {
    let mut out = state.clone();
    if dt == 0.0 {
        return out;
    }
    for b in &mut out.bubbles {
        let vessel = &scene[b.vessel];
        let len = vessel.total_length();
        b.arc += vessel.flow_speed * dt;
        while b.arc >= len {
            b.arc -= len;
            b.lateral = rng.gen_range(-1.0..1.0) * cfg.lateral_jitter * vessel.radius;
        }
    }
    out
}

/// World position of a bubble: path point plus transverse offset.
pub fn bubble_position(scene: &[Vessel], b: &BubbleState) -> [f64; 2] {
    let (p, t) = scene[b.vessel].point_at(b.arc);
    // left-hand normal of the tangent
    [p[0] - t[1] * b.lateral, p[1] + t[0] * b.lateral]
}

// ── rendering ───────────────────────────────────────────────────────────

/// Renders one frame: a sum of per-bubble anisotropic Gaussians (sigmas from
/// the PSF model at the bubble's depth), additive Gaussian background noise,
/// clipped at zero. Annotations carry exact centroids; boxes extend ±3σ per
/// axis, clipped to the frame.
pub fn render_frame<R: Rng>(
    scene: &[Vessel],
    state: &SceneState,
    cfg: &SimConfig,
    frame_index: usize,
    rng: &mut R,
) -> Result<Frame> {
    let (w, h) = (cfg.width, cfg.height);
    let mut img = vec![0.0f64; w * h];
    let mut annotations = Vec::with_capacity(state.bubbles.len());
    for (id, b) in state.bubbles.iter().enumerate() {
        let [x, y] = bubble_position(scene, b);
        let sl = cfg.psf.lateral_at(y);
        let sa = cfg.psf.axial_at(y);
        let i_lo = ((y - 4.0 * sa - 0.5).ceil().max(0.0)) as usize;
        let i_hi = ((y + 4.0 * sa - 0.5).floor().min(h as f64 - 1.0)) as usize;
        let j_lo = ((x - 4.0 * sl - 0.5).ceil().max(0.0)) as usize;
        let j_hi = ((x + 4.0 * sl - 0.5).floor().min(w as f64 - 1.0)) as usize;
        for i in i_lo..=i_hi {
            let dy = (i as f64 + 0.5) - y;
            let ey = dy * dy / (2.0 * sa * sa);
            for j in j_lo..=j_hi {
                let dx = (j as f64 + 0.5) - x;
                img[i * w + j] += cfg.psf.amplitude * (-(dx * dx / (2.0 * sl * sl) + ey)).exp();
            }
        }
        let bx = (x - 3.0 * sl).max(0.0);
        let by = (y - 3.0 * sa).max(0.0);
        let bw = (x + 3.0 * sl).min(w as f64) - bx;
        let bh = (y + 3.0 * sa).min(h as f64) - by;
        annotations.push(MbAnnotation { id: id as u64, centroid: [x, y], bbox: [bx, by, bw, bh] });
    }
    if cfg.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += cfg.noise_sigma * z;
        }
    }
    for v in img.iter_mut() {
        *v = v.max(0.0);
    }
    let image = NumArray::from_vec(vec![h, w], img).map_err(|e| SimError::Invariant(e.to_string()))?;
    Frame::new(image, annotations, frame_index)
}

/// Generates a temporally coherent sequence: one scene, bubbles advected
/// between frames, per-frame noise substreams. Bit-identical for a given
/// seed regardless of thread count.
pub fn simulate_sequence(cfg: &SimConfig, n_frames: usize, seed: u64) -> Result<Vec<Frame>> {
    if n_frames == 0 {
        return Err(SimError::Config("n_frames must be at least 1".into()));
    }
    cfg.validate()?;
    let scene = build_scene(cfg, &mut substream(seed, "scene", 0))?;
    let mut advance_rng = substream(seed, "advance", 0);
    let mut state = init_bubbles(&scene, cfg, &mut substream(seed, "bubbles", 0));
    let mut states = Vec::with_capacity(n_frames);
    states.push(state.clone());
    for _ in 1..n_frames {
        state = advance_bubbles(&scene, &state, 1.0, cfg, &mut advance_rng);
        states.push(state.clone());
    }
    states
        .par_iter()
        .enumerate()
        .map(|(f, st)| render_frame(&scene, st, cfg, f, &mut substream(seed, "noise", f as u64)))
        .collect()
}
