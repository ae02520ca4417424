//! Super-resolution map rendering.
//!
//! Each localized centroid splats a unit-mass isotropic Gaussian onto an
//! upsampled accumulation grid, truncated at 4σ and normalized over its
//! window so interior splats deposit exactly unit mass. Map values then read
//! as local detection counts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{atomic_write_json, IoError};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, RenderError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Gray,
    Hot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Upsampling factor between frame pixels and SR pixels.
    pub factor: usize,
    /// Splat width in SR pixels.
    pub sigma: f64,
    /// Gamma compression applied on export.
    pub gamma: f64,
    pub colormap: Colormap,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { factor: 8, sigma: 1.0, gamma: 0.5, colormap: Colormap::Hot }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(RenderError::Contract("factor must be at least 1".into()));
        }
        if self.sigma <= 0.0 {
            return Err(RenderError::Contract("sigma must be positive".into()));
        }
        if self.gamma <= 0.0 {
            return Err(RenderError::Contract("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Accumulated density grid at `factor`× the frame resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SrMap {
    grid: Vec<f64>,
    pub frame_w: usize,
    pub frame_h: usize,
    pub factor: usize,
    pub sigma: f64,
    pub frame_count: usize,
    pub splat_count: usize,
}

impl SrMap {
    pub fn new(frame_w: usize, frame_h: usize, factor: usize, sigma: f64) -> Result<Self> {
        if frame_w == 0 || frame_h == 0 || factor == 0 {
            return Err(RenderError::Contract("map dimensions must be positive".into()));
        }
        if sigma <= 0.0 {
            return Err(RenderError::Contract("sigma must be positive".into()));
        }
        Ok(Self {
            grid: vec![0.0; frame_w * factor * frame_h * factor],
            frame_w,
            frame_h,
            factor,
            sigma,
            frame_count: 0,
            splat_count: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.frame_w * self.factor
    }

    pub fn height(&self) -> usize {
        self.frame_h * self.factor
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width() + col]
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Adds one unit-mass Gaussian centered at a frame-coordinate centroid.
    /// The window is truncated at 4σ and the kernel normalized over it, so a
    /// splat at least 4σ inside the grid deposits exactly unit mass.
    pub fn splat(&mut self, centroid: [f64; 2]) -> Result<()> {
        let [x, y] = centroid;
        if !(0.0..self.frame_w as f64).contains(&x) || !(0.0..self.frame_h as f64).contains(&y) {
            return Err(RenderError::Contract(format!(
                "centroid {centroid:?} outside the {}x{} frame",
                self.frame_w, self.frame_h
            )));
        }
        let (w, h) = (self.width(), self.height());
        let cx = x * self.factor as f64;
        let cy = y * self.factor as f64;
        let r = 4.0 * self.sigma;
        let j_lo = ((cx - r - 0.5).ceil().max(0.0)) as usize;
        let j_hi = ((cx + r - 0.5).floor().min(w as f64 - 1.0)) as usize;
        let i_lo = ((cy - r - 0.5).ceil().max(0.0)) as usize;
        let i_hi = ((cy + r - 0.5).floor().min(h as f64 - 1.0)) as usize;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let mut weights = Vec::with_capacity((i_hi + 1 - i_lo) * (j_hi + 1 - j_lo));
        let mut sum = 0.0;
        for i in i_lo..=i_hi {
            let dy = (i as f64 + 0.5) - cy;
            for j in j_lo..=j_hi {
                let dx = (j as f64 + 0.5) - cx;
                let wgt = (-(dx * dx + dy * dy) * inv).exp();
                weights.push(wgt);
                sum += wgt;
            }
        }
        if sum <= 0.0 {
            return Err(RenderError::Contract("splat window collapsed".into()));
        }
        let mut k = 0;
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                self.grid[i * w + j] += weights[k] / sum;
                k += 1;
            }
        }
        self.splat_count += 1;
        Ok(())
    }

    /// Sum of two compatible maps.
    pub fn add(&self, other: &SrMap) -> Result<SrMap> {
        if self.frame_w != other.frame_w
            || self.frame_h != other.frame_h
            || self.factor != other.factor
            || self.sigma != other.sigma
        {
            return Err(RenderError::Contract("cannot add maps with different geometry".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.grid.iter_mut().zip(&other.grid) {
            *a += b;
        }
        out.frame_count += other.frame_count;
        out.splat_count += other.splat_count;
        Ok(out)
    }
}

/// Splats every centroid of every frame into one map.
pub fn render_sequence(
    per_frame_centroids: &[Vec<[f64; 2]>],
    frame_w: usize,
    frame_h: usize,
    cfg: &RenderConfig,
) -> Result<SrMap> {
    cfg.validate()?;
    if per_frame_centroids.is_empty() {
        return Err(RenderError::Contract("need at least one frame".into()));
    }
    let mut map = SrMap::new(frame_w, frame_h, cfg.factor, cfg.sigma)?;
    for frame in per_frame_centroids {
        for c in frame {
            map.splat(*c)?;
        }
        map.frame_count += 1;
    }
    Ok(map)
}

fn hot_color(v: f64) -> [u8; 3] {
    // black → red → yellow → white ramp
    let r = (v * 3.0).clamp(0.0, 1.0);
    let g = (v * 3.0 - 1.0).clamp(0.0, 1.0);
    let b = (v * 3.0 - 2.0).clamp(0.0, 1.0);
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Writes an 8-bit PNG after max-normalization and gamma compression.
/// Deterministic: identical maps produce bit-identical files.
pub fn export_image(map: &SrMap, path: &Path, colormap: Colormap, gamma: f64) -> Result<()> {
    if gamma <= 0.0 {
        return Err(RenderError::Contract("gamma must be positive".into()));
    }
    let (w, h) = (map.width(), map.height());
    let mx = map.grid.iter().cloned().fold(0.0f64, f64::max);
    let normalized: Vec<f64> = if mx > 0.0 {
        map.grid.iter().map(|v| (v / mx).powf(gamma)).collect()
    } else {
        vec![0.0; map.grid.len()]
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    }
    match colormap {
        Colormap::Gray => {
            let pixels: Vec<u8> = normalized.iter().map(|v| (v * 255.0).round() as u8).collect();
            let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
                .ok_or_else(|| IoError::Format("gray buffer mismatch".into()))?;
            img.save(path).map_err(IoError::Png)?;
        }
        Colormap::Hot => {
            let pixels: Vec<u8> = normalized.iter().flat_map(|v| hot_color(*v)).collect();
            let img = image::RgbImage::from_raw(w as u32, h as u32, pixels)
                .ok_or_else(|| IoError::Format("rgb buffer mismatch".into()))?;
            img.save(path).map_err(IoError::Png)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrMapHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub frame_w: usize,
    pub frame_h: usize,
    pub factor: usize,
    pub sigma: f64,
    pub frame_count: usize,
    pub splat_count: usize,
}

/// Raw 32-bit float dump with a JSON sidecar, same convention as frames.
pub fn export_raw(map: &SrMap, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(map.grid.len() * 4);
    for v in &map.grid {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    crate::io::atomic_write_bytes(path, &bytes)?;
    let header = SrMapHeader {
        width: map.width(),
        height: map.height(),
        dtype: crate::io::FRAME_DTYPE.into(),
        frame_w: map.frame_w,
        frame_h: map.frame_h,
        factor: map.factor,
        sigma: map.sigma,
        frame_count: map.frame_count,
        splat_count: map.splat_count,
    };
    atomic_write_json(&path.with_extension("json"), &header)?;
    Ok(())
}
