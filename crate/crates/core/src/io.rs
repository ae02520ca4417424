//! File formats and atomic writes.
//!
//! Frames are stored as raw little-endian 32-bit floats with a JSON sidecar
//! header; ground truth is a single COCO JSON. All writes go through a
//! temp-file-plus-rename so a killed run never leaves a truncated artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CocoDataset;
use crate::numerics::NumArray;
use crate::simulator::{Frame, MbAnnotation};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("JSON error on {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("PNG encoding failed: {0}")]
    Png(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a uniquely named temp file in the same directory, then renames
/// into place. Rename is atomic on a single filesystem.
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp.{}.{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    atomic_write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

// ── raw frame format ────────────────────────────────────────────────────

pub const FRAME_DTYPE: &str = "float32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub frame_index: usize,
}

pub fn frames_dir(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("frames")
}

pub fn ground_truth_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("ground_truth.json")
}

fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

/// Writes `frame_XXXXXX.f32` plus its sidecar header.
pub fn write_frame_raw(dir: &Path, frame: &Frame) -> Result<()> {
    let name = crate::dataset::frame_file_name(frame.frame_index);
    let raw_path = dir.join(&name);
    let mut bytes = Vec::with_capacity(frame.image.numel() * 4);
    for v in frame.image.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    atomic_write_bytes(&raw_path, &bytes)?;
    let header = FrameHeader {
        width: frame.width(),
        height: frame.height(),
        dtype: FRAME_DTYPE.into(),
        frame_index: frame.frame_index,
    };
    atomic_write_json(&sidecar_path(&raw_path), &header)
}

/// Reads a raw frame image given its file name; annotations come separately.
pub fn read_frame_image(dir: &Path, file_name: &str) -> Result<(FrameHeader, NumArray)> {
    let raw_path = dir.join(file_name);
    let header: FrameHeader = read_json(&sidecar_path(&raw_path))?;
    if header.dtype != FRAME_DTYPE {
        return Err(IoError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let bytes = fs::read(&raw_path).map_err(io_err(&raw_path))?;
    let expected = header.width * header.height * 4;
    if bytes.len() != expected {
        return Err(IoError::Format(format!(
            "{file_name}: expected {expected} bytes for {}x{}, got {}",
            header.width,
            header.height,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let image = NumArray::from_vec(vec![header.height, header.width], data)
        .map_err(|e| IoError::Format(e.to_string()))?;
    Ok((header, image))
}

/// Min-max normalized 8-bit grayscale preview.
pub fn write_png_preview(path: &Path, image: &NumArray) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mx = image.data().iter().cloned().fold(f64::MIN, f64::max);
    let mn = image.data().iter().cloned().fold(f64::MAX, f64::min);
    let range = if mx > mn { mx - mn } else { 1.0 };
    let pixels: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (((v - mn) / range) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| IoError::Format("preview buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

/// Writes a full dataset: raw frames, sidecars, COCO ground truth, and
/// optional PNG previews.
pub fn write_dataset(dir: &Path, frames: &[Frame], gt: &CocoDataset, previews: bool) -> Result<()> {
    let fdir = frames_dir(dir);
    fs::create_dir_all(&fdir).map_err(io_err(&fdir))?;
    for f in frames {
        write_frame_raw(&fdir, f)?;
        if previews {
            let name = crate::dataset::frame_file_name(f.frame_index);
            write_png_preview(&fdir.join(name).with_extension("png"), &f.image)?;
        }
    }
    atomic_write_json(&ground_truth_path(dir), gt)
}

/// Loads a dataset directory back into frames with annotations. Centroids
/// come from the annotation extension field, falling back to box centers.
pub fn load_dataset(dir: &Path) -> Result<Vec<Frame>> {
    let gt: CocoDataset = read_json(&ground_truth_path(dir))?;
    gt.validate().map_err(|e| IoError::Format(e.to_string()))?;
    let fdir = frames_dir(dir);
    let mut frames = Vec::with_capacity(gt.images.len());
    for img_entry in &gt.images {
        let (header, image) = read_frame_image(&fdir, &img_entry.file_name)?;
        let annotations = gt
            .annotations_of(img_entry.id)
            .into_iter()
            .map(|a| {
                let centroid = a.centroid.unwrap_or([a.bbox[0] + a.bbox[2] / 2.0, a.bbox[1] + a.bbox[3] / 2.0]);
                MbAnnotation { id: a.id, centroid, bbox: a.bbox }
            })
            .collect();
        let frame = Frame::new(image, annotations, header.frame_index)
            .map_err(|e| IoError::Format(e.to_string()))?;
        frames.push(frame);
    }
    Ok(frames)
}

// ── JSON-lines logging ──────────────────────────────────────────────────

/// Append-only JSON-lines writer for logs and detections.
pub struct JsonlWriter {
    file: fs::File,
    path: PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)
            .map_err(|source| IoError::Json { path: self.path.clone(), source })?;
        writeln!(self.file, "{line}").map_err(io_err(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(io_err(&self.path))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| IoError::Json { path: path.to_path_buf(), source }))
        .collect()
}
