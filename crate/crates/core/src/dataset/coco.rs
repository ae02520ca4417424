//! COCO detection-format ground truth.
//!
//! Standard `images` / `annotations` / `categories` layout with
//! `bbox = [x, y, width, height]` floats and a top-left origin. Each
//! annotation additionally carries the exact sub-pixel `centroid`; readers
//! that only know stock COCO ignore the extra key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::simulator::Frame;

pub const MICROBUBBLE_CATEGORY_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    /// Exact sub-pixel bubble center; an extension over stock COCO.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = std::collections::HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(DatasetError::Invalid(format!("duplicate image id {}", img.id)));
            }
        }
        let sizes: std::collections::HashMap<u64, (f64, f64)> = self
            .images
            .iter()
            .map(|i| (i.id, (i.width as f64, i.height as f64)))
            .collect();
        let mut ann_ids = std::collections::HashSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.id) {
                return Err(DatasetError::Invalid(format!("duplicate annotation id {}", a.id)));
            }
            let Some(&(w, h)) = sizes.get(&a.image_id) else {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} references missing image {}",
                    a.id, a.image_id
                )));
            };
            let [x, y, bw, bh] = a.bbox;
            if x < -1e-9 || y < -1e-9 || x + bw > w + 1e-9 || y + bh > h + 1e-9 || bw <= 0.0 || bh <= 0.0 {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} bbox {:?} outside {w}x{h} image",
                    a.id, a.bbox
                )));
            }
        }
        Ok(())
    }

    /// Annotations of one image, in stored order.
    pub fn annotations_of(&self, image_id: u64) -> Vec<&CocoAnnotation> {
        self.annotations.iter().filter(|a| a.image_id == image_id).collect()
    }
}

/// File name convention shared with the raw-frame writer.
pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{frame_index:06}.f32")
}

/// Image ids are `frame_index + 1` so that ids stay nonzero.
pub fn image_id_for_frame(frame_index: usize) -> u64 {
    frame_index as u64 + 1
}

/// Converts simulated frames to a COCO dataset. Annotation areas are `w·h`.
pub fn export_coco(frames: &[Frame]) -> Result<CocoDataset> {
    let mut images = Vec::with_capacity(frames.len());
    let mut annotations = Vec::new();
    let mut next_ann_id = 1u64;
    for f in frames {
        f.validate()?;
        let image_id = image_id_for_frame(f.frame_index);
        images.push(CocoImage {
            id: image_id,
            file_name: frame_file_name(f.frame_index),
            width: f.width() as u32,
            height: f.height() as u32,
        });
        for a in &f.annotations {
            annotations.push(CocoAnnotation {
                id: next_ann_id,
                image_id,
                category_id: MICROBUBBLE_CATEGORY_ID,
                bbox: a.bbox,
                area: a.bbox[2] * a.bbox[3],
                iscrowd: 0,
                centroid: Some(a.centroid),
            });
            next_ann_id += 1;
        }
    }
    let dataset = CocoDataset {
        images,
        annotations,
        categories: vec![CocoCategory { id: MICROBUBBLE_CATEGORY_ID, name: "microbubble".into() }],
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_coco(dataset: &CocoDataset, path: &Path) -> Result<()> {
    crate::io::atomic_write_json(path, dataset)?;
    Ok(())
}

pub fn read_coco(path: &Path) -> Result<CocoDataset> {
    let bytes = std::fs::read(path)?;
    let dataset: CocoDataset = serde_json::from_slice(&bytes)?;
    dataset.validate()?;
    Ok(dataset)
}

/// Export-then-write convenience used by the CLI.
pub fn import_coco(path: &Path) -> Result<CocoDataset> {
    read_coco(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_sequence, SimConfig};

    fn small_frames(n: usize, seed: u64) -> Vec<Frame> {
        let cfg = SimConfig { width: 64, height: 64, bubble_count: (1, 6), ..SimConfig::default() };
        let mut frames = Vec::new();
        for s in 0..n {
            let mut seq = simulate_sequence(&cfg, 1, seed + s as u64).unwrap();
            seq[0].frame_index = s;
            frames.push(seq.remove(0));
        }
        frames
    }

    #[test]
    fn empty_frame_list_exports_valid_dataset() {
        let d = export_coco(&[]).unwrap();
        assert!(d.images.is_empty());
        assert!(d.annotations.is_empty());
        assert_eq!(d.categories.len(), 1);
    }

    #[test]
    fn single_frame_annotations_reference_image_one() {
        let cfg = SimConfig { width: 64, height: 64, bubble_count: (3, 3), ..SimConfig::default() };
        let frames = simulate_sequence(&cfg, 1, 9).unwrap();
        let d = export_coco(&frames).unwrap();
        assert_eq!(d.annotations.len(), 3);
        assert!(d.annotations.iter().all(|a| a.image_id == 1));
        assert!(d.annotations.iter().all(|a| (a.area - a.bbox[2] * a.bbox[3]).abs() < 1e-12));
    }

    #[test]
    fn fifty_frame_round_trip_is_bit_equal() {
        let frames = small_frames(50, 400);
        let d = export_coco(&frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        write_coco(&d, &path).unwrap();
        let back = read_coco(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn validation_rejects_dangling_annotation() {
        let mut d = export_coco(&small_frames(2, 7)).unwrap();
        d.annotations.push(CocoAnnotation {
            id: 9999,
            image_id: 1234,
            category_id: 1,
            bbox: [1.0, 1.0, 2.0, 2.0],
            area: 4.0,
            iscrowd: 0,
            centroid: None,
        });
        assert!(d.validate().is_err());
    }

    #[test]
    fn validation_rejects_out_of_bounds_bbox() {
        let mut d = export_coco(&small_frames(1, 8)).unwrap();
        if let Some(a) = d.annotations.first_mut() {
            a.bbox = [60.0, 60.0, 10.0, 10.0];
        }
        assert!(d.validate().is_err());
    }
}
