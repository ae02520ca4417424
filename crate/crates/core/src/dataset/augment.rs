//! Label-consistent training augmentations: horizontal/vertical flips and
//! isotropic rescaling about the frame center with bilinear resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Result;
use crate::numerics::NumArray;
use crate::simulator::{Frame, MbAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { flip_h: false, flip_v: false, scale: 1.0 };
}

/// Flips with p = 0.5 each, scale uniform in [0.8, 1.2].
pub fn sample_augment<R: Rng>(rng: &mut R) -> AugmentParams {
    AugmentParams {
        flip_h: rng.gen_bool(0.5),
        flip_v: rng.gen_bool(0.5),
        scale: rng.gen_range(0.8..1.2),
    }
}

pub fn augment<R: Rng>(frame: &Frame, rng: &mut R) -> Result<Frame> {
    augment_with(frame, sample_augment(rng))
}

/// Applies flips, then the center zoom. Identity parameters reproduce the
/// frame exactly; flips are their own inverse.
pub fn augment_with(frame: &Frame, params: AugmentParams) -> Result<Frame> {
    let mut out = frame.clone();
    if params.flip_h {
        out = flip(&out, true)?;
    }
    if params.flip_v {
        out = flip(&out, false)?;
    }
    if params.scale != 1.0 {
        out = zoom(&out, params.scale)?;
    }
    Ok(out)
}

fn flip(frame: &Frame, horizontal: bool) -> Result<Frame> {
    let (h, w) = (frame.height(), frame.width());
    let mut data = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = if horizontal { (i, w - 1 - j) } else { (h - 1 - i, j) };
            data[i * w + j] = frame.image.at2(si, sj);
        }
    }
    let image = NumArray::from_vec(vec![h, w], data).expect("flip preserves shape and values");
    let (wf, hf) = (w as f64, h as f64);
    let annotations = frame
        .annotations
        .iter()
        .map(|a| {
            let mut centroid = a.centroid;
            let mut bbox = a.bbox;
            if horizontal {
                centroid[0] = (wf - a.centroid[0]).min(wf.next_down()).max(0.0);
                bbox[0] = wf - (a.bbox[0] + a.bbox[2]);
            } else {
                centroid[1] = (hf - a.centroid[1]).min(hf.next_down()).max(0.0);
                bbox[1] = hf - (a.bbox[1] + a.bbox[3]);
            }
            MbAnnotation { id: a.id, centroid, bbox }
        })
        .collect();
    Ok(Frame::new(image, annotations, frame.frame_index)?)
}

/// Bilinear lookup in corner-convention coordinates with zero padding.
fn sample_image(img: &NumArray, row: f64, col: f64) -> f64 {
    let (h, w) = (img.shape()[0] as isize, img.shape()[1] as isize);
    let r0 = row.floor();
    let c0 = col.floor();
    let dr = row - r0;
    let dc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    let fetch = |r: isize, c: isize| -> f64 {
        if r >= 0 && r < h && c >= 0 && c < w {
            img.at2(r as usize, c as usize)
        } else {
            0.0
        }
    };
    fetch(r0, c0) * (1.0 - dr) * (1.0 - dc)
        + fetch(r0, c0 + 1) * (1.0 - dr) * dc
        + fetch(r0 + 1, c0) * dr * (1.0 - dc)
        + fetch(r0 + 1, c0 + 1) * dr * dc
}

fn zoom(frame: &Frame, scale: f64) -> Result<Frame> {
    let (h, w) = (frame.height(), frame.width());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut data = vec![0.0; h * w];
    for i in 0..h {
        let sy = (i as f64 + 0.5 - cy) / scale + cy - 0.5;
        for j in 0..w {
            let sx = (j as f64 + 0.5 - cx) / scale + cx - 0.5;
            data[i * w + j] = sample_image(&frame.image, sy, sx);
        }
    }
    let image = NumArray::from_vec(vec![h, w], data).expect("zoom preserves shape and values");
    let (wf, hf) = (w as f64, h as f64);
    let mut annotations = Vec::new();
    for a in &frame.annotations {
        let tx = cx + scale * (a.centroid[0] - cx);
        let ty = cy + scale * (a.centroid[1] - cy);
        if !(0.0..wf).contains(&tx) || !(0.0..hf).contains(&ty) {
            // zoomed out of the frame: the blob (if any remains visible) is unlabeled
            continue;
        }
        let bx = cx + scale * (a.bbox[0] - cx);
        let by = cy + scale * (a.bbox[1] - cy);
        let bw = scale * a.bbox[2];
        let bh = scale * a.bbox[3];
        let x0 = bx.max(0.0);
        let y0 = by.max(0.0);
        let x1 = (bx + bw).min(wf);
        let y1 = (by + bh).min(hf);
        if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
            continue;
        }
        annotations.push(MbAnnotation { id: a.id, centroid: [tx, ty], bbox: [x0, y0, x1 - x0, y1 - y0] });
    }
    Ok(Frame::new(image, annotations, frame.frame_index)?)
}
