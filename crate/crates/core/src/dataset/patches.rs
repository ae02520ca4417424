//! Four-patch frame decomposition.
//!
//! Inference and training run on quadrants so the query budget stays small.
//! A box is assigned to every patch it overlaps; the clipped piece is
//! re-expressed in patch coordinates. When the true centroid falls outside a
//! patch, the piece carries the clipped-box center instead.

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::numerics::NumArray;
use crate::simulator::{Frame, MbAnnotation};

/// 2×2 tiling of an even-sized frame. Patch order is row-major:
/// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub patch_w: usize,
    pub patch_h: usize,
}

impl PatchLayout {
    pub fn quad(width: usize, height: usize) -> Result<Self> {
        if width % 2 != 0 || height % 2 != 0 {
            return Err(DatasetError::Contract(format!(
                "four-patch split needs even dimensions, got {width}x{height}"
            )));
        }
        Ok(Self { patch_w: width / 2, patch_h: height / 2 })
    }

    /// Top-left corner of a patch in frame coordinates.
    pub fn offset(&self, patch: usize) -> [f64; 2] {
        debug_assert!(patch < 4);
        [
            (patch % 2) as f64 * self.patch_w as f64,
            (patch / 2) as f64 * self.patch_h as f64,
        ]
    }

    pub fn offsets(&self) -> [[f64; 2]; 4] {
        [self.offset(0), self.offset(1), self.offset(2), self.offset(3)]
    }

    /// Maps patch-local coordinates back into the frame.
    pub fn to_frame(&self, patch: usize, xy: [f64; 2]) -> [f64; 2] {
        let off = self.offset(patch);
        [xy[0] + off[0], xy[1] + off[1]]
    }
}

/// Splits a frame into its four quadrant frames. Annotations keep their ids,
/// so pieces of one bubble can be re-associated across patches.
pub fn split_patches(frame: &Frame, layout: &PatchLayout) -> Result<[Frame; 4]> {
    let (h, w) = (frame.height(), frame.width());
    if layout.patch_w * 2 != w || layout.patch_h * 2 != h {
        return Err(DatasetError::Contract(format!(
            "layout {}x{} does not tile a {w}x{h} frame",
            layout.patch_w, layout.patch_h
        )));
    }
    let (pw, ph) = (layout.patch_w, layout.patch_h);
    let mut out = Vec::with_capacity(4);
    for patch in 0..4 {
        let [ox, oy] = layout.offset(patch);
        let (ox_i, oy_i) = (ox as usize, oy as usize);
        let mut data = Vec::with_capacity(pw * ph);
        for i in 0..ph {
            for j in 0..pw {
                data.push(frame.image.at2(oy_i + i, ox_i + j));
            }
        }
        let image = NumArray::from_vec(vec![ph, pw], data).map_err(|e| DatasetError::Invalid(e.to_string()))?;
        let mut annotations = Vec::new();
        for a in &frame.annotations {
            let [bx, by, bw, bh] = a.bbox;
            // intersection with the patch rect, in frame coordinates
            let ix0 = bx.max(ox);
            let iy0 = by.max(oy);
            let ix1 = (bx + bw).min(ox + pw as f64);
            let iy1 = (by + bh).min(oy + ph as f64);
            if ix1 - ix0 <= 0.0 || iy1 - iy0 <= 0.0 {
                continue;
            }
            let clipped = [ix0 - ox, iy0 - oy, ix1 - ix0, iy1 - iy0];
            let local = [a.centroid[0] - ox, a.centroid[1] - oy];
            let inside = (0.0..pw as f64).contains(&local[0]) && (0.0..ph as f64).contains(&local[1]);
            let centroid = if inside {
                local
            } else {
                [clipped[0] + clipped[2] / 2.0, clipped[1] + clipped[3] / 2.0]
            };
            annotations.push(MbAnnotation { id: a.id, centroid, bbox: clipped });
        }
        out.push(Frame::new(image, annotations, frame.frame_index)?);
    }
    Ok(out.try_into().map_err(|_| DatasetError::Invalid("patch count".into()))?)
}
