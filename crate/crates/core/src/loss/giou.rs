//! Generalized IoU on `(cx, cy, w, h)` boxes.

use super::{LossError, Result};

/// IoU minus the hull penalty: `IoU − |hull \ union| / |hull|`, in (−1, 1].
/// Symmetric, and exactly 1 for identical boxes.
pub fn giou(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
    if a[2] <= 0.0 || a[3] <= 0.0 || b[2] <= 0.0 || b[3] <= 0.0 {
        return Err(LossError::Contract(format!(
            "giou requires positive extents, got {a:?} and {b:?}"
        )));
    }
    let (ax1, ay1, ax2, ay2) = corners(a);
    let (bx1, by1, bx2, by2) = corners(b);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    Ok(inter / union - (hull - union) / hull)
}

fn corners(b: [f64; 4]) -> (f64, f64, f64, f64) {
    (b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn identical_boxes_score_one() {
        let b = [0.4, 0.6, 0.2, 0.3];
        assert!((giou(b, b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_boxes_approach_minus_one() {
        let a = [0.0, 0.0, 0.1, 0.1];
        let mut prev = giou(a, [1.0, 0.0, 0.1, 0.1]).unwrap();
        for dist in [10.0, 100.0, 1000.0] {
            let g = giou(a, [dist, 0.0, 0.1, 0.1]).unwrap();
            assert!(g < prev, "giou must decrease with separation");
            prev = g;
        }
        assert!(prev < -0.99 && prev > -1.0);
    }

    #[test]
    fn symmetric() {
        let mut rng = stream(1, "giou-sym");
        for _ in 0..50 {
            let a = rand_box(&mut rng);
            let b = rand_box(&mut rng);
            assert!((giou(a, b).unwrap() - giou(b, a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_extent_is_contract_error() {
        assert!(giou([0.5, 0.5, 0.0, 0.1], [0.5, 0.5, 0.1, 0.1]).is_err());
        assert!(giou([0.5, 0.5, 0.1, 0.1], [0.5, 0.5, 0.1, -0.2]).is_err());
    }

    fn rand_box(rng: &mut impl Rng) -> [f64; 4] {
        [
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
        ]
    }

    /// Rasterized pixel-counting oracle on a fine grid.
    fn giou_raster(a: [f64; 4], b: [f64; 4], cells: usize) -> f64 {
        let (ax1, ay1, ax2, ay2) = corners(a);
        let (bx1, by1, bx2, by2) = corners(b);
        let x_lo = ax1.min(bx1);
        let x_hi = ax2.max(bx2);
        let y_lo = ay1.min(by1);
        let y_hi = ay2.max(by2);
        let dx = (x_hi - x_lo) / cells as f64;
        let dy = (y_hi - y_lo) / cells as f64;
        let mut in_a = 0u64;
        let mut in_b = 0u64;
        let mut in_both = 0u64;
        for i in 0..cells {
            let y = y_lo + (i as f64 + 0.5) * dy;
            for j in 0..cells {
                let x = x_lo + (j as f64 + 0.5) * dx;
                let a_hit = x >= ax1 && x <= ax2 && y >= ay1 && y <= ay2;
                let b_hit = x >= bx1 && x <= bx2 && y >= by1 && y <= by2;
                in_a += a_hit as u64;
                in_b += b_hit as u64;
                in_both += (a_hit && b_hit) as u64;
            }
        }
        let cell = dx * dy;
        let inter = in_both as f64 * cell;
        let union = (in_a + in_b - in_both) as f64 * cell;
        let hull = (x_hi - x_lo) * (y_hi - y_lo);
        inter / union - (hull - union) / hull
    }

    #[test]
    fn matches_raster_oracle() {
        let mut rng = stream(2, "giou-raster");
        for _ in 0..20 {
            let a = rand_box(&mut rng);
            let b = rand_box(&mut rng);
            let exact = giou(a, b).unwrap();
            let approx = giou_raster(a, b, 1200);
            assert!((exact - approx).abs() < 1e-3, "{exact} vs raster {approx}");
        }
    }
}
