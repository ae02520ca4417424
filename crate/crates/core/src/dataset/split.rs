//! Correlation-based train/test splitting.
//!
//! Test frames are chosen greedily, most-isolated first: a frame qualifies
//! when its maximum Pearson correlation to every frame still in the training
//! pool stays below the threshold. Correlations between test frames are
//! unconstrained, so temporally adjacent frames can leave the pool together.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, Result};
use crate::simulator::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub threshold: f64,
    pub correlation_matrix_digest: String,
    /// Requested minus achieved test size; zero when the target was met.
    pub shortfall: usize,
    pub warnings: Vec<String>,
}

/// Pearson correlation of the flattened intensities. Zero-variance frames
/// correlate 0 with everything by definition; callers that care flag them
/// via [`frame_is_constant`].
pub fn frame_correlation(a: &Frame, b: &Frame) -> Result<f64> {
    if a.image.shape() != b.image.shape() {
        return Err(DatasetError::Contract(format!(
            "correlation of {:?} vs {:?} frames",
            a.image.shape(),
            b.image.shape()
        )));
    }
    Ok(pearson(a.image.data(), b.image.data()))
}

pub fn frame_is_constant(f: &Frame) -> bool {
    let d = f.image.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() == 0.0
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// Normalized (zero-mean, unit-norm) copy of a frame, or `None` if constant.
fn normalized(f: &Frame) -> Option<Vec<f64>> {
    let d = f.image.data();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let centered: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        None
    } else {
        Some(centered.iter().map(|v| v / norm).collect())
    }
}

/// Full symmetric correlation matrix, row-parallel. The diagonal is 1 for
/// non-constant frames and 0 for constant ones.
pub fn correlation_matrix(frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
    let n = frames.len();
    for f in frames.iter().skip(1) {
        if f.image.shape() != frames[0].image.shape() {
            return Err(DatasetError::Contract("frames must share a shape".into()));
        }
    }
    let normed: Vec<Option<Vec<f64>>> = frames.par_iter().map(normalized).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            if let Some(a) = &normed[i] {
                for (j, slot) in row.iter_mut().enumerate() {
                    if let Some(b) = &normed[j] {
                        *slot = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    }
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

fn matrix_digest(matrix: &[Vec<f64>]) -> String {
    let mut hasher = Sha256::new();
    for row in matrix {
        for v in row {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

/// Greedy low-correlation test selection. Returns the qualifying set and
/// reports any shortfall instead of failing.
pub fn split_by_correlation<R: Rng>(
    frames: &[Frame],
    test_size: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<SplitManifest> {
    let n = frames.len();
    if test_size >= n {
        return Err(DatasetError::Contract(format!(
            "test size {test_size} must be smaller than the frame count {n}"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DatasetError::Contract(format!("threshold {threshold} outside (0,1)")));
    }
    let matrix = correlation_matrix(frames)?;
    let digest = matrix_digest(&matrix);
    let mut warnings = Vec::new();
    let constant = frames.iter().filter(|f| frame_is_constant(f)).count();
    if constant > 0 {
        warnings.push(format!("{constant} constant frame(s): correlation defined as 0 for them"));
    }

    // random permutation used only to break exact ties deterministically
    let mut tie_order: Vec<usize> = (0..n).collect();
    tie_order.shuffle(rng);
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (pos, &f) in tie_order.iter().enumerate() {
            r[f] = pos;
        }
        r
    };

    let mut in_test = vec![false; n];
    let mut test_ids = Vec::new();
    while test_ids.len() < test_size {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..n {
            if in_test[f] {
                continue;
            }
            let mut worst = 0.0f64;
            for g in 0..n {
                if g != f && !in_test[g] {
                    worst = worst.max(matrix[f][g]);
                }
            }
            let better = match best {
                None => true,
                Some((bw, bf)) => worst < bw || (worst == bw && rank[f] < rank[bf]),
            };
            if better {
                best = Some((worst, f));
            }
        }
        match best {
            Some((worst, f)) if worst < threshold => {
                in_test[f] = true;
                test_ids.push(f);
            }
            _ => break,
        }
    }
    let shortfall = test_size - test_ids.len();
    if shortfall > 0 {
        warnings.push(format!(
            "only {} of {test_size} requested test frames qualify below threshold {threshold}",
            test_ids.len()
        ));
    }
    test_ids.sort_unstable();
    let train_ids: Vec<usize> = (0..n).filter(|i| !in_test[*i]).collect();
    Ok(SplitManifest {
        train_ids,
        test_ids,
        threshold,
        correlation_matrix_digest: digest,
        shortfall,
        warnings,
    })
}

/// Independent re-verification pass: recomputes test-to-train correlations
/// directly from raw frames (no shared matrix cache) and checks the manifest
/// invariants.
pub fn verify_manifest(frames: &[Frame], manifest: &SplitManifest) -> Result<f64> {
    let n = frames.len();
    let mut seen = vec![false; n];
    for &i in manifest.train_ids.iter().chain(&manifest.test_ids) {
        if i >= n {
            return Err(DatasetError::Invalid(format!("manifest references frame {i} of {n}")));
        }
        if seen[i] {
            return Err(DatasetError::Invalid(format!("frame {i} appears twice in the manifest")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(DatasetError::Invalid("manifest does not cover all frames".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for &t in &manifest.test_ids {
        for &tr in &manifest.train_ids {
            let c = pearson(frames[t].image.data(), frames[tr].image.data());
            worst = worst.max(c);
            if c >= manifest.threshold {
                return Err(DatasetError::Invalid(format!(
                    "test frame {t} correlates {c:.4} with train frame {tr}, threshold {}",
                    manifest.threshold
                )));
            }
        }
    }
    Ok(worst)
}
