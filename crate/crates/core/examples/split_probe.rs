// probe: does the default simulator config admit a 100-frame test split
// below the 0.18 correlation threshold?
use ulm_core::config::SimulateConfig;
use ulm_core::dataset::{correlation_matrix, split_by_correlation, verify_manifest};

fn main() {
    let cfg = SimulateConfig::default();
    eprintln!("generating {} frames...", cfg.total_frames());
    let t0 = std::time::Instant::now();
    let frames = cfg.generate(1).unwrap();
    eprintln!("generated in {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = std::time::Instant::now();
    let matrix = correlation_matrix(&frames).unwrap();
    eprintln!("matrix in {:.1}s", t0.elapsed().as_secs_f64());
    // stats: per-frame max correlation to any other frame
    let n = frames.len();
    let mut maxes: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| matrix[i][j]).fold(f64::MIN, f64::max))
        .collect();
    maxes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!("per-frame max-corr percentiles: p0={:.3} p25={:.3} p50={:.3} p75={:.3} p100={:.3}",
        maxes[0], maxes[n/4], maxes[n/2], maxes[3*n/4], maxes[n-1]);
    let below = maxes.iter().filter(|m| **m < 0.18).count();
    eprintln!("frames with max-corr < 0.18 outright: {below}");
    let t0 = std::time::Instant::now();
    let manifest = split_by_correlation(&frames, 100, 0.18, &mut ulm_core::rng::stream(1, "split")).unwrap();
    eprintln!("split in {:.1}s: test={} shortfall={}", t0.elapsed().as_secs_f64(), manifest.test_ids.len(), manifest.shortfall);
    let worst = verify_manifest(&frames, &manifest).unwrap();
    eprintln!("verified, worst test-train corr = {worst:.4}");
}
