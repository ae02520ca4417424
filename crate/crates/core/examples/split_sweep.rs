// sweep simulator knobs for the 100-frame split feasibility at 0.18
use ulm_core::config::SimulateConfig;
use ulm_core::dataset::split_by_correlation;

fn main() {
    let base = SimulateConfig::default();
    for (label, scenes, fps, noise, vessels, segs) in [
        ("default           ", 150, 4, 0.06, (3, 6), 8),
        ("noise 0.10        ", 150, 4, 0.10, (3, 6), 8),
        ("noise 0.12        ", 150, 4, 0.12, (3, 6), 8),
        ("noise 0.12 +vessel", 150, 4, 0.12, (4, 8), 10),
        ("noise 0.10 fps2   ", 300, 2, 0.10, (3, 6), 8),
        ("noise 0.08 fps2   ", 300, 2, 0.08, (4, 8), 10),
        ("noise 0.10 +vessel", 150, 4, 0.10, (4, 8), 10),
    ] {
        let mut cfg = base.clone();
        cfg.scenes = scenes;
        cfg.frames_per_scene = fps;
        cfg.sim.noise_sigma = noise;
        cfg.sim.vessel_count = vessels;
        cfg.sim.path_segments = segs;
        let frames = cfg.generate(1).unwrap();
        let m = split_by_correlation(&frames, 100, 0.18, &mut ulm_core::rng::stream(1, "split")).unwrap();
        // second seed as a sanity check
        let frames2 = cfg.generate(2).unwrap();
        let m2 = split_by_correlation(&frames2, 100, 0.18, &mut ulm_core::rng::stream(2, "split")).unwrap();
        println!("{label}: test={} shortfall={} | seed2 test={} shortfall={}",
            m.test_ids.len(), m.shortfall, m2.test_ids.len(), m2.shortfall);
    }
}
