// quick probe: single-frame overfit trajectory at several learning rates
use ulm_core::dataset::SplitManifest;
use ulm_core::detector::{Detector, DetectorConfig};
use ulm_core::loss::LossWeights;
use ulm_core::simulator::{simulate_sequence, SimConfig};
use ulm_core::training::{InferConfig, TrainConfig, Trainer};

fn main() {
    let det_cfg = DetectorConfig {
        patch_h: 16, patch_w: 16, d_model: 8, heads: 2, points_per_level: 2,
        levels: 2, stage_channels: (4, 8), norm_groups: 2,
        encoder_layers: 1, decoder_layers: 1, queries: 8, ffn_hidden: 16, aux_loss: true,
    };
    let sim = SimConfig { width: 32, height: 32, bubble_count: (1, 4), vessel_count: (1, 3), segment_length: 8.0, ..SimConfig::default() };
    let mut frame = simulate_sequence(&sim, 1, 40).unwrap().remove(0);
    frame.frame_index = 0;
    let frames = vec![frame];
    let manifest = SplitManifest { train_ids: vec![0], test_ids: vec![], threshold: 0.18, correlation_matrix_digest: String::new(), shortfall: 0, warnings: vec![] };
    for lr in [1e-3, 3e-3, 1e-2, 3e-2] {
        let mut trainer = Trainer::new(Detector::new(det_cfg.clone(), 9).unwrap(), 9);
        let cfg = TrainConfig { epochs: 200, batch_frames: 1, learning_rate: lr, augment: false, val_every: 100000, early_stop_ap50: None, early_stop_loc_recall: None, ..TrainConfig::default() };
        let mut losses = Vec::new();
        trainer.run(&frames, &manifest, &cfg, &LossWeights::default(), &InferConfig::default(), None, |l| losses.push(l.loss)).unwrap();
        let mono20 = losses.windows(2).take(19).all(|w| w[1] <= w[0]);
        println!("lr={lr:>7}: L0={:.3} L20={:.3} L50={:.3} L100={:.3} L200={:.3} ratio={:.4} mono20={}",
            losses[0], losses[19], losses[49], losses[99], losses[199], losses[199]/losses[0], mono20);
    }
}
