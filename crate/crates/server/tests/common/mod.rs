#![allow(dead_code)]

use geoseg_core::imageio::Pgm;
use geoseg_core::netzoo::{build_model, NetworkConfig};
use geoseg_core::pipeline::{synth_dataset, ModelCheckpoint, NormStats, Sample, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Untrained width-2 P-Net and R-Net saved as `pnet` and `rnet`.
pub fn write_models(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let norm = NormStats {
        mean: vec![0.4],
        std: vec![0.2],
    };
    for (name, cfg) in [
        ("pnet", NetworkConfig::pnet(1)),
        ("rnet", NetworkConfig::rnet(1)),
    ] {
        let cfg = NetworkConfig {
            width: 2,
            crf_feature_scale: 0.2,
            ..cfg
        };
        let mut ck = ModelCheckpoint {
            model: build_model(&cfg, &mut rng).unwrap(),
            norm: norm.clone(),
            encoding: Some(Default::default()),
            iteration: 0,
            seed: 77,
            history: vec![],
        };
        ck.round_params();
        ck.save(dir, name).unwrap();
    }
}

pub fn sample(seed: u64, side: usize) -> Sample {
    synth_dataset(seed, 1, [side, side], &SynthConfig::default())
        .unwrap()
        .remove(0)
        .0
}

pub fn pgm_bytes(s: &Sample) -> Vec<u8> {
    Pgm::from_image(&s.image).unwrap().encode()
}
