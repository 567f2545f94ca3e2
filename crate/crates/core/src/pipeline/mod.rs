//! Synthetic data, training, simulated interaction and inference.

pub mod checkpoint;
pub mod data;
pub mod dataset;
pub mod evaluate;
pub mod interact;
pub mod segment;
pub mod train;

pub use checkpoint::{
    checkpoint_paths, HistoryEntry, Manifest, ModelCheckpoint, TensorEntry, CHECKPOINT_VERSION,
};
pub use data::{
    augment, synth_dataset, synth_sample, Augmentation, NormStats, Sample, SynthConfig,
    SynthParams, MIN_EXTENT,
};
pub use dataset::{read_dataset, write_dataset, DatasetManifest};
pub use evaluate::{predict_masks, simulate_round, RefinementRound};
pub use interact::{
    clicks_for_region, components, simulate_interactions, InteractionConfig, MIN_REGION,
};
pub use segment::{quantize, rnet_input, Segmenter};
pub use train::{
    proposal, train_pnet, train_rnet, warm_start, StageConfig, TrainOutcome, TrainPlan,
};
