//! Synthetic data, the linear head and its trainer.

pub mod dataset;
pub mod head;
pub mod masks;
pub mod synth;
pub mod trainer;

pub use dataset::{generate, read_dataset, write_dataset, Dataset};
pub use head::{pixel_features, predict, predict_labels, scene_features, HeadParams, FEATURES};
pub use masks::{MaskBuilder, MaskConfig, MaskInputs};
pub use synth::{cam_weights, synth_scene, SynthConfig, SynthScene};
pub use trainer::{prepare_samples, train_from, train_head, TrainConfig, TrainReport, TrainSample, VariantKind};
