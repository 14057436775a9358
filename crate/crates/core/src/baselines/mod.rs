//! Comparison models: the from-scratch CNN, the bag-of-words head and the
//! context-free part detector.

mod ablation;
mod cnn;

pub use ablation::{
    bow_input, bow_predict, train_ablation1, train_ablation2, Ablation1, BowHead,
    ContextFreeDetector,
};

pub use cnn::{
    random_crop, train_baseline_cnn, BaselineCnn, CnnTrainConfig, TrainLog, PENULTIMATE,
    TAP_CHANNELS, TAP_STRIDE, WIDTHS,
};
