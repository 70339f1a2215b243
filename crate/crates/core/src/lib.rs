//! Toolkit for imbalanced fraud detection: a small reverse-mode autodiff
//! core, neural blocks, minority oversamplers (SMOTE, TVAE and a
//! Transformer-based GAN), four classifiers and imbalance-aware metrics.

pub mod checkpoint;
pub mod classifiers;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod oversample;
pub mod par;
pub mod rng;
pub mod tensor;
