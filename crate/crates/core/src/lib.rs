//! Test bench for the adversarial robustness of small image-forensic
//! classifiers ("real vs. synthetic").
//!
//! The crate trains desk-scale detectors on a procedurally generated corpus,
//! then attacks them with distortion-minimizing, loss-maximizing, universal
//! patch, universal latent and black-box transfer attacks, measuring detector
//! fragility via ROC/AUC before and after each attack.

pub mod attacks;
pub mod datagen;
pub mod eval;
pub mod img;
pub mod models;
pub mod tensor;
